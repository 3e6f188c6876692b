//! LSTM and GRU layers: forward over a sequence with cached activations,
//! and exact backpropagation through time.

use super::linalg::{axpy, matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use super::{CellKind, CellSlots};

/// Activations of one layer over a sequence of `len` steps.
#[derive(Debug, Clone)]
pub(crate) struct SeqCache {
    pub len: usize,
    pub hidden: usize,
    /// `(len + 1) × H`; row 0 is the initial state.
    pub h: Vec<f64>,
    /// Cell memory, LSTM only, same shape as `h`.
    pub c: Vec<f64>,
    /// Post-activation gates, `len × G·H` (LSTM `i f g o`, GRU `r z n`).
    pub gates: Vec<f64>,
    /// LSTM: `tanh(c_t)`; GRU: recurrent candidate term `W_hn h + b_hn`.
    pub aux: Vec<f64>,
}

impl SeqCache {
    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden..(t + 1) * self.hidden]
    }

    pub fn c_at(&self, t: usize) -> &[f64] {
        &self.c[t * self.hidden..(t + 1) * self.hidden]
    }

    /// Outputs `h_1..h_len` as one `len × H` block.
    pub fn outputs(&self) -> &[f64] {
        &self.h[self.hidden..]
    }
}

/// One recurrent step. `gates` receives `G·H` activations and `aux` `H`
/// values; `h`/`c` receive the new state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step(
    p: &[f64],
    cs: &CellSlots,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    aux: &mut [f64],
    h: &mut [f64],
    c: &mut [f64],
) {
    let hd = cs.hidden;
    match cs.kind {
        CellKind::Lstm => {
            gates.copy_from_slice(&p[cs.bx.range()]);
            matvec_acc(&p[cs.wx.range()], x, gates);
            matvec_acc(&p[cs.wh.range()], h_prev, gates);
            for k in 0..hd {
                let i = sigmoid(gates[k]);
                let f = sigmoid(gates[hd + k]);
                let g = gates[2 * hd + k].tanh();
                let o = sigmoid(gates[3 * hd + k]);
                gates[k] = i;
                gates[hd + k] = f;
                gates[2 * hd + k] = g;
                gates[3 * hd + k] = o;
                c[k] = f * c_prev[k] + i * g;
                aux[k] = c[k].tanh();
                h[k] = o * aux[k];
            }
        }
        CellKind::Gru => {
            let bh = cs.bh.expect("gru has a recurrent bias");
            gates.copy_from_slice(&p[cs.bx.range()]);
            matvec_acc(&p[cs.wx.range()], x, gates);
            let mut gh = p[bh.range()].to_vec();
            matvec_acc(&p[cs.wh.range()], h_prev, &mut gh);
            for k in 0..hd {
                let r = sigmoid(gates[k] + gh[k]);
                let z = sigmoid(gates[hd + k] + gh[hd + k]);
                let n = (gates[2 * hd + k] + r * gh[2 * hd + k]).tanh();
                gates[k] = r;
                gates[hd + k] = z;
                gates[2 * hd + k] = n;
                aux[k] = gh[2 * hd + k];
                h[k] = (1.0 - z) * n + z * h_prev[k];
            }
        }
    }
}

/// Runs the layer over `inputs` (`len × input`) from state `(h0, c0)`.
pub(crate) fn forward_seq(p: &[f64], cs: &CellSlots, inputs: &[f64], h0: &[f64], c0: &[f64]) -> SeqCache {
    let hd = cs.hidden;
    let g = cs.kind.gates() * hd;
    let len = inputs.len() / cs.input;
    let lstm = cs.kind == CellKind::Lstm;
    let mut cache = SeqCache {
        len,
        hidden: hd,
        h: vec![0.0; (len + 1) * hd],
        c: if lstm { vec![0.0; (len + 1) * hd] } else { Vec::new() },
        gates: vec![0.0; len * g],
        aux: vec![0.0; len * hd],
    };
    cache.h[..hd].copy_from_slice(h0);
    if lstm {
        cache.c[..hd].copy_from_slice(c0);
    }
    let mut dummy_c = Vec::new();
    for t in 0..len {
        let x = &inputs[t * cs.input..(t + 1) * cs.input];
        let (h_prev, h_rest) = cache.h.split_at_mut((t + 1) * hd);
        let h_prev = &h_prev[t * hd..];
        let h_new = &mut h_rest[..hd];
        let (c_prev, c_new): (&[f64], &mut [f64]) = if lstm {
            let (a, b) = cache.c.split_at_mut((t + 1) * hd);
            (&a[t * hd..], &mut b[..hd])
        } else {
            (&[], &mut dummy_c[..])
        };
        step(
            p,
            cs,
            x,
            h_prev,
            c_prev,
            &mut cache.gates[t * g..(t + 1) * g],
            &mut cache.aux[t * hd..(t + 1) * hd],
            h_new,
            c_new,
        );
    }
    cache
}

/// Backpropagation through time.
///
/// `dh_out` holds the loss gradient w.r.t. each output `h_1..h_len` (it is
/// consumed as scratch). `dh_last`/`dc_last` are extra gradients on the final
/// state. Parameter gradients accumulate into `grads`; input gradients into
/// `dinputs` (`len × input`). Returns the gradients on `(h0, c0)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_seq(
    p: &[f64],
    cs: &CellSlots,
    cache: &SeqCache,
    inputs: &[f64],
    dh_out: &mut [f64],
    dh_last: Option<&[f64]>,
    dc_last: Option<&[f64]>,
    grads: &mut [f64],
    dinputs: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let hd = cs.hidden;
    let g = cs.kind.gates() * hd;
    let len = cache.len;
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    if let Some(d) = dh_last {
        dh_next.copy_from_slice(d);
    }
    if let Some(d) = dc_last {
        dc_next.copy_from_slice(d);
    }
    let mut dz = vec![0.0; g];
    let mut dgh = vec![0.0; g];
    for t in (0..len).rev() {
        let x = &inputs[t * cs.input..(t + 1) * cs.input];
        let h_prev = cache.h_at(t);
        let gates = &cache.gates[t * g..(t + 1) * g];
        let aux = &cache.aux[t * hd..(t + 1) * hd];
        let dh = &mut dh_out[t * hd..(t + 1) * hd];
        axpy(1.0, &dh_next, dh);
        match cs.kind {
            CellKind::Lstm => {
                let c_prev = cache.c_at(t);
                for k in 0..hd {
                    let (i, f, gg, o) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
                    let tc = aux[k];
                    let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                    dz[k] = dc * gg * i * (1.0 - i);
                    dz[hd + k] = dc * c_prev[k] * f * (1.0 - f);
                    dz[2 * hd + k] = dc * i * (1.0 - gg * gg);
                    dz[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
                outer_acc(&dz, x, &mut grads[cs.wx.range()]);
                outer_acc(&dz, h_prev, &mut grads[cs.wh.range()]);
                axpy(1.0, &dz, &mut grads[cs.bx.range()]);
                matvec_t_acc(&p[cs.wx.range()], &dz, &mut dinputs[t * cs.input..(t + 1) * cs.input]);
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_acc(&p[cs.wh.range()], &dz, &mut dh_next);
            }
            CellKind::Gru => {
                let bh = cs.bh.expect("gru has a recurrent bias");
                for k in 0..hd {
                    let (r, z, n) = (gates[k], gates[hd + k], gates[2 * hd + k]);
                    let dn_pre = dh[k] * (1.0 - z) * (1.0 - n * n);
                    let dr_pre = dn_pre * aux[k] * r * (1.0 - r);
                    let dz_pre = dh[k] * (h_prev[k] - n) * z * (1.0 - z);
                    dz[k] = dr_pre;
                    dz[hd + k] = dz_pre;
                    dz[2 * hd + k] = dn_pre;
                    dgh[k] = dr_pre;
                    dgh[hd + k] = dz_pre;
                    dgh[2 * hd + k] = dn_pre * r;
                    dh_next[k] = dh[k] * z;
                }
                outer_acc(&dz, x, &mut grads[cs.wx.range()]);
                axpy(1.0, &dz, &mut grads[cs.bx.range()]);
                outer_acc(&dgh, h_prev, &mut grads[cs.wh.range()]);
                axpy(1.0, &dgh, &mut grads[bh.range()]);
                matvec_t_acc(&p[cs.wx.range()], &dz, &mut dinputs[t * cs.input..(t + 1) * cs.input]);
                matvec_t_acc(&p[cs.wh.range()], &dgh, &mut dh_next);
            }
        }
    }
    (dh_next, dc_next)
}
