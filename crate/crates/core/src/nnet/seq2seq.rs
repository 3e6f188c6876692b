//! Teacher-forced forward pass, exact gradients, and the incremental decoder
//! interface used by generation.

use rayon::prelude::*;

use super::cell::{backward_seq, forward_seq, step, SeqCache};
use super::linalg::{axpy, dot, matvec_acc, matvec_t_acc, outer_acc, softmax_in_place};
use super::{CellKind, Seq2SeqModel};
use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};

/// A pair mapped to vocabulary indices. `src` ends with EOS; `tgt` does not,
/// the decoder predicts `tgt` followed by EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub id: u64,
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl EncodedPair {
    /// Number of predicted tokens, EOS included.
    pub fn steps(&self) -> usize {
        self.tgt.len() + 1
    }

    fn gold(&self, t: usize) -> u32 {
        self.tgt.get(t).copied().unwrap_or(EOS)
    }

    fn decoder_input(&self, t: usize) -> u32 {
        if t == 0 {
            BOS
        } else {
            self.tgt[t - 1]
        }
    }
}

/// Loss-weighted gradient over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
    /// Mean per-token negative log-likelihood.
    pub loss: f64,
    pub tokens: usize,
}

/// Output of one decoder step: the per-token log-probabilities and the
/// recurrent state to continue from.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub log_probs: Vec<f64>,
    pub state: DecoderState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    h: Vec<f64>,
    c: Vec<f64>,
}

/// Encoder outputs for one source sentence.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    outputs: Vec<f64>,
    len: usize,
    init: DecoderState,
}

impl EncodedSource {
    pub fn initial_state(&self) -> DecoderState {
        self.init.clone()
    }
}

struct Encoder {
    inputs: Vec<Vec<f64>>,
    layers: Vec<SeqCache>,
}

struct Forward {
    enc: Encoder,
    dec_inputs: Vec<f64>,
    dec: SeqCache,
    att: Vec<f64>,
    ctx: Vec<f64>,
    out_h: Vec<f64>,
    probs: Vec<f64>,
    logp: Vec<f64>,
}

/// Scratch for the attention + output projection of a single step.
struct OutputStep<'a> {
    att: &'a mut [f64],
    ctx: &'a mut [f64],
    out_h: &'a mut [f64],
    logits: &'a mut [f64],
}

impl Seq2SeqModel {
    fn hidden(&self) -> usize {
        self.config.hidden_dim
    }

    fn embed(&self, slot: super::Slot, ids: impl Iterator<Item = u32>) -> Vec<f64> {
        let mut out = Vec::new();
        for id in ids {
            out.extend_from_slice(&self.params[slot.row(id as usize)]);
        }
        out
    }

    fn run_encoder(&self, src: &[u32]) -> Encoder {
        let h = self.hidden();
        let zeros = vec![0.0; h];
        let mut inputs = vec![self.embed(self.layout.src_emb, src.iter().copied())];
        let mut layers = Vec::with_capacity(self.layout.enc.len());
        for (l, cs) in self.layout.enc.iter().enumerate() {
            let cache = forward_seq(&self.params, cs, &inputs[l], &zeros, &zeros);
            if l + 1 < self.layout.enc.len() {
                inputs.push(cache.outputs().to_vec());
            }
            layers.push(cache);
        }
        Encoder { inputs, layers }
    }

    fn initial_decoder_state(&self, top: &SeqCache) -> DecoderState {
        DecoderState {
            h: top.h_at(top.len).to_vec(),
            c: if self.config.cell == CellKind::Lstm {
                top.c_at(top.len).to_vec()
            } else {
                Vec::new()
            },
        }
    }

    /// Attention and output projection for decoder state `h`; leaves raw
    /// logits in `s.logits`.
    fn output_step(&self, enc_out: &[f64], src_len: usize, h: &[f64], s: OutputStep<'_>) {
        let p = &self.params;
        let l = &self.layout;
        let hd = self.hidden();
        match l.att {
            Some((w, b)) => {
                for (i, a) in s.att.iter_mut().enumerate().take(src_len) {
                    *a = dot(h, &enc_out[i * hd..(i + 1) * hd]);
                }
                softmax_in_place(&mut s.att[..src_len]);
                s.ctx.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..src_len {
                    axpy(s.att[i], &enc_out[i * hd..(i + 1) * hd], s.ctx);
                }
                let mut concat = Vec::with_capacity(2 * hd);
                concat.extend_from_slice(s.ctx);
                concat.extend_from_slice(h);
                s.out_h.copy_from_slice(&p[b.range()]);
                matvec_acc(&p[w.range()], &concat, s.out_h);
                s.out_h.iter_mut().for_each(|v| *v = v.tanh());
            }
            None => s.out_h.copy_from_slice(h),
        }
        s.logits.copy_from_slice(&p[l.out_b.range()]);
        matvec_acc(&p[l.out_w.range()], s.out_h, s.logits);
    }

    fn forward(&self, ep: &EncodedPair) -> Forward {
        let hd = self.hidden();
        let v = self.tgt_vocab.len();
        let enc = self.run_encoder(&ep.src);
        let top = enc.layers.last().expect("at least one encoder layer");
        let init = self.initial_decoder_state(top);
        let steps = ep.steps();
        let dec_inputs = self.embed(self.layout.tgt_emb, (0..steps).map(|t| ep.decoder_input(t)));
        let dec = forward_seq(&self.params, &self.layout.dec, &dec_inputs, &init.h, &init.c);
        let s_len = ep.src.len();
        let mut f = Forward {
            att: vec![0.0; steps * s_len],
            ctx: vec![0.0; steps * hd],
            out_h: vec![0.0; steps * hd],
            probs: vec![0.0; steps * v],
            logp: vec![0.0; steps],
            dec_inputs,
            dec,
            enc,
        };
        let enc_out = f.enc.layers.last().unwrap().outputs();
        for t in 0..steps {
            let logits = &mut f.probs[t * v..(t + 1) * v];
            self.output_step(
                enc_out,
                s_len,
                f.dec.h_at(t + 1),
                OutputStep {
                    att: &mut f.att[t * s_len..(t + 1) * s_len],
                    ctx: &mut f.ctx[t * hd..(t + 1) * hd],
                    out_h: &mut f.out_h[t * hd..(t + 1) * hd],
                    logits,
                },
            );
            let gold_logit = logits[ep.gold(t) as usize];
            let lse = softmax_in_place(logits);
            f.logp[t] = gold_logit - lse;
        }
        f
    }

    /// Teacher-forced log-probability of each gold token, EOS included.
    pub fn token_logprobs(&self, ep: &EncodedPair) -> Vec<f64> {
        self.forward(ep).logp
    }

    /// Teacher-forced softmax rows, one per predicted token.
    pub fn step_distributions(&self, ep: &EncodedPair) -> Vec<Vec<f64>> {
        let v = self.tgt_vocab.len();
        self.forward(ep).probs.chunks_exact(v).map(<[f64]>::to_vec).collect()
    }

    /// Adds `weight * ∇(−log P(y|x))` into `grads`; returns the pair's NLL.
    pub fn accumulate_grad(&self, ep: &EncodedPair, weight: f64, grads: &mut [f64]) -> f64 {
        let f = self.forward(ep);
        let p = &self.params;
        let l = &self.layout;
        let hd = self.hidden();
        let v = self.tgt_vocab.len();
        let steps = ep.steps();
        let s_len = ep.src.len();
        let enc_out = f.enc.layers.last().unwrap().outputs();
        let mut d_enc_out = vec![0.0; s_len * hd];
        let mut dh_dec = vec![0.0; steps * hd];
        let mut dlogits = vec![0.0; v];
        let mut dout_h = vec![0.0; hd];
        let mut du = vec![0.0; hd];
        let mut dconcat = vec![0.0; 2 * hd];
        let mut concat = vec![0.0; 2 * hd];
        let mut da = vec![0.0; s_len];

        for t in 0..steps {
            for (d, &pr) in dlogits.iter_mut().zip(&f.probs[t * v..(t + 1) * v]) {
                *d = weight * pr;
            }
            dlogits[ep.gold(t) as usize] -= weight;
            let out_h = &f.out_h[t * hd..(t + 1) * hd];
            outer_acc(&dlogits, out_h, &mut grads[l.out_w.range()]);
            axpy(1.0, &dlogits, &mut grads[l.out_b.range()]);
            dout_h.iter_mut().for_each(|x| *x = 0.0);
            matvec_t_acc(&p[l.out_w.range()], &dlogits, &mut dout_h);

            let h = f.dec.h_at(t + 1);
            let dh = &mut dh_dec[t * hd..(t + 1) * hd];
            if let Some((w, b)) = l.att {
                for k in 0..hd {
                    du[k] = dout_h[k] * (1.0 - out_h[k] * out_h[k]);
                }
                let ctx = &f.ctx[t * hd..(t + 1) * hd];
                concat[..hd].copy_from_slice(ctx);
                concat[hd..].copy_from_slice(h);
                outer_acc(&du, &concat, &mut grads[w.range()]);
                axpy(1.0, &du, &mut grads[b.range()]);
                dconcat.iter_mut().for_each(|x| *x = 0.0);
                matvec_t_acc(&p[w.range()], &du, &mut dconcat);
                let (dctx, dh_direct) = dconcat.split_at(hd);
                axpy(1.0, dh_direct, dh);
                let att = &f.att[t * s_len..(t + 1) * s_len];
                for i in 0..s_len {
                    let e = &enc_out[i * hd..(i + 1) * hd];
                    da[i] = dot(dctx, e);
                    axpy(att[i], dctx, &mut d_enc_out[i * hd..(i + 1) * hd]);
                }
                let mean: f64 = att.iter().zip(&da).map(|(a, d)| a * d).sum();
                for i in 0..s_len {
                    let ds = att[i] * (da[i] - mean);
                    if ds != 0.0 {
                        axpy(ds, &enc_out[i * hd..(i + 1) * hd], dh);
                        axpy(ds, h, &mut d_enc_out[i * hd..(i + 1) * hd]);
                    }
                }
            } else {
                axpy(1.0, &dout_h, dh);
            }
        }

        let e = self.config.emb_dim;
        let mut d_dec_in = vec![0.0; steps * e];
        let (dh0, dc0) = backward_seq(
            p,
            &l.dec,
            &f.dec,
            &f.dec_inputs,
            &mut dh_dec,
            None,
            None,
            grads,
            &mut d_dec_in,
        );
        for t in 0..steps {
            let row = l.tgt_emb.row(ep.decoder_input(t) as usize);
            axpy(1.0, &d_dec_in[t * e..(t + 1) * e], &mut grads[row]);
        }

        let lstm = self.config.cell == CellKind::Lstm;
        let mut dh_out = d_enc_out;
        for layer in (0..l.enc.len()).rev() {
            let cs = &l.enc[layer];
            let top = layer + 1 == l.enc.len();
            let mut d_in = vec![0.0; s_len * cs.input];
            backward_seq(
                p,
                cs,
                &f.enc.layers[layer],
                &f.enc.inputs[layer],
                &mut dh_out,
                top.then_some(&dh0[..]),
                (top && lstm).then_some(&dc0[..]),
                grads,
                &mut d_in,
            );
            dh_out = d_in;
        }
        for (t, &tok) in ep.src.iter().enumerate() {
            let row = l.src_emb.row(tok as usize);
            axpy(1.0, &dh_out[t * e..(t + 1) * e], &mut grads[row]);
        }
        -f.logp.iter().sum::<f64>()
    }

    /// Mean per-token NLL over `batch` and its exact gradient.
    ///
    /// Work is split into fixed chunks whose partial sums are combined in
    /// order, so the result does not depend on the thread count.
    pub fn batch_grad(&self, batch: &[EncodedPair]) -> Result<Gradients> {
        const CHUNK: usize = 8;
        if batch.is_empty() {
            return Err(Error::Precondition("gradient of an empty batch".into()));
        }
        let tokens: usize = batch.iter().map(EncodedPair::steps).sum();
        let weight = 1.0 / tokens as f64;
        let n = self.params.len();
        let partials: Vec<Result<(Vec<f64>, f64)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; n];
                let mut nll = 0.0;
                for ep in chunk {
                    let l = self.accumulate_grad(ep, weight, &mut g);
                    if !l.is_finite() {
                        return Err(Error::NonFiniteLoss { pair_id: ep.id });
                    }
                    nll += l;
                }
                Ok((g, nll))
            })
            .collect();
        let mut values = vec![0.0; n];
        let mut nll = 0.0;
        for part in partials {
            let (g, l) = part?;
            axpy(1.0, &g, &mut values);
            nll += l;
        }
        Ok(Gradients {
            values,
            loss: nll / tokens as f64,
            tokens,
        })
    }

    /// Mean per-token NLL without gradients.
    pub fn batch_loss(&self, batch: &[EncodedPair]) -> f64 {
        let (nll, tokens) = batch
            .par_iter()
            .map(|ep| (-self.token_logprobs(ep).iter().sum::<f64>(), ep.steps()))
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0usize), |(a, b), (c, d)| (a + c, b + d));
        nll / tokens as f64
    }

    pub fn encode_source_ids(&self, src: &[u32]) -> EncodedSource {
        let enc = self.run_encoder(src);
        let top = enc.layers.last().unwrap();
        EncodedSource {
            init: self.initial_decoder_state(top),
            outputs: top.outputs().to_vec(),
            len: src.len(),
        }
    }

    /// One decoder step from `state` after emitting `prev`.
    pub fn decode_step(&self, enc: &EncodedSource, state: &DecoderState, prev: u32) -> StepOutput {
        let hd = self.hidden();
        let cs = &self.layout.dec;
        let x = &self.params[self.layout.tgt_emb.row(prev as usize)];
        let mut gates = vec![0.0; cs.kind.gates() * hd];
        let mut aux = vec![0.0; hd];
        let mut next = DecoderState {
            h: vec![0.0; hd],
            c: vec![0.0; state.c.len()],
        };
        step(
            &self.params,
            cs,
            x,
            &state.h,
            &state.c,
            &mut gates,
            &mut aux,
            &mut next.h,
            &mut next.c,
        );
        let mut logits = vec![0.0; self.tgt_vocab.len()];
        let mut att = vec![0.0; enc.len];
        let mut ctx = vec![0.0; hd];
        let mut out_h = vec![0.0; hd];
        self.output_step(
            &enc.outputs,
            enc.len,
            &next.h,
            OutputStep {
                att: &mut att,
                ctx: &mut ctx,
                out_h: &mut out_h,
                logits: &mut logits,
            },
        );
        let raw = logits.clone();
        let lse = softmax_in_place(&mut logits);
        StepOutput {
            log_probs: raw.into_iter().map(|z| z - lse).collect(),
            state: next,
        }
    }
}
