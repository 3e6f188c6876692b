//! Dense kernels over row-major `f64` slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += W x` for `W` of shape `(y.len(), x.len())`.
#[inline]
pub fn matvec_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * y.len());
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        *yi += dot(row, x);
    }
}

/// `y += Wᵀ d` for `W` of shape `(d.len(), y.len())`.
#[inline]
pub fn matvec_t_acc(w: &[f64], d: &[f64], y: &mut [f64]) {
    let cols = y.len();
    debug_assert_eq!(w.len(), cols * d.len());
    for (&di, row) in d.iter().zip(w.chunks_exact(cols)) {
        if di != 0.0 {
            axpy(di, row, y);
        }
    }
}

/// `G += d xᵀ` for `G` of shape `(d.len(), x.len())`.
#[inline]
pub fn outer_acc(d: &[f64], x: &[f64], g: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), cols * d.len());
    for (&di, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if di != 0.0 {
            axpy(di, x, row);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax; returns the log of the normalizer.
pub fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
    max + sum.ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_match_naive() {
        let w: Vec<f64> = (0..15).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = [1.0, -2.0, 0.5, 3.0, 0.25];
        let mut y = vec![0.0; 3];
        matvec_acc(&w, &x, &mut y);
        for r in 0..3 {
            let naive: f64 = (0..5).map(|c| w[r * 5 + c] * x[c]).sum();
            assert!((y[r] - naive).abs() < 1e-12);
        }
        let d = [1.0, 2.0, -1.0];
        let mut z = vec![0.0; 5];
        matvec_t_acc(&w, &d, &mut z);
        for c in 0..5 {
            let naive: f64 = (0..3).map(|r| w[r * 5 + c] * d[r]).sum();
            assert!((z[c] - naive).abs() < 1e-12);
        }
        let mut g = vec![0.0; 15];
        outer_acc(&d, &x, &mut g);
        assert_eq!(g[5 + 3], 2.0 * 3.0);
    }

    #[test]
    fn softmax_sums_to_one_and_argmax_prefers_low_index() {
        let mut v = vec![1000.0, 1000.0, -5.0];
        let lz = softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((lz - (1000.0 + (2.0f64 + (-1005.0f64).exp()).ln())).abs() < 1e-9);
        assert_eq!(argmax(&v), 0);
    }
}
