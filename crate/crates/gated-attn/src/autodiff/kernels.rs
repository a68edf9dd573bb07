//! Raw f64 buffer math shared by the tape primitives and the gate-skipping
//! evaluation path. Keeping a single set of kernels means the two paths are
//! bit-identical wherever they compute the same quantity.

/// out[m×n] += a[m×k] @ b[k×n]
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(a, b, &mut out, m, k, n);
    out
}

/// out[m×n] += a[m×k] @ b[n×k]ᵀ
pub fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * n + j] += acc;
        }
    }
}

pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_nt_acc(a, b, &mut out, m, k, n);
    out
}

/// out[m×n] += a[k×m]ᵀ @ b[k×n]
pub fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over the open positions of one score row; closed positions get
/// exactly 0. The shared renormalization used by soft, gated, and local
/// attention: max-shift over open positions, exponentiate, normalize.
///
/// Returns `None` when no position is open.
pub fn masked_renorm(scores: &[f64], open: &[bool]) -> Option<Vec<f64>> {
    debug_assert_eq!(scores.len(), open.len());
    let mut max = f64::NEG_INFINITY;
    for (&s, &o) in scores.iter().zip(open) {
        if o && s > max {
            max = s;
        }
    }
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut z = vec![0.0; scores.len()];
    let mut denom = 0.0;
    for ((zv, &s), &o) in z.iter_mut().zip(scores).zip(open) {
        if o {
            *zv = (s - max).exp();
            denom += *zv;
        }
    }
    for zv in &mut z {
        *zv /= denom;
    }
    Some(z)
}

/// Softmax over a full row (all positions open).
pub fn softmax_row(scores: &[f64]) -> Vec<f64> {
    masked_renorm(scores, &vec![true; scores.len()]).expect("non-empty row")
}
