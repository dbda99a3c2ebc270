//! Row-major matrix product kernels.
//!
//! The offset predictor multiplies a handful of rows against a very tall
//! weight matrix, so the kernels are arranged to stream each weight row once
//! per call instead of once per output row.

const K_BLOCK: usize = 32;

/// `out[m×p] += a[m×n] · b[n×p]`
pub fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, p: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), n * p);
    debug_assert_eq!(out.len(), m * p);
    for k0 in (0..n).step_by(K_BLOCK) {
        let k1 = (k0 + K_BLOCK).min(n);
        for i in 0..m {
            let a_row = &a[i * n..(i + 1) * n];
            let out_row = &mut out[i * p..(i + 1) * p];
            for k in k0..k1 {
                let coef = a_row[k];
                if coef == 0.0 {
                    continue;
                }
                let b_row = &b[k * p..(k + 1) * p];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += coef * bv;
                }
            }
        }
    }
}

/// `out[n×p] += aᵀ · g` for `a[m×n]`, `g[m×p]`.
pub fn matmul_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, n: usize, p: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(g.len(), m * p);
    debug_assert_eq!(out.len(), n * p);
    for k in 0..n {
        let out_row = &mut out[k * p..(k + 1) * p];
        for i in 0..m {
            let coef = a[i * n + k];
            if coef == 0.0 {
                continue;
            }
            let g_row = &g[i * p..(i + 1) * p];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += coef * gv;
            }
        }
    }
}

/// `out[m×n] += g · bᵀ` for `g[m×p]`, `b[n×p]`.
pub fn matmul_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, p: usize) {
    debug_assert_eq!(g.len(), m * p);
    debug_assert_eq!(b.len(), n * p);
    debug_assert_eq!(out.len(), m * n);
    for k in 0..n {
        let b_row = &b[k * p..(k + 1) * p];
        for i in 0..m {
            let g_row = &g[i * p..(i + 1) * p];
            out[i * n + k] += g_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}
