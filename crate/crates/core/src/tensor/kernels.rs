//! Raw row-major kernels shared by the forward and backward passes.

/// `a[r×s] · b[s×c]`
pub(crate) fn matmul(a: &[f64], b: &[f64], r: usize, s: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for k in 0..s {
            let aik = a[i * s + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * c..(k + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `g[r×c] · b[s×c]ᵀ` → `r×s`
pub(crate) fn matmul_bt(g: &[f64], b: &[f64], r: usize, s: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * s];
    for i in 0..r {
        let g_row = &g[i * c..(i + 1) * c];
        for k in 0..s {
            let b_row = &b[k * c..(k + 1) * c];
            out[i * s + k] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[r×s]ᵀ · g[r×c]` → `s×c`
pub(crate) fn matmul_at(a: &[f64], g: &[f64], r: usize, s: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; s * c];
    for i in 0..r {
        let g_row = &g[i * c..(i + 1) * c];
        for k in 0..s {
            let aik = a[i * s + k];
            if aik == 0.0 {
                continue;
            }
            let out_row = &mut out[k * c..(k + 1) * c];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aik * gv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

pub(crate) fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
