//! Dense compute kernels behind the autodiff ops.
//!
//! Every kernel has a sequential and a data-parallel route. The parallel
//! route splits work by output row only; each output element is produced by
//! the same sequential inner loop, so both routes are bitwise identical at
//! any thread count.

/// Execution strategy for a kernel call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

// Below this many output elements the rayon split costs more than it saves.
#[cfg(feature = "parallel")]
const PAR_MIN_ELEMS: usize = 4096;

/// Fill `out` row by row, `row_len` elements at a time.
fn for_each_row<F>(exec: Exec, out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    match exec {
        Exec::Sequential => out
            .chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, r)| f(i, r)),
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            if out.len() < PAR_MIN_ELEMS {
                out.chunks_mut(row_len)
                    .enumerate()
                    .for_each(|(i, r)| f(i, r));
            } else {
                out.par_chunks_mut(row_len)
                    .enumerate()
                    .for_each(|(i, r)| f(i, r));
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for_each_row(exec, &mut out, n, |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    });
    out
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`.
pub fn matmul_bt(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    for_each_row(exec, &mut out, n, |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            *o = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    });
    out
}

/// `out[k×n] = a[m×k]ᵀ · b[m×n]`.
pub fn matmul_at(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![0.0; k * n];
    for_each_row(exec, &mut out, n, |p, row| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let br = &b[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    });
    out
}

/// Geometry of a batched 1-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvDims {
    pub fn out_len(&self) -> usize {
        self.len + 2 * self.padding + 1 - self.kernel
    }
}

/// `out[b,o,t] = Σ_c Σ_k w[o,c,k] · x[b,c,t+k−padding]` (zero outside).
pub fn conv1d_forward(exec: Exec, x: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let l_out = d.out_len();
    let mut out = vec![0.0; d.batch * d.c_out * l_out];
    for_each_row(exec, &mut out, l_out, |row_idx, row| {
        let b = row_idx / d.c_out;
        let o = row_idx % d.c_out;
        for c in 0..d.c_in {
            let xr = &x[(b * d.c_in + c) * d.len..(b * d.c_in + c + 1) * d.len];
            let wr = &w[(o * d.c_in + c) * d.kernel..(o * d.c_in + c + 1) * d.kernel];
            for (k, &wv) in wr.iter().enumerate() {
                // input index s = t + k - padding must land in [0, len)
                let t_lo = d.padding.saturating_sub(k);
                let t_hi = (d.len + d.padding).saturating_sub(k).min(l_out);
                for t in t_lo..t_hi {
                    row[t] += wv * xr[t + k - d.padding];
                }
            }
        }
    });
    out
}

/// Gradient of the convolution with respect to its input.
pub fn conv1d_backward_input(exec: Exec, g: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let l_out = d.out_len();
    let mut dx = vec![0.0; d.batch * d.c_in * d.len];
    for_each_row(exec, &mut dx, d.len, |row_idx, row| {
        let b = row_idx / d.c_in;
        let c = row_idx % d.c_in;
        for o in 0..d.c_out {
            let gr = &g[(b * d.c_out + o) * l_out..(b * d.c_out + o + 1) * l_out];
            let wr = &w[(o * d.c_in + c) * d.kernel..(o * d.c_in + c + 1) * d.kernel];
            for (k, &wv) in wr.iter().enumerate() {
                let t_lo = d.padding.saturating_sub(k);
                let t_hi = (d.len + d.padding).saturating_sub(k).min(l_out);
                for t in t_lo..t_hi {
                    row[t + k - d.padding] += wv * gr[t];
                }
            }
        }
    });
    dx
}

/// Gradient of the convolution with respect to its kernels.
pub fn conv1d_backward_kernel(exec: Exec, g: &[f64], x: &[f64], d: ConvDims) -> Vec<f64> {
    let l_out = d.out_len();
    let mut dw = vec![0.0; d.c_out * d.c_in * d.kernel];
    for_each_row(exec, &mut dw, d.c_in * d.kernel, |o, row| {
        for b in 0..d.batch {
            let gr = &g[(b * d.c_out + o) * l_out..(b * d.c_out + o + 1) * l_out];
            for c in 0..d.c_in {
                let xr = &x[(b * d.c_in + c) * d.len..(b * d.c_in + c + 1) * d.len];
                for k in 0..d.kernel {
                    let t_lo = d.padding.saturating_sub(k);
                    let t_hi = (d.len + d.padding).saturating_sub(k).min(l_out);
                    let mut acc = 0.0;
                    for t in t_lo..t_hi {
                        acc += gr[t] * xr[t + k - d.padding];
                    }
                    row[c * d.kernel + k] += acc;
                }
            }
        }
    });
    dw
}
