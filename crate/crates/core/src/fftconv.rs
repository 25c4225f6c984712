//! FFT-backed linear convolution for the renewal recursions.
//!
//! Two access patterns:
//!
//! * [`KernelConvolver`] — repeated convolution of a running layer against a
//!   fixed kernel (the conditioned pmf); the kernel spectrum is computed once.
//! * [`linear_convolve`] — one-off products for the divide-and-conquer
//!   renewal-mass recursion.
//!
//! FFT lengths are padded to a power of two at least as large as the full
//! linear-convolution support, so no cyclic aliasing can fold probability
//! mass back below the horizon.  Results are truncated to the horizon and
//! clamped at zero: the exact convolutions are nonnegative, so any negative
//! output is round-off noise.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

fn fft_len(min: usize) -> usize {
    min.next_power_of_two()
}

/// Repeated convolution against a fixed kernel, truncated to `0..=t_max`.
pub struct KernelConvolver {
    size: usize,
    t_max: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kernel_spec: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl KernelConvolver {
    pub fn new(kernel: &[f64], t_max: usize) -> Self {
        assert!(kernel.len() <= t_max + 1);
        let size = fft_len(2 * (t_max + 1));
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let mut kernel_spec = vec![Complex::new(0.0, 0.0); size];
        for (i, &k) in kernel.iter().enumerate() {
            kernel_spec[i] = Complex::new(k, 0.0);
        }
        fwd.process(&mut kernel_spec);
        Self {
            size,
            t_max,
            fwd,
            inv,
            kernel_spec,
            scratch: vec![Complex::new(0.0, 0.0); size],
        }
    }

    /// Replace `cur` (length `t_max + 1`) with `truncate(cur * kernel)`.
    pub fn convolve_in_place(&mut self, cur: &mut [f64]) {
        assert_eq!(cur.len(), self.t_max + 1);
        for slot in self.scratch.iter_mut() {
            *slot = Complex::new(0.0, 0.0);
        }
        for (i, &x) in cur.iter().enumerate() {
            self.scratch[i] = Complex::new(x, 0.0);
        }
        self.fwd.process(&mut self.scratch);
        for (s, k) in self.scratch.iter_mut().zip(self.kernel_spec.iter()) {
            *s *= *k;
        }
        self.inv.process(&mut self.scratch);
        let norm = 1.0 / self.size as f64;
        for (i, slot) in cur.iter_mut().enumerate() {
            *slot = (self.scratch[i].re * norm).max(0.0);
        }
    }
}

/// One-off linear convolution of `a` and `b`, returning the first `out_len`
/// coefficients.  Falls back to the direct product for short inputs, where it
/// is both faster and exact.
pub fn linear_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    const DIRECT_CUTOFF: usize = 64;
    if a.len().min(b.len()) <= DIRECT_CUTOFF {
        let mut out = vec![0.0; out_len];
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 || i >= out_len {
                continue;
            }
            let jmax = (out_len - i).min(b.len());
            for (j, &bj) in b[..jmax].iter().enumerate() {
                out[i + j] += ai * bj;
            }
        }
        return out;
    }

    let size = fft_len(a.len() + b.len());
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    // Pack both real sequences into one complex transform: with
    // x = a + i b, the spectra separate as A[k] = (X[k] + conj(X[-k]))/2 and
    // B[k] = (X[k] - conj(X[-k]))/(2i).
    let mut x = vec![Complex::new(0.0, 0.0); size];
    for (i, &ai) in a.iter().enumerate() {
        x[i].re = ai;
    }
    for (i, &bi) in b.iter().enumerate() {
        x[i].im = bi;
    }
    fwd.process(&mut x);
    let mut prod = vec![Complex::new(0.0, 0.0); size];
    for k in 0..size {
        let xk = x[k];
        let xmk = x[(size - k) % size].conj();
        let ak = (xk + xmk) * 0.5;
        let bk = (xk - xmk) * Complex::new(0.0, -0.5);
        prod[k] = ak * bk;
    }
    inv.process(&mut prod);
    let norm = 1.0 / size as f64;
    (0..out_len)
        .map(|i| if i < size { prod[i].re * norm } else { 0.0 })
        .collect()
}
