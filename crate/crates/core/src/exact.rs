//! Exact finite-horizon probabilities for the constrained model.
//!
//! Everything here runs in the conditioned renewal measure: with
//! `p_theta(s) = e^{v(s) - theta s} p(s)` a probability distribution (theta = 0
//! at criticality, `theta = zeta` in the localized regime), constrained
//! expectations reduce to unweighted renewal quantities
//!
//! ```text
//!     P_t^c[A] = E_theta[1_A U_t] / u(t),      u(t) = E_theta[U_t],
//!     ln Z_t^c = theta t + ln u(t),
//! ```
//!
//! where `U_t` is the indicator of a renewal at `t`.  The exponential tilt
//! cancels between numerator and denominator for paths pinned at `t`, so all
//! dynamic programming happens on polynomially small positive numbers — no
//! log-domain arithmetic is needed for probabilities.
//!
//! Building blocks:
//!
//! * `u(t)` by the renewal recursion — direct `O(T^2)` at small horizons, a
//!   divide-and-conquer scheme with FFT cross-convolutions above, spot-checked
//!   against the direct recursion on a sample of horizons;
//! * layer masses `G(n, t) = P_theta[T_n = t]` (n-fold pmf convolutions) via a
//!   streaming scan with a direct or FFT backend — FFT for speed, direct when
//!   layers decay to scales where the FFT noise floor would drown them;
//! * the renewal-count CDF `sum_{n <= m} G(n, t)`, the product moment
//!   `sum_n (n/t) G(n, t)`, and a quantized half-space DP with certified
//!   lower/upper variants for non-lattice projected rewards.

use crate::error::{Error, Result};
use crate::fftconv::{linear_convolve, KernelConvolver};
use crate::model::ModelSpec;
use crate::series::NeumaierSum;
use crate::thermo::{EffectiveDist, ProjectedReward};

/// Horizon at which `u(t)` construction switches to divide-and-conquer.
const U_FFT_THRESHOLD: usize = 2048;
/// Horizon at which layer scans default to the FFT backend.
const LAYER_FFT_THRESHOLD: usize = 1024;
/// Relative agreement demanded between the fast and direct `u` recursions.
const U_GUARD_REL_TOL: f64 = 1e-9;
/// State-count budget for the half-space DP.
const HALFSPACE_STATE_BUDGET: u64 = 1 << 24;
/// Entry budget for materialized layer tables.
const LAYER_TABLE_BUDGET: u64 = 1 << 24;

/// Convolution backend for layer scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvBackend {
    /// Pick by horizon: FFT above `LAYER_FFT_THRESHOLD`.
    Auto,
    /// Direct convolution: slower, but with full relative accuracy on
    /// positive sums — required when layer masses live at scales like
    /// `e^{-400}` that sit far below the FFT noise floor.
    Direct,
    Fft,
}

/// Renewal mass `u`, the conditioned pmf, and the tilt, for one horizon.
#[derive(Clone, Debug)]
pub struct RenewalTables {
    horizon: usize,
    theta: f64,
    pmf: Vec<f64>,
    u: Vec<f64>,
}

impl RenewalTables {
    /// Build tables for `t <= horizon` from a conditioned distribution.
    pub fn build(dist: &EffectiveDist, horizon: u64) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        let horizon = horizon as usize;
        let pmf = dist.pmf(horizon as u64);
        let u = if horizon < U_FFT_THRESHOLD {
            u_direct(&pmf, horizon)
        } else {
            let u = u_cdq(&pmf, horizon);
            u_guard(&pmf, &u)?;
            u
        };
        Ok(Self {
            horizon,
            theta: dist.theta(),
            pmf,
            u,
        })
    }

    pub fn horizon(&self) -> u64 {
        self.horizon as u64
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Renewal mass `u(t) = P_theta[some T_n = t]`, with `u(0) = 1`.
    pub fn u(&self, t: u64) -> f64 {
        self.u[t as usize]
    }

    pub fn u_slice(&self) -> &[f64] {
        &self.u
    }

    pub fn pmf_slice(&self) -> &[f64] {
        &self.pmf
    }

    /// `ln Z_t^c = theta t + ln u(t)`; negative infinity when `u(t) = 0`.
    pub fn log_zc(&self, t: u64) -> f64 {
        let ut = self.u[t as usize];
        if ut == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.theta * t as f64 + ut.ln()
        }
    }

    fn check_t(&self, t: u64) -> Result<usize> {
        if t as usize > self.horizon {
            return Err(Error::Domain(format!(
                "t = {t} exceeds the table horizon {}",
                self.horizon
            )));
        }
        Ok(t as usize)
    }

    fn resolve_backend(&self, backend: ConvBackend) -> ConvBackend {
        match backend {
            ConvBackend::Auto => {
                if self.horizon >= LAYER_FFT_THRESHOLD {
                    ConvBackend::Fft
                } else {
                    ConvBackend::Direct
                }
            }
            other => other,
        }
    }

    /// Stream the layer masses `G(n, .) = P_theta[T_n = .]` for
    /// `n = 1..=n_max`, invoking `visit(n, layer)` with the full slice
    /// `0..=horizon` per layer.  Layers are produced in order; the scan ends
    /// early if a layer vanishes identically (all later ones then do too).
    pub fn layer_scan<F>(&self, n_max: u64, backend: ConvBackend, mut visit: F) -> Result<()>
    where
        F: FnMut(u64, &[f64]),
    {
        let backend = self.resolve_backend(backend);
        let mut cur = self.pmf.clone();
        let mut fft = match backend {
            ConvBackend::Fft => Some(KernelConvolver::new(&self.pmf, self.horizon)),
            _ => None,
        };
        let mut n = 1u64;
        loop {
            if cur.iter().all(|&x| x == 0.0) {
                return Ok(());
            }
            visit(n, &cur);
            if n == n_max {
                return Ok(());
            }
            match &mut fft {
                Some(conv) => conv.convolve_in_place(&mut cur),
                None => cur = direct_step(&cur, &self.pmf),
            }
            n += 1;
        }
    }

    /// Materialized layers `G(n, t)` for `n <= n_max`, guarded by a memory
    /// budget.
    pub fn count_layers(&self, n_max: u64, backend: ConvBackend) -> Result<Vec<Vec<f64>>> {
        let entries = n_max.saturating_mul(self.horizon as u64 + 1);
        if entries > LAYER_TABLE_BUDGET {
            return Err(Error::Budget(format!(
                "layer table would hold {entries} entries (limit {LAYER_TABLE_BUDGET}); \
                 use the streaming scan instead"
            )));
        }
        let mut out = Vec::with_capacity(n_max as usize);
        self.layer_scan(n_max, backend, |_, layer| out.push(layer.to_vec()))?;
        Ok(out)
    }

    /// Renewal-count CDF values `sum_{n <= m} G(n, t)` for a batch of
    /// `(t, m)` pairs, in one streaming scan.
    pub fn count_cdf_many(&self, queries: &[(u64, u64)], backend: ConvBackend) -> Result<Vec<f64>> {
        for &(t, _) in queries {
            self.check_t(t)?;
        }
        let mut acc = vec![NeumaierSum::new(); queries.len()];
        let n_scan = queries
            .iter()
            .map(|&(t, m)| m.min(t))
            .max()
            .unwrap_or(0);
        if n_scan == 0 {
            return Ok(vec![0.0; queries.len()]);
        }
        self.layer_scan(n_scan, backend, |n, layer| {
            for (a, &(t, m)) in acc.iter_mut().zip(queries.iter()) {
                if n <= m.min(t) {
                    a.add(layer[t as usize]);
                }
            }
        })?;
        Ok(acc.iter().map(|a| a.value()).collect())
    }

    /// Exact probability `P_t^c[N_t <= m]`.
    pub fn exact_prob_count(&self, t: u64, m: u64, backend: ConvBackend) -> Result<f64> {
        let ti = self.check_t(t)?;
        let ut = self.u[ti];
        if ut == 0.0 {
            return Err(Error::Domain(format!(
                "u({t}) = 0: no constrained path reaches t = {t}, conditioning is undefined"
            )));
        }
        if m >= t {
            return Ok(1.0);
        }
        let cdf = self.count_cdf_many(&[(t, m)], backend)?[0];
        Ok((cdf / ut).clamp(0.0, 1.0))
    }

    /// Product moments `sum_n (n/t) G(n, t)` for a batch of horizons, in one
    /// streaming scan.
    pub fn product_moment_many(&self, ts: &[u64], backend: ConvBackend) -> Result<Vec<f64>> {
        for &t in ts {
            self.check_t(t)?;
            if t == 0 {
                return Err(Error::Domain("product moment needs t >= 1".into()));
            }
        }
        let n_scan = ts.iter().copied().max().unwrap_or(0);
        let mut acc = vec![NeumaierSum::new(); ts.len()];
        self.layer_scan(n_scan, backend, |n, layer| {
            for (a, &t) in acc.iter_mut().zip(ts.iter()) {
                if n <= t {
                    a.add(n as f64 * layer[t as usize]);
                }
            }
        })?;
        Ok(acc
            .iter()
            .zip(ts.iter())
            .map(|(a, &t)| a.value() / t as f64)
            .collect())
    }

    /// `E_theta[(N_t / t) U_t] = sum_n (n/t) G(n, t)`.
    pub fn product_moment(&self, t: u64, backend: ConvBackend) -> Result<f64> {
        Ok(self.product_moment_many(&[t], backend)?[0])
    }
}

/// Direct renewal recursion `u(t) = sum_s pmf(s) u(t-s)`.
fn u_direct(pmf: &[f64], horizon: usize) -> Vec<f64> {
    let mut u = vec![0.0; horizon + 1];
    u[0] = 1.0;
    for t in 1..=horizon {
        let mut acc = NeumaierSum::new();
        for s in 1..=t {
            let p = pmf[s];
            if p != 0.0 {
                acc.add(p * u[t - s]);
            }
        }
        u[t] = acc.value();
    }
    u
}

/// Divide-and-conquer renewal recursion: contributions of the solved block
/// `[l, mid]` are pushed into `(mid, r]` with one FFT product per split, so
/// every source/target pair is covered exactly once by its lowest common
/// split.
fn u_cdq(pmf: &[f64], horizon: usize) -> Vec<f64> {
    const BASE: usize = 256;
    let mut u = vec![0.0; horizon + 1];
    u[0] = 1.0;

    fn solve(u: &mut [f64], pmf: &[f64], l: usize, r: usize) {
        if r - l + 1 <= BASE {
            for t in l.max(1)..=r {
                let mut acc = u[t];
                for s in 1..=(t - l) {
                    // Contributions from u[j] with j >= l; earlier js were
                    // already pushed in by ancestor cross-steps.
                    let p = pmf[s];
                    if p != 0.0 {
                        acc += p * u[t - s];
                    }
                }
                u[t] = acc;
            }
            return;
        }
        let mid = (l + r) / 2;
        solve(u, pmf, l, mid);
        // Cross step: (sum_{j in [l, mid]} u[j] x^j) * (sum_s pmf[s] x^s),
        // shifted so the product lands on (mid, r].
        let src = &u[l..=mid];
        let kmax = (r - l).min(pmf.len() - 1);
        let conv = linear_convolve(src, &pmf[..=kmax], r - l + 1);
        for t in (mid + 1)..=r {
            u[t] += conv[t - l].max(0.0);
        }
        solve(u, pmf, mid + 1, r);
    }

    solve(&mut u, pmf, 0, horizon);
    u
}

/// Spot-check the fast `u` against the direct recursion at sampled horizons.
fn u_guard(pmf: &[f64], u: &[f64]) -> Result<()> {
    let horizon = u.len() - 1;
    let step = (horizon / 32).max(1);
    let mut t = step;
    while t <= horizon {
        let mut acc = NeumaierSum::new();
        for s in 1..=t {
            let p = pmf[s];
            if p != 0.0 {
                acc.add(p * u[t - s]);
            }
        }
        let want = acc.value();
        let got = u[t];
        if (got - want).abs() > U_GUARD_REL_TOL * want.abs().max(1e-300) {
            return Err(Error::Numeric(format!(
                "fast renewal-mass recursion disagrees with the direct one at t = {t}: \
                 {got:e} vs {want:e}"
            )));
        }
        t += step;
    }
    Ok(())
}

/// One direct convolution step `next = truncate(cur * pmf)`.
fn direct_step(cur: &[f64], pmf: &[f64]) -> Vec<f64> {
    let n = cur.len();
    let mut next = vec![0.0; n];
    for (s, &p) in pmf.iter().enumerate().skip(1) {
        if p == 0.0 {
            continue;
        }
        for j in 0..n - s {
            let c = cur[j];
            if c != 0.0 {
                next[j + s] += p * c;
            }
        }
    }
    next
}

// ---------------------------------------------------------------------------
// Half-space functional
// ---------------------------------------------------------------------------

/// Quantization mode for the half-space DP.
#[derive(Clone, Copy, Debug)]
pub enum QuantMode {
    /// The projected reward is lattice-valued: `g(s) * scale` is an integer
    /// for every support point.  Single exact DP.
    ExactInteger { scale: u64 },
    /// General reward: two DPs with `g` rounded up/down to multiples of
    /// `delta` give a certified probability interval.  `None` picks a step
    /// giving about `4 t` buckets.
    Bracket { delta: Option<f64> },
}

/// A half-space query `sum_i g(S_i) 1{T_i <= t} <= alpha t`.
#[derive(Clone, Copy, Debug)]
pub struct HalfSpaceQuery {
    pub alpha: f64,
    pub mode: QuantMode,
}

/// Certified result of a half-space evaluation: the event functional
/// `E(t) = E_theta[1_event U_t]` and the probability `E(t)/u(t)`, each as an
/// interval (degenerate in exact modes).
#[derive(Clone, Copy, Debug)]
pub struct HalfSpaceResult {
    pub e_lower: f64,
    pub e_upper: f64,
    pub prob_lower: f64,
    pub prob_upper: f64,
}

/// Evaluate the half-space functional at horizon `t`.  The backend matters
/// only on the constant-reward fast path, which reduces to a count CDF.
pub fn halfspace_functional(
    tables: &RenewalTables,
    g: &ProjectedReward,
    query: &HalfSpaceQuery,
    t: u64,
    backend: ConvBackend,
) -> Result<HalfSpaceResult> {
    if !(0.0..1.0).contains(&query.alpha) {
        return Err(Error::Domain(format!(
            "alpha must lie in [0, 1), got {}",
            query.alpha
        )));
    }
    let ti = t as usize;
    if ti > tables.horizon {
        return Err(Error::Domain(format!(
            "t = {t} exceeds the table horizon {}",
            tables.horizon
        )));
    }
    let ut = tables.u[ti];
    if ut == 0.0 {
        return Err(Error::Domain(format!(
            "u({t}) = 0: no constrained path reaches t = {t}, conditioning is undefined"
        )));
    }

    // Projected-reward values on the in-horizon support.
    let support: Vec<usize> = (1..=ti).filter(|&s| tables.pmf[s] > 0.0).collect();
    if support.is_empty() {
        return Err(Error::Domain(format!(
            "no support point fits below t = {t}"
        )));
    }
    let gv: Vec<f64> = support.iter().map(|&s| g.eval_g(s as u64)).collect();
    let alpha_t = query.alpha * t as f64;

    // Constant-g fast path (the count reward lands here: g = 1/w_c).
    let g0 = gv[0];
    if gv.iter().all(|&x| (x - g0).abs() <= 1e-12 * (1.0 + g0.abs())) {
        let prob = if g0 > 0.0 {
            let m = (alpha_t / g0 + 1e-9).floor();
            if m < 0.0 {
                0.0
            } else {
                tables.exact_prob_count(t, m as u64, backend)?
            }
        } else if g0 == 0.0 {
            1.0
        } else {
            // g constant negative: sum = g0 N <= alpha t iff N >= alpha t / g0.
            let nmin = (alpha_t / g0 - 1e-9).ceil().max(0.0) as u64;
            if nmin <= 1 {
                1.0
            } else {
                1.0 - tables.exact_prob_count(t, nmin - 1, backend)?
            }
        };
        let e = prob * ut;
        return Ok(HalfSpaceResult {
            e_lower: e,
            e_upper: e,
            prob_lower: prob,
            prob_upper: prob,
        });
    }

    match query.mode {
        QuantMode::ExactInteger { scale } => {
            if scale == 0 {
                return Err(Error::Domain("integer scale must be positive".into()));
            }
            let sc = scale as f64;
            let mut ks = Vec::with_capacity(gv.len());
            for (&s, &x) in support.iter().zip(gv.iter()) {
                let scaled = x * sc;
                let k = scaled.round();
                if (scaled - k).abs() > 1e-9 {
                    return Err(Error::Domain(format!(
                        "g({s}) * {scale} = {scaled} is not an integer; \
                         exact mode needs a lattice-valued projected reward"
                    )));
                }
                ks.push(k as i64);
            }
            let threshold = (query.alpha * t as f64 * sc + 1e-9).floor() as i64;
            let e = halfspace_dp(&tables.pmf, &support, &ks, ti, threshold)?;
            Ok(HalfSpaceResult {
                e_lower: e,
                e_upper: e,
                prob_lower: (e / ut).clamp(0.0, 1.0),
                prob_upper: (e / ut).clamp(0.0, 1.0),
            })
        }
        QuantMode::Bracket { delta } => {
            let gmin = gv.iter().cloned().fold(f64::INFINITY, f64::min);
            let gmax = gv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = gmax.max(0.0) - gmin.min(0.0);
            let delta = match delta {
                Some(d) if d > 0.0 => d,
                Some(d) => {
                    return Err(Error::Domain(format!(
                        "quantization step must be positive, got {d}"
                    )))
                }
                // Default: about 4 buckets per unit time step.
                None => (span / 4.0).max(f64::MIN_POSITIVE),
            };
            let threshold = (alpha_t / delta).floor() as i64;
            // Rounding g up shrinks the event; rounding down grows it.
            let ks_up: Vec<i64> = gv.iter().map(|&x| (x / delta).ceil() as i64).collect();
            let ks_down: Vec<i64> = gv.iter().map(|&x| (x / delta).floor() as i64).collect();
            let e_lower = halfspace_dp(&tables.pmf, &support, &ks_up, ti, threshold)?;
            let e_upper = halfspace_dp(&tables.pmf, &support, &ks_down, ti, threshold)?;
            let e_upper = e_upper.max(e_lower);
            Ok(HalfSpaceResult {
                e_lower,
                e_upper,
                prob_lower: (e_lower / ut).clamp(0.0, 1.0),
                prob_upper: (e_upper / ut).clamp(0.0, 1.0),
            })
        }
    }
}

/// DP over states (time, accumulated integer g-sum), restricted to paths
/// ending with a renewal at `t`: returns
/// `E = P[renewal at t, sum_i k(S_i) <= threshold]`.
fn halfspace_dp(
    pmf: &[f64],
    support: &[usize],
    ks: &[i64],
    t: usize,
    threshold: i64,
) -> Result<f64> {
    let kmin_step = ks.iter().cloned().min().unwrap().min(0);
    let kmax_step = ks.iter().cloned().max().unwrap().max(0);
    let all_nonneg = kmin_step >= 0;

    // Reachable axis for the accumulated sum after <= t steps.
    let axis_lo = kmin_step.saturating_mul(t as i64).min(0);
    let axis_hi = if all_nonneg {
        // Sums above the threshold can never come back: clip.
        threshold.max(0)
    } else {
        kmax_step.saturating_mul(t as i64).max(0)
    };
    if threshold < axis_lo {
        return Ok(0.0); // even the minimal reachable sum misses the event
    }
    let width = (axis_hi - axis_lo + 1) as u64;
    let states = width.saturating_mul(t as u64 + 1);
    if states > HALFSPACE_STATE_BUDGET {
        return Err(Error::Budget(format!(
            "half-space DP needs {states} states (limit {HALFSPACE_STATE_BUDGET}); \
             increase the quantization step delta"
        )));
    }

    let w = width as usize;
    let offset = -axis_lo as i64; // k = 0 sits at index `offset`
    let mut dp = vec![0.0f64; (t + 1) * w];
    dp[offset as usize] = 1.0; // tau = 0, sum = 0

    for tau in 1..=t {
        let (past, row) = dp.split_at_mut(tau * w);
        let row = &mut row[..w];
        for (&s, &k) in support.iter().zip(ks.iter()) {
            if s > tau {
                break;
            }
            let p = pmf[s];
            let src = &past[(tau - s) * w..(tau - s + 1) * w];
            // Shift by k along the axis while multiplying by pmf(s).
            if k >= 0 {
                let k = k as usize;
                if k < w {
                    for j in 0..w - k {
                        let x = src[j];
                        if x != 0.0 {
                            row[j + k] += p * x;
                        }
                    }
                }
            } else {
                let k = (-k) as usize;
                if k < w {
                    for j in k..w {
                        let x = src[j];
                        if x != 0.0 {
                            row[j - k] += p * x;
                        }
                    }
                }
            }
        }
    }

    let row = &dp[t * w..];
    let cut = (threshold + offset).min(w as i64 - 1);
    let mut acc = NeumaierSum::new();
    for &x in &row[..=(cut.max(-1)) as usize] {
        acc.add(x);
    }
    Ok(acc.value())
}

// ---------------------------------------------------------------------------
// Direct Gibbs partition recursion (overflow-safe cross-check)
// ---------------------------------------------------------------------------

/// `ln Z_t^c` for `t = 0..=t_max` by the direct Gibbs recursion
/// `Z_t^c = sum_s e^{v(s)} p(s) Z_{t-s}^c`, `Z_0 = 1`, carried with an
/// explicit power-of-two exponent so localized growth cannot overflow.
///
/// This is the independent cross-check for `ln Z_t^c = theta t + ln u(t)`;
/// it never goes through the conditioned measure.
pub fn gibbs_log_partition_direct(model: &ModelSpec, t_max: u64) -> Vec<f64> {
    let t_max = t_max as usize;
    let mut weight = vec![0.0; t_max + 1];
    for (s, w) in weight.iter_mut().enumerate().skip(1) {
        *w = model.eval_v(s as u64).exp() * model.eval_p(s as u64);
    }

    // Z_t = mant[t] * 2^exp2[t]; mant in [1, 2) or exactly 0.
    let mut mant = vec![0.0f64; t_max + 1];
    let mut exp2 = vec![0i64; t_max + 1];
    mant[0] = 1.0;
    let mut out = vec![0.0f64; t_max + 1];

    for t in 1..=t_max {
        // Reference exponent: the largest exponent among contributors.
        let mut eref = i64::MIN;
        for s in 1..=t {
            if weight[s] != 0.0 && mant[t - s] != 0.0 {
                eref = eref.max(exp2[t - s]);
            }
        }
        if eref == i64::MIN {
            mant[t] = 0.0;
            out[t] = f64::NEG_INFINITY;
            continue;
        }
        let mut acc = NeumaierSum::new();
        for s in 1..=t {
            let w = weight[s];
            if w == 0.0 || mant[t - s] == 0.0 {
                continue;
            }
            let shift = (exp2[t - s] - eref).max(-1060) as i32;
            acc.add(w * mant[t - s] * 2f64.powi(shift));
        }
        let raw = acc.value();
        if raw <= 0.0 {
            mant[t] = 0.0;
            out[t] = f64::NEG_INFINITY;
            continue;
        }
        let k = raw.log2().floor() as i64;
        mant[t] = raw * 2f64.powi(-k as i32);
        exp2[t] = eref + k;
        out[t] = exp2[t] as f64 * std::f64::consts::LN_2 + mant[t].ln();
    }
    out
}
