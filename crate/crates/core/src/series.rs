//! Certified summation of tilted log-power series.
//!
//! Everything downstream (criticality tests, tilt solvers, rate functions)
//! rests on sums of the form
//!
//! ```text
//!     S(c, lp, eta; s0) = sum_{s >= s0} (ln(e + s))^lp * s^(-c) * exp(-eta * s)
//! ```
//!
//! evaluated to certified accuracy: every result is an interval `[lo, hi]`
//! guaranteed to contain the true value.  The partial sum is accumulated with
//! compensated (Neumaier) summation; the tail beyond a cutoff `T` is enclosed
//! analytically:
//!
//! * `eta = 0`, `c > 1` (or `c = 1`, `lp < -1`): the summand is eventually
//!   decreasing, so the tail lies between the integrals from `T+1` and from
//!   `T`.  With the substitution `y = (c-1) ln x`,
//!
//!   ```text
//!       int_T^inf (ln x)^lp x^(-c) dx = (c-1)^(-lp-1) * Gamma(lp+1, (c-1) ln T)
//!   ```
//!
//!   where `Gamma(a, x)` is the upper incomplete gamma function, extended to
//!   arbitrary real order `a`.  The mismatch between `ln x` and `ln(e + x)` is
//!   absorbed by the enclosure `ln x <= ln(e + x) <= (1 + d_T) ln x` for
//!   `x >= T`, with `d_T = ln(1 + e/T) / ln T`.
//! * `eta > 0`: the tail is bounded above by the smaller of a geometric bound
//!   `h(T+1) e^{-eta (T+1)} / (1 - e^{-eta})` (valid once the un-tilted factor
//!   `h` is decreasing) and, for `lp <= 0`, an incomplete-gamma bound
//!   `(ln(e+T+1))^lp * eta^(c-1) * Gamma(1-c, eta (T+1))`; the lower bound is 0.
//!
//! Divergence (`eta = 0` with `c < 1`, or `c = 1` with `lp >= -1`) is decided
//! analytically, never by running out of terms.  A wide bracket is still a
//! correct answer; the cutoff budget caps work, not correctness.

use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Relative half-width at which tail refinement stops.
pub const SERIES_REL_TOL: f64 = 1e-13;
/// Absolute half-width floor for tail refinement.
pub const SERIES_ABS_TOL: f64 = 1e-14;
/// Term cutoff beyond which the (already certified) bracket is returned as-is.
const CUTOFF_MAX: u64 = 1 << 23;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Compensated floating-point accumulator (Neumaier variant of Kahan).
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
    count: u64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Bound on accumulated rounding error: with compensation the residual is
    /// O(n eps^2) relative plus one eps on the final add; `2 eps |sum|` is a
    /// comfortable envelope for the term counts used here.
    pub fn error_bound(&self) -> f64 {
        2.0 * f64::EPSILON * self.value().abs() + f64::MIN_POSITIVE
    }
}

/// A closed interval certified to contain a real quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bracket {
    lo: f64,
    hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "inverted bracket: [{lo}, {hi}]");
        Self { lo, hi }
    }

    /// Point interval (no outward slack; use `slacken` after arithmetic).
    pub fn exact(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn from_value_err(v: f64, err: f64) -> Self {
        let e = err.abs();
        Self { lo: v - e, hi: v + e }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Expand outward by a few ulps so that interval arithmetic performed in
    /// rounded f64 stays conservative.
    pub fn slacken(self) -> Self {
        let m = self.lo.abs().max(self.hi.abs());
        let e = 1e-15 * m + f64::MIN_POSITIVE;
        Self {
            lo: self.lo - e,
            hi: self.hi + e,
        }
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.lo + o.lo, self.hi + o.hi).slacken()
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.lo - o.hi, self.hi - o.lo).slacken()
    }

    pub fn neg(self) -> Self {
        Self::new(-self.hi, -self.lo)
    }

    pub fn mul(self, o: Self) -> Self {
        let p = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::new(lo, hi).slacken()
    }

    /// Multiply by a scalar of either sign.
    pub fn scale(self, k: f64) -> Self {
        if k >= 0.0 {
            Self::new(self.lo * k, self.hi * k).slacken()
        } else {
            Self::new(self.hi * k, self.lo * k).slacken()
        }
    }

    /// Interval division; the divisor must not straddle zero.
    pub fn div(self, o: Self) -> Result<Self> {
        if o.lo <= 0.0 && o.hi >= 0.0 {
            return Err(Error::Numeric(format!(
                "division by interval [{:e}, {:e}] containing zero",
                o.lo, o.hi
            )));
        }
        Ok(self.mul(Self::new(1.0 / o.hi, 1.0 / o.lo)))
    }

    pub fn exp(self) -> Self {
        Self::new(self.lo.exp(), self.hi.exp()).slacken()
    }

    /// Natural log; requires a strictly positive interval.
    pub fn ln(self) -> Result<Self> {
        if self.lo <= 0.0 {
            return Err(Error::Numeric(format!(
                "log of interval [{:e}, {:e}] not strictly positive",
                self.lo, self.hi
            )));
        }
        Ok(Self::new(self.lo.ln(), self.hi.ln()).slacken())
    }

    pub fn hull(self, o: Self) -> Self {
        Self::new(self.lo.min(o.lo), self.hi.max(o.hi))
    }
}

/// Outcome of a certified summation: either a finite bracket or a proof of
/// divergence (decided from the exponents, not from term counts).
#[derive(Clone, Copy, Debug)]
pub enum SeriesSum {
    Finite(Bracket),
    Divergent,
}

impl SeriesSum {
    pub fn finite(&self) -> Option<Bracket> {
        match self {
            SeriesSum::Finite(b) => Some(*b),
            SeriesSum::Divergent => None,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, SeriesSum::Divergent)
    }
}

/// Does `sum (ln(e+s))^lp s^(-c) e^(-eta s)` converge?
pub fn converges(c: f64, lp: f64, eta: f64) -> bool {
    eta > 0.0 || c > 1.0 || (c == 1.0 && lp < -1.0)
}

/// Upper incomplete gamma `Gamma(a, x)` for arbitrary real `a` and `x > 0`,
/// returned as `(value, absolute_error_bound)`.
///
/// For `x >= max(a + 2, 2)` the Lentz continued fraction converges fast.
/// Otherwise the order is lifted to `a' = a + k` in `(0.5, 1.5]`, where
/// `Gamma(a', x) = Gamma(a') - lower_series(a', x)` is safe, and the result is
/// walked back down through `Gamma(b, x) = (Gamma(b + 1, x) - x^b e^{-x}) / b`.
/// Zero order is handled by the exponential-integral series
/// `Gamma(0, x) = E1(x) = -gamma - ln x + sum (-1)^{n+1} x^n / (n n!)`.
pub fn upper_gamma(a: f64, x: f64) -> (f64, f64) {
    assert!(x > 0.0, "upper_gamma requires x > 0, got {x}");
    if x >= 2.0 && x >= a + 2.0 {
        return upper_gamma_cf(a, x);
    }

    // Number of unit steps lifting a into (0.5, 1.5].
    let k = if a > 0.5 {
        0
    } else {
        (1.5 - a).floor() as i64
    };
    let a_top = a + k as f64;
    let (mut val, mut err) = if a_top.abs() < 1e-12 {
        // Only reachable when a itself is ~0 and k = 0 cannot occur (a <= 0.5
        // lifts into (0.5, 1.5]), but keep the guard for exact integer a.
        e1_series(x)
    } else {
        upper_gamma_series(a_top, x)
    };

    // Walk the order back down: b runs over a + (k-1), ..., a + 0.
    for j in (0..k).rev() {
        let b = a + j as f64;
        if b.abs() < 1e-300 {
            let (v, e) = e1_series(x);
            val = v;
            err = e;
            continue;
        }
        let atom = (b * x.ln() - x).exp(); // x^b e^{-x}
        let num = val - atom;
        let num_err = err + 2.0 * f64::EPSILON * (val.abs() + atom);
        val = num / b;
        err = num_err / b.abs() + f64::EPSILON * val.abs();
    }
    (val, err)
}

/// Lentz continued fraction for `Gamma(a, x)`, valid for `x >= max(a + 2, 2)`.
fn upper_gamma_cf(a: f64, x: f64) -> (f64, f64) {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..400 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    let val = (a * x.ln() - x).exp() * h;
    (val, 1e-14 * val.abs() + 1e-308)
}

/// `Gamma(a, x) = Gamma(a) - lower(a, x)` via the standard lower-incomplete
/// series, for `a > 0` and small `x` (used with `a` in `(0.5, 1.5]`, `x < 4`).
fn upper_gamma_series(a: f64, x: f64) -> (f64, f64) {
    let gam = ln_gamma(a).exp();
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..500 {
        term *= x / (a + n as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    let lower = sum * (a * x.ln() - x).exp();
    let val = gam - lower;
    // Cancellation-aware error: both addends carry relative eps-level error.
    let err = 4.0 * f64::EPSILON * (gam.abs() + lower.abs()) + 1e-308;
    (val, err)
}

/// `E1(x) = Gamma(0, x)` by alternating series, for `x < 4`.
fn e1_series(x: f64) -> (f64, f64) {
    let mut term = 1.0f64;
    let mut sum = 0.0f64;
    for n in 1..200 {
        term *= -x / n as f64;
        let contrib = -term / n as f64;
        sum += contrib;
        if contrib.abs() < 1e-17 * (1.0 + sum.abs()) {
            break;
        }
    }
    let val = -EULER_GAMMA - x.ln() + sum;
    let err = 8.0 * f64::EPSILON * (EULER_GAMMA + x.ln().abs() + sum.abs()) + 1e-308;
    (val, err)
}

/// Certified enclosure of `int_t^inf (ln(e + x))^lp x^(-c) dx`.
///
/// Requires convergence (`c > 1`, or `c = 1` with `lp < -1`) and `t >= 8`.
pub fn log_power_tail_integral(c: f64, lp: f64, t: f64) -> Result<Bracket> {
    assert!(t >= 8.0, "tail integral needs t >= 8, got {t}");
    if !(c > 1.0 || (c == 1.0 && lp < -1.0)) {
        return Err(Error::Numeric(format!(
            "tail integral diverges for c = {c}, lp = {lp}"
        )));
    }
    if lp == 0.0 {
        let v = t.powf(1.0 - c) / (c - 1.0);
        return Ok(Bracket::exact(v).slacken());
    }

    // ln x <= ln(e + x) <= (1 + d) ln x on [t, inf).
    let d = (1.0 + std::f64::consts::E / t).ln() / t.ln();
    let factor = (1.0 + d).powf(lp); // < 1 for lp < 0, > 1 for lp > 0

    let core = if c == 1.0 {
        // int_t^inf (ln x)^lp / x dx = (ln t)^(lp+1) / (-lp - 1)
        Bracket::exact(t.ln().powf(lp + 1.0) / (-lp - 1.0)).slacken()
    } else {
        let aa = lp + 1.0;
        let xx = (c - 1.0) * t.ln();
        let (g, g_err) = upper_gamma(aa, xx);
        let pre = (c - 1.0).powf(-aa);
        Bracket::from_value_err(pre * g, pre * g_err + 4.0 * f64::EPSILON * (pre * g).abs())
    };
    if core.lo() < 0.0 {
        return Err(Error::Numeric(format!(
            "tail integral enclosure lost positivity at t = {t} (c = {c}, lp = {lp})"
        )));
    }

    // Apply the pointwise enclosure of the log factor.
    let (lo, hi) = if lp >= 0.0 {
        (core.lo(), core.hi() * factor)
    } else {
        (core.lo() * factor, core.hi())
    };
    Ok(Bracket::new(lo, hi).slacken())
}

/// Is `h(s) = (ln(e+s))^lp s^(-c) e^(-eta s)` decreasing for all `s >= t`?
///
/// `h'/h = lp / ((e+s) ln(e+s)) - c/s - eta`, so a sufficient condition is
/// `lp * s <= (c + eta s)(e + s) ln(e + s)` at `s = t` (the right side grows
/// faster than the left, so it persists).  Always true for `lp <= 0`.
fn summand_decreasing(c: f64, lp: f64, eta: f64, t: f64) -> bool {
    if lp <= 0.0 {
        return true;
    }
    let e = std::f64::consts::E;
    lp * t <= (c + eta * t) * (e + t) * (e + t).ln()
}

/// Certified sum `sum_{s >= from} (ln(e + s))^lp s^(-c) e^(-eta s)` at the
/// default certification tolerance.
pub fn tail_weight_sum(c: f64, lp: f64, eta: f64, from: u64) -> Result<SeriesSum> {
    tail_weight_sum_with_tol(c, lp, eta, from, SERIES_REL_TOL)
}

/// Certified sum with a caller-chosen relative tolerance on the bracket
/// width.  Solver inner loops use a looser tolerance to keep iteration cheap;
/// reported constants use the default.  The result is certified either way —
/// the tolerance (and the term budget) only control tightness.
pub fn tail_weight_sum_with_tol(
    c: f64,
    lp: f64,
    eta: f64,
    from: u64,
    rel_tol: f64,
) -> Result<SeriesSum> {
    assert!(eta >= 0.0, "negative tilt {eta} passed to tail_weight_sum");
    if !converges(c, lp, eta) {
        return Ok(SeriesSum::Divergent);
    }
    let from = from.max(1);

    let term = |s: u64| -> f64 {
        let sf = s as f64;
        let mut v = sf.powf(-c);
        if lp != 0.0 {
            v *= (std::f64::consts::E + sf).ln().powf(lp);
        }
        if eta > 0.0 {
            v *= (-eta * sf).exp();
        }
        v
    };

    let mut partial = NeumaierSum::new();
    let mut t = from.saturating_sub(1); // summed through t inclusive
    let mut cutoff = (from + 63).max(64);

    loop {
        while t < cutoff {
            t += 1;
            partial.add(term(t));
        }
        match tail_bracket(c, lp, eta, t)? {
            Some(tail) => {
                let base = partial.value();
                let fp = partial.error_bound();
                let lo = base + tail.lo() - fp;
                let hi = base + tail.hi() + fp;
                let width = hi - lo;
                let tol = SERIES_ABS_TOL.max(rel_tol * hi.abs());
                if width <= tol || t >= CUTOFF_MAX {
                    return Ok(SeriesSum::Finite(Bracket::new(lo, hi).slacken()));
                }
            }
            None => {
                // Monotonicity not yet established at this cutoff; keep going.
                if t >= CUTOFF_MAX {
                    return Err(Error::Numeric(format!(
                        "summand not certifiably decreasing within budget (c = {c}, lp = {lp}, eta = {eta})"
                    )));
                }
            }
        }
        cutoff = (cutoff * 2).min(CUTOFF_MAX).max(t + 1);
    }
}

/// Enclosure of the tail strictly beyond `t`, or `None` if monotonicity of the
/// summand cannot yet be certified at this cutoff.
fn tail_bracket(c: f64, lp: f64, eta: f64, t: u64) -> Result<Option<Bracket>> {
    // All bounds below need the un-tilted factor h(s) = (ln(e+s))^lp s^-c to
    // be decreasing beyond t (which also makes the tilted summand decrease).
    if !summand_decreasing(c, lp, 0.0, t as f64) {
        return Ok(None);
    }
    if eta == 0.0 {
        // Integral sandwich for a decreasing summand:
        // int_{t+1}^inf h <= tail <= int_t^inf h.
        let hi = log_power_tail_integral(c, lp, t as f64)?.hi();
        let lo = log_power_tail_integral(c, lp, (t + 1) as f64)?.lo().max(0.0);
        return Ok(Some(Bracket::new(lo.min(hi), hi)));
    }

    let t0 = t as f64;
    let t1 = (t + 1) as f64;
    // int_x^inf e^{-eta y} y^{-c} dy = eta^{c-1} Gamma(1-c, eta x), bracketed.
    let tilt_integral = |x: f64| -> Bracket {
        let (g, g_err) = upper_gamma(1.0 - c, eta * x);
        let pre = eta.powf(c - 1.0);
        Bracket::from_value_err(pre * g, pre * g_err + 4.0 * f64::EPSILON * (pre * g).abs())
    };

    if lp == 0.0 {
        // Pure tilted power: the integral sandwich applies verbatim and the
        // width is a single term, just as in the un-tilted case.
        let hi = tilt_integral(t0).hi();
        let lo = tilt_integral(t1).lo().max(0.0);
        return Ok(Some(Bracket::new(lo.min(hi), hi)));
    }

    // Log-corrected tilted tails: freeze the slowly varying factor on each
    // side.  Upper: the better of the geometric certificate and the integral
    // with the log factor frozen at its maximum over [t, inf).
    let log_at = |x: f64| (std::f64::consts::E + x).ln().powf(lp);
    let geom = term_value(c, lp, eta, t + 1) / (-eta).exp_m1().abs();
    let mut hi = geom;
    if lp < 0.0 {
        let bound = log_at(t0) * tilt_integral(t0).hi();
        if bound.is_finite() {
            hi = hi.min(bound);
        }
    }

    // Lower: for lp > 0 the log factor is minimized at the left end; for
    // lp < 0 freeze it at a far point X beyond which the tilt has killed
    // essentially all integral mass, paying the (ln X / ln t)^lp factor.
    let lo = if lp > 0.0 {
        log_at(t1) * tilt_integral(t1).lo()
    } else {
        let x_star = t1 + (40.0 / eta).min(1e18);
        let inner = (tilt_integral(t1).lo() - tilt_integral(x_star).hi()).max(0.0);
        log_at(x_star) * inner
    }
    .max(0.0);

    let hi = hi.max(lo);
    Ok(Some(Bracket::new(lo.min(hi), hi).slacken()))
}

/// Single summand value `(ln(e+s))^lp s^-c e^{-eta s}`.
fn term_value(c: f64, lp: f64, eta: f64, s: u64) -> f64 {
    let sf = s as f64;
    let mut v = sf.powf(-c);
    if lp != 0.0 {
        v *= (std::f64::consts::E + sf).ln().powf(lp);
    }
    if eta > 0.0 {
        v *= (-eta * sf).exp();
    }
    v
}

/// Certified sum over an explicit finite support: `sum_i w_i`, all finite.
pub fn finite_weight_sum(weights: impl IntoIterator<Item = f64>) -> Bracket {
    let mut acc = NeumaierSum::new();
    for w in weights {
        acc.add(w);
    }
    Bracket::from_value_err(acc.value(), acc.error_bound())
}
