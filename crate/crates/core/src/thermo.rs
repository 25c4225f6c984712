//! Thermodynamic classification and the renewal-count rate function.
//!
//! For a model `(p, v, f)` define the energy scale
//! `ell = limsup (1/s) ln e^{v(s)} p(s)` (0 for power-tailed families with
//! bounded potentials, -inf for finite supports) and the effective weight
//! `p_o(s) = e^{v(s) - ell s} p(s)`.  The classification splits into:
//!
//! * **Localized** — a unique tilt `zeta > ell` solves
//!   `sum_s e^{v(s) - zeta s} p(s) = 1` (always for finite supports; for
//!   power tails iff `sum p_o > 1`).  The asymptotic reward density is the
//!   tilted-mean ratio `rho = sum f p_zeta / sum s p_zeta`.
//! * **Critical** — `ell > -inf`, `sum p_o = 1`, and `sum s p_o < inf`;
//!   then `rho = sum f p_o / sum s p_o`.  When additionally `rho = r`
//!   (the reward's tail slope), convergence to `rho` is exponential rather
//!   than polynomial and the regime is flagged **ExceptionalCritical**.
//! * **Delocalized** — `ell > -inf` with `sum p_o < 1`, or `sum p_o = 1`
//!   with infinite mean; then `rho = r`.
//!
//! For standard models (constant potential `beta` on a power-tailed family)
//! the critical point is `beta_c = -ln sum_s p(s)` and the critical density is
//! `w_c = sum_s p(s) / sum_s s p(s)`.  The rate function of the renewal count
//! `N_t / t` is piecewise explicit: affine `w (beta_c - beta) - ell` on
//! `[0, w_c]`, a tilted form on `(w_c, 1)` driven by the solution `eta` of
//! `sum e^{-eta s} p / sum s e^{-eta s} p = w`, the boundary value
//! `-ln(e^beta p(1))` at `w = 1`, everything shifted by `zeta` (when
//! `beta > beta_c`) or `ell`.
//!
//! Every constant is computed as a certified bracket; regime decisions are
//! made against fixed tolerances on those brackets.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::series::{Bracket, SeriesSum};

/// Tolerance on `|sum p_o - 1|` for declaring criticality.
pub const CRITICALITY_TOL: f64 = 1e-9;
/// Tolerance on `|rho - r|` for the exceptional-critical flag.
pub const RHO_EQUALS_R_TOL: f64 = 1e-10;
/// Residual target for the zeta equation `|sum e^{v - zeta s} p - 1|`.
pub const ZETA_RESIDUAL_TOL: f64 = 1e-12;
/// Bisection iteration cap for the zeta and eta solvers.
const MAX_BISECTIONS: u32 = 200;
/// Largest tilt ever attempted (e^-745 underflows to zero).
const TILT_CAP: f64 = 745.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Localized,
    Critical,
    ExceptionalCritical,
    Delocalized,
}

impl Regime {
    pub fn is_critical(self) -> bool {
        matches!(self, Regime::Critical | Regime::ExceptionalCritical)
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Localized => "Localized",
            Regime::Critical => "Critical",
            Regime::ExceptionalCritical => "ExceptionalCritical",
            Regime::Delocalized => "Delocalized",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full thermodynamic classification of a model.
#[derive(Clone, Debug)]
pub struct Classification {
    /// Energy scale `ell` (0 or -inf in the supported families).
    pub ell: f64,
    /// Tilt solving the partition equation, when it exists (Localized).
    pub zeta: Option<Bracket>,
    /// Asymptotic reward density.
    pub rho: Bracket,
    /// Tail slope of the reward.
    pub r: f64,
    pub regime: Regime,
    /// Mean of the effective weight, `sum s p_o(s)`, when finite.
    pub mean_s: Option<Bracket>,
    /// Tail exponent of `p_o(s) = L(s) / s^(kappa+1)` for power families.
    pub kappa: Option<f64>,
    /// `L(s) = l_scale * (ln(e+s))^log_power`.
    pub log_power: Option<f64>,
    pub l_scale: Option<f64>,
    /// Critical point of the standard model on the same `p`.
    pub beta_c: Option<Bracket>,
    /// Critical renewal density `sum p / sum s p`, when the mean is finite.
    pub w_c: Option<Bracket>,
    /// `sum p_o`, when `ell > -inf`.
    pub sum_po: Option<Bracket>,
}

/// Classify a model: regime, `zeta`, `rho`, and the standard-model constants.
pub fn classify(model: &ModelSpec) -> Result<Classification> {
    let ell = model.energy_scale();
    let r = model.tail_slope();

    // Standard-model constants attached to the bare waiting distribution.
    let (beta_c, w_c) = if ell.is_finite() {
        let beta_c = model.beta_c_base().expect("power family has beta_c");
        let w_c = match model.bare_weight_sum(0.0, 1)? {
            SeriesSum::Finite(mean) => Some(model.normalization().div(mean)?),
            SeriesSum::Divergent => None,
        };
        (Some(beta_c), w_c)
    } else {
        (None, None)
    };

    // Family constants of p_o for power tails with (eventually) constant
    // potential: p_o(s) = e^beta * scale * (ln(e+s))^log_power / s^(kappa+1).
    let family = model.power_part().map(|t| {
        (
            t.kappa,
            t.log_power,
            t.scale * model.potential().beta.exp(),
        )
    });

    if ell == f64::NEG_INFINITY {
        // Finite support: the partition equation always has a root.
        let zeta = solve_zeta(model)?;
        let (rho, _) = tilted_rho(model, zeta.mid())?;
        return Ok(Classification {
            ell,
            zeta: Some(zeta),
            rho,
            r,
            regime: Regime::Localized,
            mean_s: None,
            kappa: None,
            log_power: None,
            l_scale: None,
            beta_c,
            w_c,
            sum_po: None,
        });
    }

    // ell = 0: examine sum p_o = sum e^{v} p.
    let sum_po = model
        .tilted_weight_sum(0.0, 0)?
        .finite()
        .ok_or_else(|| Error::Numeric("sum of effective weights diverged".into()))?;
    let mean_po = model.tilted_weight_sum(0.0, 1)?.finite();

    if sum_po.mid() > 1.0 + CRITICALITY_TOL {
        let zeta = solve_zeta(model)?;
        let (rho, tilted_mean) = tilted_rho(model, zeta.mid())?;
        debug_assert!(tilted_mean.lo() > 0.0, "tilted mean must be positive");
        return Ok(Classification {
            ell,
            zeta: Some(zeta),
            rho,
            r,
            regime: Regime::Localized,
            mean_s: mean_po,
            kappa: family.map(|f| f.0),
            log_power: family.map(|f| f.1),
            l_scale: family.map(|f| f.2),
            beta_c,
            w_c,
            sum_po: Some(sum_po),
        });
    }

    let is_one = (sum_po.mid() - 1.0).abs() <= CRITICALITY_TOL;
    if is_one {
        if let Some(mean) = mean_po {
            // Critical: rho is the p_o-moment ratio.
            let num = model
                .tilted_reward_sum(0.0)?
                .finite()
                .ok_or_else(|| Error::Numeric("effective reward moment diverged".into()))?;
            let rho = num.div(mean)?;
            let regime = if (rho.mid() - r).abs() <= RHO_EQUALS_R_TOL {
                Regime::ExceptionalCritical
            } else {
                Regime::Critical
            };
            debug_assert!(
                family.is_none_or(|f| f.0 >= 1.0 - 1e-12),
                "a critical power family forces kappa >= 1"
            );
            debug_assert!(mean.hi() > 1.0 - 1e-12, "critical mean must be >= 1");
            return Ok(Classification {
                ell,
                zeta: None,
                rho,
                r,
                regime,
                mean_s: Some(mean),
                kappa: family.map(|f| f.0),
                log_power: family.map(|f| f.1),
                l_scale: family.map(|f| f.2),
                beta_c,
                w_c,
                sum_po: Some(sum_po),
            });
        }
        // Unit mass but infinite mean: not critical by definition.
    }

    Ok(Classification {
        ell,
        zeta: None,
        rho: Bracket::exact(r),
        r,
        regime: Regime::Delocalized,
        mean_s: mean_po,
        kappa: family.map(|f| f.0),
        log_power: family.map(|f| f.1),
        l_scale: family.map(|f| f.2),
        beta_c,
        w_c,
        sum_po: Some(sum_po),
    })
}

/// Reward-density ratio under the tilt `theta`, plus the tilted mean.
fn tilted_rho(model: &ModelSpec, theta: f64) -> Result<(Bracket, Bracket)> {
    let num = model
        .tilted_reward_sum(theta)?
        .finite()
        .ok_or_else(|| Error::Numeric("tilted reward moment diverged".into()))?;
    let mean = model
        .tilted_weight_sum(theta, 1)?
        .finite()
        .ok_or_else(|| Error::Numeric("tilted mean diverged".into()))?;
    Ok((num.div(mean)?, mean))
}

/// Solve the partition equation `sum_s e^{v(s) - zeta s} p(s) = 1` for the
/// unique root above the energy scale.
///
/// Precondition: `ell = -inf`, or `ell = 0` with `sum p_o > 1`; otherwise a
/// regime error is returned.  Plain bisection; the residual at the returned
/// midpoint is at most `ZETA_RESIDUAL_TOL`.
pub fn solve_zeta(model: &ModelSpec) -> Result<Bracket> {
    let ell = model.energy_scale();
    // Iteration values: certified but loose (cheap); the accepted root gets a
    // final certified residual check at full tolerance.
    let partition = |theta: f64| -> Result<f64> {
        match model.tilted_weight_sum_tol(theta, 0, 1e-11)? {
            SeriesSum::Finite(b) => Ok(b.mid()),
            SeriesSum::Divergent => Ok(f64::INFINITY),
        }
    };
    let certified_residual = |theta: f64| -> Result<f64> {
        match model.tilted_weight_sum(theta, 0)? {
            SeriesSum::Finite(b) => Ok(b.mid() - 1.0),
            SeriesSum::Divergent => Ok(f64::INFINITY),
        }
    };

    let mut lo;
    let mut hi;
    if ell.is_finite() {
        let at_zero = partition(0.0)?;
        if at_zero <= 1.0 + CRITICALITY_TOL {
            let regime = if (at_zero - 1.0).abs() <= CRITICALITY_TOL {
                "Critical"
            } else {
                "Delocalized"
            };
            return Err(Error::regime(
                regime,
                "the partition equation has no root above the energy scale",
            ));
        }
        lo = 0.0;
        hi = 1.0;
    } else {
        // Finite support: walk an initial sign change in both directions.
        lo = 0.0;
        while partition(lo)? < 1.0 {
            lo = if lo == 0.0 { -1.0 } else { lo * 2.0 };
            if lo < -TILT_CAP {
                return Err(Error::Numeric(
                    "no lower bracket endpoint for the partition equation".into(),
                ));
            }
        }
        hi = lo.max(0.0) + 1.0;
    }
    while partition(hi)? > 1.0 {
        hi *= 2.0;
        if hi > TILT_CAP {
            return Err(Error::Numeric(
                "no upper bracket endpoint for the partition equation".into(),
            ));
        }
    }

    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if hi - lo < f64::EPSILON * (1.0 + mid.abs()) {
            break;
        }
        if partition(mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if certified_residual(mid)?.abs() <= ZETA_RESIDUAL_TOL {
        return Ok(Bracket::new(lo, hi).slacken());
    }
    Err(Error::Numeric(
        "partition-equation bisection failed to reach its residual target".into(),
    ))
}

/// Critical point `beta_c = -ln sum_s p(s)` of the standard model.
///
/// Requires a power-tailed family (finite energy scale) with a finite bare
/// mean `sum s p(s)`; the latter is what makes criticality attainable.
pub fn beta_critical(model: &ModelSpec) -> Result<Bracket> {
    let Some(beta_c) = model.beta_c_base() else {
        return Err(Error::regime(
            "Localized",
            "the critical point is defined only for power-tailed waiting families",
        ));
    };
    if model.bare_weight_sum(0.0, 1)?.is_divergent() {
        let regime = classify(model)?.regime;
        return Err(Error::regime(
            regime.name(),
            "criticality is unattainable: the bare waiting-time mean diverges",
        ));
    }
    Ok(beta_c)
}

// ---------------------------------------------------------------------------
// Conditioned (effective) distribution
// ---------------------------------------------------------------------------

/// A probability-normalized waiting-time law `p_theta(s) = e^{v(s) - theta s} p(s)`
/// under which the constrained model becomes an ordinary renewal process.
///
/// `theta = 0` for critical models (where `p_o` itself is a probability) and
/// `theta = zeta` for localized ones.  Delocalized models admit no such law.
#[derive(Clone, Debug)]
pub struct EffectiveDist {
    model: ModelSpec,
    theta: f64,
    /// Certified total mass (within solver tolerance of 1).
    total: Bracket,
    /// Certified mean, when finite.
    mean: Option<Bracket>,
}

impl EffectiveDist {
    pub fn eval(&self, s: u64) -> f64 {
        (self.model.eval_v(s) - self.theta * s as f64).exp() * self.model.eval_p(s)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn total(&self) -> Bracket {
        self.total
    }

    pub fn mean(&self) -> Option<Bracket> {
        self.mean
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Materialized pmf on `0..=t_max` (index = waiting time; index 0 unused).
    pub fn pmf(&self, t_max: u64) -> Vec<f64> {
        let mut p = vec![0.0; t_max as usize + 1];
        for s in 1..=t_max {
            p[s as usize] = self.eval(s);
        }
        p
    }

    /// Certified tail probability `Q(x) = sum_{s > x} p_theta(s)`.
    pub fn tail_q(&self, x: f64) -> Result<Bracket> {
        if x <= 0.0 {
            return Err(Error::Domain(format!(
                "tail probability needs x > 0, got {x}"
            )));
        }
        let from = x.floor() as u64 + 1;
        let head: Bracket = crate::series::finite_weight_sum(
            self.model
                .head_atoms()
                .iter()
                .filter(|&&(s, _)| s >= from)
                .map(|&(s, _)| self.eval(s)),
        );
        let Some(t) = self.model.power_part() else {
            return Ok(head);
        };
        let start = from.max(t.from);
        // Tail of the power part under potential + tilt, with corrections at
        // potential-table sites (handled exactly like the full sums).
        let beta = self.model.potential().beta;
        let c = t.kappa + 1.0;
        let base = crate::series::tail_weight_sum(c, t.log_power, self.theta, start)?
            .finite()
            .expect("tilted power tail converges")
            .scale(t.scale * beta.exp());
        let corr = crate::series::finite_weight_sum(
            self.model
                .potential()
                .table
                .iter()
                .filter(|&&(s, _)| s >= start)
                .map(|&(s, _)| {
                    let p = t.eval(s);
                    let actual = (self.model.eval_v(s) - self.theta * s as f64).exp();
                    let default = (beta - self.theta * s as f64).exp();
                    p * (actual - default)
                }),
        );
        Ok(head.add(base).add(corr))
    }
}

/// Build the conditioned distribution for a classified model.
///
/// Errors with a regime error for delocalized models, where the constrained
/// process has no probability-normalized effective law.
pub fn conditioned_distribution(
    model: &ModelSpec,
    cls: &Classification,
) -> Result<EffectiveDist> {
    let theta = match cls.regime {
        Regime::Critical | Regime::ExceptionalCritical => 0.0,
        Regime::Localized => cls.zeta.expect("localized implies zeta").mid(),
        Regime::Delocalized => {
            return Err(Error::regime(
                "Delocalized",
                "the effective weights form a strict sub-probability; exact and sampling engines are undefined",
            ));
        }
    };
    let total = model
        .tilted_weight_sum(theta, 0)?
        .finite()
        .ok_or_else(|| Error::Numeric("conditioned mass diverged".into()))?;
    debug_assert!(
        (total.mid() - 1.0).abs() <= 1e-9,
        "conditioned law should be a probability, got mass {}",
        total.mid()
    );
    let mean = model.tilted_weight_sum(theta, 1)?.finite();
    Ok(EffectiveDist {
        model: model.clone(),
        theta,
        total,
        mean,
    })
}

/// Projected reward `g(s) = (f(s) - r s) / (rho - r)` (scalar case), with
/// `g(s) = 0` off the support.
///
/// The half-space event `W_t / t <= alpha * (rho - r) + r...` reduces to
/// `sum_i g(S_i) <= alpha t`; the projection is undefined when `rho = r`.
#[derive(Clone, Debug)]
pub struct ProjectedReward {
    model: ModelSpec,
    rho: f64,
    r: f64,
}

impl ProjectedReward {
    pub fn new(model: &ModelSpec, cls: &Classification) -> Result<Self> {
        let rho = cls.rho.mid();
        let r = cls.r;
        if (rho - r).abs() <= RHO_EQUALS_R_TOL {
            return Err(Error::regime(
                cls.regime.name(),
                "rho = r leaves no transverse direction; the half-space projection is undefined",
            ));
        }
        Ok(Self {
            model: model.clone(),
            rho,
            r,
        })
    }

    pub fn eval_g(&self, s: u64) -> f64 {
        assert!(s >= 1);
        if !self.model.support_contains(s) {
            return 0.0;
        }
        (self.model.eval_f(s) - self.r * s as f64) / (self.rho - self.r)
    }
}

// ---------------------------------------------------------------------------
// Rate function of the renewal count
// ---------------------------------------------------------------------------

/// Rate function `I(w)` of `N_t / t` for a standard model (constant potential
/// `beta` on a power-tailed family with finite bare mean).
#[derive(Clone, Debug)]
pub struct RateFunctionNt {
    model: ModelSpec,
    pub beta: f64,
    pub beta_c: Bracket,
    pub ell: f64,
    pub w_c: Bracket,
    pub zeta: Option<Bracket>,
}

impl RateFunctionNt {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        if !model.potential().table.is_empty() {
            return Err(Error::Domain(
                "the renewal-count rate function requires a constant potential".into(),
            ));
        }
        let ell = model.energy_scale();
        if !ell.is_finite() {
            return Err(Error::Domain(
                "the renewal-count rate function requires a power-tailed waiting family".into(),
            ));
        }
        let beta_c = beta_critical(model)?;
        let mean = model
            .bare_weight_sum(0.0, 1)?
            .finite()
            .expect("beta_critical verified the bare mean");
        let w_c = model.normalization().div(mean)?;
        let beta = model.potential().beta;
        let zeta = if beta > beta_c.mid() {
            Some(solve_zeta(model)?)
        } else {
            None
        };
        Ok(Self {
            model: model.clone(),
            beta,
            beta_c,
            ell,
            w_c,
            zeta,
        })
    }

    /// Additive normalization: `zeta` above the critical point, `ell` below.
    fn shift(&self) -> Bracket {
        match &self.zeta {
            Some(z) => *z,
            None => Bracket::exact(self.ell),
        }
    }

    /// Bare-moment ratio `sum e^{-eta s} p / sum s e^{-eta s} p`, which climbs
    /// from `w_c` at `eta = 0` towards `1 / min-support`.  Solver-grade
    /// tolerance: the eta-error feeds the rate value only at second order.
    fn ratio(&self, eta: f64) -> Result<f64> {
        let m0 = self
            .model
            .bare_weight_sum_tol(eta, 0, 1e-11)?
            .finite()
            .ok_or_else(|| Error::Numeric("tilted mass diverged".into()))?;
        let m1 = self
            .model
            .bare_weight_sum_tol(eta, 1, 1e-11)?
            .finite()
            .ok_or_else(|| Error::Numeric("tilted mean diverged".into()))?;
        Ok(m0.mid() / m1.mid())
    }

    /// Solve `ratio(eta) = w` for `w` in `(w_c, 1)`.
    fn solve_eta(&self, w: f64) -> Result<f64> {
        let mut lo = 0.0f64; // ratio(0) = w_c < w
        let mut hi = 0.5f64;
        while self.ratio(hi)? < w {
            lo = hi;
            hi *= 2.0;
            if hi > TILT_CAP {
                return Err(Error::Numeric(format!(
                    "no tilt reaches renewal density w = {w}; the support floor caps the ratio"
                )));
            }
        }
        // The uniqueness of the root rests on monotonicity of the ratio,
        // which is verified on the bracket rather than assumed.  The slack
        // absorbs the solver-grade evaluation noise; a genuine monotonicity
        // failure would be orders of magnitude larger.
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=64 {
            let eta = lo + (hi - lo) * k as f64 / 64.0;
            let rk = self.ratio(eta.max(0.0))?;
            if rk < prev - 1e-9 {
                return Err(Error::Numeric(format!(
                    "tilted-moment ratio is not monotone on [{lo}, {hi}] near eta = {eta}"
                )));
            }
            prev = rk;
        }
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let rmid = self.ratio(mid)?;
            if (rmid - w).abs() <= 1e-13 || hi - lo < 1e-15 * (1.0 + mid) {
                return Ok(mid);
            }
            if rmid < w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Evaluate `I(w)`; `+inf` outside `[0, 1]` and at unreachable densities.
    pub fn eval(&self, w: f64) -> Result<Bracket> {
        if !(0.0..=1.0).contains(&w) {
            return Ok(Bracket::exact(f64::INFINITY));
        }
        let shift = self.shift();
        if w == 1.0 {
            let p1 = self.model.eval_p(1);
            if p1 == 0.0 {
                return Ok(Bracket::exact(f64::INFINITY));
            }
            let v = -(self.beta + p1.ln());
            return Ok(Bracket::exact(v).add(shift).sub(Bracket::exact(self.ell)));
        }
        if w <= self.w_c.mid() {
            // Affine stretch: w (beta_c - beta) - ell + shift.
            let affine = self
                .beta_c
                .sub(Bracket::exact(self.beta))
                .scale(w)
                .sub(Bracket::exact(self.ell));
            return Ok(affine.add(shift));
        }
        let eta = self.solve_eta(w)?;
        // I(w) = -w ln(sum e^{beta - eta s} p) - eta + shift; the eta-error is
        // second-order by stationarity of the tilted form at the solution.
        let m0 = self
            .model
            .bare_weight_sum(eta, 0)?
            .finite()
            .ok_or_else(|| Error::Numeric("tilted mass diverged".into()))?;
        let log_term = m0.ln()?.add(Bracket::exact(self.beta));
        let v = log_term.scale(-w).sub(Bracket::exact(eta));
        Ok(v.add(shift))
    }
}
