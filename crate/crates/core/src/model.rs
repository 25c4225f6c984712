//! Model definition: waiting-time distribution `p`, pinning potential `v`,
//! and reward function `f`.
//!
//! A model is loaded from a JSON document with top-level keys `waiting`,
//! `potential`, `reward`:
//!
//! ```json
//! {
//!   "waiting":   {"family": "power", "kappa": 2.0, "log_power": 0.0, "scale": 1.0},
//!   "potential": {"kind": "constant", "beta": -0.18393},
//!   "reward":    {"kind": "count"}
//! }
//! ```
//!
//! Waiting-time families:
//!
//! * `power` — `p(s) = scale * (ln(e+s))^log_power / s^(kappa+1)` on `s >= 1`;
//! * `finite` — explicit atoms `"mass": [[s, p], ...]` on a finite support;
//! * `hybrid` — explicit `head` atoms below a threshold, `power` tail from it.
//!
//! Potentials are `constant` (`v(s) = beta` everywhere) or `table` (explicit
//! values on finitely many sites, a constant elsewhere).  For power-tailed
//! families with a constant potential, `"beta"` may also be the string
//! `"critical"` or an object `{"critical_offset": x}`: the critical value
//! `beta_c = -ln sum_s p(s)` is then resolved at load time from a certified
//! summation, optionally shifted by `x`.
//!
//! Rewards are `count` (`f = 1`), `identity` (`f(s) = s`), or `table`
//! (explicit values on finitely many sites, affine `slope * s + intercept`
//! beyond).  The tail slope `r = lim f(s)/s` is `0`, `1`, or `slope`.

use crate::error::{Error, Result};
use crate::series::{self, Bracket, SeriesSum};
use serde::Deserialize;

// ---------------------------------------------------------------------------
// JSON wire format
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct ModelJson {
    waiting: WaitingJson,
    potential: PotentialJson,
    reward: RewardJson,
}

#[derive(Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum WaitingJson {
    Power {
        kappa: f64,
        #[serde(default)]
        log_power: f64,
        #[serde(default = "default_one")]
        scale: f64,
    },
    Finite {
        mass: Vec<(u64, f64)>,
    },
    Hybrid {
        #[serde(default)]
        head: Vec<(u64, f64)>,
        tail: TailJson,
    },
}

#[derive(Deserialize)]
struct TailJson {
    kappa: f64,
    #[serde(default)]
    log_power: f64,
    #[serde(default = "default_one")]
    scale: f64,
    from: u64,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PotentialJson {
    Constant {
        beta: BetaJson,
    },
    Table {
        values: Vec<(u64, f64)>,
        otherwise: BetaJson,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BetaJson {
    Value(f64),
    Keyword(String),
    Offset { critical_offset: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RewardJson {
    Count,
    Identity,
    Table {
        values: Vec<(u64, f64)>,
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
}

fn default_one() -> f64 {
    1.0
}

// ---------------------------------------------------------------------------
// Validated model
// ---------------------------------------------------------------------------

/// Power-law part of a waiting-time distribution:
/// `p(s) = scale * (ln(e+s))^log_power / s^(kappa+1)` for `s >= from`.
#[derive(Clone, Copy, Debug)]
pub struct PowerPart {
    pub kappa: f64,
    pub log_power: f64,
    pub scale: f64,
    pub from: u64,
}

impl PowerPart {
    /// Pointwise density (valid for any `s >= 1`; callers gate on `from`).
    pub fn eval(&self, s: u64) -> f64 {
        let sf = s as f64;
        let mut v = self.scale * sf.powf(-(self.kappa + 1.0));
        if self.log_power != 0.0 {
            v *= (std::f64::consts::E + sf).ln().powf(self.log_power);
        }
        v
    }
}

/// How the constant part of the potential was specified.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaSource {
    Literal,
    Critical,
    CriticalOffset(f64),
}

#[derive(Clone, Debug)]
pub struct Potential {
    /// Resolved constant part of the potential.
    pub beta: f64,
    /// Explicit overrides `(s, v(s))`, sorted by `s`; empty for `constant`.
    pub table: Vec<(u64, f64)>,
    pub beta_source: BetaSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardKind {
    Count,
    Identity,
    Table,
}

#[derive(Clone, Debug)]
pub struct Reward {
    pub kind: RewardKind,
    /// Explicit overrides `(s, f(s))`, sorted by `s`; empty unless `Table`.
    pub table: Vec<(u64, f64)>,
    /// Affine tail: `f(s) = slope * s + intercept` off the table.
    pub slope: f64,
    pub intercept: f64,
}

/// A validated model: waiting-time distribution, potential, reward.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    /// Explicit atoms `(s, p(s))`, sorted; the whole support if `tail` is
    /// `None`, otherwise the sites below `tail.from`.
    head: Vec<(u64, f64)>,
    tail: Option<PowerPart>,
    potential: Potential,
    reward: Reward,
    /// Certified `sum_s p(s)`.
    normalization: Bracket,
    /// Certified `-ln sum_s p(s)`, defined for power-tailed families (where
    /// the energy scale is 0); this is the critical point of the standard
    /// (constant-potential) model built on the same `p`.
    beta_c_base: Option<Bracket>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ModelJson =
            serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        Self::build(raw)
    }

    fn build(raw: ModelJson) -> Result<Self> {
        let (head, tail) = match raw.waiting {
            WaitingJson::Power {
                kappa,
                log_power,
                scale,
            } => (
                Vec::new(),
                Some(PowerPart {
                    kappa,
                    log_power,
                    scale,
                    from: 1,
                }),
            ),
            WaitingJson::Finite { mass } => (mass, None),
            WaitingJson::Hybrid { head, tail } => (
                head,
                Some(PowerPart {
                    kappa: tail.kappa,
                    log_power: tail.log_power,
                    scale: tail.scale,
                    from: tail.from,
                }),
            ),
        };

        let mut head = head;
        head.sort_by_key(|&(s, _)| s);
        for w in head.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Model(format!(
                    "duplicate waiting-time atom at s = {}",
                    w[0].0
                )));
            }
        }
        for &(s, p) in &head {
            if s < 1 {
                return Err(Error::Model("waiting-time atoms need s >= 1".into()));
            }
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::Model(format!(
                    "waiting-time mass at s = {s} must be finite and positive, got {p}"
                )));
            }
        }
        if let Some(t) = &tail {
            if t.from < 1 {
                return Err(Error::Model("power tail must start at s >= 1".into()));
            }
            if !(t.kappa > 0.0) || !t.kappa.is_finite() {
                return Err(Error::Model(format!(
                    "power tail needs finite kappa > 0, got {}",
                    t.kappa
                )));
            }
            if !(t.scale > 0.0) || !t.scale.is_finite() {
                return Err(Error::Model(format!(
                    "power tail needs finite scale > 0, got {}",
                    t.scale
                )));
            }
            if !t.log_power.is_finite() {
                return Err(Error::Model("power tail log_power must be finite".into()));
            }
            if head.last().is_some_and(|&(s, _)| s >= t.from) {
                return Err(Error::Model(
                    "hybrid head atoms must all lie below the tail start".into(),
                ));
            }
        } else {
            if head.is_empty() {
                return Err(Error::Model("finite support must be nonempty".into()));
            }
            // Aperiodicity: gcd of the support must be 1.  Power tails contain
            // consecutive integers, so only finite supports can fail this.
            let g = head.iter().fold(0u64, |g, &(s, _)| gcd(g, s));
            if g != 1 {
                return Err(Error::Model(format!(
                    "waiting-time support has period {g}; an aperiodic distribution is required"
                )));
            }
        }

        // Certified normalization sum_s p(s).
        let head_sum = series::finite_weight_sum(head.iter().map(|&(_, p)| p));
        let normalization = match &tail {
            None => head_sum,
            Some(t) => {
                let tail_sum = series::tail_weight_sum(t.kappa + 1.0, t.log_power, 0.0, t.from)?
                    .finite()
                    .expect("kappa > 0 makes the normalization sum converge");
                head_sum.add(tail_sum.scale(t.scale))
            }
        };
        if !normalization.hi().is_finite() {
            return Err(Error::Model("waiting-time normalization overflows".into()));
        }
        if tail.is_none() && normalization.lo() > 1.0 + 1e-12 {
            return Err(Error::Model(format!(
                "finite-support masses sum to {:.12}, exceeding 1",
                normalization.mid()
            )));
        }

        let beta_c_base = if tail.is_some() {
            Some(normalization.ln()?.neg())
        } else {
            None
        };

        // Resolve the potential, including symbolic critical betas.
        let resolve = |b: BetaJson, what: &str| -> Result<(f64, BetaSource)> {
            match b {
                BetaJson::Value(v) => {
                    if !v.is_finite() {
                        return Err(Error::Model(format!("{what} must be finite, got {v}")));
                    }
                    Ok((v, BetaSource::Literal))
                }
                BetaJson::Keyword(k) if k == "critical" => {
                    let bc = beta_c_base.ok_or_else(|| {
                        Error::Model(
                            "symbolic critical beta requires a power-tailed waiting family".into(),
                        )
                    })?;
                    Ok((bc.mid(), BetaSource::Critical))
                }
                BetaJson::Keyword(k) => Err(Error::Model(format!(
                    "unknown beta keyword {k:?}; expected a number, \"critical\", or {{\"critical_offset\": x}}"
                ))),
                BetaJson::Offset { critical_offset } => {
                    if !critical_offset.is_finite() {
                        return Err(Error::Model("critical_offset must be finite".into()));
                    }
                    let bc = beta_c_base.ok_or_else(|| {
                        Error::Model(
                            "symbolic critical beta requires a power-tailed waiting family".into(),
                        )
                    })?;
                    Ok((
                        bc.mid() + critical_offset,
                        BetaSource::CriticalOffset(critical_offset),
                    ))
                }
            }
        };

        let potential = match raw.potential {
            PotentialJson::Constant { beta } => {
                let (beta, beta_source) = resolve(beta, "beta")?;
                Potential {
                    beta,
                    table: Vec::new(),
                    beta_source,
                }
            }
            PotentialJson::Table { values, otherwise } => {
                let (beta, beta_source) = resolve(otherwise, "potential \"otherwise\"")?;
                let mut table = values;
                table.sort_by_key(|&(s, _)| s);
                for w in table.windows(2) {
                    if w[0].0 == w[1].0 {
                        return Err(Error::Model(format!(
                            "duplicate potential entry at s = {}",
                            w[0].0
                        )));
                    }
                }
                for &(s, v) in &table {
                    if s < 1 || !v.is_finite() {
                        return Err(Error::Model(format!(
                            "potential table entry (s = {s}, v = {v}) invalid"
                        )));
                    }
                }
                Potential {
                    beta,
                    table,
                    beta_source,
                }
            }
        };

        let reward = match raw.reward {
            RewardJson::Count => Reward {
                kind: RewardKind::Count,
                table: Vec::new(),
                slope: 0.0,
                intercept: 1.0,
            },
            RewardJson::Identity => Reward {
                kind: RewardKind::Identity,
                table: Vec::new(),
                slope: 1.0,
                intercept: 0.0,
            },
            RewardJson::Table {
                values,
                slope,
                intercept,
            } => {
                if !slope.is_finite() || !intercept.is_finite() {
                    return Err(Error::Model("reward slope/intercept must be finite".into()));
                }
                let mut table = values;
                table.sort_by_key(|&(s, _)| s);
                for w in table.windows(2) {
                    if w[0].0 == w[1].0 {
                        return Err(Error::Model(format!(
                            "duplicate reward entry at s = {}",
                            w[0].0
                        )));
                    }
                }
                for &(s, f) in &table {
                    if s < 1 || !f.is_finite() {
                        return Err(Error::Model(format!(
                            "reward table entry (s = {s}, f = {f}) invalid"
                        )));
                    }
                }
                Reward {
                    kind: RewardKind::Table,
                    table,
                    slope,
                    intercept,
                }
            }
        };

        Ok(ModelSpec {
            head,
            tail,
            potential,
            reward,
            normalization,
            beta_c_base,
        })
    }

    // -- pointwise evaluation ------------------------------------------------

    /// Waiting-time mass `p(s)`; 0 off-support.
    pub fn eval_p(&self, s: u64) -> f64 {
        assert!(s >= 1, "waiting times are positive integers");
        if let Some(t) = &self.tail {
            if s >= t.from {
                return t.eval(s);
            }
        }
        match self.head.binary_search_by_key(&s, |&(x, _)| x) {
            Ok(i) => self.head[i].1,
            Err(_) => 0.0,
        }
    }

    /// Potential `v(s)`.
    pub fn eval_v(&self, s: u64) -> f64 {
        match self
            .potential
            .table
            .binary_search_by_key(&s, |&(x, _)| x)
        {
            Ok(i) => self.potential.table[i].1,
            Err(_) => self.potential.beta,
        }
    }

    /// Reward `f(s)`.
    pub fn eval_f(&self, s: u64) -> f64 {
        match self.reward.table.binary_search_by_key(&s, |&(x, _)| x) {
            Ok(i) => self.reward.table[i].1,
            Err(_) => self.reward.slope * s as f64 + self.reward.intercept,
        }
    }

    /// Tail slope `r = lim f(s)/s` along the support.
    pub fn tail_slope(&self) -> f64 {
        self.reward.slope
    }

    /// Energy scale: `limsup (1/s) ln e^{v(s)} p(s)`, determined analytically
    /// per family.  Power-tailed families with bounded potentials give 0;
    /// finite supports give negative infinity.
    pub fn energy_scale(&self) -> f64 {
        if self.tail.is_some() {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    // -- structural accessors ------------------------------------------------

    /// Explicit atoms below the power tail (the whole support when finite).
    pub fn head_atoms(&self) -> &[(u64, f64)] {
        &self.head
    }

    pub fn power_part(&self) -> Option<&PowerPart> {
        self.tail.as_ref()
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn reward(&self) -> &Reward {
        &self.reward
    }

    /// Certified `sum_s p(s)`.
    pub fn normalization(&self) -> Bracket {
        self.normalization
    }

    /// Certified critical point `beta_c = -ln sum_s p(s)` of the standard
    /// model on the same waiting-time distribution (power-tailed families).
    pub fn beta_c_base(&self) -> Option<Bracket> {
        self.beta_c_base
    }

    /// Largest support point, when the support is finite.
    pub fn max_support(&self) -> Option<u64> {
        if self.tail.is_some() {
            None
        } else {
            self.head.last().map(|&(s, _)| s)
        }
    }

    /// Is `s` in the support of `p`?
    pub fn support_contains(&self, s: u64) -> bool {
        if s < 1 {
            return false;
        }
        if let Some(t) = &self.tail {
            if s >= t.from {
                return true;
            }
        }
        self.head.binary_search_by_key(&s, |&(x, _)| x).is_ok()
    }

    /// Sorted union of all sites where the potential or reward deviates from
    /// its constant/affine default.
    pub fn special_sites(&self) -> Vec<u64> {
        let mut sites: Vec<u64> = self
            .potential
            .table
            .iter()
            .chain(self.reward.table.iter())
            .map(|&(s, _)| s)
            .collect();
        sites.sort_unstable();
        sites.dedup();
        sites
    }

    /// Certified tilted weight sum `sum_s e^{v(s) - theta s} p(s) * s^power`
    /// for `power` in {0, 1, 2}.
    ///
    /// This is the workhorse behind normalization, criticality, and tilt
    /// solving.  `theta` must be nonnegative for power-tailed families (the
    /// sum diverges below the energy scale); finite supports accept any tilt.
    pub fn tilted_weight_sum(&self, theta: f64, power: u32) -> Result<SeriesSum> {
        self.weight_sum_impl(theta, power, true, series::SERIES_REL_TOL)
    }

    /// Certified bare moment `sum_s e^{-theta s} p(s) * s^power` (no
    /// potential factor); this is what the standard-model constants
    /// `beta_c` and `w_c` and the rate-function tilt equation are built on.
    pub fn bare_weight_sum(&self, theta: f64, power: u32) -> Result<SeriesSum> {
        self.weight_sum_impl(theta, power, false, series::SERIES_REL_TOL)
    }

    /// Loose-tolerance variants for solver inner loops: still certified, just
    /// allowed wider brackets so each bisection step stays cheap.
    pub(crate) fn tilted_weight_sum_tol(
        &self,
        theta: f64,
        power: u32,
        rel_tol: f64,
    ) -> Result<SeriesSum> {
        self.weight_sum_impl(theta, power, true, rel_tol)
    }

    pub(crate) fn bare_weight_sum_tol(
        &self,
        theta: f64,
        power: u32,
        rel_tol: f64,
    ) -> Result<SeriesSum> {
        self.weight_sum_impl(theta, power, false, rel_tol)
    }

    fn weight_sum_impl(
        &self,
        theta: f64,
        power: u32,
        with_potential: bool,
        rel_tol: f64,
    ) -> Result<SeriesSum> {
        assert!(power <= 2, "only moments of order <= 2 are supported");
        if self.tail.is_some() && theta < 0.0 {
            return Ok(SeriesSum::Divergent);
        }
        let beta = if with_potential {
            self.potential.beta
        } else {
            0.0
        };
        let wt = |s: u64| -> f64 {
            let v = if with_potential { self.eval_v(s) } else { 0.0 };
            (v - theta * s as f64).exp() * (s as f64).powi(power as i32)
        };

        // Explicit head atoms.
        let head_part =
            series::finite_weight_sum(self.head.iter().map(|&(s, p)| p * wt(s)));
        let Some(t) = &self.tail else {
            return Ok(SeriesSum::Finite(head_part));
        };

        // Power tail under the constant potential...
        let c = t.kappa + 1.0 - power as f64;
        let base = match series::tail_weight_sum_with_tol(c, t.log_power, theta, t.from, rel_tol)? {
            SeriesSum::Finite(b) => b.scale(t.scale * beta.exp()),
            SeriesSum::Divergent => return Ok(SeriesSum::Divergent),
        };
        // ...plus corrections at the finitely many potential-table sites that
        // sit inside the tail region.
        let corr = if with_potential {
            series::finite_weight_sum(self.potential.table.iter().filter_map(|&(s, _)| {
                if s >= t.from {
                    let p = t.eval(s);
                    let default =
                        (beta - theta * s as f64).exp() * (s as f64).powi(power as i32);
                    Some(p * (wt(s) - default))
                } else {
                    None
                }
            }))
        } else {
            Bracket::exact(0.0)
        };
        Ok(SeriesSum::Finite(head_part.add(base).add(corr)))
    }

    /// Like `tilted_weight_sum`, but with the reward as the weight:
    /// `sum_s e^{v(s) - theta s} p(s) f(s)`.
    pub fn tilted_reward_sum(&self, theta: f64) -> Result<SeriesSum> {
        if self.tail.is_some() && theta < 0.0 {
            return Ok(SeriesSum::Divergent);
        }
        // f(s) = slope * s + intercept off the reward table, so the sum is an
        // affine combination of the order-0 and order-1 moments plus finite
        // corrections at the reward-table sites.
        let m0 = self.tilted_weight_sum(theta, 0)?;
        let m1 = self.tilted_weight_sum(theta, 1)?;
        let (SeriesSum::Finite(m0), SeriesSum::Finite(m1)) = (m0, m1) else {
            return Ok(SeriesSum::Divergent);
        };
        let affine = m1.scale(self.reward.slope).add(m0.scale(self.reward.intercept));
        let corr = series::finite_weight_sum(self.reward.table.iter().map(|&(s, f)| {
            let p = self.eval_p(s);
            let w = (self.eval_v(s) - theta * s as f64).exp() * p;
            let default = self.reward.slope * s as f64 + self.reward.intercept;
            w * (f - default)
        }));
        Ok(SeriesSum::Finite(affine.add(corr)))
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
