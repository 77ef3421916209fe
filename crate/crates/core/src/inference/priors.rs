//! Prior distributions, their support transforms and per-family defaults.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};
use statrs::function::beta::ln_beta;

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::utility::{Family, WeightingKind, DEFAULT_CARA_SCALE, DEFAULT_EPSILON};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Prior {
    HalfNormal { sigma: f64 },
    Normal { mu: f64, sigma: f64 },
    Beta { a: f64, b: f64 },
    TruncNormal { mu: f64, sigma: f64, lo: f64, hi: f64 },
}

/// Bijection from the real line onto a prior's support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    Lower(f64),
    Upper(f64),
    Interval(f64, f64),
}

impl Transform {
    /// Constrained value and `log |d value / d z|`.
    pub fn forward<T: Real>(self, z: T) -> (T, T) {
        match self {
            Transform::Identity => (z, T::cst(0.0)),
            Transform::Lower(lo) => (z.exp() + lo, z),
            Transform::Upper(hi) => (-z.exp() + hi, z),
            Transform::Interval(lo, hi) => {
                let log_s = -(-z).softplus();
                let log_1ms = -z.softplus();
                let x = log_s.exp() * (hi - lo) + lo;
                (x, log_s + log_1ms + (hi - lo).ln())
            }
        }
    }

    pub fn inverse(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Lower(lo) => (x - lo).ln(),
            Transform::Upper(hi) => (hi - x).ln(),
            Transform::Interval(lo, hi) => {
                let s = (x - lo) / (hi - lo);
                (s / (1.0 - s)).ln()
            }
        }
    }
}

impl Prior {
    pub fn half_normal(sigma: f64) -> Self {
        Prior::HalfNormal { sigma }
    }
    pub fn normal(mu: f64, sigma: f64) -> Self {
        Prior::Normal { mu, sigma }
    }
    pub fn trunc_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> Self {
        Prior::TruncNormal { mu, sigma, lo, hi }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Prior::HalfNormal { sigma } => sigma > 0.0 && sigma.is_finite(),
            Prior::Normal { mu, sigma } => sigma > 0.0 && sigma.is_finite() && mu.is_finite(),
            Prior::Beta { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
            Prior::TruncNormal { mu, sigma, lo, hi } => {
                sigma > 0.0 && sigma.is_finite() && mu.is_finite() && lo < hi && !lo.is_nan() && !hi.is_nan()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior {self:?}")))
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            Prior::HalfNormal { .. } => (0.0, f64::INFINITY),
            Prior::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Prior::Beta { .. } => (0.0, 1.0),
            Prior::TruncNormal { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn transform(&self) -> Transform {
        match self.support() {
            (lo, hi) if lo.is_finite() && hi.is_finite() => Transform::Interval(lo, hi),
            (lo, _) if lo.is_finite() => Transform::Lower(lo),
            (_, hi) if hi.is_finite() => Transform::Upper(hi),
            _ => Transform::Identity,
        }
    }

    fn log_norm(&self) -> f64 {
        match *self {
            Prior::HalfNormal { sigma } => std::f64::consts::LN_2 - sigma.ln() - LN_SQRT_2PI,
            Prior::Normal { sigma, .. } => -sigma.ln() - LN_SQRT_2PI,
            Prior::Beta { a, b } => -ln_beta(a, b),
            Prior::TruncNormal { mu, sigma, lo, hi } => {
                let n = NormalDist::new(mu, sigma).expect("valid normal");
                -sigma.ln() - LN_SQRT_2PI - (n.cdf(hi) - n.cdf(lo)).ln()
            }
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        let (lo, hi) = self.support();
        match self {
            Prior::Beta { .. } => x > lo && x < hi,
            Prior::HalfNormal { .. } => x > 0.0 && x.is_finite(),
            _ => x >= lo && x <= hi && x.is_finite(),
        }
    }

    /// Normalized log density; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        self.log_density_unchecked(x)
    }

    /// Log density assuming `x` lies in the support.
    pub fn log_density_unchecked<T: Real>(&self, x: T) -> T {
        let kernel = match *self {
            Prior::HalfNormal { sigma } => -(x * x) / (2.0 * sigma * sigma),
            Prior::Normal { mu, sigma } | Prior::TruncNormal { mu, sigma, .. } => {
                let d = x - mu;
                -(d * d) / (2.0 * sigma * sigma)
            }
            Prior::Beta { a, b } => x.ln() * (a - 1.0) + (-x + 1.0).ln() * (b - 1.0),
        };
        kernel + self.log_norm()
    }

    pub fn mean_hint(&self) -> f64 {
        match *self {
            Prior::HalfNormal { sigma } => sigma * (2.0 / std::f64::consts::PI).sqrt(),
            Prior::Normal { mu, .. } => mu,
            Prior::Beta { a, b } => a / (a + b),
            Prior::TruncNormal { mu, lo, hi, .. } => mu.clamp(lo, hi),
        }
    }
}

/// How one canonical model parameter is obtained during fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    Free { name: String, prior: Prior },
    Fixed(f64),
    /// `params[base] + increment`, the increment being sampled under `prior`.
    Offset { base: usize, name: String, prior: Prior },
}

/// Sampled parameters and priors for one family.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyPriors {
    pub family: Family,
    pub weighting: WeightingKind,
    pub model: Vec<Slot>,
    pub weights: Vec<(String, Prior)>,
    pub beta: Prior,
}

pub const BETA_NAME: &str = "beta_sensitivity";

impl FamilyPriors {
    /// Names of the sampled quantities, in sampling order.
    pub fn free_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .model
            .iter()
            .filter_map(|s| match s {
                Slot::Free { name, .. } | Slot::Offset { name, .. } => Some(name.clone()),
                Slot::Fixed(_) => None,
            })
            .collect();
        out.extend(self.weights.iter().map(|(n, _)| n.clone()));
        out.push(BETA_NAME.to_string());
        out
    }

    pub fn free_priors(&self) -> Vec<Prior> {
        let mut out: Vec<Prior> = self
            .model
            .iter()
            .filter_map(|s| match s {
                Slot::Free { prior, .. } | Slot::Offset { prior, .. } => Some(*prior),
                Slot::Fixed(_) => None,
            })
            .collect();
        out.extend(self.weights.iter().map(|(_, p)| *p));
        out.push(self.beta);
        out
    }

    pub fn dim(&self) -> usize {
        self.free_priors().len()
    }

    /// Canonical model parameters that are derived rather than sampled
    /// directly (offsets), as `(name, canonical index)`.
    pub fn derived(&self) -> Vec<(String, usize)> {
        let names = self.family.param_names();
        self.model
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Slot::Offset { .. }))
            .map(|(i, _)| (names[i].to_string(), i))
            .collect()
    }

    /// Splits a sampled vector into canonical model parameters, weighting
    /// parameters and the sensitivity.
    pub fn assemble<T: Real>(&self, free: &[T]) -> (Vec<T>, Vec<T>, T) {
        let mut k = 0;
        let mut model: Vec<T> = Vec::with_capacity(self.model.len());
        for slot in &self.model {
            let v = match slot {
                Slot::Free { .. } => {
                    k += 1;
                    free[k - 1]
                }
                Slot::Fixed(c) => T::cst(*c),
                Slot::Offset { base, .. } => {
                    k += 1;
                    model[*base] + free[k - 1]
                }
            };
            model.push(v);
        }
        let w = free[k..k + self.weights.len()].to_vec();
        (model, w, free[free.len() - 1])
    }
}

/// Default priors, with the data scale `max_reward` used by changepoint priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub max_reward: f64,
    /// Use `Normal(0, 3)` for the CRRA coefficient so negative values are reachable.
    pub wide_crra: bool,
    pub prospect_reference: f64,
    pub cara_scale: f64,
    pub epsilon: f64,
    /// Replacements keyed by `"<family>.<param>"`, e.g. `"crra.gamma"`.
    pub overrides: BTreeMap<String, Prior>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            max_reward: 1000.0,
            wide_crra: false,
            prospect_reference: 0.0,
            cara_scale: DEFAULT_CARA_SCALE,
            epsilon: DEFAULT_EPSILON,
            overrides: BTreeMap::new(),
        }
    }
}

impl PriorSpec {
    pub fn with_max_reward(max_reward: f64) -> Self {
        Self { max_reward, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_reward > 0.0 && self.max_reward.is_finite()) {
            return Err(Error::Config("max_reward must be positive".into()));
        }
        if !(self.cara_scale > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("cara_scale and epsilon must be positive".into()));
        }
        for (key, p) in &self.overrides {
            p.validate().map_err(|_| Error::Config(format!("invalid override prior for {key}")))?;
        }
        Ok(())
    }

    fn pick(&self, family: Family, name: &str, default: Prior) -> Prior {
        self.overrides.get(&format!("{}.{name}", family.key())).copied().unwrap_or(default)
    }

    pub fn for_family(&self, family: Family, weighting: WeightingKind) -> FamilyPriors {
        let m = self.max_reward;
        let eps = self.epsilon;
        let hn1 = Prior::half_normal(1.0);
        let unit = Prior::trunc_normal(0.0, 1.0, 0.0, 1.0);
        let free = |name: &str, default: Prior| Slot::Free { name: name.to_string(), prior: self.pick(family, name, default) };
        let model = match family {
            Family::Linear => vec![],
            Family::Power => vec![free("alpha", hn1)],
            Family::Quadratic => vec![free("a", Prior::normal(1.0, 1.0)), free("b", hn1)],
            Family::Crra => {
                let default = if self.wide_crra { Prior::normal(0.0, 3.0) } else { hn1 };
                vec![free("gamma", default)]
            }
            Family::Cara => vec![free("alpha", hn1), Slot::Fixed(self.cara_scale)],
            Family::Hara => vec![free("a", Prior::normal(1.0, 1.0)), free("b", hn1), free("gamma", hn1)],
            Family::ExpoPower => vec![free("alpha", hn1), free("theta", unit)],
            Family::Prospect => vec![
                free("alpha", unit),
                free("beta", unit),
                free("lambda", Prior::trunc_normal(2.0, 1.0, 0.0, f64::INFINITY)),
                Slot::Fixed(self.prospect_reference),
            ],
            Family::EpsteinZin => vec![
                free("alpha", hn1),
                free("psi", Prior::trunc_normal(1.0, 0.5, 0.0, f64::INFINITY)),
                free("discount", Prior::Beta { a: 2.0, b: 2.0 }),
            ],
            Family::PiecewiseFs => vec![
                free("c1", Prior::trunc_normal(0.25 * m, 0.10 * m, eps, m)),
                Slot::Offset { base: 0, name: "delta".into(), prior: self.pick(family, "delta", Prior::half_normal(0.2 * m)) },
                free("alpha1", Prior::trunc_normal(0.7, 0.15, eps, 1.0)),
                free("alpha2", Prior::trunc_normal(1.3, 0.15, 1.0, f64::INFINITY)),
                free("alpha3", Prior::trunc_normal(0.7, 0.15, eps, 1.0)),
            ],
        };
        let positive = |mu: f64| Prior::trunc_normal(mu, 0.3, 0.0, f64::INFINITY);
        let weights = match weighting {
            WeightingKind::None => vec![],
            WeightingKind::Prelec => vec![("w_gamma".to_string(), positive(0.65))],
            WeightingKind::GonzalezWu => {
                vec![("w_delta".to_string(), positive(0.77)), ("w_gamma".to_string(), positive(0.44))]
            }
        };
        let beta = self.pick(family, BETA_NAME, Prior::half_normal(2.0));
        FamilyPriors { family, weighting, model, weights, beta }
    }
}
