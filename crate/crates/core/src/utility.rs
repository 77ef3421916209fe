//! Utility families, lotteries and probability weighting.
//!
//! Every family stores its parameters as a flat vector in a fixed canonical
//! order (see [`Family::param_names`]). The formulas themselves are generic over
//! [`Real`] so the sampler can differentiate through them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::UtilityError;

/// Default stabilizing constant used wherever a small positive epsilon is needed.
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Rewards are divided by this before the CARA formula is applied.
pub const DEFAULT_CARA_SCALE: f64 = 250.0;

const SERIES_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Power,
    Quadratic,
    Crra,
    Cara,
    Hara,
    ExpoPower,
    Prospect,
    EpsteinZin,
    PiecewiseFs,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Linear,
        Family::Power,
        Family::Quadratic,
        Family::Crra,
        Family::Cara,
        Family::Hara,
        Family::ExpoPower,
        Family::Prospect,
        Family::EpsteinZin,
        Family::PiecewiseFs,
    ];

    /// Canonical parameter order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Linear => &[],
            Family::Power => &["alpha"],
            Family::Quadratic => &["a", "b"],
            Family::Crra => &["gamma"],
            Family::Cara => &["alpha", "scale"],
            Family::Hara => &["a", "b", "gamma"],
            Family::ExpoPower => &["alpha", "theta"],
            Family::Prospect => &["alpha", "beta", "lambda", "reference"],
            Family::EpsteinZin => &["alpha", "psi", "discount"],
            Family::PiecewiseFs => &["c1", "c2", "alpha1", "alpha2", "alpha3"],
        }
    }

    fn default_param(self, name: &str) -> Option<f64> {
        match (self, name) {
            (Family::Cara, "scale") => Some(DEFAULT_CARA_SCALE),
            (Family::Prospect, "reference") => Some(0.0),
            _ => None,
        }
    }

    /// Families that map single outcomes to utilities (everything but Epstein-Zin).
    pub fn is_outcome_level(self) -> bool {
        self != Family::EpsteinZin
    }

    pub fn key(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Power => "power",
            Family::Quadratic => "quadratic",
            Family::Crra => "crra",
            Family::Cara => "cara",
            Family::Hara => "hara",
            Family::ExpoPower => "expo_power",
            Family::Prospect => "prospect",
            Family::EpsteinZin => "epstein_zin",
            Family::PiecewiseFs => "piecewise_fs",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Family::ALL.into_iter().find(|f| f.key() == norm).or(match norm.as_str() {
            "saha" | "expopower" => Some(Family::ExpoPower),
            "ez" | "epsteinzin" => Some(Family::EpsteinZin),
            "piecewise" | "friedman_savage" | "fs" => Some(Family::PiecewiseFs),
            "prospect_theory" | "pt" => Some(Family::Prospect),
            _ => None,
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Linear => "Linear",
            Family::Power => "Power",
            Family::Quadratic => "Quadratic",
            Family::Crra => "CRRA",
            Family::Cara => "CARA",
            Family::Hara => "HARA",
            Family::ExpoPower => "Expo-Power",
            Family::Prospect => "Prospect",
            Family::EpsteinZin => "Epstein-Zin",
            Family::PiecewiseFs => "Piecewise-FS",
        };
        f.write_str(s)
    }
}

/// A utility family together with its parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtilityModelRepr", into = "UtilityModelRepr")]
pub struct UtilityModel {
    family: Family,
    params: Vec<f64>,
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct UtilityModelRepr {
    family: Family,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
}

impl TryFrom<UtilityModelRepr> for UtilityModel {
    type Error = UtilityError;

    fn try_from(repr: UtilityModelRepr) -> Result<Self, Self::Error> {
        let family = repr.family;
        for key in repr.params.keys() {
            if !family.param_names().contains(&key.as_str()) {
                return Err(UtilityError::InvalidParams {
                    family,
                    reason: format!("unknown parameter `{key}`"),
                });
            }
        }
        let params = family
            .param_names()
            .iter()
            .map(|name| {
                repr.params
                    .get(*name)
                    .copied()
                    .or_else(|| family.default_param(name))
                    .ok_or_else(|| UtilityError::InvalidParams {
                        family,
                        reason: format!("missing parameter `{name}`"),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut model = UtilityModel::new(family, params)?;
        if let Some(eps) = repr.epsilon {
            model.epsilon = eps;
        }
        Ok(model)
    }
}

impl From<UtilityModel> for UtilityModelRepr {
    fn from(m: UtilityModel) -> Self {
        let params = m
            .family
            .param_names()
            .iter()
            .zip(m.params.iter())
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let epsilon = (m.epsilon != DEFAULT_EPSILON).then_some(m.epsilon);
        UtilityModelRepr { family: m.family, params, epsilon }
    }
}

impl UtilityModel {
    /// Builds a model from parameters in canonical order. Only the parameter
    /// count is checked here; use [`validate_params`] for the family constraints.
    pub fn new(family: Family, params: Vec<f64>) -> Result<Self, UtilityError> {
        let expected = family.param_names().len();
        if params.len() != expected {
            return Err(UtilityError::InvalidParams {
                family,
                reason: format!("expected {expected} parameters, got {}", params.len()),
            });
        }
        Ok(Self { family, params, epsilon: DEFAULT_EPSILON })
    }

    fn of(family: Family, params: &[f64]) -> Self {
        Self { family, params: params.to_vec(), epsilon: DEFAULT_EPSILON }
    }

    pub fn linear() -> Self {
        Self::of(Family::Linear, &[])
    }
    pub fn power(alpha: f64) -> Self {
        Self::of(Family::Power, &[alpha])
    }
    pub fn quadratic(a: f64, b: f64) -> Self {
        Self::of(Family::Quadratic, &[a, b])
    }
    pub fn crra(gamma: f64) -> Self {
        Self::of(Family::Crra, &[gamma])
    }
    pub fn cara(alpha: f64) -> Self {
        Self::of(Family::Cara, &[alpha, DEFAULT_CARA_SCALE])
    }
    pub fn cara_scaled(alpha: f64, scale: f64) -> Self {
        Self::of(Family::Cara, &[alpha, scale])
    }
    pub fn hara(a: f64, b: f64, gamma: f64) -> Self {
        Self::of(Family::Hara, &[a, b, gamma])
    }
    pub fn expo_power(alpha: f64, theta: f64) -> Self {
        Self::of(Family::ExpoPower, &[alpha, theta])
    }
    pub fn prospect(alpha: f64, beta: f64, lambda: f64, reference: f64) -> Self {
        Self::of(Family::Prospect, &[alpha, beta, lambda, reference])
    }
    pub fn epstein_zin(alpha: f64, psi: f64, discount: f64) -> Self {
        Self::of(Family::EpsteinZin, &[alpha, psi, discount])
    }
    pub fn piecewise_fs(c1: f64, c2: f64, alpha1: f64, alpha2: f64, alpha3: f64) -> Self {
        Self::of(Family::PiecewiseFs, &[c1, c2, alpha1, alpha2, alpha3])
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.family
            .param_names()
            .iter()
            .position(|n| *n == name)
            .map(|i| self.params[i])
    }
}

/// A single (reward, probability) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Outcome {
    pub reward: f64,
    pub prob: f64,
}

impl From<(f64, f64)> for Outcome {
    fn from((reward, prob): (f64, f64)) -> Self {
        Self { reward, prob }
    }
}

impl From<Outcome> for (f64, f64) {
    fn from(o: Outcome) -> Self {
        (o.reward, o.prob)
    }
}

/// A finite distribution over monetary outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LotteryRepr", into = "LotteryRepr")]
pub struct Lottery {
    outcomes: Vec<Outcome>,
}

#[derive(Serialize, Deserialize)]
struct LotteryRepr {
    outcomes: Vec<Outcome>,
}

impl TryFrom<LotteryRepr> for Lottery {
    type Error = UtilityError;
    fn try_from(r: LotteryRepr) -> Result<Self, Self::Error> {
        Lottery::new(r.outcomes)
    }
}

impl From<Lottery> for LotteryRepr {
    fn from(l: Lottery) -> Self {
        LotteryRepr { outcomes: l.outcomes }
    }
}

impl Lottery {
    pub fn new(outcomes: Vec<Outcome>) -> Result<Self, UtilityError> {
        if outcomes.is_empty() {
            return Err(UtilityError::InvalidLottery("no outcomes".into()));
        }
        for o in &outcomes {
            if !o.reward.is_finite() {
                return Err(UtilityError::InvalidLottery(format!("non-finite reward {}", o.reward)));
            }
            if !(0.0..=1.0).contains(&o.prob) {
                return Err(UtilityError::Probability(o.prob));
            }
        }
        let total: f64 = outcomes.iter().map(|o| o.prob).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(UtilityError::InvalidLottery(format!("probabilities sum to {total}")));
        }
        Ok(Self { outcomes })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, UtilityError> {
        Self::new(pairs.iter().copied().map(Outcome::from).collect())
    }

    /// A lottery paying `x` with certainty.
    pub fn sure(x: f64) -> Result<Self, UtilityError> {
        Self::from_pairs(&[(x, 1.0)])
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn max_reward(&self) -> f64 {
        self.outcomes.iter().map(|o| o.reward).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_reward(&self) -> f64 {
        self.outcomes.iter().map(|o| o.reward).fold(f64::INFINITY, f64::min)
    }
}

/// Monotone distortion applied to probabilities before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum WeightingScheme {
    #[default]
    None,
    Prelec {
        gamma: f64,
    },
    GonzalezWu {
        delta: f64,
        gamma: f64,
    },
}

/// Parameter-free tag for a weighting scheme, used when its parameters are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingKind {
    #[default]
    None,
    Prelec,
    GonzalezWu,
}

impl WeightingKind {
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            WeightingKind::None => &[],
            WeightingKind::Prelec => &["w_gamma"],
            WeightingKind::GonzalezWu => &["w_delta", "w_gamma"],
        }
    }

    pub fn with_params(self, p: &[f64]) -> WeightingScheme {
        match self {
            WeightingKind::None => WeightingScheme::None,
            WeightingKind::Prelec => WeightingScheme::Prelec { gamma: p[0] },
            WeightingKind::GonzalezWu => WeightingScheme::GonzalezWu { delta: p[0], gamma: p[1] },
        }
    }
}

impl WeightingScheme {
    pub fn kind(&self) -> WeightingKind {
        match self {
            WeightingScheme::None => WeightingKind::None,
            WeightingScheme::Prelec { .. } => WeightingKind::Prelec,
            WeightingScheme::GonzalezWu { .. } => WeightingKind::GonzalezWu,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            WeightingScheme::None => vec![],
            WeightingScheme::Prelec { gamma } => vec![gamma],
            WeightingScheme::GonzalezWu { delta, gamma } => vec![delta, gamma],
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        match *self {
            WeightingScheme::None => {}
            WeightingScheme::Prelec { gamma } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    v.push("gamma > 0".to_string());
                }
            }
            WeightingScheme::GonzalezWu { delta, gamma } => {
                if !(delta > 0.0 && delta.is_finite()) {
                    v.push("delta > 0".to_string());
                }
                if !(gamma > 0.0 && gamma.is_finite()) {
                    v.push("gamma > 0".to_string());
                }
            }
        }
        v
    }
}

/// Interval of admissible outcomes used by parameter validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDomain {
    pub lower: f64,
    pub lower_inclusive: bool,
    pub upper: f64,
}

impl Default for OutcomeDomain {
    /// `(0, 50000]`: ten times the largest reward the default generator can emit.
    fn default() -> Self {
        Self { lower: 0.0, lower_inclusive: false, upper: 50_000.0 }
    }
}

impl OutcomeDomain {
    pub fn new(lower: f64, lower_inclusive: bool, upper: f64) -> Self {
        Self { lower, lower_inclusive, upper }
    }

    /// `(0, 10 * max reward]`.
    pub fn from_rewards(rewards: impl IntoIterator<Item = f64>) -> Self {
        let max = rewards.into_iter().fold(0.0f64, f64::max);
        Self { lower: 0.0, lower_inclusive: false, upper: 10.0 * max }
    }
}

/// Outcome of [`validate_params`]: empty when the model is admissible.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self, family: Family) -> Result<(), UtilityError> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(UtilityError::InvalidParams { family, reason: self.violations.join("; ") })
        }
    }
}

/// Checks every family constraint against the given outcome domain.
pub fn validate_params(model: &UtilityModel, domain: &OutcomeDomain) -> ValidationReport {
    let mut v = Vec::new();
    let p = &model.params;
    let eps = model.epsilon;
    let mut need = |ok: bool, what: &str| {
        if !ok {
            v.push(what.to_string());
        }
    };
    need(p.iter().all(|x| x.is_finite()), "finite parameters");
    need(eps > 0.0, "epsilon > 0");
    match model.family {
        Family::Linear | Family::Power | Family::Crra => {}
        Family::Quadratic => need(p[1] > 0.0, "b > 0"),
        Family::Cara => {
            need(p[0] >= 0.0, "alpha >= 0");
            need(p[1] > 0.0, "scale > 0");
        }
        Family::Hara => {
            let (a, b, gamma) = (p[0], p[1], p[2]);
            need(gamma != 0.0, "gamma != 0");
            let at = |x: f64| a + b * x;
            let lower_ok = if domain.lower_inclusive { at(domain.lower) > 0.0 } else { at(domain.lower) >= 0.0 };
            need(lower_ok && at(domain.upper) > 0.0, "a + b·x > 0");
        }
        Family::ExpoPower => {
            need(p[0] > 0.0, "alpha > 0");
            need((0.0..1.0).contains(&p[1]), "0 <= theta < 1");
        }
        Family::Prospect => {
            need(p[0] > 0.0 && p[0] <= 1.0, "alpha in (0, 1]");
            need(p[1] > 0.0 && p[1] <= 1.0, "beta in (0, 1]");
            need(p[2] > 0.0, "lambda > 0");
        }
        Family::EpsteinZin => {
            let (alpha, psi, disc) = (p[0], p[1], p[2]);
            need(disc > 0.0 && disc < 1.0, "0 < discount < 1");
            need(psi != 0.0, "psi != 0");
            need((1.0 - 1.0 / psi).abs() > eps, "|1 - 1/psi| > epsilon");
            need((1.0 - alpha).abs() > eps, "|1 - alpha| > epsilon");
        }
        Family::PiecewiseFs => {
            let (c1, c2, a1, a2, a3) = (p[0], p[1], p[2], p[3], p[4]);
            need(c1 > 0.0 && c1 < c2, "0 < c1 < c2");
            need(a1 > 0.0 && a1 <= 1.0, "alpha1 in (0, 1]");
            need(a3 > 0.0 && a3 <= 1.0, "alpha3 in (0, 1]");
            need(a2 > 1.0, "alpha2 > 1");
        }
    }
    ValidationReport { violations: v }
}

/// `(x^t - 1) / t`, switching to a series near `t = 0` so derivatives stay accurate.
fn box_cox<T: Real>(ln_x: f64, t: T) -> T {
    let tl = t * ln_x;
    if tl.value().abs() < SERIES_CUTOFF {
        // ln x + t ln²x / 2 + t² ln³x / 6
        (t * (ln_x * ln_x / 2.0) + t * t * (ln_x * ln_x * ln_x / 6.0)) + ln_x
    } else {
        tl.exp_m1() / t
    }
}

/// `(1 - e^{-a y}) / a` with its `a -> 0` limit.
fn neg_exp_over<T: Real>(a: T, y: T) -> T {
    let ay = a * y;
    if ay.value().abs() < SERIES_CUTOFF {
        y - ay * y / 2.0 + ay * ay * y / 6.0
    } else {
        -(-ay).exp_m1() / a
    }
}

pub(crate) fn outcome_utility<T: Real>(family: Family, p: &[T], x: f64) -> Result<T, UtilityError> {
    outcome_utility_ln(family, p, x, x.ln())
}

/// [`outcome_utility`] with `ln x` precomputed (NaN or `-inf` for `x <= 0`).
pub(crate) fn outcome_utility_ln<T: Real>(
    family: Family,
    p: &[T],
    x: f64,
    ln_x: f64,
) -> Result<T, UtilityError> {
    let domain_err = || UtilityError::Domain { family, x };
    if !x.is_finite() {
        return Err(domain_err());
    }
    let u = match family {
        Family::Linear => T::cst(x),
        Family::Power => {
            if x <= 0.0 {
                return Err(domain_err());
            }
            T::data_pow_ln(x, ln_x, p[0])
        }
        Family::Quadratic => p[0] * x - p[1] * (x * x),
        Family::Crra => {
            if x <= 0.0 {
                return Err(domain_err());
            }
            let gamma = p[0];
            if gamma.value() == 1.0 {
                T::cst(ln_x)
            } else {
                box_cox(ln_x, -gamma + 1.0)
            }
        }
        Family::Cara => {
            let (alpha, scale) = (p[0], p[1]);
            let y = T::cst(x) / scale;
            if alpha.value() == 0.0 {
                y
            } else {
                neg_exp_over(alpha, y)
            }
        }
        Family::Hara => {
            let (a, b, gamma) = (p[0], p[1], p[2]);
            let base = a + b * x;
            if base.value() <= 0.0 {
                return Err(domain_err());
            }
            (-gamma + 1.0) / gamma * base.powf(gamma)
        }
        Family::ExpoPower => {
            if x <= 0.0 {
                return Err(domain_err());
            }
            let (alpha, theta) = (p[0], p[1]);
            let y = T::data_pow_ln(x, ln_x, -theta + 1.0);
            neg_exp_over(alpha, y)
        }
        Family::Prospect => {
            let (alpha, beta, lambda, r0) = (p[0], p[1], p[2], p[3]);
            let r0v = r0.value();
            if x >= r0v {
                let d = -r0 + x;
                if d.value() == 0.0 {
                    T::cst(0.0)
                } else {
                    d.powf(alpha)
                }
            } else {
                -(lambda * (r0 - x).powf(beta))
            }
        }
        Family::EpsteinZin => return Err(UtilityError::LotteryOnly(family)),
        Family::PiecewiseFs => {
            if x < 0.0 {
                return Err(domain_err());
            }
            let (c1, c2, a1, a2, a3) = (p[0], p[1], p[2], p[3], p[4]);
            let y1 = c1.powf(a1);
            if x < c1.value() {
                T::data_pow_ln(x, ln_x, a1)
            } else if x < c2.value() {
                y1 + T::data_pow_ln(x, ln_x, a2) - c1.powf(a2)
            } else {
                let y2 = y1 + (c2.powf(a2) - c1.powf(a2));
                y2 + T::data_pow_ln(x, ln_x, a3) - c2.powf(a3)
            }
        }
    };
    Ok(u)
}

pub(crate) fn weight<T: Real>(kind: WeightingKind, w: &[T], prob: f64) -> Result<T, UtilityError> {
    if !(0.0..=1.0).contains(&prob) || prob.is_nan() {
        return Err(UtilityError::Probability(prob));
    }
    if kind == WeightingKind::None || prob == 0.0 || prob == 1.0 {
        return Ok(T::cst(prob));
    }
    Ok(match kind {
        WeightingKind::None => unreachable!(),
        WeightingKind::Prelec => {
            // exp(-(-ln p)^gamma)
            let t = T::data_pow(-prob.ln(), w[0]);
            (-t).exp()
        }
        WeightingKind::GonzalezWu => {
            let (delta, gamma) = (w[0], w[1]);
            let num = delta * T::data_pow(prob, gamma);
            num / (num + T::data_pow(1.0 - prob, gamma))
        }
    })
}

/// Outcome accessors shared by plain and precomputed outcomes.
pub(crate) trait OutcomeView {
    fn reward(&self) -> f64;
    fn prob(&self) -> f64;
    fn ln_reward(&self) -> f64 {
        self.reward().ln()
    }
}

impl OutcomeView for Outcome {
    fn reward(&self) -> f64 {
        self.reward
    }
    fn prob(&self) -> f64 {
        self.prob
    }
}

/// Outcome with its log reward cached for repeated evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PreparedOutcome {
    pub reward: f64,
    pub prob: f64,
    pub ln_reward: f64,
}

impl From<&Outcome> for PreparedOutcome {
    fn from(o: &Outcome) -> Self {
        Self { reward: o.reward, prob: o.prob, ln_reward: o.reward.ln() }
    }
}

impl OutcomeView for PreparedOutcome {
    fn reward(&self) -> f64 {
        self.reward
    }
    fn prob(&self) -> f64 {
        self.prob
    }
    fn ln_reward(&self) -> f64 {
        self.ln_reward
    }
}

fn epstein_zin<T: Real, O: OutcomeView>(
    p: &[T],
    kind: WeightingKind,
    w: &[T],
    outcomes: &[O],
    eps: f64,
) -> Result<T, UtilityError> {
    let (alpha, psi, disc) = (p[0], p[1], p[2]);
    let one_minus_alpha = -alpha + 1.0;
    let mut exp_term = T::cst(0.0);
    for o in outcomes {
        if o.reward() < 0.0 {
            return Err(UtilityError::Domain { family: Family::EpsteinZin, x: o.reward() });
        }
        exp_term = exp_term + weight(kind, w, o.prob())? * T::data_pow_ln(o.reward(), o.ln_reward(), one_minus_alpha);
    }
    let pos = if exp_term.value() < eps { T::cst(eps) } else { exp_term };
    let rho = -(T::cst(1.0) / psi) + 1.0;
    let inner = pos.powf(rho / one_minus_alpha);
    let base = (-disc + 1.0) * T::data_pow(eps, rho) + disc * inner;
    Ok(base.powf(T::cst(1.0) / rho))
}

/// Lottery utility in any scalar field; `p` and `w` are canonical parameter slices.
pub(crate) fn lottery_utility<T: Real, O: OutcomeView>(
    family: Family,
    p: &[T],
    kind: WeightingKind,
    w: &[T],
    outcomes: &[O],
    eps: f64,
) -> Result<T, UtilityError> {
    if family == Family::EpsteinZin {
        return epstein_zin(p, kind, w, outcomes, eps);
    }
    let mut total = T::cst(0.0);
    for o in outcomes {
        total = total + weight(kind, w, o.prob())? * outcome_utility_ln(family, p, o.reward(), o.ln_reward())?;
    }
    Ok(total)
}

/// `u(x)` for a single outcome.
pub fn eval_utility(model: &UtilityModel, x: f64) -> Result<f64, UtilityError> {
    let u = outcome_utility(model.family, &model.params, x)?;
    if u.is_nan() {
        return Err(UtilityError::NonFinite { x });
    }
    Ok(u)
}

/// Expected (or, for Epstein-Zin, recursively aggregated) utility of a lottery.
pub fn expected_utility(
    model: &UtilityModel,
    lottery: &Lottery,
    weighting: &WeightingScheme,
) -> Result<f64, UtilityError> {
    let w = weighting.params();
    lottery_utility(model.family, &model.params, weighting.kind(), &w, &lottery.outcomes, model.epsilon)
}

/// Applies the weighting scheme to one probability; `w(0) = 0` and `w(1) = 1` exactly.
pub fn weight_probability(scheme: &WeightingScheme, p: f64) -> Result<f64, UtilityError> {
    weight(scheme.kind(), &scheme.params(), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_negative_curvature_is_rejected() {
        let r = validate_params(&UtilityModel::quadratic(1.0, -1.0), &OutcomeDomain::default());
        assert_eq!(r.violations, vec!["b > 0".to_string()]);
    }

    #[test]
    fn linear_has_nothing_to_validate() {
        assert!(validate_params(&UtilityModel::linear(), &OutcomeDomain::default()).is_ok());
    }

    #[test]
    fn hara_domain_endpoint() {
        let m = UtilityModel::hara(0.0, 1.0, 0.5);
        assert!(validate_params(&m, &OutcomeDomain::new(0.0, false, 1000.0)).is_ok());
        let r = validate_params(&m, &OutcomeDomain::new(0.0, true, 1000.0));
        assert_eq!(r.violations, vec!["a + b·x > 0".to_string()]);
    }

    #[test]
    fn epstein_zin_singular_parameters_rejected() {
        let d = OutcomeDomain::default();
        assert!(!validate_params(&UtilityModel::epstein_zin(0.5, 1.0, 0.5), &d).is_ok());
        assert!(!validate_params(&UtilityModel::epstein_zin(1.0, 1.5, 0.5), &d).is_ok());
        assert!(!validate_params(&UtilityModel::epstein_zin(0.5, 1.5, 1.0), &d).is_ok());
        assert!(validate_params(&UtilityModel::epstein_zin(0.5, 1.5, 0.5), &d).is_ok());
    }

    #[test]
    fn other_family_constraints() {
        let d = OutcomeDomain::default();
        let bad = [
            UtilityModel::cara(-0.1),
            UtilityModel::cara_scaled(1.0, 0.0),
            UtilityModel::expo_power(0.0, 0.5),
            UtilityModel::expo_power(1.0, 1.0),
            UtilityModel::prospect(1.2, 0.88, 2.25, 0.0),
            UtilityModel::prospect(0.88, 0.88, 0.0, 0.0),
            UtilityModel::piecewise_fs(100.0, 50.0, 0.5, 1.5, 0.5),
            UtilityModel::piecewise_fs(100.0, 500.0, 0.5, 0.9, 0.5),
            UtilityModel::hara(1.0, 1.0, 0.0),
            UtilityModel::power(f64::NAN),
        ];
        for m in bad {
            assert!(!validate_params(&m, &d).is_ok(), "{m:?} should be rejected");
        }
        assert!(validate_params(&UtilityModel::cara(0.0), &d).is_ok());
    }

    #[test]
    fn point_evaluations() {
        assert_eq!(eval_utility(&UtilityModel::linear(), 5.0).unwrap(), 5.0);
        assert_abs_diff_eq!(eval_utility(&UtilityModel::crra(1.0), std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_utility(&UtilityModel::crra(0.5), 4.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            eval_utility(&UtilityModel::cara(1.0), 250.0).unwrap(),
            1.0 - (-1.0f64).exp(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            eval_utility(&UtilityModel::prospect(0.88, 0.88, 2.25, 0.0), -10.0).unwrap(),
            -17.068,
            epsilon = 1e-3
        );
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(eval_utility(&UtilityModel::crra(0.5), 0.0), Err(UtilityError::Domain { .. })));
        assert!(matches!(eval_utility(&UtilityModel::power(0.5), -1.0), Err(UtilityError::Domain { .. })));
        assert!(matches!(eval_utility(&UtilityModel::hara(-10.0, 1.0, 0.5), 5.0), Err(UtilityError::Domain { .. })));
        assert!(matches!(
            eval_utility(&UtilityModel::epstein_zin(0.9, 1.5, 0.5), 5.0),
            Err(UtilityError::LotteryOnly(Family::EpsteinZin))
        ));
    }

    #[test]
    fn expected_utility_examples() {
        let l = Lottery::from_pairs(&[(100.0, 0.5), (200.0, 0.5)]).unwrap();
        let none = WeightingScheme::None;
        assert_abs_diff_eq!(expected_utility(&UtilityModel::linear(), &l, &none).unwrap(), 150.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_utility(&UtilityModel::crra(1.0), &l, &none).unwrap(), 0.5 * 100f64.ln() + 0.5 * 200f64.ln(), epsilon = 1e-12);
        let sure = Lottery::sure(321.0).unwrap();
        let m = UtilityModel::cara(0.1);
        assert_eq!(expected_utility(&m, &sure, &none).unwrap(), eval_utility(&m, 321.0).unwrap());
    }

    /// Straight-line transcription of the scalar Epstein-Zin recipe, kept
    /// independent of the generic implementation.
    fn ez_oracle(rewards: &[f64], probs: &[f64], alpha: f64, psi: f64, beta: f64, eps: f64) -> f64 {
        let mut exp_term = 0.0;
        for i in 0..rewards.len() {
            exp_term += probs[i] * rewards[i].powf(1.0 - alpha);
        }
        let exp_term_pos = if exp_term > eps { exp_term } else { eps };
        let inner = exp_term_pos.powf((1.0 - 1.0 / psi) / (1.0 - alpha));
        ((1.0 - beta) * eps.powf(1.0 - 1.0 / psi) + beta * inner).powf(1.0 / (1.0 - 1.0 / psi))
    }

    #[test]
    fn epstein_zin_matches_pseudo_code() {
        let m = UtilityModel::epstein_zin(0.9, 1.5, 0.5);
        let l = Lottery::sure(100.0).unwrap();
        let got = expected_utility(&m, &l, &WeightingScheme::None).unwrap();
        let want = ez_oracle(&[100.0], &[1.0], 0.9, 1.5, 0.5, 1e-8);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12 * want.abs());
        // ((0.5 * 1e-8^(1/3) + 0.5 * 100^(1/3)))^3
        let hand = (0.5 * 1e-8f64.powf(1.0 / 3.0) + 0.5 * 100f64.powf(1.0 / 3.0)).powi(3);
        assert_abs_diff_eq!(got, hand, epsilon = 1e-9);

        let l2 = Lottery::from_pairs(&[(50.0, 0.3), (400.0, 0.7)]).unwrap();
        let m2 = UtilityModel::epstein_zin(2.5, 0.6, 0.3);
        let got2 = expected_utility(&m2, &l2, &WeightingScheme::None).unwrap();
        let want2 = ez_oracle(&[50.0, 400.0], &[0.3, 0.7], 2.5, 0.6, 0.3, 1e-8);
        assert_abs_diff_eq!(got2, want2, epsilon = 1e-10 * want2.abs());
    }

    #[test]
    fn weighting_examples() {
        assert_abs_diff_eq!(weight_probability(&WeightingScheme::Prelec { gamma: 1.0 }, 0.3).unwrap(), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(
            weight_probability(&WeightingScheme::GonzalezWu { delta: 1.0, gamma: 1.0 }, 0.7).unwrap(),
            0.7,
            epsilon = 1e-12
        );
        let want = (-(2f64.ln()).powi(2)).exp();
        assert_abs_diff_eq!(weight_probability(&WeightingScheme::Prelec { gamma: 2.0 }, 0.5).unwrap(), want, epsilon = 1e-12);
        assert_abs_diff_eq!(want, 0.6185, epsilon = 1e-4);
        for s in [
            WeightingScheme::None,
            WeightingScheme::Prelec { gamma: 0.4 },
            WeightingScheme::GonzalezWu { delta: 0.7, gamma: 0.4 },
        ] {
            assert_eq!(weight_probability(&s, 0.0).unwrap(), 0.0);
            assert_eq!(weight_probability(&s, 1.0).unwrap(), 1.0);
            assert!(weight_probability(&s, 1.2).is_err());
            assert!(weight_probability(&s, -0.1).is_err());
        }
    }

    #[test]
    fn lottery_validation() {
        assert!(Lottery::from_pairs(&[]).is_err());
        assert!(Lottery::from_pairs(&[(1.0, 0.5), (2.0, 0.4)]).is_err());
        assert!(Lottery::from_pairs(&[(f64::INFINITY, 1.0)]).is_err());
        assert!(Lottery::from_pairs(&[(1.0, 0.5), (2.0, 0.5)]).is_ok());
    }

    #[test]
    fn json_config_roundtrip() {
        let m: UtilityModel =
            serde_json::from_str(r#"{"family":"prospect","params":{"alpha":0.88,"beta":0.88,"lambda":2.25,"reference":500}}"#)
                .unwrap();
        assert_eq!(m, UtilityModel::prospect(0.88, 0.88, 2.25, 500.0));
        let c: UtilityModel = serde_json::from_str(r#"{"family":"cara","params":{"alpha":2}}"#).unwrap();
        assert_eq!(c.param("scale"), Some(250.0));
        assert!(serde_json::from_str::<UtilityModel>(r#"{"family":"crra","params":{"gama":1}}"#).is_err());
        let s = serde_json::to_string(&UtilityModel::crra(0.71)).unwrap();
        assert_eq!(s, r#"{"family":"crra","params":{"gamma":0.71}}"#);
    }
}
