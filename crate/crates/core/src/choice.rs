//! Random-utility choice model: probabilities, sampling, prediction, accuracy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, UtilityError};
use crate::lottery::ChoiceQuestion;
use crate::utility::{expected_utility, validate_params, OutcomeDomain, UtilityModel, WeightingScheme};

/// Beyond this the logistic function is treated as saturated.
const LOGIT_SATURATION: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceModelSpec {
    pub utility: UtilityModel,
    #[serde(default)]
    pub weighting: WeightingScheme,
    /// Inverse temperature. `f64::INFINITY` makes choices deterministic.
    pub beta_sensitivity: f64,
}

impl ChoiceModelSpec {
    pub fn new(utility: UtilityModel, beta_sensitivity: f64) -> Self {
        Self { utility, weighting: WeightingScheme::None, beta_sensitivity }
    }

    pub fn with_weighting(mut self, weighting: WeightingScheme) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn validate(&self, domain: &OutcomeDomain) -> Result<()> {
        if !(self.beta_sensitivity >= 0.0) {
            return Err(Error::Config(format!("beta_sensitivity must be >= 0, got {}", self.beta_sensitivity)));
        }
        validate_params(&self.utility, domain).into_result(self.utility.family())?;
        let bad = self.weighting.validate();
        if !bad.is_empty() {
            return Err(Error::Config(format!("invalid weighting: {}", bad.join(", "))));
        }
        Ok(())
    }

    /// Utility of every option, in stored order.
    pub fn option_utilities(&self, question: &ChoiceQuestion) -> Result<Vec<f64>, UtilityError> {
        question.options.iter().map(|o| expected_utility(&self.utility, o, &self.weighting)).collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= LOGIT_SATURATION {
        1.0
    } else if z <= -LOGIT_SATURATION {
        0.0
    } else if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `beta * du` with `0 * inf` read as 0 (no preference, or zero sensitivity).
fn scaled_gap(beta: f64, du: f64) -> f64 {
    if beta == 0.0 || du == 0.0 {
        0.0
    } else {
        beta * du
    }
}

fn require_two(question: &ChoiceQuestion) -> Result<()> {
    if question.option_count() != 2 {
        return Err(Error::Config(format!("question {} has {} options, expected 2", question.id, question.option_count())));
    }
    Ok(())
}

/// Probability of choosing the first stored option of a two-option question.
pub fn choice_probability(spec: &ChoiceModelSpec, question: &ChoiceQuestion) -> Result<f64> {
    require_two(question)?;
    let u = spec.option_utilities(question)?;
    Ok(sigmoid(scaled_gap(spec.beta_sensitivity, u[0] - u[1])))
}

/// Softmax choice probabilities over all options; agrees with
/// [`choice_probability`] for two options.
pub fn choice_probabilities(spec: &ChoiceModelSpec, question: &ChoiceQuestion) -> Result<Vec<f64>> {
    let u = spec.option_utilities(question)?;
    Ok(softmax_choice(spec.beta_sensitivity, &u))
}

pub(crate) fn softmax_choice(beta: f64, u: &[f64]) -> Vec<f64> {
    if u.len() == 2 {
        let p = sigmoid(scaled_gap(beta, u[0] - u[1]));
        return vec![p, 1.0 - p];
    }
    let best = argmax(u);
    let z: Vec<f64> = u.iter().map(|&ui| scaled_gap(beta, ui - u[best])).collect();
    let total: f64 = z.iter().map(|v| v.exp()).sum();
    z.iter().map(|v| v.exp() / total).collect()
}

fn argmax(u: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in u.iter().enumerate().skip(1) {
        if v > u[best] {
            best = i;
        }
    }
    best
}

/// Bernoulli draw: 1 with probability `prob`.
pub fn sample_label(prob: f64, rng: &mut impl Rng) -> u8 {
    u8::from(rng.random::<f64>() < prob)
}

/// Draws an option index from the choice law.
pub fn sample_choice(spec: &ChoiceModelSpec, question: &ChoiceQuestion, rng: &mut impl Rng) -> Result<usize> {
    let probs = choice_probabilities(spec, question)?;
    Ok(draw_index(&probs, rng))
}

pub(crate) fn draw_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    if probs.len() == 2 {
        return if sample_label(probs[0], rng) == 1 { 0 } else { 1 };
    }
    let t: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if t < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub(crate) fn predict_from_utilities(beta: f64, u: &[f64], question: &ChoiceQuestion) -> usize {
    if u.len() == 2 {
        let z = scaled_gap(beta, u[0] - u[1]);
        if z > 0.0 {
            0
        } else if z < 0.0 {
            1
        } else if question.moments[1].variance < question.moments[0].variance {
            1
        } else {
            0
        }
    } else {
        argmax(u)
    }
}

/// Deterministic prediction: the more likely option of a pair (ties go to the
/// lower-variance option), or the utility argmax for larger menus.
pub fn predict(spec: &ChoiceModelSpec, question: &ChoiceQuestion) -> Result<usize> {
    let u = spec.option_utilities(question)?;
    Ok(predict_from_utilities(spec.beta_sensitivity, &u, question))
}

/// Fraction of positions where `predictions` and `labels` agree.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("accuracy inputs"));
    }
    let hits = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Index of the option with strictly higher variance (first option on ties).
pub fn risky_option_index(question: &ChoiceQuestion) -> usize {
    if question.moments[1].variance > question.moments[0].variance {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub question_id: String,
    pub chosen_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_y: Option<u8>,
}

impl ChoiceRecord {
    pub fn new(question: &ChoiceQuestion, chosen_index: usize) -> Result<Self> {
        if chosen_index >= question.option_count() {
            return Err(Error::Config(format!(
                "question {}: chosen index {chosen_index} out of range",
                question.id
            )));
        }
        let label_y = (question.option_count() == 2).then(|| u8::from(chosen_index == risky_option_index(question)));
        Ok(Self { question_id: question.id.clone(), chosen_index, label_y })
    }
}

/// Samples one choice per question, each from its own stream of `seed`.
pub fn simulate_choices(spec: &ChoiceModelSpec, questions: &[ChoiceQuestion], seed: u64) -> Result<Vec<ChoiceRecord>> {
    questions
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let chosen = sample_choice(spec, q, &mut rng)?;
            ChoiceRecord::new(q, chosen)
        })
        .collect()
}

/// Joins choice records to their questions by id, preserving record order.
pub fn join_records<'a>(
    questions: &'a [ChoiceQuestion],
    records: &[ChoiceRecord],
) -> Result<Vec<(&'a ChoiceQuestion, usize)>> {
    let index: std::collections::HashMap<&str, &ChoiceQuestion> =
        questions.iter().map(|q| (q.id.as_str(), q)).collect();
    records
        .iter()
        .map(|r| {
            let q = index
                .get(r.question_id.as_str())
                .ok_or_else(|| Error::Config(format!("no question with id {}", r.question_id)))?;
            if r.chosen_index >= q.option_count() {
                return Err(Error::Config(format!("record for {}: index out of range", r.question_id)));
            }
            Ok((*q, r.chosen_index))
        })
        .collect()
}

/// Accuracy the true model expects when predicting its own sampled labels:
/// the mean probability mass on the predicted option.
pub fn expected_oracle_accuracy(spec: &ChoiceModelSpec, questions: &[ChoiceQuestion]) -> Result<f64> {
    if questions.is_empty() {
        return Err(Error::Empty("questions"));
    }
    let utilities: Vec<Vec<f64>> = questions.iter().map(|q| spec.option_utilities(q)).collect::<Result<_, _>>()?;
    Ok(oracle_accuracy_from_utilities(spec.beta_sensitivity, questions, &utilities))
}

fn oracle_accuracy_from_utilities(beta: f64, questions: &[ChoiceQuestion], utilities: &[Vec<f64>]) -> f64 {
    let total: f64 = questions
        .iter()
        .zip(utilities)
        .map(|(q, u)| softmax_choice(beta, u)[predict_from_utilities(beta, u, q)])
        .sum();
    total / questions.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub beta: f64,
    pub expected_accuracy: f64,
}

/// Grid search over `log10(beta)` for the sensitivity whose expected oracle
/// accuracy is closest to `target`, refined by bisection between the
/// bracketing grid points.
pub fn calibrate_beta(
    utility: &UtilityModel,
    weighting: &WeightingScheme,
    questions: &[ChoiceQuestion],
    target: f64,
) -> Result<Calibration> {
    if questions.is_empty() {
        return Err(Error::Empty("questions"));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Config(format!("target accuracy {target} outside [0, 1]")));
    }
    let spec = ChoiceModelSpec::new(utility.clone(), 1.0).with_weighting(weighting.clone());
    let utilities: Vec<Vec<f64>> = questions.iter().map(|q| spec.option_utilities(q)).collect::<Result<_, _>>()?;
    let gaps: Vec<f64> = utilities
        .iter()
        .flat_map(|u| {
            let top = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            u.iter().map(move |v| top - v).filter(|g| *g > 0.0)
        })
        .collect();
    if gaps.is_empty() {
        return Ok(Calibration { beta: 1.0, expected_accuracy: oracle_accuracy_from_utilities(1.0, questions, &utilities) });
    }
    let mut sorted = gaps;
    sorted.sort_by(f64::total_cmp);
    let center = -sorted[sorted.len() / 2].log10();
    let acc = |log_beta: f64| oracle_accuracy_from_utilities(10f64.powf(log_beta), questions, &utilities);

    let grid: Vec<f64> = (0..=160).map(|k| center - 8.0 + 0.1 * k as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&b| acc(b)).collect();
    let mut best = 0;
    for i in 1..grid.len() {
        if (values[i] - target).abs() < (values[best] - target).abs() {
            best = i;
        }
    }
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let (mut best_b, mut best_v) = (grid[best], values[best]);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let v = acc(mid);
        if (v - target).abs() < (best_v - target).abs() {
            best_b = mid;
            best_v = v;
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Calibration { beta: 10f64.powf(best_b), expected_accuracy: best_v })
}
