//! Utility-driven agent for closed-loop testing.

use rand::Rng;

use crate::choice::{predict, sample_choice, ChoiceModelSpec};
use crate::error::{Error, Result, UtilityError};
use crate::lottery::{ChoiceQuestion, QuestionMode};
use crate::questionnaire::{Answer, Dimension, QuestionnaireItem, LIKERT_MAX, LIKERT_MIN};

/// Chosen option index: a draw from the choice law, or the utility argmax
/// when the sensitivity is infinite.
pub fn synthetic_answer(spec: &ChoiceModelSpec, question: &ChoiceQuestion, rng: &mut impl Rng) -> Result<usize> {
    if spec.beta_sensitivity == f64::INFINITY {
        predict(spec, question)
    } else {
        sample_choice(spec, question, rng)
    }
}

/// The choices of a gamble item as a lottery question (2 or 4 options only).
pub fn item_question(item: &QuestionnaireItem) -> Option<Result<ChoiceQuestion>> {
    if !item.is_gamble() {
        return None;
    }
    let mode = match item.choices.len() {
        2 => QuestionMode::DiffEv,
        4 => QuestionMode::FourOption,
        _ => return None,
    };
    let options: Result<Vec<_>> = item.choices.iter().map(|c| c.as_lottery().expect("gamble item")).collect();
    Some(options.and_then(|o| ChoiceQuestion::new(item.id.clone(), mode, o)))
}

/// Utility-based answer to a gamble item; `None` for non-gamble items and
/// for gambles with outcomes outside the utility's domain.
fn gamble_answer(spec: &ChoiceModelSpec, item: &QuestionnaireItem, rng: &mut impl Rng) -> Result<Option<usize>> {
    let Some(q) = item_question(item) else { return Ok(None) };
    match synthetic_answer(spec, &q?, rng) {
        Ok(idx) => Ok(Some(idx)),
        Err(Error::Utility(UtilityError::Domain { .. })) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Position of a choice's score within its item, scaled to [0, 1].
fn position(item: &QuestionnaireItem, idx: usize) -> f64 {
    let lo = item.choices.iter().map(|c| c.score).min().unwrap_or(1) as f64;
    let hi = item.max_score() as f64;
    if hi > lo {
        (item.choices[idx].score as f64 - lo) / (hi - lo)
    } else {
        0.5
    }
}

/// Choice whose scaled score is closest to `target` (lower score on ties).
fn nearest_choice(item: &QuestionnaireItem, target: f64) -> usize {
    let mut order: Vec<usize> = (0..item.choices.len()).collect();
    order.sort_by_key(|&i| item.choices[i].score);
    let mut best = order[0];
    for &i in &order[1..] {
        if (position(item, i) - target).abs() < (position(item, best) - target).abs() - 1e-12 {
            best = i;
        }
    }
    best
}

/// Answers one pass over a choice questionnaire. Gamble items are answered
/// from the choice model; every other item (and any gamble the utility
/// cannot evaluate) gets the choice whose scaled score
/// is nearest the mean scaled score of the gamble answers in the same pass.
pub fn answer_choice_items(spec: &ChoiceModelSpec, items: &[QuestionnaireItem], rng: &mut impl Rng) -> Result<Vec<char>> {
    let mut picks: Vec<Option<usize>> = vec![None; items.len()];
    let mut positions = Vec::new();
    for (k, item) in items.iter().enumerate() {
        if let Some(idx) = gamble_answer(spec, item, rng)? {
            positions.push(position(item, idx));
            picks[k] = Some(idx);
        }
    }
    if positions.is_empty() && picks.iter().any(Option::is_none) {
        return Err(Error::Questionnaire("no gamble items to anchor a synthetic answer".into()));
    }
    let level = positions.iter().sum::<f64>() / positions.len().max(1) as f64;
    items
        .iter()
        .zip(picks)
        .map(|(item, pick)| {
            if item.is_likert() {
                return Err(Error::Questionnaire(format!("item {} is a Likert item", item.id)));
            }
            Ok(item.choices[pick.unwrap_or_else(|| nearest_choice(item, level))].letter)
        })
        .collect()
}

/// Risk level in [0, 1] from one pass over the gamble items of `anchors`.
pub fn risk_level(spec: &ChoiceModelSpec, anchors: &[QuestionnaireItem], rng: &mut impl Rng) -> Result<f64> {
    let mut positions = Vec::new();
    for item in anchors {
        if let Some(idx) = gamble_answer(spec, item, rng)? {
            positions.push(position(item, idx));
        }
    }
    if positions.is_empty() {
        return Err(Error::Questionnaire("no gamble items to anchor a synthetic answer".into()));
    }
    Ok(positions.iter().sum::<f64>() / positions.len() as f64)
}

/// Likert answer implied by a risk level: likelihood rises and perceived
/// riskiness falls with the level.
pub fn likert_from_level(level: f64, dimension: Dimension) -> Answer {
    let span = (LIKERT_MAX - LIKERT_MIN) as f64;
    let step = (level.clamp(0.0, 1.0) * span).round() as u8;
    Answer::Likert(match dimension {
        Dimension::RiskTaking => LIKERT_MIN + step,
        Dimension::RiskPerception => LIKERT_MAX - step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::choice_probability;
    use crate::questionnaire::{grable_lytton_items, score_grable_lytton, Answer, RiskCategory, SurveyResponse};
    use crate::utility::{Lottery, UtilityModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(a: &[(f64, f64)], b: &[(f64, f64)]) -> ChoiceQuestion {
        ChoiceQuestion::new("q", QuestionMode::DiffEv, vec![Lottery::from_pairs(a).unwrap(), Lottery::from_pairs(b).unwrap()]).unwrap()
    }

    #[test]
    fn infinite_sensitivity_takes_the_argmax() {
        let spec = ChoiceModelSpec::new(UtilityModel::linear(), f64::INFINITY);
        let q = pair(&[(300.0, 0.5), (100.0, 0.5)], &[(150.0, 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..200).all(|_| synthetic_answer(&spec, &q, &mut rng).unwrap() == 0));
    }

    #[test]
    fn equal_utilities_split_evenly() {
        let spec = ChoiceModelSpec::new(UtilityModel::linear(), 0.05);
        let q = pair(&[(300.0, 0.5), (100.0, 0.5)], &[(200.0, 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let first = (0..n).filter(|_| synthetic_answer(&spec, &q, &mut rng).unwrap() == 0).count();
        assert!((first as f64 / n as f64 - 0.5).abs() < 0.015, "{first}");
    }

    #[test]
    fn frequencies_follow_choice_probability() {
        let spec = ChoiceModelSpec::new(UtilityModel::crra(0.5), 0.2);
        let q = pair(&[(400.0, 0.5), (100.0, 0.5)], &[(220.0, 1.0)]);
        let p = choice_probability(&spec, &q).unwrap();
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hits = (0..n).filter(|_| synthetic_answer(&spec, &q, &mut rng).unwrap() == 0).count();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * se, "{hits} vs {p}");
    }

    #[test]
    fn fixed_seed_replays() {
        let spec = ChoiceModelSpec::new(UtilityModel::crra(0.71), 0.3);
        let q = pair(&[(400.0, 0.5), (100.0, 0.5)], &[(230.0, 1.0)]);
        let run = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..50).map(|_| synthetic_answer(&spec, &q, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn argmax_linear_agent_on_grable_lytton() {
        // gamble items: the $100,000 long shot (4), then two EV ties that go to
        // the sure amount (1 and 1); mean scaled level 1/3 gives score 2 on
        // every other item: 6 + 10 * 2 = 26
        let items = grable_lytton_items();
        let spec = ChoiceModelSpec::new(UtilityModel::linear(), f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let letters = answer_choice_items(&spec, &items, &mut rng).unwrap();
        let rs: Vec<SurveyResponse> = items
            .iter()
            .zip(&letters)
            .map(|(i, &l)| SurveyResponse {
                item_id: i.id.clone(),
                run_index: 0,
                raw_text: l.to_string(),
                extracted: Some(Answer::Letter(l)),
                prompt_tone: None,
            })
            .collect();
        let s = score_grable_lytton(&items, &rs).unwrap();
        assert_eq!((s.total, s.category), (26, RiskCategory::Average));
    }

    #[test]
    fn zero_outcome_gambles_fall_back_for_log_utility() {
        // the game show item pays $0 on a loss, outside the log-utility domain
        let items = grable_lytton_items();
        let spec = ChoiceModelSpec::new(UtilityModel::crra(1.0), f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let letters = answer_choice_items(&spec, &items, &mut rng).unwrap();
        // both remaining gambles prefer the sure $1,500 (level 0), so every
        // other item takes its lowest score
        for (item, &l) in items.iter().zip(&letters) {
            assert_eq!(item.choice(l).unwrap().score, 1, "{}", item.id);
        }
        let level = risk_level(&spec, &items, &mut rng).unwrap();
        assert_eq!(level, 0.0);
    }

    #[test]
    fn likert_mapping_is_monotone() {
        assert_eq!(likert_from_level(0.0, Dimension::RiskTaking), Answer::Likert(1));
        assert_eq!(likert_from_level(1.0, Dimension::RiskTaking), Answer::Likert(7));
        assert_eq!(likert_from_level(1.0, Dimension::RiskPerception), Answer::Likert(1));
        assert_eq!(likert_from_level(0.5, Dimension::RiskPerception), Answer::Likert(4));
    }
}
