//! Alignment datasets from a target utility: SFT prompt/completion pairs and
//! DPO preference triples.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::sft_prompt;
use crate::choice::{calibrate_beta, predict, sample_choice, ChoiceModelSpec};
use crate::error::{Error, Result};
use crate::lottery::{generate_dataset, ChoiceQuestion, GeneratorConfig, QuestionMode};
use crate::utility::{UtilityModel, WeightingScheme};

/// Questions used when calibrating a named target's sensitivity.
pub const CALIBRATION_QUESTIONS: usize = 5_000;

/// The six alignment targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedTarget {
    CrraLog,
    Crra071,
    CrraNeg5,
    Cara01,
    Cara2,
    Prospect,
}

impl NamedTarget {
    pub const ALL: [NamedTarget; 6] =
        [NamedTarget::CrraLog, NamedTarget::Crra071, NamedTarget::CrraNeg5, NamedTarget::Cara01, NamedTarget::Cara2, NamedTarget::Prospect];

    pub fn key(self) -> &'static str {
        match self {
            NamedTarget::CrraLog => "crra-1",
            NamedTarget::Crra071 => "crra-0.71",
            NamedTarget::CrraNeg5 => "crra--5",
            NamedTarget::Cara01 => "cara-0.1",
            NamedTarget::Cara2 => "cara-2",
            NamedTarget::Prospect => "prospect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "crra-log" | "log" => return Some(NamedTarget::CrraLog),
            "crra-neg5" | "crra-(-5)" => return Some(NamedTarget::CrraNeg5),
            _ => {}
        }
        Self::ALL.into_iter().find(|t| t.key() == s)
    }

    pub fn utility(self) -> UtilityModel {
        match self {
            NamedTarget::CrraLog => UtilityModel::crra(1.0),
            NamedTarget::Crra071 => UtilityModel::crra(0.71),
            NamedTarget::CrraNeg5 => UtilityModel::crra(-5.0),
            NamedTarget::Cara01 => UtilityModel::cara(0.1),
            NamedTarget::Cara2 => UtilityModel::cara(2.0),
            NamedTarget::Prospect => UtilityModel::prospect(0.88, 0.88, 2.25, 500.0),
        }
    }

    /// Published oracle accuracy on two-option questions.
    pub fn oracle_two_option(self) -> f64 {
        match self {
            NamedTarget::CrraLog => 0.9431,
            NamedTarget::Crra071 => 0.9683,
            NamedTarget::CrraNeg5 => 0.9987,
            NamedTarget::Cara01 => 0.9868,
            NamedTarget::Cara2 => 0.9855,
            NamedTarget::Prospect => 0.9469,
        }
    }

    /// Published oracle accuracy on four-option questions.
    pub fn oracle_four_option(self) -> f64 {
        match self {
            NamedTarget::CrraLog => 0.8624,
            NamedTarget::Crra071 => 0.9232,
            NamedTarget::CrraNeg5 => 0.9961,
            NamedTarget::Cara01 => 0.9600,
            NamedTarget::Cara2 => 0.9614,
            NamedTarget::Prospect => 0.8394,
        }
    }

    pub fn oracle(self, mode: QuestionMode) -> f64 {
        match mode {
            QuestionMode::FourOption => self.oracle_four_option(),
            _ => self.oracle_two_option(),
        }
    }

    /// Sensitivity matching the published oracle rate on a fresh
    /// calibration set drawn with `seed`.
    pub fn calibrated_beta(self, mode: QuestionMode, seed: u64) -> Result<f64> {
        let mode = if mode == QuestionMode::SameEv { QuestionMode::DiffEv } else { mode };
        let qs = generate_dataset(&GeneratorConfig::with_seed(seed), mode, CALIBRATION_QUESTIONS)?;
        Ok(calibrate_beta(&self.utility(), &WeightingScheme::None, &qs, self.oracle(mode))?.beta)
    }
}

impl fmt::Display for NamedTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Labels drawn from the choice law.
    #[default]
    Sampled,
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    pub model: ChoiceModelSpec,
    #[serde(default)]
    pub label_mode: LabelMode,
}

impl TargetSpec {
    pub fn named(target: NamedTarget, beta: f64, label_mode: LabelMode) -> Self {
        Self { name: target.key().to_string(), model: ChoiceModelSpec::new(target.utility(), beta), label_mode }
    }

    pub fn custom(name: impl Into<String>, model: ChoiceModelSpec, label_mode: LabelMode) -> Self {
        Self { name: name.into(), model, label_mode }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

fn require_pairs(questions: &[ChoiceQuestion]) -> Result<()> {
    match questions.iter().find(|q| q.option_count() != 2) {
        Some(q) => Err(Error::Config(format!("question {} is not a two-option question", q.id))),
        None => Ok(()),
    }
}

/// One SFT record per question, in input order. Sampled labels use the
/// question's own random stream under `seed`.
pub fn emit_sft(questions: &[ChoiceQuestion], target: &TargetSpec, seed: u64) -> Result<Vec<SftRecord>> {
    require_pairs(questions)?;
    let streams = GeneratorConfig::with_seed(seed);
    questions
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let idx = match target.label_mode {
                LabelMode::Argmax => predict(&target.model, q)?,
                LabelMode::Sampled => sample_choice(&target.model, q, &mut streams.stream(i as u64))?,
            };
            Ok(SftRecord { prompt: sft_prompt(q), completion: q.labels[idx].clone() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpoOutput {
    pub records: Vec<DpoRecord>,
    pub dropped_ties: usize,
}

/// One preference triple per question whose options differ in utility;
/// ties are dropped and counted.
pub fn emit_dpo(questions: &[ChoiceQuestion], target: &TargetSpec) -> Result<DpoOutput> {
    require_pairs(questions)?;
    let rows: Vec<Option<DpoRecord>> = questions
        .par_iter()
        .map(|q| {
            let u = target.model.option_utilities(q)?;
            if u[0] == u[1] {
                return Ok(None);
            }
            let (c, r) = if u[0] > u[1] { (0, 1) } else { (1, 0) };
            Ok(Some(DpoRecord { prompt: sft_prompt(q), chosen: q.labels[c].clone(), rejected: q.labels[r].clone() }))
        })
        .collect::<Result<_>>()?;
    let dropped_ties = rows.iter().filter(|r| r.is_none()).count();
    Ok(DpoOutput { records: rows.into_iter().flatten().collect(), dropped_ties })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::Lottery;

    fn questions(n: usize) -> Vec<ChoiceQuestion> {
        generate_dataset(&GeneratorConfig::with_seed(21), QuestionMode::DiffEv, n).unwrap()
    }

    #[test]
    fn named_targets_resolve() {
        assert_eq!(NamedTarget::Crra071.utility(), UtilityModel::crra(0.71));
        assert_eq!(NamedTarget::Prospect.utility().params(), &[0.88, 0.88, 2.25, 500.0]);
        for t in NamedTarget::ALL {
            assert_eq!(NamedTarget::parse(t.key()), Some(t));
        }
    }

    #[test]
    fn sft_prompt_and_argmax_linear() {
        let qs = questions(300);
        let t = TargetSpec::custom("linear", ChoiceModelSpec::new(UtilityModel::linear(), 1.0), LabelMode::Argmax);
        let recs = emit_sft(&qs, &t, 0).unwrap();
        assert_eq!(recs.len(), qs.len());
        for (r, q) in recs.iter().zip(&qs) {
            assert!(r.prompt.starts_with("You are an economic decision-making agent."));
            let idx = q.index_of_label(&r.completion).unwrap();
            assert!(q.moments[idx].ev >= q.moments[1 - idx].ev);
        }
    }

    #[test]
    fn dpo_prefers_higher_utility() {
        let qs = questions(500);
        let t = TargetSpec::named(NamedTarget::CrraNeg5, 1.0, LabelMode::Sampled);
        let out = emit_dpo(&qs, &t).unwrap();
        assert_eq!(out.records.len() + out.dropped_ties, qs.len());
        for (r, q) in out.records.iter().zip(&qs) {
            let u = t.model.option_utilities(q).unwrap();
            assert!(u[q.index_of_label(&r.chosen).unwrap()] > u[q.index_of_label(&r.rejected).unwrap()]);
        }
    }

    #[test]
    fn dpo_tie_is_dropped() {
        let q = ChoiceQuestion::new(
            "t",
            QuestionMode::SameEv,
            vec![Lottery::from_pairs(&[(300.0, 0.5), (100.0, 0.5)]).unwrap(), Lottery::sure(200.0).unwrap()],
        )
        .unwrap();
        let t = TargetSpec::custom("linear", ChoiceModelSpec::new(UtilityModel::linear(), 1.0), LabelMode::Argmax);
        let out = emit_dpo(&[q], &t).unwrap();
        assert_eq!((out.records.len(), out.dropped_ties), (0, 1));
    }

    #[test]
    fn dpo_ignores_presentation_order() {
        let qs = questions(50);
        let t = TargetSpec::named(NamedTarget::Crra071, 1.0, LabelMode::Argmax);
        let a = emit_dpo(&qs, &t).unwrap();
        let swapped: Vec<ChoiceQuestion> = qs.iter().map(|q| q.relabeled(vec!["B".into(), "A".into()]).unwrap()).collect();
        let b = emit_dpo(&swapped, &t).unwrap();
        for ((ra, rb), q) in a.records.iter().zip(&b.records).zip(&qs) {
            let sq = q.relabeled(vec!["B".into(), "A".into()]).unwrap();
            assert_eq!(q.index_of_label(&ra.chosen), sq.index_of_label(&rb.chosen));
        }
    }

    #[test]
    fn dpo_schema_is_exact() {
        let v = serde_json::to_value(DpoRecord { prompt: "p".into(), chosen: "A".into(), rejected: "B".into() }).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["chosen", "prompt", "rejected"]);
    }

    #[test]
    fn rejects_four_option_questions() {
        let qs = generate_dataset(&GeneratorConfig::with_seed(1), QuestionMode::FourOption, 3).unwrap();
        let t = TargetSpec::named(NamedTarget::CrraLog, 1.0, LabelMode::Argmax);
        assert!(emit_sft(&qs, &t, 0).is_err());
        assert!(emit_dpo(&qs, &t).is_err());
    }
}
