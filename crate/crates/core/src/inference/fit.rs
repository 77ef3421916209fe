//! Sampling driver, per-family fits and the held-out leaderboard.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{accuracy, predict, ChoiceModelSpec};
use crate::error::{Error, Result};
use crate::inference::diagnostics::{diagnostics, Diagnostics};
use crate::inference::nuts::{run_chain, NutsSettings};
use crate::inference::posterior::Posterior;
use crate::inference::priors::PriorSpec;
use crate::inference::summary::{summarize, ParamSummary};
use crate::lottery::ChoiceQuestion;
use crate::utility::{Family, UtilityModel, WeightingKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub draws: usize,
    pub tune: usize,
    pub chains: usize,
    pub target_accept: f64,
    pub seed: u64,
    pub rhat_fail_threshold: f64,
    pub max_tree_depth: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { draws: 3000, tune: 1500, chains: 6, target_accept: 0.97, seed: 0, rhat_fail_threshold: 1.05, max_tree_depth: 10 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws < 4 || self.chains == 0 || self.max_tree_depth == 0 {
            return Err(Error::Config("draws >= 4, chains >= 1 and max_tree_depth >= 1 required".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        if !(self.rhat_fail_threshold > 1.0) {
            return Err(Error::Config("rhat_fail_threshold must exceed 1".into()));
        }
        Ok(())
    }
}

/// Posterior draws on the constrained scale: `draws[chain][draw][param]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chains {
    pub names: Vec<String>,
    pub draws: Vec<Vec<Vec<f64>>>,
    pub divergences: usize,
    pub step_sizes: Vec<f64>,
}

impl Chains {
    /// Per-parameter traces: `out[param][chain][draw]`.
    pub fn traces(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.names.len())
            .map(|k| self.draws.iter().map(|c| c.iter().map(|d| d[k]).collect()).collect())
            .collect()
    }

    pub fn pooled(&self, k: usize) -> Vec<f64> {
        self.draws.iter().flat_map(|c| c.iter().map(move |d| d[k])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerFailure(pub String);

/// Runs `config.chains` seeded chains in parallel. Reported quantities are the
/// sampled parameters followed by derived model parameters.
pub fn run_mcmc(posterior: &Posterior, config: &SamplerConfig) -> Result<Chains, SamplerFailure> {
    let dim = posterior.dim();
    let priors = posterior.priors().clone();
    let derived = priors.derived();
    let mut names = posterior.names();
    names.extend(derived.iter().map(|(n, _)| n.clone()));
    let grad = posterior.clone().into_grad_fn();
    let settings = NutsSettings {
        tune: config.tune,
        draws: config.draws,
        target_accept: config.target_accept,
        max_tree_depth: config.max_tree_depth,
    };
    let outputs: Vec<_> = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(c as u64);
            run_chain(&grad, dim, &settings, None, &mut rng)
        })
        .collect();
    let mut draws = Vec::with_capacity(config.chains);
    let mut divergences = 0;
    let mut step_sizes = Vec::new();
    for (c, out) in outputs.into_iter().enumerate() {
        let out = out.map_err(|_| SamplerFailure(format!("chain {c}: no finite starting point found")))?;
        divergences += out.divergences;
        step_sizes.push(out.step_size);
        draws.push(
            out.draws
                .iter()
                .map(|z| {
                    let mut x = posterior.constrain(z);
                    let (model, _, _) = priors.assemble(&x);
                    x.extend(derived.iter().map(|(_, i)| model[*i]));
                    x
                })
                .collect(),
        );
    }
    Ok(Chains { names, draws, divergences, step_sizes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    #[serde(default)]
    pub weighting: WeightingKind,
    pub status: FitStatus,
    pub params: BTreeMap<String, ParamSummary>,
    pub diagnostics: Option<Diagnostics>,
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_estimate: Option<ChoiceModelSpec>,
}

impl FitResult {
    fn failed(family: Family, weighting: WeightingKind, message: String) -> Self {
        Self {
            family,
            weighting,
            status: FitStatus::Failed,
            params: BTreeMap::new(),
            diagnostics: None,
            accuracy: None,
            message: Some(message),
            point_estimate: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == FitStatus::Ok
    }

    pub fn label(&self) -> String {
        match self.weighting {
            WeightingKind::None => self.family.to_string(),
            WeightingKind::Prelec => format!("{} + Prelec", self.family),
            WeightingKind::GonzalezWu => format!("{} + Gonzalez-Wu", self.family),
        }
    }
}

pub fn max_reward(data: &[(&ChoiceQuestion, usize)]) -> f64 {
    data.iter().map(|(q, _)| q.max_reward()).fold(0.0, f64::max)
}

/// Fits one family: sampling, diagnostics, summaries and the posterior-mean
/// point estimate. Held-out accuracy is left empty.
pub fn fit_family(
    family: Family,
    weighting: WeightingKind,
    priors: &PriorSpec,
    train: &[(&ChoiceQuestion, usize)],
    config: &SamplerConfig,
) -> Result<FitResult> {
    config.validate()?;
    priors.validate()?;
    let fp = priors.for_family(family, weighting);
    let posterior = Posterior::new(fp.clone(), train, priors.epsilon)?;
    let chains = match run_mcmc(&posterior, config) {
        Ok(c) => c,
        Err(SamplerFailure(msg)) => return Ok(FitResult::failed(family, weighting, msg)),
    };
    let diag = if config.chains >= 2 {
        Some(diagnostics(&chains.traces(), chains.divergences)?)
    } else {
        None
    };
    let mut params = BTreeMap::new();
    let mut means = Vec::with_capacity(chains.names.len());
    for (k, name) in chains.names.iter().enumerate() {
        let s = summarize(&chains.pooled(k))?;
        means.push(s.mean);
        params.insert(name.clone(), s);
    }
    let (model, w, beta) = fp.assemble(&means[..posterior.dim()]);
    let point = UtilityModel::new(family, model)?.with_epsilon(priors.epsilon);
    let point = ChoiceModelSpec::new(point, beta).with_weighting(weighting.with_params(&w));

    let mut status = FitStatus::Ok;
    let mut message = None;
    if let Some(d) = &diag {
        if !(d.max_rhat <= config.rhat_fail_threshold) {
            status = FitStatus::Failed;
            message = Some(format!("max R-hat {:.3} exceeds {}", d.max_rhat, config.rhat_fail_threshold));
        }
    }
    if means.iter().any(|m| !m.is_finite()) {
        status = FitStatus::Failed;
        message = Some("non-finite posterior mean".into());
    }
    Ok(FitResult { family, weighting, status, params, diagnostics: diag, accuracy: None, message, point_estimate: Some(point) })
}

/// Accuracy of the posterior-mean model on labelled data.
pub fn evaluate(spec: &ChoiceModelSpec, data: &[(&ChoiceQuestion, usize)]) -> Result<f64> {
    let preds: Vec<usize> = data.iter().map(|(q, _)| predict(spec, q)).collect::<Result<_>>()?;
    let labels: Vec<usize> = data.iter().map(|(_, c)| *c).collect();
    accuracy(&preds, &labels)
}

/// Fits every requested family on `train`, scores Ok fits on `test` and
/// returns them ranked by held-out accuracy with failed fits last.
pub fn fit_all_families(
    train: &[(&ChoiceQuestion, usize)],
    test: &[(&ChoiceQuestion, usize)],
    families: &[(Family, WeightingKind)],
    priors: &PriorSpec,
    config: &SamplerConfig,
) -> Result<Vec<FitResult>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("train or test data"));
    }
    let train_ids: HashSet<&str> = train.iter().map(|(q, _)| q.id.as_str()).collect();
    if let Some((q, _)) = test.iter().find(|(q, _)| train_ids.contains(q.id.as_str())) {
        return Err(Error::Config(format!("question {} appears in both train and test", q.id)));
    }
    let priors = PriorSpec { max_reward: max_reward(train), ..priors.clone() };
    let mut results: Vec<FitResult> = families
        .par_iter()
        .map(|&(family, kind)| {
            let mut r = fit_family(family, kind, &priors, train, config)?;
            if r.is_ok() {
                match r.point_estimate.as_ref().map(|p| evaluate(p, test)) {
                    Some(Ok(acc)) => r.accuracy = Some(acc),
                    Some(Err(e)) => {
                        r.status = FitStatus::Failed;
                        r.message = Some(format!("prediction failed: {e}"));
                    }
                    None => {}
                }
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    results.sort_by(|a, b| match (a.accuracy.filter(|_| a.is_ok()), b.accuracy.filter(|_| b.is_ok())) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(results)
}

/// Best Ok entry of a leaderboard.
pub fn best_fit(board: &[FitResult]) -> Option<&FitResult> {
    board.iter().find(|r| r.is_ok() && r.accuracy.is_some())
}

fn fmt_acc(r: &FitResult) -> String {
    match (r.status, r.accuracy) {
        (FitStatus::Ok, Some(a)) => format!("{:.1}", 100.0 * a),
        _ => "N/A".to_string(),
    }
}

/// Long-format leaderboard: one row per fit.
pub fn write_leaderboard_csv(w: impl Write, board: &[FitResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["rank", "model", "status", "accuracy", "max_rhat", "divergences", "min_ess"])?;
    for (i, r) in board.iter().enumerate() {
        let d = r.diagnostics;
        wtr.write_record([
            (i + 1).to_string(),
            r.label(),
            format!("{:?}", r.status).to_lowercase(),
            fmt_acc(r),
            d.map(|d| format!("{:.4}", d.max_rhat)).unwrap_or_default(),
            d.map(|d| d.divergences.to_string()).unwrap_or_default(),
            d.map(|d| format!("{:.0}", d.min_ess)).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Wide accuracy table: one row per data source, one column per model.
pub fn write_accuracy_table(w: impl Write, rows: &[(String, Vec<FitResult>)]) -> Result<()> {
    let mut columns: Vec<String> = Vec::new();
    for (_, board) in rows {
        for r in board {
            if !columns.contains(&r.label()) {
                columns.push(r.label());
            }
        }
    }
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["Model".to_string()];
    header.extend(columns.iter().cloned());
    wtr.write_record(&header)?;
    for (name, board) in rows {
        let mut row = vec![name.clone()];
        for col in &columns {
            row.push(board.iter().find(|r| &r.label() == col).map(fmt_acc).unwrap_or_else(|| "N/A".into()));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
