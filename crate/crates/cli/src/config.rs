use std::path::Path;

use anyhow::{bail, Context, Result};
use riskprof::agents::AgentConfig;
use riskprof::align::{LabelMode, NamedTarget, TargetSpec};
use riskprof::choice::ChoiceModelSpec;
use riskprof::inference::{PriorSpec, SamplerConfig};
use riskprof::{GeneratorConfig, QuestionMode};
use serde::Deserialize;

/// Contents of the `--config` TOML file. Every section is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub generator: GeneratorConfig,
    pub sampler: SamplerConfig,
    pub priors: PriorSpec,
    pub target: Option<TargetConfig>,
    pub agent: Option<AgentConfig>,
}

/// A named alignment target or a custom choice model.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub name: Option<String>,
    pub beta: Option<f64>,
    pub model: Option<ChoiceModelSpec>,
    pub label_mode: LabelMode,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.generator.validate()?;
        cfg.sampler.validate()?;
        cfg.priors.validate()?;
        Ok(cfg)
    }

    /// Resolves the target from command-line overrides and the `[target]`
    /// section. Named targets without an explicit sensitivity are calibrated
    /// against their published oracle rate.
    pub fn resolve_target(
        &self,
        name: Option<&str>,
        beta: Option<f64>,
        label_mode: Option<LabelMode>,
        mode: QuestionMode,
        seed: u64,
    ) -> Result<TargetSpec> {
        let section = self.target.clone().unwrap_or_default();
        let label_mode = label_mode.unwrap_or(section.label_mode);
        let beta = beta.or(section.beta);
        if let Some(n) = name.map(str::to_string).or(section.name.clone()) {
            if name.is_some() || section.model.is_none() {
                let t = NamedTarget::parse(&n).with_context(|| format!("unknown target {n:?}"))?;
                let beta = match beta {
                    Some(b) => b,
                    None => t.calibrated_beta(mode, seed)?,
                };
                return Ok(TargetSpec::named(t, beta, label_mode));
            }
        }
        match section.model {
            Some(mut model) => {
                if let Some(b) = beta {
                    model.beta_sensitivity = b;
                }
                let name = section.name.unwrap_or_else(|| model.utility.family().key().to_string());
                Ok(TargetSpec::custom(name, model, label_mode))
            }
            None => bail!("no target given (use --target or a [target] section)"),
        }
    }
}

pub fn parse_beta(s: &str) -> Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "argmax" => Ok(f64::INFINITY),
        t => match t.parse::<f64>() {
            Ok(b) if b > 0.0 => Ok(b),
            _ => Err(format!("invalid sensitivity {s:?}")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use riskprof::UtilityModel;

    #[test]
    fn parses_full_config() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 9
            [generator]
            ev_range = [100.0, 500.0]
            [sampler]
            draws = 200
            tune = 100
            chains = 2
            [priors]
            wide_crra = true
            [target]
            model = { utility = { family = "crra", params = { gamma = 0.5 } }, beta_sensitivity = inf }
            [agent]
            kind = "external"
            base_url = "http://localhost:9"
            model = "m"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.generator.ev_range, (100.0, 500.0));
        assert_eq!(cfg.sampler.chains, 2);
        assert!(cfg.priors.wide_crra);
        let t = cfg.resolve_target(None, None, None, QuestionMode::DiffEv, 0).unwrap();
        assert_eq!(t.model.utility, UtilityModel::crra(0.5));
        assert!(t.model.beta_sensitivity.is_infinite());
        assert!(cfg.agent.is_some());
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(toml::from_str::<RunConfig>("[generatr]\nseed = 1").is_err());
    }

    #[test]
    fn named_target_with_fixed_beta() {
        let t = RunConfig::default().resolve_target(Some("crra-0.71"), Some(0.5), None, QuestionMode::DiffEv, 0).unwrap();
        assert_eq!(t.name, "crra-0.71");
        assert_eq!(t.model.beta_sensitivity, 0.5);
        assert!(RunConfig::default().resolve_target(None, None, None, QuestionMode::DiffEv, 0).is_err());
    }

    #[test]
    fn beta_flag() {
        assert_eq!(parse_beta("inf"), Ok(f64::INFINITY));
        assert_eq!(parse_beta("0.25"), Ok(0.25));
        assert!(parse_beta("-1").is_err());
    }
}
