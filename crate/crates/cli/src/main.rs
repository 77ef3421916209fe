//! `riskprof`: command-line front end for the risk-profiling pipeline.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use riskprof::align::LabelMode;

use crate::config::parse_beta;

#[derive(Debug, Parser)]
#[command(name = "riskprof", version, about = "Profile and modulate the risk preferences of decision-making agents")]
pub struct Cli {
    /// TOML file with [generator], [sampler], [priors], [target] and [agent] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a lottery-choice dataset.
    Gen(GenArgs),
    /// Have an agent answer a lottery dataset.
    Simulate(SimulateArgs),
    /// Fit every utility family to choice data and rank them.
    Fit(FitArgs),
    /// Accuracy of a choice log or fitted model against reference labels.
    Eval(EvalArgs),
    /// Emit supervised fine-tuning records.
    EmitSft(EmitArgs),
    /// Emit preference triples.
    EmitDpo(EmitArgs),
    /// Run the Grable & Lytton questionnaire.
    SurveyGl(SurveyArgs),
    /// Run the DOSPERT questionnaire.
    SurveyDospert(SurveyArgs),
    /// Calibrate target sensitivities to their oracle accuracy.
    CalibrateBeta(CalibrateArgs),
    /// Sample utility curves for plotting.
    ExportCurves(CurvesArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    SameEv,
    DiffEv,
    Four,
}

impl From<ModeArg> for riskprof::QuestionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SameEv => riskprof::QuestionMode::SameEv,
            ModeArg::DiffEv => riskprof::QuestionMode::DiffEv,
            ModeArg::Four => riskprof::QuestionMode::FourOption,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelArg {
    Sampled,
    Argmax,
}

impl From<LabelArg> for LabelMode {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Sampled => LabelMode::Sampled,
            LabelArg::Argmax => LabelMode::Argmax,
        }
    }
}

/// Target selection shared by several commands.
#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    /// Named target: crra-1, crra-0.71, crra--5, cara-0.1, cara-2 or prospect.
    #[arg(long)]
    pub target: Option<String>,
    /// Sensitivity; "inf" for deterministic choices. Calibrated when omitted.
    #[arg(long, value_parser = parse_beta)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Also write a flattened CSV view.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub questions: PathBuf,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// In-context examples per prompt, drawn from --icl-pool.
    #[arg(long, default_value_t = 0)]
    pub icl: usize,
    /// JSONL of {question, chosen} examples.
    #[arg(long)]
    pub icl_pool: Option<PathBuf>,
    /// Plain-text prompts instead of chat messages.
    #[arg(long)]
    pub plain: bool,
    /// Keep answers already in answers.jsonl and ask only the missing ones.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub questions: PathBuf,
    #[arg(long)]
    pub choices: PathBuf,
    /// Records used for training; the rest are held out. Defaults to 75%.
    #[arg(long)]
    pub train: Option<usize>,
    /// Comma-separated families, or "all".
    #[arg(long, default_value = "all")]
    pub families: String,
    /// Probability weighting: none, prelec, gonzalez-wu or all.
    #[arg(long, default_value = "none")]
    pub weighting: String,
    /// Normal(0, 3) prior on the CRRA coefficient.
    #[arg(long)]
    pub wide_crra: bool,
    /// Prospect-theory reference point.
    #[arg(long)]
    pub reference: Option<f64>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub tune: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub max_tree_depth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub questions: PathBuf,
    /// Choice log to score.
    #[arg(long, conflicts_with = "fits")]
    pub choices: Option<PathBuf>,
    /// Score the best model of a fits.json report instead of a log.
    #[arg(long)]
    pub fits: Option<PathBuf>,
    /// Reference labels; the target's argmax choices when omitted.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(long)]
    pub questions: PathBuf,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, value_enum)]
    pub label_mode: Option<LabelArg>,
}

#[derive(Debug, Args)]
pub struct SurveyArgs {
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Prompt tag such as cautious-2; repeatable.
    #[arg(long = "prompt")]
    pub prompts: Vec<String>,
    /// Every variant of a tone (direct, cautious, aggressive); repeatable.
    #[arg(long = "tone")]
    pub tones: Vec<String>,
    /// Alternative item file.
    #[arg(long)]
    pub items: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Named targets; all six when omitted.
    #[arg(long = "target")]
    pub targets: Vec<String>,
    #[arg(long, value_enum, default_value = "diff-ev")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 5_000)]
    pub n: usize,
    /// Size of the fresh evaluation set; 0 skips evaluation.
    #[arg(long, default_value_t = 2_500)]
    pub eval_n: usize,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// Named targets; repeatable.
    #[arg(long = "target")]
    pub targets: Vec<String>,
    /// Plot the best fitted models of a fits.json report.
    #[arg(long)]
    pub fits: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    #[arg(long, default_value_t = 1.0)]
    pub min: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub max: f64,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
