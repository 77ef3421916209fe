use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use riskprof::agents::{run_lottery, run_survey, Agent, AgentConfig, IclExample, LotteryAnswer, PromptSpec, PromptTag, SessionOptions, Tone};
use riskprof::align::{emit_dpo, emit_sft, NamedTarget};
use riskprof::choice::{accuracy, calibrate_beta, predict, simulate_choices, ChoiceModelSpec, ChoiceRecord};
use riskprof::inference::{best_fit, fit_all_families, write_leaderboard_csv, FitResult, SamplerConfig};
use riskprof::lottery::{generate_dataset, read_jsonl, write_jsonl, write_questions_csv};
use riskprof::questionnaire::{
    dospert_items, grable_lytton_items, load_items, read_response_log, score_dospert, summarize_grable_lytton,
    write_radar_csv, write_response_rows, QuestionnaireItem, SurveyResponse,
};
use riskprof::utility::{eval_utility, WeightingKind};
use riskprof::{ChoiceQuestion, Family, GeneratorConfig, QuestionMode, UtilityModel};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{write_atomic, write_json, AppendLog};
use crate::{CalibrateArgs, Cli, Command, CurvesArgs, EmitArgs, EvalArgs, FitArgs, GenArgs, SimulateArgs, SurveyArgs, TargetArgs};

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
}

impl Ctx<'_> {
    fn seed(&self) -> Result<u64> {
        self.cli.seed.or(self.cfg.seed).context("this command needs a seed (--seed or `seed` in the config)")
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cli.out_dir.join(name)
    }

    fn generator(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig { seed, ..self.cfg.generator.clone() }
    }

    fn target(&self, t: &TargetArgs, label: Option<crate::LabelArg>, mode: QuestionMode) -> Result<riskprof::align::TargetSpec> {
        let seed = self.cli.seed.or(self.cfg.seed).unwrap_or(0);
        self.cfg.resolve_target(t.target.as_deref(), t.beta, label.map(Into::into), mode, seed)
    }

    /// A synthetic agent when a target is given on the command line or no
    /// `[agent]` section exists; otherwise the configured agent.
    fn agent(&self, t: &TargetArgs, mode: QuestionMode) -> Result<Agent> {
        let config = match (&t.target, &self.cfg.agent) {
            (None, Some(a)) if t.beta.is_none() => a.clone(),
            _ => {
                let target = self.target(t, None, mode)?;
                let mut a = AgentConfig::synthetic(target.model, self.seed()?);
                a.id = Some(target.name);
                a
            }
        };
        Ok(Agent::from_config(&config)?)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx { cli, cfg: RunConfig::load(cli.config.as_deref())? };
    match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::EmitSft(a) => emit(&ctx, a, false),
        Command::EmitDpo(a) => emit(&ctx, a, true),
        Command::SurveyGl(a) => survey(&ctx, a, false),
        Command::SurveyDospert(a) => survey(&ctx, a, true),
        Command::CalibrateBeta(a) => calibrate(&ctx, a),
        Command::ExportCurves(a) => curves(&ctx, a),
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |w| Ok(write_jsonl(w, rows)?))
}

fn dataset_mode(questions: &[ChoiceQuestion]) -> QuestionMode {
    questions.first().map(|q| q.mode).unwrap_or(QuestionMode::DiffEv)
}

fn gen(ctx: &Ctx, a: &GenArgs) -> Result<()> {
    let mode: QuestionMode = a.mode.into();
    let cfg = ctx.generator(ctx.seed()?);
    let qs = generate_dataset(&cfg, mode, a.n)?;
    write_rows(&ctx.out(&format!("{}.jsonl", mode.key())), &qs)?;
    if a.csv {
        write_atomic(&ctx.out(&format!("{}.csv", mode.key())), |w| Ok(write_questions_csv(w, &qs)?))?;
    }
    println!("generated {} {} questions", qs.len(), mode.key());
    Ok(())
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let questions: Vec<ChoiceQuestion> = read_rows(&a.questions)?;
    ensure!(!questions.is_empty(), "{} holds no questions", a.questions.display());
    let agent = ctx.agent(&a.target, dataset_mode(&questions))?;
    let pool: Vec<IclExample> = match &a.icl_pool {
        Some(p) => read_rows(p)?,
        None => Vec::new(),
    };
    let prompt = PromptSpec { tone: None, icl_examples: a.icl, chat_style: !a.plain };

    let log_path = ctx.out("answers.jsonl");
    let existing: Vec<LotteryAnswer> = match (a.resume, log_path.exists()) {
        (true, true) => read_rows(&log_path)?,
        (false, true) => {
            std::fs::remove_file(&log_path)?;
            Vec::new()
        }
        _ => Vec::new(),
    };
    let mut log = AppendLog::open(&log_path)?;
    let answers = run_lottery(&agent, &questions, &prompt, &pool, &SessionOptions::repeats(a.repeats), &existing, &mut |rows| {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, rows)?;
        log.append(&buf).map_err(|e| riskprof::Error::Config(e.to_string()))
    })?;
    let records = riskprof::agents::lottery_records(&questions, &answers)?;
    write_rows(&ctx.out("choices.jsonl"), &records)?;
    let invalid = answers.len() - records.len();
    println!("{}: {} answers, {} invalid", agent.id(), answers.len(), invalid);
    Ok(())
}

fn parse_families(s: &str) -> Result<Vec<Family>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Family::ALL.to_vec());
    }
    s.split(',').map(|f| Family::parse(f).with_context(|| format!("unknown family {f:?}"))).collect()
}

fn parse_weighting(s: &str) -> Result<Vec<WeightingKind>> {
    let all = [WeightingKind::None, WeightingKind::Prelec, WeightingKind::GonzalezWu];
    let mut out = Vec::new();
    for w in s.split(',') {
        match w.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "all" => out.extend(all),
            "none" => out.push(WeightingKind::None),
            "prelec" => out.push(WeightingKind::Prelec),
            "gonzalez-wu" | "gw" => out.push(WeightingKind::GonzalezWu),
            other => bail!("unknown weighting {other:?}"),
        }
    }
    let set: BTreeSet<WeightingKind> = out.into_iter().collect();
    Ok(set.into_iter().collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct FitReport {
    train: usize,
    test: usize,
    best: Option<String>,
    results: Vec<FitResult>,
}

fn fit(ctx: &Ctx, a: &FitArgs) -> Result<()> {
    let questions: Vec<ChoiceQuestion> = read_rows(&a.questions)?;
    let records: Vec<ChoiceRecord> = read_rows(&a.choices)?;
    let data = riskprof::choice::join_records(&questions, &records)?;
    let n_train = a.train.unwrap_or(data.len() * 3 / 4);
    ensure!(n_train > 0 && n_train < data.len(), "need at least one train and one test record ({} available)", data.len());
    let (train, test) = data.split_at(n_train);

    let families = parse_families(&a.families)?;
    let weightings = parse_weighting(&a.weighting)?;
    let grid: Vec<(Family, WeightingKind)> = families.iter().flat_map(|&f| weightings.iter().map(move |&w| (f, w))).collect();

    let mut priors = ctx.cfg.priors.clone();
    priors.wide_crra |= a.wide_crra;
    if let Some(r) = a.reference {
        priors.prospect_reference = r;
    }
    let base = &ctx.cfg.sampler;
    let sampler = SamplerConfig {
        draws: a.draws.unwrap_or(base.draws),
        tune: a.tune.unwrap_or(base.tune),
        chains: a.chains.unwrap_or(base.chains),
        max_tree_depth: a.max_tree_depth.unwrap_or(base.max_tree_depth),
        seed: ctx.cli.seed.unwrap_or(base.seed),
        ..base.clone()
    };
    let board = fit_all_families(train, test, &grid, &priors, &sampler)?;
    let best = best_fit(&board).map(FitResult::label);
    write_atomic(&ctx.out("leaderboard.csv"), |w| Ok(write_leaderboard_csv(w, &board)?))?;
    write_json(&ctx.out("fits.json"), &FitReport { train: train.len(), test: test.len(), best: best.clone(), results: board })?;
    println!("best: {}", best.as_deref().unwrap_or("none"));
    Ok(())
}

fn best_model(path: &Path) -> Result<(String, ChoiceModelSpec)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let report: FitReport = serde_json::from_reader(BufReader::new(f))?;
    let best = best_fit(&report.results).context("report has no successful fit")?;
    Ok((best.label(), best.point_estimate.clone().context("best fit has no point estimate")?))
}

#[derive(Debug, Serialize)]
struct EvalReport {
    predictions: String,
    labels: String,
    n: usize,
    accuracy: f64,
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let questions: Vec<ChoiceQuestion> = read_rows(&a.questions)?;
    let mode = dataset_mode(&questions);
    let by_label = |records: &[ChoiceRecord]| -> Result<Vec<(String, usize)>> {
        Ok(riskprof::choice::join_records(&questions, records)?.into_iter().map(|(q, c)| (q.id.clone(), c)).collect())
    };
    let argmax = |spec: &ChoiceModelSpec, ids: &[String]| -> Result<Vec<usize>> {
        let index: std::collections::HashMap<&str, &ChoiceQuestion> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
        ids.iter().map(|id| Ok(predict(spec, index[id.as_str()])?)).collect()
    };

    let (labels_name, labels): (String, Option<Vec<(String, usize)>>) = match &a.labels {
        Some(p) => (p.display().to_string(), Some(by_label(&read_rows(p)?)?)),
        None => (String::new(), None),
    };
    let (pred_name, preds, ids) = match (&a.choices, &a.fits) {
        (Some(p), _) => {
            let rows = by_label(&read_rows(p)?)?;
            let ids: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
            (p.display().to_string(), rows.into_iter().map(|r| r.1).collect::<Vec<_>>(), ids)
        }
        (None, Some(f)) => {
            let (name, spec) = best_model(f)?;
            let ids: Vec<String> = match &labels {
                Some(l) => l.iter().map(|r| r.0.clone()).collect(),
                None => questions.iter().map(|q| q.id.clone()).collect(),
            };
            (name, argmax(&spec, &ids)?, ids)
        }
        (None, None) => bail!("nothing to evaluate (use --choices or --fits)"),
    };
    let (labels_name, label_idx) = match labels {
        Some(l) => {
            ensure!(l.len() == ids.len() && l.iter().zip(&ids).all(|(r, id)| &r.0 == id), "predictions and labels cover different questions");
            (labels_name, l.into_iter().map(|r| r.1).collect::<Vec<_>>())
        }
        None => {
            let target = ctx.target(&a.target, None, mode)?;
            (format!("{} (argmax)", target.name), argmax(&target.model, &ids)?)
        }
    };
    let acc = accuracy(&preds, &label_idx)?;
    write_json(&ctx.out("eval.json"), &EvalReport { predictions: pred_name, labels: labels_name, n: preds.len(), accuracy: acc })?;
    println!("accuracy {:.4} on {} questions", acc, preds.len());
    Ok(())
}

fn emit(ctx: &Ctx, a: &EmitArgs, dpo: bool) -> Result<()> {
    let questions: Vec<ChoiceQuestion> = read_rows(&a.questions)?;
    let target = ctx.target(&a.target, a.label_mode, dataset_mode(&questions))?;
    if dpo {
        let out = emit_dpo(&questions, &target)?;
        write_rows(&ctx.out("dpo.jsonl"), &out.records)?;
        println!("{}: {} records, {} ties dropped", target.name, out.records.len(), out.dropped_ties);
    } else {
        let records = emit_sft(&questions, &target, ctx.seed()?)?;
        write_rows(&ctx.out("sft.jsonl"), &records)?;
        println!("{}: {} records", target.name, records.len());
    }
    Ok(())
}

fn survey_prompts(a: &SurveyArgs) -> Result<Vec<PromptSpec>> {
    let mut tags: Vec<PromptTag> = Vec::new();
    for t in &a.tones {
        let tone = Tone::parse(t).with_context(|| format!("unknown tone {t:?}"))?;
        tags.extend(PromptTag::all_of(tone));
    }
    for p in &a.prompts {
        tags.push(p.parse()?);
    }
    let mut seen = BTreeSet::new();
    tags.retain(|t| seen.insert(t.to_string()));
    if tags.is_empty() {
        return Ok(vec![PromptSpec::default()]);
    }
    Ok(tags.into_iter().map(PromptSpec::with_tone).collect())
}

fn survey(ctx: &Ctx, a: &SurveyArgs, dospert: bool) -> Result<()> {
    let items: Vec<QuestionnaireItem> = match &a.items {
        Some(p) => load_items(File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        None if dospert => dospert_items(),
        None => grable_lytton_items(),
    };
    let agent = ctx.agent(&a.target, QuestionMode::DiffEv)?;
    let prompts = survey_prompts(a)?;
    let stem = if dospert { "dospert" } else { "gl" };

    let log_path = ctx.out(&format!("{stem}_responses.csv"));
    let existing: Vec<SurveyResponse> = if log_path.exists() {
        let (model, rows) = read_response_log(File::open(&log_path)?)?;
        if let Some(m) = model.filter(|m| m != agent.id()) {
            bail!("{} belongs to agent {m:?}, not {:?}", log_path.display(), agent.id());
        }
        rows
    } else {
        Vec::new()
    };
    let mut log = AppendLog::open(&log_path)?;
    let id = agent.id().to_string();
    let responses = run_survey(&agent, &items, &prompts, &SessionOptions::repeats(a.repeats), &existing, &mut |rows| {
        let mut buf = Vec::new();
        write_response_rows(&mut buf, &id, &items, rows, !log.had_content)?;
        log.append(&buf).map_err(|e| riskprof::Error::Config(e.to_string()))
    })?;

    if dospert {
        let scores = score_dospert(&items, &responses)?;
        write_atomic(&ctx.out("dospert_radar.csv"), |w| Ok(write_radar_csv(w, &scores)?))?;
        write_json(&ctx.out("dospert_scores.json"), &scores)?;
        for d in &scores.domains {
            if let Some(m) = d.mean {
                println!("{} {} {:.2}", d.domain.key(), d.dimension.key(), m);
            }
        }
    } else {
        let overall = summarize_grable_lytton(&items, &responses)?;
        let mut rows = vec![("all".to_string(), overall.clone())];
        if prompts.len() > 1 {
            for p in &prompts {
                let subset: Vec<SurveyResponse> = responses.iter().filter(|r| r.prompt_tone == p.tone).cloned().collect();
                if let Ok(s) = summarize_grable_lytton(&items, &subset) {
                    rows.push((p.tone.map(|t| t.to_string()).unwrap_or_default(), s));
                }
            }
        }
        write_atomic(&ctx.out("gl_summary.csv"), |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["prompt", "valid_runs", "dropped_runs", "mean", "sd", "category"])?;
            for (name, s) in &rows {
                out.write_record([
                    name.clone(),
                    s.valid_runs.to_string(),
                    s.dropped_runs.to_string(),
                    format!("{:.4}", s.mean),
                    format!("{:.4}", s.sd),
                    s.category.label().to_string(),
                ])?;
            }
            out.flush()?;
            Ok(())
        })?;
        write_json(&ctx.out("gl_summary.json"), &overall)?;
        println!("{}: mean {:.2} (sd {:.2}) {}", id, overall.mean, overall.sd, overall.category.label());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CalibrationRow {
    target: String,
    mode: String,
    beta: f64,
    oracle: f64,
    expected_accuracy: f64,
    eval_accuracy: Option<f64>,
}

fn calibrate(ctx: &Ctx, a: &CalibrateArgs) -> Result<()> {
    let mode: QuestionMode = a.mode.into();
    let seed = ctx.seed()?;
    let targets: Vec<NamedTarget> = if a.targets.is_empty() {
        NamedTarget::ALL.to_vec()
    } else {
        a.targets.iter().map(|t| NamedTarget::parse(t).with_context(|| format!("unknown target {t:?}"))).collect::<Result<_>>()?
    };
    let cal_set = generate_dataset(&ctx.generator(seed), mode, a.n)?;
    let eval_set = if a.eval_n > 0 { generate_dataset(&ctx.generator(seed.wrapping_add(1)), mode, a.eval_n)? } else { Vec::new() };
    let mut rows = Vec::new();
    for t in targets {
        let c = calibrate_beta(&t.utility(), &Default::default(), &cal_set, t.oracle(mode))?;
        let eval_accuracy = if eval_set.is_empty() {
            None
        } else {
            let spec = ChoiceModelSpec::new(t.utility(), c.beta);
            let labels: Vec<usize> = simulate_choices(&spec, &eval_set, seed.wrapping_add(2))?.into_iter().map(|r| r.chosen_index).collect();
            let preds: Vec<usize> = eval_set.iter().map(|q| predict(&spec, q)).collect::<riskprof::Result<_>>()?;
            Some(accuracy(&preds, &labels)?)
        };
        println!(
            "{:<10} beta {:.6e}  oracle {:.2}  expected {:.2}  eval {}",
            t.key(),
            c.beta,
            100.0 * t.oracle(mode),
            100.0 * c.expected_accuracy,
            eval_accuracy.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
        );
        rows.push(CalibrationRow {
            target: t.key().to_string(),
            mode: mode.key().to_string(),
            beta: c.beta,
            oracle: t.oracle(mode),
            expected_accuracy: c.expected_accuracy,
            eval_accuracy,
        });
    }
    write_json(&ctx.out("calibration.json"), &rows)
}

fn curves(ctx: &Ctx, a: &CurvesArgs) -> Result<()> {
    ensure!(a.points >= 2 && a.min < a.max, "need at least two points on an increasing range");
    let mut models: Vec<(String, UtilityModel)> = Vec::new();
    if let Some(f) = &a.fits {
        let file = File::open(f).with_context(|| format!("opening {}", f.display()))?;
        let report: FitReport = serde_json::from_reader(BufReader::new(file))?;
        for r in report.results.iter().filter(|r| r.is_ok() && r.accuracy.is_some()).take(a.top) {
            if let Some(p) = &r.point_estimate {
                models.push((r.label(), p.utility.clone()));
            }
        }
    }
    for t in &a.targets {
        let t = NamedTarget::parse(t).with_context(|| format!("unknown target {t:?}"))?;
        models.push((t.key().to_string(), t.utility()));
    }
    if models.is_empty() {
        if let Some(m) = ctx.cfg.target.as_ref().and_then(|t| t.model.clone()) {
            models.push((m.utility.family().key().to_string(), m.utility));
        } else {
            models.extend(NamedTarget::ALL.iter().map(|t| (t.key().to_string(), t.utility())));
        }
    }
    let xs: Vec<f64> = (0..a.points).map(|i| a.min + (a.max - a.min) * i as f64 / (a.points - 1) as f64).collect();
    write_atomic(&ctx.out("curves.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "x", "u", "u_normalized"])?;
        for (name, m) in &models {
            let us: Vec<Option<f64>> = xs.iter().map(|&x| eval_utility(m, x).ok().filter(|u| u.is_finite())).collect();
            let lo = us.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
            let hi = us.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (x, u) in xs.iter().zip(&us) {
                let (u, n) = match u {
                    Some(u) if hi > lo => (format!("{u}"), format!("{}", (u - lo) / (hi - lo))),
                    Some(u) => (format!("{u}"), String::new()),
                    None => (String::new(), String::new()),
                };
                out.write_record([name.as_str(), &format!("{x}"), &u, &n])?;
            }
        }
        out.flush()?;
        Ok(())
    })?;
    println!("{} curves", models.len());
    Ok(())
}
