//! Lottery-choice question generation and rendering.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::{Lottery, Outcome};

pub const CANONICAL_LABELS: [&str; 4] = ["A", "B", "C", "D"];
pub const QUESTION_HEADER: &str = "Which of the following options do you prefer?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub ev_range: (f64, f64),
    pub p_range: (f64, f64),
    /// Upper bound of the small reward as a fraction of EV.
    pub low_fraction: f64,
    pub ev_diff_min: f64,
    pub var_diff_min: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            ev_range: (100.0, 1000.0),
            p_range: (0.2, 0.8),
            low_fraction: 0.8,
            ev_diff_min: 0.05,
            var_diff_min: 0.10,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let (lo, hi) = self.ev_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("ev_range must be positive and ordered");
        }
        if lo.ceil() > hi.floor() {
            return bad("ev_range must contain an integer");
        }
        let (plo, phi) = self.p_range;
        if !(plo > 0.0 && plo <= phi && phi < 1.0) {
            return bad("p_range must lie inside (0, 1)");
        }
        if (plo * 100.0).ceil() > (phi * 100.0).floor() {
            return bad("p_range must contain a whole percentage");
        }
        if !(self.low_fraction > 0.0 && self.low_fraction < 1.0) {
            return bad("low_fraction must lie in (0, 1)");
        }
        for f in [self.ev_diff_min, self.var_diff_min] {
            if !(f > 0.0 && f < 1.0) {
                return bad("difference fractions must lie in (0, 1)");
            }
        }
        Ok(())
    }

    /// Independent, reproducible stream for the `index`-th item of a dataset.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionMode {
    #[serde(rename = "same-ev")]
    SameEv,
    #[serde(rename = "diff-ev")]
    DiffEv,
    #[serde(rename = "four")]
    FourOption,
}

impl QuestionMode {
    pub fn key(self) -> &'static str {
        match self {
            QuestionMode::SameEv => "same-ev",
            QuestionMode::DiffEv => "diff-ev",
            QuestionMode::FourOption => "four",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "same-ev" => Some(QuestionMode::SameEv),
            "diff-ev" => Some(QuestionMode::DiffEv),
            "four" | "four-option" => Some(QuestionMode::FourOption),
            _ => None,
        }
    }

    pub fn option_count(self) -> usize {
        match self {
            QuestionMode::FourOption => 4,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub ev: f64,
    pub variance: f64,
}

/// Mean and variance of the reward distribution.
pub fn lottery_moments(lottery: &Lottery) -> Moments {
    let ev: f64 = lottery.outcomes().iter().map(|o| o.prob * o.reward).sum();
    let variance = lottery.outcomes().iter().map(|o| o.prob * (o.reward - ev).powi(2)).sum();
    Moments { ev, variance }
}

/// Solves `ev = p * r1 + (1 - p) * r2` for the large reward.
pub fn solve_large_reward(ev: f64, p: f64, small: f64) -> f64 {
    (ev - (1.0 - p) * small) / p
}

/// A multiple-choice lottery question. `options` keep generation order and
/// `labels[i]` is the letter shown for `options[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuestionRepr", into = "QuestionRepr")]
pub struct ChoiceQuestion {
    pub id: String,
    pub mode: QuestionMode,
    pub options: Vec<Lottery>,
    pub labels: Vec<String>,
    pub moments: Vec<Moments>,
    pub text: String,
}

#[derive(Serialize, Deserialize)]
struct QuestionRepr {
    id: String,
    mode: QuestionMode,
    options: Vec<Lottery>,
    labels: Vec<String>,
    ev: Vec<f64>,
    variance: Vec<f64>,
    text: String,
}

impl TryFrom<QuestionRepr> for ChoiceQuestion {
    type Error = Error;
    fn try_from(r: QuestionRepr) -> Result<Self> {
        let n = r.options.len();
        if r.labels.len() != n || r.ev.len() != n || r.variance.len() != n {
            return Err(Error::Config(format!("question {}: per-option arrays disagree", r.id)));
        }
        let moments = r.ev.iter().zip(&r.variance).map(|(&ev, &variance)| Moments { ev, variance }).collect();
        let q = ChoiceQuestion { id: r.id, mode: r.mode, options: r.options, labels: r.labels, moments, text: r.text };
        q.check()?;
        Ok(q)
    }
}

impl From<ChoiceQuestion> for QuestionRepr {
    fn from(q: ChoiceQuestion) -> Self {
        QuestionRepr {
            ev: q.moments.iter().map(|m| m.ev).collect(),
            variance: q.moments.iter().map(|m| m.variance).collect(),
            id: q.id,
            mode: q.mode,
            options: q.options,
            labels: q.labels,
            text: q.text,
        }
    }
}

impl ChoiceQuestion {
    /// Builds a question with canonical labels (option `i` shown as the `i`-th letter).
    pub fn new(id: impl Into<String>, mode: QuestionMode, options: Vec<Lottery>) -> Result<Self> {
        let labels = CANONICAL_LABELS[..options.len().min(4)].iter().map(|s| s.to_string()).collect();
        Self::with_labels(id, mode, options, labels)
    }

    pub fn with_labels(id: impl Into<String>, mode: QuestionMode, options: Vec<Lottery>, labels: Vec<String>) -> Result<Self> {
        let moments = options.iter().map(lottery_moments).collect();
        let mut q = ChoiceQuestion { id: id.into(), mode, options, labels, moments, text: String::new() };
        q.check()?;
        q.text = render_question(&q);
        Ok(q)
    }

    fn check(&self) -> Result<()> {
        let n = self.options.len();
        if n != 2 && n != 4 {
            return Err(Error::Config(format!("question {}: {n} options (expected 2 or 4)", self.id)));
        }
        let mut sorted = self.labels.clone();
        sorted.sort();
        if sorted.iter().map(String::as_str).ne(CANONICAL_LABELS[..n].iter().copied()) {
            return Err(Error::Config(format!("question {}: labels are not a permutation of A..", self.id)));
        }
        for (o, m) in self.options.iter().zip(&self.moments) {
            let want = lottery_moments(o);
            if (want.ev - m.ev).abs() > 1e-9 * want.ev.abs().max(1.0)
                || (want.variance - m.variance).abs() > 1e-9 * want.variance.abs().max(1.0)
            {
                return Err(Error::Config(format!("question {}: stored moments disagree with outcomes", self.id)));
            }
        }
        Ok(())
    }

    pub fn option_count(&self) -> usize {
        self.options.len()
    }

    /// Option index shown under `label`.
    pub fn index_of_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.eq_ignore_ascii_case(label))
    }

    /// Option indices in presentation order (A, B, ...).
    pub fn presentation_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.options.len()).collect();
        order.sort_by(|&a, &b| self.labels[a].cmp(&self.labels[b]));
        order
    }

    pub fn max_reward(&self) -> f64 {
        self.options.iter().map(Lottery::max_reward).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same question with new labels; text is re-rendered.
    pub fn relabeled(&self, labels: Vec<String>) -> Result<Self> {
        Self::with_labels(self.id.clone(), self.mode, self.options.clone(), labels)
    }
}

fn fmt_money(x: f64) -> String {
    let r = x.round();
    if r < 0.0 {
        format!("-${}", -r)
    } else {
        format!("${r}")
    }
}

fn option_sentence(lottery: &Lottery) -> String {
    let parts: Vec<String> = lottery
        .outcomes()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let article = if i == 0 { "A" } else { "a" };
            format!("{article} {}% chance to win {}", (o.prob * 100.0).round(), fmt_money(o.reward))
        })
        .collect();
    let body = match parts.len() {
        1 => parts[0].clone(),
        n => format!("{} and {}", parts[..n - 1].join(", "), parts[n - 1]),
    };
    format!("{body}.")
}

/// Renders the header plus one `X: ...` line per option in label order.
pub fn render_question(question: &ChoiceQuestion) -> String {
    let mut lines = vec![QUESTION_HEADER.to_string()];
    lines.extend(render_option_lines(question));
    lines.join("\n")
}

pub(crate) fn render_option_lines(question: &ChoiceQuestion) -> Vec<String> {
    question
        .presentation_order()
        .into_iter()
        .map(|i| format!("{}: {}", question.labels[i], option_sentence(&question.options[i])))
        .collect()
}

fn draw_int(rng: &mut impl Rng, lo: f64, hi: f64) -> i64 {
    rng.random_range(lo.ceil() as i64..=hi.floor() as i64)
}

/// Small reward near `target` on the integer lattice that keeps the large
/// reward integral for the given EV and whole-percent probability.
fn lattice_small_reward(ev: i64, pct: i64, target: f64, upper: f64) -> Option<i64> {
    let fits = |r2: i64| r2 >= 1 && (r2 as f64) < upper && (100 * ev - (100 - pct) * r2).rem_euclid(pct) == 0;
    let start = target.round() as i64;
    (0..=pct).flat_map(|d| [start + d, start - d]).find(|&r| fits(r))
}

fn draw_lottery_with_ev(config: &GeneratorConfig, ev: i64, rng: &mut impl Rng, retries: &mut u32) -> Lottery {
    let upper = config.low_fraction * ev as f64;
    loop {
        let pct = draw_int(rng, config.p_range.0 * 100.0, config.p_range.1 * 100.0);
        let target: f64 = rng.random_range(0.0..upper);
        let Some(small) = lattice_small_reward(ev, pct, target, upper) else {
            *retries += 1;
            continue;
        };
        let large = (100 * ev - (100 - pct) * small) / pct;
        if large < 0 {
            *retries += 1;
            continue;
        }
        let p = pct as f64 / 100.0;
        return Lottery::new(vec![
            Outcome { reward: large as f64, prob: p },
            Outcome { reward: small as f64, prob: (100 - pct) as f64 / 100.0 },
        ])
        .expect("generated lottery is valid");
    }
}

fn sample_lottery_counted(config: &GeneratorConfig, rng: &mut impl Rng, retries: &mut u32) -> Lottery {
    let ev = draw_int(rng, config.ev_range.0, config.ev_range.1);
    draw_lottery_with_ev(config, ev, rng, retries)
}

/// Draws one two-outcome lottery: integer EV, whole-percent `p`, small reward
/// below `low_fraction * EV` and the large reward solved from the EV equation.
pub fn sample_lottery(config: &GeneratorConfig, rng: &mut impl Rng) -> Lottery {
    sample_lottery_counted(config, rng, &mut 0)
}

/// Acceptance rule for independently drawn pairs.
pub fn acceptable_pair(a: Moments, b: Moments, config: &GeneratorConfig) -> bool {
    let rel = |x: f64, y: f64| (x - y).abs() / x.min(y);
    rel(a.ev, b.ev) >= config.ev_diff_min || rel(a.variance, b.variance) >= config.var_diff_min
}

/// Result of [`build_question_counted`]: the question and how many draws were discarded.
#[derive(Debug, Clone)]
pub struct Generated {
    pub question: ChoiceQuestion,
    pub retries: u32,
}

pub fn build_question_counted(
    config: &GeneratorConfig,
    mode: QuestionMode,
    id: impl Into<String>,
    rng: &mut impl Rng,
) -> Generated {
    let mut retries = 0;
    let options = match mode {
        QuestionMode::SameEv => {
            let ev = draw_int(rng, config.ev_range.0, config.ev_range.1);
            vec![
                draw_lottery_with_ev(config, ev, rng, &mut retries),
                draw_lottery_with_ev(config, ev, rng, &mut retries),
            ]
        }
        QuestionMode::DiffEv => loop {
            let a = sample_lottery_counted(config, rng, &mut retries);
            let b = sample_lottery_counted(config, rng, &mut retries);
            if acceptable_pair(lottery_moments(&a), lottery_moments(&b), config) {
                break vec![a, b];
            }
            retries += 1;
        },
        QuestionMode::FourOption => (0..4).map(|_| sample_lottery_counted(config, rng, &mut retries)).collect(),
    };
    let mut labels: Vec<String> = CANONICAL_LABELS[..options.len()].iter().map(|s| s.to_string()).collect();
    labels.shuffle(rng);
    let question = ChoiceQuestion::with_labels(id, mode, options, labels).expect("generated question is valid");
    Generated { question, retries }
}

pub fn build_question(config: &GeneratorConfig, mode: QuestionMode, id: impl Into<String>, rng: &mut impl Rng) -> ChoiceQuestion {
    build_question_counted(config, mode, id, rng).question
}

/// `n` questions, each drawn from its own stream so the result is independent
/// of thread scheduling.
pub fn generate_dataset(config: &GeneratorConfig, mode: QuestionMode, n: usize) -> Result<Vec<ChoiceQuestion>> {
    config.validate()?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = config.stream(i as u64);
            build_question(config, mode, format!("{}-{:05}", mode.key(), i), &mut rng)
        })
        .collect())
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, rows: &[T]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(r: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Flattened spreadsheet view: one row per question, four option slots.
pub fn write_questions_csv(w: impl Write, questions: &[ChoiceQuestion]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "mode".to_string(), "n_options".to_string()];
    for i in 0..4 {
        for col in ["label", "ev", "variance", "r1", "p1", "r2", "p2"] {
            header.push(format!("{col}_{i}"));
        }
    }
    wtr.write_record(&header)?;
    for q in questions {
        let mut row = vec![q.id.clone(), q.mode.key().to_string(), q.option_count().to_string()];
        for i in 0..4 {
            if let Some(opt) = q.options.get(i) {
                row.push(q.labels[i].clone());
                row.push(q.moments[i].ev.to_string());
                row.push(q.moments[i].variance.to_string());
                for k in 0..2 {
                    match opt.outcomes().get(k) {
                        Some(o) => {
                            row.push(o.reward.to_string());
                            row.push(o.prob.to_string());
                        }
                        None => row.extend([String::new(), String::new()]),
                    }
                }
            } else {
                row.extend(std::iter::repeat_n(String::new(), 7));
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<Lottery> {
        vec![Lottery::from_pairs(a).unwrap(), Lottery::from_pairs(b).unwrap()]
    }

    #[test]
    fn forced_draws_solve_ev_equation() {
        assert_eq!(solve_large_reward(500.0, 0.5, 200.0), 800.0);
        assert!((solve_large_reward(100.0, 0.2, 50.0) - 300.0).abs() < 1e-12);
        // the lattice keeps on-lattice draws unchanged
        assert_eq!(lattice_small_reward(500, 50, 200.0, 400.0), Some(200));
        assert_eq!(lattice_small_reward(100, 20, 50.0, 80.0), Some(50));
    }

    #[test]
    fn moments_examples() {
        let m = lottery_moments(&Lottery::from_pairs(&[(800.0, 0.5), (200.0, 0.5)]).unwrap());
        assert_eq!((m.ev, m.variance), (500.0, 90000.0));
        let m = lottery_moments(&Lottery::sure(42.0).unwrap());
        assert_eq!((m.ev, m.variance), (42.0, 0.0));
        let m = lottery_moments(&Lottery::from_pairs(&[(100.0, 0.6), (200.0, 0.4)]).unwrap());
        assert!((m.ev - 140.0).abs() < 1e-9 && (m.variance - 2400.0).abs() < 1e-9);
    }

    #[test]
    fn acceptance_filter_examples() {
        let cfg = GeneratorConfig::default();
        let m = |ev, variance| Moments { ev, variance };
        assert!(!acceptable_pair(m(500.0, 1000.0), m(510.0, 1000.0), &cfg));
        assert!(acceptable_pair(m(500.0, 1000.0), m(530.0, 1000.0), &cfg));
        assert!(acceptable_pair(m(500.0, 1000.0), m(500.0, 1100.0), &cfg));
    }

    #[test]
    fn renders_example_box() {
        let q = ChoiceQuestion::new(
            "box",
            QuestionMode::DiffEv,
            pair(&[(100.0, 0.5), (200.0, 0.5)], &[(120.0, 0.6), (140.0, 0.4)]),
        )
        .unwrap();
        assert_eq!(
            q.text,
            "Which of the following options do you prefer?\n\
             A: A 50% chance to win $100 and a 50% chance to win $200.\n\
             B: A 60% chance to win $120 and a 40% chance to win $140."
        );
        let swapped = q.relabeled(vec!["B".into(), "A".into()]).unwrap();
        let lines: Vec<&str> = q.text.lines().collect();
        let swapped_lines: Vec<&str> = swapped.text.lines().collect();
        assert_eq!(swapped_lines[0], lines[0]);
        assert_eq!(swapped_lines[1], lines[2].replacen("B:", "A:", 1));
        assert_eq!(swapped_lines[2], lines[1].replacen("A:", "B:", 1));
    }

    #[test]
    fn four_option_rendering() {
        let mut rng = GeneratorConfig::with_seed(3).stream(0);
        let q = build_question(&GeneratorConfig::with_seed(3), QuestionMode::FourOption, "f", &mut rng);
        let lines: Vec<&str> = q.text.lines().collect();
        assert_eq!(lines.len(), 5);
        for (line, letter) in lines[1..].iter().zip(["A", "B", "C", "D"]) {
            assert!(line.starts_with(&format!("{letter}: A ")), "{line}");
        }
    }

    #[test]
    fn invalid_labels_rejected() {
        let opts = pair(&[(1.0, 1.0)], &[(2.0, 1.0)]);
        assert!(ChoiceQuestion::with_labels("x", QuestionMode::DiffEv, opts.clone(), vec!["A".into(), "A".into()]).is_err());
        assert!(ChoiceQuestion::with_labels("x", QuestionMode::DiffEv, opts, vec!["A".into(), "C".into()]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig::default().validate().is_ok());
        let bad = GeneratorConfig { p_range: (0.0, 0.8), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GeneratorConfig { ev_range: (500.0, 100.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GeneratorConfig { low_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn jsonl_roundtrip_preserves_questions() {
        let qs = generate_dataset(&GeneratorConfig::with_seed(11), QuestionMode::DiffEv, 20).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &qs).unwrap();
        let back: Vec<ChoiceQuestion> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, qs);
        let line = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["id", "mode", "options", "labels", "ev", "variance", "text"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["options"][0]["outcomes"][0].is_array());
    }

    #[test]
    fn csv_export_has_flat_columns() {
        let qs = generate_dataset(&GeneratorConfig::with_seed(1), QuestionMode::FourOption, 3).unwrap();
        let mut buf = Vec::new();
        write_questions_csv(&mut buf, &qs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3 + 28);
    }
}
