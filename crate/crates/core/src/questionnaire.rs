//! Grable & Lytton and DOSPERT questionnaires: item data, answer extraction
//! and scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agents::PromptTag;
use crate::error::{Error, Result};
use crate::utility::Lottery;

const GRABLE_LYTTON_JSON: &str = include_str!("../data/grable_lytton.json");
const DOSPERT_JSON: &str = include_str!("../data/dospert.json");

pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Ethical,
    Financial,
    HealthSafety,
    Recreational,
    Social,
}

impl Domain {
    pub const ALL: [Domain; 5] = [Domain::Ethical, Domain::Financial, Domain::HealthSafety, Domain::Recreational, Domain::Social];

    pub fn key(self) -> &'static str {
        match self {
            Domain::Ethical => "ethical",
            Domain::Financial => "financial",
            Domain::HealthSafety => "health_safety",
            Domain::Recreational => "recreational",
            Domain::Social => "social",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    RiskTaking,
    RiskPerception,
}

impl Dimension {
    pub const ALL: [Dimension; 2] = [Dimension::RiskTaking, Dimension::RiskPerception];

    pub fn key(self) -> &'static str {
        match self {
            Dimension::RiskTaking => "risk_taking",
            Dimension::RiskPerception => "risk_perception",
        }
    }

    fn id_suffix(self) -> &'static str {
        match self {
            Dimension::RiskTaking => "taking",
            Dimension::RiskPerception => "perception",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemChoice {
    pub letter: char,
    pub text: String,
    pub score: u8,
    /// Monetary reading of the choice as `(reward, probability)` pairs, when
    /// the item is itself a gamble.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lottery: Option<Vec<(f64, f64)>>,
}

impl ItemChoice {
    pub fn as_lottery(&self) -> Option<Result<Lottery>> {
        self.lottery.as_ref().map(|pairs| Lottery::from_pairs(pairs).map_err(Error::from))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireItem {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<ItemChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,
}

impl QuestionnaireItem {
    pub fn is_likert(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn letters(&self) -> Vec<char> {
        self.choices.iter().map(|c| c.letter).collect()
    }

    pub fn choice(&self, letter: char) -> Option<&ItemChoice> {
        let letter = letter.to_ascii_uppercase();
        self.choices.iter().find(|c| c.letter == letter)
    }

    pub fn max_score(&self) -> u8 {
        self.choices.iter().map(|c| c.score).max().unwrap_or(LIKERT_MAX)
    }

    /// Score of an extracted answer, `None` if it does not belong to this item.
    pub fn score(&self, answer: Answer) -> Option<u8> {
        match answer {
            Answer::Letter(l) if !self.is_likert() => self.choice(l).map(|c| c.score),
            Answer::Likert(v) if self.is_likert() && (LIKERT_MIN..=LIKERT_MAX).contains(&v) => Some(v),
            _ => None,
        }
    }

    /// All choices carry a lottery, so a utility agent can answer directly.
    pub fn is_gamble(&self) -> bool {
        !self.choices.is_empty() && self.choices.iter().all(|c| c.lottery.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Questionnaire(format!("item {}: {m}", self.id)));
        if self.is_likert() {
            if self.domain.is_none() || self.dimension.is_none() {
                return bad("Likert items need a domain and a dimension".into());
            }
            return Ok(());
        }
        if !(2..=4).contains(&self.choices.len()) {
            return bad(format!("{} choices (expected 2 to 4)", self.choices.len()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.choices {
            if !c.letter.is_ascii_uppercase() || !seen.insert(c.letter) {
                return bad(format!("bad or repeated letter {:?}", c.letter));
            }
            if !(1..=4).contains(&c.score) {
                return bad(format!("score {} outside 1..4", c.score));
            }
            if let Some(l) = c.as_lottery() {
                l?;
            }
        }
        Ok(())
    }

    /// Question text followed by `(a) ...` choice lines, or the bare text for
    /// Likert items.
    pub fn render(&self) -> String {
        let mut lines = vec![self.text.clone()];
        for c in &self.choices {
            lines.push(format!("({}) {}", c.letter.to_ascii_lowercase(), c.text));
        }
        lines.join("\n")
    }
}

fn check_items(items: &[QuestionnaireItem]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for it in items {
        it.validate()?;
        if !ids.insert(it.id.as_str()) {
            return Err(Error::Questionnaire(format!("duplicate item id {}", it.id)));
        }
    }
    Ok(())
}

/// Parses a JSON item array. DOSPERT entries without a dimension are expanded
/// into one item per dimension, with ids suffixed `-taking` / `-perception`.
pub fn parse_items(json: &str) -> Result<Vec<QuestionnaireItem>> {
    let raw: Vec<QuestionnaireItem> = serde_json::from_str(json)?;
    let mut items = Vec::with_capacity(raw.len());
    for it in raw {
        if it.is_likert() && it.dimension.is_none() {
            for d in Dimension::ALL {
                items.push(QuestionnaireItem { id: format!("{}-{}", it.id, d.id_suffix()), dimension: Some(d), ..it.clone() });
            }
        } else {
            items.push(it);
        }
    }
    check_items(&items)?;
    Ok(items)
}

pub fn load_items(mut r: impl Read) -> Result<Vec<QuestionnaireItem>> {
    let mut s = String::new();
    r.read_to_string(&mut s)?;
    parse_items(&s)
}

/// The shipped 13 Grable & Lytton items.
pub fn grable_lytton_items() -> Vec<QuestionnaireItem> {
    parse_items(GRABLE_LYTTON_JSON).expect("shipped item file is valid")
}

/// The shipped 30 DOSPERT activities, each asked on both dimensions.
pub fn dospert_items() -> Vec<QuestionnaireItem> {
    parse_items(DOSPERT_JSON).expect("shipped item file is valid")
}

/// Risk-tolerance category of a Grable & Lytton total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskCategory {
    Low,
    BelowAverage,
    Average,
    AboveAverage,
    High,
}

impl RiskCategory {
    pub fn from_total(total: u32) -> Self {
        Self::from_mean(total as f64)
    }

    /// Thresholds applied to averaged totals: anything above 32 is High,
    /// above 28 Above-average, above 22 Average, above 18 Below-average.
    pub fn from_mean(x: f64) -> Self {
        if x > 32.0 {
            RiskCategory::High
        } else if x > 28.0 {
            RiskCategory::AboveAverage
        } else if x > 22.0 {
            RiskCategory::Average
        } else if x > 18.0 {
            RiskCategory::BelowAverage
        } else {
            RiskCategory::Low
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RiskCategory::Low => "Low",
            RiskCategory::BelowAverage => "Below-average",
            RiskCategory::Average => "Average",
            RiskCategory::AboveAverage => "Above-average",
            RiskCategory::High => "High",
        }
    }
}

impl fmt::Display for RiskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A successfully extracted answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    Letter(char),
    Likert(u8),
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Letter(c) => write!(f, "{c}"),
            Answer::Likert(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Answer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(v) = s.parse::<u8>() {
            return Ok(Answer::Likert(v));
        }
        let mut cs = s.chars();
        match (cs.next(), cs.next()) {
            (Some(c), None) if c.is_ascii_alphabetic() => Ok(Answer::Letter(c.to_ascii_uppercase())),
            _ => Err(Error::Questionnaire(format!("cannot parse answer {s:?}"))),
        }
    }
}

/// One query of one item; `extracted` is `None` when the answer was invalid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub item_id: String,
    pub run_index: usize,
    pub raw_text: String,
    pub extracted: Option<Answer>,
    pub prompt_tone: Option<PromptTag>,
}

static SCALE_ECHO: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    [
        r"(?i)\b1\s*\([^)]*\)\s*(?:to|-|–)\s*7\s*\([^)]*\)",
        r"(?i)between\s+1\s+and\s+7",
        r"(?i)\bfrom\s+1\s+to\s+7\b",
        r"(?i)\b1\s*(?:-|–|to)\s*7\b",
        r"(?i)\bout\s+of\s+7\b",
    ]
    .iter()
    .map(|p| Regex::new(p).unwrap())
    .collect()
});
static LIKERT_PAREN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([1-7])\)").unwrap());
static LIKERT_PHRASE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:score\s+of|rating\s+of|would\s+be\s+an?|i\s+would\s+say|answer\s*(?:is)?\s*:?|rate\s+(?:it|this)\s+(?:as\s+)?(?:an?\s+)?)\s*([1-7])\b").unwrap()
});
static LIKERT_BARE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([1-7])\b").unwrap());

/// Likert value 1..7 from free text, or `None`.
pub fn extract_likert(raw: &str) -> Option<u8> {
    let mut text = raw.to_string();
    for re in SCALE_ECHO.iter() {
        text = re.replace_all(&text, " ").into_owned();
    }
    for re in [&*LIKERT_PAREN, &*LIKERT_PHRASE, &*LIKERT_BARE] {
        if let Some(c) = re.captures(&text) {
            return c[1].parse().ok();
        }
    }
    None
}

static LETTER_ANCHORED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:answer|option|choice)\s*(?:is\s*)?[:\-]?\s*\(?([a-z])\)?(?:[^a-z0-9]|$)").unwrap());
static LETTER_ALONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\W*([a-z])\W*$").unwrap());
static LETTER_LEADING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\s*\(?([a-z])[).:]").unwrap());
static LETTER_PAREN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\(([a-z])\)").unwrap());
static LETTER_UPPER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-Z])\b").unwrap());

/// First allowed choice letter found in `raw`, matched case-insensitively.
/// `Answer: X` forms win over bare letters; a lone lowercase letter inside a
/// sentence is not read as an answer.
pub fn extract_choice_letter(raw: &str, allowed: &[char]) -> Option<char> {
    let allowed: Vec<char> = allowed.iter().map(|c| c.to_ascii_uppercase()).collect();
    for re in [&*LETTER_ANCHORED, &*LETTER_ALONE, &*LETTER_LEADING, &*LETTER_PAREN, &*LETTER_UPPER] {
        for c in re.captures_iter(raw) {
            let l = c[1].chars().next()?.to_ascii_uppercase();
            if allowed.contains(&l) {
                return Some(l);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlScore {
    pub total: u32,
    pub category: RiskCategory,
}

fn item_index(items: &[QuestionnaireItem]) -> BTreeMap<&str, &QuestionnaireItem> {
    items.iter().map(|i| (i.id.as_str(), i)).collect()
}

/// Scores one complete pass: one valid response per item.
pub fn score_grable_lytton(items: &[QuestionnaireItem], responses: &[SurveyResponse]) -> Result<GlScore> {
    let index = item_index(items);
    let mut scores: BTreeMap<&str, u8> = BTreeMap::new();
    for r in responses {
        let item = index
            .get(r.item_id.as_str())
            .ok_or_else(|| Error::Questionnaire(format!("unknown item {}", r.item_id)))?;
        let score = r
            .extracted
            .and_then(|a| item.score(a))
            .ok_or_else(|| Error::Questionnaire(format!("item {}: invalid answer {:?}", r.item_id, r.raw_text)))?;
        if scores.insert(item.id.as_str(), score).is_some() {
            return Err(Error::Questionnaire(format!("item {} answered twice", item.id)));
        }
    }
    if let Some(missing) = items.iter().find(|i| !scores.contains_key(i.id.as_str())) {
        return Err(Error::Questionnaire(format!("missing item {}", missing.id)));
    }
    let total = scores.values().map(|&s| s as u32).sum();
    Ok(GlScore { total, category: RiskCategory::from_total(total) })
}

/// Totals across repeated passes. A pass is identified by its prompt and run
/// index; passes with any invalid or missing answer are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlSummary {
    pub totals: Vec<u32>,
    pub mean: f64,
    pub sd: f64,
    pub category: RiskCategory,
    pub valid_runs: usize,
    pub dropped_runs: usize,
}

pub fn summarize_grable_lytton(items: &[QuestionnaireItem], responses: &[SurveyResponse]) -> Result<GlSummary> {
    let mut runs: BTreeMap<(Option<PromptTag>, usize), Vec<SurveyResponse>> = BTreeMap::new();
    for r in responses {
        runs.entry((r.prompt_tone, r.run_index)).or_default().push(r.clone());
    }
    let mut totals = Vec::new();
    let mut dropped = 0;
    for rs in runs.values() {
        match score_grable_lytton(items, rs) {
            Ok(s) => totals.push(s.total),
            Err(_) => dropped += 1,
        }
    }
    if totals.is_empty() {
        return Err(Error::Questionnaire(format!("no valid runs ({dropped} dropped)")));
    }
    let n = totals.len() as f64;
    let mean = totals.iter().map(|&t| t as f64).sum::<f64>() / n;
    let sd = if totals.len() > 1 {
        (totals.iter().map(|&t| (t as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(GlSummary { valid_runs: totals.len(), totals, mean, sd, category: RiskCategory::from_mean(mean), dropped_runs: dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemMean {
    pub mean: f64,
    pub valid: usize,
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub domain: Domain,
    pub dimension: Dimension,
    /// Mean of item means; `None` when no item had a valid run.
    pub mean: Option<f64>,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DospertScores {
    /// Items with at least one valid run.
    pub items: BTreeMap<String, ItemMean>,
    pub domains: Vec<DomainScore>,
}

impl DospertScores {
    pub fn get(&self, domain: Domain, dimension: Dimension) -> Option<f64> {
        self.domains.iter().find(|d| d.domain == domain && d.dimension == dimension).and_then(|d| d.mean)
    }
}

pub fn score_dospert(items: &[QuestionnaireItem], responses: &[SurveyResponse]) -> Result<DospertScores> {
    let index = item_index(items);
    let mut per_item: BTreeMap<&str, (f64, usize, usize)> = BTreeMap::new();
    for r in responses {
        let item = index
            .get(r.item_id.as_str())
            .ok_or_else(|| Error::Questionnaire(format!("unknown item {}", r.item_id)))?;
        if !item.is_likert() {
            return Err(Error::Questionnaire(format!("item {} is not a Likert item", item.id)));
        }
        let e = per_item.entry(item.id.as_str()).or_insert((0.0, 0, 0));
        match r.extracted.and_then(|a| item.score(a)) {
            Some(v) => {
                e.0 += v as f64;
                e.1 += 1;
            }
            None => e.2 += 1,
        }
    }
    let item_means: BTreeMap<String, ItemMean> = per_item
        .into_iter()
        .filter(|(_, (_, valid, _))| *valid > 0)
        .map(|(id, (sum, valid, invalid))| (id.to_string(), ItemMean { mean: sum / valid as f64, valid, invalid }))
        .collect();
    let mut domains = Vec::new();
    for domain in Domain::ALL {
        for dimension in Dimension::ALL {
            let means: Vec<f64> = items
                .iter()
                .filter(|i| i.domain == Some(domain) && i.dimension == Some(dimension))
                .filter_map(|i| item_means.get(&i.id).map(|m| m.mean))
                .collect();
            let mean = (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);
            domains.push(DomainScore { domain, dimension, mean, items: means.len() });
        }
    }
    Ok(DospertScores { items: item_means, domains })
}

#[derive(Debug, Serialize, Deserialize)]
struct LogRow {
    model_id: String,
    prompt_tone: String,
    item_id: String,
    run_index: usize,
    raw_answer: String,
    extracted: String,
    score: String,
}

/// Response log with one row per query; invalid answers leave `extracted`
/// and `score` empty.
pub fn write_response_log(
    w: impl Write,
    model_id: &str,
    items: &[QuestionnaireItem],
    responses: &[SurveyResponse],
) -> Result<()> {
    write_response_rows(w, model_id, items, responses, true)
}

/// Like [`write_response_log`]; `header = false` suits appending to an
/// existing log.
pub fn write_response_rows(
    w: impl Write,
    model_id: &str,
    items: &[QuestionnaireItem],
    responses: &[SurveyResponse],
    header: bool,
) -> Result<()> {
    let index = item_index(items);
    let mut out = csv::WriterBuilder::new().has_headers(header).from_writer(w);
    for r in responses {
        let score = r.extracted.and_then(|a| index.get(r.item_id.as_str()).and_then(|i| i.score(a)));
        out.serialize(LogRow {
            model_id: model_id.to_string(),
            prompt_tone: r.prompt_tone.map(|t| t.to_string()).unwrap_or_default(),
            item_id: r.item_id.clone(),
            run_index: r.run_index,
            raw_answer: r.raw_text.clone(),
            extracted: r.extracted.map(|a| a.to_string()).unwrap_or_default(),
            score: score.map(|s| s.to_string()).unwrap_or_default(),
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a log written by [`write_response_log`], returning the model id of
/// the first row (if any) and the responses.
pub fn read_response_log(r: impl Read) -> Result<(Option<String>, Vec<SurveyResponse>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut model = None;
    let mut out = Vec::new();
    for row in rdr.deserialize::<LogRow>() {
        let row = row?;
        model.get_or_insert(row.model_id);
        let prompt_tone = match row.prompt_tone.as_str() {
            "" => None,
            s => Some(s.parse()?),
        };
        let extracted = match row.extracted.as_str() {
            "" => None,
            s => Some(s.parse()?),
        };
        out.push(SurveyResponse { item_id: row.item_id, run_index: row.run_index, raw_text: row.raw_answer, extracted, prompt_tone });
    }
    Ok((model, out))
}

/// `(domain, dimension, mean)` rows for radar plots; absent means are empty.
pub fn write_radar_csv(w: impl Write, scores: &DospertScores) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["domain", "dimension", "mean"])?;
    for d in &scores.domains {
        let mean = d.mean.map(|m| format!("{m:.4}")).unwrap_or_default();
        out.write_record([d.domain.key(), d.dimension.key(), mean.as_str()])?;
    }
    out.flush()?;
    Ok(())
}
