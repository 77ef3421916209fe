//! Repeated querying of an agent over a questionnaire or lottery dataset.

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::prompt::{build_prompt, IclExample, PromptSpec, PromptTag, PromptTarget};
use crate::agents::synthetic::{answer_choice_items, likert_from_level, risk_level, synthetic_answer};
use crate::agents::{Agent, LIKERT_MAX_RETRIES};
use crate::choice::ChoiceRecord;
use crate::error::{Error, Result};
use crate::lottery::ChoiceQuestion;
use crate::questionnaire::{extract_choice_letter, extract_likert, Answer, QuestionnaireItem, SurveyResponse};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOptions {
    pub repeats: usize,
    /// Rows handed to the sink at a time; the sink sees jobs in plan order.
    pub chunk_size: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { repeats: 1, chunk_size: 64 }
    }
}

impl SessionOptions {
    pub fn repeats(repeats: usize) -> Self {
        Self { repeats, ..Self::default() }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn in_pool<T: Send, F: Fn(usize) -> T + Sync + Send>(agent: &Agent, n: usize, f: F) -> Result<Vec<T>> {
    match agent {
        Agent::Synthetic { .. } => Ok((0..n).into_par_iter().map(f).collect()),
        Agent::External { client, .. } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(client.config().concurrency)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
        }
    }
}

/// Drives `compute` over pending jobs in chunks, feeding each chunk to `sink`.
fn drive<J: Sync, R: Send>(
    agent: &Agent,
    pending: &[J],
    chunk_size: usize,
    compute: impl Fn(&J) -> R + Sync + Send,
    sink: &mut dyn FnMut(&[R]) -> Result<()>,
) -> Result<Vec<R>> {
    let mut out = Vec::with_capacity(pending.len());
    for chunk in pending.chunks(chunk_size.max(1)) {
        let rows = in_pool(agent, chunk.len(), |i| compute(&chunk[i]))?;
        sink(&rows)?;
        out.extend(rows);
    }
    Ok(out)
}

struct SurveyJob<'a> {
    pass: u64,
    prompt: &'a PromptSpec,
    run: usize,
    index: usize,
}

fn survey_key(tag: Option<PromptTag>, item: &str, run: usize) -> (Option<PromptTag>, String, usize) {
    (tag, item.to_string(), run)
}

/// Asks every item `repeats` times under each prompt. Rows already in
/// `existing` (matched on prompt, item and run) are skipped; new rows are
/// passed to `sink` in plan order and the full log is returned.
pub fn run_survey(
    agent: &Agent,
    items: &[QuestionnaireItem],
    prompts: &[PromptSpec],
    options: &SessionOptions,
    existing: &[SurveyResponse],
    sink: &mut dyn FnMut(&[SurveyResponse]) -> Result<()>,
) -> Result<Vec<SurveyResponse>> {
    if items.is_empty() || prompts.is_empty() || options.repeats == 0 {
        return Err(Error::Empty("survey plan"));
    }
    let tags: HashSet<Option<PromptTag>> = prompts.iter().map(|p| p.tone).collect();
    if tags.len() != prompts.len() {
        return Err(Error::Config("survey prompts must have distinct tones".into()));
    }
    let done: HashSet<_> = existing.iter().map(|r| survey_key(r.prompt_tone, &r.item_id, r.run_index)).collect();
    let mut pending = Vec::new();
    for (slot, prompt) in prompts.iter().enumerate() {
        for run in 0..options.repeats {
            for (index, item) in items.iter().enumerate() {
                if !done.contains(&survey_key(prompt.tone, &item.id, run)) {
                    let pass = (slot * options.repeats + run) as u64;
                    pending.push(SurveyJob { pass, prompt, run, index });
                }
            }
        }
    }
    let choice_items: Vec<QuestionnaireItem> = items.iter().filter(|i| !i.is_likert()).cloned().collect();
    let choice_pos: HashMap<&str, usize> = choice_items.iter().enumerate().map(|(k, i)| (i.id.as_str(), k)).collect();

    let compute = |job: &SurveyJob| -> Result<SurveyResponse> {
        let item = &items[job.index];
        let (raw_text, extracted) = match agent {
            Agent::Synthetic { spec, seed, anchors, .. } => {
                let answer = if let Some(d) = item.dimension.filter(|_| item.is_likert()) {
                    let mut rng = stream_rng(*seed, (job.pass << 20) | job.index as u64);
                    likert_from_level(risk_level(spec, anchors, &mut rng)?, d)
                } else {
                    let mut rng = stream_rng(*seed, job.pass << 20 | 0xFFFFF);
                    let letters = answer_choice_items(spec, &choice_items, &mut rng)?;
                    Answer::Letter(letters[choice_pos[item.id.as_str()]])
                };
                (answer.to_string(), Some(answer))
            }
            Agent::External { client, max_retries, .. } => {
                let payload = build_prompt(PromptTarget::Item(item), job.prompt, &[])?;
                let out = if item.is_likert() {
                    client.query(&payload, &|t| extract_likert(t).map(Answer::Likert), (*max_retries).min(LIKERT_MAX_RETRIES))
                } else {
                    let letters = item.letters();
                    client.query(&payload, &|t| extract_choice_letter(t, &letters).map(Answer::Letter), *max_retries)
                };
                (out.raw_text, out.extracted)
            }
        };
        Ok(SurveyResponse { item_id: item.id.clone(), run_index: job.run, raw_text, extracted, prompt_tone: job.prompt.tone })
    };

    let mut fail = None;
    let new = drive(
        agent,
        &pending,
        options.chunk_size,
        |j| compute(j),
        &mut |rows: &[Result<SurveyResponse>]| {
            let ok: Vec<SurveyResponse> = rows.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
            if let Some(Err(e)) = rows.iter().find(|r| r.is_err()) {
                fail = Some(e.to_string());
            }
            sink(&ok)
        },
    )?;
    if let Some(e) = fail {
        return Err(Error::Questionnaire(e));
    }
    let mut log = existing.to_vec();
    log.extend(new.into_iter().map(|r| r.expect("errors returned above")));
    Ok(log)
}

/// One agent answer to a lottery question; `chosen_index` is `None` when no
/// valid letter was extracted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotteryAnswer {
    pub question_id: String,
    pub run_index: usize,
    pub raw_text: String,
    pub chosen_index: Option<usize>,
}

struct LotteryJob {
    run: usize,
    index: usize,
}

/// Asks every question `repeats` times. `pool` supplies in-context examples
/// when `prompt.icl_examples > 0`.
pub fn run_lottery(
    agent: &Agent,
    questions: &[ChoiceQuestion],
    prompt: &PromptSpec,
    pool: &[IclExample],
    options: &SessionOptions,
    existing: &[LotteryAnswer],
    sink: &mut dyn FnMut(&[LotteryAnswer]) -> Result<()>,
) -> Result<Vec<LotteryAnswer>> {
    if questions.is_empty() || options.repeats == 0 {
        return Err(Error::Empty("lottery plan"));
    }
    if prompt.icl_examples > pool.len() {
        return Err(Error::Prompt(format!("{} examples requested but the pool has {}", prompt.icl_examples, pool.len())));
    }
    let done: HashSet<(&str, usize)> = existing.iter().map(|a| (a.question_id.as_str(), a.run_index)).collect();
    let n = questions.len();
    let pending: Vec<LotteryJob> = (0..options.repeats)
        .flat_map(|run| (0..n).map(move |index| LotteryJob { run, index }))
        .filter(|j| !done.contains(&(questions[j.index].id.as_str(), j.run)))
        .collect();

    let compute = |job: &LotteryJob| -> Result<LotteryAnswer> {
        let q = &questions[job.index];
        let (raw_text, chosen_index) = match agent {
            Agent::Synthetic { spec, seed, .. } => {
                let mut rng = stream_rng(*seed, (job.run * n + job.index) as u64);
                let idx = synthetic_answer(spec, q, &mut rng)?;
                (q.labels[idx].clone(), Some(idx))
            }
            Agent::External { client, max_retries, .. } => {
                let payload = build_prompt(PromptTarget::Lottery(q), prompt, pool)?;
                let letters: Vec<char> = q.labels.iter().filter_map(|l| l.chars().next()).collect();
                let out = client.query(&payload, &|t| extract_choice_letter(t, &letters).map(Answer::Letter), *max_retries);
                let idx = match out.extracted {
                    Some(Answer::Letter(c)) => q.index_of_label(&c.to_string()),
                    _ => None,
                };
                (out.raw_text, idx)
            }
        };
        Ok(LotteryAnswer { question_id: q.id.clone(), run_index: job.run, raw_text, chosen_index })
    };

    let mut fail = None;
    let new = drive(agent, &pending, options.chunk_size, |j| compute(j), &mut |rows: &[Result<LotteryAnswer>]| {
        let ok: Vec<LotteryAnswer> = rows.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        if let Some(Err(e)) = rows.iter().find(|r| r.is_err()) {
            fail = Some(e.to_string());
        }
        sink(&ok)
    })?;
    if let Some(e) = fail {
        return Err(Error::Config(e));
    }
    let mut log = existing.to_vec();
    log.extend(new.into_iter().map(|r| r.expect("errors returned above")));
    Ok(log)
}

/// Valid answers as choice records, labelled by the risky-option convention.
pub fn lottery_records(questions: &[ChoiceQuestion], answers: &[LotteryAnswer]) -> Result<Vec<ChoiceRecord>> {
    let by_id: HashMap<&str, &ChoiceQuestion> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    answers
        .iter()
        .filter_map(|a| a.chosen_index.map(|c| (a, c)))
        .map(|(a, c)| {
            let q = by_id.get(a.question_id.as_str()).ok_or_else(|| Error::Config(format!("unknown question {}", a.question_id)))?;
            ChoiceRecord::new(q, c)
        })
        .collect()
}
