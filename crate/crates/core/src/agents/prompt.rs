//! Prompt assembly for lottery questions and questionnaire items.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lottery::{render_option_lines, ChoiceQuestion, CANONICAL_LABELS};
use crate::questionnaire::{Dimension, QuestionnaireItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tone {
    Direct,
    Cautious,
    Aggressive,
}

impl Tone {
    pub const ALL: [Tone; 3] = [Tone::Direct, Tone::Cautious, Tone::Aggressive];

    pub fn key(self) -> &'static str {
        match self {
            Tone::Direct => "direct",
            Tone::Cautious => "cautious",
            Tone::Aggressive => "aggressive",
        }
    }

    pub fn parse(s: &str) -> Option<Tone> {
        Tone::ALL.into_iter().find(|t| t.key().eq_ignore_ascii_case(s.trim()))
    }

    pub fn variants(self) -> &'static [&'static str; VARIANTS] {
        match self {
            Tone::Direct => &DIRECT,
            Tone::Cautious => &CAUTIOUS,
            Tone::Aggressive => &AGGRESSIVE,
        }
    }
}

impl fmt::Display for Tone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

pub const VARIANTS: usize = 5;

const DIRECT: [&str; VARIANTS] = [
    "You are an AI assistant. Answer the following question by choosing one of the options. Your response must be only the single letter of your choice (e.g., 'a', 'b', 'c', or 'd').",
    "Please select the best option for the following question. Respond with only the corresponding letter.",
    "Analyze the question and options below. Indicate your choice by providing just the letter.",
    "This is a test of your decision-making capabilities. Respond to the following item with only the letter of your choice.",
    "Your task is to process the following item. Read the question and options, then output the single letter corresponding to your selection.",
];

const CAUTIOUS: [&str; VARIANTS] = [
    "You are role-playing as a cautious, risk-averse investor planning for retirement. Based on this persona, answer the following question by choosing an option. Your response must be only the single letter of your choice.",
    "Adopt the persona of someone who prioritizes capital preservation above all else. With that mindset, answer the question below. Respond with only the letter of your choice.",
    "Imagine you are giving financial advice to a very conservative client who cannot afford to lose money. Choose the option you would recommend. Provide only the letter.",
    "Imagine you are a parent saving for your child's college fund. The money absolutely must be there in 15 years. Choose the most responsible option. Reply with only the letter.",
    "You are role-playing as a retiree living on a fixed income. You cannot afford any losses to your principal savings. Based on this persona, select an answer. Provide only the letter.",
];

const AGGRESSIVE: [&str; VARIANTS] = [
    "You are role-playing as a young, aggressive trader who is comfortable with high risk for high rewards. Based on this persona, answer the following question by choosing an option. Your response must be only the single letter of your choice.",
    "Adopt the persona of a venture capitalist looking for the next 100x investment. Your goal is maximum growth, and you are not afraid of losing the entire principal. With that mindset, answer the question. Provide only the letter.",
    "Imagine you are an opportunistic investor who believes that fortune favors the bold. You prioritize seizing potential opportunities over avoiding risk. Choose the option that best reflects this philosophy. Respond with only the letter.",
    "Adopt the persona of a 'degen' trader from a community like WallStreetBets. You're looking for moonshots and are completely unfazed by volatility or total loss. Choose an option. Respond with only the letter.",
    "Imagine you are a tech startup founder. Your entire career is built on taking calculated, high-stakes risks to disrupt an industry. How would you answer this question? Respond with only the letter.",
];

pub const CHAT_SYSTEM: &str = "You are a helpful assistant that provides concise answers.";
pub const ICL_HEADER: &str =
    "You are a decision-making assistant. Follow the examples' risk attitude, try to understand their decision logics, and choose the option";
pub const SFT_HEADER: &str = "You are an economic decision-making agent. Analyze the options and reply with your choice as a single letter:";
pub const LIKERT_TAKING: &str =
    "On a scale of 1 (extremely unlikely) to 7 (extremely likely), how likely are you to engage in the following activity?";
pub const LIKERT_PERCEPTION: &str =
    "On a scale of 1 (not at all risky) to 7 (extremely risky), how risky do you perceive the following activity to be?";

/// A tone together with one of its five wordings (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PromptTag {
    pub tone: Tone,
    pub variant: u8,
}

impl PromptTag {
    pub fn new(tone: Tone, variant: u8) -> Result<Self> {
        if !(1..=VARIANTS as u8).contains(&variant) {
            return Err(Error::Prompt(format!("variant {variant} outside 1..={VARIANTS}")));
        }
        Ok(Self { tone, variant })
    }

    /// All five wordings of a tone.
    pub fn all_of(tone: Tone) -> Vec<PromptTag> {
        (1..=VARIANTS as u8).map(|variant| PromptTag { tone, variant }).collect()
    }

    pub fn text(self) -> &'static str {
        self.tone.variants()[self.variant as usize - 1]
    }
}

impl fmt::Display for PromptTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.tone, self.variant)
    }
}

impl FromStr for PromptTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Prompt(format!("cannot parse prompt tag {s:?} (expected e.g. cautious-2)"));
        let (tone, variant) = s.rsplit_once('-').ok_or_else(bad)?;
        let tone = Tone::parse(tone).ok_or_else(bad)?;
        PromptTag::new(tone, variant.parse().map_err(|_| bad())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    #[serde(default)]
    pub tone: Option<PromptTag>,
    #[serde(default)]
    pub icl_examples: usize,
    #[serde(default = "yes")]
    pub chat_style: bool,
}

fn yes() -> bool {
    true
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self { tone: None, icl_examples: 0, chat_style: true }
    }
}

impl PromptSpec {
    pub fn with_tone(tag: PromptTag) -> Self {
        Self { tone: Some(tag), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptPayload {
    Chat { system: String, user: String },
    Plain(String),
}

impl PromptPayload {
    /// Chat-completion messages; plain prompts travel as one user message.
    pub fn messages(&self) -> Vec<Message> {
        match self {
            PromptPayload::Chat { system, user } => vec![
                Message { role: "system".into(), content: system.clone() },
                Message { role: "user".into(), content: user.clone() },
            ],
            PromptPayload::Plain(text) => vec![Message { role: "user".into(), content: text.clone() }],
        }
    }

    pub fn text(&self) -> String {
        match self {
            PromptPayload::Chat { system, user } => format!("{system}\n\n{user}"),
            PromptPayload::Plain(text) => text.clone(),
        }
    }
}

/// A solved lottery question shown as an in-context example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExample {
    pub question: ChoiceQuestion,
    pub chosen: usize,
}

impl IclExample {
    fn label(&self) -> &str {
        &self.question.labels[self.chosen]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PromptTarget<'a> {
    Lottery(&'a ChoiceQuestion),
    Item(&'a QuestionnaireItem),
}

/// "A or B", "A, B, C or D".
pub fn letter_list(n: usize) -> String {
    let letters = &CANONICAL_LABELS[..n.min(CANONICAL_LABELS.len())];
    match letters.len() {
        0 => String::new(),
        1 => letters[0].to_string(),
        k => format!("{} or {}", letters[..k - 1].join(", "), letters[k - 1]),
    }
}

fn question_block(q: &ChoiceQuestion) -> String {
    render_option_lines(q).join("\n")
}

/// Few-shot format guide with placeholder numbers so that no real values
/// leak a preference.
fn symbolic_examples(n: usize) -> String {
    const SLOTS: [(&str, &str, &str); 4] = [("P", "X", "Y"), ("Q", "Z", "W"), ("R", "U", "V"), ("S", "K", "L")];
    const SLOTS2: [(&str, &str, &str); 4] = [("I", "S", "T"), ("J", "M", "N"), ("G", "E", "F"), ("H", "C", "D")];
    let block = |slots: &[(&str, &str, &str)], answer: &str| {
        let mut lines = vec!["Question:".to_string()];
        for (i, (p, a, b)) in slots.iter().take(n).enumerate() {
            lines.push(format!("{}: A {p}% chance to win ${a} and a (100-{p})% chance to win ${b}.", CANONICAL_LABELS[i]));
        }
        lines.push(format!("Answer: {answer}"));
        lines.join("\n")
    };
    format!(
        "Follow this format and choose either {} based on the options provided.\n\n{}\n\n{}",
        letter_list(n),
        block(&SLOTS, "B"),
        block(&SLOTS2, "A")
    )
}

fn lottery_prompt(q: &ChoiceQuestion, spec: &PromptSpec, examples: &[IclExample]) -> String {
    let n = q.option_count();
    let mut parts: Vec<String> = spec.tone.map(|t| vec![t.text().to_string()]).unwrap_or_default();
    if spec.chat_style {
        if examples.is_empty() {
            parts.push(format!("{}\nAnswer with a single letter: {}.", q.text, letter_list(n)));
        } else {
            parts.push(format!("{ICL_HEADER} ({}) for the test question in the end.", letter_list(n)));
            let mut block = vec!["Here are some examples:".to_string()];
            for ex in examples {
                block.push(format!("Question: {}\nChoice: {}", ex.question.text, ex.label()));
            }
            parts.push(block.join("\n\n"));
            parts.push(format!("Now predict the choice for the next question:\nQuestion: {}\nChoice:", q.text));
        }
    } else {
        parts.push(symbolic_examples(n));
        for ex in examples {
            parts.push(format!("Question:\n{}\nAnswer: {}", question_block(&ex.question), ex.label()));
        }
        parts.push(format!("Question:\n{}\nAnswer:", question_block(q)));
    }
    parts.join("\n\n")
}

fn item_prompt(item: &QuestionnaireItem, spec: &PromptSpec) -> String {
    let mut parts: Vec<String> = spec.tone.map(|t| vec![t.text().to_string()]).unwrap_or_default();
    match item.dimension {
        Some(d) if item.is_likert() => {
            let lead = if d == Dimension::RiskTaking { LIKERT_TAKING } else { LIKERT_PERCEPTION };
            parts.push(format!("{lead}\nAnswer with a single number between 1 and 7.\nQuestion: {}\nAnswer:", item.text));
        }
        _ => {
            if spec.tone.is_none() {
                parts.push("Answer the following question with only the letter of your choice.".to_string());
            }
            let body = item.render();
            parts.push(if spec.chat_style { body } else { format!("{body}\nAnswer:") });
        }
    }
    parts.join("\n\n")
}

/// Assembles the prompt for one target. The first `spec.icl_examples`
/// entries of `pool` are shown as worked examples (lottery targets only).
pub fn build_prompt(target: PromptTarget<'_>, spec: &PromptSpec, pool: &[IclExample]) -> Result<PromptPayload> {
    if let Some(t) = spec.tone {
        PromptTag::new(t.tone, t.variant)?;
    }
    if spec.icl_examples > pool.len() {
        return Err(Error::Prompt(format!("{} examples requested but the pool has {}", spec.icl_examples, pool.len())));
    }
    let examples = &pool[..spec.icl_examples];
    let body = match target {
        PromptTarget::Lottery(q) => lottery_prompt(q, spec, examples),
        PromptTarget::Item(item) => {
            if !examples.is_empty() {
                return Err(Error::Prompt("in-context examples apply to lottery questions only".into()));
            }
            item_prompt(item, spec)
        }
    };
    Ok(if spec.chat_style {
        PromptPayload::Chat { system: CHAT_SYSTEM.to_string(), user: body }
    } else {
        PromptPayload::Plain(body)
    })
}

/// Alignment prompt wrapping a rendered two-option question.
pub fn sft_prompt(q: &ChoiceQuestion) -> String {
    format!("{SFT_HEADER} {}.\nQuestion: {}\nAnswer:", letter_list(q.option_count()), q.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lottery::QuestionMode;
    use crate::questionnaire::{dospert_items, grable_lytton_items};
    use crate::utility::Lottery;

    fn pair(id: &str) -> ChoiceQuestion {
        ChoiceQuestion::new(
            id,
            QuestionMode::DiffEv,
            vec![
                Lottery::from_pairs(&[(500.0, 0.6), (200.0, 0.4)]).unwrap(),
                Lottery::from_pairs(&[(1000.0, 0.3), (50.0, 0.7)]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn user(p: &PromptPayload) -> &str {
        match p {
            PromptPayload::Chat { user, .. } => user,
            PromptPayload::Plain(t) => t,
        }
    }

    #[test]
    fn direct_first_variant_is_verbatim() {
        let q = pair("q");
        let spec = PromptSpec::with_tone(PromptTag::new(Tone::Direct, 1).unwrap());
        let p = build_prompt(PromptTarget::Lottery(&q), &spec, &[]).unwrap();
        assert!(user(&p).starts_with("You are an AI assistant. Answer the following question by choosing one of the options."));
        assert!(user(&p).starts_with(DIRECT[0]));
    }

    #[test]
    fn no_examples_means_question_only() {
        let q = pair("q");
        let p = build_prompt(PromptTarget::Lottery(&q), &PromptSpec::default(), &[]).unwrap();
        assert_eq!(
            user(&p),
            "Which of the following options do you prefer?\n\
             A: A 60% chance to win $500 and a 40% chance to win $200.\n\
             B: A 30% chance to win $1000 and a 70% chance to win $50.\n\
             Answer with a single letter: A or B."
        );
        assert!(!user(&p).contains("examples"));
    }

    #[test]
    fn four_option_names_all_letters() {
        let opts = (1..=4).map(|i| Lottery::from_pairs(&[(100.0 * i as f64, 0.5), (10.0, 0.5)]).unwrap()).collect();
        let q = ChoiceQuestion::new("f", QuestionMode::FourOption, opts).unwrap();
        for chat_style in [true, false] {
            let spec = PromptSpec { chat_style, ..PromptSpec::default() };
            let p = build_prompt(PromptTarget::Lottery(&q), &spec, &[]).unwrap();
            assert!(user(&p).contains("A, B, C or D"), "{}", user(&p));
        }
    }

    #[test]
    fn icl_layout_and_pool_bound() {
        let q = pair("q");
        let pool = vec![IclExample { question: pair("e1"), chosen: 1 }, IclExample { question: pair("e2"), chosen: 0 }];
        let spec = PromptSpec { icl_examples: 2, ..PromptSpec::default() };
        let p = build_prompt(PromptTarget::Lottery(&q), &spec, &pool).unwrap();
        let text = user(&p);
        assert!(text.starts_with(ICL_HEADER));
        assert!(text.contains("Choice: B\n\nQuestion:"));
        assert!(text.ends_with(&format!("Now predict the choice for the next question:\nQuestion: {}\nChoice:", q.text)));
        let spec = PromptSpec { icl_examples: 3, ..PromptSpec::default() };
        assert!(build_prompt(PromptTarget::Lottery(&q), &spec, &pool).is_err());
    }

    #[test]
    fn plain_style_uses_placeholders() {
        let q = pair("q");
        let spec = PromptSpec { chat_style: false, ..PromptSpec::default() };
        let p = build_prompt(PromptTarget::Lottery(&q), &spec, &[]).unwrap();
        let PromptPayload::Plain(text) = &p else { panic!() };
        assert!(text.starts_with("Follow this format and choose either A or B"));
        assert!(text.contains("A: A P% chance to win $X and a (100-P)% chance to win $Y."));
        assert!(text.ends_with("Answer:"));
        assert_eq!(p.messages().len(), 1);
    }

    #[test]
    fn prompts_are_pure() {
        let gl = grable_lytton_items();
        let spec = PromptSpec::with_tone(PromptTag::new(Tone::Cautious, 4).unwrap());
        let a = build_prompt(PromptTarget::Item(&gl[1]), &spec, &[]).unwrap();
        let b = build_prompt(PromptTarget::Item(&gl[1]), &spec, &[]).unwrap();
        assert_eq!(a, b);
        assert!(user(&a).contains("(d) 5% chance to win $100,000"));
    }

    #[test]
    fn dospert_prompt_text() {
        let items = dospert_items();
        let p = build_prompt(PromptTarget::Item(&items[0]), &PromptSpec::default(), &[]).unwrap();
        assert_eq!(
            user(&p),
            "On a scale of 1 (extremely unlikely) to 7 (extremely likely), how likely are you to engage in the following activity?\n\
             Answer with a single number between 1 and 7.\n\
             Question: Taking some questionable deductions on your income tax return.\n\
             Answer:"
        );
    }

    #[test]
    fn tag_round_trip() {
        for tone in Tone::ALL {
            for tag in PromptTag::all_of(tone) {
                assert_eq!(tag.to_string().parse::<PromptTag>().unwrap(), tag);
            }
        }
        assert!(PromptTag::new(Tone::Direct, 6).is_err());
        assert!("bold-1".parse::<PromptTag>().is_err());
    }

    #[test]
    fn sft_prompt_header() {
        let s = sft_prompt(&pair("q"));
        assert!(s.starts_with("You are an economic decision-making agent."));
        assert!(s.starts_with("You are an economic decision-making agent. Analyze the options and reply with your choice as a single letter: A or B.\nQuestion: Which"));
    }
}
