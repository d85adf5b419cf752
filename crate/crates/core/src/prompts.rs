//! Role-playing zero/few-shot prompts.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{DomainCorpus, Example, Language, SentimentLabel};
use crate::error::{Error, Result};
use crate::seed;

pub const TEMPLATE_VERSION: &str = "rp-v1";

/// Shot counts the evaluation protocol uses.
pub const SHOT_COUNTS: [usize; 3] = [0, 3, 5];

const EN_SYSTEM: &str = "You are a financial sentiment analysis expert. You read short financial texts \
such as news headlines, analyst notes and market posts, and you judge the sentiment they express \
toward the company or market concerned.";

const ZH_SYSTEM: &str = "你是一名金融情感分析专家。你阅读新闻标题、研究报告和市场评论等简短的金融文本，\
并判断其对相关公司或市场所表达的情感。";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotSelection {
    /// Uniform without replacement.
    #[default]
    Random,
    /// Round-robin over classes, so every class appears when k allows.
    ClassBalanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub id: String,
    pub text: String,
    pub label: SentimentLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub shots: Vec<Shot>,
    pub query_id: String,
    pub query_text: String,
    pub allowed_labels: Vec<SentimentLabel>,
    pub language: Language,
}

/// Assemble a prompt for `query` with `k` exemplars drawn from `pool`.
///
/// The query itself is never offered as a shot. Shot choice depends only on
/// `(seed, query id, k, selection)`.
pub fn build_prompt(
    query: &Example,
    pool: &DomainCorpus,
    k: usize,
    seed: u64,
    selection: ShotSelection,
) -> Result<PromptBundle> {
    if !SHOT_COUNTS.contains(&k) {
        return Err(Error::Config(format!("shot count {k} is not one of {SHOT_COUNTS:?}")));
    }
    let candidates: Vec<&Example> = pool.examples().iter().filter(|e| e.id != query.id).collect();
    if candidates.len() < k {
        return Err(Error::ShotSelection {
            requested: k,
            available: candidates.len(),
        });
    }
    let mut rng = seed::rng(seed::derive_str(seed, &query.id));
    let chosen: Vec<&Example> = match selection {
        ShotSelection::Random => candidates.choose_multiple(&mut rng, k).copied().collect(),
        ShotSelection::ClassBalanced => {
            let mut queues: Vec<Vec<&Example>> = pool
                .label_set()
                .iter()
                .map(|l| {
                    let mut q: Vec<&Example> = candidates.iter().copied().filter(|e| e.label == *l).collect();
                    q.shuffle(&mut rng);
                    q
                })
                .collect();
            let mut out = Vec::with_capacity(k);
            while out.len() < k {
                for q in queues.iter_mut() {
                    if out.len() < k {
                        if let Some(e) = q.pop() {
                            out.push(e);
                        }
                    }
                }
            }
            out.shuffle(&mut rng);
            out
        }
    };

    let language = query.language;
    Ok(PromptBundle {
        system_text: match language {
            Language::En => EN_SYSTEM.to_string(),
            Language::Zh => ZH_SYSTEM.to_string(),
        },
        shots: chosen
            .into_iter()
            .map(|e| Shot {
                id: e.id.clone(),
                text: e.text.clone(),
                label: e.label,
            })
            .collect(),
        query_id: query.id.clone(),
        query_text: query.text.clone(),
        allowed_labels: pool.label_set().iter().copied().collect(),
        language,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    fn new(role: Role, content: String) -> Self {
        ChatMessage { role, content }
    }
}

/// Label word as it appears in rendered prompts for `language`.
pub fn label_word(label: SentimentLabel, language: Language) -> &'static str {
    match language {
        Language::En => label.as_str(),
        Language::Zh => label.zh_word(),
    }
}

fn query_turn(text: &str, language: Language) -> String {
    match language {
        Language::En => format!("Classify the sentiment of the following financial text.\nText: {text}"),
        Language::Zh => format!("请判断以下金融文本的情感。\n文本：{text}"),
    }
}

fn instruction(allowed: &[SentimentLabel], language: Language) -> String {
    match language {
        Language::En => {
            let words: Vec<&str> = allowed.iter().map(|l| l.as_str()).collect();
            format!("Answer with exactly one of the following labels: {}.", words.join(", "))
        }
        Language::Zh => {
            let words: Vec<String> = allowed.iter().map(|l| format!("{}（{}）", l.zh_word(), l.as_str())).collect();
            format!("请只用以下标签之一回答：{}。", words.join("、"))
        }
    }
}

/// Render a bundle as chat messages: system persona, one user/assistant pair
/// per shot, then the query with the answer instruction (`2 + 2k` messages).
pub fn render(bundle: &PromptBundle) -> Vec<ChatMessage> {
    let lang = bundle.language;
    let mut messages = Vec::with_capacity(2 + 2 * bundle.shots.len());
    messages.push(ChatMessage::new(Role::System, bundle.system_text.clone()));
    for shot in &bundle.shots {
        messages.push(ChatMessage::new(Role::User, query_turn(&shot.text, lang)));
        messages.push(ChatMessage::new(Role::Assistant, label_word(shot.label, lang).to_string()));
    }
    messages.push(ChatMessage::new(
        Role::User,
        format!("{}\n{}", query_turn(&bundle.query_text, lang), instruction(&bundle.allowed_labels, lang)),
    ));
    messages
}
