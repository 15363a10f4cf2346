//! The special-token action grammar spoken by the policy.
//!
//! ```text
//! <think> ... </think>
//! <search> <Graph><Passage> sub-query </search>
//! <answer> final answer </answer>
//! ```
//!
//! Retrieved documents are injected back as
//! `<information>Doc 1(Title: ...) ...</information>`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusStore;
use crate::retrieval::{RankedList, RetrievalCost, RetrievalMode};

pub const SEARCH_OPEN: &str = "<search>";
pub const SEARCH_CLOSE: &str = "</search>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const INFORMATION_OPEN: &str = "<information>";
pub const INFORMATION_CLOSE: &str = "</information>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const PASSAGE_MARKER: &str = "<Passage>";
pub const GRAPH_MARKER: &str = "<Graph>";

/// Stop sequences configured on the policy endpoint.
pub const STOP_SEQUENCES: [&str; 2] = [SEARCH_CLOSE, ANSWER_CLOSE];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolErrorKind {
    MissingMode,
    EmptyQuery,
    UnclosedTag,
    NestedTags,
}

impl fmt::Display for ProtocolErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Search { mode: RetrievalMode, query: String },
    Answer { text: String },
    Terminated,
    ProtocolError { kind: ProtocolErrorKind, raw: String },
}

/// One generation step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub generated_text: String,
    pub action: Action,
    /// Rendered documents, present iff the action is a search that executed.
    pub information: Option<String>,
    pub cost: Option<RetrievalCost>,
    /// In-context error notice injected instead of documents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    SearchOpen,
    SearchClose,
    AnswerOpen,
    AnswerClose,
}

impl Tag {
    const ALL: [(Tag, &'static str); 4] = [
        (Tag::SearchOpen, SEARCH_OPEN),
        (Tag::SearchClose, SEARCH_CLOSE),
        (Tag::AnswerOpen, ANSWER_OPEN),
        (Tag::AnswerClose, ANSWER_CLOSE),
    ];

    fn closes(self, open: Tag) -> bool {
        matches!(
            (open, self),
            (Tag::SearchOpen, Tag::SearchClose) | (Tag::AnswerOpen, Tag::AnswerClose)
        )
    }

    fn is_open(self) -> bool {
        matches!(self, Tag::SearchOpen | Tag::AnswerOpen)
    }
}

/// Tag occurrences as `(start, end, tag)` in text order.
fn scan_tags(text: &str) -> Vec<(usize, usize, Tag)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find('<') {
        let start = pos + off;
        let rest = &text[start..];
        match Tag::ALL.iter().find(|(_, lit)| rest.starts_with(lit)) {
            Some(&(tag, lit)) => {
                out.push((start, start + lit.len(), tag));
                pos = start + lit.len();
            }
            None => pos = start + 1,
        }
    }
    out
}

fn protocol_error(kind: ProtocolErrorKind, raw: &str) -> Action {
    Action::ProtocolError {
        kind,
        raw: raw.to_string(),
    }
}

/// Classifies one policy output. Total: every input maps to some [`Action`].
///
/// The last complete `<search>` or `<answer>` block decides the action. Any
/// structural problem (unclosed, stray, crossed or nested tags) makes the
/// whole segment a [`Action::ProtocolError`].
pub fn parse_rollout_segment(text: &str) -> Action {
    let mut open: Option<(usize, usize, Tag)> = None;
    let mut last_block: Option<(usize, usize, usize, usize, Tag)> = None;
    let mut last_end = 0;

    for (start, end, tag) in scan_tags(text) {
        match open {
            None if tag.is_open() => open = Some((start, end, tag)),
            None => {
                // closing tag with no opening tag
                return protocol_error(ProtocolErrorKind::UnclosedTag, &text[last_end..end]);
            }
            Some((o_start, _, _)) if tag.is_open() => {
                return protocol_error(ProtocolErrorKind::NestedTags, &text[o_start..]);
            }
            Some((o_start, o_end, o_tag)) => {
                if !tag.closes(o_tag) {
                    return protocol_error(ProtocolErrorKind::UnclosedTag, &text[o_start..end]);
                }
                last_block = Some((o_start, o_end, start, end, o_tag));
                last_end = end;
                open = None;
            }
        }
    }
    if let Some((o_start, _, _)) = open {
        return protocol_error(ProtocolErrorKind::UnclosedTag, &text[o_start..]);
    }

    let Some((block_start, body_start, body_end, block_end, tag)) = last_block else {
        return Action::Terminated;
    };
    let raw = &text[block_start..block_end];
    let body = &text[body_start..body_end];
    match tag {
        Tag::AnswerOpen => Action::Answer {
            text: body.trim().to_string(),
        },
        _ => {
            let has_passage = body.contains(PASSAGE_MARKER);
            let has_graph = body.contains(GRAPH_MARKER);
            let mode = match (has_passage, has_graph) {
                (true, true) => RetrievalMode::Hybrid,
                (true, false) => RetrievalMode::Passage,
                (false, true) => RetrievalMode::Graph,
                (false, false) => return protocol_error(ProtocolErrorKind::MissingMode, raw),
            };
            let query = body.replace(PASSAGE_MARKER, "").replace(GRAPH_MARKER, "");
            let query = query.trim();
            if query.is_empty() {
                return protocol_error(ProtocolErrorKind::EmptyQuery, raw);
            }
            Action::Search {
                mode,
                query: query.to_string(),
            }
        }
    }
}

pub fn mode_markers(mode: RetrievalMode) -> &'static str {
    match mode {
        RetrievalMode::Passage => PASSAGE_MARKER,
        RetrievalMode::Graph => GRAPH_MARKER,
        RetrievalMode::Hybrid => "<Graph><Passage>",
    }
}

/// Renders an action in the form the policy is prompted to emit.
pub fn serialize_action(action: &Action) -> String {
    match action {
        Action::Search { mode, query } => {
            format!("{SEARCH_OPEN} {} {query} {SEARCH_CLOSE}", mode_markers(*mode))
        }
        Action::Answer { text } => format!("{ANSWER_OPEN} {text} {ANSWER_CLOSE}"),
        Action::Terminated => String::new(),
        Action::ProtocolError { raw, .. } => raw.clone(),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("passage `{0}` is not in the corpus")]
pub struct UnknownPassageId(pub String);

/// `<information>` followed by `Doc i(Title: t) text` lines in rank order.
pub fn render_information(docs: &RankedList, store: &CorpusStore) -> Result<String, UnknownPassageId> {
    let lines = docs
        .ids()
        .enumerate()
        .map(|(i, id)| {
            let p = store
                .passage(id)
                .ok_or_else(|| UnknownPassageId(id.to_string()))?;
            Ok(format!("Doc {}(Title: {}) {}", i + 1, p.title, p.text))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(format!("{INFORMATION_OPEN}{}{INFORMATION_CLOSE}", lines.join("\n")))
}

/// Wraps a free-form notice as an information block.
pub fn information_notice(message: &str) -> String {
    format!("{INFORMATION_OPEN}{message}{INFORMATION_CLOSE}")
}
