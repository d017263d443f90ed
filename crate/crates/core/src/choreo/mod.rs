//! Choreographic annotations: data model, vocabulary validation, token
//! extraction for the generator, and annotation quality control.
//!
//! An annotation is an ordered list of phrases. Each phrase describes which
//! body segments move and how (Body), the plane / direction / level of the
//! movement (Space), the clock direction the dancer faces (Orientation) and
//! the four Laban effort polarities (Effort). Vocabularies are data, loaded
//! from a JSON file; the default one is embedded.

mod qc;
mod tokens;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use qc::{qc_evaluate, qc_plan, QcBatch, QcBatchReport, QcPlan, Verdict};
pub use tokens::{
    extract_tokens, slot, word_bucket, TokenLayout, NONE, PAD, PHRASE, SLOTS_PER_PHRASE, TEXT,
};

pub const DEFAULT_VOCAB: &str = include_str!("../../vocab/choreo_vocab.json");

#[derive(Debug, thiserror::Error)]
pub enum ChoreoError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("annotation invalid: {} diagnostic(s), first: {}", .0.len(), .0.first().map(|d| d.to_string()).unwrap_or_default())]
    Invalid(Vec<Diagnostic>),
    #[error("vocab overflow: {needed} tokens needed, max {max}")]
    VocabOverflow { needed: usize, max: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("range error: score {score} at position {index} is outside 1..5")]
    Range { index: usize, score: i64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffortVocab {
    pub weight: Vec<String>,
    pub space: Vec<String>,
    pub time: Vec<String>,
    pub flow: Vec<String>,
}

/// Closed vocabularies plus token-budget settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: u32,
    pub segments: Vec<String>,
    pub movements: Vec<String>,
    pub planes: Vec<String>,
    pub directions: Vec<String>,
    pub levels: Vec<String>,
    pub clock_directions: u32,
    pub effort: EffortVocab,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
    pub text_buckets: usize,
    pub max_tokens: usize,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::from_json(DEFAULT_VOCAB).expect("embedded vocabulary is valid")
    }
}

impl Vocabulary {
    pub fn from_json(text: &str) -> Result<Self, ChoreoError> {
        let v: Vocabulary =
            serde_json::from_str(text).map_err(|e| ChoreoError::Vocab(e.to_string()))?;
        v.check()?;
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self, ChoreoError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<(), ChoreoError> {
        if self.version != 1 {
            return Err(ChoreoError::Vocab(format!(
                "unsupported vocabulary version {}",
                self.version
            )));
        }
        let lists = [
            ("segments", &self.segments),
            ("movements", &self.movements),
            ("planes", &self.planes),
            ("directions", &self.directions),
            ("levels", &self.levels),
            ("effort.weight", &self.effort.weight),
            ("effort.space", &self.effort.space),
            ("effort.time", &self.effort.time),
            ("effort.flow", &self.effort.flow),
        ];
        for (name, list) in lists {
            if list.is_empty() {
                return Err(ChoreoError::Vocab(format!("`{name}` is empty")));
            }
            let mut seen = std::collections::BTreeSet::new();
            for term in list {
                if !seen.insert(term) {
                    return Err(ChoreoError::Vocab(format!("`{name}` repeats `{term}`")));
                }
            }
        }
        if self.clock_directions == 0 || self.text_buckets == 0 {
            return Err(ChoreoError::Vocab(
                "clock_directions and text_buckets must be positive".into(),
            ));
        }
        if self.max_tokens < 9 + self.segments.len() {
            return Err(ChoreoError::Vocab(format!(
                "max_tokens {} cannot hold a single phrase",
                self.max_tokens
            )));
        }
        Ok(())
    }

    /// Resolves aliases, then looks the term up in `list`.
    fn position(&self, list: &[String], term: &str) -> Option<usize> {
        let term = self.aliases.get(term).map_or(term, String::as_str);
        list.iter().position(|t| t == term)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffortSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoreoPhrase {
    /// Segment name to movement term.
    #[serde(default)]
    pub body: BTreeMap<String, String>,
    #[serde(default)]
    pub space: SpaceSpec,
    /// Clock direction faced, 1..=8.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<i64>,
    #[serde(default)]
    pub effort: EffortSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoreoAnnotation {
    pub phrases: Vec<ChoreoPhrase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
    #[serde(default)]
    pub word_count: usize,
}

impl ChoreoAnnotation {
    pub fn from_json(text: &str) -> Result<Self, ChoreoError> {
        serde_json::from_str(text).map_err(|e| ChoreoError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ChoreoError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            ChoreoError::Parse(msg) => ChoreoError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }

    /// Whitespace-separated words of the free text, 0 when absent.
    pub fn text_word_count(&self) -> usize {
        self.free_text
            .as_deref()
            .map_or(0, |t| t.split_whitespace().count())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    /// Accepted but noteworthy, e.g. an alias resolved to its canonical term.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// `None` for annotation-level problems.
    pub phrase: Option<usize>,
    /// Dotted field path, e.g. `phrases[2].space.plane`.
    pub path: String,
    pub token: String,
    pub severity: Severity,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {} `{}`: {}", self.path, self.token, self.message)
    }
}

struct Collector<'a> {
    vocab: &'a Vocabulary,
    out: Vec<Diagnostic>,
}

impl Collector<'_> {
    fn push(
        &mut self,
        phrase: Option<usize>,
        path: String,
        token: &str,
        severity: Severity,
        message: String,
    ) {
        self.out.push(Diagnostic {
            phrase,
            path,
            token: token.to_string(),
            severity,
            message,
        });
    }

    fn term(&mut self, phrase: usize, path: String, token: &str, list: &[String], what: &str) {
        match self.vocab.position(list, token) {
            None => self.push(
                Some(phrase),
                path,
                token,
                Severity::Error,
                format!("unknown {what}; expected one of {}", list.join(", ")),
            ),
            Some(_) if !list.iter().any(|t| t == token) => {
                let canonical = &self.vocab.aliases[token];
                self.push(
                    Some(phrase),
                    path,
                    token,
                    Severity::Warning,
                    format!("alias of `{canonical}`"),
                );
            }
            Some(_) => {}
        }
    }
}

/// Checks an annotation against the vocabulary. Every problem is reported,
/// not just the first; the list is empty for a clean annotation.
pub fn validate_annotation(a: &ChoreoAnnotation, vocab: &Vocabulary) -> Vec<Diagnostic> {
    let mut c = Collector {
        vocab,
        out: Vec::new(),
    };
    if a.phrases.is_empty() {
        c.push(
            None,
            "phrases".into(),
            "",
            Severity::Error,
            "annotation has no phrases".into(),
        );
    }
    for (i, p) in a.phrases.iter().enumerate() {
        let base = format!("phrases[{i}]");
        if p.body.is_empty() {
            c.push(
                Some(i),
                format!("{base}.body"),
                "",
                Severity::Error,
                "phrase names no body segment".into(),
            );
        }
        for (segment, term) in &p.body {
            let path = format!("{base}.body.{segment}");
            if !vocab.segments.iter().any(|s| s == segment) {
                c.push(
                    Some(i),
                    path,
                    segment,
                    Severity::Error,
                    format!(
                        "unknown body segment; expected one of {}",
                        vocab.segments.join(", ")
                    ),
                );
            } else {
                c.term(i, path, term, &vocab.movements, "movement term");
            }
        }
        if let Some(t) = &p.space.plane {
            c.term(i, format!("{base}.space.plane"), t, &vocab.planes, "plane");
        }
        if let Some(t) = &p.space.direction {
            c.term(
                i,
                format!("{base}.space.direction"),
                t,
                &vocab.directions,
                "direction",
            );
        }
        if let Some(t) = &p.space.level {
            c.term(i, format!("{base}.space.level"), t, &vocab.levels, "level");
        }
        if let Some(o) = p.orientation {
            if o < 1 || o > vocab.clock_directions as i64 {
                c.push(
                    Some(i),
                    format!("{base}.orientation"),
                    &o.to_string(),
                    Severity::Error,
                    format!("clock direction must be in 1..={}", vocab.clock_directions),
                );
            }
        }
        let e = &p.effort;
        let fields = [
            ("weight", &e.weight, &vocab.effort.weight),
            ("space", &e.space, &vocab.effort.space),
            ("time", &e.time, &vocab.effort.time),
            ("flow", &e.flow, &vocab.effort.flow),
        ];
        for (name, value, list) in fields {
            if let Some(t) = value {
                c.term(
                    i,
                    format!("{base}.effort.{name}"),
                    t,
                    list,
                    "effort polarity",
                );
            }
        }
    }
    let words = a.text_word_count();
    if a.word_count != words {
        let message = if a.free_text.is_some() {
            format!("free text has {words} words")
        } else {
            "word_count must be 0 without free text".to_string()
        };
        c.push(
            None,
            "word_count".into(),
            &a.word_count.to_string(),
            Severity::Error,
            message,
        );
    }
    c.out
}

/// True when no error-severity diagnostics remain.
pub fn is_valid(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().all(|d| d.severity != Severity::Error)
}
