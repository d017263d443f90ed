//! Flattening of validated annotations into token ids.
//!
//! Every phrase occupies a fixed block of slots:
//!
//! ```text
//! PHRASE | body[seg 0] .. body[seg S-1] | plane | direction | level | clock | weight | space | time | flow
//! ```
//!
//! Unspecified slots hold [`NONE`]. Body ids are per segment, so the same
//! movement term on two segments maps to two different ids. Free text follows
//! the phrases as [`TEXT`] and one hashed bucket id per word, truncated to the
//! token budget.

use sha2::{Digest, Sha256};

use super::{is_valid, validate_annotation, ChoreoAnnotation, ChoreoError, Vocabulary};

pub const PAD: u32 = 0;
pub const NONE: u32 = 1;
pub const PHRASE: u32 = 2;
pub const TEXT: u32 = 3;
const RESERVED: u32 = 4;

/// Slots per phrase with the default eight-segment vocabulary.
pub const SLOTS_PER_PHRASE: usize = 17;

/// Slot offsets within a phrase block for the default vocabulary.
pub mod slot {
    pub const PHRASE: usize = 0;
    pub const BODY: usize = 1;
    pub const PLANE: usize = 9;
    pub const DIRECTION: usize = 10;
    pub const LEVEL: usize = 11;
    pub const CLOCK: usize = 12;
    pub const WEIGHT: usize = 13;
    pub const SPACE: usize = 14;
    pub const TIME: usize = 15;
    pub const FLOW: usize = 16;
}

/// Id ranges derived from a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    pub body: u32,
    pub plane: u32,
    pub direction: u32,
    pub level: u32,
    pub clock: u32,
    pub weight: u32,
    pub space: u32,
    pub time: u32,
    pub flow: u32,
    pub text: u32,
    pub vocab_size: u32,
    pub segments: usize,
    pub terms: usize,
}

impl TokenLayout {
    pub fn new(v: &Vocabulary) -> Self {
        let mut next = RESERVED;
        let mut take = |n: usize| {
            let start = next;
            next += n as u32;
            start
        };
        let body = take(v.segments.len() * v.movements.len());
        let plane = take(v.planes.len());
        let direction = take(v.directions.len());
        let level = take(v.levels.len());
        let clock = take(v.clock_directions as usize);
        let weight = take(v.effort.weight.len());
        let space = take(v.effort.space.len());
        let time = take(v.effort.time.len());
        let flow = take(v.effort.flow.len());
        let text = take(v.text_buckets);
        TokenLayout {
            body,
            plane,
            direction,
            level,
            clock,
            weight,
            space,
            time,
            flow,
            text,
            vocab_size: next,
            segments: v.segments.len(),
            terms: v.movements.len(),
        }
    }

    pub fn slots_per_phrase(&self) -> usize {
        1 + self.segments + 8
    }
}

/// Bucket of a free-text word: first 8 bytes of SHA-256 of the lowercased
/// word, little-endian, modulo the bucket count.
pub fn word_bucket(word: &str, buckets: usize) -> u32 {
    let digest = Sha256::digest(word.to_lowercase().as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(head) % buckets as u64) as u32
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
}

/// Deterministic token sequence of a valid annotation.
pub fn extract_tokens(a: &ChoreoAnnotation, vocab: &Vocabulary) -> Result<Vec<u32>, ChoreoError> {
    let diagnostics = validate_annotation(a, vocab);
    if !is_valid(&diagnostics) {
        return Err(ChoreoError::Invalid(diagnostics));
    }
    let layout = TokenLayout::new(vocab);
    let per = layout.slots_per_phrase();
    let needed = a.phrases.len() * per;
    if needed > vocab.max_tokens {
        return Err(ChoreoError::VocabOverflow {
            needed,
            max: vocab.max_tokens,
        });
    }
    let lookup = |list: &[String], base: u32, term: &Option<String>| -> u32 {
        term.as_deref().map_or(NONE, |t| {
            base + vocab.position(list, t).expect("validated") as u32
        })
    };

    let mut out = Vec::with_capacity(vocab.max_tokens);
    for p in &a.phrases {
        out.push(PHRASE);
        for (si, seg) in vocab.segments.iter().enumerate() {
            out.push(match p.body.get(seg) {
                Some(term) => {
                    let ti = vocab.position(&vocab.movements, term).expect("validated");
                    layout.body + (si * layout.terms + ti) as u32
                }
                None => NONE,
            });
        }
        out.push(lookup(&vocab.planes, layout.plane, &p.space.plane));
        out.push(lookup(
            &vocab.directions,
            layout.direction,
            &p.space.direction,
        ));
        out.push(lookup(&vocab.levels, layout.level, &p.space.level));
        out.push(
            p.orientation
                .map_or(NONE, |o| layout.clock + (o - 1) as u32),
        );
        out.push(lookup(
            &vocab.effort.weight,
            layout.weight,
            &p.effort.weight,
        ));
        out.push(lookup(&vocab.effort.space, layout.space, &p.effort.space));
        out.push(lookup(&vocab.effort.time, layout.time, &p.effort.time));
        out.push(lookup(&vocab.effort.flow, layout.flow, &p.effort.flow));
    }
    if let Some(text) = &a.free_text {
        if out.len() < vocab.max_tokens {
            out.push(TEXT);
            for w in words(text) {
                if out.len() >= vocab.max_tokens {
                    break;
                }
                out.push(layout.text + word_bucket(w, vocab.text_buckets));
            }
        }
    }
    Ok(out)
}
