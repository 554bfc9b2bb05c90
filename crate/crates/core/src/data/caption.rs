use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::concept::{held_in_specs, ConceptSpec};
use super::vocab::{self, CAPTION_LEN, PAD, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, RngState};

/// Context phrases appended after the attribute description.
pub const CONTEXT_PHRASES: [&str; 8] = [
    "in the morning",
    "at night",
    "on a table",
    "in a garden",
    "under soft light",
    "near the window",
    "on the street",
    "in the snow",
];

/// A fixed-length, padded token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Caption {
    tokens: [usize; CAPTION_LEN],
}

impl TryFrom<Vec<usize>> for Caption {
    type Error = Error;

    fn try_from(tokens: Vec<usize>) -> Result<Self> {
        Caption::from_tokens(&tokens)
    }
}

impl From<Caption> for Vec<usize> {
    fn from(c: Caption) -> Self {
        c.tokens.to_vec()
    }
}

impl Caption {
    /// Pads `tokens` to the caption length. Rejects sequences that are too
    /// long or contain out-of-vocabulary ids.
    pub fn from_tokens(tokens: &[usize]) -> Result<Self> {
        if tokens.len() > CAPTION_LEN {
            return Err(Error::Capacity(format!(
                "caption of {} tokens exceeds {CAPTION_LEN}",
                tokens.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= VOCAB_SIZE) {
            return Err(Error::Vocabulary {
                token: bad,
                vocab: VOCAB_SIZE,
            });
        }
        let mut padded = [PAD; CAPTION_LEN];
        padded[..tokens.len()].copy_from_slice(tokens);
        Ok(Self { tokens: padded })
    }

    /// Whitespace-separated words, e.g. `"a <new_1> on blue background"`.
    pub fn parse(text: &str) -> Result<Self> {
        let ids = text
            .split_whitespace()
            .map(|w| vocab::token_id(w).ok_or_else(|| Error::Usage(format!("unknown word `{w}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_tokens(&ids)
    }

    pub fn tokens(&self) -> &[usize; CAPTION_LEN] {
        &self.tokens
    }

    pub fn contains_special(&self) -> bool {
        self.tokens.iter().any(|&t| vocab::is_special(t))
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .filter(|&&t| t != PAD)
            .filter_map(|&t| vocab::word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn words(text: &str) -> Vec<usize> {
    text.split_whitespace()
        .map(|w| vocab::token_id(w).expect("template word in vocabulary"))
        .collect()
}

/// Templated caption `a {texture} {color} {shape} on {background} background {context}`.
///
/// With a special token the attribute span collapses to that single token.
pub fn caption_for(spec: &ConceptSpec, context_seed: u64, special_token: Option<usize>) -> Result<Caption> {
    let context = context_index(context_seed);
    caption_with_context(spec, context, special_token)
}

/// Context phrase chosen for `context_seed`.
pub fn context_index(context_seed: u64) -> usize {
    (derive_seed(context_seed, &[0xC0A7]) % CONTEXT_PHRASES.len() as u64) as usize
}

pub fn caption_with_context(spec: &ConceptSpec, context: usize, special_token: Option<usize>) -> Result<Caption> {
    let mut tokens = words("a");
    match special_token {
        Some(tok) => {
            if !spec.is_novel {
                return Err(Error::Usage(format!(
                    "special token requested for held-in spec {}",
                    spec.label()
                )));
            }
            if !vocab::is_special(tok) {
                return Err(Error::Usage(format!("token {tok} is not a special-token slot")));
            }
            tokens.push(tok);
        }
        None => {
            tokens.extend(words(spec.texture.word()));
            tokens.extend(words(spec.fill_color.word()));
            tokens.extend(words(spec.shape.word()));
        }
    }
    tokens.extend(words("on"));
    tokens.extend(words(spec.background_color.word()));
    tokens.extend(words("background"));
    tokens.extend(words(CONTEXT_PHRASES[context % CONTEXT_PHRASES.len()]));
    Caption::from_tokens(&tokens)
}

/// Inference prompt for a learned concept: `a <new_m> on {background} background`.
pub fn concept_prompt(special_token: usize, background: super::Color) -> Result<Caption> {
    let mut tokens = words("a");
    tokens.push(special_token);
    tokens.extend(words("on"));
    tokens.extend(words(background.word()));
    tokens.extend(words("background"));
    Caption::from_tokens(&tokens)
}

/// Size of the held-in caption grammar (specs × context phrases).
pub fn grammar_cardinality() -> usize {
    held_in_specs().len() * CONTEXT_PHRASES.len()
}

/// `count` distinct captions drawn without replacement from the held-in grammar.
pub fn make_calibration_prompts(count: usize, seed: u64) -> Result<Vec<Caption>> {
    if count == 0 {
        return Err(Error::Usage("at least one calibration prompt is required".into()));
    }
    let specs = held_in_specs();
    let total = specs.len() * CONTEXT_PHRASES.len();
    if count > total {
        return Err(Error::Capacity(format!(
            "{count} calibration prompts requested but the grammar has {total}"
        )));
    }
    let mut rng = RngState::at(seed, 0xCA11).rng();
    sample(&mut rng, total, count)
        .into_iter()
        .map(|i| caption_with_context(&specs[i / CONTEXT_PHRASES.len()], i % CONTEXT_PHRASES.len(), None))
        .collect()
}
