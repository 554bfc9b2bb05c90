//! Fixed caption vocabulary.
//!
//! Ids are positional in [`WORDS`] followed by the reserved special-token
//! slots, so the table must only ever be appended to before the specials.

/// Caption length; shorter captions are right-padded.
pub const CAPTION_LEN: usize = 12;
pub const PAD: usize = 0;
pub const SPECIAL_SLOTS: usize = 16;

pub const WORDS: &[&str] = &[
    "<pad>", "a", "on", "background",
    // shapes
    "circle", "square", "triangle", "cross", "ring",
    // colors
    "red", "green", "blue", "yellow", "cyan", "magenta", "white", "black",
    // textures
    "solid", "striped", "dotted", "checkered",
    // context phrases
    "in", "the", "morning", "at", "night", "table", "garden", "under", "soft", "light",
    "near", "window", "street", "snow",
    // composition
    "next", "to", "and", "with",
    // general descriptive vocabulary used by free-form queries
    "rainy", "beach", "orange", "sky", "palm", "trees", "sand", "calm", "ocean", "wild",
    "horse", "quiet", "forest", "bright", "moon", "old", "house", "tall", "mountain", "small",
    "boat", "dark", "river", "warm", "desert", "cold", "lake", "busy", "market", "empty",
    "road", "golden", "field", "misty", "valley", "stone", "bridge", "sunny", "park", "frozen",
    "pond", "red-roofed", "barn", "wooden", "fence", "glass", "tower", "green-eyed", "cat", "sleepy",
    "dog", "blue-winged", "bird", "ancient", "temple", "rocky", "shore", "smooth", "pebble", "silver",
    "cloud", "dusty", "path", "wet", "leaves", "iron", "gate", "pale", "flower", "narrow",
    "alley", "deep", "canyon",
];

pub const VOCAB_SIZE: usize = WORDS.len() + SPECIAL_SLOTS;

const _: () = assert!(VOCAB_SIZE == 128);

/// Id of the first special-token slot.
pub const FIRST_SPECIAL: usize = WORDS.len();

pub fn token_id(word: &str) -> Option<usize> {
    if let Some(rest) = word.strip_prefix("<new_").and_then(|r| r.strip_suffix('>')) {
        let k: usize = rest.parse().ok()?;
        return special_token(k);
    }
    WORDS.iter().position(|w| *w == word)
}

/// Id of special slot `<new_k>`, `k` in `1..=16`.
pub fn special_token(k: usize) -> Option<usize> {
    (1..=SPECIAL_SLOTS).contains(&k).then(|| FIRST_SPECIAL + k - 1)
}

pub fn is_special(id: usize) -> bool {
    (FIRST_SPECIAL..VOCAB_SIZE).contains(&id)
}

pub fn word(id: usize) -> Option<String> {
    if id < WORDS.len() {
        Some(WORDS[id].to_string())
    } else if is_special(id) {
        Some(format!("<new_{}>", id - FIRST_SPECIAL + 1))
    } else {
        None
    }
}
