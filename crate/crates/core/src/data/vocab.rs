//! Fixed word-level vocabulary.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Result, VoraError};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
/// Placeholder id at vision positions; never embedded.
pub const IMG: usize = 3;

pub const CONTROL: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<img>"];

pub const COLORS: [&str; 8] = ["red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange"];
pub const SHAPES: [&str; 3] = ["circle", "square", "triangle"];
pub const SIZES: [&str; 2] = ["small", "big"];
pub const ROWS: [&str; 2] = ["top", "bottom"];
pub const COLS: [&str; 2] = ["left", "right"];

const WORDS: [&str; 16] = [
    "a", "and", "the", "in", "describe", "image", "what", "is", "plus", "minus", "times", "repeat", "reverse", ":",
    "of", "shapes",
];

pub const MAX_NUMBER: usize = 99;

/// Bijective token ↔ id map. Ids are stable: control tokens, then the
/// fixed word lists in declaration order, then the numbers 0..=99.
#[derive(Debug)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn standard() -> &'static Vocab {
        static V: OnceLock<Vocab> = OnceLock::new();
        V.get_or_init(|| {
            let mut words: Vec<String> = CONTROL.iter().map(|s| s.to_string()).collect();
            for list in [&COLORS[..], &SHAPES[..], &SIZES[..], &ROWS[..], &COLS[..], &WORDS[..]] {
                words.extend(list.iter().map(|s| s.to_string()));
            }
            words.extend((0..=MAX_NUMBER).map(|n| n.to_string()));
            let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
            Vocab { words, ids }
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.ids
            .get(word)
            .copied()
            .ok_or_else(|| VoraError::Data(format!("word {word:?} is not in the vocabulary")))
    }

    pub fn word(&self, id: usize) -> Result<&str> {
        self.words
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| VoraError::Data(format!("token id {id} out of range")))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Whitespace tokenization with `:` split off as its own token.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.replace(':', " : ").split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Inverse of [`Vocab::encode`] up to whitespace; control tokens are skipped.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id < CONTROL.len() {
                continue;
            }
            let w = self.word(id)?;
            if !out.is_empty() && w != ":" {
                out.push(' ');
            }
            out.push_str(w);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_bijective() {
        let v = Vocab::standard();
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.id(w).unwrap(), i);
        }
        assert_eq!(v.id("<eos>").unwrap(), EOS);
        assert_eq!(v.id("<img>").unwrap(), IMG);
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::standard();
        let ids = v.encode("repeat: red square").unwrap();
        assert_eq!(ids.len(), 4);
        assert_eq!(v.decode(&ids).unwrap(), "repeat: red square");
        assert!(v.encode("purple").is_err());
    }
}
