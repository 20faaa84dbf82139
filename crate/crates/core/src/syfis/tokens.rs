use std::collections::HashMap;

use crate::landmark::LabelVocabulary;

use super::{normalize, MotionDictionary, SyfisError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const THE: usize = 2;

/// Word-level token vocabulary: `<pad>`, `<unk>`, `the`, then every phrase
/// word in dictionary order, then every label word in label order.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenVocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenVocabulary {
    pub fn build(dictionary: &MotionDictionary, labels: &LabelVocabulary) -> Self {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in ["<pad>", "<unk>", "the"] {
            v.add(w);
        }
        for (_, phrases) in dictionary.iter() {
            for p in phrases {
                for w in p.split_whitespace() {
                    v.add(w);
                }
            }
        }
        for l in labels.labels() {
            for w in normalize(l).split_whitespace() {
                v.add(w);
            }
        }
        v
    }

    fn add(&mut self, word: &str) {
        if !self.index.contains_key(word) {
            self.index.insert(word.to_string(), self.words.len());
            self.words.push(word.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or("<unk>", String::as_str)
    }

    /// Strict tokenization: unknown words are an error.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, SyfisError> {
        normalize(text)
            .split_whitespace()
            .map(|w| {
                self.index
                    .get(w)
                    .copied()
                    .ok_or_else(|| SyfisError::Vocabulary(w.to_string()))
            })
            .collect()
    }

    /// Lenient tokenization mapping unknown words to `<unk>`.
    pub fn tokenize_lossy(&self, text: &str) -> Vec<usize> {
        normalize(text)
            .split_whitespace()
            .map(|w| self.index.get(w).copied().unwrap_or(UNK))
            .collect()
    }

    /// Joins words with single spaces, skipping padding.
    pub fn detokenize(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .filter(|&&t| t != PAD)
            .map(|&t| self.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_tokens_come_first() {
        let v = TokenVocabulary::build(&MotionDictionary::default(), &LabelVocabulary::default());
        assert_eq!(v.word(PAD), "<pad>");
        assert_eq!(v.word(THE), "the");
        assert_eq!(v.tokenize("The").unwrap(), vec![THE]);
        assert!(v.tokenize("spaceship").is_err());
        assert_eq!(v.tokenize_lossy("spaceship the"), vec![UNK, THE]);
    }

    #[test]
    fn round_trip_normalizes() {
        let v = TokenVocabulary::build(&MotionDictionary::default(), &LabelVocabulary::default());
        let t = v.tokenize("  Turn RIGHT to   the kitchen").unwrap();
        assert_eq!(v.detokenize(&t), "turn right to the kitchen");
    }
}
