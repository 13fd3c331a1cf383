//! Hashed bag-of-words features over verbalized paths. Quoted node names stay
//! single tokens, the relational phrases collapse to dedicated marker tokens,
//! everything else splits on non-alphanumeric runs. Indexing uses FNV-1a so
//! feature positions are stable across platforms and releases, which keeps
//! saved models portable.

use std::collections::HashMap;

pub const DEFAULT_DIMENSION: usize = 1 << 15;

const PARENT_PHRASE: &str = "is parent of";
const CHILD_PHRASE: &str = "is child of";
const PARENT_TOKEN: &str = "<parent_of>";
const CHILD_TOKEN: &str = "<child_of>";

/// Sparse L2-normalized vector; empty text maps to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dimension: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// (index, weight) pairs sorted by index.
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, weights: &[f64]) -> f64 {
        assert_eq!(weights.len(), self.dimension, "weight vector dimension mismatch");
        self.entries.iter().map(|&(i, w)| w * weights[i as usize]).sum()
    }

    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        assert_eq!(self.dimension, other.dimension);
        let mut dot = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() && j < other.entries.len() {
            match self.entries[i].0.cmp(&other.entries[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += self.entries[i].1 * other.entries[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        dot
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric()
}

/// Phrase match only between word boundaries, so "is parent offside" stays
/// ordinary words.
fn phrase_at(text: &str, pos: usize, prev: Option<char>, phrase: &str) -> bool {
    if !text[pos..].starts_with(phrase) {
        return false;
    }
    if prev.map(is_word).unwrap_or(false) {
        return false;
    }
    !text[pos + phrase.len()..].chars().next().map(is_word).unwrap_or(false)
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    let mut prev: Option<char> = None;
    while let Some((pos, c)) = chars.next() {
        if c == '"' {
            // quoted node name: one token, doubled quotes unescape
            let mut name = String::new();
            loop {
                match chars.next() {
                    Some((_, '"')) => {
                        if let Some(&(_, '"')) = chars.peek() {
                            chars.next();
                            name.push('"');
                        } else {
                            break;
                        }
                    }
                    Some((_, inner)) => name.push(inner),
                    None => break, // unterminated quote: keep what we have
                }
            }
            tokens.push(name.to_lowercase());
            prev = Some('"');
            continue;
        }
        if phrase_at(text, pos, prev, PARENT_PHRASE) {
            tokens.push(PARENT_TOKEN.to_string());
            for _ in 0..PARENT_PHRASE.len() - 1 {
                chars.next();
            }
            prev = Some('f');
            continue;
        }
        if phrase_at(text, pos, prev, CHILD_PHRASE) {
            tokens.push(CHILD_TOKEN.to_string());
            for _ in 0..CHILD_PHRASE.len() - 1 {
                chars.next();
            }
            prev = Some('f');
            continue;
        }
        if is_word(c) {
            let mut word = String::new();
            word.extend(c.to_lowercase());
            while let Some(&(_, nc)) = chars.peek() {
                if is_word(nc) {
                    word.extend(nc.to_lowercase());
                    chars.next();
                } else {
                    break;
                }
            }
            tokens.push(word);
            prev = Some('a');
            continue;
        }
        prev = Some(c);
    }
    tokens
}

/// Hash token counts into `dimension` buckets and L2-normalize.
pub fn featurize(text: &str, dimension: usize) -> FeatureVector {
    assert!(
        dimension > 0 && dimension.is_power_of_two(),
        "feature dimension must be a positive power of two"
    );
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for token in tokenize(text) {
        let idx = (fnv1a64(token.as_bytes()) & (dimension as u64 - 1)) as u32;
        *counts.entry(idx).or_insert(0.0) += 1.0;
    }
    let mut entries: Vec<(u32, f64)> = counts.into_iter().collect();
    entries.sort_by_key(|&(i, _)| i);
    let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in &mut entries {
            *w /= norm;
        }
    }
    FeatureVector { dimension, entries }
}
