//! Closed-vocabulary tokenizer shared by the LM and the aligner text path.
//!
//! Tokens are lowercase words, digit runs, single punctuation marks, and
//! atomic timestamps of the form `3.4s`. Hyphens are their own token and
//! rejoin tight on both sides, so `pitter-patter` survives a round trip.

use std::collections::{BTreeSet, HashMap};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const AUDIO: u32 = 4;
/// Count of reserved ids at the front of every vocabulary.
pub const RESERVED: usize = 5;

const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>", "[AUDIO]"];

/// Punctuation that attaches to the preceding token when detokenizing.
const TIGHT_LEFT: [char; 6] = ['.', ',', '?', '!', ';', ':'];

fn is_word_char(c: char) -> bool {
    c.is_ascii_lowercase() || c == '\''
}

/// Try to read a timestamp (`digits '.' digits 's'`) starting at `i`.
/// Returns the end index if the form matches and is not glued to a letter.
fn timestamp_end(chars: &[char], i: usize) -> Option<usize> {
    let mut j = i;
    while j < chars.len() && chars[j].is_ascii_digit() {
        j += 1;
    }
    if j == i || j >= chars.len() || chars[j] != '.' {
        return None;
    }
    j += 1;
    let frac_start = j;
    while j < chars.len() && chars[j].is_ascii_digit() {
        j += 1;
    }
    if j == frac_start || j >= chars.len() || chars[j] != 's' {
        return None;
    }
    j += 1;
    if j < chars.len() && (chars[j].is_ascii_alphanumeric()) {
        return None;
    }
    Some(j)
}

/// Split text into surface tokens. Lowercases; whitespace never survives.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_ascii_digit() {
                if let Some(end) = timestamp_end(&chars, i) {
                    out.push(chars[i..end].iter().collect());
                    i = end;
                    continue;
                }
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                out.push(chars[i..j].iter().collect());
                i = j;
            } else if is_word_char(c) {
                let mut j = i;
                while j < chars.len() && is_word_char(chars[j]) {
                    j += 1;
                }
                out.push(chars[i..j].iter().collect());
                i = j;
            } else {
                out.push(c.to_string());
                i += 1;
            }
        }
    }
    out
}

/// Inverse of [`tokenize`] up to whitespace normalization: punctuation
/// rejoins the preceding token, hyphens rejoin both neighbors.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true; // suppress the leading space
    for tok in tokens {
        let tok = tok.as_ref();
        let tight_left =
            tok.chars().count() == 1 && TIGHT_LEFT.contains(&tok.chars().next().unwrap());
        if tok == "-" {
            out.push('-');
            glue_next = true;
            continue;
        }
        if !glue_next && !tight_left {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = false;
    }
    out
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from a token corpus: reserved ids first, then every distinct
    /// surface token of `lines` in sorted order.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>) -> Vocabulary {
        let mut set = BTreeSet::new();
        for line in lines {
            for tok in tokenize(line) {
                set.insert(tok);
            }
        }
        let mut words: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        words.extend(set);
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocabulary { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Surface tokens to ids; anything unseen maps to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Ids back to text, dropping reserved control tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&id| id as usize >= RESERVED)
            .map(|&id| self.token(id))
            .collect();
        detokenize(&toks)
    }

    /// True when every surface token of `text` is in vocabulary.
    pub fn covers(&self, text: &str) -> bool {
        tokenize(text).iter().all(|t| self.index.contains_key(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_are_atomic() {
        assert_eq!(
            tokenize("thunder from 1.2s to 10.0s."),
            vec!["thunder", "from", "1.2s", "to", "10.0s", "."]
        );
    }

    #[test]
    fn hyphens_split_and_rejoin() {
        let toks = tokenize("gentle, pitter-patter, rhythmic");
        assert_eq!(
            toks,
            vec!["gentle", ",", "pitter", "-", "patter", ",", "rhythmic"]
        );
        assert_eq!(detokenize(&toks), "gentle, pitter-patter, rhythmic");
    }

    #[test]
    fn detok_tok_is_a_fixed_point_on_the_prompt_corpus() {
        let corpus = [
            "Describe the audio clip concisely.",
            "What sound is it? Answer with the class name.",
            "How many times does the dog bark? It barks 7 times.",
            "Does the first recording create a continuous sound throughout?",
            "an explosive, rumbling, and reverberating sound from 0.6s to 1.4s",
            "no. yes! which one; the second: 12",
        ];
        for line in corpus {
            let once = detokenize(&tokenize(line));
            let twice = detokenize(&tokenize(&once));
            assert_eq!(once, twice, "{line}");
        }
    }

    #[test]
    fn plain_numbers_stay_numbers() {
        assert_eq!(tokenize("barks 12 times"), vec!["barks", "12", "times"]);
    }

    #[test]
    fn vocabulary_roundtrip_and_unk() {
        let v = Vocabulary::build(["the dog barks 3.0s", "rain falls"]);
        assert_eq!(v.token(PAD as u32), "<pad>");
        assert_eq!(v.token(AUDIO), "[AUDIO]");
        let ids = v.encode("the rain falls");
        assert_eq!(v.decode(&ids), "the rain falls");
        assert!(ids.iter().all(|&i| i != UNK));
        let ids = v.encode("the zebra falls");
        assert_eq!(ids[1], UNK);
        assert!(!v.covers("the zebra falls"));
        assert!(v.covers("dog barks 3.0s"));
    }

    #[test]
    fn ids_are_stable_under_rebuild() {
        let a = Vocabulary::build(["b a c", "a d"]);
        let b = Vocabulary::build(["a d", "b a c"]);
        for w in ["a", "b", "c", "d"] {
            assert_eq!(a.id(w), b.id(w));
        }
    }
}
