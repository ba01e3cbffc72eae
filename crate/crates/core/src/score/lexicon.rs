//! Syllable-to-phoneme lexicon with a dense integer phoneme table.
//!
//! File format: UTF-8 lines `syllable<TAB>ph1 ph2`. Phoneme ids are
//! assigned by first appearance in the file; id 0 is the padding symbol.

use crate::error::{Error, Result};
use std::collections::HashMap;

/// Reserved padding id.
pub const PAD_ID: u32 = 0;

#[derive(Debug, Clone)]
pub struct Lexicon {
    /// Insertion-ordered syllable table: (syllable, phoneme ids).
    entries: Vec<(String, Vec<u32>)>,
    by_syllable: HashMap<String, usize>,
    /// Index = phoneme id; slot 0 is the pad symbol.
    phonemes: Vec<String>,
    by_phoneme: HashMap<String, u32>,
}

impl Lexicon {
    pub fn empty() -> Self {
        let mut lex = Lexicon {
            entries: Vec::new(),
            by_syllable: HashMap::new(),
            phonemes: Vec::new(),
            by_phoneme: HashMap::new(),
        };
        lex.phonemes.push("<pad>".to_string());
        lex.by_phoneme.insert("<pad>".to_string(), PAD_ID);
        lex
    }

    /// Parses the tab-separated lexicon format. Blank lines and lines
    /// starting with '#' are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon::empty();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (syllable, rest) = line.split_once('\t').ok_or(Error::Parse {
                line: lineno + 1,
                col: 1,
                msg: "expected 'syllable<TAB>ph1 ph2'".to_string(),
            })?;
            let phonemes: Vec<&str> = rest.split_whitespace().collect();
            if phonemes.is_empty() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    col: syllable.len() + 2,
                    msg: "entry has no phonemes".to_string(),
                });
            }
            lex.insert(syllable, &phonemes).map_err(|e| Error::Parse {
                line: lineno + 1,
                col: 1,
                msg: e.to_string(),
            })?;
        }
        Ok(lex)
    }

    pub fn insert(&mut self, syllable: &str, phonemes: &[&str]) -> Result<()> {
        if self.by_syllable.contains_key(syllable) {
            return Err(Error::domain(format!("duplicate syllable {syllable:?}")));
        }
        let mut ids = Vec::with_capacity(phonemes.len());
        for &ph in phonemes {
            let id = match self.by_phoneme.get(ph) {
                Some(&id) => id,
                None => {
                    let id = self.phonemes.len() as u32;
                    self.phonemes.push(ph.to_string());
                    self.by_phoneme.insert(ph.to_string(), id);
                    id
                }
            };
            ids.push(id);
        }
        self.by_syllable.insert(syllable.to_string(), self.entries.len());
        self.entries.push((syllable.to_string(), ids));
        Ok(())
    }

    /// Phoneme ids of a syllable; unknown syllables report a lexicon miss.
    pub fn phoneme_ids(&self, syllable: &str) -> Result<&[u32]> {
        self.by_syllable
            .get(syllable)
            .map(|&i| self.entries[i].1.as_slice())
            .ok_or_else(|| Error::LexiconMiss { syllable: syllable.to_string() })
    }

    pub fn contains(&self, syllable: &str) -> bool {
        self.by_syllable.contains_key(syllable)
    }

    /// Number of phoneme ids including the pad symbol.
    pub fn vocab_size(&self) -> usize {
        self.phonemes.len()
    }

    pub fn n_syllables(&self) -> usize {
        self.entries.len()
    }

    pub fn syllables(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(s, _)| s.as_str())
    }

    pub fn phoneme_name(&self, id: u32) -> Option<&str> {
        self.phonemes.get(id as usize).map(String::as_str)
    }

    /// Deterministic text form; `parse(serialize(lex))` assigns equal ids.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (syllable, ids) in &self.entries {
            out.push_str(syllable);
            out.push('\t');
            let names: Vec<&str> = ids.iter().map(|&i| self.phonemes[i as usize].as_str()).collect();
            out.push_str(&names.join(" "));
            out.push('\n');
        }
        out
    }

    /// Built-in pinyin-flavoured lexicon: every consonant+vowel pair plus
    /// the bare vowels. 19 phonemes, 88 syllables.
    pub fn default_lexicon() -> Self {
        const CONSONANTS: [&str; 10] = ["b", "d", "g", "j", "l", "m", "n", "s", "x", "zh"];
        const VOWELS: [&str; 8] = ["a", "e", "i", "o", "u", "ai", "ang", "ong"];
        let mut lex = Lexicon::empty();
        for c in CONSONANTS {
            for v in VOWELS {
                let syllable = format!("{c}{v}");
                lex.insert(&syllable, &[c, v]).expect("built-in lexicon is duplicate-free");
            }
        }
        for v in VOWELS {
            lex.insert(v, &[v]).expect("built-in lexicon is duplicate-free");
        }
        lex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_assigns_ids_by_first_appearance() {
        let lex = Lexicon::parse("ba\tb a\nda\td a\na\ta\n").unwrap();
        assert_eq!(lex.phoneme_ids("ba").unwrap(), &[1, 2]);
        assert_eq!(lex.phoneme_ids("da").unwrap(), &[3, 2]);
        assert_eq!(lex.phoneme_ids("a").unwrap(), &[2]);
        assert_eq!(lex.vocab_size(), 4); // pad, b, a, d
    }

    #[test]
    fn unknown_syllable_is_lexicon_miss() {
        let lex = Lexicon::parse("ba\tb a\n").unwrap();
        match lex.phoneme_ids("zz") {
            Err(Error::LexiconMiss { syllable }) => assert_eq!(syllable, "zz"),
            other => panic!("expected miss, got {other:?}"),
        }
    }

    #[test]
    fn serialize_round_trips_ids() {
        let lex = Lexicon::default_lexicon();
        let again = Lexicon::parse(&lex.serialize()).unwrap();
        assert_eq!(lex.vocab_size(), again.vocab_size());
        for s in lex.syllables() {
            assert_eq!(lex.phoneme_ids(s).unwrap(), again.phoneme_ids(s).unwrap());
        }
    }

    #[test]
    fn default_lexicon_fits_the_vocab() {
        let lex = Lexicon::default_lexicon();
        assert!(lex.vocab_size() <= 60, "vocab {}", lex.vocab_size());
        assert_eq!(lex.n_syllables(), 88);
    }

    #[test]
    fn malformed_line_reports_position() {
        match Lexicon::parse("ba b a\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
