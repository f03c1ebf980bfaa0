use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Reserved out-of-vocabulary symbol, always id 0.
pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenUnit {
    /// Whitespace-separated words; detokenization joins with single spaces.
    Word,
    /// Unicode scalar values; detokenization concatenates.
    Char,
}

impl FromStr for TokenUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(TokenUnit::Word),
            "char" => Ok(TokenUnit::Char),
            other => invalid(format!("unknown token unit `{other}` (expected word|char)")),
        }
    }
}

impl fmt::Display for TokenUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenUnit::Word => "word",
            TokenUnit::Char => "char",
        })
    }
}

/// Token inventory. Ids `0..V` are symbols (id 0 is [`UNK`]); blank and
/// end-of-sequence both take id `V` in their respective class axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    unit: TokenUnit,
}

/// Result of tokenizing one string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<usize>,
    /// Number of symbols mapped to [`UNK`].
    pub oov: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from `symbols`, inserting [`UNK`] at id 0 if absent.
    pub fn new(symbols: impl IntoIterator<Item = String>, unit: TokenUnit) -> Result<Self> {
        let mut all = vec![UNK.to_string()];
        all.extend(symbols.into_iter().filter(|s| s != UNK));
        let mut index = HashMap::with_capacity(all.len());
        for (i, s) in all.iter().enumerate() {
            if s.is_empty() || (unit == TokenUnit::Word && s.chars().any(char::is_whitespace)) {
                return invalid(format!("invalid symbol {s:?} at index {i}"));
            }
            if unit == TokenUnit::Char && i != UNK_ID && s.chars().count() != 1 {
                return invalid(format!("character vocabulary symbol {s:?} is not a single character"));
            }
            if index.insert(s.clone(), i).is_some() {
                return invalid(format!("duplicate symbol {s:?}"));
            }
        }
        if all.len() < 2 {
            return invalid("vocabulary needs at least one symbol besides <unk>");
        }
        Ok(Vocabulary {
            symbols: all,
            index,
            unit,
        })
    }

    /// `V`: number of symbols including [`UNK`].
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn unit(&self) -> TokenUnit {
        self.unit
    }

    pub fn blank_id(&self) -> usize {
        self.len()
    }

    pub fn eos_id(&self) -> usize {
        self.len()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn tokenize(&self, text: &str) -> Tokenized {
        let mut oov = 0;
        let mut lookup = |s: &str| {
            self.id(s).unwrap_or_else(|| {
                oov += 1;
                UNK_ID
            })
        };
        let ids = match self.unit {
            TokenUnit::Word => text.split_whitespace().map(&mut lookup).collect(),
            TokenUnit::Char => {
                let mut buf = [0u8; 4];
                text.chars().map(|c| lookup(c.encode_utf8(&mut buf))).collect()
            }
        };
        Tokenized { ids, oov }
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let syms = ids
            .iter()
            .map(|&i| {
                self.symbol(i)
                    .ok_or_else(|| Error::Invalid(format!("token id {i} outside [0, {})", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(match self.unit {
            TokenUnit::Word => syms.join(" "),
            TokenUnit::Char => syms.concat(),
        })
    }

    /// One symbol per line, index = line number (line 0 is [`UNK`]).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.symbols.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, unit: TokenUnit) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let symbols: Vec<String> = text.lines().map(str::to_string).collect();
        if symbols.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("first line must be {UNK}"),
            });
        }
        Vocabulary::new(symbols, unit).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// `count` pronounceable syllable names (`ba`, `be`, ..., `zu`, `bab`, ...).
pub fn syllable_names(count: usize) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
    let open = ONSETS
        .iter()
        .flat_map(|c| VOWELS.iter().map(move |v| format!("{c}{v}")));
    let closed = ONSETS.iter().flat_map(|c| {
        VOWELS
            .iter()
            .flat_map(move |v| ONSETS.iter().map(move |k| format!("{c}{v}{k}")))
    });
    open.chain(closed).take(count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vocabulary {
        Vocabulary::new(s.chars().map(String::from), TokenUnit::Char).unwrap()
    }

    #[test]
    fn char_tokenization() {
        let v = chars("abc");
        assert_eq!(v.tokenize("ab").ids, vec![1, 2]);
        let t = v.tokenize("aç");
        assert_eq!(t.ids, vec![1, UNK_ID]);
        assert_eq!(t.oov, 1);
        assert_eq!(v.detokenize(&[3, 1]).unwrap(), "ca");
        assert_eq!(v.blank_id(), 4);
    }

    #[test]
    fn word_tokenization() {
        let v = Vocabulary::new(syllable_names(4), TokenUnit::Word).unwrap();
        let t = v.tokenize(" ba  be\tzz ");
        assert_eq!(t.ids, vec![1, 2, 0]);
        assert_eq!(t.oov, 1);
        assert_eq!(v.detokenize(&[1, 2]).unwrap(), "ba be");
        assert!(v.detokenize(&[9]).is_err());
    }

    #[test]
    fn rejects_duplicates_and_bad_symbols() {
        assert!(Vocabulary::new(["a".into(), "a".into()], TokenUnit::Word).is_err());
        assert!(Vocabulary::new(["a b".into()], TokenUnit::Word).is_err());
        assert!(Vocabulary::new(["ab".into()], TokenUnit::Char).is_err());
        assert!(Vocabulary::new(Vec::<String>::new(), TokenUnit::Word).is_err());
    }

    #[test]
    fn syllables_are_unique() {
        let names = syllable_names(200);
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), 200);
        assert_eq!(&names[..3], &["ba", "be", "bi"]);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::new(syllable_names(7), TokenUnit::Word).unwrap();
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p, TokenUnit::Word).unwrap(), v);
        std::fs::write(&p, "ba\nbe\n").unwrap();
        assert!(Vocabulary::load(&p, TokenUnit::Word).is_err());
    }
}
