//! Single-pronunciation lexicon, transcript phonemization and the
//! position-aware context labeling function.

use std::collections::HashMap;

use thiserror::Error;

use crate::inventory::{Context, PhonemeInventory};

#[derive(Debug, Error, PartialEq)]
pub enum LexiconError {
    #[error("line {line}: expected `word<TAB>phonemes`")]
    Malformed { line: usize },
    #[error("line {line}: unknown phoneme `{phoneme}`")]
    UnknownPhoneme { line: usize, phoneme: String },
    #[error("line {line}: word `{word}` already defined (one pronunciation per word)")]
    DuplicateWord { line: usize, word: String },
    #[error("line {line}: silence or blank cannot appear in a pronunciation")]
    SpecialInPronunciation { line: usize },
    #[error("out-of-vocabulary word `{0}`")]
    Oov(String),
    #[error("position {pos} out of range for sequence of length {len}")]
    OutOfRange { pos: usize, len: usize },
    #[error("lexicon is empty")]
    Empty,
}

/// Word to phoneme-label mapping. Word-final phonemes are stored as their
/// EOW variants. Entries keep file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    words: Vec<String>,
    prons: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    /// Builds a lexicon from base-phoneme pronunciations, mapping the final
    /// phoneme of each to its EOW variant.
    pub fn from_entries<W, P>(
        entries: impl IntoIterator<Item = (W, Vec<P>)>,
        inv: &PhonemeInventory,
    ) -> Result<Self, LexiconError>
    where
        W: Into<String>,
        P: AsRef<str>,
    {
        let mut lex = Lexicon {
            words: Vec::new(),
            prons: Vec::new(),
            index: HashMap::new(),
        };
        for (i, (word, phones)) in entries.into_iter().enumerate() {
            let phones: Vec<&str> = phones.iter().map(AsRef::as_ref).collect();
            lex.insert(i + 1, word.into(), &phones, inv)?;
        }
        Ok(lex)
    }

    fn insert(
        &mut self,
        line: usize,
        word: String,
        phones: &[&str],
        inv: &PhonemeInventory,
    ) -> Result<(), LexiconError> {
        if phones.is_empty() {
            return Err(LexiconError::Malformed { line });
        }
        if self.index.contains_key(&word) {
            return Err(LexiconError::DuplicateWord { line, word });
        }
        let mut pron = Vec::with_capacity(phones.len());
        for &p in phones {
            let idx = inv
                .index_of(p)
                .ok_or_else(|| LexiconError::UnknownPhoneme {
                    line,
                    phoneme: p.to_string(),
                })?;
            let sym = inv.symbol(idx);
            if sym.is_silence || sym.is_blank {
                return Err(LexiconError::SpecialInPronunciation { line });
            }
            pron.push(inv.plain_variant(idx).expect("phoneme label"));
        }
        let last = pron.len() - 1;
        pron[last] = inv.eow_variant(pron[last]).expect("phoneme label");
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.prons.push(pron);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn pronunciation(&self, id: usize) -> &[usize] {
        &self.prons[id]
    }

    pub fn lookup(&self, word: &str) -> Option<&[usize]> {
        self.word_id(word).map(|i| self.prons[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.words
            .iter()
            .zip(&self.prons)
            .map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    /// Serializes in the lexicon file format, with base phoneme names.
    pub fn to_file_string(&self, inv: &PhonemeInventory) -> String {
        let mut out = String::new();
        for (w, p) in self.iter() {
            let names: Vec<&str> = p.iter().map(|&l| inv.symbol(l).base.as_str()).collect();
            out.push_str(w);
            out.push('\t');
            out.push_str(&names.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Parses lexicon file content: one `word<TAB>ph1 ph2 ...` per line;
/// blank lines and `#` comments are skipped.
pub fn parse_lexicon(text: &str, inv: &PhonemeInventory) -> Result<Lexicon, LexiconError> {
    let mut lex = Lexicon {
        words: Vec::new(),
        prons: Vec::new(),
        index: HashMap::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (word, phones) = line
            .split_once('\t')
            .ok_or(LexiconError::Malformed { line: line_no })?;
        let word = word.trim();
        if word.is_empty() {
            return Err(LexiconError::Malformed { line: line_no });
        }
        let phones: Vec<&str> = phones.split_whitespace().collect();
        lex.insert(line_no, word.to_string(), &phones, inv)?;
    }
    Ok(lex)
}

/// Concatenates the pronunciations of `words`.
pub fn phonemize<S: AsRef<str>>(words: &[S], lex: &Lexicon) -> Result<Vec<usize>, LexiconError> {
    let mut out = Vec::new();
    for w in words {
        let w = w.as_ref();
        let pron = lex
            .lookup(w)
            .ok_or_else(|| LexiconError::Oov(w.to_string()))?;
        out.extend_from_slice(pron);
    }
    Ok(out)
}

/// (left, center, right) labels of position `pos` in `phones`.
///
/// Silence is transparent: neighbors are searched past silence positions,
/// and a silence position has boundary contexts on both sides.
pub fn context_labels(
    phones: &[usize],
    pos: usize,
    inv: &PhonemeInventory,
) -> Result<(Context, usize, Context), LexiconError> {
    if pos >= phones.len() {
        return Err(LexiconError::OutOfRange {
            pos,
            len: phones.len(),
        });
    }
    let center = phones[pos];
    if inv.is_silence(center) {
        return Ok((Context::Boundary, center, Context::Boundary));
    }
    let left = phones[..pos]
        .iter()
        .rev()
        .find(|&&l| !inv.is_silence(l))
        .map_or(Context::Boundary, |&l| Context::Label(l));
    let right = phones[pos + 1..]
        .iter()
        .find(|&&l| !inv.is_silence(l))
        .map_or(Context::Boundary, |&l| Context::Label(l));
    Ok((left, center, right))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv() -> PhonemeInventory {
        PhonemeInventory::new(&["k", "ae", "t", "ah", "b"], Some("sil")).unwrap()
    }

    fn names(inv: &PhonemeInventory, p: &[usize]) -> Vec<String> {
        p.iter().map(|&l| inv.name(l).to_string()).collect()
    }

    #[test]
    fn parses_and_marks_word_end() {
        let inv = inv();
        let lex = parse_lexicon("cat\tk ae t\na\tah\n", &inv).unwrap();
        assert_eq!(
            names(&inv, lex.lookup("cat").unwrap()),
            ["k", "ae", "t#eow"]
        );
        assert_eq!(names(&inv, lex.lookup("a").unwrap()), ["ah#eow"]);
        assert_eq!(lex.words(), ["cat", "a"]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let inv = inv();
        assert_eq!(
            parse_lexicon("cat\tk ae t\ncat\tk ae b\n", &inv).unwrap_err(),
            LexiconError::DuplicateWord {
                line: 2,
                word: "cat".into()
            }
        );
        assert_eq!(
            parse_lexicon("# x\ndog\td ao g\n", &inv).unwrap_err(),
            LexiconError::UnknownPhoneme {
                line: 2,
                phoneme: "d".into()
            }
        );
        assert_eq!(
            parse_lexicon("cat k ae t\n", &inv).unwrap_err(),
            LexiconError::Malformed { line: 1 }
        );
        assert_eq!(
            parse_lexicon("cat\t\n", &inv).unwrap_err(),
            LexiconError::Malformed { line: 1 }
        );
        assert_eq!(
            parse_lexicon("pause\tsil\n", &inv).unwrap_err(),
            LexiconError::SpecialInPronunciation { line: 1 }
        );
    }

    #[test]
    fn phonemize_concatenates() {
        let inv = inv();
        let lex = parse_lexicon("cat\tk ae t\na\tah\n", &inv).unwrap();
        let phi = phonemize(&["a", "cat"], &lex).unwrap();
        assert_eq!(names(&inv, &phi), ["ah#eow", "k", "ae", "t#eow"]);
        let empty: [&str; 0] = [];
        assert!(phonemize(&empty, &lex).unwrap().is_empty());
        assert_eq!(
            phonemize(&["dog"], &lex).unwrap_err(),
            LexiconError::Oov("dog".into())
        );
    }

    #[test]
    fn context_labels_at_edges_and_interior() {
        let inv = inv();
        let (k, ae, t) = (0, 1, 2);
        let phi = [k, ae, t];
        assert_eq!(
            context_labels(&phi, 1, &inv).unwrap(),
            (Context::Label(k), ae, Context::Label(t))
        );
        assert_eq!(
            context_labels(&phi, 0, &inv).unwrap(),
            (Context::Boundary, k, Context::Label(ae))
        );
        assert_eq!(
            context_labels(&[3], 0, &inv).unwrap(),
            (Context::Boundary, 3, Context::Boundary)
        );
        assert_eq!(
            context_labels(&phi, 3, &inv).unwrap_err(),
            LexiconError::OutOfRange { pos: 3, len: 3 }
        );
    }

    #[test]
    fn silence_is_transparent() {
        let inv = inv();
        let sil = inv.silence().unwrap();
        let phi = [sil, 0, sil, 1, sil];
        assert_eq!(
            context_labels(&phi, 1, &inv).unwrap(),
            (Context::Boundary, 0, Context::Label(1))
        );
        assert_eq!(
            context_labels(&phi, 3, &inv).unwrap(),
            (Context::Label(0), 1, Context::Boundary)
        );
        assert_eq!(
            context_labels(&phi, 2, &inv).unwrap(),
            (Context::Boundary, sil, Context::Boundary)
        );
    }

    #[test]
    fn file_round_trip() {
        let inv = inv();
        let lex = parse_lexicon("cat\tk ae t\na\tah\n", &inv).unwrap();
        assert_eq!(parse_lexicon(&lex.to_file_string(&inv), &inv).unwrap(), lex);
    }
}
