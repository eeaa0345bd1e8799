//! Phoneme label inventory with end-of-word variants and the special
//! silence/blank symbols.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Reserved symbol for utterance edges in left/right context factors.
pub const BOUNDARY: &str = "#";
/// Suffix appended to a base phoneme to name its end-of-word variant.
pub const EOW_SUFFIX: &str = "#eow";
/// Name used for the CTC blank symbol.
pub const BLANK: &str = "<b>";

#[derive(Debug, Error, PartialEq)]
pub enum InventoryError {
    #[error("duplicate phoneme `{0}`")]
    Duplicate(String),
    #[error("invalid phoneme name `{0}`")]
    InvalidName(String),
    #[error("more than one silence symbol (`{0}` and `{1}`)")]
    MultipleSilence(String, String),
    #[error("line {line}: unknown tag `{tag}`")]
    UnknownTag { line: usize, tag: String },
    #[error("inventory has no phonemes")]
    Empty,
}

/// Which special (non-phoneme) symbol an inventory carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialSymbol {
    None,
    Silence,
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSymbol {
    pub name: String,
    /// Base phoneme name; equal to `name` for plain phonemes and specials.
    pub base: String,
    pub is_silence: bool,
    pub is_blank: bool,
    pub is_eow: bool,
}

/// Ordered label set. Indices are dense: all plain phonemes first, then
/// their end-of-word variants in the same order, then the special symbol
/// (silence for HMM topologies, blank for CTC) if any.
///
/// Two inventories built from the same base list agree on every phoneme
/// index, so a lexicon parsed against one is valid for the other.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeInventory {
    symbols: Vec<PhonemeSymbol>,
    index: HashMap<String, usize>,
    n_base: usize,
    silence_name: Option<String>,
    special: SpecialSymbol,
}

/// A left or right context value: either a label index or the utterance
/// boundary sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Context {
    Label(usize),
    Boundary,
}

impl Context {
    /// Class index in a context factor's output space of `n_labels + 1`
    /// classes; the boundary occupies the last slot.
    pub fn class(self, n_labels: usize) -> usize {
        match self {
            Context::Label(l) => l,
            Context::Boundary => n_labels,
        }
    }

    pub fn from_class(class: usize, n_labels: usize) -> Context {
        if class == n_labels {
            Context::Boundary
        } else {
            Context::Label(class)
        }
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != BOUNDARY
        && !name.contains('#')
        && !name.contains('+')
        && !name.contains(':')
        && !name.chars().any(char::is_whitespace)
}

impl PhonemeInventory {
    /// Builds an inventory from base phoneme names. `silence` names the
    /// silence phoneme; it is kept out of the EOW doubling.
    pub fn new<S: AsRef<str>>(base: &[S], silence: Option<&str>) -> Result<Self, InventoryError> {
        if base.is_empty() {
            return Err(InventoryError::Empty);
        }
        let mut symbols = Vec::with_capacity(2 * base.len() + 1);
        for b in base {
            let b = b.as_ref();
            if !valid_name(b) {
                return Err(InventoryError::InvalidName(b.to_string()));
            }
            symbols.push(PhonemeSymbol {
                name: b.to_string(),
                base: b.to_string(),
                is_silence: false,
                is_blank: false,
                is_eow: false,
            });
        }
        for b in base {
            let b = b.as_ref();
            symbols.push(PhonemeSymbol {
                name: format!("{b}{EOW_SUFFIX}"),
                base: b.to_string(),
                is_silence: false,
                is_blank: false,
                is_eow: true,
            });
        }
        if let Some(s) = silence {
            if !valid_name(s) {
                return Err(InventoryError::InvalidName(s.to_string()));
            }
            symbols.push(PhonemeSymbol {
                name: s.to_string(),
                base: s.to_string(),
                is_silence: true,
                is_blank: false,
                is_eow: false,
            });
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.name.clone(), i).is_some() {
                return Err(InventoryError::Duplicate(s.name.clone()));
            }
        }
        Ok(Self {
            symbols,
            index,
            n_base: base.len(),
            silence_name: silence.map(str::to_string),
            special: if silence.is_some() {
                SpecialSymbol::Silence
            } else {
                SpecialSymbol::None
            },
        })
    }

    /// Parses the inventory file format: one phoneme per line, optionally
    /// tagged `:silence`. Blank lines and `#`-prefixed comments are skipped.
    pub fn parse(text: &str) -> Result<Self, InventoryError> {
        let mut base = Vec::new();
        let mut silence: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once(':') {
                Some((name, tag)) => {
                    if tag.trim() != "silence" {
                        return Err(InventoryError::UnknownTag {
                            line: i + 1,
                            tag: tag.trim().to_string(),
                        });
                    }
                    let name = name.trim().to_string();
                    if let Some(prev) = &silence {
                        return Err(InventoryError::MultipleSilence(prev.clone(), name));
                    }
                    silence = Some(name);
                }
                None => base.push(line.to_string()),
            }
        }
        Self::new(&base, silence.as_deref())
    }

    /// Serializes to the inventory file format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols[..self.n_base] {
            out.push_str(&s.name);
            out.push('\n');
        }
        if let Some(s) = &self.silence_name {
            out.push_str(s);
            out.push_str(":silence\n");
        }
        out
    }

    /// Same phoneme labels with the special slot holding silence
    /// (HMM topologies).
    pub fn to_hmm(&self) -> Self {
        let mut inv = self.clone();
        if inv.special == SpecialSymbol::Blank {
            inv.symbols.pop();
        }
        match inv.silence_name.clone() {
            Some(s) => {
                if inv.special != SpecialSymbol::Silence {
                    inv.symbols.push(PhonemeSymbol {
                        name: s.clone(),
                        base: s,
                        is_silence: true,
                        is_blank: false,
                        is_eow: false,
                    });
                }
                inv.special = SpecialSymbol::Silence;
            }
            None => inv.special = SpecialSymbol::None,
        }
        inv.rebuild_index();
        inv
    }

    /// Same phoneme labels with the special slot holding the blank
    /// (CTC topology). Silence is dropped from the emitting set.
    pub fn to_ctc(&self) -> Self {
        let mut inv = self.clone();
        if inv.special != SpecialSymbol::None {
            inv.symbols.pop();
        }
        inv.symbols.push(PhonemeSymbol {
            name: BLANK.to_string(),
            base: BLANK.to_string(),
            is_silence: false,
            is_blank: true,
            is_eow: false,
        });
        inv.special = SpecialSymbol::Blank;
        inv.rebuild_index();
        inv
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Number of base phonemes (before EOW doubling, excluding specials).
    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn special(&self) -> SpecialSymbol {
        self.special
    }

    pub fn symbols(&self) -> &[PhonemeSymbol] {
        &self.symbols
    }

    pub fn symbol(&self, idx: usize) -> &PhonemeSymbol {
        &self.symbols[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.symbols[idx].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn silence(&self) -> Option<usize> {
        match self.special {
            SpecialSymbol::Silence => Some(self.symbols.len() - 1),
            _ => None,
        }
    }

    pub fn silence_name(&self) -> Option<&str> {
        self.silence_name.as_deref()
    }

    pub fn blank(&self) -> Option<usize> {
        match self.special {
            SpecialSymbol::Blank => Some(self.symbols.len() - 1),
            _ => None,
        }
    }

    pub fn is_silence(&self, idx: usize) -> bool {
        self.symbols[idx].is_silence
    }

    pub fn is_eow(&self, idx: usize) -> bool {
        self.symbols[idx].is_eow
    }

    /// EOW variant of a phoneme label (identity for EOW labels);
    /// `None` for specials.
    pub fn eow_variant(&self, idx: usize) -> Option<usize> {
        let s = &self.symbols[idx];
        if s.is_silence || s.is_blank {
            None
        } else if s.is_eow {
            Some(idx)
        } else {
            Some(idx + self.n_base)
        }
    }

    /// Plain variant of a phoneme label.
    pub fn plain_variant(&self, idx: usize) -> Option<usize> {
        let s = &self.symbols[idx];
        if s.is_silence || s.is_blank {
            None
        } else if s.is_eow {
            Some(idx - self.n_base)
        } else {
            Some(idx)
        }
    }

    /// Display name of a context value.
    pub fn context_name(&self, ctx: Context) -> &str {
        match ctx {
            Context::Label(l) => self.name(l),
            Context::Boundary => BOUNDARY,
        }
    }
}

impl fmt::Display for PhonemeInventory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.symbols.iter().map(|s| s.name.as_str()).collect();
        write!(f, "[{}]", names.join(" "))
    }
}
