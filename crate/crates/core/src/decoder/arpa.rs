//! ARPA-format n-gram language models with Katz backoff scoring.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
/// Longest supported n-gram order.
pub const MAX_ORDER: usize = 6;

const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Error, PartialEq)]
pub enum LmError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("n-gram order {0} not supported (max {MAX_ORDER})")]
    Order(usize),
    #[error("word `{0}` is not in the LM vocabulary and the LM has no <unk>")]
    Oov(String),
    #[error("the LM has no {0} entry")]
    MissingSymbol(&'static str),
}

/// Word history of at most `MAX_ORDER - 1` ids, oldest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct LmHistory {
    ids: [u32; MAX_ORDER - 1],
    len: u8,
}

impl LmHistory {
    pub fn as_slice(&self) -> &[u32] {
        &self.ids[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends `word`, keeping only the newest `keep` ids.
    pub fn push(&self, word: u32, keep: usize) -> LmHistory {
        let mut all: Vec<u32> = self.as_slice().to_vec();
        all.push(word);
        let start = all.len().saturating_sub(keep);
        LmHistory::from_slice(&all[start..])
    }

    pub fn from_slice(ids: &[u32]) -> LmHistory {
        let mut h = LmHistory::default();
        let n = ids.len().min(MAX_ORDER - 1);
        h.ids[..n].copy_from_slice(&ids[ids.len() - n..]);
        h.len = n as u8;
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    /// Natural-log probability.
    logprob: f64,
    /// Natural-log backoff weight (0 when absent).
    backoff: f64,
}

/// Backoff n-gram model. Values are read as log10 and stored in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// `grams[k]` holds the (k+1)-grams.
    grams: Vec<HashMap<Vec<u32>, Entry>>,
    warnings: Vec<String>,
}

impl NGramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Id for `word`, falling back to `<unk>` when present.
    pub fn resolve(&self, word: &str) -> Result<u32, LmError> {
        self.word_id(word)
            .or_else(|| self.word_id(UNK))
            .ok_or_else(|| LmError::Oov(word.to_string()))
    }

    pub fn bos(&self) -> Result<u32, LmError> {
        self.word_id(BOS).ok_or(LmError::MissingSymbol(BOS))
    }

    pub fn eos(&self) -> Result<u32, LmError> {
        self.word_id(EOS).ok_or(LmError::MissingSymbol(EOS))
    }

    /// Non-fatal issues found while loading, e.g. count mismatches.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Initial history: `<s>` for models above unigram order, else empty.
    pub fn start_history(&self) -> Result<LmHistory, LmError> {
        if self.order > 1 {
            Ok(LmHistory::from_slice(&[self.bos()?]))
        } else {
            Ok(LmHistory::default())
        }
    }

    /// Appends a word to a history, truncated to `order - 1` ids.
    pub fn advance(&self, history: &LmHistory, word: u32) -> LmHistory {
        history.push(word, self.order - 1)
    }

    /// Backoff-completed `ln P(word | history)`.
    pub fn score_ids(&self, history: &[u32], word: u32) -> f64 {
        let keep = history.len().min(self.order - 1);
        let mut h = &history[history.len() - keep..];
        let mut backoff = 0.0;
        let mut key: Vec<u32> = Vec::with_capacity(self.order);
        loop {
            key.clear();
            key.extend_from_slice(h);
            key.push(word);
            if let Some(e) = self.grams[h.len()].get(&key) {
                return backoff + e.logprob;
            }
            if h.is_empty() {
                return f64::NEG_INFINITY;
            }
            if let Some(e) = self.grams[h.len() - 1].get(h) {
                backoff += e.backoff;
            }
            h = &h[1..];
        }
    }

    /// `ln P(word | history)` by word strings.
    pub fn lm_score<S: AsRef<str>>(&self, history: &[S], word: &str) -> Result<f64, LmError> {
        let ids = history
            .iter()
            .map(|w| self.resolve(w.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.score_ids(&ids, self.resolve(word)?))
    }

    /// Log probability of a full sentence including `</s>`, starting from
    /// `<s>` context.
    pub fn sentence_score<S: AsRef<str>>(&self, words: &[S]) -> Result<f64, LmError> {
        let mut hist = self.start_history()?;
        let mut total = 0.0;
        for w in words {
            let id = self.resolve(w.as_ref())?;
            total += self.score_ids(hist.as_slice(), id);
            hist = self.advance(&hist, id);
        }
        Ok(total + self.score_ids(hist.as_slice(), self.eos()?))
    }
}

/// Parses ARPA text. Declared n-gram counts that disagree with the listed
/// entries produce warnings, not errors.
pub fn load_arpa(text: &str) -> Result<NGramLm, LmError> {
    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Data,
        Grams(usize),
        End,
    }
    let mut section = Section::Preamble;
    let mut declared: BTreeMap<usize, usize> = BTreeMap::new();
    let mut lm = NGramLm {
        order: 0,
        vocab: Vec::new(),
        index: HashMap::new(),
        grams: Vec::new(),
        warnings: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        let err = |msg: String| LmError::Parse { line: line_no, msg };
        if line.is_empty() {
            continue;
        }
        if line == "\\data\\" {
            if section != Section::Preamble {
                return Err(err("unexpected \\data\\".into()));
            }
            section = Section::Data;
            continue;
        }
        if line == "\\end\\" {
            if !matches!(section, Section::Grams(_)) {
                return Err(err("\\end\\ before any n-gram section".into()));
            }
            section = Section::End;
            continue;
        }
        if line.starts_with('\\') {
            let n = line
                .strip_prefix('\\')
                .and_then(|s| s.strip_suffix("-grams:"))
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| err(format!("malformed section header `{line}`")))?;
            if section == Section::Preamble || section == Section::End {
                return Err(err(format!(
                    "section `{line}` outside \\data\\ ... \\end\\"
                )));
            }
            if !declared.contains_key(&n) {
                return Err(err(format!("section `{line}` not declared in \\data\\")));
            }
            section = Section::Grams(n);
            continue;
        }
        match section {
            Section::Preamble => continue,
            Section::End => return Err(err("content after \\end\\".into())),
            Section::Data => {
                let rest = line
                    .strip_prefix("ngram ")
                    .ok_or_else(|| err(format!("expected `ngram N=count`, got `{line}`")))?;
                let (n, c) = rest
                    .split_once('=')
                    .ok_or_else(|| err("expected `ngram N=count`".into()))?;
                let n: usize = n
                    .trim()
                    .parse()
                    .map_err(|_| err("bad n-gram order".into()))?;
                let c: usize = c
                    .trim()
                    .parse()
                    .map_err(|_| err("bad n-gram count".into()))?;
                if n == 0 {
                    return Err(err("n-gram order 0".into()));
                }
                if n > MAX_ORDER {
                    return Err(LmError::Order(n));
                }
                declared.insert(n, c);
            }
            Section::Grams(n) => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != n + 1 && fields.len() != n + 2 {
                    return Err(err(format!("expected {n}-gram entry, got `{line}`")));
                }
                let logprob: f64 = fields[0]
                    .parse()
                    .map_err(|_| err(format!("bad log probability `{}`", fields[0])))?;
                let backoff: f64 = match fields.get(n + 1) {
                    Some(b) => b.parse().map_err(|_| err(format!("bad backoff `{b}`")))?,
                    None => 0.0,
                };
                let mut key = Vec::with_capacity(n);
                for w in &fields[1..=n] {
                    let id = match lm.index.get(*w) {
                        Some(&id) => id,
                        None if n == 1 => {
                            let id = lm.vocab.len() as u32;
                            lm.vocab.push(w.to_string());
                            lm.index.insert(w.to_string(), id);
                            id
                        }
                        None => return Err(err(format!("word `{w}` has no unigram entry"))),
                    };
                    key.push(id);
                }
                while lm.grams.len() < n {
                    lm.grams.push(HashMap::new());
                }
                lm.grams[n - 1].insert(
                    key,
                    Entry {
                        logprob: logprob * LN_10,
                        backoff: backoff * LN_10,
                    },
                );
            }
        }
    }
    if section != Section::End {
        return Err(LmError::Parse {
            line: text.lines().count(),
            msg: "missing \\end\\".into(),
        });
    }
    let order = declared.keys().copied().max().unwrap_or(0);
    if order == 0 {
        return Err(LmError::Parse {
            line: 1,
            msg: "no n-gram counts in \\data\\".into(),
        });
    }
    while lm.grams.len() < order {
        lm.grams.push(HashMap::new());
    }
    for (&n, &c) in &declared {
        let got = lm.grams[n - 1].len();
        if got != c {
            let msg = format!("{n}-gram count mismatch: declared {c}, found {got}");
            log::warn!("{msg}");
            lm.warnings.push(msg);
        }
    }
    lm.order = order;
    Ok(lm)
}

/// Estimates a backoff bigram (or unigram, `order == 1`) LM from word
/// transcripts with absolute discounting and writes it as ARPA text.
/// Unigrams are add-one smoothed over `vocab` plus `</s>`.
pub fn estimate_arpa<S: AsRef<str>>(
    transcripts: &[Vec<S>],
    vocab: &[String],
    order: usize,
    discount: f64,
) -> String {
    assert!(
        order == 1 || order == 2,
        "only unigram and bigram estimation"
    );
    let mut words: Vec<&str> = vocab.iter().map(String::as_str).collect();
    words.push(EOS);
    let mut uni: BTreeMap<&str, f64> = words.iter().map(|w| (*w, 0.0)).collect();
    let mut bi: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut hist_counts: BTreeMap<&str, f64> = BTreeMap::new();
    for t in transcripts {
        let mut prev = BOS;
        for w in t.iter().map(AsRef::as_ref).chain(std::iter::once(EOS)) {
            if let Some(c) = uni.get_mut(w) {
                *c += 1.0;
                *bi.entry((prev, w)).or_default() += 1.0;
                *hist_counts.entry(prev).or_default() += 1.0;
                prev = w;
            }
        }
    }
    let total: f64 = uni.values().sum::<f64>() + uni.len() as f64;
    let p_uni: BTreeMap<&str, f64> = uni.iter().map(|(w, c)| (*w, (c + 1.0) / total)).collect();

    let mut backoffs: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bigrams: Vec<(f64, &str, &str)> = Vec::new();
    if order == 2 {
        for (&h, &ch) in &hist_counts {
            let seen: Vec<(&str, f64)> = bi
                .range((h, "")..)
                .take_while(|((hh, _), _)| *hh == h)
                .map(|((_, w), c)| (*w, *c))
                .collect();
            let mut seen_uni = 0.0;
            for &(w, c) in &seen {
                bigrams.push((((c - discount) / ch).log10(), h, w));
                seen_uni += p_uni[w];
            }
            let left_over = discount * seen.len() as f64 / ch;
            backoffs.insert(h, (left_over / (1.0 - seen_uni)).log10());
        }
    }

    let mut out = String::new();
    out.push_str("\\data\\\n");
    let _ = writeln!(out, "ngram 1={}", uni.len() + 1);
    if order == 2 {
        let _ = writeln!(out, "ngram 2={}", bigrams.len());
    }
    out.push_str("\n\\1-grams:\n");
    let bos_bo = backoffs.get(BOS).copied();
    match bos_bo {
        Some(b) => {
            let _ = writeln!(out, "-99\t{BOS}\t{b:.8}");
        }
        None => {
            let _ = writeln!(out, "-99\t{BOS}");
        }
    }
    for w in &words {
        let lp = p_uni[w].log10();
        match backoffs.get(w) {
            Some(b) if *w != EOS => {
                let _ = writeln!(out, "{lp:.8}\t{w}\t{b:.8}");
            }
            _ => {
                let _ = writeln!(out, "{lp:.8}\t{w}");
            }
        }
    }
    if order == 2 {
        out.push_str("\n\\2-grams:\n");
        for (lp, h, w) in &bigrams {
            let _ = writeln!(out, "{lp:.8}\t{h} {w}");
        }
    }
    out.push_str("\n\\end\\\n");
    out
}
