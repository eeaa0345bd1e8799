//! Corpus directories: a manifest, the inventory and lexicon files, and per
//! split a flat little-endian `f64` feature matrix with a JSON sidecar,
//! `utt<TAB>words` transcripts and optional frame labels.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::synth::{Corpus, SynthSpec};
use super::{fingerprint, TrainError};
use crate::inventory::PhonemeInventory;
use crate::lexicon::parse_lexicon;
use crate::utterance::Utterance;

pub const FORMAT: &str = "rightctx-corpus-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitInfo {
    pub name: String,
    pub utterances: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub seed: Option<u64>,
    /// Hex SHA-256 of the generating spec's JSON form.
    pub spec_hash: Option<String>,
    pub spec: Option<SynthSpec>,
    pub feature_dim: usize,
    pub frame_shift_s: f64,
    pub splits: Vec<SplitInfo>,
}

impl Manifest {
    pub fn new(
        spec: Option<&SynthSpec>,
        seed: Option<u64>,
        feature_dim: usize,
        frame_shift_s: f64,
    ) -> Self {
        Self {
            format: FORMAT.to_string(),
            seed,
            spec_hash: spec.map(fingerprint),
            spec: spec.cloned(),
            feature_dim,
            frame_shift_s,
            splits: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UttEntry {
    id: String,
    frames: usize,
    /// First row of the utterance in the feature file.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureSidecar {
    dim: usize,
    frame_shift_s: f64,
    dtype: String,
    utterances: Vec<UttEntry>,
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::Corpus(msg.into())
}

/// Writes inventory, lexicon and manifest; splits are added with
/// [`write_split`].
pub fn write_corpus_header(
    dir: &Path,
    corpus: &Corpus,
    manifest: &Manifest,
) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("inventory.txt"), corpus.inv.to_file_string())?;
    fs::write(
        dir.join("lexicon.txt"),
        corpus.lex.to_file_string(&corpus.inv),
    )?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)? + "\n",
    )?;
    Ok(())
}

/// Writes one split and records it in the manifest.
pub fn write_split(
    dir: &Path,
    name: &str,
    corpus: &Corpus,
    manifest: &mut Manifest,
) -> Result<(), TrainError> {
    let sdir = dir.join(name);
    fs::create_dir_all(&sdir)?;
    let dim = manifest.feature_dim;
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    let mut transcripts = String::new();
    let mut labels = String::new();
    let mut offset = 0;
    for u in &corpus.utterances {
        if u.feature_dim() != dim {
            return Err(TrainError::FeatureDim {
                expected: dim,
                got: u.feature_dim(),
            });
        }
        for v in u.features.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(UttEntry {
            id: u.id.clone(),
            frames: u.num_frames(),
            offset,
        });
        offset += u.num_frames();
        transcripts.push_str(&format!("{}\t{}\n", u.id, u.transcript.join(" ")));
        if let Some(l) = &u.frame_labels {
            let names: Vec<&str> = l.iter().map(|&x| corpus.inv.name(x)).collect();
            labels.push_str(&format!("{}\t{}\n", u.id, names.join(" ")));
        }
    }
    fs::write(sdir.join("features.bin"), bytes)?;
    let sidecar = FeatureSidecar {
        dim,
        frame_shift_s: manifest.frame_shift_s,
        dtype: "f64le".into(),
        utterances: entries,
    };
    fs::write(
        sdir.join("features.json"),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    fs::write(sdir.join("transcripts.txt"), transcripts)?;
    if !labels.is_empty() {
        fs::write(sdir.join("labels.txt"), labels)?;
    }
    manifest.splits.retain(|s| s.name != name);
    manifest.splits.push(SplitInfo {
        name: name.to_string(),
        utterances: corpus.utterances.len(),
        frames: offset,
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)? + "\n",
    )?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, TrainError> {
    let path = dir.join("manifest.json");
    let text =
        fs::read_to_string(&path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(corrupt(format!("unknown corpus format `{}`", m.format)));
    }
    Ok(m)
}

fn tab_lines(text: &str) -> impl Iterator<Item = (usize, &str, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (id, rest) = l.split_once('\t').unwrap_or((l, ""));
            (i + 1, id, rest)
        })
}

/// Reads one split of a corpus directory.
pub fn read_split(dir: &Path, name: &str) -> Result<Corpus, TrainError> {
    let manifest = read_manifest(dir)?;
    let inv = PhonemeInventory::parse(&fs::read_to_string(dir.join("inventory.txt"))?)
        .map_err(|e| corrupt(format!("inventory.txt: {e}")))?;
    let lex = parse_lexicon(&fs::read_to_string(dir.join("lexicon.txt"))?, &inv)
        .map_err(|e| corrupt(format!("lexicon.txt: {e}")))?;
    let sdir = dir.join(name);
    if !sdir.is_dir() {
        return Err(corrupt(format!(
            "split `{name}` not found in {}",
            dir.display()
        )));
    }
    let sidecar: FeatureSidecar =
        serde_json::from_str(&fs::read_to_string(sdir.join("features.json"))?)?;
    if sidecar.dtype != "f64le" {
        return Err(corrupt(format!(
            "unsupported feature dtype `{}`",
            sidecar.dtype
        )));
    }
    let bytes = fs::read(sdir.join("features.bin"))?;
    let total: usize = sidecar.utterances.iter().map(|u| u.frames).sum();
    if bytes.len() != total * sidecar.dim * 8 {
        return Err(corrupt(format!(
            "features.bin holds {} bytes, sidecar describes {}",
            bytes.len(),
            total * sidecar.dim * 8
        )));
    }
    let transcripts_text = fs::read_to_string(sdir.join("transcripts.txt"))?;
    let mut transcripts = std::collections::HashMap::new();
    for (_, id, words) in tab_lines(&transcripts_text) {
        transcripts.insert(
            id.to_string(),
            words
                .split_whitespace()
                .map(String::from)
                .collect::<Vec<_>>(),
        );
    }
    let mut labels = std::collections::HashMap::new();
    if let Ok(text) = fs::read_to_string(sdir.join("labels.txt")) {
        for (line, id, names) in tab_lines(&text) {
            let l = names
                .split_whitespace()
                .map(|n| {
                    inv.index_of(n).ok_or_else(|| {
                        corrupt(format!("labels.txt line {line}: unknown label `{n}`"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            labels.insert(id.to_string(), l);
        }
    }
    let mut utterances = Vec::with_capacity(sidecar.utterances.len());
    for e in &sidecar.utterances {
        let start = e.offset * sidecar.dim * 8;
        let end = start + e.frames * sidecar.dim * 8;
        if end > bytes.len() {
            return Err(corrupt(format!("utterance {} exceeds features.bin", e.id)));
        }
        let vals: Vec<f64> = bytes[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let features = Array2::from_shape_vec((e.frames, sidecar.dim), vals).expect("sized above");
        let transcript = transcripts
            .remove(&e.id)
            .ok_or_else(|| corrupt(format!("no transcript for utterance {}", e.id)))?;
        let frame_labels = labels.remove(&e.id);
        if frame_labels
            .as_ref()
            .is_some_and(|l: &Vec<usize>| l.len() != e.frames)
        {
            return Err(corrupt(format!(
                "label count mismatch for utterance {}",
                e.id
            )));
        }
        utterances.push(Utterance {
            id: e.id.clone(),
            features,
            transcript,
            frame_labels,
        });
    }
    Ok(Corpus {
        inv,
        lex,
        utterances,
        frame_shift_s: manifest.frame_shift_s,
    })
}
