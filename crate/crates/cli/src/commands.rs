use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use rightctx::decoder::{estimate_arpa, force_align, load_arpa, NGramLm};
use rightctx::priors::{transcript_pair_prior, transcript_prior, EstimationMode, Prior};
use rightctx::trainer::corpus_io::{read_split, write_corpus_header, write_split, Manifest};
use rightctx::trainer::eval::{evaluate, output_frame_labels, DecodeMode, EvalReport};
use rightctx::trainer::{
    load_checkpoint, save_checkpoint, streams_for, train_with, training_graph, Checkpoint, Corpus,
    LossVariant, SynthWorld,
};
use rightctx::verify::suite::run_suite;
use rightctx::wer::{wer, ErrorCounts};

use crate::config::{parse_sweep, RunConfig};
use crate::error::CliError;

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// JSON report of a command, with the failure that sets a nonzero exit
/// status after the report is written.
pub struct Report {
    pub value: Value,
    pub failure: Option<CliError>,
}

impl From<Value> for Report {
    fn from(value: Value) -> Self {
        Report {
            value,
            failure: None,
        }
    }
}

fn need<'a>(
    flag: Option<&'a Path>,
    fallback: &'a Option<PathBuf>,
    what: &str,
) -> Result<&'a Path, CliError> {
    flag.or(fallback.as_deref())
        .ok_or_else(|| CliError::Usage(format!("no {what} given (flag or paths.{what})")))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn synth(cfg: &RunConfig, out: Option<&Path>) -> Result<Value, CliError> {
    let dir = need(out, &cfg.paths.corpus, "corpus")?;
    let world = SynthWorld::new(&cfg.synth, cfg.corpus_seed)?;
    let sizes = [cfg.splits.train, cfg.splits.dev, cfg.splits.test];
    // Streams follow the benchmark: train 0, test 1, dev 2.
    let streams = [0, 2, 1];
    let mut manifest = Manifest::new(
        Some(&cfg.synth),
        Some(cfg.corpus_seed),
        cfg.synth.feature_dim,
        cfg.synth.frame_shift_s,
    );
    let mut header_written = false;
    for ((name, n), stream) in SPLITS.iter().zip(sizes).zip(streams) {
        if n == 0 {
            continue;
        }
        let corpus = world.sample(n, stream, name);
        if !header_written {
            write_corpus_header(dir, &corpus, &manifest)?;
            header_written = true;
        }
        write_split(dir, name, &corpus, &mut manifest)?;
        log::info!("wrote {n} utterances to {}", dir.join(name).display());
    }
    if !header_written {
        return Err(CliError::Usage("all split sizes are zero".into()));
    }
    Ok(json!({ "command": "synth", "corpus": dir, "manifest": manifest }))
}

pub struct TrainArgs<'a> {
    pub corpus: Option<&'a Path>,
    pub split: &'a str,
    pub out: Option<&'a Path>,
    pub init: Option<&'a Path>,
}

pub fn train(cfg: &RunConfig, args: &TrainArgs<'_>) -> Result<Value, CliError> {
    let dir = need(args.corpus, &cfg.paths.corpus, "corpus")?;
    let out = need(args.out, &cfg.paths.checkpoint, "checkpoint")?;
    let corpus = read_split(dir, args.split)?;
    let init = args.init.map(load_checkpoint).transpose()?;
    log::info!(
        "training {} on {} utterances for {} epochs",
        cfg.train.loss.name(),
        corpus.utterances.len(),
        cfg.train.epochs
    );
    let outcome = train_with(&cfg.train, &corpus, init.as_ref(), &mut |_, ck| {
        save_checkpoint(out, ck)
    })?;
    save_checkpoint(out, &outcome.checkpoint)?;
    Ok(json!({
        "command": "train",
        "checkpoint": out,
        "fingerprint": outcome.checkpoint.fingerprint(),
        "loss": cfg.train.loss,
        "initialized_from": args.init,
        "initial_probe_loss": outcome.initial_probe_loss,
        "wall_seconds": outcome.wall_seconds,
        "metrics": outcome.metrics,
    }))
}

fn load_lm(cfg: &RunConfig, lm: Option<&Path>, train: &Corpus) -> Result<NGramLm, CliError> {
    let text = match lm.or(cfg.paths.lm.as_deref()) {
        Some(p) => {
            fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => estimate_arpa(
            &train.transcripts(),
            train.lex.words(),
            cfg.decode.lm_order,
            cfg.decode.lm_discount,
        ),
    };
    load_arpa(&text).map_err(|e| CliError::Data(format!("language model: {e}")))
}

fn load_prior(
    cfg: &RunConfig,
    prior: Option<&Path>,
    train: &Corpus,
    variant: LossVariant,
    mode: DecodeMode,
) -> Result<Prior, CliError> {
    let inv = variant.inventory(&train.inv);
    let p = match prior.or(cfg.paths.prior.as_deref()) {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Prior::parse(&text, &inv, EstimationMode::Transcript)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => {
            let t = train.transcripts();
            match mode {
                DecodeMode::Center => transcript_prior(&t, &train.lex, &inv, &cfg.decode.prior),
                DecodeMode::Diphone => {
                    transcript_pair_prior(&t, &train.lex, &inv, &cfg.decode.prior)
                }
            }
            .map_err(|e| CliError::Data(e.to_string()))?
        }
    };
    Ok(p)
}

pub struct DecodeArgs<'a> {
    pub corpus: Option<&'a Path>,
    pub split: &'a str,
    pub checkpoint: Option<&'a Path>,
    pub lm: Option<&'a Path>,
    pub prior: Option<&'a Path>,
    pub ctm: Option<&'a Path>,
    pub lm_scales: Option<&'a str>,
}

fn summary(r: &EvalReport) -> Value {
    json!({
        "lambda": r.scales.lambda,
        "wer": r.wer,
        "counts": r.counts,
        "rtf": r.rtf,
        "failures": r.failures,
    })
}

pub fn decode(cfg: &RunConfig, args: &DecodeArgs<'_>) -> Result<Value, CliError> {
    let dir = need(args.corpus, &cfg.paths.corpus, "corpus")?;
    let ck = load_checkpoint(need(args.checkpoint, &cfg.paths.checkpoint, "checkpoint")?)?;
    let corpus = read_split(dir, args.split)?;
    let train = read_split(dir, "train")?;
    let variant = ck.config.loss;
    let mode = cfg.decode.mode;
    let lm = load_lm(cfg, args.lm, &train)?;
    let prior = load_prior(cfg, args.prior, &train, variant, mode)?;
    let lambdas = match args.lm_scales {
        Some(s) => parse_sweep(s)?,
        None => vec![cfg.decode.scales.lambda],
    };
    let mut reports = Vec::with_capacity(lambdas.len());
    for lambda in lambdas {
        let mut scales = cfg.decode.scales;
        scales.lambda = lambda;
        if variant == LossVariant::Ctc {
            scales.beta = cfg.decode.ctc_prior_scale;
        }
        let r = evaluate(
            &ck.encoder,
            variant,
            &corpus,
            &lm,
            Some(&prior),
            &scales,
            &ck.config.transitions,
            &cfg.decode.search,
            mode,
        )?;
        log::info!("lambda {lambda:.3}: WER {:.2}% RTF {:.5}", r.wer, r.rtf);
        reports.push(r);
    }
    let best = reports
        .iter()
        .min_by(|a, b| a.wer.total_cmp(&b.wer))
        .expect("at least one scale");
    if best.failures > 0 {
        log::warn!("{} utterances had no surviving hypothesis", best.failures);
    }
    if let Some(path) = args.ctm {
        let ctm: String = best.utterances.iter().map(|u| u.ctm.as_str()).collect();
        fs::write(path, ctm)?;
    }
    let mut out = json!({
        "command": "decode",
        "split": args.split,
        "mode": mode,
        "variant": variant,
        "best": to_json(best),
    });
    if args.lm_scales.is_some() {
        out["sweep"] = Value::Array(reports.iter().map(summary).collect());
    }
    Ok(out)
}

pub struct AlignArgs<'a> {
    pub corpus: Option<&'a Path>,
    pub split: &'a str,
    pub checkpoint: Option<&'a Path>,
    pub out: Option<&'a Path>,
}

/// Forced alignment of every utterance. No-path utterances are reported
/// and turn the exit status numerical after the output is written.
pub fn align(cfg: &RunConfig, args: &AlignArgs<'_>) -> Result<Report, CliError> {
    let dir = need(args.corpus, &cfg.paths.corpus, "corpus")?;
    let ck: Checkpoint =
        load_checkpoint(need(args.checkpoint, &cfg.paths.checkpoint, "checkpoint")?)?;
    let corpus = read_split(dir, args.split)?;
    let tc = &ck.config;
    if tc.loss == LossVariant::Ctc {
        return Err(CliError::Usage("alignment needs an HMM checkpoint".into()));
    }
    let sil = corpus.inv.silence();
    let mut text = String::new();
    let mut utts = Vec::new();
    let mut no_path = Vec::new();
    let (mut hit, mut total) = (0usize, 0usize);
    for u in &corpus.utterances {
        let g = training_graph(tc.loss, &u.transcript, &corpus, &tc.transitions, tc.silence)?;
        let out = ck.encoder.encode(u.features.view())?;
        let al = match force_align(&streams_for(tc.loss, &out), &g, &tc.scales) {
            Ok(a) => a,
            Err(e @ rightctx::fullsum::FullSumError::NoPath { .. }) => {
                no_path.push(json!({ "id": u.id, "error": e.to_string() }));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let names: Vec<&str> = al.labels.iter().map(|&l| corpus.inv.name(l)).collect();
        let _ = writeln!(text, "{}\t{}", u.id, names.join(" "));
        let accuracy = u.frame_labels.as_ref().map(|truth| {
            let truth = output_frame_labels(truth, ck.encoder.config.stride);
            let (mut h, mut t) = (0, 0);
            for (&a, &r) in al.labels.iter().zip(&truth) {
                if Some(r) != sil {
                    t += 1;
                    h += usize::from(a == r);
                }
            }
            hit += h;
            total += t;
            if t == 0 {
                0.0
            } else {
                h as f64 / t as f64
            }
        });
        utts.push(json!({ "id": u.id, "score": al.score, "frames": al.labels.len(), "accuracy": accuracy }));
    }
    if let Some(p) = args.out {
        fs::write(p, &text)?;
    } else {
        print!("{text}");
    }
    let report = json!({
        "command": "align",
        "split": args.split,
        "aligned": utts.len(),
        "accuracy": (total > 0).then(|| hit as f64 / total as f64),
        "no_path": no_path,
        "utterances": utts,
    });
    let failure = (!no_path.is_empty()).then(|| {
        CliError::Numerical(format!(
            "{} utterances have no alignment path",
            no_path.len()
        ))
    });
    Ok(Report {
        value: report,
        failure,
    })
}

fn parse_transcripts(text: &str) -> Result<Vec<(String, Vec<String>)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .ok_or_else(|| CliError::Data(format!("line {}: missing utterance id", i + 1)))?;
        out.push((id.to_string(), parts.map(String::from).collect()));
    }
    Ok(out)
}

/// Hypothesis words per utterance from CTM lines, ordered by start time.
pub fn parse_ctm(text: &str) -> Result<HashMap<String, Vec<String>>, CliError> {
    let mut timed: HashMap<String, Vec<(f64, String)>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with(";;") {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || {
            CliError::Data(format!(
                "CTM line {}: expected `utt channel start dur word`",
                i + 1
            ))
        };
        if f.len() < 5 {
            return Err(bad());
        }
        let start: f64 = f[2].parse().map_err(|_| bad())?;
        f[3].parse::<f64>().map_err(|_| bad())?;
        timed
            .entry(f[0].to_string())
            .or_default()
            .push((start, f[4].to_string()));
    }
    Ok(timed
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, v.into_iter().map(|(_, w)| w).collect())
        })
        .collect())
}

pub fn score(reference: &Path, hypothesis: &Path, ctm: bool) -> Result<Value, CliError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    };
    let refs = parse_transcripts(&read(reference)?)?;
    let hyp_text = read(hypothesis)?;
    let hyps: HashMap<String, Vec<String>> = if ctm {
        parse_ctm(&hyp_text)?
    } else {
        parse_transcripts(&hyp_text)?.into_iter().collect()
    };
    if let Some(extra) = hyps.keys().find(|k| !refs.iter().any(|(id, _)| id == *k)) {
        return Err(CliError::Data(format!(
            "hypothesis for unknown utterance `{extra}`"
        )));
    }
    let mut total = ErrorCounts::default();
    let mut utts = Vec::new();
    for (id, r) in &refs {
        let h = hyps.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let c = wer(r, h);
        total += c;
        utts.push(json!({ "id": id, "errors": c, "empty_reference": c.empty_reference() }));
    }
    Ok(json!({
        "command": "score",
        "wer": total.wer(),
        "counts": total,
        "utterances": utts,
    }))
}

pub fn verify(cfg: &RunConfig) -> Report {
    let report = run_suite(&cfg.verify);
    for p in &report.properties {
        log::info!(
            "{:<30} {:>5} n={:<4} max_err={:.3e} tol={:.0e} {:.2}s",
            p.name,
            if p.passed { "ok" } else { "FAIL" },
            p.checked,
            p.max_error,
            p.tolerance,
            p.seconds
        );
    }
    let failed: Vec<&str> = report
        .properties
        .iter()
        .filter(|p| !p.passed)
        .map(|p| p.name.as_str())
        .collect();
    Report {
        value: json!({ "command": "verify", "passed": report.passed(), "report": report }),
        failure: (!failed.is_empty())
            .then(|| CliError::Numerical(format!("properties failed: {}", failed.join(", ")))),
    }
}
