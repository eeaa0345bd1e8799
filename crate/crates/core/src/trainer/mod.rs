//! Desk-scale full-sum training: synthetic corpora, a windowed encoder,
//! Nesterov Adam with a one-cycle schedule, and checkpoints.

pub mod checkpoint;
pub mod corpus_io;
pub mod encoder;
pub mod eval;
pub mod optim;
pub mod synth;

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fullsum::{sequence_loss, FullSumError, Streams};
use crate::inventory::PhonemeInventory;
use crate::lexicon::{phonemize, LexiconError};
use crate::par;
use crate::scales::{ScaleSet, TransitionModel};
use crate::topology::{build_ctc_fsa, build_hmm_fsa, AlignmentGraph, SilenceMode, TopologyError};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use encoder::{output_frames, Encoder, EncoderConfig, Head, HeadOutputs};
pub use optim::{oclr_schedule, NadamState, OclrConfig, OptimizerConfig};
pub use synth::{synth_corpus, Corpus, SynthSpec, SynthWorld};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("utterance has no frames")]
    EmptyUtterance,
    #[error("feature dimension {got} does not match the encoder input {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("step {step} outside schedule of {total_steps} steps")]
    StepOutOfRange { step: usize, total_steps: usize },
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("initial checkpoint is incompatible: {0}")]
    Incompatible(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("corpus format error: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    FullSum(#[from] FullSumError),
    #[error(transparent)]
    Decode(#[from] crate::decoder::DecodeError),
    #[error(transparent)]
    Prior(#[from] crate::priors::PriorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Ctc,
    HmmCenter,
    #[default]
    #[serde(alias = "hmm_factored_lcr")]
    FactoredLcr,
    #[serde(alias = "diphone")]
    DiphoneJoint,
}

impl LossVariant {
    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Ctc => "ctc",
            LossVariant::HmmCenter => "hmm_center",
            LossVariant::FactoredLcr => "factored_lcr",
            LossVariant::DiphoneJoint => "diphone_joint",
        }
    }

    /// Head sizes for an HMM inventory of `n` labels (CTC uses the same
    /// count with blank in place of silence).
    pub fn head_dims(self, n: usize) -> encoder::HeadDims {
        match self {
            LossVariant::Ctc | LossVariant::HmmCenter => [None, Some(n), None, None],
            LossVariant::FactoredLcr => [Some(n + 1), Some(n), Some(n + 1), None],
            LossVariant::DiphoneJoint => [None, None, None, Some((n + 1) * n)],
        }
    }

    /// Label inventory used by this variant's topology.
    pub fn inventory(self, hmm: &PhonemeInventory) -> PhonemeInventory {
        match self {
            LossVariant::Ctc => hmm.to_ctc(),
            _ => hmm.to_hmm(),
        }
    }
}

/// Starting a run from an existing checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitOptions {
    /// Constant learning rate of the initialized stage.
    pub lr: f64,
    /// Fraction of steps at constant `lr` before the linear decay to the
    /// schedule's final learning rate.
    pub hold_fraction: f64,
    /// Start with fresh optimizer moments instead of the checkpoint's.
    pub reset_moments: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            hold_fraction: 0.9,
            reset_moments: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossVariant,
    pub scales: ScaleSet,
    pub transitions: TransitionModel,
    /// Optional silence in the HMM training graphs.
    pub silence: SilenceMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: OclrConfig,
    pub optimizer: OptimizerConfig,
    pub encoder: EncoderConfig,
    pub init: InitOptions,
    pub seed: u64,
    /// Abort when more than this fraction of an epoch's utterances has no
    /// alignment path.
    pub max_no_path_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossVariant::default(),
            scales: ScaleSet::default(),
            transitions: TransitionModel::default(),
            silence: SilenceMode::Optional,
            epochs: 30,
            batch_size: 16,
            schedule: OclrConfig::default(),
            optimizer: OptimizerConfig::default(),
            encoder: EncoderConfig::default(),
            init: InitOptions::default(),
            seed: 0,
            max_no_path_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.scales
            .validate_training()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.transitions
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.schedule.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.encoder.stride == 0 {
            return Err(TrainError::Config("encoder stride must be positive".into()));
        }
        if !(self.init.hold_fraction > 0.0 && self.init.hold_fraction < 1.0 && self.init.lr > 0.0) {
            return Err(TrainError::Config(
                "init.hold_fraction must lie in (0, 1), init.lr positive".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Summed utterance losses over summed output frames.
    pub mean_loss: f64,
    pub utterances: usize,
    pub frames: usize,
    pub no_path: usize,
    pub steps: usize,
    pub lr_last: f64,
    pub grad_norm_mean: f64,
    pub clipped_steps: usize,
    /// Loss of the first batch in corpus order after the epoch.
    pub probe_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    /// Probe loss before the first update when starting from a checkpoint.
    pub initial_probe_loss: Option<f64>,
    pub wall_seconds: f64,
}

/// Alignment graph for `transcript` under `variant`.
pub fn training_graph(
    variant: LossVariant,
    transcript: &[String],
    corpus: &Corpus,
    transitions: &TransitionModel,
    silence: SilenceMode,
) -> Result<AlignmentGraph, TrainError> {
    let phones = phonemize(transcript, &corpus.lex)?;
    Ok(match variant {
        LossVariant::Ctc => build_ctc_fsa(&phones, &corpus.inv.to_ctc())?,
        _ => build_hmm_fsa(&phones, &corpus.inv.to_hmm(), silence, transitions)?,
    })
}

pub fn streams_for(variant: LossVariant, out: &HeadOutputs) -> Streams<'_> {
    let get = |h: Head| out.get(h).expect("head present for loss variant").view();
    match variant {
        LossVariant::Ctc => Streams::Ctc(get(Head::Center)),
        LossVariant::HmmCenter => Streams::Center(get(Head::Center)),
        LossVariant::FactoredLcr => Streams::Factored {
            left: get(Head::Left),
            center: get(Head::Center),
            right: get(Head::Right),
        },
        LossVariant::DiphoneJoint => Streams::Diphone(get(Head::Joint)),
    }
}

/// Loss of one utterance and, on request, its parameter gradient.
pub struct UtteranceLoss {
    pub loss: f64,
    pub frames: usize,
    pub grad: Option<Encoder>,
}

pub fn utterance_loss(
    enc: &Encoder,
    features: ndarray::ArrayView2<'_, f64>,
    graph: &AlignmentGraph,
    variant: LossVariant,
    scales: &ScaleSet,
    want_grad: bool,
) -> Result<UtteranceLoss, TrainError> {
    let cache = enc.forward(features)?;
    let res = sequence_loss(&streams_for(variant, &cache.outputs), graph, scales)?;
    let frames = cache.outputs.frames();
    let grad = want_grad.then(|| {
        let mut g = enc.zeros_like();
        let head_grads: [Option<Array2<f64>>; 4] = [
            res.grad_left,
            res.grad_center,
            res.grad_right,
            res.grad_joint,
        ];
        enc.backward(&cache, &head_grads, &mut g);
        g
    });
    Ok(UtteranceLoss {
        loss: res.loss,
        frames,
        grad,
    })
}

/// Summed losses and gradients of a batch, reduced in batch order.
struct BatchSum {
    loss: f64,
    frames: usize,
    no_path: usize,
    grad: Option<Encoder>,
}

fn batch_sum(
    enc: &Encoder,
    corpus: &Corpus,
    graphs: &[AlignmentGraph],
    idx: &[usize],
    cfg: &TrainConfig,
    want_grad: bool,
) -> Result<BatchSum, TrainError> {
    let results = par::map(idx, |&i| {
        utterance_loss(
            enc,
            corpus.utterances[i].features.view(),
            &graphs[i],
            cfg.loss,
            &cfg.scales,
            want_grad,
        )
    });
    let mut sum = BatchSum {
        loss: 0.0,
        frames: 0,
        no_path: 0,
        grad: None,
    };
    for r in results {
        match r {
            Ok(u) => {
                sum.loss += u.loss;
                sum.frames += u.frames;
                if let Some(g) = u.grad {
                    match sum.grad.as_mut() {
                        Some(acc) => acc.add_assign(&g),
                        None => sum.grad = Some(g),
                    }
                }
            }
            Err(TrainError::FullSum(FullSumError::NoPath { .. })) => sum.no_path += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(sum)
}

/// Frame-normalized loss of the first `batch_size` utterances in corpus order.
pub fn probe_loss(
    enc: &Encoder,
    corpus: &Corpus,
    graphs: &[AlignmentGraph],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let n = cfg.batch_size.min(corpus.utterances.len());
    let idx: Vec<usize> = (0..n).collect();
    let s = batch_sum(enc, corpus, graphs, &idx, cfg, false)?;
    Ok(if s.frames == 0 {
        f64::NAN
    } else {
        s.loss / s.frames as f64
    })
}

pub fn train(
    cfg: &TrainConfig,
    corpus: &Corpus,
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome, TrainError> {
    train_with(cfg, corpus, init, &mut |_, _| Ok(()))
}

/// Trains and calls `on_epoch` with each epoch's metrics and checkpoint.
pub fn train_with(
    cfg: &TrainConfig,
    corpus: &Corpus,
    init: Option<&Checkpoint>,
    on_epoch: &mut dyn FnMut(&EpochMetrics, &Checkpoint) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    let started = Instant::now();
    cfg.validate()?;
    let n_utts = corpus.utterances.len();
    if n_utts == 0 {
        return Err(TrainError::EmptyCorpus);
    }
    let dim = corpus.feature_dim().expect("nonempty corpus");
    if let Some(u) = corpus.utterances.iter().find(|u| u.feature_dim() != dim) {
        return Err(TrainError::FeatureDim {
            expected: dim,
            got: u.feature_dim(),
        });
    }
    let graphs = par::map(&corpus.utterances, |u| {
        training_graph(
            cfg.loss,
            &u.transcript,
            corpus,
            &cfg.transitions,
            cfg.silence,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let heads = cfg.loss.head_dims(corpus.inv.len());
    let mut enc = Encoder::random(cfg.encoder.clone(), dim, &heads, &mut rng);
    let mut opt = NadamState::new(&enc);
    let mut initial_probe_loss = None;
    if let Some(ck) = init {
        enc.load_from(&ck.encoder)?;
        if let (false, Some(old)) = (cfg.init.reset_moments, ck.optimizer.as_ref()) {
            opt = NadamState::carry_over(&enc, old);
        }
        initial_probe_loss = Some(probe_loss(&enc, corpus, &graphs, cfg)?);
    }

    let batches_per_epoch = n_utts.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let lr_at = |step: usize| -> Result<f64, TrainError> {
        match init {
            Some(_) => optim::constant_then_decay(
                step,
                total_steps,
                cfg.init.lr,
                cfg.schedule.final_lr,
                cfg.init.hold_fraction,
            ),
            None => cfg.schedule.lr(step, total_steps),
        }
    };

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n_utts).collect();
    let mut step = 0;
    let mut last_checkpoint = None;
    for epoch in 1..=cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut m = EpochMetrics {
            epoch,
            mean_loss: 0.0,
            utterances: n_utts,
            frames: 0,
            no_path: 0,
            steps: 0,
            lr_last: 0.0,
            grad_norm_mean: 0.0,
            clipped_steps: 0,
            probe_loss: 0.0,
        };
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let s = batch_sum(&enc, corpus, &graphs, batch, cfg, true)?;
            m.no_path += s.no_path;
            let lr = lr_at(step)?;
            step += 1;
            let Some(mut grad) = s.grad else { continue };
            if !s.loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: format!("non-finite batch loss {}", s.loss),
                });
            }
            loss_sum += s.loss;
            m.frames += s.frames;
            grad.scale(1.0 / s.frames as f64);
            let norm = optim::clip_global_norm(&mut grad, cfg.optimizer.clip_norm);
            if !norm.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: format!("non-finite gradient norm {norm}"),
                });
            }
            if norm > cfg.optimizer.clip_norm {
                m.clipped_steps += 1;
            }
            m.grad_norm_mean += norm;
            m.steps += 1;
            m.lr_last = lr;
            opt.update(&mut enc, &grad, lr, &cfg.optimizer);
        }
        if m.no_path as f64 > cfg.max_no_path_fraction * n_utts as f64 {
            return Err(TrainError::Diverged {
                epoch,
                reason: format!(
                    "{} of {} utterances had no alignment path",
                    m.no_path, n_utts
                ),
            });
        }
        m.mean_loss = if m.frames > 0 {
            loss_sum / m.frames as f64
        } else {
            f64::NAN
        };
        m.grad_norm_mean /= m.steps.max(1) as f64;
        m.probe_loss = probe_loss(&enc, corpus, &graphs, cfg)?;
        log::info!(
            "epoch {epoch}: loss {:.5} lr {:.3e} no-path {} grad-norm {:.3}",
            m.mean_loss,
            m.lr_last,
            m.no_path,
            m.grad_norm_mean
        );
        metrics.push(m);
        let ck = Checkpoint {
            encoder: enc.clone(),
            config: cfg.clone(),
            epoch,
            step: step as u64,
            metrics: metrics.clone(),
            probe_loss: metrics.last().expect("pushed").probe_loss,
            optimizer: Some(opt.clone()),
        };
        on_epoch(metrics.last().expect("pushed"), &ck)?;
        last_checkpoint = Some(ck);
    }
    Ok(TrainOutcome {
        checkpoint: last_checkpoint.expect("at least one epoch"),
        metrics,
        initial_probe_loss,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
