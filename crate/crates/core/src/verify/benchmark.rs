//! The synthetic right-context benchmark: one fixed corpus, several
//! training seeds, and center-only versus factored versus diphone models.

use serde::{Deserialize, Serialize};

use crate::decoder::{estimate_arpa, load_arpa, DecoderConfig, NGramLm};
use crate::priors::{transcript_pair_prior, transcript_prior, Prior, PriorOptions};
use crate::scales::ScaleSet;
use crate::trainer::encoder::EncoderConfig;
use crate::trainer::eval::{evaluate, DecodeMode, EvalReport};
use crate::trainer::{
    train, Checkpoint, Corpus, LossVariant, OclrConfig, SynthSpec, SynthWorld, TrainConfig,
    TrainError, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub spec: SynthSpec,
    pub corpus_seed: u64,
    pub train_utterances: usize,
    /// Held-out utterances for choosing scales; never used for reporting.
    pub dev_utterances: usize,
    pub test_utterances: usize,
    /// Training settings shared by all models; `loss` and `seed` are set per run.
    pub train: TrainConfig,
    /// Decoding scales; `alpha_*` are unused.
    pub decode_scales: ScaleSet,
    pub decoder: DecoderConfig,
    pub lm_order: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            spec: SynthSpec {
                n_phonemes: 20,
                feature_dim: 16,
                noise_std: 2.0,
                vocab_size: 30,
                ..SynthSpec::default()
            },
            corpus_seed: 2024,
            train_utterances: 1000,
            dev_utterances: 200,
            test_utterances: 200,
            train: TrainConfig {
                epochs: 12,
                batch_size: 16,
                encoder: EncoderConfig {
                    hidden: vec![256, 256],
                    ..EncoderConfig::default()
                },
                schedule: OclrConfig {
                    peak_lr: 1e-3,
                    ..OclrConfig::default()
                },
                scales: ScaleSet {
                    alpha_left: 0.1,
                    alpha_right: 0.1,
                    ..ScaleSet::default()
                },
                ..TrainConfig::default()
            },
            decode_scales: ScaleSet {
                beta: 0.3,
                eta: 1.0,
                lambda: 1.0,
                ..ScaleSet::default()
            },
            decoder: DecoderConfig::default(),
            lm_order: 2,
        }
    }
}

/// Corpus, LM and priors shared by every model of the benchmark.
#[derive(Debug, Clone)]
pub struct BenchmarkData {
    pub world: SynthWorld,
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub lm: NGramLm,
    pub center_prior: Prior,
    pub pair_prior: Prior,
}

impl BenchmarkData {
    pub fn new(cfg: &BenchmarkConfig) -> Result<Self, TrainError> {
        let world = SynthWorld::new(&cfg.spec, cfg.corpus_seed)?;
        let train = world.sample(cfg.train_utterances, 0, "train");
        let test = world.sample(cfg.test_utterances, 1, "test");
        let dev = world.sample(cfg.dev_utterances, 2, "dev");
        let transcripts = train.transcripts();
        let arpa = estimate_arpa(&transcripts, world.lex.words(), cfg.lm_order, 0.5);
        let lm = load_arpa(&arpa).map_err(crate::decoder::DecodeError::from)?;
        let opts = PriorOptions::default();
        let center_prior = transcript_prior(&transcripts, &train.lex, &train.inv, &opts)?;
        let pair_prior = transcript_pair_prior(&transcripts, &train.lex, &train.inv, &opts)?;
        Ok(Self {
            world,
            train,
            dev,
            test,
            lm,
            center_prior,
            pair_prior,
        })
    }

    pub fn train_model(
        &self,
        cfg: &BenchmarkConfig,
        loss: LossVariant,
        seed: u64,
        init: Option<&Checkpoint>,
    ) -> Result<TrainOutcome, TrainError> {
        let tc = TrainConfig {
            loss,
            seed,
            ..cfg.train.clone()
        };
        train(&tc, &self.train, init)
    }

    /// Decodes the test split.
    pub fn evaluate(
        &self,
        cfg: &BenchmarkConfig,
        ck: &Checkpoint,
        mode: DecodeMode,
    ) -> Result<EvalReport, TrainError> {
        self.evaluate_on(&self.test, cfg, ck, mode)
    }

    pub fn evaluate_on(
        &self,
        corpus: &Corpus,
        cfg: &BenchmarkConfig,
        ck: &Checkpoint,
        mode: DecodeMode,
    ) -> Result<EvalReport, TrainError> {
        let prior = match mode {
            DecodeMode::Center => &self.center_prior,
            DecodeMode::Diphone => &self.pair_prior,
        };
        evaluate(
            &ck.encoder,
            ck.config.loss,
            corpus,
            &self.lm,
            Some(prior),
            &cfg.decode_scales,
            &cfg.train.transitions,
            &cfg.decoder,
            mode,
        )
    }
}
