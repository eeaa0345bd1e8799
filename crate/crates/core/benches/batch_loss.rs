use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rightctx::par;
use rightctx::topology::SilenceMode;
use rightctx::trainer::{
    training_graph, utterance_loss, Encoder, EncoderConfig, LossVariant, SynthSpec, SynthWorld,
};
use rightctx::{ScaleSet, TransitionModel};

const BATCH: usize = 32;

fn batch_loss(c: &mut Criterion) {
    let spec = SynthSpec {
        n_phonemes: 20,
        vocab_size: 30,
        ..SynthSpec::default()
    };
    let world = SynthWorld::new(&spec, 7).expect("valid spec");
    let corpus = world.sample(BATCH, 0, "bench");
    let scales = ScaleSet::default();
    let transitions = TransitionModel::default();

    let mut group = c.benchmark_group("batch_loss");
    group.sample_size(10);
    for variant in [
        LossVariant::Ctc,
        LossVariant::HmmCenter,
        LossVariant::FactoredLcr,
        LossVariant::DiphoneJoint,
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::random(
            EncoderConfig::default(),
            spec.feature_dim,
            &variant.head_dims(corpus.inv.len()),
            &mut rng,
        );
        let graphs: Vec<_> = corpus
            .utterances
            .iter()
            .map(|u| {
                training_graph(
                    variant,
                    &u.transcript,
                    &corpus,
                    &transitions,
                    SilenceMode::Optional,
                )
                .expect("graph")
            })
            .collect();
        let one = |i: usize| {
            utterance_loss(
                &enc,
                corpus.utterances[i].features.view(),
                &graphs[i],
                variant,
                &scales,
                true,
            )
            .expect("loss")
            .loss
        };
        group.bench_function(BenchmarkId::new("sequential", variant.name()), |b| {
            b.iter(|| par::seq::map_range(BATCH, one).iter().sum::<f64>())
        });
        group.bench_function(BenchmarkId::new("parallel", variant.name()), |b| {
            b.iter(|| par::map_range(BATCH, one).iter().sum::<f64>())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_loss);
criterion_main!(benches);
