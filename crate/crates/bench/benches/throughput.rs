use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use clear_core::augment::{augment, AugmentationKind, AugmentationParams, AugmentationPipeline, Lexicon};
use clear_core::batching::BatchBuilder;
use clear_core::encoder::{EncoderConfig, ModelParameters, Pooling};
use clear_core::objectives::{contrastive_loss_with_grad, LossConfig, Pairing};
use clear_core::optim::OptimizerState;
use clear_core::rng::CounterRng;
use clear_core::synthetic::generate_corpus;
use clear_core::text::{build_vocab, TokenId, TokenSequence};
use clear_core::train::{batch_loss, train_step, TrainConfig};

fn toy_corpus(n: usize) -> (Vec<TokenSequence>, usize) {
    let texts = generate_corpus(n, 1);
    let vocab = build_vocab(&texts, 1, 10_000).unwrap();
    (texts.iter().map(|t| vocab.encode_text(t)).collect(), vocab.len())
}

fn builder(vocab: usize) -> BatchBuilder {
    BatchBuilder {
        pipeline: AugmentationPipeline::single(AugmentationKind::SpanDeletion),
        augmentation: AugmentationParams::default(),
        masking: Default::default(),
        lexicon: Lexicon::empty(),
        vocab_size: vocab,
        global_seed: 1,
    }
}

fn contrastive(c: &mut Criterion) {
    let mut rng = CounterRng::new(1);
    for n in [16, 64] {
        let z: Vec<f32> = (0..2 * n * 128).map(|_| rng.normal() as f32).collect();
        let pairing = Pairing::interleaved(n);
        c.bench_function(&format!("nt_xent_with_grad/n{n}_d128"), |b| {
            b.iter(|| contrastive_loss_with_grad(black_box(&z), 128, &pairing, 0.5).unwrap())
        });
    }
}

fn augmentation(c: &mut Criterion) {
    let (corpus, _) = toy_corpus(256);
    let params = AugmentationParams::default();
    let lexicon = Lexicon::empty();
    for kind in [AugmentationKind::WordDeletion, AugmentationKind::SpanDeletion, AugmentationKind::Reordering] {
        c.bench_function(&format!("augment_256_sentences/{kind}"), |b| {
            b.iter(|| {
                for (i, s) in corpus.iter().enumerate() {
                    black_box(augment(s, kind, &params, i as u64, &lexicon).unwrap());
                }
            })
        });
    }
}

fn encoder(c: &mut Criterion) {
    let (corpus, vocab) = toy_corpus(64);
    let config = EncoderConfig {
        vocab_size: vocab,
        ..EncoderConfig::default()
    };
    let params = ModelParameters::<f32>::init(&config, 1).unwrap();
    let sentences: Vec<&[TokenId]> = corpus.iter().map(|s| &s[..]).collect();
    let source: Vec<usize> = (0..sentences.len()).collect();
    let batch = builder(vocab).build(&sentences, &source, 0).unwrap();
    let loss = LossConfig::default();

    let mut group = c.benchmark_group("desk_encoder_batch64");
    group.sample_size(10);
    group.bench_function("forward", |b| {
        b.iter(|| batch_loss(&params, &batch, &loss, Pooling::Cls, None, None).unwrap())
    });
    group.bench_function("forward_backward", |b| {
        b.iter_batched_ref(
            || params.zeros_like(),
            |g| batch_loss(&params, &batch, &loss, Pooling::Cls, Some(1), Some(g)).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.bench_function("train_step", |b| {
        b.iter_batched(
            || (params.clone(), OptimizerState::new(&params)),
            |(mut p, mut s)| train_step(&batch, &mut p, &mut s, &TrainConfig::default(), Some(1)).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, contrastive, augmentation, encoder);
criterion_main!(benches);
