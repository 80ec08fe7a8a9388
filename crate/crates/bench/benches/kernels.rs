use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use guardmatch::build_model_input;
use guardmatch::harness::synth_corpus;
use guardmatch::model::{backward, forward, init_params, sgd_step, softmax, vectorize, FeatureVector, Logits};
use guardmatch::ssl::{multimatch_unlabeled_loss, HeadTerms};

const DIM: usize = 1 << 18;
const HIDDEN: usize = 256;

fn texts() -> Vec<String> {
    synth_corpus(32, 1)
        .iter()
        .map(|e| build_model_input(e).unwrap())
        .collect()
}

fn features() -> Vec<FeatureVector> {
    texts().iter().map(|t| vectorize(t, DIM)).collect()
}

fn bench_vectorize(c: &mut Criterion) {
    let texts = texts();
    c.bench_function("vectorize/64 prompts", |b| {
        b.iter(|| texts.iter().map(|t| vectorize(black_box(t), DIM).nnz()).sum::<usize>())
    });
}

fn bench_forward_backward(c: &mut Criterion) {
    let xs = features();
    for heads in [1, 3] {
        let params = init_params(DIM, HIDDEN, heads, 7).unwrap();
        c.bench_function(&format!("forward/{heads} head(s)"), |b| {
            b.iter(|| {
                xs.iter()
                    .map(|x| forward(&params, black_box(x)).unwrap().0.len())
                    .sum::<usize>()
            })
        });
        let upstream = vec![[0.25, -0.25]; heads];
        c.bench_function(&format!("forward+backward+sgd/{heads} head(s)"), |b| {
            b.iter_batched(
                || params.clone(),
                |mut p| {
                    for x in &xs {
                        let (_, trace) = forward(&p, x).unwrap();
                        let grads = backward(&p, &trace, &upstream).unwrap();
                        sgd_step(&mut p, &grads, 0.1, 1e-4).unwrap();
                    }
                    p
                },
                BatchSize::LargeInput,
            )
        });
    }
}

fn bench_losses(c: &mut Criterion) {
    let mu_b = 224;
    let heads: Vec<HeadTerms> = (0..3)
        .map(|h| HeadTerms {
            targets: (0..mu_b).map(|b| (b + h) % 2).collect(),
            weights: (0..mu_b).map(|b| [0.0, 0.5, 1.0][(b + h) % 3]).collect(),
            strong_probs: (0..mu_b).map(|b| softmax(&Logits([b as f64 * 0.01, -0.3]))).collect(),
        })
        .collect();
    c.bench_function("multimatch_unlabeled_loss/3x224", |b| {
        b.iter(|| multimatch_unlabeled_loss(black_box(&heads), mu_b).unwrap())
    });
}

criterion_group!(kernels, bench_vectorize, bench_forward_backward, bench_losses);
criterion_main!(kernels);
