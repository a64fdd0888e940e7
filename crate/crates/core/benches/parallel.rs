use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vora::data::{batch_at, vocab::Vocab, DataConfig};
use vora::kernels;
use vora::model::{Model, ModelConfig};
use vora::par::Exec;
use vora::rng::rng_for;
use vora::tensor::Tensor;
use vora::train::{batch_gradients, prepare_pretrain, TrainConfig, TrainMode};
use vora::vision::Teacher;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [64usize, 256] {
        let mut rng = rng_for(0, "bench", n as u64);
        let a = Tensor::randn(&[n, n], 1.0, &mut rng);
        let b = Tensor::randn(&[n, n], 1.0, &mut rng);
        let mut out = vec![0.0f32; n * n];
        g.bench_with_input(BenchmarkId::new("sequential", n), &n, |bch, &n| {
            bch.iter(|| kernels::matmul_seq(black_box(a.data()), black_box(b.data()), &mut out, n, n, n))
        });
        #[cfg(feature = "parallel")]
        g.bench_with_input(BenchmarkId::new("parallel", n), &n, |bch, &n| {
            bch.iter(|| kernels::matmul_par(black_box(a.data()), black_box(b.data()), &mut out, n, n, n))
        });
    }
    g.finish();
}

fn batch_grads(c: &mut Criterion) {
    let mcfg = ModelConfig::micro(Vocab::standard().len());
    let tcfg = TrainConfig {
        mode: TrainMode::Pretrain,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut model = Model::init(mcfg.clone(), 0).unwrap();
    prepare_pretrain(&mut model, &tcfg).unwrap();
    let teacher = Teacher::init(&mcfg, 0).unwrap();
    let batch = batch_at(0, 0, tcfg.batch_size, &DataConfig::default()).unwrap();
    let trainable = tcfg.mode.trainable();
    let mut g = c.benchmark_group("batch_gradients");
    g.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        g.bench_function(name, |bch| {
            bch.iter(|| batch_gradients(exec, &model, Some(&teacher), &trainable, black_box(&batch), &tcfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, matmul, batch_grads);
criterion_main!(benches);
