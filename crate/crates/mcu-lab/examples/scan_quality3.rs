// Criterion-6 fixture: synthetic image-template dataset (noisy class
// templates, IDX-style u8 pixels), where the base memorizes and the
// retrain sees novel instances.
use mcu_lab::data::SplitDataset;
use mcu_lab::eval::{forget_quality, ForgetStatistic};
use mcu_lab::nn::{Activation, MlpArch};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::rng::SplitMix64;
use mcu_lab::tensor::Tensor;
use mcu_lab::unlearn::{accuracy_on, retrain_oracle, train_supervised, TrainSchedule};
use mcu_lab::data::split_forget_retain;

fn synth_images(n: usize, classes: usize, side: usize, noise: f64, seed: u64) -> SplitDataset {
    let mut rng = SplitMix64::new(seed);
    let pixels = side * side;
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..pixels).map(|_| rng.uniform(0.0, 1.0)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for p in 0..pixels {
            let (g, _) = rng.gaussian_pair();
            let v = (templates[c][p] + noise * g).clamp(0.0, 1.0);
            let byte = (v * 255.0).round() as u8; // idx container quantization
            data.push(byte as f32 / 255.0);
        }
    }
    SplitDataset {
        features: Tensor::matrix(n, pixels, data),
        labels,
        n_classes: classes,
        forget_idx: Vec::new(),
        retain_idx: (0..n).collect(),
        test_idx: Vec::new(),
        forget_fraction: 0.0,
        limit_clamped: false,
    }
}

fn main() {
    for noise in [0.3f64, 0.4] {
        for data_seed in [1u64, 2, 3, 4, 5, 6] {
            let t0 = std::time::Instant::now();
            let raw = synth_images(800, 4, 12, noise, data_seed);
            let ds = split_forget_retain(&raw, 0.10, 0.2, data_seed).unwrap();
            let arch = MlpArch::new(vec![144, 32, 4], Activation::Relu).unwrap();
            let schedule = TrainSchedule {
                epochs: 120,
                batch_size: 32,
                optimizer: OptimizerSpec::adam(0.002),
            };
            let (base, _c, _) = train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
            let (r1, _) = retrain_oracle(&arch, &ds, &schedule, 97).unwrap();
            let (r2, _) = retrain_oracle(&arch, &ds, &schedule, 98).unwrap();
            let train_acc = accuracy_on(&arch, &base, &ds, &ds.train_idx()).unwrap();
            let retr_f = accuracy_on(&arch, &r1, &ds, &ds.forget_idx).unwrap();
            let p_self = forget_quality(&r1, &r2, &arch, &ds, ForgetStatistic::Xent).unwrap();
            let p_orig = forget_quality(&base, &r1, &arch, &ds, ForgetStatistic::Xent).unwrap();
            println!(
                "noise={noise} seed={data_seed} |Df|={} train_acc={train_acc:.3} retr_f={retr_f:.3} p_self={p_self:.4} p_orig={p_orig:.6} {} [{:.1?}]",
                ds.forget_idx.len(),
                if p_self > 0.05 && p_orig < 0.05 { "OK" } else { "FAIL" },
                t0.elapsed()
            );
        }
    }
}
