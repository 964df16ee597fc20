// Criterion-6 fixture: overlapping blobs, memorizing base vs retrain oracle.
use mcu_lab::data::{make_blobs, split_forget_retain};
use mcu_lab::eval::{forget_quality, ForgetStatistic};
use mcu_lab::nn::{Activation, MlpArch};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::unlearn::{accuracy_on, retrain_oracle, train_supervised, TrainSchedule};

fn main() {
    for spread in [2.0f64, 2.5] {
        for data_seed in [1u64, 2, 3, 4] {
            let ds = make_blobs(800, 3, spread, data_seed).unwrap();
            let ds = split_forget_retain(&ds, 0.10, 0.2, data_seed).unwrap();
            let arch = MlpArch::new(vec![2, 64, 64, 3], Activation::Relu).unwrap();
            let schedule = TrainSchedule {
                epochs: 500,
                batch_size: 16,
                optimizer: OptimizerSpec::adam(0.002),
            };
            let t0 = std::time::Instant::now();
            let (base, _c, _) = train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
            let (r1, _) = retrain_oracle(&arch, &ds, &schedule, 97).unwrap();
            let (r2, _) = retrain_oracle(&arch, &ds, &schedule, 98).unwrap();
            let train_acc = accuracy_on(&arch, &base, &ds, &ds.train_idx()).unwrap();
            let base_f = accuracy_on(&arch, &base, &ds, &ds.forget_idx).unwrap();
            let retr_f = accuracy_on(&arch, &r1, &ds, &ds.forget_idx).unwrap();
            let p_self = forget_quality(&r1, &r2, &arch, &ds, ForgetStatistic::Xent).unwrap();
            let p_orig = forget_quality(&base, &r1, &arch, &ds, ForgetStatistic::Xent).unwrap();
            println!(
                "spread={spread} seed={data_seed} |Df|={} train_acc={train_acc:.3} base_f={base_f:.3} retr_f={retr_f:.3} p_self={p_self:.4} p_orig={p_orig:.6} {} [{:.0?}]",
                ds.forget_idx.len(),
                if p_self > 0.05 && p_orig < 0.05 { "OK" } else { "FAIL" },
                t0.elapsed()
            );
        }
    }
}
