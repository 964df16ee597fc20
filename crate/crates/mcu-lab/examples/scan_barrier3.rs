// Criterion-7 hunt, round 3: fixtures whose forget points are mostly
// noise-crossed (a retain-only model misclassifies them). GD then has a
// stable target and can run long enough for seeds to drift apart.
use mcu_lab::curves::{sample_curve, train_midpoint, CurveSpec, CurveTrainConfig};
use mcu_lab::data::{make_moons, split_forget_retain, SplitDataset};
use mcu_lab::nn::{Activation, MlpArch, MlpModel};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::unlearn::{
    accuracy_on, mean_loss_on, retrain_oracle, run_unlearn, train_supervised, Method,
    TrainSchedule, UnlearnConfig,
};

fn retain_profile(arch: &MlpArch, spec: &CurveSpec, ds: &SplitDataset, n: usize) -> Vec<f64> {
    sample_curve(spec, n)
        .unwrap()
        .into_iter()
        .map(|(_, p)| mean_loss_on(arch, &p, ds, &ds.retain_idx).unwrap())
        .collect()
}

fn barrier(values: &[f64]) -> f64 {
    let n = values.len();
    let (e0, e1) = (values[0], values[n - 1]);
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = i as f64 / (n - 1) as f64;
            v - ((1.0 - t) * e0 + t * e1)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn main() {
    let deep = std::env::args().nth(1).map(|v| v == "train").unwrap_or(false);
    let schedule = TrainSchedule {
        epochs: 200,
        batch_size: 32,
        optimizer: OptimizerSpec::adam(0.01),
    };
    for data_seed in 1u64..=40 {
        let ds = make_moons(400, 0.35, data_seed).unwrap();
        let ds = split_forget_retain(&ds, 0.02, 0.2, data_seed).unwrap();
        let arch = MlpArch::new(vec![2, 16, 2], Activation::Tanh).unwrap();
        let (retr, _) = retrain_oracle(&arch, &ds, &schedule, 97).unwrap();
        let crossed = 1.0 - accuracy_on(&arch, &retr, &ds, &ds.forget_idx).unwrap();
        if crossed < 0.65 {
            continue; // want mostly-crossed forget sets
        }
        let (params, _c, _) = train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
        let model = MlpModel::new(arch.clone(), params).unwrap();

        let mk = |seed: u64| {
            let mut cfg = UnlearnConfig::new(Method::Gd, seed);
            cfg.epochs = 400;
            cfg.batch_size = 8;
            cfg.optimizer = OptimizerSpec::adam(0.002);
            cfg.divergence_ceiling = 400.0;
            cfg
        };
        for (s1, s2) in [(1u64, 2u64)] {
            let (Ok(e1), Ok(e2)) = (run_unlearn(&model, &ds, &mk(s1)), run_unlearn(&model, &ds, &mk(s2))) else {
                continue;
            };
            let ra1 = accuracy_on(&arch, &e1.params, &ds, &ds.retain_idx).unwrap();
            let ra2 = accuracy_on(&arch, &e2.params, &ds, &ds.retain_idx).unwrap();
            let rl1 = mean_loss_on(&arch, &e1.params, &ds, &ds.retain_idx).unwrap();
            let rl2 = mean_loss_on(&arch, &e2.params, &ds, &ds.retain_idx).unwrap();
            let lin = CurveSpec::linear(e1.params.clone(), e2.params.clone()).unwrap();
            let prof = retain_profile(&arch, &lin, &ds, 16);
            let b = barrier(&prof);
            let dist = e1.params.l2_distance(&e2.params);
            println!(
                "{} ds={data_seed} crossed={crossed:.2} barrier={b:.3} dist={dist:.2} ra=({ra1:.2},{ra2:.2}) rloss=({rl1:.2},{rl2:.2}) div=({:?},{:?})",
                if b > 0.1 && ra1 > 0.85 && ra2 > 0.85 { "HIT" } else { "   " },
                e1.diverged_at,
                e2.diverged_at,
            );
            if deep && b > 0.1 && ra1 > 0.85 && ra2 > 0.85 {
                for (clr, steps) in [(0.02f64, 1000usize), (0.005, 2000)] {
                    let bez = CurveSpec::bezier(e1.params.clone(), e2.params.clone()).unwrap();
                    let mut ccfg = mk(s1);
                    ccfg.optimizer = OptimizerSpec::sgd(clr);
                    let tc = CurveTrainConfig { steps, seed: 5, ..Default::default() };
                    match train_midpoint(&bez, &model, &ds, &ccfg, &tc) {
                        Ok((trained, _)) => {
                            let bprof = retain_profile(&arch, &trained, &ds, 16);
                            let bb = barrier(&bprof);
                            let mean_lin: f64 = prof.iter().sum::<f64>() / 16.0;
                            let mean_bez: f64 = bprof.iter().sum::<f64>() / 16.0;
                            println!(
                                "  clr={clr} steps={steps}: barrier {b:.3}->{bb:.3} ({:.0}%) mean {mean_lin:.3}->{mean_bez:.3} {}",
                                100.0 * (1.0 - bb / b),
                                if bb <= 0.75 * b && mean_bez < mean_lin { "PASS" } else { "miss" }
                            );
                        }
                        Err(e) => println!("  clr={clr} steps={steps}: ERROR {e}"),
                    }
                }
            }
        }
    }
}
