use mcu_lab::curves::{sample_curve, train_midpoint, CurveSpec, CurveTrainConfig};
use mcu_lab::data::{make_moons, split_forget_retain};
use mcu_lab::nn::{Activation, MlpArch, MlpModel};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::unlearn::{accuracy_on, mean_loss_on, run_unlearn, train_supervised, Method, TrainSchedule, UnlearnConfig};

fn retain_profile(arch: &MlpArch, spec: &CurveSpec, ds: &mcu_lab::data::SplitDataset, n: usize) -> Vec<f64> {
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
    for noise in [0.25f64, 0.3] {
        for width in [8usize, 16] {
            for data_seed in [4u64, 5, 7, 9] {
                let ds = make_moons(400, noise, data_seed).unwrap();
                let ds = split_forget_retain(&ds, 0.10, 0.2, data_seed).unwrap();
                let arch = MlpArch::new(vec![2, width, 2], Activation::Tanh).unwrap();
                let schedule = TrainSchedule { epochs: 400, batch_size: 32, optimizer: OptimizerSpec::adam(0.01) };
                let (params, _c, _) = train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
                let model = MlpModel::new(arch.clone(), params).unwrap();

                for (lr, ceil, ep) in [(0.002f64, 100.0f64, 120usize), (0.005, 100.0, 120)] {
                    let mk = |seed: u64| {
                        let mut cfg = UnlearnConfig::new(Method::Gd, seed);
                        cfg.epochs = ep;
                        cfg.batch_size = 16;
                        cfg.optimizer = OptimizerSpec::adam(lr);
                        cfg.divergence_ceiling = ceil;
                        cfg
                    };
                    for (s1, s2) in [(1u64, 2u64), (3, 4)] {
                        let e1 = run_unlearn(&model, &ds, &mk(s1)).unwrap();
                        let e2 = run_unlearn(&model, &ds, &mk(s2)).unwrap();
                        let ra1 = accuracy_on(&arch, &e1.params, &ds, &ds.retain_idx).unwrap();
                        let ra2 = accuracy_on(&arch, &e2.params, &ds, &ds.retain_idx).unwrap();
                        if ra1 < 0.85 || ra2 < 0.85 {
                            continue;
                        }
                        let lin = CurveSpec::linear(e1.params.clone(), e2.params.clone()).unwrap();
                        let prof = retain_profile(&arch, &lin, &ds, 16);
                        let b = barrier(&prof);
                        let dist = e1.params.l2_distance(&e2.params);
                        if b > 0.1 {
                            println!("HIT noise={noise} w={width} ds={data_seed} lr={lr} ceil={ceil} seeds=({s1},{s2}) barrier={b:.3} dist={dist:.2} ra=({ra1:.3},{ra2:.3})");
                            if deep {
                                for (clr, steps) in [(0.01f64, 1000usize), (0.05, 500)] {
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
                                            println!("  clr={clr} steps={steps}: barrier {b:.3}->{bb:.3} ({:.0}%) mean {mean_lin:.3}->{mean_bez:.3} {}",
                                                100.0 * (1.0 - bb / b),
                                                if bb <= 0.75 * b && mean_bez < mean_lin { "PASS" } else { "miss" });
                                        }
                                        Err(e) => println!("  clr={clr} steps={steps}: ERROR {e}"),
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
