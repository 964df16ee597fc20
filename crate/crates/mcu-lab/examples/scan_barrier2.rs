// Criterion-7 fixture hunt: GD endpoints branching from an undertrained
// base commit to different minima; measure the linear retain barrier.
use mcu_lab::curves::{sample_curve, train_midpoint, CurveSpec, CurveTrainConfig};
use mcu_lab::data::{make_moons, split_forget_retain, SplitDataset};
use mcu_lab::nn::{Activation, MlpArch, MlpModel};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::unlearn::{
    accuracy_on, mean_loss_on, run_unlearn, train_supervised, Method, TrainSchedule, UnlearnConfig,
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
    for data_seed in [4u64, 9, 15, 21] {
        let ds = make_moons(400, 0.25, data_seed).unwrap();
        let ds = split_forget_retain(&ds, 0.02, 0.2, data_seed).unwrap();
        for width in [4usize, 6, 8] {
            for base_epochs in [3usize, 8, 15] {
                let arch = MlpArch::new(vec![2, width, 2], Activation::Tanh).unwrap();
                let schedule = TrainSchedule {
                    epochs: base_epochs,
                    batch_size: 32,
                    optimizer: OptimizerSpec::adam(0.01),
                };
                let (params, _c, _) =
                    train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
                let model = MlpModel::new(arch.clone(), params).unwrap();
                let base_acc = accuracy_on(&arch, &model.params, &ds, &ds.train_idx()).unwrap();

                let mk = |seed: u64| {
                    let mut cfg = UnlearnConfig::new(Method::Gd, seed);
                    cfg.epochs = 300;
                    cfg.batch_size = 8;
                    cfg.optimizer = OptimizerSpec::adam(0.002);
                    cfg.divergence_ceiling = 200.0;
                    cfg
                };
                for (s1, s2) in [(1u64, 2u64), (3, 4)] {
                    let r1 = run_unlearn(&model, &ds, &mk(s1));
                    let r2 = run_unlearn(&model, &ds, &mk(s2));
                    let (e1, e2) = match (r1, r2) {
                        (Ok(a), Ok(b)) => (a, b),
                        (e1, e2) => {
                            println!("    ds={data_seed} w={width} be={base_epochs} err: {:?} {:?}", e1.err(), e2.err());
                            continue;
                        }
                    };
                    let ra1 = accuracy_on(&arch, &e1.params, &ds, &ds.retain_idx).unwrap();
                    let ra2 = accuracy_on(&arch, &e2.params, &ds, &ds.retain_idx).unwrap();
                    if ra1 < 0.82 || ra2 < 0.82 {
                        println!("    ds={data_seed} w={width} be={base_epochs} weak ra=({ra1:.2},{ra2:.2}) div=({:?},{:?})", e1.diverged_at, e2.diverged_at);
                        continue;
                    }
                    let lin = CurveSpec::linear(e1.params.clone(), e2.params.clone()).unwrap();
                    let prof = retain_profile(&arch, &lin, &ds, 16);
                    let b = barrier(&prof);
                    let dist = e1.params.l2_distance(&e2.params);
                    println!(
                        "{} ds={data_seed} w={width} be={base_epochs} (acc {base_acc:.2}) seeds=({s1},{s2}): barrier={b:.3} dist={dist:.2} ra=({ra1:.2},{ra2:.2})",
                        if b > 0.1 { "HIT" } else { "   " }
                    );
                    if deep && b > 0.1 {
                        for (clr, steps) in [(0.05f64, 800usize), (0.02, 1500)] {
                            let bez =
                                CurveSpec::bezier(e1.params.clone(), e2.params.clone()).unwrap();
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
    }
}
