// Fixture exploration for the pinned acceptance settings.
use mcu_lab::data::{make_moons, split_forget_retain};
use mcu_lab::eval::forget_quality;
use mcu_lab::nn::{Activation, MlpArch, MlpModel};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::unlearn::{
    accuracy_on, retrain_oracle, run_unlearn, train_supervised, Method, TrainSchedule,
    UnlearnConfig,
};

fn fixture(noise: f64, data_seed: u64, hidden: &[usize]) -> (MlpModel, mcu_lab::data::SplitDataset) {
    let ds = make_moons(400, noise, data_seed).unwrap();
    let ds = split_forget_retain(&ds, 0.02, 0.2, data_seed).unwrap();
    let mut dims = vec![2];
    dims.extend_from_slice(hidden);
    dims.push(2);
    let arch = MlpArch::new(dims, Activation::Tanh).unwrap();
    let schedule = TrainSchedule {
        epochs: 400,
        batch_size: 32,
        optimizer: OptimizerSpec::adam(0.01),
    };
    let (params, _c, _) = train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
    (MlpModel::new(arch, params).unwrap(), ds)
}

fn report(model: &MlpModel, ds: &mcu_lab::data::SplitDataset, cfg: &UnlearnConfig, orig_retain: f64, label: &str) {
    match run_unlearn(model, ds, cfg) {
        Ok(res) => {
            let fa = accuracy_on(&model.arch, &res.params, ds, &ds.forget_idx).unwrap();
            let ra = accuracy_on(&model.arch, &res.params, ds, &ds.retain_idx).unwrap();
            let ok = fa <= 0.5 && ra >= 0.9 * orig_retain;
            println!(
                "  {label} forget={fa:.3} retain={ra:.3} bar={:.3} div={:?} {}",
                0.9 * orig_retain,
                res.diverged_at,
                if ok { "OK" } else { "fail" }
            );
        }
        Err(e) => println!("  {label} ERROR {e}"),
    }
}

fn main() {
    let what = std::env::args().nth(1).unwrap_or_else(|| "methods".into());
    match what.as_str() {
        "methods" => scan_methods(),
        "quality" => scan_quality(),
        "gagd" => scan_gagd(),
        "joint" => scan_joint(),
        "tune" => tune_seed(std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(15)),
        "gdhunt" => gd_hunt(),
        _ => eprintln!("unknown scan"),
    }
}

fn check(model: &MlpModel, ds: &mcu_lab::data::SplitDataset, cfg: &UnlearnConfig, orig_retain: f64) -> Option<(f64, f64)> {
    match run_unlearn(model, ds, cfg) {
        Ok(res) => {
            let fa = accuracy_on(&model.arch, &res.params, ds, &ds.forget_idx).unwrap();
            let ra = accuracy_on(&model.arch, &res.params, ds, &ds.retain_idx).unwrap();
            (fa <= 0.5 && ra >= 0.9 * orig_retain).then_some((fa, ra))
        }
        Err(_) => None,
    }
}

fn gd_hunt() {
    for noise in [0.2f64, 0.25] {
        for data_seed in 1u64..=40 {
            let (model, ds) = fixture(noise, data_seed, &[32, 32]);
            let orig_retain =
                accuracy_on(&model.arch, &model.params, &ds, &ds.retain_idx).unwrap();
            for (lr, ceil, sgd, ep) in [
                (0.005, 60.0, false, 80usize),
                (0.005, 75.0, false, 80),
                (0.005, 90.0, false, 80),
                (0.002, 75.0, false, 150),
                (0.05, 75.0, true, 150),
            ] {
                let mut cfg = UnlearnConfig::new(Method::Gd, 11);
                cfg.epochs = ep;
                cfg.optimizer = if sgd { OptimizerSpec::sgd(lr) } else { OptimizerSpec::adam(lr) };
                cfg.divergence_ceiling = ceil;
                if let Ok(res) = run_unlearn(&model, &ds, &cfg) {
                    let fa = accuracy_on(&model.arch, &res.params, &ds, &ds.forget_idx).unwrap();
                    let ra = accuracy_on(&model.arch, &res.params, &ds, &ds.retain_idx).unwrap();
                    if fa <= 0.5 && ra >= 0.9 * orig_retain {
                        println!(
                            "HIT noise={noise} data_seed={data_seed} lr={lr} ceil={ceil} sgd={sgd} ep={ep} forget={fa:.3} retain={ra:.3} bar={:.3}",
                            0.9 * orig_retain
                        );
                    }
                }
            }
        }
    }
}

fn tune_seed(data_seed: u64) {
    let (model, ds) = fixture(0.2, data_seed, &[32, 32]);
    let orig_retain = accuracy_on(&model.arch, &model.params, &ds, &ds.retain_idx).unwrap();
    println!("data_seed={data_seed} orig retain={orig_retain:.3} forget={:.3}",
        accuracy_on(&model.arch, &model.params, &ds, &ds.forget_idx).unwrap());

    for (lr, bs, ep, seed) in [
        (0.01, 8, 300, 11u64), (0.01, 8, 500, 11), (0.02, 8, 300, 11),
        (0.01, 4, 300, 11), (0.02, 4, 300, 11), (0.01, 8, 300, 12),
        (0.01, 8, 300, 13), (0.02, 4, 500, 11),
    ] {
        let mut cfg = UnlearnConfig::new(Method::Rl, seed);
        cfg.epochs = ep;
        cfg.batch_size = bs;
        cfg.optimizer = OptimizerSpec::adam(lr);
        report(&model, &ds, &cfg, orig_retain, &format!("rl lr={lr} bs={bs} ep={ep} seed={seed}"));
    }
    for (lr, ceil, ep, seed) in [
        (0.005, 120.0, 80, 11u64), (0.002, 120.0, 150, 11), (0.005, 90.0, 80, 11),
        (0.005, 150.0, 80, 11), (0.01, 120.0, 80, 11), (0.005, 120.0, 80, 12),
        (0.005, 120.0, 80, 13), (0.002, 150.0, 150, 11),
    ] {
        let mut cfg = UnlearnConfig::new(Method::Gd, seed);
        cfg.epochs = ep;
        cfg.optimizer = OptimizerSpec::adam(lr);
        cfg.divergence_ceiling = ceil;
        report(&model, &ds, &cfg, orig_retain, &format!("gd lr={lr} ceil={ceil} ep={ep} seed={seed}"));
    }
}

fn scan_joint() {
    for data_seed in 1u64..=30 {
        let (model, ds) = fixture(0.2, data_seed, &[32, 32]);
        let orig_retain = accuracy_on(&model.arch, &model.params, &ds, &ds.retain_idx).unwrap();
        let mut passing: Vec<String> = Vec::new();

        let mut ga = UnlearnConfig::new(Method::Ga, 11);
        ga.epochs = 150;
        ga.optimizer = OptimizerSpec::adam(0.002);
        ga.divergence_ceiling = 40.0;
        if check(&model, &ds, &ga, orig_retain).is_some() { passing.push("ga".into()); }

        let mut gd = UnlearnConfig::new(Method::Gd, 11);
        gd.epochs = 80;
        gd.optimizer = OptimizerSpec::adam(0.005);
        gd.divergence_ceiling = 120.0;
        if check(&model, &ds, &gd, orig_retain).is_some() { passing.push("gd".into()); }

        let mut rl = UnlearnConfig::new(Method::Rl, 11);
        rl.epochs = 300;
        rl.batch_size = 8;
        rl.optimizer = OptimizerSpec::adam(0.01);
        if check(&model, &ds, &rl, orig_retain).is_some() { passing.push("rl".into()); }

        let mut su = rl.clone();
        su.method = Method::Salun;
        su.salun_fraction = 0.5;
        if check(&model, &ds, &su, orig_retain).is_some() { passing.push("salun".into()); }

        for bt_seed in [11u64, 12, 13, 14] {
            let mut bt = UnlearnConfig::new(Method::Bt, bt_seed);
            bt.epochs = 100;
            bt.optimizer = OptimizerSpec::adam(0.01);
            bt.bt_weight = 5.0;
            if check(&model, &ds, &bt, orig_retain).is_some() {
                passing.push(format!("bt{bt_seed}"));
                break;
            }
        }

        let mut npo = UnlearnConfig::new(Method::Npo, 11);
        npo.epochs = 150;
        npo.optimizer = OptimizerSpec::adam(0.01);
        npo.npo_beta = 0.1;
        if check(&model, &ds, &npo, orig_retain).is_some() { passing.push("npo".into()); }

        println!("data_seed={data_seed} orig_retain={orig_retain:.3} passing: {passing:?}");
    }
}

fn scan_gagd() {
    for noise in [0.2f64, 0.25] {
        for data_seed in [1u64, 2, 3, 4, 5, 6, 7, 8] {
            let (model, ds) = fixture(noise, data_seed, &[32, 32]);
            let orig_retain =
                accuracy_on(&model.arch, &model.params, &ds, &ds.retain_idx).unwrap();
            println!(
                "noise={noise} data_seed={data_seed} orig retain={orig_retain:.3} forget={:.3}",
                accuracy_on(&model.arch, &model.params, &ds, &ds.forget_idx).unwrap()
            );
            for (lr, ceil, sgd) in [
                (0.002, 40.0, false),
                (0.002, 80.0, false),
                (0.1, 40.0, true),
                (0.1, 80.0, true),
                (0.3, 40.0, true),
            ] {
                let mut cfg = UnlearnConfig::new(Method::Ga, 11);
                cfg.epochs = 150;
                cfg.optimizer = if sgd { OptimizerSpec::sgd(lr) } else { OptimizerSpec::adam(lr) };
                cfg.divergence_ceiling = ceil;
                report(&model, &ds, &cfg, orig_retain, &format!("ga lr={lr} ceil={ceil} sgd={sgd}"));
            }
            for (lr, ceil, sgd) in [
                (0.002, 90.0, false),
                (0.005, 90.0, false),
                (0.005, 120.0, false),
                (0.1, 90.0, true),
                (0.2, 90.0, true),
            ] {
                let mut cfg = UnlearnConfig::new(Method::Gd, 11);
                cfg.epochs = 80;
                cfg.optimizer = if sgd { OptimizerSpec::sgd(lr) } else { OptimizerSpec::adam(lr) };
                cfg.divergence_ceiling = ceil;
                report(&model, &ds, &cfg, orig_retain, &format!("gd lr={lr} ceil={ceil} sgd={sgd}"));
            }
        }
    }
}

fn scan_methods() {
    for data_seed in [1u64, 2, 3, 4] {
        let (model, ds) = fixture(0.2, data_seed, &[32, 32]);
        let orig_retain = accuracy_on(&model.arch, &model.params, &ds, &ds.retain_idx).unwrap();
        let orig_forget = accuracy_on(&model.arch, &model.params, &ds, &ds.forget_idx).unwrap();
        println!(
            "data_seed={data_seed} |Df|={} orig retain={orig_retain:.3} forget={orig_forget:.3}",
            ds.forget_idx.len()
        );

        // GA
        for (lr, ceil) in [(0.002, 30.0), (0.002, 60.0), (0.005, 30.0)] {
            let mut cfg = UnlearnConfig::new(Method::Ga, 11);
            cfg.epochs = 100;
            cfg.optimizer = OptimizerSpec::adam(lr);
            cfg.divergence_ceiling = ceil;
            report(&model, &ds, &cfg, orig_retain, &format!("ga lr={lr} ceil={ceil}"));
        }
        // GD
        for (lr, ceil) in [(0.002, 60.0), (0.005, 60.0), (0.005, 150.0)] {
            let mut cfg = UnlearnConfig::new(Method::Gd, 11);
            cfg.epochs = 60;
            cfg.optimizer = OptimizerSpec::adam(lr);
            cfg.divergence_ceiling = ceil;
            report(&model, &ds, &cfg, orig_retain, &format!("gd lr={lr} ceil={ceil}"));
        }
        // RL
        for (lr, bs, ep) in [(0.005, 8, 100), (0.01, 8, 100), (0.01, 8, 300)] {
            let mut cfg = UnlearnConfig::new(Method::Rl, 11);
            cfg.epochs = ep;
            cfg.batch_size = bs;
            cfg.optimizer = OptimizerSpec::adam(lr);
            report(&model, &ds, &cfg, orig_retain, &format!("rl lr={lr} bs={bs} ep={ep}"));
        }
        // SalUn
        for (lr, bs, ep, gam) in [(0.01, 8, 100, 0.5), (0.01, 8, 300, 0.5)] {
            let mut cfg = UnlearnConfig::new(Method::Salun, 11);
            cfg.epochs = ep;
            cfg.batch_size = bs;
            cfg.salun_fraction = gam;
            cfg.optimizer = OptimizerSpec::adam(lr);
            report(&model, &ds, &cfg, orig_retain, &format!("salun lr={lr} bs={bs} ep={ep} g={gam}"));
        }
        // BT
        for (alpha, seed) in [(5.0, 11), (10.0, 11), (5.0, 12), (5.0, 13)] {
            let mut cfg = UnlearnConfig::new(Method::Bt, seed);
            cfg.epochs = 100;
            cfg.optimizer = OptimizerSpec::adam(0.01);
            cfg.bt_weight = alpha;
            report(&model, &ds, &cfg, orig_retain, &format!("bt a={alpha} seed={seed}"));
        }
        // NPO
        for (lr, beta, ep) in [(0.005, 0.05, 150), (0.01, 0.05, 150), (0.01, 0.1, 150)] {
            let mut cfg = UnlearnConfig::new(Method::Npo, 11);
            cfg.epochs = ep;
            cfg.optimizer = OptimizerSpec::adam(lr);
            cfg.npo_beta = beta;
            report(&model, &ds, &cfg, orig_retain, &format!("npo lr={lr} b={beta} ep={ep}"));
        }
    }
}

fn scan_quality() {
    for noise in [0.3f64, 0.35] {
        for data_seed in [1u64, 2, 3, 4, 5, 6] {
            let ds = make_moons(800, noise, data_seed).unwrap();
            let ds = split_forget_retain(&ds, 0.10, 0.2, data_seed).unwrap();
            let arch = MlpArch::new(vec![2, 64, 64, 2], Activation::Relu).unwrap();
            let schedule = TrainSchedule {
                epochs: 1500,
                batch_size: 16,
                optimizer: OptimizerSpec::adam(0.002),
            };
            let (base, _c, _) =
                train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
            let base_acc = accuracy_on(&arch, &base, &ds, &ds.train_idx()).unwrap();
            let forget_acc_retrain = 0.0f64;
            let _ = forget_acc_retrain;
            print!("base_train_acc={base_acc:.3} ");
            let (r1, _) = retrain_oracle(&arch, &ds, &schedule, 97).unwrap();
            let (r2, _) = retrain_oracle(&arch, &ds, &schedule, 98).unwrap();
            let p_self =
                forget_quality(&r1, &r2, &arch, &ds, mcu_lab::eval::ForgetStatistic::Xent).unwrap();
            let p_orig =
                forget_quality(&base, &r1, &arch, &ds, mcu_lab::eval::ForgetStatistic::Xent)
                    .unwrap();
            println!(
                "noise={noise} seed={data_seed} |Df|={} p_self={p_self:.4} (>0.05) p_orig={p_orig:.6} (<0.05) {}",
                ds.forget_idx.len(),
                if p_self > 0.05 && p_orig < 0.05 { "OK" } else { "FAIL" }
            );
        }
    }
}
