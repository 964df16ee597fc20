// Does GD's forget loss settle below a ceiling while retain stays fit?
use mcu_lab::data::{make_moons, split_forget_retain};
use mcu_lab::nn::{Activation, MlpArch, MlpModel};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::unlearn::{accuracy_on, run_unlearn, train_supervised, Method, TrainSchedule, UnlearnConfig};

fn main() {
    let ds = make_moons(400, 0.25, 4).unwrap();
    let ds = split_forget_retain(&ds, 0.02, 0.2, 4).unwrap();
    let arch = MlpArch::new(vec![2, 16, 2], Activation::Tanh).unwrap();
    let schedule = TrainSchedule { epochs: 400, batch_size: 32, optimizer: OptimizerSpec::adam(0.01) };
    let (params, _c, _) = train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
    let model = MlpModel::new(arch.clone(), params).unwrap();

    for (lr, sgd, bs) in [(0.002f64, false, 16usize), (0.0005, false, 16), (0.02, true, 16), (0.05, true, 8)] {
        let mut cfg = UnlearnConfig::new(Method::Gd, 1);
        cfg.epochs = 300;
        cfg.batch_size = bs;
        cfg.optimizer = if sgd { OptimizerSpec::sgd(lr) } else { OptimizerSpec::adam(lr) };
        cfg.divergence_ceiling = 100000.0;
        let res = run_unlearn(&model, &ds, &cfg).unwrap();
        let log = &res.training_log;
        let pick = |e: usize| log[e.min(log.len() - 1)];
        let ra = accuracy_on(&arch, &res.params, &ds, &ds.retain_idx).unwrap();
        let fa = accuracy_on(&arch, &res.params, &ds, &ds.forget_idx).unwrap();
        println!(
            "lr={lr} sgd={sgd} bs={bs}: forget loss @10={:.2} @50={:.2} @100={:.2} @200={:.2} @299={:.2} | retain loss @299={:.3} acc={ra:.3} facc={fa:.3}",
            pick(10).1, pick(50).1, pick(100).1, pick(200).1, pick(299).1, pick(299).0
        );
    }
}
