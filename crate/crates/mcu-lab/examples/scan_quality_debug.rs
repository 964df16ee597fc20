use mcu_lab::data::{make_moons, split_forget_retain};
use mcu_lab::nn::{per_sample_xent, Activation, MlpArch};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::unlearn::{retrain_oracle, train_supervised, TrainSchedule};
use mcu_lab::eval::ks_two_sample;

fn main() {
    let ds = make_moons(400, 0.2, 1).unwrap();
    let ds = split_forget_retain(&ds, 0.10, 0.2, 1).unwrap();
    let arch = MlpArch::new(vec![2, 32, 32, 2], Activation::Tanh).unwrap();
    let schedule = TrainSchedule { epochs: 400, batch_size: 32, optimizer: OptimizerSpec::adam(0.01) };
    let (base, _c, _) = train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
    let (r1, _) = retrain_oracle(&arch, &ds, &schedule, 97).unwrap();

    let losses = |params: &mcu_lab::nn::ParamVector| -> Vec<f64> {
        let (x, y) = ds.batch_unlogged(&ds.forget_idx);
        let logits = mcu_lab::nn::forward_logits_with(&arch, params, &x).unwrap();
        per_sample_xent(&logits, &y).unwrap()
    };
    let mut lb = losses(&base);
    let mut lr = losses(&r1);
    lb.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lr.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |v: &[f64], p: f64| v[((v.len() - 1) as f64 * p) as usize];
    println!("base   forget losses: min={:.2e} q25={:.2e} med={:.2e} q75={:.2e} max={:.2e}", lb[0], q(&lb,0.25), q(&lb,0.5), q(&lb,0.75), lb[lb.len()-1]);
    println!("retrain forget losses: min={:.2e} q25={:.2e} med={:.2e} q75={:.2e} max={:.2e}", lr[0], q(&lr,0.25), q(&lr,0.5), q(&lr,0.75), lr[lr.len()-1]);
    let (d, p) = ks_two_sample(&lb, &lr).unwrap();
    println!("KS D={d:.4} p={p:.6} n={}", lb.len());
}
