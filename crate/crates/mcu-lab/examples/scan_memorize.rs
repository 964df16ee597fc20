use mcu_lab::data::{make_moons, split_forget_retain};
use mcu_lab::nn::{Activation, MlpArch};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::unlearn::{accuracy_on, train_supervised, TrainSchedule};

fn main() {
    for (n, noise, w, bs, ep, lr) in [
        (800usize, 0.3f64, 64usize, 16usize, 1500usize, 0.002f64),
        (800, 0.3, 128, 16, 1000, 0.002),
        (800, 0.35, 128, 16, 1500, 0.002),
        (600, 0.3, 64, 16, 1500, 0.002),
        (600, 0.35, 128, 8, 1000, 0.002),
    ] {
        let ds = make_moons(n, noise, 1).unwrap();
        let ds = split_forget_retain(&ds, 0.10, 0.2, 1).unwrap();
        let arch = MlpArch::new(vec![2, w, w, 2], Activation::Relu).unwrap();
        let schedule = TrainSchedule { epochs: ep, batch_size: bs, optimizer: OptimizerSpec::adam(lr) };
        let (base, _c, _) = train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
        let acc = accuracy_on(&arch, &base, &ds, &ds.train_idx()).unwrap();
        println!("n={n} noise={noise} relu w={w} bs={bs} ep={ep} lr={lr} train_acc={acc:.4}");
    }
}
