//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured quantities (run with `--nocapture` to see them).

mod common;

use common::*;
use mcu_lab::curves::{curve_point, sample_curve, CurveSpec};
use mcu_lab::data::{make_moons, split_forget_retain};
use mcu_lab::eval::{barrier_profile, ks_two_sample, MetricRecord};
use mcu_lab::nn::{
    grad_param_vector, softmax_xent_node, Activation, Layout, LayoutEntry, MlpArch, MlpModel,
    ParamVector,
};
use mcu_lab::optim::OptimizerSpec;
use mcu_lab::rng::SplitMix64;
use mcu_lab::tensor::{Graph, Tensor};
use mcu_lab::unlearn::{
    accuracy_on, run_unlearn, train_supervised, Method, TrainSchedule, UnlearnConfig,
};
use std::sync::Arc;

fn flat_vec(vals: Vec<f32>) -> ParamVector {
    let layout = Arc::new(Layout::new(vec![LayoutEntry {
        name: "w".into(),
        shape: vec![vals.len()],
        offset: 0,
    }]));
    ParamVector::new(vals, layout).unwrap()
}

#[test]
fn criterion_01_gradient_oracle() {
    let start = std::time::Instant::now();
    let archs: Vec<(Vec<usize>, Activation)> = vec![
        (vec![2, 8, 2], Activation::Tanh),
        (vec![3, 6, 3], Activation::Tanh),
        (vec![2, 8, 8, 2], Activation::Tanh),
        (vec![4, 5, 4], Activation::Tanh),
        (vec![2, 12, 2], Activation::Tanh),
        (vec![2, 6, 2], Activation::Relu),
        (vec![3, 8, 3], Activation::Relu),
        (vec![2, 5, 5, 2], Activation::Relu),
        (vec![5, 4, 2], Activation::Relu),
        (vec![2, 10, 3], Activation::Relu),
    ];
    // minimum |preactivation| across hidden relu layers: central differences
    // are only a valid oracle when no unit sits within the step of its kink
    fn relu_kink_margin(arch: &MlpArch, params: &[f64], x: &[f64], rows: usize) -> f64 {
        let n_layers = arch.layer_dims.len() - 1;
        let mut h = x.to_vec();
        let mut h_cols = arch.layer_dims[0];
        let mut off = 0usize;
        let mut margin = f64::INFINITY;
        for l in 0..n_layers {
            let (fi, fo) = (arch.layer_dims[l], arch.layer_dims[l + 1]);
            let w = &params[off..off + fi * fo];
            off += fi * fo;
            let b = &params[off..off + fo];
            off += fo;
            let mut z = vec![0.0f64; rows * fo];
            for i in 0..rows {
                for j in 0..fo {
                    let mut acc = b[j];
                    for k in 0..fi {
                        acc += h[i * h_cols + k] * w[k * fo + j];
                    }
                    z[i * fo + j] = acc;
                }
            }
            if l + 1 < n_layers {
                for v in z.iter_mut() {
                    margin = margin.min(v.abs());
                    *v = v.max(0.0);
                }
            }
            h = z;
            h_cols = fo;
        }
        margin
    }

    let mut checked = 0usize;
    let mut fixture = 0usize;
    'outer: for round in 0..3u64 {
        for (ai, (dims, act)) in archs.iter().enumerate() {
            if fixture == 25 {
                break 'outer;
            }
            fixture += 1;
            let arch = MlpArch::new(dims.clone(), *act).unwrap();
            // deterministic seed search: skip relu draws whose preactivations
            // sit too close to a kink for the FD oracle to be meaningful
            let mut seed = 1000 + round * 100 + ai as u64;
            let (model, x, labels, rows) = loop {
                let model = MlpModel::init_seeded(arch.clone(), seed);
                let mut rng = SplitMix64::new(seed ^ 0xABCD);
                let rows = 4 + rng.below(5);
                let x: Vec<f32> = (0..rows * arch.in_dim())
                    .map(|_| rng.uniform(-1.5, 1.5) as f32)
                    .collect();
                let labels: Vec<usize> = (0..rows).map(|_| rng.below(arch.classes())).collect();
                if *act == Activation::Tanh || {
                    let p64: Vec<f64> = model.params.values.iter().map(|&v| v as f64).collect();
                    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                    relu_kink_margin(&arch, &p64, &x64, rows) > 0.05
                } {
                    break (model, x, labels, rows);
                }
                seed += 10_000;
            };
            let xt = Tensor::matrix(rows, arch.in_dim(), x.clone());

            let mut g = Graph::new();
            let xc = g.constant(xt);
            let bound = model.forward_nodes(&mut g, xc, true);
            let loss = softmax_xent_node(&mut g, bound.logits, &labels).unwrap();
            g.backward(loss).unwrap();
            let grad = grad_param_vector(&g, &bound, &model.params.layout);

            let p64: Vec<f64> = model.params.values.iter().map(|&v| v as f64).collect();
            let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            for coord in 0..p64.len() {
                let fd = fd_gradient_coord(&arch, &p64, &x64, rows, &labels, coord, 1e-3);
                let ad = grad.values[coord] as f64;
                assert!(
                    (ad - fd).abs() <= 1e-6f64.max(1e-4 * fd.abs()),
                    "fixture {fixture} ({dims:?} {act:?} seed {seed}) coord {coord}: ad={ad} fd={fd}"
                );
                checked += 1;
            }
        }
    }
    assert_eq!(fixture, 25);
    let dt = start.elapsed();
    assert!(dt.as_secs() < 30, "took {dt:?}");
    println!(
        "[PASS] criterion 1: gradient oracle — 25 fixtures, {checked} coordinates within 1e-4 rel / 1e-6 abs in {dt:?}"
    );
}

#[test]
fn criterion_02_curve_identities() {
    let start = std::time::Instant::now();
    let mut rng = SplitMix64::new(2024);
    let dim = 257;
    let a = flat_vec((0..dim).map(|_| rng.uniform(-2.0, 2.0) as f32).collect());
    let b = flat_vec((0..dim).map(|_| rng.uniform(-2.0, 2.0) as f32).collect());
    let m = flat_vec((0..dim).map(|_| rng.uniform(-2.0, 2.0) as f32).collect());

    // endpoint preservation, bit-exact, both kinds
    for spec in [
        CurveSpec::linear(a.clone(), b.clone()).unwrap(),
        CurveSpec::with_midpoint(a.clone(), b.clone(), m.clone()).unwrap(),
    ] {
        let p0 = curve_point(&spec, 0.0).unwrap();
        let p1 = curve_point(&spec, 1.0).unwrap();
        for i in 0..dim {
            assert_eq!(p0.values[i].to_bits(), a.values[i].to_bits());
            assert_eq!(p1.values[i].to_bits(), b.values[i].to_bits());
        }
    }

    // Bézier symmetry, bit-exact under endpoint swap at dyadic t
    let fwd = CurveSpec::with_midpoint(a.clone(), b.clone(), m.clone()).unwrap();
    let rev = CurveSpec::with_midpoint(b.clone(), a.clone(), m.clone()).unwrap();
    for k in 0..=256u32 {
        let t = k as f64 / 256.0;
        let p = curve_point(&fwd, t).unwrap();
        let q = curve_point(&rev, 1.0 - t).unwrap();
        for i in 0..dim {
            assert_eq!(p.values[i].to_bits(), q.values[i].to_bits(), "t={t} i={i}");
        }
    }

    // averaged-midpoint Bézier equals the linear path on the 16-point grid
    let lin = CurveSpec::linear(a.clone(), b.clone()).unwrap();
    let bez = CurveSpec::bezier(a, b).unwrap();
    for (lin_pt, bez_pt) in sample_curve(&lin, 16)
        .unwrap()
        .iter()
        .zip(sample_curve(&bez, 16).unwrap().iter())
    {
        for i in 0..dim {
            assert!(
                (lin_pt.1.values[i] - bez_pt.1.values[i]).abs() <= 1e-6,
                "t={} i={i}",
                lin_pt.0
            );
        }
    }

    let dt = start.elapsed();
    assert!(dt.as_secs() < 5, "took {dt:?}");
    println!("[PASS] criterion 2: curve identities — endpoints and symmetry bit-exact, linear coincidence <= 1e-6 in {dt:?}");
}

#[test]
fn criterion_03_barrier_oracle() {
    let start = std::time::Instant::now();
    let mut rng = SplitMix64::new(303);
    let rec = |t: f64, lr: f64, lf: f64| MetricRecord {
        t,
        loss_retain: lr,
        loss_forget: lf,
        acc_test: 0.0,
        acc_forget: 0.0,
        acc_retain: 0.0,
        zrf: 0.0,
        forget_quality: 0.0,
    };

    for profile_id in 0..50 {
        let n = 3 + rng.below(14);
        let e0r = rng.uniform(0.1, 3.0);
        let e1r = rng.uniform(0.1, 3.0);
        let e0f = rng.uniform(2.0, 6.0);
        let e1f = rng.uniform(2.0, 6.0);
        // piecewise-linear profiles built as interpolant + known offsets,
        // so the heights are closed-form by construction
        let mut records = Vec::with_capacity(n);
        let mut want_barrier = 0.0f64;
        let mut want_cliff = 0.0f64;
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let (dr, df) = if i == 0 || i == n - 1 {
                (0.0, 0.0)
            } else {
                (rng.uniform(-0.5, 2.0), rng.uniform(-0.5, 2.0))
            };
            want_barrier = want_barrier.max(dr);
            want_cliff = want_cliff.max(df);
            records.push(rec(
                t,
                (1.0 - t) * e0r + t * e1r + dr,
                (1.0 - t) * e0f + t * e1f - df,
            ));
        }
        let report = barrier_profile(&records, (&records[0], &records[n - 1]), 0.05).unwrap();
        assert!(
            (report.retain_barrier_height - want_barrier).abs() < 1e-9,
            "profile {profile_id}: barrier {} vs {want_barrier}",
            report.retain_barrier_height
        );
        assert!(
            (report.forget_cliff_depth - want_cliff).abs() < 1e-9,
            "profile {profile_id}: cliff {} vs {want_cliff}",
            report.forget_cliff_depth
        );
    }

    // endpoint-equality property: with only the two endpoints both heights
    // are exactly zero and the verdict holds at any tolerance
    for _ in 0..10 {
        let records = vec![
            rec(0.0, rng.uniform(0.1, 3.0), rng.uniform(2.0, 6.0)),
            rec(1.0, rng.uniform(0.1, 3.0), rng.uniform(2.0, 6.0)),
        ];
        let report = barrier_profile(&records, (&records[0], &records[1]), 0.0).unwrap();
        assert_eq!(report.retain_barrier_height, 0.0);
        assert_eq!(report.forget_cliff_depth, 0.0);
        assert!(report.mcu_holds);
    }

    let dt = start.elapsed();
    assert!(dt.as_secs() < 1, "took {dt:?}");
    println!("[PASS] criterion 3: barrier oracle — 50 closed-form profiles within 1e-9, endpoint equality exact in {dt:?}");
}

#[test]
fn criterion_04_ks_oracle() {
    let start = std::time::Instant::now();
    let mut rng = SplitMix64::new(404);
    for trial in 0..100 {
        let n = 10 + rng.below(191);
        let m = 10 + rng.below(191);
        let shift = rng.uniform(-0.6, 0.6);
        let quantize = rng.below(3) == 0; // introduce ties in a third of trials
        let draw = |rng: &mut SplitMix64, offset: f64| {
            let v = rng.uniform(0.0, 1.0) + offset;
            if quantize {
                (v * 20.0).round() / 20.0
            } else {
                v
            }
        };
        let a: Vec<f64> = (0..n).map(|_| draw(&mut rng, 0.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| draw(&mut rng, shift)).collect();

        let (d, p) = ks_two_sample(&a, &b).unwrap();
        let d_want = brute_force_ks_d(&a, &b);
        assert_eq!(d.to_bits(), d_want.to_bits(), "trial {trial}: D not exact");
        let p_want = series_ks_p(d, n, m);
        assert!(
            (p - p_want).abs() <= 1e-6,
            "trial {trial}: p {p} vs {p_want}"
        );
    }

    // trivial cases exact
    let (d, p) = ks_two_sample(&[1.0, 2.0, 3.0], &[2.0, 3.0, 1.0]).unwrap();
    assert_eq!((d, p), (0.0, 1.0));
    let (d, p) = ks_two_sample(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert_eq!(d, 1.0);
    assert!(p < 0.05);

    let dt = start.elapsed();
    assert!(dt.as_secs() < 5, "took {dt:?}");
    println!("[PASS] criterion 4: KS oracle — 100 seeded pairs, D exact, p within 1e-6 in {dt:?}");
}

/// The pinned two-moons fixture behind criteria 5: n=400, noise 0.2,
/// data seed 15, 2% forget split, 2-32-32-2 tanh net memorized with Adam.
fn unlearning_fixture() -> (MlpModel, mcu_lab::data::SplitDataset) {
    let ds = make_moons(400, 0.2, 15).unwrap();
    let ds = split_forget_retain(&ds, 0.02, 0.2, 15).unwrap();
    let arch = MlpArch::new(vec![2, 32, 32, 2], Activation::Tanh).unwrap();
    let schedule = TrainSchedule {
        epochs: 400,
        batch_size: 32,
        optimizer: OptimizerSpec::adam(0.01),
    };
    let (params, _curve, _) = train_supervised(&arch, &ds, &ds.train_idx(), &schedule, 7).unwrap();
    (MlpModel::new(arch, params).unwrap(), ds)
}

fn pinned_method_config(method: Method) -> UnlearnConfig {
    let mut cfg = UnlearnConfig::new(method, 11);
    match method {
        Method::Ga => {
            cfg.epochs = 150;
            cfg.optimizer = OptimizerSpec::adam(0.002);
            cfg.divergence_ceiling = 40.0;
        }
        Method::Gd => {
            cfg.epochs = 80;
            cfg.optimizer = OptimizerSpec::adam(0.005);
            cfg.divergence_ceiling = 60.0;
        }
        Method::Rl => {
            cfg.seed = 12;
            cfg.epochs = 300;
            cfg.batch_size = 8;
            cfg.optimizer = OptimizerSpec::adam(0.01);
        }
        Method::Salun => {
            cfg.epochs = 300;
            cfg.batch_size = 8;
            cfg.optimizer = OptimizerSpec::adam(0.01);
            cfg.salun_fraction = 0.5;
        }
        Method::Bt => {
            cfg.epochs = 100;
            cfg.optimizer = OptimizerSpec::adam(0.01);
            cfg.bt_weight = 5.0;
        }
        Method::Npo => {
            cfg.epochs = 150;
            cfg.optimizer = OptimizerSpec::adam(0.01);
            cfg.npo_beta = 0.1;
        }
    }
    cfg
}

#[test]
fn criterion_05_unlearning_sanity() {
    let start = std::time::Instant::now();
    let (model, ds) = unlearning_fixture();
    let arch = &model.arch;
    let orig_retain = accuracy_on(arch, &model.params, &ds, &ds.retain_idx).unwrap();

    for method in Method::ALL {
        let cfg = pinned_method_config(method);
        let res = run_unlearn(&model, &ds, &cfg).unwrap();
        let forget_acc = accuracy_on(arch, &res.params, &ds, &ds.forget_idx).unwrap();
        let retain_acc = accuracy_on(arch, &res.params, &ds, &ds.retain_idx).unwrap();
        assert!(
            forget_acc <= 0.5,
            "{}: forget accuracy {forget_acc}",
            method.name()
        );
        assert!(
            retain_acc >= 0.9 * orig_retain,
            "{}: retain accuracy {retain_acc} < 0.9 * {orig_retain}",
            method.name()
        );
        if method == Method::Ga {
            let touched_retain = res.access.overlap(&ds.retain_idx);
            assert!(
                touched_retain.is_empty(),
                "GA touched retain indices {touched_retain:?}"
            );
        }
        println!(
            "  {}: forget={forget_acc:.3} retain={retain_acc:.3}",
            method.name()
        );
    }

    let dt = start.elapsed();
    assert!(dt.as_secs() < 120, "took {dt:?}");
    println!("[PASS] criterion 5: unlearning sanity — six methods on the pinned two-moons fixture in {dt:?}");
}

/// Minimal-scale experiment configuration shared by criteria 8 and 9:
/// n=200, 5 unlearning epochs, 8 curve points.
fn minimal_config(out_dir: std::path::PathBuf) -> mcu_lab::ExperimentConfig {
    use mcu_lab::experiment::DatasetSpec;
    let mut cfg = mcu_lab::ExperimentConfig::default();
    cfg.dataset = DatasetSpec::Moons { n: 200, noise: 0.2 };
    cfg.data_seed = 1;
    cfg.forget_fraction = 0.05;
    cfg.test_fraction = 0.2;
    cfg.hidden = vec![8];
    cfg.base_epochs = 40;
    cfg.acc_floor = 0.85;
    cfg.setting = mcu_lab::Setting::Rand;
    cfg.method = Method::Gd;
    cfg.method2 = None;
    cfg.seeds = (11, 12);
    cfg.unlearn_epochs = 5;
    cfg.unlearn_batch_size = 16;
    cfg.fo_lr = 0.02;
    cfg.so_lr = 0.02;
    cfg.curve_steps = 60;
    cfg.n_points = 8;
    cfg.out_dir = out_dir;
    cfg
}

#[test]
fn criterion_08_grid_completeness() {
    use mcu_lab::Setting;
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rows_total = 0usize;

    for setting in Setting::ALL {
        let mut cfg = minimal_config(dir.path().to_path_buf());
        cfg.setting = setting;
        if setting.is_met_family() {
            cfg.method2 = Some(Method::Ga);
        }
        let manifest = mcu_lab::run_setting(&cfg)
            .unwrap_or_else(|e| panic!("{} failed: {e}", setting.name()));
        assert!(manifest.failed_stage.is_none(), "{}", setting.name());
        manifest.verify(&cfg.out_dir).unwrap();

        let run_dir = cfg.out_dir.join("runs").join(cfg.config_hash());
        let csv = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,kind,loss_retain,loss_forget,acc_test,acc_forget,acc_retain,zrf,forget_quality"
        );
        let data_rows = lines.count();
        assert_eq!(data_rows, 2 * 8, "{}: csv rows", setting.name());
        rows_total += data_rows;

        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap())
                .unwrap();
        let curves = report["curves"].as_array().unwrap();
        assert_eq!(curves.len(), 2, "{}: barrier reports", setting.name());
        for c in curves {
            assert!(c["barrier"]["retain_barrier_height"].is_number());
            assert!(c["barrier"]["forget_cliff_depth"].is_number());
            assert!(c["barrier"]["mcu_holds"].is_boolean());
        }

        for plot in &manifest.plots {
            let svg = std::fs::read_to_string(cfg.out_dir.join(plot)).unwrap();
            assert_well_formed_xml(&svg);
        }
        println!("  {}: complete manifest, {data_rows} csv rows, svg ok", setting.name());
    }

    let dt = start.elapsed();
    assert!(dt.as_secs() < 600, "took {dt:?}");
    println!("[PASS] criterion 8: grid completeness — 10 settings, {rows_total} metric rows in {dt:?}");
}

#[test]
fn criterion_09_determinism_and_persistence() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = minimal_config(dir.path().join("a"));

    let manifest = mcu_lab::run_setting(&cfg).unwrap();
    let run_dir = cfg.out_dir.join("runs").join(cfg.config_hash());
    let artifact_bytes = |root: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for rel in manifest.checkpoints.values() {
            out.push((rel.clone(), std::fs::read(root.join(rel)).unwrap()));
        }
        let rd = root.join("runs").join(cfg.config_hash());
        for name in ["metrics.csv", "report.json"] {
            out.push((name.to_string(), std::fs::read(rd.join(name)).unwrap()));
        }
        out.sort();
        out
    };
    let first = artifact_bytes(&cfg.out_dir);

    // resumed rerun into the same tree rewrites the reports byte-identically
    mcu_lab::run_setting(&cfg).unwrap();
    assert_eq!(first, artifact_bytes(&cfg.out_dir), "resumed rerun changed bytes");

    // fully fresh rerun reproduces every artifact byte-for-byte
    let mut cfg2 = cfg.clone();
    cfg2.out_dir = dir.path().join("b");
    mcu_lab::run_setting(&cfg2).unwrap();
    assert_eq!(first, artifact_bytes(&cfg2.out_dir), "fresh rerun changed bytes");

    // corrupting one payload byte is detected, never silent
    let ckpt = run_dir.join("endpoint1.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n - 9] ^= 0x20;
    std::fs::write(&ckpt, &bytes).unwrap();
    assert!(matches!(
        mcu_lab::experiment::load_checkpoint(&ckpt),
        Err(mcu_lab::Error::HashMismatch { .. })
    ));
    assert!(manifest.verify(&cfg.out_dir).is_err());

    let dt = start.elapsed();
    assert!(dt.as_secs() < 60, "took {dt:?}");
    println!("[PASS] criterion 9: determinism & persistence — byte-identical reruns, corruption detected in {dt:?}");
}

#[test]
fn criterion_10_protocol_constants() {
    // committed default fixture pins the sampling grid and the threshold
    let fixture = include_str!("../fixtures/default.cfg");
    let cfg = mcu_lab::ExperimentConfig::parse_str(fixture).unwrap();
    assert_eq!(cfg.n_points, 16);
    assert_eq!(cfg.forget_quality_threshold, 0.05);
    assert!(fixture.contains("n_points = 16"));
    assert!(fixture.contains("threshold = 0.05"));

    // the fixture matches the compiled defaults exactly
    assert_eq!(fixture, mcu_lab::ExperimentConfig::default().canonical_text());
    assert_eq!(mcu_lab::ExperimentConfig::default().n_points, 16);
    assert_eq!(mcu_lab::eval::FORGET_QUALITY_THRESHOLD, 0.05);

    // reports echo both constants
    let dir = tempfile::tempdir().unwrap();
    let mut mini = minimal_config(dir.path().to_path_buf());
    mini.n_points = 16;
    mcu_lab::run_setting(&mini).unwrap();
    let run_dir = mini.out_dir.join("runs").join(mini.config_hash());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["n_points"], 16);
    assert_eq!(report["forget_quality_threshold"], 0.05);

    println!("[PASS] criterion 10: protocol constants — n_points=16 and threshold 0.05 pinned in fixtures and reports");
}
