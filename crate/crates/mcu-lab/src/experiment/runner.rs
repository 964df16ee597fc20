//! End-to-end orchestration of one experimental setting: data, base model,
//! teachers, endpoints, curves, grid evaluation, reports, plots.
//!
//! Every stage persists to a content-addressed path and is skipped when its
//! artifact already exists, so interrupted runs resume and repeated runs
//! reproduce byte-identical reports. Stages shared across settings (base
//! model, retrain oracle, dumb model) live under `shared/`, keyed by the
//! hash of exactly the config sections they depend on.

use super::checkpoint::{checkpoint_payload_hash, load_checkpoint, save_checkpoint};
use super::config::{fnv1a64, DatasetSpec, ExperimentConfig, ZrfReference};
use super::report;
use crate::curves::{sample_curve, train_midpoint, CurveKind, CurveSpec, CurveTrainConfig};
use crate::data::{load_idx, make_blobs, make_moons, split_forget_retain, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_point, mc_barrier_standard, barrier_profile, BarrierReport, MetricRecord};
use crate::nn::{MlpArch, MlpModel, ParamVector};
use crate::unlearn::{retrain_oracle, run_unlearn, train_supervised, UnlearnResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const ARTIFACT_VERSION: &str = concat!("mcu-lab ", env!("CARGO_PKG_VERSION"));

/// Worker count for parallel curve evaluation.
pub const WORKERS_ENV: &str = "MCU_WORKERS";

fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config_hash: String,
    pub setting: String,
    pub stages_completed: Vec<String>,
    pub failed_stage: Option<String>,
    /// Checkpoint name -> path (relative to the output dir).
    pub checkpoints: BTreeMap<String, String>,
    /// Checkpoint name -> stored payload hash, hex.
    pub checkpoint_hashes: BTreeMap<String, String>,
    pub metrics_csv: Option<String>,
    pub report_json: Option<String>,
    pub plots: Vec<String>,
    pub wall_clock_secs: f64,
    pub n_points: usize,
    pub tau: f64,
    pub forget_quality_threshold: f64,
}

impl RunManifest {
    fn new(cfg: &ExperimentConfig) -> Self {
        RunManifest {
            artifact_version: ARTIFACT_VERSION.to_string(),
            config_hash: cfg.config_hash(),
            setting: cfg.setting.name().to_string(),
            stages_completed: Vec::new(),
            failed_stage: None,
            checkpoints: BTreeMap::new(),
            checkpoint_hashes: BTreeMap::new(),
            metrics_csv: None,
            report_json: None,
            plots: Vec::new(),
            wall_clock_secs: 0.0,
            n_points: cfg.n_points,
            tau: cfg.tau,
            forget_quality_threshold: cfg.forget_quality_threshold,
        }
    }

    fn register_checkpoint(&mut self, out_dir: &Path, name: &str, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(out_dir)
            .unwrap_or(path)
            .display()
            .to_string();
        let hash = checkpoint_payload_hash(path)?;
        self.checkpoints.insert(name.to_string(), rel);
        self.checkpoint_hashes
            .insert(name.to_string(), format!("{hash:016x}"));
        Ok(())
    }

    /// Check that every referenced checkpoint exists and its stored hash
    /// still matches the manifest.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for (name, rel) in &self.checkpoints {
            let path = out_dir.join(rel);
            if !path.exists() {
                return Err(Error::Contract(format!(
                    "manifest references missing checkpoint {name} at {rel}"
                )));
            }
            let hash = format!("{:016x}", checkpoint_payload_hash(&path)?);
            if Some(&hash) != self.checkpoint_hashes.get(name) {
                return Err(Error::Contract(format!(
                    "checkpoint {name} hash changed since the manifest was written"
                )));
            }
            load_checkpoint(&path)?;
        }
        Ok(())
    }
}

/// Construct and split the configured dataset.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<SplitDataset> {
    let raw = match &cfg.dataset {
        DatasetSpec::Moons { n, noise } => make_moons(*n, *noise, cfg.data_seed)?,
        DatasetSpec::Blobs { n, classes, spread } => {
            make_blobs(*n, *classes, *spread, cfg.data_seed)?
        }
        DatasetSpec::Idx { images, labels, limit } => load_idx(images, labels, *limit)?,
    };
    split_forget_retain(&raw, cfg.forget_fraction, cfg.test_fraction, cfg.data_seed)
}

/// Train the original model on the full training split to the configured
/// accuracy floor; fails with the learning curve attached otherwise.
pub fn train_base(
    arch: &MlpArch,
    ds: &SplitDataset,
    schedule: &crate::unlearn::TrainSchedule,
    seed: u64,
    acc_floor: f64,
) -> Result<(ParamVector, Vec<f64>)> {
    let train_idx = ds.train_idx();
    let (params, curve, _) = train_supervised(arch, ds, &train_idx, schedule, seed)?;
    if schedule.epochs > 0 {
        let acc = crate::unlearn::accuracy_on(arch, &params, ds, &train_idx)?;
        if acc < acc_floor {
            return Err(Error::Numeric(format!(
                "base training reached accuracy {acc:.4} < floor {acc_floor}; \
                 per-epoch losses: {curve:?}"
            )));
        }
    }
    Ok((params, curve))
}

fn sections_hash(cfg: &ExperimentConfig, keep: &[&str], extra: &str) -> String {
    let text = cfg.canonical_text();
    let mut out = String::new();
    let mut current = "";
    for line in text.lines() {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = match keep.contains(&name) {
                true => "keep",
                false => "",
            };
            if current == "keep" {
                out.push_str(line);
                out.push('\n');
            }
            let _ = name;
            continue;
        }
        if current == "keep" {
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(extra);
    format!("{:016x}", fnv1a64(out.as_bytes()))
}

fn load_or_create(
    path: &Path,
    create: impl FnOnce() -> Result<ParamVector>,
) -> Result<ParamVector> {
    if path.exists() {
        return load_checkpoint(path);
    }
    let params = create()?;
    save_checkpoint(&params, path)?;
    Ok(params)
}

/// Everything one evaluated curve contributes to the report.
#[derive(Debug, Clone)]
pub struct CurveEvaluation {
    pub kind: CurveKind,
    pub replicate: usize,
    pub records: Vec<MetricRecord>,
    pub barrier: BarrierReport,
    pub mc_standard_barrier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointSummary {
    pub index: usize,
    pub replicate: usize,
    pub method: String,
    pub seed: u64,
    pub curriculum: Option<String>,
    pub optimizer: String,
    pub diverged_at: Option<usize>,
    pub training_log: Vec<(f64, f64)>,
}

impl EndpointSummary {
    fn from_result(
        index: usize,
        replicate: usize,
        cfg_opt: &str,
        cur: Option<String>,
        r: &UnlearnResult,
    ) -> Self {
        EndpointSummary {
            index,
            replicate,
            method: r.method.name().to_string(),
            seed: r.seed,
            curriculum: cur,
            optimizer: cfg_opt.to_string(),
            diverged_at: r.diverged_at,
            training_log: r.training_log.clone(),
        }
    }
}

fn load_endpoint_summary(path: &Path) -> Result<EndpointSummary> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("endpoint summary parse: {e}")))
}

fn save_endpoint_summary(path: &Path, summary: &EndpointSummary) -> Result<()> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Format(format!("endpoint summary serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Evaluate every grid point of a curve, in parallel, order restored by t.
pub fn evaluate_curve(
    arch: &MlpArch,
    spec: &CurveSpec,
    ds: &SplitDataset,
    zrf_reference: &ParamVector,
    retrained: &ParamVector,
    cfg: &ExperimentConfig,
) -> Result<Vec<MetricRecord>> {
    let points = sample_curve(spec, cfg.n_points)?;
    let workers = worker_count().min(points.len()).max(1);
    let mut slots: Vec<Option<Result<MetricRecord>>> = (0..points.len()).map(|_| None).collect();

    if workers == 1 {
        for (slot, (t, params)) in slots.iter_mut().zip(&points) {
            *slot = Some(evaluate_point(
                arch,
                params,
                ds,
                zrf_reference,
                retrained,
                *t,
                cfg.forget_statistic,
            ));
        }
    } else {
        let chunks: Vec<Vec<usize>> = (0..workers)
            .map(|w| (w..points.len()).step_by(workers).collect())
            .collect();
        let results: Vec<Vec<(usize, Result<MetricRecord>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    let points = &points;
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|&i| {
                                let (t, params) = &points[i];
                                (
                                    i,
                                    evaluate_point(
                                        arch,
                                        params,
                                        ds,
                                        zrf_reference,
                                        retrained,
                                        *t,
                                        cfg.forget_statistic,
                                    ),
                                )
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for chunk in results {
            for (i, r) in chunk {
                slots[i] = Some(r);
            }
        }
    }

    slots
        .into_iter()
        .map(|s| s.expect("every grid point evaluated"))
        .collect()
}

fn stage<T>(
    manifest: &mut RunManifest,
    name: &str,
    f: impl FnOnce(&mut RunManifest) -> Result<T>,
) -> Result<T> {
    match f(manifest) {
        Ok(v) => {
            manifest.stages_completed.push(name.to_string());
            Ok(v)
        }
        Err(e) => {
            manifest.failed_stage = Some(name.to_string());
            Err(e)
        }
    }
}

pub struct RunPaths {
    pub run_dir: PathBuf,
    pub shared_dir: PathBuf,
}

pub fn run_paths(cfg: &ExperimentConfig) -> RunPaths {
    RunPaths {
        run_dir: cfg.out_dir.join("runs").join(cfg.config_hash()),
        shared_dir: cfg.out_dir.join("shared"),
    }
}

/// How far into the pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunUntil {
    Base,
    Endpoints,
    Curves,
    Full,
}

/// Execute the full setting pipeline. On stage failure the partial manifest
/// (with the failed stage named) is still written before the error returns.
pub fn run_setting(cfg: &ExperimentConfig) -> Result<RunManifest> {
    run_setting_until(cfg, RunUntil::Full)
}

/// Execute the pipeline up to and including the given stage group.
pub fn run_setting_until(cfg: &ExperimentConfig, until: RunUntil) -> Result<RunManifest> {
    cfg.validate()?;
    let started = Instant::now();
    let paths = run_paths(cfg);
    std::fs::create_dir_all(paths.run_dir.join("plots"))
        .map_err(|e| Error::io(paths.run_dir.display().to_string(), e))?;
    std::fs::create_dir_all(&paths.shared_dir)
        .map_err(|e| Error::io(paths.shared_dir.display().to_string(), e))?;

    let mut manifest = RunManifest::new(cfg);
    let outcome = run_stages(cfg, &paths, &mut manifest, until);
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();

    let manifest_path = paths.run_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, json)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;

    outcome.map(|_| manifest)
}

fn run_stages(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    manifest: &mut RunManifest,
    until: RunUntil,
) -> Result<()> {
    let ds = stage(manifest, "dataset", |_| build_dataset(cfg))?;
    let arch = MlpArch::new(
        cfg.arch_dims(ds.features.cols(), ds.n_classes),
        cfg.activation,
    )?;

    let base_key = sections_hash(cfg, &["dataset", "model", "train"], "");
    let base_path = paths.shared_dir.join(format!("base-{base_key}.ckpt"));
    let base_params = stage(manifest, "base", |m| {
        let p = load_or_create(&base_path, || {
            Ok(train_base(&arch, &ds, &cfg.base_schedule(), cfg.base_seed, cfg.acc_floor)?.0)
        })?;
        m.register_checkpoint(&cfg.out_dir, "base", &base_path)?;
        Ok(p)
    })?;
    let base_model = MlpModel::new(arch.clone(), base_params.clone())?;

    let dumb_key = sections_hash(cfg, &["dataset", "model"], &format!("dumb={}", cfg.dumb_seed));
    let dumb_path = paths.shared_dir.join(format!("dumb-{dumb_key}.ckpt"));
    let dumb_params = stage(manifest, "dumb", |m| {
        let p = load_or_create(&dumb_path, || Ok(arch.init(cfg.dumb_seed)))?;
        m.register_checkpoint(&cfg.out_dir, "dumb", &dumb_path)?;
        Ok(p)
    })?;

    let retrain_key = sections_hash(
        cfg,
        &["dataset", "model", "train"],
        &format!("retrain={}", cfg.retrain_seed),
    );
    let retrain_path = paths.shared_dir.join(format!("retrain-{retrain_key}.ckpt"));
    let retrained = stage(manifest, "retrain", |m| {
        let p = load_or_create(&retrain_path, || {
            Ok(retrain_oracle(&arch, &ds, &cfg.base_schedule(), cfg.retrain_seed)?.0)
        })?;
        m.register_checkpoint(&cfg.out_dir, "retrain", &retrain_path)?;
        Ok(p)
    })?;

    let zrf_reference = match cfg.zrf_reference {
        ZrfReference::Dumb => dumb_params.clone(),
        ZrfReference::Original => base_params.clone(),
    };
    if until == RunUntil::Base {
        return Ok(());
    }

    let mut evaluations: Vec<CurveEvaluation> = Vec::new();
    let mut endpoint_summaries: Vec<EndpointSummary> = Vec::new();

    for replicate in 0..cfg.replicates {
        let suffix = if replicate == 0 {
            String::new()
        } else {
            format!("-r{replicate}")
        };

        // endpoints
        let mut endpoint_params: Vec<ParamVector> = Vec::with_capacity(2);
        for e in 0..2 {
            let name = format!("endpoint{}{suffix}", e + 1);
            let path = paths.run_dir.join(format!("{name}.ckpt"));
            let summary_path = paths.run_dir.join(format!("{name}.json"));
            let mut ucfg = cfg.endpoint_unlearn_cfg(e);
            ucfg.seed = ucfg.seed.wrapping_add(replicate as u64);
            let stage_name = format!("unlearn-{name}");
            let params = stage(manifest, &stage_name, |m| {
                let p = if path.exists() && summary_path.exists() {
                    endpoint_summaries.push(load_endpoint_summary(&summary_path)?);
                    load_checkpoint(&path)?
                } else {
                    let r = run_unlearn(&base_model, &ds, &ucfg)?;
                    save_checkpoint(&r.params, &path)?;
                    let summary = EndpointSummary::from_result(
                        e,
                        replicate,
                        ucfg.optimizer.kind.name(),
                        ucfg.curriculum.map(|c| c.name().to_string()),
                        &r,
                    );
                    save_endpoint_summary(&summary_path, &summary)?;
                    endpoint_summaries.push(summary);
                    r.params
                };
                m.register_checkpoint(&cfg.out_dir, &name, &path)?;
                Ok(p)
            })?;
            endpoint_params.push(params);
        }
        if until == RunUntil::Endpoints {
            continue;
        }

        // curves + evaluation
        for &kind in &cfg.curve_kinds {
            let spec = match kind {
                CurveKind::Linear => {
                    CurveSpec::linear(endpoint_params[0].clone(), endpoint_params[1].clone())?
                }
                CurveKind::Bezier => {
                    let name = format!("curve_bezier{suffix}");
                    let path = paths.run_dir.join(format!("{name}.ckpt"));
                    let mut ucfg = cfg.endpoint_unlearn_cfg(0); // midpoint trains with the row method
                    ucfg.seed = ucfg.seed.wrapping_add(replicate as u64);
                    let train_cfg = CurveTrainConfig {
                        steps: cfg.curve_steps,
                        seed: cfg.curve_seed.wrapping_add(replicate as u64),
                        arclength_reweight: cfg.arclength_reweight,
                        grid_points: cfg.n_points,
                    };
                    let spec = CurveSpec::bezier(
                        endpoint_params[0].clone(),
                        endpoint_params[1].clone(),
                    )?;
                    let midpoint = stage(manifest, &format!("curve-{name}"), |m| {
                        let p = load_or_create(&path, || {
                            let (trained, _report) =
                                train_midpoint(&spec, &base_model, &ds, &ucfg, &train_cfg)?;
                            Ok(trained.theta12.expect("trained bezier midpoint"))
                        })?;
                        m.register_checkpoint(&cfg.out_dir, &name, &path)?;
                        Ok(p)
                    })?;
                    let mut spec = CurveSpec::with_midpoint(
                        endpoint_params[0].clone(),
                        endpoint_params[1].clone(),
                        midpoint,
                    )?;
                    spec.trained = true;
                    spec
                }
            };

            if until == RunUntil::Curves {
                continue;
            }
            let eval_name = format!("eval-{}{suffix}", kind.name());
            let records = stage(manifest, &eval_name, |_| {
                evaluate_curve(&arch, &spec, &ds, &zrf_reference, &retrained, cfg)
            })?;
            let barrier = barrier_profile(
                &records,
                (&records[0], &records[records.len() - 1]),
                cfg.tau,
            )?;
            let mc_standard =
                mc_barrier_standard(&records, (&records[0], &records[records.len() - 1]))?;
            evaluations.push(CurveEvaluation {
                kind,
                replicate,
                records,
                barrier,
                mc_standard_barrier: mc_standard,
            });
        }
    }

    if until != RunUntil::Full {
        return Ok(());
    }

    // reports
    stage(manifest, "report", |m| {
        let csv_path = paths.run_dir.join("metrics.csv");
        report::write_metrics_csv(&csv_path, cfg, &evaluations)?;
        m.metrics_csv = Some(rel(&cfg.out_dir, &csv_path));

        let json_path = paths.run_dir.join("report.json");
        report::write_report_json(
            &json_path,
            cfg,
            &evaluations,
            &endpoint_summaries,
            &m.checkpoint_hashes,
        )?;
        m.report_json = Some(rel(&cfg.out_dir, &json_path));
        Ok(())
    })?;

    stage(manifest, "plots", |m| {
        for metric in ["loss_retain", "loss_forget"] {
            let path = paths.run_dir.join("plots").join(format!("{metric}.svg"));
            super::plot::emit_plot(&evaluations, metric, cfg.tau, &path)?;
            m.plots.push(rel(&cfg.out_dir, &path));
        }
        Ok(())
    })?;

    Ok(())
}

fn rel(out_dir: &Path, path: &Path) -> String {
    path.strip_prefix(out_dir)
        .unwrap_or(path)
        .display()
        .to_string()
}

/// Re-derive every curve evaluation of a completed run purely from the
/// persisted checkpoints.
pub fn reevaluate(
    cfg: &ExperimentConfig,
) -> Result<(Vec<CurveEvaluation>, Vec<EndpointSummary>, RunManifest)> {
    cfg.validate()?;
    let paths = run_paths(cfg);
    let ds = build_dataset(cfg)?;
    let arch = MlpArch::new(
        cfg.arch_dims(ds.features.cols(), ds.n_classes),
        cfg.activation,
    )?;

    let manifest_path = paths.run_dir.join("manifest.json");
    let manifest: RunManifest = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?,
    )
    .map_err(|e| Error::Format(format!("manifest parse: {e}")))?;

    let ckpt = |name: &str| -> Result<ParamVector> {
        let rel = manifest.checkpoints.get(name).ok_or_else(|| {
            Error::Contract(format!("manifest has no checkpoint named {name}"))
        })?;
        load_checkpoint(&cfg.out_dir.join(rel))
    };

    let base = ckpt("base")?;
    let dumb = ckpt("dumb")?;
    let retrained = ckpt("retrain")?;
    let zrf_reference = match cfg.zrf_reference {
        ZrfReference::Dumb => dumb,
        ZrfReference::Original => base,
    };

    let mut evaluations = Vec::new();
    let mut endpoint_summaries = Vec::new();
    for replicate in 0..cfg.replicates {
        let suffix = if replicate == 0 {
            String::new()
        } else {
            format!("-r{replicate}")
        };
        for e in 1..=2 {
            let p = paths.run_dir.join(format!("endpoint{e}{suffix}.json"));
            if p.exists() {
                endpoint_summaries.push(load_endpoint_summary(&p)?);
            }
        }
        let e1 = ckpt(&format!("endpoint1{suffix}"))?;
        let e2 = ckpt(&format!("endpoint2{suffix}"))?;
        for &kind in &cfg.curve_kinds {
            let spec = match kind {
                CurveKind::Linear => CurveSpec::linear(e1.clone(), e2.clone())?,
                CurveKind::Bezier => {
                    let mid = ckpt(&format!("curve_bezier{suffix}"))?;
                    let mut s = CurveSpec::with_midpoint(e1.clone(), e2.clone(), mid)?;
                    s.trained = true;
                    s
                }
            };
            let records = evaluate_curve(&arch, &spec, &ds, &zrf_reference, &retrained, cfg)?;
            let barrier =
                barrier_profile(&records, (&records[0], &records[records.len() - 1]), cfg.tau)?;
            let mc_standard =
                mc_barrier_standard(&records, (&records[0], &records[records.len() - 1]))?;
            evaluations.push(CurveEvaluation {
                kind,
                replicate,
                records,
                barrier,
                mc_standard_barrier: mc_standard,
            });
        }
    }
    Ok((evaluations, endpoint_summaries, manifest))
}

/// Regenerate the CSV/JSON reports for a completed run purely from the
/// persisted checkpoints (the re-evaluation harness).
pub fn emit_report(cfg: &ExperimentConfig) -> Result<(PathBuf, PathBuf)> {
    let (evaluations, endpoint_summaries, manifest) = reevaluate(cfg)?;
    let paths = run_paths(cfg);
    let csv_path = paths.run_dir.join("metrics.csv");
    report::write_metrics_csv(&csv_path, cfg, &evaluations)?;
    let json_path = paths.run_dir.join("report.json");
    report::write_report_json(
        &json_path,
        cfg,
        &evaluations,
        &endpoint_summaries,
        &manifest.checkpoint_hashes,
    )?;
    Ok((csv_path, json_path))
}
