//! Experiment configuration: a flat `key = value` text format with one
//! section per stage, a canonical serialization, and an FNV-1a content hash
//! that keys all persisted artifacts.

use crate::curves::CurveKind;
use crate::error::{Error, Result};
use crate::eval::ForgetStatistic;
use crate::nn::Activation;
use crate::optim::{CurriculumDirection, OptKind, OptimizerSpec};
use crate::unlearn::{Method, TrainSchedule, UnlearnConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// The experimental settings grid: the first five vary randomness with one
/// method, the last five connect two different methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Rand,
    RandCl,
    RandSo,
    ClNonCl,
    FoSo,
    Met,
    MetCl,
    MetSo,
    MetClNonCl,
    MetFoSo,
}

impl Setting {
    pub const ALL: [Setting; 10] = [
        Setting::Rand,
        Setting::RandCl,
        Setting::RandSo,
        Setting::ClNonCl,
        Setting::FoSo,
        Setting::Met,
        Setting::MetCl,
        Setting::MetSo,
        Setting::MetClNonCl,
        Setting::MetFoSo,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rand" => Ok(Setting::Rand),
            "rand_cl" => Ok(Setting::RandCl),
            "rand_so" => Ok(Setting::RandSo),
            "cl_non_cl" => Ok(Setting::ClNonCl),
            "fo_so" => Ok(Setting::FoSo),
            "met" => Ok(Setting::Met),
            "met_cl" => Ok(Setting::MetCl),
            "met_so" => Ok(Setting::MetSo),
            "met_cl_non_cl" => Ok(Setting::MetClNonCl),
            "met_fo_so" => Ok(Setting::MetFoSo),
            other => Err(Error::Config(format!("unknown setting {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Setting::Rand => "rand",
            Setting::RandCl => "rand_cl",
            Setting::RandSo => "rand_so",
            Setting::ClNonCl => "cl_non_cl",
            Setting::FoSo => "fo_so",
            Setting::Met => "met",
            Setting::MetCl => "met_cl",
            Setting::MetSo => "met_so",
            Setting::MetClNonCl => "met_cl_non_cl",
            Setting::MetFoSo => "met_fo_so",
        }
    }

    pub fn is_met_family(&self) -> bool {
        matches!(
            self,
            Setting::Met | Setting::MetCl | Setting::MetSo | Setting::MetClNonCl | Setting::MetFoSo
        )
    }

    /// Per-endpoint `(curriculum, second_order)` modifier flags.
    pub fn endpoint_modifiers(&self) -> [(bool, bool); 2] {
        match self {
            Setting::Rand | Setting::Met => [(false, false), (false, false)],
            Setting::RandCl | Setting::MetCl => [(true, false), (true, false)],
            Setting::RandSo | Setting::MetSo => [(false, true), (false, true)],
            Setting::ClNonCl | Setting::MetClNonCl => [(true, false), (false, false)],
            Setting::FoSo | Setting::MetFoSo => [(false, false), (false, true)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Moons { n: usize, noise: f64 },
    Blobs { n: usize, classes: usize, spread: f64 },
    Idx { images: PathBuf, labels: PathBuf, limit: usize },
}

/// Which model ZRF compares predictions against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZrfReference {
    Dumb,
    Original,
}

impl ZrfReference {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dumb" => Ok(ZrfReference::Dumb),
            "original" => Ok(ZrfReference::Original),
            other => Err(Error::Config(format!("unknown zrf reference {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ZrfReference::Dumb => "dumb",
            ZrfReference::Original => "original",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    // dataset
    pub dataset: DatasetSpec,
    pub data_seed: u64,
    pub forget_fraction: f64,
    pub test_fraction: f64,
    // model
    pub hidden: Vec<usize>,
    pub activation: Activation,
    // base training
    pub base_epochs: usize,
    pub base_batch_size: usize,
    pub base_optimizer: OptKind,
    pub base_lr: f64,
    pub base_seed: u64,
    pub acc_floor: f64,
    // unlearning
    pub setting: Setting,
    pub method: Method,
    pub method2: Option<Method>,
    pub seeds: (u64, u64),
    pub unlearn_epochs: usize,
    pub unlearn_batch_size: usize,
    pub fo_optimizer: OptKind,
    pub fo_lr: f64,
    pub so_lr: f64,
    pub curriculum_direction: CurriculumDirection,
    pub salun_fraction: f64,
    pub bt_weight: f64,
    pub npo_beta: f64,
    pub npo_retain_term: bool,
    pub rl_retain_fraction: f64,
    pub divergence_ceiling: f64,
    // curves
    pub curve_kinds: Vec<CurveKind>,
    pub curve_steps: usize,
    pub curve_seed: u64,
    pub arclength_reweight: bool,
    pub n_points: usize,
    // evaluation
    pub tau: f64,
    pub forget_statistic: ForgetStatistic,
    pub zrf_reference: ZrfReference,
    pub forget_quality_threshold: f64,
    pub retrain_seed: u64,
    pub dumb_seed: u64,
    pub replicates: usize,
    // output
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Moons { n: 400, noise: 0.15 },
            data_seed: 1,
            forget_fraction: 0.02,
            test_fraction: 0.2,
            hidden: vec![16, 16],
            activation: Activation::Tanh,
            base_epochs: 120,
            base_batch_size: 32,
            base_optimizer: OptKind::Adam,
            base_lr: 0.01,
            base_seed: 7,
            acc_floor: 0.95,
            setting: Setting::Rand,
            method: Method::Gd,
            method2: None,
            seeds: (11, 12),
            unlearn_epochs: 20,
            unlearn_batch_size: 32,
            fo_optimizer: OptKind::Sgd,
            fo_lr: 0.05,
            so_lr: 0.02,
            curriculum_direction: CurriculumDirection::Ascending,
            salun_fraction: 0.5,
            bt_weight: 3.0,
            npo_beta: 0.1,
            npo_retain_term: true,
            rl_retain_fraction: 1.0,
            divergence_ceiling: 50.0,
            curve_kinds: vec![CurveKind::Linear, CurveKind::Bezier],
            curve_steps: 500,
            curve_seed: 1234,
            arclength_reweight: false,
            n_points: 16,
            tau: 0.05,
            forget_statistic: ForgetStatistic::Xent,
            zrf_reference: ZrfReference::Dumb,
            forget_quality_threshold: 0.05,
            retrain_seed: 97,
            dumb_seed: 101,
            replicates: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.setting.is_met_family() {
            match self.method2 {
                None => {
                    return Err(Error::Config(format!(
                        "setting {} needs two methods (set method2)",
                        self.setting.name()
                    )))
                }
                Some(m2) if m2 == self.method => {
                    return Err(Error::Config(
                        "met-family settings need two distinct methods".into(),
                    ))
                }
                Some(_) => {}
            }
        } else {
            if self.method2.is_some() {
                return Err(Error::Config(format!(
                    "setting {} takes a single method",
                    self.setting.name()
                )));
            }
            if self.seeds.0 == self.seeds.1 {
                return Err(Error::Config(
                    "rand-family settings need two distinct seeds".into(),
                ));
            }
        }
        if self.n_points < 2 {
            return Err(Error::Config("n_points must be >= 2".into()));
        }
        if self.curve_kinds.is_empty() {
            return Err(Error::Config("at least one curve kind required".into()));
        }
        if self.tau < 0.0 {
            return Err(Error::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if !(self.acc_floor >= 0.0 && self.acc_floor <= 1.0) {
            return Err(Error::Config("acc_floor must be in [0,1]".into()));
        }
        self.endpoint_unlearn_cfg(0).validate()?;
        self.endpoint_unlearn_cfg(1).validate()?;
        Ok(())
    }

    pub fn arch_dims(&self, in_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }

    pub fn base_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.base_epochs,
            batch_size: self.base_batch_size,
            optimizer: self.optimizer_spec(self.base_optimizer, self.base_lr),
        }
    }

    fn optimizer_spec(&self, kind: OptKind, lr: f64) -> OptimizerSpec {
        let mut spec = match kind {
            OptKind::Sgd => OptimizerSpec::sgd(lr),
            OptKind::Adam => OptimizerSpec::adam(lr),
            OptKind::SoDiag => OptimizerSpec::so_diag(lr),
        };
        spec.lr = lr;
        spec
    }

    /// The unlearning configuration for endpoint 0 or 1 under this setting's
    /// modifier matrix.
    pub fn endpoint_unlearn_cfg(&self, endpoint: usize) -> UnlearnConfig {
        assert!(endpoint < 2);
        let (cl, so) = self.setting.endpoint_modifiers()[endpoint];
        let method = if self.setting.is_met_family() && endpoint == 1 {
            self.method2.unwrap_or(self.method)
        } else {
            self.method
        };
        let seed = if endpoint == 0 { self.seeds.0 } else { self.seeds.1 };
        let optimizer = if so {
            self.optimizer_spec(OptKind::SoDiag, self.so_lr)
        } else {
            self.optimizer_spec(self.fo_optimizer, self.fo_lr)
        };
        UnlearnConfig {
            method,
            epochs: self.unlearn_epochs,
            batch_size: self.unlearn_batch_size,
            optimizer,
            curriculum: cl.then_some(self.curriculum_direction),
            seed,
            salun_fraction: self.salun_fraction,
            bt_weight: self.bt_weight,
            bt_maximize_forget_kl: false,
            npo_beta: self.npo_beta,
            npo_retain_term: self.npo_retain_term,
            rl_retain_fraction: self.rl_retain_fraction,
            divergence_ceiling: self.divergence_ceiling,
        }
    }

    /// Canonical text: fixed key order, so equal configs hash equally.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[dataset]");
        match &self.dataset {
            DatasetSpec::Moons { n, noise } => {
                let _ = writeln!(s, "kind = moons\nn = {n}\nnoise = {noise}");
            }
            DatasetSpec::Blobs { n, classes, spread } => {
                let _ = writeln!(s, "kind = blobs\nn = {n}\nclasses = {classes}\nspread = {spread}");
            }
            DatasetSpec::Idx { images, labels, limit } => {
                let _ = writeln!(
                    s,
                    "kind = idx\nimages = {}\nlabels = {}\nlimit = {limit}",
                    images.display(),
                    labels.display()
                );
            }
        }
        let _ = writeln!(s, "seed = {}", self.data_seed);
        let _ = writeln!(s, "forget_fraction = {}", self.forget_fraction);
        let _ = writeln!(s, "test_fraction = {}", self.test_fraction);

        let _ = writeln!(s, "\n[model]");
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "activation = {}", self.activation.name());

        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", self.base_epochs);
        let _ = writeln!(s, "batch_size = {}", self.base_batch_size);
        let _ = writeln!(s, "optimizer = {}", self.base_optimizer.name());
        let _ = writeln!(s, "lr = {}", self.base_lr);
        let _ = writeln!(s, "seed = {}", self.base_seed);
        let _ = writeln!(s, "acc_floor = {}", self.acc_floor);

        let _ = writeln!(s, "\n[unlearn]");
        let _ = writeln!(s, "setting = {}", self.setting.name());
        let _ = writeln!(s, "method = {}", self.method.name());
        if let Some(m2) = self.method2 {
            let _ = writeln!(s, "method2 = {}", m2.name());
        }
        let _ = writeln!(s, "seeds = {},{}", self.seeds.0, self.seeds.1);
        let _ = writeln!(s, "epochs = {}", self.unlearn_epochs);
        let _ = writeln!(s, "batch_size = {}", self.unlearn_batch_size);
        let _ = writeln!(s, "optimizer = {}", self.fo_optimizer.name());
        let _ = writeln!(s, "lr = {}", self.fo_lr);
        let _ = writeln!(s, "so_lr = {}", self.so_lr);
        let _ = writeln!(s, "curriculum = {}", self.curriculum_direction.name());
        let _ = writeln!(s, "salun_fraction = {}", self.salun_fraction);
        let _ = writeln!(s, "bt_weight = {}", self.bt_weight);
        let _ = writeln!(s, "npo_beta = {}", self.npo_beta);
        let _ = writeln!(s, "npo_retain_term = {}", self.npo_retain_term);
        let _ = writeln!(s, "rl_retain_fraction = {}", self.rl_retain_fraction);
        let _ = writeln!(s, "divergence_ceiling = {}", self.divergence_ceiling);

        let _ = writeln!(s, "\n[curve]");
        let kinds: Vec<&str> = self.curve_kinds.iter().map(|k| k.name()).collect();
        let _ = writeln!(s, "kinds = {}", kinds.join(","));
        let _ = writeln!(s, "steps = {}", self.curve_steps);
        let _ = writeln!(s, "seed = {}", self.curve_seed);
        let _ = writeln!(s, "arclength_reweight = {}", self.arclength_reweight);
        let _ = writeln!(s, "n_points = {}", self.n_points);

        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "forget_statistic = {}", self.forget_statistic.name());
        let _ = writeln!(s, "zrf_reference = {}", self.zrf_reference.name());
        let _ = writeln!(s, "threshold = {}", self.forget_quality_threshold);
        let _ = writeln!(s, "retrain_seed = {}", self.retrain_seed);
        let _ = writeln!(s, "dumb_seed = {}", self.dumb_seed);
        let _ = writeln!(s, "replicates = {}", self.replicates);

        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        s
    }

    /// Canonical text minus the output section: what the config hash covers
    /// and what reports echo (artifact location is not provenance).
    pub fn provenance_text(&self) -> String {
        let text = self.canonical_text();
        text.split("\n[output]").next().unwrap_or(&text).to_string()
    }

    /// FNV-1a hash of the provenance text (moving the output directory must
    /// not invalidate cached stages).
    pub fn config_hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.provenance_text().as_bytes()))
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let raw = parse_sections(text)?;
        let mut cfg = ExperimentConfig::default();
        let mut seen_kind: Option<String> = None;

        for (section, key, value) in &raw {
            let k = (section.as_str(), key.as_str());
            let v = value.as_str();
            match k {
                ("dataset", "kind") => seen_kind = Some(v.to_string()),
                ("dataset", "n") | ("dataset", "classes") | ("dataset", "limit")
                | ("dataset", "noise") | ("dataset", "spread") | ("dataset", "images")
                | ("dataset", "labels") => {} // handled below
                ("dataset", "seed") => cfg.data_seed = parse_num(v, "dataset.seed")?,
                ("dataset", "forget_fraction") => {
                    cfg.forget_fraction = parse_num(v, "dataset.forget_fraction")?
                }
                ("dataset", "test_fraction") => {
                    cfg.test_fraction = parse_num(v, "dataset.test_fraction")?
                }
                ("model", "hidden") => {
                    cfg.hidden = v
                        .split(',')
                        .filter(|p| !p.trim().is_empty())
                        .map(|p| parse_num(p.trim(), "model.hidden"))
                        .collect::<Result<_>>()?;
                }
                ("model", "activation") => cfg.activation = Activation::parse(v)?,
                ("train", "epochs") => cfg.base_epochs = parse_num(v, "train.epochs")?,
                ("train", "batch_size") => cfg.base_batch_size = parse_num(v, "train.batch_size")?,
                ("train", "optimizer") => cfg.base_optimizer = OptKind::parse(v)?,
                ("train", "lr") => cfg.base_lr = parse_num(v, "train.lr")?,
                ("train", "seed") => cfg.base_seed = parse_num(v, "train.seed")?,
                ("train", "acc_floor") => cfg.acc_floor = parse_num(v, "train.acc_floor")?,
                ("unlearn", "setting") => cfg.setting = Setting::parse(v)?,
                ("unlearn", "method") => cfg.method = Method::parse(v)?,
                ("unlearn", "method2") => cfg.method2 = Some(Method::parse(v)?),
                ("unlearn", "seeds") => {
                    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(Error::Config(format!("seeds wants two values, got {v:?}")));
                    }
                    cfg.seeds = (parse_num(parts[0], "seeds")?, parse_num(parts[1], "seeds")?);
                }
                ("unlearn", "epochs") => cfg.unlearn_epochs = parse_num(v, "unlearn.epochs")?,
                ("unlearn", "batch_size") => {
                    cfg.unlearn_batch_size = parse_num(v, "unlearn.batch_size")?
                }
                ("unlearn", "optimizer") => cfg.fo_optimizer = OptKind::parse(v)?,
                ("unlearn", "lr") => cfg.fo_lr = parse_num(v, "unlearn.lr")?,
                ("unlearn", "so_lr") => cfg.so_lr = parse_num(v, "unlearn.so_lr")?,
                ("unlearn", "curriculum") => {
                    cfg.curriculum_direction = CurriculumDirection::parse(v)?
                }
                ("unlearn", "salun_fraction") => {
                    cfg.salun_fraction = parse_num(v, "unlearn.salun_fraction")?
                }
                ("unlearn", "bt_weight") => cfg.bt_weight = parse_num(v, "unlearn.bt_weight")?,
                ("unlearn", "npo_beta") => cfg.npo_beta = parse_num(v, "unlearn.npo_beta")?,
                ("unlearn", "npo_retain_term") => {
                    cfg.npo_retain_term = parse_bool(v, "unlearn.npo_retain_term")?
                }
                ("unlearn", "rl_retain_fraction") => {
                    cfg.rl_retain_fraction = parse_num(v, "unlearn.rl_retain_fraction")?
                }
                ("unlearn", "divergence_ceiling") => {
                    cfg.divergence_ceiling = parse_num(v, "unlearn.divergence_ceiling")?
                }
                ("curve", "kinds") => {
                    cfg.curve_kinds = v
                        .split(',')
                        .filter(|p| !p.trim().is_empty())
                        .map(|p| CurveKind::parse(p.trim()))
                        .collect::<Result<_>>()?;
                }
                ("curve", "steps") => cfg.curve_steps = parse_num(v, "curve.steps")?,
                ("curve", "seed") => cfg.curve_seed = parse_num(v, "curve.seed")?,
                ("curve", "arclength_reweight") => {
                    cfg.arclength_reweight = parse_bool(v, "curve.arclength_reweight")?
                }
                ("curve", "n_points") => cfg.n_points = parse_num(v, "curve.n_points")?,
                ("eval", "tau") => cfg.tau = parse_num(v, "eval.tau")?,
                ("eval", "forget_statistic") => {
                    cfg.forget_statistic = ForgetStatistic::parse(v)?
                }
                ("eval", "zrf_reference") => cfg.zrf_reference = ZrfReference::parse(v)?,
                ("eval", "threshold") => {
                    cfg.forget_quality_threshold = parse_num(v, "eval.threshold")?
                }
                ("eval", "retrain_seed") => cfg.retrain_seed = parse_num(v, "eval.retrain_seed")?,
                ("eval", "dumb_seed") => cfg.dumb_seed = parse_num(v, "eval.dumb_seed")?,
                ("eval", "replicates") => cfg.replicates = parse_num(v, "eval.replicates")?,
                ("output", "dir") => cfg.out_dir = PathBuf::from(v),
                (section, key) => {
                    return Err(Error::Config(format!(
                        "unknown config key [{section}] {key}"
                    )))
                }
            }
        }

        // dataset block needs its kind to interpret the numeric keys
        let mut ds_keys: BTreeMap<&str, &str> = BTreeMap::new();
        for (section, key, value) in &raw {
            if section == "dataset" {
                ds_keys.insert(key.as_str(), value.as_str());
            }
        }
        let kind = seen_kind.as_deref().unwrap_or("moons");
        cfg.dataset = match kind {
            "moons" => DatasetSpec::Moons {
                n: parse_num(ds_keys.get("n").copied().unwrap_or("400"), "dataset.n")?,
                noise: parse_num(ds_keys.get("noise").copied().unwrap_or("0.15"), "dataset.noise")?,
            },
            "blobs" => DatasetSpec::Blobs {
                n: parse_num(ds_keys.get("n").copied().unwrap_or("300"), "dataset.n")?,
                classes: parse_num(ds_keys.get("classes").copied().unwrap_or("3"), "dataset.classes")?,
                spread: parse_num(ds_keys.get("spread").copied().unwrap_or("0.5"), "dataset.spread")?,
            },
            "idx" => DatasetSpec::Idx {
                images: PathBuf::from(ds_keys.get("images").copied().ok_or_else(|| {
                    Error::Config("idx dataset needs images = <path>".into())
                })?),
                labels: PathBuf::from(ds_keys.get("labels").copied().ok_or_else(|| {
                    Error::Config("idx dataset needs labels = <path>".into())
                })?),
                limit: parse_num(ds_keys.get("limit").copied().unwrap_or("1000"), "dataset.limit")?,
            },
            other => return Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        };

        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_str(&text)
    }
}

fn parse_sections(text: &str) -> Result<Vec<(String, String, String)>> {
    let mut out = Vec::new();
    let mut section = String::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got {line:?}",
                lineno + 1
            )));
        };
        if section.is_empty() {
            return Err(Error::Config(format!(
                "line {}: key outside any [section]",
                lineno + 1
            )));
        }
        out.push((
            section.clone(),
            key.trim().to_string(),
            value.trim().to_string(),
        ));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(v: &str, what: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse {what} from {v:?}")))
}

fn parse_bool(v: &str, what: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("cannot parse {what} from {other:?}"))),
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
