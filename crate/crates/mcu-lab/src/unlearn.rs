//! Unlearning procedures: gradient ascent (GA), random labeling (RL),
//! gradient difference (GD), bad teaching (BT), saliency unlearning (SalUn),
//! negative preference optimization (NPO), plus the retrain-from-scratch
//! oracle.
//!
//! Every method starts from a bit-exact copy of the original parameters and
//! is deterministic per (config, seed). The per-step objective of each
//! method is factored into [`MethodObjective`] so curve training can
//! minimize the same loss along a path.

use crate::data::{corrupt_labels, AccessLog, SplitDataset};
use crate::error::{Error, Result};
use crate::nn::{
    self, forward_logits_with, tags, true_class_logprob_node, MlpArch, MlpModel, ParamVector,
};
use crate::optim::{
    curriculum_order, estimate_hessian_diag_with, CurriculumDirection, OptimizerSpec,
    OptimizerState,
};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, NodeId, Tensor};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ga,
    Rl,
    Gd,
    Bt,
    Salun,
    Npo,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ga" => Ok(Method::Ga),
            "rl" => Ok(Method::Rl),
            "gd" => Ok(Method::Gd),
            "bt" => Ok(Method::Bt),
            "salun" => Ok(Method::Salun),
            "npo" => Ok(Method::Npo),
            other => Err(Error::Config(format!(
                "unknown unlearning method {other:?} (ga, rl, gd, bt, salun, npo)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ga => "ga",
            Method::Rl => "rl",
            Method::Gd => "gd",
            Method::Bt => "bt",
            Method::Salun => "salun",
            Method::Npo => "npo",
        }
    }

    pub const ALL: [Method; 6] = [
        Method::Ga,
        Method::Rl,
        Method::Gd,
        Method::Bt,
        Method::Salun,
        Method::Npo,
    ];
}

#[derive(Debug, Clone)]
pub struct UnlearnConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub curriculum: Option<CurriculumDirection>,
    pub seed: u64,
    /// SalUn saliency fraction γ_s in (0,1].
    pub salun_fraction: f64,
    /// BT forget-term weight α >= 0.
    pub bt_weight: f64,
    /// Ablation flag: ascend instead of descend the BT forget KL term.
    pub bt_maximize_forget_kl: bool,
    /// NPO inverse temperature β > 0.
    pub npo_beta: f64,
    /// Include the plain retain cross-entropy term in NPO.
    pub npo_retain_term: bool,
    /// Fraction of the retain set RL trains on, in (0,1].
    pub rl_retain_fraction: f64,
    /// GA/GD stop early once the forget loss exceeds this multiple of its
    /// initial value.
    pub divergence_ceiling: f64,
}

impl UnlearnConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        UnlearnConfig {
            method,
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerSpec::sgd(0.05),
            curriculum: None,
            seed,
            salun_fraction: 0.5,
            bt_weight: 1.0,
            bt_maximize_forget_kl: false,
            npo_beta: 0.1,
            npo_retain_term: true,
            rl_retain_fraction: 1.0,
            divergence_ceiling: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.salun_fraction > 0.0 && self.salun_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "salun_fraction must be in (0,1], got {}",
                self.salun_fraction
            )));
        }
        if self.npo_beta <= 0.0 {
            return Err(Error::Config(format!(
                "npo_beta must be > 0, got {}",
                self.npo_beta
            )));
        }
        if self.bt_weight < 0.0 {
            return Err(Error::Config(format!(
                "bt_weight must be >= 0, got {}",
                self.bt_weight
            )));
        }
        if !(self.rl_retain_fraction > 0.0 && self.rl_retain_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "rl_retain_fraction must be in (0,1], got {}",
                self.rl_retain_fraction
            )));
        }
        if self.divergence_ceiling <= 1.0 {
            return Err(Error::Config(format!(
                "divergence_ceiling must be > 1, got {}",
                self.divergence_ceiling
            )));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnResult {
    pub params: ParamVector,
    pub method: Method,
    /// One `(retain_loss, forget_loss)` pair per configured epoch, evaluated
    /// on the full sets with original labels. After an early divergence stop
    /// the remaining entries evaluate the frozen parameters.
    pub training_log: Vec<(f64, f64)>,
    pub seed: u64,
    /// Epoch at which the divergence guard tripped, if it did.
    pub diverged_at: Option<usize>,
    /// NPO reference-probability underflow clamps.
    pub ref_clamp_count: usize,
    /// Example indices gathered for gradient computation.
    pub access: AccessLog,
}

/// Mean cross-entropy of `params` on the given example indices.
pub fn mean_loss_on(
    arch: &MlpArch,
    params: &ParamVector,
    ds: &SplitDataset,
    idx: &[usize],
) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Config("loss over an empty index set".into()));
    }
    let (x, y) = ds.batch_unlogged(idx);
    let logits = forward_logits_with(arch, params, &x)?;
    nn::softmax_xent(&logits, &y)
}

/// Accuracy of `params` on the given example indices (original labels).
pub fn accuracy_on(
    arch: &MlpArch,
    params: &ParamVector,
    ds: &SplitDataset,
    idx: &[usize],
) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Config("accuracy over an empty index set".into()));
    }
    let (x, y) = ds.batch_unlogged(idx);
    let logits = forward_logits_with(arch, params, &x)?;
    nn::accuracy(&logits, &y)
}

/// Saliency mask: the top `⌈γ_s·|θ|⌉` coordinates by forget-gradient
/// magnitude at the original parameters; ties broken by coordinate index.
pub fn salun_mask(model: &MlpModel, ds: &SplitDataset, gamma: f64) -> Result<Vec<bool>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!(
            "salun fraction must be in (0,1], got {gamma}"
        )));
    }
    let (x, y) = ds.batch_unlogged(&ds.forget_idx);
    let mut g = Graph::new();
    let xc = g.constant(x);
    let bound = model.forward_nodes(&mut g, xc, true);
    let loss = nn::softmax_xent_node(&mut g, bound.logits, &y)?;
    g.backward(loss)?;
    let grad = nn::grad_param_vector(&g, &bound, &model.params.layout);
    let k = (gamma * grad.len() as f64).ceil() as usize;
    Ok(top_k_mask(&grad.values, k))
}

/// True at the `k` largest-magnitude coordinates, ties to the lower index.
pub fn top_k_mask(values: &[f32], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut mask = vec![false; values.len()];
    for &i in order.iter().take(k.min(values.len())) {
        mask[i] = true;
    }
    mask
}

/// Everything a method needs to evaluate its per-step loss at an arbitrary
/// parameter point: frozen teachers, corrupted labels, reference
/// log-probabilities.
pub struct MethodObjective {
    pub method: Method,
    pub arch: MlpArch,
    origin: ParamVector,
    dumb: Option<ParamVector>,
    corrupted: Option<Vec<usize>>,
    ref_logprob: HashMap<usize, f32>,
    bt_weight: f64,
    bt_maximize: bool,
    npo_beta: f64,
    npo_retain_term: bool,
    pub ref_clamp_count: usize,
}

// NPO reference probabilities are clamped at 1e-12.
const NPO_REF_FLOOR_LOG: f32 = -27.631021;

impl MethodObjective {
    pub fn prepare(model: &MlpModel, ds: &SplitDataset, cfg: &UnlearnConfig) -> Result<Self> {
        let corrupted = match cfg.method {
            Method::Rl | Method::Salun => {
                Some(corrupt_labels(ds, &ds.forget_idx, cfg.seed)?)
            }
            _ => None,
        };
        let dumb = match cfg.method {
            Method::Bt => {
                let dumb_seed = SplitMix64::derive(cfg.seed, tags::DUMB).next_u64();
                Some(model.arch.init(dumb_seed))
            }
            _ => None,
        };
        let mut ref_clamp_count = 0usize;
        let mut ref_logprob = HashMap::new();
        if cfg.method == Method::Npo {
            // evaluated through the same tape ops the trainee uses, so the
            // initial log-ratio is exactly zero
            let (x, y) = ds.batch_unlogged(&ds.forget_idx);
            let mut g = Graph::new();
            let xc = g.constant(x);
            let bound = model.forward_nodes(&mut g, xc, false);
            let lp = true_class_logprob_node(&mut g, bound.logits, &y)?;
            for (&idx, &v) in ds.forget_idx.iter().zip(&g.value(lp).data) {
                let clamped = if v < NPO_REF_FLOOR_LOG {
                    ref_clamp_count += 1;
                    NPO_REF_FLOOR_LOG
                } else {
                    v
                };
                ref_logprob.insert(idx, clamped);
            }
        }
        Ok(MethodObjective {
            method: cfg.method,
            arch: model.arch.clone(),
            origin: model.params.clone(),
            dumb,
            corrupted,
            ref_logprob,
            bt_weight: cfg.bt_weight,
            bt_maximize: cfg.bt_maximize_forget_kl,
            npo_beta: cfg.npo_beta,
            npo_retain_term: cfg.npo_retain_term,
            ref_clamp_count,
        })
    }

    pub fn uses_retain_batches(&self) -> bool {
        match self.method {
            Method::Ga => false,
            Method::Npo => self.npo_retain_term,
            _ => true,
        }
    }

    /// Build the descended objective at `params` on the tape for one step.
    ///
    /// Returns the trainable parameter bindings (each one leaf per layout
    /// entry; methods that bind the parameters twice report both) plus the
    /// scalar loss root.
    pub fn build_step_loss(
        &self,
        g: &mut Graph,
        params: &ParamVector,
        ds: &SplitDataset,
        forget_batch: &[usize],
        retain_batch: &[usize],
        log: &mut AccessLog,
    ) -> Result<(Vec<Vec<NodeId>>, NodeId)> {
        match self.method {
            Method::Ga => {
                let (x, y) = ds.batch(forget_batch, log);
                let xc = g.constant(x);
                let bound = nn::forward_nodes_with(&self.arch, params, g, xc, true);
                let xent = nn::softmax_xent_node(g, bound.logits, &y)?;
                let loss = g.neg(xent); // descend -L(D_f) = ascend L(D_f)
                Ok((vec![bound.param_ids], loss))
            }
            Method::Gd => {
                let (xr, yr) = ds.batch(retain_batch, log);
                let (xf, yf) = ds.batch(forget_batch, log);
                // one parameter binding, two heads
                let n_r = retain_batch.len();
                let mut data = xr.data;
                data.extend_from_slice(&xf.data);
                let x = Tensor::matrix(n_r + forget_batch.len(), xr.shape[1], data);
                let xc = g.constant(x);
                let bound = nn::forward_nodes_with(&self.arch, params, g, xc, true);
                let lse = g.log_sum_exp_rows(bound.logits);
                let mut labels = yr;
                labels.extend_from_slice(&yf);
                let picked = g.gather_cols(bound.logits, std::rc::Rc::new(labels));
                let per = g.sub(lse, picked);
                // mean of the retain rows minus mean of the forget rows
                let weights: Vec<f32> = (0..n_r + forget_batch.len())
                    .map(|i| {
                        if i < n_r {
                            1.0 / n_r as f32
                        } else {
                            -1.0 / forget_batch.len() as f32
                        }
                    })
                    .collect();
                let w = g.constant(Tensor::matrix(weights.len(), 1, weights));
                let loss = g.dot(per, w);
                Ok((vec![bound.param_ids], loss))
            }
            Method::Rl | Method::Salun => {
                let corrupted = self.corrupted.as_ref().expect("corrupted labels prepared");
                let (xf, yf) = ds.batch_with_labels(forget_batch, corrupted, log);
                let (xr, yr) = ds.batch(retain_batch, log);
                let mut data = xf.data;
                data.extend_from_slice(&xr.data);
                let mut labels = yf;
                labels.extend_from_slice(&yr);
                let rows = forget_batch.len() + retain_batch.len();
                let x = Tensor::matrix(rows, self.arch.in_dim(), data);
                let xc = g.constant(x);
                let bound = nn::forward_nodes_with(&self.arch, params, g, xc, true);
                let loss = nn::softmax_xent_node(g, bound.logits, &labels)?;
                Ok((vec![bound.param_ids], loss))
            }
            Method::Bt => {
                let dumb = self.dumb.as_ref().expect("dumb teacher prepared");
                let (xr, _) = ds.batch(retain_batch, log);
                let (xf, _) = ds.batch(forget_batch, log);

                let xr_c = g.constant(xr.clone());
                let student_r = nn::forward_nodes_with(&self.arch, params, g, xr_c, true);
                let xr_c2 = g.constant(xr);
                let teacher_r = nn::forward_nodes_with(&self.arch, &self.origin, g, xr_c2, false);
                let kl_retain = nn::kl_divergence_node(g, student_r.logits, teacher_r.logits)?;

                let xf_c = g.constant(xf.clone());
                let student_f = nn::forward_nodes_with(&self.arch, params, g, xf_c, true);
                let xf_c2 = g.constant(xf);
                let teacher_f = nn::forward_nodes_with(&self.arch, dumb, g, xf_c2, false);
                let kl_forget = nn::kl_divergence_node(g, student_f.logits, teacher_f.logits)?;

                let weighted = g.scale(kl_forget, self.bt_weight);
                let loss = if self.bt_maximize {
                    g.sub(kl_retain, weighted)
                } else {
                    g.add(kl_retain, weighted)
                };
                Ok((vec![student_r.param_ids, student_f.param_ids], loss))
            }
            Method::Npo => {
                let (xf, yf) = ds.batch(forget_batch, log);
                let refs: Vec<f32> = forget_batch
                    .iter()
                    .map(|i| *self.ref_logprob.get(i).expect("reference logprob"))
                    .collect();
                let xc = g.constant(xf);
                let bound = nn::forward_nodes_with(&self.arch, params, g, xc, true);
                let lp = true_class_logprob_node(g, bound.logits, &yf)?;
                let rc = g.constant(Tensor::matrix(refs.len(), 1, refs));
                let s = g.sub(lp, rc);
                let scaled = g.scale(s, self.npo_beta);
                let sp = g.softplus(scaled);
                let mean = g.mean_all(sp);
                let mut loss = g.scale(mean, 2.0 / self.npo_beta);
                let mut bindings = vec![bound.param_ids];
                if self.npo_retain_term && !retain_batch.is_empty() {
                    let (xr, yr) = ds.batch(retain_batch, log);
                    let xr_c = g.constant(xr);
                    let bound_r = nn::forward_nodes_with(&self.arch, params, g, xr_c, true);
                    let xent_r = nn::softmax_xent_node(g, bound_r.logits, &yr)?;
                    loss = g.add(loss, xent_r);
                    bindings.push(bound_r.param_ids);
                }
                Ok((bindings, loss))
            }
        }
    }
}

/// Flat gradient for a loss built over one or more bindings of the same
/// parameter vector: per-entry gradients are summed across bindings, f64
/// accumulation. Parameters the loss does not touch get exactly zero.
pub fn grad_param_vector_multi(
    g: &Graph,
    bindings: &[Vec<NodeId>],
    layout: &std::sync::Arc<nn::Layout>,
) -> ParamVector {
    let mut values = vec![0.0f64; layout.total_len];
    for bind in bindings {
        for (entry, &node) in layout.entries.iter().zip(bind.iter()) {
            if let Some(grad) = g.grad(node) {
                for (k, &gk) in grad.iter().enumerate() {
                    values[entry.offset + k] += gk as f64;
                }
            }
        }
    }
    ParamVector {
        values: values.iter().map(|&v| v as f32).collect(),
        layout: layout.clone(),
    }
}

struct EpochPlan {
    /// (forget members, retain members) per optimizer step.
    steps: Vec<(Vec<usize>, Vec<usize>)>,
}

fn chunks_of(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    order.chunks(size).map(|c| c.to_vec()).collect()
}

fn cyclic_chunk(order: &[usize], step: usize, size: usize) -> Vec<usize> {
    if order.is_empty() {
        return Vec::new();
    }
    let start = (step * size) % order.len();
    (0..size.min(order.len()))
        .map(|k| order[(start + k) % order.len()])
        .collect()
}

fn plan_epoch(
    method: Method,
    forget_order: &[usize],
    retain_order: &[usize],
    batch_size: usize,
    uses_retain: bool,
    rng: &mut SplitMix64,
) -> EpochPlan {
    let bs = batch_size;
    match method {
        Method::Ga => EpochPlan {
            steps: chunks_of(forget_order, bs)
                .into_iter()
                .map(|f| (f, Vec::new()))
                .collect(),
        },
        Method::Rl | Method::Salun => {
            // forget samples keep their (curriculum or shuffled) order but
            // land in shuffled slots among the retain stream
            let mut slots: Vec<u8> = std::iter::repeat(0u8)
                .take(forget_order.len())
                .chain(std::iter::repeat(1u8).take(retain_order.len()))
                .collect();
            rng.shuffle(&mut slots);
            let mut fi = 0usize;
            let mut ri = 0usize;
            let merged: Vec<usize> = slots
                .iter()
                .map(|&s| {
                    if s == 0 {
                        fi += 1;
                        forget_order[fi - 1]
                    } else {
                        ri += 1;
                        retain_order[ri - 1]
                    }
                })
                .collect();
            let forget_set: std::collections::HashSet<usize> =
                forget_order.iter().copied().collect();
            EpochPlan {
                steps: chunks_of(&merged, bs)
                    .into_iter()
                    .map(|chunk| {
                        let (f, r): (Vec<usize>, Vec<usize>) =
                            chunk.into_iter().partition(|i| forget_set.contains(i));
                        (f, r)
                    })
                    .collect(),
            }
        }
        Method::Gd | Method::Bt | Method::Npo => {
            let f_batches = forget_order.len().div_ceil(bs);
            let n_steps = if uses_retain {
                f_batches.max(retain_order.len().div_ceil(bs))
            } else {
                f_batches
            };
            EpochPlan {
                steps: (0..n_steps)
                    .map(|s| {
                        let f = cyclic_chunk(forget_order, s, bs);
                        let r = if uses_retain {
                            cyclic_chunk(retain_order, s, bs)
                        } else {
                            Vec::new()
                        };
                        (f, r)
                    })
                    .collect(),
            }
        }
    }
}

/// Run one unlearning procedure. Dispatches on `cfg.method`.
pub fn run_unlearn(model: &MlpModel, ds: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    cfg.validate()?;
    if ds.forget_idx.is_empty() || ds.retain_idx.is_empty() {
        return Err(Error::Config(
            "unlearning needs non-empty forget and retain sets".into(),
        ));
    }
    if ds.n_classes < 2 && matches!(cfg.method, Method::Rl | Method::Salun) {
        return Err(Error::Config("random labeling needs >= 2 classes".into()));
    }

    let objective = MethodObjective::prepare(model, ds, cfg)?;
    let arch = model.arch.clone();
    let layout = model.params.layout.clone();
    // every method starts from the identical original parameter vector
    let mut params = model.params.clone();

    let mask = match cfg.method {
        Method::Salun => Some(salun_mask(model, ds, cfg.salun_fraction)?),
        _ => None,
    };

    // curriculum scores: per-sample loss under the original model, original
    // labels, computed once before unlearning
    let fixed_forget_order: Option<Vec<usize>> = match cfg.curriculum {
        Some(direction) => {
            let (x, y) = ds.batch_unlogged(&ds.forget_idx);
            let logits = forward_logits_with(&arch, &model.params, &x)?;
            let scores = nn::per_sample_xent(&logits, &y)?;
            let perm = curriculum_order(&scores, direction)?;
            Some(perm.into_iter().map(|p| ds.forget_idx[p]).collect())
        }
        None => None,
    };

    // RL retain subsample, selected once per run
    let retain_pool: Vec<usize> = if matches!(cfg.method, Method::Rl | Method::Salun)
        && cfg.rl_retain_fraction < 1.0
    {
        let mut rng = SplitMix64::derive(cfg.seed, tags::RL_SUBSAMPLE);
        let mut pool = ds.retain_idx.clone();
        rng.shuffle(&mut pool);
        let keep = ((cfg.rl_retain_fraction * pool.len() as f64).round() as usize)
            .clamp(1, pool.len());
        let mut kept = pool[..keep].to_vec();
        kept.sort_unstable();
        kept
    } else {
        ds.retain_idx.clone()
    };

    let mut shuffle_rng = SplitMix64::derive(cfg.seed, tags::SHUFFLE);
    let mut probe_rng = SplitMix64::derive(cfg.seed, tags::PROBE);
    let mut opt = OptimizerState::new(cfg.optimizer.clone(), layout.clone(), cfg.batch_size)?;
    let mut access = AccessLog::new();

    let initial_forget_loss = mean_loss_on(&arch, &params, ds, &ds.forget_idx)?;
    let guard_active = matches!(cfg.method, Method::Ga | Method::Gd);
    // floor keeps the ceiling meaningful when the base model has already
    // driven the forget loss to ~0
    let ceiling = cfg.divergence_ceiling * initial_forget_loss.max(0.02);

    let mut training_log = Vec::with_capacity(cfg.epochs);
    let mut diverged_at: Option<usize> = None;

    for epoch in 0..cfg.epochs {
        if diverged_at.is_none() {
            let forget_order: Vec<usize> = match &fixed_forget_order {
                Some(order) => order.clone(),
                None => {
                    let mut o = ds.forget_idx.clone();
                    shuffle_rng.shuffle(&mut o);
                    o
                }
            };
            let mut retain_order = retain_pool.clone();
            shuffle_rng.shuffle(&mut retain_order);

            let plan = plan_epoch(
                cfg.method,
                &forget_order,
                &retain_order,
                cfg.batch_size,
                objective.uses_retain_batches(),
                &mut shuffle_rng,
            );

            'steps: for (f_batch, r_batch) in plan.steps {
                let mut g = Graph::new();
                let (bindings, loss) =
                    objective.build_step_loss(&mut g, &params, ds, &f_batch, &r_batch, &mut access)?;
                let loss_val = g.value(loss).item();
                if !loss_val.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite {} objective at epoch {epoch}",
                        cfg.method.name()
                    )));
                }
                g.backward(loss)?;
                let grads = grad_param_vector_multi(&g, &bindings, &layout);

                let curvature = if opt.wants_curvature() {
                    let probe_seed = probe_rng.next_u64();
                    let mut shadow = AccessLog::new();
                    Some(estimate_hessian_diag_with(
                        &layout,
                        cfg.optimizer.hutchinson_probes,
                        probe_seed,
                        |gg| objective.build_step_loss(gg, &params, ds, &f_batch, &r_batch, &mut shadow),
                    )?)
                } else {
                    None
                };
                opt.step_masked(&mut params, &grads, curvature.as_ref(), mask.as_deref())?;

                if guard_active {
                    let fl = mean_loss_on(&arch, &params, ds, &ds.forget_idx)?;
                    if fl > ceiling {
                        diverged_at = Some(epoch);
                        break 'steps;
                    }
                }
            }
        }
        training_log.push((
            mean_loss_on(&arch, &params, ds, &ds.retain_idx)?,
            mean_loss_on(&arch, &params, ds, &ds.forget_idx)?,
        ));
    }

    Ok(UnlearnResult {
        params,
        method: cfg.method,
        training_log,
        seed: cfg.seed,
        diverged_at,
        ref_clamp_count: objective.ref_clamp_count,
        access,
    })
}

pub fn unlearn_ga(model: &MlpModel, ds: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    expect_method(cfg, Method::Ga)?;
    run_unlearn(model, ds, cfg)
}

pub fn unlearn_rl(model: &MlpModel, ds: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    expect_method(cfg, Method::Rl)?;
    run_unlearn(model, ds, cfg)
}

pub fn unlearn_gd(model: &MlpModel, ds: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    expect_method(cfg, Method::Gd)?;
    run_unlearn(model, ds, cfg)
}

pub fn unlearn_bt(model: &MlpModel, ds: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    expect_method(cfg, Method::Bt)?;
    run_unlearn(model, ds, cfg)
}

pub fn unlearn_salun(model: &MlpModel, ds: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    expect_method(cfg, Method::Salun)?;
    run_unlearn(model, ds, cfg)
}

pub fn unlearn_npo(model: &MlpModel, ds: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    expect_method(cfg, Method::Npo)?;
    run_unlearn(model, ds, cfg)
}

fn expect_method(cfg: &UnlearnConfig, want: Method) -> Result<()> {
    if cfg.method != want {
        return Err(Error::Config(format!(
            "config method is {}, expected {}",
            cfg.method.name(),
            want.name()
        )));
    }
    Ok(())
}

/// Plain supervised training schedule shared by base training and the
/// retrain oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Train `arch` from a fresh seeded init on the given indices only.
/// Returns the parameters, the per-epoch mean loss curve, and the access log.
pub fn train_supervised(
    arch: &MlpArch,
    ds: &SplitDataset,
    train_idx: &[usize],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(ParamVector, Vec<f64>, AccessLog)> {
    schedule.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Config("training over an empty index set".into()));
    }
    let mut params = arch.init(seed);
    let layout = params.layout.clone();
    let mut opt = OptimizerState::new(schedule.optimizer.clone(), layout.clone(), schedule.batch_size)?;
    let mut rng = SplitMix64::derive(seed, tags::SHUFFLE);
    let mut probe_rng = SplitMix64::derive(seed, tags::PROBE);
    let mut access = AccessLog::new();
    let mut curve = Vec::with_capacity(schedule.epochs);

    for _epoch in 0..schedule.epochs {
        let mut order = train_idx.to_vec();
        rng.shuffle(&mut order);
        for batch in order.chunks(schedule.batch_size) {
            let (x, y) = ds.batch(batch, &mut access);
            let mut g = Graph::new();
            let xc = g.constant(x.clone());
            let p = ParamVector {
                values: params.values.clone(),
                layout: layout.clone(),
            };
            let bound = nn::forward_nodes_with(arch, &p, &mut g, xc, true);
            let loss = nn::softmax_xent_node(&mut g, bound.logits, &y)?;
            if !g.value(loss).item().is_finite() {
                return Err(Error::Numeric("non-finite training loss".into()));
            }
            g.backward(loss)?;
            let grads = nn::grad_param_vector(&g, &bound, &layout);
            let curvature = if opt.wants_curvature() {
                let probe_seed = probe_rng.next_u64();
                let p2 = p.clone();
                Some(estimate_hessian_diag_with(
                    &layout,
                    schedule.optimizer.hutchinson_probes,
                    probe_seed,
                    |gg| {
                        let xc = gg.constant(x.clone());
                        let b = nn::forward_nodes_with(arch, &p2, gg, xc, true);
                        let l = nn::softmax_xent_node(gg, b.logits, &y)?;
                        Ok((vec![b.param_ids], l))
                    },
                )?)
            } else {
                None
            };
            opt.step(&mut params, &grads, curvature.as_ref())?;
        }
        curve.push(mean_loss_on(arch, &params, ds, train_idx)?);
    }
    Ok((params, curve, access))
}

/// The gold standard for forget quality: train from scratch on the retain
/// set only, with the same schedule the original model used.
pub fn retrain_oracle(
    arch: &MlpArch,
    ds: &SplitDataset,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(ParamVector, AccessLog)> {
    let (params, _curve, access) = train_supervised(arch, ds, &ds.retain_idx, schedule, seed)?;
    let touched_forget = access.overlap(&ds.forget_idx);
    if !touched_forget.is_empty() {
        return Err(Error::Contract(format!(
            "retrain oracle touched forget indices {touched_forget:?}"
        )));
    }
    Ok((params, access))
}
