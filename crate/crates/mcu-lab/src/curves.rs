//! Parametric paths in parameter space between two unlearned minimizers:
//! linear interpolation and quadratic Bézier with a trainable midpoint.
//!
//! Orientation convention for both kinds: `φ(0) = θ₁`, `φ(1) = θ₂`.

use crate::data::{AccessLog, SplitDataset};
use crate::error::{Error, Result};
use crate::nn::{tags, MlpModel, ParamVector};
use crate::optim::{estimate_hessian_diag_with, OptimizerState};
use crate::rng::SplitMix64;
use crate::tensor::Graph;
use crate::unlearn::{grad_param_vector_multi, salun_mask, Method, MethodObjective, UnlearnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveKind {
    Linear,
    Bezier,
}

impl CurveKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(CurveKind::Linear),
            "bezier" => Ok(CurveKind::Bezier),
            other => Err(Error::Config(format!(
                "unknown curve kind {other:?} (linear, bezier)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CurveKind::Linear => "linear",
            CurveKind::Bezier => "bezier",
        }
    }
}

/// A path `φ(t)` between two frozen endpoints. Curve training only ever
/// moves the Bézier midpoint.
#[derive(Debug, Clone)]
pub struct CurveSpec {
    pub kind: CurveKind,
    pub theta1: ParamVector,
    pub theta2: ParamVector,
    pub theta12: Option<ParamVector>,
    pub trained: bool,
}

impl CurveSpec {
    pub fn linear(theta1: ParamVector, theta2: ParamVector) -> Result<Self> {
        check_lengths(&theta1, &theta2)?;
        Ok(CurveSpec {
            kind: CurveKind::Linear,
            theta1,
            theta2,
            theta12: None,
            trained: false,
        })
    }

    /// Quadratic Bézier with the averaged midpoint, so the untrained curve
    /// coincides with the linear path.
    pub fn bezier(theta1: ParamVector, theta2: ParamVector) -> Result<Self> {
        let mid = init_midpoint(&theta1, &theta2)?;
        Ok(CurveSpec {
            kind: CurveKind::Bezier,
            theta1,
            theta2,
            theta12: Some(mid),
            trained: false,
        })
    }

    pub fn with_midpoint(
        theta1: ParamVector,
        theta2: ParamVector,
        theta12: ParamVector,
    ) -> Result<Self> {
        check_lengths(&theta1, &theta2)?;
        check_lengths(&theta1, &theta12)?;
        Ok(CurveSpec {
            kind: CurveKind::Bezier,
            theta1,
            theta2,
            theta12: Some(theta12),
            trained: false,
        })
    }
}

fn check_lengths(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim_in(
            "curve endpoints",
            format!("{}", a.len()),
            format!("{}", b.len()),
        ));
    }
    Ok(())
}

/// `(θ₁+θ₂)/2`: makes the initial Bézier identical to the linear path.
pub fn init_midpoint(theta1: &ParamVector, theta2: &ParamVector) -> Result<ParamVector> {
    check_lengths(theta1, theta2)?;
    let values = theta1
        .values
        .iter()
        .zip(&theta2.values)
        .map(|(&a, &b)| ((a as f64 + b as f64) * 0.5) as f32)
        .collect();
    ParamVector::new(values, theta1.layout.clone())
}

/// Evaluate `φ(t)`.
///
/// `t = 0` and `t = 1` return the stored endpoints bit-exactly. The Bézier
/// weights pair `θ₁` with `(1-t)²` and `θ₂` with `t²` and sum the endpoint
/// products before the midpoint one, so swapping the endpoints and mapping
/// `t → 1-t` is bit-exact whenever `1-t` is.
pub fn curve_point(spec: &CurveSpec, t: f64) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("curve parameter t={t} outside [0,1]")));
    }
    if t == 0.0 {
        return Ok(spec.theta1.clone());
    }
    if t == 1.0 {
        return Ok(spec.theta2.clone());
    }
    let u = 1.0 - t;
    let values: Vec<f32> = match spec.kind {
        CurveKind::Linear => spec
            .theta1
            .values
            .iter()
            .zip(&spec.theta2.values)
            .map(|(&a, &b)| (u * a as f64 + t * b as f64) as f32)
            .collect(),
        CurveKind::Bezier => {
            let mid = spec
                .theta12
                .as_ref()
                .ok_or_else(|| Error::Contract("bezier curve without a midpoint".into()))?;
            let w1 = u * u;
            let w2 = 2.0 * t * u;
            let w3 = t * t;
            spec.theta1
                .values
                .iter()
                .zip(&spec.theta2.values)
                .zip(&mid.values)
                .map(|((&a, &b), &m)| {
                    ((w1 * a as f64 + w3 * b as f64) + w2 * m as f64) as f32
                })
                .collect()
        }
    };
    ParamVector::new(values, spec.theta1.layout.clone())
}

/// Equally spaced samples including both endpoints: `tᵢ = i/(n-1)`.
pub fn sample_curve(spec: &CurveSpec, n_points: usize) -> Result<Vec<(f64, ParamVector)>> {
    if n_points < 2 {
        return Err(Error::Config(format!(
            "need at least 2 curve samples, got {n_points}"
        )));
    }
    (0..n_points)
        .map(|i| {
            let t = i as f64 / (n_points - 1) as f64;
            Ok((t, curve_point(spec, t)?))
        })
        .collect()
}

/// `dφ/dθ₁₂ = 2t(1-t)`.
pub fn midpoint_chain_factor(t: f64) -> f64 {
    2.0 * t * (1.0 - t)
}

/// `‖φ'(t)‖` for the quadratic Bézier.
fn bezier_speed(spec: &CurveSpec, t: f64) -> f64 {
    let mid = spec.theta12.as_ref().expect("bezier midpoint");
    let mut acc = 0.0f64;
    for i in 0..mid.len() {
        let d1 = mid.values[i] as f64 - spec.theta1.values[i] as f64;
        let d2 = spec.theta2.values[i] as f64 - mid.values[i] as f64;
        let v = 2.0 * (1.0 - t) * d1 + 2.0 * t * d2;
        acc += v * v;
    }
    acc.sqrt()
}

/// Midpoint gradient of the method objective at one sampled `t`: the
/// objective gradient at `φ(t)` chained through `2t(1-t)`.
/// Returns `(gradient, objective value)`.
pub fn midpoint_step_gradient(
    objective: &MethodObjective,
    spec: &CurveSpec,
    ds: &SplitDataset,
    t: f64,
    forget_batch: &[usize],
    retain_batch: &[usize],
    log: &mut AccessLog,
) -> Result<(ParamVector, f64)> {
    let phi = curve_point(spec, t)?;
    let mut g = Graph::new();
    let (bindings, loss) = objective.build_step_loss(&mut g, &phi, ds, forget_batch, retain_batch, log)?;
    let j = g.value(loss).item() as f64;
    if !j.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite curve objective at t={t}"
        )));
    }
    g.backward(loss)?;
    let mut grads = grad_param_vector_multi(&g, &bindings, &phi.layout);
    let factor = midpoint_chain_factor(t);
    for v in &mut grads.values {
        *v = (*v as f64 * factor) as f32;
    }
    Ok((grads, j))
}

/// Stochastic trace of a midpoint training run.
#[derive(Debug, Clone)]
pub struct CurveTrainReport {
    pub j_trace: Vec<f64>,
    pub mean_first_100: f64,
    pub mean_last_100: f64,
}

#[derive(Debug, Clone)]
pub struct CurveTrainConfig {
    pub steps: usize,
    pub seed: u64,
    /// Reweight gradients by `‖φ'(t)‖` normalized over the evaluation grid
    /// (the exact length-weighted objective) instead of plain uniform-`t`
    /// sampling.
    pub arclength_reweight: bool,
    pub grid_points: usize,
}

impl Default for CurveTrainConfig {
    fn default() -> Self {
        CurveTrainConfig {
            steps: 500,
            seed: 0,
            arclength_reweight: false,
            grid_points: 16,
        }
    }
}

/// Train the Bézier midpoint to minimize the expected method objective along
/// the curve: per step, draw `t ~ U(0,1)`, take the objective gradient at
/// `φ(t)`, chain onto `θ₁₂`, and update `θ₁₂` only. Endpoints are frozen.
///
/// The objective, its teachers and its label corruption come from
/// `unlearn_cfg` exactly as in an endpoint run; `model` supplies the frozen
/// original parameters those teachers need.
pub fn train_midpoint(
    spec: &CurveSpec,
    model: &MlpModel,
    ds: &SplitDataset,
    unlearn_cfg: &UnlearnConfig,
    train_cfg: &CurveTrainConfig,
) -> Result<(CurveSpec, CurveTrainReport)> {
    if spec.kind != CurveKind::Bezier {
        return Err(Error::Config(
            "midpoint training applies to bezier curves only".into(),
        ));
    }
    unlearn_cfg.validate()?;
    let mut out = spec.clone();
    let objective = MethodObjective::prepare(model, ds, unlearn_cfg)?;
    let mask = match unlearn_cfg.method {
        Method::Salun => Some(salun_mask(model, ds, unlearn_cfg.salun_fraction)?),
        _ => None,
    };
    let layout = model.params.layout.clone();
    let mut opt = OptimizerState::new(
        unlearn_cfg.optimizer.clone(),
        layout.clone(),
        unlearn_cfg.batch_size,
    )?;
    let mut rng = SplitMix64::derive(train_cfg.seed, tags::CURVE);
    let mut probe_rng = SplitMix64::derive(train_cfg.seed, tags::PROBE);
    let mut log = AccessLog::new();
    let mut j_trace = Vec::with_capacity(train_cfg.steps);

    for _step in 0..train_cfg.steps {
        let t = rng.next_f64();
        let f_batch = draw_batch(&ds.forget_idx, unlearn_cfg.batch_size, &mut rng);
        let r_batch = if objective.uses_retain_batches() {
            draw_batch(&ds.retain_idx, unlearn_cfg.batch_size, &mut rng)
        } else {
            Vec::new()
        };

        let (mut grads, j) =
            midpoint_step_gradient(&objective, &out, ds, t, &f_batch, &r_batch, &mut log)?;
        j_trace.push(j);

        if train_cfg.arclength_reweight {
            let speed = bezier_speed(&out, t);
            let grid_mean = (0..train_cfg.grid_points)
                .map(|i| bezier_speed(&out, i as f64 / (train_cfg.grid_points - 1) as f64))
                .sum::<f64>()
                / train_cfg.grid_points as f64;
            if grid_mean > 0.0 {
                let w = speed / grid_mean;
                for v in &mut grads.values {
                    *v = (*v as f64 * w) as f32;
                }
            }
        }

        let curvature = if opt.wants_curvature() {
            let probe_seed = probe_rng.next_u64();
            let phi = curve_point(&out, t)?;
            let mut shadow = AccessLog::new();
            let mut est = estimate_hessian_diag_with(&layout, unlearn_cfg.optimizer.hutchinson_probes, probe_seed, |gg| {
                objective.build_step_loss(gg, &phi, ds, &f_batch, &r_batch, &mut shadow)
            })?;
            // chain the curvature onto the midpoint coordinates
            let factor2 = midpoint_chain_factor(t).powi(2);
            for v in &mut est.values {
                *v = (*v as f64 * factor2) as f32;
            }
            Some(est)
        } else {
            None
        };

        let mid = out.theta12.as_mut().expect("bezier midpoint");
        opt.step_masked(mid, &grads, curvature.as_ref(), mask.as_deref())?;
    }

    out.trained = true;
    let window = 100.min(j_trace.len().max(1));
    let mean_first_100 = j_trace.iter().take(window).sum::<f64>() / window as f64;
    let mean_last_100 = j_trace.iter().rev().take(window).sum::<f64>() / window as f64;
    Ok((
        out,
        CurveTrainReport {
            j_trace,
            mean_first_100,
            mean_last_100,
        },
    ))
}

/// `size` distinct indices from `pool` (all of them if the pool is smaller),
/// via a partial Fisher-Yates pass.
fn draw_batch(pool: &[usize], size: usize, rng: &mut SplitMix64) -> Vec<usize> {
    if pool.len() <= size {
        return pool.to_vec();
    }
    let mut copy = pool.to_vec();
    for i in 0..size {
        let j = i + rng.below(copy.len() - i);
        copy.swap(i, j);
    }
    copy.truncate(size);
    copy
}
