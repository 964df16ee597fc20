//! Parameter update rules (first- and second-order) and curriculum ordering.
//!
//! The second-order rule is a clipped diagonal-Newton update: the gradient
//! first moment divided by a damped, EMA-smoothed, non-negative diagonal
//! curvature estimate, clipped to ±1 per coordinate and scaled by the
//! learning rate. Curvature comes from a Hutchinson probe
//! (`z ⊙ Hz`, Rademacher `z`), computed as the gradient of `∇L·z`.

use crate::error::{Error, Result};
use crate::nn::{tags, Layout, MlpModel, ParamVector};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, NodeId, Tensor};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    Sgd,
    Adam,
    SoDiag,
}

impl OptKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptKind::Sgd),
            "adam" => Ok(OptKind::Adam),
            "so" | "so_diag" => Ok(OptKind::SoDiag),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?}, expected sgd, adam or so_diag"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptKind::Sgd => "sgd",
            OptKind::Adam => "adam",
            OptKind::SoDiag => "so_diag",
        }
    }

    pub fn is_second_order(&self) -> bool {
        matches!(self, OptKind::SoDiag)
    }
}

/// Hyperparameters for one optimizer instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub kind: OptKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Clip factor per batch sample; the effective factor is
    /// `so_gamma * batch_size`.
    pub so_gamma: f64,
    pub so_eps: f64,
    pub curvature_ema: f64,
    /// Refresh the curvature estimate every this many steps.
    pub curvature_refresh: usize,
    pub hutchinson_probes: usize,
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec {
            kind: OptKind::Sgd,
            lr,
            ..OptimizerSpec::defaults()
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerSpec {
            kind: OptKind::Adam,
            lr,
            ..OptimizerSpec::defaults()
        }
    }

    pub fn so_diag(lr: f64) -> Self {
        OptimizerSpec {
            kind: OptKind::SoDiag,
            lr,
            ..OptimizerSpec::defaults()
        }
    }

    pub fn defaults() -> Self {
        OptimizerSpec {
            kind: OptKind::Sgd,
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            so_gamma: 0.01,
            so_eps: 1e-12,
            curvature_ema: 0.99,
            curvature_refresh: 10,
            hutchinson_probes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed as an explicit no-op configuration
        if self.lr < 0.0 {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.so_eps <= 0.0 {
            return Err(Error::Config(format!(
                "so_eps must be > 0, got {}",
                self.so_eps
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2), ("curvature_ema", self.curvature_ema)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if self.curvature_refresh == 0 || self.hutchinson_probes == 0 {
            return Err(Error::Config(
                "curvature_refresh and hutchinson_probes must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Mutable optimizer state. Moment buffers are f64 and aligned with the
/// parameter layout (named through it).
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub spec: OptimizerSpec,
    pub step_count: u64,
    effective_gamma: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    h: Vec<f64>,
    h_count: u64,
}

fn first_nonfinite_name(layout: &Layout, values: &[f32]) -> Option<String> {
    let bad = values.iter().position(|v| !v.is_finite())?;
    let entry = layout
        .entries
        .iter()
        .find(|e| bad >= e.offset && bad < e.offset + e.len())?;
    Some(format!("{} (flat index {bad})", entry.name))
}

/// `params <- params - lr * grads`. Fails on non-finite gradients, naming
/// the offending parameter.
pub fn sgd_step(params: &mut ParamVector, grads: &ParamVector, lr: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Config(format!("lr must be > 0, got {lr}")));
    }
    check_grads(params, grads)?;
    for (p, &g) in params.values.iter_mut().zip(&grads.values) {
        *p = (*p as f64 - lr * g as f64) as f32;
    }
    Ok(())
}

fn check_grads(params: &ParamVector, grads: &ParamVector) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dim_in(
            "optimizer step",
            format!("{} grads", params.len()),
            format!("{}", grads.len()),
        ));
    }
    if let Some(name) = first_nonfinite_name(&grads.layout, &grads.values) {
        return Err(Error::Numeric(format!(
            "non-finite gradient in parameter {name}; step aborted"
        )));
    }
    Ok(())
}

impl OptimizerState {
    pub fn new(spec: OptimizerSpec, layout: Arc<Layout>, batch_size: usize) -> Result<Self> {
        spec.validate()?;
        let n = layout.total_len;
        let effective_gamma = spec.so_gamma * batch_size.max(1) as f64;
        Ok(OptimizerState {
            spec,
            step_count: 0,
            effective_gamma,
            m: vec![0.0; n],
            v: vec![0.0; n],
            h: vec![0.0; n],
            h_count: 0,
        })
    }

    pub fn kind(&self) -> OptKind {
        self.spec.kind
    }

    /// Whether this step index wants a fresh curvature estimate.
    pub fn wants_curvature(&self) -> bool {
        self.spec.kind == OptKind::SoDiag && self.step_count % self.spec.curvature_refresh as u64 == 0
    }

    /// Dispatch on the configured kind. `curvature` is only read by the
    /// second-order rule.
    pub fn step(
        &mut self,
        params: &mut ParamVector,
        grads: &ParamVector,
        curvature: Option<&ParamVector>,
    ) -> Result<()> {
        self.step_masked(params, grads, curvature, None)
    }

    /// As [`OptimizerState::step`], but the computed update is applied only
    /// where `mask` is true. Moments still track the full gradient; masked-out
    /// parameters stay bit-identical.
    pub fn step_masked(
        &mut self,
        params: &mut ParamVector,
        grads: &ParamVector,
        curvature: Option<&ParamVector>,
        mask: Option<&[bool]>,
    ) -> Result<()> {
        check_grads(params, grads)?;
        if let Some(m) = mask {
            assert_eq!(m.len(), params.len(), "mask length");
        }
        let update = match self.spec.kind {
            OptKind::Sgd => self.sgd_update(grads),
            OptKind::Adam => self.adam_update(grads),
            OptKind::SoDiag => self.so_diag_update(grads, curvature)?,
        };
        for (i, (p, u)) in params.values.iter_mut().zip(update).enumerate() {
            if mask.map_or(true, |m| m[i]) {
                *p = (*p as f64 - u) as f32;
            }
        }
        self.step_count += 1;
        Ok(())
    }

    fn sgd_update(&mut self, grads: &ParamVector) -> Vec<f64> {
        grads
            .values
            .iter()
            .map(|&g| self.spec.lr * g as f64)
            .collect()
    }

    /// Standard bias-corrected adaptive update.
    fn adam_update(&mut self, grads: &ParamVector) -> Vec<f64> {
        let t = (self.step_count + 1) as i32;
        let (b1, b2) = (self.spec.beta1, self.spec.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        grads
            .values
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let g = g as f64;
                self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                self.spec.lr * m_hat / (v_hat.sqrt() + self.spec.adam_eps)
            })
            .collect()
    }

    /// `params <- params - lr * clip(m̂ / max(γ·ĥ, ε), ±1)` with `m̂` the
    /// bias-corrected gradient moment and `ĥ` the bias-corrected,
    /// non-negative curvature EMA. The per-coordinate displacement is
    /// bounded by `lr`.
    fn so_diag_update(
        &mut self,
        grads: &ParamVector,
        curvature: Option<&ParamVector>,
    ) -> Result<Vec<f64>> {
        if let Some(c) = curvature {
            if c.len() != grads.len() {
                return Err(Error::dim_in(
                    "curvature estimate",
                    format!("{}", grads.len()),
                    format!("{}", c.len()),
                ));
            }
            let rho = self.spec.curvature_ema;
            for (hi, &ci) in self.h.iter_mut().zip(&c.values) {
                *hi = rho * *hi + (1.0 - rho) * (ci as f64).max(0.0);
            }
            self.h_count += 1;
        }
        let t = (self.step_count + 1) as i32;
        let b1 = self.spec.beta1;
        let c1 = 1.0 - b1.powi(t);
        let ch = 1.0 - self.spec.curvature_ema.powi(self.h_count as i32);
        let out = grads
            .values
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = b1 * self.m[i] + (1.0 - b1) * g as f64;
                let m_hat = self.m[i] / c1;
                let h_hat = if self.h_count > 0 { self.h[i] / ch } else { 0.0 };
                let denom = (self.effective_gamma * h_hat).max(self.spec.so_eps);
                self.spec.lr * (m_hat / denom).clamp(-1.0, 1.0)
            })
            .collect();
        Ok(out)
    }
}

/// Hutchinson diagonal curvature estimate for an arbitrary scalar objective:
/// mean over probes of `z ⊙ Hz` with Rademacher `z`, where `Hz` is the
/// gradient of `∇L·z`; clamped to `>= 0` per coordinate.
///
/// `build` creates the loss root plus the parameter bindings: one or more
/// lists of leaves, each list aligned with the layout entries. Objectives
/// that bind the same parameter values more than once (student/teacher
/// pairs) report every trainable binding; gradients are summed across them.
pub fn estimate_hessian_diag_with<F>(
    layout: &Arc<Layout>,
    probes: usize,
    seed: u64,
    build: F,
) -> Result<ParamVector>
where
    F: FnOnce(&mut Graph) -> Result<(Vec<Vec<NodeId>>, NodeId)>,
{
    if probes == 0 {
        return Err(Error::Config("probes must be >= 1".into()));
    }
    let mut g = Graph::new();
    let (bindings, loss) = build(&mut g)?;
    for b in &bindings {
        assert_eq!(b.len(), layout.entries.len(), "one leaf per layout entry");
    }
    let grads = g.grad_nodes(loss)?;

    let mut rng = SplitMix64::derive(seed, tags::PROBE);
    let mut acc = vec![0.0f64; layout.total_len];
    for _ in 0..probes {
        // draw the full probe vector first so the stream does not depend on
        // which parameters the loss happens to touch
        let z: Vec<f32> = (0..layout.total_len).map(|_| rng.rademacher()).collect();

        let mut s: Option<NodeId> = None;
        for binding in &bindings {
            for (&pid, entry) in binding.iter().zip(&layout.entries) {
                let Some(&gnode) = grads.get(&pid) else { continue };
                let shape = g.value(pid).shape.clone();
                let zt =
                    Tensor::new(shape, z[entry.offset..entry.offset + entry.len()].to_vec());
                let zn = g.constant(zt);
                let d = g.dot(gnode, zn);
                s = Some(match s {
                    Some(prev) => g.add(prev, d),
                    None => d,
                });
            }
        }
        let Some(s) = s else { continue }; // loss touched no parameters
        let hz = g.grad_nodes(s)?;
        for binding in &bindings {
            for (&pid, entry) in binding.iter().zip(&layout.entries) {
                let Some(&hznode) = hz.get(&pid) else { continue };
                let hzv = &g.value(hznode).data;
                for (k, &hzk) in hzv.iter().enumerate() {
                    let flat = entry.offset + k;
                    acc[flat] += z[flat] as f64 * hzk as f64;
                }
            }
        }
    }

    let values: Vec<f32> = acc
        .iter()
        .map(|&a| ((a / probes as f64).max(0.0)) as f32)
        .collect();
    ParamVector::new(values, layout.clone())
}

/// Hutchinson estimate of the cross-entropy curvature of `model` on a batch.
pub fn estimate_hessian_diag(
    model: &MlpModel,
    x: &Tensor,
    labels: &[usize],
    probes: usize,
    seed: u64,
) -> Result<ParamVector> {
    let layout = model.params.layout.clone();
    estimate_hessian_diag_with(&layout, probes, seed, |g| {
        let xc = g.constant(x.clone());
        let bound = model.forward_nodes(g, xc, true);
        let loss = crate::nn::softmax_xent_node(g, bound.logits, labels)?;
        Ok((vec![bound.param_ids], loss))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurriculumDirection {
    Ascending,
    Descending,
}

impl CurriculumDirection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ascending" | "asc" => Ok(CurriculumDirection::Ascending),
            "descending" | "desc" => Ok(CurriculumDirection::Descending),
            other => Err(Error::Config(format!(
                "unknown curriculum direction {other:?}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CurriculumDirection::Ascending => "ascending",
            CurriculumDirection::Descending => "descending",
        }
    }
}

/// Stable argsort of per-sample losses; ties keep the original order.
pub fn curriculum_order(losses: &[f64], direction: CurriculumDirection) -> Result<Vec<usize>> {
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::Numeric("NaN loss in curriculum scoring".into()));
    }
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    match direction {
        CurriculumDirection::Ascending => {
            idx.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap())
        }
        CurriculumDirection::Descending => {
            idx.sort_by(|&a, &b| losses[b].partial_cmp(&losses[a]).unwrap())
        }
    }
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpArch};

    fn scalar_params(v: f32) -> ParamVector {
        let arch = MlpArch::new(vec![1, 1], Activation::Relu).unwrap();
        // layout w0:[1,1], b0:[1]; we use only the weight coordinate
        let layout = arch.layout();
        ParamVector::new(vec![v, 0.0], layout).unwrap()
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = scalar_params(1.0);
        let g = ParamVector::new(vec![6.0, 0.0], p.layout.clone()).unwrap();
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert!((p.values[0] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let mut p = scalar_params(0.75);
        let before = p.values.clone();
        let g = ParamVector::zeros_like(&p);
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.values, before);
    }

    #[test]
    fn sgd_two_steps_equal_one_summed_step_for_constant_gradient() {
        let mut a = scalar_params(1.0);
        let g = ParamVector::new(vec![2.0, 0.0], a.layout.clone()).unwrap();
        sgd_step(&mut a, &g, 0.1).unwrap();
        sgd_step(&mut a, &g, 0.1).unwrap();
        let mut b = scalar_params(1.0);
        sgd_step(&mut b, &g, 0.2).unwrap();
        assert!((a.values[0] - b.values[0]).abs() < 1e-6);
    }

    #[test]
    fn sgd_rejects_nan_gradient_and_names_the_parameter() {
        let mut p = scalar_params(1.0);
        let g = ParamVector::new(vec![f32::NAN, 0.0], p.layout.clone()).unwrap();
        let err = sgd_step(&mut p, &g, 0.1).unwrap_err().to_string();
        assert!(err.contains("w0"), "{err}");
    }

    #[test]
    fn adam_first_step_displacement_is_about_lr() {
        for c in [0.1f32, 3.0, 250.0] {
            let mut p = scalar_params(1.0);
            let layout = p.layout.clone();
            let mut st = OptimizerState::new(OptimizerSpec::adam(0.001), layout.clone(), 1).unwrap();
            let g = ParamVector::new(vec![c, 0.0], layout).unwrap();
            st.step(&mut p, &g, None).unwrap();
            let disp = (1.0 - p.values[0]) as f64;
            assert!((disp - 0.001).abs() < 1e-5, "c={c}: disp={disp}");
        }
    }

    #[test]
    fn adam_zero_gradient_never_moves() {
        let mut p = scalar_params(0.5);
        let layout = p.layout.clone();
        let mut st = OptimizerState::new(OptimizerSpec::adam(0.01), layout, 1).unwrap();
        let g = ParamVector::zeros_like(&p);
        let before = p.values.clone();
        for _ in 0..10 {
            st.step(&mut p, &g, None).unwrap();
        }
        assert_eq!(p.values, before);
    }

    // independent 64-bit restatement of the published update equations
    fn reference_adam(theta0: &[f64], a: &[f64], lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut th = theta0.to_vec();
        let mut m = vec![0.0; th.len()];
        let mut v = vec![0.0; th.len()];
        for t in 1..=steps {
            for i in 0..th.len() {
                let g = a[i] * th[i]; // L = 0.5 a theta^2
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / (1.0 - b1.powi(t as i32));
                let vh = v[i] / (1.0 - b2.powi(t as i32));
                th[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        th
    }

    #[test]
    fn adam_trajectory_matches_f64_reference() {
        let arch = MlpArch::new(vec![2, 2], Activation::Relu).unwrap();
        let layout = arch.layout();
        let mut rng = SplitMix64::new(31);
        let theta0: Vec<f32> = (0..layout.total_len)
            .map(|_| rng.uniform(0.2, 0.8) as f32)
            .collect();
        let a: Vec<f64> = (0..layout.total_len).map(|_| rng.uniform(0.5, 2.0)).collect();

        let mut p = ParamVector::new(theta0.clone(), layout.clone()).unwrap();
        let mut st = OptimizerState::new(OptimizerSpec::adam(0.01), layout.clone(), 1).unwrap();
        for _ in 0..10 {
            let g: Vec<f32> = p
                .values
                .iter()
                .zip(&a)
                .map(|(&t, &ai)| (ai * t as f64) as f32)
                .collect();
            let g = ParamVector::new(g, layout.clone()).unwrap();
            st.step(&mut p, &g, None).unwrap();
        }

        let t64: Vec<f64> = theta0.iter().map(|&v| v as f64).collect();
        let want = reference_adam(&t64, &a, 0.01, 10);
        for (got, want) in p.values.iter().zip(&want) {
            assert!(
                (*got as f64 - want).abs() < 1e-6,
                "got {got}, want {want}"
            );
        }
    }

    #[test]
    fn so_diag_with_exact_curvature_is_a_newton_step() {
        // L = 0.5 h theta^2, exact h, gamma=1 (per-sample, batch 1), eta=1
        let mut p = scalar_params(0.8);
        let layout = p.layout.clone();
        let mut spec = OptimizerSpec::so_diag(1.0);
        spec.so_gamma = 1.0;
        let mut st = OptimizerState::new(spec, layout.clone(), 1).unwrap();
        let h_val = 2.5f32;
        let g = ParamVector::new(vec![h_val * 0.8, 0.0], layout.clone()).unwrap();
        let h = ParamVector::new(vec![h_val, 0.0], layout).unwrap();
        st.step(&mut p, &g, Some(&h)).unwrap();
        assert!(
            p.values[0].abs() < 1e-6,
            "newton step should reach 0, got {}",
            p.values[0]
        );
    }

    #[test]
    fn so_diag_with_zero_curvature_saturates_the_clip() {
        let mut p = scalar_params(5.0);
        let layout = p.layout.clone();
        let mut st = OptimizerState::new(OptimizerSpec::so_diag(0.05), layout.clone(), 1).unwrap();
        let g = ParamVector::new(vec![3.0, 0.0], layout.clone()).unwrap();
        let h = ParamVector::zeros_like(&p);
        st.step(&mut p, &g, Some(&h)).unwrap();
        let disp = (5.0 - p.values[0]) as f64;
        assert!((disp - 0.05).abs() < 1e-5, "clip should cap at lr, got {disp}");
    }

    // independent 64-bit restatement of the clipped diagonal-Newton rule
    fn reference_so(theta0: &[f64], a: &[f64], lr: f64, gamma: f64, steps: usize) -> Vec<f64> {
        let (b1, rho, eps) = (0.9, 0.99, 1e-12);
        let mut th = theta0.to_vec();
        let mut m = vec![0.0; th.len()];
        let mut h = vec![0.0; th.len()];
        let mut h_count = 0u32;
        for t in 1..=steps {
            // refresh cadence 10: fresh estimate on steps 1, 11, ... (0-based 0, 10, ...)
            if (t - 1) % 10 == 0 {
                for i in 0..th.len() {
                    h[i] = rho * h[i] + (1.0 - rho) * a[i].max(0.0);
                }
                h_count += 1;
            }
            let ch = 1.0 - rho.powi(h_count as i32);
            for i in 0..th.len() {
                let g = a[i] * th[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                let mh = m[i] / (1.0 - b1.powi(t as i32));
                let hh = if h_count > 0 { h[i] / ch } else { 0.0 };
                th[i] -= lr * (mh / (gamma * hh).max(eps)).clamp(-1.0, 1.0);
            }
        }
        th
    }

    #[test]
    fn so_diag_trajectory_matches_f64_reference() {
        let arch = MlpArch::new(vec![2, 2], Activation::Relu).unwrap();
        let layout = arch.layout();
        let mut rng = SplitMix64::new(12);
        let theta0: Vec<f32> = (0..layout.total_len)
            .map(|_| rng.uniform(0.2, 0.8) as f32)
            .collect();
        let a: Vec<f64> = (0..layout.total_len).map(|_| rng.uniform(0.5, 2.0)).collect();

        let mut spec = OptimizerSpec::so_diag(0.02);
        spec.so_gamma = 0.5;
        let mut p = ParamVector::new(theta0.clone(), layout.clone()).unwrap();
        let mut st = OptimizerState::new(spec, layout.clone(), 1).unwrap();
        for _ in 0..15 {
            let g: Vec<f32> = p
                .values
                .iter()
                .zip(&a)
                .map(|(&t, &ai)| (ai * t as f64) as f32)
                .collect();
            let g = ParamVector::new(g, layout.clone()).unwrap();
            let curv = if st.wants_curvature() {
                let c: Vec<f32> = a.iter().map(|&x| x as f32).collect();
                Some(ParamVector::new(c, layout.clone()).unwrap())
            } else {
                None
            };
            st.step(&mut p, &g, curv.as_ref()).unwrap();
        }

        let t64: Vec<f64> = theta0.iter().map(|&v| v as f64).collect();
        let want = reference_so(&t64, &a, 0.02, 0.5, 15);
        for (got, want) in p.values.iter().zip(&want) {
            assert!((*got as f64 - want).abs() < 1e-6, "got {got}, want {want}");
        }
    }

    #[test]
    fn masked_step_freezes_unmasked_coordinates_bit_exact() {
        let arch = MlpArch::new(vec![3, 2], Activation::Relu).unwrap();
        let layout = arch.layout();
        let mut p = ParamVector::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], layout.clone()).unwrap();
        let before = p.values.clone();
        let g = ParamVector::new(vec![1.0; 8], layout.clone()).unwrap();
        let mask = vec![true, false, true, false, true, false, true, false];
        let mut st = OptimizerState::new(OptimizerSpec::adam(0.01), layout, 1).unwrap();
        st.step_masked(&mut p, &g, None, Some(&mask)).unwrap();
        for i in 0..8 {
            if mask[i] {
                assert_ne!(p.values[i], before[i]);
            } else {
                assert_eq!(p.values[i].to_bits(), before[i].to_bits());
            }
        }
    }

    #[test]
    fn hutchinson_on_diagonal_quadratic_is_exact_with_one_probe() {
        // L = 0.5 sum a_i theta_i^2 -> diag estimate is a exactly (z^2 = 1)
        let arch = MlpArch::new(vec![3, 2], Activation::Relu).unwrap();
        let layout = arch.layout();
        let a: Vec<f32> = vec![0.5, 1.5, 2.0, 0.25, 3.0, 0.75, 1.0, 1.25];
        let theta: Vec<f32> = vec![0.3; 8];
        let est = estimate_hessian_diag_with(&layout, 1, 9, |g| {
            let w = g.param(Tensor::matrix(3, 2, theta[..6].to_vec()));
            let b = g.param(Tensor::matrix(1, 2, theta[6..].to_vec()));
            let aw = g.constant(Tensor::matrix(3, 2, a[..6].to_vec()));
            let ab = g.constant(Tensor::matrix(1, 2, a[6..].to_vec()));
            let w2 = g.mul(w, w);
            let b2 = g.mul(b, b);
            let qw = g.mul(aw, w2);
            let qb = g.mul(ab, b2);
            let sw = g.sum_all(qw);
            let sb = g.sum_all(qb);
            let s = g.add(sw, sb);
            Ok((vec![vec![w, b]], g.scale(s, 0.5)))
        })
        .unwrap();
        for i in 0..8 {
            assert_eq!(est.values[i], a[i], "coordinate {i}");
        }
    }

    #[test]
    fn hutchinson_on_linear_objective_is_zero() {
        let arch = MlpArch::new(vec![3, 2], Activation::Relu).unwrap();
        let layout = arch.layout();
        let est = estimate_hessian_diag_with(&layout, 4, 3, |g| {
            let w = g.param(Tensor::matrix(3, 2, vec![0.4; 6]));
            let b = g.param(Tensor::matrix(1, 2, vec![0.1; 2]));
            let cw = g.constant(Tensor::matrix(3, 2, vec![1.0; 6]));
            let cb = g.constant(Tensor::matrix(1, 2, vec![2.0; 2]));
            let dw = g.dot(w, cw);
            let db = g.dot(b, cb);
            Ok((vec![vec![w, b]], g.add(dw, db)))
        })
        .unwrap();
        assert!(est.values.iter().all(|&v| v == 0.0));
    }

    // finite-difference diagonal of the batch cross-entropy, clamped like
    // the estimator
    fn fd_diagonal(
        arch: &MlpArch,
        model: &crate::nn::MlpModel,
        x: &Tensor,
        labels: &[usize],
    ) -> Vec<f64> {
        use crate::nn::per_sample_xent;
        let eval = |params: &[f32]| -> f64 {
            let p = ParamVector::new(params.to_vec(), model.params.layout.clone()).unwrap();
            let logits = crate::nn::forward_logits_with(arch, &p, x).unwrap();
            per_sample_xent(&logits, labels).unwrap().iter().sum::<f64>() / labels.len() as f64
        };
        let h = 1e-2f32;
        let base = eval(&model.params.values);
        (0..model.params.len())
            .map(|i| {
                let mut pp = model.params.values.clone();
                let mut pm = model.params.values.clone();
                pp[i] += h;
                pm[i] -= h;
                ((eval(&pp) - 2.0 * base + eval(&pm)) / (h as f64 * h as f64)).max(0.0)
            })
            .collect()
    }

    fn l2_relative(est: &[f32], fd: &[f64]) -> f64 {
        let num: f64 = est
            .iter()
            .zip(fd)
            .map(|(&e, &f)| (e as f64 - f).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn hutchinson_tracks_finite_difference_diagonal() {
        use crate::nn::MlpModel;
        let arch = MlpArch::new(vec![4, 3], Activation::Tanh).unwrap();
        let model = MlpModel::init_seeded(arch.clone(), 9);
        let mut rng = SplitMix64::new(64);
        let n = 24;
        let data: Vec<f32> = (0..n * 4).map(|_| rng.uniform(-1.2, 1.2) as f32).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let x = Tensor::matrix(n, 4, data);

        let fd = fd_diagonal(&arch, &model, &x, &labels);
        let est = estimate_hessian_diag(&model, &x, &labels, 64, 5).unwrap();
        let err = l2_relative(&est.values, &fd);
        assert!(err <= 0.10, "64-probe estimate off by {err:.4} (relative)");
    }

    #[test]
    fn hutchinson_error_shrinks_with_probes_on_a_hidden_layer_mlp() {
        use crate::nn::MlpModel;
        let arch = MlpArch::new(vec![2, 4, 2], Activation::Tanh).unwrap();
        let model = MlpModel::init_seeded(arch.clone(), 6);
        let x = Tensor::matrix(6, 2, vec![
            0.8, -0.3, -1.1, 0.9, 0.2, 0.4, 1.5, -0.7, -0.4, -1.2, 0.6, 1.1,
        ]);
        let labels = vec![0, 1, 0, 1, 1, 0];
        let fd = fd_diagonal(&arch, &model, &x, &labels);
        let coarse = estimate_hessian_diag(&model, &x, &labels, 64, 42).unwrap();
        let fine = estimate_hessian_diag(&model, &x, &labels, 1024, 42).unwrap();
        let err_coarse = l2_relative(&coarse.values, &fd);
        let err_fine = l2_relative(&fine.values, &fd);
        assert!(
            err_fine < err_coarse,
            "more probes should reduce error: {err_coarse:.4} -> {err_fine:.4}"
        );
        assert!(err_fine <= 0.20, "1024-probe estimate off by {err_fine:.4}");
    }

    #[test]
    fn hutchinson_output_is_nonnegative() {
        let arch = MlpArch::new(vec![2, 3, 2], Activation::Relu).unwrap();
        let model = crate::nn::MlpModel::init_seeded(arch, 15);
        let x = Tensor::matrix(4, 2, vec![0.5, -0.5, 1.0, 0.3, -0.2, 0.8, 0.1, -1.0]);
        let est = estimate_hessian_diag(&model, &x, &[0, 1, 0, 1], 8, 5).unwrap();
        assert!(est.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn curriculum_sorts_stably() {
        assert_eq!(
            curriculum_order(&[0.5, 0.1, 0.9], CurriculumDirection::Ascending).unwrap(),
            vec![1, 0, 2]
        );
        assert_eq!(
            curriculum_order(&[0.3, 0.3, 0.3], CurriculumDirection::Ascending).unwrap(),
            vec![0, 1, 2]
        );
        let asc = curriculum_order(&[0.5, 0.1, 0.9, 0.7], CurriculumDirection::Ascending).unwrap();
        let mut desc =
            curriculum_order(&[0.5, 0.1, 0.9, 0.7], CurriculumDirection::Descending).unwrap();
        desc.reverse();
        assert_eq!(asc, desc);
        assert!(curriculum_order(&[0.1, f64::NAN], CurriculumDirection::Ascending).is_err());
    }

    #[test]
    fn curriculum_output_is_a_permutation() {
        let mut rng = SplitMix64::new(8);
        for _ in 0..20 {
            let losses: Vec<f64> = (0..50).map(|_| rng.uniform(0.0, 1.0)).collect();
            let order = curriculum_order(&losses, CurriculumDirection::Descending).unwrap();
            let mut seen = vec![false; 50];
            for &i in &order {
                assert!(!seen[i]);
                seen[i] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }
}
