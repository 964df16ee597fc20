//! Evaluation along a curve: classification metrics, ZRF, KS-test forget
//! quality, and the dual barrier/cliff verdict.
//!
//! A retain barrier is a rise of retain loss above the linear interpolant of
//! the endpoint losses; a forget cliff is a drop of forget loss below it.
//! The verdict holds when both stay within the tolerance over the grid.

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::nn::{self, forward_logits_with, MlpArch, ParamVector};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// KS p-values at or above this count as acceptable forget quality.
pub const FORGET_QUALITY_THRESHOLD: f64 = 0.05;

/// Per-t snapshot of every evaluation metric.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricRecord {
    pub t: f64,
    pub loss_retain: f64,
    pub loss_forget: f64,
    pub acc_test: f64,
    pub acc_forget: f64,
    pub acc_retain: f64,
    pub zrf: f64,
    pub forget_quality: f64,
}

/// Which per-sample statistic feeds the forget-quality KS test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForgetStatistic {
    Xent,
    TrueClassProb,
}

impl ForgetStatistic {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "xent" => Ok(ForgetStatistic::Xent),
            "true_class_prob" => Ok(ForgetStatistic::TrueClassProb),
            other => Err(Error::Config(format!(
                "unknown forget statistic {other:?} (xent, true_class_prob)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ForgetStatistic::Xent => "xent",
            ForgetStatistic::TrueClassProb => "true_class_prob",
        }
    }
}

/// Quantified barrier/cliff heights and the verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarrierReport {
    pub retain_barrier_height: f64,
    pub forget_cliff_depth: f64,
    pub tolerance: f64,
    pub mcu_holds: bool,
    pub argmax_t_retain: f64,
    pub argmax_t_forget: f64,
}

fn per_sample_statistic(
    arch: &MlpArch,
    params: &ParamVector,
    ds: &SplitDataset,
    idx: &[usize],
    statistic: ForgetStatistic,
) -> Result<Vec<f64>> {
    let (x, y) = ds.batch_unlogged(idx);
    let logits = forward_logits_with(arch, params, &x)?;
    let xent = nn::per_sample_xent(&logits, &y)?;
    Ok(match statistic {
        ForgetStatistic::Xent => xent,
        ForgetStatistic::TrueClassProb => xent.iter().map(|&l| (-l).exp()).collect(),
    })
}

/// All MetricRecord fields for one parameter point.
///
/// `zrf_reference` supplies the logits-comparison model for ZRF (a fresh
/// random model by default; the original model under the alternate
/// convention). `retrained` is the retrain-oracle parameter vector.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_point(
    arch: &MlpArch,
    params: &ParamVector,
    ds: &SplitDataset,
    zrf_reference: &ParamVector,
    retrained: &ParamVector,
    t: f64,
    statistic: ForgetStatistic,
) -> Result<MetricRecord> {
    for (name, idx) in [
        ("retain", &ds.retain_idx),
        ("forget", &ds.forget_idx),
        ("test", &ds.test_idx),
    ] {
        if idx.is_empty() {
            return Err(Error::Config(format!("empty {name} split in evaluation")));
        }
    }

    let (xr, yr) = ds.batch_unlogged(&ds.retain_idx);
    let (xf, yf) = ds.batch_unlogged(&ds.forget_idx);
    let (xt, yt) = ds.batch_unlogged(&ds.test_idx);

    let logits_r = forward_logits_with(arch, params, &xr)?;
    let logits_f = forward_logits_with(arch, params, &xf)?;
    let logits_t = forward_logits_with(arch, params, &xt)?;

    let loss_retain = nn::per_sample_xent(&logits_r, &yr)?.iter().sum::<f64>()
        / ds.retain_idx.len() as f64;
    let forget_losses = nn::per_sample_xent(&logits_f, &yf)?;
    let loss_forget = forget_losses.iter().sum::<f64>() / forget_losses.len() as f64;

    let dumb_logits_f = forward_logits_with(arch, zrf_reference, &xf)?;
    let zrf = zrf_score(&logits_f, &dumb_logits_f)?;

    let mine = per_sample_statistic(arch, params, ds, &ds.forget_idx, statistic)?;
    let theirs = per_sample_statistic(arch, retrained, ds, &ds.forget_idx, statistic)?;
    let (_, forget_quality) = ks_two_sample(&mine, &theirs)?;

    Ok(MetricRecord {
        t,
        loss_retain,
        loss_forget,
        acc_test: nn::accuracy(&logits_t, &yt)?,
        acc_forget: nn::accuracy(&logits_f, &yf)?,
        acc_retain: nn::accuracy(&logits_r, &yr)?,
        zrf,
        forget_quality,
    })
}

/// Jensen-Shannon divergence with base-2 logs (bounded in `[0,1]`) between
/// two probability rows.
fn js2(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (&pi, &qi) in p.iter().zip(q) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            acc += 0.5 * pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            acc += 0.5 * qi * (qi / mi).log2();
        }
    }
    acc
}

/// Zero-Retrain Forgetting score: `1 - mean_rows JS₂(softmax(a), softmax(b))`.
pub fn zrf_score(model_logits: &Tensor, reference_logits: &Tensor) -> Result<f64> {
    if model_logits.shape != reference_logits.shape {
        return Err(Error::dim_in(
            "zrf_score",
            format!("{:?}", model_logits.shape),
            format!("{:?}", reference_logits.shape),
        ));
    }
    let p = nn::softmax_rows(model_logits);
    let q = nn::softmax_rows(reference_logits);
    let mean_js = p
        .iter()
        .zip(&q)
        .map(|(pi, qi)| js2(pi, qi))
        .sum::<f64>()
        / p.len() as f64;
    Ok(1.0 - mean_js)
}

/// Two-sample Kolmogorov-Smirnov test.
///
/// `D` is the maximum absolute difference of the empirical CDFs; the p-value
/// uses the asymptotic Kolmogorov distribution
/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2k²λ²}` at
/// `λ = (√(nm/(n+m)) + 0.12 + 0.11/√(nm/(n+m))) · D`, clamped to `[0,1]`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("ks_two_sample on empty samples".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (sa.len(), sb.len());

    let mut d = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n || j < m {
        // advance past ties on both sides before comparing the CDFs
        let v = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < n && sa[i] <= v {
            i += 1;
        }
        while j < m && sb[j] <= v {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        if diff > d {
            d = diff;
        }
    }

    Ok((d, ks_p_value(d, n, m)))
}

fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    kolmogorov_q(lambda).clamp(0.0, 1.0)
}

/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2k²λ²}`; returns 1 when the series has
/// not converged within 200 terms (the λ→0 regime).
fn kolmogorov_q(lambda: f64) -> f64 {
    let x = -2.0 * lambda * lambda;
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for k in 1..=200 {
        let term = sign * (x * (k * k) as f64).exp();
        sum += term;
        if term.abs() < 1e-18 {
            return 2.0 * sum;
        }
        sign = -sign;
    }
    1.0
}

/// Forget quality: KS p-value between the per-sample forget-set statistics
/// of the unlearned and the retrained model.
pub fn forget_quality(
    unlearned: &ParamVector,
    retrained: &ParamVector,
    arch: &MlpArch,
    ds: &SplitDataset,
    statistic: ForgetStatistic,
) -> Result<f64> {
    if ds.forget_idx.is_empty() {
        return Err(Error::Config("forget_quality needs a forget set".into()));
    }
    let mine = per_sample_statistic(arch, unlearned, ds, &ds.forget_idx, statistic)?;
    let theirs = per_sample_statistic(arch, retrained, ds, &ds.forget_idx, statistic)?;
    Ok(ks_two_sample(&mine, &theirs)?.1)
}

fn check_profile(records: &[MetricRecord]) -> Result<()> {
    if records.len() < 2 {
        return Err(Error::Contract(
            "barrier profile needs at least the two endpoints".into(),
        ));
    }
    for w in records.windows(2) {
        if w[1].t <= w[0].t {
            return Err(Error::Contract(format!(
                "records must be strictly sorted by t: {} then {}",
                w[0].t, w[1].t
            )));
        }
    }
    if records[0].t != 0.0 || records[records.len() - 1].t != 1.0 {
        return Err(Error::Contract(
            "profile must include both endpoints (t=0 and t=1)".into(),
        ));
    }
    Ok(())
}

fn max_excess(
    records: &[MetricRecord],
    end0: f64,
    end1: f64,
    value: impl Fn(&MetricRecord) -> f64,
    signed_up: bool,
) -> (f64, f64) {
    let mut best = f64::NEG_INFINITY;
    let mut best_t = 0.0;
    for r in records {
        let interp = (1.0 - r.t) * end0 + r.t * end1;
        let excess = if signed_up {
            value(r) - interp
        } else {
            interp - value(r)
        };
        if excess > best {
            best = excess;
            best_t = r.t;
        }
    }
    (best, best_t)
}

/// Dual barrier computation: retain-loss rise above the endpoint interpolant
/// and forget-loss drop below it, with the verdict at tolerance `tau`.
pub fn barrier_profile(
    records: &[MetricRecord],
    endpoints: (&MetricRecord, &MetricRecord),
    tau: f64,
) -> Result<BarrierReport> {
    check_profile(records)?;
    let (e0, e1) = endpoints;
    let (retain_barrier_height, argmax_t_retain) =
        max_excess(records, e0.loss_retain, e1.loss_retain, |r| r.loss_retain, true);
    let (forget_cliff_depth, argmax_t_forget) =
        max_excess(records, e0.loss_forget, e1.loss_forget, |r| r.loss_forget, false);
    Ok(BarrierReport {
        retain_barrier_height,
        forget_cliff_depth,
        tolerance: tau,
        mcu_holds: retain_barrier_height <= tau && forget_cliff_depth <= tau,
        argmax_t_retain,
        argmax_t_forget,
    })
}

/// Classical single-dataset barrier height (the retain-side computation
/// alone), for comparison with standard mode connectivity.
pub fn mc_barrier_standard(
    records: &[MetricRecord],
    endpoints: (&MetricRecord, &MetricRecord),
) -> Result<f64> {
    check_profile(records)?;
    let (e0, e1) = endpoints;
    Ok(max_excess(records, e0.loss_retain, e1.loss_retain, |r| r.loss_retain, true).0)
}
