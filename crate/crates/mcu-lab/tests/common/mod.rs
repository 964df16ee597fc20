//! Independent oracles shared by the integration suites. Everything here is
//! straight-line 64-bit code with no dependence on the library's autodiff or
//! statistics paths.

use mcu_lab::nn::{Activation, MlpArch};

/// Plain f64 forward pass written directly from the layer equations.
pub fn oracle_forward(arch: &MlpArch, params: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let n_layers = arch.layer_dims.len() - 1;
    let mut h = x.to_vec();
    let mut h_cols = arch.layer_dims[0];
    let mut off = 0usize;
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
                *v = match arch.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                };
            }
        }
        h = z;
        h_cols = fo;
    }
    h
}

/// Naive f64 mean cross-entropy over logits.
pub fn oracle_xent(logits: &[f64], cols: usize, labels: &[usize]) -> f64 {
    let rows = labels.len();
    let mut acc = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * cols..(i + 1) * cols];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        acc += mx + z.ln() - row[y];
    }
    acc / rows as f64
}

/// Central finite difference of the batch loss along one parameter.
pub fn fd_gradient_coord(
    arch: &MlpArch,
    params: &[f64],
    x: &[f64],
    rows: usize,
    labels: &[usize],
    coord: usize,
    h: f64,
) -> f64 {
    let classes = *arch.layer_dims.last().unwrap();
    let mut plus = params.to_vec();
    let mut minus = params.to_vec();
    plus[coord] += h;
    minus[coord] -= h;
    let lp = oracle_xent(&oracle_forward(arch, &plus, x, rows), classes, labels);
    let lm = oracle_xent(&oracle_forward(arch, &minus, x, rows), classes, labels);
    (lp - lm) / (2.0 * h)
}

/// Brute-force two-sample KS statistic: scan every candidate threshold.
pub fn brute_force_ks_d(a: &[f64], b: &[f64]) -> f64 {
    let mut vals: Vec<f64> = a.iter().chain(b).copied().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut d = 0.0f64;
    for &v in &vals {
        let fa = a.iter().filter(|&&x| x <= v).count() as f64 / a.len() as f64;
        let fb = b.iter().filter(|&&x| x <= v).count() as f64 / b.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

/// 200-term asymptotic Kolmogorov series at the Numerical-Recipes lambda.
pub fn series_ks_p(d: f64, n: usize, m: usize) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut sum = 0.0;
    for k in 1..=200 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Minimal structural XML well-formedness check (tag stack).
pub fn assert_well_formed_xml(xml: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = xml;
    while let Some(start) = rest.find('<') {
        let end = rest[start..].find('>').expect("unclosed angle bracket") + start;
        let tag = &rest[start + 1..end];
        rest = &rest[end + 1..];
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched close");
        } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
            stack.push(tag.split_whitespace().next().unwrap().to_string());
        }
    }
    assert!(stack.is_empty(), "unclosed tags: {stack:?}");
}
