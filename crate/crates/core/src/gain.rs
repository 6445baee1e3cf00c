//! Receiver gain estimation from observed CSI.
//!
//! Two baselines (per-frame norm power and absolute-level clustering),
//! the incremental-cluster estimator that tracks AGC steps through the
//! power increments, and the uniform-grid maximum-likelihood estimator
//! that models the AGC gain as integer multiples of an unknown step λ
//! and selects λ by a wrapped-variance / distortion objective.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{CsiBatch, CsiKind, GainEstimate, GainMethod};

/// Per-frame power trace in dB and its increments.
///
/// `gamma_tilde_db[p] = 10 log10(mean_k |h~[p][k]|²)` and
/// `delta_db[p] = gamma_tilde_db[p] - gamma_tilde_db[p-1]` with the
/// convention that the increment at frame 0 is zero.
#[derive(Debug, Clone)]
pub struct PowerTrace {
    pub gamma_tilde_db: Vec<f64>,
    pub delta_db: Vec<f64>,
}

/// Outcome of one AGC step-size hypothesis in the uniform-grid search.
#[derive(Debug, Clone)]
pub struct WrappedFit {
    /// Unit phasors `exp(j 2π Γ~_p / λ)`.
    pub xi: Vec<Complex64>,
    /// Wrapped-Gaussian spread estimate of the residual, dB.
    pub sigma_hat_db: f64,
    /// Distortion term `λ² D(λ / σ̂)`.
    pub distortion: f64,
    /// Selection objective `σ̂² + λ² D(λ / σ̂)`; infinite when the
    /// hypothesis is gated out.
    pub objective: f64,
    pub lambda: f64,
}

/// Full evaluation of one λ hypothesis.
#[derive(Debug, Clone)]
pub struct LambdaHypothesis {
    pub fit: WrappedFit,
    pub g1_db: Vec<f64>,
    pub g2_db: Vec<f64>,
    pub gamma_hat_db: Vec<f64>,
    pub feasible: bool,
}

/// Options for the uniform-grid estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformMlOptions {
    /// Keep the −λ/2 offset of the printed AGC quantizer instead of the
    /// zero-centered rounding form. For comparison runs only: the offset
    /// residual is incompatible with the feasibility gate.
    pub paper_literal_eq14: bool,
}

/// Compute the dB power trace of an observed batch.
pub fn power_trace(batch: &CsiBatch) -> Result<PowerTrace> {
    if batch.kind != CsiKind::Observed {
        return Err(Error::WrongKind {
            expected: "observed",
            found: batch.kind.name(),
        });
    }
    let mut gamma_tilde_db = Vec::with_capacity(batch.frames());
    for p in 0..batch.frames() {
        let pow = batch.frame_mean_power(p);
        if pow <= 0.0 {
            return Err(Error::AllZeroFrame { frame: p });
        }
        gamma_tilde_db.push(10.0 * pow.log10());
    }
    let mut delta_db = vec![0.0; gamma_tilde_db.len()];
    for p in 1..gamma_tilde_db.len() {
        delta_db[p] = gamma_tilde_db[p] - gamma_tilde_db[p - 1];
    }
    Ok(PowerTrace {
        gamma_tilde_db,
        delta_db,
    })
}

/// Centered moving average with one-sided width `w`, truncated at the
/// edges.
pub fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    for p in 0..n {
        let lo = p.saturating_sub(w);
        let hi = (p + w + 1).min(n);
        let sum: f64 = x[lo..hi].iter().sum();
        out.push(sum / (hi - lo) as f64);
    }
    out
}

fn moving_average_complex(x: &[Complex64], w: usize) -> Vec<Complex64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    for p in 0..n {
        let lo = p.saturating_sub(w);
        let hi = (p + w + 1).min(n);
        let sum: Complex64 = x[lo..hi].iter().sum();
        out.push(sum / (hi - lo) as f64);
    }
    out
}

/// One-sided sample width of the 0.1 Hz moving-average low-pass filter.
pub fn lpf_half_width(t_rep: f64) -> usize {
    (6.0 / t_rep).round() as usize
}

/// One-dimensional DBSCAN. Returns per-point cluster labels in input
/// order; `None` marks noise (only possible for `min_points > 1`).
///
/// With `min_points = 1` the clusters are exactly the connected
/// components of the ε-chain graph, computed by sorting and splitting at
/// gaps larger than `eps`. For larger `min_points` a point is core when
/// at least `min_points` points (itself included) lie within ±ε;
/// clusters are chains of core points with consecutive gaps ≤ ε, and a
/// border point joins the cluster of its nearest core within ε (lower
/// cluster id on ties).
pub fn dbscan_1d(points: &[f64], eps: f64, min_points: usize) -> Result<Vec<Option<usize>>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("dbscan points"));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParams(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| points[i]).collect();

    let mut labels = vec![None; n];
    if min_points <= 1 {
        let mut cluster = 0usize;
        for (si, &orig) in order.iter().enumerate() {
            if si > 0 && sorted[si] - sorted[si - 1] > eps {
                cluster += 1;
            }
            labels[orig] = Some(cluster);
        }
        return Ok(labels);
    }

    // neighbor counts within ±eps (self included), two pointers
    let mut core = vec![false; n];
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        while sorted[i] - sorted[lo] > eps {
            lo += 1;
        }
        if hi < i {
            hi = i;
        }
        while hi + 1 < n && sorted[hi + 1] - sorted[i] <= eps {
            hi += 1;
        }
        core[i] = hi - lo + 1 >= min_points;
    }
    // chain core points
    let mut sorted_labels: Vec<Option<usize>> = vec![None; n];
    let mut cluster = usize::MAX;
    let mut prev_core: Option<usize> = None;
    for i in 0..n {
        if core[i] {
            match prev_core {
                Some(j) if sorted[i] - sorted[j] <= eps => {}
                _ => cluster = cluster.wrapping_add(1),
            }
            sorted_labels[i] = Some(cluster);
            prev_core = Some(i);
        }
    }
    // attach border points to the nearest core within eps
    for i in 0..n {
        if core[i] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for j in (0..i).rev() {
            if sorted[i] - sorted[j] > eps {
                break;
            }
            if core[j] {
                best = Some((sorted[i] - sorted[j], sorted_labels[j].unwrap()));
                break;
            }
        }
        for j in i + 1..n {
            if sorted[j] - sorted[i] > eps {
                break;
            }
            if core[j] {
                let d = sorted[j] - sorted[i];
                let lab = sorted_labels[j].unwrap();
                best = match best {
                    Some((bd, bl)) if bd < d || (bd == d && bl <= lab) => Some((bd, bl)),
                    _ => Some((d, lab)),
                };
                break;
            }
        }
        if let Some((_, lab)) = best {
            sorted_labels[i] = Some(lab);
        }
    }
    for (si, &orig) in order.iter().enumerate() {
        labels[orig] = sorted_labels[si];
    }
    Ok(labels)
}

/// Baseline: assume every power variation is gain, i.e.
/// `ĝ_p = sqrt(mean_k |h~[p][k]|²)`.
pub fn gain_norm_power(batch: &CsiBatch) -> Result<GainEstimate> {
    let trace = power_trace(batch)?;
    let g_lin: Vec<f64> = trace
        .gamma_tilde_db
        .iter()
        .map(|db| 10f64.powf(db / 20.0))
        .collect();
    Ok(GainEstimate {
        g_lin,
        g1_db: trace.gamma_tilde_db,
        g2_db: vec![0.0; batch.frames()],
        lambda_hat: None,
        method: GainMethod::Norm,
    })
}

fn cluster_means(values: &[f64], labels: &[Option<usize>]) -> Vec<f64> {
    let k = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0usize; k];
    for (&v, lab) in values.iter().zip(labels) {
        if let Some(l) = lab {
            sum[*l] += v;
            cnt[*l] += 1;
        }
    }
    sum.iter()
        .zip(&cnt)
        .map(|(s, &c)| s / c.max(1) as f64)
        .collect()
}

/// Baseline: cluster the absolute power levels (ε = 0.15, min-points 1)
/// and use each cluster's mean as the gain in dB.
pub fn gain_cluster_abs(batch: &CsiBatch) -> Result<GainEstimate> {
    let trace = power_trace(batch)?;
    let labels = dbscan_1d(&trace.gamma_tilde_db, 0.15, 1)?;
    let means = cluster_means(&trace.gamma_tilde_db, &labels);
    let g2_db: Vec<f64> = labels.iter().map(|l| means[l.unwrap()]).collect();
    let g_lin = g2_db.iter().map(|db| 10f64.powf(db / 20.0)).collect();
    Ok(GainEstimate {
        g_lin,
        g1_db: vec![0.0; batch.frames()],
        g2_db,
        lambda_hat: None,
        method: GainMethod::ClusterAbs,
    })
}

/// Incremental-cluster estimator: cluster the power increments
/// (ε = 0.2, min-points 1), accumulate per-cluster mean increments into
/// the AGC track, and low-pass filter the remainder into the
/// large-scale track.
pub fn gain_cluster_incremental(batch: &CsiBatch) -> Result<GainEstimate> {
    let p_count = batch.frames();
    if p_count < 2 {
        return Err(Error::InvalidParams(format!(
            "incremental clustering needs at least 2 frames, got {p_count}"
        )));
    }
    let trace = power_trace(batch)?;
    let increments = &trace.delta_db[1..];
    let labels = dbscan_1d(increments, 0.2, 1)?;
    let means = cluster_means(increments, &labels);

    let mut g2_db = Vec::with_capacity(p_count);
    g2_db.push(0.0); // frame 0 increment is zero by convention
    for p in 1..p_count {
        let step = means[labels[p - 1].unwrap()];
        g2_db.push(g2_db[p - 1] + step);
    }
    let residual: Vec<f64> = trace
        .gamma_tilde_db
        .iter()
        .zip(&g2_db)
        .map(|(g, a)| g - a)
        .collect();
    let g1_db = moving_average(&residual, lpf_half_width(batch.params.t_rep));
    let g_lin = g1_db
        .iter()
        .zip(&g2_db)
        .map(|(g1, g2)| 10f64.powf((g1 + g2) / 20.0))
        .collect();
    Ok(GainEstimate {
        g_lin,
        g1_db,
        g2_db,
        lambda_hat: None,
        method: GainMethod::ClusterInc,
    })
}

/// Sequential phase unwrap: add multiples of 2π so consecutive
/// differences stay within ±π.
pub fn unwrap_phases(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut prev = 0.0;
    for (i, &a) in angles.iter().enumerate() {
        let u = if i == 0 {
            a
        } else {
            a + 2.0 * PI * ((prev - a) / (2.0 * PI)).round()
        };
        out.push(u);
        prev = u;
    }
    out
}

/// Estimate the large-scale gain under a step-size hypothesis:
/// low-pass the power phasors, unwrap their angle, scale back to dB.
pub fn estimate_g1_uniform(xi: &[Complex64], lambda: f64, t_rep: f64) -> Result<Vec<f64>> {
    let smoothed = moving_average_complex(xi, lpf_half_width(t_rep));
    for (p, s) in smoothed.iter().enumerate() {
        if s.norm() < 1e-9 {
            return Err(Error::Estimation {
                method: "estimate_g1_uniform",
                frame: p,
                reason: "smoothed power phasor vanished; angle undefined".into(),
            });
        }
    }
    let angles: Vec<f64> = smoothed.iter().map(|c| c.arg()).collect();
    Ok(unwrap_phases(&angles)
        .into_iter()
        .map(|u| u * lambda / (2.0 * PI))
        .collect())
}

/// ML quantization of the AGC gain for a known step size:
/// `ĝ2_p = λ round(x_p / λ)` with `x_p = Γ~_p − ĝ1_p`, residual
/// `Γ̂_p = x_p − ĝ2_p ∈ [−λ/2, λ/2)`.
pub fn agc_ml_uniform(
    gamma_tilde_db: &[f64],
    g1_hat_db: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    agc_ml_uniform_impl(gamma_tilde_db, g1_hat_db, lambda, false)
}

fn agc_ml_uniform_impl(
    gamma_tilde_db: &[f64],
    g1_hat_db: &[f64],
    lambda: f64,
    paper_literal: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParams(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if gamma_tilde_db.len() != g1_hat_db.len() {
        return Err(Error::LengthMismatch {
            what: "g1 estimate",
            expected: gamma_tilde_db.len(),
            found: g1_hat_db.len(),
        });
    }
    let mut g2 = Vec::with_capacity(gamma_tilde_db.len());
    let mut gamma_hat = Vec::with_capacity(gamma_tilde_db.len());
    for (&gt, &g1) in gamma_tilde_db.iter().zip(g1_hat_db) {
        let x = gt - g1;
        let q = if paper_literal {
            lambda * ((x / lambda + 0.5).floor() - 0.5)
        } else {
            lambda * (x / lambda).round()
        };
        g2.push(q);
        gamma_hat.push(x - q);
    }
    Ok((g2, gamma_hat))
}

/// Estimate the spread of a wrapped-Gaussian residual from its circular
/// mean: `σ̂² = −(λ²/2π²) log |mean_p exp(j 2π Γ̂_p / λ)|`. Returns the
/// spread in dB; +∞ when the circular mean magnitude collapses.
pub fn wrapped_sigma_estimate(gamma_hat_db: &[f64], lambda: f64) -> f64 {
    let n = gamma_hat_db.len() as f64;
    let mean: Complex64 = gamma_hat_db
        .iter()
        .map(|&g| Complex64::from_polar(1.0, 2.0 * PI * g / lambda))
        .sum::<Complex64>()
        / n;
    let mag = mean.norm();
    if mag <= 1e-12 {
        return f64::INFINITY;
    }
    let var = -(lambda * lambda) / (2.0 * PI * PI) * mag.ln();
    var.max(0.0).sqrt()
}

/// Standard Gaussian tail probability.
pub fn q_function(t: f64) -> f64 {
    0.5 * libm::erfc(t / std::f64::consts::SQRT_2)
}

/// Quantization distortion sum
/// `D(x) = Σ_z [Q((z−½)x) − Q((z+½)x)] z²`, truncated once the terms
/// fall below 1e-15.
pub fn distortion(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidParams(format!(
            "distortion argument must be positive, got {x}"
        )));
    }
    if !x.is_finite() {
        return Ok(0.0);
    }
    let z_max = (10.0 / x).ceil() as i64 + 2;
    let mut sum = 0.0;
    for z in 1..=z_max {
        let zf = z as f64;
        let term = (q_function((zf - 0.5) * x) - q_function((zf + 0.5) * x)) * zf * zf;
        sum += term;
    }
    // z and −z contribute equally; z = 0 contributes nothing
    Ok(2.0 * sum)
}

/// Evaluate one λ hypothesis against a power trace: large-scale
/// estimate, AGC quantization, feasibility gate and selection objective.
pub fn evaluate_lambda(
    trace: &PowerTrace,
    lambda: f64,
    t_rep: f64,
    opts: &UniformMlOptions,
) -> Result<LambdaHypothesis> {
    let xi: Vec<Complex64> = trace
        .gamma_tilde_db
        .iter()
        .map(|&g| Complex64::from_polar(1.0, 2.0 * PI * g / lambda))
        .collect();
    let infeasible = |xi: Vec<Complex64>| LambdaHypothesis {
        fit: WrappedFit {
            xi,
            sigma_hat_db: f64::INFINITY,
            distortion: f64::INFINITY,
            objective: f64::INFINITY,
            lambda,
        },
        g1_db: Vec::new(),
        g2_db: Vec::new(),
        gamma_hat_db: Vec::new(),
        feasible: false,
    };
    let g1 = match estimate_g1_uniform(&xi, lambda, t_rep) {
        Ok(g1) => g1,
        Err(_) => return Ok(infeasible(xi)),
    };
    let (g2, gamma_hat) =
        agc_ml_uniform_impl(&trace.gamma_tilde_db, &g1, lambda, opts.paper_literal_eq14)?;
    let n = gamma_hat.len() as f64;
    let mean_sq = gamma_hat.iter().map(|g| g * g).sum::<f64>() / n;
    // gate: a residual this close to uniform makes the wrapped-spread
    // estimate unusable
    if mean_sq > lambda * lambda / 24.0 {
        return Ok(infeasible(xi));
    }
    let sigma = wrapped_sigma_estimate(&gamma_hat, lambda);
    if !sigma.is_finite() {
        return Ok(infeasible(xi));
    }
    let dist = if sigma > 0.0 {
        lambda * lambda * distortion(lambda / sigma)?
    } else {
        0.0
    };
    let objective = sigma * sigma + dist;
    Ok(LambdaHypothesis {
        fit: WrappedFit {
            xi,
            sigma_hat_db: sigma,
            distortion: dist,
            objective,
            lambda,
        },
        g1_db: g1,
        g2_db: g2,
        gamma_hat_db: gamma_hat,
        feasible: true,
    })
}

/// Uniform-grid ML gain estimation with λ line search.
pub fn gain_uniform_ml(batch: &CsiBatch) -> Result<GainEstimate> {
    gain_uniform_ml_with(batch, &UniformMlOptions::default())
}

/// As [`gain_uniform_ml`] with explicit options.
pub fn gain_uniform_ml_with(batch: &CsiBatch, opts: &UniformMlOptions) -> Result<GainEstimate> {
    let p_count = batch.frames();
    if p_count < 4 {
        return Err(Error::InvalidParams(format!(
            "uniform-ml needs at least 4 frames, got {p_count}"
        )));
    }
    let trace = power_trace(batch)?;
    let max = trace
        .gamma_tilde_db
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let min = trace
        .gamma_tilde_db
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let lambda_max = 1.5 * (max - min);
    if lambda_max <= 0.0 {
        // all-equal trace: unit AGC, gain from the low-pass track alone
        let g1_db = moving_average(&trace.gamma_tilde_db, lpf_half_width(batch.params.t_rep));
        let g_lin = g1_db.iter().map(|db| 10f64.powf(db / 20.0)).collect();
        return Ok(GainEstimate {
            g_lin,
            g1_db,
            g2_db: vec![0.0; p_count],
            lambda_hat: None,
            method: GainMethod::UniformMl,
        });
    }

    let mut best: Option<LambdaHypothesis> = None;
    for m in 1..=20 {
        let lambda = 0.05 * m as f64 * lambda_max;
        let hyp = evaluate_lambda(&trace, lambda, batch.params.t_rep, opts)?;
        if !hyp.feasible {
            continue;
        }
        // ties break toward larger λ
        let better = best
            .as_ref()
            .map_or(true, |b| hyp.fit.objective <= b.fit.objective);
        if better {
            best = Some(hyp);
        }
    }
    match best {
        Some(hyp) => {
            let g_lin = hyp
                .g1_db
                .iter()
                .zip(&hyp.g2_db)
                .map(|(g1, g2)| 10f64.powf((g1 + g2) / 20.0))
                .collect();
            Ok(GainEstimate {
                g_lin,
                g1_db: hyp.g1_db,
                g2_db: hyp.g2_db,
                lambda_hat: Some(hyp.fit.lambda),
                method: GainMethod::UniformMl,
            })
        }
        None => {
            // every hypothesis gated out: fall back to the
            // incremental-cluster estimator and flag it
            let mut est = gain_cluster_incremental(batch)?;
            est.method = GainMethod::UniformMlFallback;
            Ok(est)
        }
    }
}

/// Dispatch a gain method by tag. `Ideal` and `None` are handled by the
/// caller (they need ground truth / no data).
pub fn estimate_gain(batch: &CsiBatch, method: GainMethod) -> Result<GainEstimate> {
    match method {
        GainMethod::Norm => gain_norm_power(batch),
        GainMethod::ClusterAbs => gain_cluster_abs(batch),
        GainMethod::ClusterInc => gain_cluster_incremental(batch),
        GainMethod::UniformMl | GainMethod::UniformMlFallback => gain_uniform_ml(batch),
        GainMethod::None => Ok(GainEstimate::identity(batch.frames())),
        GainMethod::Ideal => Err(Error::InvalidParams(
            "ideal gain needs ground truth; use GroundTruth::ideal_gains".into(),
        )),
    }
}
