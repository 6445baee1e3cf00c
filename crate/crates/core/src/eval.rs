//! Cleaning-quality metrics and the Monte-Carlo benchmark sweep.
//!
//! Quality is the squared correlation χ between the true dynamic
//! component and the dynamic part of the cleaned CSI after delay
//! alignment, reported together with SNR = χ²/(1−χ²). Sensing-task
//! metrics are the Doppler power spectrum across frames and the
//! respiration-band SNR derived from it.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::estimate_gain;
use crate::phase::estimate_phase;
use crate::sim::{derive_seed, simulate, DynamicKind, SimConfig};
use crate::types::{
    apply_correction, gain_correct, CsiBatch, GainMethod, GroundTruth, PhaseMethod,
};

/// Half-width of the respiration band around the ground-truth rate, Hz.
pub const RESP_BAND_HZ: f64 = 0.02;

/// Outcome of one χ evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Squared correlation clamped to [0, 1].
    pub chi: f64,
    /// Unclamped value, for diagnostics.
    pub chi_raw: f64,
    /// χ²/(1−χ²).
    pub snr: f64,
    pub snr_db: f64,
    /// Delay that aligned the cleaned static component to the truth.
    pub align_tau: f64,
    pub gain_method: Option<GainMethod>,
    pub phase_method: Option<PhaseMethod>,
    /// Estimator wall-clock, excluding I/O and metric computation.
    pub wall_clock_ms: f64,
    /// True when chi_raw fell outside [0, 1].
    pub clamped: bool,
}

/// Doppler power spectrum over a frequency grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DopplerSpectrum {
    pub nu: Vec<f64>,
    pub power: Vec<f64>,
    /// Ground-truth rate, when known.
    pub nu0: Option<f64>,
}

fn parabolic_peak(values: &[f64], idx: usize) -> f64 {
    if idx == 0 || idx + 1 >= values.len() {
        return 0.0;
    }
    let (ym, y0, yp) = (values[idx - 1], values[idx], values[idx + 1]);
    let denom = ym - 2.0 * y0 + yp;
    if denom.abs() <= 1e-300 {
        0.0
    } else {
        (0.5 * (ym - yp) / denom).clamp(-1.0, 1.0)
    }
}

/// Squared correlation between the true dynamic component and the
/// cleaned CSI's dynamic part, with delay alignment of the static
/// components.
pub fn chi_metric(cleaned: &CsiBatch, truth: &GroundTruth) -> Result<EvalReport> {
    if !truth.has_channel() {
        return Err(Error::MissingTruth("true-channel block"));
    }
    if truth.gamma >= 1.0 {
        return Err(Error::NoDynamicComponent);
    }
    let (p_count, k_count) = (cleaned.frames(), cleaned.subcarriers());
    if truth.static_b.len() != k_count || truth.dynamic_d.len() != p_count * k_count {
        return Err(Error::LengthMismatch {
            what: "ground truth channel",
            expected: p_count * k_count,
            found: truth.dynamic_d.len(),
        });
    }
    let freqs = cleaned.params.freqs();

    // static component of the cleaned CSI
    let mut b_hat = vec![Complex64::new(0.0, 0.0); k_count];
    for p in 0..p_count {
        for (k, &h) in cleaned.frame(p).iter().enumerate() {
            b_hat[k] += h;
        }
    }
    for bh in &mut b_hat {
        *bh /= p_count as f64;
    }

    // delay alignment: maximize |Σ_k b_k conj(b̂_k) e^{j 2π f_k τ}|
    let bound = 2.0 * cleaned.params.tau_bound();
    let n_pts = 1025usize;
    let step = 2.0 * bound / (n_pts - 1) as f64;
    let weights: Vec<Complex64> = truth
        .static_b
        .iter()
        .zip(&b_hat)
        .map(|(&b, &bh)| b * bh.conj())
        .collect();
    let mut acc = vec![Complex64::new(0.0, 0.0); n_pts];
    for (k, &w) in weights.iter().enumerate() {
        let start = Complex64::from_polar(1.0, -2.0 * PI * freqs[k] * bound);
        let stepper = Complex64::from_polar(1.0, 2.0 * PI * freqs[k] * step);
        let mut ph = start;
        for a in acc.iter_mut() {
            *a += w * ph;
            ph *= stepper;
        }
    }
    let mags: Vec<f64> = acc.iter().map(|c| c.norm()).collect();
    let mut best_i = 0usize;
    for (i, &m) in mags.iter().enumerate() {
        if m > mags[best_i] {
            best_i = i;
        }
    }
    let mut align_tau = -bound + best_i as f64 * step;
    align_tau += parabolic_peak(&mags, best_i) * step;
    align_tau = align_tau.clamp(-bound, bound);

    // χ numerator and denominator
    let rot: Vec<Complex64> = freqs
        .iter()
        .map(|&f| Complex64::from_polar(1.0, 2.0 * PI * f * align_tau))
        .collect();
    let mut num = Complex64::new(0.0, 0.0);
    let mut den_energy = 0.0;
    let mut total_energy = 0.0;
    for p in 0..p_count {
        let frame = cleaned.frame(p);
        for k in 0..k_count {
            let e = frame[k] - b_hat[k];
            num += e.conj() * truth.dynamic_d[p * k_count + k] * rot[k];
            den_energy += e.norm_sqr();
            total_energy += frame[k].norm_sqr();
        }
    }
    // an all-static batch leaves only rounding residue after the mean
    // subtraction
    if den_energy <= 1e-24 * total_energy {
        return Err(Error::ZeroDenominator("chi (all-static cleaned batch)"));
    }
    let chi_raw =
        num.norm_sqr() / ((1.0 - truth.gamma) * k_count as f64 * p_count as f64 * den_energy);
    let chi = chi_raw.clamp(0.0, 1.0);
    let snr = if chi >= 1.0 {
        f64::INFINITY
    } else {
        chi * chi / (1.0 - chi * chi)
    };
    Ok(EvalReport {
        chi,
        chi_raw,
        snr,
        snr_db: 10.0 * snr.log10(),
        align_tau,
        gain_method: None,
        phase_method: None,
        wall_clock_ms: 0.0,
        clamped: chi_raw != chi,
    })
}

/// Doppler power spectrum `H(ν) = Σ_k |Σ_p h[p][k] e^{-j 2π ν p T_rep}|²`.
pub fn doppler_spectrum(batch: &CsiBatch, nu_grid: &[f64]) -> Result<DopplerSpectrum> {
    if nu_grid.is_empty() {
        return Err(Error::EmptyInput("doppler frequency grid"));
    }
    if nu_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams(
            "doppler grid must be strictly increasing".into(),
        ));
    }
    let (p_count, k_count) = (batch.frames(), batch.subcarriers());
    let t_rep = batch.params.t_rep;
    let mut power = Vec::with_capacity(nu_grid.len());
    for &nu in nu_grid {
        let stepper = Complex64::from_polar(1.0, -2.0 * PI * nu * t_rep);
        let mut ph = Complex64::new(1.0, 0.0);
        let mut acc = vec![Complex64::new(0.0, 0.0); k_count];
        for p in 0..p_count {
            for (k, &h) in batch.frame(p).iter().enumerate() {
                acc[k] += h * ph;
            }
            ph *= stepper;
        }
        power.push(acc.iter().map(|c| c.norm_sqr()).sum());
    }
    Ok(DopplerSpectrum {
        nu: nu_grid.to_vec(),
        power,
        nu0: None,
    })
}

/// Respiration-band SNR: in-band spectral energy within ±0.02 Hz of the
/// ground-truth rate over the energy everywhere else on the grid.
pub fn respiration_snr(spectrum: &DopplerSpectrum, nu0: f64) -> Result<f64> {
    let mut inside = 0.0;
    let mut outside = 0.0;
    for (&nu, &h) in spectrum.nu.iter().zip(&spectrum.power) {
        if (nu - nu0).abs() <= RESP_BAND_HZ + 1e-12 {
            inside += h;
        } else {
            outside += h;
        }
    }
    if outside <= 0.0 {
        return Err(Error::ZeroDenominator("respiration SNR"));
    }
    Ok(inside / outside)
}

/// The standard Doppler grid 0.1:0.02:0.5 Hz.
pub fn default_nu_grid() -> Vec<f64> {
    (0..21).map(|i| 0.1 + 0.02 * i as f64).collect()
}

/// One cell of a benchmark sweep: a method under test. Gain methods are
/// evaluated with ideal phase correction and phase methods with ideal
/// gain correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodUnderTest {
    Gain(GainMethod),
    Phase(PhaseMethod),
}

/// Benchmark sweep configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Template simulation settings; gamma, dynamic kind and seed are
    /// overridden per cell/realization.
    pub base: SimConfig,
    pub gammas: Vec<f64>,
    pub dynamics: Vec<DynamicKind>,
    pub gain_methods: Vec<GainMethod>,
    pub phase_methods: Vec<PhaseMethod>,
    pub realizations: usize,
    pub seed: u64,
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub gamma: f64,
    pub dyn_type: String,
    pub gain_method: String,
    pub phase_method: String,
    pub realization: usize,
    pub chi: f64,
    pub snr: f64,
    pub snr_db: f64,
    pub wall_ms: f64,
}

/// Median / quartile summary of one (γ, dynamic, method) cell.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub gamma: f64,
    pub dyn_type: String,
    pub gain_method: String,
    pub phase_method: String,
    pub n: usize,
    pub median_snr: f64,
    pub p25_snr: f64,
    pub p75_snr: f64,
    pub median_chi: f64,
    pub mean_wall_ms: f64,
}

/// Sweep output: per-realization rows in deterministic order, summary
/// per cell, and any per-realization failures (rows already produced
/// stay usable).
#[derive(Debug, Clone)]
pub struct BenchResults {
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<BenchSummary>,
    pub failures: Vec<String>,
}

/// Linear-interpolated percentile of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }
}

/// Median of an unsorted sample.
pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

fn run_method(
    observed: &CsiBatch,
    truth: &GroundTruth,
    method: MethodUnderTest,
) -> Result<(EvalReport, f64)> {
    match method {
        MethodUnderTest::Gain(gm) => {
            let start = Instant::now();
            let gains = match gm {
                GainMethod::Ideal => truth.ideal_gains()?,
                other => estimate_gain(observed, other)?,
            };
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let phases = truth.ideal_phases()?;
            let cleaned = apply_correction(observed, &gains, &phases)?;
            let mut report = chi_metric(&cleaned, truth)?;
            // label rows with the requested method so a fallback does
            // not split the cell; the estimate's own tag keeps the
            // fallback visible to library users
            report.gain_method = Some(gm);
            report.phase_method = Some(PhaseMethod::Ideal);
            report.wall_clock_ms = wall_ms;
            Ok((report, wall_ms))
        }
        MethodUnderTest::Phase(pm) => {
            let gains = truth.ideal_gains()?;
            let gain_corrected = gain_correct(observed, &gains)?;
            let start = Instant::now();
            let phases = match pm {
                PhaseMethod::Ideal => truth.ideal_phases()?,
                other => estimate_phase(&gain_corrected, other)?,
            };
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let unit = crate::types::GainEstimate::identity(observed.frames());
            let cleaned = apply_correction(&gain_corrected, &unit, &phases)?;
            let mut report = chi_metric(&cleaned, truth)?;
            report.gain_method = Some(GainMethod::Ideal);
            report.phase_method = Some(pm);
            report.wall_clock_ms = wall_ms;
            Ok((report, wall_ms))
        }
    }
}

/// Run a full sweep. Realizations are distributed across worker threads
/// with per-realization derived seeds; rows come back in deterministic
/// (cell, realization) order regardless of scheduling.
pub fn bench_sweep(cfg: &BenchConfig) -> Result<BenchResults> {
    if cfg.realizations == 0 {
        return Err(Error::InvalidConfig("realizations must be positive".into()));
    }
    let methods: Vec<MethodUnderTest> = cfg
        .gain_methods
        .iter()
        .map(|&g| MethodUnderTest::Gain(g))
        .chain(cfg.phase_methods.iter().map(|&p| MethodUnderTest::Phase(p)))
        .collect();
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }

    // one task per (gamma, dynamic, realization): simulate once, run all
    // methods on the same channels
    let mut tasks = Vec::new();
    for (gi, &gamma) in cfg.gammas.iter().enumerate() {
        for (di, &dyn_kind) in cfg.dynamics.iter().enumerate() {
            for r in 0..cfg.realizations {
                tasks.push((gi, gamma, di, dyn_kind, r));
            }
        }
    }

    type TaskOutcome = (
        usize,
        usize,
        usize,
        std::result::Result<Vec<BenchRow>, String>,
    );
    let outcomes: Vec<TaskOutcome> = tasks
        .par_iter()
        .map(|&(gi, gamma, di, dyn_kind, r)| {
            let sim_cfg = SimConfig {
                gamma,
                dynamic_kind: dyn_kind,
                seed: derive_seed(cfg.seed, &[gi as u64, di as u64, r as u64]),
                ..cfg.base.clone()
            };
            let run = || -> Result<Vec<BenchRow>> {
                let (observed, truth) = simulate(&sim_cfg)?;
                let mut rows = Vec::with_capacity(methods.len());
                for &m in &methods {
                    let (report, wall_ms) = run_method(&observed, &truth, m)?;
                    rows.push(BenchRow {
                        gamma,
                        dyn_type: dyn_kind.name().to_string(),
                        gain_method: report
                            .gain_method
                            .map(|g| g.name().to_string())
                            .unwrap_or_default(),
                        phase_method: report
                            .phase_method
                            .map(|p| p.name().to_string())
                            .unwrap_or_default(),
                        realization: r,
                        chi: report.chi,
                        snr: report.snr,
                        snr_db: report.snr_db,
                        wall_ms,
                    });
                }
                Ok(rows)
            };
            (gi, di, r, run().map_err(|e| e.to_string()))
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut sorted = outcomes;
    sorted.sort_by_key(|&(gi, di, r, _)| (gi, di, r));
    for (gi, di, r, outcome) in sorted {
        match outcome {
            Ok(mut rs) => rows.append(&mut rs),
            Err(e) => failures.push(format!("gamma[{gi}] dyn[{di}] realization {r}: {e}")),
        }
    }

    // summaries per cell in first-seen order
    let mut summaries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for row in &rows {
        let key = (
            row.gamma.to_bits(),
            row.dyn_type.clone(),
            row.gain_method.clone(),
            row.phase_method.clone(),
        );
        if !seen.insert(key) {
            continue;
        }
        let cell: Vec<&BenchRow> = rows
            .iter()
            .filter(|r| {
                r.gamma == row.gamma
                    && r.dyn_type == row.dyn_type
                    && r.gain_method == row.gain_method
                    && r.phase_method == row.phase_method
            })
            .collect();
        let snrs: Vec<f64> = cell.iter().map(|r| r.snr).collect();
        let chis: Vec<f64> = cell.iter().map(|r| r.chi).collect();
        let walls: Vec<f64> = cell.iter().map(|r| r.wall_ms).collect();
        summaries.push(BenchSummary {
            gamma: row.gamma,
            dyn_type: row.dyn_type.clone(),
            gain_method: row.gain_method.clone(),
            phase_method: row.phase_method.clone(),
            n: cell.len(),
            median_snr: median(&snrs),
            p25_snr: percentile(&snrs, 0.25),
            p75_snr: percentile(&snrs, 0.75),
            median_chi: median(&chis),
            mean_wall_ms: walls.iter().sum::<f64>() / walls.len().max(1) as f64,
        });
    }
    Ok(BenchResults {
        rows,
        summaries,
        failures,
    })
}

/// Serialize sweep rows as CSV with a fixed header.
///
/// Wall-clock readings are inherently run-to-run noise; they are only
/// written when `include_timing` is set, so that the default artifact is
/// byte-identical across runs with the same seed.
pub fn rows_to_csv(rows: &[BenchRow], include_timing: bool) -> String {
    let mut out = String::from(
        "gamma,dyn_type,gain_method,phase_method,realization,chi,snr,snr_db,wall_ms\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.9},{:.9},{:.6},{:.4}\n",
            r.gamma,
            r.dyn_type,
            r.gain_method,
            r.phase_method,
            r.realization,
            r.chi,
            r.snr,
            r.snr_db,
            if include_timing { r.wall_ms } else { 0.0 }
        ));
    }
    out
}
