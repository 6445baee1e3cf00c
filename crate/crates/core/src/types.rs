//! Shared domain types: system geometry, CSI batches, ground truth and
//! per-frame estimates, plus the correction operations that invert the
//! impairment model.
//!
//! The observed CSI follows
//! `h~[p][k] = g_p * h[p][k] * exp(-j 2π f_k τ_p) * exp(-j ψ_p)`;
//! a cleaned batch is produced by dividing out a gain estimate and
//! rotating back the two phase terms.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wrap an angle to `[-π, π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI);
    y - PI
}

/// OFDM/batch geometry. Subcarrier `k` sits at offset `f_k = k / t_sym`
/// from the carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Number of subcarriers K.
    pub subcarriers: usize,
    /// Number of frames P in a batch.
    pub frames: usize,
    /// Frame repetition interval in seconds.
    pub t_rep: f64,
    /// OFDM symbol duration in seconds.
    pub t_sym: f64,
    /// Carrier frequency in Hz (informational).
    pub f_carrier: f64,
    /// Timing-error bound parameter: |τ| ≤ kappa * t_sym / K.
    pub kappa: f64,
}

impl SystemParams {
    pub fn new(subcarriers: usize, frames: usize, t_rep: f64, t_sym: f64) -> Self {
        Self {
            subcarriers,
            frames,
            t_rep,
            t_sym,
            f_carrier: 5.2e9,
            kappa: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 subcarriers, got {}",
                self.subcarriers
            )));
        }
        if self.frames < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 frames, got {}",
                self.frames
            )));
        }
        for (name, v) in [
            ("t_rep", self.t_rep),
            ("t_sym", self.t_sym),
            ("kappa", self.kappa),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Frequency offset of subcarrier `k` from the carrier: `k / t_sym`.
    pub fn f_k(&self, k: usize) -> f64 {
        k as f64 / self.t_sym
    }

    /// All subcarrier frequency offsets, strictly increasing, `f_0 = 0`.
    pub fn freqs(&self) -> Vec<f64> {
        (0..self.subcarriers).map(|k| self.f_k(k)).collect()
    }

    /// Search bound for the timing error: `kappa * t_sym / K`.
    pub fn tau_bound(&self) -> f64 {
        self.kappa * self.t_sym / self.subcarriers as f64
    }
}

/// What a batch holds: raw observations, gain-corrected CSI, fully
/// cleaned CSI, or the impairment-free true channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsiKind {
    Observed,
    GainCorrected,
    Cleaned,
    True,
}

impl CsiKind {
    pub fn name(&self) -> &'static str {
        match self {
            CsiKind::Observed => "observed",
            CsiKind::GainCorrected => "gain-corrected",
            CsiKind::Cleaned => "cleaned",
            CsiKind::True => "true",
        }
    }
}

/// A P×K complex CSI matrix, frame-major, plus the geometry it was
/// measured under. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiBatch {
    pub params: SystemParams,
    pub kind: CsiKind,
    data: Vec<Complex64>,
}

impl CsiBatch {
    pub fn new(params: SystemParams, data: Vec<Complex64>, kind: CsiKind) -> Result<Self> {
        params.validate()?;
        let expected = params.frames * params.subcarriers;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                what: "CSI matrix",
                expected,
                found: data.len(),
            });
        }
        if !data.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::NonFinite("CSI matrix"));
        }
        Ok(Self { params, kind, data })
    }

    pub fn frames(&self) -> usize {
        self.params.frames
    }

    pub fn subcarriers(&self) -> usize {
        self.params.subcarriers
    }

    /// One frame as a K-length slice.
    pub fn frame(&self, p: usize) -> &[Complex64] {
        let k = self.params.subcarriers;
        &self.data[p * k..(p + 1) * k]
    }

    pub fn at(&self, p: usize, k: usize) -> Complex64 {
        self.data[p * self.params.subcarriers + k]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Mean power of frame `p`: `(1/K) Σ_k |h[p][k]|²`.
    pub fn frame_mean_power(&self, p: usize) -> f64 {
        let f = self.frame(p);
        f.iter().map(|c| c.norm_sqr()).sum::<f64>() / f.len() as f64
    }

    /// Mean power over the whole batch.
    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }

    /// Same data re-tagged with a different kind.
    pub fn with_kind(mut self, kind: CsiKind) -> Self {
        self.kind = kind;
        self
    }
}

/// Per-frame/per-subcarrier truth generated by the simulator; used only
/// for evaluation and for `ideal` correction modes.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Static channel component b_k, length K.
    pub static_b: Vec<Complex64>,
    /// Dynamic channel component `d[p][k]`, frame-major P×K.
    pub dynamic_d: Vec<Complex64>,
    /// Fraction of channel power in the static component.
    pub gamma: f64,
    /// Large-scale receiver gain per frame, dB. May be empty when the
    /// source file carried no impairment block.
    pub gain_large_db: Vec<f64>,
    /// AGC gain per frame, dB.
    pub gain_agc_db: Vec<f64>,
    /// Timing error per frame, seconds.
    pub timing_err: Vec<f64>,
    /// Common phase error per frame, radians.
    pub cpe: Vec<f64>,
}

impl GroundTruth {
    pub fn has_impairments(&self) -> bool {
        !self.gain_large_db.is_empty()
    }

    pub fn has_channel(&self) -> bool {
        !self.static_b.is_empty()
    }

    /// Linear per-frame gain `10^((g1+g2)/20)`.
    pub fn gain_linear(&self) -> Result<Vec<f64>> {
        if !self.has_impairments() {
            return Err(Error::MissingTruth("impairment records"));
        }
        Ok(self
            .gain_large_db
            .iter()
            .zip(&self.gain_agc_db)
            .map(|(g1, g2)| 10f64.powf((g1 + g2) / 20.0))
            .collect())
    }

    /// The impairment-free channel `h[p][k] = b_k + d[p][k]`.
    pub fn true_channel(&self, params: SystemParams) -> Result<CsiBatch> {
        if !self.has_channel() {
            return Err(Error::MissingTruth("true-channel block"));
        }
        let k = params.subcarriers;
        let data = self
            .dynamic_d
            .iter()
            .enumerate()
            .map(|(i, d)| self.static_b[i % k] + d)
            .collect();
        CsiBatch::new(params, data, CsiKind::True)
    }

    /// Ideal gain estimate taken from the truth.
    pub fn ideal_gains(&self) -> Result<GainEstimate> {
        let g_lin = self.gain_linear()?;
        Ok(GainEstimate {
            g_lin,
            g1_db: self.gain_large_db.clone(),
            g2_db: self.gain_agc_db.clone(),
            lambda_hat: None,
            method: GainMethod::Ideal,
        })
    }

    /// Ideal phase estimate taken from the truth.
    pub fn ideal_phases(&self) -> Result<PhaseEstimate> {
        if self.timing_err.is_empty() {
            return Err(Error::MissingTruth("impairment records"));
        }
        Ok(PhaseEstimate::new(
            self.timing_err.clone(),
            self.cpe.clone(),
            PhaseMethod::Ideal,
        ))
    }
}

/// Gain-estimation method tag, also the CLI spelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GainMethod {
    Norm,
    ClusterAbs,
    ClusterInc,
    UniformMl,
    /// `uniform-ml` fell back to the incremental-cluster estimator
    /// because every step-size hypothesis was gated out.
    UniformMlFallback,
    Ideal,
    /// Identity gains (no correction).
    None,
}

impl GainMethod {
    pub fn name(&self) -> &'static str {
        match self {
            GainMethod::Norm => "norm",
            GainMethod::ClusterAbs => "cluster-abs",
            GainMethod::ClusterInc => "cluster-inc",
            GainMethod::UniformMl => "uniform-ml",
            GainMethod::UniformMlFallback => "uniform-ml-fallback",
            GainMethod::Ideal => "ideal",
            GainMethod::None => "none",
        }
    }
}

impl fmt::Display for GainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Phase-estimation method tag, also the CLI spelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseMethod {
    LsUnwrap,
    Coherence,
    LosGrid,
    LosWls,
    SeqGrid,
    SeqWls,
    BidirGrid,
    BidirWls,
    Ideal,
    /// Identity phases (no correction).
    None,
}

impl PhaseMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PhaseMethod::LsUnwrap => "ls-unwrap",
            PhaseMethod::Coherence => "coherence",
            PhaseMethod::LosGrid => "los-grid",
            PhaseMethod::LosWls => "los-wls",
            PhaseMethod::SeqGrid => "seq-grid",
            PhaseMethod::SeqWls => "seq-wls",
            PhaseMethod::BidirGrid => "bidir-grid",
            PhaseMethod::BidirWls => "bidir-wls",
            PhaseMethod::Ideal => "ideal",
            PhaseMethod::None => "none",
        }
    }
}

impl fmt::Display for PhaseMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-frame gain estimate. `g_lin[p]` is the linear-scale divisor used
/// by the correction; the dB split and the selected AGC step size are
/// diagnostics.
#[derive(Debug, Clone)]
pub struct GainEstimate {
    pub g_lin: Vec<f64>,
    pub g1_db: Vec<f64>,
    pub g2_db: Vec<f64>,
    pub lambda_hat: Option<f64>,
    pub method: GainMethod,
}

impl GainEstimate {
    /// Identity estimate: ĝ_p = 1 for all frames.
    pub fn identity(frames: usize) -> Self {
        Self {
            g_lin: vec![1.0; frames],
            g1_db: vec![0.0; frames],
            g2_db: vec![0.0; frames],
            lambda_hat: None,
            method: GainMethod::None,
        }
    }

    fn validate(&self, frames: usize) -> Result<()> {
        if self.g_lin.len() != frames {
            return Err(Error::LengthMismatch {
                what: "gain estimate",
                expected: frames,
                found: self.g_lin.len(),
            });
        }
        for (p, &g) in self.g_lin.iter().enumerate() {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::NonPositiveGain { frame: p, value: g });
            }
        }
        Ok(())
    }
}

/// Per-frame timing-offset and common-phase-error estimate. ψ is wrapped
/// to `[-π, π)` at construction.
#[derive(Debug, Clone)]
pub struct PhaseEstimate {
    pub tau: Vec<f64>,
    pub psi: Vec<f64>,
    pub method: PhaseMethod,
}

impl PhaseEstimate {
    pub fn new(tau: Vec<f64>, psi: Vec<f64>, method: PhaseMethod) -> Self {
        let psi = psi.into_iter().map(wrap_angle).collect();
        Self { tau, psi, method }
    }

    /// Identity estimate: τ̂ = ψ̂ = 0 for all frames.
    pub fn identity(frames: usize) -> Self {
        Self {
            tau: vec![0.0; frames],
            psi: vec![0.0; frames],
            method: PhaseMethod::None,
        }
    }

    fn validate(&self, frames: usize) -> Result<()> {
        if self.tau.len() != frames || self.psi.len() != frames {
            return Err(Error::LengthMismatch {
                what: "phase estimate",
                expected: frames,
                found: self.tau.len().min(self.psi.len()),
            });
        }
        Ok(())
    }
}

/// Invert the impairment model:
/// `out[p][k] = in[p][k] * exp(j 2π f_k τ̂_p) * exp(j ψ̂_p) / ĝ_p`.
///
/// Gain-only or phase-only correction is expressed by passing identity
/// estimates for the other part.
pub fn apply_correction(
    batch: &CsiBatch,
    gains: &GainEstimate,
    phases: &PhaseEstimate,
) -> Result<CsiBatch> {
    if !matches!(batch.kind, CsiKind::Observed | CsiKind::GainCorrected) {
        return Err(Error::WrongKind {
            expected: "observed or gain-corrected",
            found: batch.kind.name(),
        });
    }
    let p_frames = batch.frames();
    gains.validate(p_frames)?;
    phases.validate(p_frames)?;

    let freqs = batch.params.freqs();
    let mut out = Vec::with_capacity(batch.data.len());
    for p in 0..p_frames {
        let rot_psi = Complex64::from_polar(1.0, phases.psi[p]);
        let inv_g = 1.0 / gains.g_lin[p];
        for (k, &v) in batch.frame(p).iter().enumerate() {
            let rot = Complex64::from_polar(1.0, 2.0 * PI * freqs[k] * phases.tau[p]);
            out.push(v * rot * rot_psi * inv_g);
        }
    }
    CsiBatch::new(batch.params, out, CsiKind::Cleaned)
}

/// Divide out a gain estimate: `h̄[p][k] = h~[p][k] / ĝ_p`.
pub fn gain_correct(batch: &CsiBatch, gains: &GainEstimate) -> Result<CsiBatch> {
    if batch.kind != CsiKind::Observed {
        return Err(Error::WrongKind {
            expected: "observed",
            found: batch.kind.name(),
        });
    }
    gains.validate(batch.frames())?;
    let mut out = Vec::with_capacity(batch.data.len());
    for p in 0..batch.frames() {
        let inv_g = 1.0 / gains.g_lin[p];
        out.extend(batch.frame(p).iter().map(|&v| v * inv_g));
    }
    CsiBatch::new(batch.params, out, CsiKind::GainCorrected)
}
