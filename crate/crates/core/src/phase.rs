//! Timing-offset and common-phase-error estimation from gain-corrected
//! CSI.
//!
//! Two baselines (per-frame unwrapped-phase least squares and
//! frequency-coherence), a strong-LoS method referenced to an averaged
//! static-channel estimate (grid-search and closed-form weighted
//! least-squares variants), a sequential conditional-ML forward pass
//! that references each frame to the sum of previously cleaned frames,
//! and an optional backward pass that re-estimates the first half of the
//! batch against the cleaned second half.
//!
//! All estimators return (τ̂, ψ̂) in the convention of the correction
//! `h * exp(j 2π f_k τ̂) * exp(j ψ̂)`: on a frame impaired by (τ, ψ)
//! they recover (+τ, +ψ). Since the absolute phase of the static channel
//! is unobservable, ψ̂ carries a batch-wide constant anchored by the
//! coarse workspace.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{wrap_angle, CsiBatch, PhaseEstimate, PhaseMethod};

/// Number of grid points of the 1-D τ search.
const TAU_GRID_POINTS: usize = 257;
/// Minimum usable size of the thresholded subcarrier set.
const MIN_KBAR: usize = 8;

/// Shared per-batch context for the reference-based estimators: coarse
/// per-frame estimates, the averaged static-channel estimate, and the
/// strong-subcarrier index set.
#[derive(Debug, Clone)]
pub struct PhaseWorkspace {
    /// Averaged static-channel estimate b̄_k.
    pub b_bar: Vec<Complex64>,
    /// Sorted indices of subcarriers with |b̄_k|² above threshold.
    pub k_bar: Vec<usize>,
    /// Coarse per-frame timing estimates from the coherence baseline.
    pub coarse_tau: Vec<f64>,
    /// Coarse per-frame phase estimates from the coherence baseline.
    pub coarse_psi: Vec<f64>,
}

/// Inputs of the weighted least-squares phase fit.
#[derive(Debug, Clone)]
pub struct WlsInputs {
    pub omega: Vec<Complex64>,
    /// Robust-unwrapped target angles.
    pub targets: Vec<f64>,
    /// Non-negative weights |ω|.
    pub weights: Vec<f64>,
}

impl WlsInputs {
    /// Build targets and weights from the ω samples via robust
    /// unwrapping. The flag reports whether any window sum vanished.
    pub fn from_omega(omega: Vec<Complex64>) -> (Self, bool) {
        let (targets, flagged) = robust_unwrap(&omega);
        let weights = omega.iter().map(|c| c.norm()).collect();
        (
            Self {
                omega,
                targets,
                weights,
            },
            flagged,
        )
    }
}

/// Which solver the sequential estimators use per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqVariant {
    Grid,
    Wls,
}

/// Sequential unwrap of a phase sequence.
pub fn unwrap_sequence(angles: &[f64]) -> Vec<f64> {
    crate::gain::unwrap_phases(angles)
}

/// Baseline: per-frame least-squares fit of the unwrapped CSI phase to a
/// line in subcarrier frequency. The fit runs on the conjugate phase so
/// the returned (τ̂, ψ̂) feed the correction directly.
pub fn phase_ls_unwrap(batch: &CsiBatch) -> Result<PhaseEstimate> {
    let k_count = batch.subcarriers();
    if k_count < 2 {
        return Err(Error::InvalidParams(
            "ls-unwrap needs at least 2 subcarriers".into(),
        ));
    }
    let freqs = batch.params.freqs();
    let mut tau = Vec::with_capacity(batch.frames());
    let mut psi = Vec::with_capacity(batch.frames());
    for p in 0..batch.frames() {
        let angles: Vec<f64> = batch.frame(p).iter().map(|c| c.conj().arg()).collect();
        let u = unwrap_sequence(&angles);
        let (t, ps) = line_fit(&u, &freqs, None).ok_or(Error::SingularSystem { frame: p })?;
        tau.push(t);
        psi.push(ps);
    }
    Ok(PhaseEstimate::new(tau, psi, PhaseMethod::LsUnwrap))
}

/// Weighted (or unweighted) least squares of `u_k ≈ 2π f_k τ + ψ`.
/// Returns `(τ, ψ)` or `None` when the system is singular.
fn line_fit(u: &[f64], freqs: &[f64], weights: Option<&[f64]>) -> Option<(f64, f64)> {
    let n = u.len();
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(w).sum();
    if sw <= 0.0 {
        return None;
    }
    let xmean: f64 = (0..n).map(|i| w(i) * 2.0 * PI * freqs[i]).sum::<f64>() / sw;
    let umean: f64 = (0..n).map(|i| w(i) * u[i]).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxu = 0.0;
    for i in 0..n {
        let dx = 2.0 * PI * freqs[i] - xmean;
        sxx += w(i) * dx * dx;
        sxu += w(i) * dx * (u[i] - umean);
    }
    let spread = freqs.last()? - freqs.first()?;
    if sxx <= 1e-14 * sw * (2.0 * PI * spread).powi(2) {
        return None;
    }
    let slope = sxu / sxx;
    let intercept = umean - slope * xmean;
    Some((slope, wrap_angle(intercept)))
}

/// Baseline: frequency-domain coherence. τ̂ from the angle of the
/// lag-one cross-subcarrier product, ψ̂ from the residual common phase.
pub fn phase_coherence(batch: &CsiBatch) -> Result<PhaseEstimate> {
    let k_count = batch.subcarriers();
    if k_count < 2 {
        return Err(Error::InvalidParams(
            "coherence needs at least 2 subcarriers".into(),
        ));
    }
    let t_sym = batch.params.t_sym;
    let freqs = batch.params.freqs();
    let mut tau = Vec::with_capacity(batch.frames());
    let mut psi = Vec::with_capacity(batch.frames());
    for p in 0..batch.frames() {
        let frame = batch.frame(p);
        let corr: Complex64 = (0..k_count - 1)
            .map(|k| frame[k] * frame[k + 1].conj())
            .sum();
        if corr.norm() == 0.0 {
            return Err(Error::Estimation {
                method: "coherence",
                frame: p,
                reason: "degenerate frame: zero cross-subcarrier correlation".into(),
            });
        }
        let t = t_sym / (2.0 * PI) * corr.arg();
        let aligned: Complex64 = frame
            .iter()
            .enumerate()
            .map(|(k, &h)| h * Complex64::from_polar(1.0, 2.0 * PI * freqs[k] * t))
            .sum();
        if aligned.norm() == 0.0 {
            return Err(Error::Estimation {
                method: "coherence",
                frame: p,
                reason: "degenerate frame: zero aligned sum".into(),
            });
        }
        tau.push(t);
        psi.push(-aligned.arg());
    }
    Ok(PhaseEstimate::new(tau, psi, PhaseMethod::Coherence))
}

/// Build the shared workspace: coarse coherence estimates, the averaged
/// static-channel estimate, and the strong-subcarrier set.
///
/// The |b̄_k|² > 0.1 threshold applies after normalizing the batch to
/// unit mean power; if fewer than 8 subcarriers survive, the top half
/// ranked by |b̄_k| is used instead.
pub fn coarse_workspace(batch: &CsiBatch) -> Result<PhaseWorkspace> {
    let coarse = phase_coherence(batch)?;
    let (p_count, k_count) = (batch.frames(), batch.subcarriers());
    let freqs = batch.params.freqs();
    let mut b_bar = vec![Complex64::new(0.0, 0.0); k_count];
    for p in 0..p_count {
        let rot_psi = Complex64::from_polar(1.0, coarse.psi[p]);
        for (k, &h) in batch.frame(p).iter().enumerate() {
            let rot = Complex64::from_polar(1.0, 2.0 * PI * freqs[k] * coarse.tau[p]);
            b_bar[k] += h * rot * rot_psi;
        }
    }
    for bk in &mut b_bar {
        *bk /= p_count as f64;
    }
    let mean_power = batch.mean_power();
    let threshold = 0.1 * mean_power;
    let mut k_bar: Vec<usize> = (0..k_count)
        .filter(|&k| b_bar[k].norm_sqr() > threshold)
        .collect();
    if k_bar.len() < MIN_KBAR {
        let mut ranked: Vec<usize> = (0..k_count).collect();
        ranked.sort_by(|&a, &b| {
            b_bar[b]
                .norm_sqr()
                .partial_cmp(&b_bar[a].norm_sqr())
                .unwrap()
        });
        k_bar = ranked[..k_count.div_ceil(2)].to_vec();
        k_bar.sort_unstable();
    }
    Ok(PhaseWorkspace {
        b_bar,
        k_bar,
        coarse_tau: coarse.tau,
        coarse_psi: coarse.psi,
    })
}

/// Robust phase unwrapping: unwrap the angle of a 7-sample sliding sum
/// (3 preceding, self, 3 succeeding, truncated at the ends), then wrap
/// each sample's own angle back around that smooth reference.
///
/// Returns the unwrapped targets and a flag telling whether any window
/// sum vanished (its reference angle is reused from the previous index).
pub fn robust_unwrap(omega: &[Complex64]) -> (Vec<f64>, bool) {
    let n = omega.len();
    let mut targets = Vec::with_capacity(n);
    let mut flagged = false;
    let mut prev_u = 0.0;
    for i in 0..n {
        let lo = i.saturating_sub(3);
        let hi = (i + 4).min(n);
        let s: Complex64 = omega[lo..hi].iter().sum();
        let u = if s.norm() == 0.0 {
            flagged = true;
            prev_u
        } else {
            let a = s.arg();
            if i == 0 {
                a
            } else {
                a + 2.0 * PI * ((prev_u - a) / (2.0 * PI)).round()
            }
        };
        prev_u = u;
        let theta = omega[i].arg();
        let t = (theta - u + PI).rem_euclid(2.0 * PI) - PI + u;
        targets.push(t);
    }
    (targets, flagged)
}

/// Closed-form solution of the weighted least-squares problem
/// `min Σ w_k (2π f_k (τ − τ̄) + ψ − ũ_k)²`.
pub fn wls_solve(inputs: &WlsInputs, freqs: &[f64], tau_bar: f64) -> Result<(f64, f64)> {
    if inputs.targets.len() != freqs.len() || inputs.weights.len() != freqs.len() {
        return Err(Error::LengthMismatch {
            what: "wls inputs",
            expected: freqs.len(),
            found: inputs.targets.len().min(inputs.weights.len()),
        });
    }
    if freqs.is_empty() {
        return Err(Error::EmptyInput("wls system"));
    }
    match line_fit(&inputs.targets, freqs, Some(&inputs.weights)) {
        Some((dtau, psi)) => Ok((tau_bar + dtau, psi)),
        None => Err(Error::SingularSystem { frame: 0 }),
    }
}

/// Maximize `|Σ_k e^{-j 2π f_k τ} conj(h_k) r_k|` over a 257-point τ
/// grid in ±bound with one parabolic refinement; ψ̂ is the angle of the
/// sum at the refined τ.
fn grid_search(
    h_frame: &[Complex64],
    reference: &[Complex64],
    freqs: &[f64],
    bound: f64,
) -> Result<(f64, f64)> {
    let n_pts = TAU_GRID_POINTS;
    let step = 2.0 * bound / (n_pts - 1) as f64;
    let weights: Vec<Complex64> = h_frame
        .iter()
        .zip(reference)
        .map(|(&h, &r)| h.conj() * r)
        .collect();
    let mut acc = vec![Complex64::new(0.0, 0.0); n_pts];
    for (k, &w) in weights.iter().enumerate() {
        // phase recurrence across the uniform τ grid
        let start = Complex64::from_polar(1.0, 2.0 * PI * freqs[k] * bound);
        let stepper = Complex64::from_polar(1.0, -2.0 * PI * freqs[k] * step);
        let mut ph = start;
        for a in acc.iter_mut() {
            *a += w * ph;
            ph *= stepper;
        }
    }
    let mags: Vec<f64> = acc.iter().map(|c| c.norm()).collect();
    let (mut best_i, mut best) = (0usize, f64::NEG_INFINITY);
    for (i, &m) in mags.iter().enumerate() {
        if m > best {
            best = m;
            best_i = i;
        }
    }
    if best <= 0.0 {
        return Err(Error::Estimation {
            method: "grid search",
            frame: 0,
            reason: "objective identically zero".into(),
        });
    }
    let tau_at = |i: usize| -bound + i as f64 * step;
    let mut tau = tau_at(best_i);
    if best_i > 0 && best_i + 1 < n_pts {
        let (ym, y0, yp) = (mags[best_i - 1], mags[best_i], mags[best_i + 1]);
        let denom = ym - 2.0 * y0 + yp;
        if denom.abs() > 1e-300 {
            let delta = 0.5 * (ym - yp) / denom;
            tau += delta.clamp(-1.0, 1.0) * step;
        }
    }
    tau = tau.clamp(-bound, bound);
    let total: Complex64 = weights
        .iter()
        .enumerate()
        .map(|(k, &w)| w * Complex64::from_polar(1.0, -2.0 * PI * freqs[k] * tau))
        .sum();
    Ok((tau, total.arg()))
}

/// One conditional-ML step: maximize the correlation of a frame against
/// a fixed reference (the sum of previously cleaned frames) over the
/// bounded τ grid, with the closed-form ψ at the optimum. This is the
/// per-frame solver the sequential grid variant iterates.
pub fn conditional_ml_step(
    frame: &[Complex64],
    reference: &[Complex64],
    freqs: &[f64],
    tau_bound: f64,
) -> Result<(f64, f64)> {
    grid_search(frame, reference, freqs, tau_bound)
}

fn omega_against(
    h_frame: &[Complex64],
    reference: &[Complex64],
    k_bar: &[usize],
    freqs: &[f64],
    tau_bar: f64,
) -> Vec<Complex64> {
    k_bar
        .iter()
        .map(|&k| {
            h_frame[k].conj()
                * reference[k]
                * Complex64::from_polar(1.0, -2.0 * PI * freqs[k] * tau_bar)
        })
        .collect()
}

fn wls_frame(
    h_frame: &[Complex64],
    reference: &[Complex64],
    ws: &PhaseWorkspace,
    freqs_kbar: &[f64],
    freqs: &[f64],
    p: usize,
) -> Result<(f64, f64)> {
    let omega = omega_against(h_frame, reference, &ws.k_bar, freqs, ws.coarse_tau[p]);
    let (inputs, _) = WlsInputs::from_omega(omega);
    wls_solve(&inputs, freqs_kbar, ws.coarse_tau[p]).map_err(|e| match e {
        Error::SingularSystem { .. } => Error::SingularSystem { frame: p },
        other => other,
    })
}

/// Strong-LoS estimation, grid-ML form: per frame, search τ against the
/// averaged static-channel estimate.
pub fn phase_los_grid(batch: &CsiBatch) -> Result<PhaseEstimate> {
    let ws = coarse_workspace(batch)?;
    phase_los_grid_with(batch, &ws)
}

/// As [`phase_los_grid`] with a precomputed workspace.
pub fn phase_los_grid_with(batch: &CsiBatch, ws: &PhaseWorkspace) -> Result<PhaseEstimate> {
    let freqs = batch.params.freqs();
    let bound = batch.params.tau_bound();
    let mut tau = Vec::with_capacity(batch.frames());
    let mut psi = Vec::with_capacity(batch.frames());
    for p in 0..batch.frames() {
        let (t, ps) =
            grid_search(batch.frame(p), &ws.b_bar, &freqs, bound).map_err(|e| match e {
                Error::Estimation { method, reason, .. } => Error::Estimation {
                    method,
                    frame: p,
                    reason,
                },
                other => other,
            })?;
        tau.push(t);
        psi.push(ps);
    }
    Ok(PhaseEstimate::new(tau, psi, PhaseMethod::LosGrid))
}

/// Strong-LoS estimation, weighted-least-squares form.
pub fn phase_los_wls(batch: &CsiBatch) -> Result<PhaseEstimate> {
    let ws = coarse_workspace(batch)?;
    phase_los_wls_with(batch, &ws)
}

/// As [`phase_los_wls`] with a precomputed workspace.
pub fn phase_los_wls_with(batch: &CsiBatch, ws: &PhaseWorkspace) -> Result<PhaseEstimate> {
    let freqs = batch.params.freqs();
    let freqs_kbar: Vec<f64> = ws.k_bar.iter().map(|&k| freqs[k]).collect();
    let mut tau = Vec::with_capacity(batch.frames());
    let mut psi = Vec::with_capacity(batch.frames());
    for p in 0..batch.frames() {
        let (t, ps) = wls_frame(batch.frame(p), &ws.b_bar, ws, &freqs_kbar, &freqs, p)?;
        tau.push(t);
        psi.push(ps);
    }
    Ok(PhaseEstimate::new(tau, psi, PhaseMethod::LosWls))
}

struct SeqOutput {
    tau: Vec<f64>,
    psi: Vec<f64>,
    cleaned: Vec<Complex64>,
    ws: PhaseWorkspace,
}

/// Forward pass shared by the sequential and bidirectional estimators.
fn seq_core(batch: &CsiBatch, variant: SeqVariant) -> Result<SeqOutput> {
    let ws = coarse_workspace(batch)?;
    let (p_count, k_count) = (batch.frames(), batch.subcarriers());
    let freqs = batch.params.freqs();
    let freqs_kbar: Vec<f64> = ws.k_bar.iter().map(|&k| freqs[k]).collect();
    let bound = batch.params.tau_bound();
    let warm = p_count / 10;

    let mut tau = Vec::with_capacity(p_count);
    let mut psi = Vec::with_capacity(p_count);
    let mut cleaned = Vec::with_capacity(p_count * k_count);
    let mut acc = vec![Complex64::new(0.0, 0.0); k_count];
    for p in 0..p_count {
        let frame = batch.frame(p);
        let (t, ps) = if p < warm {
            wls_frame(frame, &ws.b_bar, &ws, &freqs_kbar, &freqs, p)?
        } else {
            if acc.iter().all(|c| c.norm_sqr() == 0.0) {
                return Err(Error::Estimation {
                    method: "sequential pass",
                    frame: p,
                    reason: "empty reference accumulator (fewer than 10 frames?)".into(),
                });
            }
            match variant {
                SeqVariant::Grid => {
                    grid_search(frame, &acc, &freqs, bound).map_err(|e| match e {
                        Error::Estimation { method, reason, .. } => Error::Estimation {
                            method,
                            frame: p,
                            reason,
                        },
                        other => other,
                    })?
                }
                SeqVariant::Wls => wls_frame(frame, &acc, &ws, &freqs_kbar, &freqs, p)?,
            }
        };
        // clean this frame and fold it into the reference accumulator
        let rot_psi = Complex64::from_polar(1.0, ps);
        for (k, &h) in frame.iter().enumerate() {
            let c = h * Complex64::from_polar(1.0, 2.0 * PI * freqs[k] * t) * rot_psi;
            cleaned.push(c);
            acc[k] += c;
        }
        tau.push(t);
        psi.push(ps);
    }
    Ok(SeqOutput {
        tau,
        psi,
        cleaned,
        ws,
    })
}

/// Forward-pass sequential conditional-ML estimation. The first
/// ⌊P/10⌋ frames come from the strong-LoS WLS path to warm up the
/// reference accumulator.
pub fn phase_seq(batch: &CsiBatch, variant: SeqVariant) -> Result<PhaseEstimate> {
    let out = seq_core(batch, variant)?;
    let method = match variant {
        SeqVariant::Grid => PhaseMethod::SeqGrid,
        SeqVariant::Wls => PhaseMethod::SeqWls,
    };
    Ok(PhaseEstimate::new(out.tau, out.psi, method))
}

/// Forward pass followed by a backward refinement: frames 0..=⌊P/2⌋ are
/// re-estimated against the fixed sum of the cleaned frames with
/// q > P/2. Frames above ⌊P/2⌋ keep their forward-pass estimates.
pub fn phase_bidir(batch: &CsiBatch, variant: SeqVariant) -> Result<PhaseEstimate> {
    let mut out = seq_core(batch, variant)?;
    let (p_count, k_count) = (batch.frames(), batch.subcarriers());
    let freqs = batch.params.freqs();
    let freqs_kbar: Vec<f64> = out.ws.k_bar.iter().map(|&k| freqs[k]).collect();
    let bound = batch.params.tau_bound();
    let half = p_count / 2;

    let mut acc = vec![Complex64::new(0.0, 0.0); k_count];
    for q in half + 1..p_count {
        for (k, a) in acc.iter_mut().enumerate() {
            *a += out.cleaned[q * k_count + k];
        }
    }
    if acc.iter().all(|c| c.norm_sqr() == 0.0) {
        return Err(Error::Estimation {
            method: "backward pass",
            frame: half,
            reason: "empty future reference accumulator".into(),
        });
    }
    for p in (0..=half.min(p_count - 1)).rev() {
        let frame = batch.frame(p);
        let (t, ps) = match variant {
            SeqVariant::Grid => grid_search(frame, &acc, &freqs, bound).map_err(|e| match e {
                Error::Estimation { method, reason, .. } => Error::Estimation {
                    method,
                    frame: p,
                    reason,
                },
                other => other,
            })?,
            SeqVariant::Wls => wls_frame(frame, &acc, &out.ws, &freqs_kbar, &freqs, p)?,
        };
        out.tau[p] = t;
        out.psi[p] = ps;
    }
    let method = match variant {
        SeqVariant::Grid => PhaseMethod::BidirGrid,
        SeqVariant::Wls => PhaseMethod::BidirWls,
    };
    Ok(PhaseEstimate::new(out.tau, out.psi, method))
}

/// Dispatch a phase method by tag. `Ideal` and `None` are handled by
/// the caller.
pub fn estimate_phase(batch: &CsiBatch, method: PhaseMethod) -> Result<PhaseEstimate> {
    match method {
        PhaseMethod::LsUnwrap => phase_ls_unwrap(batch),
        PhaseMethod::Coherence => phase_coherence(batch),
        PhaseMethod::LosGrid => phase_los_grid(batch),
        PhaseMethod::LosWls => phase_los_wls(batch),
        PhaseMethod::SeqGrid => phase_seq(batch, SeqVariant::Grid),
        PhaseMethod::SeqWls => phase_seq(batch, SeqVariant::Wls),
        PhaseMethod::BidirGrid => phase_bidir(batch, SeqVariant::Grid),
        PhaseMethod::BidirWls => phase_bidir(batch, SeqVariant::Wls),
        PhaseMethod::None => Ok(PhaseEstimate::identity(batch.frames())),
        PhaseMethod::Ideal => Err(Error::InvalidParams(
            "ideal phases need ground truth; use GroundTruth::ideal_phases".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CsiKind, SystemParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn params(k: usize, p: usize) -> SystemParams {
        SystemParams::new(k, p, 0.1, 3.2e-6)
    }

    /// Build a gain-corrected batch from a channel and per-frame (τ, ψ).
    fn impaired(b: &[Complex64], tau: &[f64], psi: &[f64], params: SystemParams) -> CsiBatch {
        let mut data = Vec::new();
        for p in 0..params.frames {
            for k in 0..params.subcarriers {
                let ph = -2.0 * PI * params.f_k(k) * tau[p] - psi[p];
                data.push(b[k] * Complex64::from_polar(1.0, ph));
            }
        }
        CsiBatch::new(params, data, CsiKind::GainCorrected).unwrap()
    }

    fn flat_channel(k: usize, mag: f64) -> Vec<Complex64> {
        vec![Complex64::new(mag, 0.0); k]
    }

    /// A two-tap channel normalized the same way the simulator does:
    /// angle(Σ b_k b*_{k+1}) = 0 and mean power γ.
    fn two_tap_channel(k: usize, t_sym: f64, gamma: f64, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a0 = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let a1 = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.4;
        let mut b: Vec<Complex64> = (0..k)
            .map(|kk| {
                let f = kk as f64 / t_sym;
                a0 + a1 * Complex64::from_polar(1.0, -2.0 * PI * f * 40e-9)
            })
            .collect();
        let corr: Complex64 = (0..k - 1).map(|i| b[i] * b[i + 1].conj()).sum();
        let delta = -corr.arg() * t_sym / (2.0 * PI);
        for (kk, bk) in b.iter_mut().enumerate() {
            let f = kk as f64 / t_sym;
            *bk *= Complex64::from_polar(1.0, -2.0 * PI * f * delta);
        }
        let pow = b.iter().map(|c| c.norm_sqr()).sum::<f64>() / k as f64;
        let s = (gamma / pow).sqrt();
        b.iter_mut().for_each(|c| *c *= s);
        b
    }

    fn rand_tau_psi(p: usize, seed: u64, tau_max: f64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let tau = (0..p).map(|_| rng.gen::<f64>() * tau_max).collect();
        let psi = (0..p)
            .map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * PI)
            .collect();
        (tau, psi)
    }

    #[test]
    fn ls_unwrap_recovers_flat_channel_exactly() {
        let sp = params(64, 5);
        let (tau, psi) = rand_tau_psi(5, 1, 5e-8);
        let batch = impaired(&flat_channel(64, 1.0), &tau, &psi, sp);
        let est = phase_ls_unwrap(&batch).unwrap();
        for p in 0..5 {
            assert!((est.tau[p] - tau[p]).abs() < 1e-15);
            assert!(wrap_angle(est.psi[p] - psi[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn ls_unwrap_psi_is_modulo_2pi() {
        let sp = params(32, 2);
        let psi_a = vec![0.3; 2];
        let psi_b = vec![0.3 + 2.0 * PI; 2];
        let tau = vec![1e-8; 2];
        let a = phase_ls_unwrap(&impaired(&flat_channel(32, 1.0), &tau, &psi_a, sp)).unwrap();
        let b = phase_ls_unwrap(&impaired(&flat_channel(32, 1.0), &tau, &psi_b, sp)).unwrap();
        for p in 0..2 {
            assert!(wrap_angle(a.psi[p] - b.psi[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn ls_unwrap_bias_equals_fit_of_channel_phase_slope() {
        // no impairment on a frequency-selective channel: the estimate
        // equals the line fit of the channel's own (conjugate) phase
        let sp = params(64, 3);
        let b = two_tap_channel(64, sp.t_sym, 1.0, 3);
        let batch = impaired(&b, &vec![0.0; 3], &vec![0.0; 3], sp);
        let est = phase_ls_unwrap(&batch).unwrap();
        // oracle: independent computation of the same fit on b_k
        let angles: Vec<f64> = b.iter().map(|c| c.conj().arg()).collect();
        let mut u = angles.clone();
        for i in 1..u.len() {
            let mut d = u[i] - u[i - 1];
            while d > PI {
                u[i] -= 2.0 * PI;
                d = u[i] - u[i - 1];
            }
            while d < -PI {
                u[i] += 2.0 * PI;
                d = u[i] - u[i - 1];
            }
        }
        let n = u.len() as f64;
        let x: Vec<f64> = (0..64).map(|k| 2.0 * PI * sp.f_k(k)).collect();
        let xm = x.iter().sum::<f64>() / n;
        let um = u.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|xx| (xx - xm) * (xx - xm)).sum();
        let sxu: f64 = x.iter().zip(&u).map(|(xx, uu)| (xx - xm) * (uu - um)).sum();
        let slope = sxu / sxx;
        for p in 0..3 {
            assert!((est.tau[p] - slope).abs() < 1e-12 * slope.abs().max(1e-12));
        }
    }

    #[test]
    fn coherence_exact_on_flat_channel() {
        let sp = params(48, 6);
        let (tau, psi) = rand_tau_psi(6, 5, 1e-7);
        let batch = impaired(&flat_channel(48, 2.0), &tau, &psi, sp);
        let est = phase_coherence(&batch).unwrap();
        for p in 0..6 {
            assert!((est.tau[p] - tau[p]).abs() < 1e-20 + 1e-12 * tau[p]);
            assert!(wrap_angle(est.psi[p] - psi[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn coherence_zero_impairment_normalized_channel_gives_zero_tau() {
        let sp = params(64, 4);
        let b = two_tap_channel(64, sp.t_sym, 1.0, 7);
        let batch = impaired(&b, &vec![0.0; 4], &vec![0.0; 4], sp);
        let est = phase_coherence(&batch).unwrap();
        for p in 0..4 {
            assert!(est.tau[p].abs() < 1e-15, "tau {}", est.tau[p]);
        }
    }

    #[test]
    fn coherence_two_tap_with_impairments_stays_close() {
        let sp = params(256, 8);
        let b = two_tap_channel(256, sp.t_sym, 1.0, 11);
        let (tau, psi) = rand_tau_psi(8, 13, 1e-7);
        let batch = impaired(&b, &tau, &psi, sp);
        let est = phase_coherence(&batch).unwrap();
        let tol = 0.1 * sp.t_sym / 256.0;
        for p in 0..8 {
            assert!((est.tau[p] - tau[p]).abs() <= tol);
        }
    }

    #[test]
    fn workspace_recovers_static_estimate() {
        // flat channel: b̄ = b exactly even with impairments present
        let sp = params(32, 10);
        let b = flat_channel(32, 1.0);
        let (tau, psi) = rand_tau_psi(10, 17, 1e-7);
        let batch = impaired(&b, &tau, &psi, sp);
        let ws = coarse_workspace(&batch).unwrap();
        for k in 0..32 {
            assert!((ws.b_bar[k] - b[k]).norm() < 1e-9);
        }
        assert_eq!(ws.k_bar.len(), 32);

        // generic channel: b̄ matches b up to one global rotation
        let b = two_tap_channel(32, sp.t_sym, 1.0, 19);
        let batch = impaired(&b, &tau, &psi, sp);
        let ws = coarse_workspace(&batch).unwrap();
        let rot: Complex64 = b.iter().zip(&ws.b_bar).map(|(x, y)| y * x.conj()).sum();
        let rot = rot / rot.norm();
        for k in 0..32 {
            assert!((ws.b_bar[k] - b[k] * rot).norm() < 1e-9);
        }
    }

    #[test]
    fn workspace_averaging_suppresses_dynamics() {
        let gamma = 0.95;
        let sp = params(64, 300);
        let b = two_tap_channel(64, sp.t_sym, gamma, 23);
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let s = ((1.0 - gamma) / 2.0).sqrt();
        let mut data = Vec::new();
        let (tau, psi) = rand_tau_psi(300, 31, 1e-7);
        for p in 0..300 {
            for k in 0..64 {
                let d = Complex64::new(
                    s * rng.sample::<f64, _>(rand_distr::StandardNormal),
                    s * rng.sample::<f64, _>(rand_distr::StandardNormal),
                );
                let ph = -2.0 * PI * sp.f_k(k) * tau[p] - psi[p];
                data.push((b[k] + d) * Complex64::from_polar(1.0, ph));
            }
        }
        let batch = CsiBatch::new(sp, data, CsiKind::GainCorrected).unwrap();
        let ws = coarse_workspace(&batch).unwrap();
        // align the global rotation before comparing
        let rot: Complex64 = b.iter().zip(&ws.b_bar).map(|(x, y)| y * x.conj()).sum();
        let rot = rot / rot.norm();
        let num: f64 = b
            .iter()
            .zip(&ws.b_bar)
            .map(|(x, y)| (y - x * rot).norm_sqr())
            .sum();
        let den: f64 = b.iter().map(|x| x.norm_sqr()).sum();
        assert!(
            num / den <= 10.0 * (1.0 - gamma) / (gamma * 300.0),
            "residual {}",
            num / den
        );
    }

    #[test]
    fn workspace_falls_back_to_top_half_when_threshold_starves() {
        // two subcarriers hold nearly all the power: the 0.1-of-mean
        // threshold keeps fewer than 8, so the top half by magnitude is
        // used instead
        let k = 32;
        let sp = params(k, 12);
        let mut b = vec![Complex64::new(0.05, 0.0); k];
        b[3] = Complex64::new(3.0, 0.0);
        b[17] = Complex64::new(2.5, 0.5);
        let (tau, psi) = rand_tau_psi(12, 301, 5e-8);
        let batch = impaired(&b, &tau, &psi, sp);
        let ws = coarse_workspace(&batch).unwrap();
        assert_eq!(ws.k_bar.len(), k / 2);
        assert!(ws.k_bar.windows(2).all(|w| w[0] < w[1]), "not sorted");
        assert!(ws.k_bar.contains(&3));
        assert!(ws.k_bar.contains(&17));
    }

    #[test]
    fn robust_unwrap_constant_angle() {
        let omega: Vec<Complex64> = (0..20).map(|_| Complex64::from_polar(2.0, 0.7)).collect();
        let (u, flagged) = robust_unwrap(&omega);
        assert!(!flagged);
        for &t in &u {
            assert!(wrap_angle(t - 0.7).abs() < 1e-12);
        }
        let first = u[0];
        assert!(u.iter().all(|&t| (t - first).abs() < 1e-12));
    }

    #[test]
    fn robust_unwrap_monotone_ramp_has_no_jumps() {
        // ramp crossing ±π several times: 2π f_k τ' with τ' = 20 T_s / K
        let k = 256;
        let t_sym = 3.2e-6;
        let tau = 20.0 * t_sym / k as f64;
        let omega: Vec<Complex64> = (0..k)
            .map(|kk| Complex64::from_polar(1.0, 2.0 * PI * (kk as f64 / t_sym) * tau))
            .collect();
        let (u, _) = robust_unwrap(&omega);
        for w in u.windows(2) {
            let d = w[1] - w[0];
            assert!(d > 0.0 && d < PI / 4.0, "step {d}");
        }
    }

    #[test]
    fn robust_unwrap_tolerates_flipped_outlier() {
        let k = 256;
        let t_sym = 3.2e-6;
        let tau = 8.0 * t_sym / k as f64;
        let mut omega: Vec<Complex64> = (0..k)
            .map(|kk| Complex64::from_polar(1.0, 2.0 * PI * (kk as f64 / t_sym) * tau))
            .collect();
        let (clean, _) = robust_unwrap(&omega);
        omega[30] = -omega[30]; // flip one sample by π
        let (dirty, _) = robust_unwrap(&omega);
        for i in 0..k {
            if i == 30 {
                continue;
            }
            assert!(
                (clean[i] - dirty[i]).abs() < 1e-6,
                "index {i}: {} vs {}",
                clean[i],
                dirty[i]
            );
        }
    }

    #[test]
    fn wls_exact_line_and_singular_cases() {
        let k = 32;
        let t_sym = 3.2e-6;
        let freqs: Vec<f64> = (0..k).map(|kk| kk as f64 / t_sym).collect();
        let a = 3e-9;
        let c = 0.4;
        let omega: Vec<Complex64> = freqs
            .iter()
            .map(|&f| Complex64::from_polar(1.5, 2.0 * PI * f * a + c))
            .collect();
        let (inputs, _) = WlsInputs::from_omega(omega);
        let (tau, psi) = wls_solve(&inputs, &freqs, 0.0).unwrap();
        assert!((tau - a).abs() < 1e-12 * a);
        assert!(wrap_angle(psi - c).abs() < 1e-12);

        // weights concentrated on one subcarrier → singular
        let mut omega: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); k];
        omega[5] = Complex64::new(1.0, 0.3);
        let (inputs, _) = WlsInputs::from_omega(omega);
        assert!(matches!(
            wls_solve(&inputs, &freqs, 0.0),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn wls_matches_fine_grid_oracle() {
        let k = 64;
        let t_sym = 3.2e-6;
        let freqs: Vec<f64> = (0..k).map(|kk| kk as f64 / t_sym).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..5 {
            // random targets near a line so the minimizer is in range
            let slope = (rng.gen::<f64>() - 0.5) * 2e-8;
            let inter = (rng.gen::<f64>() - 0.5) * 2.0;
            let targets: Vec<f64> = freqs
                .iter()
                .map(|&f| 2.0 * PI * f * slope + inter + 0.3 * (rng.gen::<f64>() - 0.5))
                .collect();
            let weights: Vec<f64> = (0..k).map(|_| 0.1 + rng.gen::<f64>()).collect();
            let inputs = WlsInputs {
                omega: vec![Complex64::new(1.0, 0.0); k],
                targets: targets.clone(),
                weights: weights.clone(),
            };
            let (tau, psi) = wls_solve(&inputs, &freqs, 0.0).unwrap();
            // oracle: 1-D grid over δτ with closed-form ψ per candidate
            let obj = |dt: f64, ps: f64| -> f64 {
                freqs
                    .iter()
                    .zip(&targets)
                    .zip(&weights)
                    .map(|((&f, &u), &w)| {
                        let r = 2.0 * PI * f * dt + ps - u;
                        w * r * r
                    })
                    .sum()
            };
            let mut best = (f64::INFINITY, 0.0, 0.0);
            let span = 4e-8;
            let n_grid = 4001;
            for i in 0..n_grid {
                let dt = -span + 2.0 * span * i as f64 / (n_grid - 1) as f64;
                // optimal ψ for fixed δτ is the weighted mean residual
                let sw: f64 = weights.iter().sum();
                let ps = freqs
                    .iter()
                    .zip(&targets)
                    .zip(&weights)
                    .map(|((&f, &u), &w)| w * (u - 2.0 * PI * f * dt))
                    .sum::<f64>()
                    / sw;
                let o = obj(dt, ps);
                if o < best.0 {
                    best = (o, dt, ps);
                }
            }
            let grid_step = 2.0 * span / (n_grid - 1) as f64;
            assert!((tau - best.1).abs() <= grid_step, "τ {tau} vs {}", best.1);
            // the closed form attains at least the best grid value
            assert!(obj(tau, psi) <= best.0 + 1e-9 * best.0.abs());
        }
    }

    #[test]
    fn los_grid_recovers_within_grid_step() {
        let sp = params(64, 12);
        let b = two_tap_channel(64, sp.t_sym, 1.0, 41);
        let (tau, psi) = rand_tau_psi(12, 43, 1e-7);
        let batch = impaired(&b, &tau, &psi, sp);
        let est = phase_los_grid(&batch).unwrap();
        let grid_step = 2.0 * sp.tau_bound() / (TAU_GRID_POINTS - 1) as f64;
        // the estimates carry a common ψ anchor; compare differences
        let dpsi0 = wrap_angle(est.psi[0] - psi[0]);
        for p in 0..12 {
            assert!((est.tau[p] - tau[p]).abs() <= grid_step);
            assert!(
                wrap_angle(est.psi[p] - psi[p] - dpsi0).abs()
                    <= 2.0 * PI * sp.f_k(63) * grid_step + 1e-9
            );
        }
    }

    #[test]
    fn los_grid_accurate_on_strongly_static_batches() {
        // γ = 0.99 type-(i) dynamics at full geometry: median timing
        // error across frames below 5% of a sample period over K
        let gamma = 0.99;
        let sp = SystemParams::new(256, 300, 0.1, 3.2e-6);
        let b = two_tap_channel(256, sp.t_sym, gamma, 211);
        let mut rng = ChaCha12Rng::seed_from_u64(223);
        let s = ((1.0 - gamma) / 2.0).sqrt();
        let (tau, psi) = rand_tau_psi(300, 227, 1e-7);
        let mut data = Vec::new();
        for p in 0..300 {
            for k in 0..256 {
                let d = Complex64::new(
                    s * rng.sample::<f64, _>(rand_distr::StandardNormal),
                    s * rng.sample::<f64, _>(rand_distr::StandardNormal),
                );
                let ph = -2.0 * PI * sp.f_k(k) * tau[p] - psi[p];
                data.push((b[k] + d) * Complex64::from_polar(1.0, ph));
            }
        }
        let batch = CsiBatch::new(sp, data, CsiKind::GainCorrected).unwrap();
        let est = phase_los_grid(&batch).unwrap();
        let mut errs: Vec<f64> = (0..300).map(|p| (est.tau[p] - tau[p]).abs()).collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errs[150];
        assert!(
            median < 0.05 * sp.t_sym / 256.0,
            "median timing error {median:.3e}"
        );
    }

    #[test]
    fn los_grid_on_flat_channel_matches_coherence() {
        let sp = params(64, 6);
        let (tau, psi) = rand_tau_psi(6, 47, 8e-8);
        let batch = impaired(&flat_channel(64, 1.0), &tau, &psi, sp);
        let grid = phase_los_grid(&batch).unwrap();
        let coh = phase_coherence(&batch).unwrap();
        let grid_step = 2.0 * sp.tau_bound() / (TAU_GRID_POINTS - 1) as f64;
        for p in 0..6 {
            assert!((grid.tau[p] - coh.tau[p]).abs() <= grid_step);
        }
    }

    #[test]
    fn los_wls_exact_on_noiseless_batches() {
        let sp = params(64, 10);
        // flat channel so the ψ anchor is zero
        let b = flat_channel(64, 1.0);
        let (tau, psi) = rand_tau_psi(10, 53, 1e-7);
        let batch = impaired(&b, &tau, &psi, sp);
        let est = phase_los_wls(&batch).unwrap();
        for p in 0..10 {
            assert!((est.tau[p] - tau[p]).abs() < 1e-9 * tau[p].max(1e-9));
            assert!(wrap_angle(est.psi[p] - psi[p]).abs() < 1e-9);
        }
        // generic channel: τ still exact, cleaned CSI matches up to one
        // global rotation
        let b = two_tap_channel(64, sp.t_sym, 1.0, 59);
        let batch = impaired(&b, &tau, &psi, sp);
        let est = phase_los_wls(&batch).unwrap();
        for p in 0..10 {
            assert!((est.tau[p] - tau[p]).abs() < 1e-15 + 1e-9 * tau[p]);
        }
        let dpsi0 = wrap_angle(est.psi[0] - psi[0]);
        for p in 0..10 {
            assert!(wrap_angle(est.psi[p] - psi[p] - dpsi0).abs() < 1e-9);
        }
    }

    #[test]
    fn los_wls_matches_grid_on_strongly_static_batches() {
        let gamma = 0.99;
        let sp = params(64, 40);
        let b = two_tap_channel(64, sp.t_sym, gamma, 61);
        let mut rng = ChaCha12Rng::seed_from_u64(67);
        let s = ((1.0 - gamma) / 2.0).sqrt();
        let (tau, psi) = rand_tau_psi(40, 71, 1e-7);
        let mut data = Vec::new();
        for p in 0..40 {
            for k in 0..64 {
                let d = Complex64::new(
                    s * rng.sample::<f64, _>(rand_distr::StandardNormal),
                    s * rng.sample::<f64, _>(rand_distr::StandardNormal),
                );
                let ph = -2.0 * PI * sp.f_k(k) * tau[p] - psi[p];
                data.push((b[k] + d) * Complex64::from_polar(1.0, ph));
            }
        }
        let batch = CsiBatch::new(sp, data, CsiKind::GainCorrected).unwrap();
        let ws = coarse_workspace(&batch).unwrap();
        let grid = phase_los_grid_with(&batch, &ws).unwrap();
        let wls = phase_los_wls_with(&batch, &ws).unwrap();
        let grid_step = 2.0 * sp.tau_bound() / (TAU_GRID_POINTS - 1) as f64;
        let mut ok = 0;
        for p in 0..40 {
            if (grid.tau[p] - wls.tau[p]).abs() <= 2.0 * grid_step
                && wrap_angle(grid.psi[p] - wls.psi[p]).abs() <= 0.05
            {
                ok += 1;
            }
        }
        assert!(ok * 100 >= 95 * 40, "agreement {ok}/40");
    }

    #[test]
    fn remark_ablation_reproduces_ls_unwrap() {
        // with b̄ ≡ 1, τ̄ = 0, plain sequential unwrap and unit
        // magnitudes, the WLS path collapses to the ls-unwrap baseline
        let sp = params(48, 4);
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        let mut data = Vec::new();
        for _ in 0..4 {
            for _ in 0..48 {
                data.push(Complex64::from_polar(1.0, (rng.gen::<f64>() - 0.5) * 0.8));
            }
        }
        let batch = CsiBatch::new(sp, data, CsiKind::GainCorrected).unwrap();
        let baseline = phase_ls_unwrap(&batch).unwrap();
        let freqs = sp.freqs();
        for p in 0..4 {
            let omega: Vec<Complex64> = batch.frame(p).iter().map(|c| c.conj()).collect();
            let angles: Vec<f64> = omega.iter().map(|c| c.arg()).collect();
            let targets = unwrap_sequence(&angles);
            let weights: Vec<f64> = omega.iter().map(|c| c.norm()).collect();
            let inputs = WlsInputs {
                omega,
                targets,
                weights,
            };
            let (tau, psi) = wls_solve(&inputs, &freqs, 0.0).unwrap();
            assert!((tau - baseline.tau[p]).abs() < 1e-15);
            assert!(wrap_angle(psi - baseline.psi[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn seq_exact_on_noiseless_batches() {
        let sp = params(64, 30);
        let b = flat_channel(64, 1.0);
        let (tau, psi) = rand_tau_psi(30, 79, 1e-7);
        let batch = impaired(&b, &tau, &psi, sp);
        for variant in [SeqVariant::Wls, SeqVariant::Grid] {
            let est = phase_seq(&batch, variant).unwrap();
            let grid_step = 2.0 * sp.tau_bound() / (TAU_GRID_POINTS - 1) as f64;
            let tol = match variant {
                SeqVariant::Wls => 1e-12,
                SeqVariant::Grid => grid_step * 0.05, // parabolic refinement
            };
            for p in 0..30 {
                assert!(
                    (est.tau[p] - tau[p]).abs() <= tol.max(1e-9 * tau[p]),
                    "{variant:?} τ at {p}: {} vs {}",
                    est.tau[p],
                    tau[p]
                );
            }
        }
    }

    #[test]
    fn seq_impairment_free_estimates_are_zero() {
        let sp = params(64, 30);
        let b = flat_channel(64, 1.0);
        let batch = impaired(&b, &vec![0.0; 30], &vec![0.0; 30], sp);
        let est = phase_seq(&batch, SeqVariant::Wls).unwrap();
        for p in 0..30 {
            assert!(est.tau[p].abs() < 1e-12);
            assert!(est.psi[p].abs() < 1e-9);
        }
    }

    #[test]
    fn seq_needs_warmup_frames() {
        let sp = params(16, 8);
        let b = flat_channel(16, 1.0);
        let (tau, psi) = rand_tau_psi(8, 83, 1e-7);
        let batch = impaired(&b, &tau, &psi, sp);
        assert!(matches!(
            phase_seq(&batch, SeqVariant::Wls),
            Err(Error::Estimation { .. })
        ));
    }

    #[test]
    fn bidir_noiseless_matches_forward_and_keeps_late_frames() {
        let sp = params(64, 30);
        let b = two_tap_channel(64, sp.t_sym, 1.0, 89);
        let (tau, psi) = rand_tau_psi(30, 97, 1e-7);
        let batch = impaired(&b, &tau, &psi, sp);
        let fwd = phase_seq(&batch, SeqVariant::Wls).unwrap();
        let bid = phase_bidir(&batch, SeqVariant::Wls).unwrap();
        let half = 30 / 2;
        for p in 0..30 {
            if p > half {
                assert_eq!(fwd.tau[p], bid.tau[p], "late frame {p} re-estimated");
                assert_eq!(fwd.psi[p], bid.psi[p]);
            } else {
                assert!((fwd.tau[p] - bid.tau[p]).abs() < 1e-12);
                assert!(wrap_angle(fwd.psi[p] - bid.psi[p]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_phase_equivariance() {
        let gamma = 0.95;
        let sp = params(64, 40);
        let b = two_tap_channel(64, sp.t_sym, gamma, 101);
        let mut rng = ChaCha12Rng::seed_from_u64(103);
        let s = ((1.0 - gamma) / 2.0).sqrt();
        let (tau, psi) = rand_tau_psi(40, 107, 1e-7);
        let mut data = Vec::new();
        for p in 0..40 {
            for k in 0..64 {
                let d = Complex64::new(
                    s * rng.sample::<f64, _>(rand_distr::StandardNormal),
                    s * rng.sample::<f64, _>(rand_distr::StandardNormal),
                );
                let ph = -2.0 * PI * sp.f_k(k) * tau[p] - psi[p];
                data.push((b[k] + d) * Complex64::from_polar(1.0, ph));
            }
        }
        let batch = CsiBatch::new(sp, data.clone(), CsiKind::GainCorrected).unwrap();
        let c = 1.234;
        let rot = Complex64::from_polar(1.0, c);
        let shifted = CsiBatch::new(
            sp,
            data.iter().map(|&v| v * rot).collect(),
            CsiKind::GainCorrected,
        )
        .unwrap();
        for method in [
            PhaseMethod::LsUnwrap,
            PhaseMethod::Coherence,
            PhaseMethod::LosGrid,
            PhaseMethod::LosWls,
            PhaseMethod::SeqWls,
            PhaseMethod::SeqGrid,
            PhaseMethod::BidirWls,
            PhaseMethod::BidirGrid,
        ] {
            let e1 = estimate_phase(&batch, method).unwrap();
            let e2 = estimate_phase(&shifted, method).unwrap();
            for p in 0..40 {
                assert!(
                    (e1.tau[p] - e2.tau[p]).abs() < 1e-8 * sp.tau_bound(),
                    "{method}: τ moved at {p}"
                );
                assert!(
                    wrap_angle(e2.psi[p] - e1.psi[p] + c).abs() < 1e-8,
                    "{method}: ψ shift wrong at {p}"
                );
            }
        }
    }

    #[test]
    fn delay_equivariance() {
        let sp = params(64, 20);
        let b = two_tap_channel(64, sp.t_sym, 1.0, 109);
        let (tau, psi) = rand_tau_psi(20, 113, 5e-8);
        let batch = impaired(&b, &tau, &psi, sp);
        let delta = 8e-9;
        let shifted_tau: Vec<f64> = tau.iter().map(|t| t + delta).collect();
        let shifted = impaired(&b, &shifted_tau, &psi, sp);
        let grid_step = 2.0 * sp.tau_bound() / (TAU_GRID_POINTS - 1) as f64;
        for method in [
            PhaseMethod::Coherence,
            PhaseMethod::LosGrid,
            PhaseMethod::LosWls,
        ] {
            let e1 = estimate_phase(&batch, method).unwrap();
            let e2 = estimate_phase(&shifted, method).unwrap();
            let tol = match method {
                PhaseMethod::LosGrid => 2.0 * grid_step,
                _ => 1e-11,
            };
            for p in 0..20 {
                assert!(
                    ((e2.tau[p] - e1.tau[p]) - delta).abs() <= tol,
                    "{method}: Δτ at {p} = {}",
                    e2.tau[p] - e1.tau[p]
                );
            }
        }
    }

    #[test]
    fn conditional_ml_matches_exhaustive_grid_oracle() {
        // small instances: the 1-D search plus closed-form ψ must agree
        // with a dense 2-D search of the same objective. With K = 8 the
        // objective is periodic in τ with period T_s, so the bound must
        // stay under T_s/2 to keep the argmax alias-free: κ = 3 gives
        // ±3 T_s/8.
        let k = 8;
        let t_sym = 3.2e-6;
        let mut sp = SystemParams::new(k, 4, 0.1, t_sym);
        sp.kappa = 3.0;
        let freqs = sp.freqs();
        let bound = sp.tau_bound();
        let mut rng = ChaCha12Rng::seed_from_u64(127);
        for trial in 0..50 {
            // random instance of the estimation model: a static channel,
            // an accumulator of 3 noisily cleaned past frames, and one
            // impaired frame with (τ, ψ) inside the search bound
            let b = two_tap_channel(k, t_sym, 1.0, 500 + trial);
            let noise = 0.15;
            let acc: Vec<Complex64> = (0..k)
                .map(|kk| {
                    let mut s = Complex64::new(0.0, 0.0);
                    for _ in 0..3 {
                        s += b[kk]
                            + Complex64::new(
                                noise * (rng.gen::<f64>() - 0.5),
                                noise * (rng.gen::<f64>() - 0.5),
                            );
                    }
                    s
                })
                .collect();
            let tau_true = (rng.gen::<f64>() - 0.5) * 1.2 * bound;
            let psi_true = (rng.gen::<f64>() - 0.5) * 2.0 * PI;
            let frame: Vec<Complex64> = (0..k)
                .map(|kk| {
                    let ph = -2.0 * PI * freqs[kk] * tau_true - psi_true;
                    b[kk] * Complex64::from_polar(1.0, ph)
                        + Complex64::new(
                            noise * (rng.gen::<f64>() - 0.5),
                            noise * (rng.gen::<f64>() - 0.5),
                        )
                })
                .collect();
            let (tau_est, psi_est) = grid_search(&frame, &acc, &freqs, bound).unwrap();

            // dense 2-D oracle over the negative correlation objective
            // -Σ_k Re{e^{-j(2πf_k τ + ψ)} conj(h_k) s_k}; the inner sum
            // over k is hoisted per τ candidate, every (τ, ψ) pair is
            // still evaluated
            let nt = 2001;
            let npsi = 720;
            let psi_phasors: Vec<Complex64> = (0..npsi)
                .map(|j| Complex64::from_polar(1.0, -(-PI + 2.0 * PI * j as f64 / npsi as f64)))
                .collect();
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for i in 0..nt {
                let t = -bound + 2.0 * bound * i as f64 / (nt - 1) as f64;
                let c_of_t: Complex64 = (0..k)
                    .map(|kk| {
                        Complex64::from_polar(1.0, -2.0 * PI * freqs[kk] * t)
                            * frame[kk].conj()
                            * acc[kk]
                    })
                    .sum();
                for (j, &rot) in psi_phasors.iter().enumerate() {
                    let obj = -(rot * c_of_t).re;
                    if obj < best.0 {
                        let ps = -PI + 2.0 * PI * j as f64 / npsi as f64;
                        best = (obj, t, ps);
                    }
                }
            }
            let t_step = 2.0 * bound / (nt - 1) as f64;
            let our_step = 2.0 * bound / (TAU_GRID_POINTS - 1) as f64;
            assert!(
                (tau_est - best.1).abs() <= t_step + our_step,
                "trial {trial}: τ {tau_est} vs {}",
                best.1
            );
            let psi_step = 2.0 * PI / npsi as f64;
            assert!(
                wrap_angle(psi_est - best.2).abs()
                    <= psi_step + 2.0 * PI * freqs[k - 1] * (tau_est - best.1).abs() + 1e-9,
                "trial {trial}: ψ {psi_est} vs {}",
                best.2
            );
        }
    }
}
