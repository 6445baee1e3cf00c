//! Simulation of impaired CSI batches with ground truth.
//!
//! The true channel is `h[p][k] = b_k + d[p][k]` where the static part
//! `b` comes from a tapped-delay-line profile (normalized so that
//! `angle(Σ_k b_k b*_{k+1}) = 0` and `Σ_k |b_k|² / K = γ`) and the
//! dynamic part is either i.i.d. complex Gaussian or a single extra path
//! with a band-limited fading coefficient. Receiver impairments are a
//! band-limited large-scale gain, an AGC gain drawn from a discrete
//! grid, and per-frame uniform timing/phase errors.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CsiBatch, CsiKind, GroundTruth, SystemParams};

/// Dynamic-component model: type (i) i.i.d. across frames and
/// subcarriers, or type (ii) a single moving path with band-limited
/// Doppler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicKind {
    Iid,
    BandlimitedPath,
}

impl DynamicKind {
    pub fn name(&self) -> &'static str {
        match self {
            DynamicKind::Iid => "iid",
            DynamicKind::BandlimitedPath => "path",
        }
    }
}

/// One tap of a power-delay profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdpTap {
    pub delay_s: f64,
    pub power: f64,
}

/// Full simulation configuration. Serializable as the JSON config the
/// CLI accepts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub params: SystemParams,
    /// Static power fraction γ ∈ (0, 1].
    pub gamma: f64,
    pub dynamic_kind: DynamicKind,
    /// AGC grid as (level_db, probability) pairs.
    pub agc_grid_db: Vec<(f64, f64)>,
    pub large_scale_std_db: f64,
    pub large_scale_band_hz: (f64, f64),
    /// Doppler band of the type (ii) fading coefficient.
    pub dynamic_band_hz: (f64, f64),
    /// Upper bound of the type (ii) extra-path delay draw.
    pub path_delay_spread_max_s: f64,
    /// Upper bound of the per-frame timing-error draw.
    pub timing_err_max_s: f64,
    /// Half-width of the per-frame CPE draw: ψ ~ Uni[-max, max).
    pub cpe_max_rad: f64,
    /// Power-delay profile of the static component.
    pub pdp: Vec<PdpTap>,
    pub seed: u64,
}

/// Default static profile: two exponentially decaying clusters starting
/// at 0 ns and 60 ns, 10 ns tap spacing, 14 taps, ~30 ns RMS delay
/// spread overall.
pub fn default_pdp() -> Vec<PdpTap> {
    let mut taps = Vec::with_capacity(14);
    for i in 0..6 {
        let d = i as f64 * 10e-9;
        taps.push(PdpTap {
            delay_s: d,
            power: (-d / 45e-9).exp(),
        });
    }
    for i in 0..8 {
        let d = i as f64 * 10e-9;
        taps.push(PdpTap {
            delay_s: 60e-9 + d,
            power: 0.18 * (-d / 45e-9).exp(),
        });
    }
    taps
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            params: SystemParams::new(256, 300, 0.1, 3.2e-6),
            gamma: 0.9,
            dynamic_kind: DynamicKind::Iid,
            agc_grid_db: vec![(-0.5, 0.2), (0.0, 0.6), (0.5, 0.2)],
            large_scale_std_db: 0.2,
            large_scale_band_hz: (0.0, 0.1),
            dynamic_band_hz: (0.5, 1.0),
            path_delay_spread_max_s: 300e-9,
            timing_err_max_s: 1e-7,
            cpe_max_rad: PI,
            pdp: default_pdp(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        if self.agc_grid_db.is_empty() {
            return Err(Error::InvalidConfig("empty AGC grid".into()));
        }
        let psum: f64 = self.agc_grid_db.iter().map(|&(_, p)| p).sum();
        if (psum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "AGC grid probabilities sum to {psum}, expected 1"
            )));
        }
        if self.agc_grid_db.iter().any(|&(_, p)| p < 0.0) {
            return Err(Error::InvalidConfig("negative AGC probability".into()));
        }
        if self.large_scale_std_db < 0.0 {
            return Err(Error::InvalidConfig("negative large-scale std".into()));
        }
        let nyq = 0.5 / self.params.t_rep;
        for &(lo, hi) in [&self.large_scale_band_hz, &self.dynamic_band_hz] {
            if !(lo >= 0.0 && lo <= hi && hi <= nyq) {
                return Err(Error::BadBand {
                    lo,
                    hi,
                    nyquist: nyq,
                });
            }
        }
        if self.pdp.iter().any(|t| t.power < 0.0 || t.delay_s < 0.0) {
            return Err(Error::InvalidConfig("negative PDP tap".into()));
        }
        if self.timing_err_max_s < 0.0 || self.path_delay_spread_max_s < 0.0 {
            return Err(Error::InvalidConfig("negative delay bound".into()));
        }
        if self.cpe_max_rad < 0.0 || self.cpe_max_rad > PI {
            return Err(Error::InvalidConfig(format!(
                "cpe_max_rad must be in [0, π], got {}",
                self.cpe_max_rad
            )));
        }
        Ok(())
    }
}

/// Labeled sub-stream of the master seed. Each purpose draws from its
/// own stream so changing one config knob does not perturb unrelated
/// draws.
#[derive(Debug, Clone, Copy)]
pub enum StreamLabel {
    Static = 1,
    Dynamic = 2,
    GainLarge = 3,
    GainAgc = 4,
    Timing = 5,
    Cpe = 6,
}

/// Deterministic per-purpose RNG derived from the master seed.
pub fn rng_stream(seed: u64, label: StreamLabel) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(label as u64).to_le_bytes());
    key[16..].copy_from_slice(b"csi-clean.rng.v1");
    ChaCha12Rng::from_seed(key)
}

/// Derive a realization-specific master seed for sweeps.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    // splitmix64 over the concatenated words
    let mut z = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &w in words {
        z = z.wrapping_add(w).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn complex_normal(rng: &mut ChaCha12Rng) -> Complex64 {
    Complex64::new(standard_normal(rng), standard_normal(rng))
}

/// Synthesize a band-limited sequence: i.i.d. complex Gaussian
/// coefficients on the DFT bins inside `band`, zero elsewhere, inverse
/// transform. The result has energy only on those bins.
fn bandlimited_raw(
    n: usize,
    t_rep: f64,
    band: (f64, f64),
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Complex64>> {
    let nyquist = 0.5 / t_rep;
    let (lo, hi) = band;
    if !(lo >= 0.0 && lo <= hi && hi <= nyquist) {
        return Err(Error::BadBand { lo, hi, nyquist });
    }
    let df = 1.0 / (n as f64 * t_rep);
    let bins: Vec<usize> = (0..n)
        .map(|i| (i, i as f64 * df))
        .take_while(|&(_, f)| f <= nyquist + 1e-12)
        .filter(|&(_, f)| f >= lo - 1e-12 && f <= hi + 1e-12)
        .map(|(i, _)| i)
        .collect();
    if bins.is_empty() {
        return Err(Error::BadBand { lo, hi, nyquist });
    }
    let coeffs: Vec<Complex64> = bins.iter().map(|_| complex_normal(rng)).collect();
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for (bi, &bin) in bins.iter().enumerate() {
        let step = Complex64::from_polar(1.0, 2.0 * PI * bin as f64 / n as f64);
        let mut ph = Complex64::new(1.0, 0.0);
        for xt in x.iter_mut() {
            *xt += coeffs[bi] * ph;
            ph *= step;
        }
    }
    Ok(x)
}

/// Band-limited real Gaussian sequence rescaled so its sample mean
/// square equals `variance` exactly. Zero variance yields zeros.
pub fn bandlimited_real(
    n: usize,
    t_rep: f64,
    band: (f64, f64),
    variance: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    if variance == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let x = bandlimited_raw(n, t_rep, band, rng)?;
    let mut y: Vec<f64> = x.iter().map(|c| c.re).collect();
    let ms = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if ms <= 0.0 {
        return Err(Error::ZeroDenominator("band-limited synthesis"));
    }
    let s = (variance / ms).sqrt();
    y.iter_mut().for_each(|v| *v *= s);
    Ok(y)
}

/// Band-limited circular complex Gaussian sequence with sample mean
/// square power equal to `variance` exactly.
pub fn bandlimited_complex(
    n: usize,
    t_rep: f64,
    band: (f64, f64),
    variance: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Complex64>> {
    if variance == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    let mut x = bandlimited_raw(n, t_rep, band, rng)?;
    let ms = x.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
    if ms <= 0.0 {
        return Err(Error::ZeroDenominator("band-limited synthesis"));
    }
    let s = (variance / ms).sqrt();
    x.iter_mut().for_each(|v| *v *= s);
    Ok(x)
}

/// Generate the static component b. Returns the vector and the realized
/// line-of-sight delay (earliest tap plus the normalization shift).
pub fn gen_static_component(
    cfg: &SimConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<Complex64>, f64)> {
    if cfg.pdp.is_empty() {
        return Err(Error::EmptyPdp);
    }
    let total: f64 = cfg.pdp.iter().map(|t| t.power).sum();
    if total <= 0.0 {
        return Err(Error::InvalidConfig("PDP has no power".into()));
    }
    let k_count = cfg.params.subcarriers;
    let amps: Vec<Complex64> = cfg
        .pdp
        .iter()
        .map(|t| complex_normal(rng) * (t.power / total / 2.0).sqrt())
        .collect();
    let mut b = vec![Complex64::new(0.0, 0.0); k_count];
    for (tap, &a) in cfg.pdp.iter().zip(&amps) {
        for (k, bk) in b.iter_mut().enumerate() {
            let ph = -2.0 * PI * cfg.params.f_k(k) * tap.delay_s;
            *bk += a * Complex64::from_polar(1.0, ph);
        }
    }
    // delay-shift so angle(sum_k b_k b*_{k+1}) = 0
    let corr: Complex64 = (0..k_count - 1).map(|k| b[k] * b[k + 1].conj()).sum();
    let delta = -corr.arg() * cfg.params.t_sym / (2.0 * PI);
    for (k, bk) in b.iter_mut().enumerate() {
        *bk *= Complex64::from_polar(1.0, -2.0 * PI * cfg.params.f_k(k) * delta);
    }
    // scale so sum |b_k|^2 / K = gamma exactly
    let pow: f64 = b.iter().map(|c| c.norm_sqr()).sum::<f64>() / k_count as f64;
    if pow <= 0.0 {
        return Err(Error::ZeroDenominator("static component power"));
    }
    let s = (cfg.gamma / pow).sqrt();
    b.iter_mut().for_each(|c| *c *= s);

    let los = cfg
        .pdp
        .iter()
        .map(|t| t.delay_s)
        .fold(f64::INFINITY, f64::min)
        + delta;
    Ok((b, los))
}

/// Generate the dynamic component d, frame-major P×K.
pub fn gen_dynamic_component(
    cfg: &SimConfig,
    los_delay: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Complex64>> {
    let (p_count, k_count) = (cfg.params.frames, cfg.params.subcarriers);
    let var = 1.0 - cfg.gamma;
    if var == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); p_count * k_count]);
    }
    match cfg.dynamic_kind {
        DynamicKind::Iid => {
            let s = (var / 2.0).sqrt();
            Ok((0..p_count * k_count)
                .map(|_| complex_normal(rng) * s)
                .collect())
        }
        DynamicKind::BandlimitedPath => {
            let extra = rng.gen::<f64>() * cfg.path_delay_spread_max_s;
            let path_delay = extra + los_delay;
            let alpha =
                bandlimited_complex(p_count, cfg.params.t_rep, cfg.dynamic_band_hz, var, rng)?;
            let steer: Vec<Complex64> = (0..k_count)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * cfg.params.f_k(k) * path_delay))
                .collect();
            let mut d = Vec::with_capacity(p_count * k_count);
            for &a in &alpha {
                d.extend(steer.iter().map(|&s| a * s));
            }
            Ok(d)
        }
    }
}

/// Per-frame impairment draws.
#[derive(Debug, Clone)]
pub struct Impairments {
    pub gain_large_db: Vec<f64>,
    pub gain_agc_db: Vec<f64>,
    pub timing_err: Vec<f64>,
    pub cpe: Vec<f64>,
}

/// Generate the impairment processes: band-limited large-scale gain,
/// i.i.d. AGC grid draws, uniform timing error and uniform CPE.
pub fn gen_impairments(cfg: &SimConfig, seed: u64) -> Result<Impairments> {
    let p_count = cfg.params.frames;
    let mut rng_g1 = rng_stream(seed, StreamLabel::GainLarge);
    let gain_large_db = bandlimited_real(
        p_count,
        cfg.params.t_rep,
        cfg.large_scale_band_hz,
        cfg.large_scale_std_db * cfg.large_scale_std_db,
        &mut rng_g1,
    )?;

    let mut rng_g2 = rng_stream(seed, StreamLabel::GainAgc);
    let mut gain_agc_db = Vec::with_capacity(p_count);
    for _ in 0..p_count {
        let u = rng_g2.gen::<f64>();
        let mut acc = 0.0;
        let mut level = cfg.agc_grid_db.last().map(|&(l, _)| l).unwrap_or(0.0);
        for &(l, prob) in &cfg.agc_grid_db {
            acc += prob;
            if u < acc {
                level = l;
                break;
            }
        }
        gain_agc_db.push(level);
    }

    let mut rng_tau = rng_stream(seed, StreamLabel::Timing);
    let timing_err = (0..p_count)
        .map(|_| rng_tau.gen::<f64>() * cfg.timing_err_max_s)
        .collect();

    let mut rng_psi = rng_stream(seed, StreamLabel::Cpe);
    let cpe = (0..p_count)
        .map(|_| (rng_psi.gen::<f64>() - 0.5) * 2.0 * cfg.cpe_max_rad)
        .collect();

    Ok(Impairments {
        gain_large_db,
        gain_agc_db,
        timing_err,
        cpe,
    })
}

/// Run the full simulation: true channel plus impairments, observed CSI
/// and ground truth. Deterministic given `cfg.seed`.
pub fn simulate(cfg: &SimConfig) -> Result<(CsiBatch, GroundTruth)> {
    cfg.validate()?;
    let (p_count, k_count) = (cfg.params.frames, cfg.params.subcarriers);

    let mut rng_static = rng_stream(cfg.seed, StreamLabel::Static);
    let (b, los) = gen_static_component(cfg, &mut rng_static)?;

    let mut rng_dyn = rng_stream(cfg.seed, StreamLabel::Dynamic);
    let d = gen_dynamic_component(cfg, los, &mut rng_dyn)?;

    let imp = gen_impairments(cfg, cfg.seed)?;

    let freqs = cfg.params.freqs();
    let mut data = Vec::with_capacity(p_count * k_count);
    for p in 0..p_count {
        let g = 10f64.powf((imp.gain_large_db[p] + imp.gain_agc_db[p]) / 20.0);
        let rot_psi = Complex64::from_polar(1.0, -imp.cpe[p]);
        for k in 0..k_count {
            let h = b[k] + d[p * k_count + k];
            let rot_tau = Complex64::from_polar(1.0, -2.0 * PI * freqs[k] * imp.timing_err[p]);
            data.push(h * g * rot_tau * rot_psi);
        }
    }
    let batch = CsiBatch::new(cfg.params, data, CsiKind::Observed)?;
    let truth = GroundTruth {
        static_b: b,
        dynamic_d: d,
        gamma: cfg.gamma,
        gain_large_db: imp.gain_large_db,
        gain_agc_db: imp.gain_agc_db,
        timing_err: imp.timing_err,
        cpe: imp.cpe,
    };
    Ok((batch, truth))
}
