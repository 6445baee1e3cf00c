//! CSI cleaning command line: simulate impaired batches, clean them with
//! selectable gain/phase methods, evaluate against ground truth, compute
//! Doppler spectra and respiration SNR, and run benchmark sweeps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure. Diagnostics go to stderr; machine-readable artifacts only to
//! the requested output files.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csi_clean::error::Error;
use csi_clean::eval::{
    bench_sweep, chi_metric, doppler_spectrum, respiration_snr, rows_to_csv, BenchConfig,
};
use csi_clean::gain::estimate_gain;
use csi_clean::io::{read_csib, write_csib};
use csi_clean::phase::estimate_phase;
use csi_clean::sim::{simulate, DynamicKind, SimConfig};
use csi_clean::types::{
    apply_correction, gain_correct, CsiBatch, GainEstimate, GainMethod, GroundTruth, PhaseEstimate,
    PhaseMethod,
};

#[derive(Parser)]
#[command(
    name = "csi-clean",
    about = "Simulate, clean and evaluate WiFi CSI batches",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an impaired CSI batch with ground truth.
    Simulate(SimulateArgs),
    /// Estimate and remove gain and phase errors from a batch.
    Clean(CleanArgs),
    /// Score a cleaned batch against the ground truth of its source.
    Eval(EvalArgs),
    /// Doppler power spectrum of a batch over a frequency grid.
    Doppler(DopplerArgs),
    /// Respiration-band SNR of a batch at a known rate.
    RespSnr(RespSnrArgs),
    /// Monte-Carlo sweep over gammas, dynamic types and methods.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DynArg {
    Iid,
    Path,
}

impl From<DynArg> for DynamicKind {
    fn from(d: DynArg) -> Self {
        match d {
            DynArg::Iid => DynamicKind::Iid,
            DynArg::Path => DynamicKind::BandlimitedPath,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GainArg {
    Norm,
    ClusterAbs,
    ClusterInc,
    UniformMl,
    Ideal,
    None,
}

impl From<GainArg> for GainMethod {
    fn from(g: GainArg) -> Self {
        match g {
            GainArg::Norm => GainMethod::Norm,
            GainArg::ClusterAbs => GainMethod::ClusterAbs,
            GainArg::ClusterInc => GainMethod::ClusterInc,
            GainArg::UniformMl => GainMethod::UniformMl,
            GainArg::Ideal => GainMethod::Ideal,
            GainArg::None => GainMethod::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    LsUnwrap,
    Coherence,
    LosGrid,
    LosWls,
    SeqGrid,
    SeqWls,
    BidirGrid,
    BidirWls,
    Ideal,
    None,
}

impl From<PhaseArg> for PhaseMethod {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::LsUnwrap => PhaseMethod::LsUnwrap,
            PhaseArg::Coherence => PhaseMethod::Coherence,
            PhaseArg::LosGrid => PhaseMethod::LosGrid,
            PhaseArg::LosWls => PhaseMethod::LosWls,
            PhaseArg::SeqGrid => PhaseMethod::SeqGrid,
            PhaseArg::SeqWls => PhaseMethod::SeqWls,
            PhaseArg::BidirGrid => PhaseMethod::BidirGrid,
            PhaseArg::BidirWls => PhaseMethod::BidirWls,
            PhaseArg::Ideal => PhaseMethod::Ideal,
            PhaseArg::None => PhaseMethod::None,
        }
    }
}

/// Simulation knobs shared by `simulate` and `bench`. Flags override the
/// JSON config file, which overrides the defaults.
#[derive(Args)]
struct SimOverrides {
    /// JSON simulation config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Static power fraction in [0, 1].
    #[arg(long)]
    gamma: Option<f64>,
    /// Dynamic-component model.
    #[arg(long = "dyn", value_enum)]
    dynamic: Option<DynArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Subcarrier count K.
    #[arg(long)]
    subcarriers: Option<usize>,
    /// Frame count P.
    #[arg(long)]
    frames: Option<usize>,
    /// Frame interval in seconds.
    #[arg(long)]
    t_rep: Option<f64>,
    /// OFDM symbol duration in seconds.
    #[arg(long)]
    t_sym: Option<f64>,
}

impl SimOverrides {
    fn build(&self) -> Result<SimConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => SimConfig::default(),
        };
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(d) = self.dynamic {
            cfg.dynamic_kind = d.into();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.subcarriers {
            cfg.params.subcarriers = k;
        }
        if let Some(p) = self.frames {
            cfg.params.frames = p;
        }
        if let Some(t) = self.t_rep {
            cfg.params.t_rep = t;
        }
        if let Some(t) = self.t_sym {
            cfg.params.t_sym = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimOverrides,
    /// Output CSIB file (batch + ground truth).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct CleanArgs {
    /// Input CSIB file.
    #[arg(long = "in", short)]
    input: PathBuf,
    #[arg(long, value_enum)]
    gain: GainArg,
    #[arg(long, value_enum)]
    phase: PhaseArg,
    /// Output CSIB file with the cleaned batch (ground truth carried
    /// over when present).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// CSIB file carrying the ground truth (typically the simulate output).
    #[arg(long)]
    truth: PathBuf,
    /// CSIB file with the cleaned batch.
    #[arg(long)]
    cleaned: PathBuf,
    /// Output JSON report.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct NuGrid {
    /// Doppler grid start, Hz.
    #[arg(long, default_value_t = 0.1)]
    nu_min: f64,
    /// Doppler grid end, Hz.
    #[arg(long, default_value_t = 0.5)]
    nu_max: f64,
    /// Doppler grid step, Hz.
    #[arg(long, default_value_t = 0.02)]
    nu_step: f64,
}

impl NuGrid {
    fn build(&self) -> Result<Vec<f64>, Error> {
        if !(self.nu_step > 0.0) || self.nu_max < self.nu_min {
            return Err(Error::InvalidConfig(format!(
                "bad doppler grid {}..{} step {}",
                self.nu_min, self.nu_max, self.nu_step
            )));
        }
        let n = ((self.nu_max - self.nu_min) / self.nu_step + 1.0 + 1e-9).floor() as usize;
        Ok((0..n)
            .map(|i| self.nu_min + i as f64 * self.nu_step)
            .collect())
    }
}

#[derive(Args)]
struct DopplerArgs {
    /// Input CSIB file.
    #[arg(long = "in", short)]
    input: PathBuf,
    #[command(flatten)]
    grid: NuGrid,
    /// Ground-truth rate annotation, Hz.
    #[arg(long)]
    nu0: Option<f64>,
    /// Output CSV (nu, power).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RespSnrArgs {
    /// Input CSIB file.
    #[arg(long = "in", short)]
    input: PathBuf,
    #[command(flatten)]
    grid: NuGrid,
    /// Ground-truth respiration rate, Hz.
    #[arg(long)]
    nu0: f64,
    /// Output JSON.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    sim: SimOverrides,
    /// Comma-separated static power fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.9")]
    gammas: Vec<f64>,
    /// Comma-separated dynamic types.
    #[arg(
        long = "dyns",
        value_enum,
        value_delimiter = ',',
        default_value = "iid"
    )]
    dynamics: Vec<DynArg>,
    /// Gain methods evaluated under ideal phase correction.
    #[arg(long, value_enum, value_delimiter = ',')]
    gain_methods: Vec<GainArg>,
    /// Phase methods evaluated under ideal gain correction.
    #[arg(long, value_enum, value_delimiter = ',')]
    phase_methods: Vec<PhaseArg>,
    #[arg(long, default_value_t = 10)]
    realizations: usize,
    /// Output CSV with one row per (cell, realization, method).
    #[arg(long, short)]
    out: PathBuf,
    /// Optional JSON summary (medians and quartiles per cell).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Include wall-clock readings in the CSV (breaks byte-for-byte
    /// reproducibility of the artifact).
    #[arg(long, default_value_t = false)]
    timing: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/usage; usage problems exit 1
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.sim.build()?;
            let (batch, truth) = simulate(&cfg)?;
            write_csib(&args.out, &batch, Some(&truth))?;
            eprintln!(
                "wrote {} ({} frames x {} subcarriers, gamma {})",
                args.out.display(),
                batch.frames(),
                batch.subcarriers(),
                cfg.gamma
            );
            Ok(())
        }
        Command::Clean(args) => {
            let (batch, truth) = read_csib(&args.input)?;
            let cleaned =
                clean_pipeline(&batch, truth.as_ref(), args.gain.into(), args.phase.into())?;
            write_csib(&args.out, &cleaned, truth.as_ref())?;
            eprintln!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let (_, truth) = read_csib(&args.truth)?;
            let truth = truth.ok_or(Error::MissingTruth("ground truth in --truth file"))?;
            let (cleaned, _) = read_csib(&args.cleaned)?;
            let report = chi_metric(&cleaned, &truth)?;
            fs::write(&args.out, serde_json::to_string_pretty(&report).unwrap())?;
            eprintln!("chi = {:.6}, snr = {:.3} dB", report.chi, report.snr_db);
            Ok(())
        }
        Command::Doppler(args) => {
            let (batch, _) = read_csib(&args.input)?;
            let grid = args.grid.build()?;
            let mut spec = doppler_spectrum(&batch, &grid)?;
            spec.nu0 = args.nu0;
            let mut csv = String::from("nu_hz,power\n");
            for (nu, h) in spec.nu.iter().zip(&spec.power) {
                csv.push_str(&format!("{nu},{h:.12e}\n"));
            }
            fs::write(&args.out, csv)?;
            Ok(())
        }
        Command::RespSnr(args) => {
            let (batch, _) = read_csib(&args.input)?;
            let grid = args.grid.build()?;
            let mut spec = doppler_spectrum(&batch, &grid)?;
            spec.nu0 = Some(args.nu0);
            let snr = respiration_snr(&spec, args.nu0)?;
            let json = serde_json::json!({
                "nu0_hz": args.nu0,
                "resp_snr": snr,
                "resp_snr_db": 10.0 * snr.log10(),
            });
            fs::write(&args.out, serde_json::to_string_pretty(&json).unwrap())?;
            eprintln!("respiration SNR at {} Hz: {:.4}", args.nu0, snr);
            Ok(())
        }
        Command::Bench(args) => {
            let base = args.sim.build()?;
            let cfg = BenchConfig {
                base,
                gammas: args.gammas.clone(),
                dynamics: args.dynamics.iter().map(|&d| d.into()).collect(),
                gain_methods: args.gain_methods.iter().map(|&g| g.into()).collect(),
                phase_methods: args.phase_methods.iter().map(|&p| p.into()).collect(),
                realizations: args.realizations,
                seed: args.sim.seed.unwrap_or(0),
            };
            let results = bench_sweep(&cfg)?;
            fs::write(&args.out, rows_to_csv(&results.rows, args.timing))?;
            if let Some(path) = &args.summary {
                fs::write(
                    path,
                    serde_json::to_string_pretty(&results.summaries).unwrap(),
                )?;
            }
            for f in &results.failures {
                eprintln!("warning: {f}");
            }
            if results.rows.is_empty() && !results.failures.is_empty() {
                return Err(Error::Estimation {
                    method: "bench",
                    frame: 0,
                    reason: "every realization failed".into(),
                });
            }
            eprintln!(
                "wrote {} rows to {}",
                results.rows.len(),
                args.out.display()
            );
            Ok(())
        }
    }
}

/// read → gain method → phase method → apply correction.
fn clean_pipeline(
    batch: &CsiBatch,
    truth: Option<&GroundTruth>,
    gain_method: GainMethod,
    phase_method: PhaseMethod,
) -> Result<CsiBatch, Error> {
    let need_truth = || truth.ok_or(Error::MissingTruth("impairment records for ideal mode"));
    let gains: GainEstimate = match gain_method {
        GainMethod::Ideal => need_truth()?.ideal_gains()?,
        other => estimate_gain(batch, other)?,
    };
    let gain_corrected = gain_correct(batch, &gains)?;
    let phases: PhaseEstimate = match phase_method {
        PhaseMethod::Ideal => need_truth()?.ideal_phases()?,
        other => estimate_phase(&gain_corrected, other)?,
    };
    let unit = GainEstimate::identity(batch.frames());
    apply_correction(&gain_corrected, &unit, &phases)
}
