//! `pabias` command-line front end.
//!
//! Every subcommand prints its CSV to stdout, or writes it under `--out-dir`
//! with a fixed file name. Nothing is written anywhere else.

use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use pabias::biasctl::{self, ClassifierConfig, ControllerConfig};
use pabias::calibrate;
use pabias::measure::{self, MeasRow};
use pabias::psusim::{self, InProcLink, PsuClient, PsuState, Register, StreamLink};
use pabias::signalgen::generate;
use pabias::{params_file, BiasPoint, IqBlock, PaParams, WaveformKind, WaveformSpec};

type Res<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "pabias", version, about = "Envelope-aware PA bias switching toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a test waveform as `t_s,i,q` CSV.
    Gen(GenArgs),
    /// Print `Constant` or `Varying` for a waveform's envelope.
    Classify(ClassifyArgs),
    /// Two-tone intermodulation test at one drive level.
    TwoTone(TwoToneArgs),
    /// CW rows re-driven to a fixed output power at each drain voltage.
    SweepBias(SweepArgs),
    /// CW output per band at a fixed drive.
    FreqResponse(FreqArgs),
    /// Fit amplifier parameters to CW anchor rows.
    Calibrate(CalibrateArgs),
    /// Replay a scenario through the bias controller and a simulated supply.
    RunController(ControllerArgs),
    /// Serve the drain-supply protocol on a TCP socket.
    PsuSim(PsuSimArgs),
    /// Command a supply's output voltage.
    PsuSet(PsuSetArgs),
    /// Read a supply register.
    PsuRead(PsuReadArgs),
}

#[derive(Args)]
struct WaveArgs {
    /// cw, fm, bpsk, qpsk, am, two-tone (ssb)
    #[arg(long, default_value = "cw")]
    kind: String,
    /// Peak envelope amplitude.
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 10e-3)]
    duration_s: f64,
    #[arg(long, default_value_t = measure::DEFAULT_SAMPLE_RATE)]
    sample_rate: f64,
    #[arg(long)]
    offset_hz: Option<f64>,
    #[arg(long)]
    deviation_hz: Option<f64>,
    /// Modulating rate for FM and AM.
    #[arg(long)]
    rate_hz: Option<f64>,
    /// AM modulation index.
    #[arg(long)]
    index: Option<f64>,
    #[arg(long)]
    symbol_rate_hz: Option<f64>,
    #[arg(long)]
    spacing_hz: Option<f64>,
}

impl WaveArgs {
    fn kind(&self) -> Res<WaveformKind> {
        let mut k = WaveformKind::from_name(&self.kind).ok_or_else(|| format!("unknown kind `{}`", self.kind))?;
        match &mut k {
            WaveformKind::Cw { offset_hz } => set(offset_hz, self.offset_hz),
            WaveformKind::Fm { deviation_hz, rate_hz } => {
                set(deviation_hz, self.deviation_hz);
                set(rate_hz, self.rate_hz);
            }
            WaveformKind::Psk { symbol_rate_hz, .. } => set(symbol_rate_hz, self.symbol_rate_hz),
            WaveformKind::Am { index, rate_hz } => {
                set(index, self.index);
                set(rate_hz, self.rate_hz);
            }
            WaveformKind::TwoTone { spacing_hz } => set(spacing_hz, self.spacing_hz),
        }
        Ok(k)
    }

    fn block(&self) -> Res<IqBlock> {
        let spec = WaveformSpec::new(self.kind()?, self.amplitude, self.duration_s);
        Ok(generate(&spec, self.sample_rate)?)
    }
}

fn set(slot: &mut f64, v: Option<f64>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Args)]
struct Output {
    /// Write the result here instead of stdout.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Output {
    fn emit(&self, file: &str, text: &str) -> Res<()> {
        match &self.out_dir {
            Some(dir) => write_in(dir, file, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn write_in(dir: &Path, file: &str, text: &str) -> Res<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(file), text)?;
    Ok(())
}

#[derive(Args)]
struct ModelArgs {
    /// Amplifier parameter file (`key = number` lines). Defaults apply when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Res<PaParams> {
        match &self.params {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Ok(params_file::parse(&text).map_err(|e| format!("{}: {e}", p.display()))?)
            }
            None => Ok(PaParams::default()),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    wave: WaveArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    wave: WaveArgs,
    /// Read `t_s,i,q` CSV instead of synthesizing.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = biasctl::DEFAULT_WINDOW_S)]
    window_s: f64,
    /// Also print the envelope metrics.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct TwoToneArgs {
    /// Composite input level; 0 dBFS is a CW carrier that would just reach saturation.
    #[arg(long, allow_hyphen_values = true)]
    drive_dbfs: f64,
    #[arg(long, default_value_t = 58.0)]
    vdd: f64,
    #[arg(long, default_value_t = 2.0)]
    idq: f64,
    #[arg(long)]
    band: Option<String>,
    #[arg(long, default_value_t = measure::DEFAULT_SPACING_HZ)]
    spacing_hz: f64,
    #[arg(long, default_value_t = measure::DEFAULT_IMD_LEN)]
    len: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated drain voltages.
    #[arg(long, value_delimiter = ',', required = true)]
    vdd: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    idq: f64,
    #[arg(long)]
    pout: f64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct FreqArgs {
    /// `all` or comma-separated band ids.
    #[arg(long, default_value = "all")]
    bands: String,
    /// CW input envelope.
    #[arg(long)]
    drive: f64,
    #[arg(long, default_value_t = 58.0)]
    vdd: f64,
    #[arg(long, default_value_t = 2.0)]
    idq: f64,
    /// Use each band's gain-equalized drain voltage instead of --vdd.
    #[arg(long)]
    equalize: bool,
    /// Equalization target; defaults to the weakest band's gain at 58 V.
    #[arg(long, allow_hyphen_values = true)]
    target_gain_db: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Anchor CSV (`vdd_V,gain_dB,eff_pct,pout_W,pdiss_W`); the built-in 1 kW table when omitted.
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Starting parameters.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 4000)]
    budget: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ControllerArgs {
    /// Lines of `t_s kind band setpoint_W`.
    #[arg(long)]
    scenario: PathBuf,
    /// Talk to a running `psu-sim` instead of an in-process supply.
    #[arg(long)]
    psu: Option<String>,
    #[arg(long, default_value_t = 58.0)]
    initial_v: f64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct PsuSimArgs {
    #[arg(long, default_value = "127.0.0.1:5025")]
    addr: String,
    #[arg(long, default_value_t = 48.0)]
    initial_v: f64,
    #[arg(long, default_value_t = psusim::DEFAULT_SLEW_V_PER_S)]
    slew: f64,
    #[arg(long, default_value_t = 10)]
    poll_ms: u64,
}

#[derive(Args)]
struct PsuSetArgs {
    #[arg(long, default_value = "127.0.0.1:5025")]
    addr: String,
    #[arg(long)]
    volts: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegArg {
    Voltage,
    Current,
}

#[derive(Args)]
struct PsuReadArgs {
    #[arg(long, default_value = "127.0.0.1:5025")]
    addr: String,
    #[arg(long, value_enum, default_value = "voltage")]
    register: RegArg,
}

fn iq_csv(b: &IqBlock) -> String {
    let mut s = String::from("t_s,i,q\n");
    let dt = 1.0 / b.sample_rate();
    for (k, x) in b.samples().iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", k as f64 * dt, x.re, x.im);
    }
    s
}

fn read_iq_csv(path: &Path) -> Res<IqBlock> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut t = Vec::new();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        if v.len() != 3 {
            return Err(format!("{} line {}: expected t_s,i,q", path.display(), i + 1).into());
        }
        t.push(v[0]);
        samples.push(Complex64::new(v[1], v[2]));
    }
    if t.len() < 2 {
        return Err(format!("{}: need at least two samples", path.display()).into());
    }
    let fs = (t.len() - 1) as f64 / (t[t.len() - 1] - t[0]);
    Ok(IqBlock::new(samples, fs)?)
}

fn parse_band(b: &Option<String>) -> Res<Option<pabias::Band>> {
    Ok(match b {
        Some(s) => Some(s.parse()?),
        None => None,
    })
}

fn run(cli: Cli) -> Res<()> {
    match cli.cmd {
        Cmd::Gen(a) => a.out.emit("gen.csv", &iq_csv(&a.wave.block()?)),
        Cmd::Classify(a) => {
            let block = match &a.input {
                Some(p) => read_iq_csv(p)?,
                None => a.wave.block()?,
            };
            let c = biasctl::classify_envelope_with(&block, a.window_s, &ClassifierConfig::default())?;
            println!("{}", c.kind);
            if a.verbose {
                println!(
                    "papr_dB={} ripple_ratio={} crest_dB={}",
                    c.papr_db, c.ripple_ratio, c.crest_db
                );
            }
            Ok(())
        }
        Cmd::TwoTone(a) => {
            let p = a.model.load()?;
            let band = parse_band(&a.band)?;
            let bias = BiasPoint::new(a.vdd, a.idq, biasctl::gate_step_for(a.idq))?;
            let peak = measure::two_tone_peak_for_dbfs(a.drive_dbfs, &bias, &p, band);
            let (row, _) = measure::two_tone_row(peak, &bias, &p, band, a.spacing_hz, a.len)?;
            a.out.emit("two_tone.csv", &measure::rows_to_csv(&[row]))
        }
        Cmd::SweepBias(a) => {
            let p = a.model.load()?;
            let rows = measure::sweep_bias(&a.vdd, a.idq, a.pout, &p)?;
            a.out.emit("sweep_bias.csv", &measure::rows_to_csv(&rows))
        }
        Cmd::FreqResponse(a) => {
            let p = a.model.load()?;
            let bands = measure::parse_bands(&a.bands)?;
            let table = a.equalize.then(|| {
                let target = a
                    .target_gain_db
                    .unwrap_or_else(|| biasctl::default_equalization_target(&p, &bands, a.idq));
                biasctl::equalize_gains(&p, &bands, target, a.idq)
            });
            let step = biasctl::gate_step_for(a.idq);
            let mut rows: Vec<MeasRow> = Vec::with_capacity(bands.len());
            for &b in &bands {
                let vdd = match &table {
                    Some(t) => t.get(b).map(|e| e.eq_vdd).unwrap_or(a.vdd),
                    None => a.vdd,
                };
                let bias = BiasPoint::new(vdd, a.idq, step)?;
                let st = measure::cw_stats(a.drive, &bias, &p, Some(b))?;
                rows.push(MeasRow::from_stats(&bias, Some(b), &st));
            }
            a.out.emit("freq_response.csv", &measure::rows_to_csv(&rows))
        }
        Cmd::Calibrate(a) => {
            let anchors = match &a.anchors {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                    calibrate::parse_anchors_csv(&text)?
                }
                None => calibrate::default_anchors(),
            };
            let init = ModelArgs { params: a.init.clone() }.load()?;
            let rep = calibrate::fit(&anchors, &init, a.budget)?;
            let mut cfg = format!(
                "# fitted to {} anchor rows, residual {}, {} evaluations\n",
                anchors.len(),
                rep.residual,
                rep.evaluations
            );
            cfg.push_str(&params_file::format(&rep.params));
            write_in(&a.out_dir, "fitted.cfg", &cfg)?;
            write_in(&a.out_dir, "fit_report.csv", &rep.to_csv())?;
            eprintln!("residual {} after {} evaluations", rep.residual, rep.evaluations);
            Ok(())
        }
        Cmd::RunController(a) => {
            let p = a.model.load()?;
            let text = fs::read_to_string(&a.scenario).map_err(|e| format!("{}: {e}", a.scenario.display()))?;
            let events = biasctl::parse_scenario(&text)?;
            let bands = pabias::Band::ALL;
            let table = biasctl::equalize_gains(
                &p,
                &bands,
                biasctl::default_equalization_target(&p, &bands, biasctl::IDQ_LINEAR),
                biasctl::IDQ_LINEAR,
            );
            let cfg = ControllerConfig::default();
            let log = match &a.psu {
                Some(addr) => {
                    let mut psu = PsuClient::new(StreamLink::connect(addr)?);
                    biasctl::run_controller(&events, &p, &table, cfg, &mut psu)?
                }
                None => {
                    let mut psu = PsuClient::new(InProcLink::spawn(PsuState::new(
                        a.initial_v,
                        psusim::DEFAULT_SLEW_V_PER_S,
                    )));
                    biasctl::run_controller(&events, &p, &table, cfg, &mut psu)?
                }
            };
            a.out.emit("command_log.csv", &biasctl::command_log_csv(&log))
        }
        Cmd::PsuSim(a) => {
            let listener = TcpListener::bind(&a.addr)?;
            eprintln!("psu-sim listening on {}", listener.local_addr()?);
            let state = PsuState::new(a.initial_v, a.slew);
            psusim::serve(
                listener,
                state,
                Duration::from_millis(a.poll_ms.max(1)),
                Arc::new(AtomicBool::new(false)),
            )?;
            Ok(())
        }
        Cmd::PsuSet(a) => {
            let mut c = PsuClient::new(StreamLink::connect(&a.addr)?);
            println!("{}", c.set_voltage(a.volts)?);
            Ok(())
        }
        Cmd::PsuRead(a) => {
            let mut c = PsuClient::new(StreamLink::connect(&a.addr)?);
            let reg = match a.register {
                RegArg::Voltage => Register::Voltage,
                RegArg::Current => Register::Current,
            };
            println!("{}", c.read(reg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
