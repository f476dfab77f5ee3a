//! Envelope classification, bias-mode selection, drain tracking, per-band
//! gain equalization and the two-state bias controller.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::band::{Band, UnknownBand};
use crate::measure::{self, MeasureError};
use crate::pamodel::{BiasPoint, PaError, PaParams, REF_VDD, VDD_MAX, VDD_MIN};
use crate::psusim::{PsuClient, PsuError, SupplyLink};
use crate::signalgen::{envelope, generate, IqBlock, SignalError, WaveformKind, WaveformSpec};

pub const IDQ_LINEAR: f64 = 2.0;
pub const IDQ_COMPRESSION: f64 = 0.5;
/// Quiescent current selected by each gate-bias step.
pub const GATE_STEP_IDQ: [f64; 5] = [0.25, 0.5, 1.0, 1.5, 2.0];
pub const COMMAND_LOG_HEADER: &str = "t_s,mode,vdd_V,idq_A,gate_step";
/// Block length the controller synthesizes per scenario event.
pub const EVENT_BLOCK_S: f64 = 10e-3;
pub const DEFAULT_WINDOW_S: f64 = 5e-3;
const EQ_TOL_DB: f64 = 0.1;
const MAX_FIXED_POINT_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BiasError {
    #[error("block spans {have_s} s, window needs {need_s} s")]
    WindowTooShort { have_s: f64, need_s: f64 },
    #[error("band {0} is not in the band table")]
    UnknownBand(Band),
    #[error("{setpoint_w} W is beyond what the stage delivers ({max_w:.1} W at {vdd} V)")]
    SetpointUnreachable { setpoint_w: f64, vdd: f64, max_w: f64 },
    #[error("invalid setpoint {0} W")]
    InvalidSetpoint(f64),
    #[error("scenario line {line}: {msg}")]
    Scenario { line: usize, msg: String },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Model(#[from] PaError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Supply(#[from] PsuError),
}

/// Thresholds for the constant/varying decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub max_ripple_ratio: f64,
    pub max_papr_db: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            max_ripple_ratio: 0.05,
            max_papr_db: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvelopeKind {
    Constant,
    Varying,
}

impl fmt::Display for EnvelopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvelopeKind::Constant => "Constant",
            EnvelopeKind::Varying => "Varying",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeClass {
    pub kind: EnvelopeKind,
    pub papr_db: f64,
    /// (p99 − p1) / median of the envelope.
    pub ripple_ratio: f64,
    /// p99.9 envelope over RMS envelope, in dB. Used as the peak predictor.
    pub crest_db: f64,
}

impl EnvelopeClass {
    pub fn from_metrics(papr_db: f64, ripple_ratio: f64, crest_db: f64, cfg: &ClassifierConfig) -> Self {
        let kind = if ripple_ratio < cfg.max_ripple_ratio && papr_db < cfg.max_papr_db {
            EnvelopeKind::Constant
        } else {
            EnvelopeKind::Varying
        };
        Self {
            kind,
            papr_db,
            ripple_ratio,
            crest_db,
        }
    }
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(&next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

pub fn classify_envelope(block: &IqBlock, window_s: f64) -> Result<EnvelopeClass, BiasError> {
    classify_envelope_with(block, window_s, &ClassifierConfig::default())
}

/// Classify the first `window_s` of `block`.
pub fn classify_envelope_with(
    block: &IqBlock,
    window_s: f64,
    cfg: &ClassifierConfig,
) -> Result<EnvelopeClass, BiasError> {
    let n = (window_s * block.sample_rate()).round() as usize;
    if n == 0 || n > block.len() {
        return Err(BiasError::WindowTooShort {
            have_s: block.duration_s(),
            need_s: window_s,
        });
    }
    let mut env = envelope(block);
    env.truncate(n);
    let mean_p = env.iter().map(|a| a * a).sum::<f64>() / n as f64;
    if mean_p == 0.0 {
        return Ok(EnvelopeClass::from_metrics(0.0, 0.0, 0.0, cfg));
    }
    let peak_p = env.iter().fold(0.0f64, |m, a| m.max(a * a));
    env.sort_by(f64::total_cmp);
    let median = percentile(&env, 0.5);
    let ripple_ratio = if median > 0.0 {
        (percentile(&env, 0.99) - percentile(&env, 0.01)) / median
    } else {
        f64::INFINITY
    };
    let papr_db = 10.0 * (peak_p / mean_p).log10();
    let crest_db = 20.0 * (percentile(&env, 0.999) / mean_p.sqrt()).log10();
    Ok(EnvelopeClass::from_metrics(papr_db, ripple_ratio, crest_db, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Linear,
    Compression,
}

impl Mode {
    pub fn for_kind(kind: EnvelopeKind) -> Self {
        match kind {
            EnvelopeKind::Constant => Mode::Compression,
            EnvelopeKind::Varying => Mode::Linear,
        }
    }

    pub fn idq(self) -> f64 {
        match self {
            Mode::Linear => IDQ_LINEAR,
            Mode::Compression => IDQ_COMPRESSION,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Linear => "linear",
            Mode::Compression => "compression",
        })
    }
}

/// Nearest gate step for a quiescent current; ties go to the lower step.
pub fn gate_step_for(idq_target: f64) -> u8 {
    let mut best = 0;
    for (i, &v) in GATE_STEP_IDQ.iter().enumerate() {
        if (v - idq_target).abs() < (GATE_STEP_IDQ[best] - idq_target).abs() {
            best = i;
        }
    }
    best as u8
}

/// Supply voltage that keeps the drain just above the output envelope.
pub fn track_drain(peak_envelope_v: f64, margin: f64, vknee: f64) -> f64 {
    (peak_envelope_v * (1.0 + margin) + vknee).clamp(VDD_MIN, VDD_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandEntry {
    pub center_hz: f64,
    /// Drain voltage for linear mode on this band.
    pub eq_vdd: f64,
    pub ripple_db: f64,
    /// False when the target gain needed a voltage outside [30, 58] V;
    /// `eq_vdd` then holds the clamped endpoint.
    pub reachable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    entries: BTreeMap<Band, BandEntry>,
}

impl BandTable {
    /// All ten bands at a single drain voltage.
    pub fn uniform(vdd: f64, params: &PaParams) -> Self {
        let vdd = vdd.clamp(VDD_MIN, VDD_MAX);
        Self {
            entries: Band::ALL
                .iter()
                .map(|&b| {
                    (
                        b,
                        BandEntry {
                            center_hz: b.center_hz(),
                            eq_vdd: vdd,
                            ripple_db: params.ripple_db(Some(b)),
                            reachable: true,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn get(&self, band: Band) -> Option<&BandEntry> {
        self.entries.get(&band)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Band, &BandEntry)> {
        self.entries.iter().map(|(b, e)| (*b, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("band,center_Hz,ripple_dB,eq_vdd_V,reachable\n");
        for (b, e) in self.iter() {
            let _ = writeln!(
                s,
                "{b},{},{},{:.4},{}",
                e.center_hz, e.ripple_db, e.eq_vdd, e.reachable
            );
        }
        s
    }
}

/// Weakest band's small-signal gain at the supply ceiling: the highest
/// target every band can reach.
pub fn default_equalization_target(params: &PaParams, bands: &[Band], idq: f64) -> f64 {
    bands
        .iter()
        .map(|&b| params.small_signal_gain_db(VDD_MAX, idq, Some(b)))
        .fold(f64::INFINITY, f64::min)
}

/// Per-band drain voltage giving `target_gain_db` of small-signal gain.
/// Assumes gain monotone in vdd; unreachable bands are flagged.
pub fn equalize_gains(params: &PaParams, bands: &[Band], target_gain_db: f64, idq: f64) -> BandTable {
    let gain = |b: Band, v: f64| params.small_signal_gain_db(v, idq, Some(b));
    let entries = bands
        .iter()
        .map(|&b| {
            let (g_lo, g_hi) = (gain(b, VDD_MIN), gain(b, VDD_MAX));
            let rising = g_hi >= g_lo;
            let (lo_gain, hi_gain) = if rising { (g_lo, g_hi) } else { (g_hi, g_lo) };
            let (eq_vdd, reachable) = if target_gain_db < lo_gain - EQ_TOL_DB {
                (if rising { VDD_MIN } else { VDD_MAX }, false)
            } else if target_gain_db > hi_gain + EQ_TOL_DB {
                (if rising { VDD_MAX } else { VDD_MIN }, false)
            } else {
                let (mut lo, mut hi) = (VDD_MIN, VDD_MAX);
                let mut mid = 0.5 * (lo + hi);
                for _ in 0..100 {
                    mid = 0.5 * (lo + hi);
                    let err = gain(b, mid) - target_gain_db;
                    if err.abs() <= 1e-6 * EQ_TOL_DB {
                        break;
                    }
                    if (err < 0.0) == rising {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (mid, true)
            };
            (
                b,
                BandEntry {
                    center_hz: b.center_hz(),
                    eq_vdd,
                    ripple_db: params.ripple_db(Some(b)),
                    reachable,
                },
            )
        })
        .collect();
    BandTable { entries }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Headroom above the predicted drain envelope peak.
    pub margin: f64,
    /// Compression relative to small-signal gain in compression mode, dB.
    pub compression_db: f64,
    /// Consecutive windows a new class must persist before switching.
    pub hysteresis_windows: u32,
    pub window_s: f64,
    pub classifier: ClassifierConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            compression_db: 2.5,
            hysteresis_windows: 3,
            window_s: DEFAULT_WINDOW_S,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasCommand {
    pub target: BiasPoint,
    pub mode: Mode,
    /// CW-equivalent input envelope for this operating point.
    pub drive: f64,
    pub reason: EnvelopeClass,
}

pub fn decide_bias(
    cls: &EnvelopeClass,
    setpoint_w: f64,
    band: Band,
    params: &PaParams,
    table: &BandTable,
) -> Result<BiasCommand, BiasError> {
    command_for_mode(
        Mode::for_kind(cls.kind),
        cls,
        setpoint_w,
        band,
        params,
        table,
        &ControllerConfig::default(),
    )
}

/// Predicted output envelope peak for an average power at a drain voltage.
fn predicted_peak(setpoint_w: f64, crest_db: f64, params: &PaParams, vdd: f64) -> f64 {
    (2.0 * setpoint_w * params.load_resistance(vdd)).sqrt() * 10f64.powf(crest_db / 20.0)
}

/// Bias command for an explicitly chosen mode.
pub fn command_for_mode(
    mode: Mode,
    cls: &EnvelopeClass,
    setpoint_w: f64,
    band: Band,
    params: &PaParams,
    table: &BandTable,
    cfg: &ControllerConfig,
) -> Result<BiasCommand, BiasError> {
    if !(setpoint_w > 0.0 && setpoint_w.is_finite()) {
        return Err(BiasError::InvalidSetpoint(setpoint_w));
    }
    params.validate()?;
    let entry = table.get(band).ok_or(BiasError::UnknownBand(band))?;
    let idq = mode.idq();
    let step = gate_step_for(idq);
    match mode {
        Mode::Linear => {
            let vdd = entry.eq_vdd.clamp(VDD_MIN, VDD_MAX);
            let target = BiasPoint::new(vdd, idq, step)?;
            let drive = match measure::drive_for_pout(setpoint_w, &target, params, Some(band)) {
                Ok(d) => d,
                Err(MeasureError::TargetUnreachable { max_w, .. }) => {
                    return Err(BiasError::SetpointUnreachable {
                        setpoint_w,
                        vdd,
                        max_w,
                    })
                }
                Err(e) => return Err(e.into()),
            };
            Ok(BiasCommand {
                target,
                mode,
                drive,
                reason: *cls,
            })
        }
        Mode::Compression => {
            let max_w = params.saturated_power(VDD_MAX);
            if setpoint_w > max_w {
                return Err(BiasError::SetpointUnreachable {
                    setpoint_w,
                    vdd: VDD_MAX,
                    max_w,
                });
            }
            // load resistance depends on vdd, so settle vdd by iteration
            let mut vdd = REF_VDD;
            for _ in 0..MAX_FIXED_POINT_ITERS {
                let peak = predicted_peak(setpoint_w, cls.crest_db, params, vdd);
                let next = track_drain(peak, cfg.margin, params.vknee);
                let done = (next - vdd).abs() < 1e-9;
                vdd = next;
                if done {
                    break;
                }
            }
            let target = BiasPoint::new(vdd, idq, step)?;
            let drive = measure::compression_drive(&target, params, Some(band), cfg.compression_db)?;
            Ok(BiasCommand {
                target,
                mode,
                drive,
                reason: *cls,
            })
        }
    }
}

/// Two-state mode machine with persistence-based hysteresis. Starts in
/// linear mode, which is safe for any envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    cfg: ControllerConfig,
    mode: Mode,
    pending: u32,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Self {
        Self {
            cfg,
            mode: Mode::Linear,
            pending: 0,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    /// Feed one classification window; returns the mode in force afterwards.
    pub fn observe(&mut self, kind: EnvelopeKind) -> Mode {
        let wanted = Mode::for_kind(kind);
        if wanted == self.mode {
            self.pending = 0;
        } else {
            self.pending += 1;
            if self.pending >= self.cfg.hysteresis_windows {
                self.mode = wanted;
                self.pending = 0;
            }
        }
        self.mode
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioEvent {
    pub t_s: f64,
    pub kind: WaveformKind,
    pub band: Band,
    pub setpoint_w: f64,
}

/// One event per line: `t_s kind band setpoint_W`. `#` starts a comment.
/// Times must be strictly increasing.
pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioEvent>, BiasError> {
    let mut out: Vec<ScenarioEvent> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| BiasError::Scenario { line, msg };
        let fields: Vec<&str> = content.split_whitespace().collect();
        let [t, kind, band, setpoint] = fields[..] else {
            return Err(err(format!(
                "expected `t_s kind band setpoint_W`, got {} fields",
                fields.len()
            )));
        };
        let t_s: f64 = t.parse().map_err(|_| err(format!("bad time `{t}`")))?;
        if !t_s.is_finite() {
            return Err(err(format!("bad time `{t}`")));
        }
        let kind = WaveformKind::from_name(kind).ok_or_else(|| err(format!("unknown kind `{kind}`")))?;
        let band: Band = band.parse().map_err(|e: UnknownBand| err(e.to_string()))?;
        let setpoint_w: f64 = setpoint
            .parse()
            .map_err(|_| err(format!("bad setpoint `{setpoint}`")))?;
        if !(setpoint_w > 0.0 && setpoint_w.is_finite()) {
            return Err(err(format!("setpoint must be positive, got {setpoint}")));
        }
        if let Some(prev) = out.last() {
            if t_s <= prev.t_s {
                return Err(err(format!("time {t_s} does not follow {}", prev.t_s)));
            }
        }
        out.push(ScenarioEvent {
            t_s,
            kind,
            band,
            setpoint_w,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandLogRow {
    pub t_s: f64,
    pub mode: Mode,
    /// Set point acknowledged by the supply.
    pub vdd: f64,
    pub idq: f64,
    pub gate_step: u8,
}

pub fn command_log_csv(rows: &[CommandLogRow]) -> String {
    let mut s = format!("{COMMAND_LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.3},{},{}",
            r.t_s, r.mode, r.vdd, r.idq, r.gate_step
        );
    }
    s
}

/// Unit-amplitude block for a scenario event.
pub fn event_block(kind: WaveformKind) -> Result<IqBlock, BiasError> {
    Ok(generate(
        &WaveformSpec::new(kind, 1.0, EVENT_BLOCK_S),
        measure::DEFAULT_SAMPLE_RATE,
    )?)
}

/// Drive the scenario through the controller, commanding the supply over
/// `psu`. Supply time advances by the gap between events.
pub fn run_controller<L: SupplyLink>(
    events: &[ScenarioEvent],
    params: &PaParams,
    table: &BandTable,
    cfg: ControllerConfig,
    psu: &mut PsuClient<L>,
) -> Result<Vec<CommandLogRow>, BiasError> {
    let mut ctl = Controller::new(cfg);
    let mut log = Vec::with_capacity(events.len());
    let mut last_t: Option<f64> = None;
    for ev in events {
        if let Some(t) = last_t {
            psu.link_mut().advance(ev.t_s - t)?;
        }
        last_t = Some(ev.t_s);
        let cls = classify_envelope_with(&event_block(ev.kind)?, cfg.window_s, &cfg.classifier)?;
        let mode = ctl.observe(cls.kind);
        let cmd = command_for_mode(mode, &cls, ev.setpoint_w, ev.band, params, table, &cfg)?;
        let vdd = psu.set_voltage(cmd.target.vdd)?;
        log.push(CommandLogRow {
            t_s: ev.t_s,
            mode,
            vdd,
            idq: cmd.target.idq,
            gate_step: cmd.target.gate_step,
        });
    }
    Ok(log)
}
