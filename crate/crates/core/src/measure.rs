//! Bench harness: gain, P1dB, drain efficiency, two-tone IMD and sweeps.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::band::{Band, UnknownBand};
use crate::biasctl::gate_step_for;
use crate::pamodel::{self, db_to_voltage, BiasPoint, PaError, PaParams, PaStats};
use crate::signalgen::{generate, IqBlock, SignalError, WaveformKind, WaveformSpec};

/// Products below this level relative to the mean fundamental read as the floor.
pub const IMD_FLOOR_DBC: f64 = -120.0;
/// Minimum tone spacing in DFT bins for product extraction.
pub const MIN_SPACING_BINS: f64 = 10.0;
pub const DEFAULT_SAMPLE_RATE: f64 = 1.0e6;
pub const DEFAULT_SPACING_HZ: f64 = 2.0e3;
pub const DEFAULT_IMD_LEN: usize = 1 << 17;
const MAX_BISECTIONS: usize = 60;
const TARGET_TOL: f64 = 1e-3;
/// Samples in the CW blocks used for drive searches.
const CW_LEN: usize = 16;

pub const CSV_HEADER: &str = "vdd_V,idq_A,band,pout_W,gain_dB,eff_pct,pdiss_W,imd3_dBc,imd5_dBc";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("blocks differ in length or sample rate ({0} vs {1} samples)")]
    LengthMismatch(usize, usize),
    #[error("input block is silent")]
    SilentInput,
    #[error("tones {f1} Hz and {f2} Hz are {bins:.2} bins apart; need at least {MIN_SPACING_BINS}")]
    TonesUnresolvable { f1: f64, f2: f64, bins: f64 },
    #[error("gain never falls 1 dB below small-signal within the search range")]
    NoCompression,
    #[error("{target_w} W unreachable at {vdd} V (saturates near {max_w:.1} W)")]
    TargetUnreachable { vdd: f64, target_w: f64, max_w: f64 },
    #[error(transparent)]
    UnknownBand(#[from] UnknownBand),
    #[error(transparent)]
    Model(#[from] PaError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// One measurement record. IMD fields are dBc per tone.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasRow {
    pub vdd: f64,
    pub idq: f64,
    pub band: Option<Band>,
    pub pout_w: f64,
    /// `None` when the drive is zero.
    pub gain_db: Option<f64>,
    pub eff_pct: f64,
    pub pdiss_w: f64,
    pub imd3_dbc: Option<f64>,
    pub imd5_dbc: Option<f64>,
}

impl MeasRow {
    pub fn from_stats(bias: &BiasPoint, band: Option<Band>, st: &PaStats) -> Self {
        Self {
            vdd: bias.vdd,
            idq: bias.idq,
            band,
            pout_w: st.pout_w,
            gain_db: st.gain_db,
            eff_pct: 100.0 * st.eff,
            pdiss_w: st.pdiss_w,
            imd3_dbc: None,
            imd5_dbc: None,
        }
    }

    pub fn csv_line(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.vdd,
            self.idq,
            self.band.map(|b| b.id()).unwrap_or(""),
            self.pout_w,
            opt(self.gain_db),
            self.eff_pct,
            self.pdiss_w,
            opt(self.imd3_dbc),
            opt(self.imd5_dbc)
        )
    }
}

/// Header plus one line per row, LF terminated.
pub fn rows_to_csv(rows: &[MeasRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CSV_HEADER}");
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    s
}

pub fn measure_gain(input: &IqBlock, output: &IqBlock) -> Result<f64, MeasureError> {
    if input.len() != output.len() || input.sample_rate() != output.sample_rate() {
        return Err(MeasureError::LengthMismatch(input.len(), output.len()));
    }
    let p_in = input.mean_power();
    if p_in <= 0.0 {
        return Err(MeasureError::SilentInput);
    }
    Ok(10.0 * (output.mean_power() / p_in).log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImdProduct {
    pub order: u32,
    pub freq_hz: f64,
    pub level_dbc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImdResult {
    /// Mean per-tone fundamental power in the (windowed, normalized) spectrum.
    pub fundamental_power: f64,
    pub products: Vec<ImdProduct>,
}

impl ImdResult {
    /// Worse (higher) of the two products of an order.
    pub fn worst(&self, order: u32) -> Option<f64> {
        self.products
            .iter()
            .filter(|p| p.order == order)
            .map(|p| p.level_dbc)
            .reduce(f64::max)
    }

    pub fn imd3(&self) -> Option<f64> {
        self.worst(3)
    }

    pub fn imd5(&self) -> Option<f64> {
        self.worst(5)
    }
}

/// HFT144D flat-top window: 0.0021 dB scalloping, −144 dB sidelobes.
fn flat_top(n: usize) -> Vec<f64> {
    const C: [f64; 7] = [
        1.0,
        1.967_600_33,
        1.579_836_07,
        0.811_236_44,
        0.225_835_58,
        0.027_738_48,
        0.000_903_60,
    ];
    (0..n)
        .map(|i| {
            let z = 2.0 * PI * i as f64 / n as f64;
            C.iter()
                .enumerate()
                .map(|(k, c)| if k % 2 == 0 { *c } else { -c } * (k as f64 * z).cos())
                .sum()
        })
        .collect()
}

/// Windowed power spectrum normalized so a full-scale tone reads its amplitude².
fn power_spectrum(block: &IqBlock) -> Vec<f64> {
    let n = block.len();
    let w = flat_top(n);
    let gain: f64 = w.iter().sum();
    let mut buf: Vec<Complex64> = block
        .samples()
        .iter()
        .zip(&w)
        .map(|(s, w)| s * w)
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().map(|x| (x.norm() / gain).powi(2)).collect()
}

fn peak_near(spec: &[f64], freq: f64, df: f64) -> f64 {
    let n = spec.len() as i64;
    let k0 = (freq / df).round() as i64;
    (-1..=1)
        .map(|d| spec[(k0 + d).rem_euclid(n) as usize])
        .fold(0.0, f64::max)
}

/// Two-tone intermodulation products of orders 3, 5, 7 and 9 in dBc per tone.
pub fn measure_imd(output: &IqBlock, f1: f64, f2: f64) -> Result<ImdResult, MeasureError> {
    let n = output.len();
    let fs = output.sample_rate();
    let df = fs / n.max(1) as f64;
    let bins = (f2 - f1).abs() / df;
    if n == 0 || !(bins >= MIN_SPACING_BINS) {
        return Err(MeasureError::TonesUnresolvable { f1, f2, bins });
    }
    let spec = power_spectrum(output);
    let fund = 0.5 * (peak_near(&spec, f1, df) + peak_near(&spec, f2, df));
    let floor = fund * 10f64.powf(IMD_FLOOR_DBC / 10.0);
    let mut products = Vec::new();
    for order in [3u32, 5, 7, 9] {
        let m = f64::from(order / 2);
        for f in [(m + 1.0) * f1 - m * f2, (m + 1.0) * f2 - m * f1] {
            if f.abs() >= fs / 2.0 {
                continue;
            }
            let p = peak_near(&spec, f, df).max(floor);
            let level_dbc = if fund > 0.0 {
                10.0 * (p / fund).log10()
            } else {
                IMD_FLOOR_DBC
            };
            products.push(ImdProduct {
                order,
                freq_hz: f,
                level_dbc,
            });
        }
    }
    Ok(ImdResult {
        fundamental_power: fund,
        products,
    })
}

/// Input level at which `curve` sits `depth_db` below its small-signal gain.
///
/// `max_input` bounds the search; a curve that has not compressed that far
/// by then yields [`MeasureError::NoCompression`].
pub fn find_compression_with<F: Fn(f64) -> f64>(
    curve: F,
    small_signal_gain: f64,
    max_input: f64,
    depth_db: f64,
) -> Result<f64, MeasureError> {
    let comp = |a: f64| 20.0 * (curve(a) / (small_signal_gain * a)).log10();
    if !(comp(max_input) <= -depth_db) {
        return Err(MeasureError::NoCompression);
    }
    // bisect in log drive
    let (mut lo, mut hi) = (max_input.ln() - 60.0, max_input.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = comp(mid.exp());
        if (c + depth_db).abs() <= 1e-4 {
            return Ok(mid.exp());
        }
        if c > -depth_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

pub fn find_p1db_with<F: Fn(f64) -> f64>(
    curve: F,
    small_signal_gain: f64,
    max_input: f64,
) -> Result<f64, MeasureError> {
    find_compression_with(curve, small_signal_gain, max_input, 1.0)
}

/// CW input level for a given compression depth at a bias point and band.
pub fn compression_drive(
    bias: &BiasPoint,
    params: &PaParams,
    band: Option<Band>,
    depth_db: f64,
) -> Result<f64, MeasureError> {
    bias.validate()?;
    params.validate()?;
    let g = db_to_voltage(params.small_signal_gain_db(bias.vdd, bias.idq, band));
    let max_input = 10.0 * params.sat_amplitude(bias.vdd) / g;
    find_compression_with(
        |a| pamodel::am_am_band(a, bias, params, band),
        g,
        max_input,
        depth_db,
    )
}

pub fn find_p1db(bias: &BiasPoint, params: &PaParams) -> Result<f64, MeasureError> {
    compression_drive(bias, params, None, 1.0)
}

pub fn cw_block(amplitude: f64) -> IqBlock {
    let spec = WaveformSpec::new(
        WaveformKind::Cw { offset_hz: 0.0 },
        amplitude,
        CW_LEN as f64 / DEFAULT_SAMPLE_RATE,
    );
    generate(&spec, DEFAULT_SAMPLE_RATE).expect("static CW spec is valid")
}

/// Simulate a CW carrier with peak envelope `drive`.
pub fn cw_stats(
    drive: f64,
    bias: &BiasPoint,
    params: &PaParams,
    band: Option<Band>,
) -> Result<PaStats, MeasureError> {
    Ok(pamodel::simulate(&cw_block(drive), bias, params, band)?.1)
}

/// CW drive that produces `target_w`, by bisection on the input envelope.
pub fn drive_for_pout(
    target_w: f64,
    bias: &BiasPoint,
    params: &PaParams,
    band: Option<Band>,
) -> Result<f64, MeasureError> {
    bias.validate()?;
    params.validate()?;
    if target_w <= 0.0 {
        return Ok(0.0);
    }
    let g = db_to_voltage(params.small_signal_gain_db(bias.vdd, bias.idq, band));
    let mut hi = 10.0 * params.sat_amplitude(bias.vdd) / g;
    let p_hi = cw_stats(hi, bias, params, band)?.pout_w;
    if p_hi < target_w * (1.0 - TARGET_TOL) {
        return Err(MeasureError::TargetUnreachable {
            vdd: bias.vdd,
            target_w,
            max_w: p_hi,
        });
    }
    let mut lo = 0.0;
    let mut best = (hi, p_hi);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let p = cw_stats(mid, bias, params, band)?.pout_w;
        if (p - target_w).abs() < (best.1 - target_w).abs() {
            best = (mid, p);
        }
        if (p - target_w).abs() <= 1e-12 * target_w {
            break;
        }
        if p < target_w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target_w).abs() > TARGET_TOL * target_w {
        return Err(MeasureError::TargetUnreachable {
            vdd: bias.vdd,
            target_w,
            max_w: p_hi,
        });
    }
    Ok(best.0)
}

/// One CW row per drain voltage, each re-driven to `target_pout_w`.
pub fn sweep_bias(
    vdd_list: &[f64],
    idq: f64,
    target_pout_w: f64,
    params: &PaParams,
) -> Result<Vec<MeasRow>, MeasureError> {
    vdd_list
        .iter()
        .map(|&vdd| {
            let bias = BiasPoint::new(vdd, idq, gate_step_for(idq))?;
            let drive = drive_for_pout(target_pout_w, &bias, params, None)?;
            let st = cw_stats(drive, &bias, params, None)?;
            Ok(MeasRow::from_stats(&bias, None, &st))
        })
        .collect()
}

/// `"all"` or a comma list of band ids.
pub fn parse_bands(list: &str) -> Result<Vec<Band>, MeasureError> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Band::ALL.to_vec());
    }
    list.split(',')
        .map(|s| s.parse::<Band>().map_err(MeasureError::from))
        .collect()
}

/// Output power per band at a fixed CW drive and bias.
pub fn freq_response(
    bands: &[Band],
    drive: f64,
    bias: &BiasPoint,
    params: &PaParams,
) -> Result<Vec<(Band, f64)>, MeasureError> {
    bands
        .iter()
        .map(|&b| Ok((b, cw_stats(drive, bias, params, Some(b))?.pout_w)))
        .collect()
}

/// Input envelope that would drive the output to `a_sat` at small-signal gain.
pub fn full_scale_input(bias: &BiasPoint, params: &PaParams, band: Option<Band>) -> f64 {
    params.sat_amplitude(bias.vdd) / db_to_voltage(params.small_signal_gain_db(bias.vdd, bias.idq, band))
}

/// Two-tone peak envelope for a composite level in dBFS, where 0 dBFS is the
/// mean power of a CW carrier at [`full_scale_input`]. At −3 dBFS the
/// two-tone peaks touch full scale.
pub fn two_tone_peak_for_dbfs(dbfs: f64, bias: &BiasPoint, params: &PaParams, band: Option<Band>) -> f64 {
    std::f64::consts::SQRT_2 * full_scale_input(bias, params, band) * db_to_voltage(dbfs)
}

/// Two-tone test at a given peak input envelope. Returns the row (with IMD)
/// and the full product list.
pub fn two_tone_row(
    peak_drive: f64,
    bias: &BiasPoint,
    params: &PaParams,
    band: Option<Band>,
    spacing_hz: f64,
    len: usize,
) -> Result<(MeasRow, ImdResult), MeasureError> {
    let spec = WaveformSpec::new(
        WaveformKind::TwoTone { spacing_hz },
        peak_drive,
        len as f64 / DEFAULT_SAMPLE_RATE,
    );
    let input = generate(&spec, DEFAULT_SAMPLE_RATE)?;
    let (out, st) = pamodel::simulate(&input, bias, params, band)?;
    let imd = measure_imd(&out, -spacing_hz / 2.0, spacing_hz / 2.0)?;
    let mut row = MeasRow::from_stats(bias, band, &st);
    row.imd3_dbc = imd.imd3();
    row.imd5_dbc = imd.imd5();
    Ok((row, imd))
}
