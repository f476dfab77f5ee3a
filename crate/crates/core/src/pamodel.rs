//! Behavioral class-AB amplifier.
//!
//! The RF path is envelope domain: each sample's magnitude goes through a
//! Rapp soft limiter whose small-signal gain follows the bias point and whose
//! clip level is the available drain swing `vdd - vknee`. Phase passes
//! through untouched (no AM/PM). DC draw comes from the Fourier analysis of
//! the clipped-sinusoid drain current `i(θ) = max(0, idq + ipk·cos θ)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::band::Band;
use crate::signalgen::IqBlock;

/// Drain voltage at which `g0` and `rload` are referenced.
pub const REF_VDD: f64 = 58.0;
/// Quiescent current at which `g0` is referenced.
pub const REF_IDQ: f64 = 2.0;
pub const VDD_MIN: f64 = 30.0;
pub const VDD_MAX: f64 = 58.0;
pub const GATE_STEPS: u8 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PaError {
    #[error("quiescent current must be positive, got {0}")]
    NonPositiveIdq(f64),
    #[error("invalid bias point: {0}")]
    InvalidBias(String),
    #[error("invalid amplifier parameters: {0}")]
    InvalidParams(String),
    #[error("conduction angle {0} rad outside (0, 2π]")]
    OutOfRangeAlpha(f64),
    #[error("cannot simulate an empty block")]
    EmptyBlock,
}

/// Drain supply voltage, quiescent current and gate preset index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasPoint {
    pub vdd: f64,
    pub idq: f64,
    pub gate_step: u8,
}

impl BiasPoint {
    pub fn new(vdd: f64, idq: f64, gate_step: u8) -> Result<Self, PaError> {
        let b = Self {
            vdd,
            idq,
            gate_step,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), PaError> {
        if !(VDD_MIN..=VDD_MAX).contains(&self.vdd) {
            return Err(PaError::InvalidBias(format!(
                "vdd {} V outside [{VDD_MIN}, {VDD_MAX}]",
                self.vdd
            )));
        }
        if !(self.idq > 0.0 && self.idq.is_finite()) {
            return Err(PaError::InvalidBias(format!("idq {} A must be > 0", self.idq)));
        }
        if self.gate_step >= GATE_STEPS {
            return Err(PaError::InvalidBias(format!(
                "gate step {} outside 0..{}",
                self.gate_step,
                GATE_STEPS - 1
            )));
        }
        Ok(())
    }
}

/// Behavioral amplifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PaParams {
    /// Small-signal voltage gain at 58 V / 2 A.
    pub g0: f64,
    /// Gain slope vs drain voltage, dB/V.
    pub kv: f64,
    /// Gain slope vs log10(idq / 2 A), dB/decade.
    pub ki: f64,
    /// Fundamental load-line resistance at 58 V, ohms.
    pub rload: f64,
    pub vknee: f64,
    /// Rapp knee sharpness.
    pub smoothness: f64,
    /// Effective load scales as `rload·(58/vdd)^load_exp`; 0 is a fixed load.
    pub load_exp: f64,
    /// Per-band gain deviation, dB. Missing bands are flat.
    pub ripple: BTreeMap<Band, f64>,
}

impl Default for PaParams {
    /// Calibration starting point: ~30 dB gain, load line from the 58 V /
    /// 1 kW operating point, 4 V knee, s = 2, flat gain laws.
    fn default() -> Self {
        Self {
            g0: 10f64.powf(30.0 / 20.0),
            kv: 0.0,
            ki: 0.0,
            rload: REF_VDD * REF_VDD / (2.0 * 1000.0),
            vknee: 4.0,
            smoothness: 2.0,
            load_exp: 0.0,
            ripple: BTreeMap::new(),
        }
    }
}

impl PaParams {
    pub fn validate(&self) -> Result<(), PaError> {
        let bad = |m: String| Err(PaError::InvalidParams(m));
        let finite = [
            self.g0,
            self.kv,
            self.ki,
            self.rload,
            self.vknee,
            self.smoothness,
            self.load_exp,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.ripple.values().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if self.g0 <= 0.0 {
            return bad(format!("g0 must be > 0, got {}", self.g0));
        }
        if self.rload <= 0.0 {
            return bad(format!("rload must be > 0, got {}", self.rload));
        }
        if !(0.0..30.0).contains(&self.vknee) {
            return bad(format!("vknee must be in [0, 30), got {}", self.vknee));
        }
        if !(0.5..=20.0).contains(&self.smoothness) {
            return bad(format!(
                "smoothness must be in [0.5, 20], got {}",
                self.smoothness
            ));
        }
        Ok(())
    }

    pub fn ripple_db(&self, band: Option<Band>) -> f64 {
        band.and_then(|b| self.ripple.get(&b).copied())
            .unwrap_or(0.0)
    }

    /// Small-signal gain in dB at a bias point, including band ripple.
    pub fn small_signal_gain_db(&self, vdd: f64, idq: f64, band: Option<Band>) -> f64 {
        20.0 * self.g0.log10()
            + self.kv * (vdd - REF_VDD)
            + self.ki * (idq / REF_IDQ).log10()
            + self.ripple_db(band)
    }

    pub fn load_resistance(&self, vdd: f64) -> f64 {
        self.rload * (REF_VDD / vdd).powf(self.load_exp)
    }

    /// Peak drain swing limit.
    pub fn sat_amplitude(&self, vdd: f64) -> f64 {
        vdd - self.vknee
    }

    /// CW output power the stage approaches at infinite drive.
    pub fn saturated_power(&self, vdd: f64) -> f64 {
        let a = self.sat_amplitude(vdd);
        a * a / (2.0 * self.load_resistance(vdd))
    }
}

/// Fourier components of the clipped-sinusoid drain current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conduction {
    /// Conduction angle, radians.
    pub alpha: f64,
    pub idc: f64,
    /// Fundamental (cosine) amplitude.
    pub i1: f64,
}

pub fn conduction_currents(idq: f64, ipk: f64) -> Result<Conduction, PaError> {
    if !(idq > 0.0) {
        return Err(PaError::NonPositiveIdq(idq));
    }
    let ipk = ipk.max(0.0);
    if ipk <= idq {
        return Ok(Conduction {
            alpha: 2.0 * PI,
            idc: idq,
            i1: ipk,
        });
    }
    let half = (-idq / ipk).acos();
    let (s, c) = half.sin_cos();
    Ok(Conduction {
        alpha: 2.0 * half,
        idc: (idq * 2.0 * half + 2.0 * ipk * s) / (2.0 * PI),
        i1: (2.0 * idq * s + ipk * (half + s * c)) / PI,
    })
}

/// Cosine amplitude `ipk` whose clipped waveform has fundamental `i1`.
///
/// `i1(ipk)` is increasing and concave for `ipk > idq`, so Newton started at
/// the lower bound `ipk = i1` climbs monotonically onto the root.
pub fn drive_amplitude_for_fundamental(idq: f64, i1: f64) -> Result<f64, PaError> {
    if !(idq > 0.0) {
        return Err(PaError::NonPositiveIdq(idq));
    }
    if i1 <= idq {
        return Ok(i1.max(0.0));
    }
    let mut ipk = i1;
    for _ in 0..100 {
        let half = (-idq / ipk).acos();
        let (s, c) = half.sin_cos();
        let f = (2.0 * idq * s + ipk * (half + s * c)) / PI - i1;
        let slope = (half + s * c) / PI;
        let step = f / slope;
        ipk -= step;
        if step.abs() <= 1e-15 * ipk {
            break;
        }
    }
    Ok(ipk)
}

/// Rapp soft limiter on an already-amplified amplitude.
pub fn rapp(linear_out: f64, a_sat: f64, smoothness: f64) -> f64 {
    if linear_out <= 0.0 {
        return 0.0;
    }
    let p = 2.0 * smoothness;
    let r = linear_out / a_sat;
    // Above the knee, factor out a_sat so r^p cannot overflow and rounding
    // stays monotone.
    if r <= 1.0 {
        linear_out / (1.0 + r.powf(p)).powf(1.0 / p)
    } else {
        a_sat / (1.0 + r.powf(-p)).powf(1.0 / p)
    }
}

pub fn am_am(a_in: f64, bias: &BiasPoint, params: &PaParams) -> f64 {
    am_am_band(a_in, bias, params, None)
}

pub fn am_am_band(a_in: f64, bias: &BiasPoint, params: &PaParams, band: Option<Band>) -> f64 {
    let g = db_to_voltage(params.small_signal_gain_db(bias.vdd, bias.idq, band));
    rapp(g * a_in, params.sat_amplitude(bias.vdd), params.smoothness)
}

pub fn db_to_voltage(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// RF output, DC input, efficiency, dissipation and transducer gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaStats {
    pub pout_w: f64,
    pub pdc_w: f64,
    pub eff: f64,
    pub pdiss_w: f64,
    /// `None` for a silent input.
    pub gain_db: Option<f64>,
}

pub fn simulate(
    block: &IqBlock,
    bias: &BiasPoint,
    params: &PaParams,
    band: Option<Band>,
) -> Result<(IqBlock, PaStats), PaError> {
    bias.validate()?;
    params.validate()?;
    if block.is_empty() {
        return Err(PaError::EmptyBlock);
    }
    let g = db_to_voltage(params.small_signal_gain_db(bias.vdd, bias.idq, band));
    let a_sat = params.sat_amplitude(bias.vdd);
    let r = params.load_resistance(bias.vdd);

    let mut out = Vec::with_capacity(block.len());
    let mut sum_p = 0.0;
    let mut sum_idc = 0.0;
    for &x in block.samples() {
        let a_in = x.norm();
        let a_out = rapp(g * a_in, a_sat, params.smoothness);
        out.push(if a_in > 0.0 {
            x * (a_out / a_in)
        } else {
            Complex64::new(0.0, 0.0)
        });
        sum_p += a_out * a_out;
        let ipk = drive_amplitude_for_fundamental(bias.idq, a_out / r)?;
        sum_idc += conduction_currents(bias.idq, ipk)?.idc;
    }
    let n = block.len() as f64;
    let pout_w = sum_p / n / (2.0 * r);
    let pdc_w = bias.vdd * sum_idc / n;
    let out = IqBlock::new(out, block.sample_rate()).expect("sample rate already validated");
    let p_in = block.mean_power();
    let gain_db = (p_in > 0.0).then(|| 10.0 * (out.mean_power() / p_in).log10());
    let stats = PaStats {
        pout_w,
        pdc_w,
        eff: pout_w / pdc_w,
        pdiss_w: pdc_w - pout_w,
        gain_db,
    };
    Ok((out, stats))
}

/// Voltage swing assumed by [`efficiency_curve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Swing {
    /// Fundamental swing equal to the supply (ideal, zero knee).
    Full,
    /// Fundamental swing as a fraction of the supply.
    Fraction(f64),
}

/// Fundamental-to-DC ratio of a reduced-conduction-angle cosine pulse.
pub fn fundamental_to_dc_ratio(alpha: f64) -> Result<f64, PaError> {
    if !(alpha > 0.0 && alpha <= 2.0 * PI) {
        return Err(PaError::OutOfRangeAlpha(alpha));
    }
    if alpha < 1e-2 {
        let h = alpha / 2.0;
        let h2 = h * h;
        let num = alpha.powi(3) / 6.0 - alpha.powi(5) / 120.0 + alpha.powi(7) / 5040.0;
        let den = h * h2 * (2.0 / 3.0 - h2 / 15.0 + h2 * h2 / 420.0);
        return Ok(num / den);
    }
    let half = alpha / 2.0;
    Ok((alpha - alpha.sin()) / (2.0 * half.sin() - alpha * half.cos()))
}

/// Drain efficiency vs conduction angle.
pub fn efficiency_curve(alphas: &[f64], swing: Swing) -> Result<Vec<(f64, f64)>, PaError> {
    let frac = match swing {
        Swing::Full => 1.0,
        Swing::Fraction(f) => f,
    };
    alphas
        .iter()
        .map(|&a| Ok((a, 0.5 * frac * fundamental_to_dc_ratio(a)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalgen::{generate, WaveformKind, WaveformSpec};

    #[test]
    fn conduction_no_drive_is_pure_dc() {
        let c = conduction_currents(1.0, 0.0).unwrap();
        assert_eq!((c.alpha, c.idc, c.i1), (2.0 * PI, 1.0, 0.0));
    }

    #[test]
    fn conduction_class_a_region() {
        let c = conduction_currents(2.0, 1.0).unwrap();
        assert_eq!((c.alpha, c.idc, c.i1), (2.0 * PI, 2.0, 1.0));
    }

    #[test]
    fn conduction_class_b_limit() {
        let c = conduction_currents(1e-12, 3.0).unwrap();
        assert!((c.alpha - PI).abs() < 1e-9);
        assert!((c.idc - 3.0 / PI).abs() < 1e-9);
        assert!((c.i1 - 1.5).abs() < 1e-9);
    }

    #[test]
    fn conduction_rejects_nonpositive_idq() {
        assert_eq!(
            conduction_currents(0.0, 1.0),
            Err(PaError::NonPositiveIdq(0.0))
        );
        assert!(drive_amplitude_for_fundamental(-1.0, 1.0).is_err());
    }

    #[test]
    fn drive_amplitude_inverts_fundamental() {
        for &(idq, i1) in &[(2.0, 0.5), (2.0, 42.0), (0.5, 50.0), (0.01, 3.0), (5.0, 5.0)] {
            let ipk = drive_amplitude_for_fundamental(idq, i1).unwrap();
            let c = conduction_currents(idq, ipk).unwrap();
            assert!((c.i1 - i1).abs() <= 1e-12 * i1.max(1.0), "{idq} {i1}");
        }
    }

    #[test]
    fn am_am_closed_form_point() {
        // g = 10, a_sat = 1, s = 1, a_in = 0.1: 1 / sqrt(2)
        assert!((rapp(10.0 * 0.1, 1.0, 1.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn am_am_small_signal_is_linear() {
        let p = PaParams::default();
        let b = BiasPoint::new(58.0, 2.0, 4).unwrap();
        let g = db_to_voltage(p.small_signal_gain_db(58.0, 2.0, None));
        let a_in = 0.01 * p.sat_amplitude(58.0) / g;
        let out = am_am(a_in, &b, &p);
        assert!((out / (g * a_in) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn am_am_hard_limiter_asymptote() {
        let out = rapp(2.0, 1.0, 20.0);
        assert!((out - 1.0).abs() < 1e-3);
        assert_eq!(rapp(1e300, 1.0, 20.0), 1.0);
        assert_eq!(rapp(0.0, 1.0, 2.0), 0.0);
    }

    #[test]
    fn simulate_zero_input_draws_quiescent_only() {
        let p = PaParams::default();
        let b = BiasPoint::new(50.0, 2.0, 4).unwrap();
        let blk = IqBlock::zeros(32, 1e6).unwrap();
        let (out, st) = simulate(&blk, &b, &p, None).unwrap();
        assert!(out.samples().iter().all(|s| s.norm() == 0.0));
        assert_eq!(st.pout_w, 0.0);
        assert!((st.pdc_w - 100.0).abs() < 1e-12);
        assert_eq!(st.gain_db, None);
    }

    #[test]
    fn simulate_preserves_phase() {
        let p = PaParams::default();
        let b = BiasPoint::new(58.0, 2.0, 4).unwrap();
        let blk = generate(
            &WaveformSpec::new(
                WaveformKind::Psk {
                    order: 4,
                    symbol_rate_hz: 1e4,
                },
                1.0,
                1e-3,
            ),
            1e6,
        )
        .unwrap();
        let (out, _) = simulate(&blk, &b, &p, None).unwrap();
        for (x, y) in blk.samples().iter().zip(out.samples()) {
            assert!((x.arg() - y.arg()).abs() < 1e-12);
        }
    }

    #[test]
    fn simulate_stats_identity_and_ripple() {
        let mut p = PaParams::default();
        p.ripple.insert(Band::M10, 1.0);
        let b = BiasPoint::new(58.0, 2.0, 4).unwrap();
        let blk = generate(
            &WaveformSpec::new(WaveformKind::Cw { offset_hz: 0.0 }, 0.01, 1e-4),
            1e6,
        )
        .unwrap();
        let (_, flat) = simulate(&blk, &b, &p, None).unwrap();
        let (_, hot) = simulate(&blk, &b, &p, Some(Band::M10)).unwrap();
        for st in [flat, hot] {
            assert_eq!(st.pdiss_w, st.pdc_w - st.pout_w);
            assert!(st.eff > 0.0 && st.eff <= 1.0);
            assert!((st.pdiss_w - st.pout_w * (1.0 / st.eff - 1.0)).abs() < 1e-9 * st.pdc_w);
        }
        let d = hot.gain_db.unwrap() - flat.gain_db.unwrap();
        assert!((d - 1.0).abs() < 0.01, "{d}");
    }

    #[test]
    fn invalid_bias_and_params() {
        assert!(BiasPoint::new(60.0, 2.0, 0).is_err());
        assert!(BiasPoint::new(48.0, 0.0, 0).is_err());
        assert!(BiasPoint::new(48.0, 2.0, 5).is_err());
        let p = PaParams {
            smoothness: 0.1,
            ..PaParams::default()
        };
        assert!(p.validate().is_err());
        let blk = IqBlock::zeros(4, 1e6).unwrap();
        let bad = BiasPoint {
            vdd: 20.0,
            idq: 1.0,
            gate_step: 0,
        };
        assert!(matches!(
            simulate(&blk, &bad, &PaParams::default(), None),
            Err(PaError::InvalidBias(_))
        ));
    }

    #[test]
    fn efficiency_curve_rejects_out_of_range() {
        assert!(efficiency_curve(&[0.0], Swing::Full).is_err());
        assert!(efficiency_curve(&[7.0], Swing::Full).is_err());
        let knee = efficiency_curve(&[PI], Swing::Fraction(0.9)).unwrap()[0].1;
        assert!((knee - 0.9 * PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn small_alpha_series_is_continuous() {
        let below = fundamental_to_dc_ratio(0.01 - 1e-12).unwrap();
        let above = fundamental_to_dc_ratio(0.01 + 1e-12).unwrap();
        assert!((below - above).abs() < 1e-9);
        assert!((fundamental_to_dc_ratio(1e-6).unwrap() - 2.0).abs() < 1e-9);
    }
}
