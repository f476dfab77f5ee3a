//! Complex-baseband test signals for each exciter emission mode.
//!
//! CW, FM and hard-keyed PSK have a constant envelope. AM and the two-tone
//! SSB proxy have a varying one. Every generator starts at phase zero and is
//! noise free, so identical specs always give identical blocks.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("invalid waveform spec: {0}")]
    InvalidSpec(String),
}

/// A finite block of complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBlock {
    samples: Vec<Complex64>,
    sample_rate: f64,
}

impl IqBlock {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self, SignalError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(SignalError::InvalidSpec(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Result<Self, SignalError> {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Mean of |x|² over the block (zero for an empty block).
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak_power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).fold(0.0, f64::max)
    }

    /// Peak-to-average power ratio of the envelope in dB. Zero for a silent block.
    pub fn papr_db(&self) -> f64 {
        let mean = self.mean_power();
        if mean <= 0.0 {
            return 0.0;
        }
        10.0 * (self.peak_power() / mean).log10()
    }

    pub fn scaled(&self, k: f64) -> IqBlock {
        IqBlock {
            samples: self.samples.iter().map(|s| s * k).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Elementwise magnitude of the block.
pub fn envelope(block: &IqBlock) -> Vec<f64> {
    block.samples.iter().map(|s| s.norm()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaveformKind {
    /// Unmodulated carrier, optionally offset from the center frequency.
    Cw { offset_hz: f64 },
    /// Sinusoidal frequency modulation.
    Fm { deviation_hz: f64, rate_hz: f64 },
    /// Hard-keyed (unshaped) PSK, order 2 or 4.
    Psk { order: u8, symbol_rate_hz: f64 },
    /// Full-carrier AM with index in [0, 1].
    Am { index: f64, rate_hz: f64 },
    /// Two equal tones at ±spacing/2.
    TwoTone { spacing_hz: f64 },
}

impl WaveformKind {
    pub fn name(&self) -> &'static str {
        match self {
            WaveformKind::Cw { .. } => "cw",
            WaveformKind::Fm { .. } => "fm",
            WaveformKind::Psk { order: 2, .. } => "bpsk",
            WaveformKind::Psk { .. } => "qpsk",
            WaveformKind::Am { .. } => "am",
            WaveformKind::TwoTone { .. } => "two-tone",
        }
    }

    /// Default parameters for a kind name as used in scenario files and the CLI.
    /// `ssb` maps to the two-tone proxy.
    pub fn from_name(name: &str) -> Option<Self> {
        let k = match name.trim().to_ascii_lowercase().as_str() {
            "cw" => WaveformKind::Cw { offset_hz: 0.0 },
            "fm" => WaveformKind::Fm {
                deviation_hz: 5_000.0,
                rate_hz: 1_000.0,
            },
            "psk" | "bpsk" | "psk2" | "digital" => WaveformKind::Psk {
                order: 2,
                symbol_rate_hz: 10_000.0,
            },
            "qpsk" | "psk4" => WaveformKind::Psk {
                order: 4,
                symbol_rate_hz: 10_000.0,
            },
            "am" => WaveformKind::Am {
                index: 0.5,
                rate_hz: 1_000.0,
            },
            "two-tone" | "twotone" | "two_tone" | "ssb" => WaveformKind::TwoTone {
                spacing_hz: 2_000.0,
            },
            _ => return None,
        };
        Some(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformSpec {
    pub kind: WaveformKind,
    /// Peak envelope amplitude (normalized).
    pub amplitude: f64,
    pub duration_s: f64,
}

impl WaveformSpec {
    pub fn new(kind: WaveformKind, amplitude: f64, duration_s: f64) -> Self {
        Self {
            kind,
            amplitude,
            duration_s,
        }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<(), SignalError> {
        let bad = |m: String| Err(SignalError::InvalidSpec(m));
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return bad(format!("sample rate must be positive, got {sample_rate}"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude must be >= 0, got {}", self.amplitude));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if (self.duration_s * sample_rate).round() < 1.0 {
            return bad("duration shorter than one sample".into());
        }
        let nyq = sample_rate / 2.0;
        let below_nyquist = |what: &str, f: f64| {
            if f.is_finite() && f.abs() < nyq {
                Ok(())
            } else {
                bad(format!("{what} {f} Hz is not below Nyquist ({nyq} Hz)"))
            }
        };
        match self.kind {
            WaveformKind::Cw { offset_hz } => below_nyquist("carrier offset", offset_hz),
            WaveformKind::Fm {
                deviation_hz,
                rate_hz,
            } => {
                below_nyquist("FM deviation", deviation_hz)?;
                below_nyquist("FM rate", rate_hz)?;
                if rate_hz <= 0.0 {
                    return bad("FM rate must be positive".into());
                }
                Ok(())
            }
            WaveformKind::Psk {
                order,
                symbol_rate_hz,
            } => {
                if order != 2 && order != 4 {
                    return bad(format!("PSK order must be 2 or 4, got {order}"));
                }
                below_nyquist("PSK symbol rate", symbol_rate_hz)?;
                if symbol_rate_hz <= 0.0 {
                    return bad("PSK symbol rate must be positive".into());
                }
                Ok(())
            }
            WaveformKind::Am { index, rate_hz } => {
                if !(0.0..=1.0).contains(&index) {
                    return bad(format!("AM index must be in [0, 1], got {index}"));
                }
                below_nyquist("AM rate", rate_hz)
            }
            WaveformKind::TwoTone { spacing_hz } => {
                if spacing_hz <= 0.0 {
                    return bad("two-tone spacing must be positive".into());
                }
                below_nyquist("tone offset", spacing_hz / 2.0)
            }
        }
    }
}

/// 9-bit PRBS (x^9 + x^5 + 1) used to pick PSK symbols.
struct Prbs9(u16);

impl Prbs9 {
    fn next_bit(&mut self) -> u8 {
        let bit = ((self.0 >> 8) ^ (self.0 >> 4)) & 1;
        self.0 = ((self.0 << 1) | bit) & 0x1ff;
        bit as u8
    }
}

pub fn generate(spec: &WaveformSpec, sample_rate: f64) -> Result<IqBlock, SignalError> {
    spec.validate(sample_rate)?;
    let n = (spec.duration_s * sample_rate).round() as usize;
    let a = spec.amplitude;
    let t = |i: usize| i as f64 / sample_rate;

    let samples: Vec<Complex64> = match spec.kind {
        WaveformKind::Cw { offset_hz } => (0..n)
            .map(|i| Complex64::from_polar(a, 2.0 * PI * offset_hz * t(i)))
            .collect(),
        WaveformKind::Fm {
            deviation_hz,
            rate_hz,
        } => {
            let beta = deviation_hz / rate_hz;
            (0..n)
                .map(|i| Complex64::from_polar(a, beta * (2.0 * PI * rate_hz * t(i)).sin()))
                .collect()
        }
        WaveformKind::Psk {
            order,
            symbol_rate_hz,
        } => {
            let mut prbs = Prbs9(0x1ff);
            let bits_per_symbol = if order == 2 { 1 } else { 2 };
            let offset = if order == 4 { PI / 4.0 } else { 0.0 };
            let mut symbol = usize::MAX;
            let mut phase = 0.0;
            (0..n)
                .map(|i| {
                    let k = (t(i) * symbol_rate_hz).floor() as usize;
                    if k != symbol {
                        symbol = k;
                        let mut s = 0u8;
                        for _ in 0..bits_per_symbol {
                            s = (s << 1) | prbs.next_bit();
                        }
                        phase = offset + 2.0 * PI * f64::from(s) / f64::from(order);
                    }
                    Complex64::from_polar(a, phase)
                })
                .collect()
        }
        WaveformKind::Am { index, rate_hz } => (0..n)
            .map(|i| {
                let m = 1.0 + index * (2.0 * PI * rate_hz * t(i)).cos();
                Complex64::new(a * m / (1.0 + index), 0.0)
            })
            .collect(),
        WaveformKind::TwoTone { spacing_hz } => (0..n)
            .map(|i| {
                let w = PI * spacing_hz * t(i);
                // (a/2)(e^{-jw} + e^{jw})
                Complex64::new(a * w.cos(), 0.0)
            })
            .collect(),
    };
    IqBlock::new(samples, sample_rate)
}
