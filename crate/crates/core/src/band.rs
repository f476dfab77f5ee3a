//! Amateur HF band identifiers used for ripple profiles and gain equalization.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown band `{0}`")]
pub struct UnknownBand(pub String);

/// The ten HF amateur bands from 160 m to 10 m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Band {
    M160,
    M80,
    M60,
    M40,
    M30,
    M20,
    M17,
    M15,
    M12,
    M10,
}

impl Band {
    pub const ALL: [Band; 10] = [
        Band::M160,
        Band::M80,
        Band::M60,
        Band::M40,
        Band::M30,
        Band::M20,
        Band::M17,
        Band::M15,
        Band::M12,
        Band::M10,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Band::M160 => "160M",
            Band::M80 => "80M",
            Band::M60 => "60M",
            Band::M40 => "40M",
            Band::M30 => "30M",
            Band::M20 => "20M",
            Band::M17 => "17M",
            Band::M15 => "15M",
            Band::M12 => "12M",
            Band::M10 => "10M",
        }
    }

    /// Lower edge of the band allocation, used as its nominal center.
    pub fn center_hz(self) -> f64 {
        match self {
            Band::M160 => 1.8e6,
            Band::M80 => 3.5e6,
            Band::M60 => 5.3e6,
            Band::M40 => 7.0e6,
            Band::M30 => 10.1e6,
            Band::M20 => 14.0e6,
            Band::M17 => 18.1e6,
            Band::M15 => 21.0e6,
            Band::M12 => 24.9e6,
            Band::M10 => 28.0e6,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Band {
    type Err = UnknownBand;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Band::ALL
            .iter()
            .copied()
            .find(|b| b.id().eq_ignore_ascii_case(t))
            .ok_or_else(|| UnknownBand(t.to_string()))
    }
}
