//! Fit [`PaParams`] to measured CW anchor rows with a derivative-free simplex.
//!
//! The objective re-drives the model to each anchor's output power at the
//! anchor's drain voltage (idq held fixed) and scores gain and efficiency
//! misses in units of their acceptance tolerances (0.5 dB, 2 pp).

use std::fmt::Write as _;

use thiserror::Error;

use crate::measure::{sweep_bias, MeasureError};
use crate::pamodel::PaParams;
use crate::simplex;

pub const GAIN_TOL_DB: f64 = 0.5;
pub const EFF_TOL_PP: f64 = 2.0;
pub const UNREACHABLE_PENALTY: f64 = 1e6;
/// Quiescent current used while fitting the linear-mode CW table.
pub const CALIBRATION_IDQ: f64 = 2.0;
pub const ANCHOR_CSV_HEADER: &str = "vdd_V,gain_dB,eff_pct,pout_W,pdiss_W";
pub const REPORT_CSV_HEADER: &str = "vdd_V,gain_dB,gain_err_dB,eff_pct,eff_err_pp,residual";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrateError {
    #[error("objective became non-finite during the search")]
    Diverged,
    #[error("no anchor rows")]
    NoAnchors,
    #[error("anchor CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorRow {
    pub vdd: f64,
    pub gain_db: f64,
    pub eff_pct: f64,
    pub pout_w: f64,
    pub pdiss_w: f64,
}

/// The 1 kW linear-mode CW table: 58/53/48 V at idq 2 A.
pub fn default_anchors() -> Vec<AnchorRow> {
    [
        (58.0, 32.0, 60.0, 1000.0, 666.0),
        (53.0, 30.0, 68.0, 1000.0, 470.0),
        (48.0, 28.0, 77.0, 1000.0, 298.0),
    ]
    .into_iter()
    .map(|(vdd, gain_db, eff_pct, pout_w, pdiss_w)| AnchorRow {
        vdd,
        gain_db,
        eff_pct,
        pout_w,
        pdiss_w,
    })
    .collect()
}

pub fn parse_anchors_csv(text: &str) -> Result<Vec<AnchorRow>, CalibrateError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == ANCHOR_CSV_HEADER => {}
        Some((i, h)) => {
            return Err(CalibrateError::Csv {
                line: i + 1,
                msg: format!("expected header `{ANCHOR_CSV_HEADER}`, got `{}`", h.trim()),
            })
        }
        None => return Err(CalibrateError::NoAnchors),
    }
    let rows = lines
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CalibrateError::Csv {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if v.len() != 5 {
                return Err(CalibrateError::Csv {
                    line: i + 1,
                    msg: format!("expected 5 fields, got {}", v.len()),
                });
            }
            Ok(AnchorRow {
                vdd: v[0],
                gain_db: v[1],
                eff_pct: v[2],
                pout_w: v[3],
                pdiss_w: v[4],
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(CalibrateError::NoAnchors);
    }
    Ok(rows)
}

/// Model gain and efficiency at one anchor, or the penalty for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorFit {
    pub vdd: f64,
    pub model: Option<(f64, f64)>,
    pub term: f64,
}

impl AnchorFit {
    pub fn gain_err_db(&self, a: &AnchorRow) -> Option<f64> {
        self.model.map(|(g, _)| g - a.gain_db)
    }

    pub fn eff_err_pp(&self, a: &AnchorRow) -> Option<f64> {
        self.model.map(|(_, e)| e - a.eff_pct)
    }
}

pub fn evaluate_anchor(params: &PaParams, a: &AnchorRow, idq: f64) -> AnchorFit {
    let miss = |term| AnchorFit {
        vdd: a.vdd,
        model: None,
        term,
    };
    match sweep_bias(&[a.vdd], idq, a.pout_w, params) {
        Ok(rows) => match rows[0].gain_db {
            Some(g) => {
                let e = rows[0].eff_pct;
                let term = ((g - a.gain_db) / GAIN_TOL_DB).powi(2)
                    + ((e - a.eff_pct) / EFF_TOL_PP).powi(2);
                AnchorFit {
                    vdd: a.vdd,
                    model: Some((g, e)),
                    term,
                }
            }
            None => miss(2.0 * UNREACHABLE_PENALTY),
        },
        // grade the penalty by the shortfall so the simplex can climb out
        Err(MeasureError::TargetUnreachable {
            target_w, max_w, ..
        }) if max_w > 0.0 => miss(UNREACHABLE_PENALTY * (1.0 + target_w / max_w)),
        Err(_) => miss(2.0 * UNREACHABLE_PENALTY),
    }
}

/// Sum of squared normalized anchor errors. Never fails: infeasible anchors
/// and invalid parameters contribute large finite penalties.
pub fn objective(params: &PaParams, anchors: &[AnchorRow], idq: f64) -> f64 {
    let mut terms: Vec<f64> = anchors
        .iter()
        .map(|a| evaluate_anchor(params, a, idq).term)
        .collect();
    // order-independent summation
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: PaParams,
    pub residual: f64,
    pub anchors: Vec<(AnchorRow, AnchorFit)>,
    pub evaluations: usize,
}

impl FitReport {
    fn new(params: PaParams, anchors: &[AnchorRow], idq: f64, evaluations: usize) -> Self {
        let fits = anchors
            .iter()
            .map(|a| (*a, evaluate_anchor(&params, a, idq)))
            .collect();
        Self {
            residual: objective(&params, anchors, idq),
            params,
            anchors: fits,
            evaluations,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{REPORT_CSV_HEADER}");
        for (a, f) in &self.anchors {
            let (g, e) = match f.model {
                Some((g, e)) => (g.to_string(), e.to_string()),
                None => (String::new(), String::new()),
            };
            let ge = f.gain_err_db(a).map(|v| v.to_string()).unwrap_or_default();
            let ee = f.eff_err_pp(a).map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{g},{ge},{e},{ee},{}", a.vdd, f.term);
        }
        s
    }
}

/// Search bounds, in simplex coordinates (g0 in dB).
const LOWER: [f64; 7] = [0.0, -2.0, -20.0, 0.01, 0.0, 0.5, -3.0];
const UPPER: [f64; 7] = [60.0, 2.0, 20.0, 100.0, 29.9, 20.0, 3.0];

fn to_coords(p: &PaParams) -> Vec<f64> {
    vec![
        20.0 * p.g0.log10(),
        p.kv,
        p.ki,
        p.rload,
        p.vknee,
        p.smoothness,
        p.load_exp,
    ]
}

fn from_coords(x: &[f64], template: &PaParams) -> PaParams {
    let c: Vec<f64> = x
        .iter()
        .zip(LOWER.iter().zip(&UPPER))
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
        .collect();
    PaParams {
        g0: 10f64.powf(c[0] / 20.0),
        kv: c[1],
        ki: c[2],
        rload: c[3],
        vknee: c[4],
        smoothness: c[5],
        load_exp: c[6],
        ripple: template.ripple.clone(),
    }
}

/// Fit with idq fixed at [`CALIBRATION_IDQ`].
pub fn fit(anchors: &[AnchorRow], init: &PaParams, budget: usize) -> Result<FitReport, CalibrateError> {
    fit_with_idq(anchors, init, budget, CALIBRATION_IDQ)
}

pub fn fit_with_idq(
    anchors: &[AnchorRow],
    init: &PaParams,
    budget: usize,
    idq: f64,
) -> Result<FitReport, CalibrateError> {
    if anchors.is_empty() {
        return Err(CalibrateError::NoAnchors);
    }
    if budget == 0 {
        return Ok(FitReport::new(init.clone(), anchors, idq, 0));
    }
    let init_residual = objective(init, anchors, idq);
    if !init_residual.is_finite() {
        return Err(CalibrateError::Diverged);
    }
    let x0 = to_coords(init);
    // every anchor shares one idq, so ki is unobservable and stays at init
    let step = [1.0, 0.1, 0.0, 0.1 * init.rload.max(0.1), 1.0, 1.0, 0.2];
    let out = simplex::minimize(
        |x| objective(&from_coords(x, init), anchors, idq),
        &x0,
        &step,
        budget,
        1e-14,
    )
    .map_err(|_| CalibrateError::Diverged)?;
    let fitted = from_coords(&out.x, init);
    // clamping can map the start outside the bounds; keep whichever is better
    let params = if out.f <= init_residual {
        fitted
    } else {
        init.clone()
    };
    Ok(FitReport::new(params, anchors, idq, out.evals))
}
