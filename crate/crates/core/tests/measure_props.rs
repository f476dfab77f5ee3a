use num_complex::Complex64;
use pabias::measure::{
    self, find_p1db, find_p1db_with, freq_response, measure_gain, measure_imd, sweep_bias, MeasureError,
};
use pabias::pamodel::am_am;
use pabias::signalgen::generate;
use pabias::{Band, BiasPoint, IqBlock, PaParams, WaveformKind, WaveformSpec};
use proptest::prelude::*;

const FS: f64 = 1e6;

fn params() -> PaParams {
    PaParams {
        g0: 40.0,
        kv: 0.38,
        rload: 1.0,
        vknee: 1.0,
        smoothness: 3.0,
        load_exp: 0.6,
        ..PaParams::default()
    }
}

fn tones(f1: f64, f2: f64, n: usize) -> IqBlock {
    let w = |f: f64, k: usize| Complex64::from_polar(0.5, 2.0 * std::f64::consts::PI * f * k as f64 / FS);
    IqBlock::new((0..n).map(|k| w(f1, k) + w(f2, k)).collect(), FS).unwrap()
}

/// Memoryless odd polynomial with third- and fifth-order terms.
fn distort(x: &IqBlock) -> IqBlock {
    IqBlock::new(
        x.samples()
            .iter()
            .map(|&s| s * (1.0 - 0.05 * s.norm_sqr() + 0.01 * s.norm_sqr().powi(2)))
            .collect(),
        FS,
    )
    .unwrap()
}

/// Level of the e^{j(a·θ1 + b·θ2)} component of `distort` applied to two
/// half-amplitude tones, relative to the θ1 component, by exact grid averaging.
fn oracle_dbc(a: i32, b: i32) -> f64 {
    let n = 16;
    let tau = 2.0 * std::f64::consts::PI;
    let coef = |a: i32, b: i32| {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let (t1, t2) = (tau * i as f64 / n as f64, tau * j as f64 / n as f64);
                let s = Complex64::from_polar(0.5, t1) + Complex64::from_polar(0.5, t2);
                let y = s * (1.0 - 0.05 * s.norm_sqr() + 0.01 * s.norm_sqr().powi(2));
                acc += y * Complex64::from_polar(1.0, -(a as f64 * t1 + b as f64 * t2));
            }
        }
        acc.norm() / (n * n) as f64
    };
    let p = coef(a, b);
    if p == 0.0 || p < 1e-15 {
        return f64::NEG_INFINITY;
    }
    20.0 * (p / coef(1, 0)).log10()
}

#[test]
fn hard_limiter_p1db_sits_near_saturated_power() {
    let p = PaParams {
        smoothness: 20.0,
        load_exp: 0.0,
        ..params()
    };
    let b = BiasPoint::new(50.0, 2.0, 4).unwrap();
    let a = find_p1db(&b, &p).unwrap();
    let st = measure::cw_stats(a, &b, &p, None).unwrap();
    let psat = p.sat_amplitude(50.0).powi(2) / (2.0 * p.rload);
    assert!((10.0 * (st.pout_w / psat).log10()).abs() <= 1.0, "{} vs {psat}", st.pout_w);
}

#[test]
fn doubling_saturation_raises_p1db_by_six_db() {
    // same gain, a_sat doubled: vknee chosen so vdd − vknee doubles
    let p1 = PaParams {
        kv: 0.0,
        vknee: 29.0,
        ..params()
    };
    let p2 = PaParams { vknee: 0.0, ..p1.clone() };
    let b = BiasPoint::new(58.0, 2.0, 4).unwrap();
    let d = 20.0 * (find_p1db(&b, &p2).unwrap() / find_p1db(&b, &p1).unwrap()).log10();
    assert!((d - 6.02).abs() <= 0.1, "{d}");
}

#[test]
fn linear_curve_never_compresses() {
    assert_eq!(find_p1db_with(|a| 10.0 * a, 10.0, 1e3), Err(MeasureError::NoCompression));
}

#[test]
fn calibrated_gain_at_48_v() {
    let p = pabias::calibrate::fit(&pabias::calibrate::default_anchors(), &PaParams::default(), 4000)
        .unwrap()
        .params;
    let b = BiasPoint::new(48.0, 2.0, 4).unwrap();
    let x = measure::cw_block(1e-3);
    let (y, _) = pabias::pamodel::simulate(&x, &b, &p, None).unwrap();
    let scale = (1000.0 * 2.0 * p.load_resistance(48.0)).sqrt() / y.samples()[0].norm();
    let g = measure_gain(&x, &y.scaled(scale)).unwrap() - 20.0 * scale.log10();
    assert!((g - 28.0).abs() <= 0.5, "{g}");
}

#[test]
fn ripple_shifts_one_band() {
    let b = BiasPoint::new(50.0, 2.0, 4).unwrap();
    let flat = freq_response(&Band::ALL, 0.2, &b, &params()).unwrap();
    assert!(flat.iter().all(|(_, p)| (p / flat[0].1 - 1.0).abs() <= 1e-9));
    let mut p = params();
    p.ripple.insert(Band::M15, 1.0);
    let drive = 1e-3;
    let r = freq_response(&[Band::M20, Band::M15], drive, &b, &p).unwrap();
    let ratio = r[1].1 / r[0].1;
    assert!((ratio - 10f64.powf(0.1)).abs() <= 1e-6, "{ratio}");
}

#[test]
fn imd3_worsens_with_drive() {
    let b = BiasPoint::new(58.0, 2.0, 4).unwrap();
    let p = params();
    let full = measure::full_scale_input(&b, &p, None);
    let mut prev = f64::NEG_INFINITY;
    for k in 0..=20 {
        let drive = full * 10f64.powf((k as f64 - 20.0) / 20.0);
        let (row, _) = measure::two_tone_row(drive, &b, &p, None, 2e3, 1 << 14).unwrap();
        let v = row.imd3_dbc.unwrap();
        assert!(v >= prev, "step {k}: {v} < {prev}");
        prev = v;
    }
    let at = |db: f64| {
        measure::two_tone_row(full * 10f64.powf(db / 20.0), &b, &p, None, 2e3, 1 << 14)
            .unwrap()
            .0
            .imd3_dbc
            .unwrap()
    };
    assert!(at(-1.0) > at(-10.0));
    assert!(am_am(full, &b, &p) < p.sat_amplitude(58.0));
}

proptest! {
    #[test]
    fn gain_is_scale_consistent(k in 1e-3f64..1e3, amp in 0.1f64..2.0) {
        let x = generate(&WaveformSpec::new(WaveformKind::Am { index: 0.4, rate_hz: 1e3 }, amp, 1e-3), FS).unwrap();
        let y = x.scaled(3.0);
        let g0 = measure_gain(&x, &y).unwrap();
        let g1 = measure_gain(&x, &y.scaled(k)).unwrap();
        prop_assert!((g1 - g0 - 20.0 * k.log10()).abs() <= 1e-9);
    }

    #[test]
    fn sweep_rows_satisfy_dissipation_identity(
        v in proptest::collection::vec(30.0f64..58.0, 1..4), pout in 10.0f64..250.0,
    ) {
        for r in sweep_bias(&v, 2.0, pout, &params()).unwrap() {
            prop_assert!((r.pout_w / pout - 1.0).abs() <= 1e-3);
            let identity = r.pout_w * (100.0 / r.eff_pct - 1.0);
            prop_assert!((r.pdiss_w - identity).abs() <= 1e-6 * identity);
        }
    }

    #[test]
    fn products_land_on_expected_bins(
        bins in 10u32..400, center in -2000i32..2000, off in 0.0f64..1.0,
    ) {
        let n = 1 << 14;
        let df = FS / n as f64;
        let f1 = (center as f64 + off) * df;
        let f2 = f1 + bins as f64 * df;
        let imd = measure_imd(&distort(&tones(f1, f2, n)), f1, f2).unwrap();
        prop_assert_eq!(imd.products.len(), 8);
        for p in &imd.products {
            let m = (p.order / 2) as i32;
            let want = if p.freq_hz < f1 { oracle_dbc(m + 1, -m) } else { oracle_dbc(-m, m + 1) };
            let want = want.max(measure::IMD_FLOOR_DBC);
            prop_assert!((p.level_dbc - want).abs() < 0.05, "order {} at {}: {} vs {}", p.order, p.freq_hz, p.level_dbc, want);
        }
    }
}

#[test]
fn coarse_spacing_is_rejected() {
    let n = 1 << 12;
    let df = FS / n as f64;
    let r = measure_imd(&tones(0.0, 9.0 * df, n), 0.0, 9.0 * df);
    assert!(matches!(r, Err(MeasureError::TonesUnresolvable { .. })));
}
