use std::f64::consts::PI;

use pabias::measure::{cw_stats, drive_for_pout};
use pabias::pamodel::{
    am_am, conduction_currents, efficiency_curve, fundamental_to_dc_ratio, simulate, Swing,
};
use pabias::{BiasPoint, IqBlock, PaParams, WaveformKind, WaveformSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Trapezoid rule over one period of the clipped cosine. The kink at the
/// conduction edge limits accuracy, so the grid is fine and the edge interval
/// is split exactly.
fn trapezoid(idq: f64, ipk: f64) -> (f64, f64) {
    let f = |t: f64| (idq + ipk * t.cos()).max(0.0);
    let edge = if ipk > idq { (-idq / ipk).acos() } else { PI };
    let n = 200_000;
    let seg = |a: f64, b: f64, g: &dyn Fn(f64) -> f64| {
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (g(a) + g(b));
        for k in 1..n {
            s += g(a + k as f64 * h);
        }
        s * h
    };
    let i0 = 2.0 * seg(0.0, edge, &f);
    let i1 = 2.0 * seg(0.0, edge, &|t| f(t) * t.cos());
    (i0 / (2.0 * PI), i1 / PI)
}

#[test]
fn conduction_matches_trapezoid_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let idq = rng.gen_range(0.05..4.0);
        let ipk = rng.gen_range(0.0..15.0);
        let c = conduction_currents(idq, ipk).unwrap();
        let (idc, i1) = trapezoid(idq, ipk);
        assert!((c.idc - idc).abs() <= 1e-9 * idc, "idc {} vs {idc}", c.idc);
        if ipk > 0.0 {
            assert!((c.i1 - i1).abs() <= 1e-9 * i1, "i1 {} vs {i1}", c.i1);
        }
    }
}

#[test]
fn class_c_limit_is_nearly_lossless() {
    let eta = efficiency_curve(&[0.1], Swing::Full).unwrap()[0].1;
    assert!(eta > 0.99 && eta < 1.0, "{eta}");
}

#[test]
fn fundamental_to_dc_ratio_rises_as_angle_shrinks() {
    let grid: Vec<f64> = (0..=500).map(|k| 0.2 + (2.0 * PI - 0.2) * k as f64 / 500.0).collect();
    let r: Vec<f64> = grid.iter().map(|&a| fundamental_to_dc_ratio(a).unwrap()).collect();
    assert!(r.windows(2).all(|w| w[1] < w[0]));
}

fn bias(vdd: f64, idq: f64) -> BiasPoint {
    BiasPoint::new(vdd, idq, 4).unwrap()
}

fn params(s: f64) -> PaParams {
    PaParams {
        g0: 40.0,
        kv: 0.38,
        rload: 1.0,
        vknee: 2.0,
        smoothness: s,
        load_exp: 0.6,
        ..PaParams::default()
    }
}

proptest! {
    #[test]
    fn am_am_is_monotone_and_slope_bounded(
        s in 0.5f64..20.0, vdd in 30.0f64..58.0, idq in 0.25f64..2.0, a in 0.0f64..5.0,
    ) {
        let p = params(s);
        let b = bias(vdd, idq);
        let g = 10f64.powf(p.small_signal_gain_db(vdd, idq, None) / 20.0);
        let h = 1e-6 * (1.0 + a);
        let (y0, y1) = (am_am(a, &b, &p), am_am(a + h, &b, &p));
        prop_assert!(y1 >= y0);
        prop_assert!((y1 - y0) / h <= g * (1.0 + 1e-6));
        prop_assert!(y0 <= p.sat_amplitude(vdd));
    }

    #[test]
    fn stats_identity_holds_exactly(
        s in 0.5f64..20.0, vdd in 30.0f64..58.0, idq in 0.25f64..2.0,
        amp in 0.0f64..5.0, kind in 0usize..3,
    ) {
        let k = [
            WaveformKind::Cw { offset_hz: 0.0 },
            WaveformKind::Am { index: 0.7, rate_hz: 2e3 },
            WaveformKind::TwoTone { spacing_hz: 4e3 },
        ][kind];
        let blk = pabias::signalgen::generate(&WaveformSpec::new(k, amp, 1e-3), 1e6).unwrap();
        let (_, st) = simulate(&blk, &bias(vdd, idq), &params(s), None).unwrap();
        prop_assert_eq!(st.pdiss_w, st.pdc_w - st.pout_w);
        prop_assert!(st.pdc_w >= st.pout_w);
        if st.pout_w > 0.0 {
            prop_assert!(st.eff > 0.0 && st.eff <= 1.0);
            let identity = st.pout_w * (1.0 / st.eff - 1.0);
            prop_assert!((st.pdiss_w - identity).abs() <= 1e-9 * st.pdc_w);
        }
    }

    #[test]
    fn efficiency_rises_as_drain_voltage_falls(pout in 20.0f64..250.0, v in 31.0f64..57.0) {
        let p = params(8.0);
        let hi = bias(v + 1.0, 2.0);
        let lo = bias(v, 2.0);
        let eff = |b: &BiasPoint| {
            let d = drive_for_pout(pout, b, &p, None).unwrap();
            cw_stats(d, b, &p, None).unwrap().eff
        };
        prop_assert!(eff(&lo) > eff(&hi));
    }
}

#[test]
fn calibrated_small_signal_gain_at_58_v() {
    let p = pabias::calibrate::fit(
        &pabias::calibrate::default_anchors(),
        &PaParams::default(),
        4000,
    )
    .unwrap()
    .params;
    let x = IqBlock::new(vec![num_complex::Complex64::new(1e-3, 0.0); 8], 1e6).unwrap();
    let (_, st) = simulate(&x, &bias(58.0, 2.0), &p, None).unwrap();
    assert!((st.gain_db.unwrap() - 32.0).abs() <= 0.5);
}
