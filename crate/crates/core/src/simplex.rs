//! Deterministic Nelder–Mead simplex search.

/// Standard coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5.
const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

/// Minimize `f` from `x0` with an axis-aligned initial simplex of size `step`.
///
/// At most `budget` evaluations are spent; the first one is always `f(x0)`,
/// so the result is never worse than the start. Stops early once the simplex
/// values agree to `ftol` (absolute). Non-finite values are propagated to the
/// caller through `Err`.
pub(crate) fn minimize<F>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    budget: usize,
    ftol: f64,
) -> Result<Outcome, Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64, Vec<f64>> {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(x.to_vec())
        }
    };

    if budget == 0 {
        return Ok(Outcome {
            x: x0.to_vec(),
            f: f64::NAN,
            evals: 0,
        });
    }
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    pts.push((x0.to_vec(), eval(x0, &mut evals)?));
    for i in 0..n {
        if evals >= budget {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += step[i];
        let v = eval(&x, &mut evals)?;
        pts.push((x, v));
    }
    if pts.len() < n + 1 {
        return Ok(best(pts, evals));
    }

    while evals < budget {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (pts[n].1 - pts[0].1).abs() <= ftol {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr, &mut evals)?;
        if fr < pts[0].1 {
            if evals >= budget {
                pts[n] = (xr, fr);
                break;
            }
            let xe = along(REFLECT * EXPAND);
            let fe = eval(&xe, &mut evals)?;
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < pts[n - 1].1 {
            pts[n] = (xr, fr);
            continue;
        }
        if evals >= budget {
            if fr < pts[n].1 {
                pts[n] = (xr, fr);
            }
            break;
        }
        // outside contraction when the reflection beat the worst point
        let (xc, fc) = if fr < pts[n].1 {
            let xc = along(REFLECT * CONTRACT);
            let fc = eval(&xc, &mut evals)?;
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc, &mut evals)?;
            (xc, fc)
        };
        if fc < pts[n].1.min(fr) {
            pts[n] = (xc, fc);
            continue;
        }
        let x_best = pts[0].0.clone();
        for p in pts.iter_mut().skip(1) {
            if evals >= budget {
                break;
            }
            let xs: Vec<f64> = x_best
                .iter()
                .zip(&p.0)
                .map(|(b, x)| b + SHRINK * (x - b))
                .collect();
            let fs = eval(&xs, &mut evals)?;
            *p = (xs, fs);
        }
    }
    Ok(best(pts, evals))
}

fn best(pts: Vec<(Vec<f64>, f64)>, evals: usize) -> Outcome {
    let (x, f) = pts
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex has at least one point");
    Outcome { x, f, evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let out = minimize(rosen, &[-1.2, 1.0], &[0.1, 0.1], 5000, 1e-16).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4);
        assert!(out.evals <= 5000);
    }

    #[test]
    fn respects_budget_and_never_worsens() {
        let quad = |x: &[f64]| x.iter().map(|v| (v - 3.0).powi(2)).sum::<f64>();
        for budget in [1, 2, 3, 7, 50] {
            let mut calls = 0;
            let out = minimize(
                |x| {
                    calls += 1;
                    quad(x)
                },
                &[0.0, 0.0, 0.0],
                &[1.0; 3],
                budget,
                0.0,
            )
            .unwrap();
            assert!(calls <= budget);
            assert!(out.f <= quad(&[0.0; 3]));
        }
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let r = minimize(
            |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { -x[0] },
            &[0.0],
            &[1.0],
            100,
            0.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| (x[0] - 0.3).abs() + (x[1] + 2.0).powi(2);
        let a = minimize(f, &[1.0, 1.0], &[0.5, 0.5], 300, 0.0).unwrap();
        let b = minimize(f, &[1.0, 1.0], &[0.5, 0.5], 300, 0.0).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.f, b.f);
    }
}
