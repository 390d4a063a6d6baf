//! Nelder–Mead and golden-section search.
//!
//! Both maximize. Objectives may fail; the first error aborts the search.

use serde::{Deserialize, Serialize};

/// What produced a trace point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Init,
    Reflect,
    Expand,
    ContractOutside,
    ContractInside,
    Shrink,
    Probe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub x: Vec<f64>,
    pub value: f64,
    pub action: Action,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Simplex diameter threshold, relative to the initial scale.
    pub x_tol: f64,
    /// Objective spread threshold, relative to the initial spread.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            x_tol: 1e-3,
            f_tol: 1e-3,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub trace: Vec<TracePoint>,
    /// Best value after each iteration.
    pub best_history: Vec<f64>,
    /// Final vertices, best first.
    pub simplex: Vec<Vec<f64>>,
}

impl NelderMeadResult {
    /// Mean of the final vertices; less sensitive to a single lucky
    /// evaluation than `best` when the objective is noisy.
    pub fn centroid(&self) -> Vec<f64> {
        let n = self.simplex.len() as f64;
        let mut c = vec![0.0; self.best.len()];
        for v in &self.simplex {
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += vi / n;
            }
        }
        c
    }
}

/// Simplex vertices kept sorted best-first.
#[derive(Clone, Debug)]
pub struct Simplex {
    pub vertices: Vec<(Vec<f64>, f64)>,
}

impl Simplex {
    fn sort(&mut self) {
        // Stable: ties keep insertion order, which keeps runs deterministic.
        self.vertices.sort_by(|a, b| b.1.total_cmp(&a.1));
    }

    /// Largest distance from the best vertex, per axis normalized by `scale`.
    fn diameter(&self, scale: &[f64]) -> f64 {
        let best = &self.vertices[0].0;
        self.vertices[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(best)
                    .zip(scale)
                    .map(|((a, b), s)| ((a - b) / s).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn spread(&self) -> f64 {
        self.vertices[0].1 - self.vertices[self.vertices.len() - 1].1
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Maximize `objective` from `x0` with an axis-aligned initial simplex.
///
/// Stops once the simplex diameter is below `x_tol` (in units of `scale`)
/// and the value spread is below `f_tol` times the initial spread, or after
/// `max_iter` iterations.
pub fn nelder_mead<E, F>(
    mut objective: F,
    x0: &[f64],
    scale: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    assert_eq!(x0.len(), scale.len(), "x0 and scale must have equal length");
    assert!(
        scale.iter().all(|s| *s > 0.0),
        "scale components must be positive"
    );
    assert!(opts.max_iter >= 1, "max_iter must be at least 1");

    let n = x0.len();
    let mut trace = Vec::new();
    let mut evaluations = 0usize;
    let mut eval = |x: Vec<f64>, action: Action, it: usize, trace: &mut Vec<TracePoint>| {
        let v = objective(&x)?;
        evaluations += 1;
        trace.push(TracePoint {
            x: x.clone(),
            value: v,
            action,
            iteration: it,
        });
        Ok::<_, E>((x, v))
    };

    let mut simplex = Simplex {
        vertices: Vec::with_capacity(n + 1),
    };
    simplex
        .vertices
        .push(eval(x0.to_vec(), Action::Init, 0, &mut trace)?);
    for k in 0..n {
        let mut x = x0.to_vec();
        x[k] += scale[k];
        simplex.vertices.push(eval(x, Action::Init, 0, &mut trace)?);
    }
    simplex.sort();
    let f_scale = simplex.spread().abs().max(f64::MIN_POSITIVE);

    let mut best_history = Vec::with_capacity(opts.max_iter);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if simplex.diameter(scale) < opts.x_tol && simplex.spread() < opts.f_tol * f_scale {
            converged = true;
            break;
        }
        iterations += 1;
        let it = iterations;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex.vertices[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let (worst, f_worst) = simplex.vertices[n].clone();
        let f_best = simplex.vertices[0].1;
        let f_second = simplex.vertices[n - usize::from(n > 0)].1;

        let xr = lerp(&centroid, &worst, -1.0);
        let (xr, fr) = eval(xr, Action::Reflect, it, &mut trace)?;
        if fr > f_best {
            let xe = lerp(&centroid, &worst, -2.0);
            let (xe, fe) = eval(xe, Action::Expand, it, &mut trace)?;
            simplex.vertices[n] = if fe > fr { (xe, fe) } else { (xr, fr) };
        } else if fr > f_second {
            simplex.vertices[n] = (xr, fr);
        } else {
            let accepted = if fr > f_worst {
                let xc = lerp(&centroid, &xr, 0.5);
                let (xc, fc) = eval(xc, Action::ContractOutside, it, &mut trace)?;
                (fc >= fr).then_some((xc, fc))
            } else {
                let xc = lerp(&centroid, &worst, 0.5);
                let (xc, fc) = eval(xc, Action::ContractInside, it, &mut trace)?;
                (fc > f_worst).then_some((xc, fc))
            };
            match accepted {
                Some(v) => simplex.vertices[n] = v,
                None => {
                    let best = simplex.vertices[0].0.clone();
                    for k in 1..=n {
                        let xs = lerp(&best, &simplex.vertices[k].0, 0.5);
                        simplex.vertices[k] = eval(xs, Action::Shrink, it, &mut trace)?;
                    }
                }
            }
        }
        simplex.sort();
        best_history.push(simplex.vertices[0].1);
    }

    let (best, best_value) = simplex.vertices[0].clone();
    Ok(NelderMeadResult {
        best,
        best_value,
        iterations,
        evaluations,
        converged,
        trace,
        best_history,
        simplex: simplex.vertices.into_iter().map(|v| v.0).collect(),
    })
}

/// Inverse golden ratio φ − 1.
pub const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub a: f64,
    pub b: f64,
    pub x1: f64,
    pub x2: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenResult {
    pub x_best: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Bracket after each iteration, starting with the initial one.
    pub brackets: Vec<Bracket>,
    pub trace: Vec<TracePoint>,
}

/// Maximize a unimodal function on `[a, b]` over `n_iter` bracket reductions.
///
/// The first iteration evaluates both interior probes, later iterations
/// reuse one and evaluate one. The width after `k` iterations is
/// `(b − a)·INV_PHI^k`; the result is the final bracket midpoint.
pub fn golden_section<E, F>(
    mut objective: F,
    a: f64,
    b: f64,
    n_iter: usize,
) -> Result<GoldenResult, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    assert!(a < b, "golden_section needs a < b");
    let width0 = b - a;
    let mut trace = Vec::new();
    let mut brackets = Vec::with_capacity(n_iter + 1);
    let mut probe = |x: f64, it: usize, trace: &mut Vec<TracePoint>| {
        let v = objective(x)?;
        trace.push(TracePoint {
            x: vec![x],
            value: v,
            action: Action::Probe,
            iteration: it,
        });
        Ok::<_, E>(v)
    };

    // Probe positions follow from the exact width law to avoid drift.
    let mut lo = a;
    let mut width = width0;
    let mut x1 = lo + (1.0 - INV_PHI) * width;
    let mut x2 = lo + INV_PHI * width;
    let mut f1 = f64::NAN;
    let mut f2 = f64::NAN;
    brackets.push(Bracket {
        a,
        b,
        x1,
        x2,
        f1,
        f2,
    });
    for k in 1..=n_iter {
        if k == 1 {
            f1 = probe(x1, 1, &mut trace)?;
            f2 = probe(x2, 1, &mut trace)?;
        }
        let new_width = width0 * INV_PHI.powi(k as i32);
        if f1 >= f2 {
            // Optimum cannot lie in (x2, hi]; x1 becomes the new upper probe.
            x2 = x1;
            f2 = f1;
            width = new_width;
            x1 = lo + (1.0 - INV_PHI) * width;
            if k < n_iter {
                f1 = probe(x1, k + 1, &mut trace)?;
            } else {
                f1 = f64::NAN;
            }
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            width = new_width;
            x2 = lo + INV_PHI * width;
            if k < n_iter {
                f2 = probe(x2, k + 1, &mut trace)?;
            } else {
                f2 = f64::NAN;
            }
        }
        brackets.push(Bracket {
            a: lo,
            b: lo + width,
            x1,
            x2,
            f1,
            f2,
        });
    }
    let last = brackets[brackets.len() - 1];
    Ok(GoldenResult {
        x_best: last.midpoint(),
        iterations: n_iter,
        evaluations: trace.len(),
        brackets,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::convert::Infallible;

    fn quad(target: [f64; 2]) -> impl FnMut(&[f64]) -> Result<f64, Infallible> {
        move |x| Ok(-((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)))
    }

    #[test]
    fn concave_quadratic_converges() {
        let opts = NelderMeadOptions {
            max_iter: 200,
            ..Default::default()
        };
        let r = nelder_mead(quad([0.3, -0.2]), &[0.0, 0.0], &[0.5, 0.5], &opts).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 200);
        assert!((r.best[0] - 0.3).abs() < 1e-3 && (r.best[1] + 0.2).abs() < 1e-3);
    }

    #[test]
    fn best_value_never_worsens() {
        let r = nelder_mead(
            |x: &[f64]| Ok::<_, Infallible>(-(x[0] - 1.0).powi(4) - 3.0 * (x[1] + x[0]).powi(2)),
            &[-1.0, 2.0],
            &[0.3, 0.3],
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!(r.best_history.windows(2).all(|w| w[1] >= w[0]));
        // Trace records the initial simplex and every proposal.
        assert_eq!(r.trace.len(), r.evaluations);
        assert_eq!(
            r.trace.iter().filter(|t| t.action == Action::Init).count(),
            3
        );
    }

    #[test]
    fn objective_errors_propagate() {
        let mut calls = 0;
        let r = nelder_mead(
            |_: &[f64]| {
                calls += 1;
                if calls > 4 {
                    Err("broken")
                } else {
                    Ok(0.0)
                }
            },
            &[0.0],
            &[1.0],
            &NelderMeadOptions::default(),
        );
        assert_eq!(r.unwrap_err(), "broken");
    }

    #[test]
    fn golden_width_law_and_evaluation_count() {
        let r = golden_section(
            |x| Ok::<_, Infallible>(-(x - 0.1234).powi(2)),
            -1.0,
            2.0,
            20,
        )
        .unwrap();
        assert_eq!(r.evaluations, 21);
        for (k, br) in r.brackets.iter().enumerate() {
            let want = 3.0 * INV_PHI.powi(k as i32);
            assert!((br.width() - want).abs() <= 1e-14 * want.max(1.0), "k={k}");
            if k > 0 {
                let ratio = br.width() / r.brackets[k - 1].width();
                assert!((ratio - 0.618034).abs() < 1e-6);
            }
            assert!(br.a < br.x1 && br.x1 < br.x2 && br.x2 < br.b);
        }
        assert!((r.x_best - 0.1234).abs() < 3.0 * INV_PHI.powi(20));
    }

    #[test]
    fn golden_lorentzian_peak() {
        let gamma = 1.0;
        let f01 = 0.0;
        let center = f01 + 5.0 * gamma;
        let r = golden_section(
            |x| Ok::<_, Infallible>(1.0 / (1.0 + ((x - f01) / gamma).powi(2))),
            center - 15.0 * gamma,
            center + 15.0 * gamma,
            12,
        )
        .unwrap();
        let final_width = r.brackets.last().unwrap().width();
        assert!((final_width - 30.0 * INV_PHI.powi(12)).abs() < 1e-12);
        assert!((r.x_best - f01).abs() < gamma / 10.0);
    }

    proptest! {
        #[test]
        fn golden_bracket_keeps_the_peak(peak in -0.9f64..0.9, n in 1usize..40) {
            let r = golden_section(|x| Ok::<_, Infallible>(-(x - peak).abs()), -1.0, 1.0, n).unwrap();
            let last = r.brackets.last().unwrap();
            prop_assert!(last.a <= peak + 1e-12 && peak <= last.b + 1e-12);
            prop_assert_eq!(r.evaluations, n + 1);
        }

        #[test]
        fn nelder_mead_keeps_n_plus_one_vertices(x0 in -2.0f64..2.0, y0 in -2.0f64..2.0) {
            let r = nelder_mead(quad([0.0, 0.0]), &[x0, y0], &[0.4, 0.4], &NelderMeadOptions::default()).unwrap();
            prop_assert!(r.best_value <= 0.0);
            prop_assert!(r.best_history.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(r.best[0].abs() < 0.05 && r.best[1].abs() < 0.05);
        }
    }
}
