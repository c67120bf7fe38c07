//! Reduced volume: the density built from `Q(p, 0; ., tau)`, its integral
//! over `M`, the small-ball constant `N`, and the limiting construction
//! that recovers monotonicity from the interpolation inequality.
//!
//! Everything here runs geodesics from `tau1 = 0`; the `s`-parametrization
//! makes that a regular endpoint, so no shift is needed.

use crate::background::{ChartPoint, FlowBackground, ModelKind};
use crate::error::Result;
use crate::jacobi::lambda_of_times;
use crate::lgeodesic::{l_distance_fast, SolverOptions};
use crate::quadrature::{ball_volume, VolumeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Sampled curve `tau -> V(tau)` with per-node refinement error estimates.
#[derive(Clone, Debug)]
pub struct ReducedVolumeCurve {
    pub basepoint: ChartPoint,
    pub tau_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub quadrature_error_estimate: Vec<f64>,
}

impl ReducedVolumeCurve {
    /// Nonincreasing within the combined per-node error budgets.
    pub fn is_monotone_within_budget(&self) -> bool {
        for a in 0..self.values.len() {
            for b in a + 1..self.values.len() {
                let budget =
                    self.quadrature_error_estimate[a] + self.quadrature_error_estimate[b];
                if self.values[a] < self.values[b] - budget {
                    return false;
                }
            }
        }
        true
    }
}

/// One row of the small-time experiment.
#[derive(Clone, Debug)]
pub struct Section3Row {
    pub tau1: f64,
    pub lambda: f64,
    pub n_const: f64,
    pub mass_u1: f64,
    /// `(int u1)^(1-lambda)`
    pub mass_u1_pow: f64,
    /// `(int u2)^lambda`
    pub mass_u2_pow: f64,
}

/// Full outcome: the rows, the reduced volumes at both reference times, and
/// the per-row product bound that the interpolation inequality certifies.
#[derive(Clone, Debug)]
pub struct Section3Outcome {
    pub rows: Vec<Section3Row>,
    pub v_tilde_tau: f64,
    pub v_tilde_tau2: f64,
    pub products: Vec<f64>,
}

/// `tau^{-n/2} exp(-Q(p, t0; x, tau) / (2 sqrt(tau)))`, the density whose
/// mass is the reduced volume when `t0 = 0`.
fn v_from(
    bg: &FlowBackground,
    p: &ChartPoint,
    t0: f64,
    x: &ChartPoint,
    tau: f64,
    solver: &SolverOptions,
) -> Result<f64> {
    let n = bg.dim() as f64;
    let q = l_distance_fast(bg, p, t0, x, tau, solver)?;
    Ok(tau.powf(-n / 2.0) * (-q / (2.0 * tau.sqrt())).exp())
}

/// The reduced-volume integrand at `x`.
pub fn v_reduced(
    bg: &FlowBackground,
    p: &ChartPoint,
    x: &ChartPoint,
    tau: f64,
    solver: &SolverOptions,
) -> Result<f64> {
    v_from(bg, p, 0.0, x, tau, solver)
}

/// Mass of `v_from(p, t0, ., tau)` over `(M, g(tau))` at one resolution.
/// On the static torus, far cells are skipped through the exact closed-form
/// bound `Q = d^2 / (2 (sqrt(tau) - sqrt(t0)))`, whose contribution is below
/// underflow.
fn mass_at_res(
    bg: &FlowBackground,
    p: &ChartPoint,
    t0: f64,
    tau: f64,
    res: usize,
    solver: &SolverOptions,
) -> Result<f64> {
    let grid = VolumeGrid::new(bg, tau, res)?;
    let n = bg.dim() as f64;
    let skip_threshold = if bg.kind() == ModelKind::FlatTorus {
        // exp(-Q / (2 sqrt(tau))) < 1e-20 beyond this distance
        let q_cap = 92.0 * tau.sqrt();
        Some((q_cap * 2.0 * (tau.sqrt() - t0.sqrt())).sqrt())
    } else {
        None
    };
    let terms: Vec<Result<f64>> = grid
        .centers()
        .par_iter()
        .zip(grid.weights().par_iter())
        .map(|(x, &w)| {
            if let Some(d_max) = skip_threshold {
                if bg.dist_at(p, x, tau) > d_max {
                    return Ok(0.0);
                }
            }
            Ok(v_from(bg, p, t0, x, tau, solver)? * w)
        })
        .collect();
    let mut acc = 0.0;
    for t in terms {
        acc += t?;
    }
    let _ = n;
    Ok(acc)
}

/// Reduced volume with a grid-refinement error estimate: returns
/// `(value, |value - coarse value|)`. An estimate above 5% of the value
/// means the grid does not resolve the density and is rejected.
pub fn reduced_volume(
    bg: &FlowBackground,
    p: &ChartPoint,
    tau: f64,
    res: usize,
    solver: &SolverOptions,
) -> Result<(f64, f64)> {
    let fine = mass_at_res(bg, p, 0.0, tau, res, solver)?;
    let coarse = mass_at_res(bg, p, 0.0, tau, res / 2, solver)?;
    let err = (fine - coarse).abs();
    if err > 0.05 * fine.abs() {
        return Err(crate::error::LabError::QuadratureUnresolved {
            estimate: err,
            budget: 0.05 * fine.abs(),
        });
    }
    Ok((fine, err))
}

/// Smallest constant (with a 10% safety factor) bounding both
/// `Q(p, 0; x, tau1)` and `Q(x, tau1; p, 2 tau1)` by `N sqrt(tau1)` over the
/// sampled `g(0)`-ball of radius `sqrt(tau1)` around `p`.
pub fn estimate_n(
    bg: &FlowBackground,
    p: &ChartPoint,
    tau1: f64,
    sample_count: usize,
    solver: &SolverOptions,
) -> Result<f64> {
    let r_unit = tau1.sqrt() / bg.scale_at(0.0).sqrt();
    let basis = bg.unit_tangent_basis(p);
    let mut dirs: Vec<Vec<f64>> = vec![];
    for e in &basis {
        dirs.push(e.clone());
        dirs.push(e.iter().map(|v| -v).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ec3);
    while dirs.len() < sample_count.max(dirs.len()) {
        let mut d = vec![0.0; bg.chart_len()];
        for e in &basis {
            let c: f64 = rng.gen_range(-1.0..1.0);
            for (di, ei) in d.iter_mut().zip(e.iter()) {
                *di += c * ei;
            }
        }
        let norm: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for v in &mut d {
                *v /= norm;
            }
            dirs.push(d);
        }
    }
    let radii = [0.25, 0.5, 0.75, 1.0];
    let mut points = vec![p.clone()];
    for d in &dirs {
        for &f in &radii {
            points.push(bg.unit_move(p, d, f * r_unit));
        }
    }
    let worst: Vec<Result<f64>> = points
        .par_iter()
        .map(|x| {
            let q1 = l_distance_fast(bg, p, 0.0, x, tau1, solver)?;
            let q2 = l_distance_fast(bg, x, tau1, p, 2.0 * tau1, solver)?;
            Ok(q1.max(q2) / tau1.sqrt())
        })
        .collect();
    let mut n_raw: f64 = 0.0;
    for w in worst {
        n_raw = n_raw.max(w?);
    }
    Ok(1.1 * n_raw)
}

/// The small-time experiment: for each `tau1` builds the indicator-times-
/// constant density on `B(p, sqrt(tau1))` and the `Q(p, 2 tau1; ., tau2)`
/// density, reporting the masses entering the product bound, and the
/// reduced volumes the bound converges to.
#[allow(clippy::too_many_arguments)]
pub fn section3_experiment(
    bg: &FlowBackground,
    p: &ChartPoint,
    tau: f64,
    tau2: f64,
    tau1_list: &[f64],
    res: usize,
    n_samples: usize,
    solver: &SolverOptions,
) -> Result<Section3Outcome> {
    let n = bg.dim() as f64;
    let mut rows = vec![];
    let mut products = vec![];
    for &tau1 in tau1_list {
        let lambda = lambda_of_times(tau1, tau, tau2)?;
        let n_const = estimate_n(bg, p, tau1, n_samples, solver)?;
        let exponent = -n_const * tau1.sqrt() / (2.0 * (1.0 - lambda))
            * (1.0 / tau.sqrt() + lambda / tau2.sqrt());
        let u1_val = tau1.powf(-n / 2.0) * exponent.exp();
        let mass_u1 = u1_val * ball_volume(bg, tau1.sqrt(), tau1)?;
        let mass_u2 = mass_at_res(bg, p, 2.0 * tau1, tau2, res, solver)?;
        let row = Section3Row {
            tau1,
            lambda,
            n_const,
            mass_u1,
            mass_u1_pow: mass_u1.powf(1.0 - lambda),
            mass_u2_pow: mass_u2.powf(lambda),
        };
        products.push(row.mass_u1_pow * row.mass_u2_pow);
        rows.push(row);
    }
    let (v_tau, _) = reduced_volume(bg, p, tau, res, solver)?;
    let (v_tau2, _) = reduced_volume(bg, p, tau2, res, solver)?;
    Ok(Section3Outcome {
        rows,
        v_tilde_tau: v_tau,
        v_tilde_tau2: v_tau2,
        products,
    })
}

/// Reduced-volume curve over a time grid with refinement error estimates.
pub fn monotonicity_curve(
    bg: &FlowBackground,
    p: &ChartPoint,
    tau_grid: &[f64],
    res: usize,
    solver: &SolverOptions,
) -> Result<ReducedVolumeCurve> {
    let mut values = vec![];
    let mut errs = vec![];
    for &tau in tau_grid {
        let (v, e) = reduced_volume(bg, p, tau, res, solver)?;
        values.push(v);
        errs.push(e);
    }
    Ok(ReducedVolumeCurve {
        basepoint: p.clone(),
        tau_grid: tau_grid.to_vec(),
        values,
        quadrature_error_estimate: errs,
    })
}
