//! Closed-form potentials with analytic gradient and Hessian callbacks.
//!
//! Three families: quadratic-in-chart (flat torus), cosine series (torus),
//! and zonal polynomials of the axial height (sphere and hyperboloid
//! factors). Gradients and Hessians are taken with respect to the evolving
//! metric `g(t)`; the Levi-Civita connection of these models is
//! time-independent, so only the gradient carries the `1/c(t)` scale.

use crate::background::{minkowski_dot, ChartPoint, FlowBackground, ModelKind};
use crate::error::{LabError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CosineMode {
    pub wave: Vec<i32>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// A smooth scalar field with analytic derivatives.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialField {
    Zero,
    /// `phi(x) = (alpha/2) |x - center|^2` in the flat chart, using the
    /// nearest lattice image. Smooth away from the cut locus of `center`.
    Quadratic { center: Vec<f64>, alpha: f64 },
    /// `phi(x) = sum_k amp_k cos(2 pi <wave_k, x / L> + phase_k)`.
    CosineSeries { modes: Vec<CosineMode> },
    /// `phi(p) = sum_k coeffs[k] z^k` with `z` the axial height of the
    /// curved-factor embedding (`<axis, p>`, Minkowski on the hyperboloid).
    Zonal { axis: Vec<f64>, coeffs: Vec<f64> },
}

impl PotentialField {
    /// Largest coefficient magnitude; used for scenario amplitude guards.
    pub fn amplitude(&self) -> f64 {
        match self {
            PotentialField::Zero => 0.0,
            PotentialField::Quadratic { alpha, .. } => alpha.abs(),
            PotentialField::CosineSeries { modes } => modes
                .iter()
                .map(|m| m.amplitude.abs())
                .fold(0.0, f64::max),
            PotentialField::Zonal { coeffs, .. } => {
                coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max)
            }
        }
    }

    pub fn validate(&self, bg: &FlowBackground) -> Result<()> {
        match self {
            PotentialField::Zero => Ok(()),
            PotentialField::Quadratic { center, .. } => {
                if bg.kind() != ModelKind::FlatTorus {
                    return Err(LabError::config_plain(
                        "quadratic potentials live on the flat torus",
                    ));
                }
                if center.len() != bg.dim() {
                    return Err(LabError::config_plain("quadratic center has wrong arity"));
                }
                Ok(())
            }
            PotentialField::CosineSeries { modes } => {
                if bg.flat_dim() == 0 {
                    return Err(LabError::config_plain(
                        "cosine potentials need a torus factor",
                    ));
                }
                for m in modes {
                    if m.wave.len() != bg.flat_dim() {
                        return Err(LabError::config_plain("cosine wave vector has wrong arity"));
                    }
                }
                Ok(())
            }
            PotentialField::Zonal { axis, .. } => {
                if bg.curved_dim() == 0 {
                    return Err(LabError::config_plain(
                        "zonal potentials need a curved factor",
                    ));
                }
                if axis.len() != bg.curved_split() {
                    return Err(LabError::config_plain("zonal axis has wrong arity"));
                }
                Ok(())
            }
        }
    }

    fn axial_height(&self, bg: &FlowBackground, x: &ChartPoint) -> f64 {
        match self {
            PotentialField::Zonal { axis, .. } => {
                let split = bg.curved_split();
                let emb = &x.coords()[..split];
                match bg.kind() {
                    ModelKind::HyperbolicQuotient => minkowski_dot(axis, emb),
                    _ => axis.iter().zip(emb.iter()).map(|(a, b)| a * b).sum(),
                }
            }
            _ => 0.0,
        }
    }

    pub fn value(&self, bg: &FlowBackground, x: &ChartPoint) -> f64 {
        match self {
            PotentialField::Zero => 0.0,
            PotentialField::Quadratic { center, alpha } => {
                let d = bg.flat_delta(center, x.coords());
                0.5 * alpha * d.iter().map(|v| v * v).sum::<f64>()
            }
            PotentialField::CosineSeries { modes } => {
                let split = bg.curved_split();
                let flat = &x.coords()[split..];
                modes
                    .iter()
                    .map(|m| {
                        let arg: f64 = m
                            .wave
                            .iter()
                            .zip(flat.iter().zip(bg.lattice().iter()))
                            .map(|(&w, (&xi, &l))| w as f64 * xi / l)
                            .sum::<f64>()
                            * std::f64::consts::TAU
                            + m.phase;
                        m.amplitude * arg.cos()
                    })
                    .sum()
            }
            PotentialField::Zonal { coeffs, .. } => {
                let z = self.axial_height(bg, x);
                coeffs
                    .iter()
                    .rev()
                    .fold(0.0, |acc, &c| acc * z + c)
            }
        }
    }

    /// Gradient with respect to the unit model metric, in the stored
    /// (ambient curved + flat chart) representation.
    pub fn gradient_unit(&self, bg: &FlowBackground, x: &ChartPoint) -> Vec<f64> {
        let len = bg.chart_len();
        let split = bg.curved_split();
        let mut g = vec![0.0; len];
        match self {
            PotentialField::Zero => {}
            PotentialField::Quadratic { center, alpha } => {
                let d = bg.flat_delta(center, x.coords());
                for (j, v) in d.iter().enumerate() {
                    g[split + j] = alpha * v;
                }
            }
            PotentialField::CosineSeries { modes } => {
                let flat = &x.coords()[split..];
                for m in modes {
                    let arg: f64 = m
                        .wave
                        .iter()
                        .zip(flat.iter().zip(bg.lattice().iter()))
                        .map(|(&w, (&xi, &l))| w as f64 * xi / l)
                        .sum::<f64>()
                        * std::f64::consts::TAU
                        + m.phase;
                    let common = -m.amplitude * arg.sin() * std::f64::consts::TAU;
                    for (j, &w) in m.wave.iter().enumerate() {
                        g[split + j] += common * w as f64 / bg.lattice()[j];
                    }
                }
            }
            PotentialField::Zonal { axis, coeffs } => {
                let z = self.axial_height(bg, x);
                let fp = poly_derivative(coeffs, z);
                let emb = &x.coords()[..split];
                match bg.kind() {
                    ModelKind::HyperbolicQuotient => {
                        // tangential projection v -> v + <v,p>_M p
                        for i in 0..split {
                            g[i] = fp * (axis[i] + z * emb[i]);
                        }
                    }
                    _ => {
                        for i in 0..split {
                            g[i] = fp * (axis[i] - z * emb[i]);
                        }
                    }
                }
            }
        }
        g
    }

    /// Gradient with respect to `g(t)`: the curved block scales by `1/c(t)`.
    pub fn gradient_g(&self, bg: &FlowBackground, x: &ChartPoint, t: f64) -> Vec<f64> {
        let mut g = self.gradient_unit(bg, x);
        let split = bg.curved_split();
        let c = bg.scale_at(t);
        for v in &mut g[..split] {
            *v /= c;
        }
        g
    }

    /// Hessian bilinear form `Hess phi (X, Y)` for ambient tangents at `x`.
    /// Connection-induced, hence time-independent on these models.
    pub fn hessian_form(&self, bg: &FlowBackground, x: &ChartPoint, xv: &[f64], yv: &[f64]) -> f64 {
        let split = bg.curved_split();
        match self {
            PotentialField::Zero => 0.0,
            PotentialField::Quadratic { alpha, .. } => {
                alpha
                    * xv[split..]
                        .iter()
                        .zip(&yv[split..])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            }
            PotentialField::CosineSeries { modes } => {
                let flat = &x.coords()[split..];
                let mut acc = 0.0;
                for m in modes {
                    let arg: f64 = m
                        .wave
                        .iter()
                        .zip(flat.iter().zip(bg.lattice().iter()))
                        .map(|(&w, (&xi, &l))| w as f64 * xi / l)
                        .sum::<f64>()
                        * std::f64::consts::TAU
                        + m.phase;
                    let kx: f64 = m
                        .wave
                        .iter()
                        .zip(&xv[split..])
                        .zip(bg.lattice())
                        .map(|((&w, &v), &l)| w as f64 * v / l)
                        .sum::<f64>()
                        * std::f64::consts::TAU;
                    let ky: f64 = m
                        .wave
                        .iter()
                        .zip(&yv[split..])
                        .zip(bg.lattice())
                        .map(|((&w, &v), &l)| w as f64 * v / l)
                        .sum::<f64>()
                        * std::f64::consts::TAU;
                    acc += -m.amplitude * arg.cos() * kx * ky;
                }
                acc
            }
            PotentialField::Zonal { axis, coeffs } => {
                let z = self.axial_height(bg, x);
                let fp = poly_derivative(coeffs, z);
                let fpp = poly_second_derivative(coeffs, z);
                match bg.kind() {
                    ModelKind::HyperbolicQuotient => {
                        let ax = minkowski_dot(axis, &xv[..split]);
                        let ay = minkowski_dot(axis, &yv[..split]);
                        let xy = minkowski_dot(&xv[..split], &yv[..split]);
                        fpp * ax * ay + z * fp * xy
                    }
                    _ => {
                        let ax: f64 = axis.iter().zip(&xv[..split]).map(|(a, b)| a * b).sum();
                        let ay: f64 = axis.iter().zip(&yv[..split]).map(|(a, b)| a * b).sum();
                        let xy: f64 =
                            xv[..split].iter().zip(&yv[..split]).map(|(a, b)| a * b).sum();
                        fpp * ax * ay - z * fp * xy
                    }
                }
            }
        }
    }

    /// The transport datum `Z(x) = -(1/2) grad_{g(tau1)} phi(x)`.
    pub fn z_field(&self, bg: &FlowBackground, x: &ChartPoint, tau1: f64) -> Vec<f64> {
        self.gradient_g(bg, x, tau1)
            .into_iter()
            .map(|v| -0.5 * v)
            .collect()
    }
}

fn poly_derivative(coeffs: &[f64], z: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &c) in coeffs.iter().enumerate().skip(1) {
        acc += k as f64 * c * z.powi(k as i32 - 1);
    }
    acc
}

fn poly_second_derivative(coeffs: &[f64], z: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &c) in coeffs.iter().enumerate().skip(2) {
        acc += (k * (k - 1)) as f64 * c * z.powi(k as i32 - 2);
    }
    acc
}
