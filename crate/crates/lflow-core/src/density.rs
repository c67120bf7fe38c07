//! Closed-form density families with quadrature normalization, plus the
//! gridded densities produced by scatter operations.

use crate::background::{ChartPoint, FlowBackground};
use crate::error::Result;
use crate::quadrature::VolumeGrid;
use serde::{Deserialize, Serialize};

/// Which slot of the interpolation inequality a density occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityRole {
    U1,
    U2,
    V,
    U,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DensityKind {
    /// Constant; normalizes to `1 / vol(M, g(t))`.
    Uniform,
    /// Truncated lattice periodization of a Gaussian bump on the torus.
    PeriodizedGaussian { center: Vec<f64>, sigma: f64 },
    /// `exp(kappa <axis, p>)` on the sphere factor.
    ZonalExp { axis: Vec<f64>, kappa: f64 },
    /// Values attached to the cells of a volume grid (scatter output).
    #[serde(skip)]
    Gridded { values: Vec<f64>, grid: VolumeGrid },
}

/// A nonnegative scalar field on `M` with a folded-in normalization.
#[derive(Clone, Debug)]
pub struct DensityField {
    pub kind: DensityKind,
    pub role: DensityRole,
    norm: f64,
}

impl DensityField {
    pub fn new(kind: DensityKind, role: DensityRole) -> Self {
        DensityField {
            kind,
            role,
            norm: 1.0,
        }
    }

    /// The identically-zero field (degenerate hypothesis case).
    pub fn zero(role: DensityRole) -> Self {
        DensityField {
            kind: DensityKind::Uniform,
            role,
            norm: 0.0,
        }
    }

    pub fn raw_value(&self, bg: &FlowBackground, x: &ChartPoint) -> f64 {
        match &self.kind {
            DensityKind::Uniform => 1.0,
            DensityKind::PeriodizedGaussian { center, sigma } => {
                let split = bg.curved_split();
                let flat = &x.coords()[split..];
                let lattice = bg.lattice();
                let n = flat.len();
                let base = bg.flat_delta(center, flat);
                let mut acc = 0.0;
                // images |k| <= 2 per axis; negligible truncation for
                // sigma well below the lattice sides
                let combos = 5usize.pow(n as u32);
                for c in 0..combos {
                    let mut code = c;
                    let mut d2 = 0.0;
                    for j in 0..n {
                        let shift = (code % 5) as i32 - 2;
                        code /= 5;
                        let d = base[j] + shift as f64 * lattice[j];
                        d2 += d * d;
                    }
                    acc += (-d2 / (2.0 * sigma * sigma)).exp();
                }
                acc
            }
            DensityKind::ZonalExp { axis, kappa } => {
                let split = bg.curved_split();
                let z: f64 = axis
                    .iter()
                    .zip(&x.coords()[..split])
                    .map(|(a, b)| a * b)
                    .sum();
                (kappa * z).exp()
            }
            DensityKind::Gridded { values, grid } => values[grid.cell_of(bg, x)],
        }
    }

    pub fn value(&self, bg: &FlowBackground, x: &ChartPoint) -> f64 {
        self.norm * self.raw_value(bg, x)
    }

    /// Quadrature mass in `g(t)` at the given resolution.
    pub fn mass(&self, bg: &FlowBackground, t: f64, res: usize) -> Result<f64> {
        if let DensityKind::Gridded { values, grid } = &self.kind {
            let _ = (t, res);
            return Ok(self.norm
                * values
                    .iter()
                    .zip(grid.weights())
                    .map(|(v, w)| v * w)
                    .sum::<f64>());
        }
        crate::quadrature::integrate_over(bg, t, res, |x| self.value(bg, x))
    }

    /// Folds a normalization constant so the quadrature mass in `g(t)`
    /// becomes 1.
    pub fn normalized(mut self, bg: &FlowBackground, t: f64, res: usize) -> Result<Self> {
        let m = self.mass(bg, t, res)?;
        self.norm /= m;
        Ok(self)
    }

    pub fn scale(&self) -> f64 {
        self.norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::ModelKind;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalization_reaches_unit_mass() {
        let bg = FlowBackground::new(ModelKind::FlatTorus, 2, 1.0, vec![1.0, 1.0], 10.0).unwrap();
        let d = DensityField::new(
            DensityKind::PeriodizedGaussian {
                center: vec![0.5, 0.5],
                sigma: 0.12,
            },
            DensityRole::U1,
        )
        .normalized(&bg, 1.0, 64)
        .unwrap();
        let m = d.mass(&bg, 1.0, 64).unwrap();
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-12);
        // against a finer grid the mass stays within the stated budget
        let m_fine = d.mass(&bg, 1.0, 192).unwrap();
        assert_abs_diff_eq!(m_fine, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn zonal_exp_normalizes_on_sphere() {
        let bg = FlowBackground::new(ModelKind::RoundSphere, 2, 1.0, vec![], 10.0).unwrap();
        let d = DensityField::new(
            DensityKind::ZonalExp {
                axis: vec![0.0, 0.0, 1.0],
                kappa: 1.0,
            },
            DensityRole::U2,
        )
        .normalized(&bg, 0.25, 96)
        .unwrap();
        assert_abs_diff_eq!(d.mass(&bg, 0.25, 96).unwrap(), 1.0, epsilon = 1e-12);
        assert!(d.value(&bg, &ChartPoint::sphere_polar(&[0.4, 0.1])) > 0.0);
    }

    #[test]
    fn uniform_mass_is_volume_scaled() {
        let bg = FlowBackground::new(ModelKind::FlatTorus, 3, 1.0, vec![2.0, 1.0, 1.0], 10.0)
            .unwrap();
        let d = DensityField::new(DensityKind::Uniform, DensityRole::V)
            .normalized(&bg, 1.0, 16)
            .unwrap();
        assert_abs_diff_eq!(d.value(&bg, &ChartPoint::torus(&[0.1, 0.2, 0.3])), 0.5);
    }
}
