//! Quadrature grids over the model spaces.
//!
//! Torus factors use tensor-product midpoint rules; the 2-sphere uses a
//! latitude-weighted product grid. Both are order 2 with budgetable error.
//! The same cell layout backs the scatter grids of the transport module, so
//! scattered values integrate consistently.

use crate::background::{ChartPoint, FlowBackground, ModelKind};
use crate::error::{LabError, Result};

/// Midpoint cells covering `M` with `dvol_{g(t)}` weights.
#[derive(Clone, Debug)]
pub struct VolumeGrid {
    centers: Vec<ChartPoint>,
    weights: Vec<f64>,
    /// per-axis cell counts (torus axes, or [theta, phi] on the sphere)
    dims: Vec<usize>,
    t: f64,
}

impl VolumeGrid {
    /// Builds a grid with roughly `res` cells per axis at time `t`.
    pub fn new(bg: &FlowBackground, t: f64, res: usize) -> Result<Self> {
        bg.check_time(t)?;
        if res < 2 {
            return Err(LabError::config_plain("grid resolution must be >= 2"));
        }
        match bg.kind() {
            ModelKind::FlatTorus => {
                let n = bg.dim();
                let lattice = bg.lattice().to_vec();
                let dims = vec![res; n];
                let cell_vol: f64 = lattice.iter().map(|l| l / res as f64).product();
                let total = res.pow(n as u32);
                let mut centers = Vec::with_capacity(total);
                for idx in 0..total {
                    let mut rem = idx;
                    let mut c = vec![0.0; n];
                    for j in 0..n {
                        let i = rem % res;
                        rem /= res;
                        c[j] = (i as f64 + 0.5) * lattice[j] / res as f64;
                    }
                    centers.push(ChartPoint(c));
                }
                Ok(VolumeGrid {
                    centers,
                    weights: vec![cell_vol; total],
                    dims,
                    t,
                })
            }
            ModelKind::RoundSphere => {
                if bg.dim() != 2 {
                    return Err(LabError::config_plain(
                        "sphere quadrature grids are implemented for dimension 2",
                    ));
                }
                let n_theta = res;
                let n_phi = 2 * res;
                let c = bg.scale_at(t);
                let d_theta = std::f64::consts::PI / n_theta as f64;
                let d_phi = std::f64::consts::TAU / n_phi as f64;
                let mut centers = Vec::with_capacity(n_theta * n_phi);
                let mut weights = Vec::with_capacity(n_theta * n_phi);
                for i in 0..n_theta {
                    let theta = (i as f64 + 0.5) * d_theta;
                    // dvol_{g(t)} = c^{n/2} sin(theta) dtheta dphi for n = 2;
                    // exact latitude-band weights keep constants exact
                    let band = (i as f64 * d_theta).cos() - ((i + 1) as f64 * d_theta).cos();
                    let w = c * band * d_phi;
                    for j in 0..n_phi {
                        let phi = -std::f64::consts::PI + (j as f64 + 0.5) * d_phi;
                        centers.push(ChartPoint(vec![
                            theta.cos(),
                            theta.sin() * phi.cos(),
                            theta.sin() * phi.sin(),
                        ]));
                        weights.push(w);
                    }
                }
                Ok(VolumeGrid {
                    centers,
                    weights,
                    dims: vec![n_theta, n_phi],
                    t,
                })
            }
            _ => Err(LabError::config_plain(
                "volume grids cover the flat torus and the 2-sphere",
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn centers(&self) -> &[ChartPoint] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ChartPoint, f64)> {
        self.centers.iter().zip(self.weights.iter().copied())
    }

    /// Flat cell index of a point, matching the layout of `centers`.
    pub fn cell_of(&self, bg: &FlowBackground, x: &ChartPoint) -> usize {
        match bg.kind() {
            ModelKind::FlatTorus => {
                let res = self.dims[0];
                let mut idx = 0;
                for j in (0..bg.dim()).rev() {
                    let l = bg.lattice()[j];
                    let v = x.coords()[j].rem_euclid(l);
                    let mut i = (v / l * res as f64) as usize;
                    if i >= res {
                        i = res - 1;
                    }
                    idx = idx * res + i;
                }
                idx
            }
            ModelKind::RoundSphere => {
                let (n_theta, n_phi) = (self.dims[0], self.dims[1]);
                let c = x.coords();
                let theta = c[0].clamp(-1.0, 1.0).acos();
                let phi = c[2].atan2(c[1]);
                let mut i = (theta / std::f64::consts::PI * n_theta as f64) as usize;
                if i >= n_theta {
                    i = n_theta - 1;
                }
                let mut j =
                    ((phi + std::f64::consts::PI) / std::f64::consts::TAU * n_phi as f64) as usize;
                if j >= n_phi {
                    j = n_phi - 1;
                }
                i * n_phi + j
            }
            _ => unreachable!("grids exist only for torus and 2-sphere"),
        }
    }
}

/// Integrates `f` over `(M, g(t))` with the midpoint grid.
pub fn integrate_over<F>(bg: &FlowBackground, t: f64, res: usize, mut f: F) -> Result<f64>
where
    F: FnMut(&ChartPoint) -> f64,
{
    let grid = VolumeGrid::new(bg, t, res)?;
    Ok(grid.iter().map(|(x, w)| f(x) * w).sum())
}

/// Volume in `g(t)` of the `g(0)`-geodesic ball of radius `r` around any
/// point of a homogeneous model. Radial quadrature of the area function.
pub fn ball_volume(bg: &FlowBackground, r: f64, t: f64) -> Result<f64> {
    bg.check_time(t)?;
    let n = bg.dim();
    match bg.kind() {
        ModelKind::FlatTorus => {
            if 2.0 * r > bg.lattice().iter().cloned().fold(f64::INFINITY, f64::min) {
                return Err(LabError::config_plain(
                    "ball radius exceeds the torus injectivity radius",
                ));
            }
            let area = crate::background::unit_sphere_area(n - 1);
            Ok(area * r.powi(n as i32) / n as f64)
        }
        ModelKind::RoundSphere | ModelKind::HyperbolicQuotient => {
            let c0 = bg.scale0();
            let ct = bg.scale_at(t);
            let rho_max = r / c0.sqrt();
            let area = crate::background::unit_sphere_area(n - 1);
            // vol_{g(0)} = c0^{n/2} * area * int_0^{rho} sin^{n-1} (or sinh)
            let steps = 4096;
            let h = rho_max / steps as f64;
            let mut acc = 0.0;
            for i in 0..steps {
                let u = (i as f64 + 0.5) * h;
                let s = if bg.kind() == ModelKind::HyperbolicQuotient {
                    u.sinh()
                } else {
                    u.sin()
                };
                acc += s.powi(n as i32 - 1) * h;
            }
            Ok((ct / c0).powf(n as f64 / 2.0) * c0.powf(n as f64 / 2.0) * area * acc)
        }
        ModelKind::ProductSphereFlat => Err(LabError::config_plain(
            "geodesic ball volumes are not provided on product models",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn torus_grid_integrates_volume() {
        let bg = FlowBackground::new(ModelKind::FlatTorus, 2, 1.0, vec![2.0, 3.0], 10.0).unwrap();
        let v = integrate_over(&bg, 1.0, 16, |_| 1.0).unwrap();
        assert_abs_diff_eq!(v, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn sphere_grid_integrates_area() {
        let bg = FlowBackground::new(ModelKind::RoundSphere, 2, 1.0, vec![], 10.0).unwrap();
        // area of g(t) sphere = 4 pi c(t)
        let v = integrate_over(&bg, 0.5, 64, |_| 1.0).unwrap();
        assert_abs_diff_eq!(v, 4.0 * std::f64::consts::PI * 2.0, epsilon = 1e-8);
        // a smooth zonal integrand: int exp(cos theta) over unit sphere
        // equals 2 pi (e - 1/e); scaled by c(t) at t = 0.5 it doubles
        let z = integrate_over(&bg, 0.5, 96, |x| x.coords()[0].exp()).unwrap();
        let expect = 2.0 * std::f64::consts::TAU * (1f64.exp() - (-1f64).exp()) / 2.0 * 2.0;
        assert_abs_diff_eq!(z, expect, epsilon = 1e-4 * expect);
    }

    #[test]
    fn cell_lookup_matches_centers() {
        let bg = FlowBackground::new(ModelKind::FlatTorus, 2, 1.0, vec![1.0, 1.0], 10.0).unwrap();
        let grid = VolumeGrid::new(&bg, 1.0, 8).unwrap();
        for (idx, (c, _)) in grid.iter().enumerate() {
            assert_eq!(grid.cell_of(&bg, c), idx);
        }
        let bg2 = FlowBackground::new(ModelKind::RoundSphere, 2, 1.0, vec![], 10.0).unwrap();
        let grid2 = VolumeGrid::new(&bg2, 1.0, 12).unwrap();
        for (idx, (c, _)) in grid2.iter().enumerate() {
            assert_eq!(grid2.cell_of(&bg2, c), idx);
        }
    }

    #[test]
    fn flat_ball_volume() {
        let bg = FlowBackground::new(ModelKind::FlatTorus, 2, 1.0, vec![4.0, 4.0], 10.0).unwrap();
        let v = ball_volume(&bg, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::PI * 0.25, epsilon = 1e-12);
    }

    #[test]
    fn sphere_cap_volume() {
        let bg = FlowBackground::new(ModelKind::RoundSphere, 2, 1.0, vec![], 10.0).unwrap();
        // unit-sphere cap of geodesic radius r has area 2 pi (1 - cos r)
        let r = 0.3;
        let v = ball_volume(&bg, r, 0.0).unwrap();
        assert_abs_diff_eq!(
            v,
            std::f64::consts::TAU * (1.0 - r.cos()),
            epsilon = 1e-7
        );
    }
}
