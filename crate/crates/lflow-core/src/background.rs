//! Closed-form model solutions of the backward flow `dg/dt = 2 Ric`.
//!
//! Four homogeneous families are supported. Each carries its metric,
//! Christoffel symbols, and curvature data in closed form at any
//! `(point, time)` inside the validity window:
//!
//! * `FlatTorus` — static flat metric on `R^n / (L_1 Z x ... x L_n Z)`.
//! * `RoundSphere` — `g(t) = c(t) g_unit` with `c(t) = c0 + 2(n-1) t`.
//! * `HyperbolicQuotient` — `g(t) = c(t) g_H` with `c(t) = c0 - 2(n-1) t`,
//!   valid while `c` stays positive; realized on the hyperboloid chart.
//! * `ProductSphereFlat` — evolving round factor times a static flat torus.
//!
//! Points on curved factors are stored as unit embedding coordinates
//! (Euclidean for the sphere, Minkowski hyperboloid for the quotient), which
//! keeps the dynamics chart-free; the polar chart is only materialized by the
//! tensor-component operations below.

use crate::error::{LabError, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Tolerance for membership of embedding coordinates on their model surface.
pub const EMBEDDING_TOL: f64 = 1e-12;

/// Chart degeneracy guard for polar-angle tensor components.
const POLAR_CHART_TOL: f64 = 1e-8;

/// Model family of an exact backward-flow solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FlatTorus,
    RoundSphere,
    HyperbolicQuotient,
    ProductSphereFlat,
}

/// A point of the model space.
///
/// Torus factors store chart coordinates (taken mod the lattice); curved
/// factors store embedding coordinates: unit vectors in `R^{m+1}` for the
/// sphere, upper-hyperboloid vectors (`<x,x>_M = -1`, `x_0 > 0`) for the
/// hyperbolic quotient. For the product the curved block comes first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint(pub Vec<f64>);

impl ChartPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

/// An analytic solution of `dg/dt = 2 Ric` on a model space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowBackground {
    kind: ModelKind,
    dim: usize,
    scale0: f64,
    lattice: Vec<f64>,
    t_max: f64,
}

/// Curvature data of `g(t)` at a point, in the chart basis.
#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub scal: f64,
    /// Time derivative of scalar curvature at a fixed point.
    pub dscal_dt: f64,
    /// Covector components of `grad scal`; identically zero on these models.
    pub grad_scal: Vec<f64>,
    /// Ricci tensor components in the chart basis.
    pub ricci: DMatrix<f64>,
}

impl FlowBackground {
    pub fn new(
        kind: ModelKind,
        dim: usize,
        scale0: f64,
        lattice: Vec<f64>,
        t_max: f64,
    ) -> Result<Self> {
        if dim < 1 {
            return Err(LabError::InvalidBackground {
                reason: format!("dimension must be >= 1, got {dim}"),
            });
        }
        if !scale0.is_finite() || scale0 <= 0.0 {
            return Err(LabError::InvalidBackground {
                reason: format!("scale0 must be positive, got {scale0}"),
            });
        }
        if !t_max.is_finite() || t_max <= 0.0 {
            return Err(LabError::InvalidBackground {
                reason: format!("t_max must be positive, got {t_max}"),
            });
        }
        let lattice = match kind {
            ModelKind::FlatTorus => {
                let l = if lattice.is_empty() {
                    vec![1.0; dim]
                } else {
                    lattice
                };
                if l.len() != dim {
                    return Err(LabError::InvalidBackground {
                        reason: format!("torus lattice needs {dim} side lengths, got {}", l.len()),
                    });
                }
                l
            }
            ModelKind::RoundSphere | ModelKind::HyperbolicQuotient => {
                if !lattice.is_empty() {
                    return Err(LabError::InvalidBackground {
                        reason: "lattice sides are only meaningful for torus factors".into(),
                    });
                }
                vec![]
            }
            ModelKind::ProductSphereFlat => {
                if lattice.is_empty() || lattice.len() + 2 > dim + 1 {
                    return Err(LabError::InvalidBackground {
                        reason: format!(
                            "product needs 1 <= torus-factor dim <= n-2; lattice has {} sides, n = {dim}",
                            lattice.len()
                        ),
                    });
                }
                lattice
            }
        };
        if lattice.iter().any(|&l| !l.is_finite() || l <= 0.0) {
            return Err(LabError::InvalidBackground {
                reason: "lattice side lengths must be positive".into(),
            });
        }
        if kind == ModelKind::HyperbolicQuotient && dim < 2 {
            return Err(LabError::InvalidBackground {
                reason: "hyperbolic quotient needs dimension >= 2".into(),
            });
        }
        let bg = FlowBackground {
            kind,
            dim,
            scale0,
            lattice,
            t_max,
        };
        // The evolving scale must stay positive across the whole window.
        if bg.scale_at(t_max) <= 0.0 || bg.scale_at(0.0) <= 0.0 {
            return Err(LabError::InvalidBackground {
                reason: format!(
                    "scale c(t) must stay positive on [0, {t_max}]; c({t_max}) = {}",
                    bg.scale_at(t_max)
                ),
            });
        }
        Ok(bg)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale0(&self) -> f64 {
        self.scale0
    }

    pub fn lattice(&self) -> &[f64] {
        &self.lattice
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Dimension of the curved (sphere or hyperbolic) factor; 0 for the torus.
    pub fn curved_dim(&self) -> usize {
        match self.kind {
            ModelKind::FlatTorus => 0,
            ModelKind::RoundSphere | ModelKind::HyperbolicQuotient => self.dim,
            ModelKind::ProductSphereFlat => self.dim - self.lattice.len(),
        }
    }

    /// Dimension of the flat torus factor.
    pub fn flat_dim(&self) -> usize {
        self.dim - self.curved_dim()
    }

    /// Sign of the curved factor's sectional curvature: +1, -1, or 0.
    pub fn curvature_sign(&self) -> f64 {
        match self.kind {
            ModelKind::FlatTorus => 0.0,
            ModelKind::RoundSphere | ModelKind::ProductSphereFlat => 1.0,
            ModelKind::HyperbolicQuotient => -1.0,
        }
    }

    /// Number of stored coordinates per point (embedding + flat chart).
    pub fn chart_len(&self) -> usize {
        let m = self.curved_dim();
        if m == 0 {
            self.dim
        } else {
            m + 1 + self.flat_dim()
        }
    }

    /// Scale factor `c(t)` of the curved factor (1 for the flat torus).
    pub fn scale_at(&self, t: f64) -> f64 {
        let m = self.curved_dim();
        if m == 0 {
            1.0
        } else {
            self.scale0 + self.curvature_sign() * 2.0 * (m as f64 - 1.0) * t
        }
    }

    /// `c'(t)`, constant in time.
    pub fn scale_rate(&self) -> f64 {
        let m = self.curved_dim();
        if m == 0 {
            0.0
        } else {
            self.curvature_sign() * 2.0 * (m as f64 - 1.0)
        }
    }

    /// Scalar curvature of `g(t)`; position-independent on these models.
    pub fn scal_at_time(&self, t: f64) -> f64 {
        let m = self.curved_dim() as f64;
        if m == 0.0 {
            0.0
        } else {
            self.curvature_sign() * m * (m - 1.0) / self.scale_at(t)
        }
    }

    /// `d scal / dt` at fixed point.
    pub fn dscal_dt_at_time(&self, t: f64) -> f64 {
        let m = self.curved_dim() as f64;
        if m == 0.0 {
            0.0
        } else {
            let c = self.scale_at(t);
            -self.curvature_sign() * m * (m - 1.0) * self.scale_rate() / (c * c)
        }
    }

    /// Ricci eigenvalue on the curved factor w.r.t. the unit model metric:
    /// `Ric = rho_unit * g_unit` with `rho_unit = sign * (m - 1)`.
    pub fn ricci_unit_factor(&self) -> f64 {
        let m = self.curved_dim() as f64;
        if m == 0.0 {
            0.0
        } else {
            self.curvature_sign() * (m - 1.0)
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_max).contains(&t) || !t.is_finite() {
            return Err(LabError::TimeOutOfWindow {
                t,
                t_max: self.t_max,
            });
        }
        Ok(())
    }

    /// Validates a stored point: coordinate count, finiteness, and membership
    /// of the curved block on its model surface within `EMBEDDING_TOL`.
    pub fn check_point(&self, x: &ChartPoint) -> Result<()> {
        let c = x.coords();
        if c.len() != self.chart_len() {
            return Err(LabError::InvalidChartPoint {
                reason: format!("expected {} coordinates, got {}", self.chart_len(), c.len()),
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidChartPoint {
                reason: "non-finite coordinate".into(),
            });
        }
        let m = self.curved_dim();
        if m > 0 {
            let emb = &c[..m + 1];
            match self.kind {
                ModelKind::HyperbolicQuotient => {
                    let q = minkowski_dot(emb, emb);
                    if (q + 1.0).abs() > 1e3 * EMBEDDING_TOL || emb[0] <= 0.0 {
                        return Err(LabError::InvalidChartPoint {
                            reason: format!(
                                "hyperboloid coordinates violate <x,x>_M = -1 (got {q})"
                            ),
                        });
                    }
                }
                _ => {
                    let norm2: f64 = emb.iter().map(|v| v * v).sum();
                    if (norm2.sqrt() - 1.0).abs() > EMBEDDING_TOL {
                        return Err(LabError::InvalidChartPoint {
                            reason: format!(
                                "sphere coordinates have norm {} (must be 1 within 1e-12)",
                                norm2.sqrt()
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Tensor components in the polar chart
    // ------------------------------------------------------------------

    /// Polar chart angles of the curved block plus flat coordinates.
    ///
    /// Sphere factor of dimension m: colatitude-style angles
    /// `(theta_1, ..., theta_m)`; hyperbolic factor: `(rho, theta_2, ...,
    /// theta_m)`. Fails near chart degeneracies (poles / rho = 0).
    pub fn chart_coords(&self, x: &ChartPoint) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let m = self.curved_dim();
        let mut out = Vec::with_capacity(self.dim);
        if m > 0 {
            let emb = &x.coords()[..m + 1];
            match self.kind {
                ModelKind::HyperbolicQuotient => {
                    let rho = emb[0].max(1.0).acosh();
                    if rho.sinh() < POLAR_CHART_TOL {
                        return Err(LabError::InvalidChartPoint {
                            reason: "polar chart degenerate at rho = 0".into(),
                        });
                    }
                    out.push(rho);
                    let omega: Vec<f64> = emb[1..].iter().map(|v| v / rho.sinh()).collect();
                    out.extend(sphere_angles(&omega)?);
                }
                _ => out.extend(sphere_angles(emb)?),
            }
        }
        out.extend_from_slice(&x.coords()[self.curved_split()..]);
        Ok(out)
    }

    /// Diagonal of the unit-model chart metric at the given chart coordinates
    /// (curved block only; flat entries are 1).
    fn unit_metric_diag(&self, q: &[f64]) -> Vec<f64> {
        let m = self.curved_dim();
        let mut diag = vec![1.0; self.dim];
        if m == 0 {
            return diag;
        }
        match self.kind {
            ModelKind::HyperbolicQuotient => {
                // q = (rho, theta_2, ..., theta_m)
                let mut acc = q[0].sinh().powi(2);
                for k in 1..m {
                    diag[k] = acc;
                    acc *= q[k].sin().powi(2);
                }
            }
            _ => {
                // q = (theta_1, ..., theta_m)
                let mut acc = 1.0;
                for k in 0..m {
                    diag[k] = acc;
                    acc *= q[k].sin().powi(2);
                }
            }
        }
        diag
    }

    /// `d/d(q_a) log g_kk / 2` for the diagonal unit chart metric.
    fn half_log_derivative(&self, q: &[f64], a: usize, k: usize) -> f64 {
        let m = self.curved_dim();
        if m == 0 || a >= m || k >= m || a >= k {
            return 0.0;
        }
        match self.kind {
            ModelKind::HyperbolicQuotient => {
                if a == 0 {
                    1.0 / q[0].tanh()
                } else {
                    1.0 / q[a].tan()
                }
            }
            _ => 1.0 / q[a].tan(),
        }
    }

    /// Metric components `g(t)` in the chart basis at `x` (positive definite).
    pub fn metric_at(&self, x: &ChartPoint, t: f64) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        let q = self.chart_coords(x)?;
        let c = self.scale_at(t);
        let m = self.curved_dim();
        let diag = self.unit_metric_diag(&q);
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for k in 0..self.dim {
            g[(k, k)] = if k < m { c * diag[k] } else { 1.0 };
        }
        Ok(g)
    }

    /// Christoffel symbols `Gamma^k_{ab}` of `g(t)` in the chart at `x`,
    /// returned as `sym[k][(a, b)]`; symmetric in the lower indices and
    /// time-independent (the scale is spatially constant).
    pub fn christoffel_at(&self, x: &ChartPoint, t: f64) -> Result<Vec<DMatrix<f64>>> {
        self.check_time(t)?;
        let q = self.chart_coords(x)?;
        let m = self.curved_dim();
        let diag = self.unit_metric_diag(&q);
        let n = self.dim;
        let mut sym = vec![DMatrix::zeros(n, n); n];
        // Diagonal metric with g_kk depending only on earlier chart angles:
        //   Gamma^k_{ka} = Gamma^k_{ak} = d_a log(g_kk) / 2        (a < k)
        //   Gamma^k_{aa} = -(g_aa / g_kk) * d_k log(g_aa) / 2      (k < a)
        for k in 0..m {
            for a in 0..m {
                if a < k {
                    let lam = self.half_log_derivative(&q, a, k);
                    sym[k][(k, a)] = lam;
                    sym[k][(a, k)] = lam;
                } else if a > k {
                    let lam = self.half_log_derivative(&q, k, a);
                    sym[k][(a, a)] = -(diag[a] / diag[k]) * lam;
                }
            }
        }
        Ok(sym)
    }

    /// Full curvature data of `g(t)` at `x` in the chart basis.
    pub fn curvature_at(&self, x: &ChartPoint, t: f64) -> Result<CurvatureData> {
        self.check_time(t)?;
        let q = self.chart_coords(x)?;
        let m = self.curved_dim();
        let diag = self.unit_metric_diag(&q);
        let mut ricci = DMatrix::zeros(self.dim, self.dim);
        let rho = self.ricci_unit_factor();
        for k in 0..m {
            ricci[(k, k)] = rho * diag[k];
        }
        Ok(CurvatureData {
            scal: self.scal_at_time(t),
            dscal_dt: self.dscal_dt_at_time(t),
            grad_scal: vec![0.0; self.dim],
            ricci,
        })
    }

    /// Max-norm of `(g(t+dt) - g(t-dt)) / (2 dt) - 2 Ric_{g(t)}` at `x`.
    ///
    /// A validation helper: identically zero for an exact flow family up to
    /// finite-difference error.
    pub fn flow_residual(&self, x: &ChartPoint, t: f64, dt: f64) -> Result<f64> {
        self.check_time(t + dt)?;
        self.check_time(t - dt)?;
        let gp = self.metric_at(x, t + dt)?;
        let gm = self.metric_at(x, t - dt)?;
        let ric = self.curvature_at(x, t)?.ricci;
        let mut res: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let d = (gp[(i, j)] - gm[(i, j)]) / (2.0 * dt) - 2.0 * ric[(i, j)];
                res = res.max(d.abs());
            }
        }
        Ok(res)
    }

    // ------------------------------------------------------------------
    // Chart-free geometry of the stored representation
    // ------------------------------------------------------------------

    /// Index where the flat block starts inside the stored coordinates.
    pub fn curved_split(&self) -> usize {
        let m = self.curved_dim();
        if m == 0 {
            0
        } else {
            m + 1
        }
    }

    /// Componentwise minimal-image difference `b - a` on the flat block.
    pub fn flat_delta(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b.iter())
            .zip(self.lattice.iter())
            .map(|((&ai, &bi), &l)| {
                let mut d = (bi - ai) % l;
                if d > l / 2.0 {
                    d -= l;
                }
                if d <= -l / 2.0 {
                    d += l;
                }
                d
            })
            .collect()
    }

    /// Wraps flat coordinates into `[0, L_i)`.
    pub fn wrap_flat(&self, coords: &mut [f64]) {
        for (v, &l) in coords.iter_mut().zip(self.lattice.iter()) {
            *v = v.rem_euclid(l);
        }
    }

    /// Angle between curved-block embeddings (unit-model distance).
    ///
    /// Chord-based formulas avoid the catastrophic cancellation of
    /// `acos`/`acosh` near coincident points.
    pub fn curved_angle(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            ModelKind::HyperbolicQuotient => {
                // <a-b, a-b>_M = 4 sinh^2(theta/2)
                let d: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
                let chord2 = minkowski_dot(&d, &d).max(0.0);
                2.0 * (0.5 * chord2.sqrt()).asinh()
            }
            _ => {
                let mut diff2 = 0.0;
                let mut sum2 = 0.0;
                for (x, y) in a.iter().zip(b.iter()) {
                    diff2 += (x - y) * (x - y);
                    sum2 += (x + y) * (x + y);
                }
                2.0 * diff2.sqrt().atan2(sum2.sqrt())
            }
        }
    }

    /// `g(t)` distance between two stored points (minimal torus image,
    /// exact arc on the curved factor).
    pub fn dist_at(&self, a: &ChartPoint, b: &ChartPoint, t: f64) -> f64 {
        let split = self.curved_split();
        let mut d2 = 0.0;
        if self.curved_dim() > 0 {
            let th = self.curved_angle(&a.coords()[..split], &b.coords()[..split]);
            d2 += self.scale_at(t) * th * th;
        }
        if self.flat_dim() > 0 {
            let delta = self.flat_delta(&a.coords()[split..], &b.coords()[split..]);
            d2 += delta.iter().map(|v| v * v).sum::<f64>();
        }
        d2.sqrt()
    }

    /// Unit-model orthonormal tangent basis at `x`, as ambient/chart vectors
    /// of the stored representation. Deterministic.
    pub fn unit_tangent_basis(&self, x: &ChartPoint) -> Vec<Vec<f64>> {
        let split = self.curved_split();
        let len = self.chart_len();
        let mut basis = Vec::with_capacity(self.dim);
        let m = self.curved_dim();
        if m > 0 {
            let emb = &x.coords()[..split];
            let mink = self.kind == ModelKind::HyperbolicQuotient;
            let dot = |a: &[f64], b: &[f64]| {
                if mink {
                    minkowski_dot(a, b)
                } else {
                    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
                }
            };
            // Gram-Schmidt of coordinate axes against x and earlier vectors.
            let mut found: Vec<Vec<f64>> = Vec::with_capacity(m);
            for axis in 0..=m {
                if found.len() == m {
                    break;
                }
                let mut v = vec![0.0; m + 1];
                v[axis] = 1.0;
                // remove the normal component (<x,x> = +1 or -1)
                let xn = dot(emb, emb);
                let vx = dot(&v, emb);
                for i in 0..=m {
                    v[i] -= vx / xn * emb[i];
                }
                for w in &found {
                    let c = dot(&v, w);
                    for i in 0..=m {
                        v[i] -= c * w[i];
                    }
                }
                let norm = dot(&v, &v).max(0.0).sqrt();
                if norm > 1e-9 {
                    for vi in &mut v {
                        *vi /= norm;
                    }
                    found.push(v);
                }
            }
            debug_assert_eq!(found.len(), m);
            for v in found {
                let mut full = vec![0.0; len];
                full[..m + 1].copy_from_slice(&v);
                basis.push(full);
            }
        }
        for j in 0..self.flat_dim() {
            let mut full = vec![0.0; len];
            full[split + j] = 1.0;
            basis.push(full);
        }
        basis
    }

    /// Moves `x` a unit-model distance `delta` along the tangent `v`
    /// (ambient representation, assumed unit-model normalized).
    pub fn unit_move(&self, x: &ChartPoint, v: &[f64], delta: f64) -> ChartPoint {
        let split = self.curved_split();
        let len = self.chart_len();
        let mut out = vec![0.0; len];
        let m = self.curved_dim();
        if m > 0 {
            let emb = &x.coords()[..split];
            let vc = &v[..split];
            let speed = match self.kind {
                ModelKind::HyperbolicQuotient => minkowski_dot(vc, vc).max(0.0).sqrt(),
                _ => vc.iter().map(|z| z * z).sum::<f64>().sqrt(),
            };
            if speed < 1e-300 {
                out[..split].copy_from_slice(emb);
            } else {
                let th = delta * speed;
                match self.kind {
                    ModelKind::HyperbolicQuotient => {
                        for i in 0..split {
                            out[i] = emb[i] * th.cosh() + vc[i] / speed * th.sinh();
                        }
                        renormalize_hyperboloid(&mut out[..split]);
                    }
                    _ => {
                        for i in 0..split {
                            out[i] = emb[i] * th.cos() + vc[i] / speed * th.sin();
                        }
                        renormalize_sphere(&mut out[..split]);
                    }
                }
            }
        }
        for j in 0..self.flat_dim() {
            out[split + j] = x.coords()[split + j] + delta * v[split + j];
        }
        self.wrap_flat(&mut out[split..]);
        ChartPoint(out)
    }

    /// Parallel transport (unit model) of the ambient tangent `w` from the
    /// curved-factor base `x` along the geodesic with unit direction `u`
    /// through angle `theta`. Flat components are transported trivially by
    /// the caller.
    pub fn transport_curved(&self, x: &[f64], u: &[f64], theta: f64, w: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::HyperbolicQuotient => {
                let wu = minkowski_dot(w, u);
                let t_new: Vec<f64> = x
                    .iter()
                    .zip(u.iter())
                    .map(|(&xi, &ui)| xi * theta.sinh() + ui * theta.cosh())
                    .collect();
                w.iter()
                    .zip(u.iter().zip(t_new.iter()))
                    .map(|(&wi, (&ui, &ti))| wi - wu * ui + wu * ti)
                    .collect()
            }
            _ => {
                let wu: f64 = w.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                let t_new: Vec<f64> = x
                    .iter()
                    .zip(u.iter())
                    .map(|(&xi, &ui)| -xi * theta.sin() + ui * theta.cos())
                    .collect();
                w.iter()
                    .zip(u.iter().zip(t_new.iter()))
                    .map(|(&wi, (&ui, &ti))| wi - wu * ui + wu * ti)
                    .collect()
            }
        }
    }

    /// `g(t)` inner product of two ambient tangents at the same point.
    pub fn metric_dot(&self, a: &[f64], b: &[f64], t: f64) -> f64 {
        let split = self.curved_split();
        let mut acc = 0.0;
        if self.curved_dim() > 0 {
            let d = match self.kind {
                ModelKind::HyperbolicQuotient => minkowski_dot(&a[..split], &b[..split]),
                _ => a[..split]
                    .iter()
                    .zip(&b[..split])
                    .map(|(x, y)| x * y)
                    .sum(),
            };
            acc += self.scale_at(t) * d;
        }
        acc += a[split..]
            .iter()
            .zip(&b[split..])
            .map(|(x, y)| x * y)
            .sum::<f64>();
        acc
    }

    /// Total volume of `(M, g(t))`; used by uniform densities.
    pub fn volume_at(&self, t: f64) -> f64 {
        let m = self.curved_dim();
        let curved = if m == 0 {
            1.0
        } else {
            match self.kind {
                // Hyperbolic quotients have no canonical closed-form volume
                // here; integration over the quotient is out of scope.
                ModelKind::HyperbolicQuotient => f64::NAN,
                _ => self.scale_at(t).powf(m as f64 / 2.0) * unit_sphere_area(m),
            }
        };
        let flat: f64 = self.lattice.iter().product();
        curved * flat
    }
}

/// Minkowski inner product with signature `(-, +, ..., +)`.
pub fn minkowski_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = -a[0] * b[0];
    for i in 1..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Surface area of the unit m-sphere (`m >= 1`).
pub fn unit_sphere_area(m: usize) -> f64 {
    use std::f64::consts::PI;
    match m {
        1 => 2.0 * PI,
        2 => 4.0 * PI,
        3 => 2.0 * PI * PI,
        4 => 8.0 * PI * PI / 3.0,
        _ => {
            // 2 pi^{(m+1)/2} / Gamma((m+1)/2), via the recurrence A_m = 2 pi A_{m-2} / (m-1)
            let mut a = if m % 2 == 0 { 4.0 * PI } else { 2.0 * PI };
            let mut k = if m % 2 == 0 { 2 } else { 1 };
            while k < m {
                a *= 2.0 * PI / (k as f64 + 1.0);
                k += 2;
            }
            a
        }
    }
}

fn renormalize_sphere(v: &mut [f64]) {
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

fn renormalize_hyperboloid(v: &mut [f64]) {
    let q = -minkowski_dot(v, v);
    let s = q.max(1e-300).sqrt();
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Recovers hyperspherical angles from unit embedding coordinates.
fn sphere_angles(emb: &[f64]) -> Result<Vec<f64>> {
    let m = emb.len() - 1;
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        if j + 1 == m {
            out.push(emb[m].atan2(emb[m - 1]));
        } else {
            let tail: f64 = emb[j + 1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            let theta = tail.atan2(emb[j]);
            if theta.sin().abs() < POLAR_CHART_TOL {
                return Err(LabError::InvalidChartPoint {
                    reason: format!("polar chart degenerate: sin(theta_{}) ~ 0", j + 1),
                });
            }
            out.push(theta);
        }
    }
    Ok(out)
}

/// Convenience constructors for points.
impl ChartPoint {
    /// Torus point from chart coordinates.
    pub fn torus(coords: &[f64]) -> Self {
        ChartPoint(coords.to_vec())
    }

    /// Sphere point from embedding coordinates (renormalized).
    pub fn sphere(emb: &[f64]) -> Self {
        let mut v = emb.to_vec();
        renormalize_sphere(&mut v);
        ChartPoint(v)
    }

    /// Sphere point from polar angles `(theta_1, ..., theta_m)`.
    pub fn sphere_polar(angles: &[f64]) -> Self {
        let m = angles.len();
        let mut emb = vec![0.0; m + 1];
        let mut acc = 1.0;
        for (j, &th) in angles.iter().enumerate() {
            emb[j] = acc * th.cos();
            acc *= th.sin();
        }
        emb[m] = acc;
        ChartPoint(emb)
    }

    /// Hyperboloid point from `(rho, direction in R^m)`.
    pub fn hyperboloid(rho: f64, dir: &[f64]) -> Self {
        let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = Vec::with_capacity(dir.len() + 1);
        v.push(rho.cosh());
        if norm > 0.0 {
            for d in dir {
                v.push(rho.sinh() * d / norm);
            }
        } else {
            v.extend(std::iter::repeat(0.0).take(dir.len()));
        }
        renormalize_hyperboloid(&mut v);
        ChartPoint(v)
    }

    /// Product point: curved embedding block followed by torus coordinates.
    pub fn product(curved: &[f64], flat: &[f64]) -> Self {
        let mut v = curved.to_vec();
        v.extend_from_slice(flat);
        ChartPoint(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat2() -> FlowBackground {
        FlowBackground::new(ModelKind::FlatTorus, 2, 1.0, vec![1.0, 1.0], 10.0).unwrap()
    }

    fn sphere2() -> FlowBackground {
        FlowBackground::new(ModelKind::RoundSphere, 2, 1.0, vec![], 10.0).unwrap()
    }

    #[test]
    fn flat_metric_is_static_identity() {
        let bg = flat2();
        let x = ChartPoint::torus(&[0.3, 0.4]);
        let g = bg.metric_at(&x, 0.7).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 1.0);
        assert_abs_diff_eq!(g[(1, 1)], 1.0);
        assert_abs_diff_eq!(g[(0, 1)], 0.0);
        let curv = bg.curvature_at(&x, 0.7).unwrap();
        assert_eq!(curv.scal, 0.0);
        assert_eq!(curv.dscal_dt, 0.0);
        assert!(curv.ricci.iter().all(|&v| v == 0.0));
        let sym = bg.christoffel_at(&x, 0.7).unwrap();
        assert!(sym.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sphere_scale_law() {
        let bg = sphere2();
        // c(t) = 1 + 2 t for n = 2
        assert_abs_diff_eq!(bg.scale_at(0.5), 2.0);
        let x = ChartPoint::sphere_polar(&[0.9, 0.4]);
        let g = bg.metric_at(&x, 0.5).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[(1, 1)], 2.0 * 0.9f64.sin().powi(2), epsilon = 1e-14);
    }

    #[test]
    fn sphere_curvature_values() {
        let bg = sphere2();
        let x = ChartPoint::sphere_polar(&[1.1, 0.3]);
        let c0 = bg.curvature_at(&x, 0.0).unwrap();
        assert_abs_diff_eq!(c0.scal, 2.0, epsilon = 1e-14);
        let c1 = bg.curvature_at(&x, 0.5).unwrap();
        assert_abs_diff_eq!(c1.scal, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c1.dscal_dt, -1.0, epsilon = 1e-14);
        // Ric = ((n-1)/c) g
        let g = bg.metric_at(&x, 0.5).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(c1.ricci[(i, i)], g[(i, i)] / 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn hyperbolic_scale_law() {
        let bg = FlowBackground::new(ModelKind::HyperbolicQuotient, 2, 10.0, vec![], 4.0).unwrap();
        assert_abs_diff_eq!(bg.scale_at(1.0), 8.0);
        let x = ChartPoint::hyperboloid(0.7, &[1.0, 0.2]);
        bg.check_point(&x).unwrap();
        let g = bg.metric_at(&x, 1.0).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[(1, 1)], 8.0 * 0.7f64.sinh().powi(2), epsilon = 1e-12);
        let c = bg.curvature_at(&x, 1.0).unwrap();
        assert_abs_diff_eq!(c.scal, -2.0 / 8.0, epsilon = 1e-14);
    }

    #[test]
    fn hyperbolic_window_guard() {
        // c(t) = 10 - 2 t must stay positive: t_max = 6 is rejected.
        assert!(FlowBackground::new(ModelKind::HyperbolicQuotient, 2, 10.0, vec![], 6.0).is_err());
    }

    #[test]
    fn christoffel_matches_metric_differences() {
        // Gamma from the closed form vs finite differences of metric_at,
        // checked through the Koszul formula on a sphere polar chart.
        let bg = sphere2();
        let x = ChartPoint::sphere_polar(&[std::f64::consts::FRAC_PI_4, 0.7]);
        let t = 0.3;
        let q = bg.chart_coords(&x).unwrap();
        let h = 1e-6;
        let n = 2;
        // dg[a][(i,j)] = d g_ij / d q_a by central differences
        let mut dg = vec![DMatrix::<f64>::zeros(n, n); n];
        for a in 0..n {
            let mut qp = q.clone();
            qp[a] += h;
            let mut qm = q.clone();
            qm[a] -= h;
            let gp = bg.metric_at(&ChartPoint::sphere_polar(&qp), t).unwrap();
            let gm = bg.metric_at(&ChartPoint::sphere_polar(&qm), t).unwrap();
            dg[a] = (gp - gm) / (2.0 * h);
        }
        let g = bg.metric_at(&x, t).unwrap();
        let ginv = g.clone().try_inverse().unwrap();
        let sym = bg.christoffel_at(&x, t).unwrap();
        for k in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut koszul = 0.0;
                    for l in 0..n {
                        koszul += 0.5
                            * ginv[(k, l)]
                            * (dg[a][(l, b)] + dg[b][(l, a)] - dg[l][(a, b)]);
                    }
                    assert_abs_diff_eq!(sym[k][(a, b)], koszul, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn flow_residual_tiny_on_models() {
        let configs = [
            FlowBackground::new(ModelKind::FlatTorus, 2, 1.0, vec![1.0, 1.0], 10.0).unwrap(),
            sphere2(),
            FlowBackground::new(ModelKind::HyperbolicQuotient, 3, 20.0, vec![], 4.0).unwrap(),
            FlowBackground::new(ModelKind::ProductSphereFlat, 3, 1.0, vec![1.0], 10.0).unwrap(),
        ];
        let pts = [
            ChartPoint::torus(&[0.2, 0.8]),
            ChartPoint::sphere_polar(&[1.0, 2.0]),
            ChartPoint::hyperboloid(0.5, &[0.3, 1.0, 0.1]),
            ChartPoint::product(&ChartPoint::sphere_polar(&[1.2, 0.4]).0, &[0.7]),
        ];
        for (bg, x) in configs.iter().zip(pts.iter()) {
            let r = bg.flow_residual(x, 1.0, 1e-4).unwrap();
            assert!(r <= 1e-7, "flow residual {r} too large for {:?}", bg.kind());
        }
    }

    #[test]
    fn product_factor_split() {
        let bg = FlowBackground::new(ModelKind::ProductSphereFlat, 3, 1.0, vec![2.0], 10.0).unwrap();
        assert_eq!(bg.curved_dim(), 2);
        assert_eq!(bg.flat_dim(), 1);
        assert_eq!(bg.chart_len(), 4);
        // scale follows the sphere-factor dimension m = 2
        assert_abs_diff_eq!(bg.scale_at(1.0), 3.0);
        assert_abs_diff_eq!(bg.scal_at_time(1.0), 2.0 / 3.0);
    }

    #[test]
    fn torus_min_image_distance() {
        let bg = flat2();
        let a = ChartPoint::torus(&[0.0, 0.0]);
        let b = ChartPoint::torus(&[0.9, 0.0]);
        assert_abs_diff_eq!(bg.dist_at(&a, &b, 0.0), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn unit_move_round_trip() {
        let bg = sphere2();
        let x = ChartPoint::sphere_polar(&[1.0, 0.5]);
        let basis = bg.unit_tangent_basis(&x);
        assert_eq!(basis.len(), 2);
        let y = bg.unit_move(&x, &basis[0], 0.3);
        bg.check_point(&y).unwrap();
        assert_abs_diff_eq!(bg.curved_angle(&x.0, &y.0), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn transport_preserves_unit_norm() {
        let bg = sphere2();
        let x = ChartPoint::sphere_polar(&[1.0, 0.5]);
        let basis = bg.unit_tangent_basis(&x);
        let u = &basis[0][..3];
        let w = &basis[1][..3];
        let moved = bg.transport_curved(&x.0[..3], u, 0.8, w);
        let n: f64 = moved.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        // transported vector stays tangent at the moved point
        let y = bg.unit_move(&x, &basis[0], 0.8);
        let dot: f64 = moved.iter().zip(&y.0[..3]).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(dot, 0.0, epsilon = 1e-12);
    }
}
