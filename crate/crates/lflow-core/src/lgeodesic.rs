//! L-length, L-geodesic shooting, the L-exponential map, and the two-point
//! distance `Q`.
//!
//! Everything runs in the variable `s = sqrt(t)`, where the length integrand
//! becomes `(1/2) |dp/ds|^2_{g(s^2)} + 2 s^2 scal_{g(s^2)}` and the
//! stationarity system is regular down to `s = 0`. The stationarity ODE used
//! below is the Euler-Lagrange equation of that Lagrangian,
//!
//! ```text
//!   p'' + Gamma(p', p') + 4 s Ric^#(p') - 2 s^2 grad scal = 0,
//! ```
//!
//! specialized to the homogeneous model backgrounds: on a curved factor the
//! trajectory stays on the model geodesic through its initial point and
//! velocity, leaving a scalar angle ODE `theta'' = -4 s (rho/c) theta'`;
//! flat coordinates travel in straight lines in `s`. Correctness is enforced
//! by the discrete first-variation defect and the flat closed form, not by
//! trusting the transcription.

use crate::background::{ChartPoint, FlowBackground};
use crate::error::{LabError, Result};
use crate::ode::{integrate_to_nodes, OdeOptions};
use nalgebra::{DMatrix, DVector};

/// A discretized spacetime path in the `s = sqrt(t)` parametrization.
#[derive(Clone, Debug)]
pub struct TimePath {
    pub s_nodes: Vec<f64>,
    pub points: Vec<ChartPoint>,
    pub t_range: (f64, f64),
}

/// Minimum number of path nodes accepted by the discrete functional.
pub const MIN_PATH_NODES: usize = 17;

impl TimePath {
    pub fn new(s_nodes: Vec<f64>, points: Vec<ChartPoint>, t_range: (f64, f64)) -> Result<Self> {
        if s_nodes.len() < MIN_PATH_NODES {
            return Err(LabError::InvalidPath {
                reason: format!(
                    "need at least {MIN_PATH_NODES} nodes, got {}",
                    s_nodes.len()
                ),
            });
        }
        if s_nodes.len() != points.len() {
            return Err(LabError::InvalidPath {
                reason: "node and point counts differ".into(),
            });
        }
        if s_nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::InvalidPath {
                reason: "s grid must be strictly increasing".into(),
            });
        }
        let (tau1, tau2) = t_range;
        if tau1 < 0.0 || tau2 <= tau1 {
            return Err(LabError::InvalidPath {
                reason: format!("invalid time range ({tau1}, {tau2})"),
            });
        }
        let s1 = tau1.sqrt();
        let s2 = tau2.sqrt();
        if (s_nodes[0] - s1).abs() > 1e-12 || (s_nodes[s_nodes.len() - 1] - s2).abs() > 1e-12 {
            return Err(LabError::InvalidPath {
                reason: "s grid endpoints must equal sqrt of the time range".into(),
            });
        }
        Ok(TimePath {
            s_nodes,
            points,
            t_range,
        })
    }

    pub fn start(&self) -> &ChartPoint {
        &self.points[0]
    }

    pub fn end(&self) -> &ChartPoint {
        &self.points[self.points.len() - 1]
    }
}

/// A solved L-geodesic: path, initial datum `Z = sqrt(tau1) gamma'(tau1)`,
/// discrete length, and first-variation defect.
#[derive(Clone, Debug)]
pub struct LGeodesic {
    pub path: TimePath,
    pub z: Vec<f64>,
    pub length: f64,
    pub stationarity_residual: f64,
}

/// Result of the two-point problem defining the distance `Q`.
#[derive(Clone, Debug)]
pub struct DistanceResult {
    pub q: f64,
    pub geodesic: LGeodesic,
    pub multiplicity_hint: usize,
}

/// Discretization and root-finding controls for the geodesic solvers.
#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Node count of returned paths (uniform in `s`).
    pub path_nodes: usize,
    pub ode: OdeOptions,
    /// Endpoint matching tolerance of the shooting refinement.
    pub shooting_tol: f64,
    pub max_shooting_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            // dense enough that the node-quadrature bias of the returned
            // length stays below the 1e-5 oracle budgets even for
            // near-antipodal sphere pairs
            path_nodes: 513,
            ode: OdeOptions::default(),
            shooting_tol: 1e-11,
            max_shooting_iters: 40,
        }
    }
}

impl SolverOptions {
    /// Coarser settings for bulk quadrature loops.
    pub fn coarse() -> Self {
        SolverOptions {
            path_nodes: 65,
            ..SolverOptions::default()
        }
    }
}

// ---------------------------------------------------------------------
// Reduced dynamics frame
// ---------------------------------------------------------------------

/// Local frame in which the stationarity system of one geodesic is solved:
/// a model geodesic direction on the curved factor (angle coordinate) plus
/// unwrapped flat coordinates.
pub(crate) struct ReducedFrame<'b> {
    pub bg: &'b FlowBackground,
    /// Curved-block embedding of the start point (empty when no curved factor).
    pub base: Vec<f64>,
    /// Unit tangent (unit-model norm) of the curved trajectory plane.
    pub dir: Vec<f64>,
    /// Unwrapped flat chart coordinates of the start point.
    pub flat0: Vec<f64>,
}

impl<'b> ReducedFrame<'b> {
    /// Reduced dimension: one angle coordinate plus the flat block.
    pub fn dim(&self) -> usize {
        let c = usize::from(!self.base.is_empty());
        c + self.flat0.len()
    }

    pub fn has_curved(&self) -> bool {
        !self.base.is_empty()
    }

    /// Frame through `x` towards `y`; also returns (angle gap, flat delta).
    pub fn towards(
        bg: &'b FlowBackground,
        x: &ChartPoint,
        y: &ChartPoint,
    ) -> (Self, f64, Vec<f64>) {
        let split = bg.curved_split();
        let (base, dir, gap) = if bg.curved_dim() > 0 {
            let xc = &x.coords()[..split];
            let yc = &y.coords()[..split];
            let gap = bg.curved_angle(xc, yc);
            let mut dir: Vec<f64> = match bg.kind() {
                crate::background::ModelKind::HyperbolicQuotient => {
                    let d = crate::background::minkowski_dot(xc, yc);
                    yc.iter().zip(xc.iter()).map(|(&yi, &xi)| yi + d * xi).collect()
                }
                _ => {
                    let d: f64 = xc.iter().zip(yc.iter()).map(|(a, b)| a * b).sum();
                    yc.iter().zip(xc.iter()).map(|(&yi, &xi)| yi - d * xi).collect()
                }
            };
            let norm = match bg.kind() {
                crate::background::ModelKind::HyperbolicQuotient => {
                    crate::background::minkowski_dot(&dir, &dir).max(0.0).sqrt()
                }
                _ => dir.iter().map(|v| v * v).sum::<f64>().sqrt(),
            };
            if norm > 1e-9 {
                for v in &mut dir {
                    *v /= norm;
                }
            } else {
                // x and y (anti)podal or equal: any plane through x works.
                dir = bg.unit_tangent_basis(x)[0][..split].to_vec();
            }
            (xc.to_vec(), dir, gap)
        } else {
            (vec![], vec![], 0.0)
        };
        let flat0 = x.coords()[split..].to_vec();
        let fdelta = if bg.flat_dim() > 0 {
            bg.flat_delta(&x.coords()[split..], &y.coords()[split..])
        } else {
            vec![]
        };
        (
            ReducedFrame {
                bg,
                base,
                dir,
                flat0,
            },
            gap,
            fdelta,
        )
    }

    /// Frame through `x` along the initial datum `Z`; returns reduced
    /// initial slope `dq/ds(s1) = 2 Z` in frame coordinates.
    pub fn along(bg: &'b FlowBackground, x: &ChartPoint, z: &[f64]) -> (Self, Vec<f64>) {
        let split = bg.curved_split();
        let mut qdot = Vec::new();
        let (base, dir) = if bg.curved_dim() > 0 {
            let xc = &x.coords()[..split];
            // project Z onto the tangent space, then split speed/direction
            let zc = &z[..split];
            let mut tangent: Vec<f64> = match bg.kind() {
                crate::background::ModelKind::HyperbolicQuotient => {
                    let d = crate::background::minkowski_dot(zc, xc);
                    zc.iter().zip(xc.iter()).map(|(&zi, &xi)| zi + d * xi).collect()
                }
                _ => {
                    let d: f64 = zc.iter().zip(xc.iter()).map(|(a, b)| a * b).sum();
                    zc.iter().zip(xc.iter()).map(|(&zi, &xi)| zi - d * xi).collect()
                }
            };
            let speed = match bg.kind() {
                crate::background::ModelKind::HyperbolicQuotient => {
                    crate::background::minkowski_dot(&tangent, &tangent).max(0.0).sqrt()
                }
                _ => tangent.iter().map(|v| v * v).sum::<f64>().sqrt(),
            };
            if speed > 1e-14 {
                for v in &mut tangent {
                    *v /= speed;
                }
                qdot.push(2.0 * speed);
            } else {
                tangent = bg.unit_tangent_basis(x)[0][..split].to_vec();
                qdot.push(0.0);
            }
            (xc.to_vec(), tangent)
        } else {
            (vec![], vec![])
        };
        for &zf in &z[split..] {
            qdot.push(2.0 * zf);
        }
        let flat0 = x.coords()[split..].to_vec();
        (
            ReducedFrame {
                bg,
                base,
                dir,
                flat0,
            },
            qdot,
        )
    }

    /// Ambient/chart representation of the datum from a reduced slope.
    pub fn z_from_slope(&self, qdot: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.bg.chart_len()];
        let split = self.bg.curved_split();
        let mut idx = 0;
        if !self.base.is_empty() {
            for i in 0..split {
                z[i] = 0.5 * qdot[0] * self.dir[i];
            }
            idx = 1;
        }
        for j in 0..self.flat0.len() {
            z[split + j] = 0.5 * qdot[idx + j];
        }
        z
    }

    /// Chart point for reduced coordinates `q`.
    pub fn point(&self, q: &[f64]) -> ChartPoint {
        let split = self.bg.curved_split();
        let mut out = vec![0.0; self.bg.chart_len()];
        let mut idx = 0;
        if !self.base.is_empty() {
            let th = q[0];
            match self.bg.kind() {
                crate::background::ModelKind::HyperbolicQuotient => {
                    for i in 0..split {
                        out[i] = self.base[i] * th.cosh() + self.dir[i] * th.sinh();
                    }
                }
                _ => {
                    for i in 0..split {
                        out[i] = self.base[i] * th.cos() + self.dir[i] * th.sin();
                    }
                }
            }
            idx = 1;
        }
        for j in 0..self.flat0.len() {
            out[split + j] = q[idx + j];
        }
        self.bg.wrap_flat(&mut out[split..]);
        ChartPoint(out)
    }

    /// Right-hand side of the reduced stationarity system,
    /// state `y = [q, dq/ds]`.
    pub fn rhs(&self, s: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            dy[i] = y[d + i];
        }
        let mut idx = 0;
        if !self.base.is_empty() {
            let c = self.bg.scale_at(s * s);
            let rho = self.bg.ricci_unit_factor();
            dy[d] = -4.0 * s * rho / c * y[d];
            idx = 1;
        }
        for j in idx..d {
            dy[d + j] = 0.0;
        }
    }

    /// Integrates the reduced system over `s_nodes`, returning full states.
    pub fn integrate(
        &self,
        s_nodes: &[f64],
        q0: &[f64],
        qdot0: &[f64],
        opts: &OdeOptions,
    ) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        let mut y0 = Vec::with_capacity(2 * d);
        y0.extend_from_slice(q0);
        y0.extend_from_slice(qdot0);
        let mut o = *opts;
        o.velocity_block = Some((d, 2 * d));
        integrate_to_nodes(|s, y, dy| self.rhs(s, y, dy), s_nodes, &y0, &o)
    }

    pub fn q0(&self) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.dim());
        if !self.base.is_empty() {
            q.push(0.0);
        }
        q.extend_from_slice(&self.flat0);
        q
    }
}

// ---------------------------------------------------------------------
// Discrete L-length and first variation
// ---------------------------------------------------------------------

fn segment_energy(
    bg: &FlowBackground,
    a: &ChartPoint,
    b: &ChartPoint,
    s_lo: f64,
    s_hi: f64,
) -> f64 {
    let ds = s_hi - s_lo;
    let s_mid = 0.5 * (s_lo + s_hi);
    let t_mid = s_mid * s_mid;
    let d = bg.dist_at(a, b, t_mid);
    0.5 * d * d / ds + 2.0 * s_mid * s_mid * bg.scal_at_time(t_mid) * ds
}

/// Quadrature of the L-integrand over a discretized path, computed in the
/// `s = sqrt(t)` variable; second order in the node count.
pub fn l_length(path: &TimePath, bg: &FlowBackground) -> Result<f64> {
    validate_path(path, bg)?;
    let mut acc = 0.0;
    for i in 0..path.s_nodes.len() - 1 {
        acc += segment_energy(
            bg,
            &path.points[i],
            &path.points[i + 1],
            path.s_nodes[i],
            path.s_nodes[i + 1],
        );
    }
    Ok(acc)
}

/// Cumulative L-length at every node: entry `k` is the length of the
/// restriction to `[s_0, s_k]`. Entry 0 is zero.
pub fn l_length_prefix(path: &TimePath, bg: &FlowBackground) -> Result<Vec<f64>> {
    validate_path(path, bg)?;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(path.s_nodes.len());
    out.push(0.0);
    for i in 0..path.s_nodes.len() - 1 {
        acc += segment_energy(
            bg,
            &path.points[i],
            &path.points[i + 1],
            path.s_nodes[i],
            path.s_nodes[i + 1],
        );
        out.push(acc);
    }
    Ok(out)
}

fn validate_path(path: &TimePath, bg: &FlowBackground) -> Result<()> {
    bg.check_time(path.t_range.0)?;
    bg.check_time(path.t_range.1)?;
    for p in &path.points {
        bg.check_point(p)?;
    }
    Ok(())
}

/// Max-norm discrete Euler-Lagrange defect at interior nodes: the gradient
/// of the discrete L-length with respect to node positions, measured along
/// `g(t_i)`-orthonormal directions by central differences. Zero (to
/// rounding) for critical points of the discrete functional.
pub fn first_variation_residual(path: &TimePath, bg: &FlowBackground) -> Result<f64> {
    validate_path(path, bg)?;
    let n = path.s_nodes.len();
    let split = bg.curved_split();
    let delta = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 1..n - 1 {
        let t_i = path.s_nodes[i] * path.s_nodes[i];
        let basis = bg.unit_tangent_basis(&path.points[i]);
        let sqrt_c = bg.scale_at(t_i).sqrt();
        for v in &basis {
            // g-orthonormal move: curved directions carry 1/sqrt(c)
            let step = if v[..split].iter().any(|&z| z != 0.0) {
                delta / sqrt_c
            } else {
                delta
            };
            let plus = bg.unit_move(&path.points[i], v, step);
            let minus = bg.unit_move(&path.points[i], v, -step);
            let e_plus = segment_energy(
                bg,
                &path.points[i - 1],
                &plus,
                path.s_nodes[i - 1],
                path.s_nodes[i],
            ) + segment_energy(
                bg,
                &plus,
                &path.points[i + 1],
                path.s_nodes[i],
                path.s_nodes[i + 1],
            );
            let e_minus = segment_energy(
                bg,
                &path.points[i - 1],
                &minus,
                path.s_nodes[i - 1],
                path.s_nodes[i],
            ) + segment_energy(
                bg,
                &minus,
                &path.points[i + 1],
                path.s_nodes[i],
                path.s_nodes[i + 1],
            );
            worst = worst.max(((e_plus - e_minus) / (2.0 * delta)).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------
// Shooting and the exponential map
// ---------------------------------------------------------------------

fn s_grid(tau1: f64, tau2: f64, nodes: usize) -> Vec<f64> {
    let s1 = tau1.sqrt();
    let s2 = tau2.sqrt();
    (0..nodes)
        .map(|i| s1 + (s2 - s1) * i as f64 / (nodes - 1) as f64)
        .collect()
}

/// Integrates the stationarity system from `(x, tau1)` with datum
/// `sqrt(tau1) gamma'(tau1) = Z` (equivalently `dp/ds(s1) = 2 Z`) up to
/// `tau2`. `tau1 = 0` is a regular endpoint of the `s`-parametrization.
pub fn shoot(
    bg: &FlowBackground,
    x: &ChartPoint,
    tau1: f64,
    z: &[f64],
    tau2: f64,
    opts: &SolverOptions,
) -> Result<LGeodesic> {
    bg.check_time(tau1)?;
    bg.check_time(tau2)?;
    if tau2 <= tau1 {
        return Err(LabError::InvalidPath {
            reason: format!("need tau1 < tau2, got ({tau1}, {tau2})"),
        });
    }
    bg.check_point(x)?;
    if z.len() != bg.chart_len() {
        return Err(LabError::InvalidChartPoint {
            reason: format!(
                "datum must have {} components, got {}",
                bg.chart_len(),
                z.len()
            ),
        });
    }
    let (frame, qdot0) = ReducedFrame::along(bg, x, z);
    let nodes = s_grid(tau1, tau2, opts.path_nodes);
    let states = frame.integrate(&nodes, &frame.q0(), &qdot0, &opts.ode)?;
    finish_shot(bg, &frame, &nodes, &states, (tau1, tau2))
}

fn finish_shot(
    bg: &FlowBackground,
    frame: &ReducedFrame,
    nodes: &[f64],
    states: &[Vec<f64>],
    t_range: (f64, f64),
) -> Result<LGeodesic> {
    let d = frame.dim();
    let points: Vec<ChartPoint> = states.iter().map(|y| frame.point(&y[..d])).collect();
    let path = TimePath::new(nodes.to_vec(), points, t_range)?;
    let length = l_length(&path, bg)?;
    let residual = first_variation_residual(&path, bg)?;
    let z = frame.z_from_slope(&states[0][d..]);
    Ok(LGeodesic {
        path,
        z,
        length,
        stationarity_residual: residual,
    })
}

/// The L-exponential map: endpoint `gamma(t)` of the geodesic shot from
/// `(x, tau1)` with datum `Z`. Consistent with `shoot` restricted to
/// `[tau1, t]` by construction.
pub fn l_exp(
    bg: &FlowBackground,
    x: &ChartPoint,
    tau1: f64,
    z: &[f64],
    t: f64,
    opts: &SolverOptions,
) -> Result<ChartPoint> {
    let geo = shoot(bg, x, tau1, z, t, opts)?;
    Ok(geo.path.end().clone())
}

// ---------------------------------------------------------------------
// Two-point problem
// ---------------------------------------------------------------------

struct Candidate {
    /// Target reduced coordinates at `s2` (angle and/or unwrapped flat).
    q_target: Vec<f64>,
}

fn enumerate_candidates(
    bg: &FlowBackground,
    frame: &ReducedFrame,
    gap: f64,
    fdelta: &[f64],
) -> Vec<Candidate> {
    use std::f64::consts::TAU;
    let mut curved_targets = vec![];
    if !frame.base.is_empty() {
        match bg.kind() {
            crate::background::ModelKind::HyperbolicQuotient => curved_targets.push(gap),
            _ => {
                curved_targets.push(gap);
                curved_targets.push(gap - TAU);
                curved_targets.push(gap + TAU);
            }
        }
    }
    // Flat images sorted by chart distance; the flat contribution to the
    // length is monotone in |delta|, so the closest few suffice.
    let mut flat_targets: Vec<Vec<f64>> = vec![];
    let k = bg.flat_dim();
    if k > 0 {
        let lattice = bg.lattice();
        let mut images: Vec<(f64, Vec<f64>)> = vec![];
        let combos = 3usize.pow(k as u32);
        for c in 0..combos {
            let mut delta = fdelta.to_vec();
            let mut code = c;
            for (j, dv) in delta.iter_mut().enumerate() {
                let shift = (code % 3) as i32 - 1;
                code /= 3;
                *dv += shift as f64 * lattice[j];
            }
            let norm2: f64 = delta.iter().map(|v| v * v).sum();
            images.push((norm2, delta));
        }
        images.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, delta) in images.into_iter().take(3) {
            flat_targets.push(delta);
        }
    }
    let mut out = vec![];
    match (curved_targets.is_empty(), flat_targets.is_empty()) {
        (true, true) => {}
        (false, true) => {
            for th in &curved_targets {
                out.push(Candidate {
                    q_target: vec![*th],
                });
            }
        }
        (true, false) => {
            for delta in &flat_targets {
                let q: Vec<f64> = frame
                    .flat0
                    .iter()
                    .zip(delta.iter())
                    .map(|(x0, d)| x0 + d)
                    .collect();
                out.push(Candidate { q_target: q });
            }
        }
        (false, false) => {
            for th in &curved_targets {
                for delta in &flat_targets {
                    let mut q = vec![*th];
                    q.extend(
                        frame
                            .flat0
                            .iter()
                            .zip(delta.iter())
                            .map(|(x0, d)| x0 + d),
                    );
                    out.push(Candidate { q_target: q });
                }
            }
        }
    }
    out
}

/// Two-stage candidate solve: exact minimizer of the discrete functional in
/// the reduced frame (stage a), then shooting refinement on the initial
/// slope matching the endpoint (stage b). Returns the refined slope.
fn solve_candidate(
    frame: &ReducedFrame,
    tau1: f64,
    tau2: f64,
    target: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let bg = frame.bg;
    let d = frame.dim();
    let s1 = tau1.sqrt();
    let s2 = tau2.sqrt();
    let q0 = frame.q0();

    // Stage (a): the discrete functional is a conservation chain in the
    // reduced frame (scale weights are node-independent), so the interior
    // minimizer has constant discrete momentum P = c(t_mid) dq/ds per
    // coordinate. Its initial slope seeds the shooting stage.
    let nodes = s_grid(tau1, tau2, opts.path_nodes);
    let mut inv_weight_sum = 0.0;
    for w in nodes.windows(2) {
        let s_mid = 0.5 * (w[0] + w[1]);
        inv_weight_sum += (w[1] - w[0]) / bg.scale_at(s_mid * s_mid);
    }
    let mut qdot = vec![0.0; d];
    let curved = usize::from(!frame.base.is_empty());
    for i in 0..d {
        let gap = target[i] - q0[i];
        let momentum = if i < curved {
            gap / inv_weight_sum
        } else {
            gap / (s2 - s1)
        };
        let c_start = if i < curved {
            bg.scale_at(tau1)
        } else {
            1.0
        };
        qdot[i] = momentum / c_start;
    }

    // Stage (b): Newton with a finite-difference Jacobian on the endpoint
    // map. The reduced systems are affine in the initial slope, so this
    // terminates in one or two iterations; the loop guards the general case.
    let span_scale = (s2 - s1).max(1.0);
    let endpoint = |slope: &[f64]| -> Result<Vec<f64>> {
        let states = frame.integrate(&[s1, s2], &q0, slope, &opts.ode)?;
        Ok(states.last().unwrap()[..d].to_vec())
    };
    let mut best_res = f64::INFINITY;
    for _ in 0..opts.max_shooting_iters {
        let at = endpoint(&qdot)?;
        let f: Vec<f64> = at.iter().zip(target.iter()).map(|(a, t)| a - t).collect();
        let res = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        best_res = best_res.min(res);
        if res <= opts.shooting_tol * span_scale.max(1.0) {
            return Ok(qdot);
        }
        // FD Jacobian of the endpoint map
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let h = 1e-6 * (1.0 + qdot[j].abs());
            let mut qp = qdot.clone();
            qp[j] += h;
            let ep = endpoint(&qp)?;
            for i in 0..d {
                jac[(i, j)] = (ep[i] - at[i]) / h;
            }
        }
        let rhs = DVector::from_vec(f);
        match jac.lu().solve(&rhs) {
            Some(step) => {
                for j in 0..d {
                    qdot[j] -= step[j];
                }
            }
            None => {
                return Err(LabError::NonConvergence {
                    reason: "singular shooting Jacobian".into(),
                    residual: res,
                })
            }
        }
    }
    Err(LabError::NonConvergence {
        reason: "endpoint matching stalled".into(),
        residual: best_res,
    })
}

/// The distance `Q(x, tau1; y, tau2)`: infimum of the L-length over paths
/// joining the two spacetime points, taken over all torus translates and
/// winding candidates. `Q` is a signed quantity.
pub fn l_distance(
    bg: &FlowBackground,
    x: &ChartPoint,
    tau1: f64,
    y: &ChartPoint,
    tau2: f64,
    opts: &SolverOptions,
) -> Result<DistanceResult> {
    bg.check_time(tau1)?;
    bg.check_time(tau2)?;
    if tau2 <= tau1 {
        return Err(LabError::InvalidPath {
            reason: format!("need tau1 < tau2, got ({tau1}, {tau2})"),
        });
    }
    bg.check_point(x)?;
    bg.check_point(y)?;
    let (frame, gap, fdelta) = ReducedFrame::towards(bg, x, y);
    let candidates = enumerate_candidates(bg, &frame, gap, &fdelta);
    let nodes = s_grid(tau1, tau2, opts.path_nodes);

    let mut solved: Vec<LGeodesic> = vec![];
    let mut last_err = None;
    for cand in &candidates {
        match solve_candidate(&frame, tau1, tau2, &cand.q_target, opts) {
            Ok(slope) => {
                let states = frame.integrate(&nodes, &frame.q0(), &slope, &opts.ode)?;
                solved.push(finish_shot(bg, &frame, &nodes, &states, (tau1, tau2))?);
            }
            Err(e) => last_err = Some(e),
        }
    }
    if solved.is_empty() {
        return Err(last_err.unwrap_or(LabError::NonConvergence {
            reason: "no candidate converged".into(),
            residual: f64::INFINITY,
        }));
    }
    solved.sort_by(|a, b| a.length.total_cmp(&b.length));
    let mut hint = 1;
    for w in solved.windows(2) {
        if (w[1].length - w[0].length).abs() > 1e-9 * (1.0 + w[0].length.abs()) {
            hint += 1;
        }
    }
    let best = solved.into_iter().next().unwrap();
    Ok(DistanceResult {
        q: best.length,
        geodesic: best,
        multiplicity_hint: hint,
    })
}

/// Fast `Q` evaluation for bulk quadrature: same candidate structure, but
/// the length is accumulated as an extra integrator state instead of
/// materializing a path, and no residual is computed.
pub fn l_distance_fast(
    bg: &FlowBackground,
    x: &ChartPoint,
    tau1: f64,
    y: &ChartPoint,
    tau2: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    bg.check_time(tau1)?;
    bg.check_time(tau2)?;
    bg.check_point(x)?;
    bg.check_point(y)?;
    let (frame, gap, fdelta) = ReducedFrame::towards(bg, x, y);
    let candidates = enumerate_candidates(bg, &frame, gap, &fdelta);
    let d = frame.dim();
    let s1 = tau1.sqrt();
    let s2 = tau2.sqrt();
    let mut best = f64::INFINITY;
    let mut last_err = None;
    for cand in &candidates {
        let slope = match solve_candidate(&frame, tau1, tau2, &cand.q_target, opts) {
            Ok(s) => s,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        // augmented state [q, qdot, running length]
        let mut y0: Vec<f64> = frame.q0();
        y0.extend_from_slice(&slope);
        y0.push(0.0);
        let curved = usize::from(!frame.base.is_empty());
        let mut o = opts.ode;
        o.velocity_block = Some((d, 2 * d));
        let states = integrate_to_nodes(
            |s, yv, dy| {
                frame.rhs(s, &yv[..2 * d], &mut dy[..2 * d]);
                let t = s * s;
                let mut speed2 = 0.0;
                for i in 0..d {
                    let w = if i < curved { bg.scale_at(t) } else { 1.0 };
                    speed2 += w * yv[d + i] * yv[d + i];
                }
                dy[2 * d] = 0.5 * speed2 + 2.0 * t * bg.scal_at_time(t);
            },
            &[s1, s2],
            &y0,
            &o,
        )?;
        best = best.min(states.last().unwrap()[2 * d]);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(last_err.unwrap_or(LabError::NonConvergence {
            reason: "no candidate converged".into(),
            residual: f64::INFINITY,
        }))
    }
}
