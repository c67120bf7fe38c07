//! L-Jacobi matrices along a minimizing geodesic, the distortion
//! coefficient `det A(t)`, the scalar `h`, and the chained inequality they
//! satisfy.
//!
//! The columns `Y_j(t)` are derivatives of the transport map
//! `x -> gamma(t; x, -grad phi(x)/2)` and are computed by central finite
//! differences of the shooting map over perturbed initial data. All shots
//! (base and perturbed) share one fixed RK4 substep plan, so the map stays a
//! smooth function of the data and the differences carry no step-control
//! noise. The frame `e_i(t)` solves `<D_t e_i, e_j> + Ric(e_i, e_j) = 0`,
//! which on these models is parallel transport rescaled by
//! `sqrt(c(tau1)/c(t))`.

use crate::background::{ChartPoint, FlowBackground, ModelKind};
use crate::error::{LabError, Result};
use crate::lgeodesic::{l_distance, LGeodesic, ReducedFrame, SolverOptions};
use crate::ode::integrate_fixed_rk4;
use crate::potential::PotentialField;
use nalgebra::DMatrix;

/// Samples of `A(t)`, `det A(t)`, the scalar `h`, and the compensated frame
/// along one geodesic.
#[derive(Clone, Debug)]
pub struct JacobiTrack {
    pub t_nodes: Vec<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub det_a: Vec<f64>,
    pub h: Vec<f64>,
    /// `e_i(t)` per node, ambient representation, `g(t)`-orthonormal.
    pub frame: Vec<Vec<Vec<f64>>>,
    /// Running `Q(x, tau1; gamma(t), t)` along the minimizer.
    pub q_along: Vec<f64>,
    /// Unit-model squared speed of the curved component of `gamma'(t)`.
    pub curved_speed2_unit: Vec<f64>,
    /// `|gamma'(t)|^2_{g(t)}`.
    pub speed2_g: Vec<f64>,
}

/// Discretization controls for Jacobi tracks.
#[derive(Clone, Copy, Debug)]
pub struct JacobiOptions {
    /// Central finite-difference step of the shooting map.
    pub fd_step: f64,
    /// RK4 substeps per track segment (one shared plan for all shots).
    pub substeps: usize,
    /// Track node count, uniform in `s`.
    pub track_nodes: usize,
    /// Guarantee a node exactly at this time (for interpolation reads).
    pub insert_time: Option<f64>,
}

impl Default for JacobiOptions {
    fn default() -> Self {
        JacobiOptions {
            // central step of the shooting-map differences; the O(h^2) bias
            // is smooth along the track, while the rounding floor of the
            // difference quotient scales like 1/h and feeds the
            // second-derivative stencils of the trace residual, so the wider
            // step wins
            fd_step: 1e-4,
            substeps: 8,
            track_nodes: 129,
            insert_time: None,
        }
    }
}

fn track_s_grid(tau1: f64, tau2: f64, opts: &JacobiOptions) -> Vec<f64> {
    let s1 = tau1.sqrt();
    let s2 = tau2.sqrt();
    let mut nodes: Vec<f64> = (0..opts.track_nodes)
        .map(|i| s1 + (s2 - s1) * i as f64 / (opts.track_nodes - 1) as f64)
        .collect();
    if let Some(t) = opts.insert_time {
        let s = t.sqrt();
        if s > s1 && s < s2 && nodes.iter().all(|&v| (v - s).abs() > 1e-12) {
            nodes.push(s);
            nodes.sort_by(f64::total_cmp);
        }
    }
    nodes
}

/// One shot on the shared fixed-step plan, in reduced coordinates augmented
/// by the running length. Returns per-node `[q, qdot, len]`.
fn shoot_fixed(
    frame: &ReducedFrame,
    s_nodes: &[f64],
    qdot0: &[f64],
    substeps: usize,
) -> Vec<Vec<f64>> {
    let d = frame.dim();
    let bg = frame.bg;
    let curved = usize::from(frame.has_curved());
    let mut y0 = frame.q0();
    y0.extend_from_slice(qdot0);
    y0.push(0.0);
    integrate_fixed_rk4(
        |s, y, dy| {
            frame.rhs(s, &y[..2 * d], &mut dy[..2 * d]);
            let t = s * s;
            let mut speed2 = 0.0;
            for i in 0..d {
                let w = if i < curved { bg.scale_at(t) } else { 1.0 };
                speed2 += w * y[d + i] * y[d + i];
            }
            dy[2 * d] = 0.5 * speed2 + 2.0 * t * bg.scal_at_time(t);
        },
        s_nodes,
        substeps,
        &y0,
    )
}

/// Unwrapped position of a reduced state: curved embedding block plus raw
/// flat coordinates (no lattice wrap, so differences stay meaningful).
fn unwrapped_position(frame: &ReducedFrame, q: &[f64]) -> Vec<f64> {
    let bg = frame.bg;
    let split = bg.curved_split();
    let mut out = vec![0.0; bg.chart_len()];
    let mut idx = 0;
    if frame.has_curved() {
        let th = q[0];
        match bg.kind() {
            ModelKind::HyperbolicQuotient => {
                for i in 0..split {
                    out[i] = frame.base[i] * th.cosh() + frame.dir[i] * th.sinh();
                }
            }
            _ => {
                for i in 0..split {
                    out[i] = frame.base[i] * th.cos() + frame.dir[i] * th.sin();
                }
            }
        }
        idx = 1;
    }
    for j in 0..frame.flat0.len() {
        out[split + j] = q[idx + j];
    }
    out
}

/// Builds the Jacobi track of the geodesic `geo`, which must have been shot
/// with the transport datum `Z = -(1/2) grad phi` of `phi` and must be
/// minimizing. Fails if `det A` loses positivity along the way.
pub fn jacobi_track(
    bg: &FlowBackground,
    geo: &LGeodesic,
    phi: &PotentialField,
    opts: &JacobiOptions,
) -> Result<JacobiTrack> {
    let (tau1, tau2) = geo.path.t_range;
    if tau1 <= 0.0 {
        return Err(LabError::InvalidPath {
            reason: "Jacobi tracks need tau1 > 0".into(),
        });
    }
    let x = geo.path.start().clone();
    let z_expected = phi.z_field(bg, &x, tau1);
    let z_err = geo
        .z
        .iter()
        .zip(&z_expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if z_err > 1e-8 {
        return Err(LabError::InvalidPath {
            reason: format!("geodesic datum differs from -grad(phi)/2 by {z_err}"),
        });
    }

    let n = bg.dim();
    let s_nodes = track_s_grid(tau1, tau2, opts);
    let t_nodes: Vec<f64> = s_nodes.iter().map(|s| s * s).collect();
    let n_nodes = s_nodes.len();
    let c1 = bg.scale_at(tau1);
    let split = bg.curved_split();

    // Base shot in its own frame; keeps signed angle and running length.
    let (base_frame, base_qdot) = ReducedFrame::along(bg, &x, &geo.z);
    let d = base_frame.dim();
    let base_states = shoot_fixed(&base_frame, &s_nodes, &base_qdot, opts.substeps);

    // g(tau1)-orthonormal basis at x: unit-model vectors with curved block
    // scaled by 1/sqrt(c1).
    let unit_basis = bg.unit_tangent_basis(&x);

    // Perturbed shots: +/- h along each basis direction.
    let h = opts.fd_step;
    let mut plus_pos: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    let mut minus_pos: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    for v in &unit_basis {
        let curved_dir = v[..split].iter().any(|&z| z != 0.0);
        // move distance h in g(tau1): unit-model distance h/sqrt(c) on the
        // curved block, h on the flat block
        let step = if curved_dir { h / c1.sqrt() } else { h };
        let mut shots = [Vec::new(), Vec::new()];
        for (slot, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            let xp = perturbed_start(bg, &x, v, sign * step);
            let zp = phi.z_field(bg, &xp, tau1);
            let (fr, qd) = ReducedFrame::along(bg, &xp, &zp);
            let states = shoot_fixed(&fr, &s_nodes, &qd, opts.substeps);
            shots[slot] = states
                .iter()
                .map(|st| unwrapped_position(&fr, &st[..fr.dim()]))
                .collect();
        }
        let [p, m] = shots;
        plus_pos.push(p);
        minus_pos.push(m);
    }

    // Frame, Jacobi columns, and A per node.
    let mut a_mats: Vec<DMatrix<f64>> = Vec::with_capacity(n_nodes);
    let mut frames = Vec::with_capacity(n_nodes);
    let mut q_along = Vec::with_capacity(n_nodes);
    let mut curved_speed2 = Vec::with_capacity(n_nodes);
    let mut speed2_g = Vec::with_capacity(n_nodes);

    for k in 0..n_nodes {
        let t = t_nodes[k];
        let ct = bg.scale_at(t);
        let st = base_states[k][..d].to_vec();
        let theta_k = if base_frame.has_curved() { st[0] } else { 0.0 };
        let gamma_k = unwrapped_position(&base_frame, &st);

        // e_i(t): parallel transport along the base circle, scaled so the
        // frame stays g(t)-orthonormal.
        let mut e_frame: Vec<Vec<f64>> = Vec::with_capacity(n);
        for v in &unit_basis {
            let mut e = vec![0.0; bg.chart_len()];
            if split > 0 && v[..split].iter().any(|&z| z != 0.0) {
                let moved = bg.transport_curved(
                    &base_frame.base,
                    &base_frame.dir,
                    theta_k,
                    &v[..split],
                );
                for (i, m) in moved.into_iter().enumerate() {
                    e[i] = m / ct.sqrt();
                }
            } else {
                e[split..].copy_from_slice(&v[split..]);
            }
            e_frame.push(e);
        }

        // Y_j(t): central difference of positions, curved block projected
        // onto the tangent space at gamma(t).
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut y: Vec<f64> = plus_pos[j][k]
                .iter()
                .zip(&minus_pos[j][k])
                .map(|(p, m)| (p - m) / (2.0 * h))
                .collect();
            if split > 0 {
                let dot = match bg.kind() {
                    ModelKind::HyperbolicQuotient => {
                        crate::background::minkowski_dot(&y[..split], &gamma_k[..split])
                    }
                    _ => y[..split]
                        .iter()
                        .zip(&gamma_k[..split])
                        .map(|(a, b)| a * b)
                        .sum(),
                };
                let sign = if bg.kind() == ModelKind::HyperbolicQuotient {
                    1.0
                } else {
                    -1.0
                };
                for i in 0..split {
                    y[i] += sign * dot * gamma_k[i];
                }
            }
            for i in 0..n {
                a[(i, j)] = bg.metric_dot(&e_frame[i], &y, t);
            }
        }
        let q_k = base_states[k][2 * d];
        let s = s_nodes[k];
        let mut c_speed2 = 0.0;
        let mut g_speed2 = 0.0;
        for i in 0..d {
            let qdot = base_states[k][d + i];
            let gamma_prime = qdot / (2.0 * s);
            if i == 0 && base_frame.has_curved() {
                c_speed2 = gamma_prime * gamma_prime;
                g_speed2 += ct * c_speed2;
            } else {
                g_speed2 += gamma_prime * gamma_prime;
            }
        }

        a_mats.push(a);
        frames.push(e_frame);
        q_along.push(q_k);
        curved_speed2.push(c_speed2);
        speed2_g.push(g_speed2);
    }

    // The raw finite differences realize the intended initial variations
    // only up to O(h^2) chart curvature; re-expressing every matrix against
    // the measured initial basis enforces A(tau1) = I exactly while keeping
    // the track smooth in t.
    let a0_inv = a_mats[0]
        .clone()
        .try_inverse()
        .ok_or(LabError::NonpositiveJacobian {
            t: tau1,
            det: a_mats[0].clone().lu().determinant(),
        })?;
    let mut det_a = Vec::with_capacity(n_nodes);
    for (k, a) in a_mats.iter_mut().enumerate() {
        *a = a.clone() * &a0_inv;
        if k == 0 {
            a.fill_with_identity();
        }
        let det = a.clone().lu().determinant();
        if det <= 0.0 {
            return Err(LabError::NonpositiveJacobian {
                t: t_nodes[k],
                det,
            });
        }
        det_a.push(det);
    }

    let nf = n as f64;
    let h_vals: Vec<f64> = t_nodes
        .iter()
        .zip(det_a.iter().zip(q_along.iter()))
        .map(|(&t, (&det, &q))| 0.5 * nf * t.ln() + 0.5 * q / t.sqrt() - det.ln())
        .collect();

    Ok(JacobiTrack {
        t_nodes,
        a: a_mats,
        det_a,
        h: h_vals,
        frame: frames,
        q_along,
        curved_speed2_unit: curved_speed2,
        speed2_g,
    })
}

/// Perturbed start point without lattice wrapping, so finite differences of
/// flat coordinates never cross the seam.
fn perturbed_start(bg: &FlowBackground, x: &ChartPoint, v: &[f64], delta: f64) -> ChartPoint {
    let split = bg.curved_split();
    let mut out = x.coords().to_vec();
    if split > 0 && v[..split].iter().any(|&z| z != 0.0) {
        let moved = bg.unit_move(x, v, delta);
        out[..split].copy_from_slice(&moved.coords()[..split]);
    }
    for j in split..out.len() {
        out[j] += delta * v[j];
    }
    ChartPoint(out)
}

/// Non-uniform three-point first and second derivative estimates.
fn three_point(tm: f64, t0: f64, tp: f64, fm: f64, f0: f64, fp: f64) -> (f64, f64) {
    let dm = t0 - tm;
    let dp = tp - t0;
    let denom = dp * dm * (dp + dm);
    let d1 = (dm * dm * fp + (dp * dp - dm * dm) * f0 - dp * dp * fm) / denom;
    let d2 = 2.0 * (dm * fp - (dp + dm) * f0 + dp * fm) / denom;
    (d1, d2)
}

/// Max interior defect of the trace identity
/// `2 tr((A'' + A'/(2t)) A^{-1}) = d(scal)/dt + 2 <grad scal, gamma'>
///                                 - 2 Ric(gamma', gamma') + scal / t`,
/// with `A` derivatives by centered differences over the track nodes.
pub fn trace_identity_residual(
    bg: &FlowBackground,
    track: &JacobiTrack,
    _geo: &LGeodesic,
) -> Result<f64> {
    let n_nodes = track.t_nodes.len();
    let mut worst: f64 = 0.0;
    for k in 1..n_nodes - 1 {
        let t = track.t_nodes[k];
        let (tm, t0, tp) = (track.t_nodes[k - 1], t, track.t_nodes[k + 1]);
        let n = bg.dim();
        let mut a1 = DMatrix::zeros(n, n);
        let mut a2 = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (d1, d2) = three_point(
                    tm,
                    t0,
                    tp,
                    track.a[k - 1][(i, j)],
                    track.a[k][(i, j)],
                    track.a[k + 1][(i, j)],
                );
                a1[(i, j)] = d1;
                a2[(i, j)] = d2;
            }
        }
        let inv = track.a[k].clone().try_inverse().ok_or(LabError::NonpositiveJacobian {
            t,
            det: track.det_a[k],
        })?;
        let lhs = 2.0 * ((a2 + a1 * (1.0 / (2.0 * t))) * inv).trace();
        let ric_gg = bg.ricci_unit_factor() * track.curved_speed2_unit[k];
        let rhs = bg.dscal_dt_at_time(t) - 2.0 * ric_gg + bg.scal_at_time(t) / t;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// `(u, h)` samples along the track, `u = t^{-1/2}`, sorted by `u`.
pub fn h_samples(
    bg: &FlowBackground,
    _geo: &LGeodesic,
    track: &JacobiTrack,
    _x: &ChartPoint,
    _tau1: f64,
) -> Result<Vec<(f64, f64)>> {
    let _ = bg;
    let mut pairs: Vec<(f64, f64)> = track
        .t_nodes
        .iter()
        .zip(track.h.iter())
        .map(|(&t, &h)| (1.0 / t.sqrt(), h))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

/// Interpolation weight from the time triple: `1/sqrt(tau) =
/// (1-lambda)/sqrt(tau1) + lambda/sqrt(tau2)`.
pub fn lambda_of_times(tau1: f64, tau: f64, tau2: f64) -> Result<f64> {
    if !(0.0 < tau1 && tau1 < tau && tau < tau2) {
        return Err(LabError::config_plain(format!(
            "times must satisfy 0 < tau1 < tau < tau2, got ({tau1}, {tau}, {tau2})"
        )));
    }
    let lambda = (1.0 / tau.sqrt() - 1.0 / tau1.sqrt()) / (1.0 / tau2.sqrt() - 1.0 / tau1.sqrt());
    if !(0.0 < lambda && lambda < 1.0) {
        return Err(LabError::config_plain(format!(
            "derived lambda {lambda} outside (0, 1)"
        )));
    }
    Ok(lambda)
}

/// LHS - RHS of the chained distortion inequality at `x`:
/// nonnegative (up to tolerance) along minimizing transport geodesics.
#[allow(clippy::too_many_arguments)]
pub fn jacobian_inequality_slack(
    bg: &FlowBackground,
    x: &ChartPoint,
    phi: &PotentialField,
    tau1: f64,
    tau: f64,
    tau2: f64,
    solver: &SolverOptions,
    jopts: &JacobiOptions,
) -> Result<f64> {
    let lambda = lambda_of_times(tau1, tau, tau2)?;
    let z = phi.z_field(bg, x, tau1);
    let geo = crate::lgeodesic::shoot(bg, x, tau1, &z, tau2, solver)?;
    let mut opts = *jopts;
    opts.insert_time = Some(tau);
    let track = jacobi_track(bg, &geo, phi, &opts)?;
    let k_tau = track
        .t_nodes
        .iter()
        .position(|&t| (t - tau).abs() < 1e-10)
        .expect("inserted node");
    let n = bg.dim() as f64;
    let q1 = track.q_along[k_tau];
    let q2 = track.q_along[track.q_along.len() - 1] - q1;
    let lhs = tau.powf(-n / 2.0)
        * (-(1.0 - lambda) / (2.0 * tau1.sqrt()) * q1).exp()
        * track.det_a[k_tau];
    let rhs = tau1.powf(-n * (1.0 - lambda) / 2.0)
        * tau2.powf(-n * lambda / 2.0)
        * (-lambda / (2.0 * tau2.sqrt()) * q2).exp()
        * track.det_a[track.det_a.len() - 1].powf(lambda);
    Ok(lhs - rhs)
}

/// Confirms a shot geodesic is globally minimizing by re-solving the
/// two-point problem between its endpoints.
pub fn verify_minimizing(
    bg: &FlowBackground,
    geo: &LGeodesic,
    solver: &SolverOptions,
    tol: f64,
) -> Result<bool> {
    let (tau1, tau2) = geo.path.t_range;
    let best = l_distance(bg, geo.path.start(), tau1, geo.path.end(), tau2, solver)?;
    Ok(geo.length <= best.q + tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lgeodesic::shoot;
    use approx::assert_abs_diff_eq;

    fn flat2() -> FlowBackground {
        FlowBackground::new(ModelKind::FlatTorus, 2, 1.0, vec![1.0, 1.0], 10.0).unwrap()
    }

    fn sphere2() -> FlowBackground {
        FlowBackground::new(ModelKind::RoundSphere, 2, 1.0, vec![], 10.0).unwrap()
    }

    fn quadratic_track(alpha: f64, n: usize) -> (FlowBackground, JacobiTrack) {
        let lattice = vec![1.0; n];
        let bg = FlowBackground::new(ModelKind::FlatTorus, n, 1.0, lattice, 10.0).unwrap();
        let center = vec![0.5; n];
        let phi = PotentialField::Quadratic {
            center,
            alpha,
        };
        let mut xc = vec![0.5; n];
        xc[0] = 0.62;
        let x = ChartPoint::torus(&xc);
        let z = phi.z_field(&bg, &x, 1.0);
        let geo = shoot(&bg, &x, 1.0, &z, 4.0, &SolverOptions::default()).unwrap();
        let track = jacobi_track(&bg, &geo, &phi, &JacobiOptions::default()).unwrap();
        (bg, track)
    }

    #[test]
    fn flat_quadratic_det_closed_form() {
        // det A(t) = (1 + alpha (sqrt(tau1) - sqrt(t)))^n
        for &alpha in &[0.3, -0.3, 0.1, -0.1] {
            let (_bg, track) = quadratic_track(alpha, 2);
            for (&t, &det) in track.t_nodes.iter().zip(track.det_a.iter()) {
                let expect = (1.0 + alpha * (1.0 - t.sqrt())).powi(2);
                assert_abs_diff_eq!(det, expect, epsilon = 1e-6);
            }
            let last = *track.det_a.last().unwrap();
            let expect4 = (1.0 - alpha).powi(2);
            assert_abs_diff_eq!(last, expect4, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_potential_flat_track_is_identity() {
        let bg = flat2();
        let phi = PotentialField::Zero;
        let x = ChartPoint::torus(&[0.3, 0.3]);
        let geo = shoot(&bg, &x, 1.0, &[0.0, 0.0], 4.0, &SolverOptions::default()).unwrap();
        let track = jacobi_track(&bg, &geo, &phi, &JacobiOptions::default()).unwrap();
        for a in &track.a {
            for i in 0..2 {
                for j in 0..2 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(a[(i, j)], expect, epsilon = 1e-9);
                }
            }
        }
        // h(u) = -n log u when Q = 0 and det A = 1
        for (&t, &h) in track.t_nodes.iter().zip(track.h.iter()) {
            let u = 1.0 / t.sqrt();
            assert_abs_diff_eq!(h, -2.0 * u.ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn frame_stays_orthonormal() {
        let bg = sphere2();
        let phi = PotentialField::Zonal {
            axis: vec![0.0, 0.0, 1.0],
            coeffs: vec![0.0, 0.1],
        };
        let x = ChartPoint::sphere_polar(&[1.0, 0.4]);
        let z = phi.z_field(&bg, &x, 1.0);
        let geo = shoot(&bg, &x, 1.0, &z, 4.0, &SolverOptions::default()).unwrap();
        let track = jacobi_track(&bg, &geo, &phi, &JacobiOptions::default()).unwrap();
        for (k, e) in track.frame.iter().enumerate() {
            let t = track.t_nodes[k];
            for i in 0..2 {
                for j in 0..2 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(
                        bg.metric_dot(&e[i], &e[j], t),
                        expect,
                        epsilon = 1e-8
                    );
                }
            }
        }
    }

    #[test]
    fn initial_rate_matches_ricci_minus_hessian() {
        // a'(tau1) = Ric(e_i, e_j) - Hess(phi)(e_i, e_j) / (2 sqrt(tau1))
        let bg = sphere2();
        let phi = PotentialField::Zonal {
            axis: vec![0.0, 0.0, 1.0],
            coeffs: vec![0.0, 0.1],
        };
        let x = ChartPoint::sphere_polar(&[1.0, 0.4]);
        let tau1 = 1.0;
        let z = phi.z_field(&bg, &x, tau1);
        let geo = shoot(&bg, &x, tau1, &z, 4.0, &SolverOptions::default()).unwrap();
        let track = jacobi_track(&bg, &geo, &phi, &JacobiOptions::default()).unwrap();
        let dt = track.t_nodes[1] - track.t_nodes[0];
        let e0 = &track.frame[0];
        let c1 = bg.scale_at(tau1);
        for i in 0..2 {
            for j in 0..2 {
                let fd = (track.a[1][(i, j)] - track.a[0][(i, j)]) / dt;
                let ric = bg.ricci_unit_factor() / c1
                    * bg.metric_dot(&e0[i], &e0[j], tau1);
                let hess = phi.hessian_form(&bg, &x, &e0[i], &e0[j]);
                let expect = ric - hess / (2.0 * tau1.sqrt());
                assert_abs_diff_eq!(fd, expect, epsilon = 5e-3);
            }
        }
    }

    #[test]
    fn trace_identity_flat_zero() {
        // both sides vanish identically; what remains is FD truncation of
        // the sqrt(t)-curved entries of A, which needs the finer grid
        let bg = flat2();
        let phi = PotentialField::Quadratic {
            center: vec![0.5, 0.5],
            alpha: 0.3,
        };
        let x = ChartPoint::torus(&[0.62, 0.5]);
        let z = phi.z_field(&bg, &x, 1.0);
        let geo = shoot(&bg, &x, 1.0, &z, 4.0, &SolverOptions::default()).unwrap();
        let opts = JacobiOptions {
            track_nodes: 513,
            ..JacobiOptions::default()
        };
        let track = jacobi_track(&bg, &geo, &phi, &opts).unwrap();
        let r = trace_identity_residual(&bg, &track, &geo).unwrap();
        assert!(r <= 1e-6, "flat trace residual {r}");
    }

    #[test]
    fn trace_identity_sphere_small() {
        let bg = sphere2();
        let phi = PotentialField::Zonal {
            axis: vec![0.0, 0.0, 1.0],
            coeffs: vec![0.0, 0.1],
        };
        let x = ChartPoint::sphere_polar(&[1.1, 0.7]);
        let z = phi.z_field(&bg, &x, 1.0);
        let geo = shoot(&bg, &x, 1.0, &z, 4.0, &SolverOptions::default()).unwrap();
        let track = jacobi_track(&bg, &geo, &phi, &JacobiOptions::default()).unwrap();
        let r = trace_identity_residual(&bg, &track, &geo).unwrap();
        assert!(r <= 1e-3, "sphere trace residual {r}");
    }

    #[test]
    fn prime_times_inverse_symmetric() {
        let bg = sphere2();
        let phi = PotentialField::Zonal {
            axis: vec![0.0, 0.0, 1.0],
            coeffs: vec![0.0, 0.15],
        };
        let x = ChartPoint::sphere_polar(&[0.9, 1.2]);
        let z = phi.z_field(&bg, &x, 1.0);
        let geo = shoot(&bg, &x, 1.0, &z, 4.0, &SolverOptions::default()).unwrap();
        let track = jacobi_track(&bg, &geo, &phi, &JacobiOptions::default()).unwrap();
        for k in 1..track.t_nodes.len() - 1 {
            let (tm, t0, tp) = (
                track.t_nodes[k - 1],
                track.t_nodes[k],
                track.t_nodes[k + 1],
            );
            let n = 2;
            let mut a1 = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let (d1, _) = three_point(
                        tm,
                        t0,
                        tp,
                        track.a[k - 1][(i, j)],
                        track.a[k][(i, j)],
                        track.a[k + 1][(i, j)],
                    );
                    a1[(i, j)] = d1;
                }
            }
            let m = a1 * track.a[k].clone().try_inverse().unwrap();
            assert_abs_diff_eq!(m[(0, 1)], m[(1, 0)], epsilon = 1e-5);
        }
    }

    #[test]
    fn h_convexity_on_flat_quadratic() {
        let (_bg, track) = quadratic_track(0.3, 2);
        let pairs: Vec<(f64, f64)> = track
            .t_nodes
            .iter()
            .zip(track.h.iter())
            .map(|(&t, &h)| (1.0 / t.sqrt(), h))
            .collect();
        for w in pairs.windows(3) {
            let (u0, h0) = w[0];
            let (u1, h1) = w[1];
            let (u2, h2) = w[2];
            let second = 2.0 * ((h2 - h1) / (u2 - u1) - (h1 - h0) / (u1 - u0)) / (u2 - u0);
            assert!(second >= -1e-6, "second difference {second}");
        }
    }

    #[test]
    fn flat_jacobian_slack_nonnegative() {
        let bg = flat2();
        // lambda = 1/2 between tau1 = 1 and tau2 = 4 gives tau = 16/9
        let tau = 16.0 / 9.0;
        let phi = PotentialField::Quadratic {
            center: vec![0.5, 0.5],
            alpha: 0.3,
        };
        let x = ChartPoint::torus(&[0.62, 0.45]);
        let s = jacobian_inequality_slack(
            &bg,
            &x,
            &phi,
            1.0,
            tau,
            4.0,
            &SolverOptions::default(),
            &JacobiOptions::default(),
        )
        .unwrap();
        assert!(s >= -1e-8, "slack {s}");
        // phi = 0: slack reduces to the log-convexity gap of the time means
        let s0 = jacobian_inequality_slack(
            &bg,
            &x,
            &PotentialField::Zero,
            1.0,
            tau,
            4.0,
            &SolverOptions::default(),
            &JacobiOptions::default(),
        )
        .unwrap();
        let lam = lambda_of_times(1.0, tau, 4.0).unwrap();
        let expect = tau.powf(-1.0) - 4.0f64.powf(-lam);
        assert_abs_diff_eq!(s0, expect, epsilon = 1e-9);
        assert!(s0 >= 0.0);
    }

    #[test]
    fn lambda_relation_round_trip() {
        let lam = lambda_of_times(1.0, 16.0 / 9.0, 4.0).unwrap();
        assert_abs_diff_eq!(lam, 0.5, epsilon = 1e-12);
        assert!(lambda_of_times(1.0, 0.5, 4.0).is_err());
    }

    #[test]
    fn det_sign_guard() {
        // a strong contracting potential drives det A through zero; odd
        // dimension so the determinant actually changes sign
        let bg = FlowBackground::new(ModelKind::FlatTorus, 3, 1.0, vec![1.0; 3], 10.0).unwrap();
        let phi = PotentialField::Quadratic {
            center: vec![0.5; 3],
            alpha: 1.2,
        };
        let x = ChartPoint::torus(&[0.55, 0.5, 0.5]);
        let z = phi.z_field(&bg, &x, 1.0);
        let geo = shoot(&bg, &x, 1.0, &z, 9.0, &SolverOptions::default()).unwrap();
        let res = jacobi_track(&bg, &geo, &phi, &JacobiOptions::default());
        assert!(matches!(res, Err(LabError::NonpositiveJacobian { .. })));
    }

    #[test]
    fn minimality_check_accepts_short_shots() {
        let bg = sphere2();
        let phi = PotentialField::Zonal {
            axis: vec![0.0, 0.0, 1.0],
            coeffs: vec![0.0, 0.1],
        };
        let x = ChartPoint::sphere_polar(&[1.15, 0.5]);
        let z = phi.z_field(&bg, &x, 1.0);
        let geo = shoot(&bg, &x, 1.0, &z, 4.0, &SolverOptions::default()).unwrap();
        assert!(verify_minimizing(&bg, &geo, &SolverOptions::default(), 1e-5).unwrap());
    }
}
