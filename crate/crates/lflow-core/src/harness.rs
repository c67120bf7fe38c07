//! Suite runner: executes the named verification suite for a scenario
//! configuration, producing deterministic report files.
//!
//! Determinism contract: report bytes are a pure function of the config
//! bytes and seed, independent of worker count. All parallel sections
//! reduce in index order; wall-clock timings stay out of the output unless
//! explicitly requested.

use crate::background::{ChartPoint, FlowBackground, ModelKind};
use crate::error::{LabError, Result};
use crate::jacobi::{
    h_samples, jacobi_track, jacobian_inequality_slack, trace_identity_residual, JacobiOptions,
};
use crate::lgeodesic::{
    l_distance, l_distance_fast, l_length_prefix, shoot, SolverOptions,
};
use crate::potential::PotentialField;
use crate::report::{inputs_digest, Cmp, Report};
use crate::scenario::ScenarioConfig;
use crate::transport::{
    corollary_mass, cost_matrix, density_inequality_slack, interpolate_plan, solve_discrete_ot,
    theorem2_check,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

/// The verification suites exposed by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    LDist,
    Jacobi,
    Theorem2,
    Corollary,
    ReducedVolume,
    Section3,
    Ot,
}

impl FromStr for Suite {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ldist" => Ok(Suite::LDist),
            "jacobi" => Ok(Suite::Jacobi),
            "theorem2" => Ok(Suite::Theorem2),
            "corollary" => Ok(Suite::Corollary),
            "reduced-volume" => Ok(Suite::ReducedVolume),
            "section3" => Ok(Suite::Section3),
            "ot" => Ok(Suite::Ot),
            other => Err(LabError::config(
                "suite",
                format!("unknown suite `{other}` (ldist, jacobi, theorem2, corollary, reduced-volume, section3, ot)"),
            )),
        }
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::LDist => "ldist",
            Suite::Jacobi => "jacobi",
            Suite::Theorem2 => "theorem2",
            Suite::Corollary => "corollary",
            Suite::ReducedVolume => "reduced-volume",
            Suite::Section3 => "section3",
            Suite::Ot => "ot",
        }
    }

    pub fn all() -> [Suite; 7] {
        [
            Suite::LDist,
            Suite::Jacobi,
            Suite::Theorem2,
            Suite::Corollary,
            Suite::ReducedVolume,
            Suite::Section3,
            Suite::Ot,
        ]
    }
}

/// Execution controls of one run.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub emit_plotdata: bool,
    /// Write wall-clock timings into the report files (breaks byte
    /// reproducibility across runs; off by default).
    pub timings: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            out_dir: None,
            emit_plotdata: false,
            timings: false,
        }
    }
}

/// Runs one suite for a parsed config; writes report files when an output
/// directory is given and returns the report either way.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    raw_config: &str,
    suite: Suite,
    opts: &RunOptions,
) -> Result<Report> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| LabError::config_plain(format!("thread pool: {e}")))?;
    let digest = inputs_digest(raw_config, cfg.sampling.seed);
    let mut report = Report::new(suite.name(), digest);
    pool.install(|| -> Result<()> {
        match suite {
            Suite::LDist => suite_ldist(cfg, &mut report),
            Suite::Jacobi => suite_jacobi(cfg, &mut report, opts),
            Suite::Theorem2 => suite_theorem2(cfg, &mut report),
            Suite::Corollary => suite_corollary(cfg, &mut report),
            Suite::ReducedVolume => suite_reduced_volume(cfg, &mut report, opts),
            Suite::Section3 => suite_section3(cfg, &mut report),
            Suite::Ot => suite_ot(cfg, &mut report, opts),
        }
    })?;
    if let Some(dir) = &opts.out_dir {
        report.write(dir, opts.timings)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------
// Sampling helpers (seed-deterministic)
// ---------------------------------------------------------------------

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A point drawn from the model: uniform on compact factors, within a
/// `spread`-radius disk around the base on the hyperboloid.
pub fn sample_point(bg: &FlowBackground, rng: &mut ChaCha8Rng, spread: f64) -> ChartPoint {
    let curved = bg.curved_dim();
    let mut coords = Vec::with_capacity(bg.chart_len());
    match bg.kind() {
        ModelKind::FlatTorus => {}
        ModelKind::RoundSphere | ModelKind::ProductSphereFlat => {
            let mut v: Vec<f64> = (0..=curved).map(|_| gaussian(rng)).collect();
            let n: f64 = v.iter().map(|z| z * z).sum::<f64>().sqrt();
            for z in &mut v {
                *z /= n.max(1e-12);
            }
            coords.extend(v);
        }
        ModelKind::HyperbolicQuotient => {
            let rho = rng.gen_range(0.0..spread);
            let mut dir: Vec<f64> = (0..curved).map(|_| gaussian(rng)).collect();
            let n: f64 = dir.iter().map(|z| z * z).sum::<f64>().sqrt();
            for z in &mut dir {
                *z /= n.max(1e-12);
            }
            let p = ChartPoint::hyperboloid(rho, &dir);
            coords.extend(p.0);
        }
    }
    for &l in bg.lattice() {
        coords.push(rng.gen_range(0.0..l));
    }
    ChartPoint(coords)
}

/// A point within unit-model distance `radius` of `anchor`.
pub fn sample_point_near(
    bg: &FlowBackground,
    anchor: &ChartPoint,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> ChartPoint {
    let basis = bg.unit_tangent_basis(anchor);
    let mut dir = vec![0.0; bg.chart_len()];
    for e in &basis {
        let c = gaussian(rng);
        for (d, v) in dir.iter_mut().zip(e.iter()) {
            *d += c * v;
        }
    }
    let split = bg.curved_split();
    let nc: f64 = if split > 0 && bg.kind() == ModelKind::HyperbolicQuotient {
        crate::background::minkowski_dot(&dir[..split], &dir[..split]).max(0.0)
    } else {
        dir[..split].iter().map(|v| v * v).sum()
    };
    let nf: f64 = dir[split..].iter().map(|v| v * v).sum();
    let norm = (nc + nf).sqrt().max(1e-12);
    for d in &mut dir {
        *d /= norm;
    }
    bg.unit_move(anchor, &dir, rng.gen_range(0.0..radius))
}

/// A random datum with `|Z|_{g(t)}` in `mag_range`.
pub fn sample_datum(
    bg: &FlowBackground,
    x: &ChartPoint,
    t: f64,
    mag_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let basis = bg.unit_tangent_basis(x);
    let split = bg.curved_split();
    let c = bg.scale_at(t);
    let coefs: Vec<f64> = (0..basis.len()).map(|_| gaussian(rng)).collect();
    let norm: f64 = coefs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mag = rng.gen_range(mag_range.0..mag_range.1.max(mag_range.0 + 1e-12));
    let mut z = vec![0.0; bg.chart_len()];
    for (k, e) in basis.iter().enumerate() {
        let scale = if e[..split].iter().any(|&v| v != 0.0) {
            1.0 / c.sqrt()
        } else {
            1.0
        };
        for (zi, ei) in z.iter_mut().zip(e.iter()) {
            *zi += mag * coefs[k] / norm.max(1e-12) * ei * scale;
        }
    }
    z
}

/// Closed-form flat distance: minimum over all lattice translates.
pub fn flat_q_closed_form(
    bg: &FlowBackground,
    x: &ChartPoint,
    tau1: f64,
    y: &ChartPoint,
    tau2: f64,
) -> f64 {
    let base = bg.flat_delta(x.coords(), y.coords());
    let k = bg.dim();
    let mut best = f64::INFINITY;
    for c in 0..3usize.pow(k as u32) {
        let mut code = c;
        let mut d2 = 0.0;
        for (j, &b) in base.iter().enumerate() {
            let shift = (code % 3) as i32 - 1;
            code /= 3;
            let d = b + shift as f64 * bg.lattice()[j];
            d2 += d * d;
        }
        best = best.min(d2);
    }
    best / (2.0 * (tau2.sqrt() - tau1.sqrt()))
}

// ---------------------------------------------------------------------
// Suite: ldist
// ---------------------------------------------------------------------

fn suite_ldist(cfg: &ScenarioConfig, report: &mut Report) -> Result<()> {
    let bg = cfg.background()?;
    let (tau1, _tau, tau2, _) = cfg.resolved_times()?;
    let solver = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling.seed);
    let spread = cfg.sampling.spread;

    // flat closed-form oracle over random points and random time pairs
    if bg.kind() == ModelKind::FlatTorus {
        let t0 = Instant::now();
        let pairs: Vec<(ChartPoint, ChartPoint, f64, f64)> = (0..cfg.sampling.shot_samples)
            .map(|_| {
                let x = sample_point(&bg, &mut rng, spread);
                let y = sample_point(&bg, &mut rng, spread);
                // well-separated windows that stay valid for any t_max
                let a = rng.gen_range(0.0..bg.t_max() * 0.4);
                let b = rng.gen_range(bg.t_max() * 0.5..bg.t_max());
                (x, y, a, b)
            })
            .collect();
        let errs: Vec<Result<f64>> = pairs
            .par_iter()
            .map(|(x, y, a, b)| {
                let q = l_distance(&bg, x, *a, y, *b, &solver)?.q;
                Ok((q - flat_q_closed_form(&bg, x, *a, y, *b)).abs())
            })
            .collect();
        let mut worst: f64 = 0.0;
        for e in errs {
            worst = worst.max(e?);
        }
        report.add(
            "flat_q_oracle",
            worst,
            Cmp::Le,
            cfg.tolerance("flat_q_oracle", 1e-6),
            t0.elapsed().as_millis(),
        );
    }

    // stationarity of shot geodesics + the exp/distance round trip
    let t0 = Instant::now();
    let shots: Vec<(ChartPoint, Vec<f64>)> = (0..cfg.sampling.shot_samples)
        .map(|_| {
            let x = sample_point(&bg, &mut rng, spread);
            let z = sample_datum(&bg, &x, tau1, (0.0, cfg.sampling.z_max), &mut rng);
            (x, z)
        })
        .collect();
    let residuals: Vec<Result<(f64, f64, f64)>> = shots
        .par_iter()
        .map(|(x, z)| {
            let geo = shoot(&bg, x, tau1, z, tau2, &solver)?;
            let back = l_distance(&bg, x, tau1, geo.path.end(), tau2, &solver)?;
            Ok((
                geo.stationarity_residual,
                back.q - geo.length,
                (back.q - geo.length).abs(),
            ))
        })
        .collect();
    let mut worst_res: f64 = 0.0;
    let mut worst_upper = f64::NEG_INFINITY;
    let mut worst_eq: f64 = 0.0;
    for r in residuals {
        let (res, signed, eq) = r?;
        worst_res = worst_res.max(res);
        worst_upper = worst_upper.max(signed);
        worst_eq = worst_eq.max(eq);
    }
    let ms = t0.elapsed().as_millis();
    report.add(
        "stationarity",
        worst_res,
        Cmp::Le,
        cfg.tolerance("stationarity", 1e-8),
        ms,
    );
    // re-solved distance never exceeds the shot length; equality holds for
    // data below the conjugate scale of the scenario
    report.add(
        "round_trip_upper",
        worst_upper,
        Cmp::Le,
        cfg.tolerance("round_trip_upper", 1e-6),
        ms,
    );
    report.add(
        "round_trip_equality",
        worst_eq,
        Cmp::Le,
        cfg.tolerance("round_trip_equality", 1e-5),
        ms,
    );

    // additivity and the dQ/dt identity along minimizers
    let t0 = Instant::now();
    let pairs: Vec<(ChartPoint, ChartPoint)> = (0..50)
        .map(|_| {
            (
                sample_point(&bg, &mut rng, spread),
                sample_point(&bg, &mut rng, spread),
            )
        })
        .collect();
    let defects: Vec<Result<(f64, f64)>> = pairs
        .par_iter()
        .map(|(x, y)| {
            let r = l_distance(&bg, x, tau1, y, tau2, &solver)?;
            let mid_idx = r.geodesic.path.s_nodes.len() / 2;
            let sm = r.geodesic.path.s_nodes[mid_idx];
            let tm = sm * sm;
            let m = &r.geodesic.path.points[mid_idx];
            // all three Q values through the same integrator-accurate route
            let q_full = l_distance_fast(&bg, x, tau1, y, tau2, &solver)?;
            let qa = l_distance_fast(&bg, x, tau1, m, tm, &solver)?;
            let qb = l_distance_fast(&bg, m, tm, y, tau2, &solver)?;
            let additivity = (q_full - qa - qb).abs();

            // centered differences of the running length vs the integrand,
            // on a refined resampling of the same minimizer
            let fine = SolverOptions {
                path_nodes: 513,
                ..SolverOptions::default()
            };
            let geo_fine = shoot(&bg, x, tau1, &r.geodesic.z, tau2, &fine)?;
            let path = &geo_fine.path;
            let prefix = l_length_prefix(path, &bg)?;
            let mut worst_rel: f64 = 0.0;
            let k_step = (path.s_nodes.len() / 16).max(1);
            let mut k = k_step;
            while k + 1 < path.s_nodes.len() {
                let (sm, s0, sp) = (
                    path.s_nodes[k - 1],
                    path.s_nodes[k],
                    path.s_nodes[k + 1],
                );
                let (tm_, t0_, tp) = (sm * sm, s0 * s0, sp * sp);
                // first derivative of Q on the non-uniform t-grid
                let (dm, dp) = (t0_ - tm_, tp - t0_);
                let dq = (dm * dm * prefix[k + 1] + (dp * dp - dm * dm) * prefix[k]
                    - dp * dp * prefix[k - 1])
                    / (dp * dm * (dp + dm));
                // |gamma'| from the symmetrized per-segment chords
                let d_lo = bg.dist_at(&path.points[k - 1], &path.points[k], t0_);
                let d_hi = bg.dist_at(&path.points[k], &path.points[k + 1], t0_);
                let sigma_dot = (d_lo + d_hi) / (sp - sm);
                let speed2 = sigma_dot * sigma_dot / (4.0 * t0_);
                let rhs = t0_.sqrt() * (bg.scal_at_time(t0_) + speed2);
                let rel = (dq - rhs).abs() / rhs.abs().max(1e-2);
                worst_rel = worst_rel.max(rel);
                k += k_step;
            }
            Ok((additivity, worst_rel))
        })
        .collect();
    let mut worst_add: f64 = 0.0;
    let mut worst_dq: f64 = 0.0;
    for d in defects {
        let (a, q) = d?;
        worst_add = worst_add.max(a);
        worst_dq = worst_dq.max(q);
    }
    let ms = t0.elapsed().as_millis();
    report.add(
        "additivity",
        worst_add,
        Cmp::Le,
        cfg.tolerance("additivity", 1e-5),
        ms,
    );
    report.add(
        "dqdt_identity",
        worst_dq,
        Cmp::Le,
        cfg.tolerance("dqdt_identity", 1e-4),
        ms,
    );

    // triangle inequality over sampled triples
    let t0 = Instant::now();
    let triples: Vec<(ChartPoint, ChartPoint, ChartPoint, f64)> = (0..cfg.sampling.x_samples)
        .map(|_| {
            let tm = rng.gen_range(tau1 + 0.1 * (tau2 - tau1)..tau2 - 0.1 * (tau2 - tau1));
            (
                sample_point(&bg, &mut rng, spread),
                sample_point(&bg, &mut rng, spread),
                sample_point(&bg, &mut rng, spread),
                tm,
            )
        })
        .collect();
    let tri: Vec<Result<f64>> = triples
        .par_iter()
        .map(|(x, y, z, tm)| {
            let q_xy = l_distance_fast(&bg, x, tau1, y, tau2, &solver)?;
            let q_xz = l_distance_fast(&bg, x, tau1, z, *tm, &solver)?;
            let q_zy = l_distance_fast(&bg, z, *tm, y, tau2, &solver)?;
            Ok(q_xy - q_xz - q_zy)
        })
        .collect();
    let mut worst_tri: f64 = f64::NEG_INFINITY;
    for t in tri {
        worst_tri = worst_tri.max(t?);
    }
    report.add(
        "triangle",
        worst_tri,
        Cmp::Le,
        cfg.tolerance("triangle", 1e-6),
        t0.elapsed().as_millis(),
    );
    Ok(())
}

// ---------------------------------------------------------------------
// Suite: jacobi
// ---------------------------------------------------------------------

fn suite_jacobi(cfg: &ScenarioConfig, report: &mut Report, opts: &RunOptions) -> Result<()> {
    let bg = cfg.background()?;
    let (tau1, tau, tau2, _) = cfg.resolved_times()?;
    let solver = SolverOptions::default();
    let jopts = JacobiOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling.seed ^ 0x9e3779b9);
    let anchor = cfg.basepoint(&bg)?;
    let phi = cfg.potential(&bg)?;

    // flat closed form det A(t) = (1 + alpha (sqrt(tau1) - sqrt(t)))^n
    if bg.kind() == ModelKind::FlatTorus {
        let t0 = Instant::now();
        let mut worst: f64 = 0.0;
        for &alpha in &[0.1, -0.1, 0.3, -0.3] {
            let qphi = PotentialField::Quadratic {
                center: anchor.0.clone(),
                alpha,
            };
            let x = sample_point_near(&bg, &anchor, 0.2, &mut rng);
            let z = qphi.z_field(&bg, &x, tau1);
            let geo = shoot(&bg, &x, tau1, &z, tau2, &solver)?;
            let track = jacobi_track(&bg, &geo, &qphi, &jopts)?;
            for (&t, &det) in track.t_nodes.iter().zip(track.det_a.iter()) {
                let expect = (1.0 + alpha * (tau1.sqrt() - t.sqrt())).powi(bg.dim() as i32);
                worst = worst.max((det - expect).abs());
            }
        }
        report.add(
            "flat_det_closed_form",
            worst,
            Cmp::Le,
            cfg.tolerance("flat_det_closed_form", 1e-6),
            t0.elapsed().as_millis(),
        );
    }

    // tracks over sampled starting points
    let t0 = Instant::now();
    let starts: Vec<ChartPoint> = (0..cfg.sampling.x_samples)
        .map(|_| sample_point_near(&bg, &anchor, cfg.sampling.spread, &mut rng))
        .collect();
    let tracks: Vec<Result<(f64, f64, f64, f64)>> = starts
        .par_iter()
        .map(|x| {
            let z = phi.z_field(&bg, x, tau1);
            let geo = shoot(&bg, x, tau1, &z, tau2, &solver)?;
            let track = jacobi_track(&bg, &geo, &phi, &jopts)?;
            let trace = trace_identity_residual(&bg, &track, &geo)?;
            let pairs = h_samples(&bg, &geo, &track, x, tau1)?;
            let mut min_second = f64::INFINITY;
            for w in pairs.windows(3) {
                let second = 2.0
                    * ((w[2].1 - w[1].1) / (w[2].0 - w[1].0)
                        - (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                    / (w[2].0 - w[0].0);
                min_second = min_second.min(second);
            }
            let mut asym: f64 = 0.0;
            for k in 1..track.t_nodes.len() - 1 {
                let dt = track.t_nodes[k + 1] - track.t_nodes[k - 1];
                let n = bg.dim();
                let mut a1 = nalgebra::DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        a1[(i, j)] =
                            (track.a[k + 1][(i, j)] - track.a[k - 1][(i, j)]) / dt;
                    }
                }
                let m = a1 * track.a[k].clone().try_inverse().unwrap();
                for i in 0..n {
                    for j in i + 1..n {
                        asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
                    }
                }
            }
            let slack =
                jacobian_inequality_slack(&bg, x, &phi, tau1, tau, tau2, &solver, &jopts)?;
            Ok((trace, min_second, asym, slack))
        })
        .collect();
    let mut worst_trace: f64 = 0.0;
    let mut min_second = f64::INFINITY;
    let mut worst_asym: f64 = 0.0;
    let mut min_slack = f64::INFINITY;
    for t in tracks {
        let (tr, ms, asym, slack) = t?;
        worst_trace = worst_trace.max(tr);
        min_second = min_second.min(ms);
        worst_asym = worst_asym.max(asym);
        min_slack = min_slack.min(slack);
    }
    let ms = t0.elapsed().as_millis();
    report.add(
        "trace_identity",
        worst_trace,
        Cmp::Le,
        cfg.tolerance("trace_identity", 1e-3),
        ms,
    );
    report.add(
        "h_convexity",
        min_second,
        Cmp::Ge,
        cfg.tolerance("h_convexity", -1e-6),
        ms,
    );
    report.add(
        "aprime_symmetry",
        worst_asym,
        Cmp::Le,
        cfg.tolerance("aprime_symmetry", 1e-5),
        ms,
    );
    report.add(
        "jacobian_slack",
        min_slack,
        Cmp::Ge,
        cfg.tolerance("jacobian_slack", -1e-5),
        ms,
    );

    // trace-identity residual scales at order ~2 under halved steps
    let t0 = Instant::now();
    let x = sample_point_near(&bg, &anchor, cfg.sampling.spread, &mut rng);
    let z = phi.z_field(&bg, &x, tau1);
    let geo = shoot(&bg, &x, tau1, &z, tau2, &solver)?;
    let coarse = JacobiOptions {
        track_nodes: 65,
        ..jopts
    };
    let fine = JacobiOptions {
        track_nodes: 129,
        ..jopts
    };
    let r_coarse =
        trace_identity_residual(&bg, &jacobi_track(&bg, &geo, &phi, &coarse)?, &geo)?;
    let r_fine = trace_identity_residual(&bg, &jacobi_track(&bg, &geo, &phi, &fine)?, &geo)?;
    let order = (r_coarse / r_fine).log2();
    report.add(
        "trace_order_dev",
        (order - 2.0).abs(),
        Cmp::Le,
        cfg.tolerance("trace_order_dev", 0.8),
        t0.elapsed().as_millis(),
    );
    report.note("trace_order", format!("{order:.3}"));

    if opts.emit_plotdata {
        if let Some(dir) = &opts.out_dir {
            std::fs::create_dir_all(dir)?;
            let x = anchor.clone();
            let z = phi.z_field(&bg, &x, tau1);
            let geo = shoot(&bg, &x, tau1, &z, tau2, &solver)?;
            let track = jacobi_track(&bg, &geo, &phi, &jopts)?;
            let mut det = String::new();
            for (&t, &d) in track.t_nodes.iter().zip(track.det_a.iter()) {
                det.push_str(&format!("{t:.12e} {d:.12e}\n"));
            }
            std::fs::write(dir.join("plot_deta.dat"), det)?;
            let mut hh = String::new();
            for (u, h) in h_samples(&bg, &geo, &track, &x, tau1)? {
                hh.push_str(&format!("{u:.12e} {h:.12e}\n"));
            }
            std::fs::write(dir.join("plot_h.dat"), hh)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Suite: theorem2 / corollary
// ---------------------------------------------------------------------

fn suite_theorem2(cfg: &ScenarioConfig, report: &mut Report) -> Result<()> {
    let bg = cfg.background()?;
    let scen = cfg.theorem_scenario(&bg)?;
    let t0 = Instant::now();
    let (slack, stats) = theorem2_check(&bg, &scen, &SolverOptions::coarse())?;
    report.add(
        "theorem2_slack",
        slack,
        Cmp::Ge,
        cfg.tolerance("theorem2_slack", -5e-3),
        t0.elapsed().as_millis(),
    );
    report.note(
        "scatter",
        format!(
            "samples={} dropped={} hit={}/{}",
            stats.samples, stats.dropped, stats.hit_cells, stats.total_cells
        ),
    );
    Ok(())
}

fn suite_corollary(cfg: &ScenarioConfig, report: &mut Report) -> Result<()> {
    let bg = cfg.background()?;
    let scen = cfg.theorem_scenario(&bg)?;
    let phi = cfg.potential(&bg)?;
    let solver = SolverOptions::coarse();
    let jopts = JacobiOptions {
        substeps: 4,
        track_nodes: 33,
        ..JacobiOptions::default()
    };
    let anchor = cfg.basepoint(&bg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling.seed ^ 0xc0ffee);

    let t0 = Instant::now();
    let xs: Vec<ChartPoint> = (0..cfg.sampling.x_samples)
        .map(|_| sample_point_near(&bg, &anchor, cfg.sampling.spread, &mut rng))
        .collect();
    let slacks: Vec<Result<f64>> = xs
        .par_iter()
        .map(|x| density_inequality_slack(&bg, &scen, &phi, x, &solver, &jopts))
        .collect();
    let mut min_slack = f64::INFINITY;
    for s in slacks {
        min_slack = min_slack.min(s?);
    }
    report.add(
        "density_slack",
        min_slack,
        Cmp::Ge,
        cfg.tolerance("density_slack", -1e-4),
        t0.elapsed().as_millis(),
    );

    let t0 = Instant::now();
    let mass = corollary_mass(&bg, &scen, &phi, None, &solver, &jopts)?;
    report.add(
        "corollary_mass",
        mass,
        Cmp::Ge,
        cfg.tolerance("corollary_mass", 1.0 - 5e-3),
        t0.elapsed().as_millis(),
    );
    Ok(())
}

// ---------------------------------------------------------------------
// Suite: reduced volume / section 3
// ---------------------------------------------------------------------

fn suite_reduced_volume(
    cfg: &ScenarioConfig,
    report: &mut Report,
    opts: &RunOptions,
) -> Result<()> {
    let bg = cfg.background()?;
    let p = cfg.basepoint(&bg)?;
    let grid = cfg
        .times
        .tau_grid
        .clone()
        .ok_or_else(|| LabError::config("times.tau_grid", "required by reduced-volume"))?;
    let solver = SolverOptions::coarse();
    let t0 = Instant::now();
    let curve =
        crate::reduced_volume::monotonicity_curve(&bg, &p, &grid, cfg.sampling.grid_res, &solver)?;
    let ms = t0.elapsed().as_millis();

    // monotone within combined error budgets: worst signed violation
    let mut violation = f64::NEG_INFINITY;
    for a in 0..curve.values.len() {
        for b in a + 1..curve.values.len() {
            let budget =
                curve.quadrature_error_estimate[a] + curve.quadrature_error_estimate[b];
            violation = violation.max(curve.values[b] - curve.values[a] - budget);
        }
    }
    report.add(
        "monotone_within_budget",
        violation.max(0.0),
        Cmp::Le,
        cfg.tolerance("monotone_within_budget", 0.0),
        ms,
    );

    if bg.kind() == ModelKind::FlatTorus {
        let expect = (4.0 * std::f64::consts::PI).powf(bg.dim() as f64 / 2.0);
        let worst_rel = curve
            .values
            .iter()
            .map(|v| (v / expect - 1.0).abs())
            .fold(0.0, f64::max);
        report.add(
            "flat_constancy",
            worst_rel,
            Cmp::Le,
            cfg.tolerance("flat_constancy", 1e-3),
            ms,
        );
    } else {
        // strict decrease beyond the combined budget, consecutive nodes
        let mut min_drop = f64::INFINITY;
        for w in 0..curve.values.len() - 1 {
            let budget =
                curve.quadrature_error_estimate[w] + curve.quadrature_error_estimate[w + 1];
            min_drop = min_drop.min(curve.values[w] - curve.values[w + 1] - budget);
        }
        report.add(
            "strict_decrease",
            min_drop,
            Cmp::Ge,
            cfg.tolerance("strict_decrease", 0.0),
            ms,
        );
    }
    for (k, (&t, &v)) in curve.tau_grid.iter().zip(curve.values.iter()).enumerate() {
        report.note(
            &format!("vtilde_{k}"),
            format!(
                "tau={t:.6} value={v:.9e} err={:.3e}",
                curve.quadrature_error_estimate[k]
            ),
        );
    }
    if opts.emit_plotdata {
        if let Some(dir) = &opts.out_dir {
            std::fs::create_dir_all(dir)?;
            let mut dat = String::new();
            for ((&t, &v), &e) in curve
                .tau_grid
                .iter()
                .zip(curve.values.iter())
                .zip(curve.quadrature_error_estimate.iter())
            {
                dat.push_str(&format!("{t:.12e} {v:.12e} {e:.12e}\n"));
            }
            std::fs::write(dir.join("plot_vtilde.dat"), dat)?;
        }
    }
    Ok(())
}

fn suite_section3(cfg: &ScenarioConfig, report: &mut Report) -> Result<()> {
    let bg = cfg.background()?;
    let p = cfg.basepoint(&bg)?;
    let (_, tau, tau2, _) = cfg.resolved_times()?;
    let tau1_list = cfg
        .times
        .tau1_list
        .clone()
        .ok_or_else(|| LabError::config("times.tau1_list", "required by section3"))?;
    let solver = SolverOptions::coarse();
    let t0 = Instant::now();
    let out = crate::reduced_volume::section3_experiment(
        &bg,
        &p,
        tau,
        tau2,
        &tau1_list,
        cfg.sampling.grid_res,
        cfg.sampling.x_samples,
        &solver,
    )?;
    let ms = t0.elapsed().as_millis();

    let devs: Vec<f64> = out
        .rows
        .iter()
        .map(|r| (r.mass_u1_pow - 1.0).abs())
        .collect();
    let mut worst_increase = f64::NEG_INFINITY;
    for w in devs.windows(2) {
        worst_increase = worst_increase.max(w[1] - w[0]);
    }
    report.add(
        "u1_pow_trend",
        worst_increase,
        Cmp::Le,
        cfg.tolerance("u1_pow_trend", 0.0),
        ms,
    );
    report.add(
        "u1_pow_final",
        *devs.last().unwrap(),
        Cmp::Le,
        cfg.tolerance("u1_pow_final", 0.05),
        ms,
    );
    let min_gap = out
        .products
        .iter()
        .map(|prod| (out.v_tilde_tau - prod) / out.v_tilde_tau)
        .fold(f64::INFINITY, f64::min);
    report.add(
        "product_bound_rel",
        min_gap,
        Cmp::Ge,
        cfg.tolerance("product_bound_rel", -5e-3),
        ms,
    );
    for r in &out.rows {
        report.note(
            &format!("row_tau1_{:e}", r.tau1),
            format!(
                "lambda={:.9} N={:.6} mass_u1={:.9e} u1_pow={:.9} u2_pow={:.9e}",
                r.lambda, r.n_const, r.mass_u1, r.mass_u1_pow, r.mass_u2_pow
            ),
        );
    }
    report.note(
        "limits",
        format!(
            "vtilde_tau={:.9e} vtilde_tau2={:.9e}",
            out.v_tilde_tau, out.v_tilde_tau2
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------
// Suite: ot
// ---------------------------------------------------------------------

fn brute_force_min_cost(cost: &[Vec<f64>], w: f64) -> f64 {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    fn heap(k: usize, perm: &mut Vec<usize>, cost: &[Vec<f64>], w: f64, best: &mut f64) {
        if k == 1 {
            let c: f64 = perm.iter().enumerate().map(|(i, &j)| w * cost[i][j]).sum();
            if c < *best {
                *best = c;
            }
            return;
        }
        for i in 0..k {
            heap(k - 1, perm, cost, w, best);
            if k % 2 == 0 {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut perm, cost, w, &mut best);
    best
}

fn suite_ot(cfg: &ScenarioConfig, report: &mut Report, opts: &RunOptions) -> Result<()> {
    let bg = cfg.background()?;
    let (tau1, tau, tau2, _) = cfg.resolved_times()?;
    let solver = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling.seed ^ 0x07af);

    // exactness against permutation brute force on small equal-weight
    // instances with signed random costs
    let t0 = Instant::now();
    let mut worst_diff: f64 = 0.0;
    let mut worst_marginal: f64 = 0.0;
    for trial in 0..50 {
        let n = 2 + trial % 7; // 2..8
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let w = 1.0 / n as f64;
        let weights = vec![w; n];
        let entries = crate::ot::solve_transport(&cost, &weights, &weights)?;
        let got: f64 = entries.iter().map(|&(i, j, f)| f * cost[i][j]).sum();
        let expect = brute_force_min_cost(&cost, w);
        worst_diff = worst_diff.max((got - expect).abs());
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; n];
        for &(i, j, f) in &entries {
            rows[i] += f;
            cols[j] += f;
        }
        for k in 0..n {
            worst_marginal = worst_marginal
                .max((rows[k] - w).abs())
                .max((cols[k] - w).abs());
        }
    }
    let ms = t0.elapsed().as_millis();
    report.add(
        "brute_force_equality",
        worst_diff,
        Cmp::Le,
        cfg.tolerance("brute_force_equality", 0.0),
        ms,
    );
    report.add(
        "marginal_exactness",
        worst_marginal,
        Cmp::Le,
        cfg.tolerance("marginal_exactness", 1e-9),
        ms,
    );

    // sorted 1D supports with quadratic-type cost: identity matching
    let t0 = Instant::now();
    let mut monge_bad = 0usize;
    for _ in 0..10 {
        let n = 8;
        let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.4)).collect();
        let mut ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.4)).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let cost: Vec<Vec<f64>> = xs
            .iter()
            .map(|&x| ys.iter().map(|&y| (x - y) * (x - y)).collect())
            .collect();
        let w = vec![1.0 / n as f64; n];
        let entries = crate::ot::solve_transport(&cost, &w, &w)?;
        for (k, &(i, j, _)) in entries.iter().enumerate() {
            if i != k || j != k {
                monge_bad += 1;
            }
        }
    }
    report.add(
        "monge_identity_order",
        monge_bad as f64,
        Cmp::Le,
        cfg.tolerance("monge_identity_order", 0.0),
        t0.elapsed().as_millis(),
    );

    // geometry-coupled plan: marginals, product-coupling bound,
    // interpolation endpoint identities and additivity through the midpoint
    let t0 = Instant::now();
    let m = 6;
    let pts1: Vec<ChartPoint> = (0..m)
        .map(|_| sample_point(&bg, &mut rng, cfg.sampling.spread))
        .collect();
    let pts2: Vec<ChartPoint> = (0..m)
        .map(|_| sample_point(&bg, &mut rng, cfg.sampling.spread))
        .collect();
    let mut w1: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = w1.iter().sum();
    for w in &mut w1 {
        *w /= total;
    }
    let w2 = w1.clone();
    let cost = cost_matrix(&bg, &pts1, tau1, &pts2, tau2, &solver)?;
    let plan = solve_discrete_ot(&cost, &pts1, &pts2, &w1, &w2)?;
    report.add(
        "plan_marginals",
        plan.marginal_defect(),
        Cmp::Le,
        cfg.tolerance("plan_marginals", 1e-9),
        t0.elapsed().as_millis(),
    );
    let indep: f64 = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| w1[i] * w2[j] * cost[i][j])
                .sum::<f64>()
        })
        .sum();
    report.add(
        "plan_beats_product",
        plan.cost - indep,
        Cmp::Le,
        cfg.tolerance("plan_beats_product", 1e-12),
        t0.elapsed().as_millis(),
    );

    let at1 = interpolate_plan(&bg, &plan, tau1, tau1, tau2, &solver)?;
    let at2 = interpolate_plan(&bg, &plan, tau1, tau2, tau2, &solver)?;
    let mut endpoint_dev: f64 = 0.0;
    for (k, &(i, j, f)) in plan.entries.iter().enumerate() {
        let d1 = at1[k]
            .0
            .coords()
            .iter()
            .zip(plan.source_points[i].coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let d2 = at2[k]
            .0
            .coords()
            .iter()
            .zip(plan.target_points[j].coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        endpoint_dev = endpoint_dev.max(d1).max(d2);
        endpoint_dev = endpoint_dev
            .max((at1[k].1 - f).abs())
            .max((at2[k].1 - f).abs());
    }
    report.add(
        "interp_endpoint_identity",
        endpoint_dev,
        Cmp::Le,
        cfg.tolerance("interp_endpoint_identity", 0.0),
        t0.elapsed().as_millis(),
    );

    let t0 = Instant::now();
    let mids = interpolate_plan(&bg, &plan, tau1, tau, tau2, &solver)?;
    if opts.emit_plotdata {
        if let Some(dir) = &opts.out_dir {
            std::fs::create_dir_all(dir)?;
            let mut dat = String::from("# i j weight cost interp_coords...\n");
            for (&(i, j, f), (mid, _)) in plan.entries.iter().zip(&mids) {
                dat.push_str(&format!("{i} {j} {f:.12e} {:.12e}", cost[i][j]));
                for c in mid.coords() {
                    dat.push_str(&format!(" {c:.12e}"));
                }
                dat.push('\n');
            }
            std::fs::write(dir.join("plan_entries.dat"), dat)?;
        }
    }
    let adds: Vec<Result<f64>> = plan
        .entries
        .par_iter()
        .zip(mids.par_iter())
        .map(|(&(i, j, _), (mid, _))| {
            let q_full = l_distance_fast(&bg, &pts1[i], tau1, &pts2[j], tau2, &solver)?;
            let qa = l_distance_fast(&bg, &pts1[i], tau1, mid, tau, &solver)?;
            let qb = l_distance_fast(&bg, mid, tau, &pts2[j], tau2, &solver)?;
            Ok((q_full - qa - qb).abs())
        })
        .collect();
    let mut worst_add: f64 = 0.0;
    for a in adds {
        worst_add = worst_add.max(a?);
    }
    report.add(
        "interp_additivity",
        worst_add,
        Cmp::Le,
        cfg.tolerance("interp_additivity", 1e-5),
        t0.elapsed().as_millis(),
    );
    Ok(())
}
