//! Embedded Runge-Kutta integration in the `s = sqrt(t)` variable.
//!
//! Two entry points:
//!
//! * [`integrate_to_nodes`] — adaptive Dormand-Prince 5(4) whose steps are
//!   clamped to land exactly on a requested node grid, so sampled states
//!   carry no interpolation error.
//! * [`integrate_fixed_rk4`] — classical RK4 with a fixed substep plan.
//!   Used wherever the solution map must be differentiated by finite
//!   differences of the initial data: a frozen step plan keeps the map
//!   smooth across perturbed runs.

use crate::error::{LabError, Result};

/// Tolerances and guards for the adaptive integrator.
#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    /// Abort when any velocity-like component exceeds this magnitude.
    pub blowup_guard: f64,
    /// Number of leading state components subject to the blow-up guard
    /// (position block size; the guard watches components `[n, 2n)`).
    pub velocity_block: Option<(usize, usize)>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            atol: 1e-12,
            rtol: 1e-10,
            max_steps: 100_000,
            blowup_guard: 1e6,
            velocity_block: None,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(s, y)` through the strictly increasing `s_nodes`,
/// returning the state at every node (including the first, which echoes
/// `y0`). Adaptive steps never cross a node.
pub fn integrate_to_nodes<F>(
    mut f: F,
    s_nodes: &[f64],
    y0: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut out = Vec::with_capacity(s_nodes.len());
    out.push(y0.to_vec());
    let mut y = y0.to_vec();
    let mut s = s_nodes[0];
    let span = s_nodes[s_nodes.len() - 1] - s_nodes[0];
    if span <= 0.0 {
        return Err(LabError::InvalidPath {
            reason: "node grid must be strictly increasing".into(),
        });
    }
    let mut h = (span / 64.0).max(1e-12);
    let mut k = vec![vec![0.0f64; dim]; 7];
    let mut ytmp = vec![0.0f64; dim];
    let mut steps = 0usize;

    for target_idx in 1..s_nodes.len() {
        let target = s_nodes[target_idx];
        while s < target - 1e-14 * span.max(1.0) {
            steps += 1;
            if steps > opts.max_steps {
                return Err(LabError::NonConvergence {
                    reason: format!("integrator exceeded {} steps", opts.max_steps),
                    residual: target - s,
                });
            }
            let mut hs = h.min(target - s);
            if hs < 1e-15 * span.max(1.0) {
                return Err(LabError::StepSizeUnderflow { s });
            }
            // stage evaluations
            f(s, &y, &mut k[0]);
            for stage in 1..7 {
                for i in 0..dim {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(stage) {
                        acc += A[stage][j] * kj[i];
                    }
                    ytmp[i] = y[i] + hs * acc;
                }
                f(s + C[stage] * hs, &ytmp, &mut k[stage]);
            }
            // 5th order solution and embedded error
            let mut err_norm: f64 = 0.0;
            for i in 0..dim {
                let mut y5 = 0.0;
                let mut y4 = 0.0;
                for j in 0..7 {
                    y5 += B5[j] * k[j][i];
                    y4 += B4[j] * k[j][i];
                }
                let ynew = y[i] + hs * y5;
                let e = hs * (y5 - y4);
                let tol = opts.atol + opts.rtol * y[i].abs().max(ynew.abs());
                err_norm = err_norm.max((e / tol).abs());
                ytmp[i] = ynew;
            }
            if err_norm <= 1.0 {
                y.copy_from_slice(&ytmp);
                s += hs;
                if let Some((lo, hi)) = opts.velocity_block {
                    for &v in &y[lo..hi] {
                        if v.abs() > opts.blowup_guard {
                            return Err(LabError::BlowUp {
                                s,
                                speed: v.abs(),
                            });
                        }
                    }
                }
            }
            // step-size controller (order 5)
            let scale = if err_norm > 0.0 {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            hs *= scale;
            h = hs.min(span);
        }
        s = target;
        out.push(y.clone());
    }
    Ok(out)
}

/// Classical RK4 through `s_nodes` with `substeps` equal substeps per
/// segment. Returns the state at every node. Deterministic step plan:
/// the solution map is a fixed smooth function of `y0`.
pub fn integrate_fixed_rk4<F>(
    mut f: F,
    s_nodes: &[f64],
    substeps: usize,
    y0: &[f64],
) -> Vec<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut out = Vec::with_capacity(s_nodes.len());
    out.push(y0.to_vec());
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0f64; dim];
    let mut k2 = vec![0.0f64; dim];
    let mut k3 = vec![0.0f64; dim];
    let mut k4 = vec![0.0f64; dim];
    let mut ytmp = vec![0.0f64; dim];
    for w in s_nodes.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        let mut s = w[0];
        for _ in 0..substeps {
            f(s, &y, &mut k1);
            for i in 0..dim {
                ytmp[i] = y[i] + 0.5 * h * k1[i];
            }
            f(s + 0.5 * h, &ytmp, &mut k2);
            for i in 0..dim {
                ytmp[i] = y[i] + 0.5 * h * k2[i];
            }
            f(s + 0.5 * h, &ytmp, &mut k3);
            for i in 0..dim {
                ytmp[i] = y[i] + h * k3[i];
            }
            f(s + h, &ytmp, &mut k4);
            for i in 0..dim {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            s += h;
        }
        out.push(y.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn adaptive_matches_exponential() {
        let nodes: Vec<f64> = (0..=32).map(|i| i as f64 / 32.0).collect();
        let states = integrate_to_nodes(
            |_s, y, dy| dy[0] = y[0],
            &nodes,
            &[1.0],
            &OdeOptions::default(),
        )
        .unwrap();
        for (node, state) in nodes.iter().zip(states.iter()) {
            assert_abs_diff_eq!(state[0], node.exp(), epsilon = 1e-9);
        }
    }

    #[test]
    fn adaptive_handles_oscillator() {
        // y'' = -y integrated over several periods
        let nodes: Vec<f64> = (0..=64).map(|i| i as f64 * 0.2).collect();
        let states = integrate_to_nodes(
            |_s, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &nodes,
            &[1.0, 0.0],
            &OdeOptions::default(),
        )
        .unwrap();
        let end = nodes[nodes.len() - 1];
        assert_abs_diff_eq!(states.last().unwrap()[0], end.cos(), epsilon = 1e-8);
    }

    #[test]
    fn fixed_rk4_fourth_order() {
        let nodes = [0.0, 1.0];
        let run = |sub: usize| {
            integrate_fixed_rk4(|_s, y, dy| dy[0] = y[0], &nodes, sub, &[1.0])
                .last()
                .unwrap()[0]
        };
        let e1 = (run(8) - 1f64.exp()).abs();
        let e2 = (run(16) - 1f64.exp()).abs();
        let order = (e1 / e2).log2();
        assert!(order > 3.7, "observed order {order}");
    }

    #[test]
    fn blowup_guard_trips() {
        let nodes = [0.0, 10.0];
        let opts = OdeOptions {
            blowup_guard: 1e3,
            velocity_block: Some((0, 1)),
            ..OdeOptions::default()
        };
        let res = integrate_to_nodes(|_s, y, dy| dy[0] = y[0], &nodes, &[1.0], &opts);
        assert!(matches!(res, Err(LabError::BlowUp { .. })));
    }
}
