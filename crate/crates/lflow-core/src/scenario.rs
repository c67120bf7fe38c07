//! Scenario configuration: a human-editable TOML dialect (conventionally
//! `.cfg`) describing the background, times, density/potential families,
//! sampling sizes, seed, and per-check tolerance overrides.

use crate::background::{ChartPoint, FlowBackground, ModelKind};
use crate::density::DensityKind;
use crate::error::{LabError, Result};
use crate::jacobi::lambda_of_times;
use crate::potential::PotentialField;
use crate::transport::TheoremScenario;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub scale0: f64,
    #[serde(default)]
    pub lattice: Vec<f64>,
    pub t_max: f64,
}

#[derive(Clone, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TimesConfig {
    #[serde(default)]
    pub tau1: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub tau2: Option<f64>,
    #[serde(default)]
    pub tau_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub tau1_list: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub u1: DensityKind,
    pub u2: DensityKind,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub grid_res: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_z_max")]
    pub z_max: f64,
    pub seed: u64,
    #[serde(default = "default_x_samples")]
    pub x_samples: usize,
    #[serde(default = "default_shot_samples")]
    pub shot_samples: usize,
    #[serde(default)]
    pub basepoint: Option<Vec<f64>>,
    /// Point spread of random sampling on non-compact charts.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Cloud support size of the plan-guided scatter pass.
    #[serde(default)]
    pub ot_guided: Option<usize>,
}

fn default_samples() -> usize {
    4096
}
fn default_z_max() -> f64 {
    0.25
}
fn default_x_samples() -> usize {
    64
}
fn default_shot_samples() -> usize {
    100
}
fn default_spread() -> f64 {
    0.8
}

/// A fully reproducible experiment description.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub background: BackgroundConfig,
    pub times: TimesConfig,
    #[serde(default)]
    pub potential: Option<PotentialField>,
    #[serde(default)]
    pub density: Option<DensityConfig>,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

impl ScenarioConfig {
    /// Parses a config file; errors carry toml's line/field diagnostics.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let raw = std::fs::read_to_string(path)?;
        let cfg = Self::parse(&raw)?;
        Ok((cfg, raw))
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(raw).map_err(|e| LabError::Config {
            field: None,
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let _ = self.background()?;
        if let (Some(t1), Some(t2)) = (self.times.tau1, self.times.tau2) {
            if t2 <= t1 {
                return Err(LabError::config(
                    "times.tau2",
                    format!("must exceed tau1 = {t1}, got {t2}"),
                ));
            }
        }
        if let Some(grid) = &self.times.tau_grid {
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(LabError::config(
                    "times.tau_grid",
                    "must be strictly increasing",
                ));
            }
        }
        if self.sampling.grid_res < 2 {
            return Err(LabError::config("sampling.grid_res", "must be >= 2"));
        }
        Ok(())
    }

    pub fn background(&self) -> Result<FlowBackground> {
        FlowBackground::new(
            self.background.kind,
            self.background.dim,
            self.background.scale0,
            self.background.lattice.clone(),
            self.background.t_max,
        )
    }

    /// The `(tau1, tau, tau2, lambda)` quadruple, deriving whichever of
    /// `tau`/`lambda` the file omitted.
    pub fn resolved_times(&self) -> Result<(f64, f64, f64, f64)> {
        let tau1 = self
            .times
            .tau1
            .ok_or_else(|| LabError::config("times.tau1", "required by this suite"))?;
        let tau2 = self
            .times
            .tau2
            .ok_or_else(|| LabError::config("times.tau2", "required by this suite"))?;
        let tau = match (self.times.tau, self.times.lambda) {
            (Some(t), _) => t,
            (None, Some(lambda)) => {
                let inv = (1.0 - lambda) / tau1.sqrt() + lambda / tau2.sqrt();
                1.0 / (inv * inv)
            }
            (None, None) => {
                return Err(LabError::config(
                    "times.tau",
                    "give either tau or lambda",
                ))
            }
        };
        let lambda = lambda_of_times(tau1, tau, tau2)?;
        Ok((tau1, tau, tau2, lambda))
    }

    pub fn potential(&self, bg: &FlowBackground) -> Result<PotentialField> {
        let phi = self.potential.clone().unwrap_or(PotentialField::Zero);
        phi.validate(bg)?;
        Ok(phi)
    }

    pub fn theorem_scenario(&self, bg: &FlowBackground) -> Result<TheoremScenario> {
        let (tau1, tau, tau2, _) = self.resolved_times()?;
        let d = self
            .density
            .as_ref()
            .ok_or_else(|| LabError::config("density", "required by this suite"))?;
        let mut scen = TheoremScenario::new(
            bg,
            tau1,
            tau,
            tau2,
            d.u1.clone(),
            d.u2.clone(),
            self.sampling.grid_res,
            self.sampling.samples,
            self.sampling.z_max,
            self.sampling.seed,
        )?;
        if let Some(cap) = self.sampling.ot_guided {
            scen.ot_guided = cap;
        }
        Ok(scen)
    }

    pub fn basepoint(&self, bg: &FlowBackground) -> Result<ChartPoint> {
        match &self.sampling.basepoint {
            Some(coords) => {
                let p = ChartPoint(coords.clone());
                bg.check_point(&p)?;
                Ok(p)
            }
            None => Ok(default_basepoint(bg)),
        }
    }

    pub fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }
}

/// A canonical interior point of each model.
pub fn default_basepoint(bg: &FlowBackground) -> ChartPoint {
    match bg.kind() {
        ModelKind::FlatTorus => {
            ChartPoint(bg.lattice().iter().map(|&l| l / 2.0).collect())
        }
        ModelKind::RoundSphere => {
            ChartPoint::sphere_polar(&vec![std::f64::consts::FRAC_PI_2; bg.dim()])
        }
        ModelKind::HyperbolicQuotient => {
            let mut dir = vec![0.0; bg.dim()];
            dir[0] = 1.0;
            ChartPoint::hyperboloid(0.5, &dir)
        }
        ModelKind::ProductSphereFlat => {
            let m = bg.curved_dim();
            let sphere = ChartPoint::sphere_polar(&vec![std::f64::consts::FRAC_PI_2; m]);
            let flat: Vec<f64> = bg.lattice().iter().map(|&l| l / 2.0).collect();
            ChartPoint::product(&sphere.0, &flat)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAT: &str = r#"
[background]
kind = "flat_torus"
dim = 2
scale0 = 1.0
lattice = [1.0, 1.0]
t_max = 10.0

[times]
tau1 = 1.0
lambda = 0.5
tau2 = 4.0

[density.u1]
family = "periodized_gaussian"
center = [0.5, 0.5]
sigma = 0.12

[density.u2]
family = "periodized_gaussian"
center = [0.5, 0.5]
sigma = 0.12

[sampling]
grid_res = 32
seed = 42
"#;

    #[test]
    fn parses_and_derives_tau() {
        let cfg = ScenarioConfig::parse(FLAT).unwrap();
        let (t1, t, t2, lam) = cfg.resolved_times().unwrap();
        assert_eq!(t1, 1.0);
        assert_eq!(t2, 4.0);
        assert!((t - 16.0 / 9.0).abs() < 1e-12);
        assert!((lam - 0.5).abs() < 1e-12);
        let bg = cfg.background().unwrap();
        cfg.theorem_scenario(&bg).unwrap();
    }

    #[test]
    fn rejects_unknown_fields() {
        let bad = FLAT.replace("seed = 42", "seed = 42\nbogus_field = 1");
        let err = ScenarioConfig::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("bogus_field"), "{err}");
    }

    #[test]
    fn rejects_inverted_times() {
        let bad = FLAT.replace("tau2 = 4.0", "tau2 = 0.5");
        let err = ScenarioConfig::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("tau2"), "{err}");
    }
}
