//! Numerical laboratory for L-geometry on closed-form backward-flow model
//! spaces: L-length and L-geodesics, L-Jacobi tracks and distortion
//! coefficients, transport interpolation, and reduced-volume monotonicity,
//! with oracle-backed verification harnesses for each inequality.

pub mod background;
pub mod density;
pub mod error;
pub mod harness;
pub mod jacobi;
pub mod lgeodesic;
pub mod ode;
pub mod ot;
pub mod potential;
pub mod quadrature;
pub mod reduced_volume;
pub mod report;
pub mod scenario;
pub mod transport;

pub use background::{ChartPoint, CurvatureData, FlowBackground, ModelKind};
pub use density::{DensityField, DensityKind, DensityRole};
pub use error::{LabError, Result};
pub use harness::{run_scenario, RunOptions, Suite};
pub use jacobi::{
    h_samples, jacobi_track, jacobian_inequality_slack, lambda_of_times,
    trace_identity_residual, verify_minimizing, JacobiOptions, JacobiTrack,
};
pub use lgeodesic::{
    first_variation_residual, l_distance, l_exp, l_length, l_length_prefix, shoot,
    DistanceResult, LGeodesic, SolverOptions, TimePath,
};
pub use potential::PotentialField;
pub use quadrature::VolumeGrid;
pub use reduced_volume::{
    estimate_n, monotonicity_curve, reduced_volume, section3_experiment, v_reduced,
    ReducedVolumeCurve, Section3Outcome, Section3Row,
};
pub use report::{Cmp, Report, ReportRow};
pub use scenario::ScenarioConfig;
pub use transport::{
    corollary_mass, cost_matrix, density_inequality_slack, interpolate_plan,
    minimal_admissible_v, pushforward_density, solve_discrete_ot, theorem2_check,
    TheoremScenario, TransportPlan,
};
