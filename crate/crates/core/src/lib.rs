//! Two-phase Muskat flow by relaxed Wasserstein minimizing movements.

mod auction;
pub mod bfm;
pub mod ctransform;
pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod jko;
pub mod kernels;
pub mod levelset;
pub mod oracle;
mod precond;

pub use bfm::{dual_value, recover_pressure, recover_velocity, solve_dual, BfmOptions, DualState};
pub use ctransform::{pushforward, quadratic_ctransform, CTransformResult};
pub use diagnostics::{shape_classify, stationarity, ShapeClass, ShapeReport};
pub use error::{Error, Result};
pub use fields::{integrate, Grid, PhaseField, PhasePair, ScalarField, VectorField};
pub use jko::{
    jko_step, run_flow, EnergyReport, FlowResult, LevelSetOptions, PotentialSpec, StepConfig,
    StepOutcome, StepView, Transport,
};
pub use kernels::{gaussian_blur, hc_first_variation, heat_content, HeatKernelParams};
pub use levelset::LevelSet;
