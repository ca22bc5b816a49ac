//! Measurements of initialization-time and perturbation-time quantities,
//! reported against their expected scalings.

mod init;
mod perturb;
mod report;
mod stability;

pub use init::{
    backward_norm_ratio, chi_square_oracle, orthogonal_residual, probe_backward_norm, probe_forward_norms,
    probe_intermediate_spectral, probe_separateness, spectral_depth_sweep, ChiSquareReport, InterlacedProduct,
    CONCENTRATION_WIDTH,
};
pub use perturb::{
    apply_deltas, apply_deltas_owned, make_perturbation, sign_flip_deltas, unit_directions, Perturbation, PerturbationMode,
    PerturbationSpec,
};
pub use report::{omega_means, Check, ProbeReport, Scaling, SeriesPoint};
pub use stability::{
    perturbation_sweep, probe_backward_drift, probe_forward_drift, probe_sign_changes, StabilitySweep, SweepWindows,
    BACKWARD_DRAWS,
};
