//! Per-component trajectory smoothing with a constant-velocity
//! linear-Gaussian state-space model.

mod em;
mod kalman;
mod smooth;

pub use em::{constant_velocity_start, fit_em, EmFit, EmOptions, LIKELIHOOD_TOLERANCE};
pub use kalman::{kalman_filter, kalman_smooth, FilterOutput, KalmanModel, KalmanSmoothed};
pub use smooth::{
    smooth_embeddings, smooth_scalar, smooth_trajectory, step_scales, velocity, write_velocity_csv, SmoothOptions,
    SmoothedEmbeddings, SmoothedTrajectory, VelocityVector,
};
