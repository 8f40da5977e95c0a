//! Visible light positioning with a ceiling-facing image sensor.
//!
//! The crate recovers a receiver's 3-D position and azimuth from the pixel
//! centroids of LED luminaires whose world coordinates are known, and
//! calibrates two intrinsic error sources of cheap camera modules:
//!
//! - the **rotation center** of the image (which need not coincide with the
//!   nominal principal point), estimated by fitting a circle to the track of
//!   one LED while the camera spins in place;
//! - a **systematic plan shift**, estimated as the mean of repeated position
//!   fixes at a known reference point (the dispersion circle).
//!
//! A deterministic simulator injects those error sources into synthetic scenes
//! so the calibrations can be exercised without hardware, and the metrics
//! module summarizes positioning error the way field experiments report it.
//!
//! Module map:
//!
//! - [`geometry`]: coordinate types and the world → camera → image → pixel chain
//! - [`solver`]: anchor tables, frames and the two-/N-LED pose solver
//! - [`calibration`]: circle fits and the two calibration procedures
//! - [`simulator`]: scene, error model and experiment runners
//! - [`metrics`]: error statistics, CDFs and trajectory line fits
//! - [`scenario`]: scenario config files, presets and report emission

#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod calibration;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod scenario;
pub mod simulator;
pub mod solver;

pub use error::{Result, VlpError};
