//! Baselines sharing the quantile back-end: CQR on two fixed levels and a
//! histogram method in the style of conformal histogram regression.

pub mod chr;
pub mod cqr;

pub use chr::{chr_build, chr_calibrate, chr_predict, chr_score, ChrCalibration, ChrHistogram};
pub use cqr::{cqr_calibrate, cqr_indices, cqr_predict, cqr_score, CqrCalibration};
