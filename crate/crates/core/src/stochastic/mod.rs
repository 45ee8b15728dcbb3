//! Random-variate generators and dense linear algebra used by every sampler.

pub mod linalg;
pub mod polya_gamma;
pub mod special;
pub mod truncnorm;
pub mod ztp;

pub use linalg::{
    cholesky, conditional_from_precision, conditional_normal, mvn_sample, mvn_sample_canonical, Cholesky, SpdMatrix,
};
pub use polya_gamma::sample_polya_gamma;
pub use truncnorm::sample_truncated_normal;
pub use ztp::{sample_ztp, ztp_log_pmf, ztp_mean};
