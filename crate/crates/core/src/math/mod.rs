//! Scalar and matrix primitives the model is assembled from.

pub mod bvn;
pub mod corr;
pub mod cutpoints;
pub mod link;
pub mod normal;
pub mod polychoric;
pub mod quadrature;

pub use bvn::bivariate_normal_cdf;
pub use corr::{cholesky, pool_correlation, CorrelationMatrix, Mat};
pub use cutpoints::{cutpoints_to_probs, induced_dirichlet_logdensity, probs_to_cutpoints, CutpointVector};
pub use polychoric::polychoric_to_product_moment;
