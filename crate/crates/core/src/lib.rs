//! Numerical laboratory for R-matrices solving the associative Yang-Baxter
//! equation and for the integrable models assembled from them.

pub mod error;
pub mod evolve;
pub mod identities;
pub mod models_2d;
pub mod models_fd;
pub mod rmat;
pub mod specfn;
pub mod tensor;

pub use error::{LabError, Result};
pub use num_complex::Complex64;
