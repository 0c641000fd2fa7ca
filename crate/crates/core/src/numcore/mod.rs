//! Dense matrices, seeded randomness and finite-difference checking.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::finite_diff_check;
pub use matrix::{dot, l2_norm, squared_distance, Matrix, NORM_EPSILON};
pub use rng::Rng;
