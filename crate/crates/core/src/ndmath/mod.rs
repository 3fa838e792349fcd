//! Minimal differentiable array substrate: dense arrays, a reverse-mode tape,
//! batched convolutions, Adam, and a finite-difference gradient checker.

mod adam;
mod array;
pub mod conv;
mod gradcheck;
mod scalar;
mod tape;

pub use adam::AdamState;
pub use array::Array;
pub use gradcheck::{analytic_gradient, gradient_check, gradient_check_at, ScalarFn};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var, DISTANCE_EPS};

pub(crate) use tape::pairwise_distance_values;

/// Distance matrix of the rows of `points` (`[n, d] -> [n, n]`).
pub fn pairwise_distances<T: Scalar>(points: &Array<T>) -> crate::Result<Array<T>> {
    match *points.shape() {
        [n, d] => Ok(pairwise_distance_values(points.data(), n, d)),
        _ => Err(crate::Error::shape(
            "pairwise_distances",
            format!("expected [n, d], got {:?}", points.shape()),
        )),
    }
}
