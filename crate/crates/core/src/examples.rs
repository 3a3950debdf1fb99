//! The two unbalanced reference matrices used to probe stability outside
//! the balanced class, with their diagonal curvature settings `P⁻¹H`.

use nalgebra::{DMatrix, DVector};

/// Left-stochastic, primitive, not balanced; exact diffusion diverges for
/// every step size with `P⁻¹H = diag(20, 1, 1, 1)`.
pub fn example1_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.5, 0.5, 0.0, //
            1.0, 0.0, 0.5, 0.0, //
            0.0, 0.5, 0.0, 0.0,
        ],
    )
}

pub fn example1_curvature() -> DVector<f64> {
    DVector::from_vec(vec![20.0, 1.0, 1.0, 1.0])
}

/// Left-stochastic, primitive, not balanced; exact diffusion converges for
/// step sizes below 0.2 with `P⁻¹H = 10 I`.
pub fn example2_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        5,
        5,
        &[
            0.3, 0.6, 0.2, 0.0, 0.0, //
            0.2, 0.2, 0.0, 0.3, 0.0, //
            0.1, 0.1, 0.5, 0.3, 0.2, //
            0.0, 0.1, 0.3, 0.4, 0.1, //
            0.4, 0.0, 0.0, 0.0, 0.7,
        ],
    )
}

pub fn example2_curvature() -> DVector<f64> {
    DVector::from_element(5, 10.0)
}

/// Selects one of the reference settings by number (1 or 2).
pub fn reference_setting(id: u8) -> Option<(DMatrix<f64>, DVector<f64>)> {
    match id {
        1 => Some((example1_matrix(), example1_curvature())),
        2 => Some((example2_matrix(), example2_curvature())),
        _ => None,
    }
}
