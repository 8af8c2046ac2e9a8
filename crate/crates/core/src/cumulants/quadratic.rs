use nalgebra::Matrix4;

/// Connected pairing moment `V_(12),(34)` of the squared activation.
///
/// `l` is the 4x4 pre-activation covariance of the four points.
pub fn quadratic_v(l: &Matrix4<f64>) -> f64 {
    let g = |a: usize, b: usize| l[(a - 1, b - 1)];
    let (l11, l22, l33, l44) = (g(1, 1), g(2, 2), g(3, 3), g(4, 4));
    let (l12, l13, l14, l23, l24, l34) = (g(1, 2), g(1, 3), g(1, 4), g(2, 3), g(2, 4), g(3, 4));
    2.0 * (l11 * l33 * l24 * l24 + l11 * l44 * l23 * l23 + l22 * l33 * l14 * l14 + l22 * l44 * l13 * l13)
        + 4.0 * (l13 * l13 * l24 * l24 + l14 * l14 * l23 * l23)
        + 8.0 * (l11 * l23 * l34 * l24 + l22 * l34 * l14 * l13 + l33 * l12 * l14 * l24 + l44 * l12 * l13 * l23)
        + 16.0 * (l12 * l13 * l24 * l34 + l12 * l14 * l23 * l34 + l13 * l14 * l23 * l24)
}
