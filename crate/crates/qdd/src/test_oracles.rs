//! Independent numerical oracles used only by the test suite.

use nalgebra::DMatrix;
use rand::Rng;

use crate::grid::{Field, Grid};

/// Matrix exponential by scaling-and-squaring with a Taylor series.
///
/// Deliberately independent of the eigendecomposition path used by the
/// library: the only operations are matrix products.
pub(crate) fn matrix_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.norm();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a = m / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = DMatrix::<f64>::identity(n, n);
    for k in 1..=40 {
        term = (&term * &a) / k as f64;
        sum += &term;
        if term.norm() < 1e-18 * sum.norm() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Random band-limited potential: a few low Fourier modes with bounded
/// amplitude, smooth on every grid.
pub(crate) fn random_smooth_field(grid: Grid, rng: &mut impl Rng, amplitude: f64) -> Field {
    let c1 = rng.gen_range(-amplitude..amplitude);
    let s1 = rng.gen_range(-amplitude..amplitude);
    let c2 = rng.gen_range(-amplitude..amplitude) * 0.5;
    let s2 = rng.gen_range(-amplitude..amplitude) * 0.5;
    let c3 = rng.gen_range(-amplitude..amplitude) * 0.25;
    Field::from_fn(grid, |x| {
        let t = 2.0 * std::f64::consts::PI * x;
        c1 * t.cos()
            + s1 * t.sin()
            + c2 * (2.0 * t).cos()
            + s2 * (2.0 * t).sin()
            + c3 * (3.0 * t).cos()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_exp_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(4, 4);
        let e = matrix_exp(&z);
        assert!((&e - DMatrix::<f64>::identity(4, 4)).norm() < 1e-15);
    }

    #[test]
    fn matrix_exp_of_diagonal_matches_scalar_exp() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.5, 2.0]));
        let e = matrix_exp(&d);
        for (i, x) in [-1.0f64, 0.5, 2.0].iter().enumerate() {
            assert!((e[(i, i)] - x.exp()).abs() < 1e-13 * x.exp());
        }
    }
}
