//! Small dense linear-algebra helpers shared by the rest of the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Largest singular value. Zero for empty matrices.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    // The Gram matrix on the short side is cheaper than a full SVD for wide bases.
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    lambda_max_sym(&gram).max(0.0).sqrt()
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn sym_eigen(m: &Matrix) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

pub fn lambda_max_sym(m: &Matrix) -> f64 {
    sym_eigen(m).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn lambda_min_sym(m: &Matrix) -> f64 {
    sym_eigen(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    nalgebra::Cholesky::new(symmetrize(m))
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Certificate("matrix is not positive definite".into()))
}

/// Largest generalized eigenvalue of the pencil (a, b) with b SPD:
/// the smallest c such that a ⪯ c·b.
pub fn generalized_lambda_max(a: &Matrix, b: &Matrix) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(symmetrize(b))
        .ok_or_else(|| Error::Certificate("metric is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Certificate("singular metric factor".into()))?;
    let s = &linv * symmetrize(a) * linv.transpose();
    Ok(lambda_max_sym(&s))
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Central finite-difference Jacobian with step 1e-6·max(1, ‖x‖).
pub fn fd_jacobian(f: &dyn Fn(&Vector) -> Vector, x: &Vector) -> Matrix {
    let h = 1e-6 * x.norm().max(1.0);
    let n = x.len();
    let m = f(x).len();
    let mut jac = Matrix::zeros(m, n);
    let mut xp = x.clone();
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient(f: &dyn Fn(&Vector) -> f64, x: &Vector) -> Vector {
    let h = 1e-6 * x.norm().max(1.0);
    let mut xp = x.clone();
    Vector::from_fn(x.len(), |j, _| {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        (fp - fm) / (2.0 * h)
    })
}

/// One output of the splitmix64 generator; advances `state`.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `index`-th output of a splitmix64 stream started at `master`.
/// Seeds for existing indices never change when more are requested.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut state = master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(&mut state)
}

pub fn derive_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(master, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_matches_svd() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 4.0]);
        let svd = m.clone().svd(false, false);
        assert_relative_eq!(spectral_norm(&m), svd.singular_values.max(), epsilon = 1e-12);
        assert_relative_eq!(spectral_norm(&m.transpose()), svd.singular_values.max(), epsilon = 1e-12);
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs for seed 0 from the reference C implementation.
        let mut s = 0u64;
        assert_eq!(splitmix64(&mut s), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(&mut s), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(derive_seed(0, 0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive_seed(0, 1), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn derived_seeds_are_prefix_stable() {
        let a = derive_seeds(42, 4);
        let b = derive_seeds(42, 9);
        assert_eq!(&b[..4], &a[..]);
    }

    #[test]
    fn fd_jacobian_of_linear_map() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        let f = |x: &Vector| &a * x;
        let j = fd_jacobian(&f, &Vector::from_vec(vec![0.3, -2.0]));
        assert_relative_eq!(j, a, epsilon = 1e-8);
    }

    #[test]
    fn generalized_eigenvalue_of_scaled_identity() {
        let a = Matrix::identity(3, 3) * 0.25;
        let b = Matrix::identity(3, 3) * 2.0;
        assert_relative_eq!(generalized_lambda_max(&a, &b).unwrap(), 0.125, epsilon = 1e-14);
    }
}
