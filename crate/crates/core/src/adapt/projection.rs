use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Matrix, Vector};

/// Euclidean projection onto the closed ball of radius `radius`.
pub fn project_ball(x: &Vector, radius: f64) -> Vector {
    let n = x.norm();
    if n <= radius {
        x.clone()
    } else {
        x * (radius / n)
    }
}

/// Projection onto the ball in the norm induced by the SPD matrix `a`:
/// `argmin_{‖y‖ ≤ D} (x − y)ᵀA(x − y)`.
///
/// Solved through the KKT condition `y = (A + νI)⁻¹Ax` in the eigenbasis of
/// `A`, bisecting on ν until `‖y‖` is within 1e-12 of the radius.
pub fn project_ball_weighted(x: &Vector, a: &Matrix, radius: f64) -> Result<Vector> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("projection radius must be positive, got {radius}")));
    }
    if a.nrows() != x.len() || a.ncols() != x.len() {
        return Err(Error::Dimension {
            context: "weighted projection",
            expected: format!("{0}x{0}", x.len()),
            got: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    if x.norm() <= radius {
        return Ok(x.clone());
    }
    let eig = sym_eigen(a);
    let lam = &eig.eigenvalues;
    if lam.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Certificate("weighted projection needs a positive definite matrix".into()));
    }
    let z = eig.eigenvectors.transpose() * x;
    let coords = |nu: f64| Vector::from_fn(z.len(), |i, _| lam[i] * z[i] / (lam[i] + nu));
    let norm_at = |nu: f64| coords(nu).norm();

    let mut lo = 0.0;
    let mut hi = 1.0;
    while norm_at(hi) >= radius {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical {
                step: 0,
                message: "weighted projection multiplier overflowed".into(),
            });
        }
    }
    for _ in 0..400 {
        if radius - norm_at(hi) <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = &eig.eigenvectors * coords(hi);
    // Rotating back can add a few ulps; keep the result feasible.
    let n = y.norm();
    Ok(if n > radius { y * (radius / n) } else { y })
}
