//! Rank-tolerant least squares `min_G ||Y - G X||_F` for wide data matrices.
//!
//! The regressor matrix is transposed to a tall system `X^T G^T = Y^T`,
//! reduced by a Householder QR, and the small triangular factor is inverted
//! through its SVD with singular values below
//! `max(rows, cols) * eps_mach * sigma_max` truncated.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub rank: usize,
    pub tolerance: f64,
    pub sigma_max: f64,
    /// `sigma_max / sigma_min` over the retained singular values.
    pub condition: f64,
}

/// Minimum-norm solution of `min ||target - G regressors||_F`.
/// `regressors` is `p x T`, `target` is `k x T`; returns `G` (`k x p`).
pub fn solve_rows(target: &DMatrix<f64>, regressors: &DMatrix<f64>) -> Result<(DMatrix<f64>, SolveInfo)> {
    let (p, t) = regressors.shape();
    if target.ncols() != t {
        return Err(Error::DimensionMismatch {
            context: "least-squares sample count",
            expected: t,
            actual: target.ncols(),
        });
    }
    if t == 0 || p == 0 {
        return Err(Error::InvalidArgument("empty least-squares problem".into()));
    }
    let k = target.nrows();
    let (small, rhs) = if t >= p {
        let qr = regressors.transpose().qr();
        let mut rhs = target.transpose();
        qr.q_tr_mul(&mut rhs);
        (qr.r(), rhs.rows(0, p).into_owned())
    } else {
        (regressors.transpose(), target.transpose())
    };
    let svd = SVD::new(small, true, true);
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let tolerance = (p.max(t) as f64) * f64::EPSILON * sigma_max;
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V^T requested");

    // G^T = V S^+ U^T rhs
    let mut rank = 0;
    let mut sigma_min = f64::INFINITY;
    let utb = u.transpose() * &rhs;
    let mut scaled = DMatrix::zeros(sigma.len(), k);
    for (i, &s) in sigma.iter().enumerate() {
        if s > tolerance && s > 0.0 {
            rank += 1;
            sigma_min = sigma_min.min(s);
            scaled.set_row(i, &(utb.row(i) / s));
        }
    }
    let g_t = v_t.transpose() * scaled;
    let condition = if rank == 0 { f64::INFINITY } else { sigma_max / sigma_min };
    let g = g_t.transpose();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            context: "least-squares solve",
            condition,
        });
    }
    Ok((
        g,
        SolveInfo {
            rank,
            tolerance,
            sigma_max,
            condition,
        },
    ))
}

/// Singular values of a `p x T` regressor matrix (descending) and the rank
/// tolerance used by [`solve_rows`].
pub fn singular_values(regressors: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let (p, t) = regressors.shape();
    let small = if t >= p { regressors.transpose().qr().r() } else { regressors.transpose() };
    let mut sigma: Vec<f64> = small.singular_values().iter().copied().collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    (sigma, (p.max(t) as f64) * f64::EPSILON * sigma_max)
}
