//! Small dense factorizations: Cholesky, SPD solves, log-determinants and a
//! cyclic Jacobi eigensolver for symmetric matrices.

use super::{Matrix, NumericsError};

/// Relative jitter added to the diagonal when a first Cholesky attempt fails.
pub const JITTER_SCALE: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-10;

fn check_square(a: &Matrix) -> Result<(), NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::DimensionMismatch {
            expected: (a.rows(), a.rows()),
            found: a.shape(),
        });
    }
    Ok(())
}

fn cholesky_raw(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = a`.
///
/// Only the lower triangle of `a` is read. If the plain factorization hits a
/// non-positive pivot, `1e-8·trace(a)/n` is added to the diagonal and the
/// factorization retried once; a second failure is an error.
pub fn cholesky(a: &Matrix) -> Result<Matrix, NumericsError> {
    check_square(a)?;
    if let Some(l) = cholesky_raw(a) {
        return Ok(l);
    }
    let n = a.rows();
    let jitter = JITTER_SCALE * a.trace().abs() / n.max(1) as f64;
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] += jitter;
    }
    cholesky_raw(&shifted).ok_or(NumericsError::NotPositiveDefinite)
}

/// Like [`cholesky`] but first verifies symmetry to `1e-10` (relative to the
/// largest entry).
pub fn cholesky_checked(a: &Matrix) -> Result<Matrix, NumericsError> {
    check_square(a)?;
    let scale = a.max_abs().max(1.0);
    if a.max_abs_diff(&a.transpose()) > SYMMETRY_TOL * scale {
        return Err(NumericsError::NotSymmetric);
    }
    cholesky(a)
}

/// Solves `L·y = b` in place for lower-triangular `L`, one column of `b` at a time.
fn forward_sub(l: &Matrix, b: &mut Matrix) {
    let n = l.rows();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// Solves `Lᵀ·x = y` in place.
fn backward_sub(l: &Matrix, b: &mut Matrix) {
    let n = l.rows();
    for c in 0..b.cols() {
        for i in (0..n).rev() {
            let mut s = b[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// Solves `a·x = b` given the Cholesky factor of `a`.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let mut x = b.clone();
    forward_sub(l, &mut x);
    backward_sub(l, &mut x);
    x
}

pub fn cholesky_solve_vec(l: &Matrix, b: &[f64]) -> Vec<f64> {
    cholesky_solve(l, &Matrix::column(b)).into_vec()
}

/// Solves `a·x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    if b.rows() != a.rows() {
        return Err(NumericsError::DimensionMismatch {
            expected: (a.rows(), b.cols()),
            found: b.shape(),
        });
    }
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, b))
}

/// `log det a` computed as `2·Σ log L_ii`.
pub fn logdet_spd(a: &Matrix) -> Result<f64, NumericsError> {
    let l = cholesky(a)?;
    Ok(logdet_from_cholesky(&l))
}

pub fn logdet_from_cholesky(l: &Matrix) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse of an SPD matrix, symmetrized.
pub fn inverse_spd(a: &Matrix) -> Result<Matrix, NumericsError> {
    let l = cholesky(a)?;
    Ok(inverse_from_cholesky(&l))
}

pub fn inverse_from_cholesky(l: &Matrix) -> Matrix {
    let n = l.rows();
    cholesky_solve(l, &Matrix::identity(n)).symmetrize()
}

/// Solves a general square system by Gaussian elimination with partial pivoting.
pub fn solve_general(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    check_square(a)?;
    let n = a.rows();
    if b.rows() != n {
        return Err(NumericsError::DimensionMismatch {
            expected: (n, b.cols()),
            found: b.shape(),
        });
    }
    let mut m = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap_or(col);
        if m[(pivot, col)].abs() <= 1e-14 * scale {
            return Err(NumericsError::Singular);
        }
        if pivot != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = tmp;
            }
            for j in 0..x.cols() {
                let tmp = x[(col, j)];
                x[(col, j)] = x[(pivot, j)];
                x[(pivot, j)] = tmp;
            }
        }
        for i in (col + 1)..n {
            let f = m[(i, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[(i, j)] -= f * m[(col, j)];
            }
            for j in 0..x.cols() {
                x[(i, j)] -= f * x[(col, j)];
            }
        }
    }
    for c in 0..x.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= m[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / m[(i, i)];
        }
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix), NumericsError> {
    check_square(a)?;
    let n = a.rows();
    let mut m = a.symmetrize();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * m.frobenius_norm().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Singular values in ascending order, via the eigenvalues of `aᵀa`.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>, NumericsError> {
    let ata = a.t_matmul(a);
    let (vals, _) = symmetric_eigen(&ata)?;
    Ok(vals.into_iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// Spectral radius of a general real square matrix, from its characteristic
/// polynomial for n ≤ 2 and power iteration on `aᵀa`-free repeated squaring otherwise.
pub fn spectral_radius(a: &Matrix) -> Result<f64, NumericsError> {
    check_square(a)?;
    let n = a.rows();
    match n {
        0 => Ok(0.0),
        1 => Ok(a[(0, 0)].abs()),
        2 => {
            let tr = a.trace();
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = tr * tr - 4.0 * det;
            if disc >= 0.0 {
                let r = disc.sqrt();
                Ok(((tr + r) / 2.0).abs().max(((tr - r) / 2.0).abs()))
            } else {
                Ok(det.abs().sqrt())
            }
        }
        _ => {
            // Gelfand: ρ(A) = lim ‖A^k‖^{1/k}, with renormalization.
            let mut p = a.clone();
            let mut log_scale = 0.0;
            let mut k = 1.0;
            for _ in 0..30 {
                p = p.matmul(&p);
                k *= 2.0;
                let norm = p.frobenius_norm();
                if norm == 0.0 {
                    return Ok(0.0);
                }
                log_scale = 2.0 * log_scale + norm.ln();
                p = p.scale(1.0 / norm);
            }
            Ok((log_scale / k).exp())
        }
    }
}
