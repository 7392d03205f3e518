use super::Mat;
use crate::{Error, Result};

/// Relative tolerance used by [`numeric_rank`] when callers have no better choice.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Below this magnitude the adjugate of large matrices is rebuilt from
/// cofactors instead of `det · inverse`.
const ADJ_INVERSE_FLOOR: f64 = 1e-12;

fn ensure_square(m: &Mat, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Determinant by LU factorization with partial pivoting.
///
/// The empty matrix has determinant one.
pub fn det(m: &Mat) -> Result<f64> {
    let n = ensure_square(m, "det")?;
    Ok(det_lu(n, m.as_slice().to_vec()))
}

// `a` is column-major n×n and is destroyed.
fn det_lu(n: usize, mut a: Vec<f64>) -> f64 {
    match n {
        0 => return 1.0,
        1 => return a[0],
        2 => return a[0] * a[3] - a[2] * a[1],
        _ => {}
    }
    let idx = |r: usize, c: usize| c * n + r;
    let mut det = 1.0;
    for k in 0..n {
        let mut piv = k;
        let mut best = a[idx(k, k)].abs();
        for r in k + 1..n {
            let v = a[idx(r, k)].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != k {
            for c in 0..n {
                a.swap(idx(k, c), idx(piv, c));
            }
            det = -det;
        }
        let p = a[idx(k, k)];
        det *= p;
        for r in k + 1..n {
            let f = a[idx(r, k)] / p;
            if f != 0.0 {
                for c in k + 1..n {
                    a[idx(r, c)] -= f * a[idx(k, c)];
                }
            }
        }
    }
    det
}

fn minor(m: &Mat, skip_r: usize, skip_c: usize) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity((n - 1) * (n - 1));
    for c in (0..n).filter(|&c| c != skip_c) {
        for r in (0..n).filter(|&r| r != skip_r) {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn adjugate_cofactors(m: &Mat) -> Mat {
    let n = m.nrows();
    let mut adj = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            // adj = transpose of the cofactor matrix
            adj[(j, i)] = sign * det_lu(n - 1, minor(m, i, j));
        }
    }
    adj
}

/// Classical adjugate, `adj(m) · m = det(m) · I`, valid at singular `m` too.
///
/// Cofactor expansion up to 4×4. Larger matrices use `det · m⁻¹` and fall
/// back to cofactors when `|det| < 1e-12`.
pub fn adjugate(m: &Mat) -> Result<Mat> {
    let n = ensure_square(m, "adjugate")?;
    match n {
        0 => Ok(Mat::zeros(0, 0)),
        1 => Ok(Mat::from_element(1, 1, 1.0)),
        2 => Ok(Mat::from_row_slice(
            2,
            2,
            &[m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]],
        )),
        3 | 4 => Ok(adjugate_cofactors(m)),
        _ => {
            let d = det_lu(n, m.as_slice().to_vec());
            if d.abs() >= ADJ_INVERSE_FLOOR {
                if let Some(inv) = m.clone().try_inverse() {
                    return Ok(inv * d);
                }
            }
            Ok(adjugate_cofactors(m))
        }
    }
}

/// Number of singular values above `tol · σ_max`. A zero matrix has rank 0.
pub fn numeric_rank(m: &Mat, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("rank tolerance must be positive, got {tol}")));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0_f64, f64::max);
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * largest).count())
}

/// Smallest eigenvalue of a symmetric matrix (only the lower triangle is trusted).
pub fn lambda_min_sym(m: &Mat) -> Result<f64> {
    ensure_square(m, "lambda_min_sym")?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(sym
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min))
}
