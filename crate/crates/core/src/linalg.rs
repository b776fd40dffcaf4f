//! Dense least squares by Householder QR.
//!
//! Solving through the orthogonal factorization avoids forming `AᵀA`, which
//! squares the condition number of the monomial design matrices.

use crate::error::{Error, Result};

/// Relative threshold on `|R_kk| / max |R_jj|` below which the system is
/// declared rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Minimizes `‖A x − b‖₂` for a row-major `rows × cols` matrix `A`.
pub fn lstsq(a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(b.len(), rows);
    if rows < cols {
        return Err(Error::SingularSystem(format!(
            "{rows} equations cannot determine {cols} unknowns"
        )));
    }
    // column-major working copy
    let mut q = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            q[c * rows + r] = a[r * cols + c];
        }
    }
    let mut rhs = b.to_vec();
    let mut diag = vec![0.0; cols];

    for k in 0..cols {
        let (done, rest) = q.split_at_mut((k + 1) * rows);
        let col = &mut done[k * rows..];
        let norm = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let alpha = if col[k] > 0.0 { -norm } else { norm };
        col[k] -= alpha;
        let vnorm2 = col[k..].iter().map(|v| v * v).sum::<f64>();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let v = &col[k..];
        for other in rest.chunks_exact_mut(rows) {
            let dot: f64 = v.iter().zip(&other[k..]).map(|(a, b)| a * b).sum();
            let s = 2.0 * dot / vnorm2;
            for (o, vi) in other[k..].iter_mut().zip(v) {
                *o -= s * vi;
            }
        }
        let dot: f64 = v.iter().zip(&rhs[k..]).map(|(a, b)| a * b).sum();
        let s = 2.0 * dot / vnorm2;
        for (o, vi) in rhs[k..].iter_mut().zip(v) {
            *o -= s * vi;
        }
    }

    let dmax = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if dmax == 0.0 || diag.iter().any(|d| d.abs() <= RANK_TOL * dmax) {
        return Err(Error::SingularSystem(format!(
            "design matrix is rank deficient ({rows}x{cols})"
        )));
    }

    // back substitution with R (upper triangle of q, diagonal in `diag`)
    let mut x = vec![0.0; cols];
    for k in (0..cols).rev() {
        let mut s = rhs[k];
        for j in k + 1..cols {
            s -= q[j * rows + k] * x[j];
        }
        x[k] = s / diag[k];
    }
    Ok(x)
}

/// Minimizes `Σ_r w_r (A_r x − b_r)²` with non-negative row weights.
pub fn weighted_lstsq(
    a: &[f64],
    rows: usize,
    cols: usize,
    b: &[f64],
    weights: &[f64],
) -> Result<Vec<f64>> {
    debug_assert_eq!(weights.len(), rows);
    let kept: Vec<usize> = (0..rows).filter(|&r| weights[r] > 0.0).collect();
    let mut aw = Vec::with_capacity(kept.len() * cols);
    let mut bw = Vec::with_capacity(kept.len());
    for &r in &kept {
        let s = weights[r].sqrt();
        aw.extend(a[r * cols..(r + 1) * cols].iter().map(|v| v * s));
        bw.push(b[r] * s);
    }
    lstsq(&aw, kept.len(), cols, &bw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_square_system() {
        // [[2,1],[1,3]] x = [3,5] -> x = [0.8, 1.4]
        let x = lstsq(&[2., 1., 1., 3.], 2, 2, &[3., 5.]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn overdetermined_line_fit() {
        // y = 1 + 2t sampled exactly at t = 0..4
        let a: Vec<f64> = (0..5).flat_map(|t| [1.0, t as f64]).collect();
        let b: Vec<f64> = (0..5).map(|t| 1.0 + 2.0 * t as f64).collect();
        let x = lstsq(&a, 5, 2, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_an_error() {
        let a = [1., 2., 2., 4., 3., 6.];
        assert!(matches!(
            lstsq(&a, 3, 2, &[1., 2., 3.]),
            Err(Error::SingularSystem(_))
        ));
        assert!(lstsq(&[1., 2.], 1, 2, &[1.]).is_err());
        assert!(lstsq(&[0., 0., 0., 0.], 2, 2, &[1., 1.]).is_err());
    }

    #[test]
    fn zero_weights_drop_rows() {
        let a = [1.0, 1.0, 1.0];
        let x = weighted_lstsq(&a, 3, 1, &[1.0, 100.0, 3.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14);
        assert!(weighted_lstsq(&a, 3, 1, &[1.0, 2.0, 3.0], &[0.0; 3]).is_err());
    }
}
