//! Dense SVD helpers.
//!
//! Large thin SVDs go through `faer`, which is several times faster than the
//! `nalgebra` implementation on the snapshot sizes used here. Results are
//! handed back as `nalgebra` matrices, the matrix type used everywhere else.

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{self, ComputeSvdVectors, SvdParams};
use faer::{get_global_parallelism, Auto, Mat, MatRef};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Left singular vectors and singular values (descending) of a matrix.
pub(crate) struct LeftSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
}

pub(crate) fn left_svd(a: &DMatrix<f64>) -> Result<LeftSvd> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InsufficientData("empty matrix".into()));
    }
    let view = MatRef::from_column_major_slice(a.as_slice(), rows, cols);
    let k = rows.min(cols);
    let mut u = Mat::<f64>::zeros(rows, k);
    let mut s = Diag::<f64>::zeros(k);
    let par = get_global_parallelism();
    // Snapshot matrices are usually wide; an initial QR of the transpose pays
    // off well below the default aspect ratio.
    let mut params: SvdParams = Auto::<f64>::auto();
    params.qr_ratio_threshold = 1.0;
    // Right singular vectors are never needed.
    let scratch = svd::svd_scratch::<f64>(
        rows,
        cols,
        ComputeSvdVectors::Thin,
        ComputeSvdVectors::No,
        par,
        params.into(),
    );
    svd::svd(
        view,
        s.as_mut(),
        Some(u.as_mut()),
        None,
        par,
        MemStack::new(&mut MemBuffer::new(scratch)),
        params.into(),
    )
    .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let u = DMatrix::from_fn(rows, k, |i, j| u[(i, j)]);
    let diag = s.column_vector();
    let s = (0..k).map(|i| diag[i]).collect();
    Ok(LeftSvd { u, s })
}

/// Singular values only, descending.
pub(crate) fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let view = MatRef::from_column_major_slice(a.as_slice(), rows, cols);
    view.singular_values()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_nalgebra_on_a_small_matrix() {
        let a = DMatrix::from_fn(7, 5, |i, j| ((i * 5 + j) as f64).sin() + (i as f64) * 0.1);
        let ours = left_svd(&a).unwrap();
        let reference = a.clone().svd(true, false);
        let mut s_ref: Vec<f64> = reference.singular_values.iter().copied().collect();
        s_ref.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in ours.s.iter().zip(&s_ref) {
            assert!((x - y).abs() < 1e-12 * s_ref[0]);
        }
        let gram = ours.u.transpose() * &ours.u;
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-13);
        let sv = singular_values(&a).unwrap();
        for (x, y) in sv.iter().zip(&s_ref) {
            assert!((x - y).abs() < 1e-12 * s_ref[0]);
        }
    }
}
