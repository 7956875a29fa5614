//! Dense linear-algebra glue between ndarray and nalgebra's SVD.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn to_dmatrix(m: &ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD with singular values sorted in decreasing order.
pub(crate) fn thin_svd(m: &ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let svd = to_dmatrix(m).svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let u_sorted = Array2::from_shape_fn((u.nrows(), order.len()), |(i, j)| u[(i, order[j])]);
    let vt_sorted = Array2::from_shape_fn((order.len(), vt.ncols()), |(i, j)| vt[(order[i], j)]);
    let s_sorted = order.iter().map(|&i| s[i]).collect();
    (u_sorted, s_sorted, vt_sorted)
}

const DIRECT_SVD_LIMIT: usize = 300;

/// Leading `r` singular triplets. Small matrices use a full SVD; larger ones
/// a seeded randomized range finder with power iterations.
pub(crate) fn truncated_svd(m: &ArrayView2<'_, f64>, r: usize) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let (rows, cols) = m.dim();
    let take = |(u, s, vt): (Array2<f64>, Array1<f64>, Array2<f64>)| {
        let r = r.min(s.len());
        (
            u.slice(ndarray::s![.., ..r]).to_owned(),
            s.slice(ndarray::s![..r]).to_owned(),
            vt.slice(ndarray::s![..r, ..]).to_owned(),
        )
    };
    if rows.min(cols) <= DIRECT_SVD_LIMIT {
        return take(thin_svd(m));
    }
    let sketch = (r + 10).min(rows.min(cols));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let omega = Array2::from_shape_fn((cols, sketch), |_| rng.gen::<f64>() - 0.5);
    let mut q = orthonormalize(&m.dot(&omega));
    for _ in 0..4 {
        let z = orthonormalize(&m.t().dot(&q));
        q = orthonormalize(&m.dot(&z));
    }
    let small = q.t().dot(m);
    let (ub, s, vt) = thin_svd(&small.view());
    take((q.dot(&ub), s, vt))
}

fn orthonormalize(m: &Array2<f64>) -> Array2<f64> {
    let qr = to_dmatrix(&m.view()).qr();
    from_dmatrix(&qr.q())
}

/// Orthonormal `F x R` factor `U Vᵀ` from the thin SVD of `m` (`F x R`,
/// `F >= R`): the solution of the orthogonal Procrustes problem.
pub(crate) fn procrustes(m: &ArrayView2<'_, f64>) -> Array2<f64> {
    let (u, _, vt) = thin_svd(m);
    u.dot(&vt)
}
