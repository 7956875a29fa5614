//! Dense third-order tensors and the matrix products that link CP factors to
//! tensor unfoldings.
//!
//! Unfoldings use row-major ordering of the remaining modes: element
//! `(i0, i1, i2)` of an `I x J x K` tensor lands at
//!
//! * mode 0: row `i0`, column `i1 * K + i2`
//! * mode 1: row `i1`, column `i0 * K + i2`
//! * mode 2: row `i2`, column `i0 * J + i1`
//!
//! With this ordering the CP identities read `X(0) = A (B ⊙ C)ᵀ`,
//! `X(1) = B (A ⊙ C)ᵀ` and `X(2) = C (A ⊙ B)ᵀ`, where `⊙` is [`khatri_rao`].

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    data: Array3<f64>,
}

impl Tensor3 {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.shape().contains(&0) {
            return Err(Error::ShapeMismatch("tensor dimensions must be positive".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        Self::new(Array3::zeros(dims))
    }

    /// Stacks equally sized matrices along the third mode.
    pub fn from_slices(slices: &[ArrayView2<'_, f64>]) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::ShapeMismatch("no slices".into()))?;
        let (i, j) = first.dim();
        if slices.iter().any(|s| s.dim() != (i, j)) {
            return Err(Error::ShapeMismatch("slices differ in shape".into()));
        }
        let mut data = Array3::zeros((i, j, slices.len()));
        for (k, s) in slices.iter().enumerate() {
            data.index_axis_mut(Axis(2), k).assign(s);
        }
        Self::new(data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn slice(&self, k: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(2), k)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// CP factor matrices `[A, B, C]` sharing `rank` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
}

impl CpFactors {
    pub fn new(a: Array2<f64>, b: Array2<f64>, c: Array2<f64>) -> Result<Self> {
        if a.ncols() != b.ncols() || a.ncols() != c.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "factor ranks differ: {}, {}, {}",
                a.ncols(),
                b.ncols(),
                c.ncols()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }
}

fn check_mode(mode: usize) -> Result<()> {
    if mode > 2 {
        return Err(Error::InvalidArgument(format!(
            "invalid mode {mode}, expected 0, 1 or 2"
        )));
    }
    Ok(())
}

fn unfold_shape(mode: usize, (i, j, k): (usize, usize, usize)) -> (usize, usize) {
    match mode {
        0 => (i, j * k),
        1 => (j, i * k),
        _ => (k, i * j),
    }
}

pub fn unfold(t: &Tensor3, mode: usize) -> Result<Array2<f64>> {
    check_mode(mode)?;
    let (i, j, k) = t.dims();
    let mut out = Array2::zeros(unfold_shape(mode, (i, j, k)));
    for ((a, b, c), &v) in t.data.indexed_iter() {
        let (row, col) = match mode {
            0 => (a, b * k + c),
            1 => (b, a * k + c),
            _ => (c, a * j + b),
        };
        out[[row, col]] = v;
    }
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Array2<f64>, mode: usize, dims: (usize, usize, usize)) -> Result<Tensor3> {
    check_mode(mode)?;
    let want = unfold_shape(mode, dims);
    if m.dim() != want {
        return Err(Error::ShapeMismatch(format!(
            "mode-{mode} unfolding of {dims:?} is {want:?}, got {:?}",
            m.dim()
        )));
    }
    let (_, j, k) = dims;
    let data = Array3::from_shape_fn(dims, |(a, b, c)| match mode {
        0 => m[[a, b * k + c]],
        1 => m[[b, a * k + c]],
        _ => m[[c, a * j + b]],
    });
    Tensor3::new(data)
}

/// `A ⊠ B`: block `(i, j)` of the result is `a_ij * B`.
pub fn kronecker(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    let (ai, aj) = a.dim();
    let (bk, bl) = b.dim();
    Array2::from_shape_fn((ai * bk, aj * bl), |(r, c)| a[[r / bk, c / bl]] * b[[r % bk, c % bl]])
}

/// Column-wise Kronecker product: column `r` is `kron(A[:, r], B[:, r])`.
pub fn khatri_rao(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let bj = b.nrows();
    Ok(Array2::from_shape_fn((a.nrows() * bj, a.ncols()), |(row, r)| {
        a[[row / bj, r]] * b[[row % bj, r]]
    }))
}

/// `Σ_r a_r ∘ b_r ∘ c_r`.
pub fn cp_compose(f: &CpFactors) -> Result<Tensor3> {
    let dims = (f.a.nrows(), f.b.nrows(), f.c.nrows());
    let rank = f.rank();
    let data = Array3::from_shape_fn(dims, |(i, j, k)| {
        (0..rank).map(|r| f.a[[i, r]] * f.b[[j, r]] * f.c[[k, r]]).sum()
    });
    Tensor3::new(data)
}

/// Stacks the columns of `m` top to bottom.
pub fn vec(m: &ArrayView2<'_, f64>) -> Array1<f64> {
    m.t().iter().copied().collect()
}

/// Stacks the rows of `m` (C-order flattening). This is the vectorization
/// under which `vec(AXB) = (A ⊠ Bᵀ) vec(X)` and, for diagonal `X`,
/// `vec(AXB) = (A ⊙ Bᵀ) diag(X)`; it matches the unfolding order above.
pub fn vec_rows(m: &ArrayView2<'_, f64>) -> Array1<f64> {
    m.iter().copied().collect()
}

pub fn diag_matrix(d: &ArrayView1<'_, f64>) -> Array2<f64> {
    Array2::from_diag(d)
}
