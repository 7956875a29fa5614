//! Nonnegative matrix factorization `X ≈ W H` under the Frobenius loss.
//!
//! The workhorse is [`accelerated_hals`]: given the precomputed products
//! `A = Y G` and `B = Gᵀ G` for a subproblem `min ‖Y − F Gᵀ‖²` over `F ≥ 0`,
//! it sweeps the columns of `F` with the closed-form HALS update and repeats
//! the sweep while the precomputation is still being amortized. NMF, NTF and
//! PARAFAC2 are all expressed through it by choosing `A` and `B`.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg;
use crate::{Error, Result};

/// Upper bound on accelerated inner sweeps, whatever the measured ρ.
pub const MAX_INNER_SWEEPS: usize = 100;

/// Denominator floor of the multiplicative update.
pub const MU_EPSILON: f64 = 1e-12;

pub const DEFAULT_L1_PENALTY: f64 = 1e-5;
pub const DEFAULT_L0_COUNT: usize = 20;
pub const DEFAULT_L2_SHARE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sparsity {
    None,
    /// Keep the `n` largest entries of every targeted column.
    L0Hard(usize),
    /// ℓ1 penalty `2 α Σ|·|` folded into the column update.
    L1Penalty(f64),
    /// Keep the fewest largest entries holding a `β` share of the ℓ2 norm.
    L2Power(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparsityTarget {
    W,
    H,
    Both,
}

impl SparsityTarget {
    pub fn includes_w(self) -> bool {
        matches!(self, SparsityTarget::W | SparsityTarget::Both)
    }

    pub fn includes_h(self) -> bool {
        matches!(self, SparsityTarget::H | SparsityTarget::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Nndsvd,
    /// Uniform `(0, 1]` entries, rescaled to the data magnitude.
    Random(u64),
}

/// How the accelerated-HALS cost ratio ρ is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoMode {
    /// Wall-clock timing of the first sweep against the precomputation.
    Timed,
    /// Flop counts of the same two phases; deterministic.
    OpCount,
    /// A constant ρ.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfConfig {
    pub rank: usize,
    pub max_outer_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub outer_tol: f64,
    pub accel_alpha: f64,
    pub accel_eps: f64,
    pub sparsity: Sparsity,
    pub sparsity_target: SparsityTarget,
    pub init: Init,
    pub rho: RhoMode,
}

impl NmfConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_outer_iters: 500,
            outer_tol: 1e-6,
            accel_alpha: 0.5,
            accel_eps: 0.01,
            sparsity: Sparsity::None,
            sparsity_target: SparsityTarget::H,
            init: Init::Nndsvd,
            rho: RhoMode::Timed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if !(self.accel_eps > 0.0 && self.accel_eps < 1.0) {
            return Err(Error::InvalidArgument("accel_eps must lie in (0, 1)".into()));
        }
        if !(self.accel_alpha >= 0.0) {
            return Err(Error::InvalidArgument("accel_alpha must be nonnegative".into()));
        }
        match self.sparsity {
            Sparsity::L0Hard(0) => return Err(Error::InvalidArgument("l0 sparsity needs n >= 1".into())),
            Sparsity::L1Penalty(a) if !(a >= 0.0) => {
                return Err(Error::InvalidArgument("l1 penalty must be nonnegative".into()))
            }
            Sparsity::L2Power(b) if !(b > 0.0 && b <= 1.0) => {
                return Err(Error::InvalidArgument("l2 power share must lie in (0, 1]".into()))
            }
            _ => {}
        }
        if let RhoMode::Fixed(r) = self.rho {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidArgument("fixed rho must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn accel(&self, l1: f64) -> AccelParams {
        AccelParams {
            alpha: self.accel_alpha,
            eps: self.accel_eps,
            rho: self.rho,
            l1,
        }
    }

    pub(crate) fn l1_for_w(&self) -> f64 {
        match self.sparsity {
            Sparsity::L1Penalty(a) if self.sparsity_target.includes_w() => a,
            _ => 0.0,
        }
    }

    pub(crate) fn l1_for_h(&self) -> f64 {
        match self.sparsity {
            Sparsity::L1Penalty(a) if self.sparsity_target.includes_h() => a,
            _ => 0.0,
        }
    }

    /// Whether the objective is guaranteed monotone for this configuration.
    pub fn is_monotone(&self) -> bool {
        matches!(self.sparsity, Sparsity::None | Sparsity::L1Penalty(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfResult {
    /// `K x R`.
    pub w: Array2<f64>,
    /// `R x N`.
    pub h: Array2<f64>,
    /// `‖X − WH‖_F` after every outer iteration.
    pub objective_trace: Vec<f64>,
    /// The minimized objective `‖X − WH‖²_F + 2α(‖W‖₁ + ‖H‖₁)` over the
    /// penalized factors; equals the squared error without an ℓ1 penalty.
    pub penalized_trace: Vec<f64>,
}

impl NmfResult {
    pub fn relative_error(&self, x: &ArrayView2<'_, f64>) -> f64 {
        let norm = frobenius(x);
        if norm == 0.0 {
            return residual_norm(x, &self.w.view(), &self.h.view());
        }
        residual_norm(x, &self.w.view(), &self.h.view()) / norm
    }
}

pub fn frobenius(m: &ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖X − W H‖_F`, evaluated entrywise.
pub fn residual_norm(x: &ArrayView2<'_, f64>, w: &ArrayView2<'_, f64>, h: &ArrayView2<'_, f64>) -> f64 {
    let wh = w.dot(h);
    x.iter()
        .zip(wh.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn check_input(x: &ArrayView2<'_, f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if x.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("input matrix has negative entries".into()));
    }
    if x.is_empty() {
        return Err(Error::ShapeMismatch("empty input matrix".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Initialization

/// NNDSVD initialization.
///
/// The leading pair comes from the absolute values of the top singular
/// vectors; each further pair keeps whichever of the positive or negative
/// sections of `(u_j, v_j)` carries more mass. A zero matrix yields zero
/// factors.
pub fn nndsvd_init(x: &ArrayView2<'_, f64>, rank: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    check_input(x)?;
    let (k, n) = x.dim();
    if rank == 0 || rank > k.min(n) {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} must lie in 1..={}",
            k.min(n)
        )));
    }
    let mut w = Array2::zeros((k, rank));
    let mut h = Array2::zeros((rank, n));
    if x.iter().all(|&v| v == 0.0) {
        return Ok((w, h));
    }
    let (u, s, vt) = linalg::truncated_svd(x, rank);
    let s0 = s[0].sqrt();
    w.column_mut(0).assign(&u.column(0).mapv(|v| s0 * v.abs()));
    h.row_mut(0).assign(&vt.row(0).mapv(|v| s0 * v.abs()));
    for j in 1..s.len().min(rank) {
        let x_col = u.column(j);
        let y_row = vt.row(j);
        let xp = x_col.mapv(|v| v.max(0.0));
        let xn = x_col.mapv(|v| (-v).max(0.0));
        let yp = y_row.mapv(|v| v.max(0.0));
        let yn = y_row.mapv(|v| (-v).max(0.0));
        let (nxp, nxn) = (norm2(&xp), norm2(&xn));
        let (nyp, nyn) = (norm2(&yp), norm2(&yn));
        let (mp, mn) = (nxp * nyp, nxn * nyn);
        let (uu, vv, sigma, nu, nv) = if mp > mn {
            (xp, yp, mp, nxp, nyp)
        } else {
            (xn, yn, mn, nxn, nyn)
        };
        if sigma == 0.0 {
            continue;
        }
        let scale = (s[j] * sigma).sqrt();
        w.column_mut(j).assign(&uu.mapv(|v| scale * v / nu));
        h.row_mut(j).assign(&vv.mapv(|v| scale * v / nv));
    }
    Ok((w, h))
}

fn norm2(v: &Array1<f64>) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Strictly positive random factors whose product matches the mean of `x`.
pub fn random_init(x: &ArrayView2<'_, f64>, rank: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let (k, n) = x.dim();
    let mean = x.mean().unwrap_or(0.0);
    let scale = if mean > 0.0 {
        (mean / (rank as f64 * 0.25)).sqrt()
    } else {
        1.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // gen::<f64>() is in [0, 1); 1 - u is in (0, 1]
    let mut draw = || scale * (1.0 - rng.gen::<f64>());
    let w = Array2::from_shape_fn((k, rank), |_| draw());
    let h = Array2::from_shape_fn((rank, n), |_| draw());
    (w, h)
}

pub(crate) fn initialize(x: &ArrayView2<'_, f64>, rank: usize, init: Init) -> Result<(Array2<f64>, Array2<f64>)> {
    match init {
        Init::Nndsvd => nndsvd_init(x, rank),
        Init::Random(seed) => {
            if rank == 0 {
                return Err(Error::InvalidArgument("rank must be at least 1".into()));
            }
            Ok(random_init(x, rank, seed))
        }
    }
}

// ---------------------------------------------------------------------------
// HALS

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelParams {
    pub alpha: f64,
    pub eps: f64,
    pub rho: RhoMode,
    /// ℓ1 penalty subtracted from the numerator.
    pub l1: f64,
}

/// Cost of forming `A` and `B` for one factor update.
#[derive(Debug, Clone, Copy, Default)]
pub struct Precompute {
    pub elapsed: Duration,
    pub flops: f64,
}

impl Precompute {
    /// Times `f`, recording `flops` as its nominal cost.
    pub fn measure<T>(flops: f64, f: impl FnOnce() -> T) -> (T, Self) {
        let start = Instant::now();
        let out = f();
        (
            out,
            Self {
                elapsed: start.elapsed(),
                flops,
            },
        )
    }
}

/// One HALS sweep over the columns of `factor` (`n x R`) for
/// `min ‖Y − F Gᵀ‖² + 2·l1·Σ F` with `a = Y G` and `b = Gᵀ G`.
///
/// Column `k` becomes `max(0, (a_k − Σ_{j≠k} b_jk f_j − l1) / b_kk)`, reading
/// columns already refreshed in this sweep. Columns with `b_kk = 0` are set
/// to zero. Returns the squared Frobenius norm of the change.
pub fn hals_sweep(factor: &mut Array2<f64>, a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, l1: f64) -> f64 {
    let rank = factor.ncols();
    let n = factor.nrows();
    let mut delta = 0.0;
    let mut new_col = vec![0.0; n];
    for k in 0..rank {
        let bkk = b[[k, k]];
        if bkk <= 0.0 {
            for i in 0..n {
                let old = factor[[i, k]];
                delta += old * old;
                factor[[i, k]] = 0.0;
            }
            continue;
        }
        for (i, slot) in new_col.iter_mut().enumerate() {
            let row = factor.row(i);
            let mut cross = 0.0;
            for j in 0..rank {
                if j != k {
                    cross += b[[j, k]] * row[j];
                }
            }
            *slot = ((a[[i, k]] - cross - l1) / bkk).max(0.0);
        }
        for (i, &v) in new_col.iter().enumerate() {
            let old = factor[[i, k]];
            delta += (v - old) * (v - old);
            factor[[i, k]] = v;
        }
    }
    delta
}

/// Accelerated HALS: a first sweep, then up to `⌊1 + αρ⌋` further sweeps
/// while the change stays above `ε` times the first change.
///
/// Returns the total number of sweeps performed.
pub fn accelerated_hals(
    factor: &mut Array2<f64>,
    a: &ArrayView2<'_, f64>,
    b: &ArrayView2<'_, f64>,
    params: &AccelParams,
    pre: Precompute,
) -> usize {
    let start = Instant::now();
    let first = hals_sweep(factor, a, b, params.l1).sqrt();
    let sweep_time = start.elapsed();
    let (n, r) = factor.dim();
    let rho = match params.rho {
        RhoMode::Fixed(rho) => rho,
        RhoMode::OpCount => {
            let sweep = (2 * n * r * r).max(1) as f64;
            (pre.flops + sweep) / sweep
        }
        RhoMode::Timed => {
            let sweep = sweep_time.as_secs_f64();
            if sweep > 0.0 {
                (pre.elapsed.as_secs_f64() + sweep) / sweep
            } else {
                1.0
            }
        }
    };
    let budget = ((1.0 + params.alpha * rho).floor() as usize).min(MAX_INNER_SWEEPS);
    let mut sweeps = 1;
    for _ in 0..budget {
        let change = hals_sweep(factor, a, b, params.l1).sqrt();
        sweeps += 1;
        if change <= params.eps * first {
            break;
        }
    }
    sweeps
}

/// Zeroes the smaller entries of a nonnegative column per `scheme`.
/// `None` and `L1Penalty` leave the column unchanged. Ties keep the lower
/// index.
pub fn apply_sparsity(column: &mut ArrayViewMut1<'_, f64>, scheme: Sparsity) {
    let order = || {
        let mut idx: Vec<usize> = (0..column.len()).collect();
        idx.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then(a.cmp(&b)));
        idx
    };
    match scheme {
        Sparsity::None | Sparsity::L1Penalty(_) => {}
        Sparsity::L0Hard(n) => {
            for &i in order().iter().skip(n) {
                column[i] = 0.0;
            }
        }
        Sparsity::L2Power(beta) => {
            let total: f64 = column.iter().map(|v| v * v).sum();
            if total == 0.0 {
                return;
            }
            let target = beta * beta * total * (1.0 - 1e-12);
            let idx = order();
            let mut acc = 0.0;
            let mut keep = idx.len();
            for (count, &i) in idx.iter().enumerate() {
                acc += column[i] * column[i];
                if acc >= target {
                    keep = count + 1;
                    break;
                }
            }
            for &i in idx.iter().skip(keep) {
                column[i] = 0.0;
            }
        }
    }
}

fn sparsify_columns(m: &mut Array2<f64>, scheme: Sparsity) {
    for mut col in m.columns_mut() {
        apply_sparsity(&mut col, scheme);
    }
}

fn sparsify_rows(m: &mut Array2<f64>, scheme: Sparsity) {
    for mut row in m.rows_mut() {
        apply_sparsity(&mut row, scheme);
    }
}

fn penalized(err: f64, cfg: &NmfConfig, w: &Array2<f64>, ht: &Array2<f64>) -> f64 {
    let mut f = err * err;
    let (lw, lh) = (cfg.l1_for_w(), cfg.l1_for_h());
    if lw > 0.0 {
        f += 2.0 * lw * w.sum();
    }
    if lh > 0.0 {
        f += 2.0 * lh * ht.sum();
    }
    f
}

fn converged(prev: f64, cur: f64, tol: f64, monotone: bool) -> bool {
    if cur == 0.0 {
        return true;
    }
    let change = if monotone { prev - cur } else { (prev - cur).abs() };
    change <= tol * prev.abs()
}

/// Alternating accelerated-HALS driver. `ht` is `Hᵀ` (`N x R`).
fn hals_driver(
    x: &ArrayView2<'_, f64>,
    mut w: Array2<f64>,
    mut ht: Array2<f64>,
    cfg: &NmfConfig,
    update_w: bool,
) -> NmfResult {
    let (k, n) = x.dim();
    let r = cfg.rank;
    let xt = x.t();
    let monotone = cfg.is_monotone();
    let mut objective_trace = Vec::new();
    let mut penalized_trace = Vec::new();
    for _ in 0..cfg.max_outer_iters {
        if update_w {
            let ((a, b), pre) =
                Precompute::measure((2 * k * n * r + 2 * n * r * r) as f64, || (x.dot(&ht), ht.t().dot(&ht)));
            accelerated_hals(&mut w, &a.view(), &b.view(), &cfg.accel(cfg.l1_for_w()), pre);
            if cfg.sparsity_target.includes_w() {
                sparsify_columns(&mut w, cfg.sparsity);
            }
        }
        let ((a, b), pre) = Precompute::measure((2 * k * n * r + 2 * k * r * r) as f64, || (xt.dot(&w), w.t().dot(&w)));
        accelerated_hals(&mut ht, &a.view(), &b.view(), &cfg.accel(cfg.l1_for_h()), pre);
        if cfg.sparsity_target.includes_h() {
            sparsify_rows(&mut ht, cfg.sparsity);
        }

        let err = residual_norm(x, &w.view(), &ht.t());
        let f = penalized(err, cfg, &w, &ht);
        let prev = penalized_trace.last().copied();
        objective_trace.push(err);
        penalized_trace.push(f);
        if let Some(prev) = prev {
            if converged(prev, f, cfg.outer_tol, monotone) {
                break;
            }
        } else if f == 0.0 {
            break;
        }
    }
    NmfResult {
        w,
        h: ht.t().to_owned(),
        objective_trace,
        penalized_trace,
    }
}

/// Blind NMF by accelerated HALS, updating `W` then `H` each outer iteration.
pub fn hals_nmf(x: &ArrayView2<'_, f64>, cfg: &NmfConfig) -> Result<NmfResult> {
    cfg.validate()?;
    check_input(x)?;
    let (w, h) = initialize(x, cfg.rank, cfg.init)?;
    hals_nmf_from(x, w, h, cfg)
}

/// [`hals_nmf`] from caller-supplied starting factors.
pub fn hals_nmf_from(x: &ArrayView2<'_, f64>, w0: Array2<f64>, h0: Array2<f64>, cfg: &NmfConfig) -> Result<NmfResult> {
    cfg.validate()?;
    check_input(x)?;
    check_factor_shapes(x, &w0, &h0, cfg.rank)?;
    Ok(hals_driver(x, w0, h0.t().to_owned(), cfg, true))
}

fn check_factor_shapes(x: &ArrayView2<'_, f64>, w: &Array2<f64>, h: &Array2<f64>, rank: usize) -> Result<()> {
    let (k, n) = x.dim();
    if w.dim() != (k, rank) || h.dim() != (rank, n) {
        return Err(Error::ShapeMismatch(format!(
            "factors {:?} and {:?} do not fit a {k}x{n} matrix at rank {rank}",
            w.dim(),
            h.dim()
        )));
    }
    if w.iter().chain(h.iter()).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "starting factors must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

/// Nonnegative least squares for `H` with the dictionary `W` held fixed.
pub fn nnls_fixed_dictionary(x: &ArrayView2<'_, f64>, w: &ArrayView2<'_, f64>, cfg: &NmfConfig) -> Result<Array2<f64>> {
    nnls_fixed_dictionary_run(x, w, cfg).map(|r| r.h)
}

/// Like [`nnls_fixed_dictionary`], also returning the objective traces.
pub fn nnls_fixed_dictionary_run(
    x: &ArrayView2<'_, f64>,
    w: &ArrayView2<'_, f64>,
    cfg: &NmfConfig,
) -> Result<NmfResult> {
    cfg.validate()?;
    check_input(x)?;
    if w.ncols() != cfg.rank || w.nrows() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "dictionary is {:?}, expected {}x{}",
            w.dim(),
            x.nrows(),
            cfg.rank
        )));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "dictionary must be finite and nonnegative".into(),
        ));
    }
    let ht = Array2::zeros((x.ncols(), cfg.rank));
    Ok(hals_driver(x, w.to_owned(), ht, cfg, false))
}

// ---------------------------------------------------------------------------
// Multiplicative update

/// One Lee-Seung step: `W ← W ∘ (XHᵀ) ⊘ (WHHᵀ)`, then the same for `H`.
pub fn multiplicative_step(x: &ArrayView2<'_, f64>, w: &mut Array2<f64>, h: &mut Array2<f64>) {
    let num = x.dot(&h.t());
    let den = w.dot(&h.dot(&h.t()));
    ndarray::Zip::from(&mut *w)
        .and(&num)
        .and(&den)
        .for_each(|wv, &nu, &de| *wv *= nu / de.max(MU_EPSILON));
    let num = w.t().dot(x);
    let den = w.t().dot(&*w).dot(&*h);
    ndarray::Zip::from(&mut *h)
        .and(&num)
        .and(&den)
        .for_each(|hv, &nu, &de| *hv *= nu / de.max(MU_EPSILON));
}

/// Lee-Seung multiplicative-update NMF. Zero entries of an NNDSVD start are
/// replaced by the mean of `X`, since multiplicative steps cannot leave zero.
pub fn multiplicative_update_nmf(x: &ArrayView2<'_, f64>, cfg: &NmfConfig) -> Result<NmfResult> {
    cfg.validate()?;
    check_input(x)?;
    let (mut w, mut h) = initialize(x, cfg.rank, cfg.init)?;
    let fill = x.mean().unwrap_or(0.0).max(MU_EPSILON);
    w.mapv_inplace(|v| if v > 0.0 { v } else { fill });
    h.mapv_inplace(|v| if v > 0.0 { v } else { fill });
    let mut trace = Vec::new();
    for _ in 0..cfg.max_outer_iters {
        multiplicative_step(x, &mut w, &mut h);
        let err = residual_norm(x, &w.view(), &h.view());
        let prev = trace.last().copied();
        trace.push(err);
        if let Some(prev) = prev {
            if converged(prev * prev, err * err, cfg.outer_tol, true) {
                break;
            }
        }
    }
    let penalized_trace = trace.iter().map(|e| e * e).collect();
    Ok(NmfResult {
        w,
        h,
        objective_trace: trace,
        penalized_trace,
    })
}

/// ℓ2-normalizes the columns of `w`, moving the norms into the rows of `h`
/// so that `W H` is unchanged. Zero columns are left alone.
pub fn normalize_columns_into_rows(w: &mut Array2<f64>, h: &mut Array2<f64>) {
    for (mut col, mut row) in w.columns_mut().into_iter().zip(h.axis_iter_mut(Axis(0))) {
        let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            col.mapv_inplace(|v| v / n);
            row.mapv_inplace(|v| v * n);
        }
    }
}
