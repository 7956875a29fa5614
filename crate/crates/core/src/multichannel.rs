//! Multichannel factorizations of an `F x T x C` spectrogram tensor:
//! simultaneous (stacked) NMF, nonnegative CP (NTF) and flexible PARAFAC2.
//! All three share one activation matrix across channels.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::linalg;
use crate::nnfac::{
    self, accelerated_hals, apply_sparsity, frobenius, nnls_fixed_dictionary_run, NmfConfig, NmfResult, Precompute,
};
use crate::signal::Spectrogram;
use crate::tensor_ops::{khatri_rao, unfold, Tensor3};
use crate::{Error, Result};

/// Per-channel spectrograms stacked along the third mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroTensor {
    tensor: Tensor3,
    pub hop_seconds: f64,
    pub freq_resolution_hz: f64,
}

impl SpectroTensor {
    pub fn new(tensor: Tensor3, hop_seconds: f64, freq_resolution_hz: f64) -> Result<Self> {
        if tensor.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if tensor.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("spectrogram tensor must be nonnegative".into()));
        }
        Ok(Self {
            tensor,
            hop_seconds,
            freq_resolution_hz,
        })
    }

    pub fn from_spectrograms(specs: &[Spectrogram]) -> Result<Self> {
        let first = specs
            .first()
            .ok_or_else(|| Error::ShapeMismatch("no channels".into()))?;
        let views: Vec<ArrayView2<'_, f64>> = specs.iter().map(|s| s.data.view()).collect();
        let tensor = Tensor3::from_slices(&views)
            .map_err(|_| Error::ShapeMismatch("channel spectrograms differ in shape".into()))?;
        Self::new(tensor, first.hop_seconds, first.freq_resolution_hz)
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    /// `(F, T, C)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.tensor.dims()
    }

    pub fn n_channels(&self) -> usize {
        self.dims().2
    }

    pub fn channel(&self, k: usize) -> ArrayView2<'_, f64> {
        self.tensor.slice(k)
    }

    pub fn channels(&self) -> Vec<ArrayView2<'_, f64>> {
        (0..self.n_channels()).map(|k| self.channel(k)).collect()
    }
}

// ---------------------------------------------------------------------------
// Simultaneous NMF

#[derive(Debug, Clone, PartialEq)]
pub struct SimultaneousResult {
    /// `(C·F) x R`.
    pub w_stacked: Array2<f64>,
    /// Per-channel `F x R` blocks of `w_stacked`.
    pub w_blocks: Vec<Array2<f64>>,
    /// Shared `R x T` activations.
    pub h: Array2<f64>,
    /// Factor each channel was divided by before stacking.
    pub channel_scales: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

/// Stacks the channels vertically and factorizes them with one `H`.
///
/// With `normalize`, every channel is divided by its Frobenius norm first.
/// With a stacked codebook (`(C·F) x R`) only `H` is estimated.
pub fn simultaneous_nmf(
    channels: &[ArrayView2<'_, f64>],
    cfg: &NmfConfig,
    normalize: bool,
    stacked_codebook: Option<&ArrayView2<'_, f64>>,
) -> Result<SimultaneousResult> {
    let first = channels
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no channels".into()))?;
    let (f, t) = first.dim();
    if channels.iter().any(|c| c.dim() != (f, t)) {
        return Err(Error::ShapeMismatch("channels differ in shape".into()));
    }
    let scales: Vec<f64> = channels
        .iter()
        .map(|c| {
            let n = frobenius(c);
            if normalize && n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let scaled: Vec<Array2<f64>> = channels.iter().zip(&scales).map(|(c, s)| c.mapv(|v| v / s)).collect();
    let views: Vec<ArrayView2<'_, f64>> = scaled.iter().map(|m| m.view()).collect();
    let stacked = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let res: NmfResult = match stacked_codebook {
        Some(w) => nnls_fixed_dictionary_run(&stacked.view(), w, cfg)?,
        None => nnfac::hals_nmf(&stacked.view(), cfg)?,
    };
    let w_blocks = (0..channels.len())
        .map(|c| res.w.slice(ndarray::s![c * f..(c + 1) * f, ..]).to_owned())
        .collect();
    Ok(SimultaneousResult {
        w_stacked: res.w,
        w_blocks,
        h: res.h,
        channel_scales: scales,
        objective_trace: res.objective_trace,
    })
}

// ---------------------------------------------------------------------------
// NTF

#[derive(Debug, Clone, PartialEq)]
pub struct NtfResult {
    /// `F x R` spectral templates.
    pub w: Array2<f64>,
    /// `T x R` activations.
    pub h: Array2<f64>,
    /// `C x R` per-channel gains.
    pub q: Array2<f64>,
    /// `‖𝒳 − [[W, H, Q]]‖_F` after every outer iteration.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NtfOptions {
    /// Holds `W` at this codebook (semi-supervised mode).
    pub fixed_w: Option<Array2<f64>>,
    /// Starting `Q`; defaults to each channel's share of the total
    /// Frobenius norm, repeated over components.
    pub initial_q: Option<Array2<f64>>,
    pub fix_q: bool,
}

/// Current factors, handed to an [`ntf_observed`] callback after every
/// outer iteration.
pub struct NtfState<'a> {
    pub iteration: usize,
    pub w: &'a Array2<f64>,
    pub h: &'a Array2<f64>,
    pub q: &'a Array2<f64>,
}

pub fn ntf(t: &SpectroTensor, cfg: &NmfConfig, opts: &NtfOptions) -> Result<NtfResult> {
    ntf_observed(t, cfg, opts, |_| {})
}

/// Nonnegative CP by cyclic accelerated HALS on the three unfoldings:
/// `W` against `𝒳(0) ≈ W (H ⊙ Q)ᵀ`, `H` against `𝒳(1) ≈ H (W ⊙ Q)ᵀ` and
/// `Q` against `𝒳(2) ≈ Q (W ⊙ H)ᵀ`. Free `W` and `Q` columns are
/// ℓ2-normalized into `H` after each iteration.
pub fn ntf_observed(
    t: &SpectroTensor,
    cfg: &NmfConfig,
    opts: &NtfOptions,
    mut observer: impl FnMut(&NtfState<'_>),
) -> Result<NtfResult> {
    cfg.validate()?;
    let (f, n_t, c) = t.dims();
    let r = cfg.rank;
    let x0 = unfold(t.tensor(), 0)?;
    let x1 = unfold(t.tensor(), 1)?;
    let x2 = unfold(t.tensor(), 2)?;

    let channel_sum = t.tensor().data().sum_axis(Axis(2));
    let (mut w, mut h) = match &opts.fixed_w {
        Some(w) => {
            if w.dim() != (f, r) {
                return Err(Error::ShapeMismatch(format!(
                    "codebook is {:?}, expected {f}x{r}",
                    w.dim()
                )));
            }
            check_nonneg(w, "codebook")?;
            (w.clone(), Array2::zeros((n_t, r)))
        }
        None => {
            let (w, h) = nnfac::initialize(&channel_sum.view(), r, cfg.init)?;
            (w, h.t().to_owned())
        }
    };
    let mut q = match &opts.initial_q {
        Some(q) => {
            if q.dim() != (c, r) {
                return Err(Error::ShapeMismatch(format!(
                    "initial Q is {:?}, expected {c}x{r}",
                    q.dim()
                )));
            }
            check_nonneg(q, "initial Q")?;
            q.clone()
        }
        None => {
            let norms: Vec<f64> = t.channels().iter().map(frobenius).collect();
            let total: f64 = norms.iter().sum();
            Array2::from_shape_fn(
                (c, r),
                |(k, _)| if total > 0.0 { norms[k] / total } else { 1.0 / c as f64 },
            )
        }
    };
    let update_w = opts.fixed_w.is_none();
    let update_q = !opts.fix_q;

    let mut trace: Vec<f64> = Vec::new();
    for iteration in 0..cfg.max_outer_iters {
        if update_w {
            let ((a, b), pre) = Precompute::measure(cp_flops(f, n_t * c, r), || {
                (x0.dot(&khatri_rao_ok(&h, &q)), gram(&h) * gram(&q))
            });
            accelerated_hals(&mut w, &a.view(), &b.view(), &cfg.accel(cfg.l1_for_w()), pre);
            if cfg.sparsity_target.includes_w() {
                for mut col in w.columns_mut() {
                    apply_sparsity(&mut col, cfg.sparsity);
                }
            }
        }
        let ((a, b), pre) = Precompute::measure(cp_flops(n_t, f * c, r), || {
            (x1.dot(&khatri_rao_ok(&w, &q)), gram(&w) * gram(&q))
        });
        accelerated_hals(&mut h, &a.view(), &b.view(), &cfg.accel(cfg.l1_for_h()), pre);
        if cfg.sparsity_target.includes_h() {
            for mut row in h.rows_mut() {
                apply_sparsity(&mut row, cfg.sparsity);
            }
        }
        if update_q {
            let ((a, b), pre) = Precompute::measure(cp_flops(c, f * n_t, r), || {
                (x2.dot(&khatri_rao_ok(&w, &h)), gram(&w) * gram(&h))
            });
            accelerated_hals(&mut q, &a.view(), &b.view(), &cfg.accel(0.0), pre);
        }
        if update_w {
            normalize_into(&mut w, &mut h);
        }
        if update_q {
            normalize_into(&mut q, &mut h);
        }

        let err = frobenius(&(&x0 - &w.dot(&khatri_rao_ok(&h, &q).t())).view());
        observer(&NtfState {
            iteration,
            w: &w,
            h: &h,
            q: &q,
        });
        let prev = trace.last().copied();
        trace.push(err);
        if err == 0.0 {
            break;
        }
        if let Some(prev) = prev {
            let (p2, e2) = (prev * prev, err * err);
            let change = if cfg.is_monotone() { p2 - e2 } else { (p2 - e2).abs() };
            if change <= cfg.outer_tol * p2 {
                break;
            }
        }
    }
    Ok(NtfResult {
        w,
        h,
        q,
        objective_trace: trace,
    })
}

fn cp_flops(rows: usize, cols: usize, r: usize) -> f64 {
    (2 * rows * cols * r + cols * r + 2 * cols * r * r) as f64
}

fn khatri_rao_ok(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    khatri_rao(&a.view(), &b.view()).expect("factors share the rank")
}

fn gram(m: &Array2<f64>) -> Array2<f64> {
    m.t().dot(m)
}

fn check_nonneg(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!("{what} must be finite and nonnegative")));
    }
    Ok(())
}

/// ℓ2-normalizes the columns of `m`, multiplying the matching columns of
/// `target` by the norms.
fn normalize_into(m: &mut Array2<f64>, target: &mut Array2<f64>) {
    for (mut col, mut tcol) in m.columns_mut().into_iter().zip(target.columns_mut()) {
        let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            col.mapv_inplace(|v| v / n);
            tcol.mapv_inplace(|v| v * n);
        }
    }
}

// ---------------------------------------------------------------------------
// Flexible PARAFAC2

/// Schedule of the coupling weight μ shared by all channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub enabled: bool,
    /// Starting μ; `None` derives it from a warm-up iteration as
    /// `0.01 · fit / coupling`.
    pub mu0: Option<f64>,
    pub growth: f64,
    /// Cap as a multiple of μ0.
    pub mu_max_factor: f64,
}

impl Default for Coupling {
    fn default() -> Self {
        Self {
            enabled: true,
            mu0: None,
            growth: 1.05,
            mu_max_factor: 1e4,
        }
    }
}

impl Coupling {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parafac2Result {
    /// Per-channel `F x R` templates.
    pub w: Vec<Array2<f64>>,
    /// Per-channel diagonals of `D_k`.
    pub d: Vec<Array1<f64>>,
    /// Shared `R x T` activations.
    pub h: Array2<f64>,
    /// Per-channel `F x R` orthonormal coupling bases.
    pub p: Vec<Array2<f64>>,
    /// `R x R`.
    pub w_star: Array2<f64>,
    /// `Σ_k ‖X_k − W_k D_k H‖² + μ ‖W_k − P_k W*‖²` per outer iteration.
    pub penalized_objective_trace: Vec<f64>,
    /// `Σ_k ‖X_k − W_k D_k H‖²` per outer iteration.
    pub fit_trace: Vec<f64>,
    pub mu_trace: Vec<f64>,
}

impl Parafac2Result {
    pub fn d_matrix(&self, k: usize) -> Array2<f64> {
        Array2::from_diag(&self.d[k])
    }

    /// `W_k D_k`.
    pub fn scaled_templates(&self, k: usize) -> Array2<f64> {
        &self.w[k] * &self.d[k]
    }

    /// `‖X_k − W_k D_k H‖_F / ‖X_k‖_F`.
    pub fn relative_fit(&self, x_k: &ArrayView2<'_, f64>, k: usize) -> f64 {
        let res = x_k - &self.scaled_templates(k).dot(&self.h);
        frobenius(&res.view()) / frobenius(x_k)
    }

    /// `‖W_k − P_k W*‖_F / ‖W_k‖_F`.
    pub fn relative_coupling(&self, k: usize) -> f64 {
        let res = &self.w[k] - &self.p[k].dot(&self.w_star);
        frobenius(&res.view()) / frobenius(&self.w[k].view())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parafac2Options {
    /// Starting per-channel templates, e.g. per-channel codebooks.
    pub initial_w: Option<Vec<Array2<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parafac2Stage {
    Procrustes,
    W,
    D,
    H,
    Normalized,
}

/// State after each sub-step of an outer iteration.
pub struct Parafac2Snapshot<'a> {
    pub iteration: usize,
    pub stage: Parafac2Stage,
    pub mu: f64,
    pub penalized_objective: f64,
    pub p: &'a [Array2<f64>],
}

pub fn flexible_parafac2(
    t: &SpectroTensor,
    cfg: &NmfConfig,
    coupling: &Coupling,
    opts: &Parafac2Options,
) -> Result<Parafac2Result> {
    flexible_parafac2_observed(t, cfg, coupling, opts, |_| {})
}

/// Flexible-coupling PARAFAC2: `X_k ≈ W_k D_k H` with `W_k` pulled towards
/// `P_k W*` by the penalty `μ ‖W_k − P_k W*‖²`.
///
/// Each outer iteration updates, in order, `W*`, every `P_k` (orthogonal
/// Procrustes), every `W_k` (penalized HALS), every `D_k` (NNLS on the
/// diagonal), and `H` (HALS with channel-summed Gram matrices). Then the
/// `W_k` columns are ℓ2-normalized into `D_k` and the `D_k` entries of each
/// component are normalized across channels into the rows of `H`.
pub fn flexible_parafac2_observed(
    t: &SpectroTensor,
    cfg: &NmfConfig,
    coupling: &Coupling,
    opts: &Parafac2Options,
    mut observer: impl FnMut(&Parafac2Snapshot<'_>),
) -> Result<Parafac2Result> {
    cfg.validate()?;
    let (f, n_t, c) = t.dims();
    let r = cfg.rank;
    if c < 2 {
        return Err(Error::InvalidArgument("PARAFAC2 needs at least two channels".into()));
    }
    if r > f {
        return Err(Error::InvalidArgument(format!(
            "rank {r} exceeds {f} frequency bins; orthonormal P_k impossible"
        )));
    }
    if !(coupling.growth >= 1.0 && coupling.mu_max_factor >= 1.0) {
        return Err(Error::InvalidArgument("coupling growth and cap must be >= 1".into()));
    }
    let xs: Vec<ArrayView2<'_, f64>> = t.channels();

    let mut w: Vec<Array2<f64>> = match &opts.initial_w {
        Some(ws) => {
            if ws.len() != c || ws.iter().any(|m| m.dim() != (f, r)) {
                return Err(Error::ShapeMismatch(format!(
                    "expected {c} initial templates of {f}x{r}"
                )));
            }
            for m in ws {
                check_nonneg(m, "initial templates")?;
            }
            ws.clone()
        }
        None => xs
            .iter()
            .map(|x| nnfac::initialize(x, r, cfg.init).map(|(w, _)| w))
            .collect::<Result<_>>()?,
    };
    let mut h = {
        let init_cfg = NmfConfig {
            sparsity: nnfac::Sparsity::None,
            ..cfg.clone()
        };
        nnls_fixed_dictionary_run(&xs[0], &w[0].view(), &init_cfg)?.h
    };
    let mut d: Vec<Array1<f64>> = vec![Array1::ones(r); c];
    let mut p: Vec<Array2<f64>> = w.iter().map(|wk| linalg::procrustes(&wk.view())).collect();
    let mut w_star = Array2::zeros((r, r));

    let mut mu = 0.0;
    let mut mu_cap = 0.0;
    let mut penalized_trace = Vec::new();
    let mut fit_trace = Vec::new();
    let mut mu_trace = Vec::new();

    for iteration in 0..cfg.max_outer_iters {
        // W*: weighted mean of P_kᵀ W_k; the weights are equal since μ is shared
        w_star.fill(0.0);
        for (pk, wk) in p.iter().zip(&w) {
            w_star += &pk.t().dot(wk);
        }
        w_star /= c as f64;
        for (pk, wk) in p.iter_mut().zip(&w) {
            *pk = linalg::procrustes(&wk.dot(&w_star.t()).view());
        }
        let report = |stage, w: &[Array2<f64>], d: &[Array1<f64>], h: &Array2<f64>, p: &[Array2<f64>]| {
            let (fit, coup) = objective_parts(&xs, w, d, h, p, &w_star);
            (stage, fit + mu * coup)
        };
        let (stage, obj) = report(Parafac2Stage::Procrustes, &w, &d, &h, &p);
        observer(&Parafac2Snapshot {
            iteration,
            stage,
            mu,
            penalized_objective: obj,
            p: &p,
        });

        for k in 0..c {
            let g = (&h * &d[k].view().insert_axis(Axis(1))).t().to_owned();
            let m = p[k].dot(&w_star);
            let ((a, b), pre) = Precompute::measure(cp_flops(f, n_t, r), || {
                let mut a = xs[k].dot(&g);
                let mut b = g.t().dot(&g);
                if mu > 0.0 {
                    a.scaled_add(mu, &m);
                    for i in 0..r {
                        b[[i, i]] += mu;
                    }
                }
                (a, b)
            });
            accelerated_hals(&mut w[k], &a.view(), &b.view(), &cfg.accel(0.0), pre);
        }
        let (stage, obj) = report(Parafac2Stage::W, &w, &d, &h, &p);
        observer(&Parafac2Snapshot {
            iteration,
            stage,
            mu,
            penalized_objective: obj,
            p: &p,
        });

        for k in 0..c {
            d[k] = diagonal_nnls(&xs[k], &w[k].view(), &h.view(), Some(&d[k]))?;
        }
        let (stage, obj) = report(Parafac2Stage::D, &w, &d, &h, &p);
        observer(&Parafac2Snapshot {
            iteration,
            stage,
            mu,
            penalized_objective: obj,
            p: &p,
        });

        {
            let gs: Vec<Array2<f64>> = (0..c).map(|k| &w[k] * &d[k]).collect();
            let ((a, b), pre) = Precompute::measure(c as f64 * cp_flops(n_t, f, r), || {
                let mut a = Array2::zeros((n_t, r));
                let mut b = Array2::zeros((r, r));
                for (x, g) in xs.iter().zip(&gs) {
                    a += &x.t().dot(g);
                    b += &g.t().dot(g);
                }
                (a, b)
            });
            let mut ht = h.t().to_owned();
            accelerated_hals(&mut ht, &a.view(), &b.view(), &cfg.accel(cfg.l1_for_h()), pre);
            if cfg.sparsity_target.includes_h() {
                for mut row in ht.rows_mut() {
                    apply_sparsity(&mut row, cfg.sparsity);
                }
            }
            h = ht.t().to_owned();
        }
        let (stage, obj) = report(Parafac2Stage::H, &w, &d, &h, &p);
        observer(&Parafac2Snapshot {
            iteration,
            stage,
            mu,
            penalized_objective: obj,
            p: &p,
        });

        normalize_parafac2(&mut w, &mut d, &mut h);
        let (fit, coup) = objective_parts(&xs, &w, &d, &h, &p, &w_star);
        observer(&Parafac2Snapshot {
            iteration,
            stage: Parafac2Stage::Normalized,
            mu,
            penalized_objective: fit + mu * coup,
            p: &p,
        });
        let penalized = fit + mu * coup;
        let prev = penalized_trace.last().copied();
        penalized_trace.push(penalized);
        fit_trace.push(fit);
        mu_trace.push(mu);

        // μ schedule: set after the uncoupled first iteration, then grow to the cap
        if coupling.enabled {
            if iteration == 0 {
                let total: f64 = xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum();
                let mu0 = coupling.mu0.unwrap_or_else(|| {
                    let auto = if coup > 0.0 { 0.01 * fit / coup } else { 0.0 };
                    auto.max(1e-6 * total)
                });
                mu = mu0;
                mu_cap = mu0 * coupling.mu_max_factor;
                continue;
            }
            let at_cap = mu >= mu_cap;
            mu = (mu * coupling.growth).min(mu_cap);
            if !at_cap {
                continue;
            }
        }
        if let Some(prev) = prev {
            if penalized == 0.0 || (prev - penalized).abs() <= cfg.outer_tol * prev {
                break;
            }
        }
    }

    Ok(Parafac2Result {
        w,
        d,
        h,
        p,
        w_star,
        penalized_objective_trace: penalized_trace,
        fit_trace,
        mu_trace,
    })
}

/// `(Σ_k ‖X_k − W_k D_k H‖², Σ_k ‖W_k − P_k W*‖²)`.
fn objective_parts(
    xs: &[ArrayView2<'_, f64>],
    w: &[Array2<f64>],
    d: &[Array1<f64>],
    h: &Array2<f64>,
    p: &[Array2<f64>],
    w_star: &Array2<f64>,
) -> (f64, f64) {
    let mut fit = 0.0;
    let mut coup = 0.0;
    for k in 0..xs.len() {
        let res = &xs[k] - &(&w[k] * &d[k]).dot(h);
        fit += res.iter().map(|v| v * v).sum::<f64>();
        let cres = &w[k] - &p[k].dot(w_star);
        coup += cres.iter().map(|v| v * v).sum::<f64>();
    }
    (fit, coup)
}

fn normalize_parafac2(w: &mut [Array2<f64>], d: &mut [Array1<f64>], h: &mut Array2<f64>) {
    for (wk, dk) in w.iter_mut().zip(d.iter_mut()) {
        for (mut col, dv) in wk.columns_mut().into_iter().zip(dk.iter_mut()) {
            let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                col.mapv_inplace(|v| v / n);
                *dv *= n;
            }
        }
    }
    for r in 0..h.nrows() {
        let s = d.iter().map(|dk| dk[r] * dk[r]).sum::<f64>().sqrt();
        if s > 0.0 {
            for dk in d.iter_mut() {
                dk[r] /= s;
            }
            h.row_mut(r).mapv_inplace(|v| v * s);
        }
    }
}

const DIAG_NNLS_MAX_SWEEPS: usize = 10_000;

/// Nonnegative `d` minimizing `‖X − W diag(d) H‖_F`, by exact coordinate
/// descent on the normal equations `a = diag(Wᵀ X Hᵀ)`,
/// `B = (WᵀW) ∘ (HHᵀ)`, run to convergence.
pub fn diagonal_nnls(
    x: &ArrayView2<'_, f64>,
    w: &ArrayView2<'_, f64>,
    h: &ArrayView2<'_, f64>,
    start: Option<&Array1<f64>>,
) -> Result<Array1<f64>> {
    let r = w.ncols();
    if h.nrows() != r || x.dim() != (w.nrows(), h.ncols()) {
        return Err(Error::ShapeMismatch(format!(
            "X {:?}, W {:?}, H {:?} do not compose",
            x.dim(),
            w.dim(),
            h.dim()
        )));
    }
    let wx = w.t().dot(x);
    let a = Array1::from_shape_fn(r, |i| wx.row(i).dot(&h.row(i)));
    let b = w.t().dot(w) * h.dot(&h.t());
    let mut d = Array2::from_shape_fn((1, r), |(_, i)| start.map_or(0.0, |s| s[i].max(0.0)));
    let a_row = a.insert_axis(Axis(0));
    let scale = a_row.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for _ in 0..DIAG_NNLS_MAX_SWEEPS {
        let change = nnfac::hals_sweep(&mut d, &a_row.view(), &b.view(), 0.0);
        let size = d.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        if change <= 1e-30 * size || change == 0.0 || (change.sqrt() < 1e-16 * scale) {
            break;
        }
    }
    Ok(d.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnfac::RhoMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_nonneg(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>())
    }

    fn cfg(rank: usize) -> NmfConfig {
        NmfConfig {
            rho: RhoMode::OpCount,
            ..NmfConfig::new(rank)
        }
    }

    #[test]
    fn spectro_tensor_validates() {
        let t = Tensor3::new(ndarray::Array3::from_elem((2, 2, 2), -1.0)).unwrap();
        assert!(SpectroTensor::new(t, 0.1, 1.0).is_err());
    }

    #[test]
    fn simultaneous_identical_channels_give_equal_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_nonneg(12, 9, &mut rng).dot(&rand_nonneg(9, 15, &mut rng));
        let res = simultaneous_nmf(&[x.view(), x.view()], &cfg(3), true, None).unwrap();
        let diff = (&res.w_blocks[0] - &res.w_blocks[1])
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-6, "{diff}");
        let half = x.mapv(|v| 0.5 * v);
        let res = simultaneous_nmf(&[x.view(), half.view()], &cfg(3), true, None).unwrap();
        let diff = (&res.w_blocks[0] - &res.w_blocks[1])
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-6, "{diff}");
        assert!(simultaneous_nmf(&[x.view(), x.slice(ndarray::s![..5, ..]).view()], &cfg(3), true, None).is_err());
    }

    #[test]
    fn diagonal_nnls_matches_unconstrained_when_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = rand_nonneg(10, 3, &mut rng);
        let h = rand_nonneg(3, 8, &mut rng);
        let d_true = Array1::from(vec![0.5, 2.0, 1.25]);
        let x = (&w * &d_true).dot(&h);
        let d = diagonal_nnls(&x.view(), &w.view(), &h.view(), None).unwrap();
        for (a, b) in d.iter().zip(d_true.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn parafac2_rejects_bad_shapes() {
        let t = Tensor3::zeros((2, 5, 2)).unwrap();
        let st = SpectroTensor::new(t, 0.1, 1.0).unwrap();
        assert!(flexible_parafac2(&st, &cfg(3), &Coupling::default(), &Default::default()).is_err());
        let t1 = Tensor3::zeros((4, 5, 1)).unwrap();
        let st1 = SpectroTensor::new(t1, 0.1, 1.0).unwrap();
        assert!(flexible_parafac2(&st1, &cfg(2), &Coupling::default(), &Default::default()).is_err());
    }
}
