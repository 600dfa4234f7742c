//! Online learning: per-basket gradient of the approximate objective, the
//! update step, the full-data regularized log-likelihood evaluator, and an
//! exact enumeration sampler for desk-scale ground truth.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{f_det, logdet_normalizer, logdet_normalizer_factored};
use crate::linalg::det_clamped;
use crate::model::{DetCounter, NdppModel, Subset};

/// One observed item subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasketEvent {
    pub items: Subset,
}

impl BasketEvent {
    pub fn new(items: Subset) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Config("baskets must be nonempty".into()));
        }
        Ok(BasketEvent { items })
    }
}

/// Per-item occurrence counts over the training stream, used by the 1/mu_i
/// weights of the full-data regularizer.
#[derive(Clone, Debug, Default)]
pub struct OccurrenceCounts {
    pub mu: Vec<u64>,
}

impl OccurrenceCounts {
    pub fn new(n: usize) -> Self {
        OccurrenceCounts { mu: vec![0; n] }
    }

    pub fn observe(&mut self, basket: &BasketEvent) {
        for &i in basket.items.indices() {
            if i >= self.mu.len() {
                self.mu.resize(i + 1, 0);
            }
            self.mu[i] += 1;
        }
    }

    pub fn from_baskets(n: usize, baskets: &[BasketEvent]) -> Self {
        let mut mu = OccurrenceCounts::new(n);
        for b in baskets {
            mu.observe(b);
        }
        mu
    }
}

/// Hyperparameters for online learning.
#[derive(Clone, Debug)]
pub struct LearningConfig {
    pub n: usize,
    pub d: usize,
    pub eta: f64,
    pub reg_alpha: f64,
    pub reg_beta: f64,
    pub init_scale: f64,
    pub c_block_min: f64,
    pub c_block_max: f64,
    pub seed: u64,
    /// Scale the step size by 1/sqrt(t).
    pub decay: bool,
    /// Append freshly initialized columns when an unseen item id arrives
    /// instead of rejecting it.
    pub lazy_growth: bool,
}

impl LearningConfig {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        let cfg = LearningConfig {
            n,
            d,
            eta: 1e-3,
            reg_alpha: 0.01,
            reg_beta: 0.01,
            init_scale: 1.0,
            c_block_min: 0.5,
            c_block_max: 1.5,
            seed: 0,
            decay: false,
            lazy_growth: false,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embedding dimension d must be positive and even, got {}",
                self.d
            )));
        }
        for (name, x) in [
            ("eta", self.eta),
            ("reg_alpha", self.reg_alpha),
            ("reg_beta", self.reg_beta),
            ("init_scale", self.init_scale),
        ] {
            if x.is_nan() || x <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {x}")));
            }
        }
        Ok(())
    }
}

/// Gradient blocks shaped like the variables they update: d x |S_t| for the
/// column blocks, d x d for C.
#[derive(Clone, Debug)]
pub struct GradientTriple {
    pub d_v: DMatrix<f64>,
    pub d_b: DMatrix<f64>,
    pub d_c: DMatrix<f64>,
}

impl GradientTriple {
    pub fn zeros(d: usize, s: usize) -> Self {
        GradientTriple {
            d_v: DMatrix::zeros(d, s),
            d_b: DMatrix::zeros(d, s),
            d_c: DMatrix::zeros(d, d),
        }
    }

    fn sub(&self, other: &GradientTriple) -> GradientTriple {
        GradientTriple {
            d_v: &self.d_v - &other.d_v,
            d_b: &self.d_b - &other.d_b,
            d_c: &self.d_c - &other.d_c,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_v.iter().all(|x| x.is_finite())
            && self.d_b.iter().all(|x| x.is_finite())
            && self.d_c.iter().all(|x| x.is_finite())
    }
}

/// Measures the f64 cells allocated for intermediates in the learning step,
/// so the constant-space contract can be checked by tests.
pub mod alloc_meter {
    use std::cell::Cell;

    thread_local! {
        static CELLS: Cell<usize> = const { Cell::new(0) };
    }

    pub fn reset() {
        CELLS.with(|c| c.set(0));
    }

    pub fn note(cells: usize) {
        CELLS.with(|c| c.set(c.get() + cells));
    }

    pub fn total() -> usize {
        CELLS.with(|c| c.get())
    }
}

/// Gradient of log det(M) on a possibly nonsymmetric M = A + K with A = V^T V
/// symmetric and K = B^T C B skew. Differentiating tr(M^{-1} dM) gives
///
///   dV = V (M^{-1} + M^{-T}),  dB = C B (M^{-1} - M^{-T}),  dC = B M^{-T} B^T.
///
/// The symmetric-M shortcuts (2 V M^{-1} and friends) do not hold here; these
/// are the forms that pass finite-difference checks.
fn logdet_gradient(
    v_s: &DMatrix<f64>,
    b_s: &DMatrix<f64>,
    c: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<GradientTriple> {
    let s = v_s.ncols();
    let m_inv = m.clone().try_inverse().ok_or(Error::SingularSubset { size: s })?;
    alloc_meter::note(m_inv.len());
    let m_inv_t = m_inv.transpose();
    let sym = &m_inv + &m_inv_t;
    let dif = &m_inv - &m_inv_t;
    alloc_meter::note(3 * m_inv.len());
    let d_v = v_s * &sym;
    let d_b = c * b_s * &dif;
    let d_c = b_s * &m_inv_t * b_s.transpose();
    alloc_meter::note(d_v.len() + d_b.len() + d_c.len());
    Ok(GradientTriple { d_v, d_b, d_c })
}

fn kernel_matrix(v_s: &DMatrix<f64>, b_s: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let m = v_s.tr_mul(v_s) + b_s.tr_mul(&(c * b_s));
    alloc_meter::note(m.len());
    m
}

/// Gradient of the per-basket likelihood term log det(V_S^T V_S + B_S^T C B_S).
pub fn grad_first_term(
    v_s: &DMatrix<f64>,
    b_s: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<GradientTriple> {
    let m = kernel_matrix(v_s, b_s, c);
    logdet_gradient(v_s, b_s, c, &m)
}

/// Gradient of the normalizer term Z = log det(V_S^T V_S + B_S^T C B_S + I).
pub fn grad_z(v_s: &DMatrix<f64>, b_s: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<GradientTriple> {
    if det_clamped(c) == 0.0 {
        return Err(Error::SingularC { det: 0.0 });
    }
    let s = v_s.ncols();
    let n_mat = kernel_matrix(v_s, b_s, c) + DMatrix::identity(s, s);
    logdet_gradient(v_s, b_s, c, &n_mat)
}

/// Gradient of the per-step regularizer: (2 alpha V_S, 2 beta B_S, 0).
pub fn grad_regularizer(
    v_s: &DMatrix<f64>,
    b_s: &DMatrix<f64>,
    reg_alpha: f64,
    reg_beta: f64,
) -> GradientTriple {
    GradientTriple {
        d_v: v_s * (2.0 * reg_alpha),
        d_b: b_s * (2.0 * reg_beta),
        d_c: DMatrix::zeros(v_s.nrows(), v_s.nrows()),
    }
}

/// Ascent gradient of the per-step objective psi_t on the basket's column
/// blocks: first term minus normalizer minus regularizer.
pub fn psi_gradient(
    model: &NdppModel,
    basket: &Subset,
    cfg: &LearningConfig,
) -> Result<GradientTriple> {
    let (v_s, b_s) = model.subset_columns(basket);
    psi_gradient_cols(&v_s, &b_s, model.c(), cfg.reg_alpha, cfg.reg_beta)
}

/// Same as [`psi_gradient`] on explicit column blocks.
pub fn psi_gradient_cols(
    v_s: &DMatrix<f64>,
    b_s: &DMatrix<f64>,
    c: &DMatrix<f64>,
    reg_alpha: f64,
    reg_beta: f64,
) -> Result<GradientTriple> {
    let first = grad_first_term(v_s, b_s, c)?;
    let z = grad_z(v_s, b_s, c)?;
    let reg = grad_regularizer(v_s, b_s, reg_alpha, reg_beta);
    Ok(first.sub(&z).sub(&reg))
}

/// Value of psi_t = log det(M) - Z - R on explicit column blocks. The
/// normalizer is evaluated through the d-scale factorization. Errors when the
/// basket kernel is singular (log of zero).
pub fn psi_value(
    v_s: &DMatrix<f64>,
    b_s: &DMatrix<f64>,
    c: &DMatrix<f64>,
    reg_alpha: f64,
    reg_beta: f64,
) -> Result<f64> {
    let m = kernel_matrix(v_s, b_s, c);
    let det_m = det_clamped(&m);
    if det_m <= 0.0 {
        return Err(Error::SingularSubset { size: v_s.ncols() });
    }
    let z = logdet_normalizer_factored(v_s, b_s, c)?;
    let r = reg_alpha * v_s.iter().map(|x| x * x).sum::<f64>()
        + reg_beta * b_s.iter().map(|x| x * x).sum::<f64>();
    Ok(det_m.ln() - z - r)
}

/// Outcome of the C part of one update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CUpdateStatus {
    Applied,
    /// The C step was rolled back because it made C singular; the V and B
    /// column updates were kept.
    RolledBack,
}

/// Applies one ascent step: the basket's columns of V and B move by
/// eta * gradient, C moves and is then projected back to skew-symmetric.
/// Columns outside the basket are untouched.
pub fn apply_update(
    model: &mut NdppModel,
    basket: &Subset,
    grad: &GradientTriple,
    eta: f64,
) -> Result<CUpdateStatus> {
    let d = model.d();
    if grad.d_v.nrows() != d
        || grad.d_v.ncols() != basket.len()
        || grad.d_b.shape() != grad.d_v.shape()
        || grad.d_c.shape() != (d, d)
    {
        return Err(Error::Shape("gradient shapes do not match the basket".into()));
    }
    model.add_to_columns(basket, &grad.d_v, &grad.d_b, eta);

    let c_before = model.c().clone();
    let stepped = &c_before + &grad.d_c * eta;
    let projected = (&stepped - stepped.transpose()) * 0.5;
    if det_clamped(&projected) == 0.0 {
        // keep the V, B updates, drop the C step
        return Ok(CUpdateStatus::RolledBack);
    }
    *model.c_mut() = projected;
    Ok(CUpdateStatus::Applied)
}

/// One row of the learning trace.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnRow {
    pub step: u64,
    pub basket_size: usize,
    /// psi_t evaluated before the update; NaN is never stored (skipped
    /// baskets carry 0.0 with the skip flag set).
    pub psi: f64,
    pub skipped: bool,
}

/// Trace of one learning pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearnTrace {
    pub rows: Vec<LearnRow>,
    pub skipped_count: u64,
    pub c_rollbacks: u64,
}

/// Initializes (V, B, C): Gaussian columns with standard deviation
/// init_scale / sqrt(d), and C block-diagonal with 2x2 skew blocks
/// [[0, lambda], [-lambda, 0]], lambda uniform in the configured range.
/// Even d keeps C invertible.
pub fn init_model(cfg: &LearningConfig, rng: &mut impl Rng) -> Result<NdppModel> {
    cfg.check()?;
    let sd = cfg.init_scale / (cfg.d as f64).sqrt();
    let gauss = |rng: &mut dyn rand::RngCore| -> f64 {
        // Box-Muller keeps us off distribution-crate version churn
        let u1: f64 = loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        };
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let v = DMatrix::from_fn(cfg.d, cfg.n, |_, _| sd * gauss(rng));
    let b = DMatrix::from_fn(cfg.d, cfg.n, |_, _| sd * gauss(rng));
    let mut c = DMatrix::zeros(cfg.d, cfg.d);
    for blk in 0..cfg.d / 2 {
        let lambda = rng.gen_range(cfg.c_block_min..=cfg.c_block_max);
        c[(2 * blk, 2 * blk + 1)] = lambda;
        c[(2 * blk + 1, 2 * blk)] = -lambda;
    }
    NdppModel::new(v, b, c)
}

/// Single-pass online learning: initializes the model from the config seed,
/// then applies one gradient step per arriving basket and discards it.
/// Baskets with a singular kernel are skipped and counted.
pub fn online_learn<I>(stream: I, cfg: &LearningConfig) -> Result<(NdppModel, LearnTrace)>
where
    I: IntoIterator<Item = Result<BasketEvent>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init_model(cfg, &mut rng)?;
    let mut trace = LearnTrace::default();
    let mut step: u64 = 0;
    let sd = cfg.init_scale / (cfg.d as f64).sqrt();

    for basket in stream {
        let basket = basket?;
        step += 1;
        if let Some(max) = basket.items.max_index() {
            if max >= model.n() {
                if cfg.lazy_growth {
                    let extra = max + 1 - model.n();
                    model.grow(extra, || {
                        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                        let u2: f64 = rng.gen();
                        sd * (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos()
                    });
                } else {
                    return Err(Error::Config(format!(
                        "basket at step {step} references item {max} >= n = {}",
                        model.n()
                    )));
                }
            }
        }
        let (v_s, b_s) = model.subset_columns(&basket.items);
        let eta = if cfg.decay {
            cfg.eta / (step as f64).sqrt()
        } else {
            cfg.eta
        };
        match psi_value(&v_s, &b_s, model.c(), cfg.reg_alpha, cfg.reg_beta) {
            Ok(psi) => {
                let grad = match psi_gradient_cols(
                    &v_s,
                    &b_s,
                    model.c(),
                    cfg.reg_alpha,
                    cfg.reg_beta,
                ) {
                    Ok(g) if g.is_finite() => g,
                    _ => {
                        trace.skipped_count += 1;
                        trace.rows.push(LearnRow {
                            step,
                            basket_size: basket.items.len(),
                            psi: 0.0,
                            skipped: true,
                        });
                        continue;
                    }
                };
                if apply_update(&mut model, &basket.items, &grad, eta)?
                    == CUpdateStatus::RolledBack
                {
                    trace.c_rollbacks += 1;
                }
                trace.rows.push(LearnRow {
                    step,
                    basket_size: basket.items.len(),
                    psi,
                    skipped: false,
                });
            }
            Err(_) => {
                trace.skipped_count += 1;
                trace.rows.push(LearnRow {
                    step,
                    basket_size: basket.items.len(),
                    psi: 0.0,
                    skipped: true,
                });
            }
        }
    }
    Ok((model, trace))
}

/// Full-data regularized log-likelihood report.
#[derive(Clone, Debug)]
pub struct LogLikelihood {
    /// Mean per-basket log det minus normalizer minus weighted regularizer.
    pub regularized: f64,
    /// Same without the regularizer.
    pub unregularized: f64,
    /// Baskets whose kernel determinant was zero; excluded from the mean.
    pub singular_count: u64,
}

/// Regularized log-likelihood of a dataset under the model:
/// (1/t) sum_i log det(M_i) - log det(V^T V + B^T C B + I) - R(V, B) with
/// R weighted by 1/mu_i. Items never observed (mu_i = 0) contribute no
/// regularization.
pub fn full_log_likelihood(
    model: &NdppModel,
    baskets: &[BasketEvent],
    mu: &OccurrenceCounts,
    reg_alpha: f64,
    reg_beta: f64,
) -> Result<LogLikelihood> {
    if baskets.is_empty() {
        return Err(Error::Config("no baskets".into()));
    }
    let mut counter = DetCounter::new();
    let mut sum = 0.0;
    let mut singular = 0u64;
    let mut used = 0u64;
    for b in baskets {
        let det = f_det(model, &b.items, &mut counter)?;
        if det <= 0.0 {
            singular += 1;
        } else {
            sum += det.ln();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Config("every basket has a singular kernel".into()));
    }
    let mean_first = sum / used as f64;
    let z = logdet_normalizer(model)?;
    let mut r = 0.0;
    for i in 0..model.n() {
        let count = mu.mu.get(i).copied().unwrap_or(0);
        if count == 0 {
            continue;
        }
        let w = 1.0 / count as f64;
        let (v, b) = model.column(i);
        r += w * (reg_alpha * v.norm_squared() + reg_beta * b.norm_squared());
    }
    Ok(LogLikelihood {
        regularized: mean_first - z - r,
        unregularized: mean_first - z,
        singular_count: singular,
    })
}

/// Exact subset distribution of a small NDPP: Pr[S] = det(L_S) / det(L + I),
/// computed by enumerating all 2^n subsets. Negative determinants are
/// clamped at 0 before normalization.
pub struct ExactDistribution {
    /// (subset bitmask, cumulative probability)
    cdf: Vec<(u32, f64)>,
    n: usize,
}

impl ExactDistribution {
    pub fn new(model: &NdppModel) -> Result<Self> {
        let n = model.n();
        if n > 15 {
            return Err(Error::TooLarge(format!(
                "exact enumeration refused for n = {n} > 15"
            )));
        }
        let mut counter = DetCounter::new();
        let mut weights = Vec::with_capacity(1 << n);
        let mut total = 0.0;
        for mask in 0u32..(1 << n) {
            let ids: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let s = Subset::new(ids)?;
            let det = f_det(model, &s, &mut counter)?.max(0.0);
            total += det;
            weights.push((mask, det));
        }
        if total.is_nan() || total <= 0.0 {
            return Err(Error::Config("all subset weights are zero".into()));
        }
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for (mask, w) in weights {
            acc += w / total;
            cdf.push((mask, acc));
        }
        Ok(ExactDistribution { cdf, n })
    }

    /// Probability of each subset, indexed by bitmask.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cdf
            .iter()
            .map(|&(_, c)| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Subset {
        let u: f64 = rng.gen();
        let pos = self.cdf.partition_point(|&(_, c)| c < u);
        let (mask, _) = self.cdf[pos.min(self.cdf.len() - 1)];
        Subset::new((0..self.n).filter(|i| mask & (1 << i) != 0).collect())
            .expect("bitmask indices are increasing")
    }
}

/// Draws one subset from the exact NDPP distribution (n <= 15). Enumerates on
/// every call; use [`ExactDistribution`] directly for repeated draws.
pub fn sample_exact_small(model: &NdppModel, rng: &mut impl Rng) -> Result<Subset> {
    Ok(ExactDistribution::new(model)?.sample(rng))
}
