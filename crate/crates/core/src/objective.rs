//! Loss terms of the transitive hashing objective and their analytic
//! residuals with respect to the hash-layer pre-activations.
//!
//! The total cost of a mini-batch is
//!
//! ```text
//! C = L + λ·Q + μ·(Dq + Dd)
//! ```
//!
//! where `L` is the pairwise logistic loss over the labeled auxiliary pairs,
//! `Q` the pairwise quantization loss, and `Dq` / `Dd` the biased Gaussian
//! MMD between the auxiliary and target code activations of the query and
//! database modality. All sums run over the pairs as listed (duplicates
//! count), never averaged.

use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, softplus, squared_distance, Matrix};
use crate::scalar::Real;
use crate::types::{Ablation, GammaMode, TrainConfig};

/// `|z|` is clamped to at least this inside the quantization loss and its
/// residual.
pub const QUANT_CLAMP: f64 = 1e-6;

/// A labeled pair between row `x` of `zx` and row `y` of `zy`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairLabel {
    pub x: usize,
    pub y: usize,
    pub similar: bool,
}

/// Hash-layer activations of the four mini-batch blocks.
#[derive(Clone, Debug)]
pub struct BatchActivations<T> {
    /// Auxiliary modality-X rows.
    pub zx: Matrix<T>,
    /// Auxiliary modality-Y rows.
    pub zy: Matrix<T>,
    /// Target query-modality rows.
    pub zq: Matrix<T>,
    /// Target database-modality rows.
    pub zd: Matrix<T>,
    pub pairs: Vec<PairLabel>,
}

impl<T: Real> BatchActivations<T> {
    /// Validates widths, activation range and pair indices.
    pub fn new(zx: Matrix<T>, zy: Matrix<T>, zq: Matrix<T>, zd: Matrix<T>, pairs: Vec<PairLabel>) -> Result<Self> {
        let b = zx.cols();
        for m in [&zy, &zq, &zd] {
            if m.cols() != b && m.rows() > 0 {
                return Err(Error::shape("BatchActivations::new", zx.shape(), m.shape()));
            }
        }
        for m in [&zx, &zy, &zq, &zd] {
            if m.as_slice().iter().any(|v| !(v.abs() <= T::one())) {
                return Err(Error::invalid("activations must lie in [-1, 1]"));
            }
        }
        if let Some(p) = pairs.iter().find(|p| p.x >= zx.rows() || p.y >= zy.rows()) {
            return Err(Error::invalid(format!(
                "pair ({}, {}) out of range for {} x-rows and {} y-rows",
                p.x,
                p.y,
                zx.rows(),
                zy.rows()
            )));
        }
        Ok(BatchActivations { zx, zy, zq, zd, pairs })
    }

    pub fn bits(&self) -> usize {
        self.zx.cols()
    }
}

/// Final pre-activations `z̃` of the four blocks, aligned with
/// [`BatchActivations`].
#[derive(Clone, Debug)]
pub struct PreActivations<T> {
    pub zx: Matrix<T>,
    pub zy: Matrix<T>,
    pub zq: Matrix<T>,
    pub zd: Matrix<T>,
}

/// `∂C/∂z̃` for each block.
#[derive(Clone, Debug, PartialEq)]
pub struct Residuals<T> {
    pub zx: Matrix<T>,
    pub zy: Matrix<T>,
    pub zq: Matrix<T>,
    pub zd: Matrix<T>,
}

/// Loss components of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    /// Relationship loss (cross-entropy, or the inner-product surrogate).
    pub l: f64,
    /// Quantization loss.
    pub q: f64,
    pub dq: f64,
    pub dd: f64,
    /// Total `L + λQ + μ(Dq + Dd)`.
    pub c: f64,
}

/// Weights and frozen bandwidths for one mini-batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveParams<T> {
    pub lambda: T,
    pub mu: T,
    /// Bandwidth of the query-modality MMD.
    pub gamma_q: T,
    /// Bandwidth of the database-modality MMD.
    pub gamma_d: T,
    pub ablation: Ablation,
}

impl<T: Real> ObjectiveParams<T> {
    /// Applies the ablation and freezes `γ` for this batch.
    pub fn resolve(cfg: &TrainConfig, batch: &BatchActivations<T>) -> Self {
        let (gamma_q, gamma_d) = match cfg.gamma {
            GammaMode::Fixed(g) => (T::of(g), T::of(g)),
            GammaMode::Median => (median_gamma(&batch.zx, &batch.zq), median_gamma(&batch.zy, &batch.zd)),
        };
        ObjectiveParams {
            lambda: T::of(cfg.effective_lambda()),
            mu: T::of(cfg.effective_mu()),
            gamma_q,
            gamma_d,
            ablation: cfg.ablation,
        }
    }
}

/// `1 / median` of the squared distances between distinct rows of the
/// union of `a` and `b`; falls back to 1 when the median is zero or there
/// are fewer than two rows.
pub fn median_gamma<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    let rows: Vec<&[T]> = a.row_iter().chain(b.row_iter()).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(squared_distance(rows[i], rows[j]));
        }
    }
    if d.is_empty() {
        return T::one();
    }
    let mid = d.len() / 2;
    let (_, &mut hi, _) = d.select_nth_unstable_by(mid, |x, y| x.partial_cmp(y).unwrap());
    let median = if d.len() % 2 == 1 {
        hi
    } else {
        let lo = d[..mid].iter().copied().fold(T::neg_infinity(), T::max);
        (lo + hi) / T::of(2.0)
    };
    if median > T::zero() {
        T::one() / median
    } else {
        T::one()
    }
}

#[inline]
fn clamp_signed<T: Real>(z: T) -> T {
    let eps = T::of(QUANT_CLAMP);
    if z.abs() >= eps {
        z
    } else if z < T::zero() {
        -eps
    } else {
        eps
    }
}

#[inline]
fn neg_log_abs<T: Real>(z: T) -> T {
    -z.abs().max(T::of(QUANT_CLAMP)).ln()
}

fn inner_products<T: Real>(batch: &BatchActivations<T>) -> impl Iterator<Item = (PairLabel, T)> + '_ {
    batch
        .pairs
        .iter()
        .map(|&p| (p, dot(batch.zx.row(p.x), batch.zy.row(p.y))))
}

/// `log(1 + e^a) − s·a`; the similar case is evaluated as `log(1 + e^{−a})`,
/// which is the same quantity without cancellation.
#[inline]
pub fn pair_cross_entropy<T: Real>(a: T, similar: bool) -> T {
    if similar {
        softplus(-a)
    } else {
        softplus(a)
    }
}

/// Pairwise cross-entropy loss `Σ log(1 + e^a) − s·a` with `a = ⟨z_x, z_y⟩`.
pub fn relationship_loss<T: Real>(batch: &BatchActivations<T>) -> Result<T> {
    if batch.pairs.is_empty() {
        return Err(Error::Empty("relationship_loss: labeled pairs"));
    }
    Ok(inner_products(batch)
        .map(|(p, a)| pair_cross_entropy(a, p.similar))
        .sum())
}

/// Inner-product surrogate `Σ (a/b − (2s − 1))²`.
pub fn ip_loss<T: Real>(batch: &BatchActivations<T>, bits: usize) -> Result<T> {
    if batch.pairs.is_empty() {
        return Err(Error::Empty("ip_loss: labeled pairs"));
    }
    let b = T::of(bits as f64);
    Ok(inner_products(batch)
        .map(|(p, a)| {
            let target = if p.similar { T::one() } else { -T::one() };
            let e = a / b - target;
            e * e
        })
        .sum())
}

/// Pairwise quantization loss `Σ_pairs Σ_k (−log|z_x,k| − log|z_y,k|)`.
pub fn quantization_loss<T: Real>(batch: &BatchActivations<T>) -> T {
    let row_cost = |r: &[T]| r.iter().map(|&z| neg_log_abs(z)).sum::<T>();
    batch
        .pairs
        .iter()
        .map(|p| row_cost(batch.zx.row(p.x)) + row_cost(batch.zy.row(p.y)))
        .sum()
}

fn kernel_sum<T: Real>(a: &Matrix<T>, b: &Matrix<T>, gamma: T) -> T {
    let mut s = T::zero();
    for ra in a.row_iter() {
        for rb in b.row_iter() {
            s += (-gamma * squared_distance(ra, rb)).exp();
        }
    }
    s
}

/// Cross-sample kernel sum accumulated in sorted order, so swapping the
/// two samples gives a bit-identical result.
fn kernel_sum_symmetric<T: Real>(a: &Matrix<T>, b: &Matrix<T>, gamma: T) -> T {
    let mut vals = Vec::with_capacity(a.rows() * b.rows());
    for ra in a.row_iter() {
        for rb in b.row_iter() {
            vals.push((-gamma * squared_distance(ra, rb)).exp());
        }
    }
    vals.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    vals.into_iter().sum()
}

fn check_mmd_inputs<T: Real>(a: &Matrix<T>, b: &Matrix<T>, gamma: T) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Empty("mmd: sample"));
    }
    if a.cols() != b.cols() {
        return Err(Error::shape("mmd", a.shape(), b.shape()));
    }
    if !(gamma > T::zero()) {
        return Err(Error::invalid("mmd: gamma must be positive"));
    }
    Ok(())
}

/// Biased (V-statistic) squared MMD with a Gaussian kernel, diagonal terms
/// included.
pub fn mmd<T: Real>(a: &Matrix<T>, b: &Matrix<T>, gamma: T) -> Result<T> {
    check_mmd_inputs(a, b, gamma)?;
    let na = T::of(a.rows() as f64);
    let nb = T::of(b.rows() as f64);
    let v = kernel_sum(a, a, gamma) / (na * na) + kernel_sum(b, b, gamma) / (nb * nb)
        - T::of(2.0) * kernel_sum_symmetric(a, b, gamma) / (na * nb);
    // Round-off can leave a tiny negative value for near-identical samples.
    Ok(v.max(T::zero()))
}

/// MMD value and its gradients with respect to every row of `a` and `b`.
fn mmd_with_gradients<T: Real>(a: &Matrix<T>, b: &Matrix<T>, gamma: T) -> Result<(T, Matrix<T>, Matrix<T>)> {
    check_mmd_inputs(a, b, gamma)?;
    let (na, nb) = (a.rows(), b.rows());
    let (fa, fb) = (T::of(na as f64), T::of(nb as f64));
    let two = T::of(2.0);
    let four_gamma = T::of(4.0) * gamma;
    let kaa = Matrix::from_fn(na, na, |i, j| (-gamma * squared_distance(a.row(i), a.row(j))).exp());
    let kbb = Matrix::from_fn(nb, nb, |i, j| (-gamma * squared_distance(b.row(i), b.row(j))).exp());
    let kab = Matrix::from_fn(na, nb, |i, j| (-gamma * squared_distance(a.row(i), b.row(j))).exp());
    let value = kaa.as_slice().iter().copied().sum::<T>() / (fa * fa)
        + kbb.as_slice().iter().copied().sum::<T>() / (fb * fb)
        - two * kab.as_slice().iter().copied().sum::<T>() / (fa * fb);

    let within_a = four_gamma / (fa * fa);
    let within_b = four_gamma / (fb * fb);
    let cross = four_gamma / (fa * fb);
    let mut ga = Matrix::zeros(na, a.cols());
    for i in 0..na {
        let ai = a.row(i);
        let g = ga.row_mut(i);
        for j in 0..na {
            let w = within_a * kaa.get(i, j);
            for ((g, &x), &y) in g.iter_mut().zip(ai).zip(a.row(j)) {
                *g -= w * (x - y);
            }
        }
        for j in 0..nb {
            let w = cross * kab.get(i, j);
            for ((g, &x), &y) in g.iter_mut().zip(ai).zip(b.row(j)) {
                *g += w * (x - y);
            }
        }
    }
    let mut gb = Matrix::zeros(nb, b.cols());
    for i in 0..nb {
        let bi = b.row(i);
        let g = gb.row_mut(i);
        for j in 0..nb {
            let w = within_b * kbb.get(i, j);
            for ((g, &x), &y) in g.iter_mut().zip(bi).zip(b.row(j)) {
                *g -= w * (x - y);
            }
        }
        for j in 0..na {
            let w = cross * kab.get(j, i);
            for ((g, &x), &y) in g.iter_mut().zip(bi).zip(a.row(j)) {
                *g += w * (x - y);
            }
        }
    }
    Ok((value.max(T::zero()), ga, gb))
}

fn mmd_or_zero<T: Real>(a: &Matrix<T>, b: &Matrix<T>, gamma: T) -> Result<T> {
    if a.rows() == 0 || b.rows() == 0 {
        Ok(T::zero())
    } else {
        mmd(a, b, gamma)
    }
}

/// Evaluates every term with already-resolved parameters.
pub fn evaluate<T: Real>(batch: &BatchActivations<T>, params: &ObjectiveParams<T>) -> Result<LossReport> {
    let l = match params.ablation {
        Ablation::IP => ip_loss(batch, batch.bits())?,
        _ => relationship_loss(batch)?,
    };
    let q = quantization_loss(batch);
    let dq = mmd_or_zero(&batch.zx, &batch.zq, params.gamma_q)?;
    let dd = mmd_or_zero(&batch.zy, &batch.zd, params.gamma_d)?;
    let c = l + params.lambda * q + params.mu * (dq + dd);
    Ok(LossReport {
        l: l.to_f64_lossy(),
        q: q.to_f64_lossy(),
        dq: dq.to_f64_lossy(),
        dd: dd.to_f64_lossy(),
        c: c.to_f64_lossy(),
    })
}

/// Total objective under `cfg` (ablation applied, `γ` resolved from the
/// batch).
pub fn total_objective<T: Real>(batch: &BatchActivations<T>, cfg: &TrainConfig) -> Result<LossReport> {
    evaluate(batch, &ObjectiveParams::resolve(cfg, batch))
}

/// Analytic `∂C/∂z̃` for all four blocks, `γ` held fixed.
pub fn residuals<T: Real>(
    batch: &BatchActivations<T>,
    params: &ObjectiveParams<T>,
    pre: &PreActivations<T>,
) -> Result<Residuals<T>> {
    let pairs_shape = [
        (&batch.zx, &pre.zx),
        (&batch.zy, &pre.zy),
        (&batch.zq, &pre.zq),
        (&batch.zd, &pre.zd),
    ];
    for (z, p) in pairs_shape {
        if z.shape() != p.shape() {
            return Err(Error::shape("residuals", z.shape(), p.shape()));
        }
    }
    let bits = batch.bits();
    let b = T::of(bits as f64);
    let two = T::of(2.0);

    // ∂C/∂z first, chain rule through tanh at the end.
    let mut gx = Matrix::zeros(batch.zx.rows(), bits);
    let mut gy = Matrix::zeros(batch.zy.rows(), bits);
    let mut count_x = vec![0usize; batch.zx.rows()];
    let mut count_y = vec![0usize; batch.zy.rows()];
    for (p, a) in inner_products(batch) {
        let s = if p.similar { T::one() } else { T::zero() };
        let coef = match params.ablation {
            Ablation::IP => two * (a / b - (two * s - T::one())) / b,
            _ => sigmoid(a) - s,
        };
        for (g, &zy) in gx.row_mut(p.x).iter_mut().zip(batch.zy.row(p.y)) {
            *g += coef * zy;
        }
        for (g, &zx) in gy.row_mut(p.y).iter_mut().zip(batch.zx.row(p.x)) {
            *g += coef * zx;
        }
        count_x[p.x] += 1;
        count_y[p.y] += 1;
    }

    if params.lambda != T::zero() {
        for (g, z, counts) in [(&mut gx, &batch.zx, &count_x), (&mut gy, &batch.zy, &count_y)] {
            for (i, &n) in counts.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let w = params.lambda * T::of(n as f64);
                for (g, &z) in g.row_mut(i).iter_mut().zip(z.row(i)) {
                    *g -= w / clamp_signed(z);
                }
            }
        }
    }

    let mut gq = Matrix::zeros(batch.zq.rows(), bits);
    let mut gd = Matrix::zeros(batch.zd.rows(), bits);
    if params.mu != T::zero() {
        for (a, t, gamma, ga, gt) in [
            (&batch.zx, &batch.zq, params.gamma_q, &mut gx, &mut gq),
            (&batch.zy, &batch.zd, params.gamma_d, &mut gy, &mut gd),
        ] {
            if a.rows() == 0 || t.rows() == 0 {
                continue;
            }
            let (_, da, dt) = mmd_with_gradients(a, t, gamma)?;
            for (g, &d) in ga.as_mut_slice().iter_mut().zip(da.as_slice()) {
                *g += params.mu * d;
            }
            for (g, &d) in gt.as_mut_slice().iter_mut().zip(dt.as_slice()) {
                *g += params.mu * d;
            }
        }
    }

    let chain = |g: Matrix<T>, pre: &Matrix<T>| {
        let mut g = g;
        for (g, &p) in g.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            let t = p.tanh();
            *g *= T::one() - t * t;
        }
        g
    };
    Ok(Residuals {
        zx: chain(gx, &pre.zx),
        zy: chain(gy, &pre.zy),
        zq: chain(gq, &pre.zq),
        zd: chain(gd, &pre.zd),
    })
}

/// Per-item share of the total cost, with every shared term assigned once:
/// pair losses go to their modality-X item, each MMD cross term is split
/// evenly between its two sides.
#[derive(Clone, Debug)]
pub struct PointwiseCosts<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub q: Vec<T>,
    pub d: Vec<T>,
}

impl<T: Real> PointwiseCosts<T> {
    pub fn total(&self) -> T {
        self.x.iter().chain(&self.y).chain(&self.q).chain(&self.d).copied().sum()
    }
}

/// Splits `C` into one cost per batch item.
pub fn pointwise_costs<T: Real>(batch: &BatchActivations<T>, params: &ObjectiveParams<T>) -> Result<PointwiseCosts<T>> {
    let bits = batch.bits();
    let mut x = vec![T::zero(); batch.zx.rows()];
    let mut y = vec![T::zero(); batch.zy.rows()];
    let row_q = |r: &[T]| r.iter().map(|&z| neg_log_abs(z)).sum::<T>();
    for (p, a) in inner_products(batch) {
        let pair_loss = match params.ablation {
            Ablation::IP => {
                let target = if p.similar { T::one() } else { -T::one() };
                let e = a / T::of(bits as f64) - target;
                e * e
            }
            _ => pair_cross_entropy(a, p.similar),
        };
        x[p.x] += pair_loss + params.lambda * row_q(batch.zx.row(p.x));
        y[p.y] += params.lambda * row_q(batch.zy.row(p.y));
    }
    let mut q = vec![T::zero(); batch.zq.rows()];
    let mut d = vec![T::zero(); batch.zd.rows()];
    for (aux, tgt, gamma, ca, ct) in [
        (&batch.zx, &batch.zq, params.gamma_q, &mut x, &mut q),
        (&batch.zy, &batch.zd, params.gamma_d, &mut y, &mut d),
    ] {
        if aux.rows() == 0 || tgt.rows() == 0 {
            continue;
        }
        let (na, nt) = (T::of(aux.rows() as f64), T::of(tgt.rows() as f64));
        let k = |u: &[T], v: &[T]| (-gamma * squared_distance(u, v)).exp();
        for i in 0..aux.rows() {
            let within: T = aux.row_iter().map(|r| k(aux.row(i), r)).sum();
            let cross: T = tgt.row_iter().map(|r| k(aux.row(i), r)).sum();
            ca[i] += params.mu * (within / (na * na) - cross / (na * nt));
        }
        for i in 0..tgt.rows() {
            let within: T = tgt.row_iter().map(|r| k(tgt.row(i), r)).sum();
            let cross: T = aux.row_iter().map(|r| k(tgt.row(i), r)).sum();
            ct[i] += params.mu * (within / (nt * nt) - cross / (na * nt));
        }
    }
    Ok(PointwiseCosts { x, y, q, d })
}

/// Mean of `1 − |z|` over all entries: how far activations sit from ±1.
pub fn quantization_gap<T: Real>(z: &Matrix<T>) -> f64 {
    let n = z.as_slice().len();
    if n == 0 {
        return 0.0;
    }
    z.as_slice().iter().map(|v| 1.0 - v.abs().to_f64_lossy()).sum::<f64>() / n as f64
}
