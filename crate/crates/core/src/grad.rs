//! Analytic gradients of the alignment losses with respect to raw embedding
//! entries, and a central finite-difference oracle to check them.
//!
//! The chain for projection-matching losses is
//! `x -> x/‖x‖ -> cosine -> /τ -> softmax -> divergence`, backpropagated by
//! hand. The oracle evaluates losses through [`crate::losses`] and
//! [`crate::divergence`], so the two routes share no code past the batch
//! types.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::divergence::{self, resolve_bandwidth, sq_dist, Bandwidth, KlConfig, MmdConfig};
use crate::error::{Error, Result};
use crate::losses::{
    bimodal_cmpm_cs, gcs_ring_loss, pairwise_sum_loss, ring_edges, ModalityRing, PairMeasure, RingDirection,
    Strategy,
};
use crate::pmf::{build_match_matrix, norm, softmax_rows, true_match_pmf, unit_rows, AlignConfig, EmbeddingBatch};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Loss whose gradient is requested. Label-driven losses use the batches'
/// labels; MMD and CORAL sum over unordered modality pairs and ignore them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    BimodalCs,
    GcsRing(Strategy),
    PairwiseCs,
    PairwiseKl(KlConfig),
    Mmd(Bandwidth),
    Coral,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::BimodalCs => "bimodal_cs",
            LossKind::GcsRing(_) => "gcs_ring",
            LossKind::PairwiseCs => "pairwise_cs",
            LossKind::PairwiseKl(_) => "pairwise_kl",
            LossKind::Mmd(_) => "mmd",
            LossKind::Coral => "coral",
        }
    }
}

/// Partial derivatives of a scalar loss, one matrix per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub per_modality: Vec<Array2<f64>>,
}

impl GradientBundle {
    fn zeros_like(batches: &[Array2<f64>]) -> Self {
        Self { per_modality: batches.iter().map(|b| Array2::zeros(b.dim())).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.per_modality.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.per_modality.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Max over coordinates of `|a - b| / max(1e-8, |a| + |b|)`.
    pub fn max_relative_error(&self, other: &GradientBundle) -> f64 {
        self.per_modality
            .iter()
            .zip(&other.per_modality)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| (a - b).abs() / (a.abs() + b.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    pub fn max_abs_difference(&self, other: &GradientBundle) -> f64 {
        self.per_modality
            .iter()
            .zip(&other.per_modality)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// ============================================================================
// Forward/backward through cosine + softmax
// ============================================================================

struct Projection {
    a_hat: Array2<f64>,
    b_hat: Array2<f64>,
    a_norm: Array1<f64>,
    b_norm: Array1<f64>,
    p: Array2<f64>,
}

fn row_norms(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.axis_iter(Axis(0)).map(norm).collect()
}

fn forward_projection(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, temperature: f64) -> Result<Projection> {
    let a_hat = unit_rows(a)?;
    let b_hat = unit_rows(b)?;
    let s = a_hat.dot(&b_hat.t()).mapv(|v| v.clamp(-1.0, 1.0));
    let p = softmax_rows(s.view(), temperature)?;
    Ok(Projection { a_hat, b_hat, a_norm: row_norms(a), b_norm: row_norms(b), p })
}

/// Gradient of `x -> x/‖x‖` applied row-wise: `(g - x̂ <x̂, g>) / ‖x‖`.
fn through_normalization(g_hat: Array2<f64>, x_hat: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    let mut out = g_hat;
    for ((mut g, xh), &nrm) in out.axis_iter_mut(Axis(0)).zip(x_hat.axis_iter(Axis(0))).zip(norms) {
        let radial = xh.dot(&g);
        g.zip_mut_with(&xh, |gv, &x| *gv = (*gv - radial * x) / nrm);
    }
    out
}

/// Pull `dL/dP` back to `(dL/da, dL/db)`.
fn backward_projection(proj: &Projection, g_p: &Array2<f64>, temperature: f64) -> (Array2<f64>, Array2<f64>) {
    let mut g_s = Array2::zeros(g_p.dim());
    for ((p, g), mut out) in proj.p.axis_iter(Axis(0)).zip(g_p.axis_iter(Axis(0))).zip(g_s.axis_iter_mut(Axis(0))) {
        let inner = p.dot(&g);
        for ((o, &pv), &gv) in out.iter_mut().zip(p.iter()).zip(g.iter()) {
            *o = pv * (gv - inner) / temperature;
        }
    }
    let g_a_hat = g_s.dot(&proj.b_hat);
    let g_b_hat = g_s.t().dot(&proj.a_hat);
    (
        through_normalization(g_a_hat, &proj.a_hat, &proj.a_norm),
        through_normalization(g_b_hat, &proj.b_hat, &proj.b_norm),
    )
}

// ============================================================================
// Per-row divergences and their partials
// ============================================================================

/// CS value of `(p, q)` and its gradient with respect to `p`.
fn cs_with_grad(p: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    let num: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let qq: f64 = q.iter().map(|b| b * b).sum();
    let value = -num.ln() + 0.5 * pp.ln() + 0.5 * qq.ln();
    let grad = p.iter().zip(q).map(|(&a, &b)| -b / num + a / pp).collect();
    (value, grad)
}

fn kl_with_grad(p: &[f64], q: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let value = p.iter().zip(q).map(|(&a, &b)| a * (a / (b + eps)).ln()).sum();
    let grad = p.iter().zip(q).map(|(&a, &b)| (a / (b + eps)).ln() + 1.0).collect();
    (value, grad)
}

/// GCS value over `rows` (all the same length) and the gradient with respect
/// to each of the first `rows.len() - 1` rows; the last row is held fixed.
fn gcs_with_grad(rows: &[&[f64]]) -> (f64, Vec<Vec<f64>>) {
    let arity = rows.len();
    let k = rows[0].len();
    let power = arity as i32;
    let mut products = vec![0.0; k];
    let mut num = 0.0;
    for (j, prod) in products.iter_mut().enumerate() {
        *prod = rows.iter().map(|r| r[j]).product();
        num += *prod;
    }
    let power_sums: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v.powi(power)).sum()).collect();
    let value = power_sums.iter().map(|s| s.ln()).sum::<f64>() / arity as f64 - num.ln();
    let grads = (0..arity - 1)
        .map(|m| {
            (0..k)
                .map(|j| {
                    let others: f64 = rows.iter().enumerate().filter(|(o, _)| *o != m).map(|(_, r)| r[j]).product();
                    -others / num + rows[m][j].powi(power - 1) / power_sums[m]
                })
                .collect()
        })
        .collect();
    (value, grads)
}

// ============================================================================
// Loss-specific drivers
// ============================================================================

fn check_count(kind: &LossKind, batches: &[EmbeddingBatch]) -> Result<()> {
    let needed_exact = matches!(kind, LossKind::BimodalCs);
    if batches.len() < 2 || (needed_exact && batches.len() != 2) {
        return Err(Error::InvalidConfig(format!("{} needs {} batches, got {}", kind.name(), if needed_exact { "2" } else { ">= 2" }, batches.len())));
    }
    Ok(())
}

fn true_rows(batches: &[EmbeddingBatch]) -> Result<Vec<Vec<f64>>> {
    let labels = batches[0].labels();
    let q = true_match_pmf(&build_match_matrix(labels, labels)?)?;
    Ok(q.rows().axis_iter(Axis(0)).map(|r| r.to_vec()).collect())
}

fn pairwise_projection_grad(
    batches: &[EmbeddingBatch],
    cfg: &AlignConfig,
    measure: PairMeasure,
) -> Result<(f64, GradientBundle)> {
    let mats: Vec<_> = batches.iter().map(|b| b.data().clone()).collect();
    let q = true_rows(batches)?;
    let n = batches[0].n();
    let mut grads = GradientBundle::zeros_like(&mats);
    let mut loss = 0.0;
    for src in 0..mats.len() {
        for dst in 0..mats.len() {
            if src == dst {
                continue;
            }
            let proj = forward_projection(mats[src].view(), mats[dst].view(), cfg.temperature)?;
            let mut g_p = Array2::zeros(proj.p.dim());
            for (i, (p, mut g_row)) in proj.p.axis_iter(Axis(0)).zip(g_p.axis_iter_mut(Axis(0))).enumerate() {
                let p = p.to_vec();
                let (v, g) = match measure {
                    PairMeasure::Cs => cs_with_grad(&p, &q[i]),
                    PairMeasure::Kl(k) => kl_with_grad(&p, &q[i], k.epsilon),
                };
                loss += v / n as f64;
                g_row.iter_mut().zip(g).for_each(|(o, gv)| *o = gv / n as f64);
            }
            let (ga, gb) = backward_projection(&proj, &g_p, cfg.temperature);
            grads.per_modality[src] += &ga;
            grads.per_modality[dst] += &gb;
        }
    }
    Ok((loss, grads))
}

fn ring_grad(batches: &[EmbeddingBatch], cfg: &AlignConfig, strategy: Strategy) -> Result<(f64, GradientBundle)> {
    let mats: Vec<_> = batches.iter().map(|b| b.data().clone()).collect();
    let q = true_rows(batches)?;
    let m = mats.len();
    let n = batches[0].n();
    let mut grads = GradientBundle::zeros_like(&mats);
    let mut loss = 0.0;
    for dir in [RingDirection::Forward, RingDirection::Backward] {
        if !strategy.uses(dir) {
            continue;
        }
        let edges = ring_edges(m, dir);
        let projs = edges
            .iter()
            .map(|&(s, d)| forward_projection(mats[s].view(), mats[d].view(), cfg.temperature))
            .collect::<Result<Vec<_>>>()?;
        let mut g_ps: Vec<Array2<f64>> = projs.iter().map(|p| Array2::zeros(p.p.dim())).collect();
        for i in 0..n {
            let rows: Vec<Vec<f64>> = projs.iter().map(|p| p.p.row(i).to_vec()).collect();
            let mut args: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            args.push(&q[i]);
            let (v, gs) = gcs_with_grad(&args);
            loss += v / n as f64;
            for (g_p, g) in g_ps.iter_mut().zip(gs) {
                g_p.row_mut(i).iter_mut().zip(g).for_each(|(o, gv)| *o = gv / n as f64);
            }
        }
        for ((&(s, d), proj), g_p) in edges.iter().zip(&projs).zip(&g_ps) {
            let (ga, gb) = backward_projection(proj, g_p, cfg.temperature);
            grads.per_modality[s] += &ga;
            grads.per_modality[d] += &gb;
        }
    }
    Ok((loss, grads))
}

/// Per-pair kernel widths, resolved once at the given point.
fn resolve_pair_bandwidths(batches: &[EmbeddingBatch], bandwidth: Bandwidth) -> Result<Vec<f64>> {
    let cfg = MmdConfig { bandwidth };
    let mut out = Vec::new();
    for a in 0..batches.len() {
        for b in a + 1..batches.len() {
            out.push(resolve_bandwidth(batches[a].data().view(), batches[b].data().view(), &cfg)?);
        }
    }
    Ok(out)
}

fn mmd_grad(batches: &[EmbeddingBatch], sigmas: &[f64]) -> (f64, GradientBundle) {
    let mats: Vec<_> = batches.iter().map(|b| b.data().clone()).collect();
    let mut grads = GradientBundle::zeros_like(&mats);
    let mut loss = 0.0;
    let mut pair = 0;
    for a in 0..mats.len() {
        for b in a + 1..mats.len() {
            let sigma = sigmas[pair];
            pair += 1;
            let (x, y) = (&mats[a], &mats[b]);
            let (nx, ny) = (x.nrows() as f64, y.nrows() as f64);
            let s2 = sigma * sigma;
            let k = |u, v| (-sq_dist(u, v) / (2.0 * s2)).exp();
            loss += divergence::mmd_with_sigma(x.view(), y.view(), sigma);
            // d k(u, v) / du = -k (u - v) / σ²
            let mut gx = Array2::zeros(x.dim());
            for (i, xi) in x.axis_iter(Axis(0)).enumerate() {
                let mut g = gx.row_mut(i);
                for xj in x.axis_iter(Axis(0)) {
                    let w = -2.0 * k(xi, xj) / (s2 * nx * nx);
                    g.scaled_add(w, &(&xi - &xj));
                }
                for yj in y.axis_iter(Axis(0)) {
                    let w = 2.0 * k(xi, yj) / (s2 * nx * ny);
                    g.scaled_add(w, &(&xi - &yj));
                }
            }
            let mut gy = Array2::zeros(y.dim());
            for (j, yj) in y.axis_iter(Axis(0)).enumerate() {
                let mut g = gy.row_mut(j);
                for yk in y.axis_iter(Axis(0)) {
                    let w = -2.0 * k(yj, yk) / (s2 * ny * ny);
                    g.scaled_add(w, &(&yj - &yk));
                }
                for xi in x.axis_iter(Axis(0)) {
                    let w = 2.0 * k(yj, xi) / (s2 * nx * ny);
                    g.scaled_add(w, &(&yj - &xi));
                }
            }
            grads.per_modality[a] += &gx;
            grads.per_modality[b] += &gy;
        }
    }
    (loss, grads)
}

fn coral_grad(batches: &[EmbeddingBatch]) -> Result<(f64, GradientBundle)> {
    let mats: Vec<_> = batches.iter().map(|b| b.data().clone()).collect();
    let mut grads = GradientBundle::zeros_like(&mats);
    let mut loss = 0.0;
    for a in 0..mats.len() {
        for b in a + 1..mats.len() {
            loss += divergence::coral_loss(mats[a].view(), mats[b].view())?;
            let d = mats[a].ncols() as f64;
            let (ca, xa) = divergence::covariance(mats[a].view());
            let (cb, xb) = divergence::covariance(mats[b].view());
            // dL/dC_a = (C_a - C_b) / 2d²; dL/dX = 2 X_c G / (n - 1)
            let g = (&ca - &cb) / (2.0 * d * d);
            let na = mats[a].nrows() as f64;
            let nb = mats[b].nrows() as f64;
            grads.per_modality[a] += &(xa.dot(&g) * (2.0 / (na - 1.0)));
            grads.per_modality[b] -= &(xb.dot(&g) * (2.0 / (nb - 1.0)));
        }
    }
    Ok((loss, grads))
}

/// Loss value and its analytic gradient with respect to every embedding
/// entry. A median-heuristic MMD bandwidth is resolved at `batches` and
/// treated as a constant.
pub fn loss_gradient(
    kind: LossKind,
    batches: &[EmbeddingBatch],
    cfg: &AlignConfig,
) -> Result<(f64, GradientBundle)> {
    check_count(&kind, batches)?;
    cfg.validate()?;
    match kind {
        LossKind::BimodalCs | LossKind::PairwiseCs => {
            ModalityRing::new(batches.to_vec(), Strategy::Mixed)?;
            pairwise_projection_grad(batches, cfg, PairMeasure::Cs)
        }
        LossKind::PairwiseKl(k) => {
            ModalityRing::new(batches.to_vec(), Strategy::Mixed)?;
            pairwise_projection_grad(batches, cfg, PairMeasure::Kl(k))
        }
        LossKind::GcsRing(strategy) => {
            ModalityRing::new(batches.to_vec(), strategy)?;
            ring_grad(batches, cfg, strategy)
        }
        LossKind::Mmd(bw) => {
            let sigmas = resolve_pair_bandwidths(batches, bw)?;
            Ok(mmd_grad(batches, &sigmas))
        }
        LossKind::Coral => coral_grad(batches),
    }
}

// ============================================================================
// Forward evaluation through the loss modules, and the finite-difference oracle
// ============================================================================

fn evaluate_with_sigmas(
    kind: LossKind,
    batches: &[EmbeddingBatch],
    cfg: &AlignConfig,
    sigmas: Option<&[f64]>,
) -> Result<f64> {
    check_count(&kind, batches)?;
    match kind {
        LossKind::BimodalCs => Ok(bimodal_cmpm_cs(&batches[0], &batches[1], cfg)?.total),
        LossKind::PairwiseCs => {
            Ok(pairwise_sum_loss(&ModalityRing::new(batches.to_vec(), Strategy::Mixed)?, cfg, PairMeasure::Cs)?.total)
        }
        LossKind::PairwiseKl(k) => Ok(pairwise_sum_loss(
            &ModalityRing::new(batches.to_vec(), Strategy::Mixed)?,
            cfg,
            PairMeasure::Kl(k),
        )?
        .total),
        LossKind::GcsRing(s) => Ok(gcs_ring_loss(&ModalityRing::new(batches.to_vec(), s)?, cfg)?.total),
        LossKind::Mmd(bw) => {
            let mut total = 0.0;
            let mut pair = 0;
            for a in 0..batches.len() {
                for b in a + 1..batches.len() {
                    let (x, y) = (batches[a].data().view(), batches[b].data().view());
                    total += match sigmas {
                        Some(s) => divergence::mmd_squared(x, y, &MmdConfig { bandwidth: Bandwidth::Fixed(s[pair]) })?,
                        None => divergence::mmd_squared(x, y, &MmdConfig { bandwidth: bw })?,
                    };
                    pair += 1;
                }
            }
            Ok(total)
        }
        LossKind::Coral => {
            let mut total = 0.0;
            for a in 0..batches.len() {
                for b in a + 1..batches.len() {
                    total += divergence::coral_loss(batches[a].data().view(), batches[b].data().view())?;
                }
            }
            Ok(total)
        }
    }
}

/// Loss value computed by the forward loss modules.
pub fn evaluate_loss(kind: LossKind, batches: &[EmbeddingBatch], cfg: &AlignConfig) -> Result<f64> {
    evaluate_with_sigmas(kind, batches, cfg, None)
}

/// Central differences `(f(x + h e) - f(x - h e)) / 2h` of an arbitrary
/// function of several matrices, coordinate by coordinate.
pub fn central_differences<F>(f: F, point: &[Array2<f64>], step: f64) -> Result<GradientBundle>
where
    F: Fn(&[Array2<f64>]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be > 0, got {step}")));
    }
    let mut work = point.to_vec();
    let mut grads = GradientBundle::zeros_like(point);
    let mut coord = 0;
    for m in 0..point.len() {
        for idx in 0..point[m].len() {
            let (r, c) = (idx / point[m].ncols(), idx % point[m].ncols());
            let x0 = point[m][[r, c]];
            work[m][[r, c]] = x0 + step;
            let plus = f(&work);
            work[m][[r, c]] = x0 - step;
            let minus = f(&work);
            work[m][[r, c]] = x0;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinitePerturbation { coord });
            }
            grads.per_modality[m][[r, c]] = (plus - minus) / (2.0 * step);
            coord += 1;
        }
    }
    Ok(grads)
}

/// Finite-difference gradient of a named loss. A median-heuristic MMD
/// bandwidth is resolved at `batches` and held fixed while perturbing.
pub fn finite_diff_gradient(
    kind: LossKind,
    batches: &[EmbeddingBatch],
    cfg: &AlignConfig,
    step: f64,
) -> Result<GradientBundle> {
    check_count(&kind, batches)?;
    let sigmas = match kind {
        LossKind::Mmd(bw) => Some(resolve_pair_bandwidths(batches, bw)?),
        _ => None,
    };
    let base = evaluate_with_sigmas(kind, batches, cfg, sigmas.as_deref())?;
    if !base.is_finite() {
        return Err(Error::NonFinitePerturbation { coord: 0 });
    }
    let point: Vec<_> = batches.iter().map(|b| b.data().clone()).collect();
    central_differences(
        |mats| {
            let perturbed =
                batches.iter().zip(mats).map(|(b, m)| b.with_data(m.clone())).collect::<Result<Vec<_>>>()?;
            evaluate_with_sigmas(kind, &perturbed, cfg, sigmas.as_deref())
        },
        &point,
        step,
    )
}
