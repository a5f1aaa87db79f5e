//! Full-covariance Gaussian mixture background model and the total-variability
//! factor analysis built on top of it.
//!
//! The pieces fit together as: [`ubm_train_em`] fits a [`GmmUbm`] on pooled
//! training frames, [`accumulate_bw_stats`] summarizes each utterance against
//! that model, [`train_tmatrix_em`] learns the low-rank total-variability
//! subspace from many such summaries, and [`extract_ivector`] maps one
//! utterance's statistics to its i-vector.

mod stats;
mod tmatrix;

pub use stats::{accumulate_bw_stats, BwStats};
pub use tmatrix::{
    extract_ivector, train_tmatrix_em, train_tmatrix_em_detailed, TotalVariabilityModel,
};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FsvError, Result};

/// Seed for the k-means++ initialization subsample and seeding draws; fixed so
/// that training is reproducible run to run.
const UBM_INIT_SEED: u64 = 0x5eed_1b31;

/// Upper bound on frames used for initialization (full EM still sees all data).
const INIT_SUBSAMPLE_MAX: usize = 50_000;

/// Lloyd refinement passes after k-means++ seeding.
const KMEANS_ITERATIONS: usize = 10;

/// Covariance eigenvalues are clamped at this fraction of the mean per-dimension
/// variance of the training data.
const COV_FLOOR_FRACTION: f64 = 1e-4;

/// Training requires at least this many frames per model parameter (C·D).
const MIN_FRAMES_FACTOR: usize = 10;

/// A Gaussian mixture with full covariance matrices, used as the universal
/// background model for the i-vector front-end.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmUbm {
    weights: Vec<f64>,
    /// Row `c` is the mean of component `c` (C×D).
    means: DMatrix<f64>,
    /// One D×D symmetric positive-definite matrix per component.
    covariances: Vec<DMatrix<f64>>,
}

impl GmmUbm {
    /// Builds a model from explicit parameters, enforcing the invariants:
    /// weights on the simplex, covariances symmetric positive definite.
    pub fn new(
        weights: Vec<f64>,
        means: DMatrix<f64>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let c = weights.len();
        if c == 0 {
            return Err(FsvError::config("GMM needs at least one component"));
        }
        if means.nrows() != c || covariances.len() != c {
            return Err(FsvError::DimMismatch(format!(
                "GMM component count disagrees: {} weights, {} mean rows, {} covariances",
                c,
                means.nrows(),
                covariances.len()
            )));
        }
        let d = means.ncols();
        if d == 0 {
            return Err(FsvError::config("GMM dimension must be at least 1"));
        }
        let weight_sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (weight_sum - 1.0).abs() > 1e-10 {
            return Err(FsvError::config(format!(
                "GMM weights must be nonnegative and sum to 1 (sum = {weight_sum})"
            )));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(FsvError::NonFinite("GMM means".into()));
        }
        for (c_idx, cov) in covariances.iter().enumerate() {
            if cov.nrows() != d || cov.ncols() != d {
                return Err(FsvError::DimMismatch(format!(
                    "covariance {c_idx} is {}x{}, expected {d}x{d}",
                    cov.nrows(),
                    cov.ncols()
                )));
            }
            if cov.iter().any(|v| !v.is_finite()) {
                return Err(FsvError::NonFinite(format!("GMM covariance {c_idx}")));
            }
            let scale = 1.0 + cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..d {
                for j in (i + 1)..d {
                    if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-8 * scale {
                        return Err(FsvError::config(format!(
                            "covariance {c_idx} is not symmetric"
                        )));
                    }
                }
            }
            if nalgebra::Cholesky::new(cov.clone()).is_none() {
                return Err(FsvError::config(format!(
                    "covariance {c_idx} is not positive definite"
                )));
            }
        }
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn mean(&self, c: usize) -> DVector<f64> {
        self.means.row(c).transpose()
    }
}

/// Per-component quantities precomputed for density evaluation: Cholesky factor
/// of the covariance and the log of the weighted normalization constant.
pub(crate) struct GmmDensities {
    dim: usize,
    chol_l: Vec<DMatrix<f64>>,
    means: Vec<DVector<f64>>,
    log_norm: Vec<f64>,
}

impl GmmDensities {
    pub(crate) fn new(ubm: &GmmUbm) -> Result<Self> {
        let d = ubm.dim();
        let half_log_tau = 0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln();
        let mut chol_l = Vec::with_capacity(ubm.n_components());
        let mut means = Vec::with_capacity(ubm.n_components());
        let mut log_norm = Vec::with_capacity(ubm.n_components());
        for c in 0..ubm.n_components() {
            let chol = nalgebra::Cholesky::new(ubm.covariances[c].clone()).ok_or_else(|| {
                FsvError::config(format!("covariance {c} is not positive definite"))
            })?;
            let l = chol.l();
            let half_log_det: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
            log_norm.push(ubm.weights[c].ln() - half_log_tau - half_log_det);
            chol_l.push(l);
            means.push(ubm.mean(c));
        }
        Ok(Self {
            dim: d,
            chol_l,
            means,
            log_norm,
        })
    }

    pub(crate) fn n_components(&self) -> usize {
        self.log_norm.len()
    }

    /// Computes component posteriors for one frame into `gamma` and returns the
    /// frame's total log density under the mixture.
    pub(crate) fn posteriors(
        &self,
        x: &DVector<f64>,
        gamma: &mut [f64],
        scratch: &mut DVector<f64>,
    ) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(gamma.len(), self.n_components());
        for c in 0..self.n_components() {
            scratch.copy_from(x);
            *scratch -= &self.means[c];
            // Solve L z = (x - mu) in place; the quadratic form is then |z|^2.
            self.chol_l[c].solve_lower_triangular_mut(scratch);
            gamma[c] = self.log_norm[c] - 0.5 * scratch.norm_squared();
        }
        let max = gamma.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let mut sum = 0.0;
        for g in gamma.iter_mut() {
            *g = (*g - max).exp();
            sum += *g;
        }
        for g in gamma.iter_mut() {
            *g /= sum;
        }
        max + sum.ln()
    }
}

/// Total log-likelihood of a collection of utterances under a trained model.
pub fn total_log_likelihood(ubm: &GmmUbm, utterances: &[DMatrix<f64>]) -> Result<f64> {
    check_utterances(utterances, Some(ubm.dim()))?;
    let densities = GmmDensities::new(ubm)?;
    // Ordered collect + sequential sum keeps the result bit-identical no
    // matter how the work is scheduled.
    let per_utterance: Vec<f64> = utterances
        .par_iter()
        .map(|frames| {
            let mut gamma = vec![0.0; ubm.n_components()];
            let mut x = DVector::zeros(ubm.dim());
            let mut scratch = DVector::zeros(ubm.dim());
            let mut acc = 0.0;
            for t in 0..frames.nrows() {
                for j in 0..ubm.dim() {
                    x[j] = frames[(t, j)];
                }
                acc += densities.posteriors(&x, &mut gamma, &mut scratch);
            }
            acc
        })
        .collect();
    Ok(per_utterance.iter().sum())
}

/// Trains a full-covariance GMM by EM on the pooled frames of `utterances`
/// (each matrix is one utterance, frames as rows).
pub fn ubm_train_em(
    utterances: &[DMatrix<f64>],
    n_components: usize,
    iterations: usize,
) -> Result<GmmUbm> {
    ubm_train_em_detailed(utterances, n_components, iterations).map(|(ubm, _)| ubm)
}

/// As [`ubm_train_em`], but also returns the total log-likelihood observed at
/// the start of each EM iteration (a non-decreasing sequence).
pub fn ubm_train_em_detailed(
    utterances: &[DMatrix<f64>],
    n_components: usize,
    iterations: usize,
) -> Result<(GmmUbm, Vec<f64>)> {
    if n_components == 0 {
        return Err(FsvError::config("number of components must be at least 1"));
    }
    let dim = check_utterances(utterances, None)?;
    let total_frames: usize = utterances.iter().map(|u| u.nrows()).sum();
    let need = MIN_FRAMES_FACTOR * n_components * dim;
    if total_frames < need {
        return Err(FsvError::InsufficientData(format!(
            "UBM training needs at least {need} frames for {n_components} components of dim {dim}, got {total_frames}"
        )));
    }

    // Mean per-dimension variance of the pooled data sets the covariance floor.
    let mut sum: DVector<f64> = DVector::zeros(dim);
    let mut sum_sq: DVector<f64> = DVector::zeros(dim);
    for u in utterances {
        for t in 0..u.nrows() {
            for j in 0..dim {
                let v = u[(t, j)];
                sum[j] += v;
                sum_sq[j] += v * v;
            }
        }
    }
    let n = total_frames as f64;
    let mean_var = (0..dim)
        .map(|j| (sum_sq[j] / n - (sum[j] / n).powi(2)).max(0.0))
        .sum::<f64>()
        / dim as f64;
    let floor = (COV_FLOOR_FRACTION * mean_var).max(1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(UBM_INIT_SEED);
    let subsample = build_subsample(utterances, total_frames, n_components, &mut rng);
    let mut model = initialize_model(&subsample, n_components, floor, &mut rng)?;

    let mut history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (next, ll) = em_step(utterances, &model, floor)?;
        history.push(ll);
        model = next;
    }
    Ok((model, history))
}

fn check_utterances(utterances: &[DMatrix<f64>], expect_dim: Option<usize>) -> Result<usize> {
    let mut dim = expect_dim;
    if utterances.is_empty() {
        return Err(FsvError::InsufficientData("no training utterances".into()));
    }
    for (i, u) in utterances.iter().enumerate() {
        if u.nrows() == 0 {
            continue;
        }
        match dim {
            None => dim = Some(u.ncols()),
            Some(d) if d != u.ncols() => {
                return Err(FsvError::DimMismatch(format!(
                    "utterance {i} has dim {}, expected {d}",
                    u.ncols()
                )));
            }
            _ => {}
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(FsvError::NonFinite(format!("utterance {i} features")));
        }
    }
    dim.ok_or_else(|| FsvError::InsufficientData("all training utterances are empty".into()))
}

/// Stacks up to `INIT_SUBSAMPLE_MAX` frames (deterministically subsampled when
/// the corpus is larger) for initialization.
fn build_subsample(
    utterances: &[DMatrix<f64>],
    total_frames: usize,
    n_components: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let dim = utterances.iter().find(|u| u.nrows() > 0).map(|u| u.ncols()).unwrap_or(0);
    let keep = total_frames.min(INIT_SUBSAMPLE_MAX.max(MIN_FRAMES_FACTOR * n_components));
    let picks: Vec<usize> = if keep == total_frames {
        (0..total_frames).collect()
    } else {
        let mut v = rand::seq::index::sample(rng, total_frames, keep).into_vec();
        v.sort_unstable();
        v
    };
    let mut out = DMatrix::zeros(picks.len(), dim);
    let mut cursor = 0usize; // index into picks
    let mut base = 0usize; // global index of the current utterance's first frame
    for u in utterances {
        while cursor < picks.len() && picks[cursor] < base + u.nrows() {
            let row = picks[cursor] - base;
            for j in 0..dim {
                out[(cursor, j)] = u[(row, j)];
            }
            cursor += 1;
        }
        base += u.nrows();
    }
    out
}

/// k-means++ seeding plus a few Lloyd passes on the subsample; the returned
/// model uses cluster proportions as weights and the global subsample
/// covariance (floored) for every component.
fn initialize_model(
    subsample: &DMatrix<f64>,
    n_components: usize,
    floor: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GmmUbm> {
    let n = subsample.nrows();
    let d = subsample.ncols();
    let mut centers = DMatrix::zeros(n_components, d);

    // k-means++ seeding: each new center is drawn with probability proportional
    // to squared distance from the nearest existing center.
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&subsample.row(first));
    let mut d2 = vec![0.0f64; n];
    for i in 0..n {
        d2[i] = row_distance_sq(subsample, i, &centers, 0);
    }
    for k in 1..n_components {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= *w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(k).copy_from(&subsample.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(row_distance_sq(subsample, i, &centers, k));
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_ITERATIONS {
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for k in 0..n_components {
                let dist = row_distance_sq(subsample, i, &centers, k);
                if dist < best_d {
                    best_d = dist;
                    best = k;
                }
            }
            assignment[i] = best;
        }
        let mut counts = vec![0usize; n_components];
        let mut sums: DMatrix<f64> = DMatrix::zeros(n_components, d);
        for i in 0..n {
            counts[assignment[i]] += 1;
            for j in 0..d {
                sums[(assignment[i], j)] += subsample[(i, j)];
            }
        }
        for k in 0..n_components {
            if counts[k] > 0 {
                for j in 0..d {
                    centers[(k, j)] = sums[(k, j)] / counts[k] as f64;
                }
            }
        }
    }

    let mut counts = vec![0usize; n_components];
    for i in 0..n {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for k in 0..n_components {
            let dist = row_distance_sq(subsample, i, &centers, k);
            if dist < best_d {
                best_d = dist;
                best = k;
            }
        }
        counts[best] += 1;
        assignment[i] = best;
    }
    let mut weights: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 / n as f64).max(1e-6))
        .collect();
    let wsum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= wsum;
    }

    // Global covariance of the subsample, shared across components.
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        for j in 0..d {
            mean[j] += subsample[(i, j)];
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    let mut diff = DVector::zeros(d);
    for i in 0..n {
        for j in 0..d {
            diff[j] = subsample[(i, j)] - mean[j];
        }
        cov.ger(1.0 / n as f64, &diff, &diff, 1.0);
    }
    let (cov, _) = floor_spd(&cov, floor);

    GmmUbm::new(weights, centers, vec![cov; n_components])
}

fn row_distance_sq(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, k: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        let d = a[(i, j)] - b[(k, j)];
        acc += d * d;
    }
    acc
}

/// One EM pass: E-step accumulates zero/first/second-order statistics over all
/// frames, the M-step re-estimates weights, means and floored covariances.
/// Returns the updated model and the total data log-likelihood under the
/// pre-update model.
fn em_step(
    utterances: &[DMatrix<f64>],
    model: &GmmUbm,
    floor: f64,
) -> Result<(GmmUbm, f64)> {
    let c = model.n_components();
    let d = model.dim();
    let densities = GmmDensities::new(model)?;

    struct Accum {
        n: DVector<f64>,
        f: DMatrix<f64>,
        s: Vec<DMatrix<f64>>,
        ll: f64,
    }
    impl Accum {
        fn new(c: usize, d: usize) -> Self {
            Self {
                n: DVector::zeros(c),
                f: DMatrix::zeros(c, d),
                s: vec![DMatrix::zeros(d, d); c],
                ll: 0.0,
            }
        }
        fn merge(mut self, other: Self) -> Self {
            self.n += other.n;
            self.f += other.f;
            for (a, b) in self.s.iter_mut().zip(other.s.iter()) {
                *a += b;
            }
            self.ll += other.ll;
            self
        }
    }

    // Fixed chunking plus in-order merge keeps the accumulation bit-identical
    // across runs regardless of rayon's scheduling.
    let n_chunks = utterances.len().clamp(1, 16);
    let chunk_len = utterances.len().div_ceil(n_chunks);
    let partials: Vec<Accum> = utterances
        .par_chunks(chunk_len)
        .map(|chunk| {
            let mut acc = Accum::new(c, d);
            let mut gamma = vec![0.0; c];
            let mut x = DVector::zeros(d);
            let mut scratch = DVector::zeros(d);
            for frames in chunk {
                for t in 0..frames.nrows() {
                    for j in 0..d {
                        x[j] = frames[(t, j)];
                    }
                    acc.ll += densities.posteriors(&x, &mut gamma, &mut scratch);
                    for k in 0..c {
                        let g = gamma[k];
                        acc.n[k] += g;
                        for j in 0..d {
                            acc.f[(k, j)] += g * x[j];
                        }
                        acc.s[k].ger(g, &x, &x, 1.0);
                    }
                }
            }
            acc
        })
        .collect();
    let acc = partials
        .into_iter()
        .reduce(Accum::merge)
        .expect("at least one chunk");

    let total: f64 = acc.n.iter().sum();
    let mut weights = Vec::with_capacity(c);
    let mut means = DMatrix::zeros(c, d);
    let mut covariances = Vec::with_capacity(c);
    let mut floored = 0usize;
    for k in 0..c {
        let nk = acc.n[k];
        weights.push(nk / total);
        if nk <= 1e-8 {
            // Dead component: keep its previous parameters rather than divide
            // by a vanishing count.
            means.row_mut(k).copy_from(&model.means.row(k));
            covariances.push(model.covariances[k].clone());
            floored += 1;
            continue;
        }
        let mu = acc.f.row(k) / nk;
        means.row_mut(k).copy_from(&mu);
        let mu_t = mu.transpose();
        let mut cov = &acc.s[k] / nk;
        cov.ger(-1.0, &mu_t, &mu_t, 1.0);
        let cov = (&cov + cov.transpose()) * 0.5;
        let (cov, clamped) = floor_spd(&cov, floor);
        if clamped {
            floored += 1;
        }
        covariances.push(cov);
    }
    if floored > 0 {
        log::warn!("UBM EM: covariance floor applied to {floored} of {c} components");
    }
    let wsum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= wsum;
    }
    Ok((GmmUbm::new(weights, means, covariances)?, acc.ll))
}

/// Clamps the eigenvalues of a symmetric matrix to at least `floor` and
/// reports whether any clamping occurred.
fn floor_spd(matrix: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let eig = matrix.clone().symmetric_eigen();
    let mut clamped = false;
    let vals = eig.eigenvalues.map(|v| {
        if v < floor {
            clamped = true;
            floor
        } else {
            v
        }
    });
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let sym = (&rebuilt + rebuilt.transpose()) * 0.5;
    (sym, clamped)
}
