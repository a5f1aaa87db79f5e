//! Total-variability subspace training and i-vector extraction.
//!
//! The model is `M_u = m + T·w_u` with a standard-normal prior on `w`. Given
//! centered Baum–Welch statistics `(N, f̃)` of an utterance, the i-vector is
//! the posterior mean `w = (I + TᵀΣ⁻¹ÑT)⁻¹ TᵀΣ⁻¹ f̃`, where `Ñ` repeats each
//! component occupancy across its feature dimensions and `Σ` is the
//! block-diagonal stack of UBM covariances.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{BwStats, GmmUbm};
use crate::embedding::Embedding;
use crate::error::{FsvError, Result};

/// Seed for the random initialization of T; fixed for reproducible training.
const TV_INIT_SEED: u64 = 0x5eed_7071;

/// The trained total-variability subspace together with the UBM it was
/// estimated against.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalVariabilityModel {
    /// (C·D)×R loading matrix; rows are grouped by component.
    t: DMatrix<f64>,
    ubm: GmmUbm,
}

impl TotalVariabilityModel {
    pub fn new(t: DMatrix<f64>, ubm: GmmUbm) -> Result<Self> {
        let cd = ubm.n_components() * ubm.dim();
        if t.nrows() != cd {
            return Err(FsvError::DimMismatch(format!(
                "T has {} rows, UBM supervector dimension is {cd}",
                t.nrows()
            )));
        }
        let rank = t.ncols();
        if rank == 0 {
            return Err(FsvError::config("total-variability rank must be at least 1"));
        }
        if rank >= cd {
            return Err(FsvError::config(format!(
                "total-variability rank {rank} must be smaller than the supervector dimension {cd}"
            )));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(FsvError::NonFinite("total-variability matrix".into()));
        }
        Ok(Self { t, ubm })
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    pub fn ubm(&self) -> &GmmUbm {
        &self.ubm
    }
}

/// Σ_c⁻¹·T_c for every component, recomputed whenever T changes.
fn sigma_inv_t(ubm: &GmmUbm, t: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let d = ubm.dim();
    let mut out = Vec::with_capacity(ubm.n_components());
    for c in 0..ubm.n_components() {
        let chol = Cholesky::new(ubm.covariances()[c].clone()).ok_or_else(|| {
            FsvError::config(format!("UBM covariance {c} is not positive definite"))
        })?;
        out.push(chol.solve(&t.rows(c * d, d).into_owned()));
    }
    Ok(out)
}

/// Posterior precision `L = I + Σ_c N_c·T_cᵀΣ_c⁻¹T_c` and linear term
/// `a = Σ_c T_cᵀΣ_c⁻¹f̃_c` for one utterance. `gram[c]` caches `T_cᵀΣ_c⁻¹T_c`.
fn posterior_terms(
    sig_inv_t: &[DMatrix<f64>],
    stats: &BwStats,
    rank: usize,
    gram: &[DMatrix<f64>],
) -> (DMatrix<f64>, DVector<f64>) {
    let mut l = DMatrix::identity(rank, rank);
    let mut a = DVector::zeros(rank);
    for c in 0..stats.n_components() {
        let n = stats.zero_order()[c];
        if n != 0.0 {
            l.zip_apply(&gram[c], |a, b| *a += n * b);
        }
        let f_c = stats.first_order().row(c).transpose();
        a.gemv(1.0, &sig_inv_t[c].transpose(), &f_c, 1.0);
    }
    (l, a)
}

/// Extracts the i-vector (posterior mean of `w`) for one utterance's
/// statistics. Uncentered statistics are centered against the model's UBM.
pub fn extract_ivector(tv: &TotalVariabilityModel, stats: &BwStats) -> Result<Embedding> {
    stats.check_compatible(tv.ubm())?;
    let centered;
    let stats = if stats.is_centered() {
        stats
    } else {
        centered = stats.center(tv.ubm())?;
        &centered
    };
    let d = tv.ubm().dim();
    let rank = tv.rank();
    let sig_inv_t = sigma_inv_t(tv.ubm(), tv.t())?;
    let gram: Vec<DMatrix<f64>> = (0..tv.ubm().n_components())
        .map(|c| tv.t().rows(c * d, d).transpose() * &sig_inv_t[c])
        .collect();
    let (l, a) = posterior_terms(&sig_inv_t, stats, rank, &gram);
    let chol = Cholesky::new(l)
        .ok_or_else(|| FsvError::config("posterior precision is not positive definite"))?;
    let w = chol.solve(&a);
    Embedding::new(w.iter().copied().collect())
}

/// Trains the total-variability matrix by EM over per-utterance statistics.
pub fn train_tmatrix_em(
    ubm: &GmmUbm,
    stats: &[BwStats],
    rank: usize,
    iterations: usize,
) -> Result<TotalVariabilityModel> {
    train_tmatrix_em_detailed(ubm, stats, rank, iterations).map(|(m, _)| m)
}

/// As [`train_tmatrix_em`], but also returns the marginal-likelihood objective
/// (up to an additive constant) evaluated at the start of each iteration.
pub fn train_tmatrix_em_detailed(
    ubm: &GmmUbm,
    stats: &[BwStats],
    rank: usize,
    iterations: usize,
) -> Result<(TotalVariabilityModel, Vec<f64>)> {
    let c = ubm.n_components();
    let d = ubm.dim();
    if rank == 0 {
        return Err(FsvError::config("total-variability rank must be at least 1"));
    }
    if rank >= c * d {
        return Err(FsvError::config(format!(
            "total-variability rank {rank} must be smaller than the supervector dimension {}",
            c * d
        )));
    }
    if stats.len() < rank {
        return Err(FsvError::InsufficientData(format!(
            "total-variability training needs at least {rank} utterances, got {}",
            stats.len()
        )));
    }
    let centered: Vec<BwStats> = stats
        .iter()
        .map(|s| {
            s.check_compatible(ubm)?;
            if s.is_centered() {
                Ok(s.clone())
            } else {
                s.center(ubm)
            }
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(TV_INIT_SEED);
    let mut t = DMatrix::from_fn(c * d, rank, |_, _| rng.sample::<f64, _>(StandardNormal));

    let n_utts = centered.len() as f64;
    let mut history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let sig_inv_t = sigma_inv_t(ubm, &t)?;
        let gram: Vec<DMatrix<f64>> = (0..c)
            .map(|k| t.rows(k * d, d).transpose() * &sig_inv_t[k])
            .collect();

        // The per-utterance posterior solves run in parallel; accumulation is
        // sequential and in utterance order so results are bit-reproducible.
        let posteriors: Vec<(DVector<f64>, DMatrix<f64>, f64)> = centered
            .par_iter()
            .map(|s| {
                let (l, a) = posterior_terms(&sig_inv_t, s, rank, &gram);
                let chol = Cholesky::new(l).expect("I + PSD is positive definite");
                let ew = chol.solve(&a);
                let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
                let objective = 0.5 * (a.dot(&ew) - log_det);
                let mut eww = chol.inverse();
                eww.ger(1.0, &ew, &ew, 1.0);
                (ew, eww, objective)
            })
            .collect();

        let mut a_acc = vec![DMatrix::<f64>::zeros(rank, rank); c];
        let mut b_acc = vec![DMatrix::<f64>::zeros(d, rank); c];
        let mut w_sum = DMatrix::<f64>::zeros(rank, rank);
        let mut objective = 0.0;
        for (s, (ew, eww, obj)) in centered.iter().zip(posteriors.iter()) {
            objective += obj;
            w_sum += eww;
            for k in 0..c {
                let n = s.zero_order()[k];
                if n != 0.0 {
                    a_acc[k].zip_apply(eww, |x, y| *x += n * y);
                }
                let f_k = s.first_order().row(k).transpose();
                b_acc[k].ger(1.0, &f_k, ew, 1.0);
            }
        }
        history.push(objective);

        // M-step: per-component solve T_c·A_c = B_c.
        for k in 0..c {
            match Cholesky::new(a_acc[k].clone()) {
                Some(chol) => {
                    let t_k = chol.solve(&b_acc[k].transpose()).transpose();
                    t.rows_mut(k * d, d).copy_from(&t_k);
                }
                None => {
                    log::warn!("T-matrix EM: component {k} has no occupancy; block left unchanged");
                }
            }
        }

        // Minimum-divergence step: absorb the empirical prior covariance of w
        // into T so the prior stays standard normal.
        let w_bar = w_sum / n_utts;
        if let Some(chol) = Cholesky::new(w_bar) {
            t = &t * chol.l();
        }
    }

    Ok((TotalVariabilityModel::new(t, ubm.clone())?, history))
}
