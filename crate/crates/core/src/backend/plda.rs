//! Gaussian PLDA with a full-covariance residual: `x = mu + F h + eps`,
//! `h ~ N(0, I)`, `eps ~ N(0, Sigma)`. Scoring uses the two-cover joint
//! Gaussian form: under the same-speaker hypothesis the pair shares one `h`,
//! under the different-speaker hypothesis the off-diagonal block vanishes.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::backend::sample_mean_cov;
use crate::error::{FsvError, Result};

/// Trained PLDA parameters.
#[derive(Debug, Clone)]
pub struct PldaModel {
    mu: DVector<f64>,
    f: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl PldaModel {
    pub fn new(mu: DVector<f64>, f: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if f.nrows() != d || sigma.nrows() != d || sigma.ncols() != d {
            return Err(FsvError::DimMismatch(format!(
                "PLDA shapes disagree: mu {d}, F {}x{}, Sigma {}x{}",
                f.nrows(),
                f.ncols(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if f.ncols() == 0 || f.ncols() > d {
            return Err(FsvError::config(format!(
                "speaker rank must be in 1..={d}, got {}",
                f.ncols()
            )));
        }
        if (&sigma - sigma.transpose()).norm() > 1e-9 * sigma.norm().max(1.0) {
            return Err(FsvError::config("residual covariance must be symmetric"));
        }
        if Cholesky::new(sigma.clone()).is_none() {
            return Err(FsvError::config(
                "residual covariance must be positive definite",
            ));
        }
        Ok(Self { mu, f, sigma })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// Speaker loading matrix F (D×R).
    pub fn loading(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// Residual covariance Sigma (D×D, SPD).
    pub fn residual_cov(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn speaker_rank(&self) -> usize {
        self.f.ncols()
    }
}

/// Precomputed factorizations for repeated LLR scoring against one model.
pub struct PldaScorer {
    mu: DVector<f64>,
    chol_same: Cholesky<f64, Dyn>,
    chol_diff: Cholesky<f64, Dyn>,
    logdet_same: f64,
    logdet_diff: f64,
}

fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    2.0 * acc
}

impl PldaScorer {
    pub fn new(model: &PldaModel) -> Result<Self> {
        let d = model.dim();
        let between = &model.f * model.f.transpose();
        let total = &between + &model.sigma;
        let mut same = DMatrix::zeros(2 * d, 2 * d);
        let mut diff = DMatrix::zeros(2 * d, 2 * d);
        same.view_mut((0, 0), (d, d)).copy_from(&total);
        same.view_mut((d, d), (d, d)).copy_from(&total);
        same.view_mut((0, d), (d, d)).copy_from(&between);
        same.view_mut((d, 0), (d, d)).copy_from(&between);
        diff.view_mut((0, 0), (d, d)).copy_from(&total);
        diff.view_mut((d, d), (d, d)).copy_from(&total);
        let chol_same = Cholesky::new(same).ok_or_else(|| {
            FsvError::config("same-speaker covariance is not positive definite")
        })?;
        let chol_diff = Cholesky::new(diff).ok_or_else(|| {
            FsvError::config("different-speaker covariance is not positive definite")
        })?;
        let logdet_same = chol_logdet(&chol_same);
        let logdet_diff = chol_logdet(&chol_diff);
        Ok(Self {
            mu: model.mu.clone(),
            chol_same,
            chol_diff,
            logdet_same,
            logdet_diff,
        })
    }

    /// Log-likelihood ratio of same- vs different-speaker hypotheses for one
    /// enroll/test embedding pair.
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        let d = self.mu.len();
        if enroll.len() != d || test.len() != d {
            return Err(FsvError::DimMismatch(format!(
                "PLDA model has dim {d}, got enroll {} / test {}",
                enroll.len(),
                test.len()
            )));
        }
        let mut z = DVector::zeros(2 * d);
        for j in 0..d {
            z[j] = enroll[j] - self.mu[j];
            z[d + j] = test[j] - self.mu[j];
        }
        let q_same = z.dot(&self.chol_same.solve(&z));
        let q_diff = z.dot(&self.chol_diff.solve(&z));
        Ok(-0.5 * ((self.logdet_same - self.logdet_diff) + (q_same - q_diff)))
    }
}

/// One-off LLR; build a [`PldaScorer`] instead when scoring many trials.
pub fn plda_llr(model: &PldaModel, enroll: &[f64], test: &[f64]) -> Result<f64> {
    PldaScorer::new(model)?.score(enroll, test)
}

/// Sorts eigenpairs of a symmetric matrix by descending eigenvalue and keeps
/// the top `r`, returning Q_r * sqrt(diag(lambda_r)) with negatives clamped.
fn top_loading(scatter: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let eig = scatter.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let d = scatter.nrows();
    let mut f = DMatrix::zeros(d, r);
    for (k, &idx) in order.iter().take(r).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        for j in 0..d {
            f[(j, k)] = eig.eigenvectors[(j, idx)] * scale;
        }
    }
    f
}

/// Symmetrizes and, if needed, floors eigenvalues so Cholesky succeeds.
fn ensure_spd(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    if Cholesky::new(sym.clone()).is_some() {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    let floor = (eig.eigenvalues.max() * 1e-10).max(1e-12);
    log::warn!("PLDA residual covariance floored at {floor:.3e}");
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for c in 0..scaled.ncols() {
        scaled.column_mut(c).scale_mut(eig.eigenvalues[c].max(floor));
    }
    let out = &scaled * q.transpose();
    (&out + out.transpose()) * 0.5
}

struct SpeakerStats {
    count: f64,
    /// Sum of centered embeddings for this speaker.
    first: DVector<f64>,
}

/// Trains the PLDA model by EM and also returns the per-iteration marginal
/// log-likelihood, evaluated before each update.
pub fn plda_train_em_detailed(
    embeddings: &DMatrix<f64>,
    labels: &[usize],
    r_spk: usize,
    iterations: usize,
) -> Result<(PldaModel, Vec<f64>)> {
    let n = embeddings.nrows();
    let d = embeddings.ncols();
    if labels.len() != n {
        return Err(FsvError::DimMismatch(format!(
            "{n} embeddings but {} labels",
            labels.len()
        )));
    }
    if n < 2 || d == 0 {
        return Err(FsvError::InsufficientData(
            "PLDA training needs at least 2 embeddings".into(),
        ));
    }
    if r_spk == 0 || r_spk > d {
        return Err(FsvError::config(format!(
            "speaker rank must be in 1..={d}, got {r_spk}"
        )));
    }
    if iterations == 0 {
        return Err(FsvError::config("PLDA needs at least 1 EM iteration"));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        groups.entry(label).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(FsvError::InsufficientData(
            "PLDA training needs at least 2 speakers".into(),
        ));
    }
    if groups.values().all(|idx| idx.len() < 2) {
        return Err(FsvError::InsufficientData(
            "every speaker has a single session; within/between covariances are not separable"
                .into(),
        ));
    }

    let (mu, total_cov) = sample_mean_cov(embeddings);
    let nf = n as f64;

    // Per-speaker zeroth/first-order sums of centered data, plus the total
    // scatter and the between-class scatter for initialization.
    let mut speakers: Vec<SpeakerStats> = Vec::with_capacity(groups.len());
    let mut between: DMatrix<f64> = DMatrix::zeros(d, d);
    for idx in groups.values() {
        let mut first = DVector::zeros(d);
        for &i in idx {
            for j in 0..d {
                first[j] += embeddings[(i, j)] - mu[j];
            }
        }
        let count = idx.len() as f64;
        let centroid = &first / count;
        between.ger(count / nf, &centroid, &centroid, 1.0);
        speakers.push(SpeakerStats { count, first });
    }
    let s_total = &total_cov * nf;
    let within = &total_cov - &between;

    let mut f = top_loading(&between, r_spk);
    let mut sigma = ensure_spd(within);
    let mut lls = Vec::with_capacity(iterations);

    for iter in 0..iterations {
        let chol_sigma = Cholesky::new(sigma.clone()).ok_or_else(|| {
            FsvError::config("PLDA residual covariance lost positive definiteness")
        })?;
        let g = chol_sigma.solve(&f); // Sigma^{-1} F
        let gram = f.transpose() * &g; // F' Sigma^{-1} F
        let logdet_sigma = chol_logdet(&chol_sigma);
        let trace_term = chol_sigma.solve(&s_total).trace();

        let mut c1: DMatrix<f64> = DMatrix::zeros(d, r_spk);
        let mut c2: DMatrix<f64> = DMatrix::zeros(r_spk, r_spk);
        let mut ll = -0.5 * (nf * d as f64 * (2.0 * std::f64::consts::PI).ln()
            + nf * logdet_sigma
            + trace_term);
        for spk in &speakers {
            let mut p = DMatrix::identity(r_spk, r_spk);
            p.zip_apply(&gram, |a, b| *a += spk.count * b);
            let chol_p = Cholesky::new(p)
                .ok_or_else(|| FsvError::config("PLDA posterior precision not SPD"))?;
            let a = g.transpose() * &spk.first;
            let m = chol_p.solve(&a);
            ll -= 0.5 * (chol_logdet(&chol_p) - m.dot(&a));
            c1.ger(1.0, &spk.first, &m, 1.0);
            let mut post = chol_p.inverse() + &m * m.transpose();
            post *= spk.count;
            c2 += post;
        }
        lls.push(ll);
        if iter > 0 && ll + 1e-8 < lls[iter - 1] {
            log::warn!(
                "PLDA EM objective decreased at iteration {iter}: {} -> {ll}",
                lls[iter - 1]
            );
        }

        // M-step: F = C1 C2^{-1}; Sigma = (S_total - F C1') / N.
        let chol_c2 = Cholesky::new((&c2 + c2.transpose()) * 0.5)
            .ok_or_else(|| FsvError::config("PLDA latent second moment not SPD"))?;
        f = chol_c2.solve(&c1.transpose()).transpose();
        sigma = ensure_spd((&s_total - &f * c1.transpose()) / nf);
    }

    Ok((PldaModel::new(mu, f, sigma)?, lls))
}

/// Trains the PLDA model `x = mu + F h + eps` by EM.
pub fn plda_train_em(
    embeddings: &DMatrix<f64>,
    labels: &[usize],
    r_spk: usize,
    iterations: usize,
) -> Result<PldaModel> {
    plda_train_em_detailed(embeddings, labels, r_spk, iterations).map(|(model, _)| model)
}
