//! Embedding-space back-end: CORAL covariance alignment, whitening with
//! length normalization, Gaussian PLDA, and cosine scoring.
//!
//! All fitting routines take embeddings as an N×D matrix with one utterance
//! per row. Covariances use the population (1/N) convention throughout.

mod plda;

pub use plda::{plda_llr, plda_train_em, PldaModel, PldaScorer};

use nalgebra::{DMatrix, DVector};

use crate::error::{FsvError, Result};

/// Ridge fraction used when a covariance is too ill-conditioned to invert:
/// `alpha = RIDGE_FRACTION * trace(C) / D`.
pub const RIDGE_FRACTION: f64 = 1e-3;

/// Relative eigenvalue threshold below which a covariance counts as
/// degenerate and gets the ridge.
const DEGENERACY_RATIO: f64 = 1e-10;

/// Population mean and covariance of the rows of `data`.
pub(crate) fn sample_mean_cov(data: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.nrows();
    let d = data.ncols();
    let nf = n as f64;
    let mut mean: DVector<f64> = DVector::zeros(d);
    for r in 0..n {
        for j in 0..d {
            mean[j] += data[(r, j)];
        }
    }
    mean /= nf;
    let mut cov: DMatrix<f64> = DMatrix::zeros(d, d);
    let mut centered = DVector::zeros(d);
    for r in 0..n {
        for j in 0..d {
            centered[j] = data[(r, j)] - mean[j];
        }
        cov.ger(1.0 / nf, &centered, &centered, 1.0);
    }
    // ger keeps this exactly symmetric, but make the intent explicit.
    let sym = (&cov + cov.transpose()) * 0.5;
    (mean, sym)
}

/// Adds `RIDGE_FRACTION * trace/D` to the diagonal if the matrix is
/// degenerate. Returns the ridge that was applied, if any.
fn regularize_cov(cov: &mut DMatrix<f64>) -> Result<Option<f64>> {
    let d = cov.nrows();
    let eig = cov.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.max();
    let lambda_min = eig.eigenvalues.min();
    if lambda_max <= 0.0 {
        return Err(FsvError::InsufficientData(
            "covariance has no positive eigenvalues (identical inputs?)".into(),
        ));
    }
    if lambda_min > lambda_max * DEGENERACY_RATIO {
        return Ok(None);
    }
    let alpha = RIDGE_FRACTION * cov.trace() / d as f64;
    for j in 0..d {
        cov[(j, j)] += alpha;
    }
    Ok(Some(alpha))
}

/// Symmetric matrix power C^p through the eigendecomposition; eigenvalues are
/// clamped at a tiny positive floor so the result stays finite.
fn sym_pow(cov: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let floor = eig.eigenvalues.max().abs() * 1e-14;
    let q = &eig.eigenvectors;
    let lambda = eig.eigenvalues.map(|l| l.max(floor).powf(p));
    let mut scaled = q.clone();
    for c in 0..scaled.ncols() {
        scaled.column_mut(c).scale_mut(lambda[c]);
    }
    let out = &scaled * q.transpose();
    (&out + out.transpose()) * 0.5
}

/// CORAL transform aligning the source covariance to the target covariance:
/// `A = C_S^{-1/2} C_T^{1/2}` with symmetric matrix roots, so that
/// `A' C_S A = C_T`.
#[derive(Debug, Clone)]
pub struct CoralTransform {
    a: DMatrix<f64>,
    source_cov: DMatrix<f64>,
    target_cov: DMatrix<f64>,
    source_mean: DVector<f64>,
    target_mean: DVector<f64>,
    source_ridge: Option<f64>,
    target_ridge: Option<f64>,
}

impl CoralTransform {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Source covariance after any regularization.
    pub fn source_cov(&self) -> &DMatrix<f64> {
        &self.source_cov
    }

    /// Target covariance after any regularization.
    pub fn target_cov(&self) -> &DMatrix<f64> {
        &self.target_cov
    }

    /// Ridge added to the source covariance, if it was degenerate.
    pub fn source_ridge(&self) -> Option<f64> {
        self.source_ridge
    }

    /// Ridge added to the target covariance, if it was degenerate.
    pub fn target_ridge(&self) -> Option<f64> {
        self.target_ridge
    }

    /// Maps one source-domain embedding into the target domain:
    /// `A'(x − mu_S) + mu_T`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.a.nrows() {
            return Err(FsvError::DimMismatch(format!(
                "embedding has dim {}, transform expects {}",
                x.len(),
                self.a.nrows()
            )));
        }
        Ok(self.a.transpose() * (x - &self.source_mean) + &self.target_mean)
    }

    /// Maps every row of `data` into the target domain.
    pub fn apply_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.a.nrows() {
            return Err(FsvError::DimMismatch(format!(
                "embeddings have dim {}, transform expects {}",
                data.ncols(),
                self.a.nrows()
            )));
        }
        let mut out = DMatrix::zeros(data.nrows(), data.ncols());
        for r in 0..data.nrows() {
            let y = self.apply(&data.row(r).transpose())?;
            out.row_mut(r).copy_from(&y.transpose());
        }
        Ok(out)
    }
}

/// Fits the CORAL alignment from out-of-domain (source) embeddings to
/// in-domain (target) embeddings. Degenerate covariances pick up a diagonal
/// ridge, reported through the transform's metadata.
pub fn coral_fit(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<CoralTransform> {
    if source.ncols() != target.ncols() {
        return Err(FsvError::DimMismatch(format!(
            "source dim {} vs target dim {}",
            source.ncols(),
            target.ncols()
        )));
    }
    if source.nrows() < 2 || target.nrows() < 2 {
        return Err(FsvError::InsufficientData(
            "coral_fit needs at least 2 embeddings on each side".into(),
        ));
    }
    let (source_mean, mut source_cov) = sample_mean_cov(source);
    let (target_mean, mut target_cov) = sample_mean_cov(target);
    let source_ridge = regularize_cov(&mut source_cov)?;
    let target_ridge = regularize_cov(&mut target_cov)?;
    if let Some(alpha) = source_ridge {
        log::warn!("coral_fit: source covariance degenerate, ridge {alpha:.3e} applied");
    }
    if let Some(alpha) = target_ridge {
        log::warn!("coral_fit: target covariance degenerate, ridge {alpha:.3e} applied");
    }
    let a = sym_pow(&source_cov, -0.5) * sym_pow(&target_cov, 0.5);
    Ok(CoralTransform {
        a,
        source_cov,
        target_cov,
        source_mean,
        target_mean,
        source_ridge,
        target_ridge,
    })
}

/// Whitening transform estimated from a reference embedding set.
#[derive(Debug, Clone)]
pub struct Whitener {
    mean: DVector<f64>,
    transform: DMatrix<f64>,
    ridge: Option<f64>,
}

impl Whitener {
    /// Fits `W = C^{-1/2}` on the rows of `data`.
    pub fn fit(data: &DMatrix<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(FsvError::InsufficientData(
                "whitener needs at least 2 embeddings".into(),
            ));
        }
        let (mean, mut cov) = sample_mean_cov(data);
        let ridge = regularize_cov(&mut cov)?;
        if let Some(alpha) = ridge {
            log::warn!("whitener: covariance degenerate, ridge {alpha:.3e} applied");
        }
        Ok(Self {
            mean,
            transform: sym_pow(&cov, -0.5),
            ridge,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn ridge(&self) -> Option<f64> {
        self.ridge
    }

    pub fn from_parts(mean: DVector<f64>, transform: DMatrix<f64>) -> Result<Self> {
        if mean.len() != transform.nrows() || !transform.is_square() {
            return Err(FsvError::DimMismatch(
                "whitener mean and transform shapes disagree".into(),
            ));
        }
        Ok(Self {
            mean,
            transform,
            ridge: None,
        })
    }

    /// Whitens without the final length normalization.
    pub fn whiten(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.mean.len() {
            return Err(FsvError::DimMismatch(format!(
                "embedding has dim {}, whitener expects {}",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(&self.transform * (x - &self.mean))
    }

    /// `y = W(x − mu) / ||W(x − mu)||`; always unit length.
    pub fn whiten_and_lnorm(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.whiten(x)?;
        let norm = w.norm();
        if norm < 1e-300 {
            return Err(FsvError::ZeroVector(
                "embedding coincides with the whitening mean".into(),
            ));
        }
        Ok(w / norm)
    }

    /// Applies `whiten_and_lnorm` to every row.
    pub fn apply_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(data.nrows(), data.ncols());
        for r in 0..data.nrows() {
            let y = self.whiten_and_lnorm(&data.row(r).transpose())?;
            out.row_mut(r).copy_from(&y.transpose());
        }
        Ok(out)
    }
}

/// Cosine similarity `e·t / (||e|| ||t||)`, clamped into [−1, 1].
pub fn cosine_score(e: &[f64], t: &[f64]) -> Result<f64> {
    if e.len() != t.len() {
        return Err(FsvError::DimMismatch(format!(
            "cosine between dim {} and dim {}",
            e.len(),
            t.len()
        )));
    }
    if e.is_empty() {
        return Err(FsvError::DimMismatch("cosine of empty vectors".into()));
    }
    let mut dot = 0.0;
    let mut ne = 0.0;
    let mut nt = 0.0;
    for (a, b) in e.iter().zip(t.iter()) {
        dot += a * b;
        ne += a * a;
        nt += b * b;
    }
    if ne <= 0.0 || nt <= 0.0 {
        return Err(FsvError::ZeroVector(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot / (ne.sqrt() * nt.sqrt())).clamp(-1.0, 1.0))
}
