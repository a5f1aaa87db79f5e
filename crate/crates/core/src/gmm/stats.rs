//! Baum–Welch sufficient statistics of an utterance against a UBM.

use nalgebra::{DMatrix, DVector};

use super::{GmmDensities, GmmUbm};
use crate::error::{FsvError, Result};

/// Zero- and first-order Baum–Welch statistics. `first_order` row `c` holds
/// `F_c = Σ_t γ_t(c)·x_t`; when `centered` is set the component means have
/// been subtracted, i.e. the rows hold `F_c − N_c·μ_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BwStats {
    zero_order: DVector<f64>,
    first_order: DMatrix<f64>,
    centered: bool,
}

impl BwStats {
    pub fn new(zero_order: DVector<f64>, first_order: DMatrix<f64>, centered: bool) -> Result<Self> {
        if zero_order.len() != first_order.nrows() {
            return Err(FsvError::DimMismatch(format!(
                "zero-order has {} components, first-order has {} rows",
                zero_order.len(),
                first_order.nrows()
            )));
        }
        if zero_order.iter().any(|n| !n.is_finite() || *n < -1e-9)
            || first_order.iter().any(|v| !v.is_finite())
        {
            return Err(FsvError::config(
                "Baum-Welch statistics must be finite with nonnegative occupancies",
            ));
        }
        Ok(Self {
            zero_order,
            first_order,
            centered,
        })
    }

    pub fn zero_order(&self) -> &DVector<f64> {
        &self.zero_order
    }

    pub fn first_order(&self) -> &DMatrix<f64> {
        &self.first_order
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn n_components(&self) -> usize {
        self.zero_order.len()
    }

    pub fn dim(&self) -> usize {
        self.first_order.ncols()
    }

    /// Soft frame count, `Σ_c N_c`.
    pub fn total_frames(&self) -> f64 {
        self.zero_order.iter().sum()
    }

    /// Subtracts the occupancy-weighted UBM means from the first-order
    /// statistics. Centering twice would silently corrupt the statistics, so
    /// it is an error.
    pub fn center(&self, ubm: &GmmUbm) -> Result<BwStats> {
        if self.centered {
            return Err(FsvError::config("statistics are already centered"));
        }
        self.check_compatible(ubm)?;
        let mut first = self.first_order.clone();
        for c in 0..self.n_components() {
            let n = self.zero_order[c];
            for j in 0..self.dim() {
                first[(c, j)] -= n * ubm.means()[(c, j)];
            }
        }
        BwStats::new(self.zero_order.clone(), first, true)
    }

    pub(crate) fn check_compatible(&self, ubm: &GmmUbm) -> Result<()> {
        if self.n_components() != ubm.n_components() || self.dim() != ubm.dim() {
            return Err(FsvError::DimMismatch(format!(
                "statistics are {}x{}, UBM is {}x{}",
                self.n_components(),
                self.dim(),
                ubm.n_components(),
                ubm.dim()
            )));
        }
        Ok(())
    }
}

/// Accumulates zero- and first-order statistics of `frames` (rows) under the
/// UBM's posteriors. The result is uncentered.
pub fn accumulate_bw_stats(ubm: &GmmUbm, frames: &DMatrix<f64>) -> Result<BwStats> {
    if frames.nrows() > 0 && frames.ncols() != ubm.dim() {
        return Err(FsvError::DimMismatch(format!(
            "features have dim {}, UBM expects {}",
            frames.ncols(),
            ubm.dim()
        )));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(FsvError::NonFinite("features for statistics".into()));
    }
    let c = ubm.n_components();
    let d = ubm.dim();
    let densities = GmmDensities::new(ubm)?;
    let mut n = DVector::zeros(c);
    let mut f = DMatrix::zeros(c, d);
    let mut gamma = vec![0.0; c];
    let mut x = DVector::zeros(d);
    let mut scratch = DVector::zeros(d);
    for t in 0..frames.nrows() {
        for j in 0..d {
            x[j] = frames[(t, j)];
        }
        densities.posteriors(&x, &mut gamma, &mut scratch);
        for k in 0..c {
            n[k] += gamma[k];
            for j in 0..d {
                f[(k, j)] += gamma[k] * x[j];
            }
        }
    }
    BwStats::new(n, f, false)
}
