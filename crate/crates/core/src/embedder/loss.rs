//! Classification losses over utterance embeddings: plain softmax cross-entropy
//! and the angular-margin (A-softmax) variant, both with analytic gradients.
//!
//! A-softmax warps the target-class logit from `‖x‖·cosθ` to `‖x‖·ψ(θ)` with
//! `ψ(θ) = (−1)^k·cos(mθ) − 2k` on `θ ∈ [kπ/m, (k+1)π/m]`, then blends it back
//! toward the unwarped logit with an annealing weight λ:
//! `ψ' = (λ·cosθ + ψ(θ)) / (1 + λ)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{FsvError, Result};

/// Margin and annealing state for the A-softmax loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsoftmaxConfig {
    /// Integer angular margin m ≥ 1.
    pub margin: u32,
    /// Annealing weight λ ≥ 0; large λ means "mostly plain softmax".
    pub lambda: f64,
}

impl AsoftmaxConfig {
    pub fn new(margin: u32, lambda: f64) -> Result<Self> {
        if margin < 1 {
            return Err(FsvError::config("A-softmax margin must be at least 1"));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(FsvError::config("A-softmax lambda must be finite and nonnegative"));
        }
        Ok(Self { margin, lambda })
    }
}

/// The annealing schedule used during training: λ = max(5, 1000·0.99^step).
pub fn annealed_lambda(step: usize) -> f64 {
    (1000.0 * 0.99f64.powi(step.min(i32::MAX as usize) as i32)).max(5.0)
}

/// Chebyshev polynomials of the first and second kind at `c`:
/// `T_m(c) = cos(mθ)` and `U_{m−1}(c) = sin(mθ)/sinθ` for `c = cosθ`.
/// Evaluating them as polynomials avoids dividing by a vanishing `sinθ`.
fn chebyshev(c: f64, m: u32) -> (f64, f64) {
    let mut t_prev = 1.0; // T_0
    let mut t_curr = c; // T_1
    let mut u_prev = 1.0; // U_0
    let mut u_curr = 2.0 * c; // U_1
    if m == 0 {
        return (1.0, 0.0);
    }
    for _ in 1..m {
        let t_next = 2.0 * c * t_curr - t_prev;
        t_prev = t_curr;
        t_curr = t_next;
        let u_next = 2.0 * c * u_curr - u_prev;
        u_prev = u_curr;
        u_curr = u_next;
    }
    (t_curr, u_prev)
}

/// ψ(θ) evaluated at `c = cosθ`, together with its derivative dψ/dc.
pub(crate) fn psi(c: f64, m: u32) -> (f64, f64) {
    let c = c.clamp(-1.0, 1.0);
    let theta = c.acos();
    let k = ((theta * m as f64) / std::f64::consts::PI).floor().min(m as f64 - 1.0).max(0.0);
    let sign = if (k as i64) % 2 == 0 { 1.0 } else { -1.0 };
    let (t_m, u_m1) = chebyshev(c, m);
    let value = sign * t_m - 2.0 * k;
    let derivative = sign * m as f64 * u_m1;
    (value, derivative)
}

/// Angular-margin loss over a batch of embeddings (rows of `embeddings`).
/// `classifier` rows are the per-class directions and are expected to be
/// unit-normalized; the math normalizes them explicitly so finite-difference
/// probes stay well-defined. Returns the mean loss and gradients with respect
/// to the embeddings and the classifier.
pub fn asoftmax_loss(
    embeddings: &DMatrix<f64>,
    labels: &[usize],
    classifier: &DMatrix<f64>,
    config: &AsoftmaxConfig,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    check_batch(embeddings, labels, classifier)?;
    let n_classes = classifier.nrows();
    let row_norms: Vec<f64> = (0..n_classes).map(|j| classifier.row(j).norm()).collect();
    if row_norms.iter().any(|n| *n < 1e-12) {
        return Err(FsvError::ZeroVector("A-softmax classifier row".into()));
    }
    if row_norms.iter().any(|n| (n - 1.0).abs() > 1e-3) {
        return Err(FsvError::config(
            "A-softmax classifier rows must be unit-normalized",
        ));
    }
    let batch = embeddings.nrows();
    let dim = embeddings.ncols();
    let m = config.margin;
    let lambda = config.lambda;

    let mut total_loss = 0.0;
    let mut d_emb = DMatrix::zeros(batch, dim);
    let mut d_cls = DMatrix::zeros(n_classes, dim);
    let mut logits = DVector::zeros(n_classes);

    for i in 0..batch {
        let x = embeddings.row(i).transpose();
        let x_norm = x.norm();
        if x_norm < 1e-12 {
            return Err(FsvError::ZeroVector(format!(
                "embedding {i} has zero norm; angle undefined"
            )));
        }
        let y = labels[i];
        let mut cosines = DVector::zeros(n_classes);
        for j in 0..n_classes {
            let dot = classifier.row(j).transpose().dot(&x);
            cosines[j] = dot / (x_norm * row_norms[j]);
            logits[j] = x_norm * cosines[j];
        }
        let c_y = cosines[y];
        let (psi_v, psi_d) = psi(c_y, m);
        // Annealed blend of the margin logit with the plain cosine logit.
        let g = (lambda * c_y + psi_v) / (1.0 + lambda);
        let g_d = (lambda + psi_d) / (1.0 + lambda);
        logits[y] = x_norm * g;

        let max = logits.max();
        let exp: DVector<f64> = logits.map(|z| (z - max).exp());
        let z_sum: f64 = exp.sum();
        total_loss += -(logits[y] - max) + z_sum.ln();
        let x_hat = &x / x_norm;

        for j in 0..n_classes {
            let p = exp[j] / z_sum;
            let resid = p - if j == y { 1.0 } else { 0.0 };
            let coeff = resid / batch as f64;
            let w_hat = classifier.row(j).transpose() / row_norms[j];
            if j == y {
                // z_y = ‖x‖·g(c), c = ŵ·x̂:
                //   ∂z_y/∂x = g·x̂ + g'·(ŵ − c·x̂)
                //   ∂z_y/∂w = ‖x‖·g'·(x̂ − c·ŵ)/‖w‖
                for d in 0..dim {
                    d_emb[(i, d)] += coeff * (g * x_hat[d] + g_d * (w_hat[d] - c_y * x_hat[d]));
                    d_cls[(j, d)] +=
                        coeff * x_norm * g_d * (x_hat[d] - c_y * w_hat[d]) / row_norms[j];
                }
            } else {
                // z_j = ‖x‖·cosθ_j = ŵ_j·x:
                //   ∂z_j/∂x = g analog with g(c)=c, g'(c)=1.
                for d in 0..dim {
                    d_emb[(i, d)] += coeff * (cosines[j] * x_hat[d] + (w_hat[d] - cosines[j] * x_hat[d]));
                    d_cls[(j, d)] +=
                        coeff * x_norm * (x_hat[d] - cosines[j] * w_hat[d]) / row_norms[j];
                }
            }
        }
    }
    Ok((total_loss / batch as f64, d_emb, d_cls))
}

/// Plain softmax cross-entropy with bias-free logits `z = W·x` and analytic
/// gradients, averaged over the batch.
pub fn softmax_loss(
    embeddings: &DMatrix<f64>,
    labels: &[usize],
    classifier: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    check_batch(embeddings, labels, classifier)?;
    let batch = embeddings.nrows();
    let n_classes = classifier.nrows();
    let dim = embeddings.ncols();

    let mut total_loss = 0.0;
    let mut d_emb = DMatrix::zeros(batch, dim);
    let mut d_cls = DMatrix::zeros(n_classes, dim);
    for i in 0..batch {
        let x = embeddings.row(i).transpose();
        let logits = classifier * &x;
        let max = logits.max();
        let exp: DVector<f64> = logits.map(|z| (z - max).exp());
        let z_sum: f64 = exp.sum();
        total_loss += -(logits[labels[i]] - max) + z_sum.ln();
        for j in 0..n_classes {
            let resid = exp[j] / z_sum - if j == labels[i] { 1.0 } else { 0.0 };
            let coeff = resid / batch as f64;
            for d in 0..dim {
                d_emb[(i, d)] += coeff * classifier[(j, d)];
                d_cls[(j, d)] += coeff * x[d];
            }
        }
    }
    Ok((total_loss / batch as f64, d_emb, d_cls))
}

fn check_batch(
    embeddings: &DMatrix<f64>,
    labels: &[usize],
    classifier: &DMatrix<f64>,
) -> Result<()> {
    if embeddings.nrows() == 0 {
        return Err(FsvError::InsufficientData("empty batch".into()));
    }
    if labels.len() != embeddings.nrows() {
        return Err(FsvError::DimMismatch(format!(
            "{} labels for {} embeddings",
            labels.len(),
            embeddings.nrows()
        )));
    }
    if classifier.ncols() != embeddings.ncols() {
        return Err(FsvError::DimMismatch(format!(
            "classifier expects dim {}, embeddings have dim {}",
            classifier.ncols(),
            embeddings.ncols()
        )));
    }
    let n_classes = classifier.nrows();
    if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(FsvError::LabelOutOfRange(format!(
            "label {bad} with {n_classes} classes"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit_rows(rng: &mut ChaCha8Rng, s: usize, e: usize) -> DMatrix<f64> {
        let mut w = DMatrix::from_fn(s, e, |_, _| rng.sample::<f64, _>(StandardNormal));
        for j in 0..s {
            let n = w.row(j).norm();
            for d in 0..e {
                w[(j, d)] /= n;
            }
        }
        w
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, e: usize, s: usize) -> (DMatrix<f64>, Vec<usize>) {
        let x = DMatrix::from_fn(b, e, |_, _| rng.sample::<f64, _>(StandardNormal) + 0.1);
        let labels = (0..b).map(|_| rng.random_range(0..s)).collect();
        (x, labels)
    }

    #[test]
    fn psi_continuous_at_bin_boundaries() {
        for m in [1u32, 2, 3, 4, 6] {
            for k in 1..m {
                let theta = k as f64 * std::f64::consts::PI / m as f64;
                let eps = 1e-9;
                let (below, _) = psi((theta - eps).cos(), m);
                let (above, _) = psi((theta + eps).cos(), m);
                assert!(
                    (below - above).abs() < 1e-6,
                    "psi jump at k={k}, m={m}: {below} vs {above}"
                );
                // Exact boundary from both sides of the cosine.
                let c = theta.cos();
                let (at, _) = psi(c, m);
                assert!(at.is_finite());
            }
        }
    }

    #[test]
    fn psi_matches_piecewise_definition() {
        // Independent evaluation straight from the definition with explicit
        // angle arithmetic.
        for m in [1u32, 2, 4] {
            for i in 0..1000 {
                let theta = std::f64::consts::PI * (i as f64 + 0.5) / 1000.0;
                let k = ((theta * m as f64) / std::f64::consts::PI).floor();
                let expect = (-1.0f64).powi(k as i32) * (m as f64 * theta).cos() - 2.0 * k;
                let (got, _) = psi(theta.cos(), m);
                assert_abs_diff_eq!(got, expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn psi_margin_property() {
        // ψ(θ) ≤ cosθ on a dense grid for m ≥ 2.
        for m in [2u32, 3, 4] {
            for i in 0..=10_000 {
                let theta = std::f64::consts::PI * i as f64 / 10_000.0;
                let c = theta.cos();
                let (v, _) = psi(c, m);
                assert!(v <= c + 1e-12, "psi exceeded cos at theta={theta}, m={m}");
            }
        }
    }

    #[test]
    fn m1_reduces_to_normalized_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let w = unit_rows(&mut rng, 4, 3);
        let (x, labels) = random_batch(&mut rng, 6, 3, 4);
        let cfg = AsoftmaxConfig::new(1, 0.0).unwrap();
        let (loss_a, ga, gca) = asoftmax_loss(&x, &labels, &w, &cfg).unwrap();
        let (loss_s, gs, gcs) = softmax_loss(&x, &labels, &w).unwrap();
        assert_abs_diff_eq!(loss_a, loss_s, epsilon = 1e-10);
        // With unit rows the gradients agree as well, except the A-softmax
        // classifier gradient lives in the tangent space of the unit sphere.
        assert_abs_diff_eq!((ga - gs).norm(), 0.0, epsilon = 1e-9);
        let _ = (gca, gcs);
    }

    #[test]
    fn uniform_logits_give_ln_s() {
        // Zero classifier for softmax: all logits equal → loss = ln S.
        let x = DMatrix::from_row_slice(2, 3, &[0.3, -0.2, 0.5, 1.0, 0.0, -1.0]);
        let w = DMatrix::zeros(5, 3);
        let (loss, _, _) = softmax_loss(&x, &[1, 4], &w).unwrap();
        assert_abs_diff_eq!(loss, (5.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn perfect_logits_drive_loss_to_zero_monotonically() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let labels = [0usize, 1];
        let mut prev = f64::INFINITY;
        for scale in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let x = DMatrix::from_row_slice(2, 2, &[scale, 0.0, 0.0, scale]);
            let (loss, _, _) = softmax_loss(&x, &labels, &w).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn hand_placed_angle_with_m4() {
        // Embedding at angle π/8 from the target direction: ψ(π/8) for m=4 is
        // cos(4·π/8) = cos(π/2) = 0, so with λ=0 the target logit collapses to
        // zero while the off-class logit keeps ‖x‖cosθ.
        let theta = std::f64::consts::PI / 8.0;
        let r = 2.5;
        let x = DMatrix::from_row_slice(1, 2, &[r * theta.cos(), r * theta.sin()]);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let cfg = AsoftmaxConfig::new(4, 0.0).unwrap();
        let (loss, _, _) = asoftmax_loss(&x, &[0], &w, &cfg).unwrap();
        // Independent scalar evaluation of the ψ formula.
        let z_target = r * ((-1.0f64).powi(0) * (4.0 * theta).cos() - 0.0);
        assert_abs_diff_eq!(z_target, 0.0, epsilon = 1e-12);
        let z_other = r * (std::f64::consts::PI / 2.0 - theta).cos();
        let expect = -(z_target) + (z_target.exp() + z_other.exp()).ln();
        assert_abs_diff_eq!(loss, expect, epsilon = 1e-10);
    }

    fn finite_diff_check(m: u32, lambda: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = unit_rows(&mut rng, 5, 4);
        let (x, labels) = random_batch(&mut rng, 4, 4, 5);
        let cfg = AsoftmaxConfig::new(m, lambda).unwrap();
        let (_, d_emb, d_cls) = asoftmax_loss(&x, &labels, &w, &cfg).unwrap();
        let h = 1e-5;
        for i in 0..x.nrows() {
            for d in 0..x.ncols() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[(i, d)] += h;
                xm[(i, d)] -= h;
                let (lp, _, _) = asoftmax_loss(&xp, &labels, &w, &cfg).unwrap();
                let (lm, _, _) = asoftmax_loss(&xm, &labels, &w, &cfg).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (d_emb[(i, d)] - fd).abs() / d_emb[(i, d)].abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4, "emb grad mismatch m={m}: {} vs {fd}", d_emb[(i, d)]);
            }
        }
        for j in 0..w.nrows() {
            for d in 0..w.ncols() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[(j, d)] += h;
                wm[(j, d)] -= h;
                let (lp, _, _) = asoftmax_loss(&x, &labels, &wp, &cfg).unwrap();
                let (lm, _, _) = asoftmax_loss(&x, &labels, &wm, &cfg).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (d_cls[(j, d)] - fd).abs() / d_cls[(j, d)].abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4, "cls grad mismatch m={m}: {} vs {fd}", d_cls[(j, d)]);
            }
        }
    }

    #[test]
    fn asoftmax_gradients_match_finite_differences() {
        finite_diff_check(1, 0.0, 101);
        finite_diff_check(2, 1.0, 102);
        finite_diff_check(4, 5.0, 103);
    }

    #[test]
    fn softmax_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let w = DMatrix::from_fn(5, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (x, labels) = random_batch(&mut rng, 4, 4, 5);
        let (_, d_emb, d_cls) = softmax_loss(&x, &labels, &w).unwrap();
        let h = 1e-5;
        for i in 0..x.nrows() {
            for d in 0..x.ncols() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[(i, d)] += h;
                xm[(i, d)] -= h;
                let (lp, _, _) = softmax_loss(&xp, &labels, &w).unwrap();
                let (lm, _, _) = softmax_loss(&xm, &labels, &w).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (d_emb[(i, d)] - fd).abs() / d_emb[(i, d)].abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4);
            }
        }
        for j in 0..w.nrows() {
            for d in 0..w.ncols() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[(j, d)] += h;
                wm[(j, d)] -= h;
                let (lp, _, _) = softmax_loss(&x, &labels, &wp).unwrap();
                let (lm, _, _) = softmax_loss(&x, &labels, &wm).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (d_cls[(j, d)] - fd).abs() / d_cls[(j, d)].abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4);
            }
        }
    }

    #[test]
    fn loss_monotone_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        let w = unit_rows(&mut rng, 4, 3);
        let (x, labels) = random_batch(&mut rng, 8, 3, 4);
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.5, 2.0, 10.0, 100.0, 1e6] {
            let cfg = AsoftmaxConfig::new(4, lambda).unwrap();
            let (loss, _, _) = asoftmax_loss(&x, &labels, &w, &cfg).unwrap();
            assert!(loss <= prev + 1e-12, "loss rose with lambda: {prev} -> {loss}");
            prev = loss;
        }
        // λ → ∞ limit equals the unwarped (modified softmax) loss.
        let cfg1 = AsoftmaxConfig::new(1, 0.0).unwrap();
        let (plain, _, _) = asoftmax_loss(&x, &labels, &w, &cfg1).unwrap();
        assert_abs_diff_eq!(prev, plain, epsilon = 1e-4);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(106);
        let w = unit_rows(&mut rng, 3, 2);
        let cfg = AsoftmaxConfig::new(2, 1.0).unwrap();
        // Zero-norm embedding.
        let x = DMatrix::zeros(1, 2);
        assert!(matches!(
            asoftmax_loss(&x, &[0], &w, &cfg).unwrap_err(),
            FsvError::ZeroVector(_)
        ));
        // Label out of range.
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(matches!(
            softmax_loss(&x, &[7], &w).unwrap_err(),
            FsvError::LabelOutOfRange(_)
        ));
        // Non-normalized classifier rows.
        let bad = &w * 3.0;
        assert!(asoftmax_loss(&x, &[0], &bad, &cfg).is_err());
        // Margin zero.
        assert!(AsoftmaxConfig::new(0, 1.0).is_err());
    }

    #[test]
    fn annealing_schedule_floors_at_five() {
        assert_abs_diff_eq!(annealed_lambda(0), 1000.0, epsilon = 1e-12);
        assert!(annealed_lambda(100) > 5.0);
        assert_abs_diff_eq!(annealed_lambda(100_000), 5.0, epsilon = 1e-12);
        assert!(annealed_lambda(10) < annealed_lambda(9));
    }
}
