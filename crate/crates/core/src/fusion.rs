//! Score calibration and fusion: the Cllr metric, per-subsystem affine
//! calibration fitted by minimizing a prior-weighted logistic loss, and
//! equal-weighted score-level fusion of calibrated subsystems.

use serde::{Deserialize, Serialize};

use crate::error::{FsvError, Result};
use crate::eval::DcfParams;
use crate::trials::{LabeledScoreSet, TrialScore};

/// Cap on the calibration scale when the training scores are separable and
/// the unconstrained optimum runs away.
pub const MAX_CALIBRATION_SCALE: f64 = 1e4;

/// Fallback scale when the unconstrained optimum has a ≤ 0 (anti-informative
/// scores); keeps the a > 0 invariant while neutralizing the subsystem.
pub const MIN_CALIBRATION_SCALE: f64 = 1e-6;

fn is_false(b: &bool) -> bool {
    !*b
}

/// Affine score calibration `s ↦ a·s + b` with `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub a: f64,
    pub b: f64,
    /// Set when the fit hit the a > 0 constraint or the scale cap.
    #[serde(default, skip_serializing_if = "is_false")]
    pub degenerate: bool,
}

impl CalibrationParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(FsvError::config(format!(
                "calibration scale must be positive and finite, got {a}"
            )));
        }
        if !b.is_finite() {
            return Err(FsvError::config(format!(
                "calibration bias must be finite, got {b}"
            )));
        }
        Ok(Self {
            a,
            b,
            degenerate: false,
        })
    }

    pub fn identity() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            degenerate: false,
        }
    }

    pub fn apply(&self, score: f64) -> f64 {
        self.a * score + self.b
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid without overflow.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cllr in bits: `1/2·[mean_tgt log2(1+e^{−s}) + mean_imp log2(1+e^{s})]`,
/// treating scores as log-likelihood ratios.
pub fn cllr(scores: &LabeledScoreSet) -> Result<f64> {
    scores.require_both_classes()?;
    let tgt = scores.target_scores();
    let imp = scores.impostor_scores();
    let tgt_term = tgt.iter().map(|&s| softplus(-s)).sum::<f64>() / tgt.len() as f64;
    let imp_term = imp.iter().map(|&s| softplus(s)).sum::<f64>() / imp.len() as f64;
    Ok(0.5 * (tgt_term + imp_term) / std::f64::consts::LN_2)
}

/// The effective training prior implied by a DCF operating point:
/// `p·c_miss / (p·c_miss + (1−p)·c_fa)`.
pub fn effective_prior(params: &DcfParams) -> f64 {
    let miss = params.p_target * params.c_miss;
    let fa = (1.0 - params.p_target) * params.c_fa;
    miss / (miss + fa)
}

fn check_prior(prior: f64) -> Result<()> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(FsvError::config(format!(
            "calibration prior must be in (0,1), got {prior}"
        )));
    }
    Ok(())
}

/// Prior-weighted logistic cost of calibrated scores, in bits. This is the
/// quantity [`calibrate_fit`] minimizes; at `prior = 0.5` it equals the Cllr
/// of the calibrated scores.
pub fn calibration_cost(
    scores: &LabeledScoreSet,
    prior: f64,
    params: &CalibrationParams,
) -> Result<f64> {
    check_prior(prior)?;
    scores.require_both_classes()?;
    Ok(weighted_cost(
        &scores.target_scores(),
        &scores.impostor_scores(),
        prior,
        params.a,
        params.b,
    ) / std::f64::consts::LN_2)
}

/// Weighted logistic objective in nats. `offset = logit(prior)` shifts the
/// decision boundary so minimization targets the chosen operating point.
fn weighted_cost(tgt: &[f64], imp: &[f64], prior: f64, a: f64, b: f64) -> f64 {
    let offset = (prior / (1.0 - prior)).ln();
    let t = tgt
        .iter()
        .map(|&s| softplus(-(a * s + b + offset)))
        .sum::<f64>()
        / tgt.len() as f64;
    let i = imp
        .iter()
        .map(|&s| softplus(a * s + b + offset))
        .sum::<f64>()
        / imp.len() as f64;
    prior * t + (1.0 - prior) * i
}

/// Gradient and Hessian of [`weighted_cost`] in (a, b).
fn cost_derivatives(
    tgt: &[f64],
    imp: &[f64],
    prior: f64,
    a: f64,
    b: f64,
) -> ([f64; 2], [f64; 3]) {
    let offset = (prior / (1.0 - prior)).ln();
    let mut grad = [0.0f64; 2];
    let mut hess = [0.0f64; 3]; // [aa, ab, bb]
    let wt = prior / tgt.len() as f64;
    for &s in tgt {
        let z = a * s + b + offset;
        let g = -sigmoid(-z); // d softplus(-z)/dz
        let h = sigmoid(z) * sigmoid(-z);
        grad[0] += wt * g * s;
        grad[1] += wt * g;
        hess[0] += wt * h * s * s;
        hess[1] += wt * h * s;
        hess[2] += wt * h;
    }
    let wi = (1.0 - prior) / imp.len() as f64;
    for &s in imp {
        let z = a * s + b + offset;
        let g = sigmoid(z);
        let h = sigmoid(z) * sigmoid(-z);
        grad[0] += wi * g * s;
        grad[1] += wi * g;
        hess[0] += wi * h * s * s;
        hess[1] += wi * h * s;
        hess[2] += wi * h;
    }
    (grad, hess)
}

/// One-dimensional Newton fit of the bias with the scale frozen; used on the
/// degenerate paths so the returned bias is still optimal given `a`.
fn fit_bias_only(tgt: &[f64], imp: &[f64], prior: f64, a: f64) -> f64 {
    let mut b = 0.0;
    for _ in 0..200 {
        let (grad, hess) = cost_derivatives(tgt, imp, prior, a, b);
        if grad[1].abs() < 1e-10 {
            break;
        }
        let step = if hess[2] > 1e-300 {
            -grad[1] / hess[2]
        } else {
            -grad[1].signum()
        };
        let mut t = 1.0;
        let base = weighted_cost(tgt, imp, prior, a, b);
        for _ in 0..60 {
            if weighted_cost(tgt, imp, prior, a, b + t * step) <= base {
                break;
            }
            t *= 0.5;
        }
        b += t * step;
    }
    b
}

/// Fits the scale and bias minimizing the prior-weighted logistic loss by
/// damped Newton iteration (the problem is convex; convergence criterion is
/// gradient norm < 1e-8). Separable score sets cap the scale at
/// [`MAX_CALIBRATION_SCALE`]; anti-informative sets (unconstrained a ≤ 0)
/// fall back to [`MIN_CALIBRATION_SCALE`]. Both paths set `degenerate`.
pub fn calibrate_fit(scores: &LabeledScoreSet, prior: f64) -> Result<CalibrationParams> {
    check_prior(prior)?;
    scores.require_both_classes()?;
    let tgt = scores.target_scores();
    let imp = scores.impostor_scores();

    let mut a = 1.0;
    let mut b = 0.0;
    for _ in 0..200 {
        let (grad, hess) = cost_derivatives(&tgt, &imp, prior, a, b);
        let gnorm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
        if gnorm < 1e-8 {
            break;
        }
        // Solve the 2×2 Newton system, damping if near-singular.
        let mut h = hess;
        let mut det = h[0] * h[2] - h[1] * h[1];
        if det.abs() < 1e-300 || !det.is_finite() {
            let damp = 1e-9 * (h[0] + h[2]).max(1e-9);
            h[0] += damp;
            h[2] += damp;
            det = h[0] * h[2] - h[1] * h[1];
        }
        let da = (-grad[0] * h[2] + grad[1] * h[1]) / det;
        let db = (-grad[1] * h[0] + grad[0] * h[1]) / det;
        // Backtracking line search on the convex objective.
        let base = weighted_cost(&tgt, &imp, prior, a, b);
        let slope = grad[0] * da + grad[1] * db;
        let mut t = 1.0;
        for _ in 0..60 {
            let cand = weighted_cost(&tgt, &imp, prior, a + t * da, b + t * db);
            if cand <= base + 1e-4 * t * slope {
                break;
            }
            t *= 0.5;
        }
        a += t * da;
        b += t * db;
        if a > MAX_CALIBRATION_SCALE {
            log::warn!(
                "calibration scale ran away (separable scores?); capping at {MAX_CALIBRATION_SCALE}"
            );
            let capped = MAX_CALIBRATION_SCALE;
            return Ok(CalibrationParams {
                a: capped,
                b: fit_bias_only(&tgt, &imp, prior, capped),
                degenerate: true,
            });
        }
    }
    if a <= 0.0 {
        log::warn!(
            "calibration wants a non-positive scale (anti-informative scores); \
             clamping to {MIN_CALIBRATION_SCALE}"
        );
        let floor = MIN_CALIBRATION_SCALE;
        return Ok(CalibrationParams {
            a: floor,
            b: fit_bias_only(&tgt, &imp, prior, floor),
            degenerate: true,
        });
    }
    Ok(CalibrationParams {
        a,
        b,
        degenerate: false,
    })
}

/// Equal-weighted fusion of calibrated subsystem scores. All subsystems must
/// carry the same trials in the same order.
pub fn fuse(
    subsystems: &[Vec<TrialScore>],
    params: &[CalibrationParams],
) -> Result<Vec<TrialScore>> {
    if subsystems.is_empty() {
        return Err(FsvError::InsufficientData("no subsystems to fuse".into()));
    }
    if subsystems.len() != params.len() {
        return Err(FsvError::DimMismatch(format!(
            "{} subsystems but {} calibration parameter sets",
            subsystems.len(),
            params.len()
        )));
    }
    let first = &subsystems[0];
    for (k, sys) in subsystems.iter().enumerate().skip(1) {
        if sys.len() != first.len() {
            return Err(FsvError::TrialMismatch(format!(
                "subsystem {k} has {} trials, subsystem 0 has {}",
                sys.len(),
                first.len()
            )));
        }
        for (i, (a, b)) in first.iter().zip(sys.iter()).enumerate() {
            if a.enroll != b.enroll || a.test != b.test {
                return Err(FsvError::TrialMismatch(format!(
                    "subsystem {k} trial {i} is {} {}, subsystem 0 has {} {}",
                    b.enroll, b.test, a.enroll, a.test
                )));
            }
        }
    }
    let k = subsystems.len() as f64;
    Ok(first
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let sum: f64 = subsystems
                .iter()
                .zip(params.iter())
                .map(|(sys, p)| p.apply(sys[i].score))
                .sum();
            TrialScore::new(t.enroll.clone(), t.test.clone(), sum / k)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{eer, min_dcf};
    use crate::trials::TrialLabel::{Impostor, Target};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn set(tgt: &[f64], imp: &[f64]) -> LabeledScoreSet {
        let mut scores = tgt.to_vec();
        scores.extend_from_slice(imp);
        let mut labels = vec![Target; tgt.len()];
        labels.extend(vec![Impostor; imp.len()]);
        LabeledScoreSet::new(scores, labels).unwrap()
    }

    /// x ~ N(±1, 1) has the exact log-likelihood ratio s = 2x.
    fn gaussian_llrs(rng: &mut ChaCha8Rng, n: usize) -> LabeledScoreSet {
        let tgt: Vec<f64> = (0..n)
            .map(|_| 2.0 * (rng.sample::<f64, _>(StandardNormal) + 1.0))
            .collect();
        let imp: Vec<f64> = (0..n)
            .map(|_| 2.0 * (rng.sample::<f64, _>(StandardNormal) - 1.0))
            .collect();
        set(&tgt, &imp)
    }

    #[test]
    fn cllr_all_zero_is_exactly_one() {
        let s = set(&[0.0, 0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(cllr(&s).unwrap(), 1.0);
    }

    #[test]
    fn cllr_confident_correct_scores_vanish() {
        let s = set(&[50.0, 50.0], &[-50.0, -50.0]);
        assert!(cllr(&s).unwrap() < 1e-10);
    }

    #[test]
    fn cllr_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(601);
        let tgt: Vec<f64> = (0..12).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let imp: Vec<f64> = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        // Naive evaluation is safe at these magnitudes.
        let t: f64 = tgt.iter().map(|s| (1.0 + (-s).exp()).log2()).sum::<f64>() / 12.0;
        let i: f64 = imp.iter().map(|s| (1.0 + s.exp()).log2()).sum::<f64>() / 8.0;
        assert_abs_diff_eq!(
            cllr(&set(&tgt, &imp)).unwrap(),
            0.5 * (t + i),
            epsilon = 1e-12
        );
    }

    #[test]
    fn cllr_requires_both_classes() {
        let s = set(&[1.0], &[]);
        assert!(matches!(cllr(&s).unwrap_err(), FsvError::MissingClass(_)));
    }

    #[test]
    fn effective_prior_from_dcf_point() {
        let p = DcfParams::default(); // p=0.01, both costs 1
        assert_abs_diff_eq!(effective_prior(&p), 0.01, epsilon = 1e-15);
        let skewed = DcfParams::new(0.5, 1.0, 9.0).unwrap();
        assert_abs_diff_eq!(effective_prior(&skewed), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn ideal_llrs_fit_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(602);
        let s = gaussian_llrs(&mut rng, 5000);
        let fit = calibrate_fit(&s, 0.5).unwrap();
        assert!(!fit.degenerate);
        assert_abs_diff_eq!(fit.a, 1.0, epsilon = 0.05);
        assert_abs_diff_eq!(fit.b, 0.0, epsilon = 0.05);
    }

    #[test]
    fn calibration_never_hurts_the_training_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(603);
        // Deliberately miscalibrated: scale 5, shift +1.
        let s = gaussian_llrs(&mut rng, 400)
            .map_scores(|v| 2.5 * v + 1.0)
            .unwrap();
        for &prior in &[0.5, 0.2, 0.01] {
            let fit = calibrate_fit(&s, prior).unwrap();
            let fitted = calibration_cost(&s, prior, &fit).unwrap();
            let identity = calibration_cost(&s, prior, &CalibrationParams::identity()).unwrap();
            assert!(
                fitted <= identity + 1e-9,
                "prior {prior}: fitted {fitted} vs identity {identity}"
            );
        }
        // At prior 0.5 the objective IS Cllr, so calibrated Cllr ≤ raw Cllr.
        let fit = calibrate_fit(&s, 0.5).unwrap();
        let calibrated = s.map_scores(|v| fit.apply(v)).unwrap();
        assert!(cllr(&calibrated).unwrap() <= cllr(&s).unwrap() + 1e-9);
    }

    #[test]
    fn flipped_labels_give_degenerate_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(604);
        // Anti-informative: targets score LOW.
        let tgt: Vec<f64> = (0..200)
            .map(|_| rng.sample::<f64, _>(StandardNormal) - 2.0)
            .collect();
        let imp: Vec<f64> = (0..200)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + 2.0)
            .collect();
        let fit = calibrate_fit(&set(&tgt, &imp), 0.5).unwrap();
        assert!(fit.degenerate);
        assert!(fit.a > 0.0);
        assert_abs_diff_eq!(fit.a, MIN_CALIBRATION_SCALE);
    }

    #[test]
    fn separable_scores_cap_the_scale() {
        // Separable with a hair-thin margin: the optimum is unbounded and
        // the scale hits the cap before the gradient can flatten out.
        let s = set(&[1e-3, 2e-3, 3e-3], &[-1e-3, -2e-3, -3e-3]);
        let fit = calibrate_fit(&s, 0.5).unwrap();
        assert!(fit.degenerate);
        assert_abs_diff_eq!(fit.a, MAX_CALIBRATION_SCALE);
        assert!(fit.b.is_finite());
    }

    #[test]
    fn calibration_is_rank_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(605);
        let s = gaussian_llrs(&mut rng, 150).map_scores(|v| 3.0 * v - 2.0).unwrap();
        let prior = effective_prior(&DcfParams::default());
        let fit = calibrate_fit(&s, prior).unwrap();
        let calibrated = s.map_scores(|v| fit.apply(v)).unwrap();
        let params = DcfParams::default();
        let (raw_min, _) = min_dcf(&s, &params).unwrap();
        let (cal_min, _) = min_dcf(&calibrated, &params).unwrap();
        assert_abs_diff_eq!(raw_min, cal_min, epsilon = 1e-12);
        assert_abs_diff_eq!(eer(&s).unwrap(), eer(&calibrated).unwrap(), epsilon = 1e-12);
    }

    fn trial_vec(scores: &[f64]) -> Vec<TrialScore> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| TrialScore::new(format!("e{}", i / 3), format!("t{}", i % 3), s))
            .collect()
    }

    #[test]
    fn fuse_identity_and_duplicates() {
        let sys = trial_vec(&[0.5, -1.0, 2.0, 0.1, 0.2, 0.3]);
        let id = CalibrationParams::identity();
        let fused = fuse(std::slice::from_ref(&sys), &[id]).unwrap();
        assert_eq!(fused, sys);

        let p = CalibrationParams::new(2.0, -0.5).unwrap();
        let fused = fuse(&[sys.clone(), sys.clone()], &[p, p]).unwrap();
        for (f, raw) in fused.iter().zip(sys.iter()) {
            assert_eq!(f.score, p.apply(raw.score));
            assert_eq!(f.enroll, raw.enroll);
            assert_eq!(f.test, raw.test);
        }
    }

    #[test]
    fn fuse_matches_weighted_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        let systems: Vec<Vec<TrialScore>> = (0..3)
            .map(|_| {
                let scores: Vec<f64> =
                    (0..9).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                trial_vec(&scores)
            })
            .collect();
        let params = [
            CalibrationParams::new(1.5, 0.2).unwrap(),
            CalibrationParams::new(0.7, -0.1).unwrap(),
            CalibrationParams::new(2.0, 0.0).unwrap(),
        ];
        let fused = fuse(&systems, &params).unwrap();
        for i in 0..9 {
            let expect = (params[0].apply(systems[0][i].score)
                + params[1].apply(systems[1][i].score)
                + params[2].apply(systems[2][i].score))
                / 3.0;
            assert_abs_diff_eq!(fused[i].score, expect, epsilon = 1e-12);
            assert_eq!(fused[i].enroll, systems[0][i].enroll);
            assert_eq!(fused[i].test, systems[0][i].test);
        }
    }

    #[test]
    fn fuse_rejects_misaligned_subsystems() {
        let a = trial_vec(&[1.0, 2.0, 3.0]);
        let mut b = a.clone();
        b[1].test = "other".into();
        let id = CalibrationParams::identity();
        let err = fuse(&[a.clone(), b], &[id, id]).unwrap_err();
        assert!(matches!(err, FsvError::TrialMismatch(_)));
        assert!(err.to_string().contains("other"), "{err}");

        let short = a[..2].to_vec();
        assert!(fuse(&[a.clone(), short], &[id, id]).is_err());
        assert!(fuse(&[a], &[id, id]).is_err());
        assert!(fuse(&[], &[]).is_err());
    }

    #[test]
    fn params_serialize_compactly() {
        let p = CalibrationParams::new(1.5, -0.25).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"a":1.5,"b":-0.25}"#);
        let back: CalibrationParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let degenerate: CalibrationParams =
            serde_json::from_str(r#"{"a":1.0,"b":0.0,"degenerate":true}"#).unwrap();
        assert!(degenerate.degenerate);
    }

    #[test]
    fn invalid_params_and_priors_rejected() {
        assert!(CalibrationParams::new(0.0, 0.0).is_err());
        assert!(CalibrationParams::new(-1.0, 0.0).is_err());
        assert!(CalibrationParams::new(1.0, f64::NAN).is_err());
        let s = set(&[1.0], &[-1.0]);
        assert!(calibrate_fit(&s, 0.0).is_err());
        assert!(calibrate_fit(&s, 1.0).is_err());
    }
}
