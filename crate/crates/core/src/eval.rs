//! Verification metrics over labeled trial sets: EER, minimum and actual
//! normalized detection cost, DET curve points, and a probit-scaled DET
//! renderer.
//!
//! Decision convention: a trial is accepted iff `score > threshold`. The EER
//! sweep places thresholds at the observed scores, counts errors strictly
//! (`miss = #targets < t`, `fa = #impostors > t`), and linearly interpolates
//! between adjacent thresholds where the miss and false-alarm rates cross.

use crate::error::{FsvError, Result};
use crate::trials::{LabeledScoreSet, TrialLabel};

/// Detection cost function operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl DcfParams {
    pub fn new(p_target: f64, c_miss: f64, c_fa: f64) -> Result<Self> {
        if !(p_target > 0.0 && p_target < 1.0) {
            return Err(FsvError::config(format!(
                "p_target must be in (0,1), got {p_target}"
            )));
        }
        if !(c_miss > 0.0 && c_miss.is_finite() && c_fa > 0.0 && c_fa.is_finite()) {
            return Err(FsvError::config(format!(
                "costs must be positive and finite, got c_miss={c_miss} c_fa={c_fa}"
            )));
        }
        Ok(Self {
            p_target,
            c_miss,
            c_fa,
        })
    }

    /// Bayes decision threshold for LLR scores:
    /// `log[(1-p)·c_fa / (p·c_miss)]`.
    pub fn bayes_threshold(&self) -> f64 {
        ((1.0 - self.p_target) * self.c_fa / (self.p_target * self.c_miss)).ln()
    }

    /// Cost of the better of the two trivial systems (accept-all /
    /// reject-all), used to normalize DCF values.
    pub fn default_cost(&self) -> f64 {
        (self.p_target * self.c_miss).min((1.0 - self.p_target) * self.c_fa)
    }
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

/// Error counts at each distinct score threshold, ascending.
struct SweepPoint {
    threshold: f64,
    tgt_lt: usize,
    tgt_le: usize,
    imp_gt: usize,
}

struct Sweep {
    points: Vec<SweepPoint>,
    n_tgt: usize,
    n_imp: usize,
}

fn build_sweep(scores: &LabeledScoreSet) -> Result<Sweep> {
    scores.require_both_classes()?;
    let mut pairs: Vec<(f64, TrialLabel)> = scores
        .scores()
        .iter()
        .copied()
        .zip(scores.labels().iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let n_tgt = pairs.iter().filter(|(_, l)| *l == TrialLabel::Target).count();
    let n_imp = pairs.len() - n_tgt;

    let mut points = Vec::new();
    let mut tgt_below = 0usize;
    let mut imp_below = 0usize;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        let mut tgt_at = 0;
        let mut imp_at = 0;
        while i < pairs.len() && pairs[i].0 == v {
            match pairs[i].1 {
                TrialLabel::Target => tgt_at += 1,
                TrialLabel::Impostor => imp_at += 1,
            }
            i += 1;
        }
        points.push(SweepPoint {
            threshold: v,
            tgt_lt: tgt_below,
            tgt_le: tgt_below + tgt_at,
            imp_gt: n_imp - imp_below - imp_at,
        });
        tgt_below += tgt_at;
        imp_below += imp_at;
    }
    Ok(Sweep {
        points,
        n_tgt,
        n_imp,
    })
}

/// Equal error rate via a threshold sweep with linear interpolation at the
/// miss/false-alarm crossing.
pub fn eer(scores: &LabeledScoreSet) -> Result<f64> {
    let sweep = build_sweep(scores)?;
    let nt = sweep.n_tgt as f64;
    let ni = sweep.n_imp as f64;
    // Operating points at each threshold with strict error counts, bracketed
    // by the accept-all and reject-all extremes.
    let mut ops = Vec::with_capacity(sweep.points.len() + 2);
    ops.push((1.0, 0.0)); // t = -inf: fa 1, miss 0
    for p in &sweep.points {
        ops.push((p.imp_gt as f64 / ni, p.tgt_lt as f64 / nt));
    }
    ops.push((0.0, 1.0)); // t = +inf
    for w in ops.windows(2) {
        let (fa1, m1) = w[0];
        let (fa2, m2) = w[1];
        let d1 = m1 - fa1;
        let d2 = m2 - fa2;
        if d1 == 0.0 {
            return Ok(m1);
        }
        if d1 < 0.0 && d2 >= 0.0 {
            let u = -d1 / (d2 - d1);
            return Ok(m1 + u * (m2 - m1));
        }
    }
    Ok(*ops.last().map(|(_, m)| m).expect("nonempty"))
}

/// Minimum normalized detection cost over all thresholds (each distinct
/// score plus the two infinities). Returns the cost and the threshold that
/// attains it.
pub fn min_dcf(scores: &LabeledScoreSet, params: &DcfParams) -> Result<(f64, f64)> {
    let sweep = build_sweep(scores)?;
    let nt = sweep.n_tgt as f64;
    let ni = sweep.n_imp as f64;
    let cost = |miss: f64, fa: f64| -> f64 {
        (params.p_target * params.c_miss * miss + (1.0 - params.p_target) * params.c_fa * fa)
            / params.default_cost()
    };
    // t = -inf accepts everything.
    let mut best = (cost(0.0, 1.0), f64::NEG_INFINITY);
    for p in &sweep.points {
        let c = cost(p.tgt_le as f64 / nt, p.imp_gt as f64 / ni);
        if c < best.0 {
            best = (c, p.threshold);
        }
    }
    // t = +inf rejects everything; at best it ties the top threshold.
    let c = cost(1.0, 0.0);
    if c < best.0 {
        best = (c, f64::INFINITY);
    }
    Ok(best)
}

/// Normalized detection cost at the fixed Bayes threshold, treating scores
/// as log-likelihood ratios.
pub fn act_dcf(scores: &LabeledScoreSet, params: &DcfParams) -> Result<f64> {
    scores.require_both_classes()?;
    let t = params.bayes_threshold();
    let mut miss = 0usize;
    let mut fa = 0usize;
    let mut n_tgt = 0usize;
    let mut n_imp = 0usize;
    for (s, l) in scores.scores().iter().zip(scores.labels().iter()) {
        match l {
            TrialLabel::Target => {
                n_tgt += 1;
                if *s <= t {
                    miss += 1;
                }
            }
            TrialLabel::Impostor => {
                n_imp += 1;
                if *s > t {
                    fa += 1;
                }
            }
        }
    }
    let p_miss = miss as f64 / n_tgt as f64;
    let p_fa = fa as f64 / n_imp as f64;
    Ok(
        (params.p_target * params.c_miss * p_miss
            + (1.0 - params.p_target) * params.c_fa * p_fa)
            / params.default_cost(),
    )
}

/// DET operating points (P_fa, P_miss) along the ascending threshold sweep,
/// from the accept-all corner (1, 0) to the reject-all corner (0, 1).
/// Consecutive duplicates are dropped.
pub fn det_points(scores: &LabeledScoreSet) -> Result<Vec<(f64, f64)>> {
    let sweep = build_sweep(scores)?;
    let nt = sweep.n_tgt as f64;
    let ni = sweep.n_imp as f64;
    let mut out: Vec<(f64, f64)> = vec![(1.0, 0.0)];
    for p in &sweep.points {
        let point = (p.imp_gt as f64 / ni, p.tgt_lt as f64 / nt);
        if out.last() != Some(&point) {
            out.push(point);
        }
    }
    if out.last() != Some(&(0.0, 1.0)) {
        out.push((0.0, 1.0));
    }
    Ok(out)
}

/// Standard normal quantile function (Acklam's rational approximation,
/// absolute error below 1.2e-9 — far finer than plot resolution).
pub(crate) fn probit(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -probit(1.0 - p)
    }
}

/// One labeled DET curve for rendering.
#[derive(Debug, Clone)]
pub struct DetCurve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const DET_RATE_MIN: f64 = 1e-3;
const DET_RATE_MAX: f64 = 0.5;
const DET_PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Renders DET curves on probit-scaled axes as a standalone SVG document.
/// Output is a pure function of the input (stable across runs).
pub fn det_svg(curves: &[DetCurve]) -> String {
    let (left, top, size) = (64.0, 20.0, 400.0);
    let width = left + size + 24.0;
    let height = top + size + 52.0;
    let lo = probit(DET_RATE_MIN);
    let hi = probit(DET_RATE_MAX);
    let map = |rate: f64| -> f64 {
        let clamped = rate.clamp(DET_RATE_MIN, DET_RATE_MAX);
        (probit(clamped) - lo) / (hi - lo)
    };
    let x_of = |fa: f64| left + map(fa) * size;
    let y_of = |miss: f64| top + (1.0 - map(miss)) * size;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"{left}\" y=\"{top}\" width=\"{size}\" height=\"{size}\" \
         fill=\"white\" stroke=\"#333\"/>\n"
    ));

    let ticks = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4];
    let tick_label = |r: f64| -> String {
        let pct = r * 100.0;
        if pct < 1.0 {
            format!("{pct}")
        } else {
            format!("{pct:.0}")
        }
    };
    for &t in &ticks {
        let x = x_of(t);
        let y = y_of(t);
        svg.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{top}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
             stroke=\"#ddd\"/>\n",
            top + size
        ));
        svg.push_str(&format!(
            "  <line x1=\"{left}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#ddd\"/>\n",
            left + size
        ));
        svg.push_str(&format!(
            "  <text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" \
             fill=\"#333\">{}</text>\n",
            top + size + 14.0,
            tick_label(t)
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\" \
             fill=\"#333\">{}</text>\n",
            left - 6.0,
            y + 4.0,
            tick_label(t)
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
         fill=\"#111\">False alarm probability (%)</text>\n",
        left + size / 2.0,
        top + size + 36.0
    ));
    svg.push_str(&format!(
        "  <text x=\"14\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
         fill=\"#111\" transform=\"rotate(-90 14 {:.2})\">Miss probability (%)</text>\n",
        top + size / 2.0,
        top + size / 2.0
    ));

    for (k, curve) in curves.iter().enumerate() {
        let color = DET_PALETTE[k % DET_PALETTE.len()];
        let coords: Vec<String> = curve
            .points
            .iter()
            .map(|&(fa, miss)| format!("{:.2},{:.2}", x_of(fa), y_of(miss)))
            .collect();
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        let ly = top + 16.0 + 16.0 * k as f64;
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            left + size - 150.0,
            left + size - 128.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#111\">{}</text>\n",
            left + size - 122.0,
            ly + 4.0,
            xml_escape(&curve.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
