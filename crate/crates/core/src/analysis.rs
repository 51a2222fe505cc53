//! Diagnostics over losses, trained models and training logs.
//!
//! "Absolute logit shift" is the mean absolute elementwise difference between
//! policy and reference pre-softmax logits. Logits are only defined up to an
//! additive constant per row, so this statistic is a convention rather than
//! an invariant of the two distributions; it is reported in a raw
//! (position-summed, vocabulary-averaged) and a length-normalized form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TokenId};
use crate::error::{Error, Result};
use crate::model::{forward_logits, greedy_decode, token_log_probs, ModelParams};
use crate::numerics::gini_coefficient;
use crate::scalar::Scalar;
use crate::trainer::MetricsLog;

/// Default collapse threshold in nats per token.
pub const COLLAPSE_THRESHOLD: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Nll,
    Pll,
    Bnf,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Nll => "nll",
            CurveKind::Pll => "pll",
            CurveKind::Bnf => "bnf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSample {
    pub pi_theta: f64,
    pub derivative_magnitude: f64,
}

/// `|∂L/∂z_y|` of a one-token BNF loss as a function of `π_θ(y)`.
pub fn bnf_derivative_magnitude(pi: f64, pi_ref: f64) -> f64 {
    if pi < pi_ref {
        pi * (1.0 - pi_ref) / pi_ref
    } else {
        1.0 - pi
    }
}

/// Derivative magnitude on the grid `k / (grid_size + 1)`, `k = 1..=grid_size`.
pub fn derivative_curve(kind: CurveKind, pi_ref: f64, grid_size: usize) -> Result<Vec<CurveSample>> {
    if !(pi_ref > 0.0 && pi_ref < 1.0) {
        return Err(Error::Domain(format!("pi_ref must be in (0, 1), got {pi_ref}")));
    }
    if grid_size < 3 {
        return Err(Error::Config(format!("grid_size must be >= 3, got {grid_size}")));
    }
    let denom = (grid_size + 1) as f64;
    Ok((1..=grid_size)
        .map(|k| {
            let pi = k as f64 / denom;
            let d = match kind {
                CurveKind::Nll | CurveKind::Pll => 1.0 - pi,
                CurveKind::Bnf => bnf_derivative_magnitude(pi, pi_ref),
            };
            CurveSample { pi_theta: pi, derivative_magnitude: d }
        })
        .collect())
}

/// Curves sharing one grid as CSV: `pi,<kind>,<kind>...`.
pub fn curves_to_csv(curves: &[(CurveKind, Vec<CurveSample>)]) -> String {
    let mut out = String::from("pi");
    for (k, _) in curves {
        out.push(',');
        out.push_str(k.name());
    }
    out.push('\n');
    let n = curves.first().map_or(0, |(_, c)| c.len());
    for i in 0..n {
        let _ = write!(out, "{}", curves[0].1[i].pi_theta);
        for (_, c) in curves {
            let _ = write!(out, ",{}", c[i].derivative_magnitude);
        }
        out.push('\n');
    }
    out
}

/// Standalone SVG line chart of derivative curves.
pub fn curves_to_svg(curves: &[(CurveKind, Vec<CurveSample>)], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 56.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let ymax = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|s| s.derivative_magnitude))
        .fold(0.0, f64::max)
        .max(1e-12);
    let px = |x: f64| PAD + x * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y / ymax) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>",
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/><line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{y0}\" stroke=\"black\"/>",
        y0 = H - PAD,
        x1 = W - PAD
    );
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{f:.2}</text>",
            px(f),
            H - PAD + 16.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>",
            PAD - 6.0,
            py(f * ymax) + 4.0,
            f * ymax
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">likelihood π</text>",
        W / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">|∂L/∂z|</text>",
        H / 2.0,
        H / 2.0
    );
    for (k, (kind, c)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = c
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.pi_theta), py(p.derivative_magnitude)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        );
        let ly = PAD + 18.0 * k as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{x0}\" y1=\"{ly}\" x2=\"{x1}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{x2}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            kind.name(),
            x0 = W - PAD - 80.0,
            x1 = W - PAD - 56.0,
            x2 = W - PAD - 50.0,
            ty = ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Policy-vs-reference statistics of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    /// Dataset label when the response came from the dataset.
    pub label: Option<i64>,
    /// `log π_θ(y) − log π_ref(y)` in nats.
    pub delta_loglik: f64,
    pub delta_loglik_norm: f64,
    /// `Σ_i Σ_j |z_θ − z_ref| / |V|`.
    pub logit_shift_raw: f64,
    /// `Σ_i Σ_j |z_θ − z_ref| / (|y|·|V|)`.
    pub logit_shift_norm: f64,
    pub per_token_delta: Vec<f64>,
    /// Mean absolute logit difference at each position.
    pub per_token_logit_shift: Vec<f64>,
    /// Gini over `per_token_logit_shift`; `None` when every shift is zero.
    pub gini_logit_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub median: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub sequences: usize,
    pub delta_loglik: StatSummary,
    pub delta_loglik_norm: StatSummary,
    pub logit_shift_raw: StatSummary,
    pub logit_shift_norm: StatSummary,
    /// Gini over every token-level logit shift of every sequence.
    pub pooled_gini_logit_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftAnalysis {
    pub sequences: Vec<ShiftReport>,
    pub summary: ShiftSummary,
}

/// Where evaluation responses come from.
#[derive(Debug, Clone, Copy)]
pub enum EvalSource<'a> {
    /// Responses as stored in the dataset.
    Dataset(&'a Dataset),
    /// Greedy decoding from the policy on each distinct dataset prompt.
    Greedy { prompts: &'a Dataset, max_len: usize },
}

fn gini_or_none(values: &[f64]) -> Result<Option<f64>> {
    match gini_coefficient(values) {
        Ok(g) => Ok(Some(g)),
        Err(Error::UndefinedStatistic(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Statistics for a single (prompt, response).
pub fn sequence_shift<T: Scalar>(
    policy: &ModelParams<T>,
    reference: &ModelParams<T>,
    prompt: &[TokenId],
    response: &[TokenId],
    label: Option<i64>,
) -> Result<ShiftReport> {
    if response.is_empty() {
        return Err(Error::Dimension("shift of an empty response".into()));
    }
    let zp = forward_logits(policy, prompt, response)?;
    let zr = forward_logits(reference, prompt, response)?;
    let lp = token_log_probs(&zp, response)?;
    let lr = token_log_probs(&zr, response)?;
    let per_token_delta: Vec<f64> = lp.iter().zip(&lr).map(|(a, b)| (*a - *b).f64()).collect();
    let v = zp.cols() as f64;
    let per_token_logit_shift: Vec<f64> = zp
        .iter_rows()
        .zip(zr.iter_rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x - *y).f64().abs()).sum::<f64>() / v)
        .collect();
    let delta_loglik: f64 = lp.iter().map(|x| x.f64()).sum::<f64>() - lr.iter().map(|x| x.f64()).sum::<f64>();
    let n = response.len() as f64;
    let raw: f64 = per_token_logit_shift.iter().sum();
    Ok(ShiftReport {
        prompt: prompt.to_vec(),
        response: response.to_vec(),
        label,
        delta_loglik,
        delta_loglik_norm: delta_loglik / n,
        logit_shift_raw: raw,
        logit_shift_norm: raw / n,
        gini_logit_shift: gini_or_none(&per_token_logit_shift)?,
        per_token_delta,
        per_token_logit_shift,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn summarize(values: &[f64], bins: usize) -> StatSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / values.len() as f64 };
    let (lo, hi) = match (sorted.first(), sorted.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => (0.0, 0.0),
    };
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 0.0 };
    let edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for &x in values {
        let k = if width > 0.0 { (((x - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[k] += 1;
    }
    StatSummary { mean, median: median(&sorted), histogram: Histogram { edges, counts } }
}

pub fn shift_report<T: Scalar>(
    policy: &ModelParams<T>,
    reference: &ModelParams<T>,
    source: EvalSource<'_>,
) -> Result<ShiftAnalysis> {
    if !policy.same_shape(reference) {
        return Err(Error::Config("policy and reference architectures differ".into()));
    }
    let sequences = match source {
        EvalSource::Dataset(d) => {
            check_vocab(policy, d)?;
            d.examples
                .iter()
                .map(|ex| sequence_shift(policy, reference, &ex.prompt, &ex.response, Some(ex.label.sign())))
                .collect::<Result<Vec<_>>>()?
        }
        EvalSource::Greedy { prompts, max_len } => {
            check_vocab(policy, prompts)?;
            if max_len == 0 {
                return Err(Error::Config("greedy max_len must be >= 1".into()));
            }
            let mut seen = std::collections::BTreeSet::new();
            let mut out = Vec::new();
            for ex in &prompts.examples {
                if !seen.insert(ex.prompt.clone()) {
                    continue;
                }
                let y = greedy_decode(policy, &ex.prompt, max_len)?;
                out.push(sequence_shift(policy, reference, &ex.prompt, &y, None)?);
            }
            out
        }
    };
    let pick = |f: fn(&ShiftReport) -> f64| sequences.iter().map(f).collect::<Vec<_>>();
    let pooled: Vec<f64> = sequences.iter().flat_map(|s| s.per_token_logit_shift.iter().copied()).collect();
    let summary = ShiftSummary {
        sequences: sequences.len(),
        delta_loglik: summarize(&pick(|s| s.delta_loglik), 10),
        delta_loglik_norm: summarize(&pick(|s| s.delta_loglik_norm), 10),
        logit_shift_raw: summarize(&pick(|s| s.logit_shift_raw), 10),
        logit_shift_norm: summarize(&pick(|s| s.logit_shift_norm), 10),
        pooled_gini_logit_shift: if pooled.is_empty() { None } else { gini_or_none(&pooled)? },
    };
    Ok(ShiftAnalysis { sequences, summary })
}

fn check_vocab<T: Scalar>(p: &ModelParams<T>, d: &Dataset) -> Result<()> {
    if p.vocab_size() != d.vocab_size {
        return Err(Error::Config(format!(
            "model vocab_size {} differs from dataset vocab_size {}",
            p.vocab_size(),
            d.vocab_size
        )));
    }
    Ok(())
}

impl ShiftAnalysis {
    /// One row per sequence; a null Gini is written as an empty cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "index,label,length,delta_loglik,delta_loglik_norm,logit_shift_raw,logit_shift_norm,gini_logit_shift\n",
        );
        for (k, s) in self.sequences.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k},{},{},{},{},{},{},{}",
                s.label.map(|l| l.to_string()).unwrap_or_default(),
                s.response.len(),
                s.delta_loglik,
                s.delta_loglik_norm,
                s.logit_shift_raw,
                s.logit_shift_norm,
                s.gini_logit_shift.map(|g| g.to_string()).unwrap_or_default(),
            );
        }
        out
    }

    /// Token-level log-likelihood shifts of every sequence, in order.
    pub fn token_deltas(&self) -> Vec<f64> {
        self.sequences.iter().flat_map(|s| s.per_token_delta.iter().copied()).collect()
    }
}

/// Linear-interpolation quantile of sorted data (`q ∈ [0, 1]`).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fractions of `other` falling in the ten decile bins of `anchor`.
///
/// Bins are left-closed and right-open; the first bin extends to −∞ and
/// the last to +∞ (right-closed).
pub fn decile_bin_map(anchor: &[f64], other: &[f64]) -> Result<[f64; 10]> {
    if anchor.len() < 10 {
        return Err(Error::Dimension(format!("anchor needs >= 10 tokens, got {}", anchor.len())));
    }
    if other.is_empty() {
        return Err(Error::Dimension("no tokens to bin".into()));
    }
    if anchor.iter().chain(other).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite token shift".into()));
    }
    let mut sorted = anchor.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..10).map(|k| quantile(&sorted, k as f64 / 10.0)).collect();
    let mut counts = [0usize; 10];
    for &x in other {
        counts[edges.partition_point(|&e| e <= x)] += 1;
    }
    let n = other.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseReport {
    pub threshold: f64,
    pub min_per_token_logp_l: Option<f64>,
    /// Step of the first value strictly below the threshold.
    pub first_crossing: Option<usize>,
    pub collapsed: bool,
}

/// Collapse diagnostics over the `mean_per_token_logp_l` column; NaN rows are skipped.
pub fn collapse_metrics(log: &MetricsLog, threshold: f64) -> Result<CollapseReport> {
    if log.rows.is_empty() {
        return Err(Error::Format("metrics log has no rows".into()));
    }
    let mut min: Option<f64> = None;
    let mut first = None;
    for r in &log.rows {
        let v = r.mean_per_token_logp_l;
        if v.is_nan() {
            continue;
        }
        min = Some(min.map_or(v, |m| m.min(v)));
        if first.is_none() && v < threshold {
            first = Some(r.step);
        }
    }
    Ok(CollapseReport { threshold, min_per_token_logp_l: min, first_crossing: first, collapsed: first.is_some() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_pairwise_dataset, PairwiseConfig};
    use crate::model::{init_params, Arch};
    use crate::numerics::SeededRng;
    use crate::trainer::MetricsRow;

    #[test]
    fn curve_values() {
        let bnf = derivative_curve(CurveKind::Bnf, 0.5, 99).unwrap();
        assert_eq!(bnf.len(), 99);
        assert_eq!(bnf[49].pi_theta, 0.5);
        assert_eq!(bnf[49].derivative_magnitude, 0.5);
        assert!(bnf[0].derivative_magnitude < 0.011);
        let nll = derivative_curve(CurveKind::Nll, 0.5, 9).unwrap();
        assert!((nll[7].derivative_magnitude - 0.2).abs() < 1e-15);
        assert!(bnf.windows(2).all(|w| w[0].pi_theta < w[1].pi_theta));
        assert!(matches!(derivative_curve(CurveKind::Bnf, 1.0, 9), Err(Error::Domain(_))));
        assert!(derivative_curve(CurveKind::Bnf, 0.5, 2).is_err());
    }

    #[test]
    fn curve_outputs() {
        let curves = vec![
            (CurveKind::Nll, derivative_curve(CurveKind::Nll, 0.3, 5).unwrap()),
            (CurveKind::Bnf, derivative_curve(CurveKind::Bnf, 0.3, 5).unwrap()),
        ];
        let csv = curves_to_csv(&curves);
        assert!(csv.starts_with("pi,nll,bnf\n"));
        assert_eq!(csv.lines().count(), 6);
        let svg = curves_to_svg(&curves, "derivative <vs> likelihood");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("&lt;vs&gt;"));
    }

    fn mlp(seed: u64) -> ModelParams<f64> {
        init_params(&mut SeededRng::new(seed), Arch::MlpPool, 8, 3, 4, 0.7).unwrap()
    }

    fn data() -> Dataset {
        gen_pairwise_dataset(
            &mut SeededRng::new(4),
            &PairwiseConfig { n_pairs: 6, vocab_size: 8, prompt_len: 3, resp_len: 5, teacher_sharpness: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn shift_identity_is_zero() {
        let m = mlp(1);
        let d = data();
        let a = shift_report(&m, &m, EvalSource::Dataset(&d)).unwrap();
        for s in &a.sequences {
            assert_eq!(s.delta_loglik, 0.0);
            assert_eq!(s.logit_shift_raw, 0.0);
            assert!(s.per_token_delta.iter().all(|&v| v == 0.0));
            assert_eq!(s.gini_logit_shift, None);
        }
        assert_eq!(a.summary.pooled_gini_logit_shift, None);
    }

    #[test]
    fn shift_telescopes() {
        let d = data();
        let a = shift_report(&mlp(1), &mlp(2), EvalSource::Dataset(&d)).unwrap();
        for s in &a.sequences {
            let sum: f64 = s.per_token_delta.iter().sum();
            assert!((sum - s.delta_loglik).abs() < 1e-9);
            assert!(s.logit_shift_raw >= 0.0 && s.logit_shift_norm >= 0.0);
        }
        let g = shift_report(&mlp(1), &mlp(2), EvalSource::Greedy { prompts: &d, max_len: 4 }).unwrap();
        assert_eq!(g.sequences.len(), 6);
        assert!(g.sequences.iter().all(|s| s.response.len() == 4 && s.label.is_none()));
        assert_eq!(g.to_csv().lines().count(), 7);
    }

    #[test]
    fn shift_hand_computed() {
        use crate::model::ModelParams;
        let mut p = ModelParams::<f64>::zeros(Arch::TabularBigram, 2, 0, 0).unwrap();
        let r = ModelParams::<f64>::zeros(Arch::TabularBigram, 2, 0, 0).unwrap();
        // B = [[1, 0], [0, -3]]
        p.block_mut("B").copy_from_slice(&[1.0, 0.0, 0.0, -3.0]);
        let s = sequence_shift(&p, &r, &[0], &[1, 1], None).unwrap();
        // row 0 uses B[0] = [1, 0]: |Δ| mean = 0.5; row 1 uses B[1] = [0, -3]: 1.5
        assert_eq!(s.per_token_logit_shift, vec![0.5, 1.5]);
        assert_eq!(s.logit_shift_raw, 2.0);
        assert_eq!(s.logit_shift_norm, 1.0);
        // gini([0.5, 1.5]) = |0.5-1.5|*2 / (2*4*1) = 0.25
        assert!((s.gini_logit_shift.unwrap() - 0.25).abs() < 1e-15);
        let lp0 = 0.0 - (1f64.exp() + 1.0).ln();
        let lp1 = -3.0 - (1.0 + (-3f64).exp()).ln();
        let expect = lp0 + lp1 - 2.0 * (0.5f64).ln();
        assert!((s.delta_loglik - expect).abs() < 1e-14);
    }

    #[test]
    fn decile_self_binning() {
        let anchor: Vec<f64> = (0..200).map(|k| ((k * 37) % 200) as f64 * 0.01 - 1.0).collect();
        let bins = decile_bin_map(&anchor, &anchor).unwrap();
        for b in bins {
            assert!((b - 0.1).abs() < 1e-12);
        }
        assert!((bins.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut sorted = anchor.clone();
        sorted.sort_by(f64::total_cmp);
        let med = quantile(&sorted, 0.5);
        let mid = decile_bin_map(&anchor, &vec![med; 50]).unwrap();
        assert_eq!(mid[4] + mid[5], 1.0);
        assert!(decile_bin_map(&anchor[..9], &anchor).is_err());
        assert!(decile_bin_map(&anchor, &[]).is_err());
    }

    fn log_of(values: &[f64]) -> MetricsLog {
        MetricsLog {
            rows: values
                .iter()
                .enumerate()
                .map(|(step, &v)| MetricsRow {
                    step,
                    loss: 0.0,
                    lr: 0.0,
                    mean_logp_w: 0.0,
                    mean_logp_l: 0.0,
                    mean_per_token_logp_l: v,
                })
                .collect(),
        }
    }

    #[test]
    fn collapse_cases() {
        let flat = collapse_metrics(&log_of(&[-1.5; 20]), COLLAPSE_THRESHOLD).unwrap();
        assert!(!flat.collapsed);
        assert_eq!(flat.min_per_token_logp_l, Some(-1.5));
        let ramp: Vec<f64> = (0..60).map(|k| -(k as f64) * 10.0 / 36.5).collect();
        let r = collapse_metrics(&log_of(&ramp), COLLAPSE_THRESHOLD).unwrap();
        assert_eq!(r.first_crossing, Some(37));
        assert!(r.collapsed);
        let r5 = collapse_metrics(&log_of(&ramp), -5.0).unwrap();
        assert_eq!(r5.first_crossing, Some(19));
        let f5 = collapse_metrics(&log_of(&[-1.5; 4]), -1.0).unwrap();
        assert!(f5.collapsed);
        assert!(matches!(collapse_metrics(&MetricsLog::default(), -10.0), Err(Error::Format(_))));
    }
}
