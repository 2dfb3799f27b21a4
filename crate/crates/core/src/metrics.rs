//! Evaluation metrics: proper-scoring negative log-likelihood for both
//! tasks, classification ECE over reliability bins, regression
//! interval-calibration error, MAE, accuracy, and plot-ready reliability
//! curves.

use crate::error::{contract, Result};
use crate::predictive::Predictive;
use crate::stats;
use crate::tensor::Tensor;
use serde::Serialize;

/// Default reliability-bin count for both tasks.
pub const DEFAULT_BINS: usize = 10;

/// Probabilities below this are clamped before taking logs.
const PROB_FLOOR: f64 = 1e-300;

/// One confidence bin of a classification reliability diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityBin {
    /// 1-based bin index; bin `b` covers confidences in `((b-1)/B, b/B]`.
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

/// One row of a plot-ready reliability curve. For classification,
/// `confidence` is the bin-average max probability and `accuracy` the bin
/// accuracy; for regression, the nominal coverage level and the observed
/// coverage. The ideal curve is the diagonal `accuracy = confidence`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub bin: usize,
    pub confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Metrics for one evaluation run; only task-applicable fields are set.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub severity: Option<f64>,
    pub nll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ece: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ce_reg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub reliability: Vec<CurvePoint>,
}

fn check_rows_are_distributions(probs: &Tensor) -> Result<()> {
    for i in 0..probs.rows() {
        let row = probs.row_slice(i);
        if row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
            return Err(contract(format!("row {i} has probabilities outside [0, 1]")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(contract(format!("row {i} sums to {s}, not 1")));
        }
    }
    Ok(())
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(contract(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Argmax class of one probability row, breaking ties toward the lowest
/// index.
fn predicted_class(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = c;
        }
    }
    best
}

/// Mean categorical negative log-likelihood, probabilities clamped at
/// 1e-300 so a confidently wrong prediction stays finite.
pub fn nll_classification(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() || probs.rows() == 0 {
        return Err(contract("need one label per probability row"));
    }
    check_rows_are_distributions(probs)?;
    check_labels(labels, probs.cols())?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs.at(i, l).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean Gaussian (or mixture) negative log-likelihood of the targets.
pub fn nll_regression(pred: &Predictive, y: &[f64]) -> Result<f64> {
    match pred {
        Predictive::Categorical(_) => {
            return Err(contract("regression likelihood asked of a categorical prediction"))
        }
        Predictive::Gaussian(g) => {
            if g.vars.iter().any(|&v| v <= 0.0) {
                return Err(contract("non-positive predictive variance"));
            }
        }
        Predictive::Mixture { components, .. } => {
            for c in components {
                if c.vars.iter().any(|&v| v <= 0.0) {
                    return Err(contract("non-positive predictive variance"));
                }
            }
        }
    }
    if pred.len() != y.len() || y.is_empty() {
        return Err(contract("need one target per predictive marginal"));
    }
    let lp = pred.log_density(y)?;
    Ok(-lp.iter().sum::<f64>() / y.len() as f64)
}

/// Expected calibration error with `bins` equal-width confidence bins.
/// Bin `b` collects points whose max probability lies in
/// `((b-1)/B, b/B]`; the score is `sum_b (|B_b|/N) |acc_b - conf_b|`.
/// Returns all `bins` bins, empty ones with zero count.
pub fn ece_classification(
    probs: &Tensor,
    labels: &[usize],
    bins: usize,
) -> Result<(f64, Vec<ReliabilityBin>)> {
    if bins == 0 {
        return Err(contract("need at least one confidence bin"));
    }
    if probs.rows() != labels.len() || probs.rows() == 0 {
        return Err(contract("need one label per probability row"));
    }
    check_rows_are_distributions(probs)?;
    check_labels(labels, probs.cols())?;
    let n = probs.rows();
    let mut counts = vec![0usize; bins];
    let mut hits = vec![0usize; bins];
    let mut conf_sums = vec![0.0; bins];
    for i in 0..n {
        let row = probs.row_slice(i);
        let class = predicted_class(row);
        let conf = row[class];
        let b = ((conf * bins as f64).ceil() as usize).saturating_sub(1).min(bins - 1);
        counts[b] += 1;
        conf_sums[b] += conf;
        if class == labels[i] {
            hits[b] += 1;
        }
    }
    let mut ece = 0.0;
    let mut table = Vec::with_capacity(bins);
    for b in 0..bins {
        let (accuracy, confidence) = if counts[b] == 0 {
            (0.0, 0.0)
        } else {
            (hits[b] as f64 / counts[b] as f64, conf_sums[b] / counts[b] as f64)
        };
        ece += counts[b] as f64 / n as f64 * (accuracy - confidence).abs();
        table.push(ReliabilityBin {
            bin: b + 1,
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            count: counts[b],
            accuracy,
            confidence,
        });
    }
    Ok((ece, table))
}

/// Interval-calibration error for regression over the coverage grid
/// `alpha_k = k/(B+1)`. Each level checks the central interval
/// `[mu - z sigma, mu + z sigma]` with `z = Phi^-1((1 + alpha)/2)`; the
/// score is the mean absolute gap between nominal and observed coverage.
pub fn regression_calibration(
    means: &[f64],
    stds: &[f64],
    y: &[f64],
    bins: usize,
) -> Result<(f64, Vec<CurvePoint>)> {
    if bins == 0 {
        return Err(contract("need at least one coverage level"));
    }
    if means.len() != stds.len() || means.len() != y.len() || y.is_empty() {
        return Err(contract("need matched nonempty means, stds, and targets"));
    }
    if stds.iter().any(|&s| !(s > 0.0)) {
        return Err(contract("predictive standard deviations must be positive"));
    }
    let n = y.len() as f64;
    let mut ce = 0.0;
    let mut table = Vec::with_capacity(bins);
    for k in 1..=bins {
        let alpha = k as f64 / (bins + 1) as f64;
        let z = stats::central_interval_z(alpha).abs();
        let covered = y
            .iter()
            .zip(means.iter().zip(stds))
            .filter(|(&yi, (&m, &s))| (m - z * s..=m + z * s).contains(&yi))
            .count();
        let coverage = covered as f64 / n;
        ce += (alpha - coverage).abs();
        table.push(CurvePoint { bin: k, confidence: alpha, accuracy: coverage, count: y.len() });
    }
    Ok((ce / bins as f64, table))
}

/// Mean absolute error.
pub fn mae(preds: &[f64], y: &[f64]) -> Result<f64> {
    if preds.len() != y.len() || y.is_empty() {
        return Err(contract("need matched nonempty predictions and targets"));
    }
    Ok(preds.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64)
}

/// Fraction of points whose argmax class (lowest index on ties) matches
/// the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() || probs.rows() == 0 {
        return Err(contract("need one label per probability row"));
    }
    check_labels(labels, probs.cols())?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| predicted_class(probs.row_slice(i)) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Truth values for a reliability curve: class labels or regression
/// targets.
pub enum CurveTruth<'a> {
    Labels(&'a [usize]),
    Targets(&'a [f64]),
}

/// Plot-ready reliability curve: non-empty classification bins sorted by
/// bin-average confidence, or per-level regression coverage. At most
/// `bins` rows.
pub fn reliability_curve(
    pred: &Predictive,
    truth: &CurveTruth,
    bins: usize,
) -> Result<Vec<CurvePoint>> {
    match (pred, truth) {
        (Predictive::Categorical(probs), CurveTruth::Labels(labels)) => {
            let (_, table) = ece_classification(probs, labels, bins)?;
            let mut rows: Vec<CurvePoint> = table
                .into_iter()
                .filter(|b| b.count > 0)
                .map(|b| CurvePoint {
                    bin: b.bin,
                    confidence: b.confidence,
                    accuracy: b.accuracy,
                    count: b.count,
                })
                .collect();
            rows.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
            Ok(rows)
        }
        (Predictive::Categorical(_), CurveTruth::Targets(_)) => {
            Err(contract("categorical prediction needs class labels"))
        }
        (_, CurveTruth::Targets(y)) => {
            let (means, vars) = pred.mean_var()?;
            let stds: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();
            let (_, table) = regression_calibration(&means, &stds, y, bins)?;
            Ok(table)
        }
        (_, CurveTruth::Labels(_)) => {
            Err(contract("regression prediction needs scalar targets"))
        }
    }
}

/// Serialize curve rows as CSV with header `bin,confidence,accuracy,count`.
pub fn reliability_csv(rows: &[CurvePoint]) -> String {
    let mut out = String::from("bin,confidence,accuracy,count\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.bin, r.confidence, r.accuracy, r.count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GaussianMarginals;
    use crate::seeding;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn one_hot_rows(labels: &[usize], classes: usize) -> Tensor {
        let mut t = Tensor::zeros(labels.len(), classes);
        for (i, &l) in labels.iter().enumerate() {
            t.set(i, l, 1.0);
        }
        t
    }

    #[test]
    fn certain_correct_predictions_have_zero_nll() {
        let labels = [0usize, 2, 1, 1];
        let probs = one_hot_rows(&labels, 3);
        assert_eq!(nll_classification(&probs, &labels).unwrap(), 0.0);
    }

    #[test]
    fn half_confidence_costs_log_two() {
        let probs = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let nll = nll_classification(&probs, &[0, 1]).unwrap();
        assert!((nll - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn classification_nll_is_permutation_invariant() {
        let probs = Tensor::from_rows(&[
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.3, 0.3, 0.4],
            vec![0.25, 0.5, 0.25],
        ]);
        let labels = [0usize, 1, 2, 0];
        let perm = [2usize, 0, 3, 1];
        let probs_p = Tensor::from_rows(
            &perm.iter().map(|&i| probs.row_slice(i).to_vec()).collect::<Vec<_>>(),
        );
        let labels_p: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let a = nll_classification(&probs, &labels).unwrap();
        let b = nll_classification(&probs_p, &labels_p).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_on_truth_is_clamped_finite() {
        let probs = Tensor::from_rows(&[vec![1.0, 0.0]]);
        let nll = nll_classification(&probs, &[1]).unwrap();
        assert!(nll.is_finite());
        assert!((nll + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let probs = Tensor::from_rows(&[vec![0.6, 0.6]]);
        assert!(nll_classification(&probs, &[0]).is_err());
        let probs = one_hot_rows(&[0], 2);
        assert!(nll_classification(&probs, &[2]).is_err());
        assert!(nll_classification(&probs, &[0, 1]).is_err());
    }

    #[test]
    fn matched_gaussian_with_inverse_two_pi_variance_scores_zero() {
        let var = 1.0 / (2.0 * std::f64::consts::PI);
        let pred = Predictive::Gaussian(GaussianMarginals::new(vec![0.4, -1.2], vec![var, var]).unwrap());
        let nll = nll_regression(&pred, &[0.4, -1.2]).unwrap();
        assert!(nll.abs() < 1e-12);
    }

    #[test]
    fn single_component_mixture_matches_gaussian_bitwise() {
        let means = vec![0.3, -0.7, 1.9];
        let vars = vec![0.5, 1.2, 0.05];
        let y = [0.1, -0.2, 2.0];
        let g = Predictive::Gaussian(GaussianMarginals::new(means.clone(), vars.clone()).unwrap());
        let m = Predictive::mixture(
            vec![1.0],
            vec![GaussianMarginals::new(means, vars).unwrap()],
        )
        .unwrap();
        let a = nll_regression(&g, &y).unwrap();
        let b = nll_regression(&m, &y).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn mixture_nll_matches_direct_density_evaluation() {
        let w = vec![0.2, 0.5, 0.3];
        let comps = vec![
            GaussianMarginals::new(vec![0.0], vec![1.0]).unwrap(),
            GaussianMarginals::new(vec![1.5], vec![0.3]).unwrap(),
            GaussianMarginals::new(vec![-0.8], vec![2.0]).unwrap(),
        ];
        let pred = Predictive::mixture(w.clone(), comps.clone()).unwrap();
        let y = 0.6;
        let density: f64 = w
            .iter()
            .zip(&comps)
            .map(|(&wj, c)| wj * stats::gaussian_logpdf(y, c.means[0], c.vars[0]).exp())
            .sum();
        let nll = nll_regression(&pred, &[y]).unwrap();
        assert!((nll - (-density.ln())).abs() < 1e-10);
    }

    #[test]
    fn mixture_nll_respects_log_sum_exp_bound() {
        let mut rng = seeding::substream(7, "metrics-test", 0);
        let n = 50;
        let w = vec![0.25, 0.4, 0.35];
        let comps: Vec<GaussianMarginals> = (0..3)
            .map(|_| {
                let means: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let vars: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
                GaussianMarginals::new(means, vars).unwrap()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mix = Predictive::mixture(w.clone(), comps.clone()).unwrap();
        let nll_mix = nll_regression(&mix, &y).unwrap();
        let best = comps
            .iter()
            .zip(&w)
            .map(|(c, &wj)| {
                let nll = nll_regression(&Predictive::Gaussian(c.clone()), &y).unwrap();
                nll - wj.ln()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(nll_mix <= best + 1e-12, "mixture {nll_mix} vs bound {best}");
    }

    #[test]
    fn certain_and_correct_gives_zero_ece() {
        let labels = [0usize, 1, 0, 1];
        let probs = one_hot_rows(&labels, 2);
        let (ece, bins) = ece_classification(&probs, &labels, 10).unwrap();
        assert_eq!(ece, 0.0);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(bins[9].count, 4);
    }

    #[test]
    fn certain_but_half_right_gives_half_ece() {
        let probs = one_hot_rows(&[0usize, 0, 0, 0], 2);
        let (ece, _) = ece_classification(&probs, &[0, 1, 0, 1], 10).unwrap();
        assert!((ece - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bin_assignment_uses_half_open_upper_inclusive_intervals() {
        // confidences exactly on 0.6 and just above land in bins 6 and 7
        let probs = Tensor::from_rows(&[vec![0.6, 0.4], vec![0.6000001, 0.3999999]]);
        let (_, bins) = ece_classification(&probs, &[0, 0], 10).unwrap();
        assert_eq!(bins[5].count, 1);
        assert_eq!(bins[6].count, 1);
    }

    #[test]
    fn calibrated_sampling_oracle_keeps_ece_small() {
        let mut rng = seeding::substream(11, "metrics-test", 1);
        let n = 100_000;
        let mut probs = Tensor::zeros(n, 3);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.05).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|r| r / s).collect();
            let u: f64 = rng.random();
            let label = if u < p[0] {
                0
            } else if u < p[0] + p[1] {
                1
            } else {
                2
            };
            for c in 0..3 {
                probs.set(i, c, p[c]);
            }
            labels.push(label);
        }
        let (ece, bins) = ece_classification(&probs, &labels, 10).unwrap();
        assert!(ece <= 0.01, "ece {ece}");
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), n);
    }

    #[test]
    fn interval_z_boundary_separates_covered_from_uncovered() {
        // with B = 19 the level alpha_19 = 0.95 uses z = 1.95996; targets
        // straddling mu +/- z sigma land inside and outside that interval
        let means = vec![0.0, 0.0];
        let stds = vec![1.0, 1.0];
        let y = vec![1.9599, 1.9601];
        let (_, table) = regression_calibration(&means, &stds, &y, 19).unwrap();
        let row = &table[18];
        assert!((row.confidence - 0.95).abs() < 1e-12);
        assert!((row.accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn targets_at_the_mean_cover_every_interval() {
        let means = vec![0.3, -1.0, 2.0];
        let stds = vec![0.5, 1.0, 2.0];
        let (ce, table) = regression_calibration(&means, &stds, &means, 10).unwrap();
        for row in &table {
            assert_eq!(row.accuracy, 1.0);
        }
        // mean(1 - k/11) over k = 1..10 is exactly 1/2
        assert!((ce - 0.5).abs() < 1e-12);
    }

    #[test]
    fn calibrated_regression_oracle_keeps_ce_small() {
        let mut rng = seeding::substream(13, "metrics-test", 2);
        let n = 100_000;
        let mut means = Vec::with_capacity(n);
        let mut stds = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let m = 2.0 * rng.random::<f64>() - 1.0;
            let s = 0.3 + rng.random::<f64>();
            let e: f64 = rng.sample(StandardNormal);
            means.push(m);
            stds.push(s);
            y.push(m + s * e);
        }
        let (ce, _) = regression_calibration(&means, &stds, &y, 10).unwrap();
        assert!(ce <= 0.02, "ce {ce}");
    }

    #[test]
    fn mae_basics() {
        let y = [0.5, -1.0, 2.0];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        let off: Vec<f64> = y.iter().map(|v| v + 1.0).collect();
        assert!((mae(&off, &y).unwrap() - 1.0).abs() < 1e-15);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_breaks_ties_toward_the_lowest_class() {
        let probs = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(accuracy(&probs, &[0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&probs, &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn curve_rows_are_sorted_bounded_and_near_the_diagonal() {
        let mut rng = seeding::substream(17, "metrics-test", 3);
        let n = 100_000;
        let mut probs = Tensor::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let p = 0.5 + 0.5 * rng.random::<f64>();
            probs.set(i, 0, p);
            probs.set(i, 1, 1.0 - p);
            labels.push(if rng.random::<f64>() < p { 0 } else { 1 });
        }
        let pred = Predictive::Categorical(probs);
        let rows = reliability_curve(&pred, &CurveTruth::Labels(&labels), 10).unwrap();
        assert!(rows.len() <= 10);
        for pair in rows.windows(2) {
            assert!(pair[0].confidence <= pair[1].confidence);
        }
        for row in &rows {
            assert!((row.accuracy - row.confidence).abs() <= 0.02, "row {row:?}");
        }
    }

    #[test]
    fn regression_curve_uses_coverage_levels() {
        let pred = Predictive::Gaussian(
            GaussianMarginals::new(vec![0.0, 1.0], vec![1.0, 4.0]).unwrap(),
        );
        let rows = reliability_curve(&pred, &CurveTruth::Targets(&[0.1, 0.9]), 5).unwrap();
        assert_eq!(rows.len(), 5);
        assert!((rows[0].confidence - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(rows[4].accuracy, 1.0);
    }

    #[test]
    fn csv_serialization_has_the_pinned_header() {
        let rows = vec![CurvePoint { bin: 1, confidence: 0.25, accuracy: 0.3, count: 7 }];
        let csv = reliability_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("bin,confidence,accuracy,count"));
        assert_eq!(lines.next(), Some("1,0.25,0.3,7"));
    }

    #[test]
    fn report_serializes_only_applicable_fields() {
        let report = MetricReport {
            model: "dgp".into(),
            dataset: "synthetic-regression".into(),
            seed: 3,
            severity: None,
            nll: 1.25,
            ece: None,
            ce_reg: Some(0.08),
            mae: Some(0.4),
            accuracy: None,
            reliability: vec![],
        };
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"ce_reg\":0.08"));
        assert!(!json.contains("ece"));
        assert!(!json.contains("accuracy"));
        assert!(!json.contains("severity"));
    }
}
