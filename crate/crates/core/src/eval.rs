//! Evaluation metrics: rank AUROC, macro one-vs-rest AUROC, MAE, and the
//! z-score transform used for regression targets.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve from the Mann-Whitney statistic. Ties between a
/// positive and a negative count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc", format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("auroc score {bad}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!("AUROC needs both classes, got {n_pos} positive and {n_neg} negative")));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Per-class one-vs-rest AUROC and their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroAuroc {
    pub value: f64,
    /// `None` for classes absent from the labels (or present everywhere).
    pub per_class: Vec<Option<f64>>,
}

/// `scores` is row-major `n x k`. Classes that cannot be evaluated are left
/// out of the mean with a warning; if none can, the metric is undefined.
pub fn auroc_macro_ovr(scores: &[f64], k: usize, labels: &[u16]) -> Result<MacroAuroc> {
    if k < 2 || scores.len() != labels.len() * k {
        return Err(Error::shape("auroc_macro_ovr", format!("{} scores for {} rows and {k} classes", scores.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::LabelMismatch(format!("class {bad} with only {k} classes")));
    }
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let col: Vec<f64> = scores.iter().skip(c).step_by(k).copied().collect();
        let y: Vec<bool> = labels.iter().map(|&l| l as usize == c).collect();
        match auroc(&col, &y) {
            Ok(v) => per_class.push(Some(v)),
            Err(Error::UndefinedMetric(why)) => {
                log::warn!("class {c} left out of macro AUROC: {why}");
                per_class.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric("no class has both positives and negatives".into()));
    }
    Ok(MacroAuroc { value: defined.iter().sum::<f64>() / defined.len() as f64, per_class })
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("mae", format!("{} predictions, {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("MAE of an empty set".into()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Affine map fitted on training targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    /// Population statistics of `y`; a constant vector gets `std = 1` so the
    /// transform stays invertible.
    pub fn fit(y: &[f64]) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::UndefinedMetric("z-score of an empty set".into()));
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One row of a metrics CSV: `task,metric,value,n,seed`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} = {:.6} (n = {}, seed = {})", self.task, self.metric, self.value, self.n, self.seed)
    }
}

pub fn write_metrics_csv<W: std::io::Write>(out: W, rows: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn small_cases() {
        assert_eq!(auroc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(auroc(&[0.1], &[true, false]).is_err());
        assert!(auroc(&[f64::NAN, 0.0], &[true, false]).is_err());
    }

    #[test]
    fn matches_pairwise_oracle() {
        let mut rng = crate::numeric::stream(7, &[]);
        let scores: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() * 20.0).round() / 20.0).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.4)).collect();
        assert!((auroc(&scores, &labels).unwrap() - pairwise(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn macro_reduces_to_binary() {
        let p1 = [0.2, 0.7, 0.4, 0.9, 0.1];
        let y = [0u16, 1, 0, 1, 1];
        let scores: Vec<f64> = p1.iter().flat_map(|&p| [1.0 - p, p]).collect();
        let m = auroc_macro_ovr(&scores, 2, &y).unwrap();
        let b = auroc(&p1, &y.map(|c| c == 1)).unwrap();
        assert!((m.per_class[1].unwrap() - b).abs() < 1e-15);
        assert!((m.value - b).abs() < 1e-15);
    }

    #[test]
    fn macro_skips_absent_class() {
        let scores = [0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.7, 0.2, 0.1];
        let m = auroc_macro_ovr(&scores, 3, &[0, 1, 0]).unwrap();
        assert_eq!(m.per_class[2], None);
        assert_eq!(m.value, (m.per_class[0].unwrap() + m.per_class[1].unwrap()) / 2.0);
        assert!(auroc_macro_ovr(&scores, 3, &[0, 3, 0]).is_err());
    }

    #[test]
    fn mae_and_zscore() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        let y = [3.0, -1.5, 7.25, 0.0];
        let z = ZScore::fit(&y).unwrap();
        for v in y {
            assert!((z.denormalize(z.normalize(v)) - v).abs() < 1e-12);
        }
        assert_eq!(ZScore::fit(&[2.0, 2.0]).unwrap().std, 1.0);
    }

    #[test]
    fn metrics_csv_header() {
        let mut buf = Vec::new();
        let row = MetricReport { task: "binary".into(), metric: "auroc".into(), value: 0.75, n: 64, seed: 1 };
        write_metrics_csv(&mut buf, &[row]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "task,metric,value,n,seed\nbinary,auroc,0.75,64,1\n");
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(s in prop::collection::vec(-5.0f64..5.0, 4..60), seed in any::<u64>()) {
            let mut rng = crate::numeric::stream(seed, &[]);
            let mut y: Vec<bool> = s.iter().map(|_| rng.random_bool(0.5)).collect();
            y[0] = true;
            y[1] = false;
            let a = auroc(&s, &y).unwrap();
            let t: Vec<f64> = s.iter().map(|v| (0.7 * v).exp() + 3.0 * v).collect();
            prop_assert!((a - auroc(&t, &y).unwrap()).abs() < 1e-12);
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((a + auroc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
