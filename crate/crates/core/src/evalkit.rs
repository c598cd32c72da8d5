//! Confusion matrices, accuracy, ROC sweeps and trapezoidal AUC.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ground-truth case of a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameLabel {
    Normal,
    AnomalyNonHazard,
    Hazard,
}

impl FrameLabel {
    pub const ALL: [FrameLabel; 3] = [
        FrameLabel::Normal,
        FrameLabel::AnomalyNonHazard,
        FrameLabel::Hazard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FrameLabel::Normal => "normal",
            FrameLabel::AnomalyNonHazard => "anomaly_nonhazard",
            FrameLabel::Hazard => "hazard",
        }
    }

    /// Positive class of the anomaly ROC: anything but `Normal`.
    pub fn is_anomaly(self) -> bool {
        self != FrameLabel::Normal
    }

    /// Positive class of the hazard confusion matrix: only `Hazard`.
    pub fn is_hazard(self) -> bool {
        self == FrameLabel::Hazard
    }
}

impl fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrameLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FrameLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown label {s:?}")))
    }
}

/// Hazard-vs-non-hazard counts. `Normal` and `AnomalyNonHazard` both count
/// as non-hazard ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub true_nonhazard: u64,
    pub false_hazard: u64,
    pub false_nonhazard: u64,
    pub true_hazard: u64,
}

pub const BINARIZATION_NOTE: &str =
    "positive = hazard; normal and anomaly_nonhazard count as non-hazard";

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_nonhazard + self.false_hazard + self.false_nonhazard + self.true_hazard
    }

    /// Machine-readable line `cm,tn,fh,fn,th,accuracy`.
    pub fn csv_line(&self) -> Result<String> {
        Ok(format!(
            "cm,{},{},{},{},{:.3}",
            self.true_nonhazard,
            self.false_hazard,
            self.false_nonhazard,
            self.true_hazard,
            accuracy(self)?
        ))
    }

    pub fn report(&self) -> Result<String> {
        Ok(format!(
            "binarization: {BINARIZATION_NOTE}\n\
             true non-hazardous:  {}\n\
             false hazardous:     {}\n\
             false non-hazardous: {}\n\
             true hazardous:      {}\n\
             accuracy:            {:.3}\n",
            self.true_nonhazard,
            self.false_hazard,
            self.false_nonhazard,
            self.true_hazard,
            accuracy(self)?
        ))
    }
}

/// Builds the matrix from per-frame hazard predictions.
pub fn confusion_matrix(
    predicted_hazard: &[bool],
    labels: &[FrameLabel],
) -> Result<ConfusionMatrix> {
    if predicted_hazard.len() != labels.len() {
        return Err(Error::dim(
            "label count",
            predicted_hazard.len(),
            labels.len(),
        ));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, l) in predicted_hazard.iter().zip(labels) {
        match (p, l.is_hazard()) {
            (false, false) => cm.true_nonhazard += 1,
            (true, false) => cm.false_hazard += 1,
            (false, true) => cm.false_nonhazard += 1,
            (true, true) => cm.true_hazard += 1,
        }
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument(
            "accuracy of an empty confusion matrix".into(),
        ));
    }
    Ok((cm.true_nonhazard + cm.true_hazard) as f64 / total as f64)
}

/// Relative drop in false hazards from `before` to `after`.
pub fn false_hazard_reduction(before: &ConfusionMatrix, after: &ConfusionMatrix) -> Result<f64> {
    if before.false_hazard == 0 {
        return Err(Error::Argument("no false hazards to reduce".into()));
    }
    Ok((before.false_hazard as f64 - after.false_hazard as f64) / before.false_hazard as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
}

pub const ROC_NOTE: &str =
    "positive = anomaly (score >= threshold); ground truth positive = label != normal";

/// `count` evenly spaced thresholds over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Default sweep: 50 thresholds over `[10, 500]`.
pub fn default_thresholds() -> Vec<f64> {
    linspace(10.0, 500.0, 50)
}

/// One ROC point per threshold; a frame is predicted anomalous when its
/// score is at least the threshold.
pub fn roc_curve(scores: &[f64], labels: &[bool], thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::dim("label count", scores.len(), labels.len()));
    }
    if thresholds.is_empty() {
        return Err(Error::Argument("no thresholds given".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Evaluation(
            "ROC needs both positive and negative labels".into(),
        ));
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&s, &l) in scores.iter().zip(labels) {
                if s >= t {
                    if l {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            RocPoint {
                threshold: t,
                true_positive_rate: tp as f64 / positives as f64,
                false_positive_rate: fp as f64 / negatives as f64,
            }
        })
        .collect())
}

/// Thresholds at every distinct score plus one above the maximum, giving the
/// exact empirical curve.
pub fn exact_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = scores.to_vec();
    t.sort_by(f64::total_cmp);
    t.dedup();
    if let Some(&last) = t.last() {
        t.push(if last.is_finite() {
            last.abs() * 2.0 + 1.0
        } else {
            last
        });
    }
    t
}

/// Trapezoidal area under the curve, with `(0,0)` and `(1,1)` added.
pub fn auc(points: &[RocPoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Argument(format!(
            "AUC needs at least 2 points, got {}",
            points.len()
        )));
    }
    let mut xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.false_positive_rate, p.true_positive_rate))
        .collect();
    xy.push((0.0, 0.0));
    xy.push((1.0, 1.0));
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let area: f64 = xy
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum();
    Ok(area.clamp(0.0, 1.0))
}

/// Lines `threshold,fpr,tpr` with a header.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{}\n",
            p.threshold, p.false_positive_rate, p.true_positive_rate
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cells(tn: u64, fh: u64, fnh: u64, th: u64) -> ConfusionMatrix {
        ConfusionMatrix {
            true_nonhazard: tn,
            false_hazard: fh,
            false_nonhazard: fnh,
            true_hazard: th,
        }
    }

    #[test]
    fn table_two_accuracy() {
        let cm = cells(2465, 189, 141, 1031);
        assert_eq!(cm.total(), 3826);
        let a = accuracy(&cm).unwrap();
        assert_eq!(a, 3496.0 / 3826.0);
        assert_eq!(format!("{:.1}", a * 100.0), "91.4");
        assert_eq!(cm.csv_line().unwrap(), "cm,2465,189,141,1031,0.914");
    }

    #[test]
    fn table_one_accuracy_and_reduction() {
        let before = cells(2428, 226, 141, 1031);
        let a = accuracy(&before).unwrap();
        assert_eq!(a, 3459.0 / 3826.0);
        assert_eq!(format!("{:.1}", a * 100.0), "90.4");
        let after = cells(2465, 189, 141, 1031);
        let r = false_hazard_reduction(&before, &after).unwrap();
        assert_eq!(r, 37.0 / 226.0);
        assert_eq!(format!("{:.0}", r * 100.0), "16");
    }

    #[test]
    fn perfect_predictions() {
        let labels = [
            FrameLabel::Normal,
            FrameLabel::Hazard,
            FrameLabel::AnomalyNonHazard,
            FrameLabel::Hazard,
            FrameLabel::Normal,
            FrameLabel::Normal,
            FrameLabel::AnomalyNonHazard,
            FrameLabel::Hazard,
            FrameLabel::Normal,
            FrameLabel::Normal,
        ];
        let preds: Vec<bool> = labels.iter().map(|l| l.is_hazard()).collect();
        let cm = confusion_matrix(&preds, &labels).unwrap();
        assert_eq!((cm.false_hazard, cm.false_nonhazard), (0, 0));
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        assert!(confusion_matrix(&preds[..3], &labels).is_err());
        assert!(matches!(
            accuracy(&ConfusionMatrix::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn label_parsing() {
        for l in FrameLabel::ALL {
            assert_eq!(l.as_str().parse::<FrameLabel>().unwrap(), l);
        }
        assert!("crack".parse::<FrameLabel>().is_err());
    }

    #[test]
    fn four_score_curve() {
        let pts = roc_curve(
            &[1.0, 2.0, 3.0, 4.0],
            &[false, false, true, true],
            &[0.0, 2.5, 5.0],
        )
        .unwrap();
        let xy: Vec<(f64, f64)> = pts
            .iter()
            .map(|p| (p.true_positive_rate, p.false_positive_rate))
            .collect();
        assert_eq!(xy, [(1.0, 1.0), (1.0, 0.0), (0.0, 0.0)]);
        assert_eq!(auc(&pts).unwrap(), 1.0);
    }

    #[test]
    fn tied_scores_give_chance() {
        let scores = [5.0; 6];
        let labels = [true, false, true, false, true, false];
        let pts = roc_curve(&scores, &labels, &exact_thresholds(&scores)).unwrap();
        assert_eq!(auc(&pts).unwrap(), 0.5);
    }

    #[test]
    fn roc_errors() {
        assert!(matches!(
            roc_curve(&[1.0, 2.0], &[true, true], &[1.0]),
            Err(Error::Evaluation(_))
        ));
        assert!(roc_curve(&[1.0, 2.0], &[true, false], &[]).is_err());
        assert!(matches!(auc(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn default_sweep() {
        let t = default_thresholds();
        assert_eq!(t.len(), 50);
        assert_eq!(t[0], 10.0);
        assert_eq!(t[49], 500.0);
        assert!((t[1] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let pts = [RocPoint {
            threshold: 10.0,
            true_positive_rate: 1.0,
            false_positive_rate: 0.5,
        }];
        assert_eq!(roc_csv(&pts), "threshold,fpr,tpr\n10,0.5,1\n");
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..60)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(-5.0f64..5.0, n),
                    prop::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("both classes", |(_, l)| {
                l.iter().any(|&b| b) && l.iter().any(|&b| !b)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn auc_invariant_under_monotone_maps((scores, labels) in scored()) {
            let base = auc(&roc_curve(&scores, &labels, &exact_thresholds(&scores)).unwrap()).unwrap();
            let affine: Vec<f64> = scores.iter().map(|s| 2.0 * s + 7.0).collect();
            let expo: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            for mapped in [affine, expo] {
                let a = auc(&roc_curve(&mapped, &labels, &exact_thresholds(&mapped)).unwrap()).unwrap();
                prop_assert!((a - base).abs() < 1e-12);
            }
        }

        #[test]
        fn roc_rates_fall_with_threshold((scores, labels) in scored()) {
            let pts = roc_curve(&scores, &labels, &linspace(-6.0, 6.0, 40)).unwrap();
            prop_assert_eq!(pts[0].true_positive_rate, 1.0);
            prop_assert_eq!(pts[0].false_positive_rate, 1.0);
            prop_assert_eq!(pts[39].true_positive_rate, 0.0);
            prop_assert_eq!(pts[39].false_positive_rate, 0.0);
            for w in pts.windows(2) {
                prop_assert!(w[1].true_positive_rate <= w[0].true_positive_rate);
                prop_assert!(w[1].false_positive_rate <= w[0].false_positive_rate);
            }
        }

        #[test]
        fn confusion_cells_conserve_frames(
            rows in prop::collection::vec((any::<bool>(), 0usize..3), 0..80)
        ) {
            let preds: Vec<bool> = rows.iter().map(|r| r.0).collect();
            let labels: Vec<FrameLabel> = rows.iter().map(|r| FrameLabel::ALL[r.1]).collect();
            let cm = confusion_matrix(&preds, &labels).unwrap();
            prop_assert_eq!(cm.total() as usize, rows.len());
            let hazards = labels.iter().filter(|l| **l == FrameLabel::Hazard).count() as u64;
            prop_assert_eq!(cm.true_hazard + cm.false_nonhazard, hazards);
        }
    }
}
