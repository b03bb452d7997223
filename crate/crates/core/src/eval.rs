//! Pixel-wise precision, recall and F-score, with per-dataset aggregation.

use crate::mask::{BinaryMask, MaskError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl EvalCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub pair_id: String,
    pub dataset_id: String,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub counts: EvalCounts,
}

impl ScoreRow {
    pub fn new(
        pair_id: impl Into<String>,
        dataset_id: impl Into<String>,
        counts: EvalCounts,
    ) -> Self {
        let s = score(&counts);
        Self {
            pair_id: pair_id.into(),
            dataset_id: dataset_id.into(),
            precision: s.precision,
            recall: s.recall,
            fscore: s.fscore,
            counts,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("no score rows to aggregate")]
    Empty,
    #[error("pair sets differ: only in base {only_base:?}, only in fused {only_fused:?}")]
    PairMismatch {
        only_base: Vec<String>,
        only_fused: Vec<String>,
    },
    #[error("duplicate pair id {0}")]
    DuplicatePair(String),
}

pub fn count_pixels(pred: &BinaryMask, gt: &BinaryMask) -> Result<EvalCounts, MaskError> {
    if pred.dims() != gt.dims() {
        return Err(MaskError::DimensionMismatch {
            left: pred.dims(),
            right: gt.dims(),
        });
    }
    let mut c = EvalCounts::default();
    for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Precision, recall and their harmonic mean.
///
/// | prediction | ground truth | P | R | F |
/// |------------|--------------|---|---|---|
/// | empty      | empty        | 1 | 1 | 1 |
/// | empty      | nonempty     | 0 | 0 | 0 |
/// | nonempty   | empty        | 0 | 0 | 0 |
/// | nonempty, no overlap | nonempty | 0 | 0 | 0 |
pub fn score(counts: &EvalCounts) -> Scores {
    let predicted = counts.tp + counts.fp;
    let actual = counts.tp + counts.fn_;
    if predicted == 0 && actual == 0 {
        return Scores {
            precision: 1.0,
            recall: 1.0,
            fscore: 1.0,
        };
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(counts.tp, predicted);
    let recall = ratio(counts.tp, actual);
    let fscore = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores {
        precision,
        recall,
        fscore,
    }
}

pub fn score_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Scores, MaskError> {
    Ok(score(&count_pixels(pred, gt)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean_f: f64,
    pub mean_p: f64,
    pub mean_r: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallStats {
    /// Mean of the per-dataset means.
    pub mean_f: f64,
    pub mean_p: f64,
    pub mean_r: f64,
    /// Mean over all images regardless of dataset.
    pub image_mean_f: f64,
    pub image_mean_p: f64,
    pub image_mean_r: f64,
    pub datasets: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub datasets: BTreeMap<String, GroupStats>,
    pub overall: OverallStats,
}

// Sorting before summing makes the mean independent of input order.
fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn group_stats(rows: &[&ScoreRow]) -> GroupStats {
    GroupStats {
        mean_f: mean(rows.iter().map(|r| r.fscore)),
        mean_p: mean(rows.iter().map(|r| r.precision)),
        mean_r: mean(rows.iter().map(|r| r.recall)),
        n: rows.len(),
    }
}

pub fn aggregate(rows: &[ScoreRow]) -> Result<Report, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut groups: BTreeMap<&str, Vec<&ScoreRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.dataset_id.as_str()).or_default().push(r);
    }
    let datasets: BTreeMap<String, GroupStats> = groups
        .iter()
        .map(|(id, rs)| ((*id).to_owned(), group_stats(rs)))
        .collect();
    let all: Vec<&ScoreRow> = rows.iter().collect();
    let images = group_stats(&all);
    let overall = OverallStats {
        mean_f: mean(datasets.values().map(|g| g.mean_f)),
        mean_p: mean(datasets.values().map(|g| g.mean_p)),
        mean_r: mean(datasets.values().map(|g| g.mean_r)),
        image_mean_f: images.mean_f,
        image_mean_p: images.mean_p,
        image_mean_r: images.mean_r,
        datasets: datasets.len(),
        n: rows.len(),
    };
    Ok(Report { datasets, overall })
}

impl Report {
    /// Aligned plain-text table, one line per dataset plus the overall row.
    pub fn to_table(&self) -> String {
        let width = self
            .datasets
            .keys()
            .map(String::len)
            .chain([7])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>9}  {:>9}  {:>9}",
            "dataset", "n", "mean_p", "mean_r", "mean_f"
        );
        for (id, g) in &self.datasets {
            let _ = writeln!(
                out,
                "{id:<width$}  {:>6}  {:>9.4}  {:>9.4}  {:>9.4}",
                g.n, g.mean_p, g.mean_r, g.mean_f
            );
        }
        let o = &self.overall;
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>9.4}  {:>9.4}  {:>9.4}",
            "overall", o.n, o.mean_p, o.mean_r, o.mean_f
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub pair_id: String,
    pub dataset_id: String,
    pub base_f: f64,
    pub fused_f: f64,
    pub delta_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanDelta {
    pub base_mean_f: f64,
    pub fused_mean_f: f64,
    pub delta_mean_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pairs: Vec<PairDelta>,
    pub datasets: BTreeMap<String, MeanDelta>,
    pub overall: MeanDelta,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

/// Per-pair and per-dataset F-score changes from `base` to `fused`.
pub fn compare(base: &[ScoreRow], fused: &[ScoreRow]) -> Result<Comparison, EvalError> {
    let index = |rows: &[ScoreRow]| -> Result<BTreeMap<String, ScoreRow>, EvalError> {
        let mut m = BTreeMap::new();
        for r in rows {
            if m.insert(r.pair_id.clone(), r.clone()).is_some() {
                return Err(EvalError::DuplicatePair(r.pair_id.clone()));
            }
        }
        Ok(m)
    };
    let b = index(base)?;
    let f = index(fused)?;
    let bk: BTreeSet<&String> = b.keys().collect();
    let fk: BTreeSet<&String> = f.keys().collect();
    if bk != fk {
        return Err(EvalError::PairMismatch {
            only_base: bk.difference(&fk).map(|s| (*s).clone()).collect(),
            only_fused: fk.difference(&bk).map(|s| (*s).clone()).collect(),
        });
    }
    let base_report = aggregate(base)?;
    let fused_report = aggregate(fused)?;

    let mut pairs = Vec::with_capacity(b.len());
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (id, br) in &b {
        let fr = &f[id];
        let delta_f = fr.fscore - br.fscore;
        match delta_f.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
        pairs.push(PairDelta {
            pair_id: id.clone(),
            dataset_id: br.dataset_id.clone(),
            base_f: br.fscore,
            fused_f: fr.fscore,
            delta_f,
        });
    }
    let delta = |base_mean_f: f64, fused_mean_f: f64| MeanDelta {
        base_mean_f,
        fused_mean_f,
        delta_mean_f: fused_mean_f - base_mean_f,
    };
    let datasets = base_report
        .datasets
        .iter()
        .map(|(id, g)| {
            let fused_mean = fused_report.datasets.get(id).map_or(0.0, |fg| fg.mean_f);
            (id.clone(), delta(g.mean_f, fused_mean))
        })
        .collect();
    Ok(Comparison {
        pairs,
        datasets,
        overall: delta(base_report.overall.mean_f, fused_report.overall.mean_f),
        wins,
        losses,
        ties,
    })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let width = self
            .datasets
            .keys()
            .map(String::len)
            .chain([7])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}",
            "dataset", "base_f", "fused_f", "delta"
        );
        for (id, d) in &self.datasets {
            let _ = writeln!(
                out,
                "{id:<width$}  {:>9.4}  {:>9.4}  {:>+9.4}",
                d.base_mean_f, d.fused_mean_f, d.delta_mean_f
            );
        }
        let o = &self.overall;
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>+9.4}",
            "overall", o.base_mean_f, o.fused_mean_f, o.delta_mean_f
        );
        let _ = writeln!(
            out,
            "wins {}  losses {}  ties {}",
            self.wins, self.losses, self.ties
        );
        out
    }
}

/// Convenience for callers that hold masks rather than counts.
pub fn score_row(
    pair_id: &str,
    dataset_id: &str,
    pred: &BinaryMask,
    gt: &BinaryMask,
) -> Result<ScoreRow, MaskError> {
    Ok(ScoreRow::new(pair_id, dataset_id, count_pixels(pred, gt)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> EvalCounts {
        EvalCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn count_examples() {
        let gt = BinaryMask::from_fn(6, 6, |x, y| x < 3 && y < 2);
        let c = count_pixels(&gt, &gt).unwrap();
        assert_eq!((c.fp, c.fn_, c.tp), (0, 0, 6));
        let c = count_pixels(&gt.complement(), &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert_eq!(c.total(), 36);
        assert!(count_pixels(&gt, &BinaryMask::new(6, 5)).is_err());
    }

    #[test]
    fn score_examples() {
        let s = score(&counts(10, 0, 0, 5));
        assert_eq!((s.precision, s.recall, s.fscore), (1.0, 1.0, 1.0));
        assert_eq!(score(&counts(0, 4, 3, 9)).fscore, 0.0);
        let s = score(&counts(6, 2, 6, 0));
        assert_eq!(s.precision, 0.75);
        assert_eq!(s.recall, 0.5);
        assert!((s.fscore - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_table() {
        let both_empty = score(&counts(0, 0, 0, 9));
        assert_eq!(
            (both_empty.precision, both_empty.recall, both_empty.fscore),
            (1.0, 1.0, 1.0)
        );
        let pred_empty = score(&counts(0, 0, 4, 5));
        assert_eq!(
            (pred_empty.precision, pred_empty.recall, pred_empty.fscore),
            (0.0, 0.0, 0.0)
        );
        let gt_empty = score(&counts(0, 4, 0, 5));
        assert_eq!(
            (gt_empty.precision, gt_empty.recall, gt_empty.fscore),
            (0.0, 0.0, 0.0)
        );
        let miss = score(&counts(0, 2, 2, 5));
        assert_eq!((miss.precision, miss.recall, miss.fscore), (0.0, 0.0, 0.0));
    }

    fn row(pair: &str, ds: &str, f: f64) -> ScoreRow {
        ScoreRow {
            pair_id: pair.into(),
            dataset_id: ds.into(),
            precision: f,
            recall: f,
            fscore: f,
            counts: EvalCounts::default(),
        }
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate(&[row("a", "cs1", 0.3)]).unwrap();
        assert_eq!(r.datasets["cs1"].mean_f, 0.3);
        assert_eq!(r.overall.mean_f, 0.3);

        let r = aggregate(&[
            row("a", "cs1", 0.2),
            row("b", "lr2", 0.5),
            row("c", "lr2", 0.7),
            row("d", "lr2", 0.6),
        ])
        .unwrap();
        assert!((r.datasets["lr2"].mean_f - 0.6).abs() < 1e-15);
        assert!((r.overall.mean_f - 0.4).abs() < 1e-15);
        assert!((r.overall.image_mean_f - 0.5).abs() < 1e-15);
        assert_eq!(r.overall.n, 4);
        assert!(r.to_table().contains("overall"));
        assert!(matches!(aggregate(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn compare_examples() {
        let base = vec![row("a", "x", 0.2), row("b", "y", 0.5)];
        let same = compare(&base, &base).unwrap();
        assert!(same.pairs.iter().all(|p| p.delta_f == 0.0));
        assert_eq!((same.wins, same.ties), (0, 2));
        assert_eq!(same.overall.delta_mean_f, 0.0);

        let better = vec![row("b", "y", 0.6), row("a", "x", 0.9)];
        let c = compare(&base, &better).unwrap();
        assert_eq!(c.wins, 2);
        assert!(c.overall.delta_mean_f > 0.0);
        assert!(c.to_table().contains("wins 2"));

        let err = compare(&base, &[row("a", "x", 0.1)]).unwrap_err();
        assert!(matches!(err, EvalError::PairMismatch { .. }));
    }

    proptest! {
        #[test]
        fn scores_bounded(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
            let s = score(&counts(tp, fp, fn_, 0));
            for v in [s.precision, s.recall, s.fscore] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(s.fscore <= s.precision.max(s.recall) + 1e-15);
            if s.precision == s.recall {
                prop_assert!((s.fscore - s.precision).abs() < 1e-15);
            }
        }

        #[test]
        fn aggregate_permutation_invariant(fs in proptest::collection::vec(0.0f64..1.0, 1..30), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let rows: Vec<ScoreRow> = fs.iter().enumerate()
                .map(|(i, &f)| row(&i.to_string(), if i % 2 == 0 { "a" } else { "b" }, f))
                .collect();
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate(&rows).unwrap(), aggregate(&shuffled).unwrap());
        }
    }
}
