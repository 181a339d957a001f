//! Box-level scoring: class-averaged F1 for the line-item classes and
//! pooled positive F1 for the remaining fields.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::doc::{ClassSchema, LabelMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Strict: a probability equal to the threshold is negative.
pub fn binarize(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p > threshold).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with the roles of the class and its complement swapped.
    pub fn complement(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// A score in `[0, 1]`. `undefined` is set when some F1 in its computation
/// had a zero denominator and was counted as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub undefined: bool,
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}", self.value)?;
        if self.undefined {
            f.write_str("*")?;
        }
        Ok(())
    }
}

/// `2tp / (2tp + fp + fn)`; `None` when the denominator is zero.
pub fn f1(c: &ConfusionCounts) -> Option<f64> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    (denom > 0).then(|| (2 * c.tp) as f64 / denom as f64)
}

fn score_of(f: Option<f64>) -> Score {
    Score {
        value: f.unwrap_or(0.0),
        undefined: f.is_none(),
    }
}

pub fn positive_f1(c: &ConfusionCounts) -> Score {
    score_of(f1(c))
}

/// Mean of the F1 for the class and the F1 for its complement.
pub fn class_averaged_f1(c: &ConfusionCounts) -> Score {
    let pos = f1(c);
    let neg = f1(&c.complement());
    Score {
        value: (pos.unwrap_or(0.0) + neg.unwrap_or(0.0)) / 2.0,
        undefined: pos.is_none() || neg.is_none(),
    }
}

/// F1 of tp/fp/fn pooled over `classes`; true negatives never enter.
pub fn micro_f1_positive(counts: &[ConfusionCounts], classes: &[usize]) -> Score {
    let mut pooled = ConfusionCounts::default();
    for &c in classes {
        pooled.merge(&counts[c]);
    }
    score_of(f1(&pooled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    /// Held-out documents from layout families seen in training.
    Adaptation,
    /// Documents from layout families never seen in training.
    Generalization,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Adaptation => "adaptation",
            Split::Generalization => "generalization",
        })
    }
}

/// Per-class confusion counts accumulated over a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    pub counts: Vec<ConfusionCounts>,
    pub documents: usize,
    pub boxes: usize,
    pub threshold: f64,
}

impl Tally {
    pub fn new(class_count: usize) -> Self {
        Tally {
            counts: vec![ConfusionCounts::default(); class_count],
            documents: 0,
            boxes: 0,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    /// Adds one document: `probs` is `rows x class_count`, row-major.
    pub fn add(&mut self, probs: &[f64], labels: &LabelMatrix) -> Result<()> {
        let c = self.counts.len();
        if labels.class_count() != c || probs.len() != labels.rows() * c {
            return Err(Error::Shape {
                op: "tally",
                lhs: vec![labels.rows(), labels.class_count()],
                rhs: vec![probs.len(), c],
            });
        }
        for (row, p) in probs.chunks(c).enumerate() {
            for (class, &predicted) in binarize(p, self.threshold).iter().enumerate() {
                self.counts[class].record(labels.get(row, class), predicted);
            }
        }
        self.documents += 1;
        self.boxes += labels.rows();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub name: String,
    /// False when the class was excluded from the training targets.
    pub active: bool,
    pub counts: ConfusionCounts,
    pub f1: Score,
    pub averaged_f1: Score,
}

/// `None` scores mark classes outside the training targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub documents: usize,
    pub boxes: usize,
    pub threshold: f64,
    pub body_f1: Option<Score>,
    pub header_f1: Option<Score>,
    pub others_micro_f1: Option<Score>,
    pub classes: Vec<ClassReport>,
}

impl EvalReport {
    /// `active[c]` marks classes that were training targets.
    pub fn from_tally(
        tally: &Tally,
        schema: &ClassSchema,
        active: &[bool],
        split: Split,
    ) -> Result<Self> {
        if tally.documents == 0 {
            return Err(Error::invalid(format!("cannot evaluate an empty {split} split")));
        }
        let c = schema.class_count();
        if tally.counts.len() != c || active.len() != c {
            return Err(Error::invalid(format!(
                "schema has {c} classes, tally {} and target mask {}",
                tally.counts.len(),
                active.len()
            )));
        }
        let classes = (0..c)
            .map(|k| ClassReport {
                class: k,
                name: schema.names[k].clone(),
                active: active[k],
                counts: tally.counts[k],
                f1: positive_f1(&tally.counts[k]),
                averaged_f1: class_averaged_f1(&tally.counts[k]),
            })
            .collect();
        let others: Vec<usize> = schema
            .other_classes()
            .into_iter()
            .filter(|&k| active[k])
            .collect();
        Ok(EvalReport {
            split,
            documents: tally.documents,
            boxes: tally.boxes,
            threshold: tally.threshold,
            body_f1: active[schema.body_class]
                .then(|| class_averaged_f1(&tally.counts[schema.body_class])),
            header_f1: active[schema.header_class]
                .then(|| class_averaged_f1(&tally.counts[schema.header_class])),
            others_micro_f1: (!others.is_empty())
                .then(|| micro_f1_positive(&tally.counts, &others)),
            classes,
        })
    }

    /// Fixed-width table: one summary line, then one line per class.
    pub fn to_table(&self) -> String {
        let cell = |s: &Option<Score>| s.map_or_else(|| "N/A".to_string(), |s| s.to_string());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "split: {}  documents: {}  boxes: {}  threshold: {}",
            self.split, self.documents, self.boxes, self.threshold
        );
        let _ = writeln!(out, "{:<16}{:<16}{:<16}", "body F1", "header F1", "micro F1");
        let _ = writeln!(
            out,
            "{:<16}{:<16}{:<16}",
            cell(&self.body_f1),
            cell(&self.header_f1),
            cell(&self.others_micro_f1)
        );
        let _ = writeln!(
            out,
            "\n{:<6}{:<24}{:>8}{:>8}{:>8}{:>10}{:>10}{:>12}",
            "class", "name", "tp", "fp", "fn", "tn", "F1", "avg F1"
        );
        for c in &self.classes {
            let f1 = |s: Score| if c.active { s.to_string() } else { "N/A".into() };
            let _ = writeln!(
                out,
                "{:<6}{:<24}{:>8}{:>8}{:>8}{:>10}{:>10}{:>12}",
                c.class,
                c.name,
                c.counts.tp,
                c.counts.fp,
                c.counts.fn_,
                c.counts.tn,
                f1(c.f1),
                f1(c.averaged_f1)
            );
        }
        if self.classes.iter().any(|c| c.f1.undefined || c.averaged_f1.undefined) {
            out.push_str("\n* an F1 with zero denominator was counted as 0\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn binarize_is_strict() {
        assert_eq!(binarize(&[0.5, 0.5000001, 0.0, 1.0], 0.5), [false, true, false, true]);
        assert!(binarize(&[1.0; 7], 0.5).iter().all(|&b| b));
    }

    #[test]
    fn binarize_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let b = binarize(&p, 0.5);
        for (x, y) in p.iter().zip(b) {
            assert_eq!(y, *x > 0.5);
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let c = counts(3, 0, 0, 5);
        assert_eq!(class_averaged_f1(&c), Score { value: 1.0, undefined: false });
        assert_eq!(micro_f1_positive(&[c], &[0]).value, 1.0);
    }

    #[test]
    fn all_negative_on_half_positive_is_one_third() {
        // 50 positives, 50 negatives, nothing predicted positive:
        // positive F1 = 0, negative F1 = 2*50 / (2*50 + 50) = 2/3.
        let c = counts(0, 0, 50, 50);
        let s = class_averaged_f1(&c);
        assert_eq!(s.value, (0.0 + 2.0 / 3.0) / 2.0);
        assert!(!s.undefined);
        assert_eq!(f1(&c), Some(0.0));
    }

    #[test]
    fn zero_denominator_counts_as_zero_and_flags() {
        let s = class_averaged_f1(&counts(0, 0, 0, 10));
        assert_eq!(s, Score { value: 0.5, undefined: true });
        let m = micro_f1_positive(&[counts(0, 0, 0, 4)], &[0]);
        assert_eq!(m, Score { value: 0.0, undefined: true });
    }

    #[test]
    fn random_predictions_on_balanced_data_are_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut c = ConfusionCounts::default();
        for _ in 0..10_000 {
            c.record(rng.random::<bool>(), rng.random::<bool>());
        }
        let s = class_averaged_f1(&c).value;
        assert!((s - 0.5).abs() < 0.02, "{s}");
    }

    #[test]
    fn micro_pools_counts() {
        let a = counts(8, 2, 0, 90);
        let b = counts(0, 0, 5, 95);
        // pooled: tp 8, fp 2, fn 5 -> 16 / 23
        assert_eq!(micro_f1_positive(&[a, b], &[0, 1]).value, 16.0 / 23.0);
        assert_eq!(micro_f1_positive(&[a, b], &[1]).value, 0.0);
    }

    fn schema() -> ClassSchema {
        ClassSchema::with_fields(&["total", "iban"]).unwrap()
    }

    #[test]
    fn report_marks_inactive_classes() {
        let s = schema();
        let labels = LabelMatrix::from_rows(&[vec![1, 0, 0, 1], vec![0, 1, 0, 0]], 4).unwrap();
        let mut t = Tally::new(4);
        t.add(&[0.9, 0.1, 0.2, 0.7, 0.1, 0.8, 0.1, 0.1], &labels).unwrap();
        let r = EvalReport::from_tally(&t, &s, &[true, false, true, true], Split::Adaptation)
            .unwrap();
        assert_eq!(r.body_f1.unwrap().value, 1.0);
        assert!(r.header_f1.is_none());
        // field "total" has no positives and no predictions, "iban" is perfect
        assert_eq!(r.others_micro_f1.unwrap().value, 1.0);
        let table = r.to_table();
        assert!(table.contains("N/A") && table.contains("adaptation"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    }

    #[test]
    fn empty_split_is_an_error() {
        let t = Tally::new(4);
        assert!(EvalReport::from_tally(&t, &schema(), &[true; 4], Split::Train).is_err());
    }

    #[test]
    fn bigger_documents_weigh_more() {
        let s = schema();
        let small = LabelMatrix::from_rows(&[vec![0, 0, 1, 0]], 4).unwrap();
        let small_p = [0.0, 0.0, 0.0, 0.0]; // missed
        let big_rows: Vec<Vec<u8>> = (0..9).map(|_| vec![0, 0, 1, 0]).collect();
        let big = LabelMatrix::from_rows(&big_rows, 4).unwrap();
        let big_p: Vec<f64> = (0..9).flat_map(|_| [0.0, 0.0, 0.9, 0.0]).collect(); // all hit
        let micro = |docs: &[(&[f64], &LabelMatrix)]| {
            let mut t = Tally::new(4);
            for (p, l) in docs {
                t.add(p, l).unwrap();
            }
            EvalReport::from_tally(&t, &s, &[true; 4], Split::Train)
                .unwrap()
                .others_micro_f1
                .unwrap()
                .value
        };
        let once = micro(&[(&small_p, &small), (&big_p, &big)]);
        let twice = micro(&[(&small_p, &small), (&big_p, &big), (&big_p, &big)]);
        assert!(twice > once && twice < 1.0);
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
            let c = counts(tp, fp, fn_, tn);
            let s = class_averaged_f1(&c).value;
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((0.0..=1.0).contains(&positive_f1(&c).value));
        }

        #[test]
        fn micro_is_invariant_to_class_relabeling(
            raw in prop::collection::vec((0u64..20, 0u64..20, 0u64..20, 0u64..20), 2..6),
            seed in any::<u64>(),
        ) {
            let cs: Vec<ConfusionCounts> = raw.iter().map(|&(a, b, c, d)| counts(a, b, c, d)).collect();
            let classes: Vec<usize> = (0..cs.len()).collect();
            let mut perm = classes.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted: Vec<ConfusionCounts> = perm.iter().map(|&p| cs[p]).collect();
            prop_assert_eq!(micro_f1_positive(&cs, &classes), micro_f1_positive(&permuted, &classes));
        }
    }
}
