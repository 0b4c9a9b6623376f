//! Per-annotator labels, majority voting and Fleiss' kappa.

mod service;
mod store;

pub use service::{router, ServiceState, TaskView, GUIDELINES};
pub use store::{read_records, write_records, AnnotationStore, StoreError};

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("tweet `{tweet_id}`: need at least 2 distinct annotators, found {found}")]
    TooFewAnnotators { tweet_id: String, found: usize },
    #[error("tweet `{tweet_id}`: annotator `{annotator_id}` has two records with timestamp {timestamp}")]
    UnresolvedDuplicate {
        tweet_id: String,
        annotator_id: String,
        timestamp: u64,
    },
    #[error("records for more than one tweet passed to majority_vote")]
    MixedTweets,
    #[error("annotators per item must be at least 2, got {0}")]
    TooFewRaters(usize),
    #[error("row {row}: counts sum to {sum}, expected {expected}")]
    RowSum { row: usize, sum: usize, expected: usize },
    #[error("assignment matrix has no rows")]
    EmptyMatrix,
    #[error("no annotation records")]
    NoRecords,
    #[error("degenerate marginal: all ratings fall in one category but observed agreement is {observed}")]
    DegenerateMarginal { observed: f64 },
    #[error("kappa {0} outside [-1, 1]")]
    KappaOutOfRange(f64),
}

/// One annotator's label for one tweet. `timestamp` is a monotone sequence
/// number assigned by the store; a later record supersedes an earlier one
/// from the same annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub tweet_id: String,
    pub annotator_id: String,
    pub label: Label,
    pub timestamp: u64,
}

impl AnnotationRecord {
    pub fn new(tweet_id: &str, annotator_id: &str, label: Label, timestamp: u64) -> Self {
        AnnotationRecord {
            tweet_id: tweet_id.to_string(),
            annotator_id: annotator_id.to_string(),
            label,
            timestamp,
        }
    }
}

/// Items × categories count matrix. Column 0 is Hateful, column 1 is
/// Not-Hateful; every row sums to `raters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub item_ids: Vec<String>,
    pub rows: Vec<[usize; 2]>,
    pub raters: usize,
}

impl AssignmentMatrix {
    pub fn new(item_ids: Vec<String>, rows: Vec<[usize; 2]>, raters: usize) -> Result<Self, AnnotationError> {
        if raters < 2 {
            return Err(AnnotationError::TooFewRaters(raters));
        }
        for (i, r) in rows.iter().enumerate() {
            let sum = r[0] + r[1];
            if sum != raters {
                return Err(AnnotationError::RowSum {
                    row: i,
                    sum,
                    expected: raters,
                });
            }
        }
        debug_assert_eq!(item_ids.len(), rows.len());
        Ok(AssignmentMatrix { item_ids, rows, raters })
    }

    /// Matrix without item ids, for fixtures.
    pub fn from_rows(rows: Vec<[usize; 2]>, raters: usize) -> Result<Self, AnnotationError> {
        let ids = (0..rows.len()).map(|i| format!("item{i}")).collect();
        Self::new(ids, rows, raters)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Interpretation bands, lower-inclusive and half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Interpretation {
    Poor,
    Fair,
    Moderate,
    Substantial,
    Perfect,
}

impl Interpretation {
    pub fn label(self) -> &'static str {
        match self {
            Interpretation::Perfect => "Perfect Agreement",
            Interpretation::Substantial => "Substantial Agreement",
            Interpretation::Moderate => "Moderate Agreement",
            Interpretation::Fair => "Fair Agreement",
            Interpretation::Poor => "Poor Agreement",
        }
    }
}

impl fmt::Display for Interpretation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// κ = 1 is Perfect; [0.80, 1) Substantial; [0.60, 0.80) Moderate;
/// [0.40, 0.60) Fair; below 0.40 Poor.
pub fn interpret_kappa(kappa: f64) -> Result<Interpretation, AnnotationError> {
    if !(-1.0..=1.0).contains(&kappa) {
        return Err(AnnotationError::KappaOutOfRange(kappa));
    }
    Ok(if kappa == 1.0 {
        Interpretation::Perfect
    } else if kappa >= 0.80 {
        Interpretation::Substantial
    } else if kappa >= 0.60 {
        Interpretation::Moderate
    } else if kappa >= 0.40 {
        Interpretation::Fair
    } else {
        Interpretation::Poor
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub interpretation: Interpretation,
    pub items: usize,
    pub annotators_per_item: usize,
}

/// Fleiss' kappa over an assignment matrix.
pub fn fleiss_kappa(matrix: &AssignmentMatrix) -> Result<AgreementReport, AnnotationError> {
    if matrix.is_empty() {
        return Err(AnnotationError::EmptyMatrix);
    }
    let n = matrix.raters as f64;
    let items = matrix.len() as f64;

    let mut observed = 0.0;
    let mut totals = [0usize; 2];
    for row in &matrix.rows {
        let sq: usize = row.iter().map(|&c| c * c).sum();
        observed += (sq as f64 - n) / (n * (n - 1.0));
        totals[0] += row[0];
        totals[1] += row[1];
    }
    observed /= items;
    let expected: f64 = totals.iter().map(|&t| (t as f64 / (items * n)).powi(2)).sum();

    let kappa = if totals[0] == 0 || totals[1] == 0 {
        // all ratings in one category: expected agreement is exactly 1
        if observed == 1.0 {
            1.0
        } else {
            return Err(AnnotationError::DegenerateMarginal { observed });
        }
    } else {
        (observed - expected) / (1.0 - expected)
    };
    Ok(AgreementReport {
        kappa,
        observed_agreement: observed,
        expected_agreement: expected,
        interpretation: interpret_kappa(kappa.clamp(-1.0, 1.0))?,
        items: matrix.len(),
        annotators_per_item: matrix.raters,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VotingOutcome {
    pub tweet_id: String,
    pub resolved: Option<Label>,
    pub tie: bool,
    pub hateful_votes: usize,
    pub not_hateful_votes: usize,
}

/// Keeps the latest record per annotator. Fails if one annotator has two
/// records sharing the winning timestamp.
fn live_records<'a>(records: &[&'a AnnotationRecord]) -> Result<Vec<&'a AnnotationRecord>, AnnotationError> {
    let mut latest: BTreeMap<&str, &AnnotationRecord> = BTreeMap::new();
    for &r in records {
        match latest.get(r.annotator_id.as_str()) {
            Some(prev) if prev.timestamp > r.timestamp => {}
            Some(prev) if prev.timestamp == r.timestamp && prev.label != r.label => {
                return Err(AnnotationError::UnresolvedDuplicate {
                    tweet_id: r.tweet_id.clone(),
                    annotator_id: r.annotator_id.clone(),
                    timestamp: r.timestamp,
                });
            }
            _ => {
                latest.insert(r.annotator_id.as_str(), r);
            }
        }
    }
    Ok(latest.into_values().collect())
}

/// Resolves one tweet's records by strict majority. An even split is
/// reported as a tie and left unresolved for adjudication.
pub fn majority_vote(records: &[AnnotationRecord]) -> Result<VotingOutcome, AnnotationError> {
    let refs: Vec<&AnnotationRecord> = records.iter().collect();
    vote_refs(&refs)
}

fn vote_refs(records: &[&AnnotationRecord]) -> Result<VotingOutcome, AnnotationError> {
    let Some(first) = records.first() else {
        return Err(AnnotationError::NoRecords);
    };
    if records.iter().any(|r| r.tweet_id != first.tweet_id) {
        return Err(AnnotationError::MixedTweets);
    }
    let live = live_records(records)?;
    if live.len() < 2 {
        return Err(AnnotationError::TooFewAnnotators {
            tweet_id: first.tweet_id.clone(),
            found: live.len(),
        });
    }
    let hateful = live.iter().filter(|r| r.label == Label::Hateful).count();
    let not_hateful = live.len() - hateful;
    let resolved = match hateful.cmp(&not_hateful) {
        std::cmp::Ordering::Greater => Some(Label::Hateful),
        std::cmp::Ordering::Less => Some(Label::NotHateful),
        std::cmp::Ordering::Equal => None,
    };
    Ok(VotingOutcome {
        tweet_id: first.tweet_id.clone(),
        resolved,
        tie: hateful == not_hateful,
        hateful_votes: hateful,
        not_hateful_votes: not_hateful,
    })
}

/// A tweet left out of the assignment matrix and how many live records it had.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedItem {
    pub tweet_id: String,
    pub records: usize,
}

fn group_by_tweet(records: &[AnnotationRecord]) -> BTreeMap<&str, Vec<&AnnotationRecord>> {
    let mut groups: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.tweet_id.as_str()).or_default().push(r);
    }
    groups
}

/// One row per tweet (sorted by tweet id) that has exactly `raters` live
/// records; every other tweet is returned in the exclusion list.
pub fn build_assignment_matrix(
    records: &[AnnotationRecord],
    raters: usize,
) -> Result<(AssignmentMatrix, Vec<ExcludedItem>), AnnotationError> {
    if raters < 2 {
        return Err(AnnotationError::TooFewRaters(raters));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (tweet_id, group) in group_by_tweet(records) {
        let live = live_records(&group)?;
        if live.len() != raters {
            excluded.push(ExcludedItem {
                tweet_id: tweet_id.to_string(),
                records: live.len(),
            });
            continue;
        }
        let mut row = [0usize; 2];
        for r in live {
            row[r.label.index()] += 1;
        }
        ids.push(tweet_id.to_string());
        rows.push(row);
    }
    Ok((AssignmentMatrix::new(ids, rows, raters)?, excluded))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementOutcome {
    pub report: AgreementReport,
    pub votes: Vec<VotingOutcome>,
    pub excluded: Vec<ExcludedItem>,
}

impl AgreementOutcome {
    pub fn ties(&self) -> usize {
        self.votes.iter().filter(|v| v.tie).count()
    }
}

/// Votes every tweet with at least two annotators and computes kappa over
/// the tweets that have exactly `raters` annotators.
pub fn agreement_pipeline(records: &[AnnotationRecord], raters: usize) -> Result<AgreementOutcome, AnnotationError> {
    if records.is_empty() {
        return Err(AnnotationError::NoRecords);
    }
    let (matrix, excluded) = build_assignment_matrix(records, raters)?;
    let report = fleiss_kappa(&matrix)?;
    let mut votes = Vec::new();
    for group in group_by_tweet(records).values() {
        match vote_refs(group) {
            Ok(v) => votes.push(v),
            Err(AnnotationError::TooFewAnnotators { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(AgreementOutcome {
        report,
        votes,
        excluded,
    })
}

/// Label counts per annotator, used for progress reporting.
pub fn progress(records: &[AnnotationRecord]) -> BTreeMap<String, usize> {
    let mut live: HashMap<(&str, &str), u64> = HashMap::new();
    for r in records {
        let e = live.entry((&r.tweet_id, &r.annotator_id)).or_insert(r.timestamp);
        *e = (*e).max(r.timestamp);
    }
    let mut out = BTreeMap::new();
    for (_, annotator) in live.keys() {
        *out.entry(annotator.to_string()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Hateful as H, NotHateful as N};

    fn recs(tweet: &str, labels: &[Label]) -> Vec<AnnotationRecord> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| AnnotationRecord::new(tweet, &format!("a{i}"), l, i as u64))
            .collect()
    }

    #[test]
    fn two_of_three_resolves() {
        let v = majority_vote(&recs("t", &[H, H, N])).unwrap();
        assert_eq!(v.resolved, Some(H));
        assert!(!v.tie);
    }

    #[test]
    fn unanimous_not_hateful() {
        let v = majority_vote(&recs("t", &[N, N, N])).unwrap();
        assert_eq!(v.resolved, Some(N));
        assert_eq!((v.hateful_votes, v.not_hateful_votes), (0, 3));
    }

    #[test]
    fn even_split_is_tie() {
        let v = majority_vote(&recs("t", &[H, N])).unwrap();
        assert!(v.tie);
        assert_eq!(v.resolved, None);
    }

    #[test]
    fn vote_needs_two_annotators() {
        let r = vec![
            AnnotationRecord::new("t", "a", H, 1),
            AnnotationRecord::new("t", "a", N, 2),
        ];
        assert!(matches!(
            majority_vote(&r),
            Err(AnnotationError::TooFewAnnotators { found: 1, .. })
        ));
        let r = vec![
            AnnotationRecord::new("t", "a", H, 1),
            AnnotationRecord::new("t", "a", N, 1),
            AnnotationRecord::new("t", "b", N, 2),
        ];
        assert!(matches!(
            majority_vote(&r),
            Err(AnnotationError::UnresolvedDuplicate { .. })
        ));
    }

    #[test]
    fn later_record_supersedes() {
        let mut r = recs("t", &[H, N, N]);
        r.push(AnnotationRecord::new("t", "a1", H, 10));
        let v = majority_vote(&r).unwrap();
        assert_eq!(v.resolved, Some(H));
        assert_eq!(v.hateful_votes, 2);
    }

    #[test]
    fn matrix_rows_and_exclusions() {
        let mut r = recs("x", &[H, H, H]);
        let m = build_assignment_matrix(&r, 3).unwrap().0;
        assert_eq!(m.rows, vec![[3, 0]]);

        r = recs("a", &[H, H, N]);
        r.extend(recs("b", &[H, N, N]));
        r.extend(recs("c", &[H, N]));
        let (m, excluded) = build_assignment_matrix(&r, 3).unwrap();
        assert_eq!(m.rows, vec![[2, 1], [1, 2]]);
        assert_eq!(
            excluded,
            vec![ExcludedItem {
                tweet_id: "c".into(),
                records: 2
            }]
        );
    }

    #[test]
    fn unanimous_both_categories_is_one() {
        let m = AssignmentMatrix::from_rows(vec![[3, 0], [0, 3], [3, 0]], 3).unwrap();
        let r = fleiss_kappa(&m).unwrap();
        assert_eq!(r.kappa, 1.0);
        assert_eq!(r.interpretation, Interpretation::Perfect);
    }

    #[test]
    fn single_category_unanimous_is_one() {
        let m = AssignmentMatrix::from_rows(vec![[3, 0], [3, 0]], 3).unwrap();
        assert_eq!(fleiss_kappa(&m).unwrap().kappa, 1.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            AssignmentMatrix::from_rows(vec![[3, 1]], 3),
            Err(AnnotationError::RowSum { .. })
        ));
        assert!(matches!(
            AssignmentMatrix::from_rows(vec![[1, 0]], 1),
            Err(AnnotationError::TooFewRaters(1))
        ));
        let empty = AssignmentMatrix::from_rows(vec![], 3).unwrap();
        assert_eq!(fleiss_kappa(&empty), Err(AnnotationError::EmptyMatrix));
    }

    #[test]
    fn four_item_fixture() {
        // P_i: [2,1] -> (5-3)/6 = 1/3, [3,0] -> 1, [1,2] -> 1/3, [0,3] -> 1
        // P = 2/3; p_H = 6/12 = 0.5, P_e = 0.5; kappa = (2/3 - 1/2) / (1/2) = 1/3
        let m = AssignmentMatrix::from_rows(vec![[2, 1], [3, 0], [1, 2], [0, 3]], 3).unwrap();
        let r = fleiss_kappa(&m).unwrap();
        assert!((r.observed_agreement - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.expected_agreement - 0.5).abs() < 1e-12);
        assert!((r.kappa - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn interpretation_bands() {
        assert_eq!(interpret_kappa(0.821).unwrap(), Interpretation::Substantial);
        assert_eq!(interpret_kappa(1.0).unwrap(), Interpretation::Perfect);
        assert_eq!(interpret_kappa(0.50).unwrap(), Interpretation::Fair);
        assert_eq!(interpret_kappa(0.80).unwrap(), Interpretation::Substantial);
        assert_eq!(interpret_kappa(0.60).unwrap(), Interpretation::Moderate);
        assert_eq!(interpret_kappa(0.3999).unwrap(), Interpretation::Poor);
        assert_eq!(interpret_kappa(-1.0).unwrap(), Interpretation::Poor);
        assert!(interpret_kappa(1.01).is_err());
        assert!(interpret_kappa(f64::NAN).is_err());
    }

    #[test]
    fn pipeline_on_unanimous_fixture() {
        let mut r = recs("a", &[H, H, H]);
        r.extend(recs("b", &[N, N, N]));
        let out = agreement_pipeline(&r, 3).unwrap();
        assert_eq!(out.report.kappa, 1.0);
        assert_eq!(out.ties(), 0);
        assert_eq!(out.votes.len(), 2);
        assert_eq!(agreement_pipeline(&[], 3), Err(AnnotationError::NoRecords));
    }

    #[test]
    fn progress_counts_live_labels() {
        let mut r = recs("a", &[H, H]);
        r.push(AnnotationRecord::new("a", "a0", N, 5));
        r.extend(recs("b", &[N]));
        let p = progress(&r);
        assert_eq!(p["a0"], 2);
        assert_eq!(p["a1"], 1);
    }
}
