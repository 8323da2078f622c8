//! Detection metrics with fake speech as the positive class.
//!
//! An utterance is predicted fake when its score is at least the threshold.
//! All rates in reports are percentages; ROC points are fractions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{FAKE, REAL};

/// Paper operating point for hard decisions.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    id: String,
    score: f64,
    label: usize,
}

impl ScoreSet {
    pub fn new(ids: Vec<String>, scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if ids.len() != scores.len() || scores.len() != labels.len() {
            return Err(Error::Metric(format!(
                "length mismatch: {} ids, {} scores, {} labels",
                ids.len(),
                scores.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Metric(format!("label {l} is neither real (0) nor fake (1)")));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Metric("NaN score".into()));
        }
        Ok(ScoreSet { ids, scores, labels })
    }

    /// Anonymous items, ids `0..n`.
    pub fn unnamed(scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        ScoreSet::new((0..scores.len()).map(|i| i.to_string()).collect(), scores, labels)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `(reals, fakes)`
    pub fn class_counts(&self) -> (usize, usize) {
        let fakes = self.labels.iter().filter(|&&l| l == FAKE).count();
        (self.len() - fakes, fakes)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (reals, fakes) = self.class_counts();
        if reals == 0 || fakes == 0 {
            return Err(Error::Metric(format!(
                "need both classes, got {reals} real and {fakes} fake"
            )));
        }
        Ok((reals, fakes))
    }

    /// Items whose index satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> ScoreSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        ScoreSet {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Writes `id,score,label`. With `hard`, scores become 0/1 decisions at
    /// that threshold.
    pub fn write_csv(&self, path: impl AsRef<Path>, hard: Option<f64>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for i in 0..self.len() {
            let score = match hard {
                Some(t) => f64::from(u8::from(self.scores[i] >= t)),
                None => self.scores[i],
            };
            w.serialize(ScoreRow {
                id: self.ids[i].clone(),
                score,
                label: self.labels[i],
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut set = ScoreSet::default();
        for row in r.deserialize() {
            let row: ScoreRow = row.map_err(csv_err)?;
            set.ids.push(row.id);
            set.scores.push(row.score);
            set.labels.push(row.label);
        }
        ScoreSet::new(set.ids, set.scores, set.labels)
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("score CSV: {other:?}")),
    }
}

/// One operating point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    /// Scores at or above this value are called fake. `+∞` for the
    /// all-real starting point.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Sweep over every distinct score from high to low, starting at `(0, 0)`
/// and ending at `(1, 1)`.
pub fn sweep(s: &ScoreSet) -> Result<Vec<SweepPoint>> {
    let (reals, fakes) = s.require_both_classes()?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut points = vec![SweepPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = s.scores[order[i]];
        while i < order.len() && s.scores[order[i]] == t {
            match s.labels[order[i]] {
                REAL => fp += 1,
                _ => tp += 1,
            }
            i += 1;
        }
        points.push(SweepPoint {
            threshold: t,
            fpr: fp as f64 / reals as f64,
            tpr: tp as f64 / fakes as f64,
        });
    }
    Ok(points)
}

/// `(fpr, tpr)` staircase of the sweep.
pub fn roc_points(s: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    Ok(sweep(s)?.iter().map(|p| (p.fpr, p.tpr)).collect())
}

/// Trapezoidal area under an ROC curve.
pub fn roc_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Crossing of FNR and FPR along a sweep, linearly interpolated between the
/// bracketing points. Returns `(eer as a fraction, threshold of the point
/// that closes the bracket)`.
pub fn eer_from_sweep(points: &[SweepPoint]) -> (f64, f64) {
    let gap = |p: &SweepPoint| (1.0 - p.tpr) - p.fpr;
    let k = points
        .iter()
        .position(|p| gap(p) <= 0.0)
        .expect("a sweep ends at fpr = 1, fnr = 0");
    if k == 0 {
        return (points[0].fpr, points[0].threshold);
    }
    let (a, b) = (&points[k - 1], &points[k]);
    let (ga, gb) = (gap(a), gap(b));
    let lambda = ga / (ga - gb);
    (a.fpr + lambda * (b.fpr - a.fpr), b.threshold)
}

/// Equal error rate in percent and the threshold where it is reached.
pub fn compute_eer(s: &ScoreSet) -> Result<(f64, f64)> {
    let (eer, t) = eer_from_sweep(&sweep(s)?);
    Ok((100.0 * eer, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub threshold: f64,
    pub bac: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub roc: Vec<(f64, f64)>,
}

/// `(tpr, tnr)` in percent for hard decisions at `t`.
pub fn rates_at(s: &ScoreSet, t: f64) -> Result<(f64, f64)> {
    let (reals, fakes) = s.require_both_classes()?;
    let tp = (0..s.len()).filter(|&i| s.labels[i] == FAKE && s.scores[i] >= t).count();
    let tn = (0..s.len()).filter(|&i| s.labels[i] == REAL && s.scores[i] < t).count();
    Ok((100.0 * tp as f64 / fakes as f64, 100.0 * tn as f64 / reals as f64))
}

pub fn report_at_threshold(s: &ScoreSet, t: f64) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Metric(format!("threshold {t} outside [0, 1]")));
    }
    let points = sweep(s)?;
    let (eer, eer_threshold) = eer_from_sweep(&points);
    let (tpr, tnr) = rates_at(s, t)?;
    Ok(EvalReport {
        eer: 100.0 * eer,
        eer_threshold,
        threshold: t,
        bac: (tpr + tnr) / 2.0,
        tpr,
        tnr,
        roc: points.iter().map(|p| (p.fpr, p.tpr)).collect(),
    })
}

/// Per-domain breakdown with known/unknown/overall aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: String,
    pub split: String,
    pub threshold: f64,
    pub domains: BTreeMap<String, EvalReport>,
    /// Mean per-domain EER over domains seen in training.
    pub known: Option<f64>,
    /// Mean per-domain EER over test-only domains.
    pub unknown: Option<f64>,
    /// Report on the pooled scores of all domains.
    pub overall: EvalReport,
}

impl SystemReport {
    pub fn known_domains(&self, unknown: &BTreeSet<String>) -> Vec<&str> {
        self.domains.keys().filter(|d| !unknown.contains(*d)).map(String::as_str).collect()
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Builds a [`SystemReport`] from pooled scores with one domain name per
/// item; `unknown` lists the domains that never appear in training.
pub fn aggregate(
    system: &str,
    split: &str,
    threshold: f64,
    scores: &ScoreSet,
    domains: &[String],
    unknown: &BTreeSet<String>,
) -> Result<SystemReport> {
    if domains.len() != scores.len() {
        return Err(Error::Metric(format!(
            "{} domain tags for {} scores",
            domains.len(),
            scores.len()
        )));
    }
    let names: BTreeSet<&String> = domains.iter().collect();
    let mut per_domain = BTreeMap::new();
    for name in names {
        let subset = scores.filter(|i| &domains[i] == name);
        per_domain.insert(name.clone(), report_at_threshold(&subset, threshold)?);
    }
    let pick = |want_unknown: bool| -> Vec<f64> {
        per_domain
            .iter()
            .filter(|(d, _)| unknown.contains(*d) == want_unknown)
            .map(|(_, r)| r.eer)
            .collect()
    };
    let known = mean(&pick(false));
    let unknown_eer = mean(&pick(true));
    Ok(SystemReport {
        system: system.to_string(),
        split: split.to_string(),
        threshold,
        overall: report_at_threshold(scores, threshold)?,
        domains: per_domain,
        known,
        unknown: unknown_eer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], labels: &[usize]) -> ScoreSet {
        ScoreSet::unnamed(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_and_inverted_separation() {
        let s = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(compute_eer(&set(&s, &[0, 0, 1, 1])).unwrap().0, 0.0);
        assert_eq!(compute_eer(&set(&s, &[1, 1, 0, 0])).unwrap().0, 100.0);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(compute_eer(&set(&[0.3, 0.4], &[1, 1])), Err(Error::Metric(_))));
        assert!(matches!(report_at_threshold(&set(&[1.0, 1.0], &[1, 1]), 0.3), Err(Error::Metric(_))));
    }

    #[test]
    fn hand_report() {
        let r = report_at_threshold(&set(&[0.2, 0.4], &[0, 1]), 0.3).unwrap();
        assert_eq!((r.tpr, r.tnr, r.bac), (100.0, 100.0, 100.0));
        // Ties at the threshold count as fake.
        let r = report_at_threshold(&set(&[0.3, 0.3], &[0, 1]), 0.3).unwrap();
        assert_eq!((r.tpr, r.tnr), (100.0, 0.0));
    }

    #[test]
    fn roc_shape() {
        let perfect = roc_points(&set(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap();
        assert_eq!(perfect.first(), Some(&(0.0, 0.0)));
        assert_eq!(perfect.last(), Some(&(1.0, 1.0)));
        assert!(perfect.contains(&(0.0, 1.0)));
        let anti = roc_points(&set(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0])).unwrap();
        assert!(anti.contains(&(1.0, 0.0)));
        let tied = roc_points(&set(&[0.5, 0.5, 0.5], &[0, 1, 1])).unwrap();
        assert_eq!(tied, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn eer_interpolates_between_bracketing_points() {
        // Sweep: (0,0) → t=.9 fake (fpr 0, tpr .5) → t=.6 real (fpr .5, tpr .5)
        // → t=.4 fake (fpr .5, tpr 1) → t=.1 real (1, 1). FNR − FPR goes
        // 1, .5, 0: crossing exactly at the .6 point, EER 50%.
        let s = set(&[0.9, 0.6, 0.4, 0.1], &[1, 0, 1, 0]);
        let (eer, t) = compute_eer(&s).unwrap();
        assert!((eer - 50.0).abs() < 1e-12);
        assert_eq!(t, 0.6);
    }

    #[test]
    fn aggregate_means_and_pooling() {
        let s = ScoreSet::new(
            (0..8).map(|i| format!("u{i}")).collect(),
            vec![0.1, 0.9, 0.2, 0.8, 0.7, 0.6, 0.4, 0.5],
            vec![0, 1, 0, 1, 0, 1, 0, 1],
        )
        .unwrap();
        let domains: Vec<String> = ["a", "a", "a", "a", "x", "x", "x", "x"].iter().map(|d| d.to_string()).collect();
        let unknown: BTreeSet<String> = ["x".to_string()].into();
        let r = aggregate("sys", "test", 0.3, &s, &domains, &unknown).unwrap();
        assert_eq!(r.domains.len(), 2);
        assert_eq!(r.known, Some(r.domains["a"].eer));
        assert_eq!(r.unknown, Some(r.domains["x"].eer));
        assert_eq!(r.overall, report_at_threshold(&s, 0.3).unwrap());
        assert_eq!(r.known_domains(&unknown), vec!["a"]);
    }

    #[test]
    fn csv_round_trip_and_hard_scores() {
        let dir = tempfile::tempdir().unwrap();
        let s = ScoreSet::new(vec!["a/1".into(), "b,2".into()], vec![0.25, 0.75], vec![0, 1]).unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv(&path, None).unwrap();
        assert_eq!(ScoreSet::read_csv(&path).unwrap(), s);
        s.write_csv(&path, Some(0.3)).unwrap();
        assert_eq!(ScoreSet::read_csv(&path).unwrap().scores, vec![0.0, 1.0]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,score,label\n"));
    }
}
