//! Detection metrics: accuracy, ROC AUC (Mann-Whitney, ties count half) and
//! equal error rate, plus the per-sample evaluation report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decision threshold on `sigmoid(logit)` for accuracy.
pub const THRESHOLD: f64 = 0.5;

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Metric(format!("label {l} is not 0 or 1")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

fn require_both_classes(pos: usize, neg: usize) -> Result<()> {
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "AUC/EER need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok(())
}

/// Fraction of samples whose thresholded score matches the label
/// (score >= 0.5 predicts fake).
pub fn compute_acc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= THRESHOLD) == (l == 1))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Probability that a random fake outscores a random real, ties counting
/// one half. Computed from mid-ranks in O(n log n).
pub fn compute_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    require_both_classes(pos, neg)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled mid-ranks of positives keeps everything integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the mid-rank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_mid * tied_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// ROC points (fpr, tpr) from the strictest threshold to the loosest,
/// starting at (0, 0) and ending at (1, 1).
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_inputs(scores, labels)?;
    require_both_classes(pos, neg)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Error rate where the false-positive and false-negative rates meet,
/// linearly interpolated between adjacent ROC points.
pub fn compute_eer(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let points = roc_points(scores, labels)?;
    let gap = |(fpr, tpr): (f64, f64)| fpr - (1.0 - tpr);
    for pair in points.windows(2) {
        let (p0, p1) = (pair[0], pair[1]);
        let (d0, d1) = (gap(p0), gap(p1));
        if d1 >= 0.0 {
            if d0 >= 0.0 {
                return Ok(p0.0);
            }
            let t = d0 / (d0 - d1);
            return Ok(p0.0 + t * (p1.0 - p0.0));
        }
    }
    // The last point (1, 1) always has gap 1.
    unreachable!("ROC ends at (1, 1)")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub label: u8,
    pub score: f64,
}

/// Change of metrics under one perturbation (perturbed − clean).
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbDelta {
    pub kind: String,
    pub strength: f64,
    pub acc: f64,
    pub auc: f64,
    pub delta_acc: f64,
    pub delta_auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub acc: f64,
    pub auc: f64,
    pub eer: f64,
    pub samples: Vec<ScoreRecord>,
    pub deltas: Vec<PerturbDelta>,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<ScoreRecord>) -> Result<Self> {
        let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
        let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
        Ok(EvalReport {
            acc: compute_acc(&scores, &labels)?,
            auc: compute_auc(&scores, &labels)?,
            eer: compute_eer(&scores, &labels)?,
            samples,
            deltas: Vec::new(),
        })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Attaches the change relative to `clean`.
    pub fn delta_against(&self, clean: &EvalReport, kind: &str, strength: f64) -> PerturbDelta {
        PerturbDelta {
            kind: kind.to_string(),
            strength,
            acc: self.acc,
            auc: self.auc,
            delta_acc: self.acc - clean.acc,
            delta_auc: self.auc - clean.auc,
        }
    }

    /// `id,label,score` rows followed by `#key,value` aggregate lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,label,score\n");
        for r in &self.samples {
            let _ = writeln!(s, "{},{},{}", r.id, r.label, r.score);
        }
        let _ = writeln!(s, "#acc,{}", self.acc);
        let _ = writeln!(s, "#auc,{}", self.auc);
        let _ = writeln!(s, "#eer,{}", self.eer);
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses [`EvalReport::to_csv`] output. Aggregates are taken from the
    /// footer as stored, not recomputed.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::input(format!("malformed report line '{line}'"));
        let mut lines = text.lines();
        if lines.next() != Some("id,label,score") {
            return Err(Error::input("report is missing the 'id,label,score' header"));
        }
        let mut samples = Vec::new();
        let (mut acc, mut auc, mut eer) = (None, None, None);
        for line in lines.filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.split_once(',').ok_or_else(|| bad(line))?;
                let v: f64 = v.parse().map_err(|_| bad(line))?;
                match k {
                    "acc" => acc = Some(v),
                    "auc" => auc = Some(v),
                    "eer" => eer = Some(v),
                    _ => return Err(bad(line)),
                }
                continue;
            }
            let mut parts = line.rsplitn(3, ',');
            let score = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(line))?;
            let label = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(line))?;
            let id = parts.next().ok_or_else(|| bad(line))?.to_string();
            samples.push(ScoreRecord { id, label, score });
        }
        Ok(EvalReport {
            acc: acc.ok_or_else(|| Error::input("report has no #acc line"))?,
            auc: auc.ok_or_else(|| Error::input("report has no #auc line"))?,
            eer: eer.ok_or_else(|| Error::input("report has no #eer line"))?,
            samples,
            deltas: Vec::new(),
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        EvalReport::parse_csv(&fs::read_to_string(path)?)
    }
}

/// `kind,strength,acc,auc,delta_acc,delta_auc` table.
pub fn perturb_csv(deltas: &[PerturbDelta]) -> String {
    let mut s = String::from("kind,strength,acc,auc,delta_acc,delta_auc\n");
    for d in deltas {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            d.kind, d.strength, d.acc, d.auc, d.delta_acc, d.delta_auc
        );
    }
    s
}
