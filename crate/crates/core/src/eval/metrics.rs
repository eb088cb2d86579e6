use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator};
use crate::par;
use crate::preprocess::BagSet;

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &y) in preds.iter().zip(labels) {
        for (what, v) in [("predicted class", p), ("true class", y)] {
            if v >= k {
                return Err(Error::Index {
                    what,
                    index: v,
                    bound: k,
                });
            }
        }
        counts[y][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Header row of class names, then one row per true class.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("true\\pred");
        for n in names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            s.push_str(&names[i]);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }

    /// Parses [`ConfusionMatrix::to_csv`] output.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut counts = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let row = line
                .split(',')
                .skip(1)
                .map(|c| c.trim().parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("confusion csv line {}: {e}", n + 1)))?;
            counts.push(row);
        }
        if counts.iter().any(|r| r.len() != counts.len()) {
            return Err(Error::Format("confusion csv is not square".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    /// Heat-map data: `pred true count` triples with a blank line after each
    /// true class, for `plot 'f' using 1:2:3 with image`.
    pub fn to_gnuplot(&self, names: &[String]) -> String {
        let mut s = String::from("# predicted true count\n# classes:");
        for (i, n) in names.iter().enumerate() {
            let _ = write!(s, " {i}={n}");
        }
        s.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                let _ = writeln!(s, "{p} {t} {c}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Which classifier produced the predictions (`disc`, `mil`, `knn`, ...).
    pub head: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, per-class precision/recall/F1 and macro-F1. Empty denominators
/// count as 0.
pub fn metrics(cm: &ConfusionMatrix, head: &str, names: &[String]) -> MetricsReport {
    let k = cm.classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
            let support: u64 = cm.counts[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class: names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let macro_f1 = if k == 0 {
        0.0
    } else {
        per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64
    };
    MetricsReport {
        head: head.to_string(),
        accuracy: ratio(cm.trace(), cm.total()),
        macro_f1,
        per_class,
        confusion: cm.clone(),
    }
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// `head,class,precision,recall,f1,support` rows plus a `macro` and an
    /// `accuracy` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("head,class,precision,recall,f1,support\n");
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                self.head, m.class, m.precision, m.recall, m.f1, m.support
            );
        }
        let total = self.confusion.total();
        let _ = writeln!(s, "{},macro,,,{},{total}", self.head, self.macro_f1);
        let _ = writeln!(s, "{},accuracy,,,{},{total}", self.head, self.accuracy);
        s
    }

    /// Writes `<stem>.json`, `<stem>.csv`, `<stem>_confusion.csv` and
    /// `<stem>_confusion.dat` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let names: Vec<String> = self.per_class.iter().map(|m| m.class.clone()).collect();
        let files = [
            (format!("{stem}.json"), self.to_json() + "\n"),
            (format!("{stem}.csv"), self.to_csv()),
            (format!("{stem}_confusion.csv"), self.confusion.to_csv(&names)),
            (format!("{stem}_confusion.dat"), self.confusion.to_gnuplot(&names)),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn report(preds: &[usize], data: &BagSet, head: &str) -> Result<MetricsReport> {
    let cm = confusion_matrix(preds, &data.labels(), data.class_count)?;
    Ok(metrics(&cm, head, &data.label_set.class_names()))
}

/// Class-head predictions of the discriminator.
pub fn evaluate_discriminator(disc: &Discriminator, data: &BagSet) -> Result<MetricsReport> {
    let preds = par::map(&data.bags, |b| disc.predict_class(&b.to_tensor()))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    report(&preds, data, "disc")
}

/// Conjunctive-MIL predictions of the generator's encoder.
pub fn evaluate_mil(gen: &Generator, data: &BagSet) -> Result<MetricsReport> {
    let preds = par::map(&data.bags, |b| Ok(gen.predict(&b.to_tensor())?.predicted_class()))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    report(&preds, data, "mil")
}

/// k-nearest-neighbour vote on flattened bags. Ties between classes go to
/// the class whose voters are closer in total.
pub fn knn_baseline(train: &BagSet, test: &BagSet, k: usize) -> Result<MetricsReport> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::contract(format!("k must be odd and ≥ 1, got {k}")));
    }
    if k > train.len() {
        return Err(Error::contract(format!("k = {k} exceeds the {} training bags", train.len())));
    }
    if train.t * train.d != test.t * test.d {
        return Err(Error::contract("train and test bags differ in size"));
    }
    let classes = train.class_count.max(test.class_count);
    let preds = par::map(&test.bags, |q| {
        let mut dist: Vec<(f64, usize)> = train
            .bags
            .iter()
            .map(|b| {
                let d2: f64 = b.instances.iter().zip(&q.instances).map(|(a, c)| (a - c) * (a - c)).sum();
                (d2.sqrt(), b.label.index())
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![(0usize, 0.0f64); classes];
        for &(d, c) in &dist[..k] {
            votes[c].0 += 1;
            votes[c].1 += d;
        }
        (0..classes)
            .max_by(|&a, &b| {
                votes[a]
                    .0
                    .cmp(&votes[b].0)
                    .then(votes[b].1.total_cmp(&votes[a].1))
                    .then(b.cmp(&a))
            })
            .unwrap()
    });
    let cm = confusion_matrix(&preds, &test.labels(), classes)?;
    Ok(metrics(&cm, "knn", &test.label_set.class_names()))
}
