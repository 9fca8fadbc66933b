//! JSON Lines datasets, seeded splits, and the held-out label guard.
//!
//! Each line is `{"text": …, "label": …}` or
//! `{"premise": …, "hypothesis": …, "label": …}`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsError;
use crate::prompt::{proportion_quotas, Demonstration, Input};

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged, deny_unknown_fields)]
enum Row {
    Pair {
        premise: String,
        hypothesis: String,
        label: usize,
    },
    Text {
        text: String,
        label: usize,
    },
}

impl From<Row> for Demonstration {
    fn from(row: Row) -> Self {
        match row {
            Row::Text { text, label } => Demonstration::new(text, label),
            Row::Pair {
                premise,
                hypothesis,
                label,
            } => Demonstration {
                input: Input::Pair {
                    premise,
                    hypothesis,
                },
                label,
            },
        }
    }
}

impl From<&Demonstration> for Row {
    fn from(d: &Demonstration) -> Self {
        match &d.input {
            Input::Text(text) => Row::Text {
                text: text.clone(),
                label: d.label,
            },
            Input::Pair {
                premise,
                hypothesis,
            } => Row::Pair {
                premise: premise.clone(),
                hypothesis: hypothesis.clone(),
                label: d.label,
            },
        }
    }
}

/// Labeled rows loaded from disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Demonstration>,
}

impl Dataset {
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| Error::Dataset {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })?;
            rows.push(row.into());
        }
        Ok(Self { rows })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        for d in &self.rows {
            serde_json::to_writer(&mut out, &Row::from(d))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Balanced synthetic task: `per_class` rows per class with opaque texts.
    pub fn synthetic(classes: usize, per_class: usize, tag: &str) -> Self {
        let rows = (0..per_class)
            .flat_map(|i| (0..classes).map(move |c| (i, c)))
            .map(|(i, c)| Demonstration::new(format!("{tag} item {i:05} group {c}"), c))
            .collect();
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        match self.rows.iter().position(|d| d.label >= classes) {
            Some(i) => Err(Error::Config(format!(
                "row {} has label {} but the label space has {classes} classes",
                i + 1,
                self.rows[i].label
            ))),
            None => Ok(()),
        }
    }
}

/// Seeded shuffle of row indices.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Pick `size` rows with class shares matching `rows`, keeping original order.
/// Returns `(picked, rest)`.
pub fn stratified_split(
    rows: &[Demonstration],
    size: usize,
    seed: u64,
) -> (Vec<Demonstration>, Vec<Demonstration>) {
    if size >= rows.len() {
        return (rows.to_vec(), Vec::new());
    }
    let classes = rows.iter().map(|d| d.label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, d) in rows.iter().enumerate() {
        by_class[d.label].push(i);
    }
    let shares: Vec<f64> = by_class
        .iter()
        .map(|v| v.len() as f64 / rows.len() as f64)
        .collect();
    let quotas = proportion_quotas(size, &shares).expect("class frequencies sum to 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut take = vec![false; rows.len()];
    for (members, quota) in by_class.iter_mut().zip(quotas) {
        members.shuffle(&mut rng);
        for &i in members.iter().take(quota) {
            take[i] = true;
        }
    }
    let (mut picked, mut rest) = (Vec::new(), Vec::new());
    for (d, t) in rows.iter().zip(take) {
        if t {
            picked.push(d.clone());
        } else {
            rest.push(d.clone());
        }
    }
    (picked, rest)
}

/// Test labels that can only be compared against finished predictions.
///
/// There is no accessor for the raw labels: the harness has to produce a
/// prediction vector before it can learn anything about the test set.
#[derive(Debug, Clone)]
pub struct HeldOutLabels {
    labels: Vec<usize>,
}

impl HeldOutLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample correctness of `preds`.
    pub fn correctness(&self, preds: &[usize]) -> Result<Vec<bool>, MetricsError> {
        if preds.len() != self.labels.len() {
            return Err(MetricsError::LengthMismatch {
                left: preds.len(),
                right: self.labels.len(),
            });
        }
        Ok(preds.iter().zip(&self.labels).map(|(p, y)| p == y).collect())
    }

    pub fn accuracy(&self, preds: &[usize]) -> Result<f64, MetricsError> {
        if preds.len() != self.labels.len() {
            return Err(MetricsError::LengthMismatch {
                left: preds.len(),
                right: self.labels.len(),
            });
        }
        crate::metrics::accuracy(preds, &self.labels)
    }
}

/// Test inputs with their labels sealed away.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub inputs: Vec<Input>,
    pub labels: HeldOutLabels,
}

impl TestSet {
    pub fn from_rows(rows: Vec<Demonstration>) -> Self {
        let (inputs, labels) = rows.into_iter().map(|d| (d.input, d.label)).unzip();
        Self {
            inputs,
            labels: HeldOutLabels::new(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_both_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"text\": \"good film\", \"label\": 0}\n\n\
             {\"premise\": \"p\", \"hypothesis\": \"h\", \"label\": 1}\n",
        )
        .unwrap();
        let ds = Dataset::load_jsonl(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.rows[0], Demonstration::new("good film", 0));
        assert!(matches!(ds.rows[1].input, Input::Pair { .. }));

        let out = dir.path().join("o.jsonl");
        ds.write_jsonl(&out).unwrap();
        assert_eq!(Dataset::load_jsonl(&out).unwrap(), ds);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"text\": \"a\", \"label\": 0}\n{\"txt\": 1}\n").unwrap();
        match Dataset::load_jsonl(&path).unwrap_err() {
            Error::Dataset { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn stratified_split_keeps_shares() {
        let ds = Dataset::synthetic(2, 50, "s");
        let (picked, rest) = stratified_split(&ds.rows, 20, 4);
        assert_eq!(picked.len(), 20);
        assert_eq!(rest.len(), 80);
        assert_eq!(picked.iter().filter(|d| d.label == 0).count(), 10);
        let (again, _) = stratified_split(&ds.rows, 20, 4);
        assert_eq!(picked, again);
    }

    #[test]
    fn held_out_labels_only_score() {
        let t = TestSet::from_rows(vec![Demonstration::new("a", 0), Demonstration::new("b", 1)]);
        assert_eq!(t.labels.correctness(&[0, 0]).unwrap(), vec![true, false]);
        assert_eq!(t.labels.accuracy(&[0, 1]).unwrap(), 1.0);
        assert!(t.labels.accuracy(&[0]).is_err());
    }
}
