use serde::Serialize;

use crate::error::{Error, Result};

/// Per-example, per-label nonconformity scores with the true label of each row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreMatrix {
    labels: usize,
    scores: Vec<f64>,
    true_label: Vec<usize>,
}

impl ScoreMatrix {
    /// Builds a matrix from row-major scores.
    pub fn new(labels: usize, scores: Vec<f64>, true_label: Vec<usize>) -> Result<Self> {
        if labels == 0 {
            return Err(Error::domain("score matrix needs at least one label"));
        }
        if scores.len() != labels * true_label.len() {
            return Err(Error::domain(format!(
                "{} scores do not fill {} rows of {labels} labels",
                scores.len(),
                true_label.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::domain(format!("score {bad} is not finite")));
        }
        if let Some(&y) = true_label.iter().find(|&&y| y >= labels) {
            return Err(Error::domain(format!("true label {y} is out of range")));
        }
        Ok(Self {
            labels,
            scores,
            true_label,
        })
    }

    pub fn rows(&self) -> usize {
        self.true_label.len()
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.labels..(i + 1) * self.labels]
    }

    pub fn true_label(&self, i: usize) -> usize {
        self.true_label[i]
    }

    /// Score of the true label in row `i`.
    pub fn true_score(&self, i: usize) -> f64 {
        self.row(i)[self.true_label[i]]
    }

    /// Copies the listed rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut scores = Vec::with_capacity(rows.len() * self.labels);
        for &i in rows {
            scores.extend_from_slice(self.row(i));
        }
        Self {
            labels: self.labels,
            scores,
            true_label: rows.iter().map(|&i| self.true_label[i]).collect(),
        }
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.scores[i * self.labels..(i + 1) * self.labels]
    }

    pub(crate) fn set_true_label(&mut self, i: usize, y: usize) {
        debug_assert!(y < self.labels);
        self.true_label[i] = y;
    }

    /// Reads a CSV with header `true_label,s_0,...,s_{L-1}`.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("true_label") || header.len() < 2 {
            return Err(Error::Parse(
                "matrix header must be true_label,s_0,...,s_{L-1}".into(),
            ));
        }
        for (j, name) in header.iter().skip(1).enumerate() {
            if name != format!("s_{j}") {
                return Err(Error::Parse(format!("column {} should be s_{j}, found {name:?}", j + 1)));
            }
        }
        let labels = header.len() - 1;
        let mut scores = Vec::new();
        let mut true_label = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let bad = |what: &str| Error::Parse(format!("row {}: {what}", line + 1));
            let y: usize = record
                .get(0)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("cannot parse true_label"))?;
            if y >= labels {
                return Err(bad("true_label out of range"));
            }
            true_label.push(y);
            for field in record.iter().skip(1) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| bad(&format!("cannot parse score {field:?}")))?;
                if !v.is_finite() {
                    return Err(bad("score is not finite"));
                }
                scores.push(v);
            }
        }
        Self::new(labels, scores, true_label)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["true_label".to_string()];
        header.extend((0..self.labels).map(|j| format!("s_{j}")));
        w.write_record(&header)?;
        for i in 0..self.rows() {
            let mut rec = vec![self.true_label[i].to_string()];
            rec.extend(self.row(i).iter().map(|s| s.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
