use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// `n` records of `d` real columns plus an optional target column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Vec<f64>,
    targets: Option<Vec<f64>>,
    /// Column name prefix for the CSV header (`x` for features, `count` for counts).
    prefix: String,
    /// Latents the data were generated from, when synthetic.
    pub truth: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(d: usize, features: Vec<f64>, targets: Option<Vec<f64>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Dataset("dataset needs at least one column".into()));
        }
        if features.is_empty() || features.len() % d != 0 {
            return Err(Error::Dataset(format!(
                "{} feature values do not form rows of width {d}",
                features.len()
            )));
        }
        let n = features.len() / d;
        if let Some(t) = &targets {
            if t.len() != n {
                return Err(Error::Dataset(format!("{} targets for {n} rows", t.len())));
            }
        }
        let all_finite = features.iter().chain(targets.iter().flatten()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Dataset("non-finite entry".into()));
        }
        Ok(Self {
            n,
            d,
            features,
            targets,
            prefix: "x".into(),
            truth: None,
        })
    }

    pub fn with_prefix(mut self, prefix: &str) -> Self {
        self.prefix = prefix.into();
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn target(&self, i: usize) -> Option<f64> {
        self.targets.as_ref().map(|t| t[i])
    }

    pub fn targets(&self) -> Option<&[f64]> {
        self.targets.as_deref()
    }

    /// Writes a header row and one record per line, targets last.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.d).map(|j| format!("{}{j}", self.prefix)).collect();
        if self.targets.is_some() {
            header.push("y".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(t) = self.target(i) {
                rec.push(t.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`write_csv`](Self::write_csv). A final column
    /// named `y` is read as the target.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let has_target = header.iter().last() == Some("y");
        let d = header.len() - usize::from(has_target);
        let prefix = header
            .get(0)
            .map(|h| h.trim_end_matches(|c: char| c.is_ascii_digit()).to_string())
            .unwrap_or_else(|| "x".into());
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Dataset(format!("unparsable value {field:?}")))?;
                if j < d {
                    features.push(v);
                } else {
                    targets.push(v);
                }
            }
        }
        let ds = Self::new(d, features, has_target.then_some(targets))?;
        Ok(ds.with_prefix(&prefix))
    }
}

/// A subset of rows with an identity used for caching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    pub batch_id: usize,
    indices: Vec<usize>,
    prior_only: bool,
}

impl MiniBatch {
    pub fn new(batch_id: usize, indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Dataset("mini-batch is empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Dataset(format!("row {bad} out of range for {n} rows")));
        }
        Ok(Self {
            batch_id,
            indices,
            prior_only: false,
        })
    }

    /// Every row of the dataset.
    pub fn full(n: usize) -> Self {
        Self {
            batch_id: 0,
            indices: (0..n).collect(),
            prior_only: false,
        }
    }

    /// A batch that gives the likelihood zero weight, so the log-joint reduces
    /// to the log-prior.
    pub fn prior_only(batch_id: usize) -> Self {
        Self {
            batch_id,
            indices: Vec::new(),
            prior_only: true,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_prior_only(&self) -> bool {
        self.prior_only
    }

    /// `N / |b|`, or 0 for prior-only batches.
    pub fn scale(&self, n: usize) -> f64 {
        if self.prior_only {
            0.0
        } else {
            n as f64 / self.indices.len() as f64
        }
    }
}

/// Splits `0..n` into disjoint batches of `batch_size` (the last one may be
/// ragged), shuffling the rows first when a generator is given.
pub fn partition_batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: Option<&mut R>,
) -> Result<Vec<MiniBatch>> {
    if n == 0 || batch_size == 0 {
        return Err(Error::Dataset("need n ≥ 1 and batch_size ≥ 1".into()));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        rows.shuffle(rng);
    }
    rows.chunks(batch_size)
        .enumerate()
        .map(|(id, c)| MiniBatch::new(id, c.to_vec(), n))
        .collect()
}
