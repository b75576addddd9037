//! HER2-level semantic evaluation over precomputed feature vectors:
//! top-k retrieval accuracy against a ground-truth library and kNN
//! majority-vote classification.
//!
//! Distances are cosine distances `1 - cos(q, v)`, clamped to `[0, 2]`.
//! Neighbor order is ascending distance, ties broken by ascending id, so
//! results never depend on library order.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::parallelism_enabled;

pub const MAX_LEVEL: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: u8,
    pub vector: Vec<f64>,
}

impl FeatureRecord {
    pub fn new(id: impl Into<String>, label: u8, vector: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            label,
            vector,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLibrary {
    records: Vec<FeatureRecord>,
    norms: Vec<f64>,
    dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: String,
    pub label: u8,
    pub distance: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_vector(v: &[f64], what: &str) -> Result<f64> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::MalformedFeatures(format!("{what}: non-finite component")));
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::MalformedFeatures(format!("{what}: zero vector")));
    }
    Ok(n)
}

impl FeatureLibrary {
    pub fn new(records: Vec<FeatureRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::MalformedFeatures("library is empty".into()))?;
        let dimension = first.vector.len();
        if dimension == 0 {
            return Err(Error::MalformedFeatures("feature dimension is zero".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        let mut norms = Vec::with_capacity(records.len());
        for r in &records {
            if r.vector.len() != dimension {
                return Err(Error::MalformedFeatures(format!(
                    "record `{}` has dimension {}, expected {dimension}",
                    r.id,
                    r.vector.len()
                )));
            }
            if r.label > MAX_LEVEL {
                return Err(Error::MalformedFeatures(format!("record `{}` has label {} outside 0..=3", r.id, r.label)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::MalformedFeatures(format!("duplicate id `{}`", r.id)));
            }
            norms.push(check_vector(&r.vector, &format!("record `{}`", r.id))?);
        }
        Ok(Self {
            records,
            norms,
            dimension,
        })
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FeatureRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<f64> {
        if query.len() != self.dimension {
            return Err(Error::DimensionMismatch(format!(
                "query has dimension {}, library has {}",
                query.len(),
                self.dimension
            )));
        }
        if k == 0 || k > self.records.len() {
            return Err(Error::invalid("k", format!("{k} not in 1..={}", self.records.len())));
        }
        check_vector(query, "query")
    }

    /// All records, nearest first.
    fn ranked(&self, query: &[f64], query_norm: f64) -> Vec<(f64, usize)> {
        let mut scored: Vec<(f64, usize)> = self
            .records
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (r, n))| {
                let dot: f64 = r.vector.iter().zip(query).map(|(a, b)| a * b).sum();
                ((1.0 - dot / (n * query_norm)).clamp(0.0, 2.0), i)
            })
            .collect();
        scored.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.records[a.1].id.cmp(&self.records[b.1].id))
        });
        scored
    }
}

/// Reads `id,label,f0,...,f{d-1}` CSV.
pub fn load_feature_library(path: impl AsRef<Path>) -> Result<FeatureLibrary> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let file = std::fs::File::open(path)?;
    parse_feature_csv(std::io::BufReader::new(file))
}

pub fn parse_feature_csv(reader: impl std::io::Read) -> Result<FeatureLibrary> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::MalformedFeatures(format!("header: {e}")))?
        .clone();
    let expected_prefix = ["id", "label"];
    if header.len() < 3 || header.iter().take(2).ne(expected_prefix) {
        return Err(Error::MalformedFeatures(
            "header must be `id,label,f0,...`".into(),
        ));
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::MalformedFeatures(format!("column {} is `{name}`, expected `f{j}`", j + 2)));
        }
    }
    let dim = header.len() - 2;

    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let line = line + 2;
        let row = row.map_err(|e| Error::MalformedFeatures(format!("line {line}: {e}")))?;
        if row.len() != dim + 2 {
            return Err(Error::MalformedFeatures(format!(
                "line {line}: {} fields, expected {}",
                row.len(),
                dim + 2
            )));
        }
        let label: u8 = row[1]
            .parse()
            .map_err(|_| Error::MalformedFeatures(format!("line {line}: label `{}` is not an integer in 0..=3", &row[1])))?;
        let vector = row
            .iter()
            .skip(2)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::MalformedFeatures(format!("line {line}: `{f}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(FeatureRecord::new(&row[0], label, vector));
    }
    FeatureLibrary::new(records)
}

/// Writes records in the format [`parse_feature_csv`] reads.
pub fn write_feature_csv(records: &[FeatureRecord], writer: impl std::io::Write) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| Error::MalformedFeatures(e.to_string()))?;
    for r in records {
        let mut row = vec![r.id.clone(), r.label.to_string()];
        row.extend(r.vector.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| Error::MalformedFeatures(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// The `k` nearest records by cosine distance.
pub fn nearest_neighbors(lib: &FeatureLibrary, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
    let qn = lib.check_query(query, k)?;
    Ok(lib
        .ranked(query, qn)
        .into_iter()
        .take(k)
        .map(|(distance, i)| Neighbor {
            id: lib.records[i].id.clone(),
            label: lib.records[i].label,
            distance,
        })
        .collect())
}

/// Majority label of the `k` nearest; ties go to the smaller summed
/// distance, then to the smaller label.
pub fn knn_classify(lib: &FeatureLibrary, query: &[f64], k: usize) -> Result<u8> {
    let neighbors = nearest_neighbors(lib, query, k)?;
    Ok(vote(&neighbors))
}

fn vote(neighbors: &[Neighbor]) -> u8 {
    let mut count = [0usize; MAX_LEVEL as usize + 1];
    let mut dist = [0.0f64; MAX_LEVEL as usize + 1];
    for n in neighbors {
        count[n.label as usize] += 1;
        dist[n.label as usize] += n.distance;
    }
    (0..=MAX_LEVEL)
        .filter(|&l| count[l as usize] > 0)
        .min_by(|&a, &b| {
            let (a, b) = (a as usize, b as usize);
            count[b]
                .cmp(&count[a])
                .then_with(|| dist[a].total_cmp(&dist[b]))
                .then_with(|| a.cmp(&b))
        })
        .expect("at least one neighbor")
}

fn map_queries<T: Send>(queries: &[FeatureRecord], f: impl Fn(&FeatureRecord) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if parallelism_enabled() {
        queries.par_iter().map(f).collect()
    } else {
        queries.iter().map(f).collect()
    }
}

/// Fraction of queries whose `k` nearest records include one with the
/// query's label, for each requested `k`.
pub fn topk_accuracy(lib: &FeatureLibrary, queries: &[FeatureRecord], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if queries.is_empty() {
        return Err(Error::invalid("queries", "empty"));
    }
    let kmax = *ks.iter().max().ok_or_else(|| Error::invalid("ks", "empty"))?;
    for &k in ks {
        if k == 0 || k > lib.len() {
            return Err(Error::invalid("k", format!("{k} not in 1..={}", lib.len())));
        }
    }
    // rank of the first same-label neighbor, or None
    let first_hit = map_queries(queries, |q| {
        let neighbors = nearest_neighbors(lib, &q.vector, kmax)?;
        Ok(neighbors.iter().position(|n| n.label == q.label))
    })?;
    let total = queries.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = first_hit.iter().filter(|h| h.is_some_and(|r| r < k)).count();
            (k, hits as f64 / total)
        })
        .collect())
}

/// Fraction of queries whose kNN vote equals their label.
pub fn knn_accuracy(lib: &FeatureLibrary, queries: &[FeatureRecord], k: usize) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::invalid("queries", "empty"));
    }
    let correct = map_queries(queries, |q| Ok(knn_classify(lib, &q.vector, k)? == q.label))?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / queries.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnReport {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub topk: BTreeMap<String, f64>,
    pub knn: KnnReport,
}

impl AccuracyReport {
    pub fn compute(lib: &FeatureLibrary, queries: &[FeatureRecord], ks: &[usize], knn_k: usize) -> Result<Self> {
        let topk = topk_accuracy(lib, queries, ks)?
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Ok(Self {
            topk,
            knn: KnnReport {
                k: knn_k,
                accuracy: knn_accuracy(lib, queries, knn_k)?,
            },
        })
    }
}
