//! Near-duplicate exclusion by Euclidean distance between embeddings.
//!
//! Ids are visited in ascending lexicographic order. An id is kept when its
//! distance to every already kept id exceeds the threshold; otherwise it joins
//! the cluster of its nearest kept id (earliest kept id on ties).
//!
//! # Embedding files
//!
//! CSV: one row per vector, `id,v0,v1,...`, optional header row whose first
//! field is `id`.
//!
//! Binary (`.bin`), all integers and floats little-endian:
//!
//! ```text
//! magic   4 bytes  "SEMB"
//! version u32      1
//! count   u32
//! dim     u32
//! count x { id_len u32, id utf-8 bytes, dim x f64 }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SEMB";
const BIN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T> {
    pub id: String,
    pub values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(id: impl Into<String>, values: Vec<T>) -> Result<Self> {
        let v = EmbeddingVector {
            id: id.into(),
            values,
        };
        if let Some(x) = v.values.iter().find(|x| !x.is_finite()) {
            return Err(Error::input(format!("embedding {:?} has non-finite value {x}", v.id)));
        }
        Ok(v)
    }
}

/// A kept id and the ids folded into it, representative first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub representative: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupOutcome {
    /// Kept ids, sorted.
    pub kept: Vec<String>,
    /// One entry per kept id, in the order of `kept`.
    pub clusters: Vec<Cluster>,
}

impl DedupOutcome {
    pub fn dropped(&self) -> impl Iterator<Item = &str> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().skip(1).map(String::as_str))
    }

    /// Clusters that absorbed at least one duplicate.
    pub fn duplicate_clusters(&self) -> impl Iterator<Item = &Cluster> {
        self.clusters.iter().filter(|c| c.members.len() > 1)
    }
}

pub fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .fold(T::zero(), |s, v| s + v)
        .sqrt()
}

/// Embeddings sorted by id, after checking lengths and id uniqueness.
fn sorted_checked<T: Scalar>(embeddings: &[EmbeddingVector<T>]) -> Result<Vec<&EmbeddingVector<T>>> {
    let mut order: Vec<&EmbeddingVector<T>> = embeddings.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(first) = order.first() {
        let dim = first.values.len();
        if let Some(bad) = order.iter().find(|e| e.values.len() != dim) {
            return Err(Error::LengthMismatch {
                expected: dim,
                found: bad.values.len(),
            });
        }
    }
    for w in order.windows(2) {
        if w[0].id == w[1].id {
            return Err(Error::input(format!("duplicate embedding id {:?}", w[0].id)));
        }
    }
    Ok(order)
}

pub fn near_duplicate_filter<T: Scalar>(
    embeddings: &[EmbeddingVector<T>],
    threshold: T,
) -> Result<DedupOutcome> {
    if !(threshold > T::zero()) || !threshold.is_finite() {
        return Err(Error::param(format!(
            "dedup threshold must be a positive finite number, got {threshold}"
        )));
    }
    let order = sorted_checked(embeddings)?;
    let mut kept: Vec<&EmbeddingVector<T>> = Vec::new();
    let mut clusters: Vec<Cluster> = Vec::new();
    for e in order {
        let mut nearest: Option<(usize, T)> = None;
        for (i, k) in kept.iter().enumerate() {
            let d = euclidean(&e.values, &k.values);
            if d <= threshold && nearest.is_none_or(|(_, best)| d < best) {
                nearest = Some((i, d));
            }
        }
        match nearest {
            Some((i, _)) => clusters[i].members.push(e.id.clone()),
            None => {
                kept.push(e);
                clusters.push(Cluster {
                    representative: e.id.clone(),
                    members: vec![e.id.clone()],
                });
            }
        }
    }
    Ok(DedupOutcome {
        kept: kept.iter().map(|e| e.id.clone()).collect(),
        clusters,
    })
}

/// The outcome of filtering disabled: every id kept as its own cluster.
/// Inputs are validated as for [`near_duplicate_filter`].
pub fn keep_all<T: Scalar>(embeddings: &[EmbeddingVector<T>]) -> Result<DedupOutcome> {
    let order = sorted_checked(embeddings)?;
    Ok(DedupOutcome {
        kept: order.iter().map(|e| e.id.clone()).collect(),
        clusters: order
            .iter()
            .map(|e| Cluster {
                representative: e.id.clone(),
                members: vec![e.id.clone()],
            })
            .collect(),
    })
}

pub fn parse_embeddings_csv<T: Scalar>(text: &str) -> Result<Vec<EmbeddingVector<T>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().trim();
        if i == 0 && id == "id" {
            continue;
        }
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| Error::input(format!("embeddings line {}: bad number {f:?}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddingVector::new(id, values)?);
    }
    Ok(out)
}

pub fn embeddings_to_csv<T: Scalar>(embeddings: &[EmbeddingVector<T>]) -> String {
    let mut s = String::new();
    for e in embeddings {
        s.push_str(&e.id);
        for v in &e.values {
            s.push(',');
            s.push_str(&v.as_f64().to_string());
        }
        s.push('\n');
    }
    s
}

pub fn embeddings_to_bytes<T: Scalar>(embeddings: &[EmbeddingVector<T>]) -> Result<Vec<u8>> {
    let dim = embeddings.first().map_or(0, |e| e.values.len());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BIN_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(embeddings.len()).map_err(|_| Error::input("too many embeddings"))?.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in embeddings {
        if e.values.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                found: e.values.len(),
            });
        }
        out.extend_from_slice(&(e.id.len() as u32).to_le_bytes());
        out.extend_from_slice(e.id.as_bytes());
        for v in &e.values {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn embeddings_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Vec<EmbeddingVector<T>>> {
    struct Cursor<'a>(&'a [u8]);
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.0.len() < n {
                return Err(Error::input("embeddings file truncated"));
            }
            let (h, t) = self.0.split_at(n);
            self.0 = t;
            Ok(h)
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
    }
    let mut c = Cursor(bytes);
    if c.take(4)? != MAGIC {
        return Err(Error::input("embeddings file: bad magic"));
    }
    let version = c.u32()?;
    if version != BIN_VERSION {
        return Err(Error::input(format!("embeddings file: unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let n = c.u32()? as usize;
        let id = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::input("embeddings file: id is not utf-8"))?
            .to_string();
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(T::lit(f64::from_le_bytes(c.take(8)?.try_into().unwrap())));
        }
        out.push(EmbeddingVector::new(id, values)?);
    }
    if !c.0.is_empty() {
        return Err(Error::input("embeddings file: trailing bytes"));
    }
    Ok(out)
}

/// Loads CSV or binary embeddings, chosen by the `.bin` extension.
pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<Vec<EmbeddingVector<T>>> {
    if path.extension().is_some_and(|e| e == "bin") {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        embeddings_from_bytes(&bytes)
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_embeddings_csv(&text)
    }
}

pub fn save_embeddings<T: Scalar>(path: &Path, embeddings: &[EmbeddingVector<T>]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "bin") {
        write_atomic(path, &embeddings_to_bytes(embeddings)?)
    } else {
        write_atomic(path, embeddings_to_csv(embeddings).as_bytes())
    }
}

/// Cluster membership as a map, for lookups in tests and reports.
pub fn cluster_index(outcome: &DedupOutcome) -> BTreeMap<&str, &str> {
    let mut m = BTreeMap::new();
    for c in &outcome.clusters {
        for id in &c.members {
            m.insert(id.as_str(), c.representative.as_str());
        }
    }
    m
}
