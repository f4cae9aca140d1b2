//! Statistical building blocks: one hash-keyed count table per feature.
//!
//! Each table approximates `Pr(x_i | h(x_{-i}))` by raw counts. The Dirichlet
//! perturbation `alpha` is applied only when a conditional is queried, so a
//! single disintegration serves every privacy level.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Category, Dataset, Schema};
use crate::error::{PegsError, Result};
use crate::hashing::{build_hash_spec, HashSpec};

const MAGIC: &[u8; 8] = b"PEGSBLKS";
pub const FORMAT_VERSION: u32 = 1;

/// Category counts observed under one hash key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountRow {
    pub counts: Vec<u32>,
    pub total: u64,
}

impl CountRow {
    pub fn zeros(cardinality: usize) -> Self {
        CountRow {
            counts: vec![0; cardinality],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        let total = counts.iter().map(|&c| c as u64).sum();
        CountRow { counts, total }
    }

    fn add(&mut self, category: Category) {
        self.counts[category as usize] += 1;
        self.total += 1;
    }
}

/// How the `alpha` virtual samples are spread over the categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirichletPrior {
    /// `alpha` virtual samples in every category. The only variant covered by
    /// the differential-privacy calibration.
    #[default]
    Uniform,
    /// `C_i * alpha` virtual samples split in proportion to the feature's
    /// marginal frequencies (uniform when the marginal is empty).
    Proportional,
}

/// Perturbed conditional `(n_ij + alpha) / (N_key + C_i alpha)` for raw counts.
///
/// An empty row with `alpha > 0` gives the uniform vector. `None` signals an
/// undefined distribution (no counts and `alpha = 0`).
pub fn perturbed_distribution(counts: &[u32], total: u64, alpha: f64, out: &mut Vec<f64>) -> Option<()> {
    out.clear();
    let c = counts.len();
    let denom = total as f64 + c as f64 * alpha;
    if !(denom > 0.0) {
        return None;
    }
    out.extend(counts.iter().map(|&n| (n as f64 + alpha) / denom));
    Some(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub spec: HashSpec,
    rows: HashMap<u64, CountRow>,
}

impl FeatureTable {
    pub fn get(&self, key: u64) -> Option<&CountRow> {
        self.rows.get(&key)
    }

    /// Number of keys with at least one observation.
    pub fn occupied_keys(&self) -> usize {
        self.rows.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &CountRow)> {
        self.rows.iter().map(|(&k, r)| (k, r))
    }

    fn sorted_keys(&self) -> Vec<u64> {
        let mut keys: Vec<u64> = self.rows.keys().copied().collect();
        keys.sort_unstable();
        keys
    }
}

/// Per-feature hash specs and count tables for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingBlocks {
    schema: Arc<Schema>,
    tables: Vec<FeatureTable>,
    n_rows: u64,
    marginals: Vec<Vec<u64>>,
}

impl BuildingBlocks {
    /// Counts every row once per feature under the key of its condition.
    pub fn from_specs(dataset: &Dataset, specs: Vec<HashSpec>) -> Result<Self> {
        let schema = Arc::clone(dataset.schema_arc());
        if specs.len() != schema.len() || specs.iter().enumerate().any(|(i, s)| s.target != i) {
            return Err(PegsError::Schema("one hash spec per feature, in feature order, is required".into()));
        }
        let tables: Vec<FeatureTable> = specs
            .into_par_iter()
            .map(|spec| {
                let i = spec.target;
                let c = schema.cardinality(i);
                let mut rows: HashMap<u64, CountRow> = HashMap::new();
                for record in dataset.rows() {
                    rows.entry(spec.key_of_record(record))
                        .or_insert_with(|| CountRow::zeros(c))
                        .add(record[i]);
                }
                FeatureTable { spec, rows }
            })
            .collect();
        let marginals = (0..schema.len()).map(|i| dataset.counts(i)).collect();
        Ok(BuildingBlocks {
            schema,
            tables,
            n_rows: dataset.n_rows() as u64,
            marginals,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn n_features(&self) -> usize {
        self.tables.len()
    }

    pub fn n_rows(&self) -> u64 {
        self.n_rows
    }

    pub fn table(&self, i: usize) -> &FeatureTable {
        &self.tables[i]
    }

    pub fn hash_spec(&self, i: usize) -> &HashSpec {
        &self.tables[i].spec
    }

    pub fn specs(&self) -> Vec<HashSpec> {
        self.tables.iter().map(|t| t.spec.clone()).collect()
    }

    /// Marginal counts of feature `i` in the disintegrated data.
    pub fn marginal(&self, i: usize) -> &[u64] {
        &self.marginals[i]
    }

    #[inline]
    pub fn key_for(&self, i: usize, record: &[Category]) -> u64 {
        self.tables[i].spec.key_of_record(record)
    }

    pub fn count_row(&self, i: usize, key: u64) -> Option<&CountRow> {
        self.tables[i].rows.get(&key)
    }

    /// Writes the perturbed conditional of feature `i` at `key` into `out`.
    pub fn conditional_into(&self, i: usize, key: u64, alpha: f64, out: &mut Vec<f64>) -> Result<()> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(PegsError::Privacy(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let defined = match self.count_row(i, key) {
            Some(row) => perturbed_distribution(&row.counts, row.total, alpha, out),
            None => {
                let c = self.schema.cardinality(i);
                if alpha > 0.0 {
                    out.clear();
                    out.resize(c, 1.0 / c as f64);
                    Some(())
                } else {
                    None
                }
            }
        };
        defined.ok_or(PegsError::EmptyConditional { feature: i, key })
    }

    /// Like [`BuildingBlocks::conditional_into`] but with a selectable prior shape.
    pub fn conditional_with_prior(&self, i: usize, key: u64, alpha: f64, prior: DirichletPrior) -> Result<Vec<f64>> {
        match prior {
            DirichletPrior::Uniform => conditional(self, i, key, alpha),
            DirichletPrior::Proportional => {
                if !(alpha >= 0.0) || !alpha.is_finite() {
                    return Err(PegsError::Privacy(format!("alpha must be finite and >= 0, got {alpha}")));
                }
                let c = self.schema.cardinality(i);
                let marginal = &self.marginals[i];
                let m_total: u64 = marginal.iter().sum();
                let virt: Vec<f64> = if m_total == 0 {
                    vec![alpha; c]
                } else {
                    marginal
                        .iter()
                        .map(|&v| c as f64 * alpha * v as f64 / m_total as f64)
                        .collect()
                };
                let zeros = CountRow::zeros(c);
                let row = self.count_row(i, key).unwrap_or(&zeros);
                let denom = row.total as f64 + c as f64 * alpha;
                if !(denom > 0.0) {
                    return Err(PegsError::EmptyConditional { feature: i, key });
                }
                Ok(row
                    .counts
                    .iter()
                    .zip(&virt)
                    .map(|(&n, &a)| (n as f64 + a) / denom)
                    .collect())
            }
        }
    }

    /// Serialises into the checksummed `.pegsblocks` container.
    ///
    /// Layout (little endian): magic `PEGSBLKS`, u32 format version, u64
    /// header length, JSON header, then per feature a u64 section length
    /// followed by `(u64 key, C_i x u32 counts)` entries in ascending key
    /// order, and a trailing CRC-32 over every preceding byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = BlocksHeader {
            format_version: FORMAT_VERSION,
            schema: (*self.schema).clone(),
            hash_specs: self.specs(),
            n_rows: self.n_rows,
            marginals: self.marginals.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serialization is infallible");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for table in &self.tables {
            let c = self.schema.cardinality(table.spec.target);
            let keys = table.sorted_keys();
            let section_len = keys.len() * (8 + 4 * c);
            buf.extend_from_slice(&(section_len as u64).to_le_bytes());
            for key in keys {
                buf.extend_from_slice(&key.to_le_bytes());
                for &n in &table.rows[&key].counts {
                    buf.extend_from_slice(&n.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: String| PegsError::BlocksFormat {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < MAGIC.len() + 4 + 8 + 4 {
            return Err(fail("file too short; checksum cannot be verified".into()));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(fail("checksum mismatch (file truncated or corrupt)".into()));
        }
        let mut cur = Cursor { buf: body, pos: 0 };
        if cur.take(8).map_err(&fail)? != MAGIC {
            return Err(fail("not a building-blocks file (bad magic)".into()));
        }
        let version = cur.u32().map_err(&fail)?;
        if version != FORMAT_VERSION {
            return Err(fail(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = cur.u64().map_err(&fail)? as usize;
        let header: BlocksHeader = serde_json::from_slice(cur.take(header_len).map_err(&fail)?)
            .map_err(|e| fail(format!("bad header: {e}")))?;
        let schema = Arc::new(header.schema);
        if header.hash_specs.len() != schema.len() || header.marginals.len() != schema.len() {
            return Err(fail("header does not describe every feature".into()));
        }
        let mut tables = Vec::with_capacity(schema.len());
        for spec in header.hash_specs {
            let c = schema.cardinality(spec.target);
            let section_len = cur.u64().map_err(&fail)? as usize;
            let entry = 8 + 4 * c;
            if !section_len.is_multiple_of(entry) {
                return Err(fail(format!("section of feature {} is malformed", spec.target)));
            }
            let mut section = Cursor {
                buf: cur.take(section_len).map_err(&fail)?,
                pos: 0,
            };
            let mut rows = HashMap::with_capacity(section_len / entry);
            for _ in 0..section_len / entry {
                let key = section.u64().map_err(&fail)?;
                let counts = (0..c).map(|_| section.u32()).collect::<std::result::Result<Vec<_>, _>>().map_err(&fail)?;
                rows.insert(key, CountRow::from_counts(counts));
            }
            tables.push(FeatureTable { spec, rows });
        }
        if cur.pos != body.len() {
            return Err(fail("trailing bytes after the last section".into()));
        }
        Ok(BuildingBlocks {
            schema,
            tables,
            n_rows: header.n_rows,
            marginals: header.marginals,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BlocksHeader {
    format_version: u32,
    schema: Schema,
    hash_specs: Vec<HashSpec>,
    n_rows: u64,
    marginals: Vec<Vec<u64>>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err("unexpected end of data".into());
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Builds a hash spec per feature from mutual information, then counts.
pub fn disintegrate(dataset: &Dataset, m: usize) -> Result<BuildingBlocks> {
    let violations = dataset.validate();
    if let Some(v) = violations.first() {
        return Err(PegsError::Data(format!("invalid dataset: {v}")));
    }
    let specs = (0..dataset.n_features())
        .into_par_iter()
        .map(|i| build_hash_spec(dataset, i, m))
        .collect::<Result<Vec<_>>>()?;
    BuildingBlocks::from_specs(dataset, specs)
}

/// Perturbed conditional distribution of feature `i` under hash key `key`.
pub fn conditional(blocks: &BuildingBlocks, i: usize, key: u64, alpha: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(blocks.schema().cardinality(i));
    blocks.conditional_into(i, key, alpha, &mut out)?;
    Ok(out)
}

pub fn save_blocks(blocks: &BuildingBlocks, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| PegsError::io(path, e))?;
    file.write_all(&blocks.to_bytes()).map_err(|e| PegsError::io(path, e))
}

pub fn load_blocks(path: impl AsRef<Path>) -> Result<BuildingBlocks> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| PegsError::io(path, e))?;
    BuildingBlocks::from_bytes(&bytes, path)
}
