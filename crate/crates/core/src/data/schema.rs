use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PegsError, Result};

/// Label of the dedicated missing-value category.
pub const NA_LABEL: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Categorical,
    BinnedNumeric,
}

/// One column of the dataset: its category vocabulary and, for binned
/// numeric columns, the cut points that produced the categories.
///
/// A binned-numeric feature has `bin_edges.len() + 1` numeric bins. It may
/// carry one extra trailing category labelled `"NA"` for missing values; that
/// category has no numeric representative (`null` in the schema file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureSpec")]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub categories: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_edges: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric_representatives: Option<Vec<Option<f64>>>,
}

#[derive(Deserialize)]
struct RawFeatureSpec {
    name: String,
    kind: FeatureKind,
    categories: Vec<String>,
    #[serde(default)]
    bin_edges: Option<Vec<f64>>,
    #[serde(default)]
    numeric_representatives: Option<Vec<Option<f64>>>,
}

impl TryFrom<RawFeatureSpec> for FeatureSpec {
    type Error = PegsError;

    fn try_from(raw: RawFeatureSpec) -> Result<Self> {
        match raw.kind {
            FeatureKind::Categorical => {
                FeatureSpec::categorical(raw.name, raw.categories)?.with_representatives(raw.numeric_representatives)
            }
            FeatureKind::BinnedNumeric => {
                let edges = raw.bin_edges.ok_or_else(|| {
                    PegsError::Schema(format!("feature {:?}: binned-numeric requires bin_edges", raw.name))
                })?;
                FeatureSpec::binned(raw.name, raw.categories, edges, raw.numeric_representatives)
            }
        }
    }
}

impl FeatureSpec {
    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Result<Self> {
        let spec = FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            bin_edges: None,
            numeric_representatives: None,
        };
        spec.check_labels()?;
        Ok(spec)
    }

    /// Builds a binned-numeric feature. When `representatives` is `None`
    /// every bin is represented by its lower edge; the open bottom bin uses
    /// the first edge.
    pub fn binned<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
        bin_edges: Vec<f64>,
        representatives: Option<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let name = name.into();
        let categories: Vec<String> = categories.into_iter().map(Into::into).collect();
        if bin_edges.is_empty() {
            return Err(PegsError::Schema(format!("feature {name:?}: bin_edges must not be empty")));
        }
        if bin_edges.iter().any(|e| !e.is_finite()) || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PegsError::Schema(format!(
                "feature {name:?}: bin_edges must be finite and strictly ascending"
            )));
        }
        let bins = bin_edges.len() + 1;
        let has_na = categories.len() == bins + 1 && categories.last().map(String::as_str) == Some(NA_LABEL);
        if categories.len() != bins && !has_na {
            return Err(PegsError::Schema(format!(
                "feature {name:?}: {} bin edges give {bins} bins but {} categories are listed",
                bin_edges.len(),
                categories.len()
            )));
        }
        let representatives = match representatives {
            Some(reps) => reps,
            None => {
                let mut reps: Vec<Option<f64>> = Vec::with_capacity(categories.len());
                reps.push(Some(bin_edges[0]));
                reps.extend(bin_edges.iter().map(|&e| Some(e)));
                if has_na {
                    reps.push(None);
                }
                reps
            }
        };
        let spec = FeatureSpec {
            name,
            kind: FeatureKind::BinnedNumeric,
            categories,
            bin_edges: Some(bin_edges),
            numeric_representatives: None,
        };
        spec.check_labels()?;
        spec.with_representatives(Some(representatives))
    }

    fn with_representatives(mut self, reps: Option<Vec<Option<f64>>>) -> Result<Self> {
        if let Some(reps) = &reps {
            if reps.len() != self.categories.len() {
                return Err(PegsError::Schema(format!(
                    "feature {:?}: {} numeric_representatives for {} categories",
                    self.name,
                    reps.len(),
                    self.categories.len()
                )));
            }
            for (label, rep) in self.categories.iter().zip(reps) {
                match rep {
                    None if label != NA_LABEL => {
                        return Err(PegsError::Schema(format!(
                            "feature {:?}: only the {NA_LABEL:?} category may lack a numeric representative",
                            self.name
                        )))
                    }
                    Some(v) if !v.is_finite() => {
                        return Err(PegsError::Schema(format!(
                            "feature {:?}: non-finite numeric representative",
                            self.name
                        )))
                    }
                    _ => {}
                }
            }
        }
        self.numeric_representatives = reps;
        Ok(self)
    }

    fn check_labels(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(PegsError::Schema(format!("feature {:?} has no categories", self.name)));
        }
        let mut seen = HashSet::new();
        for label in &self.categories {
            if !seen.insert(label.as_str()) {
                return Err(PegsError::Schema(format!(
                    "feature {:?}: duplicate category label {label:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Number of categories (C_i).
    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    pub fn na_index(&self) -> Option<usize> {
        self.index_of(NA_LABEL)
    }

    /// Numeric value standing in for a category, `None` for the missing category
    /// or when the feature has no numeric interpretation.
    pub fn representative(&self, category: usize) -> Option<f64> {
        self.numeric_representatives
            .as_ref()
            .and_then(|reps| reps.get(category).copied().flatten())
    }

    pub fn has_representatives(&self) -> bool {
        self.numeric_representatives.is_some()
    }
}

/// Maps a raw numeric value onto its bin. Bins are half-open `[lo, hi)` and
/// clamped: values below the first edge fall into bin 0 and values at or
/// above the last edge fall into the top numeric bin.
pub fn bin_numeric(value: f64, spec: &FeatureSpec) -> Result<usize> {
    let edges = match (&spec.kind, &spec.bin_edges) {
        (FeatureKind::BinnedNumeric, Some(edges)) => edges,
        _ => {
            return Err(PegsError::Schema(format!(
                "feature {:?} is not binned-numeric",
                spec.name
            )))
        }
    };
    if value.is_nan() {
        return Err(PegsError::Data(format!("feature {:?}: cannot bin NaN", spec.name)));
    }
    Ok(edges.partition_point(|&edge| edge <= value))
}

/// Ordered feature list shared by datasets, building blocks and models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct Schema {
    features: Vec<FeatureSpec>,
}

#[derive(Deserialize)]
struct RawSchema {
    features: Vec<FeatureSpec>,
}

impl TryFrom<RawSchema> for Schema {
    type Error = PegsError;

    fn try_from(raw: RawSchema) -> Result<Self> {
        Schema::new(raw.features)
    }
}

impl Schema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        if features.len() < 2 {
            return Err(PegsError::Schema(format!(
                "a schema needs at least 2 features, got {}",
                features.len()
            )));
        }
        let mut names = HashSet::new();
        for f in &features {
            if !names.insert(f.name.as_str()) {
                return Err(PegsError::Schema(format!("duplicate feature name {:?}", f.name)));
            }
        }
        Ok(Schema { features })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PegsError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialization is infallible")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_pretty()).map_err(|e| PegsError::io(path, e))
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &FeatureSpec {
        &self.features[i]
    }

    /// Number of features (M).
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.features[i].cardinality()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.features.iter().map(FeatureSpec::cardinality).collect()
    }

    /// Largest category count over all features (C_max).
    pub fn c_max(&self) -> usize {
        self.features.iter().map(FeatureSpec::cardinality).max().unwrap_or(0)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Resolves a feature name, failing with a schema error when absent.
    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| PegsError::Schema(format!("unknown feature {name:?}")))
    }

    /// Size of the full joint domain, saturating at `u128::MAX`.
    pub fn joint_domain_size(&self) -> u128 {
        self.features
            .iter()
            .fold(1u128, |acc, f| acc.saturating_mul(f.cardinality() as u128))
    }
}
