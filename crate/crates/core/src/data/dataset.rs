use std::fmt;
use std::sync::Arc;

use crate::data::schema::Schema;
use crate::error::{PegsError, Result};

/// Category-index cell value.
pub type Category = u32;

/// Dense row-major matrix of category indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<Schema>,
    cells: Vec<Category>,
    rows: usize,
}

/// A cell that breaks the `0 <= v < C_i` invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub row: usize,
    pub column: usize,
    pub value: Category,
    pub cardinality: usize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "row {}, column {}: value {} outside [0, {})",
            self.row, self.column, self.value, self.cardinality
        )
    }
}

impl Dataset {
    pub fn empty(schema: Arc<Schema>) -> Self {
        Dataset {
            schema,
            cells: Vec::new(),
            rows: 0,
        }
    }

    /// Wraps a flat row-major buffer. Only the shape is checked here; use
    /// [`Dataset::validate`] or [`Dataset::from_rows`] for range checks.
    pub fn from_cells(schema: Arc<Schema>, cells: Vec<Category>) -> Result<Self> {
        let m = schema.len();
        if !cells.len().is_multiple_of(m) {
            return Err(PegsError::Data(format!(
                "{} cells do not divide into rows of {m} features",
                cells.len()
            )));
        }
        let rows = cells.len() / m;
        Ok(Dataset { schema, cells, rows })
    }

    /// Builds a dataset from rows, rejecting any out-of-range cell.
    pub fn from_rows<R: AsRef<[Category]>>(schema: Arc<Schema>, rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut ds = Dataset::empty(schema);
        for row in rows {
            ds.push_row(row.as_ref())?;
        }
        Ok(ds)
    }

    pub fn push_row(&mut self, row: &[Category]) -> Result<()> {
        let m = self.schema.len();
        if row.len() != m {
            return Err(PegsError::Data(format!("row has {} values, schema has {m} features", row.len())));
        }
        for (j, &v) in row.iter().enumerate() {
            if v as usize >= self.schema.cardinality(j) {
                return Err(PegsError::Data(format!(
                    "row {}, column {:?}: value {v} outside [0, {})",
                    self.rows,
                    self.schema.feature(j).name,
                    self.schema.cardinality(j)
                )));
            }
        }
        self.cells.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    /// Number of rows (N).
    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Number of features (M).
    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, r: usize) -> &[Category] {
        let m = self.schema.len();
        &self.cells[r * m..(r + 1) * m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[Category]> + '_ {
        self.cells.chunks_exact(self.schema.len())
    }

    pub fn cells(&self) -> &[Category] {
        &self.cells
    }

    pub fn get(&self, r: usize, j: usize) -> Category {
        self.cells[r * self.schema.len() + j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = Category> + '_ {
        self.rows().map(move |row| row[j])
    }

    /// Empirical category counts of one feature.
    pub fn counts(&self, j: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.schema.cardinality(j)];
        for v in self.column(j) {
            counts[v as usize] += 1;
        }
        counts
    }

    /// Lists every cell outside its feature's category range.
    pub fn validate(&self) -> Vec<Violation> {
        let cards = self.schema.cardinalities();
        self.rows()
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter()
                    .zip(&cards)
                    .enumerate()
                    .filter(|(_, (&v, &c))| v as usize >= c)
                    .map(move |(j, (&v, &c))| Violation {
                        row: r,
                        column: j,
                        value: v,
                        cardinality: c,
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Copies the rows at `indices` into a new dataset.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let m = self.schema.len();
        let mut cells = Vec::with_capacity(indices.len() * m);
        for &r in indices {
            cells.extend_from_slice(self.row(r));
        }
        Dataset {
            schema: Arc::clone(&self.schema),
            rows: indices.len(),
            cells,
        }
    }
}

/// Validates a dataset; free-function form of [`Dataset::validate`].
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    dataset.validate()
}
