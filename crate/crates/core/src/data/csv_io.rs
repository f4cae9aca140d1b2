use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::data::dataset::{Category, Dataset};
use crate::data::schema::{bin_numeric, FeatureKind, FeatureSpec, Schema};
use crate::error::{PegsError, Result};

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    /// Cell text treated as missing; mapped to the feature's `"NA"` category.
    pub missing_token: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            has_header: true,
            missing_token: String::new(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: Arc<Schema>, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| PegsError::io(path, e))?;
    read_csv(file, schema, options)
}

/// Parses delimited text into category indices.
///
/// Cells are matched against category labels first. Binned-numeric cells
/// that match no label are parsed as numbers and binned.
pub fn read_csv<R: Read>(reader: R, schema: Arc<Schema>, options: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .flexible(true)
        .from_reader(reader);

    let m = schema.len();
    let (width, columns) = if options.has_header {
        let header = rdr.headers()?.clone();
        let mut columns = Vec::with_capacity(m);
        for f in schema.features() {
            let pos = header.iter().position(|h| h.trim() == f.name).ok_or_else(|| {
                PegsError::Schema(format!("column {:?} missing from CSV header", f.name))
            })?;
            columns.push(pos);
        }
        (header.len(), columns)
    } else {
        (m, (0..m).collect())
    };

    let mut ds = Dataset::empty(Arc::clone(&schema));
    let mut row_buf: Vec<Category> = vec![0; m];
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based data row number, not counting the header
        let row_no = r + 1;
        if record.len() != width {
            return Err(PegsError::ColumnCount {
                row: row_no,
                expected: width,
                found: record.len(),
            });
        }
        for (j, (&col, spec)) in columns.iter().zip(schema.features()).enumerate() {
            row_buf[j] = parse_cell(&record[col], spec, row_no, options)? as Category;
        }
        ds.push_row(&row_buf)?;
    }
    Ok(ds)
}

fn parse_cell(cell: &str, spec: &FeatureSpec, row: usize, options: &CsvOptions) -> Result<usize> {
    let text = cell.trim();
    if text == options.missing_token {
        return spec.na_index().ok_or_else(|| PegsError::MissingWithoutNa {
            row,
            column: spec.name.clone(),
        });
    }
    if let Some(k) = spec.index_of(text) {
        return Ok(k);
    }
    if spec.kind == FeatureKind::BinnedNumeric {
        if let Ok(v) = text.parse::<f64>() {
            if !v.is_nan() {
                return bin_numeric(v, spec);
            }
        }
    }
    Err(PegsError::UnknownLabel {
        row,
        column: spec.name.clone(),
        label: text.to_string(),
    })
}

/// Writes a dataset as labelled CSV with a header row.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W, delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    let schema = dataset.schema();
    wtr.write_record(schema.features().iter().map(|f| f.name.as_str()))?;
    for row in dataset.rows() {
        wtr.write_record(
            row.iter()
                .zip(schema.features())
                .map(|(&v, f)| f.categories[v as usize].as_str()),
        )?;
    }
    wtr.flush().map_err(|e| PegsError::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| PegsError::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file), b',')
}
