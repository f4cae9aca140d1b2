//! Schema, dataset container and CSV ingestion.

mod csv_io;
mod dataset;
mod schema;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv, CsvOptions};
pub use dataset::{validate, Category, Dataset, Violation};
pub use schema::{bin_numeric, FeatureKind, FeatureSpec, Schema, NA_LABEL};
