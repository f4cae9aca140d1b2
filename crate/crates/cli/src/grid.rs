//! Algorithm x epsilon x seed experiment grid.
//!
//! Every cell writes its report with a manifest carrying a key derived from
//! the inputs and the cell parameters. A re-run skips cells whose report is
//! present and matches its key, so an interrupted grid resumes where it
//! stopped.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pegs_core::data::{load_csv, save_csv, CsvOptions, Dataset, Schema};
use pegs_core::evaluation::{bootstrap_resample, evaluate, marginal_bootstrap, EvalConfig, EvalReport};
use pegs_core::pmi::{pmi_synthesize, PmiModels};
use pegs_core::{disintegrate, synthesize, BuildingBlocks, PrivacySpec, SeedPool};

use crate::commands::{parse_metrics, schema_hash, write_json, write_ru_file};
use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path, sha256_bytes, sha256_file, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum Algorithm {
    #[serde(rename = "pegs")]
    Pegs,
    /// Grid epsilon is per record; a block of `block_size` records spends
    /// `epsilon * block_size`.
    #[serde(rename = "pegs.rs")]
    PegsRs { block_size: usize },
    #[serde(rename = "pmi")]
    Pmi,
}

impl Algorithm {
    fn label(&self) -> &'static str {
        match self {
            Algorithm::Pegs => "pegs",
            Algorithm::PegsRs { .. } => "pegs.rs",
            Algorithm::Pmi => "pmi",
        }
    }
}

/// Baselines evaluated once per seed, without a privacy parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Rows resampled with replacement from the original.
    Bootstrap,
    /// Columns resampled independently.
    MarginalBootstrap,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("grid_out")
}
fn default_n() -> usize {
    1000
}
fn default_k() -> usize {
    1
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_m() -> usize {
    2
}
fn default_lambda() -> f64 {
    pegs_core::pmi::DEFAULT_LAMBDA
}
fn default_delimiter() -> char {
    ','
}

/// Grid configuration. Relative paths are resolved against the directory
/// of the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub algorithms: Vec<Algorithm>,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    #[serde(default)]
    pub metrics: Option<Vec<String>>,
    #[serde(default)]
    pub references: Vec<Reference>,
    #[serde(default)]
    pub write_synthetic: bool,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub missing: String,
}

#[derive(Debug, Clone, Serialize)]
enum CellKind {
    Algorithm(Algorithm, f64),
    Reference(Reference),
}

#[derive(Debug, Clone, Serialize)]
struct Cell {
    kind: CellKind,
    seed: u64,
}

impl Cell {
    fn algorithm(&self) -> String {
        match &self.kind {
            CellKind::Algorithm(a, _) => a.label().to_string(),
            CellKind::Reference(Reference::Bootstrap) => "bootstrap".into(),
            CellKind::Reference(Reference::MarginalBootstrap) => "marginal-bootstrap".into(),
        }
    }

    fn epsilon(&self) -> Option<f64> {
        match &self.kind {
            CellKind::Algorithm(_, e) => Some(*e),
            CellKind::Reference(_) => None,
        }
    }

    fn stem(&self) -> String {
        match self.epsilon() {
            Some(e) => format!("{}_eps{}_seed{}", self.algorithm(), e, self.seed),
            None => format!("{}_seed{}", self.algorithm(), self.seed),
        }
    }
}

struct Shared {
    data: Dataset,
    blocks: Option<BuildingBlocks>,
    models: Option<PmiModels>,
    pool: SeedPool,
    eval: EvalConfig,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cell_key(common: &serde_json::Value, cell: &Cell) -> String {
    let v = serde_json::json!({ "common": common, "cell": cell });
    sha256_bytes(v.to_string().as_bytes())
}

/// The report of a finished cell, if its manifest matches `key`.
fn completed(report: &Path, key: &str) -> Option<EvalReport> {
    let m = RunManifest::load(&manifest_path(report)).ok()?;
    if m.labels.get("cell_key").and_then(|v| v.as_str()) != Some(key) {
        return None;
    }
    let want = m.outputs.get(&report.display().to_string())?;
    if &sha256_file(report).ok()? != want {
        return None;
    }
    serde_json::from_str(&std::fs::read_to_string(report).ok()?).ok()
}

fn run_cell(shared: &Shared, config: &GridConfig, cell: &Cell, out_dir: &Path) -> CliResult<(EvalReport, Vec<PathBuf>)> {
    let n_features = shared.data.n_features();
    let synths = match &cell.kind {
        CellKind::Algorithm(alg, eps) => match alg {
            Algorithm::Pegs => {
                let privacy = PrivacySpec::dp_per_sample(*eps, n_features)?;
                synthesize(shared.blocks.as_ref().expect("blocks built"), &privacy, &shared.pool, config.n, config.k, cell.seed)?
            }
            Algorithm::PegsRs { block_size } => {
                let privacy = PrivacySpec::dp_per_block(eps * *block_size as f64, *block_size, n_features)?;
                synthesize(shared.blocks.as_ref().expect("blocks built"), &privacy, &shared.pool, config.n, config.k, cell.seed)?
            }
            Algorithm::Pmi => {
                let privacy = PrivacySpec::dp_per_sample(*eps, n_features)?;
                pmi_synthesize(shared.models.as_ref().expect("models fitted"), &privacy, &shared.pool, config.n, config.k, cell.seed)?
            }
        },
        CellKind::Reference(r) => (0..config.k as u64)
            .map(|k| match r {
                Reference::Bootstrap => bootstrap_resample(&shared.data, config.n, cell.seed, k),
                Reference::MarginalBootstrap => marginal_bootstrap(&shared.data, config.n, cell.seed, k),
            })
            .collect(),
    };
    let mut written = Vec::new();
    if config.write_synthetic {
        for (k, d) in synths.iter().enumerate() {
            let p = out_dir.join(format!("synth_{}_{}.csv", cell.stem(), k + 1));
            save_csv(d, &p)?;
            written.push(p);
        }
    }
    let report = evaluate(&shared.data, &synths, &shared.eval, &cell.algorithm(), cell.epsilon())?;
    Ok((report, written))
}

pub fn cmd_paper_grid(config_path: &Path, argv: Vec<String>) -> CliResult<()> {
    let text = std::fs::read_to_string(config_path).map_err(|e| CliError::io(config_path, e))?;
    let config: GridConfig = serde_json::from_str(&text)?;
    if config.algorithms.is_empty() && config.references.is_empty() {
        return Err(CliError::Usage("grid config lists no algorithms".into()));
    }
    if !config.algorithms.is_empty() && config.epsilons.is_empty() {
        return Err(CliError::Usage("grid config lists no epsilons".into()));
    }
    if config.seeds.is_empty() {
        return Err(CliError::Usage("grid config lists no seeds".into()));
    }
    if !config.delimiter.is_ascii() {
        return Err(CliError::Usage("delimiter must be ASCII".into()));
    }
    let base = config_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let data_path = resolve(&base, &config.data);
    let schema_path = resolve(&base, &config.schema);
    let out_dir = resolve(&base, &config.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;

    let schema = Arc::new(Schema::load(&schema_path)?);
    let csv = CsvOptions {
        delimiter: config.delimiter as u8,
        missing_token: config.missing.clone(),
        ..CsvOptions::default()
    };
    let data = load_csv(&data_path, Arc::clone(&schema), &csv)?;
    let mut eval = config
        .eval
        .clone()
        .unwrap_or_else(|| EvalConfig::hospital().restrict_to(&schema));
    if let Some(m) = &config.metrics {
        eval.metrics = parse_metrics(m)?;
    }
    for alg in &config.algorithms {
        if let Algorithm::PegsRs { block_size: 0 } = alg {
            return Err(pegs_core::PegsError::Privacy("block size must be at least 1".into()).into());
        }
    }
    // fail fast on bad epsilons before any work
    for &e in &config.epsilons {
        PrivacySpec::dp_per_sample(e, schema.len())?;
    }

    let data_hash = sha256_file(&data_path)?;
    let common = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "data": data_hash,
        "schema": schema_hash(&schema),
        "n": config.n, "k": config.k, "m": config.m, "lambda": config.lambda,
        "eval": eval,
    });

    let mut cells = Vec::new();
    for &seed in &config.seeds {
        for alg in &config.algorithms {
            for &eps in &config.epsilons {
                cells.push(Cell {
                    kind: CellKind::Algorithm(alg.clone(), eps),
                    seed,
                });
            }
        }
        for &r in &config.references {
            cells.push(Cell {
                kind: CellKind::Reference(r),
                seed,
            });
        }
    }

    let mut todo = Vec::new();
    let mut done: Vec<Option<EvalReport>> = Vec::with_capacity(cells.len());
    for (idx, cell) in cells.iter().enumerate() {
        let report_path = out_dir.join(format!("report_{}.json", cell.stem()));
        match completed(&report_path, &cell_key(&common, cell)) {
            Some(r) => {
                info!("cell {} already complete", cell.stem());
                done.push(Some(r));
            }
            None => {
                done.push(None);
                todo.push(idx);
            }
        }
    }
    info!("{} of {} cells to run", todo.len(), cells.len());

    let needs = |f: fn(&Algorithm) -> bool| todo.iter().any(|&i| matches!(&cells[i].kind, CellKind::Algorithm(a, _) if f(a)));
    let blocks = if needs(|a| matches!(a, Algorithm::Pegs | Algorithm::PegsRs { .. })) {
        Some(disintegrate(&data, config.m)?)
    } else {
        None
    };
    let models = if needs(|a| matches!(a, Algorithm::Pmi)) {
        Some(PmiModels::fit(&data, config.lambda)?)
    } else {
        None
    };
    let shared = Shared {
        pool: SeedPool::new(data.clone())?,
        data,
        blocks,
        models,
        eval,
    };

    let results = todo
        .par_iter()
        .map(|&idx| {
            let cell = &cells[idx];
            let (report, synth_files) = run_cell(&shared, &config, cell, &out_dir)?;
            let report_path = out_dir.join(format!("report_{}.json", cell.stem()));
            write_json(&report_path, &report)?;
            let mut manifest = RunManifest::new("paper-grid", argv.clone());
            manifest.seed = Some(cell.seed);
            manifest.schema_sha256 = Some(schema_hash(&schema));
            manifest.inputs.insert(data_path.display().to_string(), data_hash.clone());
            manifest.label("cell_key", cell_key(&common, cell));
            manifest.label("algorithm", cell.algorithm());
            manifest.label("epsilon", cell.epsilon());
            if let CellKind::Algorithm(Algorithm::PegsRs { block_size }, _) = &cell.kind {
                manifest.label("block_size", block_size);
            }
            manifest.add_output(&report_path)?;
            for p in &synth_files {
                manifest.add_output(p)?;
            }
            manifest.write_all()?;
            info!("cell {} done", cell.stem());
            Ok((idx, report))
        })
        .collect::<CliResult<Vec<_>>>()?;
    for (idx, report) in results {
        done[idx] = Some(report);
    }
    let reports: Vec<EvalReport> = done.into_iter().map(|r| r.expect("every cell finished")).collect();

    let ru_path = out_dir.join("ru.csv");
    write_ru_file(&ru_path, &reports)?;
    let mut manifest = RunManifest::new("paper-grid", argv);
    manifest.add_input(&data_path)?;
    manifest.add_input(&schema_path)?;
    manifest.add_input(config_path)?;
    manifest.schema_sha256 = Some(schema_hash(&schema));
    manifest.add_output(&ru_path)?;
    manifest.write_all()?;
    println!("{} reports, R-U table at {}", reports.len(), ru_path.display());
    Ok(())
}
