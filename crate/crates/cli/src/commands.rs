use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pegs_core::data::{load_csv, save_csv, CsvOptions, Dataset, FeatureKind, Schema};
use pegs_core::evaluation::{
    attack_categorical, attack_numeric, evaluate, ru_map, write_ru_csv, AttackKind, AttackSpec, EvalConfig, EvalReport,
    Metric,
};
use pegs_core::pmi::{pmi_synthesize, PmiModels};
use pegs_core::sampler::traces;
use pegs_core::{disintegrate, generator, load_blocks, save_blocks, synthesize, PrivacyCriterion, PrivacySpec, SeedPool};

use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path, sha256_bytes, RunManifest};
use crate::{
    AttackArgs, AttackKindArg, Command, CsvArgs, DisintegrateArgs, Engine, EvaluateArgs, GenerateArgs, PmiFitArgs,
    PrivacyKind, ReplayArgs, RuMapArgs, SynthesizeArgs,
};

pub fn run(command: Command, argv: Vec<String>) -> CliResult<()> {
    match command {
        Command::Generate(a) => cmd_generate(a, argv),
        Command::Disintegrate(a) => cmd_disintegrate(a, argv),
        Command::Synthesize(a) => cmd_synthesize(a, argv),
        Command::PmiFit(a) => cmd_pmi_fit(a, argv),
        Command::Evaluate(a) => cmd_evaluate(a, argv),
        Command::Attack(a) => cmd_attack(a, argv),
        Command::RuMap(a) => cmd_ru_map(a, argv),
        Command::PaperGrid(a) => crate::grid::cmd_paper_grid(&a.config, argv),
        Command::Replay(a) => cmd_replay(a),
    }
}

pub fn csv_options(args: &CsvArgs) -> CliResult<CsvOptions> {
    if !args.delimiter.is_ascii() {
        return Err(CliError::Usage(format!(
            "delimiter must be a single ASCII character, got {:?}",
            args.delimiter
        )));
    }
    Ok(CsvOptions {
        delimiter: args.delimiter as u8,
        missing_token: args.missing.clone(),
        ..CsvOptions::default()
    })
}

pub fn schema_hash(schema: &Schema) -> String {
    sha256_bytes(serde_json::to_string(schema).expect("schema serializes").as_bytes())
}

pub fn load_schema(path: &Path, manifest: &mut RunManifest) -> CliResult<Arc<Schema>> {
    manifest.add_input(path)?;
    let schema = Schema::load(path)?;
    manifest.schema_sha256 = Some(schema_hash(&schema));
    Ok(Arc::new(schema))
}

pub fn load_data(path: &Path, schema: &Arc<Schema>, csv: &CsvOptions, manifest: &mut RunManifest) -> CliResult<Dataset> {
    manifest.add_input(path)?;
    Ok(load_csv(path, Arc::clone(schema), csv)?)
}

/// Files matching `pattern`, sorted; an empty match is an error.
pub fn expand_glob(pattern: &str) -> CliResult<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Usage(format!("bad glob {pattern:?}: {e}")))?;
    let mut out: Vec<PathBuf> = paths
        .filter_map(|p| p.ok())
        .filter(|p| !p.to_string_lossy().ends_with(crate::manifest::MANIFEST_SUFFIX))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::Data(format!("no files match {pattern:?}")));
    }
    Ok(out)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn cmd_generate(a: GenerateArgs, argv: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("generate", argv);
    manifest.seed = Some(a.seed);
    let data = generator::generate_hospital(a.rows, a.seed);
    save_csv(&data, &a.out)?;
    data.schema().save(&a.schema_out)?;
    manifest.schema_sha256 = Some(schema_hash(data.schema()));
    manifest.add_output(&a.out)?;
    manifest.add_output(&a.schema_out)?;
    manifest.write_all()
}

fn cmd_disintegrate(a: DisintegrateArgs, argv: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("disintegrate", argv);
    let csv = csv_options(&a.csv)?;
    let schema = load_schema(&a.schema, &mut manifest)?;
    let data = load_data(&a.input, &schema, &csv, &mut manifest)?;
    let blocks = disintegrate(&data, a.m)?;
    save_blocks(&blocks, &a.out)?;
    manifest.label("m", a.m);
    manifest.add_output(&a.out)?;
    manifest.blocks_sha256 = manifest.outputs.values().next().cloned();
    manifest.write_all()
}

fn privacy_spec(a: &SynthesizeArgs, n_features: usize) -> CliResult<PrivacySpec> {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| CliError::Usage(format!("--privacy {:?} requires {flag}", a.privacy)))
    };
    let criterion = match a.privacy {
        PrivacyKind::Dp => PrivacyCriterion::DpPerSample {
            epsilon: need(a.epsilon, "--epsilon")?,
        },
        PrivacyKind::DpBlock => PrivacyCriterion::DpPerBlock {
            epsilon: need(a.epsilon, "--epsilon")?,
            block_size: a
                .block_size
                .ok_or_else(|| CliError::Usage("--privacy dp-block requires --block-size".into()))?,
        },
        PrivacyKind::Ldiv => PrivacyCriterion::LDiversity { l: need(a.l, "--l")? },
    };
    Ok(PrivacySpec::new(criterion, n_features)?)
}

/// Output path of dataset `k` (1-based).
pub fn output_path(template: &str, k: usize, total: usize) -> CliResult<PathBuf> {
    if template.contains("{k}") {
        Ok(PathBuf::from(template.replace("{k}", &k.to_string())))
    } else if total == 1 {
        Ok(PathBuf::from(template))
    } else {
        Err(CliError::Usage("--out must contain {k} when --k > 1".into()))
    }
}

pub fn algorithm_label(engine: Engine, privacy: &PrivacySpec) -> &'static str {
    match (engine, privacy.criterion) {
        (Engine::Pmi, _) => "pmi",
        (Engine::Pegs, PrivacyCriterion::DpPerBlock { .. }) => "pegs.rs",
        (Engine::Pegs, PrivacyCriterion::LDiversity { .. }) => "pegs.ldiv",
        (Engine::Pegs, PrivacyCriterion::DpPerSample { .. }) => "pegs",
    }
}

fn cmd_synthesize(a: SynthesizeArgs, argv: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("synthesize", argv);
    manifest.seed = Some(a.seed);
    let csv = csv_options(&a.csv)?;
    let outputs = (1..=a.k).map(|k| output_path(&a.out, k, a.k)).collect::<CliResult<Vec<_>>>()?;

    let (datasets, schema) = match a.engine {
        Engine::Pegs => {
            let path = a
                .blocks
                .as_ref()
                .ok_or_else(|| CliError::Usage("--engine pegs requires --blocks".into()))?;
            manifest.blocks_sha256 = Some(manifest.add_input(path)?);
            let blocks = load_blocks(path)?;
            let schema = Arc::clone(blocks.schema_arc());
            manifest.schema_sha256 = Some(schema_hash(&schema));
            let privacy = privacy_spec(&a, schema.len())?;
            if let PrivacyCriterion::LDiversity { l } = privacy.criterion {
                if l > schema.c_max() as f64 {
                    return Err(pegs_core::PegsError::Privacy(format!(
                        "l = {l} exceeds every feature's category count (largest {})",
                        schema.c_max()
                    ))
                    .into());
                }
            }
            let pool = match &a.pool {
                Some(p) => SeedPool::new(load_data(p, &schema, &csv, &mut manifest)?)?,
                None => SeedPool::from_marginals(&blocks)?,
            };
            let data = synthesize(&blocks, &privacy, &pool, a.n, a.k, a.seed)?;
            if let Some(trace_path) = &a.trace {
                let alpha = match privacy.criterion {
                    PrivacyCriterion::DpPerSample { .. } => privacy.derived_alpha.expect("DP alpha"),
                    _ => return Err(CliError::Usage("--trace is available with --privacy dp only".into())),
                };
                let mut text = String::new();
                for t in traces(&blocks, alpha, &pool, a.trace_count.min(a.n), a.seed)? {
                    text.push_str(&serde_json::to_string(&t.to_json(&schema))?);
                    text.push('\n');
                }
                std::fs::write(trace_path, text).map_err(|e| CliError::io(trace_path, e))?;
            }
            manifest.privacy = Some(serde_json::to_value(privacy)?);
            label_privacy(&mut manifest, Engine::Pegs, &privacy);
            (data, schema)
        }
        Engine::Pmi => {
            let path = a
                .models
                .as_ref()
                .ok_or_else(|| CliError::Usage("--engine pmi requires --models".into()))?;
            manifest.add_input(path)?;
            let models = PmiModels::load(path)?;
            let schema = Arc::new(models.schema.clone());
            manifest.schema_sha256 = Some(schema_hash(&schema));
            let privacy = privacy_spec(&a, schema.len())?;
            let pool = match &a.pool {
                Some(p) => SeedPool::new(load_data(p, &schema, &csv, &mut manifest)?)?,
                None => return Err(CliError::Usage("--engine pmi requires --pool".into())),
            };
            if a.trace.is_some() {
                return Err(CliError::Usage("--trace is available with --engine pegs only".into()));
            }
            let data = pmi_synthesize(&models, &privacy, &pool, a.n, a.k, a.seed)?;
            manifest.privacy = Some(serde_json::to_value(privacy)?);
            label_privacy(&mut manifest, Engine::Pmi, &privacy);
            (data, schema)
        }
    };
    debug_assert!(datasets.iter().all(|d| d.schema() == schema.as_ref()));
    for (d, path) in datasets.iter().zip(&outputs) {
        save_csv(d, path)?;
        manifest.add_output(path)?;
    }
    if let Some(t) = &a.trace {
        manifest.add_output(t)?;
    }
    manifest.write_all()
}

fn label_privacy(manifest: &mut RunManifest, engine: Engine, privacy: &PrivacySpec) {
    manifest.label("algorithm", algorithm_label(engine, privacy));
    if let Some(e) = privacy.per_sample_epsilon() {
        manifest.label("epsilon", e);
    }
    if let PrivacyCriterion::LDiversity { l } = privacy.criterion {
        manifest.label("l", l);
    }
}

fn cmd_pmi_fit(a: PmiFitArgs, argv: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("pmi-fit", argv);
    let csv = csv_options(&a.csv)?;
    let schema = load_schema(&a.schema, &mut manifest)?;
    let data = load_data(&a.input, &schema, &csv, &mut manifest)?;
    let models = match a.cv_folds {
        Some(folds) => PmiModels::fit_cv(&data, &a.cv_grid, folds)?,
        None => PmiModels::fit(&data, a.lambda)?,
    };
    for m in models.models.iter().filter(|m| !m.converged) {
        log::warn!(
            "feature {:?} did not converge (gradient norm {:.3e})",
            schema.feature(m.target).name,
            m.grad_norm
        );
    }
    models.save(&a.out)?;
    manifest.label("lambda", a.lambda);
    manifest.add_output(&a.out)?;
    manifest.write_all()
}

pub fn parse_metrics(names: &[String]) -> CliResult<Vec<Metric>> {
    names
        .iter()
        .map(|n| Metric::parse(n).map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

/// Algorithm and epsilon recorded in the manifest of a synthetic file.
fn manifest_labels(path: &Path) -> (Option<String>, Option<f64>) {
    match RunManifest::load(&manifest_path(path)) {
        Ok(m) => (
            m.labels.get("algorithm").and_then(|v| v.as_str()).map(String::from),
            m.labels.get("epsilon").and_then(|v| v.as_f64()),
        ),
        Err(_) => (None, None),
    }
}

fn load_synth(
    pattern: &str,
    schema: &Arc<Schema>,
    csv: &CsvOptions,
    manifest: &mut RunManifest,
) -> CliResult<(Vec<PathBuf>, Vec<Dataset>)> {
    let paths = expand_glob(pattern)?;
    let data = paths
        .iter()
        .map(|p| load_data(p, schema, csv, manifest))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((paths, data))
}

fn cmd_evaluate(a: EvaluateArgs, argv: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("evaluate", argv);
    let csv = csv_options(&a.csv)?;
    let schema = load_schema(&a.schema, &mut manifest)?;
    let orig = load_data(&a.orig, &schema, &csv, &mut manifest)?;
    let (paths, synths) = load_synth(&a.synth, &schema, &csv, &mut manifest)?;
    let mut config = match &a.config {
        Some(p) => {
            manifest.add_input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str::<EvalConfig>(&text)?
        }
        None => EvalConfig::hospital().restrict_to(&schema),
    };
    if let Some(m) = &a.metrics {
        config.metrics = parse_metrics(m)?;
    }
    let (label_alg, label_eps) = manifest_labels(&paths[0]);
    let algorithm = a.algorithm.clone().or(label_alg).unwrap_or_else(|| "unknown".into());
    let epsilon = a.epsilon.or(label_eps);
    let report = evaluate(&orig, &synths, &config, &algorithm, epsilon)?;
    write_json(&a.out, &report)?;
    manifest.label("algorithm", &algorithm);
    manifest.label("epsilon", epsilon);
    manifest.add_output(&a.out)?;
    manifest.write_all()
}

fn cmd_attack(a: AttackArgs, argv: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("attack", argv);
    let csv = csv_options(&a.csv)?;
    let schema = load_schema(&a.schema, &mut manifest)?;
    let orig = load_data(&a.orig, &schema, &csv, &mut manifest)?;
    let (_, synths) = load_synth(&a.synth, &schema, &csv, &mut manifest)?;
    let target = schema.require(&a.target)?;
    let given = a.given.iter().map(|g| schema.require(g)).collect::<Result<Vec<_>, _>>()?;
    let spec = schema.feature(target);
    let kind = match a.kind {
        Some(AttackKindArg::Categorical) => AttackKind::Categorical,
        Some(AttackKindArg::Numeric) => AttackKind::Numeric,
        None if spec.kind == FeatureKind::BinnedNumeric && spec.has_representatives() => AttackKind::Numeric,
        None => AttackKind::Categorical,
    };
    let values = synths
        .iter()
        .map(|s| match kind {
            AttackKind::Categorical => attack_categorical(&orig, s, target, &given),
            AttackKind::Numeric => attack_numeric(&orig, s, target, &given),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let attack = AttackSpec {
        kind,
        target: a.target.clone(),
        given: a.given.clone(),
    };
    let result = serde_json::json!({
        "attack": attack.name(),
        "kind": kind,
        "metric": match kind { AttackKind::Categorical => "misclassification_rate", AttackKind::Numeric => "mean_absolute_error" },
        "values": values,
        "mean": mean,
    });
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string(&result)?).map_err(|e| CliError::io("<stdout>", e))?;
    if let Some(path) = &a.out {
        write_json(path, &result)?;
        manifest.add_output(path)?;
        manifest.write_all()?;
    }
    Ok(())
}

fn cmd_ru_map(a: RuMapArgs, argv: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("ru-map", argv);
    let mut reports = Vec::new();
    for p in expand_glob(&a.reports)? {
        manifest.add_input(&p)?;
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        reports.push(serde_json::from_str::<EvalReport>(&text)?);
    }
    write_ru_file(&a.out, &reports)?;
    manifest.add_output(&a.out)?;
    manifest.write_all()
}

pub fn write_ru_file(path: &Path, reports: &[EvalReport]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_ru_csv(&ru_map(reports), std::io::BufWriter::new(file))?;
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> CliResult<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    if manifest.command == "replay" {
        return Err(CliError::Data("a replay manifest cannot be replayed".into()));
    }
    if manifest.version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest written by version {}, replaying with {}",
            manifest.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    std::env::set_current_dir(&manifest.cwd).map_err(|e| CliError::io(&manifest.cwd, e))?;
    let cli = crate::parse(&manifest.argv).map_err(|e| CliError::Usage(format!("manifest arguments: {e}")))?;
    // recompute from scratch; the grid would otherwise resume from old reports
    for out in manifest.outputs.keys() {
        match std::fs::remove_file(out) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(CliError::io(out, e)),
            _ => {}
        }
    }
    run(cli.command, manifest.argv.clone())?;
    let bad = manifest.mismatched_outputs()?;
    if !bad.is_empty() {
        return Err(CliError::Data(format!(
            "replay produced different outputs: {}",
            bad.join(", ")
        )));
    }
    println!("replayed {:?}: {} outputs identical", manifest.command, manifest.outputs.len());
    Ok(())
}
