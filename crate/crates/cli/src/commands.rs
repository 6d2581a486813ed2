use std::fs;
use std::path::Path;

use causaltab::causal::{self, CausalGraph, CausalMask, Edge, NotearsConfig, NotearsFit, NotearsMode, WeightMatrix};
use causaltab::evaluation::{self, EvalOptions, MetricsReport, ViolationRule};
use causaltab::tabular::{self, DataTable, TableSchema};
use causaltab::train::{self, Checkpoint, TrainConfig, TrainError, TrainOutcome};
use serde_json::json;

use crate::args::{Command, DiscoverArgs, EvaluateArgs, PipelineArgs, SampleArgs, TableArgs, TrainArgs, TrainFlags};
use crate::manifest::{sidecar_path, write_atomic, RunManifest};
use crate::{CliError, Result};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Discover(a) => discover(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

/// Runs `body`, then writes the manifest whether or not it succeeded.
fn with_manifest<F>(command: &str, path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut RunManifest) -> Result<()>,
{
    let mut manifest = RunManifest::new(command);
    let outcome = body(&mut manifest);
    if let Err(e) = &outcome {
        manifest.error = Some(e.to_string());
    }
    match manifest.finish(path) {
        Ok(_) => outcome,
        Err(io) => outcome.and(Err(CliError::Io(io))),
    }
}

fn read_input(flag: &'static str, path: &Path, manifest: &mut RunManifest) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|source| CliError::MissingInput {
        flag,
        path: path.to_path_buf(),
        source,
    })?;
    manifest.inputs.insert(path.display().to_string(), causaltab::util::sha256_hex(&bytes));
    Ok(bytes)
}

fn load_schema(path: &Path, manifest: &mut RunManifest) -> Result<TableSchema> {
    let bytes = read_input("--schema", path, manifest)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::invalid("--schema", e))?;
    TableSchema::from_json_str(&text).map_err(|e| CliError::invalid("--schema", e))
}

fn load_csv(flag: &'static str, path: &Path, schema: &TableSchema, manifest: &mut RunManifest) -> Result<DataTable> {
    let bytes = read_input(flag, path, manifest)?;
    tabular::read_table(bytes.as_slice(), schema).map_err(|e| CliError::invalid(flag, e))
}

fn load_table(args: &TableArgs, manifest: &mut RunManifest) -> Result<DataTable> {
    let schema = load_schema(&args.schema, manifest)?;
    load_csv("--data", &args.data, &schema, manifest)
}

fn load_rules(path: &Path, manifest: &mut RunManifest) -> Result<Vec<ViolationRule>> {
    let bytes = read_input("--rules", path, manifest)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::invalid("--rules", e))
}

fn write_table(table: &DataTable, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_atomic(path, &buf)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn write_adjacency(weights: &WeightMatrix, names: &[String], path: &Path) -> Result<()> {
    let mut text = names.join(",");
    text.push('\n');
    for row in weights.0.rows() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn mask_json(mask: &CausalMask) -> serde_json::Value {
    json!({
        "width": mask.width(),
        "nnz": mask.nnz,
        "coordinates": mask.coordinates(),
    })
}

fn column_names(schema: &TableSchema) -> Vec<String> {
    schema.columns.iter().map(|c| c.name.clone()).collect()
}

/// Writes the adjacency (when learned), edge list and mask into `dir`.
fn write_structure(
    dir: &Path,
    schema: &TableSchema,
    graph: &CausalGraph,
    mask: &CausalMask,
    fit: Option<&NotearsFit>,
    manifest: &mut RunManifest,
) -> Result<()> {
    if let Some(fit) = fit {
        let path = dir.join("adjacency.csv");
        write_adjacency(&fit.weights, &column_names(schema), &path)?;
        manifest.record_output("adjacency", &path);
    }
    let graph_path = dir.join("graph.json");
    write_json(&graph.edges, &graph_path)?;
    manifest.record_output("graph", &graph_path);
    let mask_path = dir.join("mask.json");
    write_json(&mask_json(mask), &mask_path)?;
    manifest.record_output("mask", &mask_path);
    Ok(())
}

fn structure_details(graph: &CausalGraph, fit: Option<&NotearsFit>) -> serde_json::Value {
    json!({
        "trajectory": fit.map(|f| f.trajectory.clone()).unwrap_or_default(),
        "removed_edges": graph.removed,
        "edge_count": graph.edge_count(),
    })
}

fn discover(args: DiscoverArgs) -> Result<()> {
    let out = args.out.clone();
    fs::create_dir_all(&out)?;
    with_manifest("discover", &out.join("manifest.json"), |m| {
        if args.mode == NotearsMode::Off {
            return Err(CliError::invalid("--mode", "expected linear or nonlinear"));
        }
        if !(args.tau > 0.0) {
            return Err(CliError::invalid("--tau", "must be positive"));
        }
        let cfg = NotearsConfig {
            seed: args.seed,
            ..NotearsConfig::default()
        };
        m.seed = Some(args.seed);
        m.config = json!({ "mode": args.mode, "tau": args.tau, "notears": cfg });
        let table = load_table(&args.table, m)?;
        let encoding = tabular::fit_encoder(&table).map_err(|e| CliError::invalid("--data", e))?;
        let (graph, fit) = causal::discover(&table, args.mode, &cfg, args.tau)?;
        let mask = causal::expand_mask(&graph, &encoding)?;
        write_structure(&out, &table.schema, &graph, &mask, fit.as_ref(), m)?;
        m.details = structure_details(&graph, fit.as_ref());
        Ok(())
    })
}

/// Defaults, then the config file, then explicit flags.
fn resolve_config(flags: &TrainFlags, manifest: &mut RunManifest) -> Result<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let bytes = read_input("--config", path, manifest)?;
            serde_json::from_slice(&bytes).map_err(|e| CliError::invalid("--config", e))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = flags.notears {
        cfg.notears_mode = v;
    }
    if let Some(v) = flags.tau {
        cfg.tau = v;
    }
    if let Some(v) = flags.w_max {
        cfg.w_max = v;
    }
    if flags.fcr.is_some() {
        cfg.fcr = flags.fcr;
    }
    if flags.no_cross_pairs {
        cfg.no_cross_pairs = true;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.steps {
        cfg.steps = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
        cfg.notears.seed = v;
    }
    cfg.validate().map_err(|e| match e {
        TrainError::InvalidConfig(msg) => CliError::invalid(config_flag(&msg), msg),
        other => CliError::Train(other),
    })?;
    manifest.seed = Some(cfg.seed);
    manifest.config = serde_json::to_value(&cfg).map_err(std::io::Error::other)?;
    Ok(cfg)
}

/// Best-effort mapping from a config validation message to the flag that sets it.
fn config_flag(message: &str) -> &'static str {
    const FLAGS: [(&str, &str); 7] = [
        ("epochs", "--epochs"),
        ("batch_size", "--batch-size"),
        ("w_max", "--w-max"),
        ("fcr", "--fcr"),
        ("tau", "--tau"),
        ("steps", "--steps"),
        ("seed", "--seed"),
    ];
    FLAGS
        .iter()
        .find(|(field, _)| message.contains(field))
        .map(|(_, flag)| *flag)
        .unwrap_or("--config")
}

fn load_graph(path: &Path, d: usize, manifest: &mut RunManifest) -> Result<CausalGraph> {
    let bytes = read_input("--causal-graph", path, manifest)?;
    let edges: Vec<Edge> = serde_json::from_slice(&bytes).map_err(|e| CliError::invalid("--causal-graph", e))?;
    let mut graph = CausalGraph::empty(d);
    for e in edges {
        if e.from >= d || e.to >= d || e.from == e.to {
            return Err(CliError::invalid(
                "--causal-graph",
                format!("edge {} -> {} is out of range for {d} columns", e.from, e.to),
            ));
        }
        graph.adjacency[e.from][e.to] = true;
        graph.edges.push(e);
    }
    if !graph.is_acyclic() {
        return Err(CliError::invalid("--causal-graph", "graph contains a cycle"));
    }
    Ok(graph)
}

/// Writes the checkpoint, log, splits and causal structure of a finished run.
fn write_training(out: &Path, outcome: &mut TrainOutcome, manifest: &mut RunManifest) -> Result<()> {
    let log_path = out.join("train_log.csv");
    train::write_log_csv(&outcome.log, &log_path)?;
    manifest.record_output("log", &log_path);
    outcome.checkpoint.log_path = Some("train_log.csv".into());
    let ckpt_path = out.join("checkpoint.json");
    write_atomic(&ckpt_path, outcome.checkpoint.to_json()?.as_bytes())?;
    manifest.record_output("checkpoint", &ckpt_path);
    for (role, table) in [("train_split", &outcome.train), ("val_split", &outcome.val), ("test_split", &outcome.test)] {
        let path = out.join(format!("{}.csv", role.trim_end_matches("_split")));
        write_table(table, &path)?;
        manifest.record_output(role, &path);
    }
    let ckpt = &outcome.checkpoint;
    write_structure(out, &ckpt.encoding.schema, &ckpt.graph, &ckpt.mask, outcome.notears.as_ref(), manifest)?;
    let history = &ckpt.history;
    manifest.details = json!({
        "structure": structure_details(&ckpt.graph, outcome.notears.as_ref()),
        "best_epoch": ckpt.resume.best_epoch,
        "best_val_loss": ckpt.resume.best_val,
        "epochs_run": history.len(),
        "checkpoint_hash": ckpt.hash()?,
    });
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let out = args.out.clone();
    fs::create_dir_all(&out)?;
    with_manifest("train", &out.join("manifest.json"), |m| {
        let cfg = resolve_config(&args.flags, m)?;
        let table = load_table(&args.table, m)?;
        let graph = match &args.causal_graph {
            Some(path) => Some(load_graph(path, table.n_cols(), m)?),
            None => None,
        };
        let mut outcome = train::train(&cfg, &table, graph)?;
        write_training(&out, &mut outcome, m)
    })
}

fn sample(args: SampleArgs) -> Result<()> {
    with_manifest("sample", &sidecar_path(&args.out), |m| {
        m.seed = Some(args.seed);
        m.config = json!({ "n": args.n, "seed": args.seed, "steps": args.steps });
        if args.n == 0 {
            return Err(CliError::invalid("--n", "must be at least 1"));
        }
        if args.steps == Some(0) {
            return Err(CliError::invalid("--steps", "must be at least 1"));
        }
        let bytes = read_input("--ckpt", &args.ckpt, m)?;
        let text = String::from_utf8(bytes).map_err(|e| CliError::invalid("--ckpt", e))?;
        let ckpt = Checkpoint::from_json(&text).map_err(|e| CliError::invalid("--ckpt", e))?;
        let steps = args.steps.unwrap_or(ckpt.config.steps);
        let synth = train::generate_with_steps(&ckpt, args.n, args.seed, steps)?;
        write_table(&synth, &args.out)?;
        m.record_output("synthetic", &args.out);
        Ok(())
    })
}

struct EvalInputs {
    real: DataTable,
    synth: DataTable,
    opts: EvalOptions,
}

/// Scores the inputs and writes the report plus histogram CSVs beside it.
fn score(inputs: &EvalInputs, report_path: &Path, manifest: &mut RunManifest) -> Result<MetricsReport> {
    let report = evaluation::evaluate(&inputs.real, &inputs.synth, &inputs.opts)?;
    write_json(&report, report_path)?;
    manifest.record_output("report", report_path);
    let hist_dir = report_path.parent().unwrap_or(Path::new(".")).join("histograms");
    evaluation::write_histograms(&inputs.real, &inputs.synth, &hist_dir)?;
    manifest.record_output("histograms", &hist_dir);
    Ok(report)
}

fn check_rules(rules: &[ViolationRule], table: &DataTable) -> Result<()> {
    evaluation::count_violations(table, rules)
        .map(drop)
        .map_err(|e| CliError::invalid("--rules", e))
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    with_manifest("evaluate", &sidecar_path(&args.out), |m| {
        m.seed = Some(args.seed);
        m.config = json!({ "seed": args.seed, "folds": args.folds, "k": args.k });
        if args.folds < 2 {
            return Err(CliError::invalid("--folds", "must be at least 2"));
        }
        if args.k == 0 {
            return Err(CliError::invalid("--k", "must be at least 1"));
        }
        let schema = load_schema(&args.schema, m)?;
        let real = load_csv("--real", &args.real, &schema, m)?;
        let synth = load_csv("--synth", &args.synth, &schema, m)?;
        let rules = match &args.rules {
            Some(p) => load_rules(p, m)?,
            None => Vec::new(),
        };
        check_rules(&rules, &real)?;
        let train = match &args.train {
            Some(p) => Some(load_csv("--train", p, &schema, m)?),
            None => None,
        };
        let holdout = match &args.holdout {
            Some(p) => Some(load_csv("--holdout", p, &schema, m)?),
            None => None,
        };
        let inputs = EvalInputs {
            real,
            synth,
            opts: EvalOptions {
                seed: args.seed,
                folds: args.folds,
                k: args.k,
                rules,
                train,
                holdout,
            },
        };
        score(&inputs, &args.out, m)?;
        Ok(())
    })
}

fn pipeline(args: PipelineArgs) -> Result<()> {
    let out = args.out.clone();
    fs::create_dir_all(&out)?;
    with_manifest("pipeline", &out.join("manifest.json"), |m| {
        let cfg = resolve_config(&args.flags, m)?;
        if args.n == Some(0) {
            return Err(CliError::invalid("--n", "must be at least 1"));
        }
        let table = load_table(&args.table, m)?;
        let rules = match &args.rules {
            Some(p) => load_rules(p, m)?,
            None => Vec::new(),
        };
        check_rules(&rules, &table)?;

        let mut outcome = train::train(&cfg, &table, None)?;
        write_training(&out, &mut outcome, m)?;
        let train_details = m.details.take();

        let n = args.n.unwrap_or(outcome.train.n_rows());
        let synth = train::generate(&outcome.checkpoint, n, cfg.seed)?;
        let synth_path = out.join("synthetic.csv");
        write_table(&synth, &synth_path)?;
        m.record_output("synthetic", &synth_path);

        let inputs = EvalInputs {
            real: outcome.train.clone(),
            synth,
            opts: EvalOptions {
                seed: cfg.seed,
                rules,
                train: Some(outcome.train.clone()),
                holdout: Some(outcome.test.clone()),
                ..EvalOptions::default()
            },
        };
        let report = score(&inputs, &out.join("report.json"), m)?;
        m.details = json!({
            "training": train_details,
            "n_generated": n,
            "shape_pct": report.shape_pct,
            "trend_pct": report.trend_pct,
        });
        Ok(())
    })
}
