//! `dpgenlab` command-line workbench. The binary is a thin wrapper over [`run`],
//! which tests call in-process.

pub mod args;
pub mod error;
pub mod manifest;
pub mod svg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::{json, Value};

use dpgenlab_core::empirical::{
    arm_streams, exact_smoothed_leakage, run_cell, run_sweep, temperature_grid, CellSpec, LabelSpace, Projection,
    SweepConfig,
};
use dpgenlab_core::files::{load_dataset, load_model_spec, parse_record, ModelSpec};
use dpgenlab_core::generation::DEFAULT_ENUM_CAP;
use dpgenlab_core::privacy::{
    analyze, logit_sensitivity, message_epsilon_bound, temperature_floor_for_budget, token_epsilon_bound, NeighborPair,
};
use dpgenlab_core::utility::{objective_curve, optimal_temperature, OptimizationProblem, UtilitySpec};
use dpgenlab_core::{selftest, Context, Dataset, Error, GenerationConfig, LogitModel};

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

/// Environment variable overriding the enumeration cap.
pub const ENUM_CAP_ENV: &str = "DPGENLAB_ENUM_CAP";

/// Parse `argv` (program name first), run, and write console output to `stdout`.
pub fn run<W: Write>(argv: &[String], stdout: &mut W) -> CliResult<()> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write_console(stdout, &e.to_string())?;
            return Ok(());
        }
        Err(e) => return Err(CliError::usage(e.render().to_string().trim_end())),
    };
    let enum_cap = enum_cap_from_env()?;
    let tail = argv.iter().skip(1).cloned().collect();
    execute(cli, tail, enum_cap, stdout)
}

fn enum_cap_from_env() -> CliResult<u64> {
    match std::env::var(ENUM_CAP_ENV) {
        Err(_) => Ok(DEFAULT_ENUM_CAP),
        Ok(v) => match v.trim().parse::<u64>() {
            Ok(cap) if cap > 0 => Ok(cap),
            _ => Err(CliError::usage(format!(
                "{ENUM_CAP_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// What a subcommand produced, before anything is written.
struct Artifact {
    params: Value,
    root_seed: Option<u64>,
    inputs: Vec<manifest::InputDigest>,
    /// Main output: written to `--out`, or to stdout when there is no `--out`.
    primary: Option<String>,
    /// Printed to stdout regardless of `--out`.
    console: Option<String>,
    side_files: Vec<(PathBuf, String)>,
    status: CliResult<()>,
}

impl Artifact {
    fn new(params: Value, inputs: Vec<manifest::InputDigest>, primary: String) -> Self {
        Self {
            params,
            root_seed: None,
            inputs,
            primary: Some(primary),
            console: None,
            side_files: Vec::new(),
            status: Ok(()),
        }
    }
}

fn execute<W: Write>(mut cli: Cli, argv: Vec<String>, enum_cap: u64, stdout: &mut W) -> CliResult<()> {
    if let Command::Replay(r) = &cli.command {
        return replay(r.clone(), cli.manifest_out.clone(), cli.jobs, stdout);
    }
    let subcommand = cli.command.name();
    let out = cli.command.out_mut().and_then(|o| o.clone());
    let artifact = match cli.jobs {
        Some(0) => return Err(CliError::usage("--jobs must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::usage(format!("cannot build a pool of {n} threads: {e}")))?
            .install(|| dispatch(&cli.command, enum_cap))?,
        None => dispatch(&cli.command, enum_cap)?,
    };

    let mut outputs = Vec::new();
    for (path, text) in &artifact.side_files {
        write_file(path, text, &artifact.inputs)?;
        outputs.push(path.display().to_string());
    }
    if let Some(console) = &artifact.console {
        write_console(stdout, console)?;
    }
    if let Some(primary) = &artifact.primary {
        match &out {
            Some(path) => {
                write_file(path, primary, &artifact.inputs)?;
                outputs.insert(0, path.display().to_string());
            }
            None if artifact.console.is_none() => write_console(stdout, primary)?,
            None => {}
        }
    }
    let record = RunManifest {
        schema_version: manifest::MANIFEST_SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: subcommand.to_string(),
        argv,
        params: artifact.params,
        root_seed: artifact.root_seed,
        enum_cap,
        inputs: artifact.inputs,
        outputs,
    };
    let path = manifest::manifest_path(subcommand, out.as_deref(), cli.manifest_out.as_deref());
    record.write(&path)?;
    artifact.status
}

fn replay<W: Write>(
    args: args::ReplayArgs,
    manifest_out: Option<PathBuf>,
    jobs: Option<usize>,
    stdout: &mut W,
) -> CliResult<()> {
    let recorded = RunManifest::load(&args.manifest)?;
    if recorded.subcommand == "replay" {
        return Err(CliError::input("a replay manifest cannot be replayed"));
    }
    recorded.verify_inputs()?;
    let argv = match &args.out {
        Some(out) => manifest::with_out(&recorded.argv, out),
        None => recorded.argv.clone(),
    };
    let mut cli = Cli::try_parse_from(std::iter::once("dpgenlab".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::input(format!("manifest argv does not parse: {}", e.render())))?;
    if cli.command.name() != recorded.subcommand {
        return Err(CliError::input(format!(
            "manifest names subcommand {} but its argv runs {}",
            recorded.subcommand,
            cli.command.name()
        )));
    }
    if manifest_out.is_some() {
        cli.manifest_out = manifest_out;
    }
    if jobs.is_some() {
        cli.jobs = jobs;
    }
    execute(cli, argv, recorded.enum_cap, stdout)
}

fn write_console<W: Write>(stdout: &mut W, text: &str) -> CliResult<()> {
    stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(|e| CliError::input(format!("stdout: {e}")))
}

fn write_file(path: &Path, text: &str, inputs: &[manifest::InputDigest]) -> CliResult<()> {
    let same = |a: &Path, b: &Path| match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if inputs.iter().any(|i| same(path, Path::new(&i.path))) {
        return Err(CliError::usage(format!(
            "refusing to overwrite input file {}",
            path.display()
        )));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn dispatch(command: &Command, enum_cap: u64) -> CliResult<Artifact> {
    match command {
        Command::Analyze(a) => cmd_analyze(a, enum_cap),
        Command::Bound(a) => cmd_bound(a, enum_cap),
        Command::Optimize(a) => cmd_optimize(a, enum_cap),
        Command::Estimate(a) => cmd_estimate(a, enum_cap),
        Command::Sweep(a) => cmd_sweep(a, enum_cap),
        Command::Selftest(_) => Ok(cmd_selftest()),
        Command::Replay(_) => unreachable!("replay is handled before dispatch"),
    }
}

fn load_model(path: &Path, inputs: &mut Vec<manifest::InputDigest>) -> CliResult<ModelSpec> {
    let spec = load_model_spec(path)?;
    inputs.push(manifest::InputDigest::of("model", path)?);
    Ok(spec)
}

fn load_data(path: Option<&Path>, inputs: &mut Vec<manifest::InputDigest>) -> CliResult<Dataset> {
    match path {
        None => Ok(Dataset::default()),
        Some(p) => {
            let d = load_dataset(p)?;
            inputs.push(manifest::InputDigest::of("data", p)?);
            Ok(d)
        }
    }
}

fn neighbor_pair(dataset: &Dataset, index: usize, record: &str) -> CliResult<NeighborPair> {
    if dataset.is_empty() {
        return Err(CliError::input(
            "dataset is empty: a replacement neighbor needs at least one record (pass --data)",
        ));
    }
    Ok(NeighborPair::replace(dataset, index, parse_record(record)?)?)
}

fn contexts<'a>(spec: &'a ModelSpec, id: Option<&str>) -> CliResult<Vec<&'a (Context, LogitModel)>> {
    let all: Vec<_> = spec.contexts().iter().collect();
    match id {
        None => Ok(all),
        Some(id) => {
            let hit: Vec<_> = all.into_iter().filter(|(c, _)| c.prompt_id == id).collect();
            if hit.is_empty() {
                return Err(CliError::input(format!("unknown context {id:?}")));
            }
            Ok(hit)
        }
    }
}

fn single_context<'a>(spec: &'a ModelSpec, id: Option<&str>) -> CliResult<&'a (Context, LogitModel)> {
    Ok(contexts(spec, id)?[0])
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn config(temperature: f64, length: usize, enum_cap: u64) -> CliResult<GenerationConfig> {
    Ok(GenerationConfig::new(temperature, length)?.with_enum_cap(enum_cap))
}

fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::usage(format!("grid {text:?} is not start:stop:step")))?;
    match nums[..] {
        [start, stop, step] => Ok(temperature_grid(start, stop, step)?),
        _ => Err(CliError::usage(format!("grid {text:?} is not start:stop:step"))),
    }
}

fn parse_bracket(text: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::usage(format!("bracket {text:?} is not lo:hi"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

fn cmd_analyze(a: &args::AnalyzeArgs, enum_cap: u64) -> CliResult<Artifact> {
    let mut inputs = Vec::new();
    let spec = load_model(&a.model.model, &mut inputs)?;
    let data = load_data(a.data.data.as_deref(), &mut inputs)?;
    let pair = neighbor_pair(&data, a.neighbor.neighbor_index, &a.neighbor.neighbor_record)?;
    let cfg = config(a.temperature, a.length, enum_cap)?;

    let mut reports = Vec::new();
    for (ctx, model) in contexts(&spec, a.model.context.as_deref())? {
        reports.push((
            ctx.prompt_id.clone(),
            analyze(model, &pair, &cfg, a.eps_points.as_deref())?,
        ));
    }
    let (worst_id, worst) = reports
        .iter()
        .max_by(|x, y| x.1.exact_message_epsilon.total_cmp(&y.1.exact_message_epsilon))
        .expect("a model spec has at least one context");
    let delta = reports.iter().map(|r| r.1.sensitivity.delta_logit).fold(0.0, f64::max);
    let report = json!({
        "temperature": a.temperature,
        "length": a.length,
        "differing_index": pair.differing_index(),
        "contexts": reports.iter().map(|(id, r)| json!({ "context": id, "report": r })).collect::<Vec<_>>(),
        "worst_case": {
            "context": worst_id,
            "exact_message_epsilon": worst.exact_message_epsilon,
            "worst_message": worst.worst_message,
            "delta_logit": delta,
            "message_epsilon_bound": message_epsilon_bound(delta, a.temperature, a.length)?,
        },
    });
    let params = json!({
        "model": a.model.model,
        "context": a.model.context,
        "data": a.data.data,
        "neighbor_index": a.neighbor.neighbor_index,
        "neighbor_record": a.neighbor.neighbor_record,
        "temperature": a.temperature,
        "length": a.length,
        "eps_points": a.eps_points,
    });
    Ok(Artifact::new(params, inputs, pretty(&report)))
}

fn cmd_bound(a: &args::BoundArgs, enum_cap: u64) -> CliResult<Artifact> {
    let mut inputs = Vec::new();
    let delta = match (a.delta, &a.model) {
        (Some(d), None) => d,
        (Some(_), Some(_)) => return Err(CliError::usage("give either --delta or --model, not both")),
        (None, None) => {
            return Err(CliError::usage(
                "bound needs --delta, or --model with --neighbor-record",
            ))
        }
        (None, Some(path)) => {
            let spec = load_model(path, &mut inputs)?;
            let data = load_data(a.data.data.as_deref(), &mut inputs)?;
            let record = a
                .neighbor_record
                .as_deref()
                .ok_or_else(|| CliError::usage("--model needs --neighbor-record to define the neighbor"))?;
            let pair = neighbor_pair(&data, a.neighbor_index, record)?;
            let cfg = config(a.temperature, a.length, enum_cap)?;
            let mut d: f64 = 0.0;
            for (_, model) in contexts(&spec, a.context.as_deref())? {
                d = d.max(logit_sensitivity(model, &pair, &cfg)?.delta_logit);
            }
            d
        }
    };
    let mut report = json!({
        "delta_logit": delta,
        "temperature": a.temperature,
        "length": a.length,
        "token_epsilon_bound": token_epsilon_bound(delta, a.temperature)?,
        "message_epsilon_bound": message_epsilon_bound(delta, a.temperature, a.length)?,
    });
    if let Some(eps) = a.epsilon {
        report["epsilon_budget"] = json!(eps);
        report["temperature_floor"] = json!(temperature_floor_for_budget(delta, a.length, eps)?);
    }
    let params = json!({
        "delta": a.delta,
        "model": a.model,
        "context": a.context,
        "data": a.data.data,
        "neighbor_index": a.neighbor_index,
        "neighbor_record": a.neighbor_record,
        "temperature": a.temperature,
        "length": a.length,
        "epsilon": a.epsilon,
    });
    Ok(Artifact::new(params, inputs, pretty(&report)))
}

fn cmd_optimize(a: &args::OptimizeArgs, enum_cap: u64) -> CliResult<Artifact> {
    let mut inputs = Vec::new();
    let spec = load_model(&a.model.model, &mut inputs)?;
    let data = load_data(a.data.data.as_deref(), &mut inputs)?;
    let (ctx, model) = single_context(&spec, a.model.context.as_deref())?;
    let utility: UtilitySpec = a.utility.parse()?;
    let bracket = parse_bracket(&a.bracket)?;
    let grid = a.curve.as_ref().map(|_| parse_grid(&a.grid)).transpose()?;
    let problem = OptimizationProblem::from_model(model, &data, a.length, &utility, a.lambda, bracket, enum_cap)?;
    let sol = optimal_temperature(&problem)?;
    let report = json!({
        "context": ctx.prompt_id,
        "length": a.length,
        "lambda": a.lambda,
        "utility": utility.to_string(),
        "bracket": [bracket.0, bracket.1],
        "t_star": sol.t_star,
        "objective": sol.objective,
        "expected_utility": problem.landscape().expected_utility(sol.t_star),
        "interior": sol.interior,
        "foc_residual": sol.foc_residual,
        "candidates": sol.candidates,
    });
    let mut artifact = Artifact::new(
        json!({
            "model": a.model.model,
            "context": ctx.prompt_id,
            "data": a.data.data,
            "length": a.length,
            "lambda": a.lambda,
            "utility": utility.to_string(),
            "bracket": [bracket.0, bracket.1],
            "curve": a.curve,
            "grid": a.grid,
        }),
        inputs,
        pretty(&report),
    );
    if let (Some(path), Some(grid)) = (&a.curve, grid) {
        let mut csv = String::from("temperature,expected_utility,objective\n");
        for (t, e, obj) in objective_curve(&problem, &grid) {
            csv.push_str(&format!("{t:?},{e:?},{obj:?}\n"));
        }
        artifact.side_files.push((path.clone(), csv));
    }
    Ok(artifact)
}

fn cmd_estimate(a: &args::EstimateArgs, enum_cap: u64) -> CliResult<Artifact> {
    let mut inputs = Vec::new();
    let spec = load_model(&a.model.model, &mut inputs)?;
    let data = load_data(a.data.data.as_deref(), &mut inputs)?;
    let pair = neighbor_pair(&data, a.neighbor.neighbor_index, &a.neighbor.neighbor_record)?;
    let (ctx, model) = single_context(&spec, a.model.context.as_deref())?;
    let s = &a.sampling;
    let projection: Projection = s.projection.parse()?;
    let utility: UtilitySpec = s.utility.parse()?;
    let cfg = config(a.temperature, a.length, enum_cap)?;
    let labels = LabelSpace::new(projection, model.vocab().len(), a.length)?;
    let (left_seed, right_seed) = arm_streams(s.seed, a.length, 0, s.shared_seed);
    let cell = CellSpec {
        config: cfg,
        samples: s.samples,
        alpha: s.alpha,
        labels: &labels,
        utility: &utility,
        left_seed,
        right_seed,
    };
    let outcome = run_cell(model, &pair, &cell)?;
    let exact = match exact_smoothed_leakage(model, &pair, &cfg, &labels, s.samples as u64, s.alpha) {
        Ok((leakage, _, _)) => Some(leakage),
        Err(Error::EnumerationTooLarge { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let report = json!({
        "context": ctx.prompt_id,
        "temperature": a.temperature,
        "length": a.length,
        "samples": s.samples,
        "alpha": s.alpha,
        "seed": s.seed,
        "shared_seed": s.shared_seed,
        "projection": labels.projection(),
        "labels": labels.size(),
        "utility": utility.to_string(),
        "empirical_epsilon": outcome.leakage.empirical_epsilon,
        "tv": outcome.leakage.tv,
        "js": outcome.leakage.js,
        "mean_U": outcome.mean_u,
        "mean_info_score": outcome.mean_info_score,
        "cov_nu_U": outcome.cov_nu_u,
        "exact_smoothed": exact,
    });
    let mut artifact = Artifact::new(
        json!({
            "model": a.model.model,
            "context": ctx.prompt_id,
            "data": a.data.data,
            "neighbor_index": a.neighbor.neighbor_index,
            "neighbor_record": a.neighbor.neighbor_record,
            "temperature": a.temperature,
            "length": a.length,
            "samples": s.samples,
            "alpha": s.alpha,
            "seed": s.seed,
            "projection": projection,
            "utility": utility.to_string(),
            "shared_seed": s.shared_seed,
        }),
        inputs,
        pretty(&report),
    );
    artifact.root_seed = Some(s.seed);
    Ok(artifact)
}

fn cmd_sweep(a: &args::SweepArgs, enum_cap: u64) -> CliResult<Artifact> {
    let mut inputs = Vec::new();
    let spec = load_model(&a.model.model, &mut inputs)?;
    let data = load_data(a.data.data.as_deref(), &mut inputs)?;
    let pair = neighbor_pair(&data, a.neighbor.neighbor_index, &a.neighbor.neighbor_record)?;
    let (ctx, model) = single_context(&spec, a.model.context.as_deref())?;
    let s = &a.sampling;
    let config = SweepConfig {
        lengths: a.lengths.clone(),
        temperatures: parse_grid(&a.grid)?,
        samples: s.samples,
        repeats: a.repeats,
        alpha: s.alpha,
        projection: s.projection.parse()?,
        utility: s.utility.parse()?,
        root_seed: s.seed,
        shared_seed: s.shared_seed,
        enum_cap,
    };
    let result = run_sweep(model, &pair, &config)?;
    let mut artifact = Artifact::new(
        json!({
            "model": a.model.model,
            "context": ctx.prompt_id,
            "data": a.data.data,
            "neighbor_index": a.neighbor.neighbor_index,
            "neighbor_record": a.neighbor.neighbor_record,
            "grid": a.grid,
            "temperatures": config.temperatures,
            "lengths": config.lengths,
            "samples": config.samples,
            "repeats": config.repeats,
            "alpha": config.alpha,
            "projection": config.projection,
            "utility": config.utility.to_string(),
            "seed": config.root_seed,
            "shared_seed": config.shared_seed,
            "svg": a.svg,
        }),
        inputs,
        result.to_csv(),
    );
    artifact.root_seed = Some(s.seed);
    if let Some(path) = &a.svg {
        artifact.side_files.push((path.clone(), svg::render(&result)));
    }
    Ok(artifact)
}

fn cmd_selftest() -> Artifact {
    let checks = selftest::run_all();
    let failed = checks.iter().filter(|c| !c.passed).count();
    let mut console = String::new();
    for c in &checks {
        console.push_str(&format!(
            "{} {}: {}\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    console.push_str(&format!("{} of {} cases passed\n", checks.len() - failed, checks.len()));
    let status = if failed == 0 {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "{failed} of {} selftest cases failed",
            checks.len()
        )))
    };
    Artifact {
        params: json!({}),
        root_seed: None,
        inputs: Vec::new(),
        primary: Some(pretty(&checks)),
        console: Some(console),
        side_files: Vec::new(),
        status,
    }
}
