//! `tweedie-lab` command line: simulation, fitting, decomposition and
//! gradient verification. Every successful command writes its outputs plus
//! `manifest.json` under `--out` and prints the manifest on stdout.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use tweedie_lab::decompose::{
    compose_loss, parse_observations, plant_observations, solve_projection, taylor_coeffs,
    TaylorOptions,
};
use tweedie_lab::fit::{
    grid_csv, grid_search, normalize, parse_sample, GridRange, GridSpec, NormalizationMethod,
    NormalizationSpec,
};
use tweedie_lab::gradcheck::{run_suite, SuiteOptions};
use tweedie_lab::harness::{emit_report, run_many_with_events};
use tweedie_lab::losses::LossKind;
use tweedie_lab::tweedie::{self, TweedieParams};
use tweedie_lab::world::write_event_log;
use tweedie_lab::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "tweedie-lab",
    version,
    about = "Tweedie-loss ranking experiments"
)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Tweedie power.
    #[arg(long, global = true)]
    p: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the multi-day protocol for every loss kind and emit the report.
    Simulate(SimulateArgs),
    /// Grid-search Tweedie parameters minimizing the KS distance to a sample.
    Fit(FitArgs),
    /// Draw Tweedie variates, one per line.
    Sample(SampleArgs),
    /// Solve metric projections and compose a loss from the basis library.
    Decompose(DecomposeArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// TOML protocol config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Runs per kind.
    #[arg(long)]
    runs: Option<usize>,
    /// Comma list of tweedie, logloss, weighted, mse.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    /// Number of leading runs whose event logs are written.
    #[arg(long, default_value_t = 1)]
    event_runs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Normalization {
    None,
    ZscoreShifted,
    ScaleOnly,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Sample file, one nonnegative value per line.
    sample: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    normalize: Normalization,
    /// Truncation cap applied after normalization.
    #[arg(long, default_value_t = 10.0)]
    cap: f64,
    /// mu grid as start:end:step.
    #[arg(long, value_parser = parse_range)]
    mu_grid: Option<GridRange>,
    /// p grid as start:end:step.
    #[arg(long, value_parser = parse_range)]
    p_grid: Option<GridRange>,
    /// phi grid as start:end:step.
    #[arg(long, value_parser = parse_range)]
    phi_grid: Option<GridRange>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, default_value_t = 0.2)]
    mu: f64,
    #[arg(long, default_value_t = 1.5)]
    phi: f64,
    #[arg(short, long, default_value_t = 100_000)]
    n: usize,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    /// Rows of c1,c2,c3,watch,conversion.
    #[arg(long, conflicts_with = "plant")]
    observations: Option<PathBuf>,
    /// Planted watch direction, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    plant: Option<Vec<f64>>,
    /// Planted conversion direction; defaults to zeros.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    plant_v: Option<Vec<f64>>,
    /// Number of planted observations.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Noise standard deviation of planted metrics.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Random configurations per row.
    #[arg(long, default_value_t = 100)]
    cases: usize,
    /// Perturb analytic gradients so every row fails.
    #[arg(long, hide = true)]
    corrupt: bool,
}

fn parse_range(s: &str) -> std::result::Result<GridRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match nums.as_slice() {
        [x] => Ok(GridRange::point(*x)),
        [a, b, step] => Ok(GridRange::new(*a, *b, *step)),
        _ => Err("expected start:end:step or a single value".into()),
    }
}

struct Outcome {
    config_echo: Value,
    master_seed: u64,
    outputs: Vec<PathBuf>,
    /// The command ran to completion but a check failed.
    failed: bool,
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("plain data serializes")
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<Outcome> {
    let mut cfg = match &args.config {
        Some(path) => config::load(path)?,
        None => Default::default(),
    };
    config::apply_overrides(&mut cfg, cli.seed, args.runs, args.kinds.as_deref(), cli.p)?;
    cfg.validate()?;
    let (report, logs) = run_many_with_events(&cfg, args.event_runs.min(cfg.n_runs))?;
    let mut outputs = emit_report(&report, &cli.out)?;
    let events_dir = cli.out.join("events");
    if !logs.is_empty() {
        ensure_dir(&events_dir)?;
    }
    for log in &logs {
        let path = events_dir.join(format!(
            "{}_run{}.csv",
            log.label.replace('#', "_"),
            log.run
        ));
        let mut buf = Vec::new();
        write_event_log(&mut buf, &log.events, cfg.master_seed()).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, buf).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        outputs.push(path);
    }
    for c in &report.comparisons {
        eprintln!(
            "{} vs {}: lift {:+.2}%  p = {}",
            c.reference,
            c.baseline,
            c.lift_pct,
            c.p_value.map_or("n/a".to_string(), |p| format!("{p:.3e}"))
        );
    }
    Ok(Outcome {
        config_echo: to_json(&cfg),
        master_seed: cfg.master_seed(),
        outputs,
        failed: false,
    })
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<Outcome> {
    let text = fs::read_to_string(&args.sample).map_err(|e| Error::Io {
        path: args.sample.clone(),
        source: e,
    })?;
    let raw = parse_sample(&text, &args.sample)?;
    let method = match args.normalize {
        Normalization::None => None,
        Normalization::ZscoreShifted => Some(NormalizationMethod::ZScoreShifted),
        Normalization::ScaleOnly => Some(NormalizationMethod::ScaleOnly),
    };
    let data = match method {
        Some(method) => normalize(
            &raw,
            &NormalizationSpec {
                method,
                upper_bound: args.cap,
            },
        )?,
        None => raw,
    };
    let defaults = GridSpec::default();
    let grid = GridSpec {
        mu: args.mu_grid.unwrap_or(defaults.mu),
        p: args.p_grid.unwrap_or(defaults.p),
        phi: args.phi_grid.unwrap_or(defaults.phi),
    };
    let result = grid_search(&data, &grid)?;
    let seed = cli.seed.unwrap_or(0);
    ensure_dir(&cli.out)?;
    let table = write(
        cli.out.join("fit_grid.csv"),
        &grid_csv(&result, &format!("master_seed={seed}")),
    )?;
    let best = json!({
        "best": result.best,
        "best_ks": result.best_ks,
        "normalization": method,
        "upper_bound": method.map(|_| args.cap),
        "n": data.len(),
    });
    let summary = write(cli.out.join("fit_best.json"), &(pretty(&best) + "\n"))?;
    eprintln!(
        "best mu={} p={} phi={} ks={:.5}",
        result.best.mu, result.best.p, result.best.phi, result.best_ks
    );
    Ok(Outcome {
        config_echo: json!({ "sample": args.sample, "grid": grid, "normalization": method, "cap": args.cap }),
        master_seed: seed,
        outputs: vec![table, summary],
        failed: false,
    })
}

fn sample(cli: &Cli, args: &SampleArgs) -> Result<Outcome> {
    let params = TweedieParams::new(args.mu, args.phi, cli.p.unwrap_or(1.5))?;
    let seed = cli.seed.unwrap_or(0);
    let draws = tweedie::sample(&params, args.n, seed)?;
    let mut text = format!(
        "# master_seed={seed} mu={} phi={} p={}\n",
        params.mu, params.phi, params.p
    );
    for x in &draws {
        text.push_str(&format!("{x}\n"));
    }
    ensure_dir(&cli.out)?;
    let path = write(cli.out.join("sample.txt"), &text)?;
    Ok(Outcome {
        config_echo: json!({ "params": params, "n": args.n }),
        master_seed: seed,
        outputs: vec![path],
        failed: false,
    })
}

fn decompose(cli: &Cli, args: &DecomposeArgs) -> Result<Outcome> {
    let seed = cli.seed.unwrap_or(0);
    let obs = match (&args.observations, &args.plant) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            parse_observations(&text, path)?
        }
        (None, Some(t)) => {
            let v = args.plant_v.clone().unwrap_or_else(|| vec![0.0; t.len()]);
            plant_observations(t, &v, args.n, args.noise, seed)?
        }
        (None, None) => {
            return Err(Error::InvalidConfig(
                "pass --observations or --plant".into(),
            ))
        }
    };
    let solution = solve_projection(&obs)?;

    let p = cli.p.unwrap_or(1.5);
    let opts = TaylorOptions {
        order: obs.dim(),
        fit_order: obs.dim().max(tweedie_lab::decompose::DEFAULT_FIT_ORDER),
        ..Default::default()
    };
    let library = LossKind::all(p)
        .iter()
        .map(|k| taylor_coeffs(k, 1.0, &opts))
        .collect::<Result<Vec<_>>>()?;
    let coeffs: Vec<Vec<f64>> = library.iter().map(|b| b.coeffs.clone()).collect();
    let labels: Vec<&str> = LossKind::all(p).iter().map(|k| k.label()).collect();
    let watch_mix = compose_loss(&solution.t_vector, &coeffs)?;
    let conversion_mix = compose_loss(&solution.v_vector, &coeffs).ok();

    let result = json!({
        "solution": solution,
        "library": labels.iter().zip(&library).map(|(l, b)| json!({ "loss": l, "coeffs": b.coeffs })).collect::<Vec<_>>(),
        "watch_composition": watch_mix,
        "conversion_composition": conversion_mix,
    });
    ensure_dir(&cli.out)?;
    let path = write(cli.out.join("decompose.json"), &(pretty(&result) + "\n"))?;
    eprintln!("t = {:?}", solution.t_vector);
    eprintln!("v = {:?}", solution.v_vector);
    Ok(Outcome {
        config_echo: json!({
            "observations": args.observations,
            "plant": args.plant,
            "plant_v": args.plant_v,
            "n": args.n,
            "noise": args.noise,
            "p": p,
        }),
        master_seed: seed,
        outputs: vec![path],
        failed: false,
    })
}

fn gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<Outcome> {
    let opts = SuiteOptions {
        cases: args.cases,
        seed: cli.seed.unwrap_or(0),
        p: cli.p.unwrap_or(1.5),
        corrupt: if args.corrupt { 1e-2 } else { 0.0 },
        ..Default::default()
    };
    let rows = run_suite(&opts)?;
    let mut table = format!(
        "# master_seed={}\nname,cases,max_rel_error,status\n",
        opts.seed
    );
    for r in &rows {
        let status = if r.passed { "pass" } else { "FAIL" };
        eprintln!(
            "{:<18} {:>5} cases  max rel err {:.3e}  {status}",
            r.name, r.cases, r.max_rel_error
        );
        table.push_str(&format!(
            "{},{},{:e},{status}\n",
            r.name, r.cases, r.max_rel_error
        ));
    }
    ensure_dir(&cli.out)?;
    let path = write(cli.out.join("gradcheck.csv"), &table)?;
    Ok(Outcome {
        config_echo: to_json(&opts),
        master_seed: opts.seed,
        outputs: vec![path],
        failed: rows.iter().any(|r| !r.passed),
    })
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize")
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate(_) => "simulate",
        Command::Fit(_) => "fit",
        Command::Sample(_) => "sample",
        Command::Decompose(_) => "decompose",
        Command::Gradcheck(_) => "gradcheck",
    }
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be >= 1".into()));
        }
        // only fails when a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let start = Instant::now();
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(cli, a)?,
        Command::Fit(a) => fit(cli, a)?,
        Command::Sample(a) => sample(cli, a)?,
        Command::Decompose(a) => decompose(cli, a)?,
        Command::Gradcheck(a) => gradcheck(cli, a)?,
    };
    let manifest_path = cli.out.join("manifest.json");
    let mut outputs = outcome.outputs;
    outputs.push(manifest_path.clone());
    let manifest = json!({
        "command": command_name(&cli.command),
        "config_echo": outcome.config_echo,
        "master_seed": outcome.master_seed,
        "versions": {
            "tweedie-lab": tweedie_lab::VERSION,
            "tweedie-lab-cli": env!("CARGO_PKG_VERSION"),
        },
        "outputs": outputs,
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
        "status": if outcome.failed { "fail" } else { "ok" },
    });
    let text = pretty(&manifest);
    write(manifest_path, &(text.clone() + "\n"))?;
    println!("{text}");
    Ok(!outcome.failed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
