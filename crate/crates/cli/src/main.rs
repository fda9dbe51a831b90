mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ifl_core::bench::{fit_genlasso_default, GenLassoConfig};
use ifl_core::ifl::{fit_ifl, IflConfig};
use ifl_core::io::{self, FitRecord};
use ifl_core::portfolio::{self, SynthConfig, REFERENCE_PERIODS_PER_REGIME};
use ifl_core::simulate::{
    generate_instance, run_monte_carlo, Estimator, EstimatorConfig, ScenarioSpec,
};
use ifl_core::IflError;

use config::{ConfigError, Settings};

/// Exit statuses.
const EXIT_RUNTIME: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_TOO_MANY_FAILURES: u8 = 4;

#[derive(Parser)]
#[command(
    name = "ifl",
    version,
    about = "Structural breaks and variable selection with the iterative fused LASSO"
)]
struct Cli {
    /// Base seed for data generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo replications (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// INI or JSON settings file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any settings key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an estimator to a panel CSV (`t,y,x1..xp`).
    Fit(FitArgs),
    /// Run the Monte Carlo grid.
    Simulate(SimulateArgs),
    /// Estimate fund holdings from prices.
    Portfolio(PortfolioArgs),
    /// Time IFL against genLASSO on generated scenarios.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FitArgs {
    panel: PathBuf,
    /// `ifl` or `genlasso`.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    gamma_mix: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// `standard` (18 scenarios) or `custom` (from the list keys).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Comma-separated subset of `ifl,genlasso,oracle`.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    n_per_regime: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    q: Option<String>,
}

#[derive(Args)]
struct PortfolioArgs {
    /// Price CSV (`date,fund,asset_1..asset_K`).
    #[arg(long, conflicts_with = "synth")]
    prices: Option<PathBuf>,
    /// Generate prices instead of reading them.
    #[arg(long)]
    synth: bool,
    /// Twenty assets, two regimes, weights (.25, .25, .5) then (.75, 0, .25).
    #[arg(long, requires = "synth")]
    reference_shape: bool,
    #[arg(long)]
    per_regime: Option<usize>,
    #[arg(long)]
    assets: Option<usize>,
    #[arg(long)]
    periods: Option<usize>,
    /// Regime weight vectors, e.g. `0.5,0.5;1`.
    #[arg(long)]
    weights: Option<String>,
    /// Comma-separated one-based periods starting each new regime.
    #[arg(long)]
    breaks: Option<String>,
    #[arg(long)]
    volatility: Option<f64>,
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    observation_noise: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    n_per_regime: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.0)
    }
}

fn input(e: IflError) -> Failure {
    Failure::Input(e.to_string())
}

fn runtime(e: IflError) -> Failure {
    match e {
        IflError::InvalidArgument(_) | IflError::InvalidData(_) => Failure::Input(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    };
    ExitCode::from(code)
}

fn set_opt<T: ToString>(
    settings: &mut Settings,
    key: &str,
    value: Option<T>,
) -> Result<(), ConfigError> {
    match value {
        Some(v) => settings.set(key, &v.to_string()),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Outcome {
    let mut settings = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    settings.apply_overrides(&cli.set)?;
    set_opt(&mut settings, "seed", cli.seed)?;
    set_opt(&mut settings, "threads", cli.threads)?;
    set_opt(&mut settings, "out", cli.out.as_ref().map(|p| p.display()))?;

    let threads: usize = settings.get_or("threads", 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let out = PathBuf::from(settings.raw("out").unwrap_or("out"));
    std::fs::create_dir_all(&out)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;

    match cli.command {
        Command::Fit(args) => {
            set_opt(&mut settings, "estimator", args.estimator)?;
            set_opt(&mut settings, "max_outer", args.max_outer)?;
            set_opt(&mut settings, "gamma_mix", args.gamma_mix)?;
            cmd_fit(&args.panel, &settings, &out)
        }
        Command::Simulate(args) => {
            set_opt(&mut settings, "grid", args.grid)?;
            set_opt(&mut settings, "n_reps", args.reps)?;
            set_opt(&mut settings, "noise_sd", args.noise)?;
            set_opt(&mut settings, "estimators", args.estimators)?;
            set_opt(&mut settings, "n_per_regime", args.n_per_regime)?;
            set_opt(&mut settings, "p", args.p)?;
            set_opt(&mut settings, "q", args.q)?;
            pool.install(|| cmd_simulate(&settings, &out))
        }
        Command::Portfolio(args) => {
            set_opt(
                &mut settings,
                "prices",
                args.prices.as_ref().map(|p| p.display()),
            )?;
            if args.synth {
                settings.set("synth", "true")?;
            }
            if args.reference_shape {
                settings.set("reference_shape", "true")?;
            }
            set_opt(&mut settings, "per_regime", args.per_regime)?;
            set_opt(&mut settings, "assets", args.assets)?;
            set_opt(&mut settings, "periods", args.periods)?;
            set_opt(&mut settings, "weights", args.weights)?;
            set_opt(&mut settings, "breaks", args.breaks)?;
            set_opt(&mut settings, "volatility", args.volatility)?;
            set_opt(&mut settings, "drift", args.drift)?;
            set_opt(&mut settings, "observation_noise", args.observation_noise)?;
            cmd_portfolio(&settings, &out)
        }
        Command::Bench(args) => {
            set_opt(&mut settings, "n_per_regime", args.n_per_regime)?;
            set_opt(&mut settings, "p", args.p)?;
            set_opt(&mut settings, "q", args.q)?;
            set_opt(&mut settings, "bench_reps", args.reps)?;
            set_opt(&mut settings, "noise_sd", args.noise)?;
            cmd_bench(&settings, &out)
        }
    }
}

fn cmd_fit(panel_path: &Path, settings: &Settings, out: &Path) -> Outcome {
    let panel = io::read_panel_path(panel_path).map_err(input)?;
    let estimator: Estimator = settings
        .get_or("estimator", "ifl".to_string())?
        .parse()
        .map_err(input)?;
    let record = match estimator {
        Estimator::Ifl => {
            let fit = fit_ifl(&panel, &settings.ifl_config()?).map_err(runtime)?;
            FitRecord::from_ifl(&fit).map_err(runtime)?
        }
        Estimator::Genlasso => {
            let config = settings.genlasso_config()?;
            let path = fit_genlasso_default(&panel, &config).map_err(runtime)?;
            FitRecord::from_genlasso(&path, panel.n_obs(), panel.n_features(), config.gamma_mix)
                .map_err(runtime)?
        }
        Estimator::Oracle => {
            return Err(Failure::Input(
                "the oracle needs the true breaks; use `simulate`".into(),
            ));
        }
    };
    io::write_fit_artifacts(out, &record).map_err(runtime)?;
    println!(
        "{}: {} breaks, {} nonzero segments, converged = {}",
        record.estimator,
        record.breaks.len(),
        record.support.len(),
        record.converged
    );
    Ok(if record.converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn scenario_grid(settings: &Settings) -> Result<Vec<ScenarioSpec>, Failure> {
    let seed: u64 = settings.get_or("seed", 0)?;
    let custom_lists = ["n_per_regime", "p", "q"]
        .iter()
        .any(|k| settings.raw(k).is_some());
    let grid = settings.get_or(
        "grid",
        if custom_lists { "custom" } else { "standard" }.to_string(),
    )?;
    let mut specs = match grid.as_str() {
        "standard" => ScenarioSpec::standard_grid(seed),
        "custom" => {
            let ns: Vec<usize> = settings
                .list("n_per_regime")?
                .unwrap_or_else(|| vec![30, 50]);
            let qs: Vec<usize> = settings.list("q")?.unwrap_or_else(|| vec![2, 5, 10]);
            let ps: Vec<usize> = settings.list("p")?.unwrap_or_else(|| vec![20, 30, 40]);
            let mut out = Vec::new();
            for &n in &ns {
                for &q in &qs {
                    for &p in &ps {
                        out.push(ScenarioSpec::new(n, p, q).with_seed(seed));
                    }
                }
            }
            out
        }
        other => {
            return Err(Failure::Input(format!(
                "unknown grid `{other}` (expected standard or custom)"
            )))
        }
    };
    for spec in &mut specs {
        spec.n_regimes = settings.get_or("n_regimes", spec.n_regimes)?;
        spec.noise_sd = settings.get_or("noise_sd", spec.noise_sd)?;
        spec.coef_low = settings.get_or("coef_low", spec.coef_low)?;
        spec.coef_high = settings.get_or("coef_high", spec.coef_high)?;
        spec.validate().map_err(input)?;
    }
    Ok(specs)
}

fn cmd_simulate(settings: &Settings, out: &Path) -> Outcome {
    let specs = scenario_grid(settings)?;
    let n_reps: usize = settings.get_or("n_reps", 100)?;
    let estimators: Vec<Estimator> = match settings.list::<String>("estimators")? {
        Some(names) => names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<_, _>>()
            .map_err(input)?,
        None => Estimator::ALL.to_vec(),
    };
    let config = EstimatorConfig {
        ifl: settings.ifl_config()?,
        genlasso: settings.genlasso_config()?,
    };
    let start = Instant::now();
    let report = run_monte_carlo(&specs, n_reps, &estimators, &config).map_err(runtime)?;
    report.write_artifacts(out).map_err(runtime)?;
    let fraction = report.success_fraction();
    println!(
        "{} scenarios x {} replications in {:.1}s; {} failed replications ({:.1}% succeeded)",
        specs.len(),
        n_reps,
        start.elapsed().as_secs_f64(),
        report.n_failed(),
        100.0 * fraction
    );
    Ok(if fraction >= 0.9 {
        0
    } else {
        EXIT_TOO_MANY_FAILURES
    })
}

fn synth_config(settings: &Settings) -> Result<SynthConfig, Failure> {
    let d = SynthConfig::default();
    Ok(SynthConfig {
        drift: settings.get_or("drift", d.drift)?,
        volatility: settings.get_or("volatility", d.volatility)?,
        observation_noise: settings.get_or("observation_noise", d.observation_noise)?,
        initial_value: settings.get_or("initial_value", d.initial_value)?,
        ..d
    })
}

fn cmd_portfolio(settings: &Settings, out: &Path) -> Outcome {
    let seed: u64 = settings.get_or("seed", 0)?;
    let table = if let Some(path) = settings.raw("prices") {
        io::read_prices_path(Path::new(path)).map_err(input)?
    } else if settings.flag("synth")? {
        let config = synth_config(settings)?;
        let synth = if settings.flag("reference_shape")? {
            let per_regime = settings.get_or("per_regime", REFERENCE_PERIODS_PER_REGIME)?;
            portfolio::reference_shape(per_regime, seed, &config).map_err(runtime)?
        } else {
            let weights = settings.nested_list("weights")?.ok_or_else(|| {
                Failure::Input("synthetic prices need `weights` or --reference-shape".into())
            })?;
            let breaks: Vec<usize> = settings.list("breaks")?.unwrap_or_default();
            if breaks.contains(&0) {
                return Err(Failure::Input("break periods are one-based".into()));
            }
            let breaks: Vec<usize> = breaks.iter().map(|b| b - 1).collect();
            let assets =
                settings.get_or("assets", weights.iter().map(Vec::len).max().unwrap_or(1))?;
            let periods: usize = settings
                .get("periods")?
                .ok_or_else(|| Failure::Input("synthetic prices need `periods`".into()))?;
            portfolio::synth_portfolio(assets, periods, &weights, &breaks, seed, &config)
                .map_err(runtime)?
        };
        let file = std::fs::File::create(out.join("prices.csv"))
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        io::write_prices_csv(std::io::BufWriter::new(file), &synth.table).map_err(runtime)?;
        synth.table
    } else {
        return Err(Failure::Input(
            "portfolio needs --prices FILE or --synth".into(),
        ));
    };
    let estimate =
        portfolio::estimate_holdings(&table, &settings.ifl_config()?).map_err(runtime)?;
    io::write_holdings_artifacts(out, &estimate).map_err(runtime)?;
    println!(
        "{} periods, {} assets: {} rebalancing dates",
        table.n_periods(),
        table.n_assets(),
        estimate.rebalancing.len()
    );
    for r in &estimate.rebalancing {
        let assets: Vec<String> = r.assets.iter().map(|a| (a + 1).to_string()).collect();
        println!(
            "  {} (period {}): assets {}",
            r.date,
            r.period + 1,
            assets.join(",")
        );
    }
    Ok(if estimate.fit.diagnostics.converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn cmd_bench(settings: &Settings, out: &Path) -> Outcome {
    let seed: u64 = settings.get_or("seed", 0)?;
    let n_per_regime = settings.get_or("n_per_regime", 50usize)?;
    let p = settings.get_or("p", 20usize)?;
    let q = settings.get_or("q", 2usize)?;
    let reps = settings.get_or("bench_reps", 3usize)?;
    let noise = settings.get_or("noise_sd", 0.5)?;
    let spec = ScenarioSpec::new(n_per_regime, p, q)
        .with_noise(noise)
        .with_seed(seed);
    spec.validate().map_err(input)?;
    let ifl_config: IflConfig = settings.ifl_config()?;
    let gl_config: GenLassoConfig = settings.genlasso_config()?;

    let mut csv = String::from("replication,ifl_seconds,genlasso_seconds,ratio\n");
    let (mut total_ifl, mut total_gl) = (0.0, 0.0);
    for rep in 0..reps {
        let inst = generate_instance(&spec, rep).map_err(runtime)?;
        let t0 = Instant::now();
        fit_ifl(&inst.panel, &ifl_config).map_err(runtime)?;
        let t_ifl = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        fit_genlasso_default(&inst.panel, &gl_config).map_err(runtime)?;
        let t_gl = t0.elapsed().as_secs_f64();
        total_ifl += t_ifl;
        total_gl += t_gl;
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            rep + 1,
            t_ifl,
            t_gl,
            t_ifl / t_gl
        ));
    }
    let summary = serde_json::json!({
        "scenario": spec,
        "replications": reps,
        "mean_ifl_seconds": total_ifl / reps.max(1) as f64,
        "mean_genlasso_seconds": total_gl / reps.max(1) as f64,
        "ratio": total_ifl / total_gl,
        "note": "genLASSO is solved by ADMM on a lambda grid, not by a dual path algorithm",
    });
    let write = |name: &str, text: &str| {
        std::fs::write(out.join(name), text)
            .map_err(|e| Failure::Runtime(format!("cannot write {name}: {e}")))
    };
    write("bench.csv", &csv)?;
    write(
        "bench.json",
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&summary).expect("plain values")
        ),
    )?;
    println!(
        "IFL {:.3}s, genLASSO {:.3}s per fit (ratio {:.3})",
        total_ifl / reps.max(1) as f64,
        total_gl / reps.max(1) as f64,
        total_ifl / total_gl
    );
    Ok(0)
}
