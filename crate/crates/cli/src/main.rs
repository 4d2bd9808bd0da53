//! `approxnet`: generate data, tune, profile, calibrate, run adaptive traces
//! and render reports.

mod spec;

use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use approxnet_core::adapt::{ConfigurationLadder, IncreaseMode, StrategySpec};
use approxnet_core::calibration::fit_temperature;
use approxnet_core::config::{read_config_file, write_config_file, ConfigFile};
use approxnet_core::dataset::{self, Dwell, Trace};
use approxnet_core::profiler::{self, ProfileParams};
use approxnet_core::stream;
use approxnet_core::tuner::{self, TunerParams};
use approxnet_core::{run_batch, Clock, Configuration, KnobDomain, NetworkGraph, RunOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::spec::DataSpec;

type CliResult<T = ()> = Result<T, Box<dyn StdError>>;

#[derive(Parser)]
#[command(name = "approxnet", version, about = "Approximate CNN inference pipeline")]
struct Cli {
    /// Seed for every randomised step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Timing source. `virtual` charges 1 ns per MAC and per element and is
    /// reproducible; `wall` measures real time.
    #[arg(long, global = true, value_enum, default_value_t = ClockArg::Virtual)]
    clock: ClockArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Virtual,
    Wall,
}

impl ClockArg {
    fn clock(self) -> Clock {
        match self {
            ClockArg::Virtual => Clock::default(),
            ClockArg::Wall => Clock::Wall,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the reference model and synthetic trace, validation and test sets.
    GenData(GenData),
    /// Search the knob space for the QoS-loss / speedup frontier.
    Tune(Tune),
    /// Measure frontier configurations on a labelled test set.
    Profile(Profile),
    /// Fit the softmax temperature and refresh confidence statistics.
    Calibrate(Calibrate),
    /// Run a trace under an adaptation strategy next to the exact model.
    RunAdaptive(RunAdaptive),
    /// Render timelines, a summary table and plots from report files.
    Report(Report),
}

#[derive(Args)]
struct GenData {
    /// TOML data spec.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Tune {
    /// Model directory written by gen-data.
    #[arg(long)]
    model: PathBuf,
    /// Labelled validation trace.
    #[arg(long)]
    data: PathBuf,
    /// Configuration file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    max_qos_loss: f64,
    #[arg(long, default_value_t = 20)]
    max_configs: usize,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    /// Enumerate the whole space when it has at most this many points.
    #[arg(long, default_value_t = 512)]
    exhaustive_limit: u128,
}

#[derive(Args)]
struct Profile {
    #[arg(long)]
    model: PathBuf,
    /// Labelled test trace.
    #[arg(long)]
    data: PathBuf,
    /// Configuration file from tune.
    #[arg(long)]
    configs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    /// Softmax temperature; defaults to the configuration file's.
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct Calibrate {
    #[arg(long)]
    model: PathBuf,
    /// Labelled validation trace the temperature is fitted on.
    #[arg(long)]
    data: PathBuf,
    /// Labelled test trace the confidence statistics are recomputed on.
    #[arg(long)]
    profile_data: PathBuf,
    /// Profiled configuration file.
    #[arg(long)]
    configs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    /// Fit a separate temperature for every configuration.
    #[arg(long)]
    per_config: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Naive,
    StateDriven,
    Confidence,
    Pinned,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Linear,
    Exponential,
}

#[derive(Args)]
struct RunAdaptive {
    #[arg(long)]
    model: PathBuf,
    /// Calibrated configuration file.
    #[arg(long)]
    configs: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// How moves toward more approximation grow.
    #[arg(long, value_enum, default_value_t = ModeArg::Linear)]
    mode: ModeArg,
    /// Prediction window of the state-driven strategy.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Reliability index limit of the state-driven strategy.
    #[arg(long, default_value_t = 2)]
    v_limit: i64,
    /// Rung held by the pinned strategy.
    #[arg(long, default_value_t = 0)]
    rung: usize,
    /// Trace name in the report; defaults to the trace file stem.
    #[arg(long)]
    trace_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Report {
    /// Report files from run-adaptive.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprint!(": {s}");
                source = s.source();
            }
            eprintln!();
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let clock = cli.clock.clock();
    match cli.command {
        Command::GenData(a) => gen_data(a, cli.seed),
        Command::Tune(a) => tune(a, cli.seed),
        Command::Profile(a) => profile(a, clock),
        Command::Calibrate(a) => calibrate(a),
        Command::RunAdaptive(a) => run_adaptive(a, clock),
        Command::Report(a) => report(a),
    }
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()).into())
}

fn labelled(trace: &Trace, path: &Path) -> CliResult<Vec<usize>> {
    trace
        .labels()
        .ok_or_else(|| format!("{}: every event needs a label", path.display()).into())
}

fn load_model(dir: &Path) -> CliResult<NetworkGraph> {
    Ok(NetworkGraph::load_dir(dir)?)
}

fn gen_data(a: GenData, seed: u64) -> CliResult {
    let spec = DataSpec::load(&a.spec)?;
    let trace_spec = spec.synthetic(&spec.trace, seed, Dwell::Geometric { mean: 25.0 });
    let once = Dwell::Constant { length: 1 };
    let val_spec = spec.synthetic(&spec.validation, seed.wrapping_add(1), once);
    let test_spec = spec.synthetic(&spec.test, seed.wrapping_add(2), once);

    create_dir(&a.out)?;
    let graph = dataset::matched_filter_graph(&trace_spec)?;
    graph.save_dir(a.out.join("model"))?;
    for (name, s) in [("trace", &trace_spec), ("validation", &val_spec), ("test", &test_spec)] {
        let t = dataset::generate_stream(s)?;
        dataset::write_trace(&t, a.out.join(format!("{name}.jsonl")))?;
        println!("{name}: {} events", t.events.len());
    }
    Ok(())
}

fn tune(a: Tune, seed: u64) -> CliResult {
    let graph = load_model(&a.model)?;
    let data = dataset::read_trace(&a.data)?;
    let labels = labelled(&data, &a.data)?;
    let params = TunerParams {
        max_qos_loss: a.max_qos_loss,
        max_configs: a.max_configs,
        iterations: a.iterations,
        seed,
        exhaustive_limit: a.exhaustive_limit,
    };
    let domain = KnobDomain::default_for(&graph);
    let front = tuner::tune(&graph, &domain, &data.inputs(), &labels, &params)?;
    println!("{:<10} {:>9} {:>9}", "config", "qos loss", "speedup");
    for p in &front {
        println!("{:<10} {:>9.3} {:>9.4}", p.config.id, p.qos_loss, p.predicted_speedup);
    }
    let file = ConfigFile {
        temperature: 1.0,
        configs: front.into_iter().map(|p| p.config).collect(),
    };
    write_config_file(&file, &a.out)?;
    Ok(())
}

fn profile(a: Profile, clock: Clock) -> CliResult {
    let graph = load_model(&a.model)?;
    let data = dataset::read_trace(&a.data)?;
    let labels = labelled(&data, &a.data)?;
    let file = read_config_file(&a.configs)?;
    let temperature = a.temperature.unwrap_or(file.temperature);
    let params = ProfileParams {
        batch_size: a.batch_size,
        temperature,
        clock,
    };
    let mut configs = profiler::profile(&graph, &file.configs, &data.inputs(), &labels, &params)?;
    if configs.len() >= 2 {
        let order = profiler::reprofile_order_check(&configs)?;
        profiler::mark_outliers(&mut configs, &order);
        println!(
            "kendall tau: predicted vs measured {:.4}, cost vs measured {:.4}",
            order.tau_predicted_vs_measured, order.tau_cost_vs_measured
        );
        if !order.outliers.is_empty() {
            println!("outliers: {}", order.outliers.join(", "));
        }
    }
    print_profile(&configs);
    write_config_file(&ConfigFile { temperature, configs }, &a.out)?;
    Ok(())
}

fn print_profile(configs: &[Configuration]) {
    println!("{:<10} {:>9} {:>9} {:>9} {:>8}", "config", "accuracy", "qos loss", "cost", "outlier");
    for c in configs {
        if let Some(p) = &c.profile {
            println!(
                "{:<10} {:>9.4} {:>9.3} {:>9.4} {:>8}",
                c.id, p.accuracy, p.measured_qos_loss, p.cost_ratio, p.outlier
            );
        }
    }
}

fn logits_of(graph: &NetworkGraph, config: &Configuration, trace: &Trace, labels: &[usize]) -> CliResult<Vec<Vec<f32>>> {
    let r = run_batch(graph, config, &trace.inputs(), Some(labels), &RunOptions::with_temperature(1.0))?;
    Ok(r.results.into_iter().map(|r| r.logits.into_data()).collect())
}

fn calibrate(a: Calibrate) -> CliResult {
    let graph = load_model(&a.model)?;
    let val = dataset::read_trace(&a.data)?;
    let val_labels = labelled(&val, &a.data)?;
    let test = dataset::read_trace(&a.profile_data)?;
    let test_labels = labelled(&test, &a.profile_data)?;
    let mut file = read_config_file(&a.configs)?;
    if file.configs.iter().any(|c| c.profile.is_none()) {
        return Err(format!("{}: run profile before calibrate", a.configs.display()).into());
    }

    let baseline = Configuration::baseline(&graph);
    let fit = fit_temperature(&logits_of(&graph, &baseline, &val, &val_labels)?, &val_labels)?;
    println!(
        "temperature {:.6} (nll {:.6} -> {:.6})",
        fit.temperature, fit.nll_before, fit.nll_after
    );
    let inputs = test.inputs();
    if a.per_config {
        for c in file.configs.iter_mut() {
            let t = fit_temperature(&logits_of(&graph, c, &val, &val_labels)?, &val_labels)?.temperature;
            profiler::restat_confidence(&graph, std::slice::from_mut(c), &inputs, &test_labels, a.batch_size, t)?;
        }
    } else {
        profiler::restat_confidence(
            &graph,
            &mut file.configs,
            &inputs,
            &test_labels,
            a.batch_size,
            fit.temperature,
        )?;
    }
    file.temperature = fit.temperature;
    write_config_file(&file, &a.out)?;
    Ok(())
}

fn run_adaptive(a: RunAdaptive, clock: Clock) -> CliResult {
    let graph = load_model(&a.model)?;
    let file = read_config_file(&a.configs)?;
    let trace = dataset::read_trace(&a.trace)?;
    let ladder = ConfigurationLadder::from_profiled(&file.configs)?;
    let mode = match a.mode {
        ModeArg::Linear => IncreaseMode::Linear,
        ModeArg::Exponential => IncreaseMode::Exponential,
    };
    let strategy = match a.strategy {
        StrategyArg::Naive => StrategySpec::Naive { mode },
        StrategyArg::StateDriven => StrategySpec::StateDriven {
            n: a.n,
            v_limit: a.v_limit,
            mode,
        },
        StrategyArg::Confidence => StrategySpec::Confidence { mode },
        StrategyArg::Pinned => StrategySpec::Pinned { rung: a.rung },
    };
    let trace_id = a.trace_id.unwrap_or_else(|| {
        a.trace
            .file_stem()
            .map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned())
    });
    let opts = RunOptions { temperature: None, clock };
    let r = stream::run_adaptive(&graph, &ladder, &strategy, &trace, &trace_id, &opts)?;
    stream::write_report(&r, &a.out)?;
    print!("{}", stream::summary_table(std::slice::from_ref(&r)));
    Ok(())
}

fn report(a: Report) -> CliResult {
    create_dir(&a.out_dir)?;
    let mut reports = Vec::with_capacity(a.reports.len());
    for path in &a.reports {
        let r = stream::read_report(path)?;
        let stem = path
            .file_stem()
            .map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
        let csv = a.out_dir.join(format!("{stem}.csv"));
        fs::write(&csv, stream::timeline_csv(&r.timeline)).map_err(|e| format!("{}: {e}", csv.display()))?;
        let svg = a.out_dir.join(format!("{stem}.svg"));
        fs::write(&svg, stream::plot_svg(&r)).map_err(|e| format!("{}: {e}", svg.display()))?;
        reports.push(r);
    }
    let table = stream::summary_table(&reports);
    let summary = a.out_dir.join("summary.txt");
    fs::write(&summary, &table).map_err(|e| format!("{}: {e}", summary.display()))?;
    print!("{table}");
    Ok(())
}
