//! `sammd`: run two-sample tests on feature files and drive the Monte Carlo
//! experiment harness.
//!
//! Exit codes: 0 ran (the decision is in the report), 2 usage error,
//! 3 data error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sammd_core::io::{ingest, write_samf, Format, RunReport};
use sammd_core::pipeline::{
    run_calibration, run_noniid_suite, run_power_sweep, run_test, select_wild_l, ExperimentReport, Method, NonIidSuite,
    Scenario, SweepAxis, TestSpec, World, WorldConfig,
};
use sammd_core::toymodels::{attack_batch, AttackConfig, AttackKind, NonIidFlavor, ToyClassifier};
use sammd_core::{hsic_dependence_protocol, Error, FeatureMatrix, Featurizer, Sample};

#[derive(Debug, Parser)]
#[command(name = "sammd", version, about = "Semantic-aware MMD two-sample tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test whether two samples come from the same distribution.
    Test(TestArgs),
    /// Run a Monte Carlo experiment and print its report.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Sammd,
    MmdG,
    MmdO,
    MmdOWb,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sammd => Method::Sammd,
            MethodArg::MmdG => Method::MmdG,
            MethodArg::MmdO => Method::MmdO,
            MethodArg::MmdOWb => Method::MmdOWb,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Samf,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Samf => Format::Samf,
            FormatArg::Csv => Format::Csv,
        }
    }
}

/// Settings shared by every command that runs a test.
#[derive(Debug, Args)]
struct TestOptions {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "n-perm", default_value_t = 200)]
    n_perm: usize,
    /// Wild-bootstrap timescale.
    #[arg(long, default_value_t = 0.2)]
    l: f64,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    lambda: f64,
    #[arg(long, default_value_t = 64)]
    minibatch: usize,
}

impl TestOptions {
    fn spec(&self, method: Method) -> TestSpec {
        let mut spec = TestSpec::new(method).with_seed(self.seed);
        spec.alpha = self.alpha;
        spec.bootstrap.n_perm = self.n_perm;
        spec.bootstrap.l = self.l;
        spec.train.learning_rate = self.lr;
        spec.train.max_iters = self.iters;
        spec.train.lambda = self.lambda;
        spec.train.minibatch_size = self.minibatch;
        spec
    }
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Reference sample (SAMF, or CSV by extension).
    #[arg(long)]
    x: PathBuf,
    /// Sample under test.
    #[arg(long)]
    y: PathBuf,
    #[arg(long, value_enum, default_value = "sammd")]
    method: MethodArg,
    /// Semantic features: `raw`, `file:<path>` (rows of X then rows of Y) or
    /// `toy-mlp:<model.json>`.
    #[arg(long, default_value = "raw")]
    features: String,
    /// Input format; inferred from the extension when absent.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Add wall-clock time to the report (breaks byte reproducibility).
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    opts: TestOptions,
}

/// World (natural distribution and classifier) shared by experiments.
#[derive(Debug, Args)]
struct WorldArgs {
    /// Seed of the world; defaults to the experiment seed.
    #[arg(long = "world-seed")]
    world_seed: Option<u64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Also write curve points as CSV (condition, rejection_rate, std_error).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttackArg {
    Fgsm,
    Pgd,
}

impl From<AttackArg> for AttackKind {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::Fgsm => AttackKind::Fgsm,
            AttackArg::Pgd => AttackKind::Pgd,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum H0Arg {
    /// IID `N(0, I)` against itself.
    Iid,
    /// Sequentially dependent `N(0, I)` samples.
    Dependent,
    /// Natural blob data against fresh natural blob data.
    Natural,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Epsilon,
    SetSize,
    MixtureFraction,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FlavorArg {
    A,
    B,
}

impl From<FlavorArg> for NonIidFlavor {
    fn from(f: FlavorArg) -> Self {
        match f {
            FlavorArg::A => NonIidFlavor::A,
            FlavorArg::B => NonIidFlavor::B,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenKind {
    Gaussian,
    Dependent,
    Adversarial,
    NoniidA,
    NoniidB,
    Classifier,
}

#[derive(Debug, Subcommand)]
enum Experiment {
    /// Type-I error on an H0 scenario.
    Calibrate {
        #[arg(long, value_enum, default_value = "sammd")]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "iid")]
        scenario: H0Arg,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Dependence timescale of the dependent scenario.
        #[arg(long = "data-l", default_value_t = 1.0)]
        data_l: f64,
        /// Choose the wild-bootstrap timescale from these candidates by
        /// type-I error instead of using `--l`.
        #[arg(long = "select-l", value_delimiter = ',')]
        select_l: Vec<f64>,
        #[command(flatten)]
        world: WorldArgs,
        #[command(flatten)]
        opts: TestOptions,
    },
    /// Rejection rate along one axis of the adversarial scenario.
    Power {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value = "sammd")]
        method: MethodArg,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long, value_enum, default_value = "pgd")]
        attack: AttackArg,
        #[arg(long = "natural-fraction", default_value_t = 0.0)]
        natural_fraction: f64,
        #[command(flatten)]
        world: WorldArgs,
        #[command(flatten)]
        opts: TestOptions,
    },
    /// Methods side by side on dependent H0 data and non-IID adversarial data.
    Noniid {
        #[arg(long, value_enum, default_value = "b")]
        flavor: FlavorArg,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "sammd,mmd-g,mmd-o,mmd-o-wb")]
        methods: Vec<MethodArg>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long = "data-l", default_value_t = 1.0)]
        data_l: f64,
        #[command(flatten)]
        world: WorldArgs,
        #[command(flatten)]
        opts: TestOptions,
    },
    /// Mean HSIC between paired random subsets of each data file.
    Hsic {
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long = "subset-size", default_value_t = 50)]
        subset_size: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attack a data file with a toy classifier and write the result.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pgd")]
        attack: AttackArg,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
    },
    /// Write generated samples (or the world classifier) to disk.
    Gen {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long = "data-l", default_value_t = 1.0)]
        data_l: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for S_X, or for the classifier JSON.
        #[arg(long = "out-x")]
        out_x: PathBuf,
        #[arg(long = "out-y")]
        out_y: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn load(path: &Path, format: Option<FormatArg>) -> CliResult<FeatureMatrix> {
    let format = format.map(Format::from).unwrap_or_else(|| Format::from_path(path));
    ingest(path, format).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<ToyClassifier> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn samples(x: FeatureMatrix, y: FeatureMatrix, features: &str, method: Method) -> CliResult<(Sample, Sample)> {
    if method != Method::Sammd {
        return Ok((Sample::raw(x), Sample::raw(y)));
    }
    if features == "raw" {
        return Ok((Sample::with_features(x.clone(), x)?, Sample::with_features(y.clone(), y)?));
    }
    if let Some(path) = features.strip_prefix("file:") {
        let f = load(Path::new(path), None)?;
        if f.rows() != x.rows() + y.rows() {
            return Err(CliError::Data(format!(
                "feature file has {} rows, expected {} (rows of X then Y)",
                f.rows(),
                x.rows() + y.rows()
            )));
        }
        let fx = f.select(&(0..x.rows()).collect::<Vec<_>>())?;
        let fy = f.select(&(x.rows()..f.rows()).collect::<Vec<_>>())?;
        return Ok((Sample::with_features(x, fx)?, Sample::with_features(y, fy)?));
    }
    if let Some(path) = features.strip_prefix("toy-mlp:") {
        let model = load_model(Path::new(path))?;
        return Ok((model.sample(&x)?, model.sample(&y)?));
    }
    Err(CliError::Usage(format!(
        "--features must be raw, file:<path> or toy-mlp:<path>, got {features:?}"
    )))
}

fn cmd_test(args: &TestArgs) -> CliResult<()> {
    let start = Instant::now();
    let method = Method::from(args.method);
    let spec = args.opts.spec(method);
    spec.validate().map_err(usage)?;
    let x = load(&args.x, args.format)?;
    let y = load(&args.y, args.format)?;
    let (x_rows, y_rows) = (x.rows(), y.rows());
    let (sx, sy) = samples(x, y, &args.features, method)?;
    let result = run_test(&sx, &sy, &spec)?;
    let mut report = RunReport::new(&result, &spec, &args.features, x_rows, y_rows);
    if args.timing {
        report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }
    print_json(&report)
}

fn world(args: &WorldArgs, seed: u64) -> CliResult<World> {
    Ok(World::build(WorldConfig::default(), args.world_seed.unwrap_or(seed))?)
}

fn finish(report: &ExperimentReport, csv: Option<&PathBuf>) -> CliResult<()> {
    if let Some(path) = csv {
        std::fs::write(path, report.to_csv()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    print_json(report)
}

fn check_trials(trials: usize) -> CliResult<()> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    Ok(())
}

fn cmd_experiment(which: &Experiment) -> CliResult<()> {
    match which {
        Experiment::Calibrate {
            method,
            scenario,
            n,
            data_l,
            select_l,
            world: w,
            opts,
        } => {
            let spec = opts.spec((*method).into());
            spec.validate().map_err(usage)?;
            check_trials(w.trials)?;
            let world = world(w, opts.seed)?;
            let scenario = match scenario {
                H0Arg::Iid => Scenario::GaussianH0 { n: *n },
                H0Arg::Dependent => Scenario::DependentH0 { n: *n, l: *data_l },
                H0Arg::Natural => Scenario::Adversarial {
                    n: *n,
                    epsilon: 0.0,
                    attack: AttackKind::Pgd,
                    natural_fraction: 1.0,
                },
            };
            let report = if select_l.is_empty() {
                run_calibration(&world, &scenario, &spec, w.trials, opts.seed)?
            } else {
                select_wild_l(&world, &scenario, &spec, select_l, w.trials, opts.seed)?.1
            };
            finish(&report, w.csv.as_ref())
        }
        Experiment::Power {
            axis,
            values,
            method,
            n,
            epsilon,
            attack,
            natural_fraction,
            world: w,
            opts,
        } => {
            let spec = opts.spec((*method).into());
            spec.validate().map_err(usage)?;
            check_trials(w.trials)?;
            let axis = match axis {
                AxisArg::Epsilon => SweepAxis::Epsilon,
                AxisArg::SetSize => SweepAxis::SetSize,
                AxisArg::MixtureFraction => SweepAxis::MixtureFraction,
            };
            let base = Scenario::Adversarial {
                n: *n,
                epsilon: *epsilon,
                attack: (*attack).into(),
                natural_fraction: *natural_fraction,
            };
            for &v in values {
                axis.apply(&base, v).map_err(usage)?;
            }
            let world = world(w, opts.seed)?;
            let report = run_power_sweep(&world, axis, values, &base, &spec, w.trials, opts.seed)?;
            finish(&report, w.csv.as_ref())
        }
        Experiment::Noniid {
            flavor,
            methods,
            n,
            epsilon,
            data_l,
            world: w,
            opts,
        } => {
            let specs: Vec<TestSpec> = methods.iter().map(|m| opts.spec((*m).into())).collect();
            for s in &specs {
                s.validate().map_err(usage)?;
            }
            check_trials(w.trials)?;
            let world = world(w, opts.seed)?;
            let mut suite = NonIidSuite::new((*flavor).into());
            suite.n = *n;
            suite.epsilon = *epsilon;
            suite.dependent_l = *data_l;
            let report = run_noniid_suite(&world, &suite, &specs, w.trials, opts.seed)?;
            finish(&report, w.csv.as_ref())
        }
        Experiment::Hsic {
            data,
            subset_size,
            repeats,
            seed,
        } => {
            #[derive(Serialize)]
            struct Row {
                path: String,
                rows: usize,
                hsic: f64,
            }
            #[derive(Serialize)]
            struct Report {
                experiment: &'static str,
                seed: u64,
                subset_size: usize,
                repeats: usize,
                rows: Vec<Row>,
            }
            let mut rows = Vec::new();
            for path in data {
                let m = load(path, None)?;
                let hsic = hsic_dependence_protocol(&m, *subset_size, *repeats, *seed)?;
                rows.push(Row {
                    path: path.display().to_string(),
                    rows: m.rows(),
                    hsic,
                });
            }
            print_json(&Report {
                experiment: "hsic",
                seed: *seed,
                subset_size: *subset_size,
                repeats: *repeats,
                rows,
            })
        }
        Experiment::Attack {
            model,
            data,
            out,
            attack,
            epsilon,
        } => {
            let kind = AttackKind::from(*attack);
            let cfg = match kind {
                AttackKind::Fgsm => AttackConfig::fgsm(*epsilon),
                AttackKind::Pgd => AttackConfig::pgd(*epsilon),
            };
            cfg.validate().map_err(usage)?;
            let model = load_model(model)?;
            let x = load(data, None)?;
            let labels = x.iter_rows().map(|r| model.predict(r)).collect::<Result<Vec<_>, _>>()?;
            let adv = attack_batch(&model, &x, &labels, kind, &cfg)?;
            let fooled = adv
                .iter_rows()
                .zip(&labels)
                .map(|(r, &l)| model.predict(r).map(|p| p != l))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .filter(|f| *f)
                .count();
            write_samf(out, &adv)?;
            #[derive(Serialize)]
            struct Report {
                experiment: &'static str,
                rows: usize,
                epsilon: f64,
                fooling_rate: f64,
                out: String,
            }
            print_json(&Report {
                experiment: "attack",
                rows: adv.rows(),
                epsilon: *epsilon,
                fooling_rate: fooled as f64 / adv.rows() as f64,
                out: out.display().to_string(),
            })
        }
        Experiment::Gen {
            kind,
            n,
            epsilon,
            data_l,
            seed,
            out_x,
            out_y,
        } => {
            let world = World::build(WorldConfig::default(), *seed)?;
            if let GenKind::Classifier = kind {
                let text = serde_json::to_string_pretty(&world.classifier).map_err(|e| CliError::Numerical(e.to_string()))?;
                std::fs::write(out_x, text).map_err(|e| CliError::Data(e.to_string()))?;
                return print_json(&serde_json::json!({ "experiment": "gen", "kind": "classifier", "out": out_x }));
            }
            let out_y = out_y
                .as_ref()
                .ok_or_else(|| CliError::Usage("--out-y is required for sample generators".into()))?;
            let scenario = match kind {
                GenKind::Gaussian => Scenario::GaussianH0 { n: *n },
                GenKind::Dependent => Scenario::DependentH0 { n: *n, l: *data_l },
                GenKind::Adversarial => Scenario::Adversarial {
                    n: *n,
                    epsilon: *epsilon,
                    attack: AttackKind::Pgd,
                    natural_fraction: 0.0,
                },
                GenKind::NoniidA => Scenario::NonIid {
                    n: *n,
                    epsilon: *epsilon,
                    flavor: NonIidFlavor::A,
                },
                GenKind::NoniidB => Scenario::NonIid {
                    n: *n,
                    epsilon: *epsilon,
                    flavor: NonIidFlavor::B,
                },
                GenKind::Classifier => unreachable!(),
            };
            let (x, y) = scenario.draw(&world, *seed)?;
            write_samf(out_x, &x)?;
            write_samf(out_y, &y)?;
            print_json(&serde_json::json!({
                "experiment": "gen",
                "scenario": scenario,
                "rows": n,
                "out_x": out_x,
                "out_y": out_y,
            }))
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SAMMD_THREADS") else {
        return Ok(());
    };
    let threads: usize = v
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Usage(format!("SAMMD_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(if code == 0 { 0 } else { 2 });
        }
    };
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Experiment { which } => cmd_experiment(which),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = match &e {
                CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
