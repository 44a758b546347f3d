//! `segqa`: benchmark generation, detector training, commissioning, per-case
//! prediction, drift monitoring and evaluation from the command line.
//!
//! Exit status: 0 on success, 2 on invalid input or configuration, 3 when a
//! computation fails numerically (diverged training, singular fit).

mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::Settings;
use segqa_core::features::{read_feature_csv, write_feature_csv, FeatureRow};
use segqa_core::grid::{read_labels, read_volume, write_labels, write_volume, GridError};
use segqa_core::perturb::{self, Axis, NoiseLevel, PerturbError};
use segqa_core::phantom::{
    generate_benchmark, profile_bank, read_manifest, write_benchmark, PhantomError, SegmenterProfile,
    Split,
};
use segqa_core::qa::{self, QaBundle, QaError};
use segqa_core::regress::{self, DesignMatrix, FittedRegressor, Method, RegressError};
use segqa_core::encoders::{train_dae, train_vae, EncoderError};
use segqa_core::features::FeatureError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Qa(#[from] QaError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Qa(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

macro_rules! via_qa {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Qa(e.into())
            }
        }
    )*};
}
via_qa!(PhantomError, EncoderError, FeatureError, RegressError, std::io::Error);

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Qa(PhantomError::from(e).into())
    }
}

impl From<PerturbError> for CliError {
    fn from(e: PerturbError) -> Self {
        CliError::Qa(PhantomError::from(e).into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "segqa", version, about = "Quality assurance for black-box segmentation models")]
struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic benchmark generation.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Apply one domain-shift transform to a volume.
    Perturb(PerturbArgs),
    /// Train an encoder on a benchmark's QA_TRAIN split.
    Train {
        #[arg(value_enum)]
        model: EncoderKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one benchmark case with a simulated segmenter.
    Segment {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long)]
        case: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the QA features and true Dice of one split as CSV.
    Features {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "qa-test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit or apply a feature regressor.
    #[command(subcommand)]
    Regress(RegressCommand),
    /// Benchmark segmenter profiles on every domain.
    #[command(subcommand)]
    Benchmark(BenchmarkCommand),
    /// Train detectors and fit one bundle per profile.
    Commission {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Directory receiving `<profile>.sqab` and `<profile>.report.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the Dice of one segmentation without ground truth.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        segmentation: PathBuf,
        #[arg(long, default_value = "case")]
        case_id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the drift monitor over a stream of predicted Dice scores.
    Monitor {
        #[arg(long)]
        bundle: PathBuf,
        /// CSV with a `y_pred` column, in arrival order.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a directory of bundles on the benchmark's QA_TEST split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PhantomCommand {
    Generate {
        /// Case-count multiplier; defaults to the config's.
        #[arg(long)]
        scale: Option<f64>,
        /// Grid edge in voxels, a multiple of 16.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum RegressCommand {
    Fit {
        #[arg(long, default_value = "bagging")]
        method: String,
        /// Feature CSV with a `dsc_true` column.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// CSV with `case_id,y_pred`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchmarkCommand {
    Run {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        profile: ProfileArgs,
        /// JSON array with one report per profile.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ProfileArgs {
    /// Profile id from the 19-profile bank (e.g. atlas-00) or a JSON profile file.
    #[arg(long, conflicts_with = "bank")]
    profile: Option<String>,
    /// The first N profiles of the bank.
    #[arg(long)]
    bank: Option<usize>,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long, value_enum)]
    op: PerturbOp,
    /// Poisson noise level.
    #[arg(long)]
    n: Option<f64>,
    /// Contrast offset added inside the mask.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,
    /// Slice-thickness factor.
    #[arg(long)]
    factor: Option<f64>,
    /// Peak deformation in voxels.
    #[arg(long)]
    magnitude: Option<f64>,
    /// Label map: the mask for `contrast`, transformed alongside the volume
    /// for `flip`, `degrade` and `deform`.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    labels_out: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PerturbOp {
    Poisson,
    Contrast,
    Flip,
    Degrade,
    Artifact,
    Deform,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderKind {
    Dae,
    Vae,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    SegTrain,
    QaTrain,
    QaTest,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::SegTrain => Split::SegTrain,
            SplitArg::QaTrain => Split::QaTrain,
            SplitArg::QaTest => Split::QaTest,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Phantom(PhantomCommand::Generate { scale, size, out }) => {
            let mut config = settings.benchmark.clone();
            if let Some(s) = scale {
                config.scale = s;
            }
            if let Some(s) = size {
                config.grid.size = s;
            }
            let dataset = generate_benchmark(&config)?;
            let manifest = write_benchmark(&dataset, &out)?;
            println!("wrote {} cases to {}", manifest.cases.len(), out.display());
        }
        Command::Perturb(args) => perturb_file(&args, settings.seed)?,
        Command::Train { model, data, out } => {
            let dataset = read_manifest(&data)?;
            let train: Vec<_> = dataset.iter_split(Split::QaTrain).collect();
            let bytes = match model {
                EncoderKind::Dae => {
                    let volumes: Vec<_> = train.iter().map(|c| &c.volume).collect();
                    train_dae(&volumes, &settings.qa.dae)?.to_bytes()
                }
                EncoderKind::Vae => {
                    let truths: Vec<_> = train.iter().map(|c| &c.truth).collect();
                    train_vae(&truths, &settings.qa.vae)?.to_bytes()
                }
            };
            std::fs::write(&out, bytes)?;
        }
        Command::Segment { data, profile, case, out } => {
            let dataset = read_manifest(&data)?;
            let profile = single(select_profiles(&profile)?)?;
            let record = dataset
                .cases
                .iter()
                .find(|c| c.id == case)
                .ok_or_else(|| CliError::Usage(format!("no case {case:?} in {}", data.display())))?;
            let segmenter = qa::fit_segmenter(&profile, &dataset)?;
            write_labels(&segmenter.segment(&record.volume, &record.truth)?, &out)?;
        }
        Command::Features { data, bundle, split, out } => {
            let dataset = read_manifest(&data)?;
            let bundle = QaBundle::load(&bundle)?;
            let rows = qa::feature_table(&bundle, &dataset, split.into())?;
            write_feature_csv(&rows, create(&out)?)?;
        }
        Command::Regress(RegressCommand::Fit { method, features, out }) => {
            let method: Method = method.parse()?;
            let rows = read_rows(&features)?;
            let model = regress::fit(method, &design(&rows)?, &settings.qa.regress)?;
            std::fs::write(&out, model.to_bytes())?;
        }
        Command::Regress(RegressCommand::Predict { model, features, out }) => {
            let model = FittedRegressor::from_bytes(&std::fs::read(&model)?)?;
            let rows = read_rows(&features)?;
            let mut w = csv::Writer::from_writer(create(&out)?);
            w.write_record(["case_id", "y_pred"]).map_err(csv_error)?;
            for r in &rows {
                let y = model.predict(&r.features().to_array())?;
                w.write_record([r.case_id.clone(), y.to_string()]).map_err(csv_error)?;
            }
            w.flush()?;
        }
        Command::Benchmark(BenchmarkCommand::Run { data, profile, out }) => {
            let dataset = read_manifest(&data)?;
            let reports = select_profiles(&profile)?
                .iter()
                .map(|p| qa::run_benchmark(p, &dataset))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            write_json(&reports, &out)?;
        }
        Command::Commission { data, profile, out } => {
            let dataset = read_manifest(&data)?;
            let profiles = select_profiles(&profile)?;
            let (_, bundles) = qa::commission_bank(&profiles, &dataset, &settings.qa)?;
            std::fs::create_dir_all(&out)?;
            for b in &bundles {
                b.save(out.join(format!("{}.sqab", b.profile.id)))?;
                std::fs::write(out.join(format!("{}.report.json", b.profile.id)), b.report.to_json())?;
                println!(
                    "{}: QA_TEST MAE {:.4}, accuracy {:.3}",
                    b.profile.id, b.report.test_mae, b.report.test_accuracy
                );
            }
        }
        Command::Predict {
            bundle,
            volume,
            segmentation,
            case_id,
            out,
        } => {
            let bundle = QaBundle::load(&bundle)?;
            let volume = read_volume(&volume)?;
            let s_pred = read_labels(&segmentation)?;
            let prediction = qa::predict_case(&bundle, &case_id, 0, &volume, &s_pred)?;
            emit_json(&prediction, out.as_deref())?;
        }
        Command::Monitor { bundle, predictions, out } => {
            let bundle = QaBundle::load(&bundle)?;
            let stream = read_predictions(&predictions)?;
            let reports = qa::monitor(&bundle, &stream, &settings.monitor)?;
            if let Some(first) = reports.iter().find(|r| r.alarm) {
                eprintln!(
                    "drift alarm at prediction {}: window mean {:.3} vs baseline {:.3} (p {:.2e})",
                    first.index, first.window_mean, first.baseline_mean, first.test.p_value
                );
            }
            emit_json(&reports, out.as_deref())?;
        }
        Command::Evaluate { data, bundles, out } => {
            let dataset = read_manifest(&data)?;
            let bundles = load_bundles(&bundles)?;
            let summary = qa::evaluate_framework(&bundles, &dataset, &settings.qa)?;
            std::fs::write(&out, summary.to_json())?;
            println!(
                "{} profiles: MAE {:.4} ± {:.4}, accuracy {:.3}",
                summary.profiles.len(),
                summary.mae_mean,
                summary.mae_std,
                summary.accuracy_mean
            );
        }
    }
    Ok(())
}

fn perturb_file(args: &PerturbArgs, seed: u64) -> Result<()> {
    let volume = read_volume(&args.input)?;
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| CliError::Usage(format!("--op needs --{flag}")));
    let labels = || -> Result<_> {
        let path = args.labels.as_ref().ok_or_else(|| CliError::Usage("--op needs --labels".into()))?;
        Ok(read_labels(path)?)
    };
    let (out, out_labels) = match args.op {
        PerturbOp::Poisson => (perturb::add_poisson_noise(&volume, NoiseLevel::new(need(args.n, "n")?)?, seed)?, None),
        PerturbOp::Contrast => {
            let mask = labels()?.foreground_mask();
            (perturb::contrast_enhance(&volume, &mask, need(args.delta, "delta")?)?, None)
        }
        PerturbOp::Flip => {
            let axis = match args.axis.ok_or_else(|| CliError::Usage("--op flip needs --axis".into()))? {
                AxisArg::X => Axis::X,
                AxisArg::Y => Axis::Y,
                AxisArg::Z => Axis::Z,
            };
            let (v, l) = perturb::flip_axis(&volume, &labels()?, axis)?;
            (v, Some(l))
        }
        PerturbOp::Degrade => {
            let (v, _) = perturb::resample_degrade(&volume, &labels()?, need(args.factor, "factor")?)?;
            let l = perturb::resample_degrade_labels(&labels()?, need(args.factor, "factor")?)?;
            (v, Some(l))
        }
        PerturbOp::Artifact => (perturb::insert_artifact(&volume, seed)?, None),
        PerturbOp::Deform => {
            let (v, l) = perturb::deform(&volume, &labels()?, need(args.magnitude, "magnitude")?, seed)?;
            (v, Some(l))
        }
    };
    write_volume(&out, &args.output)?;
    if let (Some(l), Some(path)) = (out_labels, &args.labels_out) {
        write_labels(&l, path)?;
    }
    Ok(())
}

fn select_profiles(args: &ProfileArgs) -> Result<Vec<SegmenterProfile>> {
    match (&args.profile, args.bank) {
        (_, Some(n)) if n > 0 => Ok(profile_bank(n)),
        (Some(id), None) => {
            if let Some(p) = profile_bank(19).into_iter().find(|p| &p.id == id) {
                return Ok(vec![p]);
            }
            let path = Path::new(id);
            if path.is_file() {
                let text = std::fs::read_to_string(path)?;
                let p = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("profile {id}: {e}")))?;
                return Ok(vec![p]);
            }
            Err(CliError::Usage(format!("unknown profile {id:?}")))
        }
        _ => Err(CliError::Usage("give --profile ID or --bank N (N >= 1)".into())),
    }
}

fn single(mut profiles: Vec<SegmenterProfile>) -> Result<SegmenterProfile> {
    if profiles.len() != 1 {
        return Err(CliError::Usage("this command takes a single --profile".into()));
    }
    Ok(profiles.remove(0))
}

fn load_bundles(dir: &Path) -> Result<Vec<QaBundle>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sqab"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(QaError::NoBundles.into());
    }
    paths.iter().map(|p| Ok(QaBundle::load(p)?)).collect()
}

fn read_rows(path: &Path) -> Result<Vec<FeatureRow>> {
    Ok(read_feature_csv(std::fs::File::open(path)?)?)
}

fn design(rows: &[FeatureRow]) -> Result<DesignMatrix> {
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for r in rows {
        let t = r
            .dsc_true
            .ok_or_else(|| CliError::Usage(format!("case {} has no dsc_true", r.case_id)))?;
        x.push(r.features().to_array().to_vec());
        y.push(t);
    }
    Ok(DesignMatrix::new(x, y)?)
}

fn read_predictions(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let column = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .position(|h| h == "y_pred")
        .ok_or_else(|| CliError::Usage(format!("{} has no y_pred column", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let field = record.get(column).unwrap_or_default();
        let y: f64 = field
            .parse()
            .map_err(|_| CliError::Usage(format!("bad y_pred {field:?} in {}", path.display())))?;
        out.push(y);
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Usage(format!("csv: {e}"))
}

fn create(path: &Path) -> Result<std::fs::File> {
    Ok(std::fs::File::create(path)?)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn emit_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_json(value, p),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}
