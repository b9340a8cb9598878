//! The `otb` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags or parameter
//! values), 2 for data errors (unreadable, malformed or inconsistent files).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::clustering::ClusteringConfig;
use crate::dumps::{self, read_dump, write_dump, ActivationRecord, DumpMeta};
use crate::evaluation::synthetic::{self, SyntheticConfig};
use crate::evaluation::{
    compare_abstractions, gamma_sweep, layer_combination_study, parse_gamma_grid, run_experiment,
    train_experiment_monitor, write_gamma_sweep, write_outcomes, Detector, ExperimentConfig, OutcomeRow,
};
use crate::geometry::{check_gamma, DomainKind};
use crate::layer::{parse_layer_list, LayerIndex};
use crate::monitor::{train_monitor, Monitor};
use crate::network::NetworkModel;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "otb", version, about = "Abstraction-based novelty monitors for neural networks")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "OTB_THREADS")]
    pub threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a network over labeled inputs and write an activation dump.
    Infer(InferArgs),
    /// Build a monitor from an activation dump.
    Train(TrainArgs),
    /// Query a monitor on every record of a dump.
    Run(RunArgs),
    /// Train on known classes and score a test dump.
    Evaluate(EvaluateArgs),
    /// Outcome rates for a grid of box enlargement factors.
    SweepGamma(SweepArgs),
    /// Outcome counts for several combinations of watched layers.
    Layers(LayersArgs),
    /// Outcome counts per abstraction domain.
    Compare(CompareArgs),
    /// Write a seeded Gaussian-blob train/test dump pair.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// CSV with the label first, then the input features; header optional.
    #[arg(long)]
    pub inputs: PathBuf,
    /// Comma-separated layer indices; negative values count from the output.
    #[arg(long, allow_hyphen_values = true, default_value = "-2,-1")]
    pub layers: String,
    /// Number of classes recorded in the dump (default: network output width).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value = "")]
    pub source: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ClusterArgs {
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub max_k: usize,
}

impl ClusterArgs {
    fn config(&self) -> Result<ClusteringConfig> {
        let c = ClusteringConfig {
            tau: self.tau,
            seed: self.seed,
            max_k: self.max_k,
            ..Default::default()
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long, allow_hyphen_values = true, default_value = "-2")]
    pub layers: String,
    #[arg(long, default_value = "box")]
    pub domain: DomainKind,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    /// Enlargement factor stored in the monitor.
    #[arg(long, default_value_t = 0.0)]
    pub enlarge: f64,
    /// Number of known classes (default: from the dump).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub monitor: PathBuf,
    #[arg(long)]
    pub dump: PathBuf,
    /// Override the enlargement factor stored in the monitor.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Number of known classes; classes `0..k` are known.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value = "box")]
    pub domain: DomainKind,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Also train on known-class test records.
    #[arg(long)]
    pub include_test_training: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DetectorKind {
    Monitor,
    Threshold,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, allow_hyphen_values = true, default_value = "-2")]
    pub layers: String,
    #[arg(long, value_enum, default_value = "monitor")]
    pub detector: DetectorKind,
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// Rescale alpha into [1/k, 1].
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, allow_hyphen_values = true, default_value = "-2")]
    pub layers: String,
    /// Inclusive grid as start:stop:step.
    #[arg(long, default_value = "0:1:0.05")]
    pub gammas: String,
}

#[derive(Debug, Args)]
pub struct LayersArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Layer subsets separated by `|`, e.g. `-2|-3|-2,-3`.
    #[arg(long, allow_hyphen_values = true)]
    pub layer_subsets: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, allow_hyphen_values = true, default_value = "-2")]
    pub layers: String,
    #[arg(long, value_delimiter = ',', default_value = "box,octagon,ball")]
    pub domains: Vec<DomainKind>,
    /// Cluster separately for every domain instead of sharing clusters.
    #[arg(long)]
    pub recluster: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 20.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 500)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_train: PathBuf,
    #[arg(long)]
    pub out_test: PathBuf,
}

/// Maps an error to the exit code it should produce.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::NegativeGamma(_) | Error::InvalidLayer { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.threads {
        Some(0) => Err(Error::InvalidConfig("--threads must be positive".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(Error::InvalidConfig(format!("cannot start thread pool: {e}"))),
        },
        None => dispatch(&cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Infer(a) => cmd_infer(a),
        Command::Train(a) => cmd_train(a),
        Command::Run(a) => cmd_run(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::SweepGamma(a) => cmd_sweep_gamma(a),
        Command::Layers(a) => cmd_layers(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Reads `label,x0,x1,...` rows. A first row whose label is not an integer
/// is taken as a header.
pub fn read_labeled_inputs<R: Read>(reader: R, origin: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i as u64 + 1, |p| p.line()) as usize;
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let Some(label) = row.get(0) else { continue };
        let label = match label.parse::<usize>() {
            Ok(l) => l,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(parse_err(format!("invalid label {label:?}"))),
        };
        let features = row
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(format!("invalid feature {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push((label, features));
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn layers_arg(s: &str) -> Result<Vec<LayerIndex>> {
    parse_layer_list(s).map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let layers = layers_arg(&a.layers)?;
    let model = NetworkModel::load(&a.network)?;
    for l in &layers {
        l.resolve(model.layers.len())?;
    }
    let inputs = read_labeled_inputs(open(&a.inputs)?, &a.inputs)?;
    for x in &inputs {
        Error::check_dim(model.input_dim, x.1.len())?;
    }
    let n_classes = a.classes.unwrap_or_else(|| model.output_dim());
    let meta = dumps::meta_for_network(&model, &layers, n_classes, a.source.clone())?;
    let records = dumps::dump_from_network(&model, &inputs, &layers)?;
    for r in &records {
        meta.validate_record(r)?;
    }
    info!("{} records", records.len());
    write_dump(&a.out, &meta, &records)
}

fn check_meta_layers(meta: &DumpMeta, layers: &[LayerIndex]) -> Result<()> {
    match layers.iter().find(|l| !meta.layer_dims.contains_key(l)) {
        Some(l) => Err(Error::MissingLayer(*l)),
        None => Ok(()),
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let layers = layers_arg(&a.layers)?;
    let config = a.cluster.config()?;
    check_gamma(a.enlarge)?;
    if a.classes == Some(0) {
        return Err(Error::InvalidConfig("--classes must be positive".into()));
    }
    let (meta, records) = read_dump(&a.dump)?;
    check_meta_layers(&meta, &layers)?;
    let n_classes = a.classes.unwrap_or(meta.n_classes);
    let monitor = train_monitor(&records, &layers, n_classes, a.domain, &config)?.enlarge(a.enlarge)?;
    for lm in monitor.layers() {
        let sizes: Vec<usize> = lm.classes.values().map(Vec::len).collect();
        info!("layer {}: abstractions per class {sizes:?}", lm.layer);
    }
    monitor.save(&a.out)
}

#[derive(serde::Serialize)]
struct RunRow {
    id: u64,
    truth: usize,
    pred: usize,
    verdict: &'static str,
    rejecting_layers: String,
    min_gamma: Option<String>,
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    if let Some(g) = a.gamma {
        check_gamma(g)?;
    }
    let mut monitor = Monitor::load(&a.monitor)?;
    if let Some(g) = a.gamma {
        monitor = monitor.enlarge(g)?;
    }
    let (meta, records) = read_dump(&a.dump)?;
    check_meta_layers(&meta, &monitor.layer_keys())?;
    let boxes = monitor.layers().iter().all(|l| l.domain == DomainKind::Box);
    let rows = run_rows(&monitor, &records, boxes)?;
    let rejects = rows.iter().filter(|r| r.verdict == "reject").count();
    info!("{rejects} of {} records rejected", rows.len());
    let file = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))
}

fn run_rows(monitor: &Monitor, records: &[ActivationRecord], boxes: bool) -> Result<Vec<RunRow>> {
    use rayon::prelude::*;
    records
        .par_iter()
        .map(|r| {
            let v = monitor.verdict_record(r)?;
            let rejecting: Vec<LayerIndex> = v.layers.iter().filter(|l| !l.contained).map(|l| l.layer).collect();
            let min_gamma = if boxes {
                Some(monitor.min_gamma_to_accept(r.pred, &r.layers)?.to_string())
            } else {
                None
            };
            Ok(RunRow {
                id: r.id,
                truth: r.truth,
                pred: r.pred,
                verdict: v.as_str(),
                rejecting_layers: crate::evaluation::format_layers(&rejecting),
                min_gamma,
            })
        })
        .collect()
}

struct Loaded {
    n_total: usize,
    train: Vec<ActivationRecord>,
    test: Vec<ActivationRecord>,
}

impl ExperimentArgs {
    fn config(&self, layers: Vec<LayerIndex>, detector: Detector) -> Result<ExperimentConfig> {
        let c = ExperimentConfig {
            k_known: self.k,
            n_total: usize::MAX,
            layers,
            domain: self.domain,
            clustering: self.cluster.config()?,
            gamma: self.gamma,
            include_test_training: self.include_test_training,
            detector,
        };
        c.validate()?;
        Ok(c)
    }

    fn load(&self, config: &mut ExperimentConfig) -> Result<Loaded> {
        let (train_meta, train) = read_dump(&self.train)?;
        let (test_meta, test) = read_dump(&self.test)?;
        if train_meta.layer_dims != test_meta.layer_dims {
            return Err(Error::Schema("train and test dumps declare different layers".into()));
        }
        let n_total = test_meta.n_classes.max(train_meta.n_classes);
        config.n_total = n_total;
        if config.k_known >= n_total {
            return Err(Error::InvalidConfig(format!(
                "--k must be below the {n_total} classes of the test dump"
            )));
        }
        Ok(Loaded { n_total, train, test })
    }
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let detector = match a.detector {
        DetectorKind::Monitor => Detector::Monitor,
        DetectorKind::Threshold => Detector::Threshold {
            alpha: a.alpha,
            normalize: a.normalize,
        },
    };
    let layers = match detector {
        Detector::Monitor => layers_arg(&a.layers)?,
        Detector::Threshold { .. } => vec![LayerIndex::OUTPUT],
    };
    let mut config = a.exp.config(layers, detector)?;
    let data = a.exp.load(&mut config)?;
    let result = run_experiment(&data.train, &data.test, &config)?;
    info!("{} test records over {} classes", data.test.len(), data.n_total);
    write_outcomes(&a.exp.out, &[OutcomeRow::new(&config, &result.counts)])
}

fn cmd_sweep_gamma(a: &SweepArgs) -> Result<()> {
    if a.exp.domain != DomainKind::Box {
        return Err(Error::InvalidConfig("gamma sweeps need the box domain".into()));
    }
    let grid = parse_gamma_grid(&a.gammas)?;
    let mut config = a.exp.config(layers_arg(&a.layers)?, Detector::Monitor)?;
    let data = a.exp.load(&mut config)?;
    let monitor = train_experiment_monitor(&data.train, &data.test, &config)?;
    let rows = gamma_sweep(&monitor, &data.test, config.k_known, &grid)?;
    write_gamma_sweep(&a.exp.out, &rows)
}

/// Parses `-2|-3|-2,-3` into layer subsets.
pub fn parse_layer_subsets(s: &str) -> Result<Vec<Vec<LayerIndex>>> {
    s.split('|').map(layers_arg).collect()
}

fn cmd_layers(a: &LayersArgs) -> Result<()> {
    let subsets = parse_layer_subsets(&a.layer_subsets)?;
    let mut config = a.exp.config(subsets[0].clone(), Detector::Monitor)?;
    let data = a.exp.load(&mut config)?;
    let results = layer_combination_study(&data.train, &data.test, &config, &subsets)?;
    let rows: Vec<OutcomeRow> = results
        .iter()
        .map(|(layers, r)| {
            let c = ExperimentConfig {
                layers: layers.clone(),
                ..config.clone()
            };
            OutcomeRow::new(&c, &r.counts)
        })
        .collect();
    write_outcomes(&a.exp.out, &rows)
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    if a.domains.is_empty() {
        return Err(Error::InvalidConfig("--domains is empty".into()));
    }
    let mut config = a.exp.config(layers_arg(&a.layers)?, Detector::Monitor)?;
    let data = a.exp.load(&mut config)?;
    let results = compare_abstractions(&data.train, &data.test, &config, &a.domains, a.recluster)?;
    let rows: Vec<OutcomeRow> = results
        .iter()
        .map(|(domain, r)| {
            let c = ExperimentConfig {
                domain: *domain,
                ..config.clone()
            };
            OutcomeRow::new(&c, &r.counts)
        })
        .collect();
    write_outcomes(&a.exp.out, &rows)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let data = synthetic::generate(&SyntheticConfig {
        n_classes: a.classes,
        k_known: a.k,
        dim: a.dim,
        separation: a.separation,
        spread: a.spread,
        stretch: 1.0,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        seed: a.seed,
    })?;
    let meta = data.meta();
    write_dump(&a.out_train, &meta, &data.train)?;
    write_dump(&a.out_test, &meta, &data.test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_inputs_with_and_without_header() {
        let p = Path::new("in.csv");
        let with = read_labeled_inputs("label,x0,x1\n0,0.5,0.5\n1,0.7,0.2\n".as_bytes(), p).unwrap();
        let without = read_labeled_inputs("0,0.5,0.5\n1,0.7,0.2\n".as_bytes(), p).unwrap();
        assert_eq!(with, without);
        assert_eq!(with, vec![(0, vec![0.5, 0.5]), (1, vec![0.7, 0.2])]);
        assert!(read_labeled_inputs("".as_bytes(), p).unwrap().is_empty());
        assert!(matches!(
            read_labeled_inputs("0,1\nx,2\n".as_bytes(), p),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn layer_subsets() {
        assert_eq!(
            parse_layer_subsets("-2|-3|-2,-3").unwrap(),
            vec![vec![LayerIndex(-2)], vec![LayerIndex(-3)], vec![LayerIndex(-2), LayerIndex(-3)]]
        );
        assert!(parse_layer_subsets("-2||-3").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_cli(["otb", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run_cli(["otb", "--help"]), EXIT_OK);
        assert_eq!(
            run_cli(["otb", "train", "--dump", "x.jsonl", "--tau", "0", "--out", "m.json"]),
            EXIT_USAGE
        );
    }

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::MissingLayer(LayerIndex(-2))), EXIT_DATA);
        assert_eq!(exit_code(&Error::Schema("x".into())), EXIT_DATA);
    }
}
