use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparsescene::dictionary::DictionaryPreset;
use sparsescene::features::{read_csv_features, read_feature_file, write_feature_file};
use sparsescene::pipeline::{
    configured_specs, fingerprint_hex, run_ablation, run_eval, run_train, write_report, write_synth_dataset, DataSource,
    DatasetManifest, EvalReport, FeatureDataset, PipelineConfig, ARTIFACTS_FILE, CONFIG_FILE,
};
use sparsescene::synth::{generate, SynthConfig, SynthKind};
use sparsescene::{Dictionary, Error, ErrorKind, LinearSvmModel, PcaModel, PerturbationSpec, Result};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "sparsescene", version, about = "Multi-scale sparse-coding scene classification")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a manifest from an image tree, or convert CSV features to SSRF.
    #[command(subcommand)]
    Import(ImportCommand),
    /// Write the procedurally generated glyph dataset with its manifest and config.
    Synth(SynthArgs),
    /// Train PCA models, dictionaries and classifiers.
    Train(TrainArgs),
    /// Evaluate trained artifacts on the test split.
    Eval(EvalArgs),
    /// Train in memory and compare combined, global-only and local-only accuracy.
    Ablate(AblateArgs),
    /// Evaluate trained artifacts under the configured occlusion and noise grid.
    PerturbEval(PerturbEvalArgs),
    /// Print default settings or artifact metadata.
    Inspect(InspectArgs),
}

#[derive(Subcommand)]
enum ImportCommand {
    /// Directory-per-class images; `train/` and `test/` subtrees define the split when present.
    Images {
        root: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// CSV with a `dim0,dim1,...` header into an SSRF matrix.
    Csv { input: PathBuf, output: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKindArg {
    Objects,
    Background,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "objects")]
    kind: SynthKindArg,
    #[arg(long, default_value_t = 50)]
    train_per_class: usize,
    #[arg(long, default_value_t = 20)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DataArgs {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Image manifest (`class<TAB>path` lines).
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    manifest: Option<PathBuf>,
    /// Split file; defaults to `split.tsv` next to the manifest.
    #[arg(long, requires = "manifest")]
    split: Option<PathBuf>,
    /// Directory of precomputed SSRF features.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Descriptor cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    artifacts: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    artifacts: PathBuf,
    /// Perturbation such as `kind=occlusion,n=4,count=1,seed=7`; repeatable.
    #[arg(long = "perturb")]
    perturb: Vec<PerturbationSpec>,
    /// Directory for `report.jsonl` and `report.txt`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbEvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    artifacts: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InspectArgs {
    /// Print every default setting.
    #[arg(long)]
    defaults: bool,
    /// An artifact file (`.ssrf`, `.ssrd`, `.ssrp`, `.ssrm`) or artifact directory.
    #[arg(long)]
    artifact: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Import(ImportCommand::Images { root, test_fraction, seed }) => {
            let m = DatasetManifest::import_dir(&root, test_fraction, seed)?;
            let path = m.save()?;
            println!(
                "{} classes, {} train / {} test images -> {}",
                m.classes.len(),
                m.train.len(),
                m.test.len(),
                path.display()
            );
        }
        Command::Import(ImportCommand::Csv { input, output }) => {
            let text = fs::read_to_string(&input).map_err(|e| Error::from(e).at_path(&input))?;
            let m = read_csv_features(&text).map_err(|e| e.at_path(&input))?;
            write_feature_file(&output, &m)?;
            println!("{} x {} -> {}", m.nrows(), m.ncols(), output.display());
        }
        Command::Synth(a) => {
            let ds = generate(&SynthConfig {
                kind: match a.kind {
                    SynthKindArg::Objects => SynthKind::Objects,
                    SynthKindArg::Background => SynthKind::Background,
                },
                train_per_class: a.train_per_class,
                test_per_class: a.test_per_class,
                seed: a.seed,
                ..SynthConfig::default()
            })?;
            let m = write_synth_dataset(&ds, &a.out)?;
            let cfg_path = a.out.join(CONFIG_FILE);
            sparsescene::binio::write_atomic(&cfg_path, PipelineConfig::synthetic_benchmark().to_toml().as_bytes())?;
            println!(
                "{} train / {} test images in {}; config {}",
                m.train.len(),
                m.test.len(),
                a.out.display(),
                cfg_path.display()
            );
        }
        Command::Train(a) => {
            let (cfg, source) = open(&a.data, None)?;
            let out = run_train(&cfg, &source, &a.artifacts, a.data.cache.as_deref())?;
            println!(
                "trained {} classes, representation dimension {}, fingerprint {} -> {}",
                out.model.classes.len(),
                out.model.layout.total_len(),
                fingerprint_hex(&out.model.fingerprint()),
                a.artifacts.display()
            );
        }
        Command::Eval(a) => {
            let (cfg, source) = open(&a.data, Some(&a.artifacts))?;
            let report = run_eval(&cfg, &source, &a.artifacts, a.data.cache.as_deref(), &a.perturb)?;
            emit(&report, a.report.as_deref())?;
        }
        Command::PerturbEval(a) => {
            let (cfg, source) = open(&a.data, Some(&a.artifacts))?;
            let specs = configured_specs(&cfg)?;
            let report = run_eval(&cfg, &source, &a.artifacts, a.data.cache.as_deref(), &specs)?;
            emit(&report, a.report.as_deref())?;
        }
        Command::Ablate(a) => {
            let (cfg, source) = open(&a.data, None)?;
            let report = run_ablation(&cfg, &source, a.data.cache.as_deref())?;
            emit(&report, a.report.as_deref())?;
        }
        Command::Inspect(a) => {
            if a.defaults {
                print!("{}", defaults_text());
            } else if let Some(path) = a.artifact {
                print!("{}", inspect_artifact(&path)?);
            }
        }
    }
    Ok(())
}

/// Without `--config`, commands reading trained artifacts use the
/// configuration stored alongside them.
fn open(a: &DataArgs, artifacts: Option<&Path>) -> Result<(PipelineConfig, DataSource)> {
    let cfg = match (&a.config, artifacts) {
        (Some(p), _) => PipelineConfig::load(p)?,
        (None, Some(dir)) => PipelineConfig::load(&dir.join(CONFIG_FILE))?,
        (None, None) => PipelineConfig::default(),
    };
    let source = match (&a.manifest, &a.features) {
        (Some(m), None) => DataSource::Images(DatasetManifest::load(m, a.split.as_deref())?),
        (None, Some(f)) => DataSource::Features(FeatureDataset::load(f)?),
        _ => return Err(Error::InvalidArgument("give exactly one of --manifest or --features".into())),
    };
    Ok((cfg, source))
}

fn emit(report: &EvalReport, dir: Option<&Path>) -> Result<()> {
    print!("{}", report.to_table());
    if let Some(dir) = dir {
        let (json, table) = write_report(report, dir, "report")?;
        println!("\nreport: {} {}", json.display(), table.display());
    }
    Ok(())
}

fn defaults_text() -> String {
    let mut out = String::from("# default pipeline configuration\n");
    out.push_str(&PipelineConfig::default().to_toml());
    out.push_str("\n# dictionary presets (words per source dictionary)\n");
    for p in DictionaryPreset::ALL {
        out.push_str(&format!("# preset {} = {}\n", p.name(), p.words()));
    }
    out
}

fn inspect_artifact(path: &Path) -> Result<String> {
    if path.is_dir() {
        let index = path.join(ARTIFACTS_FILE);
        return fs::read_to_string(&index).map_err(|e| Error::from(e).at_path(&index));
    }
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    let magic = bytes.get(..4).unwrap_or_default();
    let text = match magic {
        b"SSRF" => {
            let m = read_feature_file(path)?;
            format!("feature matrix\nrows = {}\ncols = {}\n", m.nrows(), m.ncols())
        }
        b"SSRD" => {
            let (d, fp) = Dictionary::load(path)?;
            let blocks: Vec<String> = d
                .blocks()
                .iter()
                .map(|b| format!("scale {}: columns {}..{}", b.scale_id, b.start, b.start + b.len))
                .collect();
            format!(
                "dictionary\nsource = {}\ndim = {}\ncolumns = {}\nblocks = {}\nfingerprint = {}\n",
                d.source(),
                d.dim(),
                d.columns(),
                blocks.join("; "),
                fingerprint_hex(&fp)
            )
        }
        b"SSRP" => {
            let (p, fp) = PcaModel::load(path)?;
            format!(
                "pca model\ninput_dim = {}\noutput_dim = {}\nexplained_variance = {:.6}\nfingerprint = {}\n",
                p.input_dim(),
                p.output_dim(),
                p.explained_variance_ratio().iter().sum::<f64>(),
                fingerprint_hex(&fp)
            )
        }
        b"SSRM" => {
            let (m, fp) = LinearSvmModel::load(path)?;
            format!(
                "linear svm\nclasses = {}\ndim = {}\nc = {}\nfingerprint = {}\n",
                m.classes(),
                m.dim(),
                m.c(),
                fingerprint_hex(&fp)
            )
        }
        other => {
            return Err(Error::Malformed(format!("unknown artifact magic {other:?}")).at_path(path));
        }
    };
    Ok(text)
}
