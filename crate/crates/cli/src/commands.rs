use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cellbloom_core::cytoclass::{evaluate, train_classifier, CellClassifier, ClassifierConfig};
use cellbloom_core::harness::{
    generate_synthetic_domains, run_desk_pipeline, run_experiment, DeskConfig, ExperimentOptions, SyntheticDomainSpec,
    TranslatorSet,
};
use cellbloom_core::imaging::{load_image, save_image};
use cellbloom_core::manifest::{
    ingest_cells, ingest_flowers, oversample_training, split_manifest, AugmentationSpec, CellClass, ClassLabel,
    ClassPairMap, DatasetManifest, Domain, FlowerAliases, FlowerClass, ImageRecord, Split, SplitRatios,
};
use cellbloom_core::seeding::derive_seed;
use cellbloom_core::transfer::{
    train_pair, Direction, IdentityTranslator, TrainOptions, TransferConfig, TransferModel, Translator,
};
use cellbloom_core::CoreError;
use cellbloom_serve::{create_tasks, ServeConfig, ServeError, TaskStore, EXPORT_TOKEN_ENV};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs, detected before any compute. Exit code 2.
    Usage(String),
    /// Failure while doing the work. Exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Runtime(e) => format!("{e:#}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Invalid(_)
            | CoreError::UnknownFlowerDirs(_)
            | CoreError::MissingCheckpoint(_)
            | CoreError::MissingClass(_)
            | CoreError::TooFewRecords(..)
            | CoreError::Json(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<ServeError> for CliError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Core(c) => c.into(),
            ServeError::Invalid(_) | ServeError::Corrupt { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "cellbloom", version, about = "Cell/flower domain transfer and crowd annotation")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Log filter used when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    /// JSON object of flag values; explicit flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Crop labeled cell patches from annotated slides.
    IngestCells(IngestCellsArgs),
    /// Index a directory of flower class folders.
    IngestFlowers(IngestFlowersArgs),
    /// Assign train/val/test splits per class.
    Split(SplitArgs),
    /// Duplicate minority-class training records up to a floor.
    Oversample(OversampleArgs),
    /// Write the synthetic color-separable cell and flower domains.
    SynthData(SynthArgs),
    /// Train the transfer model of one cell/flower pair.
    TrainTransfer(TrainTransferArgs),
    /// Translate a manifest through its pair models.
    Transform(TransformArgs),
    /// Train the cell classifier.
    TrainClassifier(TrainClassifierArgs),
    /// Evaluate a classifier on one split of a cell manifest.
    Evaluate(EvaluateArgs),
    /// Compare classifier accuracy on real and reconstructed test cells.
    RunExperiment(ExperimentArgs),
    /// Run the whole workflow on a fresh synthetic fixture.
    DeskRun(DeskArgs),
    /// Create annotation tasks from labeled cells.
    MakeTasks(MakeTasksArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
    /// Write crowd labels of completed tasks as a cell manifest.
    ExportLabels(ExportArgs),
}

fn cell_class(s: &str) -> Result<CellClass, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

#[derive(Args, Debug, Serialize)]
pub struct IngestCellsArgs {
    /// JSON annotation file with slide, box and label per entry.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory holding the slide images.
    #[arg(long)]
    pub images: PathBuf,
    /// Output root; patches go to `<out>/cell/<class>/` and the manifest to `<out>/cells.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub patch_size: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct IngestFlowersArgs {
    #[arg(long)]
    pub images: PathBuf,
    /// Output manifest file.
    #[arg(long)]
    pub out: PathBuf,
    /// Extra directory alias as `dir=flower_class`; repeatable.
    #[arg(long)]
    pub alias: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct OversampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub floor: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// Output root; images under `cell/` and `flower/`, manifests `cells.jsonl` and `flowers.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub image_size: usize,
    #[arg(long, default_value_t = 0.03)]
    pub noise: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainTransferArgs {
    /// Cell class whose pair is trained, e.g. `mast_cell`.
    #[arg(long, value_parser = cell_class)]
    pub pair: CellClass,
    #[arg(long)]
    pub cells: PathBuf,
    #[arg(long)]
    pub flowers: PathBuf,
    /// Checkpoint root; the pair is written to `<out>/<cell_class>/`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub constant_lr_epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda_cycle: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_identity: f64,
    #[arg(long, default_value_t = 50)]
    pub pool: usize,
    #[arg(long, default_value_t = 64)]
    pub gen_width: usize,
    #[arg(long, default_value_t = 6)]
    pub gen_blocks: usize,
    #[arg(long, default_value_t = 64)]
    pub disc_width: usize,
    #[arg(long, default_value_t = 3)]
    pub disc_layers: usize,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from an existing checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub until_epoch: Option<usize>,
    /// Decode training images on demand instead of preloading them.
    #[arg(long)]
    pub stream: bool,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionArg {
    CellToFlower,
    FlowerToCell,
}

#[derive(Args, Debug, Serialize)]
pub struct RoutingArgs {
    /// Checkpoint root with one `<cell_class>/` directory per pair.
    #[arg(long, required_unless_present = "identity")]
    pub checkpoints: Option<PathBuf>,
    /// Route every class through the identity map instead of trained models.
    #[arg(long)]
    pub identity: bool,
    /// Image side used when no trained model fixes it.
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct TransformArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output root; images under `<out>/<class>/`, manifest at `<out>/transformed.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "cell-to-flower")]
    pub direction: DirectionArg,
    /// Translate there and back instead of one way.
    #[arg(long)]
    pub reconstruct: bool,
    #[command(flatten)]
    pub routing: RoutingArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainClassifierArgs {
    /// Split cell manifest; training uses the train split, model selection the val split.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// safetensors file of initial weights.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn select(self, m: &DatasetManifest) -> DatasetManifest {
        match self {
            SplitArg::Train => m.with_split(Split::Train),
            SplitArg::Val => m.with_split(Split::Val),
            SplitArg::Test => m.with_split(Split::Test),
            SplitArg::All => m.clone(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
            SplitArg::All => "all",
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Classifier directory written by `train-classifier`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Report name; defaults to the split name.
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct ExperimentArgs {
    /// Split cell manifest; its test split is evaluated.
    #[arg(long)]
    pub cells: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory; the report is `<out>/report.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Dump original, flower and reconstruction of every test cell.
    #[arg(long)]
    pub triplets: bool,
    /// Stamp start and finish times into the report.
    #[arg(long)]
    pub timestamps: bool,
    #[command(flatten)]
    pub routing: RoutingArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct DeskArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Train only these pairs; repeatable.
    #[arg(long = "class", value_parser = cell_class)]
    pub classes: Vec<CellClass>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct MakeTasksArgs {
    #[arg(long)]
    pub cells: PathBuf,
    /// Task store directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub required: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    #[command(flatten)]
    pub routing: RoutingArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct ServeArgs {
    /// Task store directory written by `make-tasks`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Static client assets served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn require(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("missing input: {}", path.display())))
    }
}

fn read_manifest(path: &Path) -> CliResult<DatasetManifest> {
    require(path)?;
    Ok(DatasetManifest::read_jsonl(path)?)
}

/// Record the effective arguments in `dir/run_config.json`.
fn write_run_config(dir: &Path, command: &str, seed: u64, args: &impl Serialize) -> CliResult {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let doc = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "args": args,
    });
    let path = dir.join("run_config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&doc).expect("json"))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Run config for a single-file output sits beside it as `<stem>.run_config.json`.
fn write_file_run_config(out: &Path, command: &str, seed: u64, args: &impl Serialize) -> CliResult {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{stem}.tmp"));
    write_run_config(&tmp, command, seed, args)?;
    let target = dir.join(format!("{stem}.run_config.json"));
    std::fs::rename(tmp.join("run_config.json"), &target).context("placing run config")?;
    std::fs::remove_dir(&tmp).ok();
    Ok(())
}

fn write_manifest(m: &DatasetManifest, path: &Path) -> CliResult {
    m.write_jsonl(path)?;
    tracing::info!(records = m.len(), path = %path.display(), "wrote manifest");
    Ok(())
}

/// Trained pair models found under `root`, or identity maps, and the image
/// side they expect.
fn load_translators(routing: &RoutingArgs) -> CliResult<(TranslatorSet, usize)> {
    if routing.identity {
        let set = CellClass::ALL
            .into_iter()
            .map(|c| (c, Box::new(IdentityTranslator) as Box<dyn Translator>))
            .collect();
        return Ok((set, routing.image_size));
    }
    let root = routing.checkpoints.as_deref().expect("clap requires checkpoints without identity");
    require(root)?;
    let mut set: TranslatorSet = BTreeMap::new();
    let mut size = None;
    for c in CellClass::ALL {
        let dir = root.join(c.name());
        if !dir.join("config.json").exists() {
            continue;
        }
        let model = TransferModel::load(&dir)?;
        if *size.get_or_insert(model.config.image_size) != model.config.image_size {
            return Err(CliError::Usage(format!(
                "pair models under {} disagree on image size",
                root.display()
            )));
        }
        set.insert(c, Box::new(model));
    }
    if set.is_empty() {
        return Err(CliError::Usage(format!("no pair checkpoints under {}", root.display())));
    }
    Ok((set, size.unwrap_or(routing.image_size)))
}

pub fn run(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::SynthData(a) => synth(seed, a),
        Command::IngestCells(a) => {
            require(&a.annotations)?;
            require(&a.images)?;
            let (m, report) = ingest_cells(&a.annotations, &a.images, a.patch_size, &a.out, seed)?;
            tracing::info!(?report, "ingested cells");
            write_manifest(&m, &a.out.join("cells.jsonl"))?;
            write_run_config(&a.out, "ingest-cells", seed, &a)
        }
        Command::IngestFlowers(a) => {
            require(&a.images)?;
            let mut aliases = FlowerAliases::default();
            for spec in &a.alias {
                let (dir, class) = spec
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("alias `{spec}` is not dir=class")))?;
                aliases.insert(dir, class.parse::<FlowerClass>()?);
            }
            let m = ingest_flowers(&a.images, &aliases, seed)?;
            write_manifest(&m, &a.out)?;
            write_file_run_config(&a.out, "ingest-flowers", seed, &a)
        }
        Command::Split(a) => {
            let m = read_manifest(&a.manifest)?;
            let ratios = SplitRatios {
                train: a.train,
                test: a.test,
                val: a.val,
            };
            ratios.validate()?;
            write_manifest(&split_manifest(&m, ratios, seed)?, &a.out)?;
            write_file_run_config(&a.out, "split", seed, &a)
        }
        Command::Oversample(a) => {
            let m = read_manifest(&a.manifest)?;
            write_manifest(&oversample_training(&m, a.floor, seed)?, &a.out)?;
            write_file_run_config(&a.out, "oversample", seed, &a)
        }
        Command::TrainTransfer(a) => train_transfer(seed, a),
        Command::Transform(a) => transform(seed, a),
        Command::TrainClassifier(a) => train_cls(seed, a),
        Command::Evaluate(a) => {
            require(&a.model)?;
            let m = read_manifest(&a.manifest)?;
            let model = CellClassifier::load(&a.model)?;
            let tag = a.tag.clone().unwrap_or_else(|| a.split.name().to_string());
            let report = evaluate(&model, &a.split.select(&m), &tag)?;
            report.write(&a.out, &tag)?;
            tracing::info!(overall = report.overall_accuracy, r#macro = report.macro_accuracy, "evaluated");
            write_run_config(&a.out, "evaluate", seed, &a)
        }
        Command::RunExperiment(a) => experiment(seed, a),
        Command::DeskRun(a) => desk(seed, a),
        Command::MakeTasks(a) => {
            let cells = read_manifest(&a.cells)?;
            let (set, size) = load_translators(&a.routing)?;
            let cells = a.split.select(&cells);
            let store = create_tasks(&cells, &set, &ClassPairMap::default(), a.required, size, &a.out)?;
            tracing::info!(tasks = store.tasks().count(), "created tasks");
            write_run_config(&a.out, "make-tasks", seed, &a)
        }
        Command::Serve(a) => {
            require(&a.data.join(TaskStore::TASK_FILE))?;
            let addr: SocketAddr = format!("{}:{}", a.host, a.port)
                .parse()
                .map_err(|e| CliError::Usage(format!("bad address: {e}")))?;
            let token = std::env::var(EXPORT_TOKEN_ENV).ok().filter(|t| !t.is_empty());
            if token.is_none() {
                tracing::warn!("{EXPORT_TOKEN_ENV} unset; /api/export is disabled");
            }
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(cellbloom_serve::serve(ServeConfig {
                addr,
                data_dir: a.data,
                export_token: token,
                static_dir: a.static_dir,
            }))?;
            Ok(())
        }
        Command::ExportLabels(a) => {
            require(&a.data.join(TaskStore::TASK_FILE))?;
            let m = TaskStore::open(&a.data)?.export()?;
            write_manifest(&m, &a.out)?;
            write_file_run_config(&a.out, "export-labels", seed, &a)
        }
    }
}

fn synth(seed: u64, a: SynthArgs) -> CliResult {
    let spec = SyntheticDomainSpec {
        per_class: a.per_class,
        image_size: a.image_size,
        noise_sigma: a.noise,
        seed,
    };
    spec.validate()?;
    let (cells, flowers) = generate_synthetic_domains(&spec, &a.out)?;
    write_manifest(&cells, &a.out.join("cells.jsonl"))?;
    write_manifest(&flowers, &a.out.join("flowers.jsonl"))?;
    write_run_config(&a.out, "synth-data", seed, &a)
}

fn train_transfer(seed: u64, a: TrainTransferArgs) -> CliResult {
    let cells = read_manifest(&a.cells)?;
    let flowers = read_manifest(&a.flowers)?;
    let mut cfg = TransferConfig::for_pair(a.pair, &ClassPairMap::default());
    cfg.epochs = a.epochs;
    cfg.constant_lr_epochs = a.constant_lr_epochs;
    cfg.image_size = a.image_size;
    cfg.batch_size = a.batch_size;
    cfg.lr = a.lr;
    cfg.lambda_cycle = a.lambda_cycle;
    cfg.lambda_identity = a.lambda_identity;
    cfg.pool_capacity = a.pool;
    cfg.generator.base_width = a.gen_width;
    cfg.generator.residual_blocks = a.gen_blocks;
    cfg.discriminator.base_width = a.disc_width;
    cfg.discriminator.stride2_layers = a.disc_layers;
    cfg.seed = derive_seed(seed, &format!("transfer.{}", a.pair.name()));
    cfg.validate()?;
    let dir = a.out.join(a.pair.name());
    write_run_config(&dir, "train-transfer", seed, &a)?;
    tracing::info!(pair = %format!("{}<->{}", cfg.cell_class, cfg.flower_class), "training");
    let opts = TrainOptions {
        out_dir: Some(dir),
        checkpoint_every: a.checkpoint_every,
        resume: a.resume,
        until_epoch: a.until_epoch,
        stream_images: a.stream,
    };
    let ck = train_pair(&cfg, &cells, &flowers, &opts)?;
    if let Some(last) = ck.history.last() {
        tracing::info!(epoch = last.epoch, cycle = last.cycle_mean(), "done");
    }
    Ok(())
}

fn transform(seed: u64, a: TransformArgs) -> CliResult {
    let m = read_manifest(&a.manifest)?;
    let (set, size) = load_translators(&a.routing)?;
    let pm = ClassPairMap::default();
    let direction = match a.direction {
        DirectionArg::CellToFlower => Direction::CellToFlower,
        DirectionArg::FlowerToCell => Direction::FlowerToCell,
    };
    let source = match direction {
        Direction::CellToFlower => Domain::Cell,
        Direction::FlowerToCell => Domain::Flower,
    };
    if m.domain() != source {
        return Err(CliError::Usage(format!("{direction:?} needs a {source} manifest")));
    }
    let mut groups: BTreeMap<CellClass, Vec<&ImageRecord>> = BTreeMap::new();
    for r in m.records() {
        let class = match r.class_label {
            Some(ClassLabel::Cell(c)) => c,
            Some(ClassLabel::Flower(f)) => pm.unmap_class(f),
            None => return Err(CliError::Usage(format!("record {} has no class", r.id))),
        };
        groups.entry(class).or_default().push(r);
    }
    if let Some(c) = groups.keys().find(|c| !set.contains_key(c)) {
        return Err(CoreError::MissingCheckpoint(c.name().to_string()).into());
    }
    let suffix = if a.reconstruct { "rec" } else { "fake" };
    let mut out = BTreeMap::new();
    for (class, records) in &groups {
        let images = records
            .iter()
            .map(|r| load_image(&r.path, Some(size)))
            .collect::<Result<Vec<_>, _>>()?;
        let results = if a.reconstruct {
            set[class].reconstruct(&images, source)?
        } else {
            set[class].translate(&images, direction)?
        };
        for (r, img) in records.iter().zip(&results) {
            let label = match (a.reconstruct, source) {
                (true, _) => r.class_label.expect("checked"),
                (false, Domain::Cell) => ClassLabel::Flower(pm.map_class(*class)),
                (false, Domain::Flower) => ClassLabel::Cell(*class),
            };
            let id = format!("{}~{suffix}", r.id);
            let path = a.out.join(label.name()).join(format!("{id}.png"));
            save_image(&path, img)?;
            let mut rec = ImageRecord::new(id, path, label);
            rec.split = r.split;
            rec.derived_from = Some(r.id.clone());
            out.insert(r.id.clone(), rec);
        }
    }
    let records: Vec<ImageRecord> = m.records().iter().filter_map(|r| out.remove(&r.id)).collect();
    let domain = records.first().map(|r| r.domain).unwrap_or(source);
    let result = DatasetManifest::new(domain, m.seed(), records)?;
    write_manifest(&result, &a.out.join("transformed.jsonl"))?;
    write_run_config(&a.out, "transform", seed, &a)
}

fn train_cls(seed: u64, a: TrainClassifierArgs) -> CliResult {
    let m = read_manifest(&a.manifest)?;
    if let Some(p) = &a.pretrained {
        require(p)?;
    }
    let cfg = ClassifierConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        image_size: a.image_size,
        base_width: a.width,
        pretrained_weights: a.pretrained.clone(),
        augmentation: if a.no_augment {
            AugmentationSpec::identity()
        } else {
            AugmentationSpec::default()
        },
        seed: derive_seed(seed, "classifier"),
    };
    cfg.validate()?;
    write_run_config(&a.out, "train-classifier", seed, &a)?;
    let mut model = train_classifier(&m, &cfg)?;
    model.save(&a.out)?;
    let val = m.with_split(Split::Val);
    if !val.is_empty() {
        let report = evaluate(&model, &val, "val")?;
        report.write(&a.out, "val")?;
        tracing::info!(best_epoch = model.best_epoch, val_accuracy = report.overall_accuracy, "trained");
    }
    Ok(())
}

fn experiment(seed: u64, a: ExperimentArgs) -> CliResult {
    let cells = read_manifest(&a.cells)?;
    require(&a.model)?;
    let classifier = CellClassifier::load(&a.model)?;
    let (set, size) = load_translators(&a.routing)?;
    if !a.routing.identity && size != classifier.config.image_size {
        return Err(CliError::Usage(format!(
            "pair models use {size} px images but the classifier uses {}",
            classifier.config.image_size
        )));
    }
    write_run_config(&a.out, "run-experiment", seed, &a)?;
    let report = run_experiment(
        &cells,
        &set,
        &classifier,
        &ExperimentOptions {
            work_dir: a.out.clone(),
            triplets: a.triplets,
            timestamps: a.timestamps,
        },
    )?;
    let path = a.out.join("report.json");
    report.write(&path)?;
    tracing::info!(
        acc_real = report.acc_real.overall,
        acc_reconstructed = report.acc_reconstructed.overall,
        mean_cycle_l1 = report.mean_cycle_l1,
        path = %path.display(),
        "experiment done"
    );
    Ok(())
}

fn desk(seed: u64, a: DeskArgs) -> CliResult {
    let mut cfg = DeskConfig {
        seed,
        ..DeskConfig::default()
    };
    if !a.classes.is_empty() {
        cfg.classes = Some(a.classes.clone());
    }
    if let Some(e) = a.epochs {
        cfg.transfer.epochs = e;
        cfg.transfer.constant_lr_epochs = e / 2;
    }
    if let Some(n) = a.per_class {
        cfg.synthetic.per_class = n;
    }
    cfg.transfer.validate()?;
    cfg.synthetic.validate()?;
    write_run_config(&a.out, "desk-run", seed, &a)?;
    let outcome = run_desk_pipeline(&cfg, &a.out)?;
    let r = &outcome.report;
    tracing::info!(
        acc_real = r.acc_real.overall,
        acc_reconstructed = r.acc_reconstructed.overall,
        mean_cycle_l1 = r.mean_cycle_l1,
        "desk run done"
    );
    Ok(())
}
