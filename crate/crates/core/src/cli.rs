//! The `morphdict` command line: configuration, the six subcommands and the
//! exit-code table.
//!
//! | code | meaning                                       |
//! |------|-----------------------------------------------|
//! | 0    | success                                       |
//! | 1    | usage or configuration error                  |
//! | 2    | i/o error, unreadable or unknown file format  |
//! | 3    | numerical failure (non-finite loss, failed gradient check) |
//!
//! Configuration is a flat `key = value` file (`#` starts a comment); the
//! flags `--seed`, `--out`, `--precision`, `--radius`, `--workers` and any
//! number of `--set key=value` override it, in that order. Outputs go to
//! `artifacts/`, `reports/`, `montages/` and `trace/` under `--out`, always
//! through a temporary file and an atomic rename.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Axis};

use crate::asymae::{
    build_model, model_grad_check, random_images, trace_to_csv, train, AsymAeConfig, AsymAeModel,
    EncoderWidths, Precision, GRAD_CHECK_BATCH, GRAD_CHECK_EPS,
};
use crate::dataset::{default_data_dir, load_split, GrayImage, ImageSet, Split};
use crate::error::{Error, Result};
use crate::evaluation::{emit_report, score, write_montage, MetricsReport, ModelOutputs, TileScale};
use crate::morphology::{dilate, dilate_dictionary, disk_se, encodings_from_matrix, part_based_apply};
use crate::morphology::{Dictionary, StructuringElement};
use crate::neuralnet::{Real, MNET_MAGIC};
use crate::nmf::{encode_offline, factorize_set, Factorization, NmfConfig, MDIC_MAGIC};
use crate::sparsity::SparsityTarget;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Gradient-check pass thresholds by precision.
pub const GRAD_TOL_64: f64 = 1e-5;
pub const GRAD_TOL_32: f64 = 1e-3;
/// Penalty weight used by `grad-check`, large enough that the penalty
/// gradient is not swamped by the reconstruction term.
pub const GRAD_CHECK_BETA: f64 = 0.5;

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format(_) | Error::Length { .. } => EXIT_IO,
        Error::Numeric(_) | Error::UndefinedMetric(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Every setting a command can read. Keys in the config file use the
/// field names.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory holding the IDX files. Default: `$MORPHDICT_DATA_DIR`,
    /// else `data/mnist`.
    pub data_dir: PathBuf,
    /// Dataset label written into reports. Default `mnist`.
    pub dataset: String,
    /// Split for `train-nmf`, `eval` and `approx-dilate`. Default `test`.
    pub split: Split,
    /// Use only the first N training / evaluation images (0 = all).
    pub train_limit: usize,
    pub test_limit: usize,
    /// Artifact base name. Default: `sparse-nmf` or `asymae`.
    pub name: Option<String>,
    pub k: usize,
    /// Hoyer targets for NMF; `none` (default for `s_w`) drops the
    /// constraint. Default `s_h = 0.6`.
    pub s_h: Option<SparsityTarget>,
    pub s_w: Option<SparsityTarget>,
    pub max_iter: usize,
    pub tol: f64,
    /// Iterations for encoding unseen images against an NMF dictionary.
    pub offline_iter: usize,
    pub p: f64,
    /// Default: 0.0005 when the dataset name mentions fashion, else 0.001.
    pub beta: Option<f64>,
    pub alpha_lrelu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub early_stop: bool,
    /// Required by the training commands.
    pub seed: Option<u64>,
    pub precision: Precision,
    /// Disk radius of the structuring element. Default 1.
    pub radius: f64,
    /// Threads for per-image evaluation. Default 1.
    pub workers: usize,
    pub out: PathBuf,
    /// Montage columns; default 10 for atoms.
    pub cols: usize,
    /// Skip per-tile normalization in montages.
    pub raw_scale: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let nmf = NmfConfig::default();
        let ae = AsymAeConfig::default();
        Self {
            data_dir: default_data_dir(),
            dataset: "mnist".into(),
            split: Split::Test,
            train_limit: 0,
            test_limit: 0,
            name: None,
            k: 100,
            s_h: Some(SparsityTarget::new(0.6).expect("valid target")),
            s_w: None,
            max_iter: nmf.max_iter,
            tol: nmf.tol,
            offline_iter: 200,
            p: ae.p,
            beta: None,
            alpha_lrelu: ae.alpha_lrelu,
            epochs: ae.epochs,
            batch_size: ae.batch_size,
            lr: ae.lr,
            early_stop: true,
            seed: None,
            precision: Precision::F64,
            radius: 1.0,
            workers: 1,
            out: PathBuf::from("out"),
            cols: 10,
            raw_scale: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_target(key: &str, value: &str) -> Result<Option<SparsityTarget>> {
    if value == "none" {
        return Ok(None);
    }
    SparsityTarget::new(parse(key, value)?)
        .map(Some)
        .map_err(|e| Error::Config(format!("{key}: {e}")))
}

impl RunConfig {
    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "dataset" => self.dataset = v.to_string(),
            "split" => self.split = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "train_limit" => self.train_limit = parse(key, v)?,
            "test_limit" => self.test_limit = parse(key, v)?,
            "name" => self.name = Some(v.to_string()),
            "k" => self.k = parse(key, v)?,
            "s_h" => self.s_h = parse_target(key, v)?,
            "s_w" => self.s_w = parse_target(key, v)?,
            "max_iter" => self.max_iter = parse(key, v)?,
            "tol" => self.tol = parse(key, v)?,
            "offline_iter" => self.offline_iter = parse(key, v)?,
            "p" => self.p = parse(key, v)?,
            "beta" => self.beta = Some(parse(key, v)?),
            "alpha_lrelu" => self.alpha_lrelu = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "early_stop" => self.early_stop = parse(key, v)?,
            "seed" => self.seed = Some(parse(key, v)?),
            "precision" => self.precision = v.parse()?,
            "radius" => self.radius = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "cols" => self.cols = parse(key, v)?,
            "raw_scale" => self.raw_scale = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {line:?}", no + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn beta(&self) -> f64 {
        self.beta
            .unwrap_or_else(|| AsymAeConfig::default_beta(&self.dataset))
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("training needs a seed (--seed or seed = N)".into()))
    }

    fn se(&self) -> Result<StructuringElement> {
        disk_se(self.radius).map_err(|e| Error::Config(e.to_string()))
    }

    fn scale(&self) -> TileScale {
        if self.raw_scale {
            TileScale::Raw
        } else {
            TileScale::PerTile
        }
    }

    pub fn nmf_config(&self) -> Result<NmfConfig> {
        let cfg = NmfConfig {
            k: self.k,
            s_h: self.s_h,
            s_w: self.s_w,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.require_seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn asymae_config(&self) -> Result<AsymAeConfig> {
        let cfg = AsymAeConfig {
            k: self.k,
            p: self.p,
            beta: self.beta(),
            alpha_lrelu: self.alpha_lrelu,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.require_seed()?,
            precision: self.precision,
            early_stop: self.early_stop,
            widths: EncoderWidths::STANDARD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self, split: Split) -> Result<ImageSet> {
        let set = load_split(&self.data_dir, split, &self.dataset)?;
        let limit = match split {
            Split::Train => self.train_limit,
            Split::Test => self.test_limit,
        };
        Ok(if limit > 0 { set.take(limit) } else { set })
    }

    fn path(&self, dir: &str, file: String) -> PathBuf {
        self.out.join(dir).join(file)
    }
}

/// A model read back from disk.
#[derive(Debug, Clone)]
pub enum Artifact {
    Nmf(Factorization),
    AsymAe(AsymAeModel<f64>),
}

impl Artifact {
    /// Dispatches on the container magic.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        match bytes.get(..4) {
            Some(m) if m == MDIC_MAGIC => Ok(Artifact::Nmf(Factorization::from_bytes(&bytes)?)),
            Some(m) if m == MNET_MAGIC => Ok(Artifact::AsymAe(AsymAeModel::from_bytes(&bytes)?)),
            _ => Err(Error::Format(format!(
                "{}: not an MDIC or MNET container",
                path.display()
            ))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Nmf(_) => "sparse-nmf",
            Artifact::AsymAe(_) => "asymae",
        }
    }

    /// Atoms shaped like the images of `set`.
    pub fn dictionary(&self, set: &ImageSet) -> Result<Dictionary> {
        match self {
            Artifact::Nmf(f) => f.dictionary(set.height(), set.width()),
            Artifact::AsymAe(m) => m.atoms(),
        }
    }

    /// Codes and (unclipped) reconstructions for `set`.
    ///
    /// An NMF artifact whose stored code count equals the set size is
    /// taken to have been fitted on that set and its stored codes are
    /// used; otherwise images are encoded against the fixed dictionary.
    pub fn outputs(&self, set: &ImageSet, cfg: &RunConfig) -> Result<(Array2<f64>, Array2<f64>)> {
        match self {
            Artifact::Nmf(f) => {
                let codes = if f.h().nrows() == set.len() {
                    f.h().clone()
                } else {
                    let dict = self.dictionary(set)?;
                    encode_offline(set.images(), &dict, cfg.s_h, cfg.offline_iter, cfg.tol)?
                        .matrix()
                };
                let recon = codes.dot(f.w());
                Ok((codes, recon))
            }
            Artifact::AsymAe(m) => {
                let codes = m.encode(set.images())?;
                let recon = m.decode_matrix(&codes)?;
                Ok((codes, recon))
            }
        }
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn write_report(path: &Path, report: &MetricsReport) -> Result<String> {
    let csv = emit_report(std::slice::from_ref(report));
    crate::write_atomic(path, csv.as_bytes())?;
    Ok(csv)
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub report: Option<MetricsReport>,
    pub written: Vec<PathBuf>,
    pub message: String,
}

/// Factorizes the configured split, scores it and writes the `MDIC`
/// container, objective trace and report.
pub fn cmd_train_nmf(cfg: &RunConfig) -> Result<Outcome> {
    let nmf = cfg.nmf_config()?;
    let se = cfg.se()?;
    let set = cfg.load(cfg.split)?;
    let fact = factorize_set(&set, &nmf)?;
    let name = cfg.name.clone().unwrap_or_else(|| "sparse-nmf".into());
    let dict = fact.dictionary(set.height(), set.width())?;
    let recon = fact.h().dot(fact.w());
    let report = score(
        "sparse-nmf",
        &cfg.dataset,
        &set.to_matrix(),
        ModelOutputs {
            codes: fact.h(),
            reconstruction: &recon,
            dictionary: &dict,
        },
        &se,
        cfg.workers,
    )?;

    let artifact = cfg.path("artifacts", format!("{name}.mdic"));
    fact.save(&artifact)?;
    let mut trace = String::from("iteration,objective\n");
    for (i, v) in fact.objective_trace().iter().enumerate() {
        trace.push_str(&format!("{i},{v:e}\n"));
    }
    let trace_path = cfg.path("trace", format!("{name}.csv"));
    crate::write_atomic(&trace_path, trace.as_bytes())?;
    let report_path = cfg.path("reports", format!("{name}.csv"));
    let csv = write_report(&report_path, &report)?;
    Ok(Outcome {
        report: Some(report),
        written: vec![artifact, trace_path, report_path],
        message: csv,
    })
}

fn train_asymae_as<T: Real>(
    ae: &AsymAeConfig,
    train_set: &ImageSet,
) -> Result<(AsymAeModel<f64>, String)> {
    let mut model: AsymAeModel<T> = build_model(ae, train_set.height(), train_set.width())?;
    let trace = train(&mut model, train_set, ae)?;
    Ok((model.cast(), trace_to_csv(&trace)?))
}

/// Trains on the train split, scores on the test split and writes the
/// checkpoint, per-epoch trace and report.
pub fn cmd_train_asymae(cfg: &RunConfig) -> Result<Outcome> {
    let ae = cfg.asymae_config()?;
    let se = cfg.se()?;
    let train_set = cfg.load(Split::Train)?;
    let test_set = cfg.load(Split::Test)?;
    let (model, trace) = match ae.precision {
        Precision::F32 => train_asymae_as::<f32>(&ae, &train_set)?,
        Precision::F64 => train_asymae_as::<f64>(&ae, &train_set)?,
    };
    let name = cfg.name.clone().unwrap_or_else(|| "asymae".into());
    let artifact = cfg.path("artifacts", format!("{name}.mnet"));
    model.save(&artifact)?;
    let trace_path = cfg.path("trace", format!("{name}.csv"));
    crate::write_atomic(&trace_path, trace.as_bytes())?;

    let report = evaluate(&Artifact::AsymAe(model), &test_set, cfg, &se)?;
    let report_path = cfg.path("reports", format!("{name}.csv"));
    let csv = write_report(&report_path, &report)?;
    Ok(Outcome {
        report: Some(report),
        written: vec![artifact, trace_path, report_path],
        message: csv,
    })
}

fn evaluate(
    artifact: &Artifact,
    set: &ImageSet,
    cfg: &RunConfig,
    se: &StructuringElement,
) -> Result<MetricsReport> {
    let dict = artifact.dictionary(set)?;
    let (codes, recon) = artifact.outputs(set, cfg)?;
    score(
        artifact.kind(),
        &cfg.dataset,
        &set.to_matrix(),
        ModelOutputs {
            codes: &codes,
            reconstruction: &recon,
            dictionary: &dict,
        },
        se,
        cfg.workers,
    )
}

/// Scores a saved model of either kind on the configured split.
pub fn cmd_eval(cfg: &RunConfig, artifact_path: &Path) -> Result<Outcome> {
    let se = cfg.se()?;
    let artifact = Artifact::load(artifact_path)?;
    let set = cfg.load(cfg.split)?;
    let report = evaluate(&artifact, &set, cfg, &se)?;
    let name = cfg.name.clone().unwrap_or_else(|| file_stem(artifact_path));
    let report_path = cfg.path("reports", format!("{name}_eval.csv"));
    let csv = write_report(&report_path, &report)?;
    Ok(Outcome {
        report: Some(report),
        written: vec![report_path],
        message: csv,
    })
}

/// Writes the atoms of a saved model as a PGM montage.
pub fn cmd_export_atoms(cfg: &RunConfig, artifact_path: &Path) -> Result<Outcome> {
    if cfg.cols == 0 {
        return Err(Error::Config("cols must be at least 1".into()));
    }
    let artifact = Artifact::load(artifact_path)?;
    let dict = match &artifact {
        Artifact::AsymAe(m) => m.atoms()?,
        Artifact::Nmf(f) => {
            // the container does not store image dims: use the dataset's
            // when it is available, else assume square images
            let n = f.w().ncols();
            let (h, w) = match cfg.load(cfg.split) {
                Ok(set) if set.pixel_count() == n => (set.height(), set.width()),
                _ => square_dims(n)?,
            };
            f.dictionary(h, w)?
        }
    };
    let name = cfg.name.clone().unwrap_or_else(|| file_stem(artifact_path));
    let path = cfg.path("montages", format!("{name}_atoms.pgm"));
    let montage = write_montage(&path, &dict.atoms(), cfg.cols, cfg.scale())?;
    Ok(Outcome {
        report: None,
        written: vec![path],
        message: format!(
            "{} atoms -> {}x{} montage",
            dict.k(),
            montage.height(),
            montage.width()
        ),
    })
}

fn square_dims(n: usize) -> Result<(usize, usize)> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Config(format!(
            "cannot infer image dims for {n}-pixel atoms; point data_dir at the dataset"
        )));
    }
    Ok((side, side))
}

/// Rows of (input, exact dilation, clipped part-based dilation) for the
/// selected images of the configured split.
pub fn cmd_approx_dilate(cfg: &RunConfig, artifact_path: &Path, indices: &[usize]) -> Result<Outcome> {
    if indices.is_empty() {
        return Err(Error::arg("approx-dilate needs at least one image index"));
    }
    let se = cfg.se()?;
    let artifact = Artifact::load(artifact_path)?;
    let set = cfg.load(cfg.split)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= set.len()) {
        return Err(Error::arg(format!(
            "image index {bad} out of range for {} images",
            set.len()
        )));
    }
    let dict = artifact.dictionary(&set)?;
    let codes = match &artifact {
        // stored codes belong to the whole set; select before encoding
        Artifact::Nmf(f) if f.h().nrows() == set.len() => f.h().select(Axis(0), indices),
        _ => artifact.outputs(&set.select(indices)?, cfg)?.0,
    };
    let dilated_atoms = dilate_dictionary(&dict, &se);
    let mut tiles: Vec<GrayImage> = Vec::with_capacity(3 * indices.len());
    for (row, &i) in indices.iter().enumerate() {
        let x = &set.images()[i];
        let h = &encodings_from_matrix(&codes.select(Axis(0), &[row]))?[0];
        let approx = part_based_apply(h, &dilated_atoms)?;
        tiles.push(x.clone());
        tiles.push(dilate(x, &se));
        tiles.push(crate::evaluation::clip01_image(&approx));
    }
    let name = cfg.name.clone().unwrap_or_else(|| file_stem(artifact_path));
    let path = cfg.path("montages", format!("{name}_dilate.pgm"));
    write_montage(&path, &tiles, 3, cfg.scale())?;
    Ok(Outcome {
        report: None,
        written: vec![path],
        message: format!("{} rows (input | dilation | part-based)", indices.len()),
    })
}

/// Finite-difference check of the whole tiny auto-encoder.
pub fn cmd_grad_check(cfg: &RunConfig, corrupt: bool) -> Result<Outcome> {
    let seed = cfg.seed.unwrap_or(0);
    let ae = AsymAeConfig {
        seed,
        p: cfg.p,
        alpha_lrelu: cfg.alpha_lrelu,
        ..AsymAeConfig::tiny()
    };
    let images = random_images(GRAD_CHECK_BATCH, 8, 8, seed);
    let (report, tol) = match cfg.precision {
        Precision::F64 => {
            let mut m: AsymAeModel<f64> = build_model(&ae, 8, 8)?;
            let r = model_grad_check(&mut m, &images, GRAD_CHECK_BETA, ae.p, GRAD_CHECK_EPS, corrupt)?;
            (r, GRAD_TOL_64)
        }
        Precision::F32 => {
            let mut m: AsymAeModel<f32> = build_model(&ae, 8, 8)?;
            let r = model_grad_check(&mut m, &images, GRAD_CHECK_BETA, ae.p, GRAD_CHECK_EPS, corrupt)?;
            (r, GRAD_TOL_32)
        }
    };
    let bits = match cfg.precision {
        Precision::F32 => 32,
        Precision::F64 => 64,
    };
    let line = format!(
        "grad-check precision={bits} parameters={} max_rel_error={:e} threshold={tol:e}",
        report.checked, report.max_rel_error
    );
    if report.max_rel_error <= tol {
        Ok(Outcome {
            report: None,
            written: vec![],
            message: format!("{line} PASS"),
        })
    } else {
        Err(Error::Numeric(format!(
            "{line} FAIL (worst parameter tensor {}, entry {})",
            report.worst.0, report.worst.1
        )))
    }
}

/// Flags shared by all subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root (artifacts/, reports/, montages/, trace/)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// 32 or 64
    #[arg(long, global = true)]
    pub precision: Option<String>,
    /// Disk radius of the structuring element
    #[arg(long, global = true)]
    pub radius: Option<f64>,
    /// Threads for per-image evaluation
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Override any config key, e.g. --set k=50
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sparse NMF on a split; writes artifact, trace and report
    TrainNmf,
    /// Train the auto-encoder; writes checkpoint, trace and report
    TrainAsymae,
    /// Score a saved model (.mdic or .mnet)
    Eval { artifact: PathBuf },
    /// Atom montage of a saved model
    ExportAtoms {
        artifact: PathBuf,
        #[arg(long)]
        cols: Option<usize>,
        /// No per-tile normalization
        #[arg(long)]
        raw: bool,
    },
    /// Input / dilation / part-based dilation rows for chosen images
    ApproxDilate {
        artifact: PathBuf,
        /// Comma-separated image indices
        #[arg(long, value_delimiter = ',')]
        indices: Vec<usize>,
    },
    /// Finite-difference check of the tiny auto-encoder
    GradCheck {
        /// Inflate one analytic gradient by 10% (checker self-test)
        #[arg(long)]
        corrupt: bool,
    },
}

#[derive(Debug, Clone, Parser)]
#[command(name = "morphdict", version, about = "Part-based dictionaries and morphological approximation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

impl CommonArgs {
    /// Config file, then flags, then `--set` overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(p) = &self.precision {
            cfg.precision = p.parse()?;
        }
        if let Some(r) = self.radius {
            cfg.radius = r;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let mut cfg = cli.common.resolve()?;
    match &cli.command {
        Command::TrainNmf => cmd_train_nmf(&cfg),
        Command::TrainAsymae => cmd_train_asymae(&cfg),
        Command::Eval { artifact } => cmd_eval(&cfg, artifact),
        Command::ExportAtoms { artifact, cols, raw } => {
            if let Some(c) = cols {
                cfg.cols = *c;
            }
            cfg.raw_scale |= raw;
            cmd_export_atoms(&cfg, artifact)
        }
        Command::ApproxDilate { artifact, indices } => cmd_approx_dilate(&cfg, artifact, indices),
        Command::GradCheck { corrupt } => cmd_grad_check(&cfg, *corrupt),
    }
}

/// Parses `args` (including the program name), runs the command, prints
/// its result and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.message);
            if !outcome.message.ends_with('\n') {
                println!();
            }
            for p in &outcome.written {
                eprintln!("wrote {}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("morphdict: {e}");
            exit_code(&e)
        }
    }
}
