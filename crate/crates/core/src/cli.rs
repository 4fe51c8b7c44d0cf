//! Experiment runner behind the `ssse` binary.
//!
//! # Config grammar
//!
//! ```text
//! file    := line*
//! line    := blank | comment | section | entry
//! comment := ('#' | ';') text
//! section := '[' name ']'
//! entry   := key '=' value          (inside a section)
//! ```
//!
//! Keys are unique per section and unknown sections or keys are rejected.
//! List values are separated by whitespace or commas; `centers` uses `;`
//! between points. See the README for every key and its default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{
    build_splits, load_csv, make_blobs, make_gaussian_classes, make_multi_attribute, LabelFormat,
    RemovalSpec, RemovalTarget,
};
use crate::erasure::{
    diag_scrub_update, gradient_ascent_step, influence_update, ssse_update, ErasureRequest,
    GradientSource, HessianSource,
};
use crate::error::{Error, Result};
use crate::eval::{
    boundary_disagreement, decision, epsilon_sweep, select_best, sweep_csv, sweep_json,
    validate_grid, Criterion, EvalReport, Evaluator, GridSpec, SplitMetrics,
};
use crate::fisher::{
    build_inverse_fisher, diagonal_inverse_fisher, load_inverse_fisher, save_inverse_fisher,
    BlockSpec, InverseFisher,
};
use crate::io::{load_model, model_to_bytes, read_file, write_atomic};
use crate::models::{Dataset, LossConfig, ModelParams, Shape, TaskKind};
use crate::training::{retrain_scratch, train, LrSchedule, TrainConfig, TrainedModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "source",
            "seed",
            "test_seed",
            "n_per_class",
            "test_n_per_class",
            "centers",
            "spread",
            "classes",
            "features",
            "separation",
            "n",
            "test_n",
            "rates",
            "signal",
            "noise",
            "train_features",
            "train_labels",
            "test_features",
            "test_labels",
            "labels",
            "num_classes",
        ],
    ),
    ("model", &["kind", "hidden"]),
    ("loss", &["l2"]),
    (
        "train",
        &["lr", "momentum", "epochs", "batch_size", "seed", "grad_tol", "lr_decay"],
    ),
    ("fisher", &["dampening", "max_block", "batch_size", "layout"]),
    ("removal", &["target", "fraction", "seed"]),
    ("sweep", &["grid", "criterion", "gradient_source"]),
    ("baselines", &["ga_lr", "scrub_noise", "scrub_seed"]),
    ("demo", &["x_range", "y_range", "resolution"]),
    ("output", &["dir"]),
];

/// Parsed but untyped config: `(section, key) → (line, value)`.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<&'static (&'static str, &'static [&'static str])> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let at = || format!("config line {line_no}");
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(at(), "unterminated section header"))?
                    .trim();
                section = Some(
                    SECTIONS
                        .iter()
                        .find(|(s, _)| *s == name)
                        .ok_or_else(|| Error::parse(at(), format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(at(), "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let (name, keys) =
                section.ok_or_else(|| Error::parse(at(), "entry before any [section]"))?;
            if !keys.contains(&key) {
                return Err(Error::parse(at(), format!("unknown key `{key}` in [{name}]")));
            }
            let slot = (name.to_string(), key.to_string());
            if entries.contains_key(&slot) {
                return Err(Error::parse(at(), format!("duplicate key [{name}] {key}")));
            }
            entries.insert(slot, (line_no, value.to_string()));
        }
        Ok(Self { entries })
    }

    fn raw(&self, section: &str, key: &str) -> Option<&(usize, String)> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn location(&self, section: &str, key: &str) -> String {
        match self.raw(section, key) {
            Some((line, _)) => format!("config line {line}, [{section}] {key}"),
            None => format!("config [{section}] {key}"),
        }
    }

    fn bad(&self, section: &str, key: &str, msg: impl Into<String>) -> Error {
        Error::parse(self.location(section, key), msg)
    }

    pub fn get_str(&self, section: &str, key: &str) -> Option<&str> {
        self.raw(section, key).map(|(_, v)| v.as_str())
    }

    pub fn get<V: FromStr>(&self, section: &str, key: &str) -> Result<Option<V>> {
        match self.get_str(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| self.bad(section, key, format!("cannot parse `{v}`"))),
        }
    }

    pub fn get_or<V: FromStr>(&self, section: &str, key: &str, default: V) -> Result<V> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    pub fn require<V: FromStr>(&self, section: &str, key: &str) -> Result<V> {
        self.get(section, key)?
            .ok_or_else(|| self.bad(section, key, "required key is missing"))
    }

    pub fn list<V: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<V>>> {
        let Some(v) = self.get_str(section, key) else {
            return Ok(None);
        };
        v.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| self.bad(section, key, format!("cannot parse list item `{s}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs {
        centers: Vec<[f64; 2]>,
        n_per_class: usize,
        test_n_per_class: usize,
        spread: f64,
    },
    Gaussian {
        classes: usize,
        features: usize,
        n_per_class: usize,
        test_n_per_class: usize,
        separation: f64,
        spread: f64,
    },
    MultiAttribute {
        features: usize,
        n: usize,
        test_n: usize,
        rates: Vec<f64>,
        signal: f64,
        noise: f64,
    },
    Csv {
        train_features: PathBuf,
        train_labels: PathBuf,
        test_features: PathBuf,
        test_labels: PathBuf,
        format: LabelFormat,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub seed: u64,
    pub test_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherConfig {
    /// `None` means "use the L2 coefficient".
    pub dampening: Option<f64>,
    /// One block over all parameters, or one per shape parameter group;
    /// either is chunked to `max_block`.
    pub per_group: bool,
    pub max_block: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    /// `None` picks the criterion matching the task.
    pub criterion: Option<Criterion>,
    pub gradient_source: GradientSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub ga_lr: f64,
    pub scrub_noise: f64,
    pub scrub_seed: u64,
}

/// Fully typed experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelKind,
    pub loss: LossConfig<f64>,
    pub train: TrainConfig<f64>,
    pub fisher: FisherConfig,
    pub removal: RemovalSpec,
    pub sweep: SweepConfig,
    pub baselines: BaselineConfig,
    pub demo: GridSpec,
    pub output_dir: PathBuf,
    /// Hex SHA-256 of the config text.
    pub digest: String,
}

fn parse_centers(raw: &RawConfig) -> Result<Vec<[f64; 2]>> {
    let Some(text) = raw.get_str("data", "centers") else {
        return Ok(vec![[-1.0, 0.0], [1.0, 0.0]]);
    };
    text.split(';')
        .map(|pt| {
            let xs: Vec<f64> = pt
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| raw.bad("data", "centers", format!("bad point `{}`", pt.trim())))?;
            match xs[..] {
                [x, y] => Ok([x, y]),
                _ => Err(raw.bad("data", "centers", format!("point `{}` needs two coordinates", pt.trim()))),
            }
        })
        .collect()
}

fn parse_range(raw: &RawConfig, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
    match raw.list::<f64>("demo", key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok((v[0], v[1])),
        Some(_) => Err(raw.bad("demo", key, "expected two numbers")),
    }
}

fn parse_target(raw: &RawConfig) -> Result<RemovalTarget> {
    let text: String = raw.require("removal", "target")?;
    let (kind, idx) = text
        .split_once(':')
        .ok_or_else(|| raw.bad("removal", "target", "expected `class:<i>` or `attribute:<i>`"))?;
    let idx: usize = idx
        .trim()
        .parse()
        .map_err(|_| raw.bad("removal", "target", format!("bad index `{idx}`")))?;
    match kind.trim() {
        "class" => Ok(RemovalTarget::Class(idx)),
        "attribute" => Ok(RemovalTarget::Attribute(idx)),
        other => Err(raw.bad("removal", "target", format!("unknown target kind `{other}`"))),
    }
}

fn parse_schedule(raw: &RawConfig) -> Result<LrSchedule<f64>> {
    let Some(items) = raw.list::<String>("train", "lr_decay")? else {
        return Ok(LrSchedule::Fixed);
    };
    let steps = items
        .iter()
        .map(|item| {
            let (e, f) = item.split_once(':').ok_or_else(|| {
                raw.bad("train", "lr_decay", format!("expected `epoch:factor`, got `{item}`"))
            })?;
            let e = e.parse().map_err(|_| raw.bad("train", "lr_decay", format!("bad epoch `{e}`")))?;
            let f = f.parse().map_err(|_| raw.bad("train", "lr_decay", format!("bad factor `{f}`")))?;
            Ok((e, f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LrSchedule::StepDecay(steps))
}

fn resolve(base: &Path, p: String) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Parse `text`; relative CSV paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        let digest = hex(&Sha256::digest(text.as_bytes()));
        let seed = raw.get_or("data", "seed", 0u64)?;
        let source: String = raw.require("data", "source")?;
        let source = match source.as_str() {
            "blobs" => DataSource::Blobs {
                centers: parse_centers(&raw)?,
                n_per_class: raw.get_or("data", "n_per_class", 100)?,
                test_n_per_class: raw.get_or("data", "test_n_per_class", 100)?,
                spread: raw.get_or("data", "spread", 1.0)?,
            },
            "gaussian" => DataSource::Gaussian {
                classes: raw.get_or("data", "classes", 10)?,
                features: raw.get_or("data", "features", 50)?,
                n_per_class: raw.get_or("data", "n_per_class", 200)?,
                test_n_per_class: raw.get_or("data", "test_n_per_class", 100)?,
                separation: raw.get_or("data", "separation", 1.0)?,
                spread: raw.get_or("data", "spread", 1.0)?,
            },
            "multi_attribute" => DataSource::MultiAttribute {
                features: raw.get_or("data", "features", 20)?,
                n: raw.get_or("data", "n", 1000)?,
                test_n: raw.get_or("data", "test_n", 500)?,
                rates: raw
                    .list("data", "rates")?
                    .unwrap_or_else(|| vec![0.5, 0.4, 0.3, 0.3, 0.2, 0.2, 0.1, 0.05]),
                signal: raw.get_or("data", "signal", 1.0)?,
                noise: raw.get_or("data", "noise", 1.0)?,
            },
            "csv" => {
                let format = match raw.require::<String>("data", "labels")?.as_str() {
                    "binary" => LabelFormat::Binary,
                    "multinomial" => LabelFormat::Multinomial {
                        classes: raw.get("data", "num_classes")?,
                    },
                    other => {
                        return Err(raw.bad("data", "labels", format!("unknown label format `{other}`")))
                    }
                };
                let path = |key: &str| -> Result<PathBuf> {
                    let p = resolve(base_dir, raw.require("data", key)?);
                    if !p.exists() {
                        return Err(raw.bad("data", key, format!("file {} does not exist", p.display())));
                    }
                    Ok(p)
                };
                DataSource::Csv {
                    train_features: path("train_features")?,
                    train_labels: path("train_labels")?,
                    test_features: path("test_features")?,
                    test_labels: path("test_labels")?,
                    format,
                }
            }
            other => return Err(raw.bad("data", "source", format!("unknown source `{other}`"))),
        };
        let data = DataConfig {
            source,
            seed,
            test_seed: raw.get_or("data", "test_seed", seed.wrapping_add(1))?,
        };

        let model = match raw.get_or("model", "kind", "linear".to_string())?.as_str() {
            "linear" => ModelKind::Linear,
            "mlp" => ModelKind::Mlp {
                hidden: raw.require("model", "hidden")?,
            },
            other => return Err(raw.bad("model", "kind", format!("unknown model kind `{other}`"))),
        };

        let l2: f64 = raw.get_or("loss", "l2", 1e-3)?;
        let loss = LossConfig::new(l2).map_err(|e| raw.bad("loss", "l2", e.to_string()))?;

        let defaults = TrainConfig::<f64>::default();
        let train = TrainConfig {
            lr: raw.get_or("train", "lr", defaults.lr)?,
            momentum: raw.get_or("train", "momentum", defaults.momentum)?,
            epochs: raw.get_or("train", "epochs", defaults.epochs)?,
            batch_size: raw.get_or("train", "batch_size", defaults.batch_size)?,
            seed: raw.get_or("train", "seed", defaults.seed)?,
            grad_tol: raw.get_or("train", "grad_tol", defaults.grad_tol)?,
            schedule: parse_schedule(&raw)?,
        };
        train
            .validate()
            .map_err(|e| Error::parse("config [train]", e.to_string()))?;

        let fisher = FisherConfig {
            dampening: raw.get("fisher", "dampening")?,
            per_group: match raw.get_or("fisher", "layout", "full".to_string())?.as_str() {
                "full" => false,
                "groups" => true,
                other => return Err(raw.bad("fisher", "layout", format!("unknown layout `{other}`"))),
            },
            max_block: raw.get_or("fisher", "max_block", 4096)?,
            batch_size: raw.get_or("fisher", "batch_size", 1)?,
        };
        let dampening = fisher.dampening.unwrap_or(l2);
        if !(dampening > 0.0) || !dampening.is_finite() {
            return Err(raw.bad(
                "fisher",
                "dampening",
                "dampening must be > 0 (it defaults to [loss] l2, which is 0)",
            ));
        }
        if fisher.max_block == 0 || fisher.batch_size == 0 {
            return Err(Error::parse("config [fisher]", "max_block and batch_size must be positive"));
        }

        let removal = RemovalSpec {
            target: parse_target(&raw)?,
            fraction: raw.get_or("removal", "fraction", 1.0)?,
            seed: raw.get_or("removal", "seed", 0)?,
        };
        if !(removal.fraction > 0.0 && removal.fraction <= 1.0) {
            return Err(raw.bad("removal", "fraction", "must lie in (0, 1]"));
        }

        let grid = raw
            .list("sweep", "grid")?
            .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]);
        validate_grid(&grid).map_err(|e| raw.bad("sweep", "grid", e.to_string()))?;
        let criterion = match raw.get_str("sweep", "criterion") {
            None => None,
            Some(s) => Some(
                Criterion::parse(s)
                    .ok_or_else(|| raw.bad("sweep", "criterion", format!("unknown criterion `{s}`")))?,
            ),
        };
        let gradient_source = match raw.get_or("sweep", "gradient_source", "removed".to_string())?.as_str() {
            "removed" => GradientSource::Removed,
            "remaining" => GradientSource::Remaining,
            other => {
                return Err(raw.bad("sweep", "gradient_source", format!("unknown source `{other}`")))
            }
        };

        let baselines = BaselineConfig {
            ga_lr: raw.get_or("baselines", "ga_lr", 0.1)?,
            scrub_noise: raw.get_or("baselines", "scrub_noise", 0.0)?,
            scrub_seed: raw.get_or("baselines", "scrub_seed", 0)?,
        };
        let demo = GridSpec {
            x_range: parse_range(&raw, "x_range", (-4.0, 4.0))?,
            y_range: parse_range(&raw, "y_range", (-4.0, 4.0))?,
            resolution: raw.get_or("demo", "resolution", 101)?,
        };
        demo.validate()
            .map_err(|e| Error::parse("config [demo]", e.to_string()))?;

        Ok(Self {
            data,
            model,
            loss,
            train,
            fisher,
            removal,
            sweep: SweepConfig {
                grid,
                criterion,
                gradient_source,
            },
            baselines,
            demo,
            output_dir: PathBuf::from(raw.get_or("output", "dir", "out".to_string())?),
            digest,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::parse(path.display().to_string(), "config is not UTF-8"))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn dampening(&self) -> f64 {
        self.fisher.dampening.unwrap_or(self.loss.l2_coeff)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Train and test sets. Test ids start right after the largest train id.
pub fn load_datasets(cfg: &DataConfig) -> Result<(Dataset<f64>, Dataset<f64>)> {
    let (train, test) = match &cfg.source {
        DataSource::Blobs {
            centers,
            n_per_class,
            test_n_per_class,
            spread,
        } => (
            make_blobs(cfg.seed, *n_per_class, centers, *spread)?,
            make_blobs(cfg.test_seed, *test_n_per_class, centers, *spread)?,
        ),
        DataSource::Gaussian {
            classes,
            features,
            n_per_class,
            test_n_per_class,
            separation,
            spread,
        } => (
            make_gaussian_classes(cfg.seed, cfg.seed.wrapping_add(1_000_003), *classes, *features, *n_per_class, *separation, *spread)?,
            make_gaussian_classes(cfg.seed, cfg.test_seed.wrapping_add(2_000_003), *classes, *features, *test_n_per_class, *separation, *spread)?,
        ),
        DataSource::MultiAttribute {
            features,
            n,
            test_n,
            rates,
            signal,
            noise,
        } => (
            make_multi_attribute(cfg.seed, cfg.seed.wrapping_add(1_000_003), *n, *features, rates, *signal, *noise)?,
            make_multi_attribute(cfg.seed, cfg.test_seed.wrapping_add(2_000_003), *test_n, *features, rates, *signal, *noise)?,
        ),
        DataSource::Csv {
            train_features,
            train_labels,
            test_features,
            test_labels,
            format,
        } => {
            let train = load_csv(train_features, train_labels, *format, 0)?;
            let test = load_csv(test_features, test_labels, *format, train.len() as u64)?;
            if train.labels().outputs() != test.labels().outputs() {
                return Err(Error::invalid(format!(
                    "train has {} outputs, test has {}",
                    train.labels().outputs(),
                    test.labels().outputs()
                )));
            }
            (train, test)
        }
    };
    let offset = train.ids().iter().max().map_or(0, |m| m + 1);
    Ok((train, test.reindexed(offset)?))
}

pub fn model_shape(kind: ModelKind, ds: &Dataset<f64>) -> Result<Shape> {
    let features = ds.num_features();
    let outputs = ds.labels().outputs();
    match (kind, ds.task_kind()) {
        (ModelKind::Linear, TaskKind::MultiAttribute) => Ok(Shape::MultiAttrLinear {
            attributes: outputs,
            features,
        }),
        (ModelKind::Linear, TaskKind::Multinomial) => Ok(Shape::MultinomialLinear {
            classes: outputs,
            features,
        }),
        (ModelKind::Mlp { hidden }, TaskKind::Multinomial) => Ok(Shape::Mlp {
            inputs: features,
            hidden,
            classes: outputs,
        }),
        (ModelKind::Mlp { .. }, TaskKind::MultiAttribute) => Err(Error::invalid(
            "the MLP supports multinomial labels only",
        )),
    }
}

/// Everything derived from a config before any erasure.
pub struct Prepared {
    pub train: Dataset<f64>,
    pub test: Dataset<f64>,
    pub shape: Shape,
    pub splits: crate::eval::SplitSet,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (train, test) = load_datasets(&cfg.data)?;
    let shape = model_shape(cfg.model, &train)?;
    let splits = build_splits(&train, &test, &cfg.removal)?;
    Ok(Prepared {
        train,
        test,
        shape,
        splits,
    })
}

pub fn fit(cfg: &ExperimentConfig, p: &Prepared) -> Result<TrainedModel<f64>> {
    let trained = train(&p.train, p.shape, &cfg.loss, &cfg.train)?;
    log::info!(
        "trained: loss {:.6e}, grad norm {:.3e}, {} epochs",
        trained.report.final_loss,
        trained.report.grad_norm,
        trained.report.epochs_run
    );
    Ok(trained)
}

pub fn fit_retrain(cfg: &ExperimentConfig, p: &Prepared) -> Result<TrainedModel<f64>> {
    let trained = retrain_scratch(&p.train, p.splits.removed(), p.shape, &cfg.loss, &cfg.train)?;
    log::info!(
        "retrained without {} samples: loss {:.6e}",
        p.splits.removed().len(),
        trained.report.final_loss
    );
    Ok(trained)
}

pub fn fisher_for(
    cfg: &ExperimentConfig,
    theta: &ModelParams<f64>,
    loss: &LossConfig<f64>,
    train: &Dataset<f64>,
) -> Result<InverseFisher<f64>> {
    let spec = if cfg.fisher.per_group {
        BlockSpec::for_shape(&theta.shape(), cfg.fisher.max_block)?
    } else {
        let d = theta.len();
        let b = cfg.fisher.max_block;
        BlockSpec::new((0..d).step_by(b).map(|s| s..(s + b).min(d)).collect(), b)?
    };
    build_inverse_fisher(theta, train, loss, cfg.dampening(), &spec, cfg.fisher.batch_size)
}

fn criterion_for(cfg: &ExperimentConfig, task: TaskKind) -> Criterion {
    cfg.sweep.criterion.unwrap_or(Criterion::default_for(task))
}

fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = out_path(dir, name);
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn to_json<V: Serialize>(v: &V) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
struct TrainManifest {
    config_sha256: String,
    model_sha256: String,
    shape: String,
    num_params: usize,
    seed: u64,
    final_loss: f64,
    grad_norm: f64,
    epochs_run: usize,
    converged: bool,
}

/// `model.bin` and `train_manifest.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let p = prepare(cfg)?;
    let trained = fit(cfg, &p)?;
    let bytes = model_to_bytes(&trained.params, &cfg.loss);
    let model_path = out_path(out, "model.bin");
    write_atomic(&model_path, &bytes)?;
    let manifest = TrainManifest {
        config_sha256: cfg.digest.clone(),
        model_sha256: sha256_hex(&bytes),
        shape: format!("{:?}", trained.params.shape()),
        num_params: trained.params.len(),
        seed: cfg.train.seed,
        final_loss: trained.report.final_loss,
        grad_norm: trained.report.grad_norm,
        epochs_run: trained.report.epochs_run,
        converged: trained.report.converged,
    };
    let manifest_path = write_text(out, "train_manifest.json", &to_json(&manifest))?;
    Ok(vec![model_path, manifest_path])
}

fn load_checked_model(path: &Path, p: &Prepared) -> Result<(ModelParams<f64>, LossConfig<f64>)> {
    let (theta, loss) = load_model::<f64>(path)?;
    if theta.shape() != p.shape {
        return Err(Error::invalid(format!(
            "model {} has shape {:?}, config implies {:?}",
            path.display(),
            theta.shape(),
            p.shape
        )));
    }
    Ok((theta, loss))
}

/// `fisher.bin` for the model at `model_path`.
pub fn cmd_fisher(cfg: &ExperimentConfig, model_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let p = prepare(cfg)?;
    let (theta, loss) = load_checked_model(model_path, &p)?;
    let finv = fisher_for(cfg, &theta, &loss, &p.train)?;
    let path = out_path(out, "fisher.bin");
    save_inverse_fisher(&finv, &path)?;
    Ok(vec![path])
}

/// File name of the erased model for grid point `index`.
pub fn erased_file_name(index: usize, epsilon: f64) -> String {
    format!("erased_{index:03}_eps_{epsilon}.bin")
}

/// One erased model per grid ε plus `erase_index.csv`.
pub fn cmd_erase(
    cfg: &ExperimentConfig,
    model_path: &Path,
    fisher_path: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let p = prepare(cfg)?;
    let (theta, loss) = load_checked_model(model_path, &p)?;
    let finv = load_inverse_fisher::<f64>(fisher_path)?;
    let mut index = String::from("index,epsilon,file,sha256\n");
    let mut written = Vec::new();
    for (i, &eps) in cfg.sweep.grid.iter().enumerate() {
        let req = ErasureRequest {
            removed_ids: p.splits.removed().to_vec(),
            epsilon: eps,
            gradient_source: cfg.sweep.gradient_source,
        };
        let erased = ssse_update(&theta, &finv, &p.train, &loss, &req)?;
        let bytes = model_to_bytes(&erased, &loss);
        let name = erased_file_name(i, eps);
        let path = out_path(out, &name);
        write_atomic(&path, &bytes)?;
        let _ = writeln!(index, "{i},{eps},{name},{}", sha256_hex(&bytes));
        written.push(path);
    }
    written.push(write_text(out, "erase_index.csv", &index)?);
    Ok(written)
}

/// Trained model, its inverse Fisher, the retrain reference and the
/// evaluator for one config.
pub struct Experiment {
    pub prepared: Prepared,
    pub theta_star: ModelParams<f64>,
    pub theta_retrain: ModelParams<f64>,
    pub finv: InverseFisher<f64>,
    pub evaluator: Evaluator<f64>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    let prepared = prepare(cfg)?;
    let (star, retrain) = rayon::join(|| fit(cfg, &prepared), || fit_retrain(cfg, &prepared));
    let (theta_star, theta_retrain) = (star?.params, retrain?.params);
    let finv = fisher_for(cfg, &theta_star, &cfg.loss, &prepared.train)?;
    let evaluator = Evaluator::new(
        &prepared.train,
        &prepared.test,
        &prepared.splits,
        &cfg.loss,
        &theta_star,
        &theta_retrain,
    )?;
    Ok(Experiment {
        prepared,
        theta_star,
        theta_retrain,
        finv,
        evaluator,
    })
}

/// `sweep_report.json` and `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let exp = run_experiment(cfg)?;
    let criterion = criterion_for(cfg, exp.evaluator.task_kind());
    let sweep = epsilon_sweep(
        &exp.evaluator,
        &exp.finv,
        &cfg.sweep.grid,
        criterion,
        cfg.sweep.gradient_source,
    )?;
    log::info!("best epsilon by {}: {}", criterion.name(), sweep.best_epsilon);
    Ok(vec![
        write_text(out, "sweep_report.json", &sweep_json(&sweep))?,
        write_text(out, "sweep.csv", &sweep_csv(&sweep))?,
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundarySummary {
    pub removed: usize,
    pub best_epsilon: f64,
    /// Disagreement with the retrained model on the grid.
    pub original: f64,
    pub ssse: f64,
    pub influence_full: f64,
    pub influence_lko: f64,
    /// Disagreement per ε, in grid order.
    pub ssse_by_epsilon: Vec<f64>,
}

/// Models of the boundary demo and their disagreement with retraining.
pub struct BoundaryDemo {
    pub summary: BoundarySummary,
    pub original: ModelParams<f64>,
    pub retrain: ModelParams<f64>,
    pub ssse: ModelParams<f64>,
    pub influence_full: ModelParams<f64>,
    pub influence_lko: ModelParams<f64>,
}

/// The ε of the SSSE model is the grid point closest to retraining on the
/// demo grid (lowest ε on ties).
pub fn run_boundary_demo(cfg: &ExperimentConfig) -> Result<BoundaryDemo> {
    let exp = run_experiment(cfg)?;
    if exp.theta_star.shape().input_dim() != 2 {
        return Err(Error::invalid("demo-boundary needs two-dimensional data"));
    }
    let train = &exp.prepared.train;
    let removed = exp.prepared.splits.removed();
    let models = cfg
        .sweep
        .grid
        .iter()
        .map(|&eps| {
            let req = ErasureRequest {
                removed_ids: removed.to_vec(),
                epsilon: eps,
                gradient_source: cfg.sweep.gradient_source,
            };
            ssse_update(&exp.theta_star, &exp.finv, train, &cfg.loss, &req)
        })
        .collect::<Result<Vec<_>>>()?;
    let disagreement = |m: &ModelParams<f64>| boundary_disagreement(m, &exp.theta_retrain, &cfg.demo);
    let by_eps = models.iter().map(disagreement).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, d) in by_eps.iter().enumerate() {
        if *d < by_eps[best] {
            best = i;
        }
    }
    let influence_full = influence_update(&exp.theta_star, train, &cfg.loss, removed, HessianSource::Full)?;
    let influence_lko = influence_update(&exp.theta_star, train, &cfg.loss, removed, HessianSource::LeaveOut)?;
    let summary = BoundarySummary {
        removed: removed.len(),
        best_epsilon: cfg.sweep.grid[best],
        original: disagreement(&exp.theta_star)?,
        ssse: by_eps[best],
        influence_full: disagreement(&influence_full)?,
        influence_lko: disagreement(&influence_lko)?,
        ssse_by_epsilon: by_eps,
    };
    Ok(BoundaryDemo {
        summary,
        original: exp.theta_star,
        retrain: exp.theta_retrain,
        ssse: models[best].clone(),
        influence_full,
        influence_lko,
    })
}

fn decision_cell(params: &ModelParams<f64>, x: &[f64]) -> String {
    let d = decision(params, x);
    match d[..] {
        [single] => single.to_string(),
        _ => d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
    }
}

/// `boundary.csv` (one row per grid point) and `boundary_summary.json`.
pub fn cmd_demo_boundary(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let demo = run_boundary_demo(cfg)?;
    let mut csv = String::from("x,y,original,retrain,ssse,influence_full,influence_lko\n");
    for pt in cfg.demo.points() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            pt[0],
            pt[1],
            decision_cell(&demo.original, &pt),
            decision_cell(&demo.retrain, &pt),
            decision_cell(&demo.ssse, &pt),
            decision_cell(&demo.influence_full, &pt),
            decision_cell(&demo.influence_lko, &pt),
        );
    }
    Ok(vec![
        write_text(out, "boundary.csv", &csv)?,
        write_text(out, "boundary_summary.json", &to_json(&demo.summary))?,
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitDeltas {
    pub lko_train: f64,
    pub removed: f64,
    pub lko_test: Option<f64>,
    pub removed_test: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodResult {
    pub method: String,
    pub report: EvalReport,
    /// `|acc(method) - acc(retrain)|` per split.
    pub accuracy_delta: SplitDeltas,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineReport {
    pub criterion: Criterion,
    pub removed: usize,
    pub retrain: EvalReport,
    pub methods: Vec<MethodResult>,
}

fn deltas(a: &EvalReport, r: &EvalReport) -> SplitDeltas {
    let opt = |x: &Option<SplitMetrics>, y: &Option<SplitMetrics>| match (x, y) {
        (Some(x), Some(y)) => Some((x.accuracy - y.accuracy).abs()),
        _ => None,
    };
    SplitDeltas {
        lko_train: (a.lko_train.accuracy - r.lko_train.accuracy).abs(),
        removed: (a.removed.accuracy - r.removed.accuracy).abs(),
        lko_test: opt(&a.lko_test, &r.lko_test),
        removed_test: opt(&a.removed_test, &r.removed_test),
    }
}

/// Evaluate the original model, SSSE and the diagonal scrub (each at its best
/// grid ε) and one gradient-ascent step against the retrained model.
pub fn run_baselines(cfg: &ExperimentConfig) -> Result<BaselineReport> {
    let exp = run_experiment(cfg)?;
    let ev = &exp.evaluator;
    let criterion = criterion_for(cfg, ev.task_kind());
    let train = &exp.prepared.train;
    let removed = exp.prepared.splits.removed();
    let retrain = ev.evaluate(&exp.theta_retrain, 0.0)?;

    let ssse = epsilon_sweep(ev, &exp.finv, &cfg.sweep.grid, criterion, cfg.sweep.gradient_source)?;
    let diag = diagonal_inverse_fisher(&exp.theta_star, train, &cfg.loss, cfg.dampening())?;
    let scrub_reports = cfg
        .sweep
        .grid
        .iter()
        .map(|&eps| {
            let req = ErasureRequest {
                removed_ids: removed.to_vec(),
                epsilon: eps,
                gradient_source: cfg.sweep.gradient_source,
            };
            let m = diag_scrub_update(
                &exp.theta_star,
                &diag,
                train,
                &cfg.loss,
                &req,
                cfg.baselines.scrub_noise,
                cfg.baselines.scrub_seed,
            )?;
            ev.evaluate(&m, eps)
        })
        .collect::<Result<Vec<_>>>()?;
    let scrub_best = select_best(criterion, &scrub_reports).expect("grid is non-empty");
    let ga = gradient_ascent_step(&exp.theta_star, train, &cfg.loss, removed, cfg.baselines.ga_lr)?;

    let entries = [
        ("original", ev.evaluate(&exp.theta_star, 0.0)?),
        ("ssse", ssse.best().clone()),
        ("gradient_ascent", ev.evaluate(&ga, cfg.baselines.ga_lr)?),
        ("diag_scrub", scrub_reports[scrub_best].clone()),
    ];
    let methods = entries
        .into_iter()
        .map(|(name, report)| MethodResult {
            method: name.to_string(),
            accuracy_delta: deltas(&report, &retrain),
            report,
        })
        .collect();
    Ok(BaselineReport {
        criterion,
        removed: removed.len(),
        retrain,
        methods,
    })
}

/// `baselines.json` and `baselines.csv`.
pub fn cmd_compare_baselines(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let report = run_baselines(cfg)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = String::from(
        "method,epsilon,gamma,delta,param_dist,dacc_lko_train,dacc_removed,dacc_lko_test,dacc_removed_test\n",
    );
    for m in &report.methods {
        let r = &m.report;
        let d = &m.accuracy_delta;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            m.method,
            r.epsilon,
            opt(r.gamma),
            opt(r.delta),
            r.param_dist_normalized,
            d.lko_train,
            d.removed,
            opt(d.lko_test),
            opt(d.removed_test),
        );
    }
    Ok(vec![
        write_text(out, "baselines.json", &to_json(&report))?,
        write_text(out, "baselines.csv", &csv)?,
    ])
}

#[derive(Debug, Parser)]
#[command(name = "ssse", version, about = "Single-step sample erasure experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the model and write `model.bin` with a run manifest.
    Train(Common),
    /// Build the inverse Fisher for a trained model.
    Fisher {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/model.bin`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Apply the erasure update for every ε of the grid.
    Erase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        fisher: Option<PathBuf>,
    },
    /// Train, retrain, sweep ε and write the reports.
    Sweep(Common),
    /// Two-dimensional decision-boundary comparison.
    DemoBoundary(Common),
    /// Compare SSSE with gradient ascent and the diagonal scrub.
    CompareBaselines(Common),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Train(c) | Command::Sweep(c) | Command::DemoBoundary(c) | Command::CompareBaselines(c) => c,
            Command::Fisher { common, .. } | Command::Erase { common, .. } => common,
        }
    }
}

/// Run one command and return the written files.
pub fn execute(command: &Command) -> Result<Vec<PathBuf>> {
    let common = command.common();
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let default_model = || out.join("model.bin");
    match command {
        Command::Train(_) => cmd_train(&cfg, &out),
        Command::Fisher { model, .. } => {
            cmd_fisher(&cfg, &model.clone().unwrap_or_else(default_model), &out)
        }
        Command::Erase { model, fisher, .. } => cmd_erase(
            &cfg,
            &model.clone().unwrap_or_else(default_model),
            &fisher.clone().unwrap_or_else(|| out.join("fisher.bin")),
            &out,
        ),
        Command::Sweep(_) => cmd_sweep(&cfg, &out),
        Command::DemoBoundary(_) => cmd_demo_boundary(&cfg, &out),
        Command::CompareBaselines(_) => cmd_compare_baselines(&cfg, &out),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

/// Parse arguments, run, report, and return the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let level = if cli.command.common().verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    match execute(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
