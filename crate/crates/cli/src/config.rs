//! Flat `key = value` run configuration.
//!
//! Values come from an optional config file and from command-line overrides. A key may
//! appear at most once per source; an override replaces the file value. Every key is
//! parsed and checked before any command does work.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use vmfml::cluster::EmMode;
use vmfml::data::Split;
use vmfml::network::Activation;
use vmfml::trainer::{LrSchedule, UpdateInterval};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{source_name}:{line}: expected `key = value`, got `{text}`")]
    Syntax {
        source_name: String,
        line: usize,
        text: String,
    },
    #[error("{source_name}: key `{key}` given more than once")]
    Duplicate { source_name: String, key: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("keys `{0}` and `{1}` cannot both be set")]
    Conflict(&'static str, &'static str),
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Every accepted key with its default (`None` when there is no default) and a short
/// description for `vmfml keys`.
pub const KEYS: &[(&str, Option<&str>, &str)] = &[
    ("seed", Some("0"), "global seed; every random stream derives from it"),
    ("output_dir", Some("vmfml-out"), "directory receiving all artifacts"),
    ("train_images", None, "IDX image file of the training split"),
    ("train_labels", None, "IDX label file of the training split"),
    ("test_images", None, "IDX image file of the test split"),
    ("test_labels", None, "IDX label file of the test split"),
    ("train_csv", None, "CSV file of the training split (alternative to IDX)"),
    ("test_csv", None, "CSV file of the test split (alternative to IDX)"),
    (
        "split",
        Some("test"),
        "split read by eval, retrieve, embed, diagnose and cluster",
    ),
    ("limit", None, "use only the first N samples of each split"),
    (
        "checkpoint",
        None,
        "checkpoint read by eval, retrieve, embed, diagnose and cluster",
    ),
    ("embedding_dim", Some("2"), "embedding dimension p"),
    (
        "hidden",
        Some("256"),
        "comma-separated hidden layer widths; empty for none",
    ),
    ("activation", Some("relu"), "hidden activation: relu or tanh"),
    ("kappa", Some("15"), "shared concentration of the training objective"),
    ("epochs", Some("10"), "training epochs"),
    ("batch_size", Some("64"), "mini-batch size"),
    (
        "update_interval",
        Some("epoch"),
        "prototype refresh interval: `epoch` or an iteration count",
    ),
    ("learning_rate", Some("0.01"), "constant learning rate"),
    (
        "lr_schedule",
        None,
        "piecewise-constant schedule `iter:rate,iter:rate`, first iter 0",
    ),
    ("momentum", Some("0.9"), "SGD momentum"),
    ("ks", Some("1,2,4,8"), "comma-separated K values for Recall@K"),
    (
        "method",
        Some("kmeans"),
        "clustering method: kmeans, movmf-soft or movmf-hard",
    ),
    (
        "clusters",
        None,
        "number of clusters; defaults to the number of classes",
    ),
    ("max_iter", Some("100"), "clustering iteration cap"),
    ("tol", Some("1e-8"), "clustering convergence tolerance"),
    (
        "embeddings",
        None,
        "embedding file to cluster instead of checkpoint + data",
    ),
    ("sample_dim", Some("3"), "dimension of sampled clouds"),
    (
        "sample_kappas",
        Some("1,10,100"),
        "comma-separated concentrations to sample",
    ),
    ("sample_count", Some("500"), "points per sampled cloud"),
    (
        "sample_mean",
        None,
        "comma-separated mean direction; defaults to the last axis",
    ),
];

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

/// Raw key/value pairs of one source, each key at most once.
#[derive(Debug, Default, Clone)]
pub struct Layer(BTreeMap<String, String>);

impl Layer {
    pub fn insert(&mut self, source_name: &str, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        if self.0.insert(key.to_string(), value.to_string()).is_some() {
            return Err(ConfigError::Duplicate {
                source_name: source_name.to_string(),
                key: key.to_string(),
            });
        }
        Ok(())
    }

    pub fn parse_file_text(text: &str, source_name: &str) -> Result<Self> {
        let mut layer = Layer::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = split_pair(line).ok_or_else(|| ConfigError::Syntax {
                source_name: source_name.to_string(),
                line: i + 1,
                text: raw.to_string(),
            })?;
            layer.insert(source_name, key, value)?;
        }
        Ok(layer)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_file_text(&text, &path.display().to_string())
    }

    /// Parses `key=value` override strings.
    pub fn from_overrides<'a>(pairs: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut layer = Layer::default();
        for pair in pairs {
            let (key, value) = split_pair(pair).ok_or_else(|| ConfigError::Syntax {
                source_name: "command line".into(),
                line: 0,
                text: pair.to_string(),
            })?;
            layer.insert("command line", key, value)?;
        }
        Ok(layer)
    }
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then_some((k, v.trim()))
}

/// File values overlaid by command-line values, with defaults filled in.
#[derive(Debug, Clone)]
pub struct Resolved(BTreeMap<String, String>);

impl Resolved {
    pub fn merge(file: Layer, flags: Layer) -> Self {
        let mut map: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|(k, d, _)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        map.extend(file.0);
        map.extend(flags.0);
        Resolved(map)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::Invalid {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn required<T: std::str::FromStr>(&self, key: &'static str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or(ConfigError::Missing(key))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>().map_err(|e| ConfigError::Invalid {
                            key: key.to_string(),
                            value: v.to_string(),
                            reason: e.to_string(),
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    /// The fully resolved configuration, one `key = value` line per key.
    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx { images: PathBuf, labels: PathBuf },
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMethod {
    KMeans,
    MovMf(EmMode),
}

impl std::str::FromStr for ClusterMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kmeans" => Ok(ClusterMethod::KMeans),
            "movmf-soft" => Ok(ClusterMethod::MovMf(EmMode::Soft)),
            "movmf-hard" => Ok(ClusterMethod::MovMf(EmMode::Hard)),
            _ => Err("expected kmeans, movmf-soft or movmf-hard".into()),
        }
    }
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterMethod::KMeans => f.write_str("kmeans"),
            ClusterMethod::MovMf(mode) => write!(f, "movmf-{mode}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub train_data: Option<DataSource>,
    pub test_data: Option<DataSource>,
    pub split: Split,
    pub limit: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub kappa: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub update_interval: UpdateInterval,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub ks: Vec<usize>,
    pub method: ClusterMethod,
    pub clusters: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub embeddings: Option<PathBuf>,
    pub sample_dim: usize,
    pub sample_kappas: Vec<f64>,
    pub sample_count: usize,
    pub sample_mean: Option<Vec<f64>>,
    pub resolved: Resolved,
}

fn invalid(key: &str, value: impl fmt::Display, reason: &str) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn data_source(r: &Resolved, prefix: &'static str) -> Result<Option<DataSource>> {
    let (images_key, labels_key, csv_key) = match prefix {
        "train" => ("train_images", "train_labels", "train_csv"),
        _ => ("test_images", "test_labels", "test_csv"),
    };
    let images = r.get::<PathBuf>(images_key)?;
    let labels = r.get::<PathBuf>(labels_key)?;
    let csv = r.get::<PathBuf>(csv_key)?;
    match (images, labels, csv) {
        (None, None, None) => Ok(None),
        (None, None, Some(path)) => Ok(Some(DataSource::Csv(path))),
        (Some(images), Some(labels), None) => Ok(Some(DataSource::Idx { images, labels })),
        (Some(_), None, _) => Err(ConfigError::Missing(labels_key)),
        (None, Some(_), _) => Err(ConfigError::Missing(images_key)),
        (Some(_), Some(_), Some(_)) => Err(ConfigError::Conflict(images_key, csv_key)),
    }
}

fn parse_schedule(value: &str) -> Result<LrSchedule> {
    let steps = value
        .split(',')
        .map(|step| {
            let (it, rate) = step
                .split_once(':')
                .ok_or_else(|| invalid("lr_schedule", value, "expected iter:rate"))?;
            let it = it
                .trim()
                .parse::<usize>()
                .map_err(|e| invalid("lr_schedule", value, &e.to_string()))?;
            let rate = rate
                .trim()
                .parse::<f64>()
                .map_err(|e| invalid("lr_schedule", value, &e.to_string()))?;
            Ok((it, rate))
        })
        .collect::<Result<Vec<_>>>()?;
    LrSchedule::new(steps).map_err(|e| invalid("lr_schedule", value, &e.to_string()))
}

impl RunConfig {
    pub fn from_resolved(r: Resolved, lr_from_file_and_flags: (bool, bool)) -> Result<Self> {
        let split = match r.raw("split").unwrap_or("test") {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(invalid("split", other, "expected train or test")),
        };
        let update_interval = match r.raw("update_interval").unwrap_or("epoch") {
            "epoch" => UpdateInterval::Epoch,
            other => match other.parse::<usize>() {
                Ok(l) if l > 0 => UpdateInterval::Iterations(l),
                _ => {
                    return Err(invalid(
                        "update_interval",
                        other,
                        "expected `epoch` or a positive count",
                    ))
                }
            },
        };
        let (lr_in_file, lr_in_flags) = lr_from_file_and_flags;
        let lr_schedule = match r.raw("lr_schedule") {
            Some(_) if lr_in_file || lr_in_flags => return Err(ConfigError::Conflict("learning_rate", "lr_schedule")),
            Some(s) => parse_schedule(s)?,
            None => {
                let lr: f64 = r.required("learning_rate")?;
                LrSchedule::constant(lr).map_err(|e| invalid("learning_rate", lr, &e.to_string()))?
            }
        };
        let activation = r
            .raw("activation")
            .unwrap_or("relu")
            .parse::<Activation>()
            .map_err(|e| invalid("activation", r.raw("activation").unwrap_or(""), &e.to_string()))?;
        let ks: Vec<usize> = r.list("ks")?.unwrap_or_default();
        if ks.is_empty() || ks.contains(&0) {
            return Err(invalid(
                "ks",
                r.raw("ks").unwrap_or(""),
                "need one or more positive K values",
            ));
        }
        let sample_kappas: Vec<f64> = r.list("sample_kappas")?.unwrap_or_default();
        if sample_kappas.is_empty() || sample_kappas.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(invalid(
                "sample_kappas",
                r.raw("sample_kappas").unwrap_or(""),
                "need finite values >= 0",
            ));
        }
        let cfg = RunConfig {
            seed: r.required("seed")?,
            output_dir: r.required("output_dir")?,
            train_data: data_source(&r, "train")?,
            test_data: data_source(&r, "test")?,
            split,
            limit: r.get("limit")?,
            checkpoint: r.get("checkpoint")?,
            embedding_dim: r.required("embedding_dim")?,
            hidden: r.list("hidden")?.unwrap_or_default(),
            activation,
            kappa: r.required("kappa")?,
            epochs: r.required("epochs")?,
            batch_size: r.required("batch_size")?,
            update_interval,
            lr_schedule,
            momentum: r.required("momentum")?,
            ks,
            method: r.required("method")?,
            clusters: r.get("clusters")?,
            max_iter: r.required("max_iter")?,
            tol: r.required("tol")?,
            embeddings: r.get("embeddings")?,
            sample_dim: r.required("sample_dim")?,
            sample_kappas,
            sample_count: r.required("sample_count")?,
            sample_mean: r.list("sample_mean")?,
            resolved: r,
        };
        cfg.check_ranges()?;
        Ok(cfg)
    }

    fn check_ranges(&self) -> Result<()> {
        let checks: [(&str, bool, String, &str); 9] = [
            (
                "embedding_dim",
                self.embedding_dim >= 2,
                self.embedding_dim.to_string(),
                "must be >= 2",
            ),
            (
                "kappa",
                self.kappa.is_finite() && self.kappa >= 0.0,
                self.kappa.to_string(),
                "must be finite and >= 0",
            ),
            ("epochs", self.epochs >= 1, self.epochs.to_string(), "must be >= 1"),
            (
                "batch_size",
                self.batch_size >= 1,
                self.batch_size.to_string(),
                "must be >= 1",
            ),
            (
                "momentum",
                (0.0..1.0).contains(&self.momentum),
                self.momentum.to_string(),
                "must lie in [0, 1)",
            ),
            (
                "max_iter",
                self.max_iter >= 1,
                self.max_iter.to_string(),
                "must be >= 1",
            ),
            (
                "tol",
                self.tol.is_finite() && self.tol >= 0.0,
                self.tol.to_string(),
                "must be finite and >= 0",
            ),
            (
                "sample_dim",
                self.sample_dim >= 2,
                self.sample_dim.to_string(),
                "must be >= 2",
            ),
            (
                "sample_count",
                self.sample_count >= 1,
                self.sample_count.to_string(),
                "must be >= 1",
            ),
        ];
        for (key, ok, value, reason) in checks {
            if !ok {
                return Err(invalid(key, value, reason));
            }
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden", format!("{:?}", self.hidden), "widths must be >= 1"));
        }
        if self.limit == Some(0) {
            return Err(invalid("limit", 0, "must be >= 1"));
        }
        if let Some(mean) = &self.sample_mean {
            if mean.len() != self.sample_dim {
                return Err(invalid(
                    "sample_mean",
                    format!("{mean:?}"),
                    "length must equal sample_dim",
                ));
            }
        }
        Ok(())
    }

    /// Loads file and override layers and resolves them.
    pub fn load(config_file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file = match config_file {
            Some(path) => Layer::read_file(path)?,
            None => Layer::default(),
        };
        let flags = Layer::from_overrides(overrides.iter().map(String::as_str))?;
        let lr_given = (
            file.0.contains_key("learning_rate"),
            flags.0.contains_key("learning_rate"),
        );
        Self::from_resolved(Resolved::merge(file, flags), lr_given)
    }

    /// Seed of a named random stream, derived from the global seed.
    pub fn sub_seed(&self, name: &str) -> u64 {
        sub_seed(self.seed, name)
    }
}

/// SplitMix64 finalizer applied to the global seed mixed with an FNV-1a hash of the name.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let hash = name.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    let mut z = seed ^ hash;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(file: &str, flags: &[&str]) -> Result<RunConfig> {
        let file = Layer::parse_file_text(file, "test.cfg")?;
        let flags = Layer::from_overrides(flags.iter().copied())?;
        let lr = (
            file.0.contains_key("learning_rate"),
            flags.0.contains_key("learning_rate"),
        );
        RunConfig::from_resolved(Resolved::merge(file, flags), lr)
    }

    #[test]
    fn defaults_apply() {
        let cfg = resolve("", &[]).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.kappa, 15.0);
        assert_eq!(cfg.hidden, vec![256]);
        assert_eq!(cfg.ks, vec![1, 2, 4, 8]);
        assert_eq!(cfg.update_interval, UpdateInterval::Epoch);
        assert!(cfg.train_data.is_none());
    }

    #[test]
    fn flags_override_file() {
        let cfg = resolve("kappa = 40 # tight\n\n# comment\nepochs=3", &["kappa=70"]).unwrap();
        assert_eq!(cfg.kappa, 70.0);
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn duplicates_and_unknown_keys_rejected() {
        assert!(matches!(
            resolve("kappa = 1\nkappa = 2", &[]),
            Err(ConfigError::Duplicate { .. })
        ));
        assert!(matches!(
            resolve("", &["seed=1", "seed=2"]),
            Err(ConfigError::Duplicate { .. })
        ));
        assert!(matches!(resolve("kapa = 1", &[]), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(
            resolve("just words", &[]),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn values_validated() {
        assert!(resolve("kappa = -1", &[]).is_err());
        assert!(resolve("momentum = 1", &[]).is_err());
        assert!(resolve("ks = 1,0", &[]).is_err());
        assert!(resolve("split = val", &[]).is_err());
        assert!(resolve("hidden = 4,x", &[]).is_err());
        assert!(resolve("update_interval = 0", &[]).is_err());
        assert!(resolve("train_images = a", &[]).is_err());
        assert!(matches!(
            resolve("learning_rate = 0.1\nlr_schedule = 0:0.1,10:0.01", &[]),
            Err(ConfigError::Conflict(..))
        ));
    }

    #[test]
    fn schedule_and_sources() {
        let cfg = resolve(
            "lr_schedule = 0:0.1, 10:0.01\ntrain_csv = a.csv\ntest_images = i\ntest_labels = l",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.lr_schedule.rate_at(10), 0.01);
        assert_eq!(cfg.train_data, Some(DataSource::Csv("a.csv".into())));
        assert!(matches!(cfg.test_data, Some(DataSource::Idx { .. })));
        let cfg = resolve("hidden =", &["update_interval=25"]).unwrap();
        assert!(cfg.hidden.is_empty());
        assert_eq!(cfg.update_interval, UpdateInterval::Iterations(25));
    }

    #[test]
    fn sub_seeds_are_distinct_and_stable() {
        let names = ["init", "shuffle", "prototype", "sampling", "clustering"];
        let seeds: Vec<u64> = names.iter().map(|n| sub_seed(7, n)).collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), names.len());
        assert_eq!(sub_seed(7, "init"), sub_seed(7, "init"));
        assert_ne!(sub_seed(7, "init"), sub_seed(8, "init"));
    }

    #[test]
    fn resolved_text_is_sorted_and_complete() {
        let cfg = resolve("kappa = 3", &[]).unwrap();
        let text = cfg.resolved.to_text();
        assert!(text.contains("kappa = 3\n"));
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }
}
