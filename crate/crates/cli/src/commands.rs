use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use ndarray::{Array2, ArrayView2};
use vmfml::checkpoint::Checkpoint;
use vmfml::cluster::{movmf_em, spherical_kmeans, ClusteringResult};
use vmfml::data::{load_csv, load_idx, LabeledDataset, Split};
use vmfml::eval::{
    accuracy_from_embeddings, diagnostics_from_embeddings, mean_cosine_to_prototype, nmi, predict_rows, recall_at_k,
    rows_to_unit_vectors,
};
use vmfml::network::{init_network, Network, NetworkConfig};
use vmfml::objective::PrototypeSet;
use vmfml::sphere::{sample_vmf, SampleCloud, UnitVector, VmfParams};
use vmfml::trainer::{train_with_observer, RefreshRecord, TrainConfig, TrainObserver};

use crate::config::{ClusterMethod, ConfigError, DataSource, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] vmfml::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {detail}")]
    BadEmbeddingFile { path: PathBuf, line: usize, detail: String },
    #[error("output directory is locked by another run ({0}); remove the file if that run is gone")]
    Locked(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use vmfml::ErrorKind;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
                ErrorKind::Io => 1,
            },
            CliError::BadEmbeddingFile { .. } => 3,
            CliError::Io { .. } | CliError::Locked(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub const FILE_NAME: &'static str = ".vmfml.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(Self::FILE_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(io_err(&path))?;
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(CliError::Io { path, source: e }),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Writes `<stem>.txt` as `key: value` lines and `<stem>.csv` with header `metric,value`.
fn write_metrics(dir: &Path, stem: &str, rows: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    let mut csv = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(text, "{k}: {v}");
        let _ = writeln!(csv, "{k},{v}");
    }
    write_file(&dir.join(format!("{stem}.txt")), &text)?;
    write_file(&dir.join(format!("{stem}.csv")), &csv)
}

fn row(key: impl Into<String>, value: impl ToString) -> (String, String) {
    (key.into(), value.to_string())
}

fn load_source(source: &DataSource, split: Split, limit: Option<usize>) -> Result<LabeledDataset> {
    let mut data = match source {
        DataSource::Idx { images, labels } => load_idx(images, labels)?,
        DataSource::Csv(path) => load_csv(path)?,
    };
    data.split = split;
    if let Some(n) = limit {
        data = data.head(n);
    }
    info!(
        "loaded {} samples, {} features, {} classes",
        data.len(),
        data.feature_dim(),
        data.num_classes()
    );
    Ok(data)
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<LabeledDataset> {
    let (source, key) = match split {
        Split::Train => (&cfg.train_data, "train_images"),
        Split::Test => (&cfg.test_data, "test_images"),
    };
    let source = source.as_ref().ok_or(ConfigError::Missing(key))?;
    load_source(source, split, cfg.limit)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg.checkpoint.as_ref().ok_or(ConfigError::Missing("checkpoint"))?;
    Ok(Checkpoint::load(path)?)
}

fn trained_model(cfg: &RunConfig) -> Result<(Network, PrototypeSet)> {
    let ckpt = load_checkpoint(cfg)?;
    let protos = ckpt
        .prototypes
        .ok_or_else(|| vmfml::Error::Checkpoint("checkpoint holds no prototypes".into()))?;
    Ok((ckpt.network, protos))
}

fn fmt_coords(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub const EMBEDDING_HEADER: &str = "# vmfml embeddings v1: label coord_1 ... coord_p";

fn write_embeddings(path: &Path, labels: &[usize], rows: ArrayView2<'_, f64>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(out, "{EMBEDDING_HEADER}")?;
        for (label, r) in labels.iter().zip(rows.rows()) {
            writeln!(out, "{label} {}", fmt_coords(r.iter().copied()))?;
        }
        out.flush()
    };
    emit().map_err(io_err(path))
}

/// Reads an embedding file back into labels and unit vectors.
pub fn read_embeddings(path: &Path) -> Result<(Vec<usize>, Vec<UnitVector>)> {
    let file = File::open(path).map_err(io_err(path))?;
    let bad = |line: usize, detail: String| CliError::BadEmbeddingFile {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut labels = Vec::new();
    let mut points = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let label = fields
            .next()
            .and_then(|f| f.parse::<usize>().ok())
            .ok_or_else(|| bad(i + 1, "first field must be an integer label".into()))?;
        let coords = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| bad(i + 1, format!("non-numeric coordinate `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = points.first().map(UnitVector::dim) {
            if coords.len() != first {
                return Err(bad(
                    i + 1,
                    format!("expected {first} coordinates, found {}", coords.len()),
                ));
            }
        }
        points.push(UnitVector::new(coords).map_err(|e| bad(i + 1, e.to_string()))?);
        labels.push(label);
    }
    if points.is_empty() {
        return Err(bad(0, "no points".into()));
    }
    Ok((labels, points))
}

struct CheckpointWriter {
    dir: PathBuf,
}

impl TrainObserver for CheckpointWriter {
    fn on_refresh(&mut self, net: &Network, record: &RefreshRecord) -> vmfml::Result<()> {
        let ckpt = Checkpoint {
            network: net.clone(),
            prototypes: Some(record.prototypes.clone()),
        };
        ckpt.save(self.dir.join(format!("refresh-{:08}.ckpt", record.iteration)))
    }
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.output_dir;
    let data = load_split(cfg, Split::Train)?;
    let mut widths = vec![data.feature_dim()];
    widths.extend(&cfg.hidden);
    widths.push(cfg.embedding_dim);
    let net = init_network(NetworkConfig::new(widths, cfg.activation, cfg.sub_seed("init")))?;
    let train_cfg = TrainConfig {
        kappa: cfg.kappa,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        update_interval: cfg.update_interval,
        lr_schedule: cfg.lr_schedule.clone(),
        momentum: cfg.momentum,
        shuffle_seed: cfg.sub_seed("shuffle"),
        prototype_seed: cfg.sub_seed("prototype"),
    };
    train_cfg.validate()?;
    write_file(&out.join("resolved_config.txt"), &cfg.resolved.to_text())?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;

    let outcome = train_with_observer(net, &data, &train_cfg, &mut CheckpointWriter { dir: ckpt_dir })?;
    outcome.log.write(out.join("train_log.txt"))?;
    Checkpoint {
        network: outcome.network.clone(),
        prototypes: Some(outcome.prototypes.clone()),
    }
    .save(out.join("model.ckpt"))?;

    let emb = outcome.network.embed(data.features().view())?;
    let acc = accuracy_from_embeddings(emb.view(), data.labels(), &outcome.prototypes)?;
    let last = outcome
        .log
        .refreshes
        .last()
        .expect("training always ends with a refresh");
    write_metrics(
        out,
        "train_metrics",
        &[
            row("samples", data.len()),
            row("classes", data.num_classes()),
            row("iterations", outcome.log.iterations.len()),
            row("refreshes", outcome.log.refreshes.len()),
            row("final_loss", last.loss_after),
            row("train_accuracy", acc),
        ],
    )
}

fn eval_data(cfg: &RunConfig) -> Result<LabeledDataset> {
    load_split(cfg, cfg.split)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let (net, protos) = trained_model(cfg)?;
    let data = eval_data(cfg)?;
    let emb = net.embed(data.features().view())?;
    let predicted = predict_rows(emb.view(), &protos)?;
    let acc = accuracy_from_embeddings(emb.view(), data.labels(), &protos)?;
    let mut rows = vec![
        row("split", data.split),
        row("samples", data.len()),
        row("classes", data.num_classes()),
        row("accuracy", acc),
    ];
    for c in 0..data.num_classes() {
        let members: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let hits = members.iter().filter(|&&i| predicted[i] == c).count();
        rows.push(row(format!("accuracy_class_{c}"), hits as f64 / members.len() as f64));
    }
    write_metrics(&cfg.output_dir, "eval_metrics", &rows)
}

pub fn retrieve(cfg: &RunConfig) -> Result<()> {
    let (net, _) = trained_model(cfg)?;
    let data = eval_data(cfg)?;
    let emb = net.embed(data.features().view())?;
    let points = rows_to_unit_vectors(emb.view())?;
    let result = recall_at_k(&points, data.labels(), &cfg.ks)?;
    let mut rows = vec![
        row("split", data.split),
        row("samples", data.len()),
        row("queries_evaluated", data.len() - result.excluded_queries.len()),
        row("queries_excluded", result.excluded_queries.len()),
    ];
    rows.extend(result.recalls.iter().map(|(k, r)| row(format!("recall_at_{k}"), r)));
    write_metrics(&cfg.output_dir, "retrieval_metrics", &rows)?;

    let mut text = String::from("# vmfml neighbors v1: query neighbor_1 ... neighbor_K (best first)\n");
    for (q, n) in result.neighbors.iter().enumerate() {
        let _ = writeln!(
            text,
            "{q} {}",
            n.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
        );
    }
    write_file(&cfg.output_dir.join("neighbors.txt"), &text)
}

pub fn embed(cfg: &RunConfig) -> Result<()> {
    let ckpt = load_checkpoint(cfg)?;
    let data = eval_data(cfg)?;
    let emb = ckpt.network.embed(data.features().view())?;
    write_embeddings(&cfg.output_dir.join("embeddings.txt"), data.labels(), emb.view())
}

pub fn diagnose(cfg: &RunConfig) -> Result<()> {
    let (net, protos) = trained_model(cfg)?;
    let data = eval_data(cfg)?;
    let emb = net.embed(data.features().view())?;
    let d = diagnostics_from_embeddings(emb.view(), data.labels(), &protos)?;
    let cosines = mean_cosine_to_prototype(emb.view(), data.labels(), &protos);
    let list = |v: &[usize]| {
        if v.is_empty() {
            "-".to_string()
        } else {
            v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
        }
    };
    let mut rows = vec![
        row("split", data.split),
        row("samples", data.len()),
        row("kappa", protos.kappa()),
        row("average_kappa_hat", d.average_kappa_hat),
        row("average_cosine", d.average_cosine),
        row("skipped_classes", list(&d.skipped_classes)),
        row("clamped_classes", list(&d.clamped_classes)),
    ];
    for (c, k) in d.per_class_kappa_hat.iter().enumerate() {
        rows.push(row(
            format!("kappa_hat_class_{c}"),
            k.map_or("-".to_string(), |k| k.to_string()),
        ));
    }
    for (c, m) in cosines.iter().enumerate() {
        rows.push(row(
            format!("mean_cosine_class_{c}"),
            m.map_or("-".to_string(), |m| m.to_string()),
        ));
    }
    write_metrics(&cfg.output_dir, "diagnostics", &rows)
}

pub fn cluster(cfg: &RunConfig) -> Result<()> {
    let (labels, points) = match &cfg.embeddings {
        Some(path) => read_embeddings(path)?,
        None => {
            let ckpt = load_checkpoint(cfg)?;
            let data = eval_data(cfg)?;
            let emb: Array2<f64> = ckpt.network.embed(data.features().view())?;
            (data.labels().to_vec(), rows_to_unit_vectors(emb.view())?)
        }
    };
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let k = match cfg.clusters {
        Some(k) => k,
        None if classes >= 2 => classes,
        None => return Err(ConfigError::Missing("clusters").into()),
    };
    let cloud = SampleCloud::new(points)?;
    let seed = cfg.sub_seed("clustering");
    let result: ClusteringResult = match cfg.method {
        ClusterMethod::KMeans => spherical_kmeans(&cloud, k, seed, cfg.max_iter, cfg.tol)?,
        ClusterMethod::MovMf(mode) => movmf_em(&cloud, k, mode, seed, cfg.max_iter, cfg.tol)?,
    };

    let out = &cfg.output_dir;
    let assignments: String = result.assignments.iter().map(|a| format!("{a}\n")).collect();
    write_file(&out.join("assignments.txt"), &assignments)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "method: {}", cfg.method);
    let _ = writeln!(summary, "points: {}", cloud.len());
    let _ = writeln!(summary, "clusters: {k}");
    let _ = writeln!(summary, "iterations: {}", result.iterations);
    let _ = writeln!(summary, "converged: {}", result.converged);
    if let Some(obj) = result.final_objective() {
        let _ = writeln!(summary, "final_objective: {obj}");
    }
    if classes >= 1 {
        let _ = writeln!(summary, "nmi_vs_labels: {}", nmi(&labels, &result.assignments)?);
    }
    for (h, c) in result.centroids.iter().enumerate() {
        let _ = writeln!(summary, "centroid_{h}: {}", fmt_coords(c.as_slice().iter().copied()));
    }
    for (h, kappa) in result.kappas.iter().flatten().enumerate() {
        let _ = writeln!(summary, "kappa_{h}: {kappa}");
    }
    for (h, w) in result.weights.iter().flatten().enumerate() {
        let _ = writeln!(summary, "weight_{h}: {w}");
    }
    for (i, e) in result.events.iter().enumerate() {
        let _ = writeln!(summary, "event_{i}: {e}");
    }
    write_file(&out.join("cluster_summary.txt"), &summary)?;

    let mut trace = String::from("iteration,objective\n");
    for (i, v) in result.objective_trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{v}");
    }
    write_file(&out.join("cluster_trace.csv"), &trace)
}

pub fn sample(cfg: &RunConfig) -> Result<()> {
    let p = cfg.sample_dim;
    let mu = match &cfg.sample_mean {
        Some(m) => vmfml::sphere::normalize(m)?,
        None => UnitVector::basis(p, p - 1)?,
    };
    let base = cfg.sub_seed("sampling");
    let mut rows = Vec::new();
    for (i, &kappa) in cfg.sample_kappas.iter().enumerate() {
        let cloud = sample_vmf(
            &VmfParams::new(mu.clone(), kappa)?,
            cfg.sample_count,
            base.wrapping_add(i as u64),
        )?;
        let matrix = Array2::from_shape_fn((cloud.len(), p), |(r, c)| cloud.points()[r].as_slice()[c]);
        let labels = vec![i; cloud.len()];
        write_embeddings(&cfg.output_dir.join(format!("sample_{i}.txt")), &labels, matrix.view())?;
        rows.push(row(format!("kappa_{i}"), kappa));
        rows.push(row(format!("mean_resultant_length_{i}"), cloud.mean_resultant_length()));
        rows.push(row(format!("kappa_hat_{i}"), vmfml::sphere::estimate_kappa(&cloud)));
    }
    write_metrics(&cfg.output_dir, "sample_summary", &rows)
}
