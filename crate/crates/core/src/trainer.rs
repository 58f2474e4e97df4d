//! Alternating optimisation of the network and the class prototypes.
//!
//! Each round forwards the whole training set, re-estimates every class mean direction as
//! the normalized sum of that class's embeddings, then runs `l` mini-batch SGD iterations
//! on the vMF loss with the prototypes frozen. Training stops after a fixed epoch budget,
//! followed by one last prototype refresh from the final network.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use log::warn;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::network::{sgd_step, Network, OptimizerState};
use crate::objective::{loss_and_grad_rows, PrototypeSet};
use crate::sphere::{norm, normalize, UnitVector, MIN_NORM};

/// How many SGD iterations run between prototype refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateInterval {
    /// One pass over the training set.
    #[default]
    Epoch,
    Iterations(usize),
}

/// Piecewise-constant learning rate: `(first_iteration, rate)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule(Vec<(usize, f64)>);

impl LrSchedule {
    pub fn new(steps: Vec<(usize, f64)>) -> Result<Self> {
        match steps.first() {
            Some(&(0, _)) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "learning-rate schedule must start at iteration 0".into(),
                ))
            }
        }
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig(
                "learning-rate schedule iterations must increase".into(),
            ));
        }
        if steps.iter().any(|&(_, r)| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        Ok(LrSchedule(steps))
    }

    pub fn constant(rate: f64) -> Result<Self> {
        LrSchedule::new(vec![(0, rate)])
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.0
    }

    /// Rate in effect at (zero-based) `iteration`.
    pub fn rate_at(&self, iteration: usize) -> f64 {
        self.0
            .iter()
            .take_while(|&&(start, _)| start <= iteration)
            .last()
            .map(|&(_, r)| r)
            .unwrap_or(self.0[0].1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kappa: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub update_interval: UpdateInterval,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub shuffle_seed: u64,
    /// Seeds the random direction given to a class with no usable embeddings at the first refresh.
    pub prototype_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kappa: 15.0,
            epochs: 10,
            batch_size: 64,
            update_interval: UpdateInterval::Epoch,
            lr_schedule: LrSchedule(vec![(0, 0.01)]),
            momentum: 0.9,
            shuffle_seed: 0,
            prototype_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "kappa must be finite and >= 0, got {}",
                self.kappa
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.update_interval == UpdateInterval::Iterations(0) {
            return Err(Error::InvalidConfig("prototype update interval must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        LrSchedule::new(self.lr_schedule.0.clone()).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// One-based count of completed SGD iterations.
    pub iteration: usize,
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefreshRecord {
    /// Number of SGD iterations completed before this refresh.
    pub iteration: usize,
    pub prototypes: PrototypeSet,
    pub degenerate_classes: Vec<usize>,
    /// Whole-training-set loss under the previous prototypes (none at the first refresh).
    pub loss_before: Option<f64>,
    pub loss_after: f64,
}

impl RefreshRecord {
    pub fn loss_increased(&self) -> bool {
        self.loss_before.is_some_and(|b| self.loss_after > b + 1e-12)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub iterations: Vec<IterationRecord>,
    pub refreshes: Vec<RefreshRecord>,
    /// Elapsed time at each refresh. Kept out of [`TrainLog::to_text`] so reruns compare equal.
    pub wall_clock: Vec<Duration>,
}

impl TrainLog {
    /// Line-oriented text form.
    ///
    /// ```text
    /// # vmfml train log v1
    /// iter <iteration> <epoch> <loss> <learning_rate>
    /// refresh <iteration> <loss_before|-> <loss_after> <degenerate classes, comma-separated|->
    /// proto <class> <coord> ... <coord>
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::from("# vmfml train log v1\n");
        let mut refreshes = self.refreshes.iter().peekable();
        let emit_refresh = |r: &RefreshRecord, out: &mut String| {
            let before = r.loss_before.map_or_else(|| "-".to_string(), |b| b.to_string());
            let degenerate = if r.degenerate_classes.is_empty() {
                "-".to_string()
            } else {
                r.degenerate_classes
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            };
            writeln!(
                out,
                "refresh {} {} {} {}",
                r.iteration, before, r.loss_after, degenerate
            )
            .unwrap();
            for (c, mu) in r.prototypes.mus().iter().enumerate() {
                let coords: Vec<String> = mu.as_slice().iter().map(f64::to_string).collect();
                writeln!(out, "proto {c} {}", coords.join(" ")).unwrap();
            }
        };
        for rec in &self.iterations {
            while let Some(r) = refreshes.next_if(|r| r.iteration < rec.iteration) {
                emit_refresh(r, &mut out);
            }
            writeln!(
                out,
                "iter {} {} {} {}",
                rec.iteration, rec.epoch, rec.loss, rec.learning_rate
            )
            .unwrap();
        }
        for r in refreshes {
            emit_refresh(r, &mut out);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Mean iteration loss per epoch.
    pub fn epoch_mean_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for rec in &self.iterations {
            if out.len() <= rec.epoch {
                out.resize(rec.epoch + 1, (0.0, 0));
            }
            out[rec.epoch].0 += rec.loss;
            out[rec.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

/// Result of re-estimating prototypes from a full forward pass.
#[derive(Debug, Clone)]
pub struct PrototypeUpdate {
    pub prototypes: PrototypeSet,
    /// Classes that kept their previous (or a seeded random) direction.
    pub degenerate_classes: Vec<usize>,
    pub embeddings: Array2<f64>,
}

fn random_unit(p: usize, seed: u64) -> UnitVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

/// Sets each class mean direction to the normalized sum of that class's embeddings.
///
/// Classes without samples, or whose embeddings cancel, keep their entry from `previous`;
/// without a previous set they get a random direction seeded by `fallback_seed` and the
/// class index.
pub fn update_prototypes(
    net: &Network,
    data: &LabeledDataset,
    previous: Option<&PrototypeSet>,
    kappa: f64,
    fallback_seed: u64,
) -> Result<PrototypeUpdate> {
    let embeddings = net.embed(data.features().view())?;
    prototypes_from_embeddings(
        embeddings,
        data.labels(),
        data.num_classes(),
        previous,
        kappa,
        fallback_seed,
    )
}

pub(crate) fn prototypes_from_embeddings(
    embeddings: Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    previous: Option<&PrototypeSet>,
    kappa: f64,
    fallback_seed: u64,
) -> Result<PrototypeUpdate> {
    let p = embeddings.ncols();
    if let Some(prev) = previous {
        if prev.num_classes() != num_classes || prev.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: prev.num_classes() * prev.dim(),
                got: num_classes * p,
            });
        }
    }
    // Sequential accumulation in sample order keeps the sums reproducible.
    let mut sums = vec![vec![0.0; p]; num_classes];
    for (row, &label) in embeddings.rows().into_iter().zip(labels) {
        sums[label].iter_mut().zip(row.iter()).for_each(|(s, x)| *s += x);
    }
    let mut degenerate = Vec::new();
    let mus = sums
        .iter()
        .enumerate()
        .map(|(c, sum)| {
            if norm(sum) >= MIN_NORM {
                normalize(sum).expect("norm checked")
            } else {
                degenerate.push(c);
                match previous {
                    Some(prev) => prev.mus()[c].clone(),
                    None => random_unit(p, fallback_seed.wrapping_add(c as u64)),
                }
            }
        })
        .collect();
    if !degenerate.is_empty() {
        warn!("prototype refresh kept previous directions for classes {degenerate:?}");
    }
    Ok(PrototypeUpdate {
        prototypes: PrototypeSet::new(mus, kappa)?,
        degenerate_classes: degenerate,
        embeddings,
    })
}

/// Hooks called during [`train_with_observer`].
pub trait TrainObserver {
    /// After every prototype refresh, with the network that produced it.
    fn on_refresh(&mut self, _net: &Network, _record: &RefreshRecord) -> Result<()> {
        Ok(())
    }

    /// After every SGD iteration, with the prototypes the iteration used.
    fn on_iteration(&mut self, _record: &IterationRecord, _prototypes: &PrototypeSet) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub prototypes: PrototypeSet,
    pub log: TrainLog,
}

pub fn train(net: Network, data: &LabeledDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(net, data, config, &mut ())
}

pub fn train_with_observer(
    mut net: Network,
    data: &LabeledDataset,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.num_classes() < 2 {
        return Err(Error::InsufficientData("training needs at least 2 classes".into()));
    }
    if data.feature_dim() != net.config().input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.config().input_dim(),
            got: data.feature_dim(),
        });
    }
    let start = Instant::now();
    let n = data.len();
    let batch = config.batch_size.min(n);
    let iters_per_epoch = n.div_ceil(batch);
    let total = config.epochs * iters_per_epoch;
    let interval = match config.update_interval {
        UpdateInterval::Epoch => iters_per_epoch,
        UpdateInterval::Iterations(l) => l,
    };

    let mut log = TrainLog::default();
    let refresh = |net: &Network,
                   previous: Option<&PrototypeSet>,
                   iteration: usize,
                   log: &mut TrainLog,
                   observer: &mut dyn TrainObserver| {
        let update = update_prototypes(net, data, previous, config.kappa, config.prototype_seed)?;
        let full_loss = |protos: &PrototypeSet| {
            loss_and_grad_rows(update.embeddings.view(), data.labels(), protos).map(|(r, _)| r.total_loss)
        };
        let loss_before = previous.map(full_loss).transpose()?;
        let record = RefreshRecord {
            iteration,
            loss_after: full_loss(&update.prototypes)?,
            prototypes: update.prototypes,
            degenerate_classes: update.degenerate_classes,
            loss_before,
        };
        if record.loss_increased() {
            warn!(
                "training-set loss rose across the refresh at iteration {iteration}: {:?} -> {}",
                record.loss_before, record.loss_after
            );
        }
        observer.on_refresh(net, &record)?;
        let protos = record.prototypes.clone();
        log.refreshes.push(record);
        log.wall_clock.push(start.elapsed());
        Ok::<_, Error>(protos)
    };

    let mut protos = refresh(&net, None, 0, &mut log, observer)?;
    let mut opt = OptimizerState::new(&net, config.lr_schedule.rate_at(0), config.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();

    for it in 0..total {
        if it > 0 && it % interval == 0 {
            protos = refresh(&net, Some(&protos), it, &mut log, observer)?;
        }
        let within = it % iters_per_epoch;
        if within == 0 {
            order.shuffle(&mut rng);
        }
        let idx = &order[within * batch..((within + 1) * batch).min(n)];
        let x = data.features().select(Axis(0), idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();

        let (emb, cache) = net.forward(x.view())?;
        let (report, grad) = loss_and_grad_rows(emb.view(), &labels, &protos)?;
        if !report.total_loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it + 1 });
        }
        let grads = net.backward(&cache, grad.view())?;
        opt.learning_rate = config.lr_schedule.rate_at(it);
        sgd_step(&mut net, &grads, &mut opt)?;

        let record = IterationRecord {
            iteration: it + 1,
            epoch: it / iters_per_epoch,
            loss: report.total_loss,
            learning_rate: opt.learning_rate,
        };
        observer.on_iteration(&record, &protos);
        log.iterations.push(record);
    }

    let prototypes = refresh(&net, Some(&protos), total, &mut log, observer)?;
    Ok(TrainOutcome {
        network: net,
        prototypes,
        log,
    })
}
