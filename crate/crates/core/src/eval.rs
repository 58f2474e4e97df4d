//! Nearest-prototype classification, Recall@K retrieval, NMI and embedding-space
//! diagnostics.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::objective::PrototypeSet;
use crate::par;
use crate::sphere::{dot, kappa_from_mean_resultant, norm, UnitVector};

/// Index of the prototype with the largest cosine; ties go to the smallest index.
pub fn predict(r: &UnitVector, protos: &PrototypeSet) -> Result<usize> {
    if r.dim() != protos.dim() {
        return Err(Error::DimensionMismatch {
            expected: protos.dim(),
            got: r.dim(),
        });
    }
    Ok(argmax_cosine(r.as_slice(), protos))
}

fn argmax_cosine(r: &[f64], protos: &PrototypeSet) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, mu) in protos.mus().iter().enumerate() {
        let s = dot(mu.as_slice(), r);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Predictions for every row of an embedding matrix.
pub fn predict_rows(embeddings: ArrayView2<'_, f64>, protos: &PrototypeSet) -> Result<Vec<usize>> {
    if embeddings.ncols() != protos.dim() {
        return Err(Error::DimensionMismatch {
            expected: protos.dim(),
            got: embeddings.ncols(),
        });
    }
    Ok(par::map_range(embeddings.nrows(), |i| {
        let row = embeddings.row(i).to_vec();
        argmax_cosine(&row, protos)
    }))
}

/// Fraction of rows whose prediction matches the label.
pub fn accuracy_from_embeddings(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    protos: &PrototypeSet,
) -> Result<f64> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: embeddings.nrows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("accuracy needs at least one sample"));
    }
    let predicted = predict_rows(embeddings, protos)?;
    let correct = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Nearest-prototype accuracy of `net` on `data`.
pub fn accuracy(net: &Network, protos: &PrototypeSet, data: &LabeledDataset) -> Result<f64> {
    let emb = net.embed(data.features().view())?;
    accuracy_from_embeddings(emb.view(), data.labels(), protos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Top `max(ks)` neighbors of every query, best first; never contains the query.
    pub neighbors: Vec<Vec<usize>>,
    /// Recall@K for each requested K.
    pub recalls: BTreeMap<usize, f64>,
    /// Queries with no same-class item among the candidates, left out of the denominator.
    pub excluded_queries: Vec<usize>,
}

impl RetrievalResult {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recalls.get(&k).copied()
    }
}

fn rows_of(embeddings: &[UnitVector]) -> Result<usize> {
    let p = embeddings.first().ok_or(Error::Empty("retrieval set"))?.dim();
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: bad.dim(),
        });
    }
    Ok(p)
}

/// Ranks every other item by descending cosine (ascending index on ties).
pub fn rank_neighbors(embeddings: &[UnitVector], query: usize, top: usize) -> Vec<usize> {
    let q = embeddings[query].as_slice();
    let mut scored: Vec<(f64, usize)> = embeddings
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != query)
        .map(|(j, e)| (dot(q, e.as_slice()), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let top = top.min(scored.len());
    if top < scored.len() && top > 0 {
        scored.select_nth_unstable_by(top - 1, cmp);
        scored.truncate(top);
    }
    scored.sort_unstable_by(cmp);
    scored.truncate(top);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// Recall@K: the fraction of queries with at least one same-class item among their top K
/// cosine neighbors. Every item is a query against all others.
pub fn recall_at_k(embeddings: &[UnitVector], labels: &[usize], ks: &[usize]) -> Result<RetrievalResult> {
    if embeddings.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: embeddings.len(),
            right: labels.len(),
        });
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig("K values must be >= 1".into()));
    }
    rows_of(embeddings)?;
    let max_k = *ks.iter().max().unwrap();
    if embeddings.len() < max_k + 1 {
        return Err(Error::InsufficientData(format!(
            "Recall@{max_k} needs at least {} items, got {}",
            max_k + 1,
            embeddings.len()
        )));
    }

    let mut class_sizes: BTreeMap<usize, usize> = BTreeMap::new();
    labels.iter().for_each(|&l| *class_sizes.entry(l).or_default() += 1);

    let neighbors = par::map_range(embeddings.len(), |q| rank_neighbors(embeddings, q, max_k));
    let excluded_queries: Vec<usize> = (0..labels.len()).filter(|&q| class_sizes[&labels[q]] < 2).collect();
    let evaluated = labels.len() - excluded_queries.len();
    if evaluated == 0 {
        return Err(Error::InsufficientData("no query has a same-class candidate".into()));
    }

    let recalls = ks
        .iter()
        .map(|&k| {
            let hits = (0..labels.len())
                .filter(|&q| class_sizes[&labels[q]] >= 2)
                .filter(|&q| neighbors[q][..k].iter().any(|&j| labels[j] == labels[q]))
                .count();
            (k, hits as f64 / evaluated as f64)
        })
        .collect();
    Ok(RetrievalResult {
        neighbors,
        recalls,
        excluded_queries,
    })
}

/// Unit rows of a matrix as [`UnitVector`]s.
pub fn rows_to_unit_vectors(embeddings: ArrayView2<'_, f64>) -> Result<Vec<UnitVector>> {
    embeddings
        .rows()
        .into_iter()
        .map(|r| UnitVector::new(r.to_vec()))
        .collect()
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(A;B) / sqrt(H(A) H(B))` with natural logarithms.
///
/// Two single-cluster partitions score 1; a single-cluster partition against a
/// non-trivial one scores 0.
pub fn nmi(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::LengthMismatch {
            left: labels_a.len(),
            right: labels_b.len(),
        });
    }
    if labels_a.is_empty() {
        return Err(Error::Empty("NMI needs at least one label"));
    }
    let n = labels_a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut count_a: BTreeMap<usize, usize> = BTreeMap::new();
    let mut count_b: BTreeMap<usize, usize> = BTreeMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        *joint.entry((a, b)).or_default() += 1;
        *count_a.entry(a).or_default() += 1;
        *count_b.entry(b).or_default() += 1;
    }
    let h_a = entropy(count_a.values().copied(), n);
    let h_b = entropy(count_b.values().copied(), n);
    if count_a.len() == 1 && count_b.len() == 1 {
        return Ok(1.0);
    }
    if h_a == 0.0 || h_b == 0.0 {
        return Ok(0.0);
    }
    let mutual: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let pab = c as f64 / n;
            pab * (pab * n * n / (count_a[&a] as f64 * count_b[&b] as f64)).ln()
        })
        .sum();
    Ok((mutual / (h_a * h_b).sqrt()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceDiagnostics {
    /// Mean of the per-class concentration estimates over classes with >= 2 samples.
    pub average_kappa_hat: f64,
    /// Mean cosine over all unordered pairs of prototypes.
    pub average_cosine: f64,
    /// Per-class estimate; `None` for classes with fewer than 2 samples.
    pub per_class_kappa_hat: Vec<Option<f64>>,
    pub skipped_classes: Vec<usize>,
    /// Classes whose mean resultant length hit the clamp.
    pub clamped_classes: Vec<usize>,
}

/// Concentration and separation statistics of an embedded dataset.
pub fn diagnostics_from_embeddings(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    protos: &PrototypeSet,
) -> Result<SpaceDiagnostics> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: embeddings.nrows(),
            right: labels.len(),
        });
    }
    if embeddings.ncols() != protos.dim() {
        return Err(Error::DimensionMismatch {
            expected: protos.dim(),
            got: embeddings.ncols(),
        });
    }
    let c = protos.num_classes();
    let p = protos.dim();
    let mut sums = vec![vec![0.0; p]; c];
    let mut counts = vec![0usize; c];
    for (row, &y) in embeddings.rows().into_iter().zip(labels) {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        counts[y] += 1;
        sums[y].iter_mut().zip(row.iter()).for_each(|(s, x)| *s += x);
    }
    let mut per_class = Vec::with_capacity(c);
    let mut skipped = Vec::new();
    let mut clamped = Vec::new();
    for k in 0..c {
        if counts[k] < 2 {
            skipped.push(k);
            per_class.push(None);
            continue;
        }
        let est = kappa_from_mean_resultant(norm(&sums[k]) / counts[k] as f64, p);
        if est.clamped {
            clamped.push(k);
        }
        per_class.push(Some(est.kappa));
    }
    let used: Vec<f64> = per_class.iter().flatten().copied().collect();
    let average_kappa_hat = if used.is_empty() {
        0.0
    } else {
        used.iter().sum::<f64>() / used.len() as f64
    };

    let mus = protos.mus();
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..c {
        for j in i + 1..c {
            pair_sum += dot(mus[i].as_slice(), mus[j].as_slice());
            pairs += 1;
        }
    }
    Ok(SpaceDiagnostics {
        average_kappa_hat,
        average_cosine: (pair_sum / pairs as f64).clamp(-1.0, 1.0),
        per_class_kappa_hat: per_class,
        skipped_classes: skipped,
        clamped_classes: clamped,
    })
}

pub fn diagnostics(net: &Network, protos: &PrototypeSet, data: &LabeledDataset) -> Result<SpaceDiagnostics> {
    let emb = net.embed(data.features().view())?;
    diagnostics_from_embeddings(emb.view(), data.labels(), protos)
}

/// Mean cosine between each sample and its own class prototype, per class.
pub fn mean_cosine_to_prototype(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    protos: &PrototypeSet,
) -> Vec<Option<f64>> {
    let c = protos.num_classes();
    let mut sum = vec![0.0; c];
    let mut count = vec![0usize; c];
    for (row, &y) in embeddings.rows().into_iter().zip(labels) {
        if y < c {
            sum[y] += dot(&row.to_vec(), protos.mus()[y].as_slice());
            count[y] += 1;
        }
    }
    sum.into_iter()
        .zip(count)
        .map(|(s, n)| (n > 0).then(|| s / n as f64))
        .collect()
}

/// Squared Euclidean distance matrix rows ranked ascending, for cross-checking the cosine
/// ranking. Ties go to the smaller index.
pub fn rank_neighbors_euclidean(embeddings: &[UnitVector], query: usize, top: usize) -> Vec<usize> {
    let q = embeddings[query].as_slice();
    let mut scored: Vec<(f64, usize)> = embeddings
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != query)
        .map(|(j, e)| (q.iter().zip(e.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum(), j))
        .collect();
    scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(top);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// Stacks unit vectors into a matrix, one per row.
pub fn unit_vectors_to_rows(points: &[UnitVector]) -> Array2<f64> {
    let p = points.first().map_or(0, UnitVector::dim);
    Array2::from_shape_fn((points.len(), p), |(i, j)| points[i].as_slice()[j])
}
