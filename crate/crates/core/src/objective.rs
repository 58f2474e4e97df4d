//! The vMF loss over a set of class prototypes and its analytic gradients.
//!
//! With a shared concentration `kappa` the class posterior is a softmax over
//! `kappa * mu_i . r` and the loss for sample `n` is `-ln P(y_n | r_n)`. Batch losses and
//! gradients use the batch mean.

use crate::error::{Error, Result};
use crate::par;
use crate::sphere::{dot, log_normalizer, norm, UnitVector, MIN_NORM};

/// Class mean directions plus the shared concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    mus: Vec<UnitVector>,
    kappa: f64,
}

impl PrototypeSet {
    /// `kappa = 0` is accepted: it gives the uniform posterior and a zero gradient field.
    pub fn new(mus: Vec<UnitVector>, kappa: f64) -> Result<Self> {
        if mus.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 prototypes, got {}",
                mus.len()
            )));
        }
        let p = mus[0].dim();
        if let Some(bad) = mus.iter().find(|m| m.dim() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: bad.dim(),
            });
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "kappa must be finite and >= 0, got {kappa}"
            )));
        }
        Ok(PrototypeSet { mus, kappa })
    }

    pub fn mus(&self) -> &[UnitVector] {
        &self.mus
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn num_classes(&self) -> usize {
        self.mus.len()
    }

    pub fn dim(&self) -> usize {
        self.mus[0].dim()
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        PrototypeSet::new(self.mus.clone(), kappa)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Mean of `per_sample`, in nats.
    pub total_loss: f64,
    pub per_sample: Vec<f64>,
}

/// In-place softmax with max subtraction; returns `ln sum exp(logits)`.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    max + sum.ln()
}

/// Posterior over classes for one embedding.
///
/// Without `per_class_kappa` the shared concentration is used and the normalizers cancel.
/// With it, each class uses its own `kappa_i` and `ln Z_p(kappa_i)` enters the logits.
pub fn class_posterior(r: &UnitVector, protos: &PrototypeSet, per_class_kappa: Option<&[f64]>) -> Result<Vec<f64>> {
    protos.check_dim(r.dim())?;
    let mut logits: Vec<f64> = match per_class_kappa {
        None => protos
            .mus
            .iter()
            .map(|mu| protos.kappa * dot(mu.as_slice(), r.as_slice()))
            .collect(),
        Some(kappas) => {
            if kappas.len() != protos.num_classes() {
                return Err(Error::LengthMismatch {
                    left: kappas.len(),
                    right: protos.num_classes(),
                });
            }
            let p = r.dim();
            protos
                .mus
                .iter()
                .zip(kappas)
                .map(|(mu, &k)| Ok(log_normalizer(p, k)? + k * dot(mu.as_slice(), r.as_slice())))
                .collect::<Result<_>>()?
        }
    };
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Loss of one sample; when `grad` is given, writes `d loss / d r` scaled by `weight`.
pub(crate) fn sample_loss(r: &[f64], label: usize, protos: &PrototypeSet, grad: Option<(&mut [f64], f64)>) -> f64 {
    let mut post: Vec<f64> = protos
        .mus
        .iter()
        .map(|mu| protos.kappa * dot(mu.as_slice(), r))
        .collect();
    let target = post[label];
    let lse = softmax_in_place(&mut post);
    if let Some((g, weight)) = grad {
        // kappa * (sum_i P(i|r) mu_i - mu_y)
        g.iter_mut().for_each(|x| *x = 0.0);
        for (mu, &pi) in protos.mus.iter().zip(&post) {
            for (gx, m) in g.iter_mut().zip(mu.as_slice()) {
                *gx += pi * m;
            }
        }
        for (gx, m) in g.iter_mut().zip(protos.mus[label].as_slice()) {
            *gx = weight * protos.kappa * (*gx - m);
        }
    }
    lse - target
}

fn check_batch(
    embedding_dims: impl Iterator<Item = usize>,
    count: usize,
    labels: &[usize],
    protos: &PrototypeSet,
) -> Result<()> {
    if count == 0 {
        return Err(Error::Empty("embedding batch"));
    }
    if count != labels.len() {
        return Err(Error::LengthMismatch {
            left: count,
            right: labels.len(),
        });
    }
    for d in embedding_dims {
        protos.check_dim(d)?;
    }
    let classes = protos.num_classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean vMF loss of a batch.
pub fn vmf_loss(embeddings: &[UnitVector], labels: &[usize], protos: &PrototypeSet) -> Result<LossReport> {
    check_batch(embeddings.iter().map(UnitVector::dim), embeddings.len(), labels, protos)?;
    let per_sample = par::map_range(embeddings.len(), |n| {
        sample_loss(embeddings[n].as_slice(), labels[n], protos, None)
    });
    let total_loss = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(LossReport { total_loss, per_sample })
}

/// Gradient of the mean batch loss with respect to each embedding, treating the
/// embeddings as free vectors.
pub fn vmf_loss_grad_embedding(
    embeddings: &[UnitVector],
    labels: &[usize],
    protos: &PrototypeSet,
) -> Result<Vec<Vec<f64>>> {
    check_batch(embeddings.iter().map(UnitVector::dim), embeddings.len(), labels, protos)?;
    let weight = 1.0 / embeddings.len() as f64;
    Ok(par::map_range(embeddings.len(), |n| {
        let mut g = vec![0.0; protos.dim()];
        sample_loss(embeddings[n].as_slice(), labels[n], protos, Some((&mut g, weight)));
        g
    }))
}

/// Loss and embedding gradient for a batch stored as rows of a matrix.
///
/// Rows must already be unit vectors. Used by the trainer, which keeps activations in
/// `ndarray` form.
pub fn loss_and_grad_rows(
    embeddings: ndarray::ArrayView2<'_, f64>,
    labels: &[usize],
    protos: &PrototypeSet,
) -> Result<(LossReport, ndarray::Array2<f64>)> {
    let (n, p) = embeddings.dim();
    check_batch(std::iter::once(p), n, labels, protos)?;
    let weight = 1.0 / n as f64;
    let rows = par::map_range(n, |i| {
        let row = embeddings.row(i);
        let r = row.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| row.to_vec());
        let mut g = vec![0.0; p];
        let loss = sample_loss(&r, labels[i], protos, Some((&mut g, weight)));
        (loss, g)
    });
    let mut grad = ndarray::Array2::zeros((n, p));
    let mut per_sample = Vec::with_capacity(n);
    for (i, (loss, g)) in rows.into_iter().enumerate() {
        per_sample.push(loss);
        grad.row_mut(i).iter_mut().zip(g).for_each(|(dst, src)| *dst = src);
    }
    let total_loss = per_sample.iter().sum::<f64>() / n as f64;
    Ok((LossReport { total_loss, per_sample }, grad))
}

/// Backpropagates through `r = z / ||z||`: returns `(g - (r.g) r) / ||z||`.
pub fn normalize_backward(z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if z.len() != upstream.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: upstream.len(),
        });
    }
    let n = norm(z);
    if !(n >= MIN_NORM) {
        return Err(Error::ZeroNorm { norm: n });
    }
    let mut out = vec![0.0; z.len()];
    normalize_backward_into(z, n, upstream, &mut out);
    Ok(out)
}

pub(crate) fn normalize_backward_into(z: &[f64], z_norm: f64, upstream: &[f64], out: &mut [f64]) {
    let radial = dot(z, upstream) / z_norm;
    for ((o, &zi), &g) in out.iter_mut().zip(z).zip(upstream) {
        *o = (g - radial * zi / z_norm) / z_norm;
    }
}
