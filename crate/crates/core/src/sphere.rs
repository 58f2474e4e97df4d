//! Points on the unit hypersphere and the von Mises-Fisher distribution over them.
//!
//! The vMF density on S^{p-1} is `f(r; mu, kappa) = Z_p(kappa) exp(kappa mu.r)` with
//! `Z_p(kappa) = kappa^{p/2-1} / ((2 pi)^{p/2} I_{p/2-1}(kappa))`. Everything here works
//! with `ln Z_p` so large concentrations stay finite.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::bessel::log_bessel_i;
use crate::error::{Error, Result};

/// Tolerance on `||r|| = 1` for values claiming to be unit vectors.
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// Vectors shorter than this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;
/// Upper clamp on the mean resultant length before the concentration estimate.
pub const MAX_MEAN_RESULTANT: f64 = 1.0 - 1e-9;

// Inputs already this close to unit length are returned untouched, which makes
// normalization exactly idempotent.
const ALREADY_UNIT: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// A point on S^{p-1}, p >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps `coords`, checking that they already have unit norm.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_dim(coords.len())?;
        let n = norm(&coords);
        if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::Domain(format!("expected a unit vector, norm is {n}")));
        }
        Ok(UnitVector(coords))
    }

    /// The `axis`-th standard basis vector of R^dim.
    pub fn basis(dim: usize, axis: usize) -> Result<Self> {
        check_dim(dim)?;
        if axis >= dim {
            return Err(Error::Domain(format!("axis {axis} out of range for dimension {dim}")));
        }
        let mut coords = vec![0.0; dim];
        coords[axis] = 1.0;
        Ok(UnitVector(coords))
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        debug_assert!((norm(&coords) - 1.0).abs() <= UNIT_TOLERANCE);
        UnitVector(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Cosine similarity with another unit vector.
    pub fn dot(&self, other: &UnitVector) -> Result<f64> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_dim(p: usize) -> Result<()> {
    if p < 2 {
        return Err(Error::Domain(format!("dimension must be >= 2, got {p}")));
    }
    Ok(())
}

fn check_same_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Projects `v` onto the unit sphere.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    check_dim(v.len())?;
    let n = norm(v);
    if !(n >= MIN_NORM) || !n.is_finite() {
        return Err(Error::ZeroNorm { norm: n });
    }
    if (n - 1.0).abs() <= ALREADY_UNIT {
        return Ok(UnitVector(v.to_vec()));
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Parameters of one vMF distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    pub mu: UnitVector,
    pub kappa: f64,
}

impl VmfParams {
    pub fn new(mu: UnitVector, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::Domain(format!("kappa must be finite and >= 0, got {kappa}")));
        }
        Ok(VmfParams { mu, kappa })
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }
}

/// A non-empty set of unit vectors of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    points: Vec<UnitVector>,
}

impl SampleCloud {
    pub fn new(points: Vec<UnitVector>) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("sample cloud"))?;
        let p = first.dim();
        for pt in &points {
            check_same_dim(p, pt.dim())?;
        }
        Ok(SampleCloud { points })
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[UnitVector] {
        &self.points
    }

    pub fn into_points(self) -> Vec<UnitVector> {
        self.points
    }

    /// Sum of all points.
    pub fn resultant(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim()];
        for pt in &self.points {
            for (s, x) in sum.iter_mut().zip(pt.as_slice()) {
                *s += x;
            }
        }
        sum
    }

    /// `||sum r_i|| / N`.
    pub fn mean_resultant_length(&self) -> f64 {
        norm(&self.resultant()) / self.len() as f64
    }
}

/// Surface area of the unit sphere S^{p-1} in R^p, `2 pi^{p/2} / Gamma(p/2)`.
///
/// Computed by the recurrence `S_{p+2} = 2 pi S_p / p` from `S_2 = 2 pi` and `S_3 = 4 pi`,
/// so the two base cases are exact.
pub fn sphere_surface_area(p: usize) -> Result<f64> {
    check_dim(p)?;
    let (mut area, mut q) = if p % 2 == 0 { (2.0 * PI, 2) } else { (4.0 * PI, 3) };
    while q < p {
        area *= 2.0 * PI / q as f64;
        q += 2;
    }
    Ok(area)
}

/// `ln S_p`, usable for dimensions where `S_p` underflows.
pub fn log_sphere_surface_area(p: usize) -> Result<f64> {
    check_dim(p)?;
    if p <= 64 {
        return Ok(sphere_surface_area(p)?.ln());
    }
    let half = p as f64 / 2.0;
    Ok(2.0_f64.ln() + half * PI.ln() - ln_gamma(half))
}

/// `ln Z_p(kappa)`. At `kappa = 0` this is the uniform density `-ln S_p`.
pub fn log_normalizer(p: usize, kappa: f64) -> Result<f64> {
    check_dim(p)?;
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    if kappa == 0.0 {
        return Ok(-log_sphere_surface_area(p)?);
    }
    let half = p as f64 / 2.0;
    let order = half - 1.0;
    Ok(order * kappa.ln() - half * (2.0 * PI).ln() - log_bessel_i(order, kappa)?)
}

/// `ln f_p(r; mu, kappa) = ln Z_p(kappa) + kappa mu.r`.
pub fn log_vmf_density(r: &UnitVector, params: &VmfParams) -> Result<f64> {
    let cos = params.mu.dot(r)?;
    Ok(log_normalizer(r.dim(), params.kappa)? + params.kappa * cos)
}

/// Mean direction estimate: the normalized resultant of the samples.
pub fn estimate_mean_direction(samples: &SampleCloud) -> Result<UnitVector> {
    resultant_direction(&samples.resultant(), samples.len())
}

pub(crate) fn resultant_direction(resultant: &[f64], count: usize) -> Result<UnitVector> {
    let n = norm(resultant);
    if !(n >= MIN_NORM) {
        return Err(Error::DegenerateResultant { count, norm: n });
    }
    normalize(resultant)
}

/// Concentration estimate together with whether the resultant clamp was hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub clamped: bool,
}

/// `kappa_hat = R(p - R^2) / (1 - R^2)` for mean resultant length `R`, with `R` clamped to
/// [`MAX_MEAN_RESULTANT`].
pub fn kappa_from_mean_resultant(mean_resultant: f64, p: usize) -> KappaEstimate {
    let clamped = mean_resultant > MAX_MEAN_RESULTANT;
    let r = mean_resultant.clamp(0.0, MAX_MEAN_RESULTANT);
    let r2 = r * r;
    KappaEstimate {
        kappa: r * (p as f64 - r2) / (1.0 - r2),
        clamped,
    }
}

/// Approximate maximum-likelihood concentration of the samples.
pub fn estimate_kappa(samples: &SampleCloud) -> f64 {
    kappa_from_mean_resultant(samples.mean_resultant_length(), samples.dim()).kappa
}

/// Draws `n` points from vMF(mu, kappa).
///
/// The cosine to `mu` comes from Wood's rejection sampler; the tangential part is a
/// uniformly random direction orthogonal to `mu`. The stream is fully determined by `seed`.
pub fn sample_vmf(params: &VmfParams, n: usize, seed: u64) -> Result<SampleCloud> {
    if n == 0 {
        return Err(Error::Empty("sample count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = WoodSampler::new(params.dim(), params.kappa)?;
    let mu = params.mu.as_slice();
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let w = sampler.sample(&mut rng);
        let tangent = random_tangent(mu, &mut rng);
        let scale = (1.0 - w * w).max(0.0).sqrt();
        let coords: Vec<f64> = mu.iter().zip(&tangent).map(|(m, t)| w * m + scale * t).collect();
        points.push(normalize(&coords)?);
    }
    SampleCloud::new(points)
}

struct WoodSampler {
    dim_minus_one: f64,
    kappa: f64,
    b: f64,
    x0: f64,
    c: f64,
    beta: Beta<f64>,
}

impl WoodSampler {
    fn new(p: usize, kappa: f64) -> Result<Self> {
        let dm1 = p as f64 - 1.0;
        // (-2k + sqrt(4k^2 + (p-1)^2)) / (p-1), rewritten to avoid cancellation at large k.
        let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
        let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).map_err(|e| Error::Domain(format!("beta proposal: {e}")))?;
        Ok(WoodSampler {
            dim_minus_one: dm1,
            kappa,
            b,
            x0,
            c,
            beta,
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        loop {
            let z = self.beta.sample(rng);
            let w = (1.0 - (1.0 + self.b) * z) / (1.0 - (1.0 - self.b) * z);
            let u: f64 = rng.random();
            let lhs = self.kappa * w + self.dim_minus_one * (1.0 - self.x0 * w).ln() - self.c;
            if lhs >= u.ln() {
                return w.clamp(-1.0, 1.0);
            }
        }
    }
}

fn random_tangent<R: Rng>(mu: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..mu.len()).map(|_| rng.sample(StandardNormal)).collect();
        let proj = dot(&v, mu);
        for (x, m) in v.iter_mut().zip(mu) {
            *x -= proj * m;
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: &[f64]) -> UnitVector {
        normalize(v).unwrap()
    }

    fn cloud(points: &[&[f64]]) -> SampleCloud {
        SampleCloud::new(points.iter().map(|p| unit(p)).collect()).unwrap()
    }

    /// Random orthogonal matrix via Gram-Schmidt on Gaussian columns.
    fn random_rotation(p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < p {
            let mut v: Vec<f64> = (0..p).map(|_| rand::Rng::sample(&mut rng, StandardNormal)).collect();
            for b in &basis {
                let d = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let n = norm(&v);
            if n > 1e-6 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        basis
    }

    fn rotate(q: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        q.iter().map(|row| dot(row, v)).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(unit(&[3.0, 4.0]).as_slice(), &[0.6, 0.8]);
        assert_eq!(unit(&[0.0, 0.0, 5.0]).as_slice(), &[0.0, 0.0, 1.0]);
        assert!(matches!(normalize(&[1e-15, 0.0]), Err(Error::ZeroNorm { .. })));
        assert!(matches!(normalize(&[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn unit_vector_rejects_non_unit() {
        assert!(UnitVector::new(vec![1.0, 1.0]).is_err());
        assert!(UnitVector::new(vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn surface_area_values() {
        assert_eq!(sphere_surface_area(2).unwrap(), 2.0 * PI);
        assert_eq!(sphere_surface_area(3).unwrap(), 4.0 * PI);
        // 2 pi^(p/2) / Gamma(p/2) at 30 significant digits.
        let reference = [
            (4, 19.739208802178717238),
            (5, 26.318945069571622984),
            (10, 25.501640398773454439),
            (17, 2.3966788175913636446),
            (29, 0.0014003468594286057702),
            (39, 3.5693699535622305418e-7),
        ];
        for (p, want) in reference {
            let got = sphere_surface_area(p).unwrap();
            assert!(((got - want) / want).abs() < 1e-14, "p={p}");
        }
        for p in 2..40 {
            let gamma_form = 2.0 * PI.powf(p as f64 / 2.0) / statrs::function::gamma::gamma(p as f64 / 2.0);
            assert!(
                ((sphere_surface_area(p).unwrap() - gamma_form) / gamma_form).abs() < 1e-11,
                "p={p}"
            );
            assert!((log_sphere_surface_area(p).unwrap() - gamma_form.ln()).abs() < 1e-11);
        }
        let argmax = (2..=50)
            .max_by(|&a, &b| {
                sphere_surface_area(a)
                    .unwrap()
                    .total_cmp(&sphere_surface_area(b).unwrap())
            })
            .unwrap();
        assert_eq!(argmax, 7);
        assert!(sphere_surface_area(1).is_err());
    }

    #[test]
    fn log_sphere_area_continuous_across_switch() {
        let a = sphere_surface_area(66).unwrap().ln();
        let b = log_sphere_surface_area(66).unwrap();
        assert!((a - b).abs() < 1e-11);
    }

    #[test]
    fn log_normalizer_examples() {
        let got = log_normalizer(3, 2.0).unwrap();
        let closed = (2.0 / (4.0 * PI * 2.0_f64.sinh())).ln();
        assert!((got - closed).abs() < 1e-13);
        assert!((got - (-3.126_244_439_023_513_6)).abs() < 1e-12);
        assert_eq!(log_normalizer(3, 0.0).unwrap(), -(4.0 * PI).ln());
        assert_eq!(log_normalizer(2, 0.0).unwrap(), -(2.0 * PI).ln());
        // Continuity at the uniform limit.
        assert!((log_normalizer(3, 1e-8).unwrap() + (4.0 * PI).ln()).abs() < 1e-12);
        assert!(log_normalizer(1, 1.0).is_err());
        assert!(log_normalizer(3, -1.0).is_err());
    }

    #[test]
    fn log_normalizer_p3_closed_form_sweep() {
        let mut kappa: f64 = 1e-3;
        while kappa <= 500.0 {
            let closed = kappa / (4.0 * PI * kappa.sinh());
            let got = log_normalizer(3, kappa).unwrap().exp();
            assert!(((got - closed) / closed).abs() < 1e-10, "kappa={kappa}");
            kappa *= 1.07;
        }
    }

    #[test]
    fn density_examples() {
        let mu = unit(&[0.0, 0.0, 1.0]);
        let params = VmfParams::new(mu.clone(), 2.0).unwrap();
        let at_mode = log_vmf_density(&mu, &params).unwrap();
        assert!((at_mode - (log_normalizer(3, 2.0).unwrap() + 2.0)).abs() < 1e-15);

        let r = unit(&[(0.75_f64).sqrt(), 0.0, 0.5]);
        let got = log_vmf_density(&r, &params).unwrap();
        assert!((got - (-2.126_244_439_023_513_6)).abs() < 1e-12);

        let uniform = VmfParams::new(mu, 0.0).unwrap();
        for v in [[1.0, 0.0, 0.0], [0.3, -0.2, 0.9], [0.0, 0.0, -1.0]] {
            let d = log_vmf_density(&unit(&v), &uniform).unwrap();
            assert_eq!(d, -(4.0 * PI).ln());
        }

        let wrong = unit(&[1.0, 0.0]);
        assert!(matches!(
            log_vmf_density(&wrong, &params),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn density_integrates_to_one_on_circle() {
        let mu = unit(&[0.6, -0.8]);
        for &kappa in &[0.5, 5.0, 50.0] {
            let params = VmfParams::new(mu.clone(), kappa).unwrap();
            let n = 20_000;
            let h = 2.0 * PI / n as f64;
            // Periodic trapezoid rule.
            let total: f64 = (0..n)
                .map(|i| {
                    let t = i as f64 * h;
                    log_vmf_density(&unit(&[t.cos(), t.sin()]), &params).unwrap().exp()
                })
                .sum::<f64>()
                * h;
            assert!((total - 1.0).abs() < 1e-4, "kappa={kappa}: {total}");
        }
    }

    #[test]
    fn density_integrates_to_one_on_sphere() {
        let mu = unit(&[0.2, -0.5, 0.7]);
        for &kappa in &[0.5, 5.0, 50.0] {
            let params = VmfParams::new(mu.clone(), kappa).unwrap();
            // Gauss-free product rule: midpoint in theta, periodic trapezoid in phi.
            let (nt, np) = (1200, 1200);
            let (ht, hp) = (PI / nt as f64, 2.0 * PI / np as f64);
            let mut total = 0.0;
            for i in 0..nt {
                let theta = (i as f64 + 0.5) * ht;
                let (st, ct) = theta.sin_cos();
                for j in 0..np {
                    let phi = j as f64 * hp;
                    let r = unit(&[st * phi.cos(), st * phi.sin(), ct]);
                    total += log_vmf_density(&r, &params).unwrap().exp() * st;
                }
            }
            total *= ht * hp;
            assert!((total - 1.0).abs() < 1e-4, "kappa={kappa}: {total}");
        }
    }

    #[test]
    fn mean_direction_examples() {
        let got = estimate_mean_direction(&cloud(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let s = 0.5_f64.sqrt();
        assert!((got.as_slice()[0] - s).abs() < 1e-15 && (got.as_slice()[1] - s).abs() < 1e-15);

        let same = cloud(&[&[1.0, 0.0, 0.0][..]; 5]);
        assert_eq!(estimate_mean_direction(&same).unwrap().as_slice(), &[1.0, 0.0, 0.0]);

        let antipodal = cloud(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert!(matches!(
            estimate_mean_direction(&antipodal),
            Err(Error::DegenerateResultant { .. })
        ));
    }

    #[test]
    fn kappa_examples() {
        let antipodal = cloud(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert_eq!(estimate_kappa(&antipodal), 0.0);
        let k = kappa_from_mean_resultant(0.5, 3);
        assert!((k.kappa - 0.5 * 2.75 / 0.75).abs() < 1e-15);
        assert!(!k.clamped);
        let identical = cloud(&[&[0.0, 1.0, 0.0][..]; 4]);
        let k = kappa_from_mean_resultant(identical.mean_resultant_length(), 3);
        assert!(k.kappa.is_finite() && k.kappa > 1e8);
    }

    #[test]
    fn kappa_recovered_from_samples() {
        let mu = unit(&[1.0, 2.0, -2.0]);
        let params = VmfParams::new(mu, 10.0).unwrap();
        let samples = sample_vmf(&params, 10_000, 7).unwrap();
        let k = estimate_kappa(&samples);
        assert!((9.0..=11.0).contains(&k), "kappa_hat = {k}");
    }

    #[test]
    fn uniform_sampling_has_small_resultant() {
        let params = VmfParams::new(unit(&[0.0, 0.0, 1.0]), 0.0).unwrap();
        let samples = sample_vmf(&params, 10_000, 11).unwrap();
        // Under uniformity E[R] ~ sqrt(1/N) * const ~ 0.01.
        assert!(samples.mean_resultant_length() < 0.05);
    }

    #[test]
    fn concentrated_sampling_stays_near_mean() {
        let mu = unit(&[0.3, 0.4, -0.5]);
        let params = VmfParams::new(mu.clone(), 100.0).unwrap();
        let samples = sample_vmf(&params, 1000, 3).unwrap();
        let near = samples.points().iter().filter(|r| r.dot(&mu).unwrap() > 0.9).count();
        // P(mu.r <= 0.9) = (e^{90} - e^{-100}) / (e^{100} - e^{-100}) ~ 4.5e-5.
        assert!(near >= 990, "{near}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let params = VmfParams::new(unit(&[1.0, 1.0, 1.0, 1.0]), 4.0).unwrap();
        let a = sample_vmf(&params, 200, 42).unwrap();
        let b = sample_vmf(&params, 200, 42).unwrap();
        let c = sample_vmf(&params, 200, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_recovers_mean_direction() {
        for (p, seed) in [(2, 1u64), (5, 2), (16, 3)] {
            let mu = normalize(&(0..p).map(|i| (i as f64 + 1.0).sin()).collect::<Vec<_>>()).unwrap();
            let params = VmfParams::new(mu.clone(), 5.0).unwrap();
            let samples = sample_vmf(&params, 10_000, seed).unwrap();
            let est = estimate_mean_direction(&samples).unwrap();
            assert!(est.dot(&mu).unwrap() > 0.99, "p={p}");
        }
    }

    #[test]
    fn mean_direction_is_rotation_equivariant() {
        let params = VmfParams::new(unit(&[1.0, -1.0, 0.5, 2.0]), 3.0).unwrap();
        let samples = sample_vmf(&params, 300, 5).unwrap();
        let q = random_rotation(4, 99);
        let rotated = SampleCloud::new(
            samples
                .points()
                .iter()
                .map(|r| unit(&rotate(&q, r.as_slice())))
                .collect(),
        )
        .unwrap();
        let a = rotate(&q, estimate_mean_direction(&samples).unwrap().as_slice());
        let b = estimate_mean_direction(&rotated).unwrap();
        for (x, y) in a.iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((estimate_kappa(&samples) - estimate_kappa(&rotated)).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 2..40)) {
            prop_assume!(norm(&v) > 1e-6);
            let once = normalize(&v).unwrap();
            prop_assert!((norm(once.as_slice()) - 1.0).abs() < UNIT_TOLERANCE);
            let twice = normalize(once.as_slice()).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn kappa_invariant_to_duplication(seed in 0u64..1000, kappa in 0.5f64..40.0) {
            let params = VmfParams::new(unit(&[0.0, 1.0, 1.0]), kappa).unwrap();
            let samples = sample_vmf(&params, 50, seed).unwrap();
            let mut doubled = samples.points().to_vec();
            doubled.extend_from_slice(samples.points());
            let doubled = SampleCloud::new(doubled).unwrap();
            let (a, b) = (estimate_kappa(&samples), estimate_kappa(&doubled));
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
