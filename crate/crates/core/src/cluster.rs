//! Spherical k-means and mixture-of-vMF EM clustering of unit vectors.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::sphere::{dot, kappa_from_mean_resultant, log_normalizer, norm, SampleCloud, UnitVector, MIN_NORM};

/// Upper bound on any fitted component concentration.
pub const KAPPA_CEILING: f64 = 1e5;

/// Slack allowed when checking that a monotone trace did not decrease.
const TRACE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmMode {
    #[default]
    Soft,
    Hard,
}

impl fmt::Display for EmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmMode::Soft => "soft",
            EmMode::Hard => "hard",
        })
    }
}

impl std::str::FromStr for EmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(EmMode::Soft),
            "hard" => Ok(EmMode::Hard),
            other => Err(Error::InvalidConfig(format!(
                "unknown EM mode `{other}` (expected soft or hard)"
            ))),
        }
    }
}

/// Something noteworthy that happened during a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterEvent {
    /// A hard-EM component lost all its points and was moved onto the worst-fit point.
    Reseeded {
        iteration: usize,
        component: usize,
        point: usize,
    },
    /// The objective went down by more than the slack.
    ObjectiveDecreased { iteration: usize, from: f64, to: f64 },
    /// A component concentration hit [`KAPPA_CEILING`].
    KappaCapped { iteration: usize, component: usize },
    /// The closed-form concentration update would have lowered the expected
    /// log-likelihood, so the previous value was kept.
    KappaKept { iteration: usize, component: usize },
}

impl fmt::Display for ClusterEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterEvent::Reseeded {
                iteration,
                component,
                point,
            } => {
                write!(
                    f,
                    "iteration {iteration}: component {component} empty, reseeded at point {point}"
                )
            }
            ClusterEvent::ObjectiveDecreased { iteration, from, to } => {
                write!(f, "iteration {iteration}: objective decreased {from} -> {to}")
            }
            ClusterEvent::KappaCapped { iteration, component } => {
                write!(
                    f,
                    "iteration {iteration}: component {component} kappa capped at {KAPPA_CEILING}"
                )
            }
            ClusterEvent::KappaKept { iteration, component } => {
                write!(
                    f,
                    "iteration {iteration}: component {component} kept its previous kappa"
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    /// Hard assignment of every point. For soft EM this is the most responsible component.
    pub assignments: Vec<usize>,
    /// N x k responsibilities (soft EM only).
    pub responsibilities: Option<Array2<f64>>,
    pub centroids: Vec<UnitVector>,
    /// Per-component concentration (movMF only).
    pub kappas: Option<Vec<f64>>,
    /// Mixing proportions (movMF only).
    pub weights: Option<Vec<f64>>,
    /// Objective after every iteration: summed cosine for k-means, log-likelihood for soft
    /// EM and classification log-likelihood for hard EM.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub events: Vec<ClusterEvent>,
}

impl ClusteringResult {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

fn check_k(points: &SampleCloud, k: usize, min_k: usize) -> Result<()> {
    if k < min_k || k > points.len() {
        return Err(Error::InvalidK { k, n: points.len() });
    }
    Ok(())
}

/// Seeded greedy farthest-point selection on cosine distance.
///
/// The first point is drawn uniformly from `seed`; each further pick maximizes the
/// distance `1 - cos` to the closest already chosen point, ties going to the smallest index.
/// Picks are always distinct indices.
pub fn farthest_point_seeds(points: &[UnitVector], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if k == 0 || n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut closest: Vec<f64> = points
        .iter()
        .map(|p| 1.0 - dot(p.as_slice(), points[first].as_slice()))
        .collect();
    while chosen.len() < k.min(n) {
        let next = (0..n)
            .filter(|&i| !taken[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if closest[b] >= closest[i] => Some(b),
                _ => Some(i),
            })
            .expect("fewer picks than points");
        taken[next] = true;
        chosen.push(next);
        let c = points[next].as_slice();
        closest
            .iter_mut()
            .zip(points)
            .for_each(|(d, p)| *d = d.min(1.0 - dot(p.as_slice(), c)));
    }
    chosen
}

fn nearest(point: &[f64], centroids: &[UnitVector]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (h, c) in centroids.iter().enumerate() {
        let s = dot(point, c.as_slice());
        if s > best.1 {
            best = (h, s);
        }
    }
    best
}

fn resultants(points: &[UnitVector], weight: impl Fn(usize, usize) -> f64, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = points[0].dim();
    let mut sums = vec![vec![0.0; p]; k];
    let mut mass = vec![0.0; k];
    for (i, pt) in points.iter().enumerate() {
        for h in 0..k {
            let w = weight(i, h);
            if w != 0.0 {
                mass[h] += w;
                sums[h].iter_mut().zip(pt.as_slice()).for_each(|(s, x)| *s += w * x);
            }
        }
    }
    (sums, mass)
}

fn direction(sum: &[f64]) -> Option<UnitVector> {
    let n = norm(sum);
    (n >= MIN_NORM).then(|| UnitVector::from_raw(sum.iter().map(|x| x / n).collect()))
}

/// Spherical k-means: assign by maximum cosine, then move each centroid to the normalized
/// resultant of its members.
///
/// Stops when assignments stop changing, when the objective gains less than `tol`, or after
/// `max_iter` iterations. A centroid with no members, or whose members cancel out, stays put.
pub fn spherical_kmeans(
    points: &SampleCloud,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusteringResult> {
    check_k(points, k, 2)?;
    let pts = points.points();
    let mut centroids: Vec<UnitVector> = farthest_point_seeds(pts, k, seed)
        .into_iter()
        .map(|i| pts[i].clone())
        .collect();
    let mut assignments: Vec<usize> = par::map_slice(pts, |p| nearest(p.as_slice(), &centroids).0);
    let mut trace = Vec::new();
    let mut events = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let (sums, _) = resultants(pts, |i, h| if assignments[i] == h { 1.0 } else { 0.0 }, k);
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if let Some(d) = direction(s) {
                *c = d;
            }
        }
        let objective: f64 = pts
            .iter()
            .zip(&assignments)
            .map(|(p, &h)| dot(p.as_slice(), centroids[h].as_slice()))
            .sum();
        if let Some(&prev) = trace.last() {
            if objective < prev - TRACE_SLACK {
                events.push(ClusterEvent::ObjectiveDecreased {
                    iteration: iterations,
                    from: prev,
                    to: objective,
                });
            }
        }
        let gain = trace.last().map_or(f64::INFINITY, |&prev| objective - prev);
        trace.push(objective);

        let next: Vec<usize> = par::map_slice(pts, |p| nearest(p.as_slice(), &centroids).0);
        let unchanged = next == assignments;
        assignments = next;
        if unchanged || gain < tol {
            converged = true;
            break;
        }
    }

    Ok(ClusteringResult {
        assignments,
        responsibilities: None,
        centroids,
        kappas: None,
        weights: None,
        objective_trace: trace,
        iterations,
        converged,
        events,
    })
}

struct Mixture {
    mus: Vec<UnitVector>,
    kappas: Vec<f64>,
    weights: Vec<f64>,
}

impl Mixture {
    /// Per-component `ln pi_h + ln Z_p(kappa_h)`.
    fn offsets(&self) -> Result<Vec<f64>> {
        let p = self.mus[0].dim();
        self.kappas
            .iter()
            .zip(&self.weights)
            .map(|(&kappa, &w)| Ok(w.ln() + log_normalizer(p, kappa)?))
            .collect()
    }

    /// Joint log densities `ln pi_h + ln f(r; mu_h, kappa_h)` of one point.
    fn log_joint(&self, r: &[f64], offsets: &[f64]) -> Vec<f64> {
        self.mus
            .iter()
            .zip(&self.kappas)
            .zip(offsets)
            .map(|((mu, &kappa), &o)| o + kappa * dot(r, mu.as_slice()))
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Expected complete-data log-likelihood contribution of one component's concentration,
/// up to terms independent of kappa.
fn kappa_objective(p: usize, kappa: f64, mass: f64, resultant_norm: f64) -> Result<f64> {
    Ok(mass * log_normalizer(p, kappa)? + kappa * resultant_norm)
}

/// Fits a mixture of `k` vMF components by EM.
///
/// Soft mode keeps full responsibilities and its log-likelihood trace never decreases.
/// Hard mode uses one-hot responsibilities and traces the classification log-likelihood,
/// which may dip; dips are reported as events. Components start at farthest-point seeds.
///
/// The mean direction and weight of each component are exact M-step maximizers. The
/// concentration uses the closed-form approximation capped at [`KAPPA_CEILING`]; when that
/// value would lower the expected log-likelihood below the one at the previous
/// concentration, the previous value is kept so the ascent property holds.
pub fn movmf_em(
    points: &SampleCloud,
    k: usize,
    mode: EmMode,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusteringResult> {
    check_k(points, k, 1)?;
    let pts = points.points();
    let n = pts.len();

    let seeds: Vec<UnitVector> = farthest_point_seeds(pts, k, seed)
        .into_iter()
        .map(|i| pts[i].clone())
        .collect();
    let init: Vec<usize> = par::map_slice(pts, |r| nearest(r.as_slice(), &seeds).0);
    let mut resp = Array2::<f64>::zeros((n, k));
    init.iter().enumerate().for_each(|(i, &h)| resp[[i, h]] = 1.0);

    let mut mix = Mixture {
        mus: seeds,
        kappas: vec![0.0; k],
        weights: vec![1.0 / k as f64; k],
    };
    let mut events = Vec::new();
    m_step(pts, &resp, &mut mix, None, 0, &mut events)?;

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let offsets = mix.offsets()?;
        let rows: Vec<(Vec<f64>, f64)> = par::map_slice(pts, |r| {
            let joint = mix.log_joint(r.as_slice(), &offsets);
            let total = log_sum_exp(&joint);
            (joint, total)
        });
        let objective = match mode {
            EmMode::Soft => {
                for (i, (joint, total)) in rows.iter().enumerate() {
                    for h in 0..k {
                        resp[[i, h]] = (joint[h] - total).exp();
                    }
                }
                rows.iter().map(|(_, t)| t).sum::<f64>()
            }
            EmMode::Hard => {
                resp.fill(0.0);
                let mut score = 0.0;
                for (i, (joint, _)) in rows.iter().enumerate() {
                    let h = argmax(joint);
                    resp[[i, h]] = 1.0;
                    score += joint[h];
                }
                score
            }
        };
        if !objective.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iterations });
        }
        if let Some(&prev) = trace.last() {
            if objective < prev - TRACE_SLACK {
                events.push(ClusterEvent::ObjectiveDecreased {
                    iteration: iterations,
                    from: prev,
                    to: objective,
                });
            }
        }
        let gain = trace.last().map_or(f64::INFINITY, |&prev| objective - prev);
        trace.push(objective);
        if iterations > 0 && gain.abs() <= tol * objective.abs().max(1.0) {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }
        iterations += 1;

        if mode == EmMode::Hard {
            reseed_empty(pts, &rows, &mut resp, iterations, &mut events);
        }
        let previous = mix.kappas.clone();
        m_step(pts, &resp, &mut mix, Some(&previous), iterations, &mut events)?;
    }

    let assignments = (0..n)
        .map(|i| argmax(resp.row(i).as_slice().expect("standard layout")))
        .collect();
    Ok(ClusteringResult {
        assignments,
        responsibilities: (mode == EmMode::Soft).then_some(resp),
        centroids: mix.mus,
        kappas: Some(mix.kappas),
        weights: Some(mix.weights),
        objective_trace: trace,
        iterations,
        converged,
        events,
    })
}

/// Moves every empty component onto the point with the lowest best-component log density
/// that is not the sole member of another component.
fn reseed_empty(
    pts: &[UnitVector],
    rows: &[(Vec<f64>, f64)],
    resp: &mut Array2<f64>,
    iteration: usize,
    events: &mut Vec<ClusterEvent>,
) {
    let k = resp.ncols();
    loop {
        let counts: Vec<usize> = (0..k)
            .map(|h| resp.column(h).iter().filter(|&&w| w > 0.0).count())
            .collect();
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let owner = |i: usize| argmax(resp.row(i).as_slice().expect("standard layout"));
        let worst = (0..pts.len())
            .filter(|&i| counts[owner(i)] > 1)
            .min_by(|&a, &b| {
                let fa = rows[a].0[owner(a)];
                let fb = rows[b].0[owner(b)];
                fa.total_cmp(&fb).then(a.cmp(&b))
            })
            .expect("k <= N leaves a component with two or more points");
        let from = owner(worst);
        resp[[worst, from]] = 0.0;
        resp[[worst, empty]] = 1.0;
        events.push(ClusterEvent::Reseeded {
            iteration,
            component: empty,
            point: worst,
        });
    }
}

fn m_step(
    pts: &[UnitVector],
    resp: &Array2<f64>,
    mix: &mut Mixture,
    previous_kappas: Option<&[f64]>,
    iteration: usize,
    events: &mut Vec<ClusterEvent>,
) -> Result<()> {
    let k = resp.ncols();
    let p = pts[0].dim();
    let (sums, mass) = resultants(pts, |i, h| resp[[i, h]], k);
    let total: f64 = mass.iter().sum();
    for h in 0..k {
        mix.weights[h] = mass[h] / total;
        if mass[h] <= 0.0 {
            continue;
        }
        let length = norm(&sums[h]);
        let Some(mu) = direction(&sums[h]) else {
            mix.kappas[h] = 0.0;
            continue;
        };
        mix.mus[h] = mu;
        let mut kappa = kappa_from_mean_resultant(length / mass[h], p).kappa;
        if kappa >= KAPPA_CEILING {
            kappa = KAPPA_CEILING;
            events.push(ClusterEvent::KappaCapped {
                iteration,
                component: h,
            });
        }
        if let Some(prev) = previous_kappas.map(|v| v[h]) {
            if kappa_objective(p, kappa, mass[h], length)? < kappa_objective(p, prev, mass[h], length)? {
                kappa = prev;
                events.push(ClusterEvent::KappaKept {
                    iteration,
                    component: h,
                });
            }
        }
        mix.kappas[h] = kappa;
    }
    Ok(())
}
