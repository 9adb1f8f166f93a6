//! Spherical k-means and the per-class prototype bank.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{l2_norm, normalize, LabeledEmbeddingSet, UnitEmbedding};

/// Cluster index per point plus the summed cosine distance to the assigned prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub assignment: Vec<usize>,
    pub objective: f64,
}

/// Per-class prototypes with the scoring parameters needed to turn them into a posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    num_classes: usize,
    dim: usize,
    prototypes: Vec<Vec<UnitEmbedding>>,
    kappa: f64,
    tau_sim: f64,
    seed: u64,
}

impl PrototypeBank {
    pub fn new(
        prototypes: Vec<Vec<UnitEmbedding>>,
        kappa: f64,
        tau_sim: f64,
        seed: u64,
    ) -> Result<Self> {
        if prototypes.len() < 2 {
            return Err(Error::TooFewClasses);
        }
        let dim = prototypes
            .iter()
            .flatten()
            .next()
            .map(UnitEmbedding::dim)
            .ok_or(Error::EmptyInput)?;
        for (c, class) in prototypes.iter().enumerate() {
            if class.is_empty() {
                return Err(Error::MissingClass(c));
            }
            for p in class {
                if p.dim() != dim {
                    return Err(Error::DimMismatch {
                        expected: dim,
                        got: p.dim(),
                    });
                }
            }
        }
        check_positive("kappa", kappa)?;
        check_positive("tau_sim", tau_sim)?;
        Ok(Self {
            num_classes: prototypes.len(),
            dim,
            prototypes,
            kappa,
            tau_sim,
            seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prototypes(&self) -> &[Vec<UnitEmbedding>] {
        &self.prototypes
    }

    pub fn class_prototypes(&self, class: usize) -> &[UnitEmbedding] {
        &self.prototypes[class]
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn tau_sim(&self) -> f64 {
        self.tau_sim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same prototypes with a different similarity temperature.
    pub fn with_tau_sim(&self, tau_sim: f64) -> Result<Self> {
        check_positive("tau_sim", tau_sim)?;
        Ok(Self {
            tau_sim,
            ..self.clone()
        })
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Stopping and restart controls for [`fit_best_of`] and [`build_bank_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
            restarts: 5,
        }
    }
}

/// Result of one k-means run with its per-iteration objective history.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub prototypes: Vec<UnitEmbedding>,
    pub assignment: ClusterAssignment,
    /// Objective after the initial assignment, then after every (update, assign) round.
    pub objectives: Vec<f64>,
}

fn cosine_distance(a: &UnitEmbedding, b: &UnitEmbedding) -> f64 {
    1.0 - a.cosine(b)
}

/// k-means++ seeding under cosine distance. Returns `min(k, points.len())` prototypes.
pub fn init_prototypes(points: &[UnitEmbedding], k: usize, seed: u64) -> Result<Vec<UnitEmbedding>> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    check_dims(points)?;
    let n = points.len();
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut centers = vec![points[first].clone()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|z| cosine_distance(z, &points[first]).max(0.0))
        .collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            let mut last_positive = 0;
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 {
                    last_positive = i;
                    acc += d;
                    if acc > u {
                        chosen = Some(i);
                        break;
                    }
                }
            }
            chosen.unwrap_or(last_positive)
        } else {
            // every point coincides with a center already
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, z) in dist.iter_mut().zip(points) {
            *d = d.min(cosine_distance(z, &points[pick]).max(0.0));
        }
    }
    Ok(centers)
}

fn check_dims(points: &[UnitEmbedding]) -> Result<()> {
    let d = points[0].dim();
    match points.iter().find(|p| p.dim() != d) {
        Some(p) => Err(Error::DimMismatch {
            expected: d,
            got: p.dim(),
        }),
        None => Ok(()),
    }
}

/// Assigns each point to its most similar prototype, ties to the lowest index.
pub fn assign(points: &[UnitEmbedding], prototypes: &[UnitEmbedding]) -> Result<ClusterAssignment> {
    if prototypes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d = prototypes[0].dim();
    for z in points.iter().chain(prototypes) {
        if z.dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: z.dim(),
            });
        }
    }
    let mut assignment = Vec::with_capacity(points.len());
    let mut objective = 0.0;
    for z in points {
        let mut best = 0;
        let mut best_cos = z.cosine(&prototypes[0]);
        for (k, p) in prototypes.iter().enumerate().skip(1) {
            let c = z.cosine(p);
            if c > best_cos {
                best = k;
                best_cos = c;
            }
        }
        assignment.push(best);
        objective += 1.0 - best_cos;
    }
    Ok(ClusterAssignment {
        assignment,
        objective,
    })
}

fn cluster_sums(points: &[UnitEmbedding], assignment: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = points[0].dim();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0; k];
    for (z, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(z.as_slice()) {
            *s += v;
        }
    }
    (sums, counts)
}

/// Moves points into empty clusters. Each empty cluster takes the point farthest
/// from the normalized centroid of its own (multi-member) cluster.
fn reseed_empty(points: &[UnitEmbedding], assignment: &mut [usize], k: usize) {
    loop {
        let (sums, counts) = cluster_sums(points, assignment, k);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, z) in points.iter().enumerate() {
            let a = assignment[i];
            if counts[a] < 2 {
                continue;
            }
            let norm = l2_norm(&sums[a]);
            let cos = if norm < 1e-12 {
                0.0
            } else {
                (crate::model::dot(z.as_slice(), &sums[a]) / norm).clamp(-1.0, 1.0)
            };
            let dist = 1.0 - cos;
            if best.is_none_or(|(_, bd)| dist > bd) {
                best = Some((i, dist));
            }
        }
        match best {
            Some((i, _)) => assignment[i] = empty,
            // fewer points than clusters; nothing left to move
            None => return,
        }
    }
}

fn validate_assignment(points: &[UnitEmbedding], assignment: &ClusterAssignment, k: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if assignment.assignment.len() != points.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: assignment.assignment.len(),
        });
    }
    if let Some(a) = assignment.assignment.iter().find(|&&a| a >= k) {
        return Err(Error::InvalidParameter(format!("cluster index {a} >= k = {k}")));
    }
    check_dims(points)
}

/// Normalized-sum centroid update with farthest-point re-seeding of empty clusters.
///
/// A cluster whose members cancel out exactly yields [`Error::ZeroNorm`].
pub fn update_centroids(
    points: &[UnitEmbedding],
    assignment: &ClusterAssignment,
    k: usize,
) -> Result<Vec<UnitEmbedding>> {
    validate_assignment(points, assignment, k)?;
    if k > points.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {} points",
            points.len()
        )));
    }
    let mut a = assignment.assignment.clone();
    reseed_empty(points, &mut a, k);
    let (sums, _) = cluster_sums(points, &a, k);
    sums.iter().map(|s| normalize(s)).collect()
}

// Like `update_centroids`, but a cancelling cluster keeps one of its members as
// prototype. Any unit vector gives such a cluster the same cost, so the
// objective still cannot increase.
fn update_step(points: &[UnitEmbedding], assignment: &[usize], k: usize) -> Vec<UnitEmbedding> {
    let mut a = assignment.to_vec();
    reseed_empty(points, &mut a, k);
    let (sums, _) = cluster_sums(points, &a, k);
    sums.iter()
        .enumerate()
        .map(|(j, s)| match normalize(s) {
            Ok(p) => p,
            Err(_) => {
                let member = a.iter().position(|&x| x == j).unwrap_or(0);
                points[member].clone()
            }
        })
        .collect()
}

/// Single seeded run of alternating assignment and centroid updates.
pub fn fit(
    points: &[UnitEmbedding],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<UnitEmbedding>, ClusterAssignment)> {
    let t = fit_with_trace(points, k, seed, max_iters, tol)?;
    Ok((t.prototypes, t.assignment))
}

/// [`fit`] that also returns the objective after every iteration.
pub fn fit_with_trace(
    points: &[UnitEmbedding],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<FitTrace> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be nonnegative, got {tol}")));
    }
    let mut prototypes = init_prototypes(points, k, seed)?;
    let k = prototypes.len();
    let mut current = assign(points, &prototypes)?;
    let mut objectives = vec![current.objective];
    // summation order changes between rounds, so allow rounding-level growth
    let slack = 1e-12 * points.len() as f64;
    let mut iters = 0;
    let mut step = |protos: Vec<UnitEmbedding>, current: &mut ClusterAssignment, prototypes: &mut Vec<UnitEmbedding>| -> Result<f64> {
        let next = assign(points, &protos)?;
        if next.objective > current.objective + slack {
            return Err(Error::InvariantViolation(format!(
                "k-means objective increased from {} to {}",
                current.objective, next.objective
            )));
        }
        let improvement = current.objective - next.objective;
        objectives.push(next.objective);
        *prototypes = protos;
        *current = next;
        Ok(improvement)
    };
    loop {
        while iters < max_iters {
            iters += 1;
            let protos = update_step(points, &current.assignment, k);
            if step(protos, &mut current, &mut prototypes)? < tol {
                break;
            }
        }
        // Lloyd has stalled; try single-point moves before giving up
        let mut moved = current.assignment.clone();
        if iters >= max_iters || !hartigan_pass(points, &mut moved, k) {
            break;
        }
        iters += 1;
        let protos = update_step(points, &moved, k);
        if step(protos, &mut current, &mut prototypes)? <= 0.0 {
            break;
        }
    }
    Ok(FitTrace {
        prototypes,
        assignment: current,
        objectives,
    })
}

/// Local search on the partition cost `Σ_k (n_k − ‖S_k‖)`, the objective of a
/// partition under its own normalized-sum centroids. Tries single-point moves
/// first and, once none helps, a chain of moves. Returns whether anything moved.
fn hartigan_pass(points: &[UnitEmbedding], assignment: &mut [usize], k: usize) -> bool {
    if k < 2 {
        return false;
    }
    let mut search = MoveSearch::new(points, assignment, k);
    let mut moved = false;
    loop {
        if search.single_moves() || search.chain_moves() {
            moved = true;
        } else {
            break;
        }
    }
    assignment.copy_from_slice(&search.assignment);
    moved
}

struct MoveSearch<'a> {
    points: &'a [UnitEmbedding],
    assignment: Vec<usize>,
    sums: Vec<Vec<f64>>,
    norms: Vec<f64>,
    counts: Vec<usize>,
    k: usize,
}

const MOVE_GAIN: f64 = 1e-12;

impl<'a> MoveSearch<'a> {
    fn new(points: &'a [UnitEmbedding], assignment: &[usize], k: usize) -> Self {
        let (sums, counts) = cluster_sums(points, assignment, k);
        let norms = sums.iter().map(|s| l2_norm(s)).collect();
        Self {
            points,
            assignment: assignment.to_vec(),
            sums,
            norms,
            counts,
            k,
        }
    }

    // Change in partition cost if point `i` moves to cluster `b`; `None` would empty its cluster.
    fn delta(&self, i: usize, b: usize) -> Option<f64> {
        let a = self.assignment[i];
        if self.counts[a] < 2 {
            return None;
        }
        let z = self.points[i].as_slice();
        let (mut without, mut with) = (0.0, 0.0);
        for ((sa, sb), v) in self.sums[a].iter().zip(&self.sums[b]).zip(z) {
            without += (sa - v) * (sa - v);
            with += (sb + v) * (sb + v);
        }
        Some(self.norms[a] - without.sqrt() + self.norms[b] - with.sqrt())
    }

    fn apply(&mut self, i: usize, b: usize) {
        let a = self.assignment[i];
        let z = self.points[i].as_slice();
        for (s, v) in self.sums[a].iter_mut().zip(z) {
            *s -= v;
        }
        for (s, v) in self.sums[b].iter_mut().zip(z) {
            *s += v;
        }
        self.counts[a] -= 1;
        self.counts[b] += 1;
        self.assignment[i] = b;
        self.norms[a] = l2_norm(&self.sums[a]);
        self.norms[b] = l2_norm(&self.sums[b]);
    }

    fn single_moves(&mut self) -> bool {
        let mut moved = false;
        loop {
            let mut changed = false;
            for i in 0..self.points.len() {
                let a = self.assignment[i];
                let mut best: Option<(usize, f64)> = None;
                for b in (0..self.k).filter(|&b| b != a) {
                    if let Some(d) = self.delta(i, b) {
                        if d < -MOVE_GAIN && best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((b, d));
                        }
                    }
                }
                if let Some((b, _)) = best {
                    self.apply(i, b);
                    changed = true;
                    moved = true;
                }
            }
            if !changed {
                return moved;
            }
        }
    }

    // Moves every point once, greedily and even when the cost rises, then keeps
    // the best prefix of that sequence. Escapes optima that need several
    // simultaneous moves.
    fn chain_moves(&mut self) -> bool {
        let n = self.points.len();
        let mut locked = vec![false; n];
        let mut trail: Vec<(usize, usize)> = Vec::with_capacity(n);
        let (mut cum, mut best_cum, mut best_len) = (0.0, 0.0, 0);
        for _ in 0..n {
            let mut best: Option<(usize, usize, f64)> = None;
            for i in (0..n).filter(|&i| !locked[i]) {
                for b in (0..self.k).filter(|&b| b != self.assignment[i]) {
                    if let Some(d) = self.delta(i, b) {
                        if best.is_none_or(|(_, _, bd)| d < bd) {
                            best = Some((i, b, d));
                        }
                    }
                }
            }
            let Some((i, b, d)) = best else { break };
            trail.push((i, self.assignment[i]));
            self.apply(i, b);
            locked[i] = true;
            cum += d;
            if cum < best_cum - MOVE_GAIN {
                best_cum = cum;
                best_len = trail.len();
            }
        }
        for &(i, a) in trail[best_len..].iter().rev() {
            self.apply(i, a);
        }
        best_len > 0
    }
}

/// Best of `opts.restarts` runs with seeds `seed, seed + 1, ...`; ties keep the earliest run.
pub fn fit_best_of(points: &[UnitEmbedding], k: usize, seed: u64, opts: &FitOptions) -> Result<FitTrace> {
    if opts.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be at least 1".into()));
    }
    let mut best: Option<FitTrace> = None;
    for r in 0..opts.restarts as u64 {
        let t = fit_with_trace(points, k, seed.wrapping_add(r), opts.max_iters, opts.tol)?;
        if best
            .as_ref()
            .is_none_or(|b| t.assignment.objective < b.assignment.objective)
        {
            best = Some(t);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Builds a bank with the default [`FitOptions`].
pub fn build_bank(
    data: &LabeledEmbeddingSet,
    k: usize,
    kappa: f64,
    tau_sim: f64,
    seed: u64,
) -> Result<PrototypeBank> {
    build_bank_with(data, k, kappa, tau_sim, seed, &FitOptions::default())
}

/// Clusters every class separately with `K_c = min(k, n_c)` and seed `seed + c`.
pub fn build_bank_with(
    data: &LabeledEmbeddingSet,
    k: usize,
    kappa: f64,
    tau_sim: f64,
    seed: u64,
    opts: &FitOptions,
) -> Result<PrototypeBank> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    check_positive("kappa", kappa)?;
    check_positive("tau_sim", tau_sim)?;
    let per_class: Vec<Vec<UnitEmbedding>> = (0..data.num_classes())
        .map(|c| data.class_embeddings(c))
        .collect();
    if let Some(c) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::MissingClass(c));
    }
    let prototypes = per_class
        .par_iter()
        .enumerate()
        .map(|(c, points)| {
            fit_best_of(points, k, seed.wrapping_add(c as u64), opts).map(|t| t.prototypes)
        })
        .collect::<Result<Vec<_>>>()?;
    PrototypeBank::new(prototypes, kappa, tau_sim, seed)
}
