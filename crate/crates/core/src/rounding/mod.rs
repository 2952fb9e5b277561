//! Propagation rounding.
//!
//! One trial picks an initial vertex `u`, a state `i` with probability
//! `|u_i|^2`, a threshold `t` uniform on `[0, |u_i|^2]` and a radius `r`
//! uniform on `[R, 2R]`. Every vertex `v` then collects
//! `S_v = {p : |v_p|^2 >= t and |v~_p - u~_i|^2 <= r}` and takes the single
//! element of `S_v` when there is exactly one. Those vertices form the decided
//! set `X`; everyone else gets a fallback label.

mod derandomized;
mod monitors;

pub use monitors::{MonitorReport, MonitorRow};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::spectral_report;
use crate::instances::{Assignment, UgInstance};
use crate::normalize::NormalizedSolution;
use crate::sdp::{sdp_objective, SdpSolution};

pub const DEFAULT_RADIUS: f64 = 0.2;
/// Slack allowed on a vertex's total squared norm before sampling refuses it.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Seeded uniform label.
    Random,
    /// Label 0.
    FixedZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundingParams {
    /// Radius base `R`, strictly between 0 and 1/4.
    pub radius: f64,
    pub seed: u64,
    pub trials: usize,
    pub fallback: Fallback,
}

impl Default for RoundingParams {
    fn default() -> Self {
        RoundingParams { radius: DEFAULT_RADIUS, seed: 0, trials: 64, fallback: Fallback::Random }
    }
}

impl RoundingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius < 0.25) {
            return Err(Error::InvalidInput(format!("R = {} must lie in (0, 1/4)", self.radius)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed of trial `index`; trial 0 uses `seed` itself.
    pub fn trial_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingOutcome {
    pub initial_vertex: usize,
    pub initial_state: usize,
    pub t: f64,
    pub r: f64,
    /// `|S_v|` per vertex.
    pub s_sizes: Vec<u8>,
    /// Membership in the decided set `X`.
    pub decided: Vec<bool>,
    pub decided_count: usize,
    pub assignment: Assignment,
    pub satisfied: f64,
    pub cut_edges: usize,
    pub failed: bool,
}

/// Shared, precomputed state for rounding one (instance, solution) pair.
pub struct Rounder<'a> {
    inst: &'a UgInstance,
    s: &'a SdpSolution,
    ns: &'a NormalizedSolution,
    params: RoundingParams,
    /// `|v_p|^2`, flat by `v*k + p`.
    norms: Vec<f64>,
    /// Normalized rows per vertex, with their labels.
    vertex_rows: Vec<Vec<(usize, usize)>>,
    gram: Vec<f64>,
    rows: usize,
    epsilon: f64,
    edge_costs: Vec<f64>,
    expansion: f64,
    sigma_conflicts: usize,
}

/// Internal result of one propagation.
pub(crate) struct Propagation {
    pub sizes: Vec<u8>,
    /// Normalized row of the first member of `S_v`.
    pub first: Vec<Option<(usize, usize)>>,
    /// Every `(v, p)` with `p` in `S_v`.
    pub members: Vec<(usize, usize)>,
}

/// How undecided vertices are labelled.
pub(crate) enum Fill<'r> {
    Random(&'r mut ChaCha8Rng),
    Zero,
    /// Method of conditional expectations applied to the uniform fill.
    Greedy,
}

/// Counts of hard-invariant violations in one trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCounts {
    /// Vertices with `|S_v| > 1`.
    pub oversized: usize,
    /// Pairs of decided vertices whose chosen labels are not matched by sigma.
    pub unmatched_pairs: usize,
}

impl InvariantCounts {
    pub fn is_clean(&self) -> bool {
        self.oversized == 0 && self.unmatched_pairs == 0
    }

    pub fn add(&mut self, other: InvariantCounts) {
        self.oversized += other.oversized;
        self.unmatched_pairs += other.unmatched_pairs;
    }
}

impl<'a> Rounder<'a> {
    /// Computes the SDP objective and the expansion used by the failure
    /// gate: exact `h` for small graphs, else its certified lower bound
    /// `lambda2`.
    pub fn new(inst: &'a UgInstance, s: &'a SdpSolution, ns: &'a NormalizedSolution, params: RoundingParams) -> Result<Self> {
        let h = spectral_report(inst.graph())?.h_certified_lower();
        Self::with_expansion(inst, s, ns, params, h)
    }

    pub fn with_expansion(
        inst: &'a UgInstance,
        s: &'a SdpSolution,
        ns: &'a NormalizedSolution,
        params: RoundingParams,
        expansion: f64,
    ) -> Result<Self> {
        params.validate()?;
        let (n, k) = (inst.n(), inst.k());
        if s.n() != n || s.k() != k || ns.n() != n || ns.k() != k {
            return Err(Error::InvalidInput("instance, solution and normalized solution disagree on n or k".into()));
        }
        let objective = sdp_objective(inst, s)?;
        let norms: Vec<f64> = (0..n).flat_map(|v| (0..k).map(move |p| (v, p))).map(|(v, p)| s.norm2(v, p)).collect();
        let vertex_rows: Vec<Vec<(usize, usize)>> = (0..n)
            .map(|v| (0..k).filter_map(|p| ns.row(v, p).map(|r| (p, r))).collect())
            .collect();
        let mut rounder = Rounder {
            inst,
            s,
            ns,
            params,
            norms,
            vertex_rows,
            gram: ns.gram(),
            rows: ns.len(),
            epsilon: objective.epsilon,
            edge_costs: objective.edge_costs,
            expansion,
            sigma_conflicts: 0,
        };
        rounder.sigma_conflicts = rounder.count_sigma_conflicts();
        Ok(rounder)
    }

    pub fn params(&self) -> &RoundingParams {
        &self.params
    }

    pub fn instance(&self) -> &UgInstance {
        self.inst
    }

    pub fn solution(&self) -> &SdpSolution {
        self.s
    }

    pub fn normalized(&self) -> &NormalizedSolution {
        self.ns
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn edge_costs(&self) -> &[f64] {
        &self.edge_costs
    }

    pub fn expansion(&self) -> f64 {
        self.expansion
    }

    /// Number of (row, vertex) pairs where some label would have two images
    /// under sigma. Zero whenever the normalized vectors obey the triangle
    /// inequality.
    pub fn sigma_conflicts(&self) -> usize {
        self.sigma_conflicts
    }

    /// Fraction of vertices `X` must reach for the trial to succeed:
    /// `1 - 100 eps / (h R)`.
    pub fn success_fraction(&self) -> f64 {
        if self.epsilon == 0.0 {
            1.0
        } else {
            1.0 - 100.0 * self.epsilon / (self.expansion * self.params.radius)
        }
    }

    /// `1 - (100/(h R) + 64) eps`.
    pub fn theorem_bound(&self) -> f64 {
        if self.epsilon == 0.0 {
            1.0
        } else {
            1.0 - (100.0 / (self.expansion * self.params.radius) + 64.0) * self.epsilon
        }
    }

    #[inline]
    pub(crate) fn dist(&self, a: usize, b: usize) -> f64 {
        let m = self.rows;
        self.gram[a * m + a] + self.gram[b * m + b] - 2.0 * self.gram[a * m + b]
    }

    #[inline]
    pub(crate) fn norm2(&self, v: usize, p: usize) -> f64 {
        self.norms[v * self.inst.k() + p]
    }

    fn count_sigma_conflicts(&self) -> usize {
        let cap = 4.0 * self.params.radius;
        (0..self.rows)
            .into_par_iter()
            .map(|a| {
                self.vertex_rows
                    .iter()
                    .filter(|rows| rows.iter().filter(|&&(_, b)| self.dist(a, b) <= cap).count() > 1)
                    .count()
            })
            .sum()
    }

    pub(crate) fn propagate(&self, initial_row: usize, t: f64, r: f64) -> Propagation {
        let n = self.inst.n();
        let mut sizes = vec![0u8; n];
        let mut first = vec![None; n];
        let mut members = Vec::new();
        for v in 0..n {
            for &(p, row) in &self.vertex_rows[v] {
                if self.norm2(v, p) >= t && self.dist(row, initial_row) <= r {
                    if sizes[v] == 0 {
                        first[v] = Some((p, row));
                    }
                    sizes[v] = sizes[v].saturating_add(1);
                    members.push((v, p));
                }
            }
        }
        Propagation { sizes, first, members }
    }

    /// Builds the outcome of a propagation, filling undecided vertices from
    /// `fallback` (label 0 when `None`).
    /// Labels for a propagation result: decided vertices take their single
    /// candidate, the rest are filled according to `fill`.
    pub(crate) fn labels(&self, prop: &Propagation, fill: Fill<'_>) -> Vec<usize> {
        let n = self.inst.n();
        let k = self.inst.k();
        let mut labels: Vec<Option<usize>> = prop
            .sizes
            .iter()
            .zip(&prop.first)
            .map(|(&c, f)| if c == 1 { f.map(|(p, _)| p) } else { None })
            .collect();
        match fill {
            Fill::Random(rng) => {
                for l in labels.iter_mut().filter(|l| l.is_none()) {
                    *l = Some(rng.random_range(0..k));
                }
            }
            Fill::Zero => labels.iter_mut().filter(|l| l.is_none()).for_each(|l| *l = Some(0)),
            Fill::Greedy => {
                // Conditional expectations for a uniform fill: edges to still
                // unlabelled neighbours contribute 1/k whatever we pick, so
                // only already-labelled neighbours matter.
                let g = self.inst.graph();
                let mut gain = vec![0usize; k];
                for v in 0..n {
                    if labels[v].is_some() {
                        continue;
                    }
                    gain.iter_mut().for_each(|x| *x = 0);
                    for &w in g.neighbors(v) {
                        if let Some(lw) = labels[w] {
                            let e = g.edge_index(v, w).expect("neighbour edge exists");
                            let perm = self.inst.perm_from(e, w);
                            // perm maps w's label to v's label.
                            gain[perm[lw]] += 1;
                        }
                    }
                    let best = (0..k).max_by_key(|&p| (gain[p], std::cmp::Reverse(p))).unwrap_or(0);
                    labels[v] = Some(best);
                }
            }
        }
        labels.into_iter().map(|l| l.expect("every vertex labelled")).collect()
    }

    pub(crate) fn finish(&self, prop: &Propagation, (u, i, t, r): (usize, usize, f64, f64), fill: Fill<'_>) -> RoundingOutcome {
        let n = self.inst.n();
        let decided: Vec<bool> = prop.sizes.iter().map(|&c| c == 1).collect();
        let labels = self.labels(prop, fill);
        let decided_count = decided.iter().filter(|&&d| d).count();
        let edges = self.inst.graph().edges();
        let cut_edges = edges.iter().filter(|&&(a, b)| decided[a] != decided[b]).count();
        let sat = self.inst.satisfied_count(&labels);
        let satisfied = if edges.is_empty() { 1.0 } else { sat as f64 / edges.len() as f64 };
        let failed = (decided_count as f64) < self.success_fraction() * n as f64;
        RoundingOutcome {
            initial_vertex: u,
            initial_state: i,
            t,
            r,
            s_sizes: prop.sizes.clone(),
            decided,
            decided_count,
            assignment: Assignment::new(labels),
            satisfied,
            cut_edges,
            failed,
        }
    }

    /// Counts `|S_v| > 1` and decided pairs `(v, p)`, `(w, q)` with
    /// `|v~_p - w~_q|^2 > 4R`, i.e. `q != sigma_vw(p)`.
    pub(crate) fn check_invariants(&self, prop: &Propagation) -> InvariantCounts {
        let oversized = prop.sizes.iter().filter(|&&c| c > 1).count();
        let chosen: Vec<usize> = prop
            .sizes
            .iter()
            .zip(&prop.first)
            .filter(|&(&c, _)| c == 1)
            .map(|(_, f)| f.expect("singleton has a member").1)
            .collect();
        let cap = 4.0 * self.params.radius;
        let mut unmatched_pairs = 0;
        for (x, &a) in chosen.iter().enumerate() {
            for &b in &chosen[x + 1..] {
                if self.dist(a, b) > cap {
                    unmatched_pairs += 1;
                }
            }
        }
        InvariantCounts { oversized, unmatched_pairs }
    }

    /// Draws `(i, t, r)` for initial vertex `u`.
    pub(crate) fn sample_from(&self, u: usize, rng: &mut ChaCha8Rng) -> Result<(usize, usize, f64, f64)> {
        let rows = &self.vertex_rows[u];
        let mass: f64 = rows.iter().map(|&(p, _)| self.norm2(u, p)).sum();
        if !(mass > MASS_TOL) {
            return Err(Error::InvalidInput(format!("initial vertex {u} has total squared norm {mass}")));
        }
        let mut x = rng.random::<f64>() * mass;
        let mut pick = *rows.last().expect("mass > 0 implies a nonzero label");
        for &(p, row) in rows {
            let w = self.norm2(u, p);
            if x < w {
                pick = (p, row);
                break;
            }
            x -= w;
        }
        let (i, row) = pick;
        let t = rng.random::<f64>() * self.norm2(u, i);
        let r = self.params.radius * (1.0 + rng.random::<f64>());
        Ok((i, row, t, r))
    }

    fn trial(&self, u: Option<usize>, trial_seed: u64) -> Result<(RoundingOutcome, Propagation)> {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let u = match u {
            Some(u) => u,
            None => rng.random_range(0..self.inst.n()),
        };
        let (i, row, t, r) = self.sample_from(u, &mut rng)?;
        let prop = self.propagate(row, t, r);
        debug_assert!(self.check_invariants(&prop).is_clean(), "propagation invariant broken");
        let fallback = match self.params.fallback {
            Fallback::Random => Fill::Random(&mut rng),
            Fallback::FixedZero => Fill::Zero,
        };
        Ok((self.finish(&prop, (u, i, t, r), fallback), prop))
    }

    /// One randomized trial, fully determined by `trial_seed`.
    pub fn round_once(&self, trial_seed: u64) -> Result<RoundingOutcome> {
        Ok(self.trial(None, trial_seed)?.0)
    }

    /// One trial with a prescribed initial vertex.
    pub fn round_from(&self, initial_vertex: usize, trial_seed: u64) -> Result<RoundingOutcome> {
        if initial_vertex >= self.inst.n() {
            return Err(Error::InvalidInput(format!("initial vertex {initial_vertex} out of range")));
        }
        Ok(self.trial(Some(initial_vertex), trial_seed)?.0)
    }

    pub(crate) fn trial_with_invariants(&self, u: Option<usize>, trial_seed: u64) -> Result<(RoundingOutcome, Propagation, InvariantCounts)> {
        let (outcome, prop) = self.trial(u, trial_seed)?;
        let counts = self.check_invariants(&prop);
        Ok((outcome, prop, counts))
    }

    /// [`Rounder::round_once`] together with the singleton and matching
    /// invariant counts of that trial.
    pub fn round_once_checked(&self, trial_seed: u64) -> Result<(RoundingOutcome, InvariantCounts)> {
        let (outcome, _, counts) = self.trial_with_invariants(None, trial_seed)?;
        Ok((outcome, counts))
    }

    /// Runs `params.trials` independent trials and keeps the best non-failed
    /// outcome by satisfied fraction (lower trial index on ties); if every
    /// trial fails, the best failed one.
    pub fn round_best_of(&self) -> Result<BestOf> {
        let best = (0..self.params.trials)
            .into_par_iter()
            .map(|idx| {
                let (outcome, _, invariants) = self.trial_with_invariants(None, self.params.trial_seed(idx))?;
                let failed_trials = usize::from(outcome.failed);
                Ok::<_, Error>(BestOf { outcome, trial: idx, trials: 1, failed_trials, invariants })
            })
            .try_reduce_with(|a, b| Ok(a.merge(b)))
            .expect("at least one trial")?;
        Ok(best)
    }

    /// Deterministic rounding by enumerating every outcome-distinct choice of
    /// `(u, i, t, r)`. Undecided vertices are labelled greedily by conditional
    /// expectation of the uniform fill, or all 0 when that scores higher, so
    /// the result is at least the mean of randomized trials under either
    /// fallback. Limited to `n*k <= 2000`.
    pub fn round_derandomized(&self) -> Result<RoundingOutcome> {
        derandomized::run(self)
    }

    pub fn lemma_monitors(&self, trials: usize, fixed_initial: usize) -> Result<MonitorReport> {
        monitors::run(self, trials, fixed_initial)
    }
}

/// Best outcome of a batch of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestOf {
    pub outcome: RoundingOutcome,
    /// Index of the winning trial.
    pub trial: usize,
    pub trials: usize,
    pub failed_trials: usize,
    /// Summed over all trials.
    pub invariants: InvariantCounts,
}

impl BestOf {
    fn merge(self, other: BestOf) -> BestOf {
        let key = |b: &BestOf| (!b.outcome.failed, b.outcome.satisfied);
        let (ka, kb) = (key(&self), key(&other));
        let a_wins = (ka.0 && !kb.0) || (ka.0 == kb.0 && (ka.1 > kb.1 || (ka.1 == kb.1 && self.trial < other.trial)));
        let trials = self.trials + other.trials;
        let failed_trials = self.failed_trials + other.failed_trials;
        let mut invariants = self.invariants;
        invariants.add(other.invariants);
        let mut winner = if a_wins { self } else { other };
        winner.trials = trials;
        winner.failed_trials = failed_trials;
        winner.invariants = invariants;
        winner
    }
}

/// The partial matching `sigma_vw`: `p -> q` when `|v~_p - w~_q|^2 <= 4R`.
/// Errors if some `p` has two images.
pub fn sigma(ns: &NormalizedSolution, v: usize, w: usize, radius: f64) -> Result<Vec<Option<usize>>> {
    if !(radius > 0.0 && radius < 0.25) {
        return Err(Error::InvalidInput(format!("R = {radius} must lie in (0, 1/4)")));
    }
    let k = ns.k();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut map = vec![None; k];
    for (p, slot) in map.iter_mut().enumerate() {
        let Some(vp) = ns.vector(v, p) else { continue };
        for q in 0..k {
            let Some(wq) = ns.vector(w, q) else { continue };
            if dist(vp, wq) <= 4.0 * radius {
                if let Some(prev) = slot.replace(q) {
                    return Err(Error::Invariant(format!(
                        "sigma_{v}{w} sends {p} to both {prev} and {q}"
                    )));
                }
            }
        }
    }
    Ok(map)
}
