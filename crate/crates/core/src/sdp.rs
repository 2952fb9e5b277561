//! Vector solutions of the Unique Games SDP relaxation: storage, the
//! feasibility verifier, the objective, and constructions of feasible points.
//!
//! Feasible points are built from assignments and combined as direct sums.
//! If every part satisfies the constraints, so does the weighted direct sum:
//! inner products and squared distances over a direct sum are the weighted
//! sums of the per-part ones, and every constraint is linear in those.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::instances::{Assignment, UgInstance};

/// Default feasibility tolerance for solutions handed to normalization.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;
/// Random triples checked for the triangle constraint above `n*k = 60`.
pub const DEFAULT_TRIPLE_BUDGET: usize = 100_000;
/// Largest `n*k` for which every triple is checked.
pub const EXHAUSTIVE_TRIPLES_MAX: usize = 60;

/// One vector per (vertex, label), all in a common `dim`-dimensional space,
/// stored vertex-major then label-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    n: usize,
    k: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SdpSolution {
    pub fn new(n: usize, k: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * k * dim {
            return Err(Error::InvalidInput(format!(
                "expected {} coordinates for n={n}, k={k}, dim={dim}, got {}",
                n * k * dim,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        Ok(SdpSolution { n, k, dim, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flat index of `(v, i)`.
    #[inline]
    pub fn index(&self, v: usize, i: usize) -> usize {
        v * self.k + i
    }

    #[inline]
    pub fn vector(&self, v: usize, i: usize) -> &[f64] {
        let start = self.index(v, i) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn vector_mut(&mut self, v: usize, i: usize) -> &mut [f64] {
        let start = self.index(v, i) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn norm2(&self, v: usize, i: usize) -> f64 {
        dot(self.vector(v, i), self.vector(v, i))
    }

    pub fn dist2(&self, (v, i): (usize, usize), (w, j): (usize, usize)) -> f64 {
        self.vector(v, i)
            .iter()
            .zip(self.vector(w, j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Gram matrix over all `n*k` vectors, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let total = self.n * self.k;
        let dim = self.dim;
        let mut g = vec![0.0; total * total];
        g.par_chunks_mut(total).enumerate().for_each(|(a, row)| {
            let x = &self.data[a * dim..(a + 1) * dim];
            for (b, slot) in row.iter_mut().enumerate() {
                *slot = dot(x, &self.data[b * dim..(b + 1) * dim]);
            }
        });
        g
    }

    /// Writes the solution file: `{"dim","k","n","vectors":[[[..]]]}` with
    /// 17-significant-digit floats.
    pub fn to_json(&self) -> String {
        self.to_json_with(|_| {})
    }

    pub(crate) fn to_json_with(&self, extra: impl FnOnce(&mut String)) -> String {
        let mut out = String::new();
        write!(out, "{{\"dim\":{},\"k\":{},\"n\":{},\"vectors\":[", self.dim, self.k, self.n).unwrap();
        for v in 0..self.n {
            out.push_str(if v == 0 { "[" } else { ",[" });
            for i in 0..self.k {
                out.push_str(if i == 0 { "[" } else { ",[" });
                for (c, x) in self.vector(v, i).iter().enumerate() {
                    if c > 0 {
                        out.push(',');
                    }
                    out.push_str(&g17(*x));
                }
                out.push(']');
            }
            out.push(']');
        }
        out.push(']');
        extra(&mut out);
        out.push('}');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SolutionFile = serde_json::from_str(text)?;
        file.into_solution()
    }
}

#[derive(Deserialize)]
pub(crate) struct SolutionFile {
    pub dim: usize,
    pub k: usize,
    pub n: usize,
    pub vectors: Vec<Vec<Vec<f64>>>,
}

impl SolutionFile {
    pub(crate) fn into_solution(self) -> Result<SdpSolution> {
        if self.vectors.len() != self.n {
            return Err(Error::InvalidInput(format!("{} vertex rows, n = {}", self.vectors.len(), self.n)));
        }
        let mut data = Vec::with_capacity(self.n * self.k * self.dim);
        for (v, row) in self.vectors.into_iter().enumerate() {
            if row.len() != self.k {
                return Err(Error::InvalidInput(format!("vertex {v} has {} labels, k = {}", row.len(), self.k)));
            }
            for (i, vec) in row.into_iter().enumerate() {
                if vec.len() != self.dim {
                    return Err(Error::InvalidInput(format!(
                        "vector ({v}, {i}) has length {}, dim = {}",
                        vec.len(),
                        self.dim
                    )));
                }
                data.extend(vec);
            }
        }
        SdpSolution::new(self.n, self.k, self.dim, data)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The intended integral solution: `u_i = 1` (a one-dimensional vector) when
/// `u` has label `i`, `0` otherwise. Every vertex's chosen label maps to the
/// same unit vector, so vertices agree whenever their labels are related by
/// the planted permutations.
pub fn integral_solution(inst: &UgInstance, a: &Assignment) -> Result<SdpSolution> {
    a.validate(inst.n(), inst.k())?;
    let (n, k) = (inst.n(), inst.k());
    let mut data = vec![0.0; n * k];
    for (v, &l) in a.labels.iter().enumerate() {
        data[v * k + l] = 1.0;
    }
    SdpSolution::new(n, k, 1, data)
}

/// Integral solution with label-indexed coordinates: `u_i = e_i` when `u`
/// has label `i`. Vertices with different labels get orthogonal vectors.
pub fn integral_solution_spread(n: usize, k: usize, a: &Assignment) -> Result<SdpSolution> {
    a.validate(n, k)?;
    let mut data = vec![0.0; n * k * k];
    for (v, &l) in a.labels.iter().enumerate() {
        data[(v * k + l) * k + l] = 1.0;
    }
    SdpSolution::new(n, k, k, data)
}

/// Weighted direct sum: the vector for `(v, i)` is the concatenation over
/// parts `j` of `sqrt(w_j) * part_j(v, i)`. Weights must be positive and sum
/// to one within `1e-12`.
pub fn mix_solutions(parts: &[(&SdpSolution, f64)]) -> Result<SdpSolution> {
    let Some((first, _)) = parts.first() else {
        return Err(Error::InvalidInput("mixture needs at least one part".into()));
    };
    let (n, k) = (first.n, first.k);
    if parts.iter().any(|(s, _)| s.n != n || s.k != k) {
        return Err(Error::InvalidInput("mixture parts disagree on n or k".into()));
    }
    if parts.iter().any(|&(_, w)| !(w > 0.0)) {
        return Err(Error::InvalidInput("mixture weights must be positive".into()));
    }
    let total: f64 = parts.iter().map(|&(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("mixture weights sum to {total}, not 1")));
    }
    let dim: usize = parts.iter().map(|(s, _)| s.dim).sum();
    let mut data = Vec::with_capacity(n * k * dim);
    for v in 0..n {
        for i in 0..k {
            for &(s, w) in parts {
                let scale = w.sqrt();
                data.extend(s.vector(v, i).iter().map(|x| scale * x));
            }
        }
    }
    SdpSolution::new(n, k, dim, data)
}

/// How the triangle constraint is sampled once exhaustive checking is too
/// expensive.
#[derive(Debug, Clone, Copy)]
pub struct TripleCheck<'a> {
    pub budget: usize,
    pub seed: u64,
    /// When present, every triple among the `2k` vectors of each edge's
    /// endpoints is also checked.
    pub edges: Option<&'a [(usize, usize)]>,
}

impl Default for TripleCheck<'_> {
    fn default() -> Self {
        TripleCheck { budget: DEFAULT_TRIPLE_BUDGET, seed: 0, edges: None }
    }
}

/// Largest triangle-inequality violation `d(a,c) - d(a,b) - d(b,c)` over
/// row indices `0..total`, given squared distances by `dist`. `vertex_rows[v]`
/// lists the rows belonging to vertex `v` (used for edge-local triples).
/// Returns `(max_violation, triples_checked, exhaustive)`.
pub(crate) fn triangle_scan(
    total: usize,
    vertex_rows: &[Vec<usize>],
    dist: &(dyn Fn(usize, usize) -> f64 + Sync),
    check: &TripleCheck<'_>,
) -> (f64, usize, bool) {
    let violation = |a: usize, b: usize, c: usize| dist(a, c) - dist(a, b) - dist(b, c);
    if total <= EXHAUSTIVE_TRIPLES_MAX {
        let worst = (0..total)
            .into_par_iter()
            .map(|a| {
                let mut w = f64::NEG_INFINITY;
                for b in 0..total {
                    for c in 0..total {
                        w = w.max(violation(a, b, c));
                    }
                }
                w
            })
            .reduce(|| f64::NEG_INFINITY, f64::max);
        return (worst.max(0.0), total * total * total, true);
    }
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    for _ in 0..check.budget {
        let (a, b, c) = (rng.random_range(0..total), rng.random_range(0..total), rng.random_range(0..total));
        worst = worst.max(violation(a, b, c));
        count += 1;
    }
    if let Some(edges) = check.edges {
        let (local, local_count) = edges
            .par_iter()
            .map(|&(u, v)| {
                let idx: Vec<usize> = vertex_rows[u].iter().chain(&vertex_rows[v]).copied().collect();
                let mut w = 0.0f64;
                for &a in &idx {
                    for &b in &idx {
                        for &c in &idx {
                            w = w.max(violation(a, b, c));
                        }
                    }
                }
                (w, idx.len().pow(3))
            })
            .reduce(|| (0.0, 0), |x, y| (x.0.max(y.0), x.1 + y.1));
        worst = worst.max(local);
        count += local_count;
    }
    (worst, count, false)
}

/// Rows `v*k .. v*k + k` for every vertex.
pub(crate) fn dense_vertex_rows(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..n).map(|v| (v * k..(v + 1) * k).collect()).collect()
}

/// Largest violation of each constraint family; all are `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `|<u_i, u_j>|`, `i != j`.
    pub orthogonality: f64,
    /// `|sum_i |u_i|^2 - 1|`.
    pub unit_mass: f64,
    /// `|u_i - w_l|^2 - |u_i - v_j|^2 - |v_j - w_l|^2`.
    pub triangle: f64,
    /// `|u_i - v_j|^2 - |u_i|^2 - |v_j|^2`.
    pub triangle_origin: f64,
    /// `|u_i|^2 - |u_i - v_j|^2 - |v_j|^2`.
    pub triangle_norm: f64,
    pub triples_checked: usize,
    pub triangle_exhaustive: bool,
    pub tol: f64,
    pub pass: bool,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        [self.orthogonality, self.unit_mass, self.triangle, self.triangle_origin, self.triangle_norm]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Checks orthogonality and unit mass per vertex, the two pairwise triangle
/// families over all pairs, and the three-point triangle family
/// exhaustively when `n*k <= 60`, otherwise on sampled and edge-local triples.
pub fn verify_feasibility(s: &SdpSolution, tol: f64, check: &TripleCheck<'_>) -> FeasibilityReport {
    let (n, k) = (s.n, s.k);
    let total = n * k;
    let gram = s.gram();
    let g = |a: usize, b: usize| gram[a * total + b];

    let mut orthogonality = 0.0f64;
    let mut unit_mass = 0.0f64;
    for v in 0..n {
        let mut mass = 0.0;
        for i in 0..k {
            let a = v * k + i;
            mass += g(a, a);
            for j in (i + 1)..k {
                orthogonality = orthogonality.max(g(a, v * k + j).abs());
            }
        }
        unit_mass = unit_mass.max((mass - 1.0).abs());
    }

    let (triangle_origin, triangle_norm) = (0..total)
        .into_par_iter()
        .map(|a| {
            let (mut t0, mut t1) = (0.0f64, 0.0f64);
            for b in 0..total {
                let d = g(a, a) + g(b, b) - 2.0 * g(a, b);
                t0 = t0.max(d - g(a, a) - g(b, b));
                t1 = t1.max(g(a, a) - d - g(b, b));
            }
            (t0, t1)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)));

    let dist = |a: usize, b: usize| g(a, a) + g(b, b) - 2.0 * g(a, b);
    let (triangle, triples_checked, triangle_exhaustive) = triangle_scan(total, &dense_vertex_rows(n, k), &dist, check);

    let mut report = FeasibilityReport {
        orthogonality,
        unit_mass,
        triangle,
        triangle_origin,
        triangle_norm,
        triples_checked,
        triangle_exhaustive,
        tol,
        pass: false,
    };
    report.pass = report.max_violation() <= tol;
    report
}

/// Per-edge costs `eps_vw = 1/2 sum_i |v_i - w_{pi_vw(i)}|^2` and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpObjectiveReport {
    pub epsilon: f64,
    pub edge_costs: Vec<f64>,
}

pub fn sdp_objective(inst: &UgInstance, s: &SdpSolution) -> Result<SdpObjectiveReport> {
    if s.n != inst.n() || s.k != inst.k() {
        return Err(Error::InvalidInput(format!(
            "solution is {}x{}, instance is {}x{}",
            s.n,
            s.k,
            inst.n(),
            inst.k()
        )));
    }
    let edge_costs: Vec<f64> = inst
        .graph()
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(u, v))| {
            let p = inst.perm(e);
            0.5 * (0..s.k).map(|i| s.dist2((u, i), (v, p[i]))).sum::<f64>()
        })
        .collect();
    let epsilon = if edge_costs.is_empty() {
        0.0
    } else {
        edge_costs.iter().sum::<f64>() / edge_costs.len() as f64
    };
    Ok(SdpObjectiveReport { epsilon, edge_costs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::gen_random_regular;
    use crate::instances::{evaluate, gen_planted, random_assignment};
    use approx::assert_abs_diff_eq;

    fn planted(seed: u64, noise: f64) -> (UgInstance, Assignment) {
        let g = gen_random_regular(16, 3, seed).unwrap();
        gen_planted(&g, 3, noise, seed).unwrap()
    }

    #[test]
    fn integral_objective_counts_violations() {
        let (inst, plant) = planted(1, 0.0);
        let s = integral_solution(&inst, &plant).unwrap();
        assert_eq!(sdp_objective(&inst, &s).unwrap().epsilon, 0.0);
        for seed in 0..10 {
            let a = random_assignment(16, 3, seed);
            let s = integral_solution(&inst, &a).unwrap();
            let spread = integral_solution_spread(16, 3, &a).unwrap();
            let expected = 1.0 - evaluate(&inst, &a).unwrap();
            assert_abs_diff_eq!(sdp_objective(&inst, &s).unwrap().epsilon, expected, epsilon = 1e-15);
            // Label-indexed vectors only cancel when both endpoints carry the same label.
            let m = inst.graph().num_edges();
            let agree = (0..m)
                .filter(|&e| {
                    let (v, w) = inst.graph().edges()[e];
                    let (lv, lw) = (a.labels[v], a.labels[w]);
                    lv == lw && inst.perm(e)[lv] == lw
                })
                .count();
            let expected = 1.0 - agree as f64 / m as f64;
            assert_abs_diff_eq!(sdp_objective(&inst, &spread).unwrap().epsilon, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn integral_solutions_are_exactly_feasible() {
        let (inst, plant) = planted(2, 0.2);
        for s in [integral_solution(&inst, &plant).unwrap(), integral_solution_spread(16, 3, &plant).unwrap()] {
            let r = verify_feasibility(&s, 1e-12, &TripleCheck::default());
            assert!(r.pass, "{r:?}");
            assert!(r.triangle_exhaustive);
            assert_eq!(r.max_violation(), 0.0);
        }
    }

    #[test]
    fn identity_mixture_keeps_gram() {
        let (inst, plant) = planted(3, 0.1);
        let s = integral_solution_spread(16, 3, &plant).unwrap();
        let m = mix_solutions(&[(&s, 1.0)]).unwrap();
        assert_eq!(m.gram(), s.gram());
        assert_eq!(sdp_objective(&inst, &m).unwrap().epsilon, sdp_objective(&inst, &s).unwrap().epsilon);
    }

    #[test]
    fn half_half_mixture_averages_objective() {
        let (inst, _) = planted(4, 0.1);
        let a = integral_solution(&inst, &random_assignment(16, 3, 1)).unwrap();
        let b = integral_solution(&inst, &random_assignment(16, 3, 2)).unwrap();
        let m = mix_solutions(&[(&a, 0.5), (&b, 0.5)]).unwrap();
        let ea = sdp_objective(&inst, &a).unwrap().epsilon;
        let eb = sdp_objective(&inst, &b).unwrap().epsilon;
        assert_abs_diff_eq!(sdp_objective(&inst, &m).unwrap().epsilon, 0.5 * (ea + eb), epsilon = 1e-12);
    }

    #[test]
    fn plant_random_mixture_is_feasible_and_linear() {
        let (inst, plant) = planted(5, 0.0);
        let random = random_assignment(16, 3, 77);
        let p = integral_solution(&inst, &plant).unwrap();
        let r = integral_solution(&inst, &random).unwrap();
        let m = mix_solutions(&[(&p, 0.9), (&r, 0.1)]).unwrap();
        let edges = inst.graph().edges();
        let rep = verify_feasibility(&m, 1e-12, &TripleCheck { edges: Some(edges), ..Default::default() });
        assert!(rep.pass, "{rep:?}");
        let expected = 0.1 * (1.0 - evaluate(&inst, &random).unwrap());
        assert_abs_diff_eq!(sdp_objective(&inst, &m).unwrap().epsilon, expected, epsilon = 1e-12);
    }

    #[test]
    fn orthogonality_violation_is_reported() {
        let (inst, plant) = planted(6, 0.0);
        let mut s = integral_solution_spread(16, 3, &plant).unwrap();
        let l = plant.labels[0];
        let other = (l + 1) % 3;
        let copy = s.vector(0, l).to_vec();
        s.vector_mut(0, other).copy_from_slice(&copy);
        let rep = verify_feasibility(&s, 1e-12, &TripleCheck::default());
        assert_eq!(rep.orthogonality, s.norm2(0, l));
        assert!(!rep.pass);
        let _ = inst;
    }

    #[test]
    fn bad_weights_rejected() {
        let (inst, plant) = planted(7, 0.0);
        let s = integral_solution(&inst, &plant).unwrap();
        assert!(mix_solutions(&[(&s, 0.5), (&s, 0.4)]).is_err());
        assert!(mix_solutions(&[(&s, 1.5), (&s, -0.5)]).is_err());
    }

    #[test]
    fn sampled_triangles_above_threshold() {
        let g = gen_random_regular(30, 4, 1).unwrap();
        let (inst, plant) = gen_planted(&g, 3, 0.1, 1).unwrap();
        let p = integral_solution(&inst, &plant).unwrap();
        let r = integral_solution_spread(30, 3, &random_assignment(30, 3, 5)).unwrap();
        let m = mix_solutions(&[(&p, 0.7), (&r, 0.3)]).unwrap();
        let rep = verify_feasibility(&m, 1e-12, &TripleCheck { budget: 5000, seed: 3, edges: Some(g.edges()) });
        assert!(!rep.triangle_exhaustive);
        assert_eq!(rep.triples_checked, 5000 + 60 * 216);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (inst, plant) = planted(8, 0.0);
        let p = integral_solution(&inst, &plant).unwrap();
        let r = integral_solution_spread(16, 3, &random_assignment(16, 3, 5)).unwrap();
        let m = mix_solutions(&[(&p, 0.3), (&r, 0.7)]).unwrap();
        assert_eq!(SdpSolution::from_json(&m.to_json()).unwrap(), m);
        assert!(SdpSolution::from_json(r#"{"dim":1,"k":2,"n":1,"vectors":[[[1.0]]]}"#).is_err());
    }
}
