//! Unique Games instances over a regular graph, planted generation and
//! assignment evaluation.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::Graph;

/// A Unique Games instance. Each stored edge `(u, v)`, `u < v`, carries
/// `pi_uv` as an array `p` with `p[i] = pi_uv(i)`; the reverse direction
/// uses the inverse permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UgInstance {
    graph: Graph,
    k: usize,
    perms: Vec<Vec<usize>>,
    inverse: Vec<Vec<usize>>,
}

/// One label per vertex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
}

impl Assignment {
    pub fn new(labels: Vec<usize>) -> Self {
        Assignment { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        if self.labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "assignment has {} labels, instance has {n} vertices",
                self.labels.len()
            )));
        }
        if let Some((v, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::InvalidInput(format!("label {l} at vertex {v} outside [0, {k})")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("assignment serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn is_permutation(p: &[usize], k: usize) -> bool {
    if p.len() != k {
        return false;
    }
    let mut seen = vec![false; k];
    p.iter().all(|&x| x < k && !std::mem::replace(&mut seen[x], true))
}

fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &x) in p.iter().enumerate() {
        inv[x] = i;
    }
    inv
}

impl UgInstance {
    /// `perms[e]` is `pi_uv` for `graph.edges()[e] = (u, v)`.
    pub fn new(graph: Graph, k: usize, perms: Vec<Vec<usize>>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("alphabet size must be at least 1".into()));
        }
        if perms.len() != graph.num_edges() {
            return Err(Error::InvalidInput(format!(
                "{} permutations for {} edges",
                perms.len(),
                graph.num_edges()
            )));
        }
        if let Some(e) = perms.iter().position(|p| !is_permutation(p, k)) {
            return Err(Error::InvalidInput(format!(
                "edge {:?} carries {:?}, not a permutation of 0..{k}",
                graph.edges()[e],
                perms[e]
            )));
        }
        let inverse = perms.iter().map(|p| invert(p)).collect();
        Ok(UgInstance { graph, k, perms, inverse })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `pi_uv` for stored edge `e = (u, v)`, `u < v`.
    pub fn perm(&self, e: usize) -> &[usize] {
        &self.perms[e]
    }

    /// The permutation carrying labels of `from` to labels of the other
    /// endpoint of edge `e`.
    pub fn perm_from(&self, e: usize, from: usize) -> &[usize] {
        let (u, v) = self.graph.edges()[e];
        debug_assert!(from == u || from == v);
        if from == u {
            &self.perms[e]
        } else {
            &self.inverse[e]
        }
    }

    pub fn edge_satisfied(&self, e: usize, labels: &[usize]) -> bool {
        let (u, v) = self.graph.edges()[e];
        self.perms[e][labels[u]] == labels[v]
    }

    /// Number of satisfied edges, each counted once. Labels must be valid.
    pub fn satisfied_count(&self, labels: &[usize]) -> usize {
        (0..self.perms.len()).filter(|&e| self.edge_satisfied(e, labels)).count()
    }

    /// Applies `rho` to every label: returns the instance with
    /// `pi'_uv = rho . pi_uv . rho^-1`.
    pub fn relabeled(&self, rho: &[usize]) -> Result<Self> {
        if !is_permutation(rho, self.k) {
            return Err(Error::InvalidInput("relabeling is not a permutation".into()));
        }
        let rho_inv = invert(rho);
        let perms = self
            .perms
            .iter()
            .map(|p| (0..self.k).map(|i| rho[p[rho_inv[i]]]).collect())
            .collect();
        UgInstance::new(self.graph.clone(), self.k, perms)
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            n: self.n(),
            d: self.graph.d(),
            k: self.k,
            edges: self
                .graph
                .edges()
                .iter()
                .zip(&self.perms)
                .map(|(&(u, v), p)| EdgeEntry { u, v, perm: p.clone() })
                .collect(),
        };
        serde_json::to_string(&file).expect("instance serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let mut entries = file.edges;
        for e in &entries {
            if e.u >= e.v {
                return Err(Error::InvalidInput(format!("edge ({}, {}) must have u < v", e.u, e.v)));
            }
        }
        entries.sort_by_key(|e| (e.u, e.v));
        let graph = Graph::from_edges(file.n, file.d, entries.iter().map(|e| (e.u, e.v)))?;
        UgInstance::new(graph, file.k, entries.into_iter().map(|e| e.perm).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    u: usize,
    v: usize,
    perm: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    d: usize,
    k: usize,
    edges: Vec<EdgeEntry>,
}

/// Uniform permutation of `0..k` conditioned on `p[from] = to`.
fn random_perm_with(k: usize, from: usize, to: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(rng);
    let j = p.iter().position(|&x| x == to).expect("to < k");
    p.swap(j, from);
    p
}

/// Number of edges [`gen_planted`] corrupts: `floor(noise * |E|)`, with a
/// `1e-9` guard so products like `0.29 * 100` do not round down.
pub fn corrupted_count(noise: f64, num_edges: usize) -> usize {
    ((noise * num_edges as f64) + 1e-9).floor() as usize
}

/// Plants a uniformly random assignment, gives every edge a uniformly random
/// permutation consistent with it, then corrupts exactly
/// [`corrupted_count`] edges so that the plant violates them.
pub fn gen_planted(g: &Graph, k: usize, noise: f64, seed: u64) -> Result<(UgInstance, Assignment)> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidInput(format!("noise {noise} outside [0, 1]")));
    }
    if k == 0 {
        return Err(Error::InvalidInput("alphabet size must be at least 1".into()));
    }
    let m = g.num_edges();
    let bad = corrupted_count(noise, m);
    if bad > 0 && k == 1 {
        return Err(Error::InfeasibleCorruption { count: bad });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plant: Vec<usize> = (0..g.n()).map(|_| rng.random_range(0..k)).collect();
    let mut perms: Vec<Vec<usize>> = g
        .edges()
        .iter()
        .map(|&(u, v)| random_perm_with(k, plant[u], plant[v], &mut rng))
        .collect();
    for e in index::sample(&mut rng, m, bad) {
        let (u, v) = g.edges()[e];
        let mut target = rng.random_range(0..k - 1);
        if target >= plant[v] {
            target += 1;
        }
        perms[e] = random_perm_with(k, plant[u], target, &mut rng);
    }
    Ok((UgInstance::new(g.clone(), k, perms)?, Assignment::new(plant)))
}

/// A uniformly random assignment.
pub fn random_assignment(n: usize, k: usize, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Assignment::new((0..n).map(|_| rng.random_range(0..k)).collect())
}

/// Fraction of satisfied constraints.
pub fn evaluate(inst: &UgInstance, a: &Assignment) -> Result<f64> {
    a.validate(inst.n(), inst.k())?;
    let m = inst.graph().num_edges();
    if m == 0 {
        return Ok(1.0);
    }
    Ok(inst.satisfied_count(&a.labels) as f64 / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::gen_random_regular;
    use proptest::prelude::*;

    #[test]
    fn noiseless_plant_satisfies_everything() {
        let g = gen_random_regular(30, 4, 1).unwrap();
        let (inst, plant) = gen_planted(&g, 3, 0.0, 9).unwrap();
        assert_eq!(evaluate(&inst, &plant).unwrap(), 1.0);
    }

    #[test]
    fn corruption_count_is_exact() {
        let g = gen_random_regular(200, 8, 11).unwrap();
        assert_eq!(g.num_edges(), 800);
        let (inst, plant) = gen_planted(&g, 5, 0.05, 3).unwrap();
        assert_eq!(inst.satisfied_count(&plant.labels), 760);
        assert_eq!(evaluate(&inst, &plant).unwrap(), 1.0 - 40.0 / 800.0);
    }

    #[test]
    fn corrupting_unary_alphabet_fails() {
        let g = gen_random_regular(10, 3, 1).unwrap();
        assert!(matches!(gen_planted(&g, 1, 0.1, 0), Err(Error::InfeasibleCorruption { .. })));
    }

    #[test]
    fn unary_alphabet_always_satisfied() {
        let g = gen_random_regular(10, 3, 1).unwrap();
        let (inst, _) = gen_planted(&g, 1, 0.0, 0).unwrap();
        assert_eq!(evaluate(&inst, &Assignment::new(vec![0; 10])).unwrap(), 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let g = gen_random_regular(20, 3, 1).unwrap();
        assert_eq!(gen_planted(&g, 4, 0.2, 5).unwrap(), gen_planted(&g, 4, 0.2, 5).unwrap());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let g = gen_random_regular(6, 3, 1).unwrap();
        let (inst, _) = gen_planted(&g, 2, 0.0, 0).unwrap();
        assert!(evaluate(&inst, &Assignment::new(vec![0, 1, 2, 0, 0, 0])).is_err());
        assert!(evaluate(&inst, &Assignment::new(vec![0; 5])).is_err());
    }

    #[test]
    fn parse_rejects_bad_inputs() {
        let bad_perm = r#"{"n":4,"d":3,"k":3,"edges":[{"u":0,"v":1,"perm":[0,0,1]},{"u":0,"v":2,"perm":[0,1,2]},{"u":0,"v":3,"perm":[0,1,2]},{"u":1,"v":2,"perm":[0,1,2]},{"u":1,"v":3,"perm":[0,1,2]},{"u":2,"v":3,"perm":[0,1,2]}]}"#;
        assert!(UgInstance::from_json(bad_perm).is_err());
        let dup = r#"{"n":4,"d":3,"k":1,"edges":[{"u":0,"v":1,"perm":[0]},{"u":0,"v":1,"perm":[0]},{"u":0,"v":2,"perm":[0]},{"u":0,"v":3,"perm":[0]},{"u":1,"v":2,"perm":[0]},{"u":1,"v":3,"perm":[0]},{"u":2,"v":3,"perm":[0]}]}"#;
        assert!(UgInstance::from_json(dup).is_err());
        let degree = r#"{"n":4,"d":3,"k":1,"edges":[{"u":0,"v":1,"perm":[0]}]}"#;
        assert!(UgInstance::from_json(degree).is_err());
        assert!(UgInstance::from_json("{not json").is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip(seed in 0u64..1000, k in 1usize..6) {
            let g = gen_random_regular(12, 3, seed).unwrap();
            let noise = if k == 1 { 0.0 } else { 0.3 };
            let (inst, plant) = gen_planted(&g, k, noise, seed).unwrap();
            prop_assert_eq!(UgInstance::from_json(&inst.to_json()).unwrap(), inst);
            prop_assert_eq!(Assignment::from_json(&plant.to_json()).unwrap(), plant);
        }

        #[test]
        fn evaluate_invariant_under_relabeling(seed in 0u64..1000, k in 2usize..7) {
            let g = gen_random_regular(14, 4, seed).unwrap();
            let (inst, _) = gen_planted(&g, k, 0.25, seed).unwrap();
            let a = random_assignment(14, k, seed + 1);
            let mut rho: Vec<usize> = (0..k).collect();
            rho.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 2));
            let moved = inst.relabeled(&rho).unwrap();
            let b = Assignment::new(a.labels.iter().map(|&l| rho[l]).collect());
            prop_assert_eq!(evaluate(&inst, &a).unwrap(), evaluate(&moved, &b).unwrap());
        }
    }
}
