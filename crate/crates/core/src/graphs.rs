//! Regular graphs, their Laplacian spectral gap and exact edge expansion.
//!
//! The Laplacian used throughout is the degree-normalized one,
//! `L = I - A/d`, so its spectrum lies in `[0, 2]` and the Cheeger
//! inequality reads `h^2/8 <= lambda2 <= h` with
//! `h = min_X (|cut(X)|/|E|) / (min(|X|, |V \ X|)/|V|)`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute accuracy for [`laplacian_lambda2`].
pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;
/// Largest vertex count for which exact expansion is computed by default.
pub const DEFAULT_EXPANSION_MAX_N: usize = 24;
/// Graphs up to this size fall back to a dense eigendecomposition.
pub const DENSE_FALLBACK_MAX_N: usize = 512;

/// A simple `d`-regular graph with edges stored once as `(u, v)`, `u < v`,
/// in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    d: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    d: usize,
    edges: Vec<[usize; 2]>,
}

impl Graph {
    /// Builds a graph from an edge list, normalizing each pair to `u < v`
    /// and sorting. Rejects self-loops, duplicate edges, out-of-range
    /// endpoints and any vertex whose degree is not `d`.
    pub fn from_edges(n: usize, d: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at vertex {a}")));
            }
            list.push((a.min(b), a.max(b)));
        }
        list.sort_unstable();
        if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate edge ({}, {})", w[0].0, w[0].1)));
        }
        let mut adj = vec![Vec::with_capacity(d); n];
        for &(u, v) in &list {
            adj[u].push(v);
            adj[v].push(u);
        }
        if let Some(v) = adj.iter().position(|a| a.len() != d) {
            return Err(Error::InvalidInput(format!(
                "vertex {v} has degree {}, expected {d}",
                adj[v].len()
            )));
        }
        if n * d != 2 * list.len() {
            return Err(Error::Parity { n, d });
        }
        Ok(Graph { n, d, edges: list, adj })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = (u.min(v), u.max(v));
        self.edges.binary_search(&key).is_ok()
    }

    /// Index of edge `{u, v}` in [`Graph::edges`].
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.edges.binary_search(&(u.min(v), u.max(v))).ok()
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            stack.push(s);
            while let Some(x) = stack.pop() {
                for &y in &self.adj[x] {
                    if !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        count
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            n: self.n,
            d: self.d,
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
        };
        serde_json::to_string(&file).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        Graph::from_edges(file.n, file.d, file.edges.into_iter().map(|[u, v]| (u, v)))
    }
}

/// Samples a simple `d`-regular graph on `n` vertices from the pairing model.
///
/// Stubs are paired one at a time; a pair that would create a self-loop or a
/// repeated edge is redrawn. When no admissible pair is left among the
/// remaining stubs the whole pairing restarts, at most `10*n*d` times.
pub fn gen_random_regular(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if (n * d) % 2 == 1 {
        return Err(Error::Parity { n, d });
    }
    if n < d + 1 {
        return Err(Error::InvalidInput(format!("need n >= d + 1, got n = {n}, d = {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_restarts = (10 * n * d).max(1);
    for _ in 0..max_restarts {
        if let Some(edges) = try_pairing(n, d, &mut rng) {
            return Graph::from_edges(n, d, edges);
        }
    }
    Err(Error::Generation { restarts: max_restarts })
}

fn try_pairing(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(usize, usize)>> {
    const REDRAWS: usize = 64;
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    let mut present: HashSet<(usize, usize)> = HashSet::with_capacity(n * d / 2);
    let mut edges = Vec::with_capacity(n * d / 2);
    let ok = |a: usize, b: usize, present: &HashSet<(usize, usize)>| a != b && !present.contains(&(a.min(b), a.max(b)));

    while !stubs.is_empty() {
        let len = stubs.len();
        let mut chosen = None;
        for _ in 0..REDRAWS {
            let i = rng.random_range(0..len);
            let j = rng.random_range(0..len);
            if i != j && ok(stubs[i], stubs[j], &present) {
                chosen = Some((i, j));
                break;
            }
        }
        if chosen.is_none() {
            let admissible: Vec<(usize, usize)> = (0..len)
                .flat_map(|i| ((i + 1)..len).map(move |j| (i, j)))
                .filter(|&(i, j)| ok(stubs[i], stubs[j], &present))
                .collect();
            if admissible.is_empty() {
                return None;
            }
            chosen = Some(admissible[rng.random_range(0..admissible.len())]);
        }
        let (i, j) = chosen.expect("pair chosen above");
        let (a, b) = (stubs[i], stubs[j]);
        present.insert((a.min(b), a.max(b)));
        edges.push((a, b));
        let (hi, lo) = (i.max(j), i.min(j));
        stubs.swap_remove(hi);
        stubs.swap_remove(lo);
    }
    Some(edges)
}

/// Dense `L = I - A/d`.
pub fn laplacian_dense(g: &Graph) -> DMatrix<f64> {
    let n = g.n;
    let mut l = DMatrix::<f64>::identity(n, n);
    if g.d == 0 {
        return l;
    }
    let w = 1.0 / g.d as f64;
    for &(u, v) in &g.edges {
        l[(u, v)] -= w;
        l[(v, u)] -= w;
    }
    l
}

/// Full Laplacian spectrum in ascending order, by dense symmetric eigendecomposition.
pub fn laplacian_spectrum_dense(g: &Graph) -> Vec<f64> {
    let eig = laplacian_dense(g).symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

fn apply_laplacian(g: &Graph, x: &[f64], out: &mut [f64]) {
    let w = 1.0 / g.d as f64;
    for v in 0..g.n {
        let s: f64 = g.adj[v].iter().map(|&u| x[u]).sum();
        out[v] = x[v] - w * s;
    }
}

/// Second-smallest eigenvalue of `L = I - A/d`.
///
/// Runs Lanczos with full reorthogonalization on the complement of the
/// all-ones vector (the known bottom eigenvector), stopping once the Ritz
/// residual of the smallest Ritz value drops below `tol`. Graphs with at
/// most 512 vertices fall back to a dense eigendecomposition if Lanczos
/// fails to converge; larger graphs report [`Error::NoConvergence`].
pub fn laplacian_lambda2(g: &Graph, tol: f64) -> Result<f64> {
    if g.n < 2 {
        return Err(Error::InvalidInput("lambda2 needs at least 2 vertices".into()));
    }
    if g.d == 0 {
        return Err(Error::InvalidInput("lambda2 needs degree >= 1".into()));
    }
    match lanczos_lambda2(g, tol) {
        Ok(v) => Ok(v),
        Err(Error::NoConvergence { .. }) if g.n <= DENSE_FALLBACK_MAX_N => Ok(laplacian_spectrum_dense(g)[1]),
        Err(e) => Err(e),
    }
}

/// The Lanczos solver behind [`laplacian_lambda2`], without the dense
/// fallback.
pub fn lanczos_lambda2(g: &Graph, tol: f64) -> Result<f64> {
    if g.n < 2 || g.d == 0 {
        return Err(Error::InvalidInput("lambda2 needs at least 2 vertices and degree >= 1".into()));
    }
    let n = g.n;
    let max_steps = (n - 1).min(1000);
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();

    let deflate = |x: &mut [f64]| {
        let mean = x.iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|v| *v -= mean);
    };
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a2c);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    deflate(&mut q);
    let nq = norm(&q);
    q.iter_mut().for_each(|v| *v /= nq);

    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut next_check = 16usize;
    let mut best = (f64::NAN, f64::INFINITY);

    for m in 1..=max_steps {
        let qm = &basis[m - 1];
        apply_laplacian(g, qm, &mut w);
        let a = dot(&w, qm);
        alpha.push(a);
        // Full reorthogonalization, twice, plus the deflated ones direction.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let c = w.iter().sum::<f64>() * inv_sqrt_n;
            w.iter_mut().for_each(|x| *x -= c * inv_sqrt_n);
        }
        let b = norm(&w);
        let exhausted = b <= 1e-13 || m == max_steps;

        if m >= next_check || exhausted {
            let (theta, resid) = smallest_ritz(&alpha, &beta, b);
            best = (theta, resid);
            if resid <= tol || (exhausted && m == n - 1) || b <= 1e-13 {
                return Ok(theta);
            }
            next_check = m + (m / 2).max(8);
        }
        if exhausted {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    Err(Error::NoConvergence { estimate: best.0, residual: best.1 })
}

/// Smallest eigenvalue of the Lanczos tridiagonal and its residual bound
/// `|beta_m * s_m|`.
fn smallest_ritz(alpha: &[f64], beta: &[f64], beta_next: f64) -> (f64, f64) {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t.symmetric_eigen();
    let (idx, theta) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty tridiagonal");
    let s: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
    (theta, (beta_next * s[m - 1]).abs())
}

/// Exact edge expansion by enumerating every vertex set containing vertex 0
/// (complements give the same ratio). Rejects graphs larger than `max_n`;
/// for those only the Cheeger interval `[lambda2, sqrt(8*lambda2)]` is
/// available.
pub fn edge_expansion_exact(g: &Graph, max_n: usize) -> Result<f64> {
    let n = g.n;
    if n > max_n || n > 31 {
        return Err(Error::Size(format!(
            "exact expansion limited to n <= {}; n = {n}. Use the Cheeger interval [lambda2, sqrt(8*lambda2)] instead",
            max_n.min(31)
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput("edge expansion needs at least 2 vertices".into()));
    }
    let m = g.num_edges();
    if m == 0 {
        return Ok(0.0);
    }
    let adj: Vec<u32> = (0..n).map(|v| g.adj[v].iter().fold(0u32, |acc, &u| acc | (1 << u))).collect();
    let d = g.d as i64;
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };

    // Free vertices 1..n. The top `prefix_bits` of them are fixed per task;
    // the rest are walked in Gray-code order with an incremental cut count.
    let free = n - 1;
    let prefix_bits = free.min(6);
    let low_bits = free - prefix_bits;

    let best = (0u32..(1u32 << prefix_bits))
        .into_par_iter()
        .map(|prefix| {
            let mut set: u32 = 1 | (prefix << (1 + low_bits));
            let mut cut: i64 = (0..n)
                .filter(|&v| set & (1 << v) != 0)
                .map(|v| (adj[v] & !set).count_ones() as i64)
                .sum();
            let mut best: Option<(i64, i64)> = None;
            let consider = |set: u32, cut: i64, best: &mut Option<(i64, i64)>| {
                if set == full {
                    return;
                }
                let size = set.count_ones() as i64;
                let small = size.min(n as i64 - size);
                match best {
                    Some((bc, bs)) if cut * *bs >= *bc * small => {}
                    _ => *best = Some((cut, small)),
                }
            };
            consider(set, cut, &mut best);
            for j in 1u64..(1u64 << low_bits) {
                let bit = 1 + j.trailing_zeros() as usize;
                let mask = 1u32 << bit;
                let inside = (adj[bit] & set & !mask).count_ones() as i64;
                if set & mask == 0 {
                    cut += d - 2 * inside;
                    set |= mask;
                } else {
                    cut -= d - 2 * inside;
                    set &= !mask;
                }
                consider(set, cut, &mut best);
            }
            best
        })
        .flatten()
        .reduce_with(|a, b| if a.0 * b.1 <= b.0 * a.1 { a } else { b });

    let (cut, small) = best.expect("at least one proper subset exists");
    Ok((cut as f64 * n as f64) / (m as f64 * small as f64))
}

/// Spectral gap, edge expansion and the Cheeger audit for one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub lambda2: f64,
    /// Exact expansion when the graph is small enough, else absent.
    pub h: Option<f64>,
    pub h_is_exact: bool,
    /// Certified interval containing `h`.
    pub h_lower: f64,
    pub h_upper: f64,
    pub cheeger_lower: Option<f64>,
    pub cheeger_upper: Option<f64>,
    /// `h^2/8 <= lambda2 <= h` within `1e-9`; absent without exact `h`.
    pub cheeger_holds: Option<bool>,
}

impl SpectralReport {
    /// Exact `h` when known, else the Cheeger lower bound `lambda2`.
    pub fn h_certified_lower(&self) -> f64 {
        self.h.unwrap_or(self.h_lower)
    }
}

pub fn spectral_report(g: &Graph) -> Result<SpectralReport> {
    let lambda2 = laplacian_lambda2(g, DEFAULT_EIGEN_TOL)?;
    if g.n <= DEFAULT_EXPANSION_MAX_N {
        let h = edge_expansion_exact(g, DEFAULT_EXPANSION_MAX_N)?;
        let lower = h * h / 8.0;
        Ok(SpectralReport {
            lambda2,
            h: Some(h),
            h_is_exact: true,
            h_lower: h,
            h_upper: h,
            cheeger_lower: Some(lower),
            cheeger_upper: Some(h),
            cheeger_holds: Some(lower <= lambda2 + 1e-9 && lambda2 <= h + 1e-9),
        })
    } else {
        let lam = lambda2.max(0.0);
        Ok(SpectralReport {
            lambda2,
            h: None,
            h_is_exact: false,
            h_lower: lam,
            h_upper: (8.0 * lam).sqrt(),
            cheeger_lower: None,
            cheeger_upper: None,
            cheeger_holds: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k4() -> Graph {
        Graph::from_edges(4, 3, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap()
    }

    fn cycle(n: usize) -> Graph {
        Graph::from_edges(n, 2, (0..n).map(|i| (i, (i + 1) % n))).unwrap()
    }

    fn two_triangles() -> Graph {
        Graph::from_edges(6, 2, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap()
    }

    #[test]
    fn k4_is_the_only_cubic_graph_on_four_vertices() {
        for seed in 0..5 {
            assert_eq!(gen_random_regular(4, 3, seed).unwrap(), k4());
        }
    }

    #[test]
    fn odd_degree_sum_rejected() {
        assert!(matches!(gen_random_regular(5, 3, 1), Err(Error::Parity { .. })));
    }

    #[test]
    fn generated_graph_is_regular() {
        let g = gen_random_regular(100, 4, 7).unwrap();
        assert_eq!(g.num_edges(), 200);
        assert!((0..100).all(|v| g.neighbors(v).len() == 4));
        assert_eq!(g, gen_random_regular(100, 4, 7).unwrap());
    }

    #[test]
    fn dense_graphs_generate() {
        let g = gen_random_regular(200, 8, 3).unwrap();
        assert_eq!(g.num_edges(), 800);
        let g = gen_random_regular(9, 8, 3).unwrap();
        assert_eq!(g.num_edges(), 36);
    }

    #[test]
    fn lambda2_closed_forms() {
        // I - A/(n-1) on K4: eigenvalues 0 and 1 + 1/3.
        assert_abs_diff_eq!(laplacian_lambda2(&k4(), 1e-12).unwrap(), 4.0 / 3.0, epsilon = 1e-10);
        // C4: 1 - cos(2*pi*j/4) -> second smallest is 1.
        assert_abs_diff_eq!(laplacian_lambda2(&cycle(4), 1e-12).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(laplacian_lambda2(&two_triangles(), 1e-12).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn lambda2_long_cycle_matches_closed_form() {
        let n = 300;
        let expected = 1.0 - (2.0 * std::f64::consts::PI / n as f64).cos();
        assert_abs_diff_eq!(laplacian_lambda2(&cycle(n), 1e-10).unwrap(), expected, epsilon = 1e-10);
    }

    /// Direct enumeration over every nonempty proper subset.
    fn expansion_by_definition(g: &Graph) -> f64 {
        let n = g.n();
        let m = g.num_edges() as f64;
        let mut best = f64::INFINITY;
        for mask in 1u32..((1 << n) - 1) {
            let cut = g.edges().iter().filter(|&&(u, v)| ((mask >> u) & 1) != ((mask >> v) & 1)).count() as f64;
            let size = mask.count_ones() as usize;
            let small = size.min(n - size) as f64;
            best = best.min((cut / m) / (small / n as f64));
        }
        best
    }

    #[test]
    fn expansion_small_graphs() {
        assert_abs_diff_eq!(edge_expansion_exact(&cycle(4), 24).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(edge_expansion_exact(&k4(), 24).unwrap(), 4.0 / 3.0, epsilon = 1e-15);
        assert_eq!(edge_expansion_exact(&two_triangles(), 24).unwrap(), 0.0);
        for seed in 0..6 {
            let g = gen_random_regular(12, 3, seed).unwrap();
            assert_abs_diff_eq!(edge_expansion_exact(&g, 24).unwrap(), expansion_by_definition(&g), epsilon = 1e-12);
        }
    }

    #[test]
    fn expansion_size_gate() {
        let g = gen_random_regular(30, 3, 1).unwrap();
        assert!(matches!(edge_expansion_exact(&g, 24), Err(Error::Size(_))));
    }

    #[test]
    fn spectral_report_k4_and_c4() {
        let r = spectral_report(&k4()).unwrap();
        assert_abs_diff_eq!(r.lambda2, 4.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.h.unwrap(), 4.0 / 3.0, epsilon = 1e-12);
        assert_eq!(r.cheeger_holds, Some(true));
        let r = spectral_report(&cycle(4)).unwrap();
        assert_abs_diff_eq!(r.lambda2, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.h.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_report_large_graph_uses_interval() {
        let g = gen_random_regular(60, 4, 2).unwrap();
        let r = spectral_report(&g).unwrap();
        assert!(r.h.is_none());
        assert_eq!(r.h_lower, r.lambda2);
        assert_abs_diff_eq!(r.h_upper, (8.0 * r.lambda2).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn graph_json_rejects_duplicates() {
        let text = r#"{"n":4,"d":3,"edges":[[0,1],[0,1],[0,2],[0,3],[1,2],[1,3],[2,3]]}"#;
        assert!(Graph::from_json(text).is_err());
        let g = k4();
        assert_eq!(Graph::from_json(&g.to_json()).unwrap(), g);
        assert_eq!(g.to_json(), r#"{"n":4,"d":3,"edges":[[0,1],[0,2],[0,3],[1,2],[1,3],[2,3]]}"#);
    }
}
