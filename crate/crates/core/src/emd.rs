//! Earthmover distance between the label-vector sets of two vertices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdp::SdpSolution;

/// Largest `n` for which [`EmdMode::Exact`] is accepted.
pub const EXACT_MAX_N: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmdReport {
    pub value: f64,
    /// `matching[i] = j` pairs `u_i` with `v_j`.
    pub matching: Vec<usize>,
}

/// Minimum-cost perfect matching on a square cost matrix (row-major),
/// by shortest augmenting paths with potentials. Returns `row -> column`.
pub fn hungarian(costs: &[f64], k: usize) -> Vec<usize> {
    debug_assert_eq!(costs.len(), k * k);
    if k == 0 {
        return Vec::new();
    }
    // 1-based; index 0 is the virtual source row/column.
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];

    for row in 1..=k {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = costs[(i0 - 1) * k + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; k];
    for j in 1..=k {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// `c[i][j] = |u_i - v_j|^2`, row-major.
pub fn cost_matrix(s: &SdpSolution, u: usize, v: usize) -> Vec<f64> {
    let k = s.k();
    let mut c = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            c.push(s.dist2((u, i), (v, j)));
        }
    }
    c
}

/// `min over permutations sigma of sum_i |u_i - v_sigma(i)|^2`.
pub fn emd_pair(s: &SdpSolution, u: usize, v: usize) -> EmdReport {
    let k = s.k();
    if u == v {
        return EmdReport { value: 0.0, matching: (0..k).collect() };
    }
    let c = cost_matrix(s, u, v);
    let matching = hungarian(&c, k);
    let value = matching.iter().enumerate().map(|(i, &j)| c[i * k + j]).sum();
    EmdReport { value, matching }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmdMode {
    Exact,
    Sampled,
}

/// Mean EMD over ordered vertex pairs `(u, v)` drawn independently and
/// uniformly, so `u = v` is included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgEmd {
    pub mean: f64,
    pub stderr: f64,
    pub pairs: usize,
    pub exhaustive: bool,
}

/// Exact mode averages over all `n^2` ordered pairs. Sampled mode draws
/// `pair_budget` uniform pairs; a budget of at least `n^2` enumerates all
/// pairs instead, so it agrees with exact mode.
pub fn avg_emd(s: &SdpSolution, mode: EmdMode, pair_budget: usize, seed: u64) -> Result<AvgEmd> {
    let n = s.n();
    if n == 0 {
        return Err(Error::InvalidInput("no vertices".into()));
    }
    let all = n * n;
    match mode {
        EmdMode::Exact if n > EXACT_MAX_N => Err(Error::Size(format!(
            "exact average EMD limited to n <= {EXACT_MAX_N}; use sampled mode"
        ))),
        EmdMode::Sampled if pair_budget < all => {
            if pair_budget == 0 {
                return Err(Error::InvalidInput("pair budget must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<(usize, usize)> =
                (0..pair_budget).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
            let values: Vec<f64> = pairs.par_iter().map(|&(u, v)| emd_pair(s, u, v).value).collect();
            let (mean, stderr) = mean_stderr(&values);
            Ok(AvgEmd { mean, stderr, pairs: pair_budget, exhaustive: false })
        }
        _ => {
            let values: Vec<f64> = (0..all).into_par_iter().map(|p| emd_pair(s, p / n, p % n).value).collect();
            let (mean, _) = mean_stderr(&values);
            Ok(AvgEmd { mean, stderr: 0.0, pairs: all, exhaustive: true })
        }
    }
}

pub(crate) fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Per-pair rows for the `u,v,emd` report.
pub fn emd_rows(s: &SdpSolution) -> Vec<(usize, usize, f64)> {
    let n = s.n();
    (0..n * n)
        .into_par_iter()
        .map(|p| (p / n, p % n, emd_pair(s, p / n, p % n).value))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::gen_random_regular;
    use crate::instances::{gen_planted, random_assignment};
    use crate::oracle::emd_brute;
    use crate::sdp::{integral_solution, integral_solution_spread, mix_solutions};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_vertex(u: [[f64; 4]; 2], v: [[f64; 4]; 2]) -> SdpSolution {
        let data = u.iter().chain(v.iter()).flatten().copied().collect();
        SdpSolution::new(2, 2, 4, data).unwrap()
    }

    #[test]
    fn swapped_basis_has_zero_distance() {
        let e = |i: usize| {
            let mut x = [0.0; 4];
            x[i] = 1.0;
            x
        };
        let s = two_vertex([e(0), e(1)], [e(1), e(0)]);
        let r = emd_pair(&s, 0, 1);
        assert_eq!(r.value, 0.0);
        assert_eq!(r.matching, vec![1, 0]);

        let s = two_vertex([e(0), e(1)], [e(2), e(3)]);
        assert_eq!(emd_pair(&s, 0, 1).value, 4.0);
        assert_eq!(emd_brute(&s, 0, 1, 6).unwrap(), 4.0);
    }

    #[test]
    fn self_distance_is_zero() {
        let g = gen_random_regular(10, 3, 1).unwrap();
        let (inst, plant) = gen_planted(&g, 3, 0.0, 1).unwrap();
        let s = integral_solution(&inst, &plant).unwrap();
        let r = emd_pair(&s, 4, 4);
        assert_eq!(r.value, 0.0);
        assert_eq!(r.matching, vec![0, 1, 2]);
    }

    #[test]
    fn spread_plant_average_follows_label_histogram() {
        // Label-indexed embedding: equal labels give 0, different labels 2.
        let n = 40;
        let k = 4;
        let a = random_assignment(n, k, 3);
        let s = integral_solution_spread(n, k, &a).unwrap();
        let mut hist = vec![0usize; k];
        a.labels.iter().for_each(|&l| hist[l] += 1);
        let same: usize = hist.iter().map(|c| c * c).sum();
        let expected = 2.0 * (n * n - same) as f64 / (n * n) as f64;
        let exact = avg_emd(&s, EmdMode::Exact, 0, 0).unwrap();
        assert_abs_diff_eq!(exact.mean, expected, epsilon = 1e-12);
        let enumerated: f64 = emd_rows(&s).iter().map(|r| r.2).sum::<f64>() / (n * n) as f64;
        assert_abs_diff_eq!(enumerated, expected, epsilon = 1e-12);
    }

    #[test]
    fn full_budget_sampling_equals_exact() {
        let g = gen_random_regular(12, 3, 2).unwrap();
        let (inst, plant) = gen_planted(&g, 3, 0.0, 2).unwrap();
        let p = integral_solution(&inst, &plant).unwrap();
        let r = integral_solution(&inst, &random_assignment(12, 3, 5)).unwrap();
        let s = mix_solutions(&[(&p, 0.9), (&r, 0.1)]).unwrap();
        let exact = avg_emd(&s, EmdMode::Exact, 0, 0).unwrap();
        let sampled = avg_emd(&s, EmdMode::Sampled, 144, 9).unwrap();
        assert_eq!(exact.mean, sampled.mean);
        let partial = avg_emd(&s, EmdMode::Sampled, 2000, 9).unwrap();
        assert!((partial.mean - exact.mean).abs() <= 4.0 * partial.stderr + 1e-12);
    }

    #[test]
    fn exact_mode_size_gate() {
        let s = SdpSolution::new(301, 1, 1, vec![1.0; 301]).unwrap();
        assert!(matches!(avg_emd(&s, EmdMode::Exact, 0, 0), Err(Error::Size(_))));
    }

    fn random_mixture(seed: u64, k: usize) -> SdpSolution {
        let g = gen_random_regular(10, 3, seed).unwrap();
        let (inst, plant) = gen_planted(&g, k, if k == 1 { 0.0 } else { 0.2 }, seed).unwrap();
        let p = integral_solution(&inst, &plant).unwrap();
        let r = integral_solution_spread(10, k, &random_assignment(10, k, seed + 1)).unwrap();
        let q = integral_solution(&inst, &random_assignment(10, k, seed + 2)).unwrap();
        mix_solutions(&[(&p, 0.5), (&r, 0.3), (&q, 0.2)]).unwrap()
    }

    proptest! {
        #[test]
        fn symmetric_and_capped(seed in 0u64..500, k in 1usize..6, u in 0usize..10, v in 0usize..10) {
            let s = random_mixture(seed, k);
            let a = emd_pair(&s, u, v).value;
            let b = emd_pair(&s, v, u).value;
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((0.0..=2.0 + 1e-12).contains(&a));
        }

        #[test]
        fn matches_permutation_enumeration(seed in 0u64..500, k in 1usize..7, u in 0usize..10, v in 0usize..10) {
            let s = random_mixture(seed, k);
            let r = emd_pair(&s, u, v);
            let c = cost_matrix(&s, u, v);
            let cost: f64 = r.matching.iter().enumerate().map(|(i, &j)| c[i * k + j]).sum();
            prop_assert_eq!(cost, r.value);
            prop_assert!((r.value - emd_brute(&s, u, v, 6).unwrap()).abs() <= 1e-12);
        }
    }
}
