//! Exhaustive references: the exact Unique Games optimum on tiny instances
//! and the earthmover distance by enumerating permutations.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{Assignment, UgInstance};
use crate::sdp::SdpSolution;

pub const DEFAULT_BRUTE_BUDGET: u64 = 10_000_000;
pub const DEFAULT_EMD_K_MAX: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best: Assignment,
    pub value: f64,
    pub enumerated: u64,
}

/// Maximum satisfied fraction over all `k^n` assignments, enumerated as an
/// odometer with the last vertex fastest. The first maximum found (the
/// lexicographically smallest) wins ties.
pub fn brute_force_opt(inst: &UgInstance, budget: u64) -> Result<OracleResult> {
    let (n, k) = (inst.n(), inst.k());
    let total = (k as u64).checked_pow(n as u32).filter(|&t| t <= budget).ok_or_else(|| {
        Error::Size(format!("k^n = {k}^{n} exceeds the enumeration budget {budget}"))
    })?;
    let m = inst.graph().num_edges();
    let mut labels = vec![0usize; n];
    let mut best_labels = labels.clone();
    let mut best = inst.satisfied_count(&labels);
    for _ in 1..total {
        let mut pos = n;
        while pos > 0 {
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
        }
        let sat = inst.satisfied_count(&labels);
        if sat > best {
            best = sat;
            best_labels.copy_from_slice(&labels);
            if best == m {
                // Nothing can beat a perfect assignment, and later ones lose ties.
                break;
            }
        }
    }
    let value = if m == 0 { 1.0 } else { best as f64 / m as f64 };
    Ok(OracleResult { best: Assignment::new(best_labels), value, enumerated: total })
}

/// `min over all k! permutations sigma of sum_i |u_i - v_sigma(i)|^2`.
pub fn emd_brute(s: &SdpSolution, u: usize, v: usize, k_max: usize) -> Result<f64> {
    let k = s.k();
    if k > k_max {
        return Err(Error::Size(format!("k = {k} exceeds brute-force EMD limit {k_max}")));
    }
    Ok((0..k)
        .permutations(k)
        .map(|sigma| sigma.iter().enumerate().map(|(i, &j)| s.dist2((u, i), (v, j))).sum::<f64>())
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{gen_random_regular, Graph};
    use crate::instances::{evaluate, gen_planted};
    use crate::sdp::{integral_solution, sdp_objective};

    #[test]
    fn noiseless_instances_are_fully_satisfiable() {
        for seed in 0..5 {
            let g = gen_random_regular(8, 3, seed).unwrap();
            let (inst, _) = gen_planted(&g, 3, 0.0, seed).unwrap();
            let r = brute_force_opt(&inst, DEFAULT_BRUTE_BUDGET).unwrap();
            assert_eq!(r.value, 1.0);
            assert_eq!(r.enumerated, 3u64.pow(8));
            assert_eq!(evaluate(&inst, &r.best).unwrap(), r.value);
        }
    }

    #[test]
    fn unary_alphabet() {
        let g = gen_random_regular(6, 3, 0).unwrap();
        let (inst, _) = gen_planted(&g, 1, 0.0, 0).unwrap();
        assert_eq!(brute_force_opt(&inst, 10).unwrap().value, 1.0);
    }

    #[test]
    fn k4_with_one_frustrated_cycle() {
        // k = 2 on K4: identity everywhere except one swap. Every triangle
        // through the swapped edge is frustrated, so 5 of 6 is the best.
        let g = Graph::from_edges(4, 3, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        let mut perms = vec![vec![0, 1]; 6];
        perms[0] = vec![1, 0];
        let inst = UgInstance::new(g, 2, perms).unwrap();
        let r = brute_force_opt(&inst, 100).unwrap();
        assert_eq!(r.value, 5.0 / 6.0);
        assert_eq!(r.enumerated, 16);
        assert_eq!(r.best.labels, vec![0, 0, 0, 0]);
        let s = integral_solution(&inst, &r.best).unwrap();
        assert!((sdp_objective(&inst, &s).unwrap().epsilon - (1.0 - r.value)).abs() < 1e-15);
    }

    #[test]
    fn budget_enforced() {
        let g = gen_random_regular(20, 3, 0).unwrap();
        let (inst, _) = gen_planted(&g, 3, 0.0, 0).unwrap();
        assert!(matches!(brute_force_opt(&inst, DEFAULT_BRUTE_BUDGET), Err(Error::Size(_))));
    }

    #[test]
    fn emd_brute_limits_and_trivia() {
        let s = SdpSolution::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(emd_brute(&s, 0, 1, 6).unwrap(), 2.0);
        assert_eq!(emd_brute(&s, 0, 0, 6).unwrap(), 0.0);
        let big = SdpSolution::new(1, 7, 1, vec![0.0; 7]).unwrap();
        assert!(emd_brute(&big, 0, 0, 6).is_err());
    }
}
