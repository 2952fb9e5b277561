//! Monte-Carlo estimates of the per-trial quantities the analysis bounds,
//! each compared with its bound at three standard errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{InvariantCounts, Rounder};
use crate::emd::{avg_emd, EmdMode, EXACT_MAX_N};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub trials: usize,
    pub fixed_initial: usize,
    pub epsilon: f64,
    pub expansion: f64,
    pub avg_emd: f64,
    /// Average EMD is at most `R/4`; the size-of-`X` monitors assume it.
    pub emd_gate: bool,
    pub rows: Vec<MonitorRow>,
    /// Hard-invariant violations summed over every trial of both phases.
    pub invariants: InvariantCounts,
    /// Empirical `Pr[p in S_v]` with the initial vertex fixed, flat by `v*k + p`.
    pub membership_fixed: Vec<f64>,
    /// Empirical `Pr[p in S_v]` with a uniform initial vertex.
    pub membership_avg: Vec<f64>,
    /// Per-edge empirical `Pr[violated and both endpoints in X]`.
    pub edge_violation: Vec<f64>,
}

impl MonitorReport {
    pub fn row(&self, name: &str) -> Option<&MonitorRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// `name,estimate,stderr,bound,pass` with a header line.
    pub fn to_csv(&self) -> String {
        use crate::fmt::g17;
        let mut out = String::from("name,estimate,stderr,bound,pass\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.name, g17(r.estimate), g17(r.stderr), g17(r.bound), r.pass));
        }
        out
    }
}

#[derive(Clone)]
struct Acc {
    trials: u64,
    membership: Vec<u64>,
    x_sum: u64,
    x_sq: u64,
    over_eighth: u64,
    cut_sum: u64,
    cut_sq: u64,
    large: u64,
    edge_bad: Vec<u64>,
    bad_sum: u64,
    bad_sq: u64,
    bad_large_sum: u64,
    bad_large_sq: u64,
    invariants: InvariantCounts,
}

impl Acc {
    fn new(labels: usize, edges: usize) -> Self {
        Acc {
            trials: 0,
            membership: vec![0; labels],
            x_sum: 0,
            x_sq: 0,
            over_eighth: 0,
            cut_sum: 0,
            cut_sq: 0,
            large: 0,
            edge_bad: vec![0; edges],
            bad_sum: 0,
            bad_sq: 0,
            bad_large_sum: 0,
            bad_large_sq: 0,
            invariants: InvariantCounts::default(),
        }
    }

    fn merge(mut self, o: Acc) -> Acc {
        self.trials += o.trials;
        self.membership.iter_mut().zip(&o.membership).for_each(|(a, b)| *a += b);
        self.x_sum += o.x_sum;
        self.x_sq += o.x_sq;
        self.over_eighth += o.over_eighth;
        self.cut_sum += o.cut_sum;
        self.cut_sq += o.cut_sq;
        self.large += o.large;
        self.edge_bad.iter_mut().zip(&o.edge_bad).for_each(|(a, b)| *a += b);
        self.bad_sum += o.bad_sum;
        self.bad_sq += o.bad_sq;
        self.bad_large_sum += o.bad_large_sum;
        self.bad_large_sq += o.bad_large_sq;
        self.invariants.add(o.invariants);
        self
    }
}

fn bernoulli(count: u64, trials: u64) -> (f64, f64) {
    let p = count as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// Mean and standard error of `x / scale` from integer sums.
fn moments(sum: u64, sq: u64, trials: u64, scale: f64) -> (f64, f64) {
    let t = trials as f64;
    let mean = sum as f64 / t;
    if trials < 2 {
        return (mean / scale, 0.0);
    }
    let var = ((sq as f64 - sum as f64 * mean) / (t - 1.0)).max(0.0);
    (mean / scale, (var / t).sqrt() / scale)
}

fn upper(name: &str, (estimate, stderr): (f64, f64), bound: f64) -> MonitorRow {
    MonitorRow { name: name.into(), estimate, stderr, bound, pass: estimate <= bound + 3.0 * stderr }
}

fn lower(name: &str, (estimate, stderr): (f64, f64), bound: f64) -> MonitorRow {
    MonitorRow { name: name.into(), estimate, stderr, bound, pass: estimate >= bound - 3.0 * stderr }
}

/// Row for the element with the smallest slack `bound + 3 se - estimate`.
fn worst_upper(name: &str, estimates: &[(f64, f64)], bounds: &[f64]) -> MonitorRow {
    let (idx, _) = estimates
        .iter()
        .zip(bounds)
        .map(|(&(e, se), &b)| (b + 3.0 * se - e, e))
        .enumerate()
        // Smallest slack; among ties the largest estimate.
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(b.1 .1.total_cmp(&a.1 .1)))
        .unwrap_or((0, (0.0, 0.0)));
    match estimates.get(idx) {
        Some(&est) => upper(name, est, bounds[idx]),
        None => upper(name, (0.0, 0.0), 0.0),
    }
}

pub(super) fn run(r: &Rounder<'_>, trials: usize, fixed_initial: usize) -> Result<MonitorReport> {
    if trials == 0 {
        return Err(Error::InvalidInput("monitors need at least one trial".into()));
    }
    let inst = r.inst;
    let (n, k) = (inst.n(), inst.k());
    if fixed_initial >= n {
        return Err(Error::InvalidInput(format!("fixed initial vertex {fixed_initial} out of range")));
    }
    let m = inst.graph().num_edges();
    let success_count = r.success_fraction() * n as f64;

    let run_phase = |fixed: Option<usize>, phase: usize| -> Result<Acc> {
        (0..trials)
            .into_par_iter()
            .try_fold(
                || Acc::new(n * k, m),
                |mut acc, idx| -> Result<Acc> {
                    let seed = r.params.trial_seed(2 * idx + phase);
                    let (out, prop, inv) = r.trial_with_invariants(fixed, seed)?;
                    acc.trials += 1;
                    for &(v, p) in &prop.members {
                        acc.membership[v * k + p] += 1;
                    }
                    let x = out.decided_count as u64;
                    acc.x_sum += x;
                    acc.x_sq += x * x;
                    acc.over_eighth += u64::from(8 * out.decided_count > n);
                    let cut = out.cut_edges as u64;
                    acc.cut_sum += cut;
                    acc.cut_sq += cut * cut;
                    let is_large = out.decided_count as f64 >= success_count;
                    acc.large += u64::from(is_large);
                    let mut bad = 0u64;
                    for (e, &(a, b)) in inst.graph().edges().iter().enumerate() {
                        if out.decided[a] && out.decided[b] && !inst.edge_satisfied(e, &out.assignment.labels) {
                            acc.edge_bad[e] += 1;
                            bad += 1;
                        }
                    }
                    acc.bad_sum += bad;
                    acc.bad_sq += bad * bad;
                    if is_large {
                        acc.bad_large_sum += bad;
                        acc.bad_large_sq += bad * bad;
                    }
                    acc.invariants.add(inv);
                    Ok(acc)
                },
            )
            .try_reduce(|| Acc::new(n * k, m), |a, b| Ok(a.merge(b)))
    };

    let fixed = run_phase(Some(fixed_initial), 0)?;
    let random = run_phase(None, 1)?;
    let t = trials as u64;

    let norms: Vec<f64> = (0..n * k).map(|f| r.norm2(f / k, f % k)).collect();
    let member_fixed: Vec<(f64, f64)> = fixed.membership.iter().map(|&c| bernoulli(c, t)).collect();
    let member_avg: Vec<(f64, f64)> = random.membership.iter().map(|&c| bernoulli(c, t)).collect();
    let edge_bad: Vec<(f64, f64)> = random.edge_bad.iter().map(|&c| bernoulli(c, t)).collect();
    let edge_bounds: Vec<f64> = r.edge_costs.iter().map(|c| 4.0 * c).collect();

    let radius = r.params.radius;
    let eps = r.epsilon;
    let emd = if n <= EXACT_MAX_N {
        avg_emd(r.s, EmdMode::Exact, 0, 0)?
    } else {
        avg_emd(r.s, EmdMode::Sampled, 100_000, r.params.seed)?
    };
    let emd_gate = emd.mean <= radius / 4.0;

    let p_large = bernoulli(random.large, t);
    let conditioned = if random.large > 0 {
        let est = moments(random.bad_large_sum, random.bad_large_sq, random.large, m.max(1) as f64);
        upper("epsuv_total_given_large_x", est, 4.0 * eps / p_large.0)
    } else {
        MonitorRow { name: "epsuv_total_given_large_x".into(), estimate: f64::NAN, stderr: f64::NAN, bound: f64::INFINITY, pass: false }
    };

    let sigma_total = fixed.invariants.unmatched_pairs + random.invariants.unmatched_pairs + r.sigma_conflicts;
    let singleton_total = fixed.invariants.oversized + random.invariants.oversized;
    let mut invariants = fixed.invariants;
    invariants.add(random.invariants);

    let rows = vec![
        worst_upper("probui_fixed_initial", &member_fixed, &norms),
        worst_upper("probui_uniform_initial", &member_avg, &norms),
        lower("quart_mean_x_fraction", moments(random.x_sum, random.x_sq, t, n as f64), 0.25),
        lower("quart_prob_x_over_eighth", bernoulli(random.over_eighth, t), 0.125),
        upper("expcut_cut_fraction", moments(random.cut_sum, random.cut_sq, t, m.max(1) as f64), 6.0 * eps / radius),
        lower("largex_prob_success", p_large, 1.0 / 16.0),
        worst_upper("epsuv_worst_edge", &edge_bad, &edge_bounds),
        upper("epsuv_total", moments(random.bad_sum, random.bad_sq, t, m.max(1) as f64), 4.0 * eps),
        conditioned,
        MonitorRow {
            name: "invariant_singleton".into(),
            estimate: singleton_total as f64,
            stderr: 0.0,
            bound: 0.0,
            pass: singleton_total == 0,
        },
        MonitorRow {
            name: "invariant_sigma_match".into(),
            estimate: sigma_total as f64,
            stderr: 0.0,
            bound: 0.0,
            pass: sigma_total == 0,
        },
        MonitorRow { name: "avg_emd_gate".into(), estimate: emd.mean, stderr: emd.stderr, bound: radius / 4.0, pass: emd_gate },
    ];

    Ok(MonitorReport {
        trials,
        fixed_initial,
        epsilon: eps,
        expansion: r.expansion,
        avg_emd: emd.mean,
        emd_gate,
        rows,
        invariants,
        membership_fixed: member_fixed.iter().map(|x| x.0).collect(),
        membership_avg: member_avg.iter().map(|x| x.0).collect(),
        edge_violation: edge_bad.iter().map(|x| x.0).collect(),
    })
}
