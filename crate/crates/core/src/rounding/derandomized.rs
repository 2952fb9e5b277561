use rayon::prelude::*;

use super::{Fill, Propagation, Rounder, RoundingOutcome};
use crate::error::{Error, Result};

pub const MAX_LABEL_PAIRS: usize = 2000;

/// Candidate `(t, r)` grid for initial row `row` of vertex `u`, state `i`.
///
/// Membership is `|v_p|^2 >= t` and `dist <= r`, both piecewise constant:
/// for `t` the distinct norms up to `|u_i|^2` (plus 0) hit every cell, for
/// `r` the distinct distances inside `[R, 2R]` plus the two endpoints do.
fn grid(r: &Rounder<'_>, norms: &[f64], u: usize, i: usize, row: usize) -> (Vec<f64>, Vec<f64>) {
    let top = r.norm2(u, i);
    let mut ts: Vec<f64> = std::iter::once(0.0).chain(norms.iter().copied().filter(|&x| x <= top)).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let radius = r.params.radius;
    let mut rs: Vec<f64> = (0..r.rows)
        .map(|b| r.dist(row, b))
        .filter(|&d| (radius..=2.0 * radius).contains(&d))
        .chain([radius, 2.0 * radius])
        .collect();
    rs.sort_by(f64::total_cmp);
    rs.dedup();
    (ts, rs)
}

/// Best of the greedy and the all-zero fill; `true` when greedy wins ties.
fn score(r: &Rounder<'_>, prop: &Propagation) -> (usize, bool) {
    let greedy = r.inst.satisfied_count(&r.labels(prop, Fill::Greedy));
    let zero = r.inst.satisfied_count(&r.labels(prop, Fill::Zero));
    if greedy >= zero {
        (greedy, true)
    } else {
        (zero, false)
    }
}

pub(super) fn run(r: &Rounder<'_>) -> Result<RoundingOutcome> {
    let (n, k) = (r.inst.n(), r.inst.k());
    if n * k > MAX_LABEL_PAIRS {
        return Err(Error::Size(format!(
            "derandomized rounding enumerates at most n*k = {MAX_LABEL_PAIRS} label pairs, got {}; use best-of rounding",
            n * k
        )));
    }
    let mut norms: Vec<f64> = r.vertex_rows.iter().enumerate().flat_map(|(v, rows)| rows.iter().map(move |&(p, _)| (v, p))).map(|(v, p)| r.norm2(v, p)).collect();
    norms.sort_by(f64::total_cmp);
    norms.dedup();

    let starts: Vec<(usize, usize, usize)> = r
        .vertex_rows
        .iter()
        .enumerate()
        .flat_map(|(u, rows)| rows.iter().map(move |&(i, row)| (u, i, row)))
        .collect();

    // (score, enumeration index, u, i, row, t, r, greedy); highest score, lowest index.
    let best = starts
        .par_iter()
        .enumerate()
        .map(|(idx, &(u, i, row))| {
            let (ts, rs) = grid(r, &norms, u, i, row);
            let mut best: Option<(usize, bool, f64, f64)> = None;
            for &t in &ts {
                for &rad in &rs {
                    let (sc, greedy) = score(r, &r.propagate(row, t, rad));
                    if best.is_none_or(|b| sc > b.0) {
                        best = Some((sc, greedy, t, rad));
                    }
                }
            }
            let (sc, greedy, t, rad) = best.expect("grid is never empty");
            (sc, idx, u, i, row, t, rad, greedy)
        })
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
        .ok_or_else(|| Error::InvalidInput("no nonzero label to start from".into()))?;

    let (_, _, u, i, row, t, rad, greedy) = best;
    let prop = r.propagate(row, t, rad);
    Ok(r.finish(&prop, (u, i, t, rad), if greedy { Fill::Greedy } else { Fill::Zero }))
}
