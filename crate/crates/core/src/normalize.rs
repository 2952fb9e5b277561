//! Normalization of an SDP solution into unit vectors whose inner products
//! are the raw inner products divided by the larger squared norm.
//!
//! The target Gram matrix `G'[a][b] = <x_a, x_b> / max(|x_a|^2, |x_b|^2)`
//! over nonzero label vectors is known to be realizable for feasible
//! solutions, so it is factored directly: symmetrize, eigendecompose, clamp
//! tiny negative eigenvalues, and read vectors off `V * sqrt(Lambda)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdp::{dot, triangle_scan, SdpSolution, SolutionFile, TripleCheck};

pub const DEFAULT_ZERO_TOL: f64 = 1e-12;
pub const DEFAULT_PSD_TOL: f64 = 1e-8;

/// Unit vectors for every nonzero (vertex, label); zero labels are excluded
/// and listed in `zero_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSolution {
    n: usize,
    k: usize,
    dim: usize,
    /// Row of `(v, i)` in `vectors`, by flat index `v*k + i`.
    rows: Vec<Option<usize>>,
    vectors: Vec<f64>,
    zero_labels: Vec<(usize, usize)>,
}

impl NormalizedSolution {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of nonzero labels.
    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(Option::is_none)
    }

    pub fn zero_labels(&self) -> &[(usize, usize)] {
        &self.zero_labels
    }

    pub fn row(&self, v: usize, i: usize) -> Option<usize> {
        self.rows[v * self.k + i]
    }

    pub fn row_vector(&self, row: usize) -> &[f64] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn vector(&self, v: usize, i: usize) -> Option<&[f64]> {
        self.row(v, i).map(|r| self.row_vector(r))
    }

    /// Rows of each vertex's nonzero labels.
    pub fn vertex_rows(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|v| (0..self.k).filter_map(|i| self.row(v, i)).collect())
            .collect()
    }

    /// `(vertex, label)` of every row, in row order.
    pub fn row_labels(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(0, 0); self.len()];
        for v in 0..self.n {
            for i in 0..self.k {
                if let Some(r) = self.row(v, i) {
                    out[r] = (v, i);
                }
            }
        }
        out
    }

    /// Gram matrix of the rows, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let m = self.len();
        let mut g = vec![0.0; m * m];
        for a in 0..m {
            for b in a..m {
                let x = dot(self.row_vector(a), self.row_vector(b));
                g[a * m + b] = x;
                g[b * m + a] = x;
            }
        }
        g
    }

    /// Same layout as the SDP solution file, with zero vectors at excluded
    /// labels and an extra `"zero_labels":[[v,i],...]` field.
    pub fn to_json(&self) -> String {
        let mut data = vec![0.0; self.n * self.k * self.dim];
        for (flat, row) in self.rows.iter().enumerate() {
            if let Some(r) = row {
                data[flat * self.dim..(flat + 1) * self.dim].copy_from_slice(self.row_vector(*r));
            }
        }
        let dense = SdpSolution::new(self.n, self.k, self.dim, data).expect("consistent dimensions");
        let zero = serde_json::to_string(&self.zero_labels.iter().map(|&(v, i)| [v, i]).collect::<Vec<_>>())
            .expect("label list serializes");
        dense.to_json_with(|out| {
            out.push_str(",\"zero_labels\":");
            out.push_str(&zero);
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            #[serde(flatten)]
            solution: SolutionFile,
            zero_labels: Vec<[usize; 2]>,
        }
        let file: File = serde_json::from_str(text)?;
        let dense = file.solution.into_solution()?;
        let (n, k, dim) = (dense.n(), dense.k(), dense.dim());
        let mut zero = vec![false; n * k];
        for &[v, i] in &file.zero_labels {
            if v >= n || i >= k {
                return Err(Error::InvalidInput(format!("zero label ({v}, {i}) out of range")));
            }
            zero[v * k + i] = true;
        }
        let mut rows = vec![None; n * k];
        let mut vectors = Vec::new();
        let mut next = 0;
        for v in 0..n {
            for i in 0..k {
                if !zero[v * k + i] {
                    rows[v * k + i] = Some(next);
                    next += 1;
                    vectors.extend_from_slice(dense.vector(v, i));
                }
            }
        }
        Ok(NormalizedSolution {
            n,
            k,
            dim,
            rows,
            vectors,
            zero_labels: file.zero_labels.into_iter().map(|[v, i]| (v, i)).collect(),
        })
    }
}

/// Builds the normalized vectors. Fails with [`Error::DegenerateVertex`] if
/// a vertex has no label of squared norm above `zero_tol`, and with
/// [`Error::NotPsd`] if the target Gram matrix has an eigenvalue below
/// `-psd_tol`.
pub fn normalize(s: &SdpSolution, zero_tol: f64, psd_tol: f64) -> Result<NormalizedSolution> {
    let (n, k) = (s.n(), s.k());
    let mut rows = vec![None; n * k];
    let mut zero_labels = Vec::new();
    let mut members: Vec<(usize, usize)> = Vec::new();
    for v in 0..n {
        let before = members.len();
        for i in 0..k {
            if s.norm2(v, i) > zero_tol {
                rows[v * k + i] = Some(members.len());
                members.push((v, i));
            } else {
                zero_labels.push((v, i));
            }
        }
        if members.len() == before {
            return Err(Error::DegenerateVertex { vertex: v });
        }
    }

    let m = members.len();
    let norms: Vec<f64> = members.iter().map(|&(v, i)| s.norm2(v, i)).collect();
    let mut target = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        let (va, ia) = members[a];
        for b in 0..m {
            let (vb, ib) = members[b];
            target[(a, b)] = dot(s.vector(va, ia), s.vector(vb, ib)) / norms[a].max(norms[b]);
        }
    }
    let target = (&target + target.transpose()) * 0.5;

    let (dim, mut vectors) = factor_psd(target, psd_tol)?;
    for a in 0..m {
        let row = &mut vectors[a * dim..(a + 1) * dim];
        let len = dot(row, row).sqrt();
        if len == 0.0 {
            return Err(Error::Invariant(format!("normalized vector of {:?} vanished", members[a])));
        }
        row.iter_mut().for_each(|x| *x /= len);
    }

    Ok(NormalizedSolution { n, k, dim, rows, vectors, zero_labels })
}

/// Factors a symmetric matrix as `Y * Y^T`, returning the column count of
/// `Y` and its rows flattened. Eigenvalues in `[-psd_tol, 0)` are clamped to
/// zero; anything lower is an error. Eigen-directions at round-off level are
/// dropped.
fn factor_psd(target: DMatrix<f64>, psd_tol: f64) -> Result<(usize, Vec<f64>)> {
    let m = target.nrows();
    let eig = target.symmetric_eigen();
    let lowest = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lowest < -psd_tol {
        return Err(Error::NotPsd { eigenvalue: lowest, tol: psd_tol });
    }
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = top * f64::EPSILON * m as f64;
    let kept: Vec<usize> = (0..m).filter(|&j| eig.eigenvalues[j] > cutoff).collect();
    let dim = kept.len();
    let mut vectors = vec![0.0; m * dim];
    for a in 0..m {
        for (c, &j) in kept.iter().enumerate() {
            vectors[a * dim + c] = eig.eigenvectors[(a, j)] * eig.eigenvalues[j].sqrt();
        }
    }
    Ok((dim, vectors))
}

/// Largest violation of each normalization property; all are `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReport {
    /// `d(a,c) - d(a,b) - d(b,c)` on normalized vectors.
    pub triangle: f64,
    /// `|<a~, b~> - <a, b>/max(|a|^2, |b|^2)|`.
    pub inner_product: f64,
    /// `| |a~|^2 - 1 |`.
    pub unit_norm: f64,
    /// `|<u~_i, u~_j>|`, same vertex, `i != j`.
    pub orthogonality: f64,
    /// `|a~ - b~|^2 - 2|a - b|^2 / max(|a|^2, |b|^2)`.
    pub distance_bound: f64,
    pub triples_checked: usize,
    pub triangle_exhaustive: bool,
    pub tol: f64,
    pub pass: bool,
}

impl NormalizationReport {
    pub fn max_violation(&self) -> f64 {
        [self.triangle, self.inner_product, self.unit_norm, self.orthogonality, self.distance_bound]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Checks the inner-product law, unit norms and per-vertex orthogonality
/// exhaustively, the distance bound over all pairs, and the triangle
/// inequality on normalized vectors exhaustively when there are at most 60
/// of them, otherwise on sampled and edge-local triples.
pub fn verify_normalization(
    s: &SdpSolution,
    ns: &NormalizedSolution,
    tol: f64,
    check: &TripleCheck<'_>,
) -> NormalizationReport {
    let labels = ns.row_labels();
    let m = labels.len();
    let gram = ns.gram();
    let g = |a: usize, b: usize| gram[a * m + b];
    let norms: Vec<f64> = labels.iter().map(|&(v, i)| s.norm2(v, i)).collect();

    let mut inner_product = 0.0f64;
    let mut unit_norm = 0.0f64;
    let mut orthogonality = 0.0f64;
    let mut distance_bound = 0.0f64;
    for a in 0..m {
        unit_norm = unit_norm.max((g(a, a) - 1.0).abs());
        for b in 0..m {
            let raw = dot(s.vector(labels[a].0, labels[a].1), s.vector(labels[b].0, labels[b].1));
            let scale = norms[a].max(norms[b]);
            inner_product = inner_product.max((g(a, b) - raw / scale).abs());
            if a != b && labels[a].0 == labels[b].0 {
                orthogonality = orthogonality.max(g(a, b).abs());
            }
            let tilde = g(a, a) + g(b, b) - 2.0 * g(a, b);
            let raw_dist = norms[a] + norms[b] - 2.0 * raw;
            distance_bound = distance_bound.max(tilde - 2.0 * raw_dist / scale);
        }
    }

    let dist = |a: usize, b: usize| g(a, a) + g(b, b) - 2.0 * g(a, b);
    let (triangle, triples_checked, triangle_exhaustive) = triangle_scan(m, &ns.vertex_rows(), &dist, check);

    let mut report = NormalizationReport {
        triangle,
        inner_product,
        unit_norm,
        orthogonality,
        distance_bound,
        triples_checked,
        triangle_exhaustive,
        tol,
        pass: false,
    };
    report.pass = report.max_violation() <= tol;
    report
}
