//! Ensemble quality metrics: optimal superposition RMSD, coverage, matching.
//!
//! The rotation solve is a Kabsch alignment built on a Jacobi
//! eigendecomposition of the 3x3 cross-covariance Gram matrix. Reflections
//! are never returned; when the unconstrained optimum is improper the
//! best proper rotation is used instead.

use crate::error::{Error, Result};
use crate::geom::{self, Conformation};

type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Eigendecomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching eigenvector columns.
fn jacobi_eigen(mut a: Mat3) -> ([f64; 3], Mat3) {
    let mut v: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = if theta.abs() > 1e150 {
                1.0 / (2.0 * theta)
            } else {
                theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let app = a[p][p];
            let aqq = a[q][q];
            a[p][p] = app - t * apq;
            a[q][q] = aqq + t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            let r = 3 - p - q;
            let arp = a[r][p];
            let arq = a[r][q];
            a[r][p] = c * arp - s * arq;
            a[p][r] = a[r][p];
            a[r][q] = s * arp + c * arq;
            a[q][r] = a[r][q];
            for row in v.iter_mut() {
                let vip = row[p];
                let viq = row[q];
                row[p] = c * vip - s * viq;
                row[q] = s * vip + c * viq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let vals = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vecs = [[0.0; 3]; 3];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..3 {
            vecs[row][new_col] = v[row][old_col];
        }
    }
    (vals, vecs)
}

fn column(m: &Mat3, j: usize) -> [f64; 3] {
    [m[0][j], m[1][j], m[2][j]]
}

fn set_column(m: &mut Mat3, j: usize, v: [f64; 3]) {
    for i in 0..3 {
        m[i][j] = v[i];
    }
}

/// Unit vector orthogonal to `u`, built from the least aligned basis axis.
fn perpendicular(u: [f64; 3]) -> [f64; 3] {
    let mut axis = [0.0; 3];
    let k = (0..3)
        .min_by(|&i, &j| u[i].abs().partial_cmp(&u[j].abs()).unwrap())
        .unwrap();
    axis[k] = 1.0;
    geom::normalize(geom::cross(u, axis)).expect("axis chosen non-parallel")
}

/// Optimal rigid alignment of `p` onto `q`: returns `(R, t)` minimizing the
/// summed squared distance of `R p_i + t` to `q_i`, with `det R = +1`.
pub fn kabsch_align(p: &[[f64; 3]], q: &[[f64; 3]]) -> Result<(Mat3, [f64; 3])> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "point sets differ in size: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::Config("alignment needs at least one point".into()));
    }
    if !geom::all_finite(p) || !geom::all_finite(q) {
        return Err(Error::Domain("alignment input contains non-finite values".into()));
    }
    let cp = geom::centroid(p);
    let cq = geom::centroid(q);
    let identity: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    // Cross-covariance H[a][b] = sum_i p_c[a] * q_c[b].
    let mut h: Mat3 = [[0.0; 3]; 3];
    for (pi, qi) in p.iter().zip(q) {
        for a in 0..3 {
            for b in 0..3 {
                h[a][b] += (pi[a] - cp[a]) * (qi[b] - cq[b]);
            }
        }
    }
    let mut b: Mat3 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                b[i][j] += h[k][i] * h[k][j];
            }
        }
    }
    let (vals, mut v) = jacobi_eigen(b);
    let s: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    if s[0] == 0.0 {
        // No spatial extent in at least one set; any rotation is optimal.
        let t = [
            cq[0] - cp[0],
            cq[1] - cp[1],
            cq[2] - cp[2],
        ];
        return Ok((identity, t));
    }
    // Right-handed eigenbasis: rebuild the last column from the first two.
    let v2 = geom::cross(column(&v, 0), column(&v, 1));
    set_column(&mut v, 2, v2);
    // Effective rank. The eigen solve leaves noise of order sqrt(eps) * s[0]
    // in singular values that are exactly zero (planar and collinear point
    // sets), so the cutoff must sit well above that floor.
    let tol = 1e-6 * s[0];
    let rank = s.iter().filter(|&&x| x > tol).count();
    let mut u: Mat3 = [[0.0; 3]; 3];
    for j in 0..rank {
        let hv = mat_vec(&h, &column(&v, j));
        let uj = geom::normalize([hv[0] / s[j], hv[1] / s[j], hv[2] / s[j]])
            .expect("H v_j has magnitude s_j");
        set_column(&mut u, j, uj);
    }
    if rank == 1 {
        let filler = perpendicular(column(&u, 0));
        set_column(&mut u, 1, filler);
    }
    if rank <= 2 {
        let u2 = geom::cross(column(&u, 0), column(&u, 1));
        set_column(&mut u, 2, u2);
    }
    let d = if det3(&u) < 0.0 { -1.0 } else { 1.0 };
    let scale = [1.0, 1.0, d];
    let mut r: Mat3 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                r[i][j] += v[i][k] * scale[k] * u[j][k];
            }
        }
    }
    let rcp = mat_vec(&r, &cp);
    Ok((r, [cq[0] - rcp[0], cq[1] - rcp[1], cq[2] - rcp[2]]))
}

/// Root-mean-square deviation after optimally aligning `c` onto `d`.
pub fn rmsd(c: &[[f64; 3]], d: &[[f64; 3]]) -> Result<f64> {
    let (r, t) = kabsch_align(c, d)?;
    let mut acc = 0.0;
    for (ci, di) in c.iter().zip(d) {
        let m = mat_vec(&r, ci);
        for k in 0..3 {
            let e = m[k] + t[k] - di[k];
            acc += e * e;
        }
    }
    Ok((acc / c.len() as f64).sqrt())
}

/// Dense RMSD table between a generated and a reference ensemble.
/// Rows index reference conformations, columns generated ones.
#[derive(Debug, Clone)]
pub struct RmsdMatrix {
    pub n_ref: usize,
    pub n_gen: usize,
    pub data: Vec<f64>,
}

impl RmsdMatrix {
    pub fn get(&self, r: usize, g: usize) -> f64 {
        self.data[r * self.n_gen + g]
    }
}

pub fn pairwise_rmsd(
    generated: &[Conformation],
    reference: &[Conformation],
) -> Result<RmsdMatrix> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Config("both ensembles must be non-empty".into()));
    }
    let mut data = Vec::with_capacity(reference.len() * generated.len());
    for r in reference {
        for g in generated {
            data.push(rmsd(g, r)?);
        }
    }
    Ok(RmsdMatrix {
        n_ref: reference.len(),
        n_gen: generated.len(),
        data,
    })
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Config(format!(
            "coverage threshold must be positive, got {delta}"
        )));
    }
    Ok(())
}

/// Fraction of reference conformations with some generated one strictly
/// closer than `delta`.
pub fn coverage(m: &RmsdMatrix, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let covered = (0..m.n_ref)
        .filter(|&r| (0..m.n_gen).any(|g| m.get(r, g) < delta))
        .count();
    Ok(covered as f64 / m.n_ref as f64)
}

/// Mean over reference conformations of the distance to the nearest
/// generated one.
pub fn matching(m: &RmsdMatrix) -> Result<f64> {
    let mut acc = 0.0;
    for r in 0..m.n_ref {
        let best = (0..m.n_gen)
            .map(|g| m.get(r, g))
            .fold(f64::INFINITY, f64::min);
        acc += best;
    }
    Ok(acc / m.n_ref as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct MoleculeEval {
    pub cov: f64,
    pub mat: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_molecule: Vec<MoleculeEval>,
    pub cov_mean: f64,
    pub cov_median: f64,
    pub mat_mean: f64,
    pub mat_median: f64,
    pub delta: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Aggregates per-molecule coverage and matching into mean and median
/// summaries. One matrix per molecule.
pub fn eval_report(matrices: &[RmsdMatrix], delta: f64) -> Result<EvalReport> {
    check_delta(delta)?;
    if matrices.is_empty() {
        return Err(Error::Config("evaluation needs at least one molecule".into()));
    }
    let per_molecule = matrices
        .iter()
        .map(|m| {
            Ok(MoleculeEval {
                cov: coverage(m, delta)?,
                mat: matching(m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let covs: Vec<f64> = per_molecule.iter().map(|e| e.cov).collect();
    let mats: Vec<f64> = per_molecule.iter().map(|e| e.mat).collect();
    let n = per_molecule.len() as f64;
    Ok(EvalReport {
        cov_mean: covs.iter().sum::<f64>() / n,
        cov_median: median(covs),
        mat_mean: mats.iter().sum::<f64>() / n,
        mat_median: median(mats),
        per_molecule,
        delta,
    })
}
