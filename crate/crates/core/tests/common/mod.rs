//! Test-only oracles and helpers, independent of the library's eigensolver.
#![allow(dead_code)]

use std::path::PathBuf;

use bearing_consensus::cli::config::ConfigFile;
use bearing_consensus::graph::{CommGraph, Edge};
use bearing_consensus::numerics::{Matrix, SymMatrix};
use bearing_consensus::sim::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn load(name: &str) -> Scenario {
    ConfigFile::load(&scenario_path(name)).unwrap().to_scenario().unwrap()
}

/// Householder reduction of a symmetric matrix to tridiagonal `(diag, offdiag)`.
pub fn tridiagonalize(a: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    for k in 0..n.saturating_sub(2) {
        let alpha_sq: f64 = (k + 1..n).map(|i| a[i][k] * a[i][k]).sum();
        let alpha = alpha_sq.sqrt();
        if alpha < 1e-300 {
            continue;
        }
        let sign = if a[k + 1][k] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = vec![0.0; n];
        v[k + 1] = a[k + 1][k] + sign * alpha;
        for i in k + 2..n {
            v[i] = a[i][k];
        }
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq < 1e-300 {
            continue;
        }
        // A <- H A H with H = I - 2 v vᵀ / (vᵀv)
        let p: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * v[j]).sum::<f64>() * 2.0 / vnorm_sq)
            .collect();
        let kf: f64 = (0..n).map(|i| v[i] * p[i]).sum::<f64>() / vnorm_sq;
        let q: Vec<f64> = (0..n).map(|i| p[i] - kf * v[i]).collect();
        for i in 0..n {
            for j in 0..n {
                a[i][j] -= v[i] * q[j] + q[i] * v[j];
            }
        }
    }
    let d = (0..n).map(|i| a[i][i]).collect();
    let e = (0..n.saturating_sub(1)).map(|i| a[i + 1][i]).collect();
    (d, e)
}

/// Number of eigenvalues strictly below `x`.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] };
        q = d[i] - x - if i == 0 { 0.0 } else { off / q };
        if q == 0.0 {
            q = -1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Ascending eigenvalues by Sturm-sequence bisection.
pub fn sturm_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let (d, e) = tridiagonalize(a);
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    lo -= 1e-9;
    hi += 1e-9;
    (0..n)
        .map(|k| {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if sturm_count(&d, &e, mid) > k {
                    b = mid;
                } else {
                    a = mid;
                }
                if b - a < 1e-14 * (1.0 + a.abs().max(b.abs())) {
                    break;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn oracle_min_eigenvalue(m: &SymMatrix) -> f64 {
    sturm_eigenvalues(&rows_of(m.as_matrix()))[0]
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize, scale: f64) -> SymMatrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-scale..scale);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    SymMatrix::new(m).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// `G Gᵀ + shift·I`, symmetric positive definite for `shift > 0`.
pub fn random_spd(rng: &mut impl Rng, n: usize, shift: f64) -> SymMatrix {
    let g = random_matrix(rng, n, n, 1.0);
    SymMatrix::new(g.matmul(&g.transpose()).unwrap()).unwrap().shift(shift)
}

pub fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Random spanning tree plus extra edges, random positive weights.
pub fn random_connected_graph(rng: &mut impl Rng, n: usize) -> CommGraph {
    let mut edges = Vec::new();
    let mut used = std::collections::HashSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push(Edge(u, v, rng.random_range(0.1..3.0)));
        used.insert((u, v));
    }
    for _ in 0..rng.random_range(0..=n) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let (u, v) = (a.min(b), a.max(b));
        if u != v && used.insert((u, v)) {
            edges.push(Edge(u, v, rng.random_range(0.1..3.0)));
        }
    }
    CommGraph::from_edges(n, &edges).unwrap()
}

/// Blocks of `Φ` in the graph eigenbasis: `(Φ̄₁₁, Φ̄₁₂, Φ̄₂₂)` for
/// `Φ = blockdiag(Ψ) + α (L ⊗ I_K)` and `T = [v₁ ⊗ I_K, U ⊗ I_K]`.
pub fn phi_bar_blocks(graph: &CommGraph, psi: &[SymMatrix], alpha: f64) -> (SymMatrix, Matrix, SymMatrix) {
    use bearing_consensus::numerics::kron;
    let n = graph.n_agents();
    let k = psi[0].dim();
    let eye = Matrix::identity(k);
    let phi = SymMatrix::block_diag(psi)
        .add(
            &SymMatrix::new(kron(graph.laplacian().as_matrix(), &eye))
                .unwrap()
                .scale(alpha),
        )
        .unwrap();
    let v1 = Matrix::new(n, 1, vec![1.0 / (n as f64).sqrt(); n]).unwrap();
    let t1 = kron(&v1, &eye);
    let t2 = kron(graph.u_matrix(), &eye);
    let p = phi.as_matrix();
    let b11 = t1.transpose().matmul(p).unwrap().matmul(&t1).unwrap();
    let b12 = t1.transpose().matmul(p).unwrap().matmul(&t2).unwrap();
    let b22 = t2.transpose().matmul(p).unwrap().matmul(&t2).unwrap();
    (SymMatrix::new(b11).unwrap(), b12, SymMatrix::new(b22).unwrap())
}
