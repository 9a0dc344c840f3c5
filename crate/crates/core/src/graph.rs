//! Weighted undirected communication graph and its Laplacian spectrum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{tol, Matrix, NumericsError, Spectrum, SymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("a communication graph needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("adjacency must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("self-edge at ({0}, {0}): diagonal weight {1} must be zero")]
    SelfEdge(usize, f64),
    #[error("negative weight {w} at ({i}, {j})")]
    NegativeWeight { i: usize, j: usize, w: f64 },
    #[error("asymmetric adjacency at ({i}, {j}): {a} vs {b}")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("edge ({i}, {j}) references a vertex outside 0..{n}")]
    VertexOutOfRange { i: usize, j: usize, n: usize },
    #[error("edge ({i}, {j}) listed twice")]
    DuplicateEdge { i: usize, j: usize },
    #[error("graph is disconnected (second Laplacian eigenvalue {lambda2:.3e}); the stability conditions require a connected graph")]
    Disconnected { lambda2: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Weighted edge `(i, j, w)` with 0-indexed vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge(pub usize, pub usize, pub f64);

/// Communication graph with cached Laplacian spectral data.
///
/// `lambda` holds the `N − 1` largest Laplacian eigenvalues (ascending) and
/// `u_matrix` the matching eigenvectors; for a connected graph these are
/// exactly the positive eigenvalues and `v₁ = 1/√N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n_agents: usize,
    adjacency: Matrix,
    laplacian: SymMatrix,
    spectrum: Spectrum,
    u_matrix: Matrix,
    lambda: Vec<f64>,
}

impl CommGraph {
    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self, GraphError> {
        let mut adj = Matrix::zeros(n, n);
        for &Edge(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(GraphError::VertexOutOfRange { i, j, n });
            }
            if i == j {
                return Err(GraphError::SelfEdge(i, w));
            }
            if adj[(i, j)] != 0.0 {
                return Err(GraphError::DuplicateEdge { i, j });
            }
            adj[(i, j)] = w;
            adj[(j, i)] = w;
        }
        build_graph(&adj)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    pub fn laplacian(&self) -> &SymMatrix {
        &self.laplacian
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn u_matrix(&self) -> &Matrix {
        &self.u_matrix
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Neighbors of `i` with their positive weights.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(j, w)| (j, *w))
    }

    /// Unweighted vertex degree.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..self.n_agents {
            for (j, w) in self.neighbors(i) {
                if j > i {
                    out.push(Edge(i, j, w));
                }
            }
        }
        out
    }

    /// Decided spectrally: λ₂ above [`tol::CONNECTIVITY`].
    pub fn is_connected(&self) -> bool {
        self.spectrum.eigenvalues[1] > tol::CONNECTIVITY
    }

    /// Smallest positive Laplacian eigenvalue (algebraic connectivity).
    pub fn lambda_min_positive(&self) -> Result<f64, GraphError> {
        if !self.is_connected() {
            return Err(GraphError::Disconnected {
                lambda2: self.spectrum.eigenvalues[1],
            });
        }
        Ok(self.lambda[0])
    }
}

/// Validate a weighted adjacency matrix and build the graph with its Laplacian spectrum.
pub fn build_graph(adjacency: &Matrix) -> Result<CommGraph, GraphError> {
    let (rows, cols) = (adjacency.rows(), adjacency.cols());
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    let n = rows;
    if n < 2 {
        return Err(GraphError::TooFewAgents(n));
    }
    for i in 0..n {
        let d = adjacency[(i, i)];
        if d != 0.0 {
            return Err(GraphError::SelfEdge(i, d));
        }
        for j in 0..n {
            let w = adjacency[(i, j)];
            if w < 0.0 {
                return Err(GraphError::NegativeWeight { i, j, w });
            }
            let wt = adjacency[(j, i)];
            if (w - wt).abs() > tol::ADJACENCY_SYMMETRY {
                return Err(GraphError::Asymmetric { i, j, a: w, b: wt });
            }
        }
    }

    let mut adjacency = adjacency.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (adjacency[(i, j)] + adjacency[(j, i)]);
            adjacency[(i, j)] = avg;
            adjacency[(j, i)] = avg;
        }
    }

    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        let mut deg = 0.0;
        for j in 0..n {
            if i != j {
                l[(i, j)] = -adjacency[(i, j)];
                deg += adjacency[(i, j)];
            }
        }
        l[(i, i)] = deg;
    }
    let laplacian = SymMatrix::new(l)?;
    let spectrum = laplacian.eigen()?;
    let u_matrix = spectrum.eigenvectors.block(0, 1, n, n - 1);
    let lambda = spectrum.eigenvalues[1..].to_vec();

    Ok(CommGraph {
        n_agents: n,
        adjacency,
        laplacian,
        spectrum,
        u_matrix,
        lambda,
    })
}

/// Unit-weight cycle on `n` vertices.
pub fn cycle_edges(n: usize) -> Vec<Edge> {
    (0..n).map(|i| Edge(i, (i + 1) % n, 1.0)).collect()
}
