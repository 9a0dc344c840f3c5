//! Gain design and stability certification.
//!
//! The observer error for an order-`M` integrator chain evolves as
//! `ξ̇ = Ξ(Φ) ξ`, where `Ξ` carries `−k_m Φ` down its first block column and
//! identities on the block superdiagonal. A constant similarity transform
//! `P` moves every occurrence of `Φ` into the last diagonal block; the
//! remaining constant part yields the matrix `Q̄` whose positive
//! definiteness (together with a lower bound on `Φ`) certifies uniform
//! exponential convergence with rate `λ_min(Q̄)/2` on `‖Pξ‖`.
//!
//! For the multi-agent observer `Φ = Ψ + α (L ⊗ I_K)`, and the lower bound on
//! `Φ` is split into a spatial-excitation condition on the averaged
//! observation matrices and a lower bound on the consensus gain `α`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CommGraph;
use crate::numerics::{is_pd, Matrix, NumericsError, SymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("the gain-ratio LMI is only defined for order M >= 2 (got M = {0})")]
    OrderTooLow(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Schur lemma hypothesis violated: λ_min(C) = {lambda_min} is not above γ = {gamma}")]
    SchurHypothesis { lambda_min: f64, gamma: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Observer gains `k₁…k_M`, consensus gain `α`, and the design parameters `δ`, `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverGains {
    k: Vec<f64>,
    alpha: f64,
    delta: f64,
    gamma: f64,
}

impl ObserverGains {
    pub fn new(k: Vec<f64>, alpha: f64, delta: f64, gamma: f64) -> Result<Self, DesignError> {
        if k.is_empty() {
            return Err(DesignError::InvalidGains("at least one gain k₁ is required".into()));
        }
        if let Some((i, v)) = k.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(DesignError::InvalidGains(format!("k{} = {v} must be positive", i + 1)));
        }
        for (name, v) in [("alpha", alpha), ("delta", delta), ("gamma", gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DesignError::InvalidGains(format!("{name} = {v} must be positive")));
            }
        }
        Ok(Self { k, alpha, delta, gamma })
    }

    pub fn order(&self) -> usize {
        self.k.len()
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    /// `k_m` with 1-based `m`.
    pub fn k_at(&self, m: usize) -> f64 {
        self.k[m - 1]
    }

    /// Gain ratio `c_l = k_{l+1} / k_l`, 1-based `l`.
    pub fn ratio(&self, l: usize) -> f64 {
        self.k[l] / self.k[l - 1]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Spatial-excitation threshold `μ + γ`.
    pub fn spatial_threshold(&self) -> f64 {
        compute_mu(self) + self.gamma
    }

    /// With bearing measurements `λ_max(Π_b) = 1`, so the averaged projector
    /// can only exceed `μ + γ` when this is below one.
    pub fn bearing_feasible(&self) -> bool {
        self.spatial_threshold() < 1.0
    }
}

/// `μ = δ` for `M = 1`, `(δ k₁ + k₂)/k₁²` otherwise.
pub fn compute_mu(gains: &ObserverGains) -> f64 {
    if gains.order() == 1 {
        gains.delta
    } else {
        let k1 = gains.k_at(1);
        (gains.delta * k1 + gains.k_at(2)) / (k1 * k1)
    }
}

/// Constant part of the gain-ratio matrix `Σ̄`, 1-based block indices.
///
/// The first row is `c_{M−1}` throughout; the middle case runs up to and
/// including column `M`, with the `(M, M)` entry taken by `δ`.
fn sigma_bar_entry(gains: &ObserverGains, i: usize, j: usize) -> f64 {
    let m = gains.order();
    if i == m && j == m {
        gains.delta
    } else if i == 1 {
        gains.ratio(m - 1)
    } else if i == j + 1 {
        -gains.ratio(m - j)
    } else if i > j + 1 {
        0.0
    } else {
        gains.ratio(m - i) - gains.ratio(m - i + 1)
    }
}

/// `Q̄ = Σ̄ + Σ̄ᵀ`, the `M × M` gain-ratio LMI matrix.
pub fn build_qbar(gains: &ObserverGains) -> Result<SymMatrix, DesignError> {
    let m = gains.order();
    if m < 2 {
        return Err(DesignError::OrderTooLow(m));
    }
    let mut q = Matrix::zeros(m, m);
    for i in 1..=m {
        for j in 1..=m {
            q[(i - 1, j - 1)] = sigma_bar_entry(gains, i, j) + sigma_bar_entry(gains, j, i);
        }
    }
    Ok(SymMatrix::new(q)?)
}

/// The similarity transform `η = P ξ` for block dimension `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationP {
    order: usize,
    block_dim: usize,
    core: Matrix,
    core_inverse: Matrix,
    matrix: Matrix,
    inverse: Matrix,
}

impl TransformationP {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// `M × M` coefficient pattern; `P = core ⊗ I_W`.
    pub fn core(&self) -> &Matrix {
        &self.core
    }

    pub fn core_inverse(&self) -> &Matrix {
        &self.core_inverse
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix {
        &self.inverse
    }

    /// `P ξ` without forming the dense product, `ξ` stacked order-major.
    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        apply_block_pattern(&self.core, self.block_dim, xi)
    }

    pub fn apply_inverse(&self, eta: &[f64]) -> Vec<f64> {
        apply_block_pattern(&self.core_inverse, self.block_dim, eta)
    }
}

fn apply_block_pattern(core: &Matrix, w: usize, x: &[f64]) -> Vec<f64> {
    let m = core.rows();
    assert_eq!(x.len(), m * w, "vector length must be M·W");
    let mut out = vec![0.0; m * w];
    for r in 0..m {
        for c in 0..m {
            let a = core[(r, c)];
            if a == 0.0 {
                continue;
            }
            for e in 0..w {
                out[r * w + e] += a * x[c * w + e];
            }
        }
    }
    out
}

pub fn build_transformation(gains: &ObserverGains, block_dim: usize) -> TransformationP {
    let m = gains.order();
    let k = |i: usize| gains.k_at(i);
    let mut core = Matrix::zeros(m, m);
    if m == 1 {
        core[(0, 0)] = 1.0 / k(1);
    } else {
        // 1-based (row, col) placements
        let mut put = |r: usize, c: usize, v: f64| core[(r - 1, c - 1)] = v;
        put(1, m - 1, -1.0 / k(m - 1));
        put(1, m, 1.0 / k(m));
        for i in 2..m {
            put(i, m - i, -1.0 / k(m - i));
            put(i, m - i + 1, 1.0 / k(m - i + 1));
        }
        put(m, 1, 1.0 / k(1));
    }
    // Row r of the inverse holds k_r in columns M−r+1..=M.
    let mut core_inverse = Matrix::zeros(m, m);
    for r in 1..=m {
        for c in (m - r + 1)..=m {
            core_inverse[(r - 1, c - 1)] = k(r);
        }
    }
    let eye = Matrix::identity(block_dim);
    let matrix = crate::numerics::kron(&core, &eye);
    let inverse = crate::numerics::kron(&core_inverse, &eye);
    TransformationP {
        order: m,
        block_dim,
        core,
        core_inverse,
        matrix,
        inverse,
    }
}

/// Closed-loop matrix `Ξ(Φ)`: block `(m, 1) = −k_m Φ`, block `(m, m+1) = I_W`.
pub fn build_xi(gains: &ObserverGains, phi: &SymMatrix) -> Matrix {
    let m = gains.order();
    let w = phi.dim();
    let mut xi = Matrix::zeros(m * w, m * w);
    let eye = Matrix::identity(w);
    for row in 0..m {
        xi.set_block(row * w, 0, &phi.as_matrix().scale(-gains.k[row]));
        if row + 1 < m {
            xi.set_block(row * w, (row + 1) * w, &eye);
        }
    }
    xi
}

/// `Σ = P Ξ P⁻¹` written directly from the gain ratios.
pub fn closed_form_sigma(gains: &ObserverGains, phi: &SymMatrix) -> Matrix {
    let m = gains.order();
    let w = phi.dim();
    let k1_phi = phi.as_matrix().scale(gains.k_at(1));
    if m == 1 {
        return k1_phi.scale(-1.0);
    }
    let mut sigma = Matrix::zeros(m * w, m * w);
    for i in 1..=m {
        for j in 1..=m {
            let block = if i == m && j == m {
                Matrix::identity(w)
                    .scale(gains.ratio(1))
                    .sub(&k1_phi)
                    .expect("same size")
            } else {
                Matrix::identity(w).scale(-sigma_bar_entry(gains, i, j))
            };
            sigma.set_block((i - 1) * w, (j - 1) * w, &block);
        }
    }
    sigma
}

/// `λ_min((1/N) Σᵢ Ψᵢ) − (μ + γ)`; the spatial condition holds iff this is positive.
///
/// Agents without measurements contribute zero blocks but still count in `N`.
pub fn spatial_excitation_margin(observation_blocks: &[SymMatrix], mu: f64, gamma: f64) -> Result<f64, DesignError> {
    Ok(mean_observation_lambda_min(observation_blocks)? - (mu + gamma))
}

/// `λ_min((1/N) Σᵢ Ψᵢ)`.
pub fn mean_observation_lambda_min(observation_blocks: &[SymMatrix]) -> Result<f64, DesignError> {
    let first = observation_blocks
        .first()
        .ok_or_else(|| DesignError::Dimension("no observation blocks".into()))?;
    let mut sum = SymMatrix::zeros(first.dim());
    for b in observation_blocks {
        sum = sum
            .add(b)
            .map_err(|_| DesignError::Dimension("observation blocks differ in size".into()))?;
    }
    Ok(sum.scale(1.0 / observation_blocks.len() as f64).min_eigenvalue()?)
}

/// Lower bound on the consensus gain.
///
/// With observation blocks: `(μ + ‖(1/γ)Ψ² − Ψ‖)/λ_min` for the block-diagonal
/// `Ψ`. Without: the idempotent-projector simplification `(μ + 1/γ − 1)/λ_min`.
pub fn consensus_alpha_bound(
    mu: f64,
    gamma: f64,
    lambda_min: f64,
    psi_blocks: Option<&[SymMatrix]>,
) -> Result<f64, DesignError> {
    let coupling = match psi_blocks {
        None => 1.0 / gamma - 1.0,
        Some(blocks) => {
            // the spectral norm of a block-diagonal matrix is the largest block norm
            let mut worst: f64 = 0.0;
            for psi in blocks {
                let sq = SymMatrix::new(psi.as_matrix().matmul(psi.as_matrix())?)?;
                let term = sq.scale(1.0 / gamma).sub(psi)?;
                worst = worst.max(term.spectral_norm()?);
            }
            worst
        }
    };
    Ok((mu + coupling) / lambda_min)
}

/// Outcome of every stability condition for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub order: usize,
    pub connected: bool,
    pub lambda_min_laplacian: Option<f64>,
    pub mu: f64,
    pub gamma: f64,
    pub spatial_threshold: f64,
    pub spatial_margin: f64,
    pub spatial_ok: bool,
    pub alpha: f64,
    pub alpha_bound: f64,
    pub alpha_ok: bool,
    pub qbar_lambda_min: Option<f64>,
    pub lmi_ok: bool,
    /// Guaranteed exponential rate on `‖η‖`, in 1/s.
    pub rate_bound: f64,
    pub overall: bool,
}

impl fmt::Display for CertificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
        let flag = |b: bool| if b { "pass" } else { "FAIL" };
        writeln!(f, "order: {}", self.order)?;
        writeln!(f, "connected: {}", self.connected)?;
        writeln!(f, "lambda_min_laplacian: {}", opt(self.lambda_min_laplacian))?;
        writeln!(f, "mu: {:.6}", self.mu)?;
        writeln!(f, "spatial_threshold: {:.6}", self.spatial_threshold)?;
        writeln!(f, "spatial_margin: {:.6}", self.spatial_margin)?;
        writeln!(f, "spatial_condition: {}", flag(self.spatial_ok))?;
        writeln!(f, "alpha: {:.6}", self.alpha)?;
        writeln!(f, "alpha_bound: {:.6}", self.alpha_bound)?;
        writeln!(f, "alpha_condition: {}", flag(self.alpha_ok))?;
        writeln!(f, "qbar_lambda_min: {}", opt(self.qbar_lambda_min))?;
        writeln!(f, "lmi_condition: {}", flag(self.lmi_ok))?;
        writeln!(f, "rate_bound: {:.6}", self.rate_bound)?;
        write!(f, "overall: {}", flag(self.overall))
    }
}

/// Evaluate connectivity, the spatial condition at the supplied observation
/// blocks, the consensus-gain bound and (for `M ≥ 3`) the gain-ratio LMI.
pub fn certify(
    gains: &ObserverGains,
    graph: &CommGraph,
    observation_blocks: &[SymMatrix],
) -> Result<CertificationReport, DesignError> {
    let n = graph.n_agents();
    if observation_blocks.len() != n {
        return Err(DesignError::Dimension(format!(
            "{} observation blocks for {n} agents",
            observation_blocks.len()
        )));
    }
    let m = gains.order();
    let mu = compute_mu(gains);
    let connected = graph.is_connected();
    let spatial_margin = spatial_excitation_margin(observation_blocks, mu, gains.gamma)?;
    let spatial_ok = spatial_margin > 0.0;

    let lambda_min_laplacian = graph.lambda_min_positive().ok();
    let alpha_bound = match lambda_min_laplacian {
        Some(l) => consensus_alpha_bound(mu, gains.gamma, l, Some(observation_blocks))?,
        None => f64::INFINITY,
    };
    let alpha_ok = gains.alpha > alpha_bound;

    let (qbar_lambda_min, lmi_ok, rate_bound) = if m == 1 {
        (None, true, gains.delta * gains.k_at(1))
    } else {
        let qbar = build_qbar(gains)?;
        let lmin = qbar.min_eigenvalue()?;
        let ok = m == 2 || is_pd(&qbar, 0.0)?;
        (Some(lmin), ok, 0.5 * lmin)
    };

    Ok(CertificationReport {
        order: m,
        connected,
        lambda_min_laplacian,
        mu,
        gamma: gains.gamma,
        spatial_threshold: mu + gains.gamma,
        spatial_margin,
        spatial_ok,
        alpha: gains.alpha,
        alpha_bound,
        alpha_ok,
        qbar_lambda_min,
        lmi_ok,
        rate_bound,
        overall: connected && spatial_ok && alpha_ok && lmi_ok,
    })
}

/// Conservative Schur test: given `C ≻ γ I`, `A − (1/γ) B Bᵀ ≻ 0` implies the
/// block matrix `[[A, B], [Bᵀ, C]]` is positive definite.
pub fn schur_pd_check(a: &SymMatrix, b: &Matrix, c: &SymMatrix, gamma: f64) -> Result<bool, DesignError> {
    if !(gamma > 0.0) {
        return Err(DesignError::InvalidGains(format!("gamma = {gamma} must be positive")));
    }
    if b.rows() != a.dim() || b.cols() != c.dim() {
        return Err(DesignError::Dimension(format!(
            "B is {}x{} for A {}x{} and C {}x{}",
            b.rows(),
            b.cols(),
            a.dim(),
            a.dim(),
            c.dim(),
            c.dim()
        )));
    }
    let lambda_min = c.min_eigenvalue()?;
    if !(lambda_min > gamma) {
        return Err(DesignError::SchurHypothesis { lambda_min, gamma });
    }
    let bbt = SymMatrix::new(b.matmul(&b.transpose())?)?;
    Ok(is_pd(&a.sub(&bbt.scale(1.0 / gamma))?, 0.0)?)
}
