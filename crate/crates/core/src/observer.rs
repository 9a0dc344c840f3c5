//! The distributed consensus observer for a chain-of-integrator target.
//!
//! Each agent runs a Luenberger-style replica of the integrator chain,
//! corrected by its own innovation `y − Ψ x̂⁽⁰⁾` and by the disagreement of
//! first-block estimates with its graph neighbors. Only the first block is
//! ever transmitted.

use thiserror::Error;

use crate::gain_design::ObserverGains;
use crate::numerics::{projection_matrix, NumericsError, SymMatrix, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("neighbor {neighbor} has non-positive weight {weight}")]
    InvalidWeight { neighbor: usize, weight: f64 },
    #[error("agent {0} state contains a non-finite entry")]
    NonFinite(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// One agent's stacked estimate `[x̂⁽⁰⁾, …, x̂⁽ᴹ⁻¹⁾]`, each block a `K`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    id: usize,
    order: usize,
    dim: usize,
    data: Vec<f64>,
}

impl AgentState {
    pub fn new(id: usize, blocks: &[Vec<f64>]) -> Result<Self, ObserverError> {
        let dim = blocks
            .first()
            .map(Vec::len)
            .ok_or_else(|| ObserverError::Dimension("an agent state needs at least one block".into()))?;
        if dim == 0 || blocks.iter().any(|b| b.len() != dim) {
            return Err(ObserverError::Dimension(
                "all blocks must share a positive length".into(),
            ));
        }
        Self::from_flat(id, blocks.len(), dim, blocks.concat())
    }

    /// Build from block-major flat storage.
    pub fn from_flat(id: usize, order: usize, dim: usize, data: Vec<f64>) -> Result<Self, ObserverError> {
        if order == 0 || dim == 0 || data.len() != order * dim {
            return Err(ObserverError::Dimension(format!(
                "{} entries for {order} blocks of size {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(ObserverError::NonFinite(id));
        }
        Ok(Self { id, order, dim, data })
    }

    pub fn zeros(id: usize, order: usize, dim: usize) -> Self {
        Self {
            id,
            order,
            dim,
            data: vec![0.0; order * dim],
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, m: usize) -> &[f64] {
        &self.data[m * self.dim..(m + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Observation `(Ψᵢ, yᵢ)`; both are exactly zero when the agent has no measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    agent: usize,
    available: bool,
    psi: SymMatrix,
    y: Vec<f64>,
}

impl Measurement {
    pub fn new(agent: usize, psi: SymMatrix, y: Vec<f64>) -> Result<Self, ObserverError> {
        if psi.dim() != y.len() {
            return Err(ObserverError::Dimension(format!(
                "Ψ is {0}x{0} but y has {1} entries",
                psi.dim(),
                y.len()
            )));
        }
        Ok(Self {
            agent,
            available: true,
            psi,
            y,
        })
    }

    pub fn unavailable(agent: usize, dim: usize) -> Self {
        Self {
            agent,
            available: false,
            psi: SymMatrix::zeros(dim),
            y: vec![0.0; dim],
        }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn available(&self) -> bool {
        self.available
    }

    pub fn psi(&self) -> &SymMatrix {
        &self.psi
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }
}

/// Bearing observation: `Ψ = Π_b`, `y = Π_b pᵢ`.
pub fn bearing_measurement(agent: usize, agent_pos: &Vec3, bearing: &Vec3) -> Result<Measurement, ObserverError> {
    let psi = projection_matrix(bearing)?;
    let y = psi.as_matrix().mul_vec(agent_pos)?;
    Measurement::new(agent, psi, y)
}

/// A neighbor's broadcast first block and its edge weight.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEstimate {
    neighbor: usize,
    weight: f64,
    estimate: Vec<f64>,
}

impl NeighborEstimate {
    pub fn new(neighbor: usize, weight: f64, estimate: Vec<f64>) -> Result<Self, ObserverError> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(ObserverError::InvalidWeight { neighbor, weight });
        }
        Ok(Self {
            neighbor,
            weight,
            estimate,
        })
    }

    pub fn neighbor(&self) -> usize {
        self.neighbor
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }
}

/// The first block, which is everything an agent transmits.
pub fn broadcast_payload(state: &AgentState) -> Vec<f64> {
    state.block(0).to_vec()
}

/// Floats sent per broadcast for block dimension `K`.
pub fn payload_floats(dim: usize) -> u64 {
    dim as u64
}

/// `δᵢ = yᵢ − Ψᵢ x̂ᵢ⁽⁰⁾ − α Σⱼ aᵢⱼ (x̂ᵢ⁽⁰⁾ − x̂ⱼ⁽⁰⁾)`.
pub fn correction_term(
    state: &AgentState,
    meas: &Measurement,
    neighbors: &[NeighborEstimate],
    alpha: f64,
) -> Result<Vec<f64>, ObserverError> {
    let k = state.dim();
    let own = state.block(0);
    if meas.dim() != k {
        return Err(ObserverError::Dimension(format!(
            "measurement dimension {} for state blocks of size {k}",
            meas.dim()
        )));
    }
    let mut delta = vec![0.0; k];
    if meas.available {
        let psi = meas.psi.as_matrix();
        for (r, d) in delta.iter_mut().enumerate() {
            let psi_x: f64 = psi.row(r).iter().zip(own).map(|(a, x)| a * x).sum();
            *d = meas.y[r] - psi_x;
        }
    }
    for nb in neighbors {
        if nb.estimate.len() != k {
            return Err(ObserverError::Dimension(format!(
                "neighbor {} sent {} floats, expected {k}",
                nb.neighbor,
                nb.estimate.len()
            )));
        }
        let aw = alpha * nb.weight;
        for r in 0..k {
            delta[r] -= aw * (own[r] - nb.estimate[r]);
        }
    }
    Ok(delta)
}

/// Time-derivative of the stacked estimate: `x̂⁽ᵐ⁺¹⁾ + k_{m+1} δ`, with the top block `k_M δ`.
pub fn observer_derivative(
    state: &AgentState,
    delta: &[f64],
    gains: &ObserverGains,
) -> Result<AgentState, ObserverError> {
    let (m, k) = (state.order(), state.dim());
    if gains.order() != m {
        return Err(ObserverError::Dimension(format!(
            "gains of order {} for a state of order {m}",
            gains.order()
        )));
    }
    if delta.len() != k {
        return Err(ObserverError::Dimension(format!(
            "δ has {} entries, expected {k}",
            delta.len()
        )));
    }
    let mut out = vec![0.0; m * k];
    for b in 0..m {
        let kb = gains.k()[b];
        for e in 0..k {
            let next = if b + 1 < m { state.data[(b + 1) * k + e] } else { 0.0 };
            out[b * k + e] = next + kb * delta[e];
        }
    }
    Ok(AgentState {
        id: state.id,
        order: m,
        dim: k,
        data: out,
    })
}
