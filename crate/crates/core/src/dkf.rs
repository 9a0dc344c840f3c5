//! Consensus-on-information distributed Kalman filter, used as a comparison
//! baseline for a constant-velocity target.
//!
//! Each agent keeps an information pair `(Ω, q)` over `[p, v]`, fuses its
//! bearing observation in `(Ψ, y)` form, averages pairs with its neighbors
//! for a fixed number of rounds and then predicts through the discretized
//! double integrator.

use thiserror::Error;

use crate::graph::CommGraph;
use crate::numerics::{norm, Matrix, NumericsError, SymMatrix};
use crate::observer::Measurement;
use crate::sim::{
    dkf_floats_per_step, initial_positions, max_pairwise_distance, MeasurementSource, Scenario, SimError, SPACE_DIM,
};

/// `[p, v]` for a 3-D constant-velocity model.
pub const STATE_DIM: usize = 2 * SPACE_DIM;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DkfError {
    #[error("agent {agent}: information matrix is singular, not enough information to extract an estimate")]
    Singular { agent: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid filter parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DkfParams {
    /// Scale of the continuous process-noise density `Q = q I₆`.
    pub process_noise: f64,
    /// Scale of `R = r I₃`.
    pub measurement_noise: f64,
    pub consensus_iters: usize,
    /// Scale of `Ω(t₀) = ω I₆`.
    pub initial_information: f64,
}

impl Default for DkfParams {
    fn default() -> Self {
        Self {
            process_noise: 1.0,
            measurement_noise: 0.01,
            consensus_iters: 2,
            initial_information: 1.0,
        }
    }
}

impl DkfParams {
    fn validate(&self) -> Result<(), DkfError> {
        for (name, v) in [
            ("process_noise", self.process_noise),
            ("measurement_noise", self.measurement_noise),
            ("initial_information", self.initial_information),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DkfError::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        if self.consensus_iters == 0 {
            return Err(DkfError::InvalidParams(
                "at least one consensus iteration is required".into(),
            ));
        }
        Ok(())
    }
}

/// Information matrix `Ω` and vector `q = Ω x`.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationPair {
    omega: SymMatrix,
    q: Vec<f64>,
}

impl InformationPair {
    pub fn new(omega: SymMatrix, q: Vec<f64>) -> Result<Self, DkfError> {
        if omega.dim() != q.len() {
            return Err(DkfError::Dimension(format!(
                "Ω is {0}x{0}, q has {1} entries",
                omega.dim(),
                q.len()
            )));
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite.into());
        }
        Ok(Self { omega, q })
    }

    pub fn from_estimate(x: &[f64], omega: SymMatrix) -> Result<Self, DkfError> {
        let q = omega.as_matrix().mul_vec(x)?;
        Self::new(omega, q)
    }

    pub fn omega(&self) -> &SymMatrix {
        &self.omega
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Payload size of one transmission.
    pub fn floats(&self) -> u64 {
        let d = self.q.len();
        (d * d + d) as u64
    }

    /// `Ω⁻¹ q`.
    pub fn estimate(&self, agent: usize) -> Result<Vec<f64>, DkfError> {
        self.omega.spd_solve(&self.q).map_err(|_| DkfError::Singular { agent })
    }
}

/// Metropolis weights `1/(1 + max(dᵢ, dⱼ))` on edges, remainder on the diagonal.
pub fn metropolis_weights(graph: &CommGraph) -> Matrix {
    let n = graph.n_agents();
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        let mut total = 0.0;
        for (j, _) in graph.neighbors(i) {
            let v = 1.0 / (1.0 + graph.degree(i).max(graph.degree(j)) as f64);
            w[(i, j)] = v;
            total += v;
        }
        w[(i, i)] = 1.0 - total;
    }
    w
}

/// One round of weighted averaging of every pair.
pub fn consensus_round(pairs: &[InformationPair], weights: &Matrix) -> Result<Vec<InformationPair>, DkfError> {
    let n = pairs.len();
    if weights.rows() != n || weights.cols() != n {
        return Err(DkfError::Dimension(format!(
            "{n} pairs for a {}x{} weight matrix",
            weights.rows(),
            weights.cols()
        )));
    }
    let d = pairs[0].q.len();
    (0..n)
        .map(|i| {
            let mut omega = SymMatrix::zeros(d);
            let mut q = vec![0.0; d];
            for (j, p) in pairs.iter().enumerate() {
                let w = weights[(i, j)];
                if w == 0.0 {
                    continue;
                }
                omega = omega.add(&p.omega.scale(w))?;
                for (acc, x) in q.iter_mut().zip(&p.q) {
                    *acc += w * x;
                }
            }
            InformationPair::new(omega, q)
        })
        .collect()
}

/// Fuse `(Ψ, y)` with `H = [Ψ, 0]` and `R = r I`: `Ω += HᵀR⁻¹H`, `q += HᵀR⁻¹y`.
pub fn measurement_update(pair: &InformationPair, meas: &Measurement, r: f64) -> Result<InformationPair, DkfError> {
    if !meas.available() {
        return Ok(pair.clone());
    }
    let k = meas.dim();
    let psi = meas.psi().as_matrix();
    let psi_t_psi = psi.transpose().matmul(psi)?;
    let mut omega = pair.omega.as_matrix().clone();
    let mut q = pair.q.clone();
    for a in 0..k {
        for b in 0..k {
            omega[(a, b)] += psi_t_psi[(a, b)] / r;
        }
        let hy: f64 = (0..k).map(|c| psi[(c, a)] * meas.y()[c]).sum();
        q[a] += hy / r;
    }
    InformationPair::new(SymMatrix::new(omega)?, q)
}

/// Transition `F = [[I, hI], [0, I]]` and discretized noise for density `q I₆`.
fn discretization(h: f64, q: f64) -> (Matrix, SymMatrix) {
    let k = SPACE_DIM;
    let eye = Matrix::identity(k);
    let mut f = Matrix::identity(STATE_DIM);
    f.set_block(0, k, &eye.scale(h));
    let mut qd = Matrix::zeros(STATE_DIM, STATE_DIM);
    qd.set_block(0, 0, &eye.scale(q * (h + h * h * h / 3.0)));
    qd.set_block(0, k, &eye.scale(q * h * h / 2.0));
    qd.set_block(k, 0, &eye.scale(q * h * h / 2.0));
    qd.set_block(k, k, &eye.scale(q * h));
    (f, SymMatrix::new(qd).expect("finite"))
}

/// Time update through the constant-velocity model.
pub fn predict(pair: &InformationPair, agent: usize, h: f64, process_noise: f64) -> Result<InformationPair, DkfError> {
    let (f, qd) = discretization(h, process_noise);
    let cov = pair.omega.spd_inverse().map_err(|_| DkfError::Singular { agent })?;
    let x = pair.estimate(agent)?;
    let x_pred = f.mul_vec(&x)?;
    let cov_pred = SymMatrix::new(f.matmul(cov.as_matrix())?.matmul(&f.transpose())?)?.add(&qd)?;
    let omega = cov_pred.spd_inverse().map_err(|_| DkfError::Singular { agent })?;
    InformationPair::from_estimate(&x_pred, omega)
}

/// Update, consensus and prediction for every agent; returns the predicted pairs and estimates.
pub fn dkf_step(
    pairs: &[InformationPair],
    measurements: &[Measurement],
    params: &DkfParams,
    graph: &CommGraph,
    h: f64,
) -> Result<(Vec<InformationPair>, Vec<Vec<f64>>), DkfError> {
    params.validate()?;
    if pairs.len() != graph.n_agents() || measurements.len() != pairs.len() {
        return Err(DkfError::Dimension(format!(
            "{} pairs, {} measurements, {} agents",
            pairs.len(),
            measurements.len(),
            graph.n_agents()
        )));
    }
    let mut updated = pairs
        .iter()
        .zip(measurements)
        .map(|(p, m)| measurement_update(p, m, params.measurement_noise))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = metropolis_weights(graph);
    for _ in 0..params.consensus_iters {
        updated = consensus_round(&updated, &weights)?;
    }
    let predicted = updated
        .iter()
        .enumerate()
        .map(|(i, p)| predict(p, i, h, params.process_noise))
        .collect::<Result<Vec<_>, _>>()?;
    let estimates = predicted
        .iter()
        .enumerate()
        .map(|(i, p)| p.estimate(i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((predicted, estimates))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DkfRow {
    pub t: f64,
    pub position_errors: Vec<f64>,
    pub disagreement: f64,
    pub comm_floats: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DkfLog {
    pub rows: Vec<DkfRow>,
    pub bearing_checksum: String,
}

impl DkfLog {
    pub fn last(&self) -> &DkfRow {
        self.rows.last().expect("a DKF log always holds the initial row")
    }
}

fn dkf_row(t: f64, estimates: &[Vec<f64>], truth: &[f64; 3], comm: u64) -> DkfRow {
    let position_errors = estimates
        .iter()
        .map(|x| norm(&[x[0] - truth[0], x[1] - truth[1], x[2] - truth[2]]))
        .collect();
    let firsts: Vec<&[f64]> = estimates.iter().map(|x| &x[..SPACE_DIM]).collect();
    DkfRow {
        t,
        position_errors,
        disagreement: max_pairwise_distance(&firsts),
        comm_floats: vec![comm; estimates.len()],
    }
}

/// Run the baseline over the scenario, consuming the same bearing stream as the observer.
pub fn run_dkf(scenario: &Scenario, params: &DkfParams) -> Result<DkfLog, DkfError> {
    params.validate()?;
    let graph = scenario.validate()?;
    let h = scenario.step;
    let mut source = MeasurementSource::new(scenario)?;
    let per_step = dkf_floats_per_step(STATE_DIM, params.consensus_iters);

    let omega0 = SymMatrix::identity(STATE_DIM).scale(params.initial_information);
    let mut pairs = initial_positions(scenario)?
        .iter()
        .map(|p| {
            let mut x = vec![0.0; STATE_DIM];
            x[..SPACE_DIM].copy_from_slice(p);
            InformationPair::from_estimate(&x, omega0.clone())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut estimates: Vec<Vec<f64>> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| p.estimate(i))
        .collect::<Result<_, _>>()?;

    let mut rows = vec![dkf_row(0.0, &estimates, &source.truth().position(0.0), 0)];
    for step in 0..scenario.n_steps() {
        let t = step as f64 * h;
        let noise = source.begin_step(t)?;
        let meas = source.measurements(t, &noise)?;
        (pairs, estimates) = dkf_step(&pairs, &meas, params, &graph, h)?;
        let t_next = (step + 1) as f64 * h;
        rows.push(dkf_row(
            t_next,
            &estimates,
            &source.truth().position(t_next),
            per_step * (step as u64 + 1),
        ));
    }
    Ok(DkfLog {
        rows,
        bearing_checksum: source.checksum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cycle_edges, Edge};
    use crate::observer::bearing_measurement;

    fn pair(seed: f64) -> InformationPair {
        let mut m = Matrix::identity(STATE_DIM);
        for i in 0..STATE_DIM {
            m[(i, i)] = 1.0 + seed * (i as f64 + 1.0);
        }
        m[(0, 3)] = 0.1 * seed;
        m[(3, 0)] = 0.1 * seed;
        let q = (0..STATE_DIM).map(|i| seed - i as f64).collect();
        InformationPair::new(SymMatrix::new(m).unwrap(), q).unwrap()
    }

    fn complete(n: usize) -> CommGraph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push(Edge(i, j, 1.0));
            }
        }
        CommGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn metropolis_on_complete_graph_averages_in_one_round() {
        let g = complete(4);
        let pairs: Vec<_> = (0..4).map(|i| pair(i as f64)).collect();
        let out = consensus_round(&pairs, &metropolis_weights(&g)).unwrap();
        for p in &out[1..] {
            assert!(p.omega.sub(&out[0].omega).unwrap().as_matrix().max_abs() < 1e-12);
            assert!(p.q.iter().zip(&out[0].q).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let mean_q0: f64 = pairs.iter().map(|p| p.q[0]).sum::<f64>() / 4.0;
        assert!((out[0].q[0] - mean_q0).abs() < 1e-12);
    }

    #[test]
    fn metropolis_weights_are_doubly_stochastic() {
        let g =
            CommGraph::from_edges(5, &[Edge(0, 1, 1.0), Edge(1, 2, 1.0), Edge(1, 3, 1.0), Edge(3, 4, 1.0)]).unwrap();
        let w = metropolis_weights(&g);
        for i in 0..5 {
            assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!((w.column(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn consensus_preserves_information_sum() {
        let g = CommGraph::from_edges(4, &cycle_edges(4)).unwrap();
        let pairs: Vec<_> = (0..4).map(|i| pair(0.5 * i as f64)).collect();
        let out = consensus_round(&pairs, &metropolis_weights(&g)).unwrap();
        let sum = |ps: &[InformationPair]| {
            ps.iter()
                .fold(SymMatrix::zeros(STATE_DIM), |acc, p| acc.add(&p.omega).unwrap())
        };
        assert!(sum(&pairs).sub(&sum(&out)).unwrap().as_matrix().max_abs() < 1e-9);
    }

    #[test]
    fn measurement_update_adds_projection_information() {
        let p = InformationPair::from_estimate(&[0.0; 6], SymMatrix::identity(6)).unwrap();
        let m = bearing_measurement(0, &[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0]).unwrap();
        let u = measurement_update(&p, &m, 0.01).unwrap();
        assert!((u.omega[(0, 0)] - 101.0).abs() < 1e-12);
        assert!((u.omega[(2, 2)] - 1.0).abs() < 1e-12);
        assert!((u.q[0] - 100.0).abs() < 1e-12 && (u.q[1] - 200.0).abs() < 1e-12 && u.q[2].abs() < 1e-12);
        let lost = measurement_update(&p, &Measurement::unavailable(0, 3), 0.01).unwrap();
        assert_eq!(lost, p);
    }

    #[test]
    fn prediction_moves_position_by_velocity() {
        let x = [1.0, 2.0, 3.0, 0.5, -1.0, 2.0];
        let p = InformationPair::from_estimate(&x, SymMatrix::identity(6).scale(4.0)).unwrap();
        let next = predict(&p, 0, 0.1, 1.0).unwrap();
        let est = next.estimate(0).unwrap();
        let expected = [1.05, 1.9, 3.2, 0.5, -1.0, 2.0];
        assert!(est.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(next.omega().min_eigenvalue().unwrap() > 0.0);
    }

    #[test]
    fn singular_information_is_reported() {
        let p = InformationPair::new(SymMatrix::zeros(6), vec![0.0; 6]).unwrap();
        assert_eq!(p.estimate(2), Err(DkfError::Singular { agent: 2 }));
    }

    #[test]
    fn payload_size() {
        assert_eq!(pair(0.0).floats(), 42);
    }
}
