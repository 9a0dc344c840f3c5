//! Deterministic simulation of the observer network against a moving target.
//!
//! Truth is an integrator chain (optionally driven at the top block), agents
//! follow prescribed trajectories and measure rotated-noise bearings, and all
//! observers are integrated jointly with RK4. Each step records estimation
//! errors, the transformed-error Lyapunov value against its exponential
//! envelope, the spatial-excitation eigenvalue and communication counters.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gain_design::{
    build_qbar, build_transformation, certify, mean_observation_lambda_min, CertificationReport, DesignError,
    ObserverGains, TransformationP,
};
use crate::graph::{CommGraph, Edge, GraphError};
use crate::numerics::{
    cross3, dot3, norm, norm3, projection_matrix, sub3, tol, try_rk4_step, NumericsError, SymMatrix, Vec3,
};
use crate::observer::{
    bearing_measurement, broadcast_payload, correction_term, observer_derivative, payload_floats, AgentState,
    Measurement, NeighborEstimate, ObserverError,
};

/// Block dimension of the bearing problem.
pub const SPACE_DIM: usize = 3;
pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_INIT_RANGE: (f64, f64) = (5.0, 30.0);
const INIT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("agent {agent} coincides with the target at t = {t} s; bearing undefined")]
    CoincidentPositions { agent: usize, t: f64 },
    #[error("state diverged at t = {t} s")]
    Diverged { t: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub position: Vec3,
}

/// Agent position over time.
#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Static(Vec3),
    /// Linear interpolation, held constant outside the sampled range.
    Waypoints(Vec<Waypoint>),
}

impl Trajectory {
    pub fn position(&self, t: f64) -> Vec3 {
        match self {
            Trajectory::Static(p) => *p,
            Trajectory::Waypoints(w) => {
                let first = w[0];
                if t <= first.t {
                    return first.position;
                }
                for pair in w.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    if t <= b.t {
                        let s = (t - a.t) / (b.t - a.t);
                        return std::array::from_fn(|i| a.position[i] + s * (b.position[i] - a.position[i]));
                    }
                }
                w[w.len() - 1].position
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let finite = |p: &Vec3| p.iter().all(|x| x.is_finite());
        match self {
            Trajectory::Static(p) if finite(p) => Ok(()),
            Trajectory::Static(_) => Err(SimError::InvalidScenario("non-finite agent position".into())),
            Trajectory::Waypoints(w) => {
                if w.is_empty() {
                    return Err(SimError::InvalidScenario("empty waypoint list".into()));
                }
                if w.iter().any(|p| !p.t.is_finite() || !finite(&p.position)) {
                    return Err(SimError::InvalidScenario("non-finite waypoint".into()));
                }
                if w.windows(2).any(|p| p[1].t <= p[0].t) {
                    return Err(SimError::InvalidScenario(
                        "waypoint times must increase strictly".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// `u(t) = constant + amplitude · sin(ω t)`, applied to the top truth block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSignal {
    pub constant: Vec3,
    pub amplitude: Vec3,
    pub omega: f64,
}

impl InputSignal {
    pub fn value(&self, t: f64) -> Vec3 {
        let s = (self.omega * t).sin();
        std::array::from_fn(|i| self.constant[i] + self.amplitude[i] * s)
    }
}

/// Measurement outage over `[start, end)`, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossInterval {
    pub start: f64,
    pub end: f64,
}

impl LossInterval {
    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub trajectory: Trajectory,
    pub loss: Vec<LossInterval>,
}

impl AgentSpec {
    pub fn fixed(position: Vec3) -> Self {
        Self {
            trajectory: Trajectory::Static(position),
            loss: Vec::new(),
        }
    }

    pub fn measuring(&self, t: f64) -> bool {
        !self.loss.iter().any(|l| l.contains(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    /// Initial blocks `x_T⁽⁰⁾(t₀) …`; their count is the true chain order.
    pub blocks: Vec<Vec3>,
    pub input: Option<InputSignal>,
}

/// How observers are initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMode {
    /// Position `pᵢ + rᵢ bᵢ(t₀)` with `rᵢ` uniform in the range; higher blocks zero.
    Bearing { range: (f64, f64) },
    /// Every agent starts from the mean of the bearing-based positions.
    Average { range: (f64, f64) },
    /// Exact truth (zero initial error).
    Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub target: TargetSpec,
    pub agents: Vec<AgentSpec>,
    pub edges: Vec<Edge>,
    pub gains: ObserverGains,
    /// Bearing rotation-noise standard deviation, degrees.
    pub noise_std_deg: f64,
    pub init: InitMode,
    pub step: f64,
    pub duration: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn order(&self) -> usize {
        self.gains.order()
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.step).round() as usize
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Check every field and build the communication graph.
    pub fn validate(&self) -> Result<CommGraph, SimError> {
        let bad = |s: String| Err(SimError::InvalidScenario(s));
        if self.agents.len() < 2 {
            return bad(format!("at least 2 agents are required, got {}", self.agents.len()));
        }
        if self.target.blocks.is_empty() {
            return bad("the target needs at least an initial position".into());
        }
        if self.target.blocks.iter().flatten().any(|x| !x.is_finite()) {
            return bad("non-finite target initial state".into());
        }
        if let Some(u) = &self.target.input {
            if u.constant
                .iter()
                .chain(&u.amplitude)
                .chain([&u.omega])
                .any(|x| !x.is_finite())
            {
                return bad("non-finite input parameters".into());
            }
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step {} must be positive", self.step));
        }
        if !(self.duration >= self.step && self.duration.is_finite()) {
            return bad(format!("duration {} must be at least one step", self.duration));
        }
        if !(self.noise_std_deg >= 0.0 && self.noise_std_deg.is_finite()) {
            return bad(format!("noise std {} must be non-negative", self.noise_std_deg));
        }
        if let InitMode::Bearing { range: (lo, hi) } | InitMode::Average { range: (lo, hi) } = self.init {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return bad(format!("initial range [{lo}, {hi}] is invalid"));
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            a.trajectory.validate()?;
            for l in &a.loss {
                if l.start.is_nan() || l.end.is_nan() || l.start >= l.end {
                    return bad(format!(
                        "agent {i} has an empty or invalid loss interval [{}, {})",
                        l.start, l.end
                    ));
                }
            }
        }
        Ok(CommGraph::from_edges(self.agents.len(), &self.edges)?)
    }

    /// Noiseless observation blocks at `t`, zero for agents without a measurement.
    pub fn observation_blocks(&self, t: f64) -> Result<Vec<SymMatrix>, SimError> {
        let truth = TruthModel::new(&self.target, self.step, t + self.step)?;
        self.observation_blocks_with(&truth, t)
    }

    fn observation_blocks_with(&self, truth: &TruthModel, t: f64) -> Result<Vec<SymMatrix>, SimError> {
        let pt = truth.position(t);
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if a.measuring(t) {
                    let b = true_bearing(&pt, &a.trajectory.position(t)).map_err(|_| coincident(i, t))?;
                    Ok(projection_matrix(&b)?)
                } else {
                    Ok(SymMatrix::zeros(SPACE_DIM))
                }
            })
            .collect()
    }
}

fn coincident(agent: usize, t: f64) -> SimError {
    SimError::CoincidentPositions { agent, t }
}

/// Certify the scenario's gains with the observation geometry at `t₀`.
pub fn certify_scenario(scenario: &Scenario) -> Result<CertificationReport, SimError> {
    let graph = scenario.validate()?;
    let blocks = scenario.observation_blocks(0.0)?;
    Ok(certify(&scenario.gains, &graph, &blocks)?)
}

fn chain_derivative(state: &[f64], order: usize, u: Option<Vec3>) -> Vec<f64> {
    let k = SPACE_DIM;
    let mut d = vec![0.0; state.len()];
    d[..(order - 1) * k].copy_from_slice(&state[k..]);
    if let Some(u) = u {
        d[(order - 1) * k..].copy_from_slice(&u);
    }
    d
}

fn to_blocks(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks(SPACE_DIM).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Truth blocks at time `t`.
///
/// Without input this is the exact polynomial flow. With input the chain is
/// integrated by RK4 with step `h` (the final step shortened to land on `t`).
pub fn propagate_truth(initial_blocks: &[Vec3], t: f64, input: Option<&InputSignal>, h: f64) -> Vec<Vec3> {
    let order = initial_blocks.len();
    match input {
        None => (0..order)
            .map(|m| {
                let mut out = [0.0; 3];
                let mut coeff = 1.0;
                for (j, r) in (m..order).enumerate() {
                    if j > 0 {
                        coeff *= t / j as f64;
                    }
                    for e in 0..3 {
                        out[e] += initial_blocks[r][e] * coeff;
                    }
                }
                out
            })
            .collect(),
        Some(u) => {
            let mut state: Vec<f64> = initial_blocks.concat();
            let mut s = 0.0;
            while s < t {
                let step = h.min(t - s);
                state = try_rk4_step::<_, NumericsError>(
                    |tt, x| Ok(chain_derivative(x, order, Some(u.value(tt)))),
                    s,
                    &state,
                    step,
                )
                .expect("chain derivative is finite");
                s += step;
                if t - s < 1e-12 * t.max(1.0) {
                    break;
                }
            }
            to_blocks(&state)
        }
    }
}

/// Truth lookup at integration stage times.
#[derive(Debug, Clone)]
pub(crate) struct TruthModel {
    blocks: Vec<Vec3>,
    half_step: f64,
    samples: Option<Vec<Vec<Vec3>>>,
}

impl TruthModel {
    pub(crate) fn new(target: &TargetSpec, h: f64, horizon: f64) -> Result<Self, SimError> {
        let half_step = 0.5 * h;
        let samples = match &target.input {
            None => None,
            Some(u) => {
                let order = target.blocks.len();
                let n = (horizon / half_step).ceil() as usize + 1;
                let mut state: Vec<f64> = target.blocks.concat();
                let mut out = Vec::with_capacity(n + 1);
                out.push(to_blocks(&state));
                for i in 0..n {
                    state = try_rk4_step::<_, NumericsError>(
                        |tt, x| Ok(chain_derivative(x, order, Some(u.value(tt)))),
                        i as f64 * half_step,
                        &state,
                        half_step,
                    )?;
                    out.push(to_blocks(&state));
                }
                Some(out)
            }
        };
        Ok(Self {
            blocks: target.blocks.clone(),
            half_step,
            samples,
        })
    }

    pub(crate) fn state(&self, t: f64) -> Vec<Vec3> {
        match &self.samples {
            None => propagate_truth(&self.blocks, t, None, 0.0),
            Some(s) => {
                let idx = ((t / self.half_step).round() as usize).min(s.len() - 1);
                s[idx].clone()
            }
        }
    }

    pub(crate) fn position(&self, t: f64) -> Vec3 {
        match &self.samples {
            None => propagate_truth(&self.blocks, t, None, 0.0)[0],
            Some(_) => self.state(t)[0],
        }
    }
}

/// Unit vector from the agent to the target.
pub fn true_bearing(p_target: &Vec3, p_agent: &Vec3) -> Result<Vec3, SimError> {
    let d = sub3(p_target, p_agent);
    let n = norm3(&d);
    if !(n > 1e-12) {
        return Err(SimError::CoincidentPositions { agent: 0, t: f64::NAN });
    }
    Ok([d[0] / n, d[1] / n, d[2] / n])
}

/// One draw of the rotation noise: angle `θ` about the in-plane axis at angle `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingNoise {
    pub theta: f64,
    pub phi: f64,
}

impl BearingNoise {
    pub const NONE: BearingNoise = BearingNoise { theta: 0.0, phi: 0.0 };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, angle_std_deg: f64) -> Self {
        let normal = Normal::new(0.0, angle_std_deg.to_radians()).expect("non-negative std");
        let theta = normal.sample(rng);
        let phi = rng.random::<f64>() * std::f64::consts::TAU;
        Self { theta, phi }
    }

    /// Rotate the unit vector `b` by `θ` about an axis orthogonal to it.
    pub fn apply(&self, b: &Vec3) -> Vec3 {
        // reference axis least aligned with b
        let mut e = [0.0; 3];
        let idx = (0..3).min_by(|&i, &j| b[i].abs().total_cmp(&b[j].abs())).unwrap_or(0);
        e[idx] = 1.0;
        let eb = dot3(&e, b);
        let mut u1 = std::array::from_fn(|i| e[i] - eb * b[i]);
        let n1 = norm3(&u1);
        u1 = [u1[0] / n1, u1[1] / n1, u1[2] / n1];
        let u2 = cross3(b, &u1);
        let (sp, cp) = self.phi.sin_cos();
        let axis: Vec3 = std::array::from_fn(|i| cp * u1[i] + sp * u2[i]);
        let c = cross3(&axis, b);
        let (st, ct) = self.theta.sin_cos();
        let out: Vec3 = std::array::from_fn(|i| ct * b[i] + st * c[i]);
        let n = norm3(&out);
        [out[0] / n, out[1] / n, out[2] / n]
    }
}

/// True bearing rotated by `θ ~ N(0, σ)` about a uniformly random orthogonal axis.
pub fn noisy_bearing<R: Rng + ?Sized>(
    p_target: &Vec3,
    p_agent: &Vec3,
    angle_std_deg: f64,
    rng: &mut R,
) -> Result<Vec3, SimError> {
    let b = true_bearing(p_target, p_agent)?;
    Ok(BearingNoise::sample(rng, angle_std_deg).apply(&b))
}

/// Floats broadcast by one agent during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommEvent {
    pub agent: usize,
    pub floats: u64,
}

pub fn comm_accounting(n_agents: usize, events: &[CommEvent]) -> Vec<u64> {
    let mut totals = vec![0u64; n_agents];
    for e in events {
        totals[e.agent] += e.floats;
    }
    totals
}

/// Observer payload per agent per step.
pub fn observer_floats_per_step(block_dim: usize) -> u64 {
    payload_floats(block_dim)
}

/// Information-pair payload per agent per step: `(d² + d)` per consensus round.
pub fn dkf_floats_per_step(state_dim: usize, consensus_iters: usize) -> u64 {
    ((state_dim * state_dim + state_dim) * consensus_iters) as u64
}

/// `V = ½‖P x̃‖²` and its exponential envelope.
#[derive(Debug, Clone)]
pub struct LyapunovMonitor {
    transform: TransformationP,
    decay: f64,
}

impl LyapunovMonitor {
    /// `block_dim` is `W = K·N`; `x̃` is stacked block-major.
    pub fn new(gains: &ObserverGains, block_dim: usize) -> Result<Self, SimError> {
        let decay = if gains.order() == 1 {
            2.0 * gains.delta() * gains.k_at(1)
        } else {
            build_qbar(gains)?.min_eigenvalue()?
        };
        Ok(Self {
            transform: build_transformation(gains, block_dim),
            decay,
        })
    }

    /// Exponent rate of the envelope on `V`.
    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn value(&self, xtilde: &[f64]) -> f64 {
        0.5 * self.transform.apply(xtilde).iter().map(|x| x * x).sum::<f64>()
    }

    pub fn bound(&self, t: f64, t0: f64, v0: f64) -> f64 {
        v0 * (-self.decay * (t - t0)).exp()
    }
}

pub fn lyapunov_monitor(
    xtilde: &[f64],
    gains: &ObserverGains,
    t: f64,
    t0: f64,
    v0: f64,
) -> Result<(f64, f64), SimError> {
    let m = gains.order();
    if xtilde.is_empty() || !xtilde.len().is_multiple_of(m) {
        return Err(SimError::InvalidScenario(format!(
            "stacked error of length {} does not split into {m} blocks",
            xtilde.len()
        )));
    }
    let mon = LyapunovMonitor::new(gains, xtilde.len() / m)?;
    Ok((mon.value(xtilde), mon.bound(t, t0, v0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// `errors[agent][block]`, in the units of the block.
    pub errors: Vec<Vec<f64>>,
    pub v: f64,
    pub v_bound: f64,
    pub lambda_min_spatial: f64,
    pub disagreement: f64,
    /// Cumulative floats broadcast, per agent.
    pub comm_floats: Vec<u64>,
    /// Noiseless bearings at `t`.
    pub bearings: Vec<Vec3>,
    pub available: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub n_agents: usize,
    pub order: usize,
    pub rows: Vec<LogRow>,
    /// SHA-256 over the noisy bearings consumed at each step start.
    pub bearing_checksum: String,
    pub final_estimates: Vec<AgentState>,
}

impl RunLog {
    pub fn csv_header(n_agents: usize, order: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n_agents).map(|i| format!("err_pos_agent{i}")));
        for m in 1..order {
            cols.extend((1..=n_agents).map(|i| format!("err_b{m}_agent{i}")));
        }
        cols.extend(["V", "V_bound", "lambda_min_spatial", "disagreement", "comm_floats"].map(String::from));
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::csv_header(self.n_agents, self.order))?;
        for row in &self.rows {
            let mut fields = vec![row.t.to_string()];
            for m in 0..self.order {
                fields.extend(row.errors.iter().map(|e| e[m].to_string()));
            }
            fields.push(row.v.to_string());
            fields.push(row.v_bound.to_string());
            fields.push(row.lambda_min_spatial.to_string());
            fields.push(row.disagreement.to_string());
            fields.push(row.comm_floats[0].to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn last(&self) -> &LogRow {
        self.rows.last().expect("a run log always holds the initial row")
    }

    /// Steps where `V` exceeds its envelope by more than `slack`.
    pub fn envelope_violations(&self, slack: f64) -> usize {
        self.rows.iter().filter(|r| r.v > r.v_bound + slack).count()
    }

    pub fn max_position_error(&self, row: &LogRow) -> f64 {
        row.errors.iter().map(|e| e[0]).fold(0.0, f64::max)
    }
}

/// Per-agent initial position estimates.
pub fn initial_positions(scenario: &Scenario) -> Result<Vec<Vec3>, SimError> {
    let pt = scenario.target.blocks[0];
    let (lo, hi) = match scenario.init {
        InitMode::Truth => return Ok(vec![pt; scenario.n_agents()]),
        InitMode::Bearing { range } | InitMode::Average { range } => range,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(INIT_STREAM);
    let along_bearing = scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let p = a.trajectory.position(0.0);
            let b = true_bearing(&pt, &p).map_err(|_| coincident(i, 0.0))?;
            let r = rng.random_range(lo..=hi);
            Ok(std::array::from_fn(|e| p[e] + r * b[e]))
        })
        .collect::<Result<Vec<Vec3>, SimError>>()?;
    if let InitMode::Average { .. } = scenario.init {
        let n = along_bearing.len() as f64;
        let mean: Vec3 = std::array::from_fn(|e| along_bearing.iter().map(|p| p[e]).sum::<f64>() / n);
        return Ok(vec![mean; along_bearing.len()]);
    }
    Ok(along_bearing)
}

/// Shared per-step measurement machinery for every estimator.
pub(crate) struct MeasurementSource<'a> {
    scenario: &'a Scenario,
    truth: TruthModel,
    rng: ChaCha8Rng,
    hasher: Sha256,
}

impl<'a> MeasurementSource<'a> {
    pub(crate) fn new(scenario: &'a Scenario) -> Result<Self, SimError> {
        let truth = TruthModel::new(&scenario.target, scenario.step, scenario.duration + scenario.step)?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(NOISE_STREAM);
        Ok(Self {
            scenario,
            truth,
            rng,
            hasher: Sha256::new(),
        })
    }

    pub(crate) fn truth(&self) -> &TruthModel {
        &self.truth
    }

    /// Draw this step's noise for every agent and hash the bearings seen at `t`.
    pub(crate) fn begin_step(&mut self, t: f64) -> Result<Vec<BearingNoise>, SimError> {
        let noise: Vec<BearingNoise> = (0..self.scenario.n_agents())
            .map(|_| BearingNoise::sample(&mut self.rng, self.scenario.noise_std_deg))
            .collect();
        for b in self.noisy_bearings(t, &noise)? {
            for x in b {
                self.hasher.update(x.to_le_bytes());
            }
        }
        Ok(noise)
    }

    pub(crate) fn noisy_bearings(&self, t: f64, noise: &[BearingNoise]) -> Result<Vec<Vec3>, SimError> {
        let pt = self.truth.position(t);
        self.scenario
            .agents
            .iter()
            .zip(noise)
            .enumerate()
            .map(|(i, (a, n))| {
                let b = true_bearing(&pt, &a.trajectory.position(t)).map_err(|_| coincident(i, t))?;
                Ok(n.apply(&b))
            })
            .collect()
    }

    pub(crate) fn measurements(&self, t: f64, noise: &[BearingNoise]) -> Result<Vec<Measurement>, SimError> {
        let bearings = self.noisy_bearings(t, noise)?;
        self.scenario
            .agents
            .iter()
            .zip(bearings)
            .enumerate()
            .map(|(i, (a, b))| {
                if a.measuring(t) {
                    Ok(bearing_measurement(i, &a.trajectory.position(t), &b)?)
                } else {
                    Ok(Measurement::unavailable(i, SPACE_DIM))
                }
            })
            .collect()
    }

    pub(crate) fn checksum(&self) -> String {
        self.hasher
            .clone()
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub(crate) fn max_pairwise_distance(points: &[&[f64]]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
            worst = worst.max(norm(&d));
        }
    }
    worst
}

fn check_divergence(state: &[f64], t: f64) -> Result<(), SimError> {
    if state.iter().any(|x| !x.is_finite() || x.abs() > tol::DIVERGENCE) {
        return Err(SimError::Diverged { t });
    }
    Ok(())
}

/// Integrate the observer network over the scenario horizon.
pub fn run(scenario: &Scenario) -> Result<RunLog, SimError> {
    let graph = scenario.validate()?;
    let (n, m, k) = (scenario.n_agents(), scenario.order(), SPACE_DIM);
    let h = scenario.step;
    let gains = &scenario.gains;
    let mut source = MeasurementSource::new(scenario)?;
    let monitor = LyapunovMonitor::new(gains, k * n)?;
    let per_step = observer_floats_per_step(k);

    let mut state = vec![0.0; n * m * k];
    match scenario.init {
        InitMode::Truth => {
            let truth = source.truth().state(0.0);
            for i in 0..n {
                for b in 0..m.min(truth.len()) {
                    state[(i * m + b) * k..(i * m + b + 1) * k].copy_from_slice(&truth[b]);
                }
            }
        }
        InitMode::Bearing { .. } | InitMode::Average { .. } => {
            for (i, p) in initial_positions(scenario)?.iter().enumerate() {
                state[i * m * k..i * m * k + k].copy_from_slice(p);
            }
        }
    }

    let mut rows = Vec::with_capacity(scenario.n_steps() + 1);
    let mut v0 = 0.0;
    let record = |truth: &TruthModel, t: f64, state: &[f64], step: usize, v0: &mut f64| -> Result<LogRow, SimError> {
        let truth = truth.state(t);
        let zero = [0.0; 3];
        let mut errors = vec![vec![0.0; m]; n];
        let mut xtilde = vec![0.0; n * m * k];
        for i in 0..n {
            for b in 0..m {
                let tb = truth.get(b).unwrap_or(&zero);
                for e in 0..k {
                    let d = state[(i * m + b) * k + e] - tb[e];
                    xtilde[(b * n + i) * k + e] = d;
                }
                errors[i][b] = norm(&xtilde[(b * n + i) * k..(b * n + i + 1) * k]);
            }
        }
        let v = monitor.value(&xtilde);
        if step == 0 {
            *v0 = v;
        }
        let pt = truth[0];
        let bearings = scenario
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| true_bearing(&pt, &a.trajectory.position(t)).map_err(|_| coincident(i, t)))
            .collect::<Result<Vec<_>, _>>()?;
        let available: Vec<bool> = scenario.agents.iter().map(|a| a.measuring(t)).collect();
        let blocks = bearings
            .iter()
            .zip(&available)
            .map(|(b, &on)| {
                if on {
                    projection_matrix(b)
                } else {
                    Ok(SymMatrix::zeros(k))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let firsts: Vec<&[f64]> = (0..n).map(|i| &state[i * m * k..i * m * k + k]).collect();
        Ok(LogRow {
            t,
            errors,
            v,
            v_bound: monitor.bound(t, 0.0, *v0),
            lambda_min_spatial: mean_observation_lambda_min(&blocks)?,
            disagreement: max_pairwise_distance(&firsts),
            comm_floats: vec![per_step * step as u64; n],
            bearings,
            available,
        })
    };
    rows.push(record(source.truth(), 0.0, &state, 0, &mut v0)?);

    for step in 0..scenario.n_steps() {
        let t = step as f64 * h;
        let noise = source.begin_step(t)?;
        let rhs = |tt: f64, x: &[f64]| -> Result<Vec<f64>, SimError> {
            let meas = source.measurements(tt, &noise)?;
            let agents: Vec<AgentState> = (0..n)
                .map(|i| AgentState::from_flat(i, m, k, x[i * m * k..(i + 1) * m * k].to_vec()))
                .collect::<Result<_, _>>()?;
            let payloads: Vec<Vec<f64>> = agents.iter().map(broadcast_payload).collect();
            let mut out = Vec::with_capacity(x.len());
            for (i, agent) in agents.iter().enumerate() {
                let nbs = graph
                    .neighbors(i)
                    .map(|(j, w)| NeighborEstimate::new(j, w, payloads[j].clone()))
                    .collect::<Result<Vec<_>, _>>()?;
                let delta = correction_term(agent, &meas[i], &nbs, gains.alpha())?;
                out.extend_from_slice(observer_derivative(agent, &delta, gains)?.data());
            }
            Ok(out)
        };
        state = match try_rk4_step(rhs, t, &state, h) {
            Ok(s) => s,
            Err(SimError::Numerics(NumericsError::NonFiniteDerivative { t })) => return Err(SimError::Diverged { t }),
            Err(SimError::Observer(ObserverError::NonFinite(_))) => return Err(SimError::Diverged { t }),
            Err(e) => return Err(e),
        };
        let t_next = (step + 1) as f64 * h;
        check_divergence(&state, t_next)?;
        rows.push(record(source.truth(), t_next, &state, step + 1, &mut v0)?);
    }

    let final_estimates = (0..n)
        .map(|i| AgentState::from_flat(i, m, k, state[i * m * k..(i + 1) * m * k].to_vec()))
        .collect::<Result<_, _>>()?;
    Ok(RunLog {
        n_agents: n,
        order: m,
        rows,
        bearing_checksum: source.checksum(),
        final_estimates,
    })
}

/// Run the scenario once per seed on separate threads; results follow `seeds` order.
pub fn run_seeds(scenario: &Scenario, seeds: &[u64]) -> Vec<Result<RunLog, SimError>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let scn = scenario.with_seed(seed);
                s.spawn(move || run(&scn))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}
