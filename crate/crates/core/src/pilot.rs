//! Schrödinger integration of the pilot state.
//!
//! The RK4 integrator works on a fixed grid and refines uniformly: every
//! grid interval is split into a number of substeps, and the substep count is
//! doubled globally until the acceptance test for the run passes. Unitary runs
//! accept on norm drift; effective (norm-decaying) runs accept when two
//! successive refinements agree.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, contract, Error, Result};
use crate::hilbert::{hermitian_deviation, Operator, StateVector, C64, HERMITIAN_TOL, NORM_TOL};

const MINUS_I: C64 = C64::new(0.0, -1.0);

type Evaluator = Arc<dyn Fn(f64) -> Operator + Send + Sync>;

#[derive(Clone)]
enum Schedule {
    Constant(Operator),
    TimeDependent(Evaluator),
}

/// `t -> H(t)`, with an optional Hermitian contract checked at every sample.
#[derive(Clone)]
pub struct HamiltonianSchedule {
    schedule: Schedule,
    dim: usize,
    hermitian_contract: bool,
}

impl fmt::Debug for HamiltonianSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSchedule")
            .field("dim", &self.dim)
            .field("static", &self.is_static())
            .field("hermitian_contract", &self.hermitian_contract)
            .finish()
    }
}

impl HamiltonianSchedule {
    /// A time-independent Hamiltonian; the contract follows the operator's flag.
    pub fn constant(h: Operator) -> Self {
        Self { dim: h.dim(), hermitian_contract: h.is_hermitian(), schedule: Schedule::Constant(h) }
    }

    /// A time-independent generator with no Hermitian contract.
    pub fn constant_effective(h: Operator) -> Self {
        Self { dim: h.dim(), hermitian_contract: false, schedule: Schedule::Constant(h) }
    }

    pub fn time_dependent<F>(dim: usize, hermitian_contract: bool, f: F) -> Self
    where
        F: Fn(f64) -> Operator + Send + Sync + 'static,
    {
        Self { dim, hermitian_contract, schedule: Schedule::TimeDependent(Arc::new(f)) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_static(&self) -> bool {
        matches!(self.schedule, Schedule::Constant(_))
    }

    pub fn hermitian_contract(&self) -> bool {
        self.hermitian_contract
    }

    /// `H(t)`, validated against the dimension and the Hermitian contract.
    pub fn at(&self, t: f64) -> Result<Operator> {
        let h = match &self.schedule {
            Schedule::Constant(h) => h.clone(),
            Schedule::TimeDependent(f) => f(t),
        };
        check_dim(self.dim, h.dim())?;
        if self.hermitian_contract && hermitian_deviation(h.matrix()) >= HERMITIAN_TOL {
            return Err(contract(format!("H({t}) violates the Hermitian contract")));
        }
        Ok(h)
    }

    fn generator(&self, t: f64) -> Result<DMatrix<C64>> {
        Ok(self.at(t)?.matrix() * MINUS_I)
    }
}

/// Strictly increasing sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(contract("time grid must not be empty"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric("time grid contains non-finite values".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(contract("time grid must be strictly increasing"));
        }
        Ok(Self(times))
    }

    /// `intervals + 1` equally spaced points from `start` to `end`.
    pub fn uniform(start: f64, end: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 || !(end > start) {
            return Err(contract("uniform grid needs end > start and at least one interval"));
        }
        let dt = (end - start) / intervals as f64;
        let mut times: Vec<f64> = (0..=intervals).map(|k| start + k as f64 * dt).collect();
        times[intervals] = end;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.0[0]
    }

    pub fn end(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Whether all spacings agree within a relative `1e-9`.
    pub fn is_uniform(&self) -> bool {
        if self.0.len() < 3 {
            return true;
        }
        let dt = self.0[1] - self.0[0];
        self.0.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1e-300))
    }
}

/// A sampled solution `|Ψ(t)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<StateVector>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<StateVector>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), found: states.len() });
        }
        TimeGrid::new(times.clone())?;
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &StateVector {
        &self.states[k]
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) if k >= self.times.len() => self.times.len() - 1,
            Err(k) => {
                if (t - self.times[k - 1]) <= (self.times[k] - t) {
                    k - 1
                } else {
                    k
                }
            }
        }
    }

    pub fn max_norm_drift(&self) -> f64 {
        let n0 = self.states[0].norm();
        self.states.iter().map(|s| (s.norm() - n0).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(other.states.iter())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    /// Exact propagation through the spectrum of a static Hermitian `H`.
    EigExact,
}

/// Step control for the RK4 integrator.
#[derive(Debug, Clone, Copy)]
pub struct Rk4Config {
    /// Upper bound on `‖H‖ · h` for the initial substep `h`.
    pub max_phase_per_step: f64,
    /// Accepted norm drift for unitary runs.
    pub drift_tol: f64,
    /// Accepted change between successive refinements for effective runs.
    pub refine_tol: f64,
    pub max_refinements: u32,
}

impl Default for Rk4Config {
    fn default() -> Self {
        Self { max_phase_per_step: 0.02, drift_tol: 1e-8, refine_tol: 1e-10, max_refinements: 10 }
    }
}

pub fn evolve(h: &HamiltonianSchedule, psi0: &StateVector, grid: &TimeGrid, method: Method) -> Result<Trajectory> {
    evolve_with(h, psi0, grid, method, &Rk4Config::default())
}

pub fn evolve_with(
    h: &HamiltonianSchedule,
    psi0: &StateVector,
    grid: &TimeGrid,
    method: Method,
    cfg: &Rk4Config,
) -> Result<Trajectory> {
    check_dim(h.dim(), psi0.dim())?;
    if h.hermitian_contract() && !psi0.is_normalized() {
        return Err(contract("initial pilot state must be normalized"));
    }
    match method {
        Method::EigExact => evolve_spectral(h, psi0, grid),
        Method::Rk4 => {
            let base = base_substeps(h, grid, cfg)?;
            for r in 0..=cfg.max_refinements {
                let traj = rk4_substeps(h, psi0, grid, &base, 1usize << r)?;
                if !h.hermitian_contract() || traj.max_norm_drift() < cfg.drift_tol {
                    return Ok(traj);
                }
            }
            Err(Error::Convergence(format!(
                "norm drift above {:e} after {} refinements",
                cfg.drift_tol, cfg.max_refinements
            )))
        }
    }
}

/// Integrates `dψ/dt = -iH(t)ψ` without renormalization, for generators with
/// a non-Hermitian (decaying) part.
pub fn evolve_effective(h: &HamiltonianSchedule, psi0: &StateVector, grid: &TimeGrid) -> Result<Trajectory> {
    evolve_effective_with(h, psi0, grid, &Rk4Config::default())
}

pub fn evolve_effective_with(
    h: &HamiltonianSchedule,
    psi0: &StateVector,
    grid: &TimeGrid,
    cfg: &Rk4Config,
) -> Result<Trajectory> {
    check_dim(h.dim(), psi0.dim())?;
    if psi0.norm() > 1.0 + NORM_TOL {
        return Err(contract("initial state of effective evolution must have norm <= 1"));
    }
    let base = base_substeps(h, grid, cfg)?;
    let mut prev = rk4_substeps(h, psi0, grid, &base, 1)?;
    for r in 1..=cfg.max_refinements {
        let next = rk4_substeps(h, psi0, grid, &base, 1usize << r)?;
        if next.max_abs_diff(&prev) < cfg.refine_tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Convergence(format!(
        "successive refinements still differ by more than {:e}",
        cfg.refine_tol
    )))
}

/// RK4 with exactly `substeps` equal steps inside every grid interval.
pub fn rk4_fixed(h: &HamiltonianSchedule, psi0: &StateVector, grid: &TimeGrid, substeps: usize) -> Result<Trajectory> {
    check_dim(h.dim(), psi0.dim())?;
    let base = vec![substeps.max(1); grid.len().saturating_sub(1)];
    rk4_substeps(h, psi0, grid, &base, 1)
}

fn evolve_spectral(h: &HamiltonianSchedule, psi0: &StateVector, grid: &TimeGrid) -> Result<Trajectory> {
    if !h.is_static() {
        return Err(contract("eig_exact requires a time-independent Hamiltonian"));
    }
    let op = h.at(grid.start())?;
    let spec = op.spectrum()?;
    let coeffs = spec.coefficients(psi0)?;
    let t0 = grid.start();
    let states = grid.times().iter().map(|&t| spec.propagate_coefficients(&coeffs, t - t0)).collect();
    Trajectory::new(grid.times().to_vec(), states)
}

fn inf_norm(m: &DMatrix<C64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|a| a.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn base_substeps(h: &HamiltonianSchedule, grid: &TimeGrid, cfg: &Rk4Config) -> Result<Vec<usize>> {
    let times = grid.times();
    let static_norm = if h.is_static() { Some(inf_norm(h.at(grid.start())?.matrix())) } else { None };
    let mut out = Vec::with_capacity(times.len().saturating_sub(1));
    for w in times.windows(2) {
        let norm = match static_norm {
            Some(n) => n,
            None => {
                let mid = 0.5 * (w[0] + w[1]);
                [w[0], mid, w[1]]
                    .iter()
                    .map(|&t| h.at(t).map(|op| inf_norm(op.matrix())))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(0.0, f64::max)
            }
        };
        if !norm.is_finite() {
            return Err(Error::Numeric("Hamiltonian has non-finite entries".into()));
        }
        let n = ((w[1] - w[0]) * norm / cfg.max_phase_per_step).ceil().max(1.0);
        out.push(n as usize);
    }
    Ok(out)
}

fn rk4_substeps(
    h: &HamiltonianSchedule,
    psi0: &StateVector,
    grid: &TimeGrid,
    base: &[usize],
    factor: usize,
) -> Result<Trajectory> {
    let times = grid.times();
    let fixed = if h.is_static() { Some(h.generator(times[0])?) } else { None };
    let mut psi: DVector<C64> = psi0.amplitudes().clone();
    let mut states = Vec::with_capacity(times.len());
    states.push(psi0.clone());

    for (k, w) in times.windows(2).enumerate() {
        let n = base[k] * factor;
        let dt = (w[1] - w[0]) / n as f64;
        for s in 0..n {
            let t = w[0] + s as f64 * dt;
            psi = match &fixed {
                Some(g) => rk4_step_static(g, &psi, dt),
                None => {
                    let g0 = h.generator(t)?;
                    let gm = h.generator(t + 0.5 * dt)?;
                    let g1 = h.generator(t + dt)?;
                    rk4_step(&g0, &gm, &g1, &psi, dt)
                }
            };
        }
        if psi.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(Error::Numeric(format!("integration diverged near t = {}", w[1])));
        }
        states.push(StateVector::from_dvector(psi.clone())?);
    }
    Trajectory::new(times.to_vec(), states)
}

fn rk4_step_static(g: &DMatrix<C64>, psi: &DVector<C64>, dt: f64) -> DVector<C64> {
    rk4_step(g, g, g, psi, dt)
}

fn rk4_step(g0: &DMatrix<C64>, gm: &DMatrix<C64>, g1: &DMatrix<C64>, psi: &DVector<C64>, dt: f64) -> DVector<C64> {
    let half = C64::new(0.5 * dt, 0.0);
    let full = C64::new(dt, 0.0);
    let k1 = g0 * psi;
    let k2 = gm * (psi + &k1 * half);
    let k3 = gm * (psi + &k2 * half);
    let k4 = g1 * (psi + &k3 * full);
    psi + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::matrix_exponential_apply;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn null_hamiltonian_is_constant() {
        let h = HamiltonianSchedule::constant(Operator::zeros(2).unwrap());
        let psi0 = StateVector::basis(2, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 5.0, 10).unwrap();
        for m in [Method::Rk4, Method::EigExact] {
            let traj = evolve(&h, &psi0, &grid, m).unwrap();
            assert!(traj.states().iter().all(|s| s.max_abs_diff(&psi0) == 0.0));
        }
    }

    #[test]
    fn rabi_rotation_rk4() {
        let h = HamiltonianSchedule::constant(Operator::sigma_x());
        let psi0 = StateVector::basis(2, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, PI / 2.0, 4).unwrap();
        let traj = evolve(&h, &psi0, &grid, Method::Rk4).unwrap();
        let last = traj.state(traj.len() - 1);
        let expect = StateVector::new(vec![c(0.0, 0.0), c(0.0, -1.0)]).unwrap();
        assert!(last.max_abs_diff(&expect) < 1e-8, "{}", last.max_abs_diff(&expect));
    }

    #[test]
    fn linear_ramp_phase() {
        // H(t) = t σ_z accumulates phase t²/2 = π at t = √(2π)
        let h = HamiltonianSchedule::time_dependent(2, true, |t| Operator::sigma_z().scaled(t));
        let s = 1.0 / 2f64.sqrt();
        let psi0 = StateVector::from_real(&[s, s]).unwrap();
        let tf = (2.0 * PI).sqrt();
        let grid = TimeGrid::uniform(0.0, tf, 8).unwrap();
        let traj = evolve(&h, &psi0, &grid, Method::Rk4).unwrap();
        let expect = StateVector::from_real(&[-s, -s]).unwrap();
        assert!(traj.state(8).max_abs_diff(&expect) < 1e-8);
    }

    #[test]
    fn eig_exact_rejects_time_dependent() {
        let h = HamiltonianSchedule::time_dependent(2, true, |t| Operator::sigma_z().scaled(t));
        let psi0 = StateVector::basis(2, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        assert!(matches!(evolve(&h, &psi0, &grid, Method::EigExact), Err(Error::Contract(_))));
    }

    #[test]
    fn hermitian_contract_enforced_on_samples() {
        let h = HamiltonianSchedule::time_dependent(2, true, |t| {
            let mut m = Operator::sigma_x().matrix().clone();
            m[(0, 1)] = c(1.0, t);
            Operator::new(m).unwrap()
        });
        let psi0 = StateVector::basis(2, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        assert!(matches!(evolve(&h, &psi0, &grid, Method::Rk4), Err(Error::Contract(_))));
    }

    #[test]
    fn drift_failure_reports_convergence_error() {
        let h = HamiltonianSchedule::constant(Operator::sigma_x().scaled(50.0));
        let psi0 = StateVector::basis(2, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 200.0, 1).unwrap();
        let cfg = Rk4Config { max_phase_per_step: 2.0, drift_tol: 1e-15, max_refinements: 1, ..Default::default() };
        assert!(matches!(evolve_with(&h, &psi0, &grid, Method::Rk4, &cfg), Err(Error::Convergence(_))));
    }

    #[test]
    fn effective_pure_decay() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![c(0.0, 0.0), c(0.0, -1.0)]));
        let h = HamiltonianSchedule::constant_effective(Operator::new(m).unwrap());
        let psi0 = StateVector::basis(2, 1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let traj = evolve_effective(&h, &psi0, &grid).unwrap();
        assert!((traj.state(10).get(1) - c((-1f64).exp(), 0.0)).norm() < 1e-10);
        assert!(traj.states().windows(2).all(|w| w[1].norm() <= w[0].norm() + 1e-15));
    }

    #[test]
    fn effective_null_generator_keeps_norm() {
        let h = HamiltonianSchedule::constant_effective(Operator::zeros(3).unwrap());
        let psi0 = StateVector::from_real(&[0.6, 0.0, 0.0]).unwrap();
        let grid = TimeGrid::uniform(0.0, 3.0, 6).unwrap();
        let traj = evolve_effective(&h, &psi0, &grid).unwrap();
        assert!(traj.max_norm_drift() == 0.0);
    }

    #[test]
    fn effective_matches_dense_exponential() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[c(0.0, 0.0), c(0.7, -0.2), c(0.05, 0.01), c(0.7, 0.2), c(0.3, -0.5), c(0.0, 0.0), c(0.05, -0.01), c(0.0, 0.0), c(-0.1, -0.002)],
        );
        let op = Operator::new(m).unwrap();
        let h = HamiltonianSchedule::constant_effective(op.clone());
        let psi0 = StateVector::basis(3, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 10.0, 50).unwrap();
        let traj = evolve_effective(&h, &psi0, &grid).unwrap();
        for (t, s) in traj.times().iter().zip(traj.states()) {
            let oracle = matrix_exponential_apply(&op, *t, &psi0).unwrap();
            assert!(s.max_abs_diff(&oracle) < 1e-8);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![]).is_err());
        assert!(TimeGrid::uniform(0.0, 1.0, 4).unwrap().is_uniform());
    }
}
