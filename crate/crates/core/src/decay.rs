//! An unstable level `|ψ_0>` coupled with strength `ε` to the end site `|ψ_1>`
//! of a tight-binding chain `|ψ_1> … |ψ_L>` with hopping `g`.
//!
//! The chain disperses whatever leaves `|ψ_0>`, so the return amplitude
//! `χ(t) = <ψ_1|e^{-iH_0 t}|ψ_1>` dies out after a few `1/g`; an excitation
//! reaching the far end of the chain comes back after roughly `L/g`, which
//! bounds every simulated window.

use nalgebra::DMatrix;

use crate::beables::{rates_at, ViableFamily, DEFAULT_P_FLOOR};
use crate::error::{contract, Error, Result};
use crate::hilbert::{Operator, StateVector, C64};
use crate::pilot::{evolve, HamiltonianSchedule, Method, TimeGrid, Trajectory};
use crate::stats::linear_fit;

pub const MIN_CHAIN_LEN: usize = 50;
/// `|χ|` below this counts as dispersed.
pub const DISPERSAL_THRESHOLD: f64 = 0.05;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayModel {
    pub epsilon: f64,
    pub e0: f64,
    pub chain_len: usize,
    pub hop: f64,
    /// Nominal dispersal time, for reference only.
    pub tau: f64,
}

impl DecayModel {
    pub fn new(epsilon: f64, e0: f64, chain_len: usize, hop: f64) -> Result<Self> {
        if chain_len < MIN_CHAIN_LEN {
            return Err(contract(format!("chain length must be at least {MIN_CHAIN_LEN}")));
        }
        if !(hop > 0.0 && hop.is_finite()) {
            return Err(contract("hopping g must be positive"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) || epsilon > 0.5 * hop {
            return Err(contract("coupling must satisfy 0 <= ε <= g/2 (weak coupling)"));
        }
        if !e0.is_finite() {
            return Err(Error::Numeric("E0 must be finite".into()));
        }
        Ok(Self { epsilon, e0, chain_len, hop, tau: 1.0 / hop })
    }

    pub fn dim(&self) -> usize {
        self.chain_len + 1
    }

    /// Latest time inside the pre-revival window, `L / 2g`.
    pub fn revival_bound(&self) -> f64 {
        self.chain_len as f64 / (2.0 * self.hop)
    }

    /// Chain-only hopping matrix on sites `1..=L` (indexed from 0).
    pub fn chain_hamiltonian(&self) -> Operator {
        let l = self.chain_len;
        let mut m = DMatrix::<C64>::zeros(l, l);
        for k in 0..l - 1 {
            m[(k, k + 1)] = C64::new(self.hop, 0.0);
            m[(k + 1, k)] = C64::new(self.hop, 0.0);
        }
        Operator::hermitian(m).expect("real symmetric")
    }

    pub fn h0(&self) -> Operator {
        let n = self.dim();
        let mut m = DMatrix::<C64>::zeros(n, n);
        m[(0, 0)] = C64::new(self.e0, 0.0);
        for k in 1..n - 1 {
            m[(k, k + 1)] = C64::new(self.hop, 0.0);
            m[(k + 1, k)] = C64::new(self.hop, 0.0);
        }
        Operator::hermitian(m).expect("real symmetric")
    }

    /// `H' = |ψ_1><ψ_0| + |ψ_0><ψ_1|`.
    pub fn h_prime(&self) -> Operator {
        let n = self.dim();
        let mut m = DMatrix::<C64>::zeros(n, n);
        m[(0, 1)] = C64::new(1.0, 0.0);
        m[(1, 0)] = C64::new(1.0, 0.0);
        Operator::hermitian(m).expect("real symmetric")
    }

    /// `H_0 + ε H'`.
    pub fn hamiltonian(&self) -> Operator {
        self.h0().plus(&self.h_prime().scaled(self.epsilon)).expect("same dimension")
    }

    pub fn schedule(&self) -> HamiltonianSchedule {
        HamiltonianSchedule::constant(self.hamiltonian())
    }

    pub fn initial_state(&self) -> StateVector {
        StateVector::basis(self.dim(), 0).expect("dim >= 1")
    }

    fn check_window(&self, grid: &TimeGrid) -> Result<()> {
        if grid.start() < 0.0 || grid.end() >= self.revival_bound() {
            return Err(Error::Window(format!(
                "grid [{}, {}] leaves the pre-revival window [0, {})",
                grid.start(),
                grid.end(),
                self.revival_bound()
            )));
        }
        Ok(())
    }

    /// Full pilot state from `|ψ_0>` at `t = 0`.
    pub fn pilot(&self, grid: &TimeGrid) -> Result<Trajectory> {
        self.check_window(grid)?;
        if grid.start() != 0.0 {
            return Err(contract("decay pilot grids start at t = 0"));
        }
        evolve(&self.schedule(), &self.initial_state(), grid, Method::EigExact)
    }

    /// `{span ψ_0, span {ψ_1 … ψ_L}}`: undecayed and decayed.
    pub fn two_block_family(&self) -> Result<ViableFamily> {
        let mut fam = ViableFamily::coordinate(self.dim(), &[vec![0], (1..self.dim()).collect()])?;
        fam = ViableFamily::from_bases(vec!["undecayed".into(), "decayed".into()], fam.bases_at(0.0)?)?;
        Ok(fam)
    }

    /// One block per site: `ψ_0` and each time-since-decay pointer state `ψ_m`.
    pub fn refined_family(&self) -> Result<ViableFamily> {
        ViableFamily::basis_states(self.dim())
    }
}

/// Sampled `χ(t)` on a uniform grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub times: Vec<f64>,
    pub chi: Vec<C64>,
    /// First grid time after which `|χ|` stays below the dispersal threshold.
    pub tau_eff: f64,
}

impl Kernel {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }
}

fn check_uniform_from_zero(grid: &TimeGrid) -> Result<()> {
    if grid.start() != 0.0 || grid.len() < 2 || !grid.is_uniform() {
        return Err(contract("grid must be uniform, start at t = 0 and have at least two points"));
    }
    Ok(())
}

pub fn dispersal_kernel(m: &DecayModel, grid: &TimeGrid) -> Result<Kernel> {
    check_uniform_from_zero(grid)?;
    m.check_window(grid)?;
    let spec = m.chain_hamiltonian().spectrum()?;
    let weights: Vec<(f64, f64)> =
        (0..spec.dim()).map(|k| (spec.values[k], spec.vectors[(0, k)].norm_sqr())).collect();
    let chi: Vec<C64> = grid
        .times()
        .iter()
        .map(|&t| weights.iter().map(|&(e, w)| (-I * e * t).exp() * w).sum())
        .collect();

    let times = grid.times().to_vec();
    let last_above = chi.iter().rposition(|c| c.norm() >= DISPERSAL_THRESHOLD);
    let tau_eff = match last_above {
        None => times[0],
        Some(k) if k + 1 < times.len() => times[k + 1],
        Some(_) => {
            return Err(Error::Window(format!(
                "|χ| is above {DISPERSAL_THRESHOLD} at the window end; the kernel has not dispersed or has revived (increase L or the window)"
            )))
        }
    };
    Ok(Kernel { times, chi, tau_eff })
}

/// `f(t) = <ψ_0|Ψ(t)>` from the full Schrödinger evolution.
pub fn survival_direct(m: &DecayModel, grid: &TimeGrid) -> Result<Vec<C64>> {
    Ok(survival_from_pilot(&m.pilot(grid)?))
}

pub fn survival_from_pilot(pilot: &Trajectory) -> Vec<C64> {
    pilot.states().iter().map(|s| s.get(0)).collect()
}

/// Solves `f' = −iE_0 f − ε² ∫_0^t χ(t−s) f(s) ds`, `f(0) = 1`, by trapezoidal
/// convolution quadrature combined with trapezoidal (implicit) stepping.
pub fn survival_volterra(k: &Kernel, epsilon: f64, e0: f64, grid: &TimeGrid) -> Result<Vec<C64>> {
    check_uniform_from_zero(grid)?;
    if grid.len() != k.times.len() || (grid.times()[1] - k.dt()).abs() > 1e-12 * k.dt() {
        return Err(contract("Volterra grid must coincide with the kernel grid"));
    }
    let n = grid.len();
    let h = k.dt();
    let eps2 = epsilon * epsilon;
    let chi = &k.chi;
    let mut f = Vec::with_capacity(n);
    f.push(C64::new(1.0, 0.0));
    let mut rate_prev = -I * e0 * f[0];
    let denom = 1.0 + 0.5 * h * (I * e0 + eps2 * 0.5 * h * chi[0]);
    for step in 1..n {
        // trapezoid for ∫_0^{t_step} with f_step still unknown
        let mut known = 0.5 * chi[step] * f[0];
        for j in 1..step {
            known += chi[step - j] * f[j];
        }
        let known = h * known;
        let fnext = (f[step - 1] + 0.5 * h * rate_prev - 0.5 * h * eps2 * known) / denom;
        rate_prev = -I * e0 * fnext - eps2 * (0.5 * h * chi[0] * fnext + known);
        f.push(fnext);
    }
    Ok(f)
}

/// `Γ = ε² ∫_0^T χ(t) dt` with `T` the kernel window end.
pub fn gamma_estimate(k: &Kernel, epsilon: f64) -> Result<C64> {
    let last = k.chi.last().ok_or_else(|| contract("empty kernel"))?;
    if last.norm() >= DISPERSAL_THRESHOLD {
        return Err(Error::Window("kernel has not decayed by the window end".into()));
    }
    let h = k.dt();
    let n = k.chi.len();
    let integral: C64 = k.chi.iter().sum::<C64>() * h - (k.chi[0] + k.chi[n - 1]) * (0.5 * h);
    Ok(integral * (epsilon * epsilon))
}

/// `-d ln|f|²/dt` fitted over `[t_min, t_max]`.
pub fn fitted_decay_rate(times: &[f64], f: &[C64], t_min: f64, t_max: f64) -> Result<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(f)
        .filter(|(&t, _)| t >= t_min && t <= t_max)
        .map(|(&t, a)| (t, a.norm_sqr().ln()))
        .unzip();
    Ok(-linear_fit(&xs, &ys)?.slope)
}

/// Bell rates between the undecayed and decayed blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneWayRates {
    pub t: f64,
    /// Rate into the undecayed block.
    pub t_0d: f64,
    /// Rate out of the undecayed block.
    pub t_d0: f64,
}

fn pilot_sample(m: &DecayModel, pilot: &Trajectory, t: f64) -> Result<(f64, StateVector)> {
    if pilot.state(0).dim() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: pilot.state(0).dim() });
    }
    let k = pilot.nearest_index(t);
    Ok((pilot.times()[k], pilot.state(k).normalized()?))
}

/// Rates at the pilot grid point nearest `t`; meaningful for `t ≫ τ_eff`.
pub fn decay_bell_rates(m: &DecayModel, pilot: &Trajectory, t: f64) -> Result<OneWayRates> {
    let fam = m.two_block_family()?;
    let (tk, psi) = pilot_sample(m, pilot, t)?;
    let r = rates_at(&psi, &m.hamiltonian(), &fam, tk, 1.0, DEFAULT_P_FLOOR)?;
    Ok(OneWayRates { t: tk, t_0d: r.rate(0, 1), t_d0: r.rate(1, 0) })
}

/// Rates out of `ψ_0` into every site under the refined family; entry `m` is
/// the rate `ψ_0 → ψ_m` (entry 0 is zero).
pub fn refined_jump_target(m: &DecayModel, pilot: &Trajectory, t: f64) -> Result<Vec<f64>> {
    let fam = m.refined_family()?;
    let (tk, psi) = pilot_sample(m, pilot, t)?;
    let r = rates_at(&psi, &m.hamiltonian(), &fam, tk, 1.0, DEFAULT_P_FLOOR)?;
    Ok((0..m.dim()).map(|site| r.rate(site, 0)).collect())
}
