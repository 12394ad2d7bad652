//! Repeated ideal measurements of a two-outcome question "is the system in A?".

use crate::error::{check_dim, contract, Error, Result};
use crate::hilbert::{project, HermitianSpectrum, Operator, Projector, StateVector};
use crate::stats::linear_fit;

/// Measurement times `0 = t_0 < t_1 < … < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dissection(Vec<f64>);

impl Dissection {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(contract("a dissection needs t_0 and at least one later time"));
        }
        if times[0] != 0.0 {
            return Err(contract("a dissection starts at t_0 = 0"));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(contract("dissection times must be finite and strictly increasing"));
        }
        Ok(Self(times))
    }

    /// `N` equal intervals of `[0, total]`.
    pub fn uniform(total: f64, n: usize) -> Result<Self> {
        if n == 0 || !(total > 0.0) {
            return Err(contract("uniform dissection needs N >= 1 and T > 0"));
        }
        let mut t: Vec<f64> = (0..=n).map(|k| total * k as f64 / n as f64).collect();
        t[n] = total;
        Self::new(t)
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    /// Number of measurement intervals `N`.
    pub fn intervals(&self) -> usize {
        self.0.len() - 1
    }
}

fn prepare(h: &Operator, psi0: &StateVector, pi_a: &Projector) -> Result<HermitianSpectrum> {
    check_dim(h.dim(), psi0.dim())?;
    check_dim(h.dim(), pi_a.dim())?;
    if !h.is_hermitian() {
        return Err(contract("watched-pot evolution needs a Hermitian Hamiltonian"));
    }
    let outside = project(&pi_a.complement(), psi0)?.norm();
    if outside > 1e-10 {
        return Err(contract(format!("initial state is not in the range of Π_A (leak {outside:e})")));
    }
    h.spectrum()
}

/// Cumulative probability `p_k` that every measurement up to `t_k` found A,
/// with projection and renormalisation after each one. `p_0 = 1`.
pub fn watched_pot(h: &Operator, psi0: &StateVector, pi_a: &Projector, d: &Dissection) -> Result<Vec<f64>> {
    let spec = prepare(h, psi0, pi_a)?;
    let mut psi = psi0.normalized()?;
    let mut p = Vec::with_capacity(d.0.len());
    p.push(1.0);
    let mut survival = 1.0;
    for w in d.0.windows(2) {
        if survival == 0.0 {
            p.push(0.0);
            continue;
        }
        let evolved = spec.propagate(&psi, w[1] - w[0])?;
        let kept = project(pi_a, &evolved)?;
        let ratio = kept.norm_sqr() / evolved.norm_sqr();
        survival *= ratio.clamp(0.0, 1.0);
        p.push(survival);
        if kept.norm() > 0.0 {
            psi = kept.normalized()?;
        } else {
            survival = 0.0;
        }
    }
    Ok(p)
}

pub const MAX_BRANCH_MEASUREMENTS: usize = 20;

/// Unconditional probability that the measurement at `t_n` finds A, summing
/// over all earlier outcome histories. Entry 0 is 1.
pub fn watched_pot_unconditional(h: &Operator, psi0: &StateVector, pi_a: &Projector, d: &Dissection) -> Result<Vec<f64>> {
    if d.intervals() > MAX_BRANCH_MEASUREMENTS {
        return Err(contract(format!(
            "branch summation is limited to N <= {MAX_BRANCH_MEASUREMENTS} measurements"
        )));
    }
    let spec = prepare(h, psi0, pi_a)?;
    let not_a = pi_a.complement();
    let mut branches = vec![psi0.normalized()?];
    let mut p = vec![1.0];
    let n = d.intervals();
    for (k, w) in d.0.windows(2).enumerate() {
        let dt = w[1] - w[0];
        let mut next = Vec::with_capacity(branches.len() * 2);
        let mut found_a = 0.0;
        for b in &branches {
            let evolved = spec.propagate(b, dt)?;
            let a = project(pi_a, &evolved)?;
            found_a += a.norm_sqr();
            if k + 1 < n {
                next.push(a);
                next.push(project(&not_a, &evolved)?);
            }
        }
        p.push(found_a);
        branches = next;
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZenoRow {
    pub n: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenoTable {
    pub rows: Vec<ZenoRow>,
    /// Whether `p_N` never decreases along the list.
    pub monotone: bool,
    /// Slope of `ln(1 − p_N)` against `ln N` over the upper half of the list,
    /// when at least two of those entries have `1 − p_N > 0`.
    pub tail_slope: Option<f64>,
}

/// Survival `p_N` at the final time `total` for each uniform `N`.
pub fn zeno_limit_check(h: &Operator, psi0: &StateVector, pi_a: &Projector, total: f64, n_list: &[usize]) -> Result<ZenoTable> {
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let d = Dissection::uniform(total, n)?;
        let p = watched_pot(h, psi0, pi_a, &d)?;
        rows.push(ZenoRow { n, p: p[n] });
    }
    let monotone = rows.windows(2).all(|w| w[1].p >= w[0].p - 1e-15);
    let upper = &rows[rows.len() / 2..];
    let (xs, ys): (Vec<f64>, Vec<f64>) = upper
        .iter()
        .filter(|r| 1.0 - r.p > 0.0)
        .map(|r| ((r.n as f64).ln(), (1.0 - r.p).ln()))
        .unzip();
    let tail_slope = if xs.len() >= 2 { Some(linear_fit(&xs, &ys)?.slope) } else { None };
    Ok(ZenoTable { rows, monotone, tail_slope })
}

pub const UNDERFLOW_FLOOR: f64 = 1e-14;

/// Log–log slope of `1 − ‖Π_A e^{-iHt} ψ_0‖²` against `t`.
pub fn small_time_law(h: &Operator, psi0: &StateVector, pi_a: &Projector, t_list: &[f64]) -> Result<f64> {
    if t_list.len() < 2 || t_list.iter().any(|&t| !(t > 0.0)) {
        return Err(contract("small-time law needs at least two positive times"));
    }
    let spec = prepare(h, psi0, pi_a)?;
    let not_a = pi_a.complement();
    let psi = psi0.normalized()?;
    let mut xs = Vec::with_capacity(t_list.len());
    let mut ys = Vec::with_capacity(t_list.len());
    for &t in t_list {
        // 1 − p computed directly as the weight outside A
        let lost = project(&not_a, &spec.propagate(&psi, t)?)?.norm_sqr();
        if lost < UNDERFLOW_FLOOR {
            return Err(Error::Underflow(format!("1 - p = {lost:e} at t = {t}; increase t")));
        }
        xs.push(t.ln());
        ys.push(lost.ln());
    }
    Ok(linear_fit(&xs, &ys)?.slope)
}
