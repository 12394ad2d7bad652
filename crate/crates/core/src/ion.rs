//! Three-level ion: ground `f`, strongly coupled red level `g`, weakly coupled
//! shelf level `h`. Between photon emissions the amplitudes follow the
//! norm-decaying no-jump equations; each emission resets the ion to ground.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::hilbert::{expm, Operator, StateVector, C64};
use crate::pilot::{evolve_effective, HamiltonianSchedule, TimeGrid};
use crate::stats::median;

/// Largest accepted truncation tail of the photon-number recursion.
pub const MAX_TAIL: f64 = 1e-2;
/// Minimum record size for dark-period statistics.
pub const MIN_EVENTS: usize = 100;
pub const DEFAULT_DARK_FACTOR: f64 = 20.0;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonParams {
    pub lambda_r: C64,
    pub lambda_b: C64,
    pub delta_r: f64,
    pub delta_b: f64,
    pub gamma_r: C64,
    pub gamma_b: C64,
}

impl IonParams {
    pub fn new(lambda_r: C64, lambda_b: C64, delta_r: f64, delta_b: f64, gamma_r: C64, gamma_b: C64) -> Result<Self> {
        let p = Self { lambda_r, lambda_b, delta_r, delta_b, gamma_r, gamma_b };
        p.check()?;
        Ok(p)
    }

    /// `λ = 1, γ_R = 1, Λ = 0.02, γ_B = 1e-3`, on resonance.
    pub fn shelving() -> Self {
        Self::new(C64::new(1.0, 0.0), C64::new(0.02, 0.0), 0.0, 0.0, C64::new(1.0, 0.0), C64::new(1e-3, 0.0))
            .expect("valid")
    }

    pub fn with_lambda_b(mut self, lambda_b: C64) -> Self {
        self.lambda_b = lambda_b;
        self
    }

    fn check(&self) -> Result<()> {
        let finite = [self.lambda_r, self.lambda_b, self.gamma_r, self.gamma_b].iter().all(|c| c.is_finite())
            && self.delta_r.is_finite()
            && self.delta_b.is_finite();
        if !finite {
            return Err(Error::Numeric("ion parameters must be finite".into()));
        }
        if self.gamma_r.re < 0.0 || self.gamma_b.re < 0.0 {
            return Err(contract("decay rates need Re γ >= 0"));
        }
        Ok(())
    }

    /// True when `|Λ|` and `Re γ_B` are both below `ratio` times the
    /// corresponding red-transition scale.
    pub fn is_shelving_regime(&self, ratio: f64) -> bool {
        self.lambda_b.norm() < ratio * self.lambda_r.norm() && self.gamma_b.re < ratio * self.gamma_r.re
    }

    /// Matrix `K` with `d(f, g, h)/dt = −iK (f, g, h)`.
    pub fn effective_hamiltonian(&self) -> Operator {
        let z = C64::new(0.0, 0.0);
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[
                z,
                self.lambda_r.conj(),
                self.lambda_b.conj(),
                self.lambda_r,
                self.delta_r - I * self.gamma_r,
                z,
                self.lambda_b,
                z,
                self.delta_b - I * self.gamma_b,
            ],
        );
        Operator::new(m).expect("finite")
    }

    fn r_rate(&self) -> f64 {
        2.0 * self.gamma_r.re
    }

    fn b_rate(&self) -> f64 {
        2.0 * self.gamma_b.re
    }

    /// Red and blue emission rates `(2Reγ_R|g|², 2Reγ_B|h|²)`.
    pub fn emission_rates(&self, x: &AmplitudeTriple) -> (f64, f64) {
        (self.r_rate() * x.g.norm_sqr(), self.b_rate() * x.h.norm_sqr())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeTriple {
    pub f: C64,
    pub g: C64,
    pub h: C64,
}

impl AmplitudeTriple {
    pub fn ground() -> Self {
        Self { f: C64::new(1.0, 0.0), g: C64::new(0.0, 0.0), h: C64::new(0.0, 0.0) }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.f.norm_sqr() + self.g.norm_sqr() + self.h.norm_sqr()
    }

    pub fn populations(&self) -> [f64; 3] {
        [self.f.norm_sqr(), self.g.norm_sqr(), self.h.norm_sqr()]
    }

    fn from_state(s: &StateVector) -> Self {
        Self { f: s.get(0), g: s.get(1), h: s.get(2) }
    }

    fn to_vector(self) -> DVector<C64> {
        DVector::from_vec(vec![self.f, self.g, self.h])
    }

    fn from_vector(v: &DVector<C64>) -> Self {
        Self { f: v[0], g: v[1], h: v[2] }
    }
}

/// No-jump amplitudes from the ground state on `grid` (which must start at 0).
pub fn no_jump_amplitudes(p: &IonParams, grid: &TimeGrid) -> Result<Vec<AmplitudeTriple>> {
    p.check()?;
    if grid.start() != 0.0 {
        return Err(contract("no-jump evolution starts from the ground state at t = 0"));
    }
    let schedule = HamiltonianSchedule::constant_effective(p.effective_hamiltonian());
    let psi0 = StateVector::basis(3, 0)?;
    let traj = evolve_effective(&schedule, &psi0, grid)?;
    Ok(traj.states().iter().map(AmplitudeTriple::from_state).collect())
}

/// Largest `|dN/dt + 2Reγ_R|g|² + 2Reγ_B|h|²|` over the interior of a uniform
/// grid, with `dN/dt` from the five-point central difference.
pub fn balance_residual(p: &IonParams, grid: &TimeGrid, amps: &[AmplitudeTriple]) -> Result<f64> {
    if !grid.is_uniform() || grid.len() != amps.len() || amps.len() < 5 {
        return Err(contract("balance check needs a uniform grid of at least 5 points matching the amplitudes"));
    }
    let h = grid.times()[1] - grid.times()[0];
    let n: Vec<f64> = amps.iter().map(AmplitudeTriple::norm_sqr).collect();
    let mut worst = 0.0f64;
    for k in 2..amps.len() - 2 {
        let dn = (n[k - 2] - 8.0 * n[k - 1] + 8.0 * n[k + 1] - n[k + 2]) / (12.0 * h);
        let (r, b) = p.emission_rates(&amps[k]);
        worst = worst.max((dn + r + b).abs());
    }
    Ok(worst)
}

/// Exact one-step propagator of the no-jump equations.
fn step_propagator(p: &IonParams, dt: f64) -> Result<DMatrix<C64>> {
    expm(&(p.effective_hamiltonian().matrix() * (-I * dt)))
}

fn exact_amplitudes(p: &IonParams, dt: f64, points: usize) -> Result<Vec<AmplitudeTriple>> {
    let u = step_propagator(p, dt)?;
    let mut x = AmplitudeTriple::ground().to_vector();
    let mut out = Vec::with_capacity(points);
    out.push(AmplitudeTriple::ground());
    for _ in 1..points {
        x = &u * &x;
        out.push(AmplitudeTriple::from_vector(&x));
    }
    Ok(out)
}

pub const GROUND: usize = 0;
pub const RED: usize = 1;
pub const SHELF: usize = 2;

/// `probabilities[n][a]`: probability of `n` photons emitted by time `t` with
/// the ion in level `a` (0 ground, 1 red, 2 shelf).
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonDistribution {
    pub t: f64,
    pub probabilities: Vec<[f64; 3]>,
    /// Probability of more than `n_max` photons by `t`.
    pub tail_tol: f64,
}

impl PhotonDistribution {
    pub fn n_max(&self) -> usize {
        self.probabilities.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().flatten().sum()
    }

    pub fn count_probability(&self, n: usize) -> f64 {
        self.probabilities[n].iter().sum()
    }

    pub fn mean_count(&self) -> f64 {
        (0..self.probabilities.len()).map(|n| n as f64 * self.count_probability(n)).sum()
    }

    pub fn occupation(&self, level: usize) -> f64 {
        self.probabilities.iter().map(|p| p[level]).sum()
    }
}

/// Weight of sample `j` in the composite rule for `∫_0^{kh}` (Simpson, with a
/// leading 3/8 panel when `k` is odd).
fn quad_weight(k: usize, j: usize, h: f64) -> f64 {
    match k {
        0 => 0.0,
        1 => 0.5 * h,
        _ if k.is_multiple_of(2) => simpson(0, k, j, h),
        _ if j <= 3 => {
            let w = if j == 0 || j == 3 { 3.0 * h / 8.0 } else { 9.0 * h / 8.0 };
            w + if j == 3 { simpson(3, k, j, h) } else { 0.0 }
        }
        _ => simpson(3, k, j, h),
    }
}

fn simpson(a: usize, b: usize, j: usize, h: f64) -> f64 {
    if b == a || j < a || j > b {
        0.0
    } else if j == a || j == b {
        h / 3.0
    } else if (j - a) % 2 == 1 {
        4.0 * h / 3.0
    } else {
        2.0 * h / 3.0
    }
}

/// Probability of each photon count up to `n_max` at time `t`, from the
/// emission-number recursion on `intervals` uniform steps.
pub fn photon_number_distribution(p: &IonParams, t: f64, n_max: usize, intervals: usize) -> Result<PhotonDistribution> {
    p.check()?;
    if !(t >= 0.0 && t.is_finite()) || intervals == 0 {
        return Err(contract("need t >= 0 and at least one interval"));
    }
    if t == 0.0 {
        let mut probabilities = vec![[0.0; 3]; n_max + 1];
        probabilities[0][GROUND] = 1.0;
        return Ok(PhotonDistribution { t, probabilities, tail_tol: 0.0 });
    }
    let h = t / intervals as f64;
    let points = intervals + 1;
    let weights: Vec<[f64; 3]> = exact_amplitudes(p, h, points)?.iter().map(AmplitudeTriple::populations).collect();

    let convolve = |source: &[f64], level: usize| -> Vec<f64> {
        (0..points)
            .map(|k| (0..=k).map(|j| quad_weight(k, j, h) * weights[k - j][level] * source[j]).sum())
            .collect()
    };

    let mut series: Vec<[f64; 3]> = weights.clone();
    let mut probabilities = vec![*series.last().expect("points >= 2")];
    for _ in 0..n_max {
        let source: Vec<f64> = series.iter().map(|q| p.r_rate() * q[RED] + p.b_rate() * q[SHELF]).collect();
        let per_level: Vec<Vec<f64>> = (0..3).map(|a| convolve(&source, a)).collect();
        series = (0..points).map(|k| [per_level[0][k], per_level[1][k], per_level[2][k]]).collect();
        probabilities.push(*series.last().expect("points >= 2"));
    }
    let source: Vec<f64> = series.iter().map(|q| p.r_rate() * q[RED] + p.b_rate() * q[SHELF]).collect();
    let tail_tol: f64 = (0..points).map(|j| quad_weight(intervals, j, h) * source[j]).sum::<f64>().max(0.0);
    if tail_tol > MAX_TAIL {
        return Err(Error::Truncation(format!(
            "probability of more than {n_max} photons is {tail_tol:.3e}; increase n_max"
        )));
    }
    Ok(PhotonDistribution { t, probabilities, tail_tol })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    Red,
    Blue,
}

impl Color {
    pub fn as_str(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub events: Vec<(f64, Color)>,
    pub horizon: f64,
    pub seed: u64,
    /// The last waiting time ran past the internal cap before the horizon.
    pub truncated: bool,
}

impl JumpRecord {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, color: Color) -> usize {
        self.events.iter().filter(|e| e.1 == color).count()
    }

    /// Red photon counts per bin of width `bin` over `[0, horizon)`.
    pub fn binned_red(&self, bin: f64) -> Result<Vec<(f64, usize)>> {
        if !(bin > 0.0) {
            return Err(contract("bin width must be positive"));
        }
        let nbins = (self.horizon / bin).ceil().max(1.0) as usize;
        let mut counts = vec![0usize; nbins];
        for &(t, c) in &self.events {
            if c == Color::Red {
                counts[((t / bin) as usize).min(nbins - 1)] += 1;
            }
        }
        Ok(counts.into_iter().enumerate().map(|(k, n)| (k as f64 * bin, n)).collect())
    }
}

/// Dense no-jump table from the ground state, shared by every waiting time.
#[derive(Debug, Clone)]
pub struct TelegraphSampler {
    params: IonParams,
    horizon: f64,
    times: Vec<f64>,
    survival: Vec<f64>,
    populations: Vec<[f64; 3]>,
}

impl TelegraphSampler {
    pub fn new(p: &IonParams, horizon: f64) -> Result<Self> {
        p.check()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(contract("horizon must be positive"));
        }
        if !(p.gamma_r.re > 0.0 && p.gamma_b.re > 0.0) {
            return Err(contract("telegraph sampling needs Re γ_R > 0 and Re γ_B > 0"));
        }
        let cap = 100.0 / p.gamma_b.re;
        let end = horizon.min(cap);

        let k = p.effective_hamiltonian();
        let scale = k.matrix().iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut rates: Vec<f64> = k
            .matrix()
            .clone()
            .schur()
            .eigenvalues()
            .ok_or_else(|| Error::Numeric("no-jump spectrum failed".into()))?
            .iter()
            .map(|mu| -2.0 * mu.im)
            .collect();
        rates.sort_by(f64::total_cmp);
        // past t_fast only the slowest mode is left
        let t_fast = end.min(40.0 / rates[1].max(1e-300));
        let dt_fine = 0.01 / scale;
        let n_fine = ((t_fast / dt_fine).ceil() as usize).max(1);
        let n_coarse = if end > t_fast {
            let dt = (0.01 / rates[0].max(1e-300)).min(100.0 * dt_fine).min((end - t_fast) / 100.0);
            ((end - t_fast) / dt).ceil() as usize
        } else {
            0
        };

        let mut times = Vec::with_capacity(n_fine + n_coarse + 1);
        let mut amps = Vec::with_capacity(times.capacity());
        let mut x = AmplitudeTriple::ground().to_vector();
        times.push(0.0);
        amps.push(AmplitudeTriple::ground());
        for (t0, t1, n) in [(0.0, t_fast, n_fine), (t_fast, end, n_coarse)] {
            if n == 0 {
                continue;
            }
            let dt = (t1 - t0) / n as f64;
            let u = step_propagator(p, dt)?;
            for i in 1..=n {
                x = &u * &x;
                times.push(if i == n { t1 } else { t0 + i as f64 * dt });
                amps.push(AmplitudeTriple::from_vector(&x));
            }
        }
        let mut survival = Vec::with_capacity(amps.len());
        let mut running = 1.0f64;
        for a in &amps {
            running = running.min(a.norm_sqr());
            survival.push(running);
        }
        let populations = amps.iter().map(AmplitudeTriple::populations).collect();
        Ok(Self { params: *p, horizon, times, survival, populations })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn table_len(&self) -> usize {
        self.times.len()
    }

    fn locate(&self, tau: f64) -> (usize, f64) {
        let k = self.times.partition_point(|&t| t <= tau).clamp(1, self.times.len() - 1) - 1;
        let w = ((tau - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        (k, w)
    }

    /// Conditional level populations a time `tau` after the last reset.
    pub fn populations_after(&self, tau: f64) -> [f64; 3] {
        let (k, w) = self.locate(tau);
        let a = self.populations[k];
        let b = self.populations[k + 1];
        let raw = [0, 1, 2].map(|i| a[i] + w * (b[i] - a[i]));
        let s: f64 = raw.iter().sum();
        raw.map(|v| v / s)
    }

    /// Level populations at `t` in the record, conditioned on its history.
    pub fn populations_at(&self, record: &JumpRecord, t: f64) -> [f64; 3] {
        let last = record.events.iter().rev().find(|e| e.0 <= t).map_or(0.0, |e| e.0);
        self.populations_after(t - last)
    }

    pub fn sample(&self, seed: u64) -> JumpRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        let mut now = 0.0;
        let mut truncated = false;
        let s_end = *self.survival.last().expect("table is non-empty");
        let table_end = *self.times.last().expect("table is non-empty");
        loop {
            let u: f64 = rng.random();
            let remaining = self.horizon - now;
            if s_end > u {
                if table_end < remaining {
                    truncated = true;
                }
                break;
            }
            // first index with S <= u
            let k = self.survival.partition_point(|&s| s > u);
            let (s0, s1) = (self.survival[k - 1], self.survival[k]);
            let (t0, t1) = (self.times[k - 1], self.times[k]);
            let tau = if s0 > s1 { t0 + (t1 - t0) * (s0 - u) / (s0 - s1) } else { t1 };
            if tau > remaining {
                break;
            }
            let (kk, w) = self.locate(tau);
            let g2 = self.populations[kk][RED] + w * (self.populations[kk + 1][RED] - self.populations[kk][RED]);
            let h2 = self.populations[kk][SHELF] + w * (self.populations[kk + 1][SHELF] - self.populations[kk][SHELF]);
            let red = self.params.r_rate() * g2;
            let blue = self.params.b_rate() * h2;
            let v: f64 = rng.random();
            let color = if v * (red + blue) < red { Color::Red } else { Color::Blue };
            now += tau;
            events.push((now, color));
        }
        JumpRecord { events, horizon: self.horizon, seed, truncated }
    }
}

pub fn sample_telegraph(p: &IonParams, horizon: f64, seed: u64) -> Result<JumpRecord> {
    if p.lambda_r == C64::new(0.0, 0.0) && p.lambda_b == C64::new(0.0, 0.0) {
        // the ground state is dark
        return Ok(JumpRecord { events: Vec::new(), horizon, seed, truncated: false });
    }
    Ok(TelegraphSampler::new(p, horizon)?.sample(seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkStats {
    pub threshold: f64,
    pub n_dark: usize,
    pub mean_dark: f64,
    /// Photon rate outside dark periods.
    pub mean_bright_rate: f64,
    /// Dark-period onsets per unit bright time.
    pub dark_rate: f64,
    pub bright_time: f64,
}

/// Dark periods are inter-photon gaps longer than `threshold` (default
/// twenty times the median gap).
pub fn dark_period_stats(r: &JumpRecord, threshold: Option<f64>) -> Result<DarkStats> {
    if r.events.len() < MIN_EVENTS {
        return Err(Error::Statistics(format!(
            "record has {} events; dark-period statistics need at least {MIN_EVENTS}",
            r.events.len()
        )));
    }
    let gaps: Vec<f64> = r.events.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let threshold = match threshold {
        Some(t) if t > 0.0 => t,
        Some(_) => return Err(contract("dark threshold must be positive")),
        None => DEFAULT_DARK_FACTOR * median(&gaps).expect("non-empty"),
    };
    let dark: Vec<f64> = gaps.iter().copied().filter(|&g| g > threshold).collect();
    let span = r.events.last().expect("non-empty").0 - r.events[0].0;
    let dark_time: f64 = dark.iter().sum();
    let bright_time = span - dark_time;
    let bright_photons = (gaps.len() - dark.len()) as f64;
    let n_dark = dark.len();
    Ok(DarkStats {
        threshold,
        n_dark,
        mean_dark: if n_dark > 0 { dark_time / n_dark as f64 } else { 0.0 },
        mean_bright_rate: bright_photons / bright_time,
        dark_rate: n_dark as f64 / bright_time,
        bright_time,
    })
}
