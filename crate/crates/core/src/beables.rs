//! Viable-subspace families, Born probabilities, Bell transition currents and
//! rates, and stochastic sampling of the visible state.
//!
//! A family is stored as orthonormal bases `V_m` (dim × rank) of its blocks, so
//! `Π_m = V_m V_m†` never has to be materialised for large families. Label
//! indices are the block positions `0..M`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, contract, Error, Result};
use crate::hilbert::{max_abs, Operator, Projector, StateVector, C64};
use crate::pilot::{evolve, HamiltonianSchedule, Method, TimeGrid, Trajectory};

pub const FAMILY_TOL: f64 = 1e-10;
pub const ANTISYMMETRY_TOL: f64 = 1e-10;
pub const DEFAULT_P_FLOOR: f64 = 1e-12;
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;
/// Largest accepted per-step jump probability before a step is subdivided.
pub const MAX_STEP_JUMP_PROBABILITY: f64 = 0.1;
const MAX_SUBDIVISION_LEVEL: u32 = 12;
/// Schmidt weights below this are treated as zero and left to the residual block.
const SCHMIDT_ZERO: f64 = 1e-12;

type BasisFn = Arc<dyn Fn(f64) -> Vec<DMatrix<C64>> + Send + Sync>;

#[derive(Clone)]
enum Source {
    Static(Vec<DMatrix<C64>>),
    TimeDependent(BasisFn),
}

/// A complete, mutually orthogonal family of projectors `Π_m(t)`.
#[derive(Clone)]
pub struct ViableFamily {
    dim: usize,
    labels: Vec<String>,
    source: Source,
}

impl fmt::Debug for ViableFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ViableFamily")
            .field("dim", &self.dim)
            .field("labels", &self.labels)
            .field("time_dependent", &self.is_time_dependent())
            .finish()
    }
}

impl ViableFamily {
    /// Static family from orthonormal block bases.
    pub fn from_bases(labels: Vec<String>, bases: Vec<DMatrix<C64>>) -> Result<Self> {
        let dim = bases.first().map(|b| b.nrows()).ok_or_else(|| contract("family needs at least one block"))?;
        check_dim(bases.len(), labels.len())?;
        validate_bases(dim, &bases)?;
        Ok(Self { dim, labels, source: Source::Static(bases) })
    }

    /// Static family from projector matrices.
    pub fn from_projectors(labels: Vec<String>, projectors: &[Projector]) -> Result<Self> {
        let bases = projectors.iter().map(range_basis).collect::<Result<Vec<_>>>()?;
        Self::from_bases(labels, bases)
    }

    /// Static family of coordinate blocks; each group lists the basis indices it spans.
    pub fn coordinate(dim: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let bases = groups
            .iter()
            .map(|g| {
                let mut b = DMatrix::<C64>::zeros(dim, g.len());
                for (col, &k) in g.iter().enumerate() {
                    if k >= dim {
                        return Err(contract(format!("basis index {k} out of range for dim {dim}")));
                    }
                    b[(k, col)] = C64::new(1.0, 0.0);
                }
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = (0..groups.len()).map(|m| m.to_string()).collect();
        Self::from_bases(labels, bases)
    }

    /// One block per basis state.
    pub fn basis_states(dim: usize) -> Result<Self> {
        Self::coordinate(dim, &(0..dim).map(|k| vec![k]).collect::<Vec<_>>())
    }

    /// A family whose block bases are supplied at every time; validated whenever sampled.
    pub fn time_dependent<F>(dim: usize, labels: Vec<String>, bases: F) -> Self
    where
        F: Fn(f64) -> Vec<DMatrix<C64>> + Send + Sync + 'static,
    {
        Self { dim, labels, source: Source::TimeDependent(Arc::new(bases)) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self.source, Source::TimeDependent(_))
    }

    /// Block bases at `t`, validated for completeness and orthogonality.
    pub fn bases_at(&self, t: f64) -> Result<Vec<DMatrix<C64>>> {
        match &self.source {
            Source::Static(b) => Ok(b.clone()),
            Source::TimeDependent(f) => {
                let b = f(t);
                check_dim(self.labels.len(), b.len())?;
                validate_bases(self.dim, &b)?;
                Ok(b)
            }
        }
    }

    fn with_bases<R>(&self, t: f64, f: impl FnOnce(&[DMatrix<C64>]) -> Result<R>) -> Result<R> {
        match &self.source {
            Source::Static(b) => f(b),
            Source::TimeDependent(_) => f(&self.bases_at(t)?),
        }
    }

    pub fn projectors_at(&self, t: f64) -> Result<Vec<Projector>> {
        self.bases_at(t)?.iter().map(Projector::from_orthonormal_columns).collect()
    }

    pub fn ranks(&self, t: f64) -> Result<Vec<usize>> {
        self.with_bases(t, |b| Ok(b.iter().map(|v| v.ncols()).collect()))
    }
}

/// Orthonormal basis of the range of a projector.
fn range_basis(p: &Projector) -> Result<DMatrix<C64>> {
    let eig = SymmetricEigen::new(p.matrix().clone());
    let cols: Vec<usize> = (0..p.dim()).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    let mut b = DMatrix::<C64>::zeros(p.dim(), cols.len());
    for (j, &k) in cols.iter().enumerate() {
        b.set_column(j, &eig.eigenvectors.column(k));
    }
    Ok(b)
}

fn concat_columns(dim: usize, bases: &[DMatrix<C64>]) -> DMatrix<C64> {
    let total: usize = bases.iter().map(|b| b.ncols()).sum();
    let mut w = DMatrix::<C64>::zeros(dim, total);
    let mut col = 0;
    for b in bases {
        for j in 0..b.ncols() {
            w.set_column(col, &b.column(j));
            col += 1;
        }
    }
    w
}

fn validate_bases(dim: usize, bases: &[DMatrix<C64>]) -> Result<()> {
    for b in bases {
        check_dim(dim, b.nrows())?;
    }
    let w = concat_columns(dim, bases);
    if w.ncols() != dim {
        return Err(contract(format!("family ranks sum to {} but dim is {dim}: not complete", w.ncols())));
    }
    let gram = w.adjoint() * &w;
    let dev = max_abs(&(gram - DMatrix::<C64>::identity(dim, dim)));
    if dev >= FAMILY_TOL {
        return Err(contract(format!("family is not complete and orthogonal (deviation {dev:e})")));
    }
    Ok(())
}

/// `max|ΣΠ_m − I|` and `max_{m≠n} max|Π_mΠ_n|` of a list of projectors.
pub fn family_defects(projectors: &[Projector]) -> (f64, f64) {
    let dim = projectors[0].dim();
    let mut sum = DMatrix::<C64>::zeros(dim, dim);
    for p in projectors {
        sum += p.matrix();
    }
    let completeness = max_abs(&(sum - DMatrix::<C64>::identity(dim, dim)));
    let mut orth = 0.0f64;
    for (m, pm) in projectors.iter().enumerate() {
        for (n, pn) in projectors.iter().enumerate() {
            if m != n {
                orth = orth.max(max_abs(&(pm.matrix() * pn.matrix())));
            }
        }
    }
    (completeness, orth)
}

fn block_coefficients(bases: &[DMatrix<C64>], psi: &DVector<C64>) -> Vec<DVector<C64>> {
    bases.iter().map(|b| b.adjoint() * psi).collect()
}

fn check_normalized(psi: &StateVector) -> Result<()> {
    if !psi.is_normalized() {
        return Err(contract(format!("pilot state must be normalized (norm {})", psi.norm())));
    }
    Ok(())
}

/// `P_m = ‖Π_m ψ‖²`.
pub fn born_probabilities(psi: &StateVector, fam: &ViableFamily, t: f64) -> Result<Vec<f64>> {
    check_dim(fam.dim(), psi.dim())?;
    check_normalized(psi)?;
    fam.with_bases(t, |bases| Ok(born_from_bases(bases, psi.amplitudes())))
}

fn born_from_bases(bases: &[DMatrix<C64>], psi: &DVector<C64>) -> Vec<f64> {
    block_coefficients(bases, psi).iter().map(|c| c.norm_squared()).collect()
}

/// Antisymmetric probability current `J_mn` between blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentMatrix(DMatrix<f64>);

impl CurrentMatrix {
    pub fn new(j: DMatrix<f64>) -> Result<Self> {
        if !j.is_square() {
            return Err(contract("current matrix must be square"));
        }
        Ok(Self(j))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.0[(m, n)]
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    /// `max|J + Jᵀ|`.
    pub fn antisymmetry_defect(&self) -> f64 {
        (&self.0 + self.0.transpose()).iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    /// `Σ_n J_mn`, the rate of change of `P_m`.
    pub fn net_inflow(&self, m: usize) -> f64 {
        self.0.row(m).sum()
    }
}

/// Bell current at time `t`.
///
/// The Hamiltonian part is `2 Im <ψ|Π_m H Π_n|ψ>`. For time-dependent families
/// the projector motion adds `Re <ψ|(Π̇_m Π_n − Π̇_n Π_m)|ψ>`, which equals
/// `2 Re <ψ|Π̇_m Π_n|ψ>` and keeps `J` exactly antisymmetric under the central
/// difference `Π̇_m ≈ (Π_m(t+δ) − Π_m(t−δ)) / 2δ`.
pub fn current_matrix(psi: &StateVector, h: &Operator, fam: &ViableFamily, t: f64, dt_fd: f64) -> Result<CurrentMatrix> {
    check_dim(fam.dim(), psi.dim())?;
    check_dim(fam.dim(), h.dim())?;
    check_normalized(psi)?;
    let bases = fam.bases_at_ref(t)?;
    let mut j = hamiltonian_current(&bases, h.matrix(), psi.amplitudes());

    if fam.is_time_dependent() {
        if !(dt_fd > 0.0 && dt_fd.is_finite()) {
            return Err(contract("dt_fd must be positive for a time-dependent family"));
        }
        let plus = fam.bases_at(t + dt_fd)?;
        let minus = fam.bases_at(t - dt_fd)?;
        let psi = psi.amplitudes();
        let projected: Vec<DVector<C64>> = bases.iter().map(|b| b * (b.adjoint() * psi)).collect();
        let m_len = bases.len();
        // d[m][n] = <ψ|Π̇_m Π_n|ψ>
        let mut d = DMatrix::<C64>::zeros(m_len, m_len);
        for m in 0..m_len {
            let cp = plus[m].adjoint() * psi;
            let cm = minus[m].adjoint() * psi;
            for n in 0..m_len {
                let fwd = cp.dotc(&(plus[m].adjoint() * &projected[n]));
                let bwd = cm.dotc(&(minus[m].adjoint() * &projected[n]));
                d[(m, n)] = (fwd - bwd) / (2.0 * dt_fd);
            }
        }
        for m in 0..m_len {
            for n in 0..m_len {
                if m != n {
                    j[(m, n)] += d[(m, n)].re - d[(n, m)].re;
                }
            }
        }
    }

    let current = CurrentMatrix(j);
    let scale = 1.0 + h.matrix().iter().map(|a| a.norm()).fold(0.0, f64::max);
    let defect = current.antisymmetry_defect();
    if defect >= ANTISYMMETRY_TOL * scale {
        return Err(contract(format!("current matrix is not antisymmetric (defect {defect:e})")));
    }
    Ok(current)
}

impl ViableFamily {
    fn bases_at_ref(&self, t: f64) -> Result<std::borrow::Cow<'_, [DMatrix<C64>]>> {
        match &self.source {
            Source::Static(b) => Ok(std::borrow::Cow::Borrowed(b.as_slice())),
            Source::TimeDependent(_) => Ok(std::borrow::Cow::Owned(self.bases_at(t)?)),
        }
    }
}

fn hamiltonian_current(bases: &[DMatrix<C64>], h: &DMatrix<C64>, psi: &DVector<C64>) -> DMatrix<f64> {
    let m_len = bases.len();
    let dim = psi.len();
    let mut phi = DMatrix::<C64>::zeros(dim, m_len);
    for (m, b) in bases.iter().enumerate() {
        phi.set_column(m, &(b * (b.adjoint() * psi)));
    }
    let a = phi.adjoint() * (h * &phi);
    DMatrix::from_fn(m_len, m_len, |m, n| if m == n { 0.0 } else { 2.0 * a[(m, n)].im })
}

/// Jump rates `T_mn` (from block `n` to block `m`).
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix(DMatrix<f64>);

impl RateMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Rate of jumping `from -> to`.
    pub fn rate(&self, to: usize, from: usize) -> f64 {
        self.0[(to, from)]
    }

    /// Total rate of leaving `from`.
    pub fn out_rate(&self, from: usize) -> f64 {
        self.0.column(from).sum()
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    /// `max_{m<n} min(T_mn, T_nm)`; zero for Bell rates.
    pub fn two_way_defect(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in (a + 1)..n {
                worst = worst.max(self.0[(a, b)].min(self.0[(b, a)]));
            }
        }
        worst
    }
}

/// `T_mn = max(J_mn, 0) / P_n`, and zero from sources with `P_n < p_floor`.
pub fn bell_rates(j: &CurrentMatrix, p: &[f64], p_floor: f64) -> Result<RateMatrix> {
    check_dim(j.len(), p.len())?;
    let n = p.len();
    Ok(RateMatrix(DMatrix::from_fn(n, n, |m, src| {
        if m == src || p[src] < p_floor {
            0.0
        } else {
            j.get(m, src).max(0.0) / p[src]
        }
    })))
}

/// Bell rates for the pilot state at `t`.
pub fn rates_at(psi: &StateVector, h: &Operator, fam: &ViableFamily, t: f64, dt_fd: f64, p_floor: f64) -> Result<RateMatrix> {
    let j = current_matrix(psi, h, fam, t, dt_fd)?;
    let p = born_probabilities(psi, fam, t)?;
    bell_rates(&j, &p, p_floor)
}

fn grid_spacing(times: &[f64]) -> f64 {
    (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
}

/// Largest `|dP_m/dt − Σ_n (w_mn − w_nm)|` over interior grid points, with
/// `w_mn = T_mn P_n` and `dP_m/dt` a central difference of the Born probabilities.
pub fn master_residual(pilot: &Trajectory, fam: &ViableFamily, h: &HamiltonianSchedule) -> Result<f64> {
    master_residual_with_floor(pilot, fam, h, DEFAULT_P_FLOOR)
}

pub fn master_residual_with_floor(pilot: &Trajectory, fam: &ViableFamily, h: &HamiltonianSchedule, p_floor: f64) -> Result<f64> {
    let times = pilot.times();
    if times.len() < 3 {
        return Err(contract("master residual needs at least 3 grid points"));
    }
    let dt_fd = grid_spacing(times);
    let probs = times
        .iter()
        .zip(pilot.states())
        .map(|(&t, s)| born_probabilities(s, fam, t))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for k in 1..times.len() - 1 {
        let t = times[k];
        let op = h.at(t)?;
        let rates = rates_at(pilot.state(k), &op, fam, t, dt_fd, p_floor)?;
        let p = &probs[k];
        for m in 0..fam.len() {
            let deriv = (probs[k + 1][m] - probs[k - 1][m]) / (times[k + 1] - times[k - 1]);
            let flow: f64 = (0..fam.len()).map(|n| rates.rate(m, n) * p[n] - rates.rate(n, m) * p[m]).sum();
            worst = worst.max((deriv - flow).abs());
        }
    }
    Ok(worst)
}

/// A Schmidt-adapted family together with the weight carried by each block.
#[derive(Debug, Clone)]
pub struct SchmidtFamily {
    pub family: ViableFamily,
    /// Marginal eigenvalue `λ` of each non-residual block, in block order.
    pub eigenvalues: Vec<f64>,
    /// Multiplicity of `λ` in the marginal spectrum.
    pub multiplicities: Vec<usize>,
}

impl SchmidtFamily {
    /// Index of the residual block (always last).
    pub fn residual_index(&self) -> usize {
        self.family.len() - 1
    }
}

/// Family of products of marginal eigenspaces `S_{1λ} ⊗ S_{2λ}`, one block per
/// distinct nonzero eigenvalue `λ` of `ρ_A`, plus a residual block completing
/// the identity (possibly of rank zero).
pub fn schmidt_family(psi: &StateVector, split: (usize, usize), degeneracy_tol: f64) -> Result<SchmidtFamily> {
    let (da, db) = split;
    check_dim(da * db, psi.dim())?;
    check_normalized(psi)?;
    // M_ij = ψ_{i·db + j}
    let m = DMatrix::from_fn(da, db, |i, j| psi.get(i * db + j));
    let rho_a = &m * m.adjoint();
    let eig = SymmetricEigen::new(rho_a);
    let mut order: Vec<usize> = (0..da).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambdas: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let u = DMatrix::from_fn(da, da, |i, a| eig.eigenvectors[(i, order[a])]);

    let rank = lambdas.iter().take_while(|&&l| l > SCHMIDT_ZERO).count();

    // partner vectors w_a = (U†M)_a / √λ_a, completed to a basis of B
    let partners = u.adjoint() * &m;
    let mut w_cols: Vec<DVector<C64>> = (0..rank)
        .map(|a| partners.row(a).transpose() / C64::new(lambdas[a].sqrt(), 0.0))
        .collect();
    complete_basis(&mut w_cols, db);

    // group nonzero eigenvalues
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for a in 0..rank {
        match groups.last_mut() {
            Some(g) if (lambdas[g[0]] - lambdas[a]) <= degeneracy_tol * lambdas[g[0]] => g.push(a),
            _ => groups.push(vec![a]),
        }
    }
    let mut group_of = vec![usize::MAX; da.max(db)];
    for (gi, g) in groups.iter().enumerate() {
        for &a in g {
            group_of[a] = gi;
        }
    }

    let product = |a: usize, b: usize| -> DVector<C64> {
        DVector::from_fn(da * db, |idx, _| u[(idx / db, a)] * w_cols[b][idx % db])
    };
    let mut bases = Vec::with_capacity(groups.len() + 1);
    let mut eigenvalues = Vec::with_capacity(groups.len());
    let mut multiplicities = Vec::with_capacity(groups.len());
    for g in &groups {
        let mut b = DMatrix::<C64>::zeros(da * db, g.len() * g.len());
        let mut col = 0;
        for &a in g {
            for &bb in g {
                b.set_column(col, &product(a, bb));
                col += 1;
            }
        }
        bases.push(b);
        eigenvalues.push(g.iter().map(|&a| lambdas[a]).sum::<f64>() / g.len() as f64);
        multiplicities.push(g.len());
    }
    let mut residual_cols = Vec::new();
    for a in 0..da {
        for b in 0..db {
            let same = a < rank && b < rank && group_of[a] == group_of[b];
            if !same {
                residual_cols.push(product(a, b));
            }
        }
    }
    let residual = if residual_cols.is_empty() {
        DMatrix::<C64>::zeros(da * db, 0)
    } else {
        DMatrix::from_columns(&residual_cols)
    };
    bases.push(residual);

    let mut labels: Vec<String> = eigenvalues.iter().map(|l| format!("lambda={l:.6}")).collect();
    labels.push("residual".into());
    Ok(SchmidtFamily { family: ViableFamily::from_bases(labels, bases)?, eigenvalues, multiplicities })
}

/// Extends orthonormal `cols` to a basis of `C^dim` by Gram–Schmidt over the
/// standard basis, taking at each pass the candidate with the largest remainder.
fn complete_basis(cols: &mut Vec<DVector<C64>>, dim: usize) {
    while cols.len() < dim {
        let mut best: Option<(f64, DVector<C64>)> = None;
        for k in 0..dim {
            let mut v = DVector::<C64>::zeros(dim);
            v[k] = C64::new(1.0, 0.0);
            for _ in 0..2 {
                for c in cols.iter() {
                    let proj = c.dotc(&v);
                    v -= c * proj;
                }
            }
            let n = v.norm();
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, v));
            }
        }
        let (n, v) = best.expect("dim > 0");
        cols.push(v / C64::new(n, 0.0));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub t: f64,
    pub from: usize,
    pub to: usize,
}

/// A sampled history of the visible block.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleTrajectory {
    pub times: Vec<f64>,
    pub labels: Vec<usize>,
    pub jumps: Vec<Jump>,
    pub seed: u64,
}

impl VisibleTrajectory {
    pub fn first_jump(&self) -> Option<&Jump> {
        self.jumps.first()
    }
}

/// Precomputed Bell rates along a pilot trajectory, reused for every seed.
pub struct VisibleSampler<'a> {
    pilot: &'a Trajectory,
    fam: &'a ViableFamily,
    h: &'a HamiltonianSchedule,
    p_floor: f64,
    dt_fd: f64,
    rates: Vec<RateMatrix>,
    born0: Vec<f64>,
}

impl<'a> VisibleSampler<'a> {
    pub fn new(pilot: &'a Trajectory, fam: &'a ViableFamily, h: &'a HamiltonianSchedule, p_floor: f64) -> Result<Self> {
        if pilot.len() < 2 {
            return Err(contract("visible sampling needs at least two grid points"));
        }
        check_dim(fam.dim(), h.dim())?;
        let times = pilot.times();
        let dt_fd = grid_spacing(times);
        let mut rates = Vec::with_capacity(times.len());
        for (k, &t) in times.iter().enumerate() {
            let op = h.at(t)?;
            rates.push(rates_at(pilot.state(k), &op, fam, t, dt_fd, p_floor)?);
        }
        let born0 = born_probabilities(pilot.state(0), fam, times[0])?;
        Ok(Self { pilot, fam, h, p_floor, dt_fd, rates, born0 })
    }

    /// Rates at grid point `k`.
    pub fn rates(&self, k: usize) -> &RateMatrix {
        &self.rates[k]
    }

    pub fn sample(&self, seed: u64) -> Result<VisibleTrajectory> {
        let n = self.pilot.len();
        let mut labels = Vec::with_capacity(n);
        let jumps = self.walk(seed, None, |_, l| labels.push(l))?;
        Ok(VisibleTrajectory { times: self.pilot.times().to_vec(), labels, jumps, seed })
    }

    /// Like [`sample`](Self::sample), starting from a fixed label.
    pub fn sample_from(&self, seed: u64, start: usize) -> Result<VisibleTrajectory> {
        let mut labels = Vec::with_capacity(self.pilot.len());
        let jumps = self.walk(seed, Some(start), |_, l| labels.push(l))?;
        Ok(VisibleTrajectory { times: self.pilot.times().to_vec(), labels, jumps, seed })
    }

    /// Labels at the requested grid indices only.
    pub fn labels_at(&self, seed: u64, indices: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(indices.len());
        let mut next = 0;
        self.walk(seed, None, |k, l| {
            while next < indices.len() && indices[next] == k {
                out.push(l);
                next += 1;
            }
        })?;
        Ok(out)
    }

    /// Jumps only.
    pub fn jumps(&self, seed: u64) -> Result<Vec<Jump>> {
        self.walk(seed, None, |_, _| {})
    }

    fn walk(&self, seed: u64, start: Option<usize>, mut visit: impl FnMut(usize, usize)) -> Result<Vec<Jump>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times = self.pilot.times();
        let u0: f64 = rng.random();
        let mut label = match start {
            Some(l) if l < self.fam.len() => l,
            Some(l) => return Err(contract(format!("start label {l} out of range"))),
            None => pick(&self.born0, u0),
        };
        visit(0, label);
        let mut jumps = Vec::new();
        for k in 0..times.len() - 1 {
            let dt = times[k + 1] - times[k];
            let r = &self.rates[k];
            if r.out_rate(label) * dt < MAX_STEP_JUMP_PROBABILITY {
                let u: f64 = rng.random();
                if let Some(to) = destination(r, label, dt, u) {
                    jumps.push(Jump { t: times[k + 1], from: label, to });
                    label = to;
                }
            } else {
                let sub = self.subdivided_rates(k)?;
                let h = dt / sub.len() as f64;
                for (s, rs) in sub.iter().enumerate() {
                    let u: f64 = rng.random();
                    if let Some(to) = destination(rs, label, h, u) {
                        let t = if s + 1 == sub.len() { times[k + 1] } else { times[k] + (s + 1) as f64 * h };
                        jumps.push(Jump { t, from: label, to });
                        label = to;
                    }
                }
            }
            visit(k + 1, label);
        }
        Ok(jumps)
    }

    /// Rates at `2^j` equal substeps of interval `k`, with the smallest `j` for
    /// which every label's jump probability per substep stays below the bound.
    fn subdivided_rates(&self, k: usize) -> Result<Vec<RateMatrix>> {
        let times = self.pilot.times();
        let dt = times[k + 1] - times[k];
        for level in 1..=MAX_SUBDIVISION_LEVEL {
            let n = 1usize << level;
            let grid = TimeGrid::uniform(times[k], times[k + 1], n)?;
            let method = if self.h.is_static() && self.h.hermitian_contract() { Method::EigExact } else { Method::Rk4 };
            let sub = evolve(self.h, self.pilot.state(k), &grid, method)?;
            let mut rates = Vec::with_capacity(n);
            let mut ok = true;
            for s in 0..n {
                let t = grid.times()[s];
                let op = self.h.at(t)?;
                let psi = sub.state(s).normalized()?;
                let r = rates_at(&psi, &op, self.fam, t, self.dt_fd, self.p_floor)?;
                if (0..self.fam.len()).any(|m| r.out_rate(m) * dt / n as f64 >= MAX_STEP_JUMP_PROBABILITY) {
                    ok = false;
                    break;
                }
                rates.push(r);
            }
            if ok {
                return Ok(rates);
            }
        }
        Err(Error::StepSize(format!(
            "jump probability per step stays above {MAX_STEP_JUMP_PROBABILITY} after {MAX_SUBDIVISION_LEVEL} subdivisions near t = {}",
            times[k]
        )))
    }
}

/// Cumulative-sum inversion over destinations in ascending label order.
fn destination(r: &RateMatrix, from: usize, dt: f64, u: f64) -> Option<usize> {
    let mut acc = 0.0;
    for to in 0..r.len() {
        if to == from {
            continue;
        }
        acc += r.rate(to, from) * dt;
        if u < acc {
            return Some(to);
        }
    }
    None
}

/// Index drawn from `weights` by inverting the cumulative sum at `u`.
fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding leaves u just above the total
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// One seeded visible trajectory along `pilot`.
pub fn sample_visible(
    pilot: &Trajectory,
    fam: &ViableFamily,
    h: &HamiltonianSchedule,
    seed: u64,
    p_floor: f64,
) -> Result<VisibleTrajectory> {
    VisibleSampler::new(pilot, fam, h, p_floor)?.sample(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn two_level() -> ViableFamily {
        ViableFamily::basis_states(2).unwrap()
    }

    fn rabi_state(theta: f64) -> StateVector {
        StateVector::new(vec![c(theta.cos(), 0.0), c(0.0, -theta.sin())]).unwrap()
    }

    #[test]
    fn born_examples() {
        let fam = two_level();
        let p = born_probabilities(&StateVector::basis(2, 0).unwrap(), &fam, 0.0).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        let s = 1.0 / 2f64.sqrt();
        let p = born_probabilities(&StateVector::from_real(&[s, s]).unwrap(), &fam, 0.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn from_projectors_round_trip() {
        let ps = vec![
            Projector::new(DMatrix::from_element(2, 2, c(0.5, 0.0))).unwrap(),
            Projector::new(DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(-0.5, 0.0), c(-0.5, 0.0), c(0.5, 0.0)])).unwrap(),
        ];
        let fam = ViableFamily::from_projectors(vec!["+".into(), "-".into()], &ps).unwrap();
        let back = fam.projectors_at(0.0).unwrap();
        for (a, b) in ps.iter().zip(&back) {
            assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-12);
        }
    }

    #[test]
    fn incomplete_family_rejected() {
        let r = ViableFamily::coordinate(3, &[vec![0], vec![1]]);
        assert!(matches!(r, Err(Error::Contract(_))));
        let overlap = DMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let tilted = DMatrix::from_column_slice(2, 1, &[c(0.6, 0.0), c(0.8, 0.0)]);
        assert!(ViableFamily::from_bases(vec!["a".into(), "b".into()], vec![overlap, tilted]).is_err());
    }

    #[test]
    fn current_vanishes_for_block_diagonal_h() {
        let h = Operator::diagonal(&[0.3, -1.0, 2.0]).unwrap();
        let fam = ViableFamily::coordinate(3, &[vec![0, 1], vec![2]]).unwrap();
        let psi = StateVector::new(vec![c(0.5, 0.1), c(0.2, -0.6), c(0.0, 0.5)]).unwrap().normalized().unwrap();
        let j = current_matrix(&psi, &h, &fam, 0.0, 1e-3).unwrap();
        assert!(j.matrix().iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn rabi_current_direction() {
        let fam = two_level();
        let j = current_matrix(&rabi_state(PI / 4.0), &Operator::sigma_x(), &fam, 0.0, 1e-3).unwrap();
        assert!((j.get(1, 0) - 1.0).abs() < 1e-14);
        assert!((j.get(0, 1) + 1.0).abs() < 1e-14);
        let j = current_matrix(&rabi_state(3.0 * PI / 4.0), &Operator::sigma_x(), &fam, 0.0, 1e-3).unwrap();
        assert!((j.get(1, 0) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn bell_rate_examples() {
        let zero = CurrentMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        let t = bell_rates(&zero, &[0.5, 0.5], DEFAULT_P_FLOOR).unwrap();
        assert!(t.matrix().iter().all(|&x| x == 0.0));

        let j = CurrentMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        let t = bell_rates(&j, &[0.5, 0.5], DEFAULT_P_FLOOR).unwrap();
        assert_eq!(t.rate(1, 0), 2.0);
        assert_eq!(t.rate(0, 1), 0.0);

        let t = bell_rates(&j, &[1e-14, 1.0], 1e-12).unwrap();
        assert_eq!(t.rate(1, 0), 0.0);
    }

    #[test]
    fn time_dependent_family_current_tracks_rotation() {
        // Rotating basis; ψ fixed, H = 0: the current comes from projector motion only.
        let fam = ViableFamily::time_dependent(2, vec!["a".into(), "b".into()], |t| {
            let (s, co) = t.sin_cos();
            vec![
                DMatrix::from_column_slice(2, 1, &[c(co, 0.0), c(s, 0.0)]),
                DMatrix::from_column_slice(2, 1, &[c(-s, 0.0), c(co, 0.0)]),
            ]
        });
        let psi = StateVector::basis(2, 0).unwrap();
        let h = Operator::zeros(2).unwrap();
        let t = 0.4;
        let j = current_matrix(&psi, &h, &fam, t, 1e-4).unwrap();
        // P_a = cos²t, dP_a/dt = -sin 2t
        assert!((j.net_inflow(0) + (2.0 * t).sin()).abs() < 1e-7);
        assert!(j.antisymmetry_defect() < 1e-12);
    }

    #[test]
    fn master_residual_zero_for_static_state() {
        let h = HamiltonianSchedule::constant(Operator::zeros(2).unwrap());
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let traj = evolve(&h, &psi0, &grid, Method::EigExact).unwrap();
        assert!(master_residual(&traj, &two_level(), &h).unwrap() < 1e-12);
    }

    #[test]
    fn master_residual_needs_three_points() {
        let h = HamiltonianSchedule::constant(Operator::zeros(2).unwrap());
        let psi0 = StateVector::basis(2, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 1).unwrap();
        let traj = evolve(&h, &psi0, &grid, Method::EigExact).unwrap();
        assert!(matches!(master_residual(&traj, &two_level(), &h), Err(Error::Contract(_))));
    }

    #[test]
    fn visible_constant_under_null_hamiltonian() {
        let h = HamiltonianSchedule::constant(Operator::zeros(2).unwrap());
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 100).unwrap();
        let traj = evolve(&h, &psi0, &grid, Method::EigExact).unwrap();
        for seed in 0..20 {
            let v = sample_visible(&traj, &two_level(), &h, seed, DEFAULT_P_FLOOR).unwrap();
            assert!(v.jumps.is_empty());
            assert!(v.labels.iter().all(|&l| l == v.labels[0]));
        }
    }

    #[test]
    fn visible_is_deterministic_per_seed() {
        let h = HamiltonianSchedule::constant(Operator::sigma_x());
        let psi0 = StateVector::basis(2, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.5, 1500).unwrap();
        let traj = evolve(&h, &psi0, &grid, Method::EigExact).unwrap();
        let fam = two_level();
        let sampler = VisibleSampler::new(&traj, &fam, &h, DEFAULT_P_FLOOR).unwrap();
        let a = sampler.sample(42).unwrap();
        let b = sampler.sample(42).unwrap();
        assert_eq!(a, b);
        // labels change exactly at jumps
        let changes = a.labels.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, a.jumps.len());
        for jump in &a.jumps {
            let k = a.times.iter().position(|&t| t == jump.t).unwrap();
            assert_eq!(a.labels[k], jump.to);
            assert_eq!(a.labels[k - 1], jump.from);
        }
    }

    #[test]
    fn coarse_steps_are_subdivided() {
        // 2 tan t rate near t = 1.5 needs subdivision on a 0.05 grid
        let h = HamiltonianSchedule::constant(Operator::sigma_x());
        let psi0 = StateVector::basis(2, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.5, 30).unwrap();
        let traj = evolve(&h, &psi0, &grid, Method::EigExact).unwrap();
        let fam = two_level();
        let sampler = VisibleSampler::new(&traj, &fam, &h, DEFAULT_P_FLOOR).unwrap();
        let n = 4000;
        let mut in_second = 0;
        for seed in 0..n {
            if sampler.labels_at(seed, &[30]).unwrap()[0] == 1 {
                in_second += 1;
            }
        }
        let p2 = 1.5f64.sin().powi(2);
        let frac = in_second as f64 / n as f64;
        let se = (p2 * (1.0 - p2) / n as f64).sqrt();
        assert!((frac - p2).abs() < 4.0 * se + 0.01, "frac {frac} vs {p2}");
    }
}
