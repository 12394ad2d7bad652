#![allow(dead_code)]

use jumpkit::beables::ViableFamily;
use jumpkit::{Operator, StateVector, C64};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> Operator {
    let a = gaussian_matrix(rng, n);
    Operator::hermitian((&a + a.adjoint()) * C64::new(0.5, 0.0)).unwrap()
}

pub fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<C64> {
    gaussian_matrix(rng, n).qr().q()
}

pub fn random_state(rng: &mut ChaCha8Rng, n: usize) -> StateVector {
    let v: Vec<C64> = (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    StateVector::new(v).unwrap().normalized().unwrap()
}

/// Splits the columns of a random unitary into blocks of the given ranks.
pub fn random_family(rng: &mut ChaCha8Rng, ranks: &[usize]) -> ViableFamily {
    let n: usize = ranks.iter().sum();
    let u = random_unitary(rng, n);
    let mut start = 0;
    let mut bases = Vec::new();
    for &r in ranks {
        bases.push(u.columns(start, r).into_owned());
        start += r;
    }
    let labels = (0..ranks.len()).map(|k| format!("S{k}")).collect();
    ViableFamily::from_bases(labels, bases).unwrap()
}
