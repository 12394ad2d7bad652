use jumpkit::decay::*;
use jumpkit::pilot::TimeGrid;
use jumpkit::C64;

fn chain() -> DecayModel {
    DecayModel::new(0.1, 0.0, 400, 1.0).unwrap()
}

#[test]
fn volterra_matches_direct_survival() {
    let m = chain();
    let grid = TimeGrid::uniform(0.0, 190.0, 1900).unwrap();
    let k = dispersal_kernel(&m, &grid).unwrap();
    let fv = survival_volterra(&k, m.epsilon, m.e0, &grid).unwrap();
    let fd = survival_direct(&m, &grid).unwrap();
    let worst = fv.iter().zip(&fd).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    println!("max |Δf| = {worst:e}");
    assert!(worst < 1e-3);
}

#[test]
fn gamma_matches_band_edge_formula_and_decay_rate() {
    let m = chain();
    let grid = TimeGrid::uniform(0.0, 190.0, 1900).unwrap();
    let k = dispersal_kernel(&m, &grid).unwrap();
    let gamma = gamma_estimate(&k, m.epsilon).unwrap();
    // semi-infinite chain at band centre: ∫χ = 1/g exactly
    assert!((gamma - C64::new(0.01, 0.0)).norm() < 2e-4, "{gamma}");
    let f = survival_direct(&m, &grid).unwrap();
    let rate = fitted_decay_rate(grid.times(), &f, 20.0, 190.0).unwrap();
    println!("Γ = {gamma}, fitted {rate}, tau_eff {}", k.tau_eff);
    assert!((rate - 2.0 * gamma.re).abs() < 0.15 * rate);
}

#[test]
fn one_way_rates_after_dispersal() {
    let m = chain();
    let grid = TimeGrid::uniform(0.0, 190.0, 380).unwrap();
    let pilot = m.pilot(&grid).unwrap();
    let f: Vec<C64> = survival_from_pilot(&pilot);
    let fitted = fitted_decay_rate(grid.times(), &f, 20.0, 190.0).unwrap();
    for t in [40.0, 80.0, 150.0] {
        let r = decay_bell_rates(&m, &pilot, t).unwrap();
        println!("t={t}: T_0d={:e} T_d0={:e} fitted={fitted:e}", r.t_0d, r.t_d0);
        assert!(r.t_0d < 1e-3 * r.t_d0);
        assert!((r.t_d0 - fitted).abs() < 0.15 * fitted);
    }
}

#[test]
fn refined_pointer_only_feeds_first_site() {
    let m = chain();
    let grid = TimeGrid::uniform(0.0, 100.0, 100).unwrap();
    let pilot = m.pilot(&grid).unwrap();
    let rates = refined_jump_target(&m, &pilot, 60.0).unwrap();
    assert!(rates[1] > 0.0);
    assert!(rates[2..].iter().all(|&r| r.abs() < 1e-10));
}

#[test]
fn survival_modulus_follows_gamma() {
    let m = chain();
    let grid = TimeGrid::uniform(0.0, 60.0, 600).unwrap();
    let k = dispersal_kernel(&m, &grid).unwrap();
    let gamma = gamma_estimate(&k, m.epsilon).unwrap();
    let f = survival_direct(&m, &grid).unwrap();
    for (t, a) in grid.times().iter().zip(&f).filter(|(t, _)| **t > 5.0 && **t < 50.0) {
        let want = (-gamma.re * t).exp();
        assert!((a.norm() - want).abs() < 0.05 * want, "t={t}");
    }
}

#[test]
fn short_time_loss_is_quadratic() {
    let m = chain();
    let grid = TimeGrid::uniform(0.0, 0.05, 5).unwrap();
    let f = survival_direct(&m, &grid).unwrap();
    for (t, a) in grid.times().iter().zip(&f).skip(1) {
        let lost = 1.0 - a.norm_sqr();
        assert!((lost / (m.epsilon * t).powi(2) - 1.0).abs() < 1e-2);
    }
}

#[test]
fn visible_decay_times_are_exponential() {
    use jumpkit::beables::{VisibleSampler, DEFAULT_P_FLOOR};
    use jumpkit::stats::{ks_critical_1pct, ks_statistic_censored};

    let m = chain();
    let horizon = 190.0;
    let grid = TimeGrid::uniform(0.0, horizon, 1900).unwrap();
    let pilot = m.pilot(&grid).unwrap();
    let fam = m.two_block_family().unwrap();
    let sched = m.schedule();
    let sampler = VisibleSampler::new(&pilot, &fam, &sched, DEFAULT_P_FLOOR).unwrap();
    let f = survival_from_pilot(&pilot);
    let rate = fitted_decay_rate(grid.times(), &f, 20.0, horizon).unwrap();
    let n = 10_000;
    let times: Vec<f64> = (0..n as u64)
        .map(|s| sampler.jumps(s).unwrap().first().map_or(f64::INFINITY, |j| j.t))
        .collect();
    let exact = |t: f64| {
        let k = ((t / grid.times()[1]) as usize).min(grid.len() - 2);
        let w = (t - grid.times()[k]) / (grid.times()[k + 1] - grid.times()[k]);
        1.0 - (f[k].norm_sqr() * (1.0 - w) + f[k + 1].norm_sqr() * w)
    };
    let d_exp = ks_statistic_censored(&times, horizon, |t| 1.0 - (-rate * t).exp());
    let d_exact = ks_statistic_censored(&times, horizon, exact);
    println!("KS exponential {d_exp:.4}, exact law {d_exact:.4}, critical {:.4}", ks_critical_1pct(n));
    assert!(d_exp < ks_critical_1pct(n));
    assert!(d_exact < ks_critical_1pct(n));
}

