use std::fs;

use rayon::prelude::*;

use jumpkit::beables::{ViableFamily, VisibleSampler, DEFAULT_P_FLOOR};
use jumpkit::decay::{
    decay_bell_rates, dispersal_kernel, fitted_decay_rate, gamma_estimate, survival_from_pilot, survival_volterra,
    DecayModel,
};
use jumpkit::ion::{
    dark_period_stats, no_jump_amplitudes, photon_number_distribution, IonParams, JumpRecord, TelegraphSampler,
    GROUND, RED, SHELF,
};
use jumpkit::pilot::evolve;
use jumpkit::stats::binomial_se;
use jumpkit::zeno::{watched_pot, watched_pot_unconditional, Dissection, MAX_BRANCH_MEASUREMENTS};
use jumpkit::{HamiltonianSchedule, Method, Operator, Projector, StateVector, TimeGrid, C64};

use crate::config::{parse_dissection, DissectionSpec, Experiment, ExperimentConfig};
use crate::output::{Cell, Table};
use crate::{row, CliError};

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<Table>, CliError> {
    match cfg.experiment {
        Experiment::Zeno => zeno(cfg),
        Experiment::Decay => decay(cfg),
        Experiment::Ion => ion(cfg),
        Experiment::BeablesDemo => beables_demo(cfg),
    }
}

fn rabi(omega: f64) -> (Operator, StateVector, Projector) {
    let h = Operator::sigma_x().scaled(omega);
    let psi0 = StateVector::basis(2, 0).expect("dim 2");
    let pi_a = Projector::diagonal(&[true, false]).expect("diagonal");
    (h, psi0, pi_a)
}

fn read_dissection(spec: &DissectionSpec, total: f64) -> Result<Dissection, CliError> {
    match spec {
        DissectionSpec::Uniform(n) => Ok(Dissection::uniform(total, *n)?),
        DissectionSpec::File(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
            let times = text
                .split_whitespace()
                .map(|w| w.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Config(format!("key `dissection`: {} must hold numbers", path.display())))?;
            Dissection::new(times).map_err(|e| CliError::Config(format!("key `dissection`: {e}")))
        }
    }
}

fn zeno(cfg: &ExperimentConfig) -> Result<Vec<Table>, CliError> {
    let omega = cfg.float("omega");
    let total = cfg.float("total");
    let (h, psi0, pi_a) = rabi(omega);
    let dissections = if cfg.text("dissection").is_empty() {
        cfg.uint_list("N_list").into_iter().map(|n| Dissection::uniform(total, n)).collect::<Result<Vec<_>, _>>()?
    } else {
        vec![read_dissection(&parse_dissection(cfg.text("dissection"))?, total)?]
    };
    let mut t = Table::new("survival", &["n", "t_final", "p", "p_closed_form", "p_unconditional"]);
    for d in &dissections {
        let n = d.intervals();
        let p = watched_pot(&h, &psi0, &pi_a, d)?[n];
        let closed: f64 = d.times().windows(2).map(|w| (omega * (w[1] - w[0])).cos().powi(2)).product();
        let uncond = if n <= MAX_BRANCH_MEASUREMENTS {
            Cell::F(watched_pot_unconditional(&h, &psi0, &pi_a, d)?[n])
        } else {
            Cell::S(String::new())
        };
        t.push(vec![n.into(), d.times()[n].into(), p.into(), closed.into(), uncond]);
    }
    Ok(vec![t])
}

fn decay(cfg: &ExperimentConfig) -> Result<Vec<Table>, CliError> {
    let m = DecayModel::new(cfg.float("epsilon"), cfg.float("E0"), cfg.uint("L"), cfg.float("g"))?;
    let t_end = cfg.float("t_end");
    let grid = TimeGrid::uniform(0.0, t_end, cfg.uint("intervals"))?;
    let kernel = dispersal_kernel(&m, &grid)?;
    let pilot = m.pilot(&grid)?;
    let direct = survival_from_pilot(&pilot);
    let volterra = survival_volterra(&kernel, m.epsilon, m.e0, &grid)?;
    let gamma = gamma_estimate(&kernel, m.epsilon)?;
    let fit_start = cfg.float("fit_start").max(kernel.tau_eff);
    let fitted = fitted_decay_rate(grid.times(), &direct, fit_start, t_end)?;

    let mut amp = Table::new(
        "amplitude",
        &["t", "re_f_direct", "im_f_direct", "abs2_direct", "re_f_volterra", "im_f_volterra", "abs2_volterra"],
    );
    let mut ker = Table::new("kernel", &["t", "re_chi", "im_chi"]);
    let mut worst: f64 = 0.0;
    for (k, &t) in grid.times().iter().enumerate() {
        let (a, b) = (direct[k], volterra[k]);
        worst = worst.max((a - b).norm());
        amp.push(row![t, a.re, a.im, a.norm_sqr(), b.re, b.im, b.norm_sqr()]);
        ker.push(row![t, kernel.chi[k].re, kernel.chi[k].im]);
    }

    let mut rates = Table::new("rates", &["t", "T_0d", "T_d0"]);
    let n_rates = cfg.uint("rate_points");
    for i in 0..n_rates {
        let t = if n_rates == 1 { t_end } else { fit_start + (t_end - fit_start) * i as f64 / (n_rates - 1) as f64 };
        let r = decay_bell_rates(&m, &pilot, t)?;
        rates.push(row![r.t, r.t_0d, r.t_d0]);
    }

    let mut summary =
        Table::new("summary", &["re_gamma", "im_gamma", "two_re_gamma", "fitted_rate", "tau_eff", "max_abs_df"]);
    summary.push(row![gamma.re, gamma.im, 2.0 * gamma.re, fitted, kernel.tau_eff, worst]);
    Ok(vec![amp, ker, rates, summary])
}

pub fn ion_params(cfg: &ExperimentConfig) -> Result<IonParams, CliError> {
    Ok(IonParams::new(
        C64::new(cfg.float("lambda_R"), 0.0),
        C64::new(cfg.float("Lambda_B"), 0.0),
        cfg.float("delta_R"),
        cfg.float("delta_B"),
        C64::new(cfg.float("gamma_R"), cfg.float("gamma_R_shift")),
        C64::new(cfg.float("gamma_B"), cfg.float("gamma_B_shift")),
    )?)
}

fn ion(cfg: &ExperimentConfig) -> Result<Vec<Table>, CliError> {
    let p = ion_params(cfg)?;
    let photon_t = cfg.float("photon_t");
    let intervals = cfg.uint("photon_intervals");

    let mut no_jump = Table::new("no_jump", &["t", "abs2_f", "abs2_g", "abs2_h"]);
    if photon_t > 0.0 {
        let grid = TimeGrid::uniform(0.0, photon_t, intervals)?;
        for (t, a) in grid.times().iter().zip(no_jump_amplitudes(&p, &grid)?) {
            no_jump.push(row![*t, a.f.norm_sqr(), a.g.norm_sqr(), a.h.norm_sqr()]);
        }
    }
    let dist = photon_number_distribution(&p, photon_t, cfg.uint("photon_n_max"), intervals)?;
    let mut photons = Table::new("photons", &["n", "p_ground", "p_red", "p_shelf", "p_n"]);
    for (n, q) in dist.probabilities.iter().enumerate() {
        photons.push(row![n, q[GROUND], q[RED], q[SHELF], dist.count_probability(n)]);
    }

    let horizon = cfg.float("horizon");
    let sampler = TelegraphSampler::new(&p, horizon)?;
    let seeds: Vec<u64> = (0..cfg.uint("records") as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let records: Vec<JumpRecord> = seeds.par_iter().map(|&s| sampler.sample(s)).collect();

    let first = &records[0];
    let mut record = Table::new("record", &["t", "color"]);
    for &(t, c) in &first.events {
        record.push(row![t, c.as_str()]);
    }
    let mut trace = Table::new("trace", &["t_bin", "red_count"]);
    for (t, n) in first.binned_red(cfg.float("bin"))? {
        trace.push(row![t, n]);
    }
    let mut ensemble = Table::new(
        "ensemble",
        &["seed", "events", "red", "blue", "truncated", "n_dark", "mean_dark", "bright_rate", "dark_rate"],
    );
    for r in &records {
        use jumpkit::ion::Color;
        let mut cells = row![r.seed, r.len(), r.count(Color::Red), r.count(Color::Blue), r.truncated];
        match dark_period_stats(r, None) {
            Ok(s) => cells.extend(row![s.n_dark, s.mean_dark, s.mean_bright_rate, s.dark_rate]),
            Err(_) => cells.extend((0..4).map(|_| Cell::S(String::new()))),
        }
        ensemble.push(cells);
    }
    let mut summary = Table::new("summary", &["photon_t", "mean_count", "total_probability", "tail_tol"]);
    summary.push(row![photon_t, dist.mean_count(), dist.total(), dist.tail_tol]);
    Ok(vec![no_jump, photons, record, trace, ensemble, summary])
}

fn beables_demo(cfg: &ExperimentConfig) -> Result<Vec<Table>, CliError> {
    let (h, psi0, _) = rabi(cfg.float("omega"));
    let schedule = HamiltonianSchedule::constant(h);
    let intervals = cfg.uint("intervals");
    let grid = TimeGrid::uniform(0.0, cfg.float("t_end"), intervals)?;
    let pilot = evolve(&schedule, &psi0, &grid, Method::EigExact)?;
    let fam = ViableFamily::coordinate(2, &[vec![0], vec![1]])?;
    let sampler = VisibleSampler::new(&pilot, &fam, &schedule, DEFAULT_P_FLOOR)?;

    let checkpoints = cfg.uint("checkpoints");
    let indices: Vec<usize> = (1..=checkpoints).map(|i| i * intervals / checkpoints).collect();
    let n_traj = cfg.uint("trajectories");
    let seeds: Vec<u64> = (0..n_traj as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let labels: Vec<Vec<usize>> =
        seeds.par_iter().map(|&s| sampler.labels_at(s, &indices)).collect::<Result<_, _>>()?;

    let mut born = Table::new("born", &["t", "born_p0", "visible_p0", "binomial_se"]);
    for (c, &k) in indices.iter().enumerate() {
        let p0 = pilot.state(k).get(0).norm_sqr() / pilot.state(k).norm_sqr();
        let hits = labels.iter().filter(|l| l[c] == 0).count();
        born.push(row![grid.times()[k], p0, hits as f64 / n_traj as f64, binomial_se(p0, n_traj)]);
    }
    let mut jumps = Table::new("jumps", &["seed", "t", "from", "to"]);
    for &s in seeds.iter().take(cfg.uint("jump_records")) {
        for j in sampler.jumps(s)? {
            jumps.push(row![s, j.t, j.from, j.to]);
        }
    }
    Ok(vec![born, jumps])
}
