//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Zeno,
    Decay,
    Ion,
    BeablesDemo,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Zeno => "zeno",
            Experiment::Decay => "decay",
            Experiment::Ion => "ion",
            Experiment::BeablesDemo => "beables-demo",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "zeno" => Some(Experiment::Zeno),
            "decay" => Some(Experiment::Decay),
            "ion" => Some(Experiment::Ion),
            "beables-demo" => Some(Experiment::BeablesDemo),
            _ => None,
        }
    }

    fn schema(self) -> &'static [Key] {
        match self {
            Experiment::Zeno => ZENO,
            Experiment::Decay => DECAY,
            Experiment::Ion => ION,
            Experiment::BeablesDemo => BEABLES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Float,
    UInt,
    UIntList,
    Text,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str) -> Key {
    Key { name, kind, default }
}

const COMMON: &[Key] = &[key("seed", Kind::UInt, "0"), key("output_dir", Kind::Text, "out")];

const ZENO: &[Key] = &[
    key("omega", Kind::Float, "1"),
    key("total", Kind::Float, "1.5707963267948966"),
    key("N_list", Kind::UIntList, "1,2,4,8,16,32,64,128,256,512,1024"),
    key("dissection", Kind::Text, ""),
];

const DECAY: &[Key] = &[
    key("epsilon", Kind::Float, "0.1"),
    key("E0", Kind::Float, "0"),
    key("g", Kind::Float, "1"),
    key("L", Kind::UInt, "400"),
    key("t_end", Kind::Float, "190"),
    key("intervals", Kind::UInt, "1900"),
    key("fit_start", Kind::Float, "20"),
    key("rate_points", Kind::UInt, "10"),
];

const ION: &[Key] = &[
    key("lambda_R", Kind::Float, "1"),
    key("Lambda_B", Kind::Float, "0.02"),
    key("delta_R", Kind::Float, "0"),
    key("delta_B", Kind::Float, "0"),
    key("gamma_R", Kind::Float, "1"),
    key("gamma_B", Kind::Float, "0.001"),
    key("gamma_R_shift", Kind::Float, "0"),
    key("gamma_B_shift", Kind::Float, "0"),
    key("horizon", Kind::Float, "2000"),
    key("records", Kind::UInt, "1"),
    key("bin", Kind::Float, "10"),
    key("photon_t", Kind::Float, "10"),
    key("photon_n_max", Kind::UInt, "30"),
    key("photon_intervals", Kind::UInt, "1000"),
];

const BEABLES: &[Key] = &[
    key("omega", Kind::Float, "1"),
    key("t_end", Kind::Float, "1.5"),
    key("intervals", Kind::UInt, "1500"),
    key("trajectories", Kind::UInt, "2000"),
    key("checkpoints", Kind::UInt, "10"),
    key("jump_records", Kind::UInt, "10"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    values: BTreeMap<&'static str, String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw: Vec<(String, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if raw.iter().any(|(seen, _)| *seen == k) {
                return Err(config_err(format!("key `{k}` given twice")));
            }
            raw.push((k, v));
        }

        let name = raw
            .iter()
            .find(|(k, _)| k == "experiment")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| config_err("missing required key `experiment`"))?;
        let experiment = Experiment::parse(&name).ok_or_else(|| {
            config_err(format!("key `experiment`: unknown experiment `{name}` (zeno, decay, ion, beables-demo)"))
        })?;

        let schema: Vec<&Key> = COMMON.iter().chain(experiment.schema()).collect();
        let mut values = BTreeMap::new();
        for (k, v) in &raw {
            if k == "experiment" {
                continue;
            }
            let entry = schema
                .iter()
                .find(|s| s.name == k)
                .ok_or_else(|| config_err(format!("unknown key `{k}` for experiment {name}")))?;
            values.insert(entry.name, v.clone());
        }
        for s in &schema {
            let v = values.entry(s.name).or_insert_with(|| s.default.to_string());
            check_kind(s, v)?;
        }

        let seed = values["seed"].parse().expect("checked");
        let output_dir = PathBuf::from(&values["output_dir"]);
        let cfg = Self { experiment, seed, output_dir, values };
        cfg.check_domain()?;
        Ok(cfg)
    }

    pub fn float(&self, key: &str) -> f64 {
        self.values[key].parse().expect("validated float")
    }

    pub fn uint(&self, key: &str) -> usize {
        self.values[key].parse().expect("validated integer")
    }

    pub fn uint_list(&self, key: &str) -> Vec<usize> {
        parse_list(&self.values[key]).expect("validated list")
    }

    pub fn text(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let entry = COMMON
            .iter()
            .chain(self.experiment.schema())
            .find(|s| s.name == key)
            .ok_or_else(|| config_err(format!("unknown key `{key}`")))?;
        check_kind(entry, value)?;
        self.values.insert(entry.name, value.to_string());
        self.check_domain()
    }

    /// The resolved configuration, itself a valid config file.
    pub fn manifest(&self) -> String {
        let mut out = format!("# jumpkit {}\nexperiment = {}\n", env!("CARGO_PKG_VERSION"), self.experiment.name());
        for s in COMMON.iter().chain(self.experiment.schema()) {
            out.push_str(&format!("{} = {}\n", s.name, self.values[s.name]));
        }
        out
    }

    fn check_domain(&self) -> Result<(), CliError> {
        let positive = |k: &str| -> Result<(), CliError> {
            if self.float(k) > 0.0 {
                Ok(())
            } else {
                Err(config_err(format!("key `{k}` must be > 0")))
            }
        };
        let at_least = |k: &str, min: usize| -> Result<(), CliError> {
            if self.uint(k) >= min {
                Ok(())
            } else {
                Err(config_err(format!("key `{k}` must be at least {min}")))
            }
        };
        match self.experiment {
            Experiment::Zeno => {
                positive("total")?;
                let list = self.uint_list("N_list");
                if list.is_empty() || list.contains(&0) {
                    return Err(config_err("key `N_list` needs positive entries"));
                }
                if !self.text("dissection").is_empty() {
                    parse_dissection(self.text("dissection"))?;
                }
            }
            Experiment::Decay => {
                positive("epsilon")?;
                positive("g")?;
                positive("t_end")?;
                at_least("L", jumpkit::decay::MIN_CHAIN_LEN)?;
                at_least("intervals", 2)?;
                at_least("rate_points", 1)?;
                if self.float("epsilon") > 0.5 * self.float("g") {
                    return Err(config_err("key `epsilon` must not exceed g/2"));
                }
                if self.float("t_end") >= self.uint("L") as f64 / (2.0 * self.float("g")) {
                    return Err(config_err("key `t_end` must stay below the revival bound L/(2g)"));
                }
                let fit = self.float("fit_start");
                if !(fit >= 0.0 && fit < self.float("t_end")) {
                    return Err(config_err("key `fit_start` must lie in [0, t_end)"));
                }
            }
            Experiment::Ion => {
                positive("gamma_R")?;
                positive("gamma_B")?;
                positive("horizon")?;
                positive("bin")?;
                if !(self.float("photon_t") >= 0.0) {
                    return Err(config_err("key `photon_t` must be >= 0"));
                }
                at_least("records", 1)?;
                at_least("photon_intervals", 1)?;
            }
            Experiment::BeablesDemo => {
                positive("t_end")?;
                at_least("intervals", 2)?;
                at_least("trajectories", 1)?;
                at_least("checkpoints", 1)?;
                if self.uint("checkpoints") > self.uint("intervals") {
                    return Err(config_err("key `checkpoints` must not exceed `intervals`"));
                }
            }
        }
        Ok(())
    }
}

fn parse_list(s: &str) -> Option<Vec<usize>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|x| x.trim().parse().ok()).collect()
}

fn check_kind(k: &Key, v: &str) -> Result<(), CliError> {
    let ok = match k.kind {
        Kind::Float => v.parse::<f64>().map(f64::is_finite).unwrap_or(false),
        Kind::UInt => v.parse::<u64>().is_ok(),
        Kind::UIntList => parse_list(v).is_some(),
        Kind::Text => true,
    };
    if ok {
        Ok(())
    } else {
        let what = match k.kind {
            Kind::Float => "a finite number",
            Kind::UInt => "a non-negative integer",
            Kind::UIntList => "a comma-separated list of non-negative integers",
            Kind::Text => "text",
        };
        Err(config_err(format!("key `{}`: expected {what}, got `{v}`", k.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DissectionSpec {
    Uniform(usize),
    File(PathBuf),
}

/// `uniform:N` or `file:path` (one measurement time per line, starting at 0).
pub fn parse_dissection(s: &str) -> Result<DissectionSpec, CliError> {
    let bad = || config_err(format!("key `dissection`: expected `uniform:N` or `file:path`, got `{s}`"));
    match s.split_once(':') {
        Some(("uniform", n)) => match n.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(DissectionSpec::Uniform(n)),
            _ => Err(bad()),
        },
        Some(("file", p)) if !p.trim().is_empty() => Ok(DissectionSpec::File(PathBuf::from(p.trim()))),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse("experiment = zeno\n").unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.uint_list("N_list").len(), 11);
        assert!((c.float("total") - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = ExperimentConfig::parse("# header\n\nexperiment = decay # trailing\nepsilon = 0.2\n").unwrap();
        assert_eq!(c.float("epsilon"), 0.2);
    }

    #[test]
    fn errors_name_the_key() {
        let msg = |t: &str| match ExperimentConfig::parse(t) {
            Err(CliError::Config(m)) => m,
            other => panic!("{other:?}"),
        };
        assert!(msg("seed = 1\n").contains("`experiment`"));
        assert!(msg("experiment = decay\nepsilon = -0.1\n").contains("`epsilon`"));
        assert!(msg("experiment = zeno\nfoo = 1\n").contains("`foo`"));
        assert!(msg("experiment = ion\nhorizon = abc\n").contains("`horizon`"));
        assert!(msg("experiment = zeno\nseed = 1\nseed = 2\n").contains("`seed`"));
        assert!(msg("experiment = decay\nL = 400\nt_end = 250\n").contains("`t_end`"));
    }

    #[test]
    fn manifest_round_trips() {
        let c = ExperimentConfig::parse("experiment = ion\nseed = 7\nhorizon = 2000\n").unwrap();
        let again = ExperimentConfig::parse(&c.manifest()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn dissection_forms() {
        assert_eq!(parse_dissection("uniform:8").unwrap(), DissectionSpec::Uniform(8));
        assert_eq!(parse_dissection("file:times.txt").unwrap(), DissectionSpec::File("times.txt".into()));
        assert!(parse_dissection("uniform:0").is_err());
        assert!(parse_dissection("grid:3").is_err());
    }
}
