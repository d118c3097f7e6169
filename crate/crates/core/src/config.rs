//! Experiment configuration: a flat, sectioned key-value text format.
//!
//! Grammar (line oriented):
//!   - blank lines and lines starting with `#` are ignored
//!   - `[section]` opens a section; known sections: model, truth, filter, run
//!   - `key = value` assigns within the current section
//! Unknown sections and keys are rejected with the offending line number.
//! All values round-trip bitwise through `serialize` / `parse_config`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::Algorithm;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSection {
    pub name: String,
    pub n_state: usize,
    pub forcing: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthSection {
    /// Observe every `obs_stride`-th state variable.
    pub obs_stride: usize,
    /// Model steps between observations (and assimilation cycles).
    pub obs_interval_steps: usize,
    pub obs_error_std: f64,
    pub cycles: usize,
    /// Model steps of truth spin-up before the experiment window.
    pub spinup_steps: usize,
    /// Std of the i.i.d. initial-ensemble perturbations.
    pub init_perturb_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterSection {
    pub algorithm: Algorithm,
    pub inflation: f64,
    /// Gaspari-Cohn radius in grid cells; 0 disables localization.
    pub localization_radius: f64,
    pub n_ens: usize,
    pub hmc_step_size: f64,
    pub hmc_path_length: usize,
    pub hmc_burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub seed: u64,
    /// First cycle (0-based) of the testing window used for averages.
    pub testing_window_start: usize,
    pub output_dir: String,
    /// Keep every k-th cycle record in emitted CSVs (1 = all).
    pub record_cadence: usize,
    /// Rank-sample every `rank_stride`-th state variable.
    pub rank_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub truth: TruthSection,
    pub filter: FilterSection,
    pub run: RunSection,
}

impl Serialize for Algorithm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

#[derive(Default)]
struct RawSections {
    values: Vec<(String, String, String, usize)>, // (section, key, value, line)
}

fn parse_raw(text: &str) -> Result<RawSections> {
    let mut out = RawSections::default();
    let mut section: Option<String> = None;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !matches!(name, "model" | "truth" | "filter" | "run") {
                return Err(err(line_no, format!("unknown section \"{name}\"")));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(line_no, format!("expected \"key = value\", got \"{line}\"")));
        };
        let Some(section) = &section else {
            return Err(err(line_no, "key before any [section] header"));
        };
        out.values.push((
            section.clone(),
            key.trim().to_string(),
            value.trim().to_string(),
            line_no,
        ));
    }
    Ok(out)
}

struct SectionReader<'a> {
    section: &'a str,
    entries: Vec<(&'a str, &'a str, usize)>,
    used: Vec<bool>,
}

impl<'a> SectionReader<'a> {
    fn new(raw: &'a RawSections, section: &'a str) -> Self {
        let entries: Vec<_> = raw
            .values
            .iter()
            .filter(|(s, _, _, _)| s == section)
            .map(|(_, k, v, l)| (k.as_str(), v.as_str(), *l))
            .collect();
        let used = vec![false; entries.len()];
        SectionReader {
            section,
            entries,
            used,
        }
    }

    fn raw(&mut self, key: &str) -> Option<(&'a str, usize)> {
        for (i, (k, v, l)) in self.entries.iter().enumerate() {
            if *k == key {
                self.used[i] = true;
                return Some((v, *l));
            }
        }
        None
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, kind: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, l)) => v.parse::<T>().map(Some).map_err(|_| {
                err(l, format!("key \"{key}\": expected {kind}, got \"{v}\""))
            }),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str, kind: &str) -> Result<T> {
        self.parse(key, kind)?.ok_or_else(|| {
            err(
                0,
                format!("missing required key \"{key}\" in section [{}]", self.section),
            )
        })
    }

    fn or_default<T: std::str::FromStr>(&mut self, key: &str, kind: &str, default: T) -> Result<T> {
        Ok(self.parse(key, kind)?.unwrap_or(default))
    }

    fn finish(self) -> Result<()> {
        for (i, (k, _, l)) in self.entries.iter().enumerate() {
            if !self.used[i] {
                return Err(err(*l, format!("unknown key \"{k}\" in section [{}]", self.section)));
            }
        }
        Ok(())
    }
}

/// Parse and validate a config, applying documented defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw = parse_raw(text)?;

    let mut m = SectionReader::new(&raw, "model");
    let model = ModelSection {
        name: m.raw("name").map(|(v, _)| v.to_string()).unwrap_or_else(|| "lorenz96".into()),
        n_state: m.or_default("n_state", "a positive integer", 40)?,
        forcing: m.or_default("forcing", "a real number", 8.0)?,
        step_size: m.or_default("step_size", "a positive real", 0.005)?,
    };
    m.finish()?;
    if !matches!(model.name.as_str(), "lorenz96" | "lorenz63") {
        return Err(err(0, format!("unknown model \"{}\"", model.name)));
    }
    if model.step_size <= 0.0 {
        return Err(err(0, "step_size must be positive"));
    }

    let mut t = SectionReader::new(&raw, "truth");
    let truth = TruthSection {
        obs_stride: t.or_default("obs_stride", "a positive integer", 2)?,
        obs_interval_steps: t.or_default("obs_interval_steps", "a positive integer", 20)?,
        obs_error_std: t.or_default("obs_error_std", "a positive real", 1.0)?,
        cycles: t.require("cycles", "a nonnegative integer")?,
        spinup_steps: t.or_default("spinup_steps", "a nonnegative integer", 2000)?,
        init_perturb_std: t.or_default("init_perturb_std", "a positive real", 1.0)?,
    };
    t.finish()?;
    if truth.obs_stride == 0 || truth.obs_interval_steps == 0 {
        return Err(err(0, "obs_stride and obs_interval_steps must be positive"));
    }
    if truth.obs_error_std <= 0.0 {
        return Err(err(0, "obs_error_std must be positive"));
    }

    let mut f = SectionReader::new(&raw, "filter");
    let algorithm = {
        let (v, l) = f
            .raw("algorithm")
            .ok_or_else(|| err(0, "missing required key \"algorithm\" in section [filter]"))?;
        Algorithm::parse(v).ok_or_else(|| err(l, format!("unknown algorithm \"{v}\"")))?
    };
    let filter = FilterSection {
        algorithm,
        inflation: f.or_default("inflation", "a positive real", 1.0)?,
        localization_radius: f.or_default("localization_radius", "a nonnegative real", 0.0)?,
        n_ens: f.require("n_ens", "a positive integer")?,
        hmc_step_size: f.or_default("hmc_step_size", "a positive real", 0.05)?,
        hmc_path_length: f.or_default("hmc_path_length", "a positive integer", 10)?,
        hmc_burn_in: f.or_default("hmc_burn_in", "a nonnegative integer", 50)?,
    };
    f.finish()?;
    if filter.n_ens == 0 {
        return Err(err(0, "n_ens must be positive"));
    }
    if filter.inflation <= 0.0 {
        return Err(err(0, "inflation must be positive"));
    }
    if filter.localization_radius < 0.0 {
        return Err(err(0, "localization_radius must be nonnegative"));
    }

    let mut r = SectionReader::new(&raw, "run");
    let run = RunSection {
        seed: r.or_default("seed", "an unsigned integer", 1)?,
        testing_window_start: r.or_default("testing_window_start", "a nonnegative integer", 0)?,
        output_dir: r
            .raw("output_dir")
            .map(|(v, _)| v.to_string())
            .unwrap_or_else(|| "out".into()),
        record_cadence: r.or_default("record_cadence", "a positive integer", 1)?,
        rank_stride: r.or_default("rank_stride", "a positive integer", 13)?,
    };
    r.finish()?;
    if run.record_cadence == 0 || run.rank_stride == 0 {
        return Err(err(0, "record_cadence and rank_stride must be positive"));
    }
    if truth.cycles > 0 && run.testing_window_start >= truth.cycles {
        return Err(err(0, "testing_window_start must be below total cycles"));
    }

    Ok(ExperimentConfig {
        model,
        truth,
        filter,
        run,
    })
}

/// Serialize a config back into the text format (round-trips bitwise).
pub fn serialize(cfg: &ExperimentConfig) -> String {
    format!(
        "[model]\n\
         name = {}\n\
         n_state = {}\n\
         forcing = {}\n\
         step_size = {}\n\
         \n\
         [truth]\n\
         obs_stride = {}\n\
         obs_interval_steps = {}\n\
         obs_error_std = {}\n\
         cycles = {}\n\
         spinup_steps = {}\n\
         init_perturb_std = {}\n\
         \n\
         [filter]\n\
         algorithm = {}\n\
         inflation = {}\n\
         localization_radius = {}\n\
         n_ens = {}\n\
         hmc_step_size = {}\n\
         hmc_path_length = {}\n\
         hmc_burn_in = {}\n\
         \n\
         [run]\n\
         seed = {}\n\
         testing_window_start = {}\n\
         output_dir = {}\n\
         record_cadence = {}\n\
         rank_stride = {}\n",
        cfg.model.name,
        cfg.model.n_state,
        cfg.model.forcing,
        cfg.model.step_size,
        cfg.truth.obs_stride,
        cfg.truth.obs_interval_steps,
        cfg.truth.obs_error_std,
        cfg.truth.cycles,
        cfg.truth.spinup_steps,
        cfg.truth.init_perturb_std,
        cfg.filter.algorithm.name(),
        cfg.filter.inflation,
        cfg.filter.localization_radius,
        cfg.filter.n_ens,
        cfg.filter.hmc_step_size,
        cfg.filter.hmc_path_length,
        cfg.filter.hmc_burn_in,
        cfg.run.seed,
        cfg.run.testing_window_start,
        cfg.run.output_dir,
        cfg.run.record_cadence,
        cfg.run.rank_stride,
    )
}
