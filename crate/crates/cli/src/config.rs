//! Flat `key = value` scenario configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Later assignments win, and
//! command-line overrides are applied after the file. Unknown keys are
//! rejected so typos surface as validation errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dissem_core::cdr::RateNormalization;
use dissem_core::dynamics::Dynamics;
use dissem_core::scenario::{
    ModelSpec, ZetaMode, DEFAULT_CHI, DEFAULT_RADIUS_M, DEFAULT_WAKE_RATE,
};
use dissem_core::synth::SynthConfig;
use dissem_core::{Error, Result, DEFAULT_WINDOW_MINUTES};
use serde::Serialize;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DISSEM_OUT";
pub const DEFAULT_OUT: &str = "dissem-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Deterministic,
    Stochastic,
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Engine::Deterministic),
            "stochastic" => Ok(Engine::Stochastic),
            other => Err(Error::validation(
                "engine",
                format!("expected deterministic|stochastic, got {other:?}"),
            )),
        }
    }
}

/// Where the message starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginChoice {
    Community(usize),
    /// Highest betweenness on the transition graph.
    Dense,
    /// Thinnest community that can sustain a local outbreak.
    Sparse,
}

impl FromStr for OriginChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(OriginChoice::Dense),
            "sparse" => Ok(OriginChoice::Sparse),
            other => other.parse().map(OriginChoice::Community).map_err(|_| {
                Error::validation(
                    "origin",
                    format!("expected a community index, dense or sparse, got {other:?}"),
                )
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub cdr: PathBuf,
    pub communities: PathBuf,
    pub mobility_dir: PathBuf,
    pub window_minutes: u64,
    pub slot_minutes: u64,
    pub rates: RateNormalization,
    pub engine: Engine,
    pub origin: OriginChoice,
    pub epsilon: f64,
    pub model: ModelSpec,
    pub tau: f64,
    pub dt: f64,
    pub horizon: f64,
    pub sample_every: f64,
    pub replicas: usize,
    pub min_jump_km: f64,
    pub synth: SynthConfig,
}

/// Every accepted key with its default, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("out", "output directory"),
    ("seed", "base seed for generation and simulation"),
    ("cdr", "CDR file (default <out>/cdr.csv)"),
    (
        "communities",
        "communities file (default <out>/communities.csv)",
    ),
    (
        "mobility_dir",
        "directory holding nu/sigma/zeta (default <out>)",
    ),
    ("window_minutes", "observation window, minutes"),
    ("slot_minutes", "density slot length, minutes"),
    ("rates", "window | per_device"),
    ("mode", "sir | sir_latent"),
    ("engine", "deterministic | stochastic"),
    ("origin", "community index | dense | sparse"),
    (
        "epsilon",
        "initially infected share of the origin's residents",
    ),
    ("radius_m", "transmission radius, metres"),
    ("c", "per-contact transmission probability"),
    ("delta", "I -> R rate, per minute"),
    ("latent_fraction", "share of devices kept latent"),
    (
        "mu",
        "sleep rate, per minute (with alpha, replaces latent_fraction)",
    ),
    ("alpha", "wake rate, per minute"),
    ("gamma", "E_I -> R rate, per minute (default delta)"),
    ("zeta_mode", "empirical | heterogeneous"),
    ("chi", "degree exponent for heterogeneous return rates"),
    (
        "zeta_bar",
        "mean return rate for heterogeneous return rates",
    ),
    (
        "prune_unreturned",
        "drop routes that have no return rate (true | false)",
    ),
    ("tau", "leap length, minutes"),
    ("dt", "integration step, minutes"),
    ("horizon", "simulated minutes"),
    ("sample_every", "sampling interval, minutes"),
    ("replicas", "stochastic replicas"),
    ("min_jump_km", "lower cut-off of the jump-length fit"),
    (
        "synth.community_count",
        "communities in the synthetic world",
    ),
    ("synth.total_users", "simulated phone users"),
    (
        "synth.total_population",
        "census total shared among communities",
    ),
    (
        "synth.duration_minutes",
        "length of the generated record, minutes",
    ),
    ("synth.jump_alpha", "Pareto exponent of trip lengths (> 1)"),
    ("synth.jump_x_min_km", "shortest trip, km"),
    (
        "synth.attraction_exponent",
        "heaviness of the attraction weights",
    ),
    (
        "synth.capital_boost",
        "extra weight of the largest community",
    ),
    (
        "synth.mean_departure_rate",
        "mean departure intensity, per minute",
    ),
    (
        "synth.intensity_spread",
        "log-normal spread of departure intensities",
    ),
    ("synth.mean_return_rate", "return rate, per minute"),
    (
        "synth.call_rate",
        "calls per minute, or none for every move",
    ),
    (
        "synth.diurnal_amplitude",
        "day/night modulation of the call rate, 0..1",
    ),
    ("synth.box_km", "side of the square country, km"),
    (
        "synth.direction_candidates",
        "landing directions tried per trip",
    ),
    ("synth.slot_minutes", "occupancy slot length, minutes"),
];

/// Raw key/value pairs before typing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("expected key = value, got {line:?}"),
                });
            };
            raw.set(key.trim(), value.trim())?;
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::validation(key, "unknown configuration key"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            Error::validation(
                "override",
                format!("expected key=value, got {assignment:?}"),
            )
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::validation(key, format!("cannot parse {v:?}"))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.typed(key)?.unwrap_or(default))
    }

    pub fn resolve(&self, default_out: &Path) -> Result<ScenarioConfig> {
        let out = self
            .get("out")
            .map(PathBuf::from)
            .unwrap_or_else(|| default_out.to_path_buf());
        let seed = self.or("seed", 1u64)?;
        let path_or = |key: &str, file: &str| {
            self.get(key)
                .map(PathBuf::from)
                .unwrap_or_else(|| out.join(file))
        };

        let delta = self.or("delta", 1.0 / 1440.0)?;
        let mode = match self.get("mode") {
            Some(m) => m.parse::<Dynamics>()?,
            None => Dynamics::Sir,
        };
        let mu: Option<f64> = self.typed("mu")?;
        let alpha: Option<f64> = self.typed("alpha")?;
        let (latent_fraction, wake_rate) = match (mu, alpha) {
            (Some(mu), alpha) => {
                let alpha = alpha.unwrap_or(DEFAULT_WAKE_RATE);
                if !(mu >= 0.0) || !(alpha > 0.0) {
                    return Err(Error::validation("mu", "mu must be >= 0 and alpha > 0"));
                }
                if self.get("latent_fraction").is_some() {
                    return Err(Error::validation(
                        "mu",
                        "give either mu/alpha or latent_fraction, not both",
                    ));
                }
                (mu / (mu + alpha), alpha)
            }
            (None, alpha) => (
                self.or("latent_fraction", 0.0)?,
                alpha.unwrap_or(DEFAULT_WAKE_RATE),
            ),
        };
        if !(0.0..1.0).contains(&latent_fraction) {
            return Err(Error::validation(
                "latent_fraction",
                format!("must lie in [0, 1), got {latent_fraction}"),
            ));
        }
        let zeta_mode = match self.get("zeta_mode").unwrap_or("empirical") {
            "empirical" => ZetaMode::Empirical,
            "heterogeneous" => ZetaMode::Heterogeneous {
                chi: self.or("chi", DEFAULT_CHI)?,
                zeta_bar: self.or("zeta_bar", DEFAULT_WAKE_RATE)?,
            },
            other => {
                return Err(Error::validation(
                    "zeta_mode",
                    format!("expected empirical|heterogeneous, got {other:?}"),
                ))
            }
        };
        let model = ModelSpec {
            mode,
            radius_m: self.or("radius_m", DEFAULT_RADIUS_M)?,
            contact_prob: self.or("c", 0.01)?,
            delta,
            latent_fraction,
            wake_rate,
            gamma: self.typed("gamma")?,
            zeta_mode,
            prune_unreturned: self.or("prune_unreturned", true)?,
        };

        let d = SynthConfig::default();
        let call_rate = match self.get("synth.call_rate") {
            None => d.call_rate,
            Some("none") => None,
            Some(_) => self.typed("synth.call_rate")?,
        };
        let synth = SynthConfig {
            community_count: self.or("synth.community_count", d.community_count)?,
            total_users: self.or("synth.total_users", d.total_users)?,
            total_population: self.or("synth.total_population", d.total_population)?,
            duration_minutes: self.or("synth.duration_minutes", d.duration_minutes)?,
            jump_alpha: self.or("synth.jump_alpha", d.jump_alpha)?,
            jump_x_min_km: self.or("synth.jump_x_min_km", d.jump_x_min_km)?,
            attraction_exponent: self.or("synth.attraction_exponent", d.attraction_exponent)?,
            capital_boost: self.or("synth.capital_boost", d.capital_boost)?,
            mean_departure_rate: self.or("synth.mean_departure_rate", d.mean_departure_rate)?,
            intensity_spread: self.or("synth.intensity_spread", d.intensity_spread)?,
            mean_return_rate: self.or("synth.mean_return_rate", d.mean_return_rate)?,
            call_rate,
            diurnal_amplitude: self.or("synth.diurnal_amplitude", d.diurnal_amplitude)?,
            box_km: self.or("synth.box_km", d.box_km)?,
            direction_candidates: self.or("synth.direction_candidates", d.direction_candidates)?,
            slot_minutes: self.or("synth.slot_minutes", d.slot_minutes)?,
            seed,
        };

        let cfg = ScenarioConfig {
            cdr: path_or("cdr", "cdr.csv"),
            communities: path_or("communities", "communities.csv"),
            mobility_dir: self
                .get("mobility_dir")
                .map(PathBuf::from)
                .unwrap_or_else(|| out.clone()),
            window_minutes: self.or("window_minutes", DEFAULT_WINDOW_MINUTES as u64)?,
            slot_minutes: self.or("slot_minutes", 1440u64)?,
            rates: match self.get("rates") {
                Some(r) => r.parse()?,
                None => RateNormalization::PerDevice,
            },
            engine: match self.get("engine") {
                Some(e) => e.parse()?,
                None => Engine::Deterministic,
            },
            origin: match self.get("origin") {
                Some(o) => o.parse()?,
                None => OriginChoice::Sparse,
            },
            epsilon: self.or("epsilon", 100.0 / 18959.0)?,
            model,
            tau: self.or("tau", 1.0)?,
            dt: self.or("dt", 1.0)?,
            horizon: self.or("horizon", 10.0 * 1440.0)?,
            sample_every: self.or("sample_every", 60.0)?,
            replicas: self.or("replicas", 1usize)?,
            min_jump_km: self.or("min_jump_km", d.jump_x_min_km)?,
            synth,
            out,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("dt", self.dt),
            ("sample_every", self.sample_every),
            ("radius_m", self.model.radius_m),
            ("delta", self.model.delta),
            ("min_jump_km", self.min_jump_km),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(
                    name,
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::validation(
                "horizon",
                format!("must be non-negative, got {}", self.horizon),
            ));
        }
        if !(0.0..1.0).contains(&self.model.contact_prob) {
            return Err(Error::validation(
                "c",
                format!("must lie in [0, 1), got {}", self.model.contact_prob),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::validation(
                "epsilon",
                format!("must lie in (0, 1), got {}", self.epsilon),
            ));
        }
        if self.replicas == 0 {
            return Err(Error::validation("replicas", "must be at least 1"));
        }
        if self.window_minutes == 0 {
            return Err(Error::validation("window_minutes", "must be positive"));
        }
        if self.slot_minutes == 0 || self.window_minutes % self.slot_minutes != 0 {
            return Err(Error::validation(
                "slot_minutes",
                "must be positive and divide window_minutes",
            ));
        }
        if let Some(g) = self.model.gamma {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::validation(
                    "gamma",
                    format!("must be non-negative, got {g}"),
                ));
            }
        }
        Ok(())
    }

    /// Seeds of the stochastic replicas.
    pub fn replica_seeds(&self) -> Vec<u64> {
        (0..self.replicas as u64)
            .map(|r| self.seed.wrapping_add(r))
            .collect()
    }
}

/// Output root when neither `--out` nor `out` is given.
pub fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}
