//! Assembly of runnable dissemination models from extracted mobility.

use serde::{Deserialize, Serialize};

use crate::analysis::{betweenness, support};
use crate::cdr::{extract, Extraction, MobilityParameters, RateNormalization, TrajectorySet};
use crate::dynamics::{
    apply_latent_fraction, latent_rates, seed_infection, CompartmentState, Dynamics,
    ModelParameters, SeedSpec,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mobility::{
    heterogeneous_zeta, prune_unreturned, steady_state, ContactParameters, SteadyState,
};
use crate::synth::{generate_cdr, generate_world, GroundTruth, SynthConfig, World};

/// Where return rates come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZetaMode {
    /// As extracted from the records.
    Empirical,
    /// Degree-dependent rates around `zeta_bar`.
    Heterogeneous { chi: f64, zeta_bar: f64 },
}

/// Default wake rate for latent devices: half a day asleep on average.
pub const DEFAULT_WAKE_RATE: f64 = 1.0 / 720.0;
pub const DEFAULT_CHI: f64 = -0.5;
pub const DEFAULT_RADIUS_M: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mode: Dynamics,
    pub radius_m: f64,
    /// Per-contact transmission probability, same in every community.
    pub contact_prob: f64,
    /// Recovery (message expiry) rate per minute.
    pub delta: f64,
    /// Share of every compartment moved to its latent twin at `t = 0` and
    /// kept as the sleep/wake equilibrium.
    pub latent_fraction: f64,
    pub wake_rate: f64,
    /// `E_I -> R` rate; defaults to `delta`.
    pub gamma: Option<f64>,
    pub zeta_mode: ZetaMode,
    /// Drop routing entries without a return rate instead of failing.
    pub prune_unreturned: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            mode: Dynamics::Sir,
            radius_m: DEFAULT_RADIUS_M,
            contact_prob: 0.01,
            delta: 1.0 / 1440.0,
            latent_fraction: 0.0,
            wake_rate: DEFAULT_WAKE_RATE,
            gamma: None,
            zeta_mode: ZetaMode::Empirical,
            prune_unreturned: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub mobility: MobilityParameters,
    pub steady: SteadyState,
    pub contact: ContactParameters,
    pub params: ModelParameters,
    pub dynamics: Dynamics,
    /// Routing entries removed for lack of a return rate.
    pub pruned: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// Builds steady state, contact parameters and rates for one scenario.
/// `transitions` is only used for heterogeneous return rates.
pub fn prepare_model(
    census: &[f64],
    areas: &[f64],
    mobility: &MobilityParameters,
    transitions: &Matrix,
    spec: &ModelSpec,
) -> Result<PreparedModel> {
    if !(spec.delta > 0.0) || !spec.delta.is_finite() {
        return Err(Error::validation(
            "delta",
            format!("must be positive, got {}", spec.delta),
        ));
    }
    let mut warnings = Vec::new();
    let mut m = mobility.clone();
    if let ZetaMode::Heterogeneous { chi, zeta_bar } = spec.zeta_mode {
        let z = heterogeneous_zeta(transitions, zeta_bar, chi)?;
        warnings.extend(z.warnings);
        m.zeta = z.value;
    }
    let mut pruned = Vec::new();
    if spec.prune_unreturned {
        let (clean, removed) = prune_unreturned(&m);
        if !removed.is_empty() {
            let msg = format!(
                "removed {} routing entries without a return rate",
                removed.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        m = clean;
        pruned = removed;
    }
    let steady = steady_state(census, areas, &m)?;
    let n = m.community_count();
    let contact = ContactParameters::new(&steady, &vec![spec.contact_prob; n], spec.radius_m)?;
    let mut params =
        ModelParameters::from_contact(&steady, &contact, vec![spec.delta; n], m.clone())?;
    let dynamics = if spec.latent_fraction > 0.0 {
        Dynamics::SirLatent
    } else {
        spec.mode
    };
    if dynamics == Dynamics::SirLatent {
        let (mu, alpha) = latent_rates(spec.latent_fraction, spec.wake_rate)?;
        let gamma = spec.gamma.unwrap_or(spec.delta);
        params = params.with_latent(
            [vec![mu; n], vec![mu; n], vec![mu; n]],
            [vec![alpha; n], vec![alpha; n], vec![alpha; n]],
            vec![gamma; n],
        )?;
    }
    Ok(PreparedModel {
        mobility: m,
        steady,
        contact,
        params,
        dynamics,
        pruned,
        warnings,
    })
}

impl PreparedModel {
    /// Seeded steady state with the scenario's latent share applied.
    pub fn initial_state(&self, seed: SeedSpec, latent_fraction: f64) -> Result<CompartmentState> {
        let st = seed_infection(&self.steady, seed)?;
        if latent_fraction > 0.0 {
            apply_latent_fraction(&st, latent_fraction)
        } else {
            Ok(st)
        }
    }
}

/// Local reproduction number a sparse origin must reach so the message can
/// take hold before it leaves.
pub const SPARSE_ORIGIN_MIN_R0: f64 = 1.5;

/// Community with the highest betweenness on the transition graph; ties go
/// to the smaller index.
pub fn dense_origin(transitions: &Matrix) -> usize {
    let b = betweenness(&support(transitions));
    let mut best = 0;
    for (i, &v) in b.iter().enumerate() {
        if v > b[best] {
            best = i;
        }
    }
    best
}

/// Lowest steady-state density among communities whose local reproduction
/// number is at least `min_r0`.
pub fn sparse_origin(pm: &PreparedModel, min_r0: f64) -> Option<usize> {
    let p = &pm.params;
    (0..p.community_count())
        .filter(|&j| p.k_mean[j] * p.beta[j] / p.delta[j] >= min_r0)
        .min_by(|&a, &b| {
            pm.steady.rho_star[a]
                .total_cmp(&pm.steady.rho_star[b])
                .then(a.cmp(&b))
        })
}

/// A generated world together with its records and extraction.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub world: World,
    pub truth: GroundTruth,
    pub trajectories: TrajectorySet,
    pub extraction: Extraction,
}

pub fn synthetic_corpus(
    cfg: &SynthConfig,
    normalization: RateNormalization,
) -> Result<SyntheticCorpus> {
    let world = generate_world(cfg)?;
    let (records, truth) = generate_cdr(&world, cfg)?;
    let trajectories =
        TrajectorySet::from_records(records, cfg.community_count, cfg.duration_minutes)?;
    let extraction = extract(&trajectories, normalization)?;
    Ok(SyntheticCorpus {
        world,
        truth,
        trajectories,
        extraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Compartment;

    const MOBILE: f64 = 1.0 / 1680.0;

    fn corpus() -> SyntheticCorpus {
        let cfg = SynthConfig {
            community_count: 12,
            total_users: 400,
            total_population: 200_000,
            duration_minutes: 30 * 1440,
            call_rate: None,
            seed: 3,
            mean_departure_rate: MOBILE,
            ..SynthConfig::default()
        };
        synthetic_corpus(&cfg, RateNormalization::PerDevice).unwrap()
    }

    #[test]
    fn prepared_model_is_consistent() {
        let c = corpus();
        let spec = ModelSpec::default();
        let pm = prepare_model(
            &c.world.census(),
            &c.world.area_km2,
            &c.extraction.mobility,
            &c.extraction.counts.transitions,
            &spec,
        )
        .unwrap();
        let totals = pm.steady.home_totals();
        for (t, p) in totals.iter().zip(c.world.census()) {
            assert!((t - p).abs() < 1e-6 * p.max(1.0));
        }
        assert_eq!(pm.params.n_star_loc, pm.steady.occupancy);
        assert!(!pm.params.has_latent_rates());
    }

    #[test]
    fn latent_spec_switches_dynamics() {
        let c = corpus();
        let spec = ModelSpec {
            latent_fraction: 0.2,
            zeta_mode: ZetaMode::Heterogeneous {
                chi: -0.5,
                zeta_bar: 1.0 / 720.0,
            },
            ..ModelSpec::default()
        };
        let pm = prepare_model(
            &c.world.census(),
            &c.world.area_km2,
            &c.extraction.mobility,
            &c.extraction.counts.transitions,
            &spec,
        )
        .unwrap();
        assert_eq!(pm.dynamics, Dynamics::SirLatent);
        let x = pm
            .initial_state(
                SeedSpec {
                    origin: c.world.capital,
                    epsilon: 1e-3,
                },
                0.2,
            )
            .unwrap();
        let latent = x.total(Compartment::ES) + x.total(Compartment::EI);
        let total: f64 = x.home_totals().iter().sum();
        assert!((latent / total - 0.2).abs() < 1e-12);
    }

    #[test]
    fn origins_pick_hub_and_thin_community() {
        let c = corpus();
        let spec = ModelSpec::default();
        let pm = prepare_model(
            &c.world.census(),
            &c.world.area_km2,
            &c.extraction.mobility,
            &c.extraction.counts.transitions,
            &spec,
        )
        .unwrap();
        let dense = dense_origin(&c.extraction.counts.transitions);
        let b = betweenness(&support(&c.extraction.counts.transitions));
        assert!(b.iter().all(|&v| v <= b[dense]));
        let sparse = sparse_origin(&pm, 1.0).unwrap();
        assert!(pm.params.k_mean[sparse] * pm.params.beta[sparse] / pm.params.delta[sparse] >= 1.0);
        assert!(sparse_origin(&pm, f64::INFINITY).is_none());
        let star = star_transitions();
        assert_eq!(dense_origin(&star), 2);
    }

    fn star_transitions() -> Matrix {
        Matrix::from_fn(4, 4, |i, j| {
            if i != j && (i == 2 || j == 2) {
                1.0
            } else {
                0.0
            }
        })
    }
}
