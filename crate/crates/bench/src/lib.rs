//! Fixtures shared by the benchmarks in `benches/`.

use dissem_core::cdr::RateNormalization;
use dissem_core::scenario::{
    prepare_model, sparse_origin, synthetic_corpus, ModelSpec, PreparedModel, SPARSE_ORIGIN_MIN_R0,
};
use dissem_core::synth::SynthConfig;
use dissem_core::{CompartmentState, Matrix, Result, SeedSpec};

pub struct Fixture {
    pub model: PreparedModel,
    pub initial: CompartmentState,
    pub transitions: Matrix,
}

/// A synthetic country with `communities` communities, seeded at its sparse
/// origin. Uses a short, mobile record so setup stays quick.
pub fn fixture(communities: usize, dynamics: dissem_core::dynamics::Dynamics) -> Result<Fixture> {
    let cfg = SynthConfig {
        community_count: communities,
        total_users: 40 * communities,
        duration_minutes: 30 * 1440,
        mean_departure_rate: 1.0 / 1680.0,
        ..SynthConfig::default()
    };
    let corpus = synthetic_corpus(&cfg, RateNormalization::PerDevice)?;
    let ex = &corpus.extraction;
    let latent = dynamics == dissem_core::dynamics::Dynamics::SirLatent;
    let spec = ModelSpec {
        mode: dynamics,
        latent_fraction: if latent { 0.2 } else { 0.0 },
        ..ModelSpec::default()
    };
    let model = prepare_model(
        &corpus.world.census(),
        &corpus.world.area_km2,
        &ex.mobility,
        &ex.counts.transitions,
        &spec,
    )?;
    let origin = sparse_origin(&model, SPARSE_ORIGIN_MIN_R0).unwrap_or(corpus.world.capital);
    let initial = model.initial_state(
        SeedSpec {
            origin,
            epsilon: 0.01,
        },
        spec.latent_fraction,
    )?;
    Ok(Fixture {
        model,
        initial,
        transitions: ex.counts.transitions.clone(),
    })
}
