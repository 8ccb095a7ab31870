//! The five pipeline stages.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use dissem_core::analysis::{
    epidemic_summary, fit_power_law, graph_stats, kl_symmetrized, median, PowerLawFit,
};
use dissem_core::cdr::{compute_density, extract, parse_cdr, write_cdr, MobilityParameters};
use dissem_core::dynamics::{integrate, ClampReport, Dynamics};
use dissem_core::io::{
    read_communities, read_matrix, read_vector, write_columns, write_communities, write_curve,
    write_density, write_ensemble, write_global, write_matrix, write_timeseries, write_vector,
    CommunityTable, GLOBAL_HEADER,
};
use dissem_core::scenario::{
    dense_origin, prepare_model, sparse_origin, PreparedModel, SPARSE_ORIGIN_MIN_R0,
};
use dissem_core::stochastic::{run_ensemble, LeapStats};
use dissem_core::synth::{generate_cdr, generate_world, MoveKind};
use dissem_core::{
    Compartment, EpidemicSummary, Error, IntegerState, Matrix, Result, SeedSpec, TimeSeries,
};
use serde::Serialize;

use crate::config::{Engine, OriginChoice, ScenarioConfig};
use crate::output::{input_hashes, Manifest, Staging};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn finish<S: Serialize>(
    mut staging: Staging,
    command: &str,
    cfg: &ScenarioConfig,
    seeds: Vec<u64>,
    inputs: &[&Path],
    stats: S,
) -> Result<Vec<PathBuf>> {
    let manifest = Manifest {
        command,
        version: VERSION,
        config: cfg,
        seeds,
        inputs: input_hashes(inputs)?,
        outputs: staging.hashes()?,
        stats,
    };
    staging.write_json(&format!("manifest-{command}.json"), &manifest)?;
    staging.commit()
}

fn open(path: &Path, key: &str) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::validation(key, format!("cannot open {}: {e}", path.display())))
}

fn load_communities(cfg: &ScenarioConfig) -> Result<CommunityTable> {
    let t = read_communities(open(&cfg.communities, "communities")?)?;
    if t.is_empty() {
        return Err(Error::validation("communities", "no communities listed"));
    }
    Ok(t)
}

#[derive(Serialize)]
struct TruthSummary<'a> {
    capital: usize,
    homes: &'a [usize],
    departure_intensity: &'a [f64],
    return_rate: f64,
    attraction: &'a [f64],
    tally: &'a Matrix,
    home_minutes: &'a [f64],
    away_minutes: f64,
}

#[derive(Serialize)]
struct SynthStats {
    users: usize,
    records: usize,
    moves: usize,
    capital: usize,
}

pub fn synth(cfg: &ScenarioConfig) -> Result<Vec<PathBuf>> {
    let world = generate_world(&cfg.synth)?;
    let (records, truth) = generate_cdr(&world, &cfg.synth)?;
    let mut st = Staging::new(&cfg.out, "synth")?;
    st.write("communities.csv", |w| {
        write_communities(w, &CommunityTable::from(&world))
    })?;
    st.write("cdr.csv", |w| write_cdr(w, &records))?;
    st.write("events.csv", |w| {
        writeln!(w, "user_id,t_min,from,to,kind,length_km")?;
        for e in &truth.events {
            let kind = match e.kind {
                MoveKind::Depart => "depart",
                MoveKind::Return => "return",
            };
            writeln!(
                w,
                "{},{},{},{},{kind},{}",
                truth.user_ids[e.user], e.time, e.from, e.to, e.length_km
            )?;
        }
        Ok(())
    })?;
    st.write("occupancy.csv", |w| {
        write!(w, "slot_start_min")?;
        for j in 0..world.community_count() {
            write!(w, ",{j}")?;
        }
        writeln!(w)?;
        for s in 0..truth.occupancy.rows() {
            write!(w, "{}", s as u64 * truth.slot_minutes)?;
            for v in truth.occupancy.row(s) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    st.write_json(
        "ground_truth.json",
        &TruthSummary {
            capital: world.capital,
            homes: &truth.homes,
            departure_intensity: &truth.departure_intensity,
            return_rate: truth.return_rate,
            attraction: &world.attraction,
            tally: &truth.tally,
            home_minutes: &truth.home_minutes,
            away_minutes: truth.away_minutes,
        },
    )?;
    let stats = SynthStats {
        users: truth.homes.len(),
        records: records.len(),
        moves: truth.events.len(),
        capital: world.capital,
    };
    finish(st, "synth", cfg, vec![cfg.seed], &[], stats)
}

#[derive(Serialize)]
struct IngestStats {
    users: usize,
    transitions: usize,
    isolated: Vec<usize>,
}

pub fn ingest(cfg: &ScenarioConfig) -> Result<Vec<PathBuf>> {
    let table = load_communities(cfg)?;
    let t = parse_cdr(open(&cfg.cdr, "cdr")?, table.len(), cfg.window_minutes)?;
    let ex = extract(&t, cfg.rates)?;
    let density = compute_density(&t, &table.area_km2, cfg.slot_minutes)?;
    let m = &ex.mobility;
    let mut st = Staging::new(&cfg.out, "ingest")?;
    st.write("nu.csv", |w| write_matrix(w, &m.nu))?;
    st.write("sigma.csv", |w| write_vector(w, "sigma", &m.sigma))?;
    st.write("zeta.csv", |w| write_matrix(w, &m.zeta))?;
    st.write("transitions.csv", |w| {
        write_matrix(w, &ex.counts.transitions)
    })?;
    st.write("returns.csv", |w| write_matrix(w, &ex.counts.returns))?;
    st.write("density.csv", |w| write_density(w, &density))?;
    st.write("homes.csv", |w| {
        writeln!(w, "user_id,home")?;
        for (u, h) in &ex.homes {
            writeln!(w, "{u},{h}")?;
        }
        Ok(())
    })?;
    let stats = IngestStats {
        users: t.len(),
        transitions: t.transition_count(),
        isolated: m
            .isolated
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect(),
    };
    finish(
        st,
        "ingest",
        cfg,
        Vec::new(),
        &[&cfg.cdr, &cfg.communities],
        stats,
    )
}

struct Loaded {
    table: CommunityTable,
    mobility: MobilityParameters,
    transitions: Matrix,
    paths: Vec<PathBuf>,
}

fn load_mobility(cfg: &ScenarioConfig) -> Result<Loaded> {
    let table = load_communities(cfg)?;
    let dir = &cfg.mobility_dir;
    let paths: Vec<PathBuf> = ["nu.csv", "sigma.csv", "zeta.csv", "transitions.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let nu = read_matrix(open(&paths[0], "mobility_dir")?)?;
    let sigma = read_vector(open(&paths[1], "mobility_dir")?)?;
    let zeta = read_matrix(open(&paths[2], "mobility_dir")?)?;
    let transitions = read_matrix(open(&paths[3], "mobility_dir")?)?;
    let mobility = MobilityParameters::new(nu, sigma, zeta)?;
    if mobility.community_count() != table.len() || transitions.rows() != table.len() {
        return Err(Error::Dimension(format!(
            "{} communities but mobility for {}",
            table.len(),
            mobility.community_count()
        )));
    }
    let mut all = vec![cfg.communities.clone()];
    all.extend(paths);
    Ok(Loaded {
        table,
        mobility,
        transitions,
        paths: all,
    })
}

fn prepare(cfg: &ScenarioConfig, l: &Loaded) -> Result<PreparedModel> {
    prepare_model(
        &l.table.population,
        &l.table.area_km2,
        &l.mobility,
        &l.transitions,
        &cfg.model,
    )
}

fn local_r0(pm: &PreparedModel) -> Vec<f64> {
    let p = &pm.params;
    (0..p.community_count())
        .map(|j| p.k_mean[j] * p.beta[j] / p.delta[j])
        .collect()
}

/// Probability distributions of census and steady-state occupancy.
fn distributions(census: &[f64], occupancy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let norm = |v: &[f64]| {
        let s: f64 = v.iter().sum();
        v.iter()
            .map(|x| if s > 0.0 { x / s } else { 0.0 })
            .collect::<Vec<f64>>()
    };
    (norm(census), norm(occupancy))
}

#[derive(Serialize)]
struct SteadyStats {
    kl_census_vs_steady: f64,
    pruned: Vec<(usize, usize)>,
    warnings: Vec<String>,
}

pub fn steady(cfg: &ScenarioConfig) -> Result<Vec<PathBuf>> {
    let l = load_mobility(cfg)?;
    let pm = prepare(cfg, &l)?;
    let (d1, d2) = distributions(&l.table.population, &pm.steady.occupancy);
    let kl = kl_symmetrized(&d1, &d2)?;
    let r0 = local_r0(&pm);
    let mut st = Staging::new(&cfg.out, "steady-state")?;
    st.write("n_star.csv", |w| write_matrix(w, &pm.steady.n_star))?;
    st.write("steady.csv", |w| {
        write_columns(
            w,
            &[
                ("census", &l.table.population),
                ("occupancy", &pm.steady.occupancy),
                ("rho_star", &pm.steady.rho_star),
                ("k_mean", &pm.params.k_mean),
                ("beta", &pm.params.beta),
                ("r0", &r0),
            ],
        )
    })?;
    let stats = SteadyStats {
        kl_census_vs_steady: kl,
        pruned: pm.pruned.clone(),
        warnings: pm.warnings.clone(),
    };
    st.write_json("steady.json", &stats)?;
    let inputs: Vec<&Path> = l.paths.iter().map(PathBuf::as_path).collect();
    finish(st, "steady-state", cfg, Vec::new(), &inputs, stats)
}

pub fn resolve_origin(
    choice: OriginChoice,
    pm: &PreparedModel,
    transitions: &Matrix,
) -> Result<usize> {
    let n = pm.params.community_count();
    match choice {
        OriginChoice::Community(o) if o < n => Ok(o),
        OriginChoice::Community(o) => Err(Error::validation("origin", format!("community {o} out of range (have {n})"))),
        OriginChoice::Dense => Ok(dense_origin(transitions)),
        OriginChoice::Sparse => sparse_origin(pm, SPARSE_ORIGIN_MIN_R0).ok_or_else(|| {
            Error::validation(
                "origin",
                format!("no community reaches local R0 >= {SPARSE_ORIGIN_MIN_R0}; raise c or pick an index"),
            )
        }),
    }
}

#[derive(Serialize)]
struct RunSummary {
    origin: usize,
    origin_r0: f64,
    engine: Engine,
    dynamics: Dynamics,
    /// Summary of the (mean) trajectory.
    summary: EpidemicSummary,
    replica_peak_times: Vec<f64>,
    median_peak_time: f64,
    three_phase_replicas: usize,
}

#[derive(Serialize)]
#[serde(untagged)]
enum RunStats {
    Deterministic(ClampReport),
    Stochastic(LeapStats),
}

pub fn run(cfg: &ScenarioConfig) -> Result<Vec<PathBuf>> {
    let l = load_mobility(cfg)?;
    let pm = prepare(cfg, &l)?;
    let origin = resolve_origin(cfg.origin, &pm, &l.transitions)?;
    let x0 = pm.initial_state(
        SeedSpec {
            origin,
            epsilon: cfg.epsilon,
        },
        cfg.model.latent_fraction,
    )?;
    let mut st = Staging::new(&cfg.out, "run")?;
    let (series, replicas, stats, seeds) = match cfg.engine {
        Engine::Deterministic => {
            let tr = integrate(
                pm.dynamics,
                &pm.params,
                &x0,
                cfg.dt,
                cfg.horizon,
                cfg.sample_every,
            )?;
            (
                tr.series,
                Vec::new(),
                RunStats::Deterministic(tr.report),
                Vec::new(),
            )
        }
        Engine::Stochastic => {
            let init = IntegerState::from_compartments(&x0, cfg.seed);
            let ens = run_ensemble(
                &init,
                &pm.params,
                cfg.tau,
                cfg.horizon,
                cfg.sample_every,
                cfg.replicas,
                cfg.seed,
            )?;
            st.write("ensemble.csv", |w| write_ensemble(w, &ens.mean, &ens.std))?;
            st.write("replicas.csv", |w| {
                write_replicas(w, &ens.replicas, &ens.seeds)
            })?;
            (
                ens.mean,
                ens.replicas,
                RunStats::Stochastic(ens.stats),
                ens.seeds,
            )
        }
    };
    st.write("timeseries.csv", |w| write_timeseries(w, &series))?;
    st.write("global.csv", |w| write_global(w, &series))?;
    st.write("curve_I.dat", |w| write_curve(w, &series, Compartment::I))?;
    let summary = epidemic_summary(&series, origin)?;
    let per_replica: Vec<EpidemicSummary> = replicas
        .iter()
        .map(|ts| epidemic_summary(ts, origin))
        .collect::<Result<_>>()?;
    let replica_peak_times: Vec<f64> = per_replica.iter().map(|s| s.peak_time).collect();
    let run_summary = RunSummary {
        origin,
        origin_r0: local_r0(&pm)[origin],
        engine: cfg.engine,
        dynamics: pm.dynamics,
        median_peak_time: median(&replica_peak_times).unwrap_or(summary.peak_time),
        three_phase_replicas: per_replica.iter().filter(|s| s.has_three_phases()).count(),
        replica_peak_times,
        summary,
    };
    st.write_json("summary.json", &run_summary)?;
    let inputs: Vec<&Path> = l.paths.iter().map(PathBuf::as_path).collect();
    finish(st, "run", cfg, seeds, &inputs, stats)
}

fn write_replicas<W: Write>(
    mut w: W,
    replicas: &[TimeSeries],
    seeds: &[u64],
) -> std::io::Result<()> {
    writeln!(w, "replica,seed,{GLOBAL_HEADER}")?;
    for (r, (ts, seed)) in replicas.iter().zip(seeds).enumerate() {
        for (t, g) in ts.times.iter().zip(&ts.global) {
            writeln!(
                w,
                "{r},{seed},{t},{},{},{},{},{},{}",
                g[0], g[1], g[2], g[3], g[4], g[5]
            )?;
        }
    }
    Ok(())
}

const EARTH_RADIUS_KM: f64 = 6371.0;

fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().asin()
}

#[derive(Serialize)]
struct AnalysisReport {
    ranking: Vec<usize>,
    degree_histogram: Vec<usize>,
    jumps: usize,
    power_law: Option<PowerLawFit>,
    power_law_error: Option<String>,
    kl_census_vs_steady: Option<f64>,
}

pub fn analyze(cfg: &ScenarioConfig) -> Result<Vec<PathBuf>> {
    let table = load_communities(cfg)?;
    let t = parse_cdr(open(&cfg.cdr, "cdr")?, table.len(), cfg.window_minutes)?;
    let ex = extract(&t, cfg.rates)?;
    let gs = graph_stats(&ex.counts.transitions, &table.population)?;
    let mut jumps = Vec::new();
    for (_, visits) in t.users() {
        for w in visits.windows(2) {
            let (a, b) = (w[0].community, w[1].community);
            jumps.push(haversine_km(
                table.lat[a],
                table.lon[a],
                table.lat[b],
                table.lon[b],
            ));
        }
    }
    let (power_law, power_law_error) = match fit_power_law(&jumps, cfg.min_jump_km) {
        Ok(f) => (Some(f), None),
        Err(e @ Error::TooFewSamples { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    // the steady-state comparison needs a model; skip it when one cannot be built
    let kl = prepare_model(
        &table.population,
        &table.area_km2,
        &ex.mobility,
        &ex.counts.transitions,
        &cfg.model,
    )
    .ok()
    .and_then(|pm| {
        let (d1, d2) = distributions(&table.population, &pm.steady.occupancy);
        kl_symmetrized(&d1, &d2).ok()
    });
    let mut st = Staging::new(&cfg.out, "analyze")?;
    let as_f64 = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let (out_deg, in_deg, deg) = (
        as_f64(&gs.out_degree),
        as_f64(&gs.in_degree),
        as_f64(&gs.degree),
    );
    st.write("graph.csv", |w| {
        write_columns(
            w,
            &[
                ("in_flow_share", &gs.in_flow_share),
                ("in_flow_per_capita", &gs.in_flow_per_capita),
                ("betweenness", &gs.betweenness),
                ("out_degree", &out_deg),
                ("in_degree", &in_deg),
                ("degree", &deg),
            ],
        )
    })?;
    st.write("jumps.dat", |w| {
        writeln!(w, "# length_km ccdf")?;
        let mut sorted = jumps.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        for (k, x) in sorted.iter().enumerate() {
            writeln!(w, "{x} {}", (n - k as f64) / n)?;
        }
        Ok(())
    })?;
    let report = AnalysisReport {
        ranking: gs.ranking.clone(),
        degree_histogram: gs.degree_histogram.clone(),
        jumps: jumps.len(),
        power_law,
        power_law_error,
        kl_census_vs_steady: kl,
    };
    st.write_json("analysis.json", &report)?;
    let mut counts = BTreeMap::new();
    counts.insert("jumps", jumps.len());
    finish(
        st,
        "analyze",
        cfg,
        Vec::new(),
        &[&cfg.cdr, &cfg.communities],
        counts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haversine_quarter_meridian() {
        let d = haversine_km(0.0, 0.0, 90.0, 0.0);
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        // one degree of longitude on the equator
        assert!((haversine_km(0.0, 0.0, 0.0, 1.0) - 111.194_926_644_558_73).abs() < 1e-9);
    }
}
