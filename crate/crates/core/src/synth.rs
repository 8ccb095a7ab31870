//! Synthetic census and call-record corpora with planted ground truth.
//!
//! A world is a set of community centres in a square box with heavy-tailed
//! attraction weights; populations follow the weights and the heaviest
//! community (the capital) gets an extra boost. Each user lives in a home
//! community and alternates between home and single trips:
//!
//! - at home, leaves after an exponential wait with the home community's
//!   departure intensity;
//! - the trip length `L` is drawn from a Pareto law (`x_min`, `jump_alpha`);
//!   a few random directions are tried, each landing at the nearest
//!   community centre other than home, and one landing is picked with
//!   probability proportional to attraction;
//! - away from home, returns after an exponential wait at `mean_return_rate`.
//!
//! Calls observe the walk. Without a call rate every move is recorded;
//! with one, records are emitted at diurnally modulated Poisson call times
//! (plus one record at `t = 0`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdr::CdrRecord;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::AliasTable;

/// Centre of the lat/lon projection.
pub const ORIGIN_LAT: f64 = 7.5;
pub const ORIGIN_LON: f64 = -5.5;
const KM_PER_DEG: f64 = 111.32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub community_count: usize,
    pub total_users: usize,
    pub total_population: u64,
    pub duration_minutes: u64,
    pub jump_alpha: f64,
    pub jump_x_min_km: f64,
    /// Attraction weights are `u^(-attraction_exponent)`, `u` uniform.
    pub attraction_exponent: f64,
    pub capital_boost: f64,
    /// Mean of the per-community departure intensities, per minute.
    pub mean_departure_rate: f64,
    /// Log-normal spread of departure intensities around the mean.
    pub intensity_spread: f64,
    pub mean_return_rate: f64,
    /// Calls per minute; `None` records every move.
    pub call_rate: Option<f64>,
    pub diurnal_amplitude: f64,
    pub box_km: f64,
    pub direction_candidates: usize,
    pub slot_minutes: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            community_count: 255,
            total_users: 20_000,
            total_population: 22_000_000,
            duration_minutes: crate::DEFAULT_WINDOW_MINUTES as u64,
            jump_alpha: 2.51,
            jump_x_min_km: 10.0,
            attraction_exponent: 1.0,
            capital_boost: 2.0,
            mean_departure_rate: 1.0 / 43_200.0,
            intensity_spread: 0.3,
            mean_return_rate: 1.0 / 720.0,
            call_rate: Some(1.0 / 240.0),
            diurnal_amplitude: 0.5,
            box_km: 570.0,
            direction_candidates: 4,
            slot_minutes: 1440,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("jump_x_min_km", self.jump_x_min_km),
            ("mean_departure_rate", self.mean_departure_rate),
            ("mean_return_rate", self.mean_return_rate),
            ("box_km", self.box_km),
            ("capital_boost", self.capital_boost),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(
                    name,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        if !(self.jump_alpha > 1.0) || !self.jump_alpha.is_finite() {
            return Err(Error::validation(
                "jump_alpha",
                format!("must be greater than 1, got {}", self.jump_alpha),
            ));
        }
        if self.community_count == 0 {
            return Err(Error::validation("community_count", "must be positive"));
        }
        if self.total_users == 0 {
            return Err(Error::validation("total_users", "must be positive"));
        }
        if self.total_population < self.community_count as u64 {
            return Err(Error::validation(
                "total_population",
                "must be at least one per community",
            ));
        }
        if self.duration_minutes == 0 {
            return Err(Error::validation("duration_minutes", "must be positive"));
        }
        if self.slot_minutes == 0 || self.duration_minutes % self.slot_minutes != 0 {
            return Err(Error::validation(
                "slot_minutes",
                "must be positive and divide duration_minutes",
            ));
        }
        if !(self.attraction_exponent >= 0.0) || !self.attraction_exponent.is_finite() {
            return Err(Error::validation(
                "attraction_exponent",
                "must be non-negative",
            ));
        }
        if !(self.intensity_spread >= 0.0) || !self.intensity_spread.is_finite() {
            return Err(Error::validation(
                "intensity_spread",
                "must be non-negative",
            ));
        }
        if let Some(c) = self.call_rate {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::validation(
                    "call_rate",
                    format!("must be positive, got {c}"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.diurnal_amplitude) {
            return Err(Error::validation("diurnal_amplitude", "must lie in [0, 1]"));
        }
        if self.direction_candidates == 0 {
            return Err(Error::validation(
                "direction_candidates",
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Communities of a synthetic country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub names: Vec<String>,
    pub x_km: Vec<f64>,
    pub y_km: Vec<f64>,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    pub area_km2: Vec<f64>,
    pub population: Vec<u64>,
    pub attraction: Vec<f64>,
    pub capital: usize,
    pub box_km: f64,
}

impl World {
    pub fn community_count(&self) -> usize {
        self.names.len()
    }

    pub fn census(&self) -> Vec<f64> {
        self.population.iter().map(|&p| p as f64).collect()
    }

    pub fn distance_km(&self, a: usize, b: usize) -> f64 {
        (self.x_km[a] - self.x_km[b]).hypot(self.y_km[a] - self.y_km[b])
    }

    /// Nearest centre to `(x, y)` other than `exclude`.
    fn nearest(&self, x: f64, y: f64, exclude: usize) -> Option<usize> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for c in 0..self.community_count() {
            if c == exclude {
                continue;
            }
            let dx = self.x_km[c] - x;
            let dy = self.y_km[c] - y;
            let d = dx * dx + dy * dy;
            if d < best_d {
                best_d = d;
                best = Some(c);
            }
        }
        best
    }
}

/// Monte-Carlo samples per community used for the Voronoi area estimate.
const AREA_SAMPLES_PER_COMMUNITY: usize = 200;

pub fn generate_world(cfg: &SynthConfig) -> Result<World> {
    cfg.validate()?;
    let n = cfg.community_count;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut attraction: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            u.powf(-cfg.attraction_exponent)
        })
        .collect();
    let capital = argmax(&attraction);
    attraction[capital] *= cfg.capital_boost;

    let total_w: f64 = attraction.iter().sum();
    let mut population: Vec<u64> = attraction
        .iter()
        .map(|w| ((cfg.total_population as f64 * w / total_w).floor() as u64).max(1))
        .collect();
    let assigned: u64 = population.iter().sum();
    let largest = argmax(&attraction);
    if assigned <= cfg.total_population {
        population[largest] += cfg.total_population - assigned;
    } else {
        population[largest] -= assigned - cfg.total_population;
    }

    let b = cfg.box_km;
    let x_km: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * b).collect();
    let y_km: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * b).collect();
    let lat = y_km
        .iter()
        .map(|y| ORIGIN_LAT + (y - b / 2.0) / KM_PER_DEG)
        .collect();
    let lon_scale = KM_PER_DEG * ORIGIN_LAT.to_radians().cos();
    let lon = x_km
        .iter()
        .map(|x| ORIGIN_LON + (x - b / 2.0) / lon_scale)
        .collect();

    let mut world = World {
        names: (0..n).map(|i| format!("C{i:03}")).collect(),
        x_km,
        y_km,
        lat,
        lon,
        area_km2: Vec::new(),
        population,
        attraction,
        capital,
        box_km: b,
    };
    let samples = AREA_SAMPLES_PER_COMMUNITY * n;
    let mut hits = vec![0usize; n];
    for _ in 0..samples {
        let x = rng.random::<f64>() * b;
        let y = rng.random::<f64>() * b;
        let c = world
            .nearest(x, y, usize::MAX)
            .expect("at least one community");
        hits[c] += 1;
    }
    let cell = b * b / samples as f64;
    world.area_km2 = hits.iter().map(|&h| (h.max(1)) as f64 * cell).collect();
    Ok(world)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Depart,
    Return,
}

/// One true move of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveEvent {
    pub user: usize,
    /// Exact event time in minutes.
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub kind: MoveKind,
    /// Planted trip length for departures, centre distance for returns.
    pub length_km: f64,
}

impl MoveEvent {
    pub fn minute(&self) -> u64 {
        self.time.floor() as u64
    }
}

/// Everything the generator knows that the records only partly reveal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_ids: Vec<String>,
    pub homes: Vec<usize>,
    pub departure_intensity: Vec<f64>,
    pub return_rate: f64,
    pub events: Vec<MoveEvent>,
    /// `tally[i][j]`: true moves from `i` to `j`.
    pub tally: Matrix,
    /// Users present in each community at each slot start (minute resolution).
    pub occupancy: Matrix,
    pub slot_minutes: u64,
    /// Minutes users spent at home, by home community.
    pub home_minutes: Vec<f64>,
    /// Minutes users spent away from home.
    pub away_minutes: f64,
}

impl GroundTruth {
    pub fn departure_lengths(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.kind == MoveKind::Depart)
            .map(|e| e.length_km)
            .collect()
    }

    /// Departures from home per home community.
    pub fn departures(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.departure_intensity.len()];
        for e in self.events.iter().filter(|e| e.kind == MoveKind::Depart) {
            d[e.from] += 1.0;
        }
        d
    }

    pub fn returns(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == MoveKind::Return)
            .count()
    }
}

pub fn user_id(u: usize) -> String {
    format!("u{u:07}")
}

struct UserWalk {
    events: Vec<MoveEvent>,
    records: Vec<CdrRecord>,
    home_minutes: f64,
    away_minutes: f64,
    /// Location at each slot start.
    slots: Vec<usize>,
}

/// Emits the call records and the ground truth for `world`.
pub fn generate_cdr(world: &World, cfg: &SynthConfig) -> Result<(Vec<CdrRecord>, GroundTruth)> {
    cfg.validate()?;
    let n = world.community_count();
    if n != cfg.community_count {
        return Err(Error::Dimension(format!(
            "world has {n} communities, config {}",
            cfg.community_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let spread = cfg.intensity_spread;
    let lognormal = LogNormal::new(-0.5 * spread * spread, spread.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::validation("intensity_spread", e.to_string()))?;
    let departure_intensity: Vec<f64> = (0..n)
        .map(|_| {
            let f = if spread > 0.0 {
                lognormal.sample(&mut rng)
            } else {
                1.0
            };
            cfg.mean_departure_rate * f
        })
        .collect();
    let pop_table = AliasTable::new(&world.census()).expect("positive population");
    let homes: Vec<usize> = (0..cfg.total_users)
        .map(|_| pop_table.sample(&mut rng))
        .collect();

    let walks: Vec<UserWalk> = (0..cfg.total_users)
        .into_par_iter()
        .map(|u| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(2 + u as u64);
            walk(
                world,
                cfg,
                u,
                homes[u],
                departure_intensity[homes[u]],
                &mut r,
            )
        })
        .collect();

    let slots = (cfg.duration_minutes / cfg.slot_minutes) as usize;
    let mut occupancy = Matrix::zeros(slots, n);
    let mut tally = Matrix::square(n);
    let mut home_minutes = vec![0.0; n];
    let mut away_minutes = 0.0;
    let mut events = Vec::new();
    let mut records = Vec::new();
    for (u, w) in walks.into_iter().enumerate() {
        for (s, &c) in w.slots.iter().enumerate() {
            occupancy[(s, c)] += 1.0;
        }
        for e in &w.events {
            tally[(e.from, e.to)] += 1.0;
        }
        home_minutes[homes[u]] += w.home_minutes;
        away_minutes += w.away_minutes;
        events.extend(w.events);
        records.extend(w.records);
    }
    // users are already in id order; a stable sort keeps same-minute records
    // of one user in event order
    records.sort_by_key(|r| r.timestamp);
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.user.cmp(&b.user)));

    let truth = GroundTruth {
        user_ids: (0..cfg.total_users).map(user_id).collect(),
        homes,
        departure_intensity,
        return_rate: cfg.mean_return_rate,
        events,
        tally,
        occupancy,
        slot_minutes: cfg.slot_minutes,
        home_minutes,
        away_minutes,
    };
    Ok((records, truth))
}

fn walk(
    world: &World,
    cfg: &SynthConfig,
    u: usize,
    home: usize,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> UserWalk {
    let end = cfg.duration_minutes as f64;
    let leave = Exp::new(lambda).expect("positive rate");
    let back = Exp::new(cfg.mean_return_rate).expect("positive rate");
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut loc = home;
    let mut home_minutes = 0.0;
    let mut away_minutes = 0.0;
    loop {
        let at_home = loc == home;
        let wait = if at_home {
            leave.sample(rng)
        } else {
            back.sample(rng)
        };
        let next = t + wait;
        let stay = next.min(end) - t;
        if at_home {
            home_minutes += stay;
        } else {
            away_minutes += stay;
        }
        if next >= end {
            break;
        }
        t = next;
        let (to, kind, length_km) = if at_home {
            let (dest, l) = choose_destination(world, cfg, home, rng);
            (dest, MoveKind::Depart, l)
        } else {
            (home, MoveKind::Return, world.distance_km(loc, home))
        };
        events.push(MoveEvent {
            user: u,
            time: t,
            from: loc,
            to,
            kind,
            length_km,
        });
        loc = to;
    }

    // location at each slot start, using minute-resolution event times
    let slot_count = (cfg.duration_minutes / cfg.slot_minutes) as usize;
    let mut slots = Vec::with_capacity(slot_count);
    let mut k = 0;
    let mut here = home;
    for s in 0..slot_count {
        let start = s as u64 * cfg.slot_minutes;
        while k < events.len() && events[k].minute() <= start {
            here = events[k].to;
            k += 1;
        }
        slots.push(here);
    }

    let id = user_id(u);
    let mut records = vec![CdrRecord {
        user_id: id.clone(),
        timestamp: 0,
        community: home,
    }];
    match cfg.call_rate {
        None => records.extend(events.iter().map(|e| CdrRecord {
            user_id: id.clone(),
            timestamp: e.minute(),
            community: e.to,
        })),
        Some(rate) => {
            let peak = rate * (1.0 + cfg.diurnal_amplitude);
            let gap = Exp::new(peak).expect("positive rate");
            let mut tc = 0.0;
            let mut k = 0;
            let mut here = home;
            loop {
                tc += gap.sample(rng);
                if tc >= end {
                    break;
                }
                let accept = call_intensity(rate, cfg.diurnal_amplitude, tc) / peak;
                if rng.random::<f64>() >= accept {
                    continue;
                }
                while k < events.len() && events[k].time <= tc {
                    here = events[k].to;
                    k += 1;
                }
                records.push(CdrRecord {
                    user_id: id.clone(),
                    timestamp: tc.floor() as u64,
                    community: here,
                });
            }
        }
    }
    UserWalk {
        events,
        records,
        home_minutes,
        away_minutes,
        slots,
    }
}

/// Calls per minute at time `t`: lowest around 03:00, highest around 15:00.
pub fn call_intensity(rate: f64, amplitude: f64, t: f64) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * (t / crate::MINUTES_PER_DAY - 0.375);
    rate * (1.0 + amplitude * phase.sin())
}

/// Draws a trip length and a landing community for a departure from `home`.
fn choose_destination(
    world: &World,
    cfg: &SynthConfig,
    home: usize,
    rng: &mut ChaCha8Rng,
) -> (usize, f64) {
    let b = world.box_km;
    let (hx, hy) = (world.x_km[home], world.y_km[home]);
    let mut cands: Vec<usize> = Vec::with_capacity(cfg.direction_candidates);
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let l = cfg.jump_x_min_km * u.powf(-1.0 / (cfg.jump_alpha - 1.0));
        for _ in 0..8 {
            cands.clear();
            for _ in 0..cfg.direction_candidates {
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                let (x, y) = (hx + l * theta.cos(), hy + l * theta.sin());
                if (0.0..=b).contains(&x) && (0.0..=b).contains(&y) {
                    if let Some(c) = world.nearest(x, y, home) {
                        cands.push(c);
                    }
                }
            }
            if !cands.is_empty() {
                let total: f64 = cands.iter().map(|&c| world.attraction[c]).sum();
                let mut pick = rng.random::<f64>() * total;
                for &c in &cands {
                    pick -= world.attraction[c];
                    if pick < 0.0 {
                        return (c, l);
                    }
                }
                return (*cands.last().expect("non-empty"), l);
            }
        }
        // this length leaves the box in every direction tried; draw another
    }
}
