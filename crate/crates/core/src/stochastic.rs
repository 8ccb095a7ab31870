//! Tau-leaping simulation of the full event system on integer counts.
//!
//! Every term of the deterministic right-hand side is a reaction channel.
//! A leap of length `tau` draws a Poisson count for each channel from the
//! pre-leap state. Departures from a home row are drawn as one Poisson total
//! and split over destinations with an alias table, which has the same joint
//! law as independent per-destination counts. A leap that would drive any
//! compartment negative is discarded and replaced by two leaps of `tau / 2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::TimeSeries;
use crate::dynamics::{
    sample_grid, step_sizes, validate_time_grid, Compartment, CompartmentState, Kernel,
    ModelParameters,
};
use crate::error::{Error, Result};
use crate::rng::{poisson, sim_rng, AliasTable, SimRng};

/// Smallest leap allowed after repeated halving, in minutes.
pub const DEFAULT_TAU_MIN: f64 = 0.001;

/// Integer device counts `X[s][i][j]`, same layout as [`CompartmentState`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegerState {
    n: usize,
    values: Vec<i64>,
    pub rng_seed: u64,
}

impl IntegerState {
    pub fn zeros(n: usize) -> Self {
        IntegerState {
            n,
            values: vec![0; 6 * n * n],
            rng_seed: 0,
        }
    }

    /// Rounds every entry and repairs each home row so it sums to the
    /// rounded row total; the residue goes to the row's largest entries.
    pub fn from_compartments(state: &CompartmentState, rng_seed: u64) -> Self {
        let n = state.community_count();
        let nn = n * n;
        let x = state.values();
        let mut values: Vec<i64> = x.iter().map(|v| v.max(0.0).round() as i64).collect();
        for (i, total) in state.home_totals().iter().enumerate() {
            let target = total.round() as i64;
            let mut idx: Vec<usize> = (0..6)
                .flat_map(|s| (0..n).map(move |j| s * nn + i * n + j))
                .collect();
            let mut diff = target - idx.iter().map(|&k| values[k]).sum::<i64>();
            idx.sort_by(|&a, &b| values[b].cmp(&values[a]).then(a.cmp(&b)));
            let mut pos = 0;
            while diff != 0 && !idx.is_empty() {
                let k = idx[pos % idx.len()];
                if diff > 0 {
                    values[k] += 1;
                    diff -= 1;
                } else if values[k] > 0 {
                    values[k] -= 1;
                    diff += 1;
                }
                pos += 1;
            }
        }
        IntegerState {
            n,
            values,
            rng_seed,
        }
    }

    pub fn community_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn index(&self, s: Compartment, i: usize, j: usize) -> usize {
        s.index() * self.n * self.n + i * self.n + j
    }

    pub fn get(&self, s: Compartment, i: usize, j: usize) -> i64 {
        self.values[self.index(s, i, j)]
    }

    pub fn set(&mut self, s: Compartment, i: usize, j: usize, v: i64) {
        let k = self.index(s, i, j);
        self.values[k] = v;
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn home_totals(&self) -> Vec<i64> {
        let n = self.n;
        let nn = n * n;
        (0..n)
            .map(|i| {
                (0..6)
                    .map(|s| {
                        self.values[s * nn + i * n..s * nn + (i + 1) * n]
                            .iter()
                            .sum::<i64>()
                    })
                    .sum()
            })
            .collect()
    }

    pub fn total(&self, s: Compartment) -> i64 {
        let nn = self.n * self.n;
        self.values[s.index() * nn..(s.index() + 1) * nn]
            .iter()
            .sum()
    }

    pub fn to_compartments(&self, time: f64) -> CompartmentState {
        let v = self.values.iter().map(|&x| x as f64).collect();
        CompartmentState::from_values(self.n, v, time).expect("layout matches")
    }

    fn latent_planes_zero(&self) -> bool {
        let nn = self.n * self.n;
        self.values[3 * nn..].iter().all(|&v| v == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Infect,
    Recover,
    Depart,
    Return,
    SleepS,
    SleepI,
    SleepR,
    WakeS,
    WakeI,
    WakeR,
    LatentRecover,
}

/// One reaction channel with its current propensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventChannel {
    pub kind: ChannelKind,
    /// State of the devices that fire the event.
    pub compartment: Compartment,
    pub home: usize,
    pub location: usize,
    /// Set for departures only.
    pub destination: Option<usize>,
    /// Events per minute.
    pub rate: f64,
}

impl EventChannel {
    /// `(state, home, location, change)` pairs applied per event.
    pub fn stoichiometry(&self) -> [(Compartment, usize, usize, i64); 2] {
        use Compartment::*;
        let (c, i, j) = (self.compartment, self.home, self.location);
        let to = |s| (s, i, j, 1);
        let from = (c, i, j, -1);
        match self.kind {
            ChannelKind::Infect => [from, to(I)],
            ChannelKind::Recover | ChannelKind::LatentRecover => [from, to(R)],
            ChannelKind::Depart => [
                from,
                (c, i, self.destination.expect("departure destination"), 1),
            ],
            ChannelKind::Return => [from, (c, i, i, 1)],
            ChannelKind::SleepS | ChannelKind::SleepI | ChannelKind::SleepR => [from, to(c.twin())],
            ChannelKind::WakeS | ChannelKind::WakeI | ChannelKind::WakeR => [from, to(c.twin())],
        }
    }
}

fn sleep_kind(s: usize) -> ChannelKind {
    [
        ChannelKind::SleepS,
        ChannelKind::SleepI,
        ChannelKind::SleepR,
    ][s]
}

fn wake_kind(s: usize) -> ChannelKind {
    [ChannelKind::WakeS, ChannelKind::WakeI, ChannelKind::WakeR][s]
}

/// Every channel with a positive propensity in the given state.
pub fn channel_propensities(
    state: &IntegerState,
    p: &ModelParameters,
) -> Result<Vec<EventChannel>> {
    check_shape(state, p)?;
    let x: Vec<f64> = state.values.iter().map(|&v| v as f64).collect();
    let mut kernel = Kernel::new(p)?;
    kernel.prepare(&x)?;
    let n = state.n;
    let m = &p.mobility;
    let mut out = Vec::new();
    let mut push = |kind, compartment, home, location, destination, rate: f64| {
        if rate > 0.0 {
            out.push(EventChannel {
                kind,
                compartment,
                home,
                location,
                destination,
                rate,
            });
        }
    };
    for c in Compartment::ALL {
        let s = c.index();
        for i in 0..n {
            for j in 0..n {
                let v = state.get(c, i, j) as f64;
                if v == 0.0 {
                    continue;
                }
                if j == i {
                    for d in 0..n {
                        if d != i {
                            push(
                                ChannelKind::Depart,
                                c,
                                i,
                                i,
                                Some(d),
                                m.sigma[i] * m.nu[(i, d)] * v,
                            );
                        }
                    }
                } else {
                    push(ChannelKind::Return, c, i, j, None, m.zeta[(j, i)] * v);
                }
                match c {
                    Compartment::S => push(
                        ChannelKind::Infect,
                        c,
                        i,
                        j,
                        None,
                        kernel.coeff[j] * kernel.itot[j] * v,
                    ),
                    Compartment::I => push(ChannelKind::Recover, c, i, j, None, p.delta[j] * v),
                    Compartment::EI => {
                        push(ChannelKind::LatentRecover, c, i, j, None, p.gamma[j] * v)
                    }
                    _ => {}
                }
                if s < 3 {
                    push(sleep_kind(s), c, i, j, None, p.mu[s][j] * v);
                } else {
                    push(wake_kind(s - 3), c, i, j, None, p.alpha[s - 3][j] * v);
                }
            }
        }
    }
    Ok(out)
}

fn check_shape(state: &IntegerState, p: &ModelParameters) -> Result<()> {
    if state.n != p.community_count() {
        return Err(Error::Dimension(format!(
            "state has {} communities, parameters {}",
            state.n,
            p.community_count()
        )));
    }
    if state.values.iter().any(|&v| v < 0) {
        return Err(Error::validation("state", "negative device count"));
    }
    Ok(())
}

/// Leap bookkeeping for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LeapStats {
    pub accepted_leaps: u64,
    /// Leaps discarded because a compartment would go negative; each one is
    /// replaced by two half leaps.
    pub halvings: u64,
    pub smallest_tau: f64,
}

impl LeapStats {
    fn merge(&mut self, other: &LeapStats) {
        self.accepted_leaps += other.accepted_leaps;
        self.halvings += other.halvings;
        if other.smallest_tau > 0.0
            && (self.smallest_tau == 0.0 || other.smallest_tau < self.smallest_tau)
        {
            self.smallest_tau = other.smallest_tau;
        }
    }
}

/// Reusable tau-leap engine for one parameter set.
pub struct TauLeaper<'a> {
    p: &'a ModelParameters,
    n: usize,
    planes: usize,
    coeff: Vec<f64>,
    /// `ret[i*n + j] = zeta[j][i]`.
    ret: Vec<f64>,
    alias: Vec<Option<AliasTable>>,
    /// Locations that home `i` devices can ever occupy (always includes `i`).
    reach: Vec<Vec<usize>>,
    force: Vec<f64>,
    delta: Vec<i64>,
    touched: Vec<usize>,
    marked: Vec<bool>,
    pub tau_min: f64,
    pub stats: LeapStats,
}

impl<'a> TauLeaper<'a> {
    pub fn new(p: &'a ModelParameters, initial: &IntegerState) -> Result<Self> {
        check_shape(initial, p)?;
        let kernel = Kernel::new(p)?;
        let n = p.community_count();
        let nn = n * n;
        let m = &p.mobility;
        let planes = if p.has_latent_rates() || !initial.latent_planes_zero() {
            6
        } else {
            3
        };
        for j in 0..n {
            if p.n_star_loc[j] > 0.0 {
                continue;
            }
            for s in 0..3 {
                for i in 0..n {
                    if initial.values[s * nn + i * n + j] != 0 {
                        return Err(Error::EmptyNormalization { location: j });
                    }
                }
            }
        }
        let mut ret = vec![0.0; nn];
        for i in 0..n {
            for j in 0..n {
                ret[i * n + j] = m.zeta[(j, i)];
            }
        }
        let alias = (0..n)
            .map(|i| {
                if m.sigma[i] > 0.0 {
                    AliasTable::new(m.nu.row(i))
                } else {
                    None
                }
            })
            .collect();
        let reach = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| {
                        j == i
                            || (m.sigma[i] > 0.0 && m.nu[(i, j)] > 0.0)
                            || (0..6).any(|s| initial.values[s * nn + i * n + j] != 0)
                    })
                    .collect()
            })
            .collect();
        Ok(TauLeaper {
            p,
            n,
            planes,
            coeff: kernel.coeff,
            ret,
            alias,
            reach,
            force: vec![0.0; n],
            delta: vec![0; 6 * nn],
            touched: Vec::new(),
            marked: vec![false; 6 * nn],
            tau_min: DEFAULT_TAU_MIN,
            stats: LeapStats::default(),
        })
    }

    #[inline]
    fn add(&mut self, k: usize, v: i64) {
        self.delta[k] += v;
        if !self.marked[k] {
            self.marked[k] = true;
            self.touched.push(k);
        }
    }

    #[inline]
    fn fire(&mut self, from: usize, to: usize, lambda: f64, rng: &mut SimRng) {
        let k = poisson(rng, lambda) as i64;
        if k > 0 {
            self.add(from, -k);
            self.add(to, k);
        }
    }

    fn draw(&mut self, x: &[i64], tau: f64, rng: &mut SimRng) {
        let n = self.n;
        let nn = n * n;
        let p = self.p;
        let i_plane = Compartment::I.index() * nn;
        self.force.iter_mut().for_each(|f| *f = 0.0);
        for i in 0..n {
            for &j in &self.reach[i] {
                self.force[j] += x[i_plane + i * n + j] as f64;
            }
        }
        for j in 0..n {
            self.force[j] *= self.coeff[j];
        }
        for s in 0..self.planes {
            let plane = s * nn;
            for i in 0..n {
                let row = plane + i * n;
                let home = x[row + i];
                let sigma = p.mobility.sigma[i];
                if home > 0 && sigma > 0.0 {
                    let k = poisson(rng, sigma * home as f64 * tau) as i64;
                    if k > 0 {
                        self.add(row + i, -k);
                        for _ in 0..k {
                            let d = self.alias[i]
                                .as_ref()
                                .expect("alias for moving home")
                                .sample(rng);
                            self.add(row + d, 1);
                        }
                    }
                }
                for r in 0..self.reach[i].len() {
                    let j = self.reach[i][r];
                    let v = x[row + j];
                    if v == 0 {
                        continue;
                    }
                    let vf = v as f64;
                    let k = row + j;
                    if j != i {
                        let z = self.ret[i * n + j];
                        if z > 0.0 {
                            self.fire(k, row + i, z * vf * tau, rng);
                        }
                    }
                    let cell = i * n + j;
                    match s {
                        0 => {
                            self.fire(k, i_plane + cell, self.force[j] * vf * tau, rng);
                            self.fire(k, 3 * nn + cell, p.mu[0][j] * vf * tau, rng);
                        }
                        1 => {
                            self.fire(k, 2 * nn + cell, p.delta[j] * vf * tau, rng);
                            self.fire(k, 4 * nn + cell, p.mu[1][j] * vf * tau, rng);
                        }
                        2 => self.fire(k, 5 * nn + cell, p.mu[2][j] * vf * tau, rng),
                        3 => self.fire(k, cell, p.alpha[0][j] * vf * tau, rng),
                        4 => {
                            self.fire(k, nn + cell, p.alpha[1][j] * vf * tau, rng);
                            self.fire(k, 2 * nn + cell, p.gamma[j] * vf * tau, rng);
                        }
                        _ => self.fire(k, 2 * nn + cell, p.alpha[2][j] * vf * tau, rng),
                    }
                }
            }
        }
    }

    /// Applies the pending changes if nothing goes negative; always clears them.
    fn commit(&mut self, x: &mut [i64]) -> bool {
        let ok = self.touched.iter().all(|&k| x[k] + self.delta[k] >= 0);
        for &k in &self.touched {
            if ok {
                x[k] += self.delta[k];
            }
            self.delta[k] = 0;
            self.marked[k] = false;
        }
        self.touched.clear();
        ok
    }

    /// Advances `state` by `tau`, halving on negativity.
    pub fn advance(
        &mut self,
        state: &mut IntegerState,
        t: f64,
        tau: f64,
        rng: &mut SimRng,
    ) -> Result<()> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::validation(
                "tau",
                format!("must be positive, got {tau}"),
            ));
        }
        self.leap(&mut state.values, t, tau, rng)
    }

    fn leap(&mut self, x: &mut [i64], t: f64, tau: f64, rng: &mut SimRng) -> Result<()> {
        self.draw(x, tau, rng);
        if self.commit(x) {
            self.stats.accepted_leaps += 1;
            if self.stats.smallest_tau == 0.0 || tau < self.stats.smallest_tau {
                self.stats.smallest_tau = tau;
            }
            return Ok(());
        }
        let half = 0.5 * tau;
        if half < self.tau_min {
            return Err(Error::TauUnderflow {
                time: t,
                tau: half,
                tau_min: self.tau_min,
            });
        }
        self.stats.halvings += 1;
        self.leap(x, t, half, rng)?;
        self.leap(x, t + half, half, rng)
    }
}

/// One leap of length `tau` (with halving) from a fresh engine.
pub fn tau_leap_step(
    state: &mut IntegerState,
    p: &ModelParameters,
    tau: f64,
    rng: &mut SimRng,
) -> Result<LeapStats> {
    let mut leaper = TauLeaper::new(p, state)?;
    leaper.advance(state, 0.0, tau, rng)?;
    Ok(leaper.stats)
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: TimeSeries,
    pub final_state: IntegerState,
    pub stats: LeapStats,
}

/// Runs leaps of `tau` from `t = 0` to `horizon`, sampling every
/// `sample_every` minutes.
pub fn simulate(
    initial: &IntegerState,
    p: &ModelParameters,
    tau: f64,
    horizon: f64,
    sample_every: f64,
    seed: u64,
) -> Result<SimOutput> {
    validate_time_grid(tau, horizon, 0.0, sample_every, "tau")?;
    let mut leaper = TauLeaper::new(p, initial)?;
    let mut rng = sim_rng(seed);
    let mut state = initial.clone();
    state.rng_seed = seed;
    let mut series = TimeSeries::new(state.n);
    series.seed = Some(seed);
    series.push_counts(0.0, &state.values);
    let grid = sample_grid(0.0, horizon, sample_every);
    let mut t = 0.0;
    for &target in &grid[1..] {
        for h in step_sizes(t, target, tau) {
            leaper.leap(&mut state.values, t, h, &mut rng)?;
            t += h;
        }
        t = target;
        series.push_counts(t, &state.values);
    }
    Ok(SimOutput {
        series,
        final_state: state,
        stats: leaper.stats,
    })
}

/// Replicas with their pointwise mean and (population) standard deviation.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub replicas: Vec<TimeSeries>,
    pub mean: TimeSeries,
    pub std: TimeSeries,
    pub seeds: Vec<u64>,
    pub stats: LeapStats,
}

impl EnsembleResult {
    pub fn replica_count(&self) -> usize {
        self.replicas.len()
    }
}

/// Independent replicas seeded `base_seed + r`, run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    initial: &IntegerState,
    p: &ModelParameters,
    tau: f64,
    horizon: f64,
    sample_every: f64,
    n_replicas: usize,
    base_seed: u64,
) -> Result<EnsembleResult> {
    if n_replicas == 0 {
        return Err(Error::validation("replicas", "need at least one replica"));
    }
    let seeds: Vec<u64> = (0..n_replicas as u64)
        .map(|r| base_seed.wrapping_add(r))
        .collect();
    let runs: Vec<SimOutput> = seeds
        .par_iter()
        .map(|&s| simulate(initial, p, tau, horizon, sample_every, s))
        .collect::<Result<_>>()?;
    let mut stats = LeapStats::default();
    for r in &runs {
        stats.merge(&r.stats);
    }
    let replicas: Vec<TimeSeries> = runs.into_iter().map(|r| r.series).collect();
    let (mean, std) = moments(&replicas);
    Ok(EnsembleResult {
        replicas,
        mean,
        std,
        seeds,
        stats,
    })
}

/// Pointwise mean and population standard deviation over equal-grid series.
pub fn moments(series: &[TimeSeries]) -> (TimeSeries, TimeSeries) {
    let first = &series[0];
    let n = first.communities();
    let r = series.len() as f64;
    let mut mean = TimeSeries::new(n);
    let mut std = TimeSeries::new(n);
    for (k, &t) in first.times.iter().enumerate() {
        let mut m = vec![[0.0; 6]; n];
        for ts in series {
            assert_eq!(ts.times[k], t, "replicas on different grids");
            for (acc, v) in m.iter_mut().zip(&ts.by_community[k]) {
                for s in 0..6 {
                    acc[s] += v[s];
                }
            }
        }
        m.iter_mut()
            .for_each(|row| row.iter_mut().for_each(|v| *v /= r));
        let mut var = vec![[0.0; 6]; n];
        for ts in series {
            for ((acc, v), mu) in var.iter_mut().zip(&ts.by_community[k]).zip(&m) {
                for s in 0..6 {
                    let d = v[s] - mu[s];
                    acc[s] += d * d;
                }
            }
        }
        let sd = var
            .iter()
            .map(|row| {
                let mut o = [0.0; 6];
                for s in 0..6 {
                    o[s] = (row[s] / r).sqrt();
                }
                o
            })
            .collect();
        mean.push(t, m);
        std.push(t, sd);
    }
    // the global columns of `std` are sums of per-community deviations, which
    // is not a deviation; recompute them from the replicas' global totals
    for k in 0..first.len() {
        for s in 0..6 {
            let mu = series.iter().map(|ts| ts.global[k][s]).sum::<f64>() / r;
            let v = series
                .iter()
                .map(|ts| (ts.global[k][s] - mu).powi(2))
                .sum::<f64>()
                / r;
            mean.global[k][s] = mu;
            std.global[k][s] = v.sqrt();
        }
    }
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdr::MobilityParameters;
    use crate::dynamics::{rhs, Dynamics};
    use crate::matrix::Matrix;
    use crate::mobility::steady_state;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use Compartment::*;

    fn mobility(n: usize, rng: &mut ChaCha8Rng) -> MobilityParameters {
        let mut nu = Matrix::square(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    nu[(i, j)] = rng.random::<f64>() + 0.05;
                }
            }
            let s: f64 = nu.row(i).iter().sum();
            if s > 0.0 {
                nu.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
        }
        let sigma = (0..n)
            .map(|_| {
                if n > 1 {
                    rng.random_range(1e-3..2e-2)
                } else {
                    0.0
                }
            })
            .collect();
        let zeta = Matrix::from_fn(n, n, |j, i| {
            if i == j {
                0.0
            } else {
                rng.random_range(1e-3..2e-2)
            }
        });
        MobilityParameters::new(nu, sigma, zeta).unwrap()
    }

    fn params(n: usize, rng: &mut ChaCha8Rng, latent: bool) -> ModelParameters {
        let m = mobility(n, rng);
        let mut v = |lo: f64, hi: f64| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
        let p = ModelParameters::sir(
            v(0.01, 0.1),
            v(0.005, 0.02),
            v(1.0, 4.0),
            m,
            v(500.0, 2000.0),
        )
        .unwrap();
        if latent {
            let mu = [v(0.0, 0.01), v(0.0, 0.01), v(0.0, 0.01)];
            let alpha = [v(0.0, 0.01), v(0.0, 0.01), v(0.0, 0.01)];
            let gamma = v(0.0, 0.01);
            p.with_latent(mu, alpha, gamma).unwrap()
        } else {
            p
        }
    }

    fn random_state(n: usize, rng: &mut ChaCha8Rng, planes: usize) -> IntegerState {
        let mut st = IntegerState::zeros(n);
        for k in 0..planes * n * n {
            st.values[k] = rng.random_range(0..200);
        }
        st
    }

    #[test]
    fn propensities_reproduce_mean_field_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for latent in [false, true] {
            let n = 4;
            let p = params(n, &mut rng, latent);
            let st = random_state(n, &mut rng, if latent { 6 } else { 3 });
            let channels = channel_propensities(&st, &p).unwrap();
            let mut drift = CompartmentState::zeros(n);
            for ch in &channels {
                for (s, i, j, d) in ch.stoichiometry() {
                    let v = drift.get(s, i, j) + d as f64 * ch.rate;
                    drift.set(s, i, j, v);
                }
            }
            let dynamics = if latent {
                Dynamics::SirLatent
            } else {
                Dynamics::Sir
            };
            let reference = rhs(dynamics, &st.to_compartments(0.0), &p).unwrap();
            for (a, b) in drift.values().iter().zip(reference.values()) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn all_susceptible_has_no_epidemic_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p = params(3, &mut rng, true);
        let mut st = IntegerState::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                st.set(S, i, j, 50);
            }
        }
        let ch = channel_propensities(&st, &p).unwrap();
        assert!(!ch.is_empty());
        assert!(ch.iter().all(|c| matches!(
            c.kind,
            ChannelKind::Depart | ChannelKind::Return | ChannelKind::SleepS
        )));
    }

    #[test]
    fn single_latent_infective() {
        let p = ModelParameters::sir(
            vec![0.1],
            vec![0.05],
            vec![2.0],
            MobilityParameters::frozen(1),
            vec![1.0],
        )
        .unwrap()
        .with_latent(
            [vec![0.0], vec![0.0], vec![0.0]],
            [vec![0.0], vec![0.0], vec![0.0]],
            vec![0.01],
        )
        .unwrap();
        let mut st = IntegerState::zeros(1);
        st.set(EI, 0, 0, 1);
        let ch = channel_propensities(&st, &p).unwrap();
        assert_eq!(ch.len(), 1);
        assert_eq!(ch[0].kind, ChannelKind::LatentRecover);
        assert_eq!(ch[0].rate, 0.01);
    }

    #[test]
    fn zero_rates_leave_state() {
        let n = 3;
        let p = ModelParameters::sir(
            vec![0.0; n],
            vec![0.0; n],
            vec![1.0; n],
            MobilityParameters::frozen(n),
            vec![1.0; n],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let st = random_state(n, &mut rng, 3);
        let mut x = st.clone();
        let mut r = sim_rng(1);
        for tau in [0.5, 1.0, 100.0] {
            tau_leap_step(&mut x, &p, tau, &mut r).unwrap();
        }
        assert_eq!(x, st);
    }

    #[test]
    fn horizon_zero_gives_initial_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let p = params(2, &mut rng, false);
        let st = random_state(2, &mut rng, 3);
        let out = simulate(&st, &p, 1.0, 0.0, 10.0, 3).unwrap();
        assert_eq!(out.series.len(), 1);
        assert_eq!(out.final_state.values(), st.values());
    }

    #[test]
    fn same_seed_same_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let p = params(3, &mut rng, true);
        let st = random_state(3, &mut rng, 3);
        let a = simulate(&st, &p, 1.0, 300.0, 10.0, 77).unwrap();
        let b = simulate(&st, &p, 1.0, 300.0, 10.0, 77).unwrap();
        assert_eq!(a.series, b.series);
        let c = simulate(&st, &p, 1.0, 300.0, 10.0, 78).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn halving_rescues_aggressive_leaps() {
        let p = ModelParameters::sir(
            vec![0.0],
            vec![2.0],
            vec![1.0],
            MobilityParameters::frozen(1),
            vec![10.0],
        )
        .unwrap();
        let mut st = IntegerState::zeros(1);
        st.set(I, 0, 0, 10);
        let out = simulate(&st, &p, 1.0, 20.0, 1.0, 5).unwrap();
        assert!(out.stats.halvings > 0);
        assert_eq!(
            out.final_state.get(I, 0, 0) + out.final_state.get(R, 0, 0),
            10
        );
        assert!(out.final_state.get(I, 0, 0) >= 0);
    }

    #[test]
    fn underflow_is_an_error() {
        let p = ModelParameters::sir(
            vec![0.0],
            vec![1e6],
            vec![1.0],
            MobilityParameters::frozen(1),
            vec![1e6],
        )
        .unwrap();
        let mut st = IntegerState::zeros(1);
        st.set(I, 0, 0, 1_000_000);
        let err = simulate(&st, &p, 1.0, 1.0, 1.0, 1).unwrap_err();
        assert!(matches!(err, Error::TauUnderflow { .. }));
    }

    #[test]
    fn rounding_preserves_home_totals() {
        let m = MobilityParameters::new(
            Matrix::from_rows(vec![
                vec![0.0, 0.5, 0.5],
                vec![1.0, 0.0, 0.0],
                vec![0.3, 0.7, 0.0],
            ])
            .unwrap(),
            vec![0.01, 0.02, 0.03],
            Matrix::from_fn(3, 3, |a, b| if a == b { 0.0 } else { 0.013 }),
        )
        .unwrap();
        let ss = steady_state(&[1000.4, 2000.6, 333.5], &[1.0; 3], &m).unwrap();
        let x = IntegerState::from_compartments(&CompartmentState::susceptible(&ss), 0);
        assert_eq!(x.home_totals(), vec![1000, 2001, 334]);
    }

    #[test]
    fn ensemble_of_one_has_zero_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let p = params(2, &mut rng, false);
        let st = random_state(2, &mut rng, 3);
        let e = run_ensemble(&st, &p, 1.0, 50.0, 10.0, 1, 9).unwrap();
        assert_eq!(e.mean.global, e.replicas[0].global);
        assert!(e.std.global.iter().all(|g| g.iter().all(|&v| v == 0.0)));
        assert_eq!(e.seeds, vec![9]);
    }

    #[test]
    fn ensemble_seeds_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let p = params(2, &mut rng, false);
        let st = random_state(2, &mut rng, 3);
        let e = run_ensemble(&st, &p, 1.0, 50.0, 10.0, 4, 100).unwrap();
        assert_eq!(e.seeds, vec![100, 101, 102, 103]);
        for (k, ts) in e.replicas.iter().enumerate() {
            let solo = simulate(&st, &p, 1.0, 50.0, 10.0, 100 + k as u64).unwrap();
            assert_eq!(ts, &solo.series);
        }
    }

    #[test]
    fn extinct_infection_stays_extinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let p = params(3, &mut rng, true);
        let mut st = random_state(3, &mut rng, 6);
        let nn = 9;
        for k in 0..nn {
            st.values[nn + k] = 0;
            st.values[4 * nn + k] = 0;
        }
        let out = simulate(&st, &p, 1.0, 500.0, 50.0, 4).unwrap();
        for g in &out.series.global {
            assert_eq!(g[I.index()], 0.0);
            assert_eq!(g[EI.index()], 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn home_rows_exactly_conserved(seed in any::<u64>(), n in 1usize..5, latent in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = params(n, &mut rng, latent);
            let st = random_state(n, &mut rng, if latent { 6 } else { 3 });
            let before = st.home_totals();
            let out = simulate(&st, &p, 2.0, 200.0, 50.0, seed).unwrap();
            prop_assert_eq!(out.final_state.home_totals(), before);
            prop_assert!(out.final_state.values().iter().all(|&v| v >= 0));
        }
    }
}
