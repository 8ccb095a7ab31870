//! Call-detail-record ingestion and mobility-parameter extraction.
//!
//! Records are `(user, minute, community)` observations. Per user they are
//! sorted by time (stable, so file order breaks ties) and consecutive records
//! in the same community are merged into one visit. A visit lasts until the
//! next record; the last visit lasts until the end of the observation window.
//!
//! From the visits we derive:
//! - `P[i][j]`: number of observed moves `i -> j` (diagonal always zero),
//! - `P_return[j][i]`: moves `j -> i` where `i` is the mover's home,
//! - routing probabilities `nu`, departure rates `sigma` and return rates
//!   `zeta`, either normalised by the window length or by exposure
//!   (user-minutes actually spent in each community).
//!
//! All times are minutes.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const CDR_HEADER: &str = "user_id,timestamp_min,community_id";

/// One observation: `user_id` was seen in `community` at `timestamp` minutes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdrRecord {
    pub user_id: String,
    pub timestamp: u64,
    pub community: usize,
}

/// A contiguous stay of one user in one community, `[arrival, departure)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub community: usize,
    pub arrival: u64,
    pub departure: u64,
}

impl Visit {
    pub fn duration(&self) -> u64 {
        self.departure - self.arrival
    }
}

/// Per-user, time-ordered visits over an observation window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectorySet {
    community_count: usize,
    window: u64,
    users: BTreeMap<String, Vec<Visit>>,
}

impl TrajectorySet {
    pub fn empty(community_count: usize, window: u64) -> Self {
        TrajectorySet {
            community_count,
            window,
            users: BTreeMap::new(),
        }
    }

    /// Builds trajectories from records, validating ids and timestamps.
    pub fn from_records<I>(records: I, community_count: usize, window: u64) -> Result<Self>
    where
        I: IntoIterator<Item = CdrRecord>,
    {
        let mut per_user: BTreeMap<String, Vec<(u64, usize)>> = BTreeMap::new();
        for (k, r) in records.into_iter().enumerate() {
            validate_record(&r, community_count, window)
                .map_err(|message| Error::validation(format!("record {}", k + 1), message))?;
            per_user
                .entry(r.user_id)
                .or_default()
                .push((r.timestamp, r.community));
        }
        Ok(Self::from_grouped(per_user, community_count, window))
    }

    fn from_grouped(
        per_user: BTreeMap<String, Vec<(u64, usize)>>,
        community_count: usize,
        window: u64,
    ) -> Self {
        let users = per_user
            .into_iter()
            .map(|(user, mut obs)| {
                // stable: equal timestamps keep input order
                obs.sort_by_key(|&(t, _)| t);
                (user, merge_observations(&obs, window))
            })
            .collect();
        TrajectorySet {
            community_count,
            window,
            users,
        }
    }

    /// Builds a set directly from visit lists (used by generators and tests).
    pub fn from_visits(
        users: BTreeMap<String, Vec<Visit>>,
        community_count: usize,
        window: u64,
    ) -> Self {
        TrajectorySet {
            community_count,
            window,
            users,
        }
    }

    pub fn community_count(&self) -> usize {
        self.community_count
    }

    /// Observation window length in minutes.
    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn users(&self) -> impl Iterator<Item = (&str, &[Visit])> {
        self.users.iter().map(|(u, v)| (u.as_str(), v.as_slice()))
    }

    pub fn visits(&self, user: &str) -> Option<&[Visit]> {
        self.users.get(user).map(Vec::as_slice)
    }

    /// Total number of inter-community moves across all users.
    pub fn transition_count(&self) -> usize {
        self.users.values().map(|v| v.len().saturating_sub(1)).sum()
    }
}

fn validate_record(
    r: &CdrRecord,
    community_count: usize,
    window: u64,
) -> std::result::Result<(), String> {
    if r.community >= community_count {
        return Err(format!(
            "community id {} out of range [0, {community_count})",
            r.community
        ));
    }
    if r.timestamp >= window {
        return Err(format!(
            "timestamp {} outside observation window [0, {window})",
            r.timestamp
        ));
    }
    Ok(())
}

fn merge_observations(obs: &[(u64, usize)], window: u64) -> Vec<Visit> {
    let mut visits: Vec<Visit> = Vec::new();
    for &(t, c) in obs {
        match visits.last_mut() {
            Some(last) if last.community == c => {}
            Some(last) => {
                last.departure = t;
                visits.push(Visit {
                    community: c,
                    arrival: t,
                    departure: window,
                });
            }
            None => visits.push(Visit {
                community: c,
                arrival: t,
                departure: window,
            }),
        }
    }
    visits
}

/// Parses a CDR CSV stream (`user_id,timestamp_min,community_id`).
///
/// The header line is optional; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn parse_cdr<R: BufRead>(
    reader: R,
    community_count: usize,
    window: u64,
) -> Result<TrajectorySet> {
    let mut per_user: BTreeMap<String, Vec<(u64, usize)>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (line_no == 1 && trimmed == CDR_HEADER) {
            continue;
        }
        let record = parse_line(trimmed).map_err(|message| Error::Parse {
            line: line_no,
            message,
        })?;
        validate_record(&record, community_count, window)
            .map_err(|message| Error::validation(format!("line {line_no}"), message))?;
        per_user
            .entry(record.user_id)
            .or_default()
            .push((record.timestamp, record.community));
    }
    Ok(TrajectorySet::from_grouped(
        per_user,
        community_count,
        window,
    ))
}

fn parse_line(line: &str) -> std::result::Result<CdrRecord, String> {
    let mut fields = line.split(',');
    let (Some(user), Some(ts), Some(comm), None) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err(format!("expected 3 comma-separated fields, got {line:?}"));
    };
    let user = user.trim();
    if user.is_empty() {
        return Err("empty user_id".into());
    }
    let timestamp = ts
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("bad timestamp {ts:?}: {e}"))?;
    let community = comm
        .trim()
        .parse::<usize>()
        .map_err(|e| format!("bad community_id {comm:?}: {e}"))?;
    Ok(CdrRecord {
        user_id: user.to_string(),
        timestamp,
        community,
    })
}

pub fn write_cdr<W: Write>(mut w: W, records: &[CdrRecord]) -> std::io::Result<()> {
    writeln!(w, "{CDR_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{}", r.user_id, r.timestamp, r.community)?;
    }
    Ok(())
}

/// User id to home community.
pub type HomeMap = BTreeMap<String, usize>;

/// Home = community with the largest total dwell time; ties go to the
/// smallest community index. A user with zero observed time gets the
/// community of their first record.
pub fn assign_home(t: &TrajectorySet) -> HomeMap {
    let mut dwell = vec![0u64; t.community_count()];
    t.users()
        .filter(|(_, visits)| !visits.is_empty())
        .map(|(user, visits)| {
            dwell.iter_mut().for_each(|d| *d = 0);
            for v in visits {
                dwell[v.community] += v.duration();
            }
            let mut best = visits[0].community;
            let mut best_time = 0;
            for (j, &m) in dwell.iter().enumerate() {
                if m > best_time {
                    best = j;
                    best_time = m;
                }
            }
            (user.to_string(), best)
        })
        .collect()
}

/// Aggregated move counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    /// `transitions[i][j]`: moves from `i` to `j`.
    pub transitions: Matrix,
    /// `returns[j][i]`: moves from `j` to `i` where `i` is the mover's home.
    pub returns: Matrix,
    /// `departures[i]`: moves out of `i` by users whose home is `i`.
    pub departures: Vec<f64>,
}

impl TransitionCounts {
    pub fn community_count(&self) -> usize {
        self.transitions.rows()
    }

    pub fn total(&self) -> f64 {
        self.transitions.as_slice().iter().sum()
    }
}

pub fn build_transition_counts(t: &TrajectorySet) -> TransitionCounts {
    let homes = assign_home(t);
    build_transition_counts_with_homes(t, &homes)
}

pub fn build_transition_counts_with_homes(t: &TrajectorySet, homes: &HomeMap) -> TransitionCounts {
    let n = t.community_count();
    let mut transitions = Matrix::square(n);
    let mut returns = Matrix::square(n);
    let mut departures = vec![0.0; n];
    for (user, visits) in t.users() {
        let home = homes.get(user).copied();
        for pair in visits.windows(2) {
            let (from, to) = (pair[0].community, pair[1].community);
            debug_assert_ne!(from, to);
            transitions[(from, to)] += 1.0;
            if Some(to) == home {
                returns[(from, to)] += 1.0;
            }
            if Some(from) == home {
                departures[from] += 1.0;
            }
        }
    }
    TransitionCounts {
        transitions,
        returns,
        departures,
    }
}

/// Row-normalised routing matrix plus the rows that had no out-flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    pub nu: Matrix,
    pub isolated: Vec<bool>,
}

pub fn compute_nu(counts: &TransitionCounts) -> Routing {
    let p = &counts.transitions;
    let n = p.rows();
    let mut nu = Matrix::square(n);
    let mut isolated = vec![false; n];
    for i in 0..n {
        let total: f64 = p.row(i).iter().sum();
        if total > 0.0 {
            for j in 0..n {
                nu[(i, j)] = if i == j { 0.0 } else { p[(i, j)] / total };
            }
        } else {
            isolated[i] = true;
        }
    }
    Routing { nu, isolated }
}

fn check_time(time_minutes: i64) -> Result<f64> {
    if time_minutes <= 0 {
        return Err(Error::validation(
            "time_minutes",
            format!("must be positive, got {time_minutes}"),
        ));
    }
    Ok(time_minutes as f64)
}

/// `sigma_i = (sum_k P_ik) / time`, moves per minute.
pub fn compute_sigma(counts: &TransitionCounts, time_minutes: i64) -> Result<Vec<f64>> {
    let time = check_time(time_minutes)?;
    Ok(counts
        .transitions
        .row_sums()
        .into_iter()
        .map(|s| s / time)
        .collect())
}

/// `zeta[j][i] = P_return[j][i] / time`, returns per minute.
pub fn compute_zeta(counts: &TransitionCounts, time_minutes: i64) -> Result<Matrix> {
    let time = check_time(time_minutes)?;
    Ok(counts.returns.map(|r| r / time))
}

/// User-minutes spent in each community, overall and split by home.
#[derive(Debug, Clone, PartialEq)]
pub struct Exposure {
    pub by_location: Vec<f64>,
    /// `by_home[j][i]`: minutes spent in `j` by users whose home is `i`.
    pub by_home: Matrix,
}

pub fn compute_exposure(t: &TrajectorySet, homes: &HomeMap) -> Exposure {
    let n = t.community_count();
    let mut by_location = vec![0.0; n];
    let mut by_home = Matrix::square(n);
    for (user, visits) in t.users() {
        let home = homes.get(user).copied();
        for v in visits {
            let d = v.duration() as f64;
            by_location[v.community] += d;
            if let Some(h) = home {
                by_home[(v.community, h)] += d;
            }
        }
    }
    Exposure {
        by_location,
        by_home,
    }
}

/// Exposure below the one-minute timestamp resolution is treated as one minute.
fn per_exposure(count: f64, exposure: f64) -> f64 {
    if count > 0.0 {
        count / exposure.max(1.0)
    } else {
        0.0
    }
}

/// Per-device departure rate: moves out of home `i` per user-minute that
/// users homed in `i` spend at home.
pub fn per_device_sigma(counts: &TransitionCounts, exposure: &Exposure) -> Vec<f64> {
    counts
        .departures
        .iter()
        .enumerate()
        .map(|(i, &c)| per_exposure(c, exposure.by_home[(i, i)]))
        .collect()
}

/// Per-device return rate: returns `j -> home i` per minute spent in `j` by
/// users homed in `i`.
pub fn per_device_zeta(counts: &TransitionCounts, exposure: &Exposure) -> Matrix {
    let n = counts.community_count();
    Matrix::from_fn(n, n, |j, i| {
        per_exposure(counts.returns[(j, i)], exposure.by_home[(j, i)])
    })
}

/// How departure and return counts are turned into rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateNormalization {
    /// Divide counts by the observation window length.
    Window,
    /// Divide counts by the user-minutes of exposure.
    PerDevice,
}

impl std::str::FromStr for RateNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(RateNormalization::Window),
            "per_device" => Ok(RateNormalization::PerDevice),
            other => Err(Error::validation(
                "rates",
                format!("expected window|per_device, got {other:?}"),
            )),
        }
    }
}

/// Routing matrix, departure rates and return rates (per minute).
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityParameters {
    pub nu: Matrix,
    pub sigma: Vec<f64>,
    /// `zeta[j][i]`: rate of returning home to `i` from `j`.
    pub zeta: Matrix,
    pub isolated: Vec<bool>,
}

impl MobilityParameters {
    pub fn new(nu: Matrix, sigma: Vec<f64>, zeta: Matrix) -> Result<Self> {
        let n = sigma.len();
        if nu.rows() != n || nu.cols() != n || zeta.rows() != n || zeta.cols() != n {
            return Err(Error::Dimension(format!(
                "nu {}x{}, zeta {}x{}, sigma {n}",
                nu.rows(),
                nu.cols(),
                zeta.rows(),
                zeta.cols()
            )));
        }
        let isolated = (0..n)
            .map(|i| nu.row(i).iter().all(|&v| v == 0.0))
            .collect();
        Ok(MobilityParameters {
            nu,
            sigma,
            zeta,
            isolated,
        })
    }

    /// No movement at all.
    pub fn frozen(n: usize) -> Self {
        MobilityParameters {
            nu: Matrix::square(n),
            sigma: vec![0.0; n],
            zeta: Matrix::square(n),
            isolated: vec![true; n],
        }
    }

    pub fn community_count(&self) -> usize {
        self.sigma.len()
    }

    pub fn from_counts(
        counts: &TransitionCounts,
        exposure: &Exposure,
        time_minutes: i64,
        normalization: RateNormalization,
    ) -> Result<Self> {
        let Routing { nu, isolated } = compute_nu(counts);
        let (mut sigma, zeta) = match normalization {
            RateNormalization::Window => (
                compute_sigma(counts, time_minutes)?,
                compute_zeta(counts, time_minutes)?,
            ),
            RateNormalization::PerDevice => {
                check_time(time_minutes)?;
                (
                    per_device_sigma(counts, exposure),
                    per_device_zeta(counts, exposure),
                )
            }
        };
        for (s, &iso) in sigma.iter_mut().zip(&isolated) {
            if iso {
                *s = 0.0;
            }
        }
        Ok(MobilityParameters {
            nu,
            sigma,
            zeta,
            isolated,
        })
    }
}

/// Extracts everything the models need from a trajectory set.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub homes: HomeMap,
    pub counts: TransitionCounts,
    pub exposure: Exposure,
    pub mobility: MobilityParameters,
}

pub fn extract(t: &TrajectorySet, normalization: RateNormalization) -> Result<Extraction> {
    let homes = assign_home(t);
    let counts = build_transition_counts_with_homes(t, &homes);
    let exposure = compute_exposure(t, &homes);
    let window = i64::try_from(t.window())
        .map_err(|_| Error::validation("window", "does not fit in i64"))?;
    let mobility = MobilityParameters::from_counts(&counts, &exposure, window, normalization)?;
    Ok(Extraction {
        homes,
        counts,
        exposure,
        mobility,
    })
}

/// Users per km² in each community at the start of each time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    /// `rho[t][i]`, one row per slot.
    pub rho: Matrix,
    pub slot_minutes: u64,
    pub areas: Vec<f64>,
}

impl DensityMatrix {
    pub fn slot_start(&self, slot: usize) -> u64 {
        slot as u64 * self.slot_minutes
    }

    /// Users located in each community for a slot (`rho * area`).
    pub fn counts(&self, slot: usize) -> Vec<f64> {
        self.rho
            .row(slot)
            .iter()
            .zip(&self.areas)
            .map(|(r, a)| r * a)
            .collect()
    }
}

/// A user is located in the community whose visit covers the slot start;
/// users whose first record comes later are not counted for that slot.
pub fn compute_density(
    t: &TrajectorySet,
    areas: &[f64],
    slot_minutes: u64,
) -> Result<DensityMatrix> {
    let n = t.community_count();
    if areas.len() != n {
        return Err(Error::Dimension(format!(
            "{} areas for {n} communities",
            areas.len()
        )));
    }
    if let Some((i, a)) = areas.iter().enumerate().find(|(_, &a)| !(a > 0.0)) {
        return Err(Error::validation(
            "area_km2",
            format!("community {i} has non-positive area {a}"),
        ));
    }
    if slot_minutes == 0 || t.window() % slot_minutes != 0 {
        return Err(Error::validation(
            "slot_minutes",
            format!(
                "{slot_minutes} does not divide the observation window {}",
                t.window()
            ),
        ));
    }
    let slots = (t.window() / slot_minutes) as usize;
    let mut counts = Matrix::zeros(slots, n);
    for (_, visits) in t.users() {
        let mut k = 0;
        for slot in 0..slots {
            let start = slot as u64 * slot_minutes;
            while k < visits.len() && visits[k].departure <= start {
                k += 1;
            }
            match visits.get(k) {
                Some(v) if v.arrival <= start => counts[(slot, v.community)] += 1.0,
                Some(_) => {}
                None => break,
            }
        }
    }
    let rho = Matrix::from_fn(slots, n, |s, i| counts[(s, i)] / areas[i]);
    Ok(DensityMatrix {
        rho,
        slot_minutes,
        areas: areas.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: usize = 0;
    const B: usize = 1;

    fn rec(u: &str, t: u64, c: usize) -> CdrRecord {
        CdrRecord {
            user_id: u.into(),
            timestamp: t,
            community: c,
        }
    }

    fn csv(lines: &[&str]) -> String {
        lines.join("\n")
    }

    #[test]
    fn merges_consecutive_same_community() {
        let t = parse_cdr(
            csv(&[CDR_HEADER, "u1,0,0", "u1,100,0", "u1,200,1"]).as_bytes(),
            2,
            1000,
        )
        .unwrap();
        assert_eq!(
            t.visits("u1").unwrap(),
            &[
                Visit {
                    community: A,
                    arrival: 0,
                    departure: 200
                },
                Visit {
                    community: B,
                    arrival: 200,
                    departure: 1000
                },
            ]
        );
    }

    #[test]
    fn empty_stream_is_empty_set() {
        let t = parse_cdr("".as_bytes(), 3, 100).unwrap();
        assert!(t.is_empty());
        let header_only = parse_cdr(CDR_HEADER.as_bytes(), 3, 100).unwrap();
        assert!(header_only.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err =
            parse_cdr(csv(&[CDR_HEADER, "u1,0,0", "u1,abc,1"]).as_bytes(), 2, 100).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_cdr("u1,0".as_bytes(), 2, 100).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn out_of_range_community_is_validation_error() {
        let err = parse_cdr("u1,0,5".as_bytes(), 2, 100).unwrap_err();
        assert!(err.is_validation());
        assert!(matches!(err, Error::Validation { .. }));
        let err = parse_cdr("u1,100,0".as_bytes(), 2, 100).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn unsorted_records_are_sorted() {
        let sorted = parse_cdr(csv(&["u,0,0", "u,50,1", "u,80,0"]).as_bytes(), 2, 100).unwrap();
        let shuffled = parse_cdr(csv(&["u,80,0", "u,0,0", "u,50,1"]).as_bytes(), 2, 100).unwrap();
        assert_eq!(sorted, shuffled);
    }

    #[test]
    fn transition_counts_for_round_trip() {
        let t = TrajectorySet::from_records(
            vec![rec("u", 0, A), rec("u", 10, B), rec("u", 20, A)],
            2,
            1000,
        )
        .unwrap();
        let homes = assign_home(&t);
        assert_eq!(homes["u"], A);
        let c = build_transition_counts(&t);
        assert_eq!(c.transitions[(A, B)], 1.0);
        assert_eq!(c.transitions[(B, A)], 1.0);
        assert_eq!(c.returns[(B, A)], 1.0);
        assert_eq!(c.returns[(A, B)], 0.0);
    }

    #[test]
    fn no_movement_gives_zero_counts() {
        let t = TrajectorySet::from_records(vec![rec("u", 0, A), rec("v", 5, B)], 2, 100).unwrap();
        let c = build_transition_counts(&t);
        assert_eq!(c.total(), 0.0);
    }

    #[test]
    fn nu_row_arithmetic_and_isolation() {
        let p = Matrix::from_rows(vec![
            vec![0.0, 3.0, 1.0],
            vec![0.0, 0.0, 0.0],
            vec![2.0, 2.0, 0.0],
        ])
        .unwrap();
        let counts = TransitionCounts {
            transitions: p,
            returns: Matrix::square(3),
            departures: vec![0.0; 3],
        };
        let r = compute_nu(&counts);
        assert_eq!(r.nu.row(0), &[0.0, 0.75, 0.25]);
        assert_eq!(r.nu.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(r.isolated, vec![false, true, false]);
    }

    #[test]
    fn sigma_and_zeta_arithmetic() {
        let mut p = Matrix::square(2);
        p[(0, 1)] = 432.0;
        let mut pr = Matrix::square(2);
        pr[(1, 0)] = 216.0;
        let counts = TransitionCounts {
            transitions: p,
            returns: pr,
            departures: vec![0.0; 2],
        };
        let sigma = compute_sigma(&counts, 216_000).unwrap();
        assert!((sigma[0] - 0.002).abs() < 1e-15);
        assert_eq!(sigma[1], 0.0);
        let zeta = compute_zeta(&counts, 216_000).unwrap();
        assert!((zeta[(1, 0)] - 0.001).abs() < 1e-15);
        assert_eq!(zeta[(0, 1)], 0.0);
        assert!(compute_sigma(&counts, 0).is_err());
        assert!(compute_zeta(&counts, -5).is_err());
    }

    #[test]
    fn home_is_argmax_with_smallest_index_tie_break() {
        let t = TrajectorySet::from_records(
            vec![rec("u", 0, A), rec("u", 14_400, B)],
            2,
            14_400 + 2_880,
        )
        .unwrap();
        assert_eq!(assign_home(&t)["u"], A);

        let tie = TrajectorySet::from_records(vec![rec("u", 0, B), rec("u", 5_000, A)], 2, 10_000)
            .unwrap();
        assert_eq!(assign_home(&tie)["u"], A);
    }

    #[test]
    fn zero_time_user_gets_first_community() {
        let visits = BTreeMap::from([(
            "u".to_string(),
            vec![Visit {
                community: 2,
                arrival: 7,
                departure: 7,
            }],
        )]);
        let t = TrajectorySet::from_visits(visits, 3, 7);
        assert_eq!(assign_home(&t)["u"], 2);
    }

    #[test]
    fn density_of_fixed_population() {
        let records: Vec<_> = (0..100).map(|k| rec(&format!("u{k}"), 0, 0)).collect();
        let t = TrajectorySet::from_records(records, 1, 600).unwrap();
        let d = compute_density(&t, &[50.0], 60).unwrap();
        assert_eq!(d.rho.rows(), 10);
        assert!(d.rho.as_slice().iter().all(|&r| r == 2.0));
    }

    #[test]
    fn density_edge_cases() {
        let t = TrajectorySet::empty(2, 120);
        let d = compute_density(&t, &[1.0, 2.0], 60).unwrap();
        assert!(d.rho.as_slice().iter().all(|&r| r == 0.0));
        assert!(compute_density(&t, &[1.0, 0.0], 60).is_err());
        assert!(compute_density(&t, &[1.0, -3.0], 60).is_err());
        assert!(compute_density(&t, &[1.0, 1.0], 50).is_err());
    }

    #[test]
    fn density_uses_visit_covering_slot_start() {
        let t =
            TrajectorySet::from_records(vec![rec("u", 30, A), rec("u", 60, B)], 2, 180).unwrap();
        let d = compute_density(&t, &[1.0, 1.0], 60).unwrap();
        // slot 0 starts before the first record
        assert_eq!(d.counts(0), vec![0.0, 0.0]);
        assert_eq!(d.counts(1), vec![0.0, 1.0]);
        assert_eq!(d.counts(2), vec![0.0, 1.0]);
    }

    #[test]
    fn per_device_rates_divide_by_exposure() {
        // home A for 900 min, B for 100 min then back
        let t = TrajectorySet::from_records(
            vec![rec("u", 0, A), rec("u", 800, B), rec("u", 900, A)],
            2,
            1000,
        )
        .unwrap();
        let ex = extract(&t, RateNormalization::PerDevice).unwrap();
        assert_eq!(ex.exposure.by_location, vec![900.0, 100.0]);
        assert!((ex.mobility.sigma[A] - 1.0 / 900.0).abs() < 1e-15);
        assert!((ex.mobility.zeta[(B, A)] - 1.0 / 100.0).abs() < 1e-15);
        let w = extract(&t, RateNormalization::Window).unwrap();
        assert!((w.mobility.sigma[A] - 1.0 / 1000.0).abs() < 1e-15);
    }

    fn arb_records() -> impl Strategy<Value = Vec<CdrRecord>> {
        prop::collection::vec((0u8..6, 0u64..500, 0usize..4), 0..80).prop_map(|v| {
            v.into_iter()
                .map(|(u, t, c)| rec(&format!("u{u}"), t, c))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn structural_invariants(records in arb_records()) {
            let t = TrajectorySet::from_records(records.clone(), 4, 500).unwrap();
            for (_, visits) in t.users() {
                for w in visits.windows(2) {
                    prop_assert!(w[0].departure == w[1].arrival);
                    prop_assert!(w[0].arrival <= w[0].departure);
                    prop_assert_ne!(w[0].community, w[1].community);
                }
            }
            let c = build_transition_counts(&t);
            prop_assert_eq!(c.total() as usize, t.transition_count());
            for i in 0..4 {
                prop_assert_eq!(c.transitions[(i, i)], 0.0);
                for j in 0..4 {
                    prop_assert!(c.returns[(i, j)] <= c.transitions[(i, j)]);
                }
            }
            let homes = assign_home(&t);
            prop_assert_eq!(homes.len(), t.len());

            let r = compute_nu(&c);
            for i in 0..4 {
                let s: f64 = r.nu.row(i).iter().sum();
                if r.isolated[i] { prop_assert_eq!(s, 0.0); } else { prop_assert!((s - 1.0).abs() < 1e-12); }
                prop_assert_eq!(r.nu[(i, i)], 0.0);
            }

            // byte-level determinism of parsing
            let mut buf = Vec::new();
            write_cdr(&mut buf, &records).unwrap();
            let a = parse_cdr(buf.as_slice(), 4, 500).unwrap();
            let b = parse_cdr(buf.as_slice(), 4, 500).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a, t);
        }

        #[test]
        fn nu_rows_sum_to_one_on_random_counts(
            cells in prop::collection::vec(0u32..50, 400)
        ) {
            let p = Matrix::from_fn(20, 20, |i, j| if i == j { 0.0 } else { cells[i * 20 + j] as f64 });
            let counts = TransitionCounts { transitions: p, returns: Matrix::square(20), departures: vec![0.0; 20] };
            let r = compute_nu(&counts);
            for i in 0..20 {
                if !r.isolated[i] {
                    let s: f64 = r.nu.row(i).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
