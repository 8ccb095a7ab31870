//! Validation metrics and epidemic-curve descriptors.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::Compartment;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Sampled compartment counts by location and globally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub scenario: String,
    pub seed: Option<u64>,
    communities: usize,
    pub times: Vec<f64>,
    /// `[sample][location]`, states in [`Compartment::ALL`] order.
    pub by_community: Vec<Vec<[f64; 6]>>,
    pub global: Vec<[f64; 6]>,
}

impl TimeSeries {
    pub fn new(communities: usize) -> Self {
        TimeSeries {
            scenario: String::new(),
            seed: None,
            communities,
            times: Vec::new(),
            by_community: Vec::new(),
            global: Vec::new(),
        }
    }

    pub fn communities(&self) -> usize {
        self.communities
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends one sample. Panics if `t` does not increase.
    pub fn push(&mut self, t: f64, per_location: Vec<[f64; 6]>) {
        assert_eq!(per_location.len(), self.communities, "sample width");
        if let Some(&last) = self.times.last() {
            assert!(t > last, "sample times must increase ({t} after {last})");
        }
        let mut g = [0.0; 6];
        for row in &per_location {
            for (a, b) in g.iter_mut().zip(row) {
                *a += b;
            }
        }
        self.times.push(t);
        self.by_community.push(per_location);
        self.global.push(g);
    }

    /// Appends a sample from a flat `X[s][i][j]` state, summing over homes.
    pub fn push_flat(&mut self, t: f64, x: &[f64]) {
        let per = aggregate(self.communities, |k| x[k]);
        self.push(t, per);
    }

    /// As [`TimeSeries::push_flat`] for integer counts.
    pub fn push_counts(&mut self, t: f64, x: &[i64]) {
        let per = aggregate(self.communities, |k| x[k] as f64);
        self.push(t, per);
    }

    pub fn global_series(&self, c: Compartment) -> Vec<f64> {
        self.global.iter().map(|g| g[c.index()]).collect()
    }

    pub fn community_series(&self, j: usize, c: Compartment) -> Vec<f64> {
        self.by_community.iter().map(|s| s[j][c.index()]).collect()
    }

    /// Total devices at sample `k`.
    pub fn population(&self, k: usize) -> f64 {
        self.global[k].iter().sum()
    }
}

fn aggregate(n: usize, value: impl Fn(usize) -> f64) -> Vec<[f64; 6]> {
    let nn = n * n;
    let mut per = vec![[0.0; 6]; n];
    for s in 0..6 {
        for i in 0..n {
            let base = s * nn + i * n;
            for (j, slot) in per.iter_mut().enumerate() {
                slot[s] += value(base + j);
            }
        }
    }
    per
}

/// Cell value added before renormalising in [`kl_symmetrized`].
pub const KL_SMOOTHING: f64 = 1e-12;

/// `0.5 (KL(d1 || d2) + KL(d2 || d1))` after normalising both inputs and
/// adding [`KL_SMOOTHING`] to every cell.
pub fn kl_symmetrized(d1: &[f64], d2: &[f64]) -> Result<f64> {
    if d1.len() != d2.len() {
        return Err(Error::Dimension(format!(
            "distributions of length {} and {}",
            d1.len(),
            d2.len()
        )));
    }
    let p = smooth(d1, "d1")?;
    let q = smooth(d2, "d2")?;
    let mut acc = 0.0;
    for (a, b) in p.iter().zip(&q) {
        acc += a * (a / b).ln() + b * (b / a).ln();
    }
    Ok(0.5 * acc)
}

fn smooth(d: &[f64], name: &str) -> Result<Vec<f64>> {
    if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::validation(
            name,
            "entries must be finite and non-negative",
        ));
    }
    let total: f64 = d.iter().sum();
    if !(total > 0.0) {
        return Err(Error::validation(name, "distribution has zero mass"));
    }
    let shifted: Vec<f64> = d.iter().map(|v| v / total + KL_SMOOTHING).collect();
    let z: f64 = shifted.iter().sum();
    Ok(shifted.into_iter().map(|v| v / z).collect())
}

pub const MIN_POWER_LAW_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub std_error: f64,
    pub x_min: f64,
    /// Samples at or above `x_min`.
    pub n: usize,
}

/// Continuous maximum-likelihood exponent of a power-law tail above `x_min`.
pub fn fit_power_law(samples: &[f64], x_min: f64) -> Result<PowerLawFit> {
    if !(x_min > 0.0) || !x_min.is_finite() {
        return Err(Error::validation(
            "x_min",
            format!("must be positive, got {x_min}"),
        ));
    }
    let mut n = 0usize;
    let mut sum = 0.0;
    for &x in samples {
        if x >= x_min {
            n += 1;
            sum += (x / x_min).ln();
        }
    }
    if n < MIN_POWER_LAW_SAMPLES {
        return Err(Error::TooFewSamples {
            found: n,
            needed: MIN_POWER_LAW_SAMPLES,
        });
    }
    if !(sum > 0.0) {
        return Err(Error::validation(
            "samples",
            "all samples equal x_min; exponent undefined",
        ));
    }
    let alpha = 1.0 + n as f64 / sum;
    Ok(PowerLawFit {
        alpha,
        std_error: (alpha - 1.0) / (n as f64).sqrt(),
        x_min,
        n,
    })
}

/// Structure of the transition graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    /// Incoming transitions over all transitions.
    pub in_flow_share: Vec<f64>,
    /// `in_flow_share / population` (zero where population is zero).
    pub in_flow_per_capita: Vec<f64>,
    /// Shortest-path betweenness on the directed support, divided by `N(N-1)`.
    pub betweenness: Vec<f64>,
    pub out_degree: Vec<usize>,
    pub in_degree: Vec<usize>,
    /// Neighbours in the undirected support.
    pub degree: Vec<usize>,
    /// `degree_histogram[d]` communities with undirected degree `d`.
    pub degree_histogram: Vec<usize>,
    /// Communities ordered by in-flow share, largest first.
    pub ranking: Vec<usize>,
}

pub fn graph_stats(p: &Matrix, populations: &[f64]) -> Result<GraphStats> {
    let n = p.rows();
    if !p.is_square() || populations.len() != n {
        return Err(Error::Dimension(format!(
            "{}x{} transitions with {} populations",
            p.rows(),
            p.cols(),
            populations.len()
        )));
    }
    let inflow = p.col_sums();
    let total: f64 = inflow.iter().sum();
    let in_flow_share: Vec<f64> = inflow
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let in_flow_per_capita = in_flow_share
        .iter()
        .zip(populations)
        .map(|(s, &pop)| if pop > 0.0 { s / pop } else { 0.0 })
        .collect();
    let adj = support(p);
    let out_degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut in_degree = vec![0usize; n];
    for list in &adj {
        for &j in list {
            in_degree[j] += 1;
        }
    }
    let degree: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && (p[(i, j)] > 0.0 || p[(j, i)] > 0.0))
                .count()
        })
        .collect();
    let mut degree_histogram = vec![0usize; degree.iter().max().map_or(0, |m| m + 1)];
    for &d in &degree {
        degree_histogram[d] += 1;
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| {
        in_flow_share[b]
            .total_cmp(&in_flow_share[a])
            .then(a.cmp(&b))
    });
    Ok(GraphStats {
        in_flow_share,
        in_flow_per_capita,
        betweenness: betweenness(&adj),
        out_degree,
        in_degree,
        degree,
        degree_histogram,
        ranking,
    })
}

/// Adjacency lists of `i -> j` with `p[i][j] > 0`, `i != j`.
pub fn support(p: &Matrix) -> Vec<Vec<usize>> {
    (0..p.rows())
        .map(|i| {
            (0..p.cols())
                .filter(|&j| j != i && p[(i, j)] > 0.0)
                .collect()
        })
        .collect()
}

/// Brandes betweenness for an unweighted directed graph, normalised by
/// `N(N-1)`.
pub fn betweenness(adj: &[Vec<usize>]) -> Vec<f64> {
    let n = adj.len();
    let mut cb = vec![0.0; n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::with_capacity(n);
    for s in 0..n {
        sigma.iter_mut().for_each(|v| *v = 0.0);
        dist.iter_mut().for_each(|v| *v = -1);
        delta.iter_mut().for_each(|v| *v = 0.0);
        preds.iter_mut().for_each(Vec::clear);
        order.clear();
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    if n > 1 {
        let norm = (n * (n - 1)) as f64;
        cb.iter_mut().for_each(|v| *v /= norm);
    }
    cb
}

/// Shape of one epidemic curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicSummary {
    pub origin: usize,
    pub peak_time: f64,
    pub peak_height: f64,
    /// `(R + E_R) / N` at the last sample.
    pub cumulative_infected_fraction: f64,
    /// End of phase 1 (spread confined to one community) and end of phase 2
    /// (the global peak).
    pub phase_boundaries: [f64; 2],
    /// Whether more than one community was ever infected in two consecutive
    /// samples.
    pub spread_detected: bool,
    /// Global I never rose above its initial value.
    pub no_outbreak: bool,
    /// Global I fell back below its initial value by the last sample.
    pub completed: bool,
    pub horizon: f64,
}

impl EpidemicSummary {
    /// All three phases have positive length.
    pub fn has_three_phases(&self) -> bool {
        let [p1, p2] = self.phase_boundaries;
        !self.no_outbreak && self.spread_detected && p1 > 0.0 && p1 < p2 && p2 < self.horizon
    }
}

/// Devices needed in a community for it to count as infected.
pub const INFECTED_COMMUNITY_THRESHOLD: f64 = 1.0;

pub fn epidemic_summary(ts: &TimeSeries, origin: usize) -> Result<EpidemicSummary> {
    epidemic_summary_with(ts, origin, INFECTED_COMMUNITY_THRESHOLD)
}

pub fn epidemic_summary_with(
    ts: &TimeSeries,
    origin: usize,
    threshold: f64,
) -> Result<EpidemicSummary> {
    if ts.is_empty() {
        return Err(Error::validation("time_series", "no samples"));
    }
    if origin >= ts.communities() {
        return Err(Error::validation(
            "origin",
            format!("community {origin} out of range"),
        ));
    }
    let infected = ts.global_series(Compartment::I);
    let mut peak = 0;
    for (k, &v) in infected.iter().enumerate() {
        if v > infected[peak] {
            peak = k;
        }
    }
    let t0 = ts.times[0];
    let peak_time = ts.times[peak];
    let spreading: Vec<bool> = ts
        .by_community
        .iter()
        .map(|s| {
            s.iter()
                .filter(|c| c[Compartment::I.index()] >= threshold)
                .count()
                > 1
        })
        .collect();
    let first = spreading.windows(2).position(|w| w[0] && w[1]);
    let phase1 = first.map_or(peak_time, |k| ts.times[k].min(peak_time));
    let last = ts.len() - 1;
    let total = ts.population(last);
    let g = ts.global[last];
    let cumulative = if total > 0.0 {
        ((g[Compartment::R.index()] + g[Compartment::ER.index()]) / total).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(EpidemicSummary {
        origin,
        peak_time,
        peak_height: infected[peak],
        cumulative_infected_fraction: cumulative,
        phase_boundaries: [phase1.max(t0), peak_time],
        spread_detected: first.is_some(),
        no_outbreak: peak == 0,
        completed: infected[last] < infected[0],
        horizon: ts.times[last],
    })
}

/// Median of a slice (mean of the two central values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_examples() {
        assert_eq!(
            kl_symmetrized(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(),
            0.0
        );
        let expected = 0.5
            * (0.5 * 2f64.ln()
                + 0.5 * (2.0f64 / 3.0).ln()
                + 0.25 * 0.5f64.ln()
                + 0.75 * 1.5f64.ln());
        let got = kl_symmetrized(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        assert!((got - 0.13732).abs() < 1e-5);
        // unnormalised counts give the same answer
        assert!((kl_symmetrized(&[2.0, 2.0], &[1.0, 3.0]).unwrap() - got).abs() < 1e-12);
        assert!(kl_symmetrized(&[1.0], &[0.5, 0.5]).is_err());
        assert!(kl_symmetrized(&[1.0, 0.0], &[0.0, 1.0])
            .unwrap()
            .is_finite());
    }

    #[test]
    fn power_law_closed_form() {
        let xs = vec![3.0 * std::f64::consts::E; 200];
        let fit = fit_power_law(&xs, 3.0).unwrap();
        assert!((fit.alpha - 2.0).abs() < 1e-12);
        assert!((fit.std_error - 1.0 / 200f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn power_law_threshold_and_minimum() {
        let mut xs = vec![std::f64::consts::E; 150];
        xs.extend(vec![0.5; 1000]);
        let fit = fit_power_law(&xs, 1.0).unwrap();
        assert_eq!(fit.n, 150);
        assert!((fit.alpha - 2.0).abs() < 1e-12);
        assert!(matches!(
            fit_power_law(&xs[..99], 1.0),
            Err(Error::TooFewSamples {
                found: 99,
                needed: 100
            })
        ));
    }

    #[test]
    fn power_law_recovers_planted_exponent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let alpha = 2.51;
        let xs: Vec<f64> = (0..100_000)
            .map(|_| 10.0 * (1.0 - rng.random::<f64>()).powf(-1.0 / (alpha - 1.0)))
            .collect();
        let fit = fit_power_law(&xs, 10.0).unwrap();
        assert!((fit.alpha - alpha).abs() < 0.02, "{}", fit.alpha);
    }

    /// Betweenness by enumerating every shortest path explicitly.
    fn brute_betweenness(adj: &[Vec<usize>]) -> Vec<f64> {
        let n = adj.len();
        let mut cb = vec![0.0; n];
        fn paths(
            adj: &[Vec<usize>],
            cur: usize,
            t: usize,
            len: usize,
            path: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if path.len() - 1 == len {
                if cur == t {
                    out.push(path.clone());
                }
                return;
            }
            for &w in &adj[cur] {
                if !path.contains(&w) {
                    path.push(w);
                    paths(adj, w, t, len, path, out);
                    path.pop();
                }
            }
        }
        for s in 0..n {
            for t in 0..n {
                if s == t {
                    continue;
                }
                // shortest length by increasing search
                let mut found = Vec::new();
                for len in 1..n {
                    let mut path = vec![s];
                    paths(adj, s, t, len, &mut path, &mut found);
                    if !found.is_empty() {
                        break;
                    }
                }
                if found.is_empty() {
                    continue;
                }
                let total = found.len() as f64;
                for v in 0..n {
                    if v == s || v == t {
                        continue;
                    }
                    let through = found.iter().filter(|p| p.contains(&v)).count() as f64;
                    cb[v] += through / total;
                }
            }
        }
        if n > 1 {
            cb.iter_mut().for_each(|v| *v /= (n * (n - 1)) as f64);
        }
        cb
    }

    #[test]
    fn directed_cycle() {
        let adj = vec![vec![1], vec![2], vec![0]];
        let b = betweenness(&adj);
        assert_eq!(b, brute_betweenness(&adj));
        assert!(b.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn star_graph() {
        let n = 5;
        let mut p = Matrix::square(n);
        for leaf in 1..n {
            p[(leaf, 0)] = 10.0;
            p[(0, leaf)] = 3.0;
        }
        let g = graph_stats(&p, &[100.0; 5]).unwrap();
        assert_eq!(g.ranking[0], 0);
        assert!(g.betweenness[1..].iter().all(|&v| v == 0.0));
        assert!((g.betweenness[0] - 12.0 / 20.0).abs() < 1e-15);
        assert!((g.in_flow_share.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(g.degree, vec![4, 1, 1, 1, 1]);
        assert_eq!(g.degree_histogram, vec![0, 4, 0, 0, 1]);
    }

    proptest! {
        #[test]
        fn betweenness_matches_enumeration(n in 1usize..=6, bits in any::<u64>()) {
            let mut adj = vec![Vec::new(); n];
            let mut b = 0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        if bits >> (b % 64) & 1 == 1 {
                            adj[i].push(j);
                        }
                        b += 1;
                    }
                }
            }
            let fast = betweenness(&adj);
            let slow = brute_betweenness(&adj);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }

        #[test]
        fn kl_symmetric_nonnegative(a in prop::collection::vec(0.0f64..10.0, 1..12), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|_| rng.random_range(0.0..10.0)).collect();
            prop_assume!(a.iter().sum::<f64>() > 0.0 && b.iter().sum::<f64>() > 0.0);
            let ab = kl_symmetrized(&a, &b).unwrap();
            let ba = kl_symmetrized(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        }

        #[test]
        fn power_law_scale_equivariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..500).map(|_| 1.0 + rng.random::<f64>() * 50.0).collect();
            let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
            let a = fit_power_law(&xs, 2.0).unwrap().alpha;
            let b = fit_power_law(&scaled, 2.0 * scale).unwrap().alpha;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    fn fixture(curve: &[f64], others: &[f64]) -> TimeSeries {
        let mut ts = TimeSeries::new(2);
        for (k, (&a, &b)) in curve.iter().zip(others).enumerate() {
            let mut s0 = [0.0; 6];
            s0[0] = 1000.0 - a;
            s0[1] = a;
            let mut s1 = [0.0; 6];
            s1[0] = 1000.0 - b;
            s1[1] = b;
            ts.push(k as f64 * 1440.0, vec![s0, s1]);
        }
        ts
    }

    #[test]
    fn summary_of_hand_built_curve() {
        let curve = [
            1.0, 3.0, 8.0, 20.0, 40.0, 70.0, 90.0, 100.0, 60.0, 30.0, 10.0, 0.5,
        ];
        let other = [0.0, 0.0, 0.5, 2.0, 5.0, 9.0, 9.0, 9.0, 5.0, 2.0, 0.0, 0.0];
        let ts = fixture(&curve, &other);
        let s = epidemic_summary(&ts, 0).unwrap();
        assert_eq!(s.peak_time, 7.0 * 1440.0);
        assert_eq!(s.peak_height, 109.0);
        assert_eq!(s.phase_boundaries, [3.0 * 1440.0, 7.0 * 1440.0]);
        assert!(s.has_three_phases());
        assert!(s.completed);
        assert!(!s.no_outbreak);
    }

    #[test]
    fn summary_flags_no_outbreak() {
        let curve = [10.0, 8.0, 5.0, 2.0];
        let ts = fixture(&curve, &[0.0; 4]);
        let s = epidemic_summary(&ts, 0).unwrap();
        assert!(s.no_outbreak);
        assert!(!s.has_three_phases());
        assert_eq!(s.peak_time, 0.0);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
