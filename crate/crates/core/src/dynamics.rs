//! Deterministic compartmental dynamics on top of the mobility model.
//!
//! The state holds six planes `X[s][i][j]` (state `s`, home `i`, location
//! `j`). The SIR system uses the first three planes; the latent system adds
//! switched-off twins `E_S`, `E_I`, `E_R` that move but neither transmit nor
//! receive. Both systems share one right-hand side, so with zero latent rates
//! the latent system reproduces SIR bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::analysis::TimeSeries;
use crate::cdr::MobilityParameters;
use crate::error::{Error, Result};
use crate::mobility::{mobility_rhs_into, ContactParameters, SteadyState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Compartment {
    S,
    I,
    R,
    ES,
    EI,
    ER,
}

impl Compartment {
    pub const ALL: [Compartment; 6] = [
        Compartment::S,
        Compartment::I,
        Compartment::R,
        Compartment::ES,
        Compartment::EI,
        Compartment::ER,
    ];
    pub const ACTIVE: [Compartment; 3] = [Compartment::S, Compartment::I, Compartment::R];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(s: usize) -> Option<Self> {
        Self::ALL.get(s).copied()
    }

    pub fn is_latent(self) -> bool {
        self.index() >= 3
    }

    /// Active state for a latent one and vice versa.
    pub fn twin(self) -> Compartment {
        Compartment::ALL[(self.index() + 3) % 6]
    }

    pub fn label(self) -> &'static str {
        match self {
            Compartment::S => "S",
            Compartment::I => "I",
            Compartment::R => "R",
            Compartment::ES => "E_S",
            Compartment::EI => "E_I",
            Compartment::ER => "E_R",
        }
    }
}

/// Real-valued device counts `X[s][i][j]`, flattened as `s*n*n + i*n + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentState {
    n: usize,
    values: Vec<f64>,
    pub time: f64,
}

impl CompartmentState {
    pub fn zeros(n: usize) -> Self {
        CompartmentState {
            n,
            values: vec![0.0; 6 * n * n],
            time: 0.0,
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != 6 * n * n {
            return Err(Error::Dimension(format!(
                "{} values for {n} communities (need {})",
                values.len(),
                6 * n * n
            )));
        }
        Ok(CompartmentState { n, values, time })
    }

    /// Everyone susceptible, distributed as the mobility steady state.
    pub fn susceptible(ss: &SteadyState) -> Self {
        let n = ss.community_count();
        let mut st = CompartmentState::zeros(n);
        st.values[..n * n].copy_from_slice(ss.n_star.as_slice());
        st
    }

    pub fn community_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn index(&self, s: Compartment, i: usize, j: usize) -> usize {
        s.index() * self.n * self.n + i * self.n + j
    }

    #[inline]
    pub fn get(&self, s: Compartment, i: usize, j: usize) -> f64 {
        self.values[self.index(s, i, j)]
    }

    #[inline]
    pub fn set(&mut self, s: Compartment, i: usize, j: usize, v: f64) {
        let k = self.index(s, i, j);
        self.values[k] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn plane(&self, s: Compartment) -> &[f64] {
        let nn = self.n * self.n;
        &self.values[s.index() * nn..(s.index() + 1) * nn]
    }

    /// `sum_s sum_j X[s][i][j]` for every home `i`.
    pub fn home_totals(&self) -> Vec<f64> {
        home_totals(&self.values, self.n)
    }

    /// Devices of state `s` present in each location.
    pub fn location_totals(&self, s: Compartment) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for row in self.plane(s).chunks_exact(n.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn total(&self, s: Compartment) -> f64 {
        self.plane(s).iter().sum()
    }

    pub fn latent_planes_zero(&self) -> bool {
        let nn = self.n * self.n;
        self.values[3 * nn..].iter().all(|&v| v == 0.0)
    }
}

pub(crate) fn home_totals(x: &[f64], n: usize) -> Vec<f64> {
    let nn = n * n;
    (0..n)
        .map(|i| {
            (0..6)
                .map(|s| x[s * nn + i * n..s * nn + (i + 1) * n].iter().sum::<f64>())
                .sum()
        })
        .collect()
}

/// Rates of the dissemination model, all per minute and per community.
///
/// `mu`, `alpha` are indexed by active state (`[S, I, R]`): `mu[s][j]` moves
/// a device in `s` at location `j` to its latent twin, `alpha[s][j]` moves it
/// back. `gamma[j]` moves `E_I` to `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub k_mean: Vec<f64>,
    pub mu: [Vec<f64>; 3],
    pub alpha: [Vec<f64>; 3],
    pub gamma: Vec<f64>,
    pub mobility: MobilityParameters,
    /// Steady-state occupancy of each location.
    pub n_star_loc: Vec<f64>,
}

impl ModelParameters {
    /// SIR parameters with all latent rates zero.
    pub fn sir(
        beta: Vec<f64>,
        delta: Vec<f64>,
        k_mean: Vec<f64>,
        mobility: MobilityParameters,
        n_star_loc: Vec<f64>,
    ) -> Result<Self> {
        let n = mobility.community_count();
        let p = ModelParameters {
            beta,
            delta,
            k_mean,
            mu: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            alpha: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            gamma: vec![0.0; n],
            mobility,
            n_star_loc,
        };
        p.validate()?;
        Ok(p)
    }

    /// SIR parameters from a steady state, contact parameters and recovery rates.
    pub fn from_contact(
        ss: &SteadyState,
        contact: &ContactParameters,
        delta: Vec<f64>,
        mobility: MobilityParameters,
    ) -> Result<Self> {
        ModelParameters::sir(
            contact.beta.clone(),
            delta,
            contact.k_mean.clone(),
            mobility,
            ss.occupancy.clone(),
        )
    }

    pub fn with_latent(
        mut self,
        mu: [Vec<f64>; 3],
        alpha: [Vec<f64>; 3],
        gamma: Vec<f64>,
    ) -> Result<Self> {
        self.mu = mu;
        self.alpha = alpha;
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn community_count(&self) -> usize {
        self.mobility.community_count()
    }

    pub fn has_latent_rates(&self) -> bool {
        self.mu
            .iter()
            .chain(&self.alpha)
            .chain(std::iter::once(&self.gamma))
            .any(|v| v.iter().any(|&x| x != 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.community_count();
        let vectors: [(&str, &Vec<f64>); 11] = [
            ("beta", &self.beta),
            ("delta", &self.delta),
            ("k_mean", &self.k_mean),
            ("mu_s", &self.mu[0]),
            ("mu_i", &self.mu[1]),
            ("mu_r", &self.mu[2]),
            ("alpha_s", &self.alpha[0]),
            ("alpha_i", &self.alpha[1]),
            ("alpha_r", &self.alpha[2]),
            ("gamma", &self.gamma),
            ("n_star_loc", &self.n_star_loc),
        ];
        for (name, v) in vectors {
            if v.len() != n {
                return Err(Error::Dimension(format!(
                    "{name} has {} entries, expected {n}",
                    v.len()
                )));
            }
            if let Some((j, x)) = v
                .iter()
                .enumerate()
                .find(|(_, x)| !(**x >= 0.0) || !x.is_finite())
            {
                return Err(Error::validation(
                    name,
                    format!("community {j}: {x} is not a finite non-negative rate"),
                ));
            }
        }
        Ok(())
    }
}

/// Which right-hand side to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dynamics {
    Sir,
    SirLatent,
}

impl Dynamics {
    pub fn planes(self) -> usize {
        match self {
            Dynamics::Sir => 3,
            Dynamics::SirLatent => 6,
        }
    }
}

impl std::str::FromStr for Dynamics {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sir" => Ok(Dynamics::Sir),
            "sir_latent" => Ok(Dynamics::SirLatent),
            other => Err(Error::validation(
                "mode",
                format!("expected sir|sir_latent, got {other:?}"),
            )),
        }
    }
}

/// Precomputed coefficients shared by the deterministic and stochastic engines.
#[derive(Debug, Clone)]
pub(crate) struct Kernel<'a> {
    pub p: &'a ModelParameters,
    pub n: usize,
    /// `beta_j k_j / N*_j`, zero where `N*_j == 0`.
    pub coeff: Vec<f64>,
    pub itot: Vec<f64>,
}

impl<'a> Kernel<'a> {
    pub fn new(p: &'a ModelParameters) -> Result<Self> {
        p.validate()?;
        let n = p.community_count();
        let coeff = (0..n)
            .map(|j| {
                let ns = p.n_star_loc[j];
                if ns > 0.0 {
                    p.beta[j] * p.k_mean[j] / ns
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Kernel {
            p,
            n,
            coeff,
            itot: vec![0.0; n],
        })
    }

    /// Fills `itot` with active infectives per location and checks that no
    /// active device sits in a location with zero steady-state occupancy.
    pub fn prepare(&mut self, x: &[f64]) -> Result<()> {
        let n = self.n;
        let nn = n * n;
        self.itot.iter_mut().for_each(|v| *v = 0.0);
        let infected = &x[Compartment::I.index() * nn..(Compartment::I.index() + 1) * nn];
        for row in infected.chunks_exact(n) {
            for (t, v) in self.itot.iter_mut().zip(row) {
                *t += v;
            }
        }
        for j in 0..n {
            if self.p.n_star_loc[j] > 0.0 {
                continue;
            }
            for s in 0..3 {
                for i in 0..n {
                    if x[s * nn + i * n + j] != 0.0 {
                        return Err(Error::EmptyNormalization { location: j });
                    }
                }
            }
        }
        Ok(())
    }

    /// Derivative of the flat state. `planes` is 3 (SIR) or 6 (latent).
    pub fn eval(&mut self, x: &[f64], planes: usize, out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let nn = n * n;
        self.prepare(x)?;
        let p = self.p;
        for s in 0..planes {
            let r = s * nn..(s + 1) * nn;
            mobility_rhs_into(&x[r.clone()], &p.mobility, &mut out[r]);
        }
        for v in &mut out[planes * nn..] {
            *v = 0.0;
        }
        let (si, ii, ri) = (0, nn, 2 * nn);
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let infect = self.coeff[j] * self.itot[j] * x[si + k];
                let recover = p.delta[j] * x[ii + k];
                out[si + k] -= infect;
                out[ii + k] += infect - recover;
                out[ri + k] += recover;
            }
        }
        if planes == 6 {
            for s in 0..3 {
                let (a, e) = (s * nn, (s + 3) * nn);
                for i in 0..n {
                    for j in 0..n {
                        let k = i * n + j;
                        let sleep = p.mu[s][j] * x[a + k];
                        let wake = p.alpha[s][j] * x[e + k];
                        out[a + k] += wake - sleep;
                        out[e + k] += sleep - wake;
                    }
                }
            }
            let (ei, r) = (4 * nn, 2 * nn);
            for i in 0..n {
                for j in 0..n {
                    let k = i * n + j;
                    let g = p.gamma[j] * x[ei + k];
                    out[ei + k] -= g;
                    out[r + k] += g;
                }
            }
        }
        Ok(())
    }
}

fn check_shape(state: &CompartmentState, p: &ModelParameters) -> Result<()> {
    if state.community_count() != p.community_count() {
        return Err(Error::Dimension(format!(
            "state has {} communities, parameters {}",
            state.community_count(),
            p.community_count()
        )));
    }
    Ok(())
}

/// SIR derivative; latent planes of the result are zero.
pub fn sir_rhs(state: &CompartmentState, p: &ModelParameters) -> Result<CompartmentState> {
    rhs(Dynamics::Sir, state, p)
}

/// Six-state derivative.
pub fn sir_latent_rhs(state: &CompartmentState, p: &ModelParameters) -> Result<CompartmentState> {
    rhs(Dynamics::SirLatent, state, p)
}

pub fn rhs(
    dynamics: Dynamics,
    state: &CompartmentState,
    p: &ModelParameters,
) -> Result<CompartmentState> {
    check_shape(state, p)?;
    let mut out = CompartmentState::zeros(state.community_count());
    out.time = state.time;
    Kernel::new(p)?.eval(&state.values, dynamics.planes(), &mut out.values)?;
    Ok(out)
}

/// Scratch buffers for classical fourth-order Runge-Kutta.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Rk4 {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    pub fn step<E>(
        &mut self,
        y: &mut [f64],
        h: f64,
        mut f: impl FnMut(&[f64], &mut [f64]) -> std::result::Result<(), E>,
    ) -> std::result::Result<(), E> {
        f(y, &mut self.k1)?;
        for ((t, y), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *t = y + 0.5 * h * k;
        }
        f(&self.tmp, &mut self.k2)?;
        for ((t, y), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *t = y + 0.5 * h * k;
        }
        f(&self.tmp, &mut self.k3)?;
        for ((t, y), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *t = y + h * k;
        }
        f(&self.tmp, &mut self.k4)?;
        let w = h / 6.0;
        for (i, y) in y.iter_mut().enumerate() {
            *y += w * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// Integrates `y' = f(y)` from `t0` to `t_end` with step `dt` (last step
/// shortened to land on `t_end`).
pub fn rk4_integrate(
    y: &mut [f64],
    t0: f64,
    t_end: f64,
    dt: f64,
    mut f: impl FnMut(&[f64], &mut [f64]),
) {
    let mut rk = Rk4::new(y.len());
    for h in step_sizes(t0, t_end, dt) {
        rk.step::<std::convert::Infallible>(y, h, |x, out| {
            f(x, out);
            Ok(())
        })
        .unwrap();
    }
}

/// Step lengths covering `[t0, t_end]`: whole steps of `dt` then a remainder.
pub(crate) fn step_sizes(t0: f64, t_end: f64, dt: f64) -> impl Iterator<Item = f64> {
    let span = (t_end - t0).max(0.0);
    let ratio = span / dt;
    let mut whole = ratio.floor() as u64;
    let mut rest = span - whole as f64 * dt;
    if rest <= 1e-9 * dt {
        rest = 0.0;
    } else if dt - rest <= 1e-9 * dt {
        whole += 1;
        rest = 0.0;
    }
    std::iter::repeat_n(dt, whole as usize).chain((rest > 0.0).then_some(rest))
}

/// Sample times `t0, t0 + every, ...` up to and including `t_end`.
pub fn sample_grid(t0: f64, t_end: f64, every: f64) -> Vec<f64> {
    let mut out = vec![t0];
    if t_end <= t0 {
        return out;
    }
    let mut k = 1u64;
    loop {
        let t = t0 + k as f64 * every;
        if t >= t_end - 1e-9 * every {
            out.push(t_end);
            return out;
        }
        out.push(t);
        k += 1;
    }
}

/// Negativity repairs applied after integration steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClampReport {
    pub steps: u64,
    /// Entries set from a negative value to zero.
    pub clamped_entries: u64,
    /// Total magnitude removed by clamping, in devices.
    pub clamped_mass: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub series: TimeSeries,
    pub final_state: CompartmentState,
    pub report: ClampReport,
}

pub(crate) fn validate_time_grid(
    dt: f64,
    t_end: f64,
    t0: f64,
    sample_every: f64,
    dt_name: &str,
) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::validation(
            dt_name,
            format!("must be positive, got {dt}"),
        ));
    }
    if !(sample_every >= dt) || !sample_every.is_finite() {
        return Err(Error::validation(
            "sample_every",
            format!("must be finite and at least {dt_name} = {dt}, got {sample_every}"),
        ));
    }
    if !t_end.is_finite() || t_end < t0 {
        return Err(Error::validation(
            "t_end",
            format!("{t_end} is before start {t0}"),
        ));
    }
    Ok(())
}

/// Clamps negative entries of each home row to zero and rescales the row back
/// to its total.
fn clamp_rows(x: &mut [f64], n: usize, totals: &[f64], report: &mut ClampReport) {
    let nn = n * n;
    for i in 0..n {
        let mut negative = false;
        for s in 0..6 {
            negative |= x[s * nn + i * n..s * nn + (i + 1) * n]
                .iter()
                .any(|&v| v < 0.0);
        }
        if !negative {
            continue;
        }
        let mut sum = 0.0;
        for s in 0..6 {
            for v in &mut x[s * nn + i * n..s * nn + (i + 1) * n] {
                if *v < 0.0 {
                    report.clamped_entries += 1;
                    report.clamped_mass += -*v;
                    *v = 0.0;
                }
                sum += *v;
            }
        }
        if sum > 0.0 {
            let scale = totals[i] / sum;
            for s in 0..6 {
                for v in &mut x[s * nn + i * n..s * nn + (i + 1) * n] {
                    *v *= scale;
                }
            }
        }
    }
}

/// Fixed-step RK4 integration with per-row negativity repair.
pub fn integrate(
    dynamics: Dynamics,
    p: &ModelParameters,
    initial: &CompartmentState,
    dt: f64,
    t_end: f64,
    sample_every: f64,
) -> Result<Trajectory> {
    check_shape(initial, p)?;
    let t0 = initial.time;
    validate_time_grid(dt, t_end, t0, sample_every, "dt")?;
    if dynamics == Dynamics::Sir && !initial.latent_planes_zero() {
        return Err(Error::validation(
            "mode",
            "SIR dynamics with non-empty latent planes",
        ));
    }
    let n = initial.community_count();
    let totals = initial.home_totals();
    let mut kernel = Kernel::new(p)?;
    let planes = dynamics.planes();
    let mut rk = Rk4::new(initial.values.len());
    let mut y = initial.values.clone();
    let mut report = ClampReport::default();
    let mut series = TimeSeries::new(n);
    series.push_flat(t0, &y);

    let grid = sample_grid(t0, t_end, sample_every);
    let mut t = t0;
    for &target in &grid[1..] {
        for h in step_sizes(t, target, dt) {
            rk.step(&mut y, h, |x, out| kernel.eval(x, planes, out))?;
            t += h;
            report.steps += 1;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { time: t });
            }
            clamp_rows(&mut y, n, &totals, &mut report);
        }
        t = target;
        series.push_flat(t, &y);
    }
    if report.clamped_entries > 0 {
        log::debug!(
            "integration clamped {} entries ({} devices)",
            report.clamped_entries,
            report.clamped_mass
        );
    }
    Ok(Trajectory {
        series,
        final_state: CompartmentState {
            n,
            values: y,
            time: t,
        },
        report,
    })
}

/// Initial infection at the origin's home-resident population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub origin: usize,
    /// Fraction of `N*_oo` that starts infected.
    pub epsilon: f64,
}

/// Steady-state susceptibles with `epsilon N*_oo` infectives at the origin.
pub fn seed_infection(ss: &SteadyState, spec: SeedSpec) -> Result<CompartmentState> {
    let n = ss.community_count();
    if spec.origin >= n {
        return Err(Error::validation(
            "origin",
            format!("community {} out of range (have {n})", spec.origin),
        ));
    }
    if !(spec.epsilon > 0.0 && spec.epsilon < 1.0) {
        return Err(Error::validation(
            "epsilon",
            format!("must lie strictly between 0 and 1, got {}", spec.epsilon),
        ));
    }
    let mut st = CompartmentState::susceptible(ss);
    let o = spec.origin;
    let home = ss.n_star[(o, o)];
    let infected = spec.epsilon * home;
    if infected < 1.0 {
        log::warn!("seed of {infected} devices at community {o} is below one device");
    }
    st.set(Compartment::S, o, o, home - infected);
    st.set(Compartment::I, o, o, infected);
    Ok(st)
}

/// Moves `fraction` of every active compartment to its latent twin.
pub fn apply_latent_fraction(state: &CompartmentState, fraction: f64) -> Result<CompartmentState> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::validation(
            "latent_fraction",
            format!("must lie in [0, 1), got {fraction}"),
        ));
    }
    let mut out = state.clone();
    let nn = state.n * state.n;
    for s in 0..3 {
        for k in 0..nn {
            let a = out.values[s * nn + k];
            let moved = a * fraction;
            out.values[s * nn + k] = a - moved;
            out.values[(s + 3) * nn + k] += moved;
        }
    }
    Ok(out)
}

/// Sleep and wake rates whose equilibrium latent share is `fraction`:
/// `alpha = wake_rate`, `mu = alpha f / (1 - f)`.
pub fn latent_rates(fraction: f64, wake_rate: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::validation(
            "latent_fraction",
            format!("must lie in [0, 1), got {fraction}"),
        ));
    }
    if !(wake_rate > 0.0) || !wake_rate.is_finite() {
        return Err(Error::validation(
            "alpha",
            format!("must be positive, got {wake_rate}"),
        ));
    }
    Ok((wake_rate * fraction / (1.0 - fraction), wake_rate))
}

/// Local reproduction number `k beta / delta`.
pub fn r0_local(k_mean: f64, beta: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::validation(
            "delta",
            format!("must be positive, got {delta}"),
        ));
    }
    Ok(k_mean * beta / delta)
}
