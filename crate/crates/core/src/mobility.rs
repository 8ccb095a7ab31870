//! Home-rooted mobility dynamics and derived contact parameters.
//!
//! `N[i][j]` counts devices whose home is `i` that are currently in `j`.
//! Devices leave home `i` at rate `sigma_i`, pick destination `j` with
//! probability `nu[i][j]`, and return home from `j` at rate `zeta[j][i]`.
//! Away devices only ever move back home.

use serde::{Deserialize, Serialize};

use crate::cdr::MobilityParameters;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Devices by (home, current location), together with census totals.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationPartition {
    pub n: Matrix,
    pub areas: Vec<f64>,
    pub census: Vec<f64>,
}

impl PopulationPartition {
    /// Everyone at home.
    pub fn at_home(census: &[f64], areas: &[f64]) -> Self {
        let k = census.len();
        let mut n = Matrix::square(k);
        for (i, &c) in census.iter().enumerate() {
            n[(i, i)] = c;
        }
        PopulationPartition {
            n,
            areas: areas.to_vec(),
            census: census.to_vec(),
        }
    }
}

/// Time derivative of the partition under the return-rate mobility model.
pub fn mobility_rhs(pop: &Matrix, m: &MobilityParameters) -> Matrix {
    let k = m.community_count();
    assert_eq!(
        pop.rows(),
        k,
        "partition does not match mobility parameters"
    );
    let mut d = Matrix::square(k);
    mobility_rhs_into(pop.as_slice(), m, d.as_mut_slice());
    d
}

/// Flat-slice form of [`mobility_rhs`] (row-major `home x location`).
pub fn mobility_rhs_into(x: &[f64], m: &MobilityParameters, out: &mut [f64]) {
    let k = m.community_count();
    for i in 0..k {
        let row = &x[i * k..(i + 1) * k];
        let out_row = &mut out[i * k..(i + 1) * k];
        let sigma = m.sigma[i];
        let home = row[i];
        let mut back = 0.0;
        for j in 0..k {
            if j == i {
                continue;
            }
            let returning = m.zeta[(j, i)] * row[j];
            out_row[j] = sigma * m.nu[(i, j)] * home - returning;
            back += returning;
        }
        out_row[i] = back - sigma * home;
    }
}

/// Closed-form long-run partition of each home population.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    /// `n_star[i][j]`: devices homed in `i` located in `j`.
    pub n_star: Matrix,
    /// Devices per km² present in each community (any home).
    pub rho_star: Vec<f64>,
    /// Devices present in each community, `sum_i n_star[i][j]`.
    pub occupancy: Vec<f64>,
}

impl SteadyState {
    pub fn community_count(&self) -> usize {
        self.occupancy.len()
    }

    pub fn home_totals(&self) -> Vec<f64> {
        self.n_star.row_sums()
    }
}

/// Steady state of the mobility model.
///
/// `N*_ii = N_i / (1 + sigma_i sum_k nu_ik / zeta_ki)` and
/// `N*_ij = N*_ii sigma_i nu_ij / zeta_ji`. A flow `i -> j` with
/// `zeta[j][i] == 0` makes the closed form undefined and is reported as
/// [`Error::NoReturnPath`].
pub fn steady_state(census: &[f64], areas: &[f64], m: &MobilityParameters) -> Result<SteadyState> {
    let k = m.community_count();
    if census.len() != k || areas.len() != k {
        return Err(Error::Dimension(format!(
            "{} census values and {} areas for {k} communities",
            census.len(),
            areas.len()
        )));
    }
    if let Some((i, a)) = areas.iter().enumerate().find(|(_, &a)| !(a > 0.0)) {
        return Err(Error::validation(
            "area_km2",
            format!("community {i} has non-positive area {a}"),
        ));
    }
    let mut n_star = Matrix::square(k);
    for i in 0..k {
        let sigma = m.sigma[i];
        let mut ratios = vec![0.0; k];
        let mut away = 0.0;
        if sigma > 0.0 {
            for j in 0..k {
                let nu = m.nu[(i, j)];
                if j == i || nu == 0.0 {
                    continue;
                }
                let zeta = m.zeta[(j, i)];
                if !(zeta > 0.0) {
                    return Err(Error::NoReturnPath {
                        home: i,
                        location: j,
                    });
                }
                ratios[j] = sigma * nu / zeta;
                away += ratios[j];
            }
        }
        let home = census[i] / (1.0 + away);
        n_star[(i, i)] = home;
        for j in 0..k {
            if j != i && ratios[j] > 0.0 {
                n_star[(i, j)] = home * ratios[j];
            }
        }
    }
    let occupancy = n_star.col_sums();
    let rho_star = occupancy.iter().zip(areas).map(|(o, a)| o / a).collect();
    Ok(SteadyState {
        n_star,
        rho_star,
        occupancy,
    })
}

/// Removes routing entries that have no matching return rate.
///
/// `sigma_i * nu_ij` is kept unchanged for the surviving destinations, so the
/// row is renormalised and `sigma_i` scaled by the retained mass. Returns the
/// cleaned parameters and the removed `(home, location)` pairs.
pub fn prune_unreturned(m: &MobilityParameters) -> (MobilityParameters, Vec<(usize, usize)>) {
    let k = m.community_count();
    let mut out = m.clone();
    let mut removed = Vec::new();
    for i in 0..k {
        let mut kept = 0.0;
        for j in 0..k {
            let nu = m.nu[(i, j)];
            if j == i || nu == 0.0 {
                continue;
            }
            if m.zeta[(j, i)] > 0.0 {
                kept += nu;
            } else {
                out.nu[(i, j)] = 0.0;
                removed.push((i, j));
            }
        }
        if kept > 0.0 {
            if kept < 1.0 {
                out.nu.row_mut(i).iter_mut().for_each(|v| *v /= kept);
                out.sigma[i] = m.sigma[i] * kept;
            }
        } else {
            out.nu.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            out.sigma[i] = 0.0;
            out.isolated[i] = true;
        }
    }
    (out, removed)
}

/// A value plus non-fatal warnings about how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Out-degree of every node in the unweighted support of `p`.
pub fn out_degrees(p: &Matrix) -> Vec<usize> {
    (0..p.rows())
        .map(|i| {
            p.row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &v)| j != i && v > 0.0)
                .count()
        })
        .collect()
}

/// Degree-dependent return rates.
///
/// The dwell time at a location scales as `d^chi / <d^chi>`, where `d` is the
/// location's out-degree in the transition graph and `<d^chi>` averages over
/// non-isolated communities; so `zeta[loc][home] = zeta_bar <d^chi> / d_loc^chi`.
/// Isolated locations get `zeta_bar`. A non-negative `chi` is accepted with a
/// warning.
pub fn heterogeneous_zeta(p: &Matrix, zeta_bar: f64, chi: f64) -> Result<Flagged<Matrix>> {
    if !(zeta_bar > 0.0) || !zeta_bar.is_finite() {
        return Err(Error::validation(
            "zeta_bar",
            format!("must be positive and finite, got {zeta_bar}"),
        ));
    }
    if !chi.is_finite() {
        return Err(Error::validation("chi", "must be finite"));
    }
    let mut warnings = Vec::new();
    if chi >= 0.0 {
        let msg = format!("chi = {chi} >= 0: peripheral communities get shorter dwell times");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let k = p.rows();
    let degrees = out_degrees(p);
    let powered: Vec<Option<f64>> = degrees
        .iter()
        .map(|&d| (d > 0).then(|| (d as f64).powf(chi)))
        .collect();
    let connected: Vec<f64> = powered.iter().flatten().copied().collect();
    let mean = if connected.is_empty() {
        1.0
    } else {
        connected.iter().sum::<f64>() / connected.len() as f64
    };
    let zeta = Matrix::from_fn(k, k, |loc, home| {
        if loc == home {
            0.0
        } else {
            match powered[loc] {
                Some(dc) => zeta_bar * mean / dc,
                None => zeta_bar,
            }
        }
    });
    Ok(Flagged {
        value: zeta,
        warnings,
    })
}

/// Contact parameters per community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactParameters {
    pub k_mean: Vec<f64>,
    pub beta: Vec<f64>,
    pub radius_m: f64,
}

/// Expected neighbours within `radius_m`: `rho * pi * r^2` with `r` in km.
pub fn neighborhood_size(rho_star: &[f64], radius_m: f64) -> Result<Vec<f64>> {
    if !(radius_m > 0.0) || !radius_m.is_finite() {
        return Err(Error::validation(
            "radius_m",
            format!("must be positive, got {radius_m}"),
        ));
    }
    let r_km = radius_m / 1000.0;
    let disc = std::f64::consts::PI * r_km * r_km;
    Ok(rho_star.iter().map(|rho| rho * disc).collect())
}

/// Transmission rate from the per-contact success probability,
/// `beta = -ln(1 - c)`.
pub fn beta_from_contact(c: &[f64]) -> Result<Vec<f64>> {
    c.iter()
        .enumerate()
        .map(|(i, &ci)| {
            if !(0.0..1.0).contains(&ci) {
                Err(Error::validation(
                    "contact_prob",
                    format!("community {i}: {ci} not in [0, 1)"),
                ))
            } else {
                Ok(-(-ci).ln_1p())
            }
        })
        .collect()
}

impl ContactParameters {
    pub fn new(ss: &SteadyState, contact_prob: &[f64], radius_m: f64) -> Result<Self> {
        Ok(ContactParameters {
            k_mean: neighborhood_size(&ss.rho_star, radius_m)?,
            beta: beta_from_contact(contact_prob)?,
            radius_m,
        })
    }
}
