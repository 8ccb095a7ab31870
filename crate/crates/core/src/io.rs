//! CSV formats for matrices, vectors, community tables and time series.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so files
//! are locale-independent and re-read to the identical `f64`.

use std::io::{BufRead, Write};

use crate::analysis::TimeSeries;
use crate::cdr::DensityMatrix;
use crate::dynamics::Compartment;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::synth::World;

pub const COMMUNITIES_HEADER: &str = "community_id,name,lat,lon,area_km2,population";
pub const TIMESERIES_HEADER: &str = "t_min,community_id,S,I,R,E_S,E_I,E_R";
pub const GLOBAL_HEADER: &str = "t_min,S,I,R,E_S,E_I,E_R";

/// Square matrix with a `community_id` column and one column per community.
pub fn write_matrix<W: Write>(mut w: W, m: &Matrix) -> std::io::Result<()> {
    write!(w, "community_id")?;
    for j in 0..m.cols() {
        write!(w, ",{j}")?;
    }
    writeln!(w)?;
    for i in 0..m.rows() {
        write!(w, "{i}")?;
        for v in m.row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_matrix<R: BufRead>(r: R) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (k, line) in data_lines(r)? {
        if k == 1 {
            continue;
        }
        let mut fields = line.split(',');
        fields.next();
        let row = fields
            .map(|f| parse_f64(f, k))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(rows)
}

/// `community_id,<name>` per row.
pub fn write_vector<W: Write>(mut w: W, name: &str, v: &[f64]) -> std::io::Result<()> {
    writeln!(w, "community_id,{name}")?;
    for (i, x) in v.iter().enumerate() {
        writeln!(w, "{i},{x}")?;
    }
    Ok(())
}

/// Several named columns keyed by community id.
pub fn write_columns<W: Write>(mut w: W, columns: &[(&str, &[f64])]) -> std::io::Result<()> {
    write!(w, "community_id")?;
    for (name, _) in columns {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    let rows = columns.first().map_or(0, |c| c.1.len());
    for i in 0..rows {
        write!(w, "{i}")?;
        for (_, col) in columns {
            write!(w, ",{}", col[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_vector<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (k, line) in data_lines(r)? {
        if k == 1 {
            continue;
        }
        let value = line.split(',').nth(1).ok_or_else(|| Error::Parse {
            line: k,
            message: "expected two fields".into(),
        })?;
        out.push(parse_f64(value, k)?);
    }
    Ok(out)
}

/// Community metadata as read from or written to the communities file.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityTable {
    pub names: Vec<String>,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    pub area_km2: Vec<f64>,
    pub population: Vec<f64>,
}

impl CommunityTable {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl From<&World> for CommunityTable {
    fn from(w: &World) -> Self {
        CommunityTable {
            names: w.names.clone(),
            lat: w.lat.clone(),
            lon: w.lon.clone(),
            area_km2: w.area_km2.clone(),
            population: w.census(),
        }
    }
}

pub fn write_communities<W: Write>(mut w: W, t: &CommunityTable) -> std::io::Result<()> {
    writeln!(w, "{COMMUNITIES_HEADER}")?;
    for i in 0..t.len() {
        writeln!(
            w,
            "{i},{},{},{},{},{}",
            t.names[i], t.lat[i], t.lon[i], t.area_km2[i], t.population[i]
        )?;
    }
    Ok(())
}

/// Rows must list community ids `0..n` in order.
pub fn read_communities<R: BufRead>(r: R) -> Result<CommunityTable> {
    let mut t = CommunityTable {
        names: Vec::new(),
        lat: Vec::new(),
        lon: Vec::new(),
        area_km2: Vec::new(),
        population: Vec::new(),
    };
    for (k, line) in data_lines(r)? {
        if k == 1 && line.trim() == COMMUNITIES_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(Error::Parse {
                line: k,
                message: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let id: usize = f[0].parse().map_err(|_| Error::Parse {
            line: k,
            message: format!("bad community id {:?}", f[0]),
        })?;
        if id != t.len() {
            return Err(Error::validation(
                format!("line {k}"),
                format!("community id {id} out of order (expected {})", t.len()),
            ));
        }
        let area = parse_f64(f[4], k)?;
        if !(area > 0.0) {
            return Err(Error::validation(
                format!("line {k}"),
                format!("area_km2 must be positive, got {area}"),
            ));
        }
        let pop = parse_f64(f[5], k)?;
        if !(pop >= 0.0) {
            return Err(Error::validation(
                format!("line {k}"),
                format!("population must be non-negative, got {pop}"),
            ));
        }
        t.names.push(f[1].to_string());
        t.lat.push(parse_f64(f[2], k)?);
        t.lon.push(parse_f64(f[3], k)?);
        t.area_km2.push(area);
        t.population.push(pop);
    }
    Ok(t)
}

/// `slot_start_min` then one density column per community.
pub fn write_density<W: Write>(mut w: W, d: &DensityMatrix) -> std::io::Result<()> {
    write!(w, "slot_start_min")?;
    for j in 0..d.rho.cols() {
        write!(w, ",{j}")?;
    }
    writeln!(w)?;
    for s in 0..d.rho.rows() {
        write!(w, "{}", d.slot_start(s))?;
        for v in d.rho.row(s) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_timeseries<W: Write>(mut w: W, ts: &TimeSeries) -> std::io::Result<()> {
    writeln!(w, "{TIMESERIES_HEADER}")?;
    for (k, t) in ts.times.iter().enumerate() {
        for (j, c) in ts.by_community[k].iter().enumerate() {
            writeln!(
                w,
                "{t},{j},{},{},{},{},{},{}",
                c[0], c[1], c[2], c[3], c[4], c[5]
            )?;
        }
    }
    Ok(())
}

pub fn write_global<W: Write>(mut w: W, ts: &TimeSeries) -> std::io::Result<()> {
    writeln!(w, "{GLOBAL_HEADER}")?;
    for (t, g) in ts.times.iter().zip(&ts.global) {
        writeln!(
            w,
            "{t},{},{},{},{},{},{}",
            g[0], g[1], g[2], g[3], g[4], g[5]
        )?;
    }
    Ok(())
}

/// Global ensemble statistics: `t_min` then `<state>_mean,<state>_std`.
pub fn write_ensemble<W: Write>(
    mut w: W,
    mean: &TimeSeries,
    std: &TimeSeries,
) -> std::io::Result<()> {
    write!(w, "t_min")?;
    for c in Compartment::ALL {
        write!(w, ",{0}_mean,{0}_std", c.label())?;
    }
    writeln!(w)?;
    for (k, t) in mean.times.iter().enumerate() {
        write!(w, "{t}")?;
        for s in 0..6 {
            write!(w, ",{},{}", mean.global[k][s], std.global[k][s])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Two-column plot file: days and the fraction of devices in `c`.
pub fn write_curve<W: Write>(mut w: W, ts: &TimeSeries, c: Compartment) -> std::io::Result<()> {
    writeln!(w, "# day fraction_{}", c.label())?;
    for (k, t) in ts.times.iter().enumerate() {
        let total = ts.population(k);
        let f = if total > 0.0 {
            ts.global[k][c.index()] / total
        } else {
            0.0
        };
        writeln!(w, "{} {f}", t / crate::MINUTES_PER_DAY)?;
    }
    Ok(())
}

fn data_lines<R: BufRead>(r: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((k + 1, line));
    }
    Ok(out)
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("not a number: {s:?}"),
    })
}
