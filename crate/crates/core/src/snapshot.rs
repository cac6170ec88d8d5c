//! Binary snapshot format for time fields.
//!
//! Layout (little endian): magic `CIFD`, then u32 version, d, N, rank,
//! symmetry flag and node count; then the physical-grid samples on the
//! native `N^d` grid for every node and component (node-major, components
//! row-major, grid row-major with the last axis fastest); then the time
//! nodes and the quadrature weights as f64 arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{PhysicalField, Shape, SpectralField};
use crate::intervals::IntervalSet;
use crate::state::ReynoldsQuadruple;
use crate::time::{TimeField, TimeGrid};

pub const MAGIC: &[u8; 4] = b"CIFD";
pub const VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(out: &mut W, f: &TimeField) -> Result<()> {
    let shape = f.shape();
    out.write_all(MAGIC)?;
    let symmetric = f.fields().iter().all(|x| x.is_symmetric()) && f.rank() == 2;
    for v in [
        VERSION,
        shape.d() as u32,
        shape.n() as u32,
        f.rank() as u32,
        symmetric as u32,
        f.len() as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    for field in f.fields() {
        let grid = field.to_grid(shape.n());
        for c in &grid.comps {
            for v in c {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    for v in f.grid().nodes().iter().chain(f.grid().weights()) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn read_snapshot<R: Read>(input: &mut R, horizon: f64) -> Result<TimeField> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let d = read_u32(input)? as usize;
    let n = read_u32(input)? as usize;
    let rank = read_u32(input)? as usize;
    let symmetric = read_u32(input)? != 0;
    let count = read_u32(input)? as usize;
    let shape = Shape::new(d, n)?;
    if rank > 2 || count == 0 {
        return Err(Error::Format(format!("rank {rank}, {count} nodes")));
    }
    let nc = shape.ncomp(rank);
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let mut grid = PhysicalField::zeros(d, n, rank);
        for c in 0..nc {
            grid.comps[c] = read_f64s(input, shape.grid_len())?;
        }
        fields.push(SpectralField::from_physical(&grid, shape)?.with_symmetric(symmetric));
    }
    let nodes = read_f64s(input, count)?;
    let weights = read_f64s(input, count)?;
    let grid = TimeGrid::new(horizon, nodes)?;
    if grid.len() != count {
        return Err(Error::Format("time nodes not strictly increasing".into()));
    }
    if grid.weights().iter().zip(&weights).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Format("weights disagree with trapezoid rule".into()));
    }
    TimeField::new(grid, fields)
}

/// Component files of a state snapshot written under one prefix.
pub const STATE_PARTS: [&str; 5] = ["u", "theta", "p", "R", "S"];

#[derive(Serialize, Deserialize)]
struct StateMeta {
    alpha: f64,
    horizon: f64,
    intervals: IntervalSet,
}

fn part_path(prefix: &Path, part: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!(".{part}"));
    prefix.with_file_name(name)
}

/// Writes `<prefix>.{u,theta,p,R,S}.cifd` and `<prefix>.meta.json`.
pub fn write_state(prefix: &Path, state: &ReynoldsQuadruple) -> Result<()> {
    let fields = [&state.u, &state.theta, &state.p, &state.r, &state.s];
    for (part, f) in STATE_PARTS.iter().zip(fields) {
        let mut out = BufWriter::new(File::create(part_path(prefix, &format!("{part}.cifd")))?);
        write_snapshot(&mut out, f)?;
        out.flush()?;
    }
    let meta = StateMeta { alpha: state.alpha, horizon: state.horizon(), intervals: state.intervals.clone() };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(part_path(prefix, "meta.json"), text + "\n")?;
    Ok(())
}

pub fn read_state(prefix: &Path) -> Result<ReynoldsQuadruple> {
    let text = std::fs::read_to_string(part_path(prefix, "meta.json"))?;
    let meta: StateMeta = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let mut parts = Vec::with_capacity(5);
    for part in STATE_PARTS {
        let mut input = BufReader::new(File::open(part_path(prefix, &format!("{part}.cifd")))?);
        parts.push(read_snapshot(&mut input, meta.horizon)?);
    }
    let [u, theta, p, r, s]: [TimeField; 5] = parts.try_into().map_err(|_| Error::Format("missing part".into()))?;
    ReynoldsQuadruple::new(u, theta, p, r, s, meta.intervals, meta.alpha)
}
