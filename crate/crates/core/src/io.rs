//! Plain-text grid files.
//!
//! The first line is `dim,counts...,lowers...,uppers...`; every following
//! line holds one value in row-major order. Values are written with the
//! shortest representation that round-trips, so a read after a write is
//! bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::measures::{Axis, GridSpec};

pub fn format_grid(spec: &GridSpec, values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24 + 64);
    let axes = spec.axes();
    let mut header = vec![axes.len().to_string()];
    header.extend(axes.iter().map(|a| a.count.to_string()));
    header.extend(axes.iter().map(|a| fmt_f64(a.lower)));
    header.extend(axes.iter().map(|a| fmt_f64(a.upper)));
    out.push_str(&header.join(","));
    out.push('\n');
    for v in values {
        let _ = writeln!(out, "{}", fmt_f64(*v));
    }
    out
}

pub fn parse_grid(text: &str) -> Result<(GridSpec, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty grid file".into()))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim: usize = fields[0]
        .parse()
        .map_err(|_| Error::Parse(format!("bad dimension field '{}'", fields[0])))?;
    if dim == 0 || fields.len() != 1 + 3 * dim {
        return Err(Error::Parse(format!(
            "header has {} fields, expected {}",
            fields.len(),
            1 + 3 * dim
        )));
    }
    let mut axes = Vec::with_capacity(dim);
    for a in 0..dim {
        let count: usize = fields[1 + a]
            .parse()
            .map_err(|_| Error::Parse(format!("bad count '{}'", fields[1 + a])))?;
        let lower = parse_f64(fields[1 + dim + a])?;
        let upper = parse_f64(fields[1 + 2 * dim + a])?;
        axes.push(Axis::new(lower, upper, count));
    }
    let spec = GridSpec::new(axes)?;
    let values = lines
        .map(|l| parse_f64(l.trim()))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != spec.len() {
        return Err(Error::LengthMismatch {
            expected: spec.len(),
            got: values.len(),
        });
    }
    Ok((spec, values))
}

pub fn write_grid(path: impl AsRef<Path>, spec: &GridSpec, values: &[f64]) -> Result<()> {
    fs::write(path, format_grid(spec, values))?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<(GridSpec, Vec<f64>)> {
    parse_grid(&fs::read_to_string(path)?)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Parse(format!("not a number: '{s}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let spec = GridSpec::new(vec![Axis::new(30.0, 130.0, 3), Axis::new(0.1, 0.7, 2)]).unwrap();
        let values = vec![0.1, 1.0 / 3.0, 0.0, 1e-300, 2.5e10, std::f64::consts::PI];
        let text = format_grid(&spec, &values);
        assert!(text.starts_with("2,3,2,30.0,0.1,130.0,0.7\n"));
        let (s2, v2) = parse_grid(&text).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(v2, values);
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(parse_grid("1,3,0,1\n0.5\n0.5\n").is_err());
        assert!(parse_grid("1,3,0\n0.5\n").is_err());
        assert!(parse_grid("").is_err());
    }
}
