//! Grid and response-list files shared by the subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use wassreg::io::{read_grid, write_grid};
use wassreg::{DiscreteMeasure, GridValues};

/// Reads a grid file as a probability measure (values are normalized).
pub fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    let (spec, values) = read_grid(path).with_context(|| format!("reading {}", path.display()))?;
    DiscreteMeasure::new(spec, values).with_context(|| format!("in {}", path.display()))
}

/// Writes a measure as density values (mass per cell volume).
pub fn write_density(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    let vol = m.spec().cell_volume();
    let values: Vec<f64> = m.mass().iter().map(|w| w / vol).collect();
    write_grid(path, m.spec(), &values).with_context(|| format!("writing {}", path.display()))
}

/// Response list: `x1[,x2...],file` with files relative to the list.
pub fn read_responses(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<PathBuf>)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .context("empty response list")?
        .split(',')
        .map(str::trim)
        .collect();
    let q = header.len().saturating_sub(1);
    if q == 0
        || header[q] != "file"
        || header[..q]
            .iter()
            .enumerate()
            .any(|(i, h)| *h != format!("x{}", i + 1))
    {
        bail!("response list header must be x1[,x2...],file");
    }
    let mut xs = Vec::new();
    let mut files = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != q + 1 {
            bail!("response list row {}: expected {} fields", i + 2, q + 1);
        }
        let x = cells[..q]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .with_context(|| format!("row {}: bad predictor '{c}'", i + 2))
            })
            .collect::<Result<Vec<_>>>()?;
        xs.push(x);
        files.push(base.join(cells[q]));
    }
    if xs.is_empty() {
        bail!("response list {} has no rows", path.display());
    }
    Ok((xs, files))
}

pub fn write_responses(path: &Path, xs: &[Vec<f64>], files: &[String]) -> Result<()> {
    let q = xs.first().map_or(1, Vec::len);
    let mut s: String = (1..=q).map(|i| format!("x{i},")).collect();
    s.push_str("file\n");
    for (x, f) in xs.iter().zip(files) {
        for v in x {
            let _ = write!(s, "{v:?},");
        }
        let _ = writeln!(s, "{f}");
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Parses predictor points: with `q = 1` commas separate points, otherwise
/// `;` separates points and commas separate coordinates.
pub fn parse_points(s: &str, q: usize) -> Result<Vec<Vec<f64>>> {
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .with_context(|| format!("bad number '{}'", v.trim()))
    };
    if q == 1 {
        return s
            .split([',', ';'])
            .filter(|p| !p.trim().is_empty())
            .map(|p| Ok(vec![parse(p)?]))
            .collect();
    }
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let v = p.split(',').map(parse).collect::<Result<Vec<_>>>()?;
            if v.len() != q {
                bail!(
                    "point '{p}' has {} coordinates, the model has {q} predictors",
                    v.len()
                );
            }
            Ok(v)
        })
        .collect()
}

/// Creates `dir` if needed.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
