use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use wassreg::io::write_grid;
use wassreg::{
    bin_by_predictor, kde_on_grid, Axis, Bandwidth, GridSpec, GridValues, RawObservations,
};

use crate::config::{parse_list, Settings};
use crate::files::{ensure_dir, write_responses};
use crate::manifest::RunManifest;
use crate::IngestArgs;

/// Relative padding of the default grid around the observed responses.
const PAD: f64 = 0.1;

fn parse_bandwidth(s: &str) -> Result<Bandwidth> {
    Ok(match s {
        "silverman" => Bandwidth::Silverman,
        "sheather-jones" | "sj" => Bandwidth::SheatherJones,
        other => Bandwidth::Explicit(
            parse_list(other).context("bandwidth must be silverman, sheather-jones or numbers")?,
        ),
    })
}

fn observed_box(data: &RawObservations) -> (Vec<f64>, Vec<f64>) {
    let d = data.response_dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in data.points() {
        for a in 0..d {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    for a in 0..d {
        let pad = PAD * (hi[a] - lo[a]).max(1e-12);
        lo[a] -= pad;
        hi[a] += pad;
    }
    (lo, hi)
}

pub fn run(a: &IngestArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let mut data = RawObservations::read(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    if s.switch("min-range", a.min_range)? {
        data = data.min_range_transform()?;
    }
    let d = data.response_dim();
    let bins = s.get("bins", a.bins.as_deref(), 20usize)?;
    let range = match s.opt::<String>("range", a.range.as_deref())? {
        Some(r) => match parse_list::<f64>(&r)?.as_slice() {
            [lo, hi] => Some((*lo, *hi)),
            _ => bail!("--range expects lo,hi"),
        },
        None => None,
    };
    let count = s.get("grid", a.grid.as_deref(), 51usize)?;
    let (mut lower, mut upper) = observed_box(&data);
    if let Some(v) = s.opt::<String>("lower", a.lower.as_deref())? {
        lower = parse_list(&v)?;
    }
    if let Some(v) = s.opt::<String>("upper", a.upper.as_deref())? {
        upper = parse_list(&v)?;
    }
    if lower.len() != d || upper.len() != d {
        bail!("--lower and --upper need {d} values");
    }
    let bw: String = s.get("bandwidth", a.bandwidth.as_deref(), "silverman".to_string())?;
    let bandwidth = parse_bandwidth(&bw)?;
    s.check_unused()?;
    s.note("lower", join(&lower));
    s.note("upper", join(&upper));

    let spec = GridSpec::new(
        lower
            .iter()
            .zip(&upper)
            .map(|(&l, &u)| Axis::new(l, u, count))
            .collect(),
    )?;
    let groups = bin_by_predictor(&data, bins, range)?;
    let densities = groups
        .par_iter()
        .map(|b| kde_on_grid(&b.points, &spec, &bandwidth))
        .collect::<wassreg::Result<Vec<_>>>()?;

    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("ingest");
    manifest.config(s.resolved());
    manifest.input(&a.input)?;
    if let Some(cfg) = &a.config {
        manifest.input(cfg)?;
    }
    let mut xs = Vec::new();
    let mut names = Vec::new();
    for (k, (b, dens)) in groups.iter().zip(&densities).enumerate() {
        let name = format!("bin_{k:03}.csv");
        write_grid(a.out.join(&name), &spec, dens.values())?;
        log::info!("bin {k}: centre {}, {} points", b.centre, b.points.len());
        xs.push(vec![b.centre]);
        manifest.output(name.clone());
        names.push(name);
    }
    write_responses(&a.out.join("responses.csv"), &xs, &names)?;
    manifest.output("responses.csv");
    manifest.write(&a.out)?;
    println!("{} bins written to {}", names.len(), a.out.display());
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}
