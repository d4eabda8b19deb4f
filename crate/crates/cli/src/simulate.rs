use anyhow::{Context, Result};
use rayon::prelude::*;
use wassreg::sim::{
    run_1d, run_2d, runs_1d_csv, runs_2d_csv, sinkhorn_floor, summarize_1d, summarize_2d,
    table_csv, truth_path_2d, Region, ResponseFamily, SimConfig1d, SimConfig2d,
};
use wassreg::{KernelFamily, KernelSpec};

use crate::config::Settings;
use crate::files::ensure_dir;
use crate::manifest::RunManifest;
use crate::{Kind, SimulateArgs};

/// Flags that belong to the other simulation kind.
pub fn flag_conflict(a: &SimulateArgs) -> Option<String> {
    let only_2d = [
        ("--grid", a.grid.is_some()),
        ("--lambda", a.lambda.is_some()),
        ("--family", a.family.is_some()),
        ("--tolerance", a.tolerance.is_some()),
        ("--extrapolation", a.extrapolation),
        ("--local", a.local),
    ];
    match a.kind {
        Kind::OneD => only_2d
            .iter()
            .find(|(_, set)| *set)
            .map(|(f, _)| format!("{f} applies to 2d simulations only")),
        Kind::TwoD => a
            .quantile_points
            .is_some()
            .then(|| "--quantile-points applies to 1d simulations only".to_string()),
    }
}

struct Common {
    ns: Vec<usize>,
    mc: usize,
    seed: u64,
    kernel: KernelSpec,
    points_per_unit: usize,
}

fn common(s: &mut Settings, a: &SimulateArgs) -> Result<Common> {
    let ns = s.list("n", a.n.as_deref(), "50,100,150,200")?;
    let mc = s.get("mc", a.mc.as_deref(), 100usize)?;
    let seed = s.get("seed", a.seed.as_deref(), 1u64)?;
    let family: String = s.get("kernel", a.kernel.as_deref(), "epanechnikov".to_string())?;
    let h = s.get("bandwidth", a.bandwidth.as_deref(), 0.1f64)?;
    let kernel = KernelSpec::new(KernelFamily::parse(&family)?, vec![h])?;
    let points_per_unit = s.get("points-per-unit", a.points_per_unit.as_deref(), 21usize)?;
    if ns.is_empty() {
        anyhow::bail!("no sample sizes given");
    }
    Ok(Common {
        ns,
        mc,
        seed,
        kernel,
        points_per_unit,
    })
}

pub fn run(a: &SimulateArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let c = common(&mut s, a)?;
    let mut manifest = RunManifest::new(match a.kind {
        Kind::OneD => "simulate 1d",
        Kind::TwoD => "simulate 2d",
    });
    manifest.seed(c.seed);
    let (runs, table) = match a.kind {
        Kind::OneD => simulate_1d(&mut s, a, &c)?,
        Kind::TwoD => simulate_2d(&mut s, a, &c)?,
    };
    s.check_unused()?;
    manifest.config(s.resolved());
    if let Some(cfg) = &a.config {
        manifest.input(cfg)?;
    }

    ensure_dir(&a.out)?;
    for (n, text) in runs {
        let name = format!("runs_n{n}.csv");
        std::fs::write(a.out.join(&name), text).with_context(|| format!("writing {name}"))?;
        manifest.output(name);
    }
    std::fs::write(a.out.join("table.csv"), &table).context("writing table.csv")?;
    manifest.output("table.csv");
    manifest.write(&a.out)?;
    print!("{table}");
    Ok(())
}

fn simulate_1d(
    s: &mut Settings,
    a: &SimulateArgs,
    c: &Common,
) -> Result<(Vec<(usize, String)>, String)> {
    let points = s.get(
        "quantile-points",
        a.quantile_points.as_deref(),
        wassreg::ot1d::DEFAULT_QUANTILE_POINTS,
    )?;
    let configs =
        c.ns.iter()
            .map(|&n| {
                let cfg = SimConfig1d {
                    quantile_points: points,
                    kernel: c.kernel.clone(),
                    points_per_unit: c.points_per_unit,
                    ..SimConfig1d::new(n, c.mc, c.seed)
                };
                cfg.validate()
                    .with_context(|| format!("simulation with n = {n}"))?;
                Ok(cfg)
            })
            .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for cfg in &configs {
        log::info!("1d: n = {}, {} runs", cfg.n, cfg.monte_carlo);
        let runs = (0..cfg.monte_carlo as u64)
            .into_par_iter()
            .map(|r| run_1d(cfg, r))
            .collect::<wassreg::Result<Vec<_>>>()
            .with_context(|| format!("simulation with n = {}", cfg.n))?;
        rows.push(summarize_1d(cfg.n, &runs));
        out.push((cfg.n, runs_1d_csv(&runs)));
    }
    Ok((out, table_csv(&rows)))
}

fn simulate_2d(
    s: &mut Settings,
    a: &SimulateArgs,
    c: &Common,
) -> Result<(Vec<(usize, String)>, String)> {
    let base = SimConfig2d::new(c.ns[0], c.mc, c.seed);
    let grid = s.get("grid", a.grid.as_deref(), base.grid)?;
    let lambda = s.get("lambda", a.lambda.as_deref(), base.lambda)?;
    let family: String = s.get(
        "family",
        a.family.as_deref(),
        base.family.name().to_string(),
    )?;
    let family = ResponseFamily::parse(&family)?;
    let tolerance = s.get("tolerance", a.tolerance.as_deref(), base.tolerance)?;
    let extrapolation = s.switch("extrapolation", a.extrapolation)?;
    let local = s.switch("local", a.local)?;
    let configs =
        c.ns.iter()
            .map(|&n| {
                let cfg = SimConfig2d {
                    grid,
                    lambda,
                    family,
                    tolerance,
                    extrapolation,
                    local,
                    kernel: c.kernel.clone(),
                    points_per_unit: c.points_per_unit,
                    ..SimConfig2d::new(n, c.mc, c.seed)
                };
                cfg.validate()
                    .with_context(|| format!("simulation with n = {n}"))?;
                Ok(cfg)
            })
            .collect::<Result<Vec<_>>>()?;

    let first = &configs[0];
    let qi = Region::Interpolation.quadrature(first.points_per_unit)?;
    let floor = sinkhorn_floor(
        &truth_path_2d(first, Region::Interpolation)?,
        &qi,
        &first.metric(),
    )?;
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for cfg in &configs {
        log::info!("2d: n = {}, {} runs", cfg.n, cfg.monte_carlo);
        let runs = (0..cfg.monte_carlo as u64)
            .into_par_iter()
            .map(|r| run_2d(cfg, r))
            .collect::<wassreg::Result<Vec<_>>>()
            .with_context(|| format!("simulation with n = {}", cfg.n))?;
        rows.push(summarize_2d(cfg.n, &runs, floor));
        out.push((cfg.n, runs_2d_csv(&runs)));
    }
    Ok((out, table_csv(&rows)))
}
