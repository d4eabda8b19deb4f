//! `fit` and `predict`. A model directory holds `model.txt` (resolved
//! estimator settings), copies of the response grids and `responses.csv`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use wassreg::io::read_grid;
use wassreg::{
    quantile_from_density, CostUnits, DensityGrid, DiscreteMeasure, FittedModel, GridSpec,
    GridValues, KernelFamily, KernelSpec, Mode, Prediction, PredictorSample, Responses,
    SinkhornSettings, Solver,
};

use crate::config::Settings;
use crate::files::{ensure_dir, parse_points, read_responses, write_density, write_responses};
use crate::manifest::RunManifest;
use crate::{EstimatorFlags, FitArgs, PredictArgs};

pub const MODEL_FILE: &str = "model.txt";
const LIST_FILE: &str = "responses.csv";

struct Estimator {
    mode: Mode,
    solver: Solver,
    quantile_points: usize,
}

/// Resolves every estimator key so that settings unused by the chosen mode
/// or solver still round-trip through `model.txt`.
fn estimator(
    s: &mut Settings,
    f: &EstimatorFlags,
    response_dim: usize,
    q: usize,
) -> Result<Estimator> {
    let mode: String = s.get("mode", f.mode.as_deref(), "global".to_string())?;
    let family: String = s.get("kernel", f.kernel.as_deref(), "gaussian".to_string())?;
    let family = KernelFamily::parse(&family)?;
    let bandwidth: Option<String> = s.opt("bandwidth", f.bandwidth.as_deref())?;
    let default_solver = if response_dim == 1 {
        "exact1d"
    } else {
        "sinkhorn"
    };
    let solver: String = s.get("solver", f.solver.as_deref(), default_solver.to_string())?;
    let d = SinkhornSettings::default();
    let lambda = s.get("lambda", f.lambda.as_deref(), d.lambda)?;
    let units: String = s.get("units", f.units.as_deref(), "grid".to_string())?;
    let tolerance = s.get("tolerance", f.tolerance.as_deref(), d.tolerance)?;
    let max_iters = s.get("max-iters", f.max_iters.as_deref(), d.max_iters)?;
    let quantile_points = s.get(
        "quantile-points",
        f.quantile_points.as_deref(),
        wassreg::ot1d::DEFAULT_QUANTILE_POINTS,
    )?;

    let mode = match mode.as_str() {
        "global" => Mode::Global,
        "local" => {
            let Some(h) = bandwidth else {
                bail!("local mode needs --bandwidth (one value per predictor)");
            };
            let mut h: Vec<f64> = crate::config::parse_list(&h)?;
            if h.len() == 1 && q > 1 {
                h = vec![h[0]; q];
            }
            Mode::Local(KernelSpec::new(family, h)?)
        }
        other => bail!("unknown mode '{other}', expected global or local"),
    };
    let units = match units.as_str() {
        "grid" => CostUnits::GridCell,
        "physical" => CostUnits::Physical,
        other => bail!("unknown units '{other}', expected grid or physical"),
    };
    let solver = match solver.as_str() {
        "exact1d" => Solver::Exact1d,
        "sinkhorn" => {
            let st = SinkhornSettings {
                lambda,
                tolerance,
                max_iters,
                units,
                ..d
            };
            st.validate()?;
            Solver::Sinkhorn(st)
        }
        other => bail!("unknown solver '{other}', expected exact1d or sinkhorn"),
    };
    Ok(Estimator {
        mode,
        solver,
        quantile_points,
    })
}

struct Loaded {
    xs: Vec<Vec<f64>>,
    files: Vec<PathBuf>,
    grids: Vec<(GridSpec, Vec<f64>)>,
}

fn load(list: &Path) -> Result<Loaded> {
    let (xs, files) = read_responses(list)?;
    let grids = files
        .iter()
        .map(|f| read_grid(f).with_context(|| format!("reading {}", f.display())))
        .collect::<Result<Vec<_>>>()?;
    let spec = &grids[0].0;
    if let Some(k) = grids.iter().position(|g| &g.0 != spec) {
        bail!(
            "{} uses a different grid than {}",
            files[k].display(),
            files[0].display()
        );
    }
    Ok(Loaded { xs, files, grids })
}

fn build(data: &Loaded, est: &Estimator) -> Result<FittedModel> {
    let responses = match est.solver {
        Solver::Exact1d => Responses::Quantiles(
            data.grids
                .iter()
                .map(|(spec, v)| {
                    quantile_from_density(
                        &DensityGrid::new(spec.clone(), v.clone())?,
                        est.quantile_points,
                    )
                })
                .collect::<wassreg::Result<Vec<_>>>()?,
        ),
        Solver::Sinkhorn(_) => Responses::Grid(
            data.grids
                .iter()
                .map(|(spec, v)| DiscreteMeasure::new(spec.clone(), v.clone()))
                .collect::<wassreg::Result<Vec<_>>>()?,
        ),
    };
    let sample = PredictorSample::new(data.xs.clone())?;
    Ok(FittedModel::new(
        sample,
        responses,
        est.mode.clone(),
        est.solver,
    )?)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let data = load(&a.responses)?;
    let est = estimator(
        &mut s,
        &a.estimator,
        data.grids[0].0.dim(),
        data.xs[0].len(),
    )?;
    s.check_unused()?;
    build(&data, &est)?;

    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("fit");
    manifest.config(s.resolved());
    manifest.input(&a.responses)?;
    if let Some(cfg) = &a.config {
        manifest.input(cfg)?;
    }
    let mut names = Vec::new();
    for (k, f) in data.files.iter().enumerate() {
        manifest.input(f)?;
        let name = format!("response_{k:03}.csv");
        std::fs::copy(f, a.out.join(&name)).with_context(|| format!("copying {}", f.display()))?;
        manifest.output(name.clone());
        names.push(name);
    }
    write_responses(&a.out.join(LIST_FILE), &data.xs, &names)?;
    manifest.output(LIST_FILE);
    std::fs::write(a.out.join(MODEL_FILE), s.to_text()).context("writing model.txt")?;
    manifest.output(MODEL_FILE);
    manifest.write(&a.out)?;
    println!(
        "model with {} responses written to {}",
        names.len(),
        a.out.display()
    );
    Ok(())
}

fn quantile_csv(values: &[f64]) -> String {
    let p = values.len();
    let mut s = String::from("level,value\n");
    for (j, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{:?},{:?}", j as f64 / (p - 1) as f64, v);
    }
    s
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let stored = Settings::load(Some(&a.model.join(MODEL_FILE)))?;
    let mut s = Settings::load(a.config.as_deref())?.with_fallback(stored);
    let data = load(&a.model.join(LIST_FILE))?;
    let spec = data.grids[0].0.clone();
    let q = data.xs[0].len();
    let est = estimator(&mut s, &a.estimator, spec.dim(), q)?;
    s.check_unused()?;
    let model = build(&data, &est)?;
    let xs = parse_points(&a.x, q)?;
    if xs.is_empty() {
        bail!("no predictor values given");
    }
    let preds = model.predict_path_warm(&xs)?;

    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("predict");
    manifest.config(s.resolved());
    manifest.input(&a.model.join(MODEL_FILE))?;
    manifest.input(&a.model.join(LIST_FILE))?;
    if let Some(cfg) = &a.config {
        manifest.input(cfg)?;
    }
    let mut names = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        let name = format!("pred_{i:03}.csv");
        let measure = match p {
            Prediction::Measure(m) => m.clone(),
            Prediction::Quantile(c) => {
                let qname = format!("pred_{i:03}_quantiles.csv");
                std::fs::write(a.out.join(&qname), quantile_csv(c.values()))?;
                manifest.output(qname);
                c.to_measure(&spec)?
            }
        };
        write_density(&a.out.join(&name), &measure)?;
        if a.render && spec.dim() == 2 {
            let png = format!("pred_{i:03}.png");
            render_png(&measure, &a.out.join(&png))?;
            manifest.output(png);
        }
        manifest.output(name.clone());
        names.push(name);
    }
    if a.render && spec.dim() != 2 {
        log::warn!("--render skipped: responses are {}-dimensional", spec.dim());
    }
    write_responses(&a.out.join("predictions.csv"), &xs, &names)?;
    manifest.output("predictions.csv");
    manifest.write(&a.out)?;
    println!("{} predictions written to {}", names.len(), a.out.display());
    Ok(())
}

/// Heat map of the density of `m`.
pub fn render_png(m: &DiscreteMeasure, path: &Path) -> Result<()> {
    let vol = m.spec().cell_volume();
    let density = DensityGrid::new(m.spec().clone(), m.mass().iter().map(|w| w / vol).collect())?;
    wassreg::render::heatmap_image(&density)?
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}
