use anyhow::{bail, Context, Result};
use wassreg::{mccann_path, Coupling, GridValues, SinkhornSettings};

use crate::config::{parse_list, Settings};
use crate::files::{ensure_dir, read_measure, write_density};
use crate::manifest::RunManifest;
use crate::model::render_png;
use crate::GeodesicArgs;

pub fn run(a: &GeodesicArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let ts: Vec<f64> = parse_list(&a.t).context("--t expects comma separated times")?;
    if ts.is_empty() {
        bail!("no interpolation times given");
    }
    let coupling: String = s.get("coupling", a.coupling.as_deref(), "auto".to_string())?;
    let lambda = s.get(
        "lambda",
        a.lambda.as_deref(),
        SinkhornSettings::default().lambda,
    )?;
    s.check_unused()?;
    let st = SinkhornSettings::with_lambda(lambda);
    st.validate()?;
    let coupling = match coupling.as_str() {
        "auto" => Coupling::Auto(st),
        "exact" => Coupling::Exact,
        "sinkhorn" => Coupling::Sinkhorn(st),
        other => bail!("unknown coupling '{other}', expected auto, exact or sinkhorn"),
    };
    let nu0 = read_measure(&a.a)?;
    let nu1 = read_measure(&a.b)?;
    let path = mccann_path(&nu0, &nu1, &ts, coupling)?;

    ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new("geodesic");
    manifest.config(s.resolved());
    manifest.input(&a.a)?;
    manifest.input(&a.b)?;
    if let Some(cfg) = &a.config {
        manifest.input(cfg)?;
    }
    let mut index = String::from("t,file\n");
    for (i, (t, m)) in ts.iter().zip(&path).enumerate() {
        let name = format!("geodesic_{i:03}.csv");
        write_density(&a.out.join(&name), m)?;
        if a.render && m.spec().dim() == 2 {
            let png = format!("geodesic_{i:03}.png");
            render_png(m, &a.out.join(&png))?;
            manifest.output(png);
        }
        index.push_str(&format!("{t:?},{name}\n"));
        manifest.output(name);
    }
    std::fs::write(a.out.join("geodesic.csv"), index).context("writing geodesic.csv")?;
    manifest.output("geodesic.csv");
    manifest.write(&a.out)?;
    println!("{} measures written to {}", ts.len(), a.out.display());
    Ok(())
}
