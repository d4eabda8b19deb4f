use anyhow::{Context, Result};
use wassreg::io::read_grid;
use wassreg::render::heatmap_image;
use wassreg::DensityGrid;

use crate::manifest::RunManifest;
use crate::RenderArgs;

pub fn run(a: &RenderArgs) -> Result<()> {
    let (spec, values) =
        read_grid(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let grid = DensityGrid::new(spec, values)?;
    let output = a
        .output
        .clone()
        .unwrap_or_else(|| a.input.with_extension("png"));
    heatmap_image(&grid)?
        .save(&output)
        .with_context(|| format!("writing {}", output.display()))?;
    // Leaves any run_manifest.txt of the source directory untouched.
    let mut manifest = RunManifest::new("render");
    manifest.input(&a.input)?;
    manifest.output(
        output
            .file_name()
            .map(Into::into)
            .unwrap_or_else(|| output.clone()),
    );
    manifest.write_to(output.with_extension("manifest.txt"))?;
    println!("{}", output.display());
    Ok(())
}
