//! Heat-map rendering of two-dimensional grids.
//!
//! One pixel per grid node: axis 0 runs left to right and axis 1 bottom to
//! top. A CSV copy of the grid is written next to the image.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::io::write_grid;
use crate::measures::GridValues;

// Anchors of a perceptually ordered dark-to-bright colour ramp.
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Maps `s` in `[0, 1]` to a colour.
pub fn colour(s: f64) -> Rgb<u8> {
    let s = if s.is_finite() {
        s.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let pos = s * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let mut px = [0u8; 3];
    for c in 0..3 {
        px[c] = (RAMP[i][c] * (1.0 - f) + RAMP[i + 1][c] * f).round() as u8;
    }
    Rgb(px)
}

/// Builds the image without touching the filesystem.
pub fn heatmap_image<G: GridValues + ?Sized>(grid: &G) -> Result<RgbImage> {
    let spec = grid.spec();
    if spec.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: spec.dim(),
        });
    }
    let (nx, ny) = (spec.axes()[0].count, spec.axes()[1].count);
    let values = grid.values();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    // Scale from zero so that a constant grid renders as a single colour.
    let lo = lo.min(0.0);
    let range = hi - lo;
    let mut img = RgbImage::new(nx as u32, ny as u32);
    for i in 0..nx {
        for j in 0..ny {
            let v = values[i * ny + j];
            let s = if range > 0.0 { (v - lo) / range } else { 0.0 };
            img.put_pixel(i as u32, (ny - 1 - j) as u32, colour(s));
        }
    }
    Ok(img)
}

/// Writes `path` as a PNG and the grid values to `path` with a `.csv`
/// extension. Returns the CSV path.
pub fn render_heatmap<G: GridValues + ?Sized>(grid: &G, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let img = heatmap_image(grid)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    let csv = path.with_extension("csv");
    write_grid(&csv, grid.spec(), grid.values())?;
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{discretize, DensityGrid, DiscreteMeasure, GridSpec};

    fn distinct(img: &RgbImage) -> usize {
        let mut px: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
        px.sort();
        px.dedup();
        px.len()
    }

    #[test]
    fn point_mass_is_single_hot_pixel() {
        let spec = GridSpec::cube(2, 0.0, 1.0, 7).unwrap();
        let k = spec.ravel(&[2, 5]);
        let img = heatmap_image(&DiscreteMeasure::point_mass(spec, k)).unwrap();
        let hot = colour(1.0);
        let hits: Vec<(u32, u32)> = img
            .enumerate_pixels()
            .filter(|(_, _, p)| **p == hot)
            .map(|(x, y, _)| (x, y))
            .collect();
        assert_eq!(hits, vec![(2, 6 - 5)]);
        assert_eq!(distinct(&img), 2);
    }

    #[test]
    fn uniform_is_constant() {
        let spec = GridSpec::cube(2, 0.0, 1.0, 5).unwrap();
        let img = heatmap_image(&DiscreteMeasure::uniform(spec)).unwrap();
        assert_eq!(distinct(&img), 1);
    }

    #[test]
    fn gaussian_peak_at_mean_node() {
        let spec = GridSpec::cube(2, 0.0, 1.0, 21).unwrap();
        let (mx, my) = (0.33, 0.71);
        let dens = DensityGrid::from_fn(spec.clone(), |p| {
            (-((p[0] - mx).powi(2) + (p[1] - my).powi(2)) / 0.02).exp()
        })
        .unwrap();
        let r = discretize(&dens).unwrap();
        let img = heatmap_image(&r).unwrap();
        let k = spec.nearest(&[mx, my]);
        let idx = spec.unravel(k);
        assert_eq!(r.argmax(), k);
        assert_eq!(
            *img.get_pixel(idx[0] as u32, (20 - idx[1]) as u32),
            colour(1.0)
        );
    }

    #[test]
    fn rejects_one_dimensional() {
        let spec = GridSpec::line(0.0, 1.0, 5).unwrap();
        assert!(heatmap_image(&DiscreteMeasure::uniform(spec)).is_err());
    }

    #[test]
    fn writes_png_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::cube(2, 0.0, 1.0, 4).unwrap();
        let m = DiscreteMeasure::uniform(spec.clone());
        let csv = render_heatmap(&m, dir.path().join("m.png")).unwrap();
        assert!(dir.path().join("m.png").exists());
        let (s2, v2) = crate::io::read_grid(csv).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(v2, m.mass());
    }
}
