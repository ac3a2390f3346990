//! Log-magnitude spectrogram images. Panels are stacked top to bottom and
//! share one color scale.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;

use crate::error::{PaecError, Result};
use crate::signal::Spectrogram;

/// Magnitudes below this level (dB re 1) are drawn at the floor color.
pub const FLOOR_DB: f64 = -80.0;
/// Gap between panels, in pixels.
const GAP: usize = 4;

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(png_err)?;
            w.write_image_data(&self.rgb).map_err(png_err)?;
        }
        Ok(buf)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&self.rgb).map_err(png_err)?;
        Ok(())
    }
}

fn png_err(e: png::EncodingError) -> PaecError {
    PaecError::Io(std::io::Error::other(e))
}

/// `20 log10 |X|` per bin, floored at [`FLOOR_DB`].
pub fn log_magnitude_db(spec: &Spectrogram) -> Array2<f64> {
    spec.bins.mapv(|c| {
        let m = c.norm();
        if m > 0.0 {
            (20.0 * m.log10()).max(FLOOR_DB)
        } else {
            FLOOR_DB
        }
    })
}

// Dark blue through green to yellow.
const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    }
    out
}

/// One panel per spectrogram, low frequencies at the bottom of each panel.
/// Time runs left to right, one pixel per frame.
pub fn render(panels: &[&Spectrogram]) -> Result<Image> {
    if panels.is_empty() {
        return Err(PaecError::param("nothing to plot"));
    }
    let db: Vec<Array2<f64>> = panels.iter().map(|s| log_magnitude_db(s)).collect();
    let top = db.iter().flat_map(|a| a.iter().copied()).fold(FLOOR_DB, f64::max);
    let range = (top - FLOOR_DB).max(1e-9);
    let width = panels.iter().map(|s| s.frames()).max().unwrap_or(0).max(1);
    let heights: Vec<usize> = panels.iter().map(|s| s.n_bins()).collect();
    let height = heights.iter().sum::<usize>() + GAP * (panels.len() - 1);
    let floor = colormap(0.0);
    let mut rgb = vec![255u8; 3 * width * height];
    let mut y0 = 0;
    for (a, &h) in db.iter().zip(&heights) {
        for row in 0..h {
            let bin = h - 1 - row;
            for x in 0..width {
                let c = if x < a.nrows() {
                    colormap((a[[x, bin]] - FLOOR_DB) / range)
                } else {
                    floor
                };
                let i = 3 * ((y0 + row) * width + x);
                rgb[i..i + 3].copy_from_slice(&c);
            }
        }
        y0 += h + GAP;
    }
    Ok(Image { width, height, rgb })
}

/// Number of panels in an image rendered from spectrograms of `n_bins` bins.
pub fn panel_count(img: &Image, n_bins: usize) -> usize {
    (img.height + GAP) / (n_bins + GAP)
}
