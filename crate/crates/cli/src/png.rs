use std::path::Path;

use image::GrayImage;
use ldct_core::Image;

use crate::config::DisplayConfig;
use crate::error::CliError;

/// 8-bit gray levels of `x` after conversion to HU and clamping to the
/// display window.
pub fn window_levels(x: &Image, display: &DisplayConfig) -> Vec<u8> {
    let [lo, hi] = display.window_hu;
    x.values()
        .iter()
        .map(|mu| {
            let hu = 1000.0 * (mu - display.mu_water) / display.mu_water;
            let t = ((hu - lo) / (hi - lo)).clamp(0.0, 1.0);
            (t * 255.0).round() as u8
        })
        .collect()
}

pub fn write_png(x: &Image, display: &DisplayConfig, path: &Path) -> Result<(), CliError> {
    let img = GrayImage::from_raw(x.width() as u32, x.height() as u32, window_levels(x, display))
        .expect("buffer matches the image size");
    img.save(path)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}
