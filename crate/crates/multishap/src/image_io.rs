//! PNG output with normalization metadata, and base image loading.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use multishap_core::heatmap::Raster;

use crate::error::{Error, Result};
use crate::manifest::write_atomic;

pub const COLORMAP: &str = "diverging blue-white-red, missing cells gray";
pub const NORMALIZATION: &str = "symmetric about zero at max |value|";

/// Encodes an RGBA raster as PNG, recording `text` entries as tEXt chunks.
pub fn encode_png(raster: &Raster, text: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, raster.width as u32, raster.height as u32);
    encoder.set_color(png::ColorType::Rgba);
    encoder.set_depth(png::BitDepth::Eight);
    for (k, v) in text {
        encoder.add_text_chunk(k.clone(), v.clone()).map_err(|e| Error::Image(e.to_string()))?;
    }
    let mut writer = encoder.write_header().map_err(|e| Error::Image(e.to_string()))?;
    writer.write_image_data(&raster.pixels).map_err(|e| Error::Image(e.to_string()))?;
    writer.finish().map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

/// Heatmap PNG with its normalization bound in the metadata.
pub fn write_heatmap(path: &Path, raster: &Raster, bound: f64, scope: &str) -> Result<()> {
    let text = BTreeMap::from([
        ("multishap:bound".to_string(), format!("{bound}")),
        ("multishap:colormap".to_string(), COLORMAP.to_string()),
        ("multishap:normalization".to_string(), format!("{NORMALIZATION}, {scope}")),
    ]);
    write_atomic(path, &encode_png(raster, &text)?)
}

/// tEXt entries of a PNG.
pub fn png_text(bytes: &[u8]) -> Result<BTreeMap<String, String>> {
    let reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(|e| Error::Image(e.to_string()))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|c| (c.keyword.clone(), c.text.clone()))
        .collect())
}

/// Loads any PNG or JPEG as an RGBA raster.
pub fn read_image(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?.to_rgba8();
    let (w, h) = img.dimensions();
    Ok(Raster::new(w as usize, h as usize, img.into_raw())?)
}

pub fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?
        .to_rgba8();
    let (w, h) = img.dimensions();
    Ok(Raster::new(w as usize, h as usize, img.into_raw())?)
}
