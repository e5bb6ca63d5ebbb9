//! 8-bit RGB PNG files.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use fishdet_core::synth::RgbImage;

use crate::Error;

pub fn write_png(path: &Path, image: &RgbImage) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width, image.height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    w.write_image_data(&image.pixels)
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))
}

/// Reads an 8-bit RGB or RGBA PNG; alpha is dropped.
pub fn read_png(path: &Path) -> Result<RgbImage, Error> {
    let png_err = |e: &dyn std::fmt::Display| Error::Png(format!("{}: {e}", path.display()));
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| png_err(&e))?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err(&"image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(&e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(&"only 8-bit images are supported"));
    }
    let data = &buf[..info.buffer_size()];
    let pixels = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
        other => return Err(png_err(&format!("unsupported color type {other:?}"))),
    };
    Ok(RgbImage::from_raw(info.width, info.height, pixels)?)
}
