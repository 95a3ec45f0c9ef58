use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::field::Field;
use crate::error::{invalid, Error, Result};

fn image_error(e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::InvalidArgument(other.to_string()),
    }
}

/// Writes an 8-bit binary PGM; 0 maps to black unless `invert` is set.
/// Image rows follow field rows.
pub fn write_pgm(field: &Field, path: impl AsRef<Path>, invert: bool) -> Result<()> {
    if field.rows == 0 || field.cols == 0 {
        return invalid("cannot export an empty field");
    }
    let pixels: Vec<u8> = field
        .values
        .iter()
        .map(|&v| {
            let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            if invert {
                255 - q
            } else {
                q
            }
        })
        .collect();
    let out = BufWriter::new(File::create(path)?);
    PnmEncoder::new(out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&pixels, field.cols as u32, field.rows as u32, ExtendedColorType::L8)
        .map_err(image_error)
}

/// Reads a PGM back into values in [0, 1].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Field> {
    let img = image::open(path).map_err(image_error)?.into_luma8();
    let (w, h) = img.dimensions();
    let values = img.into_raw().into_iter().map(|p| p as f64 / 255.0).collect();
    Field::new(h as usize, w as usize, values)
}
