//! Segmentation ingestion formats.
//!
//! Per keyframe: a 16-bit single-channel PNG with the argmax class label per
//! pixel, a 16-bit single-channel PNG with the raw instance id per pixel, and
//! optionally a dense probability file. The probability file is binary:
//! header `W, H, C` as 32-bit little-endian unsigned integers, then
//! `W * H * C` 32-bit little-endian floats, row-major with class fastest.
//!
//! When only the label image is supplied the distribution is synthesized as
//! one-hot with confidence alpha, remainder spread uniformly.

use super::IoError;
use crate::semantics::{InstanceMap, ProbabilityMap};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{ImageBuffer, Luma};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn write_label_png(path: &Path, labels: &[u16], width: u32, height: u32) -> Result<(), IoError> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_vec(width, height, labels.to_vec())
            .expect("label buffer matches dimensions");
    img.save(path)
        .map_err(|e| IoError::Image(e, path.display().to_string()))
}

pub fn read_label_png(path: &Path) -> Result<(Vec<u16>, u32, u32), IoError> {
    let img = image::open(path)
        .map_err(|e| IoError::Image(e, path.display().to_string()))?
        .into_luma16();
    let (w, h) = img.dimensions();
    Ok((img.into_raw(), w, h))
}

pub fn write_instance_png(path: &Path, imap: &InstanceMap) -> Result<(), IoError> {
    let data: Vec<u16> = imap
        .data()
        .iter()
        .map(|&id| u16::try_from(id).unwrap_or(u16::MAX))
        .collect();
    write_label_png(path, &data, imap.width(), imap.height())
}

pub fn read_instance_png(path: &Path) -> Result<InstanceMap, IoError> {
    let (data, w, h) = read_label_png(path)?;
    InstanceMap::new(w, h, data.into_iter().map(u32::from).collect())
        .map_err(|e| IoError::parse(path, e.to_string()))
}

pub fn write_probability_bin(path: &Path, pmap: &ProbabilityMap) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let err = |e| IoError::io(path, e);
    w.write_u32::<LittleEndian>(pmap.width()).map_err(err)?;
    w.write_u32::<LittleEndian>(pmap.height()).map_err(err)?;
    w.write_u32::<LittleEndian>(pmap.num_classes() as u32).map_err(err)?;
    for &v in pmap.raw_data() {
        w.write_f32::<LittleEndian>(v as f32).map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_probability_bin(path: &Path) -> Result<ProbabilityMap, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut r = BufReader::new(file);
    let width = r.read_u32::<LittleEndian>().map_err(|e| IoError::io(path, e))?;
    let height = r.read_u32::<LittleEndian>().map_err(|e| IoError::io(path, e))?;
    let classes = r.read_u32::<LittleEndian>().map_err(|e| IoError::io(path, e))? as usize;
    let n = width as usize * height as usize * classes;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.read_f32::<LittleEndian>().map_err(|e| IoError::io(path, e))? as f64);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| IoError::io(path, e))? != 0 {
        return Err(IoError::parse(path, "trailing bytes after probability data"));
    }
    ProbabilityMap::from_raw(width, height, classes, data)
        .map_err(|e| IoError::parse(path, e.to_string()))
}
