//! Grayscale slice rendering for quick visual checks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::RealVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for SliceAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(SliceAxis::X),
            "y" | "Y" => Ok(SliceAxis::Y),
            "z" | "Z" => Ok(SliceAxis::Z),
            other => Err(Error::arg(format!("axis must be x, y or z, got {other:?}"))),
        }
    }
}

/// A 2D slice in row-major order, width fastest.
#[derive(Debug, Clone)]
pub struct Slice2d {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Extract the plane at `index` along `axis`: X slices are (y, z) images,
/// Y slices (x, z), Z slices (x, y).
pub fn extract_slice(vol: &RealVolume, axis: SliceAxis, index: usize) -> Result<Slice2d> {
    let d = vol.dims();
    let limit = match axis {
        SliceAxis::X => d.nx,
        SliceAxis::Y => d.ny,
        SliceAxis::Z => d.nz,
    };
    if index >= limit {
        return Err(Error::arg(format!(
            "slice index {index} out of range for axis extent {limit}"
        )));
    }
    let (width, height) = match axis {
        SliceAxis::X => (d.ny, d.nz),
        SliceAxis::Y => (d.nx, d.nz),
        SliceAxis::Z => (d.nx, d.ny),
    };
    let mut data = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            let v = match axis {
                SliceAxis::X => vol.get(index, i, j),
                SliceAxis::Y => vol.get(i, index, j),
                SliceAxis::Z => vol.get(i, j, index),
            };
            data.push(v);
        }
    }
    Ok(Slice2d { width, height, data })
}

/// |a - b| scaled for visualization (the usual error-figure convention).
pub fn error_magnitude(a: &RealVolume, b: &RealVolume, scale: f64) -> Result<RealVolume> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "volume dims {} differ from {}",
            a.dims(),
            b.dims()
        )));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::arg(format!("error scale {scale} must be positive")));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() * scale)
        .collect();
    Ok(RealVolume::new(a.dims(), data)?)
}

/// Min-max windowed 8-bit pixels. A constant slice degenerates the window:
/// all-zero maps to black, any other constant to mid gray.
pub fn window_to_u8(slice: &Slice2d) -> Vec<u8> {
    let lo = slice.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slice.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        slice
            .data
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    } else {
        let fill = if lo == 0.0 { 0 } else { 128 };
        vec![fill; slice.data.len()]
    }
}

/// Write the slice as a grayscale PNG.
pub fn write_png(path: &Path, slice: &Slice2d) -> Result<()> {
    let pixels = window_to_u8(slice);
    let img = image::GrayImage::from_raw(slice.width as u32, slice.height as u32, pixels)
        .ok_or_else(|| Error::arg("slice dims do not match pixel buffer"))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("PNG encode failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    fn counting(dims: Dims) -> RealVolume {
        RealVolume::new(dims, (0..dims.n()).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn slice_extraction_picks_the_right_plane() {
        let d = Dims::new(3, 4, 5).unwrap();
        let v = counting(d);
        let sz = extract_slice(&v, SliceAxis::Z, 2).unwrap();
        assert_eq!((sz.width, sz.height), (3, 4));
        assert_eq!(sz.data[0], v.get(0, 0, 2));
        assert_eq!(sz.data[1], v.get(1, 0, 2));
        assert_eq!(sz.data[3], v.get(0, 1, 2));
        let sx = extract_slice(&v, SliceAxis::X, 1).unwrap();
        assert_eq!((sx.width, sx.height), (4, 5));
        assert_eq!(sx.data[4 * 3 + 2], v.get(1, 2, 3));
        let sy = extract_slice(&v, SliceAxis::Y, 3).unwrap();
        assert_eq!((sy.width, sy.height), (3, 5));
        assert_eq!(sy.data[3 * 4 + 1], v.get(1, 3, 4));
    }

    #[test]
    fn slice_index_out_of_range_rejected() {
        let v = counting(Dims::new(3, 4, 5).unwrap());
        assert!(extract_slice(&v, SliceAxis::Z, 5).is_err());
        assert!(extract_slice(&v, SliceAxis::X, 3).is_err());
    }

    #[test]
    fn error_magnitude_applies_scale() {
        let d = Dims::new(4, 4, 2).unwrap();
        let a = RealVolume::constant(d, 0.51);
        let b = RealVolume::constant(d, 0.5);
        let e = error_magnitude(&a, &b, 50.0).unwrap();
        for &v in e.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        let zero = error_magnitude(&a, &a, 50.0).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(error_magnitude(&a, &b, 0.0).is_err());
    }

    #[test]
    fn windowing_maps_extremes_and_degenerates() {
        let s = Slice2d { width: 2, height: 1, data: vec![-1.0, 1.0] };
        assert_eq!(window_to_u8(&s), vec![0, 255]);
        let flat = Slice2d { width: 2, height: 1, data: vec![3.0, 3.0] };
        assert_eq!(window_to_u8(&flat), vec![128, 128]);
        let black = Slice2d { width: 2, height: 1, data: vec![0.0, 0.0] };
        assert_eq!(window_to_u8(&black), vec![0, 0]);
    }

    #[test]
    fn png_roundtrip_preserves_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slice.png");
        let s = Slice2d {
            width: 3,
            height: 2,
            data: vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0],
        };
        write_png(&path, &s).unwrap();
        let img = image::open(&path).unwrap().into_luma8();
        assert_eq!(img.dimensions(), (3, 2));
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(1, 0).0[0], 128);
        assert_eq!(img.get_pixel(2, 0).0[0], 255);
    }
}
