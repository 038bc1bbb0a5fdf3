//! Middlebury `.flo` files, 8-bit PNG images and color-wheel flow rendering.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geom::{ErpGrid, ViewTag};
use crate::image::ErpImage;
use crate::scalar::Real;

const FLO_MAGIC: &[u8; 4] = b"PIEH";
const FLO_HEADER: usize = 12;

/// Serializes a flow field in the `.flo` layout: magic, width, height, then
/// interleaved little-endian `f32` pairs in row-major order.
pub fn encode_flo<T: Real>(flow: &FlowField<T>) -> Vec<u8> {
    let g = flow.grid();
    let mut out = Vec::with_capacity(FLO_HEADER + 8 * g.len());
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(g.width() as i32).to_le_bytes());
    out.extend_from_slice(&(g.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&(u.to_f64_lossy() as f32).to_le_bytes());
        out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    out
}

fn read_i32(bytes: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

/// Parses `.flo` bytes into a primitive-view flow field.
pub fn decode_flo<T: Real>(bytes: &[u8]) -> Result<FlowField<T>> {
    if bytes.len() < 4 || &bytes[..4] != FLO_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < FLO_HEADER {
        return Err(Error::TruncatedFile { expected: FLO_HEADER, found: bytes.len() });
    }
    let (w, h) = (read_i32(bytes, 4), read_i32(bytes, 8));
    if w <= 0 || h <= 0 {
        return Err(Error::SizeMismatch(format!("header declares {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(FLO_HEADER))
        .ok_or_else(|| Error::SizeMismatch(format!("header declares {w}x{h}")))?;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::SizeMismatch(format!(
            "{} trailing bytes after a {w}x{h} field",
            bytes.len() - expected
        )));
    }
    let grid = ErpGrid::new(w, h)?;
    let (mut u, mut v) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
    for k in 0..grid.len() {
        let at = FLO_HEADER + 8 * k;
        u.push(T::lit(read_f32(bytes, at) as f64));
        v.push(T::lit(read_f32(bytes, at + 4) as f64));
    }
    FlowField::new(grid, u, v, ViewTag::Primitive)
}

pub fn write_flo<T: Real>(path: impl AsRef<Path>, flow: &FlowField<T>) -> Result<()> {
    Ok(fs::write(path, encode_flo(flow))?)
}

pub fn read_flo<T: Real>(path: impl AsRef<Path>) -> Result<FlowField<T>> {
    decode_flo(&fs::read(path)?)
}

/// Loads an 8-bit PNG as a primitive-view image with 1 (gray) or 3 (color)
/// channels in `[0, 255]`. Alpha is dropped.
pub fn read_png<T: Real>(path: impl AsRef<Path>) -> Result<ErpImage<T>> {
    let dynimg = image::open(path)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let grid = ErpGrid::new(w, h)?;
    let (channels, raw) = if dynimg.color().has_color() {
        (3, dynimg.into_rgb8().into_raw())
    } else {
        (1, dynimg.into_luma8().into_raw())
    };
    let data = raw.into_iter().map(|b| T::lit(b as f64)).collect();
    ErpImage::new(grid, channels, data, ViewTag::Primitive)
}

/// Writes a 1- or 3-channel image as 8-bit PNG, rounding and clamping to
/// `[0, 255]`.
pub fn write_png<T: Real>(path: impl AsRef<Path>, img: &ErpImage<T>) -> Result<()> {
    let g = img.grid();
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::InvalidParameter(format!("cannot write a {c}-channel image as PNG"))),
    };
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|x| x.to_f64_lossy().round().clamp(0.0, 255.0) as u8)
        .collect();
    image::save_buffer(path, &bytes, g.width() as u32, g.height() as u32, color)?;
    Ok(())
}

fn hsv_to_rgb(hue_deg: f64, sat: f64) -> [f64; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let sector = h.floor();
    let f = h - sector;
    let (p, q, t) = (1.0 - sat, 1.0 - sat * f, 1.0 - sat * (1.0 - f));
    match sector as u32 % 6 {
        0 => [1.0, t, p],
        1 => [q, 1.0, p],
        2 => [p, 1.0, t],
        3 => [p, q, 1.0],
        4 => [t, p, 1.0],
        _ => [1.0, p, q],
    }
}

/// Quantile `q` of the per-pixel flow magnitudes.
pub fn magnitude_percentile<T: Real>(flow: &FlowField<T>, q: f64) -> f64 {
    let mut mags: Vec<f64> = flow
        .u()
        .iter()
        .zip(flow.v())
        .map(|(u, v)| u.to_f64_lossy().hypot(v.to_f64_lossy()))
        .collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    mags[idx]
}

/// Color-wheel rendering: hue is the flow direction `atan2(v, u)`, saturation
/// the magnitude relative to `max_mag` (99th percentile when `None`), value
/// fixed at full brightness so zero flow is white. Output is RGB in `[0, 255]`.
pub fn flow_to_color<T: Real>(flow: &FlowField<T>, max_mag: Option<T>) -> ErpImage<T> {
    let max = max_mag
        .map(|m| m.to_f64_lossy())
        .unwrap_or_else(|| magnitude_percentile(flow, 0.99));
    let max = if max > 0.0 && max.is_finite() { max } else { 1.0 };
    let g = flow.grid();
    ErpImage::from_fn(g, 3, flow.view(), |i, j, out| {
        let (u, v) = flow.get(i, j);
        let (u, v) = (u.to_f64_lossy(), v.to_f64_lossy());
        let sat = (u.hypot(v) / max).min(1.0);
        let rgb = hsv_to_rgb(v.atan2(u).to_degrees(), sat);
        for (o, c) in out.iter_mut().zip(rgb) {
            *o = T::lit(255.0 * c);
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_flow() -> FlowField<f32> {
        let g = ErpGrid::new(16, 8).unwrap();
        FlowField::from_fn(g, ViewTag::Primitive, |i, j| ((i as f32 * 0.37).sin() * 5.0, j as f32 * 0.1 - 0.3))
    }

    #[test]
    fn flo_layout_and_round_trip() {
        let f = sample_flow();
        let bytes = encode_flo(&f);
        assert_eq!(bytes.len(), 12 + 8 * 16 * 8);
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(read_i32(&bytes, 4), 16);
        assert_eq!(read_i32(&bytes, 8), 8);
        assert_eq!(read_f32(&bytes, 12), f.u()[0]);
        assert_eq!(read_f32(&bytes, 16), f.v()[0]);
        let back: FlowField<f32> = decode_flo(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode_flo(&back), bytes);
    }

    #[test]
    fn corrupted_headers() {
        let bytes = encode_flo(&sample_flow());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_flo::<f32>(&bad), Err(Error::BadMagic)));
        assert!(matches!(decode_flo::<f32>(&bytes[..bytes.len() - 3]), Err(Error::TruncatedFile { .. })));
        assert!(matches!(decode_flo::<f32>(&bytes[..8]), Err(Error::TruncatedFile { .. })));
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_flo::<f32>(&long), Err(Error::SizeMismatch(_))));
        let mut neg = bytes;
        neg[4..8].copy_from_slice(&(-16i32).to_le_bytes());
        assert!(matches!(decode_flo::<f32>(&neg), Err(Error::SizeMismatch(_))));
    }

    #[test]
    fn zero_flow_is_white() {
        let g = ErpGrid::new(8, 4).unwrap();
        let img = flow_to_color(&FlowField::<f64>::zeros(g, ViewTag::Primitive), None);
        assert!(img.data().iter().all(|&x| x == 255.0));
    }

    #[test]
    fn constant_rightward_flow_is_uniform_red() {
        let g = ErpGrid::new(8, 4).unwrap();
        let f = FlowField::from_fn(g, ViewTag::Primitive, |_, _| (2.0, 0.0));
        let img = flow_to_color(&f, None);
        for k in 0..g.len() {
            assert_eq!(&img.data()[3 * k..3 * k + 3], &[255.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn negation_rotates_hue_half_a_turn() {
        let g = ErpGrid::new(16, 8).unwrap();
        let f = FlowField::from_fn(g, ViewTag::Primitive, |i, j| ((i as f64 * 0.7).cos() * 3.0, (j as f64 * 1.3).sin() * 2.0 + 0.1));
        let neg = f.scaled(-1.0);
        let (a, b) = (flow_to_color(&f, Some(4.0)), flow_to_color(&neg, Some(4.0)));
        let hue = |c: &[f64]| (3f64.sqrt() * (c[1] - c[2])).atan2(2.0 * c[0] - c[1] - c[2]).to_degrees();
        for k in 0..g.len() {
            let (ca, cb) = (&a.data()[3 * k..3 * k + 3], &b.data()[3 * k..3 * k + 3]);
            let d = (hue(cb) - hue(ca)).rem_euclid(360.0);
            assert!((d - 180.0).abs() < 1e-9, "{k}: {d}");
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = ErpGrid::new(8, 4).unwrap();
        let gray = ErpImage::from_fn(g, 1, ViewTag::Primitive, |i, j, o| o[0] = (i * 30 + j) as f64);
        let rgb = ErpImage::from_fn(g, 3, ViewTag::Primitive, |i, j, o| {
            o.copy_from_slice(&[i as f64, j as f64, 200.0]);
        });
        for img in [gray, rgb] {
            let p = dir.path().join("x.png");
            write_png(&p, &img).unwrap();
            let back: ErpImage<f64> = read_png(&p).unwrap();
            assert_eq!(back, img);
        }
    }
}
