//! Binary file formats: PPM/PGM images, PFM depth maps and the GRNV
//! volume container.
//!
//! GRNV layout: magic `GRNV`, five little-endian u32 values
//! (version = 1, w, h, d, c), then `w*h*d*c` little-endian f32 values
//! in linear index order `((i*h + j)*d + k)*c + ch`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::image::{DepthMap, Image};
use crate::volume::FeatureVolume;

pub const GRNV_MAGIC: &[u8; 4] = b"GRNV";
pub const GRNV_VERSION: u32 = 1;

/// Byte-counting reader so format errors can report an offset.
struct Counted<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counted<R> {
    fn new(inner: R) -> Self {
        Counted { inner, offset: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8], format: &'static str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            format,
            offset: at,
            message: format!("unexpected end of data ({e})"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32_le(&mut self, format: &'static str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, format)?;
        Ok(u32::from_le_bytes(b))
    }
}

fn bad(format: &'static str, offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        format,
        offset,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// GRNV volumes

pub fn write_grnv<W: Write>(vol: &FeatureVolume, mut w: W) -> Result<()> {
    w.write_all(GRNV_MAGIC)?;
    for v in [
        GRNV_VERSION,
        vol.grid.w as u32,
        vol.grid.h as u32,
        vol.grid.d as u32,
        vol.channels as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &vol.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read a GRNV volume. The container stores voxel counts only, so the
/// metric extent (`side`, `center_distance`) is supplied by the caller.
pub fn read_grnv<R: Read>(r: R, side: f64, center_distance: f64) -> Result<FeatureVolume> {
    const F: &str = "GRNV";
    let mut r = Counted::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, F)?;
    if &magic != GRNV_MAGIC {
        return Err(bad(F, 0, format!("bad magic {magic:?}, expected \"GRNV\"")));
    }
    let at = r.offset;
    let version = r.read_u32_le(F)?;
    if version != GRNV_VERSION {
        return Err(bad(F, at, format!("unsupported version {version}")));
    }
    let dims_at = r.offset;
    let w = r.read_u32_le(F)? as usize;
    let h = r.read_u32_le(F)? as usize;
    let d = r.read_u32_le(F)? as usize;
    let c = r.read_u32_le(F)? as usize;
    if w == 0 || h == 0 || d == 0 || c == 0 || w * h * d * c > (1 << 30) {
        return Err(bad(F, dims_at, format!("implausible dims {w}x{h}x{d}x{c}")));
    }
    let mut data = vec![0.0f32; w * h * d * c];
    let mut buf = [0u8; 4];
    for v in &mut data {
        r.read_exact(&mut buf, F)?;
        *v = f32::from_le_bytes(buf);
    }
    Ok(FeatureVolume {
        grid: GridSpec {
            w,
            h,
            d,
            side,
            center_distance,
        },
        channels: c,
        data,
    })
}

pub fn write_grnv_file(vol: &FeatureVolume, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grnv(vol, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_grnv_file(path: &Path, side: f64, center_distance: f64) -> Result<FeatureVolume> {
    read_grnv(BufReader::new(File::open(path)?), side, center_distance)
}

// ---------------------------------------------------------------------------
// PPM / PGM

fn write_netpbm_header<W: Write>(mut w: W, magic: &str, width: usize, height: usize) -> Result<()> {
    write!(w, "{magic}\n{width} {height}\n255\n")?;
    Ok(())
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an RGB image as binary PPM (P6, 8-bit).
pub fn write_ppm<W: Write>(img: &Image, mut w: W) -> Result<()> {
    assert_eq!(img.channels, 3, "PPM requires an RGB image");
    write_netpbm_header(&mut w, "P6", img.width, img.height)?;
    let mut row = Vec::with_capacity(img.width * 3);
    for y in 0..img.height {
        row.clear();
        for x in 0..img.width {
            let px = img.pixel(x, y);
            row.extend_from_slice(&[quantize(px[0]), quantize(px[1]), quantize(px[2])]);
        }
        w.write_all(&row)?;
    }
    Ok(())
}

/// Write a single-channel image as binary PGM (P5, 8-bit).
pub fn write_pgm<W: Write>(img: &Image, mut w: W) -> Result<()> {
    assert_eq!(img.channels, 1, "PGM requires a single-channel image");
    write_netpbm_header(&mut w, "P5", img.width, img.height)?;
    let row: Vec<u8> = img.data.iter().map(|v| quantize(*v)).collect();
    w.write_all(&row)?;
    Ok(())
}

/// Read one whitespace-delimited ASCII token, skipping `#` comments.
fn read_token<R: Read>(r: &mut Counted<R>, format: &'static str) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    loop {
        let at = r.offset;
        if r.inner.read(&mut byte).map_err(Error::Io)? == 0 {
            if token.is_empty() {
                return Err(bad(format, at, "unexpected end of header"));
            }
            return Ok(token);
        }
        r.offset += 1;
        let ch = byte[0];
        if in_comment {
            if ch == b'\n' {
                in_comment = false;
            }
            continue;
        }
        match ch {
            b'#' => in_comment = true,
            b' ' | b'\t' | b'\r' | b'\n' => {
                if !token.is_empty() {
                    return Ok(token);
                }
            }
            _ => token.push(ch as char),
        }
    }
}

fn parse_dim(token: &str, format: &'static str, offset: u64) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|_| bad(format, offset, format!("bad dimension token {token:?}")))
}

/// Read a binary PPM (P6) into an RGB float image.
pub fn read_ppm<R: Read>(r: R) -> Result<Image> {
    const F: &str = "PPM";
    let mut r = Counted::new(r);
    let magic = read_token(&mut r, F)?;
    if magic != "P6" {
        return Err(bad(F, 0, format!("bad magic {magic:?}, expected \"P6\"")));
    }
    let at = r.offset;
    let width = parse_dim(&read_token(&mut r, F)?, F, at)?;
    let height = parse_dim(&read_token(&mut r, F)?, F, at)?;
    let maxval_at = r.offset;
    let maxval = read_token(&mut r, F)?;
    if maxval != "255" {
        return Err(bad(F, maxval_at, format!("unsupported maxval {maxval}")));
    }
    let mut bytes = vec![0u8; width * height * 3];
    r.read_exact(&mut bytes, F)?;
    let mut img = Image::zeros(width, height, 3);
    for (dst, src) in img.data.iter_mut().zip(&bytes) {
        *dst = *src as f32 / 255.0;
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// PFM depth maps

/// Write a depth map as grayscale PFM (`Pf`, little-endian, scale -1.0).
/// Rows are stored bottom-up per the format convention.
pub fn write_pfm<W: Write>(depth: &DepthMap, mut w: W) -> Result<()> {
    write!(w, "Pf\n{} {}\n-1.0\n", depth.width, depth.height)?;
    for y in (0..depth.height).rev() {
        for x in 0..depth.width {
            w.write_all(&depth.at(x, y).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pfm<R: Read>(r: R) -> Result<DepthMap> {
    const F: &str = "PFM";
    let mut r = Counted::new(r);
    let magic = read_token(&mut r, F)?;
    if magic != "Pf" {
        return Err(bad(F, 0, format!("bad magic {magic:?}, expected \"Pf\"")));
    }
    let at = r.offset;
    let width = parse_dim(&read_token(&mut r, F)?, F, at)?;
    let height = parse_dim(&read_token(&mut r, F)?, F, at)?;
    let scale_at = r.offset;
    let scale: f64 = read_token(&mut r, F)?
        .parse()
        .map_err(|_| bad(F, scale_at, "bad scale token"))?;
    if scale >= 0.0 {
        return Err(bad(F, scale_at, "big-endian PFM not supported"));
    }
    let mut depth = DepthMap::filled(width, height, 0.0);
    let mut buf = [0u8; 4];
    for y in (0..height).rev() {
        for x in 0..width {
            r.read_exact(&mut buf, F)?;
            depth.set(x, y, f32::from_le_bytes(buf));
        }
    }
    Ok(depth)
}

pub fn write_ppm_file(img: &Image, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppm(img, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_ppm_file(path: &Path) -> Result<Image> {
    read_ppm(BufReader::new(File::open(path)?))
}

pub fn write_pfm_file(depth: &DepthMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pfm(depth, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_pfm_file(path: &Path) -> Result<DepthMap> {
    read_pfm(BufReader::new(File::open(path)?))
}

pub fn write_pgm_file(img: &Image, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(img, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grnv_round_trip() {
        let mut vol = FeatureVolume::zeros(GridSpec::cubic(5, 1.0, 2.0), 3);
        for (n, v) in vol.data.iter_mut().enumerate() {
            *v = (n as f32).sin();
        }
        let mut bytes = Vec::new();
        write_grnv(&vol, &mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"GRNV");
        let back = read_grnv(&bytes[..], 1.0, 2.0).unwrap();
        assert_eq!(back.data, vol.data);
        assert_eq!(back.channels, 3);
    }

    #[test]
    fn grnv_bad_magic_reports_offset_zero() {
        let bytes = b"GRNX\x01\x00\x00\x00";
        match read_grnv(&bytes[..], 1.0, 1.0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn grnv_truncated_payload_reports_offset() {
        let mut vol = FeatureVolume::zeros(GridSpec::cubic(2, 1.0, 1.0), 1);
        vol.data[0] = 1.0;
        let mut bytes = Vec::new();
        write_grnv(&vol, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 2);
        match read_grnv(&bytes[..], 1.0, 1.0) {
            Err(Error::Format { offset, .. }) => assert!(offset >= 24),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn ppm_round_trip_quantized() {
        let mut img = Image::zeros(4, 3, 3);
        for (n, v) in img.data.iter_mut().enumerate() {
            *v = ((n % 256) as f32) / 255.0;
        }
        let mut bytes = Vec::new();
        write_ppm(&img, &mut bytes).unwrap();
        let back = read_ppm(&bytes[..]).unwrap();
        assert_eq!(back.width, 4);
        assert_eq!(back.height, 3);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn pfm_round_trip_with_infinity() {
        let mut depth = DepthMap::filled(3, 2, 1.5);
        depth.set(2, 0, f32::INFINITY);
        depth.set(0, 1, 4110.25);
        let mut bytes = Vec::new();
        write_pfm(&depth, &mut bytes).unwrap();
        let back = read_pfm(&bytes[..]).unwrap();
        assert_eq!(back.data, depth.data);
    }
}
