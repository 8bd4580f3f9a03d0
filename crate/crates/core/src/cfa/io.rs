//! Image files: 8/16-bit PNG for display, PFM and the tensor format for
//! exact float data. Images map to `(1, c, h, w)` tensors in `[0, 1]` with
//! `c` equal to 1 (gray) or 3 (RGB).

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::numerics::{io as tensor_io, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pfm,
    Tensor,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("png") => Ok(ImageFormat::Png),
            Some("pfm") => Ok(ImageFormat::Pfm),
            Some("tensor") | Some("bin") => Ok(ImageFormat::Tensor),
            _ => Err(Error::Format(format!(
                "cannot infer image format of {} (expected .png, .pfm or .tensor)",
                path.display()
            ))),
        }
    }
}

fn single_image(t: &Tensor<f64>) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || !(s.c == 1 || s.c == 3) {
        return Err(Error::shape(format!(
            "image files hold one 1- or 3-channel image, got {s}"
        )));
    }
    Ok(())
}

fn planar<P: Copy>(
    h: usize,
    w: usize,
    c: usize,
    px: impl Fn(usize, usize) -> [P; 3],
    scale: impl Fn(P) -> f64,
) -> Result<Tensor<f64>> {
    Tensor::from_fn(Shape::new(1, c, h, w), |_, ch, y, x| scale(px(x, y)[ch]))
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wide = matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let c = if img.color().has_color() { 3 } else { 1 };
    match (c, wide) {
        (3, false) => {
            let b = img.to_rgb8();
            planar(h, w, 3, |x, y| b.get_pixel(x as u32, y as u32).0, |v| v as f64 / 255.0)
        }
        (3, true) => {
            let b = img.to_rgb16();
            planar(
                h,
                w,
                3,
                |x, y| b.get_pixel(x as u32, y as u32).0,
                |v| v as f64 / 65535.0,
            )
        }
        (_, false) => {
            let b = img.to_luma8();
            planar(
                h,
                w,
                1,
                |x, y| [b.get_pixel(x as u32, y as u32).0[0]; 3],
                |v| v as f64 / 255.0,
            )
        }
        (_, true) => {
            let b = img.to_luma16();
            planar(
                h,
                w,
                1,
                |x, y| [b.get_pixel(x as u32, y as u32).0[0]; 3],
                |v| v as f64 / 65535.0,
            )
        }
    }
}

/// Clamp to `[0, 1]` and quantize to `bits` (8 or 16).
pub fn write_png(t: &Tensor<f64>, path: impl AsRef<Path>, bits: u8) -> Result<()> {
    single_image(t)?;
    let s = t.shape();
    let (w, h) = (s.w as u32, s.h as u32);
    let interleaved = |max: f64| -> Vec<f64> {
        let mut v = Vec::with_capacity(s.numel());
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..s.c {
                    v.push((t.get(0, c, y, x).clamp(0.0, 1.0) * max).round());
                }
            }
        }
        v
    };
    match (bits, s.c) {
        (8, 3) => ImageBuffer::<Rgb<u8>, _>::from_raw(
            w,
            h,
            interleaved(255.0).into_iter().map(|v| v as u8).collect::<Vec<_>>(),
        )
        .expect("buffer size")
        .save(path)?,
        (8, _) => ImageBuffer::<Luma<u8>, _>::from_raw(
            w,
            h,
            interleaved(255.0).into_iter().map(|v| v as u8).collect::<Vec<_>>(),
        )
        .expect("buffer size")
        .save(path)?,
        (16, 3) => ImageBuffer::<Rgb<u16>, _>::from_raw(
            w,
            h,
            interleaved(65535.0).into_iter().map(|v| v as u16).collect::<Vec<_>>(),
        )
        .expect("buffer size")
        .save(path)?,
        (16, _) => ImageBuffer::<Luma<u16>, _>::from_raw(
            w,
            h,
            interleaved(65535.0).into_iter().map(|v| v as u16).collect::<Vec<_>>(),
        )
        .expect("buffer size")
        .save(path)?,
        (b, _) => return Err(Error::InvalidConfig(format!("PNG bit depth must be 8 or 16, got {b}"))),
    }
    Ok(())
}

/// Little-endian PFM, rows stored bottom to top.
pub fn encode_pfm(t: &Tensor<f64>) -> Result<Vec<u8>> {
    single_image(t)?;
    let s = t.shape();
    let tag = if s.c == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", s.w, s.h).into_bytes();
    for y in (0..s.h).rev() {
        for x in 0..s.w {
            for c in 0..s.c {
                out.extend_from_slice(&(t.get(0, c, y, x) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor<f64>> {
    // four whitespace-separated header tokens, then exactly one whitespace byte
    let mut header: Vec<String> = Vec::new();
    let mut token = Vec::new();
    let mut pos = 0;
    while header.len() < 4 {
        let b = *bytes
            .get(pos)
            .ok_or_else(|| Error::Format("truncated PFM header".into()))?;
        pos += 1;
        if !b.is_ascii_whitespace() {
            token.push(b);
        } else if !token.is_empty() {
            header.push(String::from_utf8_lossy(&token).into_owned());
            token.clear();
        }
    }
    let c = match header[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::Format(format!("bad PFM magic `{other}`"))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PFM extent `{s}`")))
    };
    let (w, h) = (parse(&header[1])?, parse(&header[2])?);
    let scale: f64 = header[3]
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale `{}`", header[3])))?;
    let payload = &bytes[pos..];
    if payload.len() != w * h * c * 4 {
        return Err(Error::Format(format!(
            "PFM payload of {} bytes does not match {w}x{h}x{c}",
            payload.len()
        )));
    }
    let little = scale < 0.0;
    let value = |i: usize| {
        let b: [u8; 4] = payload[4 * i..4 * i + 4].try_into().unwrap();
        (if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }) as f64
    };
    Tensor::from_fn(Shape::new(1, c, h, w), |_, ch, y, x| {
        value(((h - 1 - y) * w + x) * c + ch)
    })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    decode_pfm(&std::fs::read(path)?)
}

pub fn write_pfm(t: &Tensor<f64>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_pfm(t)?)?;
    Ok(())
}

/// Read by extension: `.png`, `.pfm`, or the tensor format.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    match ImageFormat::from_path(path)? {
        ImageFormat::Png => read_png(path),
        ImageFormat::Pfm => read_pfm(path),
        ImageFormat::Tensor => tensor_io::load(path),
    }
}

/// Write by extension; `bits` applies to PNG only.
pub fn save_image(t: &Tensor<f64>, path: impl AsRef<Path>, bits: u8) -> Result<()> {
    let path = path.as_ref();
    match ImageFormat::from_path(path)? {
        ImageFormat::Png => write_png(t, path, bits),
        ImageFormat::Pfm => write_pfm(t, path),
        ImageFormat::Tensor => tensor_io::save(t, path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn card(c: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, c, 5, 7), |_, ch, y, x| {
            ((ch * 35 + y * 7 + x) as f64 / 104.0).min(1.0)
        })
        .unwrap()
    }

    #[test]
    fn png_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            for bits in [8u8, 16] {
                let p = dir.path().join(format!("x{c}_{bits}.png"));
                let t = card(c);
                write_png(&t, &p, bits).unwrap();
                let back = read_png(&p).unwrap();
                assert_eq!(back.shape(), t.shape());
                let step = if bits == 8 { 255.0 } else { 65535.0 };
                for (a, b) in back.data().iter().zip(t.data()) {
                    assert!((a - b).abs() <= 0.5 / step + 1e-12);
                }
            }
        }
        assert!(write_png(&card(3), dir.path().join("x.png"), 12).is_err());
    }

    #[test]
    fn pfm_roundtrip_is_f32_exact() {
        for c in [1, 3] {
            let t = card(c);
            let bytes = encode_pfm(&t).unwrap();
            assert!(bytes.starts_with(if c == 3 { b"PF\n7 5\n-1.0\n" } else { b"Pf\n7 5\n-1.0\n" }));
            let back = decode_pfm(&bytes).unwrap();
            assert_eq!(back, t.cast::<f32>().cast::<f64>());
        }
        assert!(decode_pfm(b"P6\n1 1\n255\n").is_err());
        assert!(decode_pfm(b"Pf\n2 2\n-1.0\n\0\0").is_err());
    }

    #[test]
    fn pfm_bottom_row_first() {
        let t = Tensor::new(Shape::new(1, 1, 2, 1), vec![0.25, 0.75]).unwrap();
        let bytes = encode_pfm(&t).unwrap();
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(&payload[..4], &0.75f32.to_le_bytes());
    }

    #[test]
    fn dispatch_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let t = card(3);
        let p = dir.path().join("a.tensor");
        save_image(&t, &p, 8).unwrap();
        assert_eq!(load_image(&p).unwrap(), t);
        assert!(save_image(&t, dir.path().join("a.jpg"), 8).is_err());
        assert!(save_image(&Tensor::zeros(Shape::new(2, 3, 2, 2)), dir.path().join("a.pfm"), 8).is_err());
    }
}
