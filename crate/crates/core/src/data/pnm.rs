//! Binary PPM (P6) and PGM (P5) images with maxval 255.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

fn bad(msg: impl Into<String>) -> Error {
    Error::Image(msg.into())
}

fn quantize<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

/// Encodes a `1 x 3 x h x w` image with values in `[0, 1]`.
pub fn write_ppm<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(bad(format!("PPM needs a 1x3xHxW tensor, got {s}")));
    }
    let mut out = header("P6", s.w, s.h);
    let plane = s.plane();
    let d = image.data();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(d[c * plane + i]));
        }
    }
    Ok(out)
}

/// Encodes a `1 x 1 x h x w` map with values in `[0, 1]`.
pub fn write_pgm<T: Scalar>(map: &Tensor<T>) -> Result<Vec<u8>> {
    let s = map.shape();
    if s.n != 1 || s.c != 1 {
        return Err(bad(format!("PGM needs a 1x1xHxW tensor, got {s}")));
    }
    let mut out = header("P5", s.w, s.h);
    out.extend(map.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Parses `magic w h maxval` plus the single whitespace byte before the
/// payload; returns `(w, h, payload offset)`.
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad(format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("malformed header field"));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("header field out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header not terminated by whitespace"));
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero image dimension"));
    }
    Ok((w, h, pos + 1))
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    let data = &bytes[offset..];
    if data.len() < len {
        return Err(bad(format!("payload truncated: {} of {len} bytes", data.len())));
    }
    Ok(&data[..len])
}

/// Decodes a P6 image into a `1 x 3 x h x w` tensor in `[0, 1]`.
pub fn read_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (w, h, off) = parse_header(bytes, b"P6")?;
    let data = payload(bytes, off, 3 * w * h)?;
    let plane = w * h;
    let mut out = vec![T::zero(); 3 * plane];
    for (i, px) in data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = T::of(px[c] as f64 / 255.0);
        }
    }
    Tensor::from_vec(Shape4::new(1, 3, h, w), out)
}

/// Decodes a P5 map into a `1 x 1 x h x w` tensor in `[0, 1]`.
pub fn read_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (w, h, off) = parse_header(bytes, b"P5")?;
    let data = payload(bytes, off, w * h)?;
    Tensor::from_vec(Shape4::new(1, 1, h, w), data.iter().map(|&b| T::of(b as f64 / 255.0)).collect())
}
