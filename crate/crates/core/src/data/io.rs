//! Dataset files: binary PPM for RGB, PFM for depth, PGM for the validity
//! mask, and a `manifest.txt` listing `id rgb depth mask` per line.

use std::fs;
use std::path::{Path, PathBuf};

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const MANIFEST: &str = "manifest.txt";

/// Samples in manifest order with their ids.
pub type Dataset = Vec<(String, Sample)>;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(rgb: &Tensor4<f32>) -> Vec<u8> {
    let s = rgb.shape();
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    let plane = s.plane();
    for i in 0..plane {
        for c in 0..3 {
            let v = rgb.data()[c * plane + i];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn encode_pgm_mask(valid: &[bool], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(valid.iter().map(|&v| if v { 255 } else { 0 }));
    out
}

/// Little-endian PFM, rows stored bottom to top.
pub fn encode_pfm(depth: &[f32], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for v in &depth[y * w..(y + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Whitespace-separated header tokens with `#` comments; returns the tokens
/// and the offset just past the single whitespace byte that ends the header.
fn header(bytes: &[u8], count: usize, path: &Path) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(
                path,
                format!("header ends at offset {i} after {} of {count} fields", tokens.len()),
            ));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(Error::format(path, format!("no data after header (offset {i})")));
    }
    Ok((tokens, i + 1))
}

fn dims(tokens: &[String], path: &Path) -> Result<(usize, usize)> {
    let parse = |t: &String, what: &str| -> Result<usize> {
        t.parse()
            .ok()
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| Error::format(path, format!("bad {what} `{t}` in header")))
    };
    Ok((parse(&tokens[2], "height")?, parse(&tokens[1], "width")?))
}

fn payload<'a>(bytes: &'a [u8], offset: usize, expected: usize, path: &Path) -> Result<&'a [u8]> {
    let have = bytes.len() - offset;
    if have != expected {
        return Err(Error::format(
            path,
            format!(
                "payload at offset {offset} has {have} bytes, expected {expected}{}",
                if have < expected { " (truncated)" } else { "" }
            ),
        ));
    }
    Ok(&bytes[offset..])
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor4<f32>> {
    let (t, off) = header(bytes, 4, path)?;
    if t[0] != "P6" {
        return Err(Error::format(path, format!("magic `{}`, expected P6", t[0])));
    }
    if t[3] != "255" {
        return Err(Error::format(path, format!("maxval `{}`, expected 255", t[3])));
    }
    let (h, w) = dims(&t, path)?;
    let data = payload(bytes, off, 3 * h * w, path)?;
    let mut rgb = Tensor4::zeros(Shape4::new(1, 3, h, w));
    let plane = h * w;
    for i in 0..plane {
        for c in 0..3 {
            rgb.data_mut()[c * plane + i] = data[3 * i + c] as f32 / 255.0;
        }
    }
    Ok(rgb)
}

pub fn decode_pgm_mask(bytes: &[u8], path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let (t, off) = header(bytes, 4, path)?;
    if t[0] != "P5" {
        return Err(Error::format(path, format!("magic `{}`, expected P5", t[0])));
    }
    if t[3] != "255" {
        return Err(Error::format(path, format!("maxval `{}`, expected 255", t[3])));
    }
    let (h, w) = dims(&t, path)?;
    let data = payload(bytes, off, h * w, path)?;
    let mut valid = Vec::with_capacity(h * w);
    for (i, &b) in data.iter().enumerate() {
        match b {
            0 => valid.push(false),
            255 => valid.push(true),
            other => {
                return Err(Error::format(
                    path,
                    format!("mask byte {other} at offset {}, expected 0 or 255", off + i),
                ))
            }
        }
    }
    Ok((valid, h, w))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let (t, off) = header(bytes, 4, path)?;
    if t[0] != "Pf" {
        return Err(Error::format(
            path,
            format!("magic `{}`, expected Pf (single channel)", t[0]),
        ));
    }
    let scale: f64 = t[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad scale `{}`", t[3])))?;
    if scale >= 0.0 {
        return Err(Error::format(
            path,
            format!("scale {scale} marks big-endian data; only little-endian is supported"),
        ));
    }
    let (h, w) = dims(&t, path)?;
    let data = payload(bytes, off, 4 * h * w, path)?;
    let mut depth = vec![0.0f32; h * w];
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let (row, x) = (k / w, k % w);
        let y = h - 1 - row;
        depth[y * w + x] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    Ok((depth, h, w))
}

pub fn write_pfm(path: &Path, depth: &[f32], h: usize, w: usize) -> Result<()> {
    write_file(path, &encode_pfm(depth, h, w))
}

pub fn read_ppm(path: &Path) -> Result<Tensor4<f32>> {
    decode_ppm(&read_file(path)?, path)
}

pub fn read_pfm(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    decode_pfm(&read_file(path)?, path)
}

/// Writes each sample as `<id>.ppm`, `<id>.pfm`, `<id>.pgm` plus the
/// manifest. Ids must be unique and free of whitespace.
pub fn write_dataset(dir: &Path, samples: &[(String, Sample)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let mut seen = std::collections::HashSet::new();
    for (id, s) in samples {
        if id.is_empty() || id.contains(char::is_whitespace) || !seen.insert(id.as_str()) {
            return Err(Error::invalid(format!("bad or duplicate sample id `{id}`")));
        }
        let (h, w) = (s.height(), s.width());
        let names = [format!("{id}.ppm"), format!("{id}.pfm"), format!("{id}.pgm")];
        write_file(&dir.join(&names[0]), &encode_ppm(&s.rgb))?;
        write_file(&dir.join(&names[1]), &encode_pfm(s.depth.data(), h, w))?;
        write_file(&dir.join(&names[2]), &encode_pgm_mask(&s.valid, h, w))?;
        manifest.push_str(&format!("{id} {} {} {}\n", names[0], names[1], names[2]));
    }
    write_file(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Reads a dataset written by [`write_dataset`], in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let text = String::from_utf8(read_file(&mpath)?)
        .map_err(|_| Error::format(&mpath, "manifest is not UTF-8"))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::format(
                &mpath,
                format!("line {}: expected `id rgb depth mask`, got {} fields", n + 1, f.len()),
            ));
        }
        let resolve = |p: &str| -> PathBuf { dir.join(p) };
        let rgb = read_ppm(&resolve(f[1]))?;
        let dpath = resolve(f[2]);
        let (depth, dh, dw) = read_pfm(&dpath)?;
        let kpath = resolve(f[3]);
        let (valid, mh, mw) = decode_pgm_mask(&read_file(&kpath)?, &kpath)?;
        let (h, w) = (rgb.shape().h, rgb.shape().w);
        if (dh, dw) != (h, w) || (mh, mw) != (h, w) {
            return Err(Error::format(
                &mpath,
                format!(
                    "line {}: rgb {h}x{w}, depth {dh}x{dw}, mask {mh}x{mw} disagree",
                    n + 1
                ),
            ));
        }
        let depth = Tensor4::from_vec(Shape4::new(1, 1, h, w), depth)?;
        let sample = Sample::new(rgb, depth, valid)
            .map_err(|e| Error::format(&dpath, e.to_string()))?;
        out.push((f[0].to_string(), sample));
    }
    Ok(out)
}
