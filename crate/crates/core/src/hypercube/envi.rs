//! ENVI-style container: ASCII `.hdr` plus band-interleaved-by-line binary,
//! little-endian 32-bit float.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use super::{BugGroup, CubeMeta, Hypercube};
use crate::error::{Error, Result};
use crate::scalar::Real;

fn paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.extension().is_some_and(|e| e == "hdr") {
        (path.to_path_buf(), path.with_extension("bil"))
    } else {
        (path.with_extension("hdr"), path.to_path_buf())
    }
}

/// Renders the header and the BIL payload.
pub fn write_cube<T: Real>(hc: &Hypercube<T>) -> (String, Vec<u8>) {
    let (h, w, b) = hc.data().dim();
    let mut hdr = String::from("ENVI\n");
    let meta = hc.meta();
    let _ = writeln!(hdr, "description = {{hsi-pest cube}}");
    let _ = writeln!(hdr, "samples = {w}");
    let _ = writeln!(hdr, "lines = {h}");
    let _ = writeln!(hdr, "bands = {b}");
    let _ = writeln!(hdr, "header offset = 0");
    let _ = writeln!(hdr, "file type = ENVI Standard");
    let _ = writeln!(hdr, "data type = 4");
    let _ = writeln!(hdr, "interleave = bil");
    let _ = writeln!(hdr, "byte order = 0");
    let _ = writeln!(hdr, "wavelength units = Nanometers");
    let wl: Vec<String> = hc.wavelengths().iter().map(|v| format!("{v:?}")).collect();
    let _ = writeln!(hdr, "wavelength = {{{}}}", wl.join(", "));
    let _ = writeln!(hdr, "image id = {}", meta.image_id);
    let _ = writeln!(hdr, "background type = {}", meta.background);
    let _ = writeln!(hdr, "bug group = {}", meta.group.map(|g| g.to_string()).unwrap_or_else(|| "none".into()));
    let data = hc.data();
    let mut bytes = Vec::with_capacity(h * w * b * 4);
    for y in 0..h {
        for k in 0..b {
            for x in 0..w {
                bytes.extend_from_slice(&(data[[y, x, k]].as_f64() as f32).to_le_bytes());
            }
        }
    }
    (hdr, bytes)
}

/// Writes `<stem>.hdr` and `<stem>.bil` next to `path`.
pub fn save_cube<T: Real>(hc: &Hypercube<T>, path: impl AsRef<Path>) -> Result<()> {
    let (hdr_path, bin_path) = paths(path.as_ref());
    let (hdr, bytes) = write_cube(hc);
    std::fs::write(hdr_path, hdr)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(bin_path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_cube<T: Real>(path: impl AsRef<Path>) -> Result<Hypercube<T>> {
    let (hdr_path, bin_path) = paths(path.as_ref());
    let hdr = std::fs::read_to_string(&hdr_path)?;
    let bytes = std::fs::read(&bin_path)?;
    read_cube(&hdr, &bytes)
}

fn parse_header(text: &str) -> Result<BTreeMap<String, String>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim() == "ENVI" => {}
        _ => return Err(Error::Header("missing ENVI magic".into())),
    }
    let mut map = BTreeMap::new();
    let mut pending: Option<(String, String)> = None;
    for line in lines {
        if let Some((key, mut acc)) = pending.take() {
            acc.push(' ');
            acc.push_str(line.trim());
            if acc.contains('}') {
                map.insert(key, acc);
            } else {
                pending = Some((key, acc));
            }
            continue;
        }
        if line.trim().is_empty() || line.trim_start().starts_with(';') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Header(format!("expected `key = value`, got `{line}`")))?;
        let key = k.trim().to_ascii_lowercase();
        let value = v.trim().to_owned();
        if value.starts_with('{') && !value.contains('}') {
            pending = Some((key, value));
        } else {
            map.insert(key, value);
        }
    }
    if let Some((key, _)) = pending {
        return Err(Error::Header(format!("unterminated brace list for `{key}`")));
    }
    Ok(map)
}

fn field<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key).map(String::as_str).ok_or_else(|| Error::Header(format!("missing `{key}`")))
}

fn usize_field(map: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    let v = field(map, key)?;
    v.parse().map_err(|_| Error::Header(format!("`{key}` is not an integer: `{v}`")))
}

/// Parses header text and payload into a cube.
pub fn read_cube<T: Real>(header: &str, payload: &[u8]) -> Result<Hypercube<T>> {
    let map = parse_header(header)?;
    let w = usize_field(&map, "samples")?;
    let h = usize_field(&map, "lines")?;
    let b = usize_field(&map, "bands")?;
    let dtype = usize_field(&map, "data type")?;
    let word = match dtype {
        4 => 4,
        5 => 8,
        other => return Err(Error::Header(format!("unsupported data type {other}"))),
    };
    let offset = map
        .get("header offset")
        .map(|v| v.parse::<usize>())
        .transpose()
        .map_err(|_| Error::Header("bad header offset".into()))?
        .unwrap_or(0);
    let big_endian = match map.get("byte order").map(String::as_str) {
        None | Some("0") => false,
        Some("1") => true,
        Some(o) => return Err(Error::Header(format!("bad byte order `{o}`"))),
    };
    let interleave = map.get("interleave").map(|s| s.to_ascii_lowercase()).unwrap_or_else(|| "bil".into());
    let wl_raw = field(&map, "wavelength")?;
    let wavelengths = wl_raw
        .trim()
        .trim_start_matches('{')
        .trim_end_matches('}')
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Header(format!("bad wavelength `{}`", s.trim()))))
        .collect::<Result<Vec<f64>>>()?;
    if wavelengths.len() != b {
        return Err(Error::Header(format!("{} wavelengths for {b} bands", wavelengths.len())));
    }
    let expected = h * w * b * word;
    let body = payload.get(offset..).unwrap_or(&[]);
    if body.len() != expected {
        return Err(Error::Dimension(format!("payload has {} bytes, header implies {expected}", body.len())));
    }
    let value = |i: usize| -> f64 {
        let s = &body[i * word..(i + 1) * word];
        match (word, big_endian) {
            (4, false) => f32::from_le_bytes(s.try_into().unwrap()) as f64,
            (4, true) => f32::from_be_bytes(s.try_into().unwrap()) as f64,
            (_, false) => f64::from_le_bytes(s.try_into().unwrap()),
            (_, true) => f64::from_be_bytes(s.try_into().unwrap()),
        }
    };
    let data = match interleave.as_str() {
        "bil" => Array3::from_shape_fn((h, w, b), |(y, x, k)| T::lit(value((y * b + k) * w + x))),
        "bsq" => Array3::from_shape_fn((h, w, b), |(y, x, k)| T::lit(value((k * h + y) * w + x))),
        "bip" => Array3::from_shape_fn((h, w, b), |(y, x, k)| T::lit(value((y * w + x) * b + k))),
        other => return Err(Error::Header(format!("unsupported interleave `{other}`"))),
    };
    let group = match map.get("bug group").map(String::as_str) {
        None | Some("none") | Some("") => None,
        Some(g) => Some(g.parse::<BugGroup>()?),
    };
    let meta = CubeMeta {
        image_id: map.get("image id").cloned().unwrap_or_else(|| "image".into()),
        background: map.get("background type").map(|s| s.parse()).transpose()?.unwrap_or(super::BackgroundType::Synthetic),
        group,
    };
    Hypercube::new(data, wavelengths, meta)
}
