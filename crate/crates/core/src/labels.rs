//! Per-pixel label images and their PGM encoding.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel label. The discriminant is the on-disk PGM code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum Label {
    #[default]
    Background = 0,
    Target = 1,
    Excluded = 2,
    NotAssigned = 3,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Background, Label::Target, Label::Excluded, Label::NotAssigned];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Label> {
        Label::ALL.get(code as usize).copied()
    }
}

/// Per-pixel labels aligned to a hypercube.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    labels: Array2<Label>,
}

impl ClassMask {
    pub fn new(labels: Array2<Label>) -> Self {
        Self { labels }
    }

    pub fn filled(height: usize, width: usize, label: Label) -> Self {
        Self { labels: Array2::from_elem((height, width), label) }
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn labels(&self) -> &Array2<Label> {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut Array2<Label> {
        &mut self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> Label {
        self.labels[[y, x]]
    }

    pub fn set(&mut self, y: usize, x: usize, label: Label) {
        self.labels[[y, x]] = label;
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    /// Writes the mask as a binary (P5) 8-bit PGM with label codes as grey levels.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        let (h, wd) = self.dims();
        write!(w, "P5\n{wd} {h}\n255\n")?;
        let bytes: Vec<u8> = self.labels.iter().map(|l| l.code()).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_pgm(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut tokens: Vec<String> = Vec::new();
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Header("truncated PGM header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P5" {
            return Err(Error::Header(format!("unsupported PGM magic {}", tokens[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Header(format!("bad PGM field `{s}`")));
        let width = parse(&tokens[1])?;
        let height = parse(&tokens[2])?;
        let maxval = parse(&tokens[3])?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::Header(format!("unsupported PGM maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height];
        r.read_exact(&mut bytes).map_err(|_| Error::Dimension(format!("PGM payload shorter than {width}x{height}")))?;
        let labels = bytes
            .iter()
            .map(|b| Label::from_code(*b).ok_or_else(|| Error::Format(format!("invalid label code {b}"))))
            .collect::<Result<Vec<_>>>()?;
        let labels = Array2::from_shape_vec((height, width), labels).map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(Self { labels })
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let mut m = ClassMask::filled(3, 5, Label::Background);
        m.set(0, 1, Label::Target);
        m.set(2, 4, Label::Excluded);
        m.set(1, 0, Label::NotAssigned);
        let mut buf = Vec::new();
        m.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(ClassMask::read_pgm(&buf[..]).unwrap(), m);
    }

    #[test]
    fn pgm_rejects_unknown_code() {
        let mut buf = b"P5\n2 1\n255\n".to_vec();
        buf.extend([0u8, 9u8]);
        assert!(ClassMask::read_pgm(&buf[..]).is_err());
    }
}
