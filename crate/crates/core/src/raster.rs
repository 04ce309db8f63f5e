//! Semantic mask input and binary grounding mask encoding.
//!
//! Class masks are 8-bit PGM files (binary `P5` or ASCII `P2`) whose pixel
//! values are class ids. Class names come from a `taxonomy.json` sidecar of
//! the form `{"names": [...]}`.
//!
//! Grounding masks are run-length encoded in row-major order as alternating
//! counts of zeros and ones, starting with the zero run. Only the first run
//! may be zero-length. The JSON form is `{"size": [H, W], "counts": [...]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tokens reserved by the answer vocabulary; class names may not reuse them.
const RESERVED_NAMES: [&str; 3] = ["yes", "no", "none"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyFile", into = "TaxonomyFile")]
pub struct ClassTaxonomy {
    names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    names: Vec<String>,
}

impl TryFrom<TaxonomyFile> for ClassTaxonomy {
    type Error = Error;

    fn try_from(file: TaxonomyFile) -> Result<Self> {
        ClassTaxonomy::new(file.names)
    }
}

impl From<ClassTaxonomy> for TaxonomyFile {
    fn from(t: ClassTaxonomy) -> Self {
        TaxonomyFile { names: t.names }
    }
}

impl ClassTaxonomy {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 || names.len() > 255 {
            return Err(Error::InvalidTaxonomy(format!(
                "need 2..=255 classes, got {}",
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            let valid = name.starts_with(|c: char| c.is_ascii_lowercase())
                && name
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
            if !valid {
                return Err(Error::InvalidTaxonomy(format!(
                    "class name {name:?} must be lowercase ASCII with underscores"
                )));
            }
            if RESERVED_NAMES.contains(&name.as_str()) {
                return Err(Error::InvalidTaxonomy(format!(
                    "class name {name:?} collides with a reserved answer token"
                )));
            }
            if names[..i].contains(name) {
                return Err(Error::InvalidTaxonomy(format!(
                    "duplicate class name {name:?}"
                )));
            }
        }
        Ok(Self { names })
    }

    /// Ten-class placeholder taxonomy used by the bundled examples.
    pub fn default_ten() -> Self {
        Self::new([
            "background",
            "building",
            "low_vegetation",
            "tree",
            "water",
            "playground",
            "road",
            "bare_ground",
            "nvg_surface",
            "other",
        ])
        .expect("built-in taxonomy is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Result<&str> {
        self.names
            .get(id)
            .map(String::as_str)
            .ok_or(Error::ClassIdOutOfRange {
                id,
                num_classes: self.names.len(),
            })
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Per-pixel class ids of one date, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    width: usize,
    height: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl SemanticMask {
    pub fn new(width: usize, height: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if labels.len() != width * height {
            return Err(Error::SizeMismatch {
                width,
                height,
                expected: width * height,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(Error::ClassIdOutOfRange {
                id: bad.into(),
                num_classes,
            });
        }
        Ok(Self {
            width,
            height,
            num_classes,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }
}

/// The two dates of one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    pub pair_id: String,
    pub t1: SemanticMask,
    pub t2: SemanticMask,
}

impl MaskPair {
    pub fn new(pair_id: impl Into<String>, t1: SemanticMask, t2: SemanticMask) -> Result<Self> {
        if t1.width != t2.width || t1.height != t2.height {
            return Err(Error::DimensionMismatch(format!(
                "t1 is {}x{}, t2 is {}x{}",
                t1.width, t1.height, t2.width, t2.height
            )));
        }
        if t1.num_classes != t2.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "t1 has {} classes, t2 has {}",
                t1.num_classes, t2.num_classes
            )));
        }
        Ok(Self {
            pair_id: pair_id.into(),
            t1,
            t2,
        })
    }

    pub fn width(&self) -> usize {
        self.t1.width
    }

    pub fn height(&self) -> usize {
        self.t1.height
    }

    pub fn num_pixels(&self) -> usize {
        self.t1.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.t1.num_classes
    }

    /// Loads `<dir>/<pair_id>_t1.pgm` and `<dir>/<pair_id>_t2.pgm`.
    pub fn load(dir: impl AsRef<Path>, pair_id: &str, taxonomy: &ClassTaxonomy) -> Result<Self> {
        let dir = dir.as_ref();
        let t1 = load_mask(dir.join(format!("{pair_id}_t1.pgm")), taxonomy)?;
        let t2 = load_mask(dir.join(format!("{pair_id}_t2.pgm")), taxonomy)?;
        Self::new(pair_id, t1, t2)
    }
}

/// Reads an 8-bit PGM whose pixel values are class ids.
pub fn load_mask(path: impl AsRef<Path>, taxonomy: &ClassTaxonomy) -> Result<SemanticMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
    };
    let (width, height, labels) = parse_pgm(&bytes).map_err(malformed)?;
    SemanticMask::new(width, height, taxonomy.len(), labels)
}

/// Parses a P2/P5 image with maxval ≤ 255. Returns `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut cursor = PgmCursor { bytes, pos: 0 };
    let magic = cursor.token().ok_or("missing magic number")?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(format!(
                "bad magic {:?}, expected P2 or P5",
                String::from_utf8_lossy(other)
            ))
        }
    };
    let width = cursor.header_number("width")?;
    let height = cursor.header_number("height")?;
    let maxval = cursor.header_number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("maxval {maxval} is not an 8-bit value"));
    }
    let n = width
        .checked_mul(height)
        .ok_or("image dimensions overflow")?;
    let pixels = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = cursor.pos + 1;
        let raster = bytes
            .get(start..start + n)
            .ok_or_else(|| format!("raster truncated: need {n} bytes"))?;
        raster.to_vec()
    } else {
        let mut pixels = Vec::with_capacity(n);
        for _ in 0..n {
            let value = cursor.header_number("pixel")?;
            if value > maxval {
                return Err(format!("pixel value {value} exceeds maxval {maxval}"));
            }
            pixels.push(value as u8);
        }
        pixels
    };
    Ok((width, height, pixels))
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmCursor<'a> {
    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn header_number(&mut self, what: &str) -> std::result::Result<usize, String> {
        let tok = self.token().ok_or_else(|| format!("missing {what}"))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {what} {:?}", String::from_utf8_lossy(tok)))
    }
}

/// Encodes a mask as a binary P5 PGM.
pub fn encode_pgm(mask: &SemanticMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.labels);
    out
}

pub fn save_mask(path: impl AsRef<Path>, mask: &SemanticMask) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

/// Run-length encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleJson", into = "RleJson")]
pub struct BinaryMask {
    width: usize,
    height: usize,
    counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct RleJson {
    size: [usize; 2],
    counts: Vec<u32>,
}

impl TryFrom<RleJson> for BinaryMask {
    type Error = Error;

    fn try_from(json: RleJson) -> Result<Self> {
        let [height, width] = json.size;
        BinaryMask::from_counts(width, height, json.counts)
    }
}

impl From<BinaryMask> for RleJson {
    fn from(m: BinaryMask) -> Self {
        RleJson {
            size: [m.height, m.width],
            counts: m.counts,
        }
    }
}

impl BinaryMask {
    /// Validates the canonical-form invariants.
    pub fn from_counts(width: usize, height: usize, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if total != (width * height) as u64 {
            return Err(Error::InvalidRuns(format!(
                "counts sum to {total}, expected {}",
                width * height
            )));
        }
        if let Some(i) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::InvalidRuns(format!(
                "zero-length run at position {}",
                i + 1
            )));
        }
        Ok(Self {
            width,
            height,
            counts,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        let n = (width * height) as u32;
        Self {
            width,
            height,
            counts: if n == 0 { Vec::new() } else { vec![n] },
        }
    }

    pub fn from_bits(bits: &[bool], width: usize, height: usize) -> Result<Self> {
        rle_encode(bits, width, height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Number of "on" pixels: the sum of the odd-indexed runs.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| u64::from(c))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn to_bits(&self) -> Vec<bool> {
        rle_decode(self).expect("BinaryMask invariants hold")
    }
}

/// Run-length encodes a row-major bit grid.
pub fn rle_encode(grid: &[bool], width: usize, height: usize) -> Result<BinaryMask> {
    if grid.len() != width * height {
        return Err(Error::SizeMismatch {
            width,
            height,
            expected: width * height,
            actual: grid.len(),
        });
    }
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &bit in grid {
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    if !grid.is_empty() {
        counts.push(run);
    }
    Ok(BinaryMask {
        width,
        height,
        counts,
    })
}

pub fn rle_decode(mask: &BinaryMask) -> Result<Vec<bool>> {
    let n = mask.width * mask.height;
    let total: u64 = mask.counts.iter().map(|&c| u64::from(c)).sum();
    if total != n as u64 {
        return Err(Error::InvalidRuns(format!(
            "counts sum to {total}, expected {n}"
        )));
    }
    let mut bits = Vec::with_capacity(n);
    for (i, &run) in mask.counts.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
    }
    Ok(bits)
}
