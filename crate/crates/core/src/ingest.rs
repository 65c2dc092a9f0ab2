//! 2D image ingestion: PGM loading, intensity thresholding and boundary
//! contour extraction with marching squares.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{orient, resample_equidistant, Curve, Point2};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    /// Row-major, row 0 at the top of the image.
    pixels: Vec<u16>,
    pixel_size: f64,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>, pixel_size: f64) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidInput(format!(
                "image must be at least 2x2, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::InvalidInput(format!("pixel size {pixel_size} must be > 0")));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
            pixel_size,
        })
    }

    /// Builds an image by evaluating `f(col, row)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        pixel_size: f64,
        f: impl Fn(usize, usize) -> u16,
    ) -> Result<Self> {
        let mut px = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                px.push(f(c, r));
            }
        }
        GrayImage::new(width, height, px, pixel_size)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn get(&self, col: usize, row: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    /// Serializes as PGM: binary P5 or ASCII P2. Maxval is 255 when every
    /// pixel fits a byte and 65535 otherwise.
    pub fn to_pgm(&self, binary: bool) -> Vec<u8> {
        let maxval: u32 = if self.pixels.iter().all(|&v| v <= 255) {
            255
        } else {
            65535
        };
        let magic = if binary { "P5" } else { "P2" };
        let mut out = format!("{magic}\n{} {}\n{maxval}\n", self.width, self.height).into_bytes();
        if binary {
            for &v in &self.pixels {
                if maxval == 255 {
                    out.push(v as u8);
                } else {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
        } else {
            for row in self.pixels.chunks(self.width) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
        out
    }

    pub fn write_pgm(&self, path: &Path, binary: bool) -> Result<()> {
        fs::write(path, self.to_pgm(binary)).map_err(|e| Error::io(path, e))
    }
}

/// Sidecar metadata for an image file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageDescriptor {
    pub pixel_size_um: f64,
}

/// Loads a P2/P5 PGM. Pixel size comes from `override_size`, else from a
/// sidecar `<stem>.json`, else defaults to 1 um.
pub fn load_image(path: &Path, override_size: Option<f64>) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let pixel_size = match override_size {
        Some(s) => s,
        None => {
            let side = path.with_extension("json");
            if side.exists() {
                let raw = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
                serde_json::from_str::<ImageDescriptor>(&raw)
                    .map_err(|e| Error::parse(&side, e.to_string()))?
                    .pixel_size_um
            } else {
                1.0
            }
        }
    };
    parse_pgm(&bytes, pixel_size).map_err(|msg| Error::parse(path, msg))
}

pub fn parse_pgm(bytes: &[u8], pixel_size: f64) -> std::result::Result<GrayImage, String> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> std::result::Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    let binary = match magic.as_str() {
        "P5" => true,
        "P2" => false,
        other => return Err(format!("bad magic number '{other}', expected P2 or P5")),
    };
    let num = |pos: &mut usize, what: &str| -> std::result::Result<u64, String> {
        let t = token(pos)?;
        t.parse::<u64>().map_err(|_| format!("bad {what} '{t}'"))
    };
    let width = num(&mut pos, "width")? as usize;
    let height = num(&mut pos, "height")? as usize;
    let maxval = num(&mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| "image dimensions overflow".to_string())?;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let bpp = if maxval < 256 { 1 } else { 2 };
        let need = count * bpp;
        if bytes.len() < pos + need {
            return Err(format!(
                "truncated payload: need {need} bytes, have {}",
                bytes.len().saturating_sub(pos)
            ));
        }
        let raster = &bytes[pos..pos + need];
        for i in 0..count {
            let v = if bpp == 1 {
                raster[i] as u64
            } else {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u64
            };
            if v > maxval {
                return Err(format!("pixel {i} value {v} exceeds maxval {maxval}"));
            }
            pixels.push(v as u16);
        }
    } else {
        for i in 0..count {
            let v = num(&mut pos, "pixel").map_err(|e| {
                if e == "truncated header" {
                    format!("truncated payload: {i} of {count} pixels")
                } else {
                    e
                }
            })?;
            if v > maxval {
                return Err(format!("pixel {i} value {v} exceeds maxval {maxval}"));
            }
            pixels.push(v as u16);
        }
    }
    GrayImage::new(width, height, pixels, pixel_size).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub label: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSpec {
    pub thresholds: Vec<Threshold>,
    /// Gaussian pre-blur standard deviation in pixels; 0 disables it.
    #[serde(default)]
    pub smoothing_radius: f64,
}

impl SegmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidInput("no threshold intervals".into()));
        }
        if !(self.smoothing_radius >= 0.0) {
            return Err(Error::InvalidInput("smoothing radius must be >= 0".into()));
        }
        let mut seen = HashSet::new();
        for t in &self.thresholds {
            if !(t.lower <= t.upper) {
                return Err(Error::InvalidInput(format!(
                    "empty interval [{}, {}] for '{}'",
                    t.lower, t.upper, t.label
                )));
            }
            if !seen.insert(t.label.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate label '{}'", t.label)));
            }
        }
        for (i, a) in self.thresholds.iter().enumerate() {
            for b in &self.thresholds[i + 1..] {
                if a.lower <= b.upper && b.lower <= a.upper {
                    return Err(Error::InvalidInput(format!(
                        "intervals for '{}' and '{}' overlap",
                        a.label, b.label
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses `LO:HI[:LABEL]`; an omitted label becomes `region<index>`.
    pub fn parse_threshold(s: &str, index: usize) -> Result<Threshold> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(Error::InvalidInput(format!("threshold '{s}' is not LO:HI[:LABEL]")));
        }
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad number '{v}' in threshold '{s}'")))
        };
        Ok(Threshold {
            lower: num(parts[0])?,
            upper: num(parts[1])?,
            label: parts
                .get(2)
                .map(|l| l.to_string())
                .unwrap_or_else(|| format!("region{index}")),
        })
    }
}

/// Per-pixel label indices; 0 is background, `k` is `labels[k - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<String>,
    pub data: Vec<u16>,
}

impl LabelImage {
    pub fn label_index(&self, label: &str) -> Option<u16> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| i as u16 + 1)
    }

    pub fn count(&self, label: &str) -> usize {
        match self.label_index(label) {
            Some(k) => self.data.iter().filter(|&&v| v == k).count(),
            None => 0,
        }
    }
}

fn gaussian_blur(img: &GrayImage, sigma: f64) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let src: Vec<f64> = img.pixels.iter().map(|&v| v as f64).collect();
    if sigma <= 0.0 {
        return src;
    }
    let half = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                let cc = clamp(c as isize + k as isize - half, w);
                acc += wk * src[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                let rr = clamp(r as isize + k as isize - half, h);
                acc += wk * tmp[rr * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Labels each pixel with the first interval containing its (optionally
/// blurred) intensity.
pub fn segment_threshold(img: &GrayImage, spec: &SegmentationSpec) -> Result<LabelImage> {
    spec.validate()?;
    let values = gaussian_blur(img, spec.smoothing_radius);
    let data = values
        .iter()
        .map(|&v| {
            spec.thresholds
                .iter()
                .position(|t| v >= t.lower && v <= t.upper)
                .map_or(0, |i| i as u16 + 1)
        })
        .collect();
    Ok(LabelImage {
        width: img.width,
        height: img.height,
        labels: spec.thresholds.iter().map(|t| t.label.clone()).collect(),
        data,
    })
}

/// Traces the boundaries of `label`'s pixels at the half level of the
/// indicator. Outer boundaries come out counter-clockwise and holes
/// clockwise, in micrometres with `y` pointing up (row 0 is the top).
///
/// Ambiguous saddle cells are resolved by the corner average: the cell
/// centre counts as inside when the mean indicator is at least 0.5, which
/// joins diagonally touching pixels.
pub fn extract_contours(labels: &LabelImage, label: &str, pixel_size: f64) -> Vec<Curve> {
    let Some(k) = labels.label_index(label) else {
        return Vec::new();
    };
    let (w, h) = (labels.width, labels.height);
    // padded indicator, j counts rows from the bottom
    let pw = w + 2;
    let ph = h + 2;
    let inside = |i: usize, j: usize| -> bool {
        if i == 0 || j == 0 || i > w || j > h {
            return false;
        }
        let col = i - 1;
        let row = h - j;
        labels.data[row * w + col] == k
    };

    type Key = (i64, i64);
    let mut next: BTreeMap<Key, Key> = BTreeMap::new();
    for j in 0..ph - 1 {
        for i in 0..pw - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let state: [bool; 4] = corners.map(|(a, b)| inside(a, b));
            let n_in = state.iter().filter(|&&s| s).count();
            if n_in == 0 || n_in == 4 {
                continue;
            }
            let (ii, jj) = (i as i64, j as i64);
            let keys: [Key; 4] = [
                (2 * ii + 1, 2 * jj),
                (2 * ii + 2, 2 * jj + 1),
                (2 * ii + 1, 2 * jj + 2),
                (2 * ii, 2 * jj + 1),
            ];
            let exits: Vec<usize> = (0..4).filter(|&e| state[e] && !state[(e + 1) % 4]).collect();
            let is_entry = |e: usize| !state[e] && state[(e + 1) % 4];
            let center_inside = n_in as f64 / 4.0 >= 0.5;
            for &e in &exits {
                let entry = if center_inside {
                    (1..4).map(|d| (e + d) % 4).find(|&x| is_entry(x))
                } else {
                    (1..4).map(|d| (e + 4 - d) % 4).find(|&x| is_entry(x))
                }
                .expect("every exit crossing has an entry crossing");
                next.insert(keys[e], keys[entry]);
            }
        }
    }

    let to_point = |key: Key| {
        Point2::new(
            (key.0 as f64 / 2.0 - 0.5) * pixel_size,
            (key.1 as f64 / 2.0 - 0.5) * pixel_size,
        )
    };
    let mut visited: HashSet<Key> = HashSet::new();
    let mut curves = Vec::new();
    for &start in next.keys() {
        if visited.contains(&start) {
            continue;
        }
        let mut ring = Vec::new();
        let mut cur = start;
        loop {
            visited.insert(cur);
            ring.push(to_point(cur));
            cur = next[&cur];
            if cur == start {
                break;
            }
        }
        let ring = drop_collinear(ring);
        if let Ok(c) = Curve::new(ring, true, label) {
            curves.push(c);
        }
    }
    curves
}

fn drop_collinear(ring: Vec<Point2>) -> Vec<Point2> {
    let n = ring.len();
    if n < 4 {
        return ring;
    }
    let keep: Vec<Point2> = (0..n)
        .filter(|&i| orient(ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]) != 0.0)
        .map(|i| ring[i])
        .collect();
    if keep.len() >= 3 {
        keep
    } else {
        ring
    }
}

/// [`extract_contours`] followed by optional decimation to `points` samples
/// per curve.
pub fn extract_contours_resampled(
    labels: &LabelImage,
    label: &str,
    pixel_size: f64,
    points: Option<usize>,
) -> Result<Vec<Curve>> {
    let curves = extract_contours(labels, label, pixel_size);
    match points {
        None => Ok(curves),
        Some(n) => curves.iter().map(|c| resample_equidistant(c, n)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(lo: f64, hi: f64, blur: f64) -> SegmentationSpec {
        SegmentationSpec {
            thresholds: vec![Threshold {
                label: "tissue".into(),
                lower: lo,
                upper: hi,
            }],
            smoothing_radius: blur,
        }
    }

    #[test]
    fn ascii_and_binary_pgm_agree() {
        let ascii = parse_pgm(b"P2 2 2 255\n0 255 255 0\n", 1.0).unwrap();
        assert_eq!(ascii.pixels(), &[0, 255, 255, 0]);
        let mut bin = b"P5\n2 2\n255\n".to_vec();
        bin.extend_from_slice(&[0, 255, 255, 0]);
        assert_eq!(parse_pgm(&bin, 1.0).unwrap(), ascii);
    }

    #[test]
    fn pgm_errors() {
        assert!(parse_pgm(b"P3 2 2 255 0 0 0 0", 1.0).unwrap_err().contains("magic"));
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00\x01", 1.0).unwrap_err().contains("truncated"));
        assert!(parse_pgm(b"P2 2 2 70000 0 0 0 0", 1.0).unwrap_err().contains("maxval"));
        assert!(parse_pgm(b"P2 2 2 255 0 0 0", 1.0).unwrap_err().contains("truncated"));
        assert!(parse_pgm(b"P2 # comment\n2 2 255 0 1 2 3", 1.0).is_ok());
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let img = GrayImage::from_fn(5, 3, 0.5, |c, r| (c * 1000 + r * 17) as u16 * 7).unwrap();
        let back = parse_pgm(&img.to_pgm(true), 0.5).unwrap();
        assert_eq!(back, img);
        let back = parse_pgm(&img.to_pgm(false), 0.5).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn threshold_constant_and_bimodal() {
        let img = GrayImage::from_fn(8, 8, 1.0, |_, _| 42).unwrap();
        let l = segment_threshold(&img, &spec(0.0, 100.0, 0.0)).unwrap();
        assert_eq!(l.count("tissue"), 64);

        let img = GrayImage::from_fn(8, 8, 1.0, |c, r| if (c + r) % 3 == 0 { 255 } else { 0 }).unwrap();
        let l = segment_threshold(&img, &spec(128.0, 255.0, 0.0)).unwrap();
        for (v, px) in l.data.iter().zip(img.pixels()) {
            assert_eq!(*v == 1, *px == 255);
        }
    }

    #[test]
    fn overlapping_intervals_rejected() {
        let s = SegmentationSpec {
            thresholds: vec![
                Threshold { label: "a".into(), lower: 0.0, upper: 10.0 },
                Threshold { label: "b".into(), lower: 10.0, upper: 20.0 },
            ],
            smoothing_radius: 0.0,
        };
        assert!(s.validate().is_err());
        let dup = SegmentationSpec {
            thresholds: vec![
                Threshold { label: "a".into(), lower: 0.0, upper: 1.0 },
                Threshold { label: "a".into(), lower: 5.0, upper: 6.0 },
            ],
            smoothing_radius: 0.0,
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn threshold_flag_parsing() {
        let t = SegmentationSpec::parse_threshold("100:255:bud", 0).unwrap();
        assert_eq!((t.lower, t.upper, t.label.as_str()), (100.0, 255.0, "bud"));
        let t = SegmentationSpec::parse_threshold("1:2", 3).unwrap();
        assert_eq!(t.label, "region3");
        assert!(SegmentationSpec::parse_threshold("1", 0).is_err());
    }

    #[test]
    fn square_contour_area() {
        let img = GrayImage::from_fn(20, 20, 0.5, |c, r| {
            if (5..15).contains(&c) && (5..15).contains(&r) { 255 } else { 0 }
        })
        .unwrap();
        let l = segment_threshold(&img, &spec(128.0, 255.0, 0.0)).unwrap();
        let curves = extract_contours(&l, "tissue", 0.5);
        assert_eq!(curves.len(), 1);
        let area = curves[0].signed_area().unwrap();
        // pixel count 100 minus four half-pixel corner cuts
        assert!((area - 99.5 * 0.25).abs() < 1e-12, "area {area}");
        assert!(curves[0].is_simple());
    }

    #[test]
    fn annulus_orientation() {
        let img = GrayImage::from_fn(40, 40, 1.0, |c, r| {
            let d = ((c as f64 - 19.5).powi(2) + (r as f64 - 19.5).powi(2)).sqrt();
            if (8.0..16.0).contains(&d) { 200 } else { 0 }
        })
        .unwrap();
        let l = segment_threshold(&img, &spec(100.0, 255.0, 0.0)).unwrap();
        let curves = extract_contours(&l, "tissue", 1.0);
        assert_eq!(curves.len(), 2);
        let mut areas: Vec<f64> = curves.iter().map(|c| c.signed_area().unwrap()).collect();
        areas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(areas[0] < 0.0 && areas[1] > 0.0);
        let net = areas[0] + areas[1];
        let count = l.count("tissue") as f64;
        let perimeter: f64 = curves.iter().map(|c| c.length()).sum();
        assert!((net - count).abs() <= 0.5 * perimeter);
    }

    #[test]
    fn absent_label_gives_nothing() {
        let img = GrayImage::from_fn(4, 4, 1.0, |_, _| 0).unwrap();
        let l = segment_threshold(&img, &spec(10.0, 20.0, 0.0)).unwrap();
        assert!(extract_contours(&l, "tissue", 1.0).is_empty());
        assert!(extract_contours(&l, "other", 1.0).is_empty());
    }

    #[test]
    fn diagonal_pixels_join() {
        // two pixels touching at a corner form one component
        let img = GrayImage::from_fn(4, 4, 1.0, |c, r| {
            if (c, r) == (1, 1) || (c, r) == (2, 2) { 255 } else { 0 }
        })
        .unwrap();
        let l = segment_threshold(&img, &spec(100.0, 255.0, 0.0)).unwrap();
        let curves = extract_contours(&l, "tissue", 1.0);
        assert_eq!(curves.len(), 1);
        assert!(curves[0].is_simple());
    }
}
