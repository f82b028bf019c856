//! Grayscale preprocessing: threshold, morphology, largest-component extreme
//! points crop, bicubic resize, and rotation/flip augmentation. Images move
//! in and out as binary PGM (P5, maxval 255).

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::shape(format!("{height}x{width} pixels"), pixels.len()));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self { height, width, pixels: vec![value; height * width] }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let w = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::shape("rectangular rows", "ragged rows"));
        }
        Self::new(rows.len(), w, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.pixels.chunks(self.width).map(<[u8]>::to_vec).collect()
    }

    /// Sub-image covering rows `top..=bottom` and columns `left..=right`.
    pub fn crop(&self, b: &CropBounds) -> GrayImage {
        let mut pixels = Vec::with_capacity(b.height() * b.width());
        for y in b.top..=b.bottom {
            pixels.extend_from_slice(&self.pixels[y * self.width + b.left..=y * self.width + b.right]);
        }
        GrayImage { height: b.height(), width: b.width(), pixels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropParams {
    /// Foreground is every pixel strictly brighter than this.
    pub threshold: u8,
    /// Dilations, then the same number of erosions.
    pub morph_iterations: usize,
    /// Gaussian blur radius in pixels; 0 disables the blur.
    pub blur_radius: usize,
    /// Output (height, width).
    pub target_size: (usize, usize),
}

impl Default for CropParams {
    fn default() -> Self {
        Self { threshold: 45, morph_iterations: 2, blur_radius: 2, target_size: (224, 224) }
    }
}

impl CropParams {
    fn validate(&self) -> Result<()> {
        if self.threshold == 0 || self.threshold == 255 {
            return Err(Error::Config(format!("threshold {} must lie strictly inside (0, 255)", self.threshold)));
        }
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::Config("target size must be positive".into()));
        }
        Ok(())
    }
}

/// Inclusive pixel bounds of a crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBounds {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl CropBounds {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }
}

pub const MIN_CROP_SIDE: usize = 8;

/// Binary foreground mask after blur, threshold, and closing.
pub fn foreground_mask(img: &GrayImage, p: &CropParams) -> Vec<bool> {
    let blurred = if p.blur_radius > 0 { gaussian_blur(img, p.blur_radius) } else { img.clone() };
    let mask: Vec<bool> = blurred.pixels.iter().map(|&v| v > p.threshold).collect();
    if p.morph_iterations == 0 {
        return mask;
    }
    // Pad with background so the closing behaves as if the image continued.
    let pad = p.morph_iterations + 1;
    let (h, w) = (img.height, img.width);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![false; ph * pw];
    for y in 0..h {
        padded[(y + pad) * pw + pad..(y + pad) * pw + pad + w].copy_from_slice(&mask[y * w..(y + 1) * w]);
    }
    for _ in 0..p.morph_iterations {
        padded = morph(&padded, ph, pw, true);
    }
    for _ in 0..p.morph_iterations {
        padded = morph(&padded, ph, pw, false);
    }
    (0..h).flat_map(|y| padded[(y + pad) * pw + pad..(y + pad) * pw + pad + w].to_vec()).collect()
}

/// One dilation (`dilate = true`) or erosion with a 3x3 cross. Out-of-image
/// neighbours are ignored.
fn morph(mask: &[bool], h: usize, w: usize, dilate: bool) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = mask[y * w + x];
            let neighbours = [
                (y.wrapping_sub(1), x),
                (y + 1, x),
                (y, x.wrapping_sub(1)),
                (y, x + 1),
            ];
            for (ny, nx) in neighbours {
                if ny < h && nx < w {
                    let v = mask[ny * w + nx];
                    acc = if dilate { acc || v } else { acc && v };
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn gaussian_blur(img: &GrayImage, radius: usize) -> GrayImage {
    // Same sigma rule OpenCV uses for a kernel of size 2r+1.
    let sigma = 0.3 * (radius as f64 - 1.0) + 0.8;
    let kernel: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (h, w) = (img.height as isize, img.width as isize);
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let mut tmp = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let xx = clamp(x + k as isize - radius as isize, w);
                s += wt * img.pixels[y as usize * img.width + xx] as f64;
            }
            tmp[y as usize * img.width + x as usize] = s / norm;
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let yy = clamp(y + k as isize - radius as isize, h);
                s += wt * tmp[yy * img.width + x as usize];
            }
            out.pixels[y as usize * img.width + x as usize] = (s / norm).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Pixel indices of the largest 4-connected component of `mask`. Ties go to
/// the component met first in raster order.
pub fn largest_component(mask: &[bool], h: usize, w: usize) -> Option<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut best: Option<Vec<usize>> = None;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        if best.as_ref().is_none_or(|b| comp.len() > b.len()) {
            best = Some(comp);
        }
    }
    best
}

/// Extreme points (topmost, bottommost, leftmost, rightmost) of the largest
/// foreground component.
pub fn crop_bounds(img: &GrayImage, p: &CropParams) -> Result<CropBounds> {
    p.validate()?;
    if img.height < MIN_CROP_SIDE || img.width < MIN_CROP_SIDE {
        return Err(Error::Crop(format!(
            "image {}x{} is smaller than {MIN_CROP_SIDE}x{MIN_CROP_SIDE}",
            img.height, img.width
        )));
    }
    let mask = foreground_mask(img, p);
    let comp = largest_component(&mask, img.height, img.width)
        .ok_or_else(|| Error::Crop("no foreground after thresholding".into()))?;
    let w = img.width;
    let mut b = CropBounds { top: usize::MAX, bottom: 0, left: usize::MAX, right: 0 };
    for i in comp {
        let (y, x) = (i / w, i % w);
        b.top = b.top.min(y);
        b.bottom = b.bottom.max(y);
        b.left = b.left.min(x);
        b.right = b.right.max(x);
    }
    Ok(b)
}

/// Crops to the extreme points of the largest foreground component and
/// resizes the result to `p.target_size`.
pub fn crop_extreme_points(img: &GrayImage, p: &CropParams) -> Result<GrayImage> {
    let b = crop_bounds(img, p)?;
    Ok(resize_bicubic(&img.crop(&b), p.target_size))
}

/// [`crop_extreme_points`], falling back to resizing the whole image when no
/// crop can be computed. The flag reports whether the fallback was taken.
pub fn preprocess(img: &GrayImage, p: &CropParams) -> Result<(GrayImage, bool)> {
    p.validate()?;
    match crop_extreme_points(img, p) {
        Ok(out) => Ok((out, false)),
        Err(Error::Crop(_)) => Ok((resize_bicubic(img, p.target_size), true)),
        Err(e) => Err(e),
    }
}

/// Keys cubic convolution kernel with a = -0.5.
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// For each output coordinate, the four source taps and their weights.
fn resize_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = (o as f64 + 0.5) * scale - 0.5;
            let base = pos.floor();
            let frac = pos - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let s = base as isize + k as isize - 1;
                idx[k] = s.clamp(0, src as isize - 1) as usize;
                wts[k] = cubic_weight(frac - (k as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resize to `(height, width)` with edge clamping.
pub fn resize_bicubic(img: &GrayImage, size: (usize, usize)) -> GrayImage {
    let (oh, ow) = size;
    assert!(oh > 0 && ow > 0, "resize target must be positive");
    let xt = resize_taps(img.width, ow);
    let yt = resize_taps(img.height, oh);
    let mut tmp = vec![0.0; img.height * ow];
    for y in 0..img.height {
        let row = &img.pixels[y * img.width..(y + 1) * img.width];
        for (x, (idx, wts)) in xt.iter().enumerate() {
            tmp[y * ow + x] = (0..4).map(|k| wts[k] * row[idx[k]] as f64).sum();
        }
    }
    let mut pixels = vec![0u8; oh * ow];
    for (y, (idx, wts)) in yt.iter().enumerate() {
        for x in 0..ow {
            let v: f64 = (0..4).map(|k| wts[k] * tmp[idx[k] * ow + x]).sum();
            pixels[y * ow + x] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    GrayImage { height: oh, width: ow, pixels }
}

/// One clockwise quarter turn.
fn rotate90(img: &GrayImage) -> GrayImage {
    let (h, w) = (img.height, img.width);
    let mut pixels = vec![0u8; h * w];
    for y in 0..w {
        for x in 0..h {
            pixels[y * h + x] = img.get(h - 1 - x, y);
        }
    }
    GrayImage { height: w, width: h, pixels }
}

fn hflip(img: &GrayImage) -> GrayImage {
    let mut out = img.clone();
    for row in out.pixels.chunks_mut(img.width) {
        row.reverse();
    }
    out
}

/// `k_rot` clockwise quarter turns followed by an optional horizontal mirror.
pub fn augment(img: &GrayImage, k_rot: usize, flip: bool) -> GrayImage {
    let mut out = img.clone();
    for _ in 0..k_rot % 4 {
        out = rotate90(&out);
    }
    if flip {
        out = hflip(&out);
    }
    out
}

/// The original plus every 90/180/270 rotation, each with and without a flip.
pub fn augment_all(img: &GrayImage) -> Vec<GrayImage> {
    let mut out = vec![img.clone()];
    for k in 1..4 {
        let r = augment(img, k, false);
        out.push(hflip(&r));
        out.push(r);
    }
    out
}

/// Parses a binary PGM (P5) with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let bad = |r: &str| Error::Format { path: "<pgm>".into(), reason: r.to_string() };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated raster"))?;
    GrayImage::new(h, w, raster.to_vec())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format { reason, .. } => Error::Format { path: path.to_path_buf(), reason },
        other => other,
    })
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}
