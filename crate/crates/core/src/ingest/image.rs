//! Grayscale images, binary PGM I/O and oriented patch extraction.

use std::io::Write;
use std::path::Path;

use crate::descriptor::{GlobalDescriptor, RealDescriptor};
use crate::error::{Error, Result};
use crate::map::KeypointGeometry;

/// Side length of extracted patches.
pub const PATCH_SIZE: usize = 32;
/// Default ratio of patch side to keypoint scale.
pub const DEFAULT_PATCH_COEFFICIENT: f64 = 13.0;
/// Block size used when reducing a patch to a descriptor.
const DESCRIPTOR_BLOCK: usize = 4;
/// Block sums this close to their mean count as a flat patch.
const FLAT_PATCH_TOLERANCE: f64 = 1e-9;

/// Row-major intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!("image size {width}x{height} is empty")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    /// Fills every pixel from `f(x, y)`, clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear interpolation; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let (maxx, maxy) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= maxx && y <= maxy) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }
}

/// Reads a binary (P5) PGM with maxval up to 65535.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let bad = |m: &str| Error::InvalidInput(format!("PGM: {m}"));
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
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 images are supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("invalid header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bpp))
        .ok_or_else(|| bad("image too large"))?;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated raster"))?;
    let data = if bpp == 1 {
        raster.iter().map(|&b| (b as f64 / maxval as f64).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64).min(1.0))
            .collect()
    };
    GrayImage::new(width, height, data)
}

/// Writes an 8-bit binary PGM.
pub fn write_pgm<W: Write>(image: &GrayImage, mut out: W) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)?;
    let raster: Vec<u8> = image.data.iter().map(|v| (v * 255.0).round() as u8).collect();
    out.write_all(&raster)
}

pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pgm(&bytes)
}

pub fn save_pgm(image: &GrayImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_pgm(image, &mut bytes).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A `PATCH_SIZE` x `PATCH_SIZE` row-major patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch(pub Vec<f64>);

/// Crops the square of side `scale * coefficient` around the keypoint,
/// rotated by the keypoint orientation, and resamples it to 32x32.
///
/// Patch pixel `(i, j)` samples `c + R(orientation) * o` with
/// `o = ((i + 0.5) / 32 - 0.5, (j + 0.5) / 32 - 0.5) * side`.
pub fn extract_patch(image: &GrayImage, kp: &KeypointGeometry, coefficient: f64) -> Result<Patch> {
    if !(coefficient > 0.0 && coefficient.is_finite()) {
        return Err(Error::Config(format!("patch coefficient must be positive, got {coefficient}")));
    }
    let side = kp.scale * coefficient;
    let (s, c) = kp.orientation.sin_cos();
    let [cx, cy] = kp.pixel;
    let place = |ox: f64, oy: f64| (cx + c * ox - s * oy, cy + s * ox + c * oy);
    let half = side / 2.0;
    let (maxx, maxy) = ((image.width - 1) as f64, (image.height - 1) as f64);
    for (ox, oy) in [(-half, -half), (half, -half), (-half, half), (half, half)] {
        let (x, y) = place(ox, oy);
        if !(x >= 0.0 && y >= 0.0 && x <= maxx && y <= maxy) {
            return Err(Error::InvalidInput(format!(
                "patch of side {side:.1} at ({cx:.1}, {cy:.1}) leaves the {}x{} image",
                image.width, image.height
            )));
        }
    }
    let step = side / PATCH_SIZE as f64;
    let mut out = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
    for j in 0..PATCH_SIZE {
        let oy = (j as f64 + 0.5) * step - half;
        for i in 0..PATCH_SIZE {
            let ox = (i as f64 + 0.5) * step - half;
            let (x, y) = place(ox, oy);
            // corners are inside, so every interior sample is too
            out.push(image.sample(x, y).unwrap_or(0.0));
        }
    }
    Ok(Patch(out))
}

/// Local descriptor of a patch: 4x4 block means, mean-subtracted and scaled
/// to unit length. Fails on a flat patch.
pub fn describe_patch(patch: &Patch) -> Result<RealDescriptor> {
    let cells = PATCH_SIZE / DESCRIPTOR_BLOCK;
    let mut v = vec![0.0; cells * cells];
    for (k, value) in patch.0.iter().enumerate() {
        let (x, y) = (k % PATCH_SIZE, k / PATCH_SIZE);
        v[(y / DESCRIPTOR_BLOCK) * cells + x / DESCRIPTOR_BLOCK] += value;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    if v.iter().all(|x| x.abs() <= FLAT_PATCH_TOLERANCE) {
        return Err(Error::InvalidDescriptor("patch has no contrast".into()));
    }
    RealDescriptor::normalized(v)
}

/// Global descriptor of a whole image: block means on a `cols` x `rows`
/// grid, mean-subtracted and scaled to unit length.
pub fn thumbnail_descriptor(image: &GrayImage, cols: usize, rows: usize) -> Result<GlobalDescriptor> {
    if cols == 0 || rows == 0 || cols > image.width || rows > image.height {
        return Err(Error::Config(format!("invalid thumbnail grid {cols}x{rows}")));
    }
    let mut sums = vec![0.0; cols * rows];
    let mut counts = vec![0usize; cols * rows];
    for y in 0..image.height {
        for x in 0..image.width {
            let cell = (y * rows / image.height) * cols + x * cols / image.width;
            sums[cell] += image.get(x, y);
            counts[cell] += 1;
        }
    }
    let mut v: Vec<f64> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    GlobalDescriptor::normalized(v)
}
