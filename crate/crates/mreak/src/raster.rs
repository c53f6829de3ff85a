//! 8-bit raster images, lossless PNM I/O, grayscale conversion, integral
//! images and match-visualization rendering.

use crate::descriptor::Branch;
use crate::matcher::Match;
use crate::{Error, Result};

/// Row-major 8-bit image, 1 (gray) or 3 (interleaved RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: u8,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: u8, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::BadImageShape {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        if data.len() != width * height * channels as usize {
            return Err(Error::BadImageShape {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Constant-valued single-channel image.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
    }

    /// Single-channel image computed per pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels as usize + c]
    }

    /// BT.601 luma conversion; single-channel input passes through unchanged.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(3) {
            let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            data.push(y.round().clamp(0.0, 255.0) as u8);
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}

/// Parse a binary PGM (P5) or PPM (P6) file with maxval 255.
pub fn load_pnm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 {
        return Err(Error::PnmParse("file too short for magic".into()));
    }
    let channels: u8 = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::PnmParse("expected P5 or P6 magic".into())),
    };
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos)? as usize;
    let height = read_header_int(bytes, &mut pos)? as usize;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::PnmMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(Error::PnmParse("zero image dimension".into()));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::PnmParse("missing whitespace after maxval".into())),
    }
    let expected = width * height * channels as usize;
    let found = bytes.len() - pos;
    if found < expected {
        return Err(Error::PnmTruncated { expected, found });
    }
    Image::new(width, height, channels, bytes[pos..pos + expected].to_vec())
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    // Skip whitespace and '#' comments.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(b) = bytes.get(*pos) {
                    *pos += 1;
                    if *b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    let mut value: u64 = 0;
    while let Some(b) = bytes.get(*pos) {
        if !b.is_ascii_digit() {
            break;
        }
        value = value * 10 + (b - b'0') as u64;
        if value > u32::MAX as u64 {
            return Err(Error::PnmParse("header number out of range".into()));
        }
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::PnmParse("expected a header number".into()));
    }
    Ok(value as u32)
}

/// Serialize with the canonical header `P5\n<w> <h>\n255\n` (or `P6`).
pub fn save_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{}\n{} {}\n255\n", magic, img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Summed-area table over a single-channel image; cell (i, j) holds the sum
/// of all pixels in the rectangle [0,i) x [0,j).
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    cells: Vec<u64>,
}

impl IntegralImage {
    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels != 1 {
            return Err(Error::NotSingleChannel(img.channels));
        }
        let (w, h) = (img.width, img.height);
        let mut cells = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0u64;
            for x in 0..w {
                row_sum += img.data[y * w + x] as u64;
                cells[(y + 1) * (w + 1) + (x + 1)] = cells[y * (w + 1) + (x + 1)] + row_sum;
            }
        }
        Ok(Self {
            width: w,
            height: h,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sum over the half-open box [x0,x1) x [y0,y1), four lookups.
    #[inline]
    pub fn box_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        debug_assert!(x0 <= x1 && x1 <= self.width);
        debug_assert!(y0 <= y1 && y1 <= self.height);
        let s = self.width + 1;
        self.cells[y1 * s + x1] + self.cells[y0 * s + x0]
            - self.cells[y0 * s + x1]
            - self.cells[y1 * s + x0]
    }

    /// Mean over the half-open box, rounded to the nearest 1/256.
    #[inline]
    pub fn box_mean(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let area = ((x1 - x0) * (y1 - y0)) as u64;
        debug_assert!(area > 0);
        let sum = self.box_sum(x0, y0, x1, y1);
        let q = (256 * sum + area / 2) / area;
        q as f64 / 256.0
    }
}

fn branch_color(branch: Branch) -> [u8; 3] {
    match branch {
        Branch::Baseline => [0, 200, 0],
        Branch::Open => [255, 96, 0],
        Branch::Close => [0, 128, 255],
    }
}

/// Side-by-side canvas with one line segment and endpoint markers per match.
/// Endpoints in `b` are offset right by `a`'s width.
pub fn draw_matches(a: &Image, b: &Image, matches: &[Match]) -> Image {
    let width = a.width + b.width;
    let height = a.height.max(b.height);
    let mut canvas = vec![0u8; width * height * 3];

    let mut blit = |img: &Image, x_off: usize| {
        for y in 0..img.height {
            for x in 0..img.width {
                let dst = (y * width + x + x_off) * 3;
                match img.channels {
                    1 => {
                        let v = img.sample(x, y, 0);
                        canvas[dst..dst + 3].copy_from_slice(&[v, v, v]);
                    }
                    _ => {
                        for c in 0..3 {
                            canvas[dst + c] = img.sample(x, y, c);
                        }
                    }
                }
            }
        }
    };
    blit(a, 0);
    blit(b, a.width);

    let mut set_px = |x: i64, y: i64, color: [u8; 3]| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            let dst = (y as usize * width + x as usize) * 3;
            canvas[dst..dst + 3].copy_from_slice(&color);
        }
    };

    for m in matches {
        let color = branch_color(m.branch);
        let (x0, y0) = (m.x_a.round() as i64, m.y_a.round() as i64);
        let (x1, y1) = (m.x_b.round() as i64 + a.width as i64, m.y_b.round() as i64);
        // Bresenham line.
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y) = (x0, y0);
        let mut err = dx + dy;
        loop {
            set_px(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
        // 3x3 endpoint markers.
        for (mx, my) in [(x0, y0), (x1, y1)] {
            for oy in -1..=1 {
                for ox in -1..=1 {
                    set_px(mx + ox, my + oy, color);
                }
            }
        }
    }

    Image {
        width,
        height,
        channels: 3,
        data: canvas,
    }
}
