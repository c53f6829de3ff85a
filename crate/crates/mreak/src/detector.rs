//! Harris corner detection with radius non-maximum suppression and a border
//! margin wide enough for the sampling pattern to stay in-bounds.

use rayon::prelude::*;

use crate::raster::Image;
use crate::{Error, Result};

/// Corner keypoint. `angle` stays `None` until orientation assigns it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub response: f32,
    pub angle: Option<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub harris_k: f64,
    /// Side of the structure-tensor summation window, in pixels.
    pub block: usize,
    /// Response threshold as a fraction of the maximum response.
    pub threshold_rel: f64,
    /// Chebyshev suppression radius.
    pub nms_radius: usize,
    pub max_keypoints: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            harris_k: 0.04,
            block: 3,
            threshold_rel: 0.01,
            nms_radius: 5,
            max_keypoints: 2000,
        }
    }
}

impl DetectorParams {
    fn validate(&self) -> Result<()> {
        if self.harris_k <= 0.0
            || self.block == 0
            || self.nms_radius == 0
            || self.max_keypoints == 0
        {
            return Err(Error::Config("detector parameters must be positive".into()));
        }
        if !(self.threshold_rel > 0.0 && self.threshold_rel < 1.0) {
            return Err(Error::Config(format!(
                "threshold_rel {} outside (0,1)",
                self.threshold_rel
            )));
        }
        Ok(())
    }
}

#[inline]
fn clamped(img: &Image, x: isize, y: isize) -> i32 {
    let sx = x.clamp(0, img.width() as isize - 1) as usize;
    let sy = y.clamp(0, img.height() as isize - 1) as usize;
    img.sample(sx, sy, 0) as i32
}

fn sobel(img: &Image) -> (Vec<i32>, Vec<i32>) {
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0i32; w * h];
    let mut gy = vec![0i32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| clamped(img, x + dx, y + dy);
            gx[y as usize * w + x as usize] = -p(-1, -1) + p(1, -1) - 2 * p(-1, 0) + 2 * p(1, 0)
                - p(-1, 1)
                + p(1, 1);
            gy[y as usize * w + x as usize] = -p(-1, -1) - 2 * p(0, -1) - p(1, -1)
                + p(-1, 1)
                + 2 * p(0, 1)
                + p(1, 1);
        }
    }
    (gx, gy)
}

/// Per-pixel corner response det(M) - k * trace(M)^2, where M is the Sobel
/// structure tensor box-summed over a block x block window (replicated
/// borders, exact integer sums).
pub fn harris_response(img: &Image, params: &DetectorParams) -> Result<Vec<f64>> {
    if img.channels() != 1 {
        return Err(Error::NotSingleChannel(img.channels()));
    }
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    if w <= params.block || h <= params.block {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            block: params.block,
        });
    }
    let (gx, gy) = sobel(img);
    let r = params.block as isize / 2;
    let k = params.harris_k;

    let mut resp = vec![0.0f64; w * h];
    resp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y = y as isize;
        for x in 0..w as isize {
            let (mut xx, mut yy, mut xy) = (0i64, 0i64, 0i64);
            for dy in -r..=r {
                let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                    let (a, b) = (gx[sy * w + sx] as i64, gy[sy * w + sx] as i64);
                    xx += a * a;
                    yy += b * b;
                    xy += a * b;
                }
            }
            let det = (xx * yy - xy * xy) as f64;
            let trace = (xx + yy) as f64;
            row[x as usize] = det - k * trace * trace;
        }
    });
    Ok(resp)
}

/// Thresholded, non-maximum-suppressed corners inside the margin, sorted by
/// descending response (ties row-major) and truncated to `max_keypoints`.
pub fn detect(img: &Image, params: &DetectorParams, margin: usize) -> Result<Vec<Keypoint>> {
    let resp = harris_response(img, params)?;
    let (w, h) = (img.width(), img.height());

    let max_r = resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max_r > 0.0) {
        return Ok(Vec::new());
    }
    let threshold = params.threshold_rel * max_r;

    let nms = params.nms_radius as isize;
    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let r = resp[y * w + x];
            if !(r > threshold) {
                continue;
            }
            // Suppressed by a strictly greater neighbor, or an equal one that
            // comes earlier in row-major order.
            let mut is_peak = true;
            'scan: for dy in -nms..=nms {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in -nms..=nms {
                    let sx = x as isize + dx;
                    if sx < 0 || sx >= w as isize || (dx == 0 && dy == 0) {
                        continue;
                    }
                    let q = resp[sy as usize * w + sx as usize];
                    if q > r || (q == r && (sy as usize, sx as usize) < (y, x)) {
                        is_peak = false;
                        break 'scan;
                    }
                }
            }
            if is_peak {
                kept.push((x, y, r));
            }
        }
    }

    if w <= 2 * margin || h <= 2 * margin {
        return Ok(Vec::new());
    }
    kept.retain(|&(x, y, _)| x >= margin && x < w - margin && y >= margin && y < h - margin);

    kept.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then_with(|| (a.1, a.0).cmp(&(b.1, b.0)))
    });
    kept.truncate(params.max_keypoints);

    Ok(kept
        .into_iter()
        .map(|(x, y, r)| Keypoint {
            x: x as f32,
            y: y as f32,
            response: r as f32,
            angle: None,
        })
        .collect())
}
