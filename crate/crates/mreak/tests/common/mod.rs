//! Synthetic fixtures shared by the integration suites.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Mutex;

use mreak::detector::Keypoint;
use mreak::raster::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Serializes the long-running tests so the timing comparisons are not run
/// against a machine busy with other tests from the same binary.
pub static HEAVY: Mutex<()> = Mutex::new(());

/// Smooth anisotropic multi-Gaussian patch, values well below saturation so
/// brightness offsets up to +50 stay unclipped.
pub fn blob_patch(seed: u64, size: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussians = Vec::new();
    for _ in 0..4 {
        gaussians.push((
            rng.random_range(size as f64 * 0.25..size as f64 * 0.75),
            rng.random_range(size as f64 * 0.25..size as f64 * 0.75),
            rng.random_range(30.0..60.0f64),
            rng.random_range(3.0..9.0f64),
            rng.random_range(3.0..9.0f64),
            rng.random_range(0.0..PI),
        ));
    }
    Image::from_fn(size, size, |x, y| {
        let mut v = 20.0;
        for &(cx, cy, amp, s1, s2, phi) in &gaussians {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = dx * phi.cos() + dy * phi.sin();
            let w = -dx * phi.sin() + dy * phi.cos();
            v += amp * (-u * u / (2.0 * s1 * s1) - w * w / (2.0 * s2 * s2)).exp();
        }
        v.round().clamp(0.0, 200.0) as u8
    })
}

/// Speckled texture with bright and dark blobs on mid-gray, so both
/// morphology branches see structure.
pub fn speckle(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blobs = Vec::new();
    for _ in 0..(width * height / 250) {
        blobs.push((
            rng.random_range(0.0..width as f64),
            rng.random_range(0.0..height as f64),
            rng.random_range(1.5..4.0f64),
            if rng.random() { 1.0 } else { -1.0 } * rng.random_range(40.0..90.0),
        ));
    }
    Image::from_fn(width, height, |x, y| {
        let mut v = 120.0;
        for &(cx, cy, s, amp) in &blobs {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let d2 = dx * dx + dy * dy;
            if d2 < s * s * 9.0 {
                v += amp * (-d2 / (2.0 * s * s)).exp();
            }
        }
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// Crop a shifted view pair out of `src`: `a` is the left crop, `b` the crop
/// displaced `shift` pixels to the right with a gamma curve applied, so the
/// ground truth is x_b = x_a - shift, y_b = y_a.
pub fn gamma_shift(src: &Image, shift: usize, gamma: f64, width: usize) -> (Image, Image) {
    let h = src.height();
    let a = Image::from_fn(width, h, |x, y| src.sample(x, y, 0));
    let b = Image::from_fn(width, h, |x, y| {
        let v = src.sample(x + shift, y, 0) as f64 / 255.0;
        (v.powf(gamma) * 255.0).round().clamp(0.0, 255.0) as u8
    });
    (a, b)
}

/// Dense uniform noise; rich in corner responses everywhere.
pub fn noise(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(width, height, |_, _| rng.random())
}

/// Quarter-turn counterclockwise rotation of a square image about its center.
pub fn rot90(img: &Image) -> Image {
    let n = img.width();
    assert_eq!(n, img.height());
    Image::from_fn(n, n, |x, y| img.sample(y, n - 1 - x, 0))
}

pub fn center_kp(img: &Image) -> Keypoint {
    Keypoint {
        x: (img.width() / 2) as f32,
        y: (img.height() / 2) as f32,
        response: 1.0,
        angle: None,
    }
}

/// Wrap an angle difference into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}
