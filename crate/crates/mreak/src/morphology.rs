//! Flat-kernel grayscale morphology: erosion, dilation, opening, closing.
//! Multi-channel images are processed per channel; borders replicate the
//! edge pixel so no artificial dark or bright rim appears.

use crate::raster::Image;
use crate::{Error, Result};

/// Flat rectangular structuring element with odd sides, anchored at center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    width: usize,
    height: usize,
}

impl StructuringElement {
    pub fn rect(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || width % 2 == 0 || height % 2 == 0 {
            return Err(Error::BadStructuringElement { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn square(size: usize) -> Result<Self> {
        Self::rect(size, size)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self {
            width: 3,
            height: 3,
        }
    }
}

fn windowed(img: &Image, se: &StructuringElement, pick: fn(u8, u8) -> u8) -> Image {
    let (w, h) = (img.width(), img.height());
    let channels = img.channels() as usize;
    let (rx, ry) = (se.width as isize / 2, se.height as isize / 2);
    let mut out = Vec::with_capacity(w * h * channels);
    for y in 0..h as isize {
        for x in 0..w as isize {
            for c in 0..channels {
                let mut acc: Option<u8> = None;
                for dy in -ry..=ry {
                    let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -rx..=rx {
                        let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                        let v = img.sample(sx, sy, c);
                        acc = Some(match acc {
                            None => v,
                            Some(a) => pick(a, v),
                        });
                    }
                }
                out.push(acc.unwrap());
            }
        }
    }
    Image::new(w, h, img.channels(), out).unwrap()
}

/// Windowed min per channel.
pub fn erode(img: &Image, se: &StructuringElement) -> Image {
    windowed(img, se, u8::min)
}

/// Windowed max per channel.
pub fn dilate(img: &Image, se: &StructuringElement) -> Image {
    windowed(img, se, u8::max)
}

/// Erosion followed by dilation.
pub fn open(img: &Image, se: &StructuringElement) -> Image {
    dilate(&erode(img, se), se)
}

/// Dilation followed by erosion.
pub fn close(img: &Image, se: &StructuringElement) -> Image {
    erode(&dilate(img, se), se)
}
