//! Retinal sampling patterns: a center field plus 7 concentric rings of 6
//! receptive fields. The Opening variant pulls rings and field sizes toward
//! the center, the Closing variant pushes them outward; both leave the
//! outermost ring untouched. Field intensities are box means read from an
//! integral image, with the pattern pre-rotated into discrete bins.

use std::f64::consts::PI;

use crate::detector::Keypoint;
use crate::raster::IntegralImage;
use crate::{Error, Result};

pub const RING_COUNT: usize = 7;
pub const POINTS_PER_RING: usize = 6;
/// 7 rings x 6 points + 1 center field.
pub const FIELD_COUNT: usize = RING_COUNT * POINTS_PER_RING + 1;

/// Innermost and outermost ring radii in normalized pattern units.
const INNER_RADIUS: f64 = 0.08;
const OUTER_RADIUS: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Base,
    Opening,
    Closing,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Opening => "opening",
            Variant::Closing => "closing",
        }
    }
}

/// Sampling point offset and smoothing radius, in pattern units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptiveField {
    pub dx: f64,
    pub dy: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternParams {
    /// Radial modulation strength in (0,1); how much inner rings shrink
    /// (opening) or grow (closing).
    pub kappa: f64,
    /// Pixels per pattern unit.
    pub scale: f64,
    /// Number of precomputed rotated copies.
    pub rotation_bins: usize,
}

impl Default for PatternParams {
    fn default() -> Self {
        Self {
            kappa: 0.4,
            scale: 22.5,
            rotation_bins: 256,
        }
    }
}

/// A pattern variant instantiated at a pixel scale, with every rotation bin's
/// field positions precomputed in pixel units.
#[derive(Debug, Clone)]
pub struct SamplingPattern {
    variant: Variant,
    fields: Vec<ReceptiveField>,
    /// Box half-side per field, pixels.
    half_sides: Vec<i64>,
    /// rotated_px[bin][field] = field offset in pixels.
    rotated_px: Vec<Vec<(f64, f64)>>,
    scale: f64,
    rotation_bins: usize,
}

/// Ring radii, innermost (index 0) to outermost (index 6), geometric spacing.
fn ring_radii() -> [f64; RING_COUNT] {
    let mut radii = [0.0; RING_COUNT];
    for (i, r) in radii.iter_mut().enumerate() {
        *r = INNER_RADIUS * (OUTER_RADIUS / INNER_RADIUS).powf(i as f64 / (RING_COUNT - 1) as f64);
    }
    radii
}

pub fn build_pattern(variant: Variant, params: &PatternParams) -> Result<SamplingPattern> {
    if !(params.kappa > 0.0 && params.kappa < 1.0) {
        return Err(Error::Pattern(format!(
            "kappa {} outside (0,1)",
            params.kappa
        )));
    }
    if !(params.scale > 0.0) || params.rotation_bins == 0 {
        return Err(Error::Pattern(
            "scale must be positive and rotation_bins >= 1".into(),
        ));
    }

    let radii = ring_radii();
    let r_max = radii[RING_COUNT - 1];
    // Radial modulation: vanishes at the rim, strongest at the center.
    let modulation = |r: f64| -> f64 {
        let depth = 1.0 - r / r_max;
        match variant {
            Variant::Base => 1.0,
            Variant::Opening => 1.0 - params.kappa * depth,
            Variant::Closing => 1.0 + params.kappa * depth,
        }
    };
    // Half the gap to the neighboring ring; the outermost ring reuses the
    // gap below it.
    let sigma_of = |i: usize| -> f64 {
        if i + 1 < RING_COUNT {
            0.5 * (radii[i + 1] - radii[i])
        } else {
            0.5 * (radii[i] - radii[i - 1])
        }
    };

    // Outermost ring first, innermost ring last, center field at the end.
    let mut fields = Vec::with_capacity(FIELD_COUNT);
    for ring in (0..RING_COUNT).rev() {
        let s = modulation(radii[ring]);
        let radius = radii[ring] * s;
        let sigma = sigma_of(ring) * s;
        let offset = if ring % 2 == 1 { PI / 6.0 } else { 0.0 };
        for point in 0..POINTS_PER_RING {
            let theta = 2.0 * PI * point as f64 / POINTS_PER_RING as f64 + offset;
            fields.push(ReceptiveField {
                dx: radius * theta.cos(),
                dy: radius * theta.sin(),
                sigma,
            });
        }
    }
    fields.push(ReceptiveField {
        dx: 0.0,
        dy: 0.0,
        sigma: 0.5 * radii[0] * modulation(0.0),
    });

    let half_sides: Vec<i64> = fields
        .iter()
        .map(|f| ((f.sigma * params.scale).round() as i64).max(1))
        .collect();

    let rotated_px: Vec<Vec<(f64, f64)>> = (0..params.rotation_bins)
        .map(|bin| {
            let theta = 2.0 * PI * bin as f64 / params.rotation_bins as f64;
            let (sin, cos) = theta.sin_cos();
            fields
                .iter()
                .map(|f| {
                    (
                        params.scale * (f.dx * cos - f.dy * sin),
                        params.scale * (f.dx * sin + f.dy * cos),
                    )
                })
                .collect()
        })
        .collect();

    Ok(SamplingPattern {
        variant,
        fields,
        half_sides,
        rotated_px,
        scale: params.scale,
        rotation_bins: params.rotation_bins,
    })
}

impl SamplingPattern {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn fields(&self) -> &[ReceptiveField] {
        &self.fields
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation_bins(&self) -> usize {
        self.rotation_bins
    }

    /// Field offset in pixels for a rotation bin.
    pub fn rotated_offset_px(&self, field: usize, bin: usize) -> (f64, f64) {
        self.rotated_px[bin][field]
    }

    /// Box half-side of a field in pixels.
    pub fn half_side(&self, field: usize) -> i64 {
        self.half_sides[field]
    }

    /// Border width keypoints must keep from the image edge so that every
    /// field of every rotation bin reads in-bounds pixels.
    pub fn margin(&self) -> usize {
        let mut reach = 0.0f64;
        for (f, &h) in self.fields.iter().zip(&self.half_sides) {
            let dist = (f.dx * f.dx + f.dy * f.dy).sqrt() * self.scale;
            reach = reach.max(dist + h as f64);
        }
        reach.ceil() as usize + 1
    }

    /// Mean intensity of a field's box at a keypoint, for one rotation bin.
    /// Quantized to 1/256. Panics if the box leaves the image: callers must
    /// respect [`SamplingPattern::margin`].
    pub fn field_intensity(
        &self,
        ii: &IntegralImage,
        kp: &Keypoint,
        field: usize,
        bin: usize,
    ) -> f64 {
        let (dx, dy) = self.rotated_px[bin][field];
        let h = self.half_sides[field];
        let cx = (kp.x as f64 + dx).round() as i64;
        let cy = (kp.y as f64 + dy).round() as i64;
        let (x0, y0) = (cx - h, cy - h);
        let (x1, y1) = (cx + h + 1, cy + h + 1);
        assert!(
            x0 >= 0 && y0 >= 0 && x1 as usize <= ii.width() && y1 as usize <= ii.height(),
            "sampling box [{x0},{x1})x[{y0},{y1}) out of bounds for {}x{} image; \
             keypoint ({}, {}) violates the pattern margin",
            ii.width(),
            ii.height(),
            kp.x,
            kp.y,
        );
        ii.box_mean(x0 as usize, y0 as usize, x1 as usize, y1 as usize)
    }

    /// One record per field: variant, ring (-1 for the center), point index,
    /// dx, dy, sigma. Tab-separated, reals with 6 decimals.
    pub fn geometry_table(&self) -> String {
        let mut out = String::new();
        for (idx, f) in self.fields.iter().enumerate() {
            let (ring, point) = if idx == FIELD_COUNT - 1 {
                (-1i64, 0)
            } else {
                ((RING_COUNT - 1 - idx / POINTS_PER_RING) as i64, idx % POINTS_PER_RING)
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
                self.variant.name(),
                ring,
                point,
                f.dx,
                f.dy,
                f.sigma
            ));
        }
        out
    }
}
