//! Keypoint orientation, binary description, and sampling-pair selection.
//!
//! A descriptor is a bit string: bit `a` is 1 iff the first field of pair `a`
//! reads strictly brighter than the second, with the whole pattern rotated to
//! the keypoint's estimated orientation. Pairs come either from a geometric
//! outer-first default or from offline training on a keypoint corpus.

use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::detector::Keypoint;
use crate::raster::IntegralImage;
use crate::retina::{SamplingPattern, Variant, FIELD_COUNT};
use crate::{Error, Result};

/// Pairs used by the orientation vote.
pub const ORIENTATION_PAIR_COUNT: usize = 45;
/// All unordered field pairs: 43 * 42 / 2.
pub const PAIR_CANDIDATE_COUNT: usize = FIELD_COUNT * (FIELD_COUNT - 1) / 2;

const DESCRIPTOR_MAGIC: [u8; 4] = *b"MRK1";
const PAIR_SET_MAGIC: [u8; 4] = *b"MRP1";

/// Which processing branch a descriptor or match came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Baseline,
    Open,
    Close,
}

impl Branch {
    pub fn code(self) -> u8 {
        match self {
            Branch::Baseline => 0,
            Branch::Open => 1,
            Branch::Close => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Branch::Baseline),
            1 => Ok(Branch::Open),
            2 => Ok(Branch::Close),
            other => Err(Error::FileFormat(format!("unknown branch code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Baseline => "baseline",
            Branch::Open => "open",
            Branch::Close => "close",
        }
    }

    pub fn for_variant(variant: Variant) -> Branch {
        match variant {
            Variant::Base => Branch::Baseline,
            Variant::Opening => Branch::Open,
            Variant::Closing => Branch::Close,
        }
    }
}

/// The 45 center-symmetric field pairs that vote for orientation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrientationPairSet {
    pairs: Vec<(usize, usize)>,
}

impl OrientationPairSet {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Ordered comparison pairs defining the descriptor bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pairs: Vec<(u8, u8)>,
}

impl PairSet {
    pub fn new(pairs: Vec<(u8, u8)>) -> Result<Self> {
        if pairs.is_empty() || pairs.len() > PAIR_CANDIDATE_COUNT {
            return Err(Error::PairSelection(format!(
                "pair count {} outside 1..={PAIR_CANDIDATE_COUNT}",
                pairs.len()
            )));
        }
        let mut seen = [false; FIELD_COUNT * FIELD_COUNT];
        for &(i, j) in &pairs {
            if i as usize >= FIELD_COUNT || j as usize >= FIELD_COUNT || i == j {
                return Err(Error::PairSelection(format!("invalid field pair ({i}, {j})")));
            }
            let key = (i.min(j) as usize) * FIELD_COUNT + i.max(j) as usize;
            if seen[key] {
                return Err(Error::PairSelection(format!("duplicate field pair ({i}, {j})")));
            }
            seen[key] = true;
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(u8, u8)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Binary descriptor attached to an oriented keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    /// Bit `a` sits at byte `a / 8`, bit position `a % 8` (LSB-first).
    pub bits: Vec<u8>,
    pub bit_count: usize,
    pub keypoint: Keypoint,
    pub branch: Branch,
}

impl Descriptor {
    pub fn bit(&self, a: usize) -> bool {
        debug_assert!(a < self.bit_count);
        self.bits[a / 8] >> (a % 8) & 1 == 1
    }

    pub fn popcount(&self) -> u32 {
        self.bits.iter().map(|b| b.count_ones()).sum()
    }
}

/// Rows of descriptor bits over the full 903-pair candidate set, one row per
/// training keypoint; the raw material for [`train_pairs`].
#[derive(Debug, Clone, Default)]
pub struct PairTrainingMatrix {
    rows: usize,
    bits: Vec<bool>,
}

impl PairTrainingMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn entry(&self, row: usize, col: usize) -> bool {
        self.bits[row * PAIR_CANDIDATE_COUNT + col]
    }

    pub fn column_mean(&self, col: usize) -> f64 {
        let ones = (0..self.rows).filter(|&r| self.entry(r, col)).count();
        ones as f64 / self.rows as f64
    }

    pub fn push_row(&mut self, row: &[bool]) -> Result<()> {
        if row.len() != PAIR_CANDIDATE_COUNT {
            return Err(Error::PairSelection(format!(
                "training row has {} entries, expected {PAIR_CANDIDATE_COUNT}",
                row.len()
            )));
        }
        self.bits.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Append a descriptor computed over the full candidate pair set.
    pub fn push_descriptor(&mut self, d: &Descriptor) -> Result<()> {
        if d.bit_count != PAIR_CANDIDATE_COUNT {
            return Err(Error::PairSelection(format!(
                "training descriptors need {PAIR_CANDIDATE_COUNT} bits, got {}",
                d.bit_count
            )));
        }
        let row: Vec<bool> = (0..d.bit_count).map(|a| d.bit(a)).collect();
        self.push_row(&row)
    }
}

/// All 903 unordered field pairs, (i, j) with i < j, lexicographic. This is
/// the canonical column order of [`PairTrainingMatrix`].
pub fn candidate_pairs() -> Vec<(u8, u8)> {
    let mut out = Vec::with_capacity(PAIR_CANDIDATE_COUNT);
    for i in 0..FIELD_COUNT as u8 {
        for j in (i + 1)..FIELD_COUNT as u8 {
            out.push((i, j));
        }
    }
    out
}

/// Snap a pattern-unit length to 1e-9 so geometrically equal distances
/// compare as true ties regardless of floating-point noise (distinct ring
/// geometry differs by far more than this, libm noise by far less). Without
/// this the index tie-break below would never fire and the selection would
/// depend on the platform's cos/sin rounding.
fn distance_key(d: f64) -> i64 {
    (d * 1e9).round() as i64
}

/// Select the 45 orientation pairs: all diametrically opposite same-ring
/// field pairs plus all center pairs are candidates, ranked by descending
/// inter-point distance, ties broken by (i, j) order.
pub fn make_orientation_pairs(pattern: &SamplingPattern) -> Result<OrientationPairSet> {
    let fields = pattern.fields();
    let center = FIELD_COUNT - 1;
    let mut candidates: Vec<(usize, usize, i64)> = Vec::new();
    for i in 0..FIELD_COUNT {
        for j in (i + 1)..FIELD_COUNT {
            let (pi, pj) = (fields[i], fields[j]);
            let symmetric = if j == center {
                true
            } else {
                let norm_i = (pi.dx * pi.dx + pi.dy * pi.dy).sqrt();
                let norm_j = (pj.dx * pj.dx + pj.dy * pj.dy).sqrt();
                // Angle between p_i and -p_j.
                let cross = pi.dx * -pj.dy - pi.dy * -pj.dx;
                let dot = pi.dx * -pj.dx + pi.dy * -pj.dy;
                (norm_i - norm_j).abs() < 1e-9 && cross.atan2(dot).abs() < 1e-6
            };
            if symmetric {
                let (dx, dy) = (pi.dx - pj.dx, pi.dy - pj.dy);
                candidates.push((i, j, distance_key((dx * dx + dy * dy).sqrt())));
            }
        }
    }
    if candidates.len() < ORIENTATION_PAIR_COUNT {
        return Err(Error::Pattern(format!(
            "only {} center-symmetric pair candidates, need {ORIENTATION_PAIR_COUNT}",
            candidates.len()
        )));
    }
    candidates.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    candidates.truncate(ORIENTATION_PAIR_COUNT);
    Ok(OrientationPairSet {
        pairs: candidates.into_iter().map(|(i, j, _)| (i, j)).collect(),
    })
}

fn field_intensities(
    ii: &IntegralImage,
    kp: &Keypoint,
    pattern: &SamplingPattern,
    bin: usize,
) -> [f64; FIELD_COUNT] {
    let mut vals = [0.0; FIELD_COUNT];
    for (f, v) in vals.iter_mut().enumerate() {
        *v = pattern.field_intensity(ii, kp, f, bin);
    }
    vals
}

/// Orientation in radians: the mean over orientation pairs of
/// intensity-difference-weighted unit displacements, read with the unrotated
/// pattern; atan2 of the resulting vector, 0 when the vector is negligible.
pub fn orientation(
    ii: &IntegralImage,
    kp: &Keypoint,
    pattern: &SamplingPattern,
    opairs: &OrientationPairSet,
) -> f64 {
    let vals = field_intensities(ii, kp, pattern, 0);
    let (mut ox, mut oy) = (0.0f64, 0.0f64);
    for &(i, j) in opairs.pairs() {
        let (xi, yi) = pattern.rotated_offset_px(i, 0);
        let (xj, yj) = pattern.rotated_offset_px(j, 0);
        let (dx, dy) = (xi - xj, yi - yj);
        let w = (vals[i] - vals[j]) / (dx * dx + dy * dy).sqrt();
        ox += w * dx;
        oy += w * dy;
    }
    let m = opairs.pairs().len() as f64;
    ox /= m;
    oy /= m;
    if (ox * ox + oy * oy).sqrt() < 1e-9 {
        0.0
    } else {
        oy.atan2(ox)
    }
}

/// Describe one keypoint: estimate orientation, snap it to the nearest
/// rotation bin, and compare field intensities over the pair set.
pub fn describe(
    ii: &IntegralImage,
    kp: &Keypoint,
    pattern: &SamplingPattern,
    pairs: &PairSet,
    opairs: &OrientationPairSet,
) -> Descriptor {
    let angle = orientation(ii, kp, pattern, opairs);
    let bins = pattern.rotation_bins();
    let bin_width = 2.0 * PI / bins as f64;
    let bin = ((angle / bin_width).round() as i64).rem_euclid(bins as i64) as usize;
    let vals = field_intensities(ii, kp, pattern, bin);

    let bit_count = pairs.len();
    let mut bits = vec![0u8; bit_count.div_ceil(8)];
    for (a, &(i, j)) in pairs.pairs().iter().enumerate() {
        if vals[i as usize] > vals[j as usize] {
            bits[a / 8] |= 1 << (a % 8);
        }
    }

    Descriptor {
        bits,
        bit_count,
        keypoint: Keypoint {
            angle: Some(angle as f32),
            ..*kp
        },
        branch: Branch::for_variant(pattern.variant()),
    }
}

/// Geometric fallback ordering: all candidate pairs sorted outer-first by
/// descending sum of field norms, ties lexicographic; first `n` taken.
pub fn default_pairs(pattern: &SamplingPattern, n: usize) -> Result<PairSet> {
    if n == 0 || n > PAIR_CANDIDATE_COUNT {
        return Err(Error::PairSelection(format!(
            "pair count {n} outside 1..={PAIR_CANDIDATE_COUNT}"
        )));
    }
    let fields = pattern.fields();
    let norm = |idx: u8| {
        let f = fields[idx as usize];
        (f.dx * f.dx + f.dy * f.dy).sqrt()
    };
    let mut cands = candidate_pairs();
    cands.sort_by(|a, b| {
        let ka = distance_key(norm(a.0) + norm(a.1));
        let kb = distance_key(norm(b.0) + norm(b.1));
        kb.cmp(&ka).then(a.cmp(b))
    });
    cands.truncate(n);
    PairSet::new(cands)
}

/// Train a pair set: order candidate columns by how close their bit mean sits
/// to 0.5, then greedily keep columns whose absolute Pearson correlation with
/// everything already kept stays under 0.7, relaxing the gate by +0.1
/// whenever a full scan cannot fill the quota.
pub fn train_pairs(matrix: &PairTrainingMatrix, n: usize) -> Result<PairSet> {
    if n == 0 || n > PAIR_CANDIDATE_COUNT {
        return Err(Error::PairSelection(format!(
            "pair count {n} outside 1..={PAIR_CANDIDATE_COUNT}"
        )));
    }
    let k = matrix.rows();
    if k < 2 {
        return Err(Error::PairSelection(format!(
            "training needs at least 2 rows, got {k}"
        )));
    }

    // Pack columns as bitsets so correlations are popcount work.
    let words = k.div_ceil(64);
    let mut cols = vec![vec![0u64; words]; PAIR_CANDIDATE_COUNT];
    for r in 0..k {
        for (c, col) in cols.iter_mut().enumerate() {
            if matrix.entry(r, c) {
                col[r / 64] |= 1 << (r % 64);
            }
        }
    }
    let ones: Vec<i64> = cols
        .iter()
        .map(|col| col.iter().map(|w| w.count_ones() as i64).sum())
        .collect();

    // Pearson correlation of two binary columns from their 1-counts and the
    // count of co-occurring 1s. Zero-variance columns correlate with nothing.
    let corr = |a: usize, b: usize| -> f64 {
        let kk = k as i64;
        let va = ones[a] * (kk - ones[a]);
        let vb = ones[b] * (kk - ones[b]);
        if va == 0 || vb == 0 {
            return 0.0;
        }
        let both: i64 = cols[a]
            .iter()
            .zip(&cols[b])
            .map(|(x, y)| (x & y).count_ones() as i64)
            .sum();
        (kk * both - ones[a] * ones[b]) as f64 / ((va as f64) * (vb as f64)).sqrt()
    };

    let mut order: Vec<usize> = (0..PAIR_CANDIDATE_COUNT).collect();
    order.sort_by(|&a, &b| {
        let da = (ones[a] as f64 / k as f64 - 0.5).abs();
        let db = (ones[b] as f64 / k as f64 - 0.5).abs();
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });

    let mut accepted: Vec<usize> = Vec::with_capacity(n);
    let mut remaining = order;
    let mut threshold = 0.7;
    while accepted.len() < n {
        let mut next_remaining = Vec::with_capacity(remaining.len());
        for &c in &remaining {
            if accepted.len() < n && accepted.iter().all(|&a| corr(c, a).abs() < threshold) {
                accepted.push(c);
            } else {
                next_remaining.push(c);
            }
        }
        remaining = next_remaining;
        if accepted.len() < n {
            // Above 1.0 every column passes, so the loop always terminates.
            threshold += 0.1;
        }
    }

    let lookup = candidate_pairs();
    PairSet::new(accepted.into_iter().map(|c| lookup[c]).collect())
}

fn read_exact_buf<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

/// Contents of a descriptor dump: a homogeneous list (one bit width, one
/// branch) plus its header fields, which matter even when the list is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorDump {
    pub descriptors: Vec<Descriptor>,
    pub bit_count: usize,
    pub branch: Branch,
}

/// Binary descriptor dump. Layout: magic "MRK1", little-endian u32 count,
/// u32 bit count, u8 branch code, then per descriptor f32 x, y, angle,
/// response followed by the packed bits.
pub fn write_descriptor_dump<W: Write>(
    w: &mut W,
    descriptors: &[Descriptor],
    bit_count: usize,
    branch: Branch,
) -> Result<()> {
    w.write_all(&DESCRIPTOR_MAGIC)?;
    w.write_all(&(descriptors.len() as u32).to_le_bytes())?;
    w.write_all(&(bit_count as u32).to_le_bytes())?;
    w.write_all(&[branch.code()])?;
    for d in descriptors {
        if d.bit_count != bit_count {
            return Err(Error::BitCountMismatch(d.bit_count, bit_count));
        }
        if d.branch != branch {
            return Err(Error::FileFormat(format!(
                "descriptor branch {} differs from dump branch {}",
                d.branch.name(),
                branch.name()
            )));
        }
        let kp = &d.keypoint;
        for v in [kp.x, kp.y, kp.angle.unwrap_or(0.0), kp.response] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&d.bits)?;
    }
    Ok(())
}

pub fn read_descriptor_dump<R: Read>(r: &mut R) -> Result<DescriptorDump> {
    let magic = read_exact_buf(r, 4)?;
    if magic != DESCRIPTOR_MAGIC {
        return Err(Error::BadMagic {
            expected: DESCRIPTOR_MAGIC,
        });
    }
    let count = read_u32(r)? as usize;
    let bit_count = read_u32(r)? as usize;
    if bit_count == 0 || bit_count > PAIR_CANDIDATE_COUNT {
        return Err(Error::FileFormat(format!(
            "descriptor bit count {bit_count} outside 1..={PAIR_CANDIDATE_COUNT}"
        )));
    }
    let branch = Branch::from_code(read_exact_buf(r, 1)?[0])?;
    let bytes = bit_count.div_ceil(8);
    let mut descriptors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let x = read_f32(r)?;
        let y = read_f32(r)?;
        let angle = read_f32(r)?;
        let response = read_f32(r)?;
        let mut bits = read_exact_buf(r, bytes)?;
        // Zero any padding bits so byte-wise Hamming stays honest.
        if bit_count % 8 != 0 {
            if let Some(last) = bits.last_mut() {
                *last &= (1u8 << (bit_count % 8)) - 1;
            }
        }
        descriptors.push(Descriptor {
            bits,
            bit_count,
            keypoint: Keypoint {
                x,
                y,
                response,
                angle: Some(angle),
            },
            branch,
        });
    }
    Ok(DescriptorDump {
        descriptors,
        bit_count,
        branch,
    })
}

/// Binary pair-set file. Layout: magic "MRP1", little-endian u32 pair count,
/// then one (u8 i, u8 j) per pair in order.
pub fn write_pair_set<W: Write>(w: &mut W, pairs: &PairSet) -> Result<()> {
    w.write_all(&PAIR_SET_MAGIC)?;
    w.write_all(&(pairs.len() as u32).to_le_bytes())?;
    for &(i, j) in pairs.pairs() {
        w.write_all(&[i, j])?;
    }
    Ok(())
}

pub fn read_pair_set<R: Read>(r: &mut R) -> Result<PairSet> {
    let magic = read_exact_buf(r, 4)?;
    if magic != PAIR_SET_MAGIC {
        return Err(Error::BadMagic {
            expected: PAIR_SET_MAGIC,
        });
    }
    let count = read_u32(r)? as usize;
    if count == 0 || count > PAIR_CANDIDATE_COUNT {
        return Err(Error::FileFormat(format!(
            "pair count {count} outside 1..={PAIR_CANDIDATE_COUNT}"
        )));
    }
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let buf = read_exact_buf(r, 2)?;
        pairs.push((buf[0], buf[1]));
    }
    PairSet::new(pairs)
}
