//! End-to-end runs: morph an image pair, detect corners per branch, describe
//! with the branch's pattern variant, match within each branch, and merge the
//! branch results onto the original coordinates (morphology moves no pixels,
//! so keypoint coordinates transfer unchanged). Also the timing bench that
//! compares the two-branch pipeline, the plain single-branch baseline, and a
//! float-L2 matching control.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::descriptor::{
    default_pairs, describe, make_orientation_pairs, Descriptor, PairSet,
};
use crate::detector::{detect, DetectorParams};
use crate::matcher::{match_descriptors, merge, Match, MatchSet, SetLabel};
use crate::morphology::{close, open, StructuringElement};
use crate::raster::{Image, IntegralImage};
use crate::retina::{build_pattern, PatternParams, Variant};
use crate::{Error, Result};

/// Where descriptor comparison pairs come from.
#[derive(Debug, Clone)]
pub enum PairSource {
    /// Geometric outer-first ordering, first `n` pairs.
    Default(usize),
    /// A trained set loaded from a pair file.
    Trained(PairSet),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub se: StructuringElement,
    pub detector: DetectorParams,
    pub pattern: PatternParams,
    /// Per-branch parameter overrides; `None` falls back to `pattern`.
    /// Mostly useful for probing that the branches stay independent.
    pub open_pattern: Option<PatternParams>,
    pub close_pattern: Option<PatternParams>,
    pub pairs: PairSource,
    pub ratio_threshold: f32,
    pub dedup_radius: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            se: StructuringElement::default(),
            detector: DetectorParams::default(),
            pattern: PatternParams::default(),
            open_pattern: None,
            close_pattern: None,
            pairs: PairSource::Default(512),
            ratio_threshold: 0.75,
            dedup_radius: 2.0,
        }
    }
}

/// One branch's matches plus the keypoint counts behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchReport {
    pub matches: MatchSet,
    pub keypoints_a: usize,
    pub keypoints_b: usize,
}

/// Wall-clock totals measured with a monotonic clock. Description covers
/// integral-image construction plus descriptor extraction; matching covers
/// the nearest-neighbor scans.
#[derive(Debug, Clone, Default)]
pub struct Timings {
    pub description_ms: f64,
    pub matching_ms: f64,
    pub described_keypoints: usize,
    pub matched_keypoints: usize,
}

impl Timings {
    pub fn description_ms_per_keypoint(&self) -> f64 {
        per_keypoint(self.description_ms, self.described_keypoints)
    }

    pub fn matching_ms_per_keypoint(&self) -> f64 {
        per_keypoint(self.matching_ms, self.matched_keypoints)
    }
}

fn per_keypoint(ms: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        ms / count as f64
    }
}

#[derive(Debug, Clone)]
pub struct MatchReport {
    pub open: Option<BranchReport>,
    pub close: Option<BranchReport>,
    pub merged: Option<MatchSet>,
    pub baseline: Option<BranchReport>,
    pub timings: Timings,
}

struct BranchRun {
    report: BranchReport,
    timings: Timings,
}

fn branch_label(variant: Variant) -> SetLabel {
    match variant {
        Variant::Base => SetLabel::Baseline,
        Variant::Opening => SetLabel::Open,
        Variant::Closing => SetLabel::Close,
    }
}

/// Detect, describe, and match one branch on a pair of grayscale images.
fn run_branch(
    gray_a: &Image,
    gray_b: &Image,
    variant: Variant,
    params: &PatternParams,
    cfg: &PipelineConfig,
) -> Result<BranchRun> {
    let pattern = build_pattern(variant, params)?;
    let opairs = make_orientation_pairs(&pattern)?;
    let pairs = match &cfg.pairs {
        PairSource::Default(n) => default_pairs(&pattern, *n)?,
        PairSource::Trained(ps) => ps.clone(),
    };
    let margin = pattern.margin();
    let kps_a = detect(gray_a, &cfg.detector, margin)?;
    let kps_b = detect(gray_b, &cfg.detector, margin)?;

    let t_desc = Instant::now();
    let ii_a = IntegralImage::from_image(gray_a)?;
    let ii_b = IntegralImage::from_image(gray_b)?;
    let descs_a: Vec<Descriptor> = kps_a
        .par_iter()
        .map(|kp| describe(&ii_a, kp, &pattern, &pairs, &opairs))
        .collect();
    let descs_b: Vec<Descriptor> = kps_b
        .par_iter()
        .map(|kp| describe(&ii_b, kp, &pattern, &pairs, &opairs))
        .collect();
    let description_ms = t_desc.elapsed().as_secs_f64() * 1e3;

    let t_match = Instant::now();
    let matches = if descs_a.is_empty() || descs_b.is_empty() {
        MatchSet::from_matches(branch_label(variant), cfg.ratio_threshold, vec![])
    } else {
        match_descriptors(&descs_a, &descs_b, cfg.ratio_threshold)?
    };
    let matching_ms = t_match.elapsed().as_secs_f64() * 1e3;

    Ok(BranchRun {
        report: BranchReport {
            keypoints_a: kps_a.len(),
            keypoints_b: kps_b.len(),
            matches,
        },
        timings: Timings {
            description_ms,
            matching_ms,
            described_keypoints: kps_a.len() + kps_b.len(),
            matched_keypoints: kps_a.len(),
        },
    })
}

fn add_timings(a: &Timings, b: &Timings) -> Timings {
    Timings {
        description_ms: a.description_ms + b.description_ms,
        matching_ms: a.matching_ms + b.matching_ms,
        described_keypoints: a.described_keypoints + b.described_keypoints,
        matched_keypoints: a.matched_keypoints + b.matched_keypoints,
    }
}

/// The full two-branch pipeline: open and close both images, run each branch
/// end to end, and merge the two best-match sets.
pub fn run_mreak(img_a: &Image, img_b: &Image, cfg: &PipelineConfig) -> Result<MatchReport> {
    let open_a = open(img_a, &cfg.se).to_gray();
    let open_b = open(img_b, &cfg.se).to_gray();
    let close_a = close(img_a, &cfg.se).to_gray();
    let close_b = close(img_b, &cfg.se).to_gray();

    let open_params = cfg.open_pattern.as_ref().unwrap_or(&cfg.pattern);
    let close_params = cfg.close_pattern.as_ref().unwrap_or(&cfg.pattern);
    let o = run_branch(&open_a, &open_b, Variant::Opening, open_params, cfg)?;
    let c = run_branch(&close_a, &close_b, Variant::Closing, close_params, cfg)?;

    let merged = merge(&o.report.matches, &c.report.matches, cfg.dedup_radius);
    Ok(MatchReport {
        timings: add_timings(&o.timings, &c.timings),
        open: Some(o.report),
        close: Some(c.report),
        merged: Some(merged),
        baseline: None,
    })
}

/// The single-branch control: no morphology, base pattern only.
pub fn run_baseline(img_a: &Image, img_b: &Image, cfg: &PipelineConfig) -> Result<MatchReport> {
    let gray_a = img_a.to_gray();
    let gray_b = img_b.to_gray();
    let b = run_branch(&gray_a, &gray_b, Variant::Base, &cfg.pattern, cfg)?;
    Ok(MatchReport {
        timings: b.timings.clone(),
        open: None,
        close: None,
        merged: None,
        baseline: Some(b.report),
    })
}

#[derive(Debug, Clone, Serialize)]
struct JsonMatch {
    branch: &'static str,
    x_a: f32,
    y_a: f32,
    x_b: f32,
    y_b: f32,
    distance: u32,
    ratio: f32,
}

#[derive(Debug, Clone, Serialize)]
struct JsonBranch {
    keypoints_a: usize,
    keypoints_b: usize,
    total_matches: usize,
    best_matches: usize,
    matches: Vec<JsonMatch>,
}

#[derive(Debug, Clone, Serialize)]
struct JsonTimings {
    description_ms: f64,
    matching_ms: f64,
    description_ms_per_keypoint: f64,
    matching_ms_per_keypoint: f64,
    described_keypoints: usize,
    matched_keypoints: usize,
}

#[derive(Debug, Clone, Serialize)]
struct JsonReport {
    branches: BTreeMap<&'static str, JsonBranch>,
    timings: JsonTimings,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn json_match(m: &Match) -> JsonMatch {
    JsonMatch {
        branch: m.branch.name(),
        x_a: m.x_a,
        y_a: m.y_a,
        x_b: m.x_b,
        y_b: m.y_b,
        distance: m.distance,
        ratio: m.ratio,
    }
}

fn json_branch(keypoints_a: usize, keypoints_b: usize, ms: &MatchSet) -> JsonBranch {
    JsonBranch {
        keypoints_a,
        keypoints_b,
        total_matches: ms.total(),
        best_matches: ms.best_count(),
        matches: ms.best().map(json_match).collect(),
    }
}

/// Render a report as JSON: per-branch keypoint counts, total and
/// ratio-filtered match counts, the best matches themselves, and timings in
/// milliseconds rounded to 4 decimals.
pub fn report_json(report: &MatchReport) -> String {
    let mut branches = BTreeMap::new();
    if let Some(b) = &report.open {
        branches.insert("open", json_branch(b.keypoints_a, b.keypoints_b, &b.matches));
    }
    if let Some(b) = &report.close {
        branches.insert("close", json_branch(b.keypoints_a, b.keypoints_b, &b.matches));
    }
    if let Some(ms) = &report.merged {
        branches.insert("merged", json_branch(0, 0, ms));
    }
    if let Some(b) = &report.baseline {
        branches.insert(
            "baseline",
            json_branch(b.keypoints_a, b.keypoints_b, &b.matches),
        );
    }
    let t = &report.timings;
    let doc = JsonReport {
        branches,
        timings: JsonTimings {
            description_ms: round4(t.description_ms),
            matching_ms: round4(t.matching_ms),
            description_ms_per_keypoint: round4(t.description_ms_per_keypoint()),
            matching_ms_per_keypoint: round4(t.matching_ms_per_keypoint()),
            described_keypoints: t.described_keypoints,
            matched_keypoints: t.matched_keypoints,
        },
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("report serialization");
    out.push('\n');
    out
}

/// Per-method bench aggregates, per-keypoint figures over all pairs.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub method: &'static str,
    pub description_ms_per_keypoint: f64,
    pub matching_ms_per_keypoint: f64,
    pub described_keypoints: usize,
    pub matched_keypoints: usize,
    pub best_matches: usize,
}

#[derive(Default)]
struct BenchAcc {
    description_ms: f64,
    matching_ms: f64,
    described: usize,
    matched: usize,
    best: usize,
}

impl BenchAcc {
    fn add(&mut self, t: &Timings, best: usize) {
        self.description_ms += t.description_ms;
        self.matching_ms += t.matching_ms;
        self.described += t.described_keypoints;
        self.matched += t.matched_keypoints;
        self.best += best;
    }

    fn row(&self, method: &'static str) -> BenchRow {
        BenchRow {
            method,
            description_ms_per_keypoint: round4(per_keypoint(self.description_ms, self.described)),
            matching_ms_per_keypoint: round4(per_keypoint(self.matching_ms, self.matched)),
            described_keypoints: self.described,
            matched_keypoints: self.matched,
            best_matches: self.best,
        }
    }
}

fn embed_f32(descs: &[Descriptor]) -> Vec<Vec<f32>> {
    descs
        .iter()
        .map(|d| (0..d.bit_count).map(|a| d.bit(a) as u8 as f32).collect())
        .collect()
}

/// Brute-force squared-L2 nearest/second-nearest with the same ratio gate as
/// the binary matcher; returns the best-match count.
fn l2_best_count(queries: &[Vec<f32>], trains: &[Vec<f32>], threshold: f32) -> usize {
    queries
        .par_iter()
        .map(|q| {
            let mut d1 = f32::INFINITY;
            let mut d2 = f32::INFINITY;
            for t in trains {
                let d: f32 = q.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                } else if d < d2 {
                    d2 = d;
                }
            }
            usize::from(d2 > 0.0 && d2.is_finite() && (d1 / d2).sqrt() < threshold)
        })
        .sum()
}

/// Run each method over every pair with detection capped at 2000 keypoints:
/// the single-branch baseline, the two-branch pipeline, and a control that
/// describes like the baseline but embeds the bits as one float per bit and
/// matches by squared Euclidean distance. Per (pair, method), one warmup run
/// is discarded and one run is measured.
pub fn bench(image_pairs: &[(Image, Image)], cfg: &PipelineConfig) -> Result<Vec<BenchRow>> {
    if image_pairs.is_empty() {
        return Err(Error::Config("bench needs at least one image pair".into()));
    }
    let mut cfg = cfg.clone();
    cfg.detector.max_keypoints = 2000;

    let mut base_acc = BenchAcc::default();
    let mut mreak_acc = BenchAcc::default();
    let mut l2_acc = BenchAcc::default();

    for (a, b) in image_pairs {
        run_baseline(a, b, &cfg)?; // warmup
        let report = run_baseline(a, b, &cfg)?;
        let best = report.baseline.as_ref().map_or(0, |b| b.matches.best_count());
        base_acc.add(&report.timings, best);

        run_mreak(a, b, &cfg)?; // warmup
        let report = run_mreak(a, b, &cfg)?;
        let best = report.merged.as_ref().map_or(0, |m| m.total());
        mreak_acc.add(&report.timings, best);

        // Float control: baseline descriptors embedded as floats. The
        // description phase includes the embedding; matching is pure L2.
        let run_l2 = |measure: bool, acc: &mut BenchAcc| -> Result<()> {
            let gray_a = a.to_gray();
            let gray_b = b.to_gray();
            let pattern = build_pattern(Variant::Base, &cfg.pattern)?;
            let opairs = make_orientation_pairs(&pattern)?;
            let pairs = match &cfg.pairs {
                PairSource::Default(n) => default_pairs(&pattern, *n)?,
                PairSource::Trained(ps) => ps.clone(),
            };
            let margin = pattern.margin();
            let kps_a = detect(&gray_a, &cfg.detector, margin)?;
            let kps_b = detect(&gray_b, &cfg.detector, margin)?;

            let t_desc = Instant::now();
            let ii_a = IntegralImage::from_image(&gray_a)?;
            let ii_b = IntegralImage::from_image(&gray_b)?;
            let descs_a: Vec<Descriptor> = kps_a
                .par_iter()
                .map(|kp| describe(&ii_a, kp, &pattern, &pairs, &opairs))
                .collect();
            let descs_b: Vec<Descriptor> = kps_b
                .par_iter()
                .map(|kp| describe(&ii_b, kp, &pattern, &pairs, &opairs))
                .collect();
            let floats_a = embed_f32(&descs_a);
            let floats_b = embed_f32(&descs_b);
            let description_ms = t_desc.elapsed().as_secs_f64() * 1e3;

            let t_match = Instant::now();
            let best = l2_best_count(&floats_a, &floats_b, cfg.ratio_threshold);
            let matching_ms = t_match.elapsed().as_secs_f64() * 1e3;

            if measure {
                acc.add(
                    &Timings {
                        description_ms,
                        matching_ms,
                        described_keypoints: kps_a.len() + kps_b.len(),
                        matched_keypoints: kps_a.len(),
                    },
                    best,
                );
            }
            Ok(())
        };
        run_l2(false, &mut l2_acc)?; // warmup
        run_l2(true, &mut l2_acc)?;
    }

    Ok(vec![
        base_acc.row("baseline"),
        mreak_acc.row("mreak"),
        l2_acc.row("float_l2"),
    ])
}

pub fn bench_json(rows: &[BenchRow]) -> String {
    let mut out = serde_json::to_string_pretty(&serde_json::json!({ "methods": rows }))
        .expect("bench serialization");
    out.push('\n');
    out
}
