//! Brute-force Hamming matching with a nearest/second-nearest ratio test,
//! and merging of the opening- and closing-branch match sets.

use rayon::prelude::*;

use crate::descriptor::{Branch, Descriptor};
use crate::{Error, Result};

/// One query-to-train correspondence with original-image endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub query_index: usize,
    pub train_index: usize,
    /// Hamming distance to the nearest train descriptor.
    pub distance: u32,
    /// Nearest over second-nearest distance; 0 when there is no second
    /// neighbor.
    pub ratio: f32,
    pub branch: Branch,
    pub x_a: f32,
    pub y_a: f32,
    pub x_b: f32,
    pub y_b: f32,
}

/// Which pipeline a match set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetLabel {
    Baseline,
    Open,
    Close,
    Merged,
}

impl SetLabel {
    pub fn name(self) -> &'static str {
        match self {
            SetLabel::Baseline => "baseline",
            SetLabel::Open => "open",
            SetLabel::Close => "close",
            SetLabel::Merged => "merged",
        }
    }
}

/// All matches produced for one branch, plus the ratio gate that defines the
/// "best" subset.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    label: SetLabel,
    ratio_threshold: f32,
    matches: Vec<Match>,
}

impl MatchSet {
    pub fn from_matches(label: SetLabel, ratio_threshold: f32, matches: Vec<Match>) -> Self {
        Self {
            label,
            ratio_threshold,
            matches,
        }
    }

    pub fn label(&self) -> SetLabel {
        self.label
    }

    pub fn ratio_threshold(&self) -> f32 {
        self.ratio_threshold
    }

    pub fn matches(&self) -> &[Match] {
        &self.matches
    }

    pub fn total(&self) -> usize {
        self.matches.len()
    }

    pub fn best(&self) -> impl Iterator<Item = &Match> {
        self.matches.iter().filter(|m| m.ratio < self.ratio_threshold)
    }

    pub fn best_count(&self) -> usize {
        self.best().count()
    }
}

fn hamming_bytes(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Hamming distance: popcount of the XOR of two equal-length bit strings.
pub fn hamming(a: &Descriptor, b: &Descriptor) -> Result<u32> {
    if a.bit_count != b.bit_count {
        return Err(Error::BitCountMismatch(a.bit_count, b.bit_count));
    }
    Ok(hamming_bytes(&a.bits, &b.bits))
}

/// Match every query against all train descriptors: nearest neighbor by
/// Hamming distance (ties to the lower index), ratio = d1/d2 against the
/// second-nearest. A lone train descriptor leaves no second neighbor and the
/// match keeps ratio 0; a zero second-nearest distance (duplicate trains)
/// yields ratio 1 when d1 = 0 and drops the match otherwise.
pub fn match_descriptors(
    queries: &[Descriptor],
    trains: &[Descriptor],
    ratio_threshold: f32,
) -> Result<MatchSet> {
    if queries.is_empty() || trains.is_empty() {
        return Err(Error::Matcher("cannot match empty descriptor lists".into()));
    }
    if !(ratio_threshold > 0.0 && ratio_threshold <= 1.0) {
        return Err(Error::Matcher(format!(
            "ratio threshold {ratio_threshold} outside (0, 1]"
        )));
    }
    let bit_count = queries[0].bit_count;
    for d in queries.iter().chain(trains) {
        if d.bit_count != bit_count {
            return Err(Error::BitCountMismatch(d.bit_count, bit_count));
        }
    }
    let branch = queries[0].branch;

    let matches: Vec<Match> = queries
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            let mut d1 = u32::MAX;
            let mut d2 = u32::MAX;
            let mut nearest = 0usize;
            for (ti, t) in trains.iter().enumerate() {
                let d = hamming_bytes(&q.bits, &t.bits);
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                    nearest = ti;
                } else if d < d2 {
                    d2 = d;
                }
            }
            let ratio = if d2 == u32::MAX {
                0.0
            } else if d2 == 0 {
                if d1 == 0 {
                    1.0
                } else {
                    return None;
                }
            } else {
                d1 as f32 / d2 as f32
            };
            let t = &trains[nearest];
            Some(Match {
                query_index: qi,
                train_index: nearest,
                distance: d1,
                ratio,
                branch,
                x_a: q.keypoint.x,
                y_a: q.keypoint.y,
                x_b: t.keypoint.x,
                y_b: t.keypoint.y,
            })
        })
        .collect::<Vec<Option<Match>>>()
        .into_iter()
        .flatten()
        .collect();

    Ok(MatchSet {
        label: match branch {
            Branch::Baseline => SetLabel::Baseline,
            Branch::Open => SetLabel::Open,
            Branch::Close => SetLabel::Close,
        },
        ratio_threshold,
        matches,
    })
}

/// Mutual-nearest-neighbor filter: match in both directions and keep a
/// forward match only when its train descriptor's own nearest neighbor is
/// that same query. Off by default everywhere; opt-in via the CLI.
pub fn cross_check(
    queries: &[Descriptor],
    trains: &[Descriptor],
    ratio_threshold: f32,
) -> Result<MatchSet> {
    let forward = match_descriptors(queries, trains, ratio_threshold)?;
    let backward = match_descriptors(trains, queries, ratio_threshold)?;
    let mut back_nn: Vec<Option<usize>> = vec![None; trains.len()];
    for m in backward.matches() {
        back_nn[m.query_index] = Some(m.train_index);
    }
    let kept = forward
        .matches()
        .iter()
        .filter(|m| back_nn[m.train_index] == Some(m.query_index))
        .copied()
        .collect();
    Ok(MatchSet {
        label: forward.label,
        ratio_threshold: forward.ratio_threshold,
        matches: kept,
    })
}

/// Merge the two branch match sets: every best open match is kept, and each
/// best close match joins unless both of its endpoints sit within
/// `dedup_radius` of the corresponding endpoints of a match already kept.
pub fn merge(open_ms: &MatchSet, close_ms: &MatchSet, dedup_radius: f32) -> MatchSet {
    let near = |ax: f32, ay: f32, bx: f32, by: f32| {
        let (dx, dy) = (ax - bx, ay - by);
        (dx * dx + dy * dy).sqrt() <= dedup_radius
    };
    let mut kept: Vec<Match> = open_ms.best().copied().collect();
    for m in close_ms.best() {
        let duplicate = kept.iter().any(|k| {
            near(k.x_a, k.y_a, m.x_a, m.y_a) && near(k.x_b, k.y_b, m.x_b, m.y_b)
        });
        if !duplicate {
            kept.push(*m);
        }
    }
    MatchSet {
        label: SetLabel::Merged,
        ratio_threshold: open_ms.ratio_threshold,
        matches: kept,
    }
}

/// One line per match: branch, x_a, y_a, x_b, y_b, distance, ratio.
/// Tab-separated, reals with 3 decimals.
pub fn matches_tsv(matches: &[Match]) -> String {
    let mut out = String::new();
    for m in matches {
        out.push_str(&format!(
            "{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{}\t{:.3}\n",
            m.branch.name(),
            m.x_a,
            m.y_a,
            m.x_b,
            m.y_b,
            m.distance,
            m.ratio
        ));
    }
    out
}

pub fn parse_matches_tsv(text: &str) -> Result<Vec<Match>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(Error::FileFormat(format!(
                "match line {}: expected 7 tab-separated columns, got {}",
                lineno + 1,
                cols.len()
            )));
        }
        let branch = match cols[0] {
            "baseline" => Branch::Baseline,
            "open" => Branch::Open,
            "close" => Branch::Close,
            other => {
                return Err(Error::FileFormat(format!(
                    "match line {}: unknown branch {other:?}",
                    lineno + 1
                )))
            }
        };
        let real = |s: &str| {
            s.parse::<f32>().map_err(|_| {
                Error::FileFormat(format!("match line {}: bad number {s:?}", lineno + 1))
            })
        };
        let distance = cols[5].parse::<u32>().map_err(|_| {
            Error::FileFormat(format!(
                "match line {}: bad distance {:?}",
                lineno + 1,
                cols[5]
            ))
        })?;
        out.push(Match {
            query_index: out.len(),
            train_index: 0,
            distance,
            ratio: real(cols[6])?,
            branch,
            x_a: real(cols[1])?,
            y_a: real(cols[2])?,
            x_b: real(cols[3])?,
            y_b: real(cols[4])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Keypoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desc(bits: Vec<u8>, bit_count: usize, x: f32, y: f32) -> Descriptor {
        Descriptor {
            bits,
            bit_count,
            keypoint: Keypoint {
                x,
                y,
                response: 1.0,
                angle: Some(0.0),
            },
            branch: Branch::Open,
        }
    }

    fn random_desc(rng: &mut ChaCha8Rng, x: f32, y: f32) -> Descriptor {
        desc((0..64).map(|_| rng.random()).collect(), 512, x, y)
    }

    #[test]
    fn hamming_identity_and_complement() {
        let d0 = desc(vec![0x00; 64], 512, 0.0, 0.0);
        let d1 = desc(vec![0xFF; 64], 512, 0.0, 0.0);
        assert_eq!(hamming(&d0, &d0).unwrap(), 0);
        assert_eq!(hamming(&d1, &d1).unwrap(), 0);
        assert_eq!(hamming(&d0, &d1).unwrap(), 512);
    }

    #[test]
    fn hamming_matches_bit_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = random_desc(&mut rng, 0.0, 0.0);
            let b = random_desc(&mut rng, 0.0, 0.0);
            let expect: u32 = (0..512).filter(|&i| a.bit(i) != b.bit(i)).count() as u32;
            assert_eq!(hamming(&a, &b).unwrap(), expect);
        }
    }

    #[test]
    fn hamming_is_a_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = random_desc(&mut rng, 0.0, 0.0);
            let b = random_desc(&mut rng, 0.0, 0.0);
            let c = random_desc(&mut rng, 0.0, 0.0);
            let (ab, ba) = (hamming(&a, &b).unwrap(), hamming(&b, &a).unwrap());
            assert_eq!(ab, ba);
            assert_eq!(hamming(&a, &b).unwrap() == 0, a.bits == b.bits);
            let (ac, cb) = (hamming(&a, &c).unwrap(), hamming(&c, &b).unwrap());
            assert!(ab <= ac + cb);
        }
    }

    #[test]
    fn hamming_rejects_mixed_widths() {
        let a = desc(vec![0; 64], 512, 0.0, 0.0);
        let b = desc(vec![0; 32], 256, 0.0, 0.0);
        assert!(matches!(
            hamming(&a, &b),
            Err(Error::BitCountMismatch(512, 256))
        ));
    }

    #[test]
    fn identical_lists_self_match_at_distance_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let descs: Vec<Descriptor> = (0..30)
            .map(|i| random_desc(&mut rng, i as f32, 2.0 * i as f32))
            .collect();
        let ms = match_descriptors(&descs, &descs, 0.75).unwrap();
        assert_eq!(ms.total(), 30);
        for (qi, m) in ms.matches().iter().enumerate() {
            assert_eq!(m.query_index, qi);
            assert_eq!(m.train_index, qi);
            assert_eq!(m.distance, 0);
            assert!(m.ratio < 0.75, "self-match should survive the ratio gate");
        }
        assert_eq!(ms.best_count(), 30);
    }

    #[test]
    fn lone_train_descriptor_keeps_ratio_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = vec![random_desc(&mut rng, 1.0, 1.0)];
        let t = vec![random_desc(&mut rng, 2.0, 2.0)];
        let ms = match_descriptors(&q, &t, 0.75).unwrap();
        assert_eq!(ms.total(), 1);
        assert_eq!(ms.matches()[0].ratio, 0.0);
        assert_eq!(ms.best_count(), 1);
    }

    #[test]
    fn duplicate_trains_give_ratio_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = random_desc(&mut rng, 3.0, 4.0);
        let ms = match_descriptors(&[d.clone()], &[d.clone(), d.clone()], 0.75).unwrap();
        assert_eq!(ms.total(), 1);
        let m = ms.matches()[0];
        assert_eq!(m.train_index, 0, "tie must go to the lower index");
        assert_eq!((m.distance, m.ratio), (0, 1.0));
        assert_eq!(ms.best_count(), 0);
    }

    #[test]
    fn matcher_agrees_with_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let queries: Vec<Descriptor> = (0..20)
            .map(|i| random_desc(&mut rng, i as f32, 0.0))
            .collect();
        let trains: Vec<Descriptor> = (0..50)
            .map(|i| random_desc(&mut rng, i as f32, 9.0))
            .collect();
        let ms = match_descriptors(&queries, &trains, 0.75).unwrap();
        assert_eq!(ms.total(), 20);
        for (qi, m) in ms.matches().iter().enumerate() {
            let mut dists: Vec<(u32, usize)> = trains
                .iter()
                .enumerate()
                .map(|(ti, t)| (hamming(&queries[qi], t).unwrap(), ti))
                .collect();
            dists.sort();
            assert_eq!((m.distance, m.train_index), dists[0]);
            assert_eq!(m.ratio, dists[0].0 as f32 / dists[1].0 as f32);
        }
        // Determinism across runs (including the parallel scan).
        assert_eq!(ms, match_descriptors(&queries, &trains, 0.75).unwrap());
    }

    #[test]
    fn best_count_is_monotone_in_the_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let queries: Vec<Descriptor> = (0..40)
            .map(|i| random_desc(&mut rng, i as f32, 0.0))
            .collect();
        let trains: Vec<Descriptor> = (0..40)
            .map(|i| random_desc(&mut rng, i as f32, 1.0))
            .collect();
        let mut last = 0;
        for thr in [0.6f32, 0.7, 0.75, 0.8, 1.0] {
            let count = match_descriptors(&queries, &trains, thr).unwrap().best_count();
            assert!(count >= last, "threshold {thr} shrank the best set");
            last = count;
        }
    }

    #[test]
    fn matcher_validates_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = vec![random_desc(&mut rng, 0.0, 0.0)];
        assert!(match_descriptors(&[], &d, 0.75).is_err());
        assert!(match_descriptors(&d, &[], 0.75).is_err());
        assert!(match_descriptors(&d, &d, 0.0).is_err());
        assert!(match_descriptors(&d, &d, 1.5).is_err());
        let narrow = vec![desc(vec![0; 32], 256, 0.0, 0.0)];
        assert!(match_descriptors(&d, &narrow, 0.75).is_err());
    }

    fn placed_match(branch: Branch, x_a: f32, y_a: f32, x_b: f32, y_b: f32) -> Match {
        Match {
            query_index: 0,
            train_index: 0,
            distance: 10,
            ratio: 0.1,
            branch,
            x_a,
            y_a,
            x_b,
            y_b,
        }
    }

    fn set_of(label: SetLabel, branch: Branch, coords: &[(f32, f32)]) -> MatchSet {
        let matches = coords
            .iter()
            .map(|&(x, y)| placed_match(branch, x, y, x + 100.0, y))
            .collect();
        MatchSet::from_matches(label, 0.75, matches)
    }

    #[test]
    fn merge_disjoint_sets_adds_counts() {
        let open: Vec<(f32, f32)> = (0..6).map(|i| (10.0 * i as f32, 5.0)).collect();
        let close: Vec<(f32, f32)> = (0..14).map(|i| (10.0 * i as f32, 50.0)).collect();
        let merged = merge(
            &set_of(SetLabel::Open, Branch::Open, &open),
            &set_of(SetLabel::Close, Branch::Close, &close),
            2.0,
        );
        assert_eq!(merged.total(), 20);
        assert_eq!(merged.label(), SetLabel::Merged);
        assert_eq!(merged.best_count(), 20);
    }

    #[test]
    fn merge_removes_exact_duplicates() {
        let coords: Vec<(f32, f32)> = (0..9).map(|i| (7.0 * i as f32, 3.0)).collect();
        let merged = merge(
            &set_of(SetLabel::Open, Branch::Open, &coords),
            &set_of(SetLabel::Close, Branch::Close, &coords),
            2.0,
        );
        assert_eq!(merged.total(), 9);
        assert!(merged.matches().iter().all(|m| m.branch == Branch::Open));
    }

    #[test]
    fn merge_with_empty_close_is_identity() {
        let open = set_of(SetLabel::Open, Branch::Open, &[(1.0, 1.0), (20.0, 1.0)]);
        let close = MatchSet::from_matches(SetLabel::Close, 0.75, vec![]);
        let merged = merge(&open, &close, 2.0);
        assert_eq!(merged.matches(), open.matches());
    }

    #[test]
    fn merge_requires_both_endpoints_to_coincide() {
        let open = MatchSet::from_matches(
            SetLabel::Open,
            0.75,
            vec![placed_match(Branch::Open, 10.0, 10.0, 200.0, 10.0)],
        );
        // Same left endpoint, right endpoint far away: a distinct match.
        let close = MatchSet::from_matches(
            SetLabel::Close,
            0.75,
            vec![placed_match(Branch::Close, 10.5, 10.0, 260.0, 10.0)],
        );
        assert_eq!(merge(&open, &close, 2.0).total(), 2);
    }

    #[test]
    fn merge_dedups_against_matches_kept_from_the_close_set() {
        let open = MatchSet::from_matches(
            SetLabel::Open,
            0.75,
            vec![placed_match(Branch::Open, 0.0, 0.0, 100.0, 0.0)],
        );
        let close = MatchSet::from_matches(
            SetLabel::Close,
            0.75,
            vec![
                placed_match(Branch::Close, 50.0, 0.0, 150.0, 0.0),
                placed_match(Branch::Close, 51.0, 0.0, 151.0, 0.0),
            ],
        );
        // The second close match collides with the first (already kept), not
        // with the open match.
        assert_eq!(merge(&open, &close, 2.0).total(), 2);
    }

    #[test]
    fn merge_never_exceeds_the_sum_of_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let open: Vec<(f32, f32)> = (0..rng.random_range(0..8))
                .map(|_| (rng.random_range(0.0..40.0), rng.random_range(0.0..40.0)))
                .collect();
            let close: Vec<(f32, f32)> = (0..rng.random_range(0..8))
                .map(|_| (rng.random_range(0.0..40.0), rng.random_range(0.0..40.0)))
                .collect();
            let o = set_of(SetLabel::Open, Branch::Open, &open);
            let c = set_of(SetLabel::Close, Branch::Close, &close);
            let merged = merge(&o, &c, 2.0);
            assert!(merged.total() <= o.best_count() + c.best_count());
        }
    }

    #[test]
    fn cross_check_requires_mutual_nearest_neighbors() {
        // q0's nearest is t0, but t0's nearest is q1: only q1-t0 survives.
        let q0 = desc(vec![0b0000_1111], 8, 0.0, 0.0);
        let q1 = desc(vec![0b0000_0111], 8, 1.0, 0.0);
        let t0 = desc(vec![0b0000_0011], 8, 2.0, 0.0);
        let ms = cross_check(&[q0, q1.clone()], &[t0.clone()], 1.0).unwrap();
        assert_eq!(ms.total(), 1);
        assert_eq!(ms.matches()[0].query_index, 1);
        assert_eq!(ms.matches()[0].train_index, 0);

        // Identical lists are fully mutual.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let descs: Vec<Descriptor> = (0..10)
            .map(|i| random_desc(&mut rng, i as f32, 0.0))
            .collect();
        assert_eq!(cross_check(&descs, &descs, 0.75).unwrap().total(), 10);
    }

    #[test]
    fn tsv_round_trip() {
        let matches = vec![
            placed_match(Branch::Open, 1.25, 2.5, 3.0, 4.0),
            placed_match(Branch::Close, 10.0, 20.0, 30.0, 40.0),
            placed_match(Branch::Baseline, 0.0, 0.0, 0.0, 0.0),
        ];
        let text = matches_tsv(&matches);
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("open\t1.250\t2.500\t3.000\t4.000\t10\t0.100\n"));
        let back = parse_matches_tsv(&text).unwrap();
        assert_eq!(back.len(), 3);
        for (orig, b) in matches.iter().zip(&back) {
            assert_eq!(b.branch, orig.branch);
            assert_eq!(b.distance, orig.distance);
            assert!((b.x_a - orig.x_a).abs() < 1e-3);
            assert!((b.ratio - orig.ratio).abs() < 1e-3);
        }
    }

    #[test]
    fn tsv_parser_rejects_garbage() {
        assert!(parse_matches_tsv("open\t1\t2\t3\n").is_err());
        assert!(parse_matches_tsv("sideways\t1\t2\t3\t4\t5\t0.5\n").is_err());
        assert!(parse_matches_tsv("open\t1\t2\t3\t4\tfive\t0.5\n").is_err());
        assert!(parse_matches_tsv("").unwrap().is_empty());
    }
}
