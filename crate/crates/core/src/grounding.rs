//! Attention-map grounding against annotated boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::interchange::{AttentionCase, AttentionGrid, BoundingBox, ATTENTION_GRID_SIDE};
use crate::stats::{mann_whitney_u, mean, StatResult};

/// Row-major `h x w` float map.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2 {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map2 {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || data.len() != h * w {
            return Err(Error::dim(format!("{h}x{w} map with {} values", data.len())));
        }
        Ok(Map2 { h, w, data })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.w + c]
    }

    pub fn from_grid(grid: &AttentionGrid) -> Self {
        Map2 {
            h: ATTENTION_GRID_SIDE,
            w: ATTENTION_GRID_SIDE,
            data: grid.values().to_vec(),
        }
    }
}

/// Source coordinate of output index `i` when `n_out` samples span the
/// `n_src` source samples corner to corner.
fn source_coord(i: usize, n_src: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        0.0
    } else {
        i as f64 * (n_src - 1) as f64 / (n_out - 1) as f64
    }
}

/// Corner-aligned bilinear upsampling to `h x w` (each at least the source size).
pub fn upsample_bilinear(src: &Map2, h: usize, w: usize) -> Result<Map2> {
    if h < src.h || w < src.w {
        return Err(Error::invalid(format!(
            "target {h}x{w} is smaller than the {}x{} source",
            src.h, src.w
        )));
    }
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = source_coord(r, src.h, h);
        let y0 = (y.floor() as usize).min(src.h - 1);
        let y1 = (y0 + 1).min(src.h - 1);
        let fy = y - y0 as f64;
        for c in 0..w {
            let x = source_coord(c, src.w, w);
            let x0 = (x.floor() as usize).min(src.w - 1);
            let x1 = (x0 + 1).min(src.w - 1);
            let fx = x - x0 as f64;
            let top = src.at(y0, x0) * (1.0 - fx) + src.at(y0, x1) * fx;
            let bottom = src.at(y1, x0) * (1.0 - fx) + src.at(y1, x1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(Map2 { h, w, data })
}

/// Nearest-rank percentile: the value at rank `max(1, ceil(p/100 * N))`.
pub fn percentile_value(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::invalid(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0 * sorted.len() as f64).ceil() as usize).max(1);
    Ok(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub h: usize,
    pub w: usize,
    pub mask: Vec<bool>,
    pub threshold: f64,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Pixels strictly above `threshold`.
pub fn mask_above(map: &Map2, threshold: f64) -> AttentionMask {
    AttentionMask {
        h: map.h,
        w: map.w,
        mask: map.data.iter().map(|&v| v > threshold).collect(),
        threshold,
    }
}

/// Pixels strictly above the map's own nearest-rank percentile.
pub fn threshold_mask(map: &Map2, percentile: f64) -> Result<AttentionMask> {
    Ok(mask_above(map, percentile_value(&map.data, percentile)?))
}

/// Box as a pixel mask: a pixel is inside when its center is.
pub fn rasterize_box(bbox: &BoundingBox, h: usize, w: usize) -> Vec<bool> {
    (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            bbox.contains((c as f64 + 0.5) / w as f64, (r as f64 + 0.5) / h as f64)
        })
        .collect()
}

fn overlap(mask: &AttentionMask, bbox: &BoundingBox) -> (usize, usize, usize) {
    let b = rasterize_box(bbox, mask.h, mask.w);
    let inter = mask.mask.iter().zip(&b).filter(|(a, b)| **a && **b).count();
    (inter, mask.size(), b.iter().filter(|v| **v).count())
}

/// `|A ∩ B| / |B|`; `None` when the box covers no pixel center.
pub fn coverage(mask: &AttentionMask, bbox: &BoundingBox) -> Option<f64> {
    let (inter, _, nb) = overlap(mask, bbox);
    (nb > 0).then(|| inter as f64 / nb as f64)
}

/// `|A ∩ B| / |A|`; `None` for an empty mask.
pub fn precision(mask: &AttentionMask, bbox: &BoundingBox) -> Option<f64> {
    let (inter, na, _) = overlap(mask, bbox);
    (na > 0).then(|| inter as f64 / na as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PercentileScope {
    /// Threshold each map at its own percentile.
    #[default]
    PerImage,
    /// One threshold from the pooled pixels of every map.
    PerDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingConfig {
    pub height: usize,
    pub width: usize,
    pub percentile: f64,
    pub scope: PercentileScope,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            height: 224,
            width: 224,
            percentile: 90.0,
            scope: PercentileScope::PerImage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub question_id: String,
    pub flipped: Option<bool>,
    pub threshold: f64,
    pub mask_pixels: usize,
    pub box_pixels: usize,
    pub coverage: Option<f64>,
    pub precision: Option<f64>,
}

/// Upsamples, thresholds and scores every case.
pub fn score_cases(cases: &[AttentionCase], cfg: &GroundingConfig, exec: Exec) -> Result<Vec<CaseScore>> {
    let maps: Vec<Map2> = exec
        .map_slice(cases, |c| upsample_bilinear(&Map2::from_grid(&c.grid), cfg.height, cfg.width))
        .into_iter()
        .collect::<Result<_>>()?;
    let pooled = match cfg.scope {
        PercentileScope::PerImage => None,
        PercentileScope::PerDataset => {
            let all: Vec<f64> = maps.iter().flat_map(|m| m.data.iter().copied()).collect();
            Some(percentile_value(&all, cfg.percentile)?)
        }
    };
    let idx: Vec<usize> = (0..cases.len()).collect();
    exec.map_slice(&idx, |&i| {
        let (case, map) = (&cases[i], &maps[i]);
        let threshold = match pooled {
            Some(t) => t,
            None => percentile_value(&map.data, cfg.percentile)?,
        };
        let mask = mask_above(map, threshold);
        let (inter, na, nb) = overlap(&mask, &case.bbox);
        Ok(CaseScore {
            case_id: case.case_id.clone(),
            question_id: case.question_id.clone(),
            flipped: case.flipped,
            threshold,
            mask_pixels: na,
            box_pixels: nb,
            coverage: (nb > 0).then(|| inter as f64 / nb as f64),
            precision: (na > 0).then(|| inter as f64 / na as f64),
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub mean_flip: Option<f64>,
    pub mean_no_flip: Option<f64>,
    pub n_flip: usize,
    pub n_no_flip: usize,
    /// `(mean_flip - mean_no_flip) / mean_no_flip`.
    pub relative_difference: Option<f64>,
    pub mann_whitney: Option<StatResult>,
}

/// Flip vs no-flip means of a per-case score; undefined scores are skipped.
pub fn grounding_comparison(scores: &[Option<f64>], flipped: &[bool]) -> Result<GroupComparison> {
    if scores.len() != flipped.len() {
        return Err(Error::dim(format!(
            "{} scores vs {} flip indicators",
            scores.len(),
            flipped.len()
        )));
    }
    let pick = |want: bool| -> Vec<f64> {
        scores
            .iter()
            .zip(flipped)
            .filter_map(|(s, &f)| (f == want).then_some(*s).flatten())
            .collect()
    };
    let (a, b) = (pick(true), pick(false));
    let mean_of = |v: &[f64]| (!v.is_empty()).then(|| mean(v));
    let (mean_flip, mean_no_flip) = (mean_of(&a), mean_of(&b));
    Ok(GroupComparison {
        mean_flip,
        mean_no_flip,
        n_flip: a.len(),
        n_no_flip: b.len(),
        relative_difference: match (mean_flip, mean_no_flip) {
            (Some(f), Some(n)) if n != 0.0 => Some((f - n) / n),
            _ => None,
        },
        mann_whitney: mann_whitney_u(&a, &b).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::replicate_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn full_box() -> BoundingBox {
        BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn upsample_constant_and_identity() {
        let c = Map2::new(16, 16, vec![0.7; 256]).unwrap();
        let up = upsample_bilinear(&c, 224, 224).unwrap();
        assert!(up.data.iter().all(|v| (v - 0.7).abs() < 1e-12));
        let v: Vec<f64> = (0..256).map(|i| (i * 37 % 101) as f64).collect();
        let g = Map2::new(16, 16, v.clone()).unwrap();
        assert_eq!(upsample_bilinear(&g, 16, 16).unwrap().data, v);
        assert!(upsample_bilinear(&g, 15, 16).is_err());
    }

    #[test]
    fn upsample_hand_values() {
        // 2x2 [[0,0],[0,1]] -> 4x4: coordinates 0, 1/3, 2/3, 1 on each axis,
        // so the value at (r, c) is (r/3) * (c/3).
        let g = Map2::new(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let up = upsample_bilinear(&g, 4, 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expected = (r as f64 / 3.0) * (c as f64 / 3.0);
                assert!((up.at(r, c) - expected).abs() < 1e-12);
            }
        }
        assert_eq!(up.at(3, 3), 1.0);
        assert!((up.at(1, 2) - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let m = Map2::new(10, 10, (0..100).map(f64::from).collect()).unwrap();
        let mask = threshold_mask(&m, 90.0).unwrap();
        assert_eq!(mask.size(), 10);
        assert!(mask.mask[90..].iter().all(|v| *v));
        let flat = Map2::new(4, 4, vec![2.0; 16]).unwrap();
        assert_eq!(threshold_mask(&flat, 90.0).unwrap().size(), 0);
    }

    #[test]
    fn mask_size_matches_sort_and_cut() {
        let mut rng = replicate_rng(4, 0);
        for _ in 0..20 {
            let data: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
            let m = Map2::new(20, 20, data.clone()).unwrap();
            let p: f64 = rng.random_range(1.0..100.0);
            let mut sorted = data;
            sorted.sort_by(f64::total_cmp);
            // distinct values: everything after the cut rank survives
            let keep = 400 - (p / 100.0 * 400.0).ceil() as usize;
            assert_eq!(threshold_mask(&m, p).unwrap().size(), keep);
        }
    }

    #[test]
    fn coverage_precision_examples() {
        let all = AttentionMask {
            h: 4,
            w: 4,
            mask: vec![true; 16],
            threshold: 0.0,
        };
        let left = BoundingBox::new(0.0, 0.0, 0.5, 1.0).unwrap();
        assert_eq!(coverage(&all, &left), Some(1.0));
        assert_eq!(precision(&all, &left), Some(0.5));
        // First column only: 4 of the box's 8 pixels.
        let col0 = AttentionMask {
            mask: (0..16).map(|i| i % 4 == 0).collect(),
            ..all.clone()
        };
        assert_eq!(coverage(&col0, &left), Some(0.5));
        assert_eq!(precision(&col0, &left), Some(1.0));
        let right = BoundingBox::new(0.6, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(coverage(&col0, &right), Some(0.0));
        let empty = AttentionMask {
            mask: vec![false; 16],
            ..all
        };
        assert_eq!(precision(&empty, &full_box()), None);
    }

    #[test]
    fn comparison_cases() {
        let scores: Vec<Option<f64>> = (0..20).map(|i| Some(i as f64)).collect();
        let flips: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let c = grounding_comparison(&scores, &flips).unwrap();
        assert!(c.mann_whitney.unwrap().p_value.unwrap() < 0.001);
        assert_eq!((c.mean_flip, c.mean_no_flip), (Some(4.5), Some(14.5)));
        let same: Vec<Option<f64>> = (0..20).map(|i| Some((i % 10) as f64)).collect();
        let c = grounding_comparison(&same, &flips).unwrap();
        assert!((c.mann_whitney.unwrap().p_value.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn per_dataset_scope_uses_one_threshold() {
        let mk = |scale: f64| AttentionCase {
            case_id: format!("c{scale}"),
            question_id: "q".into(),
            model_id: None,
            grid: AttentionGrid::new((0..256).map(|i| scale * (1 + i) as f64).collect()).unwrap(),
            bbox: full_box(),
            flipped: None,
        };
        let cases = vec![mk(1.0), mk(100.0)];
        let cfg = GroundingConfig {
            height: 16,
            width: 16,
            scope: PercentileScope::PerDataset,
            ..Default::default()
        };
        let s = score_cases(&cases, &cfg, Exec::Sequential).unwrap();
        assert_eq!(s[0].threshold, s[1].threshold);
        assert_eq!(s[0].mask_pixels, 0);
        let per_image = score_cases(&cases, &GroundingConfig { scope: PercentileScope::PerImage, ..cfg }, Exec::Sequential).unwrap();
        assert_eq!(per_image[0].mask_pixels, per_image[1].mask_pixels);
    }

    proptest! {
        #[test]
        fn upsample_stays_within_source_range(
            v in prop::collection::vec(0.0f64..10.0, 16),
            h in 4usize..30,
            w in 4usize..30,
        ) {
            let g = Map2::new(4, 4, v.clone()).unwrap();
            let up = upsample_bilinear(&g, h, w).unwrap();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(up.data.iter().all(|x| *x >= lo - 1e-12 && *x <= hi + 1e-12));
        }

        #[test]
        fn scores_are_fractions(
            v in prop::collection::vec(0.0f64..1.0, 64),
            x0 in 0.0f64..0.9, y0 in 0.0f64..0.9, dx in 0.05f64..1.0, dy in 0.05f64..1.0,
        ) {
            let m = Map2::new(8, 8, v).unwrap();
            let up = upsample_bilinear(&m, 32, 32).unwrap();
            let mask = threshold_mask(&up, 90.0).unwrap();
            let b = BoundingBox::new(x0, y0, (x0 + dx).min(1.0), (y0 + dy).min(1.0)).unwrap();
            for s in [coverage(&mask, &b), precision(&mask, &b)].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}
