//! Question/paraphrase geometry in a text-embedding space.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::interchange::{EmbeddingMatrix, PairRef, TransformType};
use crate::metrics::QuestionOutcome;
use crate::stats::{mean, point_biserial, StatResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGeometry {
    pub question_id: String,
    pub paraphrase_id: String,
    pub transform_type: TransformType,
    pub cosine: f64,
    pub euclidean: f64,
}

fn to_f64(row: &[f32], normalize: bool) -> Vec<f64> {
    let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
    if !normalize {
        return v;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Cosine and euclidean distance for each pair. Euclidean distance uses raw
/// rows unless `normalize` is set; cosine is scale-free either way.
pub fn pair_geometry(
    emb: &EmbeddingMatrix,
    pairs: &[PairRef],
    normalize: bool,
    exec: Exec,
) -> Result<Vec<PairGeometry>> {
    exec.map_slice(pairs, |p| {
        let row = |id: &str| {
            emb.get(id)
                .map(|r| to_f64(r, normalize))
                .ok_or_else(|| Error::invalid(format!("no embedding row for text id {id}")))
        };
        let a = row(&p.original_text_id)?;
        let b = row(&p.paraphrase_text_id)?;
        Ok(PairGeometry {
            question_id: p.question_id.clone(),
            paraphrase_id: p.paraphrase_id.clone(),
            transform_type: p.transform_type,
            cosine: cosine(&a, &b),
            euclidean: euclidean(&a, &b),
        })
    })
    .into_iter()
    .collect()
}

/// Splits pairs into those with cosine strictly above `threshold` and the rest.
pub fn similarity_filter(pairs: &[PairGeometry], threshold: f64) -> (Vec<PairGeometry>, Vec<PairGeometry>) {
    pairs.iter().cloned().partition(|p| p.cosine > threshold)
}

/// Per-pair disagreement with the original, keyed by `(question, paraphrase)`.
/// Only pairs where both answers are valid appear.
pub fn pair_flips(outcomes: &[QuestionOutcome]) -> HashMap<(String, String), bool> {
    let mut out = HashMap::new();
    for o in outcomes {
        let Some(orig) = o.original_answer.and_then(|a| a.polarity()) else {
            continue;
        };
        for p in &o.paraphrase_answers {
            if let Some(pa) = p.answer.polarity() {
                out.insert((o.question_id.clone(), p.paraphrase_id.clone()), pa != orig);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySplit {
    pub mean_flip: Option<f64>,
    pub mean_no_flip: Option<f64>,
    pub point_biserial: Option<StatResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformGeometry {
    pub n_pairs: usize,
    pub mean_cosine: f64,
    pub mean_euclidean: f64,
    pub flip_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipGeometryStats {
    pub n_pairs: usize,
    pub n_flip: usize,
    pub cosine: GeometrySplit,
    pub euclidean: GeometrySplit,
    pub by_transform: BTreeMap<TransformType, TransformGeometry>,
}

fn split(values: &[f64], flips: &[bool]) -> GeometrySplit {
    let group = |want: bool| -> Vec<f64> {
        values
            .iter()
            .zip(flips)
            .filter(|(_, f)| **f == want)
            .map(|(v, _)| *v)
            .collect()
    };
    let (a, b) = (group(true), group(false));
    GeometrySplit {
        mean_flip: (!a.is_empty()).then(|| mean(&a)),
        mean_no_flip: (!b.is_empty()).then(|| mean(&b)),
        point_biserial: point_biserial(flips, values).ok(),
    }
}

/// Flip vs no-flip geometry, with point-biserial correlations. Pairs without
/// a flip indicator are skipped; the per-transform table covers all pairs.
pub fn flip_geometry_stats(
    geometries: &[PairGeometry],
    flips: &HashMap<(String, String), bool>,
) -> FlipGeometryStats {
    let mut cos = Vec::new();
    let mut dist = Vec::new();
    let mut ind = Vec::new();
    let mut per_type: BTreeMap<TransformType, Vec<(&PairGeometry, Option<bool>)>> = BTreeMap::new();
    for g in geometries {
        let f = flips
            .get(&(g.question_id.clone(), g.paraphrase_id.clone()))
            .copied();
        if let Some(f) = f {
            cos.push(g.cosine);
            dist.push(g.euclidean);
            ind.push(f);
        }
        per_type.entry(g.transform_type).or_default().push((g, f));
    }
    let by_transform = per_type
        .into_iter()
        .map(|(t, gs)| {
            let known: Vec<bool> = gs.iter().filter_map(|g| g.1).collect();
            let row = TransformGeometry {
                n_pairs: gs.len(),
                mean_cosine: gs.iter().map(|g| g.0.cosine).sum::<f64>() / gs.len() as f64,
                mean_euclidean: gs.iter().map(|g| g.0.euclidean).sum::<f64>() / gs.len() as f64,
                flip_rate: (!known.is_empty())
                    .then(|| known.iter().filter(|f| **f).count() as f64 / known.len() as f64),
            };
            (t, row)
        })
        .collect();
    FlipGeometryStats {
        n_pairs: ind.len(),
        n_flip: ind.iter().filter(|f| **f).count(),
        cosine: split(&cos, &ind),
        euclidean: split(&dist, &ind),
        by_transform,
    }
}
