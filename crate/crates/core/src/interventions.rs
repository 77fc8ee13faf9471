//! Flip curation, delta-only patching, feature clamping and their evaluation.
//!
//! Margins are `yes_logit - no_logit`; a positive margin answers Yes.
//! Recovery is `(patched - para) / (orig - para)`, so patching that restores
//! the original margin scores 1 and a no-op scores 0. The margin shift is
//! signed toward the original margin.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::answer::ParsedAnswer;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::interchange::{
    load_tensor_container, save_tensor_container, ActivationMatrix, Corpus, Label, ParsedRecord,
    RowRef, Tensor, TensorMap, TransformType,
};
use crate::metrics::{
    accuracy, build_outcomes, flip_rate, flip_rate_by_transform, matched_polarities,
    MetricValue, PromptScope, QuestionOutcome,
};
use crate::sae::{FeatureStats, Sae};
use crate::stats::{
    bootstrap_ci, cohens_d, median, paired_permutation_test, BootstrapConfig, PermutationConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    YesToNo,
    NoToYes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipCase {
    pub model_id: String,
    pub question_id: String,
    pub paraphrase_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_type: Option<TransformType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finding: Option<String>,
    pub direction: Direction,
    pub similarity: f64,
    /// Absent when the responses carried no logits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_orig: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_para: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orig_row: Option<RowRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub para_row: Option<RowRef>,
}

impl crate::interchange::Validate for FlipCase {
    fn validate(&self) -> std::result::Result<(), String> {
        if !(-1.0..=1.0).contains(&self.similarity) {
            return Err(format!("similarity {} outside [-1, 1]", self.similarity));
        }
        if self.margin_orig.is_some() != self.margin_para.is_some() {
            return Err("margin_orig and margin_para must be both present or both absent".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Either answer excluded by the parser.
    ExcludedAnswer,
    /// Both answers valid and equal: not a flip.
    NoChange,
    MissingOriginal,
    MissingSimilarity,
    LowSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    /// Kept iff similarity is strictly above this.
    pub min_similarity: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig { min_similarity: 0.95 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curation {
    pub cases: Vec<FlipCase>,
    pub skipped: BTreeMap<SkipReason, usize>,
    pub yes_to_no: usize,
    pub no_to_yes: usize,
    pub without_margins: usize,
}

/// Real-image paraphrase pairs whose valid answers changed, with similarity
/// above the threshold. Similarity comes from `similarities` (keyed by
/// question and paraphrase id), falling back to the corpus value.
pub fn curate_flipbank(
    parsed: &[ParsedRecord],
    corpus: &Corpus,
    similarities: &HashMap<(String, String), f64>,
    cfg: &CurationConfig,
) -> Curation {
    let real: Vec<&ParsedRecord> = parsed
        .iter()
        .filter(|r| r.response.condition.kind() == "real")
        .collect();
    let originals: HashMap<(&str, &str), &ParsedRecord> = real
        .iter()
        .filter(|r| r.response.is_original())
        .map(|r| ((r.response.model_id.as_str(), r.response.question_id.as_str()), *r))
        .collect();
    let mut out = Curation::default();
    let mut paras: Vec<&ParsedRecord> = real.iter().copied().filter(|r| !r.response.is_original()).collect();
    paras.sort_by(|a, b| {
        let key = |r: &ParsedRecord| {
            (
                r.response.model_id.clone(),
                r.response.question_id.clone(),
                r.response.paraphrase_id.clone(),
            )
        };
        key(a).cmp(&key(b))
    });
    for p in paras {
        let r = &p.response;
        let pid = r.paraphrase_id.clone().unwrap_or_default();
        let mut skip = |reason: SkipReason| {
            *out.skipped.entry(reason).or_default() += 1;
        };
        let Some(o) = originals.get(&(r.model_id.as_str(), r.question_id.as_str())) else {
            warn!("{}/{}/{pid}: no original response; skipped", r.model_id, r.question_id);
            skip(SkipReason::MissingOriginal);
            continue;
        };
        let (Some(ao), Some(ap)) = (o.parsed.polarity(), p.parsed.polarity()) else {
            skip(SkipReason::ExcludedAnswer);
            continue;
        };
        if ao == ap {
            skip(SkipReason::NoChange);
            continue;
        }
        let question = corpus.get(&r.question_id);
        let similarity = similarities
            .get(&(r.question_id.clone(), pid.clone()))
            .copied()
            .or_else(|| question?.paraphrase(&pid)?.similarity_to_original);
        let Some(similarity) = similarity else {
            warn!("{}/{}/{pid}: no similarity available; skipped", r.model_id, r.question_id);
            skip(SkipReason::MissingSimilarity);
            continue;
        };
        if similarity <= cfg.min_similarity {
            skip(SkipReason::LowSimilarity);
            continue;
        }
        let direction = if ao { Direction::YesToNo } else { Direction::NoToYes };
        match direction {
            Direction::YesToNo => out.yes_to_no += 1,
            Direction::NoToYes => out.no_to_yes += 1,
        }
        let (margin_orig, margin_para) = match (o.response.margin(), r.margin()) {
            (Some(a), Some(b)) => (Some(a), Some(b)),
            _ => {
                debug!("{}/{}/{pid}: margins=absent", r.model_id, r.question_id);
                out.without_margins += 1;
                (None, None)
            }
        };
        out.cases.push(FlipCase {
            model_id: r.model_id.clone(),
            question_id: r.question_id.clone(),
            paraphrase_id: pid.clone(),
            transform_type: corpus.transform_of(&r.question_id, &pid),
            finding: question.and_then(|q| q.finding.clone()),
            direction,
            similarity,
            margin_orig,
            margin_para,
            orig_row: None,
            para_row: None,
        });
    }
    out
}

/// `x - delta * W_dec[i, :]`.
pub fn delta_patch(sae: &Sae, x: &[f64], feature: usize, delta: f64) -> Result<Vec<f64>> {
    sae.check_input(x)?;
    sae.check_feature(feature)?;
    Ok(x.iter()
        .zip(sae.decoder_row(feature))
        .map(|(xk, w)| xk - delta * w)
        .collect())
}

/// Removes the feature's decoded contribution `f_i(x) * W_dec[i, :]`;
/// identity when the feature is inactive on `x`.
pub fn clamp(sae: &Sae, x: &[f64], feature: usize) -> Result<Vec<f64>> {
    let f = sae.feature_activation(x, feature)?;
    if f == 0.0 {
        return Ok(x.to_vec());
    }
    delta_patch(sae, x, feature, f)
}

/// Clamps several features, all read from the unclamped input.
pub fn clamp_features(sae: &Sae, x: &[f64], features: &[usize]) -> Result<Vec<f64>> {
    let acts: Vec<f64> = features
        .iter()
        .map(|&i| sae.feature_activation(x, i))
        .collect::<Result<_>>()?;
    let mut out = x.to_vec();
    for (&i, &f) in features.iter().zip(&acts) {
        if f != 0.0 {
            out = delta_patch(sae, &out, i, f)?;
        }
    }
    Ok(out)
}

/// `None` when the original and paraphrase margins coincide.
pub fn margin_recovery(margin_orig: f64, margin_para: f64, margin_patched: f64) -> Option<f64> {
    let den = margin_orig - margin_para;
    (den != 0.0).then(|| (margin_patched - margin_para) / den)
}

/// The patched margin answers like the original while the paraphrase did not.
pub fn is_reversed(margin_orig: f64, margin_para: f64, margin_patched: f64) -> bool {
    let yes = |m: f64| m > 0.0;
    yes(margin_patched) == yes(margin_orig) && yes(margin_orig) != yes(margin_para)
}

/// Maps an activation to a yes-minus-no margin.
pub trait MarginModel: Sync {
    fn margin(&self, x: &[f64]) -> f64;
}

/// `margin = (w_yes - w_no) . x + (b_yes - b_no)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReadout {
    pub w_yes: Vec<f64>,
    pub w_no: Vec<f64>,
    pub b_yes: f64,
    pub b_no: f64,
}

pub const READOUT_YES: &str = "readout_yes";
pub const READOUT_NO: &str = "readout_no";
pub const READOUT_BIAS: &str = "readout_bias";

impl LinearReadout {
    /// Reads `readout_yes`, `readout_no` and optional `readout_bias = [b_yes, b_no]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m = load_tensor_container(path)?;
        let mut take = |name: &str| -> Result<Vec<f64>> {
            let t = m
                .shift_remove(name)
                .ok_or_else(|| Error::Format(format!("{}: no `{name}` entry", path.display())))?;
            Ok(t.data().iter().map(|&v| v as f64).collect())
        };
        let w_yes = take(READOUT_YES)?;
        let w_no = take(READOUT_NO)?;
        let bias = take(READOUT_BIAS).unwrap_or_else(|_| vec![0.0, 0.0]);
        if w_yes.len() != w_no.len() || bias.len() != 2 {
            return Err(Error::dim("readout vectors disagree in length"));
        }
        Ok(LinearReadout {
            w_yes,
            w_no,
            b_yes: bias[0],
            b_no: bias[1],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let v = |w: &[f64]| Tensor::vector(w.iter().map(|&x| x as f32).collect());
        let mut m = TensorMap::new();
        m.insert(READOUT_YES.into(), v(&self.w_yes));
        m.insert(READOUT_NO.into(), v(&self.w_no));
        m.insert(READOUT_BIAS.into(), v(&[self.b_yes, self.b_no]));
        save_tensor_container(path, &m)
    }

    pub fn d_model(&self) -> usize {
        self.w_yes.len()
    }
}

impl MarginModel for LinearReadout {
    fn margin(&self, x: &[f64]) -> f64 {
        let dot = |w: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        (dot(&self.w_yes) + self.b_yes) - (dot(&self.w_no) + self.b_no)
    }
}

/// Final-token real-image activations `(x_orig, x_para)` for each case at
/// `layer`. Cases without both rows are returned separately.
pub fn resolve_case_rows(
    cases: &[FlipCase],
    acts: &ActivationMatrix,
    layer: u32,
) -> (Vec<FlipCase>, Vec<(Vec<f64>, Vec<f64>)>, Vec<FlipCase>) {
    let index = acts.index();
    let widen = |i: usize| acts.row(i).iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let (mut kept, mut rows, mut missing) = (Vec::new(), Vec::new(), Vec::new());
    for c in cases {
        let key = |p: Option<String>| {
            (c.model_id.clone(), c.question_id.clone(), p, "real".to_string(), layer)
        };
        match (index.get(&key(None)), index.get(&key(Some(c.paraphrase_id.clone())))) {
            (Some(&o), Some(&p)) => {
                let mut c = c.clone();
                c.orig_row = Some(acts.manifest()[o].clone());
                c.para_row = Some(acts.manifest()[p].clone());
                rows.push((widen(o), widen(p)));
                kept.push(c);
            }
            _ => {
                warn!("{}/{}: no activations at layer {layer}", c.question_id, c.paraphrase_id);
                missing.push(c.clone());
            }
        }
    }
    (kept, rows, missing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchOutcome {
    pub model_id: String,
    pub question_id: String,
    pub paraphrase_id: String,
    pub feature: usize,
    pub delta: f64,
    pub margin_orig: f64,
    pub margin_para: f64,
    pub margin_patched: f64,
    pub recovery: Option<f64>,
    pub reversed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingRecovery {
    pub n: usize,
    pub mean_recovery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSummary {
    pub feature: usize,
    pub n_cases: usize,
    /// Cases with a defined recovery.
    pub n_defined: usize,
    pub mean_recovery: Option<MetricValue>,
    pub median_recovery: Option<f64>,
    pub n_recovery_over_half: usize,
    pub n_reversed: usize,
    /// Mean of `(patched - para) * sign(orig - para)`.
    pub mean_margin_shift: Option<f64>,
    /// Patched vs paraphrase margins, both oriented toward the original.
    pub cohens_d: Option<f64>,
    pub by_finding: BTreeMap<String, FindingRecovery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSweep {
    pub outcomes: Vec<PatchOutcome>,
    pub summaries: Vec<PatchSummary>,
}

/// Delta-only patching of each feature on each case. All three margins come
/// from `model` so they share one frame.
pub fn patch_sweep(
    cases: &[FlipCase],
    inputs: &[(Vec<f64>, Vec<f64>)],
    sae: &Sae,
    model: &dyn MarginModel,
    features: &[usize],
    cfg: &BootstrapConfig,
    exec: Exec,
) -> Result<PatchSweep> {
    if cases.len() != inputs.len() {
        return Err(Error::dim(format!(
            "{} cases but {} activation pairs",
            cases.len(),
            inputs.len()
        )));
    }
    for &f in features {
        sae.check_feature(f)?;
    }
    let mut outcomes = Vec::new();
    let mut summaries = Vec::new();
    for &feature in features {
        let per_case: Vec<PatchOutcome> = exec
            .map_range(cases.len(), |k| {
                let (c, (xo, xp)) = (&cases[k], &inputs[k]);
                let delta = sae.feature_activation(xp, feature)? - sae.feature_activation(xo, feature)?;
                let patched = delta_patch(sae, xp, feature, delta)?;
                let (mo, mp, mx) = (model.margin(xo), model.margin(xp), model.margin(&patched));
                Ok(PatchOutcome {
                    model_id: c.model_id.clone(),
                    question_id: c.question_id.clone(),
                    paraphrase_id: c.paraphrase_id.clone(),
                    feature,
                    delta,
                    margin_orig: mo,
                    margin_para: mp,
                    margin_patched: mx,
                    recovery: margin_recovery(mo, mp, mx),
                    reversed: is_reversed(mo, mp, mx),
                })
            })
            .into_iter()
            .collect::<Result<_>>()?;
        summaries.push(summarize_patch(feature, cases, &per_case, cfg)?);
        outcomes.extend(per_case);
    }
    Ok(PatchSweep { outcomes, summaries })
}

fn summarize_patch(
    feature: usize,
    cases: &[FlipCase],
    outcomes: &[PatchOutcome],
    cfg: &BootstrapConfig,
) -> Result<PatchSummary> {
    let rec: Vec<f64> = outcomes.iter().filter_map(|o| o.recovery).collect();
    let oriented: Vec<(f64, f64)> = outcomes
        .iter()
        .filter(|o| o.margin_orig != o.margin_para)
        .map(|o| {
            let s = (o.margin_orig - o.margin_para).signum();
            (s * o.margin_patched, s * o.margin_para)
        })
        .collect();
    let shifts: Vec<f64> = oriented.iter().map(|(x, p)| x - p).collect();
    let mut by_finding: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (c, o) in cases.iter().zip(outcomes) {
        if let (Some(f), Some(r)) = (&c.finding, o.recovery) {
            by_finding.entry(f.clone()).or_default().push(r);
        }
    }
    let patched: Vec<f64> = oriented.iter().map(|p| p.0).collect();
    let para: Vec<f64> = oriented.iter().map(|p| p.1).collect();
    Ok(PatchSummary {
        feature,
        n_cases: outcomes.len(),
        n_defined: rec.len(),
        mean_recovery: if rec.is_empty() {
            None
        } else {
            Some(bootstrap_ci(&rec, cfg)?.into())
        },
        median_recovery: (!rec.is_empty()).then(|| median(&rec)),
        n_recovery_over_half: rec.iter().filter(|r| **r > 0.5).count(),
        n_reversed: outcomes.iter().filter(|o| o.reversed).count(),
        mean_margin_shift: (!shifts.is_empty())
            .then(|| shifts.iter().sum::<f64>() / shifts.len() as f64),
        cohens_d: cohens_d(&patched, &para).ok(),
        by_finding: by_finding
            .into_iter()
            .map(|(f, r)| {
                let row = FindingRecovery {
                    n: r.len(),
                    mean_recovery: r.iter().sum::<f64>() / r.len() as f64,
                };
                (f, row)
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBand {
    pub auc_low: f64,
    pub auc_high: f64,
}

impl Default for ControlBand {
    fn default() -> Self {
        ControlBand {
            auc_low: 0.45,
            auc_high: 0.55,
        }
    }
}

/// Feature with AUC in the band whose mean active magnitude is closest to
/// the target's; ties go to the lowest index. Features that never fire and
/// the target itself are not candidates.
pub fn select_control_feature(
    target: usize,
    stats: &[FeatureStats],
    aucs: &[Option<f64>],
    band: &ControlBand,
) -> Result<usize> {
    if target >= stats.len() || stats.len() != aucs.len() {
        return Err(Error::invalid(format!(
            "target {target} with {} feature stats and {} AUCs",
            stats.len(),
            aucs.len()
        )));
    }
    let goal = stats[target].mean_active;
    let mut best: Option<(f64, usize)> = None;
    for (s, auc) in stats.iter().zip(aucs) {
        let Some(auc) = auc else { continue };
        if s.index == target || s.n_active == 0 || *auc < band.auc_low || *auc > band.auc_high {
            continue;
        }
        let gap = (s.mean_active - goal).abs();
        if best.is_none_or(|(g, i)| gap < g || (gap == g && s.index < i)) {
            best = Some((gap, s.index));
        }
    }
    best.map(|b| b.1).ok_or_else(|| {
        Error::Undefined(format!(
            "no control candidate with AUC in [{}, {}]",
            band.auc_low, band.auc_high
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub before: MetricValue,
    pub after: MetricValue,
    /// `after - before`
    pub delta: f64,
    /// `(after - before) / before`; `None` when `before` is 0.
    pub relative_change: Option<f64>,
    /// Paired permutation test over matched units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub n_paired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformComparison {
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampEvaluation {
    pub flip_rate: MetricComparison,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<MetricComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_only_agreement: Option<MetricComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swap_sensitivity: Option<MetricComparison>,
    pub by_transform: BTreeMap<TransformType, TransformComparison>,
}

fn relative(before: f64, after: f64) -> Option<f64> {
    (before != 0.0).then(|| (after - before) / before)
}

fn compare(
    before: MetricValue,
    after: MetricValue,
    paired: &[(f64, f64)],
    perm: &PermutationConfig,
) -> Result<MetricComparison> {
    let (b, a): (Vec<f64>, Vec<f64>) = paired.iter().copied().unzip();
    let p_value = if paired.is_empty() {
        None
    } else {
        paired_permutation_test(&a, &b, perm)?.p_value
    };
    Ok(MetricComparison {
        before,
        after,
        delta: after.estimate - before.estimate,
        relative_change: relative(before.estimate, after.estimate),
        p_value,
        n_paired: paired.len(),
    })
}

fn real_outcomes(records: &[ParsedRecord], corpus: Option<&Corpus>) -> Result<Vec<QuestionOutcome>> {
    let table = build_outcomes(records, corpus)?;
    Ok(table
        .into_iter()
        .filter(|((_, cond), _)| cond == "real")
        .flat_map(|((model, _), os)| {
            os.into_iter().map(move |mut o| {
                o.question_id = format!("{model}\u{1f}{}", o.question_id);
                o
            })
        })
        .collect())
}

/// Indicator pairs for units present in both runs.
fn pair_indicators(before: &BTreeMap<String, bool>, after: &BTreeMap<String, bool>) -> Vec<(f64, f64)> {
    before
        .iter()
        .filter_map(|(k, &b)| Some((b as u8 as f64, *after.get(k)? as u8 as f64)))
        .collect()
}

fn prompt_map(records: &[ParsedRecord], a: &str, b: &str, same: bool) -> BTreeMap<String, bool> {
    let answers = |cond: &str| -> HashMap<(&str, &str), bool> {
        records
            .iter()
            .filter(|r| r.response.is_original() && r.response.condition.kind() == cond)
            .filter_map(|r| {
                let key = (r.response.model_id.as_str(), r.response.question_id.as_str());
                Some((key, r.parsed.polarity()?))
            })
            .collect()
    };
    let other = answers(b);
    answers(a)
        .into_iter()
        .filter_map(|((m, q), pa)| {
            let pb = other.get(&(m, q))?;
            Some((format!("{m}\u{1f}{q}"), (pa == *pb) == same))
        })
        .collect()
}

fn condition_metric(records: &[ParsedRecord], a: &str, b: &str, same: bool, cfg: &BootstrapConfig) -> Option<MetricValue> {
    let hits: Vec<f64> = matched_polarities(records, a, b, PromptScope::OriginalsOnly)
        .into_iter()
        .map(|(x, y)| ((x == y) == same) as u8 as f64)
        .collect();
    if hits.is_empty() {
        return None;
    }
    bootstrap_ci(&hits, cfg).ok().map(Into::into)
}

/// Before/after comparison of a baseline run and a clamped run.
pub fn clamp_evaluation(
    before: &[ParsedRecord],
    after: &[ParsedRecord],
    corpus: Option<&Corpus>,
    labels: Option<&HashMap<String, Label>>,
    cfg: &BootstrapConfig,
    perm: &PermutationConfig,
) -> Result<ClampEvaluation> {
    let ob = real_outcomes(before, corpus)?;
    let oa = real_outcomes(after, corpus)?;
    let flips = |os: &[QuestionOutcome]| -> BTreeMap<String, bool> {
        os.iter()
            .filter_map(|o| Some((o.question_id.clone(), o.flipped?)))
            .collect()
    };
    let flip_cmp = compare(
        flip_rate(&ob, cfg)?,
        flip_rate(&oa, cfg)?,
        &pair_indicators(&flips(&ob), &flips(&oa)),
        perm,
    )?;

    let accuracy_cmp = match labels {
        Some(labels) => {
            let correct = |rs: &[ParsedRecord]| -> BTreeMap<String, bool> {
                rs.iter()
                    .filter(|r| r.response.condition.kind() == "real" && r.response.is_original())
                    .filter_map(|r| {
                        let label = labels.get(&r.response.question_id)?;
                        let key = format!("{}\u{1f}{}", r.response.model_id, r.response.question_id);
                        Some((key, r.parsed.polarity()? == (*label == Label::Yes)))
                    })
                    .collect()
            };
            match (
                accuracy(before, labels, PromptScope::OriginalsOnly, cfg),
                accuracy(after, labels, PromptScope::OriginalsOnly, cfg),
            ) {
                (Ok(b), Ok(a)) => Some(compare(b, a, &pair_indicators(&correct(before), &correct(after)), perm)?),
                _ => None,
            }
        }
        None => None,
    };

    let cond_cmp = |other: &str, same: bool| -> Result<Option<MetricComparison>> {
        match (
            condition_metric(before, "real", other, same, cfg),
            condition_metric(after, "real", other, same, cfg),
        ) {
            (Some(b), Some(a)) => {
                let paired = pair_indicators(
                    &prompt_map(before, "real", other, same),
                    &prompt_map(after, "real", other, same),
                );
                Ok(Some(compare(b, a, &paired, perm)?))
            }
            _ => Ok(None),
        }
    };
    let text_only = cond_cmp("blank", true)?;
    let swap = cond_cmp("swap", false)?;

    let tb = flip_rate_by_transform(&ob, cfg)?;
    let ta = flip_rate_by_transform(&oa, cfg)?;
    let by_transform = TransformType::ALL
        .into_iter()
        .filter(|t| tb.contains_key(t) || ta.contains_key(t))
        .map(|t| {
            let b = tb.get(&t).map(|m| m.estimate);
            let a = ta.get(&t).map(|m| m.estimate);
            let rel = match (b, a) {
                (Some(b), Some(a)) => relative(b, a),
                _ => None,
            };
            (
                t,
                TransformComparison {
                    before: b,
                    after: a,
                    relative_change: rel,
                },
            )
        })
        .collect();
    Ok(ClampEvaluation {
        flip_rate: flip_cmp,
        accuracy: accuracy_cmp,
        text_only_agreement: text_only,
        swap_sensitivity: swap,
        by_transform,
    })
}

/// Parsed answer implied by a margin: Yes iff positive.
pub fn answer_from_margin(margin: f64) -> ParsedAnswer {
    if margin > 0.0 {
        ParsedAnswer::Yes
    } else {
        ParsedAnswer::No
    }
}
