//! Behavioral consistency metrics over parsed answers.
//!
//! Question-level flips follow the "any paraphrase disagrees with the
//! original" rule. Excluded answers never enter a numerator or denominator;
//! questions whose flip is undefined are tallied in [`CoverageReport`].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::answer::ParsedAnswer;
use crate::error::{Error, Result};
use crate::interchange::{Corpus, Label, ParsedRecord, TransformType};
use crate::stats::{bootstrap_ci, bootstrap_statistic, pearson_r, BootstrapConfig, StatResult};

/// Point estimate with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl From<StatResult> for MetricValue {
    fn from(r: StatResult) -> Self {
        MetricValue {
            estimate: r.estimate,
            ci_low: r.ci_low.unwrap_or(r.estimate),
            ci_high: r.ci_high.unwrap_or(r.estimate),
            n: r.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseAnswer {
    pub paraphrase_id: String,
    pub transform_type: Option<TransformType>,
    pub answer: ParsedAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question_id: String,
    /// `None` when no response to the original question was recorded.
    pub original_answer: Option<ParsedAnswer>,
    pub paraphrase_answers: Vec<ParaphraseAnswer>,
    /// `None` when the flip is undefined.
    pub flipped: Option<bool>,
    pub n_valid_pairs: usize,
}

impl QuestionOutcome {
    pub fn new(
        question_id: impl Into<String>,
        original_answer: Option<ParsedAnswer>,
        mut paraphrase_answers: Vec<ParaphraseAnswer>,
    ) -> Self {
        paraphrase_answers.sort_by(|a, b| a.paraphrase_id.cmp(&b.paraphrase_id));
        let answers: Vec<ParsedAnswer> = paraphrase_answers.iter().map(|p| p.answer).collect();
        let flipped = original_answer.and_then(|o| detect_flip(o, &answers));
        let n_valid_pairs = match original_answer {
            Some(o) if o.is_valid() => answers.iter().filter(|a| a.is_valid()).count(),
            _ => 0,
        };
        QuestionOutcome {
            question_id: question_id.into(),
            original_answer,
            paraphrase_answers,
            flipped,
            n_valid_pairs,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.flipped.is_some()
    }

    /// Valid paraphrase answers as polarities, when the original is valid.
    fn valid_pairs(&self) -> impl Iterator<Item = (bool, &ParaphraseAnswer)> {
        let orig = self.original_answer.and_then(ParsedAnswer::polarity);
        self.paraphrase_answers
            .iter()
            .filter_map(move |p| Some((orig? != p.answer.polarity()?, p)))
    }

    fn n_valid_paraphrases(&self) -> usize {
        self.paraphrase_answers.iter().filter(|p| p.answer.is_valid()).count()
    }
}

/// `Some(true)` iff some valid paraphrase answer differs from a valid
/// original; `None` when the original is excluded or no paraphrase is valid.
pub fn detect_flip(original: ParsedAnswer, paraphrases: &[ParsedAnswer]) -> Option<bool> {
    let orig = original.polarity()?;
    let mut any_valid = false;
    for p in paraphrases.iter().filter_map(|p| p.polarity()) {
        if p != orig {
            return Some(true);
        }
        any_valid = true;
    }
    any_valid.then_some(false)
}

/// Outcomes grouped by `(model_id, condition kind)`, each sorted by question id.
pub type OutcomeTable = BTreeMap<(String, String), Vec<QuestionOutcome>>;

/// Groups parsed records into per-question outcomes. Transform types come
/// from `corpus` when given. A second response for the same model, condition,
/// question and prompt is an error.
pub fn build_outcomes(records: &[ParsedRecord], corpus: Option<&Corpus>) -> Result<OutcomeTable> {
    type Slot = (Option<ParsedAnswer>, Vec<ParaphraseAnswer>);
    let mut groups: BTreeMap<(String, String), BTreeMap<String, Slot>> = BTreeMap::new();
    for rec in records {
        let r = &rec.response;
        let slot = groups
            .entry((r.model_id.clone(), r.condition.kind().to_string()))
            .or_default()
            .entry(r.question_id.clone())
            .or_default();
        let duplicate = || {
            Error::invalid(format!(
                "duplicate response: model {} condition {} question {} prompt {}",
                r.model_id,
                r.condition.kind(),
                r.question_id,
                r.paraphrase_id.as_deref().unwrap_or("original")
            ))
        };
        match &r.paraphrase_id {
            None => {
                if slot.0.replace(rec.parsed).is_some() {
                    return Err(duplicate());
                }
            }
            Some(pid) => {
                if slot.1.iter().any(|p| p.paraphrase_id == *pid) {
                    return Err(duplicate());
                }
                slot.1.push(ParaphraseAnswer {
                    paraphrase_id: pid.clone(),
                    transform_type: corpus.and_then(|c| c.transform_of(&r.question_id, pid)),
                    answer: rec.parsed,
                });
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|(key, qs)| {
            let outcomes = qs
                .into_iter()
                .map(|(qid, (orig, paras))| QuestionOutcome::new(qid, orig, paras))
                .collect();
            (key, outcomes)
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_questions: usize,
    pub defined: usize,
    pub missing_original: usize,
    pub original_excluded: usize,
    pub no_valid_paraphrase: usize,
    pub excluded_paraphrases: usize,
}

pub fn coverage(outcomes: &[QuestionOutcome]) -> CoverageReport {
    let mut c = CoverageReport {
        n_questions: outcomes.len(),
        ..Default::default()
    };
    for o in outcomes {
        c.excluded_paraphrases += o.paraphrase_answers.len() - o.n_valid_paraphrases();
        match o.original_answer {
            None => c.missing_original += 1,
            Some(a) if !a.is_valid() => c.original_excluded += 1,
            Some(_) if o.n_valid_pairs == 0 => c.no_valid_paraphrase += 1,
            Some(_) => c.defined += 1,
        }
    }
    c
}

fn ratio_metric(name: &str, parts: &[(f64, f64)], cfg: &BootstrapConfig) -> Result<MetricValue> {
    let total: f64 = parts.iter().map(|p| p.1).sum();
    if total == 0.0 {
        return Err(Error::Undefined(format!("{name}: empty denominator")));
    }
    let r = bootstrap_statistic(name, parts.len(), cfg, |idx| {
        let (num, den) = idx
            .iter()
            .fold((0.0, 0.0), |acc, &i| (acc.0 + parts[i].0, acc.1 + parts[i].1));
        if den == 0.0 {
            f64::NAN
        } else {
            num / den
        }
    })?;
    Ok(MetricValue {
        n: total as usize,
        ..r.into()
    })
}

fn indicator_metric(name: &str, hits: &[bool], cfg: &BootstrapConfig) -> Result<MetricValue> {
    if hits.is_empty() {
        return Err(Error::Undefined(format!("{name}: empty denominator")));
    }
    let v: Vec<f64> = hits.iter().map(|&h| h as u8 as f64).collect();
    Ok(bootstrap_ci(&v, cfg)?.into())
}

/// Question-level flip rate over defined outcomes.
pub fn flip_rate(outcomes: &[QuestionOutcome], cfg: &BootstrapConfig) -> Result<MetricValue> {
    let flips: Vec<bool> = outcomes.iter().filter_map(|o| o.flipped).collect();
    indicator_metric("flip_rate", &flips, cfg)
}

/// Fraction of valid (original, paraphrase) pairs whose answers differ.
/// Bootstrap resamples questions.
pub fn pairwise_disagreement_rate(
    outcomes: &[QuestionOutcome],
    cfg: &BootstrapConfig,
) -> Result<MetricValue> {
    let parts: Vec<(f64, f64)> = outcomes
        .iter()
        .filter(|o| o.n_valid_pairs > 0)
        .map(|o| {
            let differing = o.valid_pairs().filter(|(d, _)| *d).count();
            (differing as f64, o.n_valid_pairs as f64)
        })
        .collect();
    ratio_metric("pairwise_disagreement_rate", &parts, cfg)
}

/// `(disagreeing, total)` unordered pairs among a question's valid answers.
pub fn contradiction_pairs(outcome: &QuestionOutcome, include_original: bool) -> (usize, usize) {
    let mut yes = 0;
    let mut no = 0;
    let answers = outcome.paraphrase_answers.iter().map(|p| p.answer);
    let orig = include_original.then_some(outcome.original_answer).flatten();
    for a in answers.chain(orig).filter_map(ParsedAnswer::polarity) {
        if a {
            yes += 1;
        } else {
            no += 1;
        }
    }
    let m = yes + no;
    (yes * no, m * m.saturating_sub(1) / 2)
}

/// Pooled fraction of disagreeing unordered pairs among each question's
/// valid answers. Questions with fewer than two valid answers in the pair
/// set do not contribute.
pub fn symmetric_contradiction_rate(
    outcomes: &[QuestionOutcome],
    include_original: bool,
    cfg: &BootstrapConfig,
) -> Result<MetricValue> {
    let parts: Vec<(f64, f64)> = outcomes
        .iter()
        .filter(|o| !include_original || o.original_answer.is_some_and(ParsedAnswer::is_valid))
        .map(|o| contradiction_pairs(o, include_original))
        .filter(|p| p.1 > 0)
        .map(|(d, t)| (d as f64, t as f64))
        .collect();
    ratio_metric("symmetric_contradiction_rate", &parts, cfg)
}

/// Pairwise disagreement within each transform type. Types without valid
/// pairs are absent from the map.
pub fn flip_rate_by_transform(
    outcomes: &[QuestionOutcome],
    cfg: &BootstrapConfig,
) -> Result<BTreeMap<TransformType, MetricValue>> {
    let mut out = BTreeMap::new();
    for t in TransformType::ALL {
        let parts: Vec<(f64, f64)> = outcomes
            .iter()
            .map(|o| {
                o.valid_pairs()
                    .filter(|(_, p)| p.transform_type == Some(t))
                    .fold((0.0, 0.0), |acc, (d, _)| (acc.0 + d as u8 as f64, acc.1 + 1.0))
            })
            .filter(|p| p.1 > 0.0)
            .collect();
        if !parts.is_empty() {
            out.insert(t, ratio_metric(t.as_str(), &parts, cfg)?);
        }
    }
    Ok(out)
}

/// Question-level flip rate stratified by the number of valid paraphrases.
pub fn flip_rate_by_paraphrase_count(
    outcomes: &[QuestionOutcome],
    cfg: &BootstrapConfig,
) -> Result<BTreeMap<usize, MetricValue>> {
    let mut strata: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
    for o in outcomes {
        if let Some(f) = o.flipped {
            strata.entry(o.n_valid_pairs).or_default().push(f);
        }
    }
    strata
        .into_iter()
        .map(|(k, flips)| Ok((k, indicator_metric("flip_rate", &flips, cfg)?)))
        .collect()
}

/// Which prompts enter cross-condition comparisons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptScope {
    #[default]
    OriginalsOnly,
    AllPrompts,
}

type PromptKey<'a> = (&'a str, &'a str, Option<&'a str>);

/// Per-prompt polarities from two conditions, matched on
/// `(model, question, paraphrase)`; prompts excluded in either are dropped.
pub fn matched_polarities(
    records: &[ParsedRecord],
    condition_a: &str,
    condition_b: &str,
    scope: PromptScope,
) -> Vec<(bool, bool)> {
    let index = |cond: &str| -> BTreeMap<PromptKey<'_>, bool> {
        records
            .iter()
            .filter(|r| r.response.condition.kind() == cond)
            .filter(|r| scope == PromptScope::AllPrompts || r.response.is_original())
            .filter_map(|r| {
                let key = (
                    r.response.model_id.as_str(),
                    r.response.question_id.as_str(),
                    r.response.paraphrase_id.as_deref(),
                );
                Some((key, r.parsed.polarity()?))
            })
            .collect()
    };
    let a = index(condition_a);
    let b = index(condition_b);
    a.iter()
        .filter_map(|(k, &pa)| Some((pa, *b.get(k)?)))
        .collect()
}

/// Fraction of prompts answered identically with the real image and with a
/// blank image.
pub fn text_only_agreement(
    records: &[ParsedRecord],
    scope: PromptScope,
    cfg: &BootstrapConfig,
) -> Result<MetricValue> {
    let same: Vec<bool> = matched_polarities(records, "real", "blank", scope)
        .into_iter()
        .map(|(a, b)| a == b)
        .collect();
    indicator_metric("text_only_agreement", &same, cfg)
}

/// Fraction of prompts whose answer changes when the image is swapped for
/// another patient's.
pub fn swap_sensitivity(
    records: &[ParsedRecord],
    scope: PromptScope,
    cfg: &BootstrapConfig,
) -> Result<MetricValue> {
    let changed: Vec<bool> = matched_polarities(records, "real", "swap", scope)
        .into_iter()
        .map(|(a, b)| a != b)
        .collect();
    indicator_metric("swap_sensitivity", &changed, cfg)
}

/// Question-level flip rate within the blank-image condition.
pub fn blank_image_flip_rate(
    records: &[ParsedRecord],
    cfg: &BootstrapConfig,
) -> Result<MetricValue> {
    let blank: Vec<ParsedRecord> = records
        .iter()
        .filter(|r| r.response.condition.kind() == "blank")
        .cloned()
        .collect();
    let outcomes: Vec<QuestionOutcome> = build_outcomes(&blank, None)?
        .into_values()
        .flatten()
        .collect();
    flip_rate(&outcomes, cfg)
}

/// Fraction of valid real-image answers matching the question's label.
pub fn accuracy(
    records: &[ParsedRecord],
    labels: &HashMap<String, Label>,
    scope: PromptScope,
    cfg: &BootstrapConfig,
) -> Result<MetricValue> {
    let correct: Vec<bool> = records
        .iter()
        .filter(|r| r.response.condition.kind() == "real")
        .filter(|r| scope == PromptScope::AllPrompts || r.response.is_original())
        .filter_map(|r| {
            let said_yes = r.parsed.polarity()?;
            let label = labels.get(&r.response.question_id)?;
            Some(said_yes == (*label == Label::Yes))
        })
        .collect();
    indicator_metric("accuracy", &correct, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub models: Vec<String>,
    /// `None` where a flip vector is constant on the shared questions.
    pub r: Vec<Vec<Option<f64>>>,
    pub n_shared: Vec<Vec<usize>>,
}

impl CorrelationMatrix {
    /// Mean of the defined off-diagonal correlations.
    pub fn mean_off_diagonal(&self) -> Option<f64> {
        let vals: Vec<f64> = (0..self.models.len())
            .flat_map(|i| (i + 1..self.models.len()).filter_map(move |j| self.r[i][j]))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Pearson correlation (the phi coefficient) between models' 0/1 flip
/// indicators on the questions both have defined.
pub fn cross_model_flip_correlation(
    per_model: &BTreeMap<String, Vec<QuestionOutcome>>,
) -> CorrelationMatrix {
    let models: Vec<String> = per_model.keys().cloned().collect();
    let flips: Vec<HashMap<&str, bool>> = per_model
        .values()
        .map(|os| {
            os.iter()
                .filter_map(|o| Some((o.question_id.as_str(), o.flipped?)))
                .collect()
        })
        .collect();
    let m = models.len();
    let mut r = vec![vec![None; m]; m];
    let mut n_shared = vec![vec![0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let mut shared: Vec<(&str, bool, bool)> = flips[i]
                .iter()
                .filter_map(|(q, &a)| Some((*q, a, *flips[j].get(q)?)))
                .collect();
            shared.sort();
            n_shared[i][j] = shared.len();
            r[i][j] = if i == j {
                Some(1.0)
            } else {
                let x: Vec<f64> = shared.iter().map(|s| s.1 as u8 as f64).collect();
                let y: Vec<f64> = shared.iter().map(|s| s.2 as u8 as f64).collect();
                pearson_r(&x, &y).ok().map(|s| s.estimate)
            };
        }
    }
    CorrelationMatrix { models, r, n_shared }
}
