use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::answer::ParsedAnswer;

/// Checked on every record read from disk; a violation rejects the file.
pub trait Validate {
    fn validate(&self) -> Result<(), String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetId {
    Mimic,
    Padchest,
    Vindr,
    Synthetic,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Presence,
    Abnormality,
    Location,
    View,
    Other,
}

/// How a paraphrase was derived from its original question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformType {
    Lexical,
    Syntactic,
    Negation,
    Scope,
    Specificity,
}

impl TransformType {
    pub const ALL: [TransformType; 5] = [
        TransformType::Lexical,
        TransformType::Syntactic,
        TransformType::Negation,
        TransformType::Scope,
        TransformType::Specificity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransformType::Lexical => "lexical",
            TransformType::Syntactic => "syntactic",
            TransformType::Negation => "negation",
            TransformType::Scope => "scope",
            TransformType::Specificity => "specificity",
        }
    }
}

impl fmt::Display for TransformType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseRecord {
    pub paraphrase_id: String,
    pub text: String,
    pub transform_type: TransformType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_to_original: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub dataset_id: DatasetId,
    pub image_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finding: Option<String>,
    pub question_type: QuestionType,
    #[serde(default)]
    pub paraphrases: Vec<ParaphraseRecord>,
}

impl QuestionRecord {
    pub fn paraphrase(&self, paraphrase_id: &str) -> Option<&ParaphraseRecord> {
        self.paraphrases
            .iter()
            .find(|p| p.paraphrase_id == paraphrase_id)
    }
}

impl Validate for QuestionRecord {
    fn validate(&self) -> Result<(), String> {
        if self.question_id.is_empty() {
            return Err("empty question_id".into());
        }
        let mut seen = HashSet::new();
        for p in &self.paraphrases {
            if !seen.insert(p.paraphrase_id.as_str()) {
                return Err(format!(
                    "question {}: duplicate paraphrase_id {}",
                    self.question_id, p.paraphrase_id
                ));
            }
            if let Some(s) = p.similarity_to_original {
                if !(-1.0..=1.0).contains(&s) {
                    return Err(format!(
                        "question {}: paraphrase {} similarity {s} outside [-1, 1]",
                        self.question_id, p.paraphrase_id
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Image condition a response was recorded under.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Real,
    Blank,
    Noise,
    Swap { swap_image_id: String },
}

impl Condition {
    /// Condition name without the swap payload.
    pub fn kind(&self) -> &'static str {
        match self {
            Condition::Real => "real",
            Condition::Blank => "blank",
            Condition::Noise => "noise",
            Condition::Swap { .. } => "swap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub model_id: String,
    pub question_id: String,
    /// Absent for the original question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrase_id: Option<String>,
    pub condition: Condition,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_logit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_logit: Option<f64>,
}

impl ResponseRecord {
    /// Yes-minus-no logit margin, when logits were recorded.
    pub fn margin(&self) -> Option<f64> {
        Some(self.yes_logit? - self.no_logit?)
    }

    pub fn is_original(&self) -> bool {
        self.paraphrase_id.is_none()
    }

    /// Checks the swap image against the corpus: it must exist as a question
    /// image id elsewhere and differ from this question's own image.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<(), String> {
        let q = corpus
            .get(&self.question_id)
            .ok_or_else(|| format!("unknown question_id {}", self.question_id))?;
        if let Some(pid) = &self.paraphrase_id {
            if q.paraphrase(pid).is_none() {
                return Err(format!(
                    "question {} has no paraphrase {pid}",
                    self.question_id
                ));
            }
        }
        if let Condition::Swap { swap_image_id } = &self.condition {
            if *swap_image_id == q.image_id {
                return Err(format!(
                    "question {}: swap image equals the question's own image {}",
                    self.question_id, q.image_id
                ));
            }
        }
        Ok(())
    }
}

impl Validate for ResponseRecord {
    fn validate(&self) -> Result<(), String> {
        if self.yes_logit.is_some() != self.no_logit.is_some() {
            return Err(format!(
                "{}/{}: yes_logit and no_logit must be both present or both absent",
                self.model_id, self.question_id
            ));
        }
        if let Condition::Swap { swap_image_id } = &self.condition {
            if swap_image_id.is_empty() {
                return Err("swap condition with empty swap_image_id".into());
            }
        }
        Ok(())
    }
}

/// A response together with its parsed label; one JSONL line of `parse` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedRecord {
    #[serde(flatten)]
    pub response: ResponseRecord,
    pub parsed: ParsedAnswer,
}

impl Validate for ParsedRecord {
    fn validate(&self) -> Result<(), String> {
        self.response.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Yes,
    No,
}

/// Ground-truth answer for a question (and, implicitly, its paraphrases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub question_id: String,
    pub label: Label,
}

impl Validate for LabelRecord {
    fn validate(&self) -> Result<(), String> {
        if self.question_id.is_empty() {
            return Err("empty question_id".into());
        }
        Ok(())
    }
}

/// Normalized image-space box; `x0 < x1` and `y0 < y1`, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, String> {
        let b = BoundingBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

impl Validate for BoundingBox {
    fn validate(&self) -> Result<(), String> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![self.x0, self.y0, self.x1, self.y1].into_iter().all(unit) {
            return Err(format!("box {self:?} outside the unit square"));
        }
        if !(self.x0 < self.x1 && self.y0 < self.y1) {
            return Err(format!("box {self:?} is empty or inverted"));
        }
        Ok(())
    }
}

pub const ATTENTION_GRID_SIDE: usize = 16;

/// Head- and layer-averaged attention over the 16x16 image-token grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AttentionGrid {
    values: Vec<f64>,
}

impl AttentionGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, String> {
        if values.len() != ATTENTION_GRID_SIDE * ATTENTION_GRID_SIDE {
            return Err(format!(
                "attention grid needs {} values, got {}",
                ATTENTION_GRID_SIDE * ATTENTION_GRID_SIDE,
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("attention grid entries must be finite and nonnegative".into());
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err("attention grid is all zeros".into());
        }
        Ok(AttentionGrid { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl TryFrom<Vec<Vec<f64>>> for AttentionGrid {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        if rows.len() != ATTENTION_GRID_SIDE || rows.iter().any(|r| r.len() != ATTENTION_GRID_SIDE)
        {
            return Err(format!(
                "attention grid must be {0}x{0}",
                ATTENTION_GRID_SIDE
            ));
        }
        AttentionGrid::new(rows.into_iter().flatten().collect())
    }
}

impl From<AttentionGrid> for Vec<Vec<f64>> {
    fn from(g: AttentionGrid) -> Self {
        g.values
            .chunks(ATTENTION_GRID_SIDE)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

/// One attention/box case for the grounding analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionCase {
    pub case_id: String,
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub grid: AttentionGrid,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Flip status, when known at export time; otherwise joined from parsed logs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flipped: Option<bool>,
}

impl Validate for AttentionCase {
    fn validate(&self) -> Result<(), String> {
        self.bbox.validate()
    }
}

/// A (question, paraphrase) pair to compare in embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRef {
    pub question_id: String,
    pub paraphrase_id: String,
    pub transform_type: TransformType,
    pub original_text_id: String,
    pub paraphrase_text_id: String,
}

impl Validate for PairRef {
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Text id used in embedding manifests for a question or one of its paraphrases.
pub fn text_id(question_id: &str, paraphrase_id: Option<&str>) -> String {
    match paraphrase_id {
        None => question_id.to_string(),
        Some(p) => format!("{question_id}::{p}"),
    }
}

/// Questions keyed by id, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    questions: Vec<QuestionRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(questions: Vec<QuestionRecord>) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            q.validate()?;
            if index.insert(q.question_id.clone(), i).is_some() {
                return Err(format!("duplicate question_id {}", q.question_id));
            }
        }
        Ok(Corpus { questions, index })
    }

    pub fn questions(&self) -> &[QuestionRecord] {
        &self.questions
    }

    pub fn get(&self, question_id: &str) -> Option<&QuestionRecord> {
        self.index.get(question_id).map(|&i| &self.questions[i])
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn n_paraphrases(&self) -> usize {
        self.questions.iter().map(|q| q.paraphrases.len()).sum()
    }

    pub fn transform_of(&self, question_id: &str, paraphrase_id: &str) -> Option<TransformType> {
        Some(self.get(question_id)?.paraphrase(paraphrase_id)?.transform_type)
    }

    /// Every (original, paraphrase) pair, with the default text-id convention.
    pub fn pairs(&self) -> Vec<PairRef> {
        self.questions
            .iter()
            .flat_map(|q| {
                q.paraphrases.iter().map(move |p| PairRef {
                    question_id: q.question_id.clone(),
                    paraphrase_id: p.paraphrase_id.clone(),
                    transform_type: p.transform_type,
                    original_text_id: text_id(&q.question_id, None),
                    paraphrase_text_id: text_id(&q.question_id, Some(&p.paraphrase_id)),
                })
            })
            .collect()
    }

    pub fn into_questions(self) -> Vec<QuestionRecord> {
        self.questions
    }
}
