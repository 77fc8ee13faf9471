//! JSON documents written by one subcommand and read by `report`.

use std::collections::BTreeMap;

use flipkit::grounding::{GroundingConfig, GroupComparison};
use flipkit::interchange::TransformType;
use flipkit::interventions::{ClampEvaluation, PatchSummary};
use flipkit::metrics::{CorrelationMatrix, CoverageReport, MetricValue, PromptScope};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub coverage: CoverageReport,
    /// Question level: any valid paraphrase disagrees with the original.
    pub flip_rate: Option<MetricValue>,
    /// Per paraphrase: pooled over valid (original, paraphrase) pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairwise_disagreement: Option<MetricValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetric_contradiction: Option<MetricValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_transform: Option<BTreeMap<TransformType, MetricValue>>,
    pub by_paraphrase_count: BTreeMap<usize, MetricValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub flip_rate: Option<MetricValue>,
    pub pairwise_disagreement: Option<MetricValue>,
    pub accuracy: Option<MetricValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub conditions: BTreeMap<String, ConditionMetrics>,
    /// Real-image metrics per dataset; empty without a corpus.
    pub by_dataset: BTreeMap<String, DatasetMetrics>,
    pub accuracy: Option<MetricValue>,
    pub text_only_agreement: Option<MetricValue>,
    pub swap_sensitivity: Option<MetricValue>,
    pub blank_image_flip_rate: Option<MetricValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub bootstrap: usize,
    pub scope: PromptScope,
    pub models: BTreeMap<String, ModelMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_model: Option<CorrelationMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionModel {
    pub n_cases: usize,
    pub coverage: GroupComparison,
    pub precision: GroupComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub config: GroundingConfig,
    pub n_cases: usize,
    /// Cases without a flip label, left out of the comparisons.
    pub n_unlabeled: usize,
    pub models: BTreeMap<String, AttentionModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub seed: u64,
    pub layer: u32,
    pub n_cases: usize,
    pub n_missing_rows: usize,
    pub summaries: Vec<PatchSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampReport {
    pub method: String,
    pub seed: u64,
    pub evaluation: ClampEvaluation,
}
