//! Domain records and the on-disk formats every other module consumes.

mod jsonl;
mod matrices;
mod records;
mod tensor;

pub use jsonl::{load_corpus, read_json, read_jsonl, write_json, write_jsonl};
pub use matrices::{
    manifest_path, validate_sae, ActivationMatrix, EmbeddingMatrix, RowRef, SaeParams, SaeReport,
    SAE_ENTRIES,
};
pub use records::{
    text_id, AttentionCase, AttentionGrid, BoundingBox, Condition, Corpus, DatasetId, Label,
    LabelRecord, PairRef, ParaphraseRecord, ParsedRecord, QuestionRecord, QuestionType,
    ResponseRecord, TransformType, Validate, ATTENTION_GRID_SIDE,
};
pub use tensor::{
    decode_container, encode_container, load_tensor_container, save_tensor_container, Tensor,
    TensorMap,
};
