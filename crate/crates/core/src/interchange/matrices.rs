use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::jsonl::{read_json, write_json};
use super::records::Condition;
use super::tensor::{load_tensor_container, save_tensor_container, Tensor, TensorMap};
use crate::error::{Error, Result};

/// Entry names of an SAE container.
pub const SAE_ENTRIES: [&str; 5] = ["W_enc", "b_enc", "theta", "W_dec", "b_dec"];

/// JumpReLU SAE weights as stored on disk. Dimensions are unchecked until
/// [`validate_sae`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    /// `d_model x n_features`
    pub w_enc: Tensor,
    pub b_enc: Tensor,
    pub theta: Tensor,
    /// `n_features x d_model`
    pub w_dec: Tensor,
    pub b_dec: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeReport {
    pub d_model: usize,
    pub n_features: usize,
    pub non_positive_thresholds: usize,
    pub warnings: Vec<String>,
}

impl SaeParams {
    pub fn from_tensors(mut map: TensorMap) -> Result<Self> {
        let mut take = |name: &str| {
            map.shift_remove(name)
                .ok_or_else(|| Error::Format(format!("SAE container is missing entry {name}")))
        };
        Ok(SaeParams {
            w_enc: take("W_enc")?,
            b_enc: take("b_enc")?,
            theta: take("theta")?,
            w_dec: take("W_dec")?,
            b_dec: take("b_dec")?,
        })
    }

    pub fn to_tensors(&self) -> TensorMap {
        let mut m = TensorMap::new();
        for (name, t) in SAE_ENTRIES.iter().zip([
            &self.w_enc,
            &self.b_enc,
            &self.theta,
            &self.w_dec,
            &self.b_dec,
        ]) {
            m.insert((*name).to_string(), t.clone());
        }
        m
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let params = SaeParams::from_tensors(load_tensor_container(path)?)?;
        validate_sae(&params)?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tensor_container(path, &self.to_tensors())
    }
}

/// Checks dimension consistency. Non-positive thresholds are reported as
/// warnings; non-finite thresholds and shape mismatches are errors.
pub fn validate_sae(p: &SaeParams) -> Result<SaeReport> {
    let (d_model, n_features) = p
        .w_enc
        .shape2()
        .ok_or_else(|| Error::dim(format!("W_enc must be 2-D, got {:?}", p.w_enc.dims())))?;
    if d_model == 0 || n_features == 0 {
        return Err(Error::dim("W_enc has a zero dimension"));
    }
    let expect_vec = |t: &Tensor, name: &str, n: usize| {
        if t.dims() != [n] {
            Err(Error::dim(format!("{name} has shape {:?}, expected [{n}]", t.dims())))
        } else {
            Ok(())
        }
    };
    expect_vec(&p.b_enc, "b_enc", n_features)?;
    expect_vec(&p.theta, "theta", n_features)?;
    expect_vec(&p.b_dec, "b_dec", d_model)?;
    if p.w_dec.shape2() != Some((n_features, d_model)) {
        return Err(Error::dim(format!(
            "W_dec has shape {:?}, expected [{n_features}, {d_model}]",
            p.w_dec.dims()
        )));
    }
    if p.theta.data().iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("theta contains non-finite entries"));
    }
    let non_positive_thresholds = p.theta.data().iter().filter(|&&t| t <= 0.0).count();
    let mut warnings = Vec::new();
    if non_positive_thresholds > 0 {
        let w = format!("{non_positive_thresholds} feature(s) have theta <= 0");
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(SaeReport {
        d_model,
        n_features,
        non_positive_thresholds,
        warnings,
    })
}

/// Provenance of one activation row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowRef {
    pub model_id: String,
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrase_id: Option<String>,
    pub condition: Condition,
    pub layer: u32,
    /// Token position; negative values count from the end (-1 = final token).
    pub position: i64,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// Residual-stream activations, one row per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    d_model: usize,
    data: Vec<f32>,
    manifest: Vec<RowRef>,
}

const ACTIVATIONS: &str = "activations";

impl ActivationMatrix {
    pub fn new(d_model: usize, data: Vec<f32>, manifest: Vec<RowRef>) -> Result<Self> {
        if d_model == 0 || data.len() != d_model * manifest.len() {
            return Err(Error::dim(format!(
                "{} values cannot form {} rows of width {d_model}",
                data.len(),
                manifest.len()
            )));
        }
        Ok(ActivationMatrix {
            d_model,
            data,
            manifest,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn n_rows(&self) -> usize {
        self.manifest.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d_model..(i + 1) * self.d_model]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d_model)
    }

    pub fn manifest(&self) -> &[RowRef] {
        &self.manifest
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Row index keyed by `(model, question, paraphrase, condition kind, layer)`.
    pub fn index(&self) -> HashMap<(String, String, Option<String>, String, u32), usize> {
        self.manifest
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    (
                        r.model_id.clone(),
                        r.question_id.clone(),
                        r.paraphrase_id.clone(),
                        r.condition.kind().to_string(),
                        r.layer,
                    ),
                    i,
                )
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut m = TensorMap::new();
        m.insert(
            ACTIVATIONS.into(),
            Tensor::matrix(self.n_rows(), self.d_model, self.data.clone())?,
        );
        save_tensor_container(path, &m)?;
        write_json(manifest_path(path), &self.manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m = load_tensor_container(path)?;
        let t = m
            .shift_remove(ACTIVATIONS)
            .ok_or_else(|| Error::Format(format!("{}: no `activations` entry", path.display())))?;
        let (rows, d) = t
            .shape2()
            .ok_or_else(|| Error::dim("activations must be 2-D"))?;
        let manifest: Vec<RowRef> = read_json(manifest_path(path))?;
        if manifest.len() != rows {
            return Err(Error::dim(format!(
                "{} activation rows but {} manifest entries",
                rows,
                manifest.len()
            )));
        }
        ActivationMatrix::new(d, t.into_data(), manifest)
    }
}

/// Text embeddings with a row -> text id manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

const EMBEDDINGS: &str = "embeddings";

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>, ids: Vec<String>) -> Result<Self> {
        if dim == 0 || data.len() != dim * ids.len() {
            return Err(Error::dim(format!(
                "{} values cannot form {} rows of width {dim}",
                data.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate embedding id {id}")));
            }
            if data[i * dim..(i + 1) * dim].iter().all(|v| *v == 0.0) {
                return Err(Error::invalid(format!("embedding for {id} is all zeros")));
            }
        }
        Ok(EmbeddingMatrix {
            dim,
            data,
            ids,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut m = TensorMap::new();
        m.insert(
            EMBEDDINGS.into(),
            Tensor::matrix(self.ids.len(), self.dim, self.data.clone())?,
        );
        save_tensor_container(path, &m)?;
        write_json(manifest_path(path), &self.ids)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m = load_tensor_container(path)?;
        let t = m
            .shift_remove(EMBEDDINGS)
            .ok_or_else(|| Error::Format(format!("{}: no `embeddings` entry", path.display())))?;
        let (_, dim) = t
            .shape2()
            .ok_or_else(|| Error::dim("embeddings must be 2-D"))?;
        let ids: Vec<String> = read_json(manifest_path(path))?;
        EmbeddingMatrix::new(dim, t.into_data(), ids)
    }
}
