//! A linear toy model with a planted register feature and an SAE aligned
//! to it, for exercising the whole pipeline with known ground truth.
//!
//! Activations live in a random orthonormal basis: `u` carries register,
//! `v` carries image evidence, `k` a constant prior, and the remaining
//! directions carry question content. With readouts `r_yes = v + k` and
//! `r_no = u`, the margin is `w_v e + prior - w_r r` (plus noise), so
//! formal phrasing pushes answers toward No.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::interchange::{
    text_id, ActivationMatrix, Condition, DatasetId, EmbeddingMatrix, Label, LabelRecord, PairRef,
    ParaphraseRecord, QuestionRecord, QuestionType, ResponseRecord, RowRef, TransformType, Validate,
};
use crate::interventions::{clamp_features, LinearReadout, MarginModel};
use crate::normalizer::FindingDictionary;
use crate::sae::Sae;
use crate::stats::replicate_rng;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelSpec {
    pub d_model: usize,
    pub w_v: f64,
    pub w_r: f64,
    pub prior: f64,
    /// Scale of uniform per-prompt activation noise.
    pub sigma: f64,
    pub formal_fraction: f64,
    pub formal_register: (f64, f64),
    pub casual_register: (f64, f64),
    /// Register wobble of paraphrases that keep their register.
    pub register_jitter: f64,
    /// Probability that a paraphrase of each type switches register, in
    /// `TransformType::ALL` order.
    pub switch_prob: [f64; 5],
    /// Content coefficients are uniform on `[-content_scale, content_scale]`.
    pub content_scale: f64,
    pub content_jitter: f64,
    pub planted_threshold: f64,
    pub feature_threshold: f64,
    pub embed_dim: usize,
    /// Embedding perturbation per transform type, `TransformType::ALL` order.
    pub embed_shift: [f64; 5],
    pub seed: u64,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        ToyModelSpec {
            d_model: 32,
            w_v: 1.0,
            w_r: 0.9,
            prior: 0.1,
            sigma: 0.0,
            formal_fraction: 0.5,
            formal_register: (0.9, 1.0),
            casual_register: (0.0, 0.05),
            register_jitter: 0.01,
            switch_prob: [0.0, 0.04, 0.45, 0.25, 0.08],
            content_scale: 1.7,
            content_jitter: 0.05,
            planted_threshold: 0.2,
            feature_threshold: 1e-4,
            embed_dim: 24,
            embed_shift: [0.08, 0.12, 0.26, 0.2, 0.16],
            seed: 0,
        }
    }
}

fn type_index(t: TransformType) -> usize {
    TransformType::ALL.iter().position(|x| *x == t).expect("known type")
}

impl ToyModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_model < 3 {
            return Err(Error::invalid("toy model needs d_model >= 3"));
        }
        if self.sigma < 0.0 || self.w_v <= 0.0 || self.w_r < 0.0 {
            return Err(Error::invalid("toy model needs sigma >= 0, w_v > 0, w_r >= 0"));
        }
        if self.switch_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("switch probabilities must lie in [0, 1]"));
        }
        let ok = |(a, b): (f64, f64)| 0.0 <= a && a <= b && b <= 1.0;
        if !ok(self.formal_register) || !ok(self.casual_register) {
            return Err(Error::invalid("register ranges must lie in [0, 1]"));
        }
        if self.embed_dim < 2 {
            return Err(Error::invalid("embed_dim must be at least 2"));
        }
        Ok(())
    }

    pub fn switch_probability(&self, t: TransformType) -> f64 {
        self.switch_prob[type_index(t)]
    }

    fn mean(range: (f64, f64)) -> f64 {
        (range.0 + range.1) / 2.0
    }

    /// First-order expected question-level flip rate for `k` paraphrases
    /// with uniformly drawn types: a flip needs at least one register switch
    /// and evidence inside the band the switch moves the margin across.
    /// Jitter and noise are ignored.
    pub fn analytic_flip_rate(&self, k: usize) -> f64 {
        let s = self.switch_prob.iter().sum::<f64>() / 5.0;
        let gap = Self::mean(self.formal_register) - Self::mean(self.casual_register);
        let band = (self.w_r * gap / self.w_v).min(2.0);
        (1.0 - (1.0 - s).powi(k as i32)) * band / 2.0
    }

    /// Evidence magnitude beyond which no register value can change the answer.
    pub fn high_evidence_threshold(&self) -> f64 {
        (self.w_r * self.formal_register.1 - self.prior).max(self.prior) / self.w_v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyParaphraseSpec {
    pub paraphrase_id: String,
    pub transform_type: TransformType,
    pub register: f64,
    pub switched: bool,
    pub content: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyQuestionSpec {
    pub question_id: String,
    pub register: f64,
    pub formal: bool,
    pub evidence: f64,
    /// Evidence seen under the noise-image condition.
    pub noise_evidence: f64,
    pub content: Vec<f64>,
    pub paraphrases: Vec<ToyParaphraseSpec>,
    /// Question whose image replaces this one's under the swap condition.
    pub swap_partner: Option<usize>,
}

impl Validate for ToyQuestionSpec {
    fn validate(&self) -> std::result::Result<(), String> {
        if !(-1.0..=1.0).contains(&self.evidence) {
            return Err(format!("{}: evidence {} outside [-1, 1]", self.question_id, self.evidence));
        }
        let regs = std::iter::once(self.register).chain(self.paraphrases.iter().map(|p| p.register));
        if regs.into_iter().any(|r| !(0.0..=1.0).contains(&r)) {
            return Err(format!("{}: register outside [0, 1]", self.question_id));
        }
        if self.paraphrases.iter().any(|p| p.content.len() != self.content.len()) {
            return Err(format!("{}: paraphrase content width differs", self.question_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub questions: Vec<QuestionRecord>,
    pub specs: Vec<ToyQuestionSpec>,
    pub labels: Vec<LabelRecord>,
    pub embeddings: EmbeddingMatrix,
    pub pairs: Vec<PairRef>,
}

/// Model weights derived from a spec: basis, readout and aligned SAE.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub spec: ToyModelSpec,
    basis: Vec<Vec<f64>>,
    pub readout: LinearReadout,
    pub sae: Sae,
    pub planted_feature: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Random orthonormal basis by Gram-Schmidt on uniform vectors.
fn orthonormal_basis(d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, bi)| *x -= c * bi);
        }
        if dot(&v, &v) > 1e-6 {
            basis.push(normalized(v));
        }
    }
    basis
}

impl ToyModel {
    pub fn new(spec: ToyModelSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.d_model;
        let mut rng = replicate_rng(spec.seed, 0);
        let basis = orthonormal_basis(d, &mut rng);
        let (u, v, k) = (&basis[0], &basis[1], &basis[2]);
        let readout = LinearReadout {
            w_yes: v.iter().zip(k).map(|(a, b)| a + b).collect(),
            w_no: u.clone(),
            b_yes: 0.0,
            b_no: 0.0,
        };

        // Features +q_j and -q_j for every basis direction, in a seeded order.
        let n = 2 * d;
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut w_enc = vec![0.0; d * n];
        let mut w_dec = vec![0.0; n * d];
        let mut theta = vec![spec.feature_threshold; n];
        let mut planted_feature = 0;
        for (slot, &source) in order.iter().enumerate() {
            let (dir, sign) = (source / 2, if source % 2 == 0 { 1.0 } else { -1.0 });
            for c in 0..d {
                w_enc[c * n + slot] = sign * basis[dir][c];
                w_dec[slot * d + c] = sign * basis[dir][c];
            }
            if source == 0 {
                planted_feature = slot;
                theta[slot] = spec.planted_threshold;
            }
        }
        let sae = Sae::new(d, n, w_enc, vec![0.0; n], theta, w_dec, vec![0.0; d])?;
        Ok(ToyModel {
            spec,
            basis,
            readout,
            sae,
            planted_feature,
        })
    }

    pub fn u(&self) -> &[f64] {
        &self.basis[0]
    }

    pub fn v(&self) -> &[f64] {
        &self.basis[1]
    }

    /// Noise-free activation for the given evidence, register and content.
    pub fn activation(&self, evidence: f64, register: f64, content: &[f64]) -> Vec<f64> {
        let s = &self.spec;
        let mut x: Vec<f64> = (0..s.d_model)
            .map(|c| {
                s.w_v * evidence * self.basis[1][c]
                    + s.w_r * register * self.basis[0][c]
                    + s.prior * self.basis[2][c]
            })
            .collect();
        for (j, &a) in content.iter().enumerate() {
            x.iter_mut().zip(&self.basis[3 + j]).for_each(|(xi, b)| *xi += a * b);
        }
        x
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.readout.margin(x)
    }

    /// Closed-form margin without noise.
    pub fn expected_margin(&self, evidence: f64, register: f64) -> f64 {
        self.spec.w_v * evidence + self.spec.prior - self.spec.w_r * register
    }
}

const FORMAL: [&str; 6] = [
    "Is there radiographic evidence of {f}?",
    "Is {f} seen on this radiograph?",
    "On this radiograph, is {f} demonstrated?",
    "Can {f} be excluded on this radiograph?",
    "Is there any radiographic evidence of {f} in either hemithorax?",
    "Is there a moderate {f} on this radiograph?",
];

const CASUAL: [&str; 6] = [
    "Does this show {f}?",
    "Any {f} here?",
    "{f}, do you see it?",
    "Is there no {f}?",
    "Anything like {f} anywhere?",
    "Is there obvious {f}?",
];

fn question_text(formal: bool, t: Option<TransformType>, finding: &str, synonym: &str) -> String {
    let slot = t.map_or(0, |t| 1 + type_index(t));
    if formal {
        FORMAL[slot].replace("{f}", finding)
    } else {
        CASUAL[slot].replace("{f}", synonym)
    }
}

/// Deterministic corpus of `n_questions` questions with `k` paraphrases each.
pub fn generate_corpus(model: &ToyModel, n_questions: usize, k: usize, seed: u64) -> Result<ToyCorpus> {
    if n_questions == 0 {
        return Err(Error::invalid("testbed needs at least one question"));
    }
    let s = &model.spec;
    let n_content = s.d_model - 3;
    let dict = FindingDictionary::default();
    let findings: Vec<(&String, &Vec<String>)> = dict.entries().iter().collect();
    let draw_register = |rng: &mut rand_chacha::ChaCha8Rng, formal: bool| {
        let (a, b) = if formal { s.formal_register } else { s.casual_register };
        if b > a {
            rng.random_range(a..b)
        } else {
            a
        }
    };

    let mut specs = Vec::with_capacity(n_questions);
    let mut questions = Vec::with_capacity(n_questions);
    let mut labels = Vec::with_capacity(n_questions);
    let mut emb_ids = Vec::new();
    let mut emb_data: Vec<f32> = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..n_questions {
        let mut rng = replicate_rng(seed, i as u64);
        let qid = format!("tb{i:04}");
        let evidence = rng.random_range(-1.0..1.0);
        let formal = rng.random::<f64>() < s.formal_fraction;
        let register = draw_register(&mut rng, formal);
        let content: Vec<f64> = (0..n_content)
            .map(|_| rng.random_range(-s.content_scale..s.content_scale))
            .collect();
        let (finding, synonyms) = findings[rng.random_range(0..findings.len())];
        let synonym = synonyms.first().unwrap_or(finding);

        let base: Vec<f64> = normalized((0..s.embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        emb_ids.push(text_id(&qid, None));
        emb_data.extend(base.iter().map(|&v| v as f32));

        let mut paras = Vec::with_capacity(k);
        let mut records = Vec::with_capacity(k);
        for j in 0..k {
            let t = TransformType::ALL[rng.random_range(0..5)];
            let switched = rng.random::<f64>() < s.switch_probability(t);
            let reg = if switched {
                draw_register(&mut rng, !formal)
            } else {
                (register + rng.random_range(-s.register_jitter..=s.register_jitter)).clamp(0.0, 1.0)
            };
            let pcontent: Vec<f64> = content
                .iter()
                .map(|c| c + rng.random_range(-s.content_jitter..=s.content_jitter))
                .collect();
            let shift = s.embed_shift[type_index(t)] * rng.random_range(0.8..1.2);
            let noise: Vec<f64> = (0..s.embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nn = dot(&noise, &noise).sqrt();
            let pe: Vec<f64> = base.iter().zip(&noise).map(|(b, z)| b + shift * z / nn).collect();
            let cosine = dot(&pe, &base) / dot(&pe, &pe).sqrt();

            let pid = format!("p{j}");
            emb_ids.push(text_id(&qid, Some(&pid)));
            emb_data.extend(pe.iter().map(|&v| v as f32));
            pairs.push(PairRef {
                question_id: qid.clone(),
                paraphrase_id: pid.clone(),
                transform_type: t,
                original_text_id: text_id(&qid, None),
                paraphrase_text_id: text_id(&qid, Some(&pid)),
            });
            records.push(ParaphraseRecord {
                paraphrase_id: pid.clone(),
                text: question_text(reg >= 0.5, Some(t), finding, synonym),
                transform_type: t,
                similarity_to_original: Some(cosine),
            });
            paras.push(ToyParaphraseSpec {
                paraphrase_id: pid,
                transform_type: t,
                register: reg,
                switched,
                content: pcontent,
            });
        }
        questions.push(QuestionRecord {
            question_id: qid.clone(),
            dataset_id: DatasetId::Synthetic,
            image_id: format!("img{i:04}"),
            text: question_text(formal, None, finding, synonym),
            finding: Some(finding.clone()),
            question_type: QuestionType::Presence,
            paraphrases: records,
        });
        labels.push(LabelRecord {
            question_id: qid.clone(),
            label: if evidence > 0.0 { Label::Yes } else { Label::No },
        });
        specs.push(ToyQuestionSpec {
            question_id: qid,
            register,
            formal,
            evidence,
            noise_evidence: rng.random_range(-0.1..0.1),
            content,
            paraphrases: paras,
            swap_partner: None,
        });
    }

    // Cyclic derangement over a seeded shuffle: nobody keeps their own image.
    if n_questions > 1 {
        let mut rng = replicate_rng(seed, u64::MAX);
        let mut order: Vec<usize> = (0..n_questions).collect();
        for i in (1..n_questions).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for w in 0..n_questions {
            specs[order[w]].swap_partner = Some(order[(w + 1) % n_questions]);
        }
    }

    let embeddings = EmbeddingMatrix::new(s.embed_dim, emb_data, emb_ids)?;
    Ok(ToyCorpus {
        questions,
        specs,
        labels,
        embeddings,
        pairs,
    })
}

/// Features zeroed out by the clamp hook before the readout.
#[derive(Debug, Clone, Copy)]
pub struct ClampHook<'a> {
    pub sae: &'a Sae,
    pub features: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRun {
    pub responses: Vec<ResponseRecord>,
    /// Activations as the readout sees them (after any clamp).
    pub activations: ActivationMatrix,
}

pub const TOY_MODEL_ID: &str = "toy";
pub const TOY_LAYER: u32 = 0;

/// Runs every prompt of the corpus under `condition` (`real`, `blank`,
/// `noise` or `swap`).
pub fn run_toy_model(
    model: &ToyModel,
    corpus: &ToyCorpus,
    condition: &str,
    clamp: Option<ClampHook<'_>>,
    exec: Exec,
) -> Result<ToyRun> {
    if !["real", "blank", "noise", "swap"].contains(&condition) {
        return Err(Error::invalid(format!("unknown condition {condition}")));
    }
    let s = &model.spec;
    let per_question: Vec<Result<Vec<(ResponseRecord, RowRef, Vec<f64>)>>> =
        exec.map_range(corpus.specs.len(), |i| {
            let q = &corpus.specs[i];
            let (evidence, cond) = match condition {
                "real" => (q.evidence, Condition::Real),
                "blank" => (0.0, Condition::Blank),
                "noise" => (q.noise_evidence, Condition::Noise),
                _ => {
                    let p = q.swap_partner.ok_or_else(|| {
                        Error::invalid("swap condition needs at least two questions")
                    })?;
                    (
                        corpus.specs[p].evidence,
                        Condition::Swap {
                            swap_image_id: corpus.questions[p].image_id.clone(),
                        },
                    )
                }
            };
            // Stream 0 of a question is reserved; prompt j uses stream j + 1.
            let mut out = Vec::with_capacity(q.paraphrases.len() + 1);
            let prompts = std::iter::once((None, q.register, &q.content)).chain(
                q.paraphrases
                    .iter()
                    .map(|p| (Some(p.paraphrase_id.clone()), p.register, &p.content)),
            );
            for (j, (pid, register, content)) in prompts.enumerate() {
                let mut x = model.activation(evidence, register, content);
                if s.sigma > 0.0 {
                    let stream = ((i as u64) << 16) | (j as u64 + 1);
                    let mut rng = replicate_rng(s.seed ^ 0x6e6f697365, stream);
                    x.iter_mut().for_each(|v| *v += s.sigma * rng.random_range(-1.0..1.0));
                }
                if let Some(h) = clamp {
                    x = clamp_features(h.sae, &x, h.features)?;
                }
                let yes = dot(&model.readout.w_yes, &x);
                let no = dot(&model.readout.w_no, &x);
                let response = ResponseRecord {
                    model_id: TOY_MODEL_ID.into(),
                    question_id: q.question_id.clone(),
                    paraphrase_id: pid.clone(),
                    condition: cond.clone(),
                    raw_text: if yes - no > 0.0 { "Yes." } else { "No." }.into(),
                    yes_logit: Some(yes),
                    no_logit: Some(no),
                };
                let row = RowRef {
                    model_id: TOY_MODEL_ID.into(),
                    question_id: q.question_id.clone(),
                    paraphrase_id: pid,
                    condition: cond.clone(),
                    layer: TOY_LAYER,
                    position: -1,
                };
                out.push((response, row, x));
            }
            Ok(out)
        });
    let mut responses = Vec::new();
    let mut manifest = Vec::new();
    let mut data = Vec::new();
    for q in per_question {
        for (r, m, x) in q? {
            responses.push(r);
            manifest.push(m);
            data.extend(x.iter().map(|&v| v as f32));
        }
    }
    Ok(ToyRun {
        responses,
        activations: ActivationMatrix::new(s.d_model, data, manifest)?,
    })
}
