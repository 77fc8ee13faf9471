use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use flipkit::interchange::{read_json, read_jsonl, ActivationMatrix, EmbeddingMatrix, LabelRecord, PairRef, QuestionRecord};
use flipkit::testbed::{
    generate_corpus, run_toy_model, ClampHook, ToyCorpus, ToyModel, ToyModelSpec, ToyQuestionSpec, TOY_LAYER,
};
use flipkit::Exec;
use serde::{Deserialize, Serialize};

use super::{OutArgs, SeedArgs};
use crate::ctx::{require_seed, Run};
use crate::error::{CliError, CliResult};

#[derive(Debug, Subcommand)]
pub enum TestbedCommand {
    /// Build a toy model and a synthetic corpus with known flip structure.
    Generate(GenerateArgs),
    /// Answer every prompt of a generated corpus, optionally with features clamped.
    Run(RunArgs),
}

pub fn run(c: TestbedCommand) -> CliResult<()> {
    match c {
        TestbedCommand::Generate(a) => generate(a),
        TestbedCommand::Run(a) => run_model(a),
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of questions.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Paraphrases per question.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Model spec JSON; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Per-prompt activation noise scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Weight of the register direction in the readout.
    #[arg(long)]
    w_r: Option<f64>,
    #[command(flatten)]
    seed: SeedArgs,
    #[command(flatten)]
    out: OutArgs,
}

/// Everything needed to rebuild the model from disk.
#[derive(Debug, Serialize, Deserialize)]
struct ToyModelFile {
    spec: ToyModelSpec,
    planted_feature: usize,
    analytic_flip_rate: f64,
    high_evidence_threshold: f64,
    layer: u32,
    n_questions: usize,
    paraphrases_per_question: usize,
}

const MODEL_FILE: &str = "toy_model.json";

fn generate(a: GenerateArgs) -> CliResult<()> {
    let seed = require_seed(a.seed.seed)?;
    if a.n < 2 || a.k == 0 {
        return Err(CliError::Usage("--n must be at least 2 and --k positive".into()));
    }
    let mut run = Run::new("testbed-generate", &a.out.out_dir)?;
    run.seed(seed);
    let mut spec: ToyModelSpec = match &a.spec {
        Some(p) => read_json(run.input(p)?)?,
        None => ToyModelSpec::default(),
    };
    spec.seed = seed;
    if let Some(s) = a.sigma {
        spec.sigma = s;
    }
    if let Some(w) = a.w_r {
        spec.w_r = w;
    }
    run.config("n", a.n);
    run.config("k", a.k);
    let model = ToyModel::new(spec)?;
    let tc = generate_corpus(&model, a.n, a.k, seed)?;

    run.write_jsonl("corpus.jsonl", &tc.questions)?;
    run.write_jsonl("labels.jsonl", &tc.labels)?;
    run.write_jsonl("toy_questions.jsonl", &tc.specs)?;
    run.write_jsonl("pairs.jsonl", &tc.pairs)?;
    let emb = run.path("embeddings.psft");
    tc.embeddings.save(&emb)?;
    run.output(emb);
    let sae = run.path("sae.psft");
    model.sae.to_params().save(&sae)?;
    run.output(sae);
    let readout = run.path("readout.psft");
    model.readout.save(&readout)?;
    run.output(readout);
    let file = ToyModelFile {
        analytic_flip_rate: model.spec.analytic_flip_rate(a.k),
        high_evidence_threshold: model.spec.high_evidence_threshold(),
        spec: model.spec,
        planted_feature: model.planted_feature,
        layer: TOY_LAYER,
        n_questions: a.n,
        paraphrases_per_question: a.k,
    };
    run.write_json(MODEL_FILE, &file)?;
    run.finish()
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Directory written by `testbed generate`.
    #[arg(long)]
    testbed: PathBuf,
    /// Image conditions to run: real, blank, noise, swap.
    #[arg(long, value_delimiter = ',', default_value = "real,blank,swap")]
    conditions: Vec<String>,
    /// Features to zero out before the readout.
    #[arg(long, value_delimiter = ',')]
    clamp: Vec<usize>,
    #[command(flatten)]
    out: OutArgs,
}

fn load_testbed(run: &mut Run, dir: &Path) -> CliResult<(ToyModel, ToyCorpus)> {
    let file: ToyModelFile = read_json(run.input(&dir.join(MODEL_FILE))?)?;
    let model = ToyModel::new(file.spec)?;
    if model.planted_feature != file.planted_feature {
        return Err(flipkit::Error::invalid("toy model does not rebuild to the recorded planted feature").into());
    }
    let questions: Vec<QuestionRecord> = read_jsonl(run.input(&dir.join("corpus.jsonl"))?)?;
    let specs: Vec<ToyQuestionSpec> = read_jsonl(run.input(&dir.join("toy_questions.jsonl"))?)?;
    let labels: Vec<LabelRecord> = read_jsonl(run.input(&dir.join("labels.jsonl"))?)?;
    let pairs: Vec<PairRef> = read_jsonl(run.input(&dir.join("pairs.jsonl"))?)?;
    let embeddings = EmbeddingMatrix::load(run.input(&dir.join("embeddings.psft"))?)?;
    if questions.len() != specs.len() {
        return Err(flipkit::Error::invalid(format!(
            "{} corpus questions but {} toy question specs",
            questions.len(),
            specs.len()
        ))
        .into());
    }
    Ok((
        model,
        ToyCorpus {
            questions,
            specs,
            labels,
            embeddings,
            pairs,
        },
    ))
}

fn run_model(a: RunArgs) -> CliResult<()> {
    let mut run = Run::new("testbed-run", &a.out.out_dir)?;
    let (model, tc) = load_testbed(&mut run, &a.testbed)?;
    let mut conditions = a.conditions.clone();
    conditions.dedup();
    if conditions.is_empty() {
        return Err(CliError::Usage("pass at least one condition".into()));
    }
    run.config("conditions", &conditions);
    run.config("clamp", &a.clamp);
    let clamp = (!a.clamp.is_empty()).then_some(ClampHook {
        sae: &model.sae,
        features: &a.clamp,
    });
    let mut responses = Vec::new();
    let (mut data, mut manifest) = (Vec::new(), Vec::new());
    for cond in &conditions {
        let r = run_toy_model(&model, &tc, cond, clamp, Exec::default())?;
        responses.extend(r.responses);
        data.extend_from_slice(r.activations.data());
        manifest.extend_from_slice(r.activations.manifest());
    }
    let acts = ActivationMatrix::new(model.spec.d_model, data, manifest)?;
    run.write_jsonl("responses.jsonl", &responses)?;
    let path = run.path("activations.psft");
    acts.save(&path)?;
    run.output(path);
    run.finish()
}
