#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_flipkit")
}

/// Runs the CLI with `PSF_SEED` cleared unless given in `env`.
pub fn flipkit_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args).env_remove("PSF_SEED").env_remove("RUST_LOG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn flipkit")
}

pub fn flipkit(args: &[&str]) -> Output {
    flipkit_env(args, &[])
}

/// Runs the CLI and returns stderr on a nonzero exit.
pub fn run(args: &[&str]) -> Result<(), String> {
    let out = flipkit(args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "flipkit {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

pub fn s(p: &Path) -> String {
    p.display().to_string()
}

pub fn write_jsonl(path: &Path, rows: &[Value]) {
    let mut f = std::fs::File::create(path).unwrap();
    for r in rows {
        writeln!(f, "{r}").unwrap();
    }
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

pub fn question(id: &str, image: &str, paraphrases: &[(&str, f64)]) -> Value {
    let paras: Vec<Value> = paraphrases
        .iter()
        .map(|(pid, sim)| {
            json!({
                "paraphrase_id": pid,
                "text": format!("Rephrased {id} {pid}?"),
                "transform_type": "lexical",
                "similarity_to_original": sim,
            })
        })
        .collect();
    json!({
        "question_id": id,
        "dataset_id": "mimic",
        "image_id": image,
        "text": format!("Is there cardiomegaly in {id}?"),
        "finding": "cardiomegaly",
        "question_type": "presence",
        "paraphrases": paras,
    })
}

pub fn response(model: &str, q: &str, p: Option<&str>, condition: Value, text: &str) -> Value {
    let mut v = json!({
        "model_id": model,
        "question_id": q,
        "condition": condition,
        "raw_text": text,
    });
    if let Some(p) = p {
        v["paraphrase_id"] = json!(p);
    }
    v
}

pub fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes."
    } else {
        "No."
    }
}

/// Output directories of one full toy pipeline run.
pub struct Pipeline {
    pub root: PathBuf,
}

impl Pipeline {
    pub fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Metric documents whose bytes must not depend on the run.
    pub fn metric_files(&self) -> Vec<PathBuf> {
        [
            "met/metrics.json",
            "sae/sae_auc.json",
            "sae/sae_stats.json",
            "fb/curation.json",
            "fb/flipbank.jsonl",
            "emb/embedding.json",
            "patch/patch.json",
            "ce/clamp_eval.json",
            "rep/report.md",
        ]
        .iter()
        .map(|f| self.root.join(f))
        .collect()
    }
}

/// Generate, run, parse, measure, analyze, patch, clamp and report.
pub fn run_pipeline(root: &Path, seed: u64, n: usize) -> Result<Pipeline, String> {
    let p = |d: &str| s(&root.join(d));
    let seed = seed.to_string();
    let n = n.to_string();
    run(&["testbed", "generate", "--seed", &seed, "--n", &n, "--out-dir", &p("gen")])?;
    let model = read_json(&root.join("gen/toy_model.json"));
    let planted = model["planted_feature"].to_string();
    let (corpus, labels, sae, acts) = (p("gen/corpus.jsonl"), p("gen/labels.jsonl"), p("gen/sae.psft"), p("base/activations.psft"));
    run(&["testbed", "run", "--testbed", &p("gen"), "--out-dir", &p("base")])?;
    run(&["parse", "--responses", &p("base/responses.jsonl"), "--corpus", &corpus, "--out-dir", &p("base")])?;
    let parsed = p("base/parsed.jsonl");
    run(&[
        "metrics", "--parsed", &parsed, "--labels", &labels, "--corpus", &corpus, "--seed", &seed, "--bootstrap", "200",
        "--pairwise", "--symmetric", "--by-transform", "--out-dir", &p("met"),
    ])?;
    run(&["sae", "stats", "--sae", &sae, "--activations", &acts, "--out-dir", &p("sae")])?;
    run(&[
        "sae", "auc", "--sae", &sae, "--activations", &acts, "--parsed", &parsed, "--corpus", &corpus, "--target", &planted,
        "--out-dir", &p("sae"),
    ])?;
    let control = read_json(&root.join("sae/sae_auc.json"))["control"].to_string();
    run(&["flipbank", "curate", "--parsed", &parsed, "--corpus", &corpus, "--out-dir", &p("fb")])?;
    run(&["emb-analyze", "--embeddings", &p("gen/embeddings.psft"), "--corpus", &corpus, "--parsed", &parsed, "--out-dir", &p("emb")])?;
    run(&[
        "flipbank", "patch", "--flipbank", &p("fb/flipbank.jsonl"), "--activations", &acts, "--sae", &sae, "--readout",
        &p("gen/readout.psft"), "--feature", &planted, "--feature", &control, "--seed", &seed, "--bootstrap", "200",
        "--out-dir", &p("patch"),
    ])?;
    run(&["testbed", "run", "--testbed", &p("gen"), "--clamp", &planted, "--out-dir", &p("clamp")])?;
    run(&["parse", "--responses", &p("clamp/responses.jsonl"), "--out-dir", &p("clamp")])?;
    run(&[
        "flipbank", "clamp-eval", "--before", &parsed, "--after", &p("clamp/parsed.jsonl"), "--corpus", &corpus, "--labels",
        &labels, "--seed", &seed, "--bootstrap", "200", "--perms", "2000", "--method", "clamp", "--out-dir", &p("ce"),
    ])?;
    run(&[
        "report", "--metrics", &p("met/metrics.json"), "--patch", &p("patch/patch.json"), "--clamp-eval",
        &p("ce/clamp_eval.json"), "--out-dir", &p("rep"),
    ])?;
    Ok(Pipeline { root: root.to_path_buf() })
}
