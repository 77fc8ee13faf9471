//! Acceptance suite. One PASS/FAIL line per criterion; exits nonzero when
//! any criterion fails.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use flipkit::answer::{parse_records, ExclusionReason, Lexicon, ParsedAnswer};
use flipkit::grounding::{coverage, precision, threshold_mask, upsample_bilinear, Map2};
use flipkit::interchange::{AttentionGrid, BoundingBox, Corpus, Label, QuestionRecord};
use flipkit::interventions::{
    clamp, clamp_evaluation, curate_flipbank, delta_patch, margin_recovery, patch_sweep, resolve_case_rows,
    select_control_feature, ControlBand, CurationConfig,
};
use flipkit::metrics::{build_outcomes, detect_flip, flip_rate};
use flipkit::normalizer::{normalize_corpus, FindingDictionary};
use flipkit::sae::{
    encode_batch, encode_pairs, feature_activation_stats, feature_flip_aucs, labeled_pair_rows, rows_f64, AucScore, Sae,
};
use flipkit::stats::{bootstrap_ci, mann_whitney_u, paired_permutation_test, replicate_rng, BootstrapConfig, PermutationConfig};
use flipkit::testbed::{generate_corpus, run_toy_model, ClampHook, ToyCorpus, ToyModel, ToyModelSpec, TOY_LAYER};
use flipkit::Exec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- fixtures

fn est(v: &Value) -> f64 {
    v["estimate"].as_f64().unwrap_or(f64::NAN)
}

fn exact(name: &str, got: f64, num: usize, den: usize, shown: &str) -> Result<(), String> {
    let want = num as f64 / den as f64;
    ensure(got == want && format!("{got:.3}") == shown, || {
        format!("{name}: got {got}, want {num}/{den} = {shown}")
    })
}

fn parse_and_measure(dir: &Path, questions: &[Value], responses: &[Value]) -> Result<Value, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let (corpus, resp) = (dir.join("corpus.jsonl"), dir.join("responses.jsonl"));
    write_jsonl(&corpus, questions);
    write_jsonl(&resp, responses);
    let out = s(dir);
    run(&["parse", "--responses", &s(&resp), "--corpus", &s(&corpus), "--out-dir", &out])?;
    run(&[
        "metrics", "--parsed", &s(&dir.join("parsed.jsonl")), "--corpus", &s(&corpus), "--pairwise", "--seed", "1",
        "--bootstrap", "100", "--out-dir", &out,
    ])?;
    Ok(read_json(&dir.join("metrics.json")))
}

fn fixture_arithmetic() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let real = json!("real");

    // 1000 questions x 4 paraphrases: 120 questions with one dissenting
    // paraphrase and 36 with two give 156 flips and 192 of 4000 pairs.
    let (mut qs, mut rs) = (Vec::new(), Vec::new());
    let pids = ["p0", "p1", "p2", "p3"];
    for i in 0..1000 {
        let id = format!("a{i:04}");
        qs.push(question(&id, &format!("img{i}"), &pids.map(|p| (p, 0.99))));
        rs.push(response("fx", &id, None, real.clone(), "Yes."));
        let dissent = if i < 120 { 1 } else if i < 156 { 2 } else { 0 };
        for (j, p) in pids.iter().enumerate() {
            rs.push(response("fx", &id, Some(p), real.clone(), yes_no(j >= dissent)));
        }
    }
    let m = parse_and_measure(&tmp.path().join("flip"), &qs, &rs)?;
    let c = &m["models"]["fx"]["conditions"]["real"];
    exact("flip rate", est(&c["flip_rate"]), 156, 1000, "0.156")?;
    exact("pairwise disagreement", est(&c["pairwise_disagreement"]), 192, 4000, "0.048")?;

    // 2499 questions under real, blank and swapped images.
    let n = 2499;
    let (mut qs, mut rs) = (Vec::new(), Vec::new());
    for i in 0..n {
        let id = format!("b{i:04}");
        qs.push(question(&id, &format!("img{i}"), &[("p0", 0.99)]));
        rs.push(response("fx", &id, None, real.clone(), "Yes."));
        rs.push(response("fx", &id, Some("p0"), real.clone(), "Yes."));
        rs.push(response("fx", &id, None, json!("blank"), yes_no(i < 1660)));
        let swap = json!({"swap": {"swap_image_id": format!("img{}", (i + 1) % n)}});
        rs.push(response("fx", &id, None, swap, yes_no(i >= 770)));
    }
    let m = parse_and_measure(&tmp.path().join("cond"), &qs, &rs)?;
    let fx = &m["models"]["fx"];
    exact("text-only agreement", est(&fx["text_only_agreement"]), 1660, n, "0.664")?;
    exact("swap sensitivity", est(&fx["swap_sensitivity"]), 770, n, "0.308")?;

    // Curation: 158 yes->no and 94 no->yes kept; boundary similarity,
    // excluded answers, unchanged answers and blank-image flips dropped.
    let dir = tmp.path().join("bank");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let (mut qs, mut rs) = (Vec::new(), Vec::new());
    let groups: [(usize, f64, &str, &str); 5] = [
        (158, 0.97, "Yes.", "No."),
        (94, 0.99, "No.", "Yes."),
        (30, 0.95, "Yes.", "No."),
        (20, 0.99, "Yes.", "Maybe."),
        (100, 0.99, "No.", "No."),
    ];
    let mut k = 0;
    for (count, sim, orig, para) in groups {
        for _ in 0..count {
            let id = format!("c{k:04}");
            qs.push(question(&id, &format!("img{k}"), &[("p0", sim)]));
            rs.push(response("fx", &id, None, real.clone(), orig));
            rs.push(response("fx", &id, Some("p0"), real.clone(), para));
            rs.push(response("fx", &id, None, json!("blank"), "Yes."));
            rs.push(response("fx", &id, Some("p0"), json!("blank"), "No."));
            k += 1;
        }
    }
    let (corpus, resp) = (dir.join("corpus.jsonl"), dir.join("responses.jsonl"));
    write_jsonl(&corpus, &qs);
    write_jsonl(&resp, &rs);
    let out = s(&dir);
    run(&["parse", "--responses", &s(&resp), "--out-dir", &out])?;
    run(&["flipbank", "curate", "--parsed", &s(&dir.join("parsed.jsonl")), "--corpus", &s(&corpus), "--out-dir", &out])?;
    let cur = read_json(&dir.join("curation.json"));
    let lines = std::fs::read_to_string(dir.join("flipbank.jsonl")).map_err(|e| e.to_string())?.lines().count();
    let split = (cur["yes_to_no"].as_u64(), cur["no_to_yes"].as_u64(), lines);
    ensure(split == (Some(158), Some(94), 252), || format!("flipbank split {split:?}"))?;
    let skipped = &cur["skipped"];
    ensure(
        skipped["low_similarity"] == json!(30) && skipped["excluded_answer"] == json!(20) && skipped["no_change"] == json!(100),
        || format!("skips {skipped}"),
    )?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok("flip 0.156, pairwise 0.048, text-only 0.664, swap 0.308, flipbank 158/94".into())
}

// ---------------------------------------------------------------- flips

fn flip_truth_table() -> Outcome {
    let start = Instant::now();
    let values = [ParsedAnswer::Yes, ParsedAnswer::No, ParsedAnswer::excluded(ExclusionReason::Hedge)];
    let oracle = |orig: ParsedAnswer, paras: &[ParsedAnswer]| -> Option<bool> {
        let yes = paras.iter().filter(|a| **a == ParsedAnswer::Yes).count();
        let no = paras.iter().filter(|a| **a == ParsedAnswer::No).count();
        match orig {
            _ if yes + no == 0 => None,
            ParsedAnswer::Yes => Some(no > 0),
            ParsedAnswer::No => Some(yes > 0),
            ParsedAnswer::Excluded { .. } => None,
        }
    };
    let mut checked = 0;
    for k in 0..=4u32 {
        for code in 0..3usize.pow(k + 1) {
            let answers: Vec<ParsedAnswer> = (0..=k).map(|j| values[code / 3usize.pow(j) % 3]).collect();
            let (orig, paras) = (answers[0], &answers[1..]);
            let got = detect_flip(orig, paras);
            ensure(got == oracle(orig, paras), || format!("{orig:?} {paras:?}: {got:?}"))?;
            checked += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{checked} combinations, including all 243 with four paraphrases"))
}

// ---------------------------------------------------------------- SAE

struct DenseSae {
    sae: Sae,
    w_enc: DMatrix<f64>,
    b_enc: DVector<f64>,
    theta: DVector<f64>,
    w_dec: DMatrix<f64>,
    b_dec: DVector<f64>,
}

fn random_sae(seed: u64, d: usize, n: usize) -> DenseSae {
    let mut rng = replicate_rng(seed, 0);
    let mut vals = |k: usize, lo: f64, hi: f64| -> Vec<f64> { (0..k).map(|_| rng.random_range(lo..hi)).collect() };
    let (w_enc, b_enc, theta, w_dec, b_dec) =
        (vals(d * n, -1.0, 1.0), vals(n, -0.5, 0.5), vals(n, 0.0, 0.5), vals(n * d, -1.0, 1.0), vals(d, -0.5, 0.5));
    DenseSae {
        w_enc: DMatrix::from_row_slice(d, n, &w_enc),
        b_enc: DVector::from_vec(b_enc.clone()),
        theta: DVector::from_vec(theta.clone()),
        w_dec: DMatrix::from_row_slice(n, d, &w_dec),
        b_dec: DVector::from_vec(b_dec.clone()),
        sae: Sae::new(d, n, w_enc, b_enc, theta, w_dec, b_dec).unwrap(),
    }
}

impl DenseSae {
    fn encode(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = self.w_enc.transpose() * x + &self.b_enc;
        DVector::from_iterator(z.len(), z.iter().zip(self.theta.iter()).map(|(&z, &t)| if z > t { z } else { 0.0 }))
    }

    fn decode(&self, f: &DVector<f64>) -> DVector<f64> {
        self.w_dec.transpose() * f + &self.b_dec
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.w_dec.row(i).transpose()
    }
}

fn close(name: &str, got: &[f64], want: &DVector<f64>, tol: f64) -> Result<(), String> {
    ensure(got.len() == want.len(), || format!("{name}: length {} vs {}", got.len(), want.len()))?;
    for (k, (g, w)) in got.iter().zip(want.iter()).enumerate() {
        ensure((g - w).abs() <= tol * w.abs().max(1.0), || format!("{name}[{k}]: {g} vs {w}"))?;
    }
    Ok(())
}

fn sae_dense_agreement() -> Outcome {
    let start = Instant::now();
    let (d, n) = (16, 64);
    let mut active = 0;
    for t in 0..200u64 {
        let m = random_sae(1000 + t, d, n);
        let mut rng = replicate_rng(5000 + t, 0);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xv = DVector::from_vec(x.clone());
        let f = m.sae.encode(&x).map_err(|e| e.to_string())?;
        let fo = m.encode(&xv);
        close("encode", &f.to_dense(), &fo, 1e-6)?;
        active += f.l0();
        close("decode", &m.sae.decode(&f).map_err(|e| e.to_string())?, &m.decode(&fo), 1e-6)?;
        let i = rng.random_range(0..n);
        let delta = rng.random_range(-2.0..2.0);
        let want = &xv - m.row(i) * delta;
        close("delta_patch", &delta_patch(&m.sae, &x, i, delta).map_err(|e| e.to_string())?, &want, 1e-6)?;
        let want = &xv - m.row(i) * fo[i];
        close("clamp", &clamp(&m.sae, &x, i).map_err(|e| e.to_string())?, &want, 1e-6)?;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("200 instances d=16 n=64, mean L0 {:.1}, tolerance 1e-6 relative", active as f64 / 200.0))
}

fn patching_algebra() -> Outcome {
    let (d, n) = (16, 64);
    for t in 0..200u64 {
        let m = random_sae(9000 + t, d, n);
        let mut rng = replicate_rng(7000 + t, 0);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let i = rng.random_range(0..n);
        let delta = rng.random_range(-3.0..3.0);
        let patched = delta_patch(&m.sae, &x, i, delta).map_err(|e| e.to_string())?;
        let back: Vec<f64> = patched.iter().zip(m.sae.decoder_row(i)).map(|(p, w)| p + delta * w).collect();
        close("restored", &back, &DVector::from_vec(x.clone()), 1e-6)?;

        let fo = m.encode(&DVector::from_vec(x.clone()));
        if let Some(off) = (0..n).find(|&j| fo[j] == 0.0) {
            let c = clamp(&m.sae, &x, off).map_err(|e| e.to_string())?;
            ensure(c == x, || format!("clamp of inactive feature {off} moved x"))?;
        }

        let (mo, mp) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        if mo != mp {
            ensure(margin_recovery(mo, mp, mo) == Some(1.0), || format!("recovery({mo}, {mp}, orig) != 1"))?;
            ensure(margin_recovery(mo, mp, mp) == Some(0.0), || format!("recovery({mo}, {mp}, para) != 0"))?;
        }
    }
    ensure(margin_recovery(0.4, 0.4, 1.0).is_none(), || "recovery with orig == para is defined".into())?;
    Ok("200 instances: patch inverts to 1e-6, inactive clamp is identity, recovery anchors exact".into())
}

// ---------------------------------------------------------------- statistics

fn perm_oracle(d: &[i64]) -> f64 {
    let n = d.len();
    let observed: i64 = d.iter().sum();
    let hits = (0..1u64 << n)
        .filter(|mask| {
            let t: i64 = d.iter().enumerate().map(|(i, &v)| if mask >> i & 1 == 1 { -v } else { v }).sum();
            t.abs() >= observed.abs()
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

/// Twice U by pairwise comparison, and the exact two-sided p over every
/// split of the pooled sample.
fn mw_oracle(a: &[i64], b: &[i64]) -> (i64, f64) {
    let u2 = |a: &[i64], b: &[i64]| -> i64 {
        a.iter().flat_map(|x| b.iter().map(move |y| if x > y { 2 } else if x == y { 1 } else { 0 })).sum()
    };
    let pooled: Vec<i64> = a.iter().chain(b).copied().collect();
    let (na, n) = (a.len(), pooled.len());
    let mu2 = (na * b.len()) as i64;
    let observed = u2(a, b);
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0..1u32 << n {
        if mask.count_ones() as usize != na {
            continue;
        }
        let (ga, gb): (Vec<i64>, Vec<i64>) = {
            let (mut ga, mut gb) = (Vec::new(), Vec::new());
            for (i, &v) in pooled.iter().enumerate() {
                if mask >> i & 1 == 1 { ga.push(v) } else { gb.push(v) }
            }
            (ga, gb)
        };
        total += 1;
        if (u2(&ga, &gb) - mu2).abs() >= (observed - mu2).abs() {
            hits += 1;
        }
    }
    (observed, hits as f64 / total as f64)
}

fn stats_calibration() -> Outcome {
    let start = Instant::now();
    let trials = 500;
    let mut covered = 0;
    for t in 0..trials {
        let mut rng = replicate_rng(2024, t);
        let xs: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() < 0.3) as u8 as f64).collect();
        let cfg = BootstrapConfig { n_resamples: 1000, level: 0.95, seed: t, ..Default::default() };
        let r = bootstrap_ci(&xs, &cfg).map_err(|e| e.to_string())?;
        if r.ci_low.unwrap() <= 0.3 && 0.3 <= r.ci_high.unwrap() {
            covered += 1;
        }
    }
    let coverage = covered as f64 / trials as f64;
    ensure((0.92..=0.98).contains(&coverage), || format!("bootstrap coverage {coverage}"))?;

    let mut rejected = 0;
    for t in 0..trials {
        let mut rng = replicate_rng(4048, t);
        let a: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let cfg = PermutationConfig { n_permutations: 999, seed: t, ..Default::default() };
        if paired_permutation_test(&a, &b, &cfg).map_err(|e| e.to_string())?.p_value.unwrap() < 0.05 {
            rejected += 1;
        }
    }
    let rate = rejected as f64 / trials as f64;
    ensure((0.03..=0.07).contains(&rate), || format!("null rejection rate {rate}"))?;

    let mut rng = replicate_rng(77, 0);
    let mut enumerated = 0;
    for n in 1..=8usize {
        for _ in 0..20 {
            let a: Vec<i64> = (0..n).map(|_| rng.random_range(-4..5)).collect();
            let b: Vec<i64> = (0..n).map(|_| rng.random_range(-4..5)).collect();
            let d: Vec<i64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let af: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            let bf: Vec<f64> = b.iter().map(|&v| v as f64).collect();
            let p = paired_permutation_test(&af, &bf, &PermutationConfig::default()).map_err(|e| e.to_string())?.p_value;
            ensure(p == Some(perm_oracle(&d)), || format!("permutation {a:?} {b:?}: {p:?} vs {}", perm_oracle(&d)))?;

            for na in 1..n {
                let (ga, gb) = (&af[..na], &af[na..n]);
                let r = mann_whitney_u(ga, gb).map_err(|e| e.to_string())?;
                let (u2, p) = mw_oracle(&a[..na], &a[na..n]);
                ensure(r.estimate * 2.0 == u2 as f64 && r.p_value == Some(p), || {
                    format!("Mann-Whitney {ga:?} {gb:?}: U {} p {:?} vs U {} p {p}", r.estimate, r.p_value, u2 as f64 / 2.0)
                })?;
                enumerated += 1;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "coverage {coverage:.3}, null p<0.05 rate {rate:.3}, {enumerated} exact Mann-Whitney and 160 permutation cases"
    ))
}

// ---------------------------------------------------------------- testbed

fn run_conditions(model: &ToyModel, tc: &ToyCorpus, clamp: Option<ClampHook<'_>>) -> Result<(Vec<flipkit::interchange::ParsedRecord>, flipkit::interchange::ActivationMatrix), String> {
    let mut responses = Vec::new();
    let mut real = None;
    for cond in ["real", "blank", "swap"] {
        let run = run_toy_model(model, tc, cond, clamp, Exec::default()).map_err(|e| e.to_string())?;
        responses.extend(run.responses);
        if cond == "real" {
            real = Some(run.activations);
        }
    }
    Ok((parse_records(responses, &Lexicon::default(), |_| None), real.unwrap()))
}

fn testbed_end_to_end() -> Outcome {
    let start = Instant::now();
    let e = |x: flipkit::Error| x.to_string();
    let model = ToyModel::new(ToyModelSpec::default()).map_err(e)?;
    let tc = generate_corpus(&model, 500, 4, 7).map_err(e)?;
    let corpus = Corpus::new(tc.questions.clone())?;
    let cfg = BootstrapConfig::with_seed(7);
    let (parsed, acts) = run_conditions(&model, &tc, None)?;
    let table = build_outcomes(&parsed, Some(&corpus)).map_err(e)?;
    let real = &table[&("toy".to_string(), "real".to_string())];
    let flip = flip_rate(real, &cfg).map_err(e)?.estimate;
    let analytic = model.spec.analytic_flip_rate(4);
    ensure(flip > 0.0 && (0.10..=0.25).contains(&flip) && (flip - analytic).abs() < 0.05, || {
        format!("(a) flip rate {flip} vs closed form {analytic}")
    })?;

    let (labels, rows, _) = labeled_pair_rows(&table, &acts, TOY_LAYER);
    let flips: Vec<bool> = labels.iter().map(|l| l.flipped).collect();
    let encoded = encode_pairs(&model.sae, &rows, Exec::default()).map_err(e)?;
    let n = model.sae.n_features();
    let aucs = feature_flip_aucs(&encoded, &flips, n, AucScore::AbsDelta, Exec::default());
    let planted = model.planted_feature;
    let planted_auc = aucs[planted].unwrap_or(0.0);
    let stats = feature_activation_stats(&encode_batch(&model.sae, &rows_f64(&acts), Exec::default()).map_err(e)?, n);
    let control = select_control_feature(planted, &stats, &aucs, &ControlBand::default()).map_err(e)?;
    let control_auc = aucs[control].unwrap_or(1.0);
    ensure(planted_auc > 0.9 && control_auc <= 0.6, || format!("(b) AUC planted {planted_auc} control {control_auc}"))?;

    let cur = curate_flipbank(&parsed, &corpus, &HashMap::new(), &CurationConfig::default());
    let (cases, inputs, _) = resolve_case_rows(&cur.cases, &acts, TOY_LAYER);
    let sweep = patch_sweep(&cases, &inputs, &model.sae, &model.readout, &[planted], &cfg, Exec::default()).map_err(e)?;
    let recovery = sweep.summaries[0].mean_recovery.map_or(0.0, |m| m.estimate);
    ensure(recovery >= 0.9, || format!("(c) mean recovery {recovery} over {} cases", cases.len()))?;

    let label_map: HashMap<String, Label> = tc.labels.iter().map(|l| (l.question_id.clone(), l.label)).collect();
    let perm = PermutationConfig::default();
    let evaluate = |f: usize| -> Result<flipkit::interventions::ClampEvaluation, String> {
        let feats = [f];
        let (after, _) = run_conditions(&model, &tc, Some(ClampHook { sae: &model.sae, features: &feats }))?;
        clamp_evaluation(&parsed, &after, Some(&corpus), Some(&label_map), &cfg, &perm).map_err(|x| x.to_string())
    };
    let ev = evaluate(planted)?;
    let ctrl = evaluate(control)?;
    let rel = ev.flip_rate.relative_change.unwrap_or(0.0);
    let ctrl_drop = -ctrl.flip_rate.delta;
    ensure(rel <= -0.5 && ctrl_drop < 0.02, || format!("(d) planted change {rel}, control reduction {ctrl_drop}"))?;
    let (t, w) = (ev.text_only_agreement.ok_or("no text-only")?, ev.swap_sensitivity.ok_or("no swap")?);
    ensure(t.after.estimate < t.before.estimate && w.after.estimate > w.before.estimate, || {
        format!("(e) text-only {} -> {}, swap {} -> {}", t.before.estimate, t.after.estimate, w.before.estimate, w.after.estimate)
    })?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "flip {flip:.3} (closed form {analytic:.3}), AUC {planted_auc:.3} vs control {control_auc:.3}, recovery {recovery:.3}, \
         clamp {:+.1}% (control {:+.1} pp), text-only {:.3}->{:.3}, swap {:.3}->{:.3}",
        100.0 * rel,
        100.0 * ctrl.flip_rate.delta,
        t.before.estimate,
        t.after.estimate,
        w.before.estimate,
        w.after.estimate
    ))
}

// ---------------------------------------------------------------- attention

fn random_grid(rng: &mut impl Rng) -> Vec<f64> {
    (0..256).map(|_| rng.random::<f64>()).collect()
}

fn random_box(rng: &mut impl Rng) -> BoundingBox {
    loop {
        let (a, b, c, d): (f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random());
        if let Ok(bb) = BoundingBox::new(a.min(b), c.min(d), a.max(b), c.max(d)) {
            if bb.x1 - bb.x0 > 0.02 && bb.y1 - bb.y0 > 0.02 {
                return bb;
            }
        }
    }
}

/// Pixel counts by direct loops over the upsampled map.
fn brute_force(map: &Map2, bbox: &BoundingBox, percentile: f64) -> (Option<f64>, Option<f64>) {
    let mut sorted = map.data.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let threshold = sorted[rank - 1];
    let (mut inter, mut in_mask, mut in_box) = (0usize, 0usize, 0usize);
    for r in 0..map.h {
        for c in 0..map.w {
            let cx = (c as f64 + 0.5) / map.w as f64;
            let cy = (r as f64 + 0.5) / map.h as f64;
            let b = cx >= bbox.x0 && cx <= bbox.x1 && cy >= bbox.y0 && cy <= bbox.y1;
            let a = map.at(r, c) > threshold;
            in_mask += a as usize;
            in_box += b as usize;
            inter += (a && b) as usize;
        }
    }
    let ratio = |den: usize| (den > 0).then(|| inter as f64 / den as f64);
    (ratio(in_box), ratio(in_mask))
}

fn attention_metrics() -> Outcome {
    let mut rng = replicate_rng(31, 0);
    for k in 0..50 {
        let grid = Map2::from_grid(&AttentionGrid::new(random_grid(&mut rng))?);
        let map = upsample_bilinear(&grid, 224, 224).map_err(|e| e.to_string())?;
        let bbox = random_box(&mut rng);
        let mask = threshold_mask(&map, 90.0).map_err(|e| e.to_string())?;
        let got = (coverage(&mask, &bbox), precision(&mask, &bbox));
        let want = brute_force(&map, &bbox, 90.0);
        ensure(got == want, || format!("instance {k}: {got:?} vs brute force {want:?}"))?;
    }
    for k in 0..20 {
        let values = random_grid(&mut rng);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let bbox = random_box(&mut rng);
        let score = |vals: Vec<f64>| -> Result<(Vec<bool>, Option<f64>, Option<f64>), String> {
            let map = upsample_bilinear(&Map2::from_grid(&AttentionGrid::new(vals)?), 224, 224).map_err(|e| e.to_string())?;
            let mask = threshold_mask(&map, 90.0).map_err(|e| e.to_string())?;
            Ok((mask.mask.clone(), coverage(&mask, &bbox), precision(&mask, &bbox)))
        };
        let base = score(values.clone())?;
        let scaled = score(values.iter().map(|v| v * scale).collect())?;
        ensure(base == scaled, || format!("scaling {k} by {scale} changed the mask"))?;
    }
    Ok("50 instances match brute-force counts exactly; 20 positive scalings leave masks unchanged".into())
}

// ---------------------------------------------------------------- normalizer

fn prompt_normalizer() -> Outcome {
    let d = FindingDictionary::default();
    let rows = [
        ("Does this X-ray show a collapsed lung?", "Is pneumothorax present in this chest radiograph?"),
        ("Can you see any signs of fluid buildup?", "Is pleural effusion present in this chest radiograph?"),
        ("Is there radiographic evidence of cardiomegaly?", "Is cardiomegaly present in this chest radiograph?"),
        ("Big heart?", "Is cardiomegaly present in this chest radiograph?"),
    ];
    for (input, want) in rows {
        let got = d.normalize(input).text;
        ensure(got == want, || format!("{input:?} -> {got:?}, want {want:?}"))?;
    }

    let mut vocab: Vec<String> = ["is", "there", "any", "sign", "of", "the", "lung", "heart", "fluid", "x-ray", "seen", "?", "big", "no", "left"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (f, syn) in d.entries() {
        vocab.push(f.clone());
        vocab.extend(syn.iter().cloned());
    }
    let mut rng = replicate_rng(404, 0);
    let text = |rng: &mut dyn rand::RngCore| -> String {
        let n = rng.random_range(1..9);
        (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].as_str()).collect::<Vec<_>>().join(" ")
    };
    let questions: Vec<QuestionRecord> = (0..1000)
        .map(|i| {
            serde_json::from_value(json!({
                "question_id": format!("q{i}"),
                "dataset_id": "synthetic",
                "image_id": format!("img{i}"),
                "text": text(&mut rng),
                "question_type": "presence",
                "paraphrases": [{"paraphrase_id": "p0", "text": text(&mut rng), "transform_type": "lexical"}],
            }))
            .unwrap()
        })
        .collect();
    let (once, stats) = normalize_corpus(&questions, &d);
    let (twice, _) = normalize_corpus(&once, &d);
    let texts = |qs: &[QuestionRecord]| -> Vec<String> {
        qs.iter().flat_map(|q| std::iter::once(q.text.clone()).chain(q.paraphrases.iter().map(|p| p.text.clone()))).collect()
    };
    ensure(texts(&once) == texts(&twice), || "normalizing twice changed a text".into())?;
    Ok(format!(
        "4 documented rows exact; idempotent over 1000 fuzzed questions (passthrough {:.1}%)",
        100.0 * stats.passthrough_rate
    ))
}

// ---------------------------------------------------------------- determinism

fn cli_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let pa = run_pipeline(a.path(), 3, 200)?;
    let pb = run_pipeline(b.path(), 3, 200)?;
    let files = pa.metric_files();
    for (fa, fb) in files.iter().zip(pb.metric_files()) {
        let (x, y) = (std::fs::read(fa).map_err(|e| e.to_string())?, std::fs::read(&fb).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{} differs between runs", fa.file_name().unwrap().to_string_lossy()))?;
    }
    Ok(format!("{} metric documents byte-identical across two full runs", files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("fixture arithmetic", fixture_arithmetic),
        ("flip truth table", flip_truth_table),
        ("SAE sparse/dense agreement", sae_dense_agreement),
        ("patching algebra", patching_algebra),
        ("statistics calibration", stats_calibration),
        ("testbed end to end", testbed_end_to_end),
        ("attention metrics", attention_metrics),
        ("prompt normalizer", prompt_normalizer),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} ({secs:.1}s)");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
