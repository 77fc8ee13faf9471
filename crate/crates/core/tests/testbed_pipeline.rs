use std::collections::HashMap;

use flipkit::answer::{parse_records, Lexicon};
use flipkit::interchange::{ActivationMatrix, Corpus, Label, ParsedRecord};
use flipkit::interventions::{
    clamp_evaluation, curate_flipbank, patch_sweep, resolve_case_rows, select_control_feature,
    ControlBand, CurationConfig,
};
use flipkit::metrics::{build_outcomes, flip_rate};
use flipkit::sae::{
    encode_batch, encode_pairs, feature_activation_stats, feature_flip_aucs, labeled_pair_rows,
    rows_f64, AucScore,
};
use flipkit::stats::{BootstrapConfig, PermutationConfig};
use flipkit::testbed::{
    generate_corpus, run_toy_model, ClampHook, ToyCorpus, ToyModel, ToyModelSpec, TOY_LAYER,
};
use flipkit::Exec;

fn run_all(model: &ToyModel, tc: &ToyCorpus, clamp: Option<ClampHook<'_>>) -> (Vec<ParsedRecord>, ActivationMatrix) {
    let mut responses = Vec::new();
    let mut real = None;
    for cond in ["real", "blank", "swap"] {
        let run = run_toy_model(model, tc, cond, clamp, Exec::default()).unwrap();
        responses.extend(run.responses);
        if cond == "real" {
            real = Some(run.activations);
        }
    }
    (parse_records(responses, &Lexicon::default(), |_| None), real.unwrap())
}

#[test]
fn planted_feature_explains_flips() {
    let model = ToyModel::new(ToyModelSpec::default()).unwrap();
    let tc = generate_corpus(&model, 500, 4, 7).unwrap();
    let corpus = Corpus::new(tc.questions.clone()).unwrap();
    let cfg = BootstrapConfig::with_seed(7);
    let (parsed, acts) = run_all(&model, &tc, None);
    let table = build_outcomes(&parsed, Some(&corpus)).unwrap();
    let flip = flip_rate(&table[&("toy".to_string(), "real".to_string())], &cfg).unwrap();
    assert!((0.10..=0.25).contains(&flip.estimate), "{flip:?}");
    assert!((flip.estimate - model.spec.analytic_flip_rate(4)).abs() < 0.05);

    let (labels, rows, missing) = labeled_pair_rows(&table, &acts, TOY_LAYER);
    assert_eq!((labels.len(), missing), (2000, 0));
    let flips: Vec<bool> = labels.iter().map(|l| l.flipped).collect();
    let encoded = encode_pairs(&model.sae, &rows, Exec::default()).unwrap();
    let n = model.sae.n_features();
    let aucs = feature_flip_aucs(&encoded, &flips, n, AucScore::AbsDelta, Exec::default());
    let planted = model.planted_feature;
    assert!(aucs[planted].unwrap() > 0.9);

    let all = encode_batch(&model.sae, &rows_f64(&acts), Exec::default()).unwrap();
    let stats = feature_activation_stats(&all, n);
    let control = select_control_feature(planted, &stats, &aucs, &ControlBand::default()).unwrap();
    assert!(aucs[control].unwrap() <= 0.6);

    let cur = curate_flipbank(&parsed, &corpus, &HashMap::new(), &CurationConfig::default());
    let (cases, inputs, missing) = resolve_case_rows(&cur.cases, &acts, TOY_LAYER);
    assert!(missing.is_empty() && !cases.is_empty());
    let sweep = patch_sweep(&cases, &inputs, &model.sae, &model.readout, &[planted, control], &cfg, Exec::default()).unwrap();
    let rec = |i: usize| sweep.summaries[i].mean_recovery.unwrap().estimate;
    assert!(rec(0) >= 0.9);
    assert!(rec(0) > rec(1));

    let labels: HashMap<String, Label> = tc.labels.iter().map(|l| (l.question_id.clone(), l.label)).collect();
    let perm = PermutationConfig::default();
    let clamped = |f: usize| {
        let feats = [f];
        let (after, _) = run_all(&model, &tc, Some(ClampHook { sae: &model.sae, features: &feats }));
        (clamp_evaluation(&parsed, &after, Some(&corpus), Some(&labels), &cfg, &perm).unwrap(), after)
    };
    let (ev, after) = clamped(planted);
    assert!(ev.flip_rate.relative_change.unwrap() <= -0.5);
    let t = ev.text_only_agreement.unwrap();
    assert!(t.after.estimate < t.before.estimate);
    let s = ev.swap_sensitivity.unwrap();
    assert!(s.after.estimate > s.before.estimate);

    // answers to strongly evidenced questions never move
    let strong: HashMap<&str, bool> = tc
        .specs
        .iter()
        .map(|q| (q.question_id.as_str(), q.evidence.abs() > model.spec.high_evidence_threshold()))
        .collect();
    for (b, a) in parsed.iter().zip(&after) {
        if b.response.condition.kind() == "real" && strong[b.response.question_id.as_str()] {
            assert_eq!(b.parsed, a.parsed);
        }
    }

    let (ctrl, _) = clamped(control);
    assert!(ctrl.flip_rate.delta.abs() < 0.02);
}

#[test]
fn sequential_and_parallel_runs_match() {
    let model = ToyModel::new(ToyModelSpec { sigma: 0.02, ..Default::default() }).unwrap();
    let tc = generate_corpus(&model, 60, 3, 1).unwrap();
    for cond in ["real", "blank", "noise", "swap"] {
        let a = run_toy_model(&model, &tc, cond, None, Exec::Sequential).unwrap();
        let b = run_toy_model(&model, &tc, cond, None, Exec::default()).unwrap();
        assert_eq!(a, b);
    }
}
