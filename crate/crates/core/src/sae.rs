//! JumpReLU sparse-autoencoder inference and feature diagnostics.
//!
//! `f_i = z_i` when `z_i > θ_i` (strict) and 0 otherwise, with
//! `z = x W_enc + b_enc`. Inputs are not mean-centered before encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::interchange::{validate_sae, ActivationMatrix, SaeParams, Tensor};
use crate::metrics::OutcomeTable;
use crate::stats;

/// SAE weights widened to f64, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sae {
    d_model: usize,
    n_features: usize,
    /// `d_model x n_features`
    w_enc: Vec<f64>,
    b_enc: Vec<f64>,
    theta: Vec<f64>,
    /// `n_features x d_model`
    w_dec: Vec<f64>,
    b_dec: Vec<f64>,
}

fn widen(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl Sae {
    pub fn new(
        d_model: usize,
        n_features: usize,
        w_enc: Vec<f64>,
        b_enc: Vec<f64>,
        theta: Vec<f64>,
        w_dec: Vec<f64>,
        b_dec: Vec<f64>,
    ) -> Result<Self> {
        let checks = [
            ("W_enc", w_enc.len(), d_model * n_features),
            ("b_enc", b_enc.len(), n_features),
            ("theta", theta.len(), n_features),
            ("W_dec", w_dec.len(), n_features * d_model),
            ("b_dec", b_dec.len(), d_model),
        ];
        if d_model == 0 || n_features == 0 {
            return Err(Error::dim("SAE dimensions must be positive"));
        }
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::dim(format!("{name} has {got} values, expected {want}")));
            }
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite JumpReLU threshold"));
        }
        Ok(Sae {
            d_model,
            n_features,
            w_enc,
            b_enc,
            theta,
            w_dec,
            b_dec,
        })
    }

    pub fn from_params(p: &SaeParams) -> Result<Self> {
        let report = validate_sae(p)?;
        Sae::new(
            report.d_model,
            report.n_features,
            widen(&p.w_enc),
            widen(&p.b_enc),
            widen(&p.theta),
            widen(&p.w_dec),
            widen(&p.b_dec),
        )
    }

    pub fn to_params(&self) -> SaeParams {
        let (d, n) = (self.d_model, self.n_features);
        SaeParams {
            w_enc: Tensor::matrix(d, n, narrow(&self.w_enc)).expect("consistent dims"),
            b_enc: Tensor::vector(narrow(&self.b_enc)),
            theta: Tensor::vector(narrow(&self.theta)),
            w_dec: Tensor::matrix(n, d, narrow(&self.w_dec)).expect("consistent dims"),
            b_dec: Tensor::vector(narrow(&self.b_dec)),
        }
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn decoder_row(&self, i: usize) -> &[f64] {
        &self.w_dec[i * self.d_model..(i + 1) * self.d_model]
    }

    pub fn b_dec(&self) -> &[f64] {
        &self.b_dec
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_model {
            return Err(Error::dim(format!(
                "input has {} dims, SAE expects {}",
                x.len(),
                self.d_model
            )));
        }
        Ok(())
    }

    pub(crate) fn check_feature(&self, i: usize) -> Result<()> {
        if i >= self.n_features {
            return Err(Error::invalid(format!(
                "feature {i} out of range for {} features",
                self.n_features
            )));
        }
        Ok(())
    }

    /// Encoder pre-activations `z = x W_enc + b_enc`.
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let n = self.n_features;
        let mut z = self.b_enc.clone();
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            for (zj, w) in z.iter_mut().zip(&self.w_enc[k * n..(k + 1) * n]) {
                *zj += xk * w;
            }
        }
        Ok(z)
    }

    pub fn encode(&self, x: &[f64]) -> Result<FeatureVector> {
        let z = self.pre_activations(x)?;
        let entries = z
            .into_iter()
            .zip(&self.theta)
            .enumerate()
            .filter(|(_, (zi, th))| *zi > **th && *zi != 0.0)
            .map(|(i, (zi, _))| (i, zi))
            .collect();
        Ok(FeatureVector {
            n_features: self.n_features,
            entries,
        })
    }

    /// Activation of a single feature, without computing the others.
    pub fn feature_activation(&self, x: &[f64], i: usize) -> Result<f64> {
        self.check_input(x)?;
        self.check_feature(i)?;
        let n = self.n_features;
        // Same accumulation order as `pre_activations`, so results match bitwise.
        let mut z = self.b_enc[i];
        for (k, &xk) in x.iter().enumerate() {
            if xk != 0.0 {
                z += xk * self.w_enc[k * n + i];
            }
        }
        Ok(if z > self.theta[i] && z != 0.0 { z } else { 0.0 })
    }

    pub fn decode(&self, f: &FeatureVector) -> Result<Vec<f64>> {
        if f.n_features != self.n_features {
            return Err(Error::dim(format!(
                "feature vector over {} features, SAE has {}",
                f.n_features, self.n_features
            )));
        }
        let mut x = self.b_dec.clone();
        for &(i, fi) in &f.entries {
            for (xk, w) in x.iter_mut().zip(self.decoder_row(i)) {
                *xk += fi * w;
            }
        }
        Ok(x)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.decode(&self.encode(x)?)
    }
}

/// Active features as `(index, activation)`, ascending by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub n_features: usize,
    pub entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn get(&self, i: usize) -> f64 {
        self.entries
            .binary_search_by_key(&i, |e| e.0)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn l0(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_features];
        for &(i, a) in &self.entries {
            v[i] = a;
        }
        v
    }
}

/// `f_para - f_orig` over the union of supports; exact zeros dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureDelta {
    pub entries: Vec<(usize, f64)>,
}

impl FeatureDelta {
    pub fn between(orig: &FeatureVector, para: &FeatureVector) -> Self {
        let (a, b) = (&orig.entries, &para.entries);
        let (mut i, mut j) = (0, 0);
        let mut entries = Vec::new();
        while i < a.len() || j < b.len() {
            let (idx, d) = match (a.get(i), b.get(j)) {
                (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => {
                    i += 1;
                    j += 1;
                    (ia, vb - va)
                }
                (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => {
                    i += 1;
                    (ia, -va)
                }
                (Some(&(ia, va)), None) => {
                    i += 1;
                    (ia, -va)
                }
                (_, Some(&(ib, vb))) => {
                    j += 1;
                    (ib, vb)
                }
                (None, None) => unreachable!(),
            };
            if d != 0.0 {
                entries.push((idx, d));
            }
        }
        FeatureDelta { entries }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries
            .binary_search_by_key(&i, |e| e.0)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn feature_delta(sae: &Sae, x_orig: &[f64], x_para: &[f64]) -> Result<FeatureDelta> {
    Ok(FeatureDelta::between(&sae.encode(x_orig)?, &sae.encode(x_para)?))
}

/// Largest `|Δ|` first; equal magnitudes in ascending index order.
pub fn top_k_deltas(delta: &FeatureDelta, k: usize) -> Vec<(usize, f64)> {
    let mut v = delta.entries.clone();
    v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

/// Rows of an activation matrix widened to f64.
pub fn rows_f64(x: &ActivationMatrix) -> Vec<Vec<f64>> {
    x.rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

pub fn encode_batch(sae: &Sae, rows: &[Vec<f64>], exec: Exec) -> Result<Vec<FeatureVector>> {
    exec.map_slice(rows, |r| sae.encode(r)).into_iter().collect()
}

/// Fraction of variance unexplained, against the column-mean baseline.
pub fn fvu(sae: &Sae, rows: &[Vec<f64>], exec: Exec) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::Undefined("FVU needs at least two rows".into()));
    }
    let d = sae.d_model();
    let mut col_mean = vec![0.0; d];
    for r in rows {
        sae.check_input(r)?;
        for (m, v) in col_mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    col_mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
    let per_row: Vec<(f64, f64)> = exec
        .map_slice(rows, |r| {
            let xhat = sae.reconstruct(r)?;
            let err = r.iter().zip(&xhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let var = r.iter().zip(&col_mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>();
            Ok((err, var))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let (err, var) = per_row
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    if var == 0.0 {
        return Err(Error::Undefined("FVU of zero-variance activations".into()));
    }
    Ok(err / var)
}

pub fn mean_l0(sae: &Sae, rows: &[Vec<f64>], exec: Exec) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Undefined("mean L0 of no rows".into()));
    }
    let encoded = encode_batch(sae, rows, exec)?;
    Ok(encoded.iter().map(|f| f.l0() as f64).sum::<f64>() / rows.len() as f64)
}

/// Mann-Whitney AUC of scores for flipped vs consistent cases.
pub fn flip_auc(scores: &[f64], flips: &[bool]) -> Option<f64> {
    stats::auc(scores, flips)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucScore {
    /// `|f_para,i - f_orig,i|`
    #[default]
    AbsDelta,
    /// `f_para,i`
    Activation,
}

/// Encoded original/paraphrase pair for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub orig: FeatureVector,
    pub para: FeatureVector,
}

impl EncodedPair {
    pub fn score(&self, i: usize, score: AucScore) -> f64 {
        match score {
            AucScore::AbsDelta => (self.para.get(i) - self.orig.get(i)).abs(),
            AucScore::Activation => self.para.get(i),
        }
    }
}

pub fn encode_pairs(
    sae: &Sae,
    pairs: &[(Vec<f64>, Vec<f64>)],
    exec: Exec,
) -> Result<Vec<EncodedPair>> {
    exec.map_slice(pairs, |(o, p)| {
        Ok(EncodedPair {
            orig: sae.encode(o)?,
            para: sae.encode(p)?,
        })
    })
    .into_iter()
    .collect()
}

/// Flip-prediction AUC of every feature; `None` when a class is empty.
pub fn feature_flip_aucs(
    encoded: &[EncodedPair],
    flips: &[bool],
    n_features: usize,
    score: AucScore,
    exec: Exec,
) -> Vec<Option<f64>> {
    exec.map_range(n_features, |i| {
        let s: Vec<f64> = encoded.iter().map(|e| e.score(i, score)).collect();
        flip_auc(&s, flips)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub index: usize,
    pub n_active: usize,
    pub activation_rate: f64,
    /// Mean over the rows where the feature fires; 0 when it never does.
    pub mean_active: f64,
}

pub fn feature_activation_stats(encoded: &[FeatureVector], n_features: usize) -> Vec<FeatureStats> {
    let mut sum = vec![0.0; n_features];
    let mut count = vec![0usize; n_features];
    for f in encoded {
        for &(i, a) in &f.entries {
            sum[i] += a;
            count[i] += 1;
        }
    }
    (0..n_features)
        .map(|i| FeatureStats {
            index: i,
            n_active: count[i],
            activation_rate: if encoded.is_empty() {
                0.0
            } else {
                count[i] as f64 / encoded.len() as f64
            },
            mean_active: if count[i] == 0 { 0.0 } else { sum[i] / count[i] as f64 },
        })
        .collect()
}

/// One original/paraphrase pair with both answers valid, and whether the
/// answers differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub model_id: String,
    pub question_id: String,
    pub paraphrase_id: String,
    pub flipped: bool,
}

/// Real-image final-token rows at `layer` for every valid pair in the
/// outcome table. Pairs lacking either row are counted and skipped.
pub fn labeled_pair_rows(
    outcomes: &OutcomeTable,
    acts: &ActivationMatrix,
    layer: u32,
) -> (Vec<LabeledPair>, Vec<(Vec<f64>, Vec<f64>)>, usize) {
    let index = acts.index();
    let widen = |i: usize| acts.row(i).iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let (mut labels, mut rows, mut missing) = (Vec::new(), Vec::new(), 0);
    for ((model, cond), os) in outcomes {
        if cond != "real" {
            continue;
        }
        let key = |q: &str, p: Option<&str>| {
            (model.clone(), q.to_string(), p.map(str::to_string), "real".to_string(), layer)
        };
        for o in os {
            let Some(orig) = o.original_answer.and_then(|a| a.polarity()) else {
                continue;
            };
            for p in &o.paraphrase_answers {
                let Some(pa) = p.answer.polarity() else { continue };
                match (
                    index.get(&key(&o.question_id, None)),
                    index.get(&key(&o.question_id, Some(&p.paraphrase_id))),
                ) {
                    (Some(&i), Some(&j)) => {
                        rows.push((widen(i), widen(j)));
                        labels.push(LabeledPair {
                            model_id: model.clone(),
                            question_id: o.question_id.clone(),
                            paraphrase_id: p.paraphrase_id.clone(),
                            flipped: pa != orig,
                        });
                    }
                    _ => missing += 1,
                }
            }
        }
    }
    (labels, rows, missing)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::stats::replicate_rng;
    use nalgebra::{DMatrix, RowDVector};
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn random_sae(d: usize, n: usize, seed: u64) -> Sae {
        let mut rng = replicate_rng(seed, 0);
        let mut v = |len: usize, scale: f64| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-scale..scale)).collect()
        };
        let w_enc = v(d * n, 1.0);
        let b_enc = v(n, 0.3);
        let theta = v(n, 0.5).into_iter().map(f64::abs).collect();
        let w_dec = v(n * d, 1.0);
        let b_dec = v(d, 0.1);
        Sae::new(d, n, w_enc, b_enc, theta, w_dec, b_dec).unwrap()
    }

    pub(crate) struct Dense {
        pub w_enc: DMatrix<f64>,
        pub b_enc: RowDVector<f64>,
        pub theta: Vec<f64>,
        pub w_dec: DMatrix<f64>,
        pub b_dec: RowDVector<f64>,
    }

    pub(crate) fn dense(s: &Sae) -> Dense {
        let (d, n) = (s.d_model, s.n_features);
        Dense {
            w_enc: DMatrix::from_row_slice(d, n, &s.w_enc),
            b_enc: RowDVector::from_row_slice(&s.b_enc),
            theta: s.theta.clone(),
            w_dec: DMatrix::from_row_slice(n, d, &s.w_dec),
            b_dec: RowDVector::from_row_slice(&s.b_dec),
        }
    }

    impl Dense {
        pub fn encode(&self, x: &[f64]) -> Vec<f64> {
            let z = RowDVector::from_row_slice(x) * &self.w_enc + &self.b_enc;
            z.iter()
                .zip(&self.theta)
                .map(|(&zi, &t)| if zi > t { zi } else { 0.0 })
                .collect()
        }

        pub fn decode(&self, f: &[f64]) -> Vec<f64> {
            (RowDVector::from_row_slice(f) * &self.w_dec + &self.b_dec)
                .iter()
                .copied()
                .collect()
        }
    }

    fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= rel * x.abs().max(y.abs()).max(1.0))
    }

    fn tiny() -> Sae {
        Sae::new(1, 1, vec![2.0], vec![-1.0], vec![0.5], vec![3.0], vec![0.0]).unwrap()
    }

    #[test]
    fn encode_examples() {
        let s = tiny();
        assert_eq!(s.encode(&[1.0]).unwrap().entries, vec![(0, 1.0)]);
        assert!(s.encode(&[0.5]).unwrap().entries.is_empty());
        // z exactly at threshold stays inactive
        assert!(s.encode(&[0.75]).unwrap().entries.is_empty());
        assert!(s.encode(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn decode_examples() {
        let s = random_sae(4, 8, 1);
        let empty = FeatureVector { n_features: 8, entries: vec![] };
        assert_eq!(s.decode(&empty).unwrap(), s.b_dec);
        let one = FeatureVector { n_features: 8, entries: vec![(3, 1.0)] };
        let expected: Vec<f64> = s.decoder_row(3).iter().zip(&s.b_dec).map(|(a, b)| a + b).collect();
        assert_eq!(s.decode(&one).unwrap(), expected);
    }

    #[test]
    fn matches_dense_oracle() {
        let s = random_sae(4, 8, 2);
        let o = dense(&s);
        let mut rng = replicate_rng(3, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = s.encode(&x).unwrap();
            let fd = o.encode(&x);
            assert!(close(&f.to_dense(), &fd, 1e-9));
            assert!(f.entries.iter().all(|e| e.1 != 0.0));
            assert!(close(&s.decode(&f).unwrap(), &o.decode(&fd), 1e-9));
            assert_eq!(s.feature_activation(&x, 5).unwrap(), f.get(5));
        }
    }

    #[test]
    fn fvu_examples() {
        // Identity SAE: two features per dim (+/-) with zero thresholds.
        let d = 2;
        let w_enc = vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0];
        let w_dec = vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
        let exact = Sae::new(d, 4, w_enc, vec![0.0; 4], vec![0.0; 4], w_dec, vec![0.0; 2]).unwrap();
        let rows = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, -2.0]];
        assert!(fvu(&exact, &rows, Exec::Sequential).unwrap() < 1e-24);

        // Never fires, decodes to the column mean (1, 0.1667): FVU = 1.
        let mean = vec![1.0, 0.5 / 3.0];
        let dead = Sae::new(d, 1, vec![0.0; 2], vec![0.0], vec![1.0], vec![0.0; 2], mean).unwrap();
        assert!((fvu(&dead, &rows, Exec::Sequential).unwrap() - 1.0).abs() < 1e-12);

        // Hand case: decoder bias 0, no features. Rows (1,0), (0,1), (1,1):
        // error = 1 + 1 + 2 = 4; column mean (2/3, 2/3), variance sum = 4/3.
        let zero = Sae::new(d, 1, vec![0.0; 2], vec![0.0], vec![1.0], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!((fvu(&zero, &rows, Exec::Sequential).unwrap() - 3.0).abs() < 1e-12);
        assert!(fvu(&zero, &rows[..1], Exec::Sequential).is_err());
        assert!(fvu(&zero, &[vec![1.0, 1.0], vec![1.0, 1.0]], Exec::Sequential).is_err());
    }

    #[test]
    fn l0_examples() {
        let s = random_sae(3, 6, 4);
        let mut s = s;
        s.b_enc.iter_mut().for_each(|b| *b = -b.abs());
        s.theta.iter_mut().for_each(|t| *t = t.abs() + 0.01);
        assert_eq!(mean_l0(&s, &vec![vec![0.0; 3]; 5], Exec::Sequential).unwrap(), 0.0);
        assert_eq!(mean_l0(&tiny(), &[vec![1.0], vec![2.0]], Exec::Sequential).unwrap(), 1.0);
    }

    #[test]
    fn delta_examples() {
        let s = random_sae(4, 8, 5);
        let x = vec![0.3, -0.2, 1.0, 0.5];
        assert!(feature_delta(&s, &x, &x).unwrap().is_empty());

        // Feature 0 reads dim 0 only; rows of 0 and 268 move it 0 -> 268.
        let mut w_enc = vec![0.0; 2];
        w_enc[0] = 1.0;
        let planted = Sae::new(2, 1, w_enc, vec![0.0], vec![1.0], vec![1.0, 0.0], vec![0.0; 2]).unwrap();
        let d = feature_delta(&planted, &[0.0, 5.0], &[268.0, 5.0]).unwrap();
        assert_eq!(d.entries, vec![(0, 268.0)]);
    }

    #[test]
    fn top_k_examples() {
        let d = FeatureDelta { entries: vec![(1, -2.0), (4, 2.0), (7, 0.5), (9, 3.0)] };
        assert_eq!(top_k_deltas(&d, 3), vec![(9, 3.0), (1, -2.0), (4, 2.0)]);
        assert_eq!(top_k_deltas(&d, 10).len(), 4);
        let one = FeatureDelta { entries: vec![(2, 0.1)] };
        assert_eq!(top_k_deltas(&one, 1), vec![(2, 0.1)]);
    }

    #[test]
    fn auc_matches_pair_count() {
        let scores = [0.3, 0.9, 0.3, 0.1, 0.5, 0.9];
        let flips = [true, false, false, true, true, true];
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &fi) in flips.iter().enumerate() {
            for (j, &fj) in flips.iter().enumerate() {
                if fi && !fj {
                    total += 1.0;
                    wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        assert!((flip_auc(&scores, &flips).unwrap() - wins / total).abs() < 1e-12);
        assert_eq!(flip_auc(&[1.0, 2.0], &[false, true]), Some(1.0));
        assert_eq!(flip_auc(&[1.0, 1.0], &[false, true]), Some(0.5));
    }

    #[test]
    fn params_round_trip() {
        let s = tiny();
        assert_eq!(Sae::from_params(&s.to_params()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn linear_regime_scale_covariance(seed in 0u64..500, c in 1.0f64..5.0) {
            let mut s = random_sae(4, 6, seed);
            s.b_enc.iter_mut().for_each(|b| *b = 0.0);
            s.theta.iter_mut().for_each(|t| *t = 0.0);
            let x = vec![0.5, -0.25, 1.0, 0.75];
            let f = s.encode(&x).unwrap();
            let fc = s.encode(&x.iter().map(|v| v * c).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(f.l0(), fc.l0());
            for (a, b) in f.entries.iter().zip(&fc.entries) {
                prop_assert_eq!(a.0, b.0);
                prop_assert!((a.1 * c - b.1).abs() < 1e-9);
            }
        }
    }
}
