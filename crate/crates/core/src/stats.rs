//! Resampling and classical tests used across the pipeline.
//!
//! Every randomized procedure takes a master seed and derives one ChaCha8
//! stream per replicate (`stream = replicate index`), so results are
//! independent of thread count and of [`Exec`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: String,
    pub estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl StatResult {
    fn point(statistic: &str, estimate: f64, n: usize) -> Self {
        StatResult {
            statistic: statistic.to_string(),
            estimate,
            ci_low: None,
            ci_high: None,
            p_value: None,
            n,
            seed: None,
        }
    }
}

/// RNG for one replicate of a seeded procedure.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_resamples: 1000,
            level: 0.95,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        BootstrapConfig {
            seed,
            ..Default::default()
        }
    }
}

/// Statistic values over `n_resamples` resamples (with replacement) of the
/// item indices `0..n_items`. Replicates where the statistic is NaN (e.g. a
/// ratio whose resampled denominator is zero) are dropped.
pub fn bootstrap_replicates<F>(n_items: usize, cfg: &BootstrapConfig, statistic: F) -> Vec<f64>
where
    F: Fn(&[usize]) -> f64 + Sync + Send,
{
    cfg.exec
        .map_range(cfg.n_resamples, |r| {
            let mut rng = replicate_rng(cfg.seed, r as u64);
            let idx: Vec<usize> = (0..n_items).map(|_| rng.random_range(0..n_items)).collect();
            statistic(&idx)
        })
        .into_iter()
        .filter(|v| !v.is_nan())
        .collect()
}

/// Percentile CI of an arbitrary statistic over resampled items.
pub fn bootstrap_statistic<F>(
    name: &str,
    n_items: usize,
    cfg: &BootstrapConfig,
    statistic: F,
) -> Result<StatResult>
where
    F: Fn(&[usize]) -> f64 + Sync + Send,
{
    if n_items == 0 {
        return Err(Error::Undefined(format!("{name}: no items to resample")));
    }
    if !(0.0 < cfg.level && cfg.level < 1.0) {
        return Err(Error::invalid(format!("confidence level {} not in (0, 1)", cfg.level)));
    }
    let all: Vec<usize> = (0..n_items).collect();
    let estimate = statistic(&all);
    let mut reps = bootstrap_replicates(n_items, cfg, &statistic);
    let alpha = (1.0 - cfg.level) / 2.0;
    let (lo, hi) = if reps.is_empty() {
        (estimate, estimate)
    } else {
        reps.sort_by(f64::total_cmp);
        (quantile_sorted(&reps, alpha), quantile_sorted(&reps, 1.0 - alpha))
    };
    Ok(StatResult {
        statistic: name.to_string(),
        estimate,
        // Percentile intervals of skewed statistics can exclude the point
        // estimate; widen so the interval always contains it.
        ci_low: Some(lo.min(estimate)),
        ci_high: Some(hi.max(estimate)),
        p_value: None,
        n: n_items,
        seed: Some(cfg.seed),
    })
}

/// Percentile bootstrap CI of the mean.
pub fn bootstrap_ci(values: &[f64], cfg: &BootstrapConfig) -> Result<StatResult> {
    bootstrap_statistic("mean", values.len(), cfg, |idx| {
        idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
    })
}

/// Bootstrap CI of the mean over the complete resampling distribution: every
/// one of the `n^n` equally likely resamples, grouped by multiset with
/// multinomial weights. Feasible for `n <= 12`.
pub fn bootstrap_ci_exact(values: &[f64], level: f64) -> Result<StatResult> {
    let n = values.len();
    if n == 0 || n > 12 {
        return Err(Error::invalid(format!(
            "exact bootstrap needs 1..=12 values, got {n}"
        )));
    }
    let mut fact = [1u128; 13];
    for i in 1..=12 {
        fact[i] = fact[i - 1] * i as u128;
    }
    // (resample mean, number of ordered resamples producing it)
    let mut dist: Vec<(f64, u128)> = Vec::new();
    let mut counts = vec![0usize; n];
    fn compositions(
        pos: usize,
        left: usize,
        counts: &mut [usize],
        values: &[f64],
        fact: &[u128; 13],
        out: &mut Vec<(f64, u128)>,
    ) {
        let n = counts.len();
        if pos == n - 1 {
            counts[pos] = left;
            let weight = counts
                .iter()
                .fold(fact[n], |w, &c| w / fact[c]);
            let m = counts
                .iter()
                .zip(values)
                .map(|(&c, &v)| c as f64 * v)
                .sum::<f64>()
                / n as f64;
            out.push((m, weight));
            return;
        }
        for c in 0..=left {
            counts[pos] = c;
            compositions(pos + 1, left - c, counts, values, fact, out);
        }
    }
    compositions(0, n, &mut counts, values, &fact, &mut dist);
    dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: u128 = dist.iter().map(|d| d.1).sum();
    let at_rank = |rank: u128| -> f64 {
        let mut acc = 0u128;
        for &(v, w) in &dist {
            acc += w;
            if rank < acc {
                return v;
            }
        }
        dist[dist.len() - 1].0
    };
    let quantile = |q: f64| {
        let h = (total - 1) as f64 * q;
        let lo = h.floor() as u128;
        let a = at_rank(lo);
        let b = at_rank((lo + 1).min(total - 1));
        a + (h - lo as f64) * (b - a)
    };
    let alpha = (1.0 - level) / 2.0;
    Ok(StatResult {
        ci_low: Some(quantile(alpha)),
        ci_high: Some(quantile(1.0 - alpha)),
        ..StatResult::point("mean", mean(values), n)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub n_permutations: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            n_permutations: 10_000,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

fn ties_or_beats(t: f64, observed: f64) -> bool {
    t.abs() >= observed.abs() - 1e-9 * observed.abs().max(1.0)
}

/// Two-sided paired permutation test on the mean difference `mean(a - b)`.
///
/// Under the null each item's two labels are exchangeable, so every item's
/// difference flips sign independently. When all `2^n` sign patterns fit in
/// the permutation budget the null distribution is enumerated exactly;
/// otherwise `p = (hits + 1) / (n_permutations + 1)`.
pub fn paired_permutation_test(a: &[f64], b: &[f64], cfg: &PermutationConfig) -> Result<StatResult> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::Undefined("permutation test on empty samples".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = d.iter().sum::<f64>();
    let exact = n < 63 && (1u64 << n) <= cfg.n_permutations as u64;
    let p = if exact {
        let total = 1u64 << n;
        let hits = cfg.exec.count_range(total as usize, |mask| {
            let t: f64 = d
                .iter()
                .enumerate()
                .map(|(i, &v)| if mask >> i & 1 == 1 { -v } else { v })
                .sum();
            ties_or_beats(t, observed) as u64
        });
        hits as f64 / total as f64
    } else {
        let hits = cfg.exec.count_range(cfg.n_permutations, |r| {
            let mut rng = replicate_rng(cfg.seed, r as u64);
            let t: f64 = d
                .iter()
                .map(|&v| if rng.random::<bool>() { -v } else { v })
                .sum();
            ties_or_beats(t, observed) as u64
        });
        (hits + 1) as f64 / (cfg.n_permutations + 1) as f64
    };
    Ok(StatResult {
        p_value: Some(p.min(1.0)),
        seed: (!exact).then_some(cfg.seed),
        ..StatResult::point("mean_difference", observed / n as f64, n)
    })
}

/// Midranks (1-based) of the pooled sample, and the tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Pooled sizes up to this use the exact permutation distribution of U.
pub const MANN_WHITNEY_EXACT_MAX: usize = 20;

/// Mann-Whitney U for `group_a` (midranks for ties), two-sided.
///
/// For `n_a + n_b <= 20` the p-value is exact, enumerating every assignment
/// of the pooled midranks to group a. Larger samples use the normal
/// approximation with tie and continuity corrections.
pub fn mann_whitney_u(group_a: &[f64], group_b: &[f64]) -> Result<StatResult> {
    let (na, nb) = (group_a.len(), group_b.len());
    if na == 0 || nb == 0 {
        return Err(Error::Undefined("Mann-Whitney needs two non-empty groups".into()));
    }
    let pooled: Vec<f64> = group_a.iter().chain(group_b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let offset = (na * (na + 1)) as f64 / 2.0;
    let u = ranks[..na].iter().sum::<f64>() - offset;
    let mu = (na * nb) as f64 / 2.0;
    let n = na + nb;

    let p = if n <= MANN_WHITNEY_EXACT_MAX {
        let dev = (u - mu).abs();
        let mut hits = 0u64;
        let mut total = 0u64;
        fn walk(
            start: usize,
            left: usize,
            acc: f64,
            ranks: &[f64],
            on_done: &mut dyn FnMut(f64),
        ) {
            if left == 0 {
                on_done(acc);
                return;
            }
            for i in start..=ranks.len() - left {
                walk(i + 1, left - 1, acc + ranks[i], ranks, on_done);
            }
        }
        walk(0, na, 0.0, &ranks, &mut |rank_sum| {
            total += 1;
            if (rank_sum - offset - mu).abs() >= dev - 1e-9 {
                hits += 1;
            }
        });
        hits as f64 / total as f64
    } else {
        let nf = n as f64;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
        let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term);
        if var <= 0.0 {
            1.0
        } else {
            let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            2.0 * (1.0 - normal.cdf(z))
        }
    };
    Ok(StatResult {
        p_value: Some(p.clamp(0.0, 1.0)),
        ..StatResult::point("mann_whitney_u", u, n)
    })
}

/// Area under the ROC curve of `scores` for separating positives from
/// negatives: `P(s+ > s-) + P(s+ = s-)/2`. `None` when either class is empty.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|p| *p.1).map(|p| *p.0).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|p| !*p.1).map(|p| *p.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let pooled: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let (ranks, _) = midranks(&pooled);
    let np = pos.len() as f64;
    let u = ranks[..pos.len()].iter().sum::<f64>() - np * (np + 1.0) / 2.0;
    Some(u / (np * neg.len() as f64))
}

/// Cohen's d with the pooled (n-1) standard deviation.
pub fn cohens_d(group_a: &[f64], group_b: &[f64]) -> Result<f64> {
    let (na, nb) = (group_a.len(), group_b.len());
    if na < 2 || nb < 2 {
        return Err(Error::Undefined("Cohen's d needs at least two values per group".into()));
    }
    let diff = mean(group_a) - mean(group_b);
    let pooled = (((na - 1) as f64 * variance(group_a) + (nb - 1) as f64 * variance(group_b))
        / (na + nb - 2) as f64)
        .sqrt();
    if pooled == 0.0 {
        return if diff == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::Undefined("Cohen's d with zero pooled variance".into()))
        };
    }
    Ok(diff / pooled)
}

fn correlation_p(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Pearson correlation with a two-sided t-approximation p-value.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<StatResult> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("x has {} values, y has {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Undefined("correlation needs at least two points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant variable".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(StatResult {
        p_value: correlation_p(r, n),
        ..StatResult::point("pearson_r", r, n)
    })
}

/// Point-biserial correlation: Pearson r with the binary variable coded 0/1.
/// A constant continuous variable gives `r = 0, p = 1`.
pub fn point_biserial(binary: &[bool], continuous: &[f64]) -> Result<StatResult> {
    let coded: Vec<f64> = binary.iter().map(|&b| b as u8 as f64).collect();
    match pearson_r(&coded, continuous) {
        Ok(mut r) => {
            r.statistic = "point_biserial_r".into();
            Ok(r)
        }
        Err(Error::Undefined(_))
            if continuous.len() >= 2
                && continuous.iter().all(|v| *v == continuous[0])
                && binary.len() == continuous.len() =>
        {
            Ok(StatResult {
                p_value: Some(1.0),
                ..StatResult::point("point_biserial_r", 0.0, continuous.len())
            })
        }
        Err(e) => Err(e),
    }
}

/// Pearson chi-square test of independence on an `r x k` contingency table.
pub fn chi_square_independence(table: &[Vec<f64>]) -> Result<StatResult> {
    let r = table.len();
    if r < 2 {
        return Err(Error::invalid("contingency table needs at least two rows"));
    }
    let k = table[0].len();
    if k < 2 || table.iter().any(|row| row.len() != k) {
        return Err(Error::invalid("contingency table rows must share >= 2 columns"));
    }
    if table.iter().flatten().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("contingency counts must be finite and nonnegative"));
    }
    let rows: Vec<f64> = table.iter().map(|row| row.iter().sum()).collect();
    let cols: Vec<f64> = (0..k).map(|j| table.iter().map(|row| row[j]).sum()).collect();
    if rows.iter().chain(&cols).any(|m| *m == 0.0) {
        return Err(Error::invalid("contingency table has a zero margin"));
    }
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            stat += (o - e).powi(2) / e;
        }
    }
    let df = ((r - 1) * (k - 1)) as f64;
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    Ok(StatResult {
        p_value: Some((1.0 - dist.cdf(stat)).clamp(0.0, 1.0)),
        ..StatResult::point("chi_square", stat, total.round() as usize)
    })
}
