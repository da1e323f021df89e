use super::correlation::average_ranks;
use super::special::{cvm_limit_cdf, normal_sf};
use super::{check, StatsError};
use serde::{Deserialize, Serialize};

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `(#{a_i > b_j}, #{a_i < b_j}, #{a_i == b_j})` over all pairs.
fn dominance_counts(a: &[f64], b: &[f64]) -> (u64, u64, u64) {
    let sb = sorted(b);
    let (mut gt, mut lt, mut eq) = (0u64, 0u64, 0u64);
    for &x in a {
        let below = sb.partition_point(|&v| v < x) as u64;
        let not_above = sb.partition_point(|&v| v <= x) as u64;
        gt += below;
        eq += not_above - below;
        lt += sb.len() as u64 - not_above;
    }
    (gt, lt, eq)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_t |F_a(t) - F_b(t)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check(a, 1)?;
    check(b, 1)?;
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < sa.len() || j < sb.len() {
        let t = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < sa.len() && sa[i] == t {
            i += 1;
        }
        while j < sb.len() && sb[j] == t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// Pairs with `a_i > b_j` plus half the ties.
    pub u: f64,
    /// Two-sided, normal approximation with tie-corrected variance and
    /// continuity correction.
    pub p_value: f64,
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    check(a, 1)?;
    check(b, 1)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let rank_sum_a: f64 = ranks[..a.len()].iter().sum();
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;

    let n = n1 + n2;
    let tie_term: f64 = tie_group_sizes(&pooled).map(|t| t * t * t - t).sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let mean = n1 * n2 / 2.0;
    let p_value = if var > 0.0 {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    } else {
        1.0
    };
    Ok(MannWhitney { u, p_value })
}

fn tie_group_sizes(x: &[f64]) -> impl Iterator<Item = f64> {
    let s = sorted(x);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i + 1;
        while j < s.len() && s[j] == s[i] {
            j += 1;
        }
        sizes.push((j - i) as f64);
        i = j;
    }
    sizes.into_iter()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AndersonDarling {
    /// Standardised statistic `(A2 - 1) / sigma`; zero-centred under H0.
    pub statistic: f64,
    /// Midrank statistic `A2_akN` before standardisation.
    pub raw: f64,
}

/// Two-sample Anderson-Darling rank statistic with midrank tie handling
/// (Scholz & Stephens 1987), standardised by its exact null variance.
pub fn anderson_darling_2samp(a: &[f64], b: &[f64]) -> Result<AndersonDarling, StatsError> {
    check(a, 2)?;
    check(b, 2)?;
    let samples = [sorted(a), sorted(b)];
    let pooled = sorted(&[a, b].concat());
    let n_total = pooled.len() as f64;
    let mut distinct = pooled.clone();
    distinct.dedup();

    let mut raw = 0.0;
    let lower = |s: &[f64], z: f64| s.partition_point(|&v| v < z) as f64;
    let upper = |s: &[f64], z: f64| s.partition_point(|&v| v <= z) as f64;
    for s in &samples {
        let n_i = s.len() as f64;
        let mut inner = 0.0;
        for &z in &distinct {
            let l_j = upper(&pooled, z) - lower(&pooled, z);
            let b_j = lower(&pooled, z) + l_j / 2.0;
            let f_ij = upper(s, z) - lower(s, z);
            let m_ij = upper(s, z) - f_ij / 2.0;
            let num = (n_total * m_ij - b_j * n_i).powi(2);
            let den = b_j * (n_total - b_j) - n_total * l_j / 4.0;
            inner += l_j / n_total * num / den;
        }
        raw += inner / n_i;
    }
    raw *= (n_total - 1.0) / n_total;

    // null variance of A2_akN, k = 2 samples
    let k = 2.0;
    let h_sum: f64 = samples.iter().map(|s| 1.0 / s.len() as f64).sum();
    let n = pooled.len();
    let h: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
    let mut g = 0.0;
    for i in 1..n.saturating_sub(1) {
        let inner: f64 = (i + 1..n).map(|j| 1.0 / j as f64).sum();
        g += inner / ((n - i) as f64);
    }
    let nn = n_total;
    let a_c = (4.0 * g - 6.0) * (k - 1.0) + (10.0 - 6.0 * g) * h_sum;
    let b_c = (2.0 * g - 4.0) * k * k + 8.0 * h * k + (2.0 * g - 14.0 * h - 4.0) * h_sum - 8.0 * h + 4.0 * g - 6.0;
    let c_c = (6.0 * h + 2.0 * g - 2.0) * k * k + (4.0 * h - 4.0 * g + 6.0) * k + (2.0 * h - 6.0) * h_sum + 4.0 * h;
    let d_c = (2.0 * h + 6.0) * k * k - 4.0 * h * k;
    let sigma_sq =
        (a_c * nn.powi(3) + b_c * nn * nn + c_c * nn + d_c) / ((nn - 1.0) * (nn - 2.0) * (nn - 3.0));
    Ok(AndersonDarling { statistic: (raw - (k - 1.0)) / sigma_sq.sqrt(), raw })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CramerVonMises {
    pub statistic: f64,
    /// Asymptotic p-value (Csorgo & Faraway standardisation of T).
    pub p_value: f64,
}

/// Two-sample Cramer-von Mises criterion `T` (Anderson 1962) with average
/// ranks for ties.
pub fn cramer_von_mises_2samp(a: &[f64], b: &[f64]) -> Result<CramerVonMises, StatsError> {
    check(a, 2)?;
    check(b, 2)?;
    let (sa, sb) = (sorted(a), sorted(b));
    let (nx, ny) = (sa.len() as f64, sb.len() as f64);
    let ranks = average_ranks(&[sa.as_slice(), sb.as_slice()].concat());
    let (rx, ry) = ranks.split_at(sa.len());
    let sq = |r: &[f64]| -> f64 { r.iter().enumerate().map(|(i, &v)| (v - (i + 1) as f64).powi(2)).sum() };
    let u = nx * sq(rx) + ny * sq(ry);
    let k = nx * ny;
    let n = nx + ny;
    let t = u / (k * n) - (4.0 * k - 1.0) / (6.0 * n);

    let et = (1.0 + 1.0 / n) / 6.0;
    let vt = (n + 1.0) * (4.0 * k * n - 3.0 * (nx * nx + ny * ny) - 2.0 * k) / (45.0 * n * n * 4.0 * k);
    let tn = 1.0 / 6.0 + (t - et) / (45.0 * vt).sqrt();
    let p_value = if tn < 0.003 { 1.0 } else { (1.0 - cvm_limit_cdf(tn)).max(0.0) };
    Ok(CramerVonMises { statistic: t, p_value })
}

/// `(mean a - mean b) / s_pooled` with the unbiased pooled variance.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check(a, 2)?;
    check(b, 2)?;
    let stats = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let ss: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        (m, ss)
    };
    let ((ma, ssa), (mb, ssb)) = (stats(a), stats(b));
    let pooled = (ssa + ssb) / (a.len() + b.len() - 2) as f64;
    if pooled <= 0.0 {
        return Err(StatsError::ZeroPooledVariance);
    }
    Ok((ma - mb) / pooled.sqrt())
}

/// `(#{a > b} - #{a < b}) / (m n)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check(a, 1)?;
    check(b, 1)?;
    let (gt, lt, _) = dominance_counts(a, b);
    Ok((gt as f64 - lt as f64) / (a.len() as f64 * b.len() as f64))
}

/// Probability that a positive score exceeds a negative one, ties counted
/// half.
pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> Result<f64, StatsError> {
    check(pos, 1)?;
    check(neg, 1)?;
    let (gt, _, eq) = dominance_counts(pos, neg);
    Ok((gt as f64 + 0.5 * eq as f64) / (pos.len() as f64 * neg.len() as f64))
}

/// `sum_bins sqrt(p q)` over `n_bins` equal-width bins spanning the pooled
/// range; the top edge belongs to the last bin.
pub fn bhattacharyya_coefficient(a: &[f64], b: &[f64], n_bins: usize) -> Result<f64, StatsError> {
    if n_bins < 2 {
        return Err(StatsError::InvalidBins(n_bins));
    }
    check(a, 1)?;
    check(b, 1)?;
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let hist = |x: &[f64]| {
        let mut h = vec![0.0; n_bins];
        for &v in x {
            let i = if width > 0.0 { (((v - lo) / width) as usize).min(n_bins - 1) } else { 0 };
            h[i] += 1.0;
        }
        let n = x.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let (p, q) = (hist(a), hist(b));
    Ok(p.iter().zip(&q).map(|(x, y)| (x * y).sqrt()).sum::<f64>().min(1.0))
}
