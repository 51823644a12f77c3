//! Agreement and hypothesis-test statistics for paired measurements.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementStats {
    pub n: usize,
    pub pearson_r2: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Bland-Altman mean of `y - x`.
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub spearman_rho: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average ranks (1-based); tied values share the mean of their ranks.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// OLS regression of `y` on `x`, Bland-Altman bias and 95% limits of
/// agreement (`bias ± 1.96 · sd(y - x)`, sample sd), and Spearman's rho.
pub fn agreement_stats(x: &[f64], y: &[f64]) -> Result<AgreementStats> {
    if x.len() != y.len() {
        return Err(Error::mismatch("agreement_stats: unequal sample sizes"));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::invalid(format!("agreement_stats needs at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("agreement_stats: non-finite sample"));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("agreement_stats: x has zero variance"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r = pearson(x, y);

    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
    let bias = mean(&diffs);
    let sd = (diffs.iter().map(|d| (d - bias) * (d - bias)).sum::<f64>() / (n - 1) as f64).sqrt();

    let spearman_rho = pearson(&average_ranks(x), &average_ranks(y));
    Ok(AgreementStats {
        n,
        pearson_r2: r * r,
        slope,
        intercept,
        bias,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
        spearman_rho,
    })
}

/// Spearman correlation with average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("spearman needs two equal-length samples of size >= 2"));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTests {
    pub t_p_value: f64,
    pub wilcoxon_p_value: f64,
}

/// Two-sided paired t-test and Wilcoxon signed-rank test of `a` vs `b`.
pub fn paired_tests(a: &[f64], b: &[f64]) -> Result<PairedTests> {
    if a.len() != b.len() {
        return Err(Error::mismatch("paired_tests: unequal sample sizes"));
    }
    if a.len() < 2 {
        return Err(Error::invalid("paired_tests needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(PairedTests { t_p_value: paired_t(&d), wilcoxon_p_value: wilcoxon_signed_rank(&d) })
}

fn paired_t(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let m = mean(d);
    let sd = (d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return if m == 0.0 { 1.0 } else { 0.0 };
    }
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Two-sided signed-rank p-value of paired differences. Zero differences are
/// dropped. Exact null distribution for up to 50 untied differences, normal
/// approximation with tie correction otherwise.
pub fn wilcoxon_signed_rank(d: &[f64]) -> f64 {
    let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return 1.0;
    }
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let r_plus: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let r_minus = total - r_plus;
    let has_ties = ranks.iter().any(|r| r.fract() != 0.0) || {
        let mut s = abs.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        s.windows(2).any(|w| w[0] == w[1])
    };

    if n <= 50 && !has_ties {
        // counts[s] = number of sign assignments with positive-rank sum s
        let max = n * (n + 1) / 2;
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        for k in 1..=n {
            for s in (k..=max).rev() {
                counts[s] += counts[s - k];
            }
        }
        let denom = 2f64.powi(n as i32);
        let r = r_plus.min(r_minus).round() as usize;
        let tail: f64 = counts[..=r].iter().sum::<f64>() / denom;
        return (2.0 * tail).min(1.0);
    }

    let nf = n as f64;
    let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let mut sorted = abs;
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    if var <= 0.0 {
        return 1.0;
    }
    let z = (r_plus.min(r_minus) - nf * (nf + 1.0) / 4.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.cdf(-z.abs())).min(1.0)
}

/// Two-sided Fisher exact test of `k1/n1` vs `k2/n2` by summing hypergeometric
/// probabilities no larger than that of the observed table.
pub fn fisher_exact(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<f64> {
    if k1 > n1 || k2 > n2 {
        return Err(Error::invalid("fisher_exact: successes exceed trials"));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("fisher_exact: empty group"));
    }
    let total = n1 + n2;
    let succ = k1 + k2;
    let ln_p = |x: u64| -> f64 { ln_binomial(succ, x) + ln_binomial(total - succ, n1 - x) - ln_binomial(total, n1) };
    let lo = succ.saturating_sub(n2);
    let hi = succ.min(n1);
    let observed = ln_p(k1);
    let p: f64 = (lo..=hi).map(ln_p).filter(|&lp| lp <= observed + 1e-7).map(f64::exp).sum();
    Ok(p.min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_agreement() {
        let x = [1.0, 2.0, 3.5, 4.0];
        let s = agreement_stats(&x, &x).unwrap();
        assert!((s.pearson_r2 - 1.0).abs() < 1e-12);
        assert_eq!(s.bias, 0.0);
        assert_eq!((s.loa_low, s.loa_high), (0.0, 0.0));
        assert!((s.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset() {
        let x = [1.0, 2.0, 3.5, 4.0];
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        let s = agreement_stats(&x, &y).unwrap();
        assert!((s.bias - 1.0).abs() < 1e-12);
        assert!((s.pearson_r2 - 1.0).abs() < 1e-12);
        assert!((s.loa_low - 1.0).abs() < 1e-12 && (s.loa_high - 1.0).abs() < 1e-12);
        assert!((s.intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn agreement_errors() {
        assert!(agreement_stats(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(agreement_stats(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [0.8, 0.9, 0.85, 0.7];
        let p = paired_tests(&a, &a).unwrap();
        assert_eq!(p.t_p_value, 1.0);
        assert_eq!(p.wilcoxon_p_value, 1.0);
    }

    #[test]
    fn paired_t_matches_scipy() {
        let a = [1.0, 2.1, 3.3, 4.0, 5.2, 6.1];
        let b = [1.1, 2.0, 3.0, 4.4, 5.0, 6.9];
        let p = paired_tests(&a, &b).unwrap();
        assert!((p.t_p_value - 0.523_367_721_065_284_5).abs() < 1e-9);
    }

    const X30: [f64; 30] = [
        2.040919, -2.555665, 0.418099, -0.56777, -0.452649, -0.215597, -2.019986, -0.231932, -0.865213, 3.323,
        0.225787, -0.352631, -0.281287, -0.668046, -1.055151, -0.390801, 0.481945, -0.238554, 0.957759, -0.199802,
        0.02426, 1.545821, 0.545106, -0.505229, -0.182839, 0.540525, 1.935088, -0.26962, -0.243559, 1.002314,
    ];
    const Y30: [f64; 30] = [
        1.897689, -2.401525, 1.159368, 0.022405, -0.106891, 0.419455, -3.134067, 0.578721, -1.045035, 2.78869,
        0.664009, 0.297642, -0.203671, -0.906249, -0.742088, -0.117175, 1.484744, 0.43515, 1.354667, 0.656014,
        0.221498, 1.382871, 1.137135, 0.08604, 0.009747, 0.449121, 2.349665, -1.216567, 0.401504, 1.547998,
    ];

    #[test]
    fn wilcoxon_exact_matches_scipy() {
        // scipy.stats.wilcoxon(x, y) -> statistic 99, p = 0.0050126127898693085
        let p = paired_tests(&X30, &Y30).unwrap();
        assert!((p.wilcoxon_p_value - 0.005_012_612_789_869_308_5).abs() < 1e-12);
        assert!((p.t_p_value - 0.009_518_906_524_640_543).abs() < 1e-9);
    }

    #[test]
    fn wilcoxon_normal_branch_matches_scipy() {
        // duplicated differences are all tied in pairs, forcing the tie-corrected
        // normal approximation
        let d: Vec<f64> = X30.iter().zip(&Y30).map(|(a, b)| a - b).collect();
        let mut dd = d.clone();
        dd.extend(&d);
        let p = wilcoxon_signed_rank(&dd);
        // scipy.stats.wilcoxon(dd, method='approx', correction=False)
        assert!((p - 1.044_740_510_266_157_6e-4).abs() < 1e-12, "{p}");
    }

    #[test]
    fn fisher_values() {
        assert!((fisher_exact(3, 70, 12, 70).unwrap() - 0.026_014_720_084_068_375).abs() < 1e-12);
        assert!((fisher_exact(5, 10, 5, 10).unwrap() - 1.0).abs() < 1e-12);
        assert!((fisher_exact(1, 10, 6, 10).unwrap() - 0.057_275_541_795_665_644).abs() < 1e-12);
        assert!(fisher_exact(3, 2, 1, 4).is_err());
    }
}
