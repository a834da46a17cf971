//! Summary statistics, Kolmogorov-Smirnov distances and kernel density
//! estimates used by the reports and the validation suite.

use crate::error::{domain, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(domain("empty sample"));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(domain("sample contains NaN"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(xs: &[f64], p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("probability {p} outside [0, 1]")));
    }
    let v = sorted(xs)?;
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(xs: &[f64]) -> Result<f64> {
    quantile(xs, 0.5)
}

/// `sup_x |F_n(x) - F(x)|` for a continuous reference CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let v = sorted(xs)?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    Ok(d)
}

/// `sup_x |F_a(x) - F_b(x)|` between two empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Gaussian kernel density on `points` equally spaced values spanning the
/// sample range padded by three bandwidths. The bandwidth follows
/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^{-1/5}`.
pub fn kde(xs: &[f64], points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if points < 2 {
        return Err(domain("a density grid needs at least two points"));
    }
    let v = sorted(xs)?;
    let n = v.len() as f64;
    let spread = if v.len() > 1 { sd(&v) } else { 0.0 };
    let iqr = quantile(&v, 0.75)? - quantile(&v, 0.25)?;
    let mut scale = if iqr > 0.0 { spread.min(iqr / 1.34) } else { spread };
    if !(scale > 0.0) {
        scale = v[0].abs().max(1.0) * 1e-3;
    }
    let h = 0.9 * scale * n.powf(-0.2);
    let (lo, hi) = (v[0] - 3.0 * h, v[v.len() - 1] + 3.0 * h);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let xs_out: Vec<f64> = (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect();
    let ys = xs_out
        .iter()
        .map(|&x| {
            // only samples within 8 bandwidths contribute
            let from = v.partition_point(|&s| s < x - 8.0 * h);
            let to = v.partition_point(|&s| s <= x + 8.0 * h);
            norm * v[from..to].iter().map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>()
        })
        .collect();
    Ok((xs_out, ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantiles_interpolate() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&xs, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&xs, 1.0).unwrap(), 4.0);
        assert_relative_eq!(median(&xs).unwrap(), 2.5);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn ks_of_identical_and_disjoint_samples() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 1000.0).collect();
        assert_eq!(ks_two_sample(&a, &b).unwrap(), 1.0);
        // uniform grid against the uniform CDF: distance 1/n
        let u: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert_relative_eq!(ks_one_sample(&u, |x| x.clamp(0.0, 1.0)).unwrap(), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn kde_integrates_to_one() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let (x, y) = kde(&xs, 400).unwrap();
        let dx = x[1] - x[0];
        let area: f64 = y.iter().sum::<f64>() * dx;
        assert!((area - 1.0).abs() < 1e-2, "{area}");
    }
}
