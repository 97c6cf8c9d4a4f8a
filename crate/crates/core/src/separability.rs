//! Feature-space separability: Fisher-Bhattacharyya distance, unbiased
//! RBF-kernel MMD², and Spearman correlation with jackknife intervals.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const VAR_FLOOR: f64 = 1e-12;

/// How per-dimension distances are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbAggregation {
    #[default]
    Sum,
    Mean,
}

/// Univariate distance `(1/8)(μ0-μ1)²/v̄ + (1/2) ln(v̄ / (σ0 σ1))` with `v̄ = (σ0² + σ1²)/2`.
pub fn fb_univariate(mu0: f64, var0: f64, mu1: f64, var1: f64) -> f64 {
    let (v0, v1) = (var0.max(VAR_FLOOR), var1.max(VAR_FLOOR));
    let vbar = 0.5 * (v0 + v1);
    // log form is exactly 0 for equal variances and exactly symmetric
    0.125 * (mu0 - mu1).powi(2) / vbar + (0.5 * vbar.ln() - 0.25 * (v0.ln() + v1.ln()))
}

/// Per-dimension distances from class moments (sample variances).
pub fn fb_distance_from_moments(mu0: &Array1<f64>, var0: &Array1<f64>, mu1: &Array1<f64>, var1: &Array1<f64>) -> Result<Array1<f64>> {
    let d = mu0.len();
    if var0.len() != d || mu1.len() != d || var1.len() != d {
        return Err(Error::Dimension("class moments have different lengths".into()));
    }
    Ok(Array1::from_shape_fn(d, |k| fb_univariate(mu0[k], var0[k], mu1[k], var1[k])))
}

fn moments(x: &Array2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.nrows() < 2 {
        return Err(Error::Input(format!("a class needs at least 2 samples, got {}", x.nrows())));
    }
    let n = x.nrows() as f64;
    let mu = x.sum_axis(Axis(0)) / n;
    let var = x.rows().into_iter().fold(Array1::zeros(x.ncols()), |acc, r| {
        let c = &r - &mu;
        acc + &c * &c
    }) / (n - 1.0);
    Ok((mu, var))
}

/// Per-dimension distance summed over dimensions.
pub fn fb_distance(class0: &Array2<f64>, class1: &Array2<f64>) -> Result<f64> {
    fb_distance_with(class0, class1, FbAggregation::Sum)
}

pub fn fb_distance_with(class0: &Array2<f64>, class1: &Array2<f64>, agg: FbAggregation) -> Result<f64> {
    if class0.ncols() != class1.ncols() {
        return Err(Error::Dimension("classes have different feature widths".into()));
    }
    let (m0, v0) = moments(class0)?;
    let (m1, v1) = moments(class1)?;
    let per_dim = fb_distance_from_moments(&m0, &v0, &m1, &v1)?;
    Ok(match agg {
        FbAggregation::Sum => per_dim.sum(),
        FbAggregation::Mean => per_dim.sum() / per_dim.len() as f64,
    })
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median of pairwise Euclidean distances, zero distances excluded.
pub fn median_heuristic(pooled: &Array2<f64>) -> Result<f64> {
    let n = pooled.nrows();
    if n < 2 {
        return Err(Error::Input("median heuristic needs at least 2 points".into()));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(pooled.row(i), pooled.row(j)).sqrt();
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return Err(Error::DegenerateStats("all points are identical; bandwidth undefined".into()));
    }
    Ok(median(&mut d))
}

/// Unbiased MMD² with kernel `exp(-‖x-y‖² / (2 σ²))`. May be negative.
pub fn mmd2_unbiased(class0: &Array2<f64>, class1: &Array2<f64>, bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let (n0, n1) = (class0.nrows(), class1.nrows());
    if n0 < 2 || n1 < 2 {
        return Err(Error::Input(format!("MMD needs at least 2 samples per class, got {n0} and {n1}")));
    }
    if class0.ncols() != class1.ncols() {
        return Err(Error::Dimension("classes have different feature widths".into()));
    }
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |a: ArrayView1<f64>, b: ArrayView1<f64>| (-g * sq_dist(a, b)).exp();
    let within = |x: &Array2<f64>| {
        let n = x.nrows();
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += k(x.row(i), x.row(j));
            }
        }
        2.0 * s / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for a in class0.rows() {
        for b in class1.rows() {
            cross += k(a, b);
        }
    }
    Ok(within(class0) + within(class1) - 2.0 * cross / (n0 * n1) as f64)
}

/// Both-class statistics for one feature set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub d_fb: f64,
    pub d_fb_mean: f64,
    pub mmd2: f64,
    pub bandwidth: f64,
}

pub fn separability(class0: &Array2<f64>, class1: &Array2<f64>) -> Result<SeparabilityReport> {
    let pooled = ndarray::concatenate(Axis(0), &[class0.view(), class1.view()]).map_err(|e| Error::Dimension(e.to_string()))?;
    let bandwidth = median_heuristic(&pooled)?;
    Ok(SeparabilityReport {
        d_fb: fb_distance_with(class0, class1, FbAggregation::Sum)?,
        d_fb_mean: fb_distance_with(class0, class1, FbAggregation::Mean)?,
        mmd2: mmd2_unbiased(class0, class1, bandwidth)?,
        bandwidth,
    })
}

/// Average ranks, 1-based.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("an input has no variation".into()));
    }
    // sqrt(s * s) == s exactly, so identical rank vectors give exactly ±1
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman ρ as the Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than 2 points".into()));
    }
    pearson(&ranks(xs), &ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p: f64,
}

pub const EXACT_PERMUTATION_MAX_K: usize = 8;

/// Two-sided exact permutation p-value over all `K!` orderings of `ys`.
pub fn permutation_p_value(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let rho = spearman(xs, ys)?;
    let rx = ranks(xs);
    let mut ry = ranks(ys);
    let n = ry.len();
    let mut hits = 0u64;
    let mut total = 0u64;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut visit = |ry: &[f64]| -> Result<()> {
        total += 1;
        if pearson(&rx, ry)?.abs() >= rho.abs() - 1e-12 {
            hits += 1;
        }
        Ok(())
    };
    visit(&ry)?;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry)?;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Two-sided p-value from `t = ρ √((K-2)/(1-ρ²))` on `K-2` degrees of freedom.
pub fn t_approx_p_value(rho: f64, k: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (k - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// ρ with a jackknife 95% interval, clipped to [-1, 1], and a p-value (exact
/// permutation for K ≤ 8, t approximation above).
pub fn spearman_jackknife(xs: &[f64], ys: &[f64]) -> Result<SpearmanResult> {
    let k = xs.len();
    if k < 4 {
        return Err(Error::Protocol(format!("correlation needs at least 4 points, got {k}")));
    }
    let rho = spearman(xs, ys)?;
    let loo: Vec<f64> = (0..k)
        .map(|i| {
            let x: Vec<f64> = xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let y: Vec<f64> = ys.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            spearman(&x, &y)
        })
        .collect::<Result<_>>()?;
    let mean = loo.iter().sum::<f64>() / k as f64;
    let se = ((k as f64 - 1.0) / k as f64 * loo.iter().map(|r| (r - mean).powi(2)).sum::<f64>()).sqrt();
    let p = if k <= EXACT_PERMUTATION_MAX_K { permutation_p_value(xs, ys)? } else { t_approx_p_value(rho, k) };
    Ok(SpearmanResult {
        rho,
        ci_lo: (rho - 1.96 * se).clamp(-1.0, 1.0),
        ci_hi: (rho + 1.96 * se).clamp(-1.0, 1.0),
        p,
    })
}

/// Separability and error rates for one tested artefact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtefactPoint {
    pub artefact: u8,
    pub d_fb: f64,
    pub mmd2: f64,
    pub eer: f64,
    pub hter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub protocol: String,
    pub feature_metric: String,
    pub error_metric: String,
    pub k: usize,
    pub rho: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p: f64,
}

/// Four rows: D_FB and MMD² each against EER and HTER.
pub fn correlate_metrics(protocol: &str, points: &[ArtefactPoint]) -> Result<Vec<CorrelationRow>> {
    if points.len() < 4 {
        return Err(Error::Protocol(format!("correlation needs at least 4 tested artefacts, got {}", points.len())));
    }
    let col = |f: fn(&ArtefactPoint) -> f64| -> Vec<f64> { points.iter().map(f).collect() };
    let pairs: [(&str, Vec<f64>, &str, Vec<f64>); 4] = [
        ("d_fb", col(|p| p.d_fb), "eer", col(|p| p.eer)),
        ("d_fb", col(|p| p.d_fb), "hter", col(|p| p.hter)),
        ("mmd2", col(|p| p.mmd2), "eer", col(|p| p.eer)),
        ("mmd2", col(|p| p.mmd2), "hter", col(|p| p.hter)),
    ];
    pairs
        .into_iter()
        .map(|(xn, x, yn, y)| {
            let s = spearman_jackknife(&x, &y)?;
            Ok(CorrelationRow {
                protocol: protocol.to_string(),
                feature_metric: xn.into(),
                error_metric: yn.into(),
                k: points.len(),
                rho: s.rho,
                ci_lo: s.ci_lo,
                ci_hi: s.ci_hi,
                p: s.p,
            })
        })
        .collect()
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, standard_normal};
    use ndarray::array;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn fb_hand_cases() {
        assert!((fb_univariate(0.0, 1.0, 2.0, 1.0) - 0.5).abs() < 1e-9);
        assert!((fb_univariate(1.0, 1.0, 1.0, 4.0) - 0.5 * (1.25f64).ln()).abs() < 1e-9);
        assert!((0.5 * 1.25f64.ln() - 0.1116).abs() < 1e-4);
        assert_eq!(fb_univariate(0.3, 2.0, 0.3, 2.0), 0.0);

        // sample variance 1 in both classes, means 0 and 2
        let h = 0.5f64.sqrt();
        let a = array![[-h], [h]];
        let b = array![[2.0 - h], [2.0 + h]];
        assert!((fb_distance(&a, &b).unwrap() - 0.5).abs() < 1e-9);
        assert!(matches!(fb_distance(&array![[1.0]], &b), Err(Error::Input(_))));
    }

    #[test]
    fn fb_sums_dimensions() {
        let a = array![[0.0, 1.0], [1.0, 3.0], [2.0, 2.0]];
        let b = array![[1.0, 0.0], [3.0, 1.0], [2.0, 5.0]];
        let s = fb_distance(&a, &b).unwrap();
        let m = fb_distance_with(&a, &b, FbAggregation::Mean).unwrap();
        assert!((s - 2.0 * m).abs() < 1e-12);
    }

    #[test]
    fn median_heuristic_cases() {
        assert_eq!(median_heuristic(&array![[0.0, 0.0], [3.0, 0.0]]).unwrap(), 3.0);
        assert_eq!(median_heuristic(&array![[0.0], [1.0], [3.0]]).unwrap(), 2.0);
        assert!(matches!(median_heuristic(&array![[1.0], [1.0]]), Err(Error::DegenerateStats(_))));
        // duplicate points do not drag the median to zero
        assert_eq!(median_heuristic(&array![[0.0], [0.0], [2.0]]).unwrap(), 2.0);
    }

    #[test]
    fn median_heuristic_matches_exhaustive_oracle() {
        let mut r = rng_from(5);
        let x = Array2::from_shape_simple_fn((1000, 4), || standard_normal(&mut r));
        let mut d = Vec::new();
        for i in 0..1000 {
            for j in 0..1000 {
                if i < j {
                    let v: f64 = (0..4).map(|k| (x[[i, k]] - x[[j, k]]).powi(2)).sum::<f64>().sqrt();
                    d.push(v);
                }
            }
        }
        d.sort_by(f64::total_cmp);
        let n = d.len();
        let want = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
        assert_eq!(median_heuristic(&x).unwrap(), want);
    }

    #[test]
    fn mmd_cases() {
        let a: Array2<f64> = array![[0.0, 1.0], [1.0, 0.5], [2.0, -1.0]];
        // Identical sets are not 0 under this estimator: the cross term keeps
        // its n diagonal self-similarities while the within terms drop them.
        let bw = 1.3;
        let kk = |i: usize, j: usize| (-(0..2).map(|c| (a[[i, c]] - a[[j, c]]).powi(2)).sum::<f64>() / (2.0 * bw * bw)).exp();
        let s = kk(0, 1) + kk(0, 2) + kk(1, 2);
        let want = 4.0 * s / 6.0 - 2.0 * (2.0 * s + 3.0) / 9.0;
        let got = mmd2_unbiased(&a, &a.clone(), bw).unwrap();
        assert!((got - want).abs() < 1e-12 && got < 0.0);
        // a set of one repeated point does cancel exactly
        let p = array![[0.4, 0.1], [0.4, 0.1]];
        assert_eq!(mmd2_unbiased(&p, &p.clone(), bw).unwrap(), 0.0);

        let x = array![[0.0], [1.0]];
        let y = array![[0.5], [3.0]];
        let bw = 1.7;
        let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * bw * bw)).exp();
        let want = (k(0.0, 1.0) + k(1.0, 0.0)) / 2.0 + (k(0.5, 3.0) + k(3.0, 0.5)) / 2.0
            - 2.0 * (k(0.0, 0.5) + k(0.0, 3.0) + k(1.0, 0.5) + k(1.0, 3.0)) / 4.0;
        assert!((mmd2_unbiased(&x, &y, bw).unwrap() - want).abs() < 1e-12);
        assert!(matches!(mmd2_unbiased(&x, &y, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn mmd_far_clusters() {
        let n = 50;
        let mut r = rng_from(2);
        let a = Array2::from_shape_simple_fn((n, 2), || 1e-3 * standard_normal(&mut r));
        let b = Array2::from_shape_simple_fn((n, 2), || 100.0 + 1e-3 * standard_normal(&mut r));
        let v = mmd2_unbiased(&a, &b, 1.0).unwrap();
        assert!((1.9..=2.0).contains(&v), "{v}");
    }

    #[test]
    fn spearman_monotone() {
        let x: Vec<f64> = (1..=7).map(f64::from).collect();
        let up: Vec<f64> = x.iter().map(|v| v * v).collect();
        let s = spearman_jackknife(&x, &up).unwrap();
        assert_eq!((s.rho, s.ci_lo, s.ci_hi), (1.0, 1.0, 1.0));
        let down: Vec<f64> = x.iter().map(|v| -v.powi(3)).collect();
        let s = spearman_jackknife(&x, &down).unwrap();
        assert_eq!((s.rho, s.ci_lo, s.ci_hi), (-1.0, -1.0, -1.0));
        assert!(matches!(spearman_jackknife(&x, &[2.0; 7]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(spearman_jackknife(&x[..3], &up[..3]), Err(Error::Protocol(_))));
    }

    /// All 5040 orderings enumerated by a lexicographic successor, ρ by the
    /// rank-difference formula (valid without ties).
    fn brute_p(ys: &[f64]) -> (f64, f64) {
        let rho_of = |p: &[usize]| {
            let n = p.len() as f64;
            let d2: f64 = p.iter().enumerate().map(|(i, r)| ((i + 1) as f64 - *r as f64).powi(2)).sum();
            1.0 - 6.0 * d2 / (n * (n * n - 1.0))
        };
        let obs: Vec<usize> = ranks(ys).iter().map(|r| *r as usize).collect();
        let r_obs = rho_of(&obs);
        let mut perm: Vec<usize> = (1..=ys.len()).collect();
        let (mut hits, mut total) = (0, 0);
        loop {
            total += 1;
            if rho_of(&perm).abs() >= r_obs.abs() - 1e-12 {
                hits += 1;
            }
            let Some(i) = (0..perm.len() - 1).rev().find(|&i| perm[i] < perm[i + 1]) else { break };
            let j = (i + 1..perm.len()).rev().find(|&j| perm[j] > perm[i]).unwrap();
            perm.swap(i, j);
            perm[i + 1..].reverse();
        }
        assert_eq!(total, 5040);
        (r_obs, hits as f64 / total as f64)
    }

    #[test]
    fn exact_permutation_p_value() {
        let x: Vec<f64> = (1..=7).map(f64::from).collect();
        let y = [3.0, 1.0, 4.0, 7.0, 5.0, 2.0, 6.0];
        let s = spearman_jackknife(&x, &y).unwrap();
        let (rho, p) = brute_p(&y);
        assert!((s.rho - rho).abs() < 1e-12);
        assert_eq!(s.p, p);
        assert!(s.ci_lo <= s.rho && s.rho <= s.ci_hi);
    }

    #[test]
    fn large_k_uses_t_approximation() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 1.7).sin()).collect();
        let s = spearman_jackknife(&x, &y).unwrap();
        assert_eq!(s.p, t_approx_p_value(s.rho, 12));
        assert!((0.0..=1.0).contains(&s.p));
    }

    #[test]
    fn correlate_table() {
        let pts: Vec<ArtefactPoint> = (2..=8)
            .map(|a| {
                let e = a as f64 / 10.0;
                ArtefactPoint { artefact: a, d_fb: 10.0 - a as f64, mmd2: e, eer: e, hter: e * 0.9 }
            })
            .collect();
        let rows = correlate_metrics("inter", &pts).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].rho, 1.0);
        assert_eq!(rows[0].rho, -1.0);
        assert!(rows.iter().all(|r| r.k == 7));
        assert!(matches!(correlate_metrics("inter", &pts[..3]), Err(Error::Protocol(_))));
    }

    proptest! {
        #[test]
        fn fb_symmetric_and_invariant(
            a in proptest::collection::vec(-5.0f64..5.0, 6..20),
            b in proptest::collection::vec(-5.0f64..5.0, 6..20),
            shift in -10.0f64..10.0, scale in 0.1f64..10.0,
        ) {
            let na = a.len() / 2;
            let nb = b.len() / 2;
            let x = Array2::from_shape_vec((na, 2), a[..2 * na].to_vec()).unwrap();
            let y = Array2::from_shape_vec((nb, 2), b[..2 * nb].to_vec()).unwrap();
            let d = fb_distance(&x, &y).unwrap();
            prop_assert_eq!(d, fb_distance(&y, &x).unwrap());
            // invariance holds away from the variance floor
            let min_var = [&x, &y].iter().map(|m| moments(m).unwrap().1.fold(f64::INFINITY, |a, b| a.min(*b))).fold(f64::INFINITY, f64::min);
            proptest::prop_assume!(min_var > 1e-6);
            let t = |m: &Array2<f64>| m.mapv(|v| scale * v + shift);
            let d2 = fb_distance(&t(&x), &t(&y)).unwrap();
            prop_assert!((d - d2).abs() <= 1e-6 * (1.0 + d.abs()));
        }

        #[test]
        fn mmd_symmetric(
            a in proptest::collection::vec(-2.0f64..2.0, 4..16),
            b in proptest::collection::vec(-2.0f64..2.0, 4..16),
        ) {
            let x = Array2::from_shape_vec((a.len(), 1), a).unwrap();
            let y = Array2::from_shape_vec((b.len(), 1), b).unwrap();
            let m1 = mmd2_unbiased(&x, &y, 0.8).unwrap();
            let m2 = mmd2_unbiased(&y, &x, 0.8).unwrap();
            prop_assert!((m1 - m2).abs() <= 1e-12);
        }

        #[test]
        fn spearman_monotone_invariance(v in proptest::collection::vec(-3.0f64..3.0, 5..12)) {
            let x: Vec<f64> = (0..v.len()).map(|i| ((i * 7) % 5) as f64 + i as f64 * 0.01).collect();
            let r1 = spearman(&x, &v);
            let r2 = spearman(&x.iter().map(|a| a.exp()).collect::<Vec<_>>(), &v.iter().map(|b| b * b * b).collect::<Vec<_>>());
            match (r1, r2) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
