//! ISO/IEC 30107-3 error rates and their aggregation.
//!
//! Scores are attack probabilities. A presentation is classified as an
//! attack iff its score is `>= threshold`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bona fide scores plus attack scores per artefact id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub bona: Vec<f64>,
    pub attack: BTreeMap<u8, Vec<f64>>,
}

impl ScoreSet {
    fn attack_scores(&self, artefact: u8) -> Result<&[f64]> {
        self.attack
            .get(&artefact)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Protocol(format!("no scores for artefact {artefact}")))
    }

    pub fn apcer_bpcer(&self, artefact: u8, threshold: f64) -> Result<(f64, f64)> {
        apcer_bpcer(&self.bona, self.attack_scores(artefact)?, threshold)
    }

    pub fn d_eer(&self, artefact: u8) -> Result<(f64, f64)> {
        d_eer(&self.bona, self.attack_scores(artefact)?)
    }
}

fn nonempty(bona: &[f64], attack: &[f64]) -> Result<()> {
    if bona.is_empty() || attack.is_empty() {
        return Err(Error::Protocol(format!(
            "error rates need both classes ({} bona fide, {} attack scores)",
            bona.len(),
            attack.len()
        )));
    }
    Ok(())
}

/// `(APCER, BPCER)`: attacks scored below the threshold, bona fides at or above it.
pub fn apcer_bpcer(bona: &[f64], attack: &[f64], threshold: f64) -> Result<(f64, f64)> {
    nonempty(bona, attack)?;
    let missed = attack.iter().filter(|s| **s < threshold).count();
    let rejected = bona.iter().filter(|s| **s >= threshold).count();
    Ok((missed as f64 / attack.len() as f64, rejected as f64 / bona.len() as f64))
}

/// How the equal-error point is located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EerMethod {
    /// Discrete threshold sweep over the scores, their midpoints and one
    /// value above the maximum.
    #[default]
    Discrete,
    /// Intersection of the ROC convex hull with the diagonal.
    ConvexHull,
}

/// Candidate thresholds in ascending order: distinct scores, midpoints of
/// neighbours, and one value above the maximum.
pub fn candidate_thresholds(bona: &[f64], attack: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = bona.iter().chain(attack).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut out = Vec::with_capacity(2 * all.len() + 1);
    for (i, v) in all.iter().enumerate() {
        if i > 0 {
            out.push(0.5 * (all[i - 1] + v));
        }
        out.push(*v);
    }
    if let Some(max) = all.last() {
        // stays inside (0, 1) for probability scores
        out.push(if *max < 1.0 { 0.5 * (max + 1.0) } else { max + 1.0 });
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// One point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

struct Counter {
    bona: Vec<f64>,
    attack: Vec<f64>,
}

impl Counter {
    fn new(bona: &[f64], attack: &[f64]) -> Self {
        let mut b = bona.to_vec();
        let mut a = attack.to_vec();
        b.sort_by(f64::total_cmp);
        a.sort_by(f64::total_cmp);
        Self { bona: b, attack: a }
    }

    /// `(attacks below t, bona fides at or above t)`.
    fn counts(&self, t: f64) -> (usize, usize) {
        let missed = self.attack.partition_point(|s| *s < t);
        let rejected = self.bona.len() - self.bona.partition_point(|s| *s < t);
        (missed, rejected)
    }
}

/// APCER and BPCER at every candidate threshold.
pub fn threshold_sweep(bona: &[f64], attack: &[f64]) -> Result<Vec<SweepPoint>> {
    nonempty(bona, attack)?;
    let c = Counter::new(bona, attack);
    let (na, nb) = (attack.len() as f64, bona.len() as f64);
    Ok(candidate_thresholds(bona, attack)
        .into_iter()
        .map(|t| {
            let (m, r) = c.counts(t);
            SweepPoint { threshold: t, apcer: m as f64 / na, bpcer: r as f64 / nb }
        })
        .collect())
}

/// `(eer, threshold)` by the discrete sweep. Minimizes `|APCER - BPCER|`,
/// then `(APCER + BPCER) / 2`, then the threshold. Comparisons use exact
/// integer arithmetic on the counts.
pub fn d_eer(bona: &[f64], attack: &[f64]) -> Result<(f64, f64)> {
    nonempty(bona, attack)?;
    let c = Counter::new(bona, attack);
    let (na, nb) = (attack.len() as u128, bona.len() as u128);
    let mut best: Option<((u128, u128), f64, (usize, usize))> = None;
    for t in candidate_thresholds(bona, attack) {
        let (m, r) = c.counts(t);
        // apcer = m/na, bpcer = r/nb; scale both by na*nb
        let (a, b) = (m as u128 * nb, r as u128 * na);
        let key = (a.abs_diff(b), a + b);
        if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
            best = Some((key, t, (m, r)));
        }
    }
    let (_, t, (m, r)) = best.expect("at least one candidate");
    Ok(((m as f64 / attack.len() as f64 + r as f64 / bona.len() as f64) / 2.0, t))
}

/// `(eer, threshold)` where the lower convex hull of the (APCER, BPCER)
/// operating points crosses APCER = BPCER. The threshold is interpolated
/// linearly between the two hull vertices.
pub fn d_eer_convex_hull(bona: &[f64], attack: &[f64]) -> Result<(f64, f64)> {
    let sweep = threshold_sweep(bona, attack)?;
    // Points ordered by increasing APCER (thresholds ascending).
    let mut pts: Vec<(f64, f64, f64)> = sweep.iter().map(|p| (p.apcer, p.bpcer, p.threshold)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut hull: Vec<(f64, f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    for w in hull.windows(2) {
        let (p, q) = (w[0], w[1]);
        let (dp, dq) = (p.0 - p.1, q.0 - q.1);
        if dp <= 0.0 && dq >= 0.0 {
            let s = if dq == dp { 0.0 } else { -dp / (dq - dp) };
            let eer = p.0 + s * (q.0 - p.0);
            return Ok((eer, p.2 + s * (q.2 - p.2)));
        }
    }
    let last = hull.last().expect("nonempty sweep");
    Ok(((last.0 + last.1) / 2.0, last.2))
}

pub fn d_eer_with(bona: &[f64], attack: &[f64], method: EerMethod) -> Result<(f64, f64)> {
    match method {
        EerMethod::Discrete => d_eer(bona, attack),
        EerMethod::ConvexHull => d_eer_convex_hull(bona, attack),
    }
}

/// Mean and sample standard deviation (`n - 1`); SD is 0 for one value.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("nothing to aggregate".into()));
    }
    // constant input is reported exactly, without summation rounding
    if values.iter().all(|v| *v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Error rates for one tested artefact. `hter` is exactly `(apcer + bpcer) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtefactMetrics {
    pub apcer: f64,
    pub bpcer: f64,
    pub hter: f64,
    pub d_eer: f64,
}

pub fn artefact_metrics(bona: &[f64], attack: &[f64], threshold: f64, method: EerMethod) -> Result<ArtefactMetrics> {
    let (apcer, bpcer) = apcer_bpcer(bona, attack, threshold)?;
    let (d_eer, _) = d_eer_with(bona, attack, method)?;
    Ok(ArtefactMetrics { apcer, bpcer, hter: (apcer + bpcer) / 2.0, d_eer })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub apcer: MeanSd,
    pub bpcer: MeanSd,
    pub hter: MeanSd,
    pub d_eer: MeanSd,
}

/// Cross-artefact evaluation of one trained model. SD is across tested artefacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train_artefact: u8,
    pub mode: crate::ensemble::ThresholdMode,
    pub threshold: f64,
    pub eer_method: EerMethod,
    pub per_artefact: BTreeMap<u8, ArtefactMetrics>,
    pub aggregate: AggregateMetrics,
}

impl EvalReport {
    pub fn new(
        train_artefact: u8,
        mode: crate::ensemble::ThresholdMode,
        threshold: f64,
        eer_method: EerMethod,
        scores: &ScoreSet,
        tested: &[u8],
    ) -> Result<Self> {
        let mut per_artefact = BTreeMap::new();
        for &a in tested {
            let attack = scores.attack_scores(a)?;
            per_artefact.insert(a, artefact_metrics(&scores.bona, attack, threshold, eer_method)?);
        }
        let agg = |f: fn(&ArtefactMetrics) -> f64| -> Result<MeanSd> {
            let v: Vec<f64> = per_artefact.values().map(f).collect();
            let (mean, sd) = aggregate(&v)?;
            Ok(MeanSd { mean, sd })
        };
        let aggregate = AggregateMetrics {
            apcer: agg(|m| m.apcer)?,
            bpcer: agg(|m| m.bpcer)?,
            hter: agg(|m| m.hter)?,
            d_eer: agg(|m| m.d_eer)?,
        };
        Ok(Self { train_artefact, mode, threshold, eer_method, per_artefact, aggregate })
    }

    /// One row per tested artefact, then `mean` and `sd` rows.
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut rows: Vec<ResultRow> = self
            .per_artefact
            .iter()
            .map(|(a, m)| ResultRow {
                train_artefact: self.train_artefact,
                test_artefact: a.to_string(),
                mode: self.mode.as_str().into(),
                threshold: self.threshold,
                apcer: m.apcer,
                bpcer: m.bpcer,
                hter: m.hter,
                d_eer: m.d_eer,
            })
            .collect();
        let g = &self.aggregate;
        for (label, pick) in [("mean", (|s: &MeanSd| s.mean) as fn(&MeanSd) -> f64), ("sd", |s: &MeanSd| s.sd)] {
            rows.push(ResultRow {
                train_artefact: self.train_artefact,
                test_artefact: label.into(),
                mode: self.mode.as_str().into(),
                threshold: self.threshold,
                apcer: pick(&g.apcer),
                bpcer: pick(&g.bpcer),
                hter: pick(&g.hter),
                d_eer: pick(&g.d_eer),
            });
        }
        rows
    }
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub train_artefact: u8,
    pub test_artefact: String,
    pub mode: String,
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub hter: f64,
    pub d_eer: f64,
}

pub const RESULTS_HEADER: &str = "train_artefact,test_artefact,mode,threshold,apcer,bpcer,hter,d_eer";

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Input(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_results_json(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, rows).map_err(|e| Error::Io(e.into()))?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, sweep: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in sweep {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    /// Exhaustive oracle: every distinct score, every midpoint and +inf,
    /// counted by linear scans, compared as exact fractions.
    pub(crate) fn brute_eer(bona: &[f64], attack: &[f64]) -> f64 {
        let mut ts: Vec<f64> = bona.iter().chain(attack).copied().collect();
        let n = ts.len();
        for i in 0..n {
            for j in 0..n {
                ts.push(0.5 * (ts[i] + ts[j]));
            }
        }
        ts.push(f64::INFINITY);
        let mut best: Option<(u128, u128, usize, usize)> = None;
        for t in ts {
            let m = attack.iter().filter(|s| **s < t).count();
            let r = bona.iter().filter(|s| **s >= t).count();
            let (a, b) = (m as u128 * bona.len() as u128, r as u128 * attack.len() as u128);
            let key = (a.abs_diff(b), a + b);
            if best.is_none_or(|(d, s, _, _)| key < (d, s)) {
                best = Some((key.0, key.1, m, r));
            }
        }
        let (_, _, m, r) = best.unwrap();
        (m as f64 / attack.len() as f64 + r as f64 / bona.len() as f64) / 2.0
    }

    #[test]
    fn apcer_bpcer_cases() {
        assert_eq!(apcer_bpcer(&[0.1, 0.2], &[0.5, 0.9], 0.5).unwrap(), (0.0, 0.0));
        assert_eq!(apcer_bpcer(&[0.6], &[0.4], 0.5).unwrap(), (1.0, 1.0));
        let (a, b) = apcer_bpcer(&[0.1, 0.2, 0.7], &[0.3, 0.8, 0.9], 0.5).unwrap();
        assert_eq!((a, b), (1.0 / 3.0, 1.0 / 3.0));
        assert!(matches!(apcer_bpcer(&[], &[0.3], 0.5), Err(Error::Protocol(_))));
    }

    #[test]
    fn eer_cases() {
        assert_eq!(d_eer(&[0.1, 0.2, 0.3], &[0.6, 0.9]).unwrap().0, 0.0);
        let s = [0.2, 0.4, 0.7, 0.9];
        assert_eq!(d_eer(&s, &s).unwrap().0, 0.5);
        // The discrete sweep cannot reach APCER = BPCER below 1/2 here: the
        // only zero-gap operating points have both rates at 1/2.
        assert_eq!(d_eer(&[0.1, 0.4], &[0.3, 0.9]).unwrap(), (0.5, 0.35));
        assert_eq!(brute_eer(&[0.1, 0.4], &[0.3, 0.9]), 0.5);
        // Interpolating on the ROC convex hull gives 1/4.
        let (hull, _) = d_eer_convex_hull(&[0.1, 0.4], &[0.3, 0.9]).unwrap();
        assert!((hull - 0.25).abs() < 1e-12);
    }

    #[test]
    fn eer_threshold_tie_break() {
        // Both (0.3, 0.35] thresholds give the same rates; the midpoint wins.
        let (e, t) = d_eer(&[0.1, 0.3], &[0.4, 0.9]).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(t, 0.35);
    }

    #[test]
    fn convex_hull_bounds() {
        assert!(d_eer_convex_hull(&[0.1, 0.2], &[0.8, 0.9]).unwrap().0.abs() < 1e-12);
        let s = [0.2, 0.4, 0.7, 0.9];
        assert!((d_eer_convex_hull(&s, &s).unwrap().0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aggregate_cases() {
        assert_eq!(aggregate(&[0.3]).unwrap(), (0.3, 0.0));
        let (m, s) = aggregate(&[10.0, 20.0]).unwrap();
        assert_eq!(m, 15.0);
        assert!((s - 7.0710678118654755).abs() < 1e-12);
        assert_eq!(aggregate(&[0.2; 7]).unwrap().1, 0.0);
    }

    #[test]
    fn report_rows_and_round_trip() {
        let scores = ScoreSet {
            bona: vec![0.1, 0.2, 0.7],
            attack: BTreeMap::from([(2, vec![0.3, 0.8, 0.9]), (3, vec![0.6, 0.95])]),
        };
        let r = EvalReport::new(1, crate::ensemble::ThresholdMode::Fixed, 0.5, EerMethod::Discrete, &scores, &[2, 3]).unwrap();
        let rows = r.rows();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].test_artefact, "mean");
        for m in r.per_artefact.values() {
            assert_eq!(m.hter, (m.apcer + m.bpcer) / 2.0);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        write_results_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(RESULTS_HEADER));
        assert_eq!(read_results_csv(&p).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            bona in proptest::collection::vec(0u32..40, 1..60),
            attack in proptest::collection::vec(0u32..40, 1..60),
        ) {
            // coarse grid forces ties
            let b: Vec<f64> = bona.iter().map(|v| *v as f64 / 40.0).collect();
            let a: Vec<f64> = attack.iter().map(|v| *v as f64 / 40.0).collect();
            prop_assert_eq!(d_eer(&b, &a).unwrap().0, brute_eer(&b, &a));
        }

        #[test]
        fn rates_are_monotone(
            bona in proptest::collection::vec(0.0f64..1.0, 1..40),
            attack in proptest::collection::vec(0.0f64..1.0, 1..40),
            t1 in 0.0f64..1.0, dt in 0.0f64..1.0,
        ) {
            let (a1, b1) = apcer_bpcer(&bona, &attack, t1).unwrap();
            let (a2, b2) = apcer_bpcer(&bona, &attack, t1 + dt).unwrap();
            prop_assert!(a2 >= a1 && b2 <= b1);
            let (e, _) = d_eer(&bona, &attack).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn decisions_agree_with_rates(
            bona in proptest::collection::vec(0.0f64..1.0, 1..40),
            attack in proptest::collection::vec(0.0f64..1.0, 1..40),
        ) {
            let (a, b) = apcer_bpcer(&bona, &attack, 0.5).unwrap();
            let missed = attack.iter().filter(|p| crate::ensemble::decide([1.0 - **p, **p], 0.5).unwrap() == 0).count();
            let rejected = bona.iter().filter(|p| crate::ensemble::decide([1.0 - **p, **p], 0.5).unwrap() == 1).count();
            prop_assert_eq!(a, missed as f64 / attack.len() as f64);
            prop_assert_eq!(b, rejected as f64 / bona.len() as f64);
        }
    }
}
