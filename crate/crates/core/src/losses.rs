//! Class-balanced cross-entropy, batch contrastive loss, and their
//! combination. Everything here runs in `f64`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w0: f64,
    pub w1: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights { w0: 1.0, w1: 1.0 };

    pub fn get(&self, label: u8) -> f64 {
        if label == 0 {
            self.w0
        } else {
            self.w1
        }
    }
}

/// How class weights are derived from class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightForm {
    /// `(N0 + N1) / (2 N_c)`.
    #[default]
    Normalized,
    /// `1 / freq_c = (N0 + N1) / N_c`, twice the normalized form.
    InverseFrequency,
    /// Both weights 1.
    Unweighted,
}

/// `w_c = (n0 + n1) / (2 n_c)`.
pub fn class_weights(n0: usize, n1: usize) -> Result<ClassWeights> {
    class_weights_with(n0, n1, WeightForm::Normalized)
}

pub fn class_weights_with(n0: usize, n1: usize, form: WeightForm) -> Result<ClassWeights> {
    if n0 == 0 || n1 == 0 {
        return Err(Error::Protocol(format!("training needs both classes (bona fide {n0}, attack {n1})")));
    }
    let total = (n0 + n1) as f64;
    Ok(match form {
        WeightForm::Normalized => ClassWeights { w0: total / (2.0 * n0 as f64), w1: total / (2.0 * n1 as f64) },
        WeightForm::InverseFrequency => ClassWeights { w0: total / n0 as f64, w1: total / n1 as f64 },
        WeightForm::Unweighted => ClassWeights::UNIT,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub eps: f64,
    pub weight_form: WeightForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.1, eps: 1e-6, weight_form: WeightForm::Normalized }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("loss.lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("loss.eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

fn check_labels(labels: &[u8], m: usize) -> Result<()> {
    if labels.len() != m {
        return Err(Error::Dimension(format!("{} labels for {m} rows", labels.len())));
    }
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return Err(Error::Input(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// `-(1/M) Σ w_{y_i} log P_i[y_i]` with the probability floored at 1e-12.
pub fn balanced_ce(probs: &[[f64; 2]], labels: &[u8], weights: ClassWeights) -> Result<f64> {
    check_labels(labels, probs.len())?;
    if probs.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if let Some(p) = probs.iter().find(|p| (p[0] + p[1] - 1.0).abs() > 1e-6) {
        return Err(Error::Input(format!("probability row {p:?} does not sum to 1")));
    }
    let m = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -weights.get(y) * p[y as usize].max(LOG_FLOOR).ln())
        .sum::<f64>()
        / m)
}

/// Gradient of [`balanced_ce`] with respect to the logits that produced `probs`.
pub fn balanced_ce_logit_grad(probs: &[[f64; 2]], labels: &[u8], weights: ClassWeights) -> Vec<[f64; 2]> {
    let m = probs.len() as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let w = weights.get(y) / m;
            let mut g = [w * p[0], w * p[1]];
            g[y as usize] -= w;
            g
        })
        .collect()
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(1/M) Σ_i [ Σ_{same} ‖F_i - F_j‖² / count(y_i) - Σ_{diff} log(‖F_i - F_j‖² + ε) ]`.
pub fn contrastive(features: &Array2<f64>, labels: &[u8], eps: f64) -> Result<f64> {
    Ok(contrastive_with_grad(features, labels, eps, false)?.0)
}

/// Loss and, when requested, its gradient with respect to every feature row.
pub fn contrastive_with_grad(features: &Array2<f64>, labels: &[u8], eps: f64, grad: bool) -> Result<(f64, Option<Array2<f64>>)> {
    let m = features.nrows();
    check_labels(labels, m)?;
    if m == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if !features.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite feature".into()));
    }
    let count = [labels.iter().filter(|l| **l == 0).count() as f64, labels.iter().filter(|l| **l == 1).count() as f64];
    let mf = m as f64;
    let mut loss = 0.0;
    let mut g = grad.then(|| Array2::<f64>::zeros(features.raw_dim()));
    for i in 0..m {
        let fi = features.row(i);
        let mut pull = 0.0;
        let mut push = 0.0;
        for j in 0..m {
            let d2 = sq_dist(fi, features.row(j));
            if labels[i] == labels[j] {
                pull += d2;
            } else {
                push += (d2 + eps).ln();
            }
            // Each unordered pair appears twice in the double sum; the
            // gradient for row i collects both orientations.
            if let Some(g) = g.as_mut() {
                let coef = if labels[i] == labels[j] {
                    4.0 / (mf * count[labels[i] as usize])
                } else {
                    -4.0 / (mf * (d2 + eps))
                };
                if i != j {
                    let mut gi = g.row_mut(i);
                    gi.scaled_add(coef, &fi);
                    gi.scaled_add(-coef, &features.row(j));
                }
            }
        }
        loss += pull / count[labels[i] as usize] - push;
    }
    Ok((loss / mf, g))
}

/// Per-batch loss with all gradients the head needs.
#[derive(Debug, Clone)]
pub struct BandLoss {
    pub total: f64,
    pub ce: f64,
    pub contrastive: f64,
    pub d_logits: Vec<[f64; 2]>,
    /// `None` when λ = 0.
    pub d_features: Option<Array2<f64>>,
}

/// `balanced_ce + λ · contrastive`.
pub fn band_loss(probs: &[[f64; 2]], labels: &[u8], features: &Array2<f64>, weights: ClassWeights, cfg: &LossConfig) -> Result<f64> {
    Ok(band_loss_with_grads(probs, labels, features, weights, cfg)?.total)
}

pub fn band_loss_with_grads(
    probs: &[[f64; 2]],
    labels: &[u8],
    features: &Array2<f64>,
    weights: ClassWeights,
    cfg: &LossConfig,
) -> Result<BandLoss> {
    if features.nrows() != probs.len() {
        return Err(Error::Dimension(format!("{} feature rows for {} probability rows", features.nrows(), probs.len())));
    }
    let ce = balanced_ce(probs, labels, weights)?;
    let d_logits = balanced_ce_logit_grad(probs, labels, weights);
    if cfg.lambda == 0.0 {
        return Ok(BandLoss { total: ce, ce, contrastive: 0.0, d_logits, d_features: None });
    }
    let (c, g) = contrastive_with_grad(features, labels, cfg.eps, true)?;
    let d_features = g.map(|g| g * cfg.lambda);
    Ok(BandLoss { total: ce + cfg.lambda * c, ce, contrastive: c, d_logits, d_features })
}

/// Largest relative error of the band-loss feature gradient against central
/// differences on a random batch.
pub fn band_loss_grad_check(seed: u64) -> f64 {
    use crate::nn::gradcheck::{grad_check, random_matrix, InputOp, FD_STEP};
    use rand::Rng;

    let mut r = crate::rng::rng_from(seed);
    let (m, d) = (6, 4);
    let feats = random_matrix(&mut r, m, d, 1.0);
    let labels: Vec<u8> = (0..m).map(|i| (i % 2) as u8).collect();
    let probs: Vec<[f64; 2]> = (0..m)
        .map(|_| {
            let p = r.random_range(0.05..0.95);
            [1.0 - p, p]
        })
        .collect();
    let cfg = LossConfig::default();
    let w = class_weights(2, 4).unwrap();
    let (l1, p1) = (labels.clone(), probs.clone());
    grad_check(
        &InputOp {
            input: feats.iter().cloned().collect(),
            loss: Box::new(move |v| {
                let f = Array2::from_shape_vec((m, d), v.to_vec()).unwrap();
                band_loss(&probs, &labels, &f, w, &cfg).unwrap()
            }),
            grad: Box::new(move |v| {
                let f = Array2::from_shape_vec((m, d), v.to_vec()).unwrap();
                let g = band_loss_with_grads(&p1, &l1, &f, w, &cfg).unwrap();
                g.d_features.unwrap().iter().cloned().collect()
            }),
        },
        FD_STEP,
    )
}
