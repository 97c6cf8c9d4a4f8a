//! Per-band classification head.
//!
//! Order of operations is fixed: spectral embedding on CLS, CLS + mean-patch
//! fusion, band-adaptive dropout, LayerNorm, feature normalization, linear
//! classifier.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SpectralBand;
use crate::error::{Error, Result};
use crate::nn::{trunc_normal1, visit_array1, visit_mut_prefixed, visit_prefixed, LayerNorm, LayerNormCache, Linear, ParamSet, Real, TokenSequence};
use crate::rng::rng_from;

pub const FEAT_SIGMA_FLOOR: f64 = 1e-8;

/// Constants of the size-based dropout rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutConstants {
    pub kappa: f64,
    pub c: f64,
    pub p_max: f64,
}

impl Default for DropoutConstants {
    fn default() -> Self {
        Self { kappa: 0.5, c: 500.0, p_max: 0.2 }
    }
}

impl DropoutConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.c > 0.0 && self.p_max > 0.0 && self.p_max <= 1.0) {
            return Err(Error::Config(format!("invalid dropout constants {self:?}")));
        }
        Ok(())
    }
}

/// `min(p_max, κ·C / max(N, 1))`.
pub fn band_dropout_rate(n_eff: usize, consts: &DropoutConstants) -> f64 {
    consts.p_max.min(consts.kappa * consts.c / n_eff.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout keep-mask: 0 or `1/(1-p)` per entry. `None` means identity.
pub fn dropout_mask(dim: usize, p: f64, mode: Mode, seed: u64) -> Result<Option<Vec<f64>>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout rate {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(None);
    }
    let mut rng = rng_from(seed);
    let scale = 1.0 / (1.0 - p);
    Ok(Some((0..dim).map(|_| if rng.random::<f64>() < p { 0.0 } else { scale }).collect()))
}

pub fn apply_dropout<T: Real>(f: &Array1<T>, p: f64, mode: Mode, seed: u64) -> Result<Array1<T>> {
    Ok(match dropout_mask(f.len(), p, mode, seed)? {
        None => f.clone(),
        Some(m) => Array1::from_iter(f.iter().zip(&m).map(|(&v, &k)| v * T::lit(k))),
    })
}

/// `(F - μ) / σ` elementwise.
pub fn feature_normalize<T: Real>(f: &Array1<T>, mu: &Array1<T>, sigma: &Array1<T>) -> Result<Array1<T>> {
    if f.len() != mu.len() || f.len() != sigma.len() {
        return Err(Error::Dimension(format!("feature length {} vs stats {}/{}", f.len(), mu.len(), sigma.len())));
    }
    if let Some(i) = sigma.iter().position(|s| !(*s > T::zero())) {
        return Err(Error::DegenerateStats(format!("feature sigma[{i}] is not positive")));
    }
    Ok((f - mu) / sigma)
}

/// Training-split feature statistics: mean and population std, floored.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self { mu: Array1::zeros(dim), sigma: Array1::ones(dim) }
    }

    pub fn compute(features: &[Array1<f64>]) -> Result<Self> {
        let first = features.first().ok_or_else(|| Error::EmptyInput("no features for statistics".into()))?;
        let d = first.len();
        let n = features.len() as f64;
        let mut mu = Array1::<f64>::zeros(d);
        for f in features {
            if f.len() != d {
                return Err(Error::Dimension("ragged feature vectors".into()));
            }
            mu += f;
        }
        mu /= n;
        let mut var = Array1::<f64>::zeros(d);
        for f in features {
            let c = f - &mu;
            var += &(&c * &c);
        }
        let sigma = var.mapv(|v| (v / n).sqrt().max(FEAT_SIGMA_FLOOR));
        Ok(Self { mu, sigma })
    }
}

/// Output of the linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub logits: [f64; 2],
    pub probs: [f64; 2],
    pub pred: u8,
}

/// Stable two-way softmax; argmax ties go to class 1 (attack).
pub fn softmax2(z: [f64; 2]) -> Classification {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    let probs = [e0 / s, e1 / s];
    Classification { logits: z, probs, pred: u8::from(probs[1] >= probs[0]) }
}

/// Which head components are active. Both on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadFlags {
    /// Off: the band embedding stays at zero and receives no gradient.
    pub spe: bool,
    /// Off: the head projects CLS alone with a d×d linear map.
    pub token_fusion: bool,
}

impl Default for HeadFlags {
    fn default() -> Self {
        Self { spe: true, token_fusion: true }
    }
}

/// One band's head. Only the tensors visited by [`ParamSet`] are trained;
/// `p_k` and the feature statistics are fixed per run.
#[derive(Debug, Clone, PartialEq)]
pub struct BandHeadParams<T: Real> {
    pub band: SpectralBand,
    pub flags: HeadFlags,
    pub e_k: Array1<T>,
    pub ln_spe: LayerNorm<T>,
    pub fuse: Linear<T>,
    pub ln_fuse: LayerNorm<T>,
    pub cls: Linear<T>,
    pub p_k: f64,
    pub feat_mu: Array1<T>,
    pub feat_sigma: Array1<T>,
}

/// Intermediate values for [`BandHeadParams::backward`].
#[derive(Debug, Clone)]
pub struct HeadCache<T: Real> {
    n_patches: usize,
    spe: LayerNormCache<T>,
    concat: Array2<T>,
    mask: Option<Vec<f64>>,
    fuse_ln: LayerNormCache<T>,
    f_norm: Array2<T>,
}

/// Forward outputs of a head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<T: Real> {
    /// After the fusion LayerNorm, before feature normalization.
    pub features: Array1<T>,
    pub f_norm: Array1<T>,
    pub class: Classification,
}

impl<T: Real> BandHeadParams<T> {
    /// Identity LayerNorms, zero biases, truncated-normal projections and band
    /// embedding (zero when SPE is off), identity feature statistics.
    ///
    /// Each tensor draws from its own child stream, so switching a flag never
    /// changes the initial values of the other tensors.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, band: SpectralBand, dim: usize, flags: HeadFlags, p_k: f64) -> Self {
        let (s_e, s_fuse, s_cls): (u64, u64, u64) = (rng.random(), rng.random(), rng.random());
        let e_k = if flags.spe {
            trunc_normal1(&mut rng_from(s_e), dim, 0.02)
        } else {
            Array1::zeros(dim)
        };
        let fuse_in = if flags.token_fusion { 2 * dim } else { dim };
        Self {
            band,
            flags,
            e_k,
            ln_spe: LayerNorm::new(dim),
            fuse: Linear::init(&mut rng_from(s_fuse), dim, fuse_in),
            ln_fuse: LayerNorm::new(dim),
            cls: Linear::init(&mut rng_from(s_cls), 2, dim),
            p_k,
            feat_mu: Array1::zeros(dim),
            feat_sigma: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.e_k.len()
    }

    pub fn set_feature_stats(&mut self, stats: &FeatureStats) -> Result<()> {
        if stats.mu.len() != self.dim() || stats.sigma.len() != self.dim() {
            return Err(Error::Dimension("feature statistics do not match the head width".into()));
        }
        if stats.sigma.iter().any(|s| !(*s >= FEAT_SIGMA_FLOOR)) {
            return Err(Error::DegenerateStats("feature sigma below floor".into()));
        }
        self.feat_mu = stats.mu.mapv(T::lit);
        self.feat_sigma = stats.sigma.mapv(T::lit);
        Ok(())
    }

    /// `LayerNorm(cls + E_k)`.
    pub fn spe_inject(&self, cls: &Array1<T>) -> Result<Array1<T>> {
        Ok(self.spe_inject_cached(cls)?.0.row(0).to_owned())
    }

    fn spe_inject_cached(&self, cls: &Array1<T>) -> Result<(Array2<T>, LayerNormCache<T>)> {
        if cls.len() != self.dim() {
            return Err(Error::Dimension(format!("CLS length {} vs head width {}", cls.len(), self.dim())));
        }
        let x = (cls + &self.e_k).insert_axis(Axis(0));
        Ok(self.ln_spe.forward(&x))
    }

    /// `W_f [cls_spe ; mean(patches)] + b_f`, or `W_f cls_spe + b_f` without fusion.
    pub fn token_fuse(&self, cls_spe: &Array1<T>, patches: &Array2<T>) -> Result<Array1<T>> {
        let concat = self.concat(cls_spe, patches)?;
        Ok(self.fuse.forward(&concat).row(0).to_owned())
    }

    fn concat(&self, cls_spe: &Array1<T>, patches: &Array2<T>) -> Result<Array2<T>> {
        let d = self.dim();
        if patches.nrows() == 0 {
            return Err(Error::Dimension("token fusion needs at least one patch token".into()));
        }
        if patches.ncols() != d || cls_spe.len() != d {
            return Err(Error::Dimension("token width does not match the head".into()));
        }
        if !self.flags.token_fusion {
            return Ok(cls_spe.clone().insert_axis(Axis(0)));
        }
        let mean = patches.sum_axis(Axis(0)) / T::lit(patches.nrows() as f64);
        let mut out = Array2::zeros((1, 2 * d));
        out.slice_mut(s![0, ..d]).assign(cls_spe);
        out.slice_mut(s![0, d..]).assign(&mean);
        Ok(out)
    }

    pub fn classify(&self, f_norm: &Array1<T>) -> Result<Classification> {
        if f_norm.len() != self.dim() {
            return Err(Error::Dimension("feature width does not match the classifier".into()));
        }
        let z = self.cls.forward(&f_norm.clone().insert_axis(Axis(0)));
        Ok(softmax2([z[[0, 0]].as_f64(), z[[0, 1]].as_f64()]))
    }

    pub fn forward(&self, tokens: &TokenSequence<T>, mode: Mode, seed: u64) -> Result<HeadOutput<T>> {
        Ok(self.forward_cached(tokens, mode, seed)?.0)
    }

    pub fn forward_cached(&self, tokens: &TokenSequence<T>, mode: Mode, seed: u64) -> Result<(HeadOutput<T>, HeadCache<T>)> {
        let t = tokens.tokens();
        let cls = t.row(0).to_owned();
        let patches = t.slice(s![1.., ..]).to_owned();
        let (c, spe) = self.spe_inject_cached(&cls)?;
        let concat = self.concat(&c.row(0).to_owned(), &patches)?;
        let mut u = self.fuse.forward(&concat);
        let mask = dropout_mask(self.dim(), self.p_k, mode, seed)?;
        if let Some(m) = &mask {
            u.iter_mut().zip(m).for_each(|(v, &k)| *v *= T::lit(k));
        }
        let (g, fuse_ln) = self.ln_fuse.forward(&u);
        let features = g.row(0).to_owned();
        let f_norm = feature_normalize(&features, &self.feat_mu, &self.feat_sigma)?;
        let class = self.classify(&f_norm)?;
        let cache = HeadCache {
            n_patches: patches.nrows(),
            spe,
            concat,
            mask,
            fuse_ln,
            f_norm: f_norm.clone().insert_axis(Axis(0)),
        };
        Ok((HeadOutput { features, f_norm, class }, cache))
    }

    /// Reverse pass given `dL/dlogits` and any extra `dL/dF_norm` (from the
    /// contrastive term). Returns head gradients and `dL/dtokens`.
    pub fn backward(&self, cache: &HeadCache<T>, d_logits: [T; 2], d_fnorm: Option<&Array1<T>>) -> (Self, Array2<T>) {
        let d = self.dim();
        let dz = Array2::from_shape_vec((1, 2), d_logits.to_vec()).expect("1x2");
        let (mut dfn, g_cls) = self.cls.backward(&cache.f_norm, &dz);
        if let Some(extra) = d_fnorm {
            dfn.row_mut(0).scaled_add(T::one(), extra);
        }
        let dg = &dfn / &self.feat_sigma;
        let (mut du, g_ln_fuse) = self.ln_fuse.backward(&cache.fuse_ln, &dg);
        if let Some(m) = &cache.mask {
            du.iter_mut().zip(m).for_each(|(v, &k)| *v *= T::lit(k));
        }
        let (dconcat, g_fuse) = self.fuse.backward(&cache.concat, &du);
        let dc = dconcat.slice(s![.., ..d]).to_owned();
        let (ds, g_ln_spe) = self.ln_spe.backward(&cache.spe, &dc);
        let mut dtokens = Array2::zeros((cache.n_patches + 1, d));
        dtokens.row_mut(0).assign(&ds.row(0));
        if self.flags.token_fusion {
            let dm = dconcat.slice(s![0, d..]).mapv(|v| v / T::lit(cache.n_patches as f64));
            for mut r in dtokens.rows_mut().into_iter().skip(1) {
                r.assign(&dm);
            }
        }
        let g_e = if self.flags.spe { ds.row(0).to_owned() } else { Array1::zeros(d) };
        let grads = Self {
            band: self.band,
            flags: self.flags,
            e_k: g_e,
            ln_spe: g_ln_spe,
            fuse: g_fuse,
            ln_fuse: g_ln_fuse,
            cls: g_cls,
            p_k: 0.0,
            feat_mu: Array1::zeros(d),
            feat_sigma: Array1::zeros(d),
        };
        (grads, dtokens)
    }

    /// Every tensor, trainable or not, under its checkpoint name.
    pub fn visit_all(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        let prefix = format!("head.band{}", self.band.nm());
        visit_prefixed(self, &prefix, f);
        let p = Array1::from_elem(1, T::lit(self.p_k));
        visit_array1(&format!("{prefix}.p_k"), &p, f);
        visit_array1(&format!("{prefix}.feat_mu"), &self.feat_mu, f);
        visit_array1(&format!("{prefix}.feat_sigma"), &self.feat_sigma, f);
    }
}

impl<T: Real> ParamSet<T> for BandHeadParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_array1("e_k", &self.e_k, f);
        visit_prefixed(&self.ln_spe, "ln_spe", f);
        visit_prefixed(&self.fuse, "fuse", f);
        visit_prefixed(&self.ln_fuse, "ln_fuse", f);
        visit_prefixed(&self.cls, "cls", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        f("e_k", self.e_k.as_slice_mut().expect("standard layout"));
        visit_mut_prefixed(&mut self.ln_spe, "ln_spe", f);
        visit_mut_prefixed(&mut self.fuse, "fuse", f);
        visit_mut_prefixed(&mut self.ln_fuse, "ln_fuse", f);
        visit_mut_prefixed(&mut self.cls, "cls", f);
    }
}

/// Gradient check of every head tensor and of the token input, in `f64`,
/// in train mode with a fixed dropout mask. The probe loss is a random
/// weighting of logits and normalized features so that every path is live.
pub fn head_grad_check(seed: u64, flags: HeadFlags) -> Vec<(String, f64)> {
    use crate::nn::gradcheck::{grad_check, grad_check_by_tensor, random_matrix, InputOp, ParamOp, FD_STEP};
    use crate::rng::standard_normal;

    let (d, n) = (6, 4);
    let mut r = rng_from(seed);
    let mut head = BandHeadParams::<f64>::init(&mut r, SpectralBand::NM850, d, flags, 0.2);
    head.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x = 0.5 * standard_normal(&mut r)));
    if !flags.spe {
        head.e_k.fill(0.0);
    }
    head.feat_mu = Array1::from_shape_simple_fn(d, || 0.1 * standard_normal(&mut r));
    head.feat_sigma = Array1::from_shape_simple_fn(d, || 0.5 + r.random::<f64>());
    let tokens = TokenSequence(random_matrix(&mut r, n + 1, d, 1.0));
    let wz = [standard_normal(&mut r), standard_normal(&mut r)];
    let wf = Array1::from_shape_simple_fn(d, || standard_normal(&mut r));
    let dropout_seed = 99;

    let probe = {
        let (tokens, wf) = (tokens.clone(), wf.clone());
        move |h: &BandHeadParams<f64>| {
            let o = h.forward(&tokens, Mode::Train, dropout_seed).unwrap();
            wz[0] * o.class.logits[0] + wz[1] * o.class.logits[1] + o.f_norm.dot(&wf)
        }
    };
    let grad = {
        let (tokens, wf) = (tokens.clone(), wf.clone());
        move |h: &BandHeadParams<f64>| {
            let (_, c) = h.forward_cached(&tokens, Mode::Train, dropout_seed).unwrap();
            h.backward(&c, wz, Some(&wf)).0
        }
    };
    let mut report = grad_check_by_tensor(
        &ParamOp { params: head.clone(), loss: Box::new(probe), grad: Box::new(grad) },
        FD_STEP,
    );

    // A frozen band embedding has a deliberately zero gradient.
    report.retain(|(name, _)| flags.spe || name != "e_k");
    let shape = (n + 1, d);
    let h1 = head.clone();
    let wf1 = wf.clone();
    let input = grad_check(
        &InputOp {
            input: tokens.0.iter().cloned().collect(),
            loss: Box::new(move |v| {
                let t = TokenSequence(Array2::from_shape_vec(shape, v.to_vec()).unwrap());
                let o = head.forward(&t, Mode::Train, dropout_seed).unwrap();
                wz[0] * o.class.logits[0] + wz[1] * o.class.logits[1] + o.f_norm.dot(&wf)
            }),
            grad: Box::new(move |v| {
                let t = TokenSequence(Array2::from_shape_vec(shape, v.to_vec()).unwrap());
                let (_, c) = h1.forward_cached(&t, Mode::Train, dropout_seed).unwrap();
                h1.backward(&c, wz, Some(&wf1)).1.iter().cloned().collect()
            }),
        },
        FD_STEP,
    );
    report.push(("tokens".into(), input));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assume, proptest};

    fn identity_head(d: usize, flags: HeadFlags) -> BandHeadParams<f64> {
        let mut r = rng_from(0);
        let mut h = BandHeadParams::<f64>::init(&mut r, SpectralBand::NM800, d, flags, 0.0);
        h.e_k.fill(0.0);
        h
    }

    #[test]
    fn dropout_rate_table() {
        let c = DropoutConstants::default();
        assert_eq!(band_dropout_rate(0, &c), 0.2);
        assert_eq!(band_dropout_rate(1250, &c), 0.2);
        assert_eq!(band_dropout_rate(2500, &c), 0.1);
        assert_eq!(band_dropout_rate(5000, &c), 0.05);
    }

    #[test]
    fn spe_hand_cases() {
        let h = identity_head(2, HeadFlags::default());
        let out = h.spe_inject(&Array1::from(vec![1.0, -1.0])).unwrap();
        // std is sqrt(1 + eps) with eps inside the root
        let s = (1.0f64 + 1e-5).sqrt();
        assert_abs_diff_eq!(out[0], 1.0 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], -1.0 / s, epsilon = 1e-12);

        let mut h = identity_head(2, HeadFlags::default());
        h.e_k = Array1::from(vec![0.0, 2.0]);
        let out = h.spe_inject(&Array1::from(vec![2.0, 0.0])).unwrap();
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.0, epsilon = 1e-12);

        let mut h = identity_head(3, HeadFlags::default());
        h.e_k.fill(0.7);
        h.ln_spe.beta = Array1::from(vec![0.1, 0.2, 0.3]);
        let out = h.spe_inject(&Array1::from_elem(3, 4.0)).unwrap();
        assert_eq!(out, h.ln_spe.beta);
    }

    #[test]
    fn token_fuse_hand_cases() {
        let mut h = identity_head(2, HeadFlags::default());
        h.fuse.weight = ndarray::array![[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]];
        h.fuse.bias.fill(0.0);
        let c = Array1::from(vec![0.3, -0.4]);
        let patches = ndarray::array![[0.3, -0.4], [0.3, -0.4], [0.3, -0.4]];
        assert_eq!(h.token_fuse(&c, &patches).unwrap(), &c * 2.0);

        // W_f = 0 keeps only the bias
        h.fuse.weight.fill(0.0);
        h.fuse.bias = Array1::from(vec![5.0, 6.0]);
        assert_eq!(h.token_fuse(&c, &patches).unwrap(), h.fuse.bias);

        // mean patch of (1,0),(0,1) lands in the second half of the concatenation
        h.fuse.weight = ndarray::array![[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        h.fuse.bias.fill(0.0);
        let out = h.token_fuse(&c, &ndarray::array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(out, Array1::from(vec![0.5, 0.5]));

        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(h.token_fuse(&c, &empty), Err(Error::Dimension(_))));
    }

    #[test]
    fn cls_only_fusion_is_square() {
        let h = identity_head(4, HeadFlags { spe: true, token_fusion: false });
        assert_eq!(h.fuse.weight.dim(), (4, 4));
        let full = identity_head(4, HeadFlags::default());
        assert_eq!(full.fuse.weight.dim(), (4, 8));
    }

    #[test]
    fn dropout_modes() {
        let f = Array1::from_shape_fn(16, |i| i as f64 + 1.0);
        assert_eq!(apply_dropout(&f, 0.2, Mode::Eval, 1).unwrap(), f);
        assert_eq!(apply_dropout(&f, 0.0, Mode::Train, 1).unwrap(), f);
        assert!(matches!(apply_dropout(&f, 1.0, Mode::Train, 1), Err(Error::Parameter(_))));
        assert_eq!(apply_dropout(&f, 0.3, Mode::Train, 5).unwrap(), apply_dropout(&f, 0.3, Mode::Train, 5).unwrap());
    }

    #[test]
    fn dropout_statistics() {
        let n = 100_000;
        let mut r = rng_from(3);
        let f = Array1::from_shape_simple_fn(n, || 1.0 + r.random::<f64>());
        let out = apply_dropout(&f, 0.2, Mode::Train, 11).unwrap();
        let zeros = out.iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.2).abs() < 0.01, "{zeros}");
        let survivors: Vec<f64> = out.iter().zip(&f).filter(|(o, _)| **o != 0.0).map(|(o, i)| o / i).collect();
        let ratio = survivors.iter().sum::<f64>() / survivors.len() as f64;
        assert!((ratio * 0.8 - 1.0).abs() < 0.01, "{ratio}");
        let kept_mean = out.sum() / f.sum();
        assert!((kept_mean - 1.0).abs() < 0.01, "{kept_mean}");
    }

    #[test]
    fn feature_normalize_cases() {
        let f = Array1::from(vec![3.0, 5.0]);
        let mu = Array1::from(vec![1.0, 1.0]);
        let sigma = Array1::from(vec![2.0, 2.0]);
        assert_eq!(feature_normalize(&f, &mu, &sigma).unwrap(), Array1::from(vec![1.0, 2.0]));
        assert_eq!(feature_normalize(&mu, &mu, &sigma).unwrap(), Array1::<f64>::zeros(2));
        let zero = Array1::from(vec![1.0, 0.0]);
        assert!(matches!(feature_normalize(&f, &mu, &zero), Err(Error::DegenerateStats(_))));
    }

    #[test]
    fn classify_cases() {
        let mut h = identity_head(3, HeadFlags::default());
        h.cls.weight.fill(0.0);
        h.cls.bias.fill(0.0);
        let f = Array1::from(vec![1.0, 2.0, 3.0]);
        let c = h.classify(&f).unwrap();
        assert_eq!(c.probs, [0.5, 0.5]);
        assert_eq!(c.pred, 1);

        h.cls.bias = Array1::from(vec![10.0, -10.0]);
        assert_eq!(h.classify(&f).unwrap().pred, 0);

        let c = softmax2([0.0, 3.0f64.ln()]);
        assert_abs_diff_eq!(c.probs[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(c.probs[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn eval_forward_matches_component_composition() {
        let mut r = rng_from(8);
        let mut h = BandHeadParams::<f64>::init(&mut r, SpectralBand::NM870, 4, HeadFlags::default(), 0.2);
        h.feat_mu = Array1::from(vec![0.1, -0.2, 0.0, 0.3]);
        h.feat_sigma = Array1::from(vec![1.5, 0.5, 1.0, 2.0]);
        let tokens = TokenSequence(Array2::from_shape_fn((5, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0));
        let out = h.forward(&tokens, Mode::Eval, 0).unwrap();

        let t = tokens.tokens();
        let c = h.spe_inject(&t.row(0).to_owned()).unwrap();
        let u = h.token_fuse(&c, &t.slice(s![1.., ..]).to_owned()).unwrap();
        let g = h.ln_fuse.forward(&u.insert_axis(Axis(0))).0.row(0).to_owned();
        let fn_ = feature_normalize(&g, &h.feat_mu, &h.feat_sigma).unwrap();
        assert_eq!(out.features, g);
        assert_eq!(out.f_norm, fn_);
        assert_eq!(out.class, h.classify(&fn_).unwrap());
    }

    #[test]
    fn dropout_precedes_layer_norm_and_normalization() {
        // Dropout sits between fusion and the LayerNorm, so the dropped
        // pre-norm entries are not zero after it: if dropout ran after
        // feature normalization the masked entries of F_norm would be exactly 0.
        let mut r = rng_from(4);
        let mut h = BandHeadParams::<f64>::init(&mut r, SpectralBand::NM830, 16, HeadFlags::default(), 0.2);
        h.feat_mu.fill(0.25);
        let tokens = TokenSequence(Array2::from_shape_fn((5, 16), |(i, j)| ((i + 2 * j) % 7) as f64));
        let (out, cache) = h.forward_cached(&tokens, Mode::Train, 17).unwrap();
        let mask = cache.mask.clone().expect("train mode with p > 0 has a mask");
        assert!(mask.contains(&0.0));
        for (v, m) in out.f_norm.iter().zip(&mask) {
            if *m == 0.0 {
                assert!(*v != 0.0);
            }
        }
        let ln = out.features.iter().sum::<f64>() / 16.0;
        assert!(ln.abs() < 1e-9, "features are LayerNorm outputs");
    }

    #[test]
    fn head_gradients() {
        for flags in [
            HeadFlags::default(),
            HeadFlags { spe: false, token_fusion: true },
            HeadFlags { spe: true, token_fusion: false },
        ] {
            for (name, e) in head_grad_check(21, flags) {
                assert!(e <= 1e-3, "{name} {flags:?}: {e}");
            }
        }
    }

    #[test]
    fn spe_off_gives_zero_embedding_gradient() {
        let flags = HeadFlags { spe: false, token_fusion: true };
        let mut r = rng_from(1);
        let h = BandHeadParams::<f64>::init(&mut r, SpectralBand::NM800, 4, flags, 0.0);
        assert_eq!(h.e_k, Array1::<f64>::zeros(4));
        let tokens = TokenSequence(Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64));
        let (_, c) = h.forward_cached(&tokens, Mode::Eval, 0).unwrap();
        let (g, _) = h.backward(&c, [1.0, -1.0], None);
        assert_eq!(g.e_k, Array1::<f64>::zeros(4));
    }

    #[test]
    fn checkpoint_names() {
        let mut r = rng_from(1);
        let h = BandHeadParams::<f32>::init(&mut r, SpectralBand::NM980, 4, HeadFlags::default(), 0.1);
        let mut names = Vec::new();
        h.visit_all(&mut |n, _, _| names.push(n.to_string()));
        for want in [
            "head.band980.e_k",
            "head.band980.ln_spe.weight",
            "head.band980.fuse.weight",
            "head.band980.ln_fuse.bias",
            "head.band980.cls.bias",
            "head.band980.p_k",
            "head.band980.feat_mu",
            "head.band980.feat_sigma",
        ] {
            assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
        }
    }

    #[test]
    fn feature_stats_floor() {
        let f = vec![Array1::from(vec![1.0, 2.0]), Array1::from(vec![3.0, 2.0])];
        let s = FeatureStats::compute(&f).unwrap();
        assert_eq!(s.mu, Array1::from(vec![2.0, 2.0]));
        assert_eq!(s.sigma, Array1::from(vec![1.0, FEAT_SIGMA_FLOOR]));
    }

    proptest! {
        #[test]
        fn probabilities_are_a_distribution(z0 in -50.0f64..50.0, z1 in -50.0f64..50.0) {
            let c = softmax2([z0, z1]);
            prop_assert!((c.probs[0] + c.probs[1] - 1.0).abs() <= 1e-6);
            prop_assert!(c.probs[0] > 0.0 && c.probs[1] > 0.0);
        }

        #[test]
        fn layer_norm_standardizes(v in proptest::collection::vec(-10.0f64..10.0, 2..32)) {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
            prop_assume!(var >= 1.0);
            let ln = LayerNorm::<f64>::new(v.len());
            let (_, cache) = ln.forward(&Array2::from_shape_vec((1, v.len()), v.clone()).unwrap());
            let x = cache.normalized().row(0).to_owned();
            let m = x.sum() / x.len() as f64;
            let sd = (x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            prop_assert!(m.abs() < 1e-5);
            // eps inside the root shrinks the std slightly below 1
            prop_assert!((sd - (var / (var + 1e-5)).sqrt()).abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-5);
        }
    }
}
