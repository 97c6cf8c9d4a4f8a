//! Cross-artefact experiments: train every band on bona fide plus one attack
//! instrument, weight the bands on the development split, and evaluate the
//! fused detector on the instruments it never saw. Also the ablation sweep
//! and the leakage audit that accompanies every run.

pub mod adam;
pub mod model;
pub mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::{Adam, AdamConfig};
pub use model::{NamedTensors, PadModel, SampleScore};
pub use train::{batch_ranges, train_band, BandData, BandTrainResult, StepLoss, TrainSettings};

use crate::data::{compute_band_stats, BandStats, Dataset, SpectralBand, SpectralSample, Split};
use crate::ensemble::{band_accuracy, band_weights, EnsembleWeights, ThresholdMode};
use crate::error::{Error, Result};
use crate::head::{DropoutConstants, HeadFlags};
use crate::losses::{ClassWeights, LossConfig, WeightForm};
use crate::metrics::{artefact_metrics, d_eer_with, threshold_sweep, ArtefactMetrics, EerMethod, EvalReport, ScoreSet, SweepPoint};
use crate::nn::{ViTConfig, ViTParams};
use crate::rng::{self, STREAM_INIT};

/// A component that an ablation run removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    Spe,
    TokenFusion,
    BalancedCe,
    Contrastive,
    BandDropout,
    FeatNorm,
}

impl Toggle {
    pub const ALL: [Toggle; 6] =
        [Toggle::Spe, Toggle::TokenFusion, Toggle::BalancedCe, Toggle::Contrastive, Toggle::BandDropout, Toggle::FeatNorm];

    pub fn as_str(self) -> &'static str {
        match self {
            Toggle::Spe => "spe",
            Toggle::TokenFusion => "token_fusion",
            Toggle::BalancedCe => "balanced_ce",
            Toggle::Contrastive => "contrastive",
            Toggle::BandDropout => "band_dropout",
            Toggle::FeatNorm => "feat_norm",
        }
    }
}

impl fmt::Display for Toggle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Toggle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Toggle::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation toggle {s:?}")))
    }
}

/// Training section of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub train_artefact: u8,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Components removed from the model or loss.
    pub ablation: BTreeSet<Toggle>,
    pub augment: bool,
    /// Laplacian-variance threshold of the quality filter (strict `>`).
    pub qc_threshold: f64,
    /// Largest allowed saturated-pixel fraction (strict `<`).
    pub qc_saturation: f64,
    pub dropout: DropoutConstants,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            train_artefact: 1,
            epochs: 10,
            batch_size: 32,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            ablation: BTreeSet::new(),
            augment: true,
            qc_threshold: 100.0,
            qc_saturation: 0.05,
            dropout: DropoutConstants::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps, weight_decay: self.weight_decay }
    }

    pub fn removed(&self, t: Toggle) -> bool {
        self.ablation.contains(&t)
    }

    pub fn head_flags(&self) -> HeadFlags {
        HeadFlags { spe: !self.removed(Toggle::Spe), token_fusion: !self.removed(Toggle::TokenFusion) }
    }
}

/// Evaluation section: not part of the configuration hash, since it does not
/// change the trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold_mode: ThresholdMode,
    /// Defaults to every attack artefact in the test split except the training one.
    pub test_artefacts: Option<BTreeSet<u8>>,
    pub eer_method: EerMethod,
}

/// Everything that determines a run, given the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Experiment {
    pub seed: u64,
    pub model: ViTConfig,
    pub train: ProtocolConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.adam().validate()?;
        self.train.dropout.validate()?;
        let t = &self.train;
        if !(1..=8).contains(&t.train_artefact) {
            return Err(Error::Config(format!("train artefact {} outside 1..=8", t.train_artefact)));
        }
        if t.batch_size < 2 {
            return Err(Error::Config(format!("batch size {} < 2: the contrastive term needs pairs", t.batch_size)));
        }
        if !(t.qc_saturation > 0.0 && t.qc_saturation <= 1.0) || !t.qc_threshold.is_finite() {
            return Err(Error::Config("invalid quality-control settings".into()));
        }
        if let Some(tests) = &self.eval.test_artefacts {
            if tests.is_empty() {
                return Err(Error::Config("eval.test_artefacts is empty".into()));
            }
            if let Some(a) = tests.iter().find(|a| !(1..=8).contains(*a)) {
                return Err(Error::Config(format!("test artefact {a} outside 1..=8")));
            }
            if tests.contains(&t.train_artefact) {
                return Err(Error::Config(format!("test artefacts include the training artefact {}", t.train_artefact)));
            }
        }
        Ok(())
    }

    /// SHA-256 over the seed, model, training and loss settings.
    pub fn config_hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(&(self.seed, &self.model, &self.train, &self.loss)).expect("serializable");
        Sha256::digest(&json).into()
    }

    /// Training settings after folding in the ablation toggles.
    pub fn settings(&self) -> TrainSettings {
        let t = &self.train;
        let mut loss = self.loss;
        if t.removed(Toggle::BalancedCe) {
            loss.weight_form = WeightForm::Unweighted;
        }
        if t.removed(Toggle::Contrastive) {
            loss.lambda = 0.0;
        }
        TrainSettings {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: t.adam(),
            augment: t.augment,
            flags: t.head_flags(),
            loss,
            band_dropout: !t.removed(Toggle::BandDropout),
            dropout: t.dropout,
            feat_norm: !t.removed(Toggle::FeatNorm),
            seed: self.seed,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Mask every band image that fails the configured quality filter.
pub fn apply_quality_control(dataset: &mut Dataset, cfg: &ProtocolConfig) -> usize {
    dataset.apply_quality_control(cfg.qc_threshold, cfg.qc_saturation)
}

/// Counts of leakage violations. A clean run has all counts at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LeakageAudit {
    /// Identities shared between the test split and the train or dev splits.
    pub shared_identities: usize,
    /// Test-split samples touched while fitting statistics, heads or weights.
    pub test_reads_during_training: usize,
    /// Train- or dev-split samples touched during evaluation.
    pub fit_reads_during_eval: usize,
}

impl LeakageAudit {
    pub fn violations(&self) -> usize {
        self.shared_identities + self.test_reads_during_training + self.fit_reads_during_eval
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

/// Identities that occur both in the test split and in train or dev.
pub fn shared_test_identities(dataset: &Dataset) -> usize {
    let m = dataset.manifest();
    let test = m.identities(Split::Test);
    let fit: BTreeSet<&str> = m.identities(Split::Train).union(&m.identities(Split::Dev)).copied().collect();
    test.intersection(&fit).count()
}

fn reads_since(dataset: &Dataset, from: usize, splits: &[Split]) -> usize {
    dataset.access_log().entries()[from..].iter().filter(|e| splits.contains(&e.split)).count()
}

/// Per-band summary kept in the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRecord {
    pub band_nm: u16,
    pub n_bona: usize,
    pub n_attack: usize,
    pub p_k: f64,
    pub class_weights: ClassWeights,
    pub dev_loss: Vec<f64>,
    pub selected_epoch: usize,
    pub dev_accuracy: f64,
}

impl BandRecord {
    pub fn selected_dev_loss(&self) -> f64 {
        self.dev_loss[self.selected_epoch]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: Experiment,
    pub config_hash: String,
    pub dataset_hash: String,
    pub bands: Vec<BandRecord>,
    pub ensemble: EnsembleWeights,
    pub dev_threshold: f64,
    pub eval: EvalReport,
    /// Held-out test split of the training artefact.
    pub intra: Option<ArtefactMetrics>,
    pub unscored: usize,
    pub audit: LeakageAudit,
}

impl RunRecord {
    /// Mean over bands of the development loss at the selected epoch.
    pub fn selected_dev_loss(&self) -> f64 {
        self.bands.iter().map(BandRecord::selected_dev_loss).sum::<f64>() / self.bands.len() as f64
    }
}

/// A finished run: the record plus everything the run directory holds.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub model: PadModel,
    pub trace: Vec<StepLoss>,
    pub eval: EvalOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub train_artefact: u8,
    pub test_artefacts: BTreeSet<u8>,
    pub mode: ThresholdMode,
    /// Restrict fusion to these bands.
    pub bands: Option<BTreeSet<SpectralBand>>,
    pub eer_method: EerMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub intra: Option<ArtefactMetrics>,
    /// Every scored test sample in split order.
    pub scores: Vec<SampleScore>,
    /// Threshold sweep per artefact (tested and, when present, the training one).
    pub sweeps: BTreeMap<u8, Vec<SweepPoint>>,
    /// Samples with no usable band, scored as attacks.
    pub unscored: usize,
}

/// Test artefacts of a run: the configured set, or every attack artefact in
/// the test split except the training one.
pub fn resolve_test_artefacts(dataset: &Dataset, exp: &Experiment) -> Result<BTreeSet<u8>> {
    let present = dataset.artefacts_in(Split::Test);
    let a = exp.train.train_artefact;
    let tests: BTreeSet<u8> = match &exp.eval.test_artefacts {
        Some(t) => t.clone(),
        None => present.iter().copied().filter(|x| *x != 0 && *x != a).collect(),
    };
    if tests.is_empty() {
        return Err(Error::Protocol(format!("no test artefact other than the training artefact {a}")));
    }
    if let Some(m) = tests.iter().find(|x| !present.contains(x)) {
        return Err(Error::Protocol(format!("test split has no samples of artefact {m}")));
    }
    Ok(tests)
}

/// Score the test split. Only test samples are read.
pub fn evaluate(model: &PadModel, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalOutput> {
    let mut wanted: BTreeSet<u8> = opts.test_artefacts.clone();
    wanted.insert(0);
    wanted.insert(opts.train_artefact);
    let samples = dataset.split(Split::Test, Some(&wanted));
    let scores: Vec<SampleScore> =
        samples.par_iter().map(|s| model.score(s, opts.bands.as_ref())).collect::<Result<_>>()?;
    let unscored = scores.iter().filter(|s| s.bands_used.is_empty()).count();

    let mut set = ScoreSet::default();
    for s in &scores {
        if s.artefact_id == 0 {
            set.bona.push(s.p_attack);
        } else {
            set.attack.entry(s.artefact_id).or_default().push(s.p_attack);
        }
    }
    let threshold = model.threshold(opts.mode);
    let tested: Vec<u8> = opts.test_artefacts.iter().copied().collect();
    let report = EvalReport::new(opts.train_artefact, opts.mode, threshold, opts.eer_method, &set, &tested)?;
    let intra = match set.attack.get(&opts.train_artefact) {
        Some(att) if !set.bona.is_empty() => Some(artefact_metrics(&set.bona, att, threshold, opts.eer_method)?),
        _ => None,
    };
    let mut sweeps = BTreeMap::new();
    for (a, att) in &set.attack {
        sweeps.insert(*a, threshold_sweep(&set.bona, att)?);
    }
    Ok(EvalOutput { report, intra, scores, sweeps, unscored })
}

/// Per-band training data of the fit splits (bona fide plus the training artefact).
fn band_data<'a>(train: &[&'a SpectralSample], dev: &[&'a SpectralSample], band: SpectralBand) -> BandData<'a> {
    let pick = |ss: &[&'a SpectralSample]| {
        ss.iter().filter_map(|s| s.valid_image(band).map(|img| (img, s.label as u8))).collect()
    };
    BandData { train: pick(train), dev: pick(dev) }
}

/// Train on bona fide plus the training artefact, weight bands and calibrate
/// on the development split, then evaluate the quantized model on the test
/// split. The dataset must already be quality-controlled.
pub fn run_cross_artefact(dataset: &Dataset, exp: &Experiment) -> Result<RunOutcome> {
    exp.validate()?;
    let a = exp.train.train_artefact;
    let shared = shared_test_identities(dataset);
    if shared > 0 {
        return Err(Error::Protocol(format!("{shared} identities appear in the test split and in train or dev")));
    }
    dataset.manifest().check_identity_disjoint()?;
    for split in [Split::Train, Split::Dev] {
        let present = dataset.artefacts_in(split);
        if !present.contains(&0) || !present.contains(&a) {
            return Err(Error::Protocol(format!("{split} split lacks bona fide or artefact {a} samples")));
        }
    }
    let tests = resolve_test_artefacts(dataset, exp)?;

    let log_start = dataset.access_log().entries().len();
    let fit_set = BTreeSet::from([0u8, a]);
    let train = dataset.split(Split::Train, Some(&fit_set));
    let dev = dataset.split(Split::Dev, Some(&fit_set));

    let mut input_stats = BTreeMap::new();
    for band in SpectralBand::ALL {
        let imgs: Vec<_> = train.iter().filter_map(|s| s.valid_image(band)).collect();
        if imgs.is_empty() {
            return Err(Error::Protocol(format!("band {band}: no training image passed quality control")));
        }
        let st = compute_band_stats(&imgs, band)?;
        // stored as f32 in the checkpoint
        input_stats.insert(band, BandStats { band, mean: st.mean as f32 as f64, std: st.std as f32 as f64 });
    }

    let encoder = ViTParams::<f32>::init(&exp.model, &mut rng::substream(exp.seed, &[STREAM_INIT, "encoder"]))?;
    let settings = exp.settings();
    let results: Vec<BandTrainResult> = SpectralBand::ALL
        .par_iter()
        .map(|&band| train_band(&encoder, band, &band_data(&train, &dev, band), &input_stats[&band], &settings))
        .collect::<Result<_>>()?;

    let mut model = PadModel {
        encoder: encoder.clone(),
        heads: BTreeMap::new(),
        input_stats,
        ensemble: band_weights(&BTreeMap::new()),
        dev_threshold: 0.5,
    };
    for r in &results {
        model.heads.insert(r.band, r.head.clone());
        model.encoder.band_blocks.insert(r.band, r.blocks.clone());
    }
    let model = model.quantized()?;

    // Band accuracies at the fixed 0.5 rule on the development split.
    let mut accs = BTreeMap::new();
    for band in SpectralBand::ALL {
        let pairs: Vec<(u8, u8)> = dev
            .par_iter()
            .filter_map(|s| s.valid_image(band).map(|img| (img, s.label as u8)))
            .map(|(img, l)| Ok((model.band_output(img, band)?.class.pred, l)))
            .collect::<Result<_>>()?;
        if !pairs.is_empty() {
            let (p, l): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            accs.insert(band, band_accuracy(&p, &l)?);
        }
    }
    let mut model = PadModel { ensemble: band_weights(&accs), ..model };

    let dev_scores: Vec<SampleScore> = dev.par_iter().map(|s| model.score(s, None)).collect::<Result<_>>()?;
    let dev_bona: Vec<f64> = dev_scores.iter().filter(|s| s.label == 0).map(|s| s.p_attack).collect();
    let dev_att: Vec<f64> = dev_scores.iter().filter(|s| s.label == 1).map(|s| s.p_attack).collect();
    let (_, t_dev) = d_eer_with(&dev_bona, &dev_att, exp.eval.eer_method)?;
    model.dev_threshold = t_dev.clamp(1e-6, 1.0 - 1e-6);
    let model = model.quantized()?;
    let test_reads_during_training = reads_since(dataset, log_start, &[Split::Test]);

    let eval_start = dataset.access_log().entries().len();
    let opts = EvalOptions {
        train_artefact: a,
        test_artefacts: tests,
        mode: exp.eval.threshold_mode,
        bands: None,
        eer_method: exp.eval.eer_method,
    };
    let eval = evaluate(&model, dataset, &opts)?;
    let audit = LeakageAudit {
        shared_identities: shared,
        test_reads_during_training,
        fit_reads_during_eval: reads_since(dataset, eval_start, &[Split::Train, Split::Dev]),
    };

    let bands = results
        .iter()
        .map(|r| BandRecord {
            band_nm: r.band.nm(),
            n_bona: r.n_bona,
            n_attack: r.n_attack,
            p_k: r.p_k,
            class_weights: r.class_weights,
            dev_loss: r.dev_loss.clone(),
            selected_epoch: r.selected_epoch,
            dev_accuracy: model.ensemble.acc[&r.band],
        })
        .collect();
    let record = RunRecord {
        experiment: exp.clone(),
        config_hash: hex(&exp.config_hash()),
        dataset_hash: hex(&dataset.digest()),
        bands,
        ensemble: model.ensemble.clone(),
        dev_threshold: model.dev_threshold,
        eval: eval.report.clone(),
        intra: eval.intra,
        unscored: eval.unscored,
        audit,
    };
    let trace = results.into_iter().flat_map(|r| r.trace).collect();
    Ok(RunOutcome { record, model, trace, eval })
}

/// The full configuration followed by one run per removed component, in
/// the order of [`Toggle::ALL`]. An empty toggle set gives the full run only.
pub fn ablation_variants(base: &Experiment, toggles: &BTreeSet<Toggle>) -> Vec<(String, Experiment)> {
    let mut out = vec![("full".to_string(), base.clone())];
    for t in Toggle::ALL.into_iter().filter(|t| toggles.contains(t)) {
        let mut e = base.clone();
        e.train.ablation.insert(t);
        out.push((format!("no_{t}"), e));
    }
    out
}

/// One line of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub dev_loss: f64,
    pub intra_d_eer: f64,
    pub intra_hter: f64,
    pub cross_d_eer_mean: f64,
    pub cross_d_eer_sd: f64,
    pub cross_hter_mean: f64,
    /// Whether the full configuration's development loss is at most this row's.
    pub full_at_most: bool,
}

pub fn run_ablation(dataset: &Dataset, base: &Experiment, toggles: &BTreeSet<Toggle>) -> Result<Vec<(String, RunOutcome)>> {
    ablation_variants(base, toggles)
        .into_iter()
        .map(|(name, e)| Ok((name, run_cross_artefact(dataset, &e)?)))
        .collect()
}

pub fn ablation_rows(runs: &[(String, RunOutcome)]) -> Vec<AblationRow> {
    let full = runs.first().map_or(f64::NAN, |(_, r)| r.record.selected_dev_loss());
    runs.iter()
        .map(|(name, r)| {
            let rec = &r.record;
            let dev_loss = rec.selected_dev_loss();
            AblationRow {
                variant: name.clone(),
                dev_loss,
                intra_d_eer: rec.intra.map_or(f64::NAN, |m| m.d_eer),
                intra_hter: rec.intra.map_or(f64::NAN, |m| m.hter),
                cross_d_eer_mean: rec.eval.aggregate.d_eer.mean,
                cross_d_eer_sd: rec.eval.aggregate.d_eer.sd,
                cross_hter_mean: rec.eval.aggregate.hter.mean,
                full_at_most: full <= dev_loss,
            }
        })
        .collect()
}
