//! Command implementations behind the `spectrapad` binary. Each command
//! returns a typed summary so it can be driven from tests and examples.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::GlobalConfig;
use crate::data::{synth_generate, write_dataset, Dataset, DatasetManifest, SpectralBand, Split};
use crate::ensemble::ThresholdMode;
use crate::error::{Error, Result};
use crate::metrics::{write_results_csv, write_results_json, write_sweep_csv, ResultRow};
use crate::protocol::{
    ablation_rows, apply_quality_control, evaluate, hex, resolve_test_artefacts, run_ablation, run_cross_artefact,
    AblationRow, EvalOptions, EvalOutput, LeakageAudit, NamedTensors, PadModel, RunOutcome, RunRecord, Toggle,
};
use crate::separability::{correlate_metrics, separability, write_csv, ArtefactPoint, CorrelationRow, SeparabilityReport};

#[derive(Debug, Parser)]
#[command(name = "spectrapad", version, about = "Multispectral iris presentation attack detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset and its manifest.
    Synth(Args),
    /// Train on one artefact and evaluate on the others.
    Train(Args),
    /// Evaluate a trained checkpoint on the test split.
    Eval(Args),
    /// Full configuration plus one run per removed component.
    Ablate(Args),
    /// Feature separability against error rates for a finished run.
    Analyze(Args),
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated wavelengths in nm, e.g. `800,850`.
    #[arg(long)]
    pub bands: Option<String>,
    #[arg(long = "threshold-mode")]
    pub threshold_mode: Option<ThresholdMode>,
    /// Dataset directory for `synth`, run directory otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint to evaluate; defaults to the run directory's.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate despite configuration or dataset hash mismatches.
    #[arg(long)]
    pub force: bool,
    /// Components to remove one at a time (ablate); all six by default.
    #[arg(long)]
    pub toggles: Option<String>,
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|s| {
            println!("wrote {} samples to {}", s.samples, s.manifest.display());
            for (artefact, n) in &s.per_class {
                let name = if *artefact == 0 { "bona fide".to_string() } else { format!("artefact {artefact}") };
                println!("  {name}: {n}");
            }
        }),
        Command::Train(a) => cmd_train(a).map(|s| {
            print_rows(&s.record.eval.rows());
            if let Some(m) = s.record.intra {
                println!("intra-artefact D-EER {:.4}, HTER {:.4}", m.d_eer, m.hter);
            }
            println!("run directory {}", s.run_dir.display());
        }),
        Command::Eval(a) => cmd_eval(a).map(|s| {
            print_rows(&s.output.report.rows());
            println!("results in {}", s.out_dir.display());
        }),
        Command::Ablate(a) => cmd_ablate(a).map(|s| {
            for r in &s.rows {
                println!(
                    "{:<18} dev loss {:>9.5}  intra D-EER {:.4}  cross D-EER {:.4} ± {:.4}",
                    r.variant, r.dev_loss, r.intra_d_eer, r.cross_d_eer_mean, r.cross_d_eer_sd
                );
            }
            for d in &s.deviations {
                println!("deviation: {d}");
            }
            println!("ablation table {}", s.out_dir.join("ablation.csv").display());
        }),
        Command::Analyze(a) => cmd_analyze(a).map(|s| {
            for r in &s.fused {
                println!("{} vs {}: rho {:+.3} [{:+.3}, {:+.3}], p {:.4}", r.feature_metric, r.error_metric, r.rho, r.ci_lo, r.ci_hi, r.p);
            }
            println!("analysis in {}", s.out_dir.display());
        }),
    }
}

fn print_rows(rows: &[ResultRow]) {
    println!("{:>5} {:>8} {:>8} {:>8} {:>8}", "test", "APCER", "BPCER", "HTER", "D-EER");
    for r in rows {
        println!("{:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", r.test_artefact, r.apcer, r.bpcer, r.hter, r.d_eer);
    }
}

/// Configuration with command-line overrides applied.
pub fn load_config(args: &Args) -> Result<GlobalConfig> {
    let mut cfg = GlobalConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = args.threshold_mode {
        cfg.eval.threshold_mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Load the requested splits (every split for synthetic data, which lives in
/// memory) and apply quality control.
pub fn load_dataset(cfg: &GlobalConfig, splits: &[Split]) -> Result<Dataset> {
    let mut ds = match (cfg.manifest_path(), &cfg.dataset.synth) {
        (Some(path), _) => {
            let manifest = DatasetManifest::load(&path)?;
            let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
            Dataset::load(manifest, &root, splits)?
        }
        (None, Some(synth)) => {
            let (samples, manifest) = synth_generate(synth, cfg.data_seed())?;
            Dataset::from_samples(samples, manifest)?
        }
        (None, None) => return Err(Error::Config("no dataset configured".into())),
    };
    apply_quality_control(&mut ds, &cfg.train);
    Ok(ds)
}

fn dataset_digest(cfg: &GlobalConfig) -> Result<[u8; 32]> {
    match (cfg.manifest_path(), &cfg.dataset.synth) {
        (Some(path), _) => Ok(DatasetManifest::load(&path)?.digest()),
        (None, Some(synth)) => Ok(synth_generate(synth, cfg.data_seed())?.1.digest()),
        (None, None) => Err(Error::Config("no dataset configured".into())),
    }
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub samples: usize,
    pub per_class: BTreeMap<u8, usize>,
}

pub fn cmd_synth(args: &Args) -> Result<SynthSummary> {
    let cfg = load_config(args)?;
    let synth = cfg
        .dataset
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("synth needs a [dataset.synth] section".into()))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.resolve(&cfg.output_dir).join(format!("synth_s{}", cfg.data_seed())));
    let (samples, manifest) = synth_generate(synth, cfg.data_seed())?;
    std::fs::create_dir_all(&out)?;
    let path = write_dataset(&samples, &manifest, &out)?;
    let mut per_class = BTreeMap::new();
    for s in &samples {
        *per_class.entry(s.artefact_id).or_insert(0) += 1;
    }
    Ok(SynthSummary { manifest: path, samples: samples.len(), per_class })
}

/// One row of `scores/<artefact>.csv`.
#[derive(Debug, Serialize)]
struct ScoreRow<'a> {
    sample_id: &'a str,
    label: u8,
    artefact_id: u8,
    p_attack: f64,
    bands_used: String,
}

fn band_list(bands: &BTreeSet<SpectralBand>) -> String {
    bands.iter().map(|b| b.nm().to_string()).collect::<Vec<_>>().join(" ")
}

fn intra_rows(output: &EvalOutput, train_artefact: u8) -> Vec<ResultRow> {
    output
        .intra
        .map(|m| ResultRow {
            train_artefact,
            test_artefact: train_artefact.to_string(),
            mode: output.report.mode.as_str().into(),
            threshold: output.report.threshold,
            apcer: m.apcer,
            bpcer: m.bpcer,
            hter: m.hter,
            d_eer: m.d_eer,
        })
        .into_iter()
        .collect()
}

/// `results.csv`, `results.json`, `intra.csv`, `scores/` and `sweeps/`.
pub fn write_eval_files(dir: &Path, output: &EvalOutput) -> Result<()> {
    std::fs::create_dir_all(dir.join("scores"))?;
    std::fs::create_dir_all(dir.join("sweeps"))?;
    let rows = output.report.rows();
    write_results_csv(&dir.join("results.csv"), &rows)?;
    write_results_json(&dir.join("results.json"), &rows)?;
    write_results_csv(&dir.join("intra.csv"), &intra_rows(output, output.report.train_artefact))?;
    let mut groups: BTreeMap<u8, Vec<ScoreRow>> = BTreeMap::new();
    for s in &output.scores {
        groups.entry(s.artefact_id).or_default().push(ScoreRow {
            sample_id: &s.sample_id,
            label: s.label,
            artefact_id: s.artefact_id,
            p_attack: s.p_attack,
            bands_used: band_list(&s.bands_used),
        });
    }
    for (a, rows) in &groups {
        let name = if *a == 0 { "bona_fide".to_string() } else { a.to_string() };
        write_csv(&dir.join("scores").join(format!("{name}.csv")), rows)?;
    }
    for (a, sweep) in &output.sweeps {
        write_sweep_csv(&dir.join("sweeps").join(format!("{a}.csv")), sweep)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.into()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DevLossRow {
    band_nm: u16,
    epoch: usize,
    dev_loss: f64,
    selected: bool,
}

pub fn checkpoint_for(outcome: &RunOutcome) -> Result<Checkpoint> {
    let rec = &outcome.record;
    let mut c = Checkpoint::from_model(&outcome.model, rec.experiment.config_hash(), unhex(&rec.dataset_hash)?)?;
    c.metadata.insert("train_artefact".into(), rec.experiment.train.train_artefact.into());
    c.metadata.insert("seed".into(), rec.experiment.seed.into());
    Ok(c)
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bytes: Vec<u8> = (0..s.len())
        .step_by(2)
        .map(|i| s.get(i..i + 2).and_then(|h| u8::from_str_radix(h, 16).ok()))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Format(format!("bad hex digest {s}")))?;
    bytes.try_into().map_err(|_| Error::Format(format!("digest {s} is not 32 bytes")))
}

/// Everything a training run leaves on disk.
pub fn write_run_dir(dir: &Path, cfg: &GlobalConfig, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.snapshot"), cfg.to_toml())?;
    checkpoint_for(outcome)?.save(&dir.join("checkpoint.bin"))?;
    write_eval_files(dir, &outcome.eval)?;
    write_csv(&dir.join("losses.csv"), &outcome.trace)?;
    let dev: Vec<DevLossRow> = outcome
        .record
        .bands
        .iter()
        .flat_map(|b| {
            b.dev_loss.iter().enumerate().map(move |(e, l)| DevLossRow {
                band_nm: b.band_nm,
                epoch: e,
                dev_loss: *l,
                selected: e == b.selected_epoch,
            })
        })
        .collect();
    write_csv(&dir.join("dev_loss.csv"), &dev)?;
    write_json(&dir.join("run.json"), &outcome.record)
}

fn audit_result(audit: &LeakageAudit) -> Result<()> {
    if audit.passed() {
        Ok(())
    } else {
        Err(Error::Protocol(format!("leakage audit failed: {audit:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub record: RunRecord,
}

pub fn cmd_train(args: &Args) -> Result<TrainSummary> {
    let cfg = load_config(args)?;
    let run_dir = args.out.clone().unwrap_or_else(|| cfg.run_dir());
    let ds = load_dataset(&cfg, &Split::ALL)?;
    let outcome = run_cross_artefact(&ds, &cfg.experiment())?;
    write_run_dir(&run_dir, &cfg, &outcome)?;
    audit_result(&outcome.record.audit)?;
    Ok(TrainSummary { run_dir, record: outcome.record })
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub out_dir: PathBuf,
    pub output: EvalOutput,
    pub audit: LeakageAudit,
    /// Every sample or file the evaluation touched, with its split.
    pub accessed: Vec<(String, Split)>,
}

/// Checkpoint, model and compatibility checks shared by eval and analyze.
fn open_run(args: &Args, cfg: &GlobalConfig) -> Result<(PathBuf, Checkpoint, PadModel)> {
    let run_dir = args.out.clone().unwrap_or_else(|| cfg.run_dir());
    let path = args.checkpoint.clone().unwrap_or_else(|| run_dir.join("checkpoint.bin"));
    let ckpt = Checkpoint::load(&path)?;
    let want = cfg.experiment().config_hash();
    if ckpt.config_hash != want && !args.force {
        return Err(Error::Compatibility(format!(
            "checkpoint config hash {} does not match the configuration ({}); use --force to override",
            hex(&ckpt.config_hash),
            hex(&want)
        )));
    }
    let digest = dataset_digest(cfg)?;
    if ckpt.dataset_hash != digest && !args.force {
        return Err(Error::Compatibility(format!(
            "checkpoint dataset hash {} does not match the dataset ({})",
            hex(&ckpt.dataset_hash),
            hex(&digest)
        )));
    }
    let model = ckpt.model()?;
    Ok((run_dir, ckpt, model))
}

fn eval_options(args: &Args, cfg: &GlobalConfig, ckpt: &Checkpoint, ds: &Dataset) -> Result<EvalOptions> {
    let mut exp = cfg.experiment();
    exp.train.train_artefact = ckpt.meta("train_artefact").unwrap_or(cfg.train.train_artefact);
    let bands = args.bands.as_deref().map(SpectralBand::parse_list).transpose()?;
    Ok(EvalOptions {
        train_artefact: exp.train.train_artefact,
        test_artefacts: resolve_test_artefacts(ds, &exp)?,
        mode: cfg.eval.threshold_mode,
        bands,
        eer_method: cfg.eval.eer_method,
    })
}

pub fn cmd_eval(args: &Args) -> Result<EvalSummary> {
    let cfg = load_config(args)?;
    let (run_dir, ckpt, model) = open_run(args, &cfg)?;
    let ds = load_dataset(&cfg, &[Split::Test])?;
    let opts = eval_options(args, &cfg, &ckpt, &ds)?;
    let output = evaluate(&model, &ds, &opts)?;
    let accessed: Vec<(String, Split)> = ds.access_log().entries().into_iter().map(|e| (e.what, e.split)).collect();
    let audit = LeakageAudit {
        shared_identities: crate::protocol::shared_test_identities(&ds),
        test_reads_during_training: 0,
        fit_reads_during_eval: accessed.iter().filter(|(_, s)| *s != Split::Test).count(),
    };
    let mut name = format!("eval_{}", opts.mode.as_str());
    if let Some(b) = &opts.bands {
        name += &format!("_b{}", b.iter().map(|b| b.nm().to_string()).collect::<Vec<_>>().join("-"));
    }
    let out_dir = run_dir.join(name);
    write_eval_files(&out_dir, &output)?;
    write_json(&out_dir.join("audit.json"), &audit)?;
    audit_result(&audit)?;
    Ok(EvalSummary { out_dir, output, audit, accessed })
}

#[derive(Debug, Clone)]
pub struct AblationSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<AblationRow>,
    pub records: Vec<(String, RunRecord)>,
    /// Removal runs whose development loss is below the full configuration's.
    pub deviations: Vec<String>,
}

pub fn parse_toggles(s: &str) -> Result<BTreeSet<Toggle>> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
}

pub fn cmd_ablate(args: &Args) -> Result<AblationSummary> {
    let cfg = load_config(args)?;
    let toggles = match &args.toggles {
        Some(t) => parse_toggles(t)?,
        None => Toggle::ALL.into_iter().collect(),
    };
    let out_dir = args.out.clone().unwrap_or_else(|| {
        cfg.resolve(&cfg.output_dir).join(format!("ablation_a{}_s{}", cfg.train.train_artefact, cfg.seed))
    });
    let ds = load_dataset(&cfg, &Split::ALL)?;
    let runs = run_ablation(&ds, &cfg.experiment(), &toggles)?;
    for (name, outcome) in &runs {
        let mut c = cfg.clone();
        c.train = outcome.record.experiment.train.clone();
        write_run_dir(&out_dir.join(name), &c, outcome)?;
        audit_result(&outcome.record.audit)?;
    }
    let rows = ablation_rows(&runs);
    write_csv(&out_dir.join("ablation.csv"), &rows)?;
    let deviations = rows
        .iter()
        .skip(1)
        .filter(|r| !r.full_at_most)
        .map(|r| format!("{} reaches dev loss {:.6} below the full configuration's {:.6}", r.variant, r.dev_loss, rows[0].dev_loss))
        .collect();
    let records = runs.into_iter().map(|(n, o)| (n, o.record)).collect();
    Ok(AblationSummary { out_dir, rows, records, deviations })
}

/// Per-artefact separability of one feature view, with the matching error rates.
#[derive(Debug, Clone, Serialize)]
pub struct SeparabilityRow {
    pub view: String,
    pub artefact: u8,
    pub n_bona: usize,
    pub n_attack: usize,
    pub d_fb: f64,
    pub d_fb_mean: f64,
    pub mmd2: f64,
    pub bandwidth: f64,
    pub eer: f64,
    pub hter: f64,
}

#[derive(Debug, Clone)]
pub struct AnalyzeSummary {
    pub out_dir: PathBuf,
    pub fused: Vec<CorrelationRow>,
    pub per_band: Vec<CorrelationRow>,
    pub separability: Vec<SeparabilityRow>,
}

/// Normalized pre-logit features of every test sample, per band and fused
/// (ensemble-weighted mean over the sample's usable bands), keyed by view
/// then artefact.
pub fn test_features(
    model: &PadModel,
    ds: &Dataset,
    artefacts: &BTreeSet<u8>,
) -> Result<BTreeMap<String, BTreeMap<u8, Vec<Vec<f64>>>>> {
    use rayon::prelude::*;
    let samples = ds.split(Split::Test, Some(artefacts));
    let per_sample: Vec<(u8, BTreeMap<SpectralBand, Vec<f64>>)> = samples
        .par_iter()
        .map(|s| {
            let mut f = BTreeMap::new();
            for b in model.usable_bands(s, None) {
                let out = model.band_output(s.valid_image(b).expect("usable"), b)?;
                f.insert(b, out.f_norm.iter().map(|v| *v as f64).collect());
            }
            Ok((s.artefact_id, f))
        })
        .collect::<Result<_>>()?;
    let mut out: BTreeMap<String, BTreeMap<u8, Vec<Vec<f64>>>> = BTreeMap::new();
    for (a, feats) in per_sample {
        for (b, f) in &feats {
            out.entry(format!("band{}", b.nm())).or_default().entry(a).or_default().push(f.clone());
        }
        let total: f64 = feats.keys().map(|b| model.ensemble.weight(*b)).sum();
        if feats.is_empty() {
            continue;
        }
        let d = feats.values().next().map_or(0, Vec::len);
        let mut fused = vec![0.0; d];
        for (b, f) in &feats {
            let w = if total > 0.0 { model.ensemble.weight(*b) / total } else { 1.0 / feats.len() as f64 };
            for (x, v) in fused.iter_mut().zip(f) {
                *x += w * v;
            }
        }
        out.entry("fused".into()).or_default().entry(a).or_default().push(fused);
    }
    Ok(out)
}

fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

pub fn cmd_analyze(args: &Args) -> Result<AnalyzeSummary> {
    let cfg = load_config(args)?;
    let (run_dir, ckpt, model) = open_run(args, &cfg)?;
    let ds = load_dataset(&cfg, &[Split::Test])?;
    let opts = eval_options(args, &cfg, &ckpt, &ds)?;
    if opts.test_artefacts.len() < 4 {
        return Err(Error::Protocol(format!(
            "separability correlation needs at least 4 tested artefacts, got {}",
            opts.test_artefacts.len()
        )));
    }
    let eval = evaluate(&model, &ds, &opts)?;
    let mut wanted = opts.test_artefacts.clone();
    wanted.insert(0);
    let feats = test_features(&model, &ds, &wanted)?;

    let out_dir = run_dir.join("analysis");
    std::fs::create_dir_all(out_dir.join("features"))?;
    let protocol = format!("cross_artefact_a{}", opts.train_artefact);
    let mut fused = Vec::new();
    let mut per_band = Vec::new();
    let mut sep_rows = Vec::new();
    for (view, by_artefact) in &feats {
        let mut dump = NamedTensors::new();
        for (a, rows) in by_artefact {
            let m = to_matrix(rows);
            dump.insert(format!("features.{view}.a{a}"), (m.shape().to_vec(), m.iter().map(|v| *v as f32).collect()));
        }
        Checkpoint::new(dump, ckpt.config_hash, ckpt.dataset_hash).save(&out_dir.join("features").join(format!("{view}.bin")))?;

        let Some(bona) = by_artefact.get(&0) else { continue };
        let bona = to_matrix(bona);
        let mut points = Vec::new();
        for a in &opts.test_artefacts {
            let Some(att) = by_artefact.get(a) else { continue };
            let rep: SeparabilityReport = separability(&bona, &to_matrix(att))?;
            let m = eval.report.per_artefact[a];
            sep_rows.push(SeparabilityRow {
                view: view.clone(),
                artefact: *a,
                n_bona: bona.nrows(),
                n_attack: att.len(),
                d_fb: rep.d_fb,
                d_fb_mean: rep.d_fb_mean,
                mmd2: rep.mmd2,
                bandwidth: rep.bandwidth,
                eer: m.d_eer,
                hter: m.hter,
            });
            points.push(ArtefactPoint { artefact: *a, d_fb: rep.d_fb, mmd2: rep.mmd2, eer: m.d_eer, hter: m.hter });
        }
        if view == "fused" {
            fused = correlate_metrics(&protocol, &points)?;
        } else if points.len() >= 4 {
            per_band.extend(correlate_metrics(&format!("{protocol}_{view}"), &points)?);
        }
    }
    write_csv(&out_dir.join("analysis.csv"), &fused)?;
    write_csv(&out_dir.join("analysis_bands.csv"), &per_band)?;
    write_csv(&out_dir.join("separability.csv"), &sep_rows)?;
    Ok(AnalyzeSummary { out_dir, fused, per_band, separability: sep_rows })
}
