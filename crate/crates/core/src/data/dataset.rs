use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{
    load_band_image, quality_filter, BandImage, DatasetManifest, QualityReport, SpectralBand,
    SpectralSample, Split,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessEntry {
    pub what: String,
    pub split: Split,
}

/// Records every sample or file the pipeline touches, tagged with its split.
#[derive(Debug, Clone, Default)]
pub struct AccessLog(Arc<Mutex<Vec<AccessEntry>>>);

impl AccessLog {
    pub fn record(&self, what: impl Into<String>, split: Split) {
        self.0.lock().unwrap().push(AccessEntry { what: what.into(), split });
    }

    pub fn entries(&self) -> Vec<AccessEntry> {
        self.0.lock().unwrap().clone()
    }

    pub fn touched(&self, split: Split) -> usize {
        self.0.lock().unwrap().iter().filter(|e| e.split == split).count()
    }

    pub fn clear(&self) {
        self.0.lock().unwrap().clear();
    }
}

/// Samples with their split assignment plus the manifest that indexes them.
#[derive(Debug, Clone)]
pub struct Dataset {
    entries: Vec<(SpectralSample, Split)>,
    manifest: DatasetManifest,
    log: AccessLog,
    qc: BTreeMap<(String, SpectralBand), QualityReport>,
}

impl Dataset {
    /// Wrap in-memory samples. Each sample's split comes from the manifest
    /// rows whose sample key equals the sample id.
    pub fn from_samples(samples: Vec<SpectralSample>, manifest: DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let mut split_of: BTreeMap<String, Split> = BTreeMap::new();
        for r in &manifest.records {
            if let Some(prev) = split_of.insert(r.sample_key(), r.split) {
                if prev != r.split {
                    return Err(Error::Protocol(format!("sample {} spans two splits", r.sample_key())));
                }
            }
        }
        let mut entries = Vec::with_capacity(samples.len());
        for s in samples {
            s.check_invariants()?;
            let split = *split_of
                .get(&s.id)
                .ok_or_else(|| Error::Input(format!("sample {} missing from manifest", s.id)))?;
            entries.push((s, split));
        }
        Ok(Self { entries, manifest, log: AccessLog::default(), qc: BTreeMap::new() })
    }

    /// Load the images of the requested splits only. Paths are resolved
    /// relative to `root` (normally the manifest's directory).
    pub fn load(manifest: DatasetManifest, root: &Path, splits: &[Split]) -> Result<Self> {
        manifest.validate()?;
        let log = AccessLog::default();
        let mut grouped: BTreeMap<String, (Vec<usize>, Split)> = BTreeMap::new();
        for (i, r) in manifest.records.iter().enumerate() {
            if !splits.contains(&r.split) {
                continue;
            }
            let e = grouped.entry(r.sample_key()).or_insert((Vec::new(), r.split));
            if e.1 != r.split {
                return Err(Error::Protocol(format!("sample {} spans two splits", r.sample_key())));
            }
            e.0.push(i);
        }
        let mut entries = Vec::with_capacity(grouped.len());
        for (key, (rows, split)) in grouped {
            let first = &manifest.records[rows[0]];
            let mut images = BTreeMap::new();
            for &i in &rows {
                let r = &manifest.records[i];
                if r.artefact_id != first.artefact_id || r.identity_id != first.identity_id {
                    return Err(Error::Input(format!("sample {key}: bands disagree on metadata")));
                }
                let path: PathBuf = root.join(&r.path);
                log.record(r.path.clone(), split);
                images.insert(r.band_nm, load_band_image(&path)?);
            }
            let s = SpectralSample::new(key, images, first.artefact_id, first.identity_id.clone())?;
            entries.push((s, split));
        }
        Ok(Self { entries, manifest, log, qc: BTreeMap::new() })
    }

    /// Apply quality control: bands that fail are removed from each sample's
    /// validity mask. Returns the number of masked band images.
    pub fn apply_quality_control(&mut self, threshold: f64, sat_limit: f64) -> usize {
        let mut masked = 0;
        for (s, _) in &mut self.entries {
            let bands: Vec<SpectralBand> = s.images.keys().copied().collect();
            for b in bands {
                let report = quality_filter(&s.images[&b], threshold, sat_limit);
                if !report.pass && s.band_mask.contains(&b) {
                    s.mask_out(b);
                    masked += 1;
                }
                self.qc.insert((s.id.clone(), b), report);
            }
        }
        masked
    }

    pub fn quality_reports(&self) -> &BTreeMap<(String, SpectralBand), QualityReport> {
        &self.qc
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn access_log(&self) -> &AccessLog {
        &self.log
    }

    /// Samples of one split, optionally restricted to a set of artefact ids.
    /// Every returned sample is recorded in the access log.
    pub fn split(&self, split: Split, artefacts: Option<&BTreeSet<u8>>) -> Vec<&SpectralSample> {
        let out: Vec<&SpectralSample> = self
            .entries
            .iter()
            .filter(|(s, sp)| *sp == split && artefacts.is_none_or(|a| a.contains(&s.artefact_id)))
            .map(|(s, _)| s)
            .collect();
        for s in &out {
            self.log.record(s.id.clone(), split);
        }
        out
    }

    /// Artefact ids present in a split, without touching sample data.
    pub fn artefacts_in(&self, split: Split) -> BTreeSet<u8> {
        self.manifest
            .records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.artefact_id)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn digest(&self) -> [u8; 32] {
        self.manifest.digest()
    }

    /// Image of a sample band, for callers that already hold a sample.
    pub fn image(sample: &SpectralSample, band: SpectralBand) -> Option<&BandImage> {
        sample.valid_image(band)
    }
}
