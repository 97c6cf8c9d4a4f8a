use std::collections::BTreeMap;
#[cfg(test)]
use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::rng;

/// Assign every identity to exactly one of train/dev/test, stratified by
/// class (artefact id). An identity whose records span several classes is
/// filed under the lowest artefact id it appears with.
pub fn partition_identity_disjoint(
    manifest: &DatasetManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetManifest> {
    let (ft, fd, fs) = fractions;
    if [ft, fd, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fd + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("split fractions {fractions:?} must sum to 1")));
    }
    let mut class_of: BTreeMap<&str, u8> = BTreeMap::new();
    for r in &manifest.records {
        let e = class_of.entry(r.identity_id.as_str()).or_insert(r.artefact_id);
        *e = (*e).min(r.artefact_id);
    }
    let mut by_class: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for (id, class) in &class_of {
        by_class.entry(*class).or_default().push(id);
    }

    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    for (class, mut ids) in by_class {
        let n = ids.len();
        if n < 3 {
            return Err(Error::Protocol(format!(
                "class {class} has {n} identities; at least 3 are needed for a three-way split"
            )));
        }
        let mut r = rng::substream(seed, &[rng::STREAM_PARTITION, &class.to_string()]);
        ids.shuffle(&mut r);
        let n_train = ((ft * n as f64).round() as usize).min(n);
        let n_dev = ((fd * n as f64).round() as usize).min(n - n_train);
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
            assignment.insert(id, split);
        }
    }

    let mut out = manifest.clone();
    for rec in &mut out.records {
        rec.split = assignment[rec.identity_id.as_str()];
    }
    debug_assert!(out.check_identity_disjoint().is_ok());
    Ok(out)
}

/// Identities per split for one class.
#[cfg(test)]
pub(crate) fn identities_by_split(manifest: &DatasetManifest, class: u8) -> BTreeMap<Split, BTreeSet<String>> {
    let mut out: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    for r in manifest.records.iter().filter(|r| r.artefact_id == class) {
        out.entry(r.split).or_default().insert(r.identity_id.clone());
    }
    out
}
