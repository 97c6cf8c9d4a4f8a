use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Label, SpectralBand};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::Input(format!("unknown split `{s}`"))),
        }
    }
}

/// One row of the manifest: a single band image of a single capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub band_nm: SpectralBand,
    pub label: u8,
    pub artefact_id: u8,
    pub identity_id: String,
    pub split: Split,
}

impl ManifestRecord {
    pub fn label(&self) -> Result<Label> {
        Label::from_index(self.label)
    }

    /// Capture key shared by the band images of one sample: the file stem with
    /// its `_b<nm>` suffix removed. Files without the suffix are their own key.
    pub fn sample_key(&self) -> String {
        let name = self.path.rsplit(['/', '\\']).next().unwrap_or(&self.path);
        let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(name);
        match stem.rsplit_once("_b") {
            Some((key, nm)) if nm.parse::<u16>().ok() == Some(self.band_nm.nm()) => key.to_string(),
            _ => stem.to_string(),
        }
    }
}

/// The dataset index. CSV header: `path,band_nm,label,artefact_id,identity_id,split`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub const HEADER: [&'static str; 6] = ["path", "band_nm", "label", "artefact_id", "identity_id", "split"];

    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert((r.path.as_str(), r.band_nm)) {
                return Err(Error::Input(format!("duplicate manifest entry {} @ {}", r.path, r.band_nm)));
            }
            let label = r.label()?;
            if (label == Label::BonaFide) != (r.artefact_id == 0) || r.artefact_id > 8 {
                return Err(Error::Input(format!(
                    "{}: label {} inconsistent with artefact {}",
                    r.path, r.label, r.artefact_id
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(Self::HEADER)?;
        for r in &self.records {
            wr.write_record([
                r.path.clone(),
                r.band_nm.to_string(),
                r.label.to_string(),
                r.artefact_id.to_string(),
                r.identity_id.clone(),
                r.split.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != Self::HEADER {
            return Err(Error::Input(format!("unexpected manifest header {header:?}")));
        }
        let mut records = Vec::new();
        for row in rd.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("").trim();
            let num = |i: usize| -> Result<u64> {
                field(i).parse().map_err(|_| Error::Input(format!("bad number `{}`", field(i))))
            };
            records.push(ManifestRecord {
                path: field(0).to_string(),
                band_nm: SpectralBand::new(num(1)? as u16)?,
                label: num(2)? as u8,
                artefact_id: num(3)? as u8,
                identity_id: field(4).to_string(),
                split: field(5).parse()?,
            });
        }
        Self::new(records)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 manifest")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn identities(&self, split: Split) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.identity_id.as_str())
            .collect()
    }

    /// Fails when any identity appears in more than one split.
    pub fn check_identity_disjoint(&self) -> Result<()> {
        let sets: Vec<_> = Split::ALL.iter().map(|&s| self.identities(s)).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                if let Some(id) = sets[i].intersection(&sets[j]).next() {
                    return Err(Error::Protocol(format!(
                        "identity {id} appears in both {} and {}",
                        Split::ALL[i],
                        Split::ALL[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical CSV serialization.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.to_csv_string().as_bytes()).into()
    }
}
