use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::{ConflictSample, TypeMix};
use super::vocab::Vocab;
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTag {
    Unassigned,
    /// Model-training pool (the part of the training portion not held out as
    /// prototype or probe-training data).
    Train,
    Proto,
    TrainProbe,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub proto: usize,
    pub train_probe: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { proto: 256, train_probe: 200, validation: 200, test: 500 }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.proto + self.train_probe + self.validation + self.test
    }
}

/// Disjoint sample sets. `proto` and `train_probe` come from the training
/// portion; `validation` and `test` are held out from everything else.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: Vec<ConflictSample>,
    pub proto: Vec<ConflictSample>,
    pub train_probe: Vec<ConflictSample>,
    pub validation: Vec<ConflictSample>,
    pub test: Vec<ConflictSample>,
}

impl DatasetSplits {
    pub fn get(&self, tag: SplitTag) -> &[ConflictSample] {
        match tag {
            SplitTag::Unassigned => &[],
            SplitTag::Train => &self.train,
            SplitTag::Proto => &self.proto,
            SplitTag::TrainProbe => &self.train_probe,
            SplitTag::Validation => &self.validation,
            SplitTag::Test => &self.test,
        }
    }

    /// Every sample outside validation and test; this is what the model trains on.
    pub fn training_portion(&self) -> Vec<ConflictSample> {
        let mut all: Vec<ConflictSample> =
            self.train.iter().chain(&self.proto).chain(&self.train_probe).cloned().collect();
        all.sort_by_key(|s| s.id);
        all
    }

    pub fn tagged(&self) -> Vec<(SplitTag, &ConflictSample)> {
        let mut out: Vec<(SplitTag, &ConflictSample)> =
            [SplitTag::Train, SplitTag::Proto, SplitTag::TrainProbe, SplitTag::Validation, SplitTag::Test]
                .into_iter()
                .flat_map(|tag| self.get(tag).iter().map(move |s| (tag, s)))
                .collect();
        out.sort_by_key(|(_, s)| s.id);
        out
    }

    /// Rebuilds splits from tagged records; unassigned records are rejected.
    pub fn from_tagged(records: Vec<(SplitTag, ConflictSample)>) -> Result<Self> {
        let mut s = Self::default();
        for (tag, sample) in records {
            match tag {
                SplitTag::Unassigned => {
                    return Err(Error::Input(format!("sample {} has no split assignment", sample.id)));
                }
                SplitTag::Train => s.train.push(sample),
                SplitTag::Proto => s.proto.push(sample),
                SplitTag::TrainProbe => s.train_probe.push(sample),
                SplitTag::Validation => s.validation.push(sample),
                SplitTag::Test => s.test.push(sample),
            }
        }
        s.check_disjoint()?;
        Ok(s)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (_, s) in self.tagged() {
            if !seen.insert(s.id) {
                return Err(Error::Input(format!("sample id {} appears in more than one split", s.id)));
            }
        }
        Ok(())
    }

    pub fn test_ids(&self) -> HashSet<u64> {
        self.test.iter().map(|s| s.id).collect()
    }
}

/// Refuses to let a stage consume any held-out test sample.
pub fn guard_no_test(stage: &str, samples: &[ConflictSample], test_ids: &HashSet<u64>) -> Result<()> {
    match samples.iter().find(|s| test_ids.contains(&s.id)) {
        Some(s) => Err(Error::Protocol(format!("{stage} received test sample {}", s.id))),
        None => Ok(()),
    }
}

/// Assigns samples to disjoint splits. Test and validation are drawn first;
/// prototype and probe-training sets come from what remains, which also
/// forms the model-training pool.
pub fn split(samples: &[ConflictSample], sizes: SplitSizes, seed: u64) -> Result<DatasetSplits> {
    if sizes.total() > samples.len() {
        return Err(Error::Input(format!(
            "split sizes need {} samples, only {} available",
            sizes.total(),
            samples.len()
        )));
    }
    let mut ids: HashSet<u64> = HashSet::new();
    if let Some(dup) = samples.iter().find(|s| !ids.insert(s.id)) {
        return Err(Error::Input(format!("duplicate sample id {}", dup.id)));
    }
    let mut sorted: Vec<&ConflictSample> = samples.iter().collect();
    sorted.sort_by_key(|s| s.id);
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut cursor = 0;
    let mut take = |n: usize| {
        let mut part: Vec<ConflictSample> = order[cursor..cursor + n].iter().map(|&i| sorted[i].clone()).collect();
        part.sort_by_key(|s| s.id);
        cursor += n;
        part
    };
    let test = take(sizes.test);
    let validation = take(sizes.validation);
    let proto = take(sizes.proto);
    let train_probe = take(sizes.train_probe);
    let train = take(samples.len() - sizes.total());
    Ok(DatasetSplits { train, proto, train_probe, validation, test })
}

/// Header line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub vocab: Vocab,
    pub seed: u64,
    pub mix: TypeMix,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub split: SplitTag,
    #[serde(flatten)]
    pub sample: ConflictSample,
}

/// JSON-lines dataset: one header line, then one record per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl DatasetFile {
    pub fn unassigned(header: DatasetHeader, samples: Vec<ConflictSample>) -> Self {
        let records = samples.into_iter().map(|sample| DatasetRecord { split: SplitTag::Unassigned, sample }).collect();
        Self { header, records }
    }

    pub fn from_splits(header: DatasetHeader, splits: &DatasetSplits) -> Self {
        let records =
            splits.tagged().into_iter().map(|(split, s)| DatasetRecord { split, sample: s.clone() }).collect();
        Self { header, records }
    }

    pub fn samples(&self) -> Vec<ConflictSample> {
        self.records.iter().map(|r| r.sample.clone()).collect()
    }

    pub fn splits(&self) -> Result<DatasetSplits> {
        DatasetSplits::from_tagged(self.records.iter().map(|r| (r.split, r.sample.clone())).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &self.header)?;
        out.push(b'\n');
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let first = lines.next().ok_or_else(|| Error::Format(format!("{}: empty dataset file", path.display())))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        if header.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "dataset format version {} unsupported (expected {DATASET_FORMAT_VERSION})",
                header.format_version
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self { header, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;

    fn pool(n: usize) -> Vec<ConflictSample> {
        generate(&Vocab::default(), 5, n, TypeMix::OBJECT_ONLY).unwrap()
    }

    #[test]
    fn reference_sizes_on_1200() {
        let s = split(&pool(1200), SplitSizes::default(), 1).unwrap();
        assert_eq!((s.proto.len(), s.train_probe.len(), s.validation.len(), s.test.len()), (256, 200, 200, 500));
        assert_eq!(s.train.len(), 44);
        s.check_disjoint().unwrap();
        assert_eq!(s.tagged().len(), 1200);
    }

    #[test]
    fn resplit_is_identical() {
        let p = pool(800);
        let sizes = SplitSizes { proto: 100, train_probe: 100, validation: 100, test: 100 };
        assert_eq!(split(&p, sizes, 3).unwrap(), split(&p, sizes, 3).unwrap());
        assert_ne!(split(&p, sizes, 3).unwrap(), split(&p, sizes, 4).unwrap());
    }

    #[test]
    fn insufficient_samples_is_input_error() {
        assert!(matches!(split(&pool(100), SplitSizes::default(), 0), Err(Error::Input(_))));
    }

    #[test]
    fn guard_rejects_test_samples() {
        let s = split(&pool(1200), SplitSizes::default(), 1).unwrap();
        let ids = s.test_ids();
        assert!(guard_no_test("patch", &s.proto, &ids).is_ok());
        let mut mixed = s.proto.clone();
        mixed.push(s.test[0].clone());
        assert!(matches!(guard_no_test("patch", &mixed, &ids), Err(Error::Protocol(_))));
    }

    #[test]
    fn file_round_trip() {
        let p = pool(1200);
        let s = split(&p, SplitSizes::default(), 2).unwrap();
        let header = DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            vocab: Vocab::default(),
            seed: 5,
            mix: TypeMix::OBJECT_ONLY,
            config_hash: "h".into(),
        };
        let file = DatasetFile::from_splits(header, &s);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        file.write(&path).unwrap();
        let back = DatasetFile::read(&path).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.splits().unwrap(), s);
    }
}
