//! Speaker-independent train/dev/test partitioning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Dev, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "test" => Ok(Partition::Test),
            other => Err(Error::Split(format!("unknown partition '{other}'"))),
        }
    }
}

/// The 64-bit LCG used for split shuffling. Fixed so that splits can be
/// reproduced bit-for-bit from any language.
#[derive(Debug, Clone)]
pub struct SplitRng {
    state: u64,
}

impl SplitRng {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Advances the state and returns its high 32 bits.
    pub fn next_u32(&mut self) -> u32 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        (self.state >> 32) as u32
    }

    /// Fisher–Yates from the back: for `i = n−1 … 1`, swap `i` with
    /// `next_u32() mod (i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_u32() as usize % (i + 1);
            items.swap(i, j);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const STANDARD: SplitRatios = SplitRatios {
        train: 0.6,
        dev: 0.2,
        test: 0.2,
    };

    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self> {
        let r = Self { train, dev, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = self.as_array();
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Split(
                "degenerate ratio: every partition needs a positive share".into(),
            ));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Split("ratios must sum to 1".into()));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.dev, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::STANDARD
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    /// Parses `"0.6,0.2,0.2"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Split(format!("cannot parse ratios '{s}'")))?;
        match parts.as_slice() {
            [a, b, c] => Self::new(*a, *b, *c),
            _ => Err(Error::Split("expected three comma-separated ratios".into())),
        }
    }
}

/// Speakers per partition: largest-remainder rounding of `ratios · speakers`
/// (ties to the earlier partition), then every empty partition takes one
/// speaker from the currently largest.
pub fn speaker_allocation(speakers: usize, ratios: &SplitRatios) -> Result<[usize; 3]> {
    ratios.validate()?;
    if speakers < 3 {
        return Err(Error::Split("≥ 3 speakers required".into()));
    }
    let quotas = ratios.as_array().map(|r| r * speakers as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut order = [0usize, 1, 2];
    // Stable sort keeps earlier partitions first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    let assigned: usize = counts.iter().sum();
    for &p in order.iter().take(speakers.saturating_sub(assigned)) {
        counts[p] += 1;
    }
    for p in 0..3 {
        if counts[p] == 0 {
            let donor = (0..3)
                .max_by_key(|&q| (counts[q], std::cmp::Reverse(q)))
                .unwrap();
            counts[donor] -= 1;
            counts[p] += 1;
        }
    }
    if counts.iter().sum::<usize>() != speakers || counts.contains(&0) {
        return Err(Error::Invariant(format!(
            "speaker allocation {counts:?} for {speakers} speakers"
        )));
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub dataset_id: String,
    pub seed: u64,
    pub assignment: BTreeMap<String, Partition>,
}

impl SplitAssignment {
    pub fn partition_of(&self, utterance_id: &str) -> Option<Partition> {
        self.assignment.get(utterance_id).copied()
    }

    /// Utterance ids in `partition`, sorted.
    pub fn members(&self, partition: Partition) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, p)| **p == partition)
            .map(|(u, _)| u.as_str())
            .collect()
    }

    pub fn speakers_in(&self, manifest: &Manifest, partition: Partition) -> BTreeSet<String> {
        manifest
            .utterances
            .iter()
            .filter(|u| self.partition_of(&u.utterance_id) == Some(partition))
            .map(|u| u.speaker_id.clone())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#split {} seed {}\n", self.dataset_id, self.seed);
        for (utt, part) in &self.assignment {
            let _ = writeln!(out, "{utt}\t{part}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (dataset_id, seed) = match fields.as_slice() {
            ["#split", id, "seed", seed] => (
                id.to_string(),
                seed.parse::<u64>()
                    .map_err(|_| Error::Split(format!("bad seed '{seed}'")))?,
            ),
            _ => {
                return Err(Error::Split(
                    "expected '#split <dataset_id> seed <n>'".into(),
                ))
            }
        };
        let mut assignment = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((utt, part)) = line.split_once('\t') else {
                return Err(Error::Split(format!(
                    "line {}: expected '<utterance>\\t<partition>'",
                    i + 2
                )));
            };
            if assignment.insert(utt.to_string(), part.parse()?).is_some() {
                return Err(Error::Split(format!(
                    "line {}: utterance '{utt}' listed twice",
                    i + 2
                )));
            }
        }
        Ok(Self {
            dataset_id,
            seed,
            assignment,
        })
    }
}

/// Shuffles the (sorted) speaker list with [`SplitRng`] and hands out whole
/// speakers: the first block to train, the next to dev, the rest to test.
pub fn make_speaker_split(
    manifest: &Manifest,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitAssignment> {
    let mut speakers: Vec<&str> = manifest.speakers().into_iter().collect();
    let counts = speaker_allocation(speakers.len(), ratios)?;
    SplitRng::new(seed).shuffle(&mut speakers);

    let mut speaker_part = BTreeMap::new();
    let mut cursor = 0;
    for (part, &n) in Partition::ALL.iter().zip(&counts) {
        for s in &speakers[cursor..cursor + n] {
            speaker_part.insert(*s, *part);
        }
        cursor += n;
    }
    let assignment = manifest
        .utterances
        .iter()
        .map(|u| (u.utterance_id.clone(), speaker_part[u.speaker_id.as_str()]))
        .collect();
    Ok(SplitAssignment {
        dataset_id: manifest.dataset_id.clone(),
        seed,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitViolation {
    SpeakerLeakage {
        speaker: String,
        partitions: Vec<Partition>,
    },
    UncoveredUtterance {
        utterance: String,
    },
    UnknownUtterance {
        utterance: String,
    },
    DatasetMismatch {
        manifest: String,
        split: String,
    },
}

impl fmt::Display for SplitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitViolation::SpeakerLeakage {
                speaker,
                partitions,
            } => {
                let parts: Vec<&str> = partitions.iter().map(|p| p.as_str()).collect();
                write!(
                    f,
                    "speaker leakage: speaker {speaker} appears in {}",
                    parts.join(", ")
                )
            }
            SplitViolation::UncoveredUtterance { utterance } => {
                write!(f, "uncovered utterance: {utterance}")
            }
            SplitViolation::UnknownUtterance { utterance } => {
                write!(f, "unknown utterance: {utterance} is not in the manifest")
            }
            SplitViolation::DatasetMismatch { manifest, split } => {
                write!(
                    f,
                    "dataset mismatch: manifest is {manifest}, split is {split}"
                )
            }
        }
    }
}

/// Lists every way `split` fails to be a speaker-disjoint cover of `manifest`.
pub fn validate_split(manifest: &Manifest, split: &SplitAssignment) -> Vec<SplitViolation> {
    let mut violations = Vec::new();
    if manifest.dataset_id != split.dataset_id {
        violations.push(SplitViolation::DatasetMismatch {
            manifest: manifest.dataset_id.clone(),
            split: split.dataset_id.clone(),
        });
    }
    let mut by_speaker: BTreeMap<&str, BTreeSet<Partition>> = BTreeMap::new();
    for u in &manifest.utterances {
        match split.partition_of(&u.utterance_id) {
            Some(p) => {
                by_speaker
                    .entry(u.speaker_id.as_str())
                    .or_default()
                    .insert(p);
            }
            None => violations.push(SplitViolation::UncoveredUtterance {
                utterance: u.utterance_id.clone(),
            }),
        }
    }
    for (speaker, parts) in by_speaker {
        if parts.len() > 1 {
            violations.push(SplitViolation::SpeakerLeakage {
                speaker: speaker.to_string(),
                partitions: parts.into_iter().collect(),
            });
        }
    }
    let known: BTreeSet<&str> = manifest
        .utterances
        .iter()
        .map(|u| u.utterance_id.as_str())
        .collect();
    for utt in split.assignment.keys() {
        if !known.contains(utt.as_str()) {
            violations.push(SplitViolation::UnknownUtterance {
                utterance: utt.clone(),
            });
        }
    }
    violations
}

pub fn write_split(split: &SplitAssignment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, split.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitAssignment> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SplitAssignment::parse(&text)
}
