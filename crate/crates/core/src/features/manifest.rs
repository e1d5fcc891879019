use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub utterance_id: String,
    pub speaker_id: String,
    pub label: String,
    pub duration_s: f64,
    pub audio_path: String,
}

/// A corpus listing: one header line, then one tab-separated line per utterance.
///
/// ```text
/// #dataset emodb classes anger,boredom,disgust,fear,happiness,neutral,sadness
/// 03a01Fa\t03\thappiness\t1.90\twav/03a01Fa.wav
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub class_names: Vec<String>,
    pub utterances: Vec<UtteranceMeta>,
}

impl Manifest {
    /// Builds a manifest after checking ids are unique, labels are declared,
    /// and durations are positive.
    pub fn new(
        dataset_id: impl Into<String>,
        class_names: Vec<String>,
        utterances: Vec<UtteranceMeta>,
    ) -> Result<Self> {
        let m = Self {
            dataset_id: dataset_id.into(),
            class_names,
            utterances,
        };
        m.check_invariants()?;
        Ok(m)
    }

    fn check_invariants(&self) -> Result<()> {
        let bad = |line: usize, message: String| Error::Manifest { line, message };
        if self.dataset_id.is_empty() || self.dataset_id.contains(char::is_whitespace) {
            return Err(bad(1, format!("invalid dataset id '{}'", self.dataset_id)));
        }
        if self.class_names.is_empty() {
            return Err(bad(1, "no classes declared".into()));
        }
        let mut classes = HashSet::new();
        for c in &self.class_names {
            if c.is_empty() || !classes.insert(c.as_str()) {
                return Err(bad(1, format!("empty or duplicate class '{c}'")));
            }
        }
        let mut ids = HashSet::new();
        for (i, u) in self.utterances.iter().enumerate() {
            let line = i + 2;
            if !ids.insert(u.utterance_id.as_str()) {
                return Err(bad(
                    line,
                    format!("duplicate utterance_id '{}'", u.utterance_id),
                ));
            }
            if !classes.contains(u.label.as_str()) {
                return Err(bad(line, format!("label '{}' not in class_names", u.label)));
            }
            if !(u.duration_s.is_finite() && u.duration_s > 0.0) {
                return Err(bad(
                    line,
                    format!("duration {} must be positive", u.duration_s),
                ));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Manifest {
            line: 1,
            message: "empty manifest".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (dataset_id, class_names) = match fields.as_slice() {
            ["#dataset", id, "classes", classes] => (
                id.to_string(),
                classes.split(',').map(str::to_string).collect::<Vec<_>>(),
            ),
            _ => {
                return Err(Error::Manifest {
                    line: 1,
                    message: "expected '#dataset <id> classes <c1,c2,...>'".into(),
                })
            }
        };

        let mut utterances = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let parts: Vec<&str> = line.split('\t').collect();
            let [utt, speaker, label, duration, audio] = parts.as_slice() else {
                return Err(Error::Manifest {
                    line: lineno,
                    message: format!("expected 5 tab-separated fields, found {}", parts.len()),
                });
            };
            let duration_s: f64 = duration.parse().map_err(|_| Error::Manifest {
                line: lineno,
                message: format!("bad duration '{duration}'"),
            })?;
            if utt.is_empty() || speaker.is_empty() {
                return Err(Error::Manifest {
                    line: lineno,
                    message: "empty utterance or speaker id".into(),
                });
            }
            utterances.push(UtteranceMeta {
                utterance_id: utt.to_string(),
                speaker_id: speaker.to_string(),
                label: label.to_string(),
                duration_s,
                audio_path: audio.to_string(),
            });
        }
        Self::new(dataset_id, class_names, utterances)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#dataset {} classes {}\n",
            self.dataset_id,
            self.class_names.join(",")
        );
        for u in &self.utterances {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                u.utterance_id, u.speaker_id, u.label, u.duration_s, u.audio_path
            );
        }
        out
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.utterances
            .iter()
            .map(|u| u.speaker_id.as_str())
            .collect()
    }

    pub fn speaker_count(&self) -> usize {
        self.speakers().len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }

    /// Labels as class indices, in utterance order.
    pub fn label_indices(&self) -> Vec<usize> {
        self.utterances
            .iter()
            .map(|u| {
                self.class_index(&u.label)
                    .expect("labels checked on construction")
            })
            .collect()
    }

    /// For catalog corpora, checks utterance, speaker, and class counts
    /// against the published corpus description.
    pub fn check_catalog_counts(&self) -> Result<()> {
        let Some(info) = catalog::dataset(&self.dataset_id) else {
            return Ok(());
        };
        let got = (
            self.utterances.len(),
            self.speaker_count(),
            self.class_count(),
        );
        let want = (info.utterances, info.speakers, info.classes);
        if got != want {
            return Err(Error::Manifest {
                line: 1,
                message: format!(
                    "{} should have (utterances, speakers, classes) = {want:?}, found {got:?}",
                    info.name
                ),
            });
        }
        Ok(())
    }
}

/// Reads and validates a manifest. Catalog corpora must match their
/// published counts.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = Manifest::parse(&text)?;
    manifest.check_catalog_counts()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, manifest.to_text()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emodb_like() -> Manifest {
        let classes: Vec<String> = [
            "anger",
            "boredom",
            "disgust",
            "fear",
            "happiness",
            "neutral",
            "sadness",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let utterances = (0..535)
            .map(|i| UtteranceMeta {
                utterance_id: format!("utt{i:04}"),
                speaker_id: format!("spk{:02}", i % 10),
                label: classes[i % 7].clone(),
                duration_s: 2.8,
                audio_path: format!("wav/utt{i:04}.wav"),
            })
            .collect();
        Manifest::new("emodb", classes, utterances).unwrap()
    }

    #[test]
    fn emodb_counts_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emodb.tsv");
        write_manifest(&emodb_like(), &path).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.utterances.len(), 535);
        assert_eq!(m.speaker_count(), 10);
        assert_eq!(m.class_count(), 7);
        assert_eq!(m, emodb_like());
    }

    #[test]
    fn catalog_count_mismatch_rejected() {
        let mut m = emodb_like();
        m.utterances.pop();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emodb.tsv");
        write_manifest(&m, &path).unwrap();
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn single_utterance_manifest() {
        let m = Manifest::parse("#dataset toy classes a,b\nu1\ts1\ta\t1.5\tx.wav\n").unwrap();
        assert_eq!((m.utterances.len(), m.speaker_count()), (1, 1));
        assert_eq!(m.label_indices(), vec![0]);
    }

    #[test]
    fn undeclared_label_rejected() {
        let err = Manifest::parse("#dataset toy classes anger,sad\nu1\ts1\tjoy\t1.0\tx.wav\n")
            .unwrap_err();
        assert!(
            err.to_string().contains("'joy' not in class_names"),
            "{err}"
        );
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(Manifest::parse("").is_err());
        assert!(Manifest::parse("#dataset toy\n").is_err());
        let dup = "#dataset toy classes a\nu1\ts1\ta\t1.0\tx\nu1\ts2\ta\t1.0\ty\n";
        assert!(matches!(
            Manifest::parse(dup),
            Err(Error::Manifest { line: 3, .. })
        ));
        let short = "#dataset toy classes a\nu1\ts1\ta\t1.0\n";
        assert!(Manifest::parse(short).is_err());
        let bad_dur = "#dataset toy classes a\nu1\ts1\ta\tlong\tx\n";
        assert!(Manifest::parse(bad_dur).is_err());
        let zero_dur = "#dataset toy classes a\nu1\ts1\ta\t0\tx\n";
        assert!(Manifest::parse(zero_dur).is_err());
    }
}
