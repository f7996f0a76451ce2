//! Feature files, corpus manifests and label files.
//!
//! Feature file layout (little-endian):
//!
//! ```text
//! "BNFT" | version u32 | scenario u8 | n_utts u32 | n_utts x record
//! record: id_len u32 | id (UTF-8) | bandwidth u8 | T u32 | D u32
//!         | T*D f32 (row-major) | has_labels u8 | [T x u32 labels]
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Bandwidth, FeatureScenario, FeatureTensor, Utterance};
use crate::error::{Error, Result};
use crate::fsio::{put_str, put_u32, write_atomic, Reader};

const FEATURE_MAGIC: &[u8; 4] = b"BNFT";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub scenario: FeatureScenario,
    pub utterances: Vec<Utterance>,
}

pub fn encode_feature_file(file: &FeatureFile) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, FEATURE_VERSION);
    out.push(file.scenario.code());
    put_u32(&mut out, file.utterances.len() as u32);
    for u in &file.utterances {
        let f = &u.features;
        put_str(&mut out, &f.utterance_id);
        out.push(f.bandwidth.flag());
        put_u32(&mut out, f.n_frames as u32);
        put_u32(&mut out, f.dim as u32);
        for &v in &f.frames {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        match &u.labels {
            Some(labels) => {
                out.push(1);
                for &l in labels {
                    put_u32(&mut out, l);
                }
            }
            None => out.push(0),
        }
    }
    out
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<FeatureFile> {
    let mut r = Reader::new(bytes, "feature file");
    if r.take(4).map_err(|_| Error::Format("feature file too short".into()))? != FEATURE_MAGIC {
        return Err(Error::Format("not a feature file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let scenario = FeatureScenario::from_code(r.u8()?)?;
    let n = r.u32()? as usize;
    let mut utterances = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let utterance_id = r.str()?;
        let bandwidth = Bandwidth::from_flag(r.u8()? as u32)?;
        let n_frames = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let raw = r.take(n_frames * dim * 4)?;
        let frames = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let labels = match r.u8()? {
            0 => None,
            1 => Some((0..n_frames).map(|_| r.u32()).collect::<Result<Vec<_>>>()?),
            other => return Err(Error::Corruption(format!("bad label marker {other}"))),
        };
        utterances.push(Utterance {
            features: FeatureTensor {
                utterance_id,
                bandwidth,
                n_frames,
                dim,
                frames,
            },
            labels,
        });
    }
    if !r.is_empty() {
        return Err(Error::Corruption("trailing bytes after last utterance".into()));
    }
    Ok(FeatureFile {
        scenario,
        utterances,
    })
}

pub fn write_feature_file(path: impl AsRef<Path>, file: &FeatureFile) -> Result<()> {
    write_atomic(path.as_ref(), &encode_feature_file(file))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(&bytes)
}

/// Manifest line: `wav_path<TAB>bandwidth<TAB>label_path`. Relative paths
/// are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub wav_path: PathBuf,
    pub bandwidth: Bandwidth,
    pub label_path: PathBuf,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "{}:{}: expected 3 tab-separated fields, got {}",
                path.display(),
                n + 1,
                fields.len()
            )));
        }
        let flag: u32 = fields[1].trim().parse().map_err(|_| {
            Error::Format(format!("{}:{}: bad bandwidth {:?}", path.display(), n + 1, fields[1]))
        })?;
        entries.push(ManifestEntry {
            wav_path: base.join(fields[0]),
            bandwidth: Bandwidth::from_flag(flag)?,
            label_path: base.join(fields[2]),
        });
    }
    Ok(entries)
}

/// Writes a manifest; paths are stored relative to `path`'s directory when
/// possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut text = String::new();
    for e in entries {
        writeln!(text, "{}\t{}\t{}", rel(&e.wav_path), e.bandwidth.flag(), rel(&e.label_path)).unwrap();
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| {
                Error::Format(format!("{}:{}: bad label {l:?}", path.display(), i + 1))
            })
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[u32]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels {
        writeln!(text, "{l}").unwrap();
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn utterance(id: &str, n_frames: usize, labels: bool) -> Utterance {
        Utterance {
            features: FeatureTensor {
                utterance_id: id.into(),
                bandwidth: Bandwidth::Narrowband,
                n_frames,
                dim: 3,
                frames: (0..n_frames * 3).map(|i| i as f64 * 0.5 - 1.0).collect(),
            },
            labels: labels.then(|| (0..n_frames as u32).collect()),
        }
    }

    #[test]
    fn layout_is_as_documented() {
        let file = FeatureFile {
            scenario: FeatureScenario::Upsample16k,
            utterances: vec![utterance("ab", 2, true)],
        };
        let b = encode_feature_file(&file);
        assert_eq!(&b[0..4], b"BNFT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(b[8], 1);
        assert_eq!(u32::from_le_bytes(b[9..13].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[13..17].try_into().unwrap()), 2);
        assert_eq!(&b[17..19], b"ab");
        assert_eq!(b[19], 1);
        // header + 6 floats + marker + 2 labels
        assert_eq!(b.len(), 19 + 1 + 8 + 24 + 1 + 8);
    }

    #[test]
    fn truncation_and_magic_errors() {
        let file = FeatureFile {
            scenario: FeatureScenario::Native,
            utterances: vec![utterance("x", 4, false)],
        };
        let b = encode_feature_file(&file);
        assert!(matches!(decode_feature_file(&b[..b.len() - 3]), Err(Error::Corruption(_))));
        assert!(matches!(decode_feature_file(b"BNMD\0\0\0\0"), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            ManifestEntry {
                wav_path: dir.path().join("wav/a.wav"),
                bandwidth: Bandwidth::Wideband,
                label_path: dir.path().join("lab/a.txt"),
            },
            ManifestEntry {
                wav_path: dir.path().join("wav/b.wav"),
                bandwidth: Bandwidth::Narrowband,
                label_path: dir.path().join("lab/b.txt"),
            },
        ];
        let path = dir.path().join("train.manifest");
        write_manifest(&path, &entries).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "wav/a.wav\t0\tlab/a.txt");
        assert_eq!(read_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn bad_manifest_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m");
        fs::write(&path, "a.wav\t7\ta.txt\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Flag(7))));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.txt");
        write_labels(&path, &[3, 1, 4]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "3\n1\n4\n");
        assert_eq!(read_labels(&path).unwrap(), vec![3, 1, 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn encode_decode_is_lossless_for_f32_values(
            frames in proptest::collection::vec(-1e3f32..1e3, 0..40),
            labelled in any::<bool>(),
            id in "[a-z0-9_]{0,12}",
        ) {
            let n_frames = frames.len() / 2;
            let u = Utterance {
                features: FeatureTensor {
                    utterance_id: id,
                    bandwidth: Bandwidth::Wideband,
                    n_frames,
                    dim: 2,
                    frames: frames[..n_frames * 2].iter().map(|&v| v as f64).collect(),
                },
                labels: labelled.then(|| vec![5; n_frames]),
            };
            let file = FeatureFile { scenario: FeatureScenario::Downsample8k, utterances: vec![u] };
            prop_assert_eq!(decode_feature_file(&encode_feature_file(&file)).unwrap(), file);
        }
    }
}
