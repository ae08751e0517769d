//! Stage manifests: every pipeline stage records its parameters and the
//! SHA-256 of each input artifact, so downstream stages can refuse
//! mismatched inputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STAGE_MANIFEST: &str = "stage-manifest.json";
/// The maps stage uses its own manifest name since its parameter record
/// (lambda, thresholds, TEs) is a documented output in its own right.
pub const MAPS_MANIFEST: &str = "maps-manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageManifest {
    pub stage: String,
    pub parameters: serde_json::Value,
    /// Input label -> SHA-256 hex of the referenced file.
    pub inputs: BTreeMap<String, String>,
    /// Omitted for stages whose reruns must be byte-identical.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<u64>,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let digest = h.finalize();
    let mut hex = String::with_capacity(digest.len() * 2);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

impl StageManifest {
    pub fn new(stage: impl Into<String>, parameters: serde_json::Value) -> Self {
        StageManifest {
            stage: stage.into(),
            parameters,
            inputs: BTreeMap::new(),
            wall_ms: None,
        }
    }

    /// Record `path` as an input under `label`.
    pub fn add_input(&mut self, label: impl Into<String>, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.insert(label.into(), sha256_file(path)?);
        Ok(())
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path.as_ref(), json)?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<StageManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingInput(format!("no stage manifest at {}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("bad stage manifest: {e}")))
    }
}

/// Verify that the manifest recorded `expected` (a current file) under
/// `label`; mismatch or absence is a provenance failure.
pub fn check_input(
    manifest: &StageManifest,
    label: &str,
    expected_path: impl AsRef<Path>,
) -> Result<()> {
    let expected_path = expected_path.as_ref();
    let recorded = manifest.inputs.get(label).ok_or_else(|| {
        Error::Provenance(format!(
            "{} stage manifest records no input '{label}'",
            manifest.stage
        ))
    })?;
    let actual = sha256_file(expected_path)?;
    if *recorded != actual {
        return Err(Error::Provenance(format!(
            "{} stage consumed '{label}' with hash {recorded}, but {} hashes to {actual}",
            manifest.stage,
            expected_path.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip_and_check() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.bin");
        std::fs::write(&input, b"payload").unwrap();
        let mut m = StageManifest::new("test", serde_json::json!({"k": 1}));
        m.add_input("input", &input).unwrap();
        m.wall_ms = Some(12);
        let path = dir.path().join(STAGE_MANIFEST);
        m.write_to(&path).unwrap();
        let back = StageManifest::read_from(&path).unwrap();
        assert_eq!(back.stage, "test");
        assert_eq!(back.wall_ms, Some(12));
        check_input(&back, "input", &input).unwrap();

        std::fs::write(&input, b"tampered").unwrap();
        let err = check_input(&back, "input", &input).unwrap_err();
        assert!(matches!(err, Error::Provenance(_)), "{err}");
        assert!(check_input(&back, "absent", &input).is_err());
    }

    #[test]
    fn wall_ms_none_is_omitted_from_json() {
        let dir = tempfile::tempdir().unwrap();
        let m = StageManifest::new("phantom", serde_json::json!({}));
        let p = dir.path().join(STAGE_MANIFEST);
        m.write_to(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains("wall_ms"));
    }
}
