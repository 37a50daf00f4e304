use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mlp::MlpParams;

const FORMAT: &str = "meshdeform-checkpoint";
const VERSION: u32 = 1;

/// Named parameter sets stored as JSON with an architecture fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub modules: Vec<(String, MlpParams)>,
}

/// `name:arch` pairs joined with `;`.
pub fn fingerprint(modules: &[(&str, &MlpParams)]) -> String {
    modules
        .iter()
        .map(|(name, m)| format!("{name}:{}", m.fingerprint()))
        .collect::<Vec<_>>()
        .join(";")
}

impl Checkpoint {
    pub fn new(modules: &[(&str, &MlpParams)]) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            fingerprint: fingerprint(modules),
            modules: modules.iter().map(|(n, m)| (n.to_string(), (*m).clone())).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint and checks it against `expected_fingerprint`.
    pub fn load(path: &Path, expected_fingerprint: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        if ck.fingerprint != expected_fingerprint {
            return Err(Error::Checkpoint(format!(
                "{}: architecture {} does not match expected {}",
                path.display(),
                ck.fingerprint,
                expected_fingerprint
            )));
        }
        // Re-validate shapes; the fingerprint alone is only a string.
        let refs: Vec<(&str, &MlpParams)> = ck.modules.iter().map(|(n, m)| (n.as_str(), m)).collect();
        if fingerprint(&refs) != ck.fingerprint {
            return Err(Error::Checkpoint(format!("{}: fingerprint does not match stored tensors", path.display())));
        }
        for (name, m) in &ck.modules {
            MlpParams::new(m.input_dim(), m.layers().to_vec())
                .map_err(|e| Error::Checkpoint(format!("{}: module {name}: {e}", path.display())))?;
        }
        Ok(ck)
    }

    pub fn module(&self, name: &str) -> Result<&MlpParams> {
        self.modules
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no module {name}")))
    }
}
