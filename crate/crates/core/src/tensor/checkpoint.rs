//! `model.json` + `weights.f32` checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, MlpSpec};
use crate::io::{self, ArtifactMeta};
use crate::{Error, Result};

pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(flatten)]
    pub meta: ArtifactMeta,
    /// What the network computes, e.g. `"local_metric"` or `"global_metric"`.
    pub kind: String,
    pub architecture: MlpSpec,
    pub p: f32,
    pub latent_dim: usize,
    pub parameter_count: usize,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub fn save_checkpoint(dir: &Path, checkpoint: &Checkpoint, net: &Mlp) -> Result<()> {
    if checkpoint.architecture != *net.spec() {
        return Err(Error::invalid("checkpoint architecture does not match network"));
    }
    io::write_atomic(&dir.join(WEIGHTS_FILE), &io::f32_to_le_bytes(&net.flat_parameters()))?;
    io::write_json(&dir.join(MODEL_FILE), checkpoint)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Checkpoint, Mlp)> {
    let model_path = dir.join(MODEL_FILE);
    let checkpoint: Checkpoint = io::read_json(&model_path)?;
    checkpoint.meta.check(&model_path)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let flat = io::f32_from_le_bytes(&weights_path, &io::read_required(&weights_path)?)?;
    let net = Mlp::from_flat(checkpoint.architecture.clone(), &flat)
        .map_err(|e| Error::artifact(&weights_path, e.to_string()))?;
    Ok((checkpoint, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::tensor::Activation;

    #[test]
    fn checkpoint_roundtrip() {
        let spec = MlpSpec {
            input: 4,
            hidden: vec![3],
            output: 2,
            output_activation: Activation::Identity,
        };
        let net = Mlp::new(spec.clone(), &mut seed::rng(5, 0, 0));
        let ck = Checkpoint {
            meta: ArtifactMeta::new("abc"),
            kind: "global_metric".into(),
            architecture: spec,
            p: 2.0,
            latent_dim: 2,
            parameter_count: net.parameter_count(),
            extra: BTreeMap::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &ck, &net).unwrap();
        let (ck2, net2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(ck, ck2);
        assert_eq!(net, net2);
        let bytes = std::fs::read(dir.path().join(WEIGHTS_FILE)).unwrap();
        assert_eq!(bytes.len(), 4 * net.parameter_count());
    }
}
