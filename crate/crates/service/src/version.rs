use std::fmt;
use std::io::{self, Read};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Hex SHA-256 over length-prefixed parts, so `["ab", "c"]` and
/// `["a", "bc"]` differ.
pub fn digest_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    hex::encode(hasher.finalize())
}

/// Identity of the models behind a fingerprint store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct StoreVersion {
    pub autoencoder_id: String,
    pub cluster_model_id: String,
    pub params_digest: String,
}

impl StoreVersion {
    /// `params` is any serializable description of the settings that shaped
    /// the fingerprints.
    pub fn new(autoencoder_id: String, cluster_model_id: String, params: &impl Serialize) -> Self {
        let json = serde_json::to_vec(params).expect("params serialize");
        StoreVersion { autoencoder_id, cluster_model_id, params_digest: digest_parts([&json[..]]) }
    }

    /// Short string stamped on every fingerprint.
    pub fn model_version(&self) -> String {
        let full = digest_parts([
            self.autoencoder_id.as_bytes(),
            self.cluster_model_id.as_bytes(),
            self.params_digest.as_bytes(),
        ]);
        full[..16].to_string()
    }
}

impl fmt::Display for StoreVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.model_version())
    }
}
