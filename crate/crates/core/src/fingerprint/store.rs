//! Fingerprint JSON-lines files and cluster model JSON.

use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ClusterModel, Fingerprint, FingerprintError, Result};
use crate::collector::write_atomic;

/// One JSON object per line, in the given order.
pub fn write_fingerprints(path: impl AsRef<Path>, fingerprints: &[Fingerprint]) -> Result<()> {
    let mut out = Vec::new();
    for fp in fingerprints {
        serde_json::to_writer(&mut out, fp).map_err(|e| FingerprintError::Store(e.to_string()))?;
        out.push(b'\n');
    }
    write_atomic(path.as_ref(), &out)?;
    Ok(())
}

pub fn read_fingerprints(path: impl AsRef<Path>) -> Result<Vec<Fingerprint>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fp: Fingerprint =
            serde_json::from_str(&line).map_err(|e| FingerprintError::Store(format!("line {}: {e}", i + 1)))?;
        if fp.histogram.len() != fp.n {
            return Err(FingerprintError::Store(format!("line {}: histogram length {} != n {}", i + 1, fp.histogram.len(), fp.n)));
        }
        out.push(fp);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    dim: usize,
    inertia: f64,
    seed: u64,
    centroids: Vec<Vec<f64>>,
}

pub fn write_cluster_model(path: impl AsRef<Path>, model: &ClusterModel) -> Result<()> {
    let file = ModelFile {
        n: model.n,
        dim: model.dim(),
        inertia: model.inertia,
        seed: model.seed,
        centroids: model.centroids.rows().into_iter().map(|r| r.to_vec()).collect(),
    };
    let json = serde_json::to_vec(&file).map_err(|e| FingerprintError::Store(e.to_string()))?;
    write_atomic(path.as_ref(), &json)?;
    Ok(())
}

pub fn read_cluster_model(path: impl AsRef<Path>) -> Result<ClusterModel> {
    let bytes = std::fs::read(path)?;
    let file: ModelFile = serde_json::from_slice(&bytes).map_err(|e| FingerprintError::Store(e.to_string()))?;
    if file.centroids.len() != file.n || file.centroids.iter().any(|c| c.len() != file.dim) {
        return Err(FingerprintError::Store("centroid matrix does not match n x dim".into()));
    }
    let flat: Vec<f64> = file.centroids.into_iter().flatten().collect();
    let centroids = Array2::from_shape_vec((file.n, file.dim), flat).expect("checked shape");
    Ok(ClusterModel { centroids, n: file.n, inertia: file.inertia, seed: file.seed })
}
