//! On-disk cache for oracle results, enabled by `VBSE_CACHE_DIR`.
//!
//! Entries are keyed by the SHA-256 of the serialized Hamiltonian plus any
//! extra inputs (initial state, sample times).

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use vbse_core::circuits::{local_expectation, HybridState};
use vbse_core::models::{exact_ground_state, exact_trajectory, SPIN};
use vbse_core::operators::{pauli, Pauli, SumOfProducts};

use crate::error::CliError;

pub const CACHE_ENV: &str = "VBSE_CACHE_DIR";

#[derive(Debug, Clone)]
pub struct OracleCache {
    dir: Option<PathBuf>,
}

impl OracleCache {
    pub fn from_env() -> Self {
        Self { dir: std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from) }
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Ground energy and state of `h`.
    pub fn ground_state(&self, h: &SumOfProducts) -> Result<(f64, HybridState), CliError> {
        let key = key("ground", &[&bytes(h)?]);
        self.get_or_compute(&key, || Ok(exact_ground_state(h)?))
    }

    /// Exact `<sigma_z>` of the spin at each time, starting from `psi0`.
    pub fn sz_trajectory(&self, h: &SumOfProducts, psi0: &HybridState, times: &[f64]) -> Result<Vec<f64>, CliError> {
        let key = key("sz", &[&bytes(h)?, &bytes(psi0)?, &bytes(times)?]);
        self.get_or_compute(&key, || {
            let z = pauli(Pauli::Z);
            exact_trajectory(h, psi0, times)?.iter().map(|s| Ok(local_expectation(s, SPIN, &z)?)).collect()
        })
    }

    fn get_or_compute<T, F>(&self, key: &str, compute: F) -> Result<T, CliError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, CliError>,
    {
        let Some(dir) = &self.dir else {
            return compute();
        };
        let path = dir.join(format!("{key}.json"));
        if let Ok(text) = std::fs::read(&path) {
            // a corrupt entry is recomputed and overwritten
            if let Ok(v) = serde_json::from_slice(&text) {
                return Ok(v);
            }
        }
        let value = compute()?;
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let tmp = dir.join(format!("{key}.{}.tmp", std::process::id()));
        std::fs::write(&tmp, bytes(&value)?).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(value)
    }
}

fn bytes<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>, CliError> {
    Ok(serde_json::to_vec(v).map_err(vbse_core::Error::from)?)
}

fn key(kind: &str, parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_bytes());
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    format!("{kind}-{}", hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vbse_core::models::{build_spin_boson, spin_up_vacuum, BathMode, SpinBosonParams};

    fn model() -> SumOfProducts {
        build_spin_boson(&SpinBosonParams { epsilon: 0.0, delta: 1.0, modes: vec![BathMode { omega: 1.0, g: 1.0 }], n_levels: 4 }).unwrap()
    }

    #[test]
    fn cached_values_match_fresh_ones() {
        let dir = tempfile::tempdir().unwrap();
        let cache = OracleCache::at(dir.path());
        let h = model();
        let (e1, s1) = cache.ground_state(&h).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let (e2, s2) = cache.ground_state(&h).unwrap();
        assert_eq!(e1.to_bits(), e2.to_bits());
        assert_eq!(s1, s2);

        let psi = spin_up_vacuum(h.dofs().to_vec()).unwrap();
        let times = [0.0, 0.5, 1.0];
        let a = cache.sz_trajectory(&h, &psi, &times).unwrap();
        let b = cache.sz_trajectory(&h, &psi, &times).unwrap();
        let fresh = OracleCache::disabled().sz_trajectory(&h, &psi, &times).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, fresh);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn keys_separate_inputs() {
        let h = model();
        let k1 = key("sz", &[&serde_json::to_vec(&h).unwrap(), b"[0.0]"]);
        let k2 = key("sz", &[&serde_json::to_vec(&h).unwrap(), b"[0.5]"]);
        let k3 = key("ground", &[&serde_json::to_vec(&h).unwrap(), b"[0.0]"]);
        assert_ne!(k1, k2);
        assert_ne!(k1, k3);
    }
}
