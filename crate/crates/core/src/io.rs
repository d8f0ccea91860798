//! JSON interchange for tensors and kernels.
//!
//! A tensor file is `{"shape": [..], "data": [..]}` with data in row-major
//! order. Numbers are written with 17 significant digits, which is enough
//! for every `f64` to read back bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::kernel::{EvolutionKernel, Family};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Tensor { path: PathBuf, source: crate::Error },
}

#[derive(Deserialize)]
struct TensorFile {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Formats a finite `f64` with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn tensor_to_json(t: &Tensor) -> String {
    let mut s = String::with_capacity(t.len() * 24 + 32);
    s.push_str("{\"shape\":[");
    for (i, d) in t.shape().iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{d}");
    }
    s.push_str("],\"data\":[");
    for (i, v) in t.data().iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format_f64(*v));
    }
    s.push_str("]}");
    s
}

pub fn tensor_from_json(text: &str) -> Result<Tensor, crate::Error> {
    let f: TensorFile = serde_json::from_str(text)
        .map_err(|e| crate::Error::Config(format!("malformed tensor JSON: {e}")))?;
    Tensor::new(f.shape, f.data)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), IoError> {
    fs::write(path, tensor_to_json(t)).map_err(|source| IoError::Io {
        path: path.into(),
        source,
    })
}

pub fn read_tensor(path: &Path) -> Result<Tensor, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.into(),
        source,
    })?;
    let f: TensorFile = serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.into(),
        source,
    })?;
    Tensor::new(f.shape, f.data).map_err(|source| IoError::Tensor {
        path: path.into(),
        source,
    })
}

/// Sidecar written next to a dumped kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub family: Family,
    pub groups: usize,
    pub n: usize,
    pub shape: Vec<usize>,
}

impl KernelMeta {
    pub fn of(kernel: &EvolutionKernel) -> Self {
        Self {
            family: kernel.family(),
            groups: kernel.groups(),
            n: kernel.n(),
            shape: kernel.tensor().shape().to_vec(),
        }
    }
}

/// `kernel.json` gets the sidecar `kernel.json.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the kernel tensor to `path` and its metadata to [`meta_path`].
pub fn write_kernel(path: &Path, kernel: &EvolutionKernel) -> Result<PathBuf, IoError> {
    write_tensor(path, kernel.tensor())?;
    let meta = meta_path(path);
    let text =
        serde_json::to_string_pretty(&KernelMeta::of(kernel)).map_err(|source| IoError::Json {
            path: meta.clone(),
            source,
        })?;
    fs::write(&meta, text).map_err(|source| IoError::Io {
        path: meta.clone(),
        source,
    })?;
    Ok(meta)
}

pub fn read_kernel(path: &Path) -> Result<EvolutionKernel, IoError> {
    let t = read_tensor(path)?;
    let meta = meta_path(path);
    let text = fs::read_to_string(&meta).map_err(|source| IoError::Io {
        path: meta.clone(),
        source,
    })?;
    let m: KernelMeta = serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: meta.clone(),
        source,
    })?;
    EvolutionKernel::new(t, m.groups, m.family).map_err(|source| IoError::Tensor {
        path: path.into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::prng_fill;
    use proptest::prelude::*;

    #[test]
    fn format_has_seventeen_digits() {
        let s = format_f64(0.1);
        let mantissa: String = s
            .split('e')
            .next()
            .unwrap()
            .chars()
            .filter(char::is_ascii_digit)
            .collect();
        assert_eq!(mantissa.len(), 17);
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn malformed_json_is_rejected() {
        assert!(tensor_from_json("{\"shape\":[2],\"data\":[1]}").is_err());
        assert!(tensor_from_json("not json").is_err());
    }

    #[test]
    fn kernel_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.json");
        let w = crate::classic::ConvWeights::new(prng_fill(&[3, 3, 2, 2], 1).unwrap()).unwrap();
        let kern = crate::kernel::ev_fn_conv(&w, 2, 3).unwrap();
        let meta = write_kernel(&path, &kern).unwrap();
        assert!(meta.ends_with("k.json.meta.json"));
        assert_eq!(read_kernel(&path).unwrap(), kern);
    }

    proptest! {
        #[test]
        fn json_roundtrip_is_bitwise(n in 1usize..50, seed: u64, scale in -300i32..300) {
            let base = prng_fill(&[n], seed).unwrap();
            let data: Vec<f64> = base.data().iter().map(|v| v * 10f64.powi(scale)).collect();
            let t = Tensor::new(vec![n], data).unwrap();
            let back = tensor_from_json(&tensor_to_json(&t)).unwrap();
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&t));
        }
    }
}
