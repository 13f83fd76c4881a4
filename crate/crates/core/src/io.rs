//! Tensor files: a raw little-endian `f64` payload (`<name>.bin`) next to a
//! JSON sidecar (`<name>.json`) that declares kind, shape and units.
//!
//! ```text
//! {"kind":"image","shape":[64,64],"dtype":"f64le","units":"1/mm","pixel_size_mm":2.65625}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Image, Sinogram};

pub const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Image(Image),
    Sinogram(Sinogram),
    Feature(FeatureMap),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Image,
    Sinogram,
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub units: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixel_size_mm: Option<f64>,
}

impl Tensor {
    pub fn kind(&self) -> TensorKind {
        match self {
            Tensor::Image(_) => TensorKind::Image,
            Tensor::Sinogram(_) => TensorKind::Sinogram,
            Tensor::Feature(_) => TensorKind::Feature,
        }
    }

    fn payload(&self) -> &[f64] {
        match self {
            Tensor::Image(t) => t.values(),
            Tensor::Sinogram(t) => t.values(),
            Tensor::Feature(t) => t.values(),
        }
    }

    fn sidecar(&self) -> Sidecar {
        let (shape, units, pixel_size_mm) = match self {
            Tensor::Image(t) => (vec![t.height(), t.width()], "1/mm", Some(t.pixel_size())),
            Tensor::Sinogram(t) => (vec![t.n_views(), t.n_detectors()], "line integral", None),
            Tensor::Feature(t) => (vec![t.channels(), t.locations()], "feature", None),
        };
        Sidecar {
            kind: self.kind(),
            shape,
            dtype: DTYPE.to_string(),
            units: units.to_string(),
            pixel_size_mm,
        }
    }

    pub fn into_image(self) -> Option<Image> {
        match self {
            Tensor::Image(t) => Some(t),
            _ => None,
        }
    }

    pub fn into_sinogram(self) -> Option<Sinogram> {
        match self {
            Tensor::Sinogram(t) => Some(t),
            _ => None,
        }
    }
}

impl From<Image> for Tensor {
    fn from(t: Image) -> Self {
        Tensor::Image(t)
    }
}

impl From<Sinogram> for Tensor {
    fn from(t: Sinogram) -> Self {
        Tensor::Sinogram(t)
    }
}

impl From<FeatureMap> for Tensor {
    fn from(t: FeatureMap) -> Self {
        Tensor::Feature(t)
    }
}

/// Resolves `<base>`, `<base>.bin` or `<base>.json` to the two file paths.
pub fn tensor_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".bin")
        .or_else(|| s.strip_suffix(".json"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{base}.bin")),
        PathBuf::from(format!("{base}.json")),
    )
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    let (bin, json) = tensor_paths(path);
    let payload = t.payload();
    let mut bytes = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let mut text = serde_json::to_string(&t.sidecar()).expect("sidecar serializes");
    text.push('\n');
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let (_, json) = tensor_paths(path);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Sidecar {
        path: json.clone(),
        reason: e.to_string(),
    })?;
    if sidecar.dtype != DTYPE {
        return Err(Error::Sidecar {
            path: json,
            reason: format!("unsupported dtype {:?}", sidecar.dtype),
        });
    }
    if sidecar.shape.len() != 2 {
        return Err(Error::Sidecar {
            path: json,
            reason: format!("expected a 2-D shape, got {:?}", sidecar.shape),
        });
    }
    Ok(sidecar)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let sidecar = read_sidecar(path)?;
    let (bin, json) = tensor_paths(path);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Shape(format!(
            "{}: payload of {} bytes is not a whole number of f64 values",
            bin.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let (rows, cols) = (sidecar.shape[0], sidecar.shape[1]);
    Ok(match sidecar.kind {
        TensorKind::Image => {
            let pixel_size = sidecar.pixel_size_mm.ok_or_else(|| Error::Sidecar {
                path: json,
                reason: "image sidecar lacks pixel_size_mm".into(),
            })?;
            Tensor::Image(Image::new(rows, cols, pixel_size, values)?)
        }
        TensorKind::Sinogram => Tensor::Sinogram(Sinogram::new(rows, cols, values)?),
        TensorKind::Feature => Tensor::Feature(FeatureMap::new(rows, cols, values)?),
    })
}

pub fn read_image(path: &Path) -> Result<Image> {
    read_tensor(path)?.into_image().ok_or_else(|| Error::Sidecar {
        path: tensor_paths(path).1,
        reason: "expected kind \"image\"".into(),
    })
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    read_tensor(path)?.into_sinogram().ok_or_else(|| Error::Sidecar {
        path: tensor_paths(path).1,
        reason: "expected kind \"sinogram\"".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z");
        let img = Image::zeros(2, 2, 0.5);
        write_tensor(&img.clone().into(), &p).unwrap();
        let bytes = fs::read(dir.path().join("z.bin")).unwrap();
        assert_eq!(bytes, vec![0u8; 32]);
        assert!(dir.path().join("z.json").exists());
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        fs::write(dir.path().join("bad.bin"), [0u8; 24]).unwrap();
        fs::write(
            dir.path().join("bad.json"),
            r#"{"kind":"image","shape":[2,2],"dtype":"f64le","units":"1/mm","pixel_size_mm":1.0}"#,
        )
        .unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_or_corrupt_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t");
        fs::write(dir.path().join("t.bin"), [0u8; 8]).unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::Io { .. })));
        fs::write(dir.path().join("t.json"), "{not json").unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::Sidecar { .. })));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n");
        fs::write(dir.path().join("n.bin"), f64::INFINITY.to_le_bytes()).unwrap();
        fs::write(
            dir.path().join("n.json"),
            r#"{"kind":"sinogram","shape":[1,1],"dtype":"f64le","units":"line integral"}"#,
        )
        .unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn random_image_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.bin");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..64 * 64).map(|_| rng.random::<f64>() * 1e3 - 500.0).collect();
        let img = Image::new(64, 64, 0.6640625, vals).unwrap();
        write_tensor(&img.clone().into(), &p).unwrap();
        let back = read_image(&p).unwrap();
        let a: Vec<u64> = img.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.pixel_size().to_bits(), img.pixel_size().to_bits());
    }

    #[test]
    fn writes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeatureMap::new(2, 3, vec![0.1, 0.2, 0.3, -1.0, 1e-300, 5.0]).unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        write_tensor(&f.clone().into(), &a).unwrap();
        write_tensor(&f.into(), &a).unwrap();
        let first = fs::read(dir.path().join("a.bin")).unwrap();
        let t = read_tensor(&a).unwrap();
        write_tensor(&t, &b).unwrap();
        assert_eq!(first, fs::read(dir.path().join("b.bin")).unwrap());
        assert_eq!(
            fs::read(dir.path().join("a.json")).unwrap(),
            fs::read(dir.path().join("b.json")).unwrap()
        );
    }
}
