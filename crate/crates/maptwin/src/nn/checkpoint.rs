//! Parameter checkpoints: a little-endian binary blob plus a JSON sidecar
//! describing the tensor shapes. Loading validates the shapes against the
//! spec before touching the payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{NetSpec, Params};
use super::tensor::Tensor;
use super::NnError;

const MAGIC: &[u8; 4] = b"MTNN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    shapes: Vec<Vec<usize>>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn save_params(path: impl AsRef<Path>, params: &Params) -> Result<(), NnError> {
    let path = path.as_ref();
    let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();

    let mut blob = Vec::new();
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&VERSION.to_le_bytes());
    blob.extend_from_slice(&(params.tensors().len() as u64).to_le_bytes());
    for t in params.tensors() {
        for &v in t.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&blob)?;

    let sidecar = Sidecar { version: VERSION, shapes };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>, spec: &NetSpec) -> Result<Params, NnError> {
    let path = path.as_ref();
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.version != VERSION {
        return Err(NnError::BadCheckpoint(format!(
            "unsupported version {}",
            sidecar.version
        )));
    }
    let expected: Vec<Vec<usize>> = spec.param_shapes().iter().map(|&(r, c)| vec![r, c]).collect();
    if sidecar.shapes != expected {
        return Err(NnError::BadCheckpoint(
            "sidecar shapes do not match the network spec".into(),
        ));
    }

    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::BadCheckpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word)?;
    if u32::from_le_bytes(word) != VERSION {
        return Err(NnError::BadCheckpoint("blob/sidecar version mismatch".into()));
    }
    let mut long = [0u8; 8];
    f.read_exact(&mut long)?;
    if u64::from_le_bytes(long) != sidecar.shapes.len() as u64 {
        return Err(NnError::BadCheckpoint("tensor count mismatch".into()));
    }

    let mut tensors = Vec::with_capacity(sidecar.shapes.len());
    for shape in sidecar.shapes {
        let count: usize = shape.iter().product();
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            f.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        tensors.push(Tensor::new(shape, values)?);
    }
    // Trailing garbage means the blob does not belong to the sidecar.
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(NnError::BadCheckpoint("trailing bytes".into()));
    }
    Ok(Params::from_tensors(tensors))
}
