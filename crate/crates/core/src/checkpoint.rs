//! Tensor registry persistence.
//!
//! A model directory holds `manifest.json` and one `params/<name>.f32` blob per
//! named tensor (row-major little-endian f32). The manifest records every
//! tensor's shape next to the producing configuration, so any implementation
//! that knows the registry names can read the weights back.
//!
//! Trained parameters are rounded to f32 before they are handed out, which
//! makes save followed by load the identity on the in-memory values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::encoders::ParamTree;
use crate::error::{Error, Result};
use crate::graph::{read_json, write_json};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest<M> {
    pub kind: String,
    pub shapes: BTreeMap<String, [usize; 2]>,
    #[serde(flatten)]
    pub meta: M,
}

/// Rounds every tensor in the tree to the nearest f32.
pub fn quantize<P: ParamTree<Matrix>>(params: &mut P) {
    params.visit_mut("", &mut |_, m| m.mapv_inplace(|v| v as f32 as f64));
}

pub fn save_model<P, M>(dir: &Path, kind: &str, params: &P, meta: &M) -> Result<()>
where
    P: ParamTree<Matrix>,
    M: Serialize,
{
    let blobs = dir.join("params");
    fs::create_dir_all(&blobs).map_err(|e| Error::io(&blobs, e))?;
    let mut shapes = BTreeMap::new();
    let mut failure = None;
    params.visit("", &mut |name, m| {
        if failure.is_some() {
            return;
        }
        shapes.insert(name.clone(), [m.nrows(), m.ncols()]);
        let mut bytes = Vec::with_capacity(m.len() * 4);
        for v in m.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let path = blobs.join(format!("{name}.f32"));
        if let Err(e) = fs::write(&path, bytes) {
            failure = Some(Error::io(&path, e));
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let manifest = Manifest {
        kind: kind.to_string(),
        shapes,
        meta,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_manifest<M: DeserializeOwned>(dir: &Path, kind: &str) -> Result<Manifest<M>> {
    let path = dir.join("manifest.json");
    let manifest: Manifest<M> = read_json(&path)?;
    if manifest.kind != kind {
        return Err(Error::malformed(
            &path,
            format!("expected a {kind} manifest, found {}", manifest.kind),
        ));
    }
    Ok(manifest)
}

/// Fills every tensor of `params` (already of the right structure) from the blobs in `dir`.
pub fn load_into<P, M>(dir: &Path, manifest: &Manifest<M>, params: &mut P) -> Result<()>
where
    P: ParamTree<Matrix>,
{
    let blobs = dir.join("params");
    let mut failure = None;
    let mut seen = 0usize;
    params.visit_mut("", &mut |name, m| {
        if failure.is_some() {
            return;
        }
        seen += 1;
        let path = blobs.join(format!("{name}.f32"));
        let result = (|| {
            let shape = manifest
                .shapes
                .get(&name)
                .ok_or_else(|| Error::malformed(dir.join("manifest.json"), format!("missing tensor {name}")))?;
            if (shape[0], shape[1]) != m.dim() {
                return Err(Error::malformed(
                    dir.join("manifest.json"),
                    format!("tensor {name} has shape {shape:?}, expected {:?}", m.dim()),
                ));
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != m.len() * 4 {
                return Err(Error::malformed(
                    &path,
                    format!("expected {} bytes, found {}", m.len() * 4, bytes.len()),
                ));
            }
            for (v, c) in m.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
            Ok(())
        })();
        if let Err(e) = result {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if seen != manifest.shapes.len() {
        return Err(Error::malformed(
            dir.join("manifest.json"),
            format!("manifest lists {} tensors, model expects {seen}", manifest.shapes.len()),
        ));
    }
    Ok(())
}
