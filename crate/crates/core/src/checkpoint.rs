//! Single-file tensor container used for checkpoints and extractor weights.
//!
//! The file is a safetensors archive of `f64` arrays. Names carry a kind
//! prefix (`param/`, `buffer/`, `adam.m/`, `adam.v/`); string metadata holds
//! the format tag, version and anything the caller adds.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use hazemeta_grad::Tensor;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const FORMAT_TAG: &str = "hazemeta";
pub const FORMAT_VERSION: &str = "1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub params: ParamSet,
    /// `(name, first moment, second moment)` optimizer state.
    pub moments: Vec<(String, Tensor, Tensor)>,
    pub metadata: BTreeMap<String, String>,
}

fn bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let mut named: Vec<(String, &Tensor)> = Vec::new();
    for (k, t) in c.params.params() {
        named.push((format!("param/{k}"), t));
    }
    for (k, t) in c.params.buffers() {
        named.push((format!("buffer/{k}"), t));
    }
    for (k, m, v) in &c.moments {
        named.push((format!("adam.m/{k}"), m));
        named.push((format!("adam.v/{k}"), v));
    }
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = named
        .into_iter()
        .map(|(k, t)| (k, t.shape().to_vec(), bytes(t)))
        .collect();
    let views = raw
        .iter()
        .map(|(k, shape, b)| {
            TensorView::new(Dtype::F64, shape.clone(), b)
                .map(|v| (k.clone(), v))
                .map_err(|e| ckpt_err(path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta: HashMap<String, String> = c.metadata.clone().into_iter().collect();
    meta.insert("format".into(), FORMAT_TAG.into());
    meta.insert("version".into(), FORMAT_VERSION.into());
    let buf = safetensors::serialize(views, &Some(meta)).map_err(|e| ckpt_err(path, e.to_string()))?;

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    fs::write(&tmp, buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(|e| ckpt_err(path, e.to_string()))?;
    let metadata: BTreeMap<String, String> = header
        .metadata()
        .clone()
        .unwrap_or_default()
        .into_iter()
        .collect();
    match (metadata.get("format"), metadata.get("version")) {
        (Some(f), Some(v)) if f == FORMAT_TAG && v == FORMAT_VERSION => {}
        (f, v) => {
            return Err(ckpt_err(
                path,
                format!("unsupported container (format {f:?}, version {v:?})"),
            ))
        }
    }
    let st = SafeTensors::deserialize(&buf).map_err(|e| ckpt_err(path, e.to_string()))?;
    let mut params = ParamSet::new();
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 {
            return Err(ckpt_err(path, format!("{name}: expected f64, found {:?}", view.dtype())));
        }
        let data: Vec<f64> = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::try_new(view.shape(), data)
            .ok_or_else(|| ckpt_err(path, format!("{name}: data does not match shape")))?;
        let (kind, key) = name
            .split_once('/')
            .ok_or_else(|| ckpt_err(path, format!("tensor {name} has no kind prefix")))?;
        match kind {
            "param" => params.insert_param(key, t),
            "buffer" => params.insert_buffer(key, t),
            "adam.m" => {
                first.insert(key.to_string(), t);
            }
            "adam.v" => {
                second.insert(key.to_string(), t);
            }
            _ => return Err(ckpt_err(path, format!("unknown tensor kind in {name}"))),
        }
    }
    let mut moments = Vec::with_capacity(first.len());
    for (k, m) in first {
        let v = second
            .remove(&k)
            .ok_or_else(|| ckpt_err(path, format!("second moment missing for {k}")))?;
        moments.push((k, m, v));
    }
    if let Some(k) = second.keys().next() {
        return Err(ckpt_err(path, format!("first moment missing for {k}")));
    }
    Ok(Container {
        params,
        moments,
        metadata,
    })
}
