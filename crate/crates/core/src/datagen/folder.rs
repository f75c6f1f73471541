//! Image folders and JSON-lines manifests.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SamplePair;
use crate::error::{Error, Result};
use crate::image::Image;

/// How files in a folder become samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PairingRule {
    /// `<root>/<hazy_dir>/a.png` pairs with `<root>/<clear_dir>/a.png`.
    Paired {
        hazy_dir: String,
        clear_dir: String,
        domain_id: usize,
    },
    /// Every image in `<root>` is an unlabeled hazy sample.
    HazyOnly,
}

impl PairingRule {
    pub fn paired(domain_id: usize) -> Self {
        Self::Paired {
            hazy_dir: "hazy".into(),
            clear_dir: "clear".into(),
            domain_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FolderDataset {
    Pairs(Vec<SamplePair>),
    Hazy(Vec<Image>),
}

impl FolderDataset {
    pub fn len(&self) -> usize {
        match self {
            FolderDataset::Pairs(p) => p.len(),
            FolderDataset::Hazy(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn try_load(path: &Path) -> Option<Image> {
    match Image::load_png(path) {
        Ok(im) => Some(im),
        Err(e) => {
            log::warn!("skipping {}: {e}", path.display());
            None
        }
    }
}

/// Loads a folder under `rule`. Undecodable files are skipped with a warning.
pub fn ingest_image_folder(root: &Path, rule: &PairingRule) -> Result<FolderDataset> {
    let data = match rule {
        PairingRule::HazyOnly => FolderDataset::Hazy(
            image_files(root)?.iter().filter_map(|p| try_load(p)).collect(),
        ),
        PairingRule::Paired {
            hazy_dir,
            clear_dir,
            domain_id,
        } => {
            let clear_root = root.join(clear_dir);
            let mut pairs = Vec::new();
            for hazy_path in image_files(&root.join(hazy_dir))? {
                let Some(name) = hazy_path.file_name() else { continue };
                let clear_path = clear_root.join(name);
                if !clear_path.is_file() {
                    log::warn!("no clear partner for {}", hazy_path.display());
                    continue;
                }
                let (Some(hazy), Some(clear)) = (try_load(&hazy_path), try_load(&clear_path)) else {
                    continue;
                };
                match SamplePair::new(hazy, clear, *domain_id) {
                    Ok(p) => pairs.push(p),
                    Err(e) => log::warn!("skipping {}: {e}", hazy_path.display()),
                }
            }
            FolderDataset::Pairs(pairs)
        }
    };
    if data.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no usable images under {}",
            root.display()
        )));
    }
    Ok(data)
}

/// One line of a split manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub hazy_path: PathBuf,
    pub clear_path: PathBuf,
    pub domain_id: usize,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).expect("manifest entries serialize");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidInput(format!("{} line {}: {e}", path.display(), n + 1))
        })?;
        entries.push(entry);
    }
    Ok(entries)
}
