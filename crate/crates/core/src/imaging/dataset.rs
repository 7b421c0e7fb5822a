use std::fs;
use std::path::{Path, PathBuf};

use super::{read_pnm, Image, ImagingError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

/// Images of a flat directory in lexicographic file-name order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub images: Vec<(String, Image)>,
    pub skipped: Vec<Skipped>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Loads every regular file in `dir`, skipping (with a warning) files that fail to parse or
/// are smaller than `min_size` in either dimension.
pub fn scan_dataset(dir: &Path, min_size: usize) -> Result<Dataset, ImagingError> {
    let io = |source| ImagingError::Io { path: dir.to_path_buf(), source };
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        if entry.file_type().map_err(io)?.is_file() {
            paths.push(entry.path());
        }
    }
    paths.sort();
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        let reason = match read_pnm(&path) {
            Ok(img) if img.width() >= min_size && img.height() >= min_size => {
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                images.push((name, img));
                continue;
            }
            Ok(img) => format!("{}x{} is smaller than {min_size}", img.width(), img.height()),
            Err(e) => e.to_string(),
        };
        log::warn!("skipping {}: {reason}", path.display());
        skipped.push(Skipped { path, reason });
    }
    if images.is_empty() {
        return Err(ImagingError::EmptyDataset { dir: dir.to_path_buf(), skipped: skipped.len() });
    }
    Ok(Dataset { dir: dir.to_path_buf(), images, skipped })
}
