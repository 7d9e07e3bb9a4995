//! On-disk sequence layout:
//!
//! ```text
//! <seq>/frames/00000.png        RGB frames (PNG or PPM)
//! <seq>/flow/00000.flo          forward flow t → t+1
//! <seq>/guide/<algorithm>/00000.png
//! <seq>/gt/00000.png            optional ground truth
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;

use super::flow::{load_flo, save_flo, FlowField};
use super::mask::BinaryMask;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub name: String,
    pub frames: Vec<RgbImage>,
    /// Forward flow for frames `0..n-1`; a trailing entry for the last frame is optional.
    pub flows: Vec<FlowField>,
    /// Guide masks keyed by the algorithm that produced them.
    pub guides: BTreeMap<String, Vec<BinaryMask>>,
    pub gt: Option<Vec<BinaryMask>>,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames
            .first()
            .map(|f| (f.width() as usize, f.height() as usize))
            .unwrap_or((0, 0))
    }

    /// Flow used as input for frame `t`; the last frame reuses the previous flow.
    pub fn flow_for_frame(&self, t: usize) -> FlowField {
        match self.flows.get(t).or(self.flows.last()) {
            Some(f) => f.clone(),
            None => {
                let (w, h) = self.dims();
                FlowField::zeros(w, h)
            }
        }
    }

    pub fn guide(&self, algorithm: &str) -> Option<&[BinaryMask]> {
        self.guides.get(algorithm).map(Vec::as_slice)
    }

    /// Checks list lengths and that every image shares the frame size.
    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n == 0 {
            return Err(Error::Data(format!("{}: no frames found", self.name)));
        }
        let (w, h) = self.dims();
        for (i, f) in self.frames.iter().enumerate() {
            if (f.width() as usize, f.height() as usize) != (w, h) {
                return Err(Error::Data(format!("{}: frame {i} is not {w}x{h}", self.name)));
            }
        }
        if self.flows.len() + 1 != n && self.flows.len() != n && !(n == 1 && self.flows.is_empty()) {
            return Err(Error::Data(format!(
                "{}: {} flows for {n} frames (expected {} or {n})",
                self.name,
                self.flows.len(),
                n - 1
            )));
        }
        for (i, f) in self.flows.iter().enumerate() {
            if (f.width(), f.height()) != (w, h) {
                return Err(Error::Data(format!("{}: flow {i} is not {w}x{h}", self.name)));
            }
        }
        let mask_lists = self
            .guides
            .iter()
            .map(|(k, v)| (format!("guide/{k}"), v))
            .chain(self.gt.iter().map(|v| ("gt".to_string(), v)));
        for (label, masks) in mask_lists {
            if masks.len() != n {
                return Err(Error::Data(format!("{}: {label} has {} masks for {n} frames", self.name, masks.len())));
            }
            if let Some((i, _)) = masks.iter().enumerate().find(|(_, m)| m.dims() != (w, h)) {
                return Err(Error::Data(format!("{}: {label} mask {i} is not {w}x{h}", self.name)));
            }
        }
        Ok(())
    }
}

/// Files in `dir` whose stem is a frame index, sorted numerically. Indices
/// must run from 0 without gaps.
fn indexed_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut indexed = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let index: usize = stem
            .parse()
            .map_err(|_| Error::file(&path, "file name is not a frame index"))?;
        indexed.push((index, path));
    }
    indexed.sort_by_key(|(i, _)| *i);
    let mut missing = Vec::new();
    let mut expected = 0;
    for (index, path) in &indexed {
        if *index < expected {
            return Err(Error::file(path, format!("duplicate frame index {index}")));
        }
        missing.extend(expected..*index);
        expected = index + 1;
    }
    if !missing.is_empty() {
        return Err(Error::file(dir, format!("missing frame indices {missing:?}")));
    }
    Ok(indexed.into_iter().map(|(_, p)| p).collect())
}

/// Loads every mask image in `dir` (indexed `00000.png`, ...).
pub fn load_mask_dir(dir: &Path) -> Result<Vec<BinaryMask>> {
    indexed_files(dir, &IMAGE_EXTENSIONS)?
        .iter()
        .map(|p| BinaryMask::load(p))
        .collect()
}

fn load_masks_checked(dir: &Path, dims: (usize, usize)) -> Result<Vec<BinaryMask>> {
    let mut masks = Vec::new();
    for path in indexed_files(dir, &IMAGE_EXTENSIONS)? {
        let m = BinaryMask::load(&path)?;
        if m.dims() != dims {
            return Err(Error::file(
                &path,
                format!("mask is {}x{}, frames are {}x{}", m.width(), m.height(), dims.0, dims.1),
            ));
        }
        masks.push(m);
    }
    Ok(masks)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::file(path, e))?.into_rgb8())
}

/// Reads and validates one sequence directory.
pub fn load_sequence(dir: &Path) -> Result<SequenceRecord> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("sequence")
        .to_string();
    let frame_dir = dir.join("frames");
    let frame_paths = if frame_dir.is_dir() {
        indexed_files(&frame_dir, &IMAGE_EXTENSIONS)?
    } else {
        Vec::new()
    };
    if frame_paths.is_empty() {
        return Err(Error::file(dir, "no frames found"));
    }
    let mut frames = Vec::with_capacity(frame_paths.len());
    for path in &frame_paths {
        let f = load_rgb(path)?;
        if let Some(first) = frames.first() {
            let first: &RgbImage = first;
            if f.dimensions() != first.dimensions() {
                return Err(Error::file(path, "frame size differs from frame 0"));
            }
        }
        frames.push(f);
    }
    let dims = (frames[0].width() as usize, frames[0].height() as usize);

    let flow_dir = dir.join("flow");
    let mut flows = Vec::new();
    if flow_dir.is_dir() {
        for path in indexed_files(&flow_dir, &["flo"])? {
            let f = load_flo(&path)?;
            if (f.width(), f.height()) != dims {
                return Err(Error::file(&path, "flow size differs from frames"));
            }
            flows.push(f);
        }
    }

    let mut guides = BTreeMap::new();
    let guide_root = dir.join("guide");
    if guide_root.is_dir() {
        let mut algos: Vec<PathBuf> = std::fs::read_dir(&guide_root)
            .map_err(|e| Error::file(&guide_root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        algos.sort();
        for algo in algos {
            let key = algo.file_name().unwrap().to_string_lossy().into_owned();
            guides.insert(key, load_masks_checked(&algo, dims)?);
        }
    }

    let gt_dir = dir.join("gt");
    let gt = if gt_dir.is_dir() {
        Some(load_masks_checked(&gt_dir, dims)?)
    } else {
        None
    };

    let record = SequenceRecord {
        name,
        frames,
        flows,
        guides,
        gt,
    };
    record.validate().map_err(|e| Error::file(dir, e))?;
    Ok(record)
}

/// Sequence directories under a dataset root, sorted by name.
pub fn list_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::file(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("frames").is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:05}.{ext}")
}

pub fn save_masks(dir: &Path, masks: &[BinaryMask]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    for (i, m) in masks.iter().enumerate() {
        m.save(&dir.join(frame_name(i, "png")))?;
    }
    Ok(())
}

/// Writes `record` under `root/<name>/`.
pub fn save_sequence(root: &Path, record: &SequenceRecord) -> Result<PathBuf> {
    record.validate()?;
    let dir = root.join(&record.name);
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).map_err(|e| Error::file(&frames, e))?;
    for (i, f) in record.frames.iter().enumerate() {
        let path = frames.join(frame_name(i, "png"));
        f.save(&path).map_err(|e| Error::file(&path, e))?;
    }
    let flow_dir = dir.join("flow");
    std::fs::create_dir_all(&flow_dir).map_err(|e| Error::file(&flow_dir, e))?;
    for (i, f) in record.flows.iter().enumerate() {
        save_flo(&flow_dir.join(frame_name(i, "flo")), f)?;
    }
    for (algo, masks) in &record.guides {
        save_masks(&dir.join("guide").join(algo), masks)?;
    }
    if let Some(gt) = &record.gt {
        save_masks(&dir.join("gt"), gt)?;
    }
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_record(n: usize, w: u32, h: u32) -> SequenceRecord {
        let frames = (0..n).map(|i| RgbImage::from_pixel(w, h, image::Rgb([i as u8 * 40, 10, 200]))).collect();
        let flows = (0..n.saturating_sub(1))
            .map(|i| FlowField::from_fn(w as usize, h as usize, |x, y| [i as f32 + x as f32 * 0.5, -(y as f32)]))
            .collect();
        let masks: Vec<BinaryMask> = (0..n)
            .map(|i| BinaryMask::from_fn(w as usize, h as usize, |x, y| x + y > i))
            .collect();
        let mut guides = BTreeMap::new();
        guides.insert("algo".to_string(), masks.iter().map(|m| m.invert()).collect());
        SequenceRecord {
            name: "tiny".into(),
            frames,
            flows,
            guides,
            gt: Some(masks),
        }
    }

    #[test]
    fn three_frames_two_flows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = tiny_record(3, 8, 6);
        let path = save_sequence(dir.path(), &rec).unwrap();
        let loaded = load_sequence(&path).unwrap();
        assert_eq!(loaded, rec);
        assert_eq!(loaded.flows.len(), 2);
        assert_eq!(loaded.flow_for_frame(2), rec.flows[1]);
    }

    #[test]
    fn mismatched_mask_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_sequence(dir.path(), &tiny_record(3, 8, 6)).unwrap();
        let bad = path.join("gt").join("00001.png");
        BinaryMask::empty(4, 4).save(&bad).unwrap();
        let err = load_sequence(&path).unwrap_err().to_string();
        assert!(err.contains("00001.png"), "{err}");
    }

    #[test]
    fn empty_directory_has_no_frames() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_sequence(dir.path()).unwrap_err().to_string();
        assert!(err.contains("no frames found"), "{err}");
    }

    #[test]
    fn gap_in_indices_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_sequence(dir.path(), &tiny_record(4, 8, 8)).unwrap();
        std::fs::remove_file(path.join("frames").join("00002.png")).unwrap();
        let err = load_sequence(&path).unwrap_err().to_string();
        assert!(err.contains("missing frame indices [2]"), "{err}");
    }
}
