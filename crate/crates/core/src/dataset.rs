//! On-disk dataset layout:
//!
//! ```text
//! <root>/images/<id>.png
//! <root>/saliency/<id>.png
//! <root>/crops.csv          id,x_min,y_min,x_max,y_max
//! ```
//!
//! Saliency maps are optional when reading; an optional header row in
//! `crops.csv` is skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::EvalSample;
use crate::geometry::{Rect, SaliencyMap};
use crate::imaging::{load_saliency, save_saliency, Image};
use crate::synth::SyntheticSample;

pub const CROPS_FILE: &str = "crops.csv";
pub const IMAGE_DIR: &str = "images";
pub const SALIENCY_DIR: &str = "saliency";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub image: Image,
    pub saliency: Option<SaliencyMap>,
    pub crop: Rect,
}

impl DatasetEntry {
    pub fn into_eval(self) -> EvalSample {
        EvalSample {
            id: self.id,
            image: self.image,
            gt_crop: self.crop,
            gt_saliency: self.saliency,
        }
    }
}

pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join(IMAGE_DIR).join(format!("{id}.png"))
}

pub fn saliency_path(root: &Path, id: &str) -> PathBuf {
    root.join(SALIENCY_DIR).join(format!("{id}.png"))
}

/// Writes samples in the layout above and returns the paths written, in order.
pub fn write_synthetic(root: &Path, samples: &[SyntheticSample]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(root.join(IMAGE_DIR))?;
    fs::create_dir_all(root.join(SALIENCY_DIR))?;
    let mut written = Vec::with_capacity(2 * samples.len() + 1);
    let mut csv = String::new();
    for s in samples {
        let ip = image_path(root, &s.id);
        s.image.save_png(&ip)?;
        let sp = saliency_path(root, &s.id);
        save_saliency(&s.gt_saliency, &sp)?;
        written.push(ip);
        written.push(sp);
        let r = s.gt_crop;
        writeln!(csv, "{},{},{},{},{}", s.id, r.x_min, r.y_min, r.x_max, r.y_max).expect("string write");
    }
    let cp = root.join(CROPS_FILE);
    fs::write(&cp, csv)?;
    written.push(cp);
    Ok(written)
}

/// Parses `crops.csv` into id -> rectangle.
pub fn read_crops(path: &Path) -> Result<BTreeMap<String, Rect>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if n == 0 && fields.first() == Some(&"id") {
            continue;
        }
        let bad = |why: &str| Error::Input(format!("{}:{}: {why}", path.display(), n + 1));
        if fields.len() != 5 {
            return Err(bad(&format!("expected 5 fields, got {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad(&format!("invalid number {f:?}")))?;
        }
        let rect = Rect::from_corners(v);
        if !rect.is_finite() || !rect.is_valid() {
            return Err(bad(&format!("invalid rectangle {rect:?}")));
        }
        if out.insert(fields[0].to_string(), rect).is_some() {
            return Err(bad(&format!("duplicate id {}", fields[0])));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    /// Sorted by id.
    pub entries: Vec<DatasetEntry>,
    /// Images that have no row in `crops.csv` and were skipped.
    pub missing: Vec<String>,
}

/// Loads every image under `images/` that has a crop row; images without one
/// are reported in [`LoadedDataset::missing`]. Rows without an image are ignored.
pub fn load_dataset(root: &Path, channels: usize) -> Result<LoadedDataset> {
    let crops = read_crops(&root.join(CROPS_FILE))?;
    let mut ids = Vec::new();
    for entry in fs::read_dir(root.join(IMAGE_DIR))? {
        let path = entry?.path();
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            ids.push(stem.to_string());
        }
    }
    ids.sort();
    let (ids, missing): (Vec<String>, Vec<String>) = ids.into_iter().partition(|id| crops.contains_key(id));
    let entries = ids
        .into_iter()
        .map(|id| {
            let image = Image::load(image_path(root, &id), channels)?;
            let sp = saliency_path(root, &id);
            let saliency = if sp.exists() { Some(load_saliency(&sp)?) } else { None };
            let crop = crops[&id];
            Ok(DatasetEntry { id, image, saliency, crop })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset { entries, missing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_synthetic;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic(3, 16, 9).unwrap();
        let written = write_synthetic(dir.path(), &samples).unwrap();
        assert_eq!(written.len(), 7);
        let back = load_dataset(dir.path(), 3).unwrap().entries;
        assert_eq!(back.len(), 3);
        for (s, e) in samples.iter().zip(&back) {
            assert_eq!(s.id, e.id);
            assert_eq!(s.gt_crop, e.crop);
            assert_eq!(Some(&s.gt_saliency), e.saliency.as_ref());
            let err = s.image.data().iter().zip(e.image.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn header_is_optional_and_missing_rows_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(dir.path(), &generate_synthetic(2, 16, 1).unwrap()).unwrap();
        let cp = dir.path().join(CROPS_FILE);
        let text = fs::read_to_string(&cp).unwrap();
        fs::write(&cp, format!("id,x_min,y_min,x_max,y_max\n{text}")).unwrap();
        assert_eq!(read_crops(&cp).unwrap().len(), 2);
        let first_line_dropped: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        fs::write(&cp, first_line_dropped).unwrap();
        let loaded = load_dataset(dir.path(), 3).unwrap();
        assert_eq!(loaded.missing, vec!["s1_00000".to_string()]);
        assert_eq!(loaded.entries.len(), 1);
    }

    #[test]
    fn malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cp = dir.path().join(CROPS_FILE);
        for bad in ["a,1,2,3\n", "a,1,2,x,4\n", "a,5,0,1,1\n", "a,0,0,1,1\na,0,0,1,1\n"] {
            fs::write(&cp, bad).unwrap();
            assert!(read_crops(&cp).is_err(), "{bad}");
        }
    }
}
