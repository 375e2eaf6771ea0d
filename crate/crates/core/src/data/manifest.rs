//! Manifest files: a JSON list of `{"image": path, "objects": [...]}` entries
//! using the layout JSON object schema. An optional `categories.json` (a list
//! of names) next to the manifest fixes the vocabulary order.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Sample, SplitName};
use crate::error::{Error, Result};
use crate::layout::{BoundingBox, CategoryVocabulary, Layout, ObjectJson, ObjectSpec};
use crate::raster::ImageTensor;

pub const CATEGORIES_FILE: &str = "categories.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Image path relative to the image directory.
    pub image: String,
    /// Declared square side the pixel boxes refer to. When absent, boxes are
    /// relative to the decoded image's own width and height.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
    pub objects: Vec<ObjectJson>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Output image side; images are resized to it.
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Objects smaller than this fraction of the image are dropped before
    /// the object-count filter.
    pub min_box_area: f64,
}

impl LoadOptions {
    pub fn coco(image_size: usize) -> Self {
        Self {
            image_size,
            min_objects: 3,
            max_objects: 8,
            min_box_area: 0.02,
        }
    }

    pub fn visual_genome(image_size: usize) -> Self {
        Self {
            max_objects: 30,
            ..Self::coco(image_size)
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))
}

fn read_vocabulary(manifest_path: &Path, entries: &[ManifestEntry]) -> Result<CategoryVocabulary> {
    let path = manifest_path.with_file_name(CATEGORIES_FILE);
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        let names: Vec<String> =
            serde_json::from_str(&text).map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
        return CategoryVocabulary::new(names);
    }
    let mut seen = HashSet::new();
    let names: Vec<&str> = entries
        .iter()
        .flat_map(|e| e.objects.iter().map(|o| o.category.as_str()))
        .filter(|n| seen.insert(*n))
        .collect();
    CategoryVocabulary::new(names)
}

/// Loads a split, keeping samples whose object count (after the area filter)
/// lies in `[min_objects, max_objects]`.
pub fn load_layout_dataset(annotation_path: &Path, image_dir: &Path, opts: &LoadOptions) -> Result<DatasetSplit> {
    let entries = read_manifest(annotation_path)?;
    let vocabulary = read_vocabulary(annotation_path, &entries)?;
    for e in &entries {
        let p = image_dir.join(&e.image);
        if !p.exists() {
            return Err(Error::MissingImage(p));
        }
    }
    let mut samples = Vec::new();
    for e in &entries {
        let path = image_dir.join(&e.image);
        let decoded = image::open(&path)?.to_rgb8();
        let (w, h) = decoded.dimensions();
        let (sx, sy) = match e.image_size {
            Some(s) => (s as f64, s as f64),
            None => (w as f64, h as f64),
        };
        let mut objects = Vec::with_capacity(e.objects.len());
        for o in &e.objects {
            let category_id = vocabulary
                .id(&o.category)
                .ok_or_else(|| Error::UnknownCategoryName(o.category.clone()))?;
            let [x, y, bh, bw] = o.bbox;
            let bbox = BoundingBox::new(x / sx, y / sy, bh / sy, bw / sx);
            if bbox.area() >= opts.min_box_area {
                objects.push(ObjectSpec { category_id, bbox });
            }
        }
        if objects.len() < opts.min_objects || objects.len() > opts.max_objects {
            continue;
        }
        let side = opts.image_size as u32;
        let resized = if (w, h) == (side, side) {
            decoded
        } else {
            image::imageops::resize(&decoded, side, side, FilterType::Triangle)
        };
        samples.push(Sample {
            image: ImageTensor::from_rgb8(&resized)?,
            layout: Layout::new(objects, opts.image_size),
            id: e.image.clone(),
        });
    }
    let stem = annotation_path.file_stem().and_then(|s| s.to_str()).unwrap_or("train");
    Ok(DatasetSplit {
        samples,
        vocabulary,
        split_name: SplitName::from_file_stem(stem),
    })
}

/// Writes `images/*.png`, `manifest.json` and `categories.json` under `dir`.
/// Returns the manifest path.
pub fn write_split(split: &DatasetSplit, dir: &Path) -> Result<PathBuf> {
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir)?;
    let mut entries = Vec::with_capacity(split.len());
    for s in &split.samples {
        let rel = format!("images/{}.png", s.id);
        s.image.save_png(&dir.join(&rel))?;
        let json = s.layout.to_json(&split.vocabulary)?;
        entries.push(ManifestEntry {
            image: rel,
            image_size: Some(json.image_size),
            objects: json.objects,
        });
    }
    let manifest = dir.join("manifest.json");
    std::fs::write(&manifest, serde_json::to_string_pretty(&entries)?)?;
    std::fs::write(
        dir.join(CATEGORIES_FILE),
        serde_json::to_string_pretty(split.vocabulary.names())?,
    )?;
    Ok(manifest)
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    /// `[x, y, width, height]` in pixels.
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Deserialize)]
struct CocoInstances {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

/// Converts COCO instance-annotation JSON into manifest entries, keeping only
/// the listed categories and dropping crowd regions. Images without any kept
/// object are omitted.
pub fn coco_to_manifest(coco_json: &str, categories: &[String]) -> Result<Vec<ManifestEntry>> {
    let coco: CocoInstances = serde_json::from_str(coco_json).map_err(|e| Error::ParseError(e.to_string()))?;
    let keep: HashSet<&str> = categories.iter().map(String::as_str).collect();
    let names: HashMap<u64, &str> = coco
        .categories
        .iter()
        .filter(|c| keep.contains(c.name.as_str()))
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let mut per_image: HashMap<u64, Vec<ObjectJson>> = HashMap::new();
    for a in coco.annotations.iter().filter(|a| a.iscrowd == 0) {
        if let Some(name) = names.get(&a.category_id) {
            let [x, y, w, h] = a.bbox;
            per_image.entry(a.image_id).or_default().push(ObjectJson {
                category: name.to_string(),
                bbox: [x, y, h, w],
            });
        }
    }
    Ok(coco
        .images
        .iter()
        .filter_map(|img| {
            per_image.remove(&img.id).map(|objects| ManifestEntry {
                image: img.file_name.clone(),
                image_size: None,
                objects,
            })
        })
        .collect())
}
