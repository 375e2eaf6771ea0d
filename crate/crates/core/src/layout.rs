//! Layout domain types: boxes, object specs, vocabularies and the layout
//! JSON format shared by data files, the service and clients.
//!
//! Boxes are stored normalized to `[0, 1]` as `(x, y, h, w)`: top-left corner,
//! height and width. The JSON form carries pixel coordinates relative to a
//! declared `image_size`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Slack allowed when checking `x + w <= 1` on values converted from pixels.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub w: f64,
}

impl BoundingBox {
    pub const FULL: BoundingBox = BoundingBox {
        x: 0.0,
        y: 0.0,
        h: 1.0,
        w: 1.0,
    };

    pub fn new(x: f64, y: f64, h: f64, w: f64) -> Self {
        Self { x, y, h, w }
    }

    pub fn is_valid(&self) -> bool {
        let vals = [self.x, self.y, self.h, self.w];
        vals.iter().all(|v| v.is_finite())
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x < 1.0
            && self.y < 1.0
            && self.h > 0.0
            && self.w > 0.0
            && self.x + self.w <= 1.0 + EDGE_EPS
            && self.y + self.h <= 1.0 + EDGE_EPS
    }

    /// `[x, y, h, w]` in pixels of a square image with side `image_size`.
    pub fn from_pixels(px: [f64; 4], image_size: usize) -> Self {
        let s = image_size as f64;
        Self::new(px[0] / s, px[1] / s, px[2] / s, px[3] / s)
    }

    pub fn to_pixels(&self, image_size: usize) -> [f64; 4] {
        let s = image_size as f64;
        [self.x * s, self.y * s, self.h * s, self.w * s]
    }

    pub fn area(&self) -> f64 {
        self.h * self.w
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.h, self.w]
    }
}

/// Integer cell rectangle on a square grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl CellRect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row0 + self.rows && col >= self.col0 && col < self.col0 + self.cols
    }
}

// floor() of values such as (3/10)*10 must not land one cell early.
fn floor_cell(v: f64) -> usize {
    (v + 1e-9).floor().max(0.0) as usize
}

/// Maps a normalized box onto a `grid_side` x `grid_side` grid.
///
/// The start cell is `floor(coord * grid)`, the extent `max(1, round(len * grid))`,
/// clipped so the rectangle stays inside the grid. Never empty.
pub fn rasterize_bbox(bbox: &BoundingBox, grid_side: usize) -> CellRect {
    assert!(grid_side >= 1, "grid side must be positive");
    let g = grid_side as f64;
    let row0 = floor_cell(bbox.y * g).min(grid_side - 1);
    let col0 = floor_cell(bbox.x * g).min(grid_side - 1);
    let rows = ((bbox.h * g).round() as usize).max(1).min(grid_side - row0);
    let cols = ((bbox.w * g).round() as usize).max(1).min(grid_side - col0);
    CellRect {
        row0,
        col0,
        rows,
        cols,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub category_id: usize,
    pub bbox: BoundingBox,
}

/// Ordered objects of one image. Order is the fusion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub objects: Vec<ObjectSpec>,
    pub image_size: usize,
}

impl Layout {
    pub fn new(objects: Vec<ObjectSpec>, image_size: usize) -> Self {
        Self {
            objects,
            image_size,
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn category_ids(&self) -> Vec<usize> {
        self.objects.iter().map(|o| o.category_id).collect()
    }

    pub fn from_json(json: &LayoutJson, vocab: &CategoryVocabulary) -> Result<Self> {
        if json.image_size == 0 {
            return Err(Error::InvalidArgument("image_size must be positive".into()));
        }
        let objects = json
            .objects
            .iter()
            .map(|o| {
                let category_id = vocab
                    .id(&o.category)
                    .ok_or_else(|| Error::UnknownCategoryName(o.category.clone()))?;
                Ok(ObjectSpec {
                    category_id,
                    bbox: BoundingBox::from_pixels(o.bbox, json.image_size),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(objects, json.image_size))
    }

    pub fn to_json(&self, vocab: &CategoryVocabulary) -> Result<LayoutJson> {
        let objects = self
            .objects
            .iter()
            .map(|o| {
                let name = vocab.name(o.category_id).ok_or(Error::UnknownCategory {
                    id: o.category_id,
                    size: vocab.len(),
                })?;
                Ok(ObjectJson {
                    category: name.to_string(),
                    bbox: o.bbox.to_pixels(self.image_size),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LayoutJson {
            image_size: self.image_size,
            objects,
        })
    }
}

/// Checks every layout invariant and returns the layout unchanged.
pub fn validate_layout(
    layout: &Layout,
    config: &ModelConfig,
    vocab: &CategoryVocabulary,
) -> Result<Layout> {
    if layout.objects.is_empty() {
        return Err(Error::EmptyLayout);
    }
    if layout.objects.len() > config.max_objects {
        return Err(Error::TooManyObjects {
            count: layout.objects.len(),
            max: config.max_objects,
        });
    }
    for (index, obj) in layout.objects.iter().enumerate() {
        if !obj.bbox.is_valid() {
            return Err(Error::BoxOutOfBounds {
                index,
                bbox: obj.bbox.as_array(),
            });
        }
        if obj.category_id >= vocab.len() {
            return Err(Error::UnknownCategory {
                id: obj.category_id,
                size: vocab.len(),
            });
        }
    }
    Ok(layout.clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for CategoryVocabulary {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<CategoryVocabulary> for Vec<String> {
    fn from(v: CategoryVocabulary) -> Self {
        v.names
    }
}

impl CategoryVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate category {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectJson {
    pub category: String,
    /// `[x, y, h, w]` in pixels.
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutJson {
    pub image_size: usize,
    pub objects: Vec<ObjectJson>,
}
