//! Pages, word boxes, annotations and ground-truth label generation.
//!
//! All coordinates stored here are normalized to the page: `(0, 0)` is the
//! top-left corner and `(1, 1)` the bottom-right one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of a word box that an annotation must cover (strictly) for the
/// box to receive the annotation's class.
pub const GROUND_TRUTH_OVERLAP: f64 = 0.20;

/// Axis-aligned rectangle `(left, top, right, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Rect {
    pub const fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Rect {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.left + self.right) / 2.0, (self.top + self.bottom) / 2.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.left, self.top, self.right, self.bottom]
    }

    /// `left < right` and `top < bottom`, all coordinates finite.
    pub fn is_well_formed(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
            && self.left < self.right
            && self.top < self.bottom
    }

    pub fn is_normalized(&self) -> bool {
        self.as_array().iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.right.min(other.right) - self.left.max(other.left);
        let h = self.bottom.min(other.bottom) - self.top.max(other.top);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    fn validate(&self, what: impl Fn() -> String) -> Result<()> {
        if !self.is_well_formed() {
            return Err(Error::invalid(format!(
                "{}: degenerate rectangle {:?}",
                what(),
                self.as_array()
            )));
        }
        if !self.is_normalized() {
            return Err(Error::invalid(format!(
                "{}: coordinates outside [0, 1]: {:?}",
                what(),
                self.as_array()
            )));
        }
        Ok(())
    }
}

/// One word on a page.
#[derive(Debug, Clone, PartialEq)]
pub struct WordBox {
    pub index: usize,
    pub text: Option<String>,
    pub bbox: Rect,
    /// Precomputed text features shipped with anonymized data in place of text.
    pub features: Option<Vec<f64>>,
}

impl WordBox {
    pub fn new(index: usize, text: Option<String>, bbox: Rect) -> Self {
        WordBox {
            index,
            text,
            bbox,
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub width: f64,
    pub height: f64,
    pub wordboxes: Vec<WordBox>,
}

impl Page {
    /// Builds a page from boxes that are already normalized, checking every
    /// box invariant.
    pub fn new(width: f64, height: f64, wordboxes: Vec<WordBox>) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::invalid(format!(
                "page dimensions must be positive, got {width} x {height}"
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(wordboxes.len());
        for wb in &wordboxes {
            wb.bbox.validate(|| format!("wordbox {}", wb.index))?;
            if !seen.insert(wb.index) {
                return Err(Error::invalid(format!(
                    "duplicate wordbox index {}",
                    wb.index
                )));
            }
        }
        Ok(Page {
            width,
            height,
            wordboxes,
        })
    }

    /// Builds a page from boxes given in page units, dividing by the page
    /// size. Boxes are indexed in input order.
    pub fn from_page_units(
        width: f64,
        height: f64,
        boxes: impl IntoIterator<Item = (Option<String>, Rect)>,
    ) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::invalid(format!(
                "page dimensions must be positive, got {width} x {height}"
            )));
        }
        let wordboxes = boxes
            .into_iter()
            .enumerate()
            .map(|(index, (text, r))| {
                let bbox = Rect::new(
                    r.left / width,
                    r.top / height,
                    r.right / width,
                    r.bottom / height,
                );
                WordBox::new(index, text, bbox)
            })
            .collect();
        Page::new(width, height, wordboxes)
    }

    pub fn len(&self) -> usize {
        self.wordboxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wordboxes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: usize,
    pub rect: Rect,
}

/// Ordered list of class names with the two line-item classes singled out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSchema {
    pub names: Vec<String>,
    pub body_class: usize,
    pub header_class: usize,
}

impl ClassSchema {
    pub fn new(names: Vec<String>, body_class: usize, header_class: usize) -> Result<Self> {
        let schema = ClassSchema {
            names,
            body_class,
            header_class,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Body, header, then the given field classes.
    pub fn with_fields<S: AsRef<str>>(fields: &[S]) -> Result<Self> {
        let mut names = vec!["line_item_body".to_string(), "line_item_header".to_string()];
        names.extend(fields.iter().map(|s| s.as_ref().to_string()));
        ClassSchema::new(names, 0, 1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n < 2 {
            return Err(Error::Config(format!("class schema needs >= 2 classes, got {n}")));
        }
        if self.body_class >= n || self.header_class >= n {
            return Err(Error::Config(format!(
                "body/header class ({}, {}) out of range for {n} classes",
                self.body_class, self.header_class
            )));
        }
        if self.body_class == self.header_class {
            return Err(Error::Config(
                "body and header classes must differ".to_string(),
            ));
        }
        let mut sorted: Vec<&String> = self.names.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("class names must be unique".to_string()));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    /// Classes other than line-item body and header.
    pub fn other_classes(&self) -> Vec<usize> {
        (0..self.class_count())
            .filter(|&c| c != self.body_class && c != self.header_class)
            .collect()
    }
}

/// Per-box multilabel targets, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    class_count: usize,
    values: Vec<u8>,
}

impl LabelMatrix {
    pub fn zeros(rows: usize, class_count: usize) -> Self {
        LabelMatrix {
            class_count,
            values: vec![0; rows * class_count],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>], class_count: usize) -> Result<Self> {
        let mut m = LabelMatrix::zeros(rows.len(), class_count);
        for (b, row) in rows.iter().enumerate() {
            if row.len() != class_count {
                return Err(Error::invalid(format!(
                    "label row {b} has {} entries, expected {class_count}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::invalid(format!("label ({b}, {c}) = {v} is not binary")));
                }
                m.set(b, c, v == 1);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.class_count).unwrap_or(0)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn get(&self, row: usize, class: usize) -> bool {
        self.values[row * self.class_count + class] == 1
    }

    pub fn set(&mut self, row: usize, class: usize, on: bool) {
        self.values[row * self.class_count + class] = u8::from(on);
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.values[row * self.class_count..(row + 1) * self.class_count]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.values
    }

    pub fn positives(&self, class: usize) -> usize {
        (0..self.rows()).filter(|&r| self.get(r, class)).count()
    }
}

/// Fraction of `boxed`'s area covered by `rect`.
pub fn overlap_fraction(boxed: &Rect, rect: &Rect) -> Result<f64> {
    let area = boxed.area();
    if !boxed.is_well_formed() || !(area > 0.0) {
        return Err(Error::invalid(format!(
            "overlap of a degenerate box {:?}",
            boxed.as_array()
        )));
    }
    if !rect.is_well_formed() {
        return Err(Error::invalid(format!(
            "overlap with a degenerate rectangle {:?}",
            rect.as_array()
        )));
    }
    Ok((boxed.intersection_area(rect) / area).clamp(0.0, 1.0))
}

/// Labels every box with the classes of annotations covering strictly more
/// than [`GROUND_TRUTH_OVERLAP`] of its area.
pub fn generate_ground_truth(
    page: &Page,
    annotations: &[Annotation],
    schema: &ClassSchema,
) -> Result<LabelMatrix> {
    let classes = schema.class_count();
    for (i, a) in annotations.iter().enumerate() {
        if a.class_id >= classes {
            return Err(Error::invalid(format!(
                "annotation {i} references class {} but the schema has {classes}",
                a.class_id
            )));
        }
        if !a.rect.is_well_formed() {
            return Err(Error::invalid(format!(
                "annotation {i} has a degenerate rectangle {:?}",
                a.rect.as_array()
            )));
        }
    }
    let mut labels = LabelMatrix::zeros(page.len(), classes);
    for (row, wb) in page.wordboxes.iter().enumerate() {
        for a in annotations {
            if overlap_fraction(&wb.bbox, &a.rect)? > GROUND_TRUTH_OVERLAP {
                labels.set(row, a.class_id, true);
            }
        }
    }
    Ok(labels)
}
