//! Dataset records, the line-oriented dataset file, splits, and the
//! synthetic invoice generator.

mod io;
mod splits;
pub mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::doc::{generate_ground_truth, Annotation, ClassSchema, LabelMatrix, Page, Rect, WordBox};
use crate::error::{Error, Result};
use crate::features::TEXT_FEATURE_DIM;
use crate::network::Example;

pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset, DATASET_HEADER};
pub use splits::{make_splits, SplitSpec};
pub use synth::{synth_generate, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    /// `[left, top, right, bottom]` as fractions of the page size.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Precomputed text features, used when `text` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

/// `(class_id, left, top, right, bottom)`.
pub type AnnotationRecord = (usize, f64, f64, f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    pub width: f64,
    pub height: f64,
    pub boxes: Vec<BoxRecord>,
    #[serde(default)]
    pub annotations: Vec<AnnotationRecord>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    #[serde(default = "unknown_family")]
    pub layout_family: String,
    pub pages: Vec<PageRecord>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

fn unknown_family() -> String {
    "unknown".to_string()
}

/// A validation failure inside one record, before the line number is known.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

fn check_rect(field: &str, r: [f64; 4]) -> std::result::Result<(), FieldError> {
    let [l, t, rt, b] = r;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(field_err(field, format!("non-finite coordinate in {r:?}")));
    }
    if !(l < rt && t < b) {
        return Err(field_err(
            field,
            format!("need left < right and top < bottom, got {r:?}"),
        ));
    }
    if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(field_err(field, format!("coordinates outside [0, 1]: {r:?}")));
    }
    Ok(())
}

impl PageRecord {
    pub fn validate(&self, prefix: &str) -> std::result::Result<(), FieldError> {
        if !(self.width > 0.0 && self.width.is_finite() && self.height > 0.0 && self.height.is_finite()) {
            return Err(field_err(
                format!("{prefix}.width/height"),
                format!("page size must be positive, got {} x {}", self.width, self.height),
            ));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            check_rect(&format!("{prefix}.boxes[{i}].bbox"), b.bbox)?;
            if let Some(f) = &b.features {
                if f.len() != TEXT_FEATURE_DIM {
                    return Err(field_err(
                        format!("{prefix}.boxes[{i}].features"),
                        format!("expected {TEXT_FEATURE_DIM} values, got {}", f.len()),
                    ));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(field_err(format!("{prefix}.boxes[{i}].features"), "non-finite value"));
                }
            }
        }
        for (i, a) in self.annotations.iter().enumerate() {
            check_rect(&format!("{prefix}.annotations[{i}]"), [a.1, a.2, a.3, a.4])?;
        }
        Ok(())
    }

    pub fn to_page(&self) -> Result<Page> {
        let boxes = self
            .boxes
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let [l, t, r, bt] = b.bbox;
                let mut wb = WordBox::new(i, b.text.clone(), Rect::new(l, t, r, bt));
                wb.features = b.features.clone();
                wb
            })
            .collect();
        Page::new(self.width, self.height, boxes)
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.annotations
            .iter()
            .map(|&(class_id, l, t, r, b)| Annotation {
                class_id,
                rect: Rect::new(l, t, r, b),
            })
            .collect()
    }

    pub fn labels(&self, schema: &ClassSchema) -> Result<LabelMatrix> {
        generate_ground_truth(&self.to_page()?, &self.annotations(), schema)
    }
}

impl DatasetRecord {
    pub fn validate(&self) -> std::result::Result<(), FieldError> {
        if self.id.is_empty() {
            return Err(field_err("id", "document id is empty"));
        }
        for (i, p) in self.pages.iter().enumerate() {
            p.validate(&format!("pages[{i}]"))?;
        }
        Ok(())
    }

    pub fn box_count(&self) -> usize {
        self.pages.iter().map(|p| p.boxes.len()).sum()
    }

    pub fn max_class_id(&self) -> Option<usize> {
        self.pages
            .iter()
            .flat_map(|p| p.annotations.iter().map(|a| a.0))
            .max()
    }
}

/// Checks every annotation against the schema.
pub fn validate_classes(records: &[DatasetRecord], schema: &ClassSchema) -> Result<()> {
    for r in records {
        for (pi, p) in r.pages.iter().enumerate() {
            for (ai, a) in p.annotations.iter().enumerate() {
                if a.0 >= schema.class_count() {
                    return Err(Error::Record {
                        line: 0,
                        doc_id: r.id.clone(),
                        field: format!("pages[{pi}].annotations[{ai}]"),
                        message: format!(
                            "class id {} outside schema of {} classes",
                            a.0,
                            schema.class_count()
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Schema for a dataset without one: body 0, header 1, then `field_k`
/// names up to the largest annotated class id (at least `min_classes`).
pub fn infer_schema(records: &[DatasetRecord], min_classes: usize) -> Result<ClassSchema> {
    let n = records
        .iter()
        .filter_map(DatasetRecord::max_class_id)
        .max()
        .map_or(0, |m| m + 1)
        .max(min_classes)
        .max(2);
    let fields: Vec<String> = (2..n).map(|k| format!("field_{}", k - 2)).collect();
    ClassSchema::with_fields(&fields)
}

/// One labeled example per page.
pub fn examples(
    records: &[DatasetRecord],
    schema: &ClassSchema,
    n_neighbors: usize,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for r in records {
        for p in &r.pages {
            let page = p.to_page()?;
            let labels = generate_ground_truth(&page, &p.annotations(), schema)?;
            out.push(Example::from_page(&page, Some(&labels), n_neighbors)?);
        }
    }
    Ok(out)
}

/// Fraction of positive entries in the `boxes x classes` label matrix.
pub fn positives_rate(records: &[DatasetRecord], schema: &ClassSchema) -> Result<f64> {
    let mut pos = 0usize;
    let mut total = 0usize;
    for r in records {
        for p in &r.pages {
            let l = p.labels(schema)?;
            pos += l.as_slice().iter().filter(|&&v| v == 1).count();
            total += l.as_slice().len();
        }
    }
    Ok(if total == 0 { 0.0 } else { pos as f64 / total as f64 })
}
