use crate::autodiff::Tensor;
use crate::doc::{LabelMatrix, Page};
use crate::error::{Error, Result};
use crate::features::{assemble_features, FeatureRow, FEATURE_DIM, MAX_CHARS, PAD};
use crate::geometry::{
    assign_reading_order, build_neighbor_graph, GraphConfig, NeighborGraph,
    LINE_OVERLAP_THRESHOLD,
};

/// One page prepared for the network. Rows, graph and labels are all in
/// reading-order sequence; `rows[i].source` maps back to the page.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub rows: Vec<FeatureRow>,
    pub graph: NeighborGraph,
    pub labels: Option<LabelMatrix>,
}

impl Example {
    /// `labels` are in page order.
    pub fn from_page(page: &Page, labels: Option<&LabelMatrix>, n_neighbors: usize) -> Result<Self> {
        let order = assign_reading_order(page, LINE_OVERLAP_THRESHOLD);
        let rows = assemble_features(page, &order);
        let sequence: Vec<usize> = rows.iter().map(|r| r.source).collect();
        let graph = build_neighbor_graph(page, GraphConfig { n_neighbors }).reindexed(&sequence);
        let labels = match labels {
            Some(l) if l.rows() != page.len() => {
                return Err(Error::invalid(format!(
                    "label matrix has {} rows for {} boxes",
                    l.rows(),
                    page.len()
                )))
            }
            Some(l) => {
                let mut out = LabelMatrix::zeros(l.rows(), l.class_count());
                for (pos, &src) in sequence.iter().enumerate() {
                    for c in 0..l.class_count() {
                        out.set(pos, c, l.get(src, c));
                    }
                }
                Some(out)
            }
            None => None,
        };
        Ok(Example {
            rows,
            graph,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reorders sequence-ordered `rows x width` values back to page order.
    pub fn to_page_order(&self, values: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (pos, row) in self.rows.iter().enumerate() {
            out[row.source * width..(row.source + 1) * width]
                .copy_from_slice(&values[pos * width..(pos + 1) * width]);
        }
        out
    }
}

/// A zero-padded batch of examples, flattened to `batch x len` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub len: usize,
    pub lengths: Vec<usize>,
    /// `[batch, len, FEATURE_DIM]`.
    pub features: Tensor,
    /// `batch * len * MAX_CHARS` alphabet indices; padded rows are all PAD.
    pub chars: Vec<u8>,
    pub n_neighbors: usize,
    /// Per row, `4 * n_neighbors` indices into the flattened rows.
    pub neighbors: Vec<Option<usize>>,
    /// 1 for real rows, 0 for padding; doubles as the sample weight.
    pub mask: Vec<f64>,
    /// `[batch, len, class_count]`; zero on padding and when unlabeled.
    pub labels: Tensor,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.batch * self.len
    }
}

/// Pads every example to the longest one. `rows` optionally substitutes
/// (augmented) feature rows for each example.
pub fn pad_batch(
    examples: &[&Example],
    rows: Option<&[Vec<FeatureRow>]>,
    class_count: usize,
) -> Result<Batch> {
    let batch = examples.len();
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let len = examples.iter().map(|e| e.len()).max().unwrap_or(0);
    let n_neighbors = examples[0].graph.n_neighbors();
    if examples.iter().any(|e| e.graph.n_neighbors() != n_neighbors) {
        return Err(Error::invalid("examples in a batch disagree on n_neighbors"));
    }
    let slots = 4 * n_neighbors;
    let total = batch * len;
    let mut features = vec![0.0; total * FEATURE_DIM];
    let mut chars = vec![PAD as u8; total * MAX_CHARS];
    let mut neighbors = vec![None; total * slots];
    let mut mask = vec![0.0; total];
    let mut labels = vec![0.0; total * class_count];
    for (b, ex) in examples.iter().enumerate() {
        let ex_rows = match rows {
            Some(r) => &r[b],
            None => &ex.rows,
        };
        if ex_rows.len() != ex.len() {
            return Err(Error::invalid("substituted rows differ in length"));
        }
        if let Some(l) = &ex.labels {
            if l.class_count() != class_count {
                return Err(Error::invalid(format!(
                    "labels have {} classes, model expects {class_count}",
                    l.class_count()
                )));
            }
        }
        for (i, row) in ex_rows.iter().enumerate() {
            let r = b * len + i;
            features[r * FEATURE_DIM..(r + 1) * FEATURE_DIM].copy_from_slice(&row.values());
            chars[r * MAX_CHARS..(r + 1) * MAX_CHARS].copy_from_slice(row.chars.indices());
            for (dst, src) in neighbors[r * slots..(r + 1) * slots]
                .iter_mut()
                .zip(ex.graph.node_slots(i))
            {
                *dst = src.map(|j| b * len + j);
            }
            mask[r] = 1.0;
            if let Some(l) = &ex.labels {
                for c in 0..class_count {
                    labels[r * class_count + c] = f64::from(u8::from(l.get(i, c)));
                }
            }
        }
    }
    Ok(Batch {
        batch,
        len,
        lengths: examples.iter().map(|e| e.len()).collect(),
        features: Tensor::new([batch, len, FEATURE_DIM], features)?,
        chars,
        n_neighbors,
        neighbors,
        mask,
        labels: Tensor::new([batch, len, class_count], labels)?,
    })
}

/// Consecutive groups of `batch_size` examples taken in `order`.
pub fn make_batches(
    examples: &[Example],
    order: &[usize],
    batch_size: usize,
    class_count: usize,
) -> Result<Vec<Batch>> {
    order
        .chunks(batch_size.max(1))
        .map(|idx| {
            let group: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            pad_batch(&group, None, class_count)
        })
        .collect()
}
