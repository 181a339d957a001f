//! Neighbor graph and reading order over the word boxes of a page.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::doc::{Page, Rect, WordBox};
use crate::error::{Error, Result};

/// Default y-projection overlap needed for two boxes to share a line.
pub const LINE_OVERLAP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Left,
    Top,
    Right,
    Bottom,
}

impl Edge {
    /// Slot order used everywhere a box's neighbors are flattened.
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Top, Edge::Right, Edge::Bottom];

    pub fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub n_neighbors: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { n_neighbors: 1 }
    }
}

/// Which edge of the box centered at `from` has `to` in its 90° field of view.
///
/// Exact diagonals belong to the horizontal edges.
pub fn edge_of(from: (f64, f64), to: (f64, f64)) -> Result<Edge> {
    let dx = to.0 - from.0;
    let dy = to.1 - from.1;
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::invalid(format!(
            "edge_of: identical centers ({}, {})",
            from.0, from.1
        )));
    }
    let (adx, ady) = (dx.abs(), dy.abs());
    Ok(if adx >= ady {
        if dx > 0.0 {
            Edge::Right
        } else {
            Edge::Left
        }
    } else if dy > 0.0 {
        Edge::Bottom
    } else {
        Edge::Top
    })
}

/// For every box, up to `n_neighbors` nearest boxes per edge.
///
/// Slots are stored flat: box `i`, edge `e`, rank `k` lives at
/// `(i * 4 + e) * n + k`. `None` marks a missing neighbor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborGraph {
    n_neighbors: usize,
    slots: Vec<Option<usize>>,
}

impl NeighborGraph {
    pub fn empty(nodes: usize, n_neighbors: usize) -> Self {
        NeighborGraph {
            n_neighbors,
            slots: vec![None; nodes * 4 * n_neighbors],
        }
    }

    pub fn from_slots(n_neighbors: usize, slots: Vec<Option<usize>>) -> Result<Self> {
        if n_neighbors > 0 && !slots.len().is_multiple_of(4 * n_neighbors) {
            return Err(Error::invalid(format!(
                "{} neighbor slots do not divide into 4 x {n_neighbors}",
                slots.len()
            )));
        }
        if n_neighbors == 0 && !slots.is_empty() {
            return Err(Error::invalid("slots given for a zero-neighbor graph"));
        }
        Ok(NeighborGraph { n_neighbors, slots })
    }

    pub fn n_neighbors(&self) -> usize {
        self.n_neighbors
    }

    /// Number of nodes, or `None` when it cannot be recovered (`n_neighbors == 0`).
    pub fn node_count(&self) -> Option<usize> {
        (self.n_neighbors > 0).then(|| self.slots.len() / (4 * self.n_neighbors))
    }

    pub fn slots_per_node(&self) -> usize {
        4 * self.n_neighbors
    }

    pub fn neighbors(&self, node: usize, edge: Edge) -> &[Option<usize>] {
        let start = (node * 4 + edge.slot()) * self.n_neighbors;
        &self.slots[start..start + self.n_neighbors]
    }

    /// All `4 * n` slots of a node in (left, top, right, bottom) order, nearest first.
    pub fn node_slots(&self, node: usize) -> &[Option<usize>] {
        let s = self.slots_per_node();
        &self.slots[node * s..(node + 1) * s]
    }

    pub fn slots(&self) -> &[Option<usize>] {
        &self.slots
    }

    pub fn edge_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Relabels nodes: new node `i` is old node `order[i]`.
    pub fn reindexed(&self, order: &[usize]) -> NeighborGraph {
        let mut inverse = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let s = self.slots_per_node();
        let mut slots = Vec::with_capacity(self.slots.len());
        for &old in order {
            slots.extend(
                self.slots[old * s..(old + 1) * s]
                    .iter()
                    .map(|slot| slot.map(|j| inverse[j])),
            );
        }
        NeighborGraph {
            n_neighbors: self.n_neighbors,
            slots,
        }
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

/// Neighbor lists are positions in `page.wordboxes`, not `WordBox::index`.
/// Boxes sharing a center with `W` have no defined edge and are skipped.
pub fn build_neighbor_graph(page: &Page, cfg: GraphConfig) -> NeighborGraph {
    let n = cfg.n_neighbors;
    let count = page.len();
    let mut graph = NeighborGraph::empty(count, n);
    if n == 0 {
        return graph;
    }
    let centers: Vec<(f64, f64)> = page.wordboxes.iter().map(|w| w.bbox.center()).collect();
    let mut buckets: [Vec<(f64, usize)>; 4] = Default::default();
    for (i, &ci) in centers.iter().enumerate() {
        for b in buckets.iter_mut() {
            b.clear();
        }
        for (j, &cj) in centers.iter().enumerate() {
            if i == j {
                continue;
            }
            if let Ok(edge) = edge_of(ci, cj) {
                buckets[edge.slot()].push((dist2(ci, cj), j));
            }
        }
        for (e, bucket) in buckets.iter_mut().enumerate() {
            let by_rank = |a: &(f64, usize), b: &(f64, usize)| {
                a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
            };
            if bucket.len() > n {
                bucket.select_nth_unstable_by(n - 1, by_rank);
                bucket.truncate(n);
            }
            bucket.sort_unstable_by(by_rank);
            let start = (i * 4 + e) * n;
            for (k, &(_, j)) in bucket.iter().enumerate() {
                graph.slots[start + k] = Some(j);
            }
        }
    }
    graph
}

/// Line membership and position within the line, in the upright page and in
/// the page rotated 90° clockwise. Indexed by position in `page.wordboxes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxOrder {
    pub line: usize,
    pub order_in_line: usize,
    pub rot_line: usize,
    pub rot_order_in_line: usize,
}

impl BoxOrder {
    pub fn as_array(&self) -> [usize; 4] {
        [
            self.line,
            self.order_in_line,
            self.rot_line,
            self.rot_order_in_line,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingOrder {
    pub boxes: Vec<BoxOrder>,
}

impl ReadingOrder {
    /// Box positions sorted by `(line, order_in_line)`: the sequence order
    /// fed to the network.
    pub fn sequence(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.boxes.len()).collect();
        idx.sort_by_key(|&i| (self.boxes[i].line, self.boxes[i].order_in_line));
        idx
    }
}

fn y_overlap(a: &Rect, b: &Rect) -> f64 {
    (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0)
}

/// Greedy line grouping: returns `(line, order_in_line)` per box.
fn group_lines(boxes: &[WordBox], threshold: f64) -> Vec<(usize, usize)> {
    let mut sorted: Vec<usize> = (0..boxes.len()).collect();
    sorted.sort_by(|&a, &b| {
        let (ra, rb) = (&boxes[a].bbox, &boxes[b].bbox);
        ra.top
            .partial_cmp(&rb.top)
            .unwrap_or(Ordering::Equal)
            .then(ra.left.partial_cmp(&rb.left).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let mut assigned = vec![false; boxes.len()];
    let mut result = vec![(0, 0); boxes.len()];
    let mut line = 0;
    let mut members = Vec::new();
    for (pos, &seed) in sorted.iter().enumerate() {
        if assigned[seed] {
            continue;
        }
        let seed_box = &boxes[seed].bbox;
        assigned[seed] = true;
        members.clear();
        members.push(seed);
        for &cand in &sorted[pos + 1..] {
            let cb = &boxes[cand].bbox;
            // sorted by top: nothing further down can reach the seed
            if cb.top >= seed_box.bottom {
                break;
            }
            if assigned[cand] {
                continue;
            }
            let need = threshold * cb.height().min(seed_box.height());
            if y_overlap(seed_box, cb) > need {
                assigned[cand] = true;
                members.push(cand);
            }
        }
        members.sort_by(|&a, &b| {
            boxes[a]
                .bbox
                .left
                .partial_cmp(&boxes[b].bbox.left)
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        for (k, &m) in members.iter().enumerate() {
            result[m] = (line, k);
        }
        line += 1;
    }
    result
}

/// Rotates the page 90° clockwise: `(l, t, r, b) -> (1 - b, l, 1 - t, r)`.
pub fn rotate_page_90(page: &Page) -> Page {
    let wordboxes = page
        .wordboxes
        .iter()
        .map(|w| {
            let r = &w.bbox;
            WordBox {
                bbox: Rect::new(1.0 - r.bottom, r.left, 1.0 - r.top, r.right),
                ..w.clone()
            }
        })
        .collect();
    Page {
        width: page.height,
        height: page.width,
        wordboxes,
    }
}

pub fn assign_reading_order(page: &Page, overlap_threshold: f64) -> ReadingOrder {
    let upright = group_lines(&page.wordboxes, overlap_threshold);
    let rotated = group_lines(&rotate_page_90(page).wordboxes, overlap_threshold);
    let boxes = upright
        .into_iter()
        .zip(rotated)
        .map(|((line, order_in_line), (rot_line, rot_order_in_line))| BoxOrder {
            line,
            order_in_line,
            rot_line,
            rot_order_in_line,
        })
        .collect();
    ReadingOrder { boxes }
}
