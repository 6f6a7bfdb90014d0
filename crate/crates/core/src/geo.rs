//! Exact k-nearest businesses under great-circle distance.
//!
//! Points are indexed in a k-d tree over unit-sphere coordinates. Chord length
//! is monotone in great-circle distance, so the tree prunes on chord length and
//! the final order is decided by haversine distance with item_id tie-breaks.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use thiserror::Error;

use crate::model::{CandidateItem, GeoPoint};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

// Slack on the chord bound so near-ties in floating point are never pruned.
const CHORD_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("business {0} has no location")]
    MissingLocation(String),
    #[error("business {id} has out-of-range location ({lat}, {lon})")]
    BadLocation { id: String, lat: f64, lon: f64 },
    #[error("graph is empty")]
    Empty,
    #[error("m must be at least 1")]
    ZeroM,
}

pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = la2 - la1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

fn to_xyz(p: GeoPoint) -> [f64; 3] {
    let (lat, lon) = (p.lat.to_radians(), p.lon.to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

fn chord2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

#[derive(Debug, Clone)]
pub struct GeoGraph {
    items: Vec<CandidateItem>,
    points: Vec<[f64; 3]>,
    // Implicit k-d tree: each subslice has its median at the midpoint, split on
    // axis `depth % 3`.
    tree: Vec<usize>,
}

/// Result of a nearest query; `truncated` is set when fewer than `m`
/// businesses exist.
#[derive(Debug, Clone, PartialEq)]
pub struct Nearest<'a> {
    pub items: Vec<&'a CandidateItem>,
    pub truncated: bool,
}

impl GeoGraph {
    pub fn new(items: Vec<CandidateItem>) -> Result<Self, GeoError> {
        let mut points = Vec::with_capacity(items.len());
        for it in &items {
            let loc = it
                .location
                .ok_or_else(|| GeoError::MissingLocation(it.item_id.clone()))?;
            if !loc.is_valid() {
                return Err(GeoError::BadLocation {
                    id: it.item_id.clone(),
                    lat: loc.lat,
                    lon: loc.lon,
                });
            }
            points.push(to_xyz(loc));
        }
        let mut tree: Vec<usize> = (0..items.len()).collect();
        build(&mut tree, &points, 0);
        Ok(Self { items, points, tree })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[CandidateItem] {
        &self.items
    }

    /// The `m` businesses closest to `loc`, nearest first, ties by ascending
    /// item_id.
    pub fn nearest(&self, loc: GeoPoint, m: usize) -> Result<Nearest<'_>, GeoError> {
        if self.items.is_empty() {
            return Err(GeoError::Empty);
        }
        if m == 0 {
            return Err(GeoError::ZeroM);
        }
        let truncated = m > self.items.len();
        let m = m.min(self.items.len());
        let q = to_xyz(loc);

        // Max-heap of the m best chord distances seen so far.
        let mut heap: BinaryHeap<Chord> = BinaryHeap::new();
        self.search(&self.tree, 0, &q, m, &mut heap);
        let bound = heap.peek().map(|c| c.0).unwrap_or(0.0).sqrt() + CHORD_SLACK;

        let mut within = Vec::new();
        self.collect_within(&self.tree, 0, &q, bound * bound, &mut within);
        let mut scored: Vec<(f64, &CandidateItem)> = within
            .into_iter()
            .map(|i| {
                let it = &self.items[i];
                (haversine_m(loc, it.location.expect("validated")), it)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.item_id.cmp(&b.1.item_id)));
        scored.truncate(m);
        Ok(Nearest {
            items: scored.into_iter().map(|(_, it)| it).collect(),
            truncated,
        })
    }

    fn search(&self, slice: &[usize], depth: usize, q: &[f64; 3], m: usize, heap: &mut BinaryHeap<Chord>) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = &self.points[idx];
        let d = chord2(p, q);
        if heap.len() < m {
            heap.push(Chord(d));
        } else if d < heap.peek().unwrap().0 {
            heap.pop();
            heap.push(Chord(d));
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.search(near, depth + 1, q, m, heap);
        if heap.len() < m || diff * diff <= heap.peek().unwrap().0 {
            self.search(far, depth + 1, q, m, heap);
        }
    }

    fn collect_within(&self, slice: &[usize], depth: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = &self.points[idx];
        if chord2(p, q) <= r2 {
            out.push(idx);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        if diff <= 0.0 || diff * diff <= r2 {
            self.collect_within(&slice[..mid], depth + 1, q, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.collect_within(&slice[mid + 1..], depth + 1, q, r2, out);
        }
    }
}

fn build(slice: &mut [usize], points: &[[f64; 3]], depth: usize) {
    if slice.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, right) = slice.split_at_mut(mid);
    build(left, points, depth + 1);
    build(&mut right[1..], points, depth + 1);
}

#[derive(PartialEq)]
struct Chord(f64);

impl Eq for Chord {}

impl PartialOrd for Chord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Chord {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}
