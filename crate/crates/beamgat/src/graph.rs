//! Directed k-nearest-neighbor graph over a point cloud, in CSR form grouped
//! by destination: segment `i` lists the source nodes `j ∈ N(i)` whose
//! messages flow into `i`, matching the softmax segments of the attention
//! layer.
//!
//! `build_knn` runs on a kd-tree; `brute_force_knn` is the exhaustive oracle.
//! Both share one distance function and one tie rule (smaller squared
//! distance first, lower point index on ties), so their outputs must be
//! identical down to neighbor order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::io::write_csv_rows;

/// Coordinate space the neighborhoods are measured in.
///
/// Masked points carry a sentinel elevation, so `XyzFull` (the literal
/// "Euclidean (x,y,z)" construction) measures them at z = 0. The default
/// `XyPlusNominalZ` replaces z with `r_xy·tan(θ_b)` from the beam's nominal
/// elevation — geometry that stays available for dropped channels without
/// touching ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSpace {
    XyzFull,
    XyOnly,
    XyPlusNominalZ,
}

/// CSR adjacency of the kNN graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    offsets: Arc<Vec<usize>>,
    neighbors: Arc<Vec<usize>>,
    dst_of_edge: Arc<Vec<usize>>,
    pub k: usize,
    pub space: GraphSpace,
    pub self_loops: bool,
}

impl KnnGraph {
    fn from_segments(
        segments: Vec<Vec<usize>>,
        k: usize,
        space: GraphSpace,
        self_loops: bool,
    ) -> Self {
        let n = segments.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut dst_of_edge = Vec::new();
        offsets.push(0);
        for (i, seg) in segments.into_iter().enumerate() {
            neighbors.extend_from_slice(&seg);
            dst_of_edge.extend(std::iter::repeat(i).take(seg.len()));
            offsets.push(neighbors.len());
        }
        KnnGraph {
            offsets: Arc::new(offsets),
            neighbors: Arc::new(neighbors),
            dst_of_edge: Arc::new(dst_of_edge),
            k,
            space,
            self_loops,
        }
    }

    /// Build directly from explicit per-destination source lists. Intended
    /// for tests and hand-constructed adjacencies; `build_knn` is the normal
    /// constructor.
    pub fn from_adjacency(segments: Vec<Vec<usize>>, k: usize, space: GraphSpace) -> Result<Self> {
        let n = segments.len();
        for (i, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(Error::Shape(format!("node {i} has an empty segment")));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &j in seg {
                if j >= n {
                    return Err(Error::Shape(format!("neighbor {j} out of {n} nodes")));
                }
                if !seen.insert(j) {
                    return Err(Error::Shape(format!("duplicate neighbor {j} for node {i}")));
                }
            }
        }
        let self_loops = segments.iter().enumerate().all(|(i, s)| s.contains(&i));
        Ok(KnnGraph::from_segments(segments, k, space, self_loops))
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.len()
    }

    /// Per-destination offsets into [`Self::neighbors`]; length `N + 1`.
    pub fn offsets(&self) -> &Arc<Vec<usize>> {
        &self.offsets
    }

    /// Source node of each edge, grouped by destination.
    pub fn neighbors(&self) -> &Arc<Vec<usize>> {
        &self.neighbors
    }

    /// Destination node of each edge (parallel to [`Self::neighbors`]).
    pub fn dst_of_edge(&self) -> &Arc<Vec<usize>> {
        &self.dst_of_edge
    }

    /// Sources feeding node `i`.
    pub fn segment(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Debug dump: offsets and neighbors as single-column CSV files.
    pub fn dump_csv(&self, offsets_path: &Path, neighbors_path: &Path) -> Result<()> {
        let rows: Vec<String> = self.offsets.iter().map(|v| v.to_string()).collect();
        write_csv_rows(offsets_path, "offset", &rows)?;
        let rows: Vec<String> = self.neighbors.iter().map(|v| v.to_string()).collect();
        write_csv_rows(neighbors_path, "neighbor", &rows)
    }
}

/// Squared distance shared by the tree and the oracle; both paths must add
/// the coordinate terms in the same order to agree bitwise.
#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn space_coords(cloud: &PointCloud, space: GraphSpace) -> Result<Vec<[f64; 3]>> {
    match space {
        GraphSpace::XyzFull => Ok(cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect()),
        GraphSpace::XyOnly => Ok(cloud.points.iter().map(|p| [p.x, p.y, 0.0]).collect()),
        GraphSpace::XyPlusNominalZ => {
            let spec = cloud.sensor.ok_or_else(|| {
                Error::Data(format!(
                    "graph space xy_plus_nominal_z needs a sensor spec on frame {}",
                    cloud.frame_id
                ))
            })?;
            cloud
                .points
                .iter()
                .map(|p| {
                    let beam = p.beam.ok_or_else(|| {
                        Error::Data(format!(
                            "graph space xy_plus_nominal_z needs beam indices on frame {}",
                            cloud.frame_id
                        ))
                    })?;
                    let r_xy = (p.x * p.x + p.y * p.y).sqrt();
                    Ok([p.x, p.y, r_xy * spec.beam_elevation(beam).tan()])
                })
                .collect()
        }
    }
}

/// Neighbor candidate ordered by (squared distance, index).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    idx: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_size(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("kNN graph needs k >= 1".into()));
    }
    if n <= k {
        return Err(Error::Data(format!(
            "kNN graph needs more than k = {k} points, cloud has {n}"
        )));
    }
    Ok(())
}

/// Exhaustive O(N²) construction; the verification oracle for [`build_knn`].
pub fn brute_force_knn(
    cloud: &PointCloud,
    k: usize,
    space: GraphSpace,
    self_loops: bool,
) -> Result<KnnGraph> {
    check_size(cloud.len(), k)?;
    let coords = space_coords(cloud, space)?;
    let n = coords.len();
    let mut segments = Vec::with_capacity(n);
    for i in 0..n {
        let mut cands: Vec<Cand> = (0..n)
            .filter(|&j| j != i)
            .map(|j| Cand {
                d2: dist2(&coords[i], &coords[j]),
                idx: j,
            })
            .collect();
        cands.sort_unstable();
        cands.truncate(k);
        let mut seg: Vec<usize> = cands.into_iter().map(|c| c.idx).collect();
        if self_loops {
            seg.push(i);
        }
        segments.push(seg);
    }
    Ok(KnnGraph::from_segments(segments, k, space, self_loops))
}

struct KdTree<'a> {
    coords: &'a [[f64; 3]],
    order: Vec<u32>,
}

impl<'a> KdTree<'a> {
    fn build(coords: &'a [[f64; 3]]) -> Self {
        let mut order: Vec<u32> = (0..coords.len() as u32).collect();
        Self::split(coords, &mut order, 0);
        KdTree { coords, order }
    }

    fn split(coords: &[[f64; 3]], slice: &mut [u32], depth: usize) {
        if slice.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            coords[a as usize][axis]
                .total_cmp(&coords[b as usize][axis])
                .then(a.cmp(&b))
        });
        let (lo, rest) = slice.split_at_mut(mid);
        Self::split(coords, lo, depth + 1);
        Self::split(coords, &mut rest[1..], depth + 1);
    }

    /// The k nearest points to `query` excluding index `skip`, ascending by
    /// (squared distance, index).
    fn knn(&self, query: &[f64; 3], skip: usize, k: usize) -> Vec<Cand> {
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        self.search(&self.order, 0, query, skip, k, &mut heap);
        let mut out = heap.into_sorted_vec();
        debug_assert_eq!(out.len(), k.min(self.coords.len().saturating_sub(1)));
        out.truncate(k);
        out
    }

    fn search(
        &self,
        slice: &[u32],
        depth: usize,
        query: &[f64; 3],
        skip: usize,
        k: usize,
        heap: &mut BinaryHeap<Cand>,
    ) {
        if slice.is_empty() {
            return;
        }
        let axis = depth % 3;
        let mid = slice.len() / 2;
        let pivot = slice[mid] as usize;
        if pivot != skip {
            let cand = Cand {
                d2: dist2(query, &self.coords[pivot]),
                idx: pivot,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap non-empty") {
                heap.pop();
                heap.push(cand);
            }
        }
        let diff = query[axis] - self.coords[pivot][axis];
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.search(near, depth + 1, query, skip, k, heap);
        // a point across the splitting plane can still tie the current worst
        // and win on index, so descend on equality too
        let must_check_far =
            heap.len() < k || diff * diff <= heap.peek().expect("heap non-empty").d2;
        if must_check_far {
            self.search(far, depth + 1, query, skip, k, heap);
        }
    }
}

/// kd-tree accelerated kNN graph. For each point the neighbors are the `k`
/// nearest other points in the chosen space (ties to the lower index),
/// ascending by distance, with a trailing self-loop when `self_loops` is set
/// so no attention segment is ever empty.
pub fn build_knn(
    cloud: &PointCloud,
    k: usize,
    space: GraphSpace,
    self_loops: bool,
) -> Result<KnnGraph> {
    check_size(cloud.len(), k)?;
    let coords = space_coords(cloud, space)?;
    let tree = KdTree::build(&coords);
    let mut segments = Vec::with_capacity(coords.len());
    for (i, q) in coords.iter().enumerate() {
        let found = tree.knn(q, i, k);
        let mut seg: Vec<usize> = found.into_iter().map(|c| c.idx).collect();
        if self_loops {
            seg.push(i);
        }
        segments.push(seg);
    }
    Ok(KnnGraph::from_segments(segments, k, space, self_loops))
}
