//! Grouping of thresholded moving pixels into object candidates.
//!
//! Optical flow between consecutive mean timestamp images feeds a
//! position/flow/timestamp dissimilarity, and DBSCAN over that metric emits
//! clusters circumscribed by axis-aligned bounding boxes.

use crate::segment::{BinaryMap, NormalizedImage, TimestampImage};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("cluster has no members")]
    EmptyCluster,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    /// Weight of the pixel distance term, per px.
    pub w_p: f64,
    /// Weight of the flow difference term, per px/s.
    pub w_v: f64,
    /// Weight of the normalized timestamp difference term.
    pub w_rho: f64,
    /// DBSCAN neighborhood radius on the dissimilarity.
    pub eps: f64,
    /// Minimum neighborhood size for a core point.
    pub min_pts: usize,
    /// Lucas-Kanade window half-size (window is 2h+1 square).
    pub lk_half_window: usize,
    /// Smallest structure-tensor eigenvalue accepted for a flow estimate.
    pub lk_eigen_floor: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            w_p: 1.0,
            w_v: 0.01,
            w_rho: 5.0,
            eps: 5.0,
            min_pts: 8,
            lk_half_window: 7,
            lk_eigen_floor: 1e-6,
        }
    }
}

/// Per-pixel optical flow in px/s with validity mask.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

fn image_value(ts: &TimestampImage, x: i64, y: i64) -> f64 {
    if x < 0 || y < 0 || x >= ts.width as i64 || y >= ts.height as i64 {
        return 0.0;
    }
    let i = y as usize * ts.width + x as usize;
    if ts.count[i] > 0 {
        ts.mean_ts[i]
    } else {
        0.0
    }
}

/// Single-level Lucas-Kanade flow between consecutive timestamp images.
///
/// Flow is solved only at pixels where both images have data; the estimate is
/// invalid where the structure tensor is near-singular. Units are px/s using
/// the gap between the two buffer starts.
pub fn optical_flow(
    prev: &TimestampImage,
    curr: &TimestampImage,
    config: &ClusterConfig,
) -> Result<FlowField, ClusterError> {
    if prev.width != curr.width || prev.height != curr.height {
        return Err(ClusterError::DimensionMismatch(
            prev.width,
            prev.height,
            curr.width,
            curr.height,
        ));
    }
    let n = curr.width * curr.height;
    let mut field = FlowField {
        width: curr.width,
        height: curr.height,
        vx: vec![0.0; n],
        vy: vec![0.0; n],
        valid: vec![false; n],
    };
    let dt = (curr.t0.saturating_sub(prev.t0)) as f64 * 1e-9;
    if dt <= 0.0 {
        return Ok(field);
    }
    let h = config.lk_half_window as i64;
    for y in 0..curr.height as i64 {
        for x in 0..curr.width as i64 {
            let i = y as usize * curr.width + x as usize;
            if curr.count[i] == 0 || prev.count[i] == 0 {
                continue;
            }
            let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
            let (mut b1, mut b2) = (0.0, 0.0);
            for dy in -h..=h {
                for dx in -h..=h {
                    let (px, py) = (x + dx, y + dy);
                    let gx = (image_value(curr, px + 1, py) - image_value(curr, px - 1, py)) / 2.0;
                    let gy = (image_value(curr, px, py + 1) - image_value(curr, px, py - 1)) / 2.0;
                    let it = image_value(curr, px, py) - image_value(prev, px, py);
                    a11 += gx * gx;
                    a12 += gx * gy;
                    a22 += gy * gy;
                    b1 -= gx * it;
                    b2 -= gy * it;
                }
            }
            let trace = a11 + a22;
            let det = a11 * a22 - a12 * a12;
            let disc = (trace * trace / 4.0 - det).max(0.0).sqrt();
            let lambda_min = trace / 2.0 - disc;
            if lambda_min < config.lk_eigen_floor * curr.window * curr.window || det.abs() < 1e-300
            {
                continue;
            }
            let dx_px = (a22 * b1 - a12 * b2) / det;
            let dy_px = (-a12 * b1 + a11 * b2) / det;
            field.vx[i] = dx_px / dt;
            field.vy[i] = dy_px / dt;
            field.valid[i] = true;
        }
    }
    Ok(field)
}

/// Pairwise dissimilarity `C = w_p |dx| + w_v |dv| + w_rho |drho|`.
///
/// If either pixel lacks a valid flow estimate the flow term is dropped and
/// the remaining weights are renormalized to keep the scale comparable.
pub fn dissimilarity(
    a: (u32, u32),
    b: (u32, u32),
    flow: &FlowField,
    rho: &NormalizedImage,
    config: &ClusterConfig,
) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    let d_pos = (dx * dx + dy * dy).sqrt();
    let ia = flow.idx(a.0 as usize, a.1 as usize);
    let ib = flow.idx(b.0 as usize, b.1 as usize);
    let ra = rho.rho[rho.idx(a.0 as usize, a.1 as usize)];
    let rb = rho.rho[rho.idx(b.0 as usize, b.1 as usize)];
    let d_rho = if ra.is_finite() && rb.is_finite() {
        (ra - rb).abs()
    } else {
        0.0
    };
    if flow.valid[ia] && flow.valid[ib] {
        let dvx = flow.vx[ia] - flow.vx[ib];
        let dvy = flow.vy[ia] - flow.vy[ib];
        let d_flow = (dvx * dvx + dvy * dvy).sqrt();
        config.w_p * d_pos + config.w_v * d_flow + config.w_rho * d_rho
    } else {
        let total = config.w_p + config.w_v + config.w_rho;
        let partial = config.w_p + config.w_rho;
        if partial <= 0.0 {
            return 0.0;
        }
        (config.w_p * d_pos + config.w_rho * d_rho) * total / partial
    }
}

/// A segmented moving-object candidate.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub members: Vec<(u32, u32)>,
    /// Inclusive pixel bounds (min_x, min_y, max_x, max_y).
    pub bbox: (u32, u32, u32, u32),
    /// Mean flow over members with valid flow, px/s.
    pub mean_flow: (f64, f64),
    pub mean_rho: f64,
    /// Buffer end time of the window that produced the cluster, ns.
    pub t: u64,
}

impl Cluster {
    /// Bounding box width in px (inclusive pixel extent).
    pub fn width_px(&self) -> f64 {
        (self.bbox.2 - self.bbox.0 + 1) as f64
    }

    pub fn height_px(&self) -> f64 {
        (self.bbox.3 - self.bbox.1 + 1) as f64
    }

    /// Continuous center of the bounding box.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.bbox.0 + self.bbox.2) as f64 / 2.0,
            (self.bbox.1 + self.bbox.3) as f64 / 2.0,
        )
    }
}

/// Tight axis-aligned bounds of a pixel set.
pub fn circumscribe(members: &[(u32, u32)]) -> Result<(u32, u32, u32, u32), ClusterError> {
    if members.is_empty() {
        return Err(ClusterError::EmptyCluster);
    }
    let mut bb = (u32::MAX, u32::MAX, 0u32, 0u32);
    for &(x, y) in members {
        bb.0 = bb.0.min(x);
        bb.1 = bb.1.min(y);
        bb.2 = bb.2.max(x);
        bb.3 = bb.3.max(y);
    }
    Ok(bb)
}

/// DBSCAN over masked pixels with the combined dissimilarity.
///
/// Neighbor candidates are found through a pixel-grid bucket index: since
/// `C >= w_p * |dx|`, all eps-neighbors lie within eps/w_p pixels. Noise
/// pixels are discarded. Iteration is row-major, so the output is
/// deterministic; border-point ties go to the first claiming cluster.
pub fn dbscan(
    map: &BinaryMap,
    flow: &FlowField,
    rho: &NormalizedImage,
    config: &ClusterConfig,
    t: u64,
) -> Vec<Cluster> {
    let pixels = map.pixels();
    if pixels.is_empty() {
        return Vec::new();
    }
    let radius_px = if config.w_p > 0.0 {
        (config.eps / config.w_p).ceil() as i64
    } else {
        i64::MAX / 4
    };
    let cell = radius_px.max(1);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &(x, y)) in pixels.iter().enumerate() {
        grid.entry((x as i64 / cell, y as i64 / cell)).or_default().push(i);
    }
    let neighbors = |i: usize| -> Vec<usize> {
        let (x, y) = pixels[i];
        let (cx, cy) = (x as i64 / cell, y as i64 / cell);
        let mut out = Vec::new();
        for gy in cy - 1..=cy + 1 {
            for gx in cx - 1..=cx + 1 {
                if let Some(bucket) = grid.get(&(gx, gy)) {
                    for &j in bucket {
                        if dissimilarity(pixels[i], pixels[j], flow, rho, config) <= config.eps {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };

    const UNVISITED: i32 = -2;
    const NOISE: i32 = -1;
    let mut labels = vec![UNVISITED; pixels.len()];
    let mut next_id = 0i32;
    for i in 0..pixels.len() {
        if labels[i] != UNVISITED {
            continue;
        }
        let nbrs = neighbors(i);
        if nbrs.len() < config.min_pts {
            labels[i] = NOISE;
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[i] = id;
        let mut frontier = nbrs;
        let mut k = 0;
        while k < frontier.len() {
            let j = frontier[k];
            k += 1;
            if labels[j] == NOISE {
                labels[j] = id; // border point
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = id;
            let jn = neighbors(j);
            if jn.len() >= config.min_pts {
                frontier.extend(jn);
            }
        }
    }

    let mut clusters: Vec<Cluster> = Vec::new();
    for id in 0..next_id {
        let members: Vec<(u32, u32)> = pixels
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == id)
            .map(|(&p, _)| p)
            .collect();
        if members.len() < config.min_pts {
            continue;
        }
        let bbox = circumscribe(&members).expect("non-empty cluster");
        let mut fx = 0.0;
        let mut fy = 0.0;
        let mut fn_ = 0usize;
        let mut rsum = 0.0;
        let mut rn = 0usize;
        for &(x, y) in &members {
            let fi = flow.idx(x as usize, y as usize);
            if flow.valid[fi] {
                fx += flow.vx[fi];
                fy += flow.vy[fi];
                fn_ += 1;
            }
            let r = rho.rho[rho.idx(x as usize, y as usize)];
            if r.is_finite() {
                rsum += r;
                rn += 1;
            }
        }
        clusters.push(Cluster {
            members,
            bbox,
            mean_flow: if fn_ > 0 {
                (fx / fn_ as f64, fy / fn_ as f64)
            } else {
                (0.0, 0.0)
            },
            mean_rho: if rn > 0 { rsum / rn as f64 } else { 0.0 },
            t,
        });
    }
    clusters
}

/// Core-point partition of a DBSCAN result, used to check order invariance.
pub fn core_point_partition(
    map: &BinaryMap,
    flow: &FlowField,
    rho: &NormalizedImage,
    config: &ClusterConfig,
) -> Vec<Vec<(u32, u32)>> {
    let clusters = dbscan(map, flow, rho, config, 0);
    let mut partition: Vec<Vec<(u32, u32)>> = clusters
        .iter()
        .map(|c| {
            let mut core: Vec<(u32, u32)> = c
                .members
                .iter()
                .copied()
                .filter(|&p| {
                    c.members
                        .iter()
                        .filter(|&&q| dissimilarity(p, q, flow, rho, config) <= config.eps)
                        .count()
                        >= config.min_pts
                })
                .collect();
            core.sort_unstable();
            core
        })
        .collect();
    partition.sort();
    partition
}
