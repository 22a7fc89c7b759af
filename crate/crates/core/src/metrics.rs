//! Pixel precision/recall/F1, line correctness/completeness and APLS.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist, lerp, point_segment_dist2, project_on_segment, Point};
use crate::grid::BinaryMask;
use crate::vectorize::LineGraph;

pub const DEFAULT_TOLERANCE: f64 = 5.0;
pub const DEFAULT_CONTROL_SPACING: f64 = 50.0;
/// Length of the pieces lines are cut into for matching.
pub const SAMPLE_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// A rate had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

pub fn pixel_prf(pred: &BinaryMask, gt: &BinaryMask) -> Result<PixelScore> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch);
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let mut zero_division = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            zero_division = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PixelScore {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        zero_division,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub correctness: f64,
    pub completeness: f64,
    pub matched_pred_len: f64,
    pub total_pred_len: f64,
    pub matched_gt_len: f64,
    pub total_gt_len: f64,
    /// Correctness is undefined and reported as 0.
    pub pred_empty: bool,
    /// Completeness is undefined and reported as 0.
    pub gt_empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineScore {
    #[serde(flatten)]
    pub matching: MatchScore,
    pub apls: f64,
    pub tolerance: f64,
    pub control_spacing: f64,
}

/// Fraction of predicted length lying within `tol` of the ground truth
/// (correctness) and of ground-truth length within `tol` of the prediction
/// (completeness). Lines are cut into pieces of at most
/// [`SAMPLE_SPACING`] and a piece counts when its midpoint matches.
pub fn correctness_completeness(pred: &LineGraph, gt: &LineGraph, tol: f64) -> Result<MatchScore> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidParam(format!("tolerance must be > 0, got {tol}")));
    }
    let (matched_pred_len, total_pred_len) = matched_length(pred, gt, tol);
    let (matched_gt_len, total_gt_len) = matched_length(gt, pred, tol);
    let ratio = |m: f64, t: f64| if t > 0.0 { m / t } else { 0.0 };
    Ok(MatchScore {
        correctness: ratio(matched_pred_len, total_pred_len),
        completeness: ratio(matched_gt_len, total_gt_len),
        matched_pred_len,
        total_pred_len,
        matched_gt_len,
        total_gt_len,
        pred_empty: total_pred_len == 0.0,
        gt_empty: total_gt_len == 0.0,
    })
}

pub fn line_scores(pred: &LineGraph, gt: &LineGraph, tol: f64, spacing: f64) -> Result<LineScore> {
    Ok(LineScore {
        matching: correctness_completeness(pred, gt, tol)?,
        apls: apls(pred, gt, spacing, tol)?,
        tolerance: tol,
        control_spacing: spacing,
    })
}

fn matched_length(src: &LineGraph, dst: &LineGraph, tol: f64) -> (f64, f64) {
    let index = SegmentIndex::new(dst, tol.max(8.0));
    let (mut matched, mut total) = (0.0, 0.0);
    for e in &src.edges {
        for (a, b) in e.geometry.segments() {
            let len = dist(a, b);
            let n = (len / SAMPLE_SPACING).ceil().max(1.0) as usize;
            let piece = len / n as f64;
            for k in 0..n {
                let mid = lerp(a, b, (k as f64 + 0.5) / n as f64);
                if index.nearest(mid, tol).is_some() {
                    matched += piece;
                }
                total += piece;
            }
        }
    }
    (matched, total)
}

/// Average path length similarity, averaged over both directions.
///
/// For each direction, degree-2 chains of the source graph are merged, and
/// control nodes are placed evenly along every chain at most `spacing`
/// apart. Each node is snapped to the nearest point of the other graph
/// within `snap_radius`. Every pair of nodes connected in the source scores
/// `min(1, |L_src - L_dst| / L_src)` from shortest-path lengths, or 1 when a
/// node did not snap or the snapped nodes are disconnected. The direction's
/// value is one minus the mean over pairs.
///
/// Both graphs empty gives 1; exactly one empty gives 0.
pub fn apls(pred: &LineGraph, gt: &LineGraph, spacing: f64, snap_radius: f64) -> Result<f64> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::InvalidParam(format!("control spacing must be > 0, got {spacing}")));
    }
    if !(snap_radius > 0.0) || !snap_radius.is_finite() {
        return Err(Error::InvalidParam(format!("snap radius must be > 0, got {snap_radius}")));
    }
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let forward = apls_one_way(gt, pred, spacing, snap_radius);
    let backward = apls_one_way(pred, gt, spacing, snap_radius);
    Ok(0.5 * (forward + backward))
}

/// One direction of [`apls`]: `src` supplies the control nodes.
pub fn apls_one_way(src: &LineGraph, dst: &LineGraph, spacing: f64, snap_radius: f64) -> f64 {
    let (src_graph, _) = control_graph(src, spacing);
    let n = src_graph.pos.len();

    let index = SegmentIndex::new(dst, snap_radius.max(8.0));
    let mut snaps: Vec<Option<(usize, f64)>> = Vec::with_capacity(n);
    for &p in &src_graph.pos {
        snaps.push(index.nearest(p, snap_radius).map(|h| (h.edge, h.arc)));
    }
    let (dst_graph, snap_nodes) = split_graph(dst, &snaps);

    let (mut penalty, mut pairs) = (0.0, 0usize);
    for i in 0..n {
        let ds = dijkstra(&src_graph, i);
        let dd = snap_nodes[i].map(|s| dijkstra(&dst_graph, s));
        for j in i + 1..n {
            let ls = ds[j];
            if !ls.is_finite() || ls <= 0.0 {
                continue;
            }
            pairs += 1;
            let lp = match (&dd, snap_nodes[j]) {
                (Some(d), Some(t)) => d[t],
                _ => f64::INFINITY,
            };
            if !lp.is_finite() {
                penalty += 1.0;
                continue;
            }
            let diff = (ls - lp).abs();
            if diff > 1e-9 * ls.max(1.0) {
                penalty += (diff / ls).min(1.0);
            }
        }
    }
    if pairs == 0 {
        1.0
    } else {
        1.0 - penalty / pairs as f64
    }
}

struct WeightedGraph {
    pos: Vec<Point>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    fn add_node(&mut self, p: Point) -> usize {
        self.pos.push(p);
        self.adj.push(Vec::new());
        self.pos.len() - 1
    }

    fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        self.adj[a].push((b, w));
        if a != b {
            self.adj[b].push((a, w));
        }
    }
}

#[derive(PartialEq)]
struct Visit(f64, usize);

impl Eq for Visit {}

impl Ord for Visit {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Visit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(g: &WeightedGraph, from: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; g.pos.len()];
    d[from] = 0.0;
    let mut heap = BinaryHeap::from([Visit(0.0, from)]);
    while let Some(Visit(du, u)) = heap.pop() {
        if du > d[u] {
            continue;
        }
        for &(v, w) in &g.adj[u] {
            let dv = du + w;
            if dv < d[v] {
                d[v] = dv;
                heap.push(Visit(dv, v));
            }
        }
    }
    d
}

/// A maximal path whose interior nodes all have degree 2.
struct Chain {
    a: usize,
    b: usize,
    points: Vec<Point>,
}

fn contract(g: &LineGraph) -> (Vec<usize>, Vec<Chain>) {
    let deg = g.degrees();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); g.nodes.len()];
    for (k, e) in g.edges.iter().enumerate() {
        incident[e.a].push(k);
        if e.b != e.a {
            incident[e.b].push(k);
        }
    }
    let mut kept: Vec<bool> = deg.iter().map(|&d| d != 2 && d != 0).collect();
    let mut used = vec![false; g.edges.len()];
    let mut chains = Vec::new();
    let mut order: Vec<usize> = (0..g.nodes.len()).filter(|&i| kept[i]).collect();
    let mut next = 0;
    loop {
        while next < order.len() {
            let start = order[next];
            next += 1;
            for &e0 in &incident[start].clone() {
                if used[e0] {
                    continue;
                }
                chains.push(walk_chain(g, &incident, &kept, &mut used, start, e0));
            }
        }
        // Remaining edges form loops of degree-2 nodes.
        let anchor = g
            .edges
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .flat_map(|(_, e)| [e.a, e.b])
            .min_by(|&p, &q| {
                let (np, nq) = (&g.nodes[p], &g.nodes[q]);
                (np.x, np.y, p).partial_cmp(&(nq.x, nq.y, q)).unwrap()
            });
        match anchor {
            Some(a) => {
                // Only nodes of the unvisited loop can be reached from here.
                let a = loop_min_node(g, &incident, &used, a);
                kept[a] = true;
                order.push(a);
            }
            None => break,
        }
    }
    (order, chains)
}

/// Smallest-coordinate node on the loop through `a`.
fn loop_min_node(g: &LineGraph, incident: &[Vec<usize>], used: &[bool], a: usize) -> usize {
    let mut best = a;
    let mut seen = vec![a];
    let mut stack = vec![a];
    while let Some(u) = stack.pop() {
        for &k in &incident[u] {
            if used[k] {
                continue;
            }
            let e = &g.edges[k];
            let v = if e.a == u { e.b } else { e.a };
            if !seen.contains(&v) {
                seen.push(v);
                stack.push(v);
                let (nv, nb) = (&g.nodes[v], &g.nodes[best]);
                if (nv.x, nv.y) < (nb.x, nb.y) {
                    best = v;
                }
            }
        }
    }
    best
}

fn walk_chain(
    g: &LineGraph,
    incident: &[Vec<usize>],
    kept: &[bool],
    used: &mut [bool],
    start: usize,
    e0: usize,
) -> Chain {
    let mut points = Vec::new();
    let mut cur = start;
    let mut e = e0;
    loop {
        used[e] = true;
        let edge = &g.edges[e];
        let (other, forward) = if edge.a == cur { (edge.b, true) } else { (edge.a, false) };
        let mut pts = edge.geometry.points.clone();
        if !forward {
            pts.reverse();
        }
        if points.is_empty() {
            points.extend(pts);
        } else {
            points.extend(pts.into_iter().skip(1));
        }
        cur = other;
        if kept[cur] {
            break;
        }
        match incident[cur].iter().find(|&&k| !used[k]) {
            Some(&k) => e = k,
            None => break,
        }
    }
    Chain {
        a: start,
        b: cur,
        points,
    }
}

fn point_at_arc(points: &[Point], s: f64) -> Point {
    let mut left = s;
    for w in points.windows(2) {
        let l = dist(w[0], w[1]);
        if left <= l {
            return lerp(w[0], w[1], if l > 0.0 { left / l } else { 0.0 });
        }
        left -= l;
    }
    *points.last().unwrap()
}

/// Kept nodes plus evenly spaced control nodes along each chain. Returns the
/// graph and the number of kept nodes (which come first).
fn control_graph(g: &LineGraph, spacing: f64) -> (WeightedGraph, usize) {
    let (kept, chains) = contract(g);
    let mut wg = WeightedGraph {
        pos: Vec::new(),
        adj: Vec::new(),
    };
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for &k in &kept {
        let n = &g.nodes[k];
        slot.insert(k, wg.add_node((n.x, n.y)));
    }
    for c in &chains {
        let len: f64 = c.points.windows(2).map(|w| dist(w[0], w[1])).sum();
        if !(len > 0.0) {
            continue;
        }
        let mut pieces = (len / spacing - 1e-9).ceil().max(1.0) as usize;
        if c.a == c.b {
            pieces = pieces.max(2);
        }
        let step = len / pieces as f64;
        let mut prev = slot[&c.a];
        for i in 1..pieces {
            let s = len * i as f64 / pieces as f64;
            let id = wg.add_node(point_at_arc(&c.points, s));
            wg.add_edge(prev, id, step);
            prev = id;
        }
        wg.add_edge(prev, slot[&c.b], step);
    }
    (wg, kept.len())
}

/// `g` as a weighted graph with an extra node for every snap. Returns the
/// graph and, for each snap request, its node.
fn split_graph(g: &LineGraph, snaps: &[Option<(usize, f64)>]) -> (WeightedGraph, Vec<Option<usize>>) {
    let mut wg = WeightedGraph {
        pos: g.nodes.iter().map(|n| (n.x, n.y)).collect(),
        adj: vec![Vec::new(); g.nodes.len()],
    };
    let mut per_edge: Vec<Vec<(f64, usize)>> = vec![Vec::new(); g.edges.len()];
    let mut out = Vec::with_capacity(snaps.len());
    for s in snaps.iter() {
        match *s {
            Some((e, arc)) => {
                let id = wg.add_node(point_at_arc(&g.edges[e].geometry.points, arc));
                per_edge[e].push((arc, id));
                out.push(Some(id));
            }
            None => out.push(None),
        }
    }
    for (k, e) in g.edges.iter().enumerate() {
        let stops = &mut per_edge[k];
        stops.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        let len = e.geometry.length();
        let (mut prev, mut prev_arc) = (e.a, 0.0);
        for &(arc, id) in stops.iter() {
            wg.add_edge(prev, id, (arc - prev_arc).max(0.0));
            prev = id;
            prev_arc = arc;
        }
        wg.add_edge(prev, e.b, (len - prev_arc).max(0.0));
    }
    (wg, out)
}

struct Hit {
    edge: usize,
    arc: f64,
}

struct Segment {
    edge: usize,
    a: Point,
    b: Point,
    arc0: f64,
}

/// Uniform-grid bucket index over the segments of a graph.
struct SegmentIndex {
    segs: Vec<Segment>,
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SegmentIndex {
    fn new(g: &LineGraph, cell: f64) -> Self {
        let mut segs = Vec::new();
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (k, e) in g.edges.iter().enumerate() {
            let mut arc0 = 0.0;
            for (a, b) in e.geometry.segments() {
                let id = segs.len();
                let (cx0, cy0) = ((a.0.min(b.0) / cell).floor() as i64, (a.1.min(b.1) / cell).floor() as i64);
                let (cx1, cy1) = ((a.0.max(b.0) / cell).floor() as i64, (a.1.max(b.1) / cell).floor() as i64);
                for cy in cy0..=cy1 {
                    for cx in cx0..=cx1 {
                        buckets.entry((cx, cy)).or_default().push(id);
                    }
                }
                segs.push(Segment { edge: k, a, b, arc0 });
                arc0 += dist(a, b);
            }
        }
        Self { segs, cell, buckets }
    }

    /// Closest point within `radius`, preferring the lowest segment index on
    /// ties.
    fn nearest(&self, p: Point, radius: f64) -> Option<Hit> {
        let (cx0, cy0) = (((p.0 - radius) / self.cell).floor() as i64, ((p.1 - radius) / self.cell).floor() as i64);
        let (cx1, cy1) = (((p.0 + radius) / self.cell).floor() as i64, ((p.1 + radius) / self.cell).floor() as i64);
        let r2 = radius * radius;
        let mut best: Option<(f64, usize)> = None;
        for cy in cy0..=cy1 {
            for cx in cx0..=cx1 {
                let Some(ids) = self.buckets.get(&(cx, cy)) else {
                    continue;
                };
                for &id in ids {
                    let s = &self.segs[id];
                    let d2 = point_segment_dist2(p, s.a, s.b);
                    if d2 > r2 {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bd, bid)) => d2 < bd || (d2 == bd && id < bid),
                    };
                    if better {
                        best = Some((d2, id));
                    }
                }
            }
        }
        best.map(|(_, id)| {
            let s = &self.segs[id];
            let (_, t) = project_on_segment(p, s.a, s.b);
            Hit {
                edge: s.edge,
                arc: s.arc0 + t * dist(s.a, s.b),
            }
        })
    }
}
