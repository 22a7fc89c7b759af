//! Mask to line graph: thinning, node detection and edge tracing.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{arc_length, dist, lerp, simplify, Point, Polyline};
use crate::grid::BinaryMask;

/// Vertex tolerance used to simplify traced pixel chains.
pub const SIMPLIFY_TOLERANCE: f64 = 1.0;
/// Chord length, in path pixels, for the turning test.
pub const TURN_WINDOW: usize = 5;
pub const DEFAULT_TURN_ANGLE: f64 = 30.0;
pub const DEFAULT_MIN_COMPONENT: usize = 4;
pub const DEFAULT_SPUR_LENGTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    End,
    Turning,
    Junction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: usize,
    pub b: usize,
    pub geometry: Polyline,
    /// Arc length of `geometry`.
    pub length: f64,
}

/// Undirected multigraph of line features. Node ids equal their index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LineGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl LineGraph {
    pub fn new(nodes: Vec<GraphNode>, edges: Vec<GraphEdge>) -> Result<Self> {
        let g = Self { nodes, edges };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::InvalidGeometry(format!("node {i} has id {}", n.id)));
            }
        }
        for e in &self.edges {
            if e.a >= self.nodes.len() || e.b >= self.nodes.len() {
                return Err(Error::InvalidGeometry(format!(
                    "edge {:?} references a missing node",
                    e.geometry.id
                )));
            }
            e.geometry.validate()?;
            if !(e.length > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "edge {:?} has zero length",
                    e.geometry.id
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Number of edge ends at each node; self-loops count twice.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for e in &self.edges {
            d[e.a] += 1;
            d[e.b] += 1;
        }
        d
    }

    pub fn polylines(&self) -> Vec<Polyline> {
        self.edges.iter().map(|e| e.geometry.clone()).collect()
    }

    /// One edge per polyline piece; endpoints with identical coordinates
    /// share a node. Lines are first split where they cross or where one
    /// ends on another, so crossings become junctions as they do in a
    /// raster. Node kinds follow the degree.
    pub fn from_polylines(lines: &[Polyline]) -> Result<Self> {
        for line in lines {
            line.validate()?;
        }
        let noded = node_crossings(lines);
        let lines = &noded[..];
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut node_at = |p: Point, nodes: &mut Vec<GraphNode>| {
            *index.entry((p.0.to_bits(), p.1.to_bits())).or_insert_with(|| {
                nodes.push(GraphNode {
                    id: nodes.len(),
                    x: p.0,
                    y: p.1,
                    kind: NodeKind::End,
                });
                nodes.len() - 1
            })
        };
        // Vertices shared between lines (or touched by another line's end)
        // become nodes too, so a line ending on another's interior vertex
        // stays connected.
        let key = |p: &Point| (p.0.to_bits(), p.1.to_bits());
        let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
        for line in lines {
            for (i, p) in line.points.iter().enumerate() {
                let end = i == 0 || i + 1 == line.points.len();
                *seen.entry(key(p)).or_default() += if end { 2 } else { 1 };
            }
        }
        for line in lines {
            let pts = &line.points;
            let mut start = 0;
            for i in 1..pts.len() {
                if i + 1 < pts.len() && seen[&key(&pts[i])] < 2 {
                    continue;
                }
                let geometry = Polyline {
                    id: line.id.clone(),
                    points: pts[start..=i].to_vec(),
                };
                let a = node_at(pts[start], &mut nodes);
                let b = node_at(pts[i], &mut nodes);
                edges.push(GraphEdge {
                    a,
                    b,
                    length: geometry.length(),
                    geometry,
                });
                start = i;
            }
        }
        let mut g = Self { nodes, edges };
        let deg = g.degrees();
        for (n, d) in g.nodes.iter_mut().zip(deg) {
            n.kind = match d {
                0 | 1 => NodeKind::End,
                2 => NodeKind::Turning,
                _ => NodeKind::Junction,
            };
        }
        g.validate()?;
        Ok(g)
    }
}

/// Copy of `lines` with a vertex added wherever a segment crosses another
/// segment's interior. Where the crossing is at an existing vertex of one
/// segment, that vertex's exact coordinates are inserted into the other so
/// both lines share it bit for bit.
fn node_crossings(lines: &[Polyline]) -> Vec<Polyline> {
    const EPS: f64 = 1e-9;
    let segs: Vec<(usize, usize, Point, Point)> = lines
        .iter()
        .enumerate()
        .flat_map(|(li, l)| l.segments().enumerate().map(move |(si, (a, b))| (li, si, a, b)))
        .collect();
    // (line, segment) -> inserted (t, point)
    let mut cuts: HashMap<(usize, usize), Vec<(f64, Point)>> = HashMap::new();
    for (i, &(li, si, a, b)) in segs.iter().enumerate() {
        for &(lj, sj, c, d) in &segs[i + 1..] {
            if li == lj && si.abs_diff(sj) < 2 {
                continue;
            }
            let r = (b.0 - a.0, b.1 - a.1);
            let q = (d.0 - c.0, d.1 - c.1);
            let den = r.0 * q.1 - r.1 * q.0;
            if den.abs() < EPS {
                continue;
            }
            let t = ((c.0 - a.0) * q.1 - (c.1 - a.1) * q.0) / den;
            let u = ((c.0 - a.0) * r.1 - (c.1 - a.1) * r.0) / den;
            if !(-EPS..=1.0 + EPS).contains(&t) || !(-EPS..=1.0 + EPS).contains(&u) {
                continue;
            }
            let snap = |v: f64, p0: Point, p1: Point| {
                if v < EPS {
                    Some(p0)
                } else if v > 1.0 - EPS {
                    Some(p1)
                } else {
                    None
                }
            };
            let p = snap(t, a, b)
                .or(snap(u, c, d))
                .unwrap_or_else(|| lerp(a, b, t));
            if snap(t, a, b).is_none() {
                cuts.entry((li, si)).or_default().push((t, p));
            }
            if snap(u, c, d).is_none() {
                cuts.entry((lj, sj)).or_default().push((u, p));
            }
        }
    }
    if cuts.is_empty() {
        return lines.to_vec();
    }
    lines
        .iter()
        .enumerate()
        .map(|(li, l)| {
            let mut points = vec![l.points[0]];
            for (si, (_, b)) in l.segments().enumerate() {
                if let Some(c) = cuts.get_mut(&(li, si)) {
                    c.sort_by(|x, y| x.0.total_cmp(&y.0));
                    points.extend(c.iter().map(|&(_, p)| p));
                }
                points.push(b);
            }
            points.dedup();
            Polyline {
                id: l.id.clone(),
                points,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorizeOptions {
    pub min_component_px: usize,
    /// Degrees.
    pub turn_angle_min: f64,
    /// Branches from an end to a junction shorter than this many pixels
    /// are removed after thinning.
    pub spur_length: usize,
}

impl Default for VectorizeOptions {
    fn default() -> Self {
        Self {
            min_component_px: DEFAULT_MIN_COMPONENT,
            turn_angle_min: DEFAULT_TURN_ANGLE,
            spur_length: DEFAULT_SPUR_LENGTH,
        }
    }
}

/// Drop small components, thin, prune spurs, find nodes and trace edges.
pub fn vectorize(mask: &BinaryMask, opts: &VectorizeOptions) -> Result<LineGraph> {
    let cleaned = remove_small_components(mask, opts.min_component_px);
    let skel = prune_spurs(&skeletonize(&cleaned), opts.spur_length);
    let nodes = extract_nodes(&skel, opts.turn_angle_min);
    let mut graph = link_edges(&skel, &nodes)?;
    extend_ends(&mut graph, &cleaned);
    Ok(graph)
}

/// Thinning distorts line ends: diagonals stop short, and the last pixels
/// often hook toward a corner of the cap. Each end edge loses its last
/// half-width of geometry and is then extended straight, along the
/// direction of the remaining body, to one half-width before the farthest
/// mask pixel ahead (searched in a corridor around that direction).
pub fn extend_ends(graph: &mut LineGraph, mask: &BinaryMask) {
    let deg = graph.degrees();
    for e in &mut graph.edges {
        for at_end in [false, true] {
            let node = if at_end { e.b } else { e.a };
            if deg[node] != 1 || e.a == e.b {
                continue;
            }
            let pts = &mut e.geometry.points;
            if at_end {
                pts.reverse();
            }
            if let Some(new) = reshaped_end(mask, pts) {
                *pts = new;
            }
            if at_end {
                pts.reverse();
            }
        }
        e.length = e.geometry.length();
    }
    for e in &graph.edges {
        for (node, p) in [(e.a, e.geometry.points[0]), (e.b, *e.geometry.points.last().unwrap())] {
            if deg[node] == 1 {
                graph.nodes[node].x = p.0;
                graph.nodes[node].y = p.1;
            }
        }
    }
}

/// `pts` with its start replaced as described in [`extend_ends`], or `None`
/// when the edge is too short to trust its direction.
fn reshaped_end(mask: &BinaryMask, pts: &[Point]) -> Option<Vec<Point>> {
    let len = arc_length(pts);
    let probe = point_along(pts, (2 * TURN_WINDOW) as f64);
    let half = half_width(mask, probe);
    let cut = half + 1.0;
    if len < 2.0 * cut + TURN_WINDOW as f64 {
        return None;
    }
    let start = point_along(pts, cut);
    let back = point_along(pts, cut + TURN_WINDOW as f64);
    let (dx, dy) = (start.0 - back.0, start.1 - back.1);
    let n = dx.hypot(dy);
    if n == 0.0 {
        return None;
    }
    let dir = (dx / n, dy / n);
    let reach = 4.0 * half + 12.0;
    let r = reach.ceil() as i64;
    let (cx, cy) = (start.0.round() as i64, start.1.round() as i64);
    let mut far = 0.0f64;
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if !mask.get_signed(x, y) {
                continue;
            }
            let (vx, vy) = (x as f64 - start.0, y as f64 - start.1);
            let along = vx * dir.0 + vy * dir.1;
            let across = (vx * dir.1 - vy * dir.0).abs();
            if along <= reach && across <= half + 1.5 {
                far = far.max(along);
            }
        }
    }
    let ext = far - half;
    // Rest of the path after the cut.
    let mut rest = vec![start];
    let mut acc = 0.0;
    for w in pts.windows(2) {
        acc += dist(w[0], w[1]);
        if acc > cut + 1e-9 {
            rest.push(w[1]);
        }
    }
    rest.dedup_by(|a, b| dist(*a, *b) < 1e-9);
    if ext > 0.5 {
        rest.insert(0, (start.0 + dir.0 * ext, start.1 + dir.1 * ext));
    }
    (rest.len() >= 2).then_some(rest)
}

/// Distance from `p` to the nearest background pixel centre, less half a
/// pixel.
fn half_width(mask: &BinaryMask, p: Point) -> f64 {
    let r = 12i64;
    let (cx, cy) = (p.0.round() as i64, p.1.round() as i64);
    let mut best = f64::INFINITY;
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if !mask.get_signed(x, y) {
                best = best.min((x as f64 - p.0).hypot(y as f64 - p.1));
            }
        }
    }
    (best.min(r as f64) - 0.5).max(0.0)
}

/// Point at arc length `s` from the start of `pts` (clamped).
fn point_along(pts: &[Point], s: f64) -> Point {
    let mut left = s;
    for w in pts.windows(2) {
        let l = dist(w[0], w[1]);
        if left <= l {
            return lerp(w[0], w[1], left / l);
        }
        left -= l;
    }
    *pts.last().unwrap()
}


// Tracing prefers 4-neighbours so diagonal shortcuts are taken last.
const NEIGHBOURS: [(i64, i64); 8] = [
    (0, -1),
    (1, 0),
    (0, 1),
    (-1, 0),
    (1, -1),
    (1, 1),
    (-1, 1),
    (-1, -1),
];

// P2..P9 of the Zhang–Suen scheme: clockwise from north.
const RING: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

fn neighbours(m: &BinaryMask, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    NEIGHBOURS.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        m.get_signed(nx, ny).then_some((nx as usize, ny as usize))
    })
}

fn degree(m: &BinaryMask, x: usize, y: usize) -> usize {
    neighbours(m, x, y).count()
}

/// 8-connected components as lists of pixels in raster order of discovery.
pub fn components(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || seen[y * w + x] {
                continue;
            }
            seen[y * w + x] = true;
            let mut comp = vec![(x, y)];
            let mut i = 0;
            while i < comp.len() {
                let (cx, cy) = comp[i];
                for (nx, ny) in neighbours(mask, cx, cy) {
                    if !seen[ny * w + nx] {
                        seen[ny * w + nx] = true;
                        comp.push((nx, ny));
                    }
                }
                i += 1;
            }
            out.push(comp);
        }
    }
    out
}

pub fn remove_small_components(mask: &BinaryMask, min_px: usize) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut out = BinaryMask::empty(w, h);
    for comp in components(mask) {
        if comp.len() >= min_px {
            for (x, y) in comp {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// One-pixel-wide, 8-connected skeleton.
///
/// Zhang-Suen iterations, each followed by removal of staircase corners on
/// the parts already thin, until nothing changes. Pruning as soon as a
/// stretch is thin keeps diagonal ends from being eaten by later passes. A component that thinning would erase entirely keeps the pixel
/// nearest its centroid, so the component count never changes.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let comps = components(mask);
    let mut m = mask.clone();
    loop {
        let thinned = zhang_suen(&mut m);
        if !prune_redundant(&mut m) && !thinned {
            break;
        }
    }
    for comp in comps {
        if comp.iter().any(|&(x, y)| m.get(x, y)) {
            continue;
        }
        let n = comp.len() as f64;
        let cx = comp.iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let cy = comp.iter().map(|p| p.1 as f64).sum::<f64>() / n;
        let best = comp
            .iter()
            .min_by(|p, q| {
                let dp = (p.0 as f64 - cx).powi(2) + (p.1 as f64 - cy).powi(2);
                let dq = (q.0 as f64 - cx).powi(2) + (q.1 as f64 - cy).powi(2);
                dp.total_cmp(&dq)
            })
            .unwrap();
        m.set(best.0, best.1, true);
    }
    m
}

/// Remove end branches shorter than `max_len` pixels that run into a
/// junction, shortest first, so a fork keeps its longest arm.
pub fn prune_spurs(skeleton: &BinaryMask, max_len: usize) -> BinaryMask {
    let mut m = skeleton.clone();
    let (w, h) = m.dims();
    loop {
        let mut shortest: Option<Vec<(usize, usize)>> = None;
        for y in 0..h {
            for x in 0..w {
                if !m.get(x, y) || degree(&m, x, y) != 1 {
                    continue;
                }
                if let Some(path) = spur_from(&m, (x, y), max_len) {
                    if shortest.as_ref().is_none_or(|s| path.len() < s.len()) {
                        shortest = Some(path);
                    }
                }
            }
        }
        match shortest {
            Some(path) => {
                for (x, y) in path {
                    m.set(x, y, false);
                }
                m = skeletonize(&m);
            }
            None => return m,
        }
    }
}

/// Pixels from end pixel `p` up to (not including) the first junction
/// pixel, if that takes fewer than `max_len` pixels.
fn spur_from(m: &BinaryMask, p: (usize, usize), max_len: usize) -> Option<Vec<(usize, usize)>> {
    let mut path = vec![p];
    let mut cur = p;
    while path.len() < max_len {
        let next: Vec<(usize, usize)> = neighbours(m, cur.0, cur.1)
            .filter(|q| !path.contains(q))
            .collect();
        let &[q] = next.as_slice() else {
            return None;
        };
        if degree(m, q.0, q.1) >= 3 {
            return Some(path);
        }
        path.push(q);
        cur = q;
    }
    None
}

/// Zhang-Suen thinning, one pair of subiterations.
fn zhang_suen(m: &mut BinaryMask) -> bool {
    let (w, h) = m.dims();
    let mut changed = false;
    for pass in 0..2 {
        let mut remove = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) && zs_deletable(m, x, y, pass) {
                    remove.push((x, y));
                }
            }
        }
        changed |= !remove.is_empty();
        for (x, y) in remove {
            m.set(x, y, false);
        }
    }
    changed
}

/// Border pixel with 2..=6 neighbours, one 0->1 transition around it and
/// the subiteration's directional test passed.
fn zs_deletable(m: &BinaryMask, x: usize, y: usize, pass: usize) -> bool {
    let p: Vec<bool> = RING
        .iter()
        .map(|&(dx, dy)| m.get_signed(x as i64 + dx, y as i64 + dy))
        .collect();
    let b = p.iter().filter(|&&v| v).count();
    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if !(2..=6).contains(&b) || a != 1 {
        return false;
    }
    let (n, e, s, wst) = (p[0], p[2], p[4], p[6]);
    if pass == 0 {
        !(n && e && s) && !(e && s && wst)
    } else {
        !(n && e && wst) && !(n && s && wst)
    }
}

/// Remove staircase corners: pixels with at most three neighbours, both a
/// horizontal and a vertical 4-neighbour, and 8-connectivity number 1.
/// Line ends never qualify, so thin diagonals keep their length.
fn prune_redundant(m: &mut BinaryMask) -> bool {
    let (w, h) = m.dims();
    let mut changed = false;
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) {
                continue;
            }
            let p: Vec<bool> = RING
                .iter()
                .map(|&(dx, dy)| m.get_signed(x as i64 + dx, y as i64 + dy))
                .collect();
            let thin = p.iter().filter(|&&v| v).count() <= 3;
            let corner = (p[0] || p[4]) && (p[2] || p[6]);
            if !thin || !corner || connectivity_number(&p) != 1 {
                continue;
            }
            m.set(x, y, false);
            changed = true;
        }
    }
    changed
}

/// Yokoi 8-connectivity number from the ring `N, NE, E, SE, S, SW, W, NW`.
fn connectivity_number(p: &[bool]) -> usize {
    let bg = |i: usize| !p[i % 8] as usize;
    [0, 2, 4, 6]
        .iter()
        .map(|&k| bg(k) - bg(k) * bg(k + 1) * bg(k + 2))
        .sum()
}

/// End, junction and turning nodes of a skeleton.
///
/// Ends have at most one neighbour. Adjacent pixels with three or more
/// neighbours form one junction, placed at the cluster pixel nearest its
/// centroid. Turning nodes sit where the angle between the chords to the
/// pixels `TURN_WINDOW` steps back and ahead exceeds `turn_angle_min`
/// degrees (one per run of such pixels, at the sharpest). A closed loop with
/// no other node gets a turning node at its topmost-leftmost pixel.
pub fn extract_nodes(skeleton: &BinaryMask, turn_angle_min: f64) -> Vec<GraphNode> {
    let mut tracer = Tracer::new(skeleton);
    tracer.add_base_nodes();
    let chains = tracer.trace();
    let mut nodes = tracer.nodes;
    let min_cos = turn_angle_min.to_radians().cos();
    for chain in &chains {
        let seq = chain_points(&nodes, chain);
        for i in turning_points(&seq, min_cos) {
            let (x, y) = seq[i];
            nodes.push(GraphNode {
                id: nodes.len(),
                x,
                y,
                kind: NodeKind::Turning,
            });
        }
    }
    nodes
}

/// Trace the skeleton paths between nodes. Every skeleton pixel ends up
/// in exactly one node or edge. Nodes must sit on skeleton pixels.
pub fn link_edges(skeleton: &BinaryMask, nodes: &[GraphNode]) -> Result<LineGraph> {
    let mut tracer = Tracer::new(skeleton);
    for n in nodes {
        tracer.add_node(n)?;
    }
    let chains = tracer.trace();
    let nodes = tracer.nodes;
    let mut edges = Vec::with_capacity(chains.len());
    for chain in &chains {
        let seq = chain_points(&nodes, chain);
        let pts = simplify(&seq, SIMPLIFY_TOLERANCE);
        let length = arc_length(&pts);
        if !(length > 0.0) {
            continue;
        }
        edges.push(GraphEdge {
            a: chain.a,
            b: chain.b,
            geometry: Polyline {
                id: format!("edge-{}", edges.len()),
                points: pts,
            },
            length,
        });
    }
    LineGraph::new(nodes, edges)
}

struct Chain {
    a: usize,
    b: usize,
    pixels: Vec<(usize, usize)>,
}

fn chain_points(nodes: &[GraphNode], c: &Chain) -> Vec<Point> {
    let mut seq = Vec::with_capacity(c.pixels.len() + 2);
    seq.push((nodes[c.a].x, nodes[c.a].y));
    seq.extend(c.pixels.iter().map(|&(x, y)| (x as f64, y as f64)));
    seq.push((nodes[c.b].x, nodes[c.b].y));
    seq
}

fn turning_points(seq: &[Point], min_cos: f64) -> Vec<usize> {
    let k = TURN_WINDOW;
    let mut out = Vec::new();
    let mut run: Option<(usize, f64)> = None;
    // Interior pixels only; the first and last entries are the nodes.
    for i in 1..seq.len().saturating_sub(1) {
        let cos = if i >= k && i + k < seq.len() {
            let v1 = (seq[i].0 - seq[i - k].0, seq[i].1 - seq[i - k].1);
            let v2 = (seq[i + k].0 - seq[i].0, seq[i + k].1 - seq[i].1);
            let n = v1.0.hypot(v1.1) * v2.0.hypot(v2.1);
            if n > 0.0 {
                Some((v1.0 * v2.0 + v1.1 * v2.1) / n)
            } else {
                None
            }
        } else {
            None
        };
        match cos {
            Some(c) if c < min_cos => {
                if run.is_none_or(|(_, best)| c < best) {
                    run = Some((i, c));
                }
            }
            _ => {
                if let Some((j, _)) = run.take() {
                    out.push(j);
                }
            }
        }
    }
    if let Some((j, _)) = run {
        out.push(j);
    }
    out
}

struct Tracer<'a> {
    skel: &'a BinaryMask,
    owner: Vec<Option<usize>>,
    visited: Vec<bool>,
    nodes: Vec<GraphNode>,
    /// Pixels of each node in raster order.
    members: Vec<Vec<(usize, usize)>>,
}

impl<'a> Tracer<'a> {
    fn new(skel: &'a BinaryMask) -> Self {
        let n = skel.width() * skel.height();
        Self {
            skel,
            owner: vec![None; n],
            visited: vec![false; n],
            nodes: Vec::new(),
            members: Vec::new(),
        }
    }

    fn idx(&self, x: usize, y: usize) -> usize {
        y * self.skel.width() + x
    }

    fn push_node(&mut self, x: usize, y: usize, kind: NodeKind, pixels: Vec<(usize, usize)>) -> usize {
        let id = self.nodes.len();
        for &(px, py) in &pixels {
            let i = self.idx(px, py);
            self.owner[i] = Some(id);
        }
        self.nodes.push(GraphNode {
            id,
            x: x as f64,
            y: y as f64,
            kind,
        });
        self.members.push(pixels);
        id
    }

    fn junction_cluster(&self, x: usize, y: usize) -> Vec<(usize, usize)> {
        let mut cluster = vec![(x, y)];
        let mut seen = vec![self.idx(x, y)];
        let mut i = 0;
        while i < cluster.len() {
            let (cx, cy) = cluster[i];
            for (nx, ny) in neighbours(self.skel, cx, cy) {
                let j = self.idx(nx, ny);
                if !seen.contains(&j) && degree(self.skel, nx, ny) >= 3 {
                    seen.push(j);
                    cluster.push((nx, ny));
                }
            }
            i += 1;
        }
        cluster.sort_by_key(|&(x, y)| (y, x));
        cluster
    }

    fn add_base_nodes(&mut self) {
        let (w, h) = self.skel.dims();
        for y in 0..h {
            for x in 0..w {
                if !self.skel.get(x, y) || self.owner[self.idx(x, y)].is_some() {
                    continue;
                }
                let d = degree(self.skel, x, y);
                if d <= 1 {
                    self.push_node(x, y, NodeKind::End, vec![(x, y)]);
                } else if d >= 3 {
                    let cluster = self.junction_cluster(x, y);
                    let n = cluster.len() as f64;
                    let cx = cluster.iter().map(|p| p.0 as f64).sum::<f64>() / n;
                    let cy = cluster.iter().map(|p| p.1 as f64).sum::<f64>() / n;
                    let &(rx, ry) = cluster
                        .iter()
                        .min_by(|p, q| {
                            let dp = (p.0 as f64 - cx).powi(2) + (p.1 as f64 - cy).powi(2);
                            let dq = (q.0 as f64 - cx).powi(2) + (q.1 as f64 - cy).powi(2);
                            dp.total_cmp(&dq)
                        })
                        .unwrap();
                    self.push_node(rx, ry, NodeKind::Junction, cluster);
                }
            }
        }
    }

    fn add_node(&mut self, n: &GraphNode) -> Result<()> {
        let bad = || Error::InvalidParam(format!("node {} is not on a skeleton pixel", n.id));
        if n.id != self.nodes.len() {
            return Err(Error::InvalidParam(format!("node ids must be 0..n, got {}", n.id)));
        }
        if n.x < 0.0 || n.y < 0.0 || n.x.fract() != 0.0 || n.y.fract() != 0.0 {
            return Err(bad());
        }
        let (x, y) = (n.x as usize, n.y as usize);
        if x >= self.skel.width() || y >= self.skel.height() || !self.skel.get(x, y) {
            return Err(bad());
        }
        if self.owner[self.idx(x, y)].is_some() {
            return Err(Error::InvalidParam(format!("node {} overlaps another node", n.id)));
        }
        let pixels = if n.kind == NodeKind::Junction && degree(self.skel, x, y) >= 3 {
            self.junction_cluster(x, y)
                .into_iter()
                .filter(|&(px, py)| self.owner[self.idx(px, py)].is_none())
                .collect()
        } else {
            vec![(x, y)]
        };
        self.push_node(x, y, n.kind, pixels);
        Ok(())
    }

    fn trace(&mut self) -> Vec<Chain> {
        let mut chains = Vec::new();
        let mut direct: Vec<(usize, usize)> = Vec::new();
        let mut s = 0;
        loop {
            while s < self.nodes.len() {
                for q in self.members[s].clone() {
                    for nb in neighbours(self.skel, q.0, q.1).collect::<Vec<_>>() {
                        let i = self.idx(nb.0, nb.1);
                        match self.owner[i] {
                            Some(o) if o != s => {
                                let key = (s.min(o), s.max(o));
                                if !direct.contains(&key) {
                                    direct.push(key);
                                    chains.push(Chain {
                                        a: key.0,
                                        b: key.1,
                                        pixels: Vec::new(),
                                    });
                                }
                            }
                            None if !self.visited[i] => chains.push(self.walk(s, nb)),
                            _ => {}
                        }
                    }
                }
                s += 1;
            }
            // Whatever is left belongs to closed loops without a node.
            let (w, h) = self.skel.dims();
            let start = (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .find(|&(x, y)| {
                    let i = y * w + x;
                    self.skel.get(x, y) && self.owner[i].is_none() && !self.visited[i]
                });
            match start {
                Some((x, y)) => {
                    self.push_node(x, y, NodeKind::Turning, vec![(x, y)]);
                }
                None => break,
            }
        }
        chains
    }

    fn walk(&mut self, s: usize, first: (usize, usize)) -> Chain {
        let mut path = vec![first];
        let i = self.idx(first.0, first.1);
        self.visited[i] = true;
        let mut cur = first;
        loop {
            let nbs: Vec<(usize, usize)> = neighbours(self.skel, cur.0, cur.1).collect();
            let end = nbs.iter().find_map(|&(nx, ny)| match self.owner[self.idx(nx, ny)] {
                Some(o) if o != s || path.len() >= 3 => Some(o),
                _ => None,
            });
            if let Some(b) = end {
                return Chain { a: s, b, pixels: path };
            }
            let next = nbs.into_iter().find(|&(nx, ny)| {
                let j = self.idx(nx, ny);
                self.owner[j].is_none() && !self.visited[j]
            });
            match next {
                Some(n) => {
                    let j = self.idx(n.0, n.1);
                    self.visited[j] = true;
                    path.push(n);
                    cur = n;
                }
                None => {
                    // Dead end on a malformed skeleton: close it with an end node.
                    path.pop();
                    let b = self.push_node(cur.0, cur.1, NodeKind::End, vec![cur]);
                    return Chain { a: s, b, pixels: path };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annot::buffer_rasterize;
    use crate::metrics::{apls, correctness_completeness};
    use proptest::prelude::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    fn path_mask(w: usize, h: usize, pts: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(w, h);
        for &(x, y) in pts {
            m.set(x, y, true);
        }
        m
    }

    fn kinds(nodes: &[GraphNode], k: NodeKind) -> Vec<&GraphNode> {
        nodes.iter().filter(|n| n.kind == k).collect()
    }

    #[test]
    fn empty_mask() {
        let m = BinaryMask::empty(10, 10);
        assert!(skeletonize(&m).is_all_false());
        let g = vectorize(&m, &VectorizeOptions::default()).unwrap();
        assert!(g.nodes.is_empty() && g.edges.is_empty());
    }

    #[test]
    fn band_thins_to_a_path_inside_it() {
        let band = BinaryMask::from_fn(13, 7, |x, y| (2..11).contains(&x) && (2..5).contains(&y));
        let s = skeletonize(&band);
        assert!(s.is_subset_of(&band));
        assert!(s.count() >= 5 && s.count() <= 9, "{}", s.count());
        let ys: Vec<usize> = (0..7).filter(|&y| (0..13).any(|x| s.get(x, y))).collect();
        assert_eq!(ys, vec![3]);
        assert_eq!(components(&s).len(), 1);
    }

    #[test]
    fn skeleton_is_idempotent_on_blobs() {
        let m = mask_from(&[
            "..........",
            ".######...",
            ".########.",
            ".########.",
            "...####...",
            "...####...",
            "..........",
        ]);
        let s = skeletonize(&m);
        assert_eq!(skeletonize(&s), s);
    }

    #[test]
    fn small_square_keeps_one_pixel() {
        let m = mask_from(&["....", ".##.", ".##.", "...."]);
        let s = skeletonize(&m);
        assert!((1..=2).contains(&s.count()));
        assert_eq!(components(&s).len(), 1);
    }

    #[test]
    fn straight_line_nodes_and_edge() {
        let pts: Vec<_> = (5..55).map(|x| (x, 10)).collect();
        let m = path_mask(60, 20, &pts);
        let nodes = extract_nodes(&m, 30.0);
        assert_eq!(nodes.len(), 2);
        assert_eq!(kinds(&nodes, NodeKind::End).len(), 2);
        let g = link_edges(&m, &nodes).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert!((g.edges[0].length - 49.0).abs() <= 0.01);
    }

    #[test]
    fn l_shape_has_a_corner_node() {
        let mut m = BinaryMask::empty(40, 40);
        for i in 0..20 {
            m.set(5 + i, 5, true);
            m.set(24, 5 + i, true);
        }
        let s = skeletonize(&m);
        let nodes = extract_nodes(&s, 30.0);
        let ends = kinds(&nodes, NodeKind::End);
        let turns = kinds(&nodes, NodeKind::Turning);
        assert_eq!(ends.len(), 2, "{nodes:?}");
        assert_eq!(turns.len(), 1, "{nodes:?}");
        assert!(kinds(&nodes, NodeKind::Junction).is_empty());
        assert!((turns[0].x - 24.0).abs() <= 2.0 && (turns[0].y - 5.0).abs() <= 2.0);
        let g = link_edges(&s, &nodes).unwrap();
        assert_eq!(g.edges.len(), 2);
        let t = turns[0].id;
        assert!(g.edges.iter().all(|e| e.a == t || e.b == t));
    }

    #[test]
    fn t_shape_has_one_junction() {
        let mut m = BinaryMask::empty(40, 40);
        for i in 0..21 {
            m.set(5 + i, 5, true);
        }
        for j in 6..25 {
            m.set(15, j, true);
        }
        let s = skeletonize(&m);
        let nodes = extract_nodes(&s, 30.0);
        assert_eq!(kinds(&nodes, NodeKind::End).len(), 3, "{nodes:?}");
        assert_eq!(kinds(&nodes, NodeKind::Junction).len(), 1, "{nodes:?}");
        let g = link_edges(&s, &nodes).unwrap();
        let deg = g.degrees();
        for n in &g.nodes {
            match n.kind {
                NodeKind::End => assert_eq!(deg[n.id], 1),
                NodeKind::Junction => assert!(deg[n.id] >= 3),
                NodeKind::Turning => {}
            }
        }
    }

    #[test]
    fn closed_loop_gets_a_synthetic_node() {
        let ring = BinaryMask::from_fn(30, 30, |x, y| {
            let d = ((x as f64 - 15.0).powi(2) + (y as f64 - 15.0).powi(2)).sqrt();
            (8.0..10.5).contains(&d)
        });
        let s = skeletonize(&ring);
        let g = vectorize(&ring, &VectorizeOptions::default()).unwrap();
        assert!(!g.edges.is_empty());
        let top = (0..30)
            .flat_map(|y| (0..30).map(move |x| (x, y)))
            .find(|&(x, y)| s.get(x, y))
            .unwrap();
        assert!(g.nodes.iter().any(|n| (n.x, n.y) == (top.0 as f64, top.1 as f64)));
        assert!(g.total_length() > 40.0);
    }

    #[test]
    fn every_pixel_is_covered_once() {
        let mut m = BinaryMask::empty(40, 40);
        for i in 0..21 {
            m.set(5 + i, 5, true);
        }
        for j in 6..25 {
            m.set(15, j, true);
        }
        let s = skeletonize(&m);
        let nodes = extract_nodes(&s, 30.0);
        let mut t = Tracer::new(&s);
        for n in &nodes {
            t.add_node(n).unwrap();
        }
        let chains = t.trace();
        let mut hits = vec![0; 40 * 40];
        for members in &t.members {
            for &(x, y) in members {
                hits[y * 40 + x] += 1;
            }
        }
        for c in &chains {
            for &(x, y) in &c.pixels {
                hits[y * 40 + x] += 1;
            }
        }
        for y in 0..40 {
            for x in 0..40 {
                assert_eq!(hits[y * 40 + x], s.get(x, y) as i32, "({x},{y})");
            }
        }
    }

    #[test]
    fn from_polylines_nodes_crossings() {
        let a = Polyline::new("a", vec![(0.0, 5.0), (10.0, 5.0)]).unwrap();
        let b = Polyline::new("b", vec![(5.0, 0.0), (5.0, 10.0)]).unwrap();
        let t = Polyline::new("t", vec![(2.0, 5.0), (2.0, 9.0)]).unwrap();
        let g = LineGraph::from_polylines(&[a, b, t]).unwrap();
        assert_eq!(g.edges.len(), 6);
        assert_eq!(g.degrees().iter().filter(|&&d| d >= 3).count(), 2);
        assert!((g.total_length() - 24.0).abs() < 1e-9);
    }

    #[test]
    fn from_polylines_shares_endpoints() {
        let a = Polyline::new("a", vec![(0.0, 0.0), (10.0, 0.0)]).unwrap();
        let b = Polyline::new("b", vec![(10.0, 0.0), (10.0, 10.0)]).unwrap();
        let g = LineGraph::from_polylines(&[a, b]).unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        assert_eq!(g.total_length(), 20.0);
    }

    fn random_polyline() -> impl Strategy<Value = Polyline> {
        (
            20.0..40.0f64,
            20.0..40.0f64,
            0.0..std::f64::consts::TAU,
            prop::collection::vec((30.0..60.0f64, 20.0..70.0f64, any::<bool>()), 1..4),
        )
            .prop_map(|(x, y, heading, segs)| {
                let mut pts = vec![(x, y)];
                let mut h = heading;
                for (i, (len, turn, left)) in segs.into_iter().enumerate() {
                    if i > 0 {
                        h += if left { turn } else { -turn }.to_radians();
                    }
                    let p = *pts.last().unwrap();
                    pts.push((p.0 + len * h.cos(), p.1 + len * h.sin()));
                }
                let (x0, y0, _, _) = Polyline::new("t", pts.clone()).unwrap().bounds();
                let pts = pts.iter().map(|p| (p.0 - x0 + 10.0, p.1 - y0 + 10.0)).collect();
                Polyline::new("t", pts).unwrap()
            })
    }

    fn canvas_for(l: &Polyline) -> (usize, usize) {
        let (_, _, x1, y1) = l.bounds();
        ((x1 + 12.0) as usize, (y1 + 12.0) as usize)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn round_trip_length(line in random_polyline()) {
            let mask = buffer_rasterize(std::slice::from_ref(&line), 3.0, canvas_for(&line)).unwrap();
            let g = vectorize(&mask, &VectorizeOptions::default()).unwrap();
            let rel = (g.total_length() - line.length()).abs() / line.length();
            prop_assert!(rel <= 0.05, "length {} vs {}", g.total_length(), line.length());
        }

        #[test]
        fn skeleton_properties(line in random_polyline(), r in 1.0..4.0f64) {
            let mask = buffer_rasterize(std::slice::from_ref(&line), r, canvas_for(&line)).unwrap();
            let s = skeletonize(&mask);
            prop_assert!(s.is_subset_of(&mask));
            prop_assert_eq!(skeletonize(&s), s.clone());
            prop_assert_eq!(components(&s).len(), components(&mask).len());
            let g = link_edges(&s, &extract_nodes(&s, 30.0)).unwrap();
            prop_assert!(g.total_length() <= s.count() as f64 * std::f64::consts::SQRT_2);
            let deg = g.degrees();
            for n in &g.nodes {
                if n.kind == NodeKind::End {
                    prop_assert_eq!(deg[n.id], 1);
                }
                if n.kind == NodeKind::Junction {
                    prop_assert!(deg[n.id] >= 3);
                }
            }
        }

        #[test]
        fn round_trip_scores(line in random_polyline()) {
            let mask = buffer_rasterize(std::slice::from_ref(&line), 3.0, canvas_for(&line)).unwrap();
            let g = vectorize(&mask, &VectorizeOptions::default()).unwrap();
            let gt = LineGraph::from_polylines(std::slice::from_ref(&line)).unwrap();
            let s = correctness_completeness(&g, &gt, 3.0).unwrap();
            prop_assert!(s.correctness >= 0.98 && s.completeness >= 0.98, "{s:?}");
            prop_assert!(apls(&g, &gt, 50.0, 3.0).unwrap() >= 0.95);
        }
    }
}
