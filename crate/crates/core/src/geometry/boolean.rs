//! Boolean operations on polygon sets.
//!
//! Edges of both operands are split at every mutual intersection, each
//! resulting sub-edge is classified against the other operand, and the
//! selected directed edges are stitched back into rings by always taking the
//! left-most turn. Coincident edges are resolved by comparing directions.

use std::collections::HashMap;

use super::{
    ring_area, ring_contains, segment_distance, segments_cross_properly, Point2, Polygon,
    PolygonSet, AREA_EPS, EPS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoolOp {
    Union,
    Intersect,
    Subtract,
}

struct Seg {
    p: Point2,
    q: Point2,
    set: usize,
    splits: Vec<(f64, Point2)>,
}

/// Snaps points closer than `EPS` onto a single vertex id.
struct VertexTable {
    pts: Vec<Point2>,
    grid: HashMap<(i64, i64), Vec<usize>>,
}

const CELL: f64 = 1e-6;

impl VertexTable {
    fn new() -> Self {
        VertexTable { pts: Vec::new(), grid: HashMap::new() }
    }

    fn key(p: Point2) -> (i64, i64) {
        ((p.x / CELL).floor() as i64, (p.y / CELL).floor() as i64)
    }

    fn insert(&mut self, p: Point2) -> usize {
        let (kx, ky) = Self::key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.grid.get(&(kx + dx, ky + dy)) {
                    for &id in ids {
                        if (self.pts[id] - p).norm() <= EPS {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.pts.len();
        self.pts.push(p);
        self.grid.entry((kx, ky)).or_default().push(id);
        id
    }
}

fn param_on(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    (p - a).dot(ab) / ab.norm2()
}

fn boxes_overlap(a: &Seg, b: &Seg) -> bool {
    let pad = 2.0 * EPS;
    a.p.x.min(a.q.x) <= b.p.x.max(b.q.x) + pad
        && b.p.x.min(b.q.x) <= a.p.x.max(a.q.x) + pad
        && a.p.y.min(a.q.y) <= b.p.y.max(b.q.y) + pad
        && b.p.y.min(b.q.y) <= a.p.y.max(a.q.y) + pad
}

/// Records where `pt` touches the interior of segment `s`, if it does.
fn touch_split(s: &Seg, pt: Point2) -> Option<(f64, Point2)> {
    if (pt - s.p).norm() <= EPS || (pt - s.q).norm() <= EPS {
        return None;
    }
    if segment_distance(pt, s.p, s.q) <= EPS {
        let t = param_on(pt, s.p, s.q);
        if t > 0.0 && t < 1.0 {
            return Some((t, pt));
        }
    }
    None
}

fn split_all(segs: &mut [Seg]) {
    let n = segs.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if !boxes_overlap(&segs[i], &segs[j]) {
                continue;
            }
            let (pi, qi, pj, qj) = (segs[i].p, segs[i].q, segs[j].p, segs[j].q);
            let mut touched = false;
            for e in [pj, qj] {
                if let Some(s) = touch_split(&segs[i], e) {
                    segs[i].splits.push(s);
                    touched = true;
                }
            }
            for e in [pi, qi] {
                if let Some(s) = touch_split(&segs[j], e) {
                    segs[j].splits.push(s);
                    touched = true;
                }
            }
            let shares_endpoint = [pj, qj]
                .iter()
                .any(|&e| (e - pi).norm() <= EPS || (e - qi).norm() <= EPS);
            if touched || shares_endpoint {
                continue;
            }
            if segments_cross_properly(pi, qi, pj, qj) {
                let di = qi - pi;
                let dj = qj - pj;
                let t = (pj - pi).cross(dj) / di.cross(dj);
                let x = pi + di * t;
                let u = param_on(x, pj, qj);
                segs[i].splits.push((t.clamp(0.0, 1.0), x));
                segs[j].splits.push((u.clamp(0.0, 1.0), x));
            }
        }
    }
}

/// Computes `a op b`. Degenerate (zero-area) pieces are dropped.
pub fn polygon_bool(a: &PolygonSet, b: &PolygonSet, op: BoolOp) -> PolygonSet {
    if a.is_empty() || b.is_empty() {
        return match op {
            BoolOp::Union => {
                if a.is_empty() {
                    b.clone()
                } else {
                    a.clone()
                }
            }
            BoolOp::Intersect => PolygonSet::empty(),
            BoolOp::Subtract => a.clone(),
        };
    }
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    let disjoint = ahi.x < blo.x - EPS || bhi.x < alo.x - EPS || ahi.y < blo.y - EPS || bhi.y < alo.y - EPS;
    if disjoint {
        return match op {
            BoolOp::Union => {
                let mut v = a.0.clone();
                v.extend(b.0.iter().cloned());
                PolygonSet(v)
            }
            BoolOp::Intersect => PolygonSet::empty(),
            BoolOp::Subtract => a.clone(),
        };
    }

    let mut segs = Vec::new();
    for (set, ps) in [a, b].into_iter().enumerate() {
        for ring in ps.rings() {
            let n = ring.len();
            for k in 0..n {
                let (p, q) = (ring[k], ring[(k + 1) % n]);
                if (q - p).norm() > EPS {
                    segs.push(Seg { p, q, set, splits: Vec::new() });
                }
            }
        }
    }
    split_all(&mut segs);

    let mut verts = VertexTable::new();
    // net directed multiplicity per set for each undirected sub-edge
    let mut edges: HashMap<(usize, usize), [i32; 2]> = HashMap::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    for s in &mut segs {
        s.splits.push((0.0, s.p));
        s.splits.push((1.0, s.q));
        s.splits.sort_by(|x, y| x.0.total_cmp(&y.0));
        let ids: Vec<usize> = s.splits.iter().map(|&(_, pt)| verts.insert(pt)).collect();
        for w in ids.windows(2) {
            let (u, v) = (w[0], w[1]);
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            let dir = if u < v { 1 } else { -1 };
            let e = edges.entry(key).or_insert_with(|| {
                order.push(key);
                [0, 0]
            });
            e[s.set] += dir;
        }
    }

    let pts = &verts.pts;
    let mut out_edges: Vec<(usize, usize)> = Vec::new();
    for key in &order {
        let [na, nb] = edges[key];
        let na = na.signum();
        let nb = nb.signum();
        let directed = |sign: i32| if sign > 0 { (key.0, key.1) } else { (key.1, key.0) };
        let mid = pts[key.0].lerp(pts[key.1], 0.5);
        match (na != 0, nb != 0) {
            (false, false) => {}
            (true, true) => {
                let same = na == nb;
                let keep = match op {
                    BoolOp::Union | BoolOp::Intersect => same,
                    BoolOp::Subtract => !same,
                };
                if keep {
                    out_edges.push(directed(na));
                }
            }
            (true, false) => {
                let inside = b.contains(mid);
                let keep = match op {
                    BoolOp::Union | BoolOp::Subtract => !inside,
                    BoolOp::Intersect => inside,
                };
                if keep {
                    out_edges.push(directed(na));
                }
            }
            (false, true) => {
                let inside = a.contains(mid);
                match op {
                    BoolOp::Union => {
                        if !inside {
                            out_edges.push(directed(nb));
                        }
                    }
                    BoolOp::Intersect => {
                        if inside {
                            out_edges.push(directed(nb));
                        }
                    }
                    BoolOp::Subtract => {
                        if inside {
                            out_edges.push(directed(-nb));
                        }
                    }
                }
            }
        }
    }

    let rings = stitch(pts, &out_edges);
    assemble(rings)
}

/// Links directed edges into closed rings, taking the left-most turn at
/// every vertex so that faces touching at a point come out separately.
fn stitch(pts: &[Point2], edges: &[(usize, usize)]) -> Vec<Vec<Point2>> {
    let mut outgoing: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &(u, _)) in edges.iter().enumerate() {
        outgoing.entry(u).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut rings = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut ids = Vec::new();
        let mut cur = start;
        let mut guard = 0;
        loop {
            used[cur] = true;
            let (u, v) = edges[cur];
            ids.push(u);
            let d_in = pts[v] - pts[u];
            let next = outgoing.get(&v).and_then(|cands| {
                cands
                    .iter()
                    .copied()
                    .filter(|&c| !used[c] || c == start)
                    .max_by(|&x, &y| {
                        let tx = turn(d_in, pts[edges[x].1] - pts[v]);
                        let ty = turn(d_in, pts[edges[y].1] - pts[v]);
                        tx.total_cmp(&ty)
                    })
            });
            match next {
                Some(n) if n == start => break,
                Some(n) => cur = n,
                None => {
                    ids.clear();
                    break;
                }
            }
            guard += 1;
            if guard > edges.len() + 1 {
                ids.clear();
                break;
            }
        }
        for loop_ids in split_repeats(&ids) {
            let ring: Vec<Point2> = loop_ids.iter().map(|&i| pts[i]).collect();
            let ring = clean_ring(ring);
            if ring.len() >= 3 && ring_area(&ring).abs() > AREA_EPS {
                rings.push(ring);
            }
        }
    }
    rings
}

fn turn(d_in: Point2, d_out: Point2) -> f64 {
    d_in.cross(d_out).atan2(d_in.dot(d_out))
}

/// Splits a closed vertex walk into simple loops at repeated vertices.
fn split_repeats(ids: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for &id in ids {
        if let Some(pos) = stack.iter().position(|&s| s == id) {
            let lp: Vec<usize> = stack.drain(pos..).collect();
            if lp.len() >= 3 {
                out.push(lp);
            }
        }
        stack.push(id);
    }
    if stack.len() >= 3 {
        out.push(stack);
    }
    out
}

/// Drops repeated, collinear and spike vertices.
fn clean_ring(mut ring: Vec<Point2>) -> Vec<Point2> {
    let mut changed = true;
    while changed && ring.len() >= 3 {
        changed = false;
        let n = ring.len();
        for i in 0..n {
            let prev = ring[(i + n - 1) % n];
            let cur = ring[i];
            let next = ring[(i + 1) % n];
            let a = cur - prev;
            let b = next - cur;
            let degenerate = a.norm() <= EPS
                || b.norm() <= EPS
                || a.cross(b).abs() <= EPS * a.norm().max(b.norm());
            if degenerate {
                ring.remove(i);
                changed = true;
                break;
            }
        }
    }
    ring
}

fn assemble(rings: Vec<Vec<Point2>>) -> PolygonSet {
    let mut outers: Vec<(Vec<Point2>, f64, Vec<Vec<Point2>>)> = Vec::new();
    let mut holes = Vec::new();
    for r in rings {
        let a = ring_area(&r);
        if a > 0.0 {
            outers.push((r, a, Vec::new()));
        } else {
            holes.push(r);
        }
    }
    for h in holes {
        // a point just on the material side of the hole's first edge
        let p = h[0];
        let q = h[1];
        let d = q - p;
        let len = d.norm();
        let left = Point2::new(-d.y, d.x) * (1.0 / len);
        let probe = p.lerp(q, 0.5) + left * (1e-7_f64).min(0.01 * len);
        let owner = outers
            .iter_mut()
            .filter(|(o, _, _)| ring_contains(o, probe))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((_, _, hs)) = owner {
            hs.push(h);
        }
    }
    let mut polys: Vec<Polygon> = outers
        .into_iter()
        .map(|(o, _, hs)| Polygon::from_rings_unchecked(o, hs))
        .filter(|p| p.area() > AREA_EPS)
        .collect();
    polys.sort_by(|x, y| {
        let cx = x.outer()[0];
        let cy = y.outer()[0];
        cx.x.total_cmp(&cy.x).then(cx.y.total_cmp(&cy.y))
    });
    PolygonSet(polys)
}
