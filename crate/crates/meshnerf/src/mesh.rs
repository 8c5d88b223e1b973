//! Watertight triangle meshes: OBJ loading, unit-cube normalization,
//! ray-intersection parity occupancy, and silhouette rendering.

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mask::MaskRaster;
use crate::rng::Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::path::Path;

/// Determinant cutoff of the ray-triangle test.
const RAY_TRI_DET_EPS: f64 = 1e-9;
/// Minimum ray parameter for a hit to count.
const RAY_T_EPS: f64 = 1e-9;
/// Hits closer than this along the ray collapse into one crossing
/// (shared-edge and shared-vertex grazes).
const T_CLUSTER_EPS: f64 = 1e-9;
/// Points closer to the surface than this are ambiguous for parity queries.
pub const DEFAULT_SURFACE_TOLERANCE: f64 = 1e-6;

/// Indexed triangle mesh, normalized so the bounding box is centered at the
/// origin with its largest axis extent equal to 1.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub watertight: bool,
    bvh: Bvh,
}

/// Point-occupancy query: parity is voted over `directions`.
#[derive(Debug, Clone)]
pub struct OccupancyQuery {
    pub point: Vec3,
    pub directions: Vec<Vec3>,
}

impl OccupancyQuery {
    pub fn new(point: Vec3, directions: Vec<Vec3>) -> Result<OccupancyQuery> {
        if directions.is_empty() {
            return Err(Error::InvalidInput("occupancy query needs at least one direction".into()));
        }
        for d in &directions {
            if (d.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput("occupancy directions must be unit length".into()));
            }
        }
        Ok(OccupancyQuery { point, directions })
    }
}

/// Three seeded pseudo-random unit directions for parity voting. Fixed
/// irrational-looking directions avoid axis-aligned grazes on boxy meshes.
pub fn parity_directions(seed: u64) -> Vec<Vec3> {
    let mut rng = Rng::stream(seed, 0x0ccu64);
    (0..3).map(|_| rng.unit_vector()).collect()
}

/// Intersection count along a ray, with the watertight status of the mesh
/// the count was taken on (parity of a non-watertight mesh is unreliable).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HitCount {
    pub count: usize,
    pub watertight: bool,
}

impl TriangleMesh {
    /// Build from raw vertices/triangles: validates indices, normalizes to
    /// the unit cube, and computes the watertight flag.
    pub fn from_parts(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<TriangleMesh> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::InvalidInput("mesh has no geometry".into()));
        }
        for (i, t) in triangles.iter().enumerate() {
            for &v in t {
                if v >= vertices.len() {
                    return Err(Error::InvalidInput(format!(
                        "triangle {i} references vertex {v} of {}",
                        vertices.len()
                    )));
                }
            }
        }
        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            watertight: false,
            bvh: Bvh::default(),
        };
        mesh.normalize()?;
        mesh.watertight = mesh.check_watertight();
        mesh.bvh = Bvh::build(&mesh.vertices, &mesh.triangles);
        Ok(mesh)
    }

    /// Center the bounding box at the origin and scale the largest axis
    /// extent to exactly 1.
    fn normalize(&mut self) -> Result<()> {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = lo.min_components(*v);
            hi = hi.max_components(*v);
        }
        let extent = hi - lo;
        let max_extent = extent.x.max(extent.y).max(extent.z);
        if max_extent <= 0.0 {
            return Err(Error::InvalidInput("mesh is degenerate (zero extent)".into()));
        }
        let center = (lo + hi) * 0.5;
        let scale = 1.0 / max_extent;
        for v in &mut self.vertices {
            *v = (*v - center) * scale;
        }
        Ok(())
    }

    /// A mesh is watertight when every directed edge appears exactly once,
    /// i.e. each undirected edge is shared by two opposite-winding faces.
    fn check_watertight(&self) -> bool {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return false;
            }
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        directed
            .iter()
            .all(|(&(u, v), &c)| c == 1 && directed.get(&(v, u)) == Some(&1))
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = lo.min_components(*v);
            hi = hi.max_components(*v);
        }
        (lo, hi)
    }

    fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// All ray parameters t > eps where the ray crosses the surface,
    /// deduplicated by t-clustering.
    fn crossing_ts(&self, origin: Vec3, direction: Vec3) -> Vec<f64> {
        let mut ts = Vec::new();
        self.bvh.for_ray_candidates(origin, direction, |tri| {
            let [a, b, c] = self.triangle(tri);
            if let Some(t) = ray_triangle(origin, direction, a, b, c) {
                if t > RAY_T_EPS {
                    ts.push(t);
                }
            }
        });
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut clustered = Vec::with_capacity(ts.len());
        for t in ts {
            match clustered.last() {
                Some(&last) if t - last <= T_CLUSTER_EPS => {}
                _ => clustered.push(t),
            }
        }
        clustered
    }

    /// Count of distinct surface crossings along a ray.
    pub fn ray_intersections(&self, origin: Vec3, direction: Vec3) -> HitCount {
        HitCount {
            count: self.crossing_ts(origin, direction).len(),
            watertight: self.watertight,
        }
    }

    /// Nearest hit along the ray: `(t, triangle index)`.
    pub fn first_hit(&self, origin: Vec3, direction: Vec3) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        self.bvh.for_ray_candidates(origin, direction, |tri| {
            let [a, b, c] = self.triangle(tri);
            if let Some(t) = ray_triangle(origin, direction, a, b, c) {
                if t > RAY_T_EPS && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, tri));
                }
            }
        });
        best
    }

    /// Unit normal of a triangle (right-hand winding).
    pub fn triangle_normal(&self, index: usize) -> Vec3 {
        let [a, b, c] = self.triangle(index);
        (b - a).cross(c - a).normalized()
    }

    /// True when the ray hits any triangle at t > eps.
    pub fn ray_hits(&self, origin: Vec3, direction: Vec3) -> bool {
        let mut hit = false;
        self.bvh.for_ray_candidates_early(origin, direction, &mut |tri| {
            let [a, b, c] = self.triangle(tri);
            if let Some(t) = ray_triangle(origin, direction, a, b, c) {
                if t > RAY_T_EPS {
                    hit = true;
                    return true;
                }
            }
            false
        });
        hit
    }

    /// Exact distance from a point to the mesh surface.
    pub fn surface_distance(&self, p: Vec3) -> f64 {
        self.bvh
            .nearest_triangle_dist2(p, |tri| {
                let [a, b, c] = self.triangle(tri);
                point_triangle_dist2(p, a, b, c)
            })
            .sqrt()
    }

    /// Parity occupancy with majority voting over the query directions.
    /// With a single direction this is the plain even/odd rule.
    pub fn occupancy(&self, query: &OccupancyQuery) -> Result<u8> {
        self.occupancy_with_tolerance(query, DEFAULT_SURFACE_TOLERANCE)
    }

    pub fn occupancy_with_tolerance(&self, query: &OccupancyQuery, tolerance: f64) -> Result<u8> {
        if !self.watertight {
            return Err(Error::NotWatertight(
                "occupancy requires a watertight mesh".into(),
            ));
        }
        if query.directions.is_empty() {
            return Err(Error::InvalidInput("occupancy query needs at least one direction".into()));
        }
        if self.surface_distance(query.point) < tolerance {
            return Err(Error::SurfaceAmbiguous { tolerance });
        }
        let odd_votes = query
            .directions
            .iter()
            .filter(|d| self.crossing_ts(query.point, **d).len() % 2 == 1)
            .count();
        Ok(u8::from(2 * odd_votes > query.directions.len()))
    }

    /// Binary silhouette: a pixel is foreground when its center ray hits the
    /// mesh at least once. An empty mask means the mesh missed the frustum.
    pub fn render_silhouette(&self, pose: &CameraPose, resolution: usize) -> Result<MaskRaster> {
        if resolution < 8 {
            return Err(Error::InvalidInput(format!(
                "silhouette resolution {resolution} is below the minimum of 8"
            )));
        }
        let mut pose = pose.clone();
        pose.width = resolution;
        pose.height = resolution;
        pose.principal = (resolution as f64 / 2.0, resolution as f64 / 2.0);
        let rows: Vec<Vec<u8>> = (0..resolution)
            .into_par_iter()
            .map(|y| {
                (0..resolution)
                    .map(|x| {
                        let ray = pose.pixel_center_ray(x, y, (0.0, 1.0));
                        u8::from(self.ray_hits(ray.origin, ray.direction))
                    })
                    .collect()
            })
            .collect();
        let mut mask = MaskRaster::new(resolution, resolution);
        for (y, row) in rows.into_iter().enumerate() {
            mask.pixels[y * resolution..(y + 1) * resolution].copy_from_slice(&row);
        }
        Ok(mask)
    }

    /// Write the normalized mesh as a minimal OBJ.
    pub fn save_obj(&self, path: &Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::with_capacity(self.vertices.len() * 32);
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Load an OBJ mesh (`v x y z` / `f i j k` subset, polygons fan-triangulated)
/// and normalize it into the unit cube.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    for (line_idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = line_idx + 1;
        let fail = |message: String| Error::Format {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .map(|p| p.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| fail(format!("bad vertex coordinate: {e}")))?;
                if coords.len() < 3 {
                    return Err(fail(format!("vertex has {} coordinates, need 3", coords.len())));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|p| {
                        // tolerate v/vt/vn face tokens; only the vertex id is used
                        let v = p.split('/').next().unwrap_or(p);
                        v.parse::<i64>()
                            .map_err(|e| fail(format!("bad face index {p:?}: {e}")))
                            .and_then(|i| {
                                if i >= 1 && (i as usize) <= vertices.len() {
                                    Ok(i as usize - 1)
                                } else {
                                    Err(fail(format!("face index {i} out of range")))
                                }
                            })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(fail(format!("face has {} vertices, need at least 3", idx.len())));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            // materials, normals, texcoords, groups: ignored
            _ => {}
        }
    }
    if vertices.is_empty() || triangles.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no triangles found",
            path.display()
        )));
    }
    TriangleMesh::from_parts(vertices, triangles)
}

/// Möller-Trumbore ray/triangle intersection; returns the ray parameter.
fn ray_triangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < RAY_TRI_DET_EPS {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = tvec.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(q) * inv)
}

/// Squared distance from a point to a triangle (closest-point walk over the
/// vertex/edge/face regions).
fn point_triangle_dist2(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.dot(ap);
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.dot(bp);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        let q = a + ab * v;
        return (p - q).dot(p - q);
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.dot(cp);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        let q = a + ac * w;
        return (p - q).dot(p - q);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        let q = b + (c - b) * w;
        return (p - q).dot(p - q);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q = a + ab * v + ac * w;
    (p - q).dot(p - q)
}

/// Flat BVH over triangle indices (longest-axis median splits).
#[derive(Debug, Clone, Default)]
struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

#[derive(Debug, Clone)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    /// Left child index; right child is `left + 1`-less encoding is avoided,
    /// children stored explicitly. count > 0 marks a leaf.
    left: u32,
    right: u32,
    start: u32,
    count: u32,
}

const BVH_LEAF_SIZE: usize = 4;

impl Bvh {
    fn build(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Bvh {
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| (vertices[t[0]] + vertices[t[1]] + vertices[t[2]]) / 3.0)
            .collect();
        let tri_bounds: Vec<(Vec3, Vec3)> = triangles
            .iter()
            .map(|t| {
                let a = vertices[t[0]];
                let b = vertices[t[1]];
                let c = vertices[t[2]];
                (
                    a.min_components(b).min_components(c),
                    a.max_components(b).max_components(c),
                )
            })
            .collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = Vec::with_capacity(triangles.len() / BVH_LEAF_SIZE * 2 + 1);
        Self::build_node(&mut nodes, &mut order, 0, triangles.len(), &centroids, &tri_bounds);
        Bvh { nodes, order }
    }

    fn build_node(
        nodes: &mut Vec<BvhNode>,
        order: &mut [u32],
        start: usize,
        end: usize,
        centroids: &[Vec3],
        tri_bounds: &[(Vec3, Vec3)],
    ) -> u32 {
        let mut lo = Vec3::new(f64::MAX, f64::MAX, f64::MAX);
        let mut hi = Vec3::new(f64::MIN, f64::MIN, f64::MIN);
        for &t in &order[start..end] {
            lo = lo.min_components(tri_bounds[t as usize].0);
            hi = hi.max_components(tri_bounds[t as usize].1);
        }
        let id = nodes.len() as u32;
        nodes.push(BvhNode {
            lo,
            hi,
            left: 0,
            right: 0,
            start: start as u32,
            count: 0,
        });
        if end - start <= BVH_LEAF_SIZE {
            nodes[id as usize].count = (end - start) as u32;
            return id;
        }
        let extent = hi - lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize]
                .component(axis)
                .partial_cmp(&centroids[b as usize].component(axis))
                .unwrap()
                .then(a.cmp(&b))
        });
        let left = Self::build_node(nodes, order, start, mid, centroids, tri_bounds);
        let right = Self::build_node(nodes, order, mid, end, centroids, tri_bounds);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
        id
    }

    fn ray_hits_box(origin: Vec3, inv_dir: Vec3, lo: Vec3, hi: Vec3) -> bool {
        let mut t_min = RAY_T_EPS;
        let mut t_max = f64::INFINITY;
        for axis in 0..3 {
            let o = origin.component(axis);
            let inv = inv_dir.component(axis);
            let mut t0 = (lo.component(axis) - o) * inv;
            let mut t1 = (hi.component(axis) - o) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            // NaN from 0 * inf: treat as no constraint on this axis
            if t0.is_nan() || t1.is_nan() {
                if o < lo.component(axis) || o > hi.component(axis) {
                    return false;
                }
                continue;
            }
            t_min = t_min.max(t0);
            t_max = t_max.min(t1);
            if t_min > t_max {
                return false;
            }
        }
        true
    }

    /// Visit every triangle whose leaf box the forward ray touches.
    fn for_ray_candidates(&self, origin: Vec3, dir: Vec3, mut visit: impl FnMut(usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if !Self::ray_hits_box(origin, inv, node.lo, node.hi) {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    visit(t as usize);
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
    }

    /// Like `for_ray_candidates` but stops as soon as the visitor returns true.
    fn for_ray_candidates_early(&self, origin: Vec3, dir: Vec3, visit: &mut impl FnMut(usize) -> bool) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if !Self::ray_hits_box(origin, inv, node.lo, node.hi) {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if visit(t as usize) {
                        return;
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
    }

    fn box_dist2(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
        let mut d2 = 0.0;
        for axis in 0..3 {
            let v = p.component(axis);
            let d = (lo.component(axis) - v).max(0.0).max(v - hi.component(axis));
            d2 += d * d;
        }
        d2
    }

    /// Smallest squared distance over all triangles, pruning by node boxes.
    fn nearest_triangle_dist2(&self, p: Vec3, tri_dist2: impl Fn(usize) -> f64) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if Self::box_dist2(p, node.lo, node.hi) >= best {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    best = best.min(tri_dist2(t as usize));
                }
            } else {
                // visit the nearer child last so it is popped first
                let dl = Self::box_dist2(p, self.nodes[node.left as usize].lo, self.nodes[node.left as usize].hi);
                let dr = Self::box_dist2(p, self.nodes[node.right as usize].lo, self.nodes[node.right as usize].hi);
                if dl < dr {
                    stack.push(node.right);
                    stack.push(node.left);
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        best
    }
}
