//! Synthetic two-pole machine cross-section: iron bar rotor, air gap with
//! the torque ring, a sectored coil annulus and surrounding air.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use spade::{AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};

use super::{edge_key, EdgeMarker, MarkedEdge, Mesh, Point, Region};
use crate::error::MeshError;

/// Dimensions (meters) and mesh resolution of the reference machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryParams {
    pub rotor_radius: f64,
    /// Inner radius r1 of the torque integration ring.
    pub gap_inner_radius: f64,
    /// Outer radius r2 of the torque integration ring.
    pub gap_outer_radius: f64,
    pub stator_inner_radius: f64,
    pub coil_outer_radius: f64,
    /// Radius of the outer boundary where the potential vanishes.
    pub outer_radius: f64,
    pub coil_count: usize,
    /// Angular extent of one coil sector in degrees.
    pub coil_span_deg: f64,
    pub bar_half_width: f64,
    /// Length of the straight bar sides. When the bar ends reach past the
    /// rotor rim, the bar is clipped by the rim and its round ends coincide
    /// with the rim.
    pub bar_straight_length: f64,
    pub bar_angle_deg: f64,
    /// Target edge length inside the rotor and the air gap.
    pub mesh_size: f64,
    /// Target edge length at the outer boundary.
    pub outer_mesh_size: f64,
    /// Minimum angle requested from Delaunay refinement, degrees.
    pub min_angle_deg: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            rotor_radius: 0.04,
            gap_inner_radius: 0.0445,
            gap_outer_radius: 0.0505,
            stator_inner_radius: 0.055,
            coil_outer_radius: 0.075,
            outer_radius: 0.1,
            coil_count: 12,
            coil_span_deg: 24.0,
            bar_half_width: 0.012,
            bar_straight_length: 0.1,
            bar_angle_deg: 0.0,
            mesh_size: 2.2e-3,
            outer_mesh_size: 7e-3,
            min_angle_deg: 25.0,
        }
    }
}

enum BarShape {
    /// Stadium strictly inside the rotor.
    Stadium,
    /// Slab clipped by the rim; `x_end` is where the straight sides meet the rim.
    Clipped { x_end: f64 },
}

impl GeometryParams {
    pub fn validate(&self) -> Result<(), MeshError> {
        let err = |m: String| Err(MeshError::Geometry(m));
        let radii = [
            ("rotor_radius", self.rotor_radius),
            ("gap_inner_radius", self.gap_inner_radius),
            ("gap_outer_radius", self.gap_outer_radius),
            ("stator_inner_radius", self.stator_inner_radius),
            ("coil_outer_radius", self.coil_outer_radius),
            ("outer_radius", self.outer_radius),
        ];
        for (name, r) in radii {
            if !(r > 0.0 && r.is_finite()) {
                return err(format!("{name} must be positive, got {r}"));
            }
        }
        if self.gap_inner_radius >= self.gap_outer_radius {
            return err(format!(
                "gap ring needs r1 < r2, got r1 = {} and r2 = {}",
                self.gap_inner_radius, self.gap_outer_radius
            ));
        }
        if self.rotor_radius >= self.stator_inner_radius {
            return err(format!(
                "rotor radius {} must be below the stator inner radius {}",
                self.rotor_radius, self.stator_inner_radius
            ));
        }
        if self.rotor_radius >= self.gap_inner_radius || self.gap_outer_radius >= self.stator_inner_radius {
            return err("the gap ring must lie strictly inside the air gap".into());
        }
        if self.stator_inner_radius >= self.coil_outer_radius || self.coil_outer_radius >= self.outer_radius {
            return err("need stator_inner_radius < coil_outer_radius < outer_radius".into());
        }
        if self.coil_count < 2 || self.coil_count % 2 != 0 {
            return err(format!("coil_count must be even and at least 2, got {}", self.coil_count));
        }
        let pitch = 360.0 / self.coil_count as f64;
        if !(self.coil_span_deg > 0.0 && self.coil_span_deg < pitch) {
            return err(format!("coil_span_deg must lie in (0, {pitch}), got {}", self.coil_span_deg));
        }
        if !(self.mesh_size > 0.0 && self.outer_mesh_size >= self.mesh_size) {
            return err("need 0 < mesh_size <= outer_mesh_size".into());
        }
        if !(self.min_angle_deg >= 0.0 && self.min_angle_deg <= 30.0) {
            return err("min_angle_deg must lie in [0, 30]".into());
        }
        self.bar_shape().map(|_| ())
    }

    fn bar_shape(&self) -> Result<BarShape, MeshError> {
        let (w, l, r, h) = (self.bar_half_width, self.bar_straight_length, self.rotor_radius, self.mesh_size);
        if !(w > 0.0 && l >= 0.0) {
            return Err(MeshError::Geometry("bar half-width must be positive and length non-negative".into()));
        }
        if w >= r - h {
            return Err(MeshError::Geometry("bar is wider than the rotor".into()));
        }
        if 0.5 * l + w <= r - h {
            Ok(BarShape::Stadium)
        } else if 0.25 * l * l >= r * r - w * w {
            Ok(BarShape::Clipped { x_end: (r * r - w * w).sqrt() })
        } else {
            Err(MeshError::Geometry(
                "bar ends must either stay inside the rotor or be cut entirely by the rim".into(),
            ))
        }
    }

    fn size_at(&self, radius: f64) -> f64 {
        if radius <= self.stator_inner_radius {
            self.mesh_size
        } else {
            let s = ((radius - self.stator_inner_radius) / (self.outer_radius - self.stator_inner_radius)).clamp(0.0, 1.0);
            self.mesh_size + s * (self.outer_mesh_size - self.mesh_size)
        }
    }
}

/// Point set plus constraint segments fed to the triangulator.
#[derive(Default)]
struct Plc {
    points: Vec<Point>,
    segments: Vec<[usize; 2]>,
}

impl Plc {
    fn add(&mut self, p: Point) -> usize {
        self.points.push(p);
        self.points.len() - 1
    }

    /// Adds points strictly between `a` and `b` and the segments joining them.
    fn segment(&mut self, a: usize, b: usize, h: f64) -> Vec<usize> {
        let (pa, pb) = (self.points[a], self.points[b]);
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let n = (len / h).ceil().max(1.0) as usize;
        let mut ids = vec![a];
        for k in 1..n {
            let s = k as f64 / n as f64;
            ids.push(self.add([pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])]));
        }
        ids.push(b);
        for w in ids.windows(2) {
            self.segments.push([w[0], w[1]]);
        }
        ids
    }

    /// Closed circle polyline through the given breakpoint angles.
    /// Returns vertex ids ordered counterclockwise starting at angle 0 or at
    /// the first breakpoint.
    fn circle(&mut self, radius: f64, breaks: &[f64], h: f64) -> Vec<(f64, usize)> {
        let mut angles: Vec<f64> = breaks.iter().map(|a| a.rem_euclid(2.0 * PI)).collect();
        angles.sort_by(f64::total_cmp);
        angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        if angles.is_empty() {
            angles.push(0.0);
        }
        let mut ring = Vec::new();
        for (i, &a0) in angles.iter().enumerate() {
            let a1 = if i + 1 < angles.len() { angles[i + 1] } else { angles[0] + 2.0 * PI };
            let n = ((a1 - a0) * radius / h).ceil().max(if angles.len() == 1 { 8.0 } else { 1.0 }) as usize;
            for k in 0..n {
                let a = a0 + (a1 - a0) * k as f64 / n as f64;
                ring.push((a, self.add([radius * a.cos(), radius * a.sin()])));
            }
        }
        for i in 0..ring.len() {
            self.segments.push([ring[i].1, ring[(i + 1) % ring.len()].1]);
        }
        ring
    }
}

fn inside_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn distance_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    (p[0] - a[0] - s * d[0]).hypot(p[1] - a[1] - s * d[1])
}

fn rotate(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Builds the tagged reference mesh of the machine cross-section.
pub fn build_reference_geometry(params: &GeometryParams) -> Result<Mesh, MeshError> {
    params.validate()?;
    let p = params;
    let h = p.mesh_size;
    let theta = p.bar_angle_deg.to_radians();
    let shape = p.bar_shape()?;
    let mut plc = Plc::default();

    // Rotor rim; a clipped bar needs the four chord ends as rim vertices.
    let rim_breaks: Vec<f64> = match shape {
        BarShape::Clipped { x_end } => {
            let w = p.bar_half_width;
            [[x_end, -w], [x_end, w], [-x_end, w], [-x_end, -w]]
                .iter()
                .map(|q| q[1].atan2(q[0]) + theta)
                .collect()
        }
        BarShape::Stadium => Vec::new(),
    };
    let rim = plc.circle(p.rotor_radius, &rim_breaks, h);
    let rim_polygon: Vec<Point> = rim.iter().map(|&(_, i)| plc.points[i]).collect();

    let iron_polygon: Vec<usize> = match shape {
        BarShape::Clipped { x_end } => {
            let w = p.bar_half_width;
            let find = |q: Point| -> usize {
                let a = (q[1].atan2(q[0]) + theta).rem_euclid(2.0 * PI);
                rim.iter()
                    .min_by(|x, y| {
                        let dx = (x.0 - a).abs().min(2.0 * PI - (x.0 - a).abs());
                        let dy = (y.0 - a).abs().min(2.0 * PI - (y.0 - a).abs());
                        dx.total_cmp(&dy)
                    })
                    .expect("rim has vertices")
                    .1
            };
            let corners = [find([x_end, -w]), find([x_end, w]), find([-x_end, w]), find([-x_end, -w])];
            let pos = |id: usize| rim.iter().position(|&(_, i)| i == id).expect("corner on rim");
            let arc = |from: usize, to: usize| -> Vec<usize> {
                let (mut k, end) = (pos(from), pos(to));
                let mut ids = Vec::new();
                while k != end {
                    ids.push(rim[k].1);
                    k = (k + 1) % rim.len();
                }
                ids
            };
            let mut poly = arc(corners[0], corners[1]);
            let top = plc.segment(corners[1], corners[2], h);
            poly.extend_from_slice(&top[..top.len() - 1]);
            poly.extend(arc(corners[2], corners[3]));
            let bottom = plc.segment(corners[3], corners[0], h);
            poly.extend_from_slice(&bottom[..bottom.len() - 1]);
            poly
        }
        BarShape::Stadium => {
            let (w, half) = (p.bar_half_width, 0.5 * p.bar_straight_length);
            let mut local: Vec<Point> = Vec::new();
            let n_straight = (2.0 * half / h).ceil().max(1.0) as usize;
            let n_cap = (PI * w / h).ceil().max(2.0) as usize;
            for k in 0..n_straight {
                local.push([-half + 2.0 * half * k as f64 / n_straight as f64, -w]);
            }
            for k in 0..n_cap {
                let a = -0.5 * PI + PI * k as f64 / n_cap as f64;
                local.push([half + w * a.cos(), w * a.sin()]);
            }
            for k in 0..n_straight {
                local.push([half - 2.0 * half * k as f64 / n_straight as f64, w]);
            }
            for k in 0..n_cap {
                let a = 0.5 * PI + PI * k as f64 / n_cap as f64;
                local.push([-half + w * a.cos(), w * a.sin()]);
            }
            if half == 0.0 {
                local.dedup_by(|a, b| (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-14);
            }
            let ids: Vec<usize> = local.iter().map(|&q| plc.add(rotate(q, theta))).collect();
            for i in 0..ids.len() {
                plc.segments.push([ids[i], ids[(i + 1) % ids.len()]]);
            }
            ids
        }
    };
    let iron_points: Vec<Point> = iron_polygon.iter().map(|&i| plc.points[i]).collect();

    let pitch = 2.0 * PI / p.coil_count as f64;
    let half_span = 0.5 * p.coil_span_deg.to_radians();
    let coil_breaks: Vec<f64> = (0..p.coil_count)
        .flat_map(|k| [k as f64 * pitch - half_span, k as f64 * pitch + half_span])
        .collect();

    let circle_polygon = |plc: &Plc, ring: &[(f64, usize)]| -> Vec<Point> { ring.iter().map(|&(_, i)| plc.points[i]).collect() };
    let gap_in = plc.circle(p.gap_inner_radius, &[], h);
    let gap_in_poly = circle_polygon(&plc, &gap_in);
    let gap_out = plc.circle(p.gap_outer_radius, &[], h);
    let gap_out_poly = circle_polygon(&plc, &gap_out);
    let stator = plc.circle(p.stator_inner_radius, &coil_breaks, p.size_at(p.stator_inner_radius));
    let stator_poly = circle_polygon(&plc, &stator);
    let coil_out = plc.circle(p.coil_outer_radius, &coil_breaks, p.size_at(p.coil_outer_radius));
    let coil_out_poly = circle_polygon(&plc, &coil_out);
    plc.circle(p.outer_radius, &[], p.outer_mesh_size);

    // Radial coil sides.
    let mut radial_segments: Vec<(Point, Point)> = Vec::new();
    for &a in &coil_breaks {
        let a = a.rem_euclid(2.0 * PI);
        let pick = |ring: &[(f64, usize)]| {
            ring.iter()
                .min_by(|x, y| (x.0 - a).abs().total_cmp(&(y.0 - a).abs()))
                .map(|x| x.1)
                .expect("ring has vertices")
        };
        let (i0, i1) = (pick(&stator), pick(&coil_out));
        radial_segments.push((plc.points[i0], plc.points[i1]));
        plc.segment(i0, i1, p.size_at(0.5 * (p.stator_inner_radius + p.coil_outer_radius)));
    }

    // Fill rings between the constraint circles.
    let iron_segments: Vec<(Point, Point)> = (0..iron_points.len())
        .map(|i| (iron_points[i], iron_points[(i + 1) % iron_points.len()]))
        .collect();
    let zones = [
        (0.0, p.rotor_radius),
        (p.rotor_radius, p.gap_inner_radius),
        (p.gap_inner_radius, p.gap_outer_radius),
        (p.gap_outer_radius, p.stator_inner_radius),
        (p.stator_inner_radius, p.coil_outer_radius),
        (p.coil_outer_radius, p.outer_radius),
    ];
    for (zi, &(r0, r1)) in zones.iter().enumerate() {
        let hz = p.size_at(0.5 * (r0 + r1));
        let m = ((r1 - r0) / (0.87 * hz)).round().max(1.0) as usize;
        let first = if zi == 0 { 0 } else { 1 };
        for k in first..m {
            let r = r0 + (r1 - r0) * k as f64 / m as f64;
            let hr = p.size_at(r);
            let n = if r == 0.0 { 1 } else { (2.0 * PI * r / hr).ceil() as usize };
            let offset = if k % 2 == 0 { 0.0 } else { 0.5 };
            for j in 0..n {
                let a = 2.0 * PI * (j as f64 + offset) / n as f64;
                let q = [r * a.cos(), r * a.sin()];
                let near = |segs: &[(Point, Point)]| segs.iter().any(|&(a, b)| distance_to_segment(q, a, b) < 0.55 * hr);
                if (zi == 0 && near(&iron_segments)) || (zi == 4 && near(&radial_segments)) {
                    continue;
                }
                plc.add(q);
            }
        }
    }

    let vertices: Vec<Point2<f64>> = plc.points.iter().map(|q| Point2::new(q[0], q[1])).collect();
    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(vertices, plc.segments.clone())
        .map_err(|e| MeshError::Triangulation(format!("{e:?}")))?;
    if p.min_angle_deg > 0.0 {
        cdt.refine(
            RefinementParameters::<f64>::new()
                .with_angle_limit(AngleLimit::from_deg(p.min_angle_deg))
                .with_max_additional_vertices(4 * plc.points.len()),
        );
    }

    let points: Vec<Point> = cdt.vertices().map(|v| [v.position().x, v.position().y]).collect();
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        let [a, b, c] = face.vertices().map(|v| v.fix().index());
        if super::signed_area2(points[a], points[b], points[c]) > 0.0 {
            triangles.push([a, b, c]);
        } else {
            triangles.push([a, c, b]);
        }
    }
    // Deterministic ordering independent of the triangulator's face layout.
    triangles.sort_unstable_by_key(|t| {
        let mut s = *t;
        s.sort_unstable();
        s
    });

    let classify = |c: Point| -> (Region, bool) {
        if inside_polygon(c, &rim_polygon) {
            let region = if inside_polygon(c, &iron_points) { Region::Iron } else { Region::Air };
            return (region, true);
        }
        let region = if inside_polygon(c, &gap_in_poly) {
            Region::Air
        } else if inside_polygon(c, &gap_out_poly) {
            Region::GapRing
        } else if inside_polygon(c, &stator_poly) {
            Region::Air
        } else if inside_polygon(c, &coil_out_poly) {
            let a = c[1].atan2(c[0]);
            let k = (a / pitch).round();
            if (a - k * pitch).abs() < half_span {
                Region::Coil((k as i64).rem_euclid(p.coil_count as i64) as u16)
            } else {
                Region::Air
            }
        } else {
            Region::Air
        };
        (region, false)
    };
    let tagged: Vec<(Region, bool)> = triangles
        .iter()
        .map(|t| {
            let c = [
                (points[t[0]][0] + points[t[1]][0] + points[t[2]][0]) / 3.0,
                (points[t[0]][1] + points[t[1]][1] + points[t[2]][1]) / 3.0,
            ];
            classify(c)
        })
        .collect();

    let mut owners: std::collections::BTreeMap<(usize, usize), Vec<usize>> = std::collections::BTreeMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            owners.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_default().push(t);
        }
    }
    let mut edges = Vec::new();
    for (&(a, b), ts) in &owners {
        let marker = match ts.as_slice() {
            [_] => Some(EdgeMarker::OuterDirichlet),
            [s, t] => {
                let ((rs, in_s), (rt, in_t)) = (tagged[*s], tagged[*t]);
                if in_s != in_t {
                    Some(EdgeMarker::RotorRim)
                } else if in_s && ((rs == Region::Iron) != (rt == Region::Iron)) {
                    Some(EdgeMarker::DesignInterface)
                } else {
                    None
                }
            }
            _ => return Err(MeshError::Triangulation(format!("non-manifold edge ({a}, {b})"))),
        };
        if let Some(marker) = marker {
            edges.push(MarkedEdge { a, b, marker });
        }
    }

    let regions = tagged.into_iter().map(|(r, _)| r).collect();
    Mesh::new(points, triangles, regions, edges)
}
