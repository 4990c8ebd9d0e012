//! Conforming triangulations of axis-aligned rectangles.
//!
//! Elements are stored counterclockwise. Local edge `l` of an element is the
//! edge opposite local vertex `l`, traversed from vertex `l+1` to vertex `l+2`
//! (indices mod 3). Every mesh edge is oriented along the counterclockwise
//! traversal of its *left* element, so its normal is the outward normal of
//! the left element; on the boundary this is the outward normal of the domain.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle `(x0, x1) × (y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let rect = Rect { x0, x1, y0, y1 };
        rect.validate()?;
        Ok(rect)
    }

    pub fn unit_square() -> Self {
        Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.x1, self.y0, self.y1].iter().all(|v| v.is_finite());
        if !finite || self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::InvalidInput(format!(
                "degenerate rectangle ({}, {}) x ({}, {})",
                self.x0, self.x1, self.y0, self.y1
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p[0] >= self.x0 - tol && p[0] <= self.x1 + tol && p[1] >= self.y0 - tol && p[1] <= self.y1 + tol
    }

    fn on_boundary(&self, p: Point, tol: f64) -> bool {
        self.contains(p, tol)
            && ((p[0] - self.x0).abs() <= tol
                || (p[0] - self.x1).abs() <= tol
                || (p[1] - self.y0).abs() <= tol
                || (p[1] - self.y1).abs() <= tol)
    }
}

/// One side of an edge as seen from an incident element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalTrace {
    pub element: usize,
    pub local_edge: usize,
    /// Whether the element's local traversal runs against the edge orientation.
    pub reversed: bool,
}

const REFERENCE_VERTICES: [Point; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

impl LocalTrace {
    /// Reference-triangle coordinates of the point at edge parameter `s ∈ [0, 1]`.
    pub fn reference_point(&self, s: f64) -> Point {
        let a = REFERENCE_VERTICES[(self.local_edge + 1) % 3];
        let b = REFERENCE_VERTICES[(self.local_edge + 2) % 3];
        let t = if self.reversed { 1.0 - s } else { s };
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Endpoints in edge orientation (counterclockwise for the left element).
    pub vertices: [usize; 2],
    /// Unit normal pointing from the left element to the right one.
    pub normal: Point,
    pub length: f64,
    pub left: LocalTrace,
    pub right: Option<LocalTrace>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }
}

/// Both traces of an edge, parametrized by the same arc-length parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePair {
    pub start: Point,
    pub end: Point,
    pub left: LocalTrace,
    pub right: Option<LocalTrace>,
}

impl TracePair {
    pub fn physical_point(&self, s: f64) -> Point {
        [self.start[0] + s * (self.end[0] - self.start[0]), self.start[1] + s * (self.end[1] - self.start[1])]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub rect: Rect,
    pub vertices: Vec<Point>,
    pub elements: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Edge index of each local edge of each element.
    pub element_edges: Vec<[usize; 3]>,
    /// Reported mesh parameter: the cell edge length of the structured grid.
    pub h: f64,
    /// Largest element diameter.
    pub h_max_diam: f64,
}

impl Mesh {
    /// `n × n` grid of cells, each split along its lower-left to upper-right diagonal.
    pub fn build_structured(rect: Rect, n: usize) -> Result<Mesh> {
        rect.validate()?;
        if n == 0 {
            return Err(Error::InvalidInput("structured mesh needs n >= 1".into()));
        }
        let stride = n + 1;
        let mut vertices = Vec::with_capacity(stride * stride);
        for j in 0..=n {
            let y = if j == n { rect.y1 } else { rect.y0 + rect.height() * j as f64 / n as f64 };
            for i in 0..=n {
                let x = if i == n { rect.x1 } else { rect.x0 + rect.width() * i as f64 / n as f64 };
                vertices.push([x, y]);
            }
        }
        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = j * stride + i;
                let v10 = v00 + 1;
                let v01 = v00 + stride;
                let v11 = v01 + 1;
                elements.push([v00, v10, v11]);
                elements.push([v00, v11, v01]);
            }
        }
        let mut mesh = Self::from_elements(rect, vertices, elements)?;
        mesh.h = rect.width() / n as f64;
        Ok(mesh)
    }

    /// Builds edge connectivity for an arbitrary counterclockwise triangulation of `rect`.
    pub fn from_elements(rect: Rect, vertices: Vec<Point>, elements: Vec<[usize; 3]>) -> Result<Mesh> {
        let mut edges: Vec<Edge> = Vec::new();
        let mut element_edges = vec![[usize::MAX; 3]; elements.len()];
        let mut lookup: BTreeMap<(usize, usize), usize> = BTreeMap::new();

        for (e, tri) in elements.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidInput(format!("element {e} references a missing vertex")));
            }
            for l in 0..3 {
                let a = tri[(l + 1) % 3];
                let b = tri[(l + 2) % 3];
                let key = (a.min(b), a.max(b));
                match lookup.get(&key) {
                    None => {
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                        let length = dx.hypot(dy);
                        lookup.insert(key, edges.len());
                        element_edges[e][l] = edges.len();
                        edges.push(Edge {
                            vertices: [a, b],
                            normal: [dy / length, -dx / length],
                            length,
                            left: LocalTrace { element: e, local_edge: l, reversed: false },
                            right: None,
                        });
                    }
                    Some(&idx) => {
                        let edge = &mut edges[idx];
                        if edge.right.is_some() {
                            return Err(Error::InvalidInput(format!(
                                "edge ({a}, {b}) shared by more than two elements"
                            )));
                        }
                        edge.right = Some(LocalTrace { element: e, local_edge: l, reversed: edge.vertices[0] != a });
                        element_edges[e][l] = idx;
                    }
                }
            }
        }

        let mut mesh = Mesh { rect, vertices, elements, edges, element_edges, h: 0.0, h_max_diam: 0.0 };
        mesh.h_max_diam = (0..mesh.num_elements()).map(|e| mesh.diameter(e)).fold(0.0, f64::max);
        mesh.h = mesh.h_max_diam;
        Ok(mesh)
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn element_points(&self, e: usize) -> [Point; 3] {
        let t = self.elements[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn signed_area(&self, e: usize) -> f64 {
        let [p0, p1, p2] = self.element_points(e);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn diameter(&self, e: usize) -> f64 {
        let p = self.element_points(e);
        let d = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]);
        d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]))
    }

    pub fn centroid(&self, e: usize) -> Point {
        let p = self.element_points(e);
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
    }

    /// Maps reference coordinates `(ξ, η)` of element `e` to the physical plane.
    pub fn map_to_physical(&self, e: usize, xi: Point) -> Point {
        let [p0, p1, p2] = self.element_points(e);
        [
            p0[0] + xi[0] * (p1[0] - p0[0]) + xi[1] * (p2[0] - p0[0]),
            p0[1] + xi[0] * (p1[1] - p0[1]) + xi[1] * (p2[1] - p0[1]),
        ]
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.is_boundary())
    }

    pub fn interior_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| !e.is_boundary())
    }

    pub fn edge_trace_pairing(&self, edge: usize) -> TracePair {
        let e = &self.edges[edge];
        TracePair {
            start: self.vertices[e.vertices[0]],
            end: self.vertices[e.vertices[1]],
            left: e.left,
            right: e.right,
        }
    }

    /// Ratio of the largest to the smallest element diameter.
    pub fn quasi_uniformity(&self) -> f64 {
        let (lo, hi) = (0..self.num_elements())
            .map(|e| self.diameter(e))
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        hi / lo
    }

    /// Checks incidence, orientation, area and Euler-characteristic invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput(msg));
        let tol = 1e-12 * self.rect.width().max(self.rect.height());
        for e in 0..self.num_elements() {
            if self.signed_area(e) <= 0.0 {
                return fail(format!("element {e} has non-positive signed area"));
            }
        }
        for (i, edge) in self.edges.iter().enumerate() {
            let [a, b] = edge.vertices;
            let mid =
                [0.5 * (self.vertices[a][0] + self.vertices[b][0]), 0.5 * (self.vertices[a][1] + self.vertices[b][1])];
            let cl = self.centroid(edge.left.element);
            let toward_left = (cl[0] - mid[0]) * edge.normal[0] + (cl[1] - mid[1]) * edge.normal[1];
            if toward_left >= 0.0 {
                return fail(format!("edge {i}: normal does not leave the left element"));
            }
            match edge.right {
                Some(right) => {
                    let cr = self.centroid(right.element);
                    let toward_right = (cr[0] - mid[0]) * edge.normal[0] + (cr[1] - mid[1]) * edge.normal[1];
                    if toward_right <= 0.0 {
                        return fail(format!("edge {i}: normal does not point into the right element"));
                    }
                }
                None => {
                    let probe = [mid[0] + 1e-6 * edge.normal[0], mid[1] + 1e-6 * edge.normal[1]];
                    if !self.rect.on_boundary(self.vertices[a], tol)
                        || !self.rect.on_boundary(self.vertices[b], tol)
                        || self.rect.contains(probe, 0.0)
                    {
                        return fail(format!("boundary edge {i} is not an outward boundary segment"));
                    }
                }
            }
        }
        let euler = self.vertices.len() as i64 - self.edges.len() as i64 + self.elements.len() as i64;
        if euler != 1 {
            return fail(format!("Euler characteristic {euler} != 1"));
        }
        Ok(())
    }

    /// Plain-text dump: vertices, elements and edges, one section each.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# vertices {}", self.vertices.len());
        for (i, p) in self.vertices.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {}", p[0], p[1]);
        }
        let _ = writeln!(out, "# elements {}", self.elements.len());
        for (i, t) in self.elements.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(out, "# edges {}", self.edges.len());
        for (i, e) in self.edges.iter().enumerate() {
            let right = e.right.map_or(-1, |r| r.element as i64);
            let _ = writeln!(
                out,
                "{i} {} {} {} {right} {} {}",
                e.vertices[0],
                e.vertices[1],
                e.left.element,
                e.normal[0] + 0.0,
                e.normal[1] + 0.0
            );
        }
        out
    }
}
