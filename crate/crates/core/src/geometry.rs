//! Domain shapes, node-centered grids and rasterized masks.
//!
//! A [`ShapeDescriptor`] is a parametric, closed subset of R^N with a
//! membership predicate. [`rasterize`] samples that predicate at the nodes of
//! a uniform [`GridSpec`] and classifies every node as interior, boundary or
//! exterior:
//!
//! * a node is *inside* when the shape contains its coordinates;
//! * an inside node is *boundary* when at least one of its 2N axis neighbors
//!   is outside the shape or outside the grid;
//! * every other inside node is *interior*.
//!
//! Fields with compact support live on interior nodes only, so their zero
//! extension beyond the mask is consistent with every difference stencil
//! used in [`crate::diffops`].

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KornError, Result};

/// Default cap on the number of grid nodes.
pub const DEFAULT_NODE_CAP: usize = 16_000_000;

/// Relative slack applied to membership tests so that nodes lying exactly on
/// a shape's surface are counted as inside despite rounding.
const MEMBERSHIP_SLACK: f64 = 1e-10;

/// Uniform node-centered grid: node `i` along axis `k` sits at
/// `origin[k] + i * spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    spacing: f64,
    origin: Vec<f64>,
    extent: Vec<usize>,
}

impl GridSpec {
    pub fn new(spacing: f64, origin: Vec<f64>, extent: Vec<usize>) -> Result<Self> {
        Self::with_cap(spacing, origin, extent, DEFAULT_NODE_CAP)
    }

    pub fn with_cap(
        spacing: f64,
        origin: Vec<f64>,
        extent: Vec<usize>,
        node_cap: usize,
    ) -> Result<Self> {
        let dim = origin.len();
        if !(1..=3).contains(&dim) {
            return Err(KornError::Dimension(format!(
                "grid dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        if extent.len() != dim {
            return Err(KornError::Dimension(format!(
                "origin has {dim} coordinates but extent has {}",
                extent.len()
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(KornError::Parameter(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        if origin.iter().any(|c| !c.is_finite()) {
            return Err(KornError::Parameter("grid origin must be finite".into()));
        }
        if extent.iter().any(|&n| n < 2) {
            return Err(KornError::Parameter(
                "grid needs at least 2 nodes per axis".into(),
            ));
        }
        let total = extent
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .unwrap_or(usize::MAX);
        if total > node_cap {
            return Err(KornError::Parameter(format!(
                "grid has {total} nodes, above the cap of {node_cap}"
            )));
        }
        Ok(Self {
            spacing,
            origin,
            extent,
        })
    }

    /// Smallest grid with spacing `h` whose node box covers the shape's
    /// bounding box. The first node sits on the lower bounding-box corner.
    pub fn fitted(shape: &ShapeDescriptor, dim: usize, spacing: f64) -> Result<Self> {
        shape.validate(dim)?;
        let (lo, hi) = shape.bounding_box(dim);
        let extent = lo
            .iter()
            .zip(&hi)
            .map(|(l, u)| {
                let cells = ((u - l) / spacing - 1e-9).ceil().max(1.0);
                cells as usize + 1
            })
            .collect();
        Self::new(spacing, lo, extent)
    }

    /// Same node topology with every length multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.spacing * s,
            self.origin.iter().map(|c| c * s).collect(),
            self.extent.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn extent(&self) -> &[usize] {
        &self.extent
    }

    pub fn node_count(&self) -> usize {
        self.extent.iter().product()
    }

    /// Quadrature weight of one node, `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    /// Linear index stride along `axis` (axis 0 varies slowest).
    pub fn stride(&self, axis: usize) -> usize {
        self.extent[axis + 1..].iter().product()
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        let mut rest = node;
        for axis in (0..self.dim()).rev() {
            idx[axis] = rest % self.extent[axis];
            rest /= self.extent[axis];
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.extent)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Index of the node along `axis` at position `i`.
    pub fn axis_position(&self, node: usize, axis: usize) -> usize {
        (node / self.stride(axis)) % self.extent[axis]
    }

    pub fn coord(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coord_into(node, &mut x);
        x
    }

    pub fn coord_into(&self, node: usize, out: &mut [f64]) {
        let mut rest = node;
        for axis in (0..self.dim()).rev() {
            let i = rest % self.extent[axis];
            rest /= self.extent[axis];
            out[axis] = self.origin[axis] + i as f64 * self.spacing;
        }
    }

    /// Neighbor one step along `axis` in direction `forward`, if it is on
    /// the grid.
    pub fn neighbor(&self, node: usize, axis: usize, forward: bool) -> Option<usize> {
        let stride = self.stride(axis);
        let pos = (node / stride) % self.extent[axis];
        if forward {
            (pos + 1 < self.extent[axis]).then_some(node + stride)
        } else {
            (pos > 0).then(|| node - stride)
        }
    }

    /// Upper corner of the node box.
    pub fn upper_corner(&self) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.extent)
            .map(|(o, &n)| o + (n - 1) as f64 * self.spacing)
            .collect()
    }
}

/// Parametric domain shapes. All shapes are closed sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeDescriptor {
    /// Axis-aligned box `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Spherical shell `inner <= |x - center| <= outer`.
    Annulus {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
    /// Two arms `[0, length] x [0, width]` and `[0, width] x [0, length]`
    /// meeting at the origin; extra axes span `[0, width]`.
    LShape { length: f64, width: f64 },
    /// Outward cusp `0 <= x_1 <= length`, `|x_k| <= length (x_1/length)^alpha`.
    Cusp { alpha: f64, length: f64 },
    /// `{ scale * y + translation : y in shape }`.
    Transformed {
        scale: f64,
        translation: Vec<f64>,
        shape: Box<ShapeDescriptor>,
    },
    Union {
        left: Box<ShapeDescriptor>,
        right: Box<ShapeDescriptor>,
    },
    Intersection {
        left: Box<ShapeDescriptor>,
        right: Box<ShapeDescriptor>,
    },
    Difference {
        left: Box<ShapeDescriptor>,
        right: Box<ShapeDescriptor>,
    },
}

impl ShapeDescriptor {
    pub fn unit_box(dim: usize) -> Self {
        ShapeDescriptor::Box {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn unit_square() -> Self {
        Self::unit_box(2)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        ShapeDescriptor::Ball { center, radius }
    }

    pub fn annulus(center: Vec<f64>, inner: f64, outer: f64) -> Self {
        ShapeDescriptor::Annulus {
            center,
            inner,
            outer,
        }
    }

    pub fn l_shape(length: f64, width: f64) -> Self {
        ShapeDescriptor::LShape { length, width }
    }

    pub fn scaled(self, scale: f64, translation: Vec<f64>) -> Self {
        ShapeDescriptor::Transformed {
            scale,
            translation,
            shape: Box::new(self),
        }
    }

    pub fn union(self, other: Self) -> Self {
        ShapeDescriptor::Union {
            left: Box::new(self),
            right: Box::new(other),
        }
    }

    pub fn intersection(self, other: Self) -> Self {
        ShapeDescriptor::Intersection {
            left: Box::new(self),
            right: Box::new(other),
        }
    }

    pub fn difference(self, other: Self) -> Self {
        ShapeDescriptor::Difference {
            left: Box::new(self),
            right: Box::new(other),
        }
    }

    /// Checks parameter invariants for a shape embedded in R^dim.
    pub fn validate(&self, dim: usize) -> Result<()> {
        fn check_len(v: &[f64], dim: usize, what: &str) -> Result<()> {
            if v.len() != dim {
                return Err(KornError::Dimension(format!(
                    "{what} has {} coordinates, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(KornError::Parameter(format!("{what} must be finite")));
            }
            Ok(())
        }
        fn check_positive(value: f64, what: &str) -> Result<()> {
            if value == 0.0 {
                Err(KornError::DegenerateDomain(format!("{what} is zero")))
            } else if !(value.is_finite() && value > 0.0) {
                Err(KornError::Parameter(format!(
                    "{what} must be positive, got {value}"
                )))
            } else {
                Ok(())
            }
        }

        match self {
            ShapeDescriptor::Box { lo, hi } => {
                check_len(lo, dim, "box corner")?;
                check_len(hi, dim, "box corner")?;
                for (l, u) in lo.iter().zip(hi) {
                    check_positive(u - l, "box side")?;
                }
                Ok(())
            }
            ShapeDescriptor::Ball { center, radius } => {
                check_len(center, dim, "ball center")?;
                check_positive(*radius, "ball radius")
            }
            ShapeDescriptor::Annulus {
                center,
                inner,
                outer,
            } => {
                check_len(center, dim, "annulus center")?;
                check_positive(*inner, "annulus inner radius")?;
                check_positive(*outer, "annulus outer radius")?;
                if inner >= outer {
                    return Err(KornError::Parameter(format!(
                        "annulus inner radius {inner} must be below outer radius {outer}"
                    )));
                }
                Ok(())
            }
            ShapeDescriptor::LShape { length, width } => {
                if dim < 2 {
                    return Err(KornError::Dimension("l-shape needs N >= 2".into()));
                }
                check_positive(*length, "l-shape arm length")?;
                check_positive(*width, "l-shape arm width")?;
                if width >= length {
                    return Err(KornError::Parameter(
                        "l-shape arm width must be below its length".into(),
                    ));
                }
                Ok(())
            }
            ShapeDescriptor::Cusp { alpha, length } => {
                if dim < 2 {
                    return Err(KornError::Dimension("cusp needs N >= 2".into()));
                }
                if !(alpha.is_finite() && *alpha > 1.0) {
                    return Err(KornError::Parameter(format!(
                        "cusp exponent must exceed 1, got {alpha}"
                    )));
                }
                check_positive(*length, "cusp length")
            }
            ShapeDescriptor::Transformed {
                scale,
                translation,
                shape,
            } => {
                check_positive(*scale, "scale")?;
                check_len(translation, dim, "translation")?;
                shape.validate(dim)
            }
            ShapeDescriptor::Union { left, right }
            | ShapeDescriptor::Intersection { left, right }
            | ShapeDescriptor::Difference { left, right } => {
                left.validate(dim)?;
                right.validate(dim)
            }
        }
    }

    /// Membership predicate (closed set, small relative slack).
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            ShapeDescriptor::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(c, (l, u))| {
                let slack = MEMBERSHIP_SLACK * (u - l);
                *c >= l - slack && *c <= u + slack
            }),
            ShapeDescriptor::Ball { center, radius } => {
                dist2(x, center) <= radius * radius * (1.0 + MEMBERSHIP_SLACK)
            }
            ShapeDescriptor::Annulus {
                center,
                inner,
                outer,
            } => {
                let d2 = dist2(x, center);
                d2 <= outer * outer * (1.0 + MEMBERSHIP_SLACK)
                    && d2 >= inner * inner * (1.0 - MEMBERSHIP_SLACK)
            }
            ShapeDescriptor::LShape { length, width } => {
                let slack = MEMBERSHIP_SLACK * length;
                let within = |c: f64, top: f64| c >= -slack && c <= top + slack;
                let extra = x[2..].iter().all(|&c| within(c, *width));
                let arm_a = within(x[0], *length) && within(x[1], *width);
                let arm_b = within(x[0], *width) && within(x[1], *length);
                extra && (arm_a || arm_b)
            }
            ShapeDescriptor::Cusp { alpha, length } => {
                let slack = MEMBERSHIP_SLACK * length;
                if x[0] < -slack || x[0] > length + slack {
                    return false;
                }
                let half = length * (x[0].max(0.0) / length).powf(*alpha);
                x[1..].iter().all(|c| c.abs() <= half + slack)
            }
            ShapeDescriptor::Transformed {
                scale,
                translation,
                shape,
            } => {
                let y: Vec<f64> = x
                    .iter()
                    .zip(translation)
                    .map(|(c, t)| (c - t) / scale)
                    .collect();
                shape.contains(&y)
            }
            ShapeDescriptor::Union { left, right } => left.contains(x) || right.contains(x),
            ShapeDescriptor::Intersection { left, right } => {
                left.contains(x) && right.contains(x)
            }
            ShapeDescriptor::Difference { left, right } => left.contains(x) && !right.contains(x),
        }
    }

    /// Axis-aligned bounding box (possibly loose for boolean trees).
    pub fn bounding_box(&self, dim: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            ShapeDescriptor::Box { lo, hi } => (lo.clone(), hi.clone()),
            ShapeDescriptor::Ball { center, radius }
            | ShapeDescriptor::Annulus {
                center,
                outer: radius,
                ..
            } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            ShapeDescriptor::LShape { length, width } => {
                let mut hi = vec![*width; dim];
                hi[0] = *length;
                hi[1] = *length;
                (vec![0.0; dim], hi)
            }
            ShapeDescriptor::Cusp { length, .. } => {
                let mut lo = vec![-length; dim];
                lo[0] = 0.0;
                (lo, vec![*length; dim])
            }
            ShapeDescriptor::Transformed {
                scale,
                translation,
                shape,
            } => {
                let (lo, hi) = shape.bounding_box(dim);
                (
                    lo.iter().zip(translation).map(|(l, t)| l * scale + t).collect(),
                    hi.iter().zip(translation).map(|(u, t)| u * scale + t).collect(),
                )
            }
            ShapeDescriptor::Union { left, right } => {
                let (a_lo, a_hi) = left.bounding_box(dim);
                let (b_lo, b_hi) = right.bounding_box(dim);
                (
                    a_lo.iter().zip(&b_lo).map(|(a, b)| a.min(*b)).collect(),
                    a_hi.iter().zip(&b_hi).map(|(a, b)| a.max(*b)).collect(),
                )
            }
            ShapeDescriptor::Intersection { left, right } => {
                let (a_lo, a_hi) = left.bounding_box(dim);
                let (b_lo, b_hi) = right.bounding_box(dim);
                (
                    a_lo.iter().zip(&b_lo).map(|(a, b)| a.max(*b)).collect(),
                    a_hi.iter().zip(&b_hi).map(|(a, b)| a.min(*b)).collect(),
                )
            }
            ShapeDescriptor::Difference { left, .. } => left.bounding_box(dim),
        }
    }

    /// The axis-aligned box this shape reduces to, if any.
    pub fn as_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            ShapeDescriptor::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            ShapeDescriptor::Transformed {
                scale,
                translation,
                shape,
            } => shape.as_box().map(|(lo, hi)| {
                (
                    lo.iter().zip(translation).map(|(l, t)| l * scale + t).collect(),
                    hi.iter().zip(translation).map(|(u, t)| u * scale + t).collect(),
                )
            }),
            _ => None,
        }
    }

    /// Analytic volume for primitive shapes.
    pub fn volume(&self, dim: usize) -> Option<f64> {
        let ball = |r: f64| match dim {
            1 => 2.0 * r,
            2 => std::f64::consts::PI * r * r,
            _ => 4.0 / 3.0 * std::f64::consts::PI * r.powi(3),
        };
        match self {
            ShapeDescriptor::Box { lo, hi } => Some(lo.iter().zip(hi).map(|(l, u)| u - l).product()),
            ShapeDescriptor::Ball { radius, .. } => Some(ball(*radius)),
            ShapeDescriptor::Annulus { inner, outer, .. } => Some(ball(*outer) - ball(*inner)),
            ShapeDescriptor::LShape { length, width } => {
                let extra = width.powi(dim as i32 - 2);
                Some((2.0 * length * width - width * width) * extra)
            }
            ShapeDescriptor::Transformed { scale, shape, .. } => {
                shape.volume(dim).map(|v| v * scale.powi(dim as i32))
            }
            _ => None,
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeLabel {
    Interior,
    Boundary,
    Exterior,
}

/// Staircase surface quadrature on boundary nodes.
#[derive(Debug, Clone)]
pub struct BoundaryMeasure {
    /// `h^(N-1)` times the number of exposed faces; zero off the boundary.
    pub weights: Vec<f64>,
    /// True when the mask comes from an axis-aligned box whose faces lie on
    /// grid nodes, so the staircase coincides with the true surface.
    pub axis_aligned_box: bool,
}

impl BoundaryMeasure {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Rasterized domain on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMask {
    grid: GridSpec,
    labels: Vec<NodeLabel>,
    shape: Option<ShapeDescriptor>,
    interior: usize,
    boundary: usize,
}

impl DomainMask {
    /// Builds a mask from an explicit inside/outside flag per node.
    pub fn from_inside(grid: GridSpec, inside: &[bool]) -> Result<Self> {
        if inside.len() != grid.node_count() {
            return Err(KornError::Dimension(
                "inside flags do not match the grid".into(),
            ));
        }
        let dim = grid.dim();
        let labels: Vec<NodeLabel> = (0..grid.node_count())
            .into_par_iter()
            .map(|node| {
                if !inside[node] {
                    return NodeLabel::Exterior;
                }
                let exposed = (0..dim).any(|axis| {
                    [false, true].iter().any(|&fwd| match grid.neighbor(node, axis, fwd) {
                        Some(nb) => !inside[nb],
                        None => true,
                    })
                });
                if exposed {
                    NodeLabel::Boundary
                } else {
                    NodeLabel::Interior
                }
            })
            .collect();
        let interior = labels.iter().filter(|l| **l == NodeLabel::Interior).count();
        let boundary = labels.iter().filter(|l| **l == NodeLabel::Boundary).count();
        if interior == 0 {
            return Err(KornError::DegenerateDomain(
                "mask has no interior nodes".into(),
            ));
        }
        Ok(Self {
            grid,
            labels,
            shape: None,
            interior,
            boundary,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing()
    }

    pub fn shape(&self) -> Option<&ShapeDescriptor> {
        self.shape.as_ref()
    }

    pub fn labels(&self) -> &[NodeLabel] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> NodeLabel {
        self.labels[node]
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn interior_count(&self) -> usize {
        self.interior
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary
    }

    pub fn inside_count(&self) -> usize {
        self.interior + self.boundary
    }

    pub fn is_inside(&self, node: usize) -> bool {
        self.labels[node] != NodeLabel::Exterior
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.labels[node] == NodeLabel::Interior
    }

    /// Axis neighbor that is on the grid and inside the mask.
    pub fn inside_neighbor(&self, node: usize, axis: usize, forward: bool) -> Option<usize> {
        self.grid
            .neighbor(node, axis, forward)
            .filter(|&nb| self.is_inside(nb))
    }

    pub fn inside_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.labels.len()).filter(move |&n| self.is_inside(n))
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.labels.len()).filter(move |&n| self.is_interior(n))
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.labels.len()).filter(move |&n| self.labels[n] == NodeLabel::Boundary)
    }

    /// `(interior + boundary / 2) * h^N`, a volume estimate that is second
    /// order on grid-aligned boxes.
    pub fn volume_estimate(&self) -> f64 {
        (self.interior as f64 + 0.5 * self.boundary as f64) * self.grid.cell_volume()
    }

    /// Largest Euclidean distance between two inside nodes.
    pub fn diameter(&self) -> f64 {
        // The farthest pair are vertices of the convex hull of the node set,
        // and a hull vertex always has an axis neighbor outside the mask.
        let pts: Vec<Vec<f64>> = self.boundary_nodes().map(|n| self.grid.coord(n)).collect();
        pts.par_iter()
            .enumerate()
            .map(|(i, a)| {
                pts[i + 1..]
                    .iter()
                    .map(|b| dist2(a, b))
                    .fold(0.0_f64, f64::max)
            })
            .reduce(|| 0.0, f64::max)
            .sqrt()
    }

    /// Staircase boundary quadrature weights.
    pub fn boundary_weights(&self) -> BoundaryMeasure {
        let dim = self.dim();
        let face = self.grid.spacing().powi(dim as i32 - 1);
        let weights = (0..self.node_count())
            .map(|node| {
                if self.labels[node] != NodeLabel::Boundary {
                    return 0.0;
                }
                let exposed = (0..dim)
                    .flat_map(|axis| [false, true].map(move |fwd| (axis, fwd)))
                    .filter(|&(axis, fwd)| self.inside_neighbor(node, axis, fwd).is_none())
                    .count();
                face * exposed as f64
            })
            .collect();
        BoundaryMeasure {
            weights,
            axis_aligned_box: self.is_grid_aligned_box(),
        }
    }

    fn is_grid_aligned_box(&self) -> bool {
        let Some((lo, hi)) = self.shape.as_ref().and_then(|s| s.as_box()) else {
            return false;
        };
        let h = self.grid.spacing();
        let on_node = |c: f64, axis: usize| {
            let t = (c - self.grid.origin()[axis]) / h;
            (t - t.round()).abs() < 1e-8
        };
        (0..self.dim()).all(|axis| on_node(lo[axis], axis) && on_node(hi[axis], axis))
    }

    /// For each node, the L-infinity index distance to the nearest node that
    /// is not interior (zero on non-interior nodes).
    pub fn interior_depth(&self) -> Vec<usize> {
        let dim = self.dim();
        let mut depth = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        for node in 0..self.node_count() {
            if !self.is_interior(node) {
                depth[node] = 0;
                queue.push_back(node);
            }
        }
        let offsets = box_offsets(dim, 1);
        let extent = self.grid.extent().to_vec();
        while let Some(node) = queue.pop_front() {
            let idx = self.grid.multi_index(node);
            for off in &offsets {
                let Some(nb) = offset_index(&idx, off, &extent) else {
                    continue;
                };
                let nb = self.grid.linear_index(&nb);
                if depth[nb] == usize::MAX {
                    depth[nb] = depth[node] + 1;
                    queue.push_back(nb);
                }
            }
        }
        depth
    }

    /// A cube `[c - k h, c + k h]^N` whose nodes are all interior, with `k`
    /// as large as possible. Ties prefer the center closest to the interior
    /// centroid.
    pub fn inscribed_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let depth = self.interior_depth();
        let dim = self.dim();
        let mut centroid = vec![0.0; dim];
        for node in self.interior_nodes() {
            for (c, x) in centroid.iter_mut().zip(self.grid.coord(node)) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= self.interior as f64);
        let best = self
            .interior_nodes()
            .map(|n| (depth[n], -dist2(&self.grid.coord(n), &centroid), n))
            .max_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(b.2.cmp(&a.2)))
            .ok_or_else(|| KornError::DegenerateDomain("no interior nodes".into()))?;
        let half = (best.0 - 1) as f64 * self.spacing();
        if half <= 0.0 {
            return Err(KornError::DegenerateDomain(
                "interior is too thin to hold a compactly supported field".into(),
            ));
        }
        let c = self.grid.coord(best.2);
        Ok((
            c.iter().map(|x| x - half).collect(),
            c.iter().map(|x| x + half).collect(),
        ))
    }

    /// Writes `x0,..,x{N-1},label` rows for plotting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|k| format!("x{k}")).collect();
        header.push("label".into());
        wtr.write_record(&header).map_err(csv_err)?;
        for node in 0..self.node_count() {
            let mut row: Vec<String> = self.grid.coord(node).iter().map(|c| c.to_string()).collect();
            row.push(
                match self.labels[node] {
                    NodeLabel::Interior => "interior",
                    NodeLabel::Boundary => "boundary",
                    NodeLabel::Exterior => "exterior",
                }
                .into(),
            );
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> KornError {
    KornError::Io(std::io::Error::other(e))
}

/// All offsets in `{-r..=r}^dim` except the zero offset.
pub(crate) fn box_offsets(dim: usize, r: i64) -> Vec<Vec<i64>> {
    let side = (2 * r + 1) as usize;
    (0..side.pow(dim as u32))
        .map(|mut code| {
            (0..dim)
                .map(|_| {
                    let v = (code % side) as i64 - r;
                    code /= side;
                    v
                })
                .collect::<Vec<i64>>()
        })
        .filter(|off| off.iter().any(|&v| v != 0))
        .collect()
}

pub(crate) fn offset_index(idx: &[usize], off: &[i64], extent: &[usize]) -> Option<Vec<usize>> {
    idx.iter()
        .zip(off)
        .zip(extent)
        .map(|((&i, &o), &n)| {
            let j = i as i64 + o;
            (j >= 0 && (j as usize) < n).then_some(j as usize)
        })
        .collect()
}

/// Samples the shape's membership predicate at every grid node.
pub fn rasterize(shape: &ShapeDescriptor, grid: &GridSpec) -> Result<DomainMask> {
    let dim = grid.dim();
    shape.validate(dim)?;
    let (lo, hi) = shape.bounding_box(dim);
    let upper = grid.upper_corner();
    let tol = 1e-9 * grid.spacing();
    for axis in 0..dim {
        if lo[axis] < grid.origin()[axis] - tol || hi[axis] > upper[axis] + tol {
            return Err(KornError::Geometry(format!(
                "shape spans [{}, {}] on axis {axis}, grid covers [{}, {}]",
                lo[axis],
                hi[axis],
                grid.origin()[axis],
                upper[axis]
            )));
        }
    }
    let inside: Vec<bool> = (0..grid.node_count())
        .into_par_iter()
        .map_init(
            || vec![0.0; dim],
            |x, node| {
                grid.coord_into(node, x);
                shape.contains(x)
            },
        )
        .collect();
    let mut mask = DomainMask::from_inside(grid.clone(), &inside)?;
    mask.shape = Some(shape.clone());
    Ok(mask)
}

/// Fits a grid of spacing `h` to the shape and rasterizes it.
pub fn rasterize_fitted(shape: &ShapeDescriptor, dim: usize, h: f64) -> Result<DomainMask> {
    let grid = GridSpec::fitted(shape, dim, h)?;
    rasterize(shape, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square(h: f64) -> DomainMask {
        rasterize_fitted(&ShapeDescriptor::unit_square(), 2, h).unwrap()
    }

    #[test]
    fn unit_square_quarter_spacing_counts() {
        let mask = unit_square(0.25);
        assert_eq!(mask.grid().extent(), &[5, 5]);
        assert_eq!(mask.inside_count(), 25);
        assert_eq!(mask.interior_count(), 9);
        assert_eq!(mask.boundary_count(), 16);
    }

    #[test]
    fn zero_radius_ball_is_degenerate() {
        let shape = ShapeDescriptor::ball(vec![0.0, 0.0], 0.0);
        let grid = GridSpec::new(0.1, vec![-1.0, -1.0], vec![21, 21]).unwrap();
        assert!(matches!(
            rasterize(&shape, &grid),
            Err(KornError::DegenerateDomain(_))
        ));
    }

    #[test]
    fn shape_outside_grid_is_rejected() {
        let shape = ShapeDescriptor::ball(vec![0.0, 0.0], 2.0);
        let grid = GridSpec::new(0.1, vec![-1.0, -1.0], vec![21, 21]).unwrap();
        assert!(matches!(
            rasterize(&shape, &grid),
            Err(KornError::Geometry(_))
        ));
    }

    #[test]
    fn scaled_box_grows_interior_by_two_to_the_n() {
        let h = 1.0 / 16.0;
        for dim in 1..=3 {
            let small = ShapeDescriptor::unit_box(dim);
            let big = ShapeDescriptor::unit_box(dim).scaled(2.0, vec![0.0; dim]);
            let grid = GridSpec::new(h, vec![0.0; dim], vec![33; dim]).unwrap();
            let a = rasterize(&small, &grid).unwrap().interior_count() as f64;
            let b = rasterize(&big, &grid).unwrap().interior_count() as f64;
            let ratio = b / a;
            let expect = 2f64.powi(dim as i32);
            assert!((ratio / expect - 1.0).abs() < 0.25, "dim {dim}: {ratio}");
        }
    }

    #[test]
    fn diameters_of_primitives() {
        assert!((unit_square(0.125).diameter() - 2f64.sqrt()).abs() < 1e-14);
        let ball = rasterize_fitted(&ShapeDescriptor::ball(vec![0.0, 0.0], 0.75), 2, 1.0 / 32.0)
            .unwrap();
        assert!((ball.diameter() - 1.5).abs() < 1e-14);
        let s = 3.0;
        let grid = GridSpec::fitted(&ShapeDescriptor::unit_square(), 2, 0.125)
            .unwrap()
            .scaled(s)
            .unwrap();
        let scaled = rasterize(&ShapeDescriptor::unit_square().scaled(s, vec![0.0, 0.0]), &grid)
            .unwrap();
        assert!((scaled.diameter() - s * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn boundary_weights_on_square_segment_and_cube() {
        let h = 0.25;
        let bw = unit_square(h).boundary_weights();
        assert!(bw.axis_aligned_box);
        // 16 edge nodes: 12 with one exposed face, 4 corners with two.
        assert!((bw.total() - (4.0 + 4.0 * h)).abs() < 1e-14);

        let seg = rasterize_fitted(&ShapeDescriptor::unit_box(1), 1, 0.1).unwrap();
        assert!((seg.boundary_weights().total() - 2.0).abs() < 1e-14);

        let cube = rasterize_fitted(&ShapeDescriptor::unit_box(3), 3, 0.5).unwrap();
        let total = cube.boundary_weights().total();
        // 3 nodes per edge: each face holds 9 nodes, weight h^2 per exposed face.
        assert!((total - 6.0 * 9.0 * 0.25).abs() < 1e-14);
        assert!(total >= 6.0 * 0.25 * 9.0 - 1e-14);
    }

    #[test]
    fn ball_boundary_measure_is_flagged_staircase() {
        let ball = rasterize_fitted(&ShapeDescriptor::ball(vec![0.0, 0.0], 1.0), 2, 0.1).unwrap();
        assert!(!ball.boundary_weights().axis_aligned_box);
    }

    #[test]
    fn interior_neighbors_are_never_exterior() {
        let shape = ShapeDescriptor::annulus(vec![0.0, 0.0], 0.4, 1.0)
            .union(ShapeDescriptor::l_shape(1.0, 0.3));
        let mask = rasterize_fitted(&shape, 2, 1.0 / 24.0).unwrap();
        for node in mask.interior_nodes() {
            for axis in 0..2 {
                for fwd in [false, true] {
                    assert!(mask.inside_neighbor(node, axis, fwd).is_some());
                }
            }
        }
        for node in mask.boundary_nodes() {
            let exposed = (0..2).any(|axis| {
                [false, true]
                    .iter()
                    .any(|&fwd| mask.inside_neighbor(node, axis, fwd).is_none())
            });
            assert!(exposed);
        }
    }

    #[test]
    fn rasterization_is_deterministic() {
        let shape = ShapeDescriptor::Cusp {
            alpha: 2.0,
            length: 1.0,
        }
        .difference(ShapeDescriptor::ball(vec![0.8, 0.0], 0.1));
        let a = rasterize_fitted(&shape, 2, 1.0 / 40.0).unwrap();
        let b = rasterize_fitted(&shape, 2, 1.0 / 40.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn volume_estimate_converges_on_boxes() {
        for dim in [2, 3] {
            let hs = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
            let errs: Vec<f64> = hs
                .iter()
                .map(|&h| {
                    let m = rasterize_fitted(&ShapeDescriptor::unit_box(dim), dim, h).unwrap();
                    (m.volume_estimate() - 1.0).abs()
                })
                .collect();
            let slope = (errs[0] / errs[2]).ln() / (hs[0] / hs[2]).ln();
            assert!(slope >= 1.0, "dim {dim}: slope {slope}");
        }
    }

    #[test]
    fn interior_volume_converges_on_ball() {
        let shape = ShapeDescriptor::ball(vec![0.0, 0.0], 1.0);
        let err = |h: f64| {
            let m = rasterize_fitted(&shape, 2, h).unwrap();
            (m.interior_count() as f64 * h * h - std::f64::consts::PI).abs()
        };
        let coarse = err(1.0 / 8.0);
        let fine = err(1.0 / 64.0);
        assert!(fine < coarse / 4.0, "{coarse} -> {fine}");
        assert!(fine < 0.1);
    }

    #[test]
    fn inscribed_box_lies_in_interior() {
        let annulus =
            rasterize_fitted(&ShapeDescriptor::annulus(vec![0.0, 0.0], 0.5, 1.0), 2, 1.0 / 32.0)
                .unwrap();
        let (lo, hi) = annulus.inscribed_box().unwrap();
        assert!(hi[0] - lo[0] > 0.1);
        for node in annulus.inside_nodes() {
            let x = annulus.grid().coord(node);
            let strictly_in = x.iter().zip(lo.iter().zip(&hi)).all(|(c, (l, u))| c > l && c < u);
            if strictly_in {
                assert!(annulus.is_interior(node));
            }
        }
        let sq = unit_square(1.0 / 32.0);
        let (lo, hi) = sq.inscribed_box().unwrap();
        assert!((lo[0] - 1.0 / 32.0).abs() < 1e-14 && (hi[1] - 31.0 / 32.0).abs() < 1e-14);
    }

    #[test]
    fn shape_round_trips_through_json_and_toml() {
        let shape = ShapeDescriptor::unit_square()
            .difference(ShapeDescriptor::ball(vec![0.5, 0.5], 0.25))
            .scaled(2.0, vec![1.0, 0.0]);
        let json = serde_json::to_string(&shape).unwrap();
        assert_eq!(serde_json::from_str::<ShapeDescriptor>(&json).unwrap(), shape);
        #[derive(Serialize, Deserialize)]
        struct Wrap {
            shape: ShapeDescriptor,
        }
        let text = toml::to_string(&Wrap {
            shape: shape.clone(),
        })
        .unwrap();
        assert_eq!(toml::from_str::<Wrap>(&text).unwrap().shape, shape);
    }

    #[test]
    fn mask_csv_has_one_row_per_node() {
        let mask = unit_square(0.5);
        let mut buf = Vec::new();
        mask.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 9);
        assert!(text.lines().nth(5).unwrap().ends_with("interior"));
    }
}
