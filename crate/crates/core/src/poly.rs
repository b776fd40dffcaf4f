//! Polynomial model families, domain grids, design matrices and the fixed
//! (non-trainable) polynomial decoder.
//!
//! Two families are supported:
//!
//! * `Scalar1D { degree }`: `d(x) = θ0 + θ1 x + ... + θk x^k`, one range value per point.
//! * `QuadraticMotion2D`: a 12-coefficient quadratic flow field,
//!
//! ```text
//! | 1 0 x1 x2 0  0  x1² x1x2 x2² 0   0    0   |
//! | 0 1 0  0  x1 x2 0   0    0   x1² x1x2 x2² |
//! ```
//!
//! Domain coordinates are pixel-centre normalized to `(-1, 1)` per axis: sample
//! `i` of `n` sits at `(2i + 1) / n - 1`. Under that convention a box-filter
//! resampling of the grid keeps every sample at the same normalized position.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Scalar1D { degree: usize },
    QuadraticMotion2D,
}

/// Identifies a polynomial family together with its dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    kind: ModelKind,
}

impl ModelSpec {
    pub const DEFAULT_SCALAR_DEGREE: usize = 4;

    pub fn scalar(degree: usize) -> Self {
        Self {
            kind: ModelKind::Scalar1D { degree },
        }
    }

    pub fn quadratic_motion() -> Self {
        Self {
            kind: ModelKind::QuadraticMotion2D,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Domain dimension `D`.
    pub fn domain_dim(&self) -> usize {
        match self.kind {
            ModelKind::Scalar1D { .. } => 1,
            ModelKind::QuadraticMotion2D => 2,
        }
    }

    /// Range dimension `R`.
    pub fn range_dim(&self) -> usize {
        match self.kind {
            ModelKind::Scalar1D { .. } => 1,
            ModelKind::QuadraticMotion2D => 2,
        }
    }

    /// Coefficient count `M`.
    pub fn num_coeffs(&self) -> usize {
        match self.kind {
            ModelKind::Scalar1D { degree } => degree + 1,
            ModelKind::QuadraticMotion2D => 12,
        }
    }

    /// Total polynomial degree of each coefficient's monomial.
    pub fn coefficient_degrees(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Scalar1D { degree } => (0..=degree).collect(),
            ModelKind::QuadraticMotion2D => vec![0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2],
        }
    }

    /// Which range component each coefficient drives.
    pub fn coefficient_components(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Scalar1D { degree } => vec![0; degree + 1],
            ModelKind::QuadraticMotion2D => vec![0, 1, 0, 0, 1, 1, 0, 0, 0, 1, 1, 1],
        }
    }

    /// Writes the `R × M` block `M_i(x)` row-major into `out`.
    fn fill_block(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            ModelKind::Scalar1D { degree } => {
                let mut p = 1.0;
                for slot in out.iter_mut().take(degree + 1) {
                    *slot = p;
                    p *= x[0];
                }
            }
            ModelKind::QuadraticMotion2D => {
                let (x1, x2) = (x[0], x[1]);
                let monos = [x1 * x1, x1 * x2, x2 * x2];
                out.fill(0.0);
                let (u, v) = out.split_at_mut(12);
                u[0] = 1.0;
                u[2] = x1;
                u[3] = x2;
                u[6..9].copy_from_slice(&monos);
                v[1] = 1.0;
                v[4] = x1;
                v[5] = x2;
                v[9..12].copy_from_slice(&monos);
            }
        }
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::scalar(Self::DEFAULT_SCALAR_DEGREE)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModelKind::Scalar1D { degree } if degree == Self::DEFAULT_SCALAR_DEGREE => {
                write!(f, "scalar")
            }
            ModelKind::Scalar1D { degree } => write!(f, "scalar{degree}"),
            ModelKind::QuadraticMotion2D => write!(f, "quadratic"),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    /// Accepts `scalar`, `scalar<degree>` and `quadratic` (alias `motion`).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(Self::default()),
            "quadratic" | "motion" | "vector" => Ok(Self::quadratic_motion()),
            _ => s
                .strip_prefix("scalar")
                .and_then(|d| d.parse().ok())
                .map(Self::scalar)
                .ok_or_else(|| invalid(format!("unknown model spec '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridShape {
    Line(usize),
    /// Row-major lattice, `height` rows of `width` samples.
    Lattice { height: usize, width: usize },
    /// Arbitrary points with no lattice structure.
    Scattered { dim: usize, count: usize },
}

impl GridShape {
    pub fn num_points(&self) -> usize {
        match *self {
            GridShape::Line(n) => n,
            GridShape::Lattice { height, width } => height * width,
            GridShape::Scattered { count, .. } => count,
        }
    }

    /// Spatial extent as `(height, width)`; a line is a single row.
    pub fn hw(&self) -> (usize, usize) {
        match *self {
            GridShape::Line(n) => (1, n),
            GridShape::Lattice { height, width } => (height, width),
            GridShape::Scattered { count, .. } => (1, count),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GridShape::Line(_) => 1,
            GridShape::Lattice { .. } => 2,
            GridShape::Scattered { dim, .. } => *dim,
        }
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridShape::Line(n) => write!(f, "{n}"),
            GridShape::Lattice { height, width } => write!(f, "{height}x{width}"),
            GridShape::Scattered { dim, count } => write!(f, "{count} points in R^{dim}"),
        }
    }
}

impl FromStr for GridShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("bad grid shape '{s}' (want N or HxW)"));
        match s.split_once('x') {
            Some((h, w)) => Ok(GridShape::Lattice {
                height: h.trim().parse().map_err(|_| bad())?,
                width: w.trim().parse().map_err(|_| bad())?,
            }),
            None => Ok(GridShape::Line(s.trim().parse().map_err(|_| bad())?)),
        }
    }
}

/// Normalized coordinate of sample `i` out of `n`.
pub fn normalized_coord(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / n as f64 - 1.0
}

/// Ordered domain points; lattices enumerate rows top to bottom, `x1` along
/// columns and `x2` along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainGrid {
    shape: GridShape,
    points: Vec<f64>,
}

impl DomainGrid {
    pub fn new(shape: GridShape) -> Result<Self> {
        let points = match shape {
            GridShape::Line(n) => {
                if n == 0 {
                    return Err(invalid("empty grid"));
                }
                (0..n).map(|i| normalized_coord(i, n)).collect()
            }
            GridShape::Scattered { .. } => {
                return Err(invalid("scattered grids are built with DomainGrid::from_points"))
            }
            GridShape::Lattice { height, width } => {
                if height == 0 || width == 0 {
                    return Err(invalid("empty grid"));
                }
                let mut pts = Vec::with_capacity(2 * height * width);
                for r in 0..height {
                    let x2 = normalized_coord(r, height);
                    for c in 0..width {
                        pts.push(normalized_coord(c, width));
                        pts.push(x2);
                    }
                }
                pts
            }
        };
        Ok(Self { shape, points })
    }

    pub fn line(n: usize) -> Result<Self> {
        Self::new(GridShape::Line(n))
    }

    pub fn lattice(height: usize, width: usize) -> Result<Self> {
        Self::new(GridShape::Lattice { height, width })
    }

    /// Grid from explicit points, `dim` coordinates each.
    pub fn from_points(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(invalid("point list does not match dimension"));
        }
        let count = points.len() / dim;
        Ok(Self {
            shape: GridShape::Scattered { dim, count },
            points,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim())
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.dim() != spec.domain_dim() {
            return Err(invalid(format!(
                "grid dimension {} does not match model domain dimension {}",
                self.dim(),
                spec.domain_dim()
            )));
        }
        Ok(())
    }
}

/// The polynomial coefficients `θ`; ordering is fixed per [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoefficientVector(pub Vec<f64>);

impl CoefficientVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self(vec![0.0; spec.num_coeffs()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.len() != spec.num_coeffs() {
            return Err(invalid(format!(
                "coefficient vector has length {}, model expects {}",
                self.len(),
                spec.num_coeffs()
            )));
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("coefficient vector has non-finite entries"));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for CoefficientVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// `N` range vectors of dimension `R`, point-interleaved (`u0 v0 u1 v1 ...`).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeField {
    range_dim: usize,
    values: Vec<f64>,
}

impl RangeField {
    pub fn new(range_dim: usize, values: Vec<f64>) -> Result<Self> {
        if range_dim == 0 || values.len() % range_dim != 0 {
            return Err(invalid("field length is not a multiple of the range dimension"));
        }
        Ok(Self { range_dim, values })
    }

    pub fn zeros(range_dim: usize, num_points: usize) -> Self {
        Self {
            range_dim,
            values: vec![0.0; range_dim * num_points],
        }
    }

    pub fn range_dim(&self) -> usize {
        self.range_dim
    }

    pub fn num_points(&self) -> usize {
        self.values.len() / self.range_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.range_dim..(i + 1) * self.range_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of `self[i] - other[i]` for every point.
    pub fn point_distances(&self, other: &RangeField) -> Vec<f64> {
        self.values
            .chunks_exact(self.range_dim)
            .zip(other.values.chunks_exact(other.range_dim))
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Mean of squared componentwise differences.
    pub fn mse(&self, other: &RangeField) -> f64 {
        let n = self.values.len().max(1) as f64;
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }

    /// Mean per-point Euclidean distance.
    pub fn mean_euclidean(&self, other: &RangeField) -> f64 {
        let d = self.point_distances(other);
        d.iter().sum::<f64>() / d.len().max(1) as f64
    }

    /// Channel-planar copy (`u0 u1 ... v0 v1 ...`), the layout networks consume.
    pub fn to_planar(&self) -> Vec<f64> {
        let n = self.num_points();
        let mut out = vec![0.0; self.values.len()];
        for (i, p) in self.values.chunks_exact(self.range_dim).enumerate() {
            for (r, &v) in p.iter().enumerate() {
                out[r * n + i] = v;
            }
        }
        out
    }

    pub fn from_planar(range_dim: usize, planar: &[f64]) -> Result<Self> {
        if range_dim == 0 || planar.len() % range_dim != 0 {
            return Err(invalid("planar length is not a multiple of the range dimension"));
        }
        let n = planar.len() / range_dim;
        let mut values = vec![0.0; planar.len()];
        for r in 0..range_dim {
            for i in 0..n {
                values[i * range_dim + r] = planar[r * n + i];
            }
        }
        Ok(Self { range_dim, values })
    }
}

/// Stacked `(R·N) × M` design matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    range_dim: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn range_dim(&self) -> usize {
        self.range_dim
    }

    pub fn num_points(&self) -> usize {
        self.rows / self.range_dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The `R × M` block of point `i`.
    pub fn block(&self, i: usize) -> &[f64] {
        let len = self.range_dim * self.cols;
        &self.data[i * len..(i + 1) * len]
    }

    /// `M θ`, interleaved per point.
    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Mᵀ g`.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &gi) in self.data.chunks_exact(self.cols).zip(g) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * gi;
            }
        }
        out
    }

    /// Sub-matrix made of the blocks of the given points.
    pub fn select_points(&self, points: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(points.len() * self.range_dim * self.cols);
        for &i in points {
            data.extend_from_slice(self.block(i));
        }
        DesignMatrix {
            rows: points.len() * self.range_dim,
            cols: self.cols,
            range_dim: self.range_dim,
            data,
        }
    }
}

/// Returns the `R × M` block `M_i(x)` (row-major).
pub fn design_block(spec: &ModelSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.domain_dim() {
        return Err(invalid(format!(
            "point has dimension {}, model expects {}",
            x.len(),
            spec.domain_dim()
        )));
    }
    let mut out = vec![0.0; spec.range_dim() * spec.num_coeffs()];
    spec.fill_block(x, &mut out);
    Ok(out)
}

pub fn build_design_matrix(spec: &ModelSpec, grid: &DomainGrid) -> Result<DesignMatrix> {
    grid.check_spec(spec)?;
    let (r, m) = (spec.range_dim(), spec.num_coeffs());
    let mut data = vec![0.0; grid.len() * r * m];
    for (x, block) in grid.points().zip(data.chunks_exact_mut(r * m)) {
        spec.fill_block(x, block);
    }
    Ok(DesignMatrix {
        rows: grid.len() * r,
        cols: m,
        range_dim: r,
        data,
    })
}

/// `M(x) θ` on the given grid.
pub fn decode(spec: &ModelSpec, theta: &CoefficientVector, grid: &DomainGrid) -> Result<RangeField> {
    FixedDecoder::new(*spec, grid.clone())?.decode(theta)
}

/// `M(x)ᵀ g`: the backward map of [`decode`].
pub fn decode_adjoint(spec: &ModelSpec, grid: &DomainGrid, upstream: &[f64]) -> Result<Vec<f64>> {
    FixedDecoder::new(*spec, grid.clone())?.adjoint(upstream)
}

/// Decoder bound to one model family and one grid. It owns no trainable state.
#[derive(Debug, Clone)]
pub struct FixedDecoder {
    spec: ModelSpec,
    grid: DomainGrid,
    design: DesignMatrix,
}

impl FixedDecoder {
    pub fn new(spec: ModelSpec, grid: DomainGrid) -> Result<Self> {
        let design = build_design_matrix(&spec, &grid)?;
        Ok(Self { spec, grid, design })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn trainable_parameter_count(&self) -> usize {
        0
    }

    pub fn decode(&self, theta: &CoefficientVector) -> Result<RangeField> {
        theta.check(&self.spec)?;
        RangeField::new(self.spec.range_dim(), self.design.apply(theta.as_slice()))
    }

    pub fn adjoint(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.design.rows() {
            return Err(invalid(format!(
                "upstream gradient has length {}, expected {}",
                upstream.len(),
                self.design.rows()
            )));
        }
        Ok(self.design.apply_transpose(upstream))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_block_matches_motion_model_layout() {
        let spec = ModelSpec::quadratic_motion();
        let b = design_block(&spec, &[1.0, 2.0]).unwrap();
        assert_eq!(
            &b[..12],
            &[1., 0., 1., 2., 0., 0., 1., 2., 4., 0., 0., 0.]
        );
        assert_eq!(
            &b[12..],
            &[0., 1., 0., 0., 1., 2., 0., 0., 0., 1., 2., 4.]
        );
    }

    #[test]
    fn quadratic_block_at_origin_keeps_only_constants() {
        let b = design_block(&ModelSpec::quadratic_motion(), &[0.0, 0.0]).unwrap();
        let mut expect = vec![0.0; 24];
        expect[0] = 1.0;
        expect[13] = 1.0;
        assert_eq!(b, expect);
    }

    #[test]
    fn scalar_block_is_monomial_basis() {
        let b = design_block(&ModelSpec::scalar(4), &[2.0]).unwrap();
        assert_eq!(b, vec![1., 2., 4., 8., 16.]);
    }

    #[test]
    fn design_block_rejects_wrong_dimension() {
        assert!(matches!(
            design_block(&ModelSpec::scalar(4), &[1.0, 2.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(design_block(&ModelSpec::quadratic_motion(), &[1.0]).is_err());
    }

    #[test]
    fn single_point_at_zero() {
        let grid = DomainGrid::from_points(1, vec![0.0]).unwrap();
        let m = build_design_matrix(&ModelSpec::scalar(4), &grid).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 5));
        assert_eq!(m.data(), &[1., 0., 0., 0., 0.]);
    }

    #[test]
    fn lattice_blocks_match_pointwise_blocks() {
        let spec = ModelSpec::quadratic_motion();
        let grid = DomainGrid::lattice(2, 2).unwrap();
        let m = build_design_matrix(&spec, &grid).unwrap();
        assert_eq!((m.rows(), m.cols()), (8, 12));
        for i in 0..4 {
            assert_eq!(m.block(i), design_block(&spec, grid.point(i)).unwrap().as_slice());
        }
        // row-major, x1 along columns
        assert_eq!(grid.point(1), &[0.5, -0.5]);
        assert_eq!(grid.point(2), &[-0.5, 0.5]);
    }

    #[test]
    fn shape_contract() {
        for (spec, grid) in [
            (ModelSpec::scalar(4), DomainGrid::line(64).unwrap()),
            (ModelSpec::scalar(2), DomainGrid::line(7).unwrap()),
            (ModelSpec::quadratic_motion(), DomainGrid::lattice(3, 5).unwrap()),
        ] {
            let m = build_design_matrix(&spec, &grid).unwrap();
            assert_eq!(m.cols(), spec.num_coeffs());
            assert_eq!(m.rows(), spec.range_dim() * grid.len());
        }
    }

    #[test]
    fn decode_zero_and_constant() {
        let spec = ModelSpec::scalar(4);
        let grid = DomainGrid::line(16).unwrap();
        let z = decode(&spec, &CoefficientVector::zeros(&spec), &grid).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let c = decode(&spec, &vec![3.5, 0., 0., 0., 0.].into(), &grid).unwrap();
        assert!(c.values().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let spec = ModelSpec::scalar(4);
        let grid = DomainGrid::line(8).unwrap();
        assert!(decode(&spec, &vec![1.0; 4].into(), &grid).is_err());
        assert!(decode_adjoint(&spec, &grid, &[0.0; 7]).is_err());
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let spec = ModelSpec::quadratic_motion();
        let grid = DomainGrid::lattice(3, 3).unwrap();
        assert_eq!(decode_adjoint(&spec, &grid, &[0.0; 18]).unwrap(), vec![0.0; 12]);
    }

    #[test]
    fn planar_round_trip() {
        let f = RangeField::new(2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(f.to_planar(), vec![1., 3., 5., 2., 4., 6.]);
        assert_eq!(RangeField::from_planar(2, &f.to_planar()).unwrap(), f);
    }

    #[test]
    fn spec_and_shape_parse() {
        assert_eq!("scalar".parse::<ModelSpec>().unwrap(), ModelSpec::scalar(4));
        assert_eq!("scalar3".parse::<ModelSpec>().unwrap(), ModelSpec::scalar(3));
        assert_eq!("quadratic".parse::<ModelSpec>().unwrap(), ModelSpec::quadratic_motion());
        assert!("cubic".parse::<ModelSpec>().is_err());
        assert_eq!(
            "32x16".parse::<GridShape>().unwrap(),
            GridShape::Lattice { height: 32, width: 16 }
        );
        assert_eq!("64".parse::<GridShape>().unwrap(), GridShape::Line(64));
        for s in [ModelSpec::scalar(4), ModelSpec::scalar(6), ModelSpec::quadratic_motion()] {
            assert_eq!(s.to_string().parse::<ModelSpec>().unwrap(), s);
        }
    }
}
