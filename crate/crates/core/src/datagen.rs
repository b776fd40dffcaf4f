//! Online generator of `(corrupted, clean)` polynomial training pairs.
//!
//! A pair is built from a random in-model polynomial (the clean target). The
//! input copies it, overwrites a spatially coherent region with a second,
//! independently drawn polynomial, and then adds Gaussian noise everywhere.
//! The outlier region is a contiguous interval on a line and the filled
//! interior of a random convex polygon on a lattice.

use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::poly::{CoefficientVector, DomainGrid, FixedDecoder, GridShape, ModelKind, ModelSpec, RangeField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeName {
    Data1,
    Data2,
    /// Each pair is drawn from `Data1` or `Data2` with probability ½.
    Mixed,
    /// Test-time generator with a fixed outlier ratio.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenScheme {
    pub name: SchemeName,
    pub max_outlier_ratio: f64,
    pub noise_sigma: f64,
    pub coefficient_scale: f64,
    /// When set, every pair uses exactly this outlier ratio.
    pub fixed_outlier_ratio: Option<f64>,
}

/// Coefficient scale of the `(Data1, Data2)` schemes for a model family.
fn family_scales(spec: &ModelSpec) -> (f64, f64) {
    match spec.kind() {
        ModelKind::Scalar1D { .. } => (5.0, 10.0),
        ModelKind::QuadraticMotion2D => (2.0, 4.0),
    }
}

impl GenScheme {
    /// Mild contamination: smaller functions, at most 10% outliers, noise 0.1.
    pub fn data1(spec: &ModelSpec) -> Self {
        Self {
            name: SchemeName::Data1,
            max_outlier_ratio: 0.1,
            noise_sigma: 0.1,
            coefficient_scale: family_scales(spec).0,
            fixed_outlier_ratio: None,
        }
    }

    /// Heavy contamination: up to 30% outliers, noise 0.5.
    pub fn data2(spec: &ModelSpec) -> Self {
        Self {
            name: SchemeName::Data2,
            max_outlier_ratio: 0.3,
            noise_sigma: 0.5,
            coefficient_scale: family_scales(spec).1,
            fixed_outlier_ratio: None,
        }
    }

    pub fn mixed(spec: &ModelSpec) -> Self {
        Self {
            name: SchemeName::Mixed,
            ..Self::data2(spec)
        }
    }

    /// Evaluation data: `Data2` magnitudes, a fixed outlier ratio and the given noise.
    pub fn evaluation(spec: &ModelSpec, outlier_ratio: f64, noise_sigma: f64) -> Self {
        Self {
            name: SchemeName::Eval,
            max_outlier_ratio: outlier_ratio,
            noise_sigma,
            coefficient_scale: family_scales(spec).1,
            fixed_outlier_ratio: Some(outlier_ratio),
        }
    }

    /// Scale that brings inputs of this family to O(1).
    pub fn input_scale(spec: &ModelSpec) -> f64 {
        family_scales(spec).1
    }

    pub fn validate(&self) -> Result<()> {
        let ratio_ok = |r: f64| (0.0..1.0).contains(&r);
        if !ratio_ok(self.max_outlier_ratio) || !self.fixed_outlier_ratio.is_none_or(ratio_ok) {
            return Err(invalid("outlier ratio must lie in [0, 1)"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.coefficient_scale >= 0.0) {
            return Err(invalid("noise and coefficient scale must be non-negative"));
        }
        Ok(())
    }
}

/// Per-coefficient uniform half-widths: `scale` for constant and linear
/// terms, halved for every further degree.
pub fn coefficient_scales(spec: &ModelSpec, scale: f64) -> Vec<f64> {
    spec.coefficient_degrees()
        .into_iter()
        .map(|k| scale * 0.5f64.powi(k.saturating_sub(1) as i32))
        .collect()
}

pub fn sample_coefficients<R: Rng + ?Sized>(
    spec: &ModelSpec,
    scheme: &GenScheme,
    rng: &mut R,
) -> CoefficientVector {
    coefficient_scales(spec, scheme.coefficient_scale)
        .into_iter()
        .map(|s| if s == 0.0 { 0.0 } else { rng.random_range(-s..=s) })
        .collect::<Vec<_>>()
        .into()
}

/// Random structured outlier support covering roughly `target_ratio` of the grid.
pub fn polygon_mask<R: Rng + ?Sized>(grid: &DomainGrid, target_ratio: f64, rng: &mut R) -> Vec<bool> {
    let n = grid.len();
    if target_ratio <= 0.0 {
        return vec![false; n];
    }
    match grid.shape() {
        GridShape::Line(_) => {
            let len = ((target_ratio * n as f64).round() as usize).min(n);
            let start = rng.random_range(0..=n - len);
            (0..n).map(|i| i >= start && i < start + len).collect()
        }
        GridShape::Lattice { height, width } => lattice_polygon_mask(height, width, target_ratio, rng),
        GridShape::Scattered { .. } => disc_mask(grid, target_ratio, rng),
    }
}

/// Nearest `ratio·N` points to a random centre.
fn disc_mask<R: Rng + ?Sized>(grid: &DomainGrid, ratio: f64, rng: &mut R) -> Vec<bool> {
    let n = grid.len();
    let k = ((ratio * n as f64).round() as usize).min(n);
    let centre = grid.point(rng.random_range(0..n)).to_vec();
    let mut order: Vec<(f64, usize)> = grid
        .points()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(&centre).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut mask = vec![false; n];
    for &(_, i) in order.iter().take(k) {
        mask[i] = true;
    }
    mask
}

const POLYGON_TOLERANCE: f64 = 0.05;
const POLYGON_ATTEMPTS: usize = 40;

fn lattice_polygon_mask<R: Rng + ?Sized>(height: usize, width: usize, target: f64, rng: &mut R) -> Vec<bool> {
    let n = height * width;
    let mut best: Option<(f64, Vec<bool>)> = None;
    for _ in 0..POLYGON_ATTEMPTS {
        let k = rng.random_range(3..=8usize);
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let mut pts: Vec<(f64, f64)> = (0..k)
            .map(|_| {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let r = rng.random_range(0.4..1.0);
                let stretch = rng.random_range(0.5..2.0);
                (r * a.cos() * stretch, r * a.sin() / stretch)
            })
            .collect();
        pts = convex_hull(pts);
        if pts.len() < 3 {
            continue;
        }
        // grow or shrink about the centre until the covered fraction fits
        let mut size = (target * n as f64).sqrt();
        for _ in 0..12 {
            let poly: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (cx + size * x, cy + size * y)).collect();
            let mask = largest_component(&rasterize(&poly, height, width), height, width);
            let frac = mask.iter().filter(|&&b| b).count() as f64 / n as f64;
            let err = (frac - target).abs();
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, mask));
            }
            if err <= POLYGON_TOLERANCE {
                return best.map(|(_, m)| m).unwrap_or_else(|| vec![false; n]);
            }
            size *= if frac > 0.0 { (target / frac).sqrt().clamp(0.5, 2.0) } else { 2.0 };
        }
    }
    best.map(|(_, m)| m).unwrap_or_else(|| vec![false; n])
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise hull by the monotone chain.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Pixel centres `(c + 0.5, r + 0.5)` inside a counter-clockwise convex polygon.
fn rasterize(poly: &[(f64, f64)], height: usize, width: usize) -> Vec<bool> {
    let mut mask = vec![false; height * width];
    for r in 0..height {
        for c in 0..width {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            mask[r * width + c] = (0..poly.len()).all(|i| cross(poly[i], poly[(i + 1) % poly.len()], p) >= 0.0);
        }
    }
    mask
}

/// 4-connected component labelling; returns the largest component.
pub fn connected_components(mask: &[bool], height: usize, width: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut comps = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < comp.len() {
            let i = comp[head];
            head += 1;
            let (r, c) = (i / width, i % width);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                }
            };
            if r > 0 {
                visit(i - width);
            }
            if r + 1 < height {
                visit(i + width);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < width {
                visit(i + 1);
            }
        }
        comps.push(comp);
    }
    comps
}

fn largest_component(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    if let Some(comp) = connected_components(mask, height, width)
        .into_iter()
        .max_by_key(|c| c.len())
    {
        for i in comp {
            out[i] = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: RangeField,
    pub target: RangeField,
    pub outlier_mask: Vec<bool>,
    pub theta_true: CoefficientVector,
    pub realized_outlier_ratio: f64,
}

/// Draws one pair on the decoder's grid.
pub fn generate_pair<R: Rng + ?Sized>(decoder: &FixedDecoder, scheme: &GenScheme, rng: &mut R) -> TrainingPair {
    let spec = decoder.spec();
    let scheme = match scheme.name {
        SchemeName::Mixed if rng.random_bool(0.5) => GenScheme::data1(spec),
        SchemeName::Mixed => GenScheme::data2(spec),
        _ => scheme.clone(),
    };
    let theta_true = sample_coefficients(spec, &scheme, rng);
    let target = decoder.decode(&theta_true).expect("sampled coefficients match the decoder");
    let ratio = match scheme.fixed_outlier_ratio {
        Some(r) => r,
        None if scheme.max_outlier_ratio > 0.0 => rng.random_range(0.0..=scheme.max_outlier_ratio),
        None => 0.0,
    };
    let outlier_mask = polygon_mask(decoder.grid(), ratio, rng);
    let mut input = target.clone();
    let rd = spec.range_dim();
    if outlier_mask.iter().any(|&b| b) {
        let theta_out = sample_coefficients(spec, &scheme, rng);
        let other = decoder.decode(&theta_out).expect("sampled coefficients match the decoder");
        for (i, _) in outlier_mask.iter().enumerate().filter(|(_, &b)| b) {
            input.values_mut()[i * rd..(i + 1) * rd].copy_from_slice(other.point(i));
        }
    }
    if scheme.noise_sigma > 0.0 {
        for v in input.values_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += scheme.noise_sigma * z;
        }
    }
    let realized_outlier_ratio = outlier_mask.iter().filter(|&&b| b).count() as f64 / outlier_mask.len() as f64;
    TrainingPair {
        input,
        target,
        outlier_mask,
        theta_true,
        realized_outlier_ratio,
    }
}

/// Deterministic seed for item `index` of stream `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded pair stream bound to one model family, grid and scheme.
pub struct PairGenerator {
    decoder: FixedDecoder,
    scheme: GenScheme,
    rng: ChaCha8Rng,
}

impl PairGenerator {
    pub fn new(spec: ModelSpec, grid: DomainGrid, scheme: GenScheme, seed: u64) -> Result<Self> {
        Self::with_stream(spec, grid, scheme, seed, 0)
    }

    /// Independent sub-stream `stream` of `seed`, for one generator per worker.
    pub fn with_stream(spec: ModelSpec, grid: DomainGrid, scheme: GenScheme, seed: u64, stream: u64) -> Result<Self> {
        scheme.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self {
            decoder: FixedDecoder::new(spec, grid)?,
            scheme,
            rng,
        })
    }

    pub fn decoder(&self) -> &FixedDecoder {
        &self.decoder
    }

    pub fn scheme(&self) -> &GenScheme {
        &self.scheme
    }

    pub fn next_pair(&mut self) -> TrainingPair {
        generate_pair(&self.decoder, &self.scheme, &mut self.rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

impl Iterator for PairGenerator {
    type Item = TrainingPair;

    fn next(&mut self) -> Option<TrainingPair> {
        Some(self.next_pair())
    }
}

const DUMP_MAGIC: &[u8; 4] = b"PRGN";
const DUMP_VERSION: u32 = 1;

/// Sample width of a pair dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(invalid(format!("unknown precision '{s}' (f32 or f64)"))),
        }
    }
}

/// Header shared by every pair in a dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpHeader {
    pub spec: ModelSpec,
    pub grid: GridShape,
    pub precision: Precision,
    pub count: usize,
}

fn spec_code(spec: &ModelSpec) -> (u32, u32) {
    match spec.kind() {
        ModelKind::Scalar1D { degree } => (0, degree as u32),
        ModelKind::QuadraticMotion2D => (1, 0),
    }
}

/// Writes pairs as: magic `PRGN`, then u32 fields version, spec id, degree,
/// H, W, R, M, precision bytes, count; then per pair `θ_true[M]`,
/// `input[R·N]`, `target[R·N]`, `mask[N]` (as 0/1), all little-endian floats.
pub fn write_pairs<W: Write>(
    mut w: W,
    spec: &ModelSpec,
    grid: &DomainGrid,
    precision: Precision,
    pairs: &[TrainingPair],
) -> Result<()> {
    let (h, wd) = match grid.shape() {
        GridShape::Line(n) => (1, n),
        GridShape::Lattice { height, width } => (height, width),
        GridShape::Scattered { .. } => return Err(invalid("only line and lattice grids can be dumped")),
    };
    let (id, degree) = spec_code(spec);
    let bytes = match precision {
        Precision::F32 => 4u32,
        Precision::F64 => 8,
    };
    w.write_all(DUMP_MAGIC)?;
    for v in [
        DUMP_VERSION,
        id,
        degree,
        h as u32,
        wd as u32,
        spec.range_dim() as u32,
        spec.num_coeffs() as u32,
        bytes,
        pairs.len() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut put = |vals: &mut dyn Iterator<Item = f64>| -> Result<()> {
        for v in vals {
            match precision {
                Precision::F32 => w.write_all(&(v as f32).to_le_bytes())?,
                Precision::F64 => w.write_all(&v.to_le_bytes())?,
            }
        }
        Ok(())
    };
    for p in pairs {
        put(&mut p.theta_true.as_slice().iter().copied())?;
        put(&mut p.input.values().iter().copied())?;
        put(&mut p.target.values().iter().copied())?;
        put(&mut p.outlier_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }))?;
    }
    Ok(())
}

pub fn read_pairs<R: Read>(mut r: R) -> Result<(DumpHeader, Vec<TrainingPair>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated pair dump".into()))?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Format("not a pair dump (bad magic)".into()));
    }
    let mut fields = [0u32; 9];
    for f in fields.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated pair dump header".into()))?;
        *f = u32::from_le_bytes(b);
    }
    let [version, id, degree, h, w, rd, m, bytes, count] = fields.map(|v| v as usize);
    if version != DUMP_VERSION as usize {
        return Err(Error::Format(format!("unsupported dump version {version}")));
    }
    let spec = match id {
        0 => ModelSpec::scalar(degree),
        1 => ModelSpec::quadratic_motion(),
        _ => return Err(Error::Format(format!("unknown spec id {id}"))),
    };
    if rd != spec.range_dim() || m != spec.num_coeffs() {
        return Err(Error::Format("header dimensions disagree with spec id".into()));
    }
    let grid = if spec.domain_dim() == 1 {
        if h != 1 {
            return Err(Error::Format("1D dump must have height 1".into()));
        }
        GridShape::Line(w)
    } else {
        GridShape::Lattice { height: h, width: w }
    };
    let precision = match bytes {
        4 => Precision::F32,
        8 => Precision::F64,
        _ => return Err(Error::Format(format!("unsupported sample width {bytes}"))),
    };
    let n = h * w;
    let mut take = |len: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; len * bytes];
        r.read_exact(&mut buf).map_err(|_| Error::Format("truncated pair dump payload".into()))?;
        Ok(match precision {
            Precision::F32 => buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Precision::F64 => buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    };
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let theta_true = take(m)?.into();
        let input = RangeField::new(rd, take(rd * n)?)?;
        let target = RangeField::new(rd, take(rd * n)?)?;
        let outlier_mask: Vec<bool> = take(n)?.into_iter().map(|v| v != 0.0).collect();
        let realized_outlier_ratio = outlier_mask.iter().filter(|&&b| b).count() as f64 / n as f64;
        pairs.push(TrainingPair {
            input,
            target,
            outlier_mask,
            theta_true,
            realized_outlier_ratio,
        });
    }
    Ok((
        DumpHeader {
            spec,
            grid,
            precision,
            count,
        },
        pairs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_scale_gives_zero_coefficients() {
        let spec = ModelSpec::scalar(4);
        let scheme = GenScheme {
            coefficient_scale: 0.0,
            ..GenScheme::data1(&spec)
        };
        assert_eq!(sample_coefficients(&spec, &scheme, &mut rng(1)).as_slice(), &[0.0; 5]);
    }

    #[test]
    fn per_degree_scales_decay() {
        assert_eq!(
            coefficient_scales(&ModelSpec::scalar(4), 8.0),
            vec![8.0, 8.0, 4.0, 2.0, 1.0]
        );
        let q = coefficient_scales(&ModelSpec::quadratic_motion(), 2.0);
        assert_eq!(&q[..6], &[2.0; 6]);
        assert_eq!(&q[6..], &[1.0; 6]);
    }

    #[test]
    fn zero_ratio_mask_is_empty() {
        let grid = DomainGrid::lattice(16, 16).unwrap();
        assert!(polygon_mask(&grid, 0.0, &mut rng(3)).iter().all(|&b| !b));
        let line = DomainGrid::line(64).unwrap();
        assert!(polygon_mask(&line, 0.0, &mut rng(3)).iter().all(|&b| !b));
    }

    #[test]
    fn line_mask_is_one_interval_of_exact_length() {
        let grid = DomainGrid::line(64).unwrap();
        let mut r = rng(5);
        for _ in 0..100 {
            let m = polygon_mask(&grid, 0.3, &mut r);
            let idx: Vec<usize> = (0..64).filter(|&i| m[i]).collect();
            assert_eq!(idx.len(), 19);
            assert_eq!(idx.last().unwrap() - idx[0] + 1, idx.len());
        }
    }

    #[test]
    fn convex_hull_drops_interior_points() {
        let hull = convex_hull(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)]);
        assert_eq!(hull.len(), 4);
        assert!(!hull.contains(&(0.5, 0.5)));
    }

    #[test]
    fn noise_free_uncontaminated_pair_is_clean() {
        let spec = ModelSpec::scalar(4);
        let scheme = GenScheme {
            noise_sigma: 0.0,
            max_outlier_ratio: 0.0,
            ..GenScheme::data1(&spec)
        };
        let mut g = PairGenerator::new(spec, DomainGrid::line(64).unwrap(), scheme, 9).unwrap();
        for _ in 0..10 {
            let p = g.next_pair();
            assert_eq!(p.input, p.target);
            assert_eq!(p.realized_outlier_ratio, 0.0);
        }
    }

    #[test]
    fn scheme_validation() {
        let spec = ModelSpec::scalar(4);
        assert!(GenScheme::evaluation(&spec, 1.0, 0.1).validate().is_err());
        assert!(GenScheme {
            noise_sigma: -1.0,
            ..GenScheme::data1(&spec)
        }
        .validate()
        .is_err());
        assert!(GenScheme::mixed(&spec).validate().is_ok());
    }

    #[test]
    fn dump_rejects_bad_magic_and_truncation() {
        assert!(matches!(read_pairs(&b"XXXX\0\0\0\0"[..]), Err(Error::Format(_))));
        let spec = ModelSpec::scalar(4);
        let grid = DomainGrid::line(8).unwrap();
        let mut g = PairGenerator::new(spec, grid.clone(), GenScheme::data1(&spec), 1).unwrap();
        let pairs: Vec<_> = (0..2).map(|_| g.next_pair()).collect();
        let mut buf = Vec::new();
        write_pairs(&mut buf, &spec, &grid, Precision::F32, &pairs).unwrap();
        assert_eq!(buf.len(), 4 + 9 * 4 + 2 * 4 * (5 + 8 + 8 + 8));
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_pairs(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
