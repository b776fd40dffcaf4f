//! Dominant (camera) motion from optical flow and stabilization by
//! backwarping frames.
//!
//! Motion fields use the quadratic 12-coefficient model on pixel-centre
//! normalized coordinates; displacements stay in pixels of the image they were
//! measured on.

mod flo;
mod pnm;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

pub use flo::{read_flo, write_flo, FlowMap, FLO_TAG};
pub use pnm::{read_pnm, write_pnm, Image};

use crate::error::{invalid, Error, Result};
use crate::estimators::Regressor;
use crate::poly::{normalized_coord, CoefficientVector, DomainGrid, FixedDecoder, GridShape, ModelSpec, RangeField};

/// Indices of the coefficients that drive `u` (the rest drive `v`).
pub const U_COEFFS: [usize; 6] = [0, 2, 3, 6, 7, 8];
pub const V_COEFFS: [usize; 6] = [1, 4, 5, 9, 10, 11];

fn check_theta(theta: &CoefficientVector) -> Result<()> {
    theta.check(&ModelSpec::quadratic_motion())
}

/// Displacement `(u, v)` of the quadratic model at normalized `(x1, x2)`.
pub fn motion_at(theta: &[f64], x1: f64, x2: f64) -> (f64, f64) {
    let m = [x1 * x1, x1 * x2, x2 * x2];
    let u = theta[0] + theta[2] * x1 + theta[3] * x2 + theta[6] * m[0] + theta[7] * m[1] + theta[8] * m[2];
    let v = theta[1] + theta[4] * x1 + theta[5] * x2 + theta[9] * m[0] + theta[10] * m[1] + theta[11] * m[2];
    (u, v)
}

pub fn flow_to_field(flow: &FlowMap) -> RangeField {
    RangeField::new(2, flow.data.iter().map(|&v| v as f64).collect()).expect("flow data is interleaved pairs")
}

pub fn field_to_flow(field: &RangeField, width: usize, height: usize) -> Result<FlowMap> {
    FlowMap::new(width, height, field.values().iter().map(|&v| v as f32).collect())
}

/// Box-filter resampling of one row-major plane.
pub fn area_resample(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let weights = |n_in: usize, n_out: usize| -> Vec<Vec<(usize, f64)>> {
        let step = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|j| {
                let (lo, hi) = (j as f64 * step, (j + 1) as f64 * step);
                let mut taps = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < n_in {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((i, overlap / step));
                    }
                    i += 1;
                }
                taps
            })
            .collect()
    };
    let wx = weights(w, out_w);
    let wy = weights(h, out_h);
    let mut rows = vec![0.0; h * out_w];
    for y in 0..h {
        for (j, taps) in wx.iter().enumerate() {
            rows[y * out_w + j] = taps.iter().map(|&(i, a)| a * src[y * w + i]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (k, taps) in wy.iter().enumerate() {
        for j in 0..out_w {
            out[k * out_w + j] = taps.iter().map(|&(i, a)| a * rows[i * out_w + j]).sum();
        }
    }
    out
}

/// Downsamples a flow to `out_w × out_h`, converting displacements to pixels
/// of the smaller grid. Returns the field and the `(sx, sy)` resize factors.
pub fn resample_flow(flow: &FlowMap, out_w: usize, out_h: usize) -> (RangeField, (f64, f64)) {
    let (sx, sy) = (flow.width as f64 / out_w as f64, flow.height as f64 / out_h as f64);
    let n = flow.width * flow.height;
    let plane = |c: usize| -> Vec<f64> { (0..n).map(|i| flow.data[2 * i + c] as f64).collect() };
    let u = area_resample(&plane(0), flow.width, flow.height, out_w, out_h);
    let v = area_resample(&plane(1), flow.width, flow.height, out_w, out_h);
    let values = u.iter().zip(&v).flat_map(|(a, b)| [a / sx, b / sy]).collect();
    (RangeField::new(2, values).expect("pairs"), (sx, sy))
}

/// Undoes the displacement scaling of [`resample_flow`]: `u` coefficients
/// scale by `sx`, `v` coefficients by `sy`. Coordinates are normalized, so no
/// per-degree factor is involved.
pub fn rescale_theta(theta: &CoefficientVector, sx: f64, sy: f64) -> CoefficientVector {
    let mut t = theta.clone().into_vec();
    for i in U_COEFFS {
        t[i] *= sx;
    }
    for i in V_COEFFS {
        t[i] *= sy;
    }
    t.into()
}

#[derive(Debug, Clone)]
pub struct DominantMotion {
    pub theta: CoefficientVector,
    /// `decode(θ)` at full resolution.
    pub parametric: FlowMap,
    /// Per-pixel Euclidean distance between the input and `parametric`
    /// (computed from the stored `f32` values).
    pub residual: Vec<f32>,
}

impl DominantMotion {
    pub fn mean_residual(&self, mask: Option<&[bool]>, inside: bool) -> f64 {
        let vals: Vec<f64> = self
            .residual
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.is_none_or(|m| m[*i] == inside))
            .map(|(_, &r)| r as f64)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

pub fn fit_dominant_motion(flow: &FlowMap, method: &dyn Regressor) -> Result<DominantMotion> {
    let spec = ModelSpec::quadratic_motion();
    if method.spec() != spec {
        return Err(invalid(format!("{} does not regress quadratic motion", method.name())));
    }
    if !flow.is_finite() {
        return Err(invalid("flow contains non-finite values"));
    }
    let full = DomainGrid::lattice(flow.height, flow.width)?;
    let theta = match method.native_grid() {
        Some(GridShape::Lattice { height, width }) if (height, width) != (flow.height, flow.width) => {
            let (field, (sx, sy)) = resample_flow(flow, width, height);
            let small = DomainGrid::lattice(height, width)?;
            rescale_theta(&method.regress(&small, &field)?, sx, sy)
        }
        _ => method.regress(&full, &flow_to_field(flow))?,
    };
    let parametric = field_to_flow(&FixedDecoder::new(spec, full)?.decode(&theta)?, flow.width, flow.height)?;
    let residual = flow
        .data
        .chunks_exact(2)
        .zip(parametric.data.chunks_exact(2))
        .map(|(a, b)| {
            let du = a[0] as f64 - b[0] as f64;
            let dv = a[1] as f64 - b[1] as f64;
            (du * du + dv * dv).sqrt() as f32
        })
        .collect();
    Ok(DominantMotion {
        theta,
        parametric,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BorderPolicy {
    /// Out-of-frame samples become 0.
    Black,
    /// Out-of-frame samples repeat the nearest edge pixel.
    Clamp,
}

impl std::str::FromStr for BorderPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "black" => Ok(BorderPolicy::Black),
            "clamp" => Ok(BorderPolicy::Clamp),
            _ => Err(invalid(format!("unknown border policy '{s}'"))),
        }
    }
}

impl std::fmt::Display for BorderPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BorderPolicy::Black => "black",
            BorderPolicy::Clamp => "clamp",
        })
    }
}

/// Bilinear sample at pixel coordinates, clamping to the edge.
fn sample_bilinear(img: &Image, x: f64, y: f64, c: usize) -> f64 {
    let xc = x.clamp(0.0, (img.width - 1) as f64);
    let yc = y.clamp(0.0, (img.height - 1) as f64);
    let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
    let p = |x, y| img.get(x, y, c) as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// `out(x) = in(x + f_θ(x))` with bilinear interpolation.
pub fn warp_backward(image: &Image, theta: &CoefficientVector, border: BorderPolicy) -> Result<Image> {
    check_theta(theta)?;
    let (w, h) = (image.width, image.height);
    let t = theta.as_slice();
    let eps = 1e-9;
    let mut out = Image::filled(w, h, image.channels, 0);
    for py in 0..h {
        let x2 = normalized_coord(py, h);
        for px in 0..w {
            let (u, v) = motion_at(t, normalized_coord(px, w), x2);
            let (sx, sy) = (px as f64 + u, py as f64 + v);
            let outside = sx < -eps || sy < -eps || sx > (w - 1) as f64 + eps || sy > (h - 1) as f64 + eps;
            if outside && border == BorderPolicy::Black {
                continue;
            }
            for c in 0..image.channels {
                out.data[(py * w + px) * image.channels + c] = sample_bilinear(image, sx, sy, c).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationParams {
    /// Odd moving-average window over the accumulated motion trajectory.
    /// A window of 1 keeps no camera motion: every frame is locked to frame 0.
    pub smoothing_window: usize,
    pub border_policy: BorderPolicy,
}

impl Default for StabilizationParams {
    fn default() -> Self {
        Self {
            smoothing_window: 1,
            border_policy: BorderPolicy::Black,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stabilized {
    pub frames: Vec<Image>,
    /// Raw motion between frame `t` and `t + 1`.
    pub thetas: Vec<CoefficientVector>,
    /// Correction applied to each frame.
    pub corrections: Vec<CoefficientVector>,
}

/// Corrections `T_t − S_t` for an accumulated trajectory `T` (`T_0 = 0`).
pub fn trajectory_corrections(thetas: &[CoefficientVector], window: usize) -> Vec<CoefficientVector> {
    let m = 12;
    let mut traj = vec![vec![0.0; m]];
    for th in thetas {
        let next: Vec<f64> = traj.last().unwrap().iter().zip(th.as_slice()).map(|(a, b)| a + b).collect();
        traj.push(next);
    }
    let n = traj.len();
    let half = window / 2;
    (0..n)
        .map(|t| {
            if window <= 1 {
                return traj[t].clone().into();
            }
            let (lo, hi) = (t.saturating_sub(half), (t + half).min(n - 1));
            let k = (hi - lo + 1) as f64;
            (0..m)
                .map(|j| traj[t][j] - (lo..=hi).map(|s| traj[s][j]).sum::<f64>() / k)
                .collect::<Vec<_>>()
                .into()
        })
        .collect()
}

pub fn stabilize_sequence(
    frames: &[Image],
    flows: &[FlowMap],
    method: &dyn Regressor,
    params: &StabilizationParams,
) -> Result<Stabilized> {
    if params.smoothing_window % 2 == 0 {
        return Err(invalid("smoothing window must be odd"));
    }
    if frames.is_empty() {
        return Err(invalid("no frames to stabilize"));
    }
    if flows.len() + 1 != frames.len() {
        return Err(invalid(format!(
            "{} frames need {} flows, got {}",
            frames.len(),
            frames.len() - 1,
            flows.len()
        )));
    }
    let thetas = flows
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            fit_dominant_motion(f, method)
                .map(|d| d.theta)
                .map_err(|e| Error::EstimationFailed(format!("frame {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let corrections = trajectory_corrections(&thetas, params.smoothing_window);
    let frames = frames
        .iter()
        .zip(&corrections)
        .map(|(img, c)| warp_backward(img, c, params.border_policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(Stabilized {
        frames,
        thetas,
        corrections,
    })
}

/// `frame_index,c0..c11`, one row per consecutive frame pair.
pub fn theta_timeline_csv(thetas: &[CoefficientVector]) -> String {
    let mut s = String::from("frame_index");
    for j in 0..12 {
        let _ = write!(s, ",c{j}");
    }
    s.push('\n');
    for (i, th) in thetas.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in th.as_slice() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn write_theta_timeline(thetas: &[CoefficientVector], path: &Path) -> Result<()> {
    std::fs::write(path, theta_timeline_csv(thetas))?;
    Ok(())
}
