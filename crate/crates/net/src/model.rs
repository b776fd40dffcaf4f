//! Encoders (stacked hourglass and the contractive baseline) bound to the
//! fixed polynomial decoder.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use polyreg_autodiff::{BatchStats, Graph, ParamStore, Tensor, Var};
use polyreg_core::datagen::GenScheme;
use polyreg_core::poly::DesignMatrix;
use polyreg_core::{CoefficientVector, DomainGrid, FixedDecoder, GridShape, ModelSpec, RangeField, Regressor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config, Error, Result};
use crate::manifest::{format_kv, read_kv, write_kv};

/// Running-statistics momentum: `running = 0.9·running + 0.1·batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Stacked hourglass modules with intermediate heads.
    Full,
    /// Plain contractive conv/pool blocks, single head.
    Half,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Full => "full",
            Arch::Half => "half",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Arch::Full),
            "half" => Ok(Arch::Half),
            _ => Err(config(format!("unknown architecture '{s}' (full or half)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub spec: ModelSpec,
    pub grid: GridShape,
    pub arch: Arch,
    pub channels: usize,
    /// Hourglass modules (ignored by `Half`).
    pub stacks: usize,
    /// Pool/upsample stages per hourglass, or pooling blocks for `Half`.
    pub levels: usize,
    /// Depth after the 1×1 reduction feeding each fully connected head.
    pub head_planes: usize,
    /// Inputs are divided by this, coefficients multiplied back.
    pub input_scale: f64,
}

impl EncoderConfig {
    pub fn full(spec: ModelSpec, grid: GridShape) -> Self {
        let one_d = spec.domain_dim() == 1;
        Self {
            spec,
            grid,
            arch: Arch::Full,
            channels: if one_d { 32 } else { 64 },
            stacks: 2,
            levels: 3,
            head_planes: if one_d { 8 } else { 16 },
            input_scale: GenScheme::input_scale(&spec),
        }
    }

    /// Pools until the larger side is at most 4.
    pub fn half(spec: ModelSpec, grid: GridShape) -> Self {
        let (h, w) = grid.hw();
        let mut side = h.max(w);
        let mut levels = 0;
        while side > 4 && side % 2 == 0 {
            side /= 2;
            levels += 1;
        }
        Self {
            arch: Arch::Half,
            stacks: 0,
            levels,
            ..Self::full(spec, grid)
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.spec.domain_dim(), self.grid) {
            (1, GridShape::Line(_)) | (2, GridShape::Lattice { .. }) => {}
            _ => {
                return Err(config(format!(
                    "grid {} does not suit {} models",
                    self.grid, self.spec
                )))
            }
        }
        if self.channels == 0 || self.head_planes == 0 || !(self.input_scale > 0.0) {
            return Err(config("channels, head planes and input scale must be positive"));
        }
        if self.arch == Arch::Full && self.stacks == 0 {
            return Err(config("a full encoder needs at least one hourglass"));
        }
        let (ph, pw) = self.pool();
        let (h, w) = self.grid.hw();
        let (dh, dw) = (ph.pow(self.levels as u32), pw.pow(self.levels as u32));
        if h % dh != 0 || w % dw != 0 {
            return Err(config(format!(
                "grid {} is not divisible by {dh}x{dw} for {} pooling levels",
                self.grid, self.levels
            )));
        }
        Ok(())
    }

    fn kernel(&self) -> (usize, usize) {
        if self.spec.domain_dim() == 1 {
            (1, 3)
        } else {
            (3, 3)
        }
    }

    fn pool(&self) -> (usize, usize) {
        if self.spec.domain_dim() == 1 {
            (1, 2)
        } else {
            (2, 2)
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("spec", self.spec.to_string()),
            ("grid", self.grid.to_string()),
            ("arch", self.arch.to_string()),
            ("channels", self.channels.to_string()),
            ("stacks", self.stacks.to_string()),
            ("levels", self.levels.to_string()),
            ("head_planes", self.head_planes.to_string()),
            ("input_scale", self.input_scale.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| map.get(k).ok_or_else(|| config(format!("manifest lacks '{k}'")));
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| config(format!("bad value '{v}' for '{k}'")))
        }
        let cfg = Self {
            spec: get("spec")?.parse()?,
            grid: get("grid")?.parse()?,
            arch: get("arch")?.parse()?,
            channels: num("channels", get("channels")?)?,
            stacks: num("stacks", get("stacks")?)?,
            levels: num("levels", get("levels")?)?,
            head_planes: num("head_planes", get("head_planes")?)?,
            input_scale: num("input_scale", get("input_scale")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Hourglass {
    down: Vec<Conv>,
    skip: Vec<Conv>,
    norm: Vec<Bn>,
    mid: Conv,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    reduce: Conv,
    fc: Dense,
}

#[derive(Debug, Clone)]
enum Layout {
    Full {
        stem: (Conv, Bn),
        stacks: Vec<Hourglass>,
        intermediate: Vec<Head>,
        trunk: Vec<(Conv, Bn)>,
        head: Head,
    },
    Half {
        blocks: Vec<(Conv, Bn)>,
        head: Head,
    },
}

struct Init {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| dist.sample(&mut self.rng)).collect()).expect("sized")
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, (kh, kw): (usize, usize)) -> Result<Conv> {
        let w = self.normal(&[cout, cin, kh, kw], (2.0 / (cin * kh * kw) as f64).sqrt());
        Ok(Conv {
            w: self.store.add_param(&format!("{name}.weight"), w)?,
            b: self.store.add_param(&format!("{name}.bias"), Tensor::zeros(&[cout]))?,
        })
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<Bn> {
        Ok(Bn {
            gamma: self.store.add_param(&format!("{name}.gain"), Tensor::full(&[c], 1.0))?,
            beta: self.store.add_param(&format!("{name}.shift"), Tensor::zeros(&[c]))?,
            mean: self.store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c]))?,
            var: self.store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[c], 1.0))?,
        })
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<Dense> {
        let w = self.normal(&[outputs, inputs], (1.0 / inputs as f64).sqrt());
        Ok(Dense {
            w: self.store.add_param(&format!("{name}.weight"), w)?,
            b: self.store.add_param(&format!("{name}.bias"), Tensor::zeros(&[outputs]))?,
        })
    }

    fn head(&mut self, name: &str, cin: usize, cfg: &EncoderConfig, spatial: usize) -> Result<Head> {
        Ok(Head {
            reduce: self.conv(&format!("{name}.reduce"), cin, cfg.head_planes, (1, 1))?,
            fc: self.dense(&format!("{name}.fc"), cfg.head_planes * spatial, cfg.spec.num_coeffs())?,
        })
    }
}

/// Batch-norm statistics observed in a training-mode forward pass, to be
/// folded into the running buffers with [`Model::commit_stats`].
#[derive(Debug, Clone)]
pub struct PendingStats(Vec<(usize, usize, BatchStats)>);

/// Tape handles of one forward pass.
#[derive(Debug)]
pub struct Forward {
    /// `[batch, M]` coefficients per head in data units; the last is the
    /// main head, the others are the per-stack intermediate heads.
    pub heads: Vec<Var>,
    pub stats: PendingStats,
}

impl Forward {
    pub fn final_head(&self) -> Var {
        *self.heads.last().expect("at least one head")
    }
}

struct Pass<'a> {
    g: &'a mut Graph,
    store: &'a ParamStore,
    train: bool,
    leaves: HashMap<usize, Var>,
    stats: Vec<(usize, usize, BatchStats)>,
}

impl Pass<'_> {
    fn p(&mut self, slot: usize) -> Result<Var> {
        if let Some(&v) = self.leaves.get(&slot) {
            return Ok(v);
        }
        let v = self.g.param(self.store.value(slot).clone(), slot)?;
        self.leaves.insert(slot, v);
        Ok(v)
    }

    fn conv(&mut self, x: Var, c: Conv) -> Result<Var> {
        let (w, b) = (self.p(c.w)?, self.p(c.b)?);
        Ok(self.g.conv(x, w, b)?)
    }

    fn bn(&mut self, x: Var, n: Bn) -> Result<Var> {
        let (gamma, beta) = (self.p(n.gamma)?, self.p(n.beta)?);
        if self.train {
            let (y, stats) = self.g.batchnorm_train(x, gamma, beta)?;
            self.stats.push((n.mean, n.var, stats));
            Ok(y)
        } else {
            let (m, v) = (self.store.value(n.mean).data(), self.store.value(n.var).data());
            Ok(self.g.batchnorm_eval(x, gamma, beta, m, v)?)
        }
    }

    fn conv_bn_relu(&mut self, x: Var, (c, n): (Conv, Bn)) -> Result<Var> {
        let y = self.conv(x, c)?;
        let y = self.bn(y, n)?;
        Ok(self.g.relu(y)?)
    }

    fn head(&mut self, x: Var, h: Head, scale: f64) -> Result<Var> {
        let r = self.conv(x, h.reduce)?;
        let f = self.g.flatten(r)?;
        let (w, b) = (self.p(h.fc.w)?, self.p(h.fc.b)?);
        let theta = self.g.linear(f, w, b)?;
        Ok(self.g.scale(theta, scale)?)
    }

    fn hourglass(&mut self, mut x: Var, hg: &Hourglass, pool: (usize, usize)) -> Result<Var> {
        let mut skips = Vec::with_capacity(hg.down.len());
        for l in 0..hg.down.len() {
            let h = self.conv(x, hg.down[l])?;
            let h = self.g.relu(h)?;
            skips.push(self.conv(h, hg.skip[l])?);
            let p = self.g.maxpool(h, pool.0, pool.1)?;
            x = self.bn(p, hg.norm[l])?;
        }
        let m = self.conv(x, hg.mid)?;
        x = self.g.relu(m)?;
        for skip in skips.into_iter().rev() {
            let up = self.g.upsample(x, pool.0, pool.1)?;
            x = self.g.add(up, skip)?;
        }
        Ok(x)
    }
}

/// Decoder matrix with rows reordered to the channel-planar layout of the
/// network's output maps.
fn planar_design(design: &DesignMatrix) -> Vec<f64> {
    let (r, n, m) = (design.range_dim(), design.num_points(), design.cols());
    let mut out = vec![0.0; r * n * m];
    for i in 0..n {
        for c in 0..r {
            out[(c * n + i) * m..(c * n + i + 1) * m].copy_from_slice(design.row(i * r + c));
        }
    }
    out
}

/// Learnable encoder plus the fixed decoder of its grid.
#[derive(Debug, Clone)]
pub struct Model {
    name: String,
    config: EncoderConfig,
    store: ParamStore,
    layout: Layout,
    decoder: FixedDecoder,
    planar: Arc<Vec<f64>>,
}

impl Model {
    /// Fresh model with Kaiming fan-in initialisation from `seed`.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (h, w) = config.grid.hw();
        let (c, r) = (config.channels, config.spec.range_dim());
        let k = config.kernel();
        let (ph, pw) = config.pool();
        let layout = match config.arch {
            Arch::Full => {
                let stem = (init.conv("stem", r, c, k)?, init.bn("stem.bn", c)?);
                let mut stacks = Vec::new();
                let mut intermediate = Vec::new();
                for s in 0..config.stacks {
                    let name = format!("hg{s}");
                    let mut hg = Hourglass {
                        down: vec![],
                        skip: vec![],
                        norm: vec![],
                        mid: init.conv(&format!("{name}.mid"), c, c, k)?,
                    };
                    for l in 0..config.levels {
                        hg.down.push(init.conv(&format!("{name}.down{l}"), c, c, k)?);
                        hg.skip.push(init.conv(&format!("{name}.skip{l}"), c, c, k)?);
                        hg.norm.push(init.bn(&format!("{name}.bn{l}"), c)?);
                    }
                    stacks.push(hg);
                    intermediate.push(init.head(&format!("hg{s}.head"), c, &config, h * w)?);
                }
                let wide = c * (config.stacks + 1);
                let trunk = (0..3)
                    .map(|t| Ok((init.conv(&format!("trunk{t}"), wide, wide, k)?, init.bn(&format!("trunk{t}.bn"), wide)?)))
                    .collect::<Result<Vec<_>>>()?;
                let head = init.head("head", wide, &config, h * w)?;
                Layout::Full {
                    stem,
                    stacks,
                    intermediate,
                    trunk,
                    head,
                }
            }
            Arch::Half => {
                let mut blocks = Vec::new();
                for l in 0..config.levels {
                    let cin = if l == 0 { r } else { c };
                    blocks.push((init.conv(&format!("block{l}"), cin, c, k)?, init.bn(&format!("block{l}.bn"), c)?));
                }
                let spatial = (h / ph.pow(config.levels as u32)) * (w / pw.pow(config.levels as u32));
                let head = init.head("head", c, &config, spatial)?;
                Layout::Half { blocks, head }
            }
        };
        let grid = DomainGrid::new(config.grid)?;
        let decoder = FixedDecoder::new(config.spec, grid)?;
        let planar = Arc::new(planar_design(decoder.design()));
        Ok(Self {
            name: match config.arch {
                Arch::Full => "FullNet".into(),
                Arch::Half => "HalfNet".into(),
            },
            config,
            store: init.store,
            layout,
            decoder,
            planar,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn decoder(&self) -> &FixedDecoder {
        &self.decoder
    }

    /// Trainable scalars; the fixed decoder adds none.
    pub fn trainable_parameter_count(&self) -> usize {
        self.store.trainable_count() + self.decoder.trainable_parameter_count()
    }

    /// Digest of the decoder matrix, to show training never changes it.
    pub fn decoder_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.planar.iter() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Records the encoder on `g` for a channel-planar batch
    /// (`batch × R × N` values, unscaled).
    pub fn forward(&self, g: &mut Graph, planar: &[f64], batch: usize, train: bool) -> Result<Forward> {
        let (h, w) = self.config.grid.hw();
        let r = self.config.spec.range_dim();
        if planar.len() != batch * r * h * w {
            return Err(config(format!(
                "batch of {batch} needs {} values on grid {}, got {}",
                batch * r * h * w,
                self.config.grid,
                planar.len()
            )));
        }
        let inv = 1.0 / self.config.input_scale;
        let x = g.constant(Tensor::new(&[batch, r, h, w], planar.iter().map(|v| v * inv).collect())?)?;
        let scale = self.config.input_scale;
        let pool = self.config.pool();
        let mut pass = Pass {
            g,
            store: &self.store,
            train,
            leaves: HashMap::new(),
            stats: Vec::new(),
        };
        let heads = match &self.layout {
            Layout::Full {
                stem,
                stacks,
                intermediate,
                trunk,
                head,
            } => {
                let x0 = pass.conv_bn_relu(x, *stem)?;
                let mut feats = vec![x0];
                let mut heads = Vec::new();
                for (hg, ih) in stacks.iter().zip(intermediate) {
                    let f = pass.hourglass(*feats.last().unwrap(), hg, pool)?;
                    heads.push(pass.head(f, *ih, scale)?);
                    feats.push(f);
                }
                let mut t = pass.g.concat(&feats)?;
                for layer in trunk {
                    t = pass.conv_bn_relu(t, *layer)?;
                }
                heads.push(pass.head(t, *head, scale)?);
                heads
            }
            Layout::Half { blocks, head } => {
                let mut t = x;
                for &(c, n) in blocks {
                    let y = pass.conv(t, c)?;
                    let y = pass.g.relu(y)?;
                    let y = pass.g.maxpool(y, pool.0, pool.1)?;
                    t = pass.bn(y, n)?;
                }
                vec![pass.head(t, *head, scale)?]
            }
        };
        Ok(Forward {
            heads,
            stats: PendingStats(pass.stats),
        })
    }

    /// Fixed decoder applied on the tape: `[batch, M] -> [batch, R, H, W]`.
    pub fn decode_on(&self, g: &mut Graph, theta: Var) -> Result<Var> {
        let (h, w) = self.config.grid.hw();
        Ok(g.fixed_linear(theta, self.planar.clone(), &[self.config.spec.range_dim(), h, w])?)
    }

    pub fn commit_stats(&mut self, stats: PendingStats) {
        for (mean, var, s) in stats.0 {
            let mut m = self.store.value(mean).data().to_vec();
            let mut v = self.store.value(var).data().to_vec();
            s.update_running(&mut m, &mut v, BN_MOMENTUM);
            self.store.value_mut(mean).data_mut().copy_from_slice(&m);
            self.store.value_mut(var).data_mut().copy_from_slice(&v);
        }
    }

    fn check_field(&self, field: &RangeField) -> Result<()> {
        let n = self.config.grid.num_points();
        if field.num_points() != n || field.range_dim() != self.config.spec.range_dim() {
            return Err(config(format!(
                "field of {} points (R={}) does not match grid {}",
                field.num_points(),
                field.range_dim(),
                self.config.grid
            )));
        }
        Ok(())
    }

    /// Inference: every head's coefficients for each field.
    pub fn encode_batch(&self, fields: &[&RangeField]) -> Result<Vec<Vec<CoefficientVector>>> {
        let mut planar = Vec::new();
        for f in fields {
            self.check_field(f)?;
            planar.extend(f.to_planar());
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, &planar, fields.len(), false)?;
        let m = self.config.spec.num_coeffs();
        Ok((0..fields.len())
            .map(|b| {
                out.heads
                    .iter()
                    .map(|&h| g.value(h).data()[b * m..(b + 1) * m].to_vec().into())
                    .collect()
            })
            .collect())
    }

    /// Intermediate and final coefficients of one field (final last).
    pub fn encode(&self, field: &RangeField) -> Result<Vec<CoefficientVector>> {
        Ok(self.encode_batch(&[field])?.remove(0))
    }

    pub fn predict(&self, field: &RangeField) -> Result<CoefficientVector> {
        Ok(self.encode(field)?.pop().expect("at least one head"))
    }

    /// Decoded field of every head, and the final coefficients.
    pub fn autoencode(&self, field: &RangeField) -> Result<(Vec<RangeField>, CoefficientVector)> {
        let thetas = self.encode(field)?;
        let fields = thetas.iter().map(|t| self.decoder.decode(t)).collect::<polyreg_core::Result<Vec<_>>>()?;
        Ok((fields, thetas.last().unwrap().clone()))
    }

    /// Writes the checkpoint to `path` and its manifest next to it; `extra`
    /// entries (run configuration, seed) are appended to the manifest.
    pub fn save(&self, path: &Path, extra: &[(String, String)]) -> Result<()> {
        self.store.save(path)?;
        let mut pairs = vec![("name".to_string(), self.name.clone())];
        pairs.extend(self.config.to_pairs());
        pairs.push(("checksum".into(), format!("{:016x}", self.store.checksum())));
        pairs.push((
            "motion_rescale".into(),
            "flows are area-resampled to the grid; u coefficients scale by W/grid_w, v by H/grid_h".into(),
        ));
        pairs.extend_from_slice(extra);
        write_kv(&manifest_path(path), &pairs)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let map = read_kv(&manifest_path(path))?;
        let config = EncoderConfig::from_pairs(&map)?;
        let mut model = Model::new(config, 0)?;
        model.store.load_values(&ParamStore::load(path)?)?;
        if let Some(name) = map.get("name") {
            model.name = name.clone();
        }
        Ok(model)
    }

    pub fn manifest_text(&self) -> String {
        format_kv(&self.config.to_pairs())
    }
}

/// Sidecar manifest of an artifact: `<path>.manifest`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn to_core(e: Error) -> polyreg_core::Error {
    match e {
        Error::Core(c) => c,
        other => polyreg_core::Error::EstimationFailed(other.to_string()),
    }
}

impl Regressor for Model {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn spec(&self) -> ModelSpec {
        self.config.spec
    }

    fn native_grid(&self) -> Option<GridShape> {
        Some(self.config.grid)
    }

    fn regress(&self, grid: &DomainGrid, field: &RangeField) -> polyreg_core::Result<CoefficientVector> {
        if grid.shape() != self.config.grid {
            return Err(polyreg_core::Error::InvalidArgument(format!(
                "{} was trained on grid {}, got {}",
                self.name,
                self.config.grid,
                grid.shape()
            )));
        }
        self.predict(field).map_err(to_core)
    }
}
