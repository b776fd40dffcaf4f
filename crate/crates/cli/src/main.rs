mod args;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::Parser;
use polyreg_core::bench::{emit_report, run_suite, BenchSuite};
use polyreg_core::datagen::{read_pairs, write_pairs, GenScheme, PairGenerator};
use polyreg_core::motion::{
    fit_dominant_motion, read_flo, read_pnm, stabilize_sequence, write_flo, write_pnm, write_theta_timeline,
    StabilizationParams,
};
use polyreg_core::{Classical, DomainGrid, GridShape, IrwlsConfig, ModelSpec, RansacConfig, Regressor};
use polyreg_net::manifest::write_kv;
use polyreg_net::{manifest_path, train, validate, EncoderConfig, Model, TrainConfig};

use args::{BenchArgs, Cli, Command, FitArgs, GenArgs, MethodArgs, MotionFitArgs, StabilizeArgs, TrainArgs};

/// A problem with the invocation rather than with the run; exits with 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

type Pairs = Vec<(String, String)>;

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// Prints the resolved configuration as a reproducibility header.
fn log_config(command: &str, pairs: &Pairs) {
    eprintln!("# polyreg {command}");
    for (k, v) in pairs {
        eprintln!("# {k}={v}");
    }
}

fn write_manifest(artifact: &Path, command: &str, pairs: &Pairs) -> Result<()> {
    let mut all = vec![kv("command", command), kv("artifact", artifact.display())];
    all.extend_from_slice(pairs);
    write_kv(&manifest_path(artifact), &all)?;
    Ok(())
}

fn default_grid(spec: &ModelSpec) -> GridShape {
    if spec.domain_dim() == 1 {
        GridShape::Line(64)
    } else {
        GridShape::Lattice { height: 32, width: 32 }
    }
}

fn default_noise(spec: &ModelSpec) -> f64 {
    if spec.domain_dim() == 1 {
        0.01
    } else {
        0.5
    }
}

fn method_pairs(m: &MethodArgs) -> Pairs {
    let mut p = vec![
        kv("method", &m.method),
        kv("ransac_iterations", m.ransac_iterations),
        kv("tukey_c", m.tukey_c),
    ];
    if let Some(c) = &m.checkpoint {
        p.push(kv("checkpoint", c.display()));
    }
    if let Some(t) = m.threshold {
        p.push(kv("threshold", t));
    }
    if let Some(n) = m.noise {
        p.push(kv("noise", n));
    }
    p
}

fn classical(name: &str, spec: ModelSpec, threshold: Option<f64>, noise: f64, iterations: usize, tukey_c: f64, seed: u64) -> Result<Classical> {
    Ok(match name {
        "lse" => Classical::lse(spec),
        "ransac" => {
            let mut cfg = match threshold {
                Some(t) => RansacConfig::new(&spec, t),
                None => RansacConfig::for_noise(&spec, noise),
            };
            cfg.iterations = iterations;
            cfg.seed = seed;
            Classical::ransac(spec, cfg)
        }
        "irwls" => Classical::irwls(
            spec,
            IrwlsConfig {
                tuning_constant: tukey_c,
                ..IrwlsConfig::default()
            },
        ),
        other => return Err(usage(format!("unknown method '{other}' (lse, ransac or irwls)"))),
    })
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn build_method(m: &MethodArgs, spec: ModelSpec, seed: u64) -> Result<Box<dyn Regressor>> {
    if let Some(path) = &m.checkpoint {
        let model = load_model(path)?;
        if model.config().spec != spec {
            bail!("checkpoint {} regresses {} models, input is {}", path.display(), model.config().spec, spec);
        }
        return Ok(Box::new(model));
    }
    let noise = m.noise.unwrap_or_else(|| default_noise(&spec));
    Ok(Box::new(classical(&m.method, spec, m.threshold, noise, m.ransac_iterations, m.tukey_c, seed)?))
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let grid_shape = a.grid.unwrap_or_else(|| default_grid(&a.spec));
    let mut scheme = match a.scheme.as_str() {
        "data1" => GenScheme::data1(&a.spec),
        "data2" => GenScheme::data2(&a.spec),
        "mixed" => GenScheme::mixed(&a.spec),
        "eval" => GenScheme::evaluation(&a.spec, a.ratio, default_noise(&a.spec)),
        other => return Err(usage(format!("unknown scheme '{other}' (data1, data2, mixed or eval)"))),
    };
    if let Some(n) = a.noise {
        scheme.noise_sigma = n;
    }
    let mut pairs = vec![
        kv("spec", a.spec),
        kv("grid", grid_shape),
        kv("scheme", &a.scheme),
        kv("ratio", a.ratio),
        kv("count", a.count),
        kv("precision", if a.precision == polyreg_core::datagen::Precision::F64 { "f64" } else { "f32" }),
        kv("seed", a.common.seed),
    ];
    if let Some(n) = a.noise {
        pairs.push(kv("noise", n));
    }
    log_config("gen", &pairs);
    let grid = DomainGrid::new(grid_shape)?;
    let generated: Vec<_> = PairGenerator::new(a.spec, grid.clone(), scheme, a.common.seed)?.take(a.count).collect();
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_pairs(BufWriter::new(file), &a.spec, &grid, a.precision, &generated)?;
    write_manifest(&a.out, "gen", &pairs)?;
    eprintln!("wrote {} pairs to {}", generated.len(), a.out.display());
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let (header, pairs) = read_pairs(BufReader::new(file))?;
    let Some(pair) = pairs.get(a.index) else {
        return Err(usage(format!("pair {} requested, dump holds {}", a.index, pairs.len())));
    };
    let mut resolved = vec![kv("index", a.index), kv("seed", a.common.seed)];
    resolved.extend(method_pairs(&a.method));
    log_config("fit", &resolved);
    let method = build_method(&a.method, header.spec, a.common.seed)?;
    let grid = DomainGrid::new(header.grid)?;
    let theta = method.regress(&grid, &pair.input)?;
    let decoder = polyreg_core::FixedDecoder::new(header.spec, grid)?;
    let fitted = decoder.decode(&theta)?;
    println!("method: {}", method.name());
    println!("theta: {}", fmt_vec(theta.as_slice()));
    println!("theta_true: {}", fmt_vec(pair.theta_true.as_slice()));
    println!("theta_max_abs_error: {:e}", theta.as_slice().iter().zip(pair.theta_true.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    println!("mse_vs_clean: {:e}", fitted.mse(&pair.target));
    println!("mean_euclidean_vs_clean: {:e}", fitted.mean_euclidean(&pair.target));
    println!("mse_vs_input: {:e}", fitted.mse(&pair.input));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let grid = a.grid.unwrap_or_else(|| default_grid(&a.spec));
    let mut enc = match a.arch {
        polyreg_net::Arch::Full => EncoderConfig::full(a.spec, grid),
        polyreg_net::Arch::Half => EncoderConfig::half(a.spec, grid),
    };
    if let Some(c) = a.channels {
        enc.channels = c;
    }
    if let Some(s) = a.stacks {
        enc.stacks = s;
    }
    if let Some(l) = a.levels {
        enc.levels = l;
    }
    if let Some(h) = a.head_planes {
        enc.head_planes = h;
    }
    enc.validate().map_err(|e| usage(e.to_string()))?;
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        lr: a.lr,
        lr_decay: a.lr_decay,
        schedule: a.schedule,
        loss: a.loss,
        seed: a.common.seed,
        phase_split: a.phase_split,
        checkpoint_every: a.checkpoint_every,
        checkpoint_dir: a.checkpoint_every.map(|_| checkpoint_dir(&a.out)),
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let mut resolved: Pairs = enc.to_pairs().into_iter().filter(|(k, _)| k != "input_scale").collect();
    resolved.extend(cfg.to_pairs());
    if let Some(k) = a.checkpoint_every {
        resolved.push(kv("checkpoint_every", k));
    }
    resolved.push(kv("validate_trials", a.validate_trials));
    log_config("train", &resolved);

    let mut model = Model::new(enc, a.common.seed)?;
    eprintln!("{} trainable parameters", model.trainable_parameter_count());
    let every = (a.steps / 20).max(1);
    let report = train(&mut model, &cfg, |r| {
        if r.step % every == 0 || r.step + 1 == a.steps {
            eprintln!("step {:>7}  phase {}  loss {:.6e}", r.step, r.phase, r.loss);
        }
    })?;
    let mut extra = vec![kv("command", "train")];
    extra.extend(resolved.iter().filter(|(k, _)| !model.config().to_pairs().iter().any(|(mk, _)| mk == k)).cloned());
    model.save(&a.out, &extra)?;
    let curve = loss_csv_path(&a.out);
    report.write_csv(&curve)?;
    write_manifest(&curve, "train", &resolved)?;
    eprintln!("wrote {} and {}", a.out.display(), curve.display());

    if a.validate_trials > 0 {
        let spec = model.config().spec;
        let noise = default_noise(&spec);
        let lse = Classical::lse(spec);
        let res = validate(&model, &[&lse], &polyreg_core::bench::DEFAULT_RATIOS, noise, a.validate_trials, a.common.seed)?;
        println!("{}", res.to_table());
    }
    Ok(())
}

fn checkpoint_dir(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".steps");
    PathBuf::from(s)
}

fn loss_csv_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mut suite = BenchSuite::new(a.spec)?;
    if let Some(g) = a.grid {
        suite.grid = DomainGrid::new(g)?;
    }
    if let Some(r) = &a.ratios {
        suite.ratios = r.clone();
    }
    if let Some(n) = a.noise {
        suite.noise_sigma = n;
    }
    suite.trials = a.trials;
    suite.seed = a.common.seed;
    suite.jobs = a.common.jobs;
    suite.validate().map_err(|e| usage(e.to_string()))?;

    let mut resolved = vec![
        kv("spec", a.spec),
        kv("grid", suite.grid.shape()),
        kv("methods", a.methods.join(",")),
        kv("ratios", suite.ratios.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")),
        kv("noise", suite.noise_sigma),
        kv("trials", suite.trials),
        kv("seed", suite.seed),
    ];
    if !a.checkpoints.is_empty() {
        resolved.push(kv("checkpoint", a.checkpoints.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")));
    }
    if let Some(t) = a.threshold {
        resolved.push(kv("threshold", t));
    }
    log_config("bench", &resolved);

    let mut methods: Vec<Box<dyn Regressor>> = Vec::new();
    for name in a.methods.iter().filter(|m| !m.is_empty()) {
        methods.push(Box::new(classical(name, a.spec, a.threshold, suite.noise_sigma, 500, 4.685, suite.seed)?));
    }
    for path in &a.checkpoints {
        methods.push(Box::new(load_model(path)?));
    }
    if methods.is_empty() {
        return Err(usage("no methods to benchmark"));
    }
    let refs: Vec<&dyn Regressor> = methods.iter().map(|m| m.as_ref()).collect();
    let results = run_suite(&suite, &refs)?;
    emit_report(&results, &a.out)?;
    write_manifest(&a.out, "bench", &resolved)?;
    println!("{}", results.to_table());
    if results.any_failures() {
        eprintln!("warning: some trials failed; see the failures column of {}", a.out.display());
    }
    Ok(())
}

fn cmd_motion_fit(a: MotionFitArgs) -> Result<()> {
    let mut resolved = vec![kv("input", a.input.display()), kv("seed", a.common.seed)];
    resolved.extend(method_pairs(&a.method));
    log_config("motion-fit", &resolved);
    let flow = read_flo(&a.input)?;
    let method = build_method(&a.method, ModelSpec::quadratic_motion(), a.common.seed)?;
    let fit = fit_dominant_motion(&flow, method.as_ref())?;
    write_flo(&fit.parametric, &a.out)?;
    write_manifest(&a.out, "motion-fit", &resolved)?;
    if let Some(path) = &a.residual {
        let mut s = String::new();
        for row in fit.residual.chunks(flow.width) {
            s.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        fs::write(path, s)?;
    }
    println!("method: {}", method.name());
    println!("theta: {}", fmt_vec(fit.theta.as_slice()));
    println!("mean_residual: {:e}", fit.mean_residual(None, true));
    Ok(())
}

fn sorted_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.contains(&e)))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_stabilize(a: StabilizeArgs) -> Result<()> {
    let mut resolved = vec![
        kv("frames", a.frames.display()),
        kv("flows", a.flows.display()),
        kv("window", a.window),
        kv("border", a.border),
        kv("seed", a.common.seed),
    ];
    resolved.extend(method_pairs(&a.method));
    log_config("stabilize", &resolved);
    if a.window % 2 == 0 {
        return Err(usage("the smoothing window must be odd"));
    }
    let frame_paths = sorted_files(&a.frames, &["pgm", "ppm", "pnm"])?;
    let flow_paths = sorted_files(&a.flows, &["flo"])?;
    let frames = frame_paths.iter().map(|p| read_pnm(p)).collect::<polyreg_core::Result<Vec<_>>>()?;
    let flows = flow_paths.iter().map(|p| read_flo(p)).collect::<polyreg_core::Result<Vec<_>>>()?;
    let method = build_method(&a.method, ModelSpec::quadratic_motion(), a.common.seed)?;
    let params = StabilizationParams {
        smoothing_window: a.window,
        border_policy: a.border,
    };
    let out = stabilize_sequence(&frames, &flows, method.as_ref(), &params)?;
    fs::create_dir_all(&a.out)?;
    for (img, src) in out.frames.iter().zip(&frame_paths) {
        write_pnm(img, &a.out.join(src.file_name().expect("listed file")))?;
    }
    let timeline = a.out.join("theta_timeline.csv");
    write_theta_timeline(&out.thetas, &timeline)?;
    write_manifest(&timeline, "stabilize", &resolved)?;
    eprintln!("wrote {} frames to {}", out.frames.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let jobs = match &cli.command {
        Command::Gen(a) => a.common.jobs,
        Command::Fit(a) => a.common.jobs,
        Command::Train(a) => a.common.jobs,
        Command::Bench(a) => a.common.jobs,
        Command::MotionFit(a) => a.common.jobs,
        Command::Stabilize(a) => a.common.jobs,
    };
    if jobs > 0 {
        // ignore a pool that is already set up
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::MotionFit(a) => cmd_motion_fit(a),
        Command::Stabilize(a) => cmd_stabilize(a),
    }
}

fn main() -> ExitCode {
    let argv = match args::expand_config(std::env::args_os().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
