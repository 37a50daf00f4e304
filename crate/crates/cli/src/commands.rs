use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use meshdeform::deform::{
    interpolate_targets, optimize_direct, select_template, subsample, train, train_autoencoder, Autoencoder,
    DeformJob, DeformNet, LossTrace, SelectionMode, TemplateSet, TraceRow,
};
use meshdeform::dmso::sample_surface;
use meshdeform::metrics::{evaluate_clouds, evaluate_meshes, Evaluation, MetricReport};
use meshdeform::mesh::{load_mesh, load_points, save_mesh, save_points};
use meshdeform::nn::{fingerprint, Checkpoint};
use meshdeform::seed::{derive_seed, Stream};
use meshdeform::{PointCloud, TriMesh};

use crate::config::RunConfig;

const ENCODER: &str = "encoder";
const DECODER: &str = "decoder";

/// Failure of a command, mapped to the process exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(meshdeform::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<meshdeform::Error> for CliError {
    fn from(e: meshdeform::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn is_obj(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("obj"))
}

/// A shape argument: OBJ files are meshes, anything else an XYZ cloud.
enum Shape {
    Mesh(TriMesh),
    Cloud(PointCloud),
}

impl Shape {
    fn load(path: &Path) -> CliResult<Shape> {
        Ok(if is_obj(path) {
            Shape::Mesh(load_mesh(path)?)
        } else {
            Shape::Cloud(load_points(path)?)
        })
    }

    /// The shape as a cloud; meshes are sampled with `n` points.
    fn cloud(&self, n: usize, seed: u64) -> CliResult<PointCloud> {
        match self {
            Shape::Mesh(m) => Ok(PointCloud::new(sample_surface(m, n, seed)?.points().to_vec())?),
            Shape::Cloud(c) => Ok(c.clone()),
        }
    }
}

/// Target clouds for deformation and training. Mesh targets are sampled
/// once with `mesh_samples` points.
fn load_target(path: &Path, cfg: &RunConfig) -> CliResult<PointCloud> {
    Shape::load(path)?.cloud(cfg.mesh_samples, derive_seed(cfg.seed, Stream::Sample, 1))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn sample(mesh: &Path, n: usize, out: &Path, cfg: &RunConfig) -> CliResult {
    if n == 0 {
        return Err(CliError::Usage("-n must be at least 1".into()));
    }
    let m = load_mesh(mesh)?;
    let batch = sample_surface(&m, n, derive_seed(cfg.seed, Stream::Sample, 0))?;
    ensure_parent(out)?;
    save_points(&PointCloud::new(batch.points().to_vec())?, out)?;
    log::info!("wrote {n} samples to {}", out.display());
    Ok(())
}

fn load_network(checkpoint: Option<&Path>, cfg: &RunConfig) -> CliResult<DeformNet> {
    let path = checkpoint.ok_or_else(|| {
        CliError::Usage("network mode needs a trained model: pass --checkpoint <file> (produced by `meshdeform train`)".into())
    })?;
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not exist; train one with `meshdeform train` or use --mode direct",
            path.display()
        )));
    }
    Ok(DeformNet::load(path, &cfg.network()?)?)
}

/// Metrics of a deformed mesh against the target it was fitted to.
fn deform_metrics(deformed: &TriMesh, target: &Path, cfg: &RunConfig) -> CliResult<Evaluation> {
    let ecfg = cfg.eval();
    match Shape::load(target)? {
        Shape::Mesh(t) => Ok(evaluate_meshes(deformed, &t, &ecfg)?),
        Shape::Cloud(t) => {
            let a = Shape::Mesh(deformed.clone()).cloud(ecfg.samples, derive_seed(cfg.seed, Stream::Metrics, 0))?;
            let b = PointCloud::new(subsample(t.points(), ecfg.samples, derive_seed(cfg.seed, Stream::Metrics, 1), 0))?;
            Ok(evaluate_clouds(&a, &b)?)
        }
    }
}

pub struct DeformArgs<'a> {
    pub source: &'a Path,
    pub target: &'a Path,
    pub network: bool,
    pub checkpoint: Option<&'a Path>,
    pub out: &'a Path,
    pub trace: Option<&'a Path>,
    pub metrics: Option<&'a Path>,
}

pub fn deform(args: &DeformArgs<'_>, cfg: &RunConfig) -> CliResult<MetricReport> {
    let source = load_mesh(args.source)?;
    let target = load_target(args.target, cfg)?;
    let (mesh, trace) = if args.network {
        let net = load_network(args.checkpoint, cfg)?;
        let out = meshdeform::deform::forward_pipeline(&net, &source, &target, &cfg.losses(), cfg.seed)?;
        let mut trace = LossTrace::default();
        trace.push(TraceRow::from_report(0, &out.report));
        (out.deformed, trace)
    } else {
        if args.checkpoint.is_some() {
            log::warn!("--checkpoint is ignored in direct mode");
        }
        let mut job = DeformJob::new(source, target);
        job.losses = cfg.losses();
        job.iterations = cfg.iterations;
        job.step_size = cfg.step_size;
        job.seed = cfg.seed;
        job.resample = cfg.resample;
        let out = optimize_direct(&job)?;
        log::info!("best total {} at step {}", out.best_report.total, out.best_step);
        (out.mesh, out.trace)
    };
    ensure_parent(args.out)?;
    save_mesh(&mesh, args.out)?;
    let trace_path = args.trace.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(args.out, ".trace.csv"));
    ensure_parent(&trace_path)?;
    trace.write_csv(&trace_path)?;
    let eval = deform_metrics(&mesh, args.target, cfg)?;
    if let Some(e) = &eval.emd_error {
        log::warn!("emd not reported: {e}");
    }
    let metrics_path = args.metrics.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(args.out, ".metrics.json"));
    write_text(&metrics_path, &format!("{}\n", eval.report.to_json()))?;
    Ok(eval.report)
}

/// Reads `source<TAB>target` lines; relative paths resolve against the
/// manifest's directory. Blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> CliResult<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (s, t) = line.split_once('\t').ok_or_else(|| {
            CliError::Usage(format!("{}:{}: expected `source<TAB>target`", path.display(), i + 1))
        })?;
        if s.trim().is_empty() || t.trim().is_empty() || t.contains('\t') {
            return Err(CliError::Usage(format!(
                "{}:{}: expected exactly two tab-separated paths",
                path.display(),
                i + 1
            )));
        }
        pairs.push((base.join(s.trim()), base.join(t.trim())));
    }
    if pairs.is_empty() {
        return Err(CliError::Usage(format!("{}: manifest lists no pairs", path.display())));
    }
    Ok(pairs)
}

pub fn train_network(manifest: &Path, out: &Path, trace: Option<&Path>, cfg: &RunConfig) -> CliResult<LossTrace> {
    let pairs = read_manifest(manifest)?
        .iter()
        .map(|(s, t)| Ok((load_mesh(s)?, load_target(t, cfg)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let trace_path = trace.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".trace.csv"));
    ensure_parent(&trace_path)?;
    ensure_parent(out)?;
    let result = train(&pairs, cfg.network()?, &cfg.train(), |epoch, _, trace| {
        log::info!("epoch {epoch}: loss {}", trace.last_total().unwrap_or(f64::NAN));
        trace.write_csv(&trace_path)
    })?;
    result.trace.write_csv(&trace_path)?;
    result.net.save(out)?;
    Ok(result.trace)
}

pub fn eval(a: &Path, b: &Path, cfg: &RunConfig) -> CliResult<Evaluation> {
    let ecfg = cfg.eval();
    let eval = match (Shape::load(a)?, Shape::load(b)?) {
        (Shape::Mesh(ma), Shape::Mesh(mb)) => evaluate_meshes(&ma, &mb, &ecfg)?,
        (sa, sb) => {
            let s = derive_seed(cfg.seed, Stream::Metrics, 0);
            evaluate_clouds(&sa.cloud(ecfg.samples, s)?, &sb.cloud(ecfg.samples, s)?)?
        }
    };
    if let Some(e) = &eval.emd_error {
        eprintln!("warning: emd not computed: {e}");
    }
    Ok(eval)
}

/// OBJ files directly in `dir` (no category) and one level down (the
/// subdirectory name is the category), sorted by path. Ids follow that order.
pub fn template_files(dir: &Path) -> CliResult<Vec<(PathBuf, Option<String>)>> {
    let list = |d: &Path| -> CliResult<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = fs::read_dir(d)
            .map_err(|e| CliError::Usage(format!("{}: {e}", d.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    let mut files = Vec::new();
    for p in list(dir)? {
        if p.is_dir() {
            let category = p.file_name().map(|n| n.to_string_lossy().into_owned());
            files.extend(list(&p)?.into_iter().filter(|f| f.is_file() && is_obj(f)).map(|f| (f, category.clone())));
        } else if is_obj(&p) {
            files.push((p, None));
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage(format!("{}: no .obj templates found", dir.display())));
    }
    files.sort();
    Ok(files)
}

fn load_templates(dir: &Path, cfg: &RunConfig) -> CliResult<(Vec<PathBuf>, TemplateSet)> {
    let files = template_files(dir)?;
    let meshes = files
        .iter()
        .map(|(p, c)| Ok((p.display().to_string(), load_mesh(p)?, c.clone())))
        .collect::<CliResult<Vec<_>>>()?;
    let set = TemplateSet::new(meshes, cfg.template_samples, cfg.seed)?;
    Ok((files.into_iter().map(|(p, _)| p).collect(), set))
}

fn autoencoder_fingerprint(ae: &Autoencoder) -> String {
    fingerprint(&[(ENCODER, &ae.encoder), (DECODER, &ae.decoder)])
}

pub fn select(
    target: &Path,
    dir: &Path,
    encoder: Option<&Path>,
    category: Option<&str>,
    cfg: &RunConfig,
) -> CliResult<(usize, PathBuf)> {
    let (paths, set) = load_templates(dir, cfg)?;
    let target = load_target(target, cfg)?;
    let id = match encoder {
        None => select_template(&target, &set, SelectionMode::Chamfer, category)?,
        Some(path) => {
            let expected = Autoencoder::new(&cfg.autoencoder())?;
            let ck = Checkpoint::load(path, &autoencoder_fingerprint(&expected))?;
            let enc = ck.module(ENCODER)?;
            let set = set.with_embeddings(enc, cfg.exec())?;
            select_template(&target, &set, SelectionMode::Embedding(enc), category)?
        }
    };
    Ok((id, paths[id].clone()))
}

pub fn train_embedding(dir: &Path, out: &Path, cfg: &RunConfig) -> CliResult<Vec<f64>> {
    let (_, set) = load_templates(dir, cfg)?;
    let clouds = set
        .templates()
        .iter()
        .map(|t| PointCloud::new(t.samples.clone()))
        .collect::<meshdeform::Result<Vec<_>>>()?;
    let (ae, losses) = train_autoencoder(&clouds, &cfg.autoencoder())?;
    ensure_parent(out)?;
    Checkpoint::new(&[(ENCODER, &ae.encoder), (DECODER, &ae.decoder)]).save(out)?;
    Ok(losses)
}

pub fn parse_t_list(s: &str) -> CliResult<Vec<f64>> {
    let ts = s
        .split(',')
        .map(|x| {
            let t: f64 = x
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad interpolation weight {x:?}")))?;
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Usage(format!("interpolation weight {t} is outside [0, 1]")));
            }
            Ok(t)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(ts)
}

pub struct InterpArgs<'a> {
    pub source: &'a Path,
    pub target_a: &'a Path,
    pub target_b: &'a Path,
    pub ts: &'a [f64],
    pub checkpoint: Option<&'a Path>,
    pub out_dir: &'a Path,
}

/// Writes `interp_<i>.obj` for the i-th weight and returns the paths.
pub fn interp(args: &InterpArgs<'_>, cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let net = load_network(args.checkpoint, cfg)?;
    let source = load_mesh(args.source)?;
    let a = load_target(args.target_a, cfg)?;
    let b = load_target(args.target_b, cfg)?;
    fs::create_dir_all(args.out_dir).map_err(|e| CliError::Usage(format!("{}: {e}", args.out_dir.display())))?;
    let mut written = Vec::new();
    for (i, &t) in args.ts.iter().enumerate() {
        let mesh = interpolate_targets(&net, &source, &a, &b, t, &cfg.losses(), cfg.seed)?;
        let path = args.out_dir.join(format!("interp_{i:03}.obj"));
        save_mesh(&mesh, &path)?;
        written.push(path);
    }
    Ok(written)
}
