//! `dcrf`: refine, evaluate and tune depth-sensitive dense CRF segmentations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use dcrf_core::depthprep::{
    depth_stats, normalize_depth_to_rgb, sample_is_usable, DEFAULT_INVALID_THRESHOLD,
};
use dcrf_core::ingest::{
    load_depth, load_depth_raster, load_label_map, load_rgb, load_unary, pair_dataset,
    save_depth_raster, save_label_map, save_rgb, write_atomic,
};
use dcrf_core::metrics::{classwise_csv, classwise_table, ConfusionMatrix, Scores};
use dcrf_core::receptive::{receptive_field, ConvLayer};
use dcrf_core::synth::{blocks, depth_edge, write_scene, SceneSpec};
use dcrf_core::tuner::{load_validation_set, random_search, SearchConfig, SearchSpace};
use dcrf_core::{
    run_inference, Backend, ClassPalette, CrfParams, InferenceConfig, KernelVariant, NormalizedDepth,
    RgbImage,
};

#[derive(Parser)]
#[command(name = "dcrf", version, about = "Depth-sensitive dense CRF refinement for RGB-D segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine one frame's unary scores into a label map.
    Refine(RefineArgs),
    /// Score predicted label maps against ground truth.
    Evaluate(EvaluateArgs),
    /// Random search over the kernel parameters on a validation set.
    Tune(TuneArgs),
    /// Write synthetic labelled scenes.
    Synth(SynthArgs),
    /// Report depth usability and write the depth rescaled to the color range.
    Depthprep(DepthprepArgs),
    /// Receptive field of a stack of dilated convolutions.
    ReceptiveField(ReceptiveArgs),
}

#[derive(Args)]
struct PaletteArgs {
    /// Palette file (`name r g b` per line) or `sunrgbd`.
    #[arg(long, conflicts_with = "classes")]
    palette: Option<String>,
    /// Number of classes, with generic names and colors.
    #[arg(long)]
    classes: Option<usize>,
}

impl PaletteArgs {
    fn resolve(&self, fallback_classes: Option<usize>) -> Result<ClassPalette> {
        if let Some(p) = &self.palette {
            if p == "sunrgbd" {
                return Ok(ClassPalette::sunrgbd());
            }
            let text = fs::read_to_string(p).with_context(|| format!("reading palette {p}"))?;
            return Ok(ClassPalette::parse(&text)?);
        }
        match self.classes.or(fallback_classes) {
            Some(k) => Ok(ClassPalette::generic(k)?),
            None => bail!("give --classes or --palette"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Joint,
    Split,
    Rgb,
}

impl From<KernelArg> for KernelVariant {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Joint => KernelVariant::Joint,
            KernelArg::Split => KernelVariant::Split,
            KernelArg::Rgb => KernelVariant::RgbOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Brute,
    Lattice,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Brute => Backend::BruteForce,
            BackendArg::Lattice => Backend::Lattice,
        }
    }
}

#[derive(Args)]
struct ParamArgs {
    /// `key = value` parameter file; flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Mean-field iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Appearance weight ω1.
    #[arg(long)]
    w1: Option<f64>,
    /// Smoothness weight ω2.
    #[arg(long)]
    w2: Option<f64>,
    /// Appearance position bandwidth σα.
    #[arg(long)]
    sa: Option<f64>,
    /// Color bandwidth σβ.
    #[arg(long)]
    sb: Option<f64>,
    /// Smoothness position bandwidth σγ.
    #[arg(long)]
    sg: Option<f64>,
    /// Depth bandwidth σν.
    #[arg(long)]
    sv: Option<f64>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<CrfParams> {
        let mut p = match &self.params {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                CrfParams::parse_config(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => CrfParams::default(),
        };
        if let Some(k) = self.kernel {
            p.kernel = k.into();
        }
        if let Some(v) = self.iters {
            p.iterations = v;
        }
        let overrides = [
            (self.lambda, &mut p.lambda),
            (self.w1, &mut p.omega1),
            (self.w2, &mut p.omega2),
            (self.sa, &mut p.sigma_alpha),
            (self.sb, &mut p.sigma_beta),
            (self.sg, &mut p.sigma_gamma),
            (self.sv, &mut p.sigma_nu),
        ];
        for (value, slot) in overrides {
            if let Some(v) = value {
                *slot = v;
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    rgb: PathBuf,
    /// 16-bit depth PNG, or an `.ndp` raster written by `depthprep`.
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    unary: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value = "lattice")]
    backend: BackendArg,
    /// Output label map (8-bit class indices).
    #[arg(long)]
    out: PathBuf,
    /// Palette-colored labels blended over the image.
    #[arg(long)]
    out_overlay: Option<PathBuf>,
    /// Overlay opacity of the label colors.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Fail instead of falling back to the color-only kernel on unusable depth.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    palette: PaletteArgs,
}

fn load_normalized_depth(path: &Path, rgb: &RgbImage, strict: bool, params: &mut CrfParams) -> Result<NormalizedDepth> {
    let (w, h) = (rgb.width(), rgb.height());
    if path.extension().and_then(|e| e.to_str()) == Some("ndp") {
        let (dw, dh, data) = load_depth_raster(path)?;
        if (dw, dh) != (w, h) {
            bail!("depth raster is {dw}x{dh}, rgb is {w}x{h}");
        }
        let data = data.into_iter().map(f64::from).collect();
        return Ok(NormalizedDepth::new(w, h, data, vec![true; w * h])?);
    }
    let depth = load_depth(path)?;
    if (depth.width(), depth.height()) != (w, h) {
        bail!("depth is {}x{}, rgb is {w}x{h}", depth.width(), depth.height());
    }
    if sample_is_usable(&depth, DEFAULT_INVALID_THRESHOLD)? {
        return Ok(normalize_depth_to_rgb(&depth, rgb)?);
    }
    let invalid = depth_stats(&depth).invalid_fraction();
    let verdict = usability_line(false, invalid, DEFAULT_INVALID_THRESHOLD);
    if strict {
        bail!("depth {}: {verdict}", path.display());
    }
    warn!("depth {}: {verdict}; using the color-only kernel", path.display());
    params.kernel = KernelVariant::RgbOnly;
    Ok(NormalizedDepth::constant(w, h, 0.0)?)
}

fn cmd_refine(args: &RefineArgs) -> Result<()> {
    let mut params = args.params.resolve()?;
    let rgb = load_rgb(&args.rgb)?;
    let unary = load_unary(&args.unary)?;
    let depth = load_normalized_depth(&args.depth, &rgb, args.strict, &mut params)?;
    let palette = args.palette.resolve(Some(unary.num_classes()))?;
    if palette.len() < unary.num_classes() {
        bail!(
            "palette has {} classes, unary has {}",
            palette.len(),
            unary.num_classes()
        );
    }
    let config = InferenceConfig::new(args.backend.into(), params.iterations);
    let start = Instant::now();
    let out = run_inference(&unary, &rgb, &depth, &params, &config)?;
    let elapsed = start.elapsed();
    save_label_map(&out.labels, &palette, &args.out, None)?;
    if let Some(path) = &args.out_overlay {
        save_rgb(&palette.overlay(&out.labels, &rgb, args.alpha)?, path)?;
    }
    println!(
        "refined {}x{} with {} classes: {} kernel, {} iterations, {} backend, {:.3} s",
        rgb.width(),
        rgb.height(),
        unary.num_classes(),
        params.kernel,
        params.iterations,
        config.backend,
        elapsed.as_secs_f64()
    );
    Ok(())
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted label map, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label map, or a directory of them.
    #[arg(long)]
    gt: PathBuf,
    #[command(flatten)]
    palette: PaletteArgs,
    /// Also print per-class IoU.
    #[arg(long)]
    classwise: bool,
    /// Write the scores (and per-class IoU with --classwise) as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Pairs predictions with ground truth by file stem.
fn match_pairs(pred: &Path, gt: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    match (pred.is_dir(), gt.is_dir()) {
        (false, false) => Ok(vec![(pred.to_path_buf(), gt.to_path_buf())]),
        (true, true) => {
            let (p, g) = (png_files(pred)?, png_files(gt)?);
            let only_pred: Vec<&str> = p.keys().filter(|k| !g.contains_key(*k)).map(String::as_str).collect();
            let only_gt: Vec<&str> = g.keys().filter(|k| !p.contains_key(*k)).map(String::as_str).collect();
            if !only_pred.is_empty() || !only_gt.is_empty() {
                bail!(
                    "unmatched files: prediction only [{}], ground truth only [{}]",
                    only_pred.join(", "),
                    only_gt.join(", ")
                );
            }
            if p.is_empty() {
                bail!("no PNG files in {}", pred.display());
            }
            Ok(p.into_iter().map(|(k, path)| (path, g[&k].clone())).collect())
        }
        _ => bail!("--pred and --gt must both be files or both be directories"),
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let palette = args.palette.resolve(None)?;
    let mut cm = ConfusionMatrix::new(palette.len());
    for (pred, gt) in match_pairs(&args.pred, &args.gt)? {
        let p = load_label_map(&pred, &palette)?;
        let g = load_label_map(&gt, &palette)?;
        cm.accumulate(&p, &g)
            .with_context(|| format!("{} vs {}", pred.display(), gt.display()))?;
    }
    let scores = Scores::from_matrix(&cm)?;
    print!("{}", scores.to_text());
    let names: Vec<String> = palette.names().map(str::to_string).collect();
    if args.classwise {
        println!();
        print!("{}", classwise_table(&cm, &names)?);
    }
    if let Some(path) = &args.csv {
        let mut text = scores.to_csv();
        if args.classwise {
            text.push('\n');
            text.push_str(&classwise_csv(&cm, &names)?);
        }
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

#[derive(Args)]
struct TuneArgs {
    /// Validation directory with rgb/, depth/, unary/ and gt/.
    #[arg(long)]
    val: PathBuf,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    /// Trials per round.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Range shrink factor applied per round around the incumbent.
    #[arg(long, default_value_t = 0.5)]
    shrink: f64,
    #[arg(long, value_enum, default_value = "lattice")]
    backend: BackendArg,
    /// Fixed parameters (kernel, λ, iterations) come from here.
    #[command(flatten)]
    params: ParamArgs,
    /// Best configuration, as `key = value` text.
    #[arg(long)]
    out: PathBuf,
    /// Trial log; defaults to the output path with `.log` appended.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    palette: PaletteArgs,
}

fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let base = args.params.resolve()?;
    let first = pair_dataset(&args.val)?
        .samples
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!("no complete samples under {}", args.val.display()))?;
    let classes = load_unary(&first.unary)?.num_classes();
    let palette = args.palette.resolve(Some(classes))?;
    let samples = load_validation_set(&args.val, &palette)?;
    let config = SearchConfig {
        rounds: args.rounds,
        samples_per_round: args.samples,
        shrink: args.shrink,
        seed: args.seed,
        backend: args.backend.into(),
        base,
    };
    let result = random_search(&samples, &SearchSpace::default(), &config)?;
    write_atomic(&args.out, result.best.params.to_config_string().as_bytes())?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut s = args.out.clone().into_os_string();
        s.push(".log");
        PathBuf::from(s)
    });
    write_atomic(&log_path, result.log().as_bytes())?;
    for (round, best) in result.incumbents.iter().enumerate() {
        println!("round {round}: best mean IoU {best:.6}");
    }
    println!("best: {}", result.best.log_line());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Two same-colored planes at different depths.
    DepthEdge,
    /// A grid of colored blocks with mild color noise.
    Blocks,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "spec")]
    preset: Option<Preset>,
    /// Scene description file.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenes; scene i uses seed + i.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Classes of the blocks preset.
    #[arg(long, default_value_t = 37)]
    classes: usize,
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let from_file = match &args.spec {
        Some(path) => Some(SceneSpec::parse(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )?),
        None => None,
    };
    if from_file.is_none() && args.preset.is_none() {
        bail!("give --preset or --spec");
    }
    for i in 0..args.count {
        let seed = args.seed.wrapping_add(i);
        let spec = match (&from_file, args.preset) {
            (Some(spec), _) => spec.clone(),
            (None, Some(Preset::DepthEdge)) => depth_edge(args.width, args.height, seed),
            (None, Some(Preset::Blocks)) => blocks(args.width, args.height, args.classes, seed),
            (None, None) => unreachable!("checked above"),
        };
        let scene = spec.render(seed)?;
        let palette = ClassPalette::generic(spec.num_classes)?;
        write_scene(&scene, &palette, &args.out, &format!("scene_{i:04}"))?;
    }
    println!("wrote {} scene(s) to {}", args.count, args.out.display());
    Ok(())
}

#[derive(Args)]
struct DepthprepArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    rgb: PathBuf,
    /// Report only; write nothing.
    #[arg(long)]
    check_only: bool,
    /// Normalized depth raster; defaults to the depth path with `.ndp`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Largest usable invalid fraction.
    #[arg(long, default_value_t = DEFAULT_INVALID_THRESHOLD)]
    threshold: f64,
}

fn percent(v: f64) -> String {
    let s = format!("{:.1}", v * 100.0);
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

fn usability_line(usable: bool, invalid: f64, threshold: f64) -> String {
    if usable {
        format!("usable (invalid {:.1}% <= {}%)", invalid * 100.0, percent(threshold))
    } else {
        format!("unusable (invalid {:.1}% > {}%)", invalid * 100.0, percent(threshold))
    }
}

fn cmd_depthprep(args: &DepthprepArgs) -> Result<()> {
    let depth = load_depth(&args.depth)?;
    let rgb = load_rgb(&args.rgb)?;
    let stats = depth_stats(&depth);
    let usable = sample_is_usable(&depth, args.threshold)?;
    println!("valid fraction {:.4}", stats.valid_fraction);
    let verdict = usability_line(usable, stats.invalid_fraction(), args.threshold);
    println!("{verdict}");
    match (stats.mean, stats.std) {
        (Some(mean), Some(std)) => println!("depth mean {mean:.3} std {std:.3}"),
        _ => bail!("depth {} has no valid pixels", args.depth.display()),
    }
    if args.check_only {
        return Ok(());
    }
    let normalized = normalize_depth_to_rgb(&depth, &rgb)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.depth.with_extension("ndp"));
    save_depth_raster(depth.width(), depth.height(), normalized.data(), &out)?;
    let (mu, sigma) = rgb.pooled_stats();
    println!("rgb mean {mu:.3} std {sigma:.3}");
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Args)]
struct ReceptiveArgs {
    /// Layers as `k[:dilation[:stride]]`, input side first.
    #[arg(required = true)]
    layers: Vec<ConvLayer>,
}

fn cmd_receptive(args: &ReceptiveArgs) -> Result<()> {
    println!("{}", receptive_field(&args.layers)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Refine(a) => cmd_refine(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Depthprep(a) => cmd_depthprep(a),
        Command::ReceptiveField(a) => cmd_receptive(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
