use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use segtrack::dataset::{load_frame, Dataset, SequenceMeta};
use segtrack::eval::{evaluate_sequence, format_report, motsa, smotsa, EvalCounts};
use segtrack::mask::{read_mask_file, write_mask_file, InstanceObservation};
use segtrack::net::{critical_env_points, load_params, save_params, top_weighted_points};
use segtrack::pipeline::{embed_frames, group_frames, median, without_embeddings, Embedder};
use segtrack::pointcloud::{Ablation, SamplerConfig};
use segtrack::raster::RgbImage;
use segtrack::synth::{default_palette, gen_dataset, validate_dataset, WorldConfig};
use segtrack::track::{run_sequence, TrackerConfig};
use segtrack::train::{gradient_check, reference_case, train, write_loss_csv, CropDatabase, TrainConfig};

#[derive(Parser)]
#[command(name = "segtrack", version, about = "Point-cloud embeddings for multi-object tracking and segmentation")]
struct Cli {
    /// JSON config for the subcommand; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, or output file for `track`
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset
    Gen(GenArgs),
    /// Check a dataset for annotation errors
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the embedding network
    Train(TrainArgs),
    /// Track instances of one sequence
    Track(TrackArgs),
    /// Score tracking results
    Eval {
        /// Ground-truth mask file, sequence directory or dataset root
        #[arg(long)]
        gt: PathBuf,
        /// Result file or directory of `<sequence>.txt` files
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check analytic gradients of the reference tiny network
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
    },
    /// Export overlays and the points the network relies on
    Viz(VizArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10)]
    sequences: usize,
    /// Index of the first sequence; seeds derive from it
    #[arg(long, default_value_t = 0)]
    first: usize,
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long)]
    min_objects: Option<usize>,
    #[arg(long)]
    max_objects: Option<usize>,
    #[arg(long)]
    no_occlusion: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    n_fg: Option<usize>,
    #[arg(long)]
    n_env: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Modality {
    Offset,
    Color,
    Category,
    Position,
}

#[derive(Args)]
struct TrackArgs {
    /// Input instances in the mask line format
    #[arg(long)]
    masks: PathBuf,
    /// Sequence directory holding frames and meta.json
    #[arg(long)]
    frames: PathBuf,
    /// Network parameters; omit for IoU-only association
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<u32>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    n_fg: Option<usize>,
    #[arg(long)]
    n_env: Option<usize>,
    /// Zero a modality at inference
    #[arg(long, value_enum)]
    ablate: Vec<Modality>,
}

#[derive(Args)]
struct VizArgs {
    /// Sequence directory
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Tracked instances; defaults to the sequence ground truth
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    n_fg: Option<usize>,
    #[arg(long)]
    n_env: Option<usize>,
}

/// Config file for `track` and `viz`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InferenceConfig {
    tracker: TrackerConfig,
    sampler: SamplerConfig,
}

/// Error raised for bad input data or arguments rather than I/O.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| anyhow!(Invalid(format!("{}: {e}", p.display()))))
        }
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| anyhow!(Invalid("--out is required".into())))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let mut cfg: WorldConfig = read_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    if let Some(f) = a.frames {
        cfg.frames = f;
    }
    if let Some(n) = a.min_objects {
        cfg.min_objects = n;
    }
    if let Some(n) = a.max_objects {
        cfg.max_objects = n;
    }
    if a.no_occlusion {
        cfg.occlusion = false;
    }
    let out = out_dir(cli)?;
    let dirs = gen_dataset(&cfg, out, a.first, a.sequences)?;
    let report = validate_dataset(out);
    println!(
        "generated {} sequences in {} ({:.2} instances/frame)",
        dirs.len(),
        out.display(),
        report.density
    );
    Ok(())
}

fn cmd_validate(data: &Path) -> Result<()> {
    let r = validate_dataset(data);
    println!("{}", serde_json::to_string_pretty(&r)?);
    if !r.is_clean() {
        bail!(Invalid(format!("{} violations", r.violations.len())));
    }
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = read_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batches_per_epoch {
        cfg.batches_per_epoch = b;
    }
    if let Some(n) = a.n_fg {
        cfg.n_fg = n;
    }
    if let Some(n) = a.n_env {
        cfg.n_env = n;
    }
    let out = out_dir(cli)?;
    let ds = Dataset::open(&a.data)?;
    let db = CropDatabase::from_dataset(&ds, cfg.k)?;
    let ckpt = out.join("checkpoints");
    create_dir(&ckpt)?;
    write(&out.join("train_config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let verbose = cli.verbose;
    let outcome = train(&db, &cfg, Some(&ckpt), |e, l| {
        if verbose {
            eprintln!("epoch {e:3} loss {l:.6}");
        }
    })?;
    save_params(&outcome.params, &out.join("params.bin"))?;
    write_loss_csv(&out.join("loss.csv"), &outcome.loss_curve)?;
    println!(
        "trained {} epochs on {} tracks, final loss {:.6}",
        cfg.epochs,
        db.num_tracks(),
        outcome.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn ablation(mods: &[Modality]) -> Ablation {
    let mut a = Ablation::NONE;
    for m in mods {
        match m {
            Modality::Offset => a.zero_offset = true,
            Modality::Color => a.zero_color = true,
            Modality::Category => a.zero_category = true,
            Modality::Position => a.zero_position = true,
        }
    }
    a
}

fn sampler_for(cfg: &SamplerConfig, meta: &SequenceMeta, seed: Option<u64>, n_fg: Option<usize>, n_env: Option<usize>) -> SamplerConfig {
    SamplerConfig {
        z: meta.z,
        rng_seed: seed.unwrap_or(cfg.rng_seed),
        n_fg: n_fg.unwrap_or(cfg.n_fg),
        n_env: n_env.unwrap_or(cfg.n_env),
        ..cfg.clone()
    }
}

fn cmd_track(cli: &Cli, a: &TrackArgs) -> Result<()> {
    let cfg: InferenceConfig = read_config(cli.config.as_deref())?;
    let mut tracker = cfg.tracker.clone();
    if let Some(v) = a.alpha {
        tracker.alpha = v;
    }
    if let Some(v) = a.beta {
        tracker.beta = v;
    }
    if let Some(v) = a.gamma {
        tracker.gamma = v;
    }
    let out = cli.out.as_deref().ok_or_else(|| anyhow!(Invalid("--out <file> is required".into())))?;
    let meta = SequenceMeta::load(&a.frames)?;
    let detections = read_mask_file(&a.masks)?;
    let frames = group_frames(&detections);
    let input = match &a.params {
        Some(p) => {
            let params = load_params(p, None)?;
            let sampler = sampler_for(&cfg.sampler, &meta, cli.seed, a.n_fg, a.n_env);
            let seed = sampler.rng_seed;
            let embedder = Embedder::new(&params, sampler, ablation(&a.ablate))?;
            let (input, times) = embed_frames(&embedder, &frames, |f| load_frame(&a.frames, &meta, f), seed)?;
            if let Some(m) = median(&times) {
                println!(
                    "embedding extraction: median {:.3} ms per instance over {} instances",
                    m.as_secs_f64() * 1e3,
                    times.len()
                );
            }
            input
        }
        None => without_embeddings(&frames),
    };
    let tracked = run_sequence(&input, &tracker)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_mask_file(out, &tracked)?;
    let tracks: std::collections::BTreeSet<_> = tracked.iter().filter_map(|o| o.track_id).collect();
    println!("{} instances in {} tracks -> {}", tracked.len(), tracks.len(), out.display());
    Ok(())
}

/// Named ground-truth/result pairs for `eval`.
fn eval_pairs(gt: &Path, hyp: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if gt.is_file() {
        let name = gt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, gt.to_path_buf(), hyp.to_path_buf())]);
    }
    if gt.join("instances.txt").is_file() {
        let name = gt.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let h = if hyp.is_dir() { hyp.join(format!("{name}.txt")) } else { hyp.to_path_buf() };
        return Ok(vec![(name, gt.join("instances.txt"), h)]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(gt)
        .with_context(|| format!("reading {}", gt.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        let name = match p.file_stem() {
            Some(s) => s.to_string_lossy().into_owned(),
            None => continue,
        };
        let g = if p.join("instances.txt").is_file() {
            p.join("instances.txt")
        } else if p.extension().is_some_and(|e| e == "txt") {
            p.clone()
        } else {
            continue;
        };
        out.push((name.clone(), g, hyp.join(format!("{name}.txt"))));
    }
    if out.is_empty() {
        bail!(Invalid(format!("no ground truth found under {}", gt.display())));
    }
    Ok(out)
}

fn cmd_eval(gt: &Path, hyp: &Path, report: Option<&Path>) -> Result<()> {
    let pairs = eval_pairs(gt, hyp)?;
    let rows = segtrack::exec::try_map_indexed(&pairs, |_, (name, g, h)| -> Result<(String, EvalCounts)> {
        let g = read_mask_file(g)?;
        let h = read_mask_file(h)?;
        Ok((name.clone(), evaluate_sequence(&g, &h)?))
    })?;
    let text = format_report(&rows)?;
    let mut total = EvalCounts::default();
    for (_, c) in &rows {
        total.merge(c);
    }
    if let Some(r) = report {
        write(r, &text)?;
    }
    print!("{text}");
    println!("sMOTSA {:.6} MOTSA {:.6} IDS {}", smotsa(&total)?, motsa(&total)?, total.ids);
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, h: f64) -> Result<()> {
    let case = reference_case(cli.seed.unwrap_or(7));
    let r = gradient_check(&case, h)?;
    println!(
        "gradcheck: loss {:.6e} max rel err {:.3e} over {} params ({} skipped at kinks)",
        r.loss, r.max_rel_err, r.checked, r.skipped
    );
    if let Some(out) = &cli.out {
        create_dir(out)?;
        let json = serde_json::json!({
            "loss": r.loss,
            "max_rel_err": r.max_rel_err,
            "checked": r.checked,
            "skipped": r.skipped,
            "num_params": r.num_params,
        });
        write(&out.join("gradcheck.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    }
    if !(r.max_rel_err < 1e-4) || r.skipped * 20 > r.num_params {
        bail!(Invalid("gradient check failed".into()));
    }
    Ok(())
}

fn track_color(id: Option<u64>) -> [u8; 3] {
    let p = default_palette();
    match id {
        Some(t) => p[(segtrack::exec::mix64(t) % p.len() as u64) as usize],
        None => [255, 255, 255],
    }
}

fn blend(a: [u8; 3], b: [u8; 3]) -> [u8; 3] {
    [0, 1, 2].map(|i| ((a[i] as u16 + b[i] as u16) / 2) as u8)
}

fn cmd_viz(cli: &Cli, a: &VizArgs) -> Result<()> {
    let cfg: InferenceConfig = read_config(cli.config.as_deref())?;
    let out = out_dir(cli)?;
    create_dir(out)?;
    let meta = SequenceMeta::load(&a.data)?;
    let masks = a.masks.clone().unwrap_or_else(|| a.data.join("instances.txt"));
    let instances = read_mask_file(&masks)?;
    let params = load_params(&a.params, None)?;
    let sampler = sampler_for(&cfg.sampler, &meta, cli.seed, a.n_fg, a.n_env);
    let seed = sampler.rng_seed;
    let embedder = Embedder::new(&params, sampler, Ablation::NONE)?;
    let frames = group_frames(&instances);
    let rows = segtrack::exec::try_map_indexed(&frames, |_, (f, inst): &(u32, Vec<InstanceObservation>)| -> Result<String> {
        let frame = load_frame(&a.data, &meta, *f)?;
        let mut img: RgbImage = frame.image.clone();
        let mut csv = String::new();
        for (i, o) in inst.iter().enumerate() {
            let color = track_color(o.track_id);
            for (x, y) in o.mask.pixels() {
                img.put(x, y, blend(img.get(x, y), color));
            }
            let (pc, trace) = embedder.inspect(&frame, o, segtrack::exec::derive_seed(seed, &[*f as u64, i as u64]))?;
            let track = o.track_id.map_or(-1, |t| t as i64);
            for j in top_weighted_points(&trace.weights, 0.1) {
                let p = pc.foreground[j];
                img.put(p.u, p.v, [255, 255, 255]);
                csv.push_str(&format!("{f},{track},fg_top,{},{},{}\n", p.u, p.v, trace.weights[j]));
            }
            for j in critical_env_points(&trace.argmax, 5) {
                let p = pc.environment[j];
                img.put(p.u, p.v, [0, 0, 0]);
                let wins = trace.argmax.iter().filter(|&&w| w == j).count();
                csv.push_str(&format!("{f},{track},env_critical,{},{},{wins}\n", p.u, p.v));
            }
        }
        img.write_ppm(&out.join(format!("overlay_{f:06}.ppm")))?;
        Ok(csv)
    })?;
    let mut csv = String::from("frame,track,kind,x,y,score\n");
    for r in rows {
        csv.push_str(&r);
    }
    write(&out.join("points.csv"), csv)?;
    println!("wrote {} overlays to {}", frames.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| anyhow!(Invalid(e.to_string())))?;
    }
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(cli, a),
        Cmd::Validate { data } => cmd_validate(data),
        Cmd::Train(a) => cmd_train(cli, a),
        Cmd::Track(a) => cmd_track(cli, a),
        Cmd::Eval { gt, hyp, report } => cmd_eval(gt, hyp, report.as_deref()),
        Cmd::Gradcheck { h } => cmd_gradcheck(cli, *h),
        Cmd::Viz(a) => cmd_viz(cli, a),
    }
}

/// 2 for I/O failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(se) = cause.downcast_ref::<segtrack::Error>() {
            return if se.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<Invalid>().is_some() {
            return 1;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
