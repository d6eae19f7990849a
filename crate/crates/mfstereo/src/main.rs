use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfstereo::config::{MatchMode, PostMode, RunConfig};
use mfstereo::error::{Error, Result};
use mfstereo::evaluation::{self, EvalResult};
use mfstereo::image_io::{self, DisparityMap, RgbU8Image};
use mfstereo::pipeline::{self, DebugArtifacts};
use mfstereo::post_processing::ValidityMask;

#[derive(Parser)]
#[command(
    name = "mfstereo",
    about = "Dense stereo matching by mean-field inference over a joint \
             fully-connected / locally-connected pairwise random field",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match a rectified pair and write disparity PFM plus preview PNG
    Match(MatchArgs),
    /// Run and score Middlebury-style training folders
    Eval(EvalArgs),
    /// Repeat a matching run and report per-stage times
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Configuration file (flat key = value lines, # comments)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model variant: jem, fcm or lcm
    #[arg(long)]
    mode: Option<MatchMode>,
    /// Integer downsampling factor (disparities scale back up)
    #[arg(long)]
    scale: Option<usize>,
    /// Mean-field iteration count
    #[arg(long)]
    iters: Option<usize>,
}

impl CommonOpts {
    /// Defaults, then the config file, then explicit flags.
    fn resolve(&self, post: Option<PostMode>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(post) = post {
            cfg.post = post;
        }
        if let Some(scale) = self.scale {
            cfg.scale = scale;
        }
        if let Some(iters) = self.iters {
            cfg.inference.iterations = iters;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct MatchArgs {
    left: PathBuf,
    right: PathBuf,
    /// Middlebury calib.txt supplying ndisp
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Disparity level count at input resolution (overrides --calib)
    #[arg(long)]
    ndisp: Option<usize>,
    /// Output disparity PFM; the preview PNG lands next to it
    #[arg(long, default_value = "disp0.pfm")]
    out: PathBuf,
    /// Directory for cost slices, cross-check mask and iteration traces
    #[arg(long)]
    debug_dumps: Option<PathBuf>,
    /// Post-processing chain: none, lrc or lrc+of+wmf
    #[arg(long)]
    post: Option<PostMode>,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of dataset folders (im0.png, im1.png, calib.txt,
    /// disp0GT.pfm, optional mask0nocc.png)
    dataset_root: PathBuf,
    /// Where predictions and the report are written
    #[arg(long, default_value = "eval_out")]
    out: PathBuf,
    /// Post-processing chains to compare (repeatable)
    #[arg(long = "post")]
    posts: Vec<PostMode>,
    /// Also write per-dataset results as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Reuse predictions already present in the output directory
    #[arg(long)]
    reuse_pred: bool,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct BenchArgs {
    left: PathBuf,
    right: PathBuf,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    ndisp: Option<usize>,
    /// Number of timed runs; the median per stage is reported
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Post-processing chain: none, lrc or lrc+of+wmf
    #[arg(long)]
    post: Option<PostMode>,
    #[command(flatten)]
    common: CommonOpts,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Match(args) => cmd_match(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn resolve_ndisp(ndisp: Option<usize>, calib: Option<&Path>) -> Result<usize> {
    if let Some(n) = ndisp {
        return Ok(n);
    }
    if let Some(path) = calib {
        return Ok(image_io::parse_calib(path)?.ndisp);
    }
    Err(Error::InvalidParam(
        "disparity level count missing: pass --ndisp or --calib <calib.txt>".into(),
    ))
}

fn cmd_match(args: MatchArgs) -> Result<()> {
    let cfg = args.common.resolve(args.post)?;
    let ndisp = resolve_ndisp(args.ndisp, args.calib.as_deref())?;
    let left = image_io::read_image(&args.left)?;
    let right = image_io::read_image(&args.right)?;

    let mut debug = args.debug_dumps.as_ref().map(|_| DebugArtifacts::default());
    let out = pipeline::match_pair_debug(&left, &right, ndisp, &cfg, debug.as_mut())?;

    image_io::write_pfm(&out.full, &args.out, 1.0)?;
    let preview = args.out.with_extension("png");
    image_io::write_preview_png(&out.full, ndisp, &preview)?;

    println!("stage times:");
    for t in &out.timings {
        println!("  {:<14} {:8.3} s", t.name, t.seconds);
    }
    println!("  {:<14} {:8.3} s", "total", out.total_seconds());
    println!("wrote {} and {}", args.out.display(), preview.display());

    if let (Some(dir), Some(dbg)) = (args.debug_dumps.as_ref(), debug) {
        write_debug_dumps(dir, &out, &dbg)?;
        println!("debug artifacts in {}", dir.display());
    }
    Ok(())
}

fn write_debug_dumps(dir: &Path, out: &pipeline::MatchOutput, dbg: &DebugArtifacts) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    if let Some(cv) = &dbg.cost_volume {
        for d in 0..cv.levels() {
            let slice = DisparityMap::new(cv.width(), cv.height(), cv.level_slice(d))?;
            image_io::write_pfm(&slice, &dir.join(format!("cost_d{d:03}.pfm")), 1.0)?;
        }
    }
    if let Some(mask) = &out.lrc_mask {
        image_io::write_mask_png(mask, &dir.join("lrc_mask.png"))?;
    }
    let mut trace = String::from("iter,mean_entropy,wta_energy\n");
    for (i, row) in dbg.entropy_trace.iter().enumerate() {
        let energy = dbg
            .energy_trace
            .get(i)
            .and_then(|e| *e)
            .map_or(String::new(), |e| format!("{e}"));
        trace.push_str(&format!("{i},{row},{energy}\n"));
    }
    let trace_path = dir.join("trace.csv");
    std::fs::write(&trace_path, trace).map_err(|source| Error::Io { path: trace_path, source })
}

struct Dataset {
    name: String,
    dir: PathBuf,
}

fn discover_datasets(root: &Path) -> Result<Vec<Dataset>> {
    let entries = std::fs::read_dir(root)
        .map_err(|source| Error::Io { path: root.to_path_buf(), source })?;
    let mut found = Vec::new();
    for entry in entries.flatten() {
        let dir = entry.path();
        if dir.is_dir() && dir.join("im0.png").exists() && dir.join("im1.png").exists() {
            let name = entry.file_name().to_string_lossy().into_owned();
            found.push(Dataset { name, dir });
        }
    }
    found.sort_by(|a, b| a.name.cmp(&b.name));
    if found.is_empty() {
        return Err(Error::InvalidParam(format!(
            "no dataset folders under {} (need im0.png/im1.png)",
            root.display()
        )));
    }
    Ok(found)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let base_cfg = args.common.resolve(None)?;
    let posts: Vec<PostMode> =
        if args.posts.is_empty() { vec![base_cfg.post] } else { args.posts.clone() };
    std::fs::create_dir_all(&args.out)
        .map_err(|source| Error::Io { path: args.out.clone(), source })?;

    let datasets = discover_datasets(&args.dataset_root)?;
    let mut rows: Vec<(String, Vec<EvalResult>)> = Vec::new();
    let mut used_nocc = Vec::new();

    for ds in &datasets {
        let gt_path = ds.dir.join("disp0GT.pfm");
        if !gt_path.exists() {
            eprintln!("warning: {}: missing disp0GT.pfm, skipped", ds.name);
            continue;
        }
        let calib = image_io::parse_calib(&ds.dir.join("calib.txt"))?;
        let gt = image_io::read_pfm(&gt_path)?;
        let mask_path = ds.dir.join("mask0nocc.png");
        let (mask, has_nocc) = if mask_path.exists() {
            (image_io::read_mask_png(&mask_path)?, true)
        } else {
            (ValidityMask::all_valid(gt.width(), gt.height()), false)
        };
        used_nocc.push(has_nocc);

        let left = image_io::read_image(&ds.dir.join("im0.png"))?;
        let right = image_io::read_image(&ds.dir.join("im1.png"))?;

        let mut results = Vec::new();
        for &post in &posts {
            let mut cfg = base_cfg.clone();
            cfg.post = post;
            let pred_path = args.out.join(format!("{}_{}_disp0.pfm", ds.name, post));
            let (full, runtime_s) = if args.reuse_pred && pred_path.exists() {
                (image_io::read_pfm(&pred_path)?, 0.0)
            } else {
                let t0 = std::time::Instant::now();
                let out = pipeline::match_pair(&left, &right, calib.ndisp, &cfg)?;
                let dt = t0.elapsed().as_secs_f64();
                image_io::write_pfm(&out.full, &pred_path, 1.0)?;
                (out.full, dt)
            };
            let aligned = evaluation::crop_disparity(&full, gt.width(), gt.height())?;
            let mut r = evaluation::avg_err(&aligned, &gt, &mask, calib.ndisp as f32)?;
            r.runtime_s = runtime_s;
            results.push(r);
        }
        rows.push((ds.name.clone(), results));
    }

    if rows.is_empty() {
        return Err(Error::InvalidParam("no dataset had usable ground truth".into()));
    }
    let metric = if used_nocc.iter().all(|&m| m) {
        "nocc"
    } else if used_nocc.iter().any(|&m| m) {
        "mixed"
    } else {
        "all"
    };

    let text = if posts.len() == 1 {
        let flat: Vec<(String, EvalResult)> =
            rows.iter().map(|(n, r)| (n.clone(), r[0].clone())).collect();
        evaluation::report(&flat, metric)?
    } else {
        let names: Vec<String> = posts.iter().map(|p| p.to_string()).collect();
        evaluation::report_multi(&names, &rows, metric)?
    };
    print!("{text}");
    let report_path = args.out.join("report.txt");
    std::fs::write(&report_path, &text)
        .map_err(|source| Error::Io { path: report_path, source })?;

    if let Some(csv_path) = &args.csv {
        let mut csv = String::from("dataset,post,avg_err,bad1,bad2,evaluated,runtime_s\n");
        for (name, results) in &rows {
            for (post, r) in posts.iter().zip(results) {
                csv.push_str(&format!(
                    "{name},{post},{},{},{},{},{}\n",
                    r.avg_err, r.bad1, r.bad2, r.evaluated, r.runtime_s
                ));
            }
        }
        std::fs::write(csv_path, csv)
            .map_err(|source| Error::Io { path: csv_path.clone(), source })?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.repeats == 0 {
        return Err(Error::InvalidParam("repeats must be >= 1".into()));
    }
    let cfg = args.common.resolve(args.post)?;
    let ndisp = resolve_ndisp(args.ndisp, args.calib.as_deref())?;
    let left: RgbU8Image = image_io::read_image(&args.left)?;
    let right = image_io::read_image(&args.right)?;

    let mut per_stage: Vec<(&'static str, Vec<f64>)> = Vec::new();
    let mut totals = Vec::new();
    for run in 0..args.repeats {
        let out = pipeline::match_pair(&left, &right, ndisp, &cfg)?;
        for t in &out.timings {
            match per_stage.iter_mut().find(|(n, _)| *n == t.name) {
                Some((_, v)) => v.push(t.seconds),
                None => per_stage.push((t.name, vec![t.seconds])),
            }
        }
        totals.push(out.total_seconds());
        println!("run {}: {:.3} s", run + 1, out.total_seconds());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.total_cmp(b));
        v[v.len() / 2]
    };
    println!("median stage times over {} runs:", args.repeats);
    for (name, mut times) in per_stage {
        println!("  {:<14} {:8.3} s", name, median(&mut times));
    }
    println!("  {:<14} {:8.3} s", "total", median(&mut totals));
    Ok(())
}
