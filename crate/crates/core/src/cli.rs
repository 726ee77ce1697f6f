//! Batch command-line front end.
//!
//! Exit codes: 0 on full success, 2 when some entries failed or were
//! skipped, 1 on usage or configuration errors. Warnings go to stderr; the
//! summary line or table goes to stdout.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::Config;
use crate::dataset::{scan_layout, validate, Layout, PairManifest};
use crate::error::{Error, Result};
use crate::maskmix::{draw, MaskCorpus, SamplerState};
use crate::metrics::{evaluate_dataset, EvalPair};
use crate::morphology::ElementShape;
use crate::pipeline::{run_mrf, write_stages, MrfConfig};
use crate::raster::{load_mask, load_rgb, overlay, resize_mask_nearest, resize_rgb, save_mask, save_rgb};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "strkit", version, about = "Scene-text mask refinement and text-removal evaluation")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for the mask sampler.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// JSON file overriding module defaults; explicit flags win over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refine initial text masks for every manifest entry.
    Refine(RefineArgs),
    /// Score predicted text-free images against ground truth.
    Evaluate(EvaluateArgs),
    /// Draw a mixed stream of training masks from a corpus.
    SampleMasks(SampleArgs),
    /// Tint a mask over an image.
    Overlay(OverlayArgs),
    /// Check a manifest (or scan a directory into one).
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write `<id>_stage{1..6}.png` panels and overlays.
    #[arg(long)]
    pub emit_stages: bool,
    /// Resize image and mask to N×N before refinement.
    #[arg(long, value_name = "N")]
    pub resize_to: Option<usize>,
    #[command(flatten)]
    pub overrides: MrfOverrides,
}

#[derive(Debug, Args, Default)]
pub struct MrfOverrides {
    #[arg(long = "refine.iterations")]
    refine_iterations: Option<usize>,
    #[arg(long = "refine.upsample_factor")]
    refine_upsample_factor: Option<f64>,
    #[arg(long = "refine.binarize_threshold")]
    refine_binarize_threshold: Option<f64>,
    #[arg(long = "refine.element.shape", value_parser = parse_shape)]
    refine_element_shape: Option<ElementShape>,
    #[arg(long = "refine.element.radius")]
    refine_element_radius: Option<usize>,
    #[arg(long = "slic.k")]
    slic_k: Option<usize>,
    #[arg(long = "slic.compactness")]
    slic_compactness: Option<f64>,
    #[arg(long = "slic.max_iters")]
    slic_max_iters: Option<usize>,
    #[arg(long = "slic.min_region_frac")]
    slic_min_region_frac: Option<f64>,
    #[arg(long = "merge.stage1_color_thresh")]
    merge_stage1_color_thresh: Option<f64>,
    #[arg(long = "merge.stage2_score_thresh")]
    merge_stage2_score_thresh: Option<f64>,
    #[arg(long = "merge.stage2_weights.w_color")]
    merge_w_color: Option<f64>,
    #[arg(long = "merge.stage2_weights.w_hist")]
    merge_w_hist: Option<f64>,
    #[arg(long = "merge.stage2_weights.w_boundary")]
    merge_w_boundary: Option<f64>,
    #[arg(long = "select.overlap_thresh")]
    select_overlap_thresh: Option<f64>,
    #[arg(long = "select.min_seed_pixels")]
    select_min_seed_pixels: Option<usize>,
    #[arg(long = "select.min_component_pixels")]
    select_min_component_pixels: Option<usize>,
    #[arg(long = "select.final_dilate_radius")]
    select_final_dilate_radius: Option<usize>,
}

fn parse_shape(s: &str) -> std::result::Result<ElementShape, String> {
    match s {
        "cross" => Ok(ElementShape::Cross),
        "square" => Ok(ElementShape::Square),
        _ => Err(format!("expected cross or square, got {s:?}")),
    }
}

macro_rules! apply {
    ($($src:expr => $dst:expr),* $(,)?) => {
        $(if let Some(v) = $src { $dst = v; })*
    };
}

impl MrfOverrides {
    fn apply(&self, c: &mut Config) {
        apply! {
            self.refine_iterations => c.refine.iterations,
            self.refine_upsample_factor => c.refine.upsample_factor,
            self.refine_binarize_threshold => c.refine.binarize_threshold,
            self.refine_element_shape => c.refine.element.shape,
            self.refine_element_radius => c.refine.element.radius,
            self.slic_k => c.slic.k,
            self.slic_compactness => c.slic.compactness,
            self.slic_max_iters => c.slic.max_iters,
            self.slic_min_region_frac => c.slic.min_region_frac,
            self.merge_stage1_color_thresh => c.merge.stage1_color_thresh,
            self.merge_stage2_score_thresh => c.merge.stage2_score_thresh,
            self.merge_w_color => c.merge.stage2_weights.w_color,
            self.merge_w_hist => c.merge.stage2_weights.w_hist,
            self.merge_w_boundary => c.merge.stage2_weights.w_boundary,
            self.select_overlap_thresh => c.select.overlap_thresh,
            self.select_min_seed_pixels => c.select.min_seed_pixels,
            self.select_min_component_pixels => c.select.min_component_pixels,
            self.select_final_dilate_radius => c.select.final_dilate_radius,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<id>.png` predictions.
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long = "ep-threshold", visible_alias = "metrics.ep_threshold")]
    pub ep_threshold: Option<u8>,
    #[arg(long = "metrics.psnr_cap")]
    pub psnr_cap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Corpus manifest JSON: `{root?, box: [...], coarse: [...], detailed: [...]}`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub count: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long = "mix.p_box")]
    pub p_box: Option<f64>,
    #[arg(long = "mix.p_coarse")]
    pub p_coarse: Option<f64>,
    #[arg(long = "mix.p_detailed")]
    pub p_detailed: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Tint as `r,g,b`.
    #[arg(long, default_value = "255,0,0", value_parser = parse_rgb)]
    pub color: [u8; 3],
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
}

fn parse_rgb(s: &str) -> std::result::Result<[u8; 3], String> {
    let parts: Vec<_> = s.split(',').map(|p| p.trim().parse::<u8>()).collect();
    match parts.as_slice() {
        [Ok(r), Ok(g), Ok(b)] => Ok([*r, *g, *b]),
        _ => Err(format!("expected r,g,b with values 0..255, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, conflicts_with_all = ["root", "layout"])]
    pub manifest: Option<PathBuf>,
    /// Scan this directory instead of reading a manifest.
    #[arg(long, requires = "layout")]
    pub root: Option<PathBuf>,
    /// `flat_pairs` or `split_dirs`.
    #[arg(long, requires = "root")]
    pub layout: Option<Layout>,
    /// Save the scanned manifest as JSON.
    #[arg(long, requires = "root")]
    pub write_manifest: Option<PathBuf>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let mut config = match &cli.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    match &cli.command {
        Command::Refine(a) => {
            a.overrides.apply(&mut config);
            config.validate()?;
            pool.install(|| cmd_refine(a, &config.mrf()))
        }
        Command::Evaluate(a) => {
            apply! {
                a.ep_threshold => config.metrics.ep_threshold,
                a.psnr_cap => config.metrics.psnr_cap,
            }
            config.validate()?;
            pool.install(|| cmd_evaluate(a, &config))
        }
        Command::SampleMasks(a) => {
            apply! {
                a.p_box => config.mix.p_box,
                a.p_coarse => config.mix.p_coarse,
                a.p_detailed => config.mix.p_detailed,
            }
            config.validate()?;
            pool.install(|| cmd_sample_masks(a, cli.seed, &config))
        }
        Command::Overlay(a) => cmd_overlay(a),
        Command::Validate(a) => pool.install(|| cmd_validate(a)),
    }
}

enum EntryOutcome {
    Done,
    Skipped(String),
    Failed(String),
}

fn refine_entry(m: &PairManifest, idx: usize, args: &RefineArgs, cfg: &MrfConfig) -> EntryOutcome {
    let e = &m.entries[idx];
    let Some(mask_path) = m.mask_path(e) else {
        return EntryOutcome::Skipped(format!("{}: no initial mask, skipped", e.id));
    };
    let result = (|| -> Result<()> {
        let mut img = load_rgb(m.input_path(e))?;
        let mut initial = load_mask(mask_path)?;
        if let Some(n) = args.resize_to {
            img = resize_rgb(&img, n, n);
            initial = resize_mask_nearest(&initial, n, n);
        }
        let out = run_mrf(&img, &initial, cfg)?;
        save_mask(&out.mask, args.out_dir.join(format!("{}_mrf.png", e.id)))?;
        if args.emit_stages {
            write_stages(&out, &img, &initial, &args.out_dir, &e.id)?;
        }
        Ok(())
    })();
    match result {
        Ok(()) => EntryOutcome::Done,
        Err(err) => EntryOutcome::Failed(format!("{}: {err}", e.id)),
    }
}

pub fn cmd_refine(args: &RefineArgs, cfg: &MrfConfig) -> Result<i32> {
    if args.resize_to == Some(0) {
        return Err(Error::Config("--resize-to must be >= 1".into()));
    }
    let manifest = PairManifest::load(&args.manifest)?;
    std::fs::create_dir_all(&args.out_dir)?;

    // Entries run in parallel; reports are emitted in manifest order.
    let chunk = rayon::current_num_threads().max(1) * 2;
    let (mut done, mut skipped, mut failed) = (0, 0, 0);
    let indices: Vec<usize> = (0..manifest.entries.len()).collect();
    for block in indices.chunks(chunk) {
        let outcomes: Vec<EntryOutcome> = block
            .par_iter()
            .map(|&i| refine_entry(&manifest, i, args, cfg))
            .collect();
        for o in outcomes {
            match o {
                EntryOutcome::Done => done += 1,
                EntryOutcome::Skipped(msg) => {
                    eprintln!("warning: {msg}");
                    skipped += 1;
                }
                EntryOutcome::Failed(msg) => {
                    eprintln!("error: {msg}");
                    failed += 1;
                }
            }
        }
    }
    println!("refine: {done} processed, {skipped} skipped, {failed} failed");
    Ok(if skipped + failed == 0 { EXIT_OK } else { EXIT_PARTIAL })
}

pub fn cmd_evaluate(args: &EvaluateArgs, cfg: &Config) -> Result<i32> {
    let manifest = PairManifest::load(&args.manifest)?;
    let pairs: Vec<EvalPair> = manifest
        .entries
        .iter()
        .map(|e| EvalPair {
            id: e.id.clone(),
            pred: args.pred_dir.join(format!("{}.png", e.id)),
            gt: manifest.gt_path(e),
        })
        .collect();
    let report = evaluate_dataset(&pairs, &cfg.metrics)?;
    if let Some(parent) = args.out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    report.write_csv_file(&args.out_csv)?;
    for (id, err) in report.failures() {
        eprintln!("warning: {id}: {err}");
    }
    print!("{}", report.to_table());
    Ok(if report.failures().next().is_none() { EXIT_OK } else { EXIT_PARTIAL })
}

pub fn cmd_sample_masks(args: &SampleArgs, seed: u64, cfg: &Config) -> Result<i32> {
    let corpus = MaskCorpus::from_manifest(&args.corpus)?;
    std::fs::create_dir_all(&args.out_dir)?;
    if args.count > 0 && corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    // Draw i depends only on (seed, i), so draws can be produced in parallel.
    let rows: Vec<Result<(String, String, String)>> = (0..args.count)
        .into_par_iter()
        .map(|i| {
            let state = SamplerState {
                rng_seed: seed,
                draw_count: i,
            };
            let (d, _) = draw(&corpus, &cfg.mix, state)?;
            let src = &corpus.list(d.category)[d.index];
            let name = format!("mask_{i:06}.png");
            let mask = load_mask(src)?;
            save_mask(&mask, args.out_dir.join(&name))?;
            Ok((d.category.tag().to_string(), name, src.display().to_string()))
        })
        .collect();

    let mut w = csv::Writer::from_path(args.out_dir.join("samples.csv"))?;
    w.write_record(["index", "source_tag", "file", "source"])?;
    let mut failed = 0;
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Ok((tag, file, src)) => w.write_record([i.to_string(), tag, file, src])?,
            Err(e @ (Error::RatioInvalid(_) | Error::EmptyCorpus)) => return Err(e),
            Err(e) => {
                eprintln!("warning: draw {i}: {e}");
                failed += 1;
            }
        }
    }
    w.flush()?;
    println!("sample-masks: {} written, {failed} failed", args.count - failed);
    Ok(if failed == 0 { EXIT_OK } else { EXIT_PARTIAL })
}

pub fn cmd_overlay(args: &OverlayArgs) -> Result<i32> {
    let img = load_rgb(&args.image)?;
    let mask = load_mask(&args.mask)?;
    save_rgb(&overlay(&img, &mask, args.color, args.alpha)?, &args.out)?;
    Ok(EXIT_OK)
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    let manifest = match (&args.manifest, &args.root, args.layout) {
        (Some(p), _, _) => PairManifest::load(p)?,
        (None, Some(root), Some(layout)) => {
            let scan = scan_layout(root, layout)?;
            for w in &scan.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(out) = &args.write_manifest {
                scan.manifest.save(out)?;
            }
            scan.manifest
        }
        _ => return Err(Error::Config("need --manifest or --root with --layout".into())),
    };
    let report = validate(&manifest);
    for f in &report.failures {
        eprintln!("invalid: {} ({:?}): {}", f.id, f.kind, f.detail);
    }
    println!(
        "validate: {} entries, {} ok, {} failed",
        report.checked,
        report.checked - report.failures.len(),
        report.failures.len()
    );
    Ok(if report.is_ok() { EXIT_OK } else { EXIT_PARTIAL })
}

/// Exposed for tests that build manifests by hand.
pub fn entry_output(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join(format!("{id}_mrf.png"))
}
