use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use tagparse::dataset::{self, LoadedDataset};
use tagparse::eval::{self, ClassAccuracyAccumulator, MAX_SYNTH_CLASSES};
use tagparse::pipeline::{self, ParseResult};
use tagparse::{Error, LabelSet, PairwiseMode, PreparedDatabase, Result, RunConfig, UnaryMode};

#[derive(Debug, Parser)]
#[command(name = "tagparse", version, about = "Scene parsing from image-level tags")]
struct Cli {
    /// Worker threads for per-image fan-out (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sparse-code a target over the database and list its references.
    Retrieve {
        #[command(flatten)]
        io: TargetArgs,
        /// Comma-separated label names to condition on (default: every label).
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Write the coder energy trace here as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Parse one target image and write overlay, label raster, report and traces.
    Segment {
        #[command(flatten)]
        io: TargetArgs,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Predict tags for an image, or score a directory dataset by MAP.
    Annotate {
        #[command(flatten)]
        io: TargetArgs,
        /// Neighbours used for label transfer.
        #[arg(short = 'k', long)]
        k: Option<usize>,
        /// Labels reported.
        #[arg(short = 'n', long)]
        n: Option<usize>,
        /// Give every neighbour weight one.
        #[arg(long)]
        unweighted: bool,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Parse every target with ground truth and report per-class accuracy.
    Eval {
        #[arg(long)]
        db: PathBuf,
        /// Dataset directory of targets (default: the database itself).
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Write a synthetic dataset with planted ground truth.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        images: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Write the first N images to `out/train` and the rest to `out/test`.
        #[arg(long)]
        split: Option<usize>,
    },
    /// Average accuracy over a beta x gamma grid, as CSV.
    Sweep {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.05, 0.1, 0.2])]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.2, 0.4])]
        gammas: Vec<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
}

#[derive(Debug, Args)]
struct TargetArgs {
    /// Database directory (`images/`, `tags.json`, optional `labels.json`).
    #[arg(long)]
    db: PathBuf,
    /// Target image, or a dataset directory for `annotate`.
    #[arg(long)]
    target: PathBuf,
}

#[derive(Debug, Args)]
struct ParamArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// References kept per retrieval.
    #[arg(short = 'p', long = "refs")]
    p: Option<usize>,
    /// Outer edges per superpixel and reference.
    #[arg(short = 'q', long = "outer")]
    q: Option<usize>,
    /// Coder stopping tolerance.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    superpixels: Option<usize>,
    #[arg(long)]
    compactness: Option<f64>,
    #[arg(long, value_enum)]
    unary_mode: Option<UnaryMode>,
    #[arg(long, value_enum)]
    pairwise_mode: Option<PairwiseMode>,
    #[arg(long)]
    absent_cost: Option<f64>,
    /// Skip database images whose identifier matches the target's.
    #[arg(long)]
    exclude_self: bool,
}

impl ParamArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(
            beta => beta,
            gamma => gamma,
            lambda => lambda,
            p => p,
            q => q,
            sigma => sigma,
            superpixels => superpixels.target_count,
            compactness => superpixels.compactness,
            unary_mode => unary.mode,
            pairwise_mode => pairwise,
            absent_cost => unary.absent_cost,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        log::warn!("thread pool already initialised: {e}");
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Retrieve {
            io,
            labels,
            trace,
            params,
        } => cmd_retrieve(&io, &labels, trace.as_deref(), &params),
        Command::Segment { io, out, params } => cmd_segment(&io, &out, &params),
        Command::Annotate {
            io,
            k,
            n,
            unweighted,
            params,
        } => cmd_annotate(&io, k, n, !unweighted, &params),
        Command::Eval {
            db,
            targets,
            json,
            params,
        } => cmd_eval(&db, targets.as_deref(), json.as_deref(), &params),
        Command::Synth {
            out,
            seed,
            images,
            classes,
            split,
        } => cmd_synth(&out, seed, images, classes, split),
        Command::Sweep {
            db,
            targets,
            betas,
            gammas,
            out,
            params,
        } => cmd_sweep(&db, targets.as_deref(), &betas, &gammas, out.as_deref(), &params),
    }
}

fn prepare(root: &Path, cfg: &RunConfig) -> Result<(LoadedDataset, PreparedDatabase)> {
    let loaded = dataset::load_dataset_full(root)?;
    let db = PreparedDatabase::new(loaded.database.clone(), cfg)?;
    Ok((loaded, db))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string()
}

fn exclusion(params: &ParamArgs, identifier: &str) -> Option<String> {
    params.exclude_self.then(|| identifier.to_string())
}

fn parse_label_names(names: &[String], loaded: &LoadedDataset) -> Result<Option<LabelSet>> {
    if names.is_empty() {
        return Ok(None);
    }
    names
        .iter()
        .map(|n| {
            loaded
                .database
                .label_id(n)
                .ok_or_else(|| Error::UnknownLabelName(n.clone()))
        })
        .collect::<Result<LabelSet>>()
        .map(Some)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialisable value") + "\n"
}

#[derive(Serialize)]
struct Reference {
    identifier: String,
    weight: f64,
    tags: Vec<String>,
}

fn references(db: &PreparedDatabase, indices: &[usize], weights: &[f64]) -> Vec<Reference> {
    indices
        .iter()
        .zip(weights)
        .map(|(&k, &w)| Reference {
            identifier: db.database.images[k].identifier.clone(),
            weight: w,
            tags: db.database.label_names(&db.tag_sets[k]),
        })
        .collect()
}

fn cmd_retrieve(io: &TargetArgs, labels: &[String], trace: Option<&Path>, params: &ParamArgs) -> Result<()> {
    let cfg = params.config()?;
    let (loaded, db) = prepare(&io.db, &cfg)?;
    let image = dataset::load_rgb(&io.target)?;
    let label_set = parse_label_names(labels, &loaded)?;
    let exclude = exclusion(params, &file_name(&io.target));
    let (code, refs) = pipeline::retrieve(&image, &db, &cfg, label_set.as_ref(), exclude.as_deref())?;

    #[derive(Serialize)]
    struct Report {
        iterations: usize,
        converged: bool,
        final_energy: f64,
        references: Vec<Reference>,
    }
    let report = Report {
        iterations: code.iterations,
        converged: code.converged,
        final_energy: code.energy_trace.last().copied().unwrap_or(f64::NAN),
        references: references(&db, &refs.indices, &refs.weights),
    };
    print!("{}", to_json(&report));
    if let Some(path) = trace {
        let mut csv = String::from("iteration,energy\n");
        for (i, e) in code.energy_trace.iter().enumerate() {
            csv += &format!("{i},{e}\n");
        }
        write_text(path, &csv)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct IterationReport {
    label_set: Vec<String>,
    references: Vec<Reference>,
    code_iterations: usize,
    code_converged: bool,
    final_code_energy: f64,
    final_mrf_energy: f64,
}

#[derive(Serialize)]
struct SegmentReport {
    target: String,
    config: RunConfig,
    superpixels: usize,
    em_iterations: usize,
    converged: bool,
    oscillated: bool,
    final_labels: Vec<String>,
    label_set_history: Vec<Vec<String>>,
    iterations: Vec<IterationReport>,
    /// File names within the output directory.
    overlay: String,
    label_raster: String,
}

fn energy_trace_csv(result: &ParseResult) -> String {
    let mut csv = String::from("em_iteration,stage,step,energy\n");
    for (t, it) in result.iterations.iter().enumerate() {
        for (s, e) in it.code_energy_trace.iter().enumerate() {
            csv += &format!("{},code,{s},{e}\n", t + 1);
        }
        for (s, e) in it.mrf_energies.iter().enumerate() {
            csv += &format!("{},mrf,{s},{e}\n", t + 1);
        }
    }
    csv
}

fn cmd_segment(io: &TargetArgs, out: &Path, params: &ParamArgs) -> Result<()> {
    let cfg = params.config()?;
    let (loaded, db) = prepare(&io.db, &cfg)?;
    let image = dataset::load_rgb(&io.target)?;
    let name = file_name(&io.target);
    let exclude = exclusion(params, &name);
    let result = pipeline::infer_labels(&image, &db, &cfg, exclude.as_deref())?;

    let stem = dataset::stem(&name).to_string();
    let paths = dataset::write_overlay(&image, &result.decomposition, &result.assignment, &loaded.palette, out, &stem)?;
    let names = |set: &LabelSet| db.database.label_names(set);
    let report = SegmentReport {
        target: name,
        config: cfg.clone(),
        superpixels: result.decomposition.n_segments(),
        em_iterations: result.em_iterations,
        converged: result.converged,
        oscillated: result.oscillated,
        final_labels: names(&result.final_label_set()),
        label_set_history: result.label_set_history.iter().map(names).collect(),
        iterations: result
            .iterations
            .iter()
            .map(|it| IterationReport {
                label_set: names(&it.label_set),
                references: references(&db, &it.references, &it.reference_weights),
                code_iterations: it.code_energy_trace.len().saturating_sub(1),
                code_converged: it.code_converged,
                final_code_energy: it.code_energy_trace.last().copied().unwrap_or(f64::NAN),
                final_mrf_energy: it.final_mrf_energy(),
            })
            .collect(),
        overlay: file_name(&paths.overlay),
        label_raster: file_name(&paths.labels),
    };
    write_text(&out.join(format!("{stem}.report.json")), &to_json(&report))?;
    write_text(&out.join(format!("{stem}.energy.csv")), &energy_trace_csv(&result))?;
    println!(
        "{}: {} after {} iteration(s)",
        report.target,
        report.final_labels.join(","),
        report.em_iterations
    );
    Ok(())
}

fn cmd_annotate(io: &TargetArgs, k: Option<usize>, n: Option<usize>, weighted: bool, params: &ParamArgs) -> Result<()> {
    let cfg = params.config()?;
    let (_, db) = prepare(&io.db, &cfg)?;
    let k = k.unwrap_or(cfg.annotate_k);
    let n = n.unwrap_or(cfg.annotate_n);

    if io.target.is_dir() {
        let targets = dataset::load_dataset(&io.target)?;
        let remap = label_remap(&targets, &db)?;
        let per_query = targets
            .images
            .par_iter()
            .map(|img| {
                let exclude = exclusion(params, &img.identifier);
                let res = pipeline::annotate(&img.pixels, &db, k, n, weighted, &cfg, exclude.as_deref())?;
                let truth: LabelSet = img.tags.iter().map(|&l| remap[l]).collect();
                eval::average_precision(&res.scores, &truth)
            })
            .collect::<Result<Vec<f64>>>()?;
        let map = eval::mean_average_precision(per_query);
        print!("{}", to_json(&map));
        return Ok(());
    }

    let image = dataset::load_rgb(&io.target)?;
    let exclude = exclusion(params, &file_name(&io.target));
    let res = pipeline::annotate(&image, &db, k, n, weighted, &cfg, exclude.as_deref())?;

    #[derive(Serialize)]
    struct Report {
        tags: Vec<String>,
        scores: BTreeMap<String, f64>,
        neighbours: Vec<Reference>,
        short: bool,
    }
    let label_name = |l: usize| db.database.labels[l].name.clone();
    let (idx, w): (Vec<usize>, Vec<f64>) = res.neighbours.iter().copied().unzip();
    let report = Report {
        tags: res.top_n.iter().map(|&l| label_name(l)).collect(),
        scores: res.scores.iter().enumerate().map(|(l, &s)| (label_name(l), s)).collect(),
        neighbours: references(&db, &idx, &w),
        short: res.short,
    };
    print!("{}", to_json(&report));
    Ok(())
}

/// Maps label ids of a target dataset onto the database's ids by name.
fn label_remap(targets: &tagparse::AuxiliaryDatabase, db: &PreparedDatabase) -> Result<Vec<usize>> {
    targets
        .labels
        .iter()
        .map(|l| {
            db.database
                .label_id(&l.name)
                .ok_or_else(|| Error::UnknownLabelName(l.name.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct EvalSummary {
    targets: usize,
    average: f64,
    per_class: BTreeMap<String, f64>,
    mean_em_iterations: f64,
    converged: usize,
    oscillated: usize,
}

fn evaluate(loaded_db: &LoadedDataset, db: &PreparedDatabase, targets: &LoadedDataset, cfg: &RunConfig, exclude_self: bool) -> Result<EvalSummary> {
    let remap = label_remap(&targets.database, db)?;
    let jobs: Vec<_> = targets
        .database
        .images
        .iter()
        .filter_map(|img| targets.ground_truth.get(&img.identifier).map(|gt| (img, gt)))
        .collect();
    if jobs.is_empty() {
        return Err(Error::InvalidArgument("no target has a ground-truth raster".into()));
    }
    let results = jobs
        .par_iter()
        .map(|(img, gt)| {
            let exclude = exclude_self.then_some(img.identifier.as_str());
            let res = pipeline::infer_labels(&img.pixels, db, cfg, exclude)?;
            let mut gt = (*gt).clone();
            for id in gt.label_map.iter_mut().filter(|id| **id != dataset::VOID) {
                *id = remap[usize::from(*id)] as u8;
            }
            Ok((res.label_raster(), gt, res.em_iterations, res.converged, res.oscillated))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut acc = ClassAccuracyAccumulator::default();
    for (pred, gt, ..) in &results {
        acc.add(pred, gt)?;
    }
    let report = acc.report();
    let n = results.len();
    Ok(EvalSummary {
        targets: n,
        average: report.average,
        per_class: report
            .per_class
            .iter()
            .map(|(&c, &a)| (loaded_db.database.labels[c].name.clone(), a))
            .collect(),
        mean_em_iterations: results.iter().map(|r| r.2 as f64).sum::<f64>() / n as f64,
        converged: results.iter().filter(|r| r.3).count(),
        oscillated: results.iter().filter(|r| r.4).count(),
    })
}

fn load_targets(db_root: &Path, targets: Option<&Path>) -> Result<(LoadedDataset, bool)> {
    match targets {
        Some(root) => Ok((dataset::load_dataset_full(root)?, false)),
        // targets drawn from the database must not retrieve themselves
        None => Ok((dataset::load_dataset_full(db_root)?, true)),
    }
}

fn cmd_eval(db_root: &Path, targets: Option<&Path>, json: Option<&Path>, params: &ParamArgs) -> Result<()> {
    let cfg = params.config()?;
    let (loaded, db) = prepare(db_root, &cfg)?;
    let (targets, forced) = load_targets(db_root, targets)?;
    let summary = evaluate(&loaded, &db, &targets, &cfg, forced || params.exclude_self)?;

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:<24} {:>8}", "class", "accuracy");
    for (name, a) in &summary.per_class {
        let _ = writeln!(stdout, "{name:<24} {a:>8.4}");
    }
    let _ = writeln!(stdout, "{:<24} {:>8.4}", "average", summary.average);
    let _ = writeln!(
        stdout,
        "targets {}  converged {}  oscillated {}  mean EM iterations {:.2}",
        summary.targets, summary.converged, summary.oscillated, summary.mean_em_iterations
    );
    match json {
        Some(path) => write_text(path, &to_json(&summary)),
        None => {
            let _ = write!(stdout, "{}", to_json(&summary));
            Ok(())
        }
    }
}

fn cmd_synth(out: &Path, seed: u64, images: usize, classes: usize, split: Option<usize>) -> Result<()> {
    if classes == 0 || classes > MAX_SYNTH_CLASSES {
        return Err(Error::InvalidArgument(format!("classes must be in 1..={MAX_SYNTH_CLASSES}")));
    }
    let synth = eval::synth_dataset(seed, images, classes)?;
    match split {
        Some(n) => {
            let (train, test) = synth.split(n)?;
            for (part, dir) in [(&train, "train"), (&test, "test")] {
                if !part.database.is_empty() {
                    dataset::save_dataset(&out.join(dir), &part.database, &part.palette, &part.ground_truth_map())?;
                }
            }
        }
        None => dataset::save_dataset(out, &synth.database, &synth.palette, &synth.ground_truth_map())?,
    }
    println!("wrote {images} image(s) to {}", out.display());
    Ok(())
}

fn cmd_sweep(
    db_root: &Path,
    targets: Option<&Path>,
    betas: &[f64],
    gammas: &[f64],
    out: Option<&Path>,
    params: &ParamArgs,
) -> Result<()> {
    if betas.iter().chain(gammas).any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("grid values must be nonnegative".into()));
    }
    let base = params.config()?;
    let (loaded, db) = prepare(db_root, &base)?;
    let (targets, forced) = load_targets(db_root, targets)?;
    let exclude = forced || params.exclude_self;

    let mut csv = String::from("beta,gamma,average_accuracy\n");
    for &beta in betas {
        for &gamma in gammas {
            let cfg = RunConfig { beta, gamma, ..base.clone() };
            let summary = evaluate(&loaded, &db, &targets, &cfg, exclude)?;
            log::info!("beta {beta} gamma {gamma}: {:.4}", summary.average);
            csv += &format!("{beta},{gamma},{}\n", summary.average);
        }
    }
    match out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
