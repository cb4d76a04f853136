mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use histotile_core::cache::FeatureCache;
use histotile_core::dataset::{
    generate_synthetic_corpus, generate_synthetic_crc, make_folds, scan_corpus, CorpusKind, CorpusManifest,
    Magnification, SynthSpec,
};
use histotile_core::eval::{run_experiment, ExperimentConfig, RunReport};
use histotile_core::features::{import_deep_features, FeatureKind};
use histotile_core::filterbank::{
    build_filter_spec, train_relevance_model, write_retention_csv, FilterTrainingOptions, RelevanceModel,
};
use histotile_core::pipeline::FeatureSource;
use histotile_core::{Error, Result};
use rayon::prelude::*;

use config::{parse_filters, parse_grid, plan, RunConfig, RunFile};

#[derive(Parser)]
#[command(name = "histotile", version, about = "Patch-level histopathology classification with relevance filters")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarise a corpus directory.
    Scan {
        root: PathBuf,
        #[arg(long, default_value = "breakhis")]
        kind: String,
    },
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Train one relevance filter on a CRC-like corpus.
    TrainFilter(TrainFilterArgs),
    /// Compute PFTAS features for every patch (or tile) of a corpus.
    ExtractFeatures {
        root: PathBuf,
        #[arg(long, default_value = "breakhis")]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate an external deep-feature CSV.
    ImportDeep {
        csv: PathBuf,
        /// Rewrite the validated table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment matrix.
    Run(Box<RunArgs>),
    /// Collect run reports into one table.
    Report {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Write a CRC-like tile corpus instead of a tumour corpus.
    #[arg(long)]
    crc: bool,
    #[arg(long, default_value_t = 4)]
    patients_per_class: usize,
    #[arg(long, default_value_t = 3)]
    images_per_patient: usize,
    #[arg(long, default_value_t = 700)]
    width: usize,
    #[arg(long, default_value_t = 460)]
    height: usize,
    #[arg(long, value_delimiter = ',', default_value = "40")]
    mags: Vec<u32>,
    /// Tiles per structure (with --crc).
    #[arg(long, default_value_t = 25)]
    per_class: usize,
    /// Tile side (with --crc).
    #[arg(long, default_value_t = 150)]
    tile_side: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainFilterArgs {
    #[arg(long)]
    crc: PathBuf,
    #[arg(long)]
    filter: usize,
    #[arg(long, default_value = "pftas")]
    features: String,
    #[arg(long)]
    crc_deep_csv: Option<PathBuf>,
    #[arg(long)]
    pca: Option<usize>,
    /// Multiply every per-structure count, for small corpora.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// `c:gamma,...`; defaults to the full log grid.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    crc: Option<PathBuf>,
    /// e.g. `0,7` or `0..7`.
    #[arg(long)]
    filters: Option<String>,
    #[arg(long, value_delimiter = ',')]
    mags: Option<Vec<u32>>,
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    pca: Option<usize>,
    #[arg(long)]
    deep_csv: Option<PathBuf>,
    #[arg(long)]
    crc_deep_csv: Option<PathBuf>,
    #[arg(long)]
    crc_scale: Option<f64>,
    /// Directory holding pre-trained `filter-N.json` models.
    #[arg(long)]
    filter_models: Option<PathBuf>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Predefined fold file (`fold,patient_id,train|test`).
    #[arg(long)]
    folds: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: cannot use --jobs {n}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Scan { root, kind } => cmd_scan(&root, kind.parse()?),
        Command::Synth(args) => cmd_synth(args),
        Command::TrainFilter(args) => cmd_train_filter(args),
        Command::ExtractFeatures { root, kind, out } => cmd_extract(&root, kind.parse()?, &out),
        Command::ImportDeep { csv, out } => cmd_import_deep(&csv, out.as_deref()),
        Command::Run(args) => cmd_run(*args),
        Command::Report { dir, out } => cmd_report(&dir, out.as_deref()),
    }
}

fn print_summary(m: &CorpusManifest) -> Result<()> {
    println!("root: {}", m.root.display());
    println!("images: {}", m.entries.len());
    if m.kind == CorpusKind::CrcLike {
        println!("{:<10} {:>8}", "structure", "images");
        for (s, n) in m.count_by(|e| e.structure().map(|s| s.code())) {
            println!("{:<10} {:>8}", s.unwrap_or("?"), n);
        }
        return Ok(());
    }
    println!("patients: {}", m.patients().len());
    println!("{:<14} {:>8}", "magnification", "images");
    for (mag, n) in m.count_by(|e| e.magnification) {
        println!("{:<14} {:>8}", mag.map(|m| format!("{m}X")).unwrap_or_else(|| "-".into()), n);
    }
    println!("{:<14} {:>8} {:>9}", "class", "images", "patients");
    let labels = m.patient_labels()?;
    for (label, n) in m.count_by(|e| e.binary_label()) {
        let patients = labels.values().filter(|l| Some(**l) == label).count();
        println!("{:<14} {:>8} {:>9}", label.map(|l| l.as_str()).unwrap_or("?"), n, patients);
    }
    Ok(())
}

fn cmd_scan(root: &Path, kind: CorpusKind) -> Result<()> {
    print_summary(&scan_corpus(root, kind)?)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let manifest = if a.crc {
        generate_synthetic_crc(&a.out, a.per_class, a.tile_side, a.seed)?
    } else {
        let magnifications =
            a.mags.iter().map(|m| m.to_string().parse()).collect::<Result<Vec<Magnification>>>()?;
        let spec = SynthSpec {
            patients_per_class: a.patients_per_class,
            images_per_patient: a.images_per_patient,
            width: a.width,
            height: a.height,
            magnifications,
            ..SynthSpec::default()
        };
        generate_synthetic_corpus(&a.out, &spec, a.seed)?
    };
    print_summary(&manifest)
}

fn grid_from(flag: Option<&str>) -> Result<Vec<histotile_core::KernelParams>> {
    match flag {
        Some(g) => parse_grid(g)?.iter().map(|&[c, gamma]| histotile_core::KernelParams::new(c, gamma)).collect(),
        None => Ok(histotile_core::classifier::default_grid()),
    }
}

fn crc_source(features: FeatureKind, crc_deep_csv: Option<&Path>) -> Result<FeatureSource> {
    match features {
        FeatureKind::Pftas => Ok(FeatureSource::pftas(FeatureCache::from_env()?)),
        _ => {
            let path = crc_deep_csv.ok_or_else(|| Error::Config("deep features need --crc-deep-csv".into()))?;
            FeatureSource::deep(import_deep_features(path)?)
        }
    }
}

fn cmd_train_filter(a: TrainFilterArgs) -> Result<()> {
    let features: FeatureKind = a.features.parse()?;
    if a.pca.is_some() && features != FeatureKind::Deep {
        return Err(Error::Config("--pca is only valid with deep features".into()));
    }
    let spec = build_filter_spec(a.filter)?.scaled(a.scale)?;
    let crc = scan_corpus(&a.crc, CorpusKind::CrcLike)?;
    let source = crc_source(features, a.crc_deep_csv.as_deref())?;
    let opts = FilterTrainingOptions { pca_k: a.pca, ..FilterTrainingOptions::new(grid_from(a.grid.as_deref())?, a.seed) };
    let model = train_relevance_model(&crc, &spec, &source, &opts)?;
    model.save(&a.out)?;
    println!(
        "filter {}: C={} gamma={} cv accuracy {:.4} validation accuracy {:.4} ({} train, {} validation)",
        a.filter,
        model.best_params.c,
        model.best_params.gamma,
        model.cv_accuracy,
        model.validation_accuracy,
        model.train_count,
        model.validation_count
    );
    println!("model written to {}", a.out.display());
    Ok(())
}

fn cmd_extract(root: &Path, kind: CorpusKind, out: &Path) -> Result<()> {
    let manifest = scan_corpus(root, kind)?;
    let entries: Vec<_> = manifest.entries.iter().collect();
    let source = FeatureSource::pftas(FeatureCache::from_env()?);
    let features = if kind == CorpusKind::CrcLike {
        source.tile_features(&manifest, &entries)?
    } else {
        source.patch_features(&manifest, &entries)?.features
    };
    features.write_csv(out)?;
    println!("{} rows x {} values written to {}", features.len(), features.width(), out.display());
    Ok(())
}

fn cmd_import_deep(csv: &Path, out: Option<&Path>) -> Result<()> {
    let table = import_deep_features(csv)?;
    println!("{} rows x {} values", table.len(), table.width());
    if let Some(out) = out {
        table.write_csv(out)?;
        println!("written to {}", out.display());
    }
    Ok(())
}

fn obtain_filter(cfg: &RunConfig, index: usize) -> Result<RelevanceModel> {
    if let Some(dir) = &cfg.filter_models {
        let path = dir.join(format!("filter-{index}.json"));
        if path.exists() {
            let model = RelevanceModel::load(&path)?;
            if model.input_kind() != cfg.features || model.filter.index != index {
                return Err(Error::Config(format!("{} does not fit this run", path.display())));
            }
            return Ok(model);
        }
    }
    let crc_root = cfg.crc.as_ref().ok_or_else(|| Error::Config(format!("no model or CRC corpus for filter {index}")))?;
    let crc = scan_corpus(crc_root, CorpusKind::CrcLike)?;
    let source = crc_source(cfg.features, cfg.crc_deep_csv.as_deref())?;
    let spec = build_filter_spec(index)?.scaled(cfg.crc_scale)?;
    let opts = FilterTrainingOptions { pca_k: cfg.pca, tol: cfg.tol, ..FilterTrainingOptions::new(cfg.grid.clone(), cfg.seed) };
    let model = train_relevance_model(&crc, &spec, &source, &opts)?;
    model.save(&cfg.out.join(format!("filter-{index}.json")))?;
    println!("filter {index}: validation accuracy {:.4}", model.validation_accuracy);
    Ok(model)
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => RunFile::load(p)?,
        None => RunFile::default(),
    };
    let flags = RunFile {
        corpus: a.corpus,
        corpus_kind: a.kind,
        crc: a.crc,
        filters: a.filters.as_deref().map(parse_filters).transpose()?,
        mags: a.mags,
        features: a.features,
        pca: a.pca,
        deep_csv: a.deep_csv,
        crc_deep_csv: a.crc_deep_csv,
        crc_scale: a.crc_scale,
        filter_models: a.filter_models,
        grid: a.grid.as_deref().map(parse_grid).transpose()?,
        tol: a.tol,
        seed: a.seed,
        folds: a.folds,
        out: a.out,
    };
    let cfg = RunConfig::resolve(file.overlay(flags))?;
    fs::create_dir_all(&cfg.out)?;

    let manifest = scan_corpus(&cfg.corpus, cfg.corpus_kind)?;
    let folds = make_folds(&manifest, cfg.folds.as_deref(), cfg.seed)?;
    let entries: Vec<_> =
        manifest.entries.iter().filter(|e| e.magnification.is_some_and(|m| cfg.mags.contains(&m))).collect();
    if entries.is_empty() {
        return Err(Error::Config("no images at the requested magnifications".into()));
    }
    let source = match cfg.features {
        FeatureKind::Pftas => FeatureSource::pftas(FeatureCache::from_env()?),
        _ => FeatureSource::deep(import_deep_features(cfg.deep_csv.as_ref().expect("checked in resolve"))?)?,
    };
    let patches = source.patch_features(&manifest, &entries)?;

    let mut filters = BTreeMap::new();
    for &f in cfg.filters.iter().filter(|&&f| f > 0) {
        filters.insert(f, obtain_filter(&cfg, f)?);
    }

    let runs = plan(&cfg.filters, &cfg.mags);
    println!("{} runs, {} fold executions", runs.len(), runs.len() * folds.len());
    let reports = runs
        .par_iter()
        .map(|&(f, m)| {
            let exp = ExperimentConfig {
                magnification: Some(m),
                filter_index: f,
                feature_kind: cfg.features,
                pca_k: cfg.pca,
                grid: cfg.grid.clone(),
                seed: cfg.seed,
                tol: cfg.tol,
            };
            let filter = filters.get(&f).map(|m| m as &dyn histotile_core::filterbank::Relevance);
            let report = run_experiment(&exp, &patches, &folds, filter)?;
            let stem = cfg.out.join(format!("report-f{f}-m{}", m.factor()));
            report.write_json(&stem.with_extension("json"))?;
            report.write_csv(&stem.with_extension("csv"))?;
            Ok(report)
        })
        .collect::<Result<Vec<RunReport>>>()?;

    let mut retention = Vec::new();
    for r in &reports {
        let line = match r.summary_row("patient", "sum") {
            Some(s) if !r.flagged => format!("patient sum {:.1} +- {:.1}", s.mean, s.std),
            _ => "flagged: a test patient lost every image".to_string(),
        };
        println!("filter {} at {}X ({}): {line}", r.filter_index, r.magnification.map_or(0, |m| m.factor()), cfg.effective_kind());
        if let Some(stats) = r.folds.first().and_then(|f| f.retention.clone()) {
            retention.push((stats, r.flagged));
        }
    }
    if !retention.is_empty() {
        write_retention_csv(&retention, &cfg.out.join("retention.csv"))?;
    }
    Ok(())
}

fn cmd_report(dir: &Path, out: Option<&Path>) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("report-"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no report-*.json files in {}", dir.display())));
    }
    let mut lines = vec!["filter,magnification,features,level,rule,mean,std,flagged".to_string()];
    for p in &paths {
        let r: RunReport = serde_json::from_str(&fs::read_to_string(p)?)?;
        let mag = r.magnification.map(|m| m.to_string()).unwrap_or_default();
        let kind = r.pca_k.map_or(r.feature_kind, FeatureKind::DeepPca);
        if r.flagged {
            lines.push(format!("{},{mag},{kind},,,,,true", r.filter_index));
        }
        for s in &r.summary {
            lines.push(format!("{},{mag},{kind},{},{},{:.2},{:.2},false", r.filter_index, s.level, s.rule, s.mean, s.std));
        }
    }
    let text = lines.join("\n") + "\n";
    print!("{text}");
    if let Some(out) = out {
        fs::write(out, text)?;
    }
    Ok(())
}
