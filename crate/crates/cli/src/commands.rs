use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use puda::ablation::{comparison_table, ModeRow, SeedResult};
use puda::gradcheck::{self, Fault, GradcheckOptions};
use puda::kg::DatasetPaths;
use puda::synthetic::{planted_kg, PlantedSpec};
use puda::trainer::JsonLines;
use puda::{
    evaluate, train, Checkpoint, CheckpointError, EvalError, EvalReport, KgError, KnowledgeGraph, Mode, Split,
    TrainConfig, TrainError,
};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use tracing::{info, warn};

use crate::config::{KeyError, ModeSpec, Settings};
use crate::manifest::{fingerprint, prepare_out_dir, write_atomic, Fingerprint, Manifest};

pub const CHECKPOINT: &str = "checkpoint.pukg";
pub const METRICS: &str = "metrics.jsonl";
pub const EVAL: &str = "eval.json";
pub const ABLATION: &str = "ablation.json";
pub const SWEEP: &str = "sweep.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] KeyError),
    #[error(transparent)]
    Data(#[from] KgError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("gradient check failed")]
    Gradcheck,
    #[error("{failed} of {total} runs failed; first error: {first}")]
    Partial {
        failed: usize,
        total: usize,
        first: Box<CliError>,
    },
}

impl CliError {
    /// 1 configuration, 2 data or i/o, 3 divergence, 4 gradient check.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Train(TrainError::Config(_) | TrainError::Risk(_)) => 1,
            CliError::Train(TrainError::NonFiniteLoss { .. }) => 3,
            CliError::Gradcheck => 4,
            CliError::Partial { first, .. } => first.exit_code(),
            _ => 2,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path.display().to_string())(e.into()))?;
    write_atomic(path, &bytes).map_err(io_err(path.display().to_string()))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| KeyError::new("workers", e.to_string()).into())
}

fn dataset_paths(s: &Settings) -> Result<DatasetPaths, KeyError> {
    let paths = DatasetPaths::in_dir(s.data_dir()?);
    Ok(match &s.negatives {
        Some(n) => paths.with_negatives(n),
        None => paths,
    })
}

fn input_fingerprints(s: &Settings) -> Result<Vec<Fingerprint>, CliError> {
    let paths = dataset_paths(s)?;
    [
        Some(&paths.train),
        Some(&paths.valid),
        Some(&paths.test),
        paths.negatives.as_ref(),
    ]
    .into_iter()
    .flatten()
    .map(|p| fingerprint(p).map_err(io_err(format!("cannot read {}", p.display()))))
    .collect()
}

/// The evaluation graph plus the views handed to the trainer.
struct Data {
    full: KnowledgeGraph,
    plain: KnowledgeGraph,
    annotated: Option<KnowledgeGraph>,
}

impl Data {
    fn load(s: &Settings) -> Result<Self, CliError> {
        let (full, report) = KnowledgeGraph::load(&dataset_paths(s)?)?;
        info!(?report, "dataset loaded");
        let view = |negatives: &[puda::Triple]| {
            KnowledgeGraph::from_splits(
                full.entities().clone(),
                full.relations().clone(),
                full.train().to_vec(),
                full.valid().to_vec(),
                if s.hide_test { Vec::new() } else { full.test().to_vec() },
                negatives.to_vec(),
            )
        };
        let plain = view(&[])?;
        let annotated = if full.has_true_negatives() {
            Some(view(full.true_negatives())?)
        } else {
            None
        };
        Ok(Data { full, plain, annotated })
    }

    fn training_view(&self, spec: ModeSpec) -> Result<&KnowledgeGraph, KeyError> {
        if !spec.annotated {
            return Ok(&self.plain);
        }
        self.annotated
            .as_ref()
            .ok_or_else(|| KeyError::new("negatives", format!("mode {spec} needs an annotated negatives file")))
    }
}

/// Trains one configuration into `dir` and evaluates it on the test split.
fn run_one(
    data: &Data,
    spec: ModeSpec,
    cfg: &TrainConfig,
    dir: &Path,
    manifest: &Manifest,
) -> Result<EvalReport, CliError> {
    manifest
        .write(dir)
        .map_err(io_err(format!("cannot write manifest in {}", dir.display())))?;
    let graph = data.training_view(spec)?;
    let metrics_path = dir.join(METRICS);
    let metrics = File::create(&metrics_path).map_err(io_err(metrics_path.display().to_string()))?;
    let outcome = train(graph, cfg, &mut JsonLines(BufWriter::new(metrics)))?;
    let report = evaluate(&outcome.params, &data.full, Split::Test)?;
    Checkpoint {
        params: outcome.params,
        entity_labels: data.full.entities().clone(),
        relation_labels: data.full.relations().clone(),
        generator: outcome.generator,
    }
    .save(dir.join(CHECKPOINT))?;
    write_json(&dir.join(EVAL), &report)?;
    info!(dir = %dir.display(), mrr = report.mrr, "run finished");
    Ok(report)
}

fn settings_for(s: &Settings, spec: ModeSpec, seed: u64, pi_p: Option<f64>) -> Settings {
    let mut job = s.clone();
    job.train.mode = spec.mode;
    job.annotated = spec.annotated;
    job.train.seed = seed;
    if let Some(pi) = pi_p {
        job.train.pi_p = pi;
    }
    job
}

pub fn train_cmd(s: &Settings) -> Result<(), CliError> {
    let out = s.out_dir()?.to_path_buf();
    s.data_dir()?;
    prepare_out_dir(&out, CHECKPOINT, s.force)?;
    let manifest = Manifest::new("train", s.train.seed, s.resolved(), input_fingerprints(s)?);
    manifest.write(&out).map_err(io_err("cannot write manifest"))?;
    let data = Data::load(s)?;
    let report = thread_pool(s.workers)?.install(|| run_one(&data, s.mode_spec(), &s.train, &out, &manifest))?;
    print!("{}", report.table("test"));
    Ok(())
}

#[derive(Serialize)]
struct AblationRowJson<'a> {
    mode: &'a str,
    median_mrr: Option<f64>,
    iqr_mrr: Option<f64>,
    median_hits: BTreeMap<usize, f64>,
    runs: &'a [SeedResult],
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct AblationJson<'a> {
    seeds: Vec<u64>,
    rows: Vec<AblationRowJson<'a>>,
}

fn partial(errors: Vec<CliError>, total: usize) -> Result<(), CliError> {
    let failed = errors.len();
    match errors.into_iter().next() {
        None => Ok(()),
        Some(first) => Err(CliError::Partial {
            failed,
            total,
            first: Box::new(first),
        }),
    }
}

pub fn ablate_cmd(s: &Settings) -> Result<(), CliError> {
    let out = s.out_dir()?.to_path_buf();
    s.data_dir()?;
    prepare_out_dir(&out, ABLATION, s.force)?;
    let inputs = input_fingerprints(s)?;
    Manifest::new("ablate", s.train.seed, s.resolved(), inputs.clone())
        .write(&out)
        .map_err(io_err("cannot write manifest"))?;
    let data = Data::load(s)?;
    let seeds: Vec<u64> = (0..s.seeds as u64).map(|i| s.train.seed + i).collect();

    let jobs: Vec<(ModeSpec, u64, PathBuf)> = s
        .modes
        .iter()
        .flat_map(|&spec| {
            let out = &out;
            seeds
                .iter()
                .map(move |&seed| (spec, seed, out.join(spec.to_string()).join(format!("seed-{seed}"))))
        })
        .collect();
    let results: Vec<Result<EvalReport, CliError>> = thread_pool(s.workers)?.install(|| {
        jobs.par_iter()
            .map(|(spec, seed, dir)| {
                std::fs::create_dir_all(dir).map_err(io_err(dir.display().to_string()))?;
                let job = settings_for(s, *spec, *seed, None);
                let manifest = Manifest::new("ablate", *seed, job.resolved(), inputs.clone());
                run_one(&data, *spec, &job.train, dir, &manifest)
            })
            .collect()
    });

    let mut rows: Vec<ModeRow> = s
        .modes
        .iter()
        .map(|spec| ModeRow {
            mode: spec.label(),
            runs: Vec::new(),
            error: None,
        })
        .collect();
    let mut errors = Vec::new();
    for ((spec, seed, _), result) in jobs.iter().zip(results) {
        let row = &mut rows[s.modes.iter().position(|m| m == spec).expect("job mode is listed")];
        match result {
            Ok(report) => row.runs.push(SeedResult { seed: *seed, report }),
            Err(e) => {
                warn!(mode = %spec, seed, error = %e, "run failed");
                row.error.get_or_insert_with(|| format!("seed {seed}: {e}"));
                errors.push(e);
            }
        }
    }

    let summary = AblationJson {
        seeds,
        rows: rows
            .iter()
            .map(|r| AblationRowJson {
                mode: &r.mode,
                median_mrr: r.median_mrr(),
                iqr_mrr: r.iqr_mrr(),
                median_hits: puda::eval::HITS_AT
                    .iter()
                    .filter_map(|&k| r.median_hits(k).map(|h| (k, h)))
                    .collect(),
                runs: &r.runs,
                error: r.error.as_deref(),
            })
            .collect(),
    };
    let table = comparison_table(&rows);
    write_atomic(&out.join("ablation.txt"), table.as_bytes()).map_err(io_err("cannot write ablation.txt"))?;
    write_json(&out.join(ABLATION), &summary)?;
    print!("{table}");
    partial(errors, jobs.len())
}

#[derive(Serialize)]
struct SweepRow {
    pi_p: f64,
    mrr: f64,
    hits_1: f64,
    hits_3: f64,
    hits_10: f64,
}

pub fn sweep_cmd(s: &Settings) -> Result<(), CliError> {
    if !matches!(s.train.mode, Mode::PuR | Mode::Puda) {
        return Err(KeyError::new("mode", format!("prior sweeps run pu-r or puda, not {}", s.train.mode)).into());
    }
    let out = s.out_dir()?.to_path_buf();
    s.data_dir()?;
    prepare_out_dir(&out, SWEEP, s.force)?;
    let inputs = input_fingerprints(s)?;
    Manifest::new("sweep-prior", s.train.seed, s.resolved(), inputs.clone())
        .write(&out)
        .map_err(io_err("cannot write manifest"))?;
    let data = Data::load(s)?;
    let spec = s.mode_spec();

    let results: Vec<Result<EvalReport, CliError>> = thread_pool(s.workers)?.install(|| {
        s.grid
            .par_iter()
            .map(|&pi| {
                let dir = out.join(format!("pi-{pi:e}"));
                std::fs::create_dir_all(&dir).map_err(io_err(dir.display().to_string()))?;
                let job = settings_for(s, spec, s.train.seed, Some(pi));
                let manifest = Manifest::new("sweep-prior", job.train.seed, job.resolved(), inputs.clone());
                run_one(&data, spec, &job.train, &dir, &manifest)
            })
            .collect()
    });

    let csv_path = out.join(SWEEP);
    let tmp = csv_path.with_extension("partial");
    let mut writer = csv::Writer::from_path(&tmp).map_err(|e| io_err("cannot write sweep.csv")(e.into()))?;
    let mut errors = Vec::new();
    println!("{:>10} {:>8} {:>8} {:>8} {:>8}", "pi_p", "MRR", "H@1", "H@3", "H@10");
    for (&pi, result) in s.grid.iter().zip(results) {
        match result {
            Ok(r) => {
                println!(
                    "{pi:>10e} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                    r.mrr,
                    r.hits(1),
                    r.hits(3),
                    r.hits(10)
                );
                writer
                    .serialize(SweepRow {
                        pi_p: pi,
                        mrr: r.mrr,
                        hits_1: r.hits(1),
                        hits_3: r.hits(3),
                        hits_10: r.hits(10),
                    })
                    .map_err(|e| io_err("cannot write sweep.csv")(e.into()))?;
            }
            Err(e) => {
                println!("{pi:>10e} failed: {e}");
                errors.push(e);
            }
        }
    }
    writer.flush().map_err(io_err("cannot write sweep.csv"))?;
    drop(writer);
    std::fs::rename(&tmp, &csv_path).map_err(io_err("cannot write sweep.csv"))?;
    partial(errors, s.grid.len())
}

pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub data: Option<PathBuf>,
    pub split: Split,
    pub out: Option<PathBuf>,
    pub force: bool,
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<(), CliError> {
    let data = args.data.as_deref().ok_or_else(|| KeyError::missing("data"))?;
    let settings = Settings {
        data: Some(data.to_path_buf()),
        out: args.out.clone(),
        ..Settings::default()
    };
    if let Some(out) = &args.out {
        prepare_out_dir(out, EVAL, args.force)?;
        let mut inputs = input_fingerprints(&settings)?;
        inputs.push(fingerprint(&args.checkpoint).map_err(io_err(args.checkpoint.display().to_string()))?);
        let mut config = BTreeMap::from([("data", data.display().to_string())]);
        config.insert("checkpoint", args.checkpoint.display().to_string());
        config.insert("split", format!("{:?}", args.split).to_lowercase());
        Manifest::new("evaluate", 0, config, inputs)
            .write(out)
            .map_err(io_err("cannot write manifest"))?;
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let (graph, _) = KnowledgeGraph::load(&DatasetPaths::in_dir(data))?;
    if ck.entity_labels.labels() != graph.entities().labels()
        || ck.relation_labels.labels() != graph.relations().labels()
    {
        return Err(CliError::Mismatch(format!(
            "checkpoint vocabulary (|E|={}, |R|={}) does not match the dataset (|E|={}, |R|={})",
            ck.entity_labels.len(),
            ck.relation_labels.len(),
            graph.entity_count(),
            graph.relation_count()
        )));
    }
    let report = evaluate(&ck.params, &graph, args.split)?;
    if let Some(out) = &args.out {
        write_json(&out.join(EVAL), &report)?;
    }
    print!("{}", report.table(&format!("{:?}", args.split).to_lowercase()));
    Ok(())
}

pub struct GradcheckArgs {
    pub options: GradcheckOptions,
    pub out: Option<PathBuf>,
}

pub fn gradcheck_cmd(args: &GradcheckArgs) -> Result<(), CliError> {
    let opts = args.options;
    if opts.trials == 0 {
        return Err(KeyError::new("trials", "must be at least 1").into());
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(io_err(out.display().to_string()))?;
        let mut config = BTreeMap::from([("trials", opts.trials.to_string())]);
        config.insert("fault", format!("{:?}", opts.fault));
        Manifest::new("gradcheck", opts.seed, config, Vec::new())
            .write(out)
            .map_err(io_err("cannot write manifest"))?;
    }
    let results = gradcheck::run_all(&opts);
    for r in &results {
        println!("{r}");
    }
    if let Some(out) = &args.out {
        write_json(&out.join("gradcheck.json"), &results)?;
    }
    if results.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(CliError::Gradcheck)
    }
}

pub fn parse_fault(s: &str) -> Result<Fault, String> {
    match s {
        "distmult-sign-flip" => Ok(Fault::DistMultSignFlip),
        other => Err(format!("unknown fault {other:?}")),
    }
}

pub fn synth_cmd(spec: &PlantedSpec, out: &Path, force: bool) -> Result<(), CliError> {
    prepare_out_dir(out, "train.txt", force)?;
    let config = BTreeMap::from([("planted", serde_json::to_string(spec).expect("plain struct serializes"))]);
    Manifest::new("synth", spec.seed, config, Vec::new())
        .write(out)
        .map_err(io_err("cannot write manifest"))?;
    let kg = planted_kg(spec)?;
    kg.graph.write_dir(out).map_err(io_err(out.display().to_string()))?;
    let g = &kg.graph;
    println!(
        "wrote {}: |E|={} |R|={} train={} valid={} test={}",
        out.display(),
        g.entity_count(),
        g.relation_count(),
        g.train().len(),
        g.valid().len(),
        g.test().len()
    );
    Ok(())
}
