use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dgbench_core::autodiff::{DType, Element};
use dgbench_core::datasets::{
    ingest_manifest, load_dataset, make_lodo_plans, make_split, save_dataset, synth_domain_dataset, Assignment,
    ClassRegistry, SplitPlan, WindowDataset,
};
use dgbench_core::dg::train_loop;
use dgbench_core::eval::{
    evaluate_model, export_embeddings, write_report, ComplexityReport, MetricsReport, Report, Section,
};
use dgbench_core::models::{checkpoint_dtype, load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig};
use dgbench_core::seeds::SeedPlan;
use dgbench_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Protocol, RunConfig, SplitConfig};

pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Seed of repeat `r`; repeat 0 uses the run seed itself.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add(r as u64)
}

fn plan_indices(data: &WindowDataset, plan: &SplitPlan, a: Assignment) -> Vec<usize> {
    (0..data.windows.len())
        .filter(|&i| plan.get(&data.windows[i].recording) == Some(a))
        .collect()
}

/// Plan stored with the dataset's windows.
fn stored_plan(data: &WindowDataset) -> Result<SplitPlan> {
    let mut assignments = BTreeMap::new();
    let mut sources = Vec::new();
    let mut targets = Vec::new();
    for w in &data.windows {
        let a = w.split.ok_or_else(|| {
            Error::Config(format!(
                "window `{}` has no split; name held-out domains with split.targets",
                w.id
            ))
        })?;
        if assignments.insert(w.recording.clone(), a).is_some_and(|prev| prev != a) {
            return Err(Error::Data(format!(
                "recording `{}` is split across assignments",
                w.recording
            )));
        }
        let list = if a == Assignment::Ood {
            &mut targets
        } else {
            &mut sources
        };
        if !list.contains(&w.domain) {
            list.push(w.domain.clone());
        }
    }
    Ok(SplitPlan {
        sources,
        targets,
        assignments,
        seed: 0,
    })
}

fn check_domains(data: &WindowDataset, names: &[String]) -> Result<()> {
    match names.iter().find(|d| !data.info.domains.contains(d)) {
        Some(d) => Err(Error::Config(format!(
            "domain `{d}` not in dataset (has {:?})",
            data.info.domains
        ))),
        None => Ok(()),
    }
}

pub fn resolve_split(data: &WindowDataset, split: &SplitConfig, seed: u64) -> Result<SplitPlan> {
    if split.targets.is_empty() {
        if !split.sources.is_empty() {
            return Err(Error::Config("split.sources given without split.targets".into()));
        }
        return stored_plan(data);
    }
    check_domains(data, &split.targets)?;
    check_domains(data, &split.sources)?;
    let sources: Vec<&str> = if split.sources.is_empty() {
        data.info
            .domains
            .iter()
            .filter(|d| !split.targets.contains(d))
            .map(String::as_str)
            .collect()
    } else {
        split.sources.iter().map(String::as_str).collect()
    };
    let targets: Vec<&str> = split.targets.iter().map(String::as_str).collect();
    let used: Vec<(String, String)> = data
        .recordings()
        .into_iter()
        .filter(|(_, d)| sources.contains(&d.as_str()) || targets.contains(&d.as_str()))
        .collect();
    make_split(&used, &sources, &targets, seed)
}

pub fn preprocess(manifest: &Path, class_map: Option<&Path>, cfg: &RunConfig, out: &Path) -> Result<String> {
    let registry = class_map.map(ClassRegistry::load_ecg).transpose()?;
    let seeds = SeedPlan::derive(cfg.seed);
    let (data, report) = ingest_manifest(manifest, registry.as_ref(), seeds.data)?;
    create_dir(out)?;
    save_dataset(out, &data)?;
    write_json(&out.join(INGEST_REPORT_FILE), &report)?;
    cfg.write_snapshot(out)?;
    Ok(format!(
        "{} recordings ({} excluded), {} windows of {}x{}",
        report.recordings,
        report.excluded.len(),
        report.windows,
        data.info.channels,
        data.info.length
    ))
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let mut synth = cfg.synth.clone();
    synth.seed = SeedPlan::derive(cfg.seed).data;
    let data = synth_domain_dataset(&synth)?;
    create_dir(out)?;
    save_dataset(out, &data)?;
    cfg.write_snapshot(out)?;
    Ok(format!(
        "{} windows over domains {:?}",
        data.windows.len(),
        data.info.domains
    ))
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    seed: u64,
    seeds: SeedPlan,
    best_epoch: usize,
    best_val_loss: f64,
    steps: u64,
    train_windows: usize,
    val_windows: usize,
}

struct RunOutput<T> {
    /// Best-epoch weights with optimizer state.
    best: Checkpoint<T>,
    summary: TrainSummary,
    report: Report,
}

fn eval_sections<T: Element>(
    model: &mut Model<T>,
    data: &WindowDataset,
    plan: &SplitPlan,
    group: &str,
    splits: &[Assignment],
    threshold: f64,
) -> Result<Vec<Section>> {
    let mut sections = Vec::new();
    for &a in splits {
        let idx = plan_indices(data, plan, a);
        if idx.is_empty() {
            continue;
        }
        sections.push(Section {
            group: group.to_string(),
            split: split_label(a).into(),
            metrics: evaluate_model(model, data, &idx, threshold)?,
        });
    }
    Ok(sections)
}

fn split_label(a: Assignment) -> &'static str {
    match a {
        Assignment::Test => "intra",
        other => other.as_str(),
    }
}

fn complexity_of(model: &ModelConfig, data: &WindowDataset, dtype: DType) -> Result<ComplexityReport> {
    ComplexityReport::compute(model, [data.info.channels, data.info.length], dtype)
}

/// Trains one model on `plan` with `seed`, restores the best epoch and scores
/// it on the intra-domain test split and the held-out domains.
fn run_once<T: Element>(
    data: &WindowDataset,
    plan: &SplitPlan,
    cfg: &RunConfig,
    seed: u64,
    title: String,
) -> Result<RunOutput<T>> {
    let seeds = SeedPlan::derive(seed);
    let model_cfg = cfg
        .model
        .resolve(data.info.channels, data.num_classes(), data.info.task)?;
    let mut model = Model::<T>::build(&model_cfg, &mut ChaCha8Rng::seed_from_u64(seeds.init))?;
    let train = plan_indices(data, plan, Assignment::Train);
    let val = plan_indices(data, plan, Assignment::Val);
    let outcome = train_loop(&mut model, data, &train, &val, &cfg.trainer_for(seed))?;
    outcome.best.restore_into(&mut model)?;
    let group = cfg.trainer.algorithm.as_str();
    let sections = eval_sections(
        &mut model,
        data,
        plan,
        group,
        &[Assignment::Test, Assignment::Ood],
        cfg.eval.threshold,
    )?;
    let report = Report {
        title,
        sections,
        complexity: Some(complexity_of(&model_cfg, data, T::DTYPE)?),
        run_log: Some(outcome.log),
    };
    let summary = TrainSummary {
        seed,
        seeds,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        steps: outcome.steps,
        train_windows: train.len(),
        val_windows: val.len(),
    };
    Ok(RunOutput {
        best: outcome.best,
        summary,
        report,
    })
}

fn train_typed<T: Element>(data: &WindowDataset, plan: &SplitPlan, cfg: &RunConfig, out: &Path) -> Result<String> {
    let title = format!("{} on {}", cfg.trainer.algorithm.as_str(), plan.targets.join("+"));
    let run = run_once::<T>(data, plan, cfg, cfg.seed, title)?;
    save_checkpoint(&out.join(CHECKPOINT_DIR), &run.best)?;
    write_report(&run.report, out)?;
    write_json(&out.join(TRAIN_SUMMARY_FILE), &run.summary)?;
    Ok(summary_line(&run.report))
}

fn summary_line(report: &Report) -> String {
    report
        .sections
        .iter()
        .map(|s| {
            let m = &s.metrics;
            match m.accuracy {
                Some(acc) => format!("{} accuracy {:.2}%", s.split, 100.0 * acc),
                None => format!(
                    "{} macro-F1 {:.3} (all) / {:.3} (predicted)",
                    s.split, m.macro_f1_all, m.macro_f1_predicted
                ),
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn train(dataset: &Path, cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = load_dataset(dataset)?;
    let plan = resolve_split(&data, &cfg.split, SeedPlan::derive(cfg.seed).data)?;
    create_dir(out)?;
    write_json(&out.join(SPLIT_FILE), &plan)?;
    cfg.write_snapshot(out)?;
    match cfg.dtype {
        DType::F32 => train_typed::<f32>(&data, &plan, cfg, out),
        DType::F64 => train_typed::<f64>(&data, &plan, cfg, out),
    }
}

/// Which splits `evaluate` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Intra,
    Ood,
    Both,
}

impl EvalSplit {
    fn assignments(self) -> &'static [Assignment] {
        match self {
            EvalSplit::Intra => &[Assignment::Test],
            EvalSplit::Ood => &[Assignment::Ood],
            EvalSplit::Both => &[Assignment::Test, Assignment::Ood],
        }
    }
}

fn evaluate_typed<T: Element>(
    data: &WindowDataset,
    plan: &SplitPlan,
    run_dir: &Path,
    which: EvalSplit,
    cfg: &RunConfig,
    out: &Path,
) -> Result<String> {
    let ckpt = load_checkpoint::<T>(&run_dir.join(CHECKPOINT_DIR))?;
    let mut model = ckpt.to_model()?;
    let group = ckpt
        .meta
        .get("algorithm")
        .and_then(|v| v.as_str())
        .unwrap_or("model")
        .to_string();
    let sections = eval_sections(&mut model, data, plan, &group, which.assignments(), cfg.eval.threshold)?;
    if sections.is_empty() {
        return Err(Error::Data("no windows in the requested splits".into()));
    }
    if cfg.eval.embeddings {
        let idx: Vec<usize> = which
            .assignments()
            .iter()
            .flat_map(|&a| plan_indices(data, plan, a))
            .collect();
        export_embeddings(&mut model, data, &idx, &out.join(EMBEDDINGS_FILE))?;
    }
    let report = Report {
        title: format!("{group} evaluated on {}", plan.targets.join("+")),
        sections,
        complexity: Some(complexity_of(&ckpt.model, data, T::DTYPE)?),
        run_log: None,
    };
    write_report(&report, out)?;
    Ok(summary_line(&report))
}

pub fn evaluate(run_dir: &Path, dataset: &Path, which: EvalSplit, cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = load_dataset(dataset)?;
    let plan: SplitPlan = read_json(&run_dir.join(SPLIT_FILE))?;
    create_dir(out)?;
    cfg.write_snapshot(out)?;
    match checkpoint_dtype(&run_dir.join(CHECKPOINT_DIR))? {
        DType::F32 => evaluate_typed::<f32>(&data, &plan, run_dir, which, cfg, out),
        DType::F64 => evaluate_typed::<f64>(&data, &plan, run_dir, which, cfg, out),
    }
}

/// `(directory name, plan)` of each protocol iteration.
pub fn benchmark_plans(data: &WindowDataset, cfg: &RunConfig) -> Result<Vec<(String, SplitPlan)>> {
    let seed = SeedPlan::derive(cfg.seed).data;
    match cfg.benchmark.protocol {
        Protocol::Fixed => Ok(vec![("fixed".into(), resolve_split(data, &cfg.split, seed)?)]),
        Protocol::Lodo => {
            let domains = if cfg.benchmark.domains.is_empty() {
                data.info.domains.clone()
            } else {
                check_domains(data, &cfg.benchmark.domains)?;
                cfg.benchmark.domains.clone()
            };
            let names: Vec<&str> = domains.iter().map(String::as_str).collect();
            let recs: Vec<(String, String)> = data
                .recordings()
                .into_iter()
                .filter(|(_, d)| domains.contains(d))
                .collect();
            let plans = make_lodo_plans(&recs, &names, seed)?;
            Ok(domains.iter().map(|d| format!("iter_{d}")).zip(plans).collect())
        }
    }
}

fn repeat_dir(out: &Path, iteration: &str, r: usize) -> PathBuf {
    out.join(iteration).join(format!("repeat_{r:02}"))
}

fn benchmark_typed<T: Element>(
    data: &WindowDataset,
    plans: &[(String, SplitPlan)],
    cfg: &RunConfig,
    out: &Path,
) -> Result<String> {
    let repeats = cfg.benchmark.repeats;
    let jobs: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|i| (0..repeats).map(move |r| (i, r)))
        .collect();
    let results: Vec<Vec<Section>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let (name, plan) = &plans[i];
            let dir = repeat_dir(out, name, r);
            let title = format!("{} {name} repeat {r}", cfg.trainer.algorithm.as_str());
            let run = run_once::<T>(data, plan, cfg, repeat_seed(cfg.seed, r), title)?;
            create_dir(&dir)?;
            write_report(&run.report, &dir)?;
            write_json(&dir.join(TRAIN_SUMMARY_FILE), &run.summary)?;
            if cfg.benchmark.save_checkpoints {
                save_checkpoint(&dir.join(CHECKPOINT_DIR), &run.best)?;
            }
            Ok(run.report.sections)
        })
        .collect::<Result<_>>()?;

    let mut sections = Vec::new();
    for (i, (name, _)) in plans.iter().enumerate() {
        let runs = &results[i * repeats..(i + 1) * repeats];
        let group = name.strip_prefix("iter_").unwrap_or(name);
        for split in ["intra", "ood"] {
            let reports: Vec<MetricsReport> = runs
                .iter()
                .filter_map(|secs| secs.iter().find(|s| s.split == split))
                .map(|s| s.metrics.clone())
                .collect();
            if reports.is_empty() {
                continue;
            }
            sections.push(Section {
                group: group.to_string(),
                split: split.into(),
                metrics: MetricsReport::merge_repeats(&reports)?,
            });
        }
    }
    let model_cfg = cfg
        .model
        .resolve(data.info.channels, data.num_classes(), data.info.task)?;
    let report = Report {
        title: format!(
            "{} benchmark, {} iteration(s) x {repeats} repeat(s)",
            cfg.trainer.algorithm.as_str(),
            plans.len()
        ),
        sections,
        complexity: Some(complexity_of(&model_cfg, data, T::DTYPE)?),
        run_log: None,
    };
    write_report(&report, out)?;
    Ok(format!(
        "{} runs; summary in {}",
        jobs.len(),
        out.join(dgbench_core::eval::TABLE_FILE).display()
    ))
}

pub fn benchmark(dataset: &Path, cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = load_dataset(dataset)?;
    let plans = benchmark_plans(&data, cfg)?;
    create_dir(out)?;
    cfg.write_snapshot(out)?;
    for (name, plan) in &plans {
        create_dir(&out.join(name))?;
        write_json(&out.join(name).join(SPLIT_FILE), plan)?;
    }
    match cfg.dtype {
        DType::F32 => benchmark_typed::<f32>(&data, &plans, cfg, out),
        DType::F64 => benchmark_typed::<f64>(&data, &plans, cfg, out),
    }
}

pub fn complexity(cfg: &RunConfig, out: &Path) -> Result<String> {
    let c = &cfg.complexity;
    let model_cfg = cfg.model.resolve(c.input_shape[0], c.classes, c.task)?;
    let report = ComplexityReport::compute(&model_cfg, c.input_shape, cfg.dtype)?;
    create_dir(out)?;
    cfg.write_snapshot(out)?;
    let line = format!(
        "{} parameters, {} MACs per sample, ~{} bytes peak",
        report.params, report.macs_per_sample, report.peak_bytes
    );
    write_report(
        &Report {
            title: "complexity".into(),
            sections: Vec::new(),
            complexity: Some(report),
            run_log: None,
        },
        out,
    )?;
    Ok(line)
}
