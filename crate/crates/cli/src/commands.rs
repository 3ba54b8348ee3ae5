use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use par::chem::{gen_synthetic, load_dataset, LoadOptions, PropertyDataset};
use par::meta::{dump_task, evaluate, load_checkpoint, mean_std, meta_train, save_checkpoint, EvalReport};
use par::rng::{self, Stream};
use par::Error;
use serde::Serialize;

use crate::failure::{checkpoint_error, io_error, Failure};
use crate::{DataArgs, DumpArgs, EvalArgs, GenSynthArgs, RunArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const DUMP_FILE: &str = "dump.json";

fn setup(run: &RunArgs) -> Result<(), Failure> {
    if run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(run.threads)
            .build_global()
            .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&run.out_dir).map_err(|e| io_error(&run.out_dir, e))
}

fn load(data: &DataArgs, min_per_class: usize) -> Result<PropertyDataset, Failure> {
    let split = data.split.parse().map_err(Failure::from)?;
    let ds = load_dataset(
        &data.data,
        &LoadOptions {
            split,
            min_per_class,
        },
    )?;
    if ds.skipped_rows > 0 {
        log::warn!("{}: skipped {} unparsable rows", data.data.display(), ds.skipped_rows);
    }
    Ok(ds)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn checkpoint_path(explicit: &Option<PathBuf>, run: &RunArgs) -> PathBuf {
    explicit.clone().unwrap_or_else(|| run.out_dir.join(CHECKPOINT_FILE))
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = args.config.resolve()?;
    setup(&args.run)?;
    let ds = load(&args.data, cfg.k)?;
    log::info!(
        "{} molecules, {} meta-train and {} meta-test properties; ablation {}",
        ds.num_molecules(),
        ds.meta_train.len(),
        ds.meta_test.len(),
        cfg.ablation
    );
    let (store, history) = meta_train::<f64>(&ds, &cfg)?;
    let ckpt = args.run.out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &store, &cfg)?;
    let hist = args.run.out_dir.join(HISTORY_FILE);
    let mut buf = Vec::new();
    history.write_jsonl(&mut buf)?;
    fs::write(&hist, buf).map_err(|e| io_error(&hist, e))?;
    match history.best_episode {
        Some(ep) => log::info!("kept parameters from episode {ep} (validation on {:?})", history.validation_task),
        None => log::info!("no validation property; kept the final parameters"),
    }
    println!("{}\n{}", ckpt.display(), hist.display());
    Ok(())
}

/// `7`, `0,3,7` or the inclusive range `0..9`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::config(format!("bad --seeds value {text:?}"));
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

#[derive(Serialize)]
struct SeedReport {
    seed: u64,
    #[serde(flatten)]
    report: EvalReport,
}

#[derive(Serialize)]
struct EvalFile {
    runs: Vec<SeedReport>,
    /// Per-task AUC averaged over seeds.
    per_task_auc: BTreeMap<String, f64>,
    /// Over every task and seed.
    mean: f64,
    std: f64,
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    let seeds = parse_seeds(&args.seeds)?;
    setup(&args.run)?;
    let (store, mut cfg) = load_checkpoint::<f64>(&checkpoint_path(&args.checkpoint, &args.run)).map_err(checkpoint_error)?;
    if let Some(k) = args.k {
        cfg.k = k;
        cfg.validate()?;
    }
    let ds = load(&args.data, cfg.k)?;
    let mut runs = Vec::new();
    for &seed in &seeds {
        let report = evaluate(&ds, &store, &cfg, seed)?;
        for (task, auc) in &report.per_task_auc {
            println!("seed {seed} {task} {auc:.4}");
        }
        println!("seed {seed} mean {:.4} std {:.4}", report.mean, report.std);
        runs.push(SeedReport { seed, report });
    }
    let mut per_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &runs {
        for (task, &auc) in &r.report.per_task_auc {
            per_task.entry(task.clone()).or_default().push(auc);
        }
    }
    let (mean, std) = mean_std(per_task.values().flatten().copied());
    let file = EvalFile {
        runs,
        per_task_auc: per_task
            .into_iter()
            .map(|(t, v)| (t, v.iter().sum::<f64>() / v.len() as f64))
            .collect(),
        mean,
        std,
    };
    println!("all seeds mean {mean:.4} std {std:.4}");
    let path = args.run.out_dir.join(EVAL_FILE);
    write(&path, &serde_json::to_string_pretty(&file).map_err(Error::from)?)
}

pub fn gen_synth(args: GenSynthArgs) -> Result<(), Failure> {
    let ds = gen_synthetic(args.tasks, args.mols, args.k, args.seed)?;
    let path = match args.out {
        Some(p) => p,
        None => {
            fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
            args.out_dir.join("synthetic.csv")
        }
    };
    ds.save_csv(&path)?;
    println!("{}", path.display());
    Ok(())
}

/// Support sets for the dump command: `id` plus one 0/1 column per task;
/// empty cells leave the molecule out of that task.
fn read_support(path: &Path) -> Result<Vec<(String, Vec<(String, bool)>)>, Failure> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Failure::data(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let id_col = header
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| Failure::data(format!("{}: missing 'id' column", path.display())))?;
    let mut tasks: Vec<(String, Vec<(String, bool)>)> = header
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != id_col)
        .map(|(_, name)| (name.clone(), Vec::new()))
        .collect();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::data(e.to_string()))?;
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        let mut t = 0;
        for (c, cell) in record.iter().enumerate() {
            if c == id_col {
                continue;
            }
            match cell.trim() {
                "" => {}
                "0" => tasks[t].1.push((id.clone(), false)),
                "1" => tasks[t].1.push((id.clone(), true)),
                other => {
                    return Err(Failure::data(format!(
                        "{} row {}: label {other:?} is not 0 or 1",
                        path.display(),
                        row + 2
                    )))
                }
            }
            t += 1;
        }
    }
    Ok(tasks)
}

pub fn dump(args: DumpArgs) -> Result<(), Failure> {
    setup(&args.run)?;
    let (store, cfg) = load_checkpoint::<f64>(&checkpoint_path(&args.checkpoint, &args.run)).map_err(checkpoint_error)?;
    let ds = load(&args.data, cfg.k)?;
    let tasks = read_support(&args.support)?;
    let index: BTreeMap<&str, usize> = ds.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut dumps = Vec::new();
    for (t, (task, members)) in tasks.iter().enumerate() {
        let mut mols = Vec::new();
        for (id, _) in members {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Failure::data(format!("unknown molecule id {id:?} in task {task}")))?;
            mols.push(&ds.molecules[i]);
        }
        let ids: Vec<String> = members.iter().map(|(id, _)| id.clone()).collect();
        let labels: Vec<bool> = members.iter().map(|&(_, y)| y).collect();
        let mut r = rng::stream(args.seed, Stream::Dropout, t as u64);
        dumps.push(dump_task(&store, &cfg, task, &ids, &mols, &labels, args.full_graph, &mut r)?);
    }
    let path = args.run.out_dir.join(DUMP_FILE);
    write(&path, &serde_json::to_string_pretty(&dumps).map_err(Error::from)?)?;
    println!("{}", path.display());
    Ok(())
}
