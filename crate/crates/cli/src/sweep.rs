//! Noise-family by log-sigma by seed grids of training runs.
//!
//! Each run lives in `runs/<family>_ls<log_sigma>_s<seed>/`. A run is complete
//! once its `result.json` exists; `--resume` reuses such runs untouched.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use pani::dataset::TransitionDataset;
use pani::learn::TrainConfig;
use pani::noise::NoiseFamily;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::SweepArgs;
use crate::commands::{load_dataset, read_config, relative_to, run_training, write_json, TrainEcho};
use crate::echo::{file_sha256, Echo};
use crate::{usage, CliError};

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dataset path, relative to the config file.
    pub data: PathBuf,
    pub families: Vec<NoiseFamily>,
    pub log_sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    sweep: Option<SweepSection>,
    train: Option<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub families: Vec<NoiseFamily>,
    pub log_sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub base: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunResult {
    pub family: NoiseFamily,
    pub log_sigma: f64,
    pub seed: u64,
    /// Discounted return at the last logged step, when a simulator exists.
    pub final_return: Option<f64>,
    pub final_ood: Option<f64>,
    pub final_critic_loss: f64,
}

/// Mean and standard error of the mean (sample standard deviation over sqrt(n)).
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(xs: &[f64]) -> Option<MeanSe> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let se = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Some(MeanSe { mean, se })
}

#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub family: NoiseFamily,
    pub log_sigma: f64,
    pub runs: usize,
    pub ret: Option<MeanSe>,
    pub ood: Option<MeanSe>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub cells: Vec<Cell>,
    /// Per family, the cell with the lowest mean return.
    pub worst: Vec<Cell>,
}

impl Summary {
    pub fn worst_of(&self, family: NoiseFamily) -> Option<&Cell> {
        self.worst.iter().find(|c| c.family == family)
    }
}

pub fn run_dir_name(family: NoiseFamily, log_sigma: f64, seed: u64) -> String {
    format!("{family}_ls{log_sigma}_s{seed}")
}

fn load_result(dir: &Path) -> Option<RunResult> {
    let text = fs::read_to_string(dir.join("result.json")).ok()?;
    serde_json::from_str(&text).ok()
}

/// Runs every cell of the plan with at most `jobs` concurrent runs.
pub fn run_sweep(
    plan: &SweepPlan,
    dataset: &TransitionDataset,
    data_label: &str,
    data_sha256: &str,
    out: &Path,
    jobs: usize,
    resume: bool,
) -> Result<Summary, CliError> {
    let mut tasks = Vec::new();
    for &family in &plan.families {
        for &log_sigma in &plan.log_sigmas {
            for &seed in &plan.seeds {
                let config = TrainConfig { noise_family: family, log_sigma, seed, ..plan.base.clone() };
                config.validate().map_err(|e| usage(e.to_string()))?;
                config.noise_spec(dataset.bounds()).map_err(|e| usage(e.to_string()))?;
                tasks.push(config);
            }
        }
    }
    fs::create_dir_all(out.join("runs")).with_context(|| format!("creating {}", out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().context("building thread pool")?;
    let results: Vec<RunResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|config| {
                let dir = out.join("runs").join(run_dir_name(config.noise_family, config.log_sigma, config.seed));
                if resume {
                    if let Some(r) = load_result(&dir) {
                        return Ok(r);
                    }
                }
                let echo = Echo::new(&TrainEcho {
                    command: "train",
                    data: data_label.to_string(),
                    data_sha256: data_sha256.to_string(),
                    train: config,
                })?;
                let rows = run_training(dataset, config, &echo, &dir)?;
                let last = rows.last().expect("at least one metrics row");
                let r = RunResult {
                    family: config.noise_family,
                    log_sigma: config.log_sigma,
                    seed: config.seed,
                    final_return: last.eval_return,
                    final_ood: last.ood_probability,
                    final_critic_loss: last.critic_loss,
                };
                write_json(&dir.join("result.json"), &r)?;
                Ok(r)
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    Ok(summarize(plan, &results))
}

pub fn summarize(plan: &SweepPlan, results: &[RunResult]) -> Summary {
    let mut cells = Vec::new();
    for &family in &plan.families {
        for &log_sigma in &plan.log_sigmas {
            let runs: Vec<&RunResult> =
                results.iter().filter(|r| r.family == family && r.log_sigma == log_sigma).collect();
            let rets: Vec<f64> = runs.iter().filter_map(|r| r.final_return).collect();
            let oods: Vec<f64> = runs.iter().filter_map(|r| r.final_ood).collect();
            cells.push(Cell { family, log_sigma, runs: runs.len(), ret: mean_se(&rets), ood: mean_se(&oods) });
        }
    }
    let worst = plan
        .families
        .iter()
        .filter_map(|&f| {
            cells
                .iter()
                .filter(|c| c.family == f && c.ret.is_some())
                .min_by(|a, b| a.ret.unwrap().mean.total_cmp(&b.ret.unwrap().mean))
                .cloned()
        })
        .collect();
    Summary { cells, worst }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_summary_csv<W: Write>(summary: &Summary, echo: &Echo, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", echo.csv_comment())?;
    writeln!(w, "family,log_sigma,runs,mean_return,se_return,mean_ood,se_ood")?;
    for c in &summary.cells {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            c.family,
            c.log_sigma,
            c.runs,
            opt(c.ret.map(|m| m.mean)),
            opt(c.ret.map(|m| m.se)),
            opt(c.ood.map(|m| m.mean)),
            opt(c.ood.map(|m| m.se))
        )?;
    }
    w.flush()
}

#[derive(Serialize)]
struct SweepEcho<'a> {
    command: &'static str,
    data: String,
    data_sha256: String,
    families: &'a [NoiseFamily],
    log_sigmas: &'a [f64],
    seeds: &'a [u64],
    train: &'a TrainConfig,
}

pub fn sweep_cmd(a: &SweepArgs) -> Result<(), CliError> {
    let file: SweepFile = read_config(Some(&a.config))?;
    let section = file.sweep.ok_or_else(|| usage("the sweep config needs a [sweep] section"))?;
    if section.families.is_empty() || section.log_sigmas.is_empty() || section.seeds.is_empty() {
        return Err(usage("families, log_sigmas and seeds must be nonempty"));
    }
    let data_path = relative_to(&a.config, &section.data);
    let dataset = load_dataset(&data_path)?;
    let data_sha = file_sha256(&data_path)?;
    let plan = SweepPlan {
        families: section.families,
        log_sigmas: section.log_sigmas,
        seeds: section.seeds,
        base: file.train.unwrap_or_default(),
    };
    let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let label = data_path.display().to_string();
    let echo = Echo::new(&SweepEcho {
        command: "sweep",
        data: label.clone(),
        data_sha256: data_sha.clone(),
        families: &plan.families,
        log_sigmas: &plan.log_sigmas,
        seeds: &plan.seeds,
        train: &plan.base,
    })?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    echo.write(&a.out.join("config.toml"))?;
    let summary = run_sweep(&plan, &dataset, &label, &data_sha, &a.out, jobs, a.resume)?;
    write_summary_csv(&summary, &echo, BufWriter::new(File::create(a.out.join("summary.csv"))?))?;
    write_json(&a.out.join("summary.json"), &summary)?;
    for c in &summary.worst {
        if let Some(r) = c.ret {
            println!("{}: worst log_sigma {} mean return {:.4} +/- {:.4}", c.family, c.log_sigma, r.mean, r.se);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let m = mean_se(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_se(&[7.0]).unwrap().se, 0.0);
        assert!(mean_se(&[]).is_none());
    }

    #[test]
    fn worst_cell_per_family() {
        let plan = SweepPlan {
            families: vec![NoiseFamily::Gaussian, NoiseFamily::Hybrid],
            log_sigmas: vec![-1.0, -5.0],
            seeds: vec![0],
            base: TrainConfig::default(),
        };
        let r = |family, log_sigma, v| RunResult {
            family,
            log_sigma,
            seed: 0,
            final_return: Some(v),
            final_ood: None,
            final_critic_loss: 0.0,
        };
        let s = summarize(
            &plan,
            &[
                r(NoiseFamily::Gaussian, -1.0, 0.2),
                r(NoiseFamily::Gaussian, -5.0, 0.9),
                r(NoiseFamily::Hybrid, -1.0, 0.8),
                r(NoiseFamily::Hybrid, -5.0, 0.7),
            ],
        );
        assert_eq!(s.cells.len(), 4);
        assert_eq!(s.worst_of(NoiseFamily::Gaussian).unwrap().log_sigma, -1.0);
        assert_eq!(s.worst_of(NoiseFamily::Hybrid).unwrap().log_sigma, -5.0);
    }

    #[test]
    fn run_names_are_distinct() {
        assert_eq!(run_dir_name(NoiseFamily::Hybrid, -5.0, 3), "hybrid_ls-5_s3");
        assert_ne!(run_dir_name(NoiseFamily::Hybrid, -0.5, 0), run_dir_name(NoiseFamily::Hybrid, -5.0, 0));
    }
}
