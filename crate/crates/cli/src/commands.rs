use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use pani::dataset::{
    gen_bandit1d, gen_chain_env, gen_pinwheel, gen_rings, load_jsonl, save_jsonl, ChainEnv, ChainParams, DatasetSource,
    PinwheelParams, RingsParams, Simulator, TransitionDataset,
};
use pani::learn::{
    agent_ood_probability, evaluate_policy, load_agent, q_landscape, save_agent, train, write_landscape_csv, Agent,
    TrainConfig, METRICS_CSV_HEADER,
};
use pani::namdp::{
    build_limit_namdp, build_namdp, count_modes, value_iteration, verify, write_model_csv, ActionGrid, NamdpModel,
};
use pani::noise::{NoiseFamily, NoiseSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::args::{
    Command, DataKind, EvalArgs, EvalWhat, GenDataArgs, NamdpArgs, TrainArgs, TrainOverrides, VerifyArgs,
};
use crate::echo::{file_sha256, sidecar, Echo};
use crate::{sweep, usage, CliError};

pub fn dispatch(cli: crate::Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Namdp(a) => namdp(&a),
        Command::Verify(a) => verify_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Sweep(a) => sweep::sweep_cmd(&a),
    }
}

/// Parses a TOML config file; syntax errors and unknown keys are usage errors.
pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

pub fn load_dataset(path: &Path) -> Result<TransitionDataset, CliError> {
    load_jsonl(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// The simulator matching a generated dataset, when one exists.
pub fn simulator_for(dataset: &TransitionDataset) -> Option<ChainEnv> {
    match dataset.source() {
        Some(DatasetSource::Chain(p)) => ChainEnv::new(p.clone()).ok(),
        _ => None,
    }
}

fn parse_family(s: &str) -> Result<NoiseFamily, CliError> {
    s.parse().map_err(|e: pani::noise::NoiseError| usage(e.to_string()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GenFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    rings: Option<RingsParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pinwheel: Option<PinwheelParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<ChainParams>,
}

#[derive(Serialize)]
struct GenEcho<'a> {
    command: &'static str,
    kind: &'a str,
    #[serde(flatten)]
    params: GenFile,
}

fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let file: GenFile = read_config(a.config.as_deref())?;
    let mut params = GenFile::default();
    let (kind, dataset) = match a.kind {
        DataKind::Bandit1d => ("bandit1d", gen_bandit1d()),
        DataKind::Rings => {
            let mut p = file.rings.unwrap_or_default();
            p.seed = a.seed.unwrap_or(p.seed);
            let d = gen_rings(&p).map_err(|e| usage(e.to_string()))?;
            params.rings = Some(p);
            ("rings", d)
        }
        DataKind::Pinwheel => {
            let mut p = file.pinwheel.unwrap_or_default();
            p.seed = a.seed.unwrap_or(p.seed);
            let d = gen_pinwheel(&p).map_err(|e| usage(e.to_string()))?;
            params.pinwheel = Some(p);
            ("pinwheel", d)
        }
        DataKind::Chain => {
            let mut p = file.chain.unwrap_or_default();
            p.seed = a.seed.unwrap_or(p.seed);
            let (_, d) = gen_chain_env(&p).map_err(|e| usage(e.to_string()))?;
            params.chain = Some(p);
            ("chain", d)
        }
    };
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_jsonl(&dataset, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Echo::new(&GenEcho { command: "gen-data", kind, params })?.write(&sidecar(&a.out))?;
    println!("wrote {} transitions to {}", dataset.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamdpFile {
    gamma: Option<f64>,
    limit: Option<bool>,
    #[serde(default)]
    noise: NoiseSection,
    #[serde(default)]
    grid: GridSection,
}

#[derive(Serialize)]
struct NamdpEcho {
    command: &'static str,
    data: String,
    data_sha256: String,
    gamma: f64,
    limit: bool,
    grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    family: Option<NoiseFamily>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
}

#[derive(Serialize)]
struct NamdpSummary {
    states: usize,
    grid_points: usize,
    gamma: f64,
    limit: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    family: Option<NoiseFamily>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    modes: Option<usize>,
    value_iterations: usize,
    max_q: Vec<f64>,
}

fn resolve_sigma(noise: &NoiseSection, family: NoiseFamily) -> Result<Option<f64>, CliError> {
    let given = [noise.sigma.is_some(), noise.log_sigma.is_some(), noise.variance.is_some()];
    if given.iter().filter(|&&g| g).count() > 1 {
        return Err(usage("give only one of sigma, log_sigma and variance"));
    }
    if let Some(v) = noise.variance {
        if !matches!(family, NoiseFamily::Gaussian | NoiseFamily::Laplace) {
            return Err(usage("variance is only defined for gaussian and laplace noise"));
        }
        return Ok(Some(v.sqrt()));
    }
    Ok(noise.sigma.or(noise.log_sigma.map(f64::exp)))
}

fn namdp(a: &NamdpArgs) -> Result<(), CliError> {
    let file: NamdpFile = read_config(a.config.as_deref())?;
    let dataset = load_dataset(&a.data)?;
    let default_gamma = match dataset.source() {
        Some(DatasetSource::Chain(p)) => p.gamma,
        _ => 0.99,
    };
    let gamma = a.gamma.or(file.gamma).unwrap_or(default_gamma);
    let limit = a.limit || file.limit.unwrap_or(false);
    let points = a.grid.or(file.grid.points).unwrap_or(101);
    let mut noise = file.noise.clone();
    if a.sigma.is_some() || a.log_sigma.is_some() || a.variance.is_some() {
        noise.sigma = a.sigma;
        noise.log_sigma = a.log_sigma;
        noise.variance = a.variance;
    }
    if let Some(f) = &a.family {
        noise.family = Some(f.clone());
    }
    let family = parse_family(noise.family.as_deref().unwrap_or("gaussian"))?;
    let grid = ActionGrid::regular(dataset.bounds().clone(), points).map_err(|e| usage(e.to_string()))?;
    let (model, spec): (NamdpModel, Option<NoiseSpec>) = if limit {
        (build_limit_namdp(&dataset, &grid, gamma).map_err(|e| usage(e.to_string()))?, None)
    } else {
        let sigma = resolve_sigma(&noise, family)?
            .ok_or_else(|| usage("a noise level is required (sigma, log-sigma or variance) unless --limit"))?;
        let spec = NoiseSpec::new(family, sigma, dataset.bounds().clone()).map_err(|e| usage(e.to_string()))?;
        (build_namdp(&dataset, &spec, &grid, gamma).map_err(|e| usage(e.to_string()))?, Some(spec))
    };
    let vi = value_iteration(&model, 1e-10, 1_000_000).context("value iteration")?;
    let modes = match &spec {
        Some(spec) if dataset.action_dim() == 1 => Some(count_modes(&dataset, spec, &grid).context("counting modes")?),
        _ => None,
    };
    create_dir(&a.out)?;
    let echo = Echo::new(&NamdpEcho {
        command: "namdp",
        data: a.data.display().to_string(),
        data_sha256: file_sha256(&a.data)?,
        gamma,
        limit,
        grid_points: points,
        family: spec.as_ref().map(|s| s.family()),
        sigma: spec.as_ref().map(|s| s.sigma()),
    })?;
    echo.write(&a.out.join("config.toml"))?;
    let mut w = BufWriter::new(File::create(a.out.join("model.csv"))?);
    writeln!(w, "{}", echo.csv_comment())?;
    write_model_csv(&model, Some(&vi.q), &mut w)?;
    let summary = NamdpSummary {
        states: model.states().len(),
        grid_points: grid.len(),
        gamma,
        limit,
        family: spec.as_ref().map(|s| s.family()),
        sigma: spec.as_ref().map(|s| s.sigma()),
        modes,
        value_iterations: vi.residuals.len(),
        max_q: vi.q.max_values(),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    match modes {
        Some(m) => println!("{} states x {} actions, {m} mode(s)", model.states().len(), grid.len()),
        None => println!("{} states x {} actions", model.states().len(), grid.len()),
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct VerifyEcho {
    command: &'static str,
    suite: String,
    seeds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
}

fn verify_cmd(a: &VerifyArgs) -> Result<(), CliError> {
    let suite: verify::Suite = a.suite.parse().map_err(usage)?;
    let opts = verify::VerifyOptions { tolerance: a.tolerance, seeds: a.seeds };
    let reports = verify::run(suite, &opts).context("running verification")?;
    for r in &reports {
        let asserted = r.checks.iter().filter(|c| c.asserted).count();
        let failed = r.failures().count();
        println!(
            "{}: {} ({}/{} checks passed)",
            r.suite,
            if r.passed { "PASS" } else { "FAIL" },
            asserted - failed,
            asserted
        );
        for c in r.failures() {
            println!("  failed {}: {:e} > {:e}", c.name, c.value, c.tolerance);
        }
    }
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        write_json(out, &reports)?;
        Echo::new(&VerifyEcho { command: "verify", suite: a.suite.clone(), seeds: a.seeds, tolerance: a.tolerance })?
            .write(&sidecar(out))?;
    }
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Failed("verification checks failed".into()))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub train: Option<TrainConfig>,
}

/// Applies command-line overrides on top of a base config.
pub fn apply_overrides(mut c: TrainConfig, o: &TrainOverrides) -> Result<TrainConfig, CliError> {
    if let Some(a) = &o.algorithm {
        c.algorithm = a.parse().map_err(usage)?;
    }
    if let Some(f) = &o.family {
        c.noise_family = parse_family(f)?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = o.$field { c.$field = v; } )* };
    }
    set!(
        log_sigma,
        penalty_coef,
        steps,
        batch,
        lr,
        hidden_dim,
        hidden_layers,
        bc_alpha,
        seed,
        log_interval,
        eval_episodes,
        ood_samples
    );
    if o.no_noise {
        c.inject_noise = false;
    }
    if o.stochastic_actor {
        c.stochastic_actor = true;
    }
    c.validate().map_err(|e| usage(e.to_string()))?;
    c.noise_spec(&pani::noise::ActionBox::symmetric(1, 1.0).expect("unit box")).map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

#[derive(Serialize)]
pub struct TrainEcho<'a> {
    pub command: &'static str,
    pub data: String,
    pub data_sha256: String,
    pub train: &'a TrainConfig,
}

/// Trains one agent into `out`: config.toml, metrics.csv (appended per interval) and agent.txt.
pub fn run_training(
    dataset: &TransitionDataset,
    config: &TrainConfig,
    echo: &Echo,
    out: &Path,
) -> Result<Vec<pani::learn::MetricsRow>, CliError> {
    create_dir(out)?;
    echo.write(&out.join("config.toml"))?;
    let mut metrics = BufWriter::new(File::create(out.join("metrics.csv"))?);
    writeln!(metrics, "{}\n{METRICS_CSV_HEADER}", echo.csv_comment())?;
    metrics.flush()?;
    let mut sim = simulator_for(dataset);
    let mut write_err = None;
    let outcome = train(dataset, config, sim.as_mut().map(|s| s as &mut dyn Simulator), &mut |row| {
        if write_err.is_none() {
            if let Err(e) = writeln!(metrics, "{}", row.csv_line()).and_then(|_| metrics.flush()) {
                write_err = Some(e);
            }
        }
    })
    .context("training")?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_agent(&outcome.agent, Some(config), out.join("agent.txt")).context("saving agent")?;
    Ok(outcome.metrics)
}

fn train_cmd(a: &TrainArgs) -> Result<(), CliError> {
    let file: TrainFile = read_config(a.config.as_deref())?;
    let config = apply_overrides(file.train.unwrap_or_default(), &a.overrides)?;
    let dataset = load_dataset(&a.data)?;
    let echo = Echo::new(&TrainEcho {
        command: "train",
        data: a.data.display().to_string(),
        data_sha256: file_sha256(&a.data)?,
        train: &config,
    })?;
    let rows = run_training(&dataset, &config, &echo, &a.out)?;
    if let Some(last) = rows.last() {
        println!("{}", last.csv_line());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalEcho {
    command: &'static str,
    what: String,
    agent: String,
    agent_sha256: String,
    data: String,
    data_sha256: String,
    samples: usize,
    episodes: usize,
    grid: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<Vec<f64>>,
    seed: u64,
}

#[derive(Serialize)]
struct OodReport {
    probability: f64,
    half_width: f64,
    samples: usize,
}

#[derive(Serialize)]
struct ReturnReport {
    discounted: f64,
    undiscounted: f64,
    episodes: usize,
    optimal: f64,
}

fn parse_state(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| usage(format!("--state `{x}`: {e}")))).collect()
}

fn check_agent(agent: &Agent, dataset: &TransitionDataset) -> Result<(), CliError> {
    if agent.state_dim() != dataset.state_dim() || agent.action_dim() != dataset.action_dim() {
        return Err(usage("agent and dataset dimensions differ"));
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<(), CliError> {
    let (agent, _) = load_agent(&a.agent).map_err(|e| usage(format!("{}: {e}", a.agent.display())))?;
    let dataset = load_dataset(&a.data)?;
    check_agent(&agent, &dataset)?;
    let state = a.state.as_deref().map(parse_state).transpose()?;
    let what = match a.what {
        EvalWhat::Ood => "ood",
        EvalWhat::Landscape => "landscape",
        EvalWhat::Return => "return",
    };
    let echo = Echo::new(&EvalEcho {
        command: "eval",
        what: what.into(),
        agent: a.agent.display().to_string(),
        agent_sha256: file_sha256(&a.agent)?,
        data: a.data.display().to_string(),
        data_sha256: file_sha256(&a.data)?,
        samples: a.samples,
        episodes: a.episodes,
        grid: a.grid,
        state: state.clone(),
        seed: a.seed,
    })?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    match a.what {
        EvalWhat::Ood => {
            if a.samples == 0 {
                return Err(usage("--samples must be at least 1"));
            }
            let e = agent_ood_probability(&agent, &dataset, a.samples, &mut rng).context("estimating")?;
            println!("P(OOD overestimation) = {:.5} +/- {:.5}", e.probability, e.half_width);
            write_json(
                &a.out,
                &OodReport { probability: e.probability, half_width: e.half_width, samples: e.samples },
            )?;
        }
        EvalWhat::Landscape => {
            let s = state.unwrap_or_else(|| dataset.transitions()[0].s.clone());
            if s.len() != dataset.state_dim() {
                return Err(usage("--state has the wrong dimension"));
            }
            let grid = ActionGrid::regular(dataset.bounds().clone(), a.grid).map_err(|e| usage(e.to_string()))?;
            let q = q_landscape(&agent, &s, &grid).context("evaluating critics")?;
            let mut w = BufWriter::new(File::create(&a.out)?);
            writeln!(w, "{}", echo.csv_comment())?;
            write_landscape_csv(&grid, &q, &mut w).context("writing landscape")?;
            w.flush()?;
            println!("wrote {} grid points to {}", grid.len(), a.out.display());
        }
        EvalWhat::Return => {
            let mut sim = simulator_for(&dataset).ok_or_else(|| usage("return evaluation needs a chain dataset"))?;
            let optimal = sim.optimal_return();
            let mut policy = |s: &[f64]| agent.act(s).expect("dimensions checked");
            let r = evaluate_policy(&mut sim, &mut policy, a.episodes, &mut rng);
            println!("discounted return {:.5} (optimal {:.5})", r.discounted, optimal);
            write_json(
                &a.out,
                &ReturnReport { discounted: r.discounted, undiscounted: r.undiscounted, episodes: a.episodes, optimal },
            )?;
        }
    }
    echo.write(&sidecar(&a.out))?;
    Ok(())
}

/// Resolves `path` relative to the directory of `base`.
pub fn relative_to(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(path)
    }
}
