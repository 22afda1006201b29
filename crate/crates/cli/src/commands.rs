use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crowd_irl::baselines::{best_of_n, ConstantVelocity, EbmPolicy, GamePolicy, GmmPolicy, Predictor};
use crowd_irl::eval::{
    compare, emit_report, evaluate, read_csv, split_60_40, svg_overlay, trajectory_entropy, MetricReport,
    ReportFormat,
};
use crowd_irl::irl::{multi_agent_irl, single_agent_maxent_irl};
use crowd_irl::pipeline::{
    combinatorial_scenarios, filter_tracks, group_by_direction, parse_frames, preset, read_demos,
    synth_generate, tracks_from_frames, write_demos, Category, DemoSet,
};
use crowd_irl::rng::{named_substream, substream};
use crowd_irl::{CostParams, ScenarioSpec, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{Baseline, CliError, Cli, Command, Format, Method, RunConfig};

type Result<T> = std::result::Result<T, CliError>;

/// Learned or ground-truth weights as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaFile {
    pub method: String,
    pub thetas: Vec<[f64; 3]>,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
}

impl ThetaFile {
    pub fn params(&self) -> Result<Vec<CostParams>> {
        self.thetas
            .iter()
            .map(|w| CostParams::new(*w).map_err(CliError::from))
            .collect()
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush()
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: crowd_irl::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        crowd_irl::Error::Format { location, reason } => {
            CliError::Input(format!("{}: {location}: {reason}", path.display()))
        }
        other => other.into(),
    })
}

fn load_demos(path: &Path) -> Result<DemoSet> {
    with_path(path, read_demos(open(path)?))
}

fn load_theta(path: &Path) -> Result<ThetaFile> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Input(e.to_string()))?;
    writeln!(w).map_err(|e| CliError::Input(e.to_string()))?;
    finish(w, path)
}

fn broadcast(thetas: Vec<CostParams>, k: usize) -> Result<Vec<CostParams>> {
    match thetas.len() {
        1 => Ok(vec![thetas[0]; k]),
        n if n == k => Ok(thetas),
        n => Err(CliError::Input(format!("{n} weight vectors for {k} agents"))),
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cli.global.apply(&mut cfg);
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    let diagnostics = cli.global.diagnostics;
    match &cli.command {
        Command::Preprocess { input, out_dir } => preprocess(&cfg, input, out_dir),
        Command::Synth { preset: name, n, theta, out } => synth(&cfg, name.as_deref(), *n, theta.as_deref(), out, diagnostics),
        Command::Train {
            demos,
            method,
            out,
            trace_out,
        } => train(&cfg, demos, *method, out, trace_out.as_deref(), diagnostics),
        Command::Rollout {
            theta,
            demos,
            preset: name,
            n,
            out,
        } => rollout(&cfg, theta, demos.as_deref(), name.as_deref(), *n, out, diagnostics),
        Command::Eval {
            demos,
            baseline,
            theta,
            best_of,
            format,
            out,
        } => eval(&cfg, demos, *baseline, theta.as_deref(), *best_of, *format, out),
        Command::Plot {
            reports,
            demos,
            theta,
            out,
        } => plot(&cfg, reports, demos.as_deref(), theta.as_deref(), out),
        Command::Compare { reports, out } => compare_cmd(reports, out.as_deref()),
    }
}

fn preprocess(cfg: &RunConfig, input: &Path, out_dir: &Path) -> Result<()> {
    let frames = with_path(input, parse_frames(open(input)?))?;
    let tracks = tracks_from_frames(&frames, &cfg.preprocess)?;
    let raw = tracks.len();
    let tracks = filter_tracks(tracks, &cfg.preprocess);
    log::info!("{raw} tracks, {} after filtering", tracks.len());
    let groups = group_by_direction(&tracks);
    let n = cfg.catalog.tracks_per_direction;
    let mut usable = Vec::new();
    for name in &cfg.catalog.categories {
        let cat: Category = name.parse()?;
        if cat.0.iter().all(|d| groups.get(d).map_or(0, Vec::len) >= n) {
            usable.push(cat);
        } else {
            log::warn!("category {name}: fewer than {n} tracks for some direction, skipped");
        }
    }
    let catalog = combinatorial_scenarios(&groups, &usable, n.max(1), cfg.preprocess.min_track_len)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out_dir.display())))?;

    let dt = cfg.preprocess.resample_dt;
    let mut counts = serde_json::Map::new();
    for name in &cfg.catalog.categories {
        let entries: Vec<_> = catalog.by_category(name).collect();
        counts.insert(name.clone(), entries.len().into());
        println!("{name}: {}", entries.len());
        if entries.is_empty() {
            continue;
        }
        let trajectories = entries
            .iter()
            .map(|e| e.trajectory(dt))
            .collect::<crowd_irl::Result<Vec<_>>>()?;
        let tracks: Vec<&Vec<String>> = entries.iter().map(|e| &e.tracks).collect();
        let set = DemoSet::new(
            trajectories,
            None,
            json!({"source": "preprocess", "category": name, "tracks": tracks}),
        )?;
        let path = out_dir.join(format!("{name}.demo"));
        let mut w = create(&path)?;
        write_demos(&mut w, &set)?;
        finish(w, &path)?;
    }
    println!("total: {}", catalog.entries.len());
    let summary = json!({
        "frames": frames.len(),
        "tracks": raw,
        "filtered_tracks": tracks.len(),
        "categories": counts,
        "total": catalog.entries.len(),
        "entries": catalog.entries.iter().map(|e| json!({"category": e.category, "tracks": e.tracks})).collect::<Vec<_>>(),
    });
    write_json(&out_dir.join("catalog.json"), &summary)
}

fn report_diagnostics(label: &str, d: &crowd_irl::SolverDiagnostics) {
    eprintln!("{label}: {} conditioned stages, {} outer iterations", d.conditioned_stages(), d.outer_iters);
    for e in &d.events {
        eprintln!(
            "  agent {} t={} min eig {:.3e} shift {:.3e}",
            e.agent, e.t, e.huu_min_eig, e.shift
        );
    }
}

fn scene(cfg: &RunConfig, name: Option<&str>) -> Result<ScenarioSpec> {
    Ok(preset(name.unwrap_or(&cfg.synth.preset))?)
}

fn synth(
    cfg: &RunConfig,
    name: Option<&str>,
    n: Option<usize>,
    theta: Option<&Path>,
    out: &Path,
    diagnostics: bool,
) -> Result<()> {
    let spec = scene(cfg, name)?;
    let thetas = match theta {
        Some(p) => load_theta(p)?.params()?,
        None => cfg
            .synth
            .theta_star
            .iter()
            .map(|w| CostParams::new(*w).map_err(CliError::from))
            .collect::<Result<Vec<_>>>()?,
    };
    let thetas = broadcast(thetas, spec.k())?;
    let n = n.unwrap_or(cfg.synth.n_demos);
    let set = synth_generate(&thetas, &spec, n, cfg.seed, &cfg.solver, &cfg.proximity)?;
    if diagnostics {
        let sol = crowd_irl::game::solve_game(&spec, &thetas, &cfg.proximity, &cfg.solver)?;
        report_diagnostics("synth", &sol.diagnostics);
    }
    let mut w = create(out)?;
    write_demos(&mut w, &set)?;
    finish(w, out)
}

/// Training and validation demonstrations under the configured split.
fn split(cfg: &RunConfig, set: &DemoSet) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let all = &set.trajectories;
    if !cfg.eval.split || all.len() < 2 {
        return (all.clone(), all.clone());
    }
    let (tr, va) = split_60_40(all.len(), cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&j| all[j].clone()).collect::<Vec<_>>();
    (pick(&tr), pick(&va))
}

fn train(
    cfg: &RunConfig,
    demos: &Path,
    method: Method,
    out: &Path,
    trace_out: Option<&Path>,
    diagnostics: bool,
) -> Result<()> {
    let set = load_demos(demos)?;
    let spec = set.scenario()?;
    let (train_set, _) = split(cfg, &set);
    let tcfg = cfg.training();
    let outcome = match method {
        Method::Mairl => multi_agent_irl(&train_set, &spec, &tcfg)?,
        Method::Sairl => single_agent_maxent_irl(&train_set, &spec, &tcfg)?,
    };
    let file = ThetaFile {
        method: method.label().into(),
        thetas: outcome.thetas.iter().map(|t| t.weights).collect(),
        converged: outcome.converged,
        iterations: outcome.iterations,
        seed: cfg.seed,
    };
    write_json(out, &file)?;
    if let Some(path) = trace_out {
        let mut w = create(path)?;
        for r in &outcome.trace.records {
            serde_json::to_writer(&mut w, r).map_err(|e| CliError::Input(e.to_string()))?;
            writeln!(w).map_err(|e| CliError::Input(e.to_string()))?;
        }
        finish(w, path)?;
    }
    if diagnostics {
        let total: usize = outcome.trace.records.iter().map(|r| r.conditioned_stages).sum();
        eprintln!(
            "train: {} updates, {total} conditioned stages in total",
            outcome.trace.records.len()
        );
    }
    let gaps = outcome.trace.aggregate_gap_norms();
    println!(
        "{}: {} iterations, gap {:.6} -> {:.6}, converged: {}",
        method.label(),
        outcome.iterations,
        gaps.first().copied().unwrap_or(0.0),
        gaps.last().copied().unwrap_or(0.0),
        outcome.converged
    );
    if outcome.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(outcome.iterations))
    }
}

fn rollout(
    cfg: &RunConfig,
    theta: &Path,
    demos: Option<&Path>,
    name: Option<&str>,
    n: usize,
    out: &Path,
    diagnostics: bool,
) -> Result<()> {
    let spec = match demos {
        Some(p) => load_demos(p)?.scenario()?,
        None => scene(cfg, name)?,
    };
    let thetas = broadcast(load_theta(theta)?.params()?, spec.k())?;
    let set = synth_generate(&thetas, &spec, n, cfg.seed, &cfg.solver, &cfg.proximity)?;
    if diagnostics {
        let sol = crowd_irl::game::solve_game(&spec, &thetas, &cfg.proximity, &cfg.solver)?;
        report_diagnostics("rollout", &sol.diagnostics);
    }
    let mut w = create(out)?;
    write_demos(&mut w, &set)?;
    finish(w, out)
}

/// Scene of a single demonstration: its own start state and the recorded
/// goals, or its final positions when none are recorded.
fn demo_scene(set: &DemoSet, demo: &Trajectory) -> Result<ScenarioSpec> {
    let goals = match &set.header.goals {
        Some(g) => g.clone(),
        None => demo
            .states
            .last()
            .expect("validated")
            .agents
            .iter()
            .map(|a| a.position())
            .collect(),
    };
    Ok(ScenarioSpec::new(demo.states[0].clone(), goals, demo.horizon(), demo.dt)?)
}

fn game_policy(cfg: &RunConfig, theta: Option<&Path>, label: &str, k: usize) -> Result<GamePolicy> {
    let path = theta.ok_or_else(|| CliError::Input(format!("--theta is required for {label}")))?;
    let file = load_theta(path)?;
    if file.method != label {
        log::warn!("{} holds {} weights, evaluating as {label}", path.display(), file.method);
    }
    Ok(GamePolicy {
        label: label.into(),
        thetas: broadcast(file.params()?, k)?,
        cfg: cfg.training(),
    })
}

fn build_predictor(
    cfg: &RunConfig,
    baseline: Baseline,
    theta: Option<&Path>,
    set: &DemoSet,
    train_set: &[Trajectory],
) -> Result<Box<dyn Predictor>> {
    let k = set.header.k;
    Ok(match baseline {
        Baseline::Cv => Box::new(ConstantVelocity),
        Baseline::Gmm => Box::new(GmmPolicy::fit(train_set, named_substream(cfg.seed, "gmm"), &cfg.eval.gmm)?),
        Baseline::Ebm => {
            let goals = train_set
                .iter()
                .map(|d| demo_scene(set, d).map(|s| s.goals))
                .collect::<Result<Vec<_>>>()?;
            let u_max = crowd_irl::traj::DEFAULT_U_MAX;
            Box::new(EbmPolicy::fit(train_set, &goals, u_max)?)
        }
        Baseline::Mairl => Box::new(game_policy(cfg, theta, "mairl", k)?),
        Baseline::Sairl => Box::new(game_policy(cfg, theta, "sairl", k)?),
    })
}

fn scenario_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().replace(',', "_"))
        .unwrap_or_else(|| "scenario".into())
}

fn eval(
    cfg: &RunConfig,
    demos: &Path,
    baseline: Baseline,
    theta: Option<&Path>,
    best_of: Option<usize>,
    format: Format,
    out: &Path,
) -> Result<()> {
    let set = load_demos(demos)?;
    if set.trajectories.is_empty() {
        return Err(CliError::Input(format!("{}: no demonstrations", demos.display())));
    }
    let (train_set, val_set) = split(cfg, &set);
    let predictor = build_predictor(cfg, baseline, theta, &set, &train_set)?;
    let n = best_of.unwrap_or(cfg.eval.best_of);
    let eval_seed = named_substream(cfg.seed, "eval");
    let preds = val_set
        .par_iter()
        .enumerate()
        .map(|(d, gt)| {
            let spec = demo_scene(&set, gt)?;
            Ok(best_of_n(predictor.as_ref(), &spec, gt, n, substream(eval_seed, &[d as u64]))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(predictor.name(), &scenario_label(demos), &preds, &val_set)?;
    let entropy = trajectory_entropy(&val_set, cfg.eval.entropy_bins)?;
    println!(
        "{}: ADE {:.4} m, FDE {:.4} m, EFE {:.4} m over {} trajectories (heading entropy {:.3} bits, {} bins)",
        report.method,
        report.ade,
        report.fde,
        report.efe,
        val_set.len(),
        entropy.bits,
        entropy.bins
    );
    let fmt = match format {
        Format::Csv => ReportFormat::Csv,
        Format::Jsonl => ReportFormat::Jsonl,
        Format::Svg => ReportFormat::Svg,
    };
    let mut w = create(out)?;
    emit_report(&mut w, &[report], fmt, &cfg.plot)?;
    finish(w, out)
}

fn read_jsonl_reports(path: &Path) -> Result<Vec<MetricReport>> {
    use std::io::BufRead;
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            CliError::Input(format!("{}: line {}: {e}", path.display(), n + 1))
        })?);
    }
    Ok(out)
}

fn plot(
    cfg: &RunConfig,
    reports: &[PathBuf],
    demos: Option<&Path>,
    theta: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let svg = match demos {
        Some(path) => {
            let set = load_demos(path)?;
            let preds = match theta {
                Some(_) => {
                    let policy = game_policy(cfg, theta, "mairl", set.header.k)?;
                    set.trajectories
                        .par_iter()
                        .map(|d| policy.predict(&demo_scene(&set, d)?).map_err(CliError::from))
                        .collect::<Result<Vec<_>>>()?
                }
                None => Vec::new(),
            };
            svg_overlay(&set.trajectories, &preds, &cfg.plot)
        }
        None => {
            if reports.is_empty() {
                return Err(CliError::Input("plot needs --reports or --demos".into()));
            }
            let mut all = Vec::new();
            for p in reports {
                all.extend(read_jsonl_reports(p)?);
            }
            let mut buf = Vec::new();
            emit_report(&mut buf, &all, ReportFormat::Svg, &cfg.plot)?;
            String::from_utf8(buf).expect("svg is utf-8")
        }
    };
    let mut w = create(out)?;
    w.write_all(svg.as_bytes())
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.display())))?;
    finish(w, out)
}

fn compare_cmd(reports: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for p in reports {
        rows.extend(with_path(p, read_csv(open(p)?))?);
    }
    let ranking = compare(&rows);
    let mut table = String::from("rank,method,ade_m,fde_m,scenarios\n");
    for (j, r) in ranking.iter().enumerate() {
        table.push_str(&format!("{},{},{},{},{}\n", j + 1, r.method, r.ade, r.fde, r.scenarios));
    }
    print!("{table}");
    if let Some(path) = out {
        let mut w = create(path)?;
        w.write_all(table.as_bytes())
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        finish(w, path)?;
    }
    Ok(())
}
