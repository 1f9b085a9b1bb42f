use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use netloc::analysis::{bench_alm1, bench_gcn_layer, bench_mgal_layer, spectral_analysis, verify_theorems, ScalingFit};
use netloc::eval::{
    export_attention_heatmaps, export_threshold_histogram, heatmaps_csv, rerun_cell, rmse_agents, run_experiment,
    run_timing, write_experiment, CellResult, Condition, ExperimentSpec,
};
use netloc::graphcore::hard_threshold;
use netloc::models::{Model, ModelKind};
use netloc::num::checkpoint::Checkpoint;
use netloc::scenario::{generate_scenario, measure_distances, parse_scenario, serialize_scenario, MeasurementMatrix, Scenario};
use netloc::train::{anchor_loss, train};

use crate::config::{self, Overrides, RunConfig};
use crate::error::CliError;
use crate::{BenchKind, Cli, Cmd, ConfigArgs, ExportCmd};

type Result<T> = std::result::Result<T, CliError>;

fn load_cfg(c: &ConfigArgs, mut ov: Overrides) -> Result<RunConfig> {
    ov.flag("seed", c.seed.map(|s| s as i64));
    ov.sets = c.set.clone();
    config::load(c.config.as_deref(), &ov)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Effective config next to a single-file output: `out.csv` -> `out.config.toml`.
fn echo_beside(out: &Path, cfg: &RunConfig) -> Result<()> {
    write(&out.with_extension("config.toml"), cfg.to_toml())
}

fn read_scenario(path: &Path) -> Result<(Scenario, MeasurementMatrix)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text).map_err(|e| CliError::new(crate::error::Category::Io, format!("{}: {e}", path.display())))
}

fn read_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let ck = Checkpoint::from_bytes(&bytes).map_err(|e| CliError::new(crate::error::Category::Io, format!("{}: {e}", path.display())))?;
    Ok(Model::from_checkpoint(&ck)?)
}

fn parse_kind(s: &str) -> Result<ModelKind> {
    s.parse().map_err(|e: netloc::models::ModelError| CliError::usage(e.to_string()))
}

fn parse_noise(s: &str) -> Result<Condition> {
    let bad = || CliError::usage(format!("--noise expects SIGMA2:PB, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok(Condition::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| ((lo + k as f64 * step) * 1e6).round() / 1e6).collect()
}

fn base_spec(name: &str, cfg: &RunConfig, models: Vec<ModelKind>, noise: Vec<Condition>) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        models,
        noise,
        anchors: vec![cfg.anchors],
        thresholds: vec![cfg.t_h],
        nodes: vec![cfg.n],
        area: (cfg.area[0], cfg.area[1]),
        seeds: cfg.seeds.clone(),
        train: cfg.train(),
    }
}

fn progress(total: usize) -> impl Fn(&CellResult) + Sync {
    let done = std::sync::atomic::AtomicUsize::new(0);
    move |r: &CellResult| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
        let c = &r.cell;
        match &r.outcome {
            Ok(o) => eprintln!("[{k}/{total}] {} {} seed {}: rmse {:.4} ({:.1}s)", c.model, c.label(), c.seed, o.rmse, o.seconds),
            Err(e) => eprintln!("[{k}/{total}] {} {} seed {}: failed: {e}", c.model, c.label(), c.seed),
        }
    }
}

fn experiment(results: &Path, spec: &ExperimentSpec, cfg: &RunConfig, jobs: usize) -> Result<netloc::eval::ResultTable> {
    let total = spec.cells().len();
    let table = run_experiment(spec, jobs, &progress(total))?;
    let dir = write_experiment(results, spec, &table)?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    let failed = table.failures().count();
    if failed > 0 {
        eprintln!("warning: {failed} of {total} cells failed; see {}", dir.join("cells.csv").display());
    }
    eprintln!("wrote {}", dir.display());
    Ok(table)
}

pub fn run(cli: Cli) -> Result<()> {
    let results = cli.results;
    match cli.cmd {
        Cmd::Generate { cfg, n, anchors, area, sigma2, pb, out } => {
            let mut ov = Overrides::default();
            ov.flag("n", n.map(|v| v as i64));
            ov.flag("anchors", anchors.map(|v| v as i64));
            ov.flag("area", area);
            ov.flag("sigma2", sigma2);
            ov.flag("p_b", pb);
            let cfg = load_cfg(&cfg, ov)?;
            let s = generate_scenario(cfg.n, cfg.anchors, (cfg.area[0], cfg.area[1]), cfg.seed)?;
            let x = measure_distances(&s, &cfg.noise(), cfg.seed)?;
            write(&out, serialize_scenario(&s, &x))?;
            echo_beside(&out, &cfg)?;
            println!("wrote {} ({} nodes, {} anchors)", out.display(), s.n(), s.n_anchors);
        }
        Cmd::Train { cfg, model, input, out } => {
            let kind = parse_kind(&model)?;
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let (s, x) = read_scenario(&input)?;
            let t = train(kind, &s, &x, &cfg.train())?;
            let dir = out.unwrap_or_else(|| results.join("train").join(kind.name()));
            write(&dir.join("model.ckpt"), t.model.to_checkpoint().to_bytes())?;
            write(&dir.join("metrics.csv"), t.metrics.to_csv())?;
            write(&dir.join("metrics.timing.csv"), t.metrics.to_timed_csv())?;
            write(&dir.join("config.toml"), cfg.to_toml())?;
            println!(
                "{kind}: agent rmse {:.6} m, anchor loss {:.6}, {:.2} s -> {}",
                t.metrics.final_rmse,
                t.metrics.final_anchor_loss,
                t.metrics.seconds,
                dir.display()
            );
        }
        Cmd::Eval { cfg, checkpoint, input, out } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let model = read_model(&checkpoint)?;
            let (s, x) = read_scenario(&input)?;
            if s.n() != model.n {
                return Err(CliError::config(format!("checkpoint has {} nodes, scenario has {}", model.n, s.n())));
            }
            let pred = model.predict(&model.prepare(&x)?)?;
            let (rmse, loss) = (rmse_agents(&pred, &s), anchor_loss(&pred, &s));
            let dir = out.unwrap_or_else(|| results.join("eval"));
            let mut csv = String::from("node,x,y,anchor\n");
            for i in 0..s.n() {
                let _ = writeln!(csv, "{i},{:.17e},{:.17e},{}", pred[[i, 0]], pred[[i, 1]], u8::from(i < s.n_anchors));
            }
            write(&dir.join("predictions.csv"), csv)?;
            write(&dir.join("eval.csv"), format!("model,rmse,anchor_loss\n{},{rmse:.17e},{loss:.17e}\n", model.kind))?;
            write(&dir.join("config.toml"), cfg.to_toml())?;
            println!("{}: agent rmse {rmse:.6} m, anchor loss {loss:.6}", model.kind);
        }
        Cmd::NoiseTable { cfg, jobs, models } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let models = if models.is_empty() {
                ModelKind::ALL.to_vec()
            } else {
                models.iter().map(|m| parse_kind(m)).collect::<Result<_>>()?
            };
            let spec = base_spec("noise-table", &cfg, models, netloc::eval::TABLE_CONDITIONS.to_vec());
            let table = experiment(&results, &spec, &cfg, jobs.jobs)?;
            print!("{}", table.to_text());
        }
        Cmd::SweepThreshold { cfg, jobs, thresholds, noise } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let noise = if noise.is_empty() {
                vec![cfg.condition()]
            } else {
                noise.iter().map(|s| parse_noise(s)).collect::<Result<_>>()?
            };
            let mut spec = base_spec("sweep-threshold", &cfg, vec![ModelKind::Gcn], noise);
            spec.thresholds = if thresholds.is_empty() { grid(0.2, 4.0, 0.2) } else { thresholds };
            let table = experiment(&results, &spec, &cfg, jobs.jobs)?;
            print!("{}", table.summary_csv());
        }
        Cmd::SweepAnchors { cfg, jobs, grid: anchors, noise } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let noise = if noise.is_empty() {
                vec![Condition::new(0.1, 0.1), Condition::new(0.1, 0.3)]
            } else {
                noise.iter().map(|s| parse_noise(s)).collect::<Result<_>>()?
            };
            let mut spec = base_spec("sweep-anchors", &cfg, vec![ModelKind::Mlp, ModelKind::Gcn], noise);
            spec.anchors = if anchors.is_empty() { (1..=8).map(|k| 20 * k).collect() } else { anchors };
            let table = experiment(&results, &spec, &cfg, jobs.jobs)?;
            print!("{}", table.summary_csv());
        }
        Cmd::Spectral { cfg, input, k, out } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let (s, x) = read_scenario(&input)?;
            let a = hard_threshold(&x, cfg.t_h).map_err(|e| CliError::config(e.to_string()))?.norm_adjacency_dense();
            let noise = &x.x - &s.true_distances();
            let rep = spectral_analysis(&a, &noise, k)?;
            let out = out.unwrap_or_else(|| results.join("spectral").join("spectral.csv"));
            write(&out, rep.to_csv())?;
            echo_beside(&out, &cfg)?;
            println!(
                "K={k}: high-band (lambda > 1) energy ratio {:.6}, filter path gap {:.3e} -> {}",
                rep.band_energy_ratio(1.0),
                rep.path_gap(),
                out.display()
            );
        }
        Cmd::VerifyTheorems { cfg, out } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let rep = verify_theorems(cfg.seed)?;
            let text = rep.to_text();
            let out = out.unwrap_or_else(|| results.join("verify-theorems").join("report.txt"));
            write(&out, &text)?;
            echo_beside(&out, &cfg)?;
            print!("{text}");
            if !rep.all_passed() {
                let n = rep.checks.iter().filter(|c| !c.passed).count();
                return Err(CliError::numeric(format!("{n} theorem check(s) failed")));
            }
        }
        Cmd::Bench { cfg, kind, sizes, reps, out } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let out = out.unwrap_or_else(|| results.join("bench").join(format!("{kind:?}.csv").to_lowercase()));
            let as_n = |v: &[f64]| v.iter().map(|&x| x as usize).collect::<Vec<_>>();
            let thresholds = if sizes.is_empty() { vec![0.5, 1.0, 1.5, 2.0] } else { sizes.clone() };
            let fit: ScalingFit = match kind {
                BenchKind::Alm1 => {
                    let ns = if sizes.is_empty() { vec![250, 500, 1000, 2000] } else { as_n(&sizes) };
                    bench_alm1(&ns, reps, cfg.seed)?
                }
                BenchKind::Gcn => bench_gcn_layer(cfg.n, &thresholds, 64, 64, reps, cfg.seed)?,
                BenchKind::Mgal => bench_mgal_layer(cfg.n, &thresholds, 64, cfg.mgal_hidden, cfg.f_att, reps, cfg.seed)?,
                BenchKind::Training => {
                    let ns = if sizes.is_empty() { vec![500, 1000] } else { as_n(&sizes) };
                    let mut spec = base_spec("timing", &cfg, vec![ModelKind::Mlp, ModelKind::Gcn], vec![cfg.condition()]);
                    spec.nodes = ns;
                    spec.seeds = vec![cfg.seed];
                    let table = run_timing(&spec)?;
                    write(&out, table.timing_csv())?;
                    echo_beside(&out, &cfg)?;
                    print!("{}", table.timing_csv());
                    return Ok(());
                }
            };
            write(&out, fit.to_csv())?;
            echo_beside(&out, &cfg)?;
            print!("{}", fit.to_csv());
            println!("log-log slope {:.4}, last/first time ratio {:.3}", fit.slope, fit.time_ratio());
        }
        Cmd::Export { what } => export(what)?,
    }
    Ok(())
}

fn export(what: ExportCmd) -> Result<()> {
    match what {
        ExportCmd::Thresholds { cfg, checkpoint, bins, out } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let model = read_model(&checkpoint)?;
            let h = export_threshold_histogram(&model, bins)?;
            write(&out, h.to_csv())?;
            echo_beside(&out, &cfg)?;
            println!("{} thresholds in {bins} bins over [0, {}] -> {}", model.n, model.l_max, out.display());
        }
        ExportCmd::Heatmap { cfg, checkpoint, input, nodes, out } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let model = read_model(&checkpoint)?;
            let (_, x) = read_scenario(&input)?;
            let rows = export_attention_heatmaps(&model, &x, &nodes)?;
            write(&out, heatmaps_csv(&rows))?;
            echo_beside(&out, &cfg)?;
            for r in &rows {
                println!("node {}: {} fine neighbors of {} coarse", r.node, r.support(), r.coarse.iter().filter(|&&c| c).count());
            }
        }
        ExportCmd::Cell { cfg, metadata, model, condition, cell_seed, out } => {
            let cfg = load_cfg(&cfg, Overrides::default())?;
            let csv = rerun_cell(&metadata, parse_kind(&model)?, &condition, cell_seed)?;
            write(&out, csv)?;
            echo_beside(&out, &cfg)?;
            println!("wrote {}", PathBuf::from(&out).display());
        }
    }
    Ok(())
}
