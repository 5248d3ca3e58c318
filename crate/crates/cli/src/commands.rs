use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use pcnn_core::domain::CongestionSeries;
use pcnn_core::eval::{
    breakdown, compare_methods, write_breakdown_csv, write_comparison_csv, write_forecasts_csv, write_metrics_json,
    write_mre_cdf_csv, Metrics,
};
use pcnn_core::folding::FoldingConfig;
use pcnn_core::ingest::{
    aggregate_rows, aggregate_traversals, pair_traversals, read_aggregated_csv, read_passage_csv, read_series_csv,
    write_series_csv,
};
use pcnn_core::nn::GradCheckReport;
use pcnn_core::pcnn::{gradient_check_model, train, PcnnConfig, PcnnModel};
use pcnn_core::synth::{generate, Benchmark};
use serde::Serialize;

use crate::config::{self, InputFormat, RunConfig, SweepGrid};
use crate::output::{
    archive_config, archive_path_for, check_distinct, prepare_dir, require_file, write_atomic, write_json,
};
use crate::{Cli, Command, FoldArgs, GlobalArgs, UsageError, VerificationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Validation,
    Test,
}

struct Ctx {
    cfg: RunConfig,
    folding_given: bool,
}

impl Ctx {
    fn new(global: &GlobalArgs) -> anyhow::Result<Self> {
        let loaded = config::load(global.config.as_deref())?;
        let mut cfg = loaded.config;
        if let Some(seed) = global.seed {
            cfg.seed = seed;
        }
        if let Some(p) = global.precision {
            cfg.precision = p;
        }
        if let Some(m) = global.slot_minutes {
            cfg.slot_minutes = m;
        }
        Ok(Self { cfg, folding_given: loaded.folding_given })
    }

    fn apply_fold(&mut self, fold: &FoldArgs) {
        if let Some(d) = fold.history_days {
            self.cfg.pcnn.folding.days = d;
            self.folding_given = true;
        }
        if let Some(t) = fold.half_window {
            self.cfg.pcnn.folding.half_window = t;
            self.folding_given = true;
        }
    }

    /// Folding the user asked for explicitly, if any.
    fn requested_folding(&self) -> Option<FoldingConfig> {
        self.folding_given.then_some(self.cfg.pcnn.folding)
    }

    fn read_series(&self, path: &Path) -> anyhow::Result<Vec<CongestionSeries>> {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let series =
            read_series_csv(BufReader::new(file), self.cfg.slot_minutes, self.cfg.start_hour, self.cfg.end_hour)
                .with_context(|| format!("reading series {}", path.display()))?;
        if series.is_empty() {
            return Err(pcnn_core::Error::Empty(format!("{} holds no series", path.display())).into());
        }
        Ok(series)
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Ingest { input, output, format, lenient, max_gap_seconds, all_days } => {
            let ingest = &mut ctx.cfg.ingest;
            if let Some(f) = format {
                ingest.format = f;
            }
            if lenient {
                ingest.strict = false;
            }
            if let Some(g) = max_gap_seconds {
                ingest.max_gap_seconds = g;
            }
            if all_days {
                ingest.aggregation.workdays_only = false;
            }
            ctx.cfg.resolve();
            cmd_ingest(&ctx.cfg, &input, &output)
        }
        Command::Generate { output_dir, segments, days, noise_sigma } => {
            let synth = &mut ctx.cfg.synth;
            if let Some(s) = segments {
                synth.segments = s;
            }
            if let Some(d) = days {
                synth.days = d;
            }
            if let Some(n) = noise_sigma {
                synth.noise_sigma = n;
            }
            ctx.cfg.resolve();
            cmd_generate(&ctx.cfg, &output_dir)
        }
        Command::Train { series, output_dir, fold, horizon, conv_layers, epochs, mode } => {
            ctx.apply_fold(&fold);
            let pcnn = &mut ctx.cfg.pcnn;
            if let Some(u) = horizon {
                pcnn.folding.horizon = u;
            }
            if let Some(l) = conv_layers {
                pcnn.conv_layers = l;
            }
            if let Some(e) = epochs {
                pcnn.epochs = e;
            }
            if let Some(m) = mode {
                pcnn.mode = m;
            }
            ctx.cfg.resolve();
            cmd_train(&ctx, &series, &output_dir)
        }
        Command::Predict { model, series, segment, day, slot, horizon, fold } => {
            ctx.apply_fold(&fold);
            ctx.cfg.resolve();
            cmd_predict(&ctx, &model, &series, segment.as_deref(), day, slot, horizon)
        }
        Command::Evaluate { model, series, output_dir, split, horizon, fold } => {
            ctx.apply_fold(&fold);
            ctx.cfg.resolve();
            cmd_evaluate(&ctx, &model, &series, &output_dir, split, horizon)
        }
        Command::Compare { series, output_dir, methods, slot_sizes } => {
            if let Some(m) = methods {
                ctx.cfg.compare.methods = m;
            }
            if let Some(s) = slot_sizes {
                ctx.cfg.compare.slot_minutes = s;
            }
            ctx.cfg.resolve();
            cmd_compare(&ctx, &series, &output_dir)
        }
        Command::Sweep { series, output_dir, grid } => {
            if let Some(g) = grid {
                ctx.cfg.sweep.grid = g;
            }
            ctx.cfg.resolve();
            cmd_sweep(&ctx, &series, &output_dir)
        }
        Command::Gradcheck { seeds, tolerance, step, max_params_per_layer, fold, conv_layers, report } => {
            ctx.apply_fold(&fold);
            let gc = &mut ctx.cfg.gradcheck;
            if let Some(s) = seeds {
                gc.seeds = s;
            }
            if let Some(t) = tolerance {
                gc.options.tolerance = t;
            }
            if let Some(h) = step {
                gc.options.step = h;
            }
            if max_params_per_layer.is_some() {
                gc.options.max_params_per_layer = max_params_per_layer;
            }
            if let Some(l) = conv_layers {
                ctx.cfg.pcnn.conv_layers = l;
            }
            ctx.cfg.resolve();
            cmd_gradcheck(&ctx.cfg, report.as_deref())
        }
    }
}

fn cmd_ingest(cfg: &RunConfig, input: &Path, output: &Path) -> anyhow::Result<()> {
    require_file(input)?;
    check_distinct(output, &[input])?;
    cfg.ingest.aggregation.validate()?;
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let reader = BufReader::new(file);
    let strict = cfg.ingest.strict;
    let (result, skipped) = match cfg.ingest.format {
        InputFormat::Passages => {
            let parsed = read_passage_csv(reader, strict).with_context(|| format!("reading {}", input.display()))?;
            let (traversals, stats) = pair_traversals(&parsed.rows, cfg.ingest.max_gap_seconds);
            log::info!("{} traversals, {} sighting pairs dropped", stats.traversals, stats.dropped);
            (aggregate_traversals(&traversals, &cfg.ingest.aggregation)?, parsed.skipped)
        }
        InputFormat::Aggregated => {
            let parsed = read_aggregated_csv(reader, strict).with_context(|| format!("reading {}", input.display()))?;
            (aggregate_rows(&parsed.rows, &cfg.ingest.aggregation)?, parsed.skipped)
        }
    };
    if result.series.is_empty() {
        return Err(pcnn_core::Error::Empty("no segment has data inside the kept window".into()).into());
    }
    write_atomic(output, |w| Ok(write_series_csv(w, &result.series)?))?;
    crate::output::write_text(&archive_path_for(output), &cfg.to_toml()?)?;

    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<24} {:>5} {:>7} {:>12} {:>10}", "segment", "days", "slots", "baseline_s", "congested")?;
    for s in &result.series {
        writeln!(
            out,
            "{:<24} {:>5} {:>7} {:>12.1} {:>10.4}",
            s.segment_id(),
            s.days(),
            s.values().len(),
            s.baseline_travel_time().unwrap_or(f64::NAN),
            s.congested_fraction()
        )?;
    }
    if skipped > 0 {
        writeln!(out, "skipped {skipped} malformed row(s)")?;
    }
    for warning in &result.warnings {
        writeln!(out, "warning: {warning}")?;
    }
    Ok(())
}

fn cmd_generate(cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    prepare_dir(dir)?;
    let bench = Benchmark { config: cfg.synth.clone(), splits: cfg.pcnn.splits, series: generate(&cfg.synth)? };
    write_atomic(&dir.join("series.csv"), |w| Ok(bench.write_csv(w)?))?;
    write_atomic(&dir.join("synth.json"), |w| Ok(bench.write_sidecar(w)?))?;
    archive_config(dir, cfg)?;
    for s in &bench.series {
        println!("{} {} values, congested fraction {:.4}", s.segment_id(), s.values().len(), s.congested_fraction());
    }
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    wall_time_seconds: f64,
}

fn cmd_train(ctx: &Ctx, series_path: &Path, dir: &Path) -> anyhow::Result<()> {
    require_file(series_path)?;
    ctx.cfg.pcnn.validate()?;
    prepare_dir(dir)?;
    let series = ctx.read_series(series_path)?;
    let (model, report) = train(&series, &ctx.cfg.pcnn)?;
    write_atomic(&dir.join("model.json"), |w| Ok(model.write_json(w)?))?;
    write_json(&dir.join("train_report.json"), &report)?;
    write_json(&dir.join("timing.json"), &Timing { wall_time_seconds: report.wall_time_seconds })?;
    archive_config(dir, &ctx.cfg)?;
    match report.final_validation_mae() {
        Some(mae) => println!(
            "trained {} network(s) in {:.1}s, validation MAE {mae:.4}",
            model.networks.len(),
            report.wall_time_seconds
        ),
        None => println!("trained {} network(s) in {:.1}s", model.networks.len(), report.wall_time_seconds),
    }
    Ok(())
}

fn load_model(ctx: &Ctx, path: &Path) -> anyhow::Result<PcnnModel> {
    require_file(path)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let model =
        PcnnModel::read_json(BufReader::new(file)).with_context(|| format!("reading model {}", path.display()))?;
    if let Some(folding) = ctx.requested_folding() {
        model.check_folding(&folding)?;
    }
    if model.slot_minutes != ctx.cfg.slot_minutes {
        return Err(pcnn_core::Error::Incompatible(format!(
            "model uses {}-minute slots, config says {} (pass --slot-minutes)",
            model.slot_minutes, ctx.cfg.slot_minutes
        ))
        .into());
    }
    Ok(model)
}

#[derive(Serialize)]
struct PredictOutput<'a> {
    segment_id: &'a str,
    day: usize,
    slot: usize,
    horizon: usize,
    target_slot: usize,
    predicted: f64,
    raw: f64,
}

fn cmd_predict(
    ctx: &Ctx,
    model_path: &Path,
    series_path: &Path,
    segment: Option<&str>,
    day: usize,
    slot: usize,
    horizon: Option<usize>,
) -> anyhow::Result<()> {
    require_file(series_path)?;
    let model = load_model(ctx, model_path)?;
    let series = ctx.read_series(series_path)?;
    let s = match segment {
        Some(id) => series
            .iter()
            .find(|s| s.segment_id() == id)
            .ok_or_else(|| UsageError(format!("segment {id:?} not in {}", series_path.display())))?,
        None if series.len() == 1 => &series[0],
        None => return Err(UsageError("series holds several segments; pass --segment".into()).into()),
    };
    let u = horizon.unwrap_or(model.config.folding.horizon);
    let p = model.predict(s, day, slot, u)?;
    let out = PredictOutput {
        segment_id: s.segment_id(),
        day,
        slot,
        horizon: u,
        target_slot: slot + u - 1,
        predicted: p.value,
        raw: p.raw,
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn cmd_evaluate(
    ctx: &Ctx,
    model_path: &Path,
    series_path: &Path,
    dir: &Path,
    split: Split,
    horizon: Option<usize>,
) -> anyhow::Result<()> {
    require_file(series_path)?;
    let model = load_model(ctx, model_path)?;
    prepare_dir(dir)?;
    let series = ctx.read_series(series_path)?;
    let days = series.iter().map(CongestionSeries::days).min().unwrap_or(0);
    let (train_days, val_days, test_days) = model.config.splits.ranges(days)?;
    let range = match split {
        Split::Train => train_days,
        Split::Validation => val_days,
        Split::Test => test_days,
    };
    let u = horizon.unwrap_or(model.config.folding.horizon);
    let rows = model.forecast(&series, range, u)?;
    let eps = ctx.cfg.compare.mre_epsilon;
    let b = breakdown(&rows, eps)?;
    write_atomic(&dir.join("metrics.json"), |w| Ok(write_metrics_json(w, &b)?))?;
    write_atomic(&dir.join("breakdown.csv"), |w| Ok(write_breakdown_csv(w, &b)?))?;
    write_atomic(&dir.join("mre_cdf.csv"), |w| Ok(write_mre_cdf_csv(w, &b)?))?;
    write_atomic(&dir.join("forecasts.csv"), |w| Ok(write_forecasts_csv(w, &rows)?))?;
    archive_config(dir, &ctx.cfg)?;
    println!("{}", format_metrics(&b.overall));
    Ok(())
}

fn format_metrics(m: &Metrics) -> String {
    let mre = m.mre.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    format!("n={} MAE {:.4} RMSE {:.4} MRE {mre}", m.count, m.mae, m.rmse)
}

fn cmd_compare(ctx: &Ctx, series_path: &Path, dir: &Path) -> anyhow::Result<()> {
    require_file(series_path)?;
    let methods = ctx.cfg.methods()?;
    prepare_dir(dir)?;
    let series = ctx.read_series(series_path)?;
    let cells = compare_methods(&series, &methods, &ctx.cfg.compare_options())?;
    write_atomic(&dir.join("comparison.csv"), |w| Ok(write_comparison_csv(w, &cells)?))?;
    archive_config(dir, &ctx.cfg)?;
    for c in &cells {
        match (&c.metrics, &c.error) {
            (Some(m), _) => println!("{:<8} {:>3} min  {}", c.method, c.slot_minutes, format_metrics(m)),
            (None, Some(e)) => println!("{:<8} {:>3} min  failed: {e}", c.method, c.slot_minutes),
            (None, None) => println!("{:<8} {:>3} min  no result", c.method, c.slot_minutes),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    days: usize,
    half_window: usize,
    conv_layers: usize,
    validation_mae: Option<f64>,
    error: Option<String>,
}

fn sweep_point(series: &[CongestionSeries], base: &PcnnConfig, d: usize, t: usize, l: usize) -> SweepRow {
    let mut cfg = base.clone();
    cfg.folding.days = d;
    cfg.folding.half_window = t;
    cfg.conv_layers = l;
    let outcome = train(series, &cfg).and_then(|(_, report)| {
        report.final_validation_mae().ok_or_else(|| pcnn_core::Error::Empty("validation split is empty".into()))
    });
    match &outcome {
        Ok(mae) => log::info!("d={d} t={t} L={l}: validation MAE {mae:.4}"),
        Err(e) => log::warn!("d={d} t={t} L={l}: {e}"),
    }
    SweepRow {
        days: d,
        half_window: t,
        conv_layers: l,
        validation_mae: outcome.as_ref().ok().copied(),
        error: outcome.err().map(|e| e.to_string()),
    }
}

fn best(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter()
        .filter(|r| r.validation_mae.is_some())
        .min_by(|a, b| a.validation_mae.unwrap().total_cmp(&b.validation_mae.unwrap()))
}

fn cmd_sweep(ctx: &Ctx, series_path: &Path, dir: &Path) -> anyhow::Result<()> {
    require_file(series_path)?;
    let sweep = &ctx.cfg.sweep;
    if sweep.days.is_empty() || sweep.half_windows.is_empty() || sweep.conv_layers.is_empty() {
        return Err(UsageError("sweep grid has an empty axis".into()).into());
    }
    prepare_dir(dir)?;
    let series = ctx.read_series(series_path)?;
    let base = &ctx.cfg.pcnn;
    let mut rows = Vec::new();
    let mut best_cfg = base.clone();
    if matches!(sweep.grid, SweepGrid::Window | SweepGrid::Both) {
        for &d in &sweep.days {
            for &t in &sweep.half_windows {
                rows.push(sweep_point(&series, base, d, t, base.conv_layers));
            }
        }
        if let Some(b) = best(&rows) {
            best_cfg.folding.days = b.days;
            best_cfg.folding.half_window = b.half_window;
        }
    }
    if matches!(sweep.grid, SweepGrid::Depth | SweepGrid::Both) {
        let (d, t) = (best_cfg.folding.days, best_cfg.folding.half_window);
        for &l in &sweep.conv_layers {
            rows.push(sweep_point(&series, &best_cfg, d, t, l));
        }
    }
    let winner = best(&rows).cloned().ok_or_else(|| pcnn_core::Error::Empty("every sweep run failed".into()))?;
    best_cfg.folding.days = winner.days;
    best_cfg.folding.half_window = winner.half_window;
    best_cfg.conv_layers = winner.conv_layers;

    write_atomic(&dir.join("sweep.csv"), |w| {
        writeln!(w, "days,half_window,conv_layers,validation_mae,error")?;
        for r in &rows {
            let mae = r.validation_mae.map_or(String::new(), |m| m.to_string());
            let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], "'");
            writeln!(w, "{},{},{},{},\"{}\"", r.days, r.half_window, r.conv_layers, mae, err)?;
        }
        Ok(())
    })?;
    let mut best_run = ctx.cfg.clone();
    best_run.pcnn = best_cfg;
    crate::output::write_text(&dir.join("best_config.toml"), &best_run.to_toml()?)?;
    archive_config(dir, &ctx.cfg)?;
    println!(
        "best: d={} t={} L={} validation MAE {:.4} ({} runs)",
        winner.days,
        winner.half_window,
        winner.conv_layers,
        winner.validation_mae.unwrap_or(f64::NAN),
        rows.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct SeedReport {
    seed: u64,
    report: GradCheckReport,
}

fn cmd_gradcheck(cfg: &RunConfig, report_path: Option<&Path>) -> anyhow::Result<()> {
    cfg.pcnn.validate()?;
    let gc = &cfg.gradcheck;
    if gc.seeds == 0 {
        return Err(UsageError("gradcheck needs at least one seed".into()).into());
    }
    let started = Instant::now();
    let mut reports = Vec::with_capacity(gc.seeds as usize);
    for i in 0..gc.seeds {
        let seed = cfg.seed.wrapping_add(i);
        let report = gradient_check_model(&cfg.pcnn, seed, &gc.options)?;
        println!(
            "seed {seed}: {} checked, {} kinks skipped, max rel. error {:.3e}{}",
            report.checked,
            report.kinks_skipped,
            report.max_rel_error,
            if report.passed() { "" } else { "  FAIL" }
        );
        reports.push(SeedReport { seed, report });
    }
    if let Some(path) = report_path {
        write_json(path, &reports)?;
    }
    let worst = reports.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    println!("max rel. error {worst:.3e} over {} seeds in {:.1}s", reports.len(), started.elapsed().as_secs_f64());
    if reports.iter().any(|r| !r.report.passed()) {
        return Err(VerificationError(format!(
            "gradient check failed: max rel. error {worst:.3e} >= {:e}",
            gc.options.tolerance
        ))
        .into());
    }
    Ok(())
}
