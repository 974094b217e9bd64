//! One function per subcommand.
//!
//! Seeds: the run seed (`--seed`, else `seed` from the config) is passed
//! unchanged to the library, which derives every stream from it with a task
//! tag (see `metev_core::seeds`). The synthetic generator also takes the run
//! seed, so one number pins a whole synth → train → map chain.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use metev_core::calibration::{calibrate, read_radar_csv, read_reports_csv, TruncatedExponentialLeha};
use metev_core::config::RunConfig;
use metev_core::dataset::{load_dataset, write_events};
use metev_core::dnn::{read_model, train_ensemble, write_model, write_training_log, NetworkState, TrainConfig};
use metev_core::ordinary::{diagnostics, dither, select_family};
use metev_core::pipeline::{build_training_table, ensemble_series, return_level_map, return_period_map};
use metev_core::quality::{nearest_radar_km, read_geometry_csv, ConfidenceMap};
use metev_core::seeds::{derive_seed, tag};
use metev_core::synth::{generate, write_synth};
use metev_core::tmevd::{sampled_baseline, ReturnLevelMap};
use metev_core::{Dataset, DayDate, GridSpec};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::raster;
use crate::{Cli, Command};

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
    seed: u64,
    manifest: RunManifest,
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.config.as_deref().context("--config <PATH> is required")?;
    let cfg = RunConfig::load(config)?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let mut ctx = Ctx {
        cli,
        cfg,
        seed,
        manifest: RunManifest::start(cli.command.name(), Some(config), seed),
    };
    match cli.command {
        Command::Calibrate => cmd_calibrate(&mut ctx)?,
        Command::Train => cmd_train(&mut ctx)?,
        Command::ReturnLevels => cmd_maps(&mut ctx, false)?,
        Command::ReturnPeriods => cmd_maps(&mut ctx, true)?,
        Command::Baseline => cmd_baseline(&mut ctx)?,
        Command::Quality => cmd_quality(&mut ctx)?,
        Command::Synth => cmd_synth(&mut ctx)?,
        Command::Diagnose => cmd_diagnose(&mut ctx)?,
    }
    let path = ctx.manifest.write(&cli.out)?;
    info!("wrote {}", path.display());
    Ok(())
}

impl Ctx<'_> {
    fn input(&mut self, p: &Path) -> PathBuf {
        let p = self.cfg.resolve(p);
        self.manifest.inputs.push(p.clone());
        p
    }

    fn output(&mut self, name: impl AsRef<Path>) -> PathBuf {
        self.record(self.cli.out.join(name))
    }

    fn record(&mut self, p: PathBuf) -> PathBuf {
        self.manifest.outputs.push(p.clone());
        p
    }

    fn model_dir(&self) -> PathBuf {
        let d = &self.cfg.train.model_dir;
        if d.is_absolute() {
            d.clone()
        } else {
            self.cli.out.join(d)
        }
    }

    fn dataset(&mut self) -> Result<Dataset> {
        let paths = self.cfg.dataset_paths();
        for p in [&paths.grid, &paths.events, &paths.covariates] {
            self.manifest.inputs.push(p.clone());
        }
        let ds = load_dataset(&paths, &self.cfg.load_options()?)?;
        info!(
            "loaded {} cells, {} events, years {}..={}",
            ds.grid().n_cells(),
            ds.events().len(),
            ds.years().first,
            ds.years().last
        );
        Ok(ds)
    }

    fn raster(&mut self, name: &str, grid: &GridSpec, values: &[f64]) -> Result<()> {
        if self.cli.raster {
            let p = self.output(name);
            raster::write_png(&p, grid, values)?;
        }
        Ok(())
    }
}

fn cmd_calibrate(ctx: &mut Ctx) -> Result<()> {
    let grid_path = ctx.input(&ctx.cfg.data.grid.clone());
    let grid = GridSpec::read_csv(&grid_path)?;
    let radar_path = ctx.input(&ctx.cfg.calibration.radar.clone());
    let reports_path = ctx.input(&ctx.cfg.calibration.reports.clone());
    let radar = read_radar_csv(&radar_path, &grid)?;
    let reports = read_reports_csv(&reports_path)?;
    let opts = ctx.cfg.calibration.options()?;
    let out = calibrate(&radar, &reports, &grid, &TruncatedExponentialLeha::default(), &opts)?;

    let events = ctx.output("events.csv");
    write_events(&events, &out.events)?;
    info!("{} events from {} radar days", out.events.len(), radar.len());
    let m = &mut ctx.manifest;
    m.note("radar_days", radar.len());
    m.note("reports_read", reports.len());
    m.note("reports_kept", out.reports_kept.len());
    m.note("matched_pairs", out.matched_pairs);
    m.note("slope", out.line.slope);
    m.note("offset_mm", out.line.offset_mm);
    m.note("events", out.events.len());
    Ok(())
}

fn cmd_train(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let dither_seed = derive_seed(ctx.seed, tag::DITHER, 0);
    let section = ctx.cfg.train.clone();
    let (table, relevance) = build_training_table(&ds, dither_seed, &section.percentiles, section.weighting)?;
    let opt = TrainConfig {
        seed: ctx.seed,
        ..section.optimizer.clone()
    };
    let net = section.network(ds.schema().len()).with_target_scale(&table.y);
    info!("training {} models on {} events", section.n_models, table.len());
    let outcome = train_ensemble(&table, &opt, &net, section.n_models)?;

    let dir = ctx.model_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let rel = ctx.record(dir.join("relevance.csv"));
    relevance.write_csv(&rel)?;

    #[derive(Serialize)]
    struct Member {
        index: usize,
        seed: u64,
        status: String,
        best_epoch: usize,
        epochs: usize,
    }
    let mut members = Vec::new();
    // members come back in index order with failures removed
    let ok: Vec<usize> = (0..section.n_models)
        .filter(|i| !outcome.failed.iter().any(|(f, _)| f == i))
        .collect();
    for (i, m) in ok.iter().zip(&outcome.members) {
        let p = ctx.record(dir.join(format!("model_{i:03}.bin")));
        write_model(&p, &m.state)?;
        let p = ctx.record(dir.join(format!("training_log_{i:03}.csv")));
        write_training_log(&p, &m.log)?;
        members.push(Member {
            index: *i,
            seed: derive_seed(ctx.seed, tag::ENSEMBLE_MEMBER, *i as u64),
            status: format!("{:?}", m.status),
            best_epoch: m.best_epoch,
            epochs: m.log.len(),
        });
    }
    let m = &mut ctx.manifest;
    m.note("dither_seed", dither_seed);
    m.note("members", members);
    m.note("failed", &outcome.failed);
    m.note("events", table.len());
    m.note("weighting", section.weighting);
    Ok(())
}

fn load_models(ctx: &mut Ctx) -> Result<Vec<NetworkState>> {
    let dir = ctx.model_dir();
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("reading model directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("model_") && n.ends_with(".bin"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no model_*.bin files in {}; run `metev train` first", dir.display());
    }
    let mut models = Vec::with_capacity(files.len());
    for f in files {
        models.push(read_model(&f).with_context(|| format!("loading {}", f.display()))?);
        ctx.manifest.inputs.push(f);
    }
    Ok(models)
}

fn cmd_maps(ctx: &mut Ctx, periods: bool) -> Result<()> {
    let ds = ctx.dataset()?;
    let models = load_models(ctx)?;
    let members = ensemble_series(&ds, &models)?;
    let n_boot = ctx.cfg.maps.n_boot;
    let (map, keys, stem) = if periods {
        let keys = ctx.cfg.maps.sizes_mm.clone();
        (return_period_map(&members, &keys, n_boot, ctx.seed)?, keys, "return_periods")
    } else {
        let keys = ctx.cfg.maps.horizons.clone();
        (return_level_map(&members, &keys, n_boot, ctx.seed)?, keys, "return_levels")
    };
    let csv = ctx.output(format!("{stem}.csv"));
    map.write_csv(&csv)?;
    for k in &keys {
        let layer = map.layer(*k, ds.grid().n_cells());
        ctx.raster(&format!("{stem}_{k}.png"), ds.grid(), &layer)?;
    }
    note_flags(&mut ctx.manifest, &map);
    ctx.manifest.note("models", models.len());
    ctx.manifest.note("n_boot", n_boot);
    Ok(())
}

fn note_flags(m: &mut RunManifest, map: &ReturnLevelMap) {
    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    for e in &map.entries {
        *counts.entry(e.flag.to_string()).or_default() += 1;
    }
    m.note("flags", counts);
}

fn cmd_baseline(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let b = ctx.cfg.baseline.clone();
    let map = sampled_baseline(&ds, b.window_years, b.n_samples, ctx.seed)?;
    let csv = ctx.output("baseline.csv");
    map.write_csv(&csv)?;
    let layer = map.layer(b.window_years as f64, ds.grid().n_cells());
    ctx.raster("baseline.png", ds.grid(), &layer)?;
    note_flags(&mut ctx.manifest, &map);
    ctx.manifest.note("window_years", b.window_years);
    ctx.manifest.note("n_samples", b.n_samples);
    Ok(())
}

fn cmd_quality(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let geom_path = ctx.input(&ctx.cfg.quality.geometry.clone());
    let mut geometry = read_geometry_csv(&geom_path, ds.grid())?;
    let sites = ctx.cfg.quality.radar_sites.clone();
    if !sites.is_empty() {
        let last = DayDate::from_ymd(ds.years().last, 12, 31)?;
        for (cell, g) in geometry.iter_mut().enumerate() {
            match nearest_radar_km(ds.grid(), cell, &sites, last) {
                Some(km) => g.radar_dist_km = km,
                None => bail!("no radar site is active on {last}"),
            }
        }
        ctx.manifest.note("radar_sites_date", last.to_string());
    }
    let map = ConfidenceMap::compute(
        ds.grid(),
        &geometry,
        &ds.hail_day_counts(),
        &ctx.cfg.quality.suspicious_cells,
    )?;
    let csv = ctx.output("confidence.csv");
    map.write_csv(&csv)?;
    let q: Vec<f64> = map.rows.iter().map(|r| r.q).collect();
    ctx.raster("confidence.png", ds.grid(), &q)?;
    let mut cats = [0usize; 6];
    for r in &map.rows {
        if let Some(c) = cats.get_mut(r.category as usize) {
            *c += 1;
        }
    }
    ctx.manifest.note("category_counts", cats);
    Ok(())
}

fn cmd_synth(ctx: &mut Ctx) -> Result<()> {
    let cfg = metev_core::synth::SynthConfig {
        seed: ctx.seed,
        ..ctx.cfg.synth.clone()
    };
    let out = generate(&cfg)?;
    let paths = write_synth(&out, &ctx.cli.out)?;
    let m = &mut ctx.manifest;
    m.outputs.extend([
        paths.grid,
        paths.events,
        paths.covariates,
        ctx.cli.out.join("truth_params.csv"),
        ctx.cli.out.join("truth_cells.csv"),
    ]);
    m.note("cells", out.dataset.grid().n_cells());
    m.note("years", cfg.n_years);
    m.note("events", out.dataset.events().len());
    m.note("schema", cfg.schema().names());
    Ok(())
}

fn cmd_diagnose(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let sizes: Vec<f64> = ds.events().iter().map(|e| e.size_mm).collect();
    if sizes.is_empty() {
        bail!("dataset has no events to fit");
    }
    let dither_seed = derive_seed(ctx.seed, tag::DITHER, 0);
    let dithered = dither(&sizes, dither_seed);
    let raw = select_family(&sizes)?;
    let smooth = select_family(&dithered)?;

    #[derive(Serialize)]
    struct Report<'a> {
        n_events: usize,
        dither_seed: u64,
        raw: &'a [metev_core::ordinary::FitReport],
        dithered: &'a [metev_core::ordinary::FitReport],
    }
    let report = Report {
        n_events: sizes.len(),
        dither_seed,
        raw: &raw,
        dithered: &smooth,
    };
    let p = ctx.output("fit_report.json");
    std::fs::write(&p, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", p.display()))?;

    // QQ/PP of the best dithered fit
    let best = &smooth[0];
    let d = diagnostics(&dithered, &best.params);
    let p = ctx.output("qq.csv");
    let mut w = String::from("empirical_mm,theoretical_mm,empirical_p,theoretical_p\n");
    for ((e, t), (ep, tp)) in d.qq.iter().zip(&d.pp) {
        w.push_str(&format!("{e},{t},{ep},{tp}\n"));
    }
    std::fs::write(&p, w).with_context(|| format!("writing {}", p.display()))?;
    ctx.manifest.note("best_family", best.family.to_string());
    ctx.manifest.note("max_abs_qq_deviation_mm", d.max_abs_qq_deviation());
    Ok(())
}
