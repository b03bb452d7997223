use crate::args::{Cli, Command, DetectArgs, EvalArgs, ListArgs, SynthArgs};
use crate::{Outcome, UsageError};
use anyhow::{anyhow, bail, Context};
use doi_core::backend::{FixtureBackend, HttpBackend, ModelBackend};
use doi_core::config::{Overlay, Settings};
use doi_core::eval::{self, ScoreRow};
use doi_core::mask;
use doi_core::pipeline::{self, PairEntry, PairManifest, PipelineConfig, RUN_FILE};
use doi_core::synth::{self, SynthConfig};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

type CmdResult = Result<Outcome, UsageError>;

pub fn settings(cli: &Cli) -> Result<Settings, UsageError> {
    let file = cli.config.as_deref().map(Overlay::from_file).transpose()?;
    let mut overlay = match &cli.command {
        Command::Detect(a) => a.overlay(),
        Command::Synth(a) => {
            let mut o = Overlay::default();
            o.synth.scale_min = a.scale_min;
            o.synth.scale_max = a.scale_max;
            o
        }
        Command::Eval(_) | Command::ListObjects(_) => Overlay::default(),
    };
    overlay.workers = cli.workers;
    Ok(Settings::resolve(Overlay::from_env(), file, overlay)?)
}

pub fn synth(args: &SynthArgs, settings: &Settings) -> CmdResult {
    let images = match &args.bank_images {
        Some(d) => d.clone(),
        None => args
            .bank
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    let bank = synth::load_bank(&args.bank, &images)?;
    let backgrounds = synth::load_backgrounds(&args.backgrounds)?;
    let config = SynthConfig {
        count: args.count,
        seed: args.seed,
        scale_range: settings.scale_range,
        objects_per_sample: args.objects_per_sample,
    };
    let samples = synth::generate_dataset(&backgrounds, &bank, &config, &args.out)?;
    log::info!(
        "wrote {} samples to {}",
        samples.len(),
        args.out.join(synth::MANIFEST_FILE).display()
    );
    Ok(Outcome::Ok)
}

fn open_backend(
    args: &DetectArgs,
    settings: &Settings,
) -> Result<Box<dyn ModelBackend>, UsageError> {
    let fixtures = if args.backend_url.is_some() {
        None
    } else {
        settings.backend.fixtures.clone()
    };
    if let Some(dir) = fixtures {
        return Ok(Box::new(FixtureBackend::open(&dir)?));
    }
    match &settings.backend.url {
        Some(url) => Ok(Box::new(HttpBackend::new(
            settings.backend.http_config(url),
        ))),
        None => Err(UsageError(anyhow!(
            "no backend configured: pass --fixtures or --backend-url, or set {}",
            doi_core::backend::BACKEND_URL_ENV
        ))),
    }
}

fn detect_pair(
    entry: &PairEntry,
    backend: &dyn ModelBackend,
    config: &PipelineConfig,
    out: &Path,
    record_timing: bool,
) -> anyhow::Result<pipeline::RunRecord> {
    let reference = pipeline::load_color(&entry.ref_path)?;
    let live = pipeline::load_color(&entry.live_path)?;
    let outcome = pipeline::run_pair(&entry.pair_id, &reference, &live, backend, config)?;
    Ok(pipeline::write_outcome(
        out,
        &entry.pair_id,
        &entry.dataset_id,
        &outcome,
        record_timing,
    )?)
}

pub fn detect(args: &DetectArgs, settings: &Settings) -> CmdResult {
    let manifest = PairManifest::load(&args.pairs)?;
    let backend = open_backend(args, settings)?;
    if args.assume_aligned {
        log::info!("image pairs are taken as pre-aligned");
    } else {
        log::warn!("no registration is performed; inputs must be pre-aligned (--assume-aligned silences this)");
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let config = PipelineConfig {
        threshold: settings.threshold,
        doi: settings.doi,
        search: settings.search.clone(),
        no_ovs: args.no_ovs,
    };

    let stop = AtomicBool::new(false);
    let results: Vec<Option<anyhow::Result<pipeline::RunRecord>>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            if stop.load(Ordering::SeqCst) {
                return None;
            }
            let r = detect_pair(
                entry,
                backend.as_ref(),
                &config,
                &args.out,
                args.record_timing,
            );
            if r.is_err() && args.fail_fast {
                stop.store(true, Ordering::SeqCst);
            }
            Some(r)
        })
        .collect();

    let mut failed = 0;
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Some(Ok(rec)) => {
                let decision = rec
                    .doi
                    .as_ref()
                    .map(|d| format!("{:?}\t{}", d.decision, d.doi))
                    .unwrap_or_else(|| "bypassed\t-".into());
                println!("{}\t{}", entry.pair_id, decision);
            }
            Some(Err(e)) => {
                failed += 1;
                eprintln!("{}: {e:#}", entry.pair_id);
            }
            None => {
                failed += 1;
                eprintln!("{}: skipped after earlier failure", entry.pair_id);
            }
        }
    }
    Ok(if failed == 0 {
        Outcome::Ok
    } else {
        Outcome::Partial(failed)
    })
}

fn score_set(entries: &[PairEntry], dir: &Path, mask_name: &str) -> (Vec<ScoreRow>, usize) {
    let results: Vec<anyhow::Result<ScoreRow>> = entries
        .par_iter()
        .map(|e| {
            let gt_path = e.gt_path.as_ref().expect("checked by caller");
            let pred_path = dir.join(&e.pair_id).join(mask_name);
            let pred = mask::load_mask(&pred_path)?;
            let gt = mask::load_mask(gt_path)?;
            eval::score_row(&e.pair_id, &e.dataset_id, &pred, &gt)
                .with_context(|| format!("{} vs {}", pred_path.display(), gt_path.display()))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failed = 0;
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(err) => {
                failed += 1;
                eprintln!("{}: {err:#}", e.pair_id);
            }
        }
    }
    (rows, failed)
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let manifest = PairManifest::load(&args.pairs)?;
    if manifest.entries.is_empty() {
        return Err(UsageError(anyhow!(
            "{}: empty manifest",
            args.pairs.display()
        )));
    }
    if let Some(e) = manifest.entries.iter().find(|e| e.gt_path.is_none()) {
        return Err(UsageError(anyhow!("pair {:?} has no gt_path", e.pair_id)));
    }
    let (rows, mut failed) = score_set(&manifest.entries, &args.pred, &args.mask);
    if rows.is_empty() {
        return Ok(Outcome::Partial(failed));
    }
    let report = eval::aggregate(&rows)?;
    print!("{}", report.to_table());

    let mut json = serde_json::json!({ "rows": rows, "report": report });
    if let Some(base_dir) = &args.baseline {
        let (base_rows, base_failed) = score_set(&manifest.entries, base_dir, &args.baseline_mask);
        failed += base_failed;
        let kept: Vec<ScoreRow> = rows
            .iter()
            .filter(|r| base_rows.iter().any(|b| b.pair_id == r.pair_id))
            .cloned()
            .collect();
        let base_kept: Vec<ScoreRow> = base_rows
            .iter()
            .filter(|b| kept.iter().any(|r| r.pair_id == b.pair_id))
            .cloned()
            .collect();
        if !kept.is_empty() {
            let base_report = eval::aggregate(&base_kept)?;
            let comparison = eval::compare(&base_kept, &kept)?;
            println!("\nbaseline");
            print!("{}", base_report.to_table());
            println!();
            print!("{}", comparison.to_table());
            json["baseline"] = serde_json::json!({ "rows": base_kept, "report": base_report });
            json["comparison"] = serde_json::to_value(&comparison)?;
        }
    }
    if let Some(path) = &args.json {
        let mut text = serde_json::to_string_pretty(&json)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if failed == 0 {
        Outcome::Ok
    } else {
        Outcome::Partial(failed)
    })
}

fn run_records(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path().join(RUN_FILE);
        if path.is_file() {
            found.push(path);
        }
    }
    if found.is_empty() {
        bail!("{}: no run records found", dir.display());
    }
    found.sort();
    Ok(found)
}

pub fn list_objects(args: &ListArgs) -> CmdResult {
    let records = run_records(&args.runs)?
        .iter()
        .map(|p| pipeline::read_run_record(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = pipeline::object_listing(&records);
    match &args.out {
        Some(path) => {
            std::fs::write(path, table).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{table}"),
    }
    Ok(Outcome::Ok)
}
