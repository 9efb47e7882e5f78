//! `stgcl synth`: write a synthetic benchmark as track/lane/manifest files
//! plus a ready-to-run configuration.

use anyhow::{bail, Context, Result};
use clap::Args;
use std::fs;
use std::path::PathBuf;
use stgcl::config::RunConfig;
use stgcl::ingest::{write_lane_file, write_manifest, write_track_file, ManifestEntry};
use stgcl::synth::{generate_session, plan_dataset, DatasetSpec, ScenarioKind, Split};
use stgcl::train::LearningMode;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenario classes (at most 5).
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Clips per class.
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    /// Out-of-class unlabeled clips.
    #[arg(long, default_value_t = 150)]
    ooc: usize,
    /// Fraction of each class's train split that keeps its label.
    #[arg(long, default_value_t = 1.0)]
    labeled_fraction: f64,
    /// Fraction of each class held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Positional noise in pixels.
    #[arg(long, default_value_t = 2.0)]
    noise: f64,
    /// Actors per scene.
    #[arg(long, default_value_t = 3)]
    actors: usize,
    /// Frame rate of the written track files.
    #[arg(long, default_value_t = 2.5)]
    fps: f64,
    #[arg(long, default_value_t = 640.0)]
    width: f64,
    #[arg(long, default_value_t = 360.0)]
    height: f64,
    /// Clip length in working (2.5 fps) frames.
    #[arg(long, default_value_t = 10)]
    frames: usize,
}

pub fn run(args: SynthArgs) -> Result<()> {
    if args.classes == 0 || args.classes > 5 {
        bail!("--classes must lie in 1..=5");
    }
    if !(0.0..=1.0).contains(&args.labeled_fraction) {
        bail!("--labeled-fraction must lie in [0, 1]");
    }
    let all = ScenarioKind::ALL;
    let spec = DatasetSpec {
        in_class: all[..args.classes].to_vec(),
        per_class: args.per_class,
        out_of_class: vec![ScenarioKind::OncomingPass, ScenarioKind::EmptyRoad],
        ooc_count: args.ooc,
        labeled_fraction: args.labeled_fraction,
        val_fraction: args.val_fraction,
        noise: args.noise,
        actors: args.actors,
        width: args.width,
        height: args.height,
        frames: args.frames,
        seed: args.seed,
    };

    let tracks_dir = args.out.join("tracks");
    let lanes_dir = args.out.join("lanes");
    fs::create_dir_all(&tracks_dir).context("creating tracks directory")?;
    fs::create_dir_all(&lanes_dir).context("creating lanes directory")?;

    let mut train_rows = Vec::new();
    let mut val_rows = Vec::new();
    for planned in plan_dataset(&spec) {
        let session = generate_session(&planned.scenario, args.fps);
        let track_rel = format!("tracks/{}.csv", planned.clip_id);
        let lane_rel = format!("lanes/{}.json", planned.clip_id);
        let track_file = fs::File::create(args.out.join(&track_rel))
            .with_context(|| format!("creating {track_rel}"))?;
        write_track_file(std::io::BufWriter::new(track_file), &session.objects)?;
        let lane_file = fs::File::create(args.out.join(&lane_rel))
            .with_context(|| format!("creating {lane_rel}"))?;
        write_lane_file(std::io::BufWriter::new(lane_file), &session.lane_polylines)?;

        let row = ManifestEntry {
            clip_id: planned.clip_id.clone(),
            track_path: track_rel,
            lane_path: lane_rel,
            frame_start: 0,
            frame_end: session.frame_count,
            fps: args.fps,
            width: args.width,
            height: args.height,
            label: planned.label_name.clone(),
        };
        match planned.split {
            Split::Validation => val_rows.push(row),
            _ => train_rows.push(row),
        }
    }

    let train_manifest = args.out.join("train.csv");
    write_manifest(fs::File::create(&train_manifest)?, &train_rows)?;
    let val_manifest = args.out.join("val.csv");
    write_manifest(fs::File::create(&val_manifest)?, &val_rows)?;

    // a run configuration wired to the generated files
    let mut cfg = RunConfig::default();
    cfg.data.train_manifest = Some("train.csv".into());
    cfg.data.val_manifest = Some("val.csv".into());
    cfg.data.classes = spec.class_names();
    cfg.data.clip_len = args.frames;
    cfg.train.mode = LearningMode::Scl;
    cfg.train.seed = args.seed;
    cfg.train.epochs = 40;
    cfg.train.batch_size = 16;
    cfg.train.lr_init = 0.003;
    cfg.model.temperature = 0.1;
    cfg.save(&args.out.join("run.toml"))?;

    eprintln!(
        "synth: wrote {} train rows, {} validation rows under {}",
        train_rows.len(),
        val_rows.len(),
        args.out.display()
    );
    Ok(())
}
