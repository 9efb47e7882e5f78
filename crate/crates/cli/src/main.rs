//! `stgcl`: scene-graph construction, association distances, contrastive
//! training, and retrieval over driving-scene tracking data.
//!
//! Exit codes: 0 on success, 1 on data or runtime errors, 2 on usage errors.

mod commands;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "stgcl",
    version,
    about = "Spatio-temporal scene graphs, video distances, and semi-supervised contrastive training"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Results do
    /// not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset as track/lane/manifest files.
    Synth(commands::synth::SynthArgs),
    /// Parse, downsample and slice a manifest; write the normalized clip manifest.
    Ingest(commands::ingest::IngestArgs),
    /// Build spatio-temporal graphs for every clip of a manifest.
    Graph(commands::graph::GraphArgs),
    /// Pairwise association distances between all clips of a manifest.
    Dist(commands::dist::DistArgs),
    /// Train the embedding model.
    Train(commands::train::TrainArgs),
    /// Embed clips with a trained model.
    Embed(commands::embed::EmbedArgs),
    /// Nearest-neighbor retrieval in embedding space.
    Retrieve(commands::retrieve::RetrieveArgs),
    /// Per-class average precision of a trained model on a labeled manifest.
    Eval(commands::eval::EvalArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()
        {
            eprintln!("stgcl: cannot configure {threads} threads: {e}");
            std::process::exit(1);
        }
    }
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Ingest(args) => commands::ingest::run(args),
        Command::Graph(args) => commands::graph::run(args),
        Command::Dist(args) => commands::dist::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Embed(args) => commands::embed::run(args),
        Command::Retrieve(args) => commands::retrieve::run(args),
        Command::Eval(args) => commands::eval::run(args),
    };
    if let Err(e) = result {
        eprintln!("stgcl: {e}");
        std::process::exit(1);
    }
}
