//! `contempo`: batch pipeline from scores and performances to trained models,
//! contribution matrices and rendered MIDI.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "contempo", version, about = "Expressive performance rendering with shapeable feature contributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score basis features, and expressive parameters when a performance is given.
    Extract(ExtractArgs),
    /// Train onset and note models on a corpus manifest.
    Train(TrainArgs),
    /// Render a performance of a score.
    Render(RenderArgs),
    /// Write the contribution matrices of a score.
    Jacobian(JacobianArgs),
    /// Encode a performance, decode it again and report the errors.
    Roundtrip(RoundtripArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Score file (.json, or .musicxml/.xml).
    #[arg(long)]
    score: PathBuf,
    /// Performance MIDI file; requires --alignment.
    #[arg(long, requires = "alignment")]
    midi: Option<PathBuf>,
    /// Alignment CSV (`score_note_id,perf_note_index`).
    #[arg(long, requires = "midi")]
    alignment: Option<PathBuf>,
    /// Note-wise basis CSV; written to stdout when no output is given.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Onset-wise basis CSV.
    #[arg(long)]
    onset_features: Option<PathBuf>,
    /// Standardized expressive parameters JSON; requires --midi.
    #[arg(long, requires = "midi")]
    params: Option<PathBuf>,
    /// Drop score notes missing from the alignment instead of failing.
    #[arg(long)]
    allow_missing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cell {
    Lstm,
    TanhRnn,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON list of {"score", "midi", "alignment"} paths, relative to the manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV [default: <out>.log.csv].
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, value_enum, default_value_t = Cell::Lstm)]
    cell: Cell,
    /// Hidden units per direction.
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long, default_value_t = 50)]
    patience: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reference {
    ColumnMean,
    Zero,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    score: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output MIDI file.
    #[arg(long)]
    out: PathBuf,
    /// JSON object of per-stream weight vectors, e.g. {"lbpr": [..18 values]}.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// JSON object with c, mu, sigma (number or per-stream object) and beat_period.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Shaped curves CSV.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Reference::ColumnMean)]
    reference: Reference,
}

#[derive(Args)]
struct JacobianArgs {
    #[arg(long)]
    score: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only this stream (vt, lbpr, vd, tim, art).
    #[arg(long)]
    stream: Option<contempo_core::Stream>,
    #[arg(long, value_enum, default_value_t = Reference::ColumnMean)]
    reference: Reference,
}

#[derive(Args)]
struct RoundtripArgs {
    #[arg(long)]
    score: PathBuf,
    #[arg(long)]
    midi: PathBuf,
    #[arg(long)]
    alignment: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "CONTEMPO_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, env = "CONTEMPO_MODEL")]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Reference::ColumnMean)]
    reference: Reference,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Jacobian(a) => commands::jacobian(a),
        Command::Roundtrip(a) => commands::roundtrip(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
