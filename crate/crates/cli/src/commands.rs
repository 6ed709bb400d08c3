use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use contempo_core::basis::{onset_basis, FEATURE_NAMES};
use contempo_core::codec::{
    decode_aligned, encode, read_alignment, read_midi, standardize, write_midi, DecodeControls, EncodeOptions, Performance,
};
use contempo_core::linearize::ReferenceMode;
use contempo_core::model::{train_bundle, Architecture, TrainingPiece};
use contempo_core::{ModelBundle, PieceAnalysis};
use contempo_core::neural::{CellKind, EpochLoss, TrainingConfig};
use contempo_core::score::{build_onset_index, parse_musicxml, parse_score_json, Score};
use contempo_core::Stream;
use contempo_service::ControlsRequest;
use serde::Deserialize;

use crate::{Cell, ExtractArgs, JacobianArgs, Reference, RenderArgs, RoundtripArgs, ServeArgs, TrainArgs};

fn read(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("read {what} ({})", path.display()))
}

fn write(path: &Path, what: &str, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("write {what} ({})", path.display()))
}

fn load_score(path: &Path) -> Result<Score> {
    let bytes = read(path, "score")?;
    let xml = matches!(path.extension().and_then(|e| e.to_str()), Some("musicxml" | "xml"));
    let parsed = if xml { parse_musicxml(&bytes) } else { parse_score_json(&bytes) };
    parsed.with_context(|| format!("parse score ({})", path.display()))
}

fn load_performance(path: &Path) -> Result<Performance> {
    read_midi(&read(path, "MIDI")?).with_context(|| format!("parse MIDI ({})", path.display()))
}

fn load_model(path: &Path) -> Result<ModelBundle> {
    ModelBundle::from_json(&read(path, "model")?).with_context(|| format!("load model ({})", path.display()))
}

fn load_piece(score: &Path, midi: &Path, alignment: &Path) -> Result<TrainingPiece> {
    let s = load_score(score)?;
    let p = load_performance(midi)?;
    let a = read_alignment(&read(alignment, "alignment")?, &s, &p).with_context(|| format!("read alignment ({})", alignment.display()))?;
    Ok(TrainingPiece { score: s, performance: p, alignment: a })
}

fn reference(r: Reference) -> ReferenceMode {
    match r {
        Reference::ColumnMean => ReferenceMode::ColumnMean,
        Reference::Zero => ReferenceMode::Zero,
    }
}

fn csv_to(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("create {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    })
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let score = load_score(&a.score)?;
    let index = build_onset_index(&score);
    let basis = contempo_core::basis::note_basis::<f64>(&score, &index);
    let nothing_requested = a.features.is_none() && a.onset_features.is_none() && a.params.is_none();
    if a.features.is_some() || nothing_requested {
        basis.to_csv(csv_to(a.features.as_deref())?).context("basis features")?;
    }
    if let Some(path) = &a.onset_features {
        onset_basis(&basis, &index).to_csv(csv_to(Some(path))?).context("onset features")?;
    }
    if let (Some(midi), Some(alignment)) = (&a.midi, &a.alignment) {
        let piece = load_piece(&a.score, midi, alignment)?;
        let raw = encode::<f64>(&piece.score, &piece.performance, &piece.alignment, EncodeOptions { allow_missing: a.allow_missing })
            .with_context(|| format!("encode performance ({})", midi.display()))?;
        if let Some(path) = &a.params {
            write(path, "parameters", standardize(&raw).to_json().as_bytes())?;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    score: PathBuf,
    midi: PathBuf,
    alignment: PathBuf,
}

fn write_log(path: &Path, onset: &[EpochLoss], note: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("write training log ({})", path.display()))?;
    w.write_record(["model", "epoch", "train_mse", "holdout_mse"])?;
    for (name, history) in [("onset", onset), ("note", note)] {
        for e in history {
            let holdout = e.holdout_mse.map(|h| h.to_string()).unwrap_or_default();
            w.write_record([name, &e.epoch.to_string(), &e.train_mse.to_string(), &holdout])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let entries: Vec<ManifestEntry> = serde_json::from_slice(&read(&a.manifest, "manifest")?)
        .with_context(|| format!("parse manifest ({})", a.manifest.display()))?;
    if entries.is_empty() {
        bail!("manifest ({}) lists no pieces", a.manifest.display());
    }
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let corpus = entries
        .iter()
        .map(|e| load_piece(&base.join(&e.score), &base.join(&e.midi), &base.join(&e.alignment)))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        cell: match a.cell {
            Cell::Lstm => CellKind::Lstm,
            Cell::TanhRnn => CellKind::TanhRnn,
        },
        hidden_size: a.hidden,
    };
    let cfg = TrainingConfig {
        learning_rate: a.learning_rate,
        max_epochs: a.epochs,
        seed: a.seed,
        patience: a.patience,
        holdout_fraction: a.holdout,
        ..Default::default()
    };
    let trained = train_bundle::<f64>(&corpus, arch, &cfg).with_context(|| format!("train on manifest ({})", a.manifest.display()))?;
    write(&a.out, "model", trained.bundle.to_json().as_bytes())?;
    let log = a.log.unwrap_or_else(|| a.out.with_extension("log.csv"));
    write_log(&log, &trained.onset_history, &trained.note_history)?;
    let last = |h: &[EpochLoss]| h.last().map_or(f64::NAN, |e| e.train_mse);
    println!(
        "trained on {} pieces: onset model {} epochs (train mse {:.5}), note model {} epochs (train mse {:.5})",
        corpus.len(),
        trained.onset_history.len(),
        last(&trained.onset_history),
        trained.note_history.len(),
        last(&trained.note_history)
    );
    Ok(())
}

fn analyse(score: &Score, model_path: &Path, mode: ReferenceMode) -> Result<PieceAnalysis> {
    let model = load_model(model_path)?;
    PieceAnalysis::new(score, &model, mode).with_context(|| format!("linearize model ({})", model_path.display()))
}

pub fn render(a: RenderArgs) -> Result<()> {
    let score = load_score(&a.score)?;
    let analysis = analyse(&score, &a.model, reference(a.reference))?;
    let mut request: ControlsRequest = match &a.controls {
        Some(p) => serde_json::from_slice(&read(p, "controls")?).with_context(|| format!("parse controls ({})", p.display()))?,
        None => ControlsRequest::default(),
    };
    if let Some(p) = &a.weights {
        let weights: std::collections::BTreeMap<String, Vec<f64>> =
            serde_json::from_slice(&read(p, "weights")?).with_context(|| format!("parse weights ({})", p.display()))?;
        request.weights.extend(weights);
    }
    let (weights, controls) = request.resolve(&analysis).context("validate controls")?;
    let rendering = analysis.render(&weights, &controls).context("render")?;
    write(&a.out, "MIDI", &write_midi(&rendering.performance))?;
    if let Some(path) = &a.curves {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("write curves ({})", path.display()))?;
        w.write_record(["stream", "row", "id", "onset_beats", "value"])?;
        for stream in Stream::ALL {
            let beats = analysis.row_beats(stream);
            for (i, v) in rendering.curves[stream].iter().enumerate() {
                let id = if stream.is_onset_wise() { String::new() } else { score.notes()[i].id.clone() };
                w.write_record([stream.name(), &i.to_string(), &id, &beats[i].to_string(), &v.to_string()])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

pub fn jacobian(a: JacobianArgs) -> Result<()> {
    let score = load_score(&a.score)?;
    let analysis = analyse(&score, &a.model, reference(a.reference))?;
    let mut w = csv::Writer::from_writer(csv_to(a.out.as_deref())?);
    let mut header = vec!["stream", "row", "id", "onset_beats"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    let streams: Vec<Stream> = match a.stream {
        Some(s) => vec![s],
        None => Stream::ALL.to_vec(),
    };
    for stream in streams {
        let c = &analysis.contributions(stream).c;
        let beats = analysis.row_beats(stream);
        for (i, row) in c.row_iter().enumerate() {
            let id = if stream.is_onset_wise() { String::new() } else { score.notes()[i].id.clone() };
            let mut record = vec![stream.name().to_owned(), i.to_string(), id, beats[i].to_string()];
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn roundtrip(a: RoundtripArgs) -> Result<()> {
    let piece = load_piece(&a.score, &a.midi, &a.alignment)?;
    let raw = encode::<f64>(&piece.score, &piece.performance, &piece.alignment, EncodeOptions::default())
        .with_context(|| format!("encode performance ({})", a.midi.display()))?;
    let z = standardize(&raw);
    let controls = DecodeControls::from_params(&z).context("decode controls")?;
    let (decoded, aligned) = decode_aligned(&piece.score, &z.values, &controls).context("decode")?;

    // decoding starts the grid at 0 s; compare relative to the first grid time
    let index = build_onset_index(&piece.score);
    let first = &index.members()[0];
    let offset = first
        .iter()
        .map(|&i| piece.performance.notes()[piece.alignment.get(&piece.score.notes()[i].id).unwrap()].onset_sec)
        .sum::<f64>()
        / first.len() as f64;
    let (mut onset, mut duration, mut velocity) = (0.0f64, 0.0f64, 0usize);
    for note in piece.score.notes() {
        let p = piece.performance.notes()[piece.alignment.get(&note.id).unwrap()];
        let d = decoded.notes()[aligned.get(&note.id).unwrap()];
        onset = onset.max((p.onset_sec - offset - d.onset_sec).abs());
        duration = duration.max((p.duration_sec - d.duration_sec).abs());
        velocity += usize::from(p.velocity != d.velocity);
    }
    println!("notes: {}", piece.score.notes().len());
    println!("onsets: {}", index.len());
    println!("max_onset_error_sec: {onset:e}");
    println!("max_duration_error_sec: {duration:e}");
    println!("velocity_mismatches: {velocity}");
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let state = contempo_service::AppState::with_reference(model, reference(a.reference));
    let runtime = tokio::runtime::Runtime::new().context("start runtime")?;
    runtime.block_on(contempo_service::serve(a.addr, state)).with_context(|| format!("serve on {}", a.addr))
}
