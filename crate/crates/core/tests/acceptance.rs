//! Acceptance gate for the modelling core. Each check prints one
//! `criterion N: PASS|FAIL` line with the measured figures before asserting.

use std::path::Path;
use std::time::Instant;

use contempo_core::basis::{feature, FEATURE_NAMES};
use contempo_core::codec::{
    decode_aligned, encode, read_midi, standardize, write_midi, DecodeControls, EncodeOptions, PerformedNote, Performance, Stream,
};
use contempo_core::linearize::{apply_weights, linearize, PieceAnalysis, ReferenceMode, WeightVector};
use contempo_core::matrix::Matrix;
use contempo_core::model::{prepare_corpus, train_bundle, Architecture};
use contempo_core::neural::{CellKind, NetworkConfig, NetworkParams, TrainingConfig};
use contempo_core::score::{parse_musicxml, parse_score_json};
use contempo_core::synthetic::{synthetic_corpus, SyntheticConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn close(analytic: f64, numeric: f64) -> bool {
    let abs = (analytic - numeric).abs();
    abs <= 1e-6 || abs <= 1e-4 * analytic.abs().max(numeric.abs())
}

#[test]
fn criterion_1_gradients_match_central_differences() {
    let started = Instant::now();
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut bad) = (0usize, Vec::new());
    for trial in 0..20 {
        let cfg = NetworkConfig {
            cell: if trial % 2 == 0 { CellKind::Lstm } else { CellKind::TanhRnn },
            hidden_size: rng.gen_range(1..=8),
            input_size: rng.gen_range(1..=4),
            output_size: rng.gen_range(1..=3),
            seed: rng.gen(),
        };
        let t = rng.gen_range(1..=6);
        let mut net = NetworkParams::<f64>::init(&cfg).unwrap();
        // non-zero biases so every parameter is exercised
        for p in net.as_mut_slice() {
            if *p == 0.0 {
                *p = rng.gen_range(-0.3..0.3);
            }
        }
        let x = random_matrix(&mut rng, t, cfg.input_size, 1.0);
        let y = random_matrix(&mut rng, t, cfg.output_size, 1.0);

        let (_, grads) = net.loss_and_grads(&x, &y).unwrap();
        for k in 0..grads.len() {
            let mut plus = net.clone();
            plus.as_mut_slice()[k] += eps;
            let mut minus = net.clone();
            minus.as_mut_slice()[k] -= eps;
            let numeric = (plus.loss(&x, &y).unwrap() - minus.loss(&x, &y).unwrap()) / (2.0 * eps);
            checked += 1;
            if !close(grads[k], numeric) {
                bad.push(format!("trial {trial} param {k}: {} vs {numeric}", grads[k]));
            }
        }

        for dim in 0..cfg.output_size {
            let jac = net.input_jacobian(&x, dim).unwrap();
            for s in 0..t {
                for j in 0..cfg.input_size {
                    let mut xp = x.clone();
                    xp.row_mut(s)[j] += eps;
                    let mut xm = x.clone();
                    xm.row_mut(s)[j] -= eps;
                    let (fp, fm) = (net.forward(&xp).unwrap(), net.forward(&xm).unwrap());
                    for i in 0..t {
                        let numeric = (fp[(i, dim)] - fm[(i, dim)]) / (2.0 * eps);
                        checked += 1;
                        if !close(jac.get(i, s, j), numeric) {
                            bad.push(format!("trial {trial} G[{i}][{s}][{j}]: {} vs {numeric}", jac.get(i, s, j)));
                        }
                    }
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        bad.is_empty() && secs < 30.0,
        format!(
            "{checked} derivatives checked over 20 configurations, {} mismatches{}, {secs:.2} s",
            bad.len(),
            bad.first().map(|b| format!(" (first: {b:?})")).unwrap_or_default()
        ),
    );
}

fn trained_onset_network(pieces: usize, epochs: usize) -> (NetworkParams<f64>, Vec<Matrix<f64>>) {
    let corpus = synthetic_corpus(pieces, 99, &SyntheticConfig::default());
    let prepared = prepare_corpus::<f64>(&corpus).unwrap();
    let cfg = NetworkConfig { cell: CellKind::Lstm, hidden_size: 8, input_size: FEATURE_NAMES.len(), output_size: 2, seed: 1 };
    let training = TrainingConfig { max_epochs: epochs, learning_rate: 3e-3, ..Default::default() };
    let outcome = contempo_core::neural::train(&cfg, &prepared.onset_samples, &training).unwrap();
    (outcome.params, prepared.onset_samples.into_iter().map(|s| s.inputs).collect())
}

#[test]
fn criterion_2_taylor_fidelity() {
    let (net, inputs) = trained_onset_network(6, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ratios = Vec::new();
    let mut identity_err: f64 = 0.0;
    for trial in 0..10 {
        let base = &inputs[trial % inputs.len()];
        let (t, k) = base.shape();
        let reference = contempo_core::linearize::reference_point(base);
        let at = Matrix::broadcast_row(t, &reference);
        // zero column means keep the reference point fixed as the displacement shrinks
        let mut dir = random_matrix(&mut rng, t, k, 1.0);
        for j in 0..k {
            let m = dir.column(j).iter().sum::<f64>() / t as f64;
            for i in 0..t {
                dir.row_mut(i)[j] -= m;
            }
        }
        let max_err = |h: f64| {
            let phi = Matrix::from_vec(t, k, at.as_slice().iter().zip(dir.as_slice()).map(|(a, d)| a + h * d).collect());
            let lin = linearize(&net, &phi, 1, Stream::Lbpr, ReferenceMode::ColumnMean).unwrap();
            let exact = net.forward(&phi).unwrap().column(1);
            let taylor = lin.taylor();
            (exact.iter().zip(&taylor).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max), lin, phi)
        };
        let (e1, lin, phi) = max_err(0.2);
        let (e2, _, _) = max_err(0.1);
        ratios.push(e1 / e2);

        // w = 1: ỹ − c + f(Φ*) against the expansion summed straight from the Jacobian
        let jac = net.input_jacobian(&at, 1).unwrap();
        let c0 = 0.37;
        let y = apply_weights(&lin.c, &WeightVector::ones(k), c0).unwrap();
        for i in 0..t {
            let mut expansion = lin.baseline[i];
            for s in 0..t {
                for j in 0..k {
                    expansion += jac.get(i, s, j) * (phi[(s, j)] - reference[j]);
                }
            }
            identity_err = identity_err.max((y[i] - c0 + lin.baseline[i] - expansion).abs());
        }
    }
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    report(
        2,
        worst >= 3.0 && identity_err <= 1e-10,
        format!("min error reduction on halving {worst:.3} over 10 trials; w=1 identity error {identity_err:.2e}"),
    );
}

#[test]
fn criterion_3_linearity_in_weights() {
    let corpus = synthetic_corpus(1, 17, &SyntheticConfig::default());
    let bundle = contempo_core::model::ModelBundle::<f64>::untrained(CellKind::Lstm, 6, 3).unwrap();
    let analysis = PieceAnalysis::new(&corpus[0].score, &bundle, ReferenceMode::ColumnMean).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut zero_ok, mut homog, mut superpos): (bool, f64, f64) = (true, 0.0, 0.0);
    for stream in Stream::ALL {
        let c_mat = &analysis.contributions(stream).c;
        let k = c_mat.cols();
        let c = rng.gen_range(-2.0..2.0);
        let y0 = apply_weights(c_mat, &WeightVector::zeros(k), c).unwrap();
        zero_ok &= y0.iter().all(|&v| v == c);
        for _ in 0..10 {
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let alpha = rng.gen_range(-4.0..4.0);
            let yw = apply_weights(c_mat, &WeightVector(w.clone()), c).unwrap();
            let yv = apply_weights(c_mat, &WeightVector(v.clone()), c).unwrap();
            let ya = apply_weights(c_mat, &WeightVector(w.iter().map(|x| alpha * x).collect()), c).unwrap();
            let ys = apply_weights(c_mat, &WeightVector(w.iter().zip(&v).map(|(a, b)| a + b).collect()), c).unwrap();
            for i in 0..yw.len() {
                homog = homog.max(((ya[i] - c) - alpha * (yw[i] - c)).abs());
                superpos = superpos.max(((ys[i] - c) - ((yw[i] - c) + (yv[i] - c))).abs());
            }
        }
    }
    report(
        3,
        zero_ok && homog <= 1e-12 && superpos <= 1e-12,
        format!("ỹ(0)=c exact: {zero_ok}; homogeneity error {homog:.2e}; superposition error {superpos:.2e}"),
    );
}

#[test]
fn criterion_4_codec_round_trip() {
    let corpus = synthetic_corpus(5, 4, &SyntheticConfig::default());
    let (mut onset_err, mut dur_err, mut vel_mismatch): (f64, f64, usize) = (0.0, 0.0, 0);
    let mut lbpr_err: f64 = 0.0;
    for piece in &corpus {
        let params = encode::<f64>(&piece.score, &piece.performance, &piece.alignment, EncodeOptions::default()).unwrap();
        let z = standardize(&params);
        let controls = DecodeControls::from_params(&z).unwrap();
        let (decoded, aligned) = decode_aligned(&piece.score, &z.values, &controls).unwrap();
        for note in piece.score.notes() {
            let a = piece.performance.notes()[piece.alignment.get(&note.id).unwrap()];
            let b = decoded.notes()[aligned.get(&note.id).unwrap()];
            onset_err = onset_err.max((a.onset_sec - b.onset_sec).abs());
            dur_err = dur_err.max((a.duration_sec - b.duration_sec).abs());
            vel_mismatch += usize::from(a.velocity != b.velocity);
        }
        for alpha in [0.5, 2.0] {
            let scaled = piece.performance.time_scaled(alpha).unwrap();
            let p2 = encode::<f64>(&piece.score, &scaled, &piece.alignment, EncodeOptions::default()).unwrap();
            for (x, y) in params.stream(Stream::Lbpr).iter().zip(p2.stream(Stream::Lbpr)) {
                lbpr_err = lbpr_err.max((x - y).abs());
            }
        }
    }
    report(
        4,
        onset_err <= 1e-9 && dur_err <= 1e-9 && vel_mismatch == 0 && lbpr_err <= 1e-12,
        format!("5 pieces: onset error {onset_err:.2e} s, duration error {dur_err:.2e} s, {vel_mismatch} velocity mismatches; lbpr scaling error {lbpr_err:.2e}"),
    );
}

#[test]
fn criterion_5_attribution_recovers_downbeat() {
    let started = Instant::now();
    let corpus = synthetic_corpus(30, 2025, &SyntheticConfig::default());
    let training = TrainingConfig { max_epochs: 500, learning_rate: 3e-3, seed: 5, ..Default::default() };
    let trained = train_bundle::<f64>(&corpus, Architecture { cell: CellKind::Lstm, hidden_size: 16 }, &training).unwrap();
    let best = trained.bundle.onset_model.clone();
    let history = &trained.onset_history;
    let train_mse = history.iter().map(|e| e.train_mse).fold(f64::INFINITY, f64::min);

    // column norms of the lbpr contribution matrices, pooled over the corpus
    let prepared = prepare_corpus::<f64>(&corpus).unwrap();
    let mut norms = vec![0.0; FEATURE_NAMES.len()];
    for s in &prepared.onset_samples {
        let lin = linearize(&best, &s.inputs, Stream::Lbpr.output_index(), Stream::Lbpr, ReferenceMode::ColumnMean).unwrap();
        for (j, n) in norms.iter_mut().enumerate() {
            *n += lin.c.column(j).iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norms: Vec<f64> = norms.into_iter().map(f64::sqrt).collect();
    let runner_up = norms.iter().enumerate().filter(|&(j, _)| j != feature::DOWNBEAT).map(|(_, &n)| n).fold(0.0, f64::max);
    let runner_name = FEATURE_NAMES[norms.iter().enumerate().filter(|&(j, _)| j != feature::DOWNBEAT).max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
    let factor = norms[feature::DOWNBEAT] / runner_up;
    let secs = started.elapsed().as_secs_f64();
    report(
        5,
        train_mse < 0.05 && factor >= 3.0 && secs < 180.0,
        format!(
            "onset-model training MSE {train_mse:.4} in {} epochs; downbeat norm {:.3} is {factor:.2}× the next ({runner_name}); {secs:.1} s",
            history.len(),
            norms[feature::DOWNBEAT]
        ),
    );
}

#[test]
fn criterion_6_midi_golden_bytes() {
    let perf = Performance::new(vec![
        PerformedNote { pitch: 60, onset_sec: 0.0, duration_sec: 0.5, velocity: 80 },
        PerformedNote { pitch: 64, onset_sec: 0.5, duration_sec: 0.5, velocity: 90 },
    ])
    .unwrap();
    #[rustfmt::skip]
    let golden: Vec<u8> = vec![
        0x4D, 0x54, 0x68, 0x64, 0, 0, 0, 6, 0, 1, 0, 2, 0x01, 0xE0,
        0x4D, 0x54, 0x72, 0x6B, 0, 0, 0, 0x0B, 0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20, 0x00, 0xFF, 0x2F, 0x00,
        0x4D, 0x54, 0x72, 0x6B, 0, 0, 0, 0x16,
        0x00, 0x90, 0x3C, 0x50, 0x83, 0x60, 0x80, 0x3C, 0x00,
        0x00, 0x90, 0x40, 0x5A, 0x83, 0x60, 0x80, 0x40, 0x00,
        0x00, 0xFF, 0x2F, 0x00,
    ];
    let bytes = write_midi(&perf);
    let frozen = bytes == golden;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tick = 1.0 / contempo_core::codec::TICKS_PER_SECOND;
    let mut worst: f64 = 0.0;
    let mut identity = true;
    for _ in 0..20 {
        // distinct pitches: overlapping notes of one pitch are ambiguous in SMF
        let mut pitches: Vec<u8> = (21..=108).collect();
        pitches.shuffle(&mut rng);
        let notes: Vec<PerformedNote> = pitches[..rng.gen_range(1..40)]
            .iter()
            .map(|&pitch| PerformedNote {
                pitch,
                onset_sec: rng.gen_range(0.0..20.0),
                duration_sec: rng.gen_range(0.01..2.0),
                velocity: rng.gen_range(1..=127),
            })
            .collect();
        let p = Performance::new(notes).unwrap();
        let back = read_midi(&write_midi(&p)).unwrap();
        identity &= back.len() == p.len();
        // re-encoding the quantized performance is exact
        identity &= write_midi(&back) == write_midi(&p);
        let mut a: Vec<_> = p.notes().to_vec();
        let mut b: Vec<_> = back.notes().to_vec();
        let key = |n: &PerformedNote| (n.pitch, (n.onset_sec / tick).round() as i64);
        a.sort_by_key(key);
        b.sort_by_key(key);
        for (x, y) in a.iter().zip(&b) {
            identity &= x.pitch == y.pitch && x.velocity == y.velocity;
            worst = worst.max((x.onset_sec - y.onset_sec).abs()).max((x.onset_sec + x.duration_sec - y.onset_sec - y.duration_sec).abs());
        }
    }
    report(
        6,
        frozen && identity && worst <= tick,
        format!("golden bytes match: {frozen}; read∘write identity: {identity}; worst time error {worst:.2e} s (tick {tick:.2e} s)"),
    );
}

#[test]
fn criterion_7_musicxml_matches_json_twin() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut results = Vec::new();
    for name in ["tie_wedge", "voices_triplets", "meter_change"] {
        let xml = parse_musicxml(&std::fs::read(dir.join(format!("{name}.musicxml"))).unwrap()).unwrap();
        let json = parse_score_json(&std::fs::read(dir.join(format!("{name}.json"))).unwrap()).unwrap();
        results.push((name, xml == json));
    }
    report(7, results.iter().all(|r| r.1), format!("{results:?}"));
}
