use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use motionforge::ad::{Array, RandomSource};
use motionforge::cli::RunManifest;
use motionforge::data::{load_sequences, synthetic_dataset, SkeletonSpec, SynthSpec};
use motionforge::eval::{export_sequence, ExportFormat, Report};
use motionforge::motion::{wrap_angle, MotionSequence};
use motionforge::pose::{pose_cycle_losses, PoseAae};
use motionforge::training::LOG_HEADER;

const SYNTH: [&str; 5] = ["--synthetic", "--synth_per_category", "2", "--synth_length", "70"];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionforge"))
        .args(args)
        .env("MOTIONFORGE_LOG", "error")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn read_seq(path: &Path) -> MotionSequence<f64> {
    let spec = SkeletonSpec::passthrough(54);
    let mut r = load_sequences::<f64>(path, &spec, 1).unwrap();
    r.sequences.remove(0)
}

struct Artifacts {
    dir: tempfile::TempDir,
}

impl Artifacts {
    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }
}

const GAN_CFG: &str = "batch_size=4\nlr=0.002\npast_len=10\npred_len=25\nm=2\nk=6\nembed_dim=8\nr_dim=4\nenc_hidden=8\ndec_hidden=8\ndisc_hidden=6\nhead_hidden=6\n";

/// A small pose run, a GAN trained on it and a few pose/seed files.
fn artifacts() -> &'static Artifacts {
    static A: OnceLock<Artifacts> = OnceLock::new();
    A.get_or_init(|| {
        let a = Artifacts { dir: tempfile::tempdir().unwrap() };
        let pose_out = s(&a.path("pose"));
        let out = run(&[&["train-pose", "--out", &pose_out, "--iterations", "200", "--lr", "0.005", "--embed_dim", "8", "--seed", "4"][..], &SYNTH[..]].concat());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::write(a.path("gan.cfg"), GAN_CFG).unwrap();
        let (cfg, pose, gan) = (s(&a.path("gan.cfg")), s(&a.path("pose/pose.ckpt")), s(&a.path("gan")));
        let out = run(&[&["train-gan", "--config", &cfg, "--pose", &pose, "--out", &gan, "--seed", "4"][..], &SYNTH[..]].concat());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let seqs: Vec<MotionSequence<f64>> = synthetic_dataset(&SynthSpec::default(), 1, 14, 0.0, &mut RandomSource::new(8)).unwrap();
        export_sequence(&seqs[0], &a.path("seed.csv"), ExportFormat::Csv).unwrap();
        export_sequence(&seqs[0].window(0, 5).unwrap(), &a.path("short.csv"), ExportFormat::Csv).unwrap();
        export_sequence(&seqs[0].window(2, 1).unwrap(), &a.path("a.csv"), ExportFormat::Csv).unwrap();
        export_sequence(&seqs[3].window(7, 1).unwrap(), &a.path("b.jsonl"), ExportFormat::JsonLines).unwrap();
        a
    })
}

fn predict(extra: &[&str], out: &Path) -> Output {
    let a = artifacts();
    let (ck, seed, o) = (s(&a.path("gan/gan.ckpt")), s(&a.path("seed.csv")), s(out));
    run(&[&["predict", "--checkpoint", &ck, "--input", &seed, "--out", &o][..], extra].concat())
}

fn interpolate(pa: &str, pb: &str, steps: &str, out: &Path) -> MotionSequence<f64> {
    let a = artifacts();
    let (pose, pa, pb, o) = (s(&a.path("pose/pose.ckpt")), s(&a.path(pa)), s(&a.path(pb)), s(out));
    let res = run(&["interpolate", "--pose", &pose, "--pose_a", &pa, "--pose_b", &pb, "--steps", steps, "--out", &o]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    read_seq(&out.join("interpolation.csv"))
}

fn row(seq: &MotionSequence<f64>, t: usize) -> Array<f64> {
    Array::new(vec![1, seq.dim()], seq.frame(t).to_vec()).unwrap()
}

#[test]
fn predict_with_zero_r_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (d1, d2) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&predict(&["--r", "zeros"], &d1)), 0);
    assert_eq!(code(&predict(&["--r", "zeros"], &d2)), 0);
    assert_eq!(fs::read(d1.join("sample_000.csv")).unwrap(), fs::read(d2.join("sample_000.csv")).unwrap());
}

#[test]
fn predict_writes_n_samples_with_distinct_r() {
    let dir = tempfile::tempdir().unwrap();
    let out = predict(&["--n_samples", "5", "--seed", "3"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..5 {
        let seq = read_seq(&dir.path().join(format!("sample_{i:03}.csv")));
        assert_eq!(seq.len(), 25);
        assert_eq!(seq.dim(), 54);
    }
    assert!(!dir.path().join("sample_005.csv").exists());
    let r_text = fs::read_to_string(dir.path().join("r.tsv")).unwrap();
    let rows: Vec<&str> = r_text.lines().skip(1).map(|l| l.split_once('\t').unwrap().1).collect();
    assert_eq!(rows.len(), 5);
    for i in 0..5 {
        for j in i + 1..5 {
            assert_ne!(rows[i], rows[j]);
        }
    }
}

#[test]
fn predict_rejects_short_seed() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let (ck, short, o) = (s(&a.path("gan/gan.ckpt")), s(&a.path("short.csv")), s(dir.path()));
    assert_eq!(code(&run(&["predict", "--checkpoint", &ck, "--input", &short, "--out", &o])), 4);
}

#[test]
fn pose_run_is_reproducible_and_halves_cycle_loss() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let o = s(dir.path());
    let out = run(&[&["train-pose", "--out", &o, "--iterations", "200", "--lr", "0.005", "--embed_dim", "8", "--seed", "4"][..], &SYNTH[..]].concat());
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(dir.path().join("pose.ckpt")).unwrap(), fs::read(a.path("pose/pose.ckpt")).unwrap());
    let m1 = RunManifest::read(dir.path()).unwrap();
    let m2 = RunManifest::read(&a.path("pose")).unwrap();
    assert_eq!(m1.input_sha256, m2.input_sha256);

    let log = fs::read_to_string(a.path("pose/pose_loss.tsv")).unwrap();
    let cyc: Vec<f64> = log.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(cyc.len(), 200);
    let head: f64 = cyc[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = cyc[190..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.5 * head, "l_cyc {head} -> {tail}");

    let aae = PoseAae::<f64>::load(&a.path("pose/pose.ckpt")).unwrap();
    let x = read_seq(&a.path("seed.csv"));
    let z = RandomSource::new(1).sample_normal(vec![x.len(), 8]).unwrap();
    assert!(pose_cycle_losses(&aae, x.frames(), &z, 0.0).unwrap().l_cyc.is_finite());
}

#[test]
fn train_pose_missing_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (o, missing) = (s(dir.path()), s(&dir.path().join("nope.cfg")));
    let out = run(&[&["train-pose", "--config", &missing, "--out", &o][..], &SYNTH[..]].concat());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn train_gan_emits_k_log_lines() {
    let a = artifacts();
    let log = fs::read_to_string(a.path("gan/loss.tsv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    assert_eq!(lines.count(), 6);
}

#[test]
fn train_gan_refuses_mismatched_pose_dim_under_defaults() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let (pose, o) = (s(&a.path("pose/pose.ckpt")), s(dir.path()));
    let out = run(&[&["train-gan", "--pose", &pose, "--out", &o, "--k", "1"][..], &SYNTH[..]].concat());
    assert_eq!(code(&out), 3);
}

#[test]
fn ablation_flag_reaches_manifest() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let (cfg, pose, o) = (s(&a.path("gan.cfg")), s(&a.path("pose/pose.ckpt")), s(dir.path()));
    let out = run(&[&["train-gan", "--config", &cfg, "--pose", &pose, "--out", &o, "--k", "1", "--ablation", "no_recursive"][..], &SYNTH[..]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = RunManifest::read(dir.path()).unwrap();
    assert_eq!(m.config["no_recursive"], "true");
    assert_eq!(m.config["no_encoder_chaining"], "false");
}

#[test]
fn evaluate_rejects_unknown_metric() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let (ck, o) = (s(&a.path("gan/gan.ckpt")), s(dir.path()));
    let out = run(&[&["evaluate", "--checkpoint", &ck, "--metrics", "euler_r_prime,bleu", "--out", &o][..], &SYNTH[..]].concat());
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("min_err") && err.contains("classifier"), "{err}");
}

#[test]
fn evaluate_min_err_defaults_to_1000_vectors() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let (ck, o) = (s(&a.path("gan/gan.ckpt")), s(dir.path()));
    let out = run(&[&["evaluate", "--checkpoint", &ck, "--metrics", "min_err", "--test_seeds", "1", "--out", &o][..], &SYNTH[..]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = Report::parse_tsv(&fs::read_to_string(dir.path().join("report.tsv")).unwrap()).unwrap();
    let bank = report.rows.iter().find(|r| r.metric == "min_err.bank_size").unwrap();
    assert_eq!(bank.value, 1000.0);
}

#[test]
fn evaluate_produces_all_sections() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let (ck, cfg, o) = (s(&a.path("gan/gan.ckpt")), s(&a.path("gan.cfg")), s(dir.path()));
    let out = run(&[
        &["evaluate", "--checkpoint", &ck, "--config", &cfg, "--k", "2", "--test_seeds", "2", "--bank_size", "5"][..],
        &["--classifier_iterations", "5", "--out", &o][..],
        &SYNTH[..],
    ]
    .concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = Report::parse_tsv(&fs::read_to_string(dir.path().join("report.tsv")).unwrap()).unwrap();
    assert_eq!(report.sections(), motionforge::eval::METRICS.to_vec());
}

#[test]
fn interpolate_midpoint_matches_blend_oracle() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let seq = interpolate("a.csv", "b.jsonl", "11", dir.path());
    assert_eq!(seq.len(), 11);
    let aae = PoseAae::<f64>::load(&a.path("pose/pose.ckpt")).unwrap();
    let pa = read_seq(&a.path("a.csv"));
    let pb = read_seq(&a.path("b.jsonl"));
    let za = aae.encode(&row(&pa, 0)).unwrap();
    let zb = aae.encode(&row(&pb, 0)).unwrap();
    let mid = za.zip_map(&zb, |p, q| 0.5 * p + 0.5 * q);
    let oracle = aae.decode(&mid).unwrap().map(wrap_angle);
    for (x, y) in seq.frame(5).iter().zip(oracle.values()) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn interpolate_two_steps_gives_reconstructions() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let seq = interpolate("a.csv", "b.jsonl", "2", dir.path());
    assert_eq!(seq.len(), 2);
    let aae = PoseAae::<f64>::load(&a.path("pose/pose.ckpt")).unwrap();
    for (t, file) in [(0, "a.csv"), (1, "b.jsonl")] {
        let x = read_seq(&a.path(file));
        let rec = aae.decode(&aae.encode(&row(&x, 0)).unwrap()).unwrap().map(wrap_angle);
        for (x, y) in seq.frame(t).iter().zip(rec.values()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn interpolate_identical_inputs_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let seq = interpolate("a.csv", "a.csv", "7", dir.path());
    for t in 1..7 {
        assert_eq!(seq.frame(t), seq.frame(0));
    }
}
