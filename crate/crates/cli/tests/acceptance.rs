//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criterion 4 is a known failure on the constant-motion scene; see the
//! README section on tracking. It is reported, not asserted.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vton::agnostic::mask_occluded_clothes_with_mask;
use vton::flowtrack::{ridge_smooth, FlowWindow};
use vton::geometry::{identity_flow, tps_apply, warp_by_flow, FlowField};
use vton::mpdt::{
    dual_stream_attention, fuse_background, GeneratorTensors, InputChannels, Mpdt, MpdtConfig,
    StreamEmbeddings,
};
use vton::numcore::{Tape, Tensor};
use vton::objectives::{frechet_distance, ssim};
use vton::pipeline::synth::OCCLUDER_COLOR;
use vton::pipeline::{gradsuite, synth_scene, track_flows, train_toy, warp_fit, Config, Motion};

const KNOWN_FAILURES: &[usize] = &[4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn note(line: &str) {
    let _ = writeln!(std::io::stdout(), "      {line}");
}

fn small_mpdt() -> MpdtConfig {
    MpdtConfig {
        channels: 16,
        blocks: 1,
        heads: 2,
        patch_sizes: vec![(4, 4), (2, 2)],
        ..MpdtConfig::default()
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let entries = gradsuite::run_suite(0).expect("gradient suite runs");
    let secs = start.elapsed().as_secs_f64();
    let worst = entries
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .unwrap();
    let dead: Vec<_> = entries
        .iter()
        .filter(|e| e.grad_max_abs == 0.0)
        .map(|e| e.name)
        .collect();
    let pass = worst.max_rel_err <= 1e-4 && secs <= 60.0 && dead.is_empty();
    outcome(
        pass,
        format!(
            "{} ops, worst {} at {:.2e} (≤ 1e-4), {secs:.1} s (≤ 60 s), zero-gradient ops {dead:?}",
            entries.len(),
            worst.name,
            worst.max_rel_err
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut r = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let cfg = MpdtConfig {
        channels: 4,
        heads: 2,
        patch_sizes: vec![(2, 2)],
        ..MpdtConfig::default()
    };
    let s = [2, 4, 4, 4];
    let x: Vec<Tensor> = (0..5).map(|_| r(&s)).collect();
    let (w1, b1) = (r(&[8, 4]), r(&[4]));
    let mask = Tensor::from_fn(&[2, 4, 4], |i| if i % 5 == 1 { 1.0 } else { 0.0 });
    let tape = Tape::new();
    let v: Vec<_> = x.iter().map(|t| tape.constant(t.clone())).collect();
    let e = StreamEmbeddings {
        q: v[0],
        kc: v[1],
        vc: v[2],
        ka: v[3],
        va: v[4],
    };
    let got = dual_stream_attention(
        &e,
        &mask,
        &cfg,
        tape.constant(w1.clone()),
        tape.constant(b1.clone()),
    )
    .unwrap();
    let want = common::dual_stream_oracle(
        &x[0],
        &x[1],
        &x[2],
        &x[3],
        &x[4],
        &mask,
        0.0,
        &[(2, 2), (2, 2)],
        &w1,
        &b1,
    );
    let att = common::rel_err(got.value().data(), want.data());

    let flows: Vec<FlowField> = (0..4)
        .map(|_| {
            let id = identity_flow(2, 2);
            let c: Vec<f64> = id
                .coords()
                .data()
                .iter()
                .map(|v| v + 0.1 * rng.random_range(-1.0..1.0))
                .collect();
            FlowField::from_flat(2, 2, c).unwrap()
        })
        .collect();
    let cols: Vec<Vec<f64>> = flows[..3].iter().map(|f| f.normalized()).collect();
    let f = flows[3].normalized();
    let window = FlowWindow::from_columns(cols.clone()).unwrap();
    let ridge = common::rel_err(
        &ridge_smooth(&f, &window, 0.1).unwrap(),
        &common::ridge_dense(&cols, &f, 0.1),
    );
    outcome(
        att <= 1e-10 && ridge <= 1e-10,
        format!("attention rel err {att:.1e}, ridge rel err {ridge:.1e} (both ≤ 1e-10)"),
    )
}

fn published_constants() -> Outcome {
    let cfg = Config::default();
    let golden = cfg.to_toml() == common::GOLDEN_CONFIG;
    let wrong: Vec<_> = common::published_constants(&cfg)
        .into_iter()
        .filter(|(_, expected, got)| expected != got)
        .map(|(k, _, _)| k)
        .collect();
    outcome(
        golden && wrong.is_empty(),
        format!(
            "golden dump {}, mismatched constants {wrong:?}",
            if golden { "matches" } else { "differs" }
        ),
    )
}

fn jitter_ratio(cfg: &Config) -> (f64, f64, f64) {
    let bundle = synth_scene(&cfg.scene).unwrap();
    let noisy = bundle.noisy_flows().unwrap().unwrap();
    let clothes = vec![bundle.clothes.clone(); bundle.len()];
    let (_, j) = track_flows(
        &bundle,
        &noisy,
        &clothes,
        &cfg.labels().unwrap(),
        &cfg.track,
    )
    .unwrap();
    (j.before, j.after, j.after / j.before)
}

fn tracking_efficacy() -> Outcome {
    let start = Instant::now();
    let cfg = Config::default();
    let (before, after, ratio) = jitter_ratio(&cfg);
    let secs = start.elapsed().as_secs_f64();
    let mut still = cfg.clone();
    still.scene.motion = Motion::Translation {
        velocity: (0.0, 0.0),
    };
    let (_, _, still_ratio) = jitter_ratio(&still);
    note(&format!(
        "supplementary: same noise on a static garment gives ratio {still_ratio:.3}"
    ));
    outcome(
        ratio <= 0.5 && secs <= 30.0,
        format!("jitter {before:.5} → {after:.5}, ratio {ratio:.3} (≤ 0.5), {secs:.1} s (≤ 30 s)"),
    )
}

fn anti_occlusion() -> Outcome {
    let cfg = Config::default();
    let bundle = synth_scene(&cfg.scene).unwrap();
    let warp = warp_fit(&bundle, &cfg).unwrap();
    let (h, w) = (bundle.height(), bundle.width());
    let (occluder, garment) = (
        bundle.occluder.as_ref().unwrap(),
        bundle.garment.as_ref().unwrap(),
    );
    let (mut min_cov, mut max_spur, mut max_fringe, mut colored) = (1.0f64, 0.0f64, 0.0f64, 0usize);
    for t in 0..bundle.len() {
        let (_, source) = mask_occluded_clothes_with_mask(
            &bundle.clothes,
            &warp.tps[t],
            &warp.agnostic[t].occlusion_mask,
        )
        .unwrap();
        let tps = tps_apply(&warp.tps[t], h, w).unwrap();
        let image = warp_by_flow(&source.reshape(&[h, w, 1]).unwrap(), &tps).unwrap();
        let (o, g) = (occluder.index0(t).unwrap(), garment.index0(t).unwrap());
        let (mut overlap, mut covered, mut spurious, mut fringe) = (0, 0, 0, 0);
        for p in 0..h * w {
            let inside = o.data()[p] != 0.0 && g.data()[p] != 0.0;
            let v = image.data()[p];
            if inside {
                overlap += 1;
                covered += (v >= 0.5) as usize;
            } else {
                spurious += (v >= 0.5) as usize;
                fringe += (v > 0.0) as usize;
            }
        }
        let n = overlap.max(1) as f64;
        min_cov = min_cov.min(covered as f64 / n);
        max_spur = max_spur.max(spurious as f64 / n);
        max_fringe = max_fringe.max(fringe as f64 / n);
        let warped = warp_by_flow(&warp.masked_clothes[t], &warp.flows[t]).unwrap();
        for p in 0..h * w {
            let px = &warped.data()[3 * p..3 * p + 3];
            let near = px
                .iter()
                .zip(OCCLUDER_COLOR)
                .all(|(a, b)| (a - b).abs() < 0.1);
            colored += (o.data()[p] != 0.0 && near) as usize;
        }
    }
    note(&format!("supplementary: counting any nonzero bilinear weight, spurious area reaches {max_fringe:.3}"));
    outcome(
        min_cov >= 0.95 && max_spur <= 0.05 && colored == 0,
        format!(
            "worst-frame coverage {min_cov:.3} (≥ 0.95), spurious {max_spur:.3} (≤ 0.05), occluder-colored pixels {colored}"
        ),
    )
}

fn fusion_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (t, h, w) = (2, 16, 16);
    let mut r = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0));
    let (clothes, person, agnostic, mask_c) = (
        r(&[t, h, w, 3]),
        r(&[t, h, w, 2]),
        r(&[t, h, w, 3]),
        r(&[t, h, w]),
    );
    let m_a = r(&[t, h, w, 1]).map(|v| (v > 0.5) as u8 as f64);
    let model = Mpdt::new(small_mpdt(), InputChannels::default(), 6).unwrap();
    let out = model
        .infer(&GeneratorTensors {
            clothes: &clothes,
            person: &person,
            agnostic: &agnostic,
            mask_c: &mask_c,
            fusion_mask: &m_a,
        })
        .unwrap();
    let m = m_a.data();
    let mismatched = (0..agnostic.len())
        .filter(|&i| {
            m[i / 3] == 1.0 && out.output.data()[i].to_bits() != agnostic.data()[i].to_bits()
        })
        .count();

    let tape = Tape::new();
    let a = tape.var(agnostic.clone());
    let fused = fuse_background(
        tape.constant(out.output.clone()),
        a,
        tape.constant(m_a.clone()),
    )
    .unwrap();
    let keep = Tensor::from_fn(&[t, h, w, 3], |i| 1.0 - m[i / 3]);
    let outside = fused.mul(tape.constant(keep)).unwrap().sum();
    let grad = tape.backward(outside).unwrap().wrt(a);
    let leak = grad.data().iter().fold(0.0f64, |s, g| s.max(g.abs()));
    outcome(
        mismatched == 0 && leak == 0.0,
        format!("{mismatched} non-identical pixels where M_a = 1; max |∂Ĩ/∂A| where M_a = 0 is {leak:e}"),
    )
}

fn toy_overfit() -> Outcome {
    let start = Instant::now();
    let cfg = Config::default();
    let report = train_toy(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let red = report.reduction();
    outcome(
        red >= 0.8 && report.losses.len() <= cfg.toy.steps + 1 && secs <= 600.0,
        format!(
            "loss {:.4} → {:.4} in {} steps, reduction {:.1}% (≥ 80%), {secs:.1} s (≤ 600 s)",
            report.initial(),
            report.best(),
            cfg.toy.steps,
            100.0 * red
        ),
    )
}

fn metric_sanity() -> Outcome {
    let x = Tensor::from_fn(&[24, 20, 3], |i| ((i as f64 * 0.37).sin() + 1.0) * 0.5);
    let s = ssim(&x, &x).unwrap();
    let c = Tensor::new(
        vec![3, 3],
        vec![2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0],
    )
    .unwrap();
    let m = [0.1, -0.4, 2.0];
    let same = frechet_distance(&m, &c, &m, &c).unwrap();
    let (m1, s1, m2, s2) = (0.7, 1.3, -0.2, 0.6);
    let one = |v: f64| Tensor::new(vec![1, 1], vec![v * v]).unwrap();
    let d = frechet_distance(&[m1], &one(s1), &[m2], &one(s2)).unwrap();
    let closed = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
    outcome(
        (s - 1.0).abs() <= 1e-9 && same.abs() <= 1e-8 && (d - closed).abs() <= 1e-10,
        format!(
            "ssim(x,x) − 1 = {:.1e}, FD(a,a) = {same:.1e}, 1-D error {:.1e}",
            s - 1.0,
            (d - closed).abs()
        ),
    )
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_vton"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .expect("cli starts");
    assert!(status.success(), "vton {args:?} failed with {status}");
}

fn cft_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "cft"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = Config {
        mpdt: small_mpdt(),
        ..Config::default()
    };
    cfg.fit.tps_steps = 40;
    cfg.fit.flow_steps = 20;
    let config = tmp.path().join("config.toml");
    std::fs::write(&config, cfg.to_toml()).unwrap();
    let config = config.to_str().unwrap();
    let mut runs = Vec::new();
    for k in 0..2 {
        let bundle = tmp.path().join(format!("bundle{k}"));
        let result = tmp.path().join(format!("result{k}"));
        let (b, r) = (bundle.to_str().unwrap(), result.to_str().unwrap());
        run_cli(&["--config", config, "--seed", "11", "--out", b, "synth"]);
        run_cli(&[
            "--config", config, "--seed", "11", "--out", r, "tryon", "--bundle", b,
        ]);
        let mut files = cft_bytes(&bundle);
        files.extend(cft_bytes(&result));
        runs.push(files);
    }
    let differing: Vec<_> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.clone())
        .collect();
    outcome(
        runs[0].len() == runs[1].len() && differing.is_empty(),
        format!(
            "{} CFT files per run, differing {differing:?}",
            runs[0].len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracle_equivalence),
        ("published constants", published_constants),
        ("tracking efficacy", tracking_efficacy),
        ("anti-occlusion", anti_occlusion),
        ("fusion exactness", fusion_exactness),
        ("toy overfit", toy_overfit),
        ("metric sanity", metric_sanity),
        ("determinism", determinism),
    ];
    let mut unexpected = Vec::new();
    let total = Instant::now();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(
            std::io::stdout(),
            "criterion {n} [{verdict}] {name}: {}",
            o.detail
        );
        let known = KNOWN_FAILURES.contains(&n);
        if !o.pass && !known {
            unexpected.push(n);
        }
        if o.pass && known {
            note("listed as a known failure but passed");
        }
    }
    let _ = writeln!(
        std::io::stdout(),
        "acceptance finished in {:.1?}",
        Duration::from_secs_f64(total.elapsed().as_secs_f64())
    );
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
