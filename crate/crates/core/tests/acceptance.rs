//! Acceptance suite. Runs every criterion in order and prints exactly one
//! `PASS`/`FAIL` line per criterion with its measured values, then exits
//! non-zero if anything failed.
//!
//! Reference values are computed here from closed forms, exhaustive search or
//! finite differences; none of them come from the library under test.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skelpaint::chamfer::ChamferConfig;
use skelpaint::chamfer::{chamfer_grad, chamfer_max, NnMethod, Point6};
use skelpaint::colorize::{build_cloud, colorize_cloud, spatial_color, temporal_color, ColorScheme};
use skelpaint::evalbench::{generate_dataset, train_test_split, SyntheticSpec};
use skelpaint::net::{
    encode, forward_repaint, repaint_loss_grad, DecoderConfig, EncoderConfig, InputMode, ModelConfig, RepaintModel,
};
use skelpaint::skeleton_data::{
    ClassLabel, DatasetManifest, Joint, ManifestEntry, PersonFrame, SequenceMeta, SkeletonSequence,
};
use skelpaint::training::{
    linear_probe, prepare_cloud, pretrain_stream, sample_from_pools, sample_labeled_subset, ClassifierConfig,
    DataConfig, LabeledSet, PretrainConfig, UnlabeledSet,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over the {budget:?} budget")),
            other => other,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if result.is_err() {
            self.failures += 1;
        }
        println!(
            "[{tag}] criterion {id:>2}: {name} -- {detail} ({:.2}s)",
            elapsed.as_secs_f64()
        );
    }
}

// ---------------------------------------------------------------- oracles

/// Piecewise-linear ramp evaluated from the closed form with exact rational
/// branch selection (`2i <= n`).
fn ramp_oracle(i: usize, n: usize) -> [f64; 3] {
    let s = i as f64 / n as f64;
    if 2 * i <= n {
        [1.0 - 2.0 * s, 2.0 * s, 0.0]
    } else {
        [0.0, 2.0 - 2.0 * s, 2.0 * s - 1.0]
    }
}

fn second_branch(i: f64, n: f64) -> [f64; 3] {
    let s = i / n;
    [0.0, 2.0 - 2.0 * s, 2.0 * s - 1.0]
}

fn max_abs(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
}

fn dist(a: &Point6, b: &Point6) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exhaustive nearest neighbor, lowest index on ties, compared on squared
/// distance.
fn brute_nn(set: &[Point6], q: &Point6) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in set.iter().enumerate() {
        let d2: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

fn brute_directed(from: &[Point6], to: &[Point6]) -> (f64, Vec<usize>) {
    let nn: Vec<(usize, f64)> = from.iter().map(|q| brute_nn(to, q)).collect();
    let mean = nn.iter().map(|(_, d2)| d2.sqrt()).sum::<f64>() / from.len() as f64;
    (mean, nn.into_iter().map(|(i, _)| i).collect())
}

fn brute_chamfer(p: &[Point6], q: &[Point6]) -> f64 {
    brute_directed(p, q).0.max(brute_directed(q, p).0)
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, quantized: bool) -> Vec<Point6> {
    (0..n)
        .map(|_| {
            std::array::from_fn(|_| {
                if quantized {
                    rng.gen_range(-1i32..=1) as f64
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
        })
        .collect()
}

fn random_sequence(rng: &mut ChaCha8Rng, frames: usize, persons: usize, joints: usize) -> SkeletonSequence {
    let frames = (0..frames)
        .map(|_| {
            (0..persons)
                .map(|_| PersonFrame {
                    joints: (0..joints)
                        .map(|_| {
                            Joint::new(
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(2.0..4.0),
                            )
                        })
                        .collect(),
                })
                .collect()
        })
        .collect();
    SkeletonSequence::new(frames, SequenceMeta::default()).unwrap()
}

// ---------------------------------------------------------------- 1-6

fn colorization_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for (frames, joints, persons) in [(40, 25, 2), (50, 20, 1)] {
        let cloud = build_cloud(&random_sequence(&mut rng, frames, persons, joints));
        for scheme in ColorScheme::ALL {
            let painted = colorize_cloud(&cloud, scheme).map_err(|e| e.to_string())?;
            for (p, c) in cloud.points.iter().zip(&painted.colors) {
                let expect = match scheme {
                    ColorScheme::Temporal => ramp_oracle(p.t, frames),
                    ColorScheme::Spatial => ramp_oracle(p.j, joints),
                    ColorScheme::Person => {
                        if p.n == 1 {
                            [1.0, 0.0, 0.0]
                        } else {
                            [0.0, 0.0, 1.0]
                        }
                    }
                };
                worst = worst.max(max_abs(*c, expect));
                points += 1;
            }
        }
    }
    check(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    for (t, expect) in [
        (10, [0.5, 0.5, 0.0]),
        (20, [0.0, 1.0, 0.0]),
        (40, [0.0, 0.0, 1.0]),
        (30, [0.0, 0.5, 0.5]),
    ] {
        let got = temporal_color(t, 40).map_err(|e| e.to_string())?;
        check(max_abs(got, expect) <= 1e-12, format!("t={t}: {got:?}"))?;
    }
    Ok(format!(
        "{points} colored points, max deviation {worst:e}, spot values exact"
    ))
}

fn colorization_invariants() -> Outcome {
    let mut cases = 0;
    for (name, limit, f) in [
        (
            "temporal",
            200,
            temporal_color as fn(usize, usize) -> skelpaint::Result<[f64; 3]>,
        ),
        ("spatial", 64, spatial_color),
    ] {
        for n in 1..=limit {
            let colors: Vec<[f64; 3]> = (1..=n).map(|i| f(i, n).unwrap()).collect();
            let mut max_step: f64 = 0.0;
            for (i, c) in colors.iter().enumerate() {
                check(
                    c.iter().all(|v| (0.0..=1.0).contains(v)),
                    format!("{name} {i}/{n}: out of range"),
                )?;
                check(
                    (c.iter().sum::<f64>() - 1.0).abs() <= 1e-12,
                    format!("{name} {}/{n}: off simplex", i + 1),
                )?;
                cases += 1;
            }
            for w in colors.windows(2) {
                max_step = max_step.max(max_abs(w[0], w[1]));
                check(
                    w[1][2] >= w[0][2] && w[1][0] <= w[0][0],
                    format!("{name} n={n}: not monotone"),
                )?;
            }
            if n >= 2 {
                check(
                    max_step <= 2.0 / n as f64 + 1e-12,
                    format!("{name} n={n}: step {max_step}"),
                )?;
                check(
                    (max_step - 2.0 / n as f64).abs() <= 1e-12,
                    format!("{name} n={n}: step {max_step} != 2/n"),
                )?;
            }
            if n % 2 == 0 {
                let mid = colors[n / 2 - 1];
                check(
                    max_abs(mid, second_branch((n / 2) as f64, n as f64)) <= 1e-12,
                    format!("{name} n={n}: branch gap"),
                )?;
            }
        }
    }
    Ok(format!(
        "{cases} (index, length) pairs; simplex, bounds, 2/n step, monotone, branch continuity"
    ))
}

fn cloud_sizes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ntu = prepare_cloud(
        &random_sequence(&mut rng, 73, 2, 25),
        &DataConfig {
            frames: 40,
            root_joint: 0,
        },
    )
    .map_err(|e| e.to_string())?;
    let ucla = prepare_cloud(
        &random_sequence(&mut rng, 37, 1, 20),
        &DataConfig {
            frames: 50,
            root_joint: 0,
        },
    )
    .map_err(|e| e.to_string())?;
    check(
        ntu.len() == 2000,
        format!("two-person 40x25 cloud has {} points", ntu.len()),
    )?;
    check(
        ucla.len() == 1000,
        format!("one-person 50x20 cloud has {} points", ucla.len()),
    )?;
    Ok("2000 and 1000 points".into())
}

fn chamfer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for pair in 0..200 {
        let quantized = pair % 4 == 3;
        let (np, nq) = (rng.gen_range(1..=512), rng.gen_range(1..=512));
        let p = random_cloud(&mut rng, np, quantized);
        let q = random_cloud(&mut rng, nq, quantized);
        let fast = chamfer_max(&p, &q, NnMethod::KdTree).map_err(|e| e.to_string())?;
        let (a, ma) = brute_directed(&p, &q);
        let (b, mb) = brute_directed(&q, &p);
        check(
            fast.a.matches == ma && fast.b.matches == mb,
            format!("pair {pair}: match indices differ"),
        )?;
        let err = (fast.value - a.max(b)).abs();
        worst = worst.max(err);
        check(err <= 1e-12, format!("pair {pair}: value off by {err:e}"))?;
        let swapped = chamfer_max(&q, &p, NnMethod::KdTree).map_err(|e| e.to_string())?;
        check(swapped.value == fast.value, format!("pair {pair}: asymmetric"))?;
        check(
            fast.value >= 0.5 * (fast.a.value + fast.b.value),
            format!("pair {pair}: max < mean"),
        )?;
    }
    Ok(format!(
        "200 pairs, max |fast - brute| {worst:e}, matches identical, symmetric, max >= mean"
    ))
}

fn toy_model_config() -> ModelConfig {
    ModelConfig {
        scheme: ColorScheme::Temporal,
        input: InputMode::Raw,
        encoder: EncoderConfig {
            k: 3,
            block_widths: vec![4, 4, 8],
            feature_dim: 8,
            slope: 0.2,
        },
        decoder: DecoderConfig {
            grid_side: 4,
            hidden: 8,
            slope: 0.2,
        },
    }
}

fn gradient_checks() -> Outcome {
    let h = 1e-5;
    // chamfer gradient on tie-free instances
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut instances, mut worst_chamfer) = (0, 0.0f64);
    while instances < 100 {
        let (np, nq) = (rng.gen_range(3..=8), rng.gen_range(3..=8));
        let p = random_cloud(&mut rng, np, false);
        let q = random_cloud(&mut rng, nq, false);
        let r = chamfer_max(&p, &q, NnMethod::KdTree).map_err(|e| e.to_string())?;
        let min_d =
            r.a.distances
                .iter()
                .chain(&r.b.distances)
                .cloned()
                .fold(f64::INFINITY, f64::min);
        if (r.a.value - r.b.value).abs() < 1e-6 || min_d < 1e-6 {
            continue;
        }
        // neighbor assignments must be stable under the probe step
        let gap = |from: &[Point6], to: &[Point6]| {
            from.iter()
                .map(|x| {
                    let mut d: Vec<f64> = to.iter().map(|y| dist(x, y)).collect();
                    d.sort_by(f64::total_cmp);
                    if d.len() > 1 {
                        d[1] - d[0]
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(f64::INFINITY, f64::min)
        };
        if gap(&p, &q).min(gap(&q, &p)) < 1e-4 {
            continue;
        }
        let g = chamfer_grad(&p, &q, &r);
        for i in 0..q.len() {
            for k in 0..6 {
                let (mut up, mut dn) = (q.clone(), q.clone());
                up[i][k] += h;
                dn[i][k] -= h;
                let fd = (brute_chamfer(&p, &up) - brute_chamfer(&p, &dn)) / (2.0 * h);
                let scale = fd.abs().max(g[i][k].abs());
                let rel = if scale < 1e-9 {
                    0.0
                } else {
                    (fd - g[i][k]).abs() / scale
                };
                worst_chamfer = worst_chamfer.max(rel);
            }
        }
        instances += 1;
    }
    check(worst_chamfer < 1e-4, format!("chamfer_grad rel err {worst_chamfer:e}"))?;

    // whole repainting pipeline; elements whose one-sided differences disagree
    // straddle a kink (max, leaky ReLU or neighbor switch) and are skipped
    let loss_of = |m: &RepaintModel, input: &[Point6], target: &[Point6]| {
        brute_chamfer(target, &forward_repaint(m, input).unwrap())
    };
    let (mut worst_pipeline, mut checked, mut total) = (0.0f64, 0usize, 0usize);
    for seed in 0..20u64 {
        let model = RepaintModel::new(toy_model_config(), seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let input = random_cloud(&mut rng, 16, false);
        let target = random_cloud(&mut rng, 16, false);
        let g = repaint_loss_grad(&model, &input, &target, &ChamferConfig::default()).map_err(|e| e.to_string())?;
        let f0 = loss_of(&model, &input, &target);
        check((g.loss - f0).abs() < 1e-12, format!("seed {seed}: loss mismatch"))?;
        for (part, grads) in [(0, &g.encoder), (1, &g.decoder)] {
            for (pi, gm) in grads.iter().enumerate() {
                for e in 0..gm.data().len() {
                    let eval = |delta: f64| {
                        let mut m = model.clone();
                        let store = if part == 0 { &mut m.encoder } else { &mut m.decoder };
                        store.matrices_mut().nth(pi).unwrap().data_mut()[e] += delta;
                        loss_of(&m, &input, &target)
                    };
                    let (fp, fm) = (eval(h), eval(-h));
                    let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
                    total += 1;
                    if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
                        continue;
                    }
                    checked += 1;
                    let fd = (fp - fm) / (2.0 * h);
                    let an = gm.data()[e];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    worst_pipeline = worst_pipeline.max(rel);
                }
            }
        }
    }
    check(worst_pipeline < 1e-3, format!("pipeline rel err {worst_pipeline:e}"))?;
    check(
        checked as f64 >= 0.9 * total as f64,
        format!("only {checked}/{total} elements away from kinks"),
    )?;
    Ok(format!(
        "chamfer_grad: 100 instances, max rel err {worst_chamfer:.2e}; pipeline: 20 seeds, {checked}/{total} elements, max rel err {worst_pipeline:.2e}"
    ))
}

fn permutation_invariance() -> Outcome {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            feature_dim: 64,
            ..EncoderConfig::default()
        },
        decoder: DecoderConfig {
            grid_side: 12,
            ..DecoderConfig::default()
        },
        ..toy_model_config()
    };
    let model = RepaintModel::new(cfg, 6).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let cloud = random_cloud(&mut rng, 128, false);
        let base = encode(&model, &cloud).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let mut shuffled = cloud.clone();
            shuffled.shuffle(&mut rng);
            let f = encode(&model, &shuffled).map_err(|e| e.to_string())?;
            worst = worst.max(f.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    check(worst <= 1e-9, format!("drift {worst:e}"))?;
    Ok(format!("10 clouds x 50 permutations, max drift {worst:e}"))
}

// ---------------------------------------------------------------- 7-9, 12

const SEEDS: [u64; 3] = [0, 1, 2];

fn benchmark_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        classes: 5,
        per_class: 40,
        joints: 8,
        frames: 16,
        seed,
        ..SyntheticSpec::default()
    }
}

fn pretrain_config(scheme: ColorScheme, seed: u64) -> PretrainConfig {
    PretrainConfig {
        scheme,
        input: InputMode::Hint(0.5),
        epochs: 50,
        batch_size: 8,
        lr_max: 1e-3,
        lr_min: 1e-5,
        seed,
        encoder: EncoderConfig {
            feature_dim: 64,
            ..EncoderConfig::default()
        },
        decoder: DecoderConfig {
            grid_side: 12,
            ..DecoderConfig::default()
        },
        ..PretrainConfig::default()
    }
}

fn probe_config(seed: u64) -> ClassifierConfig {
    ClassifierConfig {
        lr_max: 0.1,
        lr_min: 1e-3,
        standardize: true,
        seed,
        ..ClassifierConfig::default()
    }
}

/// Everything criteria 7-9 look at, for one seed.
#[derive(Debug, Clone, PartialEq)]
struct SeedRun {
    temporal_losses: Vec<f64>,
    spatial_losses: Vec<f64>,
    ts: f64,
    baseline_u: f64,
    ts_ss: f64,
    temporal_secs: f64,
    all_finite: bool,
}

impl SeedRun {
    fn bits(&self) -> (Vec<u64>, Vec<u64>, [u64; 3]) {
        (
            self.temporal_losses.iter().map(|v| v.to_bits()).collect(),
            self.spatial_losses.iter().map(|v| v.to_bits()).collect(),
            [self.ts.to_bits(), self.baseline_u.to_bits(), self.ts_ss.to_bits()],
        )
    }
}

fn benchmark_seed(seed: u64) -> Result<SeedRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = generate_dataset(&benchmark_spec(seed), dir.path()).map_err(|e| e.to_string())?;
    let (train_m, test_m) = train_test_split(&manifest, 0.25, seed).map_err(|e| e.to_string())?;
    let data = DataConfig {
        frames: 16,
        root_joint: 0,
    };
    let train = LabeledSet::from_manifest(&train_m, &data).map_err(|e| e.to_string())?;
    let test = LabeledSet::from_manifest(&test_m, &data).map_err(|e| e.to_string())?;
    let unlabeled = train.unlabeled();

    let start = Instant::now();
    let ts = pretrain_stream(&unlabeled, &pretrain_config(ColorScheme::Temporal, seed)).map_err(|e| e.to_string())?;
    let temporal_secs = start.elapsed().as_secs_f64();
    let ss = pretrain_stream(&unlabeled, &pretrain_config(ColorScheme::Spatial, seed)).map_err(|e| e.to_string())?;
    let baseline =
        skelpaint::training::baseline_model(&pretrain_config(ColorScheme::Temporal, seed), unlabeled.max_points())
            .map_err(|e| e.to_string())?;

    let probe = probe_config(seed);
    let acc = |models: &[RepaintModel]| -> Result<(f64, bool), String> {
        let out = linear_probe(models, &train, &test, &probe).map_err(|e| e.to_string())?;
        let finite = out.classifier.is_finite() && out.records.iter().all(|r| r.loss.is_finite());
        Ok((out.test.accuracy, finite))
    };
    let (ts_acc, f1) = acc(std::slice::from_ref(&ts.model))?;
    let (base_acc, f2) = acc(std::slice::from_ref(&baseline))?;
    let (fused_acc, f3) = acc(&[ts.model.clone(), ss.model.clone()])?;
    let params_finite = [&ts.model, &ss.model]
        .iter()
        .all(|m| m.encoder.matrices().chain(m.decoder.matrices()).all(|x| x.is_finite()));
    let losses_finite = ts.epoch_losses.iter().chain(&ss.epoch_losses).all(|v| v.is_finite());
    Ok(SeedRun {
        temporal_losses: ts.epoch_losses,
        spatial_losses: ss.epoch_losses,
        ts: ts_acc,
        baseline_u: base_acc,
        ts_ss: fused_acc,
        temporal_secs,
        all_finite: f1 && f2 && f3 && params_finite && losses_finite,
    })
}

fn benchmark() -> Result<Vec<SeedRun>, String> {
    SEEDS.iter().map(|&s| benchmark_seed(s)).collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn pretraining_smoke(runs: &[SeedRun]) -> Outcome {
    let r = &runs[0];
    let (first, last) = (r.temporal_losses[0], *r.temporal_losses.last().unwrap());
    check(
        runs.iter().all(|r| r.all_finite),
        "non-finite value in a loss, parameter or probe",
    )?;
    check(r.temporal_losses.len() == 50, "expected 50 epochs")?;
    check(last <= 0.5 * first, format!("epoch 1 {first:.4} -> epoch 50 {last:.4}"))?;
    check(r.temporal_secs < 20.0 * 60.0, "temporal pretraining over budget")?;
    Ok(format!(
        "temporal loss {first:.4} -> {last:.4} (ratio {:.3}) in {:.0}s, no NaN",
        last / first,
        r.temporal_secs
    ))
}

fn probe_beats_baseline(runs: &[SeedRun]) -> Outcome {
    let ts = mean(runs.iter().map(|r| r.ts));
    let base = mean(runs.iter().map(|r| r.baseline_u));
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.3}/{:.3}", r.ts, r.baseline_u))
        .collect();
    let gap = 100.0 * (ts - base);
    check(
        gap >= 10.0,
        format!("TS {ts:.3} vs Baseline-U {base:.3}: gap {gap:.1} points"),
    )?;
    Ok(format!(
        "TS {ts:.3} vs Baseline-U {base:.3}, +{gap:.1} points (per seed TS/base: {})",
        per_seed.join(", ")
    ))
}

fn fusion_no_worse(runs: &[SeedRun]) -> Outcome {
    let ts = mean(runs.iter().map(|r| r.ts));
    let fused = mean(runs.iter().map(|r| r.ts_ss));
    check(fused >= ts, format!("TS+SS {fused:.3} < TS {ts:.3}"))?;
    Ok(format!("TS+SS {fused:.3} >= TS {ts:.3}"))
}

fn reproducible(first: &[SeedRun], second: &[SeedRun]) -> Outcome {
    for (a, b) in first.iter().zip(second) {
        check(
            a.bits() == b.bits(),
            "loss curves or accuracies differ between identical runs",
        )?;
    }
    let epochs: usize = first
        .iter()
        .map(|r| r.temporal_losses.len() + r.spatial_losses.len())
        .sum();
    Ok(format!(
        "{} seeds, {epochs} epoch losses and 9 accuracies bit-identical",
        first.len()
    ))
}

// ---------------------------------------------------------------- 10-11

fn sampler_contract() -> Outcome {
    let pools = |classes: usize, per: usize| -> Vec<Vec<usize>> {
        (0..classes).map(|c| (c * per..(c + 1) * per).collect()).collect()
    };
    let cs = sample_from_pools(&pools(60, 660), 0.05, 7).map_err(|e| e.to_string())?;
    check(
        cs.counts().iter().all(|&n| n == 33),
        format!("5% of 660: {:?}", &cs.counts()[..3]),
    )?;
    let ucla = sample_from_pools(&pools(10, 102), 0.01, 7).map_err(|e| e.to_string())?;
    check(
        ucla.counts().iter().all(|&n| n == 1),
        "1% of a 102-sample pool is not 1",
    )?;
    let tiny = sample_from_pools(&pools(3, 20), 0.01, 7).map_err(|e| e.to_string())?;
    check(tiny.counts().iter().all(|&n| n == 1), "minimum-one rule violated")?;

    // through the manifest API, with uneven pools
    let entries: Vec<ManifestEntry> = (0..300)
        .map(|i| ManifestEntry {
            path: format!("s{i}.skl").into(),
            label: (i * 7) % 4,
            subject: 0,
            view: 0,
        })
        .collect();
    let manifest = DatasetManifest::new(entries, 4, 25, 1).map_err(|e| e.to_string())?;
    let full = sample_labeled_subset(&manifest, 1.0, 3).map_err(|e| e.to_string())?;
    check(
        full.ids() == (0..300).collect::<Vec<_>>(),
        "fraction 1.0 is not the full set",
    )?;
    let fractions = [0.01, 0.05, 0.1, 0.2, 0.4, 1.0];
    let subsets: Vec<_> = fractions
        .iter()
        .map(|&f| sample_labeled_subset(&manifest, f, 3).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    for (s, &f) in subsets.iter().zip(&fractions) {
        for (c, pool) in manifest.class_pools().iter().enumerate() {
            let expect = ((f * pool.len() as f64 + 1e-9).floor() as usize).max(1);
            check(s.per_class[c].len() == expect, format!("fraction {f} class {c}"))?;
            check(
                s.per_class[c].iter().all(|i| manifest.entries[*i].label == c),
                "sample outside its class",
            )?;
        }
    }
    for w in subsets.windows(2) {
        for c in 0..4 {
            check(
                w[0].per_class[c].iter().all(|i| w[1].per_class[c].contains(i)),
                "subsets do not nest",
            )?;
        }
    }
    Ok("33 per class at 5% of 660, 1 per class at 1%, nested over 1%..100%".into())
}

fn frozen_and_isolated() -> Outcome {
    let small = |scheme| PretrainConfig {
        epochs: 2,
        batch_size: 4,
        lr_max: 1e-3,
        lr_min: 1e-4,
        encoder: EncoderConfig {
            k: 4,
            block_widths: vec![8, 8],
            feature_dim: 16,
            slope: 0.2,
        },
        decoder: DecoderConfig {
            grid_side: 6,
            hidden: 16,
            slope: 0.2,
        },
        ..pretrain_config(scheme, 11)
    };
    let spec = SyntheticSpec {
        classes: 3,
        per_class: 8,
        frames: 8,
        seed: 11,
        ..SyntheticSpec::default()
    };
    let seqs = skelpaint::evalbench::synthesize(&spec).map_err(|e| e.to_string())?;
    let data = DataConfig {
        frames: 8,
        root_joint: 0,
    };

    // every label replaced by a sentinel that aborts when read
    let poisoned: Vec<SkeletonSequence> = seqs
        .iter()
        .map(|s| {
            s.clone().with_meta(SequenceMeta {
                label: Some(ClassLabel::poisoned()),
                ..s.meta.clone()
            })
        })
        .collect();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let sentinel_armed = catch_unwind(|| ClassLabel::poisoned().id()).is_err();
    std::panic::set_hook(hook);
    check(sentinel_armed, "poisoned label can be read")?;
    let unlabeled = UnlabeledSet::from_sequences(&poisoned, &data).map_err(|e| e.to_string())?;
    let out = pretrain_stream(&unlabeled, &small(ColorScheme::Temporal)).map_err(|e| e.to_string())?;
    check(out.epoch_losses.len() == 2, "poisoned run did not finish")?;

    let clouds: Vec<_> = seqs.iter().map(|s| prepare_cloud(s, &data).unwrap()).collect();
    let labels: Vec<usize> = (0..seqs.len()).map(|i| i / spec.per_class).collect();
    let ids: Vec<std::path::PathBuf> = (0..seqs.len()).map(|i| format!("seq{i}").into()).collect();
    let train_idx: Vec<usize> = (0..seqs.len()).filter(|i| i % 4 != 0).collect();
    let test_idx: Vec<usize> = (0..seqs.len()).filter(|i| i % 4 == 0).collect();
    let all = LabeledSet::new(clouds, labels, ids, spec.classes).map_err(|e| e.to_string())?;
    let models = vec![
        out.model.clone(),
        RepaintModel::new(small(ColorScheme::Spatial).model_config(64), 5).unwrap(),
    ];
    let before: Vec<Vec<u8>> = models.iter().map(|m| m.to_checkpoint().to_bytes()).collect();
    linear_probe(
        &models,
        &all.subset(&train_idx),
        &all.subset(&test_idx),
        &probe_config(11),
    )
    .map_err(|e| e.to_string())?;
    let after: Vec<Vec<u8>> = models.iter().map(|m| m.to_checkpoint().to_bytes()).collect();
    check(before == after, "linear probe changed model bytes")?;
    Ok("model bytes identical across the probe; poisoned-label pretraining completed".into())
}

fn main() {
    println!(
        "acceptance suite ({} build)",
        if skelpaint::par::is_parallel() {
            "parallel"
        } else {
            "sequential"
        }
    );
    let mut suite = Suite { failures: 0 };
    let secs = Duration::from_secs;
    suite.run(1, "colorization exactness", secs(1), colorization_exactness);
    suite.run(2, "colorization invariants", secs(1), colorization_invariants);
    suite.run(3, "cloud sizes", secs(1), cloud_sizes);
    suite.run(4, "chamfer oracle equivalence", secs(30), chamfer_oracle);
    suite.run(5, "gradient correctness", secs(300), gradient_checks);
    suite.run(6, "permutation invariance", secs(60), permutation_invariance);
    suite.run(10, "semi-supervised sampler", secs(1), sampler_contract);
    suite.run(11, "frozen probe and label isolation", secs(300), frozen_and_isolated);

    let start = Instant::now();
    let first = benchmark();
    let first_secs = start.elapsed();
    let start = Instant::now();
    let second = benchmark();
    let second_secs = start.elapsed();
    match (&first, &second) {
        (Ok(a), Ok(b)) => {
            let cumulative = first_secs.max(second_secs);
            suite.run(7, "pretraining smoke", secs(20 * 60), || pretraining_smoke(a));
            suite.run(8, "TS probe beats Baseline-U", secs(45 * 60), || {
                probe_beats_baseline(a).map(|d| format!("{d}; benchmark {:.0}s", cumulative.as_secs_f64()))
            });
            suite.run(9, "TS+SS fusion >= TS", secs(60 * 60), || {
                check(cumulative < secs(60 * 60), "benchmark over the one-hour budget")?;
                fusion_no_worse(a)
            });
            suite.run(12, "reproducibility", secs(60), || reproducible(a, b));
        }
        (Err(e), _) | (_, Err(e)) => {
            for (id, name) in [
                (7, "pretraining smoke"),
                (8, "TS probe beats Baseline-U"),
                (9, "TS+SS fusion >= TS"),
                (12, "reproducibility"),
            ] {
                suite.run(id, name, secs(1), || Err(format!("benchmark failed: {e}")));
            }
        }
    }
    if suite.failures > 0 {
        println!("{} criteria failed", suite.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
