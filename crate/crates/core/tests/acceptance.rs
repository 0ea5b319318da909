//! End-to-end acceptance suite. Every criterion runs in order inside one test
//! and prints a PASS/FAIL line; the test fails if any criterion fails.
//!
//! Criterion 4 trains six networks on a 13,140-sample synthetic dataset and
//! dominates the runtime (roughly an hour on one core).

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gelforce::calib::{build_calibration_set, sphere_normals, MlpConfig, SpherePress};
use gelforce::dataio::{ingest_session, split_by_indenter, IngestOptions, Manifest, TactileSample};
use gelforce::depth::{
    apply_contact_mask, contact_mask_from_diff, dense_poisson_solve, depth_to_image, dst_poisson_solve, infer_normals,
    integrate_normals, normals_to_gradients, DepthMap, DepthPipeline, GradientField, NormalMap, ScaleRecord,
};
use gelforce::experiment::{
    per_bin_csv, predictions_csv, report_csv, run_folds, write_reports, ExperimentConfig, ExperimentResult, Method,
};
use gelforce::forcereg::{build_model, fit_poly_baseline, model_spec, predict_force, ModelKind, TrainConfig};
use gelforce::image::{save_image, ContactMask, Image};
use gelforce::metrics::{binned_re, mae, relative_error, MeanStd};
use gelforce::nn::{grad_check, BranchSpec, LayerSpec, Network, NetworkSpec, Tensor};
use gelforce::synth::{
    generate_dataset, random_scenes, render_scenes, standard_indenters, synth_samples, synthetic_pipeline,
    CalibrationSpec, Indenter, Shape, SynthSpec,
};

const SEED: u64 = 2024;

/// Training schedule for criterion 4 (see the decisions ledger).
fn force_training() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        lr: 1e-3,
        epochs: 4,
        seed: SEED,
    }
}

struct Verdict {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u32, title: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, title, pass, detail };
    println!(
        "criterion {} [{}] {}: {}",
        v.id,
        if v.pass { "PASS" } else { "FAIL" },
        v.title,
        v.detail
    );
    v
}

// ---------------------------------------------------------------- 1

fn random_field(w: usize, h: usize, rng: &mut ChaCha8Rng) -> GradientField<f64> {
    let gx = (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gy = (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GradientField::new(w, h, gx, gy).unwrap()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for side in [16, 32] {
        for _ in 0..100 {
            let g = random_field(side, side, &mut rng);
            let a = dst_poisson_solve(&g).unwrap();
            let b = dense_poisson_solve(&g).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                worst = worst.max((p - q).abs());
            }
        }
    }

    // Discrete eigenfunction sin(ax)·sin(by) with its exactly consistent
    // gradient.
    let n = 64;
    let a = std::f64::consts::PI / (n - 1) as f64;
    let c = 2.0 * (a / 2.0).tan();
    let mut g = GradientField::zeros(n, n);
    let mut surf = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (xf, yf) = (x as f64, y as f64);
            g.set(x, y, c * (a * xf).cos() * (a * yf).sin(), c * (a * xf).sin() * (a * yf).cos());
            surf[y * n + x] = (a * xf).sin() * (a * yf).sin();
        }
    }
    let d = dst_poisson_solve(&g).unwrap();
    let num: f64 = d.data().iter().zip(&surf).map(|(p, q)| (p - q).powi(2)).sum();
    let den: f64 = surf.iter().map(|q| q * q).sum();
    let rel = (num / den).sqrt();

    let field = random_field(64, 64, &mut rng);
    let mut times: Vec<Duration> = (0..21)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(dst_poisson_solve(&field).unwrap());
            t.elapsed()
        })
        .collect();
    times.sort();
    let median = times[times.len() / 2];

    verdict(
        1,
        "Poisson solver",
        worst < 1e-8 && rel < 1e-6 && median < Duration::from_millis(5),
        format!(
            "DST vs dense max-abs {worst:.2e} (< 1e-8) over 200 fields; eigenfunction rel L2 {rel:.2e} (< 1e-6); \
             64x64 solve median {median:?} (< 5 ms)"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn seeded(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn check(name: &str, spec: NetworkSpec, batch: usize, seed: u64) -> (String, f64) {
    let net: Network<f64> = Network::new(spec.clone(), seed).unwrap();
    let inputs: Vec<Tensor<f64>> = spec
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut shape = vec![batch];
            shape.extend(&b.input_shape);
            seeded(&shape, seed * 10 + i as u64)
        })
        .collect();
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let target = seeded(&[batch, net.output_width()], seed + 99);
    let r = grad_check(&net, &refs, &target, 1e-6, Some(24)).unwrap();
    (format!("{name} {:.1e}", r.max_rel_error), r.max_rel_error)
}

fn single(input: Vec<usize>, layers: Vec<LayerSpec>, feat: usize) -> NetworkSpec {
    NetworkSpec {
        branches: vec![BranchSpec {
            input_shape: input,
            layers,
        }],
        head: vec![LayerSpec::Dense { inputs: feat, units: 2 }],
    }
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let conv = |i, o, k, s, p| LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
    };
    let cases = vec![
        (
            "dense+tanh",
            NetworkSpec {
                branches: vec![BranchSpec {
                    input_shape: vec![5],
                    layers: vec![],
                }],
                head: vec![
                    LayerSpec::Dense { inputs: 5, units: 6 },
                    LayerSpec::Tanh,
                    LayerSpec::Dense { inputs: 6, units: 3 },
                ],
            },
        ),
        ("conv", single(vec![2, 7, 6], vec![conv(2, 3, 3, 2, 1), LayerSpec::ConcatTap], 3)),
        ("conv+relu", single(vec![2, 6, 6], vec![conv(2, 3, 3, 1, 0), LayerSpec::Relu, LayerSpec::ConcatTap], 3)),
        ("maxpool", single(vec![2, 6, 6], vec![LayerSpec::MaxPool { size: 2 }, LayerSpec::ConcatTap], 2)),
        ("globalavgpool", single(vec![3, 5, 4], vec![conv(3, 2, 1, 1, 0), LayerSpec::GlobalAvgPool], 2)),
        (
            "residual",
            single(
                vec![3, 6, 6],
                vec![
                    LayerSpec::Residual {
                        in_channels: 3,
                        out_channels: 3,
                        stride: 1,
                    },
                    LayerSpec::ConcatTap,
                ],
                3,
            ),
        ),
        (
            "residual/2",
            single(
                vec![2, 7, 6],
                vec![
                    LayerSpec::Residual {
                        in_channels: 2,
                        out_channels: 4,
                        stride: 2,
                    },
                    LayerSpec::ConcatTap,
                ],
                4,
            ),
        ),
        ("flatten", single(vec![2, 3, 2], vec![conv(2, 2, 3, 1, 1)], 12)),
    ];
    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, (name, spec)) in cases.into_iter().enumerate() {
        let (line, e) = check(name, spec, 3, 11 + i as u64);
        lines.push(line);
        worst = worst.max(e);
    }
    for (i, kind) in ModelKind::ALL.into_iter().enumerate() {
        let (line, e) = check(kind.as_str(), model_spec(kind, 16, 16).unwrap(), 2, 50 + i as u64);
        lines.push(line);
        worst = worst.max(e);
    }
    let elapsed = t.elapsed();
    verdict(
        2,
        "gradient engine",
        worst <= 1e-4 && elapsed < Duration::from_secs(60),
        format!("max rel error {worst:.2e} (<= 1e-4) in {elapsed:.1?} (< 60 s): {}", lines.join(", ")),
    )
}

// ---------------------------------------------------------------- 3

/// In-contact depth RMSE as a fraction of the deepest true indentation.
fn rmse_fraction(rec: &DepthMap<f32>, truth: &DepthMap<f64>, scale: f64) -> f64 {
    let (mut se, mut n) = (0.0, 0usize);
    for (a, b) in rec.data().iter().zip(truth.data()) {
        if *b > 0.0 {
            se += (*a as f64 * scale - b).powi(2);
            n += 1;
        }
    }
    (se / n as f64).sqrt() / truth.max()
}

fn criterion_3(spec: &SynthSpec, pipeline: &DepthPipeline<f32>, calib_time: Duration) -> (Verdict, f64) {
    let t = Instant::now();
    // One global scale, fitted on the calibration presses only.
    let cal_scenes = gelforce::synth::calibration_scenes(spec, &CalibrationSpec::default()).unwrap();
    let cal_frames = render_scenes(spec, &cal_scenes, 0).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (s, f) in cal_scenes.iter().zip(&cal_frames) {
        let truth = gelforce::synth::press_depth_map(s, spec.width, spec.height).unwrap();
        let rec = integrate_normals(&infer_normals(&pipeline.mlp, f).unwrap()).unwrap();
        for (a, b) in rec.data().iter().zip(truth.data()) {
            if *b > 0.0 {
                num += *a as f64 * b;
                den += (*a as f64).powi(2);
            }
        }
    }
    let scale = num / den;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let held_out = [
        ("sphere", Indenter::new("sphere", Shape::Sphere { radius: 4.0 }), (0.4, 1.5), 0.05),
        ("box", Indenter::new("box", Shape::Box { width: 3.0, length: 2.0 }), (0.3, 1.2), 0.15),
        ("cone", Indenter::new("cone", Shape::Cone { half_angle: 60.0 }), (0.4, 1.4), 0.15),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, (name, ind, depths, limit)) in held_out.iter().enumerate() {
        let scenes = random_scenes(spec, ind, 8, *depths, &mut rng).unwrap();
        let frames = render_scenes(spec, &scenes, k + 1).unwrap();
        let mut worst: f64 = 0.0;
        for (s, f) in scenes.iter().zip(&frames) {
            let truth = gelforce::synth::press_depth_map(s, spec.width, spec.height).unwrap();
            let rec = integrate_normals(&infer_normals(&pipeline.mlp, f).unwrap()).unwrap();
            worst = worst.max(rmse_fraction(&rec, &truth, scale));
        }
        pass &= worst < *limit;
        parts.push(format!("{name} worst {:.2}% (< {:.0}%)", 100.0 * worst, 100.0 * limit));
    }
    let total = calib_time + t.elapsed();
    pass &= total < Duration::from_secs(600);
    (
        verdict(
            3,
            "calibration round trip",
            pass,
            format!("{} over 8 held-out presses each; scale {scale:.4}; {total:.1?} (< 10 min)", parts.join(", ")),
        ),
        scale,
    )
}

// ---------------------------------------------------------------- 4–6

struct ForceRuns {
    rgbmod: ExperimentResult,
    poly: ExperimentResult,
    d: ExperimentResult,
}

fn criterion_4(samples: &[TactileSample], data_time: Duration) -> (Verdict, ForceRuns) {
    let t = Instant::now();
    let ids: Vec<&str> = samples.iter().map(|s| s.indenter_id.as_str()).collect();
    let splits = split_by_indenter(&ids, SEED).unwrap();
    let cfg = force_training();
    let rgbmod = run_folds(Method::Net(ModelKind::Rgbmod), samples, &splits, &cfg).unwrap();
    let poly = run_folds(Method::Poly, samples, &splits, &cfg).unwrap();
    let d = run_folds(Method::Net(ModelKind::D), samples, &splits, &cfg).unwrap();
    let total = data_time + t.elapsed();
    let (r, p, dd) = (rgbmod.aggregate.re, poly.aggregate.re, d.aggregate.re);
    let fmt = |m: MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
    let folds = |res: &ExperimentResult| {
        res.folds
            .iter()
            .map(|f| format!("{:.3}", f.report.re.mean))
            .collect::<Vec<_>>()
            .join("/")
    };
    let pass = r.mean < p.mean && p.mean < dd.mean && r.mean < 0.25 && total < Duration::from_secs(7200);
    let v = verdict(
        4,
        "force regression ordering",
        pass,
        format!(
            "{} samples; mean test RE rgbmod {} (folds {}), poly {} (folds {}), d {} (folds {}); \
             need rgbmod < poly < d and rgbmod < 0.25; {total:.1?} (< 2 h)",
            samples.len(),
            fmt(r),
            folds(&rgbmod),
            fmt(p),
            folds(&poly),
            fmt(dd),
            folds(&d)
        ),
    );
    (v, ForceRuns { rgbmod, poly, d })
}

fn criterion_5(runs: &ForceRuns) -> Verdict {
    let agg = &runs.rgbmod.aggregate;
    let low = agg.re_over(1.0, 2.0);
    let mid = agg.re_over(5.0, 11.0);
    let pass = matches!((low, mid), (Some(l), Some(m)) if l > m);
    verdict(
        5,
        "per-bin trend",
        pass,
        format!("rgbmod RE in [1,2) N {low:.3?} vs [5,11) N {mid:.3?}"),
    )
}

fn criterion_6(samples: &[TactileSample]) -> Verdict {
    let order: Vec<String> = standard_indenters().into_iter().map(|i| i.id).collect();
    let mut residuals = Vec::new();
    for count in [1, 6, 18] {
        let chosen = &order[..count];
        let pts: Vec<(f64, f64)> = samples
            .iter()
            .filter(|s| chosen.contains(&s.indenter_id))
            .map(|s| (s.max_deformation().unwrap() as f64, s.force_n))
            .collect();
        residuals.push(fit_poly_baseline(&pts).unwrap().residual_rms);
    }
    verdict(
        6,
        "force–depth study",
        residuals[0] < residuals[1] && residuals[1] < residuals[2],
        format!(
            "cubic fit RMS residual with 1/6/18 indenters: {:.3} / {:.3} / {:.3} N",
            residuals[0], residuals[1], residuals[2]
        ),
    )
}

// ---------------------------------------------------------------- 7

fn report_bytes(res: &ExperimentResult, dir: &std::path::Path) -> Vec<Vec<u8>> {
    write_reports(res, dir).unwrap();
    ["report.csv", "per_bin.csv", "predictions.csv", "summary.txt"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

fn criterion_7(pipeline: &DepthPipeline<f32>, runs: &ForceRuns) -> Verdict {
    let mut spec = SynthSpec::standard(2, SEED + 7);
    spec.indenters = standard_indenters().into_iter().step_by(3).collect();
    let ds = generate_dataset(&spec).unwrap();
    let samples = synth_samples(&ds, Some(pipeline)).unwrap();
    let ids: Vec<&str> = samples.iter().map(|s| s.indenter_id.as_str()).collect();
    let splits = split_by_indenter(&ids, SEED).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        lr: 1e-3,
        seed: SEED,
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut checked = Vec::new();
    for method in [Method::Net(ModelKind::RgbmodD), Method::Net(ModelKind::Dmod), Method::Poly] {
        let a = run_folds(method, &samples, &splits, &cfg).unwrap();
        let b = run_folds(method, &samples, &splits, &cfg).unwrap();
        let same = report_bytes(&a, &tmp.path().join(format!("{method}_a")))
            == report_bytes(&b, &tmp.path().join(format!("{method}_b")));
        pass &= same;
        checked.push(format!("{method} {}", if same { "identical" } else { "DIFFERENT" }));
    }
    // The CSV writers are pure functions of the result.
    for res in [&runs.rgbmod, &runs.poly, &runs.d] {
        pass &= report_csv(res) == report_csv(res) && per_bin_csv(res) == per_bin_csv(res);
        pass &= predictions_csv(res) == predictions_csv(res);
    }
    verdict(
        7,
        "determinism",
        pass,
        format!("two seeded train/eval runs per method on {} samples: {}", samples.len(), checked.join(", ")),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Verdict {
    let rgb = build_model::<f32>(ModelKind::Rgbmod, 160, 120, SEED).unwrap();
    let fused = build_model::<f32>(ModelKind::RgbmodD, 160, 120, SEED).unwrap();
    let frame = Image::filled(160, 120, 3, 0.55f32);
    let depth = Image::filled(160, 120, 1, 0.2f32);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..25 {
        let t = Instant::now();
        std::hint::black_box(predict_force(&rgb, &frame, None).unwrap());
        a.push(t.elapsed());
        let t = Instant::now();
        std::hint::black_box(predict_force(&fused, &frame, Some(&depth)).unwrap());
        b.push(t.elapsed());
    }
    a.sort();
    b.sort();
    let (ma, mb) = (a[a.len() / 2], b[b.len() / 2]);
    verdict(
        8,
        "latency ordering",
        ma < mb,
        format!("median single-frame inference rgbmod {ma:.2?} vs rgbmod_d {mb:.2?}"),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Verdict {
    let mut failed: Vec<&str> = Vec::new();
    let mut check = |ok: bool, what: &'static str| {
        if !ok {
            failed.push(what);
        }
    };
    let mut total = 0usize;
    let mut count = |n: usize| total += n;

    // evalcli
    check(relative_error(3.0, 3.0).unwrap() == 0.0, "RE pred=3 gt=3");
    check(relative_error(2.0, 4.0).unwrap() == 0.5, "RE pred=2 gt=4");
    check(mae(&[1.5, 2.0, 9.0], &[1.5, 2.0, 9.0]).unwrap() == MeanStd { mean: 0.0, std: 0.0 }, "MAE identical");
    check(mae(&[1.0, 3.0], &[2.0, 2.0]).unwrap() == MeanStd { mean: 1.0, std: 0.0 }, "MAE [1,3] vs [2,2]");
    let bins = binned_re(&[5.0, 6.0, 4.0], &[5.0, 5.4, 5.99]).unwrap();
    check(bins.iter().filter(|b| b.count > 0).count() == 1 && bins[4].count == 3, "single bin");
    let bins = binned_re(&[2.0], &[2.0]).unwrap();
    check(bins[1].lo == 2.0 && bins[1].hi == 3.0 && bins[1].count == 1, "gt=2.0 in [2,3)");
    let bad = ExperimentConfig::parse("dataset = \"d\"\noutput = \"o\"\nmodel = \"vgg\"\n");
    check(bad.is_err(), "unknown model kind rejected");
    count(7);

    // dataio
    let tmp = tempfile::tempdir().unwrap();
    let session = |name: &str, frames: &[u64], forces: &[(f64, f64)]| {
        let dir = tmp.path().join(name);
        std::fs::create_dir_all(dir.join("frames")).unwrap();
        for t in frames {
            save_image(&Image::filled(4, 3, 3, 0.5f32), dir.join("frames").join(format!("{t}.png"))).unwrap();
        }
        let mut csv = String::from("timestamp_s,fz_n\n");
        for (t, f) in forces {
            csv.push_str(&format!("{t},{f}\n"));
        }
        std::fs::write(dir.join("forces.csv"), csv).unwrap();
        let m = Manifest {
            indenter_id: name.into(),
            sensor_id: "s".into(),
            notes: String::new(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
        ingest_session(&dir, &IngestOptions::default()).unwrap()
    };
    let r = session("nearest", &[1_000_000_000], &[(0.999, 3.0), (1.003, 7.0)]);
    check(r.samples.len() == 1 && r.samples[0].force_n == 3.0, "nearest force 0.999");
    let r = session("gap", &[1_000_000_000, 2_000_000_000], &[(0.98, 3.0), (2.0, 4.0)]);
    check(r.samples.len() == 1 && r.dropped_gap == 1, "20 ms gap dropped");
    let nine: Vec<String> = (0..9).map(|i| format!("i{i}")).collect();
    let s9 = split_by_indenter(&nine, 3).unwrap();
    check(
        s9.iter().all(|f| (f.train.len(), f.val.len(), f.test.len()) == (7, 1, 1)),
        "9 indenters 7/1/1",
    );
    check(split_by_indenter(&nine, 3).unwrap() == s9, "split determinism");
    count(4);

    // calib
    let press = SpherePress {
        center_px: [60.0, 50.0],
        radius_px: 30.0,
        press_depth_px: 6.0,
        frame: Image::filled(120, 100, 3, 0.5f32),
    };
    let (normals, mask) = sphere_normals(&press).unwrap();
    let apex = normals.get(60, 50);
    check(apex == [0.0, 0.0, 1.0] && mask.get(60, 50), "apex normal (0,0,1), mask true");
    // Vanishing depth: the contact circle shrinks below the pixel spacing.
    let shallow = SpherePress {
        center_px: [60.5, 50.5],
        press_depth_px: 1e-6,
        ..press.clone()
    };
    check(sphere_normals(&shallow).unwrap().1.count() == 0, "vanishing depth, empty mask");
    let hundred = SpherePress {
        center_px: [60.25, 50.1],
        radius_px: 20.0,
        press_depth_px: 20.0 - (400.0f64 - 31.8).sqrt(),
        ..press.clone()
    };
    let set = build_calibration_set(&[hundred]).unwrap();
    check(set.len() == 100, "100-pixel mask gives 100 records");
    let set = build_calibration_set(&[press]).unwrap();
    check(
        set.targets.iter().all(|t| ((t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt() - 1.0).abs() < 1e-6),
        "unit targets",
    );
    count(4);

    // depthrecon
    let constant = {
        let spec = MlpConfig::default().network_spec();
        let mut net: Network<f32> = Network::zeros(spec).unwrap();
        let bias = net.params_mut().pop().unwrap();
        bias.copy_from_slice(&[0.0, 0.0, 1.0]);
        net
    };
    let frame = Image::filled(8, 6, 3, 0.3f32);
    let n = infer_normals(&constant, &frame).unwrap();
    check(n.data().chunks(3).all(|v| v == [0.0, 0.0, 1.0]), "constant MLP gives flat normals");
    let g = normals_to_gradients(&NormalMap::<f64>::flat(5, 4));
    check(g.gx_data().iter().chain(g.gy_data()).all(|&v| v == 0.0), "flat normals, zero gradient");
    let g = normals_to_gradients(&NormalMap::from_raw(1, 1, vec![0.6f64, 0.0, 0.8]).unwrap());
    check((g.gx(0, 0) - 0.75).abs() < 1e-15 && g.gy(0, 0) == 0.0, "(0.6,0,0.8) gives gx 0.75");
    let zero = dst_poisson_solve(&GradientField::<f64>::zeros(9, 7)).unwrap();
    check(zero.data().iter().all(|&v| v == 0.0), "zero divergence, zero depth");
    let zero = integrate_normals(&NormalMap::<f64>::flat(9, 7)).unwrap();
    check(zero.data().iter().all(|&v| v == 0.0), "zero field, zero depth");
    let scale = ScaleRecord {
        max_depth: 4.0,
        calibrated_at: "2026-01-01T00:00:00Z".into(),
        mlp_weights: "w.bin".into(),
    };
    let img = depth_to_image(&DepthMap::<f64>::zeros(6, 5), &scale).unwrap();
    check(img.to_bytes().iter().all(|&b| b == 0), "h = 0 gives black");
    let mut h = DepthMap::<f64>::zeros(6, 5);
    h.data_mut()[7] = 4.0;
    check(depth_to_image(&h, &scale).unwrap().to_bytes()[7] == 255, "h = max_depth gives 255");
    let reference = Image::filled(6, 5, 3, 0.4f32);
    let pressed = Image::filled(6, 5, 3, 0.9f32);
    check(
        contact_mask_from_diff(&reference, &reference, 0.04).unwrap().count() == 0,
        "frame = reference, empty mask",
    );
    check(contact_mask_from_diff(&pressed, &reference, 1.0).unwrap().count() == 0, "threshold 1.0, empty mask");
    let d = depth_to_image(&h, &scale).unwrap();
    check(apply_contact_mask(&d, &ContactMask::full(6, 5)).unwrap() == d, "all-true mask is identity");
    check(
        apply_contact_mask(&d, &ContactMask::empty(6, 5)).unwrap().data().iter().all(|&v| v == 0.0),
        "all-false mask is black",
    );
    count(11);

    let pass = failed.is_empty();
    verdict(
        9,
        "metric unit suite",
        pass,
        if pass {
            format!("{total} examples from evalcli, dataio, calib and depthrecon hold exactly")
        } else {
            format!("failed: {}", failed.join("; "))
        },
    )
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let mut verdicts = vec![criterion_1(), criterion_2()];

    let spec = SynthSpec::standard(146, SEED);
    let t = Instant::now();
    let (pipeline, calibration) = synthetic_pipeline(&spec, &CalibrationSpec::default(), &MlpConfig::default()).unwrap();
    let calib_time = t.elapsed();
    println!(
        "calibrated on 40 sphere presses in {calib_time:.1?}: max depth {:.2} px",
        calibration.max_depth
    );
    verdicts.push(criterion_3(&spec, &pipeline, calib_time).0);

    let t = Instant::now();
    let ds = generate_dataset(&spec).unwrap();
    let samples = synth_samples(&ds, Some(&pipeline)).unwrap();
    let data_time = calib_time + t.elapsed();
    println!("rendered and reconstructed {} samples in {:.1?}", samples.len(), t.elapsed());
    let (v4, runs) = criterion_4(&samples, data_time);
    verdicts.push(v4);
    verdicts.push(criterion_5(&runs));
    verdicts.push(criterion_6(&samples));
    verdicts.push(criterion_7(&pipeline, &runs));
    verdicts.push(criterion_8());
    verdicts.push(criterion_9());

    println!("---- acceptance summary ({:.1?}) ----", start.elapsed());
    for v in &verdicts {
        println!("criterion {}: {} ({})", v.id, if v.pass { "PASS" } else { "FAIL" }, v.title);
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
