//! Acceptance criteria, one PASS/FAIL line per criterion.

mod common;

use std::fs;
use std::io::Write as _;
use std::panic;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::oracles::{conv_oracle, depthwise_oracle};
use common::{check_block, generic_store, random_tensor};
use eyemark::ablation::{self, VARIANTS};
use eyemark::attention::Attention;
use eyemark::autodiff::gradcheck::{check_gradients, random_projection, GradCheckOptions};
use eyemark::autodiff::kernels::{conv2d, depthwise_conv2d, maxpool2x2, upsample2x};
use eyemark::autodiff::{Graph, ScalarFn, Var};
use eyemark::checkpoint::Checkpoint;
use eyemark::config::Config;
use eyemark::data::augment::{crop_resize, gaussian_blur, hflip, rotate, AugmentConfig};
use eyemark::data::manifest::{augment_manifest, load_samples, preprocess, read_manifest, write_manifest};
use eyemark::data::pts::FaceBox;
use eyemark::data::synthetic::{samples, write_fixture};
use eyemark::heatmap::{decode_stack, encode_gt, soft_argmax};
use eyemark::image::Image;
use eyemark::infer::predict_images;
use eyemark::landmarks::{distance, LandmarkSet, Point, NUM_LANDMARKS};
use eyemark::loss::{wing_constant, Huber, LossConfig, LossKind, Wing};
use eyemark::metrics::{ced_auc_fr, evaluate, nme, DEFAULT_THRESHOLD};
use eyemark::model::{Model, ModelConfig};
use eyemark::nn::blocks::{Dlau, Hourglass, HourglassConfig, SkipKind};
use eyemark::nn::{Mode, Specs};
use eyemark::plot::save_ced_plot;
use eyemark::train::{mean_nme, Sample, TrainConfig, Trainer};
use eyemark::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const GRAD_TOL: f64 = 1e-4;

/// Runs `check`, which panics on failure, and reports the outcome.
fn criterion(n: usize, name: &str, check: fn() -> String) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(check);
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = match result {
        Ok(d) => (true, d),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            (false, msg)
        }
    };
    let line = format!(
        "criterion {n:>2} {name}: {} ({detail}; {secs:.1} s)\n",
        if ok { "PASS" } else { "FAIL" }
    );
    // Written past the test harness capture so the lines always show.
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    ok
}

#[test]
fn acceptance() {
    let results = [
        criterion(1, "scale gap documented", scale_gap_documented),
        criterion(2, "gradient suite", gradient_suite),
        criterion(3, "oracle suite", oracle_suite),
        criterion(4, "loss continuity", loss_continuity),
        criterion(5, "codec round trip", codec_round_trip),
        criterion(6, "geometry suite", geometry_suite),
        criterion(7, "metric suite", metric_suite),
        criterion(8, "desk-scale learning", desk_learning),
        criterion(9, "ablation mechanics", ablation_mechanics),
        criterion(10, "determinism", determinism),
    ];
    let failed: Vec<usize> = (1..=results.len()).filter(|i| !results[i - 1]).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}

fn scale_gap_documented() -> String {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = fs::read_to_string(&readme).unwrap_or_else(|e| panic!("{}: {e}", readme.display()));
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    for needle in ["not reproduced", "0.0047", "0.9082"] {
        assert!(text.contains(needle), "README lacks `{needle}`");
    }
    "README states the full-scale results are not reproduced".into()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

type Build = fn(&mut Graph, &[Var]) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    fn shapes(s: &[&[usize]]) -> Vec<Vec<usize>> {
        s.iter().map(|x| x.to_vec()).collect()
    }
    vec![
        ("conv2d", shapes(&[&[2, 2, 5, 5], &[3, 2, 3, 3]]), |g, v| g.conv2d(v[0], v[1], 1, 1)),
        ("conv2d strided", shapes(&[&[1, 3, 8, 8], &[2, 3, 7, 7]]), |g, v| g.conv2d(v[0], v[1], 2, 3)),
        ("depthwise", shapes(&[&[2, 3, 5, 5], &[3, 1, 3, 3]]), |g, v| g.depthwise_conv2d(v[0], v[1], 1, 1)),
        ("maxpool", shapes(&[&[2, 2, 6, 6]]), |g, v| g.maxpool2x2(v[0])),
        ("upsample", shapes(&[&[2, 2, 3, 4]]), |g, v| g.upsample2x(v[0])),
        ("spatial softmax", shapes(&[&[2, 3, 4, 4]]), |g, v| g.spatial_softmax(v[0])),
        ("row softmax", shapes(&[&[2, 5, 5]]), |g, v| g.softmax_rows(v[0], 5)),
        ("soft-argmax", shapes(&[&[2, 12, 4, 5]]), |g, v| soft_argmax(g, v[0])),
        ("add", shapes(&[&[2, 3, 4], &[2, 3, 4]]), |g, v| g.add(v[0], v[1])),
        ("sub", shapes(&[&[2, 3, 4], &[2, 3, 4]]), |g, v| g.sub(v[0], v[1])),
        ("mul", shapes(&[&[2, 3, 4], &[2, 3, 4]]), |g, v| g.mul(v[0], v[1])),
        ("scale", shapes(&[&[7]]), |g, v| Ok(g.scale(v[0], -2.5))),
        ("relu", shapes(&[&[3, 8]]), |g, v| Ok(g.relu(v[0]))),
        ("mean", shapes(&[&[4, 2]]), |g, v| {
            let m = g.mean(v[0]);
            g.mul(m, m)
        }),
        ("concat", shapes(&[&[2, 2, 3, 3], &[2, 1, 3, 3]]), |g, v| g.concat_channels(v)),
        ("transpose", shapes(&[&[2, 3, 4]]), |g, v| g.transpose_last2(v[0])),
        ("reshape", shapes(&[&[2, 3, 4]]), |g, v| g.reshape(v[0], vec![6, 4])),
        ("matmul", shapes(&[&[2, 3, 4], &[2, 4, 2]]), |g, v| g.matmul(v[0], v[1])),
        ("batchnorm", shapes(&[&[3, 2, 3, 3], &[2], &[2]]), |g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1e-5)?.0)),
        ("affine", shapes(&[&[2, 3, 2, 2], &[3], &[3]]), |g, v| g.channel_affine(v[0], v[1], v[2])),
        ("mse", shapes(&[&[12, 2], &[12, 2]]), |g, v| cfg_loss(LossKind::Mse).record(g, v[0], v[1])),
        ("huber", shapes(&[&[12, 2], &[12, 2]]), |g, v| cfg_loss(LossKind::Huber).record(g, v[0], v[1])),
        ("wing", shapes(&[&[12, 2], &[12, 2]]), |g, v| cfg_loss(LossKind::Wing).record(g, v[0], v[1])),
    ]
}

fn cfg_loss(kind: LossKind) -> LossConfig {
    LossConfig {
        kind,
        ..Default::default()
    }
}

fn block_opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        seed,
        max_coords_per_input: Some(24),
        ..Default::default()
    }
}

fn tiny_model(stages: usize, skip: SkipKind, attention: bool) -> ModelConfig {
    ModelConfig {
        stages,
        depth: 1,
        width: 4,
        skip,
        attention,
        batchnorm: true,
        embed_channels: Some(2),
        uniform_attention: false,
    }
}

fn gradient_suite() -> String {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut track = |name: &str, seed: u64, err: f64| {
        assert!(err < GRAD_TOL, "{name} seed {seed}: relative error {err:e}");
        worst = worst.max(err);
    };

    let ops = op_cases();
    for (name, shapes, build) in &ops {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 17);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
            let r = check_gradients(
                &inputs,
                |g, v| {
                    let out = build(g, v)?;
                    random_projection(g, out, seed)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            track(name, seed, r.max_rel_error);
        }
    }

    let dlau = Dlau::new("d", 3);
    for batchnorm in [true, false] {
        let mut s = Specs::new(batchnorm);
        dlau.declare(&mut s);
        for seed in 0..SEEDS {
            let store = generic_store(&s, seed);
            let inputs = vec![random_tensor(vec![2, 3, 4, 4], seed), random_tensor(vec![2, 3, 4, 4], seed + 100)];
            let r = check_block(&store, inputs, Mode::Train, batchnorm, seed, &block_opts(seed), |sess, v| {
                dlau.forward(sess, v[0], v[1])
            });
            track("dlau", seed, r.max_rel_error);
        }
    }

    for skip in [SkipKind::Residual, SkipKind::Dlau] {
        let hg = Hourglass::new("hg", HourglassConfig { depth: 2, width: 4, skip }).unwrap();
        let mut s = Specs::new(true);
        hg.declare(&mut s);
        for seed in 0..SEEDS {
            let store = generic_store(&s, seed);
            let r = check_block(&store, vec![random_tensor(vec![2, 4, 8, 8], seed)], Mode::Train, true, seed, &block_opts(seed), |sess, v| {
                hg.forward(sess, v[0])
            });
            track("hourglass", seed, r.max_rel_error);
        }
    }

    let att = Attention::new("att", 4, 2).unwrap();
    let mut s = Specs::new(true);
    att.declare(&mut s);
    for seed in 0..SEEDS {
        let store = generic_store(&s, seed);
        let r = check_block(&store, vec![random_tensor(vec![2, 4, 4, 4], seed)], Mode::Train, true, seed, &block_opts(seed), |sess, v| {
            att.forward(sess, v[0])
        });
        track("attention", seed, r.max_rel_error);
    }

    let loss = LossConfig::default();
    for seed in 0..SEEDS {
        let skip = if seed % 2 == 0 { SkipKind::Dlau } else { SkipKind::Residual };
        let model = Model::new(tiny_model(1, skip, seed % 4 < 2)).unwrap();
        let store = generic_store(&model.specs(), seed);
        let names: Vec<String> = store.params().keys().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = vec![Tensor::from_fn(vec![2, 3, 16, 16], |_| rng.gen_range(0.0..1.0))];
        inputs.extend(names.iter().map(|n| store.get(n).unwrap().clone()));
        let gt = Tensor::from_fn(vec![2, 12, 2], |_| rng.gen_range(0.2..0.8));
        let opts = GradCheckOptions {
            seed,
            max_coords_per_input: Some(6),
            ..Default::default()
        };
        let r = check_gradients(
            &inputs,
            |g, v| {
                let mut sess = model.session(g, &store, Mode::Train);
                for (n, var) in names.iter().zip(&v[1..]) {
                    sess.bind(n.clone(), *var);
                }
                let out = model.forward(&mut sess, v[0])?;
                let t = sess.graph.constant(gt.clone());
                model.loss(&mut sess, &out, t, &loss)
            },
            &opts,
        )
        .unwrap();
        track("model", seed, r.max_rel_error);
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    format!(
        "{} ops and 4 composites over {SEEDS} seeds, worst relative error {worst:.1e}",
        ops.len()
    )
}

fn oracle_suite() -> String {
    let mut worst = 0.0f64;
    let mut seed = 0;
    for (cin, cout, k, stride, pad, h, w) in [
        (2, 3, 3, 1, 1, 7, 6),
        (3, 2, 7, 2, 3, 16, 16),
        (4, 5, 1, 1, 0, 5, 5),
        (1, 1, 3, 2, 0, 9, 8),
    ] {
        seed += 1;
        let x = random_tensor(vec![2, cin, h, w], seed);
        let kern = random_tensor(vec![cout, cin, k, k], seed + 50);
        let d = conv2d(&x, &kern, stride, pad).unwrap().max_abs_diff(&conv_oracle(&x, &kern, stride, pad));
        assert!(d < 1e-12, "conv2d {k}x{k} s{stride} p{pad}: {d:e}");
        worst = worst.max(d);

        let dk = random_tensor(vec![cin, 1, k, k], seed + 70);
        let d = depthwise_conv2d(&x, &dk, stride, pad)
            .unwrap()
            .max_abs_diff(&depthwise_oracle(&x, &dk, stride, pad));
        assert!(d < 1e-12, "depthwise {k}x{k} s{stride} p{pad}: {d:e}");
        worst = worst.max(d);
    }

    let x = random_tensor(vec![2, 3, 8, 6], 90);
    let (pooled, _) = maxpool2x2(&x).unwrap();
    let up = upsample2x(&x).unwrap();
    let at = |n: usize, c: usize, y: usize, xx: usize| x.data()[((n * 3 + c) * 8 + y) * 6 + xx];
    for n in 0..2 {
        for c in 0..3 {
            for y in 0..4 {
                for xx in 0..3 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| at(n, c, 2 * y + dy, 2 * xx + dx))
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(pooled.data()[((n * 3 + c) * 4 + y) * 3 + xx], m, "maxpool");
                }
            }
            for y in 0..16 {
                for xx in 0..12 {
                    assert_eq!(up.data()[((n * 3 + c) * 16 + y) * 12 + xx], at(n, c, y / 2, xx / 2), "upsample");
                }
            }
        }
    }

    let (c, e, k) = (4, 3, NUM_LANDMARKS);
    let att = Attention::new("att", c, e).unwrap();
    let mut s = Specs::new(true);
    att.declare(&mut s);
    let mut att_worst = 0.0f64;
    for seed in 0..5 {
        let store = generic_store(&s, seed);
        let mut g = Graph::new();
        let x = g.constant(random_tensor(vec![2, c, 4, 4], seed + 10));
        let mut sess = eyemark::nn::Session::new(&mut g, &store, Mode::Train, true);
        let v = att.forward_detailed(&mut sess, x).unwrap();
        let coarse = g.value(v.coarse).clone();
        let got = g.value(v.aggregated).clone();
        let kp = store.get("att.phi.kernel").unwrap().data();
        let kt = store.get("att.theta.kernel").unwrap().data();
        let kg = store.get("att.g.kernel").unwrap().data();
        let hw = 16;
        let x_at = |n: usize, ch: usize, p: usize| coarse.data()[(n * k + ch) * hw + p];
        let embed = |w: &[f64], n: usize, o: usize, p: usize| (0..k).map(|ch| w[o * k + ch] * x_at(n, ch, p)).sum::<f64>();
        for n in 0..2 {
            for i in 0..hw {
                let f: Vec<f64> = (0..hw)
                    .map(|j| (0..e).map(|o| embed(kp, n, o, i) * embed(kt, n, o, j)).sum::<f64>().exp())
                    .collect();
                let z: f64 = f.iter().sum();
                for o in 0..e {
                    let want: f64 = (0..hw).map(|j| f[j] / z * embed(kg, n, o, j)).sum();
                    let d = (want - got.data()[(n * e + o) * hw + i]).abs();
                    assert!(d < 1e-10, "attention seed {seed}: {d:e}");
                    att_worst = att_worst.max(d);
                }
            }
        }
    }
    format!("kernels within {worst:.1e}, pooling exact, attention within {att_worst:.1e}")
}

fn loss_continuity() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gap = 0.0f64;
    for _ in 0..100 {
        let w: f64 = rng.gen_range(0.01..50.0);
        let eps: f64 = rng.gen_range(0.01..20.0);
        let f = Wing::new(w, eps).unwrap();
        let d = (f.log_branch(w) - f.linear_branch(w)).abs();
        assert!(d < 1e-9, "wing branches differ by {d:e} at w={w}, eps={eps}");
        gap = gap.max(d);
        let direct = w - w * (1.0 + w / eps).ln();
        assert!((wing_constant(w, eps) - direct).abs() <= 1e-12 * direct.abs().max(1.0), "C at w={w}, eps={eps}");
    }
    for delta in [0.01, 2.0 / 64.0, 0.5, 1.0, 3.0] {
        let h = Huber::new(delta).unwrap();
        let (below, above) = (delta * (1.0 - 1e-12), delta * (1.0 + 1e-12));
        assert!((h.value(below) - h.value(above)).abs() < 1e-9, "huber value at {delta}");
        assert!((h.derivative(below) - h.derivative(above)).abs() < 1e-9, "huber slope at {delta}");
    }
    format!("largest wing branch gap {gap:.1e} over 100 draws")
}

fn codec_round_trip() -> String {
    let start = Instant::now();
    let sigma = 5.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (lo, hi) = (2.0 * sigma, 63.0 - 2.0 * sigma);
    let mut total = 0.0;
    for _ in 0..1000 {
        let pts = [(); NUM_LANDMARKS].map(|_| [rng.gen_range(lo..hi), rng.gen_range(lo..hi)]);
        let set = LandmarkSet::new(pts, 64, 64).unwrap();
        let maps = encode_gt(&set, 64, 64, sigma).unwrap();
        let dec = decode_stack(&maps, 50.0, 64, 64).unwrap();
        total += set.points.iter().zip(&dec.points).map(|(p, q)| distance(*p, *q)).sum::<f64>();
    }
    let mean = total / (1000 * NUM_LANDMARKS) as f64;
    let elapsed = start.elapsed();
    assert!(mean < 0.5, "mean error {mean} px");
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    format!("mean error {mean:.3} px over 1000 placements")
}

fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(w, h);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                img.set(c, x, y, rng.gen_range(0.0..1.0));
            }
        }
    }
    img
}

fn random_points(lo: Point, hi: Point, rng: &mut ChaCha8Rng) -> [Point; NUM_LANDMARKS] {
    std::array::from_fn(|_| [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])])
}

fn geometry_suite() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..10 {
        let img = random_image(128, 96, seed);
        // Coordinates on a binary grid, where 128 - x is exact.
        let pts = [(); NUM_LANDMARKS].map(|_| [rng.gen_range(0..128 * 256) as f64 / 256.0, rng.gen_range(0..96 * 256) as f64 / 256.0]);
        let lm = LandmarkSet::new(pts, 128, 96).unwrap();
        let (i1, l1) = hflip(&img, &lm);
        let (i2, l2) = hflip(&i1, &l1);
        assert!(i2 == img && l2 == lm, "hflip is not an involution");
    }

    let blank = Image::new(256, 256);
    let mut rot_err = 0.0f64;
    for n in 0..50 {
        let lm = LandmarkSet::unchecked(random_points([0.0, 0.0], [256.0, 256.0], &mut rng), 256, 256);
        let theta = if n < 4 { [5.0, -5.0, 10.0, -10.0][n] } else { rng.gen_range(-180.0..180.0) };
        let (_, a) = rotate(&blank, &lm, theta);
        let (_, b) = rotate(&blank, &a, -theta);
        for (p, q) in lm.points.iter().zip(&b.points) {
            rot_err = rot_err.max(distance(*p, *q));
        }
    }
    assert!(rot_err < 1e-6, "rotation round trip error {rot_err:e} px");

    let img = Image::filled(400, 300, [0.2; 3]);
    let mut crop_err = 0.0f64;
    for _ in 0..200 {
        let x = rng.gen_range(0.0..200.0);
        let y = rng.gen_range(0.0..150.0);
        let b = FaceBox {
            x,
            y,
            w: rng.gen_range(10.0..(400.0 - x)),
            h: rng.gen_range(10.0..(300.0 - y)),
        };
        let pts = random_points([b.x, b.y], [b.x + b.w, b.y + b.h], &mut rng);
        let (_, out) = crop_resize(&img, &b, &LandmarkSet::unchecked(pts, 400, 300), 64).unwrap();
        for (p, q) in pts.iter().zip(&out.points) {
            crop_err = crop_err
                .max(((p[0] - b.x) / b.w - q[0] / 64.0).abs())
                .max(((p[1] - b.y) / b.h - q[1] / 64.0).abs());
        }
    }
    assert!(crop_err < 1e-9, "crop ratio error {crop_err:e}");

    let flat = Image::filled(20, 13, [0.25, 0.5, 1.0]);
    let blurred = gaussian_blur(&flat);
    let blur_err = flat.data().iter().zip(blurred.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(blur_err < 1e-12, "blur moved a constant image by {blur_err:e}");
    format!("flip exact, rotation {rot_err:.1e} px, crop ratio {crop_err:.1e}, blur {blur_err:.1e}")
}

fn grid_points(rng: &mut ChaCha8Rng) -> [Point; NUM_LANDMARKS] {
    std::array::from_fn(|_| {
        [
            rng.gen_range(0..200 * 1024) as f64 / 1024.0,
            rng.gen_range(0..200 * 1024) as f64 / 1024.0,
        ]
    })
}

fn metric_suite() -> String {
    assert_eq!(DEFAULT_THRESHOLD, 0.05);
    let set = |p: [Point; NUM_LANDMARKS]| LandmarkSet::unchecked(p, 256, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let gt = grid_points(&mut rng);
        let pr = grid_points(&mut rng);
        let base = nme(&set(gt), &set(pr)).unwrap();
        for k in [0.25, 2.0, 8.0] {
            let s = |p: [Point; NUM_LANDMARKS]| set(p.map(|q| [q[0] * k, q[1] * k]));
            assert_eq!(nme(&s(gt), &s(pr)).unwrap(), base, "scale {k}");
        }
        let t = |p: [Point; NUM_LANDMARKS]| set(p.map(|q| [q[0] + 37.0, q[1] - 11.5]));
        assert_eq!(nme(&t(gt), &t(pr)).unwrap(), base, "translation");
    }

    let mut nmes = vec![0.01; 500];
    nmes.extend(vec![0.10; 500]);
    let r = ced_auc_fr(&nmes, DEFAULT_THRESHOLD, 0).unwrap();
    assert!((r.auc_0_05 - 0.4).abs() < 1e-12, "AUC {}", r.auc_0_05);
    assert!((r.fr_0_05 - 0.5).abs() < 1e-12, "FR {}", r.fr_0_05);
    assert!((r.ced_at(0.01) - 0.5).abs() < 1e-12 && r.ced_at(0.0099) == 0.0, "CED step");
    format!("invariances exact, step case AUC {:.12} FR {:.12}", r.auc_0_05, r.fr_0_05)
}

fn train(model: &Model, cfg: &TrainConfig, train: &[Sample], val: &[Sample]) -> (eyemark::nn::ParamStore, Vec<f64>) {
    let loss = LossConfig::default();
    let trainer = Trainer {
        model,
        loss: &loss,
        cfg,
        seed: 0,
    };
    let mut val_nmes = Vec::new();
    let out = trainer
        .run(model.init(0).unwrap(), train, val, |e, _| val_nmes.extend(e.val_nme))
        .unwrap();
    assert!(out.halted.is_none(), "training halted: {:?}", out.halted);
    (out.store, val_nmes)
}

fn desk_learning() -> String {
    let start = Instant::now();
    let model = Model::new(ModelConfig {
        stages: 1,
        width: 32,
        ..Default::default()
    })
    .unwrap();
    let train_set = samples(200, 64, 0).unwrap();
    let val_set = samples(50, 64, 1).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        eps: 1e-4,
        epochs: 40,
        ..Default::default()
    };
    let (_, val_nmes) = train(&model, &cfg, &train_set, &val_set);
    let elapsed = start.elapsed();
    let reached = val_nmes.iter().position(|v| *v < 0.05);
    let best = val_nmes.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(reached.is_some(), "best val NME {best:.4}");
    assert!(elapsed < Duration::from_secs(20 * 60), "took {elapsed:?}");

    let overfit = &train_set[..16];
    let cfg = TrainConfig {
        lr: 2.5e-4,
        eps: 1e-4,
        batch_size: 16,
        epochs: 500,
        ..Default::default()
    };
    let (store, _) = train(&model, &cfg, overfit, &[]);
    let train_nme = mean_nme(&model, &store, overfit, 16).unwrap().unwrap();
    assert!(train_nme < 0.01, "16-sample overfit train NME {train_nme:.4}");
    format!(
        "val NME {:.4} at epoch {} (best {best:.4}) in {:.0} s, overfit train NME {train_nme:.4}",
        val_nmes[reached.unwrap()],
        reached.unwrap() + 1,
        elapsed.as_secs_f64()
    )
}

fn ablation_mechanics() -> String {
    let mut base = Config {
        model: ModelConfig {
            stages: 2,
            depth: 2,
            width: 8,
            embed_channels: Some(4),
            ..Default::default()
        },
        ..Default::default()
    };
    base.train.epochs = 3;
    base.train.batch_size = 8;
    let train_set = samples(32, 32, 5).unwrap();
    let val_set = samples(8, 32, 6).unwrap();
    let report = ablation::run(&base, &LossKind::ALL, &train_set, &val_set).unwrap();
    assert_eq!(report.rows.len(), 4);
    for (row, (label, _, _)) in report.rows.iter().zip(VARIANTS) {
        assert_eq!(row.label, label);
        assert_eq!(row.cells.len(), 3);
    }
    assert!(report.all_finite(), "non-finite run:\n{}", report.table());
    let table = report.table();
    assert!(table.starts_with("Methodology"));
    let cells = |n: usize| -> Vec<String> {
        table.lines().nth(n).unwrap().split('|').map(|c| c.trim().to_string()).collect()
    };
    assert_eq!(cells(0), ["Methodology", "MSE loss", "", "Huber loss", "", "Wing loss", ""]);
    assert_eq!(cells(1)[1..], ["NME", "AUC", "NME", "AUC", "NME", "AUC"]);
    assert_eq!(table.lines().count(), 7);
    "4 rows by 3 losses, all finite".into()
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Runs every pipeline stage from `raw` into `out`.
fn pipeline(raw: &Path, out: &Path) {
    let size = 32;
    let mut cfg = Config {
        model: ModelConfig {
            stages: 2,
            depth: 1,
            width: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;

    let pre = out.join("preprocess");
    let report = preprocess(raw, &pre, size).unwrap();
    write_manifest(&pre.join("manifest.jsonl"), &report.records).unwrap();

    let aug = out.join("augment");
    let report = augment_manifest(&read_manifest(&pre.join("manifest.jsonl")).unwrap(), &pre, &aug, &AugmentConfig::default()).unwrap();
    write_manifest(&aug.join("manifest.jsonl"), &report.records).unwrap();

    let train_set = load_samples(&report.records, &aug).unwrap();
    let model = Model::new(cfg.model.clone()).unwrap();
    let trainer = Trainer {
        model: &model,
        loss: &cfg.loss,
        cfg: &cfg.train,
        seed: cfg.seed,
    };
    let outcome = trainer.run(model.init(cfg.seed).unwrap(), &train_set, &[], |_, _| {}).unwrap();
    let tr = out.join("train");
    fs::create_dir_all(&tr).unwrap();
    Checkpoint {
        model: cfg.model.clone(),
        input_size: size,
        store: outcome.store.clone(),
    }
    .save(&tr.join("checkpoint.json"))
    .unwrap();

    let records = read_manifest(&pre.join("manifest.jsonl")).unwrap();
    let images: Vec<Image> = records.iter().map(|r| Image::load(&pre.join(&r.image)).unwrap()).collect();
    let preds = predict_images(&model, &outcome.store, &images, size, 4).unwrap();
    let pairs: Vec<_> = records
        .iter()
        .zip(&preds)
        .map(|(r, p)| (LandmarkSet::unchecked(r.points, size, size), p.landmarks.clone()))
        .collect();
    let ev = out.join("eval");
    fs::create_dir_all(&ev).unwrap();
    let metrics = evaluate(&pairs, DEFAULT_THRESHOLD).unwrap();
    fs::write(ev.join("report.json"), serde_json::to_string_pretty(&metrics).unwrap()).unwrap();
    save_ced_plot(&metrics, &ev.join("ced.png")).unwrap();
    let points: Vec<_> = preds.iter().map(|p| p.landmarks.points).collect();
    fs::write(ev.join("predictions.json"), serde_json::to_string(&points).unwrap()).unwrap();
}

fn determinism() -> String {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    write_fixture(&raw, 6, 96, 3).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&raw, &a);
    pipeline(&raw, &b);
    let fa = files(&a);
    let fb = files(&b);
    assert_eq!(
        fa.iter().map(|f| &f.0).collect::<Vec<_>>(),
        fb.iter().map(|f| &f.0).collect::<Vec<_>>(),
        "runs wrote different files"
    );
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        assert!(x == y, "{} differs between runs", name.display());
    }
    format!("{} artifacts byte-identical across two runs", fa.len())
}
