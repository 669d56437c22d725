use std::fs;
use std::path::Path;

use eyemark::data::augment::{
    augment, blur_kernel, blur_kernel_raw, crop_resize, gaussian_blur, hflip, rotate, rotate_point, AugmentConfig, AugmentTag,
};
use eyemark::data::manifest::{build_manifest, read_manifest, to_jsonl, write_manifest, Summary, CATEGORIES};
use eyemark::data::pts::{parse_pts, select_eyes, write_pts, FaceBox, PtsAnnotation, NUM_POINTS};
use eyemark::data::synthetic::{render_face, render_symmetric_face, write_fixture};
use eyemark::image::Image;
use eyemark::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

fn random_points(lo: Point, hi: Point, seed: u64) -> [Point; NUM_LANDMARKS] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])])
}

fn pts_text(lines: &[String], n: usize) -> String {
    format!("version: 1\nn_points: {n}\n{{\n{}\n}}\n", lines.join("\n"))
}

#[test]
fn minimal_pts_file_parses_to_origin() {
    let text = pts_text(&vec!["0.0 0.0".to_string(); 68], 68);
    let ann = parse_pts(&text, Path::new("a.pts")).unwrap();
    assert_eq!(ann.version, "1");
    assert!(ann.points.iter().all(|p| *p == [0.0, 0.0]));
}

#[test]
fn pts_count_mismatch_rejected_with_line() {
    let text = pts_text(&vec!["0.0 0.0".to_string(); 68], 67);
    let err = parse_pts(&text, Path::new("a.pts")).unwrap_err().to_string();
    assert!(err.starts_with("a.pts:2:"), "{err}");

    let text = pts_text(&vec!["1 2".to_string(); 67], 68);
    let err = parse_pts(&text, Path::new("b.pts")).unwrap_err().to_string();
    assert!(err.starts_with("b.pts:71:"), "{err}");
}

#[test]
fn pts_bad_token_and_header_rejected_with_line() {
    let mut lines = vec!["3 4".to_string(); 68];
    lines[6] = "3 x4".into();
    let err = parse_pts(&pts_text(&lines, 68), Path::new("c.pts")).unwrap_err().to_string();
    assert!(err.starts_with("c.pts:10:") && err.contains("x4"), "{err}");

    let err = parse_pts("n_points: 68\n", Path::new("d.pts")).unwrap_err().to_string();
    assert!(err.starts_with("d.pts:1:"), "{err}");
    let err = parse_pts("version: 1\nn_points: 68\n0 0\n", Path::new("e.pts")).unwrap_err().to_string();
    assert!(err.starts_with("e.pts:3:"), "{err}");
}

#[test]
fn pts_round_trip_to_six_decimals() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let ann = PtsAnnotation {
            version: "1".into(),
            points: std::array::from_fn(|_| [rng.gen_range(-50.0..900.0), rng.gen_range(-50.0..900.0)]),
        };
        let back = parse_pts(&write_pts(&ann), Path::new("r.pts")).unwrap();
        for (a, b) in ann.points.iter().zip(&back.points) {
            assert!((a[0] - b[0]).abs() <= 5.000001e-7 && (a[1] - b[1]).abs() <= 5.000001e-7);
        }
        assert_eq!(write_pts(&back), write_pts(&ann));
    }
}

#[test]
fn eye_subset_selection() {
    let ann = PtsAnnotation {
        version: "1".into(),
        points: std::array::from_fn(|i| [i as f64, 1000.0 + i as f64]),
    };
    let eyes = select_eyes(&ann, 2000, 2000);
    assert_eq!(eyes.points[0], ann.points[36]);
    assert_eq!(eyes.points[11], ann.points[47]);
    for (k, p) in eyes.points.iter().enumerate() {
        assert_eq!(p[0] as usize, 36 + k);
    }
    assert_eq!(NUM_POINTS - NUM_LANDMARKS, 56);
}

#[test]
fn crop_halves_coordinates() {
    let img = Image::filled(512, 512, [0.5; 3]);
    let mut pts = random_points([0.0, 0.0], [512.0, 512.0], 2);
    pts[0] = [100.0, 300.0];
    let lm = LandmarkSet::new(pts, 512, 512).unwrap();
    let (out, lm2) = crop_resize(&img, &FaceBox::full(512, 512), &lm, 256).unwrap();
    assert_eq!((out.width(), out.height()), (256, 256));
    assert_eq!(lm2.points[0], [50.0, 150.0]);
}

#[test]
fn full_frame_crop_is_identity() {
    let img = random_image(256, 256, 3);
    let lm = LandmarkSet::new(random_points([0.0, 0.0], [256.0, 256.0], 4), 256, 256).unwrap();
    let (out, lm2) = crop_resize(&img, &FaceBox::full(256, 256), &lm, 256).unwrap();
    assert_eq!(lm2, lm);
    for (a, b) in out.data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn crop_preserves_relative_position() {
    let img = Image::filled(400, 300, [0.2; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..200 {
        let x = rng.gen_range(0.0..200.0);
        let y = rng.gen_range(0.0..150.0);
        let b = FaceBox {
            x,
            y,
            w: rng.gen_range(10.0..(400.0 - x)),
            h: rng.gen_range(10.0..(300.0 - y)),
        };
        let pts = random_points([b.x, b.y], [b.x + b.w, b.y + b.h], i);
        let lm = LandmarkSet::unchecked(pts, 400, 300);
        let size = 64;
        let (_, lm2) = crop_resize(&img, &b, &lm, size).unwrap();
        for (p, q) in pts.iter().zip(&lm2.points) {
            assert!(((p[0] - b.x) / b.w - q[0] / size as f64).abs() < 1e-9);
            assert!(((p[1] - b.y) / b.h - q[1] / size as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn crop_rejects_outside_landmarks_and_boxes() {
    let img = Image::filled(100, 100, [0.0; 3]);
    let mut pts = [[50.0, 50.0]; NUM_LANDMARKS];
    let b = FaceBox { x: 20.0, y: 20.0, w: 60.0, h: 60.0 };
    pts[3] = [10.0, 50.0];
    let err = crop_resize(&img, &b, &LandmarkSet::unchecked(pts, 100, 100), 32).unwrap_err();
    assert!(err.to_string().contains("landmark 3"), "{err}");
    let big = FaceBox { x: 50.0, y: 0.0, w: 60.0, h: 60.0 };
    let ok = LandmarkSet::unchecked([[60.0, 30.0]; NUM_LANDMARKS], 100, 100);
    assert!(crop_resize(&img, &big, &ok, 32).is_err());
}

#[test]
fn hflip_maps_x_to_width_minus_x() {
    let img = Image::filled(256, 256, [0.0; 3]);
    let mut pts = [[128.0, 128.0]; NUM_LANDMARKS];
    pts[0] = [10.0, 40.0];
    let (_, f) = hflip(&img, &LandmarkSet::unchecked(pts, 256, 256));
    assert_eq!(f.points[9], [246.0, 40.0]);
}

#[test]
fn hflip_is_an_involution() {
    for seed in 0..10 {
        let img = random_image(256, 256, seed);
        let lm = LandmarkSet::new(random_points([0.0, 0.0], [256.0, 256.0], seed), 256, 256).unwrap();
        let (i1, l1) = hflip(&img, &lm);
        let (i2, l2) = hflip(&i1, &l1);
        assert_eq!(i2, img);
        assert_eq!(l2, lm);
    }
}

#[test]
fn flipped_outer_corner_matches_mirrored_partner() {
    for index in 0..5 {
        let face = render_symmetric_face(128, 128, 9, index);
        let lm = face.eyes();
        let (_, f) = hflip(&face.image, &lm);
        for k in 0..NUM_LANDMARKS {
            let d = ((f.points[k][0] - lm.points[k][0]).powi(2) + (f.points[k][1] - lm.points[k][1]).powi(2)).sqrt();
            assert!(d < 1.0, "face {index} landmark {k}: {d}");
        }
    }
}

#[test]
fn rotate_point_quarter_turn() {
    let p = rotate_point([1.0, 0.0], std::f64::consts::FRAC_PI_2, [0.0, 0.0]);
    assert!(p[0].abs() < 1e-15 && (p[1] + 1.0).abs() < 1e-15);
}

#[test]
fn zero_rotation_is_identity() {
    let img = random_image(64, 48, 6);
    let lm = LandmarkSet::new(random_points([0.0, 0.0], [64.0, 48.0], 6), 64, 48).unwrap();
    let (i, l) = rotate(&img, &lm, 0.0);
    assert_eq!(l, lm);
    for (a, b) in i.data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn rotation_round_trip_on_landmarks() {
    let img = Image::new(256, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..50 {
        let lm = LandmarkSet::unchecked(random_points([0.0, 0.0], [256.0, 256.0], seed), 256, 256);
        let theta = if seed < 4 { [5.0, -5.0, 10.0, -10.0][seed as usize] } else { rng.gen_range(-180.0..180.0) };
        let (_, a) = rotate(&img, &lm, theta);
        let (_, b) = rotate(&img, &a, -theta);
        for (p, q) in lm.points.iter().zip(&b.points) {
            assert!((p[0] - q[0]).abs() < 1e-6 && (p[1] - q[1]).abs() < 1e-6);
        }
    }
}

#[test]
fn rotation_keeps_centre_fixed() {
    let img = Image::new(100, 80);
    let lm = LandmarkSet::unchecked([[50.0, 40.0]; NUM_LANDMARKS], 100, 80);
    let (_, r) = rotate(&img, &lm, 10.0);
    assert!((r.points[0][0] - 50.0).abs() < 1e-12 && (r.points[0][1] - 40.0).abs() < 1e-12);
}

#[test]
fn blur_kernel_centre_to_corner_ratio() {
    let raw = blur_kernel_raw();
    let want = (32.0 / (2.0 * 1.8 * 1.8f64)).exp();
    assert!((raw[4][4] / raw[0][0] - want).abs() < 1e-9 * want);
    let total: f64 = blur_kernel().iter().flatten().sum();
    assert!((total - 1.0).abs() < 1e-15);
}

#[test]
fn blur_fixes_constant_images() {
    let img = Image::filled(20, 13, [0.25, 0.5, 1.0]);
    let out = gaussian_blur(&img);
    for (a, b) in out.data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn blur_of_impulse_is_kernel() {
    let mut img = Image::new(19, 19);
    img.set(1, 9, 9, 1.0);
    let out = gaussian_blur(&img);
    let k = blur_kernel();
    for y in 0..19 {
        for x in 0..19 {
            let (dx, dy) = (x as i64 - 9, y as i64 - 9);
            let want = if dx.abs() <= 4 && dy.abs() <= 4 { k[(dy + 4) as usize][(dx + 4) as usize] } else { 0.0 };
            assert!((out.get(1, x, y) - want).abs() < 1e-15);
            assert_eq!(out.get(0, x, y), 0.0);
        }
    }
}

#[test]
fn augment_drops_out_of_frame_copies() {
    let face = render_face(64, 64, 1, 0);
    let lm = face.eyes();
    let (kept, dropped) = augment(&face.image, &lm, &AugmentConfig::default());
    assert_eq!(kept.len() + dropped.len(), 7);
    for a in &kept {
        assert!(a.landmarks.in_frame(), "{}", a.tag);
        if a.tag == AugmentTag::Blur {
            assert_eq!(a.landmarks, lm);
        }
    }

    let corner = LandmarkSet::new([[1.0, 1.0]; NUM_LANDMARKS], 64, 64).unwrap();
    let (kept, dropped) = augment(&face.image, &corner, &AugmentConfig::default());
    assert_eq!(dropped, vec![AugmentTag::Rot(5), AugmentTag::Rot(-5), AugmentTag::Rot(10), AugmentTag::Rot(-10)]);
    assert_eq!(kept.iter().map(|a| a.tag).collect::<Vec<_>>(), vec![AugmentTag::Original, AugmentTag::Hflip, AugmentTag::Blur]);
}

#[test]
fn empty_directory_gives_empty_manifest() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let report = build_manifest(raw.path(), out.path(), 64, &AugmentConfig::default()).unwrap();
    assert!(report.records.is_empty() && report.skipped.is_empty());
    let s = Summary::of(&report.records);
    for c in CATEGORIES {
        assert_eq!(s.total(c), 0);
    }
    assert_eq!(to_jsonl(&report.records).unwrap(), "");
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn one_image_gives_seven_records_deterministically() {
    let raw = tempfile::tempdir().unwrap();
    write_fixture(raw.path(), 1, 96, 3).unwrap();
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let out = tempfile::tempdir().unwrap();
            let report = build_manifest(raw.path(), out.path(), 64, &AugmentConfig::default()).unwrap();
            write_manifest(&out.path().join("manifest.jsonl"), &report.records).unwrap();
            (report, tree_bytes(out.path()), out)
        })
        .collect();
    let (report, files, out) = &runs[0];
    assert_eq!(report.records.len() + report.skipped.len(), 7);
    assert_eq!(files, &runs[1].1);
    let records = read_manifest(&out.path().join("manifest.jsonl")).unwrap();
    assert_eq!(&records, &report.records);
    let mut sorted = records.clone();
    sorted.sort_by(|a, b| a.image.cmp(&b.image));
    assert_eq!(sorted, records);
    for r in &records {
        let img = Image::load(&out.path().join(&r.image)).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
        assert!(LandmarkSet::new(r.points, 64, 64).is_ok());
        assert_eq!(r.source_key(), "./face_000.png");
    }
    let s = Summary::of(&records);
    assert_eq!(s.total("Original"), 1);
    assert_eq!(s.groups, vec!["."]);
}

#[test]
fn unreadable_items_are_skipped() {
    let raw = tempfile::tempdir().unwrap();
    write_fixture(raw.path(), 2, 64, 4).unwrap();
    fs::write(raw.path().join("face_001.pts"), "garbage").unwrap();
    let out = tempfile::tempdir().unwrap();
    let report = build_manifest(raw.path(), out.path(), 64, &AugmentConfig::default()).unwrap();
    assert_eq!(report.skipped.iter().filter(|s| s.path == "face_001.png").count(), 1);
    assert!(report.records.iter().all(|r| r.source_key() == "./face_000.png"));
}

proptest! {
    // Coordinates on the 2^-44 grid, which covers every value with at most
    // 44 fractional bits below 256.
    #[test]
    fn hflip_exact_on_grid_coordinates(xs in prop::collection::vec(0u64..(1u64 << 52), 24)) {
        let pts: [Point; NUM_LANDMARKS] = std::array::from_fn(|i| {
            [xs[2 * i] as f64 * 2f64.powi(-44), xs[2 * i + 1] as f64 * 2f64.powi(-44)]
        });
        let lm = LandmarkSet::unchecked(pts, 256, 256);
        let img = Image::new(4, 4);
        let (_, a) = hflip(&img, &lm);
        let (_, b) = hflip(&img, &a);
        prop_assert_eq!(b, lm);
    }
}
