use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use detbound_core::data::{
    classifier_outputs_to_json_string, detections_to_json_string, save_dataset,
};
use detbound_core::synth::{self, DatasetSpec, DetectorSpec};
use detbound_core::Dataset;
use image::{Rgb, RgbImage};
use serde_json::Value;

fn detbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detbound"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = detbound(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    ds: Dataset,
}

impl Fixture {
    fn new(images: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let spec = DatasetSpec {
            images,
            categories: 4,
            boxes_per_image: (1, 4),
            width: 96,
            height: 64,
        };
        let ds = synth::dataset(&spec, 3);
        save_dataset(&ds, root.join("ann.json")).unwrap();
        let dets = synth::detector(&ds, &DetectorSpec::default(), 4);
        std::fs::write(root.join("det.json"), detections_to_json_string(&dets)).unwrap();
        std::fs::write(
            root.join("cls.json"),
            classifier_outputs_to_json_string(&synth::classifier(&ds, 0.8, 3, 5)),
        )
        .unwrap();
        std::fs::create_dir(root.join("images")).unwrap();
        for info in ds.images() {
            let img = RgbImage::from_fn(info.width, info.height, |x, y| {
                Rgb([(x * 3) as u8, (y * 5) as u8, (info.id * 40) as u8])
            });
            img.save(root.join("images").join(&info.file_name)).unwrap();
        }
        Fixture {
            _dir: dir,
            root,
            ds,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn corner_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    let inter = ix.max(0.0) * iy.max(0.0);
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

#[test]
fn sample_boxes_meet_the_iou_floor() {
    let out = ok(&[
        "sample-boxes",
        "--gamma",
        "0.5",
        "--n",
        "4",
        "--target",
        "0,0,10,10",
        "--seed",
        "7",
    ]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("x,y,w,h,curve,gamma,alpha,iou"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            [0, 1, 2, 3, 7]
                .iter()
                .map(|&i| f[i].parse().unwrap())
                .collect()
        })
        .collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        // Coordinates are printed to six significant digits.
        assert!(corner_iou([r[0], r[1], r[2], r[3]], [0.0, 0.0, 10.0, 10.0]) >= 0.5 - 1e-4);
        assert!(r[4] >= 0.5);
    }
    assert_eq!(
        out,
        ok(&[
            "sample-boxes",
            "--gamma",
            "0.5",
            "--n",
            "4",
            "--target",
            "0,0,10,10",
            "--seed",
            "7"
        ])
    );
}

#[test]
fn diagnose_ends_at_100() {
    let f = Fixture::new(12);
    let out = ok(&[
        "diagnose",
        "--ann",
        p(&f.path("ann.json")),
        "--det",
        p(&f.path("det.json")),
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "mAP,-Cls. (Type I),+Local.,-Duplicates,+Misses");
    assert_eq!(lines[1].rsplit(',').next(), Some("100.000"));

    let counts = f.path("counts.csv");
    ok(&[
        "diagnose",
        "--ann",
        p(&f.path("ann.json")),
        "--det",
        p(&f.path("det.json")),
        "--out",
        p(&f.path("diag.json")),
        "--counts-out",
        p(&counts),
    ]);
    let v: Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("diag.json")).unwrap()).unwrap();
    assert_eq!(v["map_after_miss_fix"].as_f64(), Some(100.0));
    assert_eq!(std::fs::read_to_string(counts).unwrap().lines().count(), 5);
}

#[test]
fn eval_is_deterministic_across_threads() {
    let f = Fixture::new(20);
    let run = |threads: &str, name: &str| {
        let out = f.path(name);
        ok(&[
            "eval",
            "--threads",
            threads,
            "--ann",
            p(&f.path("ann.json")),
            "--det",
            p(&f.path("det.json")),
            "--out",
            p(&out),
            "--pr-out",
            p(&f.path(&format!("{name}.pr.csv"))),
        ]);
        std::fs::read(out).unwrap()
    };
    let one = run("1", "a.json");
    assert_eq!(one, run("4", "b.json"));
    assert_eq!(one, run("4", "c.json"));
    let v: Value = serde_json::from_slice(&one).unwrap();
    assert!(v["map"].as_f64().unwrap() > 0.0);
    assert_eq!(v["per_category"].as_array().unwrap().len(), 4);
    assert_eq!(
        std::fs::read(f.path("a.json.pr.csv")).unwrap(),
        std::fs::read(f.path("b.json.pr.csv")).unwrap()
    );

    let csv = ok(&[
        "eval",
        "--ann",
        p(&f.path("ann.json")),
        "--det",
        p(&f.path("det.json")),
        "--format",
        "csv",
    ]);
    assert!(csv.starts_with("category_id,name,n_gt,AP,AP50,AP75,AP_small,AP_medium,AP_large,AR\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn uap_strategies() {
    let f = Fixture::new(15);
    let (ann, cls) = (f.path("ann.json"), f.path("cls.json"));
    let base = ["uap", "--ann", p(&ann), "--cls", p(&cls)];
    let s1: Value = serde_json::from_str(&ok(&base)).unwrap();
    assert_eq!(s1["ap50"], s1["ap75"]);
    assert_eq!(s1["ap50"], s1["map"]);
    let mut two = base.to_vec();
    two.extend(["--strategy", "2", "--aggregation", "most-confident"]);
    let s2: Value = serde_json::from_str(&ok(&two)).unwrap();
    assert_eq!(s2["ap50"], s2["map"]);
    assert_eq!(
        detbound(&[&base[..], &["--strategy", "3"]].concat())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn exit_codes() {
    assert_eq!(detbound(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(detbound(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(detbound(&[]).status.code(), Some(2));
    let missing = detbound(&[
        "eval",
        "--ann",
        "/nonexistent/a.json",
        "--det",
        "/nonexistent/d.json",
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/a.json"));
    let bad_gamma = detbound(&["sample-boxes", "--gamma", "1.5", "--target", "0,0,10,10"]);
    assert_eq!(bad_gamma.status.code(), Some(1));
    assert_eq!(
        detbound(&["sample-boxes", "--gamma", "0.5", "--target", "0,0,10"])
            .status
            .code(),
        Some(2)
    );

    let f = Fixture::new(2);
    std::fs::write(
        f.path("bad.json"),
        "[{\"image_id\": 999, \"category_id\": 1, \"bbox\": [0,0,1,1], \"score\": 0.5}]",
    )
    .unwrap();
    let out = detbound(&[
        "eval",
        "--ann",
        p(&f.path("ann.json")),
        "--det",
        p(&f.path("bad.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn probes_write_image_sets() {
    let f = Fixture::new(3);
    let n = f.ds.annotations().len();
    let (ann, images) = (f.path("ann.json"), f.path("images"));
    let common = ["--ann", p(&ann), "--images", p(&images)];

    let white = f.path("white");
    ok(&[
        &["probes", "--variant", "white-bg", "--out", p(&white)],
        &common[..],
    ]
    .concat());
    let v: Value =
        serde_json::from_str(&std::fs::read_to_string(white.join("annotations.json")).unwrap())
            .unwrap();
    assert_eq!(v["images"].as_array().unwrap().len(), n);
    assert_eq!(v["annotations"].as_array().unwrap().len(), n);

    let flip = f.path("flip");
    ok(&[
        &["probes", "--variant", "vflip", "--out", p(&flip)],
        &common[..],
    ]
    .concat());
    let back = f.path("back");
    ok(&[
        "probes",
        "--variant",
        "vflip",
        "--ann",
        p(&flip.join("annotations.json")),
        "--images",
        p(&flip),
        "--out",
        p(&back),
    ]);
    for info in f.ds.images() {
        let a = image::open(f.path("images").join(&info.file_name))
            .unwrap()
            .to_rgb8();
        let b = image::open(back.join(&info.file_name)).unwrap().to_rgb8();
        assert_eq!(a, b);
    }

    let bgs = f.path("bgs");
    std::fs::create_dir(&bgs).unwrap();
    for i in 0..3u8 {
        RgbImage::from_pixel(200, 150, Rgb([i * 60, 10, 10]))
            .save(bgs.join(format!("bg{i}.png")))
            .unwrap();
    }
    let paste = f.path("paste");
    ok(&[
        &[
            "probes",
            "--variant",
            "incongruent",
            "--backgrounds",
            p(&bgs),
            "--seed",
            "9",
            "--out",
            p(&paste),
        ],
        &common[..],
    ]
    .concat());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(paste.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 3 * n);
    assert_eq!(
        detbound(
            &[
                &["probes", "--variant", "incongruent", "--out", p(&paste)],
                &common[..]
            ]
            .concat()
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn export_crops_writes_manifest() {
    let f = Fixture::new(3);
    let out = f.path("crops");
    ok(&[
        "export-crops",
        "--ann",
        p(&f.path("ann.json")),
        "--images",
        p(&f.path("images")),
        "--scale",
        "1.5",
        "--mode",
        "context-only",
        "--out",
        p(&out),
    ]);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let entries = manifest.as_array().unwrap();
    assert_eq!(entries.len(), f.ds.annotations().len());
    for e in entries {
        assert!(out.join(e["file_name"].as_str().unwrap()).exists());
    }
    let bad = detbound(&[
        "export-crops",
        "--ann",
        p(&f.path("ann.json")),
        "--images",
        p(&f.path("images")),
        "--scale",
        "0.5",
        "--mode",
        "context-only",
        "--out",
        p(&out),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn correlate_points_and_classifiers() {
    let f = Fixture::new(10);
    std::fs::write(f.path("pts.csv"), "accuracy,uap\n0,0\n1,1\n2,1\n").unwrap();
    let out = ok(&[
        "correlate",
        "--points",
        p(&f.path("pts.csv")),
        "--format",
        "csv",
    ]);
    assert_eq!(
        out,
        "n,slope,intercept,r_squared\n3,0.500000,0.166667,0.750000\n"
    );

    for (i, acc) in [0.5, 0.7, 0.9].iter().enumerate() {
        let outputs = synth::classifier(&f.ds, *acc, 0, 20 + i as u64);
        std::fs::write(
            f.path(&format!("c{i}.json")),
            classifier_outputs_to_json_string(&outputs),
        )
        .unwrap();
    }
    let v: Value = serde_json::from_str(&ok(&[
        "correlate",
        "--ann",
        p(&f.path("ann.json")),
        "--cls",
        p(&f.path("c0.json")),
        p(&f.path("c1.json")),
        p(&f.path("c2.json")),
    ]))
    .unwrap();
    assert_eq!(v["n"], 3);
    assert!(v["slope"].as_f64().unwrap() > 0.0);
    assert_eq!(detbound(&["correlate"]).status.code(), Some(2));
}
