use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vai_core::metrics::MetricConfig;
use vai_core::raster::{decode_image, encode_png, PixelBuffer};
use vai_core::report::parse_json;

fn vai(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vai"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("VAI_WORKERS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_png(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> [u8; 3]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let img = PixelBuffer::from_rgb_fn(w, h, f).unwrap();
    fs::write(path, encode_png(&img).unwrap()).unwrap();
}

/// Two 16x12 images per cohort; cohort `k` gets its own texture.
fn cohort_dirs(root: &Path, cohorts: &[&str]) -> Vec<String> {
    let mut args = Vec::new();
    for (k, name) in cohorts.iter().enumerate() {
        let dir = root.join(name);
        for i in 0..2 {
            let seed = k * 7 + i * 3 + 1;
            write_png(&dir.join(format!("{i}.png")), 16, 12, |x, y| {
                let v = ((x * seed + y * y * (k + 1) + i * 5) % 17) as u8 * 15;
                [v, v.wrapping_mul(k as u8 + 1), 255 - v]
            });
        }
        args.push("--cohort".to_string());
        args.push(format!("{name}={}", dir.display()));
    }
    args
}

fn run_in(out: &Path, base: &[String], extra: &[&str]) -> Output {
    let mut args: Vec<&str> = base.iter().map(String::as_str).collect();
    let out = out.to_str().unwrap().to_string();
    args.extend(["--out", &out, "--resize", "native"]);
    args.extend(extra);
    vai(&args)
}

fn score_args(cmd: &str, inputs: &[String]) -> Vec<String> {
    let mut v = vec![cmd.to_string()];
    v.extend(inputs.iter().cloned());
    v
}

#[test]
fn score_two_cohorts_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = cohort_dirs(tmp.path(), &["alpha", "beta"]);
    let a = tmp.path().join("out_a");
    let b = tmp.path().join("out_b");
    let o = run_in(&a, &score_args("score", &inputs), &["--workers", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(o.stdout.is_empty(), "score keeps stdout empty");
    let o = run_in(&b, &score_args("score", &inputs), &["--workers", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    for f in ["scores.json", "scores.csv", "metrics.csv", "scatter.svg"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs across worker counts");
    }
    let report = parse_json(&fs::read(a.join("scores.json")).unwrap()).unwrap();
    assert_eq!(report.cohorts.len(), 2);
    assert_eq!(report.images.len(), 4);
    assert_eq!(report.generated_at, "2023-11-14T22:13:20Z");
    assert_eq!(report.config.metrics.resize, None);
    let scaled: Vec<f64> = report.cohorts.iter().map(|c| c.scaled.unwrap()).collect();
    assert_eq!(scaled, vec![100.0, 0.0]);
}

#[test]
fn rank_prints_table_and_flags_ties() {
    let tmp = tempfile::tempdir().unwrap();
    let mut inputs = cohort_dirs(tmp.path(), &["c1", "c2", "c3"]);
    // A fourth cohort with byte-identical images to c2 ties with it.
    inputs.push("--cohort".into());
    inputs.push(format!("c0={}", tmp.path().join("c2").display()));
    let out = tmp.path().join("out");
    let o = run_in(&out, &score_args("rank", &inputs), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8(o.stdout.clone()).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "rank,cohort,images,raw,scaled,tied");
    assert_eq!(lines.len(), 5);
    let rows: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
    let scaled: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(scaled[0], 100.0);
    assert_eq!(*scaled.last().unwrap(), 0.0);
    assert!(scaled.windows(2).all(|w| w[0] >= w[1]));
    let tied: Vec<&Vec<&str>> = rows.iter().filter(|r| r[5] == "true").collect();
    assert_eq!(tied.len(), 2);
    assert_eq!(tied[0][0], tied[1][0], "tied cohorts share a rank");
    assert_eq!((tied[0][1], tied[1][1]), ("c0", "c2"), "display breaks ties by name");
    assert!(stderr(&o).contains("tied"));
}

#[test]
fn single_cohort_warns_degenerate_scaling() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = cohort_dirs(tmp.path(), &["only"]);
    let out = tmp.path().join("out");
    let o = run_in(&out, &score_args("rank", &inputs), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = parse_json(&fs::read(out.join("scores.json")).unwrap()).unwrap();
    assert_eq!(report.cohorts[0].scaled, None);
    assert!(!report.warnings.is_empty());
    assert!(stderr(&o).to_lowercase().contains("warn"));
}

#[test]
fn manifest_with_missing_file_is_partial() {
    let tmp = tempfile::tempdir().unwrap();
    cohort_dirs(tmp.path(), &["a", "b"]);
    fs::write(tmp.path().join("broken.png"), b"\x89PNG\r\n\x1a\nnot really").unwrap();
    let manifest = tmp.path().join("m.csv");
    fs::write(
        &manifest,
        "path,cohort,label\na/0.png,a,fake\na/1.png,a,fake\nb/0.png,b,fake\nb/1.png,b,\nmissing.png,b,fake\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let m = manifest.to_str().unwrap().to_string();
    let o = run_in(&out, &["score".to_string(), "--manifest".into(), m.clone()], &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let report = parse_json(&fs::read(out.join("scores.json")).unwrap()).unwrap();
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].path, "missing.png");
    assert_eq!(report.images.len(), 4);

    fs::write(&manifest, "path,cohort\nmissing.png,a\nbroken.png,a\n").unwrap();
    let o = run_in(&tmp.path().join("out2"), &["score".to_string(), "--manifest".into(), m], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = cohort_dirs(tmp.path(), &["a", "b"]);
    let cfg = tmp.path().join("vai.toml");
    fs::write(&cfg, "[metrics]\nhsv_bins = [4, 4, 4]\nblur_sigma = 0.8\n[metrics.canny]\nhigh = 0.4\n").unwrap();
    let out = tmp.path().join("out");
    let c = cfg.to_str().unwrap();
    let o = run_in(&out, &score_args("score", &inputs), &["--config", c, "--blur-sigma", "1.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = parse_json(&fs::read(out.join("scores.json")).unwrap()).unwrap().config.metrics;
    assert_eq!(m.hsv_bins, [4, 4, 4]);
    assert_eq!(m.blur_sigma, 1.5);
    assert_eq!(m.canny.high, 0.4);
    assert_eq!(m.canny.low, 0.1);

    let o = run_in(&out, &score_args("score", &inputs), &["--lbp-bins", "64"]);
    assert_eq!(code(&o), 2);
    let o = run_in(&out, &score_args("score", &inputs), &["--canny-low", "0.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn help_lists_every_default() {
    let d = MetricConfig::default();
    for cmd in ["score", "rank"] {
        let o = vai(&[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let help = String::from_utf8(o.stdout).unwrap();
        for (flag, default) in [
            ("--out", "vai-out".to_string()),
            ("--workers", "$VAI_WORKERS".to_string()),
            ("--resize", d.resize.unwrap().to_string()),
            ("--hsv-bins", d.hsv_bins[0].to_string()),
            ("--lbp-bins", d.lbp_bins.to_string()),
            ("--entropy-epsilon", format!("{:e}", d.entropy_epsilon)),
            ("--blur-sigma", format!("{:?}", d.blur_sigma)),
            ("--blur-size", "2*ceil(3*sigma)+1".to_string()),
            ("--canny-sigma", format!("{:?}", d.canny.sigma)),
            ("--canny-low", format!("{:?}", d.canny.low)),
            ("--canny-high", format!("{:?}", d.canny.high)),
            ("--weights", "1,1,1,1,1,1,1".to_string()),
        ] {
            let line = help
                .lines()
                .find(|l| l.trim_start().starts_with(flag))
                .unwrap_or_else(|| panic!("{cmd} help lacks {flag}"));
            assert!(line.contains(&format!("[default: {default}")), "{line}");
        }
    }
    let help = String::from_utf8(vai(&["eval", "--help"]).stdout).unwrap();
    assert!(help.contains("[default: 0.5]"));
}

const FIXTURE: &str = "image_id,truth,score,detector,cohort
r1,real,0.1,A,*
r2,real,0.7,A,*
x1,fake,0.9,A,X
x2,fake,0.6,A,X
y1,fake,0.2,A,Y
y2,fake,0.3,A,Y
r1,real,0.6,B,*
r2,real,0.2,B,*
x1,fake,0.8,B,X
x2,fake,0.4,B,X
y1,fake,0.45,B,Y
y2,fake,0.9,B,Y
";

#[test]
fn eval_two_by_two() {
    let tmp = tempfile::tempdir().unwrap();
    let preds = tmp.path().join("p.csv");
    fs::write(&preds, FIXTURE).unwrap();
    let out = tmp.path().join("out");
    let o = vai(&["eval", "--predictions", preds.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), csv);
    let acc: Vec<(String, String)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (format!("{}/{}", f[0], f[1]), f[9].to_string())
        })
        .collect();
    assert_eq!(
        acc,
        [("A/X", "75.00"), ("A/Y", "25.00"), ("B/X", "50.00"), ("B/Y", "50.00")]
            .map(|(a, b)| (a.to_string(), b.to_string()))
    );
    assert_eq!(
        fs::read_to_string(out.join("accuracy_matrix.csv")).unwrap(),
        "detector,X,Y\nA,75.00,25.00\nB,50.00,50.00\n"
    );
}

#[test]
fn eval_all_fake_predictor() {
    let tmp = tempfile::tempdir().unwrap();
    let preds = tmp.path().join("p.csv");
    fs::write(
        &preds,
        "image_id,truth,score,detector,cohort\na,real,1,D,G\nb,real,1,D,G\nc,fake,1,D,G\nd,fake,1,D,G\n",
    )
    .unwrap();
    let o = vai(&["eval", "--predictions", preds.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[9..], ["50.00", "100.00", "50.00"]);
}

#[test]
fn eval_errors_are_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let preds = tmp.path().join("p.csv");
    let p = preds.to_str().unwrap();
    let out = tmp.path().join("o");
    let o_dir = out.to_str().unwrap();

    fs::write(&preds, "image_id,truth,detector,cohort\na,real,D,G\n").unwrap();
    let o = vai(&["eval", "--predictions", p, "--out", o_dir]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("score"), "{}", stderr(&o));

    fs::write(&preds, "image_id,truth,score,detector,cohort\na,real,0.1,D,G\nb,maybe,0.2,D,G\n").unwrap();
    let o = vai(&["eval", "--predictions", p, "--out", o_dir]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(&preds, "image_id,truth,score,detector,cohort\na,real,0.1,D,G\n").unwrap();
    let o = vai(&["eval", "--predictions", p, "--out", o_dir]);
    assert_eq!(code(&o), 2, "a cell without fakes is a coverage error");
}

#[test]
fn lbp_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("flat.png");
    write_png(&src, 9, 7, |_, _| [90, 90, 90]);
    let dst = tmp.path().join("nested/lbp.png");
    let o = vai(&["lbp", src.to_str().unwrap(), dst.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let png = fs::read(&dst).unwrap();
    assert_eq!(png[25], 0, "IHDR colour type is grayscale");
    let img = decode_image(&png).unwrap();
    assert_eq!((img.width(), img.height()), (7, 5));
    assert!(img.samples().iter().all(|&v| v == 255));

    let missing: PathBuf = tmp.path().join("nope.png");
    let o = vai(&["lbp", missing.to_str().unwrap(), dst.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn score_writes_lbp_images() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = cohort_dirs(tmp.path(), &["a", "b"]);
    let out = tmp.path().join("out");
    let o = run_in(&out, &score_args("score", &inputs), &["--lbp-images"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let img = decode_image(&fs::read(out.join("lbp/a/0.png")).unwrap()).unwrap();
    assert_eq!((img.width(), img.height()), (14, 10));
}
