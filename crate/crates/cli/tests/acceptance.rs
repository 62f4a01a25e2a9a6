//! Primary acceptance criteria 1–10. Runs sequentially so the timing
//! criteria are not disturbed by other work; prints one line per criterion.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use cropdiv::evalharness::{load_report, ReportFormat, ReportRow};
use cropdiv::geometry::{iou, BoundingBox};
use cropdiv::nnkit::{dot, norm};
use cropdiv::normvae::{
    generate, load_checkpoint, rescale_latent, train, GMap, GenerationRequest, Mode, VaeConfig,
    VaeParams,
};
use cropdiv::synthworld::{build_world, load_dataset, WorldConfig};
use cropdiv_cli::{gradcheck, RunConfig};

struct Outcome {
    id: u8,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn announce(o: &Outcome) {
    // Written straight to the stderr handle so the line survives output capture.
    let line = format!(
        "criterion {:>2} {} {}: {} [{:.1}s]\n",
        o.id,
        if o.passed { "PASS" } else { "FAIL" },
        o.name,
        o.detail,
        o.elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn timed<F: FnOnce() -> (bool, String)>(id: u8, name: &'static str, f: F) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = f();
    let o = Outcome {
        id,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    };
    announce(&o);
    o
}

fn criterion_1() -> (bool, String) {
    let start = Instant::now();
    let outcomes = gradcheck::run_suite(0, 20, &VaeConfig::default()).expect("suite runs");
    let secs = start.elapsed().as_secs_f64();
    let worst = outcomes.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    let all = outcomes.iter().all(|o| o.passed() && o.instances >= 20);
    let names: Vec<String> = outcomes
        .iter()
        .map(|o| format!("{} {:.1e}", o.name, o.max_rel_error))
        .collect();
    (
        all && worst <= 1e-4 && secs < 30.0,
        format!(
            "worst rel err {worst:.2e} (≤ 1e-4) in {secs:.1}s (< 30s); {}",
            names.join(", ")
        ),
    )
}

fn criterion_2() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_norm, mut worst_cos): (f64, f64) = (0.0, 0.0);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=64);
        let gmap = GMap::default_for(n);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let z: Vec<f64> = (0..n)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let s = rng.random_range(0.5..=1.0);
        let out = rescale_latent(&z, s, &gmap).expect("non-degenerate");
        let g = gmap.eval(s).unwrap();
        worst_norm = worst_norm.max((norm(&out.z) - g).abs() / g);
        worst_cos = worst_cos.max((dot(&z, &out.z) / (norm(&z) * norm(&out.z)) - 1.0).abs());
    }
    let exact = [16usize, 512].iter().all(|&n| {
        let g = GMap::default_for(n);
        let r = (n as f64).sqrt();
        g.eval(1.0).unwrap() == r && g.eval(0.5).unwrap() == 5.0 * r
    });
    let five_root_512 = (GMap::default_for(512).eval(0.5).unwrap() - 113.13708498984761).abs() < 1e-12;
    (
        worst_norm <= 1e-9 && worst_cos <= 1e-12 && exact && five_root_512,
        format!(
            "10000 pairs: norm rel err {worst_norm:.1e} (≤ 1e-9), |cos − 1| {worst_cos:.1e} (≤ 1e-12); g(1) = √N and g(0.5) = 5√N exact at N = 16, 512: {exact}"
        ),
    )
}

fn bx(c: [f64; 4]) -> BoundingBox {
    BoundingBox::new(c[0], c[1], c[2], c[3]).unwrap()
}

fn criterion_3() -> (bool, String) {
    let a = bx([0.0, 0.0, 2.0, 2.0]);
    let hand = iou(&a, &a) == 1.0
        && iou(&a, &bx([5.0, 5.0, 6.0, 6.0])) == 0.0
        && iou(&a, &bx([2.0, 0.0, 3.0, 2.0])) == 0.0
        && iou(&a, &bx([1.0, 1.0, 3.0, 3.0])) == 1.0 / 7.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random_box = |rng: &mut ChaCha8Rng| {
        let x1 = rng.random_range(0.0..100.0);
        let y1 = rng.random_range(0.0..100.0);
        bx([
            x1,
            y1,
            x1 + rng.random_range(1.0..60.0),
            y1 + rng.random_range(1.0..60.0),
        ])
    };
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_box(&mut rng);
        let q = random_box(&mut rng);
        let base = iou(&p, &q);
        worst = worst.max((base - iou(&q, &p)).abs());
        let (tx, ty) = (
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        );
        let k = rng.random_range(0.1..10.0);
        let map = |b: &BoundingBox, f: &dyn Fn(f64, f64) -> (f64, f64)| {
            let c = b.coords();
            let (x1, y1) = f(c[0], c[1]);
            let (x2, y2) = f(c[2], c[3]);
            bx([x1, y1, x2, y2])
        };
        let shift = |x: f64, y: f64| (x + tx, y + ty);
        let scale = |x: f64, y: f64| (k * x, k * y);
        worst = worst.max((base - iou(&map(&p, &shift), &map(&q, &shift))).abs());
        worst = worst.max((base - iou(&map(&p, &scale), &map(&q, &scale))).abs());
    }
    (
        hand && worst <= 1e-12,
        format!("hand cases exact: {hand}; 1000 random symmetry/translation/scale checks, worst deviation {worst:.1e} (≤ 1e-12)"),
    )
}

fn criterion_4() -> (bool, String) {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let world = build_world(&WorldConfig {
            seed,
            ..WorldConfig::default()
        })
        .unwrap();
        for mode in [Mode::Vanilla, Mode::Norm] {
            let cfg = VaeConfig {
                epochs: 10,
                mode,
                ..VaeConfig::default()
            };
            let (_, rep) = train(
                VaeParams::init(&cfg, seed).unwrap(),
                &world.base_samples,
                &world.semantics(),
                seed,
            )
            .unwrap();
            let kl_ok = rep
                .epoch_min_kl
                .iter()
                .chain(&rep.epoch_kl)
                .all(|k| *k >= 0.0);
            let dec = rep.epoch_loss[9] < rep.epoch_loss[0];
            ok &= kl_ok && dec;
            parts.push(format!(
                "s{seed} {} {:.3}→{:.3}",
                mode.as_str(),
                rep.epoch_loss[0],
                rep.epoch_loss[9]
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        ok && secs < 120.0,
        format!(
            "epoch-10 < epoch-1 loss and KL ≥ 0 for seeds 0–2, both modes, {secs:.1}s (< 120s): {}",
            parts.join(", ")
        ),
    )
}

fn criterion_5(dir: &Path) -> (bool, String) {
    let params = load_checkpoint(&dir.join("norm.ckpt")).unwrap();
    let world = load_dataset(&dir.join("dataset.bin")).unwrap();
    let r = params.gmap.sqrt_dim();
    let mut passing = 0;
    let mut worst_ratio = f64::INFINITY;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut all = true;
        for class in &world.novel_classes {
            let mut mean_dist = |beta: f64| {
                let req = GenerationRequest {
                    semantic: class.semantic.clone(),
                    count: 200,
                    beta_schedule: vec![beta],
                };
                let out = generate(&params, &req, &mut rng).unwrap();
                out.iter()
                    .map(|g| class.distance_to_prototype(&g.feature))
                    .sum::<f64>()
                    / out.len() as f64
            };
            let near = mean_dist(r);
            let far = mean_dist(5.0 * r);
            worst_ratio = worst_ratio.min(far / near);
            all &= far > near;
        }
        passing += usize::from(all);
    }
    (
        passing >= 4,
        format!("distance at β = 5√N exceeds β = √N for every novel class in {passing}/5 seeds (need ≥ 4); min ratio {worst_ratio:.2}"),
    )
}

/// (source, seed, iou_bin) → (accuracy, mean_prob).
type Rows = BTreeMap<(String, String, String), (f64, f64)>;

fn rows(path: &Path) -> Rows {
    load_report(path, ReportFormat::Csv)
        .unwrap()
        .into_iter()
        .map(|r: ReportRow| ((r.source, r.seed, r.iou_bin), (r.accuracy, r.mean_prob)))
        .collect()
}

fn acc(rows: &Rows, source: &str, seed: &str, bin: &str) -> f64 {
    rows[&(source.to_owned(), seed.to_owned(), bin.to_owned())].0
}

fn criterion_6(dir: &Path, pipeline: Duration) -> (bool, String) {
    let r = rows(&dir.join("report.csv"));
    let mut passing = 0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let s = seed.to_string();
        let (none, van, nrm) = (
            acc(&r, "none", &s, "drop"),
            acc(&r, "vanilla_vae", &s, "drop"),
            acc(&r, "norm_vae", &s, "drop"),
        );
        passing += usize::from(none > 0.0 && nrm < van);
        parts.push(format!("s{seed} none {none:.3} van {van:.3} norm {nrm:.3}"));
    }
    let secs = pipeline.as_secs_f64();
    (
        passing >= 4 && secs < 300.0,
        format!("none drop > 0 and norm drop < vanilla drop in {passing}/5 seeds (need ≥ 4); whole pipeline {secs:.0}s (< 300s); {}", parts.join("; ")),
    )
}

fn criterion_7(dir: &Path) -> (bool, String) {
    let r = rows(&dir.join("report.csv"));
    let none = acc(&r, "none", "mean", "hard");
    let van = acc(&r, "vanilla_vae", "mean", "hard");
    let nrm = acc(&r, "norm_vae", "mean", "hard");
    (
        nrm >= van && van >= none,
        format!("mean hard-bin accuracy norm {nrm:.4} ≥ vanilla {van:.4} ≥ none {none:.4}"),
    )
}

fn criterion_8(dir: &Path) -> (bool, String) {
    let r = rows(&dir.join("subset_report.csv"));
    let (mut hard_wins, mut easy_wins) = (0, 0);
    for seed in 0..5 {
        let s = seed.to_string();
        hard_wins += usize::from(
            acc(&r, "low_iou_subset", &s, "hard") > acc(&r, "high_iou_subset", &s, "hard"),
        );
        easy_wins += usize::from(
            acc(&r, "high_iou_subset", &s, "easy") > acc(&r, "low_iou_subset", &s, "easy"),
        );
    }
    (
        hard_wins >= 3 && easy_wins >= 3,
        format!(
            "low beats high on hard bin in {hard_wins}/5, high beats low on easy bin in {easy_wins}/5 (need majority); means hard {:.3} vs {:.3}, easy {:.3} vs {:.3}",
            acc(&r, "low_iou_subset", "mean", "hard"),
            acc(&r, "high_iou_subset", "mean", "hard"),
            acc(&r, "low_iou_subset", "mean", "easy"),
            acc(&r, "high_iou_subset", "mean", "easy"),
        ),
    )
}

fn run_pipeline(config: &Path, out: &Path, threads: usize) -> Duration {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_cropdiv"))
        .args(["pipeline", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("CROPDIV_THREADS", threads.to_string())
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .expect("binary runs");
    assert!(status.success(), "pipeline failed with {status}");
    start.elapsed()
}

fn artifacts(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                PathBuf::from(p.file_name().unwrap()),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn criterion_9(a: &Path, b: &Path, c: &Path) -> (bool, String) {
    let (fa, fb, fc) = (artifacts(a), artifacts(b), artifacts(c));
    let names: Vec<String> = fa.keys().map(|p| p.display().to_string()).collect();
    let expected = [
        "dataset.bin",
        "vanilla.ckpt",
        "norm.ckpt",
        "report.csv",
        "subset_report.csv",
    ];
    let complete = expected.iter().all(|n| fa.contains_key(Path::new(n)));
    (
        complete && fa == fb && fa == fc,
        format!(
            "{} artifacts ({}) identical across two runs at 4 threads: {}, and 1 vs 4 threads: {}",
            fa.len(),
            names.join(", "),
            fa == fb,
            fa == fc
        ),
    )
}

#[test]
fn primary_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("default.json");
    std::fs::write(
        &config,
        serde_json::to_vec_pretty(&RunConfig::default()).unwrap(),
    )
    .unwrap();
    let (run_a, run_b, run_c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );

    let mut outcomes = vec![
        timed(1, "gradient suite", criterion_1),
        timed(2, "norm contract", criterion_2),
        timed(3, "IoU oracle", criterion_3),
        timed(4, "training sanity", criterion_4),
    ];

    let pipeline_time = run_pipeline(&config, &run_a, 4);
    outcomes.push(timed(5, "β controls difficulty", || criterion_5(&run_a)));
    outcomes.push(timed(6, "robustness drop ordering", || {
        criterion_6(&run_a, pipeline_time)
    }));
    outcomes.push(timed(7, "hard-bin accuracy ordering", || {
        criterion_7(&run_a)
    }));
    outcomes.push(timed(8, "low/high subset flip", || criterion_8(&run_a)));
    outcomes.push(timed(9, "determinism", || {
        run_pipeline(&config, &run_b, 4);
        run_pipeline(&config, &run_c, 1);
        criterion_9(&run_a, &run_b, &run_c)
    }));
    outcomes.push(timed(10, "end-to-end budget", || {
        let secs = pipeline_time.as_secs_f64();
        (
            secs < 600.0,
            format!("default pipeline, 5 seeds, 4 threads: {secs:.1}s (< 600s)"),
        )
    }));

    let failed: Vec<u8> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.id)
        .collect();
    let _ = std::io::stderr().write_all(
        format!(
            "acceptance: {}/{} criteria passed\n",
            outcomes.len() - failed.len(),
            outcomes.len()
        )
        .as_bytes(),
    );
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
