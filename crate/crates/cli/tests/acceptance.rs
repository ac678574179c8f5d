//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsescene::coding::omp_detailed;
use sparsescene::dictionary::{build_initial_dictionary, learn, KmeansConfig};
use sparsescene::features::{decode_feature_matrix, encode_feature_matrix, read_feature_file};
use sparsescene::pipeline::{
    configured_specs, run_eval, run_train, write_synth_dataset, DataSource, DatasetManifest, PipelineConfig,
    TRAIN_REPR_FILE,
};
use sparsescene::pooling::max_pool;
use sparsescene::synth::{generate, SynthConfig};
use sparsescene::{
    encode, CodingConfig, DictLearnConfig, Dictionary, Layout, LinearSvmModel, PcaModel, PoolingMode, SourceTag,
    SparseCodeMatrix,
};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

fn random_dictionary(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Dictionary {
    let m = DMatrix::from_fn(d, k, |_, _| rng.random_range(-1.0..1.0));
    Dictionary::single_block(m, SourceTag::Structure).unwrap()
}

/// Least-squares fit of `y` on the given atoms; returns coefficients and residual norm.
fn least_squares(dict: &Dictionary, support: &[usize], y: &DVector<f64>) -> (Vec<f64>, f64) {
    let a = dict.atoms().select_columns(support);
    let svd = a.clone().svd(true, true);
    let x = svd.solve(y, 1e-14).unwrap();
    let r = y - &a * &x;
    (x.iter().copied().collect(), r.norm())
}

/// Textbook OMP: greedy selection with a full least-squares refit by SVD each step.
fn naive_omp(dict: &Dictionary, y: &DVector<f64>, s: usize) -> Vec<usize> {
    let mut selected: Vec<usize> = Vec::new();
    let mut r = y.clone();
    for _ in 0..s {
        let next = (0..dict.columns())
            .filter(|j| !selected.contains(j))
            .max_by(|&a, &b| {
                let (ca, cb) = (dict.atoms().column(a).dot(&r).abs(), dict.atoms().column(b).dot(&r).abs());
                ca.total_cmp(&cb).then(b.cmp(&a))
            })
            .unwrap();
        selected.push(next);
        let a = dict.atoms().select_columns(&selected);
        let x = a.clone().svd(true, true).solve(y, 1e-14).unwrap();
        r = y - a * x;
    }
    selected.sort();
    selected
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = CodingConfig::default();
    let mut worst = 0usize;
    let mut violations = 0;
    for _ in 0..1000 {
        let k = rng.random_range(32..=512);
        let d = rng.random_range(8..=64);
        let dict = random_dictionary(&mut rng, d, k);
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let code = encode(&dict, &y, &cfg).unwrap();
        let limit = (3 * k / 100).max(1);
        if code.nnz() > limit {
            violations += 1;
        }
        worst = worst.max(code.nnz());
    }
    Outcome::new(violations == 0, format!("1000 codes, {violations} over the limit, largest nnz {worst}"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut recovered = 0;
    let mut agrees = 0;
    let mut worst_coef = 0f64;
    for _ in 0..100 {
        let dict = random_dictionary(&mut rng, 16, 64);
        let mut support: Vec<usize> = (0..64).collect();
        support.shuffle(&mut rng);
        support.truncate(3);
        support.sort();
        let coef: Vec<f64> = (0..3)
            .map(|_| rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut y = DVector::zeros(16);
        for (&j, &c) in support.iter().zip(&coef) {
            y.axpy(c, &dict.atoms().column(j), 1.0);
        }
        let out = omp_detailed(&dict, y.as_slice(), 3, 1e-12).unwrap();
        let (ls, _) = least_squares(&dict, &support, &y);
        if naive_omp(&dict, &y, 3) == out.code.indices() {
            agrees += 1;
        }
        if out.code.indices() == support.as_slice() {
            let err = out
                .code
                .coefficients()
                .iter()
                .zip(&coef)
                .zip(&ls)
                .map(|((o, p), l)| (o - p).abs().max((o - l).abs()))
                .fold(0.0, f64::max);
            worst_coef = worst_coef.max(err);
            if err <= 1e-6 {
                recovered += 1;
            }
        }
    }

    let mut optimal_picks = 0;
    let mut mismatched = 0;
    let mut below_optimum = 0;
    let subsets: Vec<[usize; 3]> = (0..16)
        .flat_map(|a| (a + 1..16).flat_map(move |b| (b + 1..16).map(move |c| [a, b, c])))
        .collect();
    for _ in 0..100 {
        let dict = random_dictionary(&mut rng, 8, 16);
        let y = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let out = omp_detailed(&dict, y.as_slice(), 3, 0.0).unwrap();
        let omp_res = *out.residual_norms.last().unwrap();
        let (best, best_res) = subsets
            .iter()
            .map(|s| (s, least_squares(&dict, s, &y).1))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if omp_res < best_res - 1e-9 {
            below_optimum += 1;
        }
        if out.code.indices() == best.as_slice() {
            optimal_picks += 1;
            if (omp_res - best_res).abs() > 1e-9 {
                mismatched += 1;
            }
        }
    }
    Outcome::new(
        recovered == 100 && mismatched == 0 && below_optimum == 0,
        format!(
            "planted recovery {recovered}/100 (max coefficient error {worst_coef:.1e}, \
             same support as textbook OMP {agrees}/100); \
             exhaustive: optimal support {optimal_picks}/100, residual mismatches {mismatched}, below optimum {below_optimum}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut failures = Vec::new();
    let mut decrease = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let d = 12;
        let truth = random_dictionary(&mut rng, d, 40);
        // Noisy 3-sparse combinations of a hidden dictionary.
        let mut sample = |n: usize| {
            let mut m = DMatrix::zeros(n, d);
            for i in 0..n {
                for _ in 0..3 {
                    let j = rng.random_range(0..40);
                    let c = rng.random_range(-1.0..1.0);
                    for r in 0..d {
                        m[(i, r)] += c * truth.atoms()[(r, j)];
                    }
                }
                for r in 0..d {
                    m[(i, r)] += rng.random_range(-0.02..0.02);
                }
            }
            m
        };
        let s1 = sample(60);
        let s2 = sample(140);
        let d0 = build_initial_dictionary(
            &[(1, s1.clone()), (2, s2.clone())],
            &[10, 22],
            &KmeansConfig {
                k: 1,
                max_iters: 30,
                seed,
            },
            SourceTag::Object,
        )
        .unwrap();
        let y = DMatrix::from_fn(200, d, |i, j| if i < 60 { s1[(i, j)] } else { s2[(i - 60, j)] });
        let learned = learn(
            &d0,
            &y,
            &DictLearnConfig {
                epochs: 12,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let t = &learned.objective_trace;
        let monotone = t.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
        if !monotone || t.last() > t.first() {
            failures.push(seed);
        }
        decrease.push(1.0 - t.last().unwrap() / t[0]);
    }
    let mean = decrease.iter().sum::<f64>() / decrease.len() as f64;
    Outcome::new(
        failures.is_empty(),
        format!("10 problems, non-monotone seeds {failures:?}, mean relative decrease {:.1}%", 100.0 * mean),
    )
}

fn random_codes(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < 0.3 {
            rng.random_range(-2.0..2.0)
        } else {
            0.0
        }
    })
}

fn pool(m: &DMatrix<f64>) -> Vec<f64> {
    max_pool(&SparseCodeMatrix::from_dense(m).unwrap(), PoolingMode::Absolute).unwrap()
}

fn criterion_4() -> Outcome {
    let cases = 1000;
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (1usize..12, 1usize..24, any::<u64>());
    let result = runner.run(&strategy, |(rows, cols, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_codes(&mut rng, rows, cols);
        let f = pool(&m);
        let oracle: Vec<f64> = (0..cols)
            .map(|j| m.column(j).iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .collect();
        prop_assert_eq!(&f, &oracle);

        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut rng);
        prop_assert_eq!(pool(&m.select_rows(&order)), f.clone());

        let extra = random_codes(&mut rng, 1, cols);
        let grown = DMatrix::from_fn(rows + 1, cols, |i, j| if i < rows { m[(i, j)] } else { extra[(0, j)] });
        let fg = pool(&grown);
        prop_assert!(fg.iter().zip(&f).all(|(a, b)| a >= b));

        let dominated = DMatrix::from_fn(1, cols, |_, j| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * oracle[j] * rng.random_range(0.0..1.0)
        });
        let at = rng.random_range(0..=rows);
        let with = DMatrix::from_fn(rows + 1, cols, |i, j| match i.cmp(&at) {
            std::cmp::Ordering::Less => m[(i, j)],
            std::cmp::Ordering::Equal => dominated[(0, j)],
            std::cmp::Ordering::Greater => m[(i - 1, j)],
        });
        prop_assert_eq!(pool(&with), f);
        Ok(())
    });
    match result {
        Ok(()) => Outcome::new(true, format!("{cases} cases x 4 properties")),
        Err(e) => Outcome::new(false, format!("{e}")),
    }
}

struct Benchmark {
    clean: Option<(f64, f64, f64)>,
    clean_time: Duration,
    robustness: Option<Vec<sparsescene::pipeline::RobustnessRow>>,
    robustness_time: Duration,
    error: Option<String>,
}

fn run_benchmark(dir: &Path) -> Benchmark {
    let mut out = Benchmark {
        clean: None,
        clean_time: Duration::ZERO,
        robustness: None,
        robustness_time: Duration::ZERO,
        error: None,
    };
    let start = Instant::now();
    let cfg = PipelineConfig::synthetic_benchmark();
    let result = (|| -> sparsescene::Result<()> {
        let ds = generate(&SynthConfig::default())?;
        let source = DataSource::Images(write_synth_dataset(&ds, &dir.join("data"))?);
        let artifacts = dir.join("artifacts");
        let cache = dir.join("cache");
        run_train(&cfg, &source, &artifacts, Some(&cache))?;
        let clean = run_eval(&cfg, &source, &artifacts, Some(&cache), &[])?;
        out.clean = Some((clean.overall, clean.global_only, clean.local_only));
        out.clean_time = start.elapsed();
        let t = Instant::now();
        let report = run_eval(&cfg, &source, &artifacts, Some(&cache), &configured_specs(&cfg)?)?;
        out.robustness = Some(report.robustness);
        out.robustness_time = t.elapsed();
        Ok(())
    })();
    if let Err(e) = result {
        out.error = Some(e.to_string());
    }
    out
}

fn criterion_5(b: &Benchmark) -> Outcome {
    match (b.clean, &b.error) {
        (Some((combined, global, local)), _) => Outcome::new(
            combined >= 0.8 && combined >= global,
            format!(
                "test accuracy combined {:.1}%, global-only {:.1}%, local-only {:.1}% (chance 25%)",
                100.0 * combined,
                100.0 * global,
                100.0 * local
            ),
        ),
        (None, e) => Outcome::new(false, format!("pipeline failed: {e:?}")),
    }
}

fn criterion_6(b: &Benchmark) -> Outcome {
    let Some(rows) = &b.robustness else {
        return Outcome::new(false, format!("pipeline failed: {:?}", b.error));
    };
    let harsh: Vec<_> = rows.iter().filter(|r| r.n == 4).collect();
    let seeds_ok = rows.len() == 8 && rows.iter().all(|r| r.seeds == 5);
    let mean = |f: fn(&sparsescene::pipeline::RobustnessRow) -> f64| harsh.iter().map(|r| f(r)).sum::<f64>() / harsh.len().max(1) as f64;
    let combined = mean(|r| r.combined_drop);
    let global = mean(|r| r.global_only_drop);
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("{} n={} {:+.1}/{:+.1}", r.kind, r.n, -100.0 * r.combined_drop, -100.0 * r.global_only_drop))
        .collect();
    Outcome::new(
        seeds_ok && !harsh.is_empty() && combined <= global,
        format!(
            "n=4 mean drop combined {:.2} pts vs global-only {:.2} pts; [{}]",
            100.0 * combined,
            100.0 * global,
            table.join(", ")
        ),
    )
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn criterion_7(dir: &Path) -> Outcome {
    let mut cfg = PipelineConfig::synthetic_benchmark();
    cfg.dictionary.words = Some(64);
    cfg.dictionary.epochs = 2;
    cfg.dictionary.learn_max_samples = 1000;
    let ds = generate(&SynthConfig {
        train_per_class: 8,
        test_per_class: 4,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let manifest = write_synth_dataset(&ds, &dir.join("data")).unwrap();
    let source = DataSource::Images(manifest.clone());
    let (a, b) = (dir.join("a"), dir.join("b"));
    if let Err(e) = run_train(&cfg, &source, &a, None).and_then(|_| run_train(&cfg, &source, &b, None)) {
        return Outcome::new(false, format!("training failed: {e}"));
    }
    let (fa, fb) = (dir_files(&a), dir_files(&b));
    let identical = fa == fb;

    let mut checked = 0;
    let mut broken = Vec::new();
    for (name, bytes) in &fa {
        let path = a.join(name);
        let same = if name.ends_with(".ssrd") {
            Dictionary::load(&path).map(|(d, fp)| d.to_bytes(&fp) == *bytes)
        } else if name.ends_with(".ssrp") {
            PcaModel::load(&path).map(|(p, fp)| p.to_bytes(&fp) == *bytes)
        } else if name.ends_with(".ssrm") {
            LinearSvmModel::load(&path).map(|(m, fp)| m.to_bytes(&fp) == *bytes)
        } else if name.ends_with(".ssrf") {
            read_feature_file(&path).and_then(|m| encode_feature_matrix(&m)).map(|e| e == *bytes)
        } else if name == "layout.tsv" {
            let text = String::from_utf8_lossy(bytes);
            Layout::from_text(&text).map(|l| l.to_text() == text)
        } else {
            continue;
        };
        checked += 1;
        if !matches!(same, Ok(true)) {
            broken.push(name.clone());
        }
    }
    let features = decode_feature_matrix(&fs::read(a.join(TRAIN_REPR_FILE)).unwrap()).unwrap();
    let (m_text, s_text) = manifest.to_texts();
    let manifest_ok = DatasetManifest::parse(&manifest.root, &m_text, &s_text)
        .map(|m| m.to_texts() == (m_text.clone(), s_text.clone()))
        .unwrap_or(false);
    if !manifest_ok {
        broken.push("manifest".into());
    }
    Outcome::new(
        identical && broken.is_empty() && checked >= 9,
        format!(
            "{} artifact files identical across runs: {identical}; {checked} binary/layout files round-trip, failures {broken:?}; \
             representations {}x{}",
            fa.len(),
            features.nrows(),
            features.ncols()
        ),
    )
}

fn criterion_8() -> Outcome {
    let output = match Command::new(env!("CARGO_BIN_EXE_sparsescene")).args(["inspect", "--defaults"]).output() {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, format!("could not run the binary: {e}")),
    };
    let text = String::from_utf8_lossy(&output.stdout);
    let cfg = match PipelineConfig::from_toml(&text) {
        Ok(c) => c,
        Err(e) => return Outcome::new(false, format!("defaults do not parse: {e}")),
    };
    let presets: Vec<(String, usize)> = text
        .lines()
        .filter_map(|l| l.strip_prefix("# preset "))
        .filter_map(|l| {
            let (name, n) = l.split_once(" = ")?;
            Some((name.to_string(), n.trim().parse().ok()?))
        })
        .collect();
    let expected_presets = [("scene15".to_string(), 2175), ("mit67".to_string(), 3886), ("sun397".to_string(), 6907)];
    let ok = output.status.success()
        && cfg.dictionary.lambda_dl == 0.1
        && cfg.coding.sparsity_fraction == 0.03
        && cfg.scales.divisors == [2, 4]
        && cfg.perturbation.divisors == [10, 8, 6, 4]
        && presets == expected_presets;
    Outcome::new(
        ok,
        format!(
            "lambda_dl {}, sparsity {}, scales {:?}, perturbation {:?}, presets {:?}",
            cfg.dictionary.lambda_dl, cfg.coding.sparsity_fraction, cfg.scales.divisors, cfg.perturbation.divisors, presets
        ),
    )
}

fn report(n: usize, name: &str, limit: Duration, elapsed: Duration, outcome: Outcome) -> bool {
    let in_time = elapsed <= limit;
    let passed = outcome.passed && in_time;
    println!(
        "{} criterion {n} {name}: {} [{:.2}s, limit {}s]",
        if passed { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    passed
}

fn timed(f: impl FnOnce() -> Outcome) -> (Duration, Outcome) {
    let t = Instant::now();
    let o = f();
    (t.elapsed(), o)
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut all = true;

    let (t, o) = timed(criterion_1);
    all &= report(1, "sparsity contract", Duration::from_secs(10), t, o);
    let (t, o) = timed(criterion_2);
    all &= report(2, "OMP oracle equivalence", Duration::from_secs(30), t, o);
    let (t, o) = timed(criterion_3);
    all &= report(3, "dictionary objective monotone", Duration::from_secs(60), t, o);
    let (t, o) = timed(criterion_4);
    all &= report(4, "pooling invariances", Duration::from_secs(10), t, o);

    let bench = run_benchmark(&tmp.path().join("bench"));
    let c5 = criterion_5(&bench);
    all &= report(5, "synthetic benchmark", Duration::from_secs(300), bench.clean_time, c5);
    let c6 = criterion_6(&bench);
    all &= report(
        6,
        "robustness direction",
        Duration::from_secs(600),
        bench.clean_time + bench.robustness_time,
        c6,
    );

    let (t, o) = timed(|| criterion_7(&tmp.path().join("determinism")));
    all &= report(7, "determinism and persistence", Duration::from_secs(60), t, o);
    let (t, o) = timed(criterion_8);
    all &= report(8, "default fidelity", Duration::from_secs(10), t, o);

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    }
}
