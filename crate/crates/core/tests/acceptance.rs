//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its PASS/FAIL line even when all of them pass.

mod common;

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use eeg_vowel::dsp::{self, BandPassSpec};
use eeg_vowel::dtsvm::{self, ClassCentroid, Distance, DistanceMetric, Merge};
use eeg_vowel::eval::{self, NearestCentroid, SplitSpec};
use eeg_vowel::features::{self, FeatureVector, PcaMode, TrialSpectra};
use eeg_vowel::pipeline::{self, ModelFile, Preprocessor};
use eeg_vowel::spectral::periodogram_psd;
use eeg_vowel::svm::{self, KernelSpec, SvmConfig};
use eeg_vowel::synth::{self, SynthSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(t: Instant, budget: Duration) -> Result<(), String> {
    let e = t.elapsed();
    check(e < budget, format!("took {e:.1?}, budget {budget:?}"))
}

/// Spectra of the default synthetic corpus, shared by several criteria.
fn default_spectra() -> &'static Vec<TrialSpectra> {
    static S: OnceLock<Vec<TrialSpectra>> = OnceLock::new();
    S.get_or_init(|| corpus_spectra(&SynthSpec::default()).expect("default corpus"))
}

fn corpus_spectra(spec: &SynthSpec) -> Result<Vec<TrialSpectra>, String> {
    let pre = Preprocessor::new(BandPassSpec::default()).map_err(|e| e.to_string())?;
    let sessions = synth::generate_corpus(spec).map_err(|e| e.to_string())?;
    pipeline::spectra_from_sessions(&sessions, &pre).map_err(|e| e.to_string())
}

fn train_default(spectra: &[TrialSpectra], metric: DistanceMetric) -> Result<pipeline::TrainOutcome, String> {
    pipeline::train(
        spectra,
        BandPassSpec::default(),
        &SplitSpec::default(),
        metric,
        &SvmConfig::default(),
    )
    .map_err(|e| e.to_string())
}

fn spectral_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_bin = 0.0f64;
    let mut worst_parseval = 0.0f64;
    for i in 0..200 {
        let n = if i % 2 == 0 { 64 } else { 1000 };
        let fs = rng.random_range(50.0..1000.0);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let psd = periodogram_psd(&x, fs).map_err(|e| e.to_string())?;
        let oracle = common::dft_periodogram(&x, fs);
        check(psd.power.len() == oracle.len(), "bin count differs from oracle")?;
        for (p, q) in psd.power.iter().zip(&oracle) {
            worst_bin = worst_bin.max((p - q).abs() / q.abs().max(f64::MIN_POSITIVE));
        }
        let mean_power = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        worst_parseval = worst_parseval.max((psd.total_power() - mean_power).abs() / mean_power);
    }
    check(worst_bin <= 1e-9, format!("bin relative error {worst_bin:e}"))?;
    check(worst_parseval <= 1e-9, format!("Parseval relative error {worst_parseval:e}"))?;
    within(t, Duration::from_secs(10))?;
    Ok(format!("max bin rel err {worst_bin:.1e}, Parseval {worst_parseval:.1e}"))
}

fn filter_response() -> Outcome {
    let t = Instant::now();
    let spec = BandPassSpec::default();
    let f = dsp::design_bandpass(&spec).map_err(|e| e.to_string())?;
    let db = |hz: f64| f.magnitude_db(hz, spec.sample_rate_hz);
    for hz in [2.0, 50.0] {
        check((db(hz) + 3.0).abs() <= 0.5, format!("{hz} Hz at {:.3} dB", db(hz)))?;
    }
    for hz in [0.5, 100.0] {
        check(db(hz) <= -20.0, format!("{hz} Hz only {:.2} dB down", -db(hz)))?;
    }
    for hz in [10.0, 25.0, 40.0] {
        check(db(hz).abs() <= 1.0, format!("{hz} Hz ripple {:.3} dB", db(hz)))?;
    }
    within(t, Duration::from_secs(1))?;
    Ok(format!(
        "cutoffs {:.2}/{:.2} dB, stop {:.1}/{:.1} dB",
        db(2.0),
        db(50.0),
        db(0.5),
        db(100.0)
    ))
}

fn pca_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let dim = rng.random_range(2..=60);
        let n = rng.random_range(dim + 2..=200);
        // Distinct column scales keep the spectrum well separated.
        let scale: Vec<f64> = (0..dim).map(|j| 1.0 + j as f64 * 0.5).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|j| scale[j] * Distribution::<f64>::sample(&StandardNormal, &mut rng) + 3.0)
                    .collect()
            })
            .collect();
        let m = Array2::from_shape_fn((n, dim), |(i, j)| rows[i][j]);
        let model = features::pca_fit(&m, dim).map_err(|e| e.to_string())?;
        let (_, vectors) = common::jacobi_eigen(&common::covariance(&rows));
        for (got, want) in model.components.iter().zip(&vectors) {
            let dot: f64 = got.iter().zip(want).map(|(a, b)| a * b).sum();
            let s = dot.signum();
            for (a, b) in got.iter().zip(want) {
                worst = worst.max((a - s * b).abs());
            }
        }
        for w in model.explained_variance_ratio.windows(2) {
            check(w[0] >= w[1], "explained-variance ratios increase")?;
        }
        for (i, a) in model.components.iter().enumerate() {
            for (j, b) in model.components.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                let e = (d - (i == j) as u8 as f64).abs();
                check(e <= 1e-9, format!("axes {i},{j} off orthonormal by {e:e}"))?;
            }
        }
    }
    check(worst <= 1e-6, format!("component mismatch {worst:e}"))?;
    within(t, Duration::from_secs(10))?;
    Ok(format!("max component deviation {worst:.1e}"))
}

fn svm_kkt() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_kkt = 0.0f64;
    let mut worst_eq = 0.0f64;
    let mut record = |model: &svm::BinarySvmModel| {
        let s: f64 = model.dual_coefs.iter().sum();
        worst_eq = worst_eq.max(s.abs() / model.c_penalty);
    };
    for _ in 0..20 {
        let n = rng.random_range(20..=200);
        let dim = rng.random_range(2..=8);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut y: Vec<i8> = x
            .iter()
            .map(|r| if r[0] * r[0] + r[1] - 1.0 > 0.0 { 1 } else { -1 })
            .collect();
        for v in y.iter_mut() {
            if rng.random_bool(0.1) {
                *v = -*v;
            }
        }
        y[0] = 1;
        y[1] = -1;
        let c = rng.random_range(0.1..10.0);
        let k = KernelSpec::new(rng.random_range(0.3..3.0)).map_err(|e| e.to_string())?;
        let model = svm::smo_train(&x, &y, c, k, 1e-3, 1_000_000).map_err(|e| e.to_string())?;
        check(model.converged, "solver hit the iteration cap")?;
        worst_kkt = worst_kkt.max(common::kkt_violation(&model, &x, &y));
        record(&model);
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..200 {
        let a: f64 = rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let b: f64 = rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        x.push(vec![a, b]);
        y.push(if a * b > 0.0 { 1i8 } else { -1 });
    }
    let k = KernelSpec::new(0.5).map_err(|e| e.to_string())?;
    let xor = svm::smo_train(&x, &y, 100.0, k, 1e-3, 1_000_000).map_err(|e| e.to_string())?;
    let mut errors = 0;
    for (r, &l) in x.iter().zip(&y) {
        errors += (svm::svm_predict(&xor, r).map_err(|e| e.to_string())? != l) as usize;
    }
    record(&xor);

    check(worst_kkt <= 1e-3, format!("KKT violation {worst_kkt:e}"))?;
    check(errors == 0, format!("XOR training errors {errors}"))?;
    check(worst_eq <= 1e-6, format!("|sum a_i y_i| / C = {worst_eq:e}"))?;
    within(t, Duration::from_secs(30))?;
    Ok(format!("max KKT violation {worst_kkt:.1e}, XOR errors 0, equality {worst_eq:.1e}"))
}

fn dendrogram_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut ties = 0;
    for case in 0..100 {
        let k = rng.random_range(2..=6);
        let dim = rng.random_range(1..=3);
        // Small integer grids produce many equal pairwise distances.
        let span = if case % 2 == 0 { 2 } else { 10 };
        let centroids: Vec<ClassCentroid> = (0..k)
            .map(|i| ClassCentroid {
                class_id: i as u8 + 1,
                centroid: (0..dim).map(|_| rng.random_range(-span..=span) as f64).collect(),
                count: rng.random_range(1..=4),
            })
            .collect();
        let mut d = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                let v: f64 = centroids[i].centroid.iter().zip(&centroids[j].centroid).map(|(a, b)| (a - b) * (a - b)).sum();
                d.push(v);
            }
        }
        d.sort_by(f64::total_cmp);
        ties += d.windows(2).any(|w| w[0] == w[1]) as usize;
        let got = dtsvm::build_dendrogram(&centroids, &Distance::Euclidean).map_err(|e| e.to_string())?;
        let want = common::dendrogram_oracle(&centroids);
        check(got.merges == want, format!("case {case}: {got} vs oracle"))?;
    }
    check(ties >= 10, format!("only {ties} sets had duplicated distances"))?;
    within(t, Duration::from_secs(5))?;
    Ok(format!("100 sets equal to oracle, {ties} with duplicated distances"))
}

fn reported_merge_list() -> Outcome {
    let t = Instant::now();
    let positions = [(1, 3.2), (2, 0.0), (3, 1.0), (4, 10.0), (5, 10.6)];
    let centroids: Vec<ClassCentroid> = positions
        .iter()
        .map(|&(id, x)| ClassCentroid {
            class_id: id,
            centroid: vec![x, 0.5 * x],
            count: 140,
        })
        .collect();
    let got = dtsvm::build_dendrogram(&centroids, &Distance::Euclidean).map_err(|e| e.to_string())?;
    let m = |a: &[u8], b: &[u8]| Merge {
        group_a: a.to_vec(),
        group_b: b.to_vec(),
    };
    let want = vec![
        m(&[4], &[5]),
        m(&[2], &[3]),
        m(&[2, 3], &[1]),
        m(&[1, 2, 3], &[4, 5]),
    ];
    check(got.merges == want, format!("got {got}"))?;
    within(t, Duration::from_secs(1))?;
    Ok(format!("L = {got}"))
}

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let spectra = default_spectra();
    let out = train_default(spectra, DistanceMetric::Euclidean)?;
    let s = &out.split;
    check(
        (s.train.len(), s.test.len(), s.test_like.len()) == (700, 100, 200),
        format!("split sizes {}/{}/{}", s.train.len(), s.test.len(), s.test_like.len()),
    )?;
    let nc = NearestCentroid::fit(&s.train).map_err(|e| e.to_string())?;
    let nc_acc = 1.0 - eval::test_like_error(&nc, &s.test).map_err(|e| e.to_string())?;
    check((0.4..=0.6).contains(&nc_acc), format!("centroid baseline accuracy {nc_acc:.3}"))?;
    let err = eval::test_like_error(&out.model.model, &s.test_like).map_err(|e| e.to_string())?;
    check(err <= 0.25, format!("test-like error {err:.3}"))?;
    within(t, Duration::from_secs(300))?;
    Ok(format!(
        "noise_sigma {}, baseline acc {nc_acc:.3}, test-like error {err:.3}, sizes 700/100/200",
        SynthSpec::default().noise_sigma
    ))
}

fn separability() -> Outcome {
    let t = Instant::now();
    let grid = [0.5, 3.0, 20.0];
    let mut acc = Vec::new();
    for &noise in &grid {
        let spec = SynthSpec {
            noise_sigma: noise,
            ..SynthSpec::default()
        };
        let owned;
        let spectra = if spec == SynthSpec::default() {
            default_spectra()
        } else {
            owned = corpus_spectra(&spec)?;
            &owned
        };
        let out = train_default(spectra, DistanceMetric::Euclidean)?;
        let err = eval::test_like_error(&out.model.model, &out.split.test).map_err(|e| e.to_string())?;
        acc.push(1.0 - err);
    }
    let text = format!("accuracy {:.3}/{:.3}/{:.3} at noise {:?}", acc[0], acc[1], acc[2], grid);
    check(acc.windows(2).all(|w| w[0] >= w[1]), format!("not monotone: {text}"))?;
    check(acc[0] >= 0.95, format!("low-noise too weak: {text}"))?;
    check((0.1..=0.3).contains(&acc[2]), format!("high-noise off chance: {text}"))?;
    within(t, Duration::from_secs(600))?;
    Ok(text)
}

fn all_trial_features(file: &ModelFile, spectra: &[TrialSpectra]) -> Result<Vec<FeatureVector>, String> {
    features::assemble_from_spectra(spectra, PcaMode::Reuse(&file.model.pca_models))
        .map(|(f, _)| f)
        .map_err(|e| e.to_string())
}

fn report_hash(spectra: &[TrialSpectra]) -> Result<String, String> {
    let out = train_default(spectra, DistanceMetric::Euclidean)?;
    let (report, meta) = pipeline::evaluate(&out.model, spectra, &SplitSpec::default()).map_err(|e| e.to_string())?;
    Ok(eval::sha256_hex(eval::render_text(&report, &meta).as_bytes()))
}

fn determinism() -> Outcome {
    let t = Instant::now();
    let spectra = default_spectra();
    let out = train_default(spectra, DistanceMetric::Euclidean)?;
    let restored = ModelFile::from_json(&out.model.to_json()).map_err(|e| e.to_string())?;
    let a = all_trial_features(&out.model, spectra)?;
    let b = all_trial_features(&restored, spectra)?;
    check(a.len() == 1000, format!("{} trials", a.len()))?;
    for (fa, fb) in a.iter().zip(&b) {
        check(
            fa.values.iter().map(|v| v.to_bits()).eq(fb.values.iter().map(|v| v.to_bits())),
            "restored projection differs",
        )?;
        let pa = dtsvm::predict_with_trace(&out.model.model, &fa.values).map_err(|e| e.to_string())?;
        let pb = dtsvm::predict_with_trace(&restored.model, &fb.values).map_err(|e| e.to_string())?;
        let bits = |p: &dtsvm::Prediction| -> Vec<u64> { p.path.iter().map(|s| s.decision_value.to_bits()).collect() };
        check(pa.label == pb.label && bits(&pa) == bits(&pb), "restored prediction differs")?;
    }
    let first = report_hash(spectra)?;
    let regenerated = corpus_spectra(&SynthSpec::default())?;
    let second = report_hash(&regenerated)?;
    check(first == second, format!("report hashes {first} vs {second}"))?;
    within(t, Duration::from_secs(300))?;
    Ok(format!("1000 predictions bit-identical, report sha256 {}", &first[..16]))
}

fn evaluation_identities() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut features = Vec::new();
    for subject in 1..=20u32 {
        for label in 1..=5u8 {
            for trial in 1..=10u8 {
                features.push(FeatureVector {
                    values: (0..4).map(|j| rng.random_range(-1.5..1.5) + (j == (label as usize % 4)) as u8 as f64).collect(),
                    label,
                    subject_id: subject,
                    trial_index: trial,
                });
            }
        }
    }
    let spec = SplitSpec::default();
    let split = eval::split_protocol(&features, &spec).map_err(|e| e.to_string())?;
    check(split.test_like.len() == 2 * split.m(), format!("|S*| = {} with m = {}", split.test_like.len(), split.m()))?;
    let model = NearestCentroid::fit(&split.train).map_err(|e| e.to_string())?;
    let err = eval::test_like_error(&model, &split.test_like).map_err(|e| e.to_string())?;
    let report = eval::confusion_matrix(&model, &split.test_like, 5, split.m(), split.n_prime()).map_err(|e| e.to_string())?;
    let total: usize = report.counts.iter().flatten().sum();
    let right: usize = (0..5).map(|i| report.counts[i][i]).sum();
    let from_counts = (total - right) as f64 / total as f64;
    check(err == from_counts && err == report.overall_error, format!("{err} vs {from_counts}"))?;
    check((report.weighted_diagonal_error() - err).abs() <= 1e-12, "weighted diagonal disagrees")?;

    let pure_spec = SplitSpec { n_prime: 0, ..spec };
    let pure = eval::split_protocol(&features, &pure_spec).map_err(|e| e.to_string())?;
    check(pure.test_like == pure.test, "n' = 0 keeps resubstitution vectors")?;
    let e0 = eval::test_like_error(&model, &pure.test_like).map_err(|e| e.to_string())?;
    let pure_err = eval::test_like_error(&model, &split.test).map_err(|e| e.to_string())?;
    check(e0 == pure_err, format!("n' = 0 gives {e0}, pure test {pure_err}"))?;
    within(t, Duration::from_secs(1))?;
    Ok(format!("error {err:.3} from counts exact, n'=0 -> {pure_err:.3}, |S*| = 2m = {}", split.test_like.len()))
}

fn valid_dendrogram(tree: &dtsvm::Dendrogram) -> bool {
    let mut groups: Vec<Vec<u8>> = (1..=5).map(|c| vec![c]).collect();
    for m in &tree.merges {
        let (Some(a), Some(b)) = (
            groups.iter().position(|g| g == &m.group_a),
            groups.iter().position(|g| g == &m.group_b),
        ) else {
            return false;
        };
        let (ga, gb) = (groups[a].clone(), groups[b].clone());
        groups.retain(|g| g != &ga && g != &gb);
        groups.push(m.union());
    }
    tree.merges.len() == 4 && groups == vec![vec![1, 2, 3, 4, 5]]
}

fn metric_machinery() -> Outcome {
    let t = Instant::now();
    let spectra = default_spectra();
    let (split, _) = pipeline::fit_features(spectra, &SplitSpec::default()).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = split.train.iter().map(|f| f.values.clone()).collect();
    let centroids = dtsvm::class_centroids(&split.train).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for metric in DistanceMetric::ALL {
        let d = Distance::for_metric(metric, &rows).map_err(|e| e.to_string())?;
        let tree = dtsvm::build_dendrogram(&centroids, &d).map_err(|e| e.to_string())?;
        check(valid_dendrogram(&tree), format!("{metric}: invalid {tree}"))?;
        trees.push(format!("{metric} {tree}"));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    synth::write_corpus(&SynthSpec::default(), &corpus).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_eeg-vowel"))
        .env_remove("EEG_VOWEL_SEED")
        .args(["report", "--data-dir", s(&corpus), "--output-dir", s(&out)])
        .output()
        .map_err(|e| e.to_string())?;
    check(o.status.success(), format!("report failed: {}", String::from_utf8_lossy(&o.stderr)))?;
    for metric in DistanceMetric::ALL {
        let txt = out.join(format!("report_{metric}.txt"));
        let json = out.join(format!("report_{metric}.json"));
        check(txt.is_file() && json.is_file(), format!("missing report pair for {metric}"))?;
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&json).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        check(v["report"]["confusion"].as_array().map(Vec::len) == Some(5), format!("{metric}: bad confusion"))?;
    }
    within(t, Duration::from_secs(600))?;
    Ok(trees.join("; "))
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("spectral oracle", spectral_oracle),
        ("filter response", filter_response),
        ("pca oracle", pca_oracle),
        ("svm kkt suite", svm_kkt),
        ("dendrogram oracle", dendrogram_oracle),
        ("reported merge list", reported_merge_list),
        ("end-to-end synthetic target", end_to_end),
        ("separability monotonicity", separability),
        ("determinism and round-trip", determinism),
        ("evaluation identities", evaluation_identities),
        ("metric machinery", metric_machinery),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = run();
        let took = t.elapsed();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({took:.1?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({took:.1?}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
