//! Acceptance criteria, one line per criterion.
//!
//! Runs as a plain binary so every verdict is printed even when all pass.
//! Exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use ctxnorm_core::attention::balance_score;
use ctxnorm_core::harness::{arrange_documents, read_report, write_report, ReportFile};
use ctxnorm_core::{
    apply_format_style, attention_balance_score, calibrate, normalize_document, pearson,
    run_cnorm_pipeline, run_permutation_experiment, run_tokenization_study, segment_sentences,
    AttentionVector, Backend, CalibrationOptions, Dataset, Delimiter, Document, FormatConfig,
    FormatStyle, HexString, MockBackend, MockModelConfig, PermutationPlan, QaSample,
    RecordingBackend, ReplayBackend, RunOptions, ZoneWeights, DEFAULT_DELIMITERS,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn abs_suite() -> Outcome {
    for len in [2usize, 3, 10, 1000] {
        let r = balance_score(&vec![1.0; len]).map_err(|e| e.to_string())?;
        check(close(r.score, 1.0, 1e-12), || format!("uniform T={len}: score {}", r.score))?;
    }
    for (hot, mu) in [(0usize, 0.0), (9, 1.0)] {
        let mut w = vec![0.0; 10];
        w[hot] = 1.0;
        let r = balance_score(&w).map_err(|e| e.to_string())?;
        check(close(r.score, 0.0, 1e-12) && close(r.mu, mu, 1e-12), || {
            format!("one-hot at {hot}: {r:?}")
        })?;
    }
    let r = balance_score(&[1.0, 3.0]).map_err(|e| e.to_string())?;
    check(r.mu == 0.75 && r.score == 0.5, || format!("[1,3]: {r:?}"))?;

    let mut runner = TestRunner::new(Config {
        cases: 1000,
        ..Config::default()
    });
    let strategy = (
        proptest::collection::vec(0.0f64..100.0, 2..64).prop_filter("positive mass", |w| {
            w.iter().sum::<f64>() > 1e-6
        }),
        1e-3f64..1e3,
    );
    runner
        .run(&strategy, |(w, c)| {
            let base = balance_score(&w).unwrap();
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            let s = balance_score(&scaled).unwrap();
            prop_assert!((base.score - s.score).abs() <= 1e-12);
            let reversed: Vec<f64> = w.iter().rev().copied().collect();
            let r = balance_score(&reversed).unwrap();
            prop_assert!((r.mu - (1.0 - base.mu)).abs() <= 1e-12);
            prop_assert!((r.score - base.score).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&base.score));
            prop_assert_eq!(base.score, 1.0 - 2.0 * (base.mu - 0.5).abs());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("uniform/one-hot/[1,3] fixtures; 1000 scale+reflection cases".into())
}

fn format_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let styles = [
        FormatStyle::Uuid,
        FormatStyle::PlainText,
        FormatStyle::modified('&').map_err(|e| e.to_string())?,
    ];
    for i in 0..1000 {
        let len = if i % 2 == 0 { 32 } else { 4 * rng.random_range(2..40) };
        let hex = HexString::random(&mut rng, len);
        for style in styles {
            let out = apply_format_style(&hex, style).map_err(|e| e.to_string())?;
            let stripped: String = out.chars().filter(|c| c.is_ascii_hexdigit()).collect();
            check(stripped == hex.as_str(), || format!("{hex:?} via {style:?} gave {out}"))?;
            if len == 32 && style != FormatStyle::PlainText {
                check(out.chars().count() == 36, || format!("{out} is not 36 chars"))?;
            }
        }
    }
    Ok("1000 strings x 3 styles".into())
}

fn normalizer_corpus() -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    (0..200)
        .map(|i| {
            let sentences = rng.random_range(1..9);
            let mut text = String::new();
            for s in 0..sentences {
                if s > 0 {
                    text.push_str(if rng.random_bool(0.3) { "  " } else { " " });
                }
                let words = rng.random_range(1..15);
                for w in 0..words {
                    if w > 0 {
                        text.push_str(if rng.random_bool(0.1) { " \t " } else { " " });
                    }
                    let len = rng.random_range(1..9);
                    text.extend((0..len).map(|_| rng.random_range(b'a'..=b'z') as char));
                }
                text.push(['.', '!', '?'][rng.random_range(0..3)]);
            }
            Document {
                id: format!("doc-{i}"),
                text,
                is_gold: false,
            }
        })
        .collect()
}

fn normalizer_laws() -> Outcome {
    let corpus = normalizer_corpus();
    let mut checked = 0;
    for doc in &corpus {
        let n = segment_sentences(&doc.text).len();
        let none = normalize_document(doc, &FormatConfig::none(), 3);
        check(none.text == doc.text, || format!("{}: none changed the text", doc.id))?;
        for delimiter in DEFAULT_DELIMITERS {
            for p in [0.0, 0.25, 0.5, 1.0] {
                let cfg = FormatConfig::new(delimiter, p).map_err(|e| e.to_string())?;
                let out = normalize_document(doc, &cfg, 3);
                check(out == normalize_document(doc, &cfg, 3), || {
                    format!("{}: non-deterministic at {cfg:?}", doc.id)
                })?;
                let expected = if delimiter == Delimiter::None {
                    0
                } else {
                    (p * n as f64).ceil() as usize
                };
                check(out.reformatted_indices.len() == expected, || {
                    format!(
                        "{}: {} sentences rewritten, expected ceil({p}*{n})={expected}",
                        doc.id,
                        out.reformatted_indices.len()
                    )
                })?;
                let reverted = out.revert_delimiters();
                check(
                    reverted.split_whitespace().eq(doc.text.split_whitespace()),
                    || format!("{}: content changed under {cfg:?}", doc.id),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (document, delimiter, ratio) cases"))
}

/// Correctness bit of one cell recomputed from the mock definition.
fn oracle_bit(sample: &QaSample, position: usize, seed: u64, profile: ZoneWeights, tau: f64) -> bool {
    let docs = arrange_documents(sample, position, seed).unwrap();
    let mut text = String::from(
        "Write a high-quality answer for the given question using only the provided search \
         results (some of which might be irrelevant).\n\n",
    );
    let mut gold = 0..0;
    for (k, doc) in docs.iter().enumerate() {
        if k > 0 {
            text.push('\n');
        }
        text.push_str(&format!("Document [{}]: ", k + 1));
        let start = text.split_whitespace().count();
        text.push_str(&doc.text);
        if doc.is_gold {
            gold = start..text.split_whitespace().count();
        }
    }
    text.push_str(&format!("\n\nQuestion: {}\nAnswer:", sample.question));
    let len = text.split_whitespace().count();
    let last = (len - 1) as f64;
    let zone = |t: usize| {
        let x = t as f64 / last;
        if x < 0.2 {
            profile.start
        } else if x < 0.8 {
            profile.mid
        } else {
            profile.end
        }
    };
    let total: f64 = (0..len).map(zone).sum();
    let mass: f64 = gold.map(zone).sum::<f64>() / total;
    mass >= tau
}

fn oracle_equivalence() -> Outcome {
    let samples = common::qa_corpus(50, 10, 1);
    let dataset = Dataset::from_qa(samples.clone()).map_err(|e| e.to_string())?;
    let plan = PermutationPlan::all_positions(10, vec![0, 1, 2]);
    let mut report = Vec::new();
    for (name, profile, oaa, opa) in [
        ("uniform", ZoneWeights::UNIFORM, 1.0, 1.0),
        ("u-shaped", ZoneWeights::U_SHAPED, 0.4, 1.0),
    ] {
        let backend = MockBackend::new(MockModelConfig {
            default_profile: profile,
            threshold: 0.05,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let result =
            run_permutation_experiment(&dataset, &backend, &FormatConfig::none(), &plan, &RunOptions::default())
                .map_err(|e| e.to_string())?;
        check(result.cells.len() == 50 * 10 * 3, || format!("{} cells", result.cells.len()))?;
        let by_id: std::collections::HashMap<&str, &QaSample> =
            samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let mut mismatches = 0;
        for cell in &result.cells {
            let expected = oracle_bit(by_id[cell.sample_id.as_str()], cell.position, cell.seed, profile, 0.05);
            if expected != cell.correct {
                mismatches += 1;
            }
        }
        check(mismatches == 0, || format!("{name}: {mismatches} bits differ from the oracle"))?;
        check(close(result.summary.oaa, oaa, 1e-12) && close(result.summary.opa, opa, 1e-12), || {
            format!("{name}: OAA {} OPA {}, expected {oaa}/{opa}", result.summary.oaa, result.summary.opa)
        })?;
        report.push(format!("{name} OAA={} OPA={}", result.summary.oaa, result.summary.opa));
    }
    Ok(format!("1500 cells per profile match; {}", report.join(", ")))
}

fn cnorm_candidates() -> Vec<FormatConfig> {
    [Delimiter::None, Delimiter::Char('&'), Delimiter::Char('-')]
        .into_iter()
        .map(|d| FormatConfig::new(d, 0.5).unwrap())
        .collect()
}

fn cnorm_backend(other: ZoneWeights) -> Result<MockBackend, String> {
    MockBackend::new(
        MockModelConfig::default()
            .with_profile("-", ZoneWeights::UNIFORM)
            .with_profile("&", other)
            .with_profile("none", other),
    )
    .map_err(|e| e.to_string())
}

fn mean_abs(report: &ctxnorm_core::CalibrationReport, d: Delimiter) -> f64 {
    report
        .candidates
        .iter()
        .find(|c| c.format.delimiter == d)
        .map_or(f64::NAN, |c| c.mean_abs)
}

/// The lost-in-the-middle profile here is end-heavy: a mirror-symmetric U
/// has its attention centroid exactly at the middle, so its balance score
/// ties the uniform profile's and cannot be told apart by selection.
fn cnorm_improvement() -> Outcome {
    let dataset = common::qa_dataset(50, 10, 1);
    let plan = PermutationPlan::all_positions(10, vec![0, 1, 2]);
    let opts = RunOptions::default();
    let backend = cnorm_backend(ZoneWeights::new(1.0, 0.0, 2.0))?;
    for s in 1..=10 {
        let calib = CalibrationOptions {
            sample_count: s,
            seed: 11,
            ..Default::default()
        };
        let report = calibrate(&dataset, &backend, &cnorm_candidates(), &calib, &opts)
            .map_err(|e| e.to_string())?;
        check(report.selected.delimiter == Delimiter::Char('-'), || {
            format!("S={s}: selected {}", report.selected.delimiter)
        })?;
    }
    let outcome = run_cnorm_pipeline(
        &dataset,
        &backend,
        &cnorm_candidates(),
        &CalibrationOptions::default(),
        &plan,
        &opts,
    )
    .map_err(|e| e.to_string())?;
    let gain = outcome.oaa_gain();
    check(outcome.result.summary.oaa > outcome.baseline.summary.oaa, || {
        format!("no improvement: {:?}", outcome.baseline.summary)
    })?;
    check(close(gain, 0.6, 1e-12), || format!("margin {gain}, expected 0.6"))?;
    let abs_gap = mean_abs(&outcome.calibration, Delimiter::Char('-'))
        - mean_abs(&outcome.calibration, Delimiter::None);

    let symmetric = calibrate(
        &dataset,
        &cnorm_backend(ZoneWeights::U_SHAPED)?,
        &cnorm_candidates(),
        &CalibrationOptions::default(),
        &opts,
    )
    .map_err(|e| e.to_string())?;
    let symmetric_gap = mean_abs(&symmetric, Delimiter::Char('-')) - mean_abs(&symmetric, Delimiter::None);
    Ok(format!(
        "'-' selected for S=1..10, ABS gap {abs_gap:.3}, OAA {:.1} vs {:.1} (gain {gain:.1}); \
         symmetric U ties at gap {symmetric_gap:.1e} and selects {}",
        outcome.result.summary.oaa, outcome.baseline.summary.oaa, symmetric.selected.delimiter
    ))
}

fn pearson_and_tok_study() -> Outcome {
    let fixtures: [(&[f64], &[f64], f64); 3] = [
        (&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], 1.0),
        (&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0], -1.0),
        (&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0], 9.0 / 84f64.sqrt()),
    ];
    for (x, y, r) in fixtures {
        let got = pearson(x, y).map_err(|e| e.to_string())?;
        check(close(got, r, 1e-9), || format!("pearson({x:?}, {y:?}) = {got}, expected {r}"))?;
    }

    let dataset = common::qa_dataset(10, 10, 5);
    let backend = MockBackend::new(MockModelConfig {
        splitting_delimiters: vec!['&'],
        ..MockModelConfig::default()
            .with_profile("&", ZoneWeights::U_SHAPED)
            .with_profile("none", ZoneWeights::new(1.0, 0.5, 1.0))
    })
    .map_err(|e| e.to_string())?;
    let plan = PermutationPlan::all_positions(10, vec![0]);
    let delimiters = [Delimiter::None, Delimiter::Char('-'), Delimiter::Char('&')];
    let report = run_tokenization_study(&dataset, &backend, &delimiters, 0.5, &plan, &RunOptions::default())
        .map_err(|e| e.to_string())?;
    check(report.pearson_r.is_finite() && report.rows.len() == 3, || format!("{report:?}"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("tok.json");
    write_report(&path, &report, false).map_err(|e| e.to_string())?;
    match read_report(&path).map_err(|e| e.to_string())? {
        ReportFile::Tokenization(back) => check(back == report, || "report did not round-trip".into())?,
        other => return Err(format!("read back as {other:?}")),
    }
    Ok(format!("fixtures within 1e-9; study r = {:.4}", report.pearson_r))
}

fn replay_reproduces_live_run() -> Outcome {
    let dataset = common::qa_dataset(8, 10, 3);
    let plan = PermutationPlan::all_positions(10, vec![0, 1]);
    let opts = RunOptions::default();
    let format = FormatConfig::new(Delimiter::Char(':'), 0.5).map_err(|e| e.to_string())?;
    let live = RecordingBackend::new(
        MockBackend::new(MockModelConfig {
            default_profile: ZoneWeights::U_SHAPED,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?,
    );
    let first = run_permutation_experiment(&dataset, &live, &format, &plan, &opts).map_err(|e| e.to_string())?;
    let calib_first = calibrate(&dataset, &live, &cnorm_candidates(), &CalibrationOptions::default(), &opts)
        .map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trace = live.write_trace(dir.path().join("trace.jsonl")).map_err(|e| e.to_string())?;
    let replay = ReplayBackend::from_file(&trace).map_err(|e| e.to_string())?;
    let second = run_permutation_experiment(&dataset, &replay, &format, &plan, &opts).map_err(|e| e.to_string())?;
    let calib_second = calibrate(&dataset, &replay, &cnorm_candidates(), &CalibrationOptions::default(), &opts)
        .map_err(|e| e.to_string())?;

    let strip = |mut r: ctxnorm_core::ExperimentResult| {
        r.config.backend_id.clear();
        serde_json::to_string_pretty(&r).unwrap()
    };
    check(strip(first.clone()) == strip(second), || "replayed result differs".into())?;
    let strip_calib = |mut r: ctxnorm_core::CalibrationReport| {
        r.backend_id.clear();
        serde_json::to_string_pretty(&r).unwrap()
    };
    check(strip_calib(calib_first) == strip_calib(calib_second), || {
        "replayed calibration differs".into()
    })?;
    check(replay.id().starts_with("replay:"), || replay.id())?;
    Ok(format!(
        "{} cells and calibration byte-identical after replay (OAA {})",
        first.cells.len(),
        first.summary.oaa
    ))
}

fn attention_vector_api() -> Outcome {
    let a = AttentionVector::new("p", "-", vec![1.0, 3.0]).map_err(|e| e.to_string())?;
    let r = attention_balance_score(&a).map_err(|e| e.to_string())?;
    check(r.score == 0.5, || format!("{r:?}"))?;
    for bad in [vec![1.0], vec![0.0, 0.0], vec![1.0, -1.0]] {
        check(AttentionVector::new("p", "-", bad.clone()).is_err(), || format!("{bad:?} accepted"))?;
    }
    Ok("validation rejects T<2, zero mass, negative weights".into())
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("abs-unit-suite", abs_suite, Duration::from_secs(1)),
        ("attention-vector-contract", attention_vector_api, Duration::from_secs(1)),
        ("format-round-trip", format_round_trip, Duration::from_secs(1)),
        ("normalizer-laws", normalizer_laws, Duration::from_secs(30)),
        ("oracle-equivalence", oracle_equivalence, Duration::from_secs(30)),
        ("cnorm-improvement", cnorm_improvement, Duration::from_secs(60)),
        ("pearson-and-tokenization-study", pearson_and_tok_study, Duration::from_secs(30)),
        ("replay-reproduces-live-run", replay_reproduces_live_run, Duration::from_secs(30)),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let started = Instant::now();
        let outcome = run();
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
