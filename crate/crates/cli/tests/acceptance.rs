//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always show.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use surveysig::dataset::SurveyDataset;
use surveysig::detector::parse_detector_output;
use surveysig::gateway::mock::{HashEmbedder, MockChatProvider};
use surveysig::gateway::{EmbeddingProvider, Gateway};
use surveysig::model::{Cohort, QuestionKind, SurveyQuestion, SurveyResponse, SurveyStudy, VerdictFlag};
use surveysig::pipeline::{score_dataset, ScoreOptions};
use surveysig::report::{
    average_pooled, average_unweighted, threshold_sweep, Percentage, StrategyScores, StudyColumn, SweepOptions,
};
use surveysig::signature::{
    dedupe_signatures, generate_signatures, GridDescriptor, PromptStrategy, Signature, SignatureSet, StrategyKind,
    DEFAULT_MODELS, DEFAULT_SENTIMENTS, DEFAULT_TEMPERATURES,
};
use surveysig::similarity::{cosine, ResponseFlag, ScoredResponse, DEFAULT_THRESHOLDS};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------------------

fn similarity_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let pairs = 10_000;
    for i in 0..pairs {
        let dim = rng.gen_range(2..=512);
        let scale_a = 10f64.powi(rng.gen_range(-3..=3));
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0) * scale_a).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ab = cosine(&a, &b).map_err(|e| format!("pair {i}: {e}"))?;
        let ba = cosine(&b, &a).map_err(|e| format!("pair {i}: {e}"))?;
        check(ab.abs() <= 1.0 + 1e-9, || format!("pair {i}: |cos| = {ab}"))?;
        check(ab.to_bits() == ba.to_bits(), || format!("pair {i}: asymmetric {ab} vs {ba}"))?;
        let c: f64 = rng.gen_range(1e-3..1e3);
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        let sc = cosine(&scaled, &b).map_err(|e| e.to_string())?;
        check((sc - ab).abs() <= 1e-12, || format!("pair {i}: scale {c} moved cos by {}", sc - ab))?;
        let selfsim = cosine(&a, &a).map_err(|e| e.to_string())?;
        check((selfsim - 1.0).abs() <= 1e-12, || format!("pair {i}: self-similarity {selfsim}"))?;
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("{pairs} pairs, dims 2-512, {:.2}s", took.as_secs_f64()))
}

// ---------------------------------------------------------------------------

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

const WORDS: &[&str] = &[
    "price", "location", "staff", "clean", "app", "battery", "easy", "slow", "friendly", "cheap", "delivery",
    "quality", "time", "family", "work", "fun", "safe", "quiet", "fast", "reliable",
];

fn random_text(rng: &mut StdRng) -> String {
    let n = rng.gen_range(1..=8);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn random_corpus(rng: &mut StdRng) -> (SurveyDataset, SignatureSet) {
    let study = SurveyStudy::new("s", "study", "2023-01", "x", "y").unwrap();
    let question = SurveyQuestion {
        question_id: "q".into(),
        study_id: "s".into(),
        text: "Why?".into(),
        kind: QuestionKind::OpenEnded,
    };
    let responses = (0..rng.gen_range(1..=20))
        .map(|i| SurveyResponse::new(format!("r{i:02}"), "q", random_text(rng)))
        .collect();
    let signatures = (0..rng.gen_range(1..=20))
        .map(|i| Signature {
            signature_id: format!("q/basic/m{i:02}/t0.0"),
            question_id: "q".into(),
            strategy: PromptStrategy::basic(),
            model_id: format!("m{i:02}"),
            temperature: 0.0,
            text: random_text(rng),
        })
        .collect::<Vec<_>>();
    let set = SignatureSet {
        question_id: "q".into(),
        strategy: StrategyKind::Basic,
        template_version: StrategyKind::Basic.template_version().into(),
        grid_descriptor: GridDescriptor {
            strategy: StrategyKind::Basic,
            models: vec![],
            temperatures: vec![0.0],
            sentiments: vec![],
            cells: signatures.len(),
        },
        generated_at: "1970-01-01T00:00:00Z".into(),
        signatures,
        failures: vec![],
        dedup_removals: vec![],
    };
    (SurveyDataset::new(vec![study], vec![question], responses).unwrap(), set)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let thresholds = DEFAULT_THRESHOLDS.to_vec();
    let mut compared = 0;
    for corpus in 0..50 {
        let (ds, set) = random_corpus(&mut rng);
        let embedder = Arc::new(HashEmbedder::new(corpus, 4));
        let id = embedder.provider_id().to_string();
        let gw = Gateway::builder().embedder(embedder.clone()).build();
        let run = score_dataset(
            &gw,
            &id,
            &ds,
            StrategyKind::Basic,
            std::slice::from_ref(&set),
            &ScoreOptions {
                thresholds: thresholds.clone(),
                low_threshold: 0.0,
                keep_per_signature: false,
            },
        )
        .map_err(|e| format!("corpus {corpus}: {e}"))?;
        for scored in &run.responses {
            let text = &ds.responses.iter().find(|r| r.response_id == scored.response_id).unwrap().text;
            let rv = embedder.vector(text);
            let oracle = set
                .signatures
                .iter()
                .map(|s| oracle_cosine(&rv, &embedder.vector(&s.text)))
                .fold(f64::NEG_INFINITY, f64::max);
            let got = scored.final_score.ok_or("missing final score")?;
            check((got - oracle).abs() <= 1e-12, || {
                format!("corpus {corpus} {}: {got} vs oracle {oracle}", scored.response_id)
            })?;
            for &th in &thresholds {
                let flagged = scored.flags.contains(&ResponseFlag::AiAtThreshold(th));
                check(flagged == (oracle >= th), || {
                    format!("corpus {corpus} {} th={th}: verdict differs", scored.response_id)
                })?;
            }
            compared += 1;
        }
    }
    Ok(format!("50 corpora, {compared} responses, |diff| <= 1e-12"))
}

// ---------------------------------------------------------------------------

fn aggregation_conventions() -> Outcome {
    let parse = |cells: &[&str]| -> Vec<Percentage> {
        cells.iter().map(|c| Percentage::parse_percent(c).unwrap()).collect()
    };
    let pre = average_unweighted(&parse(&["13.91", "1.18", "7.03", "2.50"])).map_err(|e| e.to_string())?;
    let post = average_unweighted(&parse(&["48.71", "18.18", "24.76"])).map_err(|e| e.to_string())?;
    let low = average_pooled(&[(27, 170), (23, 313), (21, 160)]).map_err(|e| e.to_string())?;
    let high = average_pooled(&[(15, 1166), (0, 198), (25, 520)]).map_err(|e| e.to_string())?;
    let got = [pre.rendered(), post.rendered(), low.rendered(), high.rendered()];
    check(got == ["6.16", "30.55", "11.04", "2.12"], || format!("got {got:?}"))?;
    Ok(format!("unweighted {} / {}, pooled {} / {}", got[0], got[1], got[2], got[3]))
}

// ---------------------------------------------------------------------------

fn scored_strategy() -> impl Strategy<Value = Vec<ScoredResponse>> {
    prop::collection::vec((0usize..4, prop::option::weighted(0.9, -1.0f64..=1.0)), 1..80).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (study, score))| {
                let study = format!("s{study}");
                match score {
                    Some(s) => ScoredResponse {
                        response_id: format!("r{i}"),
                        question_id: format!("{study}-q"),
                        study_id: study,
                        per_signature: vec![],
                        final_score: Some(s),
                        best_signature_id: Some("sig".into()),
                        flags: vec![],
                    },
                    None => ScoredResponse::empty(&format!("r{i}"), &format!("{study}-q"), &study),
                }
            })
            .collect()
    })
}

fn sweep_monotonicity() -> Outcome {
    let columns: Vec<StudyColumn> = (0..4)
        .map(|i| StudyColumn {
            study_id: format!("s{i}"),
            label: format!("study {i}"),
            cohort: if i < 2 { Cohort::Pre2022 } else { Cohort::Post2022 },
        })
        .collect();
    let thresholds = [-0.5, 0.0, 0.5, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0];
    let cases = 256;
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&(scored_strategy(), scored_strategy(), any::<bool>()), |(basic, senti, exclude_empty)| {
            let table = threshold_sweep(
                &[
                    StrategyScores { strategy: StrategyKind::Basic, responses: basic },
                    StrategyScores { strategy: StrategyKind::Sentiment, responses: senti },
                ],
                &columns,
                &thresholds,
                SweepOptions { exclude_empty, ..Default::default() },
            )
            .unwrap();
            for strategy in [StrategyKind::Basic, StrategyKind::Sentiment] {
                for col in &columns {
                    let series: Vec<Percentage> = table
                        .rows
                        .iter()
                        .filter(|r| r.strategy == strategy)
                        .filter_map(|r| r.cell(&col.study_id))
                        .map(|c| c.percentage.clone().try_into().unwrap())
                        .collect();
                    prop_assert!(series.windows(2).all(|w| w[0] >= w[1]), "{strategy}/{}: {series:?}", col.study_id);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} random scored sets x 2 strategies x 4 studies"))
}

// ---------------------------------------------------------------------------

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            if rel == "cache" {
                continue;
            }
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_pipeline(out: &Path) -> Result<Vec<String>, String> {
    let corpus = repo_root().join("fixtures/corpus");
    let steps: [&[&str]; 4] = [
        &["gen-signatures", "--strategy", "basic,sentiment"],
        &["score", "--strategy", "basic,sentiment"],
        &["detect-llm"],
        &["report"],
    ];
    let mut stdouts = Vec::new();
    for step in steps {
        let o = Command::new(env!("CARGO_BIN_EXE_surveysig"))
            .args(step)
            .arg("--dataset")
            .arg(&corpus)
            .arg("--output")
            .arg(out)
            .arg("--mock")
            .output()
            .map_err(|e| e.to_string())?;
        let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
        if !o.status.success() {
            return Err(format!("{step:?} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        stdouts.push(stdout);
    }
    Ok(stdouts)
}

fn determinism_and_cache() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let first = run_pipeline(&a)?;
    check(!first[0].lines().any(|l| l.starts_with("0 provider calls")), || "cold run made no calls".into())?;
    let snap1 = snapshot(&a);
    let second = run_pipeline(&a)?;
    for (i, s) in second.iter().enumerate() {
        check(s.lines().any(|l| l.starts_with("0 provider calls")), || {
            format!("warm step {i} made provider calls:\n{s}")
        })?;
    }
    let snap2 = snapshot(&a);
    check(snap1 == snap2, || "warm rerun changed outputs".into())?;
    run_pipeline(&b)?;
    let snap3 = snapshot(&b);
    check(snap1 == snap3, || {
        let diff: Vec<&String> = snap1.keys().filter(|k| snap3.get(*k) != snap1.get(*k)).collect();
        format!("fresh-cache run differs in {diff:?}")
    })?;
    let took = start.elapsed();
    check(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!(
        "{} files identical across 3 runs, warm run 0 provider calls, {:.2}s",
        snap1.len(),
        took.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct ParserCase {
    name: String,
    output: String,
    verdict: VerdictFlag,
}

fn parser_fixtures() -> Outcome {
    let raw = std::fs::read_to_string(repo_root().join("fixtures/detector_outputs.json")).map_err(|e| e.to_string())?;
    let cases: Vec<ParserCase> = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
    check(cases.len() >= 20, || format!("only {} fixtures", cases.len()))?;
    for c in &cases {
        let got = parse_detector_output(&c.output).flag;
        check(got == c.verdict, || format!("{:?}: got {got:?}, want {:?}", c.name, c.verdict))?;
    }
    for flag in [VerdictFlag::Ai, VerdictFlag::Human] {
        let canonical = flag.as_str();
        check(parse_detector_output(canonical).flag == flag, || format!("round trip of {canonical}"))?;
    }
    Ok(format!("{} fixtures, canonical AI/HUMAN round-trip", cases.len()))
}

// ---------------------------------------------------------------------------

fn grid_contract() -> Outcome {
    let gw = Gateway::builder().chat(Arc::new(MockChatProvider::new(1))).build();
    let q = SurveyQuestion {
        question_id: "q1".into(),
        study_id: "s1".into(),
        text: "Why do you use this app?".into(),
        kind: QuestionKind::OpenEnded,
    };
    let models: Vec<String> = DEFAULT_MODELS.iter().map(|s| s.to_string()).collect();
    let basic = generate_signatures(&gw, &q, StrategyKind::Basic, &models, &DEFAULT_TEMPERATURES, &[])
        .map_err(|e| e.to_string())?;
    let senti = generate_signatures(&gw, &q, StrategyKind::Sentiment, &models, &DEFAULT_TEMPERATURES, &DEFAULT_SENTIMENTS)
        .map_err(|e| e.to_string())?;
    for (set, want) in [(&basic, 20), (&senti, 60)] {
        check(set.grid_descriptor.cells == want, || format!("{} grid has {} cells", set.strategy, set.grid_descriptor.cells))?;
        check(set.len() + set.dedup_removals.len() == want, || {
            format!("{}: {} kept + {} removed", set.strategy, set.len(), set.dedup_removals.len())
        })?;
    }

    // forced duplicates: a canned provider answers identically in every cell
    let canned = Gateway::builder()
        .chat(Arc::new(MockChatProvider::new(1).with_canned("It is convenient and easy to use.")))
        .build();
    let mut checked = 0;
    for (kind, sentiments) in [(StrategyKind::Basic, &[][..]), (StrategyKind::Sentiment, &DEFAULT_SENTIMENTS[..])] {
        let deduped = dedupe_signatures(
            generate_signatures(&canned, &q, kind, &models, &DEFAULT_TEMPERATURES, sentiments)
                .map_err(|e| e.to_string())?,
        );
        check(deduped.len() == 1, || format!("{kind}: {} signatures after dedup", deduped.len()))?;
        // rebuild the pre-dedup set, mixed with distinct signatures
        let mut full = basic.clone();
        full.strategy = kind;
        for r in &deduped.dedup_removals {
            let mut s = deduped.signatures[0].clone();
            s.signature_id = r.removed.clone();
            full.signatures.push(s);
        }
        full.signatures.push(deduped.signatures[0].clone());
        let collapsed = dedupe_signatures(full.clone());
        check(collapsed.len() < full.len(), || "no duplicates removed".into())?;

        let embedder = Arc::new(HashEmbedder::new(3, 32));
        let id = embedder.provider_id().to_string();
        let sgw = Gateway::builder().embedder(embedder).build();
        let ds = SurveyDataset::new(
            vec![SurveyStudy::new("s1", "s", "2023-05", "x", "y").unwrap()],
            vec![q.clone()],
            vec![
                SurveyResponse::new("r1", "q1", "It is convenient and easy to use."),
                SurveyResponse::new("r2", "q1", "I track my runs"),
                SurveyResponse::new("r3", "q1", "battery drains fast"),
                SurveyResponse::new("r4", "q1", ""),
            ],
        )
        .map_err(|e| e.to_string())?;
        let opts = ScoreOptions {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            low_threshold: 0.0,
            keep_per_signature: false,
        };
        let before = score_dataset(&sgw, &id, &ds, kind, &[full], &opts).map_err(|e| e.to_string())?;
        let after = score_dataset(&sgw, &id, &ds, kind, &[collapsed], &opts).map_err(|e| e.to_string())?;
        let scores = |run: &surveysig::pipeline::ScoreRun| -> HashMap<String, Option<u64>> {
            run.responses
                .iter()
                .map(|r| (r.response_id.clone(), r.final_score.map(f64::to_bits)))
                .collect()
        };
        check(scores(&before) == scores(&after), || format!("{kind}: dedup changed a final score"))?;
        checked += before.responses.len();
    }
    Ok(format!(
        "basic 20, sentiment 60 cells; dedup kept all {checked} final scores bit-identical"
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 7] = [
        ("similarity property suite", similarity_properties),
        ("oracle equivalence", oracle_equivalence),
        ("aggregation-convention reproduction", aggregation_conventions),
        ("sweep monotonicity", sweep_monotonicity),
        ("determinism & cache", determinism_and_cache),
        ("detector parser fixtures", parser_fixtures),
        ("grid-size contract", grid_contract),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("[PASS] {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("[FAIL] {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
