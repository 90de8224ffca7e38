use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use serde_json::{json, Value};
use surveysig::dataset::{load_dataset, DatasetFormat, SurveyDataset};
use surveysig::detector::{
    detect_batch, load_study_verdicts, save_study_verdicts, DetectorConfig, StudyVerdicts, DETECTOR_TEMPLATE_VERSION,
};
use surveysig::gateway::mock::{HashEmbedder, MockChatProvider, MOCK_CHAT_ID};
use surveysig::gateway::openai::{Endpoint, OpenAiChat, OpenAiEmbedder};
use surveysig::gateway::{CallStats, ChatProvider, Clock, EmbeddingProvider, Gateway, ResponseCache};
use surveysig::model::Cohort;
use surveysig::pipeline::{score_dataset, ScoreOptions, ScoreRun};
use surveysig::report::render::{canonical_json, format_threshold, write_atomic};
use surveysig::report::{
    build_histogram, detector_section, extract_cases, study_columns, threshold_sweep, write_report,
    AverageConvention, DetectionReport, ReportFormat, StrategyCases, StrategyHistogram, StrategyScores,
    SweepOptions,
};
use surveysig::signature::{dedupe_signatures, generate_signatures, SignatureSet, SignatureStore, StrategyKind};
use surveysig::{Error, Result};

use crate::config::{RunConfig, ScoreDetail};

/// Timestamp written into mock cache entries so fresh and warm runs match.
pub const MOCK_EPOCH: &str = "1970-01-01T00:00:00Z";

const SIGNATURES_DIR: &str = "signatures";
const SCORES_DIR: &str = "scores";
const VERDICTS_DIR: &str = "verdicts";
const REPORTS_DIR: &str = "reports";
const LOCK_FILE: &str = ".surveysig.lock";

/// Exclusive ownership of an output directory for the lifetime of a command.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn load(cfg: &RunConfig) -> Result<SurveyDataset> {
    let path = cfg.dataset_path()?;
    load_dataset(path, DatasetFormat::detect(path))
}

fn chat_provider_id(cfg: &RunConfig) -> &'static str {
    if cfg.mock {
        MOCK_CHAT_ID
    } else {
        "openai-chat"
    }
}

/// Builds a gateway with only the providers a command needs, so e.g.
/// `detect-llm` does not demand embedding credentials.
fn gateway(cfg: &RunConfig, chat: bool, embed: bool) -> Result<(Gateway, Option<String>)> {
    let timeout = Duration::from_secs(cfg.providers.timeout_secs);
    let mut b = Gateway::builder()
        .cache(ResponseCache::on_disk(cfg.cache_dir())?)
        .max_in_flight(cfg.providers.max_in_flight);
    let mut embedder_id = None;
    if cfg.mock {
        b = b.clock(Clock::Fixed(MOCK_EPOCH.into()));
    }
    if chat {
        let p: Arc<dyn ChatProvider> = if cfg.mock {
            Arc::new(MockChatProvider::new(cfg.seed))
        } else {
            Arc::new(OpenAiChat::new(Endpoint::chat_from_env(timeout)?)?)
        };
        b = b.chat(p);
    }
    if embed {
        let p: Arc<dyn EmbeddingProvider> = if cfg.mock {
            Arc::new(HashEmbedder::new(cfg.seed, cfg.providers.mock_embedding_dim))
        } else {
            Arc::new(OpenAiEmbedder::new(
                Endpoint::embed_from_env(timeout)?,
                cfg.providers.embedding_model.clone(),
            )?)
        };
        embedder_id = Some(p.provider_id().to_string());
        b = b.embedder(p);
    }
    Ok((b.build(), embedder_id))
}

fn print_calls(stats: CallStats) {
    println!(
        "{} provider calls (chat {}, embed {}); cache hits {}, misses {}",
        stats.provider_calls(),
        stats.chat_calls,
        stats.embed_calls,
        stats.cache_hits,
        stats.cache_misses
    );
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    let ds = load(cfg)?;
    println!(
        "dataset ok: {} studies, {} questions ({} open-ended), {} responses",
        ds.studies.len(),
        ds.questions.len(),
        ds.open_ended_questions().count(),
        ds.responses.len()
    );
    for s in ds.summary() {
        let len = s
            .length
            .map(|l| format!("mean {:.2} words, sd {:.2}", l.mean, l.std_dev))
            .unwrap_or_else(|| "no responses".into());
        println!(
            "  {} [{}] {} {}: {} responses, {} empty, {}",
            s.study_id,
            s.label,
            s.month_year,
            s.cohort.label(),
            s.responses,
            s.empty_responses,
            len
        );
    }
    Ok(())
}

pub fn gen_signatures(cfg: &RunConfig, strategies: &[StrategyKind]) -> Result<()> {
    cfg.validate_grid()?;
    let ds = load(cfg)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let (gw, _) = gateway(cfg, true, false)?;
    let store = SignatureStore::new(cfg.output_dir.join(SIGNATURES_DIR));
    let mut first_failure = None;
    for &kind in strategies {
        let sentiments = match kind {
            StrategyKind::Basic => &[][..],
            StrategyKind::Sentiment => &cfg.grid.sentiments[..],
        };
        let (mut questions, mut cells, mut failures, mut removed, mut kept) = (0, 0, 0, 0, 0);
        for q in ds.open_ended_questions() {
            match generate_signatures(&gw, q, kind, &cfg.grid.models, &cfg.grid.temperatures, sentiments) {
                Ok(set) => {
                    let set = dedupe_signatures(set);
                    questions += 1;
                    cells += set.grid_descriptor.cells;
                    failures += set.failures.len();
                    removed += set.dedup_removals.len();
                    kept += set.len();
                    let path = store.save(&set)?;
                    info!("wrote {}", path.display());
                }
                Err(e @ Error::GenerationFailed { .. }) => {
                    eprintln!("{kind}: {e}");
                    first_failure.get_or_insert(e);
                }
                Err(e) => return Err(e),
            }
        }
        println!(
            "{kind}: {questions} questions, {cells} cells, {failures} failed cells, {removed} duplicates removed, {kept} signatures kept"
        );
    }
    print_calls(gw.stats());
    first_failure.map_or(Ok(()), Err)
}

fn load_signature_sets(cfg: &RunConfig, ds: &SurveyDataset, kind: StrategyKind) -> Result<Vec<SignatureSet>> {
    let store = SignatureStore::new(cfg.output_dir.join(SIGNATURES_DIR));
    let mut sets = Vec::new();
    let mut missing = Vec::new();
    for q in ds.open_ended_questions() {
        match store.load(kind, &q.question_id)? {
            Some(set) if !set.is_empty() => sets.push(set),
            _ => missing.push(format!("{} ({kind})", q.question_id)),
        }
    }
    if missing.is_empty() {
        Ok(sets)
    } else {
        Err(Error::MissingSignatures(missing))
    }
}

fn score_path(cfg: &RunConfig, kind: StrategyKind) -> PathBuf {
    cfg.output_dir.join(SCORES_DIR).join(format!("{}.json", kind.as_str()))
}

pub fn score(cfg: &RunConfig, strategies: &[StrategyKind]) -> Result<()> {
    cfg.validate_scoring()?;
    let ds = load(cfg)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    // every precondition is checked before the first embedding call
    let sets = strategies
        .iter()
        .map(|&k| load_signature_sets(cfg, &ds, k))
        .collect::<Result<Vec<_>>>()?;
    let (gw, embedder) = gateway(cfg, false, true)?;
    let embedder = embedder.expect("embedder requested");
    let options = ScoreOptions {
        thresholds: cfg.scoring.thresholds.clone(),
        low_threshold: cfg.scoring.low_threshold,
        keep_per_signature: cfg.scoring.scores == ScoreDetail::Full,
    };
    let mut runs = Vec::new();
    for (&kind, sets) in strategies.iter().zip(&sets) {
        let run = score_dataset(&gw, &embedder, &ds, kind, sets, &options)?;
        write_atomic(&score_path(cfg, kind), canonical_json(&run)?.as_bytes())?;
        let empty = run.responses.iter().filter(|r| r.is_empty_response()).count();
        let irrelevant = run.responses.iter().filter(|r| r.is_irrelevant()).count();
        println!(
            "{kind}: {} responses scored, {empty} empty, {irrelevant} at or below {}",
            run.responses.len() - empty,
            format_threshold(cfg.scoring.low_threshold)
        );
        runs.push((run, sets.clone()));
    }

    let mut report = DetectionReport {
        provenance: provenance(cfg, Some(&embedder), false, false)?,
        studies: ds.summary(),
        ..Default::default()
    };
    add_signature_sections(cfg, &ds, &runs, &mut report)?;
    write_reports(cfg, "score", &report)?;
    if let Some(sweep) = &report.sweep {
        for row in &sweep.rows {
            println!(
                "  th={} {}: pre-2022 {} | post-2022 {}",
                format_threshold(row.threshold),
                row.strategy,
                row.pre_average.as_ref().map_or("-", |p| p.rendered.as_str()),
                row.post_average.as_ref().map_or("-", |p| p.rendered.as_str()),
            );
        }
    }
    print_calls(gw.stats());
    Ok(())
}

fn add_signature_sections(
    cfg: &RunConfig,
    ds: &SurveyDataset,
    runs: &[(ScoreRun, Vec<SignatureSet>)],
    report: &mut DetectionReport,
) -> Result<()> {
    let scoring = &cfg.scoring;
    let scored: Vec<StrategyScores> = runs
        .iter()
        .map(|(run, _)| StrategyScores {
            strategy: run.strategy,
            responses: run.responses.clone(),
        })
        .collect();
    report.sweep = Some(threshold_sweep(
        &scored,
        &study_columns(ds),
        &scoring.thresholds,
        SweepOptions {
            convention: scoring.average.into(),
            exclude_empty: scoring.exclude_empty,
        },
    )?);
    let cohorts = ds.cohorts();
    let response_texts: HashMap<&str, &str> = ds
        .responses
        .iter()
        .map(|r| (r.response_id.as_str(), r.text.as_str()))
        .collect();
    for (run, sets) in runs {
        let finals: Vec<(Cohort, f64)> = run
            .responses
            .iter()
            .filter_map(|r| r.final_score.map(|s| (cohorts[&r.study_id], s)))
            .collect();
        report.histograms.push(StrategyHistogram {
            strategy: run.strategy,
            histogram: build_histogram(&finals, scoring.bin_width)?,
        });
        let signature_texts: HashMap<&str, &str> = sets
            .iter()
            .flat_map(|s| &s.signatures)
            .map(|s| (s.signature_id.as_str(), s.text.as_str()))
            .collect();
        report.cases.push(StrategyCases {
            strategy: run.strategy,
            cases: extract_cases(
                &run.responses,
                &response_texts,
                &signature_texts,
                scoring.k_high,
                scoring.low_threshold,
            )?,
        });
    }
    Ok(())
}

fn write_reports(cfg: &RunConfig, stem: &str, report: &DetectionReport) -> Result<()> {
    let dir = cfg.output_dir.join(REPORTS_DIR);
    for format in ReportFormat::ALL {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        write_report(report, &path, format)?;
        info!("wrote {}", path.display());
    }
    for h in &report.histograms {
        let path = dir.join(format!("{stem}-histogram-{}.csv", h.strategy.as_str()));
        write_atomic(&path, h.histogram.to_csv()?.as_bytes())?;
    }
    Ok(())
}

pub fn detect_llm(cfg: &RunConfig) -> Result<()> {
    cfg.validate_detector()?;
    let ds = load(cfg)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let (gw, _) = gateway(cfg, true, false)?;
    let root = cfg.output_dir.join(VERDICTS_DIR);
    let columns = study_columns(&ds);
    let mut report = DetectionReport {
        provenance: provenance(cfg, None, true, false)?,
        studies: ds.summary(),
        ..Default::default()
    };
    for model in &cfg.detector.models {
        let dc = DetectorConfig {
            temperature: cfg.detector.temperature,
            tolerate_parse_failures: !cfg.detector.strict,
            ..DetectorConfig::new(model.clone())
        };
        let verdicts = detect_batch(&gw, &ds, &dc)?;
        for v in &verdicts {
            save_study_verdicts(&root, v)?;
            if v.undetermined > 0 {
                warn!("{model}/{}: {} undetermined verdicts", v.study_id, v.undetermined);
            }
        }
        let section = detector_section(&verdicts, &columns, cfg.detector.average.into())?;
        print_detector_line(&section);
        report.detector.push(section);
    }
    write_reports(cfg, "detector", &report)?;
    print_calls(gw.stats());
    Ok(())
}

fn print_detector_line(section: &surveysig::report::DetectorSection) {
    let cells: Vec<String> = section
        .studies
        .iter()
        .map(|s| {
            format!(
                "{} {}",
                s.study_id,
                s.percentage.as_ref().map_or("-", |p| p.rendered.as_str())
            )
        })
        .collect();
    let avg = section.comparison.as_ref().map_or(String::new(), |c| {
        format!(
            "; pre-2022 avg {} | post-2022 avg {}",
            c.pre_average.rendered, c.post_average.rendered
        )
    });
    println!("{}: {}{avg}", section.model_id, cells.join(", "));
}

fn read_score_dump(path: &Path) -> Result<ScoreRun> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Corrupted {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Verdict dumps grouped by detector model, in file-name order.
fn read_verdict_dumps(root: &Path) -> Result<BTreeMap<String, Vec<StudyVerdicts>>> {
    let mut out: BTreeMap<String, Vec<StudyVerdicts>> = BTreeMap::new();
    if !root.is_dir() {
        return Ok(out);
    }
    for model_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        for file in sorted_entries(&model_dir)? {
            if file.extension().is_some_and(|e| e == "json") {
                let v = load_study_verdicts(&file)?;
                out.entry(v.model_id.clone()).or_default().push(v);
            }
        }
    }
    Ok(out)
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    cfg.validate_scoring()?;
    let ds = load(cfg)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;

    let mut runs = Vec::new();
    for kind in [StrategyKind::Basic, StrategyKind::Sentiment] {
        let path = score_path(cfg, kind);
        if path.exists() {
            let run = read_score_dump(&path)?;
            let sets = load_signature_sets(cfg, &ds, kind)?;
            runs.push((run, sets));
        }
    }
    let verdicts = read_verdict_dumps(&cfg.output_dir.join(VERDICTS_DIR))?;
    if runs.is_empty() && verdicts.is_empty() {
        return Err(Error::NoDumps(cfg.output_dir.clone()));
    }

    let embedder = runs.first().map(|(r, _)| r.embedding_provider.clone());
    let mut report = DetectionReport {
        provenance: provenance(cfg, embedder.as_deref(), !verdicts.is_empty(), true)?,
        studies: ds.summary(),
        ..Default::default()
    };
    let columns = study_columns(&ds);
    for v in verdicts.values() {
        let section = detector_section(v, &columns, cfg.detector.average.into())?;
        print_detector_line(&section);
        report.detector.push(section);
    }
    if !runs.is_empty() {
        add_signature_sections(cfg, &ds, &runs, &mut report)?;
    }
    write_reports(cfg, "report", &report)?;
    println!(
        "report: {} detector model(s), {} signature strateg{}",
        report.detector.len(),
        runs.len(),
        if runs.len() == 1 { "y" } else { "ies" }
    );
    print_calls(CallStats::default());
    Ok(())
}

/// What a reader needs to reproduce a report. Cache contents are only
/// recorded by `report`, the last stage, so intermediate reports stay
/// byte-identical between a fresh and a warm run.
fn provenance(
    cfg: &RunConfig,
    embedder: Option<&str>,
    with_detector: bool,
    with_cache: bool,
) -> Result<BTreeMap<String, Value>> {
    let mut p = BTreeMap::new();
    p.insert("tool".into(), json!(format!("surveysig {}", env!("CARGO_PKG_VERSION"))));
    p.insert(
        "template_versions".into(),
        json!({
            "basic": StrategyKind::Basic.template_version(),
            "sentiment": StrategyKind::Sentiment.template_version(),
            "detector": DETECTOR_TEMPLATE_VERSION,
        }),
    );
    p.insert(
        "grid".into(),
        json!({
            "models": cfg.grid.models,
            "temperatures": cfg.grid.temperatures,
            "sentiments": cfg.grid.sentiments,
        }),
    );
    let mut conventions = json!({
        "signature_cohort_average": AverageConvention::from(cfg.scoring.average).as_str(),
        "threshold_rule": "AI when final_score >= threshold",
        "irrelevance_rule": format!("final_score <= {}", format_threshold(cfg.scoring.low_threshold)),
        "empty_responses": if cfg.scoring.exclude_empty { "excluded from denominators" } else { "counted as not flagged" },
        "rounding": "exact fractions; two decimals, half-up, at render time",
    });
    if with_detector {
        conventions["detector_cohort_average"] = json!(AverageConvention::from(cfg.detector.average).as_str());
        conventions["detector_denominator"] = json!("non-empty responses with an AI or HUMAN verdict");
    }
    p.insert("conventions".into(), conventions);
    let mut settings = json!({ "scoring": cfg.scoring });
    if with_detector {
        settings["detector"] = json!(cfg.detector);
    }
    p.insert("settings".into(), settings);
    let mut providers = json!({ "mock": cfg.mock });
    if with_detector {
        providers["chat"] = json!(chat_provider_id(cfg));
        providers["detector_models"] = json!(cfg.detector.models);
        providers["detector_temperature"] = json!(cfg.detector.temperature);
    }
    if let Some(e) = embedder {
        providers["embedding"] = json!(e);
    }
    if cfg.mock {
        providers["seed"] = json!(cfg.seed);
    }
    p.insert("providers".into(), providers);
    if with_cache {
        let contents = ResponseCache::on_disk(cfg.cache_dir())?.contents()?;
        p.insert("cache".into(), json!({ "entries": contents.entries }));
    }
    Ok(p)
}
