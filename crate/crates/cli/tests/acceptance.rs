//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use hatemm::augment::{augment_dataset, default_chains, AugmentOptions, IdentityTranslator, TranslationProvider};
use hatemm::cache::{cache_stats, DiskCache};
use hatemm::corpus::{load_dataset, Split};
use hatemm::ensemble::{fuse, fuse_votes, EnsembleSpec, TieBreak};
use hatemm::evaluate::{confusion_matrix, render_report, score, Artifact, EvalReport, ReportFormat, ResultsTable};
use hatemm::ocr::{extract_text, MockOcrProvider, OcrOptions};
use hatemm::prompt::{parse_label, run_llm, wrap_label, LlmOptions, MockLlmProvider, PromptMode, PromptSpec};
use hatemm::{Dataset, Instance, LabelScheme, Prediction, TaskId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const VOTING_BUDGET: Duration = Duration::from_secs(1);
const VOTING_RANDOM_CASES: usize = 1000;
const METRIC_TOL: f64 = 1e-9;
const METRIC_CASES: usize = 500;
const METRIC_MAX_N: usize = 200;
const METRIC_BUDGET: Duration = Duration::from_secs(5);
const DISTRIBUTION_DECIMALS: usize = 2;
const AUGMENT_BUDGET: Duration = Duration::from_secs(1);
const RUN_ALL_BUDGET: Duration = Duration::from_secs(60);
const FIXTURE_IMAGES: u64 = 30;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/task_b")
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hatemm")
}

/// Copies the fixture (minus any `work/` directory) into a fresh temp dir.
fn fixture_copy() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixture_dir();
    std::fs::create_dir_all(tmp.path().join("images")).unwrap();
    for name in ["manifest.csv", "ocr_table.json", "config.toml"] {
        std::fs::copy(src.join(name), tmp.path().join(name)).unwrap();
    }
    for entry in std::fs::read_dir(src.join("images")).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), tmp.path().join("images").join(entry.file_name())).unwrap();
    }
    tmp
}

fn scheme_b() -> LabelScheme {
    LabelScheme::for_task(TaskId::B)
}

/// Fixture dataset with OCR texts filled in from the mock table.
fn fixture_with_text() -> Dataset {
    let dir = fixture_dir();
    let ds = load_dataset(&dir.join("manifest.csv"), &scheme_b()).unwrap();
    let table: BTreeMap<String, String> =
        serde_json::from_slice(&std::fs::read(dir.join("ocr_table.json")).unwrap()).unwrap();
    let by_file: HashMap<String, String> = table
        .into_iter()
        .map(|(k, v)| (Path::new(&k).file_name().unwrap().to_string_lossy().into_owned(), v))
        .collect();
    let instances = ds
        .instances()
        .iter()
        .map(|i| {
            let mut i = i.clone();
            let file = i
                .image_path
                .as_ref()
                .unwrap()
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned();
            i.text = by_file[&file].clone();
            i
        })
        .collect();
    Dataset::new(scheme_b(), instances).unwrap()
}

// Mode with tie-break, computed by scanning counts rather than by summing
// weights.
fn vote_oracle(votes: &[usize], tie: TieBreak) -> usize {
    let count = |l: usize| votes.iter().filter(|&&v| v == l).count();
    let best = votes.iter().map(|&v| count(v)).max().unwrap();
    match tie {
        TieBreak::MemberPriority => *votes.iter().find(|&&v| count(v) == best).unwrap(),
        TieBreak::LowestCode => (0..).find(|&l| count(l) == best).unwrap(),
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for tie in [TieBreak::MemberPriority, TieBreak::LowestCode] {
        let mut spec = EnsembleSpec::majority(["m0", "m1", "m2"]);
        spec.tie_break = tie;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let votes = [a, b, c];
                    ensure!(
                        fuse_votes(&votes, &spec) == vote_oracle(&votes, tie),
                        "{votes:?} ({tie:?}) disagrees with the oracle"
                    );
                    checked += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let names = ["m0", "m1", "m2", "m3"];
    for case in 0..VOTING_RANDOM_CASES {
        let votes: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        let tie = if case % 2 == 0 {
            TieBreak::MemberPriority
        } else {
            TieBreak::LowestCode
        };
        let mut spec = EnsembleSpec::majority(names);
        spec.tie_break = tie;
        // Go through `fuse` so the prediction plumbing is covered too.
        let per_model: HashMap<String, Vec<Prediction>> = names
            .iter()
            .zip(&votes)
            .map(|(n, &l)| (n.to_string(), vec![Prediction::hard("x", l, *n)]))
            .collect();
        let fused = fuse(&per_model, &spec).map_err(|e| e.to_string())?;
        ensure!(
            fused[0].label == vote_oracle(&votes, tie),
            "{votes:?} ({tie:?}) disagrees with the oracle"
        );
        checked += 1;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < VOTING_BUDGET, "took {elapsed:?}");
    Ok(format!("{checked} vote cases match the oracle in {elapsed:?}"))
}

struct OracleMetrics {
    macro_f1: f64,
    weighted_f1: f64,
    per_class: Vec<(f64, f64, f64, usize)>,
}

fn metric_oracle(gold: &[usize], pred: &[usize], k: usize) -> OracleMetrics {
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let mut per_class = Vec::new();
    let mut present = 0;
    let mut macro_sum = 0.0;
    let mut weighted_sum = 0.0;
    for l in 0..k {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == l && **p == l).count() as f64;
        let predicted = pred.iter().filter(|p| **p == l).count() as f64;
        let support = gold.iter().filter(|g| **g == l).count();
        let precision = div(tp, predicted);
        let recall = div(tp, support as f64);
        let f1 = div(2.0 * precision * recall, precision + recall);
        if support > 0 || predicted > 0.0 {
            present += 1;
            macro_sum += f1;
        }
        weighted_sum += f1 * support as f64;
        per_class.push((precision, recall, f1, support));
    }
    OracleMetrics {
        macro_f1: div(macro_sum, present as f64),
        weighted_f1: div(weighted_sum, gold.len() as f64),
        per_class,
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (LabelScheme, Dataset, Vec<Prediction>, Vec<usize>, Vec<usize>) {
    let scheme = LabelScheme::for_task(if rng.random_bool(0.5) { TaskId::A } else { TaskId::B });
    let k = scheme.len();
    let n = rng.random_range(1..=METRIC_MAX_N);
    // Skewed label draws so some classes are often absent.
    let skew: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(2)).collect();
    let draw = |rng: &mut ChaCha8Rng| {
        let total: f64 = skew.iter().sum();
        let mut x = rng.random::<f64>() * total;
        for (l, w) in skew.iter().enumerate() {
            if x < *w {
                return l;
            }
            x -= w;
        }
        k - 1
    };
    let gold: Vec<usize> = (0..n).map(|_| draw(rng)).collect();
    let pred: Vec<usize> = gold
        .iter()
        .map(|&g| {
            if rng.random_bool(0.6) {
                g
            } else {
                rng.random_range(0..k)
            }
        })
        .collect();
    let instances = gold
        .iter()
        .enumerate()
        .map(|(i, &g)| Instance::new(format!("i{i}"), "t", Some(g), Split::Test))
        .collect();
    let ds = Dataset::new(scheme.clone(), instances).unwrap();
    let preds = pred
        .iter()
        .enumerate()
        .map(|(i, &p)| Prediction::hard(format!("i{i}"), p, "m"))
        .collect();
    (scheme, ds, preds, gold, pred)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= METRIC_TOL
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..METRIC_CASES {
        let (scheme, ds, preds, gold, pred) = random_case(&mut rng);
        let report = score(&preds, &ds).map_err(|e| e.to_string())?;
        let oracle = metric_oracle(&gold, &pred, scheme.len());
        ensure!(
            close(report.macro_f1, oracle.macro_f1),
            "case {case}: macro-F1 {} vs {}",
            report.macro_f1,
            oracle.macro_f1
        );
        ensure!(
            close(report.weighted_f1, oracle.weighted_f1),
            "case {case}: weighted-F1 {} vs {}",
            report.weighted_f1,
            oracle.weighted_f1
        );
        for (m, (p, r, f, s)) in report.per_class.iter().zip(&oracle.per_class) {
            ensure!(
                close(m.precision, *p) && close(m.recall, *r) && close(m.f1, *f) && m.support == *s,
                "case {case}: class {} differs",
                m.label
            );
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < METRIC_BUDGET, "took {elapsed:?}");
    Ok(format!(
        "{METRIC_CASES} random cases within {METRIC_TOL:e} in {elapsed:?}"
    ))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..METRIC_CASES {
        let (scheme, ds, preds, gold, _) = random_case(&mut rng);
        let cm = confusion_matrix(&preds, &ds).map_err(|e| e.to_string())?;
        let report = score(&preds, &ds).map_err(|e| e.to_string())?;
        let n = gold.len();
        let cells: usize = cm.rows().iter().flatten().sum();
        ensure!(cells == n, "case {case}: cell sum {cells} != {n}");
        for l in 0..scheme.len() {
            let support = gold.iter().filter(|g| **g == l).count();
            ensure!(
                cm.row_sum(l) == support,
                "case {case}: row {l} sums to {}",
                cm.row_sum(l)
            );
        }
        ensure!(
            cm.trace() as f64 / n as f64 == report.accuracy,
            "case {case}: diagonal/n != accuracy"
        );
    }
    Ok(format!("{METRIC_CASES} confusion matrices satisfy all invariants"))
}

fn write_text_manifest(path: &Path, splits: &[(&str, &[(&str, usize)])]) {
    let mut out = String::from("id,text,label,split\n");
    let mut id = 0;
    for (split, counts) in splits {
        for (label, count) in *counts {
            for _ in 0..*count {
                id += 1;
                out.push_str(&format!("r{id},sample text {id},{label},{split}\n"));
            }
        }
    }
    std::fs::write(path, out).unwrap();
}

fn ingest_output(task: &str, splits: &[(&str, &[(&str, usize)])]) -> Result<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    write_text_manifest(&tmp.path().join("manifest.csv"), splits);
    let config = tmp.path().join("config.toml");
    std::fs::write(
        &config,
        format!("task = \"{task}\"\n[paths]\nmanifest = \"manifest.csv\"\n"),
    )
    .unwrap();
    let out = Command::new(bin())
        .arg("--config")
        .arg(&config)
        .arg("ingest")
        .output()
        .unwrap();
    ensure!(
        out.status.success(),
        "ingest failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(String::from_utf8(out.stdout).unwrap())
}

/// Percentage printed in `label`'s row for the train column.
fn printed_train_pct(stdout: &str, label: &str) -> Option<String> {
    let line = stdout
        .lines()
        .find(|l| l.trim_start().starts_with(&format!("{label} ")))?;
    line.split_whitespace().nth(1).map(str::to_string)
}

fn criterion_4() -> Outcome {
    let a = ingest_output(
        "A",
        &[
            ("train", &[("HATE", 1079), ("NO-HATE", 921)]),
            ("eval", &[("HATE", 243), ("NO-HATE", 200)]),
            ("test", &[("HATE", 243), ("NO-HATE", 200)]),
        ],
    )?;
    let b = ingest_output(
        "B",
        &[
            (
                "train",
                &[("INDIVIDUAL", 823), ("COMMUNITY", 335), ("ORGANIZATION", 784)],
            ),
            ("eval", &[("INDIVIDUAL", 102), ("COMMUNITY", 40), ("ORGANIZATION", 102)]),
            ("test", &[("INDIVIDUAL", 102), ("COMMUNITY", 42), ("ORGANIZATION", 98)]),
        ],
    )?;
    let expected = [
        (&a, "HATE", 53.95),
        (&a, "NO-HATE", 46.05),
        (&b, "INDIVIDUAL", 42.38),
        (&b, "COMMUNITY", 17.25),
        (&b, "ORGANIZATION", 40.37),
    ];
    let mut seen = Vec::new();
    for (stdout, label, pct) in expected {
        let want = format!("{pct:.DISTRIBUTION_DECIMALS$}");
        let got = printed_train_pct(stdout, label).ok_or_else(|| format!("no row for {label}"))?;
        ensure!(got == want, "{label}: printed {got}, expected {want}");
        seen.push(format!("{label} {got}"));
    }
    Ok(seen.join(", "))
}

/// Mock translator that tags each hop, so the output reveals the chain.
struct TaggingTranslator;

impl TranslationProvider for TaggingTranslator {
    fn name(&self) -> &str {
        "tagging-mock"
    }

    fn translate(&self, text: &str, _from: &str, to: &str) -> hatemm::Result<String> {
        Ok(format!("{text} [{to}]"))
    }
}

fn criterion_5() -> Outcome {
    let ds = fixture_with_text();
    let train = ds.split_len(Split::Train);
    let chains = default_chains();
    let options = AugmentOptions::default();
    let start = Instant::now();
    let mocked = augment_dataset(&ds, &chains, &TaggingTranslator, None, None, &options).map_err(|e| e.to_string())?;
    let identity =
        augment_dataset(&ds, &chains, &IdentityTranslator, None, None, &options).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(
        mocked.dataset.len() == 2 * train,
        "{} copies for {train} train instances",
        mocked.dataset.len()
    );
    ensure!(
        identity.dataset.len() == 2 * train,
        "identity produced {} copies",
        identity.dataset.len()
    );
    for inst in mocked.dataset.instances() {
        let parent = ds.get(inst.parent_id().unwrap()).unwrap();
        ensure!(inst.label == parent.label, "{} label differs from parent", inst.id);
        ensure!(inst.text != parent.text, "{} was not translated", inst.id);
    }
    for inst in identity.dataset.instances() {
        let parent = ds.get(inst.parent_id().unwrap()).unwrap();
        ensure!(inst.text == parent.text, "identity changed {}", inst.id);
        ensure!(inst.label == parent.label, "{} label differs from parent", inst.id);
    }
    ensure!(elapsed < AUGMENT_BUDGET, "took {elapsed:?}");
    Ok(format!(
        "{} copies from {train} train instances, labels preserved, {elapsed:?}",
        mocked.dataset.len()
    ))
}

fn criterion_6() -> Outcome {
    let mut checked = 0;
    for task in [TaskId::A, TaskId::B] {
        let scheme = LabelScheme::for_task(task);
        for label in scheme.labels() {
            let wrapped = wrap_label(&label.name);
            let alt = wrapped.replace("<\\label>", "</label>");
            ensure!(alt != wrapped, "alternative closing tag not substituted");
            for response in [wrapped, alt] {
                let code = parse_label(&response, &scheme).map_err(|e| e.to_string())?;
                ensure!(code == label.code, "{response:?} parsed as {code}");
                checked += 1;
            }
        }
    }
    ensure!(checked == 10, "expected 10 round trips, got {checked}");

    let ds = fixture_with_text();
    let eval = ds.subset(Split::Eval);
    let fallback = 2;
    let spec = PromptSpec::for_scheme(&scheme_b(), PromptMode::ZeroShot);
    let mut options = LlmOptions::default();
    options.retry.base_delay_ms = 0;
    for junk in ["", "I think it is hateful", "<label> PARTY <\\label>", "<label>"] {
        let provider = MockLlmProvider::constant(junk);
        let run = run_llm(&eval, &spec, &provider, None, fallback, &options, None).map_err(|e| e.to_string())?;
        ensure!(
            run.predictions.len() == eval.len(),
            "{junk:?}: {} predictions",
            run.predictions.len()
        );
        ensure!(run.fallbacks == eval.len(), "{junk:?}: {} fallbacks", run.fallbacks);
        ensure!(
            run.predictions.iter().all(|p| p.label == fallback),
            "{junk:?}: non-fallback label"
        );
    }
    Ok(format!("{checked} round trips, malformed responses fall back"))
}

fn criterion_7() -> Outcome {
    let dir = fixture_dir();
    let ds = load_dataset(&dir.join("manifest.csv"), &scheme_b()).map_err(|e| e.to_string())?;
    let table: BTreeMap<String, String> =
        serde_json::from_slice(&std::fs::read(dir.join("ocr_table.json")).unwrap()).unwrap();
    let provider = MockOcrProvider::from_files(table.iter().map(|(p, t)| (dir.join(p), t.clone()))).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let cache = DiskCache::open(tmp.path(), "ocr").unwrap();
    let options = OcrOptions::default();

    let first = extract_text(&ds, &provider, &cache, &options).map_err(|e| e.to_string())?;
    ensure!(
        first.provider_calls as u64 == FIXTURE_IMAGES,
        "first pass made {} calls",
        first.provider_calls
    );
    let calls = provider.calls();
    let before = cache_stats(&cache);
    let second = extract_text(&ds, &provider, &cache, &options).map_err(|e| e.to_string())?;
    let after = cache_stats(&cache);
    ensure!(
        second.provider_calls == 0 && provider.calls() == calls,
        "second pass called the provider"
    );
    ensure!(
        after.hits - before.hits == FIXTURE_IMAGES,
        "hits rose by {}",
        after.hits - before.hits
    );
    ensure!(second.dataset == first.dataset, "second pass produced different text");
    Ok(format!("0 provider calls, +{} cache hits", after.hits - before.hits))
}

fn run_all(dir: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let out = Command::new(bin())
        .arg("--config")
        .arg(dir.join("config.toml"))
        .arg("run-all")
        .output()
        .unwrap();
    ensure!(
        out.status.success(),
        "run-all failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(start.elapsed())
}

/// Every file under `work/` except run state and caches, keyed by relative path.
fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            if rel == "state" || rel == "cache" {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let root = dir.join("work");
    let mut out = BTreeMap::new();
    walk(&root, &root, &mut out);
    out
}

fn criterion_8() -> Outcome {
    let (one, two) = (fixture_copy(), fixture_copy());
    let t1 = run_all(one.path())?;
    let t2 = run_all(two.path())?;
    ensure!(
        t1 < RUN_ALL_BUDGET && t2 < RUN_ALL_BUDGET,
        "run-all took {t1:?} / {t2:?}"
    );
    let (a, b) = (artifacts(one.path()), artifacts(two.path()));
    ensure!(a.len() >= 10, "only {} artifacts", a.len());
    ensure!(a.keys().eq(b.keys()), "artifact sets differ");
    for (name, bytes) in &a {
        ensure!(b[name] == *bytes, "{name} differs between runs");
    }
    let table: ResultsTable = serde_json::from_slice(&a["reports/task-B/report.json"]).unwrap();
    let mut stub_rows = 0;
    for row in table.rows.iter().filter(|r| r.group == "models") {
        for report in [&row.eval, &row.test] {
            let f1 = report.as_ref().map(|r| r.macro_f1);
            ensure!(f1 == Some(1.0), "{} scored {f1:?}", row.name);
        }
        stub_rows += 1;
    }
    ensure!(stub_rows == 3, "expected 3 model rows, got {stub_rows}");
    Ok(format!(
        "{} identical artifacts, runs took {t1:?} and {t2:?}, stub macro-F1 1.0",
        a.len()
    ))
}

fn seeded(rows: &[(&str, &str, Option<f64>, Option<f64>)], task: TaskId, title: &str) -> ResultsTable {
    let scheme = LabelScheme::for_task(task);
    rows.iter()
        .fold(ResultsTable::new(title), |t, (group, name, eval, test)| {
            t.row(
                group,
                name,
                eval.map(|f| EvalReport::headline(&scheme, f)),
                test.map(|f| EvalReport::headline(&scheme, f)),
            )
        })
}

fn render(table: &ResultsTable) -> String {
    match render_report(table, ReportFormat::TextTable).unwrap() {
        Artifact::Text(t) => t,
        _ => unreachable!(),
    }
}

fn check_best(text: &str, name: &str, value: &str) -> Result<(), String> {
    let bold: Vec<&str> = text.lines().filter(|l| l.contains("**")).collect();
    ensure!(bold.len() == 1, "{} bold rows", bold.len());
    let tokens: Vec<&str> = bold[0].split_whitespace().collect();
    let row_name = tokens[..tokens.len().saturating_sub(2)].join(" ");
    ensure!(row_name == name, "best row is {row_name:?}");
    ensure!(
        bold[0].ends_with(&format!("**{value}**")),
        "best cell is not {value}: {:?}",
        bold[0]
    );
    ensure!(
        text.contains(&format!("best: {name} (test macro-F1 {value})")),
        "footer does not name {name} {value}"
    );
    Ok(())
}

fn criterion_9() -> Outcome {
    let table_a = seeded(
        &[
            ("llm", "GPT3.5 (Zero Shot)", None, Some(0.73)),
            ("llm", "GPT3.5 (Few Shot)", None, Some(0.77)),
            ("llm", "GPT3.5 (FineTuned)", Some(0.86), Some(0.82)),
            ("models", "BERT-base", Some(0.81), Some(0.75)),
            ("models", "BERTweet-large", Some(0.89), Some(0.81)),
            ("models", "XLM-R", Some(0.95), Some(0.83)),
        ],
        TaskId::A,
        "Results of sub-task A",
    );
    let table_b = seeded(
        &[
            ("llm", "GPT3.5 (Zero Shot)", None, Some(0.53)),
            ("llm", "GPT3.5 (Few Shot)", None, Some(0.57)),
            ("llm", "GPT3.5 (FineTuned)", Some(0.65), Some(0.63)),
            ("models", "BERT-base", Some(0.61), Some(0.60)),
            ("models", "XLM-R", Some(0.63), Some(0.61)),
            ("models", "BERTweet-large", Some(0.68), Some(0.64)),
            ("ensemble", "Ensemble", Some(0.69), Some(0.65)),
            ("models-aug", "BERT-base (Aug.)", Some(0.63), Some(0.61)),
            ("models-aug", "XLM-R (Aug.)", Some(0.65), Some(0.64)),
            ("models-aug", "BERTweet-large (Aug.)", Some(0.70), Some(0.66)),
            ("ensemble-aug", "Ensemble (Aug.)", Some(0.71), Some(0.67)),
        ],
        TaskId::B,
        "Results of sub-task B",
    );
    let (a, b) = (render(&table_a), render(&table_b));
    check_best(&a, "XLM-R", "0.83").map_err(|e| format!("table A: {e}"))?;
    check_best(&b, "Ensemble (Aug.)", "0.67").map_err(|e| format!("table B: {e}"))?;
    // Layout: header, one rule per group boundary, "--" for missing eval.
    for (text, rows, groups) in [(&a, 6, 2), (&b, 11, 5)] {
        ensure!(
            text.contains("Model") && text.contains("Eval F1") && text.contains("Test F1"),
            "header missing"
        );
        let rules = text
            .lines()
            .filter(|l| !l.is_empty() && l.chars().all(|c| c == '-'))
            .count();
        ensure!(rules == 2 + groups, "{rules} rules for {groups} groups");
        let data_rows = text.lines().filter(|l| l.contains("0.")).count() - 1;
        ensure!(data_rows == rows, "{data_rows} data rows, expected {rows}");
        ensure!(
            text.lines()
                .filter(|l| l.contains("GPT3.5 (") && l.contains("--"))
                .count()
                == 2,
            "missing eval not shown as --"
        );
    }
    Ok("XLM-R 0.83 and Ensemble (Aug.) 0.67 marked best".into())
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored.
    let criteria: [Criterion; 9] = [
        ("voting oracle", criterion_1),
        ("metric oracle", criterion_2),
        ("confusion invariants", criterion_3),
        ("distribution fixture", criterion_4),
        ("augmentation laws", criterion_5),
        ("prompt round trip", criterion_6),
        ("OCR idempotence", criterion_7),
        ("end-to-end determinism", criterion_8),
        ("report fixtures", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
