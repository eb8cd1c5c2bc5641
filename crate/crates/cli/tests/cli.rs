use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command as Process;

use clap::Parser;
use ibi_cli::args::Command;
use ibi_cli::config::FileConfig;
use ibi_cli::{main_with, plan_run, Cli, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};
use ibi_core::corpus::SplitSpec;
use ibi_core::gateway::ModelSpec;
use ibi_core::pipeline::TaskKind;
use ibi_core::promptkit::MethodKind;
use ibi_core::taxonomy::IntentCode;
use serde_json::{json, Value};

fn invoke(workdir: &Path, args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["ibi".to_string(), "--workdir".into(), workdir.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn ok(workdir: &Path, args: &[&str]) -> String {
    let (code, out, err) = invoke(workdir, args);
    assert_eq!(code, EXIT_OK, "{args:?} failed: {err}");
    out
}

fn ok_json(workdir: &Path, args: &[&str]) -> Value {
    serde_json::from_str(&ok(workdir, args)).unwrap()
}

/// `n` documents; the first half disinformation, articles before posts,
/// dated across the 2024-09 / 2024-10 boundary.
fn write_corpus(dir: &Path, n: usize) -> std::path::PathBuf {
    let path = dir.join("raw.jsonl");
    let body: String = (0..n)
        .map(|i| {
            let disinfo = i < n / 2;
            let row = json!({
                "id": format!("d{i:02}"),
                "text": format!("Report {i} about {}", if disinfo { "a hidden plot" } else { "the weather" }),
                "credibility": if disinfo { "Disinformation" } else { "Credible" },
                "intents": if disinfo { vec!["UCPI"] } else { vec![] },
                "genre": if i % 2 == 0 { "article" } else { "post" },
                "language": "en",
                "published": if i % 3 == 0 { "2024-09-30" } else { "2024-10-01" },
            });
            format!("{row}\n")
        })
        .collect();
    fs::write(&path, body).unwrap();
    path
}

fn write_script(path: &Path, entries: &[Value]) {
    let body: String = entries.iter().map(|e| format!("{e}\n")).collect();
    fs::write(path, body).unwrap();
}

fn verdict(label: &str) -> String {
    json!({ "verdict": label }).to_string()
}

fn all_no() -> String {
    json!({"UCPI": "No", "CPV": "No", "UIOA": "No", "PSSA": "No", "PASV": "No"}).to_string()
}

#[test]
fn offline_ibi_run_writes_two_rows_per_document() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path();
    let raw = write_corpus(wd, 12);
    ok(wd, &["ingest", raw.to_str().unwrap()]);
    write_script(
        &wd.join("mock-script.jsonl"),
        &[
            json!({"doc_id": "*", "stage": "intent_analysis", "reply": all_no()}),
            json!({"doc_id": "*", "stage": "detection", "reply": verdict("Credible")}),
        ],
    );
    let summary = ok_json(wd, &["run", "--task", "detect", "--method", "van", "--ibi", "--model", "mock:scripted:7"]);
    assert_eq!(summary["documents"], 12);
    assert_eq!(summary["rows"], 24);
    assert_eq!(summary["errors"], 0);
    let run_id = summary["run_id"].as_str().unwrap();
    let rows = fs::read_to_string(wd.join("runs").join(run_id).join("rows.jsonl")).unwrap();
    let stages: Vec<String> = rows
        .lines()
        .filter_map(|l| serde_json::from_str::<Value>(l).ok())
        .filter_map(|v| v.get("stage").and_then(Value::as_str).map(String::from))
        .collect();
    assert_eq!(stages.len(), 24);
    assert_eq!(stages.iter().filter(|s| *s == "intent_analysis").count(), 12);
    assert!(wd.join("runs").join(run_id).join("config.json").is_file());

    // Same id again without --resume is a domain error; with it nothing runs.
    let (code, _, err) = invoke(wd, &["run", "--task", "detect", "--method", "van", "--ibi", "--model", "mock:scripted:7"]);
    assert_eq!(code, EXIT_DOMAIN, "{err}");
    let again = ok_json(
        wd,
        &["run", "--task", "detect", "--method", "van", "--ibi", "--model", "mock:scripted:7", "--resume"],
    );
    assert_eq!(again["executed"], 0);

    let eval = ok_json(wd, &["eval", "--run", run_id, "--split", "genre"]);
    let overall = &eval["results"]["overall"];
    assert_eq!(overall["documents"], 12);
    assert_eq!(overall["micro_f1"], 0.0);
    assert!(eval["results"]["articles"].is_object());
    assert_eq!(eval["intent_conditioned"].as_array().unwrap().len(), 5);
    let intents = ok_json(wd, &["eval", "--run", run_id, "--task", "intent-multilabel"]);
    assert_eq!(intents["task"], "intent-multilabel");
}

/// Base is wrong and IBI right on 10 documents, the reverse on 2.
fn discordant_runs(wd: &Path) -> (String, String) {
    let raw = write_corpus(wd, 30);
    ok(wd, &["ingest", raw.to_str().unwrap()]);
    let gold = |i: usize| if i < 15 { "Disinformation" } else { "Credible" };
    let flip = |i: usize| if i < 15 { "Credible" } else { "Disinformation" };
    let mut base = Vec::new();
    let mut ibi = vec![json!({"doc_id": "*", "stage": "intent_analysis", "reply": all_no()})];
    for i in 0..30 {
        let id = format!("d{i:02}");
        let (b, c) = match i {
            0..=9 => (flip(i), gold(i)),
            10..=11 => (gold(i), flip(i)),
            _ => (gold(i), gold(i)),
        };
        base.push(json!({"doc_id": id, "stage": "detection", "reply": verdict(b)}));
        ibi.push(json!({"doc_id": id, "stage": "detection", "reply": verdict(c)}));
    }
    write_script(&wd.join("base.jsonl"), &base);
    write_script(&wd.join("ibi.jsonl"), &ibi);
    let base_script = wd.join("base.jsonl");
    let ibi_script = wd.join("ibi.jsonl");
    ok(
        wd,
        &[
            "run", "--task", "detect", "--method", "zcot", "--model", "mock:scripted:1",
            "--mock-script", base_script.to_str().unwrap(), "--run-id", "base",
        ],
    );
    ok(
        wd,
        &[
            "run", "--task", "detect", "--method", "zcot", "--ibi", "--model", "mock:scripted:1",
            "--mock-script", ibi_script.to_str().unwrap(), "--run-id", "ibi", "--concurrency", "4",
        ],
    );
    ("base".into(), "ibi".into())
}

#[test]
fn compare_reports_exact_mcnemar_p_for_the_discordant_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path();
    let (base, ibi) = discordant_runs(wd);
    let out = ok_json(wd, &["compare", "--base-run", &base, "--ibi-run", &ibi, "--test", "mcnemar"]);
    let overall = &out["results"][0];
    assert_eq!(overall["scope"], "overall");
    assert_eq!(overall["mcnemar"]["b"], 10);
    assert_eq!(overall["mcnemar"]["c"], 2);
    let p = overall["mcnemar"]["p_value"].as_f64().unwrap();
    // 2 * sum_{i<=2} C(12, i) / 2^12
    assert!((p - 158.0 / 4096.0).abs() < 1e-12, "{p}");
    assert!((p - 0.0386).abs() < 5e-5);
    assert_eq!(overall["mcnemar"]["significance"], "p<0.05");
    // Base: tp 5, fn 10 -> 10/20. IBI: tp 13, fn 2 -> 26/28.
    assert!((overall["base_f1"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((overall["ibi_f1"].as_f64().unwrap() - 26.0 / 28.0).abs() < 1e-12);

    let split = ok_json(wd, &["compare", "--base-run", &base, "--ibi-run", &ibi, "--split", "temporal:2024-09"]);
    let scopes: Vec<&str> = split["results"].as_array().unwrap().iter().map(|r| r["scope"].as_str().unwrap()).collect();
    assert_eq!(scopes, ["overall", "prior", "post"]);
    assert_eq!(split["results"][1]["documents"], 10);
}

#[test]
fn comparison_report_pairs_runs_and_refuses_orphans() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path();
    let (base, ibi) = discordant_runs(wd);
    let runs = format!("{base},{ibi}");
    let md = ok(wd, &["report", "--kind", "comparison", "--runs", &runs, "--split", "genre", "--name", "table6"]);
    assert!(md.contains("| Z-CoT | mock:scripted:1 | 0.500 | 0.929 | +0.429 | +85.7% | p<0.05 |"), "{md}");
    assert!(md.contains("Articles Base"));
    assert!(md.contains("`base`") && md.contains("`ibi`"));
    let csv = fs::read_to_string(wd.join("reports/table6.csv")).unwrap();
    assert!(csv.starts_with("Method,Model,Overall Base,"));
    assert!(wd.join("reports/table6.md").is_file());

    let (code, _, err) = invoke(wd, &["report", "--kind", "comparison", "--runs", &base]);
    assert_eq!(code, EXIT_DOMAIN);
    assert!(err.contains("no IBI counterpart"), "{err}");
    let (code, _, _) = invoke(wd, &["report", "--kind", "comparison"]);
    assert_eq!(code, EXIT_DOMAIN);

    let md = ok(wd, &["report", "--kind", "detection", "--runs", &runs]);
    assert!(md.contains("Precision"));
}

#[test]
fn corpus_tooling_and_distribution_report() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path();
    let raw = write_corpus(wd, 40);
    let ingest = ok_json(wd, &["ingest", raw.to_str().unwrap(), "--name", "full"]);
    assert_eq!(ingest["documents"], 40);
    let sample = ok_json(wd, &["sample", "--corpus", "full", "--n", "20", "--seed", "3", "--out", "s20"]);
    assert_eq!(sample["classes"]["Disinformation"], 6);
    assert_eq!(sample["classes"]["Credible"], 14);
    let split = ok_json(wd, &["split", "--corpus", "full", "--kind", "temporal", "--cutoff", "2024-09"]);
    assert_eq!(split["sides"]["prior"]["documents"], 14);
    assert_eq!(split["sides"]["post"]["documents"], 26);
    assert!(wd.join("corpus/full.prior.jsonl").is_file());
    let md = ok(wd, &["report", "--kind", "distribution", "--corpus", "Sample=s20,Full=full", "--name", "dist"]);
    assert!(md.contains("| Sample | 20 | 30% / 70% |"), "{md}");
    assert!(md.contains("| Full | 40 | 50% / 50% |"), "{md}");
}

#[test]
fn classic_baseline_writes_interchange_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path();
    let raw = write_corpus(wd, 40);
    ok(wd, &["ingest", raw.to_str().unwrap()]);
    let out = ok_json(wd, &["baseline", "--name", "logreg", "--train", "corpus", "--test", "corpus", "--out", "lr"]);
    assert_eq!(out["report"]["micro_f1"], 1.0);
    let eval = ok_json(wd, &["eval", "--predictions", wd.join("predictions/lr.jsonl").to_str().unwrap()]);
    assert_eq!(eval["results"]["overall"]["micro_f1"], 1.0);
    let random = ok_json(wd, &["baseline", "--name", "random", "--train", "corpus", "--test", "corpus", "--out", "rnd"]);
    assert!(random["report"]["micro_f1"].as_f64().unwrap() < 1.0);
    let (code, _, _) = invoke(wd, &["baseline", "--name", "svm", "--train", "corpus", "--test", "corpus", "--out", "x"]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn intent_runs_feed_the_intent_report() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path();
    let raw = write_corpus(wd, 10);
    ok(wd, &["ingest", raw.to_str().unwrap()]);
    ok(wd, &["run", "--task", "intent-multilabel", "--model", "mock:echo:2", "--run-id", "ml"]);
    ok(wd, &["run", "--task", "intent-binary", "--intent", "UCPI", "--model", "mock:always-disinfo:0", "--run-id", "b1"]);
    ok(wd, &["run", "--task", "intent-binary", "--intent", "CPV", "--model", "mock:always-disinfo:0", "--run-id", "b2"]);
    let md = ok(wd, &["report", "--kind", "intent", "--runs", "ml,b1,b2"]);
    assert!(md.contains("| UCPI | CPV | UIOA | PSSA | PASV | Micro F1 | Weighted F1 |"), "{md}");
    assert!(md.contains("| mock:always-disinfo:0 | Binary |"), "{md}");
    assert!(md.contains("| mock:echo-intent-keys:2 | Multilabel |"), "{md}");
}

#[test]
fn usage_errors_exit_2_with_subcommand_help() {
    let dir = tempfile::tempdir().unwrap();
    let output = Process::new(env!("CARGO_BIN_EXE_ibi"))
        .args(["--workdir", dir.path().to_str().unwrap(), "run", "--no-such-flag"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_USAGE));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--no-such-flag"));
    assert!(stderr.contains("Options:") && stderr.contains("--mock-script"), "{stderr}");

    let (code, _, err) = invoke(dir.path(), &["run", "--task", "detect", "--model", "mock:credible:0"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("needs --method") && err.contains("Usage:"), "{err}");
    let (code, _, _) = invoke(dir.path(), &["run", "--task", "detect", "--method", "van", "--model", "mock:nonsense:0"]);
    assert_eq!(code, EXIT_USAGE);
    let (code, _, _) = invoke(dir.path(), &[]);
    assert_eq!(code, EXIT_USAGE);
    let (code, out, _) = invoke(dir.path(), &["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("compare"));
    // Missing corpus is a domain error, not a usage error.
    let (code, _, _) = invoke(dir.path(), &["run", "--task", "detect", "--method", "van", "--model", "mock:credible:0"]);
    assert_eq!(code, EXIT_DOMAIN);
}

#[test]
fn config_file_overrides_catalog_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("ibi.toml"),
        "[models.gpt-4o-mini]\nendpoint = \"http://127.0.0.1:9/v1\"\nauth_env = \"MY_KEY\"\n[request]\nmax_tokens = 256\n",
    )
    .unwrap();
    let cli = Cli::try_parse_from([
        "ibi", "run", "--task", "detect", "--method", "defspec", "--model", "gpt-4o-mini", "--max-tokens", "128",
    ])
    .unwrap();
    let Command::Run(args) = cli.command else { panic!() };
    let cfg = FileConfig::load(None, dir.path()).unwrap();
    let plan = plan_run(dir.path(), cfg, &args).unwrap();
    assert_eq!(plan.model.endpoint, "http://127.0.0.1:9/v1");
    assert_eq!(plan.model.auth_env, "MY_KEY");
    assert_eq!(plan.options.max_tokens, Some(128));
}

/// Every model x method x {Base, IBI} x split detection setup, plus the
/// intent classification setups, maps to a distinct run configuration.
#[test]
fn configuration_matrix_is_expressible() {
    let dir = tempfile::tempdir().unwrap();
    let models: Vec<&str> = ModelSpec::catalog().iter().map(|(alias, _)| *alias).collect();
    assert_eq!(models.len(), 5);
    let splits = [None, Some("genre"), Some("temporal")];
    let mut ids = BTreeSet::new();
    let mut count = 0;
    let plan = |argv: Vec<String>| {
        let cli = Cli::try_parse_from(argv).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        plan_run(dir.path(), FileConfig::default(), &args).unwrap()
    };
    for model in &models {
        let spec = ModelSpec::from_catalog(model).unwrap();
        for method in MethodKind::ALL {
            for ibi in [false, true] {
                for split in splits {
                    let mut argv: Vec<String> = ["ibi", "run", "--task", "detect", "--method", method.key(), "--model", model]
                        .iter()
                        .map(|s| s.to_string())
                        .collect();
                    if ibi {
                        argv.push("--ibi".into());
                    }
                    if let Some(s) = split {
                        argv.extend(["--split".to_string(), s.to_string()]);
                    }
                    let cfg = plan(argv);
                    let expected = if ibi { TaskKind::DetectIbi(method) } else { TaskKind::DetectBaseline(method) };
                    assert_eq!(cfg.task, expected);
                    assert_eq!(cfg.model, spec);
                    assert_eq!(cfg.options.temperature, 0.0);
                    let want_split = split.map(|s| match s {
                        "genre" => SplitSpec::Genre,
                        _ => SplitSpec::TemporalCutoff { cutoff: spec.cutoff.unwrap() },
                    });
                    assert_eq!(cfg.split, want_split);
                    ids.insert(cfg.run_id);
                    count += 1;
                }
            }
        }
        for code in IntentCode::ALL {
            let cfg = plan(
                ["ibi", "run", "--task", "intent-binary", "--intent", code.as_str(), "--model", model]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            );
            assert_eq!(cfg.task, TaskKind::IntentBinary(code));
            ids.insert(cfg.run_id);
            count += 1;
        }
        let cfg = plan(
            ["ibi", "run", "--task", "intent-multilabel", "--model", model].iter().map(|s| s.to_string()).collect(),
        );
        assert_eq!(cfg.task, TaskKind::IntentMultilabel);
        ids.insert(cfg.run_id);
        count += 1;
    }
    assert_eq!(count, 5 * 3 * 2 * 3 + 5 * 6);
    assert_eq!(ids.len(), count, "default run ids collide");
}
