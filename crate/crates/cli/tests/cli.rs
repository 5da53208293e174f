//! Integration tests of the command surface: exit codes, diagnostics, and a
//! subcommand chain over real files, driven in-process through `run`.

use std::fs;
use std::path::Path;

use prefkit_cli::run;

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["prefkit"];
    argv.extend_from_slice(args);
    run(argv)
}

fn write_dataset(path: &Path) {
    let mut lines = String::new();
    for i in 0..20 {
        let (better, worse) = if i % 4 == 0 {
            ("ab", "a longer text")
        } else {
            ("a longer text", "ab")
        };
        lines.push_str(&format!(
            r#"{{"id":"e{i}","task_type":"chat","request":"req {i}","better":"{better}","worse":"{worse}","source":"t"}}"#
        ));
        lines.push('\n');
    }
    fs::write(path, lines).unwrap();
}

#[test]
fn no_arguments_is_a_usage_error() {
    assert_eq!(cli(&[]), 1);
    assert_eq!(cli(&["definitely-not-a-command"]), 1);
    assert_eq!(cli(&["--help"]), 0);
}

#[test]
fn unknown_recipe_exits_one() {
    assert_eq!(cli(&["recipe", "no-such-recipe"]), 1);
}

#[test]
fn invalid_task_type_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(
        &path,
        r#"{"id":"x","task_type":"chitchat","request":"r","better":"b","worse":"w","source":"s"}"#,
    )
    .unwrap();
    assert_eq!(cli(&["corpus", "stats", "--in", path.to_str().unwrap()]), 2);
}

#[test]
fn missing_input_file_exits_two() {
    assert_eq!(cli(&["corpus", "stats", "--in", "/no/such/file.jsonl"]), 2);
}

#[test]
fn bad_config_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"not_a_field": 1}"#).unwrap();
    let ds = dir.path().join("d.jsonl");
    write_dataset(&ds);
    assert_eq!(
        cli(&[
            "--config",
            cfg.to_str().unwrap(),
            "corpus",
            "stats",
            "--in",
            ds.to_str().unwrap()
        ]),
        1
    );
}

#[test]
fn corpus_chain_preserves_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.jsonl");
    write_dataset(&input);
    let before = fs::read(&input).unwrap();

    let balanced = dir.path().join("balanced.jsonl");
    assert_eq!(
        cli(&[
            "--seed",
            "3",
            "corpus",
            "balance",
            "--in",
            input.to_str().unwrap(),
            "--out-file",
            balanced.to_str().unwrap(),
            "--by",
            "length"
        ]),
        0
    );
    let stats_csv = dir.path().join("stats.csv");
    assert_eq!(
        cli(&[
            "corpus",
            "stats",
            "--in",
            balanced.to_str().unwrap(),
            "--csv",
            stats_csv.to_str().unwrap()
        ]),
        0
    );
    let csv = fs::read_to_string(&stats_csv).unwrap();
    assert!(csv.starts_with("task_type,better_longer,better_shorter,equal,percent_better_longer"));
    // Balanced by length: chat row has equal longer/shorter counts.
    let chat = csv.lines().find(|l| l.starts_with("chat,")).unwrap();
    let fields: Vec<&str> = chat.split(',').collect();
    assert_eq!(fields[1], fields[2]);

    let splits = dir.path().join("splits");
    assert_eq!(
        cli(&[
            "--seed",
            "3",
            "corpus",
            "split",
            "--in",
            input.to_str().unwrap(),
            "--fractions",
            "0.5,0.5",
            "--out-dir",
            splits.to_str().unwrap()
        ]),
        0
    );
    assert!(splits.join("part0.jsonl").exists());
    assert!(splits.join("part1.jsonl").exists());

    // Invalid fractions are a data error (the dataset was readable).
    assert_eq!(
        cli(&[
            "corpus",
            "split",
            "--in",
            input.to_str().unwrap(),
            "--fractions",
            "0.5,0.6",
            "--out-dir",
            splits.to_str().unwrap()
        ]),
        2
    );

    assert_eq!(fs::read(&input).unwrap(), before, "input file was mutated");
}

#[test]
fn lm_and_scan_chain_works() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let mut lines = String::new();
    for i in 0..60 {
        lines.push_str(&format!(r#"{{"request":"ask{i}","response":"ans{i}"}}"#));
        lines.push('\n');
    }
    fs::write(&corpus, lines).unwrap();
    let ckpt = dir.path().join("lm.json");
    assert_eq!(
        cli(&[
            "--seed",
            "1",
            "lm",
            "train",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out-ckpt",
            ckpt.to_str().unwrap(),
            "--epochs",
            "1",
            "--context-window",
            "6",
            "--embed-dim",
            "4",
            "--hidden-dim",
            "8"
        ]),
        0
    );
    assert!(ckpt.exists());
    assert_eq!(
        cli(&[
            "lm",
            "ppl",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--request",
            "ask1",
            "--response",
            "ans1"
        ]),
        0
    );

    let responses = dir.path().join("responses.jsonl");
    fs::write(
        &responses,
        format!(
            "{}\n{}\n",
            r#"{"id":"clean","text":"nothing odd here","hit_cap":false}"#,
            format!(
                r#"{{"id":"loopy","text":"{}","hit_cap":true}}"#,
                "abcd".repeat(10)
            )
        ),
    )
    .unwrap();
    let verdicts = dir.path().join("verdicts.jsonl");
    let summary = dir.path().join("summary.csv");
    assert_eq!(
        cli(&[
            "scan",
            "repeats",
            "--in",
            responses.to_str().unwrap(),
            "--verdicts",
            verdicts.to_str().unwrap(),
            "--summary",
            summary.to_str().unwrap(),
            "--multi-min-len",
            "3",
            "--multi-min-count",
            "4",
            "--tandem-min-len",
            "5"
        ]),
        0
    );
    let verdict_lines: Vec<String> = fs::read_to_string(&verdicts)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(verdict_lines.len(), 2);
    assert!(verdict_lines[0].contains(r#""multiple":false"#));
    assert!(verdict_lines[1].contains(r#""cycle":true"#));
    assert!(verdict_lines[1].contains(r#""witness""#));
    let summary_text = fs::read_to_string(&summary).unwrap();
    assert!(summary_text.starts_with("total,cycles,repetitions,cycle_rate,repetition_rate"));
}

#[test]
fn report_subcommands_render_files() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("sbs.jsonl");
    fs::write(
        &records,
        concat!(
            r#"{"id":"1","task_type":"chat","verdict":"A"}"#,
            "\n",
            r#"{"id":"2","task_type":"chat","verdict":"B"}"#,
            "\n",
            r#"{"id":"3","task_type":"extract","verdict":"tie"}"#,
            "\n"
        ),
    )
    .unwrap();
    let csv = dir.path().join("sbs.csv");
    let svg = dir.path().join("sbs.svg");
    assert_eq!(
        cli(&[
            "report",
            "sbs",
            "--in",
            records.to_str().unwrap(),
            "--out-csv",
            csv.to_str().unwrap(),
            "--out-svg",
            svg.to_str().unwrap()
        ]),
        0
    );
    assert!(fs::read_to_string(&csv).unwrap().contains("overall,1,1,1,0.5000,0.5000"));
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let history = dir.path().join("hist.csv");
    fs::write(&history, "batch,score\n0,1.0\n1,2.0\n").unwrap();
    let curves = dir.path().join("curves.svg");
    assert_eq!(
        cli(&[
            "report",
            "curves",
            "--history",
            history.to_str().unwrap(),
            "--columns",
            "score",
            "--out-svg",
            curves.to_str().unwrap()
        ]),
        0
    );
    // A missing column is a data error.
    assert_eq!(
        cli(&[
            "report",
            "curves",
            "--history",
            history.to_str().unwrap(),
            "--columns",
            "latency",
            "--out-svg",
            curves.to_str().unwrap()
        ]),
        2
    );
}

#[test]
fn dpo_unknown_preset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    // The preset resolves before any file is touched, so this is a usage
    // error even though the paths do not exist.
    assert_eq!(
        cli(&[
            "dpo",
            "train",
            "--base",
            dir.path().join("missing.json").to_str().unwrap(),
            "--dataset",
            dir.path().join("missing.jsonl").to_str().unwrap(),
            "--out-ckpt",
            dir.path().join("out.json").to_str().unwrap(),
            "--preset",
            "mystery"
        ]),
        1,
    );
}
