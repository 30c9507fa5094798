use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const KING_AVE: &str = "PLAIN\tI\t<self>\nPLAIN\tlive\t<self>\nPLAIN\tat\t<self>\n\
CARDINAL\t123\tone twenty three\nPLAIN\tKing\t<self>\nADDRESS\tAve\tAvenue\n<eos>\t<eos>\n";

fn textnorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textnorm")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn validate_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    fs::write(&corpus, format!("{KING_AVE}PUNCT\t.\tsil\n<eos>\t<eos>\n")).unwrap();
    let out = textnorm(&["validate", "--corpus", p(&corpus)]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("sentences    2"), "{text}");
    assert!(text.contains("tokens       7"), "{text}");
    assert!(text.contains("non-trivial  2"), "{text}");
    assert!(text.lines().any(|l| l.split_whitespace().eq(["PLAIN", "4"])), "{text}");
}

#[test]
fn validate_reports_malformed_line_as_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.tsv");
    fs::write(&corpus, "PLAIN\tI\t<self>\nPLAIN\tlive\n<eos>\t<eos>\n").unwrap();
    let out = textnorm(&["validate", "--corpus", p(&corpus)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn encode_reproduces_edit_targets() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    fs::write(&corpus, format!("{KING_AVE}PLAIN\thello\t<self>\n<eos>\t<eos>\n")).unwrap();

    let out = textnorm(&["encode", "--corpus", p(&corpus), "--repr", "untok-edits"]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], "pos10 one twenty three pos13 pos19 Avenue pos22");
    assert_eq!(lines[3], "");

    let out = textnorm(&["encode", "--corpus", p(&corpus), "--repr", "tok-edits"]);
    assert_eq!(stdout(&out).lines().nth(1), Some("pos3 one twenty three pos5 Avenue"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(textnorm(&["encode", "--repr", "nonsense"]).status.code(), Some(1));
    assert_eq!(textnorm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(textnorm(&["generate", "--count", "3"]).status.code(), Some(1), "seed is mandatory");
}

#[test]
fn config_version_is_checked_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "version = 2\n").unwrap();
    assert_eq!(textnorm(&["generate", "--seed", "1", "--config", p(&cfg)]).status.code(), Some(1));

    fs::write(&cfg, "version = 1\nseed = 5\n").unwrap();
    let from_config = stdout(&textnorm(&["generate", "--count", "4", "--config", p(&cfg)]));
    let from_flag = stdout(&textnorm(&["generate", "--count", "4", "--config", p(&cfg), "--seed", "6"]));
    let plain = stdout(&textnorm(&["generate", "--count", "4", "--seed", "5"]));
    assert_eq!(from_config, plain);
    assert_ne!(from_flag, plain);
}

#[test]
fn gradcheck_prints_max_relative_error() {
    let out = textnorm(&["gradcheck", "--samples", "20"]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    let line = text.lines().find(|l| l.starts_with("max rel err")).expect("summary line");
    let value: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(value < 1e-4, "{line}");
}

#[test]
fn train_evaluate_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let cfg = d("tiny.toml");
    fs::write(&cfg, "version = 1\n[model]\nd_model = 16\nd_ff = 32\nn_layers = 1\n[train]\nbatch_size = 4\n").unwrap();
    let gen = textnorm(&["generate", "--count", "30", "--seed", "3", "--out", p(&d("c.tsv"))]);
    assert!(gen.status.success(), "{gen:?}");

    let train = |ck: &Path| {
        let out = textnorm(&[
            "train", "--config", p(&cfg), "--corpus", p(&d("c.tsv")), "--split", "train", "--seed", "9", "--steps", "15",
            "--checkpoint", p(ck), "--lexicon", p(&d("lex.tsv")),
        ]);
        assert!(out.status.success(), "{out:?}");
        fs::read(ck).unwrap()
    };
    assert_eq!(train(&d("a.ck")), train(&d("b.ck")), "same seed, same checkpoint bytes");
    assert!(fs::read_to_string(d("lex.tsv")).unwrap().contains('\t'));

    let (corpus, ck) = (d("c.tsv"), d("a.ck"));
    let eval = |extra: &[&str], out: &Path| {
        let mut args = vec!["evaluate", "--corpus", p(&corpus), "--split", "test", "--checkpoint", p(&ck)];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", p(out)]);
        let o = textnorm(&args);
        assert!(o.status.success(), "{o:?}");
        assert!(stdout(&o).contains("SER"));
    };
    eval(&[], &d("base.jsonl"));
    eval(&["--golden-tags", "--oracle-verbalizer"], &d("oracle.jsonl"));
    let oracle = fs::read_to_string(d("oracle.jsonl")).unwrap();
    assert!(oracle.lines().next().unwrap().contains("\"errors\":0"), "{oracle}");

    let report = textnorm(&["report", "--base", p(&d("base.jsonl")), "--against", p(&d("oracle.jsonl"))]);
    assert!(report.status.success(), "{report:?}");
    assert!(stdout(&report).contains("error reduction"));

    let predict = textnorm(&["predict", "--corpus", p(&d("c.tsv")), "--split", "test", "--checkpoint", p(&d("a.ck"))]);
    assert!(predict.status.success(), "{predict:?}");
    assert_eq!(stdout(&predict).lines().count(), 3);

    let wrong = textnorm(&[
        "evaluate", "--corpus", p(&d("c.tsv")), "--checkpoint", p(&d("a.ck")), "--mode", "single-pass",
    ]);
    assert_eq!(wrong.status.code(), Some(1));
}
