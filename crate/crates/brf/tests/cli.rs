use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn brf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .map(|p| p.to_str().unwrap().to_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn gen_compile_verify_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = brf(&["gen", "--seed", "3", "--count", "4", "--out-dir", d]);
    assert!(o.status.success(), "{o:?}");
    let asts = files_with_ext(dir.path(), "ast");
    assert_eq!(asts.len(), 4);
    for a in &asts {
        let out = a.replace(".ast", ".brfp");
        assert!(brf(&["compile", a, "-o", &out]).status.success());
    }
    let o = brf(&["verify", "--stats", d]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches(": ok").count(), 4);

    let first = &files_with_ext(dir.path(), "brfp")[0];
    let o = brf(&["disasm", first]);
    assert!(stdout(&o).contains("exit"));
    let o = brf(&["run", first]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("engines_agree = true"), "{}", stdout(&o));
}

#[test]
fn fuzz_writes_corpus_and_replayable_crashes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("out");
    let stats = dir.path().join("stats.toml");
    let o = brf(&[
        "fuzz",
        "--seed",
        "1",
        "--budget",
        "1500",
        "--workers",
        "2",
        "--seed-bugs",
        "all",
        "--corpus",
        corpus.to_str().unwrap(),
        "--stats-out",
        stats.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(fs::read_to_string(&stats).unwrap().starts_with("schema = \"brf-stats/1\""));
    assert!(fs::read_to_string(corpus.join("manifest.toml")).unwrap().contains("brf-corpus/1"));
    assert!(!files_with_ext(&corpus.join("queue"), "input").is_empty());
    let crashes = fs::read_dir(corpus.join("crashes")).unwrap().map(|e| e.unwrap().path()).collect::<Vec<_>>();
    assert!(!crashes.is_empty());
    for c in crashes.iter().take(3) {
        let o = brf(&["replay", c.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stdout(&o));
        assert!(stdout(&o).contains("reproduced"));
    }
}

#[test]
fn bad_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.brfp");
    fs::write(&p, b"not a container").unwrap();
    assert_eq!(brf(&["disasm", p.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(brf(&["fuzz", "--seed-bugs", "nonsense"]).status.code(), Some(2));
}
