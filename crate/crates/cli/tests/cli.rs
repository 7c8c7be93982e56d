use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use tracewit::WitnessReport;

const BIN: &str = env!("CARGO_BIN_EXE_tracewit");
const NOT_UNIQUE: &str = ".* <put a b> (~<put a _>)* <put !a b> .*";
const BAD_TRACE: &str = "<put 1 2>;<put 3 2>;<put 3 4>;<put 1 2>";

fn corpus(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(rel)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn check(program: &str, extra: &[&str]) -> Output {
    let (s, p, a) = (corpus("not_unique.tw"), corpus(program), corpus("kv.tw"));
    let mut args = vec!["check", s.to_str().unwrap(), p.to_str().unwrap(), a.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

/// Direct reading of the violation: a `put a b` still standing when some
/// other node is linked to b.
fn violates(t: &[(u32, u32)], a: u32, b: u32) -> bool {
    (0..t.len()).any(|i| {
        t[i] == (a, b)
            && (i + 1..t.len()).any(|j| t[j].1 == b && t[j].0 != a && t[i + 1..j].iter().all(|e| e.0 != a))
    })
}

#[test]
fn member_matches_direct_reading_of_violation() {
    let t = [(1, 2), (3, 2), (3, 4), (1, 2)];
    for a in 1..=4 {
        for b in 1..=4 {
            let o = run(&["member", "--sre", NOT_UNIQUE, "--trace", BAD_TRACE, "--bind", &format!("a={a},b={b}")]);
            let want = violates(&t, a, b);
            assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), want.to_string(), "a={a} b={b}");
            assert_eq!(code(&o), if want { 0 } else { 1 });
        }
    }
}

#[test]
fn member_trivial_cases() {
    let o = run(&["member", "--sre", ".*", "--trace", ""]);
    assert_eq!((code(&o), String::from_utf8_lossy(&o.stdout).trim().to_string()), (0, "true".into()));
    assert_eq!(code(&run(&["member", "--sre", "<put a", "--bind", "a=1"])), 2);
    assert_eq!(code(&run(&["member", "--sre", "<put x _>"])), 2);
    assert_eq!(code(&run(&["member", "--sre", ".*", "--trace", "<put 1>"])), 2);
    assert_eq!(code(&run(&["member", "--sre", ".*", "--bind", "a=z"])), 2);
    let apis = corpus("kv.tw");
    let o = run(&["member", "--sre", "<v <- get 1>", "--trace", "<3 <- get 1>", "--apis", apis.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "v is unbound");
    let o = run(&["member", "--sre", "<v <- get 1>", "--trace", "<3 <- get 1>", "--bind", "v=3"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn check_exit_codes_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad.json");
    let o = check("programs/bad.tw", &["--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let r = WitnessReport::from_json(&text).unwrap();
    assert_eq!(r.to_json(), text);
    assert_eq!(r.judgment.effect_sre, "<put n0 b>");
    assert!(r.evidence.is_some());

    let stdout = check("programs/bad.tw", &[]);
    assert_eq!(String::from_utf8_lossy(&stdout.stdout).lines().next(), Some("{"));

    assert_eq!(code(&check("programs/ok.tw", &[])), 1);
    assert_eq!(code(&check("programs/missing.tw", &[])), 2);
    assert_eq!(code(&check("programs/bad.tw", &["--domain", "0"])), 2);
    assert_eq!(code(&check("programs/bad.tw", &["--bogus"])), 2);

    let bad_spec = dir.path().join("broken.tw");
    fs::write(&bad_spec, "spec broken\nvar a : addr\npattern <put a\n").unwrap();
    let (p, a) = (corpus("programs/bad.tw"), corpus("kv.tw"));
    let o = run(&["check", bad_spec.to_str().unwrap(), p.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn tight_budgets_report_no_witness() {
    assert_eq!(code(&check("programs/bad.tw", &["--max-hypotheses", "0"])), 1);
    assert_eq!(code(&check("programs/bad.tw", &["--max-branches", "1"])), 1);
}

#[test]
fn emit_sfa_writes_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let o = check("programs/bad.tw", &["--emit-sfa", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for name in ["spec", "prefix", "suffix"] {
        let dot = fs::read_to_string(dir.path().join(format!("{name}.dot"))).unwrap();
        assert!(dot.starts_with("digraph"), "{name}");
    }
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    assert_eq!(code(&check("programs/bad.tw", &["--out", good.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["validate", "--report", good.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["validate", "--report", good.to_str().unwrap(), "--domain", "3", "--max-prefix", "4"])), 0);

    let report = WitnessReport::from_json(&fs::read_to_string(&good).unwrap()).unwrap();
    let write = |name: &str, r: &WitnessReport| {
        let p = dir.path().join(name);
        fs::write(&p, r.to_json()).unwrap();
        p
    };

    let mut r = report.clone();
    r.judgment.effect_sre = "<put a b>".into();
    assert_eq!(code(&run(&["validate", "--report", write("effect.json", &r).to_str().unwrap()])), 1);

    let mut r = report.clone();
    r.judgment.effect_sre = "<put n9 b>".into();
    assert_eq!(code(&run(&["validate", "--report", write("unbound.json", &r).to_str().unwrap()])), 1);

    let mut r = report.clone();
    r.evidence.as_mut().unwrap().produced = "<put 1 1>".into();
    assert_eq!(code(&run(&["validate", "--report", write("evidence.json", &r).to_str().unwrap()])), 1);

    let mut r = report.clone();
    r.context[2].ty = "{addr | nu = a}".into();
    assert_eq!(code(&run(&["validate", "--report", write("ctx.json", &r).to_str().unwrap()])), 1);

    let junk = dir.path().join("junk.json");
    fs::write(&junk, "not json").unwrap();
    assert_eq!(code(&run(&["validate", "--report", junk.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["validate", "--report", dir.path().join("nope.json").to_str().unwrap()])), 2);
}

#[test]
fn exit_codes_stay_in_range() {
    for args in [vec!["member"], vec!["frobnicate"], vec![], vec!["validate"]] {
        let c = code(&run(&args));
        assert!((0..=2).contains(&c), "{args:?} -> {c}");
    }
}
