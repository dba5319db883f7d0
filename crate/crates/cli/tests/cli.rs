use std::path::PathBuf;
use std::process::{Command, Output};

fn nwtopk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nwtopk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nwtopk-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn gen_trace_then_verify() {
    let dir = scratch("verify");
    let trace = dir.join("t.ntrc");
    let trace_arg = trace.to_str().unwrap();
    let out = nwtopk(&[
        "gen-trace",
        "--zipf",
        "0.9",
        "--packets",
        "20000",
        "--flows",
        "3000",
        "--seed",
        "4",
        "--out",
        trace_arg,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(std::fs::metadata(&trace).unwrap().len(), 17 + 4 * 20_000);

    let out = nwtopk(&["verify", "--trace", trace_arg, "--trials", "4"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: 4 trials"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn run_writes_report() {
    let dir = scratch("run");
    let report = dir.join("r.csv");
    let args = [
        "run",
        "--switches",
        "4",
        "--clusters",
        "2",
        "--slots",
        "128",
        "--k",
        "16",
        "--zipf",
        "1.0",
        "--packets",
        "20000",
        "--flows",
        "2000",
        "--drop",
        "0.1",
        "--seeds",
        "1,2",
        "--out",
        report.to_str().unwrap(),
    ];
    let out = nwtopk(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("seed,n,clusters,d,s,k,zipf"));
    assert!(lines[1].starts_with("1,4,2,2,128,16,1,20000,2000,1.0,0.1,"));
    assert!(lines[3].starts_with("AVG,"));

    let again = nwtopk(&args[..args.len() - 2]);
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn errors_exit_nonzero() {
    let missing = nwtopk(&["verify", "--trace", "/nonexistent/t.ntrc"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/t.ntrc"));

    let bad_k = nwtopk(&[
        "run",
        "--slots",
        "64",
        "--k",
        "200",
        "--packets",
        "100",
        "--flows",
        "10",
    ]);
    assert!(!bad_k.status.success());
    assert!(String::from_utf8_lossy(&bad_k.stderr).contains("exceeds"));

    let bad_trace = scratch("bad").join("junk.ntrc");
    std::fs::write(&bad_trace, b"JUNKJUNKJUNKJUNKJUNK").unwrap();
    let junk = nwtopk(&["run", "--trace", bad_trace.to_str().unwrap()]);
    assert!(!junk.status.success());
    std::fs::remove_dir_all(bad_trace.parent().unwrap()).unwrap();
}
