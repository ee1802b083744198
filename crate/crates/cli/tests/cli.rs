use std::path::Path;
use std::process::{Command, Output};

fn netar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netar")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = netar(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(&["net", "gen", "--model", "sbm", "--nodes", "20", "--blocks", "2", "--seed", "1", "-o", &p("net.txt")]);
    ok(&[
        "sim", "--family", "pnar", "--theta", "1,0.3,0.2", "--net", &p("net.txt"), "--T", "80", "--seed", "2",
        "--copula", "ar1:0.5", "-o", &p("panel.csv"),
    ]);
    let text = std::fs::read_to_string(p("panel.csv")).unwrap();
    assert_eq!(text.lines().count(), 81);

    ok(&["fit", "--family", "pnar", "--net", &p("net.txt"), "--panel", &p("panel.csv"), "-o", &p("fit.json")]);
    let fit = json(Path::new(&p("fit.json")));
    assert_eq!(fit["theta_hat"].as_array().unwrap().len(), 3);
    assert!(fit["converged"].as_bool().unwrap());

    ok(&["test", "score", "--family", "pnar", "--net", &p("net.txt"), "--panel", &p("panel.csv"), "--alt", "drift", "-o", &p("score.json")]);
    let score = json(Path::new(&p("score.json")));
    assert!(score["statistic"].as_f64().unwrap() >= 0.0);

    ok(&[
        "test", "sup", "--family", "pnar", "--net", &p("net.txt"), "--panel", &p("panel.csv"), "--alt", "stnar",
        "--method", "both", "--boot-reps", "49", "--seed", "3", "-o", &p("sup.json"),
    ]);
    let sup = json(Path::new(&p("sup.json")));
    assert_eq!(sup["grid"].as_array().unwrap().len(), sup["profile"].as_array().unwrap().len());
    assert!(sup["davies_p"].is_number() && sup["boot_p"].is_number());
}

#[test]
fn continuous_fit_and_mc_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(&["net", "gen", "--model", "er", "--nodes", "15", "--p", "0.3", "--seed", "4", "-o", &p("net.txt")]);
    ok(&[
        "sim", "--family", "nar", "--theta", "1.5,0.4,0.5", "--spec", "drift:gamma=0.5", "--net", &p("net.txt"),
        "--T", "50", "--seed", "5", "-o", &p("panel.csv"),
    ]);
    ok(&["fit", "--family", "nar", "--net", &p("net.txt"), "--panel", &p("panel.csv"), "-o", &p("fit.json")]);
    assert!(json(Path::new(&p("fit.json")))["sigma2"].as_f64().unwrap() > 0.0);

    let cfg = serde_json::json!({"scenarios": [{
        "id": "s1", "network": {"model": "sbm", "k": 2}, "N": 10, "T": 30,
        "family": "linear", "domain": "count", "theta": [1.0, 0.3, 0.2],
        "S": 5, "test": "chi2", "base_seed": 1, "burn_in": 20
    }]});
    std::fs::write(p("cfg.json"), cfg.to_string()).unwrap();
    ok(&["mc", "run", "--config", &p("cfg.json"), "-o", &p("out.csv"), "--qq-out", &p("qq.csv"), "--threads", "2"]);
    assert_eq!(std::fs::read_to_string(p("out.csv")).unwrap().lines().count(), 4);
    assert_eq!(std::fs::read_to_string(p("qq.csv")).unwrap().lines().count(), 6);
    ok(&["mc", "run", "--config", &p("cfg.json"), "-o", &p("out.json")]);
    assert_eq!(json(Path::new(&p("out.json")))["scenarios"][0]["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.txt");
    let out = netar(&["fit", "--family", "pnar", "--net", missing.to_str().unwrap(), "--panel", "x.csv", "-o", "f.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let net = dir.path().join("net.txt");
    std::fs::write(&net, "0 1\n1 0\n").unwrap();
    let panel = dir.path().join("p.csv");
    std::fs::write(&panel, "a,b\n1,2\n3,4\n5,6\n").unwrap();
    let out = netar(&[
        "test", "score", "--family", "pnar", "--net", net.to_str().unwrap(), "--panel", panel.to_str().unwrap(),
        "--alt", "stnar", "-o", dir.path().join("o.json").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(!netar(&["sim", "--family", "pnar"]).status.success());
}
