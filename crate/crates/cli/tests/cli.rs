use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use promise_core::simnet::{Scenario, SimFiles};
use promise_core::Source;
use serde_json::Value;

fn promise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promise")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = promise(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Five weeks at low volume: enough for one training window and a held-out week.
fn small_scenario(dir: &Path) -> PathBuf {
    let s = Scenario { days: 35, orders_per_day: 240, ..Scenario::default_scenario() };
    let path = dir.join("small.toml");
    std::fs::write(&path, s.to_toml().unwrap()).unwrap();
    path
}

fn simulate(dir: &Path, scenario: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("sim{seed}"));
    ok(&["simulate", "--scenario", p(scenario), "--seed", seed, "--out", p(&out)]);
    out
}

/// `train` creates the models directory itself.
fn train_set(sim: &Path, models: &Path) {
    let data = sim.join(SimFiles::DELIVERIES);
    for (leg, model, loss) in [("warehouse", "gbdt", "mse"), ("vendor", "baseline", ""), ("shipping", "gbdt", "quantile:0.8")] {
        let out = models.join(format!("{leg}.json"));
        let mut args = vec!["train", "--leg", leg, "--model", model, "--data", p(&data), "--out", p(&out), "--seed", "3"];
        if !loss.is_empty() {
            args.extend(["--loss", loss]);
        }
        ok(&args);
    }
}

fn order_json(sim: &Path, from_vendor: bool) -> String {
    let (_, out) = SimFiles::read(sim, None).unwrap();
    let r = out.records.iter().rev().find(|r| matches!(r.order.source, Source::Vendor(_)) == from_vendor).unwrap();
    serde_json::to_string(&r.order).unwrap()
}

fn warehouse_order_json(sim: &Path) -> String {
    order_json(sim, false)
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim_end()).unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let a = simulate(dir.path(), &scenario, "5");
    let b = dir.path().join("again");
    ok(&["simulate", "--scenario", p(&scenario), "--seed", "5", "--out", p(&b)]);
    for f in [SimFiles::DELIVERIES, SimFiles::PLANS, SimFiles::CENTER_DAYS] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = simulate(dir.path(), &scenario, "6");
    assert_ne!(std::fs::read(a.join(SimFiles::DELIVERIES)).unwrap(), std::fs::read(c.join(SimFiles::DELIVERIES)).unwrap());
}

#[test]
fn train_evaluate_quote_smoke_path() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &small_scenario(dir.path()), "1");
    let models = dir.path().join("models");
    train_set(&sim, &models);

    let report = dir.path().join("report");
    let data = sim.join(SimFiles::DELIVERIES);
    let md = ok(&["evaluate", "--models", p(&models), "--data", p(&data), "--window", "1", "--out", p(&report)]);
    assert!(md.contains("Accuracy(0 to -1)"));
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header, ["model", "accuracy_0_to_-1", "breach", "orders", "mean_promise_hours"]);
    let json: Value = serde_json::from_slice(&std::fs::read(report.join("report.json")).unwrap()).unwrap();
    let row = &json["rows"][0];
    assert!(row["accuracy"].as_f64().unwrap() > 0.3 && row["breach"].as_f64().unwrap() < 0.5, "{row}");

    let order = warehouse_order_json(&sim);
    let quote: Value = serde_json::from_str(&ok(&["quote", "--order", &order, "--models", p(&models)])).unwrap();
    let legs = quote["leg_predictions"].as_object().unwrap();
    assert!(!legs.contains_key("vendor"));
    assert!(legs.contains_key("warehouse") && legs.contains_key("shipping") && legs.contains_key("dispatch_wait"));
    let total: f64 = legs.values().map(|v| v.as_f64().unwrap()).sum();
    let placed = serde_json::from_str::<Value>(&order).unwrap()["placed_at"].as_i64().unwrap();
    let promise_at = quote["promise_at"].as_i64().unwrap();
    assert!((total - (promise_at - placed) as f64 / 60.0).abs() < 1e-9);

    let file = dir.path().join("orders.jsonl");
    std::fs::write(&file, format!("{order}\n{order}\n")).unwrap();
    assert_eq!(ok(&["quote", "--order", p(&file), "--models", p(&models)]).lines().count(), 2);
}

#[test]
fn simulate_train_evaluate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let root = dir.path().join(run);
        let sim = simulate(&root, &scenario, "11");
        let models = root.join("models");
        train_set(&sim, &models);
        let report = root.join("report");
        let data = sim.join(SimFiles::DELIVERIES);
        ok(&["evaluate", "--models", p(&models), "--data", p(&data), "--window", "2", "--out", p(&report)]);
        runs.push(root);
    }
    for f in [
        "models/warehouse.json",
        "models/vendor.json",
        "models/shipping.json",
        "report/report.csv",
        "report/report.json",
        "report/report.md",
    ] {
        assert_eq!(std::fs::read(runs[0].join(f)).unwrap(), std::fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn tuned_corrector_attaches_to_shipping_model() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &small_scenario(dir.path()), "2");
    let data = sim.join(SimFiles::DELIVERIES);
    let w = dir.path().join("breach");
    let line = ok(&["tune-breach", "--history", p(&data), "--cutoff", "0.05", "--out", p(&w)]);
    let outcome: Value = serde_json::from_str(line.trim()).unwrap();
    assert!(outcome["weights"].is_object());
    for f in ["weights.json", "corrector.json", "tuning.json"] {
        assert!(w.join(f).exists(), "{f}");
    }
    let out = dir.path().join("shipping.json");
    ok(&["train", "--leg", "shipping", "--model", "gbdt", "--data", p(&data), "--out", p(&out), "--corrector", p(&w)]);
    let art: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!(art["corrector"].is_object());

    let bad = promise(&["train", "--leg", "warehouse", "--model", "gbdt", "--data", p(&data), "--out", p(&out), "--corrector", p(&w)]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(error_line(&bad)["error"], "usage");
}

#[test]
fn errors_are_single_json_lines_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let missing = dir.path().join("nope/deliveries.csv");
    let r = promise(&["train", "--leg", "shipping", "--model", "gbdt", "--loss", "quantile:1.5", "--data", p(&missing), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(error_line(&r)["error"], "config");

    let r = promise(&["train", "--leg", "shipping", "--model", "gbdt", "--data", p(&missing), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_line(&r)["error"], "io");

    let r = promise(&["train", "--leg", "truck", "--model", "gbdt", "--data", p(&missing), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(error_line(&r)["error"], "usage");

    let r = promise(&["evaluate", "--models", p(dir.path()), "--data", p(&missing), "--window", "3", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let r = promise(&["tune-breach", "--history", p(&missing), "--out", p(&out)]);
    assert_eq!(error_line(&r)["error"], "usage");

    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

fn http(addr: &str, request: &str) -> (u16, Value, Duration) {
    let start = Instant::now();
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    let elapsed = start.elapsed();
    let status = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = text.split("\r\n\r\n").nth(1).unwrap();
    (status, serde_json::from_str(body).unwrap(), elapsed)
}

fn post(addr: &str, body: &str) -> (u16, Value, Duration) {
    http(
        addr,
        &format!(
            "POST /quote HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        ),
    )
}

#[test]
fn serve_quotes_and_reports_health() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &small_scenario(dir.path()), "4");
    let models = dir.path().join("models");
    std::fs::create_dir_all(&models).unwrap();
    let data = sim.join(SimFiles::DELIVERIES);
    for leg in ["warehouse", "shipping"] {
        let out = models.join(format!("{leg}.json"));
        ok(&["train", "--leg", leg, "--model", "baseline", "--data", p(&data), "--out", p(&out)]);
    }

    let mut child = Command::new(env!("CARGO_BIN_EXE_promise"))
        .args(["serve", "--models", p(&models), "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().trim_start_matches("listening on http://").to_owned();

    let (status, health, _) = http(&addr, "GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    assert_eq!(status, 200);
    assert_eq!(health["status"], "ok");
    assert!(health["models"]["shipping"].as_str().unwrap().starts_with("v1 baseline"));

    let order = warehouse_order_json(&sim);
    post(&addr, &order);
    let (status, quote, elapsed) = post(&addr, &order);
    assert_eq!(status, 200, "{quote}");
    assert!(quote["leg_predictions"]["warehouse"].is_number());
    assert!(elapsed < Duration::from_millis(50), "{elapsed:?}");

    let (status, err, _) = post(&addr, "{\"order_id\": 1}");
    assert_eq!(status, 400);
    assert_eq!(err["error"], "json");

    let (status, err, _) = post(&addr, &order_json(&sim, true));
    let _ = child.kill();
    let _ = child.wait();
    assert_eq!(status, 422, "{err}");
    assert_eq!(err["error"], "missing_model");
}
