use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use whofdm::{grid_params, Waveform};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whofdm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn rect(n: usize, k: usize, len: usize, offset: i64) -> Waveform {
    Waveform::rectangular(grid_params(n, k).unwrap(), len, 1.0 / (n as f64).sqrt(), offset).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn design_128_160_then_check() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("d.json"),
        r#"{"n":128,"k":160,"degree":0,"restarts":2,"budget":60,"master_seed":5}"#,
    )
    .unwrap();
    let o = run(&["design", "d.json", "--out", "v.wfm", "--params-out", "v.kv"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = Waveform::read(dir.path().join("v.wfm")).unwrap();
    assert_eq!(v.len(), 1024);
    assert_eq!(v.nonzero_taps(), 640);
    assert!(std::fs::read_to_string(dir.path().join("v.kv")).unwrap().contains("[block 31]"));
    let o = run(&["check", "v.wfm"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn design_square_lattice() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("d.json"), r#"{"n":4,"k":4,"output":"v.wfm"}"#).unwrap();
    let o = run(&["design", "d.json"], dir.path());
    assert_eq!(code(&o), 0);
    let v = Waveform::read(dir.path().join("v.wfm")).unwrap();
    assert!(whofdm::weyl_heisenberg::orthonormality_defect(&v) < 1e-9);
}

#[test]
fn design_input_errors() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"n\": 128,").unwrap();
    assert_eq!(code(&run(&["design", "bad.json", "--out", "v.wfm"], dir.path())), 1);
    std::fs::write(dir.path().join("grid.json"), r#"{"n":0,"k":4}"#).unwrap();
    assert_eq!(code(&run(&["design", "grid.json", "--out", "v.wfm"], dir.path())), 1);
    std::fs::write(dir.path().join("noout.json"), r#"{"n":4,"k":6}"#).unwrap();
    assert_eq!(code(&run(&["design", "noout.json"], dir.path())), 1);
    assert_eq!(code(&run(&["design", "missing.json", "--out", "v.wfm"], dir.path())), 1);
    assert_eq!(code(&run(&["nonsense"], dir.path())), 1);
}

#[test]
fn check_rect_perturbed_and_corrupt() {
    let dir = TempDir::new().unwrap();
    let v = rect(8, 10, 8, 0);
    v.write(dir.path().join("rect.wfm")).unwrap();
    let o = run(&["check", "rect.wfm"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("orthonormality_defect"));

    let mut taps = v.taps().to_vec();
    taps[3] += 0.01;
    Waveform::new(taps, 0, *v.grid()).unwrap().write(dir.path().join("bent.wfm")).unwrap();
    let o = run(&["check", "bent.wfm"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeds"));

    let text = v.to_text().replacen("wfm v1", "wave v1", 1);
    std::fs::write(dir.path().join("hdr.wfm"), text).unwrap();
    assert_eq!(code(&run(&["check", "hdr.wfm"], dir.path())), 1);
    assert_eq!(code(&run(&["check", "absent.wfm"], dir.path())), 1);
}

#[test]
fn ambiguity_of_cyclic_prefix_pair_on_lattice() {
    let dir = TempDir::new().unwrap();
    rect(4, 6, 6, 0).write(dir.path().join("v.wfm")).unwrap();
    rect(4, 6, 4, 2).write(dir.path().join("w.wfm")).unwrap();
    let o = run(
        &["ambiguity", "v.wfm", "w.wfm", "--xmin", "-12", "--xmax", "12", "--ys", "-1,0,1,2,3", "--out", "a.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let rows = read_csv(&dir.path().join("a.csv"));
    assert_eq!(rows[0], ["x", "y", "re", "im", "abs"]);
    assert_eq!(rows.len(), 1 + 25 * 5);
    for r in &rows[1..] {
        let x: i64 = r[0].parse().unwrap();
        let y: f64 = r[1].parse().unwrap();
        let a: f64 = r[4].parse().unwrap();
        if x % 6 != 0 {
            continue;
        }
        let expect = if x == 0 && y == 0.0 { 1.0 } else { 0.0 };
        assert!((a - expect).abs() < 1e-10, "x={x} y={y} |A|={a}");
    }
}

#[test]
fn ambiguity_of_zero_padding_pair_and_empty_ys() {
    let dir = TempDir::new().unwrap();
    rect(4, 6, 4, 0).write(dir.path().join("v.wfm")).unwrap();
    rect(4, 6, 6, 0).write(dir.path().join("w.wfm")).unwrap();
    let o = run(&["ambiguity", "v.wfm", "w.wfm", "--xmin", "0", "--xmax", "2", "--ys", "0", "--out", "a.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let rows = read_csv(&dir.path().join("a.csv"));
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        assert!((r[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        assert!(r[3].parse::<f64>().unwrap().abs() < 1e-12);
    }
    let o = run(&["ambiguity", "v.wfm", "w.wfm", "--xmin", "0", "--xmax", "2", "--out", "e.csv"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("e.csv")).unwrap(), "x,y,re,im,abs\n");
}

const SIM: &str = r#"{
  "n": 16, "k": 20,
  "schemes": [
    {"name": "cp", "tx": {"rect_len": 20, "offset": 0}, "rx": {"rect_len": 16, "offset": 4}},
    {"name": "zp", "tx": {"rect_len": 16, "offset": 0}, "rx": {"rect_len": 20, "offset": 0}}
  ],
  "channel_db": [0, -3, -6],
  "eps_f": [0.0, 0.05],
  "eps_t": [-1, 0, 1],
  "sweep": {"eb_n0": [0, 3]},
  "frames_per_trial": 5,
  "trials": 12,
  "master_seed": 99
}"#;

#[test]
fn simulate_rows_and_determinism() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("s.json"), SIM).unwrap();
    let a = run(&["simulate", "s.json", "--out", "a.csv", "--workers", "1"], dir.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&["simulate", "s.json", "--out", "b.csv", "--workers", "4"], dir.path());
    assert_eq!(code(&b), 0);
    let c = run(&["simulate", "s.json", "--out", "c.csv"], dir.path());
    assert_eq!(code(&c), 0);
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(a, std::fs::read(dir.path().join("c.csv")).unwrap());
    let rows = read_csv(&dir.path().join("a.csv"));
    assert_eq!(rows[0], ["scheme", "eps_f", "eps_t", "x_db", "ber", "bits", "errors"]);
    assert_eq!(rows.len(), 1 + 2 * 2 * 3 * 2);
    for r in &rows[1..] {
        let ber: f64 = r[4].parse().unwrap();
        let bits: f64 = r[5].parse().unwrap();
        let errors: f64 = r[6].parse().unwrap();
        assert!((ber - errors / bits).abs() <= 1e-6 * ber.max(1e-300));
    }
}

#[test]
fn simulate_interferer_sweep() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{
      "n": 36, "k": 40,
      "schemes": [{"name": "cp", "tx": {"rect_len": 40, "offset": 0}, "rx": {"rect_len": 36, "offset": 4}}],
      "channel_db": [0, -3, -6],
      "sweep": {"eb_i": [-5, 0, 5]},
      "ebn0_db": 11,
      "interferer": {"center_tone": 17.5, "power_db_rel": 0},
      "trials": 4
    }"#;
    std::fs::write(dir.path().join("s.json"), cfg).unwrap();
    let o = run(&["simulate", "s.json", "--out", "i.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&dir.path().join("i.csv"));
    let xs: Vec<&str> = rows[1..].iter().map(|r| r[3].as_str()).collect();
    assert_eq!(xs, ["-5", "0", "5"]);
}

#[test]
fn simulate_input_errors() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("z.json"), SIM.replace("\"trials\": 12", "\"trials\": 0")).unwrap();
    assert_eq!(code(&run(&["simulate", "z.json", "--out", "z.csv"], dir.path())), 1);
    std::fs::write(dir.path().join("f.json"), SIM.replace("[0.0, 0.05]", "[1.5]")).unwrap();
    assert_eq!(code(&run(&["simulate", "f.json", "--out", "f.csv"], dir.path())), 1);
    std::fs::write(
        dir.path().join("i.json"),
        SIM.replace("{\"eb_n0\": [0, 3]}", "{\"eb_i\": [0]}"),
    )
    .unwrap();
    assert_eq!(code(&run(&["simulate", "i.json", "--out", "i.csv"], dir.path())), 1);
    std::fs::write(dir.path().join("s.json"), SIM).unwrap();
    assert_eq!(code(&run(&["simulate", "s.json", "--out", "x.csv", "--workers", "0"], dir.path())), 1);
}
