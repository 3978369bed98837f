use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nae_core::ManipulationScript;
use nae_studio::bundle::{Bundle, MODEL, SCRIPT};
use nae_studio::view::read_json;
use nae_studio::wav::{load_wav, save_wav};

fn nae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nae")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nae(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    nae(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_input(dir: &Path) -> PathBuf {
    let audio: Vec<f64> = (0..6000)
        .map(|i| {
            let t = i as f64 / 8000.0;
            let a = 0.4 * (2.0 * std::f64::consts::PI * 330.0 * t).sin() * if i < 3000 { 1.0 } else { 0.1 };
            let b = 0.3 * (2.0 * std::f64::consts::PI * 1500.0 * t).sin() * if i > 2000 { 1.0 } else { 0.0 };
            a + b
        })
        .collect();
    let path = dir.join("in.wav");
    save_wav(&path, &audio, 8000).unwrap();
    path
}

fn decompose(input: &Path, out: &Path, layers: &str) -> String {
    ok(&[
        "decompose", s(input), "-o", s(out), "--layers", layers, "--iters", "80", "--window", "128", "--hop", "32",
        "--quiet",
    ])
}

#[test]
fn decompose_is_reproducible_for_any_depth() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path());
    let stdout = decompose(&input, &tmp.path().join("a"), "2,4");
    assert!(stdout.contains("model hash"));
    assert!(stdout.contains("decoder layer 2: 65x4"));
    decompose(&input, &tmp.path().join("b"), "2,4");
    let a = std::fs::read(tmp.path().join("a").join(MODEL)).unwrap();
    let b = std::fs::read(tmp.path().join("b").join(MODEL)).unwrap();
    assert_eq!(a, b);

    let shallow = decompose(&input, &tmp.path().join("s"), "9");
    assert!(shallow.contains("decoder layer 1: 65x9"));
    let deep = decompose(&input, &tmp.path().join("d"), "3,6,12");
    assert!(deep.contains("decoder layer 3: 65x12"));
    assert_eq!(Bundle::open(&tmp.path().join("d")).unwrap().model.depth(), 3);

    let view = tmp.path().join("v.json");
    let inspect = ok(&["inspect", s(&tmp.path().join("d")), "--view", s(&view), "--hier", "0"]);
    assert!(inspect.contains("layers        [3, 6, 12]"));
    assert!(view.is_file());
}

#[test]
fn render_writes_wav_files() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path());
    let b = tmp.path().join("b");
    decompose(&input, &b, "2,4");

    let all = tmp.path().join("all");
    let listed = ok(&["render", s(&b), "-o", s(&all), "--all"]);
    assert_eq!(listed.lines().count(), 5);
    let mut mix: Vec<f64> = Vec::new();
    for k in 0..4 {
        let (audio, sr) = load_wav(&all.join(format!("component_{k}.wav"))).unwrap();
        assert_eq!(sr, 8000);
        mix.resize(audio.len(), 0.0);
        mix.iter_mut().zip(&audio).for_each(|(m, a)| *m += a);
    }
    let (sum, _) = load_wav(&all.join("sum.wav")).unwrap();
    assert!(sum.iter().zip(&mix).all(|(a, b)| (a - b).abs() < 1e-5));

    let hier = tmp.path().join("hier");
    let files = ok(&["render", s(&b), "-o", s(&hier), "--hier", "0"]);
    assert!(files.lines().all(|l| l.contains("hier0_component_")));

    let cross = tmp.path().join("cross");
    ok(&["render", s(&b), "-o", s(&cross), "--cross", "0,1", "--gamma", "0"]);
    let (audio, _) = load_wav(&cross.join("cross_0_1_layer2.wav")).unwrap();
    assert!(audio.iter().all(|v| v.is_finite()));

    let layered = tmp.path().join("layered");
    ok(&["render", s(&b), "-o", s(&layered), "--cross", "3,1", "--layer", "1"]);
    assert!(layered.join("cross_3_1_layer1.wav").is_file());
}

#[test]
fn manipulate_records_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path());
    let b = tmp.path().join("b");
    decompose(&input, &b, "2,4");

    let p = tmp.path().join("p");
    ok(&["manipulate", s(&b), "-o", s(&p), "--permute", "2", "--derangement", "--seed", "3"]);
    let script: ManipulationScript = read_json(&p.join(SCRIPT)).unwrap();
    let recorded = serde_json::to_value(&script.ops[0]).unwrap();
    assert_eq!(recorded["permutation"].as_array().unwrap().len(), 4);

    let r = tmp.path().join("r");
    ok(&["manipulate", s(&b), "-o", s(&r), "--script", s(&p.join(SCRIPT))]);
    assert_eq!(std::fs::read(p.join(MODEL)).unwrap(), std::fs::read(r.join(MODEL)).unwrap());

    let j = tmp.path().join("j");
    ok(&["manipulate", s(&b), "-o", s(&j), "--jitter", "2", "--delta", "0"]);
    let base = Bundle::open(&b).unwrap().model;
    assert_eq!(Bundle::open(&j).unwrap().model, base);

    let chain = tmp.path().join("chain");
    ok(&["manipulate", s(&b), "-o", s(&chain), "--set", "1,0,0,0.5", "--randomize", "1", "--cols", "1", "--dist", "n:0.5,0.1"]);
    let derived = Bundle::open(&chain).unwrap();
    assert_eq!(derived.script.unwrap().ops.len(), 2);
    assert_eq!(derived.base.unwrap(), base);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path());
    let b = tmp.path().join("b");
    decompose(&input, &b, "2,4");

    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["render", s(&b), "-o", "x"]), 1);
    assert_eq!(code(&["decompose", s(&input), "-o", s(&tmp.path().join("z")), "--layers", "x"]), 1);
    assert_eq!(code(&["decompose", s(&input), "-o", s(&tmp.path().join("z")), "--layers", "2,0"]), 1);
    assert_eq!(code(&["decompose", s(&input), "-o", s(&tmp.path().join("z")), "--window", "100"]), 1);
    assert_eq!(code(&["render", s(&b), "-o", s(&tmp.path().join("g")), "--gamma", "1", "--all"]), 1);
    assert_eq!(code(&["render", s(&b), "-o", s(&tmp.path().join("c")), "--component", "9"]), 1);
    assert_eq!(code(&["manipulate", s(&b), "-o", s(&tmp.path().join("m")), "--set", "1,0,0,-1"]), 1);

    assert_eq!(code(&["decompose", s(&tmp.path().join("missing.wav")), "-o", s(&tmp.path().join("z"))]), 2);
    std::fs::write(tmp.path().join("junk.wav"), b"not a wav").unwrap();
    assert_eq!(code(&["decompose", s(&tmp.path().join("junk.wav")), "-o", s(&tmp.path().join("z"))]), 2);
    assert_eq!(code(&["render", s(&tmp.path().join("nope")), "-o", s(&tmp.path().join("n")), "--all"]), 2);
    assert_eq!(code(&["decompose", s(&input), "-o", s(&b)]), 2);

    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    assert_eq!(code(&["serve", s(&b), "--port", &port]), 4);
}

#[test]
fn toy_writes_mixture_and_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("toy.wav");
    ok(&["toy", "-o", s(&out), "--sample-rate", "8000", "--sources"]);
    let (mixture, sr) = load_wav(&out).unwrap();
    assert_eq!((mixture.len(), sr), (48000, 8000));
    let mut sum = vec![0.0; mixture.len()];
    for name in ["high", "low", "noise"] {
        let (src, _) = load_wav(&tmp.path().join(format!("toy_{name}.wav"))).unwrap();
        sum.iter_mut().zip(&src).for_each(|(s, v)| *s += v);
    }
    assert!(sum.iter().zip(&mixture).all(|(a, b)| (a - b).abs() < 1e-6));
}
