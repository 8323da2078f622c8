//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if
//! any fails. The trend experiment trains the full desk grid and takes
//! several minutes on one core.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use moed::config::{Config, Preset};
use moed::pipeline::{gen_data, run_grid, Comparison, Pipeline};
use moed::training::RunRecord;
use moed_tensor::gradcheck::suite;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut worst = ("", 0.0f64);
    for case in suite::cases() {
        let out = suite::run(&case, 20, 1e-5).expect("gradient case runs");
        if out.worst_rel_error >= worst.1 {
            worst = (out.name, out.worst_rel_error);
        }
    }
    let e2e = (0..4).map(|s| common::moe_end_to_end_gradcheck(s, 3)).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst.1 < 1e-4 && e2e < 1e-3 && secs < 60.0,
        format!(
            "per-op worst {:.2e} ({}) < 1e-4, end-to-end {e2e:.2e} < 1e-3, {secs:.1} s < 60 s",
            worst.1, worst.0
        ),
    )
}

fn gating() -> Verdict {
    let s = common::gate_invariants(100, 11);
    verdict(
        s.models == 100 && s.simplex <= 1e-9 && s.permutation <= 1e-9 && s.one_hot <= 1e-12 && s.hull <= 1e-12,
        format!(
            "{} models: simplex {:.1e} <= 1e-9, permutation {:.1e} <= 1e-9, one-hot {:.1e} <= 1e-12, hull excursion {:.1e} <= 1e-12",
            s.models, s.simplex, s.permutation, s.one_hot, s.hull
        ),
    )
}

fn eer_oracle() -> Verdict {
    use moed::eval::{compute_eer, ScoreSet};
    let eer = |s: &[f64], y: &[usize]| compute_eer(&ScoreSet::unnamed(s.to_vec(), y.to_vec()).unwrap()).unwrap().0;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut gap: f64 = 0.0;
    let mut invariant = true;
    for _ in 0..50 {
        let len = rng.random_range(10..=1000);
        let (s, y) = common::random_score_set(&mut rng, len);
        let fast = eer(&s, &y);
        gap = gap.max((fast - common::dense_eer(&s, &y, 100_000)).abs());
        for (_, g) in common::monotone_transforms() {
            let t: Vec<f64> = s.iter().map(|&v| g(v)).collect();
            invariant &= eer(&t, &y) == fast;
        }
    }
    verdict(
        gap <= 0.5 && invariant,
        format!("50 sets: max |fast - dense| {gap:.3} <= 0.5 points, monotone invariance exact: {invariant}"),
    )
}

fn golden_config() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let printed = common::moed_ok(dir.path(), &["config"]);
    let cli = Config::from_json(&printed).expect("config output parses");
    let c = Config::preset(Preset::Paper);
    let checks = [
        ("M", c.gate.layers as f64, 2.0),
        ("H", c.gate.heads as f64, 4.0),
        ("D", c.gate.model_dim as f64, 32.0),
        ("F", c.gate.mlp_dim as f64, 512.0),
        ("input", c.features.input_len as f64, 64_000.0),
        ("lr pretrain", c.pretrain.lr_max, 1e-4),
        ("lr joint", c.joint.lr_max, 1e-4),
        ("smoothing pretrain", c.pretrain.label_smoothing, 0.2),
        ("smoothing joint", c.joint.label_smoothing, 0.2),
        ("batch pretrain", c.pretrain.batch_size as f64, 256.0),
        ("batch joint", c.joint.batch_size as f64, 128.0),
        ("epochs pretrain", c.pretrain.max_epochs as f64, 100.0),
        ("epochs joint", c.joint.max_epochs as f64, 50.0),
        ("patience pretrain", c.pretrain.patience as f64, 20.0),
        ("patience joint", c.joint.patience as f64, 10.0),
        ("threshold", c.eval.threshold, 0.3),
    ];
    let wrong: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}={got} (want {want})"))
        .collect();
    let round_trip = Config::from_json(&c.to_json()).ok().as_ref() == Some(&c);
    verdict(
        wrong.is_empty() && cli == c && round_trip,
        if wrong.is_empty() {
            format!("{} values match; CLI default equals preset: {}; JSON round trip: {round_trip}", checks.len(), cli == c)
        } else {
            format!("mismatched: {}", wrong.join(", "))
        },
    )
}

fn trends() -> Verdict {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Config::desk();
    gen_data(&cfg, tmp.path().join("data")).expect("corpus");
    let mut p = Pipeline::open(cfg, tmp.path().join("data"), tmp.path().join("out")).expect("pipeline");
    p.verbose = false;
    let cmp: Comparison = run_grid(&p).expect("grid");
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let overall = |stem: &str| cmp.row(stem).and_then(|r| r.overall).unwrap_or(f64::NAN);
    let unknown = |stem: &str| cmp.row(stem).and_then(|r| r.unknown).unwrap_or(f64::NAN);

    let best_expert = (0..3).map(|i| overall(&format!("expert-{i}"))).fold(f64::INFINITY, f64::min);
    let a = overall("mile-att") <= best_expert;
    let b = unknown("mile-att") <= unknown("mile-cat") + 2.0;

    let mut c = true;
    let mut own = Vec::new();
    for i in 0..3 {
        let stem = format!("mele-expert-{i}");
        let run: RunRecord =
            serde_json::from_str(&fs::read_to_string(p.out.join("logs").join(format!("{stem}.run.json"))).unwrap())
                .unwrap();
        let row = cmp.row(&stem).expect("mele expert evaluated");
        let domain = run.domains_seen.iter().next().expect("expert saw a domain");
        let mine = row.eer[domain];
        let worst_other = row.eer.iter().filter(|(d, _)| *d != domain).map(|(_, &e)| e).fold(f64::NEG_INFINITY, f64::max);
        c &= run.domains_seen.len() == 1 && mine < worst_other;
        own.push(format!("{domain} {mine:.2}<{worst_other:.2}"));
    }
    verdict(
        a && b && c && minutes <= 30.0,
        format!(
            "(a) mile-att overall {:.2} <= best expert {best_expert:.2}: {a}; (b) mile-att unknown {:.2} <= mile-cat unknown {:.2} + 2: {b}; (c) own < worst cross [{}]: {c}; {minutes:.1} min <= 30",
            overall("mile-att"),
            unknown("mile-att"),
            unknown("mile-cat"),
            own.join(", ")
        ),
    )
}

/// Every file under `root` keyed by relative path; training logs lose
/// their wall-clock fields.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(m) => {
                m.remove("seconds");
                m.values_mut().for_each(strip);
            }
            Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&path).unwrap();
            if rel.ends_with(".run.json") || rel.ends_with(".jsonl") {
                let text = String::from_utf8(bytes).unwrap();
                let docs: Vec<String> = if rel.ends_with(".jsonl") {
                    text.lines().map(str::to_string).collect()
                } else {
                    vec![text]
                };
                let stripped: Vec<String> = docs
                    .iter()
                    .map(|d| {
                        let mut v: Value = serde_json::from_str(d).unwrap();
                        strip(&mut v);
                        v.to_string()
                    })
                    .collect();
                bytes = stripped.join("\n").into_bytes();
            }
            out.insert(rel, bytes);
        }
    }
    out
}

fn determinism() -> Verdict {
    let cfg = common::tiny_config();
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            common::end_to_end(dir.path(), &cfg);
            let snap = snapshot(dir.path());
            (dir, snap)
        })
        .collect();
    let (a, b) = (&runs[0].1, &runs[1].1);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let ckpts = a.keys().filter(|k| k.ends_with(".ckpt")).count();
    let reports = a.keys().filter(|k| k.ends_with("report.json")).count();
    verdict(
        a.len() == b.len() && differing.is_empty() && ckpts == 4 && reports == 1,
        format!(
            "{} files compared ({ckpts} checkpoints, {reports} metric report), {} differ{}",
            a.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {differing:?}") }
        ),
    )
}

fn frontend() -> Verdict {
    let s = common::frontend_checks(7);
    verdict(
        s.fix_length_ok && s.mel_linearity <= 1e-9 && s.sine_concentration > 0.9 && s.parseval < 0.01,
        format!(
            "fix_length 64000 repeat-pad: {}; mel linearity {:.1e} <= 1e-9; sine main-lobe share {:.6} > 0.9; Parseval mismatch {:.1e} < 1%",
            s.fix_length_ok, s.mel_linearity, s.sine_concentration, s.parseval
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("gradient suite", gradients),
        ("gating invariants", gating),
        ("EER oracle", eer_oracle),
        ("golden config", golden_config),
        ("trend reproduction", trends),
        ("determinism", determinism),
        ("frontend", frontend),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        println!("{} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
