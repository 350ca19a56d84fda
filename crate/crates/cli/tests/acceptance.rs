//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs without the libtest harness so the lines print in order.
//!
//! Set DT_ACCEPT_SKIP_RL=1 to skip the two training criteria (several
//! minutes on one core).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dt_core::telemetry::{self, blend, discrete_stall, semantic_stall, PeVariant};
use dt_core::{fixtures, transcript, Condition, Corpus, Episode, EpisodeConfig, TelemetryConfig};
use dt_learn::campaign::{self, RunStatus, Table};
use dt_learn::Variant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn corpus() -> Arc<Corpus> {
    Arc::new(fixtures::sar_corpus().expect("fixture corpus loads"))
}

fn cfg(c: &Corpus) -> TelemetryConfig {
    TelemetryConfig::for_provider(c.provider().kind())
}

fn monitor_scenario(n: u8) -> (Arc<Corpus>, telemetry::MonitorReport) {
    let c = corpus();
    let rows = fixtures::scenario(n).unwrap();
    let recs = transcript::to_records(&rows, c.schema(), c.provider()).unwrap();
    let report = telemetry::monitor(&recs, c.schema(), &cfg(&c)).unwrap();
    (c, report)
}

fn criterion1() -> Outcome {
    let t0 = Instant::now();
    let (_, r) = monitor_scenario(1);
    let secs = t0.elapsed().as_secs_f64();
    let flagged = r.flagged_turns();
    let mean = r.mean_si();
    Outcome {
        pass: flagged == 0 && r.frames.len() == 20 && mean < 0.10 && secs < 1.0,
        detail: format!("flagged {flagged}/{}, mean SI {mean:.4} (< 0.10), {secs:.3}s", r.frames.len()),
    }
}

/// Maximal runs of same-category turns gaining at most 0.05 each, directly
/// after a turn on that category.
fn gain_windows(rows: &[dt_core::TranscriptRow]) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut i = 1;
    while i < rows.len() {
        let cat = &rows[i].target_category;
        let low = |r: &dt_core::TranscriptRow| r.gains.get(cat).copied().unwrap_or(0.0) <= 0.05;
        if cat != dt_core::GENERAL && &rows[i - 1].target_category == cat && low(&rows[i]) {
            let start = i;
            while i + 1 < rows.len() && &rows[i + 1].target_category == cat && low(&rows[i + 1]) {
                i += 1;
            }
            out.push((rows[start].turn, rows[i].turn, cat.clone()));
        }
        i += 1;
    }
    out
}

fn criterion2() -> Outcome {
    let t0 = Instant::now();
    let (_, r) = monitor_scenario(2);
    let secs = t0.elapsed().as_secs_f64();
    let rows = fixtures::scenario(2).unwrap();
    let gt = gain_windows(&rows);
    let mut hits = true;
    let mut peaks_ok = true;
    let mut parts = Vec::new();
    for (lo, hi, cat) in &gt {
        let inside = &r.frames[lo - 1..*hi];
        let hit = inside.iter().any(|f| f.stall_flag);
        let peak = inside.iter().map(|f| f.si).fold(0.0, f64::max);
        hits &= hit;
        peaks_ok &= (0.20..=0.60).contains(&peak);
        parts.push(format!("{cat} {lo}-{hi}: flagged={hit} peak {peak:.3}"));
    }
    Outcome {
        pass: gt.len() == 2 && hits && r.windows.len() == 2 && peaks_ok && secs < 1.0,
        detail: format!(
            "{}; reported windows {} (want 2); peaks in [0.20, 0.60]: {peaks_ok}; {secs:.3}s",
            parts.join(", "),
            r.windows.len()
        ),
    }
}

fn criterion3() -> Outcome {
    let c = corpus();
    let rows = fixtures::scenario(1).unwrap();
    let recs = transcript::to_records(&rows, c.schema(), c.provider()).unwrap();
    let mut tc = cfg(&c);
    tc.pe_variant = PeVariant::Formal;
    let r = telemetry::monitor(&recs, c.schema(), &tc).unwrap();
    // Worst per-turn rise after the last informative turn, under two readings
    // of "informative": any completeness gain above eps, or only gains from
    // turns that targeted the category.
    let worst_rise = |targeted_only: bool| {
        let mut worst = f64::NEG_INFINITY;
        let mut at = String::new();
        for (i, name) in c.schema().names().enumerate() {
            let last = rows
                .iter()
                .filter(|row| !targeted_only || row.target_category == name)
                .filter(|row| row.gains.get(name).is_some_and(|&g| g > tc.eps_upsilon))
                .map(|row| row.turn)
                .max();
            let Some(last) = last else { continue };
            for w in r.frames[last - 1..].windows(2) {
                let rise = w[1].pe[i] - w[0].pe[i];
                if rise > worst {
                    worst = rise;
                    at = format!("{name} turn {}", w[1].turn);
                }
            }
        }
        (worst, at)
    };
    let (any, any_at) = worst_rise(false);
    let (tgt, tgt_at) = worst_rise(true);
    Outcome {
        pass: any <= 0.02,
        detail: format!(
            "max rise after last informative update {any:.4} at {any_at} (<= 0.02); targeted-turn reading {tgt:.4} at {tgt_at}"
        ),
    }
}

/// H(p) in bits from the series around p = 1/2:
/// H = 1 - (1 / (2 ln 2)) * sum_n x^(2n) / (n (2n - 1)), x = 1 - 2p.
/// No logarithm of p is taken; terms are summed with compensation until the
/// tail bound drops below 1e-18.
fn entropy_series(p: f64) -> f64 {
    if p == 0.0 || p == 1.0 {
        return 0.0;
    }
    let x = 1.0 - 2.0 * p;
    let x2 = x * x;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut pow = 1.0;
    let mut n = 1u64;
    loop {
        pow *= x2;
        let nf = n as f64;
        let term = pow / (nf * (2.0 * nf - 1.0));
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        // Remaining terms are bounded by term * x2 / (1 - x2).
        if term * x2 / (1.0 - x2) < 1e-18 {
            break;
        }
        n += 1;
    }
    1.0 - sum / (2.0 * std::f64::consts::LN_2)
}

fn criterion4() -> Outcome {
    let mut worst = 0.0f64;
    let mut at = 0.0;
    for k in 0..=1000 {
        let p = k as f64 / 1000.0;
        let err = (telemetry::binary_entropy(p).unwrap() - entropy_series(p)).abs();
        if err > worst {
            worst = err;
            at = p;
        }
    }
    Outcome { pass: worst <= 1e-9, detail: format!("max |error| {worst:.2e} at p = {at} over 1001 points (<= 1e-9)") }
}

fn criterion5() -> Outcome {
    let t0 = Instant::now();
    let c = corpus();
    let tc = cfg(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut frames = 0usize;
    let (mut bounds, mut disc, mut kill, mut kill_cases) = (0usize, 0usize, 0usize, 0usize);
    let mut kill_recent_target = 0usize;
    let mut example = String::new();
    for ep in 0..10_000 {
        let cond = if ep % 2 == 0 { Condition::A } else { Condition::B };
        let ecfg = EpisodeConfig { seed: ep as u64, ..EpisodeConfig::with_condition(cond) };
        let mut e = Episode::new(c.clone(), tc.clone(), ecfg).unwrap();
        loop {
            let out = e.step(rng.random_range(0..c.num_actions())).unwrap();
            let f = &out.frame;
            let s = e.state();
            frames += 1;
            if ![f.si, f.si_disc, f.si_sem].iter().all(|v| (0.0..=1.0).contains(v)) {
                bounds += 1;
            }
            let counts = s.window_counts();
            if counts.iter().all(|&n| n <= 1) && f.si_disc != 0.0 {
                disc += 1;
            }
            let repeated: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] >= tc.r_min).collect();
            if !repeated.is_empty()
                && repeated.iter().all(|&i| s.recent_gain(i).unwrap_or(0.0) >= 1.0 / tc.lambda)
            {
                kill_cases += 1;
                if f.si != 0.0 {
                    kill += 1;
                    let last = s.last_record().unwrap();
                    if last.target.category().is_some_and(|i| repeated.contains(&i)) {
                        kill_recent_target += 1;
                    }
                    if example.is_empty() {
                        example = format!(
                            "e.g. turn {} target {} gain {:.2}, SI {:.3}",
                            f.turn,
                            last.target.label(c.schema()),
                            last.recent_gain_for_target,
                            f.si
                        );
                    }
                }
            }
            if out.done {
                break;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let mut detail = format!(
        "{frames} frames: out of [0,1] {bounds}; si_disc != 0 without repeats {disc}; SI != 0 with all repeated gains >= 1/lambda {kill}/{kill_cases}"
    );
    if kill > 0 {
        detail.push_str(&format!(
            " ({kill_recent_target} of them with the latest target repeated; {example}); {secs:.1}s"
        ));
    } else {
        detail.push_str(&format!("; {secs:.1}s"));
    }
    Outcome { pass: bounds == 0 && disc == 0 && kill == 0 && secs < 30.0, detail }
}

fn criterion6() -> Outcome {
    // W = 3 with location asked twice: r_max = 2, latest gain 0.02, lambda 5.
    let d = discrete_stall(2, 3, 0.02, 5.0);
    let s = semantic_stall(0.9, 0.02, 5.0, 1.0);
    let si = blend(d, s, 0.4, 0.8);
    // Hand arithmetic: (1/3)(1 - 0.1) = 0.3; 0.95 * 0.9 = 0.855; 0.4*0.3 + 0.6*0.855 = 0.633.
    let ok = (d - 0.300).abs() <= 1e-9 && (s - 0.855).abs() <= 1e-9 && (si - 0.633).abs() <= 1e-9;
    Outcome { pass: ok, detail: format!("si_disc {d:.12}, s_sem {s:.12}, SI {si:.12}") }
}

fn dt() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dt"));
    cmd.env("DT_NO_COLOR", "1");
    cmd
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{:?}: {}", cmd, String::from_utf8_lossy(&out.stderr)))
    }
}

fn campaign_table(root: &Path, condition: Condition, runs: usize) -> Result<Table, String> {
    let matrix: Vec<_> = Variant::ALL.iter().map(|&v| (condition, v)).collect();
    let mut summaries = Vec::new();
    for &(c, v) in &matrix {
        for k in 0..runs {
            match campaign::inspect_run(&campaign::run_dir(root, c, v, k), c, v, k) {
                RunStatus::Complete(s, _) => summaries.push(s),
                other => return Err(format!("{c}_{v} run {k}: {other:?}")),
            }
        }
    }
    Ok(Table::build(&matrix, &summaries))
}

fn train_condition(dir: &Path, condition: Condition) -> Result<Table, String> {
    let out = dir.join(format!("rl_{condition}"));
    run_ok(dt().args(["train", "--condition", &condition.to_string(), "--runs", "10", "--timesteps", "50000", "--seed", "0"]).arg("--out").arg(&out))?;
    campaign_table(&out, condition, 10)
}

fn end_metric(t: &Table, c: Condition, v: Variant, metric: &str) -> f64 {
    t.row(c, v).and_then(|r| r.end(metric)).map(|m| m.mean).unwrap_or(f64::NAN)
}

fn criterion7(dir: &Path) -> Outcome {
    let t0 = Instant::now();
    let t = match train_condition(dir, Condition::B) {
        Ok(t) => t,
        Err(e) => return Outcome { pass: false, detail: e },
    };
    let m = |v| end_metric(&t, Condition::B, v, "complete_categories");
    let (b, f, n) = (m(Variant::Baseline), m(Variant::FullDt), m(Variant::DtNoSiPenalty));
    Outcome {
        pass: f >= b + 2.0 && n <= b + 1.0,
        detail: format!(
            "complete categories: baseline {b:.2}, full_dt {f:.2} (need >= {:.2}), dt_no_si_penalty {n:.2} (need <= {:.2}); {:.0}s",
            b + 2.0,
            b + 1.0,
            t0.elapsed().as_secs_f64()
        ),
    }
}

fn criterion8(dir: &Path) -> Outcome {
    let t0 = Instant::now();
    let t = match train_condition(dir, Condition::A) {
        Ok(t) => t,
        Err(e) => return Outcome { pass: false, detail: e },
    };
    let m = |v| end_metric(&t, Condition::A, v, "total_knowledge");
    let (b, f, n) = (m(Variant::Baseline), m(Variant::FullDt), m(Variant::DtNoSiPenalty));
    Outcome {
        pass: n >= f + 0.05 && f >= b + 0.05,
        detail: format!(
            "total knowledge: dt_no_si_penalty {n:.3} >= full_dt {f:.3} >= baseline {b:.3}, margins {:.3} and {:.3} (>= 0.05); {:.0}s",
            n - f,
            f - b,
            t0.elapsed().as_secs_f64()
        ),
    }
}

/// Every .csv and .json file under `root`, relative paths sorted.
fn outputs(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, acc: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, root, acc);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
                acc.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut acc = Vec::new();
    walk(root, root, &mut acc);
    acc.sort();
    acc
}

fn criterion9(dir: &Path) -> Outcome {
    let s2 = fixtures::dir().join("scenario2.jsonl");
    let invocations: Vec<(&str, Vec<String>)> = vec![
        ("monitor", vec!["monitor".into(), s2.display().to_string()]),
        ("simulate", vec!["simulate".into(), "--script".into(), s2.display().to_string(), "--condition".into(), "B".into()]),
        (
            "train",
            ["train", "--condition", "B", "--variants", "baseline,full_dt", "--runs", "2", "--timesteps", "2048", "--seed", "3", "--jobs", "2"]
                .map(String::from)
                .to_vec(),
        ),
    ];
    let mut compared = 0;
    let mut diffs = Vec::new();
    for (name, args) in &invocations {
        let a = dir.join(format!("det_{name}_a"));
        let b = dir.join(format!("det_{name}_b"));
        for out in [&a, &b] {
            if let Err(e) = run_ok(dt().args(args).arg("--out").arg(out)) {
                return Outcome { pass: false, detail: e };
            }
        }
        let (fa, fb) = (outputs(&a), outputs(&b));
        if fa != fb {
            diffs.push(format!("{name}: file sets differ"));
            continue;
        }
        for rel in &fa {
            compared += 1;
            if std::fs::read(a.join(rel)).unwrap() != std::fs::read(b.join(rel)).unwrap() {
                diffs.push(format!("{name}: {}", rel.display()));
            }
        }
    }
    Outcome {
        pass: diffs.is_empty() && compared > 0,
        detail: if diffs.is_empty() {
            format!("{compared} CSV/JSON files byte-identical across monitor, simulate and train")
        } else {
            format!("differences: {}", diffs.join(", "))
        },
    }
}

type Check<'a> = (u32, &'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let skip_rl = std::env::var_os("DT_ACCEPT_SKIP_RL").is_some();
    let mut checks: Vec<Check> = vec![
        (1, "Scenario 1 regression", Box::new(criterion1)),
        (2, "Scenario 2 regression", Box::new(criterion2)),
        (3, "PE decay", Box::new(criterion3)),
        (4, "Entropy oracle", Box::new(criterion4)),
        (5, "SI property fuzz", Box::new(criterion5)),
        (6, "Worked example", Box::new(criterion6)),
    ];
    if !skip_rl {
        checks.push((7, "RL Condition B ordering", Box::new(|| criterion7(dir.path()))));
        checks.push((8, "RL Condition A ablation ordering", Box::new(|| criterion8(dir.path()))));
    }
    checks.push((9, "Determinism", Box::new(|| criterion9(dir.path()))));

    let mut failed = 0;
    for (n, name, check) in &checks {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {n} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if skip_rl {
        println!("criteria 7 and 8 skipped (DT_ACCEPT_SKIP_RL)");
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
