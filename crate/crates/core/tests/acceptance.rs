//! Acceptance gate. Every criterion runs at its stated scale and tolerance and
//! prints one `ACCEPTANCE [PASS|FAIL]` line; the test fails if any criterion does.
//!
//! Run with `cargo test -p ucbretrans --release --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ucbretrans::analytic::{p_c1_approx, p_ca_closed, p_ca_exact, pc_from_x, x_from_pc};
use ucbretrans::experiment::{
    run_strategies, simulate, validate_approx, write_approx_csv, SimulateOptions, StrategyOutcome,
    ValidateOptions, DEFAULT_WINDOW,
};
use ucbretrans::policy::RetransStage;
use ucbretrans::scenario::builtin_scenario;
use ucbretrans::{DeviceState, Phase, ScenarioConfig, Strategy, StrategyState, UcbLearner, World};

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(id: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Verdict { id, pass, detail: detail.into() }
    }
}

fn mean_se(o: &StrategyOutcome) -> (f64, f64) {
    (o.final_rate.mean().unwrap_or(f64::NAN), o.final_rate.stderr())
}

fn outcome(outcomes: &[StrategyOutcome], s: Strategy) -> &StrategyOutcome {
    outcomes.iter().find(|o| o.strategy == s).expect("strategy was run")
}

fn rates_line(outcomes: &[StrategyOutcome]) -> String {
    outcomes
        .iter()
        .map(|o| {
            let (m, se) = mean_se(o);
            format!("{}={m:.4}±{se:.4}", o.strategy.legend())
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn approximation_sweep() -> Vec<ucbretrans::experiment::ApproxRow> {
    let opts = ValidateOptions {
        n_values: vec![50, 100, 200, 300, 400],
        tx_prob: 1e-3,
        max_attempts: 10,
        backoff_window: 10,
        horizon: 200_000,
        replications: 50,
        master_seed: 2019,
        workers: 0,
    };
    validate_approx(&opts).expect("sweep runs")
}

fn criterion_1(rows: &[ucbretrans::experiment::ApproxRow]) -> Verdict {
    let mut checked = Vec::new();
    let mut pass = true;
    for r in rows.iter().filter(|r| r.pc1_sim <= 0.30) {
        let ok = r.abs_err() <= 0.03;
        pass &= ok;
        checked.push(format!("N={} err={:.4}", r.n_devices, r.abs_err()));
    }
    pass &= !checked.is_empty();
    Verdict::new("C1 approximation fidelity", pass, checked.join(", "))
}

fn criterion_2(rows: &[ucbretrans::experiment::ApproxRow]) -> Verdict {
    let positive = rows.iter().all(|r| r.pc1_sim > r.pc_sim);
    let max_gap = rows.iter().map(|r| r.gap()).fold(f64::NEG_INFINITY, f64::max);

    let mut worst_rise = f64::NEG_INFINITY;
    for n in (50..=400).step_by(50) {
        for m in [2u32, 5, 10] {
            let gaps: Vec<f64> = (1..=95)
                .map(|i| {
                    let pc = i as f64 / 100.0;
                    p_c1_approx(pc, n, m).unwrap() - pc
                })
                .collect();
            for w in gaps.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
        }
    }
    let monotone = worst_rise <= 1e-9;
    Verdict::new(
        "C2 gap existence and trend",
        positive && max_gap >= 0.05 && monotone,
        format!("all positive={positive}, max gap={max_gap:.4}, worst analytic rise={worst_rise:.2e}"),
    )
}

fn criterion_3() -> Verdict {
    let mut worst = (0.0f64, 0u64, 0u32, 0.0f64);
    let mut cases = 0;
    for n in (50..=1000).step_by(50) {
        for m in [2u32, 5, 10] {
            for i in 1..=200 {
                // p_c grid dense in the region x <= 0.01
                let x = 0.01 * i as f64 / 200.0;
                let pc = pc_from_x(x, n).unwrap();
                if x_from_pc(pc, n).unwrap() > 0.01 {
                    continue;
                }
                cases += 1;
                let d = (p_ca_exact(pc, n, m).unwrap() - p_ca_closed(pc, n, m).unwrap()).abs();
                if d > worst.0 {
                    worst = (d, n, m, pc);
                }
            }
        }
    }
    Verdict::new(
        "C3 closed form vs exact sum",
        worst.0 <= 0.02,
        format!(
            "{cases} cases, max |diff|={:.4} at N={}, m={}, p_c={:.4}",
            worst.0, worst.1, worst.2, worst.3
        ),
    )
}

fn criterion_4() -> Verdict {
    let cfg = builtin_scenario("scenario1").unwrap();
    let out = run_strategies(&cfg, &Strategy::ALL, DEFAULT_WINDOW, 0).unwrap();
    let (base, _) = mean_se(outcome(&out, Strategy::NoLearning));
    let learners: Vec<_> = out.iter().filter(|o| o.strategy.is_learning()).collect();
    let beats_baseline = learners.iter().all(|o| mean_se(o).0 >= base + 0.05);
    let best = learners.iter().map(|o| mean_se(o)).fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    let (only, only_se) = mean_se(outcome(&out, Strategy::OnlyUcb));
    let only_ok = only >= best.0 - 2.0 * (only_se.powi(2) + best.1.powi(2)).sqrt();
    Verdict::new(
        "C4 scenario 1 ordering",
        beats_baseline && only_ok,
        format!("{} | learners beat baseline by 0.05: {beats_baseline}, Only UCB near best: {only_ok}", rates_line(&out)),
    )
}

fn criterion_5() -> Verdict {
    let cfg = builtin_scenario("scenario2").unwrap();
    let out = run_strategies(&cfg, &Strategy::ALL, DEFAULT_WINDOW, 0).unwrap();
    let (base, _) = mean_se(outcome(&out, Strategy::NoLearning));
    let beats_baseline = out
        .iter()
        .filter(|o| o.strategy.is_learning())
        .all(|o| mean_se(o).0 >= base + 0.15);
    let (rnd, rnd_se) = mean_se(outcome(&out, Strategy::RandomRetrans));
    let random_worse = [Strategy::UcbRetrans, Strategy::KUcbRetrans, Strategy::DelayedUcbRetrans]
        .iter()
        .all(|&s| {
            let (m, se) = mean_se(outcome(&out, s));
            m - rnd > 2.0 * (se.powi(2) + rnd_se.powi(2)).sqrt()
        });
    Verdict::new(
        "C5 scenario 2 separation",
        beats_baseline && random_worse,
        format!(
            "{} | learners beat baseline by 0.15: {beats_baseline}, Random below UCB heuristics: {random_worse}",
            rates_line(&out)
        ),
    )
}

fn brute_force_choice_set(log: &[(usize, bool)], k: usize, alpha: f64) -> Vec<usize> {
    let t = (log.len() + 1) as f64;
    let idx: Vec<f64> = (0..k)
        .map(|ch| {
            let (n, s) = log
                .iter()
                .filter(|(c, _)| *c == ch)
                .fold((0u32, 0u32), |(n, s), &(_, r)| (n + 1, s + u32::from(r)));
            if n == 0 {
                f64::INFINITY
            } else {
                f64::from(s) / f64::from(n) + (alpha * t.ln().max(0.0) / f64::from(n)).sqrt()
            }
        })
        .collect();
    let best = idx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..k)
        .filter(|&i| idx[i] == best || (best.is_finite() && (idx[i] - best).abs() <= 1e-12))
        .collect()
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut oracle_failures = 0;
    let mut unplayed_failures = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=8);
        let len = rng.random_range(0..80);
        let log: Vec<(usize, bool)> = (0..len).map(|_| (rng.random_range(0..k), rng.random_bool(0.5))).collect();
        let mut l = UcbLearner::new(k, 0.5);
        for &(ch, r) in &log {
            l.update(ch, r);
        }
        let chosen = l.select(&mut rng);
        if !brute_force_choice_set(&log, k, 0.5).contains(&chosen) {
            oracle_failures += 1;
        }
        if l.pulls().contains(&0) && l.pulls()[chosen] != 0 {
            unplayed_failures += 1;
        }
    }

    let mut isolation_failures = 0;
    for kind in Strategy::ALL.into_iter().filter(|s| s.is_two_stage()) {
        let mut s = StrategyState::new(kind, 4, 0.5, 200);
        let count = |s: &StrategyState| -> (u64, u64) {
            let second = match s.retrans() {
                RetransStage::None => 0,
                RetransStage::Single(l) => l.attempts(),
                RetransStage::PerChannel(ls) => ls.iter().map(UcbLearner::attempts).sum(),
            };
            (s.first_stage().attempts(), second)
        };
        for _ in 0..2_000 {
            let attempt = rng.random_range(0..5u32);
            let dev = if attempt == 0 {
                DeviceState::fresh_packet()
            } else {
                DeviceState::retransmitting(attempt, rng.random_range(0..4))
            };
            let (a0, b0) = count(&s);
            s.observe(&dev, rng.random_range(0..4), rng.random_range(0..400), rng.random_bool(0.5)).unwrap();
            let (a1, b1) = count(&s);
            let ok = if attempt == 0 { (a1 - a0, b1 - b0) == (1, 0) } else { a1 == a0 && b1 - b0 <= 1 };
            isolation_failures += usize::from(!ok);
        }
    }

    // channels 1 and 2 tie at the maximum
    let mut l = UcbLearner::new(4, 0.5);
    for (ch, r) in [(0, false), (1, true), (1, false), (2, false), (2, true), (3, false)] {
        l.update(ch, r);
    }
    let draws = 10_000u32;
    let hits = (0..draws).filter(|_| l.select(&mut rng) == 1).count() as f64;
    let sigma = (f64::from(draws) * 0.25).sqrt();
    let tie_ok = (hits - f64::from(draws) / 2.0).abs() <= 3.0 * sigma;

    Verdict::new(
        "C6 UCB unit correctness",
        oracle_failures == 0 && unplayed_failures == 0 && isolation_failures == 0 && tie_ok,
        format!(
            "oracle mismatches={oracle_failures}/10000, unplayed violations={unplayed_failures}, \
             isolation violations={isolation_failures}, tie split={hits}/{draws}"
        ),
    )
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn criterion_7() -> Verdict {
    let base = builtin_scenario("scenario1").unwrap();
    let configs = [
        ScenarioConfig { horizon: 20_000, delay_threshold: 5_000, replications: 4, ..base },
        ScenarioConfig {
            n_devices: 60,
            n_channels: 3,
            tx_prob: 0.01,
            max_attempts: 4,
            backoff_window: 6,
            occupancy: vec![0.5, 0.2, 0.0],
            strategy: Strategy::OnlyUcb,
            delay_threshold: 3_000,
            horizon: 10_000,
            replications: 5,
            master_seed: 99,
            alpha: 0.5,
            freeze_channel: true,
        },
    ];
    let mut mismatches = Vec::new();
    let mut files = 0;
    for (ci, cfg) in configs.iter().enumerate() {
        let mut runs = Vec::new();
        for workers in [1, 3, 3] {
            let dir = tempfile::tempdir().unwrap();
            let opts = SimulateOptions {
                config: cfg.clone(),
                strategies: Strategy::ALL.to_vec(),
                out_dir: dir.path().to_path_buf(),
                window: 1_000,
                workers,
                gnuplot: true,
            };
            simulate(&opts).unwrap();
            runs.push(read_dir_bytes(dir.path()));
        }
        files += runs[0].len();
        if runs.iter().any(|r| r != &runs[0]) {
            mismatches.push(format!("config {ci}"));
        }
    }

    let mut approx = Vec::new();
    for workers in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("approx.csv");
        let opts = ValidateOptions {
            n_values: vec![20, 40],
            horizon: 20_000,
            replications: 4,
            workers,
            ..ValidateOptions::default()
        };
        write_approx_csv(&path, &validate_approx(&opts).unwrap()).unwrap();
        approx.push(fs::read(&path).unwrap());
    }
    if approx[0] != approx[1] {
        mismatches.push("validate-approx".into());
    }
    Verdict::new(
        "C7 determinism",
        mismatches.is_empty(),
        format!("{files} simulate files per run compared across workers 1/3/3; mismatches: {mismatches:?}"),
    )
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    for case in 0..100 {
        let k = rng.random_range(1..=5);
        let horizon = 10_000;
        let cfg = ScenarioConfig {
            n_devices: rng.random_range(1..=300),
            n_channels: k,
            tx_prob: 10f64.powf(rng.random_range(-4.0..-0.5)),
            max_attempts: rng.random_range(1..=8),
            backoff_window: rng.random_range(1..=12),
            occupancy: (0..k).map(|_| rng.random_range(0.0..0.9)).collect(),
            strategy: Strategy::ALL[rng.random_range(0..Strategy::ALL.len())],
            delay_threshold: rng.random_range(0..=horizon),
            horizon,
            replications: 1,
            master_seed: rng.random(),
            alpha: 0.5,
            freeze_channel: rng.random_bool(0.5),
        }
        .validate()
        .expect("generator produces valid configs");

        let mut world = World::new(&cfg, case).unwrap();
        let mut over_limit = 0u64;
        while !world.is_finished() {
            over_limit += world
                .advance_slot()
                .iter()
                .filter(|r| r.attempt_index + 1 > cfg.max_attempts)
                .count() as u64;
        }
        let in_flight_devices = world.devices().iter().filter(|d| d.phase != Phase::Idle).count() as u64;
        let r = world.into_result();
        let finished: u64 = r.attempts_per_packet.iter().sum();
        let conserved = r.generated_packets == r.delivered_packets + r.dropped_packets + r.in_flight_packets
            && finished == r.delivered_packets + r.dropped_packets
            && r.in_flight_packets == in_flight_devices
            && r.attempts_per_packet.len() == cfg.max_attempts as usize;
        if !conserved || over_limit > 0 {
            failures.push(case);
        }
    }
    Verdict::new(
        "C8 conservation",
        failures.is_empty(),
        format!("100 random configs at T=1e4, failing cases: {failures:?}"),
    )
}

#[test]
fn acceptance() {
    let mut verdicts = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> Vec<Verdict>| {
        let start = Instant::now();
        let vs = f();
        for v in vs {
            println!(
                "ACCEPTANCE [{}] {}: {} ({:.1}s)",
                if v.pass { "PASS" } else { "FAIL" },
                v.id,
                v.detail,
                start.elapsed().as_secs_f64()
            );
            verdicts.push((v.id, v.pass));
        }
    };
    timed(&mut || {
        let rows = approximation_sweep();
        for r in &rows {
            println!(
                "  sweep N={:>3} pc_sim={:.4} pc1_sim={:.4} pc1_approx={:.4}",
                r.n_devices, r.pc_sim, r.pc1_sim, r.pc1_approx
            );
        }
        vec![criterion_1(&rows), criterion_2(&rows)]
    });
    timed(&mut || vec![criterion_3()]);
    timed(&mut || vec![criterion_4()]);
    timed(&mut || vec![criterion_5()]);
    timed(&mut || vec![criterion_6()]);
    timed(&mut || vec![criterion_7()]);
    timed(&mut || vec![criterion_8()]);

    let failed: Vec<_> = verdicts.iter().filter(|(_, p)| !p).map(|(id, _)| *id).collect();
    println!("ACCEPTANCE SUMMARY: {}/{} passed", verdicts.len() - failed.len(), verdicts.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
