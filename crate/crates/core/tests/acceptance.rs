//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 6 9`.

use std::io::Write;
use std::time::Instant;

use hopguard::analytics::{gain, p_success_exact, p_success_hoeffding, pdf_y, AnalyticParams};
use hopguard::harness::{
    run_cell, run_experiment, run_trial, session_pair, single_round, trial_seed, write_grid_csv, CellKey, CellResult,
    Execution, ExperimentConfig,
};
use hopguard::phy::SPEED_OF_LIGHT;
use hopguard::protocol::{
    compute_distance, run_dstwr, select_hop_index, ModePolicy, RangingMode, RangingTimestamps, RoundEnv, SessionState,
};
use hopguard::receiver::{leading_edge_detect, CirSpectrum, ReceiverConfig};
use hopguard::{seed, AttackConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn say(line: &str) {
    // Written to the process stdout directly so libtest capture never hides it.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// Shared between the attack grid and the hopping worst case.
#[derive(Default)]
struct Shared {
    table2: Option<Vec<CellResult>>,
}

fn c1_distance_formula(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for i in 0..10_000 {
        let tau = rng.random_range(1e-10..1e-6);
        let (ts, truth) = if i % 2 == 0 {
            let reply = rng.random_range(1e-5..1e-3);
            let ts = RangingTimestamps::symmetric(reply, tau);
            (ts, Some(SPEED_OF_LIGHT * tau))
        } else {
            let p1 = rng.random_range(1e-5..1e-3);
            let p2 = rng.random_range(1e-5..1e-3);
            let hop = rng.random_bool(0.5).then(|| rng.random_range(1e-5..2e-5));
            let ts = RangingTimestamps {
                round1: 2.0 * tau + p1,
                round2: 2.0 * tau + p2,
                reply1: p1,
                reply2: p2,
                hop_s: hop,
            };
            (ts, None)
        };
        let d = compute_distance(&ts).expect("valid timestamps").meters;
        let (r1, p1) = (ts.round1 + ts.hop_s.unwrap_or(0.0), ts.reply1 + ts.hop_s.unwrap_or(0.0));
        let direct = SPEED_OF_LIGHT * (r1 * ts.round2 - p1 * ts.reply2) / (r1 + ts.round2 + p1 + ts.reply2);
        worst = worst.max(((d - direct) / direct).abs());
        if let Some(t) = truth {
            worst_sym = worst_sym.max(((d - t) / t).abs());
        }
    }
    outcome(
        worst <= 1e-12 && worst_sym <= 1e-9,
        format!("10^4 sets: max rel err vs direct {worst:.2e}, symmetric vs c*tau {worst_sym:.2e}"),
    )
}

fn c2_clean_accuracy(_: &mut Shared) -> Outcome {
    let cfg = ExperimentConfig::default();
    let (mut worst, mut failures, mut successes): (f64, u32, u32) = (0.0, 0, 0);
    for t in 0..500 {
        let r = single_round(&cfg, None, t, false).expect("round").record;
        successes += u32::from(r.attack_success);
        match r.distance_m {
            Some(d) => worst = worst.max((d - cfg.true_distance_m).abs()),
            None => failures += 1,
        }
    }
    outcome(
        worst <= 0.30 && failures == 0 && successes == 0,
        format!("500 rounds at SNR -10 dB: max |error| {worst:.3} m, {failures} failed, {successes} attack verdicts"),
    )
}

fn c3_table2(shared: &mut Shared) -> Outcome {
    let cfg = ExperimentConfig {
        trial_count: 2000,
        master_seed: 2024,
        ..ExperimentConfig::default()
    };
    let cells = run_experiment(&cfg, Execution::Parallel(None), None).expect("grid").cells;
    let rate = |sir: f64, tsy: f64| {
        cells
            .iter()
            .find(|c| c.key.sir_db == sir && c.key.tsy_us == tsy)
            .map(CellResult::success_rate)
            .expect("cell")
    };
    say(&format!(
        "    tsy_us \\ sir_db {}",
        cfg.sir_db.iter().map(|s| format!("{s:>7}")).collect::<String>()
    ));
    for &t in &cfg.tsy_us {
        say(&format!(
            "    {t:>15} {}",
            cfg.sir_db.iter().map(|&s| format!("{:>6.1}%", 100.0 * rate(s, t))).collect::<String>()
        ));
    }
    let a = rate(-26.0, -1.0);
    let b = cells
        .iter()
        .filter(|c| c.key.tsy_us >= 1.5 && c.key.sir_db <= -22.0)
        .map(CellResult::success_rate)
        .fold(0.0, f64::max);
    let in_band = cfg
        .sir_db
        .iter()
        .filter(|&&s| {
            let best = cfg
                .tsy_us
                .iter()
                .copied()
                .max_by(|&x, &y| rate(s, x).total_cmp(&rate(s, y)))
                .expect("rows");
            (-1.0..=1.0).contains(&best)
        })
        .count();
    shared.table2 = Some(cells);
    outcome(
        a > 0.10 && b < 0.02 && in_band >= 4,
        format!("(a) -26 dB/-1 us {:.1}% > 10%; (b) max T_sy>=1.5 at SIR<=-22 {:.2}% < 2%; (c) {in_band}/6 columns peak in [-1, 1] us", 100.0 * a, 100.0 * b),
    )
}

fn c4_hopping_defense(shared: &mut Shared) -> Outcome {
    let worst = shared
        .table2
        .as_ref()
        .and_then(|cells| cells.iter().max_by(|a, b| a.success_rate().total_cmp(&b.success_rate())))
        .map_or(CellKey { sir_db: -26.0, tsy_us: -1.0 }, |c| c.key);
    let cfg = ExperimentConfig {
        trial_count: 20_000,
        master_seed: 4,
        mode: ModePolicy::Hop,
        ..ExperimentConfig::default()
    };
    let trials = run_cell(&cfg, worst, Execution::Parallel(None)).expect("cell");
    let successes = trials.iter().flatten().filter(|r| r.attack_success).count();
    let failed = trials.iter().flatten().filter(|r| r.failure.is_some()).count();
    outcome(
        successes == 0,
        format!(
            "hop 15-20 us at SIR {} dB, T_sy {} us: {successes}/20000 successes ({failed} rounds aborted on collision)",
            worst.sir_db, worst.tsy_us
        ),
    )
}

fn c5_hop_neutrality(_: &mut Shared) -> Outcome {
    let cfg = ExperimentConfig::default();
    let table = cfg.protocol.hop_table().expect("table");
    let channel = hopguard::ChannelConfig {
        snr_db: f64::INFINITY,
        ..cfg.channel()
    };
    let env = RoundEnv {
        protocol: &cfg.protocol,
        hop_table: &table,
        channel: &channel,
        receiver: &cfg.receiver,
        attack: None,
        detection: None,
        keep_cir: false,
    };
    let quantum = SPEED_OF_LIGHT / cfg.protocol.packet.sample_rate();
    let mut per_entry = vec![0usize; table.len()];
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    let mut counter: u128 = 1 << 20;
    while per_entry.iter().any(|&n| n < 100) {
        counter += 1;
        // Δt is selected from the Response counter, one past the Poll.
        let j = select_hop_index(counter + 1, &table).expect("index");
        if per_entry[j] >= 100 {
            continue;
        }
        per_entry[j] += 1;
        let key: [u8; 16] = ChaCha8Rng::seed_from_u64(counter as u64).random();
        let s = seed::derive(5, &[counter as u64]);
        let run = |policy| {
            let (mut a, mut b) = SessionState::pair(key, counter, cfg.protocol.packet.sts_pulses(), policy);
            run_dstwr(&mut a, &mut b, &env, 0, s).expect("round").record
        };
        let (classic, hopped) = (run(ModePolicy::Classic), run(ModePolicy::Hop));
        match (classic.distance_m, hopped.distance_m, hopped.hop_delay_s) {
            (Some(c), Some(h), Some(dt)) if dt == table.entries_s[j] => worst = worst.max((c - h).abs()),
            _ => bad += 1,
        }
    }
    outcome(
        bad == 0 && worst <= quantum,
        format!("32 entries x 100 noiseless rounds: max |hopped - classic| {worst:.2e} m (quantum {quantum:.3} m), {bad} unusable"),
    )
}

fn c6_analytics(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let mut violations = 0;
    for n in [16u64, 64, 256] {
        for r in 0..=n {
            let p = AnalyticParams {
                n,
                theta: r as f64,
                x_t: 1.0,
                ..AnalyticParams::default()
            };
            violations += usize::from(p_success_exact(&p) > p_success_hoeffding(&p));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_norm: f64 = 0.0;
    let mut plateau_exact = true;
    for _ in 0..1000 {
        let w1 = rng.random_range(1e-9..1e-6);
        let w2 = w1 * rng.random_range(1.0..500.0);
        let c = rng.random_range(0.0..3e-5);
        let p = AnalyticParams {
            t_min: 0.0,
            t_max: w1,
            t_min_hop: c,
            t_max_hop: c + w2,
            ..AnalyticParams::default()
        };
        let f = pdf_y(&p);
        worst_norm = worst_norm.max((f.integral(f.lo, f.hi) - 1.0).abs());
        plateau_exact &= f.pdf(f.midpoint()) == 1.0 / p.dt2();
    }
    let mut worst_gain: f64 = 0.0;
    let mut g_exact = true;
    for ratio in [20.0, 50.0, 100.0, 1000.0] {
        let dt1 = 0.05e-6;
        let mut p = AnalyticParams {
            n: 64,
            theta: 8.0,
            t_min: 0.0,
            t_max: dt1,
            t_min_hop: 15e-6,
            t_max_hop: 15e-6 + ratio * dt1,
            ..AnalyticParams::default()
        };
        let mid = pdf_y(&p).midpoint();
        p.t_sfd = mid - 0.5 * dt1;
        p.t_payload = mid + 0.5 * dt1;
        let g = gain(&p);
        g_exact &= (g.g - ratio).abs() <= 1e-9 * ratio;
        worst_gain = worst_gain.max((g.exact_ratio / g.g - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        violations == 0 && worst_norm <= 1e-12 && plateau_exact && g_exact && worst_gain <= 0.05 && secs < 10.0,
        format!(
            "{violations} bound violations on N in {{16,64,256}}; max |int f_Y - 1| {worst_norm:.1e}; plateau == 1/dt2: {plateau_exact}; max |ratio/G - 1| {worst_gain:.1e}; {secs:.2} s"
        ),
    )
}

fn c7_counter_sync(_: &mut Shared) -> Outcome {
    let cfg = ExperimentConfig {
        mode: ModePolicy::Hop,
        detection_enabled: false,
        ..ExperimentConfig::default()
    };
    let table = cfg.protocol.hop_table().expect("table");
    let channel = cfg.channel();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = vec![0u64; table.len()];
    let (mut divergent, mut attacked, mut aborted, mut desync) = (0, 0, 0, 0);
    for session in 0..100u64 {
        let (mut init, mut resp) = session_pair(&cfg, seed::derive(70, &[session]));
        for round in 0..100u64 {
            let attack = rng.random_bool(0.5).then(|| AttackConfig {
                sir_db: -20.0 - 2.0 * f64::from(rng.random_range(0..6u8)),
                sync_time_s: (-2.5 + 0.5 * f64::from(rng.random_range(0..11u8))) * 1e-6,
                ..AttackConfig::default()
            });
            let env = RoundEnv {
                protocol: &cfg.protocol,
                hop_table: &table,
                channel: &channel,
                receiver: &cfg.receiver,
                attack: attack.as_ref(),
                detection: None,
                keep_cir: false,
            };
            let expected = select_hop_index(init.sts.counter + 1, &table).expect("index");
            let r = run_dstwr(&mut init, &mut resp, &env, round, seed::derive(71, &[session, round]))
                .expect("round")
                .record;
            attacked += usize::from(attack.is_some());
            aborted += usize::from(r.failure.is_some());
            divergent += usize::from(!r.hop_agree || r.hop_delay_s != Some(table.entries_s[expected]));
            desync += usize::from(init.sts.counter != resp.sts.counter);
            counts[expected] += 1;
        }
    }
    let n = counts.iter().sum::<u64>() as f64;
    let e = n / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let p = ChiSquared::new((counts.len() - 1) as f64).expect("dof").sf(chi2);
    outcome(
        divergent == 0 && desync == 0 && p > 0.01 && attacked > 0 && aborted > 0,
        format!(
            "10^4 rounds ({attacked} attacked, {aborted} aborted): {divergent} divergent, {desync} desynced; chi2 {chi2:.1} on 31 dof, p = {p:.3}"
        ),
    )
}

fn c8_detection(_: &mut Shared) -> Outcome {
    let mut fa_detail = Vec::new();
    let mut worst_fa: f64 = 0.0;
    for snr in [-10.0, -5.0, 0.0] {
        let cfg = ExperimentConfig {
            snr_db: snr,
            master_seed: 8,
            ..ExperimentConfig::default()
        };
        let (mut alarms, mut rounds) = (0, 0);
        for t in 0..1000 {
            if let Some(s) = single_round(&cfg, None, t, false).expect("round").record.detection {
                rounds += 1;
                alarms += u32::from(s);
            }
        }
        let fa = f64::from(alarms) / f64::from(rounds.max(1));
        worst_fa = worst_fa.max(fa);
        fa_detail.push(format!("{snr} dB {:.1}%", 100.0 * fa));
    }
    let cfg = ExperimentConfig {
        master_seed: 88,
        ..ExperimentConfig::default()
    };
    let cell = CellKey { sir_db: -26.0, tsy_us: -1.0 };
    let (mut successes, mut detected) = (0, 0);
    for t in 0..1000 {
        for r in run_trial(&cfg, cell, t).expect("trial") {
            if r.attack_success {
                successes += 1;
                detected += u32::from(r.detection == Some(1));
            }
        }
    }
    let rate = f64::from(detected) / f64::from(successes.max(1));

    // Auto policy: classic until the first S = 1, hopping from then on.
    let auto = ExperimentConfig {
        mode: ModePolicy::Auto,
        ..ExperimentConfig::default()
    };
    let table = auto.protocol.hop_table().expect("table");
    let channel = auto.channel();
    let attack = auto.attack_config(cell.sir_db, cell.tsy_us);
    let env = RoundEnv {
        protocol: &auto.protocol,
        hop_table: &table,
        channel: &channel,
        receiver: &auto.receiver,
        attack: Some(&attack),
        detection: Some(&auto.detection),
        keep_cir: false,
    };
    let (mut init, mut resp) = session_pair(&auto, trial_seed(9, cell, 0));
    let mut switched_at = None;
    let mut premature = false;
    let mut later_successes = 0;
    for round in 0..60u64 {
        let r = run_dstwr(&mut init, &mut resp, &env, round, seed::derive(90, &[round])).expect("round").record;
        match switched_at {
            None => {
                premature |= r.mode != RangingMode::Classic;
                if r.detection == Some(1) {
                    switched_at = Some(round);
                    premature |= init.mode != RangingMode::Hopping || resp.mode != RangingMode::Hopping;
                }
            }
            Some(_) => {
                premature |= r.mode != RangingMode::Hopping;
                later_successes += u32::from(r.attack_success);
            }
        }
    }
    let auto_ok = switched_at.is_some() && !premature && later_successes == 0;
    outcome(
        worst_fa <= 0.05 && rate >= 0.90 && auto_ok,
        format!(
            "false alarms {}; detection {detected}/{successes} = {:.1}% of successful attacks; auto switch at round {:?}, {later_successes} successes after",
            fa_detail.join(", "),
            100.0 * rate,
            switched_at
        ),
    )
}

fn brute_force_edge(m: &[f64], cfg: &ReceiverConfig) -> usize {
    let mut peak = 0;
    for i in 0..m.len() {
        if m[i] > m[peak] {
            peak = i;
        }
    }
    let p_max = m[peak].max(0.0);
    let p_rms = (m.iter().map(|x| x * x).sum::<f64>() / m.len() as f64).sqrt();
    let thr = (cfg.mpep_threshold * p_max).max(cfg.papr_threshold * p_rms);
    let mut first = peak;
    for i in (0..m.len()).rev() {
        if i < peak && peak - i <= cfg.btw_samples && m[i] > thr {
            first = i;
        }
    }
    first
}

fn c9_leading_edge(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for k in 0..10_000 {
        let len = rng.random_range(1..1200);
        let cfg = ReceiverConfig {
            btw_samples: rng.random_range(1..600),
            ..ReceiverConfig::default()
        };
        let m: Vec<f64> = if k % 2 == 0 {
            // Small integers make ties and exact-threshold values common.
            (0..len).map(|_| f64::from(rng.random_range(0..12u8))).collect()
        } else {
            let mut m: Vec<f64> = (0..len).map(|_| rng.random::<f64>().powi(3)).collect();
            for _ in 0..rng.random_range(0..4) {
                let at = rng.random_range(0..len);
                m[at] += rng.random_range(1.0..20.0);
            }
            m
        };
        let got = leading_edge_detect(&CirSpectrum::from_magnitude(m.clone(), 0), &cfg);
        mismatches += usize::from(got != brute_force_edge(&m, &cfg));
    }
    outcome(mismatches == 0, format!("{mismatches}/10000 disagreements with the brute-force scan"))
}

fn c10_reproducibility(_: &mut Shared) -> Outcome {
    let cfg = ExperimentConfig {
        trial_count: 20,
        master_seed: 7,
        sir_db: vec![-24.0, -26.0],
        tsy_us: vec![-1.0, 0.0, 2.0],
        ..ExperimentConfig::default()
    };
    let csv = |exec| {
        let cells = run_experiment(&cfg, exec, None).expect("grid").cells;
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &cells, true).expect("csv");
        (cells, buf)
    };
    let (par, a) = csv(Execution::Parallel(Some(4)));
    let (_, b) = csv(Execution::Parallel(Some(4)));
    let (serial, _) = csv(Execution::Serial);
    let reduced = ExperimentConfig {
        tsy_us: vec![-1.0, 2.0],
        ..cfg.clone()
    };
    let sub = run_experiment(&reduced, Execution::Serial, None).expect("grid").cells;
    let independent = sub.iter().all(|c| par.iter().any(|p| p == c));
    outcome(
        a == b && par == serial && independent,
        format!(
            "identical bytes: {}; serial == parallel: {}; removing a cell leaves others unchanged: {independent}",
            a == b,
            par == serial
        ),
    )
}

type Criterion = fn(&mut Shared) -> Outcome;

fn main() {
    let criteria: [(u32, &str, Criterion); 10] = [
        (1, "distance formula", c1_distance_formula),
        (2, "clean ranging accuracy", c2_clean_accuracy),
        (3, "attack success grid", c3_table2),
        (4, "hopping defense", c4_hopping_defense),
        (5, "hop neutrality", c5_hop_neutrality),
        (6, "analytics soundness", c6_analytics),
        (7, "counter-synchronized hopping", c7_counter_sync),
        (8, "detection contract", c8_detection),
        (9, "leading-edge oracle", c9_leading_edge),
        (10, "reproducibility", c10_reproducibility),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run(&mut shared);
        failed += usize::from(!o.passed);
        say(&format!(
            "{} criterion {id} ({name}): {} [{:.1} s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        ));
    }
    if failed > 0 {
        say(&format!("{failed} acceptance criteria failed"));
        std::process::exit(1);
    }
}
