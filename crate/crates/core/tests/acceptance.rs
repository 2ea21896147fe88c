//! The ten acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines are always printed; the
//! process exits non-zero when any criterion fails.

use std::fs;
use std::sync::Arc;

use queuecap::capacity_opt::{
    c_curve, feedback_capacity, kkt_structure_check, sup_entropy_feedback, sup_entropy_weak,
    weak_feedback_bound, Problem, SolverOptions,
};
use queuecap::channel_oracle::{exact_departure_law, per_letter_entropy, Discipline, Enumeration, McOptions};
use queuecap::cli::{self, RunConfig};
use queuecap::distributions::{entropy, pplus_law, Base, Pmf, ServiceKind, ServiceModel};
use queuecap::gap_checker::{
    critical_lambda_binary, entropy_rate_condition, theorem5_check, RateConditionReport, RateMethod,
    RateOptions, Verdict,
};
use queuecap::queue_sim::{
    exact_fifo_departure_law, normalize_strategy, total_variation, ArrivalPolicy, RandomStrategy,
    Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn h2(p: f64) -> f64 {
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Entropy of the geometric law on {1, 2, ...} with mean 1/l, bits.
fn h_geo(l: f64) -> f64 {
    h2(l) / l
}

fn bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

fn dense(p: &Pmf, len: usize) -> Vec<f64> {
    (0..len).map(|k| p.prob(k)).collect()
}

fn conv(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            if i + j < len {
                out[i + j] += x * y;
            }
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let (mu, len) = (0.5, 160);
    let service = ServiceModel::geometric(mu).unwrap();
    let opts = SolverOptions::default();
    let g = |l: f64| -> Vec<f64> {
        (0..len).map(|k| if k == 0 { 0.0 } else { l * (1.0 - l).powi(k as i32 - 1) }).collect()
    };
    let mut pass = true;
    let mut notes = Vec::new();
    for lambda in [0.1, 0.25, 0.4] {
        // W with W + S ~ g_lambda: atom lambda/mu at 0, then geometric of ratio 1 - lambda
        let w: Vec<f64> = (0..len)
            .map(|k| {
                if k == 0 {
                    lambda / mu
                } else {
                    lambda / mu * (mu - lambda) * (1.0 - lambda).powi(k as i32 - 1)
                }
            })
            .collect();
        let back = conv(&w, &g(mu), len);
        let deconv_err =
            back.iter().zip(g(lambda)).take(100).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let want = lambda * (h_geo(lambda) - h_geo(mu));
        let fb = feedback_capacity(lambda, &service, &opts).unwrap();
        let wf = weak_feedback_bound(lambda, &service, &opts).unwrap();
        let w_err = dense(&fb.optimizer, 100)
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // emulating X: atom at 0 plus geometric tail of ratio 1 - lambda
        let tail = (mu - lambda) * (1.0 - (1.0 - mu) * (1.0 - lambda)) / (mu * mu * (1.0 - lambda));
        let x: Vec<f64> = (0..len)
            .map(|k| if k == 0 { 1.0 - tail } else { tail * lambda * (1.0 - lambda).powi(k as i32 - 1) })
            .collect();
        let x_pmf = Pmf::from_dense(&x, (1.0 - x.iter().sum::<f64>()).max(0.0)).unwrap();
        let emulated = pplus_law(&x_pmf, service.pmf()).unwrap();
        let emu_err =
            dense(&emulated, 100).iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ok = (fb.value_bits_per_slot - want).abs() < 1e-4
            && deconv_err < 1e-10
            && (wf.value_bits_per_slot - fb.value_bits_per_slot).abs() < 1e-3
            && emu_err < 1e-8;
        pass &= ok;
        notes.push(format!(
            "l={lambda}: C_F={:.6} oracle={want:.6} weak={:.6} deconv={deconv_err:.1e} emul={emu_err:.1e} p_W={w_err:.1e}",
            fb.value_bits_per_slot, wf.value_bits_per_slot
        ));
    }
    outcome(pass, notes.join("; "))
}

fn criterion_2() -> Outcome {
    let service = ServiceModel::deterministic(1).unwrap();
    let opts = SolverOptions::default();
    let mut pass = true;
    let mut notes = Vec::new();
    for lambda in [0.2, 0.5, 0.8] {
        let a = 1.0 / lambda - 1.0;
        let fb = sup_entropy_feedback(&service, a, &opts).unwrap();
        let wf = sup_entropy_weak(&service, a, &opts).unwrap();
        // X = W + 1 reproduces W through (X - 1)^+
        let x = fb.optimizer.shift(1).unwrap();
        let emu = pplus_law(&x, service.pmf()).unwrap();
        let emu_tv = emu.total_variation(&fb.optimizer);
        let h = h_geo(lambda);
        let ok = (fb.value_bits - h).abs() < 1e-6 && (wf.value_bits - h).abs() < 1e-6 && emu_tv < 1e-12;
        pass &= ok;
        notes.push(format!(
            "l={lambda}: fb={:.9} wf={:.9} H(g)={h:.9}",
            fb.value_bits, wf.value_bits
        ));
    }
    outcome(pass, notes.join("; "))
}

fn criterion_3() -> Outcome {
    let service = ServiceModel::binary12();
    let opts = SolverOptions::default();
    let mut pass = true;
    let mut notes = Vec::new();
    for r in theorem5_check(&service, &[0.30, 0.40, 0.55, 0.60], &opts) {
        let r = r.unwrap();
        pass &= r.strict && r.gap_nats > 1e-4;
        notes.push(format!("gap({})={:.3e} nats", r.lambda, r.gap_nats));
    }
    let grid: Vec<f64> = (1..=64).map(|i| 0.05 + 0.6 * i as f64 / 65.0).collect();
    let sweep: Vec<_> = theorem5_check(&service, &grid, &opts).into_iter().map(|r| r.unwrap()).collect();
    let min = sweep.iter().min_by(|a, b| a.gap_nats.total_cmp(&b.gap_nats)).unwrap();
    let star = critical_lambda_binary();
    let near = (min.lambda - star).abs() <= 0.02;
    pass &= near;
    notes.push(format!(
        "64-point minimum at l={:.4} (gap {:.3e} nats), l*={star:.5}, distance {:.4}",
        min.lambda,
        min.gap_nats,
        (min.lambda - star).abs()
    ));
    outcome(pass, notes.join("; "))
}

fn criterion_4() -> Outcome {
    let service = ServiceModel::binary12();
    let lambda = 0.4;
    let sup = sup_entropy_feedback(&service, 1.0 / lambda - 1.5, &SolverOptions::default()).unwrap();
    let rep = kkt_structure_check(Problem::Feedback, &sup.output, lambda).unwrap();
    let beta = rep.budget_multiplier();
    // constraints recomputed from the output law
    let (v1, v2) = (sup.output.prob(1), sup.output.prob(2));
    let c1 = v1 + v2 - (1.0 - (-2.0 * beta).exp());
    let c2 = v2 + (1.0 + lambda) * v1 - 2.0 * lambda;
    let pass = rep.residual < 1e-4 && beta > 0.0 && c1.abs() < 1e-4 && c2.abs() < 1e-4;
    outcome(pass, format!("residual={:.2e} beta={beta:.6} constraints=({c1:.1e}, {c2:.1e})", rep.residual))
}

/// Arrivals with `a_i < b_{i-1}` over all FIFO runs with services in {1, 2}.
fn moved_arrivals(strategy: &dyn Strategy, message: u64, n: usize) -> usize {
    let mut moved = 0;
    for path in 0..1usize << (n - 1) {
        let (mut b, mut d) = (Vec::new(), 0u64);
        for i in 0..n {
            let a = strategy.arrival(message, &b);
            if b.last().is_some_and(|&prev| a < prev) {
                moved += 1;
            }
            let start = a.max(d);
            b.push(start);
            d = start + 1 + ((path >> i) & 1) as u64;
        }
    }
    moved
}

fn criterion_5() -> Outcome {
    let service = ServiceModel::binary12();
    let mut worst: f64 = 0.0;
    let mut moved = 0;
    for seed in [11u64, 22, 33] {
        let strategy: Arc<dyn Strategy> = Arc::new(RandomStrategy { seed, max_value: 3 });
        for message in 0..4 {
            let policy = ArrivalPolicy::Feedback { strategy: strategy.clone(), message };
            let ArrivalPolicy::Feedback { strategy: normalized, .. } = normalize_strategy(&policy).unwrap()
            else {
                unreachable!()
            };
            let before = exact_fifo_departure_law(strategy.as_ref(), message, &service, 3, 1 << 20).unwrap();
            let after = exact_fifo_departure_law(normalized.as_ref(), message, &service, 3, 1 << 20).unwrap();
            worst = worst.max(total_variation(&before, &after));
            moved += moved_arrivals(strategy.as_ref(), message, 3);
        }
    }
    outcome(worst < 1e-12, format!("max TV={worst:.1e} over 3 strategies x 4 messages ({moved} arrivals moved along service paths)"))
}

fn random_law(rng: &mut ChaCha8Rng, support: usize) -> Pmf {
    let w: Vec<f64> = (0..support).map(|_| rng.gen::<f64>()).collect();
    Pmf::from_weights(0, w).unwrap()
}

fn criterion_6() -> Outcome {
    let service = ServiceModel::binary12();
    let opts = SolverOptions::default();
    let limits = Enumeration::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h_s = 1.0;
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for _ in 0..20 {
        let px = random_law(&mut rng, 5);
        let ex: f64 = px.iter().map(|(k, p)| k as f64 * p).sum();
        let ew: f64 = px
            .iter()
            .map(|(k, p)| p * 0.5 * ((k as f64 - 1.0).max(0.0) + (k as f64 - 2.0).max(0.0)))
            .sum();
        for n in 2..=5 {
            let law = exact_departure_law(&px, &service, n, &limits).unwrap();
            let left = per_letter_entropy(&law).unwrap() - h_s;
            let m = (ex + (n as f64 - 1.0) * ew) / n as f64;
            let c = c_curve(&service, &[m], &opts).unwrap()[0].1;
            worst = worst.max(left - c);
            count += 1;
        }
    }
    outcome(worst <= 1e-9, format!("{count} cases, max(left - right)={worst:.3e} bits"))
}

fn criterion_7() -> Outcome {
    let service = ServiceModel::binary12();
    let grid: Vec<f64> = (0..16).map(|i| 5.0 * i as f64 / 15.0).collect();
    let c: Vec<f64> = c_curve(&service, &grid, &SolverOptions::default()).unwrap().into_iter().map(|p| p.1).collect();
    let mono = c.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let conc = c.windows(3).map(|w| (w[0] + w[2]) / 2.0 - w[1]).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        mono <= 1e-8 && conc <= 1e-6,
        format!("max decrease={mono:.2e}, max midpoint excess={conc:.2e}, c(5)={:.6}", c[15]),
    )
}

/// Random pmf on {1..20} tilted to mean `target`.
fn tilted(rng: &mut ChaCha8Rng, target: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let law = |t: f64| -> Vec<f64> {
        let raw: Vec<f64> = w.iter().enumerate().map(|(i, x)| x * (t * i as f64).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    };
    let mean = |p: &[f64]| p.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum::<f64>();
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(&law(mid)) > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    law(lo)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pass = true;
    let mut notes = Vec::new();
    for lambda in [0.2, 0.5] {
        let h = h_geo(lambda);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let target = 1.0 + (1.0 / lambda - 1.0) * rng.gen::<f64>();
            let p = tilted(&mut rng, target);
            let shifted = Pmf::new(1, p.clone(), 0.0).unwrap();
            let m: f64 = shifted.iter().map(|(k, x)| k as f64 * x).sum();
            assert!(m <= 1.0 / lambda + 1e-12);
            worst = worst.max(entropy(&shifted, Base::Bits).unwrap() - h);
        }
        // equality at the geometric law itself
        let g: Vec<f64> = (1..4000).map(|k| lambda * (1.0 - lambda).powi(k - 1)).collect();
        let eq = (bits(&g) - h).abs();
        pass &= worst <= 1e-9 && worst < 0.0 && eq < 1e-9;
        notes.push(format!("l={lambda}: max H - H(g)={worst:.3e}, |H(g_l) - closed form|={eq:.1e}"));
    }
    outcome(pass, notes.join("; "))
}

fn rate_runs(seed: u64) -> (RateConditionReport, RateConditionReport) {
    let service = ServiceModel::binary12();
    let exact = entropy_rate_condition(
        &service,
        Discipline::LcfsPreemptive,
        0.4,
        &RateOptions { n: 4, method: RateMethod::Exact, ..Default::default() },
    )
    .unwrap();
    let mc = entropy_rate_condition(
        &service,
        Discipline::LcfsPreemptive,
        0.4,
        &RateOptions {
            n: 6,
            method: RateMethod::Mc,
            seed: Some(seed),
            mc: McOptions { samples: 1_000_000, ..Default::default() },
            ..Default::default()
        },
    )
    .unwrap();
    (exact, mc)
}

fn criterion_9() -> Outcome {
    let (exact, mc) = rate_runs(9);
    let [el, eh] = exact.rate_bracket;
    let [ml, mh] = mc.rate_bracket;
    let overlap = el.max(ml) <= eh.min(mh);
    let pass = exact.satisfied == Verdict::Yes && mc.satisfied == Verdict::Yes && overlap;
    outcome(
        pass,
        format!(
            "H(g)={:.6}; exact n=4 [{el:.6}, {eh:.6}] {:?}; mc n=6 [{ml:.6}, {mh:.6}] {:?}; overlap={overlap}",
            exact.h_geometric, exact.satisfied, mc.satisfied
        ),
    )
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut same = true;
    let mut files = 0;
    // entropy-rate Monte Carlo, gap sweep and queue traces, each run twice
    let runs: Vec<(&str, RunConfig)> = vec![
        (
            "mc.json",
            RunConfig {
                command: Some(cli::CommandKind::EntropyRate),
                policy: Discipline::LcfsPreemptive,
                lambda: Some(0.4),
                n: Some(6),
                method: RateMethod::Mc,
                seed: Some(10),
                mc: McOptions { samples: 200_000, ..Default::default() },
                ..Default::default()
            },
        ),
        (
            "lcfs.csv",
            RunConfig {
                command: Some(cli::CommandKind::Simulate),
                policy: Discipline::LcfsPreemptive,
                lambda: Some(0.4),
                n: Some(1000),
                seed: Some(7),
                ..Default::default()
            },
        ),
        (
            "fifo.csv",
            RunConfig {
                command: Some(cli::CommandKind::Simulate),
                service: ServiceKind::Geometric { mu: 0.5 },
                lambda: Some(0.25),
                n: Some(1000),
                seed: Some(7),
                ..Default::default()
            },
        ),
    ];
    for (name, cfg) in runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{rep}-{name}"));
            let cfg = RunConfig { out: out.to_str().unwrap().into(), ..cfg.clone() };
            cli::run(&cfg).unwrap();
            outputs.push(fs::read(&out).unwrap());
        }
        files += 1;
        same &= outputs[0] == outputs[1] && !outputs[0].is_empty();
    }
    let (a, b) = (rate_runs(10).1, rate_runs(10).1);
    same &= serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap();
    outcome(same, format!("{files} artifacts plus the criterion-9 Monte Carlo report, each run twice"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("geometric-service equality", criterion_1),
        ("deterministic-service equality", criterion_2),
        ("binary strict gap", criterion_3),
        ("KKT structure", criterion_4),
        ("normalization invariance", criterion_5),
        ("multi-letter <= single-letter", criterion_6),
        ("concavity and monotonicity of c(a)", criterion_7),
        ("geometric law maximizes entropy", criterion_8),
        ("entropy-rate condition", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = std::time::Instant::now();
        let r = f();
        if !r.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({:.1}s) {}",
            i + 1,
            if r.pass { "PASS" } else { "FAIL" },
            name,
            t.elapsed().as_secs_f64(),
            r.detail
        );
    }
    println!("acceptance: {} of 10 passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
