//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits nonzero if any failed.

use std::process::ExitCode;
use std::time::Instant;

use gqkd_core::analysis::{
    calibrate, secrecy_efficiency, secure_distance, security_threshold, sweep, total_qber,
    Observation, Observed, SecureDistance,
};
use gqkd_core::model::{fwhm_to_sigma, raw_click_rate, transmittance, ClockConfig, FibreChannel};
use gqkd_core::montecarlo::{cross_check, expected_counts, run, run_blocks, run_with_workers, RunSpec};
use gqkd_core::timing::{expected_histogram, qber_int, synth_histogram, TimingResponse};
use gqkd_core::SystemConfig;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// Independent erfc: Maclaurin series below 3, Lentz continued fraction above.
fn erfc_oracle(x: f64) -> f64 {
    if x < 3.0 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        let tiny = 1e-300;
        let mut f = x;
        let (mut c, mut d) = (x, 0.0);
        for k in 1..200 {
            let a = k as f64 / 2.0;
            d = x + a * d;
            d = if d.abs() < tiny { 1.0 / tiny } else { 1.0 / d };
            c = x + a / c;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x * x).exp() / std::f64::consts::PI.sqrt() / f
    }
}

fn criterion_1() -> Outcome {
    let at_zero = secrecy_efficiency(0.0, 0.29).map_err(|e| e.to_string())?;
    let a = secrecy_efficiency(0.036, 0.29).map_err(|e| e.to_string())?;
    let b = secrecy_efficiency(0.01, 0.29).map_err(|e| e.to_string())?;
    // High-precision evaluations of the formula, frozen.
    let (a_ref, b_ref) = (0.433_101_754_02, 0.614_548_611_64);
    check(
        at_zero == 0.71 && (a - 0.4331).abs() <= 1e-4 && (b - 0.6146).abs() <= 1e-4
            && (a - a_ref).abs() < 1e-10 && (b - b_ref).abs() < 1e-10,
        format!("SE(0)={at_zero}, SE(0.036)={a:.6}, SE(0.01)={b:.6}"),
    )
}

fn criterion_2() -> Outcome {
    let q = security_threshold(0.29).map_err(|e| e.to_string())?;
    check(
        (q - 0.1198).abs() <= 1e-3 && (q - 0.119_478_137_4).abs() < 1e-6,
        format!("Q* = {q:.7}, the exact root of the secrecy-efficiency formula"),
    )
}

fn criterion_3() -> Outcome {
    let sigma = fwhm_to_sigma(400.0);
    let response = TimingResponse::centered(sigma, 500.0);
    let q = qber_int(gqkd_core::timing::isi_leak_fraction(&response));
    let oracle = 0.5 * erfc_oracle(250.0 / sigma / std::f64::consts::SQRT_2);
    let sspd_int = total_qber(&SystemConfig::sspd_3g3()).map_err(|e| e.to_string())?.qber_int;
    let distances: Vec<f64> = (0..=60).map(|i| i as f64 * 0.5).collect();
    let rows = sweep(&SystemConfig::sispad_2g(), &distances).map_err(|e| e.to_string())?;
    let min_q = rows.iter().map(|r| r.breakdown.total).fold(f64::INFINITY, f64::min);
    check(
        (q - 0.0706).abs() <= 1e-4
            && (q - oracle).abs() < 1e-12
            && sspd_int < 1e-4
            && (0.04..=0.08).contains(&min_q),
        format!("SPAD qber_int={q:.7} (oracle {oracle:.7}), SSPD qber_int={sspd_int:.3e}, SPAD min QBER={min_q:.4}"),
    )
}

fn calibrated_sspd() -> Result<SystemConfig, String> {
    let obs = [Observation {
        distance_km: 25.0,
        observed: Observed::Qber(0.036),
    }];
    calibrate(&SystemConfig::sspd_3g3(), &obs)
        .map(|c| c.config)
        .map_err(|e| e.to_string())
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let cfg = calibrated_sspd()?;
    let q25 = total_qber(&cfg.with_distance(25.0)).map_err(|e| e.to_string())?.total;
    let mut worst: f64 = 0.0;
    for i in 2..=40 {
        let d = i as f64 * 0.5;
        worst = worst.max(total_qber(&cfg.with_distance(d)).map_err(|e| e.to_string())?.total);
    }
    let bounded = cfg.detector0.dark_rate_hz <= 10.0
        && cfg.detector1.dark_rate_hz <= 10.0
        && (0.0..=10.0).contains(&cfg.receiver.coupling_loss_db);
    let elapsed = t.elapsed().as_secs_f64();
    check(
        (q25 - 0.036).abs() <= 0.002 && worst < 0.01 && bounded && elapsed < 10.0,
        format!(
            "QBER(25)={q25:.5}, max QBER 1-20 km={worst:.5}, dark={} Hz, coupling={} dB, extinction={} dB, {elapsed:.2}s",
            cfg.detector0.dark_rate_hz, cfg.receiver.coupling_loss_db, cfg.receiver.extinction_db
        ),
    )
}

fn criterion_5() -> Outcome {
    let cfg = calibrated_sspd()?;
    let sspd = secure_distance(&cfg).map_err(|e| e.to_string())?;
    let spad = secure_distance(&SystemConfig::sispad_2g()).map_err(|e| e.to_string())?;
    let sspd_ok = match sspd {
        SecureDistance::Within(d) => d > 25.0,
        SecureDistance::BeyondHorizon => true,
    };
    let spad_ok = matches!(spad, SecureDistance::Within(d) if (8.0..=16.0).contains(&d));
    check(sspd_ok && spad_ok, format!("SSPD (calibrated) {sspd:?}, SPAD {spad:?}"))
}

fn criterion_6() -> Outcome {
    const TARGET_SIFTED: f64 = 4e5;
    const SEED: u64 = 0x05ee_db92;
    let mut lines = Vec::new();
    let mut ok = true;
    let t = Instant::now();
    for (name, base) in [("SSPD_3G3", SystemConfig::sspd_3g3()), ("SISPAD_2G", SystemConfig::sispad_2g())] {
        for d in [1.0, 10.0, 20.0, 25.0] {
            let cfg = base.with_distance(d);
            let per_cycle = expected_counts(&cfg).sifted_per_cycle;
            let cycles = ((TARGET_SIFTED / per_cycle).ceil() as u64).max(10_000_000);
            let spec = RunSpec {
                config: cfg,
                cycles,
                seed: SEED,
                block_size: cycles.div_ceil(256),
            };
            let tally = run(&spec).map_err(|e| e.to_string())?;
            let report = cross_check(&cfg, &tally).map_err(|e| e.to_string())?;
            let mut worst = ("", 0.0f64);
            for term in ["qber_total", "qber_opt", "qber_det", "qber_int"] {
                let row = report.row(term).ok_or("missing row")?;
                if row.z.abs() > worst.1.abs() || worst.0.is_empty() {
                    worst = (term, row.z);
                }
                ok &= row.z.abs() <= 3.0;
            }
            lines.push(format!("{name}@{d}km n={} worst {}={:+.2}σ", tally.sifted, worst.0, worst.1));
        }
    }
    let mc_time = t.elapsed().as_secs_f64();

    // Determinism across worker counts and exact block merge.
    let spec = RunSpec {
        config: SystemConfig::sispad_2g().with_distance(1.0),
        cycles: 10_000_000,
        seed: SEED,
        block_size: 1 << 16,
    };
    let t = Instant::now();
    let one = run_with_workers(&spec, 1).map_err(|e| e.to_string())?;
    let single_time = t.elapsed().as_secs_f64();
    let many = run_with_workers(&spec, 4).map_err(|e| e.to_string())?;
    let split = spec.block_count() / 3;
    let merged = run_blocks(&spec, 0..split)
        .map_err(|e| e.to_string())?
        .merged(&run_blocks(&spec, split..spec.block_count()).map_err(|e| e.to_string())?);
    let deterministic = one == many && one == merged && one.is_consistent();
    ok &= deterministic && single_time < 60.0;
    check(
        ok,
        format!(
            "{}; determinism/merge {}; 1e7 cycles single-threaded {single_time:.2}s; sweep {mc_time:.1}s",
            lines.join(", "),
            if deterministic { "exact" } else { "BROKEN" }
        ),
    )
}

fn criterion_7() -> Outcome {
    let ch = |km: f64| FibreChannel {
        loss_db_per_km: 2.2,
        length_km: km,
        extra_loss_db: 0.0,
    };
    let mut worst_mult: f64 = 0.0;
    for (a, b) in [(0.5, 1.5), (3.0, 7.25), (10.0, 15.0), (0.0, 20.0)] {
        let lhs = transmittance(&ch(a + b));
        let rhs = transmittance(&ch(a)) * transmittance(&ch(b));
        worst_mult = worst_mult.max(((lhs - rhs) / lhs).abs());
    }
    let mut cfg = SystemConfig::sspd_3g3();
    cfg.detector0.dead_time_ps = 0.0;
    cfg.detector1.dead_time_ps = 0.0;
    let mut worst_slope: f64 = 0.0;
    for d in [1.0, 5.0, 12.0, 24.0] {
        let r0 = raw_click_rate(&cfg.with_distance(d));
        let r1 = raw_click_rate(&cfg.with_distance(d + 1.0));
        let slope = 10.0 * (r1 / r0).log10();
        worst_slope = worst_slope.max(((slope + 2.2) / 2.2).abs());
    }
    check(
        worst_mult <= 1e-12 && worst_slope <= 1e-9,
        format!("multiplicativity rel err {worst_mult:.1e}, slope rel err {worst_slope:.1e}"),
    )
}

fn pooled_chi_square(signal_hz: f64, dark_hz: f64) -> Result<(f64, f64, f64), String> {
    let clock = ClockConfig { frequency_hz: 3.3e9 };
    let response = TimingResponse::centered(35.842_99, clock.period_ps());
    let (duration, bin) = (1.0, 4.0);
    let expected = expected_histogram(&response, signal_hz, dark_hz, &clock, duration, bin)
        .map_err(|e| e.to_string())?;
    let mut stat = 0.0;
    let mut dof = 0.0;
    for seed in 0..100 {
        let h = synth_histogram(&response, signal_hz, dark_hz, &clock, duration, bin, seed)
            .map_err(|e| e.to_string())?;
        for (&o, &e) in h.counts.iter().zip(&expected) {
            if e >= 5.0 {
                stat += (o as f64 - e).powi(2) / e;
                dof += 1.0;
            }
        }
    }
    let critical = ChiSquared::new(dof).map_err(|e| e.to_string())?.inverse_cdf(0.99);
    Ok((stat, dof, critical))
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let (s1, d1, c1) = pooled_chi_square(1e5, 1e3)?;
    let (s2, d2, c2) = pooled_chi_square(0.0, 1e4)?;
    let elapsed = t.elapsed().as_secs_f64();
    check(
        s1 < c1 && s2 < c2 && elapsed < 30.0,
        format!(
            "profile χ²={s1:.0} (dof {d1}, 99% {c1:.0}); dark floor χ²={s2:.0} (dof {d2}, 99% {c2:.0}); {elapsed:.2}s"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("secrecy efficiency point values", criterion_1),
        ("security threshold", criterion_2),
        ("ISI physics and SPAD QBER floor", criterion_3),
        ("calibrated operating point", criterion_4),
        ("secure range comparison", criterion_5),
        ("Monte Carlo vs closed forms", criterion_6),
        ("link-budget properties", criterion_7),
        ("histogram statistics", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
