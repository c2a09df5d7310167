//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured quantity next to its pinned tolerance.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wholescan::biometric::{Biometric, GestationalAge, Plane};
use wholescan::calibration::{pixel_size, TickSpec};
use wholescan::estimator::{init_estimator, EstimatorConfig, GrowthChart, MixtureState};
use wholescan::geometry::{
    dsc, heatmap_to_ellipse, perimeter_px, reconstruct_heatmap, Annotation, EllipseParams,
    PixelScale, Point2D,
};
use wholescan::pipeline::{
    ci_coverage, gate_chain, ingest, run, run_records, test_retest, write_jsonl,
    write_timeseries_csv, AnnotationPayload, Disposition, FrameRecord, GateConfig, Payload,
    RejectReason, RunConfig,
};
use wholescan::simulator::{
    simulate_heatmap_frame, simulate_scalebar, simulate_stream, ConfidenceTable, Corruption,
    PairedScanPair, ScanScenario,
};

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn ga() -> GestationalAge {
    GestationalAge::from_weeks_days(20, 3)
}

fn femur_values(sc: &ScanScenario) -> Vec<f64> {
    simulate_stream(sc)
        .unwrap()
        .records
        .iter()
        .filter_map(|r| match &r.payload {
            Payload::Measurement { values } => values.get(&Biometric::Fl).copied(),
            _ => None,
        })
        .collect()
}

fn femur_state() -> MixtureState {
    init_estimator(
        Biometric::Fl,
        ga(),
        &GrowthChart::synthetic(),
        &EstimatorConfig::default(),
    )
    .unwrap()
}

#[test]
fn criterion_01_mixture_recovery() {
    const P_T_TOL: f64 = 0.03;
    const MU_TOL: f64 = 0.05;
    const SIGMA_TOL: f64 = 0.1;
    const KS_MAX: f64 = 0.02;
    const RUNTIME_MAX: Duration = Duration::from_secs(10);

    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("femur.jsonl");
    let out = dir.path().join("fit.json");
    let sc = ScanScenario::femur_only(0.79, 1.8, 33.0, 10_000, 2024);
    let records = simulate_stream(&sc).unwrap().records;
    write_jsonl(std::fs::File::create(&stream).unwrap(), &records).unwrap();

    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_wholescan"))
        .args(["fit-dist", "--in"])
        .arg(&stream)
        .args(["--bounds", "23.8,42.2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    let elapsed = start.elapsed();
    assert!(status.success());
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let (p_t, mu, sigma, ks) = (
        fit["p_t"].as_f64().unwrap(),
        fit["mu"].as_f64().unwrap(),
        fit["sigma"].as_f64().unwrap(),
        fit["ks_statistic"].as_f64().unwrap(),
    );
    let pass = (p_t - 0.79).abs() <= P_T_TOL
        && (mu - 33.0).abs() <= MU_TOL
        && (sigma - 1.8).abs() <= SIGMA_TOL
        && ks < KS_MAX
        && elapsed < RUNTIME_MAX;
    report(
        1,
        pass,
        format!(
            "p_t={p_t:.4} (0.79±{P_T_TOL}) mu={mu:.4} (33±{MU_TOL}) sigma={sigma:.4} (1.8±{SIGMA_TOL}) ks={ks:.4} (<{KS_MAX}) time={elapsed:.2?} (<{RUNTIME_MAX:?})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_streaming_consistency() {
    const RUNS: u64 = 100;
    const MIN_OK: usize = 99;
    const K: f64 = 4.0;
    const FRAMES: usize = 500;
    const RUN_MAX: Duration = Duration::from_secs(1);

    let mut ok = 0;
    let mut slowest = Duration::ZERO;
    let mut worst = 0.0f64;
    for seed in 0..RUNS {
        let p_t = [0.6, 0.75, 0.9][(seed % 3) as usize];
        let sigma = [1.0, 1.8, 3.0][((seed / 3) % 3) as usize];
        let sc = ScanScenario::femur_only(p_t, sigma, 33.0, FRAMES, 1000 + seed);
        let values = femur_values(&sc);
        let start = Instant::now();
        let mut st = femur_state();
        for x in values {
            st.observe(x);
        }
        slowest = slowest.max(start.elapsed());
        let n_eff = st.weights().1;
        let z = (st.mu() - 33.0).abs() / (sigma / n_eff.sqrt());
        worst = worst.max(z);
        if z <= K {
            ok += 1;
        }
    }
    let pass = ok >= MIN_OK && slowest < RUN_MAX;
    report(
        2,
        pass,
        format!("{ok}/{RUNS} runs within {K}·sigma/sqrt(n_eff) (need {MIN_OK}); worst {worst:.2}; slowest run {slowest:.2?} (<{RUN_MAX:?})"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_credible_interval_coverage() {
    const SCANS: u64 = 1000;
    const FRAMES: usize = 200;
    const LO: f64 = 0.92;
    const HI: f64 = 0.98;
    const RUNTIME_MAX: Duration = Duration::from_secs(60);

    let chart = GrowthChart::synthetic();
    let cfg = RunConfig::new(ga());
    let start = Instant::now();
    let mut finals = Vec::new();
    for seed in 0..SCANS {
        let sc = ScanScenario::femur_only(0.79, 1.8, 33.0, FRAMES, 50_000 + seed);
        let recs = simulate_stream(&sc).unwrap().records;
        let r = run_records(&recs, &chart, &cfg).unwrap();
        finals.push(r.biometrics[&Biometric::Fl].final_estimate);
    }
    let elapsed = start.elapsed();
    let cov = ci_coverage(finals.iter().map(|s| (s, 33.0)));
    let pass = (LO..=HI).contains(&cov.fraction) && elapsed < RUNTIME_MAX;
    report(
        3,
        pass,
        format!(
            "coverage {}/{} = {:.3} (in [{LO}, {HI}]); time {elapsed:.2?} (<{RUNTIME_MAX:?})",
            cov.covered, cov.n, cov.fraction
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_outlier_robustness() {
    const SEEDS: u64 = 50;
    const MEDIAN_MAX: f64 = 0.5;
    const FRAMES: usize = 1800;

    let chart = GrowthChart::synthetic();
    let cfg = RunConfig::new(ga());
    let final_err = |p_t: f64, seed: u64| {
        let mut sc = ScanScenario::femur_only(p_t, 1.8, 33.0, FRAMES, seed);
        sc.confidence = ConfidenceTable::default();
        let recs = simulate_stream(&sc).unwrap().records;
        let r = run_records(&recs, &chart, &cfg).unwrap();
        (r.biometrics[&Biometric::Fl].final_estimate.mu - 33.0).abs()
    };
    let mut changes: Vec<f64> = (0..SEEDS)
        .map(|seed| (final_err(0.6, 7000 + seed) - final_err(1.0, 7000 + seed)).abs())
        .collect();
    changes.sort_by(f64::total_cmp);
    let median = 0.5 * (changes[24] + changes[25]);
    let pass = median <= MEDIAN_MAX;
    report(
        4,
        pass,
        format!(
            "median |Δerror| {median:.4} mm (≤{MEDIAN_MAX}); max {:.4} mm",
            changes.last().unwrap()
        ),
    );
    assert!(pass);
}

/// Arc length of the quarter ellipse by adaptive Simpson quadrature.
fn perimeter_oracle(a: f64, b: f64) -> f64 {
    let f = |t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
    fn simpson(f: &dyn Fn(f64) -> f64, l: f64, r: f64, fl: f64, fm: f64, fr: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (l + r);
        let (lm, rm) = (0.5 * (l + m), 0.5 * (m + r));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - l) / 6.0 * (fl + 4.0 * flm + fm);
        let right = (r - m) / 6.0 * (fm + 4.0 * frm + fr);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            simpson(f, l, m, fl, flm, fm, left, tol / 2.0, depth - 1)
                + simpson(f, m, r, fm, frm, fr, right, tol / 2.0, depth - 1)
        }
    }
    let (l, r) = (0.0, std::f64::consts::FRAC_PI_2);
    let (fl, fm, fr) = (f(l), f(0.5 * (l + r)), f(r));
    let whole = (r - l) / 6.0 * (fl + 4.0 * fm + fr);
    4.0 * simpson(&f, l, r, fl, fm, fr, whole, 1e-13 * b, 50)
}

#[test]
fn criterion_05_perimeter_series() {
    const TOL_NEAR: f64 = 1e-4;
    const TOL_FAR: f64 = 5e-4;
    let mut worst_near = 0.0f64;
    let mut worst_far = 0.0f64;
    for i in 0..=1000 {
        let ratio = 0.5 + 0.5 * i as f64 / 1000.0;
        for b in [1.0, 37.5, 120.0] {
            let a = ratio * b;
            let rel = (perimeter_px(a, b) - perimeter_oracle(a, b)).abs() / perimeter_oracle(a, b);
            if ratio >= 0.65 {
                worst_near = worst_near.max(rel);
            } else {
                worst_far = worst_far.max(rel);
            }
        }
    }
    let pass = worst_near < TOL_NEAR && worst_far < TOL_FAR;
    report(
        5,
        pass,
        format!("max rel error {worst_near:.2e} on [0.65,1] (<{TOL_NEAR:e}); {worst_far:.2e} on [0.5,0.65) (<{TOL_FAR:e})"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_pixel_size_calibration() {
    const SEEDS: u64 = 10;
    const LENGTH: usize = 1024;
    let ticks = TickSpec::default();
    let finest = ticks.spacings()[0];
    let mut failures = 0;
    let mut violations = 0;
    let mut cases = 0;
    let mut worst = 0.0f64;
    for scale in [0.2, 0.4, 0.8] {
        for noise in [0.0, 0.05, 0.1] {
            for seed in 0..SEEDS {
                cases += 1;
                let line = simulate_scalebar(scale, &ticks, LENGTH, noise, seed).unwrap();
                match pixel_size(&line, &ticks) {
                    Ok(s) => {
                        let rel = (s.mm_per_px() - scale).abs() / scale;
                        let period = finest / s.mm_per_px();
                        worst = worst.max(rel * period);
                        if rel > 1.0 / period {
                            violations += 1;
                        }
                    }
                    Err(_) => failures += 1,
                }
            }
        }
    }
    let pass = failures == 0 && violations == 0;
    report(
        6,
        pass,
        format!("{cases} scan lines: {failures} detection failures, {violations} beyond 1 lag/period; worst error {worst:.3} lag"),
    );
    assert!(pass);
}

fn heatmap_frame(plane: Plane, hm: wholescan::geometry::Heatmap) -> FrameRecord {
    FrameRecord {
        frame: 0,
        t: 0.0,
        plane,
        conf: 0.99,
        payload: Payload::Heatmap(hm),
        scale_mm_per_px: Some(0.5),
        scanline: None,
        frozen: false,
    }
}

fn all_states() -> BTreeMap<Biometric, MixtureState> {
    let chart = GrowthChart::synthetic();
    Biometric::ALL
        .iter()
        .map(|b| (*b, init_estimator(*b, ga(), &chart, &EstimatorConfig::default()).unwrap()))
        .collect()
}

#[test]
fn criterion_07_gate_correctness() {
    const FRAMES: u64 = 20;
    const W: usize = 192;
    const H: usize = 160;
    let gc = GateConfig::default();
    let scale = PixelScale::new(0.5).ok();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let center = Point2D::new(W as f64 / 2.0, H as f64 / 2.0);

    // missing endpoint on caliper measurements
    let (mut missing_total, mut missing_geometry) = (0, 0);
    for i in 0..FRAMES {
        let plane = if i % 2 == 0 { Plane::Femur } else { Plane::BrainCb };
        let half = rng.gen_range(20.0..40.0);
        let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let ann = Annotation::linear(
            Point2D::new(center.x - half * t.cos(), center.y - half * t.sin()),
            Point2D::new(center.x + half * t.cos(), center.y + half * t.sin()),
        )
        .unwrap();
        let hm = simulate_heatmap_frame(&ann, 2.0, Corruption::MissingEndpoint, W, H, i).unwrap();
        for (_, d) in gate_chain(&heatmap_frame(plane, hm), &gc, scale, &mut all_states()) {
            missing_total += 1;
            if d == Disposition::Rejected(RejectReason::Geometry) {
                missing_geometry += 1;
            }
        }
    }

    // smeared outlines
    let (mut smeared_low, mut smeared_dsc, mut smeared_other) = (0, 0, 0);
    for i in 0..FRAMES {
        let (plane, ecc) = if i % 2 == 0 { (Plane::BrainTv, 0.6) } else { (Plane::Abdominal, 0.4) };
        let b = rng.gen_range(45.0..65.0);
        let e = EllipseParams::new(center, b * (1.0f64 - ecc * ecc).sqrt(), b, rng.gen_range(0.0..3.0)).unwrap();
        let ann = Annotation::EllipseOutline(e);
        let hm = simulate_heatmap_frame(&ann, 2.0, Corruption::Smear, W, H, i).unwrap();
        let injected = heatmap_to_ellipse(&hm, gc.intensity_floor)
            .and_then(|f| reconstruct_heatmap(&Annotation::EllipseOutline(f), gc.kernel_sigma, W, H))
            .and_then(|r| dsc(&hm, &r, gc.dsc_binarize_at));
        let Ok(score) = injected else {
            smeared_other += 1;
            continue;
        };
        if score >= 0.6 {
            smeared_other += 1;
            continue;
        }
        smeared_low += 1;
        for (_, d) in gate_chain(&heatmap_frame(plane, hm), &gc, scale, &mut all_states()) {
            if d == Disposition::Rejected(RejectReason::Dsc) {
                smeared_dsc += 1;
            } else {
                smeared_other += 1;
            }
        }
    }
    let smeared_routed = smeared_dsc + smeared_other;

    // eccentricity fixtures
    let fixture = |plane: Plane, ecc: f64, b: f64| {
        let fr = FrameRecord {
            payload: Payload::Annotation(AnnotationPayload::Ellipse {
                center,
                a: b * (1.0 - ecc * ecc).sqrt(),
                b,
                theta: 0.7,
            }),
            ..heatmap_frame(plane, wholescan::geometry::Heatmap::zeros(1, 1))
        };
        gate_chain(&fr, &gc, scale, &mut all_states())
            .iter()
            .all(|(_, d)| *d == Disposition::Rejected(RejectReason::Eccentricity))
    };
    let head_ok = fixture(Plane::BrainTv, 0.242, 56.0);
    let abdomen_ok = fixture(Plane::Abdominal, 0.670, 50.0);

    let pass = missing_total > 0
        && missing_geometry == missing_total
        && smeared_low == FRAMES
        && smeared_dsc == smeared_routed
        && head_ok
        && abdomen_ok;
    report(
        7,
        pass,
        format!(
            "missing_endpoint {missing_geometry}/{missing_total} geometry; smeared with DSC<0.6 {smeared_low}/{FRAMES}, {smeared_dsc}/{smeared_routed} dsc rejections; e=0.242 head rejected={head_ok}; e=0.670 abdomen rejected={abdomen_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_update_invariants_and_replay() {
    const CALLS: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0usize;
    let mut calls = 0usize;
    while calls < CALLS {
        let lower = rng.gen_range(-100.0..100.0);
        let upper = lower + rng.gen_range(1e-3..200.0);
        let mu = rng.gen_range(lower..upper);
        let sigma = rng.gen_range(1e-3..50.0);
        let cfg = EstimatorConfig {
            p_t0: rng.gen_range(0.01..0.99),
            w0: rng.gen_range(0.1..100.0),
            w_mu0: rng.gen_range(0.1..100.0),
            w_sigma2_0: rng.gen_range(0.1..100.0),
            ..EstimatorConfig::default()
        };
        let Ok(mut st) = MixtureState::new(mu, sigma, lower, upper, &cfg) else {
            continue;
        };
        for _ in 0..1000 {
            let x = match rng.gen_range(0..10) {
                0 => rng.gen_range(lower - 1e3..upper + 1e3),
                1 => upper,
                2 => lower,
                _ => rng.gen_range(lower..=upper),
            };
            st.observe(x);
            calls += 1;
            if st.check_invariants().is_err() {
                violations += 1;
            }
        }
    }

    // replay: in-memory, and through a JSONL round trip
    let sc = ScanScenario::standard(88);
    let recs = simulate_stream(&sc).unwrap().records;
    let chart = GrowthChart::synthetic();
    let cfg = RunConfig::new(ga());
    let a = run_records(&recs, &chart, &cfg).unwrap();
    let mut jsonl = Vec::new();
    write_jsonl(&mut jsonl, &recs).unwrap();
    let (b, _) = run(jsonl.as_slice(), &chart, &cfg, true).unwrap();
    let bits = |r: &wholescan::pipeline::RunReport| -> Vec<u64> {
        r.timeseries
            .iter()
            .flat_map(|p| {
                let s = p.snapshot;
                [s.mu, s.sigma_hat, s.ci_low, s.ci_high, s.p_t].map(f64::to_bits)
            })
            .collect()
    };
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    write_timeseries_csv(&mut ca, &a).unwrap();
    write_timeseries_csv(&mut cb, &b).unwrap();
    let identical = bits(&a) == bits(&b) && !a.timeseries.is_empty() && ca == cb && a.biometrics == b.biometrics;
    let replay_len = ingest(jsonl.as_slice(), true).unwrap().records.len();

    let pass = violations == 0 && identical && replay_len == recs.len();
    report(
        8,
        pass,
        format!("{calls} fuzzed updates, {violations} invariant violations; replay of {} snapshots bit-identical={identical}", a.timeseries.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_09_test_retest() {
    const PAIRS: u64 = 20;
    const FACTOR: f64 = 2.0;
    let chart = GrowthChart::synthetic();
    let cfg = RunConfig::new(ga());
    let reports: Vec<_> = (0..PAIRS)
        .map(|i| {
            let pair = PairedScanPair {
                scenario: ScanScenario::standard(0),
                seeds: [2 * i + 1, 2 * i + 2],
                operator_offsets_mm: [0.0, 0.0],
            };
            let (a, b) = wholescan::simulator::simulate_paired_scans(&pair).unwrap();
            (
                run_records(&a.records, &chart, &cfg).unwrap(),
                run_records(&b.records, &chart, &cfg).unwrap(),
            )
        })
        .collect();
    let stats = test_retest(&reports).unwrap();
    let mut pass = stats.len() == Biometric::ALL.len();
    let mut detail = Vec::new();
    for (b, s) in &stats {
        let ok = s.stats.sd_mm <= FACTOR * s.predicted_sd_mm;
        pass &= ok;
        detail.push(format!(
            "{b} sd={:.3} pred={:.3} ({}/{} pairs)",
            s.stats.sd_mm, s.predicted_sd_mm, s.pairs, PAIRS
        ));
    }
    report(9, pass, format!("sd ≤ {FACTOR}× predicted: {}", detail.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_10_throughput() {
    const MIN_RATE: f64 = 50_000.0;
    let mut sc = ScanScenario::standard(10);
    sc.schedule.iter_mut().for_each(|s| s.duration_s *= 3.0);
    let recs = simulate_stream(&sc).unwrap().records;
    let mut jsonl = Vec::new();
    write_jsonl(&mut jsonl, &recs).unwrap();
    let chart = GrowthChart::synthetic();
    let cfg = RunConfig::new(ga());
    let start = Instant::now();
    let (r, _) = run(jsonl.as_slice(), &chart, &cfg, true).unwrap();
    let elapsed = start.elapsed();
    let rate = r.frames_total as f64 / elapsed.as_secs_f64();
    let pass = rate >= MIN_RATE && r.frames_total == recs.len() as u64;
    report(
        10,
        pass,
        format!("{} records in {elapsed:.2?}: {rate:.0} records/s (≥{MIN_RATE})", r.frames_total),
    );
    assert!(pass);
}
