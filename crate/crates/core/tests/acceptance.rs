//! Acceptance checks. Runs without the libtest harness so that models are
//! trained once and every criterion prints a single line.
//!
//! Correctness criteria (1-5, 9 and fault detection) decide the exit code.
//! The benchmark outcomes (6-8) are reported; set `RIGHTCTX_STRICT_ACCEPTANCE=1`
//! to make them decide it as well.

use std::process::ExitCode;
use std::time::Instant;

use rightctx::par;
use rightctx::trainer::eval::{DecodeMode, EvalReport};
use rightctx::trainer::{Checkpoint, LossVariant};
use rightctx::verify::benchmark::{BenchmarkConfig, BenchmarkData};
use rightctx::verify::instances::Limits;
use rightctx::verify::suite::{run_suite, PropertyResult, SuiteConfig, SuiteReport};

const SEEDS: [u64; 3] = [0, 1, 2];
const RTF_RUNS: usize = 5;

const EMPIRICAL: [&str; 3] = ["6", "7", "8"];

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn line(id: &'static str, passed: bool, detail: String) -> Outcome {
    println!(
        "criterion {id}: {} {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    Outcome { id, passed, detail }
}

fn strict() -> bool {
    std::env::var("RIGHTCTX_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1")
}

fn props<'a>(report: &'a SuiteReport, names: &[&str]) -> Vec<&'a PropertyResult> {
    names
        .iter()
        .map(|n| {
            report
                .get(n)
                .unwrap_or_else(|| panic!("suite has no property {n}"))
        })
        .collect()
}

fn describe(ps: &[&PropertyResult]) -> String {
    ps.iter()
        .map(|p| {
            format!(
                "{}[n={} err={:.2e} tol={:.0e}]",
                p.name, p.checked, p.max_error, p.tolerance
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn property_criteria(report: &SuiteReport) -> Vec<Outcome> {
    let limits = Limits::default();
    let mut out = Vec::new();

    let c1 = props(report, &["fullsum_loss_vs_enumeration"]);
    let ok = c1[0].passed
        && c1[0].checked >= 500
        && c1[0].seconds < 30.0
        && limits.max_frames <= 10
        && limits.max_phones <= 4
        && limits.max_labels <= 6;
    out.push(line(
        "1",
        ok,
        format!("{} {:.2}s", describe(&c1), c1[0].seconds),
    ));

    let c2 = props(
        report,
        &["occupancy_vs_enumeration", "occupancy_rows_sum_to_one"],
    );
    out.push(line("2", c2.iter().all(|p| p.passed), describe(&c2)));

    let c3 = props(
        report,
        &[
            "gradient_fd_ctc",
            "gradient_fd_hmm_center",
            "gradient_fd_factored_lcr",
            "gradient_fd_diphone",
        ],
    );
    let secs: f64 = c3.iter().map(|p| p.seconds).sum();
    let ok = c3.iter().all(|p| p.passed && p.checked >= 100)
        && secs < 120.0
        && report.config.fd_step == 1e-5;
    out.push(line("3", ok, format!("{} {secs:.2}s", describe(&c3))));

    let c4 = props(
        report,
        &[
            "uniform_context_shift",
            "zero_context_scales",
            "ctc_uniform_log3",
        ],
    );
    out.push(line("4", c4.iter().all(|p| p.passed), describe(&c4)));

    let c5 = props(report, &["decoder_vs_exhaustive"]);
    out.push(line(
        "5",
        c5[0].passed && c5[0].checked >= 50,
        describe(&c5),
    ));
    out
}

fn determinism(cfg: &SuiteConfig) -> Outcome {
    let threads = Some(2);
    let a = par::with_threads(threads, || run_suite(cfg)).without_timings();
    let b = par::with_threads(threads, || run_suite(cfg)).without_timings();
    let same = serde_json::to_string(&a).expect("report serializes")
        == serde_json::to_string(&b).expect("report serializes");
    line(
        "9",
        same && a == b,
        format!(
            "two runs, seed {}, 2 threads, {} properties",
            cfg.seed,
            a.properties.len()
        ),
    )
}

fn fault_detected(cfg: &SuiteConfig) -> Outcome {
    let report = run_suite(&SuiteConfig {
        inject_fault: true,
        ..cfg.clone()
    });
    let caught = report
        .get("occupancy_vs_enumeration")
        .is_some_and(|p| !p.passed)
        && !report.passed();
    line(
        "fault-injection",
        caught,
        "perturbed occupancy must fail the suite".into(),
    )
}

struct Models {
    center: Vec<Checkpoint>,
    factored: Vec<Checkpoint>,
    diphone_scratch: Checkpoint,
    diphone_two_stage: Checkpoint,
}

fn train_models(cfg: &BenchmarkConfig, data: &BenchmarkData) -> Models {
    let run = |loss, seed, init: Option<&Checkpoint>| {
        let t = Instant::now();
        let ck = data
            .train_model(cfg, loss, seed, init)
            .expect("training succeeds")
            .checkpoint;
        println!(
            "  trained {} seed {seed} in {:.1}s",
            loss.name(),
            t.elapsed().as_secs_f64()
        );
        ck
    };
    let center: Vec<_> = SEEDS
        .iter()
        .map(|&s| run(LossVariant::HmmCenter, s, None))
        .collect();
    let factored: Vec<_> = SEEDS
        .iter()
        .map(|&s| run(LossVariant::FactoredLcr, s, None))
        .collect();
    let diphone_scratch = run(LossVariant::DiphoneJoint, SEEDS[0], None);
    let diphone_two_stage = run(LossVariant::DiphoneJoint, SEEDS[0], Some(&factored[0]));
    Models {
        center,
        factored,
        diphone_scratch,
        diphone_two_stage,
    }
}

fn eval(
    cfg: &BenchmarkConfig,
    data: &BenchmarkData,
    ck: &Checkpoint,
    mode: DecodeMode,
) -> EvalReport {
    data.evaluate(cfg, ck, mode).expect("decoding succeeds")
}

fn benchmark_criteria(cfg: &BenchmarkConfig) -> Vec<Outcome> {
    let data = BenchmarkData::new(cfg).expect("benchmark data");
    let models = train_models(cfg, &data);
    let mut out = Vec::new();

    let mut wins = 0;
    let mut all_below = true;
    let mut rows = Vec::new();
    for (i, seed) in SEEDS.iter().enumerate() {
        let c = eval(cfg, &data, &models.center[i], DecodeMode::Center).wer;
        let f = eval(cfg, &data, &models.factored[i], DecodeMode::Center).wer;
        wins += usize::from(f <= c);
        all_below &= c < 15.0 && f < 15.0;
        rows.push(format!("seed {seed}: center {c:.2}% factored {f:.2}%"));
    }
    let ok = wins * 3 >= 2 * SEEDS.len() && all_below;
    out.push(line(
        "6",
        ok,
        format!(
            "factored <= center in {wins}/{} seeds; {}",
            SEEDS.len(),
            rows.join(", ")
        ),
    ));

    let scratch = eval(cfg, &data, &models.diphone_scratch, DecodeMode::Diphone).wer;
    let staged = eval(cfg, &data, &models.diphone_two_stage, DecodeMode::Diphone).wer;
    out.push(line(
        "7",
        staged <= scratch + 2.0,
        format!("from factored {staged:.2}% vs scratch {scratch:.2}%"),
    ));

    let median_rtf = |ck: &Checkpoint, mode| {
        let mut v: Vec<f64> = (0..RTF_RUNS)
            .map(|_| eval(cfg, &data, ck, mode).rtf)
            .collect();
        v.sort_by(f64::total_cmp);
        v[RTF_RUNS / 2]
    };
    let center_rtf = median_rtf(&models.factored[0], DecodeMode::Center);
    let diphone_rtf = median_rtf(&models.diphone_scratch, DecodeMode::Diphone);
    out.push(line(
        "8",
        center_rtf <= diphone_rtf,
        format!("median of {RTF_RUNS}: factored center-only {center_rtf:.5} vs diphone {diphone_rtf:.5}"),
    ));
    out
}

fn main() -> ExitCode {
    // Cargo forwards libtest arguments: answer `--list` and honor a name filter.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    if args
        .iter()
        .any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str()))
    {
        return ExitCode::SUCCESS;
    }
    let cfg = SuiteConfig::default();
    let started = Instant::now();
    let report = run_suite(&cfg);
    let mut outcomes = property_criteria(&report);
    outcomes.push(determinism(&cfg));
    outcomes.push(fault_detected(&cfg));
    outcomes.extend(benchmark_criteria(&BenchmarkConfig::default()));

    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.passed).collect();
    println!(
        "acceptance: {} passed, {} failed in {:.1}s",
        outcomes.len() - failed.len(),
        failed.len(),
        started.elapsed().as_secs_f64()
    );
    for o in &failed {
        println!("  failed criterion {}: {}", o.id, o.detail);
    }
    let fatal = failed
        .iter()
        .any(|o| strict() || !EMPIRICAL.contains(&o.id));
    if !fatal {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
