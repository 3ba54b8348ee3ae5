//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Slow by nature: it meta-trains the synthetic benchmark several
//! times.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::criteria::{self, desk_config, synthetic, train_and_evaluate, Check};

fn report(name: &str, started: Instant, check: &Check) -> bool {
    println!(
        "{} {name}: {} ({:.1} s)",
        if check.pass { "PASS" } else { "FAIL" },
        check.detail,
        started.elapsed().as_secs_f64()
    );
    check.pass
}

fn run(name: &str, f: impl FnOnce() -> Check) -> bool {
    let started = Instant::now();
    let check = f();
    report(name, started, &check)
}

fn main() -> ExitCode {
    let mut results = vec![
        run("gradient suite", criteria::gradients),
        run("relation-graph invariants", || criteria::relgraph_invariants(1000)),
        run("encoder invariance", || criteria::encoder_invariance(200)),
        run("oracle equivalence", criteria::oracle_equivalence),
        run("parser corpus", criteria::parser_corpus),
    ];

    let started = Instant::now();
    let dataset = synthetic(0);
    let full0 = train_and_evaluate(&dataset, &desk_config(0, ""));
    results.push(report("synthetic end-to-end", started, &criteria::end_to_end(&full0)));

    let started = Instant::now();
    let again = train_and_evaluate(&dataset, &desk_config(0, ""));
    results.push(report("determinism", started, &criteria::determinism(&full0, &again)));

    let started = Instant::now();
    let check = criteria::case_study(&dataset, &full0.store, &desk_config(0, ""));
    results.push(report("case study", started, &check));

    let started = Instant::now();
    let mut means: [Vec<f64>; 3] = Default::default();
    for seed in 0..5u64 {
        let data = synthetic(seed);
        for (slot, ablation) in ["", "no_R", "no_P"].iter().enumerate() {
            let mean = if seed == 0 && ablation.is_empty() {
                full0.report.mean
            } else {
                train_and_evaluate(&data, &desk_config(seed, ablation)).report.mean
            };
            means[slot].push(mean);
        }
    }
    let check = criteria::ablation_trend(&means[0], &means[1], &means[2]);
    results.push(report("ablation trend", started, &check));

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
