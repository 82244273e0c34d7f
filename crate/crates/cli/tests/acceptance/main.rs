//! Runs every acceptance criterion once and prints one PASS/FAIL line each.
//! Exits nonzero if any criterion fails.

use std::future::Future;
use std::path::Path;
use std::process::ExitCode;

use i3_testkit::suite::{self, Outcome};

const BIN: &str = env!("CARGO_BIN_EXE_i3");

fn sync(f: impl FnOnce() -> Outcome + std::panic::UnwindSafe) -> Outcome {
    std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()))
}

fn run<F>(rt: &tokio::runtime::Runtime, fut: F) -> Outcome
where
    F: Future<Output = Outcome> + Send + 'static,
{
    rt.block_on(rt.spawn(fut)).unwrap_or_else(|e| Err(format!("panicked: {e}")))
}

fn main() -> ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(8)
        .enable_all()
        .build()
        .expect("runtime");

    let results: Vec<(u8, &str, Outcome)> = vec![
        (1, "WSDD fidelity", sync(suite::wsdd_fidelity)),
        (2, "envelope codec soundness", sync(|| suite::codec_soundness(0x13))),
        (3, "publish/find/bind lifecycle", run(&rt, suite::lifecycle_triangle(Path::new(BIN)))),
        (4, "storage heterogeneity", run(&rt, suite::heterogeneity())),
        (5, "verification correctness", run(&rt, suite::verification_correctness(2024))),
        (6, "fail-closed issuance grid", run(&rt, suite::fail_closed_grid())),
        (7, "concurrent fan-out", run(&rt, suite::fan_out_concurrency(20))),
        (8, "undeploy and redeploy", run(&rt, suite::deploy_undeploy(8))),
    ];

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n}: {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n}: {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
