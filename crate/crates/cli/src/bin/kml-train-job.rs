//! One training job outside the backend process. The context comes from
//! `KAFKA_ML_JOB`; exit status 2 marks a failure not worth retrying.

use kml_core::controlplane::TaskControl;
use kml_core::trainworker::{run_training_job, JobContext};

fn main() {
    kml_cli::init_logging();
    let ctx: JobContext = kml_cli::context_from_env("KAFKA_ML_JOB").unwrap_or_else(|e| {
        eprintln!("kml-train-job: {e}");
        std::process::exit(2);
    });
    let attempt = std::env::var("KAFKA_ML_ATTEMPT")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    match run_training_job(&ctx, &TaskControl::detached(attempt), || None) {
        Ok(out) => println!(
            "{}",
            serde_json::to_string(&out.result).expect("result serializes")
        ),
        Err(e) => {
            eprintln!("kml-train-job: {e}");
            std::process::exit(if e.is_permanent() { 2 } else { 1 });
        }
    }
}
