//! One inference replica outside the backend process. The context comes
//! from `KAFKA_ML_INFER`; the replica runs until killed.

use std::sync::Arc;

use kml_core::controlplane::TaskControl;
use kml_core::inferworker::{run_inference_loop, ReplicaContext, ReplicaStats};

fn main() {
    kml_cli::init_logging();
    let ctx: ReplicaContext = kml_cli::context_from_env("KAFKA_ML_INFER").unwrap_or_else(|e| {
        eprintln!("kml-infer-replica: {e}");
        std::process::exit(2);
    });
    let stats = Arc::new(ReplicaStats::default());
    if let Err(e) = run_inference_loop(&ctx, &TaskControl::detached(0), &stats) {
        eprintln!("kml-infer-replica: {e}");
        std::process::exit(1);
    }
}
