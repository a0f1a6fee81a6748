use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use kml_core::logbroker::{BrokerServer, ServerConfig, DEFAULT_BROKER_ADDR};
use kml_core::Broker;

/// Runs the log broker.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, env = "BROKER_ADDR", default_value = DEFAULT_BROKER_ADDR)]
    addr: String,
    /// Interval of the background retention pass.
    #[arg(long, default_value_t = 1000)]
    retention_interval_ms: u64,
}

fn main() {
    kml_cli::init_logging();
    let args = Args::parse();
    let config = ServerConfig {
        retention_interval: Duration::from_millis(args.retention_interval_ms),
    };
    let server = match BrokerServer::bind(args.addr.as_str(), Arc::new(Broker::new()), config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("kml-broker: cannot listen on {}: {e}", args.addr);
            std::process::exit(1);
        }
    };
    // first stdout line is machine-readable
    println!("{}", server.local_addr());
    server.wait();
}
