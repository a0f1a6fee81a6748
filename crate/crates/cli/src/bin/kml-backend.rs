use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use kml_core::controlplane::{BackendConfig, BackendServer};
use kml_core::logbroker::{BrokerServer, ServerConfig};
use kml_core::Broker;

/// Runs the control plane: REST API, registry, control logger and supervisor.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, env = "BACKEND_ADDR")]
    addr: Option<String>,
    #[arg(long = "broker", env = "BROKER_ADDR")]
    broker_addr: Option<String>,
    #[arg(long, env = "CONTROL_TOPIC")]
    control_topic: Option<String>,
    #[arg(long, env = "DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Restart budget per training job and replica.
    #[arg(long, env = "SUPERVISOR_RESTARTS")]
    restarts: Option<u32>,
    /// Also run a broker in this process, listening on the broker address.
    #[arg(long)]
    embedded_broker: bool,
}

fn main() {
    kml_cli::init_logging();
    let args = Args::parse();
    let mut cfg = BackendConfig::default();
    if let Some(v) = args.addr {
        cfg.addr = v;
    }
    if let Some(v) = args.broker_addr {
        cfg.broker_addr = v;
    }
    if let Some(v) = args.control_topic {
        cfg.control_topic = v;
    }
    if let Some(v) = args.data_dir {
        cfg.data_dir = v;
    }
    if let Some(v) = args.restarts {
        cfg.max_restarts = v;
    }

    let _broker = if args.embedded_broker {
        let b = BrokerServer::bind(
            cfg.broker_addr.as_str(),
            Arc::new(Broker::new()),
            ServerConfig::default(),
        )
        .unwrap_or_else(|e| {
            fail(&format!(
                "cannot start embedded broker on {}: {e}",
                cfg.broker_addr
            ))
        });
        cfg.broker_addr = b.local_addr().to_string();
        Some(b)
    } else {
        None
    };

    let server = BackendServer::start(cfg).unwrap_or_else(|e| fail(&format!("cannot start: {e}")));
    println!("{}", server.url());
    server.wait();
}

fn fail(msg: &str) -> ! {
    eprintln!("kml-backend: {msg}");
    std::process::exit(1);
}
