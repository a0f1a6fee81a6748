use std::process::exit;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use kml_core::controlplane::{BackendClient, DEFAULT_BACKEND_ADDR, DEFAULT_CONTROL_TOPIC};
use kml_core::logbroker::DEFAULT_BROKER_ADDR;
use kml_core::streamclient::{
    infer_send, ingest_csv, ingest_features, parse_mapping, round_trip, send_stream, Mappings,
    OutputTail, SendOptions,
};
use kml_core::{BrokerClient, InputConfig, InputFormat};
use serde_json::json;

/// Sends training streams and inference data, reads predictions and replays
/// recorded streams.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(long = "broker", env = "BROKER_ADDR", default_value = DEFAULT_BROKER_ADDR, global = true)]
    broker_addr: String,
    #[arg(long, env = "BACKEND_ADDR", default_value = DEFAULT_BACKEND_ADDR, global = true)]
    backend: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stream a labelled CSV to the broker and announce it to a deployment.
    Send(SendArgs),
    /// Produce feature rows to an inference input topic.
    InferSend(InferSendArgs),
    /// Print predictions from an output topic as JSON lines.
    InferRecv(InferRecvArgs),
    /// Re-announce a recorded stream to another deployment.
    Replay {
        #[arg(long)]
        datastream: u64,
        #[arg(long)]
        deployment: u64,
    },
    /// List recorded streams.
    Datastreams,
}

#[derive(Args)]
struct Columns {
    #[arg(long)]
    csv: String,
    /// Comma-separated feature column names, in model input order.
    #[arg(long, value_delimiter = ',', required = true)]
    features: Vec<String>,
    /// Category table `column=key:value,...`; repeatable.
    #[arg(long = "map")]
    maps: Vec<String>,
}

impl Columns {
    fn mappings(&self) -> Mappings {
        self.maps
            .iter()
            .map(|m| parse_mapping(m).unwrap_or_else(|e| fail(&e)))
            .collect()
    }
}

#[derive(Args)]
struct SendArgs {
    #[command(flatten)]
    columns: Columns,
    #[arg(long)]
    label: String,
    #[arg(long)]
    deployment: u64,
    #[arg(long)]
    topic: String,
    #[arg(long, default_value = DEFAULT_CONTROL_TOPIC)]
    control_topic: String,
    #[arg(long, default_value = "RAW")]
    format: InputFormat,
    /// Input config JSON, or `@path` to read it from a file.
    #[arg(long)]
    config: String,
    #[arg(long, default_value_t = 0.0)]
    validation_rate: f64,
    /// Standardize features with statistics of the training part only.
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value_t = 0)]
    partition: u32,
}

#[derive(Args)]
struct InferSendArgs {
    /// Take topics and input config from this inference deployment.
    #[arg(long)]
    inference: Option<u64>,
    #[arg(long, required_unless_present = "inference")]
    topic: Option<String>,
    #[arg(long)]
    output_topic: Option<String>,
    #[arg(long, default_value = "RAW")]
    format: InputFormat,
    #[arg(long, required_unless_present = "inference")]
    config: Option<String>,
    #[arg(long, requires = "features")]
    csv: Option<String>,
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    #[arg(long = "map")]
    maps: Vec<String>,
    /// One comma-separated feature row; repeatable.
    #[arg(long = "values", allow_hyphen_values = true)]
    values: Vec<String>,
    /// Wait for each prediction and report its round-trip time.
    #[arg(long)]
    wait: bool,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
}

#[derive(Args)]
struct InferRecvArgs {
    #[arg(long)]
    topic: String,
    #[arg(long)]
    from_beginning: bool,
    /// Stop after this many predictions.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
}

fn fail(msg: &str) -> ! {
    eprintln!("kml-stream: {msg}");
    exit(1)
}

fn main() {
    kml_cli::init_logging();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Send(a) => send(&cli.broker_addr, a),
        Cmd::InferSend(a) => infer(&cli.broker_addr, &cli.backend, a),
        Cmd::InferRecv(a) => recv(&cli.broker_addr, a),
        Cmd::Replay {
            datastream,
            deployment,
        } => {
            let client = BackendClient::new(&cli.backend);
            match client.replay(datastream, deployment) {
                Ok(msg) => println!("{}", String::from_utf8_lossy(&msg.to_bytes())),
                Err(e) => fail(&e.to_string()),
            }
        }
        Cmd::Datastreams => {
            let client = BackendClient::new(&cli.backend);
            for ds in client
                .datastreams()
                .unwrap_or_else(|e| fail(&e.to_string()))
            {
                println!(
                    "{}",
                    serde_json::to_string(&ds).expect("datastream serializes")
                );
            }
        }
    }
}

fn send(broker_addr: &str, a: SendArgs) {
    let ds = ingest_csv(
        &a.columns.csv,
        &a.columns.features,
        &a.label,
        &a.columns.mappings(),
    )
    .unwrap_or_else(|e| fail(&e.to_string()));
    let config =
        kml_cli::inline_or_file(&a.config).unwrap_or_else(|e| fail(&format!("--config: {e}")));
    let opts = SendOptions {
        broker_addr: broker_addr.to_string(),
        topic: a.topic,
        control_topic: a.control_topic,
        deployment_id: a.deployment,
        format: a.format,
        config,
        validation_rate: a.validation_rate,
        standardize: a.standardize,
        partition: a.partition,
    };
    match send_stream(&ds, &opts) {
        Ok(msg) => println!("{}", String::from_utf8_lossy(&msg.to_bytes())),
        Err(e) => fail(&e.to_string()),
    }
}

fn infer(broker_addr: &str, backend: &str, a: InferSendArgs) {
    let (topic, output, format, config) = match a.inference {
        Some(id) => {
            let inf = BackendClient::new(backend)
                .inference(id)
                .unwrap_or_else(|e| fail(&e.to_string()));
            let d = inf.deployment;
            (
                d.input_topic,
                Some(d.output_topic),
                d.input_format,
                d.input_config,
            )
        }
        None => {
            let raw = a.config.as_deref().expect("required by clap");
            let config =
                kml_cli::inline_or_file(raw).unwrap_or_else(|e| fail(&format!("--config: {e}")));
            (
                a.topic.clone().expect("required by clap"),
                a.output_topic.clone(),
                a.format,
                config,
            )
        }
    };
    let input = InputConfig::parse(format, &config).unwrap_or_else(|e| fail(&e.to_string()));

    let mut rows: Vec<Vec<f64>> = a
        .values
        .iter()
        .map(|line| {
            line.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .unwrap_or_else(|_| fail(&format!("not a number: {v:?}")))
                })
                .collect()
        })
        .collect();
    if let Some(csv) = &a.csv {
        let maps: Mappings = a
            .maps
            .iter()
            .map(|m| parse_mapping(m).unwrap_or_else(|e| fail(&e)))
            .collect();
        rows.extend(
            ingest_features(csv, &a.features, &maps).unwrap_or_else(|e| fail(&e.to_string())),
        );
    }
    if rows.is_empty() {
        fail("nothing to send: give --values or --csv");
    }

    let mut client = BrokerClient::connect(broker_addr).unwrap_or_else(|e| fail(&e.to_string()));
    if !a.wait {
        let acks =
            infer_send(&mut client, &topic, &rows, &input).unwrap_or_else(|e| fail(&e.to_string()));
        for (partition, offset) in acks {
            println!(
                "{}",
                json!({"topic": topic, "partition": partition, "offset": offset})
            );
        }
        return;
    }
    let output = output.unwrap_or_else(|| fail("--wait needs --output-topic or --inference"));
    let mut tail =
        OutputTail::open(broker_addr, &output, false).unwrap_or_else(|e| fail(&e.to_string()));
    let timeout = Duration::from_millis(a.timeout_ms);
    for row in &rows {
        let (pred, took) = round_trip(&mut client, &mut tail, &topic, row, &input, timeout)
            .unwrap_or_else(|e| fail(&e.to_string()));
        println!(
            "{}",
            json!({"values": pred.values, "input": pred.input, "round_trip_ms": took.as_secs_f64() * 1e3})
        );
    }
}

fn recv(broker_addr: &str, a: InferRecvArgs) {
    let mut tail = OutputTail::open(broker_addr, &a.topic, a.from_beginning)
        .unwrap_or_else(|e| fail(&e.to_string()));
    let idle = Duration::from_millis(a.timeout_ms);
    let mut seen = 0;
    let mut last = std::time::Instant::now();
    loop {
        let got = tail.poll().unwrap_or_else(|e| fail(&e.to_string()));
        if !got.is_empty() {
            last = std::time::Instant::now();
        }
        for p in got {
            println!(
                "{}",
                serde_json::to_string(&p).expect("prediction serializes")
            );
            seen += 1;
            if a.count.is_some_and(|n| seen >= n) {
                return;
            }
        }
        if last.elapsed() >= idle {
            if a.count.is_some() {
                fail(&format!("timed out after {seen} predictions"));
            }
            return;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}
