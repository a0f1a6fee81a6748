//! End-to-end acceptance run: starts real brokers and backends on loopback,
//! drives them through the library and the `kml-stream` binary, and prints
//! one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use kml_core::clock::ManualClock;
use kml_core::codec::{
    decode_fields, encode_fields, Field, FieldType, FieldValue, RecordSchema, Tensor,
};
use kml_core::controlplane::{
    BackendClient, BackendConfig, BackendServer, JobStatus, NewInference, TaskKey, TaskState,
    TrainingDeployment,
};
use kml_core::logbroker::{parse_offset_spec, BrokerServer, ServerConfig};
use kml_core::mlengine::gradcheck::{check_gradients, random_case};
use kml_core::mlengine::{evaluate, init_params, parse_model_spec, train};
use kml_core::streamclient::{
    gaussian_clusters, infer_send, ingest_csv, standardize, write_csv, OutputTail,
};
use kml_core::trainworker::{split_stream, FaultPlan};
use kml_core::{
    Broker, BrokerClient, InputConfig, InputFormat, OffsetSpec, RetentionPolicy, Sample,
    TrainingConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const SEED: u64 = 42;
const SAMPLES: usize = 275;
const SEPARATION: f64 = 1.5;
const RAW_CONFIG: &str =
    r#"{"data_type":"f32","data_reshape":[4],"label_type":"i32","label_shape":[1]}"#;
const STREAM_TOPIC: &str = "copd";

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

fn listing_two() -> serde_json::Value {
    json!({
        "input_dim": 4,
        "layers": [
            {"type": "dropout", "rate": 0.2},
            {"type": "dense", "units": 4, "activation": "sigmoid"},
            {"type": "dense", "units": 2, "activation": "softmax"}
        ],
        "optimizer": {"type": "adam", "learning_rate": 0.0001},
        "loss": "sparse_categorical_crossentropy",
        "metrics": ["accuracy"]
    })
}

fn training_config() -> TrainingConfig {
    TrainingConfig {
        batch_size: 10,
        epochs: 200,
        steps_per_epoch: Some(22),
        shuffle: true,
        seed: SEED,
        ..TrainingConfig::default()
    }
}

struct Stack {
    broker: BrokerServer,
    backend: BackendServer,
    dir: tempfile::TempDir,
}

impl Stack {
    fn start(broker: Broker) -> Result<Self, String> {
        let broker = BrokerServer::bind("127.0.0.1:0", Arc::new(broker), ServerConfig::default())
            .map_err(|e| format!("broker: {e}"))?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let backend = BackendServer::start(BackendConfig {
            addr: "127.0.0.1:0".into(),
            broker_addr: broker.local_addr().to_string(),
            data_dir: dir.path().join("registry"),
            ..BackendConfig::default()
        })
        .map_err(|e| format!("backend: {e}"))?;
        Ok(Self {
            broker,
            backend,
            dir,
        })
    }

    fn client(&self) -> BackendClient {
        self.backend.client()
    }

    fn broker_addr(&self) -> String {
        self.broker.local_addr().to_string()
    }

    fn stream_cli(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_kml-stream"))
            .args([
                "--broker",
                &self.broker_addr(),
                "--backend",
                &self.backend.url(),
            ])
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .expect("kml-stream runs")
    }

    fn send_csv(&self, csv: &Path, topic: &str, deployment: u64) -> Result<(), String> {
        let out = self.stream_cli(&[
            "send",
            "--csv",
            csv.to_str().unwrap(),
            "--features",
            "x0,x1,x2,x3",
            "--label",
            "label",
            "--deployment",
            &deployment.to_string(),
            "--topic",
            topic,
            "--format",
            "RAW",
            "--config",
            RAW_CONFIG,
            "--validation-rate",
            "0.2",
            "--standardize",
        ]);
        ensure!(
            out.status.success(),
            "send failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        Ok(())
    }

    fn deploy(&self, cfg: &TrainingConfig) -> Result<(TrainingDeployment, u64), String> {
        let c = self.client();
        let m = c
            .create_model("listing-2", "dropout, sigmoid, softmax", &listing_two())
            .map_err(e2s)?;
        let conf = c.create_configuration("single", &[m.id]).map_err(e2s)?;
        Ok((c.deploy_training(conf.id, cfg).map_err(e2s)?, m.id))
    }

    fn wait_done(&self, deployment: u64, timeout: Duration) -> Result<TrainingDeployment, String> {
        let until = Instant::now() + timeout;
        loop {
            let d = self.client().deployment(deployment).map_err(e2s)?;
            if d.jobs
                .iter()
                .all(|j| matches!(j.status, JobStatus::Uploaded | JobStatus::Failed))
            {
                return Ok(d);
            }
            ensure!(
                Instant::now() < until,
                "deployment {deployment} unfinished after {timeout:?}"
            );
            thread::sleep(Duration::from_millis(20));
        }
    }

    fn datastream_for(
        &self,
        deployment: u64,
    ) -> Result<kml_core::controlplane::Datastream, String> {
        let until = Instant::now() + Duration::from_secs(10);
        loop {
            let found = self
                .client()
                .datastreams()
                .map_err(e2s)?
                .into_iter()
                .find(|d| d.message.deployment_id == deployment);
            if let Some(d) = found {
                return Ok(d);
            }
            ensure!(
                Instant::now() < until,
                "no datastream recorded for deployment {deployment}"
            );
            thread::sleep(Duration::from_millis(10));
        }
    }
}

fn e2s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Output of one full training run through the CLI.
struct Trained {
    stack: Stack,
    csv: PathBuf,
    deployment: TrainingDeployment,
    model_id: u64,
    result_id: u64,
    streamed: Duration,
}

fn train_via_cli() -> Result<Trained, String> {
    let stack = Stack::start(Broker::new())?;
    let csv = stack.dir.path().join("clusters.csv");
    write_csv(&gaussian_clusters(SAMPLES, 4, SEPARATION, SEED), &csv).map_err(e2s)?;
    let (dep, model_id) = stack.deploy(&training_config())?;
    let start = Instant::now();
    stack.send_csv(&csv, STREAM_TOPIC, dep.id)?;
    let done = stack.wait_done(dep.id, Duration::from_secs(300))?;
    let streamed = start.elapsed();
    let job = &done.jobs[0];
    ensure!(
        job.status == JobStatus::Uploaded,
        "job ended {:?}: {:?}",
        job.status,
        job.error
    );
    Ok(Trained {
        result_id: job.result_id.ok_or("no result id")?,
        stack,
        csv,
        deployment: done,
        model_id,
        streamed,
    })
}

/// Mean held-out accuracy of 5-fold cross-validation with the same model
/// and training parameters, reported alongside the streamed run.
fn cross_validate(csv: &Path) -> Result<f64, String> {
    let samples = load_samples(csv)?;
    let spec = parse_model_spec(&listing_two().to_string()).map_err(e2s)?;
    let cfg = training_config();
    let fold = samples.len().div_ceil(5);
    let mut total = 0.0;
    for k in 0..5 {
        let range = k * fold..((k + 1) * fold).min(samples.len());
        let held: Vec<Sample> = samples[range.clone()].to_vec();
        let rest: Vec<Sample> = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| !range.contains(i))
            .map(|(_, s)| s.clone())
            .collect();
        let model = train(&init_params(&spec, cfg.seed), &rest, &cfg).map_err(e2s)?;
        total += evaluate(&model, &held, &cfg).map_err(e2s)?["accuracy"];
    }
    Ok(total / 5.0)
}

fn c1(t: &Trained) -> Outcome {
    let r = t.stack.client().result(t.result_id).map_err(e2s)?;
    let acc = r
        .metrics
        .evaluation
        .as_ref()
        .and_then(|m| m.get("accuracy").copied())
        .ok_or("no evaluation accuracy")?;
    ensure!(
        r.consumed_records == SAMPLES as u64,
        "consumed {} records",
        r.consumed_records
    );
    ensure!(acc >= 0.90, "evaluation accuracy {acc:.4} < 0.90");
    ensure!(
        t.streamed <= Duration::from_secs(120),
        "took {:?}",
        t.streamed
    );
    let cv = cross_validate(&t.csv)?;
    Ok(format!(
        "eval accuracy {acc:.4}, {:.2?} from send to upload; 5-fold cross-validation mean accuracy {cv:.4}",
        t.streamed
    ))
}

fn c2(t: &Trained) -> Outcome {
    let s = &t.stack;
    let c = s.client();
    let d2 = c
        .deploy_training(t.deployment.configuration_id, &training_config())
        .map_err(e2s)?;
    let ds = s.datastream_for(t.deployment.id)?;
    let mut broker = BrokerClient::connect(s.broker_addr()).map_err(e2s)?;
    let end_before = broker.offsets(STREAM_TOPIC).map_err(e2s)?;
    let out = s.stream_cli(&[
        "replay",
        "--datastream",
        &ds.id.to_string(),
        "--deployment",
        &d2.id.to_string(),
    ]);
    ensure!(
        out.status.success(),
        "replay failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let done = s.wait_done(d2.id, Duration::from_secs(300))?;
    let job = &done.jobs[0];
    ensure!(
        job.status == JobStatus::Uploaded,
        "replayed job {:?}: {:?}",
        job.status,
        job.error
    );
    let r1 = c.result(t.result_id).map_err(e2s)?;
    let r2 = c.result(job.result_id.unwrap()).map_err(e2s)?;
    ensure!(
        r1.stream_digest == r2.stream_digest,
        "digests differ: {} vs {}",
        r1.stream_digest,
        r2.stream_digest
    );
    let end_after = broker.offsets(STREAM_TOPIC).map_err(e2s)?;
    ensure!(
        end_before == end_after,
        "topic offsets moved: {end_before:?} -> {end_after:?}"
    );
    Ok(format!(
        "digest {}.. equal for D{} and D{}; end offset stays {}",
        &r1.stream_digest[..12],
        t.deployment.id,
        d2.id,
        end_after[0].end
    ))
}

fn c3() -> Outcome {
    let clock = Arc::new(ManualClock::new(1_700_000_000_000));
    let s = Stack::start(Broker::with_clock(clock.clone()))?;
    let csv = s.dir.path().join("short.csv");
    write_csv(&gaussian_clusters(SAMPLES, 4, SEPARATION, SEED), &csv).map_err(e2s)?;
    let mut broker = BrokerClient::connect(s.broker_addr()).map_err(e2s)?;
    broker
        .create_topic("short", 1, RetentionPolicy::with_ms(1000))
        .map_err(e2s)?;
    let quick = TrainingConfig {
        epochs: 1,
        ..training_config()
    };
    let (first, _) = s.deploy(&quick)?;
    s.send_csv(&csv, "short", first.id)?;
    let ds = s.datastream_for(first.id)?;
    s.wait_done(first.id, Duration::from_secs(60))?;

    clock.advance(1500);
    s.broker.broker().enforce_retention_now();
    let second = s
        .client()
        .deploy_training(first.configuration_id, &quick)
        .map_err(e2s)?;
    let out = s.stream_cli(&[
        "replay",
        "--datastream",
        &ds.id.to_string(),
        "--deployment",
        &second.id.to_string(),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
    ensure!(
        !out.status.success(),
        "replay of an expired stream succeeded"
    );
    ensure!(
        stderr.contains("410") && stderr.contains("stream_expired"),
        "unexpected error: {stderr}"
    );
    ensure!(
        stderr.contains("short:0:0:275"),
        "error does not name the slice: {stderr}"
    );
    let job = &s.client().deployment(second.id).map_err(e2s)?.jobs[0];
    ensure!(
        job.status == JobStatus::Pending,
        "target job moved to {:?}",
        job.status
    );
    Ok(stderr)
}

fn c4(t: &Trained) -> Outcome {
    let s = &t.stack;
    let c = s.client();
    let inf = c
        .deploy_inference(&NewInference {
            result_id: t.result_id,
            replicas: 3,
            input_topic: "c4-in".into(),
            output_topic: "c4-out".into(),
        })
        .map_err(e2s)?;
    let sup = s.backend.control_plane().supervisor().clone();
    let broker = s.broker.broker().clone();
    let until = Instant::now() + Duration::from_secs(20);
    while broker
        .group_assignment(&inf.group_id)
        .into_values()
        .collect::<HashSet<_>>()
        .len()
        < 3
    {
        ensure!(Instant::now() < until, "group never reached 3 members");
        thread::sleep(Duration::from_millis(10));
    }
    let input = InputConfig::parse(inf.input_format, &inf.input_config).map_err(e2s)?;
    let rows = gaussian_clusters(300, 4, SEPARATION, 7).features;
    let mut client = BrokerClient::connect(s.broker_addr()).map_err(e2s)?;
    let mut tail = OutputTail::open(&s.broker_addr(), "c4-out", false).map_err(e2s)?;

    // steady state: exactly one answer per input
    let acks: HashSet<(u32, u64)> = infer_send(&mut client, "c4-in", &rows, &input)
        .map_err(e2s)?
        .into_iter()
        .collect();
    let mut preds = tail.recv(300, Duration::from_secs(30)).map_err(e2s)?;
    thread::sleep(Duration::from_millis(300));
    preds.extend(tail.poll().map_err(e2s)?);
    let answered: Vec<(u32, u64)> = preds
        .iter()
        .map(|p| (p.input.partition, p.input.offset))
        .collect();
    let unique: HashSet<_> = answered.iter().copied().collect();
    ensure!(
        preds.len() == 300,
        "{} predictions for 300 inputs",
        preds.len()
    );
    ensure!(
        unique == acks,
        "answered offsets differ from produced offsets"
    );

    // kill replica 1 while a second batch is in flight
    let addr = s.broker_addr();
    let cfg = input.clone();
    let producer = thread::spawn(move || -> Result<Vec<(u32, u64)>, String> {
        let mut client = BrokerClient::connect(addr).map_err(e2s)?;
        let mut acks = Vec::new();
        for row in gaussian_clusters(300, 4, SEPARATION, 8).features {
            acks.extend(infer_send(&mut client, "c4-in", &[row], &cfg).map_err(e2s)?);
            thread::sleep(Duration::from_millis(2));
        }
        Ok(acks)
    });
    let victim = TaskKey::Replica {
        inference_id: inf.id,
        index: 1,
    };
    let mut seen: BTreeMap<(u32, u64), usize> = BTreeMap::new();
    let mut killed_at = None;
    while killed_at.is_none() {
        for p in tail.poll().map_err(e2s)? {
            *seen.entry((p.input.partition, p.input.offset)).or_default() += 1;
        }
        if seen.len() >= 60 {
            ensure!(sup.kill(victim), "replica 1 was not running");
            killed_at = Some(seen.len());
        }
        thread::sleep(Duration::from_millis(1));
    }
    let second: HashSet<(u32, u64)> = producer
        .join()
        .map_err(|_| "producer panicked")??
        .into_iter()
        .collect();
    let until = Instant::now() + Duration::from_secs(60);
    while !second.iter().all(|k| seen.contains_key(k)) {
        ensure!(
            Instant::now() < until,
            "{} of 300 inputs answered after the kill",
            second.iter().filter(|k| seen.contains_key(k)).count()
        );
        for p in tail.poll().map_err(e2s)? {
            *seen.entry((p.input.partition, p.input.offset)).or_default() += 1;
        }
        thread::sleep(Duration::from_millis(5));
    }
    let until = Instant::now() + Duration::from_secs(20);
    while !(sup.live_replicas(inf.id) == 3
        && matches!(sup.state(victim), Some((TaskState::Running, n)) if n >= 1))
    {
        ensure!(
            Instant::now() < until,
            "live replicas {} state {:?}",
            sup.live_replicas(inf.id),
            sup.state(victim)
        );
        thread::sleep(Duration::from_millis(10));
    }
    let dupes = seen.values().filter(|&&n| n > 1).count();
    c.stop_inference(inf.id).map_err(e2s)?;
    Ok(format!(
        "300/300 unique in steady state; killed replica 1 after {} answers, all 300 answered ({dupes} redelivered), 3 live replicas",
        killed_at.unwrap()
    ))
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..50 {
        let case = random_case(&mut rng);
        let r = check_gradients(
            &case.model,
            &case.features,
            &case.targets,
            case.dropout_seed,
        )
        .map_err(e2s)?;
        ensure!(
            r.max_rel_error < 1e-4,
            "case {i}: relative error {:e}",
            r.max_rel_error
        );
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    let took = start.elapsed();
    ensure!(took <= Duration::from_secs(30), "took {took:?}");
    Ok(format!(
        "{checked} parameters, worst relative error {worst:.2e}, {took:.2?}"
    ))
}

fn random_raw(rng: &mut ChaCha8Rng) -> (String, Sample) {
    let types = ["f32", "f64", "i32", "u8"];
    let value = |rng: &mut ChaCha8Rng, ty: &str| -> f64 {
        match ty {
            "f32" => (rng.gen::<f32>() * 2e6 - 1e6) as f64,
            "f64" => rng.gen::<f64>() * 1e12 - 5e11,
            "i32" => rng.gen::<i32>() as f64,
            _ => rng.gen::<u8>() as f64,
        }
    };
    let shape = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        (0..rng.gen_range(1..=3))
            .map(|_| rng.gen_range(1..=4))
            .collect()
    };
    let (dt, lt) = (*types.choose(rng).unwrap(), *types.choose(rng).unwrap());
    let (ds, ls) = (shape(rng), shape(rng));
    let features = (0..ds.iter().product::<usize>())
        .map(|_| value(rng, dt))
        .collect();
    let label = (0..ls.iter().product::<usize>())
        .map(|_| value(rng, lt))
        .collect();
    let cfg = json!({"data_type": dt, "data_reshape": ds, "label_type": lt, "label_shape": ls})
        .to_string();
    (
        cfg,
        Sample::new(Tensor::new(features, ds), Tensor::new(label, ls)),
    )
}

fn random_fields(rng: &mut ChaCha8Rng) -> (RecordSchema, Vec<FieldValue>) {
    let n = rng.gen_range(1..=8);
    let mut fields = Vec::new();
    let mut values = Vec::new();
    for i in 0..n {
        let (ty, v) = match rng.gen_range(0..5) {
            0 => (
                FieldType::F32,
                FieldValue::F32(rng.gen::<f32>() * 100.0 - 50.0),
            ),
            1 => (FieldType::F64, FieldValue::F64(rng.gen::<f64>() * 1e9)),
            2 => (FieldType::I32, FieldValue::I32(rng.gen())),
            3 => (FieldType::I64, FieldValue::I64(rng.gen())),
            _ => {
                let len = rng.gen_range(0..12);
                let s: String = (0..len).map(|_| rng.gen::<char>()).collect();
                (FieldType::String, FieldValue::Str(s))
            }
        };
        fields.push(Field::new(format!("f{i}"), ty));
        values.push(v);
    }
    (RecordSchema::new(fields), values)
}

fn c6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut failures = Vec::new();
    for i in 0..1000 {
        let (cfg, sample) = random_raw(&mut rng);
        let ok = InputConfig::parse(InputFormat::Raw, &cfg)
            .and_then(|c| c.encode(&sample).and_then(|b| c.decode(&b, true)))
            .map(|back| back == sample);
        if ok != Ok(true) {
            failures.push(format!("raw #{i} {cfg}: {ok:?}"));
        }
    }
    for i in 0..1000 {
        let (schema, values) = random_fields(&mut rng);
        let mut bytes = Vec::new();
        let ok = encode_fields(&values, &schema, &mut bytes)
            .and_then(|_| decode_fields(&bytes, &schema))
            .map(|(back, rest)| back == values && rest.is_empty());
        if ok != Ok(true) {
            failures.push(format!("structured #{i}: {ok:?}"));
        }
    }
    let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-"
        .chars()
        .collect();
    for i in 0..1000 {
        let topic: String = (0..rng.gen_range(1..=24))
            .map(|_| *alphabet.choose(&mut rng).unwrap())
            .collect();
        let spec = OffsetSpec::new(topic, rng.gen(), rng.gen(), rng.gen());
        if parse_offset_spec(&spec.to_string()).as_ref() != Ok(&spec) {
            failures.push(format!("offset spec #{i}: {spec}"));
        }
    }
    let example = parse_offset_spec("kafka-ml:0:0:70000").map_err(e2s)?;
    ensure!(
        example == OffsetSpec::new("kafka-ml", 0, 0, 70000),
        "example parsed to {example:?}"
    );
    ensure!(
        failures.is_empty(),
        "{} failures, first: {}",
        failures.len(),
        failures[0]
    );
    Ok("3000 round trips, 0 failures; kafka-ml:0:0:70000 -> (kafka-ml, 0, 0, 70000)".into())
}

fn c7(first: &Trained) -> Outcome {
    let again = train_via_cli()?;
    let a = first
        .stack
        .client()
        .download(first.result_id)
        .map_err(e2s)?;
    let b = again
        .stack
        .client()
        .download(again.result_id)
        .map_err(e2s)?;
    ensure!(
        a == b,
        "weight blobs differ ({} vs {} bytes)",
        a.len(),
        b.len()
    );
    Ok(format!(
        "two independent runs produced identical {}-byte blobs",
        a.len()
    ))
}

fn load_samples(csv: &Path) -> Result<Vec<Sample>, String> {
    let names: Vec<String> = (0..4).map(|i| format!("x{i}")).collect();
    let mut ds = ingest_csv(csv, &names, "label", &Default::default()).map_err(e2s)?;
    standardize(&mut ds, 0.2);
    let input = InputConfig::parse(InputFormat::Raw, RAW_CONFIG).map_err(e2s)?;
    ds.features
        .iter()
        .zip(&ds.labels)
        .map(|(f, l)| {
            let bytes = input.encode(&Sample::new(
                Tensor::vector(f.clone()),
                Tensor::vector(vec![*l]),
            ))?;
            input.decode(&bytes, true)
        })
        .collect::<Result<_, _>>()
        .map_err(e2s)
}

/// The same ingest, split and fit as the streamed job, in one process.
fn direct_training(csv: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let (head, tail) = split_stream(load_samples(csv)?, 0.2);
    let spec = parse_model_spec(&listing_two().to_string()).map_err(e2s)?;
    let cfg = training_config();
    let model = train(&init_params(&spec, cfg.seed), &head, &cfg).map_err(e2s)?;
    evaluate(&model, &tail, &cfg).map_err(e2s)?;
    Ok(start.elapsed())
}

fn c8(t: &Trained) -> Outcome {
    let s = &t.stack;
    let inf = s
        .client()
        .deploy_inference(&NewInference {
            result_id: t.result_id,
            replicas: 1,
            input_topic: "c8-in".into(),
            output_topic: "c8-out".into(),
        })
        .map_err(e2s)?;
    let until = Instant::now() + Duration::from_secs(20);
    while s.broker.broker().group_assignment(&inf.group_id).is_empty() {
        ensure!(Instant::now() < until, "replica never joined");
        thread::sleep(Duration::from_millis(10));
    }
    let rows = gaussian_clusters(21, 4, SEPARATION, 9).features;
    let mut trips = Vec::new();
    for row in &rows {
        let values = row
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",");
        let start = Instant::now();
        let out = s.stream_cli(&[
            "infer-send",
            "--inference",
            &inf.id.to_string(),
            "--values",
            &values,
            "--wait",
        ]);
        let took = start.elapsed();
        ensure!(
            out.status.success(),
            "infer-send: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let line: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(e2s)?;
        ensure!(
            line["values"].as_array().map(Vec::len) == Some(2),
            "bad prediction {line}"
        );
        trips.push(took);
    }
    trips.sort();
    let median = trips[trips.len() / 2];
    ensure!(
        median < Duration::from_millis(500),
        "median round trip {median:?}"
    );

    let direct = direct_training(&t.csv)?;
    let ratio = t.streamed.as_secs_f64() / direct.as_secs_f64();
    ensure!(
        ratio < 2.0,
        "streamed {:?} vs direct {direct:?} = {ratio:.2}x",
        t.streamed
    );
    s.client().stop_inference(inf.id).map_err(e2s)?;
    Ok(format!(
        "median CLI round trip {:.1} ms over {} sends; streamed {:.2?} vs direct {direct:.2?} = {ratio:.2}x",
        median.as_secs_f64() * 1e3,
        trips.len(),
        t.streamed
    ))
}

fn c9(t: &Trained) -> Outcome {
    let s = &t.stack;
    let c = s.client();
    let d = c
        .deploy_training(t.deployment.configuration_id, &training_config())
        .map_err(e2s)?;
    s.backend.control_plane().inject_fault(
        d.id,
        t.model_id,
        FaultPlan {
            crash_after_records: 137,
            crash_attempts: 1,
        },
    );
    let ds = s.datastream_for(t.deployment.id)?;
    c.replay(ds.id, d.id).map_err(e2s)?;
    let done = s.wait_done(d.id, Duration::from_secs(300))?;
    let job = &done.jobs[0];
    ensure!(
        job.status == JobStatus::Uploaded,
        "job {:?}: {:?}",
        job.status,
        job.error
    );
    ensure!(
        job.restart_count == 1,
        "restart count {}",
        job.restart_count
    );
    let clean = c.download(t.result_id).map_err(e2s)?;
    let crashed = c.download(job.result_id.unwrap()).map_err(e2s)?;
    ensure!(clean == crashed, "weights differ after restart");
    Ok("crashed at record 137 of 275, restarted once, weights bit-identical".into())
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    // injected faults panic on purpose; keep them to one line
    std::panic::set_hook(Box::new(|info| {
        let at = info
            .location()
            .map(|l| format!(" at {}:{}", l.file(), l.line()))
            .unwrap_or_default();
        eprintln!(
            "panic{at}: {}",
            info.payload()
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| info.payload().downcast_ref::<&str>().copied())
                .unwrap_or("?")
        );
    }));
    let names = [
        "end-to-end pipeline",
        "stream reuse",
        "retention expiry",
        "consumer-group inference",
        "gradient suite",
        "codec and offset-spec properties",
        "determinism",
        "latency sanity",
        "crash-restart training",
    ];
    let mut results: BTreeMap<usize, Outcome> = BTreeMap::new();
    let mut record = |n: usize, r: Outcome| {
        eprintln!(
            "criterion {n} finished: {}",
            if r.is_ok() { "pass" } else { "fail" }
        );
        results.insert(n, r);
    };

    record(5, guarded(c5));
    record(6, guarded(c6));
    match guarded(train_via_cli) {
        Ok(t) => {
            record(1, guarded(|| c1(&t)));
            record(2, guarded(|| c2(&t)));
            record(9, guarded(|| c9(&t)));
            record(4, guarded(|| c4(&t)));
            record(8, guarded(|| c8(&t)));
            record(7, guarded(|| c7(&t)));
        }
        Err(e) => {
            for n in [1, 2, 4, 7, 8, 9] {
                record(n, Err(format!("training run failed: {e}")));
            }
        }
    }
    record(3, guarded(c3));

    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(detail) => println!("PASS criterion {n} ({}): {detail}", names[n - 1]),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({}): {why}", names[n - 1]);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
