use std::collections::HashSet;
use std::sync::Arc;
use std::thread::sleep;
use std::time::{Duration, Instant};

use kml_core::clock::ManualClock;
use kml_core::controlplane::{
    BackendClient, BackendConfig, BackendServer, JobStatus, NewInference, TaskKey,
    TrainingDeployment, DEFAULT_CONTROL_TOPIC,
};
use kml_core::logbroker::{BrokerServer, ServerConfig};
use kml_core::streamclient::{gaussian_clusters, send_stream, OutputTail, SendOptions};
use kml_core::trainworker::FaultPlan;
use kml_core::{Broker, BrokerClient, InputConfig, InputFormat, RetentionPolicy, TrainingConfig};
use serde_json::json;

const RAW: &str = r#"{"data_type":"f32","data_reshape":[4],"label_type":"i32","label_shape":[1]}"#;

fn listing_two() -> serde_json::Value {
    json!({
        "input_dim": 4,
        "layers": [
            {"type": "dropout", "rate": 0.2},
            {"type": "dense", "units": 4, "activation": "sigmoid"},
            {"type": "dense", "units": 2, "activation": "softmax"}
        ],
        "optimizer": {"type": "adam", "learning_rate": 0.01},
        "loss": "sparse_categorical_crossentropy",
        "metrics": ["accuracy"]
    })
}

struct Stack {
    broker: BrokerServer,
    backend: BackendServer,
    dir: tempfile::TempDir,
}

impl Stack {
    fn new(broker: Broker) -> Self {
        let broker =
            BrokerServer::bind("127.0.0.1:0", Arc::new(broker), ServerConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let backend = BackendServer::start(Self::config(&broker, &dir)).unwrap();
        Self {
            broker,
            backend,
            dir,
        }
    }

    fn config(broker: &BrokerServer, dir: &tempfile::TempDir) -> BackendConfig {
        BackendConfig {
            addr: "127.0.0.1:0".into(),
            broker_addr: broker.local_addr().to_string(),
            data_dir: dir.path().join("data"),
            restart_delay: Duration::from_millis(20),
            ..BackendConfig::default()
        }
    }

    fn client(&self) -> BackendClient {
        self.backend.client()
    }

    fn broker_addr(&self) -> String {
        self.broker.local_addr().to_string()
    }

    fn send(&self, deployment_id: u64, topic: &str, seed: u64) -> kml_core::ControlMessage {
        let ds = gaussian_clusters(275, 4, 1.5, seed);
        send_stream(
            &ds,
            &SendOptions {
                broker_addr: self.broker_addr(),
                topic: topic.into(),
                control_topic: DEFAULT_CONTROL_TOPIC.into(),
                deployment_id,
                format: InputFormat::Raw,
                config: RAW.into(),
                validation_rate: 0.2,
                standardize: true,
                partition: 0,
            },
        )
        .unwrap()
    }

    fn deploy(&self, epochs: usize) -> TrainingDeployment {
        let c = self.client();
        let m = c.create_model("copd", "", &listing_two()).unwrap();
        let conf = c.create_configuration("one", &[m.id]).unwrap();
        c.deploy_training(conf.id, &cfg(epochs)).unwrap()
    }

    fn wait_done(&self, deployment_id: u64) -> TrainingDeployment {
        let until = Instant::now() + Duration::from_secs(60);
        loop {
            let d = self.client().deployment(deployment_id).unwrap();
            if d.jobs
                .iter()
                .all(|j| matches!(j.status, JobStatus::Uploaded | JobStatus::Failed))
            {
                return d;
            }
            assert!(
                Instant::now() < until,
                "deployment {deployment_id} did not finish: {d:?}"
            );
            sleep(Duration::from_millis(20));
        }
    }
}

fn cfg(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        batch_size: 10,
        epochs,
        steps_per_epoch: Some(22),
        shuffle: true,
        seed: 11,
        ..TrainingConfig::default()
    }
}

fn wait_until(what: &str, mut f: impl FnMut() -> bool) {
    let until = Instant::now() + Duration::from_secs(30);
    while !f() {
        assert!(Instant::now() < until, "timed out waiting for {what}");
        sleep(Duration::from_millis(10));
    }
}

#[test]
fn train_replay_and_reload() {
    let stack = Stack::new(Broker::new());
    let c = stack.client();
    let d1 = stack.deploy(20);
    let d2 = c.deploy_training(d1.configuration_id, &cfg(20)).unwrap();
    assert!(d2.id > d1.id);
    assert_eq!(d1.jobs[0].status, JobStatus::Pending);

    let msg = stack.send(d1.id, "copd", 3);
    assert_eq!(msg.topics[0].to_string(), "copd:0:0:275");
    assert_eq!(msg.total_msg, 275);

    let done = stack.wait_done(d1.id);
    let job = &done.jobs[0];
    assert_eq!(job.status, JobStatus::Uploaded, "{job:?}");
    assert_eq!(job.control.as_ref(), Some(&msg));
    let r1 = c.result(job.result_id.unwrap()).unwrap();
    assert_eq!(r1.consumed_records, 275);
    let eval = r1.metrics.evaluation.clone().unwrap();
    assert!(eval["accuracy"] > 0.9, "{eval:?}");

    wait_until("datastream", || c.datastreams().unwrap().len() == 1);
    let ds = &c.datastreams().unwrap()[0];
    let mut broker = BrokerClient::connect(stack.broker_addr()).unwrap();
    let end_before = broker.offsets("copd").unwrap()[0].end;

    // nothing pending on d1 any more
    let err = c.replay(ds.id, d1.id).unwrap_err();
    assert_eq!(
        (err.status(), err.code()),
        (Some(409), Some("no_pending_jobs"))
    );
    let err = c.replay(ds.id, 999).unwrap_err();
    assert_eq!(
        (err.status(), err.code()),
        (Some(404), Some("unknown_deployment"))
    );

    let replayed = c.replay(ds.id, d2.id).unwrap();
    assert_eq!(replayed.deployment_id, d2.id);
    assert_eq!(replayed.topics, msg.topics);
    let done2 = stack.wait_done(d2.id);
    let r2 = c.result(done2.jobs[0].result_id.unwrap()).unwrap();
    assert_eq!(r2.stream_digest, r1.stream_digest);
    assert_eq!(broker.offsets("copd").unwrap()[0].end, end_before);
    assert_eq!(c.download(r1.id).unwrap(), c.download(r2.id).unwrap());
    wait_until("replay logged", || c.datastreams().unwrap().len() == 2);

    // re-upload is a conflict
    let err = c
        .upload_result(
            d1.id,
            job.model_id,
            &kml_core::controlplane::UploadMeta {
                metrics: r1.metrics.clone(),
                stream_digest: String::new(),
                consumed_records: 0,
            },
            &c.download(r1.id).unwrap(),
        )
        .unwrap_err();
    assert_eq!(err.status(), Some(409));

    // restart the backend on the same directory
    let before = stack.backend.control_plane().registry().snapshot();
    let Stack {
        broker: b,
        mut backend,
        dir,
    } = stack;
    backend.shutdown();
    drop(backend);
    let backend = BackendServer::start(Stack::config(&b, &dir)).unwrap();
    assert_eq!(backend.control_plane().registry().snapshot(), before);
    let d3 = backend
        .client()
        .deploy_training(d1.configuration_id, &cfg(1))
        .unwrap();
    assert!(d3.id > d2.id);
}

#[test]
fn crash_restarts_reproduce_weights() {
    let stack = Stack::new(Broker::new());
    let c = stack.client();
    let clean = stack.deploy(5);
    let faulty = c.deploy_training(clean.configuration_id, &cfg(5)).unwrap();
    let model_id = faulty.jobs[0].model_id;
    stack.backend.control_plane().inject_fault(
        faulty.id,
        model_id,
        FaultPlan {
            crash_after_records: 137,
            crash_attempts: 2,
        },
    );
    stack.send(clean.id, "s", 5);
    let clean = stack.wait_done(clean.id);
    wait_until("datastream", || !c.datastreams().unwrap().is_empty());
    c.replay(c.datastreams().unwrap()[0].id, faulty.id).unwrap();
    let faulty = stack.wait_done(faulty.id);
    assert_eq!(faulty.jobs[0].status, JobStatus::Uploaded);
    assert_eq!(faulty.jobs[0].restart_count, 2);
    assert_eq!(
        c.download(clean.jobs[0].result_id.unwrap()).unwrap(),
        c.download(faulty.jobs[0].result_id.unwrap()).unwrap()
    );
}

#[test]
fn exhausted_budget_marks_job_failed() {
    let stack = Stack::new(Broker::new());
    let c = stack.client();
    let d = stack.deploy(1);
    stack.backend.control_plane().inject_fault(
        d.id,
        d.jobs[0].model_id,
        FaultPlan {
            crash_after_records: 1,
            crash_attempts: 99,
        },
    );
    stack.send(d.id, "s", 1);
    let d = stack.wait_done(d.id);
    assert_eq!(d.jobs[0].status, JobStatus::Failed);
    assert_eq!(d.jobs[0].restart_count, 3);
    assert!(d.jobs[0].error.as_deref().unwrap().contains("injected"));
    assert!(c.results().unwrap().is_empty());
}

#[test]
fn expired_stream_cannot_be_replayed() {
    let clock = Arc::new(ManualClock::new(1_000_000));
    let stack = Stack::new(Broker::with_clock(clock.clone()));
    let c = stack.client();
    let mut broker = BrokerClient::connect(stack.broker_addr()).unwrap();
    broker
        .create_topic("short", 1, RetentionPolicy::with_ms(1000))
        .unwrap();
    // announce for a deployment that does not exist; the logger keeps it anyway
    stack.send(77, "short", 2);
    wait_until("datastream", || c.datastreams().unwrap().len() == 1);
    let target = stack.deploy(1);

    clock.advance(1500);
    stack.broker.broker().enforce_retention_now();
    let err = c
        .replay(c.datastreams().unwrap()[0].id, target.id)
        .unwrap_err();
    assert_eq!(
        (err.status(), err.code()),
        (Some(410), Some("stream_expired"))
    );
    assert!(err.to_string().contains("short:0:0:275"), "{err}");
}

#[test]
fn logger_skips_malformed_and_keeps_history() {
    let stack = Stack::new(Broker::new());
    let c = stack.client();
    let mut broker = BrokerClient::connect(stack.broker_addr()).unwrap();
    broker
        .ensure_topic(DEFAULT_CONTROL_TOPIC, 1, RetentionPolicy::default())
        .unwrap();
    broker
        .produce(DEFAULT_CONTROL_TOPIC, Some(0), None, b"{not json")
        .unwrap();
    stack.send(5, "a", 1);
    stack.send(5, "a", 2);
    wait_until("two datastreams", || c.datastreams().unwrap().len() == 2);
    let ds = c.datastreams().unwrap();
    assert_eq!(ds[0].control_offset, 1);
    assert_eq!(ds[1].message.topics[0].to_string(), "a:0:275:275");
    sleep(Duration::from_millis(100));
    assert_eq!(c.datastreams().unwrap().len(), 2);
}

#[test]
fn replicas_share_the_input_topic() {
    let stack = Stack::new(Broker::new());
    let c = stack.client();
    let d = stack.deploy(3);
    stack.send(d.id, "train", 4);
    let d = stack.wait_done(d.id);
    let result_id = d.jobs[0].result_id.unwrap();

    let inf = c
        .deploy_inference(&NewInference {
            result_id,
            replicas: 3,
            input_topic: "in".into(),
            output_topic: "out".into(),
        })
        .unwrap();
    assert_eq!(inf.input_format, InputFormat::Raw);
    assert_eq!(
        inf.input_config,
        d.jobs[0].control.as_ref().unwrap().input_config
    );
    let group = inf.group_id.clone();
    let b = stack.broker.broker().clone();
    wait_until("three members", || {
        b.group_assignment(&group)
            .values()
            .collect::<HashSet<_>>()
            .len()
            == 3
    });

    let input = InputConfig::parse(InputFormat::Raw, &inf.input_config).unwrap();
    let mut client = BrokerClient::connect(stack.broker_addr()).unwrap();
    let mut tail = OutputTail::open(&stack.broker_addr(), "out", true).unwrap();
    let rows: Vec<Vec<f64>> = gaussian_clusters(60, 4, 1.5, 9).features;
    let acks = kml_core::streamclient::infer_send(&mut client, "in", &rows, &input).unwrap();
    let preds = tail.recv(60, Duration::from_secs(20)).unwrap();
    let answered: HashSet<(u32, u64)> = preds
        .iter()
        .map(|p| (p.input.partition, p.input.offset))
        .collect();
    assert_eq!(answered.len(), 60);
    assert_eq!(answered, acks.into_iter().collect());
    for p in &preds {
        assert_eq!(p.values.len(), 2);
        assert!((p.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    // a wrong-length record is skipped and counted
    client.produce("in", Some(0), None, &[1, 2, 3]).unwrap();
    wait_until("decode error counted", || {
        c.inference(inf.id).unwrap().stats.decode_errors == 1
    });

    let sup = stack.backend.control_plane().supervisor();
    assert!(sup.kill(TaskKey::Replica {
        inference_id: inf.id,
        index: 1
    }));
    wait_until("replica restarted", || {
        sup.events()
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    kml_core::controlplane::TaskEvent::Started {
                        key: TaskKey::Replica { index: 1, .. },
                        ..
                    }
                )
            })
            .count()
            == 2
            && sup.live_replicas(inf.id) == 3
    });
    c.stop_inference(inf.id).unwrap();
    assert_eq!(sup.live_replicas(inf.id), 0);
}

#[test]
fn rest_validation() {
    let stack = Stack::new(Broker::new());
    let c = stack.client();
    let err = c.model(999).unwrap_err();
    assert_eq!(
        (err.status(), err.code()),
        (Some(404), Some("unknown_model"))
    );
    let bad = json!({"input_dim": 4, "layers": [], "loss": "nope"});
    let err = c.create_model("x", "", &bad).unwrap_err();
    assert_eq!(err.status(), Some(400));
    let m = c.create_model("ok", "d", &listing_two()).unwrap();
    let err = c.create_configuration("c", &[m.id, 42]).unwrap_err();
    assert_eq!(err.status(), Some(400));
    let conf = c.create_configuration("c", &[m.id]).unwrap();
    let err = c.delete_model(m.id).unwrap_err();
    assert_eq!(err.status(), Some(409));
    let err = c.deploy_training(conf.id + 10, &cfg(1)).unwrap_err();
    assert_eq!(err.code(), Some("unknown_configuration"));
    let spec = c
        .model_spec(c.deploy_training(conf.id, &cfg(1)).unwrap().id, m.id)
        .unwrap();
    assert_eq!(spec.input_dim, 4);
    let ui: serde_json::Value = ureq::get(&format!("{}/ui/config.json", c.base_url()))
        .call()
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(ui["backend_base_url"], c.base_url());
}
