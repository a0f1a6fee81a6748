use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::wire::{self, Frame};
use super::{Broker, BrokerError, RetentionPolicy};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// How often the background retention pass runs.
    pub retention_interval: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            retention_interval: Duration::from_secs(1),
        }
    }
}

/// TCP front end for a [`Broker`]: one thread per client session plus a
/// background retention thread.
pub struct BrokerServer {
    addr: SocketAddr,
    broker: Arc<Broker>,
    stop: Arc<AtomicBool>,
    sessions: Arc<Mutex<Vec<TcpStream>>>,
    threads: Vec<JoinHandle<()>>,
}

impl BrokerServer {
    pub fn bind(
        addr: impl ToSocketAddrs,
        broker: Arc<Broker>,
        config: ServerConfig,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let sessions: Arc<Mutex<Vec<TcpStream>>> = Arc::default();

        let accept = {
            let broker = broker.clone();
            let stop = stop.clone();
            let sessions = sessions.clone();
            thread::Builder::new()
                .name("broker-accept".into())
                .spawn(move || accept_loop(listener, broker, stop, sessions))?
        };
        let retention = {
            let broker = broker.clone();
            let stop = stop.clone();
            let interval = config.retention_interval;
            thread::Builder::new()
                .name("broker-retention".into())
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        sleep_unless(&stop, interval);
                        let purged: u64 = broker.enforce_retention_now().values().sum();
                        if purged > 0 {
                            debug!(purged, "retention pass");
                        }
                    }
                })?
        };
        Ok(Self {
            addr,
            broker,
            stop,
            sessions,
            threads: vec![accept, retention],
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    /// Blocks until the server is shut down from another thread.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Stops accepting and severs every open session.
    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        for s in self.sessions.lock().expect("sessions poisoned").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn sleep_unless(stop: &AtomicBool, total: Duration) {
    let step = Duration::from_millis(20);
    let mut slept = Duration::ZERO;
    while slept < total && !stop.load(Ordering::SeqCst) {
        thread::sleep(step.min(total - slept));
        slept += step;
    }
}

fn accept_loop(
    listener: TcpListener,
    broker: Arc<Broker>,
    stop: Arc<AtomicBool>,
    sessions: Arc<Mutex<Vec<TcpStream>>>,
) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!(error = %e, "accept failed");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        if let Ok(clone) = stream.try_clone() {
            let mut list = sessions.lock().expect("sessions poisoned");
            list.retain(|s| s.peer_addr().is_ok());
            list.push(clone);
        }
        let broker = broker.clone();
        let _ = thread::Builder::new()
            .name("broker-session".into())
            .spawn(move || {
                if let Err(e) = serve_session(stream, &broker) {
                    debug!(error = %e, "session closed");
                }
            });
    }
}

fn serve_session(stream: TcpStream, broker: &Broker) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(request) = wire::read_frame(&mut reader)? {
        let corr = request.header.get("corr").cloned().unwrap_or(Value::Null);
        let mut response = match dispatch(broker, &request) {
            Ok(frame) => frame,
            Err(err) => error_frame(&err),
        };
        if let Value::Object(map) = &mut response.header {
            map.insert("corr".into(), corr);
        }
        wire::write_frame(&mut writer, &response)?;
    }
    Ok(())
}

fn error_frame(err: &BrokerError) -> Frame {
    Frame::new(json!({
        "ok": false,
        "error": err.to_string(),
        "detail": serde_json::to_value(err).unwrap_or(Value::Null),
    }))
}

#[derive(Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    CreateTopic {
        topic: String,
        partitions: u32,
        #[serde(default)]
        retention: Option<RetentionPolicy>,
    },
    Produce {
        topic: String,
        #[serde(default)]
        partition: Option<u32>,
        #[serde(default)]
        key_len: Option<u32>,
    },
    Fetch {
        topic: String,
        partition: u32,
        offset: u64,
        max_records: usize,
    },
    Join {
        group: String,
        member: String,
        topic: String,
    },
    Poll {
        group: String,
        member: String,
        max_records: usize,
    },
    Commit {
        group: String,
        member: String,
        topic: String,
        partition: u32,
        offset: u64,
    },
    Leave {
        group: String,
        member: String,
    },
    Offsets {
        topic: String,
    },
}

fn dispatch(broker: &Broker, frame: &Frame) -> Result<Frame, BrokerError> {
    let request: Request = serde_json::from_value(frame.header.clone())
        .map_err(|e| BrokerError::BadRequest(e.to_string()))?;
    let ok = |extra: Value| -> Frame {
        let mut header = json!({"ok": true});
        if let (Value::Object(h), Value::Object(e)) = (&mut header, extra) {
            h.extend(e);
        }
        Frame::new(header)
    };
    Ok(match request {
        Request::CreateTopic {
            topic,
            partitions,
            retention,
        } => {
            let meta = broker.create_topic(&topic, partitions, retention.unwrap_or_default())?;
            ok(json!({ "topic": meta }))
        }
        Request::Produce {
            topic,
            partition,
            key_len,
        } => {
            let (key, value) = match key_len {
                Some(n) if n as usize > frame.payload.len() => {
                    return Err(BrokerError::BadRequest("key_len exceeds payload".into()))
                }
                Some(n) => {
                    let (k, v) = frame.payload.split_at(n as usize);
                    (Some(k.to_vec()), v.to_vec())
                }
                None => (None, frame.payload.clone()),
            };
            let (partition, offset) = broker.produce(&topic, partition, key, value)?;
            ok(json!({ "partition": partition, "offset": offset }))
        }
        Request::Fetch {
            topic,
            partition,
            offset,
            max_records,
        } => {
            let records = broker.fetch(&topic, partition, offset, max_records)?;
            let mut payload = Vec::new();
            wire::encode_records(&records, &mut payload);
            let mut f = ok(json!({ "count": records.len() }));
            f.payload = payload;
            f
        }
        Request::Join {
            group,
            member,
            topic,
        } => {
            let assignment = broker.join_group(&group, &member, &topic)?;
            ok(json!({ "assignment": assignment }))
        }
        Request::Poll {
            group,
            member,
            max_records,
        } => {
            let records = broker.poll(&group, &member, max_records)?;
            let mut batches: Vec<Value> = Vec::new();
            let mut payload = Vec::new();
            let mut i = 0;
            while i < records.len() {
                let (topic, partition) = (&records[i].topic, records[i].partition);
                let run = records[i..]
                    .iter()
                    .take_while(|r| &r.topic == topic && r.partition == partition)
                    .count();
                wire::encode_records(records[i..i + run].iter().map(|r| &r.record), &mut payload);
                batches.push(json!({ "topic": topic, "partition": partition, "count": run }));
                i += run;
            }
            let mut f = ok(json!({ "batches": batches }));
            f.payload = payload;
            f
        }
        Request::Commit {
            group,
            member,
            topic,
            partition,
            offset,
        } => {
            let committed = broker.commit(&group, &member, &topic, partition, offset)?;
            ok(json!({ "committed": committed }))
        }
        Request::Leave { group, member } => {
            broker.leave_group(&group, &member)?;
            ok(json!({}))
        }
        Request::Offsets { topic } => ok(json!({ "partitions": broker.offsets(&topic)? })),
    })
}
