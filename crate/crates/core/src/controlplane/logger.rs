//! Control logger: tails the control topic and records every valid control
//! message as a datastream. Its read position is persisted, so each record
//! is logged once across backend restarts.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::service::ControlPlane;
use crate::logbroker::{BrokerClient, BrokerError, ClientError, RetentionPolicy};

#[derive(Debug)]
pub struct ControlLogger {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ControlLogger {
    pub fn spawn(cp: Arc<ControlPlane>, poll: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let s = Arc::clone(&stop);
        let thread = thread::Builder::new()
            .name("control-logger".into())
            .spawn(move || run(&cp, &s, poll))
            .expect("spawn control logger");
        Self {
            stop,
            thread: Some(thread),
        }
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ControlLogger {
    fn drop(&mut self) {
        self.stop();
    }
}

fn run(cp: &ControlPlane, stop: &AtomicBool, poll: Duration) {
    let topic = cp.config().control_topic.clone();
    let mut client: Option<BrokerClient> = None;
    while !stop.load(Ordering::SeqCst) {
        let c = match client.as_mut() {
            Some(c) => c,
            None => {
                match BrokerClient::connect(cp.config().broker_addr.as_str()).and_then(|mut c| {
                    c.ensure_topic(&topic, 1, RetentionPolicy::default())?;
                    Ok(c)
                }) {
                    Ok(c) => client = Some(c),
                    Err(e) => {
                        tracing::debug!("control logger waiting for broker: {e}");
                        thread::sleep(poll * 10);
                    }
                }
                continue;
            }
        };
        let next = cp.registry().read(|s| s.logger_offset);
        match c.fetch(&topic, 0, next, 100) {
            Ok(records) if records.is_empty() => thread::sleep(poll),
            Ok(records) => {
                for r in records {
                    if let Err(e) = cp.record_control(r.offset, &r.value) {
                        tracing::error!("control logger: {e}");
                        thread::sleep(poll);
                        break;
                    }
                    if let Err(e) = cp.registry().set_logger_offset(r.offset + 1) {
                        tracing::error!("control logger: {e}");
                        break;
                    }
                }
            }
            Err(ClientError::Broker(BrokerError::OffsetPurged { base, .. })) => {
                tracing::warn!(
                    from = next,
                    to = base,
                    "control records purged before logging"
                );
                let _ = cp.registry().set_logger_offset(base);
            }
            Err(e) => {
                tracing::warn!("control logger: {e}");
                client = None;
                thread::sleep(poll);
            }
        }
    }
}
