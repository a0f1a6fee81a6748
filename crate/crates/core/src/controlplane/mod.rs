//! Back-end. The REST API sits on a file-backed registry, and a supervisor
//! runs training jobs and inference replicas in-process.

mod api;
mod client;
mod entities;
mod logger;
mod message;
mod registry;
mod service;
mod supervisor;

use std::io;
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

pub use api::router;
pub use client::{BackendClient, BackendError, ErrorBody};
pub use entities::*;
pub use logger::ControlLogger;
pub use message::ControlMessage;
pub use registry::{Entity, Registry, RegistryState};
pub use service::{
    ApiError, BackendConfig, ControlPlane, InferenceView, NewConfiguration, NewDeployment,
    NewInference, NewModel,
};
pub use supervisor::{Supervisor, TaskControl, TaskEvent, TaskFailure, TaskKey, TaskState, Work};

pub const DEFAULT_BACKEND_ADDR: &str = "127.0.0.1:8085";
pub const DEFAULT_CONTROL_TOPIC: &str = "kafka-ml-control";
pub const DEFAULT_RESTARTS: u32 = 3;

/// A running backend: HTTP server, control logger and supervisor.
#[derive(Debug)]
pub struct BackendServer {
    addr: SocketAddr,
    cp: Arc<ControlPlane>,
    logger: ControlLogger,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl BackendServer {
    /// Binds `cfg.addr` (port 0 picks a free port), reloads the registry
    /// and resumes unfinished work.
    pub fn start(cfg: BackendConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(&cfg.addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let cp = Arc::new(ControlPlane::open(cfg, format!("http://{addr}"))?);

        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(Arc::clone(&cp));
        let thread = std::thread::Builder::new()
            .name("backend-http".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = match tokio::net::TcpListener::from_std(listener) {
                        Ok(l) => l,
                        Err(e) => {
                            tracing::error!("backend listener: {e}");
                            return;
                        }
                    };
                    let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                        let _ = rx.await;
                    });
                    if let Err(e) = serve.await {
                        tracing::error!("backend server: {e}");
                    }
                });
            })?;

        let logger = ControlLogger::spawn(Arc::clone(&cp), Duration::from_millis(20));
        cp.resume();
        tracing::info!(%addr, "backend listening");
        Ok(Self {
            addr,
            cp,
            logger,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn control_plane(&self) -> &Arc<ControlPlane> {
        &self.cp
    }

    pub fn client(&self) -> BackendClient {
        BackendClient::new(&self.url())
    }

    /// Blocks until the HTTP server exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(&mut self) {
        self.logger.stop();
        self.cp.shutdown();
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BackendServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
