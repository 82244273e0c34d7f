//! Small helpers shared by every HTTP server in the stack.

use std::net::SocketAddr;

use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

#[derive(Debug, thiserror::Error)]
#[error("cannot bind {addr}: {source}")]
pub struct BindFailed {
    pub addr: String,
    #[source]
    pub source: std::io::Error,
}

/// Accepts `:7000` as shorthand for `127.0.0.1:7000`.
pub fn normalize_listen(addr: &str) -> String {
    if let Some(port) = addr.strip_prefix(':') {
        format!("127.0.0.1:{port}")
    } else {
        addr.to_string()
    }
}

pub async fn bind(addr: &str) -> Result<TcpListener, BindFailed> {
    let addr = normalize_listen(addr);
    TcpListener::bind(&addr).await.map_err(|source| BindFailed { addr, source })
}

/// A running server. Dropping the handle leaves the server running; call
/// [`ServerHandle::shutdown`] to stop it gracefully.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }

    /// Stops accepting immediately without waiting for open connections.
    pub fn abort(self) {
        self.task.abort();
    }

    /// Waits until the server exits on its own.
    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

pub fn spawn_server(listener: TcpListener, router: Router) -> ServerHandle {
    let addr = listener.local_addr().expect("bound listener has an address");
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let served = axum::serve(listener, router)
            .with_graceful_shutdown(async move {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = served {
            tracing::error!(%addr, error = %e, "server stopped");
        }
    });
    ServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    }
}
