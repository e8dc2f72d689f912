//! HTTP/WebSocket front end: `/stream`, `/session` and `/events`.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use harness_core::broadcast::Broadcaster;
use harness_core::session::SessionEvents;
use harness_core::SessionRecord;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

/// State shared by the producer and the HTTP handlers.
#[derive(Clone)]
pub struct Shared {
    pub hub: Broadcaster,
    pub manifest: Arc<RwLock<SessionRecord>>,
    pub events: Arc<RwLock<SessionEvents>>,
}

impl Shared {
    pub fn new(manifest: SessionRecord, events: SessionEvents) -> Self {
        Self {
            hub: Broadcaster::default(),
            manifest: Arc::new(RwLock::new(manifest)),
            events: Arc::new(RwLock::new(events)),
        }
    }
}

#[derive(Clone)]
struct AppState {
    shared: Shared,
    shutdown: watch::Receiver<bool>,
}

pub fn router(shared: Shared, shutdown: watch::Receiver<bool>) -> Router {
    Router::new()
        .route("/stream", get(stream))
        .route("/session", get(session))
        .route("/events", get(events))
        .with_state(AppState { shared, shutdown })
}

async fn session(State(state): State<AppState>) -> Response {
    let manifest = state.shared.manifest.read().expect("manifest lock").clone();
    Json(manifest).into_response()
}

async fn events(State(state): State<AppState>) -> Response {
    let events = state.shared.events.read().expect("events lock").clone();
    Json(events).into_response()
}

async fn stream(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    // subscribe before the upgrade completes so nothing published after the
    // request is missed
    let sub = state.shared.hub.subscribe();
    ws.on_upgrade(move |socket| forward(socket, sub, state.shutdown))
}

async fn forward(
    mut socket: WebSocket,
    mut sub: harness_core::broadcast::Subscription,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            msg = sub.recv() => match msg {
                Some(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            _ = shutdown.changed() => {
                while let Some(text) = sub.try_recv() {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        return;
                    }
                }
                let _ = socket.send(Message::Close(None)).await;
                break;
            }
        }
    }
    if sub.skipped > 0 {
        tracing::debug!(skipped = sub.skipped, "subscriber fell behind");
    }
}

/// A running server; dropping it does not stop it, call [`Server::stop`].
pub struct Server {
    pub addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub async fn start(bind: SocketAddr, shared: Shared) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind).await?;
        let addr = listener.local_addr()?;
        let (stop, rx) = watch::channel(false);
        let app = router(shared, rx.clone());
        let mut on_stop = rx;
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = on_stop.wait_for(|v| *v).await;
                })
                .await
        });
        tracing::info!(%addr, "serving /stream /session /events");
        Ok(Self { addr, stop, task })
    }

    pub async fn stop(self) -> std::io::Result<()> {
        let _ = self.stop.send(true);
        match self.task.await {
            Ok(r) => r,
            Err(e) => Err(std::io::Error::other(e)),
        }
    }
}
