//! Websocket server for the console. The simulation and recording run on
//! their own thread; display messages fan out through a bounded broadcast
//! channel, so a slow client loses display messages and never stalls the
//! recording.

use std::io::Write;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};

use crate::console::LiveSession;
use crate::session::Session;

/// Display messages buffered per client before the oldest are dropped.
pub const CLIENT_BACKLOG: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    /// Simulated seconds per engine step.
    pub step_s: f64,
    /// Stop after this much simulated time; run until stopped otherwise.
    pub duration_s: Option<f64>,
    /// Hold the clock until the first console connects.
    pub wait_for_client: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { speed: 1.0, step_s: 0.02, duration_s: None, wait_for_client: false }
    }
}

#[derive(Clone)]
struct Shared {
    tx: broadcast::Sender<Arc<str>>,
    hello: watch::Receiver<Arc<str>>,
    inbox: mpsc::UnboundedSender<String>,
    dropped: Arc<AtomicU64>,
}

/// Handle to a running server.
pub struct Server {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    dropped: Arc<AtomicU64>,
    engine: tokio::task::JoinHandle<Session>,
    http: tokio::task::JoinHandle<()>,
    shutdown: tokio::sync::oneshot::Sender<()>,
}

/// Ends a served session from elsewhere.
#[derive(Debug, Clone)]
pub struct StopHandle(Arc<AtomicBool>);

impl StopHandle {
    /// Asks the engine to finish at its next step.
    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }
}

impl Server {
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn stop_handle(&self) -> StopHandle {
        StopHandle(self.stop.clone())
    }

    /// Display messages dropped because a client fell behind.
    pub fn dropped_messages(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    /// Waits for the session to end, then closes the listener.
    pub async fn join(self) -> anyhow::Result<Session> {
        let session = self.engine.await?;
        let _ = self.shutdown.send(());
        let _ = self.http.await;
        Ok(session)
    }
}

fn run_engine<W: Write>(
    mut live: LiveSession<W>,
    opts: ServeOptions,
    tx: broadcast::Sender<Arc<str>>,
    hello: watch::Sender<Arc<str>>,
    mut inbox: mpsc::UnboundedReceiver<String>,
    stop: Arc<AtomicBool>,
) -> Session {
    let send = |m: &crate::console::ServerMessage| {
        // no subscribers is fine
        let _ = tx.send(Arc::from(m.to_json()));
    };
    while opts.wait_for_client && tx.receiver_count() == 0 && !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(5));
    }
    let start = Instant::now();
    let mut sim_s = 0.0;
    loop {
        if stop.load(Ordering::SeqCst) || opts.duration_s.is_some_and(|d| sim_s >= d - 1e-9) || live.runner().is_aborted() {
            break;
        }
        while let Ok(text) = inbox.try_recv() {
            for m in live.handle_text(&text) {
                send(&m);
            }
        }
        for m in live.step(opts.step_s) {
            send(&m);
        }
        let _ = hello.send(Arc::from(live.hello().to_json()));
        sim_s += opts.step_s;
        let due = Duration::from_secs_f64(sim_s / opts.speed);
        if let Some(wait) = due.checked_sub(start.elapsed()) {
            std::thread::sleep(wait);
        }
    }
    live.finish().0
}

/// Serves `live` on `listener` and starts the simulation clock.
pub async fn serve<W: Write + Send + 'static>(live: LiveSession<W>, listener: TcpListener, opts: ServeOptions) -> anyhow::Result<Server> {
    anyhow::ensure!(opts.speed > 0.0 && opts.step_s > 0.0, "speed and step must be positive");
    let addr = listener.local_addr()?;
    let (tx, _) = broadcast::channel(CLIENT_BACKLOG);
    let (hello_tx, hello_rx) = watch::channel(Arc::from(live.hello().to_json()));
    let (inbox_tx, inbox_rx) = mpsc::unbounded_channel();
    let stop = Arc::new(AtomicBool::new(false));
    let dropped = Arc::new(AtomicU64::new(0));
    let shared = Shared { tx: tx.clone(), hello: hello_rx, inbox: inbox_tx, dropped: dropped.clone() };

    let engine = {
        let stop = stop.clone();
        tokio::task::spawn_blocking(move || run_engine(live, opts, tx, hello_tx, inbox_rx, stop))
    };
    let app = Router::new().route("/ws", get(ws_handler)).route("/health", get(|| async { "ok" })).with_state(shared);
    let (shutdown, rx) = tokio::sync::oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        let graceful = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = rx.await;
        });
        if let Err(e) = graceful.await {
            tracing::error!("console server: {e}");
        }
    });
    tracing::info!("console at ws://{addr}/ws");
    Ok(Server { addr, stop, dropped, engine, http, shutdown })
}

async fn ws_handler(ws: WebSocketUpgrade, State(shared): State<Shared>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, shared))
}

async fn client(socket: WebSocket, shared: Shared) {
    let (mut sink, mut stream) = socket.split();
    let mut rx = shared.tx.subscribe();
    let mut engine_alive = shared.hello.clone();
    let hello = shared.hello.borrow().clone();
    if sink.send(Message::Text(hello.as_ref().into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    shared.dropped.fetch_add(n, Ordering::Relaxed);
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            // the engine drops its end when the session is over
            alive = engine_alive.changed() => if alive.is_err() {
                while let Ok(text) = rx.try_recv() {
                    let _ = sink.send(Message::Text(text.as_ref().into())).await;
                }
                let _ = sink.send(Message::Close(None)).await;
                break;
            },
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    if shared.inbox.send(text.to_string()).is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
