use std::io::{Read, Write};

use biogap_core::power::Preset;
use biogap_core::proto::LinkModel;
use biogap_core::runtime::{Command, Mode, StreamId};
use biogap_gateway::console::{ClientMessage, LiveOptions, LiveSession, ServerMessage};
use biogap_gateway::server::{serve, ServeOptions};
use biogap_gateway::session::{SessionConfig, SessionRunner};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

async fn start_server(duration_s: f64) -> biogap_gateway::server::Server {
    let mut cfg = SessionConfig::new(Preset::Headband, LinkModel::default(), duration_s, 2);
    cfg.mode = Mode::Idle;
    let runner = SessionRunner::new(cfg.id.clone(), cfg.device().unwrap(), cfg.link.clone(), cfg.buffer_bits, Vec::new(), 0).unwrap();
    let live = LiveSession::new(runner, LiveOptions::default()).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let opts = ServeOptions { speed: 20.0, step_s: 0.02, duration_s: Some(duration_s), wait_for_client: true };
    serve(live, listener, opts).await.unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn console_drives_a_session_over_websocket() {
    let server = start_server(4.0).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/ws", server.addr)).await.unwrap();

    let first = ws.next().await.unwrap().unwrap();
    let hello = ServerMessage::from_json(first.to_text().unwrap()).unwrap();
    assert!(matches!(hello, ServerMessage::Hello { preset: Preset::Headband, mode: Mode::Idle, .. }), "{hello:?}");

    for (id, command) in [(1, Command::SetRate { rate: 300 }), (2, Command::Start)] {
        ws.send(Message::Text(ClientMessage::Command { id, command }.to_json().into())).await.unwrap();
    }
    ws.send(Message::Text("{\"v\":1,\"type\":\"bogus\"}".into())).await.unwrap();

    let mut msgs = Vec::new();
    while let Some(Ok(m)) = ws.next().await {
        match m {
            Message::Text(t) => msgs.push(ServerMessage::from_json(&t).unwrap()),
            Message::Close(_) => break,
            _ => {}
        }
    }
    assert!(msgs.iter().any(|m| matches!(m, ServerMessage::Nack { id: 1, .. })));
    assert!(msgs.iter().any(|m| matches!(m, ServerMessage::Ack { id: 2, mode: Mode::Streaming, .. })));
    assert!(msgs.iter().any(|m| matches!(m, ServerMessage::Error { .. })));
    assert!(msgs.iter().any(|m| matches!(m, ServerMessage::Frames { stream: StreamId::Exg, .. })));
    assert!(msgs.iter().filter(|m| matches!(m, ServerMessage::Status { .. })).count() >= 3);

    let dropped = server.dropped_messages();
    let session = server.join().await.unwrap();
    assert_eq!(dropped, 0);
    assert!(session.stream(StreamId::Exg).frames > 0);
    assert_eq!(session.total_gaps(), 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_endpoint_answers_and_stop_ends_the_session() {
    let server = start_server(1000.0).await;
    let addr = server.addr;
    let body = tokio::task::spawn_blocking(move || {
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        s.write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    })
    .await
    .unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.ends_with("ok"));
    server.stop_handle().stop();
    let session = server.join().await.unwrap();
    assert_eq!(session.stream(StreamId::Exg).frames, 0);
}
