use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use gmreach::plant::PlantModel;
use gmreach::scenario::{default_pilot_behavior, WorldConfig};
use gmreach::trajio::{extract_window, list_trials, Outcome, Trajectory};
use gmreach_service::server::{CreateResponse, EndResponse, ServerConfig, TrialResponse};
use gmreach_service::{Frame, OverlayConfig};
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio_tungstenite::tungstenite::Message;

async fn start(dir: &Path) -> SocketAddr {
    let mut cfg = ServerConfig::new(
        dir.to_path_buf(),
        PlantModel::default(),
        WorldConfig::default(),
        Some(OverlayConfig::new(default_pilot_behavior())),
    );
    cfg.tick_interval = Duration::from_millis(10);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(gmreach_service::serve(listener, cfg));
    addr
}

/// Minimal HTTP/1.1 exchange; returns status and body.
async fn http(addr: SocketAddr, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8(raw).unwrap();
    let status = text[9..12].parse().unwrap();
    let (head, rest) = text.split_once("\r\n\r\n").unwrap();
    let body = if head
        .to_ascii_lowercase()
        .contains("transfer-encoding: chunked")
    {
        dechunk(rest)
    } else {
        rest.to_string()
    };
    (status, body)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (len, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(len.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

async fn create(addr: SocketAddr, body: &str) -> CreateResponse {
    let (status, text) = http(addr, "POST", "/sessions", body).await;
    assert_eq!(status, 201, "{text}");
    serde_json::from_str(&text).unwrap()
}

/// Flies with a hover controller until the server sends a terminal frame.
async fn fly(addr: SocketAddr, channel: &str) -> Vec<Frame> {
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}{channel}"))
        .await
        .unwrap();
    let mut frames = Vec::new();
    let mut seq = 0u64;
    while let Some(msg) = ws.next().await {
        let text = match msg.unwrap() {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let frame: Frame = serde_json::from_str(&text).unwrap();
        let vy = frame.state[4];
        seq += 1;
        let input = serde_json::json!({"type": "input", "alpha": 0.0, "thrust": (-2.0 * vy).clamp(-1.7, 1.7), "seq": seq});
        let terminal = frame.terminal;
        frames.push(frame);
        if terminal {
            break;
        }
        let _ = ws.send(Message::Text(input.to_string().into())).await;
    }
    frames
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn scripted_twelve_second_session() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(dir.path()).await;

    let (status, body) = http(addr, "GET", "/health", "").await;
    assert_eq!(status, 200);
    assert_eq!(
        serde_json::from_str::<Value>(&body).unwrap()["status"],
        "ok"
    );

    let created = create(addr, r#"{"seed": 3, "maxTicks": 300}"#).await;
    let (status, _) = http(addr, "GET", &format!("/sessions/{}/trial", created.id), "").await;
    assert_eq!(status, 409);

    let frames = fly(addr, &created.channel).await;
    assert_eq!(frames.len(), 300);
    for (k, f) in frames.iter().enumerate() {
        assert!((f.t - 0.04 * (k + 1) as f64).abs() < 1e-9);
    }
    let last = frames.last().unwrap();
    assert!(last.terminal);
    assert_eq!(last.outcome, Some(Outcome::Aborted));
    let spawns = frames
        .iter()
        .flat_map(|f| &f.events)
        .filter(|e| matches!(e, gmreach::scenario::WorldEvent::ObstacleSpawned { .. }))
        .count();
    assert_eq!(spawns, 1);
    let overlays: Vec<_> = frames.iter().filter_map(|f| f.overlay.as_ref()).collect();
    assert!(!overlays.is_empty());
    for o in &overlays {
        assert!((0.0..=1.0).contains(&o.risk));
        assert_eq!(o.grid.values.len(), o.grid.nx * o.grid.ny);
    }

    let (status, body) = http(addr, "DELETE", &format!("/sessions/{}", created.id), "").await;
    assert_eq!(status, 200, "{body}");
    let ended: EndResponse = serde_json::from_str(&body).unwrap();
    assert_eq!(ended.samples, 301);

    let (status, body) = http(addr, "GET", &format!("/sessions/{}/trial", created.id), "").await;
    assert_eq!(status, 200);
    let trial: TrialResponse = serde_json::from_str(&body).unwrap();
    let traj = Trajectory::from_csv_str(&trial.csv, &trial.meta, Path::new("download")).unwrap();
    assert_eq!(traj.samples.len(), 301);
    assert_eq!(traj.dt, 0.04);
    assert!((traj.samples[300].t - 12.0).abs() < 1e-9);
    let spawn = traj.spawn_time.unwrap();
    assert!((2.0..=4.0).contains(&spawn));

    // Same file on disk, every row accepted.
    let files = list_trials(dir.path()).unwrap();
    assert_eq!(files.len(), 1);
    let on_disk = Trajectory::load(&files[0]).unwrap();
    assert_eq!(on_disk, traj);
    // The flight did not land, so training excludes it at trial level.
    assert!(extract_window(&on_disk, 4.5).is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn landing_persists_without_delete() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(dir.path()).await;
    let world = serde_json::json!({
        "startHeight": 3.0,
        "descentSpeed": 0.5,
        "spawn": {"timeWindow": [0.4, 0.4], "candidateX": [-15.0], "gapBelow": 1.0, "size": [2.0, 1.0]}
    });
    let created = create(
        addr,
        &serde_json::json!({"seed": 1, "world": world}).to_string(),
    )
    .await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}{}", created.channel))
        .await
        .unwrap();
    let mut last = None;
    while let Some(Ok(msg)) = ws.next().await {
        if let Message::Text(t) = msg {
            let f: Frame = serde_json::from_str(&t).unwrap();
            let done = f.terminal;
            last = Some(f);
            if done {
                break;
            }
        }
    }
    let last = last.unwrap();
    assert_eq!(last.outcome, Some(Outcome::Landed));

    let (status, body) = http(addr, "GET", &format!("/sessions/{}/trial", created.id), "").await;
    assert_eq!(status, 200, "{body}");
    let trial: TrialResponse = serde_json::from_str(&body).unwrap();
    assert_eq!(trial.meta.outcome, Outcome::Landed);
    let files = list_trials(dir.path()).unwrap();
    let traj = Trajectory::load(&files[0]).unwrap();
    assert_eq!(traj.outcome, Outcome::Landed);
    assert_eq!(traj.samples.last().unwrap().state[1], last.state[1]);
    // A second DELETE reports the already-written trial.
    let (status, body) = http(addr, "DELETE", &format!("/sessions/{}", created.id), "").await;
    assert_eq!(status, 200);
    let ended: EndResponse = serde_json::from_str(&body).unwrap();
    assert_eq!(ended.outcome, Outcome::Landed);
    assert_eq!(list_trials(dir.path()).unwrap().len(), 1);
}

#[tokio::test]
async fn errors_and_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(dir.path()).await;
    assert_eq!(http(addr, "DELETE", "/sessions/nope", "").await.0, 404);
    assert_eq!(
        http(addr, "POST", "/sessions", "{\"bogus\": 1}").await.0,
        400
    );
    assert_eq!(
        http(
            addr,
            "POST",
            "/sessions",
            "{\"world\": {\"designatedLane\": 5}}"
        )
        .await
        .0,
        400
    );
    let a = create(addr, "").await;
    let b = create(addr, "").await;
    assert_ne!(a.id, b.id);
    assert_eq!(a.channel, format!("/sessions/{}/ws", a.id));
    // Ending one session leaves the other untouched.
    assert_eq!(
        http(addr, "DELETE", &format!("/sessions/{}", a.id), "")
            .await
            .0,
        200
    );
    assert_eq!(
        http(addr, "GET", &format!("/sessions/{}/trial", b.id), "")
            .await
            .0,
        409
    );
}
