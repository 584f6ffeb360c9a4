//! WebSocket session: two readers feed two FIFO writers. A writer holds
//! each message until `max(received + delay, previous release)`, so random
//! delays never reorder a direction.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{self, WebSocket};
use futures_util::{Sink, SinkExt, Stream, StreamExt};
use parking_lot::Mutex;
use rtcshim_core::engine::WireMessage;
use rtcshim_core::{ControlEventKind, Scalar};
use tokio::sync::{mpsc, watch};
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::{self, protocol::frame::coding::CloseCode};

use crate::pipeline::{SessionPipeline, Verdict};
use crate::record::Direction;
use crate::server::Proxy;

pub const CLOSE_BY_CONTROL: u16 = 4000;
pub const CLOSE_BLOCKED: u16 = 4403;
pub const CLOSE_DEADLINE: u16 = 4408;
/// The upstream could not be reached.
pub const CLOSE_UPSTREAM_FAILED: u16 = 4502;
/// Trigger name that closes a session; the payload is its id or `*`.
pub const CLOSE_TRIGGER: &str = "proxy.close";

#[derive(Debug, Clone)]
enum Frame {
    Msg(WireMessage),
    Close(Option<(u16, String)>),
}

struct Item {
    at: Instant,
    delay_ms: u64,
    frame: Frame,
}

fn from_axum(m: ws::Message) -> Option<Frame> {
    match m {
        ws::Message::Text(t) => Some(Frame::Msg(WireMessage::Text(t.as_str().to_string()))),
        ws::Message::Binary(b) => Some(Frame::Msg(WireMessage::Binary(b.to_vec()))),
        ws::Message::Close(c) => Some(Frame::Close(c.map(|c| (c.code, c.reason.as_str().to_string())))),
        _ => None,
    }
}

fn to_axum(f: Frame) -> ws::Message {
    match f {
        Frame::Msg(WireMessage::Text(t)) => ws::Message::Text(t.into()),
        Frame::Msg(WireMessage::Binary(b)) => ws::Message::Binary(b.into()),
        Frame::Close(c) => ws::Message::Close(c.map(|(code, reason)| ws::CloseFrame {
            code,
            reason: reason.into(),
        })),
    }
}

fn from_tungstenite(m: tungstenite::Message) -> Option<Frame> {
    match m {
        tungstenite::Message::Text(t) => Some(Frame::Msg(WireMessage::Text(t.as_str().to_string()))),
        tungstenite::Message::Binary(b) => Some(Frame::Msg(WireMessage::Binary(b.to_vec()))),
        tungstenite::Message::Close(c) => {
            Some(Frame::Close(c.map(|c| (u16::from(c.code), c.reason.as_str().to_string()))))
        }
        _ => None,
    }
}

fn to_tungstenite(f: Frame) -> tungstenite::Message {
    match f {
        Frame::Msg(WireMessage::Text(t)) => tungstenite::Message::Text(t.into()),
        Frame::Msg(WireMessage::Binary(b)) => tungstenite::Message::Binary(b.into()),
        Frame::Close(c) => tungstenite::Message::Close(c.map(|(code, reason)| {
            tungstenite::protocol::CloseFrame {
                code: CloseCode::from(code),
                reason: reason.into(),
            }
        })),
    }
}

async fn read_loop<S>(
    mut stream: S,
    direction: Direction,
    pipeline: Arc<Mutex<SessionPipeline>>,
    forward: mpsc::UnboundedSender<Item>,
    back: mpsc::UnboundedSender<Item>,
) where
    S: Stream<Item = Option<Frame>> + Unpin,
{
    while let Some(next) = stream.next().await {
        let at = Instant::now();
        let Some(frame) = next else { continue };
        match frame {
            Frame::Close(c) => {
                forward.send(Item { at, delay_ms: 0, frame: Frame::Close(c) }).ok();
                return;
            }
            Frame::Msg(m) => {
                let verdict = pipeline.lock().process(direction, m);
                match verdict {
                    Verdict::Forward { message, delay_ms } => {
                        forward.send(Item { at, delay_ms, frame: Frame::Msg(message) }).ok();
                    }
                    Verdict::Reply(reply) => {
                        back.send(Item { at, delay_ms: 0, frame: Frame::Msg(reply) }).ok();
                    }
                    Verdict::Drop => {}
                }
            }
        }
    }
    forward.send(Item { at: Instant::now(), delay_ms: 0, frame: Frame::Close(None) }).ok();
}

async fn write_loop<S, M>(
    mut sink: S,
    convert: fn(Frame) -> M,
    mut rx: mpsc::UnboundedReceiver<Item>,
    mut stop: watch::Receiver<Option<(u16, String)>>,
) where
    S: Sink<M> + Unpin,
{
    let mut last = Instant::now();
    let stopped = loop {
        let item = tokio::select! {
            biased;
            _ = stop.changed() => break true,
            item = rx.recv() => item,
        };
        let Some(item) = item else { break false };
        let release = (item.at + Duration::from_millis(item.delay_ms)).max(last);
        last = release;
        tokio::select! {
            biased;
            _ = stop.changed() => break true,
            _ = tokio::time::sleep_until(release) => {}
        }
        let closing = matches!(item.frame, Frame::Close(_));
        if sink.send(convert(item.frame)).await.is_err() || closing {
            break false;
        }
    };
    if stopped {
        let reason = stop.borrow().clone();
        sink.send(convert(Frame::Close(reason))).await.ok();
    }
    sink.close().await.ok();
}

async fn watch_close_trigger(proxy: &Proxy, session: &str) {
    let Ok(sub) = proxy.engine.controls().subscribe(CLOSE_TRIGGER) else {
        return std::future::pending().await;
    };
    loop {
        while let Some(ev) = sub.try_recv() {
            let target = match &ev.new_value {
                Some(Scalar::Str(s)) => s.as_str(),
                _ => "*",
            };
            if ev.kind == ControlEventKind::Triggered && (target == "*" || target == session) {
                return;
            }
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

pub(crate) async fn run_session(proxy: Arc<Proxy>, client: WebSocket, client_addr: String, path: String) {
    let url = proxy.upstream_ws_url(&path);
    let id = proxy.registry.open("ws", &client_addr, &url);
    let policy = proxy.fault_policy();
    let mut pipeline = SessionPipeline::new(proxy.engine.clone(), proxy.registry.clone(), policy.clone(), &id);
    let (mut client_tx, client_rx) = client.split();

    let target = match pipeline.open_url(&url) {
        Ok(t) => t,
        Err(e) => {
            tracing::info!(session = %id, "{e}");
            client_tx.send(to_axum(Frame::Close(Some((CLOSE_BLOCKED, "blocked".into()))))).await.ok();
            proxy.registry.close(&id, "blocked");
            return;
        }
    };
    let upstream = match tokio::time::timeout(proxy.timeout, tokio_tungstenite::connect_async(target.as_str())).await {
        Ok(Ok((stream, _))) => stream,
        failed => {
            let detail = match failed {
                Ok(Err(e)) => e.to_string(),
                _ => "timeout".to_string(),
            };
            tracing::warn!(session = %id, upstream = %target, "upstream connect failed: {detail}");
            client_tx
                .send(to_axum(Frame::Close(Some((CLOSE_UPSTREAM_FAILED, "upstream connect failed".into())))))
                .await
                .ok();
            proxy.registry.close(&id, "upstream connect failed");
            return;
        }
    };
    pipeline.note_close_after();
    tracing::debug!(session = %id, upstream = %target, "websocket session open");
    let (up_tx, up_rx) = upstream.split();
    let pipeline = Arc::new(Mutex::new(pipeline));
    let (to_up, to_up_rx) = mpsc::unbounded_channel();
    let (to_client, to_client_rx) = mpsc::unbounded_channel();
    let (stop_tx, stop_rx) = watch::channel(None);

    let client_frames = client_rx
        .take_while(|r| std::future::ready(r.is_ok()))
        .map(|r| r.ok().and_then(from_axum));
    let upstream_frames = up_rx
        .take_while(|r| std::future::ready(r.is_ok()))
        .map(|r| r.ok().and_then(from_tungstenite));
    let readers = [
        tokio::spawn(read_loop(
            Box::pin(client_frames),
            Direction::C2s,
            pipeline.clone(),
            to_up.clone(),
            to_client.clone(),
        )),
        tokio::spawn(read_loop(Box::pin(upstream_frames), Direction::S2c, pipeline, to_client, to_up)),
    ];
    let mut up_writer = tokio::spawn(write_loop(up_tx, to_tungstenite, to_up_rx, stop_rx.clone()));
    let mut client_writer = tokio::spawn(write_loop(client_tx, to_axum, to_client_rx, stop_rx));

    let deadline = async {
        match policy.close_after_ms {
            Some(ms) => tokio::time::sleep(Duration::from_millis(ms)).await,
            None => std::future::pending().await,
        }
    };
    let (mut up_done, mut client_done) = (false, false);
    let reason = tokio::select! {
        _ = deadline => Some((CLOSE_DEADLINE, "close_after deadline".to_string())),
        _ = watch_close_trigger(&proxy, &id) => Some((CLOSE_BY_CONTROL, "closed by control".to_string())),
        _ = &mut up_writer => { up_done = true; None }
        _ = &mut client_writer => { client_done = true; None }
    };
    let label = match &reason {
        Some((_, r)) => r.clone(),
        None => "closed".to_string(),
    };
    if reason.is_some() {
        stop_tx.send(reason).ok();
    }
    let grace = Duration::from_secs(2);
    if !up_done {
        tokio::time::timeout(grace, &mut up_writer).await.ok();
    }
    if !client_done {
        tokio::time::timeout(grace, &mut client_writer).await.ok();
    }
    stop_tx.send(Some((1000, String::new()))).ok();
    up_writer.abort();
    client_writer.abort();
    for r in readers {
        r.abort();
    }
    proxy.registry.close(&id, &label);
    tracing::debug!(session = %id, reason = %label, "websocket session closed");
}
