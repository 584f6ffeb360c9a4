//! Compressed series batches for a monitoring sink.
//!
//! A batch is one JSON header line followed by a deflate stream. The
//! stream holds, per metric in header order, a varint point count and then
//! for each point a zig-zag varint time delta and a varint of the value's
//! bit pattern XORed with the previous value's. Constant series therefore
//! encode as runs of zero bytes.

use std::collections::VecDeque;
use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{MetricSeries, StatsStore};

pub const SINK_CONTENT_TYPE: &str = "application/octet-stream";
pub const DEFAULT_PENDING_BATCHES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub session_id: String,
    pub t0: u64,
    pub metrics: Vec<String>,
    pub units: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("batch has no header line")]
    MissingHeader,
    #[error("bad header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("truncated or corrupt body")]
    Corrupt,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(buf: &[u8], pos: &mut usize) -> Result<u64, CodecError> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *buf.get(*pos).ok_or(CodecError::Corrupt)?;
        *pos += 1;
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(CodecError::Corrupt)
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

pub fn encode_batch(session_id: &str, series: &[MetricSeries]) -> Vec<u8> {
    let t0 = series
        .iter()
        .filter_map(|s| s.points.first().map(|p| p.0))
        .min()
        .unwrap_or(0);
    let header = BatchHeader {
        session_id: session_id.to_string(),
        t0,
        metrics: series.iter().map(|s| s.name.clone()).collect(),
        units: series.iter().map(|s| s.unit.clone()).collect(),
    };
    let mut body = Vec::new();
    for s in series {
        put_varint(&mut body, s.points.len() as u64);
        let mut prev_t = t0;
        let mut prev_bits = 0u64;
        for &(t, v) in &s.points {
            put_varint(&mut body, zigzag(t.wrapping_sub(prev_t) as i64));
            put_varint(&mut body, v.to_bits() ^ prev_bits);
            prev_t = t;
            prev_bits = v.to_bits();
        }
    }
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    let mut enc = DeflateEncoder::new(out, Compression::default());
    enc.write_all(&body).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

pub fn decode_batch(bytes: &[u8]) -> Result<(BatchHeader, Vec<MetricSeries>), CodecError> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or(CodecError::MissingHeader)?;
    let header: BatchHeader = serde_json::from_slice(&bytes[..nl])?;
    let mut body = Vec::new();
    DeflateDecoder::new(&bytes[nl + 1..]).read_to_end(&mut body)?;
    let mut pos = 0;
    let mut series = Vec::with_capacity(header.metrics.len());
    for (i, name) in header.metrics.iter().enumerate() {
        let n = get_varint(&body, &mut pos)? as usize;
        let mut s = MetricSeries::new(name, header.units.get(i).map(String::as_str).unwrap_or(""));
        let mut prev_t = header.t0;
        let mut prev_bits = 0u64;
        for _ in 0..n {
            let t = prev_t.wrapping_add(unzigzag(get_varint(&body, &mut pos)?) as u64);
            let bits = get_varint(&body, &mut pos)? ^ prev_bits;
            s.points.push((t, f64::from_bits(bits)));
            prev_t = t;
            prev_bits = bits;
        }
        series.push(s);
    }
    if pos != body.len() {
        return Err(CodecError::Corrupt);
    }
    Ok((header, series))
}

/// Transport for encoded batches.
pub trait StatsSink: Send + Sync {
    fn post(&self, url: &str, content_type: &str, body: &[u8]) -> Result<(), String>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SinkError {
    #[error("sink unreachable ({reason}); {buffered} batches buffered for retry")]
    SinkUnreachable { reason: String, buffered: usize },
}

/// Sends batches, holding failed ones (oldest dropped past `capacity`)
/// until the sink comes back.
pub struct StatsForwarder {
    sink: Box<dyn StatsSink>,
    pending: Mutex<VecDeque<Vec<u8>>>,
    capacity: usize,
    dropped: Mutex<u64>,
}

impl StatsForwarder {
    pub fn new(sink: Box<dyn StatsSink>, capacity: usize) -> Self {
        StatsForwarder {
            sink,
            pending: Mutex::new(VecDeque::new()),
            capacity: capacity.max(1),
            dropped: Mutex::new(0),
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.lock().len()
    }

    pub fn dropped(&self) -> u64 {
        *self.dropped.lock()
    }

    /// Encodes every series of the session and posts it; returns the size
    /// of the batch written.
    pub fn compress_and_send(
        &self,
        store: &StatsStore,
        session_id: &str,
        url: &str,
    ) -> Result<usize, SinkError> {
        let batch = encode_batch(session_id, &store.all_series(session_id));
        self.send(url, batch)
    }

    pub fn send(&self, url: &str, batch: Vec<u8>) -> Result<usize, SinkError> {
        let size = batch.len();
        let mut pending = self.pending.lock();
        if pending.len() == self.capacity {
            pending.pop_front();
            *self.dropped.lock() += 1;
        }
        pending.push_back(batch);
        while let Some(next) = pending.front() {
            if let Err(reason) = self.sink.post(url, SINK_CONTENT_TYPE, next) {
                return Err(SinkError::SinkUnreachable {
                    reason,
                    buffered: pending.len(),
                });
            }
            pending.pop_front();
        }
        Ok(size)
    }
}
