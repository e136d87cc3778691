//! Packet sources and sinks.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{Action, Verdict};
use crate::frame::{PacketFrame, FRAME_LEN};
use crate::trace::{write_trace, TraceError, TraceRecord};

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("sink closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

pub trait PacketSource {
    /// Copies the next frame into `buf`. Returns `false` once exhausted.
    fn recv(&mut self, buf: &mut Vec<u8>) -> bool;
}

pub trait PacketSink {
    fn emit(&mut self, frame: &[u8], action: &Action) -> Result<(), SinkError>;
}

/// Preloaded frames delivered in order, optionally wrapping around.
pub struct RingSource {
    frames: Vec<Vec<u8>>,
    pos: usize,
    remaining: u64,
}

impl RingSource {
    pub fn new(frames: Vec<Vec<u8>>) -> Self {
        let remaining = frames.len() as u64;
        RingSource {
            frames,
            pos: 0,
            remaining,
        }
    }

    pub fn from_frames(frames: &[PacketFrame]) -> Self {
        Self::new(frames.iter().map(|f| f.as_ref().to_vec()).collect())
    }

    /// Delivers `total` frames, wrapping around the ring as needed.
    pub fn cycled(mut self, total: u64) -> Self {
        self.remaining = if self.frames.is_empty() { 0 } else { total };
        self
    }
}

impl PacketSource for RingSource {
    #[inline]
    fn recv(&mut self, buf: &mut Vec<u8>) -> bool {
        if self.remaining == 0 {
            return false;
        }
        buf.clear();
        buf.extend_from_slice(&self.frames[self.pos]);
        self.pos = (self.pos + 1) % self.frames.len();
        self.remaining -= 1;
        true
    }
}

/// Replays trace records, holding each one back until its emit time.
///
/// Waiting is a spin on the monotonic clock; with `yield_while_waiting`
/// the spin yields the CPU on every iteration so that other contexts on
/// the same core keep running.
pub struct PacedSource {
    records: Vec<TraceRecord>,
    pos: usize,
    paced: bool,
    yield_while_waiting: bool,
    start: Option<Instant>,
}

impl PacedSource {
    pub fn new(records: Vec<TraceRecord>, paced: bool) -> Self {
        PacedSource {
            records,
            pos: 0,
            paced,
            yield_while_waiting: true,
            start: None,
        }
    }

    pub fn yield_while_waiting(mut self, yes: bool) -> Self {
        self.yield_while_waiting = yes;
        self
    }
}

impl PacketSource for PacedSource {
    fn recv(&mut self, buf: &mut Vec<u8>) -> bool {
        let Some(rec) = self.records.get(self.pos) else {
            return false;
        };
        if self.paced {
            let base = self.records[0].emit_time_ns;
            let start = *self.start.get_or_insert_with(Instant::now);
            let due = start + Duration::from_nanos(rec.emit_time_ns - base);
            while Instant::now() < due {
                if self.yield_while_waiting {
                    std::thread::yield_now();
                } else {
                    std::hint::spin_loop();
                }
            }
        }
        buf.clear();
        buf.extend_from_slice(rec.frame.as_ref());
        self.pos += 1;
        true
    }
}

/// Receives 1088-byte datagrams until `idle_timeout` passes with no traffic.
pub struct UdpSource {
    socket: UdpSocket,
    scratch: Vec<u8>,
}

impl UdpSource {
    pub fn bind(addr: SocketAddr, idle_timeout: Duration) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(idle_timeout))?;
        Ok(UdpSource {
            socket,
            scratch: vec![0u8; 2 * FRAME_LEN],
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }
}

impl PacketSource for UdpSource {
    fn recv(&mut self, buf: &mut Vec<u8>) -> bool {
        match self.socket.recv(&mut self.scratch) {
            Ok(n) => {
                buf.clear();
                buf.extend_from_slice(&self.scratch[..n]);
                true
            }
            Err(e) => {
                log::debug!("udp source stopping: {e}");
                false
            }
        }
    }
}

/// Discards frames, counting verdicts.
#[derive(Debug, Default)]
pub struct NullSink {
    pub forwarded: u64,
    pub dropped: u64,
}

impl PacketSink for NullSink {
    #[inline]
    fn emit(&mut self, _frame: &[u8], action: &Action) -> Result<(), SinkError> {
        match action.verdict {
            Verdict::Forward => self.forwarded += 1,
            Verdict::Drop => self.dropped += 1,
        }
        Ok(())
    }
}

/// Keeps every action and the bytes of forwarded frames.
#[derive(Debug, Default)]
pub struct CollectSink {
    pub actions: Vec<Action>,
    pub forwarded: Vec<Vec<u8>>,
}

impl PacketSink for CollectSink {
    fn emit(&mut self, frame: &[u8], action: &Action) -> Result<(), SinkError> {
        self.actions.push(*action);
        if action.verdict == Verdict::Forward {
            self.forwarded.push(frame.to_vec());
        }
        Ok(())
    }
}

/// Sends forwarded frames as raw datagrams; drops are not sent.
pub struct UdpSink {
    socket: UdpSocket,
    dest: SocketAddr,
}

impl UdpSink {
    pub fn connect(dest: SocketAddr) -> io::Result<Self> {
        let bind: SocketAddr = if dest.is_ipv4() {
            "0.0.0.0:0".parse().unwrap()
        } else {
            "[::]:0".parse().unwrap()
        };
        Ok(UdpSink {
            socket: UdpSocket::bind(bind)?,
            dest,
        })
    }
}

impl PacketSink for UdpSink {
    fn emit(&mut self, frame: &[u8], action: &Action) -> Result<(), SinkError> {
        if action.verdict == Verdict::Forward {
            self.socket.send_to(frame, self.dest)?;
        }
        Ok(())
    }
}

/// Collects forwarded well-formed frames and writes them as a trace on [`TraceSink::finish`].
pub struct TraceSink {
    path: PathBuf,
    start: Instant,
    records: Vec<TraceRecord>,
}

impl TraceSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TraceSink {
            path: path.into(),
            start: Instant::now(),
            records: Vec::new(),
        }
    }

    pub fn finish(self) -> Result<usize, SinkError> {
        write_trace(&self.path, &self.records)?;
        Ok(self.records.len())
    }
}

impl PacketSink for TraceSink {
    fn emit(&mut self, frame: &[u8], action: &Action) -> Result<(), SinkError> {
        if action.verdict == Verdict::Forward {
            if let Ok(frame) = PacketFrame::from_bytes(frame) {
                self.records.push(TraceRecord {
                    emit_time_ns: self.start.elapsed().as_nanos() as u64,
                    frame,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::build_frame;

    fn recs(n: usize, gap: u64) -> Vec<TraceRecord> {
        (0..n)
            .map(|i| TraceRecord {
                emit_time_ns: i as u64 * gap,
                frame: build_frame(i as u32, &[i as u8; 1024], [0; 8]).unwrap(),
            })
            .collect()
    }

    #[test]
    fn ring_preserves_order_and_wraps() {
        let mut src = RingSource::new(vec![vec![1], vec![2], vec![3]]).cycled(5);
        let mut buf = Vec::new();
        let mut seen = Vec::new();
        while src.recv(&mut buf) {
            seen.push(buf[0]);
        }
        assert_eq!(seen, vec![1, 2, 3, 1, 2]);
    }

    #[test]
    fn paced_source_honours_schedule() {
        let mut src = PacedSource::new(recs(5, 200_000), true);
        let mut buf = Vec::new();
        let t0 = Instant::now();
        let mut n = 0;
        while src.recv(&mut buf) {
            assert_eq!(PacketFrame::from_bytes(&buf).unwrap().slot_id(), n);
            n += 1;
        }
        assert_eq!(n, 5);
        assert!(t0.elapsed() >= Duration::from_micros(800));
    }

    #[test]
    fn udp_loopback() {
        let mut src = UdpSource::bind("127.0.0.1:0".parse().unwrap(), Duration::from_millis(200)).unwrap();
        let mut sink = UdpSink::connect(src.local_addr().unwrap()).unwrap();
        let f = build_frame(1, &[7; 1024], [0; 8]).unwrap();
        let fwd = Action {
            verdict: Verdict::Forward,
            reason: super::super::Reason::Inference,
        };
        let drop = Action {
            verdict: Verdict::Drop,
            ..fwd
        };
        sink.emit(f.as_ref(), &drop).unwrap();
        sink.emit(f.as_ref(), &fwd).unwrap();
        let mut buf = Vec::new();
        assert!(src.recv(&mut buf));
        assert_eq!(buf.as_slice(), f.as_ref());
        assert!(!src.recv(&mut buf));
    }
}
