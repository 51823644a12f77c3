//! Binary request/response framing with external segmenter processes.
//!
//! All integers are u32 little-endian and all samples f32 little-endian.
//!
//! ```text
//! engine  -> backend   "DWP1" | patch | n_frames | n_classes
//! backend -> engine    "DWP1" | version (= 1)
//! engine  -> backend   id | payload bytes | patch volume (x fastest, then y, then t)
//! backend -> engine    id | payload bytes | probabilities (class fastest, then x, then y)
//! engine  -> backend   0xFFFFFFFF | 0      (shutdown)
//! ```

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::error::{BackendError, Error, Result};
use crate::patching::PatchView;

use super::{ExternalParams, PatchSegmenter};

pub const MAGIC: [u8; 4] = *b"DWP1";
pub const PROTOCOL_VERSION: u32 = 1;
pub const SHUTDOWN_ID: u32 = 0xFFFF_FFFF;
pub const N_CLASSES: u32 = 3;

/// Refuse frames above this size instead of allocating for them.
const MAX_FRAME_BYTES: u32 = 1 << 28;

pub fn encode_handshake(patch: u32, n_frames: u32, n_classes: u32) -> Vec<u8> {
    let mut b = MAGIC.to_vec();
    for v in [patch, n_frames, n_classes] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

pub fn encode_handshake_reply(version: u32) -> Vec<u8> {
    let mut b = MAGIC.to_vec();
    b.extend_from_slice(&version.to_le_bytes());
    b
}

fn encode_frame(id: u32, count: usize, samples: impl Iterator<Item = f32>) -> Vec<u8> {
    let n = count * 4;
    let mut b = Vec::with_capacity(8 + n);
    b.extend_from_slice(&id.to_le_bytes());
    b.extend_from_slice(&(n as u32).to_le_bytes());
    for v in samples {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

pub fn encode_request(id: u32, volume: &[f32]) -> Vec<u8> {
    encode_frame(id, volume.len(), volume.iter().copied())
}

pub fn encode_response(id: u32, probs: &[[f32; 3]]) -> Vec<u8> {
    encode_frame(id, probs.len() * 3, probs.iter().flatten().copied())
}

pub fn encode_shutdown() -> Vec<u8> {
    encode_frame(SHUTDOWN_ID, 0, std::iter::empty())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

/// Reads one `id | len | payload` frame. `Ok(None)` on a clean end of stream
/// before the frame starts.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<(u32, Vec<u8>)>> {
    let mut head = [0u8; 4];
    match r.read_exact(&mut head) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let id = u32::from_le_bytes(head);
    let len = read_u32(r)?;
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(Some((id, payload)))
}

enum Incoming {
    Hello([u8; 4], u32),
    Frame(u32, Vec<u8>),
    Closed,
}

fn reader_loop(stdout: ChildStdout, tx: Sender<Incoming>) {
    let mut r = BufReader::new(stdout);
    let mut magic = [0u8; 4];
    let hello = r.read_exact(&mut magic).and_then(|_| read_u32(&mut r));
    match hello {
        Ok(v) => {
            if tx.send(Incoming::Hello(magic, v)).is_err() {
                return;
            }
        }
        Err(_) => {
            let _ = tx.send(Incoming::Closed);
            return;
        }
    }
    loop {
        match read_frame(&mut r) {
            Ok(Some((id, p))) => {
                if tx.send(Incoming::Frame(id, p)).is_err() {
                    return;
                }
            }
            Ok(None) | Err(_) => {
                let _ = tx.send(Incoming::Closed);
                return;
            }
        }
    }
}

fn writer_loop(stdin: ChildStdin, rx: Receiver<Vec<u8>>) {
    let mut w = BufWriter::new(stdin);
    for buf in rx {
        if w.write_all(&buf).and_then(|_| w.flush()).is_err() {
            return;
        }
    }
}

/// Engine side of one backend process.
pub struct ExternalSegmenter {
    model_id: u32,
    timeout: Duration,
    n_frames: usize,
    child: Child,
    to_backend: Option<Sender<Vec<u8>>>,
    from_backend: Receiver<Incoming>,
    threads: Vec<JoinHandle<()>>,
    patch: Option<usize>,
    next_id: u32,
    done: bool,
}

impl ExternalSegmenter {
    pub fn spawn(model_id: u32, params: &ExternalParams, n_frames: usize) -> Result<Self> {
        let fail = |e: BackendError| Error::Backend { model_id, source: e };
        let (prog, args) =
            params.command.split_first().ok_or_else(|| fail(BackendError::Handshake("empty command".into())))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail(BackendError::Spawn(e)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (wtx, wrx) = mpsc::channel();
        let (rtx, rrx) = mpsc::channel();
        let threads =
            vec![thread::spawn(move || writer_loop(stdin, wrx)), thread::spawn(move || reader_loop(stdout, rtx))];
        Ok(Self {
            model_id,
            timeout: params.timeout,
            n_frames,
            child,
            to_backend: Some(wtx),
            from_backend: rrx,
            threads,
            patch: None,
            next_id: 0,
            done: false,
        })
    }

    fn err(&self, e: BackendError) -> Error {
        Error::Backend { model_id: self.model_id, source: e }
    }

    fn send(&mut self, buf: Vec<u8>) -> Result<()> {
        let ok = self.to_backend.as_ref().is_some_and(|tx| tx.send(buf).is_ok());
        if ok {
            Ok(())
        } else {
            Err(self.terminated())
        }
    }

    fn wait_exit(&mut self, limit: Duration) -> Option<ExitStatus> {
        let start = Instant::now();
        loop {
            match self.child.try_wait() {
                Ok(Some(s)) => return Some(s),
                Ok(None) if start.elapsed() < limit => thread::sleep(Duration::from_millis(5)),
                _ => return None,
            }
        }
    }

    /// Error for a backend that stopped talking: its exit code when it exited
    /// with one, otherwise "terminated".
    fn terminated(&mut self) -> Error {
        self.done = true;
        let status = self.wait_exit(Duration::from_secs(2));
        match status.and_then(|s| s.code()) {
            Some(c) if c != 0 => self.err(BackendError::NonZeroExit(c)),
            _ => self.err(BackendError::Terminated),
        }
    }

    fn receive(&mut self) -> Result<Incoming> {
        match self.from_backend.recv_timeout(self.timeout) {
            Ok(Incoming::Closed) | Err(RecvTimeoutError::Disconnected) => Err(self.terminated()),
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(self.err(BackendError::Timeout(self.timeout)))
            }
        }
    }

    fn handshake(&mut self, patch: usize) -> Result<()> {
        self.send(encode_handshake(patch as u32, self.n_frames as u32, N_CLASSES))?;
        match self.receive()? {
            Incoming::Hello(magic, version) => {
                if magic != MAGIC {
                    self.kill();
                    return Err(self.err(BackendError::Handshake(format!("bad magic {magic:?}"))));
                }
                if version != PROTOCOL_VERSION {
                    self.kill();
                    return Err(self.err(BackendError::VersionMismatch(version)));
                }
            }
            Incoming::Frame(..) | Incoming::Closed => {
                self.kill();
                return Err(self.err(BackendError::Handshake("no handshake reply".into())));
            }
        }
        self.patch = Some(patch);
        Ok(())
    }

    fn kill(&mut self) {
        self.done = true;
        self.to_backend = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl PatchSegmenter for ExternalSegmenter {
    fn predict(&mut self, window: &PatchView<'_>, out: &mut Vec<[f32; 3]>) -> Result<()> {
        if self.done {
            return Err(self.err(BackendError::Terminated));
        }
        if window.n_frames() != self.n_frames {
            return Err(Error::mismatch("window length differs from the backend handshake"));
        }
        match self.patch {
            None => self.handshake(window.size)?,
            Some(p) if p != window.size => {
                return Err(Error::mismatch("window size differs from the backend handshake"));
            }
            Some(_) => {}
        }
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1) % SHUTDOWN_ID;
        self.send(encode_request(id, &window.to_patch().data))?;

        let (rid, payload) = match self.receive()? {
            Incoming::Frame(rid, p) => (rid, p),
            _ => {
                self.kill();
                return Err(self.err(BackendError::Handshake("unexpected handshake reply".into())));
            }
        };
        if rid != id {
            self.kill();
            return Err(self.err(BackendError::IdMismatch { expected: id, found: rid }));
        }
        let n = window.size * window.size;
        let expected = n * 3 * 4;
        if payload.len() != expected {
            self.kill();
            return Err(self.err(BackendError::ShapeMismatch { expected, found: payload.len() }));
        }
        let flat = decode_f32s(&payload);
        out.clear();
        out.reserve(n);
        for (i, c) in flat.chunks_exact(3).enumerate() {
            let ok = c.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
            let s: f64 = c.iter().map(|&v| v as f64).sum();
            if !ok || (s - 1.0).abs() > 1e-4 {
                self.kill();
                return Err(self.err(BackendError::InvalidResponse(format!("pixel {i}: {c:?}"))));
            }
            out.push([(c[0] as f64 / s) as f32, (c[1] as f64 / s) as f32, (c[2] as f64 / s) as f32]);
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if self.done {
            return Ok(());
        }
        self.done = true;
        // a backend that was never handshaken still gets a clean shutdown
        let _ = self.to_backend.as_ref().map(|tx| tx.send(encode_shutdown()));
        self.to_backend = None;
        match self.wait_exit(self.timeout) {
            Some(s) => match s.code() {
                Some(0) => Ok(()),
                Some(c) => Err(self.err(BackendError::NonZeroExit(c))),
                None => Err(self.err(BackendError::Terminated)),
            },
            None => {
                self.kill();
                Err(self.err(BackendError::Timeout(self.timeout)))
            }
        }
    }
}

impl Drop for ExternalSegmenter {
    fn drop(&mut self) {
        self.to_backend = None;
        if self.child.try_wait().ok().flatten().is_none() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Why a backend request loop ended.
#[derive(Debug, PartialEq, Eq)]
pub enum ServeEnd {
    Shutdown,
    /// Input closed without a shutdown request.
    Eof,
}

/// Backend side of the protocol: answers the handshake with `version`, then
/// calls `handler(volume, patch, n_frames)` for every request.
pub fn serve<R: Read, W: Write>(
    input: R,
    output: W,
    version: u32,
    mut handler: impl FnMut(&[f32], usize, usize) -> Result<Vec<[f32; 3]>>,
) -> Result<ServeEnd> {
    let mut r = BufReader::new(input);
    let mut w = BufWriter::new(output);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::MalformedHeader(format!("handshake magic {magic:?}")));
    }
    let patch = read_u32(&mut r)? as usize;
    let n_frames = read_u32(&mut r)? as usize;
    let n_classes = read_u32(&mut r)?;
    if n_classes != N_CLASSES {
        return Err(Error::invalid(format!("{n_classes} classes requested")));
    }
    w.write_all(&encode_handshake_reply(version))?;
    w.flush()?;
    let expected = patch * patch * n_frames * 4;
    loop {
        let Some((id, payload)) = read_frame(&mut r)? else {
            return Ok(ServeEnd::Eof);
        };
        if id == SHUTDOWN_ID {
            return Ok(ServeEnd::Shutdown);
        }
        if payload.len() != expected {
            return Err(Error::TruncatedPayload { expected, found: payload.len() });
        }
        let probs = handler(&decode_f32s(&payload), patch, n_frames)?;
        w.write_all(&encode_response(id, &probs))?;
        w.flush()?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_bytes() {
        assert_eq!(encode_handshake(64, 30, 3), [b'D', b'W', b'P', b'1', 64, 0, 0, 0, 30, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(encode_handshake_reply(1), [b'D', b'W', b'P', b'1', 1, 0, 0, 0]);
        assert_eq!(encode_request(7, &[1.0]), [7, 0, 0, 0, 4, 0, 0, 0, 0, 0, 0x80, 0x3f]);
        assert_eq!(encode_shutdown(), [0xff, 0xff, 0xff, 0xff, 0, 0, 0, 0]);
        let r = encode_response(2, &[[0.5, 0.25, 0.25]]);
        assert_eq!(&r[..8], &[2, 0, 0, 0, 12, 0, 0, 0]);
        assert_eq!(decode_f32s(&r[8..]), vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn serve_answers_until_shutdown() {
        let mut input = encode_handshake(1, 2, 3);
        input.extend(encode_request(0, &[0.5, 0.7]));
        input.extend(encode_request(1, &[0.1, 0.2]));
        input.extend(encode_shutdown());
        let mut out = Vec::new();
        let end = serve(&input[..], &mut out, 1, |v, p, t| {
            assert_eq!((p, t), (1, 2));
            Ok(vec![[1.0 - v[0], v[0], 0.0]])
        })
        .unwrap();
        assert_eq!(end, ServeEnd::Shutdown);
        let mut expect = encode_handshake_reply(1);
        expect.extend(encode_response(0, &[[0.5, 0.5, 0.0]]));
        expect.extend(encode_response(1, &[[0.9, 0.1, 0.0]]));
        assert_eq!(out, expect);
    }

    #[test]
    fn serve_rejects_short_payload() {
        let mut input = encode_handshake(2, 1, 3);
        input.extend(encode_request(0, &[0.5]));
        let r = serve(&input[..], Vec::new(), 1, |_, _, _| Ok(vec![]));
        assert!(matches!(r, Err(Error::TruncatedPayload { expected: 16, found: 4 })));
    }

    #[test]
    fn serve_reports_eof() {
        let input = encode_handshake(2, 1, 3);
        assert_eq!(serve(&input[..], Vec::new(), 1, |_, _, _| Ok(vec![])).unwrap(), ServeEnd::Eof);
    }
}
