//! Moving envelopes between two processes.
//!
//! Messages strictly alternate between the parties, so both ends number them
//! with the same counter. In a shared directory message `n` is written to
//! `msg-NN-name` and announced by an empty `msg-NN-name.ready` created after
//! the payload is complete. Over a socket each envelope is prefixed by its
//! length as a u64 LE.

use std::fs;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// Largest envelope a peer may announce.
pub const MAX_FRAME: u64 = 1 << 30;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("timed out after {0:?} waiting for {1}")]
    Timeout(Duration, String),
    #[error("peer closed the connection")]
    Closed,
    #[error("frame of {0} bytes exceeds the limit")]
    Oversized(u64),
    #[error("{0}")]
    Io(#[from] io::Error),
}

pub trait Channel {
    /// Sends one envelope; `name` labels it in files and transcripts.
    fn send(&mut self, name: &str, bytes: &[u8]) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<Vec<u8>, TransportError>;
}

pub struct DirChannel {
    dir: PathBuf,
    seq: u32,
    timeout: Duration,
}

impl DirChannel {
    pub fn new(dir: impl Into<PathBuf>, timeout: Duration) -> Result<Self, TransportError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, seq: 0, timeout })
    }

    fn find_ready(&self, prefix: &str) -> Result<Option<PathBuf>, TransportError> {
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if name.starts_with(prefix) && name.ends_with(".ready") {
                return Ok(Some(self.dir.join(name.trim_end_matches(".ready"))));
            }
        }
        Ok(None)
    }
}

pub fn message_file_name(seq: u32, name: &str) -> String {
    format!("msg-{seq:02}-{name}")
}

impl Channel for DirChannel {
    fn send(&mut self, name: &str, bytes: &[u8]) -> Result<(), TransportError> {
        self.seq += 1;
        let path = self.dir.join(message_file_name(self.seq, name));
        fs::write(&path, bytes)?;
        let mut ready = path.into_os_string();
        ready.push(".ready");
        fs::write(ready, b"")?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Vec<u8>, TransportError> {
        self.seq += 1;
        let prefix = format!("msg-{:02}-", self.seq);
        let start = Instant::now();
        loop {
            if let Some(path) = self.find_ready(&prefix)? {
                return Ok(fs::read(path)?);
            }
            if start.elapsed() >= self.timeout {
                return Err(TransportError::Timeout(self.timeout, format!("{prefix}* in {}", self.dir.display())));
            }
            thread::sleep(POLL);
        }
    }
}

pub struct SocketChannel {
    stream: TcpStream,
    timeout: Duration,
}

impl SocketChannel {
    /// Waits for one peer on `addr`.
    pub fn listen(addr: &str, timeout: Duration) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let start = Instant::now();
        loop {
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    return Self::from_stream(stream, timeout);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if start.elapsed() >= timeout {
                        return Err(TransportError::Timeout(timeout, format!("a connection on {addr}")));
                    }
                    thread::sleep(POLL);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Connects to `addr`, retrying until the listener is up.
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, TransportError> {
        let start = Instant::now();
        loop {
            match TcpStream::connect(addr) {
                Ok(stream) => return Self::from_stream(stream, timeout),
                Err(e) if start.elapsed() >= timeout => {
                    return Err(TransportError::Timeout(timeout, format!("{addr} ({e})")));
                }
                Err(_) => thread::sleep(POLL),
            }
        }
    }

    fn from_stream(stream: TcpStream, timeout: Duration) -> Result<Self, TransportError> {
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self { stream, timeout })
    }
}

impl SocketChannel {
    fn map_read(&self, e: io::Error) -> TransportError {
        match e.kind() {
            io::ErrorKind::UnexpectedEof => TransportError::Closed,
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout(self.timeout, "a frame".into()),
            _ => e.into(),
        }
    }
}

impl Channel for SocketChannel {
    fn send(&mut self, _name: &str, bytes: &[u8]) -> Result<(), TransportError> {
        self.stream.write_all(&(bytes.len() as u64).to_le_bytes())?;
        self.stream.write_all(bytes)?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Vec<u8>, TransportError> {
        let mut len = [0u8; 8];
        self.stream.read_exact(&mut len).map_err(|e| self.map_read(e))?;
        let len = u64::from_le_bytes(len);
        if len > MAX_FRAME {
            return Err(TransportError::Oversized(len));
        }
        let mut buf = vec![0u8; len as usize];
        self.stream.read_exact(&mut buf).map_err(|e| self.map_read(e))?;
        Ok(buf)
    }
}

/// Wraps a channel and copies every envelope into `dir` as `msg-NN-name`,
/// whichever direction it travels.
pub struct Recorded<C> {
    inner: C,
    dir: PathBuf,
    seq: u32,
    name_of: fn(&[u8]) -> &'static str,
}

impl<C: Channel> Recorded<C> {
    /// `name_of` labels received envelopes, whose names do not travel.
    pub fn new(inner: C, dir: &Path, name_of: fn(&[u8]) -> &'static str) -> Result<Self, TransportError> {
        fs::create_dir_all(dir)?;
        Ok(Self { inner, dir: dir.to_path_buf(), seq: 0, name_of })
    }

    fn record(&mut self, name: &str, bytes: &[u8]) -> Result<(), TransportError> {
        self.seq += 1;
        fs::write(self.dir.join(message_file_name(self.seq, name)), bytes)?;
        Ok(())
    }
}

impl<C: Channel> Channel for Recorded<C> {
    fn send(&mut self, name: &str, bytes: &[u8]) -> Result<(), TransportError> {
        self.inner.send(name, bytes)?;
        self.record(name, bytes)
    }

    fn recv(&mut self) -> Result<Vec<u8>, TransportError> {
        let bytes = self.inner.recv()?;
        let name = (self.name_of)(&bytes);
        self.record(name, &bytes)?;
        Ok(bytes)
    }
}
