use std::io::{self, BufReader};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{read_frame, send, Frame, Request, Response, MAX_FRAME};
use super::Teacher;
use crate::error::{Error, TeacherError};
use crate::tensor::{FeatureMap, ProbabilityMap};

/// Blocking client for a remote teacher. One request in flight at a time;
/// the connection is opened lazily and re-opened after any transport error.
pub struct RemoteTeacher {
    host: String,
    port: u16,
    timeout: Duration,
    conn: Option<(BufReader<TcpStream>, TcpStream)>,
    next_id: u64,
}

impl RemoteTeacher {
    pub fn new(host: impl Into<String>, port: u16, timeout_ms: u64) -> Self {
        Self {
            host: host.into(),
            port,
            timeout: Duration::from_millis(timeout_ms.max(1)),
            conn: None,
            next_id: 0,
        }
    }

    fn timeout_ms(&self) -> u64 {
        self.timeout.as_millis() as u64
    }

    /// Connects, retrying until `deadline`. An unreachable endpoint is
    /// reported as a timeout.
    fn connect(&mut self, deadline: Instant) -> Result<(), TeacherError> {
        if self.conn.is_some() {
            return Ok(());
        }
        let addrs: Vec<_> = (self.host.as_str(), self.port).to_socket_addrs()?.collect();
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Err(TeacherError::Timeout(self.timeout_ms()));
            }
            for addr in &addrs {
                if let Ok(stream) = TcpStream::connect_timeout(addr, deadline - now) {
                    stream.set_nodelay(true)?;
                    let reader = BufReader::new(stream.try_clone()?);
                    self.conn = Some((reader, stream));
                    return Ok(());
                }
            }
            thread::sleep(Duration::from_millis(10).min(deadline.saturating_duration_since(Instant::now())));
        }
    }

    fn round_trip(&mut self, request: &Request, deadline: Instant) -> Result<Vec<u8>, TeacherError> {
        self.connect(deadline)?;
        let timeout_ms = self.timeout_ms();
        let (reader, stream) = self.conn.as_mut().expect("connected above");
        let remaining = deadline
            .saturating_duration_since(Instant::now())
            .max(Duration::from_millis(1));
        stream.set_write_timeout(Some(remaining))?;
        stream.set_read_timeout(Some(remaining))?;
        let result = send(stream, request).and_then(|()| read_frame(reader, MAX_FRAME));
        match result {
            Ok(Frame::Body(body)) => Ok(body),
            Ok(Frame::Oversize(len)) => {
                self.conn = None;
                Err(TeacherError::Malformed(format!("{len}-byte response exceeds frame limit")))
            }
            Ok(Frame::Eof) => {
                self.conn = None;
                Err(TeacherError::Io(io::ErrorKind::UnexpectedEof.into()))
            }
            Err(e) => {
                self.conn = None;
                match e.kind() {
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => Err(TeacherError::Timeout(timeout_ms)),
                    _ => Err(TeacherError::Io(e)),
                }
            }
        }
    }
}

impl Teacher for RemoteTeacher {
    fn predict(&mut self, features: &FeatureMap) -> Result<ProbabilityMap, TeacherError> {
        let deadline = Instant::now() + self.timeout;
        let request_id = self.next_id;
        self.next_id += 1;
        let (h, w) = (features.height(), features.width());
        let request = Request::Predict {
            request_id,
            h,
            w,
            d: features.channels(),
            features: features.as_slice().to_vec(),
        };
        let body = self.round_trip(&request, deadline)?;
        let response: Response =
            serde_json::from_slice(&body).map_err(|e| TeacherError::Malformed(e.to_string()))?;
        match response {
            Response::Result {
                request_id: id,
                c,
                probs,
            } => {
                if id != request_id {
                    self.conn = None;
                    return Err(TeacherError::Malformed(format!(
                        "response id {id} does not match request {request_id}"
                    )));
                }
                ProbabilityMap::from_class_major(c, h, w, &probs).map_err(|e| match e {
                    Error::Simplex { pixel, .. } => TeacherError::SimplexViolation { pixel },
                    other => TeacherError::Malformed(other.to_string()),
                })
            }
            Response::Error { code, message, .. } => Err(TeacherError::Remote {
                code: code.as_str().to_string(),
                message,
            }),
        }
    }
}
