//! Threaded TCP teacher service.

use std::io::{self, BufReader, BufWriter};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::bayes_posterior;
use super::protocol::{read_frame, send, ErrorCode, Frame, Request, Response, MAX_FRAME};
use crate::domain::DomainSpec;
use crate::error::Result;
use crate::tensor::FeatureMap;

type Connections = Arc<Mutex<Vec<(TcpStream, JoinHandle<()>)>>>;

/// A running teacher service. Dropping it without [`TeacherServer::stop`]
/// leaves the threads running until the process exits.
pub struct TeacherServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    active: Arc<AtomicUsize>,
    accept: Option<JoinHandle<()>>,
    connections: Connections,
}

/// Serves the posterior of `source_spec` on `127.0.0.1:port` (0 picks a free port).
pub fn serve_teacher(source_spec: DomainSpec, port: u16) -> Result<TeacherServer> {
    TeacherServer::bind(source_spec, (Ipv4Addr::LOCALHOST, port))
}

impl TeacherServer {
    pub fn bind<A: ToSocketAddrs>(source_spec: DomainSpec, addr: A) -> Result<Self> {
        source_spec.validate()?;
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let spec = Arc::new(source_spec);
        let shutdown = Arc::new(AtomicBool::new(false));
        let active = Arc::new(AtomicUsize::new(0));
        let connections: Connections = Arc::default();

        let accept = {
            let (shutdown, active, connections) = (shutdown.clone(), active.clone(), connections.clone());
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let Ok(handle_stream) = stream.try_clone() else { continue };
                    active.fetch_add(1, Ordering::SeqCst);
                    let (spec, active) = (spec.clone(), active.clone());
                    let worker = thread::spawn(move || {
                        let _ = handle_connection(handle_stream, &spec);
                        active.fetch_sub(1, Ordering::SeqCst);
                    });
                    let mut conns = connections.lock().expect("connection list poisoned");
                    conns.retain(|(_, h)| !h.is_finished());
                    conns.push((stream, worker));
                }
            })
        };

        Ok(Self {
            addr,
            shutdown,
            active,
            accept: Some(accept),
            connections,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Connections currently being served.
    pub fn active_connections(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }

    /// Blocks until the accept loop exits (it only does on `stop`).
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Stops accepting, closes every open connection and joins all threads.
    pub fn stop(mut self) -> Result<()> {
        self.shutdown.store(true, Ordering::SeqCst);
        let mut wake = self.addr;
        if wake.ip().is_unspecified() {
            wake.set_ip(Ipv4Addr::LOCALHOST.into());
        }
        // Unblocks `incoming()`; the loop sees the flag and exits.
        let _ = TcpStream::connect(wake);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        let conns = std::mem::take(&mut *self.connections.lock().expect("connection list poisoned"));
        for (stream, worker) in conns {
            let _ = stream.shutdown(std::net::Shutdown::Both);
            let _ = worker.join();
        }
        Ok(())
    }
}

fn handle_connection(stream: TcpStream, spec: &DomainSpec) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let response = match read_frame(&mut reader, MAX_FRAME)? {
            Frame::Eof => return Ok(()),
            Frame::Oversize(len) => error_response(
                0,
                ErrorCode::Shape,
                format!("frame of {len} bytes exceeds the {MAX_FRAME}-byte limit"),
            ),
            Frame::Body(body) => answer(&body, spec),
        };
        send(&mut writer, &response)?;
    }
}

fn error_response(request_id: u64, code: ErrorCode, message: String) -> Response {
    Response::Error {
        request_id,
        code,
        message,
    }
}

fn answer(body: &[u8], spec: &DomainSpec) -> Response {
    let request: Request = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => {
            // Echo the id back when the frame is JSON but not a valid request.
            let id = serde_json::from_slice::<serde_json::Value>(body)
                .ok()
                .and_then(|v| v.get("request_id").and_then(|id| id.as_u64()))
                .unwrap_or(0);
            return error_response(id, ErrorCode::Decode, e.to_string());
        }
    };
    let Request::Predict {
        request_id,
        h,
        w,
        d,
        features,
    } = request;
    if d != spec.feature_dim || h == 0 || w == 0 {
        return error_response(
            request_id,
            ErrorCode::Shape,
            format!("expected d = {} and non-empty h×w, got {h}×{w}×{d}", spec.feature_dim),
        );
    }
    let features = match FeatureMap::new(h, w, d, features) {
        Ok(f) => f,
        Err(e) => return error_response(request_id, ErrorCode::Shape, e.to_string()),
    };
    match bayes_posterior(&features, spec) {
        Ok(q) => Response::Result {
            request_id,
            c: q.classes(),
            probs: q.to_class_major(),
        },
        Err(e) => error_response(request_id, ErrorCode::Internal, e.to_string()),
    }
}
