//! Minimal request/response transport between simulated entities.
//!
//! Entities register under their domain in an [`EndpointRegistry`] and are
//! called in-process. [`LoopbackServer`] exposes any endpoint over a real
//! localhost socket speaking a small subset of HTTP/1.1, so the same wire
//! formats can be exercised end to end.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{IpAddr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::RwLock;
use thiserror::Error;

/// Path at which every participating domain serves its certificate document.
pub const CERTIFICATE_PATH: &str = "/ads-chain.crt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

impl Method {
    fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: Method,
    /// Path including any query string, e.g. `/ad?slot=1&ac_tid=...`.
    pub target: String,
    pub body: String,
    /// Domain of the calling entity, when the caller is a known partner.
    pub from: Option<String>,
    /// Network address of the caller.
    pub remote_addr: Option<IpAddr>,
}

impl Request {
    pub fn get(target: impl Into<String>) -> Self {
        Self {
            method: Method::Get,
            target: target.into(),
            body: String::new(),
            from: None,
            remote_addr: None,
        }
    }

    pub fn post(target: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            method: Method::Post,
            target: target.into(),
            body: body.into(),
            from: None,
            remote_addr: None,
        }
    }

    pub fn from_partner(mut self, domain: impl Into<String>) -> Self {
        self.from = Some(domain.into());
        self
    }

    pub fn with_remote_addr(mut self, addr: IpAddr) -> Self {
        self.remote_addr = Some(addr);
        self
    }

    pub fn path(&self) -> &str {
        self.target.split_once('?').map_or(self.target.as_str(), |(p, _)| p)
    }

    pub fn query(&self) -> Option<&str> {
        self.target.split_once('?').map(|(_, q)| q)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: String,
}

impl Response {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn no_content() -> Self {
        Self {
            status: 204,
            body: String::new(),
        }
    }

    pub fn not_found() -> Self {
        Self {
            status: 404,
            body: "not found".into(),
        }
    }

    pub fn bad_request(reason: impl Into<String>) -> Self {
        Self {
            status: 400,
            body: reason.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown host {0:?}")]
    UnknownHost(String),
    #[error("{0} is unreachable: {1}")]
    Unreachable(String, String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub trait Endpoint: Send + Sync {
    fn handle(&self, request: &Request) -> Response;
}

impl<F> Endpoint for F
where
    F: Fn(&Request) -> Response + Send + Sync,
{
    fn handle(&self, request: &Request) -> Response {
        self(request)
    }
}

/// Domain-addressed set of in-process endpoints.
#[derive(Default)]
pub struct EndpointRegistry {
    endpoints: RwLock<HashMap<String, Arc<dyn Endpoint>>>,
}

impl EndpointRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, domain: impl Into<String>, endpoint: Arc<dyn Endpoint>) {
        self.endpoints.write().insert(domain.into(), endpoint);
    }

    pub fn unregister(&self, domain: &str) -> bool {
        self.endpoints.write().remove(domain).is_some()
    }

    pub fn contains(&self, domain: &str) -> bool {
        self.endpoints.read().contains_key(domain)
    }

    pub fn call(&self, domain: &str, request: &Request) -> Result<Response, NetError> {
        let endpoint = self
            .endpoints
            .read()
            .get(domain)
            .cloned()
            .ok_or_else(|| NetError::UnknownHost(domain.to_string()))?;
        Ok(endpoint.handle(request))
    }
}

impl std::fmt::Debug for EndpointRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut names: Vec<String> = self.endpoints.read().keys().cloned().collect();
        names.sort();
        f.debug_struct("EndpointRegistry").field("domains", &names).finish()
    }
}

/// Serves one endpoint on `127.0.0.1` until dropped.
pub struct LoopbackServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    pub fn start(endpoint: Arc<dyn Endpoint>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::Acquire) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let endpoint = endpoint.clone();
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, endpoint.as_ref());
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn protocol(msg: impl Into<String>) -> NetError {
    NetError::Protocol(msg.into())
}

/// Partner identity of the sending entity.
pub const FROM_HEADER: &str = "X-Adschain-From";
/// Client address the request is made on behalf of.
pub const FORWARDED_HEADER: &str = "X-Forwarded-For";

struct Message {
    start: String,
    headers: Vec<(String, String)>,
    body: String,
}

impl Message {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Reads a start line, headers and an optional `Content-Length` body.
fn read_message(reader: &mut impl BufRead) -> Result<Message, NetError> {
    let mut start = String::new();
    reader.read_line(&mut start).map_err(|e| protocol(e.to_string()))?;
    if start.is_empty() {
        return Err(protocol("connection closed before start line"));
    }
    let mut length = 0usize;
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).map_err(|e| protocol(e.to_string()))?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().map_err(|_| protocol("bad content-length"))?;
            }
            headers.push((name.trim().to_string(), value.trim().to_string()));
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).map_err(|e| protocol(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|_| protocol("body is not UTF-8"))?;
    Ok(Message {
        start: start.trim_end().to_string(),
        headers,
        body,
    })
}

fn serve_connection(stream: TcpStream, endpoint: &dyn Endpoint) -> Result<(), NetError> {
    let mut reader = BufReader::new(stream.try_clone().map_err(|e| protocol(e.to_string()))?);
    let message = read_message(&mut reader)?;
    let mut parts = message.start.split(' ');
    let method = match parts.next() {
        Some("GET") => Method::Get,
        Some("POST") => Method::Post,
        _ => return Err(protocol("unsupported method")),
    };
    let target = parts.next().ok_or_else(|| protocol("missing target"))?.to_string();
    let remote_addr = match message.header(FORWARDED_HEADER) {
        Some(v) => Some(v.parse().map_err(|_| protocol("bad forwarded address"))?),
        None => stream.peer_addr().ok().map(|a| a.ip()),
    };
    let from = message.header(FROM_HEADER).map(str::to_string);
    let response = endpoint.handle(&Request {
        method,
        target,
        body: message.body,
        from,
        remote_addr,
    });
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        response.body.len(),
        response.body
    )
    .map_err(|e| protocol(e.to_string()))?;
    let _ = out.shutdown(Shutdown::Write);
    Ok(())
}

/// Sends one request over a fresh connection to `addr`.
pub fn loopback_request(addr: SocketAddr, request: &Request, timeout: Duration) -> Result<Response, NetError> {
    let unreachable = |e: std::io::Error| NetError::Unreachable(addr.to_string(), e.to_string());
    let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(unreachable)?;
    stream.set_read_timeout(Some(timeout)).map_err(unreachable)?;
    let mut extra = String::new();
    if let Some(f) = &request.from {
        extra.push_str(&format!("{FROM_HEADER}: {f}\r\n"));
    }
    if let Some(a) = request.remote_addr {
        extra.push_str(&format!("{FORWARDED_HEADER}: {a}\r\n"));
    }
    write!(
        stream,
        "{} {} HTTP/1.1\r\nHost: {}\r\n{extra}Content-Length: {}\r\nConnection: close\r\n\r\n{}",
        request.method.as_str(),
        request.target,
        addr,
        request.body.len(),
        request.body
    )
    .map_err(unreachable)?;
    let mut reader = BufReader::new(stream);
    let message = read_message(&mut reader)?;
    let status = message
        .start
        .split(' ')
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| protocol("bad status line"))?;
    Ok(Response {
        status,
        body: message.body,
    })
}
