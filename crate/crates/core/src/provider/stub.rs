//! Scripted loopback HTTP server speaking the instruction wire format.
//! Used by tests and the offline examples; not meant for production.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::{FetchRequest, FetchResponse};

/// What to answer for one request. The last entry of a script repeats.
#[derive(Clone, Debug)]
pub enum Reply {
    /// Bare status with an empty body.
    Status(u16),
    /// 200 with `{sample_id: <from request>, text}`.
    Echo(String),
    /// Like `Echo`, after a pause.
    Delayed(Duration, String),
}

#[derive(Default)]
struct Shared {
    hits: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    requests: Mutex<Vec<FetchRequest>>,
    stop: AtomicBool,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<Reply>) -> Self {
        assert!(!script.is_empty(), "stub needs at least one reply");
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().expect("local addr");
        let shared = Arc::new(Shared::default());
        let s = Arc::clone(&shared);
        let handle = std::thread::spawn(move || {
            let mut workers = Vec::new();
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let n = s.hits.fetch_add(1, Ordering::SeqCst);
                let reply = script[n.min(script.len() - 1)].clone();
                let s = Arc::clone(&s);
                workers.push(std::thread::spawn(move || {
                    let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    s.max_in_flight.fetch_max(now, Ordering::SeqCst);
                    let _ = serve(stream, &reply, &s);
                    s.in_flight.fetch_sub(1, Ordering::SeqCst);
                }));
            }
            for w in workers {
                let _ = w.join();
            }
        });
        Self {
            addr,
            shared,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}/instruction", self.addr)
    }

    /// Connections accepted so far.
    pub fn hits(&self) -> usize {
        self.shared.hits.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<FetchRequest> {
        self.shared.requests.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, reply: &Reply, shared: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let req: Option<FetchRequest> = serde_json::from_slice(&body).ok();
    if let Some(r) = &req {
        shared.requests.lock().unwrap().push(r.clone());
    }
    let sample_id = req.map(|r| r.sample_id).unwrap_or_default();
    let (status, payload) = match reply {
        Reply::Status(code) => (*code, String::new()),
        Reply::Echo(text) => (200, echo(sample_id, text)),
        Reply::Delayed(pause, text) => {
            std::thread::sleep(*pause);
            (200, echo(sample_id, text))
        }
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}

fn echo(sample_id: String, text: &str) -> String {
    serde_json::to_string(&FetchResponse {
        sample_id,
        text: text.to_string(),
    })
    .expect("serializable")
}
