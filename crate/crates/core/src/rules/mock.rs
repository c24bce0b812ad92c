//! In-process stand-in for an external predictive service, speaking the same
//! wire protocol as [`super::external`]. Responses are pure functions of the
//! request.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::external::{ContextResponses, Handshake, Request, Response, Task, PROTOCOL_VERSION};
use crate::special::norm_cdf;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockBehavior {
    /// Fixed class probabilities regardless of context.
    Constant { probs: Vec<f64> },
    /// `p(1) = 0.5 + 1/(i + 2)` for a context of `i` rows.
    Drifting,
    /// `p(1) = (a + ones) / (a + b + i)`.
    BetaBernoulli { a: f64, b: f64 },
    /// Unit-variance normal around the context mean, discretized on
    /// `bins` equal bins spanning `mean +- half_width`.
    GaussianGrid { bins: usize, half_width: f64 },
    /// Class probabilities that sum to 0.8.
    MalformedSum,
    /// Grid whose edges are not ascending.
    MalformedEdges,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    pub behavior: MockBehavior,
    #[serde(default = "default_max_context")]
    pub max_context: usize,
    /// Answer each batch of pipelined requests in reverse order.
    #[serde(default)]
    pub reverse_batches: bool,
}

fn default_max_context() -> usize {
    10_000
}

impl MockConfig {
    pub fn new(behavior: MockBehavior) -> Self {
        Self { behavior, max_context: default_max_context(), reverse_batches: false }
    }
}

pub fn respond(config: &MockConfig, request: &Request) -> Response {
    let id = request.id;
    let n = request.context.y.len();
    if n > config.max_context {
        return Response::error(id, format!("context of {n} rows exceeds {}", config.max_context));
    }
    if request.context.x.len() != n {
        return Response::error(id, "context x and y differ in length");
    }
    let classification = request.task == Task::Classification;
    match (&config.behavior, classification) {
        (MockBehavior::Constant { probs }, true) => Response::categorical(id, probs.clone()),
        (MockBehavior::Drifting, true) => {
            let p = 0.5 + 1.0 / (n as f64 + 2.0);
            Response::categorical(id, vec![1.0 - p, p])
        }
        (MockBehavior::BetaBernoulli { a, b }, true) => {
            let ones = match &request.context.y {
                ContextResponses::Classes(v) => v.iter().filter(|&&k| k == 1).count(),
                ContextResponses::Values(v) => v.iter().filter(|&&k| k == 1.0).count(),
            };
            let p = (a + ones as f64) / (a + b + n as f64);
            Response::categorical(id, vec![1.0 - p, p])
        }
        (MockBehavior::GaussianGrid { bins, half_width }, false) => {
            let mean = match &request.context.y {
                ContextResponses::Values(v) if !v.is_empty() => v.iter().sum::<f64>() / v.len() as f64,
                ContextResponses::Classes(v) if !v.is_empty() => {
                    v.iter().map(|&k| k as f64).sum::<f64>() / v.len() as f64
                }
                _ => 0.0,
            };
            let bins = (*bins).max(1);
            let edges: Vec<f64> = (0..=bins)
                .map(|k| mean - half_width + 2.0 * half_width * k as f64 / bins as f64)
                .collect();
            let mass: Vec<f64> = edges.windows(2).map(|w| norm_cdf(w[1] - mean) - norm_cdf(w[0] - mean)).collect();
            let total: f64 = mass.iter().sum();
            Response::grid(id, edges, mass.iter().map(|m| m / total).collect())
        }
        (MockBehavior::MalformedSum, _) => Response::categorical(id, vec![0.4, 0.4]),
        (MockBehavior::MalformedEdges, _) => Response::grid(id, vec![0.0, 2.0, 1.0], vec![0.5, 0.5]),
        (behavior, _) => Response::error(id, format!("{behavior:?} does not serve {:?}", request.task)),
    }
}

fn respond_line(config: &MockConfig, line: &str) -> String {
    let response = match serde_json::from_str::<Request>(line.trim()) {
        Ok(request) => respond(config, &request),
        Err(e) => Response::error(0, format!("malformed request: {e}")),
    };
    serde_json::to_string(&response).expect("responses serialize")
}

fn handle_connection(stream: TcpStream, config: &MockConfig) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut reader = BufReader::new(stream);
    let handshake = Handshake { protocol: PROTOCOL_VERSION, max_context: config.max_context };
    serde_json::to_writer(&mut writer, &handshake)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let mut batch = vec![line];
        // everything already buffered counts as one pipelined batch
        while reader.buffer().contains(&b'\n') {
            let mut next = String::new();
            reader.read_line(&mut next)?;
            batch.push(next);
        }
        let mut replies: Vec<String> = batch.iter().map(|l| respond_line(config, l)).collect();
        if config.reverse_batches {
            replies.reverse();
        }
        for reply in replies {
            writer.write_all(reply.as_bytes())?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
    }
}

/// Accepts connections until `shutdown` is set, one thread per connection.
pub fn serve(listener: TcpListener, config: MockConfig, shutdown: Arc<AtomicBool>) -> io::Result<()> {
    let config = Arc::new(config);
    for stream in listener.incoming() {
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(_) => continue,
        };
        let config = Arc::clone(&config);
        std::thread::spawn(move || {
            let _ = handle_connection(stream, &config);
        });
    }
    Ok(())
}

/// Mock service on an ephemeral loopback port, stopped on drop.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn spawn(config: MockConfig) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            let _ = serve(listener, config, flag);
        });
        Ok(Self { addr, shutdown, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}
