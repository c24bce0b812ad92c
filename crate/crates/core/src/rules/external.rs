//! Client for an external predictive service speaking newline-delimited JSON
//! over TCP. The service is stateless: every request carries the whole
//! conditioning context.
//!
//! On connect the server sends `{"protocol": 1, "max_context": n}`. Requests
//! are `{"id", "task", "context": {"x", "y"}, "query_x"}`; responses are
//! `{"id", "type": "categorical", "probs"}`, `{"id", "type": "grid", "edges",
//! "probs"}` or `{"id", "error"}`. Requests may be pipelined and answered in
//! any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{Observations, ResponseValue};

use super::{PredictedDistribution, RuleError};

pub const PROTOCOL_VERSION: u32 = 1;
/// Tolerance on the sum of returned probabilities.
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: u32,
    pub max_context: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextResponses {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl ContextResponses {
    pub fn len(&self) -> usize {
        match self {
            ContextResponses::Classes(v) => v.len(),
            ContextResponses::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub x: Vec<Vec<f64>>,
    pub y: ContextResponses,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub task: Task,
    pub context: Context,
    pub query_x: Vec<f64>,
}

#[derive(Serialize)]
struct ContextRef<'a> {
    x: Vec<&'a [f64]>,
    y: ContextResponses,
}

#[derive(Serialize)]
struct RequestRef<'a> {
    id: u64,
    task: Task,
    context: ContextRef<'a>,
    query_x: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn categorical(id: u64, probs: Vec<f64>) -> Self {
        Self { id, kind: Some("categorical".into()), edges: None, probs: Some(probs), error: None }
    }

    pub fn grid(id: u64, edges: Vec<f64>, probs: Vec<f64>) -> Self {
        Self { id, kind: Some("grid".into()), edges: Some(edges), probs: Some(probs), error: None }
    }

    pub fn error(id: u64, message: impl Into<String>) -> Self {
        Self { id, kind: None, edges: None, probs: None, error: Some(message.into()) }
    }

    fn into_distribution(self, task: Task, classes: Option<usize>) -> Result<PredictedDistribution, RuleError> {
        if let Some(message) = self.error {
            return Err(RuleError::Remote(message));
        }
        let dist = match (self.kind.as_deref(), task) {
            (Some("categorical"), Task::Classification) => PredictedDistribution::Categorical {
                probs: self.probs.ok_or_else(|| RuleError::Protocol("categorical response without probs".into()))?,
            },
            (Some("grid"), Task::Regression) => PredictedDistribution::Binned {
                edges: self.edges.ok_or_else(|| RuleError::Protocol("grid response without edges".into()))?,
                probs: self.probs.ok_or_else(|| RuleError::Protocol("grid response without probs".into()))?,
            },
            (kind, task) => {
                return Err(RuleError::Protocol(format!("response type {kind:?} for a {task:?} request")))
            }
        };
        dist.validate(PROBABILITY_TOLERANCE)?;
        if let (PredictedDistribution::Categorical { probs }, Some(k)) = (&dist, classes) {
            if probs.len() != k {
                return Err(RuleError::Protocol(format!("{} class probabilities for {k} classes", probs.len())));
            }
        }
        Ok(dist)
    }
}

/// One connection to a predictive service.
#[derive(Debug)]
pub struct ExternalClient {
    endpoint: String,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    max_context: usize,
    next_id: u64,
}

impl ExternalClient {
    pub fn connect(endpoint: &str) -> Result<Self, RuleError> {
        let stream = TcpStream::connect(endpoint)?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(RuleError::Protocol("connection closed before handshake".into()));
        }
        let handshake: Handshake = serde_json::from_str(line.trim())
            .map_err(|e| RuleError::Protocol(format!("bad handshake: {e}")))?;
        if handshake.protocol != PROTOCOL_VERSION {
            return Err(RuleError::Protocol(format!("unsupported protocol {}", handshake.protocol)));
        }
        Ok(Self {
            endpoint: endpoint.to_string(),
            reader,
            writer: BufWriter::new(stream),
            max_context: handshake.max_context,
            next_id: 1,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn max_context(&self) -> usize {
        self.max_context
    }

    pub fn predict(
        &mut self,
        task: Task,
        context: &Observations,
        query: &[f64],
    ) -> Result<PredictedDistribution, RuleError> {
        let mut out = self.predict_batch(task, &[(context, query)])?;
        Ok(out.pop().expect("one response per request"))
    }

    /// Sends every request before reading any response, then matches
    /// responses to requests by id.
    pub fn predict_batch(
        &mut self,
        task: Task,
        items: &[(&Observations, &[f64])],
    ) -> Result<Vec<PredictedDistribution>, RuleError> {
        let mut positions = HashMap::with_capacity(items.len());
        let mut classes = Vec::with_capacity(items.len());
        for (pos, (context, query)) in items.iter().enumerate() {
            if context.len() > self.max_context {
                return Err(RuleError::ContextOverflow { len: context.len(), max: self.max_context });
            }
            let y = match context.classes() {
                Some(_) => ContextResponses::Classes(
                    context
                        .responses()
                        .iter()
                        .map(|r| match r {
                            ResponseValue::Class(k) => *k,
                            ResponseValue::Continuous(v) => *v as usize,
                        })
                        .collect(),
                ),
                None => ContextResponses::Values(context.responses().iter().map(|r| r.as_f64()).collect()),
            };
            let id = self.next_id;
            self.next_id += 1;
            let request = RequestRef {
                id,
                task,
                context: ContextRef { x: (0..context.len()).map(|i| context.row(i)).collect(), y },
                query_x: query,
            };
            serde_json::to_writer(&mut self.writer, &request).map_err(std::io::Error::from)?;
            self.writer.write_all(b"\n")?;
            positions.insert(id, pos);
            classes.push(context.classes());
        }
        self.writer.flush()?;

        let mut out: Vec<Option<PredictedDistribution>> = vec![None; items.len()];
        let mut line = String::new();
        for _ in 0..items.len() {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(RuleError::Transport(std::io::ErrorKind::UnexpectedEof.into()));
            }
            let response: Response = serde_json::from_str(line.trim())
                .map_err(|e| RuleError::Protocol(format!("unparsable response: {e}")))?;
            let pos = positions
                .remove(&response.id)
                .ok_or_else(|| RuleError::Protocol(format!("unexpected response id {}", response.id)))?;
            out[pos] = Some(response.into_distribution(task, classes[pos])?);
        }
        Ok(out.into_iter().map(|d| d.expect("every id answered")).collect())
    }
}

/// Rule backed by an external service; the context grows client-side.
#[derive(Debug)]
pub struct ExternalState {
    client: Mutex<ExternalClient>,
    context: Observations,
    task: Task,
}

impl ExternalState {
    pub fn connect(endpoint: &str, data: Observations) -> Result<Self, RuleError> {
        let client = ExternalClient::connect(endpoint)?;
        let task = if data.classes().is_some() { Task::Classification } else { Task::Regression };
        Ok(Self { client: Mutex::new(client), context: data, task })
    }

    pub fn step(&self) -> usize {
        self.context.len()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn max_context(&self) -> usize {
        self.lock().max_context()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ExternalClient> {
        self.client.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn fork(&self) -> Result<Self, RuleError> {
        let endpoint = self.lock().endpoint().to_string();
        Self::connect(&endpoint, self.context.clone())
    }

    pub fn update(&mut self, x: &[f64], y: ResponseValue) -> Result<(), RuleError> {
        if x.len() != self.context.width() {
            return Err(RuleError::Dimension { expected: self.context.width(), got: x.len() });
        }
        match (self.task, y) {
            (Task::Classification, ResponseValue::Class(_)) | (Task::Regression, ResponseValue::Continuous(_)) => {
                self.context.push(x, y);
                Ok(())
            }
            (_, other) => Err(RuleError::ResponseKind(other)),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictedDistribution, RuleError> {
        self.lock().predict(self.task, &self.context, x)
    }

    /// Predictions at `x` after absorbing `(x, k)` for each class `k`,
    /// requested as one pipelined batch.
    pub fn lookahead(&self, x: &[f64], classes: usize) -> Result<Vec<Vec<f64>>, RuleError> {
        let contexts: Vec<Observations> = (0..classes)
            .map(|k| {
                let mut c = self.context.clone();
                c.push(x, ResponseValue::Class(k));
                c
            })
            .collect();
        let items: Vec<(&Observations, &[f64])> = contexts.iter().map(|c| (c, x)).collect();
        self.lock()
            .predict_batch(self.task, &items)?
            .into_iter()
            .map(|d| match d {
                PredictedDistribution::Categorical { probs } => Ok(probs),
                _ => Err(RuleError::NotEvaluable),
            })
            .collect()
    }
}
