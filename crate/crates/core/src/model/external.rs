//! Client side of the newline-delimited JSON adapter protocol.
//!
//! ```text
//! -> {"op":"hello"}
//! <- {"op":"hello","labels":["<=50K",">50K"]}
//! -> {"op":"predict","id":7,"x":["male",38,...]}
//! <- {"op":"probs","id":7,"p":[0.81,0.19]}
//! <- {"op":"error","id":7,"msg":"..."}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::Value as Json;

use super::{Predictor, QueryCounter};
use crate::error::{Error, Result};
use crate::types::{FeatureSchema, Sample, Value};

#[derive(Serialize)]
struct Hello<'a> {
    op: &'a str,
}

#[derive(Serialize)]
struct PredictRequest<'a> {
    op: &'a str,
    id: u64,
    x: Vec<Json>,
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    next_id: u64,
}

impl Connection {
    fn send(&mut self, line: &str) -> Result<()> {
        let io = |e: std::io::Error| Error::AdapterDown(e.to_string());
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.writer.write_all(&buf).map_err(io)?;
        self.writer.flush().map_err(io)
    }

    fn recv(&mut self) -> Result<Json> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).map_err(|e| Error::AdapterDown(e.to_string()))?;
        if n == 0 {
            return Err(Error::AdapterDown("adapter closed the stream".into()));
        }
        serde_json::from_str(line.trim_end())
            .map_err(|e| Error::ProtocolViolation { detail: format!("unparseable line {:?}: {e}", line.trim_end()) })
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A model served by an out-of-process adapter. Requests are serialized
/// over one connection.
pub struct ExternalPredictor {
    schema: FeatureSchema,
    labels: Vec<String>,
    conn: Mutex<Connection>,
    queries: QueryCounter,
}

impl ExternalPredictor {
    /// `tcp://host:port` connects to a listening adapter; anything else is
    /// run as a shell command speaking the protocol on stdin/stdout.
    pub fn connect(address: &str, schema: FeatureSchema) -> Result<Self> {
        let conn = if let Some(addr) = address.strip_prefix("tcp://") {
            let stream = TcpStream::connect(addr).map_err(|e| Error::AdapterDown(format!("{addr}: {e}")))?;
            stream.set_nodelay(true).map_err(|e| Error::AdapterDown(e.to_string()))?;
            let reader = stream.try_clone().map_err(|e| Error::AdapterDown(e.to_string()))?;
            Connection { reader: Box::new(BufReader::new(reader)), writer: Box::new(stream), child: None, next_id: 0 }
        } else {
            let mut child = Command::new("sh")
                .arg("-c")
                .arg(address)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(|e| Error::AdapterDown(format!("{address}: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            Connection { reader: Box::new(BufReader::new(stdout)), writer: Box::new(stdin), child: Some(child), next_id: 0 }
        };
        Self::handshake(conn, schema)
    }

    /// Uses an already-open stream pair (tests, custom transports).
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
        schema: FeatureSchema,
    ) -> Result<Self> {
        let conn = Connection { reader: Box::new(reader), writer: Box::new(writer), child: None, next_id: 0 };
        Self::handshake(conn, schema)
    }

    fn handshake(mut conn: Connection, schema: FeatureSchema) -> Result<Self> {
        conn.send(&serde_json::to_string(&Hello { op: "hello" })?)?;
        let reply = conn.recv()?;
        if reply.get("op").and_then(Json::as_str) != Some("hello") {
            return Err(Error::ProtocolViolation { detail: format!("expected hello reply, got {reply}") });
        }
        let labels: Vec<String> = reply
            .get("labels")
            .and_then(Json::as_array)
            .ok_or_else(|| Error::ProtocolViolation { detail: "hello reply lacks labels".into() })?
            .iter()
            .map(|l| l.as_str().map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::ProtocolViolation { detail: "labels must be strings".into() })?;
        if labels.len() < 2 {
            return Err(Error::ProtocolViolation { detail: "adapter advertised fewer than two labels".into() });
        }
        if labels != schema.label_names() {
            return Err(Error::ProtocolViolation {
                detail: format!("adapter labels {labels:?} differ from schema labels {:?}", schema.label_names()),
            });
        }
        Ok(ExternalPredictor { schema, labels, conn: Mutex::new(conn), queries: QueryCounter::default() })
    }

    /// Wire encoding of a sample: category names and tokens as strings,
    /// numerics as numbers.
    pub fn wire_values(&self, sample: &Sample) -> Vec<Json> {
        sample
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::Numeric(n) => Json::from(*n),
                other => Json::from(self.schema.render(i, other)),
            })
            .collect()
    }
}

impl Predictor for ExternalPredictor {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.queries.bump();
        let x = self.wire_values(sample);
        let mut conn = self.conn.lock().map_err(|_| Error::AdapterDown("connection poisoned".into()))?;
        let id = conn.next_id;
        conn.next_id += 1;
        conn.send(&serde_json::to_string(&PredictRequest { op: "predict", id, x })?)?;
        let reply = conn.recv()?;
        let echoed = reply.get("id").and_then(Json::as_u64);
        match reply.get("op").and_then(Json::as_str) {
            Some("probs") => {}
            Some("error") => {
                let msg = reply.get("msg").and_then(Json::as_str).unwrap_or("").to_string();
                return Err(Error::AdapterError { id, msg });
            }
            _ => return Err(Error::ProtocolViolation { detail: format!("unexpected reply {reply}") }),
        }
        if echoed != Some(id) {
            return Err(Error::ProtocolViolation { detail: format!("reply id {echoed:?} for request {id}") });
        }
        let p: Vec<f64> = reply
            .get("p")
            .and_then(Json::as_array)
            .and_then(|a| a.iter().map(Json::as_f64).collect())
            .ok_or_else(|| Error::ProtocolViolation { detail: "probs reply lacks numeric p".into() })?;
        if p.len() != self.labels.len() || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::ProtocolViolation { detail: format!("invalid probability vector {p:?}") });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::ProtocolViolation { detail: format!("probabilities sum to {sum}") });
        }
        Ok(p.into_iter().map(|v| v / sum).collect())
    }

    fn query_count(&self) -> u64 {
        self.queries.get()
    }
}

#[derive(Serialize)]
struct HelloReply<'a> {
    op: &'a str,
    labels: &'a [String],
}

#[derive(Serialize)]
struct ProbsReply<'a> {
    op: &'a str,
    id: u64,
    p: &'a [f64],
}

#[derive(Serialize)]
struct ErrorReply<'a> {
    op: &'a str,
    id: Option<u64>,
    msg: &'a str,
}

fn decode_sample(schema: &FeatureSchema, x: &[Json]) -> Result<Sample> {
    if !schema.is_text() && x.len() != schema.features().len() {
        return Err(Error::InvalidSample(format!("expected {} features, got {}", schema.features().len(), x.len())));
    }
    let values = x
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Json::Number(n) if !schema.is_text() => {
                let raw = n.as_i64().map(|k| k.to_string()).unwrap_or_else(|| n.to_string());
                schema.parse_value(i, &raw)
            }
            Json::String(s) => schema.parse_value(i, s),
            other => Err(Error::InvalidSample(format!("feature {i}: unsupported value {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let sample = Sample::new(values);
    schema.validate(&sample)?;
    Ok(sample)
}

fn handle_line<P: Predictor + ?Sized>(line: &str, f: &P, schema: &FeatureSchema) -> Result<String> {
    let req: Json = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return Ok(serde_json::to_string(&ErrorReply { op: "error", id: None, msg: &format!("bad json: {e}") })?),
    };
    let id = req.get("id").and_then(Json::as_u64);
    let fail = |msg: String| serde_json::to_string(&ErrorReply { op: "error", id, msg: &msg });
    Ok(match req.get("op").and_then(Json::as_str) {
        Some("hello") => serde_json::to_string(&HelloReply { op: "hello", labels: f.labels() })?,
        Some("predict") => {
            let Some(id) = id else { return Ok(fail("predict needs an integer id".into())?) };
            let Some(x) = req.get("x").and_then(Json::as_array) else { return Ok(fail("predict needs an array x".into())?) };
            match decode_sample(schema, x).and_then(|s| f.predict_proba(&s)) {
                Ok(p) => serde_json::to_string(&ProbsReply { op: "probs", id, p: &p })?,
                Err(e) => fail(e.to_string())?,
            }
        }
        other => fail(format!("unknown op {other:?}"))?,
    })
}

/// Answers protocol requests from `reader` until end of input. Malformed
/// requests get an `error` line; the loop never stops on them.
pub fn serve<P: Predictor + ?Sized>(
    f: &P,
    schema: &FeatureSchema,
    reader: impl BufRead,
    mut writer: impl Write,
) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = handle_line(line.trim_end(), f, schema)?;
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}
