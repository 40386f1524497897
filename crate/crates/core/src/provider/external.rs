//! Client and server for the newline-delimited JSON segmenter protocol.
//!
//! ```text
//! request  {"id": 7, "image": "<scene id>", "bbox": [x1,y1,x2,y2], "points": [[x,y,l],...]}
//! response {"id": 7, "mask": {"size": [h,w], "counts": [...]}}  or  {"id": 7, "error": "..."}
//! ```

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{OracleProvider, ProviderDescriptor, ProviderError, SceneRef, SegmentationPrompt, SegmentationProvider};
use crate::mask::{decode_rle, encode_rle, BitMask, PixelBox, PointPrompt, RleMask};

const READ_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq)]
enum Endpoint {
    Tcp(String),
    Exec(Vec<String>),
}

impl Endpoint {
    fn parse(s: &str) -> Result<Self, ProviderError> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err(ProviderError::Config("tcp endpoint needs host:port".into()));
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(ProviderError::Config("exec endpoint needs a command".into()));
            }
            return Ok(Endpoint::Exec(argv));
        }
        Err(ProviderError::Config(format!(
            "endpoint {s:?} must start with tcp:// or exec:"
        )))
    }
}

struct Connection {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn transport(e: impl std::fmt::Display, retryable: bool) -> ProviderError {
    ProviderError::Transport {
        message: e.to_string(),
        retryable,
    }
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self, ProviderError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| transport(format!("connect {addr}: {e}"), true))?;
                stream
                    .set_read_timeout(Some(READ_TIMEOUT))
                    .map_err(|e| transport(e, true))?;
                let _ = stream.set_nodelay(true);
                let read = stream.try_clone().map_err(|e| transport(e, true))?;
                Ok(Self {
                    reader: BufReader::new(Box::new(read)),
                    writer: Box::new(stream),
                    child: None,
                })
            }
            Endpoint::Exec(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| transport(format!("spawn {}: {e}", argv[0]), false))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self {
                    reader: BufReader::new(Box::new(stdout)),
                    writer: Box::new(stdin),
                    child: Some(child),
                })
            }
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    image: &'a str,
    bbox: PixelBox,
    points: &'a [PointPrompt],
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    mask: Option<RleMask>,
    error: Option<String>,
}

struct State {
    conn: Option<Connection>,
    next_id: u64,
}

/// Client for an external segmenter. Connects lazily and reconnects after a
/// transport failure; one request is in flight at a time.
pub struct ExternalProvider {
    endpoint_text: String,
    endpoint: Endpoint,
    state: Mutex<State>,
}

impl ExternalProvider {
    pub fn new(endpoint: &str) -> Result<Self, ProviderError> {
        Ok(Self {
            endpoint_text: endpoint.to_string(),
            endpoint: Endpoint::parse(endpoint)?,
            state: Mutex::new(State { conn: None, next_id: 1 }),
        })
    }

    fn round_trip(conn: &mut Connection, line: &str) -> Result<String, ProviderError> {
        conn.writer
            .write_all(line.as_bytes())
            .and_then(|_| conn.writer.write_all(b"\n"))
            .and_then(|_| conn.writer.flush())
            .map_err(|e| transport(format!("send: {e}"), true))?;
        let mut reply = String::new();
        let n = conn
            .reader
            .read_line(&mut reply)
            .map_err(|e| transport(format!("receive: {e}"), true))?;
        if n == 0 {
            return Err(transport("segmenter closed the connection", true));
        }
        Ok(reply)
    }
}

impl SegmentationProvider for ExternalProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor::external(self.endpoint_text.clone())
    }

    fn segment(&self, scene: SceneRef<'_>, prompt: &SegmentationPrompt) -> Result<BitMask, ProviderError> {
        if let Some(s) = scene.scene {
            prompt.validate(s.width, s.height)?;
        }
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let id = state.next_id;
        state.next_id += 1;
        let line = serde_json::to_string(&Request {
            id,
            image: scene.id,
            bbox: prompt.bbox,
            points: &prompt.points,
        })
        .map_err(|e| ProviderError::Protocol(e.to_string()))?;
        if state.conn.is_none() {
            state.conn = Some(Connection::open(&self.endpoint)?);
        }
        let reply = match Self::round_trip(state.conn.as_mut().expect("connected"), &line) {
            Ok(r) => r,
            Err(e) => {
                state.conn = None;
                return Err(e);
            }
        };
        drop(state);
        let resp: Response =
            serde_json::from_str(&reply).map_err(|e| ProviderError::Protocol(format!("bad response: {e}")))?;
        if resp.id != id {
            return Err(ProviderError::Protocol(format!(
                "response id {} for request {id}",
                resp.id
            )));
        }
        match (resp.mask, resp.error) {
            (_, Some(msg)) => Err(ProviderError::Remote(msg)),
            (Some(rle), None) => {
                let mask = decode_rle(&rle).map_err(|e| ProviderError::Protocol(e.to_string()))?;
                if let Some(s) = scene.scene {
                    if mask.width() != s.width || mask.height() != s.height {
                        return Err(ProviderError::Protocol(format!(
                            "mask is {}x{}, scene is {}x{}",
                            mask.width(),
                            mask.height(),
                            s.width,
                            s.height
                        )));
                    }
                }
                Ok(mask)
            }
            (None, None) => Err(ProviderError::Protocol("response has neither mask nor error".into())),
        }
    }
}

#[derive(Deserialize)]
struct ServerRequest {
    id: u64,
    image: String,
    bbox: PixelBox,
    points: Vec<PointPrompt>,
}

/// Answers protocol requests from `reader` with the oracle until EOF.
/// Returns the number of requests served.
pub fn serve_oracle<R: BufRead, W: Write>(reader: R, mut writer: W, oracle: &OracleProvider) -> io::Result<u64> {
    let mut served = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<ServerRequest>(&line) {
            Ok(req) => {
                let prompt = SegmentationPrompt {
                    bbox: req.bbox,
                    points: req.points,
                };
                match oracle.segment(
                    SceneRef {
                        id: &req.image,
                        scene: None,
                    },
                    &prompt,
                ) {
                    Ok(mask) => serde_json::json!({"id": req.id, "mask": encode_rle(&mask)}),
                    Err(e) => serde_json::json!({"id": req.id, "error": e.to_string()}),
                }
            }
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64))
                    .unwrap_or(0);
                serde_json::json!({"id": id, "error": format!("bad request: {e}")})
            }
        };
        writeln!(writer, "{reply}")?;
        writer.flush()?;
        served += 1;
    }
    Ok(served)
}
