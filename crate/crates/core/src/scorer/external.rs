use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::protocol::{WireRequest, WireResponse};
use super::{ScoreError, ScoreRequest, ScoreResponse, Scorer};
use crate::tokenizer::VocabHash;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// Environment variable overriding the reply timeout, in milliseconds.
pub const TIMEOUT_ENV: &str = "DMEL_SCORER_TIMEOUT_MS";

/// Where an external scorer lives: `host:port` or `stdio:<command line>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            if argv.is_empty() {
                return Err(ScoreError::InvalidParams("empty stdio command".into()));
            }
            Ok(Endpoint::Stdio(argv))
        } else if s.rsplit_once(':').is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) {
            Ok(Endpoint::Tcp(s.to_owned()))
        } else {
            Err(ScoreError::InvalidParams(format!("endpoint {s:?} is neither host:port nor stdio:<cmd>")))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => f.write_str(addr),
            Endpoint::Stdio(argv) => write!(f, "stdio:{}", argv.join(" ")),
        }
    }
}

/// Reply timeout from [`TIMEOUT_ENV`], else [`DEFAULT_TIMEOUT`].
pub fn timeout_from_env() -> Duration {
    std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_millis)
        .unwrap_or(DEFAULT_TIMEOUT)
}

struct Connection {
    writer: Box<dyn Write + Send>,
    replies: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    broken: bool,
}

impl Connection {
    fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self, ScoreError> {
        let connect_err = |source| ScoreError::Connect { endpoint: endpoint.to_string(), source };
        match endpoint {
            Endpoint::Tcp(addr) => {
                let mut last = None;
                for sock in addr.to_socket_addrs().map_err(connect_err)? {
                    match TcpStream::connect_timeout(&sock, timeout) {
                        Ok(stream) => {
                            stream.set_nodelay(true).ok();
                            let reader = stream.try_clone().map_err(connect_err)?;
                            return Ok(Self::with_reader(Box::new(stream), reader, None));
                        }
                        Err(e) => last = Some(e),
                    }
                }
                Err(connect_err(last.unwrap_or_else(|| std::io::Error::other("no addresses resolved"))))
            }
            Endpoint::Stdio(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(connect_err)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self::with_reader(Box::new(stdin), stdout, Some(child)))
            }
        }
    }

    fn with_reader<R: Read + Send + 'static>(writer: Box<dyn Write + Send>, reader: R, child: Option<Child>) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Connection { writer, replies: rx, child, broken: false }
    }

    fn round_trip(&mut self, line: &[u8], timeout: Duration) -> Result<String, ScoreError> {
        if self.broken {
            return Err(ScoreError::Broken);
        }
        // Any failure leaves the stream out of step with its replies.
        self.broken = true;
        self.writer.write_all(line)?;
        self.writer.flush()?;
        let reply = match self.replies.recv_timeout(timeout) {
            Ok(r) => r?,
            Err(RecvTimeoutError::Timeout) => return Err(ScoreError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(ScoreError::Disconnected),
        };
        self.broken = false;
        Ok(reply)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Client for a `DMSCORE/1` scorer. Each connection carries one request at a
/// time; a client opened with `pool` connections serves that many callers
/// concurrently.
pub struct ExternalScorer {
    endpoint: Endpoint,
    vocab: VocabHash,
    timeout: Duration,
    conns: Vec<Mutex<Connection>>,
    next: AtomicUsize,
}

impl ExternalScorer {
    pub fn connect(endpoint: Endpoint, vocab: VocabHash, pool: usize, timeout: Duration) -> Result<Self, ScoreError> {
        let conns = (0..pool.max(1))
            .map(|_| Connection::open(&endpoint, timeout).map(Mutex::new))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExternalScorer { endpoint, vocab, timeout, conns, next: AtomicUsize::new(0) })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn with_connection<T>(&self, f: impl FnOnce(&mut Connection) -> T) -> T {
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        let n = self.conns.len();
        for i in 0..n {
            if let Ok(mut c) = self.conns[(start + i) % n].try_lock() {
                return f(&mut c);
            }
        }
        let mut c = self.conns[start % n].lock().unwrap_or_else(|p| p.into_inner());
        f(&mut c)
    }
}

impl Scorer for ExternalScorer {
    fn logprobs(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        if request.input.tokens.vocab_hash != self.vocab {
            return Err(ScoreError::VocabMismatch { expected: self.vocab, found: request.input.tokens.vocab_hash });
        }
        let mut line = serde_json::to_vec(&WireRequest::new(self.vocab, request))
            .map_err(|e| ScoreError::Malformed(e.to_string()))?;
        line.push(b'\n');
        let reply = self.with_connection(|c| c.round_trip(&line, self.timeout))?;
        let reply: WireResponse =
            serde_json::from_str(&reply).map_err(|e| ScoreError::Malformed(format!("{e}: {reply:?}")))?;
        let response = ScoreResponse { logprobs: reply.into_logprobs(request.allowed)? };
        response.validate(request.allowed)?;
        Ok(response.logprobs)
    }
}
