//! Newline-delimited JSON scorer protocol.
//!
//! A client writes `{"id": "...", "text": "..."}` lines and reads back
//! `{"id": "...", "score": s}` lines, in any order. A server that cannot handle
//! a line answers `{"id": ..., "error": "..."}` and keeps going.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::filter::Scorer;
use crate::hashing::fnv1a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReply {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplyLine {
    Score(ScoreReply),
    Error(ErrorRecord),
}

pub fn parse_reply(line: &str) -> Result<ReplyLine> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("unparseable reply `{line}`: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Protocol(format!("reply is not an object: `{line}`")))?;
    if let Some(err) = obj.get("error") {
        return Ok(ReplyLine::Error(ErrorRecord {
            id: obj.get("id").and_then(Value::as_str).map(String::from),
            error: err.as_str().map(String::from).unwrap_or_else(|| err.to_string()),
        }));
    }
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Protocol(format!("reply without string id: `{line}`")))?;
    let score = obj
        .get("score")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Protocol(format!("reply without numeric score: `{line}`")))?;
    Ok(ReplyLine::Score(ScoreReply {
        id: id.to_string(),
        score,
    }))
}

/// Matches replies to `ids` and returns scores in `ids` order.
pub fn collect_scores(ids: &[String], replies: &[String]) -> Result<Vec<f64>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut scores: Vec<Option<f64>> = vec![None; ids.len()];
    for line in replies.iter().filter(|l| !l.trim().is_empty()) {
        match parse_reply(line)? {
            ReplyLine::Error(e) => {
                return Err(Error::Protocol(format!(
                    "scorer reported error for id {:?}: {}",
                    e.id, e.error
                )))
            }
            ReplyLine::Score(r) => {
                let &i = index
                    .get(r.id.as_str())
                    .ok_or_else(|| Error::Protocol(format!("reply with unknown id `{}`", r.id)))?;
                if !(0.0..=1.0).contains(&r.score) {
                    return Err(Error::Protocol(format!("score {} for id `{}` outside [0,1]", r.score, r.id)));
                }
                if scores[i].replace(r.score).is_some() {
                    return Err(Error::Protocol(format!("duplicate reply for id `{}`", r.id)));
                }
            }
        }
    }
    scores
        .into_iter()
        .zip(ids)
        .map(|(s, id)| s.ok_or_else(|| Error::Protocol(format!("missing reply for id `{id}`"))))
        .collect()
}

/// Where to reach a scorer: a command speaking the protocol on its standard
/// streams, or a Unix socket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerEndpoint {
    Command(Vec<String>),
    Socket(PathBuf),
}

impl ScorerEndpoint {
    /// `unix:<path>` for a socket, otherwise a whitespace-separated command line.
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(path) = spec.strip_prefix("unix:") {
            return Ok(ScorerEndpoint::Socket(PathBuf::from(path)));
        }
        let argv: Vec<String> = spec.split_whitespace().map(String::from).collect();
        if argv.is_empty() {
            return Err(Error::Precondition("empty scorer command".into()));
        }
        Ok(ScorerEndpoint::Command(argv))
    }

    fn describe(&self) -> PathBuf {
        match self {
            ScorerEndpoint::Command(argv) => PathBuf::from(argv.join(" ")),
            ScorerEndpoint::Socket(p) => p.clone(),
        }
    }

    /// Writes `lines`, closes the sending side and reads every reply line
    /// until the scorer closes its end.
    pub fn exchange(&self, lines: &[String]) -> Result<Vec<String>> {
        let io_err = |e| Error::io(self.describe(), e);
        match self {
            ScorerEndpoint::Command(argv) => {
                let mut child: Child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(io_err)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let replies = exchange_over(BufReader::new(stdout), stdin, lines).map_err(io_err);
                let status = child.wait().map_err(io_err)?;
                let replies = replies?;
                if !status.success() {
                    tracing::warn!("scorer exited with {status}");
                }
                Ok(replies)
            }
            ScorerEndpoint::Socket(path) => {
                let stream = UnixStream::connect(path).map_err(io_err)?;
                let write_half = stream.try_clone().map_err(io_err)?;
                let replies = exchange_over(BufReader::new(stream), ShutdownOnDrop(write_half), lines);
                replies.map_err(io_err)
            }
        }
    }
}

struct ShutdownOnDrop(UnixStream);

impl Write for ShutdownOnDrop {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()
    }
}

impl Drop for ShutdownOnDrop {
    fn drop(&mut self) {
        let _ = self.0.shutdown(std::net::Shutdown::Write);
    }
}

/// Sends on a separate thread so a scorer that replies before reading
/// everything cannot deadlock on full pipes.
fn exchange_over<R: BufRead, W: Write + Send>(reader: R, writer: W, lines: &[String]) -> std::io::Result<Vec<String>> {
    std::thread::scope(|scope| {
        let sender = scope.spawn(move || -> std::io::Result<()> {
            let mut writer = std::io::BufWriter::new(writer);
            for line in lines {
                writer.write_all(line.as_bytes())?;
                writer.write_all(b"\n")?;
            }
            writer.flush()
        });
        let replies: std::io::Result<Vec<String>> = reader.lines().collect();
        let sent = sender.join().expect("sender thread panicked");
        // a scorer that quits early breaks the pipe; report what it said first
        let replies = replies?;
        if let Err(e) = sent {
            if !matches!(e.kind(), std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset) {
                return Err(e);
            }
        }
        Ok(replies)
    })
}

fn request_lines(texts: &[String]) -> (Vec<String>, Vec<String>) {
    let ids: Vec<String> = (0..texts.len()).map(|i| i.to_string()).collect();
    let lines = ids
        .iter()
        .zip(texts)
        .map(|(id, text)| {
            serde_json::to_string(&ScoreRequest {
                id: id.clone(),
                text: text.clone(),
            })
            .expect("request serializes")
        })
        .collect();
    (ids, lines)
}

pub struct ExternalScorer {
    pub endpoint: ScorerEndpoint,
}

impl Scorer for ExternalScorer {
    fn score_texts(&self, texts: &[String]) -> Result<Vec<f64>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let (ids, lines) = request_lines(texts);
        let replies = self.endpoint.exchange(&lines)?;
        collect_scores(&ids, &replies)
    }
}

/// Scores for each text, in input order.
pub fn external_score(texts: &[String], endpoint: &ScorerEndpoint) -> Result<Vec<(String, f64)>> {
    let scores = ExternalScorer {
        endpoint: endpoint.clone(),
    }
    .score_texts(texts)?;
    Ok(texts.iter().cloned().zip(scores).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub answered: usize,
    pub errors: usize,
}

/// Answers requests from `reader` until end of input. Every non-blank line
/// gets exactly one reply line.
pub fn serve<R, W, F>(reader: R, mut writer: W, mut score: F) -> std::io::Result<ServeStats>
where
    R: BufRead,
    W: Write,
    F: FnMut(&str) -> Result<f64>,
{
    let mut stats = ServeStats::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<ScoreRequest>(&line) {
            Err(e) => {
                stats.errors += 1;
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_str).map(String::from));
                serde_json::to_string(&ErrorRecord {
                    id,
                    error: format!("malformed request: {e}"),
                })
            }
            Ok(req) => match score(&req.text) {
                Ok(s) if (0.0..=1.0).contains(&s) => {
                    stats.answered += 1;
                    serde_json::to_string(&ScoreReply { id: req.id, score: s })
                }
                Ok(s) => {
                    stats.errors += 1;
                    serde_json::to_string(&ErrorRecord {
                        id: Some(req.id),
                        error: format!("score {s} outside [0,1]"),
                    })
                }
                Err(e) => {
                    stats.errors += 1;
                    serde_json::to_string(&ErrorRecord {
                        id: Some(req.id),
                        error: e.to_string(),
                    })
                }
            },
        }
        .expect("reply serializes");
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(stats)
}

/// Serves connections one after another; stops after `max_connections` if given.
pub fn serve_socket<F>(listener: &UnixListener, max_connections: Option<usize>, mut score: F) -> std::io::Result<ServeStats>
where
    F: FnMut(&str) -> Result<f64>,
{
    let mut total = ServeStats::default();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let reader = BufReader::new(stream.try_clone()?);
        let stats = serve(reader, &stream, &mut score)?;
        total.answered += stats.answered;
        total.errors += stats.errors;
        if max_connections.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    Ok(total)
}

/// Deterministic stand-in scorer: a fixed score per text in [0,1].
pub fn stub_score(text: &str) -> f64 {
    (fnv1a(text.as_bytes()) % 1001) as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub checks: Vec<ConformanceCheck>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub const LEDGER_REQUESTS: usize = 1000;

/// Probes a scorer for id fidelity, score range, malformed-line survival and
/// a 1,000-request ledger. Each probe uses a fresh session.
pub fn run_conformance(endpoint: &ScorerEndpoint) -> ConformanceReport {
    let check = |name, outcome: std::result::Result<String, String>| match outcome {
        Ok(detail) => ConformanceCheck {
            name,
            passed: true,
            detail,
        },
        Err(detail) => ConformanceCheck {
            name,
            passed: false,
            detail,
        },
    };
    let scored = |requests: Vec<ScoreRequest>| -> std::result::Result<Vec<ReplyLine>, String> {
        let lines: Vec<String> = requests
            .iter()
            .map(|r| serde_json::to_string(r).expect("request serializes"))
            .collect();
        let replies = endpoint.exchange(&lines).map_err(|e| e.to_string())?;
        replies
            .iter()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_reply(l).map_err(|e| e.to_string()))
            .collect()
    };

    let id_fidelity = (|| {
        let ids = ["a-1", "β 2", "007", "{\"x\"}"];
        let replies = scored(
            ids.iter()
                .map(|id| ScoreRequest {
                    id: id.to_string(),
                    text: "遭受挫折".into(),
                })
                .collect(),
        )?;
        let mut got: Vec<String> = replies
            .into_iter()
            .map(|r| match r {
                ReplyLine::Score(s) => Ok(s.id),
                ReplyLine::Error(e) => Err(format!("error record: {}", e.error)),
            })
            .collect::<std::result::Result<_, _>>()?;
        got.sort();
        let mut want: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        want.sort();
        if got == want {
            Ok(format!("{} ids echoed", want.len()))
        } else {
            Err(format!("sent {want:?}, got {got:?}"))
        }
    })();

    let score_range = (|| {
        let texts = ["遭受挫折", "", "被禁止参加婚礼", "a", "获得家人的理解 and more text"];
        let replies = scored(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| ScoreRequest {
                    id: i.to_string(),
                    text: t.to_string(),
                })
                .collect(),
        )?;
        for r in &replies {
            match r {
                ReplyLine::Score(s) if (0.0..=1.0).contains(&s.score) => {}
                ReplyLine::Score(s) => return Err(format!("score {} outside [0,1]", s.score)),
                ReplyLine::Error(e) => return Err(format!("error record: {}", e.error)),
            }
        }
        if replies.len() == texts.len() {
            Ok(format!("{} scores in range", replies.len()))
        } else {
            Err(format!("{} replies for {} requests", replies.len(), texts.len()))
        }
    })();

    let malformed = (|| {
        let lines = vec![
            "{{".to_string(),
            r#"{"id":"ok","text":"遭受挫折"}"#.to_string(),
            r#"{"text":"no id"}"#.to_string(),
            r#"{"id":"ok2","text":"获得奖学金"}"#.to_string(),
        ];
        let replies = endpoint.exchange(&lines).map_err(|e| e.to_string())?;
        let parsed: Vec<ReplyLine> = replies
            .iter()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_reply(l).map_err(|e| e.to_string()))
            .collect::<std::result::Result<_, _>>()?;
        let errors = parsed.iter().filter(|r| matches!(r, ReplyLine::Error(_))).count();
        let mut ok: Vec<&str> = parsed
            .iter()
            .filter_map(|r| match r {
                ReplyLine::Score(s) => Some(s.id.as_str()),
                ReplyLine::Error(_) => None,
            })
            .collect();
        ok.sort_unstable();
        if errors == 2 && ok == ["ok", "ok2"] {
            Ok("2 error records, scorer kept answering".into())
        } else {
            Err(format!("{errors} error records, scored ids {ok:?}"))
        }
    })();

    let ledger = (|| {
        let texts: Vec<String> = (0..LEDGER_REQUESTS).map(|i| format!("事件{i}")).collect();
        let (ids, lines) = request_lines(&texts);
        let replies = endpoint.exchange(&lines).map_err(|e| e.to_string())?;
        collect_scores(&ids, &replies).map_err(|e| e.to_string())?;
        Ok(format!("{LEDGER_REQUESTS} id-matched replies, no duplicates"))
    })();

    ConformanceReport {
        checks: vec![
            check("id_fidelity", id_fidelity),
            check("score_range", score_range),
            check("malformed_line_survival", malformed),
            check("request_ledger", ledger),
        ],
    }
}
