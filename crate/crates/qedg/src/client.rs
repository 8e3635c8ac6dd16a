//! HTTP client for remote prediction endpoints.
//!
//! Speaks the wire protocol over plain TCP with per-call timeouts.
//! Timeouts, connection failures, non-2xx statuses, and malformed bodies
//! are distinct errors; all but a 429 budget rejection are retried up to
//! the configured limit.

use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::wire::{self, PredictRequest, PredictResponse};

const MAX_RESPONSE_BYTES: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid endpoint URL {0:?} (expected http://host:port[/path])")]
    BadUrl(String),
    #[error("connection to {endpoint} failed: {detail}")]
    ConnectFailed { endpoint: String, detail: String },
    #[error("request to {endpoint} timed out")]
    Timeout { endpoint: String },
    #[error("endpoint returned status {code}: {body}")]
    HttpStatus { code: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("endpoint rejected the request: server budget exhausted (429)")]
    BudgetRejected,
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Remote oracle settings.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:9009`.
    pub url: String,
    pub timeout: Duration,
    /// Additional attempts after the first failure.
    pub retry_limit: u32,
    /// Class count the caller expects; responses are validated against it.
    pub num_classes: usize,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, num_classes: usize) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(10),
            retry_limit: 2,
            num_classes,
        }
    }
}

struct Endpoint {
    host: String,
    port: u16,
    path: String,
}

fn parse_url(url: &str) -> Result<Endpoint> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| ClientError::BadUrl(url.to_string()))?;
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, ""),
    };
    let (host, port) = match authority.rsplit_once(':') {
        Some((h, p)) => (
            h.to_string(),
            p.parse::<u16>()
                .map_err(|_| ClientError::BadUrl(url.to_string()))?,
        ),
        None => (authority.to_string(), 80),
    };
    if host.is_empty() {
        return Err(ClientError::BadUrl(url.to_string()));
    }
    let path = if path.is_empty() || path == "/" {
        "/predict".to_string()
    } else {
        path.trim_end_matches('/').to_string()
    };
    Ok(Endpoint { host, port, path })
}

fn attempt(cfg: &RemoteConfig, ep: &Endpoint, body: &[u8], n: usize) -> Result<Vec<usize>> {
    let endpoint = format!("{}:{}", ep.host, ep.port);
    let addr = (ep.host.as_str(), ep.port)
        .to_socket_addrs()
        .map_err(|e| ClientError::ConnectFailed {
            endpoint: endpoint.clone(),
            detail: e.to_string(),
        })?
        .next()
        .ok_or_else(|| ClientError::ConnectFailed {
            endpoint: endpoint.clone(),
            detail: "no resolved address".into(),
        })?;
    let mut stream =
        TcpStream::connect_timeout(&addr, cfg.timeout).map_err(|e| ClientError::ConnectFailed {
            endpoint: endpoint.clone(),
            detail: e.to_string(),
        })?;
    stream
        .set_read_timeout(Some(cfg.timeout))
        .and_then(|_| stream.set_write_timeout(Some(cfg.timeout)))
        .map_err(|e| ClientError::ConnectFailed {
            endpoint: endpoint.clone(),
            detail: e.to_string(),
        })?;

    let start_line = format!("POST {} HTTP/1.1", ep.path);
    let host_value = endpoint.clone();
    let message = wire::write_http_message(&start_line, &[("Host", &host_value)], body);
    let timeout_err = |e: std::io::Error| {
        if matches!(
            e.kind(),
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
        ) {
            ClientError::Timeout {
                endpoint: endpoint.clone(),
            }
        } else {
            ClientError::ConnectFailed {
                endpoint: endpoint.clone(),
                detail: e.to_string(),
            }
        }
    };
    stream.write_all(&message).map_err(timeout_err)?;
    let response = wire::read_http_message(&mut stream, MAX_RESPONSE_BYTES).map_err(timeout_err)?;

    let code: u16 = response
        .start_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ClientError::Malformed(format!("status line {:?}", response.start_line)))?;
    match code {
        200 => {}
        429 => return Err(ClientError::BudgetRejected),
        _ => {
            return Err(ClientError::HttpStatus {
                code,
                body: String::from_utf8_lossy(&response.body).into_owned(),
            })
        }
    }
    let parsed: PredictResponse = serde_json::from_slice(&response.body)
        .map_err(|e| ClientError::Malformed(format!("body is not a prediction response: {e}")))?;
    if parsed.labels.len() != n {
        return Err(ClientError::Malformed(format!(
            "{} labels for {n} instances",
            parsed.labels.len()
        )));
    }
    log::debug!(
        "remote predict: {n} instances -> model {} at {endpoint}",
        parsed.model_id
    );
    Ok(parsed.labels)
}

/// Posts one feature batch and returns hard labels. Retries every failure
/// except a 429 budget rejection up to `retry_limit` extra attempts.
pub fn remote_predict(cfg: &RemoteConfig, features: &[f32], n: usize) -> Result<Vec<usize>> {
    let ep = parse_url(&cfg.url)?;
    let dim = if n == 0 { 0 } else { features.len() / n };
    let instances: Vec<Vec<f32>> = (0..n)
        .map(|i| features[i * dim..(i + 1) * dim].to_vec())
        .collect();
    let body = serde_json::to_vec(&PredictRequest { instances }).expect("serializable request");

    let mut last_err = None;
    for attempt_idx in 0..=cfg.retry_limit {
        match attempt(cfg, &ep, &body, n) {
            Ok(labels) => return Ok(labels),
            Err(e @ (ClientError::BudgetRejected | ClientError::BadUrl(_))) => return Err(e),
            Err(e) => {
                log::warn!("remote predict attempt {attempt_idx} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;
    use std::net::TcpListener;

    fn spawn_stub(
        responses: Vec<Vec<u8>>,
    ) -> (String, std::thread::JoinHandle<Vec<Vec<u8>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for response in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let msg = wire::read_http_message(&mut stream, 1 << 20).unwrap();
                bodies.push(msg.body);
                stream.write_all(&response).unwrap();
            }
            bodies
        });
        (format!("http://{addr}"), handle)
    }

    fn ok_response(labels: &[usize]) -> Vec<u8> {
        let body = serde_json::to_vec(&PredictResponse {
            labels: labels.to_vec(),
            model_id: "stub".into(),
        })
        .unwrap();
        wire::write_http_message("HTTP/1.1 200 OK", &[], &body)
    }

    #[test]
    fn fixed_label_server_round_trip() {
        let (url, handle) = spawn_stub(vec![ok_response(&[3, 3])]);
        let cfg = RemoteConfig::new(url, 5);
        let labels = remote_predict(&cfg, &[0.25, 0.5, 0.75, 1.0], 2).unwrap();
        assert_eq!(labels, vec![3, 3]);
        let bodies = handle.join().unwrap();
        let req: PredictRequest = serde_json::from_slice(&bodies[0]).unwrap();
        assert_eq!(req.instances, vec![vec![0.25, 0.5], vec![0.75, 1.0]]);
    }

    #[test]
    fn wrong_length_label_array_is_malformed() {
        let (url, _handle) = spawn_stub(vec![
            ok_response(&[1]),
            ok_response(&[1]),
            ok_response(&[1]),
        ]);
        let cfg = RemoteConfig::new(url, 5);
        let err = remote_predict(&cfg, &[0.0, 0.0, 1.0, 1.0], 2).unwrap_err();
        assert!(matches!(err, ClientError::Malformed(_)), "{err}");
    }

    #[test]
    fn unreachable_host_fails_after_retries() {
        // a listener that is immediately dropped leaves a refused port
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let cfg = RemoteConfig {
            url: format!("http://127.0.0.1:{port}"),
            timeout: Duration::from_millis(300),
            retry_limit: 1,
            num_classes: 2,
        };
        let err = remote_predict(&cfg, &[0.0], 1).unwrap_err();
        assert!(matches!(err, ClientError::ConnectFailed { .. }), "{err}");
    }

    #[test]
    fn budget_rejection_not_retried() {
        let responses = vec![wire::write_http_message(
            "HTTP/1.1 429 Too Many Requests",
            &[],
            br#"{"error": "budget"}"#,
        )];
        let (url, handle) = spawn_stub(responses);
        let cfg = RemoteConfig::new(url, 2);
        let err = remote_predict(&cfg, &[0.0], 1).unwrap_err();
        assert!(matches!(err, ClientError::BudgetRejected));
        // exactly one request hit the stub
        assert_eq!(handle.join().unwrap().len(), 1);
    }

    #[test]
    fn retry_recovers_from_one_failure() {
        let responses = vec![
            wire::write_http_message("HTTP/1.1 500 Internal Server Error", &[], b"boom"),
            ok_response(&[0]),
        ];
        let (url, _handle) = spawn_stub(responses);
        let cfg = RemoteConfig::new(url, 2);
        let labels = remote_predict(&cfg, &[0.5], 1).unwrap();
        assert_eq!(labels, vec![0]);
    }

    #[test]
    fn url_parsing() {
        assert!(parse_url("https://x:1").is_err());
        assert!(parse_url("http://:80").is_err());
        let ep = parse_url("http://127.0.0.1:9009").unwrap();
        assert_eq!(ep.path, "/predict");
        let ep = parse_url("http://host:1/custom").unwrap();
        assert_eq!(ep.path, "/custom");
        assert_eq!(ep.port, 1);
    }

    #[test]
    fn timeout_is_distinct() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            // accept but never respond
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = stream.read(&mut buf);
            std::thread::sleep(Duration::from_millis(900));
        });
        let cfg = RemoteConfig {
            url: format!("http://{addr}"),
            timeout: Duration::from_millis(150),
            retry_limit: 0,
            num_classes: 2,
        };
        let err = remote_predict(&cfg, &[0.0], 1).unwrap_err();
        assert!(matches!(err, ClientError::Timeout { .. }), "{err}");
        handle.join().unwrap();
    }
}
