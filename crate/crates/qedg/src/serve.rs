//! A minimal prediction server exposing a frozen classifier as a
//! hard-label HTTP oracle.
//!
//! `POST /predict` with `{"instances": [[...], ...]}` answers
//! `{"labels": [...], "model_id": "..."}` — top-1 class indices only,
//! never scores. An optional budget guard counts answered samples
//! atomically and refuses anything beyond the cap with 429, leaving the
//! counter unchanged. Every request is logged with a monotonic sequence
//! number. Connections are handled one thread each over frozen,
//! read-only parameters.

use std::io::Write as _;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use thiserror::Error;

use crate::nets::Network;
use crate::wire::{read_http_message, write_http_message, PredictRequest, PredictResponse};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("bind to {addr} failed: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ServeError>;

/// Largest accepted request body; far above any sane batch, small enough
/// to bound memory per connection.
const MAX_REQUEST_BYTES: usize = 64 * 1024 * 1024;

/// Server settings.
#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Sample cap across the server's lifetime; `None` is unlimited.
    pub budget: Option<u64>,
    /// Echoed in every response.
    pub model_id: String,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            budget: None,
            model_id: "qedg-target".into(),
        }
    }
}

struct ServerState {
    network: Network,
    options: ServeOptions,
    /// Samples answered (never counts refused requests).
    served: AtomicU64,
    /// Requests seen, successful or not; drives log sequence numbers.
    sequence: AtomicU64,
    shutdown: AtomicBool,
}

/// A running server; dropping the handle shuts it down and joins the
/// accept thread.
pub struct ServerHandle {
    addr: SocketAddr,
    state: Arc<ServerState>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Samples answered so far.
    pub fn queries_served(&self) -> u64 {
        self.state.served.load(Ordering::SeqCst)
    }

    /// Stops accepting, unblocks the listener, and joins the thread.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.state.shutdown.store(true, Ordering::SeqCst);
        // unblock the blocking accept with a throwaway connection
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop();
        }
    }
}

/// Binds `addr` and serves `network` until the handle shuts down.
/// `addr` may use port 0 to let the OS pick; the handle reports the
/// actual address.
pub fn serve_target(
    network: Network,
    addr: impl ToSocketAddrs + std::fmt::Debug,
    options: ServeOptions,
) -> Result<ServerHandle> {
    let listener = TcpListener::bind(&addr).map_err(|source| ServeError::Bind {
        addr: format!("{addr:?}"),
        source,
    })?;
    let local = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: format!("{addr:?}"),
        source,
    })?;
    let state = Arc::new(ServerState {
        network,
        options,
        served: AtomicU64::new(0),
        sequence: AtomicU64::new(0),
        shutdown: AtomicBool::new(false),
    });
    let accept_state = Arc::clone(&state);
    let accept_thread = std::thread::spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        for stream in listener.incoming() {
            if accept_state.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let conn_state = Arc::clone(&accept_state);
            workers.push(std::thread::spawn(move || {
                handle_connection(stream, &conn_state);
            }));
        }
        for w in workers {
            let _ = w.join();
        }
    });
    log::info!("serving hard-label oracle on http://{local}");
    Ok(ServerHandle {
        addr: local,
        state,
        accept_thread: Some(accept_thread),
    })
}

fn respond(stream: &mut TcpStream, start_line: &str, body: &serde_json::Value) {
    let bytes = write_http_message(
        start_line,
        &[],
        serde_json::to_string(body)
            .expect("response serializes")
            .as_bytes(),
    );
    let _ = stream.write_all(&bytes);
    let _ = stream.flush();
}

fn bad_request(stream: &mut TcpStream, seq: u64, detail: &str) {
    log::warn!("request #{seq}: rejected ({detail})");
    respond(
        stream,
        "HTTP/1.1 400 Bad Request",
        &serde_json::json!({ "error": detail }),
    );
}

fn handle_connection(mut stream: TcpStream, state: &ServerState) {
    let seq = state.sequence.fetch_add(1, Ordering::SeqCst) + 1;
    let message = match read_http_message(&mut stream, MAX_REQUEST_BYTES) {
        Ok(m) => m,
        Err(e) => {
            // includes the throwaway shutdown connection, which sends nothing
            if !state.shutdown.load(Ordering::SeqCst) {
                bad_request(&mut stream, seq, &format!("unreadable request: {e}"));
            }
            return;
        }
    };
    let mut parts = message.start_line.split_whitespace();
    let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    if method != "POST" || path != "/predict" {
        bad_request(
            &mut stream,
            seq,
            &format!("unsupported route {method} {path}; this server only answers POST /predict"),
        );
        return;
    }
    let request: PredictRequest = match serde_json::from_slice(&message.body) {
        Ok(r) => r,
        Err(e) => {
            bad_request(&mut stream, seq, &format!("malformed body: {e}"));
            return;
        }
    };
    let n = request.instances.len();
    let dim = state.network.spec().in_width();
    if request.instances.iter().any(|row| row.len() != dim) {
        bad_request(
            &mut stream,
            seq,
            &format!("every instance must have {dim} features"),
        );
        return;
    }

    // all-or-nothing budget charge; refusals leave the counter untouched
    if let Some(budget) = state.options.budget {
        let charge = state
            .served
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |current| {
                current
                    .checked_add(n as u64)
                    .filter(|&next| next <= budget)
            });
        if charge.is_err() {
            log::warn!(
                "request #{seq}: refused, {n} instances would exceed budget {budget} (served {})",
                state.served.load(Ordering::SeqCst)
            );
            respond(
                &mut stream,
                "HTTP/1.1 429 Too Many Requests",
                &serde_json::json!({
                    "error": "query budget exhausted",
                    "budget": budget,
                }),
            );
            return;
        }
    } else {
        state.served.fetch_add(n as u64, Ordering::SeqCst);
    }

    let flat: Vec<f32> = request.instances.into_iter().flatten().collect();
    let labels = match state.network.predict_labels(&flat, n) {
        Ok(l) => l,
        Err(e) => {
            bad_request(&mut stream, seq, &format!("prediction failed: {e}"));
            return;
        }
    };
    log::info!(
        "request #{seq}: {n} instances answered (served total {})",
        state.served.load(Ordering::SeqCst)
    );
    let response = PredictResponse {
        labels,
        model_id: state.options.model_id.clone(),
    };
    respond(
        &mut stream,
        "HTTP/1.1 200 OK",
        &serde_json::to_value(&response).expect("response is json"),
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{remote_predict, ClientError, RemoteConfig};
    use crate::nets::{build_network, NetRole, NetworkSpec};

    fn served_network() -> Network {
        build_network(&NetworkSpec::classifier(
            NetRole::Target,
            2,
            vec![8],
            3,
            21,
        ))
        .unwrap()
    }

    fn start(options: ServeOptions) -> ServerHandle {
        serve_target(served_network(), ("127.0.0.1", 0), options).unwrap()
    }

    #[test]
    fn answers_match_local_forward_and_count_samples() {
        let net = served_network();
        let handle = start(ServeOptions::default());
        let x = vec![0.1f32, -0.4, 1.5, 0.2, -0.9, 0.0];
        let remote = RemoteConfig::new(handle.url(), 3);
        let labels = remote_predict(&remote, &x, 3).unwrap();
        assert_eq!(labels, net.predict_labels(&x, 3).unwrap());
        assert_eq!(handle.queries_served(), 3);
        handle.shutdown();
    }

    #[test]
    fn budget_guard_refuses_and_leaves_counter_unchanged() {
        let handle = start(ServeOptions {
            budget: Some(4),
            model_id: "m".into(),
        });
        let remote = RemoteConfig::new(handle.url(), 3);
        remote_predict(&remote, &[0.0; 6], 3).unwrap();
        assert_eq!(handle.queries_served(), 3);
        // 3 + 2 > 4: refused atomically
        let err = remote_predict(&remote, &[0.0; 4], 2).unwrap_err();
        assert!(matches!(err, ClientError::BudgetRejected), "{err}");
        assert_eq!(handle.queries_served(), 3, "refusal must not charge");
        // 3 + 1 <= 4 still fits
        remote_predict(&remote, &[0.0; 2], 1).unwrap();
        assert_eq!(handle.queries_served(), 4);
        handle.shutdown();
    }

    #[test]
    fn malformed_body_and_wrong_route_get_400() {
        use std::io::{Read, Write};
        let handle = start(ServeOptions::default());
        let send = |raw: &[u8]| -> String {
            let mut s = TcpStream::connect(handle.addr()).unwrap();
            s.write_all(raw).unwrap();
            let mut buf = String::new();
            s.read_to_string(&mut buf).unwrap();
            buf
        };
        let bad_json = send(
            b"POST /predict HTTP/1.1\r\nContent-Length: 9\r\n\r\n{\"bad\": 1",
        );
        assert!(bad_json.starts_with("HTTP/1.1 400"), "{bad_json}");
        assert!(bad_json.contains("malformed body"), "diagnostic body");
        let wrong_route = send(b"GET /predict HTTP/1.1\r\nContent-Length: 0\r\n\r\n");
        assert!(wrong_route.starts_with("HTTP/1.1 400"), "{wrong_route}");
        let wrong_dim = send(
            b"POST /predict HTTP/1.1\r\nContent-Length: 24\r\n\r\n{\"instances\": [[1.0]]}  ",
        );
        assert!(wrong_dim.starts_with("HTTP/1.1 400"), "{wrong_dim}");
        assert_eq!(handle.queries_served(), 0, "rejects never charge");
        handle.shutdown();
    }

    #[test]
    fn concurrent_requests_account_exactly() {
        let handle = start(ServeOptions::default());
        let url = handle.url();
        let threads: Vec<_> = (0..8)
            .map(|_| {
                let url = url.clone();
                std::thread::spawn(move || {
                    let remote = RemoteConfig::new(url, 3);
                    for _ in 0..5 {
                        remote_predict(&remote, &[0.25, -0.5], 1).unwrap();
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        assert_eq!(handle.queries_served(), 40);
        handle.shutdown();
    }

    #[test]
    fn shutdown_is_clean_and_idempotent_on_drop() {
        let handle = start(ServeOptions::default());
        let addr = handle.addr();
        handle.shutdown();
        assert!(
            TcpStream::connect(addr).is_err() || {
                // a racing connect may be accepted by the dying listener;
                // a second one must fail
                std::thread::sleep(std::time::Duration::from_millis(50));
                TcpStream::connect(addr).is_err()
            },
            "listener should be gone after shutdown"
        );
    }
}
