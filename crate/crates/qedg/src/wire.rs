//! Wire protocol shared by the prediction client and server.
//!
//! One endpoint: `POST /predict` with JSON body
//! `{"instances": [[f32,...],...]}`, answered by
//! `{"labels": [int,...], "model_id": string}`. Status 200 on success, 400
//! for malformed requests, 429 when the server-side budget guard trips.
//! Both sides send `Connection: close`; each connection carries exactly one
//! exchange.

use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub instances: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub labels: Vec<usize>,
    pub model_id: String,
}

/// Start line, lowercase-keyed headers, and raw body of one HTTP message.
#[derive(Debug)]
pub struct HttpMessage {
    pub start_line: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpMessage {
    pub fn header(&self, name: &str) -> Option<&str> {
        let name = name.to_ascii_lowercase();
        self.headers
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v.as_str())
    }
}

fn trimmed_line(reader: &mut impl BufRead) -> std::io::Result<String> {
    let mut line = String::new();
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            "connection closed mid-message",
        ));
    }
    while line.ends_with('\n') || line.ends_with('\r') {
        line.pop();
    }
    Ok(line)
}

/// Reads one HTTP request or response from a stream. The body length comes
/// from `Content-Length` when present. Without it, a response body runs to
/// EOF (connection close delimits it), while a request body is empty — a
/// request has no body unless a header announces one, and reading to EOF
/// would deadlock keep-alive clients that wait for our reply.
pub fn read_http_message(stream: &mut impl Read, max_body: usize) -> std::io::Result<HttpMessage> {
    let mut reader = BufReader::new(stream);
    let start_line = trimmed_line(&mut reader)?;
    let mut headers = Vec::new();
    loop {
        let line = trimmed_line(&mut reader)?;
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
    }
    let content_length = headers
        .iter()
        .find(|(k, _)| k == "content-length")
        .and_then(|(_, v)| v.parse::<usize>().ok());
    let body = match content_length {
        Some(len) => {
            if len > max_body {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("body of {len} bytes exceeds limit {max_body}"),
                ));
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body)?;
            body
        }
        None if start_line.starts_with("HTTP/") => {
            let mut body = Vec::new();
            reader.by_ref().take(max_body as u64 + 1).read_to_end(&mut body)?;
            if body.len() > max_body {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("body exceeds limit {max_body}"),
                ));
            }
            body
        }
        None => Vec::new(),
    };
    Ok(HttpMessage {
        start_line,
        headers,
        body,
    })
}

/// Serializes an HTTP message (request or response) with the fixed headers
/// both sides of this protocol use.
pub fn write_http_message(start_line: &str, extra_headers: &[(&str, &str)], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 256);
    out.extend_from_slice(start_line.as_bytes());
    out.extend_from_slice(b"\r\n");
    for (k, v) in extra_headers {
        out.extend_from_slice(k.as_bytes());
        out.extend_from_slice(b": ");
        out.extend_from_slice(v.as_bytes());
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(b"Content-Type: application/json\r\n");
    out.extend_from_slice(format!("Content-Length: {}\r\n", body.len()).as_bytes());
    out.extend_from_slice(b"Connection: close\r\n\r\n");
    out.extend_from_slice(body);
    out
}
