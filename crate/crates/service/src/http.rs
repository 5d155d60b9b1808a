//! Thin HTTP front over [`Service::route`].

use std::io::{self, Read};
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Response, Server};

use crate::api::{ApiRequest, ApiResponse, Service};

/// Upper bound on accepted request bodies.
const MAX_BODY: u64 = 8 * 1024 * 1024;

pub struct HttpServer {
    server: Arc<Server>,
    threads: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

fn bearer(req: &tiny_http::Request) -> Option<String> {
    req.headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .and_then(|h| h.value.as_str().strip_prefix("Bearer ").map(|t| t.trim().to_string()))
}

fn handle(service: &Service, mut req: tiny_http::Request) {
    let mut body = String::new();
    let read = req.as_reader().take(MAX_BODY).read_to_string(&mut body);
    let response = match read {
        Ok(_) => service.route(&ApiRequest {
            method: req.method().as_str().to_ascii_uppercase(),
            path: req.url().to_string(),
            token: bearer(&req),
            body,
        }),
        Err(e) => ApiResponse::error(400, "MalformedBody", e.to_string()),
    };
    let content_type = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let reply = Response::from_string(response.body).with_status_code(response.status).with_header(content_type);
    if let Err(e) = req.respond(reply) {
        eprintln!("failed to send response: {e}");
    }
}

impl HttpServer {
    /// Binds `addr` (port 0 picks a free port) and serves on `threads` threads.
    pub fn start(service: Arc<Service>, addr: &str, threads: usize) -> io::Result<HttpServer> {
        let server = Server::http(addr).map_err(io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let threads = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let service = Arc::clone(&service);
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        handle(&service, req);
                    }
                })
            })
            .collect();
        Ok(HttpServer { server, threads, addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until every serving thread exits.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        for _ in &self.threads {
            self.server.unblock();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}
