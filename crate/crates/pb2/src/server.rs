//! HTTP service for the human teacher and the observer dashboard.
//!
//! | method | path | response |
//! |---|---|---|
//! | GET | `/api/status` | progress snapshot, `state` is `"idle"` before training |
//! | GET | `/api/queries/next` | `{ticket_id, seg0, seg1}` with point lists, or 204 |
//! | POST | `/api/queries/{id}/label` | body `{"y": [1,0] \| [0,1] \| [0.5,0.5]}` |
//! | GET | `/api/metrics` | evaluation rows so far |
//! | GET | `/api/trajectories/recent` | latest episode of every agent as trajectory records |
//! | GET | `/`, `/assets/...` | static UI files |

use std::io::Read;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use anyhow::{anyhow, Result};
use pb2_core::rewardmodel::Label;
use pb2_core::teacher::TicketError;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::formats::trajectory_records;
use crate::human::Hub;

/// Message returned with every rejected label body.
pub const LABEL_SCHEMA: &str = r#"expected a JSON body {"y": [1,0] | [0,1] | [0.5,0.5]}"#;

const MAX_BODY: u64 = 64 * 1024;

const FALLBACK_INDEX: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>pb2</title></head>\n<body><p>No UI assets configured. The JSON API lives under <code>/api/</code>.</p></body></html>\n";

#[derive(Debug, Serialize)]
pub struct StatusBody {
    pub state: String,
    pub step: u64,
    pub feedback_used: usize,
    pub feedback_budget: usize,
    pub pending_queries: usize,
    pub skipped_queries: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryBody {
    pub ticket_id: u64,
    pub seg0: Vec<[f32; 2]>,
    pub seg1: Vec<[f32; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    y: Label,
}

/// A running service. Dropping it stops the listener.
pub struct Service {
    server: Arc<Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
    hub: Arc<Hub>,
}

impl Service {
    /// Binds `127.0.0.1:port` (0 picks a free port). A busy port is an error.
    pub fn start(hub: Arc<Hub>, port: u16, assets: Option<PathBuf>) -> Result<Self> {
        let server = Server::http(("127.0.0.1", port))
            .map_err(|e| anyhow!("cannot listen on port {port}: {e}"))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| anyhow!("listener has no IP address"))?;
        let server = Arc::new(server);
        hub.lock().serving = true;
        let (s, h) = (server.clone(), hub.clone());
        let worker = thread::spawn(move || {
            for request in s.incoming_requests() {
                if let Err(e) = handle(&h, assets.as_deref(), request) {
                    log::warn!("failed to answer request: {e}");
                }
            }
        });
        Ok(Self {
            server,
            addr,
            worker: Some(worker),
            hub,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the listener stops.
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.hub.lock().serving = false;
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

type Reply = Response<std::io::Cursor<Vec<u8>>>;

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header")
}

fn json_reply(status: u16, value: &impl Serialize) -> Reply {
    let body = serde_json::to_vec(value).unwrap_or_else(|_| b"null".to_vec());
    Response::from_data(body)
        .with_status_code(status)
        .with_header(header("Content-Type", "application/json"))
}

fn error_reply(status: u16, message: &str) -> Reply {
    json_reply(status, &json!({ "error": message }))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

fn static_file(assets: Option<&Path>, rel: &str) -> Reply {
    let Some(root) = assets else {
        return if rel == "index.html" {
            Response::from_data(FALLBACK_INDEX.as_bytes().to_vec())
                .with_header(header("Content-Type", "text/html; charset=utf-8"))
        } else {
            error_reply(404, "no such asset")
        };
    };
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return error_reply(404, "no such asset");
    }
    let path = root.join(rel);
    match std::fs::read(&path) {
        Ok(bytes) => {
            Response::from_data(bytes).with_header(header("Content-Type", content_type(&path)))
        }
        Err(_) => error_reply(404, "no such asset"),
    }
}

fn handle(hub: &Hub, assets: Option<&Path>, mut request: Request) -> std::io::Result<()> {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let method = request.method().clone();
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    let reply = match (method, segments.as_slice()) {
        (Method::Get, ["api", "status"]) => {
            let s = hub.lock();
            let phase = serde_json::to_value(s.progress.phase)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            json_reply(
                200,
                &StatusBody {
                    state: phase,
                    step: s.progress.step,
                    feedback_used: s.progress.feedback_used,
                    feedback_budget: s.progress.feedback_budget,
                    pending_queries: s.tickets.pending_count(),
                    skipped_queries: s.skipped,
                },
            )
        }
        (Method::Get, ["api", "queries", "next"]) => {
            let s = hub.lock();
            match s.tickets.next_pending() {
                Some(t) => json_reply(
                    200,
                    &QueryBody {
                        ticket_id: t.id,
                        seg0: t.seg0.points(),
                        seg1: t.seg1.points(),
                    },
                ),
                None => Response::from_data(Vec::new()).with_status_code(204),
            }
        }
        (Method::Post, ["api", "queries", id, "label"]) => match id.parse::<u64>() {
            Err(_) => error_reply(404, "unknown ticket"),
            Ok(id) => {
                let mut body = String::new();
                let read = request.as_reader().take(MAX_BODY).read_to_string(&mut body);
                match read
                    .ok()
                    .and_then(|_| serde_json::from_str::<LabelBody>(&body).ok())
                {
                    None => error_reply(400, LABEL_SCHEMA),
                    Some(LabelBody { y }) => match hub.answer(id, y) {
                        Ok(()) => json_reply(200, &json!({ "ticket_id": id, "y": y })),
                        Err(e @ TicketError::Unknown(_)) => error_reply(404, &e.to_string()),
                        Err(e @ TicketError::NotPending(_)) => error_reply(409, &e.to_string()),
                    },
                }
            }
        },
        (Method::Get, ["api", "metrics"]) => json_reply(200, &hub.lock().metrics),
        (Method::Get, ["api", "trajectories", "recent"]) => {
            let s = hub.lock();
            let with_reward = !s.human_mode;
            let body: Vec<_> = s
                .recent
                .iter()
                .map(|t| trajectory_records(t, with_reward))
                .collect();
            json_reply(200, &body)
        }
        (_, ["api", ..]) => {
            let known = matches!(
                segments.as_slice(),
                ["api", "status"]
                    | ["api", "queries", "next"]
                    | ["api", "queries", _, "label"]
                    | ["api", "metrics"]
                    | ["api", "trajectories", "recent"]
            );
            if known {
                error_reply(405, "method not allowed")
            } else {
                error_reply(404, "no such endpoint")
            }
        }
        (Method::Get, [""]) | (Method::Get, ["index.html"]) => static_file(assets, "index.html"),
        (Method::Get, ["assets", rest @ ..]) => static_file(assets, &rest.join("/")),
        _ => error_reply(404, "not found"),
    };
    request.respond(reply)
}
