#![allow(dead_code)]

use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use image::{Rgb, RgbImage};
use poemtale::generation::ImageArtifact;
use serde_json::Value;

#[derive(Debug, Clone)]
pub struct Seen {
    pub url: String,
    pub body: Value,
    pub authorization: Option<String>,
}

/// Local HTTP server answering each POST with `respond(request_number, url,
/// body)`. Stops when dropped.
pub struct MockServer {
    pub base: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start<F>(respond: F) -> Self
    where
        F: Fn(usize, &str, &Value) -> (u16, String) + Send + 'static,
    {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind mock server"));
        let base = format!("http://{}", server.server_addr().to_ip().expect("ip address"));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (srv, log) = (server.clone(), seen.clone());
        let handle = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut text = String::new();
                req.as_reader().read_to_string(&mut text).unwrap();
                let body: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
                let authorization = req
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.to_string());
                let url = req.url().to_string();
                let n = {
                    let mut log = log.lock().unwrap();
                    log.push(Seen { url: url.clone(), body: body.clone(), authorization });
                    log.len() - 1
                };
                let (status, reply) = respond(n, &url, &body);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let _ = req.respond(tiny_http::Response::from_string(reply).with_status_code(status).with_header(header));
            }
        });
        MockServer { base, seen, server, handle: Some(handle) }
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub fn solid_png_b64(width: u32, height: u32, rgb: [u8; 3]) -> String {
    let artifact = ImageArtifact {
        segment_id: String::new(),
        image: RgbImage::from_pixel(width, height, Rgb(rgb)),
        feature_map: None,
        description: String::new(),
        backend_meta: Default::default(),
    };
    artifact.png_base64()
}
