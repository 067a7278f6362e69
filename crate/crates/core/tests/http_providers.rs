mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use common::{solid_png_b64, MockServer};
use poemtale::corpus::EmotionLabel;
use poemtale::embedding::{HttpEmbedder, TextEmbedder};
use poemtale::evaluation::{Captioner, HttpCaptioner};
use poemtale::generation::{
    generate_sequence, BackendDescriptor, BackendKind, GenerationError, GenerationRequest, HttpImageBackend, PromptEntry,
};
use poemtale::provider::{ProviderError, ReqwestTransport, RetryPolicy, Transport};
use poemtale::refinement::{ChatMessage, ChatRequest, DescriptionGenerator, HttpGenerator};
use poemtale::segmentation::{EmotionClassifier, EntityLabel, EntityTagger, HttpAnnotator};
use serde_json::json;

fn transport() -> Arc<dyn Transport> {
    Arc::new(ReqwestTransport::new(Duration::from_secs(10)).unwrap())
}

fn backend(base: &str, options: &[(&str, &str)]) -> HttpImageBackend {
    let descriptor = BackendDescriptor {
        kind: BackendKind::Http,
        endpoint: Some(format!("{base}/generate")),
        model: Some("mock-diffusion".into()),
        options: options.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect::<BTreeMap<_, _>>(),
    };
    HttpImageBackend::new(descriptor, transport(), RetryPolicy::no_backoff(2)).unwrap()
}

fn request(prompts: &[&str], width: u32, height: u32) -> GenerationRequest {
    GenerationRequest {
        poem_id: "p".into(),
        prompts: prompts
            .iter()
            .enumerate()
            .map(|(k, t)| PromptEntry { segment_id: format!("p#{k}"), text: t.to_string() })
            .collect(),
        consistency: true,
        style_directives: None,
        seed: 3,
        width,
        height,
    }
}

#[test]
fn single_red_pixel_is_decoded_and_tagged() {
    let server = MockServer::start(|_, _, _| (200, json!({ "image_b64": solid_png_b64(1, 1, [255, 0, 0]), "meta": { "sampler": "ddim" } }).to_string()));
    let out = generate_sequence(&request(&["a red dot"], 1, 1), &backend(&server.base, &[])).unwrap();
    assert!(out.is_complete());
    let a = &out.artifacts[0];
    assert_eq!(a.image.get_pixel(0, 0).0, [255, 0, 0]);
    assert_eq!(a.backend_meta["backend"], "http");
    assert_eq!(a.backend_meta["model"], "mock-diffusion");
    assert_eq!(a.backend_meta["sampler"], "ddim");
    assert_eq!(a.backend_meta["retries"], "0");
    let seen = server.requests();
    assert_eq!(seen[0].url, "/generate");
    assert_eq!(seen[0].body["prompt"], "a red dot");
    assert_eq!(seen[0].body["seed"], 3);
}

#[test]
fn server_errors_are_retried_and_counted() {
    let server = MockServer::start(|n, _, _| {
        if n < 2 {
            (500, "overloaded".into())
        } else {
            (200, json!({ "image_b64": solid_png_b64(2, 2, [0, 0, 255]) }).to_string())
        }
    });
    let out = generate_sequence(&request(&["blue"], 2, 2), &backend(&server.base, &[])).unwrap();
    assert!(out.is_complete());
    assert_eq!(out.artifacts[0].backend_meta["retries"], "2");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn exhausted_retries_fail_the_segment() {
    let server = MockServer::start(|_, _, _| (503, "down".into()));
    let out = generate_sequence(&request(&["one", "two"], 2, 2), &backend(&server.base, &[])).unwrap();
    let failure = out.failure.unwrap();
    assert_eq!(failure.index, 0);
    assert!(matches!(failure.error, GenerationError::Provider(ProviderError::Status { status: 503, .. })));
    assert!(out.artifacts.is_empty());
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_, _, _| (400, "bad prompt".into()));
    let out = generate_sequence(&request(&["one"], 2, 2), &backend(&server.base, &[])).unwrap();
    assert!(out.failure.is_some());
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn wrong_size_is_rejected() {
    let server = MockServer::start(|_, _, _| (200, json!({ "image_b64": solid_png_b64(3, 3, [0, 0, 0]) }).to_string()));
    let out = generate_sequence(&request(&["x"], 4, 4), &backend(&server.base, &[])).unwrap();
    assert!(matches!(out.failure.unwrap().error, GenerationError::Dimensions { got_w: 3, .. }));
}

#[test]
fn later_images_reference_earlier_segments_and_send_token() {
    std::env::set_var("POEMTALE_MOCK_TOKEN", "s3cret");
    let server = MockServer::start(|_, _, _| (200, json!({ "image_b64": solid_png_b64(2, 2, [9, 9, 9]) }).to_string()));
    let b = backend(&server.base, &[("token_env", "POEMTALE_MOCK_TOKEN"), ("quant", "fp16")]);
    let out = generate_sequence(&request(&["a", "b", "c"], 2, 2), &b).unwrap();
    assert_eq!(out.artifacts.len(), 3);
    assert_eq!(out.artifacts[0].backend_meta["quant"], "fp16");
    assert!(!out.artifacts[0].backend_meta.contains_key("token_env"));
    let seen = server.requests();
    assert_eq!(seen[0].body["reference_ids"], json!([]));
    assert_eq!(seen[2].body["reference_ids"], json!(["p#0", "p#1"]));
    assert!(seen.iter().all(|s| s.authorization.as_deref() == Some("Bearer s3cret")));
}

#[test]
fn annotator_speaks_annotate_protocol() {
    let server = MockServer::start(|_, _, body| {
        let line = body["lines"][0].as_str().unwrap_or("");
        let entities = if line.contains("Ada") { json!([[{ "surface": "Ada", "label": "PERSON" }]]) } else { json!([[]]) };
        (200, json!({ "entities": entities, "emotions": [{ "label": "joy", "confidence": 0.75 }] }).to_string())
    });
    let a = HttpAnnotator::new(server.base.clone(), transport());
    let tags = a.tag("Ada sings").unwrap();
    assert_eq!(tags.len(), 1);
    assert_eq!(tags[0].label, EntityLabel::Person);
    let e = a.classify("Ada sings").unwrap();
    assert_eq!((e.label, e.confidence), (EmotionLabel::Joy, 0.75));
    // Both answers come from one request.
    assert_eq!(server.requests().len(), 1);
    assert_eq!(server.requests()[0].url, "/annotate");
}

#[test]
fn annotator_rejects_mismatched_lengths() {
    let server = MockServer::start(|_, _, _| (200, json!({ "entities": [], "emotions": [] }).to_string()));
    let a = HttpAnnotator::new(server.base.clone(), transport());
    assert!(matches!(a.tag("x"), Err(ProviderError::InvalidResponse(_))));
}

#[test]
fn generator_embedder_and_captioner_round_trip() {
    let server = MockServer::start(|_, url, _| match url {
        "/chat" => (200, json!({ "text": "a lighthouse at dusk" }).to_string()),
        "/embed_text" => (200, json!({ "vector": [0.6, 0.8] }).to_string()),
        "/caption" => (200, json!({ "text": "a grey square" }).to_string()),
        _ => (404, String::new()),
    });
    let g = HttpGenerator::new(format!("{}/chat", server.base), transport());
    let req = ChatRequest { model: "m".into(), messages: vec![ChatMessage::user("hi")], temperature: 0.0, seed: Some(4) };
    assert_eq!(g.complete(&req).unwrap(), "a lighthouse at dusk");

    let e = HttpEmbedder::new(server.base.clone(), transport(), RetryPolicy::no_backoff(0), true);
    assert_eq!(e.embed_text("x").unwrap(), vec![0.6, 0.8]);

    let c = HttpCaptioner::new(server.base.clone(), transport(), RetryPolicy::no_backoff(0));
    let img = poemtale::generation::ImageArtifact {
        segment_id: "s".into(),
        image: image::RgbImage::new(2, 2),
        feature_map: None,
        description: String::new(),
        backend_meta: Default::default(),
    };
    assert_eq!(c.caption(&img).unwrap(), "a grey square");

    let seen = server.requests();
    assert_eq!(seen[0].body["seed"], 4);
    assert_eq!(seen[0].body["messages"][0]["role"], "user");
    assert!(seen[2].body["image_b64"].as_str().is_some_and(|s| !s.is_empty()));
}

#[test]
fn non_finite_embeddings_are_rejected() {
    let server = MockServer::start(|_, _, _| (200, r#"{"vector": []}"#.into()));
    let e = HttpEmbedder::new(server.base.clone(), transport(), RetryPolicy::no_backoff(0), true);
    assert!(matches!(e.embed_text("x"), Err(ProviderError::InvalidResponse(_))));
}
