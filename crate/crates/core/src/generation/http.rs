use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{decode_png_base64, BackendDescriptor, BackendKind, GenerationError, GenerationRequest, ImageArtifact, ImageBackend, SegmentFailure, SequenceOutcome};
use crate::provider::{HttpJsonClient, RetryPolicy, Transport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequestBody {
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub consistent: bool,
    pub reference_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponseBody {
    pub image_b64: String,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

/// Remote text-to-image service. Images in one sequence are requested one
/// at a time; with consistency on, each request lists the segment ids of the
/// images already generated as references.
#[derive(Debug, Clone)]
pub struct HttpImageBackend {
    client: HttpJsonClient,
    descriptor: BackendDescriptor,
}

impl HttpImageBackend {
    pub fn new(descriptor: BackendDescriptor, transport: Arc<dyn Transport>, retry: RetryPolicy) -> Result<Self, GenerationError> {
        descriptor.validate()?;
        if descriptor.kind != BackendKind::Http {
            return Err(GenerationError::Config("descriptor is not an http backend".into()));
        }
        let endpoint = descriptor.endpoint.clone().expect("validated");
        let mut client = HttpJsonClient::new(endpoint, transport, retry);
        if let Some(var) = descriptor.options.get("token_env") {
            client = client.with_token_env(var.clone());
        }
        Ok(HttpImageBackend { client, descriptor })
    }

    /// One request/response exchange for prompt `k` of `req`.
    pub fn http_generate(&self, req: &GenerationRequest, k: usize, references: &[String]) -> Result<ImageArtifact, GenerationError> {
        let body = ImageRequestBody {
            prompt: req.rendered_prompt(k),
            seed: req.seed,
            width: req.width,
            height: req.height,
            consistent: req.consistency,
            reference_ids: if req.consistency { references.to_vec() } else { Vec::new() },
        };
        let (resp, retries): (ImageResponseBody, u32) = self.client.post("", &body)?;
        let image = decode_png_base64(&resp.image_b64)?;
        if image.dimensions() != (req.width, req.height) {
            return Err(GenerationError::Dimensions {
                want_w: req.width,
                want_h: req.height,
                got_w: image.width(),
                got_h: image.height(),
            });
        }
        let mut backend_meta: BTreeMap<String, String> = self
            .descriptor
            .options
            .iter()
            .filter(|(k, _)| k.as_str() != "token_env")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (key, value) in resp.meta {
            let value = match value {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            backend_meta.insert(key, value);
        }
        backend_meta.insert("backend".into(), "http".into());
        backend_meta.insert("model".into(), self.descriptor.model_name());
        backend_meta.insert("retries".into(), retries.to_string());
        Ok(ImageArtifact {
            segment_id: req.prompts[k].segment_id.clone(),
            image,
            feature_map: None,
            description: req.prompts[k].text.clone(),
            backend_meta,
        })
    }
}

impl ImageBackend for HttpImageBackend {
    fn model_name(&self) -> String {
        self.descriptor.model_name()
    }

    fn generate(&self, req: &GenerationRequest) -> SequenceOutcome {
        let mut artifacts: Vec<ImageArtifact> = Vec::with_capacity(req.prompts.len());
        for k in 0..req.prompts.len() {
            let references: Vec<String> = artifacts.iter().map(|a| a.segment_id.clone()).collect();
            match self.http_generate(req, k, &references) {
                Ok(a) => artifacts.push(a),
                Err(error) => {
                    return SequenceOutcome {
                        artifacts,
                        failure: Some(SegmentFailure { index: k, segment_id: req.prompts[k].segment_id.clone(), error }),
                    }
                }
            }
        }
        SequenceOutcome { artifacts, failure: None }
    }
}
