//! JSON-over-HTTP clients for hosted text/vision and image models.

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::{
    parse_yes_no, BackendError, BackendIdentity, CaptionRequest, Capability, EntityDraft,
    ImageGenBackend, KnowledgeDoc, PromptTemplates, RenderRequest, TextGenBackend, TripletDraft,
    Verdict, COLOR_PALETTE,
};
use crate::bitmap::Bitmap;
use crate::question::relation_words;
use crate::seed;
use crate::skg::{strip_article, CatalogObject, Entity, Scene, SceneSource, Triplet};

const STRICT_SUFFIX: &str = "\n\nRespond with the list only, exactly in the requested format, with no other text.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    /// Token given inline, normally through `${VAR}` interpolation. Never
    /// serialized.
    #[serde(skip_serializing)]
    pub token: Option<String>,
    pub model: String,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub reparse_retries: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            token_env: None,
            token: None,
            model: String::new(),
            timeout_secs: 60.0,
            max_in_flight: 4,
            max_retries: 3,
            backoff_base_ms: 500,
            reparse_retries: 2,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.endpoint.trim().is_empty() {
            return Err(BackendError::InvalidRequest("remote endpoint is empty".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(BackendError::InvalidRequest("timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(BackendError::InvalidRequest("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// Counting semaphore with a high-water mark.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlightLimiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.0.state.lock().expect("limiter lock");
        s.0 -= 1;
        self.0.freed.notify_one();
    }
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), state: Mutex::new((0, 0)), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock().expect("limiter lock");
        while s.0 >= self.max {
            s = self.freed.wait(s).expect("limiter lock");
        }
        s.0 += 1;
        s.1 = s.1.max(s.0);
        Permit(self)
    }

    /// Highest number of permits ever held at once.
    pub fn peak(&self) -> usize {
        self.state.lock().expect("limiter lock").1
    }
}

#[derive(Debug)]
struct HttpClient {
    config: BackendConfig,
    agent: ureq::Agent,
    limiter: Arc<InFlightLimiter>,
}

impl HttpClient {
    fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = Arc::new(InFlightLimiter::new(config.max_in_flight));
        Ok(Self { config, agent, limiter })
    }

    fn token(&self) -> Option<String> {
        self.config.token.clone().or_else(|| self.config.token_env.as_ref().and_then(|v| std::env::var(v).ok()))
    }

    /// Posts with retries on transport errors, 429 and 5xx. The idempotency
    /// key stays fixed across retries of one logical request.
    fn post(&self, body: &Value, idempotency_key: &str) -> Result<Vec<u8>, BackendError> {
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let wait = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let _permit = self.limiter.acquire();
            let mut req = self
                .agent
                .post(&self.config.endpoint)
                .header("Idempotency-Key", idempotency_key);
            if let Some(token) = self.token() {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp
                            .body_mut()
                            .with_config()
                            .limit(64 << 20)
                            .read_to_vec()
                            .map_err(|e| BackendError::MalformedResponse(e.to_string()));
                    }
                    last = format!("HTTP {status}");
                    if status != 429 && status < 500 {
                        return Err(BackendError::BackendUnavailable(last));
                    }
                }
                Err(e) => last = e.to_string(),
            }
            log::debug!("request {idempotency_key} attempt {attempt} failed: {last}");
        }
        Err(BackendError::BackendUnavailable(last))
    }
}

fn stage_key(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Client for a chat-completion style service: `{model, messages,
/// temperature, seed}` in, `{text}` out.
#[derive(Debug)]
pub struct RemoteTextBackend {
    http: HttpClient,
    templates: Arc<PromptTemplates>,
}

impl RemoteTextBackend {
    pub fn new(config: BackendConfig, templates: PromptTemplates) -> Result<Self, BackendError> {
        Ok(Self { http: HttpClient::new(config)?, templates: Arc::new(templates) })
    }

    pub fn limiter(&self) -> Arc<InFlightLimiter> {
        self.http.limiter.clone()
    }

    fn complete(&self, template: &str, prompt: &str, seed: u64, key: u64, image: Option<&Bitmap>) -> Result<String, BackendError> {
        let mut message = json!({ "role": "user", "content": prompt });
        if let Some(img) = image {
            let png = img.encode_png().map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
            message["images"] = json!([base64::engine::general_purpose::STANDARD.encode(png)]);
        }
        let body = json!({
            "model": self.http.config.model,
            "messages": [message],
            "temperature": self.templates.temperature(template),
            "seed": seed,
        });
        let bytes = self.http.post(&body, &format!("{key:016x}"))?;
        let reply: Value = serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::MalformedResponse(format!("response body: {e}")))?;
        reply
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::MalformedResponse("response has no text field".into()))
    }

    /// Renders, sends and parses, re-asking with a stricter suffix when the
    /// reply cannot be parsed.
    fn ask<T>(
        &self,
        template: &str,
        values: &[(&str, &str)],
        seed: u64,
        image: Option<&Bitmap>,
        parse: impl Fn(&str) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let base = self
            .templates
            .render(template, values)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let mut last = None;
        for r in 0..=self.http.config.reparse_retries {
            let prompt = if r == 0 { base.clone() } else { format!("{base}{STRICT_SUFFIX}") };
            let key = seed::derive(seed::stage(seed, template), r as u64, 0);
            let text = self.complete(template, &prompt, seed, key, image)?;
            match parse(&text) {
                Ok(v) => return Ok(v),
                Err(BackendError::MalformedResponse(m)) => last = Some(m),
                Err(e) => return Err(e),
            }
        }
        Err(BackendError::MalformedResponse(last.unwrap_or_default()))
    }
}

fn list_items(text: &str) -> Vec<String> {
    text.lines()
        .flat_map(|l| l.split(if l.contains(',') && !l.contains('|') { ',' } else { '\n' }))
        .map(|s| {
            s.trim()
                .trim_start_matches(|c: char| c.is_ascii_digit() || "-*.) ".contains(c))
                .trim()
                .trim_matches('"')
                .to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

fn entity_lines(entities: &[Entity]) -> String {
    entities.iter().map(|e| format!("- {}", e.description)).collect::<Vec<_>>().join("\n")
}

fn relation_lines(entities: &[Entity], triplets: &[Triplet]) -> String {
    let name = |id: &str| entities.iter().find(|e| e.id == id).map_or(id.to_string(), |e| e.bare_description().to_string());
    triplets
        .iter()
        .map(|t| format!("- the {} is {} the {}", name(&t.subject), relation_words(&t.relation), name(&t.object)))
        .collect::<Vec<_>>()
        .join("\n")
}

impl TextGenBackend for RemoteTextBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity { backend: "remote".into(), model: self.http.config.model.clone() }
    }

    fn capabilities(&self) -> BTreeSet<Capability> {
        Capability::ALL.into_iter().collect()
    }

    fn gen_scenes(&self, count: usize, seed: u64) -> Result<Vec<Scene>, BackendError> {
        let n = count.to_string();
        self.ask("scenes", &[("count", &n)], seed, None, |text| {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for item in list_items(text) {
                let Ok(scene) = Scene::new(&item, SceneSource::Llm) else { continue };
                if seen.insert(scene.id.clone()) {
                    out.push(scene);
                }
            }
            if out.len() < count {
                return Err(BackendError::MalformedResponse(format!(
                    "{} distinct scenes, {count} requested",
                    out.len()
                )));
            }
            out.truncate(count);
            Ok(out)
        })
    }

    fn gen_objects(&self, scene: &Scene, knowledge: &[KnowledgeDoc], seed: u64) -> Result<Vec<CatalogObject>, BackendError> {
        let prefix: String = knowledge.iter().map(|d| format!("Reference: {}\n\n", d.text)).collect();
        self.ask(
            "objects",
            &[("knowledge", &prefix), ("scene", &scene.name), ("min_objects", "5")],
            seed,
            None,
            |text| {
                let mut out: Vec<CatalogObject> = Vec::new();
                for item in list_items(text) {
                    let obj = match item.split_once('(') {
                        Some((l, q)) => CatalogObject {
                            scene_id: scene.id.clone(),
                            label: l.trim().to_lowercase(),
                            disambiguator: Some(q.trim_end_matches(')').trim().to_lowercase()),
                        },
                        None => CatalogObject::new(&scene.id, &item.to_lowercase()),
                    };
                    if !out.contains(&obj) {
                        out.push(obj);
                    }
                }
                if out.len() < 5 {
                    return Err(BackendError::MalformedResponse(format!("only {} objects", out.len())));
                }
                Ok(out)
            },
        )
    }

    fn select_subset(&self, scene: &Scene, objects: &[CatalogObject], seed: u64) -> Result<Vec<CatalogObject>, BackendError> {
        let listing = objects.iter().map(CatalogObject::display_name).collect::<Vec<_>>().join(", ");
        self.ask("subset", &[("scene", &scene.name), ("objects", &listing)], seed, None, |text| {
            let picked: Vec<CatalogObject> = text
                .split([',', '\n'])
                .map(|s| s.trim().trim_end_matches('.').to_lowercase())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    objects
                        .iter()
                        .find(|o| o.display_name().eq_ignore_ascii_case(&s) || o.label.eq_ignore_ascii_case(&s))
                        .cloned()
                        .ok_or_else(|| BackendError::MalformedResponse(format!("{s:?} is not a candidate")))
                })
                .collect::<Result<_, _>>()?;
            if !(2..=4).contains(&picked.len()) {
                return Err(BackendError::MalformedResponse(format!("{} objects picked", picked.len())));
            }
            Ok(picked)
        })
    }

    fn enrich_entities(&self, scene: &Scene, chosen: &[CatalogObject], max_entities: usize, seed: u64) -> Result<Vec<EntityDraft>, BackendError> {
        let listing = chosen.iter().map(CatalogObject::display_name).collect::<Vec<_>>().join(", ");
        let cap = max_entities.to_string();
        self.ask(
            "enrich",
            &[("scene", &scene.name), ("objects", &listing), ("max_entities", &cap)],
            seed,
            None,
            |text| {
                let mut out = Vec::new();
                for line in text.lines().filter(|l| l.contains('|')) {
                    let parts: Vec<&str> = line.split('|').map(str::trim).collect();
                    let [name, description, color] = parts[..] else {
                        return Err(BackendError::MalformedResponse(format!("bad entity line {line:?}")));
                    };
                    let name = name.trim_start_matches(['-', '*', ' ']);
                    let base = chosen
                        .iter()
                        .find(|o| o.display_name().eq_ignore_ascii_case(name) || o.label.eq_ignore_ascii_case(name))
                        .ok_or_else(|| BackendError::MalformedResponse(format!("{name:?} was not selected")))?;
                    let mut attributes = BTreeMap::new();
                    let color = color.to_lowercase();
                    if COLOR_PALETTE.iter().any(|(c, _)| *c == color) {
                        attributes.insert("color".to_string(), color);
                    }
                    out.push(EntityDraft { base_object: base.clone(), description: description.to_string(), attributes });
                }
                if out.is_empty() {
                    return Err(BackendError::MalformedResponse("no entity lines".into()));
                }
                Ok(out)
            },
        )
    }

    fn gen_triplets(&self, scene: &Scene, entities: &[Entity], seed: u64) -> Result<Vec<TripletDraft>, BackendError> {
        let listing = entity_lines(entities);
        self.ask("triplets", &[("scene", &scene.name), ("entities", &listing)], seed, None, |text| {
            let find = |name: &str| {
                let name = strip_article(name.trim_start_matches(['-', '*', ' ']));
                entities
                    .iter()
                    .find(|e| e.bare_description().eq_ignore_ascii_case(name))
                    .map(|e| e.id.clone())
                    .ok_or_else(|| BackendError::MalformedResponse(format!("unknown object {name:?}")))
            };
            text.lines()
                .filter(|l| l.contains('|'))
                .map(|line| {
                    let parts: Vec<&str> = line.split('|').map(str::trim).collect();
                    let [s, rel, o] = parts[..] else {
                        return Err(BackendError::MalformedResponse(format!("bad relation line {line:?}")));
                    };
                    Ok(TripletDraft { subject: find(s)?, phrase: rel.to_string(), object: find(o)? })
                })
                .collect()
        })
    }

    fn gen_caption(&self, request: &CaptionRequest<'_>, seed: u64) -> Result<String, BackendError> {
        let scene_clause = request.scene.map(|s| format!(" of a {}", s.name)).unwrap_or_default();
        let entities = request.entities.iter().map(|e| e.description.as_str()).collect::<Vec<_>>().join(", ");
        let relations = relation_lines(request.entities, request.triplets).replace('\n', "; ");
        let negative = request
            .negative
            .map(|o| format!("Do not mention any {}.\n", o.display_name()))
            .unwrap_or_default();
        self.ask(
            "caption",
            &[
                ("scene_clause", &scene_clause),
                ("entities", &entities),
                ("relations", &relations),
                ("negative_clause", &negative),
            ],
            seed,
            None,
            |text| {
                let t = text.trim();
                if t.is_empty() {
                    Err(BackendError::MalformedResponse("empty caption".into()))
                } else {
                    Ok(t.to_string())
                }
            },
        )
    }

    fn paraphrase_question(&self, question: &str, seed: u64) -> Result<String, BackendError> {
        self.ask("paraphrase", &[("question", question)], seed, None, |text| {
            let t = text.trim();
            if t.ends_with('?') {
                Ok(t.to_string())
            } else {
                Err(BackendError::MalformedResponse("paraphrase is not a question".into()))
            }
        })
    }

    fn verify_image(&self, image: &Bitmap, entities: &[Entity], triplets: &[Triplet]) -> Result<Verdict, BackendError> {
        let e = entity_lines(entities);
        let r = relation_lines(entities, triplets);
        let seed = seed::mix64(image.rgb.len() as u64);
        self.ask("verify_image", &[("entities", &e), ("relations", &r)], seed, Some(image), |text| {
            Ok(if parse_yes_no(text)? { Verdict::yes() } else { Verdict::no(text.trim()) })
        })
    }

    fn verify_qa(&self, image: &Bitmap, question: &str, answer: &str) -> Result<Verdict, BackendError> {
        let seed = stage_key(question) ^ stage_key(answer);
        self.ask("verify_qa", &[("question", question), ("answer", answer)], seed, Some(image), |text| {
            Ok(if parse_yes_no(text)? { Verdict::yes() } else { Verdict::no(text.trim()) })
        })
    }
}

/// Client for a layout-conditioned image service: `{caption, boxes, seed}`
/// in, PNG bytes out.
#[derive(Debug)]
pub struct RemoteImageBackend {
    http: HttpClient,
}

impl RemoteImageBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        Ok(Self { http: HttpClient::new(config)? })
    }

    pub fn limiter(&self) -> Arc<InFlightLimiter> {
        self.http.limiter.clone()
    }
}

impl ImageGenBackend for RemoteImageBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity { backend: "remote".into(), model: self.http.config.model.clone() }
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn render(&self, request: &RenderRequest, seed: u64) -> Result<Bitmap, BackendError> {
        let boxes: Vec<Value> = request
            .items
            .iter()
            .map(|i| json!({ "label": i.entity.bare_description(), "box": i.bbox }))
            .collect();
        let body = json!({
            "model": self.http.config.model,
            "caption": request.caption,
            "boxes": boxes,
            "width": request.canvas.width,
            "height": request.canvas.height,
            "seed": seed,
        });
        let bytes = self.http.post(&body, &format!("{:016x}", seed::mix64(seed)))?;
        Bitmap::decode_png(&bytes).map_err(|e| BackendError::MalformedResponse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::RenderItem;
    use crate::relation::{BoundingBox, Canvas};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[derive(Debug, Clone)]
    struct Seen {
        headers: BTreeMap<String, String>,
        body: Value,
    }

    /// Serves scripted (status, content type, body) replies in order,
    /// concurrently, each after `delay`.
    fn mock(replies: Vec<(u16, &'static str, Vec<u8>)>, delay: Duration) -> (String, Arc<Mutex<Vec<Seen>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/generate", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let replies = Arc::new(replies);
        let next = Arc::new(AtomicUsize::new(0));
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let (log, replies, next) = (log.clone(), replies.clone(), next.clone());
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut headers = BTreeMap::new();
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    loop {
                        line.clear();
                        reader.read_line(&mut line).unwrap();
                        if line.trim().is_empty() {
                            break;
                        }
                        let (k, v) = line.split_once(':').unwrap();
                        headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                    }
                    let len: usize = headers.get("content-length").map_or(0, |v| v.parse().unwrap());
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    log.lock().unwrap().push(Seen { headers, body: serde_json::from_slice(&body).unwrap() });
                    std::thread::sleep(delay);
                    let (status, ctype, payload) = &replies[i.min(replies.len() - 1)];
                    let head = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                        payload.len()
                    );
                    stream.write_all(head.as_bytes()).unwrap();
                    stream.write_all(payload).unwrap();
                });
            }
        });
        (url, seen)
    }

    fn text(t: &str) -> (u16, &'static str, Vec<u8>) {
        (200, "application/json", serde_json::to_vec(&json!({ "text": t })).unwrap())
    }

    fn config(url: &str) -> BackendConfig {
        BackendConfig {
            endpoint: url.into(),
            model: "vision-1".into(),
            backoff_base_ms: 5,
            timeout_secs: 5.0,
            ..Default::default()
        }
    }

    #[test]
    fn scenes_request_shape_and_auth() {
        let (url, seen) = mock(vec![text("1. beach\n2. kitchen\n3. Beach\n4. library")], Duration::ZERO);
        std::env::set_var("SPATIALKG_TEST_TOKEN_A", "s3cret");
        let cfg = BackendConfig { token_env: Some("SPATIALKG_TEST_TOKEN_A".into()), ..config(&url) };
        let b = RemoteTextBackend::new(cfg, PromptTemplates::embedded()).unwrap();
        let scenes = b.gen_scenes(3, 42).unwrap();
        let names: Vec<&str> = scenes.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["beach", "kitchen", "library"]);
        assert!(scenes.iter().all(|s| s.source == SceneSource::Llm));
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].headers["authorization"], "Bearer s3cret");
        assert_eq!(seen[0].body["model"], "vision-1");
        assert_eq!(seen[0].body["seed"], 42);
        assert_eq!(seen[0].body["temperature"], 1.0);
        assert!(seen[0].body["messages"][0]["content"].as_str().unwrap().contains("List 3 distinct"));
    }

    #[test]
    fn retries_keep_the_idempotency_key() {
        let (url, seen) = mock(
            vec![(503, "text/plain", b"busy".to_vec()), (429, "text/plain", vec![]), text("A park scene.")],
            Duration::ZERO,
        );
        let b = RemoteTextBackend::new(config(&url), PromptTemplates::embedded()).unwrap();
        let req = CaptionRequest { scene: None, entities: &[], triplets: &[], negative: None };
        assert_eq!(b.gen_caption(&req, 9).unwrap(), "A park scene.");
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        let keys: BTreeSet<&String> = seen.iter().map(|s| &s.headers["idempotency-key"]).collect();
        assert_eq!(keys.len(), 1);
    }

    #[test]
    fn exhausted_retries_are_unavailable() {
        let (url, _) = mock(vec![(500, "text/plain", vec![])], Duration::ZERO);
        let cfg = BackendConfig { max_retries: 1, ..config(&url) };
        let b = RemoteTextBackend::new(cfg, PromptTemplates::embedded()).unwrap();
        assert!(matches!(b.paraphrase_question("Is it?", 1), Err(BackendError::BackendUnavailable(_))));
    }

    #[test]
    fn non_yes_no_is_malformed_after_reparse() {
        let (url, seen) = mock(vec![text("maybe")], Duration::ZERO);
        let b = RemoteTextBackend::new(config(&url), PromptTemplates::embedded()).unwrap();
        let img = Bitmap::filled(2, 2, [0, 0, 0]);
        assert!(matches!(b.verify_qa(&img, "Is there a cup in the image?", "Yes"), Err(BackendError::MalformedResponse(_))));
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert!(seen[2].body["messages"][0]["content"].as_str().unwrap().ends_with(STRICT_SUFFIX.trim_start()));
        assert_eq!(seen[0].body["temperature"], 0.0);
        assert!(seen[0].body["messages"][0]["images"][0].as_str().is_some());
        // reparse attempts are distinct logical requests
        assert_ne!(seen[0].headers["idempotency-key"], seen[1].headers["idempotency-key"]);
    }

    #[test]
    fn verdicts_parse() {
        let (url, _) = mock(vec![text("No. The cup is missing.")], Duration::ZERO);
        let b = RemoteTextBackend::new(config(&url), PromptTemplates::embedded()).unwrap();
        let v = b.verify_image(&Bitmap::filled(2, 2, [0, 0, 0]), &[], &[]).unwrap();
        assert!(!v.accepted);
        assert!(v.reason.unwrap().contains("missing"));
    }

    #[test]
    fn in_flight_bound_holds() {
        let (url, _) = mock(vec![text("ok?")], Duration::from_millis(40));
        let cfg = BackendConfig { max_in_flight: 2, ..config(&url) };
        let b = Arc::new(RemoteTextBackend::new(cfg, PromptTemplates::embedded()).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let b = b.clone();
                std::thread::spawn(move || b.paraphrase_question("q?", i).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let peak = b.limiter().peak();
        assert!((1..=2).contains(&peak), "peak {peak}");
    }

    #[test]
    fn triplet_lines_map_to_ids() {
        let (url, _) = mock(vec![text("- a blue cup | to the left of | the red plate\n")], Duration::ZERO);
        let b = RemoteTextBackend::new(config(&url), PromptTemplates::embedded()).unwrap();
        let s = Scene::new("kitchen", SceneSource::Llm).unwrap();
        let es = vec![
            Entity::new(&s.id, 0, CatalogObject::new(&s.id, "cup"), "a blue cup", BTreeMap::new()),
            Entity::new(&s.id, 1, CatalogObject::new(&s.id, "plate"), "a red plate", BTreeMap::new()),
        ];
        let ts = b.gen_triplets(&s, &es, 3).unwrap();
        assert_eq!(ts, vec![TripletDraft { subject: es[0].id.clone(), phrase: "to the left of".into(), object: es[1].id.clone() }]);
    }

    #[test]
    fn image_backend_decodes_png() {
        let mut img = Bitmap::filled(8, 8, [1, 2, 3]);
        img.put(0, 0, [9, 9, 9]);
        let png = img.encode_png().unwrap();
        let (url, seen) = mock(vec![(200, "image/png", png)], Duration::ZERO);
        let b = RemoteImageBackend::new(config(&url)).unwrap();
        let s = Scene::new("kitchen", SceneSource::Llm).unwrap();
        let e = Entity::new(&s.id, 0, CatalogObject::new(&s.id, "cup"), "a blue cup", BTreeMap::new());
        let req = RenderRequest {
            scene_name: "kitchen".into(),
            caption: "A realistic scene".into(),
            canvas: Canvas::default(),
            items: vec![RenderItem { entity: e, bbox: BoundingBox::new(1, 2, 3, 4) }],
        };
        assert_eq!(b.render(&req, 5).unwrap(), img);
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].body["boxes"][0]["box"], json!([1, 2, 3, 4]));
        assert_eq!(seen[0].body["caption"], "A realistic scene");
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::default().validate().is_err());
        let ok = config("http://x");
        assert!(ok.validate().is_ok());
        assert!(BackendConfig { max_in_flight: 0, ..ok.clone() }.validate().is_err());
        assert!(BackendConfig { timeout_secs: 0.0, ..ok }.validate().is_err());
    }
}
