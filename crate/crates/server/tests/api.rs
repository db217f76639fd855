use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use reminisce_core::dialogue::DialogueEngine;
use reminisce_core::llm::{ChatMessage, CompletionParams, LlmError, LlmProvider, ScriptedProvider};
use reminisce_core::store::Store;
use reminisce_server::{router, AppState};
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tempfile::TempDir;

const TOKEN: &str = "test-token";
const PNG: &[u8] = b"\x89PNG\r\n\x1a\nfake";

struct Server {
    base: String,
    client: reqwest::Client,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn start(dir: &TempDir, llm: Arc<dyn LlmProvider>) -> Self {
        let store = Store::open(dir.path()).unwrap();
        let state = AppState::new(store, DialogueEngine::default(), llm)
            .with_token(TOKEN)
            .with_clock(Arc::new(|| 1_000));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let task = tokio::spawn(async move {
            axum::serve(listener, router(state)).await.unwrap();
        });
        Self {
            base,
            client: reqwest::Client::new(),
            task,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(self.url(path)).bearer_auth(TOKEN).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .client
            .post(self.url(path))
            .bearer_auth(TOKEN)
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn upload(&self, user: &str, description: &str, members: &str, uploaded_at: i64) -> (StatusCode, Value) {
        let form = Form::new()
            .text("description", description.to_string())
            .text("members", members.to_string())
            .text("uploaded_at", uploaded_at.to_string())
            .part("image", Part::bytes(PNG.to_vec()).file_name("photo.png"));
        let r = self
            .client
            .post(self.url(&format!("/api/users/{user}/photos")))
            .bearer_auth(TOKEN)
            .multipart(form)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    fn stop(self) {
        self.task.abort();
    }
}

fn grandpa() -> Value {
    json!({
        "display_name": "Mr. Chan",
        "background": "retired teacher",
        "profile": {"likes": ["calligraphy"], "dislikes": []},
        "family": [
            {"name": "grandson", "relationship": "grandson"},
            {"name": "daughter", "relationship": "daughter"}
        ]
    })
}

async fn new_user(server: &Server) -> String {
    let (status, body) = server.post("/api/users", grandpa()).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["user_id"].as_str().unwrap().to_string()
}

fn scripted(lines: &[&str]) -> Arc<dyn LlmProvider> {
    Arc::new(ScriptedProvider::new(lines.iter().copied()))
}

const QA_LINE: &str = "Where was it taken?###the beach;When was it taken?###last summer;What were they doing?###building sandcastles;";

#[tokio::test]
async fn health_is_open_and_the_rest_needs_the_token() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&dir, scripted(&[])).await;
    let r = server.client.get(server.url("/api/health")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let r = server.client.get(server.url("/api/users/x")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["error"], "UNAUTHORIZED");
    let r = server
        .client
        .get(server.url("/api/users/x"))
        .bearer_auth("wrong")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    server.stop();
}

#[tokio::test]
async fn users_are_created_validated_and_fetched() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&dir, scripted(&[])).await;
    let id = new_user(&server).await;
    let (status, user) = server.get(&format!("/api/users/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(user["display_name"], "Mr. Chan");
    assert_eq!(user["family"].as_array().unwrap().len(), 2);

    let (status, body) = server.post("/api/users", json!({"display_name": "  "})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "VALIDATION");
    let dup = json!({"display_name": "A", "family": [
        {"name": "Amy", "relationship": "daughter"}, {"name": "amy", "relationship": "niece"}]});
    assert_eq!(server.post("/api/users", dup).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(server.get("/api/users/nobody").await.0, StatusCode::NOT_FOUND);
    server.stop();
}

#[tokio::test]
async fn photos_upload_list_and_download() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&dir, scripted(&[])).await;
    let user = new_user(&server).await;
    let (status, photo) = server.upload(&user, "Beach day", "grandson, stranger", 10).await;
    assert_eq!(status, StatusCode::CREATED, "{photo}");
    assert_eq!(photo["members_present"], json!(["grandson"]));
    assert_eq!(photo["discussed_count"], 0);
    let id = photo["photo_id"].as_str().unwrap();

    let (_, list) = server.get(&format!("/api/users/{user}/photos")).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    let image_url = list[0]["image_url"].as_str().unwrap();
    let r = server.client.get(server.url(image_url)).bearer_auth(TOKEN).send().await.unwrap();
    assert_eq!(r.headers()["content-type"], "image/png");
    assert_eq!(r.bytes().await.unwrap().as_ref(), PNG);
    assert_eq!(server.get(&format!("/api/photos/{id}")).await.0, StatusCode::OK);

    let form = Form::new().text("description", "no image");
    let r = server
        .client
        .post(server.url(&format!("/api/users/{user}/photos")))
        .bearer_auth(TOKEN)
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    server.stop();
}

#[tokio::test]
async fn embeddings_identify_roster_members() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&dir, scripted(&[])).await;
    let mut reference = vec![0.0f32; 128];
    reference[0] = 1.0;
    let body = json!({
        "display_name": "Mrs. Lee",
        "family": [{"name": "Tom", "relationship": "son", "face_embedding": reference}]
    });
    let (_, user) = server.post("/api/users", body).await;
    let user = user["user_id"].as_str().unwrap();

    let mut face = vec![0.0f32; 128];
    face[0] = 0.9;
    face[1] = 0.1;
    let form = Form::new()
        .text("description", "Tom at graduation")
        .text("embeddings", serde_json::to_string(&vec![face]).unwrap())
        .part("image", Part::bytes(PNG.to_vec()).file_name("p.png"));
    let r = server
        .client
        .post(server.url(&format!("/api/users/{user}/photos")))
        .bearer_auth(TOKEN)
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let photo: Value = r.json().await.unwrap();
    assert_eq!(photo["members_present"], json!(["Tom"]));

    let form = Form::new()
        .text("description", "bad vector")
        .text("embeddings", "[[1.0, 0.0]]")
        .part("image", Part::bytes(PNG.to_vec()).file_name("p.png"));
    let r = server
        .client
        .post(server.url(&format!("/api/users/{user}/photos")))
        .bearer_auth(TOKEN)
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    server.stop();
}

#[tokio::test]
async fn message_imports_join_the_topic_pool() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&dir, scripted(&[QA_LINE])).await;
    let user = new_user(&server).await;
    server.upload(&user, "Old photo", "daughter", 5).await;
    let (status, topic) = server
        .post(
            &format!("/api/users/{user}/imports/messages"),
            json!({"text": "Grandson sent a video of his piano recital.", "members": ["grandson"], "imported_at": 50}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(topic["source"], "message_import");
    assert!(topic["image_url"].is_null());

    // Both are never discussed; the newer import wins.
    let (status, started) = server.post(&format!("/api/users/{user}/sessions"), json!({})).await;
    assert_eq!(status, StatusCode::CREATED, "{started}");
    assert_eq!(started["photo"]["photo_id"], topic["photo_id"]);
    server.stop();
}

#[tokio::test]
async fn session_runs_to_offer_summary_and_next_photo() {
    let dir = tempfile::tempdir().unwrap();
    let llm = scripted(&[
        QA_LINE,
        "option:A, response: That's right! Where was it taken?",
        "option:A, response: Yes! When was it taken?",
        "option:A, response: Correct! What were they doing?",
        "option:A, response: Lovely! Anything else special about this photo?",
        "option:C, response: Waves are such fun.",
        "option:D, response: What a nice memory. Shall we look at another photo?",
        "New summary: He remembered a beach trip with his grandson.\nNew profile: {Like= [calligraphy, beach], Dislike= []}\nTarget Person: grandson",
    ]);
    let server = Server::start(&dir, llm).await;
    let user = new_user(&server).await;
    let (_, beach) = server.upload(&user, "Grandson at the beach last summer", "grandson", 20).await;
    let (_, park) = server.upload(&user, "Daughter in the park", "daughter", 10).await;
    let (_, other) = server.upload(&user, "Grandson's birthday", "grandson", 5).await;

    let (status, started) = server.post(&format!("/api/users/{user}/sessions"), json!({})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(started["photo"]["photo_id"], beach["photo_id"]);
    assert_eq!(started["question_kind"], "WHO");
    assert_eq!(started["message"], "Do you recognize anyone in this photo?");
    assert_eq!(started["photo"]["discussed_count"], 1);
    let sid = started["session_id"].as_str().unwrap().to_string();
    let say = |text: &'static str| {
        let server = &server;
        let sid = sid.clone();
        async move { server.post(&format!("/api/sessions/{sid}/messages"), json!({ "text": text })).await }
    };

    let mut seen_rows = 1;
    for (reply, kind) in [
        ("my grandson", "WHERE"),
        ("at the beach", "WHEN"),
        ("last summer", "WHAT"),
        ("sandcastles", "OPEN"),
    ] {
        let (status, body) = say(reply).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["option"], "A");
        assert_eq!(body["question_kind"], kind);
        let (_, view) = server.get(&format!("/api/sessions/{sid}")).await;
        let rows = view["transcript"].as_array().unwrap();
        assert_eq!(rows.len(), seen_rows + 2);
        seen_rows = rows.len();
    }
    let (_, engaged) = say("he loved the waves").await;
    assert_eq!(engaged["option"], "C");
    let (_, offer) = say("he kept jumping over them").await;
    assert_eq!(offer["effect"]["type"], "offer_new_photo");
    assert_eq!(offer["phase"], "SUMMARIZING");
    assert_eq!(offer["summary"]["target_person"], "grandson");
    assert_eq!(offer["proposed_photo"]["photo_id"], other["photo_id"]);

    let (_, accepted) = say("Sure!").await;
    assert_eq!(accepted["offer_accepted"], true);
    assert_eq!(accepted["phase"], "ENDED");
    assert_eq!(accepted["proposed_photo"]["photo_id"], other["photo_id"]);
    assert_ne!(accepted["proposed_photo"]["photo_id"], park["photo_id"]);

    let (_, view) = server.get(&format!("/api/sessions/{sid}")).await;
    assert_eq!(view["option_history"], json!(["A", "A", "A", "A", "C", "D"]));
    assert_eq!(view["question_progression"], json!(["WHO", "WHERE", "WHEN", "WHAT", "OPEN"]));
    assert_eq!(view["transcript"].as_array().unwrap().len(), 14);
    let (_, summaries) = server.get(&format!("/api/users/{user}/summaries")).await;
    assert_eq!(summaries.as_array().unwrap().len(), 1);
    let (_, record) = server.get(&format!("/api/users/{user}")).await;
    assert_eq!(record["profile"]["likes"], json!(["calligraphy", "beach"]));

    let (status, body) = say("hello?").await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(body["error"], "SESSION_ENDED");
    server.stop();
}

#[tokio::test]
async fn farewell_and_explicit_end() {
    let dir = tempfile::tempdir().unwrap();
    let llm = scripted(&[
        QA_LINE,
        "option:E, response: Goodbye, talk soon!",
        "New summary: Short chat.\nNew profile: {Like= [calligraphy], Dislike= []}\nTarget Person: none",
        QA_LINE,
        "option:C, response: Tell me more.",
        "New summary: Another short chat.\nNew profile: {Like= [calligraphy, tea], Dislike= []}\nTarget Person: daughter",
    ]);
    let server = Server::start(&dir, llm).await;
    let user = new_user(&server).await;
    let (_, photo) = server.upload(&user, "Tea with daughter", "daughter", 1).await;
    let pid = photo["photo_id"].as_str().unwrap();

    let (_, s1) = server.post(&format!("/api/users/{user}/sessions"), json!({"photo_id": pid})).await;
    let sid = s1["session_id"].as_str().unwrap();
    let (_, bye) = server.post(&format!("/api/sessions/{sid}/messages"), json!({"text": "I'm tired"})).await;
    assert_eq!(bye["effect"]["type"], "farewell");
    assert_eq!(bye["phase"], "ENDED");
    assert!(bye["summary"].is_object());
    let (status, _) = server.post(&format!("/api/sessions/{sid}/messages"), json!({"text": "wait"})).await;
    assert_eq!(status, StatusCode::GONE);
    let (status, again) = server.post(&format!("/api/sessions/{sid}/end"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["summary"]["summary_text"], "Short chat.");

    let (_, s2) = server.post(&format!("/api/users/{user}/sessions"), json!({"photo_id": pid})).await;
    assert_eq!(s2["photo"]["discussed_count"], 2);
    let sid = s2["session_id"].as_str().unwrap();
    server.post(&format!("/api/sessions/{sid}/messages"), json!({"text": "we drank tea"})).await;
    let (status, ended) = server.post(&format!("/api/sessions/{sid}/end"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ended["phase"], "ENDED");
    assert_eq!(ended["summary"]["target_person"], "daughter");
    let (status, _) = server.post(&format!("/api/sessions/{sid}/messages"), json!({"text": "x"})).await;
    assert_eq!(status, StatusCode::GONE);
    let (status, body) = server.post(&format!("/api/sessions/{sid}/messages"), json!({"text": "   "})).await;
    assert_eq!(status, StatusCode::GONE, "{body}");
    server.stop();
}

/// Fails while `down` is set, otherwise serves from the script.
struct Flaky {
    down: AtomicBool,
    inner: ScriptedProvider,
}

#[async_trait]
impl LlmProvider for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    async fn complete(&self, messages: &[ChatMessage], params: CompletionParams) -> Result<String, LlmError> {
        if self.down.load(Ordering::SeqCst) {
            return Err(LlmError::Timeout);
        }
        self.inner.complete(messages, params).await
    }
}

#[tokio::test]
async fn llm_outage_is_502_and_leaves_the_session_intact() {
    let dir = tempfile::tempdir().unwrap();
    let flaky = Arc::new(Flaky {
        down: AtomicBool::new(false),
        inner: ScriptedProvider::new([QA_LINE, "option:A, response: Right! Where was it taken?"]),
    });
    let server = Server::start(&dir, flaky.clone()).await;
    let user = new_user(&server).await;
    server.upload(&user, "Beach", "grandson", 1).await;
    let (_, started) = server.post(&format!("/api/users/{user}/sessions"), json!({})).await;
    let sid = started["session_id"].as_str().unwrap();

    flaky.down.store(true, Ordering::SeqCst);
    let (status, body) = server.post(&format!("/api/sessions/{sid}/messages"), json!({"text": "grandson"})).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "LLM_UNAVAILABLE");
    let (_, view) = server.get(&format!("/api/sessions/{sid}")).await;
    assert_eq!(view["transcript"].as_array().unwrap().len(), 1);
    assert_eq!(view["version"], 1);

    flaky.down.store(false, Ordering::SeqCst);
    let (status, body) = server.post(&format!("/api/sessions/{sid}/messages"), json!({"text": "grandson"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["option"], "A");
    let (status, _) = server.post(&format!("/api/sessions/{sid}/messages"), json!({"text": ""})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    server.stop();
}

#[tokio::test]
async fn restart_resumes_from_the_stored_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let llm = scripted(&[
        QA_LINE,
        "option:C, response: How lovely!",
        "option:D, response: So, do you recognize anyone in this photo?",
    ]);
    let first = Server::start(&dir, llm.clone()).await;
    let user = new_user(&first).await;
    first.upload(&user, "Beach", "grandson", 1).await;
    let (_, started) = first.post(&format!("/api/users/{user}/sessions"), json!({})).await;
    let sid = started["session_id"].as_str().unwrap().to_string();
    first.post(&format!("/api/sessions/{sid}/messages"), json!({"text": "he loves the sea"})).await;
    let (_, before) = first.get(&format!("/api/sessions/{sid}")).await;
    first.stop();

    let second = Server::start(&dir, llm).await;
    let (_, after) = second.get(&format!("/api/sessions/{sid}")).await;
    assert_eq!(after["transcript"], before["transcript"]);
    let (status, body) = second.post(&format!("/api/sessions/{sid}/messages"), json!({"text": "my grandson"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["option"], "D");
    assert_eq!(body["question_kind"], "WHO");
    assert_eq!(body["round"], 5);
    let (_, view) = second.get(&format!("/api/sessions/{sid}")).await;
    assert_eq!(view["option_history"], json!(["C", "D"]));
    second.stop();
}

/// Decision replies are delayed when the elderly message contains "SLOW".
struct Slowpoke;

#[async_trait]
impl LlmProvider for Slowpoke {
    fn name(&self) -> &str {
        "slowpoke"
    }

    async fn complete(&self, messages: &[ChatMessage], _params: CompletionParams) -> Result<String, LlmError> {
        if messages.len() == 1 {
            return Ok(QA_LINE.to_string());
        }
        let last = &messages.last().unwrap().content;
        if last.contains("SLOW") {
            tokio::time::sleep(Duration::from_millis(800)).await;
        }
        Ok("option:C, response: Tell me more.".into())
    }
}

#[tokio::test]
async fn sessions_do_not_block_each_other_but_serialize_internally() {
    let dir = tempfile::tempdir().unwrap();
    let server = Arc::new(Server::start(&dir, Arc::new(Slowpoke)).await);
    let user = new_user(&server).await;
    server.upload(&user, "Beach", "grandson", 1).await;
    server.upload(&user, "Park", "daughter", 2).await;
    let (_, a) = server.post(&format!("/api/users/{user}/sessions"), json!({})).await;
    let (_, b) = server.post(&format!("/api/users/{user}/sessions"), json!({})).await;
    let (a, b) = (a["session_id"].as_str().unwrap().to_string(), b["session_id"].as_str().unwrap().to_string());

    let slow = {
        let (server, a) = (server.clone(), a.clone());
        tokio::spawn(async move { server.post(&format!("/api/sessions/{a}/messages"), json!({"text": "SLOW one"})).await })
    };
    let queued = {
        let (server, a) = (server.clone(), a.clone());
        tokio::spawn(async move {
            tokio::time::sleep(Duration::from_millis(50)).await;
            server.post(&format!("/api/sessions/{a}/messages"), json!({"text": "quick one"})).await
        })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let t = Instant::now();
    let (status, _) = server.post(&format!("/api/sessions/{b}/messages"), json!({"text": "hello"})).await;
    assert_eq!(status, StatusCode::OK);
    assert!(t.elapsed() < Duration::from_millis(500), "other session was blocked");
    assert!(!slow.is_finished());

    assert_eq!(slow.await.unwrap().0, StatusCode::OK);
    assert_eq!(queued.await.unwrap().0, StatusCode::OK);
    let (_, view) = server.get(&format!("/api/sessions/{a}")).await;
    let texts: Vec<&str> = view["transcript"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["message"].as_str().unwrap())
        .collect();
    assert_eq!(texts[1], "SLOW one");
    assert_eq!(texts[3], "quick one");
    assert_eq!(view["version"], 3);
}

#[test]
fn every_route_is_documented() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/openapi.yaml")).unwrap();
    let routes = [
        ("/api/health", "get"),
        ("/api/users", "post"),
        ("/api/users/{id}", "get"),
        ("/api/users/{id}/photos", "post"),
        ("/api/users/{id}/photos", "get"),
        ("/api/users/{id}/imports/messages", "post"),
        ("/api/users/{id}/sessions", "post"),
        ("/api/users/{id}/summaries", "get"),
        ("/api/photos/{id}", "get"),
        ("/api/photos/{id}/image", "get"),
        ("/api/sessions/{id}", "get"),
        ("/api/sessions/{id}/messages", "post"),
        ("/api/sessions/{id}/end", "post"),
    ];
    for (path, method) in routes {
        let start = doc.find(&format!("\n  {path}:\n")).unwrap_or_else(|| panic!("{path} missing"));
        let block = &doc[start + 1..];
        let end = block[2..].find("\n  /").map_or(block.len(), |i| i + 2);
        assert!(block[..end].contains(&format!("\n    {method}:")), "{method} {path} missing");
    }
}
