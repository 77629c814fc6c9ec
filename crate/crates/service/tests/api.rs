use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use scoretalk_core::ingest::{export_json, parse_midi, value_to_score};
use scoretalk_core::model::{ScoreMeta, TimedEvent};
use scoretalk_core::normalize::{normalize, validate_normal_form};
use scoretalk_service::{router, AppState};

const MINIMAL_XML: &str = r#"<?xml version="1.0"?>
<score-partwise version="3.1">
  <part-list><score-part id="P1"><part-name>Melody</part-name></score-part></part-list>
  <part id="P1"><measure number="1">
    <attributes><divisions>1</divisions><time><beats>4</beats><beat-type>4</beat-type></time></attributes>
    <note><pitch><step>C</step><octave>4</octave></pitch><duration>4</duration></note>
  </measure></part>
</score-partwise>"#;

fn melody_json(pitches: &[i32]) -> String {
    let meta = ScoreMeta::default();
    let events: Vec<_> = pitches.iter().enumerate().map(|(i, &p)| TimedEvent::note(p, i as f64, 1.0)).collect();
    export_json(&normalize(&events, &meta).unwrap(), &meta)
}

fn twinkle_json() -> String {
    melody_json(&[60, 60, 67, 67, 69, 69, 67])
}

struct Client {
    app: Router,
}

struct Reply {
    status: StatusCode,
    content_type: String,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or(Value::Null)
    }
}

impl Client {
    fn new() -> Self {
        Client { app: router(AppState::default()) }
    }

    async fn send(&self, req: Request<Body>) -> Reply {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let content_type = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, content_type, bytes }
    }

    async fn get(&self, uri: &str) -> Reply {
        self.send(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    async fn post(&self, uri: &str, body: Value) -> Reply {
        let req = Request::post(uri)
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        self.send(req).await
    }

    async fn upload(&self, id: &str, format: &str, bytes: impl Into<Body>) -> Reply {
        let req = Request::post(format!("/sessions/{id}/score"))
            .header("x-score-format", format)
            .body(bytes.into())
            .unwrap();
        self.send(req).await
    }

    async fn create(&self) -> String {
        let r = self.send(Request::post("/sessions").body(Body::empty()).unwrap()).await;
        assert_eq!(r.status, StatusCode::CREATED);
        r.json()["sessionId"].as_str().unwrap().to_string()
    }

    async fn with_score(&self, json: &str) -> String {
        let id = self.create().await;
        let r = self.upload(&id, "json", json.to_string()).await;
        assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
        id
    }

    async fn command(&self, id: &str, text: &str) -> Reply {
        self.post(&format!("/sessions/{id}/command"), json!({ "text": text })).await
    }
}

fn pitches(body: &Value) -> Vec<i64> {
    body["events"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|e| e["pitch"].as_i64())
        .collect()
}

fn assert_normal(body: &Value) {
    let (m, meta) = value_to_score(&body["score"]).unwrap();
    assert!(validate_normal_form(&m, &meta).is_ok());
}

#[tokio::test]
async fn create_gives_distinct_ids() {
    let c = Client::new();
    let a = c.create().await;
    let b = c.create().await;
    assert_ne!(a, b);
    let r = c.send(Request::post("/sessions").body(Body::from("{not json")).unwrap()).await;
    assert_eq!(r.status, StatusCode::CREATED);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let c = Client::new();
    for uri in ["/sessions/nope/score", "/sessions/00000000-0000-0000-0000-000000000000/history"] {
        assert_eq!(c.get(uri).await.status, StatusCode::NOT_FOUND);
    }
    assert_eq!(c.command("nope", "undo").await.status, StatusCode::NOT_FOUND);
    assert_eq!(c.upload("nope", "json", "{}").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn upload_formats() {
    let c = Client::new();
    let id = c.create().await;
    let r = c.upload(&id, "musicxml", MINIMAL_XML).await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(body["report"]["eventCount"], 1);
    assert_eq!(body["events"][0]["pitch"], 60);

    let r = c.upload(&id, "midi", &b"MThd garbage"[..]).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json()["report"]["warnings"].is_array());
    // The failed upload left the earlier score in place.
    assert_eq!(pitches(&c.get(&format!("/sessions/{id}/score")).await.json()), [60]);

    let req = Request::post(format!("/sessions/{id}/score"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(twinkle_json()))
        .unwrap();
    assert_eq!(c.send(req).await.status, StatusCode::OK);

    let req = Request::post(format!("/sessions/{id}/score"))
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::empty())
        .unwrap();
    assert_eq!(c.send(req).await.status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
}

#[tokio::test]
async fn commands_need_a_score() {
    let c = Client::new();
    let id = c.create().await;
    assert_eq!(c.command(&id, "undo").await.status, StatusCode::CONFLICT);
    let empty = c.get(&format!("/sessions/{id}/score")).await.json();
    assert_eq!(empty["score"], Value::Null);
    assert_eq!(empty["events"], json!([]));
}

#[tokio::test]
async fn octave_move_in_measure_two() {
    let c = Client::new();
    // A B in each measure; only the one in measure 2 may move.
    let id = c.with_score(&melody_json(&[71, 62, 64, 65, 67, 71, 65, 64])).await;
    let r = c.command(&id, "Move the B in measure 2 up an octave.").await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(body["status"], "applied");
    assert_eq!(body["echo"], "transpose(12, select(N((B,_), _, (1,_), ...), m))");
    assert_eq!(body["ast"]["action"], "move");
    assert_eq!(pitches(&body), [71, 62, 64, 65, 67, 83, 65, 64]);
    assert_normal(&body);
}

#[tokio::test]
async fn twinkle_clarification_round() {
    let c = Client::new();
    let id = c.with_score(&twinkle_json()).await;
    let r = c.command(&id, "move the G up a half step").await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(body["status"], "ambiguous");
    let cands = body["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 3);
    assert_eq!(cands[2]["describe"], "G4, measure 1, beat 2");
    assert_eq!(cands[2]["index"], 2);

    let blocked = c.command(&id, "move the C up a half step").await;
    assert_eq!(blocked.status, StatusCode::CONFLICT);
    assert_eq!(blocked.json()["status"], "clarificationNeeded");

    let bad = c.post(&format!("/sessions/{id}/resolve"), json!({"index": 9})).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);

    let ok = c.post(&format!("/sessions/{id}/resolve"), json!({"index": 2})).await;
    assert_eq!(ok.status, StatusCode::OK);
    let body = ok.json();
    assert_eq!(body["status"], "applied");
    assert_eq!(pitches(&body), [60, 60, 67, 67, 69, 69, 68]);
    assert_normal(&body);

    let again = c.post(&format!("/sessions/{id}/resolve"), json!({"index": 0})).await;
    assert_eq!(again.status, StatusCode::CONFLICT);

    let undone = c.post(&format!("/sessions/{id}/undo"), json!({})).await.json();
    assert_eq!(pitches(&undone), [60, 60, 67, 67, 69, 69, 67]);
}

#[tokio::test]
async fn errors_do_not_mutate() {
    let c = Client::new();
    let id = c.with_score(&twinkle_json()).await;
    let before = c.get(&format!("/sessions/{id}/score")).await.bytes;
    for text in ["frobnicate the tuba", "move the F up a half step", "move the C up 100 octaves"] {
        let r = c.command(&id, text).await;
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(r.json()["status"], "error", "{text}");
    }
    assert_eq!(c.get(&format!("/sessions/{id}/score")).await.bytes, before);
    let gib = c.command(&id, "frobnicate the tuba").await.json();
    assert!(gib["message"].as_str().unwrap().starts_with("cannot parse command at position 0"));
}

#[tokio::test]
async fn history_and_export() {
    let c = Client::new();
    let id = c.with_score(&twinkle_json()).await;
    c.command(&id, "move the notes in measure 1 up a whole step").await;
    c.command(&id, "reverse the notes in measure 2").await;
    let h = c.get(&format!("/sessions/{id}/history")).await.json();
    let entries = h["history"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[1]["command"], "reverse the notes in measure 2");

    let score = c.get(&format!("/sessions/{id}/score")).await.json();
    let midi = c.get(&format!("/sessions/{id}/export?format=midi")).await;
    assert_eq!(midi.status, StatusCode::OK);
    assert_eq!(midi.content_type, "audio/midi");
    let parsed = parse_midi(&midi.bytes).unwrap();
    let mut got: Vec<(i32, i64)> = parsed.events.iter().map(|e| (e.pitch.unwrap(), (e.onset * 480.0) as i64)).collect();
    let mut want: Vec<(i32, i64)> = score["events"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["kind"] == "note")
        .map(|e| (e["pitch"].as_i64().unwrap() as i32, (e["onset"].as_f64().unwrap() * 480.0) as i64))
        .collect();
    got.sort();
    want.sort();
    assert_eq!(got, want);

    let js = c.get(&format!("/sessions/{id}/export?format=json")).await;
    assert_eq!(js.content_type, "application/json");
    assert_eq!(js.json()["score"], score["score"]["score"]);
    assert_eq!(c.get(&format!("/sessions/{id}/export?format=wav")).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn select_then_apply() {
    let c = Client::new();
    let id = c.with_score(&twinkle_json()).await;
    let sel = c.post(&format!("/sessions/{id}/select"), json!({"pattern": {"note": {"pc": 7}}})).await.json();
    assert_eq!(sel["pattern"], "N((G,_), _, _, ...)");
    let hits = sel["selection"]["hits"].as_array().unwrap().clone();
    assert_eq!(hits.len(), 3);

    let selection = json!({"version": sel["selection"]["version"], "hits": [hits[0]]});
    let body = json!({"operation": {"kind": "transpose", "semitones": -7}, "selection": selection});
    let r = c.post(&format!("/sessions/{id}/apply"), body.clone()).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(pitches(&r.json()), [60, 60, 60, 67, 69, 69, 67]);

    let stale = c.post(&format!("/sessions/{id}/apply"), body).await;
    assert_eq!(stale.status, StatusCode::CONFLICT);
    assert_eq!(stale.json()["message"], "stale selection");

    let by_pattern = json!({"operation": {"kind": "invertAt", "axisPitch": {"pc": 9, "oct": 4}}, "pattern": {"note": {"pc": 9}}});
    let r = c.post(&format!("/sessions/{id}/apply"), by_pattern).await.json();
    assert_eq!(r["status"], "applied");
    assert_eq!(r["echo"], "invertAt((A,4), select(N((A,_), _, _, ...), m))");

    let bad = c.post(&format!("/sessions/{id}/select"), json!({"pattern": {"note": {"pitch": 7}}})).await;
    assert_eq!(bad.status, StatusCode::UNPROCESSABLE_ENTITY);
    let bad = c.post(&format!("/sessions/{id}/apply"), json!({"operation": {"kind": "transpose"}, "pattern": {"note": {}}})).await;
    assert_eq!(bad.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn concurrent_commands_serialize() {
    let state = AppState::default();
    let app = router(state);
    let c = Client { app };
    let id = c.with_score(&melody_json(&[48, 50, 52])).await;
    let mut tasks = Vec::new();
    for _ in 0..20 {
        let app = c.app.clone();
        let uri = format!("/sessions/{id}/command");
        tasks.push(tokio::spawn(async move {
            let req = Request::post(uri)
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(json!({"text": "move the notes up a half step"}).to_string()))
                .unwrap();
            app.oneshot(req).await.unwrap().status()
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let score = c.get(&format!("/sessions/{id}/score")).await.json();
    assert_eq!(score["version"], 20);
    assert_eq!(pitches(&score), [68, 70, 72]);
    let h = c.get(&format!("/sessions/{id}/history")).await.json();
    let versions: Vec<i64> = h["history"].as_array().unwrap().iter().map(|e| e["outcome"]["version"].as_i64().unwrap()).collect();
    assert_eq!(versions, (1..=20).collect::<Vec<_>>());
}

#[tokio::test]
async fn idle_sessions_expire() {
    let state = AppState::new(Duration::from_millis(10));
    let c = Client { app: router(state.clone()) };
    let id = c.create().await;
    assert_eq!(state.session_count().await, 1);
    tokio::time::sleep(Duration::from_millis(30)).await;
    assert_eq!(state.expire_idle().await, 1);
    assert_eq!(c.get(&format!("/sessions/{id}/score")).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cors_is_enabled() {
    let c = Client::new();
    let req = Request::get("/health").header(header::ORIGIN, "http://localhost:5173").body(Body::empty()).unwrap();
    let resp = c.app.clone().oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}
