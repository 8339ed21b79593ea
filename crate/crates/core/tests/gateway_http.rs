//! The OpenAI-compatible client against a local HTTP server.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use halluspan::llm::{Cache, Clock, LlmError, ManualClock, OpenAiProvider};
use halluspan::{CompletionRequest, LlmGateway, ProviderConfig};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Script {
    statuses: Arc<Mutex<VecDeque<u16>>>,
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<String>>>,
}

async fn chat(State(script): State<Script>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    script.bodies.lock().unwrap().push(body.clone());
    if let Some(auth) = headers.get("authorization") {
        script.auth.lock().unwrap().push(auth.to_str().unwrap().to_owned());
    }
    let status = script.statuses.lock().unwrap().pop_front().unwrap_or(200);
    if status != 200 {
        return (
            StatusCode::from_u16(status).unwrap(),
            Json(json!({"error": {"message": "nope"}})),
        );
    }
    let prompt = body["messages"].as_array().unwrap().last().unwrap()["content"]
        .as_str()
        .unwrap()
        .to_owned();
    (
        StatusCode::OK,
        Json(json!({
            "id": "cmpl-1",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": format!("echo: {prompt}")}, "finish_reason": "stop"}]
        })),
    )
}

async fn serve(statuses: &[u16]) -> (String, Script) {
    let script = Script::default();
    script.statuses.lock().unwrap().extend(statuses.iter().copied());
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .with_state(script.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), script)
}

fn gateway(base_url: &str, max_retries: u32) -> (LlmGateway, Arc<ManualClock>) {
    let config = ProviderConfig {
        name: "local".into(),
        base_url: base_url.into(),
        api_key_env: "HALLUSPAN_TEST_KEY".into(),
        requests_per_minute: 100,
        max_retries,
        initial_backoff_ms: 250,
    };
    let provider = Arc::new(OpenAiProvider::new(base_url, "sk-test"));
    let clock = Arc::new(ManualClock::default());
    (
        LlmGateway::with_clock(provider, config, Arc::new(Cache::in_memory()), clock.clone()),
        clock,
    )
}

#[tokio::test]
async fn sends_chat_completion_body() {
    let (base, script) = serve(&[]).await;
    let (gw, _) = gateway(&base, 0);
    let req = CompletionRequest::new("deepseek-chat", "hello")
        .with_system("be terse")
        .with_temperature(0.0);
    assert_eq!(gw.complete(&req).await.unwrap(), "echo: hello");
    let body = script.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "deepseek-chat");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 2048);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "hello");
    assert_eq!(script.auth.lock().unwrap()[0], "Bearer sk-test");
}

#[tokio::test]
async fn rate_limited_then_ok_succeeds_after_one_backoff() {
    let (base, script) = serve(&[429]).await;
    let (gw, clock) = gateway(&base, 3);
    let out = gw.complete(&CompletionRequest::new("m", "hi")).await.unwrap();
    assert_eq!(out, "echo: hi");
    assert_eq!(script.bodies.lock().unwrap().len(), 2);
    assert_eq!(gw.provider_calls(), 2);
    assert_eq!(clock.now(), std::time::Duration::from_millis(250));
}

#[tokio::test]
async fn unauthorized_fails_fast() {
    let (base, script) = serve(&[401, 200]).await;
    let (gw, _) = gateway(&base, 5);
    let err = gw.complete(&CompletionRequest::new("m", "hi")).await.unwrap_err();
    assert!(matches!(err, LlmError::Auth { .. }), "{err}");
    assert_eq!(script.bodies.lock().unwrap().len(), 1);
}

#[tokio::test]
async fn server_errors_exhaust_retries() {
    let (base, _) = serve(&[500, 502, 503]).await;
    let (gw, _) = gateway(&base, 2);
    match gw.complete(&CompletionRequest::new("m", "hi")).await {
        Err(LlmError::Provider { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test]
async fn bad_request_is_not_retried() {
    let (base, script) = serve(&[400]).await;
    let (gw, _) = gateway(&base, 5);
    assert!(gw.complete(&CompletionRequest::new("m", "hi")).await.is_err());
    assert_eq!(script.bodies.lock().unwrap().len(), 1);
}

#[test]
fn missing_key_names_the_variable() {
    let config = ProviderConfig {
        api_key_env: "HALLUSPAN_DEFINITELY_UNSET_KEY".into(),
        ..ProviderConfig::openai()
    };
    match OpenAiProvider::from_config(&config) {
        Err(LlmError::MissingKey(var)) => assert_eq!(var, "HALLUSPAN_DEFINITELY_UNSET_KEY"),
        _ => panic!("expected missing key"),
    }
}
