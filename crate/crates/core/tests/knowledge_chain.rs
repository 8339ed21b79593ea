//! Role assignment, keyword extraction, Wikipedia retrieval and
//! summarisation, driven by the mock provider and mock or HTTP Wikipedia.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::routing::get;
use axum::{Json, Router};
use halluspan::knowledge::{
    KnowledgeError, MockWiki, WikiSource, WikipediaClient, FALLBACK_ROLE, SUMMARY_FALLBACK_CHARS,
};
use halluspan::llm::{Cache, MockProvider};
use halluspan::prompts::PromptSet;
use halluspan::{KnowledgeService, LlmGateway, ProviderConfig, QAItem};
use serde_json::Value;

const ROLES_NEEDLE: &str = "expert identities";
const KEYWORD_NEEDLE: &str = "extract a keyword";
const SUMMARY_NEEDLE: &str = "refine the given knowledge";

const ROLES_REPLY: &str = r#"{"Identities": ["Olympic historian", "sports journalist", "swimming coach"], "Reason": "They know medal records."}"#;

fn item(lang: &str) -> QAItem {
    QAItem {
        id: format!("{lang}-1"),
        lang: lang.into(),
        question: "What did Petra van Staveren win a gold medal for?".into(),
        answer: "Petra van Stoveren won a silver medal in the 2008 Summer Olympics in Beijing, China.".into(),
    }
}

fn scripted() -> MockProvider {
    MockProvider::strict()
        .with_rule(&[ROLES_NEEDLE], ROLES_REPLY)
        .with_rule(&[KEYWORD_NEEDLE], "Keyword: Petra van Staveren")
        .with_rule(
            &[SUMMARY_NEEDLE],
            r#"{"Knowledge": "She won gold in the 100 m breaststroke at the 1984 Olympics.", "Reason": "r"}"#,
        )
}

struct Harness {
    provider: Arc<MockProvider>,
    wiki: Arc<MockWiki>,
    gateway: Arc<LlmGateway>,
    service: KnowledgeService,
}

fn harness_with(provider: MockProvider, wiki: MockWiki, cache: Cache) -> Harness {
    let provider = Arc::new(provider);
    let wiki = Arc::new(wiki);
    let gateway = Arc::new(LlmGateway::new(provider.clone(), ProviderConfig::mock(), Arc::new(cache)));
    let service = KnowledgeService::new(gateway.clone(), wiki.clone(), Arc::new(PromptSet::builtin()), "mock");
    Harness {
        provider,
        wiki,
        gateway,
        service,
    }
}

fn harness(provider: MockProvider, wiki: MockWiki) -> Harness {
    harness_with(provider, wiki, Cache::in_memory())
}

fn petra_page() -> MockWiki {
    MockWiki::default().with_page(
        None,
        "Petra van Staveren",
        "Petra van Staveren",
        "Petra van Staveren is a Dutch swimmer who won gold at the 1984 Summer Olympics.",
    )
}

#[tokio::test]
async fn roles_come_from_json_reply() {
    let h = harness(scripted(), MockWiki::default());
    let roles = h.service.assign_roles(&item("en")).await;
    assert_eq!(roles, vec!["Olympic historian", "sports journalist", "swimming coach"]);
    assert_eq!(h.provider.calls(), 1);
}

#[tokio::test]
async fn unparseable_roles_fall_back_after_retries() {
    let provider = MockProvider::strict().with_rule(&[ROLES_NEEDLE], "not json");
    let h = harness(provider, MockWiki::default());
    assert_eq!(h.service.assign_roles(&item("en")).await, vec![FALLBACK_ROLE]);
    // one ask plus two re-asks
    assert_eq!(h.provider.calls(), 3);
}

#[tokio::test]
async fn retry_recovers_from_one_malformed_reply() {
    let it = item("en");
    let prompt = PromptSet::builtin().build_roles_prompt(&it).unwrap();
    let provider = Arc::new(MockProvider::strict().with_reply(&prompt, ROLES_REPLY));
    // First attempt is served by a provider that only knows garbage; the
    // retry hits a cache miss with a different seed tag and succeeds.
    struct FlakyOnce {
        inner: Arc<MockProvider>,
        seen: Mutex<usize>,
    }
    #[async_trait::async_trait]
    impl halluspan::llm::ChatProvider for FlakyOnce {
        async fn send(
            &self,
            req: &halluspan::CompletionRequest,
        ) -> Result<String, halluspan::llm::ProviderError> {
            let mut seen = self.seen.lock().unwrap();
            *seen += 1;
            if *seen == 1 {
                return Ok("{\"Identities\": [".into());
            }
            Ok(self.inner.respond(req)?)
        }
    }
    let flaky = Arc::new(FlakyOnce {
        inner: provider,
        seen: Mutex::new(0),
    });
    let gateway = Arc::new(LlmGateway::new(flaky.clone(), ProviderConfig::mock(), Arc::new(Cache::in_memory())));
    let service = KnowledgeService::new(gateway, Arc::new(MockWiki::default()), Arc::new(PromptSet::builtin()), "mock");
    assert_eq!(service.assign_roles(&it).await.len(), 3);
    assert_eq!(*flaky.seen.lock().unwrap(), 2);
}

#[tokio::test]
async fn keyword_comes_from_keyword_line() {
    let h = harness(scripted(), MockWiki::default());
    assert_eq!(h.service.extract_keyword(&item("en")).await.unwrap(), "Petra van Staveren");
}

#[tokio::test]
async fn keyword_missing_is_an_error() {
    let provider = MockProvider::strict().with_rule(&[KEYWORD_NEEDLE], "I am not sure.");
    let h = harness(provider, MockWiki::default());
    assert!(matches!(
        h.service.extract_keyword(&item("en")).await,
        Err(KnowledgeError::NoKeyword)
    ));
}

#[tokio::test]
async fn summary_falls_back_to_truncated_extract() {
    let provider = MockProvider::strict().with_rule(&[SUMMARY_NEEDLE], "{broken json");
    let h = harness(provider, MockWiki::default());
    let raw: String = "ñ".repeat(1500) + &"x".repeat(1500);
    let summary = h.service.summarize_knowledge(&item("en"), &raw).await;
    assert_eq!(summary.chars().count(), SUMMARY_FALLBACK_CHARS);
    assert_eq!(summary, raw.chars().take(SUMMARY_FALLBACK_CHARS).collect::<String>());
    assert_eq!(h.provider.calls(), 3);
}

#[tokio::test]
async fn summary_parses_knowledge_field() {
    let h = harness(scripted(), MockWiki::default());
    let summary = h.service.summarize_knowledge(&item("en"), "raw text").await;
    assert_eq!(summary, "She won gold in the 100 m breaststroke at the 1984 Olympics.");
}

#[tokio::test]
async fn long_extract_is_truncated() {
    let long = "a".repeat(12_000);
    let wiki = MockWiki::default().with_page(None, "Petra van Staveren", "Petra van Staveren", &long);
    let h = harness(scripted(), wiki);
    let page = h.service.fetch_wikipedia(&item("en"), "Petra van Staveren").await.unwrap();
    assert_eq!(page.text.chars().count(), 8000);

    let h = harness(scripted(), MockWiki::default().with_page(None, "k", "K", &long));
    let short = h.service.with_max_extract_chars(100);
    assert_eq!(short.fetch_wikipedia(&item("en"), "k").await.unwrap().text.len(), 100);
}

#[tokio::test]
async fn search_falls_back_to_english() {
    let wiki = MockWiki::default().with_page(Some("en"), "Petra van Staveren", "Petra van Staveren", "EN text");
    let h = harness(scripted(), wiki);
    let page = h.service.fetch_wikipedia(&item("de"), "Petra van Staveren").await.unwrap();
    assert_eq!(page.lang, "en");
    assert_eq!(page.text, "EN text");
    // de search, en search, en extract
    assert_eq!(h.wiki.calls(), 3);
}

#[tokio::test]
async fn item_language_wiki_is_preferred() {
    let wiki = MockWiki::default()
        .with_page(Some("en"), "Petra van Staveren", "Petra van Staveren", "EN text")
        .with_page(Some("de"), "Petra van Staveren", "Petra van Staveren", "DE Text");
    let h = harness(scripted(), wiki);
    let page = h.service.fetch_wikipedia(&item("de"), "Petra van Staveren").await.unwrap();
    assert_eq!((page.lang.as_str(), page.text.as_str()), ("de", "DE Text"));
}

#[tokio::test]
async fn no_search_results_is_an_error() {
    let h = harness(scripted(), MockWiki::default());
    assert!(matches!(
        h.service.fetch_wikipedia(&item("fi"), "nothing").await,
        Err(KnowledgeError::NoResults(_))
    ));
    assert_eq!(h.wiki.calls(), 2);
    // the empty result is remembered too
    assert!(h.service.fetch_wikipedia(&item("fi"), "nothing").await.is_err());
    assert_eq!(h.wiki.calls(), 2);
}

#[tokio::test]
async fn full_bundle_carries_provenance() {
    let h = harness(scripted(), petra_page());
    let bundle = h.service.bundle(&item("en"), true, true).await;
    assert_eq!(bundle.roles.len(), 3);
    assert_eq!(bundle.keyword.as_deref(), Some("Petra van Staveren"));
    assert!(bundle.raw_external.unwrap().contains("1984"));
    assert!(bundle.refined_external.unwrap().contains("breaststroke"));
    assert_eq!(bundle.provenance.unwrap().title, "Petra van Staveren");
}

#[tokio::test]
async fn wikipedia_outage_degrades_to_no_knowledge() {
    let h = harness(scripted(), MockWiki::failing());
    let bundle = h.service.bundle(&item("en"), true, true).await;
    assert_eq!(bundle.roles.len(), 3);
    assert_eq!(bundle.raw_external, None);
    assert_eq!(bundle.refined_external, None);
}

#[tokio::test]
async fn disabled_features_skip_calls() {
    let h = harness(scripted(), petra_page());
    let bundle = h.service.bundle(&item("en"), false, false).await;
    assert_eq!(bundle.roles, vec![FALLBACK_ROLE]);
    assert_eq!(h.provider.calls(), 0);
    assert_eq!(h.wiki.calls(), 0);
}

#[tokio::test]
async fn rerun_is_served_from_cache() {
    let h = harness(scripted(), petra_page());
    let first = h.service.bundle(&item("en"), true, true).await;
    let (calls, wiki_calls) = (h.provider.calls(), h.wiki.calls());
    assert_eq!(calls, 3);
    let second = h.service.bundle(&item("en"), true, true).await;
    assert_eq!(first, second);
    assert_eq!(h.provider.calls(), calls);
    assert_eq!(h.wiki.calls(), wiki_calls);
}

#[tokio::test]
async fn disk_cache_survives_a_new_service() {
    let dir = tempfile::tempdir().unwrap();
    let first = harness_with(scripted(), petra_page(), Cache::on_disk(dir.path()).unwrap());
    let a = first.service.bundle(&item("en"), true, true).await;
    assert!(first.gateway.provider_calls() > 0);

    let second = harness_with(MockProvider::strict(), MockWiki::failing(), Cache::on_disk(dir.path()).unwrap());
    let b = second.service.bundle(&item("en"), true, true).await;
    assert_eq!(a, b);
    assert_eq!(second.provider.calls(), 0);
    assert_eq!(second.wiki.calls(), 0);
}

// Replays recorded API responses through the real HTTP client.

#[derive(Clone, Default)]
struct Recorded {
    requests: Arc<Mutex<Vec<(String, String, HashMap<String, String>)>>>,
}

const SEARCH_EN: &str = include_str!("fixtures/wikipedia/search_en.json");
const SEARCH_EMPTY: &str = include_str!("fixtures/wikipedia/search_empty.json");
const EXTRACT_EN: &str = include_str!("fixtures/wikipedia/extract_en.json");

async fn search(
    State(rec): State<Recorded>,
    Path(lang): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Json<Value> {
    rec.requests.lock().unwrap().push((lang.clone(), "search".into(), q));
    let body = if lang == "en" { SEARCH_EN } else { SEARCH_EMPTY };
    Json(serde_json::from_str(body).unwrap())
}

async fn api(
    State(rec): State<Recorded>,
    Path(lang): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Json<Value> {
    rec.requests.lock().unwrap().push((lang, "extract".into(), q));
    Json(serde_json::from_str(EXTRACT_EN).unwrap())
}

async fn serve_recorded() -> (String, Recorded) {
    let rec = Recorded::default();
    let app = Router::new()
        .route("/{lang}/w/rest.php/v1/search/page", get(search))
        .route("/{lang}/w/api.php", get(api))
        .with_state(rec.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/{{lang}}"), rec)
}

#[tokio::test]
async fn http_client_parses_recorded_responses() {
    let (base, rec) = serve_recorded().await;
    let client = WikipediaClient::new(base.clone());
    let hit = client.search("EN", "Petra van Staveren").await.unwrap().unwrap();
    assert_eq!(hit.title, "Petra van Staveren");
    assert_eq!(hit.url, format!("{}/wiki/Petra_van_Staveren", base.replace("{lang}", "en")));
    let text = client.extract("en", &hit.title).await.unwrap();
    assert!(text.starts_with("Petra van Staveren (born 2 June 1966)"));

    let requests = rec.requests.lock().unwrap();
    let (lang, kind, q) = &requests[0];
    assert_eq!((lang.as_str(), kind.as_str()), ("en", "search"));
    assert_eq!(q["q"], "Petra van Staveren");
    assert_eq!(q["limit"], "1");
    let (_, kind, q) = &requests[1];
    assert_eq!(kind, "extract");
    assert_eq!(q["action"], "query");
    assert_eq!(q["prop"], "extracts");
    assert_eq!(q["explaintext"], "1");
    assert_eq!(q["titles"], "Petra van Staveren");
}

#[tokio::test]
async fn recorded_chain_end_to_end() {
    let (base, rec) = serve_recorded().await;
    let provider = Arc::new(scripted());
    let gateway = Arc::new(LlmGateway::new(provider.clone(), ProviderConfig::mock(), Arc::new(Cache::in_memory())));
    let service = KnowledgeService::new(
        gateway,
        Arc::new(WikipediaClient::new(base)),
        Arc::new(PromptSet::builtin()),
        "mock",
    );
    // Swedish item: no sv hit in the recording, so English is used.
    let bundle = service.bundle(&item("sv"), true, true).await;
    assert_eq!(bundle.keyword.as_deref(), Some("Petra van Staveren"));
    assert!(bundle.raw_external.unwrap().contains("1984 Summer Olympics"));
    assert!(bundle.refined_external.is_some());
    assert!(bundle.provenance.unwrap().url.ends_with("/en/wiki/Petra_van_Staveren"));
    let kinds: Vec<(String, String)> = rec
        .requests
        .lock()
        .unwrap()
        .iter()
        .map(|(l, k, _)| (l.clone(), k.clone()))
        .collect();
    assert_eq!(
        kinds,
        vec![
            ("sv".into(), "search".into()),
            ("en".into(), "search".into()),
            ("en".into(), "extract".into())
        ]
    );
}

#[tokio::test]
async fn unreachable_wikipedia_degrades() {
    let client = WikipediaClient::new("http://127.0.0.1:9/{lang}").with_retries(0, std::time::Duration::ZERO);
    let provider = Arc::new(scripted());
    let gateway = Arc::new(LlmGateway::new(provider, ProviderConfig::mock(), Arc::new(Cache::in_memory())));
    let service = KnowledgeService::new(gateway, Arc::new(client), Arc::new(PromptSet::builtin()), "mock");
    let bundle = service.bundle(&item("en"), true, true).await;
    assert_eq!(bundle.roles.len(), 3);
    assert!(bundle.refined_external.is_none());
}
