use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use glyphgen::checkpoint::save_checkpoint;
use glyphgen::corpus::{corpus_stats, split, synthesize_corpus, CorpusStats, SynthSpec};
use glyphgen::labelspace::{build_cooccurrence_allowing_unseen, CooccurrenceMatrix};
use glyphgen::nets::ProgressiveStage;
use glyphgen::semantics::HashProvider;
use glyphgen::training::{train, Model, TrainConfig, TrainOptions};
use glyphgen_cli::service::{router, AppState, GenerateResponse, InterpolateResponse, LabelEntry, ADMIN_TOKEN_HEADER};
use serde_json::{json, Value};
use std::sync::{Arc, OnceLock};
use std::time::Instant;
use tower::ServiceExt;

struct Fixture {
    model: Model,
    stats: CorpusStats,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = SynthSpec {
            n_fonts: 40,
            resolution: 16,
            seed: 3,
            ..SynthSpec::default()
        };
        let corpus = synthesize_corpus(&spec).unwrap().corpus;
        let (tr, _) = split(&corpus, 0.25, 0).unwrap();
        let mut cfg = TrainConfig::desk(corpus.k());
        cfg.iterations = 20;
        cfg.stage_len = 10;
        cfg.batch_size = 4;
        cfg.model.max_stage = 1;
        cfg.model.channels = vec![6, 4];
        cfg.model.z_dim = 6;
        cfg.model.embed_dim = 8;
        cfg.model.ilsc_dim = 4;
        cfg.model.style_resolution = 8;
        cfg.model.style_channels = 2;
        cfg.model.style_features = 4;
        let t = build_cooccurrence_allowing_unseen(&tr.label_matrix());
        let model = train(&cfg, &tr, &t, &HashProvider::new(8, 0), &TrainOptions::default())
            .unwrap()
            .model;
        Fixture {
            model,
            stats: corpus_stats(&corpus),
        }
    })
}

fn app(model: Option<Model>) -> axum::Router {
    router(AppState::new(model, None, None))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn first_label(m: &Model) -> String {
    m.vocabulary.name(0).to_string()
}

fn gen_body(label: &str, chars: &str, seed: u64) -> String {
    json!({ "impressions": [{ "label": label, "weight": 1.0 }], "chars": chars, "seed": seed }).to_string()
}

#[tokio::test]
async fn labels_follow_corpus_frequencies() {
    let f = fixture();
    let app = app(Some(f.model.clone()));
    let (s, a) = call(&app, "GET", "/labels", None).await;
    let (_, b) = call(&app, "GET", "/labels", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a, b);
    let list: Vec<LabelEntry> = serde_json::from_slice(&a).unwrap();
    assert_eq!(list.len(), f.stats.labels);
    assert!(list.windows(2).all(|w| w[0].frequency >= w[1].frequency));
    assert_eq!(list.iter().map(|e| e.frequency).sum::<usize>(), f.stats.total_positives);
    for (label, count) in &f.stats.label_frequency {
        assert_eq!(list.iter().find(|e| &e.label == label).unwrap().frequency, *count);
    }
}

#[tokio::test]
async fn generate_is_deterministic_per_seed() {
    let f = fixture();
    let app = app(Some(f.model.clone()));
    let label = first_label(&f.model);
    let (s, a) = call(&app, "POST", "/generate", Some(gen_body(&label, "AB", 1))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, b) = call(&app, "POST", "/generate", Some(gen_body(&label, "AB", 1))).await;
    assert_eq!(a, b);
    let resp: GenerateResponse = serde_json::from_slice(&a).unwrap();
    assert_eq!(resp.images.len(), 2);
    assert_eq!(resp.seed, 1);
    assert!(resp.effective_condition.len() <= 20);
    assert!(resp.effective_condition.iter().any(|w| w.label == label && w.weight == 1.0));
    let (_, c) = call(&app, "POST", "/generate", Some(gen_body(&label, "AB", 2))).await;
    assert_ne!(a, c);
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let f = fixture();
    let app = app(Some(f.model.clone()));
    let body = gen_body(&first_label(&f.model), "ABCHERONS", 4);
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let (app, body) = (app.clone(), body.clone());
            tokio::spawn(async move { call(&app, "POST", "/generate", Some(body)).await })
        })
        .collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    assert!(out.iter().all(|r| r.0 == StatusCode::OK && r.1 == out[0].1));
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let f = fixture();
    let app = app(Some(f.model.clone()));
    let label = first_label(&f.model);

    let (s, b) = call(&app, "POST", "/generate", Some(gen_body("xyzzy", "AB", 1))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["label"], "xyzzy");
    assert!(v["error"].as_str().unwrap().contains("xyzzy"));

    let malformed = [
        "{not json",
        r#"{"impressions": "thin", "chars": "AB"}"#,
        r#"{"chars": "AB"}"#,
        r#"{"impressions": [], "chars": "AB", "extra": 1}"#,
    ];
    for body in malformed {
        let (s, _) = call(&app, "POST", "/generate", Some(body.to_string())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    }

    let too_many: Vec<Value> = (0..17).map(|_| json!({ "label": label, "weight": 1.0 })).collect();
    let cases = [
        json!({ "impressions": [], "chars": "AB" }),
        json!({ "impressions": too_many, "chars": "AB" }),
        json!({ "impressions": [{ "label": label, "weight": 0.0 }], "chars": "AB" }),
        json!({ "impressions": [{ "label": label, "weight": 1.5 }], "chars": "AB" }),
        json!({ "impressions": [{ "label": label, "weight": 1.0 }], "chars": "" }),
        json!({ "impressions": [{ "label": label, "weight": 1.0 }], "chars": "ab" }),
        json!({ "impressions": [{ "label": label, "weight": 1.0 }], "chars": "ABCDEFGHIJKLMNOPQRSTUVWXYZA" }),
    ];
    for body in cases {
        let (s, _) = call(&app, "POST", "/generate", Some(body.to_string())).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    }
}

#[tokio::test]
async fn completion_surfaces_unrequested_labels() {
    let f = fixture();
    let mut model = f.model.clone();
    let k = model.k();
    let mut t = vec![0.0; k * k];
    for i in 0..k {
        t[i * k + i] = 1.0;
    }
    let toy = [[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 1.0, 1.0]];
    for i in 0..3 {
        for j in 0..3 {
            t[i * k + j] = toy[i][j];
        }
    }
    model.cooccurrence = CooccurrenceMatrix::from_dense(k, t).unwrap();
    let names: Vec<String> = (0..3).map(|i| model.vocabulary.name(i).to_string()).collect();
    let app = app(Some(model));
    let (s, b) = call(&app, "POST", "/generate", Some(gen_body(&names[0], "A", 0))).await;
    assert_eq!(s, StatusCode::OK);
    let resp: GenerateResponse = serde_json::from_slice(&b).unwrap();
    let weight = |l: &str| resp.effective_condition.iter().find(|w| w.label == l).map(|w| w.weight);
    assert_eq!(weight(&names[0]), Some(1.0));
    assert_eq!(weight(&names[1]), Some(0.5));
    assert_eq!(weight(&names[2]), None);
    assert_eq!(resp.effective_condition.len(), 2);
}

#[tokio::test]
async fn interpolation_frames() {
    let f = fixture();
    let app = app(Some(f.model.clone()));
    let a = f.model.vocabulary.name(0).to_string();
    let b = f.model.vocabulary.name(1).to_string();
    let body = json!({
        "mode": "impression",
        "from": [{ "label": a, "weight": 1.0 }],
        "to": [{ "label": b, "weight": 1.0 }],
        "lambdas": [0.0, 1.0],
        "chars": "ABC",
        "seed": 5,
    });
    let (s, out) = call(&app, "POST", "/interpolate", Some(body.to_string())).await;
    assert_eq!(s, StatusCode::OK);
    let resp: InterpolateResponse = serde_json::from_slice(&out).unwrap();
    assert_eq!(resp.frames.len(), 2);
    for (frame, label) in resp.frames.iter().zip([&a, &b]) {
        let (_, g) = call(&app, "POST", "/generate", Some(gen_body(label, "ABC", 5))).await;
        let g: GenerateResponse = serde_json::from_slice(&g).unwrap();
        assert_eq!(frame.images, g.images);
    }

    let five = json!({
        "mode": "impression",
        "from": [{ "label": a, "weight": 1.0 }],
        "to": [{ "label": b, "weight": 1.0 }],
        "lambdas": [0.0, 0.25, 0.5, 0.75, 1.0],
        "chars": "AB",
        "seed": 5,
    });
    let (_, out) = call(&app, "POST", "/interpolate", Some(five.to_string())).await;
    let imp: InterpolateResponse = serde_json::from_slice(&out).unwrap();
    assert_eq!(imp.frames.len(), 5);

    let noise = json!({
        "mode": "noise",
        "from": [{ "label": a, "weight": 1.0 }],
        "lambdas": [0.0, 0.25, 0.5, 0.75, 1.0],
        "chars": "AB",
        "seed": 5,
        "seed_2": 9,
    });
    let (s, out) = call(&app, "POST", "/interpolate", Some(noise.to_string())).await;
    assert_eq!(s, StatusCode::OK);
    let nz: InterpolateResponse = serde_json::from_slice(&out).unwrap();
    assert_eq!(nz.seed_2, Some(9));
    assert_eq!(nz.frames[0].images, imp.frames[0].images);
    assert_ne!(nz.frames[4].images, imp.frames[4].images);
    let (_, g) = call(&app, "POST", "/generate", Some(gen_body(&a, "AB", 9))).await;
    let g: GenerateResponse = serde_json::from_slice(&g).unwrap();
    assert_eq!(nz.frames[4].images, g.images);

    let unknown = json!({
        "mode": "noise",
        "from": [{ "label": "xyzzy", "weight": 1.0 }],
        "lambdas": [0.0],
        "chars": "A",
    });
    let (s, _) = call(&app, "POST", "/interpolate", Some(unknown.to_string())).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/interpolate", Some(r#"{"mode": "sideways"}"#.into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unloaded_service_reports_unavailable() {
    let app = app(None);
    assert_eq!(call(&app, "GET", "/healthz", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&app, "GET", "/labels", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = call(&app, "POST", "/generate", Some(gen_body("a", "A", 0))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn reload_requires_the_token_and_swaps_the_model() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("next.ckpt");
    let mut next = f.model.clone();
    next.iteration += 1000;
    save_checkpoint(&next, &path).unwrap();

    let disabled = app(Some(f.model.clone()));
    let (s, _) = call(&disabled, "POST", "/admin/reload", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let state = AppState::new(Some(f.model.clone()), None, Some("sesame".into()));
    let app = router(Arc::clone(&state));
    let before = state.snapshot().unwrap();
    let body = json!({ "checkpoint": path }).to_string();
    let req = |token: &str| {
        Request::builder()
            .method("POST")
            .uri("/admin/reload")
            .header(ADMIN_TOKEN_HEADER, token)
            .body(Body::from(body.clone()))
            .unwrap()
    };
    let resp = app.clone().oneshot(req("wrong")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let resp = app.clone().oneshot(req("sesame")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let (_, h) = call(&app, "GET", "/healthz", None).await;
    let h: Value = serde_json::from_slice(&h).unwrap();
    assert_eq!(h["iteration"], next.iteration);
    // readers holding the old snapshot keep it
    assert_eq!(before.iteration, f.model.iteration);

    let bad = json!({ "checkpoint": dir.path().join("missing.ckpt") }).to_string();
    let req = Request::builder()
        .method("POST")
        .uri("/admin/reload")
        .header(ADMIN_TOKEN_HEADER, "sesame")
        .body(Body::from(bad))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(state.snapshot().unwrap().iteration, next.iteration);
}

#[tokio::test]
async fn desk_sized_generation_is_fast() {
    let f = fixture();
    let cfg = TrainConfig::desk(f.model.k());
    let mut model = glyphgen::evaluation::random_generator(
        &Model {
            config: cfg.clone(),
            embeddings: glyphgen::semantics::EmbeddingTable::from_provider(
                f.model.vocabulary.labels(),
                &HashProvider::new(cfg.model.embed_dim, 0),
            )
            .unwrap(),
            ..f.model.clone()
        },
        0,
    )
    .unwrap();
    model.stage = ProgressiveStage::steady(cfg.model.max_stage);
    let app = app(Some(model));
    let body = gen_body(&first_label(&f.model), "ABCHERONS", 7);
    let start = Instant::now();
    let (s, b) = call(&app, "POST", "/generate", Some(body)).await;
    let elapsed = start.elapsed();
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<GenerateResponse>(&b).unwrap().images.len(), 9);
    assert!(elapsed.as_secs_f64() < 2.0, "{elapsed:?}");
}
