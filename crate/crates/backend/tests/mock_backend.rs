use std::net::SocketAddr;

use biasprobe_backend::{serve_mock, Backend, BiasTable, ClientConfig, HttpBackend, LabelRule, MockModel, ServeError};
use biasprobe_core::protocol::{DenoiseLossRequest, EditRequest, GenerateRequest, LabelRequest};
use biasprobe_core::{ImageRecord, ImageSource, Provenance};

fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn gen_req(identity: &str, count: u32, seed: u64) -> GenerateRequest {
    GenerateRequest {
        prompt: format!("A color photograph of a {identity}, headshot, high-quality."),
        count,
        denoise_steps: 100,
        guidance: 8.5,
        seed,
        identity_id: identity.into(),
        width: None,
        height: None,
    }
}

fn labels() -> Vec<String> {
    vec!["a photo of a man".into(), "a photo of a woman".into()]
}

async fn client_for(seed: u64, bias: BiasTable) -> (HttpBackend, biasprobe_backend::MockServer) {
    let server = serve_mock(seed, local(), bias).await.unwrap();
    let client = HttpBackend::new(ClientConfig::new(server.url())).unwrap();
    (client, server)
}

#[tokio::test]
async fn generate_is_deterministic_with_distinct_seeds() {
    let (client, server) = client_for(7, BiasTable::default()).await;
    let a = client.generate(&gen_req("f1", 3, 11)).await.unwrap();
    let b = client.generate(&gen_req("f1", 3, 11)).await.unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    let seeds: std::collections::HashSet<u64> = a.iter().map(|i| i.seed).collect();
    assert_eq!(seeds.len(), 3);
    assert!(a.iter().all(|i| i.source == ImageSource::Generated && i.identity_id == "f1"));
    let big = client.generate(&gen_req("f1", 256, 1)).await.unwrap();
    assert_eq!(big.len(), 256);
    server.shutdown().await;
}

#[tokio::test]
async fn edit_strength_limits() {
    let (client, server) = client_for(3, BiasTable::default()).await;
    let imgs = client.generate(&gen_req("m1", 2, 5)).await.unwrap();
    let edit = |image: &ImageRecord, strength: f64| EditRequest {
        image: image.clone(),
        prompt: "A color photograph of a doctor, headshot, high-quality.".into(),
        strength,
        inference_steps: 50,
        guidance: 7.5,
        seed: 99,
    };
    let same = client.edit(&edit(&imgs[0], 0.0)).await.unwrap();
    assert_eq!(same.pixels(), imgs[0].pixels());
    assert_eq!(same.source, ImageSource::Edited);
    assert_eq!(same.parent_id.as_deref(), Some(imgs[0].id.as_str()));

    let x = client.edit(&edit(&imgs[0], 1.0)).await.unwrap();
    let y = client.edit(&edit(&imgs[1], 1.0)).await.unwrap();
    assert_ne!(imgs[0].pixels(), imgs[1].pixels());
    assert_eq!(x.pixels(), y.pixels());

    for s in [0.25, 0.6, 0.8] {
        let out = client.edit(&edit(&imgs[0], s)).await.unwrap();
        assert!(out.same_dimensions(&imgs[0]));
    }
    let bad = client.edit(&edit(&imgs[0], 1.5)).await.unwrap_err();
    assert!(matches!(bad, biasprobe_backend::BackendError::InvalidRequest(_)));
    server.shutdown().await;
}

#[tokio::test]
async fn unbiased_labels_are_balanced() {
    let model = MockModel::new(21, BiasTable::default());
    let imgs = model.generate_images(&gen_req("f1", 1000, 2)).unwrap();
    let mut first = 0usize;
    for img in &imgs {
        let req = LabelRequest { image: img.clone(), candidate_labels: labels() };
        let r = model.zero_shot_label(&req).await.unwrap();
        assert_eq!(r, model.zero_shot_label(&req).await.unwrap());
        if r.chosen == labels()[0] {
            first += 1;
        }
    }
    let frac = first as f64 / 1000.0;
    assert!((0.45..=0.55).contains(&frac), "man fraction {frac}");
}

#[tokio::test]
async fn bias_table_forces_label() {
    let bias = BiasTable {
        label_rules: vec![LabelRule {
            identity_id: Some("m1".into()),
            source: None,
            prompt_contains: vec![],
            min_strength: None,
            label: "a photo of a man".into(),
            weight: 1.0,
        }],
        loss_rules: vec![],
    };
    let (client, server) = client_for(1, bias).await;
    for identity in ["m1", "f1"] {
        let imgs = client.generate(&gen_req(identity, 50, 3)).await.unwrap();
        let mut men = 0;
        for img in imgs {
            let r = client.zero_shot_label(&LabelRequest { image: img, candidate_labels: labels() }).await.unwrap();
            men += (r.chosen == "a photo of a man") as u32;
        }
        if identity == "m1" {
            assert_eq!(men, 50);
        } else {
            assert!(men < 50);
        }
    }
    server.shutdown().await;
}

#[tokio::test]
async fn losses_depend_on_prompt() {
    let model = MockModel::new(5, BiasTable::default());
    let img = model.generate_images(&gen_req("f1", 1, 9)).unwrap().remove(0);
    let mut differ = 0;
    for i in 0..100u64 {
        let req =
            |p: String| DenoiseLossRequest { image: img.clone(), prompt: p, noise_seed: i, timestep_seed: i * 31 + 7 };
        let a = model.denoise_loss(&req(format!("A portrait of a concept-{i}."))).await.unwrap();
        let b = model.denoise_loss(&req(format!("A portrait of a other-{i}."))).await.unwrap();
        assert!(a >= 0.0 && b >= 0.0);
        assert_eq!(a, model.denoise_loss(&req(format!("A portrait of a concept-{i}."))).await.unwrap());
        differ += (a != b) as u32;
    }
    assert!(differ >= 99, "{differ}");
}

#[tokio::test]
async fn same_seed_same_bytes_across_servers() {
    let body = serde_json::to_vec(&gen_req("f2", 4, 8)).unwrap();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let server = serve_mock(42, local(), BiasTable::default()).await.unwrap();
        let http = reqwest::Client::new();
        let mut seq = Vec::new();
        for path in ["/v1/generate", "/v1/generate"] {
            let r = http.post(format!("{}{path}", server.url())).body(body.clone()).send().await.unwrap();
            seq.push(r.bytes().await.unwrap().to_vec());
        }
        outputs.push(seq);
        server.shutdown().await;
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[tokio::test]
async fn field_order_does_not_matter() {
    let server = serve_mock(4, local(), BiasTable::default()).await.unwrap();
    let http = reqwest::Client::new();
    let forward = r#"{"prompt":"A color photograph of a doctor, headshot, high-quality.","count":2,"denoise_steps":100,"guidance":8.5,"seed":17,"identity_id":"m2"}"#;
    let reversed = r#"{"identity_id":"m2","seed":17,"guidance":8.5,"denoise_steps":100,"count":2,"prompt":"A color photograph of a doctor, headshot, high-quality."}"#;
    let mut bodies = Vec::new();
    for b in [forward, reversed] {
        let r = http.post(format!("{}/v1/generate", server.url())).body(b).send().await.unwrap();
        assert!(r.status().is_success());
        bodies.push(r.bytes().await.unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
    server.shutdown().await;
}

#[tokio::test]
async fn health_and_errors() {
    let (client, server) = client_for(0, BiasTable::default()).await;
    let h = client.health().await.unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.protocol_version, "v1");

    let http = reqwest::Client::new();
    let r = http.post(format!("{}/v1/label", server.url())).body("{not json").send().await.unwrap();
    assert_eq!(r.status(), 400);
    let v: serde_json::Value = r.json().await.unwrap();
    assert_eq!(v["error"]["code"], "bad_request");
    server.shutdown().await;
}

#[tokio::test]
async fn port_in_use() {
    let first = serve_mock(0, local(), BiasTable::default()).await.unwrap();
    let err = serve_mock(0, first.local_addr(), BiasTable::default()).await.err().unwrap();
    assert!(matches!(err, ServeError::PortInUse(p) if p == first.local_addr().port()));
    first.shutdown().await;
}

#[tokio::test]
async fn in_process_mock_validates_like_the_client() {
    let model = MockModel::new(0, BiasTable::default());
    let img = ImageRecord::filled(4, 4, [200, 150, 120], Provenance { id: "x".into(), ..Default::default() }).unwrap();
    let err =
        model.zero_shot_label(&LabelRequest { image: img, candidate_labels: vec!["only".into()] }).await.unwrap_err();
    assert!(matches!(err, biasprobe_backend::BackendError::InvalidRequest(_)));
    assert!(model.generate(&gen_req("f", 0, 0)).await.is_err());
}
