use std::collections::BTreeMap;
use std::io::Cursor;
use std::thread;

use image::{ImageFormat, Rgb, RgbImage};
use mqa_core::catalog::ModalityPayload;
use mqa_core::encoding::{
    encode_image_hist, encode_knowledge_base, encode_object, encode_query, encode_text_hash_ngram,
    EncoderInput,
};
use mqa_core::{
    EncoderKind, EncoderRegistry, EncoderSpec, Error, KnowledgeBase, ModalitySpec, MultiModalObject,
    QueryContext,
};
use mqa_testkit::hash_ngram_reference;
use proptest::prelude::*;

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()
}

fn assert_matches_reference(text: &str, d: usize) {
    let got = encode_text_hash_ngram(text, d);
    let want = hash_ngram_reference(text, d);
    assert_eq!(got.len(), d);
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        assert!((*g as f64 - w).abs() < 1e-6, "{text:?} bucket {i}: {g} vs {w}");
        assert_eq!(*g == 0.0, *w == 0.0, "{text:?} bucket {i} support differs");
    }
}

#[test]
fn cat_matches_independent_hash_oracle() {
    assert_matches_reference("cat", 64);
    let v = encode_text_hash_ngram("cat", 64);
    assert!((norm(&v) - 1.0).abs() < 1e-6);
    // "cat" and its single trigram "cat" hash identically, so one bucket holds ±2 before normalization
    assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 1);
}

#[test]
fn multi_token_text_matches_oracle() {
    for text in ["The quick brown fox", "Blade Runner 2049", "x-ray, X RAY; xray!", "héllo wörld"] {
        for d in [1, 7, 64, 256] {
            assert_matches_reference(text, d);
        }
    }
}

proptest! {
    #[test]
    fn hash_ngram_oracle_and_norm(text in "[a-zA-Z0-9 ,.;-]{0,40}", d in 1usize..128) {
        assert_matches_reference(&text, d);
        let v = encode_text_hash_ngram(&text, d);
        let n = norm(&v);
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn color_hist_is_unit_norm(w in 1u32..12, h in 1u32..12, seed in any::<u64>()) {
        let mut s = seed;
        let img = RgbImage::from_fn(w, h, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = s.to_le_bytes();
            Rgb([b[5], b[6], b[7]])
        });
        let v = encode_image_hist(&img);
        prop_assert_eq!(v.len(), 48);
        prop_assert!((norm(&v) - 1.0).abs() < 1e-6);
        prop_assert_eq!(v, encode_image_hist(&img));
    }
}

fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

#[test]
fn encode_object_composes_per_encoder_oracles() {
    let dir = tempfile::tempdir().unwrap();
    let img = RgbImage::from_fn(4, 3, |x, y| Rgb([(x * 60) as u8, (y * 90) as u8, 200]));
    std::fs::write(dir.path().join("poster.png"), png_bytes(&img)).unwrap();

    let schema = vec![
        ModalitySpec::new("text", 64),
        ModalitySpec::new("embedding", 3),
        ModalitySpec::new("image", 48),
    ];
    let registry = EncoderRegistry::new(
        &schema,
        vec![
            EncoderSpec::new("text", EncoderKind::HashNgram, 64),
            EncoderSpec::new("embedding", EncoderKind::PassthroughVector, 3),
            EncoderSpec::new("image", EncoderKind::ColorHist, 48),
        ],
    )
    .unwrap();
    let full = MultiModalObject::new("full")
        .with_payload("text", ModalityPayload::Inline("a film about cats".into()))
        .with_payload("embedding", ModalityPayload::Vector(vec![0.5, -1.0, 2.0]))
        .with_payload("image", ModalityPayload::Path("poster.png".into()));
    let partial = MultiModalObject::new("partial")
        .with_payload("embedding", ModalityPayload::Vector(vec![1.0, 2.0, 3.0]));
    let kb = KnowledgeBase::from_objects("kb", schema, vec![full, partial], dir.path()).unwrap();

    let got = encode_object(&kb, &kb.objects[0], &registry).unwrap();
    let text: Vec<f32> = hash_ngram_reference("a film about cats", 64).iter().map(|x| *x as f32).collect();
    for (g, w) in got["text"].iter().zip(&text) {
        assert!((g - w).abs() < 1e-6);
    }
    assert_eq!(got["embedding"], vec![0.5, -1.0, 2.0]);
    assert_eq!(got["image"], encode_image_hist(&img));

    let got = encode_object(&kb, &kb.objects[1], &registry).unwrap();
    assert_eq!(got["text"], vec![0.0; 64]);
    assert_eq!(got["image"], vec![0.0; 48]);
    assert_eq!(got["embedding"], vec![1.0, 2.0, 3.0]);
}

#[test]
fn selected_result_reuses_stored_vector_bit_exactly() {
    let schema = vec![ModalitySpec::new("text", 32), ModalitySpec::new("image", 4)];
    let registry = EncoderRegistry::new(
        &schema,
        vec![
            EncoderSpec::new("text", EncoderKind::HashNgram, 32),
            EncoderSpec::new("image", EncoderKind::PassthroughVector, 4),
        ],
    )
    .unwrap();
    let objects = (0..5)
        .map(|i| {
            MultiModalObject::new(format!("o{i}"))
                .with_payload("text", ModalityPayload::Inline(format!("object number {i}")))
                .with_payload("image", ModalityPayload::Vector(vec![0.1 * i as f32, 1.0 / 3.0, -0.7, 1e-30]))
        })
        .collect();
    let mut kb = KnowledgeBase::from_objects("kb", schema, objects, ".").unwrap();
    encode_knowledge_base(&mut kb, &registry).unwrap();

    let q = encode_query(&kb, &QueryContext::text("refine").with_selected("o3"), &registry).unwrap();
    let stored = kb.stored_vector(3, "image").unwrap();
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&q[1]), bits(stored));
    assert_eq!(q[0], encode_text_hash_ngram("refine", 32));

    let missing = encode_query(&kb, &QueryContext::text("x").with_selected("nope"), &registry);
    assert!(matches!(missing, Err(Error::NotFound(id)) if id == "nope"));
}

/// Serves `requests` calls to `/encode`, answering with `[len, 1, 0, ...]`
/// of the requested width, or 500 when `fail` is set. Returns the base URL and
/// a handle yielding the recorded request bodies.
fn stub_encoder(requests: usize, dim: usize, fail: bool) -> (String, thread::JoinHandle<Vec<serde_json::Value>>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for _ in 0..requests {
            let mut req = server.recv().unwrap();
            assert_eq!(req.url(), "/encode");
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let body: serde_json::Value = serde_json::from_str(&body).unwrap();
            let len = body["payload"].to_string().len() as f32;
            seen.push(body);
            let response = if fail {
                tiny_http::Response::from_string("boom").with_status_code(500)
            } else {
                let mut v = vec![0.0f32; dim];
                v[0] = len;
                v[1] = 1.0;
                tiny_http::Response::from_string(serde_json::json!({ "vector": v }).to_string())
            };
            req.respond(response).unwrap();
        }
        seen
    });
    (url, handle)
}

fn external_registry(url: &str) -> (Vec<ModalitySpec>, EncoderRegistry) {
    let schema = vec![ModalitySpec::new("caption", 4)];
    let mut spec = EncoderSpec::new("caption", EncoderKind::ExternalHttp, 4);
    spec.endpoint = Some(url.to_string());
    let registry = EncoderRegistry::new(&schema, vec![spec]).unwrap();
    (schema, registry)
}

#[test]
fn external_encoder_round_trip() {
    let (url, handle) = stub_encoder(3, 4, false);
    let (schema, registry) = external_registry(&url);

    let v = registry.encode("caption", EncoderInput::Text("hello")).unwrap();
    assert_eq!(v, vec!["\"hello\"".len() as f32, 1.0, 0.0, 0.0]);
    registry.encode("caption", EncoderInput::Vector(&[1.0, 2.0])).unwrap();
    registry.encode("caption", EncoderInput::Bytes(b"\x00\x01")).unwrap();

    let seen = handle.join().unwrap();
    assert_eq!(seen[0], serde_json::json!({ "modality": "caption", "payload": "hello" }));
    assert_eq!(seen[1]["payload"], serde_json::json!([1.0, 2.0]));
    assert_eq!(seen[2]["payload"], serde_json::json!({ "bytes_base64": "AAE=" }));
    assert_eq!(schema[0].dimension, 4);
}

#[test]
fn external_encoder_failures_are_unavailable() {
    let (url, handle) = stub_encoder(1, 4, true);
    let (_, registry) = external_registry(&url);
    let err = registry.encode("caption", EncoderInput::Text("x")).unwrap_err();
    assert!(matches!(err, Error::EncoderUnavailable(_)), "{err:?}");
    handle.join().unwrap();

    // wrong width from the service
    let (url, handle) = stub_encoder(1, 3, false);
    let (_, registry) = external_registry(&url);
    let err = registry.encode("caption", EncoderInput::Text("x")).unwrap_err();
    assert!(matches!(err, Error::EncoderUnavailable(_) | Error::DimensionMismatch { .. }), "{err:?}");
    handle.join().unwrap();
}

#[test]
fn encoding_is_deterministic_across_runs() {
    let schema = vec![ModalitySpec::new("text", 16)];
    let registry =
        EncoderRegistry::new(&schema, vec![EncoderSpec::new("text", EncoderKind::HashNgram, 16)]).unwrap();
    let objects: Vec<MultiModalObject> = (0..50)
        .map(|i| MultiModalObject::new(format!("{i}")).with_payload("text", ModalityPayload::Inline(format!("doc {i} {}", i * i))))
        .collect();
    let run = || {
        let mut kb = KnowledgeBase::from_objects("kb", schema.clone(), objects.clone(), ".").unwrap();
        encode_knowledge_base(&mut kb, &registry).unwrap();
        kb.objects.iter().map(|o| o.vectors.clone().unwrap()).collect::<Vec<BTreeMap<_, _>>>()
    };
    assert_eq!(run(), run());
}
