use std::collections::BTreeMap;

use aesthete::attribute::AestheticAttribute;
use aesthete::datastore::aemb::{decode, encode};
use aesthete::datastore::{Catalog, EmbeddingRecord, ManifestRecord};
use aesthete::fusion::{build_query, normalize, FusionConfig, UnitVector};
use aesthete::reasoning::{parse_reasoning, AttributeThought};
use aesthete::retrieval::retrieve_top_k;
use proptest::collection::{btree_map, vec};
use proptest::prelude::*;

fn raw_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    vec(-1.0f32..1.0, dim).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f32>() > 1e-3)
}

fn unit(dim: usize) -> impl Strategy<Value = UnitVector> {
    raw_vec(dim).prop_map(|v| normalize(&v).unwrap())
}

fn attribute() -> impl Strategy<Value = AestheticAttribute> {
    prop::sample::select(AestheticAttribute::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn aemb_round_trip_is_bitwise(
        dim in 1usize..24,
        rows in vec((any::<u32>(), vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 24)), 0..20),
    ) {
        let mut seen = std::collections::BTreeSet::new();
        let records: Vec<EmbeddingRecord> = rows
            .into_iter()
            .filter(|(id, _)| seen.insert(*id))
            .map(|(id, v)| EmbeddingRecord::new(format!("item-{id}"), v[..dim].to_vec()))
            .collect();
        let bytes = encode(dim, &records).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.dim, dim);
        prop_assert_eq!(back.records.len(), records.len());
        for (a, b) in records.iter().zip(&back.records) {
            prop_assert_eq!(&a.id, &b.id);
            let bits_a: Vec<u32> = a.vector.iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u32> = b.vector.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
        prop_assert_eq!(encode(dim, &back.records).unwrap(), bytes);
    }

    #[test]
    fn truncated_aemb_is_an_error_not_a_panic(cut in 0usize..200) {
        let records = vec![EmbeddingRecord::new("a", vec![0.5; 8]), EmbeddingRecord::new("b", vec![0.25; 8])];
        let bytes = encode(8, &records).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(decode(&bytes[..cut]).is_err());
    }

    #[test]
    fn parser_round_trips_structured_responses(
        thoughts in btree_map(attribute(), ("[a-z][a-z ]{0,12}[a-z]", "[ -~]{0,40}"), 0..=6),
        target in "[A-Za-z][A-Za-z ,{}\"]{0,60}[a-z]",
        ident in "[ -~]{0,40}",
        prose in "[A-Za-z .]{0,30}",
        fenced in any::<bool>(),
    ) {
        let attrs: serde_json::Map<String, serde_json::Value> = thoughts
            .iter()
            .map(|(a, (k, r))| (a.as_str().to_string(), serde_json::json!({"keyword": k, "reason": r})))
            .collect();
        let body = serde_json::json!({"identification": ident, "attributes": attrs, "target_description": target});
        let body = serde_json::to_string_pretty(&body).unwrap();
        let raw = if fenced {
            format!("{prose}\n```json\n{body}\n```\n{prose}")
        } else {
            format!("{prose} {body} {prose}")
        };
        let parsed = parse_reasoning(&raw).unwrap();
        prop_assert_eq!(parsed.target_description, target.trim());
        prop_assert_eq!(parsed.identification_summary, ident.trim());
        let expected: BTreeMap<AestheticAttribute, AttributeThought> =
            thoughts.iter().map(|(a, (k, r))| (*a, AttributeThought::new(k.clone(), r.clone()).unwrap())).collect();
        prop_assert_eq!(&parsed.profile.thoughts, &expected);
        for a in AestheticAttribute::ALL {
            prop_assert_eq!(parsed.profile.incomplete.contains(&a), !expected.contains_key(&a));
        }
    }

    #[test]
    fn parser_never_panics(raw in "[ -~\n]{0,300}") {
        let _ = parse_reasoning(&raw);
    }

    #[test]
    fn fused_query_is_unit_and_weights_are_distributions(
        (outfit, target, attrs, cands) in (2usize..20).prop_flat_map(|d| (
            vec(unit(d), 1..6),
            unit(d),
            btree_map(attribute(), unit(d), 0..=6),
            vec(unit(d), 1..8),
        )),
        tau in prop::sample::select(vec![1e-3, 1e-2, 0.1, 1.0, 10.0]),
    ) {
        let cfg = FusionConfig { tau, ..FusionConfig::default() };
        let q = build_query(&outfit, &target, Some(&attrs), &cands, &cfg).unwrap();
        prop_assert!((q.q.norm() - 1.0).abs() < 1e-5);
        let d = &q.diagnostics;
        prop_assert!((d.saliency_weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!((d.gates.values().sum::<f64>() - 1.0).abs() < 1e-6);
        if !attrs.is_empty() {
            prop_assert!((d.attribute_weights.values().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let max_h = (cands.len() as f64).ln();
        for h in d.cue_entropies.values() {
            prop_assert!(*h >= 0.0 && *h <= max_h + 1e-12);
        }
    }

    #[test]
    fn retrieval_ranking_is_scale_invariant_and_filtered(
        (rows, raw_q) in (2usize..12).prop_flat_map(|d| (vec((raw_vec(d), 0usize..3), 1..40), raw_vec(d))),
        scale in 0.01f32..100.0,
        k in 1usize..50,
    ) {
        let dim = raw_q.len();
        let cats = ["tops", "shoes", "bags"];
        let manifest: Vec<ManifestRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (_, c))| ManifestRecord {
                item_id: format!("i{i:03}"),
                category: cats[*c].into(),
                description: String::new(),
                image_ref: String::new(),
            })
            .collect();
        let images: Vec<EmbeddingRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (v, _))| EmbeddingRecord::new(format!("i{i:03}"), normalize(v).unwrap().into_inner()))
            .collect();
        let catalog = Catalog::from_records(dim, manifest, images, None).unwrap();
        let q1 = normalize(&raw_q).unwrap();
        let scaled: Vec<f32> = raw_q.iter().map(|x| x * scale).collect();
        let q2 = normalize(&scaled).unwrap();

        let all1 = retrieve_top_k(&q1, &catalog, catalog.len(), None).unwrap();
        let all2 = retrieve_top_k(&q2, &catalog, catalog.len(), None).unwrap();
        prop_assert_eq!(all1.items.len(), catalog.len());
        for w in all1.items.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].item_id < w[1].item_id));
        }
        // Scaling may move scores in the last ulp; rankings agree up to such ties.
        for (a, b) in all1.items.iter().zip(&all2.items) {
            prop_assert!((a.score - b.score).abs() < 1e-6);
        }

        for cat in cats {
            match retrieve_top_k(&q1, &catalog, k, Some(cat)) {
                Ok(r) => {
                    prop_assert!(r.items.iter().all(|it| catalog.item(it.index).category == cat));
                    let n = catalog.items().iter().filter(|it| it.category == cat).count();
                    prop_assert_eq!(r.items.len(), k.min(n));
                }
                Err(_) => prop_assert!(catalog.items().iter().all(|it| it.category != cat)),
            }
        }
    }
}
