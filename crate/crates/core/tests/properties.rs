mod common;

use common::oracle_metrics;
use pragmabench::datasets::{parse_interchange, Dataset};
use pragmabench::domain::{confusion_counts, ContextTurn, Label, MetricsSummary, Sample, UnparseablePolicy, Verdict};
use pragmabench::llm::{canonical_digest, ChatMessage, CompletionRequest, ResponseCache, Role};
use pragmabench::strategies::parse_verdict;
use proptest::prelude::*;

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Sarcastic), Just(Label::NotSarcastic)]
}

fn prediction() -> impl Strategy<Value = Option<Label>> {
    prop_oneof![Just(None), label().prop_map(Some)]
}

fn policy() -> impl Strategy<Value = UnparseablePolicy> {
    prop_oneof![Just(UnparseablePolicy::CountAsWrong), Just(UnparseablePolicy::Exclude)]
}

fn verdict(p: Option<Label>) -> Verdict {
    match p {
        Some(l) => Verdict::Decided(l),
        None => Verdict::Unparseable { raw: String::new() },
    }
}

fn metrics(golds: &[Label], preds: &[Option<Label>], policy: UnparseablePolicy) -> Option<MetricsSummary> {
    let verdicts: Vec<Verdict> = preds.iter().copied().map(verdict).collect();
    let counts = confusion_counts(golds.iter().copied().zip(verdicts.iter()), policy).ok()?;
    MetricsSummary::from_counts(counts, policy).ok()
}

fn records() -> impl Strategy<Value = Vec<(Label, Option<Label>)>> {
    prop::collection::vec((label(), prediction()), 1..60)
}

proptest! {
    #[test]
    fn metrics_match_brute_force(recs in records(), policy in policy()) {
        let (golds, preds): (Vec<_>, Vec<_>) = recs.into_iter().unzip();
        let ours = metrics(&golds, &preds, policy);
        let oracle = oracle_metrics(&golds, &preds, policy == UnparseablePolicy::Exclude);
        prop_assert_eq!(ours.is_some(), oracle.is_some());
        if let (Some(m), Some(o)) = (ours, oracle) {
            prop_assert!((m.accuracy - o.accuracy).abs() < 1e-12);
            prop_assert!((m.macro_f1 - o.macro_f1).abs() < 1e-12);
            prop_assert!((m.per_class_f1[&Label::Sarcastic] - o.f1_sarcastic).abs() < 1e-12);
            prop_assert!((m.per_class_f1[&Label::NotSarcastic] - o.f1_not_sarcastic).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_bounded_and_counted(recs in records(), policy in policy()) {
        let (golds, preds): (Vec<_>, Vec<_>) = recs.into_iter().unzip();
        if let Some(m) = metrics(&golds, &preds, policy) {
            prop_assert!((0.0..=1.0).contains(&m.accuracy));
            prop_assert!((0.0..=1.0).contains(&m.macro_f1));
            prop_assert_eq!(m.total_records(), golds.len() as u64);
            let c = m.counts;
            let scored = c.tp + c.fp + c.fn_ + c.tn;
            match policy {
                UnparseablePolicy::CountAsWrong => prop_assert_eq!(scored, golds.len() as u64),
                UnparseablePolicy::Exclude => prop_assert_eq!(scored + c.unparseable, golds.len() as u64),
            }
        }
    }

    #[test]
    fn metrics_invariant_under_permutation(recs in records(), policy in policy(), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        let n = shuffled.len();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let (g1, p1): (Vec<_>, Vec<_>) = recs.into_iter().unzip();
        let (g2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(metrics(&g1, &p1, policy), metrics(&g2, &p2, policy));
    }

    #[test]
    fn label_swap_symmetry(recs in records(), policy in policy()) {
        let (golds, preds): (Vec<_>, Vec<_>) = recs.into_iter().unzip();
        let swapped_golds: Vec<Label> = golds.iter().map(|l| l.flipped()).collect();
        let swapped_preds: Vec<Option<Label>> = preds.iter().map(|p| p.map(Label::flipped)).collect();
        let a = metrics(&golds, &preds, policy);
        let b = metrics(&swapped_golds, &swapped_preds, policy);
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert_eq!(a.macro_f1, b.macro_f1);
            prop_assert_eq!(a.counts.swapped(), b.counts);
        }
    }

    #[test]
    fn macro_f1_equals_accuracy_on_symmetric_counts(a in 1u64..40, b in 0u64..40) {
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for (gold, pred, count) in [
            (Label::Sarcastic, Label::Sarcastic, a),
            (Label::NotSarcastic, Label::NotSarcastic, a),
            (Label::NotSarcastic, Label::Sarcastic, b),
            (Label::Sarcastic, Label::NotSarcastic, b),
        ] {
            for _ in 0..count {
                golds.push(gold);
                preds.push(Some(pred));
            }
        }
        let m = metrics(&golds, &preds, UnparseablePolicy::CountAsWrong).unwrap();
        prop_assert!((m.macro_f1 - m.accuracy).abs() < 1e-12);
    }

    #[test]
    fn parse_verdict_is_total(text in any::<String>()) {
        let v = parse_verdict(&text);
        if let Verdict::Unparseable { raw } = v {
            prop_assert_eq!(raw, text);
        }
    }

    #[test]
    fn parse_verdict_reads_trailing_verdict(prefix in "[a-z .,\n]{0,200}", l in label(), lower in any::<bool>()) {
        let line = pragmabench::llm::verdict_line(l);
        let line = if lower { line.to_lowercase() } else { line.to_string() };
        prop_assert_eq!(parse_verdict(&format!("{prefix}\n{line}")), Verdict::Decided(l));
    }

    #[test]
    fn digest_survives_serde_round_trip(req in request()) {
        let json = serde_json::to_string(&req).unwrap();
        let back: CompletionRequest = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(canonical_digest(&back), canonical_digest(&req));
        prop_assert_eq!(back, req);
    }

    #[test]
    fn interchange_round_trips(samples in prop::collection::vec(sample(), 0..12)) {
        let ds = Dataset::new("custom", samples, "<generated>");
        let text = ds.to_interchange();
        let back = parse_interchange(&text, "<generated>", "custom").unwrap();
        prop_assert_eq!(&back.samples, &ds.samples);
        prop_assert_eq!(back.digest(), ds.digest());
    }
}

fn request() -> impl Strategy<Value = CompletionRequest> {
    let message = (prop_oneof![Just(Role::System), Just(Role::User), Just(Role::Assistant)], ".{0,80}")
        .prop_map(|(role, content)| ChatMessage { role, content });
    (
        "[a-z]{1,8}",
        "[a-z0-9.-]{1,12}",
        prop::collection::vec(message, 0..4),
        ".{1,40}",
        0.0f64..2.0,
        1u32..4096,
        prop::option::of(prop::collection::vec("[A-Z]{1,5}", 0..3)),
    )
        .prop_map(|(provider_id, model, mut messages, last, temperature, max_tokens, stop)| {
            messages.push(ChatMessage::user(last));
            CompletionRequest {
                provider_id,
                model,
                messages,
                temperature,
                max_tokens,
                stop,
            }
        })
}

fn sample() -> impl Strategy<Value = Sample> {
    (
        "[a-z0-9_]{1,10}",
        ".{1,60}",
        prop::collection::vec(("[A-Z]{1,8}", ".{0,40}"), 0..4),
        prop::option::of("[A-Z]{1,8}"),
        label(),
    )
        .prop_map(|(id, utterance, turns, speaker, gold)| Sample {
            id,
            dataset_id: "custom".into(),
            utterance,
            context_turns: turns
                .into_iter()
                .map(|(speaker, text)| ContextTurn { speaker, text })
                .collect(),
            speaker,
            gold,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cache_returns_exactly_what_was_stored(req in request(), text in ".{0,200}", other_temp in 2.5f64..3.0) {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        rt.block_on(async {
            assert_eq!(cache.get(&req).await, None);
            cache.put(&req, &text).await.unwrap();
            assert_eq!(cache.get(&req).await.as_deref(), Some(text.as_str()));
            let mut other = req.clone();
            other.temperature = other_temp;
            assert_eq!(cache.get(&other).await, None);
        });
    }
}
