#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use pragmabench::datasets::{Dataset, SEMEVAL_ID};
use pragmabench::domain::{ContextTurn, Label, Sample};
use pragmabench::llm::{CompletionClient, CompletionRequest, CompletionResponse, ProviderError};
use pragmabench::runner::RunManifest;
use pragmabench::strategies::StrategyId;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// `n` tweets alternating sarcastic / not sarcastic.
pub fn balanced_dataset(n: usize) -> Dataset {
    let samples = (0..n)
        .map(|i| Sample {
            id: format!("t{i:03}"),
            dataset_id: SEMEVAL_ID.into(),
            utterance: format!("synthetic tweet number {i}"),
            context_turns: vec![],
            speaker: None,
            gold: if i % 2 == 0 { Label::Sarcastic } else { Label::NotSarcastic },
        })
        .collect();
    Dataset::new(SEMEVAL_ID, samples, "<synthetic>")
}

pub fn dialogue_sample() -> Sample {
    Sample {
        id: "2_101".into(),
        dataset_id: "mustard".into(),
        utterance: "Sure, because that worked so well last time.".into(),
        context_turns: vec![
            ContextTurn {
                speaker: "HOWARD".into(),
                text: "Let's try the same plan again.".into(),
            },
            ContextTurn {
                speaker: "RAJ".into(),
                text: "It can't fail twice.".into(),
            },
        ],
        speaker: Some("SHELDON".into()),
        gold: Label::Sarcastic,
    }
}

pub fn mock_manifest(dataset: &Dataset, strategy: StrategyId, mode: &str) -> RunManifest {
    let mut manifest = RunManifest::new(dataset, strategy, "mock", "mock");
    manifest.mock = Some(mode.to_string());
    manifest.freeze();
    manifest
}

/// Counts calls that reach the wrapped client.
pub struct Counting<C> {
    pub inner: C,
    calls: AtomicUsize,
}

impl<C> Counting<C> {
    pub fn new(inner: C) -> Self {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl<C: CompletionClient> CompletionClient for Counting<C> {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request).await
    }

    fn wants_sample_tags(&self) -> bool {
        self.inner.wants_sample_tags()
    }
}

/// Answers every request with a closure.
pub struct FnClient<F>(pub F);

#[async_trait]
impl<F> CompletionClient for FnClient<F>
where
    F: Fn(&CompletionRequest) -> Result<CompletionResponse, ProviderError> + Send + Sync,
{
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (self.0)(request)
    }
}

pub struct OracleMetrics {
    pub accuracy: f64,
    pub f1_sarcastic: f64,
    pub f1_not_sarcastic: f64,
    pub macro_f1: f64,
}

/// Brute-force metrics by direct counting over precision and recall.
/// `None` predictions are unparseable; returns `None` when nothing is scored.
pub fn oracle_metrics(golds: &[Label], preds: &[Option<Label>], exclude_unparseable: bool) -> Option<OracleMetrics> {
    let scored: Vec<(Label, Label)> = golds
        .iter()
        .zip(preds)
        .filter_map(|(&g, &p)| match p {
            Some(p) => Some((g, p)),
            None if exclude_unparseable => None,
            None => Some((g, g.flipped())),
        })
        .collect();
    if scored.is_empty() {
        return None;
    }
    let correct = scored.iter().filter(|(g, p)| g == p).count();
    let f1 = |class: Label| {
        let predicted = scored.iter().filter(|(_, p)| *p == class).count() as f64;
        let actual = scored.iter().filter(|(g, _)| *g == class).count() as f64;
        let hits = scored.iter().filter(|(g, p)| *g == class && *p == class).count() as f64;
        let precision = if predicted == 0.0 { 0.0 } else { hits / predicted };
        let recall = if actual == 0.0 { 0.0 } else { hits / actual };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    };
    let f1_sarcastic = f1(Label::Sarcastic);
    let f1_not_sarcastic = f1(Label::NotSarcastic);
    Some(OracleMetrics {
        accuracy: correct as f64 / scored.len() as f64,
        f1_sarcastic,
        f1_not_sarcastic,
        macro_f1: (f1_sarcastic + f1_not_sarcastic) / 2.0,
    })
}
