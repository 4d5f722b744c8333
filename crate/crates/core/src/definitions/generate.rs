use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{
    build_prompt, prompt_text, CacheEntry, DefinitionError, DefinitionProvider, DefinitionRecord,
    GenerationCache, GenerationRequest, GenerationResult, Result,
};
use crate::ontology::Ontology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationOptions {
    /// Maximum provider requests in flight.
    pub concurrency: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions { concurrency: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub concept_id: String,
    pub synonym: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationOutcome {
    /// Real definitions followed by synthetic ones, concept by concept in id
    /// order.
    pub records: Vec<DefinitionRecord>,
    pub failures: Vec<GenerationFailure>,
    pub provider_calls: usize,
    pub cache_hits: usize,
}

impl GenerationOutcome {
    pub fn synthetic_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.provenance == super::Provenance::Synthetic)
            .count()
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn run_one(
    request: &GenerationRequest,
    provider: &dyn DefinitionProvider,
    cache: &GenerationCache,
) -> Result<GenerationResult> {
    let model = provider.model_tag();
    let prompt = prompt_text(&request.messages);
    if let Some(hit) = cache.get(&model, &prompt) {
        return Ok(GenerationResult {
            text: hit.text,
            model,
            timestamp: hit.timestamp,
            cache_hit: true,
        });
    }
    let text = provider.generate(request)?;
    let timestamp = now_secs();
    cache.insert(CacheEntry {
        model: model.clone(),
        prompt,
        text: text.clone(),
        timestamp,
    })?;
    Ok(GenerationResult {
        text,
        model,
        timestamp,
        cache_hit: false,
    })
}

/// Collects the real definitions of every concept and requests one synthetic
/// definition per synonym. Provider failures are recorded and skipped; a
/// concept that ends up with no definition at all fails the run.
pub fn generate_definitions(
    ontology: &Ontology,
    provider: &dyn DefinitionProvider,
    cache: &GenerationCache,
    options: GenerationOptions,
) -> Result<GenerationOutcome> {
    let mut requests = Vec::new();
    for concept in ontology.concepts() {
        for synonym in &concept.synonyms {
            requests.push(GenerationRequest {
                concept_id: concept.id.clone(),
                synonym: synonym.clone(),
                messages: build_prompt(synonym)?,
            });
        }
    }

    let calls_before = provider.calls();
    let slots: Mutex<Vec<Option<Result<GenerationResult>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = options.concurrency.max(1).min(requests.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(request) = requests.get(i) else {
                    break;
                };
                let result = run_one(request, provider, cache);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    let results = slots.into_inner().unwrap();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut cache_hits = 0;
    let mut results = requests.iter().zip(results).peekable();
    let mut uncovered = Vec::new();
    for concept in ontology.concepts() {
        let before = records.len();
        records.extend(
            concept
                .real_definitions
                .iter()
                .filter(|d| !d.trim().is_empty())
                .map(|d| DefinitionRecord::real(&concept.id, d)),
        );
        while let Some((request, _)) = results.peek() {
            if request.concept_id != concept.id {
                break;
            }
            let (request, result) = results.next().unwrap();
            match result.expect("every request slot is filled") {
                Ok(generated) => {
                    cache_hits += usize::from(generated.cache_hit);
                    let record = DefinitionRecord::synthetic(
                        &concept.id,
                        generated.text.trim(),
                        &request.synonym,
                    );
                    match record.validate() {
                        Ok(()) => records.push(record),
                        Err(e) => failures.push(GenerationFailure {
                            concept_id: concept.id.clone(),
                            synonym: request.synonym.clone(),
                            error: e.to_string(),
                        }),
                    }
                }
                Err(e) => failures.push(GenerationFailure {
                    concept_id: concept.id.clone(),
                    synonym: request.synonym.clone(),
                    error: e.to_string(),
                }),
            }
        }
        if records.len() == before {
            uncovered.push(concept.id.clone());
        }
    }
    if !uncovered.is_empty() {
        return Err(DefinitionError::Uncovered(uncovered));
    }
    Ok(GenerationOutcome {
        records,
        failures,
        provider_calls: provider.calls() - calls_before,
        cache_hits,
    })
}
