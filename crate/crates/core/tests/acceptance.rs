//! Acceptance suite. Each criterion prints one line:
//! `[PASS] C<n> <title> (<elapsed>) <detail>`; FAIL exits non-zero, SKIP does not.
//!
//! Criterion 7 reads public STS files from `ONTOINFUSE_STS_DIR`
//! (`biosses.tsv`, `biosses.dis`, `sts12.tsv` ... `sts16.tsv`). Criterion 10
//! additionally scores `ONTOINFUSE_BIOSSES_VECTORS` (an OIVC file) when set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ontoinfuse::definitions::{
    generate_definitions, DefinitionRecord, GenerationCache, GenerationOptions, OfflineProvider,
    Provenance,
};
use ontoinfuse::embedding::{
    cache_embeddings, cosine_similarity, AdapterEncoder, AdapterWeights, CachedEncoder,
    EmbeddingVector, Encoder, HashEncoder, PrecomputedEncoder, VectorCache,
};
use ontoinfuse::evaluation::{evaluate, load_sts, load_subset, spearman, StsPair};
use ontoinfuse::hardneg::{
    build_candidate_index, mine_all, mine_hard_negatives, IndexOptions, MiningOptions,
    TrainingSample,
};
use ontoinfuse::ontology::{
    levenshtein, normalize_synonyms, same_words_reordered, strip_parenthesized, Concept, Ontology,
};
use ontoinfuse::pairgen::{generate_pairs, read_pairs, PairOptions, PositivePair};
use ontoinfuse::pipeline::{DatasetConfig, Pipeline, PipelineConfig, Stage};
use ontoinfuse::trainer::{
    infonce_loss, loss_gradient, train, Batch, NegativeScope, TrainerConfig,
};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Outcome = Result<Verdict, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Ok(Verdict::Fail(format!($($fmt)+)));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

// ---------------------------------------------------------------- oracles

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Direct evaluation of -log(exp(s_ii/t) / sum_c exp(s_ic/t)) with every
/// positive and every hard negative in the batch as candidates.
fn oracle_infonce(batch: &Batch, t: f64) -> Vec<f64> {
    let candidates: Vec<&EmbeddingVector> = batch
        .positives
        .iter()
        .chain(batch.hard_negatives.iter().flatten())
        .collect();
    batch
        .anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let num = (oracle_cos(a.values(), batch.positives[i].values()) / t).exp();
            let den: f64 = candidates
                .iter()
                .map(|c| (oracle_cos(a.values(), c.values()) / t).exp())
                .sum();
            -(num / den).ln()
        })
        .collect()
}

fn oracle_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    // rank = 1 + #less + (#equal - 1) / 2
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (oracle_ranks(x), oracle_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

/// Ancestor sets by depth-first search over explicit parent lists.
fn oracle_ancestors(parents: &BTreeMap<String, Vec<String>>) -> BTreeMap<String, BTreeSet<String>> {
    let mut out = BTreeMap::new();
    for id in parents.keys() {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&String> = parents[id].iter().collect();
        while let Some(p) = stack.pop() {
            if seen.insert(p.clone()) {
                stack.extend(parents[p].iter());
            }
        }
        out.insert(id.clone(), seen);
    }
    out
}

fn oracle_related(anc: &BTreeMap<String, BTreeSet<String>>, a: &str, b: &str) -> bool {
    a == b || anc[a].contains(b) || anc[b].contains(a)
}

// ---------------------------------------------------------------- helpers

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return EmbeddingVector::new(v).unwrap();
        }
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n_anchors: usize, k: usize, dim: usize) -> Batch {
    Batch {
        anchors: (0..n_anchors).map(|_| random_vector(rng, dim)).collect(),
        positives: (0..n_anchors).map(|_| random_vector(rng, dim)).collect(),
        hard_negatives: (0..n_anchors)
            .map(|_| (0..k).map(|_| random_vector(rng, dim)).collect())
            .collect(),
    }
}

fn unit(angle: f64) -> EmbeddingVector {
    EmbeddingVector::new(vec![angle.cos(), angle.sin()]).unwrap()
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    (0..syllables)
        .flat_map(|_| {
            [
                C[rng.gen_range(0..C.len())] as char,
                V[rng.gen_range(0..V.len())] as char,
            ]
        })
        .collect()
}

/// Concepts with pseudo-word synonyms that all survive the synonym filter,
/// arranged in a random DAG with three roots.
fn desk_ontology(rng: &mut ChaCha8Rng, concepts: usize) -> Vec<Concept> {
    let mut used: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for i in 0..concepts {
        let want = rng.gen_range(2..=4);
        let mut synonyms: Vec<String> = Vec::new();
        while synonyms.len() < want {
            let candidate = format!("{} {}", pseudo_word(rng, 8), pseudo_word(rng, 8));
            let clashes = synonyms
                .iter()
                .any(|s| levenshtein(s, &candidate) < 10 || same_words_reordered(s, &candidate))
                || used
                    .iter()
                    .any(|u| u.contains(&candidate) || candidate.contains(u.as_str()));
            if !clashes {
                used.push(candidate.clone());
                synonyms.push(candidate);
            }
        }
        let mut concept = Concept::new(format!("DESK:{i:04}"), synonyms[0].clone())
            .with_synonyms(synonyms[1..].to_vec());
        if i >= 3 {
            let mut parents: BTreeSet<String> = BTreeSet::new();
            for _ in 0..rng.gen_range(1..=2) {
                parents.insert(format!("DESK:{:04}", rng.gen_range(0..i)));
            }
            concept = concept.with_parents(parents);
        }
        if rng.gen_bool(0.5) {
            concept = concept.with_definition(format!(
                "{} is a rare {} condition of the {} {}.",
                synonyms[0],
                pseudo_word(rng, 2),
                pseudo_word(rng, 2),
                pseudo_word(rng, 3)
            ));
        }
        out.push(concept);
    }
    out
}

/// Independent check of one pair: returns a description of the first
/// violated property.
fn pair_violation(pair: &PositivePair, base_texts: &BTreeSet<(String, String)>) -> Option<String> {
    let Some(m) = pair.anchor.mention.as_ref() else {
        return Some("anchor without mention".into());
    };
    if pair.positive.provenance != Provenance::Substituted {
        return Some(format!(
            "positive provenance {:?}",
            pair.positive.provenance
        ));
    }
    if pair.anchor.provenance == Provenance::Substituted {
        return Some("anchor is itself substituted".into());
    }
    if !base_texts.contains(&(pair.concept_id.clone(), pair.anchor.text.clone())) {
        return Some("anchor is not a stored definition".into());
    }
    if pair.anchor.concept_id != pair.concept_id || pair.positive.concept_id != pair.concept_id {
        return Some("concept mismatch".into());
    }
    let a: Vec<char> = pair.anchor.text.chars().collect();
    let p: Vec<char> = pair.positive.text.chars().collect();
    let sub: Vec<char> = pair.substituted_synonym.chars().collect();
    if m.start >= m.end || m.end > a.len() {
        return Some("mention out of range".into());
    }
    let surface: String = a[m.start..m.end].iter().collect();
    if surface.to_lowercase() != m.synonym.to_lowercase() {
        return Some(format!("span {surface:?} is not {:?}", m.synonym));
    }
    if sub.iter().collect::<String>().to_lowercase() == surface.to_lowercase() {
        return Some("no-op substitution".into());
    }
    let expected: Vec<char> = a[..m.start]
        .iter()
        .chain(&sub)
        .chain(&a[m.end..])
        .copied()
        .collect();
    if expected != p {
        return Some("positive differs from anchor outside the mention span".into());
    }
    let split = m.start + sub.len();
    let restored: Vec<char> = p[..m.start]
        .iter()
        .chain(surface.chars().collect::<Vec<_>>().iter())
        .chain(&p[split..])
        .copied()
        .collect();
    if restored != a {
        return Some("back-substitution does not restore the anchor".into());
    }
    None
}

fn toy_config(work: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::new(fixture("toy_ontology.jsonl"), work).with_offline(true);
    config.embedding.dimension = 64;
    config.train.batch_size = 8;
    config.train.learning_rate = 0.5;
    config.evaluation.datasets = vec![DatasetConfig {
        name: "TOY".into(),
        path: fixture("toy_sts.tsv"),
        subset: Some(fixture("toy_sts.dis")),
    }];
    config.evaluation.selection = Some("TOY".into());
    config
}

// ---------------------------------------------------------------- criteria

fn c1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=4);
        let k = rng.gen_range(0..=2);
        let dim = rng.gen_range(1..=8);
        let t = rng.gen_range(0.02..1.0);
        let batch = random_batch(&mut rng, n, k, dim);
        let got = infonce_loss(&batch, t).map_err(err)?;
        let want = oracle_infonce(&batch, t);
        for (g, w) in got.losses.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
        let mean = want.iter().sum::<f64>() / n as f64;
        worst = worst.max((got.mean - mean).abs());
    }
    ensure!(worst <= 1e-9, "max |loss - oracle| = {worst:e}");

    let single = Batch {
        anchors: vec![unit(0.3)],
        positives: vec![unit(1.1)],
        hard_negatives: vec![vec![]],
    };
    let zero = infonce_loss(&single, 0.05).map_err(err)?.mean;
    ensure!(zero == 0.0, "N=1, K=0 gave {zero:e}");

    let symmetric = Batch {
        anchors: vec![unit(0.0)],
        positives: vec![unit(0.7)],
        hard_negatives: vec![vec![unit(-0.7)]],
    };
    let two_way = infonce_loss(&symmetric, 0.05).map_err(err)?.mean;
    ensure!(
        (two_way - std::f64::consts::LN_2).abs() <= 1e-12,
        "two-way case gave {two_way}"
    );
    Ok(Verdict::Pass(format!(
        "100 batches, max |diff| {worst:.1e}; N=1 -> 0; two-way -> ln 2"
    )))
}

fn c2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..50 {
        let n = rng.gen_range(1..=4);
        let k = rng.gen_range(0..=2);
        let n_in = rng.gen_range(1..=8);
        let n_out = rng.gen_range(1..=8);
        let t = rng.gen_range(0.05..1.0);
        let scope = if rng.gen_bool(0.5) {
            NegativeScope::InBatch
        } else {
            NegativeScope::OwnOnly
        };
        let batch = random_batch(&mut rng, n, k, n_in);
        let params = AdapterWeights {
            n_in,
            n_out,
            weights: (0..n_in * n_out)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
            bias: (0..n_out).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            normalize_output: true,
        };
        let (_, grad) = loss_gradient(&batch, &params, t, scope).map_err(err)?;
        let loss = |p: &AdapterWeights| loss_gradient(&batch, p, t, scope).map(|(r, _)| r.mean);
        let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();
        for (idx, a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            *param_mut(&mut plus, idx) += h;
            *param_mut(&mut minus, idx) -= h;
            let fd = (loss(&plus).map_err(err)? - loss(&minus).map_err(err)?) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    ensure!(
        worst < 1e-4,
        "max relative error {worst:e} over {checked} parameters"
    );
    Ok(Verdict::Pass(format!(
        "50 configs, {checked} parameters, max rel err {worst:.1e}"
    )))
}

/// Flat view over weights then bias.
fn param_mut(p: &mut AdapterWeights, idx: usize) -> &mut f64 {
    let w = p.weights.len();
    if idx < w {
        &mut p.weights[idx]
    } else {
        &mut p.bias[idx - w]
    }
}

fn c3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    const WORDS: &[&str] = &[
        "chronic", "acute", "renal", "cardiac", "lesion", "disorder", "marked", "by", "swelling",
        "of", "the", "tissue", "fever", "pain",
    ];
    let encoder = HashEncoder::new(32, 3).map_err(err)?;
    let mut samples = 0usize;
    let mut negatives = 0usize;
    let mut ties = 0usize;
    for trial in 0..50 {
        let n = rng.gen_range(2..=50);
        let mut parents: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut concepts = Vec::new();
        for i in 0..n {
            let id = format!("R:{i:03}");
            let mut ps: BTreeSet<String> = BTreeSet::new();
            if i > 0 {
                for _ in 0..rng.gen_range(0..=2) {
                    ps.insert(format!("R:{:03}", rng.gen_range(0..i)));
                }
            }
            parents.insert(id.clone(), ps.iter().cloned().collect());
            concepts.push(Concept::new(id, format!("concept {i}")).with_parents(ps));
        }
        let ontology = Ontology::from_concepts(concepts).map_err(err)?;
        let ancestors = oracle_ancestors(&parents);

        let mut pool: Vec<String> = Vec::new();
        let mut records = Vec::new();
        for i in 0..n {
            let id = format!("R:{i:03}");
            for _ in 0..rng.gen_range(1..=3) {
                let text = if !pool.is_empty() && rng.gen_bool(0.25) {
                    pool[rng.gen_range(0..pool.len())].clone()
                } else {
                    let len = rng.gen_range(3..=6);
                    let t: Vec<&str> = (0..len)
                        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                        .collect();
                    t.join(" ")
                };
                pool.push(text.clone());
                records.push(if rng.gen_bool(0.5) {
                    DefinitionRecord::real(&id, text)
                } else {
                    DefinitionRecord::synthetic(&id, text, "x")
                });
            }
        }
        let cache = VectorCache::new(32);
        let (index, _) = build_candidate_index(
            &records,
            &encoder,
            &cache,
            ontology.taxonomy_arc(),
            IndexOptions::default(),
        )
        .map_err(err)?;

        let k = rng.gen_range(0..=4);
        let mut pairs = Vec::new();
        for _ in 0..rng.gen_range(1..=8) {
            let anchor = records[rng.gen_range(0..records.len())].clone();
            let mut positive = anchor.clone();
            positive.text = format!("{} {}", anchor.text, WORDS[rng.gen_range(0..WORDS.len())]);
            positive.provenance = Provenance::Substituted;
            pairs.push(PositivePair {
                concept_id: anchor.concept_id.clone(),
                anchor,
                positive,
                substituted_synonym: "x".into(),
            });
        }
        let mined = mine_all(
            &pairs,
            &index,
            &encoder,
            &cache,
            MiningOptions {
                k,
                threads: Some(2),
            },
        )
        .map_err(err)?;

        let distinct: BTreeSet<(&str, &str)> = records
            .iter()
            .map(|r| (r.concept_id.as_str(), r.text.as_str()))
            .collect();
        for (pair, sample) in pairs.iter().zip(&mined.samples) {
            let a = cache.require(&pair.anchor.text).map_err(err)?;
            let p = cache.require(&pair.positive.text).map_err(err)?;
            let (single, _) = mine_hard_negatives(pair, &a, &p, &index, k).map_err(err)?;
            ensure!(
                &single == sample,
                "trial {trial}: mine_all and mine_hard_negatives disagree"
            );

            let mut brute: Vec<(f64, &str, &str)> = Vec::new();
            for &(cid, text) in &distinct {
                if oracle_related(&ancestors, cid, &pair.concept_id) {
                    continue;
                }
                let v = cache.require(text).map_err(err)?;
                let score = (cosine_similarity(&v, &a).map_err(err)?
                    + cosine_similarity(&v, &p).map_err(err)?)
                    / 2.0;
                brute.push((score, cid, text));
            }
            brute.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(y.1)).then(x.2.cmp(y.2)));
            ties += brute.windows(2).filter(|w| w[0].0 == w[1].0).count();
            brute.truncate(k);
            let got: Vec<(f64, &str, &str)> = sample
                .hard_negatives
                .iter()
                .map(|h| (h.score, h.concept_id.as_str(), h.text.as_str()))
                .collect();
            ensure!(
                got == brute,
                "trial {trial}: {got:?} != brute force {brute:?}"
            );
            for h in &sample.hard_negatives {
                ensure!(
                    !oracle_related(&ancestors, &h.concept_id, &pair.concept_id),
                    "trial {trial}: {} is taxonomically related to {}",
                    h.concept_id,
                    pair.concept_id
                );
            }
            samples += 1;
            negatives += sample.hard_negatives.len();
        }
    }
    Ok(Verdict::Pass(format!(
        "50 ontologies, {samples} samples, {negatives} negatives, {ties} tied scores, 0 violations"
    )))
}

fn c4() -> Outcome {
    let mut total = 0usize;
    let mut sources = Vec::new();
    for (name, file, format) in [
        ("toy", "toy_ontology.jsonl", "internal"),
        ("obo", "toy_obo.json", "obo-graphs-json"),
    ] {
        let dir = tempfile::tempdir().map_err(err)?;
        let mut config = toy_config(dir.path());
        config.ingest.ontology = fixture(file);
        config.ingest.format = format.into();
        let pipeline = Pipeline::new(config).map_err(err)?;
        for stage in [
            Stage::Ingest,
            Stage::FilterSynonyms,
            Stage::GenDefinitions,
            Stage::GenPairs,
        ] {
            pipeline.run_stage(stage, false).map_err(err)?;
        }
        let defs = ontoinfuse::definitions::read_store(BufReader::new(
            fs::File::open(pipeline.paths().definitions()).map_err(err)?,
        ))
        .map_err(err)?;
        let pairs = read_pairs(BufReader::new(
            fs::File::open(pipeline.paths().pairs()).map_err(err)?,
        ))
        .map_err(err)?;
        let base: BTreeSet<(String, String)> = defs
            .iter()
            .map(|d| (d.concept_id.clone(), d.text.clone()))
            .collect();
        ensure!(!pairs.is_empty(), "{name}: no pairs");
        for p in &pairs {
            if let Some(v) = pair_violation(p, &base) {
                return Ok(Verdict::Fail(format!(
                    "{name}: {v} in {:?}",
                    p.positive.text
                )));
            }
        }
        total += pairs.len();
        sources.push(format!("{name} {}", pairs.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let ontology = Ontology::from_concepts(desk_ontology(&mut rng, 50))
        .map_err(err)?
        .normalized(1)
        .map_err(err)?;
    let generated = generate_definitions(
        &ontology,
        &OfflineProvider::new(&ontology),
        &GenerationCache::in_memory(),
        GenerationOptions::default(),
    )
    .map_err(err)?;
    let base: BTreeSet<(String, String)> = generated
        .records
        .iter()
        .map(|d| (d.concept_id.clone(), d.text.clone()))
        .collect();
    let pairs = generate_pairs(&ontology, &generated.records, PairOptions::default()).pairs;
    for p in &pairs {
        if let Some(v) = pair_violation(p, &base) {
            return Ok(Verdict::Fail(format!("generated ontology: {v}")));
        }
    }
    total += pairs.len();
    sources.push(format!("generated {}", pairs.len()));

    let three = Ontology::from_concepts(vec![Concept::new("T:1", "alpha fever")
        .with_synonyms(["beta syndrome", "gamma lesion disorder"])])
    .map_err(err)?;
    let definition = DefinitionRecord::real(
        "T:1",
        "Alpha fever is a recurring illness of the lower limbs.",
    );
    let outcome = generate_pairs(&three, &[definition], PairOptions::default());
    ensure!(
        outcome.eligible_definitions == 1,
        "eligible definitions {}",
        outcome.eligible_definitions
    );
    ensure!(
        outcome.pairs.len() == 2,
        "three synonyms gave {} pairs",
        outcome.pairs.len()
    );
    Ok(Verdict::Pass(format!(
        "{total} pairs checked ({}); 3 synonyms -> 2 pairs",
        sources.join(", ")
    )))
}

fn c5() -> Outcome {
    ensure!(
        strip_parenthesized("Fabry disease (disorder)") == "Fabry disease",
        "simple parenthesis"
    );
    ensure!(
        strip_parenthesized("ALS (amyotrophic (lateral) sclerosis) variant") == "ALS variant",
        "nested parenthesis"
    );
    let filter = |synonyms: &[&str], seed: u64| -> Result<Vec<String>, String> {
        let c = Concept::new("F:1", synonyms[0]).with_synonyms(synonyms[1..].to_vec());
        Ok(normalize_synonyms(&c, seed).map_err(err)?.synonyms)
    };

    let stripped = filter(
        &[
            "Fabry disease (disorder)",
            "alpha-galactosidase A deficiency",
        ],
        0,
    )?;
    ensure!(
        stripped == ["Fabry disease", "alpha-galactosidase A deficiency"],
        "parenthesis: {stripped:?}"
    );

    // distance("cystic fibrosis", "mucoviscidosis") = 10: kept apart.
    let cased = filter(&["Cystic fibrosis", "CYSTIC FIBROSIS", "mucoviscidosis"], 0)?;
    ensure!(
        cased == ["Cystic fibrosis", "mucoviscidosis"],
        "case dedup: {cased:?}"
    );

    let hand = [
        ("kitten", "sitting", 3),
        ("flaw", "lawn", 2),
        ("hemophilia a", "haemophilia a", 1),
        ("", "abc", 3),
    ];
    for (a, b, d) in hand {
        ensure!(levenshtein(a, b) == d, "levenshtein({a:?}, {b:?}) != {d}");
    }
    let mut seen = BTreeSet::new();
    for seed in 0..64 {
        let kept = filter(
            &["hemophilia A", "haemophilia A", "factor VIII deficiency"],
            seed,
        )?;
        ensure!(
            kept.len() == 2 && kept[1] == "factor VIII deficiency",
            "levenshtein grouping: {kept:?}"
        );
        seen.insert(kept[0].clone());
    }
    ensure!(
        seen.len() == 2,
        "survivor never varies with the seed: {seen:?}"
    );
    // a-b and b-c are 5 apart, a-c is 10: one transitive group.
    let chain = filter(&["aaaaaaaaaa", "aaaaabbbbb", "bbbbbbbbbb"], 3)?;
    ensure!(chain.len() == 1, "transitive grouping: {chain:?}");

    ensure!(
        same_words_reordered(
            "lymphoblastic leukemia acute",
            "acute lymphoblastic leukemia"
        ),
        "reorder"
    );
    ensure!(
        !same_words_reordered("acute leukemia", "acute acute leukemia"),
        "multiset"
    );
    let reordered = filter(
        &[
            "lymphoblastic leukemia acute",
            "acute lymphoblastic leukemia",
        ],
        0,
    )?;
    ensure!(reordered.len() == 1, "word-order dedup: {reordered:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let alphabet: Vec<char> = "abcdeéßxy ".chars().collect();
    for _ in 0..1000 {
        let mut word = || -> String {
            let len = rng.gen_range(0..=20);
            (0..len)
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
                .collect()
        };
        let (a, b) = (word(), word());
        let (got, want) = (levenshtein(&a, &b), oracle_levenshtein(&a, &b));
        ensure!(
            got == want,
            "levenshtein({a:?}, {b:?}) = {got}, oracle {want}"
        );
    }
    Ok(Verdict::Pass(
        "5 filter fixtures; 1000 random pairs match the DP oracle".into(),
    ))
}

fn c6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < 100 {
        let n = rng.gen_range(3..=40);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 * 0.5).collect();
        let constant = x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]);
        match spearman(&x, &y) {
            Ok(rho) if !constant => worst = worst.max((rho - oracle_spearman(&x, &y)).abs()),
            Err(_) if constant => {}
            other => return Ok(Verdict::Fail(format!("constant={constant} gave {other:?}"))),
        }
        tested += usize::from(!constant);
    }
    ensure!(worst <= 1e-12, "max |rho - oracle| = {worst:e}");

    let up = [0.1, 0.4, 0.5, 2.0, 9.0];
    let gold = [1.0, 2.0, 3.0, 4.0, 5.0];
    let down: Vec<f64> = up.iter().map(|v| -v).collect();
    ensure!(
        spearman(&up, &gold).map_err(err)? == 1.0,
        "monotone fixture"
    );
    ensure!(
        spearman(&down, &gold).map_err(err)? == -1.0,
        "reversed fixture"
    );

    for _ in 0..50 {
        let n = rng.gen_range(3..=30);
        let p: Vec<f64> = (0..n)
            .map(|_| (rng.gen_range(-20..20) as f64) / 10.0)
            .collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let Ok(base) = spearman(&p, &g) else { continue };
        let transforms: [fn(f64) -> f64; 3] = [|v| v.exp(), |v| 3.0 * v + 7.0, |v| v * v * v + v];
        for f in transforms {
            let q: Vec<f64> = p.iter().map(|v| f(*v)).collect();
            ensure!(
                spearman(&q, &g).map_err(err)? == base,
                "transform changed rho"
            );
        }
    }
    Ok(Verdict::Pass(format!(
        "100 tied vectors, max |diff| {worst:.1e}; +-1 exact; transforms invariant"
    )))
}

fn c7() -> Outcome {
    let Some(dir) = std::env::var_os("ONTOINFUSE_STS_DIR").map(PathBuf::from) else {
        return Ok(Verdict::Skip("ONTOINFUSE_STS_DIR not set".into()));
    };
    let expected = [
        ("biosses", 100),
        ("sts12", 3108),
        ("sts13", 1500),
        ("sts14", 3750),
        ("sts15", 3000),
        ("sts16", 1186),
    ];
    let mut found = Vec::new();
    for (name, count) in expected {
        let path = dir.join(format!("{name}.tsv"));
        if !path.exists() {
            continue;
        }
        let data = load_sts(BufReader::new(fs::File::open(&path).map_err(err)?)).map_err(err)?;
        ensure!(
            data.len() == count,
            "{name}: {} pairs, expected {count}",
            data.len()
        );
        found.push(format!("{name}={count}"));
        if name == "biosses" {
            let dis = dir.join("biosses.dis");
            if dis.exists() {
                let subset = load_subset(
                    BufReader::new(fs::File::open(&dis).map_err(err)?),
                    name,
                    &data,
                )
                .map_err(err)?;
                ensure!(
                    subset.members.len() == 31,
                    "biosses subset {} != 31",
                    subset.members.len()
                );
                found.push("biosses.dis=31".into());
            }
        }
    }
    if found.is_empty() {
        return Ok(Verdict::Skip(format!(
            "no dataset files in {}",
            dir.display()
        )));
    }
    Ok(Verdict::Pass(found.join(" ")))
}

/// Learning rate for the desk-scale run. The trainer default (1e-2) is also
/// run and reported, but 28 plain gradient steps at that rate barely move a
/// 256x256 adapter.
const DESK_LEARNING_RATE: f64 = 1.0;

struct Infusion {
    first: f64,
    last: f64,
    before: f64,
    after: f64,
    to_positive: f64,
    to_negative: f64,
    steps: usize,
}

impl std::fmt::Display for Infusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "loss {:.4} -> {:.4}, held-out cos {:.4} -> {:.4}, anchor-pos {:.4} / anchor-neg {:.4}, {} steps",
            self.first, self.last, self.before, self.after, self.to_positive, self.to_negative, self.steps
        )
    }
}

fn infuse(learning_rate: f64) -> Result<Infusion, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let ontology = Ontology::from_concepts(desk_ontology(&mut rng, 50))
        .map_err(err)?
        .normalized(8)
        .map_err(err)?;
    let generated = generate_definitions(
        &ontology,
        &OfflineProvider::new(&ontology),
        &GenerationCache::in_memory(),
        GenerationOptions::default(),
    )
    .map_err(err)?;
    let mut pairs = generate_pairs(&ontology, &generated.records, PairOptions::default()).pairs;
    pairs.shuffle(&mut rng);
    if pairs.len() < 50 + 240 {
        return Err(format!("only {} pairs", pairs.len()));
    }
    let held_out = pairs.split_off(pairs.len() - 50);

    let hash: Arc<dyn Encoder> = Arc::new(HashEncoder::new(256, 0).map_err(err)?);
    let cache = Arc::new(VectorCache::new(256));
    let (index, _) = build_candidate_index(
        &generated.records,
        hash.as_ref(),
        &cache,
        ontology.taxonomy_arc(),
        IndexOptions::default(),
    )
    .map_err(err)?;
    let mined = mine_all(
        &pairs,
        &index,
        hash.as_ref(),
        &cache,
        MiningOptions {
            k: 1,
            threads: None,
        },
    )
    .map_err(err)?;
    let base: Arc<dyn Encoder> = Arc::new(CachedEncoder::new(hash, cache.clone()).map_err(err)?);
    let adapter = AdapterEncoder::new(base, AdapterWeights::identity(256, true)).map_err(err)?;

    let config = TrainerConfig {
        batch_size: 24,
        temperature: 0.05,
        hard_negatives: 1,
        max_epochs: 2,
        seed: 8,
        learning_rate,
        ..TrainerConfig::default()
    };
    let before = mean_pair_cosine(&adapter, &held_out)?;
    let outcome = train(&mined.samples, adapter, &config, None).map_err(err)?;
    let after = mean_pair_cosine(&outcome.adapter, &held_out)?;
    let losses = outcome.step_losses();
    if losses.len() < 20 {
        return Err(format!("only {} steps", losses.len()));
    }
    let (to_positive, to_negative) = anchor_similarities(&outcome.adapter, &mined.samples)?;
    Ok(Infusion {
        first: losses[..10].iter().sum::<f64>() / 10.0,
        last: losses[losses.len() - 10..].iter().sum::<f64>() / 10.0,
        before,
        after,
        to_positive,
        to_negative,
        steps: losses.len(),
    })
}

fn c8() -> Outcome {
    let start = Instant::now();
    let run = infuse(DESK_LEARNING_RATE)?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "run took {elapsed:?}");
    let default_lr = TrainerConfig::default().learning_rate;
    let reference = infuse(default_lr)?;
    let detail = format!(
        "lr {DESK_LEARNING_RATE}: {run} ({:.1}s); for reference lr {default_lr}: {reference}",
        elapsed.as_secs_f64()
    );
    ensure!(run.last < run.first, "(a) loss did not fall: {detail}");
    ensure!(
        run.after - run.before >= 0.05,
        "(b) held-out gain below 0.05: {detail}"
    );
    ensure!(
        run.to_negative <= run.to_positive,
        "(c) negatives closer than positives: {detail}"
    );
    Ok(Verdict::Pass(detail))
}

fn mean_pair_cosine(encoder: &dyn Encoder, pairs: &[PositivePair]) -> Result<f64, String> {
    let mut sum = 0.0;
    for p in pairs {
        let a = encoder.encode(&p.anchor.text).map_err(err)?;
        let b = encoder.encode(&p.positive.text).map_err(err)?;
        sum += oracle_cos(a.values(), b.values());
    }
    Ok(sum / pairs.len() as f64)
}

fn anchor_similarities(
    encoder: &dyn Encoder,
    samples: &[TrainingSample],
) -> Result<(f64, f64), String> {
    let (mut pos, mut neg, mut negs) = (0.0, 0.0, 0usize);
    for s in samples {
        let a = encoder.encode(&s.anchor).map_err(err)?;
        pos += oracle_cos(
            a.values(),
            encoder.encode(&s.positive).map_err(err)?.values(),
        );
        for h in &s.hard_negatives {
            neg += oracle_cos(a.values(), encoder.encode(&h.text).map_err(err)?.values());
            negs += 1;
        }
    }
    Ok((pos / samples.len() as f64, neg / negs.max(1) as f64))
}

fn c9() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let work = dir.path().join("work");
    let snapshot = || -> Result<Vec<(String, Vec<u8>)>, String> {
        let _ = fs::remove_dir_all(&work);
        let pipeline = Pipeline::new(toy_config(&work).with_seed(9)).map_err(err)?;
        pipeline.run_all(false).map_err(err)?;
        let paths = pipeline.paths();
        [
            paths.definitions(),
            paths.pairs(),
            paths.samples(),
            paths.adapter(),
            paths.train_log(),
            paths.report_json(),
            paths.report_txt(),
        ]
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            fs::read(&p).map(|bytes| (name, bytes)).map_err(err)
        })
        .collect()
    };
    let first = snapshot()?;
    let second = snapshot()?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        ensure!(a == b, "{name} differs between runs");
    }
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    Ok(Verdict::Pass(format!(
        "byte-identical: {}",
        names.join(", ")
    )))
}

fn c10() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let pipeline = Pipeline::new(toy_config(dir.path())).map_err(err)?;
    let report = pipeline.run_all(false).map_err(err)?;
    let table = report.evaluation.table();
    let lines: Vec<&str> = table.lines().collect();
    ensure!(
        lines.len() == 4,
        "table has {} lines:\n{table}",
        lines.len()
    );
    ensure!(
        lines[0].starts_with("Embedding") && lines[0].contains("TOY"),
        "header: {}",
        lines[0]
    );
    let sub: Vec<&str> = lines[1].split('|').map(str::trim).collect();
    ensure!(sub[1..] == ["All", "Dis"], "subheader: {}", lines[1]);
    for (line, variant) in lines[2..].iter().zip(["orig", "kinf"]) {
        let cells: Vec<&str> = line.split('|').map(str::trim).collect();
        ensure!(
            cells[0] == format!("{}_{variant}", report.evaluation.model),
            "row label: {line}"
        );
        for c in &cells[1..] {
            let two_decimals = c.split_once('.').is_some_and(|(_, frac)| frac.len() == 2)
                && c.parse::<f64>().is_ok();
            ensure!(two_decimals, "cell {c:?} is not a two-decimal score");
        }
    }

    // Externally supplied vectors: write them as an OIVC file and score from it.
    let data = load_sts(BufReader::new(
        fs::File::open(fixture("toy_sts.tsv")).map_err(err)?,
    ))
    .map_err(err)?;
    let subset = load_subset(
        BufReader::new(fs::File::open(fixture("toy_sts.dis")).map_err(err)?),
        "TOY",
        &data,
    )
    .map_err(err)?;
    let external = HashEncoder::new(48, 77).map_err(err)?;
    let cache = VectorCache::new(48);
    let texts: Vec<&str> = data
        .iter()
        .flat_map(|p| [p.sentence_a.as_str(), p.sentence_b.as_str()])
        .collect();
    cache_embeddings(&texts, &external, &cache).map_err(err)?;
    let path = dir.path().join("external.oivc");
    cache.save(&path).map_err(err)?;
    let supplied = PrecomputedEncoder::load(&path).map_err(err)?;
    let scored = evaluate(&supplied, "TOY", &data, Some(&subset)).map_err(err)?;

    let reloaded = VectorCache::load(&path).map_err(err)?;
    let predictions = |rows: &[&StsPair]| -> Result<Vec<f64>, String> {
        rows.iter()
            .map(|p| {
                let a = reloaded.require(&p.sentence_a).map_err(err)?;
                let b = reloaded.require(&p.sentence_b).map_err(err)?;
                Ok(oracle_cos(a.values(), b.values()))
            })
            .collect()
    };
    let all_rows: Vec<&StsPair> = data.iter().collect();
    let dis_rows: Vec<&StsPair> = subset.members.iter().map(|&i| &data[i]).collect();
    let gold = |rows: &[&StsPair]| rows.iter().map(|p| p.gold_score).collect::<Vec<_>>();
    let want_all = oracle_spearman(&predictions(&all_rows)?, &gold(&all_rows));
    let want_dis = oracle_spearman(&predictions(&dis_rows)?, &gold(&dis_rows));
    ensure!(
        (scored.all - want_all * 100.0).abs() <= 0.005 + 1e-9,
        "all {} vs oracle {want_all}",
        scored.all
    );
    let dis = scored.subset.unwrap_or(f64::NAN);
    ensure!(
        (dis - want_dis * 100.0).abs() <= 0.005 + 1e-9,
        "dis {dis} vs oracle {want_dis}"
    );

    let mut detail = format!(
        "table format ok; supplied vectors TOY All {:.2} Dis {dis:.2}",
        scored.all
    );
    if let (Some(vectors), Some(sts)) = (
        std::env::var_os("ONTOINFUSE_BIOSSES_VECTORS"),
        std::env::var_os("ONTOINFUSE_STS_DIR"),
    ) {
        let sts = PathBuf::from(sts);
        let biosses = load_sts(BufReader::new(
            fs::File::open(sts.join("biosses.tsv")).map_err(err)?,
        ))
        .map_err(err)?;
        let dis = load_subset(
            BufReader::new(fs::File::open(sts.join("biosses.dis")).map_err(err)?),
            "BIOSSES",
            &biosses,
        )
        .map_err(err)?;
        let encoder = PrecomputedEncoder::load(Path::new(&vectors)).map_err(err)?;
        let r = evaluate(&encoder, "BIOSSES", &biosses, Some(&dis)).map_err(err)?;
        detail.push_str(&format!(
            "; BIOSSES All {:.2} Dis {}",
            r.all,
            r.subset.map_or("-".into(), |v| format!("{v:.2}"))
        ));
    }
    detail.push_str(
        "; note: published absolute scores need large-scale generation and GPU fine-tuning and are not reproduced here",
    );
    Ok(Verdict::Pass(detail))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        (
            1,
            "InfoNCE oracle equivalence",
            Some(Duration::from_secs(5)),
            c1,
        ),
        (
            2,
            "gradient vs finite differences",
            Some(Duration::from_secs(10)),
            c2,
        ),
        (
            3,
            "hard-negative brute-force equivalence",
            Some(Duration::from_secs(30)),
            c3,
        ),
        (4, "pair-generation properties", None, c4),
        (5, "synonym filtering", None, c5),
        (6, "Spearman oracle", None, c6),
        (7, "dataset accounting", None, c7),
        (8, "desk-scale infusion", None, c8),
        (9, "determinism", None, c9),
        (10, "report format and supplied vectors", None, c10),
    ];
    let filter: Option<u32> = std::env::args()
        .skip(1)
        .find_map(|a| a.trim_start_matches('C').parse().ok());
    let mut failed = 0;
    for (id, title, limit, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let mut verdict = match result {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => Verdict::Fail(format!("error: {e}")),
            Err(panic) => Verdict::Fail(format!(
                "panicked: {}",
                panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        if let (Some(limit), Verdict::Pass(detail)) = (limit, &verdict) {
            if elapsed > limit {
                verdict = Verdict::Fail(format!("took longer than {limit:?}; {detail}"));
            }
        }
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Skip(d) => ("SKIP", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "[{tag}] C{id:<2} {title} ({:.2}s) {detail}",
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
