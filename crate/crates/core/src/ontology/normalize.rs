use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh3::xxh3_64;

use super::{Concept, OntologyError, Result};

/// Synonym pairs closer than this (in edit distance) collapse to one survivor.
pub const LEVENSHTEIN_THRESHOLD: usize = 10;

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitution.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Removes every parenthesized substring (nesting aware) and collapses runs of
/// whitespace. An unmatched `(` is kept as ordinary text.
pub fn strip_parenthesized(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut keep = vec![true; chars.len()];
    let mut open: Vec<usize> = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '(' => open.push(i),
            ')' => {
                if let Some(start) = open.pop() {
                    keep[start..=i].iter_mut().for_each(|k| *k = false);
                }
            }
            _ => {}
        }
    }
    let kept: String = chars
        .iter()
        .zip(&keep)
        .filter_map(|(c, k)| k.then_some(*c))
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn word_multiset(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let mut words: Vec<String> = cleaned.split_whitespace().map(str::to_string).collect();
    words.sort();
    words
}

/// True when both strings carry the same words in any order, ignoring case
/// and punctuation.
pub fn same_words_reordered(a: &str, b: &str) -> bool {
    let wa = word_multiset(a);
    !wa.is_empty() && wa == word_multiset(b)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn concept_rng(seed: u64, concept_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ xxh3_64(concept_id.as_bytes()))
}

/// Applies the synonym filter to one concept:
///
/// 1. parenthesized text is deleted and whitespace collapsed;
/// 2. case-insensitive duplicates are dropped, first occurrence wins;
/// 3. synonyms within edit distance < 10 of each other, or equal up to word
///    order, are grouped transitively and one seeded-random member of each
///    group survives.
///
/// Survivors keep their original relative order and the first one becomes the
/// primary name.
pub fn normalize_synonyms(concept: &Concept, seed: u64) -> Result<Concept> {
    let mut seen = HashSet::new();
    let mut synonyms: Vec<String> = Vec::new();
    for raw in &concept.synonyms {
        let stripped = strip_parenthesized(raw);
        if stripped.is_empty() {
            continue;
        }
        if seen.insert(stripped.to_lowercase()) {
            synonyms.push(stripped);
        }
    }
    if synonyms.is_empty() {
        return Err(OntologyError::DegenerateConcept(concept.id.clone()));
    }

    let lowered: Vec<String> = synonyms.iter().map(|s| s.to_lowercase()).collect();
    let mut order: Vec<usize> = (0..synonyms.len()).collect();
    order.sort_by(|&a, &b| synonyms[a].cmp(&synonyms[b]));
    let mut groups = DisjointSet::new(synonyms.len());
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if levenshtein(&lowered[i], &lowered[j]) < LEVENSHTEIN_THRESHOLD
                || same_words_reordered(&synonyms[i], &synonyms[j])
            {
                groups.union(i, j);
            }
        }
    }

    // Groups are visited in order of their earliest member so the draws are
    // stable for a given seed.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); synonyms.len()];
    for i in 0..synonyms.len() {
        let root = groups.find(i);
        members[root].push(i);
    }
    let mut rng = concept_rng(seed, &concept.id);
    let mut survivors: Vec<usize> = Vec::new();
    for group in members.iter().filter(|g| !g.is_empty()) {
        if group.len() == 1 {
            survivors.push(group[0]);
        } else {
            survivors.push(group[rng.gen_range(0..group.len())]);
        }
    }
    survivors.sort_unstable();

    let synonyms: Vec<String> = survivors.into_iter().map(|i| synonyms[i].clone()).collect();
    Ok(Concept {
        id: concept.id.clone(),
        primary_name: synonyms[0].clone(),
        synonyms,
        real_definitions: concept.real_definitions.clone(),
        parent_ids: concept.parent_ids.clone(),
        obsolete: concept.obsolete,
    })
}
