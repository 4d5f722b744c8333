use std::collections::{BTreeMap, HashMap};

use super::{Concept, OntologyError, Result};

/// Largest taxonomy for which the full ancestor closure is materialized as
/// bitsets (n² bits, 128 MiB at the limit). Larger graphs fall back to DFS.
pub const CLOSURE_LIMIT: usize = 1 << 15;

/// The is-a DAG over concept ids, child → parents.
#[derive(Debug, Clone)]
pub struct TaxonomyIndex {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    edge_count: usize,
    closure: Option<Vec<Vec<u64>>>,
}

impl TaxonomyIndex {
    pub(super) fn build(concepts: &BTreeMap<String, Concept>) -> Result<Self> {
        Self::build_with_limit(concepts, CLOSURE_LIMIT)
    }

    pub(super) fn build_with_limit(
        concepts: &BTreeMap<String, Concept>,
        closure_limit: usize,
    ) -> Result<Self> {
        let ids: Vec<String> = concepts.keys().cloned().collect();
        let index: HashMap<String, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let parents: Vec<Vec<usize>> = concepts
            .values()
            .map(|c| c.parent_ids.iter().map(|p| index[p]).collect())
            .collect();
        let edge_count = parents.iter().map(Vec::len).sum();
        let order = topological_order(&ids, &parents)?;
        let closure = (ids.len() <= closure_limit).then(|| ancestor_closure(&parents, &order));
        Ok(TaxonomyIndex {
            ids,
            index,
            parents,
            edge_count,
            closure,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn has_closure(&self) -> bool {
        self.closure.is_some()
    }

    fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| OntologyError::UnknownConcept(id.to_string()))
    }

    pub fn parents(&self, id: &str) -> Result<Vec<&str>> {
        let i = self.position(id)?;
        Ok(self.parents[i]
            .iter()
            .map(|&p| self.ids[p].as_str())
            .collect())
    }

    /// True iff `ancestor` is reachable from `node` along child → parent
    /// edges. Irreflexive.
    pub fn is_ancestor(&self, ancestor: &str, node: &str) -> Result<bool> {
        let a = self.position(ancestor)?;
        let b = self.position(node)?;
        Ok(self.is_ancestor_at(a, b))
    }

    pub fn is_descendant(&self, descendant: &str, node: &str) -> Result<bool> {
        self.is_ancestor(node, descendant)
    }

    /// True when the two concepts are identical or one is an ancestor of the
    /// other.
    pub fn related(&self, a: &str, b: &str) -> Result<bool> {
        let ia = self.position(a)?;
        let ib = self.position(b)?;
        Ok(self.related_at(ia, ib))
    }

    /// Dense node index of a concept, for repeated queries via
    /// [`TaxonomyIndex::related_at`].
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn related_at(&self, a: usize, b: usize) -> bool {
        a == b || self.is_ancestor_at(a, b) || self.is_ancestor_at(b, a)
    }

    fn is_ancestor_at(&self, ancestor: usize, node: usize) -> bool {
        if ancestor == node {
            return false;
        }
        match &self.closure {
            Some(bits) => bits[node][ancestor / 64] & (1u64 << (ancestor % 64)) != 0,
            None => {
                let mut seen = vec![false; self.ids.len()];
                let mut stack: Vec<usize> = self.parents[node].clone();
                while let Some(n) = stack.pop() {
                    if n == ancestor {
                        return true;
                    }
                    if !std::mem::replace(&mut seen[n], true) {
                        stack.extend(&self.parents[n]);
                    }
                }
                false
            }
        }
    }
}

/// Parents-before-children order; fails on the first back edge found.
fn topological_order(ids: &[String], parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = ids.len();
    let mut mark = vec![Mark::New; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&parent) = parents[node].get(*next) {
                *next += 1;
                match mark[parent] {
                    Mark::New => {
                        mark[parent] = Mark::Active;
                        stack.push((parent, 0));
                    }
                    Mark::Active => {
                        return Err(OntologyError::Cycle {
                            child: ids[node].clone(),
                            parent: ids[parent].clone(),
                        })
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                order.push(node);
                stack.pop();
            }
        }
    }
    Ok(order)
}

fn ancestor_closure(parents: &[Vec<usize>], order: &[usize]) -> Vec<Vec<u64>> {
    let n = parents.len();
    let words = n.div_ceil(64);
    let mut bits = vec![vec![0u64; words]; n];
    for &node in order {
        let mut row = vec![0u64; words];
        for &p in &parents[node] {
            row[p / 64] |= 1u64 << (p % 64);
            for (w, pw) in row.iter_mut().zip(&bits[p]) {
                *w |= pw;
            }
        }
        bits[node] = row;
    }
    bits
}
