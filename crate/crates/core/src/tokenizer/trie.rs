use std::collections::BTreeMap;

use super::{ItemId, SemanticId};

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<u32, usize>,
    items: Vec<ItemId>,
}

/// Prefix tree over the catalog's semantic IDs. Leaves carry every item sharing that SID.
#[derive(Debug, Clone)]
pub struct SidTrie {
    levels: usize,
    nodes: Vec<Node>,
    n_sids: usize,
}

impl SidTrie {
    pub fn from_pairs(levels: usize, pairs: impl IntoIterator<Item = (ItemId, SemanticId)>) -> Self {
        let mut trie = SidTrie {
            levels,
            nodes: vec![Node::default()],
            n_sids: 0,
        };
        for (item, sid) in pairs {
            let mut node = 0;
            for &code in sid.codes() {
                node = match trie.nodes[node].children.get(&code) {
                    Some(&next) => next,
                    None => {
                        let next = trie.nodes.len();
                        trie.nodes.push(Node::default());
                        trie.nodes[node].children.insert(code, next);
                        next
                    }
                };
            }
            let leaf = &mut trie.nodes[node].items;
            if leaf.is_empty() {
                trie.n_sids += 1;
            }
            if let Err(pos) = leaf.binary_search(&item) {
                leaf.insert(pos, item);
            }
        }
        trie
    }

    fn walk(&self, prefix: &[u32]) -> Option<usize> {
        if prefix.len() > self.levels {
            return None;
        }
        prefix
            .iter()
            .try_fold(0usize, |node, code| self.nodes[node].children.get(code).copied())
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Number of distinct SIDs (leaves).
    pub fn len(&self) -> usize {
        self.n_sids
    }

    pub fn is_empty(&self) -> bool {
        self.n_sids == 0
    }

    /// True iff `prefix` is a prefix of at least one catalog SID.
    pub fn accepts(&self, prefix: &[u32]) -> bool {
        !self.is_empty() && self.walk(prefix).is_some()
    }

    pub fn contains(&self, sid: &SemanticId) -> bool {
        sid.levels() == self.levels && self.walk(sid.codes()).is_some()
    }

    pub fn items(&self, sid: &SemanticId) -> Option<&[ItemId]> {
        if sid.levels() != self.levels {
            return None;
        }
        self.walk(sid.codes()).map(|n| self.nodes[n].items.as_slice())
    }

    /// Codes that extend `prefix` to another accepted prefix, ascending.
    pub fn next_codes(&self, prefix: &[u32]) -> Vec<u32> {
        match self.walk(prefix) {
            Some(n) if prefix.len() < self.levels => self.nodes[n].children.keys().copied().collect(),
            _ => Vec::new(),
        }
    }

    /// All catalog SIDs with their items, in lexicographic order.
    pub fn entries(&self) -> Vec<(SemanticId, &[ItemId])> {
        let mut out = Vec::with_capacity(self.n_sids);
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if path.len() == self.levels {
                out.push((SemanticId(path), self.nodes[node].items.as_slice()));
                continue;
            }
            for (&code, &child) in self.nodes[node].children.iter().rev() {
                let mut p = path.clone();
                p.push(code);
                stack.push((child, p));
            }
        }
        out
    }
}
