//! Lexical prefix tree over pronunciations.

use crate::lexicon::Lexicon;

use super::DecodeError;

pub const ROOT: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    /// Phoneme label consumed on entering the node (`usize::MAX` for the root).
    pub label: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Child node ids, sorted by label.
    pub children: Vec<usize>,
    /// Lexicon ids of the words ending here. Non-empty only at leaves,
    /// since every pronunciation ends in an EOW label.
    pub words: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixTree {
    nodes: Vec<TreeNode>,
}

impl PrefixTree {
    /// Number of nodes including the root.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    pub fn is_word_end(&self, id: usize) -> bool {
        !self.nodes[id].words.is_empty()
    }

    /// Follows `phones` from the root.
    pub fn walk(&self, phones: &[usize]) -> Option<usize> {
        let mut cur = ROOT;
        for &p in phones {
            cur = *self.nodes[cur]
                .children
                .iter()
                .find(|&&c| self.nodes[c].label == p)?;
        }
        Some(cur)
    }
}

/// Builds the trie of all lexicon pronunciations. Node ids follow first
/// insertion in lexicon order, so the tree is deterministic.
pub fn build_prefix_tree(lex: &Lexicon) -> Result<PrefixTree, DecodeError> {
    if lex.is_empty() {
        return Err(DecodeError::EmptyLexicon);
    }
    let mut nodes = vec![TreeNode {
        label: usize::MAX,
        parent: None,
        depth: 0,
        children: Vec::new(),
        words: Vec::new(),
    }];
    for (id, (_, pron)) in lex.iter().enumerate() {
        let mut cur = ROOT;
        for &p in pron {
            let next = nodes[cur]
                .children
                .iter()
                .copied()
                .find(|&c| nodes[c].label == p);
            cur = match next {
                Some(c) => c,
                None => {
                    let nid = nodes.len();
                    nodes.push(TreeNode {
                        label: p,
                        parent: Some(cur),
                        depth: nodes[cur].depth + 1,
                        children: Vec::new(),
                        words: Vec::new(),
                    });
                    nodes[cur].children.push(nid);
                    nid
                }
            };
        }
        nodes[cur].words.push(id);
    }
    let labels: Vec<usize> = nodes.iter().map(|n| n.label).collect();
    for n in &mut nodes {
        n.children.sort_by_key(|&c| labels[c]);
    }
    Ok(PrefixTree { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::PhonemeInventory;
    use crate::lexicon::parse_lexicon;

    fn inv() -> PhonemeInventory {
        PhonemeInventory::new(&["k", "ae", "t", "b", "ah"], Some("sil")).unwrap()
    }

    #[test]
    fn single_word() {
        let inv = inv();
        let lex = parse_lexicon("a\tah\n", &inv).unwrap();
        let tree = build_prefix_tree(&lex).unwrap();
        assert_eq!(tree.len(), 2);
        assert_eq!(tree.node(1).words, vec![0]);
        assert_eq!(tree.node(1).label, inv.index_of("ah#eow").unwrap());
    }

    #[test]
    fn shared_prefix() {
        let inv = inv();
        let lex = parse_lexicon("cat\tk ae t\ncab\tk ae b\n", &inv).unwrap();
        let tree = build_prefix_tree(&lex).unwrap();
        assert_eq!(tree.len(), 5);
        let cat = tree.walk(lex.lookup("cat").unwrap()).unwrap();
        let cab = tree.walk(lex.lookup("cab").unwrap()).unwrap();
        assert_eq!(tree.node(cat).parent, tree.node(cab).parent);
        assert!(tree.is_word_end(cat) && tree.children(cat).is_empty());
    }

    #[test]
    fn disjoint_words() {
        let inv = inv();
        let lex = parse_lexicon("cat\tk ae t\nbah\tb ah\n", &inv).unwrap();
        assert_eq!(build_prefix_tree(&lex).unwrap().len(), 6);
    }

    #[test]
    fn homophones_share_a_leaf() {
        let inv = inv();
        let lex = parse_lexicon("cat\tk ae t\nkat\tk ae t\n", &inv).unwrap();
        let tree = build_prefix_tree(&lex).unwrap();
        assert_eq!(tree.len(), 4);
        assert_eq!(tree.node(3).words, vec![0, 1]);
    }

    #[test]
    fn empty_lexicon_rejected() {
        let lex = parse_lexicon("", &inv()).unwrap();
        assert_eq!(build_prefix_tree(&lex), Err(DecodeError::EmptyLexicon));
    }
}
