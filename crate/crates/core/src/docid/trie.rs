//! Decimal prefix tree over docid strings for constrained decoding.
//!
//! An EOS edge terminates every id, so one id may be a raw prefix of another
//! ("1" and "13" coexist: the node for "1" both carries a document and has a
//! child). `continuations` reports which digits may extend a prefix and
//! whether EOS is legal there.

use crate::error::{Error, Result};

#[derive(Debug, Default)]
struct Node {
    children: [Option<Box<Node>>; 10],
    doc_key: Option<String>,
}

/// Prefix tree over the digit-string docids of a corpus.
#[derive(Debug)]
pub struct DocidTrie {
    root: Node,
    len: usize,
}

/// Legal next steps from a prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Continuations {
    /// Digits with a child below this node, ascending.
    pub digits: Vec<u8>,
    /// Whether an id terminates exactly here.
    pub eos: bool,
}

impl DocidTrie {
    /// Build from `(digit_string, doc_key)` pairs. Duplicate ids are errors.
    pub fn build(ids: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut trie = DocidTrie {
            root: Node::default(),
            len: 0,
        };
        for (digits, doc_key) in ids {
            trie.insert(&digits, doc_key)?;
        }
        Ok(trie)
    }

    fn insert(&mut self, digits: &str, doc_key: String) -> Result<()> {
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::InvalidInput(format!(
                "'{digits}' is not a non-empty digit string"
            )));
        }
        let mut node = &mut self.root;
        for b in digits.bytes() {
            let slot = (b - b'0') as usize;
            node = node.children[slot].get_or_insert_with(Default::default);
        }
        if node.doc_key.is_some() {
            return Err(Error::DuplicateKey(format!("docid '{digits}'")));
        }
        node.doc_key = Some(doc_key);
        self.len += 1;
        Ok(())
    }

    /// Number of ids stored.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn walk(&self, prefix: &str) -> Option<&Node> {
        let mut node = &self.root;
        for b in prefix.bytes() {
            if !b.is_ascii_digit() {
                return None;
            }
            node = node.children[(b - b'0') as usize].as_deref()?;
        }
        Some(node)
    }

    /// Legal continuations of `prefix`, or None when the prefix leaves the
    /// trie entirely.
    pub fn continuations(&self, prefix: &str) -> Option<Continuations> {
        let node = self.walk(prefix)?;
        let digits = (0u8..10)
            .filter(|&d| node.children[d as usize].is_some())
            .collect();
        Some(Continuations {
            digits,
            eos: node.doc_key.is_some(),
        })
    }

    /// The document stored at an exact id, if any.
    pub fn lookup(&self, digits: &str) -> Option<&str> {
        self.walk(digits)?.doc_key.as_deref()
    }

    /// All `(digits, doc_key)` pairs in lexicographic digit order.
    pub fn enumerate(&self) -> Vec<(String, &str)> {
        let mut out = Vec::with_capacity(self.len);
        let mut path = String::new();
        collect(&self.root, &mut path, &mut out);
        out
    }
}

fn collect<'a>(node: &'a Node, path: &mut String, out: &mut Vec<(String, &'a str)>) {
    if let Some(key) = &node.doc_key {
        out.push((path.clone(), key.as_str()));
    }
    for d in 0..10u8 {
        if let Some(child) = &node.children[d as usize] {
            path.push(char::from(b'0' + d));
            collect(child, path, out);
            path.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trie_of(ids: &[&str]) -> DocidTrie {
        DocidTrie::build(
            ids.iter()
                .enumerate()
                .map(|(i, s)| (s.to_string(), format!("doc{i}"))),
        )
        .unwrap()
    }

    #[test]
    fn construction_exposes_expected_children() {
        let trie = trie_of(&["01", "02", "1"]);
        let root = trie.continuations("").unwrap();
        assert_eq!(root.digits, vec![0, 1]);
        assert!(!root.eos);

        let after_zero = trie.continuations("0").unwrap();
        assert_eq!(after_zero.digits, vec![1, 2]);
        assert!(!after_zero.eos);
    }

    #[test]
    fn raw_prefix_collisions_are_legal_via_eos() {
        let trie = trie_of(&["1", "13"]);
        let at_one = trie.continuations("1").unwrap();
        assert!(at_one.eos, "id '1' terminates here");
        assert_eq!(at_one.digits, vec![3]);
        assert_eq!(trie.lookup("1"), Some("doc0"));
        assert_eq!(trie.lookup("13"), Some("doc1"));
    }

    #[test]
    fn enumerate_returns_exactly_the_input_set() {
        let ids = ["213", "20", "7", "214", "01"];
        let trie = trie_of(&ids);
        let got: Vec<String> = trie.enumerate().into_iter().map(|(d, _)| d).collect();
        // oracle: sort and compare
        let mut expected: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        expected.sort();
        assert_eq!(got, expected);
        assert_eq!(trie.len(), ids.len());
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let result = DocidTrie::build(vec![
            ("42".to_string(), "a".to_string()),
            ("42".to_string(), "b".to_string()),
        ]);
        assert!(matches!(result, Err(Error::DuplicateKey(_))));
    }

    #[test]
    fn prefix_outside_trie_has_no_continuations() {
        let trie = trie_of(&["5"]);
        assert!(trie.continuations("9").is_none());
        assert!(trie.continuations("x").is_none());
    }
}
