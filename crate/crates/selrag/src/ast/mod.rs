//! Typed ASTs and their flattened sequence form.
//!
//! Source code is parsed into an [`AstNode`] tree where every node carries a
//! grammar type and leaves carry source text. [`ast_traversal`] flattens a
//! tree into an [`AstSequence`]: leaves contribute their value, non-leaves
//! are bracketed by paired `AST#<type>#Left` / `AST#<type>#Right` marker
//! tokens. The sequence is what the structural embedder consumes.

mod grammar;

pub use grammar::{parse_source, Grammar, GrammarRegistry};

use serde::{Deserialize, Serialize};

/// Prefix shared by all structural marker tokens.
pub const MARKER_PREFIX: &str = "AST#";
const MARKER_LEFT_SUFFIX: &str = "#Left";
const MARKER_RIGHT_SUFFIX: &str = "#Right";

/// One node of a parsed syntax tree.
///
/// Invariant: a node is a leaf iff `children` is empty iff `value` is
/// present. Concatenating leaf values in pre-order reproduces the source's
/// token stream (modulo whitespace).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub node_type: String,
    pub value: Option<String>,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn leaf(node_type: impl Into<String>, value: impl Into<String>) -> Self {
        AstNode {
            node_type: node_type.into(),
            value: Some(value.into()),
            children: Vec::new(),
        }
    }

    pub fn internal(node_type: impl Into<String>, children: Vec<AstNode>) -> Self {
        AstNode {
            node_type: node_type.into(),
            value: None,
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Check the structural invariants on this node and its whole subtree.
    pub fn validate(&self) -> bool {
        if self.node_type.is_empty() {
            return false;
        }
        if self.children.is_empty() != self.value.is_some() {
            return false;
        }
        self.children.iter().all(AstNode::validate)
    }
}

/// Pre-order flattening of an AST with paired marker tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstSequence {
    pub tokens: Vec<String>,
}

impl AstSequence {
    /// The sequence joined by single spaces, the form handed to embedders.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens with all `AST#…#Left/Right` markers filtered out.
    pub fn non_marker_tokens(&self) -> Vec<String> {
        self.tokens
            .iter()
            .filter(|t| marker_of(t).is_none())
            .cloned()
            .collect()
    }

    /// True when the Left/Right markers form a well-nested bracket sequence.
    pub fn is_balanced(&self) -> bool {
        let mut stack: Vec<&str> = Vec::new();
        for token in &self.tokens {
            match marker_of(token) {
                Some((ty, MarkerSide::Left)) => stack.push(ty),
                Some((ty, MarkerSide::Right)) => {
                    if stack.pop() != Some(ty) {
                        return false;
                    }
                }
                None => {}
            }
        }
        stack.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MarkerSide {
    Left,
    Right,
}

/// Split a token into its marker parts, or `None` for plain tokens.
fn marker_of(token: &str) -> Option<(&str, MarkerSide)> {
    let rest = token.strip_prefix(MARKER_PREFIX)?;
    if let Some(ty) = rest.strip_suffix(MARKER_LEFT_SUFFIX) {
        Some((ty, MarkerSide::Left))
    } else {
        rest.strip_suffix(MARKER_RIGHT_SUFFIX)
            .map(|ty| (ty, MarkerSide::Right))
    }
}

fn left_marker(node_type: &str) -> String {
    format!("{MARKER_PREFIX}{node_type}{MARKER_LEFT_SUFFIX}")
}

fn right_marker(node_type: &str) -> String {
    format!("{MARKER_PREFIX}{node_type}{MARKER_RIGHT_SUFFIX}")
}

/// Flatten a tree into its marker-bracketed pre-order sequence.
///
/// Leaves contribute their value; a non-leaf contributes
/// `AST#<type>#Left`, its children's sequences in order, then
/// `AST#<type>#Right`.
pub fn ast_traversal(root: &AstNode) -> AstSequence {
    let mut tokens = Vec::new();
    traverse_into(root, &mut tokens);
    AstSequence { tokens }
}

fn traverse_into(node: &AstNode, out: &mut Vec<String>) {
    match &node.value {
        Some(value) => out.push(value.clone()),
        None => {
            out.push(left_marker(&node.node_type));
            for child in &node.children {
                traverse_into(child, out);
            }
            out.push(right_marker(&node.node_type));
        }
    }
}

/// Pre-order leaf values: the token stream of the original source.
pub fn leaf_token_stream(root: &AstNode) -> Vec<String> {
    let mut out = Vec::new();
    leaves_into(root, &mut out);
    out
}

fn leaves_into(node: &AstNode, out: &mut Vec<String>) {
    match &node.value {
        Some(value) => out.push(value.clone()),
        None => {
            for child in &node.children {
                leaves_into(child, out);
            }
        }
    }
}
