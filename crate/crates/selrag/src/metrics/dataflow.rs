//! Simplified def-use extraction over parsed ASTs.
//!
//! A single pre-order pass recognizes declarations, assignments and
//! parameters as definitions and identifier reads as uses. Every use yields
//! one edge `(name, reaching-def ordinal, use ordinal)` where ordinals count
//! occurrences per variable name in source order. No alias or
//! inter-procedural analysis; this is the data-flow approximation the
//! CodeBLEU semantic component scores against.

use std::collections::{BTreeSet, HashMap};

use crate::ast::AstNode;

/// Grammar-specific node types driving def/use classification.
#[derive(Debug, Clone)]
pub struct LanguageProfile {
    /// Leaf types that name variables.
    pub identifier_types: BTreeSet<String>,
    /// Parent types whose first direct identifier child is a definition.
    pub def_parent_types: BTreeSet<String>,
}

impl LanguageProfile {
    pub fn for_language(language: &str) -> Self {
        let identifier_types: BTreeSet<String> = ["identifier"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let def_parents: &[&str] = match language.to_ascii_lowercase().as_str() {
            "java" => &[
                "variable_declarator",
                "assignment_expression",
                "formal_parameter",
                "catch_formal_parameter",
                "enhanced_for_statement",
                "resource",
                "update_expression",
            ],
            "c" => &[
                "init_declarator",
                "declaration",
                "assignment_expression",
                "parameter_declaration",
                "update_expression",
            ],
            // Union of the common cases; adequate for unknown grammars.
            _ => &[
                "variable_declarator",
                "init_declarator",
                "assignment_expression",
                "formal_parameter",
                "parameter_declaration",
            ],
        };
        LanguageProfile {
            identifier_types,
            def_parent_types: def_parents.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One def-use edge: a variable read linked to its reaching definition.
///
/// `def_ordinal` is `None` for reads without a prior definition in scope
/// (parameters of unseen callers, fields, and the like).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DefUseEdge {
    pub name: String,
    pub def_ordinal: Option<usize>,
    pub use_ordinal: usize,
}

#[derive(Default)]
struct ExtractState {
    defs_seen: HashMap<String, usize>,
    uses_seen: HashMap<String, usize>,
    last_def: HashMap<String, usize>,
    edges: Vec<DefUseEdge>,
}

impl ExtractState {
    fn record(&mut self, name: &str, is_def: bool) {
        if is_def {
            let ordinal = *self.defs_seen.get(name).unwrap_or(&0);
            self.defs_seen.insert(name.to_string(), ordinal + 1);
            self.last_def.insert(name.to_string(), ordinal);
        } else {
            let use_ordinal = *self.uses_seen.get(name).unwrap_or(&0);
            self.uses_seen.insert(name.to_string(), use_ordinal + 1);
            self.edges.push(DefUseEdge {
                name: name.to_string(),
                def_ordinal: self.last_def.get(name).copied(),
                use_ordinal,
            });
        }
    }
}

/// Extract def-use edges in source order.
pub fn extract_def_use(root: &AstNode, profile: &LanguageProfile) -> Vec<DefUseEdge> {
    let mut state = ExtractState::default();
    walk(root, profile, &mut state);
    state.edges
}

fn walk(node: &AstNode, profile: &LanguageProfile, state: &mut ExtractState) {
    let parent_defines = profile.def_parent_types.contains(&node.node_type);
    let mut first_identifier_pending = parent_defines;
    for child in &node.children {
        let is_identifier_leaf =
            child.is_leaf() && profile.identifier_types.contains(&child.node_type);
        if is_identifier_leaf {
            let name = child.value.as_deref().unwrap_or_default();
            let is_def = first_identifier_pending;
            first_identifier_pending = false;
            state.record(name, is_def);
        } else {
            walk(child, profile, state);
        }
    }
}

/// Data-flow match: clipped candidate edges over total reference edges.
///
/// When the reference has no edges the score is 1 if the candidate also has
/// none, else 0.
pub fn match_df_trees(candidate: &AstNode, reference: &AstNode, profile: &LanguageProfile) -> f64 {
    let cand_edges = extract_def_use(candidate, profile);
    let ref_edges = extract_def_use(reference, profile);
    if ref_edges.is_empty() {
        return if cand_edges.is_empty() { 1.0 } else { 0.0 };
    }
    let mut ref_counts: HashMap<&DefUseEdge, usize> = HashMap::new();
    for edge in &ref_edges {
        *ref_counts.entry(edge).or_insert(0) += 1;
    }
    let mut matched = 0usize;
    for edge in &cand_edges {
        if let Some(remaining) = ref_counts.get_mut(edge) {
            if *remaining > 0 {
                *remaining -= 1;
                matched += 1;
            }
        }
    }
    matched as f64 / ref_edges.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::parse_source;

    fn java_profile() -> LanguageProfile {
        LanguageProfile::for_language("java")
    }

    #[test]
    fn declaration_then_use_links_back() {
        let root = parse_source("int x = 1; int y = x + 2;", "java").unwrap();
        let edges = extract_def_use(&root, &java_profile());
        assert_eq!(
            edges,
            vec![DefUseEdge {
                name: "x".into(),
                def_ordinal: Some(0),
                use_ordinal: 0,
            }]
        );
    }

    #[test]
    fn reassignment_bumps_the_def_ordinal() {
        let code = "int x = 1; x = 2; int y = x;";
        let root = parse_source(code, "java").unwrap();
        let edges = extract_def_use(&root, &java_profile());
        // The read of x in `int y = x;` reaches the second definition.
        assert_eq!(
            edges,
            vec![DefUseEdge {
                name: "x".into(),
                def_ordinal: Some(1),
                use_ordinal: 0,
            }]
        );
    }

    #[test]
    fn use_without_def_has_no_ordinal() {
        let root = parse_source("int y = unknown + 1;", "java").unwrap();
        let edges = extract_def_use(&root, &java_profile());
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].name, "unknown");
        assert_eq!(edges[0].def_ordinal, None);
    }

    #[test]
    fn identical_programs_score_one() {
        let code = "int a = 1; int b = a + a; a = b;";
        let cand = parse_source(code, "java").unwrap();
        let reference = parse_source(code, "java").unwrap();
        assert_eq!(match_df_trees(&cand, &reference, &java_profile()), 1.0);
    }

    #[test]
    fn no_variables_on_either_side_scores_one() {
        let cand = parse_source("return ;", "java").unwrap();
        let reference = parse_source("break ;", "java").unwrap();
        assert_eq!(match_df_trees(&cand, &reference, &java_profile()), 1.0);
    }

    #[test]
    fn renamed_variable_loses_its_edges() {
        let reference = parse_source("int a = 1; int b = a + a;", "java").unwrap();
        let cand = parse_source("int z = 1; int b = z + z;", "java").unwrap();
        // Reference edges are two reads of `a`; the candidate reads `z`.
        assert_eq!(match_df_trees(&cand, &reference, &java_profile()), 0.0);
        assert_eq!(
            match_df_trees(&reference, &reference, &java_profile()),
            1.0
        );
    }
}
