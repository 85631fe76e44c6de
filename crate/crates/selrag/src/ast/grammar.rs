//! Grammar registry and the tree-sitter parsing backend.
//!
//! Grammars are registered under a language id. The bundled registry ships
//! `java` and `c`; a manifest file can remap ids onto the bundled grammars
//! (`[languages] java-like = "builtin:java"`). Only the [`AstNode`]
//! abstraction leaks out of this module, so the backend can be swapped.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use crate::ast::AstNode;
use crate::error::{Error, Result};

/// A loaded grammar for one language.
#[derive(Clone)]
pub struct Grammar {
    name: String,
    language: tree_sitter::Language,
}

impl Grammar {
    pub fn name(&self) -> &str {
        &self.name
    }
}

impl std::fmt::Debug for Grammar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grammar").field("name", &self.name).finish()
    }
}

/// Maps language ids to grammars.
pub struct GrammarRegistry {
    grammars: BTreeMap<String, Grammar>,
}

impl GrammarRegistry {
    pub fn empty() -> Self {
        GrammarRegistry {
            grammars: BTreeMap::new(),
        }
    }

    /// Registry with the bundled grammars: `java` and `c`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        for name in ["java", "c"] {
            reg.register(name, builtin_grammar(name).expect("bundled grammar"));
        }
        reg
    }

    /// Load a registry from a TOML manifest.
    ///
    /// ```toml
    /// [languages]
    /// java = "builtin:java"
    /// java-like = "builtin:java"
    /// c = "builtin:c"
    /// ```
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::FileNotFound(path.display().to_string()))?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("grammar manifest `{}`: {e}", path.display())))?;
        let mut reg = Self::empty();
        for (id, artifact) in manifest.languages {
            let grammar = match artifact.strip_prefix("builtin:") {
                Some(name) => builtin_grammar(name).ok_or_else(|| {
                    Error::Config(format!("unknown builtin grammar `{name}` for `{id}`"))
                })?,
                None => {
                    return Err(Error::Config(format!(
                        "grammar artifact `{artifact}` for `{id}`: only `builtin:<name>` \
                         artifacts are linked into this build"
                    )))
                }
            };
            reg.register(&id, grammar);
        }
        Ok(reg)
    }

    pub fn register(&mut self, id: &str, grammar: Grammar) {
        self.grammars.insert(id.to_ascii_lowercase(), grammar);
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.grammars.keys().map(String::as_str)
    }

    pub fn get(&self, language: &str) -> Option<&Grammar> {
        self.grammars.get(&language.to_ascii_lowercase())
    }

    /// Parse `code` with the grammar registered for `language`.
    ///
    /// Parsing is total: syntactically invalid regions come back as
    /// error-typed leaves carrying their source text, never as a failure.
    pub fn parse(&self, code: &str, language: &str) -> Result<AstNode> {
        if code.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        let grammar = self
            .get(language)
            .ok_or_else(|| Error::UnsupportedLanguage(language.to_string()))?;

        let mut parser = tree_sitter::Parser::new();
        parser
            .set_language(&grammar.language)
            .map_err(|e| Error::ParseFailure(format!("grammar rejected by parser: {e}")))?;
        let tree = parser
            .parse(code, None)
            .ok_or_else(|| Error::ParseFailure("parser returned no tree".to_string()))?;
        convert(tree.root_node(), code.as_bytes())
            .ok_or_else(|| Error::ParseFailure("tree carries no source content".to_string()))
    }
}

#[derive(serde::Deserialize)]
struct Manifest {
    languages: BTreeMap<String, String>,
}

fn builtin_grammar(name: &str) -> Option<Grammar> {
    let language: tree_sitter::Language = match name {
        "java" => tree_sitter_java::LANGUAGE.into(),
        "c" => tree_sitter_c::LANGUAGE.into(),
        _ => return None,
    };
    Some(Grammar {
        name: name.to_string(),
        language,
    })
}

/// Parse with the default registry (the bundled grammars).
pub fn parse_source(code: &str, language: &str) -> Result<AstNode> {
    static DEFAULT: OnceLock<GrammarRegistry> = OnceLock::new();
    DEFAULT
        .get_or_init(GrammarRegistry::with_builtins)
        .parse(code, language)
}

/// Convert a tree-sitter node into an owned [`AstNode`].
///
/// Anonymous and error nodes become leaves carrying their source span, so
/// no source content is lost and the leaf/value invariant holds. Zero-width
/// nodes (inserted by error recovery) carry nothing and are dropped.
fn convert(node: tree_sitter::Node<'_>, src: &[u8]) -> Option<AstNode> {
    let as_leaf = |node: tree_sitter::Node<'_>| -> Option<AstNode> {
        let text = node.utf8_text(src).ok()?;
        if text.is_empty() {
            None
        } else {
            Some(AstNode::leaf(node.kind(), text))
        }
    };

    if node.is_error() || !node.is_named() || node.child_count() == 0 {
        return as_leaf(node);
    }
    let children: Vec<AstNode> = (0..node.child_count())
        .filter_map(|i| convert(node.child(i).expect("child within count"), src))
        .collect();
    if children.is_empty() {
        return as_leaf(node);
    }
    Some(AstNode::internal(node.kind(), children))
}
