//! The formula language: lexing, parsing, evaluation, dependency tracking
//! and recalculation. The grammar is documented in `docs/formula-grammar.md`.

pub mod eval;
pub mod graph;
mod lexer;
pub mod parser;
pub mod recalc;

pub use eval::{evaluate, parse_decimal, ValueView};
pub use graph::DependencyGraph;
pub use parser::{
    extract_dependencies, parse_formula, BinaryOp, Expr, Function, ParseError, RefItem, Scope,
    UnaryOp,
};
pub use recalc::{
    full_recalculate, full_recalculate_with_stats, recalculate, recalculate_with_stats, RecalcStats,
};
