//! Trace-level witness synthesis for programs over stateful libraries.

pub mod error;
pub mod guards;
pub mod infer;
pub mod lang;
pub mod lexer;
pub mod oracle;
pub mod report;
pub mod sfa;
pub mod sre;
pub mod typing;

pub use error::{Error, ParseError, Pos, Result};
pub use guards::{
    Addr, Alphabet, Assignment, Atom, AtomKind, ConstraintStore, Event, EventPattern, LitPattern,
    Scope, Sort, Term, Universe, Var,
};
pub use infer::{infer_witness, Budgets, Hypothesis, InferOutcome};
pub use lang::{parse_apis, parse_program, parse_spec, run_concrete, ApiTable, Outcome, Program, SpecDecl};
pub use oracle::{brute_force_witness, validate_witness, Evidence, OracleConfig, Validation};
pub use report::WitnessReport;
pub use sfa::{Sfa, Split, Witness};
pub use sre::{parse_sre, Sre, Trace};
pub use typing::{CoverageType, Judgment, TripleType, TypingContext};
