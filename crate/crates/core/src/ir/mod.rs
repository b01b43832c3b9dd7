//! MiniMIR: the input language — abstract syntax, parser, canonical
//! formatter, and validator.

pub mod ast;
pub mod check;
pub mod parser;
pub mod printer;

pub use ast::*;
pub use check::{validate_program, DiagCategory, Diagnostic};
pub use parser::{parse_program, parse_program_with_externals, ParseError};
pub use printer::format_program;
