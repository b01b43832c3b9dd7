//! Parse a MiniMIR program, validate it, and print its canonical form.
//!
//! ```bash
//! cargo run -p mircage --example parse_and_print
//! ```

use mircage::ir::{format_program, parse_program, validate_program};

const PROGRAM: &str = r#"
// Anything after `//` is a comment; the formatter drops it.
crate demo;

struct demo::Pair { lo: i32; hi: i32; }

pub fn demo::swap(v1: refmut<demo::Pair>) -> i32 {
  locals { v2: i32; }
  entry {
    v2 = (*v1).lo;
    (*v1).lo = (*v1).hi;
    (*v1).hi = v2;
    v0 = v2;
    return;
  }
}

pub fn demo::main() -> i32 {
  locals { v1: demo::Pair; v2: refmut<demo::Pair>; v3: i32; }
  entry {
    v1.lo = 1;
    v1.hi = 2;
    v2 = &v1;
    call v3 = demo::swap(v2);
    v0 = v1.lo;
    return;
  }
}
"#;

fn main() {
    let program = parse_program(PROGRAM).expect("parses");
    let diagnostics = validate_program(&program);
    println!("functions:  {}", program.functions().count());
    println!("aggregates: {}", program.aggregates().count());
    println!("entry:      {}", program.entry_path().unwrap());
    println!("diagnostics: {}", diagnostics.len());
    println!("\ncanonical form:\n");
    let canonical = format_program(&program);
    print!("{canonical}");

    // The formatter is a fixed point of the parser.
    let reparsed = parse_program(&canonical).expect("canonical text re-parses");
    assert_eq!(reparsed, program);
    println!("\nround-trip: parse(format(p)) == p");
}
