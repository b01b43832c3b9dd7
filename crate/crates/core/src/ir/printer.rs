//! Canonical formatter for MiniMIR programs.
//!
//! The formatter is deterministic: it preserves declaration order, emits one
//! statement per line with two-space indentation, and drops comments. For
//! every valid program `p`, `parse_program(format_program(p))` is
//! structurally equal to `p`.

use std::fmt::Write;

use super::ast::*;

/// Render a program in canonical form.
pub fn format_program(program: &Program) -> String {
    let mut out = String::new();
    for (i, krate) in program.crates.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        writeln!(out, "crate {};", krate.name).unwrap();
        for agg in &krate.aggregates {
            out.push('\n');
            writeln!(out, "struct {} {{", agg.path).unwrap();
            for (name, ty) in &agg.fields {
                writeln!(out, "  {name}: {ty};").unwrap();
            }
            writeln!(out, "}}").unwrap();
        }
        for func in &krate.functions {
            out.push('\n');
            format_function(&mut out, func);
        }
    }
    out
}

fn format_function(out: &mut String, func: &FunctionDef) {
    let vis = match func.visibility {
        Visibility::Public => "pub ",
        Visibility::Private => "",
    };
    let params: Vec<String> = (1..=func.param_count)
        .map(|i| {
            let l = func.local(LocalId(i)).expect("param declared");
            format!("{}: {}", l.id, l.ty)
        })
        .collect();
    let on = match &func.owner_type {
        Some(t) => format!(" on {t}"),
        None => String::new(),
    };
    writeln!(out, "{vis}fn {}({}) -> {}{on} {{", func.path, params.join(", "), func.return_type())
        .unwrap();
    let temps: Vec<&LocalDecl> =
        func.locals.iter().filter(|l| l.id.0 > func.param_count && l.id.0 != 0).collect();
    if !temps.is_empty() {
        writeln!(out, "  locals {{").unwrap();
        for l in temps {
            writeln!(out, "    {}: {};", l.id, l.ty).unwrap();
        }
        writeln!(out, "  }}").unwrap();
    }
    for block in &func.blocks {
        writeln!(out, "  {} {{", block.label).unwrap();
        for stmt in &block.statements {
            writeln!(out, "    {}", format_statement(stmt)).unwrap();
        }
        writeln!(out, "  }}").unwrap();
    }
    writeln!(out, "}}").unwrap();
}

fn format_statement(stmt: &Statement) -> String {
    match stmt {
        Statement::Assign { dst, src } => format!("{dst} = {src};"),
        Statement::Call { dst, callee, args } => {
            let args: Vec<String> = args.iter().map(|a| a.to_string()).collect();
            format!("call {dst} = {callee}({});", args.join(", "))
        }
        Statement::Alloc { dst, kind, elem, len, domain } => {
            let mut s = format!("alloc {dst} = {kind}<{elem}>");
            if *len != DEFAULT_ALLOC_LEN {
                write!(s, " * {len}").unwrap();
            }
            if let Some(d) = domain {
                write!(s, " in shared {d}").unwrap();
            }
            s.push(';');
            s
        }
        Statement::Syscall { dst, name, args, path_arg } => {
            let inner = match path_arg {
                Some(p) => format!("\"{p}\""),
                None => args.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", "),
            };
            format!("syscall {dst} = {name}({inner});")
        }
        Statement::Branch { left, right } => format!("branch {left}, {right};"),
        Statement::Return => "return;".to_string(),
        Statement::RawStore { base, offset, src } => {
            format!("rawstore {base}{} = {src};", format_offset(*offset))
        }
        Statement::RawLoad { dst, base, offset } => {
            format!("rawload {dst} = {base}{};", format_offset(*offset))
        }
    }
}

fn format_offset(offset: i64) -> String {
    if offset == 0 {
        String::new()
    } else if offset < 0 {
        format!(" - {}", -offset)
    } else {
        format!(" + {offset}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parser::parse_program;

    const MINIMAL: &str = "crate app;\npub fn app::main() -> i32 { entry { return; } }";

    #[test]
    fn minimal_main_formats_canonically() {
        let p = parse_program(MINIMAL).unwrap();
        let text = format_program(&p);
        assert_eq!(text, "crate app;\n\npub fn app::main() -> i32 {\n  entry {\n    return;\n  }\n}\n");
    }

    #[test]
    fn format_is_a_fixed_point_of_parse() {
        let p = parse_program(MINIMAL).unwrap();
        let once = format_program(&p);
        let twice = format_program(&parse_program(&once).unwrap());
        assert_eq!(once, twice);
    }
}
