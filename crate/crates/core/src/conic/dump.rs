//! Plain-text problem dump.
//!
//! ```text
//! p2pgrid-conic 1
//! vars <n>
//! var <index> <name> <lower> <upper>
//! obj <constant>
//! c <index> <coef>
//! eq <label> <rhs> <nnz> <index>:<coef> ...
//! le <label> <rhs> <nnz> <index>:<coef> ...
//! soc <label> <dim>
//!  <constant> <nnz> <index>:<coef> ...     (one line per member, head first)
//! end
//! ```
//!
//! Infinite bounds are written as `inf` / `-inf`.

use std::io::{self, Write};

use super::{ConicProblem, LinExpr};

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == 0.0 {
        "0".into()
    } else {
        format!("{v:e}")
    }
}

fn terms(e: &LinExpr) -> String {
    let mut s = e.terms.len().to_string();
    for &(v, c) in &e.terms {
        s.push_str(&format!(" {}:{}", v.0, num(c)));
    }
    s
}

pub fn write_dump<W: Write>(problem: &ConicProblem, mut w: W) -> io::Result<()> {
    writeln!(w, "p2pgrid-conic 1")?;
    writeln!(w, "vars {}", problem.num_vars())?;
    for (i, key) in problem.keys().iter().enumerate() {
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        writeln!(w, "var {i} {key} {} {}", num(lo), num(hi))?;
    }
    writeln!(w, "obj {}", num(problem.objective_constant))?;
    for (i, &c) in problem.objective().iter().enumerate() {
        if c != 0.0 {
            writeln!(w, "c {i} {}", num(c))?;
        }
    }
    for row in problem.equalities() {
        writeln!(w, "eq {} {} {}", row.label, num(row.rhs), terms(&row.expr))?;
    }
    for row in problem.inequalities() {
        writeln!(w, "le {} {} {}", row.label, num(row.rhs), terms(&row.expr))?;
    }
    for cone in problem.cones() {
        writeln!(w, "soc {} {}", cone.label, 1 + cone.tail.len())?;
        for member in std::iter::once(&cone.head).chain(&cone.tail) {
            writeln!(w, " {} {}", num(member.constant), terms(member))?;
        }
    }
    writeln!(w, "end")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{ConeLabel, RowLabel, VarKey};
    use crate::units::Phase;

    #[test]
    fn dump_layout() {
        let mut p = ConicProblem::new();
        let x = p.add_var(VarKey::ImportP { t: 0, phase: Phase::A }, 0.0, f64::INFINITY).unwrap();
        p.add_cost(x, 50.0);
        p.add_eq(RowLabel::SourceVoltage { t: 0, phase: Phase::A }, LinExpr::var(x), 0.5)
            .unwrap();
        p.add_soc(
            ConeLabel::Inverter { t: 0, prosumer: 0, phase: Phase::A },
            LinExpr::constant(1.0),
            vec![LinExpr::var(x)],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dump(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "p2pgrid-conic 1");
        assert_eq!(lines[2], "var 0 pug[t0,a] 0 inf");
        assert!(lines.contains(&"c 0 5e1"));
        assert!(lines.contains(&"eq vsrc[t0,a] 5e-1 1 0:1e0"));
        assert!(lines.contains(&"soc inv[t0,g0,a] 2"));
        assert_eq!(*lines.last().unwrap(), "end");
    }
}
