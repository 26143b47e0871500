//! Plain-text export of mixed-binary programs in LP format.
//!
//! The emitted grammar is the widely supported "CPLEX LP" dialect, so dumps
//! can be loaded into external solvers or diffed in review:
//!
//! ```text
//! \ Problem: <name>
//! Minimize
//!  obj: <term> [+|-] <term> ...
//! Subject To
//!  c<i>: <term> ... (<=|>=|=) <rhs>
//! Bounds
//!  <lo> <= x<j> <= <hi>   |   x<j> >= <lo>   |   x<j> <= <hi>
//!  x<j> = <v>             |   x<j> free
//! Binaries
//!  x<j> x<k> ...
//! End
//! ```
//!
//! Columns are named `x<j>` by index. Numbers use Rust's shortest
//! round-trip float formatting, so reading the file back reproduces the
//! exact binary values. Every column gets an explicit bound line (LP-format
//! defaults are never relied on). Rows are named `c<i>` in input order.

use super::{MilpProblem, Relation};
use std::fmt::Write as _;

/// Appends `coeff x<col>` to `out`, with `first` controlling sign placement.
fn push_term(out: &mut String, first: bool, coeff: f64, col: usize) {
    if first {
        let _ = write!(out, "{} x{}", coeff, col);
    } else if coeff < 0.0 {
        let _ = write!(out, " - {} x{}", -coeff, col);
    } else {
        let _ = write!(out, " + {} x{}", coeff, col);
    }
}

/// Renders `problem` as an LP-format document titled `name`.
pub fn write_lp(problem: &MilpProblem, name: &str) -> String {
    let lp = &problem.base;
    let mut out = String::new();
    let _ = writeln!(out, "\\ Problem: {}", name);
    out.push_str("Minimize\n obj:");
    let mut first = true;
    for (j, &c) in lp.objective.iter().enumerate() {
        if c != 0.0 {
            if first {
                out.push(' ');
            }
            push_term(&mut out, first, c, j);
            first = false;
        }
    }
    if first {
        // Constant-zero objective still needs a syntactically valid term.
        out.push_str(" 0 x0");
    }
    out.push('\n');

    out.push_str("Subject To\n");
    for (i, row) in lp.constraints.iter().enumerate() {
        let _ = write!(out, " c{}:", i);
        let mut first = true;
        for &(col, coeff) in &row.coeffs {
            if first {
                out.push(' ');
            }
            push_term(&mut out, first, coeff, col);
            first = false;
        }
        if first {
            out.push_str(" 0 x0");
        }
        let rel = match row.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        let _ = writeln!(out, " {} {}", rel, row.rhs);
    }

    out.push_str("Bounds\n");
    for j in 0..lp.num_vars {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo == hi {
            let _ = writeln!(out, " x{} = {}", j, lo);
        } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            let _ = writeln!(out, " x{} free", j);
        } else if lo == f64::NEG_INFINITY {
            let _ = writeln!(out, " x{} <= {}", j, hi);
        } else if hi == f64::INFINITY {
            let _ = writeln!(out, " x{} >= {}", j, lo);
        } else {
            let _ = writeln!(out, " {} <= x{} <= {}", lo, j, hi);
        }
    }

    if !problem.binaries.is_empty() {
        out.push_str("Binaries\n");
        for chunk in problem.binaries.chunks(16) {
            out.push(' ');
            let names: Vec<String> = chunk.iter().map(|b| format!("x{}", b)).collect();
            out.push_str(&names.join(" "));
            out.push('\n');
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::{LpProblem, MilpProblem, Relation};
    use super::*;

    #[test]
    fn golden_document_for_a_small_program() {
        let mut lp = LpProblem::new(3);
        lp.objective = vec![1.0, 0.0, -2.5];
        lp.set_bounds(0, 0.0, f64::INFINITY);
        lp.set_bounds(1, -1.0, 1.0);
        lp.set_bounds(2, 0.0, 1.0);
        lp.add_row(vec![(0, 1.0), (1, -3.0)], Relation::Ge, 0.25);
        lp.add_row(vec![(1, 2.0), (2, 1.0)], Relation::Le, 2.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Relation::Eq, 1.0);
        let p = MilpProblem {
            base: lp,
            binaries: vec![2],
        };
        let text = write_lp(&p, "golden");
        let expected = "\\ Problem: golden\n\
                        Minimize\n \
                        obj: 1 x0 - 2.5 x2\n\
                        Subject To\n \
                        c0: 1 x0 - 3 x1 >= 0.25\n \
                        c1: 2 x1 + 1 x2 <= 2\n \
                        c2: 1 x0 + 1 x1 + 1 x2 = 1\n\
                        Bounds\n \
                        x0 >= 0\n \
                        -1 <= x1 <= 1\n \
                        0 <= x2 <= 1\n\
                        Binaries\n \
                        x2\n\
                        End\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn degenerate_pieces_render_validly() {
        // Zero objective, empty row, fixed and free columns.
        let mut lp = LpProblem::new(2);
        lp.set_bounds(0, 2.0, 2.0);
        lp.add_row(vec![], Relation::Le, 5.0);
        let p = MilpProblem {
            base: lp,
            binaries: vec![],
        };
        let text = write_lp(&p, "edge");
        assert!(text.contains("obj: 0 x0"));
        assert!(text.contains("c0: 0 x0 <= 5"));
        assert!(text.contains("x0 = 2"));
        assert!(text.contains("x1 free"));
        assert!(!text.contains("Binaries"));
        assert!(text.ends_with("End\n"));
    }

    #[test]
    fn numbers_round_trip_through_shortest_formatting() {
        let v = 0.1 + 0.2; // classic non-representable sum
        let mut lp = LpProblem::new(1);
        lp.objective = vec![v];
        lp.set_bounds(0, 0.0, v);
        let p = MilpProblem {
            base: lp,
            binaries: vec![],
        };
        let text = write_lp(&p, "precision");
        let printed = format!("{}", v);
        assert!(text.contains(&printed));
        let parsed: f64 = printed.parse().unwrap();
        assert_eq!(parsed, v);
    }
}
