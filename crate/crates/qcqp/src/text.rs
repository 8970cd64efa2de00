//! Plain-text problem format.
//!
//! One record per line, whitespace separated, `#` starts a comment. Indices
//! are zero based. Numbers use Rust's shortest round-trip formatting, so a
//! dump followed by a load reproduces the problem bit for bit.
//!
//! ```text
//! qcqp <n>                 header, must come first
//! r <value>                objective constant
//! c <i> <value>            objective linear term
//! Q <i> <j> <value>        objective quadratic term (upper triangle)
//! bound <i> <lo> <hi>      variable bounds, `inf` / `-inf` allowed
//! eq <k> <b>               equality k: aₖᵀx = b
//! a <k> <i> <value>
//! ineq <k> <s>             inequality k: ½xᵀPₖx + qₖᵀx + s ≤ 0
//! P <k> <i> <j> <value>
//! q <k> <i> <value>
//! ```
//!
//! `eq` and `ineq` records must appear in index order before their terms.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::QcqpError;
use crate::problem::{LinearEq, QcqpProblem, QuadIneq};

pub fn dump(problem: &QcqpProblem) -> String {
    let mut out = String::new();
    let p = problem;
    writeln!(out, "qcqp {}", p.n).unwrap();
    if p.objective.r != 0.0 {
        writeln!(out, "r {}", p.objective.r).unwrap();
    }
    for (i, v) in p.objective.c.iter().enumerate() {
        if *v != 0.0 {
            writeln!(out, "c {i} {v}").unwrap();
        }
    }
    for (i, j, v) in &p.objective.q.entries {
        writeln!(out, "Q {i} {j} {v}").unwrap();
    }
    for i in 0..p.n {
        if p.lower[i] != f64::NEG_INFINITY || p.upper[i] != f64::INFINITY {
            writeln!(out, "bound {i} {} {}", p.lower[i], p.upper[i]).unwrap();
        }
    }
    for (k, e) in p.eq.iter().enumerate() {
        writeln!(out, "eq {k} {}", e.b).unwrap();
        for (i, v) in &e.a.entries {
            writeln!(out, "a {k} {i} {v}").unwrap();
        }
    }
    for (k, c) in p.quad_ineq.iter().enumerate() {
        writeln!(out, "ineq {k} {}", c.s).unwrap();
        for (i, j, v) in &c.p.entries {
            writeln!(out, "P {k} {i} {j} {v}").unwrap();
        }
        for (i, v) in &c.q.entries {
            writeln!(out, "q {k} {i} {v}").unwrap();
        }
    }
    out
}

pub fn load(text: &str) -> Result<QcqpProblem, QcqpError> {
    let mut problem: Option<QcqpProblem> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: &str| QcqpError::Parse {
            line,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        let idx = |k: usize| -> Result<usize, QcqpError> {
            fields
                .get(k)
                .ok_or_else(|| err("missing field"))?
                .parse()
                .map_err(|_| err("bad index"))
        };
        let num = |k: usize| -> Result<f64, QcqpError> {
            fields
                .get(k)
                .ok_or_else(|| err("missing field"))?
                .parse()
                .map_err(|_| err("bad number"))
        };
        let arity = |want: usize| -> Result<(), QcqpError> {
            if fields.len() == want {
                Ok(())
            } else {
                Err(err(&format!("expected {want} fields, found {}", fields.len())))
            }
        };
        if fields[0] == "qcqp" {
            arity(2)?;
            if problem.is_some() {
                return Err(err("duplicate header"));
            }
            problem = Some(QcqpProblem::new(idx(1)?));
            continue;
        }
        let p = problem.as_mut().ok_or_else(|| err("record before header"))?;
        let check = |i: usize| if i < p.n { Ok(i) } else { Err(err("index out of range")) };
        match fields[0] {
            "r" => {
                arity(2)?;
                p.objective.r = num(1)?;
            }
            "c" => {
                arity(3)?;
                let i = check(idx(1)?)?;
                p.objective.c[i] = num(2)?;
            }
            "Q" => {
                arity(4)?;
                let (i, j) = (check(idx(1)?)?, check(idx(2)?)?);
                p.objective.q.push(i, j, num(3)?);
            }
            "bound" => {
                arity(4)?;
                let i = check(idx(1)?)?;
                p.lower[i] = num(2)?;
                p.upper[i] = num(3)?;
            }
            "eq" => {
                arity(3)?;
                if idx(1)? != p.eq.len() {
                    return Err(err("equalities out of order"));
                }
                p.eq.push(LinearEq {
                    b: num(2)?,
                    ..LinearEq::default()
                });
            }
            "a" => {
                arity(4)?;
                let i = check(idx(2)?)?;
                let e = p.eq.get_mut(idx(1)?).ok_or_else(|| err("unknown equality"))?;
                e.a.push(i, num(3)?);
            }
            "ineq" => {
                arity(3)?;
                if idx(1)? != p.quad_ineq.len() {
                    return Err(err("inequalities out of order"));
                }
                p.quad_ineq.push(QuadIneq {
                    s: num(2)?,
                    ..QuadIneq::default()
                });
            }
            "P" => {
                arity(5)?;
                let (i, j) = (check(idx(2)?)?, check(idx(3)?)?);
                let c = p.quad_ineq.get_mut(idx(1)?).ok_or_else(|| err("unknown inequality"))?;
                c.p.push(i, j, num(4)?);
            }
            "q" => {
                arity(4)?;
                let i = check(idx(2)?)?;
                let c = p.quad_ineq.get_mut(idx(1)?).ok_or_else(|| err("unknown inequality"))?;
                c.q.push(i, num(3)?);
            }
            other => return Err(err(&format!("unknown record `{other}`"))),
        }
    }
    problem.ok_or(QcqpError::Parse {
        line: 0,
        msg: "empty input".into(),
    })
}

pub fn write_file(problem: &QcqpProblem, path: &Path) -> Result<(), QcqpError> {
    std::fs::write(path, dump(problem))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<QcqpProblem, QcqpError> {
    load(&std::fs::read_to_string(path)?)
}
