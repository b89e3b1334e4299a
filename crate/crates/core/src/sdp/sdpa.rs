//! Reading and writing the SDPA sparse text format.
//!
//! The SDPA convention is `max F0•Y s.t. Fi•Y = ci, Y ⪰ 0`, which matches
//! [`SdpProblem`] with `Maximize`. A minimization problem is written with
//! `F0 = −C` and a `*sense minimize` comment so it round-trips.

use std::fmt::Write as _;

use crate::scalar::Scalar;

use super::{BlockKind, SdpError, SdpProblem, Sense, SparseSym};

pub fn write_sdpa<T: Scalar>(p: &SdpProblem<T>) -> String {
    let mut out = String::new();
    if p.sense == Sense::Minimize {
        out.push_str("*sense minimize\n");
    }
    let _ = writeln!(out, "{}", p.num_constraints());
    let _ = writeln!(out, "{}", p.blocks.len());
    let sizes: Vec<String> = p
        .blocks
        .iter()
        .map(|b| match b {
            BlockKind::Dense(n) => n.to_string(),
            BlockKind::Diagonal(n) => format!("-{n}"),
        })
        .collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let rhs: Vec<String> = p.rhs.iter().map(|v| format!("{:e}", v.to_f64_lossy())).collect();
    let _ = writeln!(out, "{}", rhs.join(" "));
    let sign = if p.sense == Sense::Minimize { -1.0 } else { 1.0 };
    let mut emit = |mat: usize, m: &SparseSym<T>, s: f64| {
        let mut m = m.clone();
        m.canonicalize();
        for e in m.entries() {
            let _ = writeln!(
                out,
                "{} {} {} {} {:e}",
                mat,
                e.block + 1,
                e.row + 1,
                e.col + 1,
                s * e.value.to_f64_lossy()
            );
        }
    };
    emit(0, &p.objective, sign);
    for (i, a) in p.constraints.iter().enumerate() {
        emit(i + 1, a, 1.0);
    }
    out
}

pub fn read_sdpa<T: Scalar>(text: &str) -> Result<SdpProblem<T>, SdpError> {
    let mut sense = Sense::Maximize;
    // Header values may share lines or be split; collect tokens with their line numbers.
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('*') || line.starts_with('"') {
            if line.trim_start_matches('*').trim() == "sense minimize" {
                sense = Sense::Minimize;
            }
            continue;
        }
        for tok in line.split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}' || c == '(' || c == ')') {
            if !tok.is_empty() {
                tokens.push((ln + 1, tok.to_string()));
            }
        }
    }
    let mut it = tokens.into_iter();
    let mut next = |what: &str| -> Result<(usize, String), SdpError> {
        it.next().ok_or_else(|| SdpError::Parse { line: 0, msg: format!("unexpected end of input, expected {what}") })
    };
    let parse_int = |(ln, s): (usize, String)| -> Result<i64, SdpError> {
        s.parse::<i64>()
            .or_else(|_| s.parse::<f64>().map(|v| v as i64))
            .map_err(|_| SdpError::Parse { line: ln, msg: format!("expected integer, got {s:?}") })
    };
    let parse_f = |(ln, s): (usize, String)| -> Result<f64, SdpError> {
        s.parse::<f64>().map_err(|_| SdpError::Parse { line: ln, msg: format!("expected number, got {s:?}") })
    };
    let m = parse_int(next("constraint count")?)?;
    let nb = parse_int(next("block count")?)?;
    if m <= 0 || nb <= 0 {
        return Err(SdpError::Parse { line: 0, msg: "constraint and block counts must be positive".into() });
    }
    let mut blocks = Vec::with_capacity(nb as usize);
    for _ in 0..nb {
        let s = parse_int(next("block size")?)?;
        blocks.push(if s < 0 { BlockKind::Diagonal((-s) as usize) } else { BlockKind::Dense(s as usize) });
    }
    let mut rhs = Vec::with_capacity(m as usize);
    for _ in 0..m {
        rhs.push(T::lit(parse_f(next("right-hand side")?)?));
    }
    let mut p = SdpProblem::new(blocks, sense);
    p.rhs = rhs;
    p.constraints = vec![SparseSym::new(); m as usize];
    let sign = if sense == Sense::Minimize { -1.0 } else { 1.0 };
    // Entries: quintuples until input ends.
    let rest: Vec<(usize, String)> = std::iter::from_fn(|| next("entry").ok()).collect();
    if rest.len() % 5 != 0 {
        let ln = rest.last().map(|t| t.0).unwrap_or(0);
        return Err(SdpError::Parse { line: ln, msg: "entry lines must have five fields".into() });
    }
    for chunk in rest.chunks(5) {
        let ln = chunk[0].0;
        let mat = parse_int(chunk[0].clone())?;
        let blk = parse_int(chunk[1].clone())?;
        let i = parse_int(chunk[2].clone())?;
        let j = parse_int(chunk[3].clone())?;
        let v = parse_f(chunk[4].clone())?;
        if mat < 0 || mat > m || blk < 1 || blk > nb || i < 1 || j < 1 {
            return Err(SdpError::Parse { line: ln, msg: "index out of range".into() });
        }
        let (b, r, c) = ((blk - 1) as usize, (i - 1) as usize, (j - 1) as usize);
        if mat == 0 {
            p.objective.add(b, r, c, T::lit(sign * v));
        } else {
            p.constraints[(mat - 1) as usize].add(b, r, c, T::lit(v));
        }
    }
    p.validate().map_err(|e| SdpError::Parse { line: 0, msg: e.to_string() })?;
    Ok(p)
}
