//! Text records for instances and datasets.
//!
//! A record is a sequence of whitespace-separated tokens with a fixed field
//! order. Line breaks carry no meaning, and `#` starts a comment that runs
//! to the end of the line. Numbers are written in Rust's shortest round-trip
//! form, so writing and re-reading a record is lossless.
//!
//! ```text
//! wsrm-instance
//! L 3
//! G 0.18 0.05 0.59
//!   0.61 2.67 0.56
//!   2.89 0.99 1.29
//! n 0.01 0.01 0.01
//! w 0.33 0.33 0.34
//! m 1.0 1.0 1.0
//! P 2.5
//! label
//!   gamma_star -47.0 6.5 -57.5
//!   rate_star 2.1466
//!   oracle_tag grid
//! end
//! ```
//!
//! Beamforming records use the `wsrm-beamforming` header and carry `N`, the
//! per-link receive antenna counts `Nl` and one `H` block per link holding
//! interleaved real/imaginary pairs in row-major order.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::beamforming::BeamformingInstance;
use crate::error::{Result, WsrmError};
use crate::problem::{Label, OracleTag, WsrmInstance};

pub const INSTANCE_HEADER: &str = "wsrm-instance";
pub const BEAMFORMING_HEADER: &str = "wsrm-beamforming";

fn push_row(out: &mut String, key: &str, values: impl IntoIterator<Item = f64>) {
    out.push_str(key);
    for v in values {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

fn write_tail(out: &mut String, n: &DVector<f64>, w: &DVector<f64>, m: &DVector<f64>, budget: f64, label: Option<&Label>) {
    push_row(out, "n", n.iter().copied());
    push_row(out, "w", w.iter().copied());
    push_row(out, "m", m.iter().copied());
    let _ = writeln!(out, "P {budget:?}");
    if let Some(label) = label {
        out.push_str("label\n");
        push_row(out, "  gamma_star", label.gamma_star.iter().copied());
        let _ = writeln!(out, "  rate_star {:?}", label.rate_star);
        let _ = writeln!(out, "  oracle_tag {}", label.oracle_tag.as_str());
    }
    out.push_str("end\n");
}

/// Appends one instance record to `out`.
pub fn write_instance(out: &mut String, inst: &WsrmInstance) {
    let l = inst.links();
    let _ = writeln!(out, "{INSTANCE_HEADER}\nL {l}");
    for r in 0..l {
        let key = if r == 0 { "G" } else { " " };
        push_row(out, key, inst.gains().row(r).iter().copied());
    }
    write_tail(out, inst.noise(), inst.weights(), inst.power_weights(), inst.budget(), inst.label.as_ref());
}

pub fn serialize_instance(inst: &WsrmInstance) -> String {
    let mut s = String::new();
    write_instance(&mut s, inst);
    s
}

pub fn serialize_dataset(dataset: &[WsrmInstance]) -> String {
    let mut s = String::new();
    for inst in dataset {
        write_instance(&mut s, inst);
    }
    s
}

/// Appends one beamforming record to `out`.
pub fn write_beamforming(out: &mut String, inst: &BeamformingInstance) {
    let l = inst.links();
    let _ = writeln!(out, "{BEAMFORMING_HEADER}\nL {l}\nN {}", inst.tx_antennas());
    out.push_str("Nl");
    for h in inst.channels() {
        let _ = write!(out, " {}", h.nrows());
    }
    out.push('\n');
    for (i, h) in inst.channels().iter().enumerate() {
        let _ = write!(out, "H {}", i + 1);
        for r in 0..h.nrows() {
            for c in 0..h.ncols() {
                let z = h[(r, c)];
                let _ = write!(out, " {:?} {:?}", z.re, z.im);
            }
        }
        out.push('\n');
    }
    write_tail(out, inst.noise(), inst.weights(), inst.power_weights(), inst.budget(), inst.label.as_ref());
}

pub fn serialize_beamforming_dataset(dataset: &[BeamformingInstance]) -> String {
    let mut s = String::new();
    for inst in dataset {
        write_beamforming(&mut s, inst);
    }
    s
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("");
            items.extend(body.split_whitespace().map(|t| (i + 1, t)));
        }
        let last_line = text.lines().count().max(1);
        Self { items, pos: 0, last_line }
    }

    fn err(&self, message: impl Into<String>) -> WsrmError {
        let line = self.items.get(self.pos).map_or(self.last_line, |t| t.0);
        WsrmError::Parse { line, message: message.into() }
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        match self.items.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.1)
            }
            None => Err(self.err(format!("unexpected end of input, expected {what}"))),
        }
    }

    fn expect(&mut self, key: &str) -> Result<()> {
        let at = self.pos;
        let tok = self.next(key)?;
        if tok != key {
            self.pos = at;
            return Err(self.err(format!("expected `{key}`, found `{tok}`")));
        }
        Ok(())
    }

    fn number(&mut self, field: &str) -> Result<f64> {
        let at = self.pos;
        let tok = self.next(field)?;
        tok.parse::<f64>().map_err(|_| {
            self.pos = at;
            self.err(format!("field `{field}`: `{tok}` is not a number"))
        })
    }

    fn count(&mut self, field: &str) -> Result<usize> {
        let at = self.pos;
        let tok = self.next(field)?;
        tok.parse::<usize>().map_err(|_| {
            self.pos = at;
            self.err(format!("field `{field}`: `{tok}` is not a count"))
        })
    }

    fn numbers(&mut self, field: &str, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.number(field)).collect()
    }

    fn keyed_vector(&mut self, key: &str, n: usize) -> Result<DVector<f64>> {
        self.expect(key)?;
        Ok(DVector::from_vec(self.numbers(key, n)?))
    }
}

struct Tail {
    noise: DVector<f64>,
    weights: DVector<f64>,
    power_weights: DVector<f64>,
    budget: f64,
    label: Option<Label>,
    line: usize,
}

fn read_tail(t: &mut Tokens<'_>, l: usize) -> Result<Tail> {
    let line = t.items.get(t.pos).map_or(t.last_line, |x| x.0);
    let noise = t.keyed_vector("n", l)?;
    let weights = t.keyed_vector("w", l)?;
    let power_weights = t.keyed_vector("m", l)?;
    t.expect("P")?;
    let budget = t.number("P")?;
    let label = if t.peek() == Some("label") {
        t.expect("label")?;
        let gamma_star = t.keyed_vector("gamma_star", l)?;
        t.expect("rate_star")?;
        let rate_star = t.number("rate_star")?;
        t.expect("oracle_tag")?;
        let tag_tok = t.next("oracle_tag")?;
        let oracle_tag = OracleTag::parse(tag_tok)
            .ok_or_else(|| t.err(format!("unknown oracle tag `{tag_tok}`")))?;
        Some(Label { gamma_star, rate_star, oracle_tag })
    } else {
        None
    };
    t.expect("end")?;
    Ok(Tail { noise, weights, power_weights, budget, label, line })
}

fn read_instance(t: &mut Tokens<'_>) -> Result<WsrmInstance> {
    t.expect(INSTANCE_HEADER)?;
    t.expect("L")?;
    let l = t.count("L")?;
    if l == 0 {
        return Err(t.err("L must be at least 1"));
    }
    t.expect("G")?;
    let g = DMatrix::from_row_slice(l, l, &t.numbers("G", l * l)?);
    let tail = read_tail(t, l)?;
    let inst = WsrmInstance::new(g, tail.noise, tail.weights, tail.power_weights, tail.budget)
        .map_err(|e| WsrmError::Parse { line: tail.line, message: e.to_string() })?;
    Ok(match tail.label {
        Some(label) => inst.with_label(label),
        None => inst,
    })
}

pub fn parse_instance(text: &str) -> Result<WsrmInstance> {
    let mut t = Tokens::new(text);
    let inst = read_instance(&mut t)?;
    if t.peek().is_some() {
        return Err(t.err("trailing input after record"));
    }
    Ok(inst)
}

/// Parses a concatenation of instance records.
pub fn parse_dataset(text: &str) -> Result<Vec<WsrmInstance>> {
    let mut t = Tokens::new(text);
    let mut out = Vec::new();
    while t.peek().is_some() {
        out.push(read_instance(&mut t)?);
    }
    Ok(out)
}

fn read_beamforming(t: &mut Tokens<'_>) -> Result<BeamformingInstance> {
    t.expect(BEAMFORMING_HEADER)?;
    t.expect("L")?;
    let l = t.count("L")?;
    t.expect("N")?;
    let n_tx = t.count("N")?;
    t.expect("Nl")?;
    let rx: Vec<usize> = (0..l).map(|_| t.count("Nl")).collect::<Result<_>>()?;
    let mut channels = Vec::with_capacity(l);
    for (i, &nr) in rx.iter().enumerate() {
        t.expect("H")?;
        let idx = t.count("H")?;
        if idx != i + 1 {
            return Err(t.err(format!("expected channel block {}, found {idx}", i + 1)));
        }
        let raw = t.numbers("H", 2 * nr * n_tx)?;
        let h = DMatrix::from_fn(nr, n_tx, |r, c| {
            let k = 2 * (r * n_tx + c);
            Complex64::new(raw[k], raw[k + 1])
        });
        channels.push(h);
    }
    let tail = read_tail(t, l)?;
    let inst = BeamformingInstance::new(channels, tail.noise, tail.weights, tail.power_weights, tail.budget)
        .map_err(|e| WsrmError::Parse { line: tail.line, message: e.to_string() })?;
    Ok(match tail.label {
        Some(label) => inst.with_label(label),
        None => inst,
    })
}

pub fn parse_beamforming_dataset(text: &str) -> Result<Vec<BeamformingInstance>> {
    let mut t = Tokens::new(text);
    let mut out = Vec::new();
    while t.peek().is_some() {
        out.push(read_beamforming(&mut t)?);
    }
    Ok(out)
}
