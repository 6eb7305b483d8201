//! Per-step run log and its CSV form.
//!
//! One row per filter step. Absent quantities (no estimate yet, no
//! detection) are written as blank cells. Floats use Rust's shortest
//! round-trip formatting so a parsed log reproduces the in-memory values
//! bit for bit.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Bumped whenever the column layout changes.
pub const LOG_SCHEMA: &str = "boxtrack-log/1";

const STATE_NAMES: [&str; 9] = ["x1", "x2", "x3", "xq", "yq", "zq", "vqx", "vqy", "vqz"];
const MEAS_NAMES: [&str; 6] = ["u", "v", "a", "xc", "yc", "zc"];
const CMD_NAMES: [&str; 6] = ["vcx", "vcy", "vcz", "wcx", "wcy", "wcz"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunLogRow {
    pub t: f64,
    pub truth: [f64; 9],
    pub estimate: Option<[f64; 9]>,
    pub p_trace: Option<f64>,
    pub q_diag: Option<[f64; 9]>,
    pub detected: bool,
    pub measurement: Option<[f64; 6]>,
    pub command: [f64; 6],
    pub visual_error: [f64; 3],
    /// `100·|r̂_q − r_q| / |r_q/c|`
    pub rel_pos_err_pct: Option<f64>,
    /// True box center inside the image.
    pub in_fov: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    Diverged { step: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub rows: Vec<RunLogRow>,
    pub outcome: RunOutcome,
}

pub fn header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(STATE_NAMES.iter().map(|n| format!("true_{n}")));
    h.extend(STATE_NAMES.iter().map(|n| format!("est_{n}")));
    h.push("p_trace".into());
    h.extend(STATE_NAMES.iter().map(|n| format!("qhat_{n}")));
    h.push("detected".into());
    h.extend(MEAS_NAMES.iter().map(|n| format!("z_{n}")));
    h.extend(CMD_NAMES.iter().map(|n| format!("cmd_{n}")));
    h.extend(["e1", "e2", "e3"].iter().map(|n| n.to_string()));
    h.push("rel_pos_err_pct".into());
    h.push("in_fov".into());
    h
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_cells<const K: usize>(out: &mut Vec<String>, v: &Option<[f64; K]>) {
    match v {
        Some(a) => out.extend(a.iter().map(|x| num(*x))),
        None => out.extend(std::iter::repeat_n(String::new(), K)),
    }
}

impl RunLogRow {
    fn cells(&self) -> Vec<String> {
        let mut c = vec![num(self.t)];
        c.extend(self.truth.iter().map(|x| num(*x)));
        opt_cells(&mut c, &self.estimate);
        c.push(self.p_trace.map(num).unwrap_or_default());
        opt_cells(&mut c, &self.q_diag);
        c.push(if self.detected { "1" } else { "0" }.into());
        opt_cells(&mut c, &self.measurement);
        c.extend(self.command.iter().map(|x| num(*x)));
        c.extend(self.visual_error.iter().map(|x| num(*x)));
        c.push(self.rel_pos_err_pct.map(num).unwrap_or_default());
        c.push(if self.in_fov { "1" } else { "0" }.into());
        c
    }
}

pub fn write_csv<W: Write>(rows: &[RunLogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::MalformedLog(e.to_string());
    w.write_record(header()).map_err(io)?;
    for r in rows {
        w.write_record(r.cells()).map_err(io)?;
    }
    w.flush().map_err(|e| Error::MalformedLog(e.to_string()))?;
    Ok(())
}

struct Cursor<'a> {
    rec: &'a csv::StringRecord,
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Result<&str> {
        let cell = self
            .rec
            .get(self.pos)
            .ok_or_else(|| Error::MalformedLog(format!("line {}: too few cells", self.line)))?;
        self.pos += 1;
        Ok(cell)
    }

    fn f(&mut self) -> Result<f64> {
        let line = self.line;
        let cell = self.next()?;
        cell.parse()
            .map_err(|_| Error::MalformedLog(format!("line {line}: bad number `{cell}`")))
    }

    fn opt(&mut self) -> Result<Option<f64>> {
        let line = self.line;
        let cell = self.next()?;
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse()
            .map(Some)
            .map_err(|_| Error::MalformedLog(format!("line {line}: bad number `{cell}`")))
    }

    fn arr<const K: usize>(&mut self) -> Result<[f64; K]> {
        let mut a = [0.0; K];
        for v in &mut a {
            *v = self.f()?;
        }
        Ok(a)
    }

    fn opt_arr<const K: usize>(&mut self) -> Result<Option<[f64; K]>> {
        let mut a = [0.0; K];
        let mut present = 0;
        for v in &mut a {
            if let Some(x) = self.opt()? {
                *v = x;
                present += 1;
            }
        }
        match present {
            0 => Ok(None),
            p if p == K => Ok(Some(a)),
            _ => Err(Error::MalformedLog(format!(
                "line {}: partially blank group",
                self.line
            ))),
        }
    }

    fn flag(&mut self) -> Result<bool> {
        let line = self.line;
        match self.next()? {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(Error::MalformedLog(format!(
                "line {line}: bad flag `{other}`"
            ))),
        }
    }
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunLogRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let expected = header();
    let got = rdr
        .headers()
        .map_err(|e| Error::MalformedLog(e.to_string()))?;
    if got.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::MalformedLog(format!(
            "header does not match {LOG_SCHEMA}"
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedLog(e.to_string()))?;
        let mut c = Cursor {
            rec: &rec,
            pos: 0,
            line: i + 2,
        };
        rows.push(RunLogRow {
            t: c.f()?,
            truth: c.arr()?,
            estimate: c.opt_arr()?,
            p_trace: c.opt()?,
            q_diag: c.opt_arr()?,
            detected: c.flag()?,
            measurement: c.opt_arr()?,
            command: c.arr()?,
            visual_error: c.arr()?,
            rel_pos_err_pct: c.opt()?,
            in_fov: c.flag()?,
        });
    }
    Ok(rows)
}
