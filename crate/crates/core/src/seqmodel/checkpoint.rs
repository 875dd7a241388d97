//! Plain-text checkpoint format.
//!
//! ```text
//! femlab-policy v=<v> n=<n> Lmax=<L_max> varlen=<0|1>
//! <param 0>
//! <param 1>
//! ...
//! ```
//!
//! One parameter per line in flat layout order, 17 significant digits, so a
//! write/read cycle reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{PolicyParams, TaskShape};
use crate::error::{Error, Result};

const MAGIC: &str = "femlab-policy";

pub fn render_checkpoint(shape: &TaskShape, params: &PolicyParams) -> String {
    let mut out = format!(
        "{MAGIC} v={} n={} Lmax={} varlen={}\n",
        shape.vocab,
        shape.question_len,
        shape.max_len,
        u8::from(shape.variable_length)
    );
    for v in params.as_slice() {
        writeln!(out, "{v:.16e}").expect("writing to a String cannot fail");
    }
    out
}

pub fn write_checkpoint(path: &Path, shape: &TaskShape, params: &PolicyParams) -> Result<()> {
    std::fs::write(path, render_checkpoint(shape, params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(TaskShape, PolicyParams)> {
    let text = std::fs::read_to_string(path)?;
    parse_checkpoint(&text, path)
}

pub fn parse_checkpoint(text: &str, origin: &Path) -> Result<(TaskShape, PolicyParams)> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty checkpoint".into()))?;
    let mut fields = header.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(err(1, format!("expected header starting with `{MAGIC}`")));
    }
    let mut field = |key: &str| -> Result<usize> {
        let raw = fields
            .next()
            .and_then(|f| f.strip_prefix(key))
            .and_then(|f| f.strip_prefix('='))
            .ok_or_else(|| err(1, format!("missing `{key}=` field")))?;
        raw.parse()
            .map_err(|_| err(1, format!("bad value for `{key}`: {raw}")))
    };
    let vocab = field("v")?;
    let question_len = field("n")?;
    let max_len = field("Lmax")?;
    let variable_length = match field("varlen")? {
        0 => false,
        1 => true,
        other => return Err(err(1, format!("varlen must be 0 or 1, got {other}"))),
    };
    let shape = TaskShape::new(vocab, question_len, max_len, variable_length)
        .map_err(|e| err(1, e.to_string()))?;

    let mut values = Vec::with_capacity(shape.param_count());
    for (i, line) in lines.enumerate() {
        let v: f64 = line
            .parse()
            .map_err(|_| err(i + 2, format!("not a number: {line:?}")))?;
        values.push(v);
    }
    let params = PolicyParams::from_flat(vocab, values).map_err(|e| err(0, e.to_string()))?;
    Ok((shape, params))
}
