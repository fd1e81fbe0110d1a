//! JSON and CSV emission. Floats are written as `{:.16e}` (17 significant digits) so that
//! identical runs give byte-identical files.

use infdelay::linalg::CMat;
use infdelay::{Error, Result, C64};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Value};
use std::io::{self, Write};
use std::path::Path;

/// Pretty printer with fixed-format floats.
pub struct FixedFloatFormatter<'a>(PrettyFormatter<'a>);

impl Default for FixedFloatFormatter<'_> {
    fn default() -> Self {
        Self(PrettyFormatter::with_indent(b"  "))
    }
}

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl Formatter for FixedFloatFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_float(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string(v: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloatFormatter::default());
    v.serialize(&mut ser).expect("serializing a Value into memory cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON output is UTF-8")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config { line: 0, message: format!("cannot write {}: {e}", path.display()) }
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    std::fs::write(path, to_json_string(v)).map_err(|e| io_err(path, e))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|x| fmt_float(*x))).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Non-finite values become null.
pub fn num(x: f64) -> Value {
    json!(x)
}

pub fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn cplx(z: C64) -> Value {
    json!([num(z.re), num(z.im)])
}

pub fn cvec(v: &[C64]) -> Value {
    Value::Array(v.iter().map(|z| cplx(*z)).collect())
}

/// Row-major nested arrays of `[re, im]`.
pub fn matrix(a: &CMat) -> Value {
    Value::Array((0..a.nrows()).map(|i| Value::Array((0..a.ncols()).map(|j| cplx(a[(i, j)])).collect())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        let s = to_json_string(&json!({ "x": num(0.1), "n": 3, "bad": num(f64::NAN) }));
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"n\": 3"));
        assert!(s.contains("\"bad\": null"));
    }
}
