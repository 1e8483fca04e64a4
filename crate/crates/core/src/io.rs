//! File formats.
//!
//! Measures: a header line `dissdim-measure v1 d=<int> n=<int>` followed by
//! either `n` text lines `x_1 ... x_d t w` or `n` binary records of `d + 2`
//! little-endian `f64`. Readers detect which.
//!
//! Fields: a header line
//! `dissdim-field v1 d=<int> nx=<int> nt=<int> a=<f> b=<f> T=<f> components=u[,p][,theta]`
//! followed by little-endian `f64` samples, time-major, then spatial nodes
//! with the first axis slowest, then the components of a node in the order
//! `u_1..u_d, p, theta`. For `d = 1` there is a CSV body instead: a column
//! line `t,x,u[,p][,theta]` and one row per node.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::aniso_measure::{AtomicMeasure, PointCloud};
use crate::error::{Error, Result};
use crate::weak_balance::{GridSpec, GriddedField};

pub const MEASURE_MAGIC: &str = "dissdim-measure";
pub const FIELD_MAGIC: &str = "dissdim-field";
pub const FORMAT_VERSION: &str = "v1";

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Splits off the first line (without its newline).
fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| parse_err(1, "header is not UTF-8"))?;
    let rest = if end < bytes.len() { &bytes[end + 1..] } else { &[] };
    Ok((header.trim_end_matches('\r'), rest))
}

fn header_fields(header: &str, magic: &str) -> Result<HashMap<String, String>> {
    let mut words = header.split_whitespace();
    if words.next() != Some(magic) {
        return Err(parse_err(1, format!("expected '{magic}' header")));
    }
    if words.next() != Some(FORMAT_VERSION) {
        return Err(parse_err(1, format!("unsupported version, expected {FORMAT_VERSION}")));
    }
    let mut out = HashMap::new();
    for w in words {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed header entry '{w}'")))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn header_value<T: std::str::FromStr>(fields: &HashMap<String, String>, key: &str) -> Result<T> {
    let raw = fields
        .get(key)
        .ok_or_else(|| parse_err(1, format!("header lacks {key}=")))?;
    raw.parse().map_err(|_| parse_err(1, format!("bad value {key}={raw}")))
}

fn le_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn text_body(rest: &[u8]) -> Option<&str> {
    let s = std::str::from_utf8(rest).ok()?;
    s.chars()
        .all(|c| c.is_ascii_graphic() || c.is_ascii_whitespace())
        .then_some(s)
}

pub fn parse_measure(bytes: &[u8]) -> Result<AtomicMeasure> {
    let (header, rest) = split_header(bytes)?;
    let fields = header_fields(header, MEASURE_MAGIC)?;
    let d: usize = header_value(&fields, "d")?;
    let n: usize = header_value(&fields, "n")?;
    if d == 0 {
        return Err(parse_err(1, "d must be at least 1"));
    }
    let width = d + 2;
    let values = match text_body(rest) {
        Some(text) => {
            let mut values = Vec::with_capacity(n * width);
            let mut rows = 0;
            for (k, line) in text.lines().enumerate() {
                let line_no = k + 2;
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|w| {
                        w.parse::<f64>()
                            .map_err(|_| parse_err(line_no, format!("not a number: '{w}'")))
                    })
                    .collect::<Result<_>>()?;
                if row.len() != width {
                    return Err(parse_err(
                        line_no,
                        format!("expected {width} columns, found {}", row.len()),
                    ));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(parse_err(line_no, "non-finite value"));
                }
                values.extend(row);
                rows += 1;
            }
            if rows != n {
                return Err(parse_err(1, format!("header announces {n} atoms, file has {rows}")));
            }
            values
        }
        None => {
            if rest.len() != n * width * 8 {
                return Err(parse_err(
                    2,
                    format!("binary body has {} bytes, expected {}", rest.len(), n * width * 8),
                ));
            }
            le_f64s(rest)
        }
    };
    let mut coords = Vec::with_capacity(n * d);
    let mut times = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for row in values.chunks_exact(width) {
        coords.extend_from_slice(&row[..d]);
        times.push(row[d]);
        weights.push(row[d + 1]);
    }
    AtomicMeasure::from_cloud(PointCloud::from_flat(d, coords, times)?, weights)
}

pub fn read_measure(path: &Path) -> Result<AtomicMeasure> {
    parse_measure(&std::fs::read(path)?)
}

fn measure_header(mu: &AtomicMeasure) -> String {
    format!("{MEASURE_MAGIC} {FORMAT_VERSION} d={} n={}\n", mu.d(), mu.len())
}

/// Text body; floats printed in shortest round-trip form.
pub fn write_measure_text(mu: &AtomicMeasure, mut out: impl Write) -> Result<()> {
    let mut s = measure_header(mu);
    let pts = mu.points();
    for i in 0..mu.len() {
        for v in pts.x(i) {
            s.push_str(&format!("{v:?} "));
        }
        s.push_str(&format!("{:?} {:?}\n", pts.t(i), mu.weights()[i]));
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_measure_binary(mu: &AtomicMeasure, mut out: impl Write) -> Result<()> {
    let mut buf = measure_header(mu).into_bytes();
    let pts = mu.points();
    for i in 0..mu.len() {
        for v in pts.x(i).iter().chain([pts.t(i), mu.weights()[i]].iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct FieldHeader {
    spec: GridSpec,
    has_p: bool,
    has_theta: bool,
}

fn parse_field_header(header: &str) -> Result<FieldHeader> {
    let fields = header_fields(header, FIELD_MAGIC)?;
    let d: usize = header_value(&fields, "d")?;
    let nx: usize = header_value(&fields, "nx")?;
    let nt: usize = header_value(&fields, "nt")?;
    let a: f64 = header_value(&fields, "a")?;
    let b: f64 = header_value(&fields, "b")?;
    let t_end: f64 = header_value(&fields, "T")?;
    let comps: String = header_value(&fields, "components")?;
    let comps: Vec<&str> = comps.split(',').collect();
    if comps.first() != Some(&"u") {
        return Err(parse_err(1, "components must start with u"));
    }
    let (mut has_p, mut has_theta) = (false, false);
    for c in &comps[1..] {
        match *c {
            "p" if !has_p && !has_theta => has_p = true,
            "theta" if !has_theta => has_theta = true,
            other => return Err(parse_err(1, format!("unexpected component '{other}'"))),
        }
    }
    let spec = GridSpec::new(d, a, b, nx, t_end, nt).map_err(|e| parse_err(1, e.to_string()))?;
    Ok(FieldHeader { spec, has_p, has_theta })
}

fn components_label(field: &GriddedField) -> String {
    let mut s = String::from("u");
    if field.p_raw().is_some() {
        s.push_str(",p");
    }
    if field.theta_raw().is_some() {
        s.push_str(",theta");
    }
    s
}

fn field_header(field: &GriddedField) -> String {
    let spec = field.spec();
    let g = &spec.space;
    format!(
        "{FIELD_MAGIC} {FORMAT_VERSION} d={} nx={} nt={} a={:?} b={:?} T={:?} components={}\n",
        g.d,
        g.nx,
        spec.nt,
        g.a,
        g.b,
        spec.t_end,
        components_label(field)
    )
}

fn assemble_field(h: FieldHeader, rows: &[f64], first_line: usize) -> Result<GriddedField> {
    let d = h.spec.d();
    let width = d + h.has_p as usize + h.has_theta as usize;
    let nodes = h.spec.nt * h.spec.space.n_nodes();
    if rows.len() != nodes * width {
        return Err(parse_err(
            first_line,
            format!("expected {} samples, found {}", nodes * width, rows.len()),
        ));
    }
    let mut u = Vec::with_capacity(nodes * d);
    let mut p = h.has_p.then(|| Vec::with_capacity(nodes));
    let mut th = h.has_theta.then(|| Vec::with_capacity(nodes));
    for row in rows.chunks_exact(width) {
        u.extend_from_slice(&row[..d]);
        if let Some(p) = p.as_mut() {
            p.push(row[d]);
        }
        if let Some(th) = th.as_mut() {
            th.push(row[width - 1]);
        }
    }
    GriddedField::new(h.spec, u, p, th)
}

pub fn parse_field(bytes: &[u8]) -> Result<GriddedField> {
    let (header, rest) = split_header(bytes)?;
    let h = parse_field_header(header)?;
    if rest.starts_with(b"t,x") {
        if h.spec.d() != 1 {
            return Err(parse_err(2, "the CSV layout is only defined for d = 1"));
        }
        let text = std::str::from_utf8(rest).map_err(|_| parse_err(2, "CSV body is not UTF-8"))?;
        let mut rows = Vec::new();
        let ncols = 2 + 1 + h.has_p as usize + h.has_theta as usize;
        for (k, line) in text.lines().enumerate().skip(1) {
            let line_no = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|w| {
                    w.trim()
                        .parse::<f64>()
                        .map_err(|_| parse_err(line_no, format!("not a number: '{w}'")))
                })
                .collect::<Result<_>>()?;
            if cols.len() != ncols {
                return Err(parse_err(
                    line_no,
                    format!("expected {ncols} columns, found {}", cols.len()),
                ));
            }
            rows.extend_from_slice(&cols[2..]);
        }
        return assemble_field(h, &rows, 3);
    }
    if rest.len() % 8 != 0 {
        return Err(parse_err(2, "binary body is not a whole number of f64"));
    }
    assemble_field(h, &le_f64s(rest), 2)
}

pub fn read_field(path: &Path) -> Result<GriddedField> {
    parse_field(&std::fs::read(path)?)
}

fn node_row(field: &GriddedField, it: usize, k: usize) -> Vec<f64> {
    let n = field.spec().space.n_nodes();
    let mut row = field.u_at(it, k).to_vec();
    if let Some(p) = field.p_raw() {
        row.push(p[it * n + k]);
    }
    if let Some(th) = field.theta_raw() {
        row.push(th[it * n + k]);
    }
    row
}

pub fn write_field_binary(field: &GriddedField, mut out: impl Write) -> Result<()> {
    let mut buf = field_header(field).into_bytes();
    let spec = field.spec();
    for it in 0..spec.nt {
        for k in 0..spec.space.n_nodes() {
            for v in node_row(field, it, k) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn write_field_csv(field: &GriddedField, mut out: impl Write) -> Result<()> {
    let spec = field.spec();
    if spec.d() != 1 {
        return Err(Error::InvalidParameter(
            "the CSV layout is only defined for d = 1".into(),
        ));
    }
    let mut s = field_header(field);
    s.push_str("t,x,");
    s.push_str(&components_label(field));
    s.push('\n');
    for it in 0..spec.nt {
        for k in 0..spec.space.n_nodes() {
            s.push_str(&format!("{:?},{:?}", spec.time(it), spec.space.coord(k)));
            for v in node_row(field, it, k) {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aniso_measure::SpaceTimePoint;

    fn sample_measure() -> AtomicMeasure {
        let atoms = vec![
            (SpaceTimePoint::new(vec![0.1, -0.2], 0.5), 1.0 / 3.0),
            (SpaceTimePoint::new(vec![1e-300, 7.0], 0.25), 2.0),
        ];
        AtomicMeasure::new(2, &atoms).unwrap()
    }

    #[test]
    fn measure_round_trips() {
        let mu = sample_measure();
        let mut text = Vec::new();
        write_measure_text(&mu, &mut text).unwrap();
        assert_eq!(parse_measure(&text).unwrap(), mu);
        let mut bin = Vec::new();
        write_measure_binary(&mu, &mut bin).unwrap();
        assert_eq!(parse_measure(&bin).unwrap(), mu);
    }

    #[test]
    fn malformed_measures_report_lines() {
        let err = parse_measure(b"dissdim-measure v1 d=1 n=2\n0 0 1\n0 x 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_measure(b"dissdim-measure v1 d=1 n=2\n0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_measure(b"something else\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_measure(b"dissdim-measure v1 d=1 n=1\n0 0 -1\n").unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
        let empty = parse_measure(b"dissdim-measure v1 d=1 n=0\n").unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn field_round_trips() {
        let spec = GridSpec::new(2, -1.0, 1.0, 5, 0.5, 3).unwrap();
        let field = GriddedField::sample(spec, |x, t, o| {
            o[0] = x[0] + t;
            o[1] = x[1] * x[0];
        })
        .unwrap()
        .with_pressure_fn(|x, _| x[0] - 0.1)
        .unwrap();
        let mut bin = Vec::new();
        write_field_binary(&field, &mut bin).unwrap();
        assert_eq!(parse_field(&bin).unwrap(), field);

        let spec = GridSpec::new(1, 0.0, 1.0, 7, 1.0, 4).unwrap();
        let field = GriddedField::sample(spec, |x, t, o| o[0] = x[0] * t - 0.3)
            .unwrap()
            .with_theta_fn(|x, _| x[0])
            .unwrap();
        let mut csv = Vec::new();
        write_field_csv(&field, &mut csv).unwrap();
        assert_eq!(parse_field(&csv).unwrap(), field);
        let mut bin = Vec::new();
        write_field_binary(&field, &mut bin).unwrap();
        assert_eq!(parse_field(&bin).unwrap(), field);
    }

    #[test]
    fn malformed_fields() {
        let err = parse_field(b"dissdim-field v1 d=1 nx=3 nt=2 a=0 b=1 T=1 components=u\n\x00\x00").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_field(b"dissdim-field v1 d=1 nx=3 nt=2 a=0 b=1 components=u\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
