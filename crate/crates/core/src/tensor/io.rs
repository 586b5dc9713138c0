//! Text dump format.
//!
//! A tensor is a header line `shape: d0 d1 ...` followed by its flat values,
//! one per line, with 17 significant digits. Named dumps prefix each tensor
//! with a `name: <layer>/<param>` line.

use super::Tensor;
use crate::error::{Error, Result};
use std::fmt::Write as _;

fn parse_err<T>(line: usize, reason: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        reason: reason.into(),
    })
}

pub fn write_tensor(out: &mut String, t: &Tensor) {
    out.push_str("shape:");
    for d in t.dims() {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    for v in t.data() {
        let _ = writeln!(out, "{v:.16e}");
    }
}

pub fn write_named<'a>(items: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> String {
    let mut out = String::new();
    for (name, t) in items {
        let _ = writeln!(out, "name: {name}");
        write_tensor(&mut out, t);
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate().peekable(),
        }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.inner.next().map(|(i, l)| (i + 1, l))
    }

    fn at_end(&mut self) -> bool {
        self.inner.peek().is_none()
    }

    fn read_tensor(&mut self, last_line: usize) -> Result<Tensor> {
        let (line, header) = match self.next() {
            Some(l) => l,
            None => return parse_err(last_line + 1, "missing `shape:` header"),
        };
        let dims_text = match header.strip_prefix("shape:") {
            Some(rest) => rest,
            None => return parse_err(line, format!("expected `shape:` header, found {header:?}")),
        };
        let mut dims = Vec::new();
        for tok in dims_text.split_whitespace() {
            match tok.parse::<usize>() {
                Ok(d) => dims.push(d),
                Err(_) => return parse_err(line, format!("bad extent {tok:?}")),
            }
        }
        let count: usize = dims.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut last = line;
        for _ in 0..count {
            let (l, text) = match self.next() {
                Some(v) => v,
                None => return parse_err(last + 1, format!("expected {count} values")),
            };
            match text.trim().parse::<f64>() {
                Ok(v) => data.push(v),
                Err(_) => return parse_err(l, format!("bad value {text:?}")),
            }
            last = l;
        }
        if dims.is_empty() {
            return Ok(Tensor::scalar(data[0]));
        }
        Tensor::from_vec(&dims, data).or_else(|e| parse_err(line, e.to_string()))
    }
}

pub fn parse_tensor(text: &str) -> Result<Tensor> {
    let mut lines = Lines::new(text);
    let t = lines.read_tensor(0)?;
    if let Some((line, _)) = lines.next() {
        return parse_err(line, "trailing content after tensor");
    }
    Ok(t)
}

pub fn parse_named(text: &str) -> Result<Vec<(String, Tensor)>> {
    let mut lines = Lines::new(text);
    let mut out = Vec::new();
    while !lines.at_end() {
        let (line, header) = lines.next().expect("not at end");
        let name = match header.strip_prefix("name:") {
            Some(n) => n.trim().to_string(),
            None => return parse_err(line, format!("expected `name:` line, found {header:?}")),
        };
        out.push((name, lines.read_tensor(line)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Fill, Rng};
    use proptest::prelude::*;

    #[test]
    fn header_and_values() {
        let t = Tensor::from_vec(&[2], vec![0.1, -3.0]).unwrap();
        let mut s = String::new();
        write_tensor(&mut s, &t);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "shape: 2");
        assert_eq!(lines.len(), 3);
        assert_eq!(parse_tensor(&s).unwrap(), t);
    }

    #[test]
    fn non_finite_values_survive() {
        let t = Tensor::from_vec(&[3], vec![f64::INFINITY, f64::NEG_INFINITY, f64::NAN]).unwrap();
        let mut s = String::new();
        write_tensor(&mut s, &t);
        let back = parse_tensor(&s).unwrap();
        assert_eq!(back.data()[0], f64::INFINITY);
        assert_eq!(back.data()[1], f64::NEG_INFINITY);
        assert!(back.data()[2].is_nan());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_tensor("shape: 2\n1.0\nfoo\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_named("name: a\nshape: 1\n1\nbogus\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    proptest! {
        #[test]
        fn named_dump_roundtrips_bitwise(dims in prop::collection::vec(1usize..4, 0..4), seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let t = if dims.is_empty() {
                Tensor::scalar(rng.standard_normal() * 1e-300)
            } else {
                Tensor::create(Fill::Normal { mean: 0.0, std: 1e3 }, &dims, &mut rng).unwrap()
            };
            let text = write_named([("layer0/gamma", &t), ("layer1/beta", &t)]);
            let back = parse_named(&text).unwrap();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[0].0, "layer0/gamma");
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back[1].1), bits(&t));
            prop_assert_eq!(back[1].1.dims(), t.dims());
        }
    }
}
