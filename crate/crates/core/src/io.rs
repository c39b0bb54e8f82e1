//! CSV readers and writers for path batches and potentials.
//!
//! Path files have the header `path_id,t,x1,...,xd,alive` and one row per
//! path and grid time, ordered by `path_id`. Rows at or after Δ have empty
//! coordinates and `alive = 0`. Floats are written as the shortest decimal
//! that reads back to the same value, never in exponent form.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::path::PathRecord;
use crate::potential::Potential;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes `paths` in order; the row's `path_id` is the index in `paths`.
pub fn write_paths<W: Write>(out: W, paths: &[PathRecord]) -> Result<()> {
    let dim = paths.first().map_or(1, PathRecord::dim);
    if paths.iter().any(|p| p.dim() != dim) {
        return Err(Error::Validation("paths of mixed dimension".into()));
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut header = vec!["path_id".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.push("alive".into());
    w.write_record(&header).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(dim + 3);
    for (id, p) in paths.iter().enumerate() {
        for (i, &t) in p.times().iter().enumerate() {
            row.clear();
            row.push(id.to_string());
            row.push(format!("{t}"));
            match p.state(i).as_point() {
                Some(x) => {
                    row.extend(x.iter().map(|v| format!("{v}")));
                    row.push("1".into());
                }
                None => {
                    row.extend(std::iter::repeat_n(String::new(), dim));
                    row.push("0".into());
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Validation(format!("malformed {what} {s:?}")))
}

/// Reads a path file. The explosion time of a path is recovered as its
/// first Δ grid time, so only the grid values round-trip exactly.
pub fn read_paths<R: Read>(input: R) -> Result<Vec<PathRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let n = header.len();
    if n < 4 || &header[0] != "path_id" || &header[1] != "t" || &header[n - 1] != "alive" {
        return Err(Error::Validation("path file header must be path_id,t,x1..xd,alive".into()));
    }
    let dim = n - 3;
    for (i, h) in header.iter().skip(2).take(dim).enumerate() {
        if h != format!("x{}", i + 1) {
            return Err(Error::Validation(format!("unexpected column {h:?}")));
        }
    }
    struct Acc {
        id: u64,
        times: Vec<f64>,
        coords: Vec<f64>,
        xi: f64,
    }
    let mut out = Vec::new();
    let mut shared: Option<Arc<[f64]>> = None;
    let mut finish = |acc: Acc, out: &mut Vec<PathRecord>| -> Result<()> {
        let times: Arc<[f64]> = match &shared {
            Some(s) if **s == *acc.times => Arc::clone(s),
            _ => {
                let t: Arc<[f64]> = acc.times.into();
                shared = Some(Arc::clone(&t));
                t
            }
        };
        out.push(PathRecord::from_parts(dim, times, acc.coords, acc.xi)?);
        Ok(())
    };
    let mut cur: Option<Acc> = None;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != n {
            return Err(Error::Validation(format!("row has {} fields instead of {n}", rec.len())));
        }
        let id: u64 = rec[0]
            .parse()
            .map_err(|_| Error::Validation(format!("malformed path_id {:?}", &rec[0])))?;
        let t = parse_f64(&rec[1], "time")?;
        let alive = match &rec[n - 1] {
            "1" => true,
            "0" => false,
            other => return Err(Error::Validation(format!("alive must be 0 or 1, got {other:?}"))),
        };
        match &cur {
            Some(a) if a.id == id => {}
            Some(a) if a.id > id => return Err(Error::Validation("rows are not ordered by path_id".into())),
            _ => {
                if let Some(done) = cur.take() {
                    finish(done, &mut out)?;
                }
                cur = Some(Acc {
                    id,
                    times: Vec::new(),
                    coords: Vec::new(),
                    xi: f64::INFINITY,
                });
            }
        }
        let acc = cur.as_mut().expect("current path");
        acc.times.push(t);
        if alive {
            if acc.xi.is_finite() {
                return Err(Error::Validation(format!("path {id} leaves the cemetery at t={t}")));
            }
            for j in 0..dim {
                acc.coords.push(parse_f64(&rec[2 + j], "coordinate")?);
            }
        } else if acc.xi.is_infinite() {
            acc.xi = t;
        }
    }
    if let Some(done) = cur {
        finish(done, &mut out)?;
    }
    Ok(out)
}

fn numeric_rows<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(Error::Validation(format!("potential rows need two columns, row {i} has {}", rec.len())));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(a), Ok(b)) => rows.push((a, b)),
            // A non-numeric first row is a header.
            _ if i == 0 => {}
            _ => return Err(Error::Validation(format!("malformed potential row {i}"))),
        }
    }
    Ok(rows)
}

/// A grid potential from rows `(knot, value)`.
pub fn read_grid_potential<R: Read>(input: R) -> Result<Potential> {
    let rows = numeric_rows(input)?;
    let (knots, values) = rows.into_iter().unzip();
    Potential::grid(knots, values)
}

/// A piecewise-constant potential on the lattice `mesh Z` from rows `(k, q_k)`
/// with consecutive integers `k`.
pub fn read_increment_potential<R: Read>(input: R, mesh: f64) -> Result<Potential> {
    let rows = numeric_rows(input)?;
    let first = rows.first().ok_or_else(|| Error::Validation("no increments".into()))?;
    let k_lo = first.0 as i64;
    for (i, (k, _)) in rows.iter().enumerate() {
        if *k != (k_lo + i as i64) as f64 {
            return Err(Error::Validation(format!("increment indices must be consecutive integers, got {k} at row {i}")));
        }
    }
    let q: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Potential::piecewise_constant(mesh, k_lo, &q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::State;
    use proptest::prelude::*;

    fn sample_paths() -> Vec<PathRecord> {
        let times: Arc<[f64]> = vec![0.0, 0.1, 0.2, 1.0 / 3.0].into();
        vec![
            PathRecord::new(
                2,
                Arc::clone(&times),
                &[
                    State::Point(vec![0.0, -1.5]),
                    State::Point(vec![1e-7, 2.0 / 3.0]),
                    State::Point(vec![123456.789, -0.0]),
                    State::Point(vec![5e-324, 1.0]),
                ],
                f64::INFINITY,
            )
            .unwrap(),
            PathRecord::new(
                2,
                times,
                &[State::Point(vec![1.0, 1.0]), State::Cemetery, State::Cemetery, State::Cemetery],
                0.1,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn path_files_round_trip() {
        let paths = sample_paths();
        let mut buf = Vec::new();
        write_paths(&mut buf, &paths).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("path_id,t,x1,x2,alive\n0,0,0,-1.5,1\n0,0.1,0.0000001,"));
        assert!(text.contains("\n1,0.1,,,0\n"));
        assert!(!text.lines().skip(1).any(|l| l.contains('e')), "{text}");
        let back = read_paths(&buf[..]).unwrap();
        assert_eq!(back, paths);
        let mut again = Vec::new();
        write_paths(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn malformed_path_files_are_rejected() {
        for text in [
            "id,t,x1,alive\n",
            "path_id,t,x1,alive\n0,0,1,2\n",
            "path_id,t,x1,alive\n0,0,,0\n0,1,2,1\n",
            "path_id,t,x1,alive\n1,0,1,1\n0,0,1,1\n",
            "path_id,t,x1,alive\n0,0,abc,1\n",
        ] {
            assert!(read_paths(text.as_bytes()).is_err(), "{text}");
        }
    }

    #[test]
    fn potential_files() {
        let v = read_grid_potential("x,v\n0,0\n1,2\n2,0\n".as_bytes()).unwrap();
        assert_eq!(v.value(0.5).unwrap(), 1.0);
        let w = read_increment_potential("k,q\n0,0\n1,2\n".as_bytes(), 1.0).unwrap();
        assert_eq!(w.value(1.5).unwrap(), 2.0);
        assert!(read_increment_potential("0,0\n2,1\n".as_bytes(), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip(xs in proptest::collection::vec(-1e300f64..1e300, 1..20)) {
            let times: Arc<[f64]> = (0..xs.len()).map(|i| i as f64 / 7.0).collect::<Vec<_>>().into();
            let p = PathRecord::from_parts(1, times, xs.clone(), f64::INFINITY).unwrap();
            let mut buf = Vec::new();
            write_paths(&mut buf, std::slice::from_ref(&p)).unwrap();
            prop_assert_eq!(read_paths(&buf[..]).unwrap(), vec![p]);
        }
    }
}
