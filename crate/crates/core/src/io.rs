//! Trajectory CSV: one row per node per time slice.
//!
//! Columns are `t, x[, y], u0, …, u{m-1}`; rows are ordered by time, then by
//! flat node index. Leading `#` lines carry metadata such as the config hash.
//! Numbers use Rust's shortest round-trip formatting, so a write/read cycle
//! reproduces every value bit for bit.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{invalid, Result};
use crate::grid::{Domain, Field, Trajectory};

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, comments: &[(&str, &str)], mut out: W) -> Result<()> {
    for (k, v) in comments {
        writeln!(out, "# {k}={v}")?;
    }
    let d = traj.domain();
    let m = traj.components();
    let mut header = vec!["t".to_string(), "x".to_string()];
    if d.dim() == 2 {
        header.push("y".into());
    }
    header.extend((0..m).map(|c| format!("u{c}")));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for (n, f) in traj.fields().iter().enumerate() {
        let t = traj.time(n);
        for k in 0..d.node_count() {
            row.clear();
            row.push(t.to_string());
            let x = d.coords(k);
            for xa in &x[..d.dim()] {
                row.push(xa.to_string());
            }
            row.extend(f.node(k).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses `# key=value` comment lines and the table. The grid is recovered
/// from the distinct coordinates; the time step from the first two slices.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<(Trajectory, Vec<(String, String)>)> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut comments = Vec::new();
    for line in text.as_bytes().lines() {
        let line = line?;
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.trim().split_once('=') {
            comments.push((k.to_string(), v.to_string()));
        }
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let dim = match headers.iter().take_while(|h| !h.starts_with('u')).count() {
        2 => 1,
        3 => 2,
        _ => return Err(invalid("trajectory CSV needs columns t, x[, y], u0..")),
    };
    let m = headers.len() - 1 - dim;
    if m == 0 {
        return Err(invalid("trajectory CSV has no value columns"));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| invalid(format!("bad number {s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let t0 = rows.first().ok_or_else(|| invalid("empty trajectory CSV"))?[0];
    let per_slice = rows.iter().take_while(|r| r[0] == t0).count();
    let mut nodes = Vec::new();
    let mut lengths = Vec::new();
    for a in 0..dim {
        let mut xs: Vec<f64> = rows[..per_slice].iter().map(|r| r[1 + a]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        nodes.push(xs.len());
        lengths.push(*xs.last().expect("non-empty"));
    }
    let domain = Domain::new(&lengths, &nodes)?;
    if per_slice != domain.node_count() || !rows.len().is_multiple_of(per_slice) {
        return Err(invalid("trajectory CSV rows do not form complete slices"));
    }
    let slices = rows.len() / per_slice;
    let dt = if slices > 1 { rows[per_slice][0] - t0 } else { 1.0 };
    let fields = rows
        .chunks(per_slice)
        .map(|chunk| Field::from_values(domain, m, chunk.iter().flat_map(|r| r[1 + dim..].iter().copied()).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok((Trajectory::from_fields(t0, dt, fields)?, comments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::smooth_random_fields;

    #[test]
    fn roundtrip_is_bit_exact() {
        let d = Domain::rectangle(1.0, 0.5, 7, 5).unwrap();
        let fs = smooth_random_fields(d, 2, 3, 3, 11);
        let traj = Trajectory::from_fields(0.0, 0.1, fs).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &[("config_hash", "abc")], &mut buf).unwrap();
        let (back, comments) = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(comments, vec![("config_hash".to_string(), "abc".to_string())]);
        assert_eq!(back.fields(), traj.fields());
        assert_eq!(back.len(), 3);
    }

    #[test]
    fn column_order_1d() {
        let d = Domain::interval(1.0, 4).unwrap();
        let traj = Trajectory::new(0.0, 0.5, Field::constant(d, &[1.0]));
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &[], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "t,x,u0");
        assert_eq!(lines[2], "0,0.3333333333333333,1");
        assert_eq!(lines.len(), 5);
    }
}
