//! Plain-text instance files.
//!
//! ```text
//! PDP <n> <PDTSP|PDTSP_LIFO>
//! <id> <x> <y>          one line per node, ids 0..=2n, 0 = depot
//! PAIR <pickup> <delivery>   optional section (benchmark files only)
//! ```
//!
//! Without a `PAIR` section the pairing is implicit: node `i` is the pickup
//! and node `i + n` the delivery of request `i`. Blank lines and lines
//! starting with `#` are ignored.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::instance::{Instance, Variant};

/// Write an instance in the plain-text format (implicit pairing).
pub fn save_instance(instance: &Instance, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("PDP {} {}\n", instance.n, instance.variant));
    for (id, c) in instance.coords.iter().enumerate() {
        out.push_str(&format!("{} {} {}\n", id, c[0], c[1]));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Strict loader for files written by [`save_instance`]: no `PAIR` section,
/// no normalization. Coordinates round-trip exactly.
pub fn load_instance(path: &Path) -> Result<Instance> {
    let parsed = parse(path)?;
    if parsed.pairs.is_some() {
        return Err(Error::Format(
            "PAIR sections are only accepted by the benchmark loader".into(),
        ));
    }
    Instance::new(parsed.n, parsed.coords, parsed.variant)
}

/// Benchmark loader: accepts an optional explicit `PAIR` section (nodes are
/// then relabeled into the implicit convention) and min-max normalizes the
/// geometry into the unit square with a single isotropic scale factor,
/// anchored at the bounding-box min corner. The factor is recorded in
/// `scale` so reported tour lengths can be mapped back; because the scale is
/// shared by both axes, optimality gaps are identical before and after.
pub fn load_benchmark_instance(path: &Path) -> Result<Instance> {
    let parsed = parse(path)?;
    let n = parsed.n;
    let mut coords = match parsed.pairs {
        None => parsed.coords,
        Some(pairs) => relabel(n, parsed.coords, &pairs)?,
    };

    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in &coords {
        min_x = min_x.min(c[0]);
        min_y = min_y.min(c[1]);
        max_x = max_x.max(c[0]);
        max_y = max_y.max(c[1]);
    }
    let span = (max_x - min_x).max(max_y - min_y);
    let scale = if span > 0.0 { span } else { 1.0 };
    for c in &mut coords {
        c[0] = (c[0] - min_x) / scale;
        c[1] = (c[1] - min_y) / scale;
    }

    let mut instance = Instance::new(n, coords, parsed.variant)?;
    instance.scale = scale;
    Ok(instance)
}

struct Parsed {
    n: usize,
    variant: Variant,
    coords: Vec<[f64; 2]>,
    pairs: Option<Vec<(usize, usize)>>,
}

fn parse(path: &Path) -> Result<Parsed> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("PDP") {
        return Err(Error::Parse { line: line_no, msg: "expected `PDP <n> <variant>` header".into() });
    }
    let n: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse { line: line_no, msg: "bad request count".into() })?;
    let variant: Variant = parts
        .next()
        .ok_or_else(|| Error::Parse { line: line_no, msg: "missing variant".into() })?
        .parse()
        .map_err(|_| Error::Parse { line: line_no, msg: "unknown variant".into() })?;
    if n < 1 {
        return Err(Error::Parse { line: line_no, msg: "request count must be >= 1".into() });
    }

    let node_count = 2 * n + 1;
    let mut coords = vec![[f64::NAN, f64::NAN]; node_count];
    let mut seen = vec![false; node_count];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut nodes_read = 0usize;

    for (line_no, line) in lines {
        let mut parts = line.split_whitespace();
        let first = parts.next().unwrap();
        if first == "PAIR" {
            let p: usize = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "bad PAIR pickup id".into(),
            })?;
            let d: usize = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "bad PAIR delivery id".into(),
            })?;
            pairs.push((p, d));
            continue;
        }
        let id: usize = first.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad node id `{first}`"),
        })?;
        if id >= node_count {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("node id {id} out of range for n = {n}"),
            });
        }
        if seen[id] {
            return Err(Error::Format(format!("duplicate node id {id}")));
        }
        let x: f64 = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "bad x coordinate".into(),
        })?;
        let y: f64 = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "bad y coordinate".into(),
        })?;
        seen[id] = true;
        coords[id] = [x, y];
        nodes_read += 1;
    }

    if nodes_read != node_count {
        return Err(Error::Format(format!("expected {node_count} nodes, found {nodes_read}")));
    }
    Ok(Parsed { n, variant, coords, pairs: if pairs.is_empty() { None } else { Some(pairs) } })
}

/// Rewrite coordinates so that explicit pairs follow the implicit indexing:
/// request `r`'s pickup becomes node `r`, its delivery node `r + n`.
fn relabel(n: usize, coords: Vec<[f64; 2]>, pairs: &[(usize, usize)]) -> Result<Vec<[f64; 2]>> {
    if pairs.len() != n {
        return Err(Error::Format(format!("expected {n} PAIR lines, found {}", pairs.len())));
    }
    let node_count = 2 * n + 1;
    let mut used = vec![false; node_count];
    let mut out = vec![[0.0, 0.0]; node_count];
    out[0] = coords[0];
    for (idx, &(p, d)) in pairs.iter().enumerate() {
        let request = idx + 1;
        for &node in &[p, d] {
            if node == 0 || node >= node_count {
                return Err(Error::Format(format!("PAIR references invalid node {node}")));
            }
            if used[node] {
                return Err(Error::Format(format!("node {node} appears in two pairs")));
            }
            used[node] = true;
        }
        out[request] = coords[p];
        out[request + n] = coords[d];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("pdp_io_test_{}_{}.pdp", std::process::id(), rand_tag()));
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn rand_tag() -> u64 {
        use std::time::{SystemTime, UNIX_EPOCH};
        SystemTime::now().duration_since(UNIX_EPOCH).unwrap().as_nanos() as u64
    }

    #[test]
    fn unit_span_file_keeps_identity_scale() {
        let path = write_temp("PDP 1 PDTSP\n0 0 0\n1 1 0\n2 0.5 1\n");
        let inst = load_benchmark_instance(&path).unwrap();
        assert_eq!(inst.scale, 1.0);
        assert_eq!(inst.coords[1], [1.0, 0.0]);
        fs::remove_file(path).ok();
    }

    #[test]
    fn wide_span_normalizes_and_records_scale() {
        let path = write_temp("PDP 1 PDTSP\n0 0 0\n1 100 0\n2 50 100\n");
        let inst = load_benchmark_instance(&path).unwrap();
        assert_eq!(inst.scale, 100.0);
        assert_eq!(inst.coords[1], [1.0, 0.0]);
        assert_eq!(inst.coords[2], [0.5, 1.0]);
        // a tour length on the normalized geometry maps back linearly
        let route = crate::route::Route::new(vec![0, 1, 2], 3).unwrap();
        let mut raw = inst.clone();
        raw.coords = vec![[0.0, 0.0], [100.0, 0.0], [50.0, 100.0]];
        assert!(
            (route.objective(&raw) - inst.scale * route.objective(&inst)).abs() < 1e-9
        );
        fs::remove_file(path).ok();
    }

    #[test]
    fn save_load_roundtrip_exact() {
        let inst = Instance::generate(5, 123, Variant::PdtspLifo).unwrap();
        let path = std::env::temp_dir().join(format!("pdp_rt_{}.pdp", rand_tag()));
        save_instance(&inst, &path).unwrap();
        let back = load_instance(&path).unwrap();
        assert_eq!(inst, back);
        fs::remove_file(path).ok();
    }

    #[test]
    fn normalized_benchmark_roundtrips_through_save() {
        let path = write_temp("PDP 1 PDTSP_LIFO\n0 3 4\n1 103 4\n2 53 84\n");
        let inst = load_benchmark_instance(&path).unwrap();
        let saved = std::env::temp_dir().join(format!("pdp_norm_rt_{}.pdp", rand_tag()));
        save_instance(&inst, &saved).unwrap();
        let back = load_benchmark_instance(&saved).unwrap();
        for (a, b) in inst.coords.iter().zip(&back.coords) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
        fs::remove_file(path).ok();
        fs::remove_file(saved).ok();
    }

    #[test]
    fn pair_section_relabels_nodes() {
        let path = write_temp(
            "PDP 2 PDTSP\n0 0 0\n1 0.1 0\n2 0.2 0\n3 0.3 0\n4 0.4 0\nPAIR 3 1\nPAIR 2 4\n",
        );
        let inst = load_benchmark_instance(&path).unwrap();
        // request 1 = (pickup at old 3, delivery at old 1)
        assert!((inst.coords[1][0] - 0.75).abs() < 1e-12);
        assert!((inst.coords[3][0] - 0.25).abs() < 1e-12);
        assert!((inst.coords[2][0] - 0.5).abs() < 1e-12);
        assert!((inst.coords[4][0] - 1.0).abs() < 1e-12);
        fs::remove_file(path).ok();
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let path = write_temp("PDP 1 PDTSP\n0 0 0\n1 oops 0\n2 0.5 1\n");
        match load_instance(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::remove_file(path).ok();
    }

    #[test]
    fn duplicate_ids_are_format_errors() {
        let path = write_temp("PDP 1 PDTSP\n0 0 0\n1 1 0\n1 0.5 1\n");
        assert!(matches!(load_instance(&path), Err(Error::Format(_))));
        fs::remove_file(path).ok();
    }
}
