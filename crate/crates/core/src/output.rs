//! Run artifacts. Every file is written to a temporary name next to its
//! destination and renamed into place, so readers never see partial files.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use crate::homotopy::TracePoint;
use crate::mesh::{write_vtk, VtkData};
use crate::mesh::Region;
use crate::motor::{MotorDesign, MotorProblem};

pub const TRACE_HEADER: &str = "k,t,J1,J2,residual,corrector_iters,wall_ms";

/// Writes `bytes` to `path` through a temporary file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

/// Trace as CSV. Floats use the shortest representation that reads back
/// exactly. Without `wall_time` the last column is `nan`.
pub fn trace_csv(points: &[TracePoint], wall_time: bool) -> String {
    let mut s = String::with_capacity(64 * (points.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for p in points {
        let wall = if wall_time { format!("{:.3}", p.wall_ms) } else { "nan".into() };
        s.push_str(&format!("{},{},{},{},{},{},{}\n", p.k, p.t, p.j1, p.j2, p.residual, p.corrector_iters, wall));
    }
    s
}

/// Reads a file written by [`trace_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<TracePoint>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(format!("expected header `{TRACE_HEADER}`"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("line {}: expected 7 fields, got {}", i + 2, f.len()));
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|e| format!("line {}: field {}: {e}", i + 2, j + 1));
            let int = |j: usize| f[j].parse::<usize>().map_err(|e| format!("line {}: field {}: {e}", i + 2, j + 1));
            Ok(TracePoint { k: int(0)?, t: num(1)?, j1: num(2)?, j2: num(3)?, residual: num(4)?, corrector_iters: int(5)?, wall_ms: num(6)? })
        })
        .collect()
}

/// Legacy VTK of a design with the potential and the flux density.
pub fn design_vtk(problem: &MotorProblem, design: &MotorDesign) -> Vec<u8> {
    let b = problem.flux_density(design);
    let iron: Vec<f64> = design.mesh.regions().iter().map(|r| if *r == Region::Iron { 1.0 } else { 0.0 }).collect();
    let data = VtkData {
        point_scalars: vec![("potential", design.state.values.as_slice())],
        cell_scalars: vec![("flux_density", b.as_slice()), ("iron", iron.as_slice())],
    };
    let mut buf = Vec::new();
    write_vtk(&design.mesh, &data, &mut buf).expect("writing to memory cannot fail");
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(k: usize, t: f64) -> TracePoint {
        TracePoint { k, t, j1: -1.0 / 3.0, j2: 2.0e-5, residual: 3.5e-11, corrector_iters: 2, wall_ms: 12.5 }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let pts = vec![point(0, 0.0), point(1, 0.1 + 0.2), point(2, 0.9999560442)];
        let text = trace_csv(&pts, true);
        assert!(text.starts_with("k,t,J1,J2,residual,corrector_iters,wall_ms\n"));
        assert_eq!(parse_trace_csv(&text).unwrap(), pts);
        let text = trace_csv(&pts, false);
        assert!(text.lines().skip(1).all(|l| l.ends_with(",nan")));
        let back = parse_trace_csv(&text).unwrap();
        assert_eq!(back[1].t, pts[1].t);
        assert!(back[1].wall_ms.is_nan());
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_trace_csv("k,t\n").is_err());
        let err = parse_trace_csv(&format!("{TRACE_HEADER}\n0,0,1,2,3,x,nan\n")).unwrap_err();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, b"first version").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
        assert!(write_atomic(&dir.path().join("missing/b.txt"), b"x").is_err());
    }
}
