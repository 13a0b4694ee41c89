//! ASCII OBJ and PLY mesh files, and landmark index files.
//!
//! Writers print coordinates with Rust's shortest round-trip float formatting,
//! so a written mesh reads back bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{LandmarkIndexSet, Mesh, Point3};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let bad = |msg: &str| Error::data(path, format!("line {line_no}: {msg}"));
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    *c = tok
                        .next()
                        .ok_or_else(|| bad("vertex needs 3 coordinates"))?
                        .parse()
                        .map_err(|_| bad("bad vertex coordinate"))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                    let resolved = if i > 0 { i - 1 } else { vertices.len() as i64 + i };
                    if resolved < 0 {
                        return Err(bad("face index out of range"));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(bad("face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces).map_err(|e| Error::data(path, e.to_string()))
}

pub fn format_obj(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 32 + mesh.faces.len() * 16);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn parse_ply(text: &str, path: &Path) -> Result<Mesh> {
    let mut lines = text.lines().enumerate();
    let bad = |line_no: usize, msg: &str| Error::data(path, format!("line {line_no}: {msg}"));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(bad(1, "missing 'ply' header")),
    }
    let mut num_vertices = 0usize;
    let mut num_faces = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = "";
    loop {
        let (ln, line) = lines.next().ok_or_else(|| bad(0, "unterminated header"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(bad(ln + 1, "only ASCII PLY is supported"));
                }
            }
            ["element", "vertex", n] => {
                num_vertices = n.parse().map_err(|_| bad(ln + 1, "bad vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                num_faces = n.parse().map_err(|_| bad(ln + 1, "bad face count"))?;
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let pos = |name: &str| vertex_props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (pos("x"), pos("y"), pos("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad(0, "vertex element lacks x/y/z properties")),
    };
    let mut vertices = Vec::with_capacity(num_vertices);
    for _ in 0..num_vertices {
        let (ln, line) = lines.next().ok_or_else(|| bad(0, "missing vertex rows"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(ln + 1, "bad vertex row"))?;
        let get = |i: usize| vals.get(i).copied().ok_or_else(|| bad(ln + 1, "short vertex row"));
        vertices.push([get(xi)?, get(yi)?, get(zi)?]);
    }
    let mut faces = Vec::with_capacity(num_faces);
    for _ in 0..num_faces {
        let (ln, line) = lines.next().ok_or_else(|| bad(0, "missing face rows"))?;
        let vals: Vec<u32> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(ln + 1, "bad face row"))?;
        let n = *vals.first().ok_or_else(|| bad(ln + 1, "empty face row"))? as usize;
        if n < 3 || vals.len() < n + 1 {
            return Err(bad(ln + 1, "bad face row"));
        }
        for k in 1..n - 1 {
            faces.push([vals[1], vals[k + 1], vals[k + 2]]);
        }
    }
    Mesh::new(vertices, faces).map_err(|e| Error::data(path, e.to_string()))
}

pub fn format_ply(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

/// Reads `.obj` or `.ply` by extension.
pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = read_text(path)?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => parse_obj(&text, path),
        Some("ply") => parse_ply(&text, path),
        _ => Err(Error::data(path, "unknown mesh extension (expected .obj or .ply)")),
    }
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ply") => write_text(path, &format_ply(mesh)),
        _ => write_text(path, &format_obj(mesh)),
    }
}

pub fn is_mesh_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("obj") | Some("ply")
    )
}

/// One zero-based vertex index per line; blank lines are ignored.
pub fn parse_landmark_indices(text: &str, path: &Path) -> Result<LandmarkIndexSet> {
    let mut indices = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let i: usize = line
            .parse()
            .map_err(|_| Error::data(path, format!("line {}: not a vertex index: {line:?}", ln + 1)))?;
        indices.push(i);
    }
    LandmarkIndexSet::new(indices).map_err(|e| Error::data(path, e.to_string()))
}

pub fn read_landmark_indices(path: &Path) -> Result<LandmarkIndexSet> {
    parse_landmark_indices(&read_text(path)?, path)
}

pub fn read_landmark_indices_k(path: &Path, expected_k: usize) -> Result<LandmarkIndexSet> {
    let idx = read_landmark_indices(path)?;
    if idx.len() != expected_k {
        return Err(Error::data(path, format!("expected {expected_k} landmark indices, found {}", idx.len())));
    }
    Ok(idx)
}

pub fn format_landmark_indices(idx: &LandmarkIndexSet) -> String {
    idx.indices().iter().map(|i| format!("{i}\n")).collect()
}

pub fn write_landmark_indices(path: &Path, idx: &LandmarkIndexSet) -> Result<()> {
    write_text(path, &format_landmark_indices(idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.5, 0.0, -0.1], [1.0, 1.0, 1e-9], [0.0, 1.0, 123.456]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn obj_round_trip_is_bit_exact() {
        let m = quad();
        assert_eq!(parse_obj(&format_obj(&m), Path::new("m.obj")).unwrap(), m);
    }

    #[test]
    fn ply_round_trip_is_bit_exact() {
        let m = quad();
        assert_eq!(parse_ply(&format_ply(&m), Path::new("m.ply")).unwrap(), m);
    }

    #[test]
    fn obj_polygons_and_slashes() {
        let text = "# comment\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\n";
        let m = parse_obj(text, Path::new("p.obj")).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        let neg = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", Path::new("n.obj")).unwrap();
        assert_eq!(neg.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn obj_errors_name_the_line() {
        let err = parse_obj("v 0 0 0\nv 1 x 0\n", Path::new("bad.obj")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_obj("v 0 0 0\nf 1 2 3\n", Path::new("bad.obj")).unwrap_err();
        assert!(matches!(err, Error::Data { .. }));
    }

    #[test]
    fn landmark_index_file() {
        let idx = parse_landmark_indices("3\n0\n\n7\n", Path::new("lm.txt")).unwrap();
        assert_eq!(idx.indices(), &[3, 0, 7]);
        assert_eq!(format_landmark_indices(&idx), "3\n0\n7\n");
        let err = parse_landmark_indices("1\n-2\n", Path::new("lm.txt")).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
