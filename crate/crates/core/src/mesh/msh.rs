use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{intern, signed_tri_area, TaggedEdge, TriMesh};
use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Gmsh MSH 2.2 ASCII text. Boundary labels become 1D physical groups,
/// region labels 2D physical groups.
pub fn msh_string(mesh: &TriMesh) -> String {
    let nb = mesh.boundary_labels().len();
    let mut s = String::from("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$PhysicalNames\n");
    let _ = writeln!(s, "{}", nb + mesh.region_labels().len());
    for (i, l) in mesh.boundary_labels().iter().enumerate() {
        let _ = writeln!(s, "1 {} \"{}\"", i + 1, l);
    }
    for (i, l) in mesh.region_labels().iter().enumerate() {
        let _ = writeln!(s, "2 {} \"{}\"", nb + i + 1, l);
    }
    s.push_str("$EndPhysicalNames\n$Nodes\n");
    let _ = writeln!(s, "{}", mesh.vertex_count());
    for (i, p) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(s, "{} {:?} {:?} 0", i + 1, p.x, p.y);
    }
    s.push_str("$EndNodes\n$Elements\n");
    let _ = writeln!(s, "{}", mesh.segments().len() + mesh.triangle_count());
    let mut id = 1;
    for e in mesh.segments() {
        let tag = e.tag as usize + 1;
        let _ = writeln!(s, "{id} 1 2 {tag} {tag} {} {}", e.v[0] + 1, e.v[1] + 1);
        id += 1;
    }
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let tag = nb + mesh.triangle_region_tags()[t] as usize + 1;
        let _ = writeln!(s, "{id} 2 2 {tag} {tag} {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1);
        id += 1;
    }
    s.push_str("$EndElements\n");
    s
}

pub fn write_msh(mesh: &TriMesh, path: &Path) -> Result<()> {
    std::fs::write(path, msh_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn read_msh(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_msh(&text).map_err(|m| Error::parse(path, m))
}

pub fn parse_msh(text: &str) -> std::result::Result<TriMesh, String> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate();
    let mut names: HashMap<i64, (u8, String)> = HashMap::new();
    let mut nodes: HashMap<i64, usize> = HashMap::new();
    let mut vertices: Vec<Point2> = Vec::new();
    let mut lines_el: Vec<(i64, [i64; 2])> = Vec::new();
    let mut tris_el: Vec<(i64, [i64; 3])> = Vec::new();
    let mut saw_format = false;

    let mut next = |what: &str| -> std::result::Result<(usize, &str), String> {
        lines.next().ok_or_else(|| format!("unexpected end of file in {what}"))
    };
    loop {
        let (ln, head) = match next("header") {
            Ok(x) => x,
            Err(_) => break,
        };
        match head {
            "$MeshFormat" => {
                let (ln, v) = next("$MeshFormat")?;
                let mut f = v.split_whitespace();
                let ver = f.next().unwrap_or("");
                if !ver.starts_with("2.") {
                    return Err(format!("line {}: unsupported MSH version {ver}", ln + 1));
                }
                if f.next() != Some("0") {
                    return Err(format!("line {}: only ASCII MSH is supported", ln + 1));
                }
                expect_end(next("$MeshFormat")?, "$EndMeshFormat")?;
                saw_format = true;
            }
            "$PhysicalNames" => {
                let n = parse_count(next("$PhysicalNames")?)?;
                for _ in 0..n {
                    let (ln, l) = next("$PhysicalNames")?;
                    let mut f = l.splitn(3, char::is_whitespace);
                    let dim: u8 = parse_field(f.next(), ln)?;
                    let tag: i64 = parse_field(f.next(), ln)?;
                    let name = f.next().unwrap_or("").trim().trim_matches('"').to_string();
                    names.insert(tag, (dim, name));
                }
                expect_end(next("$PhysicalNames")?, "$EndPhysicalNames")?;
            }
            "$Nodes" => {
                let n = parse_count(next("$Nodes")?)?;
                for _ in 0..n {
                    let (ln, l) = next("$Nodes")?;
                    let mut f = l.split_whitespace();
                    let id: i64 = parse_field(f.next(), ln)?;
                    let x: f64 = parse_field(f.next(), ln)?;
                    let y: f64 = parse_field(f.next(), ln)?;
                    if !(x.is_finite() && y.is_finite()) {
                        return Err(format!("line {}: non-finite coordinate", ln + 1));
                    }
                    nodes.insert(id, vertices.len());
                    vertices.push(Point2::new(x, y));
                }
                expect_end(next("$Nodes")?, "$EndNodes")?;
            }
            "$Elements" => {
                let n = parse_count(next("$Elements")?)?;
                for _ in 0..n {
                    let (ln, l) = next("$Elements")?;
                    let f: Vec<i64> = l
                        .split_whitespace()
                        .map(|x| x.parse::<i64>().map_err(|_| format!("line {}: bad integer '{x}'", ln + 1)))
                        .collect::<std::result::Result<_, _>>()?;
                    if f.len() < 3 {
                        return Err(format!("line {}: short element record", ln + 1));
                    }
                    let (ty, ntags) = (f[1], f[2] as usize);
                    let phys = if ntags > 0 { f.get(3).copied().unwrap_or(0) } else { 0 };
                    let nodes_at = 3 + ntags;
                    match ty {
                        1 if f.len() >= nodes_at + 2 => lines_el.push((phys, [f[nodes_at], f[nodes_at + 1]])),
                        2 if f.len() >= nodes_at + 3 => {
                            tris_el.push((phys, [f[nodes_at], f[nodes_at + 1], f[nodes_at + 2]]))
                        }
                        1 | 2 => return Err(format!("line {}: short element record", ln + 1)),
                        _ => {}
                    }
                }
                expect_end(next("$Elements")?, "$EndElements")?;
            }
            other if other.starts_with('$') && !other.starts_with("$End") => {
                let end = format!("$End{}", &other[1..]);
                loop {
                    let (_, l) = next(other)?;
                    if l == end {
                        break;
                    }
                }
            }
            other => return Err(format!("line {}: unexpected '{other}'", ln + 1)),
        }
    }
    if !saw_format {
        return Err("missing $MeshFormat section".into());
    }
    if tris_el.is_empty() {
        return Err("no triangle elements".into());
    }
    let node = |id: i64| nodes.get(&id).copied().ok_or_else(|| format!("unknown node {id}"));
    let name_of = |tag: i64, dim: u8, fallback: &str| match names.get(&tag) {
        Some((d, n)) if *d == dim => n.clone(),
        _ if tag == 0 => fallback.to_string(),
        _ => format!("{fallback}{tag}"),
    };
    let mut named: Vec<(&i64, &(u8, String))> = names.iter().collect();
    named.sort();
    let mut region_labels = Vec::new();
    let mut boundary_labels = Vec::new();
    for (_, (dim, name)) in named {
        match dim {
            1 => {
                intern(&mut boundary_labels, name);
            }
            2 => {
                intern(&mut region_labels, name);
            }
            _ => {}
        }
    }
    let mut triangles = Vec::with_capacity(tris_el.len());
    let mut regions = Vec::with_capacity(tris_el.len());
    for (phys, v) in &tris_el {
        let mut t = [node(v[0])?, node(v[1])?, node(v[2])?];
        if signed_tri_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
        triangles.push(t);
        regions.push(intern(&mut region_labels, &name_of(*phys, 2, "region")));
    }
    let mut segments = Vec::with_capacity(lines_el.len());
    for (phys, v) in &lines_el {
        let tag = intern(&mut boundary_labels, &name_of(*phys, 1, "boundary"));
        segments.push(TaggedEdge { v: [node(v[0])?, node(v[1])?], tag });
    }
    let mut vtag = vec![None; vertices.len()];
    for s in &segments {
        for &v in &s.v {
            vtag[v].get_or_insert(s.tag);
        }
    }
    TriMesh::from_parts(vertices, triangles, vtag, regions, boundary_labels, region_labels, segments)
        .map_err(|e| e.to_string())
}

fn parse_count((ln, l): (usize, &str)) -> std::result::Result<usize, String> {
    l.parse().map_err(|_| format!("line {}: expected a count, got '{l}'", ln + 1))
}

fn parse_field<T: std::str::FromStr>(f: Option<&str>, ln: usize) -> std::result::Result<T, String> {
    f.and_then(|x| x.parse().ok())
        .ok_or_else(|| format!("line {}: malformed record", ln + 1))
}

fn expect_end((ln, l): (usize, &str), end: &str) -> std::result::Result<(), String> {
    if l == end {
        Ok(())
    } else {
        Err(format!("line {}: expected {end}, got '{l}'", ln + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_mesh() {
        let m = TriMesh::rectangle(0.0, 0.0, 1.0, 0.5, 3, 2).unwrap();
        let back = parse_msh(&msh_string(&m)).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.boundary_labels(), m.boundary_labels());
        assert_eq!(back.region_labels(), m.region_labels());
        assert_eq!(back.segments(), m.segments());
    }

    #[test]
    fn reads_minimal_gmsh_output() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n$EndNodes\n\
                    $Elements\n3\n1 15 2 0 1 1\n2 2 2 7 1 1 3 2\n3 2 2 7 1 1 4 3\n$EndElements\n";
        let m = parse_msh(text).unwrap();
        assert_eq!(m.triangle_count(), 2);
        assert!((m.area() - 1.0).abs() < 1e-15);
        assert_eq!(m.region_labels(), &["region7".to_string()]);
        assert_eq!(m.boundary_edges().len(), 4);
    }

    #[test]
    fn rejects_binary_and_truncated() {
        assert!(parse_msh("$MeshFormat\n2.2 1 8\n$EndMeshFormat\n").is_err());
        assert!(parse_msh("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n3\n1 0 0 0\n").is_err());
        assert!(parse_msh("").is_err());
    }
}
