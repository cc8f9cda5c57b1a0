//! TetGen-style `.node`/`.ele` and Wavefront OBJ (vertices + triangles).

use std::fmt::Write as _;

use super::MeshError;
use crate::Vec3;

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let body = line.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = body.split_whitespace().collect();
        (!tokens.is_empty()).then_some((i + 1, tokens))
    })
}

fn parse<T: std::str::FromStr>(line: usize, token: &str) -> Result<T, MeshError> {
    token.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("cannot parse `{token}`"),
    })
}

/// Parses a node file and an element file into positions and 0-based tets.
///
/// Node numbering may start at 0 or 1; the base is the minimum node index and
/// element references are shifted by the same base.
pub fn read_tetgen(node_text: &str, ele_text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 4]>), MeshError> {
    let mut lines = data_lines(node_text);
    let (hline, header) = lines.next().ok_or(MeshError::Parse {
        line: 0,
        message: "empty node file".into(),
    })?;
    if header.len() < 2 {
        return Err(MeshError::Parse {
            line: hline,
            message: "node header must be `N 3`".into(),
        });
    }
    let n: usize = parse(hline, header[0])?;
    let dim: usize = parse(hline, header[1])?;
    if dim != 3 {
        return Err(MeshError::Parse {
            line: hline,
            message: format!("expected dimension 3, got {dim}"),
        });
    }
    let mut nodes = Vec::with_capacity(n);
    for (line, tok) in lines.by_ref().take(n) {
        if tok.len() < 4 {
            return Err(MeshError::Parse {
                line,
                message: "node line needs `index x y z`".into(),
            });
        }
        let idx: usize = parse(line, tok[0])?;
        let p = Vec3::new(parse(line, tok[1])?, parse(line, tok[2])?, parse(line, tok[3])?);
        nodes.push((line, idx, p));
    }
    if nodes.len() != n {
        return Err(MeshError::Parse {
            line: hline,
            message: format!("header declares {n} nodes, found {}", nodes.len()),
        });
    }
    let base = nodes.iter().map(|n| n.1).min().unwrap_or(0);
    let mut positions = vec![None; n];
    for (line, idx, p) in nodes {
        let slot = idx.checked_sub(base).filter(|&s| s < n).ok_or(MeshError::Parse {
            line,
            message: format!("node index {idx} out of range"),
        })?;
        if positions[slot].replace(p).is_some() {
            return Err(MeshError::Parse {
                line,
                message: format!("duplicate node index {idx}"),
            });
        }
    }
    let positions: Vec<Vec3> = positions.into_iter().map(|p| p.expect("all slots filled")).collect();

    let mut lines = data_lines(ele_text);
    let (hline, header) = lines.next().ok_or(MeshError::Parse {
        line: 0,
        message: "empty element file".into(),
    })?;
    if header.len() < 2 {
        return Err(MeshError::Parse {
            line: hline,
            message: "element header must be `M 4`".into(),
        });
    }
    let m: usize = parse(hline, header[0])?;
    let per: usize = parse(hline, header[1])?;
    if per != 4 {
        return Err(MeshError::Parse {
            line: hline,
            message: format!("only 4-node tets are supported, got {per}"),
        });
    }
    let mut tets = Vec::with_capacity(m);
    for (line, tok) in lines.take(m) {
        if tok.len() < 5 {
            return Err(MeshError::Parse {
                line,
                message: "element line needs `index v0 v1 v2 v3`".into(),
            });
        }
        let mut t = [0usize; 4];
        for k in 0..4 {
            let v: usize = parse(line, tok[k + 1])?;
            t[k] = v.checked_sub(base).ok_or(MeshError::Parse {
                line,
                message: format!("vertex reference {v} below index base {base}"),
            })?;
        }
        tets.push(t);
    }
    if tets.len() != m {
        return Err(MeshError::Parse {
            line: hline,
            message: format!("header declares {m} elements, found {}", tets.len()),
        });
    }
    Ok((positions, tets))
}

/// Writes 0-based `.node` and `.ele` texts.
pub fn write_tetgen(positions: &[Vec3], tets: &[[usize; 4]]) -> (String, String) {
    let mut node = format!("{} 3\n", positions.len());
    for (i, p) in positions.iter().enumerate() {
        let _ = writeln!(node, "{i} {} {} {}", p.x, p.y, p.z);
    }
    let mut ele = format!("{} 4\n", tets.len());
    for (i, t) in tets.iter().enumerate() {
        let _ = writeln!(ele, "{i} {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    (node, ele)
}

/// Reads `v` and triangular `f` records; other records are ignored.
pub fn read_obj(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>), MeshError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (line, tok) in data_lines(text) {
        match tok[0] {
            "v" => {
                if tok.len() < 4 {
                    return Err(MeshError::Parse {
                        line,
                        message: "vertex needs three coordinates".into(),
                    });
                }
                vertices.push(Vec3::new(
                    parse(line, tok[1])?,
                    parse(line, tok[2])?,
                    parse(line, tok[3])?,
                ));
            }
            "f" => {
                if tok.len() != 4 {
                    return Err(MeshError::Parse {
                        line,
                        message: format!("only triangles are supported, face has {} corners", tok.len() - 1),
                    });
                }
                let mut f = [0usize; 3];
                for k in 0..3 {
                    let head = tok[k + 1].split('/').next().unwrap_or("");
                    let raw: i64 = parse(line, head)?;
                    let idx = if raw > 0 { raw - 1 } else { vertices.len() as i64 + raw };
                    if idx < 0 {
                        return Err(MeshError::Parse {
                            line,
                            message: format!("face index {raw} out of range"),
                        });
                    }
                    f[k] = idx as usize;
                }
                triangles.push(f);
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

/// Writes positions with shortest round-trip formatting and 1-based faces.
pub fn write_obj(vertices: &[Vec3], triangles: &[[usize; 3]]) -> String {
    let mut s = String::with_capacity(vertices.len() * 40 + triangles.len() * 20);
    for p in vertices {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for t in triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}
