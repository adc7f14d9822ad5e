//! Triangle meshes, their text format and built-in generators.
//!
//! Text format (whitespace separated, 0-based indices):
//!
//! ```text
//! NODES n
//! x y            (n lines)
//! TRIS m
//! a b c          (m lines)
//! BOUNDARY k
//! loop_id node   (k lines, in traversal order)
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Ordered node lists, one per closed boundary component.
    pub boundary_loops: Vec<Vec<usize>>,
}

fn mesh_err(msg: impl Into<String>) -> Error {
    Error::Mesh(msg.into())
}

pub fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Mesh {
    /// Validates the mesh and orients every triangle counterclockwise.
    pub fn new(nodes: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>, boundary_loops: Vec<Vec<usize>>) -> Result<Self> {
        let n = nodes.len();
        if nodes.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(mesh_err("non-finite node coordinate"));
        }
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(mesh_err(format!("triangle {t} references a node outside 0..{n}")));
            }
            let a = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if a.abs() < 1e-14 {
                return Err(mesh_err(format!("triangle {t} is degenerate (area {a:.3e})")));
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }
        let mut seen = vec![false; n];
        for (l, lp) in boundary_loops.iter().enumerate() {
            if lp.len() < 3 {
                return Err(mesh_err(format!("boundary loop {l} has fewer than 3 nodes")));
            }
            for &v in lp {
                if v >= n {
                    return Err(mesh_err(format!("boundary loop {l} references node {v}")));
                }
                if seen[v] {
                    return Err(mesh_err(format!("node {v} appears twice on the boundary")));
                }
                seen[v] = true;
            }
        }
        if boundary_loops.is_empty() {
            return Err(mesh_err("mesh has no boundary"));
        }
        Ok(Mesh {
            nodes,
            triangles,
            boundary_loops,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Boundary nodes, loops concatenated in order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.boundary_loops.iter().flatten().copied().collect()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary_loops.iter().map(Vec::len).sum()
    }

    pub fn is_boundary_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_nodes()];
        for v in self.boundary_nodes() {
            m[v] = true;
        }
        m
    }

    /// Longest triangle edge.
    pub fn max_edge(&self) -> f64 {
        let len = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        self.triangles
            .iter()
            .flat_map(|t| {
                let p = t.map(|v| self.nodes[v]);
                [len(p[0], p[1]), len(p[1], p[2]), len(p[2], p[0])]
            })
            .fold(0.0, f64::max)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tk = Tokens {
            items: text.split_whitespace(),
        };
        let n = tk.section("NODES")?;
        let mut nodes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            nodes.push([tk.num("coordinate")?, tk.num("coordinate")?]);
        }
        let m = tk.section("TRIS")?;
        let mut tris = Vec::with_capacity(m.min(1 << 20));
        for _ in 0..m {
            tris.push([tk.num("index")?, tk.num("index")?, tk.num("index")?]);
        }
        let k = tk.section("BOUNDARY")?;
        let mut loops: Vec<(usize, Vec<usize>)> = Vec::new();
        for _ in 0..k {
            let id: usize = tk.num("loop id")?;
            let v: usize = tk.num("node")?;
            match loops.iter_mut().find(|(l, _)| *l == id) {
                Some((_, lp)) => lp.push(v),
                None => loops.push((id, vec![v])),
            }
        }
        if let Some(extra) = tk.items.next() {
            return Err(mesh_err(format!("trailing token '{extra}'")));
        }
        loops.sort_by_key(|(id, _)| *id);
        Mesh::new(nodes, tris, loops.into_iter().map(|(_, l)| l).collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "NODES {}", self.nodes.len()).unwrap();
        for p in &self.nodes {
            writeln!(s, "{:?} {:?}", p[0], p[1]).unwrap();
        }
        writeln!(s, "TRIS {}", self.triangles.len()).unwrap();
        for t in &self.triangles {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        writeln!(s, "BOUNDARY {}", self.n_boundary()).unwrap();
        for (l, lp) in self.boundary_loops.iter().enumerate() {
            for v in lp {
                writeln!(s, "{l} {v}").unwrap();
            }
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Mesh::parse(&std::fs::read_to_string(path)?)
    }

    /// Resolves `builtin:square:<n>`, `builtin:star:<rays>:<rings>` or a file path.
    pub fn from_source(source: &str) -> Result<Self> {
        let Some(rest) = source.strip_prefix("builtin:") else {
            return Mesh::load(source);
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let arg = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| mesh_err(format!("bad builtin mesh '{source}'")))
        };
        match parts[0] {
            "square" if parts.len() == 2 => structured_square(arg(1)?),
            "star" if parts.len() == 3 => star(arg(1)?, arg(2)?),
            _ => Err(mesh_err(format!("unknown builtin mesh '{source}'"))),
        }
    }
}

struct Tokens<'a> {
    items: std::str::SplitWhitespace<'a>,
}

impl Tokens<'_> {
    fn num<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let s = self
            .items
            .next()
            .ok_or_else(|| mesh_err(format!("unexpected end of file reading {what}")))?;
        s.parse().map_err(|_| mesh_err(format!("bad {what} '{s}'")))
    }

    fn section(&mut self, key: &str) -> Result<usize> {
        match self.items.next() {
            Some(k) if k == key => self.num("count"),
            other => Err(mesh_err(format!("expected '{key}', found {other:?}"))),
        }
    }
}

/// Unit square, `n × n` nodes, each cell split along its rising diagonal.
/// The boundary loop follows the 2-D grid ordering.
pub fn structured_square(n: usize) -> Result<Mesh> {
    if n < 2 {
        return Err(mesh_err("structured square needs n >= 2"));
    }
    let h = 1.0 / (n - 1) as f64;
    let id = |ix: usize, iy: usize| iy * n + ix;
    let nodes = (0..n * n).map(|k| [(k % n) as f64 * h, (k / n) as f64 * h]).collect();
    let mut tris = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for iy in 0..n - 1 {
        for ix in 0..n - 1 {
            tris.push([id(ix, iy), id(ix + 1, iy), id(ix + 1, iy + 1)]);
            tris.push([id(ix, iy), id(ix + 1, iy + 1), id(ix, iy + 1)]);
        }
    }
    let grid = super::grid::Grid::square(n)?;
    Mesh::new(nodes, tris, vec![grid.boundary_nodes()])
}

/// Five-pointed star-shaped domain `r(θ) ≤ 0.5(1 + 0.3 cos 5θ)` centred at
/// (0.5, 0.5), meshed by `rings` concentric rings of `rays` nodes.
pub fn star(rays: usize, rings: usize) -> Result<Mesh> {
    if rays < 5 || rings < 1 {
        return Err(mesh_err("star mesh needs rays >= 5 and rings >= 1"));
    }
    let mut nodes = vec![[0.5, 0.5]];
    for j in 1..=rings {
        let s = j as f64 / rings as f64;
        for i in 0..rays {
            let th = 2.0 * PI * i as f64 / rays as f64;
            let r = 0.5 * (1.0 + 0.3 * (5.0 * th).cos()) * s;
            nodes.push([0.5 + r * th.cos(), 0.5 + r * th.sin()]);
        }
    }
    let ring = |j: usize, i: usize| 1 + (j - 1) * rays + i % rays;
    let mut tris = Vec::new();
    for i in 0..rays {
        tris.push([0, ring(1, i), ring(1, i + 1)]);
    }
    for j in 1..rings {
        for i in 0..rays {
            let (a, b) = (ring(j, i), ring(j, i + 1));
            let (c, d) = (ring(j + 1, i), ring(j + 1, i + 1));
            tris.push([a, c, d]);
            tris.push([a, d, b]);
        }
    }
    let boundary = (0..rays).map(|i| ring(rings, i)).collect();
    Mesh::new(nodes, tris, vec![boundary])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let m = structured_square(4).unwrap();
        let back = Mesh::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]];
        let err = Mesh::new(nodes, vec![[0, 1, 2]], vec![vec![0, 1, 3]]).unwrap_err();
        assert!(matches!(err, Error::Mesh(_)));
    }

    #[test]
    fn orientation_is_fixed() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let m = Mesh::new(nodes, vec![[0, 2, 1]], vec![vec![0, 1, 2]]).unwrap();
        let t = m.triangles[0];
        assert!(signed_area(m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]]) > 0.0);
    }

    #[test]
    fn builtins() {
        let s = Mesh::from_source("builtin:square:5").unwrap();
        assert_eq!(s.n_nodes(), 25);
        assert_eq!(s.triangles.len(), 32);
        let st = Mesh::from_source("builtin:star:40:6").unwrap();
        assert_eq!(st.n_nodes(), 1 + 240);
        assert_eq!(st.n_boundary(), 40);
        let area: f64 = st
            .triangles
            .iter()
            .map(|t| signed_area(st.nodes[t[0]], st.nodes[t[1]], st.nodes[t[2]]))
            .sum();
        assert!(area > 0.5 && area < 1.0);
        assert!(Mesh::from_source("builtin:hex:3").is_err());
    }

    #[test]
    fn malformed_text() {
        assert!(Mesh::parse("NODES 2\n0 0\n").is_err());
        assert!(Mesh::parse("TRIS 0").is_err());
    }
}
