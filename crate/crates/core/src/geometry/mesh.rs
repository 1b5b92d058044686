use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cross, dot, norm, sub, Point};
use crate::error::{contract_err, Error, Result};

/// Triangle mesh in unit-cube coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return contract_err(format!("face {f:?} indexes past {} vertices", vertices.len()));
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    fn corners(&self, f: &[usize; 3]) -> [Point; 3] {
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    fn face_cross(&self, f: &[usize; 3]) -> Point {
        let [a, b, c] = self.corners(f);
        cross(sub(b, a), sub(c, a))
    }

    pub fn face_areas(&self) -> Vec<f64> {
        self.faces.iter().map(|f| 0.5 * norm(self.face_cross(f))).collect()
    }

    pub fn area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    /// Positive when faces wind counter-clockwise seen from outside.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = self.corners(f);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Number of faces around each undirected edge.
    pub fn edge_use(&self) -> HashMap<(usize, usize), usize> {
        let mut uses = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        uses
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_use().values().all(|&n| n == 2)
    }

    /// Each directed edge appears once, so neighbouring faces agree on winding.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.faces.len() * 3);
        self.faces
            .iter()
            .all(|f| (0..3).all(|e| seen.insert((f[e], f[(e + 1) % 3]))))
    }

    /// `V − E + F` counting every stored vertex.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_use().len() as i64 + self.faces.len() as i64
    }

    pub fn flip(&mut self) {
        for f in &mut self.faces {
            f.swap(1, 2);
        }
    }

    /// Area-weighted uniform samples; an empty mesh yields `n` copies of the
    /// cube centre.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cdf = self.area_cdf();
        (0..n)
            .map(|_| match &cdf {
                Some(cdf) => self.point_on(cdf, &mut rng).0,
                None => [0.5; 3],
            })
            .collect()
    }

    pub(crate) fn sample_surface_with_normal<R: Rng + ?Sized>(&self, rng: &mut R) -> (Point, Point) {
        match self.area_cdf() {
            Some(cdf) => self.point_on(&cdf, rng),
            None => ([0.5; 3], [0.0, 0.0, 1.0]),
        }
    }

    fn area_cdf(&self) -> Option<Vec<f64>> {
        let mut acc = 0.0;
        let cdf: Vec<f64> = self
            .face_areas()
            .into_iter()
            .map(|a| {
                acc += a;
                acc
            })
            .collect();
        (acc > 0.0).then_some(cdf)
    }

    fn point_on<R: Rng + ?Sized>(&self, cdf: &[f64], rng: &mut R) -> (Point, Point) {
        let total = *cdf.last().unwrap();
        let t = rng.random::<f64>() * total;
        let fi = cdf.partition_point(|&c| c <= t).min(cdf.len() - 1);
        let [a, b, c] = self.corners(&self.faces[fi]);
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = [
            a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
            a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
            a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2]),
        ];
        let n = self.face_cross(&self.faces[fi]);
        let l = norm(n).max(1e-300);
        (p, [n[0] / l, n[1] / l, n[2] / l])
    }

    /// Uniformly rescales and recentres so the bounding box fits in
    /// `[margin, 1 − margin]³`.
    pub fn normalize_to_unit_cube(&mut self, margin: f64) {
        if self.vertices.is_empty() {
            return;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let scale = if extent > 0.0 { (1.0 - 2.0 * margin) / extent } else { 1.0 };
        for v in &mut self.vertices {
            for a in 0..3 {
                v[a] = 0.5 + (v[a] - 0.5 * (lo[a] + hi[a])) * scale;
            }
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn to_off(&self) -> String {
        let mut s = format!("OFF\n{} {} 0\n", self.vertices.len(), self.faces.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
        }
        s
    }

    /// Triangle-only Wavefront OBJ. Texture and normal references in face
    /// tokens are ignored; negative indices count from the end.
    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = line.split('#').next().unwrap_or("");
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let xyz: Vec<&str> = tok.collect();
                    if xyz.len() < 3 {
                        return parse_err(line_no, "vertex needs three coordinates");
                    }
                    vertices.push([
                        parse_f64(xyz[0], line_no)?,
                        parse_f64(xyz[1], line_no)?,
                        parse_f64(xyz[2], line_no)?,
                    ]);
                }
                Some("f") => {
                    let refs: Vec<&str> = tok.collect();
                    if refs.len() != 3 {
                        return parse_err(line_no, format!("expected a triangle, got {} vertices", refs.len()));
                    }
                    let mut f = [0usize; 3];
                    for (slot, r) in f.iter_mut().zip(refs) {
                        let head = r.split('/').next().unwrap_or("");
                        let idx: i64 = head
                            .parse()
                            .map_err(|_| Error::Parse { line: line_no, msg: format!("bad face index {r:?}") })?;
                        let resolved = if idx > 0 {
                            idx - 1
                        } else if idx < 0 {
                            vertices.len() as i64 + idx
                        } else {
                            -1
                        };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return parse_err(line_no, format!("face index {idx} out of range"));
                        }
                        *slot = resolved as usize;
                    }
                    faces.push(f);
                }
                _ => {}
            }
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn parse_off(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line_no, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
        let mut counts_line = None;
        if header != "OFF" {
            match header.strip_prefix("OFF") {
                Some(rest) if rest.starts_with(char::is_whitespace) => counts_line = Some((line_no, rest.trim())),
                _ => return parse_err(line_no, "missing OFF header"),
            }
        }
        let (cl, counts) = match counts_line {
            Some(c) => c,
            None => lines.next().ok_or(Error::Parse { line: line_no + 1, msg: "missing counts".into() })?,
        };
        let nums: Vec<&str> = counts.split_whitespace().collect();
        if nums.len() < 2 {
            return parse_err(cl, "counts line needs vertex and face counts");
        }
        let nv = parse_usize(nums[0], cl)?;
        let nf = parse_usize(nums[1], cl)?;
        let mut vertices = Vec::with_capacity(nv);
        let mut faces = Vec::with_capacity(nf);
        let mut last = cl;
        for _ in 0..nv {
            let (ln, l) = lines.next().ok_or(Error::Parse { line: last + 1, msg: "unexpected end of vertex list".into() })?;
            last = ln;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() < 3 {
                return parse_err(ln, "vertex needs three coordinates");
            }
            vertices.push([parse_f64(t[0], ln)?, parse_f64(t[1], ln)?, parse_f64(t[2], ln)?]);
        }
        for _ in 0..nf {
            let (ln, l) = lines.next().ok_or(Error::Parse { line: last + 1, msg: "unexpected end of face list".into() })?;
            last = ln;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.first() != Some(&"3") || t.len() < 4 {
                return parse_err(ln, "only triangles are supported");
            }
            let mut f = [0usize; 3];
            for (slot, s) in f.iter_mut().zip(&t[1..4]) {
                *slot = parse_usize(s, ln)?;
                if *slot >= nv {
                    return parse_err(ln, format!("face index {slot} out of range"));
                }
            }
            faces.push(f);
        }
        Ok(Mesh { vertices, faces })
    }
}

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse { line, msg: format!("bad number {s:?}") })
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse { line, msg: format!("bad count or index {s:?}") })
}

fn is_off(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("off"))
}

/// Reads `.off` files as OFF and anything else as OBJ.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if is_off(path) {
        Mesh::parse_off(&text)
    } else {
        Mesh::parse_obj(&text)
    }
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = if is_off(path) { mesh.to_off() } else { mesh.to_obj() };
    std::fs::write(path, text)?;
    Ok(())
}
