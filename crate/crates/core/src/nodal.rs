//! Planar zero sets on grids: component counts, sublevel Betti numbers,
//! condition numbers `κ_ℓ`, the reach-based defining equation, the sharp
//! family, semicontinuity checks and Chebyshev approximation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gaussian::RngStream;
use crate::kostlan::HomogeneousPolyMap;

/// A scalar field on the plane, optionally with an analytic gradient.
pub trait ScalarField: Sync + Send {
    fn value(&self, x: f64, y: f64) -> f64;

    fn gradient(&self, _x: f64, _y: f64) -> Option<[f64; 2]> {
        None
    }
}

impl<F: Fn(f64, f64) -> f64 + Sync + Send> ScalarField for F {
    fn value(&self, x: f64, y: f64) -> f64 {
        self(x, y)
    }
}

/// A closure pair `(f, ∇f)`.
pub struct WithGradient<F, G>(pub F, pub G);

impl<F, G> ScalarField for WithGradient<F, G>
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
    G: Fn(f64, f64) -> [f64; 2] + Sync + Send,
{
    fn value(&self, x: f64, y: f64) -> f64 {
        (self.0)(x, y)
    }

    fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        Some((self.1)(x, y))
    }
}

impl<T: ScalarField + ?Sized> ScalarField for Arc<T> {
    fn value(&self, x: f64, y: f64) -> f64 {
        (**self).value(x, y)
    }

    fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        (**self).gradient(x, y)
    }
}

/// `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn square(r: f64) -> Self {
        Self::new(-r, r, -r, r)
    }
}

/// Node values on a uniform grid; `values[j * nx + i]` sits at `(x0 + i h, y0 + j h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub rect: Rect,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub gradients: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct GridJson {
    #[serde(rename = "box")]
    rect: [f64; 4],
    h: f64,
    values: Vec<Vec<f64>>,
}

impl GridFunction {
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.rect.x0 + i as f64 * self.h, self.rect.y0 + j as f64 * self.h]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// JSON `{box: [x0, x1, y0, y1], h, values}` with one row per `y`.
    pub fn to_json(&self) -> String {
        let values = self.values.chunks(self.nx).map(|r| r.to_vec()).collect();
        let r = self.rect;
        serde_json::to_string(&GridJson {
            rect: [r.x0, r.x1, r.y0, r.y1],
            h: self.h,
            values,
        })
        .expect("grid serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: GridJson = serde_json::from_str(s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let ny = g.values.len();
        let nx = g.values.first().map(|r| r.len()).unwrap_or(0);
        if nx < 2 || ny < 2 || g.values.iter().any(|r| r.len() != nx) || !(g.h > 0.0) {
            return Err(Error::InvalidArgument("ragged or empty grid".into()));
        }
        let rect = Rect::new(g.rect[0], g.rect[1], g.rect[2], g.rect[3]);
        check_shape(&rect, g.h, nx, ny)?;
        Ok(Self {
            rect,
            h: g.h,
            nx,
            ny,
            values: g.values.concat(),
            gradients: None,
        })
    }
}

fn nodes_along(len: f64, h: f64) -> Result<usize> {
    let n = len / h;
    if !(h > 0.0) || !(len > 0.0) || (n - n.round()).abs() > 1e-6 * n.max(1.0) {
        return Err(Error::InvalidArgument(format!("spacing {h} does not divide length {len}")));
    }
    Ok(n.round() as usize + 1)
}

fn check_shape(rect: &Rect, h: f64, nx: usize, ny: usize) -> Result<()> {
    let ex = nodes_along(rect.x1 - rect.x0, h).unwrap_or(0);
    let ey = nodes_along(rect.y1 - rect.y0, h).unwrap_or(0);
    if ex.abs_diff(nx) > 1 || ey.abs_diff(ny) > 1 {
        return Err(Error::InvalidArgument("grid shape does not match box and spacing".into()));
    }
    Ok(())
}

/// Samples `f` and its gradient on the grid; central differences with step
/// `h` stand in for a missing analytic gradient.
pub fn sample_grid<F: ScalarField + ?Sized>(f: &F, rect: Rect, h: f64) -> Result<GridFunction> {
    let nx = nodes_along(rect.x1 - rect.x0, h)?;
    let ny = nodes_along(rect.y1 - rect.y0, h)?;
    let rows: Vec<Result<Vec<(f64, [f64; 2])>>> = (0..ny)
        .into_par_iter()
        .map(|j| {
            let y = rect.y0 + j as f64 * h;
            (0..nx)
                .map(|i| {
                    let x = rect.x0 + i as f64 * h;
                    let v = f.value(x, y);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteValue(x, y));
                    }
                    let g = f.gradient(x, y).unwrap_or_else(|| {
                        [
                            (f.value(x + h, y) - f.value(x - h, y)) / (2.0 * h),
                            (f.value(x, y + h) - f.value(x, y - h)) / (2.0 * h),
                        ]
                    });
                    Ok((v, g))
                })
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(nx * ny);
    let mut grads = Vec::with_capacity(nx * ny);
    for row in rows {
        for (v, g) in row? {
            values.push(v);
            grads.push(g);
        }
    }
    Ok(GridFunction {
        rect,
        h,
        nx,
        ny,
        values,
        gradients: Some(grads),
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Zero-set polyline pieces from marching squares.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourSet {
    pub segments: Vec<[[f64; 2]; 2]>,
    /// Crossed-edge ids of each segment's endpoints.
    pub segment_edges: Vec<[usize; 2]>,
    /// Component label per segment, `0..components`.
    pub labels: Vec<usize>,
    pub components: usize,
    /// No node value within `1e-9·ν₀` of zero.
    pub transversal: bool,
}

impl ContourSet {
    /// CSV `x0,y0,x1,y1,component`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x0,y0,x1,y1,component\n");
        for (s, l) in self.segments.iter().zip(&self.labels) {
            out.push_str(&format!("{},{},{},{},{}\n", s[0][0], s[0][1], s[1][0], s[1][1], l));
        }
        out
    }
}

/// Node values with exact zeros pushed to `+1e-12·ν₀`, and the transversality flag.
fn signed_values(g: &GridFunction) -> (Vec<f64>, bool) {
    let nu0 = g.sup_norm();
    let transversal = g.values.iter().all(|v| v.abs() >= 1e-9 * nu0);
    let bump = if nu0 > 0.0 { 1e-12 * nu0 } else { 1e-300 };
    (g.values.iter().map(|&v| if v == 0.0 { bump } else { v }).collect(), transversal)
}

/// Connected components of the zero set via marching squares.
///
/// Saddle cells are resolved by the sign of the mean of the four corners.
pub fn marching_squares_components(g: &GridFunction) -> ContourSet {
    let (v, transversal) = signed_values(g);
    let (nx, ny) = (g.nx, g.ny);
    let horizontal = (nx - 1) * ny;
    let hid = |i: usize, j: usize| j * (nx - 1) + i;
    let vid = |i: usize, j: usize| horizontal + j * nx + i;
    let val = |i: usize, j: usize| v[j * nx + i];
    let crossing = |a: (usize, usize), b: (usize, usize)| -> [f64; 2] {
        let (va, vb) = (val(a.0, a.1), val(b.0, b.1));
        let t = va / (va - vb);
        let pa = g.point(a.0, a.1);
        let pb = g.point(b.0, b.1);
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };
    let mut segments = Vec::new();
    let mut segment_edges = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let c = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let s: Vec<bool> = c.iter().map(|&(a, b)| val(a, b) > 0.0).collect();
            // bottom, right, top, left
            let edges = [
                (hid(i, j), c[0], c[1]),
                (vid(i + 1, j), c[1], c[2]),
                (hid(i, j + 1), c[3], c[2]),
                (vid(i, j), c[0], c[3]),
            ];
            let crossed: Vec<usize> = (0..4).filter(|&e| s[[0, 1, 3, 0][e]] != s[[1, 2, 2, 3][e]]).collect();
            let pairs: Vec<(usize, usize)> = match crossed.len() {
                2 => vec![(crossed[0], crossed[1])],
                4 => {
                    let mean: f64 = c.iter().map(|&(a, b)| val(a, b)).sum::<f64>() / 4.0;
                    if (mean > 0.0) == s[0] {
                        // corners 0 and 2 joined through the center: cut off corners 1 and 3
                        vec![(0, 1), (2, 3)]
                    } else {
                        vec![(3, 0), (1, 2)]
                    }
                }
                _ => vec![],
            };
            for (a, b) in pairs {
                let (ea, pa0, pa1) = edges[a];
                let (eb, pb0, pb1) = edges[b];
                segments.push([crossing(pa0, pa1), crossing(pb0, pb1)]);
                segment_edges.push([ea, eb]);
            }
        }
    }
    let mut uf = UnionFind::new(horizontal + nx * (ny - 1));
    for e in &segment_edges {
        uf.union(e[0], e[1]);
    }
    let mut ids = HashMap::new();
    let labels = segment_edges
        .iter()
        .map(|e| {
            let r = uf.find(e[0]);
            let n = ids.len();
            *ids.entry(r).or_insert(n)
        })
        .collect();
    ContourSet {
        segments,
        segment_edges,
        labels,
        components: ids.len(),
        transversal,
    }
}

/// `(b₀, b₁)` of the cubical complex spanned by the grid nodes with `f < 0`.
pub fn betti_sublevel(g: &GridFunction) -> (usize, usize) {
    let (v, _) = signed_values(g);
    let (nx, ny) = (g.nx, g.ny);
    let inside = |i: usize, j: usize| v[j * nx + i] < 0.0;
    let mut uf = UnionFind::new(nx * ny);
    let (mut nv, mut ne, mut nf) = (0i64, 0i64, 0i64);
    for j in 0..ny {
        for i in 0..nx {
            if !inside(i, j) {
                continue;
            }
            nv += 1;
            if i + 1 < nx && inside(i + 1, j) {
                ne += 1;
                uf.union(j * nx + i, j * nx + i + 1);
            }
            if j + 1 < ny && inside(i, j + 1) {
                ne += 1;
                uf.union(j * nx + i, (j + 1) * nx + i);
            }
            if i + 1 < nx && j + 1 < ny && inside(i + 1, j) && inside(i, j + 1) && inside(i + 1, j + 1) {
                nf += 1;
            }
        }
    }
    let mut b0 = 0i64;
    for j in 0..ny {
        for i in 0..nx {
            let n = j * nx + i;
            if inside(i, j) && uf.find(n) == n {
                b0 += 1;
            }
        }
    }
    let chi = nv - ne + nf;
    (b0 as usize, (b0 - chi).max(0) as usize)
}

/// Ordered point chains of each component; `true` marks closed loops.
fn polylines(c: &ContourSet) -> Vec<(Vec<[f64; 2]>, bool)> {
    let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, e) in c.segment_edges.iter().enumerate() {
        incident.entry(e[0]).or_default().push(s);
        incident.entry(e[1]).or_default().push(s);
    }
    let mut point_of: HashMap<usize, [f64; 2]> = HashMap::new();
    for (s, e) in c.segments.iter().zip(&c.segment_edges) {
        point_of.insert(e[0], s[0]);
        point_of.insert(e[1], s[1]);
    }
    let mut used = vec![false; c.segments.len()];
    let mut out = Vec::new();
    // Open arcs start at degree-one edges; the remaining segments form loops.
    let mut starts: Vec<usize> = incident.iter().filter(|(_, v)| v.len() == 1).map(|(&e, _)| e).collect();
    starts.sort_unstable();
    let walk = |start_edge: usize, used: &mut Vec<bool>| -> Option<(Vec<[f64; 2]>, bool)> {
        let first = *incident[&start_edge].iter().find(|&&s| !used[s])?;
        let mut pts = vec![point_of[&start_edge]];
        let mut edge = start_edge;
        let mut seg = first;
        loop {
            used[seg] = true;
            let e = c.segment_edges[seg];
            edge = if e[0] == edge { e[1] } else { e[0] };
            if edge == start_edge {
                return Some((pts, true));
            }
            pts.push(point_of[&edge]);
            match incident[&edge].iter().find(|&&s| !used[s]) {
                Some(&next) => seg = next,
                None => return Some((pts, false)),
            }
        }
    };
    for e in starts {
        if let Some(p) = walk(e, &mut used) {
            out.push(p);
        }
    }
    for s in 0..c.segments.len() {
        if !used[s] {
            let e = c.segment_edges[s][0];
            if let Some(p) = walk(e, &mut used) {
                out.push(p);
            }
        }
    }
    out
}

/// Number of local extrema of the height `⟨x, direction⟩` along the contour
/// polylines; endpoints of open arcs count as extrema. Exact ties in height
/// trigger up to five retries with rotated directions.
pub fn critical_count_on_curve(c: &ContourSet, direction: [f64; 2]) -> Result<usize> {
    let lines = polylines(c);
    let norm = (direction[0] * direction[0] + direction[1] * direction[1]).sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument("direction must be nonzero".into()));
    }
    let base = direction[1].atan2(direction[0]);
    'retry: for attempt in 0..=5 {
        let th = base + 0.377 * attempt as f64;
        let (dx, dy) = (th.cos(), th.sin());
        let mut total = 0;
        for (pts, closed) in &lines {
            let hs: Vec<f64> = pts.iter().map(|p| p[0] * dx + p[1] * dy).collect();
            let scale = hs.iter().fold(1.0f64, |m, h| m.max(h.abs()));
            let n = hs.len();
            let diffs: Vec<f64> = if *closed {
                (0..n).map(|i| hs[(i + 1) % n] - hs[i]).collect()
            } else {
                (0..n.saturating_sub(1)).map(|i| hs[i + 1] - hs[i]).collect()
            };
            if diffs.iter().any(|d| d.abs() <= 1e-13 * scale) {
                continue 'retry;
            }
            let m = diffs.len();
            let turns = if *closed {
                (0..m).filter(|&i| (diffs[i] > 0.0) != (diffs[(i + 1) % m] > 0.0)).count()
            } else {
                (0..m.saturating_sub(1)).filter(|&i| (diffs[i] > 0.0) != (diffs[i + 1] > 0.0)).count() + 2
            };
            total += turns;
        }
        return Ok(total);
    }
    Err(Error::TieUnresolved)
}

/// Where `ν`, `δ` are measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Full,
    Disk { cx: f64, cy: f64, r: f64 },
}

impl Region {
    fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Region::Full => true,
            Region::Disk { cx, cy, r } => (p[0] - cx).powi(2) + (p[1] - cy).powi(2) <= r * r,
        }
    }
}

/// Values of `f` on the boundary of the region (`n` points per side or on the circle).
pub fn boundary_values<F: ScalarField + ?Sized>(f: &F, rect: Rect, region: Region, n: usize) -> Vec<f64> {
    match region {
        Region::Full => {
            let mut out = Vec::with_capacity(4 * n);
            for k in 0..=n {
                let t = k as f64 / n as f64;
                let x = rect.x0 + t * (rect.x1 - rect.x0);
                let y = rect.y0 + t * (rect.y1 - rect.y0);
                out.extend([f.value(x, rect.y0), f.value(x, rect.y1), f.value(rect.x0, y), f.value(rect.x1, y)]);
            }
            out
        }
        Region::Disk { cx, cy, r } => (0..n)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                f.value(cx + r * th.cos(), cy + r * th.sin())
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub nu0: f64,
    pub nu1: f64,
    pub margin: f64,
    pub delta: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub h: f64,
}

/// Grid estimates of `ν₀ = sup|f|`, `ν₁ = sup(f² + |∇f|²)^{1/2}`,
/// `δ = inf(f² + |∇f|²)^{1/2}` over the region, the boundary margin
/// `m = min|f|` over `boundary`, and `κ_ℓ = ν_ℓ / min(m, δ)`.
pub fn condition_report(g: &GridFunction, region: Region, boundary: &[f64]) -> Result<ConditionReport> {
    let grads = g.gradients.as_ref().ok_or(Error::MissingGradient)?;
    let (mut nu0, mut nu1, mut delta) = (0.0f64, 0.0f64, f64::INFINITY);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !region.contains(g.point(i, j)) {
                continue;
            }
            let n = j * g.nx + i;
            let v = g.values[n];
            let [gx, gy] = grads[n];
            let r = (v * v + gx * gx + gy * gy).sqrt();
            nu0 = nu0.max(v.abs());
            nu1 = nu1.max(r);
            delta = delta.min(r);
        }
    }
    let margin = boundary.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let denom = margin.min(delta);
    Ok(ConditionReport {
        nu0,
        nu1,
        margin,
        delta,
        kappa0: nu0 / denom,
        kappa1: nu1 / denom,
        h: g.h,
    })
}

/// [`condition_report`] evaluated directly from `f` row by row, without
/// storing the grid.
pub fn condition_report_field<F: ScalarField + ?Sized>(
    f: &F,
    rect: Rect,
    h: f64,
    region: Region,
    boundary: &[f64],
) -> Result<ConditionReport> {
    let nx = nodes_along(rect.x1 - rect.x0, h)?;
    let ny = nodes_along(rect.y1 - rect.y0, h)?;
    let rows: Vec<Result<(f64, f64, f64)>> = (0..ny)
        .into_par_iter()
        .map(|j| {
            let y = rect.y0 + j as f64 * h;
            let (mut nu0, mut nu1, mut delta) = (0.0f64, 0.0f64, f64::INFINITY);
            for i in 0..nx {
                let x = rect.x0 + i as f64 * h;
                if !region.contains([x, y]) {
                    continue;
                }
                let v = f.value(x, y);
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue(x, y));
                }
                let [gx, gy] = f.gradient(x, y).unwrap_or_else(|| {
                    [
                        (f.value(x + h, y) - f.value(x - h, y)) / (2.0 * h),
                        (f.value(x, y + h) - f.value(x, y - h)) / (2.0 * h),
                    ]
                });
                let r = (v * v + gx * gx + gy * gy).sqrt();
                nu0 = nu0.max(v.abs());
                nu1 = nu1.max(r);
                delta = delta.min(r);
            }
            Ok((nu0, nu1, delta))
        })
        .collect();
    let (mut nu0, mut nu1, mut delta) = (0.0f64, 0.0f64, f64::INFINITY);
    for r in rows {
        let (a, b, c) = r?;
        nu0 = nu0.max(a);
        nu1 = nu1.max(b);
        delta = delta.min(c);
    }
    let margin = boundary.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let denom = margin.min(delta);
    Ok(ConditionReport {
        nu0,
        nu1,
        margin,
        delta,
        kappa0: nu0 / denom,
        kappa1: nu1 / denom,
        h,
    })
}

/// `f = g_ρ ∘ d_Z` for a signed distance `d_Z` with reach `ρ`.
///
/// `g_ρ(t) = t` on `[0, ρ/2]`, `3ρ/4` beyond `7ρ/8`, odd; on the bridge
/// `t = ρ/2 + (3ρ/8)s`, `g = ρ/2 + (3ρ/8)(s − s⁵ + ⅔s⁶)`, so
/// `g' = (1 − s)²(1 + 2s + 3s² + 4s³)` and `g'' ∝ −s³(1 − s)`.
pub struct ReachEquation {
    pub rho: f64,
    distance: Box<dyn Fn(f64, f64) -> (f64, [f64; 2]) + Sync + Send>,
}

impl ReachEquation {
    /// `[g, g', g'']` at `t`.
    pub fn bridge(&self, t: f64) -> [f64; 3] {
        let rho = self.rho;
        let a = t.abs();
        let sg = if t < 0.0 { -1.0 } else { 1.0 };
        if a <= rho / 2.0 {
            return [t, 1.0, 0.0];
        }
        if a >= 7.0 * rho / 8.0 {
            return [sg * 0.75 * rho, 0.0, 0.0];
        }
        let w = 3.0 * rho / 8.0;
        let s = (a - rho / 2.0) / w;
        let g = rho / 2.0 + w * (s - s.powi(5) + 2.0 / 3.0 * s.powi(6));
        let g1 = 1.0 - 5.0 * s.powi(4) + 4.0 * s.powi(5);
        let g2 = (-20.0 * s.powi(3) + 20.0 * s.powi(4)) / w;
        [sg * g, g1, sg * g2]
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        (self.distance)(x, y).0
    }
}

impl ScalarField for ReachEquation {
    fn value(&self, x: f64, y: f64) -> f64 {
        self.bridge(self.distance(x, y))[0]
    }

    fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let (d, gd) = (self.distance)(x, y);
        let g1 = self.bridge(d)[1];
        if g1 == 0.0 {
            return Some([0.0, 0.0]);
        }
        Some([g1 * gd[0], g1 * gd[1]])
    }
}

/// Builds `g_ρ ∘ d_Z` and checks the bridge on a `1e-3` grid: `g' ∈ [0, 1]`,
/// `g'' ≤ 1e-9`, and continuity of `g`, `g'` at both junctions.
pub fn reach_equation<D>(distance: D, rho: f64) -> Result<ReachEquation>
where
    D: Fn(f64, f64) -> (f64, [f64; 2]) + Sync + Send + 'static,
{
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument("reach must be positive".into()));
    }
    let eq = ReachEquation {
        rho,
        distance: Box::new(distance),
    };
    let (lo, hi) = (rho / 2.0, 7.0 * rho / 8.0);
    let n = ((hi - lo) / (1e-3 * rho)).ceil() as usize;
    for k in 0..=n {
        let t = lo + (hi - lo) * k as f64 / n as f64;
        let [_, g1, g2] = eq.bridge(t);
        if g2 > 1e-9 || !(-1e-12..=1.0 + 1e-12).contains(&g1) {
            return Err(Error::ConcavityViolation(t));
        }
    }
    let eps = 1e-9 * rho;
    for t in [lo, hi] {
        let (a, b) = (eq.bridge(t - eps), eq.bridge(t + eps));
        if (a[0] - b[0]).abs() > 1e-8 * rho || (a[1] - b[1]).abs() > 1e-6 {
            return Err(Error::ConcavityViolation(t));
        }
    }
    Ok(eq)
}

/// Signed distance to the circle of radius `r` about the origin (negative inside).
pub fn circle_distance(r: f64) -> impl Fn(f64, f64) -> (f64, [f64; 2]) + Sync + Send + 'static {
    move |x, y| {
        let n = (x * x + y * y).sqrt();
        let g = if n > 0.0 { [x / n, y / n] } else { [0.0, 0.0] };
        (n - r, g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundKind {
    /// `d(2d − 1)^{n−1}`.
    MilnorThom { d: u32, n: u32 },
    /// `(a₀κ₁ + 1)^n`.
    Witdash { kappa1: f64, n: u32, a0: f64 },
    /// `c₂(1 + 1/ρ)^n`.
    Reach { rho: f64, n: u32, c2: f64 },
}

pub fn bounds(kind: BoundKind) -> f64 {
    match kind {
        BoundKind::MilnorThom { d, n } => {
            let d = f64::from(d);
            d * (2.0 * d - 1.0).powi(n as i32 - 1)
        }
        BoundKind::Witdash { kappa1, n, a0 } => (a0 * kappa1 + 1.0).powi(n as i32),
        BoundKind::Reach { rho, n, c2 } => c2 * (1.0 + 1.0 / rho).powi(n as i32),
    }
}

/// `1 − 2·S((r₁ − |x|)/(r₁ − r₀))` with the quintic smoothstep `S`: `−1` on
/// the disk of radius `r₀`, `1` outside radius `r₁`, zero set the circle of
/// radius `(r₀ + r₁)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialBump {
    pub r0: f64,
    pub r1: f64,
}

impl Default for RadialBump {
    fn default() -> Self {
        Self { r0: 0.2, r1: 0.9 }
    }
}

impl RadialBump {
    fn profile(&self, r: f64) -> (f64, f64) {
        let w = self.r1 - self.r0;
        let u = ((self.r1 - r) / w).clamp(0.0, 1.0);
        let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
        let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u);
        (1.0 - 2.0 * s, 2.0 * ds / w)
    }
}

impl ScalarField for RadialBump {
    fn value(&self, x: f64, y: f64) -> f64 {
        self.profile((x * x + y * y).sqrt()).0
    }

    fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let r = (x * x + y * y).sqrt();
        if r == 0.0 {
            return Some([0.0, 0.0]);
        }
        let d = self.profile(r).1;
        Some([d * x / r, d * y / r])
    }
}

/// Dehomogenized plane curve `p(1, x, y)` of a scalar form on `R³`, stored
/// as a dense bivariate table and evaluated by nested Horner.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneCurve {
    n: usize,
    coeffs: Vec<f64>,
}

impl PlaneCurve {
    pub fn from_form(p: &HomogeneousPolyMap) -> Result<Self> {
        if p.m() != 2 || p.k() != 1 {
            return Err(Error::InvalidArgument("plane curves need a scalar form in 3 variables".into()));
        }
        let n = p.degree() as usize + 1;
        let mut coeffs = vec![0.0; n * n];
        for (alpha, &c) in p.indices().iter().zip(p.coeffs()) {
            coeffs[alpha.0[1] as usize * n + alpha.0[2] as usize] += c;
        }
        Ok(PlaneCurve { n, coeffs })
    }

    /// `[f, ∂ₓf, ∂ᵧf]`.
    pub fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        let n = self.n;
        let (mut v, mut vx, mut vy) = (0.0, 0.0, 0.0);
        for i in (0..n).rev() {
            let (mut q, mut dq) = (0.0, 0.0);
            for j in (0..n - i).rev() {
                dq = dq * y + q;
                q = q * y + self.coeffs[i * n + j];
            }
            vx = vx * x + v;
            v = v * x + q;
            vy = vy * x + dq;
        }
        [v, vx, vy]
    }
}

impl ScalarField for PlaneCurve {
    fn value(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y)[0]
    }

    fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let [_, gx, gy] = self.eval(x, y);
        Some([gx, gy])
    }
}

/// `Σ a_j cos(ω_j·x + φ_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigSum {
    pub amps: Vec<f64>,
    pub freqs: Vec<[f64; 2]>,
    pub phases: Vec<f64>,
}

impl TrigSum {
    /// `terms` waves with `ω ~ N(0, σ²I)`, uniform phases and amplitudes
    /// rescaled so that `Σ|a_j| = amp`, which bounds the sup norm.
    pub fn random(terms: usize, amp: f64, sigma: f64, s: &mut RngStream) -> Self {
        let mut amps: Vec<f64> = (0..terms).map(|_| s.uniform() - 0.5).collect();
        let norm: f64 = amps.iter().map(|a| a.abs()).sum();
        if norm > 0.0 {
            amps.iter_mut().for_each(|a| *a *= amp / norm);
        }
        let freqs = (0..terms).map(|_| [sigma * s.normal(), sigma * s.normal()]).collect();
        let phases = (0..terms).map(|_| 2.0 * std::f64::consts::PI * s.uniform()).collect();
        TrigSum { amps, freqs, phases }
    }
}

impl ScalarField for TrigSum {
    fn value(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.0;
        for ((a, w), p) in self.amps.iter().zip(&self.freqs).zip(&self.phases) {
            v += a * (w[0] * x + w[1] * y + p).cos();
        }
        v
    }

    fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let mut g = [0.0; 2];
        for ((a, w), p) in self.amps.iter().zip(&self.freqs).zip(&self.phases) {
            let sn = (w[0] * x + w[1] * y + p).sin();
            g[0] -= a * w[0] * sn;
            g[1] -= a * w[1] * sn;
        }
        Some(g)
    }
}

/// `f_k(x) = 1 + Σᵢ (f(k(x − zᵢ)) − 1)`: shrunken copies of a base field that
/// equals 1 outside the unit disk.
pub struct SharpFamily<F> {
    base: F,
    k: f64,
    centers: Vec<[f64; 2]>,
}

impl<F> SharpFamily<F> {
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    fn near(&self, x: f64, y: f64) -> impl Iterator<Item = &[f64; 2]> + '_ {
        let r2 = 1.0 / (self.k * self.k);
        self.centers
            .iter()
            .filter(move |z| (x - z[0]).powi(2) + (y - z[1]).powi(2) < r2)
    }
}

impl<F: ScalarField> ScalarField for SharpFamily<F> {
    fn value(&self, x: f64, y: f64) -> f64 {
        1.0 + self
            .near(x, y)
            .map(|z| self.base.value(self.k * (x - z[0]), self.k * (y - z[1])) - 1.0)
            .sum::<f64>()
    }

    fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let mut g = [0.0, 0.0];
        for z in self.near(x, y) {
            let b = self.base.gradient(self.k * (x - z[0]), self.k * (y - z[1]))?;
            g[0] += self.k * b[0];
            g[1] += self.k * b[1];
        }
        Some(g)
    }
}

/// Checks the hypotheses (base ≡ 1 on the annulus `1 ≤ |x| ≤ 1.5`, centers
/// separated by more than `2/k`) and builds `f_k`.
pub fn sharp_family<F: ScalarField>(base: F, k: f64, centers: &[[f64; 2]]) -> Result<SharpFamily<F>> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    for a in 0..64 {
        let th = 2.0 * std::f64::consts::PI * a as f64 / 64.0;
        for r in [1.0, 1.25, 1.5] {
            if (base.value(r * th.cos(), r * th.sin()) - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument("base must equal 1 outside the unit disk".into()));
            }
        }
    }
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d = ((centers[i][0] - centers[j][0]).powi(2) + (centers[i][1] - centers[j][1]).powi(2)).sqrt();
            if d <= 2.0 / k {
                return Err(Error::CenterOverlap(i, j));
            }
        }
    }
    Ok(SharpFamily {
        base,
        k,
        centers: centers.to_vec(),
    })
}

/// Square lattice of centers in `[−1 + 1/k, 1 − 1/k]²` with spacing `1.1·(2/k)`.
pub fn lattice_centers(k: f64) -> Vec<[f64; 2]> {
    let span = 2.0 - 2.0 / k;
    let step = 2.2 / k;
    let n = (span / step).floor() as usize + 1;
    let start = -((n - 1) as f64) * step / 2.0;
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            out.push([start + i as f64 * step, start + j as f64 * step]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemicontinuityVerdict {
    pub b0_f: usize,
    pub b0_perturbed: usize,
    pub sup_g: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Compares `b₀(Z(f))` with `b₀(Z(f + g))` on the grid after checking
/// `sup|g| < min(m(f), δ(f))` over the box.
pub fn semicontinuity_check<F, G>(f: &F, g: &G, rect: Rect, h: f64) -> Result<SemicontinuityVerdict>
where
    F: ScalarField + ?Sized,
    G: ScalarField + ?Sized,
{
    let gf = sample_grid(f, rect, h)?;
    let gg = sample_grid(g, rect, h)?;
    let gs = GridFunction {
        values: gf.values.iter().zip(&gg.values).map(|(a, b)| a + b).collect(),
        gradients: None,
        ..gf.clone()
    };
    let report = condition_report(&gf, Region::Full, &boundary_values(f, rect, Region::Full, gf.nx.max(gf.ny) * 4))?;
    let margin = report.margin.min(report.delta);
    let sup_g = gg.sup_norm();
    if sup_g >= margin {
        return Err(Error::PerturbationTooLarge { sup: sup_g, margin });
    }
    let (cf, cs) = (marching_squares_components(&gf), marching_squares_components(&gs));
    if !cf.transversal || !cs.transversal {
        return Err(Error::NonTransversalInstance);
    }
    Ok(SemicontinuityVerdict {
        b0_f: cf.components,
        b0_perturbed: cs.components,
        sup_g,
        margin,
        pass: cf.components <= cs.components,
    })
}

/// Tensor Chebyshev interpolant on a rectangle, `Σ c_{kl} T_k(x̂) T_l(ŷ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebyshevApprox {
    pub rect: Rect,
    pub degree: usize,
    /// `coeffs[(k, l)]` multiplies `T_k(x̂) T_l(ŷ)`.
    pub coeffs: DMatrix<f64>,
}

fn cheb_values(t: f64, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut tv = vec![0.0; d + 1];
    let mut dv = vec![0.0; d + 1];
    tv[0] = 1.0;
    if d >= 1 {
        tv[1] = t;
        dv[1] = 1.0;
    }
    for k in 2..=d {
        tv[k] = 2.0 * t * tv[k - 1] - tv[k - 2];
        dv[k] = 2.0 * tv[k - 1] + 2.0 * t * dv[k - 1] - dv[k - 2];
    }
    (tv, dv)
}

impl ChebyshevApprox {
    fn scaled(&self, x: f64, y: f64) -> (f64, f64) {
        let r = self.rect;
        (
            (2.0 * x - r.x0 - r.x1) / (r.x1 - r.x0),
            (2.0 * y - r.y0 - r.y1) / (r.y1 - r.y0),
        )
    }

    /// Largest `k + l` with a coefficient above `1e-14·max|c|`.
    pub fn total_degree(&self) -> usize {
        let tol = 1e-14 * self.coeffs.amax();
        let mut deg = 0;
        for k in 0..=self.degree {
            for l in 0..=self.degree {
                if self.coeffs[(k, l)].abs() > tol {
                    deg = deg.max(k + l);
                }
            }
        }
        deg
    }

    /// Values on a uniform grid, by separable matrix products.
    pub fn on_grid(&self, rect: Rect, h: f64) -> Result<GridFunction> {
        let nx = nodes_along(rect.x1 - rect.x0, h)?;
        let ny = nodes_along(rect.y1 - rect.y0, h)?;
        let d = self.degree;
        let tx = DMatrix::from_fn(nx, d + 1, |i, k| {
            cheb_values(self.scaled(rect.x0 + i as f64 * h, 0.0).0, d).0[k]
        });
        let ty = DMatrix::from_fn(ny, d + 1, |j, l| {
            cheb_values(self.scaled(0.0, rect.y0 + j as f64 * h).1, d).0[l]
        });
        let vals = &ty * self.coeffs.transpose() * tx.transpose();
        let values = (0..ny).flat_map(|j| (0..nx).map(move |i| (j, i))).map(|(j, i)| vals[(j, i)]).collect();
        Ok(GridFunction {
            rect,
            h,
            nx,
            ny,
            values,
            gradients: None,
        })
    }
}

impl ScalarField for ChebyshevApprox {
    fn value(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.scaled(x, y);
        let (tu, _) = cheb_values(u, self.degree);
        let (tv, _) = cheb_values(v, self.degree);
        let mut s = 0.0;
        for k in 0..=self.degree {
            for l in 0..=self.degree {
                s += self.coeffs[(k, l)] * tu[k] * tv[l];
            }
        }
        s
    }

    fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let (u, v) = self.scaled(x, y);
        let (tu, du) = cheb_values(u, self.degree);
        let (tv, dv) = cheb_values(v, self.degree);
        let (mut gx, mut gy) = (0.0, 0.0);
        for k in 0..=self.degree {
            for l in 0..=self.degree {
                gx += self.coeffs[(k, l)] * du[k] * tv[l];
                gy += self.coeffs[(k, l)] * tu[k] * dv[l];
            }
        }
        let r = self.rect;
        Some([gx * 2.0 / (r.x1 - r.x0), gy * 2.0 / (r.y1 - r.y0)])
    }
}

/// Tensor Chebyshev interpolation of per-axis degree `d` at the Chebyshev
/// extrema, with the sup error measured on a uniform grid of `4(d + 1)`
/// intervals per axis.
pub fn chebyshev_approximate<F: ScalarField + ?Sized>(f: &F, rect: Rect, d: usize) -> Result<(ChebyshevApprox, f64)> {
    if d == 0 {
        return Err(Error::InvalidArgument("degree must be at least 1".into()));
    }
    let nodes: Vec<f64> = (0..=d).map(|j| (std::f64::consts::PI * j as f64 / d as f64).cos()).collect();
    let unscale = |t: f64, a: f64, b: f64| 0.5 * (a + b) + 0.5 * (b - a) * t;
    let samples = DMatrix::from_fn(d + 1, d + 1, |i, j| {
        f.value(unscale(nodes[i], rect.x0, rect.x1), unscale(nodes[j], rect.y0, rect.y1))
    });
    if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(*v, 0.0));
    }
    // Discrete cosine transform on both axes.
    let half = |j: usize| if j == 0 || j == d { 0.5 } else { 1.0 };
    let cmat = DMatrix::from_fn(d + 1, d + 1, |k, j| {
        half(k) * half(j) * 2.0 / d as f64 * (std::f64::consts::PI * (j * k) as f64 / d as f64).cos()
    });
    let coeffs = &cmat * samples * cmat.transpose();
    let approx = ChebyshevApprox { rect, degree: d, coeffs };
    let n = 4 * (d + 1);
    let mut err = 0.0f64;
    for j in 0..=n {
        let y = rect.y0 + (rect.y1 - rect.y0) * j as f64 / n as f64;
        for i in 0..=n {
            let x = rect.x0 + (rect.x1 - rect.x0) * i as f64 / n as f64;
            err = err.max((approx.value(x, y) - f.value(x, y)).abs());
        }
    }
    Ok((approx, err))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitdashReport {
    pub margin: f64,
    pub eps: f64,
    pub degree: usize,
    pub total_degree: usize,
    pub sup_error: f64,
    pub b0_f: usize,
    pub b0_poly: usize,
    pub milnor_thom: f64,
    pub holds: bool,
}

/// Smallest per-axis degree whose Chebyshev interpolant is `ε`-close to `f`
/// for `ε = eps_fraction·min(m, δ)`, and the chain
/// `b₀(Z(f)) ≤ b₀(Z(w)) ≤ d_tot(2d_tot − 1)` with `d_tot` the interpolant's
/// total degree.
pub fn witdash_pipeline<F: ScalarField + ?Sized>(
    f: &F,
    rect: Rect,
    h: f64,
    eps_fraction: f64,
    max_degree: usize,
) -> Result<WitdashReport> {
    let gf = sample_grid(f, rect, h)?;
    let report = condition_report(&gf, Region::Full, &boundary_values(f, rect, Region::Full, gf.nx.max(gf.ny) * 4))?;
    let margin = report.margin.min(report.delta);
    let eps = eps_fraction * margin;
    for d in 1..=max_degree {
        let (w, err) = chebyshev_approximate(f, rect, d)?;
        if err >= eps {
            continue;
        }
        let gw = w.on_grid(rect, h)?;
        let (cf, cw) = (marching_squares_components(&gf), marching_squares_components(&gw));
        if !cf.transversal || !cw.transversal {
            return Err(Error::NonTransversalInstance);
        }
        let total = w.total_degree();
        let mt = bounds(BoundKind::MilnorThom { d: total as u32, n: 2 });
        return Ok(WitdashReport {
            margin,
            eps,
            degree: d,
            total_degree: total,
            sup_error: err,
            b0_f: cf.components,
            b0_poly: cw.components,
            milnor_thom: mt,
            holds: cf.components <= cw.components && (cw.components as f64) <= mt,
        });
    }
    Err(Error::InvalidArgument(format!("no degree ≤ {max_degree} reaches ε = {eps}")))
}
