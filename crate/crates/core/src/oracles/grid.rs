//! Fixed-point oracles on a triangulated forecast space.
//!
//! Forecasts live either in the unit square of (first, second) moments of the
//! rescaled outcome, or in the probability simplex over equal-width outcome
//! bins. Each vertex `v` of a Kuhn triangulation owns a block of coordinates
//! and the payoff is `w_v(f) (f - z(y))`, where `w(f)` are the barycentric
//! weights of `f` in its simplex. With `μ_v` the vertex blocks of the current
//! direction and `g(f) = Σ_v w_v(f) μ_v`, the inner product is
//! `<g(f), f - z(y)>`, so it suffices to find a variational fixed point:
//! `g(f)` vanishes along every free coordinate of `f` and points into the
//! forecast space along the active constraints.
//!
//! The map `g` is affine on each face of the triangulation, so every face
//! gives a small linear system. Faces are scanned interior-first.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::linalg::lstsq;
use crate::blackwell::{Oracle, OracleError, Query};
use crate::core_types::{csum, labels_from, Certificate, Features, Labels, PayoffVector};
use crate::payoffs::{PayoffError, PayoffSpec};

/// Largest grid (`M^d` vertices before triangulating) the oracles accept.
pub const MAX_GRID_CELLS: usize = 10_000;

/// Slack on the face systems after normalizing the direction to unit scale.
const TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GridKind {
    /// `f = (E[u], E[u²])` for `u` the outcome rescaled to [0, 1].
    Moments { y_min: f64, y_max: f64 },
    /// `f` a histogram over `bins` equal-width bins of `[y_min, y_max]`.
    Histogram { y_min: f64, y_max: f64, bins: usize },
}

impl GridKind {
    fn support(&self) -> (f64, f64) {
        match *self {
            GridKind::Moments { y_min, y_max } | GridKind::Histogram { y_min, y_max, .. } => (y_min, y_max),
        }
    }

    /// The outcome's image `z(y)` in forecast space.
    pub fn embed(&self, y: f64) -> Result<Vec<f64>, PayoffError> {
        let (lo, hi) = self.support();
        if !(lo..=hi).contains(&y) {
            return Err(PayoffError::Invalid(format!("outcome {y} outside [{lo}, {hi}]")));
        }
        let u = (y - lo) / (hi - lo);
        Ok(match *self {
            GridKind::Moments { .. } => vec![u, u * u],
            GridKind::Histogram { bins, .. } => {
                let mut e = vec![0.0; bins];
                e[((u * bins as f64) as usize).min(bins - 1)] = 1.0;
                e
            }
        })
    }

    /// `max_y -<g, z(y)>`, the outcome-dependent part of the worst inner product.
    fn worst_outcome(&self, g: &[f64]) -> f64 {
        match *self {
            GridKind::Moments { .. } => {
                // min over u in [0, 1] of g0 u + g1 u².
                let h = |u: f64| g[0] * u + g[1] * u * u;
                let mut m = h(0.0).min(h(1.0));
                if g[1] > 0.0 {
                    let s = -g[0] / (2.0 * g[1]);
                    if (0.0..=1.0).contains(&s) {
                        m = m.min(h(s));
                    }
                }
                -m
            }
            GridKind::Histogram { .. } => -g.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone)]
struct Face {
    verts: Vec<usize>,
    /// Coordinates not pinned by the face.
    free: Vec<usize>,
    /// Coordinates pinned at their lower bound.
    low: Vec<usize>,
    /// Coordinates pinned at their upper bound (unit square only).
    high: Vec<usize>,
}

/// Kuhn triangulation of the unit square or the simplex.
#[derive(Debug, Clone)]
pub struct Triangulation {
    kind: GridKind,
    vertices: Vec<Vec<f64>>,
    simplices: Vec<Vec<usize>>,
    faces: Vec<Face>,
}

/// A fixed point found on one face.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    pub weights: Vec<(usize, f64)>,
    pub point: Vec<f64>,
    /// Largest `|g_k|` over all coordinates (zero at an interior solution).
    pub residual: f64,
    /// Whether no coordinate of the solution sits on a constraint.
    pub interior: bool,
}

impl Triangulation {
    /// `m` ticks per axis on the unit square of moments.
    pub fn moments(m: usize, y_min: f64, y_max: f64) -> Result<Self, OracleError> {
        check_support(y_min, y_max)?;
        if m < 2 || m.saturating_mul(m) > MAX_GRID_CELLS {
            return Err(OracleError::TooLarge(format!(
                "{m} ticks per axis on the moment square"
            )));
        }
        let n = m - 1;
        let mut index = HashMap::new();
        let mut vertices = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                index.insert(vec![i, j], vertices.len());
                vertices.push(vec![i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let simplices = kuhn(2, n, &index, |_| true);
        let kind = GridKind::Moments { y_min, y_max };
        Ok(Self::assemble(kind, vertices, simplices, |k, v| {
            let lo = v.iter().all(|x| x[k] == 0.0);
            let hi = v.iter().all(|x| x[k] == 1.0);
            (lo, hi)
        }))
    }

    /// Histograms over `bins` bins with masses in multiples of `1/(m-1)`.
    pub fn histogram(bins: usize, m: usize, y_min: f64, y_max: f64) -> Result<Self, OracleError> {
        check_support(y_min, y_max)?;
        let cells = (m as f64).powi(bins as i32);
        if bins < 2 || m < 2 || cells > MAX_GRID_CELLS as f64 {
            return Err(OracleError::TooLarge(format!("{m}^{bins} histogram grid")));
        }
        let n = m - 1;
        let k = bins - 1;
        // Vertices in cumulative coordinates s_1 ≤ … ≤ s_k.
        let mut index = HashMap::new();
        let mut vertices = Vec::new();
        let mut s = vec![0usize; k];
        loop {
            if s.windows(2).all(|w| w[0] <= w[1]) {
                index.insert(s.clone(), vertices.len());
                let mut f = Vec::with_capacity(bins);
                let mut prev = 0;
                for &c in &s {
                    f.push((c - prev) as f64 / n as f64);
                    prev = c;
                }
                f.push((n - prev) as f64 / n as f64);
                vertices.push(f);
            }
            if !odometer(&mut s, n) {
                break;
            }
        }
        let simplices = kuhn(k, n, &index, |s| s.windows(2).all(|w| w[0] <= w[1]));
        let kind = GridKind::Histogram { y_min, y_max, bins };
        Ok(Self::assemble(kind, vertices, simplices, |c, v| {
            (v.iter().all(|x| x[c] == 0.0), false)
        }))
    }

    fn assemble(
        kind: GridKind,
        vertices: Vec<Vec<f64>>,
        simplices: Vec<Vec<usize>>,
        pinned: impl Fn(usize, &[&Vec<f64>]) -> (bool, bool),
    ) -> Self {
        let dim = vertices[0].len();
        let mut seen = HashSet::new();
        let mut faces = Vec::new();
        for simplex in &simplices {
            let r = simplex.len();
            let mut subsets: Vec<Vec<usize>> = (1u32..(1 << r))
                .map(|mask| (0..r).filter(|i| mask & (1 << i) != 0).map(|i| simplex[i]).collect())
                .collect();
            subsets.sort_by_key(|s: &Vec<usize>| std::cmp::Reverse(s.len()));
            for mut verts in subsets {
                verts.sort_unstable();
                if !seen.insert(verts.clone()) {
                    continue;
                }
                let pts: Vec<&Vec<f64>> = verts.iter().map(|v| &vertices[*v]).collect();
                let (mut free, mut low, mut high) = (Vec::new(), Vec::new(), Vec::new());
                for c in 0..dim {
                    match pinned(c, &pts) {
                        (true, _) => low.push(c),
                        (_, true) => high.push(c),
                        _ => free.push(c),
                    }
                }
                faces.push(Face { verts, free, low, high });
            }
        }
        // Interior faces first, then faces on one constraint, and so on; larger
        // faces first within each group.
        faces.sort_by_key(|f| (f.low.len() + f.high.len(), std::cmp::Reverse(f.verts.len())));
        Self {
            kind,
            vertices,
            simplices,
            faces,
        }
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn simplices(&self) -> &[Vec<usize>] {
        &self.simplices
    }

    /// Coordinates of the forecast space.
    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    /// Barycentric weights of a point of the forecast space.
    pub fn weights_of(&self, f: &[f64]) -> Option<Vec<(usize, f64)>> {
        for s in &self.simplices {
            let d = self.dim();
            let mut a: Vec<Vec<f64>> = (0..d)
                .map(|k| s.iter().map(|v| self.vertices[*v][k]).collect())
                .collect();
            let mut b = f.to_vec();
            a.push(vec![1.0; s.len()]);
            b.push(1.0);
            let w = lstsq(&a, &b);
            let fits =
                (0..d).all(|k| (csum(s.iter().zip(&w).map(|(v, x)| x * self.vertices[*v][k])) - f[k]).abs() < 1e-9);
            if fits && w.iter().all(|x| *x >= -1e-9) {
                return Some(s.iter().copied().zip(w.into_iter().map(|x| x.max(0.0))).collect());
            }
        }
        None
    }

    /// A point where `g` satisfies the fixed-point conditions for vertex
    /// directions `mu`.
    pub fn solve(&self, mu: &[Vec<f64>]) -> Result<GridSolution, OracleError> {
        let scale = mu.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            let v = self.simplices[0][0];
            return Ok(GridSolution {
                weights: vec![(v, 1.0)],
                point: self.vertices[v].clone(),
                residual: 0.0,
                interior: false,
            });
        }
        let simplex = matches!(self.kind, GridKind::Histogram { .. });
        let mu: Vec<Vec<f64>> = mu.iter().map(|m| m.iter().map(|x| x / scale).collect()).collect();
        for face in &self.faces {
            if !simplex && face.low.is_empty() && face.high.is_empty() {
                // Cheap necessary condition: 0 in the range of each free coordinate.
                let ok = face.free.iter().all(|k| {
                    let lo = face.verts.iter().map(|v| mu[*v][*k]).fold(f64::INFINITY, f64::min);
                    let hi = face.verts.iter().map(|v| mu[*v][*k]).fold(f64::NEG_INFINITY, f64::max);
                    lo <= TOL && hi >= -TOL
                });
                if !ok {
                    continue;
                }
            }
            if let Some(sol) = self.solve_face(face, &mu, simplex, scale) {
                return Ok(sol);
            }
        }
        Err(OracleError::Contract("no fixed point found on any face".into()))
    }

    fn solve_face(&self, face: &Face, mu: &[Vec<f64>], simplex: bool, scale: f64) -> Option<GridSolution> {
        let r = face.verts.len();
        let unknowns = r + usize::from(simplex);
        let mut a = Vec::with_capacity(face.free.len() + 1);
        let mut b = Vec::with_capacity(face.free.len() + 1);
        for &k in &face.free {
            let mut row: Vec<f64> = face.verts.iter().map(|v| mu[*v][k]).collect();
            if simplex {
                row.push(-1.0);
            }
            a.push(row);
            b.push(0.0);
        }
        let mut sum_row = vec![1.0; r];
        if simplex {
            sum_row.push(0.0);
        }
        a.push(sum_row);
        b.push(1.0);
        let x = lstsq(&a, &b);
        debug_assert_eq!(x.len(), unknowns);
        let lambda = if simplex { x[r] } else { 0.0 };
        let w = &x[..r];
        if w.iter().any(|v| *v < -TOL) {
            return None;
        }
        let resid = a
            .iter()
            .zip(&b)
            .map(|(row, bi)| (csum(row.iter().zip(&x).map(|(p, q)| p * q)) - bi).abs());
        if resid.fold(0.0, f64::max) > TOL {
            return None;
        }
        let dim = self.dim();
        let g: Vec<f64> = (0..dim)
            .map(|k| csum(face.verts.iter().zip(w).map(|(v, wv)| wv * mu[*v][k])))
            .collect();
        if face.low.iter().any(|k| g[*k] < lambda - TOL) || face.high.iter().any(|k| g[*k] > lambda + TOL) {
            return None;
        }
        let total: f64 = w.iter().map(|v| v.max(0.0)).sum();
        let weights: Vec<(usize, f64)> = face
            .verts
            .iter()
            .zip(w)
            .map(|(v, wv)| (*v, wv.max(0.0) / total))
            .filter(|(_, wv)| *wv > 0.0)
            .collect();
        let point = (0..dim)
            .map(|k| csum(weights.iter().map(|(v, wv)| wv * self.vertices[*v][k])))
            .collect();
        let residual = g.iter().map(|x| (x - lambda).abs()).fold(0.0, f64::max) * scale;
        Some(GridSolution {
            weights,
            point,
            residual,
            interior: face.low.is_empty() && face.high.is_empty(),
        })
    }
}

fn check_support(y_min: f64, y_max: f64) -> Result<(), OracleError> {
    if y_min < y_max && y_min.is_finite() && y_max.is_finite() {
        Ok(())
    } else {
        Err(PayoffError::Invalid(format!("support [{y_min}, {y_max}]")).into())
    }
}

/// Advances `s` through `{0..=n}^k` in lexicographic order.
fn odometer(s: &mut [usize], n: usize) -> bool {
    for i in (0..s.len()).rev() {
        if s[i] < n {
            s[i] += 1;
            return true;
        }
        s[i] = 0;
    }
    false
}

/// Kuhn simplices of the grid `{0..=n}^k` whose vertices all satisfy `keep`,
/// as vertex indices. Paths that leave the kept region are pruned early.
fn kuhn(k: usize, n: usize, index: &HashMap<Vec<usize>, usize>, keep: impl Fn(&[usize]) -> bool) -> Vec<Vec<usize>> {
    fn walk(
        cur: &mut Vec<usize>,
        used: &mut Vec<bool>,
        path: &mut Vec<usize>,
        index: &HashMap<Vec<usize>, usize>,
        keep: &dyn Fn(&[usize]) -> bool,
        out: &mut Vec<Vec<usize>>,
    ) {
        if used.iter().all(|u| *u) {
            out.push(path.clone());
            return;
        }
        for axis in 0..used.len() {
            if used[axis] {
                continue;
            }
            cur[axis] += 1;
            if keep(cur) {
                used[axis] = true;
                path.push(index[cur.as_slice()]);
                walk(cur, used, path, index, keep, out);
                path.pop();
                used[axis] = false;
            }
            cur[axis] -= 1;
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut base = vec![0usize; k];
    loop {
        if keep(&base) {
            let mut cur = base.clone();
            let mut used = vec![false; k];
            let mut path = vec![index[&base]];
            walk(&mut cur, &mut used, &mut path, index, &keep, &mut out);
        }
        if !odometer(&mut base, n - 1) {
            break;
        }
    }
    out
}

/// A forecast from a grid oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridForecast {
    /// The fixed point.
    pub point: Vec<f64>,
    /// Barycentric weights of the fixed point.
    pub weights: Vec<(usize, f64)>,
    /// The vertex announced by the randomized variant (the heaviest vertex
    /// otherwise).
    pub vertex: usize,
    /// Whether payoffs use the announced vertices rather than the fixed point.
    pub quasi: bool,
}

pub struct GridPayoff {
    tri: Arc<Triangulation>,
    labels: Labels,
}

impl GridPayoff {
    pub fn new(tri: Arc<Triangulation>) -> Self {
        let d = tri.dim();
        let labels = labels_from((0..tri.vertices().len()).flat_map(|v| (0..d).map(move |k| format!("v{v}/{k}"))));
        Self { tri, labels }
    }

    pub fn triangulation(&self) -> &Arc<Triangulation> {
        &self.tri
    }
}

impl PayoffSpec<GridForecast> for GridPayoff {
    fn name(&self) -> &str {
        match self.tri.kind {
            GridKind::Moments { .. } => "moment_grid",
            GridKind::Histogram { .. } => "histogram_grid",
        }
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        2.0
    }

    fn evaluate(&self, _x: &Features, f: &GridForecast, y: f64) -> Result<PayoffVector, PayoffError> {
        let z = self.tri.kind.embed(y)?;
        let d = self.tri.dim();
        let mut values = vec![0.0; self.labels.len()];
        for &(v, w) in &f.weights {
            let x = if f.quasi { &self.tri.vertices[v] } else { &f.point };
            for k in 0..d {
                values[v * d + k] = w * (x[k] - z[k]);
            }
        }
        Ok(PayoffVector::new(self.labels.clone(), values, 2.0)?)
    }
}

pub struct GridOracle {
    tri: Arc<Triangulation>,
    quasi: bool,
    last: Option<GridSolution>,
}

impl GridOracle {
    /// Deterministic oracle: payoffs use the fixed point itself.
    pub fn deterministic(tri: Arc<Triangulation>) -> Self {
        Self {
            tri,
            quasi: false,
            last: None,
        }
    }

    /// Randomized oracle: announces a vertex drawn from the fixed point's
    /// weights, within one grid cell of it.
    pub fn quasi(tri: Arc<Triangulation>) -> Self {
        Self {
            tri,
            quasi: true,
            last: None,
        }
    }

    /// The fixed point behind the last response.
    pub fn last_solution(&self) -> Option<&GridSolution> {
        self.last.as_ref()
    }

    pub fn vertex_directions(&self, c: &[f64]) -> Vec<Vec<f64>> {
        c.chunks(self.tri.dim()).map(<[f64]>::to_vec).collect()
    }
}

impl Oracle<GridForecast> for GridOracle {
    fn name(&self) -> &str {
        if self.quasi {
            "grid_quasi"
        } else {
            "grid"
        }
    }

    fn respond(
        &mut self,
        query: &Query<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(GridForecast, Certificate), OracleError> {
        let d = self.tri.dim();
        let expected = self.tri.vertices().len() * d;
        if query.direction.len() != expected {
            return Err(PayoffError::Direction {
                expected,
                found: query.direction.len(),
            }
            .into());
        }
        let mu = self.vertex_directions(query.direction);
        let sol = self.tri.solve(&mu)?;
        let vertex = if self.quasi {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = sol.weights[sol.weights.len() - 1].0;
            for &(v, w) in &sol.weights {
                acc += w;
                if u < acc {
                    pick = v;
                    break;
                }
            }
            pick
        } else {
            sol.weights
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty")
                .0
        };
        let g: Vec<f64> = (0..d)
            .map(|k| csum(sol.weights.iter().map(|(v, w)| w * mu[*v][k])))
            .collect();
        let fixed = csum(sol.weights.iter().map(|(v, w)| {
            let x = if self.quasi { &self.tri.vertices[*v] } else { &sol.point };
            w * csum(mu[*v].iter().zip(x).map(|(m, xk)| m * xk))
        }));
        let cert = fixed + self.tri.kind.worst_outcome(&g);
        let forecast = GridForecast {
            point: sol.point.clone(),
            weights: sol.weights.clone(),
            vertex,
            quasi: self.quasi,
        };
        self.last = Some(sol);
        Ok((forecast, Certificate::exact(cert)))
    }
}
