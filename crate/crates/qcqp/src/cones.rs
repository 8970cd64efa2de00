//! Nonnegative orthant and second-order cone algebra used by the
//! interior-point iterations: Jordan products, Nesterov-Todd scaling and
//! step lengths to the cone boundary.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Nonneg,
    /// `{ (u0, u1) : u0 ≥ ‖u1‖ }`
    Soc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub offset: usize,
    pub dim: usize,
}

impl ConeBlock {
    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim
    }
}

/// Cartesian product of cones laid out contiguously.
#[derive(Debug, Clone, Default)]
pub struct ConeSet {
    pub blocks: Vec<ConeBlock>,
    pub dim: usize,
}

impl ConeSet {
    pub fn push(&mut self, kind: ConeKind, dim: usize) {
        if dim == 0 {
            return;
        }
        // Adjacent orthant blocks are merged.
        if kind == ConeKind::Nonneg {
            if let Some(last) = self.blocks.last_mut() {
                if last.kind == ConeKind::Nonneg {
                    last.dim += dim;
                    self.dim += dim;
                    return;
                }
            }
        }
        self.blocks.push(ConeBlock {
            kind,
            offset: self.dim,
            dim,
        });
        self.dim += dim;
    }

    /// Barrier degree: one per orthant coordinate, one per second-order cone.
    pub fn degree(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b.kind {
                ConeKind::Nonneg => b.dim,
                ConeKind::Soc => 1,
            })
            .sum()
    }

    pub fn identity(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        for b in &self.blocks {
            match b.kind {
                ConeKind::Nonneg => e[b.range()].iter_mut().for_each(|v| *v = 1.0),
                ConeKind::Soc => e[b.offset] = 1.0,
            }
        }
        e
    }

    /// Smallest `t` such that `u + t e` lies in the closed cone.
    pub fn boundary_shift(&self, u: &[f64]) -> f64 {
        let mut t = f64::NEG_INFINITY;
        for b in &self.blocks {
            let v = &u[b.range()];
            match b.kind {
                ConeKind::Nonneg => {
                    for x in v {
                        t = t.max(-x);
                    }
                }
                ConeKind::Soc => t = t.max(norm(&v[1..]) - v[0]),
            }
        }
        t
    }

    /// Moves `u` strictly inside the cone if it is not already.
    pub fn push_to_interior(&self, u: &mut [f64]) {
        let t = self.boundary_shift(u);
        let scale = u.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        if t >= -1e-8 * scale {
            let e = self.identity();
            for (x, ei) in u.iter_mut().zip(&e) {
                *x += (1.0 + t) * ei;
            }
        }
    }

    /// Jordan product `u ∘ v`.
    pub fn jordan(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for b in &self.blocks {
            let r = b.range();
            let (ub, vb) = (&u[r.clone()], &v[r.clone()]);
            let ob = &mut out[r];
            match b.kind {
                ConeKind::Nonneg => {
                    for i in 0..b.dim {
                        ob[i] = ub[i] * vb[i];
                    }
                }
                ConeKind::Soc => {
                    ob[0] = dot(ub, vb);
                    for i in 1..b.dim {
                        ob[i] = ub[0] * vb[i] + vb[0] * ub[i];
                    }
                }
            }
        }
        out
    }

    /// Solves `λ ∘ u = d` for `u`, with `λ` strictly inside the cone.
    pub fn jordan_div(&self, lambda: &[f64], d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for b in &self.blocks {
            let r = b.range();
            let (l, db) = (&lambda[r.clone()], &d[r.clone()]);
            let ob = &mut out[r];
            match b.kind {
                ConeKind::Nonneg => {
                    for i in 0..b.dim {
                        ob[i] = db[i] / l[i];
                    }
                }
                ConeKind::Soc => {
                    let det = l[0] * l[0] - dot(&l[1..], &l[1..]);
                    let u0 = (l[0] * db[0] - dot(&l[1..], &db[1..])) / det;
                    ob[0] = u0;
                    for i in 1..b.dim {
                        ob[i] = (db[i] - u0 * l[i]) / l[0];
                    }
                }
            }
        }
        out
    }

    /// Largest `α ≥ 0` keeping `u + α du` in the cone (`u` strictly interior).
    /// Returns `f64::INFINITY` if the ray never leaves the cone.
    pub fn max_step(&self, u: &[f64], du: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for b in &self.blocks {
            let r = b.range();
            let (ub, db) = (&u[r.clone()], &du[r]);
            match b.kind {
                ConeKind::Nonneg => {
                    for i in 0..b.dim {
                        if db[i] < 0.0 {
                            alpha = alpha.min(-ub[i] / db[i]);
                        }
                    }
                }
                ConeKind::Soc => alpha = alpha.min(soc_max_step(ub, db)),
            }
        }
        alpha
    }
}

fn soc_max_step(u: &[f64], d: &[f64]) -> f64 {
    // f(α) = (u0 + α d0)² − ‖u1 + α d1‖² = a α² + b α + c, with c > 0.
    let a = d[0] * d[0] - dot(&d[1..], &d[1..]);
    let b = 2.0 * (u[0] * d[0] - dot(&u[1..], &d[1..]));
    let c = (u[0] * u[0] - dot(&u[1..], &u[1..])).max(0.0);
    let scale = a.abs().max(b.abs()).max(c);
    if scale == 0.0 {
        return f64::INFINITY;
    }
    let mut root = f64::INFINITY;
    if a.abs() <= 1e-15 * scale {
        if b < 0.0 {
            root = -c / b;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // Numerically stable pair of roots.
            let qv = -0.5 * (b + b.signum() * sq);
            let (r1, r2) = if qv != 0.0 { (qv / a, c / qv) } else { (0.0, 0.0) };
            for r in [r1, r2] {
                if r > 0.0 && r < root {
                    root = r;
                }
            }
        }
        if a > 0.0 && b >= 0.0 {
            root = f64::INFINITY;
        }
    }
    // Guard against crossing the apex into the negative cone.
    if d[0] < 0.0 {
        root = root.min(-u[0] / d[0]);
    }
    root
}

/// Nesterov-Todd scaling `W` with `W z = W⁻¹ s = λ`.
#[derive(Debug, Clone)]
pub struct NtScaling {
    blocks: Vec<BlockScaling>,
    dim: usize,
}

#[derive(Debug, Clone)]
enum BlockScaling {
    Nonneg {
        offset: usize,
        w: Vec<f64>,
    },
    /// `W = η [w0, w1ᵀ; w1, I + w1 w1ᵀ/(1 + w0)]` with `w0² − ‖w1‖² = 1`.
    Soc {
        offset: usize,
        eta: f64,
        w: Vec<f64>,
    },
}

impl NtScaling {
    pub fn new(cones: &ConeSet, s: &[f64], z: &[f64]) -> Self {
        let blocks = cones
            .blocks
            .iter()
            .map(|b| {
                let (sb, zb) = (&s[b.range()], &z[b.range()]);
                match b.kind {
                    ConeKind::Nonneg => BlockScaling::Nonneg {
                        offset: b.offset,
                        w: sb.iter().zip(zb).map(|(si, zi)| (si / zi).sqrt()).collect(),
                    },
                    ConeKind::Soc => {
                        let s_norm = soc_norm(sb);
                        let z_norm = soc_norm(zb);
                        let sbar: Vec<f64> = sb.iter().map(|v| v / s_norm).collect();
                        let zbar: Vec<f64> = zb.iter().map(|v| v / z_norm).collect();
                        let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
                        let mut w = vec![0.0; b.dim];
                        w[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
                        for i in 1..b.dim {
                            w[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
                        }
                        // Re-normalize onto the hyperboloid to limit drift.
                        let w1 = norm(&w[1..]);
                        w[0] = (1.0 + w1 * w1).sqrt();
                        BlockScaling::Soc {
                            offset: b.offset,
                            eta: (s_norm / z_norm).sqrt(),
                            w,
                        }
                    }
                }
            })
            .collect();
        Self { blocks, dim: cones.dim }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.apply_impl(v, false)
    }

    pub fn apply_inv(&self, v: &[f64]) -> Vec<f64> {
        self.apply_impl(v, true)
    }

    fn apply_impl(&self, v: &[f64], inverse: bool) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for blk in &self.blocks {
            match blk {
                BlockScaling::Nonneg { offset, w } => {
                    for (i, wi) in w.iter().enumerate() {
                        out[offset + i] = if inverse {
                            v[offset + i] / wi
                        } else {
                            v[offset + i] * wi
                        };
                    }
                }
                BlockScaling::Soc { offset, eta, w } => {
                    let m = w.len();
                    let vb = &v[*offset..offset + m];
                    let sign = if inverse { -1.0 } else { 1.0 };
                    let scale = if inverse { 1.0 / eta } else { *eta };
                    let w1v1 = dot(&w[1..], &vb[1..]);
                    out[*offset] = scale * (w[0] * vb[0] + sign * w1v1);
                    let coef = sign * vb[0] + w1v1 / (1.0 + w[0]);
                    for i in 1..m {
                        out[offset + i] = scale * (vb[i] + coef * w[i]);
                    }
                }
            }
        }
        out
    }

    /// `W²` as upper-triangle entries `(row, col, value)` in cone coordinates.
    pub fn w_squared_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for blk in &self.blocks {
            match blk {
                BlockScaling::Nonneg { offset, w } => {
                    for (i, wi) in w.iter().enumerate() {
                        out.push((offset + i, offset + i, wi * wi));
                    }
                }
                BlockScaling::Soc { offset, eta, w } => {
                    // W² = η² (2 w wᵀ − J)
                    let e2 = eta * eta;
                    let m = w.len();
                    for i in 0..m {
                        for j in i..m {
                            let mut v = 2.0 * w[i] * w[j];
                            if i == j {
                                v += if i == 0 { -1.0 } else { 1.0 };
                            }
                            out.push((offset + i, offset + j, e2 * v));
                        }
                    }
                }
            }
        }
        out
    }
}

fn soc_norm(u: &[f64]) -> f64 {
    ((u[0] - norm(&u[1..])) * (u[0] + norm(&u[1..]))).max(0.0).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed() -> ConeSet {
        let mut c = ConeSet::default();
        c.push(ConeKind::Nonneg, 2);
        c.push(ConeKind::Soc, 3);
        c.push(ConeKind::Soc, 4);
        c
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_same_point() {
        let cones = mixed();
        let s = [1.0, 2.0, 3.0, 1.0, -2.0, 5.0, 1.0, 2.0, -1.0];
        let z = [0.5, 4.0, 2.0, 0.3, 0.4, 1.5, -0.5, 0.2, 0.7];
        let w = NtScaling::new(&cones, &s, &z);
        let lz = w.apply(&z);
        let ls = w.apply_inv(&s);
        for (a, b) in lz.iter().zip(&ls) {
            assert!((a - b).abs() < 1e-12, "{lz:?} vs {ls:?}");
        }
        let back = w.apply_inv(&w.apply(&s));
        for (a, b) in back.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn w_squared_entries_match_double_application() {
        let cones = mixed();
        let s = [1.0, 2.0, 3.0, 1.0, -2.0, 5.0, 1.0, 2.0, -1.0];
        let z = [0.5, 4.0, 2.0, 0.3, 0.4, 1.5, -0.5, 0.2, 0.7];
        let w = NtScaling::new(&cones, &s, &z);
        let v = [0.3, -1.0, 0.5, 0.25, 1.0, 2.0, -0.4, 0.9, 0.1];
        let direct = w.apply(&w.apply(&v));
        let mut via = vec![0.0; v.len()];
        for (i, j, val) in w.w_squared_entries() {
            via[i] += val * v[j];
            if i != j {
                via[j] += val * v[i];
            }
        }
        for (a, b) in direct.iter().zip(&via) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jordan_div_inverts_product() {
        let cones = mixed();
        let l = [1.0, 2.0, 3.0, 1.0, 0.5, 2.0, 0.3, 0.2, -0.5];
        let u = [0.2, -0.3, 1.0, 2.0, -1.0, 0.1, 0.2, 0.3, 0.4];
        let d = cones.jordan(&l, &u);
        let back = cones.jordan_div(&l, &d);
        for (a, b) in back.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_step_lands_on_boundary() {
        let cones = {
            let mut c = ConeSet::default();
            c.push(ConeKind::Soc, 3);
            c
        };
        let u = [2.0, 0.5, -0.5];
        let d = [-1.0, 1.0, 0.3];
        let a = cones.max_step(&u, &d);
        let p: Vec<f64> = u.iter().zip(&d).map(|(x, y)| x + a * y).collect();
        assert!((p[0] - norm(&p[1..])).abs() < 1e-12);
        // Direction into the cone never leaves it.
        assert_eq!(cones.max_step(&u, &[1.0, 0.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn orthant_step_is_ratio_test() {
        let mut c = ConeSet::default();
        c.push(ConeKind::Nonneg, 3);
        assert_eq!(c.max_step(&[1.0, 2.0, 3.0], &[-2.0, 1.0, -1.0]), 0.5);
    }

    #[test]
    fn push_to_interior_reaches_strict_interior() {
        let cones = mixed();
        let mut u = vec![-1.0, 0.0, 0.0, 2.0, 0.0, 0.1, 0.0, 0.0, 0.0];
        cones.push_to_interior(&mut u);
        assert!(cones.boundary_shift(&u) < 0.0);
    }
}
