//! Sparse LDLᵀ factorization for symmetric quasi-definite matrices.
//!
//! Up-looking factorization over an elimination tree, in the style of QDLDL.
//! A fill-reducing ordering is computed once from the sparsity pattern; the
//! numeric factorization can then be repeated with new values (the interior
//! point method refactors the same KKT pattern every iteration).
//!
//! Pivots whose sign disagrees with the expected inertia are replaced by a
//! small value of the expected sign (dynamic regularization).

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct SparseLdl {
    n: usize,
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    /// Permuted upper-triangular CSC pattern.
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    /// Position in `ax` of every input triplet.
    map: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    /// Expected pivot sign, in permuted order.
    signs: Vec<f64>,
    pub dynamic_eps: f64,
    pub dynamic_delta: f64,
}

impl SparseLdl {
    /// Analyses the pattern given by upper-triangle `positions` (`row <= col`,
    /// duplicates allowed). `signs[i]` is the expected sign of pivot `i`
    /// (`+1` for primal rows, `-1` for dual rows).
    pub fn new(n: usize, positions: &[(usize, usize)], signs: &[f64]) -> Self {
        assert_eq!(signs.len(), n);
        // Deduplicated pattern including every diagonal.
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            cols[i].push(i);
        }
        for &(r, c) in positions {
            debug_assert!(r <= c);
            cols[c].push(r);
        }
        for c in cols.iter_mut() {
            c.sort_unstable();
            c.dedup();
        }
        let mut cp = vec![0usize; n + 1];
        let mut ci = Vec::new();
        for (j, col) in cols.iter().enumerate() {
            ci.extend_from_slice(col);
            cp[j + 1] = ci.len();
        }

        let perm = if n > 1 {
            match amd::order::<usize>(n, &cp, &ci, &amd::Control::default()) {
                Ok((p, _, _)) => p,
                Err(status) => {
                    log::warn!("AMD ordering failed ({status:?}); using natural order");
                    (0..n).collect()
                }
            }
        } else {
            (0..n).collect()
        };
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // Permuted pattern, again upper triangular.
        let mut pcols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, col) in cols.iter().enumerate() {
            for &i in col {
                let (a, b) = (iperm[i], iperm[j]);
                let (r, c) = if a <= b { (a, b) } else { (b, a) };
                pcols[c].push(r);
            }
        }
        for c in pcols.iter_mut() {
            c.sort_unstable();
            c.dedup();
        }
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::new();
        for (j, col) in pcols.iter().enumerate() {
            ai.extend_from_slice(col);
            ap[j + 1] = ai.len();
        }
        let map = positions
            .iter()
            .map(|&(r, c)| {
                let (a, b) = (iperm[r], iperm[c]);
                let (r, c) = if a <= b { (a, b) } else { (b, a) };
                ap[c] + ai[ap[c]..ap[c + 1]].binary_search(&r).unwrap()
            })
            .collect();

        // Elimination tree and column counts.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz_l = lp[n];
        let signs = perm.iter().map(|&p| signs[p]).collect();

        Self {
            n,
            perm,
            ax: vec![0.0; ai.len()],
            ap,
            ai,
            map,
            etree,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            signs,
            dynamic_eps: 1e-13,
            dynamic_delta: 1e-7,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization. `values[t]` belongs to `positions[t]` given at
    /// construction. Returns the number of regularized pivots.
    pub fn factor(&mut self, values: &[f64]) -> usize {
        assert_eq!(values.len(), self.map.len());
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (t, &v) in values.iter().enumerate() {
            self.ax[self.map[t]] += v;
        }
        let n = self.n;
        let mut y_markers = vec![false; n];
        let mut y_vals = vec![0.0; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        let mut regularized = 0;

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let bidx = self.ai[p];
                if bidx == k {
                    self.d[k] = self.ax[p];
                    continue;
                }
                y_vals[bidx] = self.ax[p];
                if !y_markers[bidx] {
                    y_markers[bidx] = true;
                    elim[0] = bidx;
                    let mut nnz_e = 1;
                    let mut next = self.etree[bidx];
                    while next != NONE && next < k {
                        if y_markers[next] {
                            break;
                        }
                        y_markers[next] = true;
                        elim[nnz_e] = next;
                        nnz_e += 1;
                        next = self.etree[next];
                    }
                    while nnz_e > 0 {
                        nnz_e -= 1;
                        y_idx[nnz_y] = elim[nnz_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let cidx = y_idx[i];
                let tmp = next_space[cidx];
                let yv = y_vals[cidx];
                for j in self.lp[cidx]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yv;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yv * self.dinv[cidx];
                self.d[k] -= yv * self.lx[tmp];
                next_space[cidx] += 1;
                y_vals[cidx] = 0.0;
                y_markers[cidx] = false;
            }
            if self.signs[k] * self.d[k] <= self.dynamic_eps {
                self.d[k] = self.signs[k] * self.dynamic_delta;
                regularized += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        regularized
    }

    /// Solves `L D Lᵀ x = b` in place (in original ordering).
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}
