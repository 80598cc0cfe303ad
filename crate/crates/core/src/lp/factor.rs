//! Sparse LU factorization of a basis matrix with product-form (eta) updates.
//!
//! The factorization is left-looking: columns are processed in order of
//! increasing nonzero count, each one is reduced against the previously computed
//! `L` columns (only those reachable from its pattern), and the pivot row is
//! picked by threshold partial pivoting with a preference for sparse rows.
//! Subsequent basis changes are appended as eta vectors until the next refactor.

const DROP_TOL: f64 = 1e-14;
const SINGULAR_TOL: f64 = 1e-11;
const PIVOT_THRESHOLD: f64 = 0.1;
const UNSET: usize = usize::MAX;

#[derive(Debug, Default, Clone)]
struct Packed {
    start: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Packed {
    fn with_capacity(cols: usize) -> Self {
        let mut start = Vec::with_capacity(cols + 1);
        start.push(0);
        Self {
            start,
            idx: Vec::new(),
            val: Vec::new(),
        }
    }

    fn close(&mut self) {
        self.start.push(self.idx.len());
    }

    fn col(&self, k: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.start[k], self.start[k + 1]);
        (&self.idx[a..b], &self.val[a..b])
    }

    fn len(&self) -> usize {
        self.start.len() - 1
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LuFactor {
    m: usize,
    /// Pivot step -> pivot row.
    prow: Vec<usize>,
    /// Pivot step -> basis position.
    qpos: Vec<usize>,
    diag: Vec<f64>,
    /// Subdiagonal multipliers per step (rows pivoted later).
    lower: Packed,
    /// Superdiagonal entries per step (rows pivoted earlier).
    upper: Packed,
    eta_pos: Vec<usize>,
    eta_pivot: Vec<f64>,
    etas: Packed,
}

/// Outcome of a factorization: basis positions whose column was numerically
/// dependent are reassigned to the slack of the listed row.
pub(crate) struct Factorization {
    pub factor: LuFactor,
    pub replaced: Vec<(usize, usize)>,
}

impl LuFactor {
    /// Factorizes the `m x m` matrix whose column at position `p` is `columns[p]`
    /// (sparse `(row, value)` pairs).
    pub(crate) fn new(m: usize, columns: &[Vec<(usize, f64)>]) -> Factorization {
        debug_assert_eq!(columns.len(), m);
        let mut row_count = vec![0usize; m];
        for col in columns {
            for &(r, _) in col {
                row_count[r] += 1;
            }
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&p| columns[p].len());

        let mut f = LuFactor {
            m,
            prow: Vec::with_capacity(m),
            qpos: Vec::with_capacity(m),
            diag: Vec::with_capacity(m),
            lower: Packed::with_capacity(m),
            upper: Packed::with_capacity(m),
            eta_pos: Vec::new(),
            eta_pivot: Vec::new(),
            etas: Packed::with_capacity(0),
        };

        let mut step_of_row = vec![UNSET; m];
        let mut work = vec![0.0f64; m];
        let mut in_pattern = vec![false; m];
        let mut pattern: Vec<usize> = Vec::new();
        let mut visited = vec![false; m];
        let mut topo: Vec<usize> = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut deficient: Vec<usize> = Vec::new();

        for &pos in &order {
            for &(r, v) in &columns[pos] {
                if !in_pattern[r] {
                    in_pattern[r] = true;
                    pattern.push(r);
                }
                work[r] += v;
            }

            // Rows already pivoted that the column reaches through L, in topological order.
            topo.clear();
            for &(src, _) in &columns[pos] {
                if step_of_row[src] == UNSET || visited[src] {
                    continue;
                }
                visited[src] = true;
                stack.push((src, 0));
                while let Some(top) = stack.len().checked_sub(1) {
                    let (r, mut next) = stack[top];
                    let (idx, _) = f.lower.col(step_of_row[r]);
                    let mut child = None;
                    while next < idx.len() {
                        let c = idx[next];
                        next += 1;
                        if step_of_row[c] != UNSET && !visited[c] {
                            child = Some(c);
                            break;
                        }
                    }
                    stack[top].1 = next;
                    match child {
                        Some(c) => {
                            visited[c] = true;
                            stack.push((c, 0));
                        }
                        None => {
                            topo.push(r);
                            stack.pop();
                        }
                    }
                }
            }
            for &r in topo.iter().rev() {
                visited[r] = false;
                let v = work[r];
                if v == 0.0 {
                    continue;
                }
                let (idx, val) = f.lower.col(step_of_row[r]);
                for (&i, &l) in idx.iter().zip(val) {
                    if !in_pattern[i] {
                        in_pattern[i] = true;
                        pattern.push(i);
                    }
                    work[i] -= l * v;
                }
            }

            let mut amax = 0.0f64;
            for &r in &pattern {
                if step_of_row[r] == UNSET {
                    amax = amax.max(work[r].abs());
                }
            }
            if amax < SINGULAR_TOL {
                deficient.push(pos);
                for &r in &pattern {
                    work[r] = 0.0;
                    in_pattern[r] = false;
                }
                pattern.clear();
                continue;
            }
            let mut best = UNSET;
            for &r in &pattern {
                if step_of_row[r] != UNSET || work[r].abs() < PIVOT_THRESHOLD * amax {
                    continue;
                }
                best = match best {
                    UNSET => r,
                    b => {
                        let better = row_count[r] < row_count[b]
                            || (row_count[r] == row_count[b]
                                && (work[r].abs() > work[b].abs()
                                    || (work[r].abs() == work[b].abs() && r < b)));
                        if better {
                            r
                        } else {
                            b
                        }
                    }
                };
            }
            let piv = work[best];
            let step = f.prow.len();
            for &r in &pattern {
                let v = work[r];
                if r == best || v.abs() <= DROP_TOL {
                    continue;
                }
                if step_of_row[r] == UNSET {
                    f.lower.idx.push(r);
                    f.lower.val.push(v / piv);
                } else {
                    f.upper.idx.push(r);
                    f.upper.val.push(v);
                }
            }
            f.lower.close();
            f.upper.close();
            f.prow.push(best);
            f.qpos.push(pos);
            f.diag.push(piv);
            step_of_row[best] = step;

            for &r in &pattern {
                work[r] = 0.0;
                in_pattern[r] = false;
            }
            pattern.clear();
        }

        let mut replaced = Vec::new();
        if !deficient.is_empty() {
            let mut free_rows = (0..m).filter(|&r| step_of_row[r] == UNSET);
            for pos in deficient {
                let r = free_rows
                    .next()
                    .expect("row and column deficiency counts match");
                f.lower.close();
                f.upper.close();
                f.prow.push(r);
                f.qpos.push(pos);
                f.diag.push(1.0);
                replaced.push((pos, r));
            }
        }
        debug_assert_eq!(f.lower.len(), m);
        Factorization {
            factor: f,
            replaced,
        }
    }

    pub(crate) fn num_updates(&self) -> usize {
        self.eta_pos.len()
    }

    /// Records the replacement of the column at basis position `pos` by a column
    /// whose representation in the current basis is `alpha` (indexed by position).
    pub(crate) fn update(&mut self, pos: usize, alpha: &[f64]) {
        self.eta_pos.push(pos);
        self.eta_pivot.push(alpha[pos]);
        for (i, &a) in alpha.iter().enumerate() {
            if i != pos && a.abs() > DROP_TOL {
                self.etas.idx.push(i);
                self.etas.val.push(a);
            }
        }
        self.etas.close();
    }

    /// Solves `B x = rhs`. `rhs` is indexed by row and is overwritten; the result
    /// is written to `out`, indexed by basis position.
    pub(crate) fn ftran(&self, rhs: &mut [f64], out: &mut [f64]) {
        for k in 0..self.m {
            let v = rhs[self.prow[k]];
            if v == 0.0 {
                continue;
            }
            let (idx, val) = self.lower.col(k);
            for (&i, &l) in idx.iter().zip(val) {
                rhs[i] -= l * v;
            }
        }
        for k in (0..self.m).rev() {
            let z = rhs[self.prow[k]] / self.diag[k];
            out[self.qpos[k]] = z;
            if z == 0.0 {
                continue;
            }
            let (idx, val) = self.upper.col(k);
            for (&i, &u) in idx.iter().zip(val) {
                rhs[i] -= u * z;
            }
        }
        for e in 0..self.eta_pos.len() {
            let pos = self.eta_pos[e];
            let xr = out[pos] / self.eta_pivot[e];
            out[pos] = xr;
            if xr == 0.0 {
                continue;
            }
            let (idx, val) = self.etas.col(e);
            for (&i, &a) in idx.iter().zip(val) {
                out[i] -= a * xr;
            }
        }
    }

    /// Solves `B^T y = c`. `c` is indexed by basis position and is overwritten;
    /// the result is written to `out`, indexed by row.
    pub(crate) fn btran(&self, c: &mut [f64], out: &mut [f64]) {
        for e in (0..self.eta_pos.len()).rev() {
            let pos = self.eta_pos[e];
            let (idx, val) = self.etas.col(e);
            let mut s = c[pos];
            for (&i, &a) in idx.iter().zip(val) {
                s -= a * c[i];
            }
            c[pos] = s / self.eta_pivot[e];
        }
        for k in 0..self.m {
            let (idx, val) = self.upper.col(k);
            let mut s = c[self.qpos[k]];
            for (&r, &u) in idx.iter().zip(val) {
                s -= u * out[r];
            }
            out[self.prow[k]] = s / self.diag[k];
        }
        for k in (0..self.m).rev() {
            let (idx, val) = self.lower.col(k);
            if idx.is_empty() {
                continue;
            }
            let mut s = out[self.prow[k]];
            for (&r, &l) in idx.iter().zip(val) {
                s -= l * out[r];
            }
            out[self.prow[k]] = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_to_cols(a: &[Vec<f64>]) -> Vec<Vec<(usize, f64)>> {
        let m = a.len();
        (0..m)
            .map(|c| {
                (0..m)
                    .filter(|&r| a[r][c] != 0.0)
                    .map(|r| (r, a[r][c]))
                    .collect()
            })
            .collect()
    }

    fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
            .collect()
    }

    fn mat_t_vec(a: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let m = a.len();
        (0..m)
            .map(|c| (0..m).map(|r| a[r][c] * y[r]).sum())
            .collect()
    }

    #[test]
    fn solves_small_dense_system_both_ways() {
        let a = vec![
            vec![2.0, 0.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.0, 0.0],
            vec![0.0, 1.0, 4.0, 1.0],
            vec![0.0, 0.0, 1.0, 5.0],
        ];
        let fz = LuFactor::new(4, &dense_to_cols(&a));
        assert!(fz.replaced.is_empty());
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let mut rhs = matvec(&a, &x_true);
        let mut x = vec![0.0; 4];
        fz.factor.ftran(&mut rhs, &mut x);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
        let y_true = [0.25, 1.0, -1.0, 2.0];
        let mut c = mat_t_vec(&a, &y_true);
        let mut y = vec![0.0; 4];
        fz.factor.btran(&mut c, &mut y);
        for (u, v) in y.iter().zip(&y_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn eta_updates_track_column_replacement() {
        let mut a = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let mut f = LuFactor::new(3, &dense_to_cols(&a)).factor;
        // Replace column 1 by (1, 2, 3).
        let newcol = [1.0, 2.0, 3.0];
        let mut rhs = newcol.to_vec();
        let mut alpha = vec![0.0; 3];
        f.ftran(&mut rhs, &mut alpha);
        f.update(1, &alpha);
        for (r, row) in a.iter_mut().enumerate() {
            row[1] = newcol[r];
        }
        let x_true = [0.5, -1.0, 2.0];
        let mut rhs = matvec(&a, &x_true);
        let mut x = vec![0.0; 3];
        f.ftran(&mut rhs, &mut x);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
        let y_true = [1.0, 2.0, -0.5];
        let mut c = mat_t_vec(&a, &y_true);
        let mut y = vec![0.0; 3];
        f.btran(&mut c, &mut y);
        for (u, v) in y.iter().zip(&y_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn dependent_columns_are_reported() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let fz = LuFactor::new(2, &dense_to_cols(&a));
        assert_eq!(fz.replaced.len(), 1);
    }
}
