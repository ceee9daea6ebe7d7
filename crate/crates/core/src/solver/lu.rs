//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! Rows are eliminated right-looking with Markowitz pivot selection under a
//! column threshold; column singletons go first, so slack-heavy bases are
//! nearly free. Basis changes after the factorization are appended as eta
//! columns until the caller refactors.
//!
//! Vectors "in row space" are indexed by constraint row; vectors "in
//! position space" by basis position.

/// Relative column threshold for Markowitz pivots.
const THRESHOLD: f64 = 0.01;
/// Entries below this are treated as structural zeros when pivoting.
const ABS_PIVOT_TOL: f64 = 1e-11;
const ETA_DROP: f64 = 1e-13;

/// Positions that could not be pivoted, paired with rows left uncovered.
#[derive(Debug, Clone, PartialEq)]
pub struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Factor {
    m: usize,
    piv_row: Vec<usize>,
    piv_pos: Vec<usize>,
    diag: Vec<f64>,
    l_start: Vec<usize>,
    l_row: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    u_pos: Vec<usize>,
    u_val: Vec<f64>,
    eta_at: Vec<usize>,
    eta_piv: Vec<f64>,
    eta_start: Vec<usize>,
    eta_idx: Vec<usize>,
    eta_val: Vec<f64>,
}

impl Factor {
    /// Factors the square matrix whose column `p` is `cols[p]` as (row, value) pairs.
    pub fn new(m: usize, cols: &[&[(usize, f64)]]) -> Result<Self, Singular> {
        assert_eq!(cols.len(), m);
        let mut col_vals: Vec<Vec<(usize, f64)>> = cols
            .iter()
            .map(|c| c.iter().copied().filter(|&(_, v)| v != 0.0).collect())
            .collect();
        let mut row_pat: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (p, c) in col_vals.iter().enumerate() {
            for &(i, _) in c {
                row_pat[i].push(p);
            }
        }
        let mut f = Factor {
            m,
            l_start: vec![0],
            u_start: vec![0],
            eta_start: vec![0],
            ..Default::default()
        };
        let mut row_done = vec![false; m];
        let mut pos_done = vec![false; m];
        let mut slot = vec![usize::MAX; m];
        let mut singles: Vec<usize> = (0..m).filter(|&p| col_vals[p].len() == 1).collect();
        let mut lbuf: Vec<(usize, f64)> = Vec::new();
        let mut ubuf: Vec<(usize, f64)> = Vec::new();

        for _ in 0..m {
            let mut chosen = None;
            while let Some(p) = singles.pop() {
                if !pos_done[p] && col_vals[p].len() == 1 && col_vals[p][0].1.abs() > ABS_PIVOT_TOL {
                    chosen = Some((col_vals[p][0].0, p));
                    break;
                }
            }
            if chosen.is_none() {
                chosen = markowitz(&col_vals, &row_pat, &pos_done);
            }
            let Some((r, q)) = chosen else {
                let positions = (0..m).filter(|&p| !pos_done[p]).collect();
                let rows = (0..m).filter(|&i| !row_done[i]).collect();
                return Err(Singular { positions, rows });
            };

            let d = col_vals[q].iter().find(|&&(i, _)| i == r).unwrap().1;
            // pivot row, removed from the other active columns
            ubuf.clear();
            for &j in &row_pat[r] {
                if j == q {
                    continue;
                }
                let c = &mut col_vals[j];
                let k = c.iter().position(|&(i, _)| i == r).unwrap();
                ubuf.push((j, c[k].1));
                c.swap_remove(k);
                if c.len() == 1 {
                    singles.push(j);
                }
            }
            lbuf.clear();
            for &(i, a) in &col_vals[q] {
                if i != r {
                    lbuf.push((i, a / d));
                }
            }
            for &(j, a) in &ubuf {
                let c = &mut col_vals[j];
                for (k, &(i, _)) in c.iter().enumerate() {
                    slot[i] = k;
                }
                for &(i, l) in &lbuf {
                    if slot[i] != usize::MAX {
                        c[slot[i]].1 -= l * a;
                    } else {
                        c.push((i, -l * a));
                        row_pat[i].push(j);
                    }
                }
                for &(i, _) in c.iter() {
                    slot[i] = usize::MAX;
                }
                if c.len() == 1 {
                    singles.push(j);
                }
            }
            for &(i, _) in &lbuf {
                let pat = &mut row_pat[i];
                let k = pat.iter().position(|&p| p == q).unwrap();
                pat.swap_remove(k);
            }
            col_vals[q].clear();
            row_pat[r].clear();
            row_done[r] = true;
            pos_done[q] = true;

            f.piv_row.push(r);
            f.piv_pos.push(q);
            f.diag.push(d);
            for &(i, l) in &lbuf {
                f.l_row.push(i);
                f.l_val.push(l);
            }
            f.l_start.push(f.l_row.len());
            for &(j, a) in &ubuf {
                f.u_pos.push(j);
                f.u_val.push(a);
            }
            f.u_start.push(f.u_pos.len());
        }
        Ok(f)
    }

    pub fn num_etas(&self) -> usize {
        self.eta_at.len()
    }

    /// Whether the update file has grown enough that refactoring pays off.
    pub fn wants_refactor(&self, max_etas: usize) -> bool {
        self.eta_at.len() >= max_etas || self.eta_idx.len() > 2 * (self.l_row.len() + self.u_pos.len() + self.m)
    }

    /// Records that position `r` now holds the column whose FTRAN image is `alpha`.
    pub fn update(&mut self, r: usize, alpha: &[f64]) {
        self.eta_at.push(r);
        self.eta_piv.push(alpha[r]);
        for (i, &a) in alpha.iter().enumerate() {
            if i != r && a.abs() > ETA_DROP {
                self.eta_idx.push(i);
                self.eta_val.push(a);
            }
        }
        self.eta_start.push(self.eta_idx.len());
    }

    /// Solves `B x = b`; `b` is in row space and is overwritten, `x` comes
    /// back in position space.
    pub fn ftran(&self, b: &mut [f64], x: &mut [f64]) {
        for k in 0..self.m {
            let bp = b[self.piv_row[k]];
            if bp != 0.0 {
                for t in self.l_start[k]..self.l_start[k + 1] {
                    b[self.l_row[t]] -= self.l_val[t] * bp;
                }
            }
        }
        for k in (0..self.m).rev() {
            let mut v = b[self.piv_row[k]];
            for t in self.u_start[k]..self.u_start[k + 1] {
                v -= self.u_val[t] * x[self.u_pos[t]];
            }
            x[self.piv_pos[k]] = v / self.diag[k];
        }
        for e in 0..self.eta_at.len() {
            let r = self.eta_at[e];
            let xr = x[r] / self.eta_piv[e];
            x[r] = xr;
            if xr != 0.0 {
                for t in self.eta_start[e]..self.eta_start[e + 1] {
                    x[self.eta_idx[t]] -= self.eta_val[t] * xr;
                }
            }
        }
    }

    /// Solves `y^T B = c^T`; `c` is in position space and is overwritten,
    /// `y` comes back in row space.
    pub fn btran(&self, c: &mut [f64], y: &mut [f64]) {
        for e in (0..self.eta_at.len()).rev() {
            let r = self.eta_at[e];
            let mut v = c[r];
            for t in self.eta_start[e]..self.eta_start[e + 1] {
                v -= self.eta_val[t] * c[self.eta_idx[t]];
            }
            c[r] = v / self.eta_piv[e];
        }
        for k in 0..self.m {
            let w = c[self.piv_pos[k]] / self.diag[k];
            y[self.piv_row[k]] = w;
            if w != 0.0 {
                for t in self.u_start[k]..self.u_start[k + 1] {
                    c[self.u_pos[t]] -= w * self.u_val[t];
                }
            }
        }
        for k in (0..self.m).rev() {
            let p = self.piv_row[k];
            let mut v = y[p];
            for t in self.l_start[k]..self.l_start[k + 1] {
                v -= self.l_val[t] * y[self.l_row[t]];
            }
            y[p] = v;
        }
    }
}

/// Cheapest acceptable pivot among the active columns, as (row, position).
fn markowitz(col_vals: &[Vec<(usize, f64)>], row_pat: &[Vec<usize>], pos_done: &[bool]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, f64, usize, usize)> = None;
    for (p, c) in col_vals.iter().enumerate() {
        if pos_done[p] || c.is_empty() {
            continue;
        }
        let cc = c.len() - 1;
        let cmax = c.iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()));
        if cmax <= ABS_PIVOT_TOL {
            continue;
        }
        for &(i, v) in c {
            let a = v.abs();
            if a < THRESHOLD * cmax || a <= ABS_PIVOT_TOL {
                continue;
            }
            let cost = (row_pat[i].len() - 1) * cc;
            let better = match best {
                None => true,
                Some((bc, ba, ..)) => cost < bc || (cost == bc && a > ba),
            };
            if better {
                best = Some((cost, a, i, p));
            }
        }
        if let Some((0, ..)) = best {
            break;
        }
    }
    best.map(|(_, _, i, p)| (i, p))
}
