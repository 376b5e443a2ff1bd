//! Block-structured model matrix.
//!
//! Most columns of the surveillance design depend on a row only through a
//! small key: the registration day selects a row of the time basis, the
//! district selects a row of the spatial basis or a random-effect indicator.
//! Storing those blocks as lookup tables keeps `X'WX` at O(n * p_fixed^2)
//! instead of O(n * p^2).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Columns looked up per row through a key. A row with key `None`
/// contributes zeros. `table == None` means one-hot indicator columns.
#[derive(Debug, Clone)]
pub struct IndexedBlock {
    pub keys: Vec<Option<u32>>,
    pub n_keys: usize,
    pub table: Option<DMatrix<f64>>,
}

impl IndexedBlock {
    pub fn one_hot(keys: Vec<Option<u32>>, n_keys: usize) -> Self {
        Self { keys, n_keys, table: None }
    }

    pub fn lookup(keys: Vec<Option<u32>>, table: DMatrix<f64>) -> Self {
        Self { keys, n_keys: table.nrows(), table: Some(table) }
    }

    pub fn ncols(&self) -> usize {
        self.table.as_ref().map_or(self.n_keys, |t| t.ncols())
    }

    /// `T' v` for a per-key vector `v`.
    fn table_tr_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.table {
            Some(t) => t.tr_mul(v),
            None => v.clone(),
        }
    }

    /// `T b` as a per-key vector.
    fn table_vec(&self, b: &[f64]) -> Vec<f64> {
        match &self.table {
            Some(t) => (t * DVector::from_column_slice(b)).as_slice().to_vec(),
            None => b.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelMatrix {
    n: usize,
    p_fixed: usize,
    fixed: Vec<f64>,
    blocks: Vec<IndexedBlock>,
}

impl ModelMatrix {
    /// `fixed` is row-major with `p_fixed` columns.
    pub fn new(n: usize, p_fixed: usize, fixed: Vec<f64>, blocks: Vec<IndexedBlock>) -> Self {
        assert_eq!(fixed.len(), n * p_fixed, "fixed block has wrong size");
        for b in &blocks {
            assert_eq!(b.keys.len(), n, "indexed block has wrong row count");
        }
        Self { n, p_fixed, fixed, blocks }
    }

    pub fn from_dense(x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let fixed = (0..n).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| x[(i, j)]).collect();
        Self::new(n, p, fixed, Vec::new())
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p_fixed + self.blocks.iter().map(IndexedBlock::ncols).sum::<usize>()
    }

    pub fn p_fixed(&self) -> usize {
        self.p_fixed
    }

    pub fn blocks(&self) -> &[IndexedBlock] {
        &self.blocks
    }

    pub fn fixed_row(&self, i: usize) -> &[f64] {
        &self.fixed[i * self.p_fixed..(i + 1) * self.p_fixed]
    }

    fn block_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.blocks.len());
        let mut at = self.p_fixed;
        for b in &self.blocks {
            starts.push(at);
            at += b.ncols();
        }
        starts
    }

    /// `X beta`.
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        let starts = self.block_starts();
        let per_key: Vec<Vec<f64>> = self
            .blocks
            .iter()
            .zip(&starts)
            .map(|(b, &s)| b.table_vec(&beta[s..s + b.ncols()]))
            .collect();
        let bf = &beta[..self.p_fixed];
        (0..self.n)
            .map(|i| {
                let mut eta: f64 = self.fixed_row(i).iter().zip(bf).map(|(x, b)| x * b).sum();
                for (b, v) in self.blocks.iter().zip(&per_key) {
                    if let Some(k) = b.keys[i] {
                        eta += v[k as usize];
                    }
                }
                eta
            })
            .collect()
    }

    /// `X' v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols());
        let pf = self.p_fixed;
        let mut per_key: Vec<DVector<f64>> = self.blocks.iter().map(|b| DVector::zeros(b.n_keys)).collect();
        for i in 0..self.n {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for (o, x) in out.as_mut_slice()[..pf].iter_mut().zip(self.fixed_row(i)) {
                *o += vi * x;
            }
            for (b, acc) in self.blocks.iter().zip(per_key.iter_mut()) {
                if let Some(k) = b.keys[i] {
                    acc[k as usize] += vi;
                }
            }
        }
        for ((b, s), acc) in self.blocks.iter().zip(self.block_starts()).zip(&per_key) {
            let part = b.table_tr_vec(acc);
            out.rows_mut(s, part.len()).copy_from(&part);
        }
        out
    }

    /// `X' diag(w) X`.
    pub fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        let p = self.ncols();
        let pf = self.p_fixed;
        let nb = self.blocks.len();
        let mut g = DMatrix::<f64>::zeros(p, p);
        let mut ff = vec![0.0; pf * pf];
        let mut fk: Vec<DMatrix<f64>> = self.blocks.iter().map(|b| DMatrix::zeros(pf, b.n_keys)).collect();
        let mut diag: Vec<DVector<f64>> = self.blocks.iter().map(|b| DVector::zeros(b.n_keys)).collect();
        let mut cross: Vec<Vec<DMatrix<f64>>> = (0..nb)
            .map(|a| {
                (0..nb)
                    .map(|c| {
                        if c > a {
                            DMatrix::zeros(self.blocks[a].n_keys, self.blocks[c].n_keys)
                        } else {
                            DMatrix::zeros(0, 0)
                        }
                    })
                    .collect()
            })
            .collect();

        for i in 0..self.n {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            let f = self.fixed_row(i);
            for a in 0..pf {
                let wa = wi * f[a];
                if wa == 0.0 {
                    continue;
                }
                let row = &mut ff[a * pf..(a + 1) * pf];
                for b in a..pf {
                    row[b] += wa * f[b];
                }
            }
            for (bi, blk) in self.blocks.iter().enumerate() {
                let Some(k) = blk.keys[i] else { continue };
                let k = k as usize;
                diag[bi][k] += wi;
                let mut col = fk[bi].column_mut(k);
                for a in 0..pf {
                    col[a] += wi * f[a];
                }
                for ci in bi + 1..nb {
                    if let Some(kc) = self.blocks[ci].keys[i] {
                        cross[bi][ci][(k, kc as usize)] += wi;
                    }
                }
            }
        }

        for a in 0..pf {
            for b in a..pf {
                g[(a, b)] = ff[a * pf + b];
                g[(b, a)] = ff[a * pf + b];
            }
        }
        let starts = self.block_starts();
        for (bi, blk) in self.blocks.iter().enumerate() {
            let s = starts[bi];
            let q = blk.ncols();
            let fb = match &blk.table {
                Some(t) => &fk[bi] * t,
                None => fk[bi].clone(),
            };
            g.view_mut((0, s), (pf, q)).copy_from(&fb);
            g.view_mut((s, 0), (q, pf)).copy_from(&fb.transpose());
            let bb = match &blk.table {
                Some(t) => {
                    let scaled = DMatrix::from_fn(t.nrows(), t.ncols(), |r, c| t[(r, c)] * diag[bi][r]);
                    t.tr_mul(&scaled)
                }
                None => DMatrix::from_diagonal(&diag[bi]),
            };
            g.view_mut((s, s), (q, q)).copy_from(&bb);
            for ci in bi + 1..nb {
                let other = &self.blocks[ci];
                let m = &cross[bi][ci];
                let left = match &blk.table {
                    Some(t) => t.tr_mul(m),
                    None => m.clone(),
                };
                let bc = match &other.table {
                    Some(t) => left * t,
                    None => left,
                };
                let sc = starts[ci];
                g.view_mut((s, sc), (q, other.ncols())).copy_from(&bc);
                g.view_mut((sc, s), (other.ncols(), q)).copy_from(&bc.transpose());
            }
        }
        g
    }

    /// Materialises the full matrix; used for diagnostics and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.ncols();
        let starts = self.block_starts();
        let mut x = DMatrix::zeros(self.n, p);
        for i in 0..self.n {
            for (j, v) in self.fixed_row(i).iter().enumerate() {
                x[(i, j)] = *v;
            }
            for (blk, &s) in self.blocks.iter().zip(&starts) {
                let Some(k) = blk.keys[i] else { continue };
                match &blk.table {
                    Some(t) => {
                        for c in 0..t.ncols() {
                            x[(i, s + c)] = t[(k as usize, c)];
                        }
                    }
                    None => x[(i, s + k as usize)] = 1.0,
                }
            }
        }
        x
    }
}

/// Row-major matrix for persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for StoredMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let data = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
        Self { rows, cols, data }
    }
}

impl From<&StoredMatrix> for DMatrix<f64> {
    fn from(s: &StoredMatrix) -> Self {
        DMatrix::from_row_slice(s.rows, s.cols, &s.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelMatrix {
        let n = 9;
        let fixed: Vec<f64> = (0..n).flat_map(|i| vec![1.0, (i as f64).sin(), (i % 3) as f64]).collect();
        let table = DMatrix::from_fn(4, 2, |r, c| (r as f64 + 1.0) * (c as f64 - 0.5));
        let b1 = IndexedBlock::lookup((0..n).map(|i| Some((i % 4) as u32)).collect(), table);
        let b2 = IndexedBlock::one_hot((0..n).map(|i| if i % 2 == 0 { Some((i % 3) as u32) } else { None }).collect(), 3);
        ModelMatrix::new(n, 3, fixed, vec![b1, b2])
    }

    #[test]
    fn structured_products_match_dense() {
        let m = sample();
        let x = m.to_dense();
        assert_eq!(x.ncols(), m.ncols());
        let w: Vec<f64> = (0..9).map(|i| 0.5 + i as f64 * 0.1).collect();
        let dense = x.transpose() * DMatrix::from_diagonal(&DVector::from_vec(w.clone())) * &x;
        assert!((m.weighted_gram(&w) - &dense).abs().max() < 1e-12);

        let beta: Vec<f64> = (0..m.ncols()).map(|j| (j as f64 * 0.7).cos()).collect();
        let eta = m.mul_vec(&beta);
        let expect = &x * DVector::from_vec(beta);
        for (a, b) in eta.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        let xtv = m.tr_mul_vec(&w);
        let expect = x.transpose() * DVector::from_vec(w);
        assert!((xtv - expect).abs().max() < 1e-12);
    }
}
