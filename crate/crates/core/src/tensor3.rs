//! Dense symmetric order-3 tensors over R^k.
//!
//! Third-moment estimates are materialized as full k^3 arrays; `MAX_DIM`
//! keeps the memory footprint at desk scale. Entries are stored in
//! lexicographic index order, `data[(a*k + b)*k + c]`.

use std::io::{Read as _, Write as _};
use std::path::Path;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Largest supported mode dimension (k^3 doubles = 2 MiB at the cap).
pub const MAX_DIM: usize = 64;

const TENSOR_MAGIC: &[u8; 8] = b"CNN1TEN3";
const TENSOR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SymTensor3 {
    k: usize,
    data: Vec<f64>,
}

impl SymTensor3 {
    pub fn zeros(k: usize) -> Result<Self> {
        if k == 0 || k > MAX_DIM {
            return Err(Error::Config(format!(
                "tensor dimension {k} outside supported range 1..={MAX_DIM}"
            )));
        }
        Ok(Self { k, data: vec![0.0; k * k * k] })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn idx(&self, a: usize, b: usize, c: usize) -> usize {
        debug_assert!(a < self.k && b < self.k && c < self.k);
        (a * self.k + b) * self.k + c
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[self.idx(a, b, c)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, value: f64) {
        let i = self.idx(a, b, c);
        self.data[i] = value;
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// self += c * other (dimensions must match).
    pub fn axpy(&mut self, c: f64, other: &SymTensor3) {
        assert_eq!(self.k, other.k, "tensor dimension mismatch");
        for (dst, src) in self.data.iter_mut().zip(&other.data) {
            *dst += c * src;
        }
    }

    /// self += c * v \otimes v \otimes v.
    pub fn add_scaled_outer3(&mut self, v: &[f64], c: f64) {
        assert_eq!(v.len(), self.k, "vector dimension mismatch");
        let k = self.k;
        for a in 0..k {
            let ca = c * v[a];
            for b in 0..k {
                let cab = ca * v[b];
                let base = (a * k + b) * k;
                for cc in 0..k {
                    self.data[base + cc] += cab * v[cc];
                }
            }
        }
    }

    /// self += c * (v tensored with the identity in the symmetrized sense):
    /// T_abc = v_a d_bc + v_b d_ac + v_c d_ab.
    pub fn add_scaled_tilde_outer(&mut self, v: &[f64], c: f64) {
        assert_eq!(v.len(), self.k, "vector dimension mismatch");
        let k = self.k;
        for a in 0..k {
            for b in 0..k {
                let i = self.idx(a, b, b);
                self.data[i] += c * v[a];
                let i = self.idx(b, a, b);
                self.data[i] += c * v[a];
                let i = self.idx(b, b, a);
                self.data[i] += c * v[a];
            }
        }
    }

    /// Averages the 6 index permutations in place. Moment accumulation is
    /// symmetric in exact arithmetic; this removes rounding asymmetry.
    pub fn symmetrize(&mut self) {
        let k = self.k;
        for a in 0..k {
            for b in a..k {
                for c in b..k {
                    let sum = self.get(a, b, c)
                        + self.get(a, c, b)
                        + self.get(b, a, c)
                        + self.get(b, c, a)
                        + self.get(c, a, b)
                        + self.get(c, b, a);
                    let mean = sum / 6.0;
                    self.set(a, b, c, mean);
                    self.set(a, c, b, mean);
                    self.set(b, a, c, mean);
                    self.set(b, c, a, mean);
                    self.set(c, a, b, mean);
                    self.set(c, b, a, mean);
                }
            }
        }
    }

    /// Largest |T_abc - T_pqr| over permuted index triples, relative to the
    /// largest entry magnitude. Zero tensors report zero.
    pub fn max_relative_asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        let k = self.k;
        for a in 0..k {
            for b in a..k {
                for c in b..k {
                    let e = self.get(a, b, c);
                    for other in [
                        self.get(a, c, b),
                        self.get(b, a, c),
                        self.get(b, c, a),
                        self.get(c, a, b),
                        self.get(c, b, a),
                    ] {
                        worst = worst.max((e - other).abs());
                    }
                }
            }
        }
        worst / scale
    }

    /// T(I, u, u): out_a = sum_bc T_abc u_b u_c.
    pub fn contract_vv(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.k, "vector dimension mismatch");
        let k = self.k;
        let mut out = vec![0.0; k];
        for a in 0..k {
            let mut acc = 0.0;
            for b in 0..k {
                let base = (a * k + b) * k;
                let mut inner = 0.0;
                for c in 0..k {
                    inner += self.data[base + c] * u[c];
                }
                acc += u[b] * inner;
            }
            out[a] = acc;
        }
        out
    }

    /// T(u, u, u).
    pub fn contract_vvv(&self, u: &[f64]) -> f64 {
        self.contract_vv(u).iter().zip(u).map(|(a, b)| a * b).sum()
    }

    /// Applies the same matrix to every mode: out_pqs = sum_abc T_abc
    /// M_ap M_bq M_cs. M is k x t; the result has dimension t.
    pub fn mode_product(&self, m: &DMatrix<f64>) -> Result<SymTensor3> {
        assert_eq!(m.nrows(), self.k, "matrix row dimension mismatch");
        let k = self.k;
        let t = m.ncols();
        // Contract one mode at a time: k^3 -> t*k^2 -> t^2*k -> t^3.
        let mut stage1 = vec![0.0; t * k * k];
        for p in 0..t {
            for b in 0..k {
                for c in 0..k {
                    let mut acc = 0.0;
                    for a in 0..k {
                        acc += self.data[(a * k + b) * k + c] * m[(a, p)];
                    }
                    stage1[(p * k + b) * k + c] = acc;
                }
            }
        }
        let mut stage2 = vec![0.0; t * t * k];
        for p in 0..t {
            for q in 0..t {
                for c in 0..k {
                    let mut acc = 0.0;
                    for b in 0..k {
                        acc += stage1[(p * k + b) * k + c] * m[(b, q)];
                    }
                    stage2[(p * t + q) * k + c] = acc;
                }
            }
        }
        let mut out = SymTensor3::zeros(t)?;
        for p in 0..t {
            for q in 0..t {
                for s in 0..t {
                    let mut acc = 0.0;
                    for c in 0..k {
                        acc += stage2[(p * t + q) * k + c] * m[(c, s)];
                    }
                    out.set(p, q, s, acc);
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Flat binary dump: magic, version, k, then k^3 entries in
    /// lexicographic index order, little endian.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&TENSOR_VERSION.to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Config("tensor file: bad magic".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        if u32::from_le_bytes(buf4) != TENSOR_VERSION {
            return Err(Error::Config("tensor file: unsupported version".into()));
        }
        r.read_exact(&mut buf4)?;
        let k = u32::from_le_bytes(buf4) as usize;
        let mut out = SymTensor3::zeros(k)?;
        let mut buf8 = [0u8; 8];
        for v in &mut out.data {
            r.read_exact(&mut buf8)?;
            *v = f64::from_le_bytes(buf8);
        }
        Ok(out)
    }
}

/// c * v^{\otimes 3} as a standalone tensor.
pub fn outer3(v: &[f64], c: f64) -> Result<SymTensor3> {
    let mut t = SymTensor3::zeros(v.len())?;
    t.add_scaled_outer3(v, c);
    Ok(t)
}

/// The symmetrized vector-identity product: T_abc = v_a d_bc + v_b d_ac + v_c d_ab.
pub fn tilde_outer(v: &[f64]) -> Result<SymTensor3> {
    let mut t = SymTensor3::zeros(v.len())?;
    t.add_scaled_tilde_outer(v, 1.0);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tilde_outer_e1_entries() {
        let t = tilde_outer(&[1.0, 0.0]).unwrap();
        assert_eq!(t.get(0, 0, 0), 3.0);
        assert_eq!(t.get(0, 1, 1), 1.0);
        assert_eq!(t.get(1, 0, 1), 1.0);
        assert_eq!(t.get(1, 1, 0), 1.0);
        assert_eq!(t.get(0, 0, 1), 0.0);
        assert_eq!(t.get(0, 1, 0), 0.0);
        assert_eq!(t.get(1, 0, 0), 0.0);
        assert_eq!(t.get(1, 1, 1), 0.0);
    }

    #[test]
    fn tilde_outer_zero_vector() {
        let t = tilde_outer(&[0.0; 3]).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tilde_outer_is_symmetric() {
        let v = [0.3, -1.7, 2.2, 0.9];
        let t = tilde_outer(&v).unwrap();
        assert_eq!(t.max_relative_asymmetry(), 0.0);
    }

    #[test]
    fn outer3_matches_entrywise_product() {
        let v = [1.5, -0.5, 2.0];
        let t = outer3(&v, 2.0).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    assert_relative_eq!(t.get(a, b, c), 2.0 * v[a] * v[b] * v[c]);
                }
            }
        }
    }

    #[test]
    fn contractions_match_brute_force() {
        let v = [0.2, 1.1, -0.7];
        let u = [0.5, -1.0, 0.25];
        let mut t = outer3(&v, 1.0).unwrap();
        t.add_scaled_tilde_outer(&v, 0.5);

        let mut expect_vv = vec![0.0; 3];
        let mut expect_vvv = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    expect_vv[a] += t.get(a, b, c) * u[b] * u[c];
                    expect_vvv += t.get(a, b, c) * u[a] * u[b] * u[c];
                }
            }
        }
        let got = t.contract_vv(&u);
        for a in 0..3 {
            assert_relative_eq!(got[a], expect_vv[a], max_relative = 1e-14);
        }
        assert_relative_eq!(t.contract_vvv(&u), expect_vvv, max_relative = 1e-14);
    }

    #[test]
    fn mode_product_matches_brute_force() {
        let v = [0.4, -0.9, 1.3];
        let mut t = outer3(&v, 1.0).unwrap();
        t.add_scaled_tilde_outer(&[1.0, 0.5, -0.25], 1.0);
        let m = DMatrix::from_row_slice(3, 2, &[0.7, -0.2, 0.1, 0.9, -0.4, 0.3]);

        let got = t.mode_product(&m).unwrap();
        for p in 0..2 {
            for q in 0..2 {
                for s in 0..2 {
                    let mut expect = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            for c in 0..3 {
                                expect += t.get(a, b, c) * m[(a, p)] * m[(b, q)] * m[(c, s)];
                            }
                        }
                    }
                    assert_relative_eq!(got.get(p, q, s), expect, max_relative = 1e-13);
                }
            }
        }
    }

    #[test]
    fn mode_product_rank1_diagonalizes() {
        // For T = 2 v^{x3} and M whose first column is v (unit), the
        // (0,0,0) entry of the product is 2 and cross entries vanish when
        // the second column is orthogonal to v.
        let v = [0.6, 0.8];
        let t = outer3(&v, 2.0).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let got = t.mode_product(&m).unwrap();
        assert_relative_eq!(got.get(0, 0, 0), 2.0, max_relative = 1e-14);
        for (p, q, s) in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 1, 1)] {
            assert!(got.get(p, q, s).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetrize_averages_permutations() {
        let mut t = SymTensor3::zeros(2).unwrap();
        t.set(0, 0, 1, 1.0);
        t.set(0, 1, 0, 4.0);
        t.symmetrize();
        assert_relative_eq!(t.get(0, 0, 1), 5.0 / 3.0);
        assert_relative_eq!(t.get(0, 1, 0), 5.0 / 3.0);
        assert_relative_eq!(t.get(1, 0, 0), 5.0 / 3.0);
        assert_eq!(t.max_relative_asymmetry(), 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m3.bin");
        let mut t = outer3(&[0.1, -2.0, 3.5, 0.0], -1.25).unwrap();
        t.add_scaled_tilde_outer(&[1.0, 2.0, 3.0, 4.0], 0.75);
        t.write_binary(&path).unwrap();
        let back = SymTensor3::read_binary(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn dimension_guard() {
        assert!(SymTensor3::zeros(0).is_err());
        assert!(SymTensor3::zeros(MAX_DIM + 1).is_err());
        assert!(SymTensor3::zeros(MAX_DIM).is_ok());
    }
}
