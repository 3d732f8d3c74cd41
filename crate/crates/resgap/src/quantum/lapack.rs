//! Thin safe wrappers around the handful of LAPACK routines we need
//! (complex dense eigensolve, dense LU, banded LU), linked from the system
//! OpenBLAS.  All matrices are column-major `Complex64` buffers.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use std::os::raw::c_char;

extern "C" {
    fn zgeev_(
        jobvl: *const c_char,
        jobvr: *const c_char,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        w: *mut C64,
        vl: *mut C64,
        ldvl: *const i32,
        vr: *mut C64,
        ldvr: *const i32,
        work: *mut C64,
        lwork: *const i32,
        rwork: *mut f64,
        info: *mut i32,
    );

    fn zgetrf_(
        m: *const i32,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        ipiv: *mut i32,
        info: *mut i32,
    );

    fn zgetrs_(
        trans: *const c_char,
        n: *const i32,
        nrhs: *const i32,
        a: *const C64,
        lda: *const i32,
        ipiv: *const i32,
        b: *mut C64,
        ldb: *const i32,
        info: *mut i32,
    );

    fn zgbtrf_(
        m: *const i32,
        n: *const i32,
        kl: *const i32,
        ku: *const i32,
        ab: *mut C64,
        ldab: *const i32,
        ipiv: *mut i32,
        info: *mut i32,
    );

    fn zgbtrs_(
        trans: *const c_char,
        n: *const i32,
        kl: *const i32,
        ku: *const i32,
        nrhs: *const i32,
        ab: *const C64,
        ldab: *const i32,
        ipiv: *const i32,
        b: *mut C64,
        ldb: *const i32,
        info: *mut i32,
    );
}

fn check_info(info: i32, routine: &str) -> Result<()> {
    if info == 0 {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{routine} failed with info={info}")))
    }
}

/// Eigenvalues (and optionally right eigenvectors, column-major) of a dense
/// complex matrix given in column-major order.  The input buffer is destroyed.
pub fn eig_dense(a: &mut [C64], n: usize, want_vectors: bool) -> Result<(Vec<C64>, Option<Vec<C64>>)> {
    assert_eq!(a.len(), n * n, "matrix buffer must be n*n");
    let ni = n as i32;
    let jobvl = b'N' as c_char;
    let jobvr = if want_vectors { b'V' } else { b'N' } as c_char;
    let mut w = vec![C64::default(); n];
    let mut vr = if want_vectors { vec![C64::default(); n * n] } else { vec![C64::default(); 1] };
    let ldvr = if want_vectors { ni } else { 1 };
    let mut rwork = vec![0.0f64; 2 * n];
    let mut info = 0i32;

    // workspace query
    let mut work_query = [C64::default(); 1];
    let lwork_query = -1i32;
    unsafe {
        zgeev_(
            &jobvl, &jobvr, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(),
            std::ptr::null_mut(), &1, vr.as_mut_ptr(), &ldvr,
            work_query.as_mut_ptr(), &lwork_query, rwork.as_mut_ptr(), &mut info,
        );
    }
    check_info(info, "zgeev (workspace query)")?;
    let lwork = work_query[0].re as i32;
    let mut work = vec![C64::default(); lwork.max(1) as usize];
    unsafe {
        zgeev_(
            &jobvl, &jobvr, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(),
            std::ptr::null_mut(), &1, vr.as_mut_ptr(), &ldvr,
            work.as_mut_ptr(), &lwork, rwork.as_mut_ptr(), &mut info,
        );
    }
    check_info(info, "zgeev")?;
    Ok((w, want_vectors.then_some(vr)))
}

/// LU factorization of a dense complex matrix (column-major), with solves
/// against A, A^T, or A^H.
pub struct DenseLu {
    n: usize,
    lu: Vec<C64>,
    ipiv: Vec<i32>,
}

impl DenseLu {
    /// Factor `a` (column-major n*n, consumed).
    pub fn factor(mut a: Vec<C64>, n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let ni = n as i32;
        let mut ipiv = vec![0i32; n];
        let mut info = 0i32;
        unsafe {
            zgetrf_(&ni, &ni, a.as_mut_ptr(), &ni, ipiv.as_mut_ptr(), &mut info);
        }
        check_info(info, "zgetrf")?;
        Ok(DenseLu { n, lu: a, ipiv })
    }

    fn solve_trans(&self, b: &mut [C64], trans: u8) -> Result<()> {
        assert_eq!(b.len() % self.n, 0);
        let ni = self.n as i32;
        let nrhs = (b.len() / self.n) as i32;
        let t = trans as c_char;
        let mut info = 0i32;
        unsafe {
            zgetrs_(
                &t, &ni, &nrhs, self.lu.as_ptr(), &ni, self.ipiv.as_ptr(),
                b.as_mut_ptr(), &ni, &mut info,
            );
        }
        check_info(info, "zgetrs")
    }

    /// Solve A x = b in place.
    pub fn solve(&self, b: &mut [C64]) -> Result<()> {
        self.solve_trans(b, b'N')
    }

    /// Solve A^H x = b in place (conjugate transpose).
    pub fn solve_conj_transpose(&self, b: &mut [C64]) -> Result<()> {
        self.solve_trans(b, b'C')
    }
}

/// Banded complex matrix in LAPACK general-band storage, with kl sub- and ku
/// super-diagonals, ready for `zgbtrf`.
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    ab: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, ldab, ab: vec![C64::default(); ldab * n] }
    }

    /// Add `v` to entry (i, j); panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(i + self.ku >= j && j + self.kl >= i, "entry ({i},{j}) outside band");
        let row = self.kl + self.ku + i - j;
        self.ab[j * self.ldab + row] += v;
    }

    /// Factor in place into a banded LU.
    pub fn factor(mut self) -> Result<BandLu> {
        let (ni, kli, kui, ldabi) = (self.n as i32, self.kl as i32, self.ku as i32, self.ldab as i32);
        let mut ipiv = vec![0i32; self.n];
        let mut info = 0i32;
        unsafe {
            zgbtrf_(&ni, &ni, &kli, &kui, self.ab.as_mut_ptr(), &ldabi, ipiv.as_mut_ptr(), &mut info);
        }
        check_info(info, "zgbtrf")?;
        Ok(BandLu { n: self.n, kl: self.kl, ku: self.ku, ldab: self.ldab, ab: self.ab, ipiv })
    }
}

/// Banded LU factorization; solves against A and A^H.
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<C64>,
    ipiv: Vec<i32>,
}

impl BandLu {
    fn solve_trans(&self, b: &mut [C64], trans: u8) -> Result<()> {
        assert_eq!(b.len(), self.n);
        let (ni, kli, kui, ldabi) = (self.n as i32, self.kl as i32, self.ku as i32, self.ldab as i32);
        let nrhs = 1i32;
        let t = trans as c_char;
        let mut info = 0i32;
        unsafe {
            zgbtrs_(
                &t, &ni, &kli, &kui, &nrhs, self.ab.as_ptr(), &ldabi, self.ipiv.as_ptr(),
                b.as_mut_ptr(), &ni, &mut info,
            );
        }
        check_info(info, "zgbtrs")
    }

    /// Solve A x = b in place.
    pub fn solve(&self, b: &mut [C64]) -> Result<()> {
        self.solve_trans(b, b'N')
    }

    /// Solve A^H x = b in place.
    pub fn solve_conj_transpose(&self, b: &mut [C64]) -> Result<()> {
        self.solve_trans(b, b'C')
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_eig_dense_known_spectrum() {
        // [[0, 2], [2, 0]] has eigenvalues -2 and 2.
        let mut a = vec![
            C64::new(0.0, 0.0), C64::new(2.0, 0.0), // column 0
            C64::new(2.0, 0.0), C64::new(0.0, 0.0), // column 1
        ];
        let (w, _) = eig_dense(&mut a, 2, false).expect("eig failed");
        let mut re: Vec<f64> = w.iter().map(|z| z.re).collect();
        re.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((re[0] + 2.0).abs() < 1e-13 && (re[1] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn test_eig_dense_eigenvectors_satisfy_definition() {
        // simple non-normal complex matrix
        let n = 3;
        let mut a: Vec<C64> = (0..9)
            .map(|k| C64::new((k as f64 * 0.37).sin(), (k as f64 * 0.71).cos()))
            .collect();
        let a_copy = a.clone();
        let (w, vr) = eig_dense(&mut a, n, true).expect("eig failed");
        let vr = vr.unwrap();
        for j in 0..n {
            let v = &vr[j * n..(j + 1) * n];
            // residual ||A v - w v||
            let mut res = 0.0f64;
            for i in 0..n {
                let mut av = C64::default();
                for k in 0..n {
                    av += a_copy[k * n + i] * v[k];
                }
                res += (av - w[j] * v[i]).norm_sqr();
            }
            assert!(res.sqrt() < 1e-12, "eigenpair {} residual {}", j, res.sqrt());
        }
    }

    #[test]
    fn test_dense_lu_roundtrip_and_conjugate_transpose_solve() {
        let n = 4;
        let a: Vec<C64> = (0..16)
            .map(|k| C64::new((k as f64 * 0.13).cos() + if k % 5 == 0 { 2.0 } else { 0.0 }, (k as f64 * 0.29).sin()))
            .collect();
        let lu = DenseLu::factor(a.clone(), n).expect("factor failed");
        let x_true: Vec<C64> = (0..n).map(|k| C64::new(k as f64 + 0.5, -(k as f64))).collect();
        // b = A x
        let mut b = vec![C64::default(); n];
        for i in 0..n {
            for k in 0..n {
                b[i] += a[k * n + i] * x_true[k];
            }
        }
        lu.solve(&mut b).expect("solve failed");
        let err: f64 = b.iter().zip(&x_true).map(|(u, v)| (u - v).norm()).sum();
        assert!(err < 1e-11, "dense solve error {err}");

        // bh = A^H x
        let mut bh = vec![C64::default(); n];
        for i in 0..n {
            for k in 0..n {
                bh[i] += a[i * n + k].conj() * x_true[k];
            }
        }
        lu.solve_conj_transpose(&mut bh).expect("solve_conj_transpose failed");
        let errh: f64 = bh.iter().zip(&x_true).map(|(u, v)| (u - v).norm()).sum();
        assert!(errh < 1e-11, "conjugate-transpose solve error {errh}");
    }

    #[test]
    fn test_band_lu_matches_dense_solve() {
        // pentadiagonal test matrix (kl = ku = 2)
        let n = 12;
        let (kl, ku) = (2, 2);
        let entry = |i: usize, j: usize| -> C64 {
            if i == j {
                C64::new(4.0 + 0.1 * i as f64, -0.5)
            } else if i.abs_diff(j) <= 2 {
                C64::new(0.3 / (1.0 + i as f64 + j as f64), 0.2 * (i as f64 - j as f64))
            } else {
                C64::default()
            }
        };
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = vec![C64::default(); n * n];
        for i in 0..n {
            for j in 0..n {
                let v = entry(i, j);
                if v != C64::default() {
                    band.add(i, j, v);
                    dense[j * n + i] = v;
                }
            }
        }
        let blu = band.factor().expect("band factor failed");
        let dlu = DenseLu::factor(dense, n).expect("dense factor failed");
        let b: Vec<C64> = (0..n).map(|k| C64::new((k as f64).sin(), (k as f64).cos())).collect();
        let mut xb = b.clone();
        blu.solve(&mut xb).expect("band solve failed");
        let mut xd = b.clone();
        dlu.solve(&mut xd).expect("dense solve failed");
        let err: f64 = xb.iter().zip(&xd).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "band vs dense solve mismatch {err}");

        let mut xbh = b.clone();
        blu.solve_conj_transpose(&mut xbh).expect("band conj-transpose solve failed");
        let mut xdh = b;
        dlu.solve_conj_transpose(&mut xdh).expect("dense conj-transpose solve failed");
        let errh: f64 = xbh.iter().zip(&xdh).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        assert!(errh < 1e-12, "band vs dense conj-transpose mismatch {errh}");
    }
}
