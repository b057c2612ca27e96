//! Givens-rotation angle codec for beamforming targets.
//!
//! A beamforming target `V̄` (the first `N_s` right singular vectors of a
//! channel matrix, `N_t x N_s` with orthonormal columns) is canonicalized so
//! its last row is real and nonnegative, then factored into per-column phases
//! `φ` and planar rotation angles `ψ`. The factorization is exact: feeding the
//! extracted angles back through [`reconstruct_target`] reproduces the
//! canonicalized matrix to machine precision, and any real angle values (for
//! example quantized ones) reconstruct to a matrix with orthonormal columns.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;

/// Static geometry of the angle codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GivensConfig {
    pub n_t: usize,
    pub n_s: usize,
}

impl GivensConfig {
    pub fn new(n_t: usize, n_s: usize) -> Result<Self> {
        if n_s == 0 || n_t == 0 || n_s > n_t {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= N_s <= N_t, got N_t={n_t}, N_s={n_s}"
            )));
        }
        Ok(Self { n_t, n_s })
    }

    /// Number of angles of each type (φ and ψ) per subcarrier.
    pub fn num_angle_pairs(&self) -> usize {
        num_angle_pairs(self.n_t, self.n_s)
    }

    /// Number of column sweeps in the factorization (zero for 1x1 targets,
    /// whose single angle slot stays zero).
    pub fn sweeps(&self) -> usize {
        self.n_s.min(self.n_t - 1)
    }
}

/// Angles of each type per subcarrier: sum of (N_t - i) over sweeps i,
/// floored at 1 so degenerate 1x1 targets still carry one (zero) angle pair.
pub fn num_angle_pairs(n_t: usize, n_s: usize) -> usize {
    let sweeps = n_s.min(n_t.saturating_sub(1));
    let count: usize = (1..=sweeps).map(|i| n_t - i).sum();
    count.max(1)
}

/// Angle parameters for one snapshot: two real planes of shape `N_a x N_c`,
/// rows in feedback order (per sweep: φ rows top-down, ψ rows top-down),
/// columns indexed by subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSet {
    pub n_a: usize,
    pub n_c: usize,
    /// Row-major `n_a x n_c`, radians, canonical range [0, 2π).
    pub phi: Vec<f64>,
    /// Row-major `n_a x n_c`, radians, canonical range [0, π/2].
    pub psi: Vec<f64>,
}

impl AngleSet {
    pub fn zeros(n_a: usize, n_c: usize) -> Self {
        Self { n_a, n_c, phi: vec![0.0; n_a * n_c], psi: vec![0.0; n_a * n_c] }
    }

    pub fn phi_at(&self, a: usize, k: usize) -> f64 {
        self.phi[a * self.n_c + k]
    }

    pub fn psi_at(&self, a: usize, k: usize) -> f64 {
        self.psi[a * self.n_c + k]
    }

    /// Flattened network layout: the φ plane followed by the ψ plane.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.n_a * self.n_c);
        out.extend_from_slice(&self.phi);
        out.extend_from_slice(&self.psi);
        out
    }

    pub fn from_flat(n_a: usize, n_c: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * n_a * n_c {
            return Err(Error::ShapeMismatch(format!(
                "angle vector length {} != 2*{n_a}*{n_c}",
                flat.len()
            )));
        }
        Ok(Self {
            n_a,
            n_c,
            phi: flat[..n_a * n_c].to_vec(),
            psi: flat[n_a * n_c..].to_vec(),
        })
    }

    pub fn len_flat(&self) -> usize {
        2 * self.n_a * self.n_c
    }
}

/// Wrap an angle to [0, 2π).
pub fn wrap_two_pi(x: f64) -> f64 {
    let mut y = x % TAU;
    if y < 0.0 {
        y += TAU;
    }
    // `% TAU` can return TAU itself after the negative fixup at roundoff.
    if y >= TAU {
        y = 0.0;
    }
    y
}

/// Result of last-row phase removal: `v = v_bar * diag(conj(d))`, where `d`
/// holds the unit-modulus phases of the last row of `v_bar`.
#[derive(Debug, Clone)]
pub struct Canonicalized {
    pub v: DMatrix<Complex64>,
    /// Diagonal entries of D̃, one per column.
    pub d: Vec<Complex64>,
}

/// Remove the phase of the last row so it becomes real and nonnegative.
/// A zero last-row entry has undefined phase; it is treated as phase 0.
pub fn canonicalize(v_bar: &DMatrix<Complex64>) -> Canonicalized {
    let last = v_bar.nrows() - 1;
    let d: Vec<Complex64> = (0..v_bar.ncols())
        .map(|c| {
            let x = v_bar[(last, c)];
            if x.norm() == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, x.arg())
            }
        })
        .collect();
    let mut v = v_bar.clone();
    for c in 0..v.ncols() {
        let phase = d[c].conj();
        for r in 0..v.nrows() {
            v[(r, c)] *= phase;
        }
        // The math guarantees a real nonnegative entry; pin the imaginary
        // part so downstream comparisons see exactly that.
        v[(last, c)] = Complex64::new(v[(last, c)].re.max(0.0), 0.0);
    }
    Canonicalized { v, d }
}

/// D_i(φ) as a dense matrix: identity with e^{jφ_{l,i}} at rows i..N_t-1
/// (1-based sweep index `i`, `phi_col` holding those N_t-i phases).
pub fn givens_d_matrix(phi_col: &[f64], i: usize, n_t: usize) -> Result<DMatrix<Complex64>> {
    if i < 1 || i > n_t || phi_col.len() != n_t - i {
        return Err(Error::InvalidConfig(format!(
            "D_{i} needs {} phases for N_t={n_t}, got {}",
            n_t.saturating_sub(i),
            phi_col.len()
        )));
    }
    let mut m = DMatrix::identity(n_t, n_t);
    for (off, &phi) in phi_col.iter().enumerate() {
        let l = i - 1 + off;
        m[(l, l)] = Complex64::from_polar(1.0, phi);
    }
    Ok(m)
}

/// G_{l,i}(ψ): identity with the planar rotation
/// [[cos, sin], [-sin, cos]] in rows/columns (i, l), 1-based, i < l.
pub fn givens_g_matrix(psi: f64, l: usize, i: usize, n_t: usize) -> Result<DMatrix<Complex64>> {
    if i < 1 || l <= i || l > n_t {
        return Err(Error::InvalidConfig(format!(
            "G_{{{l},{i}}} needs 1 <= i < l <= N_t={n_t}"
        )));
    }
    let (c, s) = (psi.cos(), psi.sin());
    let mut m = DMatrix::identity(n_t, n_t);
    m[(i - 1, i - 1)] = Complex64::new(c, 0.0);
    m[(i - 1, l - 1)] = Complex64::new(s, 0.0);
    m[(l - 1, i - 1)] = Complex64::new(-s, 0.0);
    m[(l - 1, l - 1)] = Complex64::new(c, 0.0);
    Ok(m)
}

fn angle_slot(cfg: &GivensConfig, sweep: usize, row: usize) -> usize {
    // Row offset of sweep `i` (1-based) in the angle planes, plus the
    // position of `row` within the sweep.
    let base: usize = (1..sweep).map(|s| cfg.n_t - s).sum();
    base + row
}

/// Extract angle parameters from one beamforming target per subcarrier.
///
/// Each target is canonicalized first; the returned angles satisfy
/// φ ∈ [0, 2π) and ψ ∈ [0, π/2]. Fails if an input does not reduce to the
/// zero-padded identity (i.e. its columns were not orthonormal).
pub fn extract_angles(cfg: &GivensConfig, targets: &[DMatrix<Complex64>]) -> Result<AngleSet> {
    let n_a = cfg.num_angle_pairs();
    let n_c = targets.len();
    let mut out = AngleSet::zeros(n_a, n_c);
    for (k, v_bar) in targets.iter().enumerate() {
        if v_bar.nrows() != cfg.n_t || v_bar.ncols() != cfg.n_s {
            return Err(Error::ShapeMismatch(format!(
                "target {k} is {}x{}, expected {}x{}",
                v_bar.nrows(),
                v_bar.ncols(),
                cfg.n_t,
                cfg.n_s
            )));
        }
        let mut v = canonicalize(v_bar).v;
        for i in 1..=cfg.sweeps() {
            // Column i: phases of rows i..N_t-1, then zero the sub-diagonal
            // entries with planar rotations against the growing pivot.
            for l in i..cfg.n_t {
                let slot = angle_slot(cfg, i, l - i);
                let phi = wrap_two_pi(v[(l - 1, i - 1)].arg());
                out.phi[slot * n_c + k] = phi;
                let rot = Complex64::from_polar(1.0, -phi);
                for c in (i - 1)..cfg.n_s {
                    v[(l - 1, c)] *= rot;
                }
            }
            for l in (i + 1)..=cfg.n_t {
                let slot = angle_slot(cfg, i, l - i - 1);
                let num = v[(l - 1, i - 1)].re.max(0.0);
                let den = v[(i - 1, i - 1)].re;
                let psi = num.atan2(den).clamp(0.0, std::f64::consts::FRAC_PI_2);
                out.psi[slot * n_c + k] = psi;
                let (c, s) = (psi.cos(), psi.sin());
                for col in (i - 1)..cfg.n_s {
                    let top = v[(i - 1, col)];
                    let bot = v[(l - 1, col)];
                    v[(i - 1, col)] = c * top + s * bot;
                    v[(l - 1, col)] = -s * top + c * bot;
                }
            }
        }
        // After a full sweep the working matrix must be I_{N_t x N_s}.
        let mut residual = 0.0f64;
        for r in 0..cfg.n_t {
            for c in 0..cfg.n_s {
                let expect = if r == c { 1.0 } else { 0.0 };
                residual += (v[(r, c)] - Complex64::new(expect, 0.0)).norm_sqr();
            }
        }
        if residual.sqrt() > 1e-6 {
            return Err(Error::NotOrthonormal(residual.sqrt()));
        }
    }
    Ok(out)
}

/// Rebuild one target matrix per subcarrier from angle parameters.
///
/// Accepts any real angle values; the output always has orthonormal columns
/// and a real last row because it is a product of unitary factors applied to
/// the zero-padded identity.
pub fn reconstruct_target(cfg: &GivensConfig, angles: &AngleSet) -> Result<Vec<DMatrix<Complex64>>> {
    let n_a = cfg.num_angle_pairs();
    if angles.n_a != n_a {
        return Err(Error::ShapeMismatch(format!(
            "angle set has N_a={}, geometry needs {}",
            angles.n_a, n_a
        )));
    }
    let n_c = angles.n_c;
    let mut out = Vec::with_capacity(n_c);
    for k in 0..n_c {
        let mut m = DMatrix::<Complex64>::zeros(cfg.n_t, cfg.n_s);
        for c in 0..cfg.n_s.min(cfg.n_t) {
            m[(c, c)] = Complex64::new(1.0, 0.0);
        }
        // V = prod_i [ D_i * prod_l G_{l,i}^T ] * I; apply factors right to
        // left: sweeps descending, G^T with l descending, then D_i.
        for i in (1..=cfg.sweeps()).rev() {
            for l in ((i + 1)..=cfg.n_t).rev() {
                let slot = angle_slot(cfg, i, l - i - 1);
                let psi = angles.psi[slot * n_c + k];
                let (c, s) = (psi.cos(), psi.sin());
                for col in 0..cfg.n_s {
                    let top = m[(i - 1, col)];
                    let bot = m[(l - 1, col)];
                    m[(i - 1, col)] = c * top - s * bot;
                    m[(l - 1, col)] = s * top + c * bot;
                }
            }
            for l in i..cfg.n_t {
                let slot = angle_slot(cfg, i, l - i);
                let rot = Complex64::from_polar(1.0, angles.phi[slot * n_c + k]);
                for col in 0..cfg.n_s {
                    m[(l - 1, col)] *= rot;
                }
            }
        }
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub(crate) fn random_orthonormal(
        n_t: usize,
        n_s: usize,
        rng: &mut impl Rng,
    ) -> DMatrix<Complex64> {
        // QR of a complex Gaussian matrix yields Haar-distributed columns.
        let g = DMatrix::from_fn(n_t, n_t, |_, _| {
            c(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal))
        });
        let qr = g.qr();
        let q = qr.q();
        q.columns(0, n_s).into_owned()
    }

    fn frob(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn angle_pair_counts_match_known_configs() {
        assert_eq!(num_angle_pairs(8, 2), 13);
        assert_eq!(num_angle_pairs(3, 3), 3);
        assert_eq!(num_angle_pairs(1, 1), 1);
        assert_eq!(num_angle_pairs(4, 2), 5);
        assert_eq!(num_angle_pairs(2, 1), 1);
        assert_eq!(num_angle_pairs(4, 4), 6);
    }

    #[test]
    fn canonicalize_leaves_real_nonnegative_last_row_alone() {
        let v = DMatrix::from_column_slice(2, 1, &[c(0.6, 0.0), c(0.8, 0.0)]);
        let canon = canonicalize(&v);
        assert_eq!(canon.v, v);
        assert_eq!(canon.d, vec![c(1.0, 0.0)]);
    }

    #[test]
    fn canonicalize_two_by_one_example() {
        // V̄ = [0.8660 e^{jπ/2}; 0.5 e^{jπ/6}]: the last row phase π/6 moves
        // into D̃ and the last entry becomes the real magnitude 0.5.
        let a = 3.0f64.sqrt() / 2.0;
        let v = DMatrix::from_column_slice(
            2,
            1,
            &[
                Complex64::from_polar(a, std::f64::consts::FRAC_PI_2),
                Complex64::from_polar(0.5, std::f64::consts::FRAC_PI_6),
            ],
        );
        let canon = canonicalize(&v);
        assert!((canon.v[(1, 0)] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((canon.d[0] - Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_6)).norm() < 1e-15);
        // Idempotence.
        let again = canonicalize(&canon.v);
        assert!(frob(&(again.v - &canon.v)) < 1e-15);
    }

    #[test]
    fn canonicalize_treats_zero_last_row_entry_as_phase_zero() {
        let v = DMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let canon = canonicalize(&v);
        assert_eq!(canon.d, vec![c(1.0, 0.0)]);
        assert_eq!(canon.v, v);
    }

    #[test]
    fn d_matrix_identity_when_phases_zero() {
        let d = givens_d_matrix(&[0.0, 0.0], 1, 3).unwrap();
        assert!(frob(&(&d - DMatrix::<Complex64>::identity(3, 3))) < 1e-15);
    }

    #[test]
    fn g_matrix_identity_at_zero_and_orthogonal_otherwise() {
        let g0 = givens_g_matrix(0.0, 2, 1, 3).unwrap();
        assert!(frob(&(&g0 - DMatrix::<Complex64>::identity(3, 3))) < 1e-15);
        let g = givens_g_matrix(0.7, 3, 1, 3).unwrap();
        let prod = &g * g.transpose();
        assert!(frob(&(prod - DMatrix::<Complex64>::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn matrix_builders_reject_bad_indices() {
        assert!(givens_d_matrix(&[0.0], 0, 3).is_err());
        assert!(givens_d_matrix(&[0.0], 1, 3).is_err());
        assert!(givens_g_matrix(0.1, 1, 1, 3).is_err());
        assert!(givens_g_matrix(0.1, 4, 1, 3).is_err());
    }

    #[test]
    fn extract_two_by_one_analytic_example() {
        // Algorithm on V̄ = [0.8660 e^{jπ/2}; 0.5] gives φ = π/2 (phase of the
        // first entry) and ψ = atan(0.5 / 0.8660) = π/6.
        let a = 3.0f64.sqrt() / 2.0;
        let cfg = GivensConfig::new(2, 1).unwrap();
        let v = DMatrix::from_column_slice(
            2,
            1,
            &[Complex64::from_polar(a, std::f64::consts::FRAC_PI_2), c(0.5, 0.0)],
        );
        let angles = extract_angles(&cfg, &[v]).unwrap();
        assert!((angles.phi_at(0, 0) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((angles.psi_at(0, 0) - std::f64::consts::FRAC_PI_6).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_two_by_one_analytic_example() {
        let cfg = GivensConfig::new(2, 1).unwrap();
        let mut angles = AngleSet::zeros(1, 1);
        angles.phi[0] = std::f64::consts::FRAC_PI_2;
        angles.psi[0] = std::f64::consts::FRAC_PI_6;
        let v = &reconstruct_target(&cfg, &angles).unwrap()[0];
        let a = 3.0f64.sqrt() / 2.0;
        assert!((v[(0, 0)] - Complex64::from_polar(a, std::f64::consts::FRAC_PI_2)).norm() < 1e-12);
        assert!((v[(1, 0)] - c(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn identity_target_gives_all_zero_angles() {
        let cfg = GivensConfig::new(4, 2).unwrap();
        let mut v = DMatrix::<Complex64>::zeros(4, 2);
        v[(0, 0)] = c(1.0, 0.0);
        v[(1, 1)] = c(1.0, 0.0);
        let angles = extract_angles(&cfg, &[v]).unwrap();
        assert!(angles.phi.iter().chain(angles.psi.iter()).all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn zero_angles_reconstruct_padded_identity() {
        let cfg = GivensConfig::new(4, 2).unwrap();
        let angles = AngleSet::zeros(cfg.num_angle_pairs(), 3);
        for v in reconstruct_target(&cfg, &angles).unwrap() {
            for r in 0..4 {
                for c_ in 0..2 {
                    let expect = if r == c_ { 1.0 } else { 0.0 };
                    assert!((v[(r, c_)] - c(expect, 0.0)).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn reconstruction_against_dense_matrix_product_oracle() {
        // Independent oracle: build V directly as the literal product of
        // dense D and G^T factors in equation order for a 4x2 geometry.
        let cfg = GivensConfig::new(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phi: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..TAU)).collect();
        let psi: Vec<f64> =
            (0..5).map(|_| rng.gen_range(0.0..std::f64::consts::FRAC_PI_2)).collect();

        let mut oracle = DMatrix::<Complex64>::identity(4, 4);
        // Sweep 1: D_1(φ_{1,1},φ_{2,1},φ_{3,1}) G_{21}^T G_{31}^T G_{41}^T.
        oracle *= givens_d_matrix(&phi[0..3], 1, 4).unwrap();
        oracle *= givens_g_matrix(psi[0], 2, 1, 4).unwrap().transpose();
        oracle *= givens_g_matrix(psi[1], 3, 1, 4).unwrap().transpose();
        oracle *= givens_g_matrix(psi[2], 4, 1, 4).unwrap().transpose();
        // Sweep 2: D_2(φ_{2,2},φ_{3,2}) G_{32}^T G_{42}^T.
        oracle *= givens_d_matrix(&phi[3..5], 2, 4).unwrap();
        oracle *= givens_g_matrix(psi[3], 3, 2, 4).unwrap().transpose();
        oracle *= givens_g_matrix(psi[4], 4, 2, 4).unwrap().transpose();
        let oracle = oracle.columns(0, 2).into_owned();

        let mut angles = AngleSet::zeros(5, 1);
        angles.phi.copy_from_slice(&phi);
        angles.psi.copy_from_slice(&psi);
        let got = &reconstruct_target(&cfg, &angles).unwrap()[0];
        assert!(frob(&(got - &oracle)) < 1e-12);
    }

    #[test]
    fn roundtrip_random_targets_all_required_geometries() {
        for &(n_t, n_s) in &[(2usize, 1usize), (3, 3), (4, 2), (8, 2)] {
            let cfg = GivensConfig::new(n_t, n_s).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42 + n_t as u64 * 10 + n_s as u64);
            for _ in 0..50 {
                let v_bar = random_orthonormal(n_t, n_s, &mut rng);
                let canon = canonicalize(&v_bar).v;
                let angles = extract_angles(&cfg, &[v_bar]).unwrap();
                let rec = &reconstruct_target(&cfg, &angles).unwrap()[0];
                let err = frob(&(rec - &canon)) / frob(&canon);
                assert!(err < 1e-9, "roundtrip err {err:.3e} for {n_t}x{n_s}");
            }
        }
    }

    #[test]
    fn extracted_ranges_are_canonical() {
        let cfg = GivensConfig::new(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let v = random_orthonormal(4, 2, &mut rng);
            let a = extract_angles(&cfg, &[v]).unwrap();
            for &phi in &a.phi {
                assert!((0.0..TAU).contains(&phi));
            }
            for &psi in &a.psi {
                assert!((0.0..=std::f64::consts::FRAC_PI_2).contains(&psi));
            }
        }
    }

    #[test]
    fn extraction_rejects_non_orthonormal_input() {
        let cfg = GivensConfig::new(2, 1).unwrap();
        let v = DMatrix::from_column_slice(2, 1, &[c(0.9, 0.0), c(0.9, 0.0)]);
        assert!(matches!(extract_angles(&cfg, &[v]), Err(Error::NotOrthonormal(_))));
    }

    #[test]
    fn phi_plane_is_two_pi_periodic_in_reconstruction() {
        let cfg = GivensConfig::new(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v_bar = random_orthonormal(3, 2, &mut rng);
        let angles = extract_angles(&cfg, &[v_bar]).unwrap();
        let base = &reconstruct_target(&cfg, &angles).unwrap()[0];
        let mut shifted = angles.clone();
        for x in shifted.phi.iter_mut() {
            *x += TAU;
        }
        let rec = &reconstruct_target(&cfg, &shifted).unwrap()[0];
        assert!(frob(&(rec - base)) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_roundtrip_4x2(seed in 0u64..10_000) {
            let cfg = GivensConfig::new(4, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v_bar = random_orthonormal(4, 2, &mut rng);
            let canon = canonicalize(&v_bar).v;
            let angles = extract_angles(&cfg, &[v_bar]).unwrap();
            let rec = &reconstruct_target(&cfg, &angles).unwrap()[0];
            prop_assert!(frob(&(rec - &canon)) / frob(&canon) < 1e-9);
        }

        #[test]
        fn prop_reconstruction_is_orthonormal_for_arbitrary_angles(
            seed in 0u64..10_000
        ) {
            // Even wild (unquantized, out-of-range) angles must give
            // orthonormal columns: the factors are all unitary.
            let cfg = GivensConfig::new(4, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut angles = AngleSet::zeros(5, 2);
            for x in angles.phi.iter_mut().chain(angles.psi.iter_mut()) {
                *x = rng.gen_range(-10.0..10.0);
            }
            for v in reconstruct_target(&cfg, &angles).unwrap() {
                let gram = v.adjoint() * &v;
                let eye = DMatrix::<Complex64>::identity(2, 2);
                prop_assert!(frob(&(gram - eye)) < 1e-9);
            }
        }
    }
}
