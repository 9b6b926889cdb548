//! Recovery of the latent degree law from two proxies by diagonalizing
//! `E · F⁻¹`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::assign::max_score_assignment;
use crate::error::{Error, Result};
use crate::kde::CellTables;

const COND_LIMIT: f64 = 1e12;
const IMAG_TOL: f64 = 1e-6;
const EIG_GAP: f64 = 1e-8;
const CLIP_WARN: f64 = 0.05;

/// Column-stochastic matrix of a conditional law, rows the conditioned
/// variable, columns the conditioning one.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    pub role: String,
    pub entries: DMatrix<f64>,
}

impl StochasticMatrix {
    /// Validates `[0,1]` entries and unit column sums within 1e-10.
    pub fn new(role: &str, entries: DMatrix<f64>) -> Result<Self> {
        if entries.iter().any(|&v| !(-1e-15..=1.0 + 1e-12).contains(&v)) {
            return Err(Error::BadArgs(format!("{role}: entries must lie in [0,1]")));
        }
        for (c, col) in entries.column_iter().enumerate() {
            if (col.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::BadArgs(format!("{role}: column {c} sums to {}", col.sum())));
            }
        }
        Ok(StochasticMatrix { role: role.to_string(), entries })
    }

    pub fn identity(role: &str, k: usize) -> Self {
        StochasticMatrix { role: role.to_string(), entries: DMatrix::identity(k, k) }
    }

    pub fn k(&self) -> usize {
        self.entries.ncols()
    }

    /// `P(row | column)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }
}

/// Observed matrices at one covariate point: `E_{|Ñ|,|N|,Y|Z}`,
/// `F_{|Ñ|,|N||Z}` and the primary marginal `F_{|N||Z}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrices {
    pub e: DMatrix<f64>,
    pub f_joint: DMatrix<f64>,
    pub f_marg: DVector<f64>,
}

impl ObservedMatrices {
    pub fn k(&self) -> usize {
        self.f_joint.nrows()
    }

    pub fn condition_number(&self) -> f64 {
        let sv = self.f_joint.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Builds the observed matrices from kernel tables, conditioning on the
/// `K × K` degree block.
pub fn build_observed_matrices(tables: &CellTables) -> Result<ObservedMatrices> {
    let t = tables.renormalized();
    let k = t.k;
    let f_joint = DMatrix::from_fn(k, k, |a, b| t.joint[a][b]);
    let e = DMatrix::from_fn(k, k, |a, b| t.ey[a][b]);
    let f_marg = DVector::from_iterator(k, (0..k).map(|b| f_joint.column(b).sum()));
    let obs = ObservedMatrices { e, f_joint, f_marg };
    check_conditioning(&obs)?;
    Ok(obs)
}

fn check_conditioning(obs: &ObservedMatrices) -> Result<()> {
    let cond = obs.condition_number();
    if !(cond <= COND_LIMIT) {
        return Err(Error::SingularInput { cond });
    }
    Ok(())
}

/// Numerical health of one recovery.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct IdentQuality {
    /// Largest `|Im λ|` relative to the spectral radius.
    pub max_imag: f64,
    /// Negative mass removed from the recovered conditional matrices.
    pub clipped_matrix: f64,
    /// Negative mass removed from the latent degree law.
    pub clipped_latent: f64,
    pub cond: f64,
}

/// Everything identified at one covariate point.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentComponents {
    /// Degree of the first row and column; matrices cover `offset..offset+len`.
    pub offset: usize,
    /// `F_{|Ñ||Z,|N*|}`.
    pub instrument_given_latent: StochasticMatrix,
    /// `F_{|N||Z,|N*|}`.
    pub primary_given_latent: StochasticMatrix,
    /// `f_{|N*||Z}`.
    pub latent_degree: Vec<f64>,
    /// `E[Y | Z, |N*|]`, the eigenvalues in latent order.
    pub eigenvalues: Vec<f64>,
    pub quality: IdentQuality,
}

impl IdentComponents {
    /// One past the largest degree in the support.
    pub fn k(&self) -> usize {
        self.offset + self.latent_degree.len()
    }

    /// `f(|N|=n | |N*|=n*)`, zero outside the recovered window.
    pub fn primary_prob(&self, n: usize, n_star: usize) -> f64 {
        let len = self.latent_degree.len();
        match (n.checked_sub(self.offset), n_star.checked_sub(self.offset)) {
            (Some(r), Some(c)) if r < len && c < len => self.primary_given_latent.get(r, c),
            _ => 0.0,
        }
    }

    /// `f(|N*|=n*)`, zero outside the recovered window.
    pub fn latent_prob(&self, n_star: usize) -> f64 {
        n_star.checked_sub(self.offset).and_then(|c| self.latent_degree.get(c)).copied().unwrap_or(0.0)
    }

    /// Components of a perfectly measured network with latent law `f`.
    pub fn exact(f: Vec<f64>) -> Self {
        let k = f.len();
        IdentComponents {
            offset: 0,
            instrument_given_latent: StochasticMatrix::identity("instrument|latent", k),
            primary_given_latent: StochasticMatrix::identity("primary|latent", k),
            eigenvalues: vec![0.0; k],
            latent_degree: f,
            quality: IdentQuality::default(),
        }
    }
}

/// Clips negatives to zero and rescales to unit sum, returning the clipped mass.
fn clip_normalize(v: &mut [f64]) -> f64 {
    let mut clipped = 0.0;
    for x in v.iter_mut() {
        if *x < 0.0 {
            clipped -= *x;
            *x = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        for x in v.iter_mut() {
            *x /= total;
        }
    }
    clipped
}

/// Real eigenvalues of `b`, ascending. Fails on a complex pair or on two
/// eigenvalues too close to be told apart.
fn real_spectrum(b: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let eig = b.clone().complex_eigenvalues();
    let radius = eig.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let max_imag = eig.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let tol = IMAG_TOL * radius.max(f64::MIN_POSITIVE);
    if max_imag > tol {
        return Err(Error::ComplexSpectrum { imag: max_imag, tol });
    }
    let mut lam: Vec<f64> = eig.iter().map(|c| c.re).collect();
    lam.sort_by(f64::total_cmp);
    for w in lam.windows(2) {
        if (w[1] - w[0]).abs() < EIG_GAP {
            return Err(Error::NonIdentified { a: w[0], b: w[1] });
        }
    }
    let rel = if radius > 0.0 { max_imag / radius } else { 0.0 };
    Ok((lam, rel))
}

/// Unit-sum eigenvector of `b` for eigenvalue `lam`: the right singular
/// vector of `b − λI` with the smallest singular value.
fn eigenvector(b: &DMatrix<f64>, lam: f64) -> Result<Vec<f64>> {
    let k = b.nrows();
    let shifted = b - DMatrix::identity(k, k) * lam;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (imin, _) =
        svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty spectrum");
    let v: Vec<f64> = v_t.row(imin).iter().copied().collect();
    let sum: f64 = v.iter().sum();
    if sum.abs() < 1e-12 {
        return Err(Error::AmbiguousOrdering(format!("eigenvector for λ={lam:.6} has zero column sum")));
    }
    Ok(v.into_iter().map(|x| x / sum).collect())
}

fn invert(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or(Error::SingularInput { cond: f64::INFINITY })
}

/// Recovers `F_{|Ñ||Z,|N*|}`, `F_{|N||Z,|N*|}`, `f_{|N*||Z}` and the
/// eigenvalues `E[Y|Z,|N*|]` from the observed matrices.
///
/// Columns of the instrument matrix are eigenvectors of `E F⁻¹`; those of the
/// primary matrix solve the transposed system `E′ (F′)⁻¹`. Eigenpairs are
/// matched by eigenvalue and assigned to latent degrees by one assignment
/// maximizing the diagonal mass of both matrices.
pub fn eigen_recover(obs: &ObservedMatrices) -> Result<IdentComponents> {
    let k = obs.k();
    if k == 0 {
        return Err(Error::BadArgs("empty degree support".into()));
    }
    check_conditioning(obs)?;
    let cond = obs.condition_number();
    let f_inv = invert(&obs.f_joint)?;
    let b_inst = &obs.e * &f_inv;
    let b_prim = obs.e.transpose() * f_inv.transpose();
    let (lam, max_imag) = real_spectrum(&b_inst)?;

    let mut inst_cols = Vec::with_capacity(k);
    let mut prim_cols = Vec::with_capacity(k);
    for &l in &lam {
        inst_cols.push(eigenvector(&b_inst, l)?);
        prim_cols.push(eigenvector(&b_prim, l)?);
    }

    // score[row = latent degree][col = eigenpair]
    let score: Vec<Vec<f64>> = (0..k).map(|n| (0..k).map(|c| inst_cols[c][n] + prim_cols[c][n]).collect()).collect();
    let assignment = max_score_assignment(&score);
    for (n, &c) in assignment.iter().enumerate() {
        if score[n][c] < 1e-12 {
            return Err(Error::AmbiguousOrdering(format!("no eigenvector carries mass at latent degree {n}")));
        }
    }

    let mut clipped = 0.0;
    let mut inst = DMatrix::zeros(k, k);
    let mut prim = DMatrix::zeros(k, k);
    let mut eigenvalues = vec![0.0; k];
    for (n, &c) in assignment.iter().enumerate() {
        let mut a = inst_cols[c].clone();
        let mut b = prim_cols[c].clone();
        clipped += clip_normalize(&mut a);
        clipped += clip_normalize(&mut b);
        inst.set_column(n, &DVector::from_vec(a));
        prim.set_column(n, &DVector::from_vec(b));
        eigenvalues[n] = lam[c];
    }

    let mut latent: Vec<f64> = match prim.clone().lu().solve(&obs.f_marg) {
        Some(v) => v.iter().copied().collect(),
        None => return Err(Error::SingularInput { cond: f64::INFINITY }),
    };
    let clipped_latent = clip_normalize(&mut latent);
    if clipped > CLIP_WARN || clipped_latent > CLIP_WARN {
        log::warn!("eigen recovery clipped negative mass: matrices {clipped:.4}, latent law {clipped_latent:.4}");
    }

    Ok(IdentComponents {
        offset: 0,
        instrument_given_latent: StochasticMatrix { role: "instrument|latent".into(), entries: inst },
        primary_given_latent: StochasticMatrix { role: "primary|latent".into(), entries: prim },
        latent_degree: latent,
        eigenvalues,
        quality: IdentQuality { max_imag, clipped_matrix: clipped, clipped_latent, cond },
    })
}

/// Mass strictly above and strictly below the diagonal of a conditional
/// matrix. An upper triangle alone points to a proxy without false positives,
/// a lower one to a proxy without false negatives.
pub fn triangularity_diagnostic(m: &StochasticMatrix) -> (f64, f64) {
    let mut upper = 0.0;
    let mut lower = 0.0;
    for r in 0..m.entries.nrows() {
        for c in 0..m.entries.ncols() {
            if r < c {
                upper += m.entries[(r, c)];
            } else if r > c {
                lower += m.entries[(r, c)];
            }
        }
    }
    (upper, lower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn forward(inst: &DMatrix<f64>, prim: &DMatrix<f64>, f: &[f64], t: &[f64]) -> ObservedMatrices {
        let df = DMatrix::from_diagonal(&DVector::from_column_slice(f));
        let dt = DMatrix::from_diagonal(&DVector::from_column_slice(t));
        let f_joint = inst * &df * prim.transpose();
        let e = inst * &df * &dt * prim.transpose();
        let f_marg = DVector::from_iterator(f.len(), (0..f.len()).map(|b| f_joint.column(b).sum()));
        ObservedMatrices { e, f_joint, f_marg }
    }

    fn random_dominant<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() * 0.3);
        for c in 0..k {
            m[(c, c)] = 1.0 + rng.random::<f64>();
            let s = m.column(c).sum();
            for r in 0..k {
                m[(r, c)] /= s;
            }
        }
        m
    }

    #[test]
    fn identity_system() {
        let i = DMatrix::identity(3, 3);
        let obs = forward(&i, &i, &[0.2, 0.3, 0.5], &[1.0, 2.0, 3.0]);
        let c = eigen_recover(&obs).unwrap();
        assert!((&c.instrument_given_latent.entries - &i).abs().max() < 1e-12);
        assert!((&c.primary_given_latent.entries - &i).abs().max() < 1e-12);
        for (a, b) in c.eigenvalues.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_system() {
        let obs = ObservedMatrices {
            e: DMatrix::from_element(1, 1, 2.5),
            f_joint: DMatrix::from_element(1, 1, 1.0),
            f_marg: DVector::from_element(1, 1.0),
        };
        let c = eigen_recover(&obs).unwrap();
        assert_eq!(c.latent_degree, vec![1.0]);
        assert!((c.eigenvalues[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn forward_oracle_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = 4;
            let inst = random_dominant(k, &mut rng);
            let prim = random_dominant(k, &mut rng);
            let mut f: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
            let s: f64 = f.iter().sum();
            f.iter_mut().for_each(|v| *v /= s);
            // shuffled, well separated eigenvalues
            let mut t: Vec<f64> = (0..k).map(|j| 0.5 + j as f64 * 0.4).collect();
            t.swap(0, 2);
            let obs = forward(&inst, &prim, &f, &t);
            let c = eigen_recover(&obs).unwrap();
            assert!((&c.instrument_given_latent.entries - &inst).abs().max() < 1e-8);
            assert!((&c.primary_given_latent.entries - &prim).abs().max() < 1e-8);
            for n in 0..k {
                assert!((c.latent_degree[n] - f[n]).abs() < 1e-8);
                assert!((c.eigenvalues[n] - t[n]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn outcome_one_gives_f_joint() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let inst = random_dominant(3, &mut rng);
        let prim = random_dominant(3, &mut rng);
        let obs = forward(&inst, &prim, &[0.3, 0.3, 0.4], &[1.0, 1.0, 1.0]);
        assert!((&obs.e - &obs.f_joint).abs().max() < 1e-15);
        assert!(matches!(eigen_recover(&obs), Err(Error::NonIdentified { .. })));
    }

    #[test]
    fn complex_spectrum_rejected() {
        // E F⁻¹ is a rotation-like block with eigenvalues 1 ± i
        let f = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let e = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 0.5, 0.5]);
        let obs = ObservedMatrices { e, f_joint: f, f_marg: DVector::from_vec(vec![0.5, 0.5]) };
        assert!(matches!(eigen_recover(&obs), Err(Error::ComplexSpectrum { .. })));
    }

    #[test]
    fn singular_input_rejected() {
        let f = DMatrix::from_row_slice(2, 2, &[0.25, 0.25, 0.25, 0.25]);
        let obs = ObservedMatrices { e: f.clone(), f_joint: f, f_marg: DVector::from_vec(vec![0.5, 0.5]) };
        assert!(matches!(eigen_recover(&obs), Err(Error::SingularInput { .. })));
    }

    #[test]
    fn triangularity() {
        assert_eq!(triangularity_diagnostic(&StochasticMatrix::identity("x", 4)), (0.0, 0.0));
        let lower = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.0, 0.3, 0.6, 0.0, 0.2, 0.4, 1.0]);
        let m = StochasticMatrix::new("lower", lower).unwrap();
        let (u, l) = triangularity_diagnostic(&m);
        assert_eq!(u, 0.0);
        assert!((l - 0.9).abs() < 1e-15);
    }

    #[test]
    fn stochastic_matrix_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.4, 0.5]);
        assert!(StochasticMatrix::new("bad", bad).is_err());
    }
}
