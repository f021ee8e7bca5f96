use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diagnostics::GroundTruth;
use crate::dictlearn::{Dictionary, Provenance};
use crate::error::{Error, Result};
use crate::matcore::{l2, project_colspace_complement, Mat};
use crate::solver::SparsityMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthSparsity {
    /// Total number of nonzero entries of S.
    EntryWise(usize),
    /// Number of nonzero columns of S.
    ColumnWise(usize),
}

impl SynthSparsity {
    pub fn mode(self) -> SparsityMode {
        match self {
            SynthSparsity::EntryWise(_) => SparsityMode::EntryWise,
            SynthSparsity::ColumnWise(_) => SparsityMode::ColumnWise,
        }
    }
}

/// How the factors are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Construction {
    /// Gaussian U, V (orthonormalized), Gaussian unit-column D, uniform support.
    #[default]
    Generic,
    /// Incoherent by design: D orthonormal and orthogonal to col(U), V with
    /// equal row norms (γ_V = r/nm), entry-wise support spread evenly over
    /// the atoms with one nonzero per column.
    Separated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub f: usize,
    pub d: usize,
    pub nm: usize,
    pub r: usize,
    pub sparsity: SynthSparsity,
    /// Singular values of L are drawn uniformly from `[1, 2] · l_scale`.
    pub l_scale: f64,
    /// Nonzero magnitudes of S are drawn uniformly from `[1, 2] · s_scale`.
    pub s_scale: f64,
    pub construction: Construction,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(f: usize, d: usize, nm: usize, r: usize, sparsity: SynthSparsity, seed: u64) -> Self {
        SynthSpec {
            f,
            d,
            nm,
            r,
            sparsity,
            l_scale: 1.0,
            s_scale: 1.0,
            construction: Construction::Generic,
            seed,
        }
    }

    pub fn separated(mut self) -> Self {
        self.construction = Construction::Separated;
        self
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Infeasible(msg));
        if self.f == 0 || self.d == 0 || self.nm == 0 {
            return fail("f, d and nm must be positive".into());
        }
        if self.r == 0 || self.r > self.f.min(self.nm) {
            return fail(format!("rank {} must lie in [1, min(f, nm) = {}]", self.r, self.f.min(self.nm)));
        }
        match self.sparsity {
            SynthSparsity::EntryWise(s) if s > self.d * self.nm => {
                return fail(format!("s_e = {s} exceeds d·nm = {}", self.d * self.nm))
            }
            SynthSparsity::ColumnWise(s) if s > self.nm => {
                return fail(format!("s_c = {s} exceeds nm = {}", self.nm))
            }
            _ => {}
        }
        if !(self.l_scale > 0.0 && self.s_scale > 0.0) {
            return fail("scales must be positive".into());
        }
        if self.construction == Construction::Separated {
            if self.r + self.d > self.f {
                return fail(format!("separated construction needs r + d <= f, got {} + {} > {}", self.r, self.d, self.f));
            }
            if self.nm < 2 * self.r + 1 {
                return fail("separated construction needs nm >= 2r + 1".into());
            }
            if let SynthSparsity::EntryWise(s) = self.sparsity {
                if s > self.nm {
                    return fail(format!("separated entry-wise support needs s_e <= nm, got {s}"));
                }
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Mat::from_raw(rows, cols, data)
}

/// Orthonormal columns from the QR factorization of a Gaussian matrix.
fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let q = gaussian(rng, rows, cols).to_nalgebra().qr().q();
    Mat::from_nalgebra(&q.columns(0, cols).into_owned())
}

fn unit_columns(mut m: Mat) -> Mat {
    for j in 0..m.cols() {
        let n = l2(m.col(j));
        if n > 0.0 {
            m.col_mut(j).iter_mut().for_each(|x| *x /= n);
        }
    }
    m
}

/// Orthonormal `nm × r` basis with all row norms equal to `√(r/nm)`, built
/// from a constant vector and cosine/sine pairs, then rotated at random.
fn spread_row_basis(rng: &mut ChaCha8Rng, nm: usize, r: usize) -> Mat {
    let n = nm as f64;
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    if r % 2 == 1 {
        cols.push(vec![1.0 / n.sqrt(); nm]);
    }
    let amp = (2.0 / n).sqrt();
    let mut k = 1;
    while cols.len() < r {
        let w = 2.0 * std::f64::consts::PI * k as f64 / n;
        cols.push((0..nm).map(|j| amp * (w * j as f64).cos()).collect());
        cols.push((0..nm).map(|j| amp * (w * j as f64).sin()).collect());
        k += 1;
    }
    let basis = Mat::from_raw(nm, r, cols.concat());
    let rot = random_orthonormal(rng, r, r);
    basis.matmul(&rot).expect("shapes agree")
}

fn magnitude(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let mag = rng.random_range(1.0..2.0) * scale;
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Draws `M = L + DS` with known factors. `M` is exact: it is assembled from
/// the returned `L`, `D` and `S` by one multiply and one add.
pub fn synthesize(spec: &SynthSpec) -> Result<(Mat, GroundTruth, Dictionary)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (f, d, nm, r) = (spec.f, spec.d, spec.nm, spec.r);

    let u = random_orthonormal(&mut rng, f, r);
    let v = match spec.construction {
        Construction::Generic => random_orthonormal(&mut rng, nm, r),
        Construction::Separated => spread_row_basis(&mut rng, nm, r),
    };
    let sigma: Vec<f64> = (0..r).map(|_| rng.random_range(1.0..2.0) * spec.l_scale).collect();
    let mut us = u.clone();
    for (p, s) in sigma.iter().enumerate() {
        us.col_mut(p).iter_mut().for_each(|x| *x *= s);
    }
    let l = us.matmul_t(&v)?;

    let dict = match spec.construction {
        Construction::Generic => unit_columns(gaussian(&mut rng, f, d)),
        Construction::Separated => {
            let g = gaussian(&mut rng, f, d);
            let comp = project_colspace_complement(&u, &g)?;
            let q = comp.to_nalgebra().qr().q();
            Mat::from_nalgebra(&q.columns(0, d).into_owned())
        }
    };

    let mut s = Mat::zeros(d, nm);
    match (spec.sparsity, spec.construction) {
        (SynthSparsity::EntryWise(count), Construction::Generic) => {
            for p in index::sample(&mut rng, d * nm, count) {
                s.set(p % d, p / d, magnitude(&mut rng, spec.s_scale));
            }
        }
        (SynthSparsity::EntryWise(count), Construction::Separated) => {
            // distinct columns, atoms assigned round-robin from a random offset
            let offset = rng.random_range(0..d);
            for (k, col) in index::sample(&mut rng, nm, count).into_iter().enumerate() {
                s.set((offset + k) % d, col, magnitude(&mut rng, spec.s_scale));
            }
        }
        (SynthSparsity::ColumnWise(count), _) => {
            for col in index::sample(&mut rng, nm, count) {
                for i in 0..d {
                    let mut x: f64 = rng.sample(StandardNormal);
                    if x == 0.0 {
                        x = f64::MIN_POSITIVE;
                    }
                    s.set(i, col, x * spec.s_scale);
                }
            }
        }
    }

    let m = l.add(&dict.matmul(&s)?)?;
    let gt = GroundTruth::new(l, s, spec.sparsity.mode())?;
    Ok((m, gt, Dictionary::new(dict, Provenance::External)))
}
