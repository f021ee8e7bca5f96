//! Hyperspectral cubes and label maps, their unfolding into data matrices,
//! the normalization applied before demixing, on-disk formats and a
//! generator for synthetic `M = L + DS` instances with known factors.
//!
//! Voxel order is column-major over the spatial grid: the voxel at row `i`,
//! column `j` of an `n × m` image is column `p = j·n + i` of the unfolded
//! `f × nm` data matrix. Cubes, labels and the file formats all share it.

mod format;
mod synth;

pub use format::{
    cube_from_bytes, cube_to_bytes, dict_from_bytes, dict_to_bytes, labels_from_bytes,
    labels_to_bytes, read_cube, read_dict, read_labels, write_cube, write_dict, write_labels,
    FormatError, CUBE_MAGIC, DICT_MAGIC, LABEL_MAGIC,
};
pub use synth::{synthesize, Construction, SynthSparsity, SynthSpec};

use crate::dictlearn::{Dictionary, Provenance};
use crate::error::{Error, Result};
use crate::matcore::{l2, Mat};

/// An `n × m × f` reflectance volume stored voxel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HsCube {
    n: usize,
    m: usize,
    f: usize,
    voxels: Vec<f64>,
}

impl HsCube {
    /// `voxels` holds, for each voxel in column-major spatial order, its `f`
    /// band values contiguously.
    pub fn new(n: usize, m: usize, f: usize, voxels: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || f == 0 {
            return Err(Error::Dimension(format!("cube dimensions must be positive, got {n}x{m}x{f}")));
        }
        let len = n
            .checked_mul(m)
            .and_then(|x| x.checked_mul(f))
            .ok_or_else(|| Error::Dimension("cube size overflows".into()))?;
        if voxels.len() != len {
            return Err(Error::Dimension(format!(
                "{n}x{m}x{f} cube needs {len} values, got {}",
                voxels.len()
            )));
        }
        if let Some(p) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: p % f, col: p / f });
        }
        Ok(HsCube { n, m, f, voxels })
    }

    /// Builds a cube from a band-value function of (row, col, band).
    pub fn from_fn(n: usize, m: usize, f: usize, mut g: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut voxels = Vec::with_capacity(n * m * f);
        for j in 0..m {
            for i in 0..n {
                for b in 0..f {
                    voxels.push(g(i, j, b));
                }
            }
        }
        HsCube::new(n, m, f, voxels)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.f)
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    /// Spectrum of the voxel at spatial position (`i`, `j`).
    pub fn voxel(&self, i: usize, j: usize) -> &[f64] {
        let p = j * self.n + i;
        &self.voxels[p * self.f..(p + 1) * self.f]
    }
}

/// Class id per voxel, same spatial order as the cube; 0 means unlabeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    m: usize,
    class_ids: Vec<u32>,
}

impl LabelMap {
    pub fn new(n: usize, m: usize, class_ids: Vec<u32>) -> Result<Self> {
        if n.checked_mul(m) != Some(class_ids.len()) {
            return Err(Error::Dimension(format!(
                "{n}x{m} label map needs {} ids, got {}",
                n.saturating_mul(m),
                class_ids.len()
            )));
        }
        Ok(LabelMap { n, m, class_ids })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    /// `true` where the voxel belongs to `class`.
    pub fn indicator(&self, class: u32) -> Vec<bool> {
        self.class_ids.iter().map(|&c| c == class).collect()
    }

    /// Voxel indices carrying `class`.
    pub fn members(&self, class: u32) -> Vec<usize> {
        self.class_ids
            .iter()
            .enumerate()
            .filter_map(|(p, &c)| (c == class).then_some(p))
            .collect()
    }

    pub fn check_matches(&self, cube: &HsCube) -> Result<()> {
        if (self.n, self.m) != (cube.n, cube.m) {
            return Err(Error::Dimension(format!(
                "labels are {}x{} but cube is {}x{}",
                self.n, self.m, cube.n, cube.m
            )));
        }
        Ok(())
    }
}

/// `f × nm` data matrix with one voxel per column.
pub fn unfold(cube: &HsCube) -> Mat {
    Mat::from_raw(cube.f, cube.n * cube.m, cube.voxels.clone())
}

/// Inverse of [`unfold`].
pub fn fold(mat: &Mat, n: usize, m: usize) -> Result<HsCube> {
    if n.checked_mul(m) != Some(mat.cols()) {
        return Err(Error::Dimension(format!(
            "cannot fold {} columns into a {n}x{m} grid",
            mat.cols()
        )));
    }
    HsCube::new(n, m, mat.rows(), mat.as_slice().to_vec())
}

/// Divides every entry by `‖M‖_∞`; returns the scaled matrix and the scale.
pub fn normalize_data(m: &Mat) -> Result<(Mat, f64)> {
    let scale = m.max_abs();
    if scale == 0.0 {
        return Err(Error::Degenerate("cannot normalize an all-zero data matrix".into()));
    }
    if scale == 1.0 {
        return Ok((m.clone(), 1.0));
    }
    Ok((m.map(|v| v / scale), scale))
}

/// Divides the dictionary by the data scale and then normalizes its columns
/// to unit length. Voxel-sampled dictionaries go through both steps.
pub fn normalize_dictionary(d: &Mat, data_scale: f64) -> Result<Dictionary> {
    if !(data_scale > 0.0 && data_scale.is_finite()) {
        return Err(Error::Precondition(format!("data scale must be positive, got {data_scale}")));
    }
    let scaled = d.map(|v| v / data_scale);
    let mut cols = Vec::with_capacity(d.cols());
    for j in 0..d.cols() {
        let c = scaled.col(j);
        let n = l2(c);
        if n == 0.0 {
            return Err(Error::Degenerate(format!("dictionary column {j} is zero")));
        }
        cols.push(c.iter().map(|v| v / n).collect::<Vec<_>>());
    }
    let mat = Mat::from_columns(d.rows(), &cols)?;
    Ok(Dictionary::new(mat, Provenance::SampledVoxels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::NormKind;

    #[test]
    fn single_voxel_cube_unfolds_to_its_spectrum() {
        let c = HsCube::new(1, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let m = unfold(&c);
        assert_eq!(m.shape(), (3, 1));
        assert_eq!(m.col(0), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn two_by_two_ordering_is_column_major() {
        // band values [[a, b], [c, d]] indexed (row, col)
        let (a, b, c, d) = (1.0, 2.0, 3.0, 4.0);
        let grid = [[a, b], [c, d]];
        let cube = HsCube::from_fn(2, 2, 1, |i, j, _| grid[i][j]).unwrap();
        assert_eq!(unfold(&cube).as_slice(), &[a, c, b, d]);
    }

    #[test]
    fn fold_round_trip() {
        let cube = HsCube::from_fn(4, 5, 6, |i, j, b| (i * 100 + j * 10 + b) as f64 * 0.37).unwrap();
        let back = fold(&unfold(&cube), 4, 5).unwrap();
        assert_eq!(back, cube);
        assert_eq!(back.voxel(2, 3)[4], (200 + 30 + 4) as f64 * 0.37);
        assert!(fold(&unfold(&cube), 3, 5).is_err());
    }

    #[test]
    fn cube_rejects_bad_dims_and_values() {
        assert!(HsCube::new(0, 1, 1, vec![]).is_err());
        assert!(HsCube::new(1, 1, 2, vec![1.0]).is_err());
        assert!(HsCube::new(1, 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn normalize_data_examples() {
        let m = Mat::from_rows(&[&[0.0, 10.0], &[5.0, 2.5]]).unwrap();
        let (n, s) = normalize_data(&m).unwrap();
        assert_eq!(s, 10.0);
        assert_eq!(n, Mat::from_rows(&[&[0.0, 1.0], &[0.5, 0.25]]).unwrap());
        let (same, s1) = normalize_data(&n).unwrap();
        assert_eq!((same, s1), (n.clone(), 1.0));
        assert!(matches!(normalize_data(&Mat::zeros(2, 2)), Err(Error::Degenerate(_))));
        let neg = Mat::from_rows(&[&[-4.0, 1.0]]).unwrap();
        let (nn, _) = normalize_data(&neg).unwrap();
        assert_eq!(crate::matcore::norm(&nn, NormKind::Inf).unwrap(), 1.0);
    }

    #[test]
    fn normalize_dictionary_examples() {
        let d = Mat::from_rows(&[&[0.0], &[3.0], &[4.0]]).unwrap();
        let dict = normalize_dictionary(&d, 2.0).unwrap();
        let c = dict.mat().col(0);
        assert!((c[1] - 0.6).abs() < 1e-15 && (c[2] - 0.8).abs() < 1e-15 && c[0] == 0.0);
        assert!(dict.unit_columns());
        assert_eq!(*dict.provenance(), Provenance::SampledVoxels);

        let unit = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(normalize_dictionary(&unit, 1.0).unwrap().mat(), &unit);

        let bad = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        match normalize_dictionary(&bad, 1.0) {
            Err(Error::Degenerate(msg)) => assert!(msg.contains("column 1")),
            other => panic!("expected zero-column error, got {other:?}"),
        }
    }

    #[test]
    fn label_map_helpers() {
        let l = LabelMap::new(2, 2, vec![0, 5, 5, 1]).unwrap();
        assert_eq!(l.members(5), vec![1, 2]);
        assert_eq!(l.indicator(1), vec![false, false, false, true]);
        assert!(LabelMap::new(2, 2, vec![1]).is_err());
        let cube = HsCube::new(2, 3, 1, vec![0.0; 6]).unwrap();
        assert!(l.check_matches(&cube).is_err());
    }
}
