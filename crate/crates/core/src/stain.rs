//! RGB <-> HED stain-space transforms and single-stain isolation.
//!
//! Pixels are row vectors multiplied on the right. With `M` the clamped RGB
//! intensities of one pixel, `P` the stain basis (rows are the H, E and DAB
//! optical-density vectors) and `Q` the diagonal channel selector:
//!
//! ```text
//! hed      = ln(M) · P⁺
//! rgb      = exp(hed · P)
//! isolated = exp(ln(M) · P⁺ Q P)
//! ```
//!
//! Clipping to `[0, 1]` is applied only after the final `exp`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{clip_unit, HedImage, RgbImage, DEFAULT_EPS};
use crate::par;

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// H, E and DAB optical-density rows of the default basis.
pub const DEFAULT_STAIN_MATRIX: Mat3 = [
    [0.65, 0.70, 0.29],
    [0.07, 0.99, 0.11],
    [0.27, 0.57, 0.78],
];

/// Below this `|det|` the pseudo-inverse goes through an SVD.
const SINGULAR_DET: f64 = 1e-9;

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Row vector times matrix.
#[inline]
pub fn vec_mat(v: [f64; 3], m: &Mat3) -> [f64; 3] {
    [
        v[0] * m[0][0] + v[1] * m[1][0] + v[2] * m[2][0],
        v[0] * m[0][1] + v[1] * m[1][1] + v[2] * m[2][1],
        v[0] * m[0][2] + v[1] * m[1][2] + v[2] * m[2][2],
    ]
}

fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Moore-Penrose pseudo-inverse of a 3x3 matrix.
///
/// Invertible input (`|det| > 1e-9`) goes through the adjugate and is the
/// exact inverse; anything else through a rank-revealing SVD.
pub fn pseudo_inverse(p: &Mat3) -> Mat3 {
    let d = det(p);
    if d.abs() > SINGULAR_DET {
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| p[r0][c0] * p[r1][c1] - p[r0][c1] * p[r1][c0];
        // adj(P)[i][j] is the (j, i) cofactor
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        return adj.map(|row| row.map(|v| v / d));
    }

    let m = nalgebra::Matrix3::from_fn(|i, j| p[i][j]);
    let svd = m.svd(true, true);
    let tol = f64::EPSILON * 3.0 * svd.singular_values.max();
    let pinv = svd
        .pseudo_inverse(tol)
        .expect("both singular-vector sets were requested");
    std::array::from_fn(|i| std::array::from_fn(|j| pinv[(i, j)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stain {
    Hematoxylin,
    Eosin,
    Dab,
}

impl Stain {
    pub const ALL: [Stain; 3] = [Stain::Hematoxylin, Stain::Eosin, Stain::Dab];

    pub fn index(self) -> usize {
        match self {
            Stain::Hematoxylin => 0,
            Stain::Eosin => 1,
            Stain::Dab => 2,
        }
    }
}

/// A 3x3 stain basis and its pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct StainBasis {
    p: Mat3,
    p_inv: Mat3,
}

impl Default for StainBasis {
    fn default() -> Self {
        Self::new(DEFAULT_STAIN_MATRIX).expect("default basis is finite")
    }
}

impl StainBasis {
    pub fn new(p: Mat3) -> Result<Self> {
        if p.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("basis", "non-finite entry"));
        }
        Ok(Self {
            p,
            p_inv: pseudo_inverse(&p),
        })
    }

    /// Parses nine numbers, row-major, from a JSON array.
    pub fn from_json(text: &str) -> Result<Self> {
        let values: Vec<f64> = serde_json::from_str(text)?;
        if values.len() != 9 {
            return Err(Error::invalid(
                "basis",
                format!("expected 9 numbers, got {}", values.len()),
            ));
        }
        let p = std::array::from_fn(|i| std::array::from_fn(|j| values[i * 3 + j]));
        Self::new(p)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.p
    }

    pub fn inverse(&self) -> &Mat3 {
        &self.p_inv
    }

    pub fn stain_vector(&self, stain: Stain) -> [f64; 3] {
        self.p[stain.index()]
    }
}

/// Which HED channels survive an isolation; the diagonal of `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ChannelSelector {
    retained: [bool; 3],
}

impl ChannelSelector {
    pub const fn empty() -> Self {
        Self {
            retained: [false; 3],
        }
    }

    pub const fn all() -> Self {
        Self {
            retained: [true; 3],
        }
    }

    pub fn only(stain: Stain) -> Self {
        Self::from_stains(&[stain])
    }

    pub fn from_stains(stains: &[Stain]) -> Self {
        let mut retained = [false; 3];
        for s in stains {
            retained[s.index()] = true;
        }
        Self { retained }
    }

    pub fn retains(&self, stain: Stain) -> bool {
        self.retained[stain.index()]
    }

    pub fn is_empty(&self) -> bool {
        !self.retained.iter().any(|&r| r)
    }

    pub fn q_matrix(&self) -> Mat3 {
        std::array::from_fn(|i| std::array::from_fn(|j| if i == j && self.retained[i] { 1.0 } else { 0.0 }))
    }
}

impl FromStr for ChannelSelector {
    type Err = Error;

    /// Accepts `H`, `E`, `DAB`, `HE`, `HDAB` and `ALL`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        use Stain::*;
        let stains: &[Stain] = match s.to_ascii_uppercase().as_str() {
            "H" => &[Hematoxylin],
            "E" => &[Eosin],
            "DAB" => &[Dab],
            "HE" => &[Hematoxylin, Eosin],
            "HDAB" => &[Hematoxylin, Dab],
            "ALL" => &[Hematoxylin, Eosin, Dab],
            _ => {
                return Err(Error::invalid(
                    "channel",
                    format!("`{s}` is not one of H, E, DAB, HE, HDAB, ALL"),
                ))
            }
        };
        Ok(Self::from_stains(stains))
    }
}

impl fmt::Display for ChannelSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.retained {
            [true, false, false] => "H",
            [false, true, false] => "E",
            [false, false, true] => "DAB",
            [true, true, false] => "HE",
            [true, false, true] => "HDAB",
            [true, true, true] => "ALL",
            [false, true, true] => "EDAB",
            [false, false, false] => "NONE",
        };
        f.write_str(name)
    }
}

/// The precomputed map `ln(M) -> ln(M) · P⁺ Q P` for one selector.
#[derive(Debug, Clone, PartialEq)]
pub struct StainProjector {
    projection: Mat3,
    eps: f64,
}

impl StainProjector {
    pub fn new(basis: &StainBasis, selector: ChannelSelector, eps: f64) -> Result<Self> {
        if selector.is_empty() {
            return Err(Error::EmptySelector);
        }
        check_eps(eps)?;
        let projection = mat_mul(&mat_mul(&basis.p_inv, &selector.q_matrix()), &basis.p);
        Ok(Self { projection, eps })
    }

    /// `P⁺ Q P`.
    pub fn matrix(&self) -> &Mat3 {
        &self.projection
    }

    /// Log-space output for one pixel.
    #[inline]
    pub fn project_log(&self, rgb: [f64; 3]) -> [f64; 3] {
        vec_mat(rgb.map(|v| v.max(self.eps).ln()), &self.projection)
    }

    /// Intensity output for one pixel before clipping.
    #[inline]
    pub fn project_unclipped(&self, rgb: [f64; 3]) -> [f64; 3] {
        self.project_log(rgb).map(f64::exp)
    }

    pub fn apply(&self, img: &RgbImage) -> RgbImage {
        let out = map_pixels(img.data(), img.width(), |px| self.project_unclipped(px).map(clip_unit));
        RgbImage::from_clipped(img.height(), img.width(), out)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps", format!("{eps} is not a positive finite number")));
    }
    Ok(())
}

fn map_pixels(src: &[f64], width: usize, f: impl Fn([f64; 3]) -> [f64; 3] + Send + Sync) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    let row_len = width * 3;
    par::for_each_chunk(&mut out, row_len, |row, dst| {
        let start = row * row_len;
        let end = start + dst.len();
        for (d, s) in dst.chunks_exact_mut(3).zip(src[start..end].chunks_exact(3)) {
            d.copy_from_slice(&f([s[0], s[1], s[2]]));
        }
    });
    out
}

/// Stain concentrations `ln(max(rgb, eps)) · P⁺`.
pub fn rgb_to_hed(img: &RgbImage, basis: &StainBasis, eps: f64) -> Result<HedImage> {
    check_eps(eps)?;
    let inv = basis.p_inv;
    let out = map_pixels(img.data(), img.width(), |px| vec_mat(px.map(|v| v.max(eps).ln()), &inv));
    Ok(HedImage::from_raw(img.height(), img.width(), out))
}

/// Intensities `exp(hed · P)`, clipped to `[0, 1]`.
pub fn hed_to_rgb(hed: &HedImage, basis: &StainBasis) -> RgbImage {
    let p = basis.p;
    let out = map_pixels(hed.data(), hed.width(), |px| vec_mat(px, &p).map(|v| clip_unit(v.exp())));
    RgbImage::from_clipped(hed.height(), hed.width(), out)
}

/// Keeps only the selected stains: `exp(ln(max(M, eps)) · P⁺ Q P)`, clipped.
pub fn isolate_channel(img: &RgbImage, selector: ChannelSelector, basis: &StainBasis, eps: f64) -> Result<RgbImage> {
    Ok(StainProjector::new(basis, selector, eps)?.apply(img))
}

/// Hematoxylin-only rendering with the default basis.
pub fn destain(img: &RgbImage) -> RgbImage {
    isolate_channel(img, ChannelSelector::only(Stain::Hematoxylin), &StainBasis::default(), DEFAULT_EPS)
        .expect("non-empty selector and valid eps")
}

/// DAB-only rendering with the default basis.
pub fn extract_dab(img: &RgbImage) -> RgbImage {
    isolate_channel(img, ChannelSelector::only(Stain::Dab), &StainBasis::default(), DEFAULT_EPS)
        .expect("non-empty selector and valid eps")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::clamp_for_od;
    use proptest::prelude::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Gauss-Jordan with partial pivoting, independent of the adjugate path.
    fn gauss_jordan(m: &Mat3) -> Mat3 {
        let mut a = [[0.0; 6]; 3];
        for i in 0..3 {
            a[i][..3].copy_from_slice(&m[i]);
            a[i][3 + i] = 1.0;
        }
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            let d = a[col][col];
            for v in a[col].iter_mut() {
                *v /= d;
            }
            for r in 0..3 {
                if r != col {
                    let f = a[r][col];
                    let pivot_row = a[col];
                    for (v, pv) in a[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        std::array::from_fn(|i| std::array::from_fn(|j| a[i][3 + j]))
    }

    #[test]
    fn inverse_of_identity_and_diagonal() {
        assert_eq!(pseudo_inverse(&IDENTITY), IDENTITY);
        let d = [[2.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 8.0]];
        assert_eq!(
            pseudo_inverse(&d),
            [[0.5, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, 0.0, 0.125]]
        );
    }

    #[test]
    fn inverse_of_default_basis_matches_gauss_jordan() {
        let inv = pseudo_inverse(&DEFAULT_STAIN_MATRIX);
        let oracle = gauss_jordan(&DEFAULT_STAIN_MATRIX);
        assert!(max_abs_diff(inv.as_flattened(), oracle.as_flattened()) <= 1e-12);
        let prod = mat_mul(&inv, &DEFAULT_STAIN_MATRIX);
        assert!(max_abs_diff(prod.as_flattened(), IDENTITY.as_flattened()) <= 1e-12);
    }

    #[test]
    fn singular_matrix_gets_moore_penrose() {
        let s = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]];
        let pinv = pseudo_inverse(&s);
        // A A⁺ A = A and A⁺ A A⁺ = A⁺
        let a_pinv_a = mat_mul(&mat_mul(&s, &pinv), &s);
        let pinv_a_pinv = mat_mul(&mat_mul(&pinv, &s), &pinv);
        assert!(max_abs_diff(a_pinv_a.as_flattened(), s.as_flattened()) < 1e-10);
        assert!(max_abs_diff(pinv_a_pinv.as_flattened(), pinv.as_flattened()) < 1e-10);

        let zero = [[0.0; 3]; 3];
        assert_eq!(pseudo_inverse(&zero), zero);
    }

    #[test]
    fn white_maps_to_zero_concentration_and_back() {
        let basis = StainBasis::default();
        let white = RgbImage::filled(3, 2, [1.0; 3]);
        let hed = rgb_to_hed(&white, &basis, DEFAULT_EPS).unwrap();
        assert!(hed.data().iter().all(|&v| v == 0.0));
        assert_eq!(hed_to_rgb(&hed, &basis), white);
    }

    #[test]
    fn grey_pixel_concentrations() {
        let basis = StainBasis::default();
        let img = RgbImage::filled(1, 1, [0.5; 3]);
        let hed = rgb_to_hed(&img, &basis, DEFAULT_EPS).unwrap();
        let inv = gauss_jordan(&DEFAULT_STAIN_MATRIX);
        let l = 0.5f64.ln();
        for j in 0..3 {
            let expected = l * (inv[0][j] + inv[1][j] + inv[2][j]);
            assert!((hed.data()[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_hematoxylin_concentration() {
        let basis = StainBasis::default();
        let hed = HedImage::new(1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let rgb = hed_to_rgb(&hed, &basis);
        let expected = DEFAULT_STAIN_MATRIX[0].map(|v: f64| v.exp().min(1.0));
        assert_eq!(rgb.data(), &expected);
        // the paper convention puts stained pixels at negative concentrations
        let hed = HedImage::new(1, 1, vec![-1.0, 0.0, 0.0]).unwrap();
        let rgb = hed_to_rgb(&hed, &basis);
        for (got, p) in rgb.data().iter().zip(DEFAULT_STAIN_MATRIX[0]) {
            assert!((got - (-p).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn isolate_hematoxylin_single_pixel() {
        // scalar pipeline written out by hand
        let px = [0.4f64, 0.3, 0.6];
        let inv = gauss_jordan(&DEFAULT_STAIN_MATRIX);
        let m: Vec<f64> = px.iter().map(|v| v.ln()).collect();
        let h = m[0] * inv[0][0] + m[1] * inv[1][0] + m[2] * inv[2][0];
        let expected: Vec<f64> = DEFAULT_STAIN_MATRIX[0]
            .iter()
            .map(|p| (h * p).exp().clamp(0.0, 1.0))
            .collect();

        let img = RgbImage::filled(1, 1, px);
        let out = isolate_channel(&img, ChannelSelector::only(Stain::Hematoxylin), &StainBasis::default(), DEFAULT_EPS).unwrap();
        assert!(max_abs_diff(out.data(), &expected) < 1e-12);
        assert_eq!(destain(&img), out);
    }

    #[test]
    fn white_is_a_fixed_point_for_every_selector() {
        let white = RgbImage::filled(2, 2, [1.0; 3]);
        for name in ["H", "E", "DAB", "HE", "HDAB", "ALL"] {
            let sel: ChannelSelector = name.parse().unwrap();
            assert_eq!(sel.to_string(), name);
            let out = isolate_channel(&white, sel, &StainBasis::default(), DEFAULT_EPS).unwrap();
            assert_eq!(out, white);
        }
        assert_eq!(destain(&white), white);
        assert_eq!(extract_dab(&white), white);
    }

    #[test]
    fn empty_selector_and_bad_eps_rejected() {
        let img = RgbImage::filled(1, 1, [0.5; 3]);
        let basis = StainBasis::default();
        assert!(matches!(
            isolate_channel(&img, ChannelSelector::empty(), &basis, DEFAULT_EPS),
            Err(Error::EmptySelector)
        ));
        assert!(isolate_channel(&img, ChannelSelector::all(), &basis, 0.0).is_err());
        assert!("XYZ".parse::<ChannelSelector>().is_err());
    }

    #[test]
    fn basis_json() {
        let b = StainBasis::from_json("[0.65,0.70,0.29,0.07,0.99,0.11,0.27,0.57,0.78]").unwrap();
        assert_eq!(b, StainBasis::default());
        assert!(StainBasis::from_json("[1,2,3]").is_err());
        assert!(StainBasis::from_json("{\"a\":1}").is_err());
    }

    #[test]
    fn projection_matrices_are_idempotent() {
        let basis = StainBasis::default();
        for stain in Stain::ALL {
            let proj = StainProjector::new(&basis, ChannelSelector::only(stain), DEFAULT_EPS).unwrap();
            let m = proj.matrix();
            let sq = mat_mul(m, m);
            assert!(max_abs_diff(sq.as_flattened(), m.as_flattened()) <= 1e-12);
        }
    }

    #[test]
    fn floored_output_breaks_image_idempotence() {
        // A near-black red channel drives the hematoxylin output below eps;
        // the second pass floors it and lands somewhere else.
        let img = RgbImage::new(1, 1, vec![5.587626552561176e-6, 0.7115582708850776, 0.8945743772904059]).unwrap();
        let once = destain(&img);
        assert!(once.data()[0] < DEFAULT_EPS);
        let twice = destain(&once);
        assert!(max_abs_diff(once.data(), twice.data()) > 1e-4);
    }

    fn image_strategy() -> impl Strategy<Value = RgbImage> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            prop::collection::vec(0.0f64..=1.0, h * w * 3).prop_map(move |d| RgbImage::new(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn full_selector_roundtrips(img in image_strategy()) {
            let basis = StainBasis::default();
            let out = isolate_channel(&img, ChannelSelector::all(), &basis, DEFAULT_EPS).unwrap();
            let clamped = clamp_for_od(&img, DEFAULT_EPS);
            prop_assert!(max_abs_diff(out.data(), clamped.data()) <= 1e-6);

            let back = hed_to_rgb(&rgb_to_hed(&img, &basis, DEFAULT_EPS).unwrap(), &basis);
            prop_assert!(max_abs_diff(back.data(), clamped.data()) <= 1e-6);
        }

        #[test]
        fn isolation_is_idempotent_above_floor(img in image_strategy(), which in 0usize..3) {
            let sel = ChannelSelector::only(Stain::ALL[which]);
            let basis = StainBasis::default();
            let once = isolate_channel(&img, sel, &basis, DEFAULT_EPS).unwrap();
            prop_assume!(once.data().iter().all(|v| *v >= DEFAULT_EPS));
            let twice = isolate_channel(&once, sel, &basis, DEFAULT_EPS).unwrap();
            prop_assert!(max_abs_diff(once.data(), twice.data()) <= 1e-6);
        }

        #[test]
        fn single_stain_outputs_multiply_back(img in image_strategy()) {
            let basis = StainBasis::default();
            let projectors: Vec<_> = Stain::ALL
                .iter()
                .map(|&s| StainProjector::new(&basis, ChannelSelector::only(s), DEFAULT_EPS).unwrap())
                .collect();
            for px in img.pixels() {
                let mut prod = [1.0; 3];
                for p in &projectors {
                    let v = p.project_unclipped(px);
                    for c in 0..3 {
                        prod[c] *= v[c];
                    }
                }
                for c in 0..3 {
                    prop_assert!((prod[c] - px[c].max(DEFAULT_EPS)).abs() <= 1e-5);
                }
            }
        }
    }
}
