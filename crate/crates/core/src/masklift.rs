//! Pixel-to-latent mask lifting.
//!
//! Masks are `(T, H, W)` binary grids, `true` meaning observed/preserved.
//! A latent cell stays observed only when every pixel of its block is
//! observed, so no edited pixel can hide inside a preserved latent cell.

use crate::error::{Error, Result};

/// Downsampling factors `(f_t, f_h, f_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Factors {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Factors {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidParameter("downsampling factors must be positive".into()));
        }
        Ok(Self { t, h, w })
    }

    /// Spatial-only factors for single images.
    pub fn spatial(h: usize, w: usize) -> Result<Self> {
        Self::new(1, h, w)
    }

    /// `floor(f_h / 2)`.
    pub fn default_radius(&self) -> usize {
        self.h / 2
    }
}

/// Binary grid of shape `(T, H, W)`, row-major with `W` fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    shape: (usize, usize, usize),
    observed: Vec<bool>,
}

impl MaskGrid {
    pub fn new(shape: (usize, usize, usize), observed: Vec<bool>) -> Result<Self> {
        let (t, h, w) = shape;
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("mask dimensions must be positive, got {t}x{h}x{w}")));
        }
        if observed.len() != t * h * w {
            return Err(Error::Shape(format!(
                "mask of shape {t}x{h}x{w} needs {} entries, got {}",
                t * h * w,
                observed.len()
            )));
        }
        Ok(Self { shape, observed })
    }

    pub fn filled(shape: (usize, usize, usize), observed: bool) -> Result<Self> {
        Self::new(shape, vec![observed; shape.0 * shape.1 * shape.2])
    }

    /// From bytes where 0 is edited and 1 is observed.
    pub fn from_bytes(shape: (usize, usize, usize), bytes: &[u8]) -> Result<Self> {
        if let Some(bad) = bytes.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidParameter(format!("mask entries must be 0 or 1, found {bad}")));
        }
        Self::new(shape, bytes.iter().map(|&b| b == 1).collect())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    fn index(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.shape.1 + i) * self.shape.2 + j
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> bool {
        self.observed[self.index(t, i, j)]
    }

    pub fn set(&mut self, t: usize, i: usize, j: usize, observed: bool) {
        let k = self.index(t, i, j);
        self.observed[k] = observed;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.observed.iter().map(|&b| b as u8).collect()
    }

    pub fn edited_count(&self) -> usize {
        self.observed.iter().filter(|&&b| !b).count()
    }
}

pub type PixelMask = MaskGrid;

/// Latent-resolution mask together with the factors it was produced with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentMask {
    pub grid: MaskGrid,
    pub factors: Factors,
}

impl LatentMask {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.grid.shape()
    }

    /// Nearest-neighbour upsampling back to pixel resolution.
    pub fn upsample(&self) -> MaskGrid {
        let (t, h, w) = self.grid.shape();
        let f = self.factors;
        let shape = (t * f.t, h * f.h, w * f.w);
        let mut out = Vec::with_capacity(shape.0 * shape.1 * shape.2);
        for pt in 0..shape.0 {
            for pi in 0..shape.1 {
                for pj in 0..shape.2 {
                    out.push(self.grid.get(pt / f.t, pi / f.h, pj / f.w));
                }
            }
        }
        MaskGrid { shape, observed: out }
    }
}

/// Blockwise reduction rule. Only [`DownsampleRule::All`] guarantees zero
/// leakage; [`DownsampleRule::Any`] exists for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleRule {
    All,
    Any,
}

/// Grows a boolean set along one axis by `r` in both directions.
fn dilate_axis(set: &mut [bool], shape: (usize, usize, usize), axis: usize, r: usize) {
    if r == 0 {
        return;
    }
    let dims = [shape.0, shape.1, shape.2];
    let strides = [shape.1 * shape.2, shape.2, 1];
    let n = dims[axis];
    let stride = strides[axis];
    let src = set.to_vec();
    let mut prefix = vec![0usize; n + 1];
    for base in 0..set.len() {
        // Visit each line once, starting from its first element.
        if !(base / stride).is_multiple_of(n) {
            continue;
        }
        for k in 0..n {
            prefix[k + 1] = prefix[k] + src[base + k * stride] as usize;
        }
        for k in 0..n {
            let lo = k.saturating_sub(r);
            let hi = (k + r + 1).min(n);
            set[base + k * stride] = prefix[hi] > prefix[lo];
        }
    }
}

/// Grows the edited region by Chebyshev radius `r` within each frame and by
/// `r_t` frames along time.
pub fn dilate_mask(mask: &PixelMask, r: usize, r_t: usize) -> PixelMask {
    let mut edited: Vec<bool> = mask.observed.iter().map(|&b| !b).collect();
    dilate_axis(&mut edited, mask.shape, 2, r);
    dilate_axis(&mut edited, mask.shape, 1, r);
    dilate_axis(&mut edited, mask.shape, 0, r_t);
    MaskGrid {
        shape: mask.shape,
        observed: edited.into_iter().map(|e| !e).collect(),
    }
}

fn check_divisible(shape: (usize, usize, usize), f: Factors) -> Result<()> {
    let (t, h, w) = shape;
    if t % f.t != 0 || h % f.h != 0 || w % f.w != 0 {
        return Err(Error::Shape(format!(
            "mask {t}x{h}x{w} is not divisible by factors {}x{}x{}",
            f.t, f.h, f.w
        )));
    }
    Ok(())
}

/// Blockwise downsampling under an explicit rule.
pub fn downsample_with_rule(mask: &PixelMask, factors: Factors, rule: DownsampleRule) -> Result<LatentMask> {
    check_divisible(mask.shape, factors)?;
    let (t, h, w) = mask.shape;
    let shape = (t / factors.t, h / factors.h, w / factors.w);
    let mut observed = vec![rule == DownsampleRule::All; shape.0 * shape.1 * shape.2];
    for pt in 0..t {
        for pi in 0..h {
            for pj in 0..w {
                let cell = ((pt / factors.t) * shape.1 + pi / factors.h) * shape.2 + pj / factors.w;
                let px = mask.get(pt, pi, pj);
                match rule {
                    DownsampleRule::All => observed[cell] &= px,
                    DownsampleRule::Any => observed[cell] |= px,
                }
            }
        }
    }
    Ok(LatentMask {
        grid: MaskGrid { shape, observed },
        factors,
    })
}

/// A latent cell is observed iff its whole pixel block is observed.
pub fn downsample_mask(mask: &PixelMask, factors: Factors) -> Result<LatentMask> {
    downsample_with_rule(mask, factors, DownsampleRule::All)
}

/// Dilate, then downsample.
pub fn lift_mask(mask: &PixelMask, factors: Factors, r: usize, r_t: usize) -> Result<LatentMask> {
    check_divisible(mask.shape, factors)?;
    downsample_mask(&dilate_mask(mask, r, r_t), factors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeakageReport {
    /// Edited pixels that fall inside observed latent cells.
    pub edited_pixels_in_observed_cells: usize,
    /// Observed pixels sacrificed to edited latent cells.
    pub observed_pixels_in_edited_cells: usize,
}

pub fn leakage_report(pixel: &PixelMask, latent: &LatentMask) -> Result<LeakageReport> {
    let up = latent.upsample();
    if up.shape != pixel.shape {
        return Err(Error::Shape(format!(
            "latent mask upsamples to {:?}, pixel mask is {:?}",
            up.shape, pixel.shape
        )));
    }
    let mut report = LeakageReport {
        edited_pixels_in_observed_cells: 0,
        observed_pixels_in_edited_cells: 0,
    };
    for (&px, &cell) in pixel.observed.iter().zip(&up.observed) {
        match (px, cell) {
            (false, true) => report.edited_pixels_in_observed_cells += 1,
            (true, false) => report.observed_pixels_in_edited_cells += 1,
            _ => {}
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image(h: usize, w: usize, edited: &[(usize, usize)]) -> PixelMask {
        let mut m = MaskGrid::filled((1, h, w), true).unwrap();
        for &(i, j) in edited {
            m.set(0, i, j, false);
        }
        m
    }

    fn f2(h: usize, w: usize) -> Factors {
        Factors::spatial(h, w).unwrap()
    }

    #[test]
    fn dilation_examples() {
        let m = image(5, 5, &[(2, 2)]);
        assert_eq!(dilate_mask(&m, 0, 0), m);
        let d = dilate_mask(&m, 1, 0);
        for i in 0..5 {
            for j in 0..5 {
                let inside = (1..=3).contains(&i) && (1..=3).contains(&j);
                assert_eq!(d.get(0, i, j), !inside, "({i},{j})");
            }
        }
        let all = MaskGrid::filled((2, 4, 4), false).unwrap();
        assert_eq!(dilate_mask(&all, 3, 1), all);
    }

    #[test]
    fn temporal_dilation_is_separate() {
        let mut m = MaskGrid::filled((5, 3, 3), true).unwrap();
        m.set(2, 1, 1, false);
        let spatial = dilate_mask(&m, 1, 0);
        assert_eq!(spatial.edited_count(), 9);
        let both = dilate_mask(&m, 0, 1);
        assert_eq!(both.edited_count(), 3);
        assert!(!both.get(1, 1, 1) && !both.get(3, 1, 1) && both.get(0, 1, 1));
    }

    #[test]
    fn downsample_examples() {
        let ones = image(8, 8, &[]);
        let l = downsample_mask(&ones, f2(4, 4)).unwrap();
        assert_eq!(l.shape(), (1, 2, 2));
        assert!(l.grid.as_slice().iter().all(|&b| b));

        let l = downsample_mask(&image(8, 8, &[(0, 0)]), f2(4, 4)).unwrap();
        assert_eq!(l.grid.as_slice(), &[false, true, true, true]);

        assert!(matches!(downsample_mask(&image(8, 9, &[]), f2(4, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn lift_examples() {
        let m = image(16, 16, &[(3, 5), (12, 12)]);
        assert_eq!(lift_mask(&m, f2(4, 4), 0, 0).unwrap(), downsample_mask(&m, f2(4, 4)).unwrap());
        let ones = image(32, 32, &[]);
        assert!(lift_mask(&ones, f2(8, 8), 4, 0).unwrap().grid.as_slice().iter().all(|&b| b));
    }

    #[test]
    fn thin_stripe_lift_matches_enumeration() {
        // Vertical edited stripe at column 17 of a 32x32 image.
        let stripe: Vec<_> = (0..32).map(|i| (i, 17)).collect();
        let m = image(32, 32, &stripe);
        let l = lift_mask(&m, f2(8, 8), 4, 0).unwrap();
        for bj in 0..4 {
            // Columns within 4 px of the stripe: 13..=21.
            let (lo, hi) = (bj * 8, bj * 8 + 7);
            let touched = lo <= 21 && hi >= 13;
            for bi in 0..4 {
                assert_eq!(l.grid.get(0, bi, bj), !touched, "cell ({bi},{bj})");
            }
        }
    }

    #[test]
    fn leakage_examples() {
        let m = image(8, 8, &[(1, 1), (6, 2)]);
        let all = downsample_mask(&m, f2(4, 4)).unwrap();
        let rep = leakage_report(&m, &all).unwrap();
        assert_eq!(rep.edited_pixels_in_observed_cells, 0);
        assert_eq!(rep.observed_pixels_in_edited_cells, 2 * 16 - 2);

        let any = downsample_with_rule(&m, f2(4, 4), DownsampleRule::Any).unwrap();
        let rep = leakage_report(&m, &any).unwrap();
        assert_eq!(rep.edited_pixels_in_observed_cells, 2);

        let ones = image(8, 8, &[]);
        let rep = leakage_report(&ones, &downsample_mask(&ones, f2(2, 2)).unwrap()).unwrap();
        assert_eq!(
            rep,
            LeakageReport {
                edited_pixels_in_observed_cells: 0,
                observed_pixels_in_edited_cells: 0
            }
        );
        assert!(leakage_report(&image(4, 4, &[]), &all).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Factors::new(0, 1, 1).is_err());
        assert!(MaskGrid::new((1, 2, 2), vec![true; 3]).is_err());
        assert!(MaskGrid::from_bytes((1, 1, 2), &[0, 2]).is_err());
        assert_eq!(Factors::spatial(8, 8).unwrap().default_radius(), 4);
    }

    fn arb_mask() -> impl Strategy<Value = (PixelMask, Factors)> {
        (prop::sample::select(vec![2usize, 4, 8]), 1usize..5, 1usize..5, 1usize..3, 1usize..3).prop_flat_map(
            |(f, bh, bw, ft, bt)| {
                let shape = (ft * bt, f * bh, f * bw);
                prop::collection::vec(prop::bool::weighted(0.85), shape.0 * shape.1 * shape.2).prop_map(
                    move |bits| (MaskGrid::new(shape, bits).unwrap(), Factors::new(ft, f, f).unwrap()),
                )
            },
        )
    }

    proptest! {
        #[test]
        fn lifting_never_leaks((m, f) in arb_mask(), r in 0usize..6, r_t in 0usize..2) {
            let l = lift_mask(&m, f, r, r_t).unwrap();
            prop_assert_eq!(leakage_report(&m, &l).unwrap().edited_pixels_in_observed_cells, 0);
            // One-sided overestimate of the dilated edited region.
            let dilated = dilate_mask(&m, r, r_t);
            prop_assert_eq!(leakage_report(&dilated, &l).unwrap().edited_pixels_in_observed_cells, 0);
        }

        #[test]
        fn larger_radius_never_restores_cells((m, f) in arb_mask(), r in 0usize..6) {
            let a = lift_mask(&m, f, r, 0).unwrap();
            let b = lift_mask(&m, f, r + 1, 0).unwrap();
            for (&x, &y) in a.grid.as_slice().iter().zip(b.grid.as_slice()) {
                prop_assert!(x || !y);
            }
        }
    }
}
