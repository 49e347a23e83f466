//! The five split-function families.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{ring_bins, CellFeatures, Channel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum SplitKind {
    Height,
    /// `profile[z * R + r]` weights every voxel of slice `z` in radius bin `r`.
    RotationInvariant {
        channel: Channel,
        profile: Vec<f64>,
    },
    Box {
        channel: Channel,
        lo: [usize; 3],
        hi: [usize; 3],
    },
    /// `z0` is measured from the centre slice.
    HorizontalSlab {
        channel: Channel,
        z0: i32,
    },
    Pixelwise {
        channel: Channel,
        voxels: Vec<[usize; 3]>,
        coeffs: Vec<i8>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Height,
    RotationInvariant,
    Box,
    HorizontalSlab,
    Pixelwise,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Height,
        Family::RotationInvariant,
        Family::Box,
        Family::HorizontalSlab,
        Family::Pixelwise,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFunction {
    #[serde(flatten)]
    pub kind: SplitKind,
    pub tau: f64,
}

impl SplitKind {
    pub fn family(&self) -> Family {
        match self {
            SplitKind::Height => Family::Height,
            SplitKind::RotationInvariant { .. } => Family::RotationInvariant,
            SplitKind::Box { .. } => Family::Box,
            SplitKind::HorizontalSlab { .. } => Family::HorizontalSlab,
            SplitKind::Pixelwise { .. } => Family::Pixelwise,
        }
    }

    pub fn channel(&self) -> Channel {
        match self {
            SplitKind::Height => Channel::Height,
            SplitKind::RotationInvariant { channel, .. }
            | SplitKind::Box { channel, .. }
            | SplitKind::HorizontalSlab { channel, .. }
            | SplitKind::Pixelwise { channel, .. } => *channel,
        }
    }

    /// The scalar `u^T h_k` compared against the threshold.
    pub fn response<C: CellFeatures + ?Sized>(&self, cell: &C) -> f64 {
        match self {
            SplitKind::Height => cell.height(),
            SplitKind::RotationInvariant { channel, profile } => {
                let m = cell.m();
                let r_bins = ring_bins(m);
                let mut s = 0.0;
                for z in 0..m {
                    for r in 0..r_bins {
                        s += profile[z * r_bins + r] * cell.ring_sum(*channel, r, z);
                    }
                }
                s
            }
            SplitKind::Box { channel, lo, hi } => cell.box_sum(*channel, *lo, *hi),
            SplitKind::HorizontalSlab { channel, z0 } => {
                let m = cell.m();
                let z = ((m / 2) as i32 + z0) as usize;
                cell.box_sum(*channel, [0, 0, z], [m - 1, m - 1, z])
            }
            SplitKind::Pixelwise { channel, voxels, coeffs } => voxels
                .iter()
                .zip(coeffs)
                .map(|(v, &a)| f64::from(a) * cell.value(*channel, *v))
                .sum(),
        }
    }

    /// True when every parameter addresses a voxel inside an `m^3` cell.
    pub fn is_valid_for(&self, m: usize) -> bool {
        let h = (m / 2) as i32;
        match self {
            SplitKind::Height => true,
            SplitKind::RotationInvariant { channel, profile } => channel.is_field() && profile.len() == m * ring_bins(m),
            SplitKind::Box { channel, lo, hi } => channel.is_field() && (0..3).all(|a| lo[a] <= hi[a] && hi[a] < m),
            SplitKind::HorizontalSlab { channel, z0 } => channel.is_field() && (-h..=h).contains(z0),
            SplitKind::Pixelwise { channel, voxels, coeffs } => {
                channel.is_field()
                    && voxels.len() == coeffs.len()
                    && voxels.len() <= 3
                    && voxels.iter().all(|v| v.iter().all(|&c| c < m))
                    && coeffs.iter().all(|a| (-1..=1).contains(a))
            }
        }
    }
}

impl SplitFunction {
    pub fn eval<C: CellFeatures + ?Sized>(&self, cell: &C) -> bool {
        self.kind.response(cell) > self.tau
    }
}

pub fn eval_split<C: CellFeatures + ?Sized>(s: &SplitFunction, cell: &C) -> bool {
    s.eval(cell)
}

/// Draws a split shape uniformly over the families that the available
/// channels support, then uniformly over the family's channels. The
/// threshold is chosen later from the data reaching the node.
pub fn sample_split_kind<R: Rng + ?Sized>(rng: &mut R, m: usize, channels: &[Channel]) -> SplitKind {
    let fields: Vec<Channel> = channels.iter().copied().filter(|c| c.is_field()).collect();
    let has_height = channels.contains(&Channel::Height);
    let families: Vec<Family> = Family::ALL
        .into_iter()
        .filter(|f| if *f == Family::Height { has_height } else { !fields.is_empty() })
        .collect();
    let family = families[rng.random_range(0..families.len())];
    let pick_channel = |rng: &mut R| fields[rng.random_range(0..fields.len())];
    match family {
        Family::Height => SplitKind::Height,
        Family::RotationInvariant => {
            let channel = pick_channel(rng);
            let profile = (0..m * ring_bins(m)).map(|_| rng.random_range(-1.0..=1.0)).collect();
            SplitKind::RotationInvariant { channel, profile }
        }
        Family::Box => {
            let channel = pick_channel(rng);
            let mut lo = [0; 3];
            let mut hi = [0; 3];
            for a in 0..3 {
                let p = rng.random_range(0..m);
                let q = rng.random_range(0..m);
                lo[a] = p.min(q);
                hi[a] = p.max(q);
            }
            SplitKind::Box { channel, lo, hi }
        }
        Family::HorizontalSlab => {
            let channel = pick_channel(rng);
            let h = (m / 2) as i32;
            SplitKind::HorizontalSlab {
                channel,
                z0: rng.random_range(-h..=h),
            }
        }
        Family::Pixelwise => {
            let channel = pick_channel(rng);
            let voxels = (0..3).map(|_| std::array::from_fn(|_| rng.random_range(0..m))).collect();
            let coeffs = (0..3).map(|_| rng.random_range(-1..=1)).collect();
            SplitKind::Pixelwise { channel, voxels, coeffs }
        }
    }
}

/// A complete split whose threshold is uniform over the observed response
/// range of `cells`.
pub fn sample_split<R: Rng + ?Sized, C: CellFeatures>(rng: &mut R, m: usize, channels: &[Channel], cells: &[C]) -> SplitFunction {
    let kind = sample_split_kind(rng, m, channels);
    let (lo, hi) = cells
        .iter()
        .map(|c| kind.response(c))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r), b.max(r)));
    let tau = if lo < hi {
        rng.random_range(lo..=hi)
    } else if lo.is_finite() {
        lo
    } else {
        0.0
    };
    SplitFunction { kind, tau }
}
