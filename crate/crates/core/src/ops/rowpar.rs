//! Row-parallel scaffolding for the forward passes.
//!
//! Regions are processed one output row at a time. Every buffer is
//! pre-sliced into disjoint per-row windows, so rows can run on any
//! number of threads while each region keeps its fixed reduction order.

use crate::grid::Regions;

/// Splits `buf` into consecutive mutable windows of the given lengths.
pub(crate) fn split_rows<'a, T>(
    mut buf: &'a mut [T],
    lens: impl Iterator<Item = usize>,
) -> Vec<&'a mut [T]> {
    let mut out = Vec::new();
    for len in lens {
        let (head, tail) = buf.split_at_mut(len);
        out.push(head);
        buf = tail;
    }
    debug_assert!(buf.is_empty());
    out
}

/// Turns an optional buffer's row split into per-row options so rows
/// can be zipped uniformly.
pub(crate) fn option_rows<'a, T>(
    buf: Option<&'a mut [T]>,
    lens: &[usize],
) -> Vec<Option<&'a mut [T]>> {
    match buf {
        Some(b) => split_rows(b, lens.iter().copied()).into_iter().map(Some).collect(),
        None => lens.iter().map(|_| None).collect(),
    }
}

/// Row decomposition of a region grid: `n_rows` rows of `row_width`
/// regions each, in flat region order.
pub(crate) struct RowPlan {
    pub n_rows: usize,
    pub row_width: usize,
}

impl RowPlan {
    pub(crate) fn new(regions: &Regions) -> Self {
        let n = regions.n_regions();
        let out = regions.output_extents();
        let row_width = *out.last().unwrap();
        Self { n_rows: n / row_width, row_width }
    }

    pub(crate) fn region_range(&self, row: usize) -> std::ops::Range<usize> {
        row * self.row_width..(row + 1) * self.row_width
    }

    /// Per-row lengths for a buffer with `per_region` slots per region.
    pub(crate) fn uniform_lens(&self, per_region: usize) -> Vec<usize> {
        vec![self.row_width * per_region; self.n_rows]
    }

    /// Per-row lengths for member-indexed buffers with `per_member`
    /// slots per member, from the member-count prefix sums.
    pub(crate) fn member_lens(&self, offsets: &[usize], per_member: usize) -> Vec<usize> {
        (0..self.n_rows)
            .map(|row| {
                let r = self.region_range(row);
                (offsets[r.end] - offsets[r.start]) * per_member
            })
            .collect()
    }
}

/// Transposes a region-major (R x C) buffer into channel-major (C x R).
pub(crate) fn to_channel_major(tmp: &[f64], n_regions: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; tmp.len()];
    for r in 0..n_regions {
        for c in 0..channels {
            out[c * n_regions + r] = tmp[r * channels + c];
        }
    }
    out
}
