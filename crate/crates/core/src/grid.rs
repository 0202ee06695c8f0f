//! Dense activation-map container and pooling geometry.
//!
//! An [`ActivationMap`] is a contiguous channel-major block of 64-bit
//! floats over a 2D (H, W) or 3D (T, H, W) spatial grid. A
//! [`PoolGeometry`] describes how that grid decomposes into kernel
//! regions; [`enumerate_regions`] materializes the decomposition in
//! output row-major order.

use crate::error::{Error, Result};

/// Dense C x H x W (or C x T x H x W) array of 64-bit floats.
///
/// Data is stored channel-major, spatial row-major: the value at
/// channel `c` and flat spatial index `s` lives at `c * spatial_len() + s`.
/// Maps are immutable after construction and all values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    channels: usize,
    spatial: Vec<usize>,
    data: Vec<f64>,
}

impl ActivationMap {
    /// Builds a map, validating extents and finiteness.
    pub fn new(channels: usize, spatial: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("channel count must be positive".into()));
        }
        if spatial.len() != 2 && spatial.len() != 3 {
            return Err(Error::Shape(format!(
                "spatial rank must be 2 or 3, got {}",
                spatial.len()
            )));
        }
        if spatial.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!("spatial extents must be positive: {spatial:?}")));
        }
        let expect = channels * spatial.iter().product::<usize>();
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "data length {} does not match {} channels x {:?}",
                data.len(),
                channels,
                spatial
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("activation map"));
        }
        Ok(Self { channels, spatial, data })
    }

    /// Zero-filled map of the given shape (extents already validated by the caller).
    pub fn zeros(channels: usize, spatial: Vec<usize>) -> Self {
        let len = channels * spatial.iter().product::<usize>();
        Self { channels, spatial, data: vec![0.0; len] }
    }

    /// Internal constructor for values produced by the kernels themselves.
    pub(crate) fn from_parts(channels: usize, spatial: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * spatial.iter().product::<usize>());
        Self { channels, spatial, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial(&self) -> &[usize] {
        &self.spatial
    }

    /// Number of positions in one channel plane.
    pub fn spatial_len(&self) -> usize {
        self.spatial.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// One channel plane as a contiguous slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let s = self.spatial_len();
        &self.data[c * s..(c + 1) * s]
    }

    /// Value at channel `c` and flat spatial index `s`.
    pub fn value(&self, c: usize, s: usize) -> f64 {
        self.data[c * self.spatial_len() + s]
    }

    /// Same map with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> ActivationMap {
        ActivationMap {
            channels: self.channels,
            spatial: self.spatial.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Kernel/stride/padding per spatial dimension.
///
/// The stride defaults to the kernel (non-overlapping tiling). Padding
/// must stay below the kernel extent so every region keeps at least one
/// in-bounds member; padded positions are excluded from reductions
/// rather than zero-filled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolGeometry {
    kernel: Vec<usize>,
    stride: Vec<usize>,
    padding: Vec<usize>,
}

impl PoolGeometry {
    pub fn new(kernel: Vec<usize>, stride: Vec<usize>, padding: Vec<usize>) -> Result<Self> {
        let dims = kernel.len();
        if dims != 2 && dims != 3 {
            return Err(Error::Shape(format!("geometry rank must be 2 or 3, got {dims}")));
        }
        if stride.len() != dims || padding.len() != dims {
            return Err(Error::Shape(
                "kernel, stride and padding must share one rank".into(),
            ));
        }
        if kernel.iter().any(|&k| k == 0) || stride.iter().any(|&s| s == 0) {
            return Err(Error::Shape("kernel and stride extents must be positive".into()));
        }
        if padding.iter().zip(&kernel).any(|(&p, &k)| p >= k) {
            return Err(Error::Shape(
                "padding must be smaller than the kernel in every dimension".into(),
            ));
        }
        Ok(Self { kernel, stride, padding })
    }

    /// Square/cubic kernel with stride = kernel and no padding.
    pub fn uniform(dims: usize, k: usize) -> Result<Self> {
        Self::new(vec![k; dims], vec![k; dims], vec![0; dims])
    }

    pub fn dims(&self) -> usize {
        self.kernel.len()
    }

    pub fn kernel(&self) -> &[usize] {
        &self.kernel
    }

    pub fn stride(&self) -> &[usize] {
        &self.stride
    }

    pub fn padding(&self) -> &[usize] {
        &self.padding
    }

    /// True when stride equals kernel and no padding is used, i.e. the
    /// regions tile the input without overlap. This is what the unpool
    /// path requires.
    pub fn is_tiling(&self) -> bool {
        self.kernel == self.stride && self.padding.iter().all(|&p| p == 0)
    }

    /// Number of kernel positions, k^dims for square kernels.
    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Output extent per dimension: floor((in + 2 pad - k) / stride) + 1.
    pub fn output_extents(&self, input_spatial: &[usize]) -> Result<Vec<usize>> {
        if input_spatial.len() != self.dims() {
            return Err(Error::Shape(format!(
                "geometry rank {} does not match input rank {}",
                self.dims(),
                input_spatial.len()
            )));
        }
        let mut out = Vec::with_capacity(self.dims());
        for d in 0..self.dims() {
            let padded = input_spatial[d] + 2 * self.padding[d];
            if padded < self.kernel[d] {
                return Err(Error::Shape(format!(
                    "kernel {} exceeds padded input extent {} in dimension {}",
                    self.kernel[d], padded, d
                )));
            }
            out.push((padded - self.kernel[d]) / self.stride[d] + 1);
        }
        Ok(out)
    }
}

/// One kernel region: where it sits in the output grid and which input
/// positions belong to it. Padded positions are omitted, so
/// `member_indices` holds only in-bounds flat spatial indices, in
/// strictly increasing scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionView {
    pub output_index: Vec<usize>,
    pub member_indices: Vec<usize>,
}

impl RegionView {
    /// Members actually inside bounds (all of them, by construction).
    pub fn valid_count(&self) -> usize {
        self.member_indices.len()
    }
}

/// Region decomposition with dimension-generic indexing. 2D inputs are
/// treated as T = 1 slabs so a single 3-level loop serves both ranks.
#[derive(Debug, Clone)]
pub(crate) struct Regions {
    dims: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    input: [usize; 3],
    output: [usize; 3],
}

impl Regions {
    pub(crate) fn new(spatial: &[usize], geom: &PoolGeometry) -> Result<Self> {
        let out = geom.output_extents(spatial)?;
        let dims = geom.dims();
        let lift = |src: &[usize], fill: usize| -> [usize; 3] {
            let mut a = [fill; 3];
            a[3 - dims..].copy_from_slice(src);
            a
        };
        Ok(Self {
            dims,
            kernel: lift(geom.kernel(), 1),
            stride: lift(geom.stride(), 1),
            padding: lift(geom.padding(), 0),
            input: lift(spatial, 1),
            output: lift(&out, 1),
        })
    }

    pub(crate) fn n_regions(&self) -> usize {
        self.output.iter().product()
    }

    pub(crate) fn output_extents(&self) -> Vec<usize> {
        self.output[3 - self.dims..].to_vec()
    }

    /// Input extents in the lifted 3D frame (leading dims padded to 1).
    pub(crate) fn input_lifted(&self) -> [usize; 3] {
        self.input
    }

    /// Flat output index -> (t', y', x') in the lifted 3D frame.
    fn output_coords(&self, r: usize) -> [usize; 3] {
        let x = r % self.output[2];
        let rest = r / self.output[2];
        let y = rest % self.output[1];
        let t = rest / self.output[1];
        [t, y, x]
    }

    /// Clipped member coordinate ranges `[lo, hi)` of region `r`.
    pub(crate) fn bounds(&self, r: usize) -> ([usize; 3], [usize; 3]) {
        let coords = self.output_coords(r);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for d in 0..3 {
            let start = (coords[d] * self.stride[d]) as isize - self.padding[d] as isize;
            lo[d] = start.max(0) as usize;
            hi[d] = ((start + self.kernel[d] as isize) as usize).min(self.input[d]);
        }
        (lo, hi)
    }

    pub(crate) fn member_count(&self, r: usize) -> usize {
        let (lo, hi) = self.bounds(r);
        (0..3).map(|d| hi[d] - lo[d]).product()
    }

    /// Visits the flat spatial index of every in-bounds member of
    /// region `r`, in row-major scan order.
    pub(crate) fn for_each_member(&self, r: usize, mut f: impl FnMut(usize)) {
        let (lo, hi) = self.bounds(r);
        let [_, h, w] = [self.input[0], self.input[1], self.input[2]];
        for t in lo[0]..hi[0] {
            let t_base = t * h * w;
            for y in lo[1]..hi[1] {
                let base = t_base + y * w;
                for x in lo[2]..hi[2] {
                    f(base + x);
                }
            }
        }
    }

    pub(crate) fn output_index(&self, r: usize) -> Vec<usize> {
        let c = self.output_coords(r);
        c[3 - self.dims..].to_vec()
    }

    /// Member-count prefix sums, offsets[r]..offsets[r+1] slices a
    /// region-major buffer.
    pub(crate) fn member_offsets(&self) -> Vec<usize> {
        let n = self.n_regions();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut acc = 0;
        for r in 0..n {
            acc += self.member_count(r);
            offsets.push(acc);
        }
        offsets
    }
}

/// Decomposes `map_shape` into kernel regions, in output row-major order.
///
/// Exactly `prod(output extents)` regions come back; trailing input
/// rows/columns that do not fill a region are dropped by the floor
/// convention of [`PoolGeometry::output_extents`].
pub fn enumerate_regions(map_shape: &[usize], geometry: &PoolGeometry) -> Result<Vec<RegionView>> {
    let regions = Regions::new(map_shape, geometry)?;
    let n = regions.n_regions();
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let mut members = Vec::with_capacity(regions.member_count(r));
        regions.for_each_member(r, |idx| members.push(idx));
        out.push(RegionView {
            output_index: regions.output_index(r),
            member_indices: members,
        });
    }
    Ok(out)
}

/// Per-channel mean activation of a region, excluding padded positions.
pub fn region_mean(map: &ActivationMap, region: &RegionView) -> Result<Vec<f64>> {
    let m = region.valid_count();
    if m == 0 {
        return Err(Error::Shape("region has no valid members".into()));
    }
    let spatial_len = map.spatial_len();
    if let Some(&last) = region.member_indices.last() {
        if last >= spatial_len {
            return Err(Error::Shape(format!(
                "region member {last} out of bounds for spatial length {spatial_len}"
            )));
        }
    }
    let mut mean = Vec::with_capacity(map.channels());
    for c in 0..map.channels() {
        let plane = map.channel(c);
        let sum: f64 = region.member_indices.iter().map(|&i| plane[i]).sum();
        mean.push(sum / m as f64);
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_1x4x4() -> ActivationMap {
        ActivationMap::new(1, vec![4, 4], (0..16).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn four_regions_tile_a_4x4_input() {
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let regions = enumerate_regions(&[4, 4], &geom).unwrap();
        assert_eq!(regions.len(), 4);
        assert!(regions.iter().all(|r| r.valid_count() == 4));
        assert_eq!(regions[0].member_indices, vec![0, 1, 4, 5]);
        assert_eq!(regions[3].member_indices, vec![10, 11, 14, 15]);
    }

    #[test]
    fn floor_convention_drops_trailing_row_and_column() {
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let regions = enumerate_regions(&[5, 5], &geom).unwrap();
        assert_eq!(regions.len(), 4);
    }

    #[test]
    fn identity_tiling_single_region() {
        let geom = PoolGeometry::uniform(2, 3).unwrap();
        let regions = enumerate_regions(&[3, 3], &geom).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].member_indices, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn kernel_exceeding_padded_input_is_an_error() {
        let geom = PoolGeometry::uniform(2, 4).unwrap();
        assert!(matches!(enumerate_regions(&[3, 3], &geom), Err(Error::Shape(_))));
    }

    #[test]
    fn padded_regions_drop_out_of_bounds_members() {
        let geom = PoolGeometry::new(vec![2, 2], vec![2, 2], vec![1, 1]).unwrap();
        let regions = enumerate_regions(&[4, 4], &geom).unwrap();
        // (4 + 2 - 2)/2 + 1 = 3 per dim.
        assert_eq!(regions.len(), 9);
        assert_eq!(regions[0].member_indices, vec![0]); // corner keeps 1 of 4
        assert_eq!(regions[4].valid_count(), 4); // interior keeps all
        let total: usize = regions.iter().map(|r| r.valid_count()).sum();
        assert_eq!(total, 16); // still a partition of the input
    }

    #[test]
    fn tiling_partitions_the_input_exactly_once() {
        let geom = PoolGeometry::uniform(2, 3).unwrap();
        let regions = enumerate_regions(&[9, 6], &geom).unwrap();
        let mut seen = vec![0usize; 9 * 6];
        for r in &regions {
            for &i in &r.member_indices {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn enumeration_is_deterministic() {
        let geom = PoolGeometry::new(vec![3, 2], vec![2, 2], vec![1, 0]).unwrap();
        let a = enumerate_regions(&[7, 6], &geom).unwrap();
        let b = enumerate_regions(&[7, 6], &geom).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn region_mean_examples() {
        let map = ActivationMap::new(1, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let region = &enumerate_regions(&[2, 2], &geom).unwrap()[0];
        assert_eq!(region_mean(&map, region).unwrap(), vec![2.5]);

        let constant = ActivationMap::new(1, vec![2, 2], vec![7.5; 4]).unwrap();
        assert_eq!(region_mean(&constant, region).unwrap(), vec![7.5]);

        let two = ActivationMap::new(2, vec![2, 1], vec![1.0, 3.0, 0.0, 0.0]).unwrap();
        let geom = PoolGeometry::new(vec![2, 1], vec![2, 1], vec![0, 0]).unwrap();
        let region = &enumerate_regions(&[2, 1], &geom).unwrap()[0];
        assert_eq!(region_mean(&two, region).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn region_mean_of_symmetric_values_is_exact() {
        // Members symmetric about 3.0 pair off exactly in f64.
        let map = ActivationMap::new(1, vec![2, 2], vec![1.0, 5.0, 2.0, 4.0]).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let region = &enumerate_regions(&[2, 2], &geom).unwrap()[0];
        assert_eq!(region_mean(&map, region).unwrap(), vec![3.0]);
    }

    #[test]
    fn three_dimensional_regions_use_the_same_path() {
        let geom = PoolGeometry::uniform(3, 2).unwrap();
        let regions = enumerate_regions(&[4, 4, 4], &geom).unwrap();
        assert_eq!(regions.len(), 8);
        assert!(regions.iter().all(|r| r.valid_count() == 8));
        assert_eq!(regions[0].output_index, vec![0, 0, 0]);
        assert_eq!(regions[7].output_index, vec![1, 1, 1]);
    }

    #[test]
    fn map_construction_rejects_bad_input() {
        assert!(ActivationMap::new(1, vec![2, 2], vec![0.0; 3]).is_err());
        assert!(ActivationMap::new(0, vec![2, 2], vec![]).is_err());
        assert!(ActivationMap::new(1, vec![2, 2], vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(ActivationMap::new(1, vec![4], vec![0.0; 4]).is_err());
    }

    #[test]
    fn geometry_validation() {
        assert!(PoolGeometry::new(vec![2, 2], vec![2, 2], vec![2, 0]).is_err());
        assert!(PoolGeometry::new(vec![0, 2], vec![2, 2], vec![0, 0]).is_err());
        assert!(PoolGeometry::new(vec![2, 2], vec![2], vec![0, 0]).is_err());
        let g = PoolGeometry::uniform(2, 2).unwrap();
        assert!(g.is_tiling());
        assert_eq!(g.output_extents(&[4, 6]).unwrap(), vec![2, 3]);
        let _ = map_1x4x4();
    }
}
