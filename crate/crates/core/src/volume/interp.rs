//! k-linear interpolation on regular grids with zero padding.
//!
//! Grid nodes sit at integer coordinates `0..dims[a]` with axis 0 varying
//! fastest in memory. Nodes outside the grid read as zero, so a coordinate
//! more than one cell outside returns the zero vector and the interpolant is
//! continuous everywhere.

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Calls `f(flat_index, weight)` for every in-grid corner of the cell that
/// contains `coord`. Corners outside the grid are skipped; weights of the
/// visited corners sum to one only for interior coordinates.
#[inline]
pub fn for_each_corner<const K: usize>(dims: [usize; K], coord: [f64; K], mut f: impl FnMut(usize, f64)) {
    let mut base = [0isize; K];
    let mut frac = [0.0f64; K];
    for a in 0..K {
        let c = coord[a];
        if !c.is_finite() || c <= -1.0 || c >= dims[a] as f64 {
            return;
        }
        let fl = c.floor();
        base[a] = fl as isize;
        frac[a] = c - fl;
    }
    'corner: for mask in 0..(1usize << K) {
        let mut flat = 0usize;
        let mut stride = 1usize;
        let mut w = 1.0;
        for a in 0..K {
            let hi = (mask >> a) & 1 == 1;
            let idx = base[a] + hi as isize;
            if idx < 0 || idx >= dims[a] as isize {
                continue 'corner;
            }
            w *= if hi { frac[a] } else { 1.0 - frac[a] };
            flat += idx as usize * stride;
            stride *= dims[a];
        }
        f(flat, w);
    }
}

/// Interpolates a `C`-channel field stored channel-major (`C` planes of
/// `prod(dims)` values) at `coord`, writing `C` values into `out`.
pub fn interp<const K: usize>(field: &[f64], dims: [usize; K], coord: [f64; K], out: &mut [f64]) {
    let plane: usize = dims.iter().product();
    debug_assert_eq!(field.len(), plane * out.len());
    out.iter_mut().for_each(|o| *o = 0.0);
    for_each_corner(dims, coord, |idx, w| {
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * field[c * plane + idx];
        }
    });
}

/// Single-channel trilinear interpolation specialised for the projector
/// inner loops. Matches `interp::<3>` exactly.
#[inline]
pub fn trilinear(data: &[f64], dims: [usize; 3], c: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for_each_corner(dims, c, |idx, w| acc += w * data[idx]);
    acc
}

/// Adjoint of [`trilinear`]: adds `value * weight` into every corner.
#[inline]
pub fn trilinear_splat(data: &mut [f64], dims: [usize; 3], c: [f64; 3], value: f64) {
    for_each_corner(dims, c, |idx, w| data[idx] += w * value);
}
