use rayon::prelude::*;

use super::Raster;
use crate::error::Result;
use crate::homography::Homography;

/// Resamples `src` into an `out_w × out_h` frame where output pixel (u, v)
/// takes the bilinear value of `src` at `H⁻¹(u, v)`.
///
/// Points outside `src`, or whose stencil touches nodata, become nodata.
pub fn warp(src: &Raster, h: &Homography, out_w: u32, out_h: u32) -> Result<Raster> {
    let inv = h.inverse()?;
    let c = src.channels() as usize;
    let row_len = out_w as usize * c;
    let mut data = vec![f32::NAN; row_len * out_h as usize];
    if row_len > 0 {
        data.par_chunks_mut(row_len).enumerate().for_each(|(v, row)| {
            for (u, px) in row.chunks_exact_mut(c).enumerate() {
                if let Some((x, y)) = inv.apply_xy(u as f64, v as f64) {
                    src.sample_bilinear(x, y, px);
                }
            }
        });
    }
    Raster::new(out_w, out_h, src.channels(), data)
}
