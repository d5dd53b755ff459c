//! Raster containers, the `GHSR` file format, tiling, padding, patch
//! extraction and probability quantization.

mod grid;
mod io;
mod ops;

pub use grid::{DType, RasterData, RasterGrid, ValidityMask, ZONE_ID_LEN};
pub use io::{
    load_raster, read_raster, read_raster_header, save_raster, write_raster, RasterHeader, HEADER_LEN, RASTER_MAGIC,
    RASTER_VERSION,
};
pub(crate) use ops::gather_block;
pub use ops::{
    dequantize_probability, iter_patches, pad_constant, probability_grid, quantize_probability, rescale_reflectance,
    tile_grid, Patch, PatchIter, TileIndex, PAD_VALUE, PROB_NODATA, QUANT_NODATA,
};
