//! Client-side image preparation for the wire.

use std::io::Cursor;
use std::path::Path;

use base64::Engine;
use image::imageops::FilterType;

use super::BackendError;

/// Edge length images are standardized to before sending.
pub const WIRE_IMAGE_SIZE: u32 = 336;

/// Resizes so the short side equals `size`, center-crops to `size x size`,
/// and re-encodes as PNG.
pub fn prepare_image(bytes: &[u8], size: u32) -> Result<Vec<u8>, BackendError> {
    let img = image::load_from_memory(bytes).map_err(|e| BackendError::InvalidRequest(format!("undecodable image: {e}")))?;
    let fitted = img.resize_to_fill(size, size, FilterType::Triangle);
    let mut out = Cursor::new(Vec::new());
    fitted
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| BackendError::InvalidRequest(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

pub fn data_url(path: &Path, size: u32) -> Result<String, BackendError> {
    let bytes = std::fs::read(path).map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
    let png = prepare_image(&bytes, size)?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    ))
}
