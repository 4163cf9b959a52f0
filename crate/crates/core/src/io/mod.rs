//! Volume file formats.

mod mvol;
mod nifti;

pub use mvol::{
    load_mask, load_probability, load_volume, read_header, save_mask, save_volume, save_volume_as, Dtype, MvolPaths,
    HEADER_SUFFIX, RAW_SUFFIX,
};
pub use nifti::load_nifti;

/// Loads a volume from either format, choosing by file extension.
pub fn load_any(path: impl AsRef<std::path::Path>) -> crate::Result<crate::Volume3D> {
    let p = path.as_ref();
    let name = p.to_string_lossy();
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        load_nifti(p)
    } else {
        load_volume(p)
    }
}
