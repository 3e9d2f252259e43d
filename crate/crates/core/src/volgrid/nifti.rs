//! Minimal single-file NIfTI-1 (`.nii`) support: little-endian, 3-D, float32.
//!
//! The exported header stores the voxel-to-world affine in the sform rows
//! (`sform_code = 4`, MNI152) and the voxel sizes in `pixdim`. Voxel data start
//! at byte 352, after the 348-byte header and a zeroed 4-byte extension flag.

use std::io::Write;
use std::path::Path;

use super::{BrainVolume, GridSpec, VolumeError};

pub const NIFTI_HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_FLOAT32: i16 = 16;
const NIFTI_XFORM_MNI_152: i16 = 4;
const NIFTI_UNITS_MM: u8 = 2;

pub fn export_nifti(volume: &BrainVolume) -> Result<Vec<u8>, VolumeError> {
    let grid = volume.grid();
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], o: usize, v: i16| h[o..o + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], o: usize, v: f32| h[o..o + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(NIFTI_HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    let mut dim = [3i16, 1, 1, 1, 1, 1, 1, 1];
    for a in 0..3 {
        dim[a + 1] = i16::try_from(grid.dims[a]).map_err(|_| {
            VolumeError::InvalidArgument(format!("dimension {} exceeds NIfTI-1 i16", grid.dims[a]))
        })?;
    }
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, *d);
    }
    put_i16(&mut h, 70, DT_FLOAT32);
    put_i16(&mut h, 72, 32);
    let mut pixdim = [1.0f32; 8];
    for a in 0..3 {
        pixdim[a + 1] = grid.voxel_size_mm[a] as f32;
    }
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * i, *p);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[123] = NIFTI_UNITS_MM;
    let descrip = b"brainmap activation volume";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    put_i16(&mut h, 254, NIFTI_XFORM_MNI_152);
    for a in 0..3 {
        let row = 280 + 16 * a;
        put_f32(&mut h, row + 4 * a, grid.voxel_size_mm[a] as f32);
        put_f32(&mut h, row + 12, grid.origin_mm[a] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");

    let mut out = h;
    out.reserve(volume.data().len() * 4);
    for v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn import_nifti(bytes: &[u8]) -> Result<BrainVolume, VolumeError> {
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(VolumeError::format(
            "sizeof_hdr",
            format!("file has only {} bytes", bytes.len()),
        ));
    }
    let i16_at = |o: usize| i16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());

    let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if sizeof_hdr != NIFTI_HEADER_SIZE as i32 {
        return Err(VolumeError::format(
            "sizeof_hdr",
            format!("expected 348 (little-endian), found {sizeof_hdr}"),
        ));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(VolumeError::format(
            "magic",
            format!("expected \"n+1\\0\", found {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let dim: Vec<i16> = (0..8).map(|i| i16_at(40 + 2 * i)).collect();
    if dim[0] != 3 || dim[1..4].iter().any(|&d| d < 1) {
        return Err(VolumeError::format(
            "dim",
            format!("only 3-D volumes are supported, found {dim:?}"),
        ));
    }
    let datatype = i16_at(70);
    if datatype != DT_FLOAT32 || i16_at(72) != 32 {
        return Err(VolumeError::format(
            "datatype",
            format!("only float32 (16) is supported, found {datatype}"),
        ));
    }
    let slope = f32_at(112);
    let inter = f32_at(116);
    if !(slope == 0.0 || slope == 1.0) || inter != 0.0 {
        return Err(VolumeError::format(
            "scl_slope",
            format!("intensity scaling ({slope}, {inter}) is not supported"),
        ));
    }
    let vox_offset = f32_at(108);
    if !(vox_offset >= NIFTI_HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(VolumeError::format(
            "vox_offset",
            format!("invalid data offset {vox_offset}"),
        ));
    }
    let vox_offset = vox_offset as usize;

    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let voxel_size_mm = [f32_at(80) as f64, f32_at(84) as f64, f32_at(88) as f64];
    let origin_mm = if i16_at(254) > 0 {
        [f32_at(292) as f64, f32_at(308) as f64, f32_at(324) as f64]
    } else {
        [f32_at(268) as f64, f32_at(272) as f64, f32_at(276) as f64]
    };
    let grid = GridSpec::new(dims, voxel_size_mm, origin_mm)
        .map_err(|e| VolumeError::format("pixdim", e.to_string()))?;

    let expected = grid.voxel_count() * 4;
    let available = bytes.len().saturating_sub(vox_offset);
    if available < expected {
        return Err(VolumeError::format(
            "payload",
            format!("expected {expected} bytes after offset {vox_offset}, found {available}"),
        ));
    }
    let data = bytes[vox_offset..vox_offset + expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    BrainVolume::from_data(grid, data)
}

pub fn save_nifti(volume: &BrainVolume, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let bytes = export_nifti(volume)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_nifti(path: impl AsRef<Path>) -> Result<BrainVolume, VolumeError> {
    import_nifti(&std::fs::read(path)?)
}
