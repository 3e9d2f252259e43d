//! Native `.c2bvol` volume files.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0   16  magic "C2BVOL01" + 8 zero bytes
//! 16  12  dims: 3 × u32
//! 28  48  voxel_size_mm: 3 × f64, origin_mm: 3 × f64
//! 76  ..  payload: dims.x·dims.y·dims.z × f32, x-fastest
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{BrainVolume, GridSpec, VolumeError};

pub const NATIVE_MAGIC: [u8; 16] = *b"C2BVOL01\0\0\0\0\0\0\0\0";
const HEADER_LEN: usize = 16 + 12 + 48;

pub fn write_native<W: Write>(volume: &BrainVolume, mut w: W) -> Result<(), VolumeError> {
    let grid = volume.grid();
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&NATIVE_MAGIC);
    for &d in &grid.dims {
        let d = u32::try_from(d)
            .map_err(|_| VolumeError::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    for v in grid.voxel_size_mm.iter().chain(&grid.origin_mm) {
        header.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(volume.data().len() * 4);
    for v in volume.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_native<R: Read>(mut r: R) -> Result<BrainVolume, VolumeError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(VolumeError::format(
            "header",
            format!("expected {HEADER_LEN} header bytes, found {}", bytes.len()),
        ));
    }
    if bytes[..16] != NATIVE_MAGIC {
        return Err(VolumeError::format(
            "magic",
            format!("expected C2BVOL01, found {:?}", String::from_utf8_lossy(&bytes[..8])),
        ));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dims = [u32_at(16), u32_at(20), u32_at(24)];
    let voxel_size_mm = [f64_at(28), f64_at(36), f64_at(44)];
    let origin_mm = [f64_at(52), f64_at(60), f64_at(68)];
    let grid = GridSpec::new(dims, voxel_size_mm, origin_mm)
        .map_err(|e| VolumeError::format("dims", e.to_string()))?;

    let expected = grid.voxel_count() * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(VolumeError::format(
            "payload",
            format!("expected {expected} bytes, found {}", payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    BrainVolume::from_data(grid, data)
}

pub fn save_native(volume: &BrainVolume, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_native(volume, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn load_native(path: impl AsRef<Path>) -> Result<BrainVolume, VolumeError> {
    read_native(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::{synthesize_target, PeakCoordinate};

    fn sample() -> BrainVolume {
        let grid = GridSpec::new([5, 4, 3], [2.0, 2.5, 3.0], [-4.0, -3.75, 0.1]).unwrap();
        synthesize_target(&grid, &[PeakCoordinate::new(0.3, 0.0, 2.0)], 6.0).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let v = sample();
        let mut a = Vec::new();
        write_native(&v, &mut a).unwrap();
        let back = read_native(&a[..]).unwrap();
        assert_eq!(back.grid(), v.grid());
        let mut b = Vec::new();
        write_native(&back, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), HEADER_LEN + 60 * 4);
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = Vec::new();
        write_native(&sample(), &mut bytes).unwrap();
        bytes[0] = b'X';
        let err = read_native(&bytes[..]).unwrap_err();
        assert!(matches!(err, VolumeError::Format { field: "magic", .. }), "{err}");
    }

    #[test]
    fn truncated_payload_is_reported() {
        let mut bytes = Vec::new();
        write_native(&sample(), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        let err = read_native(&bytes[..]).unwrap_err();
        assert!(matches!(err, VolumeError::Format { field: "payload", .. }), "{err}");
    }

    #[test]
    fn zero_dim_is_reported() {
        let mut bytes = Vec::new();
        write_native(&sample(), &mut bytes).unwrap();
        bytes[16..20].copy_from_slice(&0u32.to_le_bytes());
        let err = read_native(&bytes[..]).unwrap_err();
        assert!(matches!(err, VolumeError::Format { field: "dims", .. }), "{err}");
    }
}
