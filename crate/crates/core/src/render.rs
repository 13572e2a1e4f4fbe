//! Colour visualisation of panoptic maps.

use crate::codec::write_rgb_png;
use crate::error::Result;
use crate::panoptic::{PanopticMap, VOID_ID};

/// Stable colour for a segment id (void is black).
pub fn palette(id: u32) -> [u8; 3] {
    if id == VOID_ID {
        return [0, 0, 0];
    }
    // splitmix64 finalizer
    let mut z = u64::from(id).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let b = z.to_le_bytes();
    // keep colours away from black
    [b[0] | 0x20, b[1] | 0x20, b[2] | 0x20]
}

pub fn render_png(map: &PanopticMap) -> Result<Vec<u8>> {
    let rgb: Vec<u8> = map.ids().as_slice().iter().flat_map(|&id| palette(id)).collect();
    write_rgb_png(map.width(), map.height(), &rgb)
}
