//! Multi-band image tiles, the GCTL container and per-pixel median compositing.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Value stored in masked-out pixels.
pub const MASK_SENTINEL: f32 = -9999.0;

pub const TILE_MAGIC: &[u8; 4] = b"GCTL";
pub const TILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    Red,
    Green,
    Blue,
    Nir,
    Swir,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Red, Band::Green, Band::Blue, Band::Nir, Band::Swir];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Band> {
        Band::ALL.get(code as usize).copied()
    }
}

/// A square raster, band-major, with one validity flag per pixel position
/// shared by all bands.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTile {
    pub tile_id: String,
    pub bands: Vec<Band>,
    pub side: usize,
    pixels: Vec<f32>,
    mask: Vec<bool>,
}

impl ImageTile {
    /// Builds a tile; pixels under a `false` mask entry are overwritten with
    /// [`MASK_SENTINEL`].
    pub fn new(
        tile_id: impl Into<String>,
        bands: Vec<Band>,
        side: usize,
        mut pixels: Vec<f32>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let plane = side * side;
        if pixels.len() != bands.len() * plane || mask.len() != plane {
            return Err(Error::shape(
                "image tile",
                &[bands.len(), side, side],
                &[pixels.len(), mask.len()],
            ));
        }
        for b in 0..bands.len() {
            for (i, &valid) in mask.iter().enumerate() {
                let v = &mut pixels[b * plane + i];
                if !valid {
                    *v = MASK_SENTINEL;
                } else if !v.is_finite() {
                    return Err(Error::Input(format!("non-finite valid pixel in band {b}")));
                }
            }
        }
        Ok(Self {
            tile_id: tile_id.into(),
            bands,
            side,
            pixels,
            mask,
        })
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let plane = self.side * self.side;
        &self.pixels[b * plane..(b + 1) * plane]
    }

    pub fn valid_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len().max(1) as f64
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(TILE_MAGIC)?;
        out.write_all(&TILE_VERSION.to_le_bytes())?;
        out.write_all(&(self.bands.len() as u32).to_le_bytes())?;
        out.write_all(&(self.side as u32).to_le_bytes())?;
        let codes: Vec<u8> = self.bands.iter().map(|b| b.code()).collect();
        out.write_all(&codes)?;
        let mut buf = Vec::with_capacity(self.pixels.len() * 4);
        for v in &self.pixels {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        let mut bits = vec![0u8; self.mask.len().div_ceil(8)];
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.write_all(&bits)
    }

    pub fn read_from<R: Read>(tile_id: impl Into<String>, mut input: R) -> Result<Self> {
        let tile_id = tile_id.into();
        let fmt = |reason: String| Error::Format {
            path: tile_id.clone(),
            reason,
        };
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| Error::io(&tile_id, e))?;
        if bytes.len() < 16 || &bytes[..4] != TILE_MAGIC {
            return Err(fmt("missing GCTL magic".into()));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = word(4);
        if version != TILE_VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let nb = word(8) as usize;
        let side = word(12) as usize;
        let plane = side * side;
        let need = 16 + nb + nb * plane * 4 + plane.div_ceil(8);
        if bytes.len() != need {
            return Err(fmt(format!("expected {need} bytes, found {}", bytes.len())));
        }
        let bands = bytes[16..16 + nb]
            .iter()
            .map(|&c| Band::from_code(c).ok_or_else(|| fmt(format!("unknown band code {c}"))))
            .collect::<Result<Vec<_>>>()?;
        let start = 16 + nb;
        let pixels: Vec<f32> = bytes[start..start + nb * plane * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let bits = &bytes[start + nb * plane * 4..];
        let mask: Vec<bool> = (0..plane).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        ImageTile::new(tile_id.clone(), bands, side, pixels, mask)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(tile_id: impl Into<String>, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(tile_id, std::io::BufReader::new(file))
    }
}

/// Per-pixel median across co-registered scenes, using only valid inputs.
/// Pixels with no valid input are masked in the output.
pub fn median_composite(tile_id: impl Into<String>, scenes: &[ImageTile]) -> Result<ImageTile> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::Input("median composite needs at least one scene".into()))?;
    for s in &scenes[1..] {
        if s.side != first.side || s.bands != first.bands {
            return Err(Error::shape(
                "median_composite",
                &[first.bands.len(), first.side],
                &[s.bands.len(), s.side],
            ));
        }
    }
    let plane = first.side * first.side;
    let nb = first.bands.len();
    let mut pixels = vec![MASK_SENTINEL; nb * plane];
    let mut mask = vec![false; plane];
    let mut vals = Vec::with_capacity(scenes.len());
    for i in 0..plane {
        if !scenes.iter().any(|s| s.mask[i]) {
            continue;
        }
        mask[i] = true;
        for b in 0..nb {
            vals.clear();
            vals.extend(scenes.iter().filter(|s| s.mask[i]).map(|s| s.pixels[b * plane + i]));
            vals.sort_by(f32::total_cmp);
            let n = vals.len();
            pixels[b * plane + i] = if n % 2 == 1 {
                vals[n / 2]
            } else {
                ((vals[n / 2 - 1] as f64 + vals[n / 2] as f64) / 2.0) as f32
            };
        }
    }
    ImageTile::new(tile_id, first.bands.clone(), first.side, pixels, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel(v: f32, valid: bool) -> ImageTile {
        ImageTile::new("s", vec![Band::Red], 1, vec![v], vec![valid]).unwrap()
    }

    #[test]
    fn median_cases() {
        let m = median_composite("m", &[one_pixel(1.0, true), one_pixel(3.0, true)]).unwrap();
        assert_eq!(m.pixels(), &[2.0]);
        let m = median_composite(
            "m",
            &[
                one_pixel(5.0, true),
                one_pixel(100.0, false),
                one_pixel(7.0, true),
                one_pixel(6.0, true),
            ],
        )
        .unwrap();
        assert_eq!(m.pixels(), &[6.0]);
        let m = median_composite("m", &[one_pixel(1.0, false), one_pixel(2.0, false)]).unwrap();
        assert_eq!(m.mask(), &[false]);
        assert_eq!(m.pixels(), &[MASK_SENTINEL]);
        assert!(median_composite("m", &[]).is_err());
    }

    #[test]
    fn masked_pixels_carry_sentinel() {
        let t = ImageTile::new("t", vec![Band::Red, Band::Nir], 1, vec![3.0, 4.0], vec![false]).unwrap();
        assert_eq!(t.pixels(), &[MASK_SENTINEL, MASK_SENTINEL]);
    }

    #[test]
    fn container_roundtrip() {
        let side = 3;
        let pixels: Vec<f32> = (0..2 * side * side).map(|v| v as f32 * 0.25).collect();
        let mask: Vec<bool> = (0..side * side).map(|i| i % 4 != 0).collect();
        let t = ImageTile::new("t", vec![Band::Nir, Band::Swir], side, pixels, mask).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GCTL");
        assert_eq!(buf.len(), 16 + 2 + 2 * 9 * 4 + 2);
        let back = ImageTile::read_from("t", buf.as_slice()).unwrap();
        assert_eq!(back, t);
        buf.pop();
        assert!(ImageTile::read_from("t", buf.as_slice()).is_err());
    }
}
