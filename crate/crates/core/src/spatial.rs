//! 9x9 electrode grid mapping.
//!
//! A 64-channel feature sequence is placed onto a 9x9 scalp-topology grid,
//! producing an image-like `[9 x 9 x d_f]` array whose 17 unmapped cells are
//! zero. The inverse mapping recovers the channel sequence, and
//! [`flatten_nosp`] provides the flat vector used by the no-spatial ablation
//! variant.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Grid side length.
pub const GRID_SIZE: usize = 9;
/// Number of mapped electrodes.
pub const N_CHANNELS: usize = 64;
/// Number of structurally empty grid cells (81 - 64).
pub const N_EMPTY_CELLS: usize = GRID_SIZE * GRID_SIZE - N_CHANNELS;

/// The grid layout, row by row. Empty strings mark cells without an
/// electrode.
const GRID_LABELS: [[&str; GRID_SIZE]; GRID_SIZE] = [
    ["", "", "FP1", "", "FPZ", "", "FP2", "", ""],
    ["F9", "AF7", "AF3", "", "", "", "AF4", "AF8", "F10"],
    ["F7", "F5", "F3", "F1", "FZ", "F2", "F4", "F6", "F8"],
    ["FT7", "FC5", "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6", "FT8"],
    ["T7", "C5", "C3", "C1", "CZ", "C2", "C4", "C6", "T8"],
    ["TP7", "CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6", "TP8"],
    ["P7", "P5", "P3", "P1", "PZ", "P2", "P4", "P6", "P8"],
    ["P9", "PO7", "PO3", "", "POZ", "", "PO4", "PO8", "P10"],
    ["", "", "O1", "", "OZ", "", "O2", "", ""],
];

/// Constant electrode-position map: grid of labels plus label -> (row, col)
/// lookup. Build one with [`build_map`].
#[derive(Debug, Clone)]
pub struct ElectrodeMap {
    grid: [[Option<&'static str>; GRID_SIZE]; GRID_SIZE],
    lookup: HashMap<&'static str, (usize, usize)>,
}

/// Returns the constant electrode map.
pub fn build_map() -> ElectrodeMap {
    let mut grid = [[None; GRID_SIZE]; GRID_SIZE];
    let mut lookup = HashMap::new();
    for (r, row) in GRID_LABELS.iter().enumerate() {
        for (c, label) in row.iter().enumerate() {
            if !label.is_empty() {
                grid[r][c] = Some(*label);
                lookup.insert(*label, (r, c));
            }
        }
    }
    debug_assert_eq!(lookup.len(), N_CHANNELS);
    ElectrodeMap { grid, lookup }
}

impl ElectrodeMap {
    /// Grid position of an electrode label (case-sensitive, upper case).
    pub fn lookup(&self, label: &str) -> Option<(usize, usize)> {
        self.lookup.get(label).copied()
    }

    /// Label at a grid cell, or `None` for an empty cell.
    pub fn at(&self, row: usize, col: usize) -> Option<&'static str> {
        self.grid[row][col]
    }

    /// Number of populated cells.
    pub fn populated_cells(&self) -> usize {
        self.lookup.len()
    }

    /// Canonical channel order: row-major scan of the grid, skipping empty
    /// cells. This is the order stored in `channels.json`.
    pub fn channel_order(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(N_CHANNELS);
        for row in &self.grid {
            for cell in row {
                if let Some(label) = cell {
                    out.push((*label).to_string());
                }
            }
        }
        out
    }

    /// JSON export of the grid and lookup, for documentation and
    /// cross-language parity checks.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Export {
            grid: Vec<Vec<String>>,
            lookup: std::collections::BTreeMap<String, (usize, usize)>,
        }
        let grid = self
            .grid
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.unwrap_or("").to_string())
                    .collect::<Vec<_>>()
            })
            .collect();
        let lookup = self
            .lookup
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        serde_json::to_value(Export { grid, lookup }).expect("map export is serializable")
    }
}

impl Default for ElectrodeMap {
    fn default() -> Self {
        build_map()
    }
}

/// The 3-D spatial representation: `values[row][col][band]`, with empty grid
/// cells all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EegImage {
    pub d_f: usize,
    /// Flat row-major storage: `(row * GRID_SIZE + col) * d_f + band`.
    pub values: Vec<f64>,
}

impl EegImage {
    pub fn zeros(d_f: usize) -> Self {
        EegImage {
            d_f,
            values: vec![0.0; GRID_SIZE * GRID_SIZE * d_f],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, band: usize) -> f64 {
        self.values[(row * GRID_SIZE + col) * self.d_f + band]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, band: usize, v: f64) {
        self.values[(row * GRID_SIZE + col) * self.d_f + band] = v;
    }
}

/// Places each channel's feature vector at its grid position. `features` is
/// row-major `[n_channels x d_f]`; channel `i` is named `channel_names[i]`.
pub fn to_image(
    map: &ElectrodeMap,
    features: &[f64],
    channel_names: &[String],
    d_f: usize,
) -> Result<EegImage> {
    if features.len() != channel_names.len() * d_f {
        return Err(Error::shape(format!(
            "feature array has {} values, expected {} channels x {} bands",
            features.len(),
            channel_names.len(),
            d_f
        )));
    }
    let mut seen = HashMap::new();
    let mut image = EegImage::zeros(d_f);
    for (i, name) in channel_names.iter().enumerate() {
        let (r, c) = map
            .lookup(name)
            .ok_or_else(|| Error::invalid(format!("unknown channel name \"{name}\"")))?;
        if let Some(prev) = seen.insert((r, c), i) {
            return Err(Error::invalid(format!(
                "duplicate channel \"{}\" (positions {} and {})",
                name, prev, i
            )));
        }
        for b in 0..d_f {
            image.set(r, c, b, features[i * d_f + b]);
        }
    }
    Ok(image)
}

/// Inverse of [`to_image`]: reads the populated grid cells back into channel
/// order. In strict mode a nonzero value in an unmapped cell is an error;
/// tolerant mode ignores unmapped cells.
pub fn to_sequence(
    map: &ElectrodeMap,
    image: &EegImage,
    channel_names: &[String],
    strict: bool,
) -> Result<Vec<f64>> {
    let d_f = image.d_f;
    if image.values.len() != GRID_SIZE * GRID_SIZE * d_f {
        return Err(Error::shape(format!(
            "image has {} values, expected {}",
            image.values.len(),
            GRID_SIZE * GRID_SIZE * d_f
        )));
    }
    if strict {
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                if map.at(r, c).is_none() {
                    for b in 0..d_f {
                        if image.at(r, c, b) != 0.0 {
                            return Err(Error::invalid(format!(
                                "value at unmapped position ({r}, {c}), band {b}"
                            )));
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![0.0; channel_names.len() * d_f];
    for (i, name) in channel_names.iter().enumerate() {
        let (r, c) = map
            .lookup(name)
            .ok_or_else(|| Error::invalid(format!("unknown channel name \"{name}\"")))?;
        for b in 0..d_f {
            out[i * d_f + b] = image.at(r, c, b);
        }
    }
    Ok(out)
}

/// Channel-major flattening for the no-spatial ablation: channel order as
/// given, bands contiguous per channel. A `[64 x 4]` input becomes a
/// length-256 vector.
pub fn flatten_nosp(features: &[f64]) -> Vec<f64> {
    features.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names() -> Vec<String> {
        build_map().channel_order()
    }

    #[test]
    fn known_positions() {
        let map = build_map();
        assert_eq!(map.lookup("FP1"), Some((0, 2)));
        assert_eq!(map.lookup("CZ"), Some((4, 4)));
        assert_eq!(map.lookup("OZ"), Some((8, 4)));
        assert_eq!(map.lookup("F9"), Some((1, 0)));
        assert_eq!(map.lookup("P10"), Some((7, 8)));
        assert_eq!(map.lookup("NOPE"), None);
    }

    #[test]
    fn populated_and_empty_counts() {
        let map = build_map();
        assert_eq!(map.populated_cells(), 64);
        let empty = (0..GRID_SIZE)
            .flat_map(|r| (0..GRID_SIZE).map(move |c| (r, c)))
            .filter(|&(r, c)| map.at(r, c).is_none())
            .count();
        assert_eq!(empty, N_EMPTY_CELLS);
        assert_eq!(N_EMPTY_CELLS, 17);
    }

    #[test]
    fn neighborhood_spot_checks() {
        let map = build_map();
        let c3 = map.lookup("C3").unwrap();
        let c1 = map.lookup("C1").unwrap();
        assert_eq!(c3.0, c1.0);
        assert_eq!(c1.1 - c3.1, 1);
        let fp1 = map.lookup("FP1").unwrap();
        let o1 = map.lookup("O1").unwrap();
        assert_eq!(o1.0 - fp1.0, 8);
        assert_eq!(fp1.1, o1.1);
    }

    #[test]
    fn zero_features_zero_image() {
        let map = build_map();
        let img = to_image(&map, &[0.0; 64 * 4], &names(), 4).unwrap();
        assert!(img.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_oz() {
        let map = build_map();
        let ch = names();
        let oz = ch.iter().position(|n| n == "OZ").unwrap();
        let mut feats = vec![0.0; 64 * 4];
        for b in 0..4 {
            feats[oz * 4 + b] = 1.0;
        }
        let img = to_image(&map, &feats, &ch, 4).unwrap();
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                for b in 0..4 {
                    let expect = if (r, c) == (8, 4) { 1.0 } else { 0.0 };
                    assert_eq!(img.at(r, c, b), expect, "cell ({r},{c}) band {b}");
                }
            }
        }
    }

    #[test]
    fn image_sequence_roundtrip() {
        let map = build_map();
        let ch = names();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let feats: Vec<f64> = (0..64 * 4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let img = to_image(&map, &feats, &ch, 4).unwrap();
            let back = to_sequence(&map, &img, &ch, true).unwrap();
            assert_eq!(back, feats);
        }
    }

    #[test]
    fn strict_mode_rejects_unmapped_values() {
        let map = build_map();
        let ch = names();
        let mut img = EegImage::zeros(4);
        // (0, 0) is structurally empty.
        img.set(0, 0, 2, 1.0);
        let err = to_sequence(&map, &img, &ch, true).unwrap_err();
        assert!(err.to_string().contains("unmapped position"));
        // Tolerant mode ignores it.
        let back = to_sequence(&map, &img, &ch, false).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_and_duplicate_channels_rejected() {
        let map = build_map();
        let mut ch = names();
        ch[0] = "XX9".to_string();
        let err = to_image(&map, &[0.0; 64 * 4], &ch, 4).unwrap_err();
        assert!(err.to_string().contains("XX9"));
        let mut dup = names();
        dup[1] = dup[0].clone();
        let err = to_image(&map, &[0.0; 64 * 4], &dup, 4).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn flatten_shape_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats: Vec<f64> = (0..64 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let flat = flatten_nosp(&feats);
        assert_eq!(flat.len(), 256);
        assert_eq!(flat, feats);

        // Permuting channel order permutes 4-value blocks correspondingly.
        let perm: Vec<usize> = (0..64).rev().collect();
        let permuted: Vec<f64> = perm
            .iter()
            .flat_map(|&i| feats[i * 4..(i + 1) * 4].to_vec())
            .collect();
        let flat_p = flatten_nosp(&permuted);
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(&flat_p[j * 4..(j + 1) * 4], &flat[i * 4..(i + 1) * 4]);
        }
    }
}
