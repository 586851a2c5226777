//! Storage accounting for persisted history embeddings.
//!
//! A stored embedding is `tokens x dim` float32 values, so one tile costs
//! `4 * dim * tokens` bytes; the reference raw tile (256x256 pixels, six
//! float32 bands) costs 1,572,864 bytes. Continental totals divide the
//! target area by the 2.56 km x 2.56 km tile area. Areas are carried as
//! integers in units of 1e-4 km^2 so the tile counts are exact; byte totals
//! are reported in decimal GB/TB.

use alloc::format;
use alloc::string::String;

/// Bytes per stored float32 value.
pub const BYTES_PER_VALUE: u64 = 4;

/// One raw tile: 256 * 256 pixels * 6 bands * 4 bytes.
pub const RAW_TILE_BYTES: u64 = 256 * 256 * 6 * 4;

/// Ground area of one tile (2.56 km x 2.56 km), in 1e-4 km^2 units.
pub const TILE_AREA_X10000: u64 = 65_536;

/// Land area of Europe (5,177,344 km^2 after tiling), in 1e-4 km^2 units.
/// Divides evenly into exactly 790,000 tiles.
pub const EUROPE_AREA_X10000: u64 = 51_773_440_000;

/// Global land area (149,000,000 km^2), in 1e-4 km^2 units.
pub const WORLD_AREA_X10000: u64 = 1_490_000_000_000;

/// The canonical (dim, tokens) sweep reported by the footprint command.
pub const FOOTPRINT_SWEEP: [(usize, usize); 10] = [
    (192, 256),
    (192, 64),
    (192, 16),
    (192, 4),
    (168, 256),
    (120, 256),
    (72, 256),
    (24, 256),
    (8, 256),
    (24, 64),
];

fn ceil_div(a: u64, b: u64) -> u64 {
    (a + b - 1) / b
}

/// Tiles needed to cover an area given in 1e-4 km^2 units.
pub fn tiles_for_area(area_x10000: u64) -> u64 {
    ceil_div(area_x10000, TILE_AREA_X10000)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FootprintReport {
    pub dim: usize,
    pub tokens: usize,
    pub bytes_per_tile: u64,
    pub europe_tiles: u64,
    pub world_tiles: u64,
    pub europe_bytes: u64,
    pub world_bytes: u64,
}

impl FootprintReport {
    /// Stored-embedding size as a percentage of the raw tile.
    pub fn percent_of_image(&self) -> f64 {
        self.bytes_per_tile as f64 / RAW_TILE_BYTES as f64 * 100.0
    }

    /// `"<percent>% | <europe> | <world>"`, e.g. `"0.391% | 4.85 GB | 139.69 GB"`.
    pub fn summary_line(&self) -> String {
        format!(
            "{}% | {} | {}",
            format_percent(self.percent_of_image()),
            format_bytes(self.europe_bytes),
            format_bytes(self.world_bytes)
        )
    }
}

/// Bytes for one stored tile embedding.
pub fn tile_bytes(dim: usize, tokens: usize) -> u64 {
    BYTES_PER_VALUE * dim as u64 * tokens as u64
}

/// Full accounting for one embedding geometry.
pub fn footprint(dim: usize, tokens: usize) -> FootprintReport {
    let bytes_per_tile = tile_bytes(dim, tokens);
    let europe_tiles = tiles_for_area(EUROPE_AREA_X10000);
    let world_tiles = tiles_for_area(WORLD_AREA_X10000);
    FootprintReport {
        dim,
        tokens,
        bytes_per_tile,
        europe_tiles,
        world_tiles,
        europe_bytes: europe_tiles * bytes_per_tile,
        world_bytes: world_tiles * bytes_per_tile,
    }
}

/// Percentage saved relative to storing the raw tile.
pub fn savings_percent(dim: usize, tokens: usize) -> f64 {
    (1.0 - tile_bytes(dim, tokens) as f64 / RAW_TILE_BYTES as f64) * 100.0
}

/// Formats a percentage with up to three decimals, trailing zeros trimmed
/// (`12.5`, `3.125`, `0.391`).
pub fn format_percent(v: f64) -> String {
    let milli = libm::round(v * 1000.0) as i64;
    let (int, frac) = (milli / 1000, (milli % 1000).unsigned_abs());
    if frac == 0 {
        return format!("{int}");
    }
    let mut frac_str = format!("{frac:03}");
    while frac_str.ends_with('0') {
        frac_str.pop();
    }
    format!("{int}.{frac_str}")
}

/// Formats a byte count in decimal units: GB below 10^12 bytes, TB at or
/// above, two decimals.
pub fn format_bytes(bytes: u64) -> String {
    const TB: f64 = 1e12;
    const GB: f64 = 1e9;
    let b = bytes as f64;
    if b >= TB {
        format!("{:.2} TB", libm::round(b / TB * 100.0) / 100.0)
    } else {
        format!("{:.2} GB", libm::round(b / GB * 100.0) / 100.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_tile_arithmetic() {
        assert_eq!(RAW_TILE_BYTES, 1_572_864);
        assert_eq!(tile_bytes(24, 64), 6_144);
        assert_eq!(tile_bytes(192, 256), 196_608);
        let r = footprint(24, 64);
        assert_eq!(r.percent_of_image(), 0.390625);
    }

    #[test]
    fn tile_counts_are_exact() {
        // Europe divides evenly; the global figure rounds up.
        assert_eq!(tiles_for_area(EUROPE_AREA_X10000), 790_000);
        assert_eq!(EUROPE_AREA_X10000 % TILE_AREA_X10000, 0);
        assert_eq!(tiles_for_area(WORLD_AREA_X10000), 22_735_596);
        assert_eq!(
            22_735_595 * TILE_AREA_X10000 < WORLD_AREA_X10000
                && 22_735_596 * TILE_AREA_X10000 >= WORLD_AREA_X10000,
            true
        );
    }

    #[test]
    fn sweep_matches_reference_figures() {
        // (dim, tokens) -> (percent, europe, world)
        let expected: [(&str, &str, &str); 10] = [
            ("12.5", "155.32 GB", "4.47 TB"),
            ("3.125", "38.83 GB", "1.12 TB"),
            ("0.781", "9.71 GB", "279.38 GB"),
            ("0.195", "2.43 GB", "69.84 GB"),
            ("10.938", "135.91 GB", "3.91 TB"),
            ("7.813", "97.08 GB", "2.79 TB"),
            ("4.688", "58.25 GB", "1.68 TB"),
            ("1.563", "19.42 GB", "558.75 GB"),
            ("0.521", "6.47 GB", "186.25 GB"),
            ("0.391", "4.85 GB", "139.69 GB"),
        ];
        for (&(dim, tokens), &(pct, eu, world)) in FOOTPRINT_SWEEP.iter().zip(&expected) {
            let r = footprint(dim, tokens);
            assert_eq!(format_percent(r.percent_of_image()), pct, "({dim},{tokens})");
            assert_eq!(format_bytes(r.europe_bytes), eu, "({dim},{tokens})");
            assert_eq!(format_bytes(r.world_bytes), world, "({dim},{tokens})");
        }
    }

    #[test]
    fn compact_row_summary() {
        assert_eq!(
            footprint(24, 64).summary_line(),
            "0.391% | 4.85 GB | 139.69 GB"
        );
    }

    #[test]
    fn savings_versus_raw() {
        let s = savings_percent(24, 64);
        assert_eq!(s, 100.0 * (1.0 - 6_144.0 / 1_572_864.0));
        assert_eq!(format!("{s:.2}"), "99.61");
        assert_eq!(savings_percent(192, 256), 87.5);
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_percent(25.0), "25");
        assert_eq!(format_percent(0.1953125), "0.195");
        assert_eq!(format_percent(10.9375), "10.938");
        assert_eq!(format_bytes(1_000_000_000), "1.00 GB");
        assert_eq!(format_bytes(999_999_999_999), "1000.00 GB");
        assert_eq!(format_bytes(1_000_000_000_000), "1.00 TB");
        assert_eq!(format_bytes(4_853_760_000), "4.85 GB");
    }
}
