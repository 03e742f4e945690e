//! Synthetic fixtures: separable image sets and tree inventories with planted
//! defects, for tests, demos and offline runs.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::inventory::canonical_species;
use crate::data::split::largest_remainder;
use crate::data::tiles::{query_param, render_tinted_tile, TileRequest};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::Dataset;

const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.30, 0.85],
    [0.85, 0.80, 0.20],
    [0.75, 0.25, 0.80],
    [0.20, 0.80, 0.80],
    [0.55, 0.35, 0.15],
    [0.90, 0.90, 0.90],
];

/// Texture value in `[0, 1]` at `(y, x)` for pattern `kind`.
fn texture(kind: usize, y: usize, x: usize, phase: usize) -> f64 {
    match kind % 4 {
        0 => ((y + phase) / 2 % 2) as f64,
        1 => ((x + phase) / 2 % 2) as f64,
        2 => ((x + y + phase) / 2 % 2) as f64,
        _ => ((x / 2 + y / 2 + phase) % 2) as f64,
    }
}

/// `per_class` images of each of `classes` (≤ 8) classes. Class `c` has its
/// own colour and stripe/checker texture; each image gets a random phase,
/// brightness jitter and per-pixel noise.
pub fn separable_images<T: Scalar>(
    classes: usize,
    per_class: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    if classes == 0 || classes > PALETTE.len() {
        return Err(Error::invalid(format!("classes must be in 1..={}", PALETTE.len())));
    }
    let stream = SeedStream::new(seed).named("separable");
    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for i in 0..per_class {
        for c in 0..classes {
            let mut rng = stream.child((i * classes + c) as u64).rng();
            let phase = rng.random_range(0..4);
            let gain = rng.random_range(0.85..1.15);
            let mut data = Vec::with_capacity(height * width * 3);
            for y in 0..height {
                for x in 0..width {
                    let t = 0.6 + 0.4 * texture(c, y, x, phase);
                    for &base in &PALETTE[c] {
                        let v = base * t * gain + rng.random_range(-0.08..0.08);
                        data.push(T::of(v.clamp(0.0, 1.0)));
                    }
                }
            }
            images.push(Tensor::new(&[height, width, 3], data)?);
            labels.push(c);
        }
    }
    Dataset::new(images, labels, (0..classes).map(|c| format!("class{c}")).collect())
}

/// Two classes: all-white and all-black images.
pub fn black_and_white<T: Scalar>(per_class: usize, height: usize, width: usize) -> Result<Dataset<T>> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..per_class {
        for (label, v) in [(0, 1.0), (1, 0.0)] {
            images.push(Tensor::full(&[height, width, 3], T::of(v)));
            labels.push(label);
        }
    }
    Dataset::new(images, labels, vec!["white".into(), "black".into()])
}

pub const INVENTORY_HEADER: &str =
    "Identifier,Common Name,Latitude,Longitude,Height In Metres,Spread In Metres,Diameter In Centimetres At Breast Height,Maturity";

/// Species planted by [`synthetic_inventory`], most frequent first.
pub const PLANTED_SPECIES: [&str; 8] =
    ["London Plane", "Common Lime", "Sycamore", "Ash", "Norway Maple", "Silver Birch", "Horse Chestnut", "Cherry"];
const PLANTED_WEIGHTS: [f64; 8] = [36.0, 32.0, 28.0, 25.0, 22.0, 18.0, 12.0, 7.0];

#[derive(Clone, Debug)]
pub struct SyntheticInventory {
    pub csv: String,
    /// 1-based data rows that cleaning must reject.
    pub bad_rows: Vec<usize>,
    /// Clean record count per planted species, in [`PLANTED_SPECIES`] order.
    pub species_counts: Vec<(String, usize)>,
}

/// Camden-schema CSV with `rows` data rows. One row in ten is a planted
/// defect (missing location, vacant plot, unknown species, malformed number
/// or out-of-range coordinate); species names carry inconsistent casing and
/// spacing.
pub fn synthetic_inventory(rows: usize, seed: u64) -> SyntheticInventory {
    let stream = SeedStream::new(seed).named("inventory");
    let mut rng = stream.rng();
    let n_bad = rows / 10;
    let counts = largest_remainder(rows - n_bad, &PLANTED_WEIGHTS);
    let mut kinds: Vec<Option<usize>> =
        counts.iter().enumerate().flat_map(|(s, &n)| std::iter::repeat_n(Some(s), n)).collect();
    kinds.extend(std::iter::repeat_n(None, n_bad));
    kinds.shuffle(&mut rng);

    let mut csv = String::from(INVENTORY_HEADER);
    csv.push('\n');
    let mut bad_rows = Vec::new();
    let mut defect = 0;
    for (i, kind) in kinds.iter().enumerate() {
        let id = 10_000 + i;
        let lat = 51.53 + 0.0001 * i as f64;
        let lon = -0.15 + 0.00007 * i as f64;
        let height = rng.random_range(3.0..25.0f64);
        let line = match kind {
            Some(s) => {
                let name = match rng.random_range(0..3) {
                    0 => PLANTED_SPECIES[*s].to_owned(),
                    1 => PLANTED_SPECIES[*s].to_lowercase(),
                    _ => format!("  {}  ", PLANTED_SPECIES[*s].to_uppercase().replace(' ', "  ")),
                };
                format!("{id},{name},{lat:.6},{lon:.6},{height:.1},4.0,35,Mature")
            }
            None => {
                bad_rows.push(i + 1);
                defect += 1;
                match defect % 5 {
                    0 => format!("{id},Ash,,{lon:.6},{height:.1},4.0,35,Mature"),
                    1 => format!("{id},Vacant Plot,{lat:.6},{lon:.6},,,,"),
                    2 => format!("{id},Unknown,{lat:.6},{lon:.6},{height:.1},4.0,35,Young"),
                    3 => format!("{id},Sycamore,{lat:.6},{lon:.6},tall,4.0,35,Mature"),
                    _ => format!("{id},Common Lime,95.000000,{lon:.6},{height:.1},4.0,35,Mature"),
                }
            }
        };
        csv.push_str(&line);
        csv.push('\n');
    }
    SyntheticInventory {
        csv,
        bad_rows,
        species_counts: PLANTED_SPECIES.iter().map(|s| s.to_string()).zip(counts).collect(),
    }
}

/// Tile renderer for offline builds: each species gets a palette colour and
/// texture, looked up from the request's `center` parameter.
pub fn species_tile_renderer(
    requests: &[TileRequest],
    species: &[String],
    width: u32,
    height: u32,
) -> impl Fn(&str) -> Vec<u8> + Send + Sync + 'static {
    let mut names: Vec<String> = species.iter().map(|s| canonical_species(s)).collect();
    names.sort();
    names.dedup();
    let by_center: HashMap<String, [u8; 3]> = requests
        .iter()
        .zip(species)
        .map(|(r, s)| {
            let idx = names.binary_search(&canonical_species(s)).unwrap_or(0);
            let tint = PALETTE[idx % PALETTE.len()].map(|v| (v * 255.0) as u8);
            (format!("{:.6},{:.6}", r.latitude, r.longitude), tint)
        })
        .collect();
    move |url| {
        let tint = query_param(url, "center").and_then(|c| by_center.get(c)).copied().unwrap_or([128, 128, 128]);
        render_tinted_tile(url, width, height, tint, 20)
    }
}
