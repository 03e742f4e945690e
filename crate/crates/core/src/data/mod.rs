//! Dataset generation: inventory cleaning, species selection, tile fetching,
//! stratified splits and the on-disk manifest.

pub mod geo;
pub mod inventory;
pub mod manifest;
pub mod pipeline;
pub mod split;
pub mod tiles;

pub use geo::ground_resolution;
pub use inventory::{parse_inventory, select_top_species, ColumnMap, TreeRecord};
pub use manifest::{DatasetManifest, EntryStatus, ManifestEntry};
pub use split::{largest_remainder, stratified_kfold, stratified_split, Split, SplitRatios};
pub use tiles::{build_tile_request, fetch_tiles, ApiKey, FetchOptions, TileClient, TileConfig, TileRequest};
