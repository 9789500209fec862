//! Raw GPS ingestion: GeoLife parsing, label alignment, cleaning,
//! segmentation, planar projection, the on-disk segment store and the
//! labeled/unlabeled split.

mod clean;
mod geolife;
mod split;
mod store;

use serde::{Deserialize, Serialize};

use crate::mode::Mode;

pub use clean::{align_labels, clean_and_segment, project_planar, CleaningConfig, CleaningStats, LabeledRun};
pub use geolife::{load_geolife_dir, parse_labels, parse_labels_str, parse_plt, parse_plt_str, LabelWindow, PltFile};
pub use split::{make_split, split_by_user, DatasetSplit, SplitConfig};
pub use store::{read_store, store_from_bytes, store_to_bytes, write_store, STORE_MAGIC, STORE_VERSION};

/// Mean Earth radius used by the local projection, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A GPS fix in WGS-84 degrees; `t` is seconds since the Unix epoch (UTC).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawPoint {
    pub lat: f64,
    pub lon: f64,
    pub t: f64,
}

/// A fix in local planar coordinates (meters) with its timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

/// One single-mode piece of a trajectory with strictly increasing time.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub points: Vec<TrackPoint>,
    pub label: Option<Mode>,
    pub user_id: String,
    pub segment_id: String,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
