#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use lanedrop::prob::{build_lookup_table, GridSpec, LookupTable};

/// The default-grid table at production sample size, cached in the target
/// directory and shared by every test binary.
pub fn default_table() -> Arc<LookupTable> {
    static TABLE: OnceLock<Arc<LookupTable>> = OnceLock::new();
    Arc::clone(TABLE.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
        let path = dir.join("default_100000_7.lcpt");
        if let Ok(t) = LookupTable::load(&path) {
            return Arc::new(t);
        }
        let t = build_lookup_table(&GridSpec::default_grid(), 100_000, 7).expect("table build");
        // Write then rename so a concurrent reader never sees a partial file.
        let tmp = tempfile::NamedTempFile::new_in(&dir).unwrap();
        t.save(tmp.path()).unwrap();
        tmp.persist(&path).unwrap();
        Arc::new(t)
    }))
}

/// A cheap table on the default grid, for properties that do not depend on
/// accuracy.
pub fn coarse_table() -> Arc<LookupTable> {
    static TABLE: OnceLock<Arc<LookupTable>> = OnceLock::new();
    Arc::clone(TABLE.get_or_init(|| Arc::new(build_lookup_table(&GridSpec::default_grid(), 2_000, 11).unwrap())))
}
