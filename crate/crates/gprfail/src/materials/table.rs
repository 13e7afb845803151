//! Built-in material table, embedded at compile time.

use super::MaterialParams;
use std::collections::BTreeMap;
use std::sync::OnceLock;

const MATERIALS_TOML: &str = include_str!("../../data/materials.toml");

fn table() -> &'static BTreeMap<String, MaterialParams> {
    static TABLE: OnceLock<BTreeMap<String, MaterialParams>> = OnceLock::new();
    TABLE.get_or_init(|| {
        toml::from_str(MATERIALS_TOML).expect("embedded material table must parse")
    })
}

/// Looks up a built-in material by name (`rock1..rock4`, `pyrex`, `copper`,
/// `brittle`, `ductile`, `fatigue`, `unitsolid`).
pub fn material_by_name(name: &str) -> Option<MaterialParams> {
    table().get(name).copied()
}

/// Names of all built-in materials, sorted.
pub fn builtin_material_names() -> Vec<&'static str> {
    table().keys().map(|s| s.as_str()).collect()
}
