//! Reference topology configs shipped with the crate.

use crate::error::{Error, Result};
use crate::topology::{load_topology, Topology};

/// 3-service chain, used by tests and smoke campaigns.
pub const CHAIN3: &str = include_str!("../configs/chain3.toml");

/// 50-service booking system with depth-7 workflows and eight unmonitored
/// database services.
pub const TRAINTICKET50: &str = include_str!("../configs/trainticket50.toml");

pub fn builtin_names() -> &'static [&'static str] {
    &["chain3", "trainticket50"]
}

pub fn load_builtin(name: &str) -> Result<Topology> {
    match name {
        "chain3" => load_topology(CHAIN3),
        "trainticket50" => load_topology(TRAINTICKET50),
        other => Err(Error::Config(format!(
            "unknown builtin topology `{other}` (available: {})",
            builtin_names().join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::count_paths;

    #[test]
    fn trainticket50_shape() {
        let topo = load_builtin("trainticket50").unwrap();
        assert_eq!(topo.graph.services.len(), 50);
        let unmonitored = topo.graph.services.iter().filter(|s| !s.monitored).count();
        assert_eq!(unmonitored, 8);
        assert_eq!(topo.top_level_workflows().len(), 8);
    }

    #[test]
    fn trainticket50_booking_has_36_paths() {
        let topo = load_builtin("trainticket50").unwrap();
        assert_eq!(count_paths(&topo, "booking"), 36);
    }

    #[test]
    fn unknown_builtin_rejected() {
        assert!(load_builtin("nope").is_err());
    }
}
