//! Shared inputs for the benchmarks.

use groupscope_core::fixture::{generate_fixture, FixtureConfig};
use groupscope_core::gateway::Gateway;
use groupscope_core::model::EventRecord;
use groupscope_core::session::{EngineConfig, SessionDescriptor, SessionEngine, SessionMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A classroom-sized session: 111 students in 37 groups.
pub fn classroom(duration_s: u32) -> Vec<EventRecord> {
    generate_fixture(&FixtureConfig { duration_s, ..FixtureConfig::default() }).expect("default fixture is valid").events
}

pub fn replay_engine() -> SessionEngine {
    let descriptor = SessionDescriptor { mode: SessionMode::Replay { log_path: "bench".into() }, ..SessionDescriptor::live("bench") };
    SessionEngine::new(descriptor, EngineConfig::default(), Gateway::stub(0))
}

/// `n` random points in `dim` dimensions.
pub fn points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn inputs() {
        assert_eq!(super::classroom(10)[1].kind(), groupscope_core::model::EventKind::Roster);
        assert_eq!(super::points(5, 3, 1).len(), 5);
    }
}
