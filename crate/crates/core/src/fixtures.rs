//! Reference models bundled with the crate: fitted chains for two database
//! workloads (an update-heavy mix and an OLTP mix, 3 states over 8 cluster
//! symbols) and a CIFS file server (12 states over 15 symbols). Entries are
//! stored to the 3-4 significant figures they were reported at, with every
//! row renormalized to sum to one exactly.

use crate::hmm::Hmm;

pub const UPDATE_MIX_JSON: &str = include_str!("../fixtures/update_mix.json");
pub const OLTP_MIX_JSON: &str = include_str!("../fixtures/oltp_mix.json");
pub const CIFS_12STATE_JSON: &str = include_str!("../fixtures/cifs_12state.json");

fn parse(json: &str) -> Hmm {
    let hmm: Hmm = serde_json::from_str(json).expect("bundled model parses");
    hmm.validate().expect("bundled model is stochastic");
    hmm
}

/// Update-heavy database workload: state 0 is read-dominated, states 1 and 2
/// carry different write levels.
pub fn update_mix() -> Hmm {
    parse(UPDATE_MIX_JSON)
}

/// OLTP database workload.
pub fn oltp_mix() -> Hmm {
    parse(OLTP_MIX_JSON)
}

/// CIFS file-server workload fitted with 12 states, enough to reproduce the
/// period-10 autocorrelation of its trace.
pub fn cifs_12state() -> Hmm {
    parse(CIFS_12STATE_JSON)
}
