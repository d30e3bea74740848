//! Identifiers shared across the protocol, network, and detector layers.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Logical simulation time. Ticks are integers; there is no wall clock.
pub type Tick = u64;

/// The fixed cast of the lab. `Ord` follows declaration order, which matches
/// lexicographic order of the wire names; the event queue relies on that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeId {
    Alice,
    Bob,
    Eve,
}

impl NodeId {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeId::Alice => "alice",
            NodeId::Bob => "bob",
            NodeId::Eve => "eve",
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Event vocabulary used both in session timing logs and in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Send,
    Recv,
    Lock,
    Unlock,
    VerifyOk,
    VerifyFail,
    Abort,
    Open,
    Handshake,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Send => "send",
            EventKind::Recv => "recv",
            EventKind::Lock => "lock",
            EventKind::Unlock => "unlock",
            EventKind::VerifyOk => "verify-ok",
            EventKind::VerifyFail => "verify-fail",
            EventKind::Abort => "abort",
            EventKind::Open => "open",
            EventKind::Handshake => "handshake",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_order_is_lexicographic() {
        assert!(NodeId::Alice < NodeId::Bob);
        assert!(NodeId::Bob < NodeId::Eve);
        let mut names = [NodeId::Eve, NodeId::Alice, NodeId::Bob];
        names.sort();
        let strs: Vec<_> = names.iter().map(|n| n.as_str()).collect();
        let mut sorted = strs.clone();
        sorted.sort();
        assert_eq!(strs, sorted);
    }

    #[test]
    fn kinds_serialize_kebab_case() {
        assert_eq!(serde_json::to_string(&EventKind::VerifyOk).unwrap(), "\"verify-ok\"");
        assert_eq!(serde_json::to_string(&NodeId::Alice).unwrap(), "\"alice\"");
    }
}
