//! Operating modes layered over the base protocol.
//!
//! * `Vab`: plain reconfigurable atomic broadcast. Any member may broadcast
//!   (the message is forwarded to the leader).
//! * `Po`: primary-order. Only a ready leader broadcasts; `conf_changed` is
//!   deferred until the inherited log prefix has been delivered.
//! * `Spo`: speculative primary-order. Only the leader broadcasts; the new
//!   leader speculatively delivers its undelivered inherited suffix in
//!   `conf_changed` and is ready at once.
//!
//! The deltas between modes are confined to the hooks below.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Action, AppMessage, Configuration, Log};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Vab,
    Po,
    Spo,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Vab, Mode::Po, Mode::Spo];

    /// Whether `broadcast` is restricted to the leader of the current
    /// configuration.
    pub fn leader_only_broadcast(self) -> bool {
        !matches!(self, Mode::Vab)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vab => "vab",
            Mode::Po => "po",
            Mode::Spo => "spo",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "vab" => Ok(Mode::Vab),
            "po" => Ok(Mode::Po),
            "spo" => Ok(Mode::Spo),
            other => Err(format!("unknown mode {other:?} (expected vab, po or spo)")),
        }
    }
}

/// Deliberately broken protocol variants used to check that the checkers
/// and monitors detect violations. Never enabled by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutant {
    /// The reconfigurer skips probing: it picks the desired leader (or the
    /// smallest desired member) and only asks it to join the new epoch.
    SkipProbing,
    /// The new leader never replays COMMITs for its inherited log, and
    /// primary-order activation no longer waits for that prefix.
    NoCommitReplay,
    /// Probing stops at the first reply and picks its sender as leader
    /// whether or not it was initialized at the probed epoch.
    LeaderAny,
}

impl Mutant {
    pub const ALL: [Mutant; 3] = [Mutant::SkipProbing, Mutant::NoCommitReplay, Mutant::LeaderAny];

    pub fn as_str(self) -> &'static str {
        match self {
            Mutant::SkipProbing => "skip-probing",
            Mutant::NoCommitReplay => "no-commit-replay",
            Mutant::LeaderAny => "leader-any",
        }
    }
}

impl fmt::Display for Mutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mutant {
    type Err = String;

    fn from_str(s: &str) -> Result<Mutant, String> {
        Mutant::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mutant {s:?}"))
    }
}

/// `msg[last_delivered+1 ..= init_len]`, skipping holes.
pub fn speculative_suffix(log: &Log, last_delivered: i64, init_len: i64) -> Vec<AppMessage> {
    if init_len < 0 || last_delivered >= init_len {
        return Vec::new();
    }
    let from = (last_delivered + 1).max(0) as usize;
    let to = (init_len as usize + 1).min(log.len());
    log.get(from..to)
        .unwrap_or_default()
        .iter()
        .flatten()
        .cloned()
        .collect()
}

/// What the new leader does about `conf_changed` when it takes over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LeaderActivation {
    /// Emit now and start broadcasting at once.
    Immediate(Action),
    /// Emit once the state transfer is acknowledged and the inherited
    /// prefix delivered.
    Deferred,
}

pub fn leader_activation(
    mode: Mode,
    config: &Configuration,
    log: &Log,
    last_delivered: i64,
    init_len: i64,
) -> LeaderActivation {
    match mode {
        Mode::Vab => LeaderActivation::Immediate(Action::ConfChanged {
            config: config.clone(),
            speculative: None,
        }),
        Mode::Spo => LeaderActivation::Immediate(Action::ConfChanged {
            config: config.clone(),
            speculative: Some(speculative_suffix(log, last_delivered, init_len)),
        }),
        Mode::Po => LeaderActivation::Deferred,
    }
}

/// What a follower does about `conf_changed` after installing the leader's
/// state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FollowerActivation {
    Immediate(Action),
    /// Emit once `last_delivered` reaches the given position.
    DeliverUpTo(i64),
}

pub fn follower_activation(
    mode: Mode,
    config: &Configuration,
    inherited_len: i64,
    mutant: Option<Mutant>,
) -> FollowerActivation {
    match mode {
        Mode::Vab | Mode::Spo => FollowerActivation::Immediate(Action::ConfChanged {
            config: config.clone(),
            speculative: None,
        }),
        Mode::Po if mutant == Some(Mutant::NoCommitReplay) => FollowerActivation::DeliverUpTo(-1),
        Mode::Po => FollowerActivation::DeliverUpTo(inherited_len),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Epoch, ProcessId};

    fn m(seq: u64) -> AppMessage {
        AppMessage {
            origin: ProcessId(1),
            seq,
            payload: format!("m{seq}"),
        }
    }

    #[test]
    fn suffix_after_last_delivered() {
        let log: Log = vec![Some(m(0)), Some(m(1)), Some(m(2))];
        assert_eq!(speculative_suffix(&log, 0, 2), vec![m(1), m(2)]);
    }

    #[test]
    fn suffix_empty_when_everything_delivered_or_log_empty() {
        let log: Log = vec![Some(m(0)), Some(m(1))];
        assert!(speculative_suffix(&log, 1, 1).is_empty());
        assert!(speculative_suffix(&Vec::new(), -1, -1).is_empty());
    }

    #[test]
    fn follower_never_speculates() {
        let c = Configuration::new(Epoch(2), [ProcessId(1), ProcessId(4)], ProcessId(1));
        for mode in [Mode::Vab, Mode::Spo] {
            match follower_activation(mode, &c, 3, None) {
                FollowerActivation::Immediate(Action::ConfChanged { speculative, .. }) => {
                    assert!(speculative.is_none())
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!(
            follower_activation(Mode::Po, &c, 3, None),
            FollowerActivation::DeliverUpTo(3)
        );
    }

    #[test]
    fn leader_speculates_only_in_spo() {
        let c = Configuration::new(Epoch(1), [ProcessId(1)], ProcessId(1));
        let log: Log = vec![Some(m(0)), Some(m(1)), Some(m(2))];
        assert_eq!(
            leader_activation(Mode::Spo, &c, &log, 0, 2),
            LeaderActivation::Immediate(Action::ConfChanged {
                config: c.clone(),
                speculative: Some(vec![m(1), m(2)])
            })
        );
        assert_eq!(leader_activation(Mode::Po, &c, &log, 0, 2), LeaderActivation::Deferred);
    }

    #[test]
    fn names_round_trip() {
        for mode in Mode::ALL {
            assert_eq!(mode.as_str().parse::<Mode>().unwrap(), mode);
        }
        for mutant in Mutant::ALL {
            assert_eq!(mutant.as_str().parse::<Mutant>().unwrap(), mutant);
        }
        assert!("paxos".parse::<Mode>().is_err());
    }
}
