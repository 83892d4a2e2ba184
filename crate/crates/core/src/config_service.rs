//! The configuration service: a reliable, wait-free, linearizable store of
//! configurations keyed by epoch.
//!
//! In the simulator every call runs as one atomic scheduler step, which is
//! all linearizability requires here. A multi-threaded embedding must
//! serialize calls externally.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{Configuration, Epoch, ProcessId};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct ConfigStore {
    entries: BTreeMap<Epoch, Configuration>,
    last_epoch: Epoch,
}

impl ConfigStore {
    /// A store seeded with the bootstrap configuration.
    pub fn new(initial: Configuration) -> ConfigStore {
        let last_epoch = initial.epoch;
        let mut entries = BTreeMap::new();
        entries.insert(initial.epoch, initial);
        ConfigStore {
            entries,
            last_epoch,
        }
    }

    /// Stores `config` iff the last stored epoch is `expected`. The caller
    /// records the `introduction` action on success.
    pub fn compare_and_swap(&mut self, expected: Epoch, config: Configuration) -> Result<bool> {
        if config.epoch <= expected {
            return Err(Error::CasPrecondition {
                expected,
                new: config.epoch,
            });
        }
        if self.last_epoch != expected {
            return Ok(false);
        }
        self.last_epoch = config.epoch;
        self.entries.insert(config.epoch, config);
        Ok(true)
    }

    pub fn get_last_epoch(&self) -> Epoch {
        self.last_epoch
    }

    pub fn get_members(&self, epoch: Epoch) -> Result<BTreeSet<ProcessId>> {
        self.entries
            .get(&epoch)
            .map(|c| c.members.clone())
            .ok_or(Error::UnknownEpoch(epoch))
    }

    pub fn get(&self, epoch: Epoch) -> Option<&Configuration> {
        self.entries.get(&epoch)
    }

    /// All stored configurations in epoch order.
    pub fn configurations(&self) -> impl Iterator<Item = &Configuration> {
        self.entries.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    fn c(e: i64, members: &[u32], leader: u32) -> Configuration {
        Configuration::new(Epoch(e), members.iter().map(|i| p(*i)), p(leader))
    }

    #[test]
    fn uncontended_swap_succeeds() {
        let mut cs = ConfigStore::new(c(0, &[1, 2, 3], 1));
        assert_eq!(cs.get_last_epoch(), Epoch(0));
        assert!(cs.compare_and_swap(Epoch(0), c(1, &[1, 2], 1)).unwrap());
        assert_eq!(cs.get_last_epoch(), Epoch(1));
    }

    #[test]
    fn stale_expected_epoch_fails_without_change() {
        let mut cs = ConfigStore::new(c(0, &[1, 2, 3], 1));
        assert!(cs.compare_and_swap(Epoch(0), c(1, &[1, 2], 1)).unwrap());
        assert!(!cs.compare_and_swap(Epoch(0), c(2, &[1], 1)).unwrap());
        assert_eq!(cs.get_last_epoch(), Epoch(1));
        assert!(cs.get(Epoch(2)).is_none());
    }

    #[test]
    fn worked_example_swaps() {
        let mut cs = ConfigStore::new(c(1, &[1, 2, 3], 3));
        assert_eq!(cs.get_members(Epoch(1)).unwrap(), [p(1), p(2), p(3)].into());
        assert!(cs.compare_and_swap(Epoch(1), c(2, &[1, 2, 4], 2)).unwrap());
        assert_eq!(cs.get_members(Epoch(2)).unwrap(), [p(1), p(2), p(4)].into());
        assert!(cs.compare_and_swap(Epoch(2), c(3, &[1, 4, 5], 1)).unwrap());
        assert_eq!(cs.get_last_epoch(), Epoch(3));
    }

    #[test]
    fn unknown_epoch_is_an_error() {
        let cs = ConfigStore::new(c(0, &[1], 1));
        assert!(matches!(cs.get_members(Epoch(99)), Err(Error::UnknownEpoch(Epoch(99)))));
    }

    #[test]
    fn non_increasing_epoch_is_rejected() {
        let mut cs = ConfigStore::new(c(0, &[1], 1));
        let err = cs.compare_and_swap(Epoch(0), c(0, &[2], 2)).unwrap_err();
        assert!(matches!(err, Error::CasPrecondition { .. }));
        assert_eq!(cs.get_last_epoch(), Epoch(0));
        assert_eq!(cs.get_members(Epoch(0)).unwrap(), [p(1)].into());
    }
}
