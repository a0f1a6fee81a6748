use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::BrokerError;

/// Coordinator state for one consumer group bound to one topic.
///
/// Rebalances are stop-the-world: any membership change bumps the generation,
/// discards uncommitted fetch positions and owes every other member a single
/// `RebalanceInProgress` on its next poll.
#[derive(Debug)]
pub(crate) struct Group {
    pub topic: String,
    partitions: u32,
    members: BTreeSet<String>,
    assignment: BTreeMap<u32, String>,
    generation: u64,
    owed_rebalance: HashSet<String>,
    committed: HashMap<u32, u64>,
    positions: HashMap<u32, u64>,
}

impl Group {
    pub fn new(topic: &str, partitions: u32) -> Self {
        Self {
            topic: topic.to_string(),
            partitions,
            members: BTreeSet::new(),
            assignment: BTreeMap::new(),
            generation: 0,
            owed_rebalance: HashSet::new(),
            committed: HashMap::new(),
            positions: HashMap::new(),
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn join(&mut self, member: &str) -> Vec<u32> {
        self.members.insert(member.to_string());
        self.rebalance(member);
        self.assigned(member)
    }

    pub fn leave(&mut self, member: &str) -> Result<(), BrokerError> {
        if !self.members.remove(member) {
            return Err(BrokerError::UnknownMember(member.to_string()));
        }
        self.owed_rebalance.remove(member);
        self.rebalance(member);
        Ok(())
    }

    fn rebalance(&mut self, initiator: &str) {
        self.generation += 1;
        self.positions.clear();
        self.assignment = assign_round_robin(self.partitions, &self.members);
        self.owed_rebalance = self
            .members
            .iter()
            .filter(|m| m.as_str() != initiator)
            .cloned()
            .collect();
    }

    pub fn assigned(&self, member: &str) -> Vec<u32> {
        self.assignment
            .iter()
            .filter(|(_, m)| m.as_str() == member)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn assignment(&self) -> &BTreeMap<u32, String> {
        &self.assignment
    }

    /// Checks membership and consumes a pending rebalance notice.
    pub fn begin_poll(&mut self, member: &str) -> Result<Vec<u32>, BrokerError> {
        if !self.members.contains(member) {
            return Err(BrokerError::UnknownMember(member.to_string()));
        }
        if self.owed_rebalance.remove(member) {
            return Err(BrokerError::RebalanceInProgress);
        }
        Ok(self.assigned(member))
    }

    /// Where the next poll of `partition` starts.
    pub fn position(&self, partition: u32) -> u64 {
        self.positions
            .get(&partition)
            .or_else(|| self.committed.get(&partition))
            .copied()
            .unwrap_or(0)
    }

    pub fn set_position(&mut self, partition: u32, offset: u64) {
        self.positions.insert(partition, offset);
    }

    pub fn committed(&self, partition: u32) -> Option<u64> {
        self.committed.get(&partition).copied()
    }

    /// Monotonic commit of the next offset to consume.
    pub fn commit(
        &mut self,
        member: &str,
        partition: u32,
        offset: u64,
        end: u64,
    ) -> Result<u64, BrokerError> {
        if self.assignment.get(&partition).map(String::as_str) != Some(member) {
            return Err(BrokerError::NotAssigned {
                member: member.to_string(),
                partition,
            });
        }
        if offset > end {
            return Err(BrokerError::CommitBeyondEnd { offset, end });
        }
        let entry = self.committed.entry(partition).or_insert(0);
        *entry = (*entry).max(offset);
        Ok(*entry)
    }
}

/// Partition `p` goes to the `p mod n`-th member in sorted id order.
pub fn assign_round_robin(partitions: u32, members: &BTreeSet<String>) -> BTreeMap<u32, String> {
    let sorted: Vec<&String> = members.iter().collect();
    if sorted.is_empty() {
        return BTreeMap::new();
    }
    (0..partitions)
        .map(|p| (p, sorted[p as usize % sorted.len()].clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn members(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    /// Brute-force check that an assignment partitions `0..n` over the members.
    fn check_partition_of_set(n: u32, m: &BTreeSet<String>, a: &BTreeMap<u32, String>) {
        let mut seen = HashSet::new();
        for member in m {
            for (p, owner) in a {
                if owner == member {
                    assert!(seen.insert(*p), "partition {p} assigned twice");
                }
            }
        }
        assert_eq!(seen.len() as u32, n);
    }

    #[test]
    fn sole_member_owns_everything() {
        let mut g = Group::new("t", 3);
        assert_eq!(g.join("a"), vec![0, 1, 2]);
    }

    #[test]
    fn three_members_one_each() {
        let m = members(&["c", "a", "b"]);
        let a = assign_round_robin(3, &m);
        for id in &m {
            assert_eq!(a.values().filter(|o| *o == id).count(), 1);
        }
        check_partition_of_set(3, &m, &a);
    }

    #[test]
    fn two_members_three_partitions() {
        let m = members(&["x", "y"]);
        let a = assign_round_robin(3, &m);
        let mut sizes: Vec<usize> = m
            .iter()
            .map(|id| a.values().filter(|o| *o == id).count())
            .collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 2]);
        check_partition_of_set(3, &m, &a);
    }

    #[test]
    fn assignment_is_exhaustive_for_many_shapes() {
        for n in 1..8 {
            for k in 1..6 {
                let ids: Vec<String> = (0..k).map(|i| format!("m{i}")).collect();
                let m: BTreeSet<String> = ids.into_iter().collect();
                check_partition_of_set(n, &m, &assign_round_robin(n, &m));
            }
        }
    }

    #[test]
    fn membership_change_owes_one_rebalance_notice() {
        let mut g = Group::new("t", 2);
        g.join("a");
        g.join("b");
        assert!(matches!(
            g.begin_poll("a"),
            Err(BrokerError::RebalanceInProgress)
        ));
        assert_eq!(g.begin_poll("a").unwrap(), vec![0]);
        assert_eq!(g.begin_poll("b").unwrap(), vec![1]);
    }

    #[test]
    fn commit_is_monotonic_and_owner_checked() {
        let mut g = Group::new("t", 2);
        g.join("a");
        g.join("b");
        assert_eq!(g.commit("a", 0, 5, 10).unwrap(), 5);
        assert_eq!(g.commit("a", 0, 3, 10).unwrap(), 5);
        assert!(matches!(
            g.commit("a", 1, 1, 10),
            Err(BrokerError::NotAssigned { .. })
        ));
        assert!(matches!(
            g.commit("a", 0, 11, 10),
            Err(BrokerError::CommitBeyondEnd { .. })
        ));
    }
}
