use crate::graph::NodeId;

pub const DEFAULT_CAPACITY: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    /// From the owning node to an exit.
    pub path: Vec<NodeId>,
    pub goal_value: f64,
    /// Simulation time of the last refresh.
    pub timestamp: f64,
}

/// Bounded list of routes kept best-first (ascending goal value).
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingList {
    capacity: usize,
    entries: Vec<RouteEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offer {
    Inserted,
    Refreshed,
    Rejected,
}

impl RoutingList {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "routing list capacity must be at least 1");
        RoutingList {
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RouteEntry] {
        &self.entries
    }

    pub fn best(&self) -> Option<&RouteEntry> {
        self.entries.first()
    }

    /// Refreshes a known path in place, or inserts a new one if there is
    /// room or it beats the current worst entry.
    pub fn offer(&mut self, path: &[NodeId], goal_value: f64, timestamp: f64) -> Offer {
        let outcome = if let Some(e) = self.entries.iter_mut().find(|e| e.path == path) {
            e.goal_value = goal_value;
            e.timestamp = timestamp;
            Offer::Refreshed
        } else if self.entries.len() < self.capacity {
            self.entries.push(RouteEntry {
                path: path.to_vec(),
                goal_value,
                timestamp,
            });
            Offer::Inserted
        } else if goal_value < self.entries.last().map_or(f64::INFINITY, |e| e.goal_value) {
            *self.entries.last_mut().expect("list is full") = RouteEntry {
                path: path.to_vec(),
                goal_value,
                timestamp,
            };
            Offer::Inserted
        } else {
            Offer::Rejected
        };
        if outcome != Offer::Rejected {
            self.entries
                .sort_by(|a, b| a.goal_value.total_cmp(&b.goal_value).then_with(|| a.path.cmp(&b.path)));
        }
        outcome
    }

    /// Drops entries last refreshed before `cutoff`.
    pub fn expire(&mut self, cutoff: f64) {
        self.entries.retain(|e| e.timestamp >= cutoff);
    }

    pub fn is_sorted(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].goal_value <= w[1].goal_value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn insert_into_empty() {
        let mut l = RoutingList::new(5);
        assert_eq!(l.offer(&p(&[0, 1]), 10.0, 0.0), Offer::Inserted);
        assert_eq!(l.len(), 1);
        assert_eq!(l.best().unwrap().goal_value, 10.0);
    }

    #[test]
    fn full_list_rejects_worse_path() {
        let mut l = RoutingList::new(2);
        l.offer(&p(&[0, 1]), 1.0, 0.0);
        l.offer(&p(&[0, 2]), 2.0, 0.0);
        let before = l.clone();
        assert_eq!(l.offer(&p(&[0, 3]), 3.0, 1.0), Offer::Rejected);
        assert_eq!(l, before);
        assert_eq!(l.offer(&p(&[0, 4]), 1.5, 1.0), Offer::Inserted);
        assert_eq!(l.entries()[1].path, p(&[0, 4]));
    }

    #[test]
    fn better_ack_moves_to_top() {
        let mut l = RoutingList::new(5);
        l.offer(&p(&[0, 1]), 10.0, 0.0);
        l.offer(&p(&[0, 2]), 5.0, 0.0);
        assert_eq!(l.best().unwrap().goal_value, 5.0);
        // refreshing a known path re-ranks it
        assert_eq!(l.offer(&p(&[0, 2]), 20.0, 1.0), Offer::Refreshed);
        assert_eq!(l.best().unwrap().path, p(&[0, 1]));
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn expiry() {
        let mut l = RoutingList::new(5);
        l.offer(&p(&[0, 1]), 1.0, 0.0);
        l.offer(&p(&[0, 2]), 2.0, 10.0);
        l.expire(5.0);
        assert_eq!(l.len(), 1);
        assert_eq!(l.best().unwrap().path, p(&[0, 2]));
    }

    proptest! {
        #[test]
        fn stays_sorted_and_bounded(
            cap in 1usize..6,
            offers in prop::collection::vec((0u32..8, 0.0f64..100.0), 0..60),
        ) {
            let mut l = RoutingList::new(cap);
            for (k, (target, value)) in offers.into_iter().enumerate() {
                l.offer(&p(&[0, target]), value, k as f64);
                prop_assert!(l.len() <= cap);
                prop_assert!(l.is_sorted());
            }
        }
    }
}
