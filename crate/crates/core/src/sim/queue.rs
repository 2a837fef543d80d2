use std::collections::VecDeque;

pub const DEFAULT_RATE_WINDOW: f64 = 30.0;
/// Shortest averaging window used early in a run.
pub const MIN_RATE_WINDOW: f64 = 5.0;

/// FIFO occupancy of a node plus sliding-window arrival/departure rates.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeQueueStats {
    fifo: VecDeque<usize>,
    arrivals: VecDeque<f64>,
    departures: VecDeque<f64>,
    pub total_arrivals: u64,
    pub total_departures: u64,
    pub max_queue: usize,
    window: f64,
}

impl Default for NodeQueueStats {
    fn default() -> Self {
        NodeQueueStats::new(DEFAULT_RATE_WINDOW)
    }
}

impl NodeQueueStats {
    pub fn new(window: f64) -> Self {
        NodeQueueStats {
            fifo: VecDeque::new(),
            arrivals: VecDeque::new(),
            departures: VecDeque::new(),
            total_arrivals: 0,
            total_departures: 0,
            max_queue: 0,
            window,
        }
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn occupants(&self) -> impl Iterator<Item = usize> + '_ {
        self.fifo.iter().copied()
    }

    /// Places someone in the queue without counting an arrival.
    pub fn place(&mut self, who: usize) {
        self.fifo.push_back(who);
        self.max_queue = self.max_queue.max(self.fifo.len());
    }

    /// Records an arrival and returns the queue length found on arrival.
    pub fn arrive(&mut self, who: usize, t: f64) -> usize {
        let found = self.fifo.len();
        self.place(who);
        self.arrivals.push_back(t);
        self.total_arrivals += 1;
        found
    }

    /// Removes `who` as a served departure.
    pub fn depart(&mut self, who: usize, t: f64) {
        self.remove(who);
        self.departures.push_back(t);
        self.total_departures += 1;
    }

    /// Removes `who` without counting a departure.
    pub fn remove(&mut self, who: usize) {
        if let Some(pos) = self.fifo.iter().position(|&e| e == who) {
            self.fifo.remove(pos);
        }
    }

    /// Drops window events older than `t - window`.
    pub fn prune(&mut self, t: f64) {
        let horizon = t - self.window;
        for events in [&mut self.arrivals, &mut self.departures] {
            while events.front().is_some_and(|&e| e < horizon) {
                events.pop_front();
            }
        }
    }

    fn effective_window(&self, t: f64) -> f64 {
        t.clamp(MIN_RATE_WINDOW, self.window)
    }

    fn in_window(events: &VecDeque<f64>, horizon: f64) -> usize {
        events.len() - events.partition_point(|&e| e < horizon)
    }

    /// Arrivals per second over the window, with one pseudo-event added.
    pub fn arrival_rate(&self, t: f64) -> f64 {
        (Self::in_window(&self.arrivals, t - self.window) as f64 + 1.0) / self.effective_window(t)
    }

    /// Departures per second over the window, with one pseudo-event added.
    pub fn departure_rate(&self, t: f64) -> f64 {
        (Self::in_window(&self.departures, t - self.window) as f64 + 1.0) / self.effective_window(t)
    }
}
