//! Random neural network with one neuron per neighbour, trained by
//! reward/punishment reinforcement.
//!
//! Every neuron `i` sends excitatory and inhibitory spikes to every other
//! neuron `j` with the weights `w⁺(j)`, `w⁻(j)` attached to the receiving
//! neuron, so neuron `i` fires at rate `r_i = Σ_{j≠i} (w⁺(j) + w⁻(j))`.
//! With constant external excitation `Λ` and inhibition `λ` the stationary
//! excitation probabilities satisfy
//!
//! ```text
//! q_j = (Λ + w⁺(j) Σ_{i≠j} q_i) / (r_j + λ + w⁻(j) Σ_{i≠j} q_i)
//! ```
//!
//! which is solved by fixed-point iteration.

use rand::Rng;

use crate::graph::NodeId;

pub const DEFAULT_SMOOTHING: f64 = 0.8;
pub const INITIAL_WEIGHT: f64 = 0.5;
const EXTERNAL_EXCITATION: f64 = 0.2;
const EXTERNAL_INHIBITION: f64 = 0.4;
const FIXED_POINT_TOL: f64 = 1e-6;
const FIXED_POINT_MAX_ITER: usize = 100;
/// Saturated neurons are held just below one.
const Q_MAX: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RnnState {
    neighbours: Vec<NodeId>,
    w_plus: Vec<f64>,
    w_minus: Vec<f64>,
    q: Vec<f64>,
    threshold: Option<f64>,
    total_weight: f64,
}

impl RnnState {
    /// Uniform start: every weight 0.5. `neighbours` must be sorted.
    pub fn new(neighbours: Vec<NodeId>) -> Self {
        let n = neighbours.len();
        let mut rnn = RnnState {
            neighbours,
            w_plus: vec![INITIAL_WEIGHT; n],
            w_minus: vec![INITIAL_WEIGHT; n],
            q: vec![0.5; n],
            threshold: None,
            total_weight: 2.0 * INITIAL_WEIGHT * n as f64,
        };
        rnn.solve();
        rnn
    }

    pub fn neighbours(&self) -> &[NodeId] {
        &self.neighbours
    }

    pub fn degree(&self) -> usize {
        self.neighbours.len()
    }

    pub fn excitation(&self) -> &[f64] {
        &self.q
    }

    pub fn excitation_of(&self, neighbour: NodeId) -> Option<f64> {
        self.position(neighbour).map(|i| self.q[i])
    }

    pub fn weights(&self) -> (&[f64], &[f64]) {
        (&self.w_plus, &self.w_minus)
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    fn position(&self, neighbour: NodeId) -> Option<usize> {
        self.neighbours.binary_search(&neighbour).ok()
    }

    /// Most excited neighbour; ties go to the smaller id.
    pub fn most_excited(&self) -> Option<NodeId> {
        self.most_excited_among(|_| true)
    }

    pub fn most_excited_among<F: Fn(NodeId) -> bool>(&self, allowed: F) -> Option<NodeId> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &n) in self.neighbours.iter().enumerate() {
            if !allowed(n) {
                continue;
            }
            match best {
                Some((_, q)) if self.q[i] <= q => {}
                _ => best = Some((i, self.q[i])),
            }
        }
        best.map(|(i, _)| self.neighbours[i])
    }

    /// Applies reward `reward` (the inverse of a goal value) to the decision
    /// that picked `winner`. The running threshold is an exponential average
    /// of past rewards; beating it reinforces the winner, falling short
    /// reinforces the alternatives. Weight increments are `reward / threshold`.
    pub fn reinforce(&mut self, winner: NodeId, reward: f64, smoothing: f64) -> Result<(), super::CpnError> {
        if !(reward > 0.0 && reward.is_finite()) {
            return Err(super::CpnError::InvalidReward(reward));
        }
        let w = self.position(winner).ok_or(super::CpnError::NotANeighbour(winner))?;
        let previous = self.threshold.unwrap_or(reward);
        self.threshold = Some(smoothing * previous + (1.0 - smoothing) * reward);

        // rewards enter relative to the threshold, so goal units do not matter
        let gain = reward / previous;
        let n = self.degree();
        if n == 1 {
            if reward >= previous {
                self.w_plus[0] += gain;
            } else {
                self.w_minus[0] += gain;
            }
        } else {
            let share = gain / (n - 1) as f64;
            if reward >= previous {
                self.w_plus[w] += gain;
                for j in (0..n).filter(|&j| j != w) {
                    self.w_minus[j] += share;
                }
            } else {
                self.w_minus[w] += gain;
                for j in (0..n).filter(|&j| j != w) {
                    self.w_plus[j] += share;
                }
            }
        }

        let total: f64 = self.w_plus.iter().chain(&self.w_minus).sum();
        let scale = self.total_weight / total;
        for v in self.w_plus.iter_mut().chain(self.w_minus.iter_mut()) {
            *v *= scale;
        }
        self.solve();
        Ok(())
    }

    fn solve(&mut self) {
        let n = self.degree();
        if n == 0 {
            return;
        }
        let total: f64 = self.w_plus.iter().chain(&self.w_minus).sum();
        for _ in 0..FIXED_POINT_MAX_ITER {
            let sum_q: f64 = self.q.iter().sum();
            let mut delta: f64 = 0.0;
            for j in 0..n {
                let others = sum_q - self.q[j];
                let rate = total - self.w_plus[j] - self.w_minus[j];
                let excite = EXTERNAL_EXCITATION + self.w_plus[j] * others;
                let inhibit = EXTERNAL_INHIBITION + self.w_minus[j] * others;
                let next = (excite / (rate + inhibit)).min(Q_MAX);
                delta = delta.max((next - self.q[j]).abs());
                self.q[j] = next;
            }
            if delta < FIXED_POINT_TOL {
                break;
            }
        }
    }
}

/// Next hop for a smart packet: a uniformly random neighbour with
/// probability `drift_prob`, otherwise the most excited neuron.
pub fn sp_next_hop<R: Rng + ?Sized>(
    node: NodeId,
    rnn: &RnnState,
    drift_prob: f64,
    rng: &mut R,
) -> Result<NodeId, super::CpnError> {
    sp_next_hop_among(node, rnn, drift_prob, rng, |_| true)
}

/// As [`sp_next_hop`], restricted to neighbours accepted by `allowed`.
pub fn sp_next_hop_among<R, F>(
    node: NodeId,
    rnn: &RnnState,
    drift_prob: f64,
    rng: &mut R,
    allowed: F,
) -> Result<NodeId, super::CpnError>
where
    R: Rng + ?Sized,
    F: Fn(NodeId) -> bool,
{
    if rnn.degree() == 0 {
        return Err(super::CpnError::IsolatedNode(node));
    }
    if drift_prob > 0.0 && rng.gen::<f64>() < drift_prob {
        let open: Vec<NodeId> = rnn.neighbours().iter().copied().filter(|&n| allowed(n)).collect();
        if open.is_empty() {
            return Err(super::CpnError::IsolatedNode(node));
        }
        return Ok(open[rng.gen_range(0..open.len())]);
    }
    rnn.most_excited_among(allowed).ok_or(super::CpnError::IsolatedNode(node))
}
