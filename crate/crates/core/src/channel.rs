//! Finite-state Markov fading channels with state-dependent dropouts.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// A fading channel `(T, p, e)`: transition matrix, stationary distribution,
/// and per-state dropout probability.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChannel {
    transition: DMatrix<f64>,
    stationary: DVector<f64>,
    dropout: Vec<f64>,
    label: String,
}

impl MarkovChannel {
    pub fn new(transition: DMatrix<f64>, dropout: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let k = transition.nrows();
        if k == 0 || !transition.is_square() {
            return Err(Error::Channel("transition matrix must be square and nonempty".into()));
        }
        if dropout.len() != k {
            return Err(Error::Channel(format!(
                "dropout vector has {} entries for {k} states",
                dropout.len()
            )));
        }
        if dropout.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Channel("dropout probabilities must lie in [0, 1]".into()));
        }
        let stationary = stationary_distribution(&transition)?;
        Ok(Self {
            transition,
            stationary,
            dropout,
            label: label.into(),
        })
    }

    pub fn states(&self) -> usize {
        self.dropout.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    pub fn dropout(&self) -> &[f64] {
        &self.dropout
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Samples the next state from row `d` of `T`.
    pub fn step<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> usize {
        sample_categorical(self.transition.row(d).iter().cloned(), rng)
    }

    /// `true` (delivered) with probability `1 - e[d]`.
    pub fn sample_transmission<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> bool {
        rng.random::<f64>() >= self.dropout[d]
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(self.stationary.iter().cloned(), rng)
    }

    /// `sum_d p[d] (1 - e[d])`.
    pub fn average_success(&self) -> f64 {
        self.stationary
            .iter()
            .zip(&self.dropout)
            .map(|(p, e)| p * (1.0 - e))
            .sum()
    }
}

fn sample_categorical<R: Rng + ?Sized>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        if w > 0.0 {
            last = i;
        }
        if u < acc {
            return i;
        }
    }
    // round-off left u above the final cumulative sum
    last
}

/// Unique `p` with `p'T = p'` and `sum p = 1`. The chain must be primitive
/// (irreducible and aperiodic).
pub fn stationary_distribution(t: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = t.nrows();
    if k == 0 || !t.is_square() {
        return Err(Error::Channel("transition matrix must be square and nonempty".into()));
    }
    for (r, row) in t.row_iter().enumerate() {
        if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Channel(format!("row {r} has entries outside [0, 1]")));
        }
        if (row.sum() - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Channel(format!("row {r} sums to {}", row.sum())));
        }
    }
    if !is_primitive(t) {
        return Err(Error::NotErgodic(
            "transition matrix is reducible or periodic".into(),
        ));
    }
    // (T' - I) p = 0 with the last equation replaced by sum(p) = 1
    let mut lhs = t.transpose() - DMatrix::identity(k, k);
    lhs.row_mut(k - 1).fill(1.0);
    let mut rhs = DVector::zeros(k);
    rhs[k - 1] = 1.0;
    let p = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotErgodic("singular balance equations".into()))?;
    // clip round-off negatives and renormalize
    let p = p.map(|v| v.max(0.0));
    let total = p.sum();
    Ok(p / total)
}

/// Wielandt: a nonnegative `k x k` matrix is primitive iff its
/// `(k-1)^2 + 1`-th power is strictly positive.
fn is_primitive(t: &DMatrix<f64>) -> bool {
    let k = t.nrows();
    let support = t.map(|v| v > 0.0);
    let mul = |a: &DMatrix<bool>, b: &DMatrix<bool>| {
        DMatrix::from_fn(k, k, |i, j| (0..k).any(|l| a[(i, l)] && b[(l, j)]))
    };
    let mut exp = (k - 1) * (k - 1) + 1;
    let mut base = support.clone();
    let mut acc: Option<DMatrix<bool>> = None;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(a) => mul(&a, &base),
            });
        }
        exp >>= 1;
        if exp > 0 {
            base = mul(&base, &base);
        }
    }
    acc.map(|a| a.iter().all(|&v| v)).unwrap_or(false)
}

/// Free parameters of a two-state Gilbert-Elliot channel. State 0 is "good",
/// state 1 is "bad". Given the target average success and the per-state
/// dropout rates, the bad-to-good rate is solved so that the stationary
/// average hits the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GilbertElliotParams {
    pub avg_success: f64,
    pub good_dropout: f64,
    pub bad_dropout: f64,
    /// Mean number of consecutive steps spent in the good state.
    pub good_sojourn: f64,
}

impl Default for GilbertElliotParams {
    fn default() -> Self {
        Self {
            avg_success: 0.93,
            good_dropout: 0.001,
            bad_dropout: 0.15,
            good_sojourn: 20.0,
        }
    }
}

impl GilbertElliotParams {
    pub fn build(&self, label: impl Into<String>) -> Result<MarkovChannel> {
        let s = self.avg_success;
        let (eg, eb) = (self.good_dropout, self.bad_dropout);
        let infeasible = |why: String| {
            Err(Error::Channel(format!(
                "Gilbert-Elliot target success {s} infeasible: {why}"
            )))
        };
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&eg) || !(0.0..=1.0).contains(&eb) {
            return infeasible("probabilities must lie in [0, 1]".into());
        }
        if eb <= eg {
            return infeasible("bad-state dropout must exceed good-state dropout".into());
        }
        if self.good_sojourn < 1.0 {
            return infeasible("good-state sojourn must be at least one step".into());
        }
        // 1 - s = (1 - pb) eg + pb eb
        let p_bad = (1.0 - s - eg) / (eb - eg);
        if !(p_bad > 0.0 && p_bad < 1.0) {
            return infeasible(format!(
                "needs bad-state occupancy {p_bad}, outside (0, 1) for dropouts ({eg}, {eb})"
            ));
        }
        let g = 1.0 / self.good_sojourn;
        // p_bad = g / (g + b)
        let b = g * (1.0 - p_bad) / p_bad;
        if b > 1.0 {
            return infeasible(format!(
                "bad-to-good rate {b} exceeds 1; shorten the good-state sojourn or raise the bad-state dropout"
            ));
        }
        let t = DMatrix::from_row_slice(2, 2, &[1.0 - g, g, b, 1.0 - b]);
        let ch = MarkovChannel::new(t, vec![eg, eb], label)?;
        // analytic stationary vector, exact rather than from the linear solve
        Ok(MarkovChannel {
            stationary: DVector::from_vec(vec![b / (g + b), g / (g + b)]),
            ..ch
        })
    }
}

/// Gilbert-Elliot channel with the default per-state dropouts;
/// `burstiness` is the mean good-state sojourn in steps.
pub fn gilbert_elliot(avg_success: f64, burstiness: f64) -> Result<MarkovChannel> {
    GilbertElliotParams {
        avg_success,
        good_sojourn: burstiness,
        ..Default::default()
    }
    .build(format!("gilbert-elliot({avg_success})"))
}

/// `M` independent channels, each with its own random stream.
#[derive(Debug, Clone)]
pub struct ChannelNetwork {
    channels: Vec<MarkovChannel>,
    states: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
}

impl ChannelNetwork {
    /// Initial states are drawn from each channel's stationary distribution.
    pub fn new(channels: Vec<MarkovChannel>, seed: u64) -> Self {
        let mut rngs: Vec<ChaCha8Rng> = (0..channels.len())
            .map(|j| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(j as u64);
                r
            })
            .collect();
        let states = channels
            .iter()
            .zip(rngs.iter_mut())
            .map(|(c, r)| c.sample_initial(r))
            .collect();
        Self {
            channels,
            states,
            rngs,
        }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[MarkovChannel] {
        &self.channels
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// One transmission attempt per channel in the current states.
    pub fn transmit(&mut self) -> Vec<bool> {
        (0..self.channels.len())
            .map(|j| self.channels[j].sample_transmission(self.states[j], &mut self.rngs[j]))
            .collect()
    }

    pub fn advance(&mut self) {
        for j in 0..self.channels.len() {
            self.states[j] = self.channels[j].step(self.states[j], &mut self.rngs[j]);
        }
    }

    pub fn average_success(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.average_success()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub channel: usize,
    pub state: usize,
    pub delta: u8,
}

/// Runs the network for `steps` steps, recording state and outcome per
/// channel. Channels are 1-based in the trace.
pub fn simulate_trace(net: &mut ChannelNetwork, steps: usize) -> Vec<TraceRow> {
    let mut rows = Vec::with_capacity(steps * net.len());
    for step in 0..steps {
        let states = net.states().to_vec();
        let acks = net.transmit();
        for (j, (&state, &ok)) in states.iter().zip(&acks).enumerate() {
            rows.push(TraceRow {
                step,
                channel: j + 1,
                state,
                delta: ok as u8,
            });
        }
        net.advance();
    }
    rows
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
