//! Synthetic phishing and waterhole traces with infection overlays.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::neighborhood::{ResourceId, TraceEvent};
use crate::seed;
use crate::stats::normal_cdf;
use crate::synthetic::{ClassLabel, NodeId};
use crate::{Error, Result};

/// Log-normal email open delay in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalOpenTime {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for LogNormalOpenTime {
    /// Median 2820 s (47 minutes), mode 120 s.
    fn default() -> Self {
        LogNormalOpenTime {
            mu: 7.9445,
            sigma: 1.7768,
        }
    }
}

impl LogNormalOpenTime {
    /// Solves `median = e^mu` and `mode = e^(mu - sigma^2)`.
    pub fn from_median_mode(median: f64, mode: f64) -> Result<Self> {
        if !(mode > 0.0 && median > mode) {
            return Err(Error::InvalidParameter(
                "need 0 < mode < median for a log-normal fit".into(),
            ));
        }
        let mu = median.ln();
        Ok(LogNormalOpenTime {
            mu,
            sigma: (mu - mode.ln()).sqrt(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() || !self.mu.is_finite() {
            return Err(Error::InvalidParameter(
                "open-time model needs finite mu and sigma > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }

    pub fn mode(&self) -> f64 {
        (self.mu - self.sigma * self.sigma).exp()
    }

    /// Probability that an email is opened within `t` seconds.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            normal_cdf((t.ln() - self.mu) / self.sigma)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        (self.mu + self.sigma * crate::stats::normal_quantile(p)).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        LogNormal::new(self.mu, self.sigma)
            .expect("validated parameters")
            .sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhishingScenario {
    /// Nodes that can receive email. The union of all recipient lists is
    /// exactly this set.
    pub universe_size: usize,
    pub thread_count: usize,
    pub recipients_per_thread: usize,
    pub malicious_thread_count: usize,
    pub click_rate: f64,
    pub open_time: LogNormalOpenTime,
}

impl Default for PhishingScenario {
    fn default() -> Self {
        PhishingScenario {
            universe_size: 1086,
            thread_count: 50,
            recipients_per_thread: 100,
            malicious_thread_count: 1,
            click_rate: 1.0,
            open_time: LogNormalOpenTime::default(),
        }
    }
}

impl PhishingScenario {
    pub fn validate(&self) -> Result<()> {
        self.open_time.validate()?;
        if self.thread_count == 0 || self.recipients_per_thread == 0 {
            return Err(Error::InvalidParameter(
                "need at least one thread and one recipient".into(),
            ));
        }
        if self.malicious_thread_count > self.thread_count {
            return Err(Error::InvalidParameter(
                "more malicious threads than threads".into(),
            ));
        }
        if self.recipients_per_thread > self.universe_size {
            return Err(Error::InvalidParameter(
                "a thread cannot have more recipients than the universe".into(),
            ));
        }
        if self.universe_size > self.thread_count * self.recipients_per_thread {
            return Err(Error::InvalidParameter(
                "threads cannot cover the recipient universe".into(),
            ));
        }
        check_fraction("click_rate", self.click_rate)
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!(
            "{name} {v} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Per-server request rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateModel {
    /// Rates drawn log-uniformly over `[min, max]`; the compromised server
    /// is pinned at `max`.
    LogUniform { min: f64, max: f64 },
    /// One rate per server.
    Explicit { rates: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaterholeScenario {
    pub server_count: usize,
    pub compromised_server: u32,
    /// Fixed compromise instant. When absent it is drawn uniformly over the
    /// first half of the horizon.
    pub compromise_time: Option<f64>,
    pub infection_probability: f64,
    pub request_rate_model: RateModel,
    pub client_population: usize,
    /// Multiplies the client population and every request rate.
    pub scale: f64,
}

impl Default for WaterholeScenario {
    fn default() -> Self {
        WaterholeScenario {
            server_count: 50,
            compromised_server: 0,
            compromise_time: None,
            infection_probability: 1.0,
            request_rate_model: RateModel::LogUniform {
                min: 0.5,
                max: 43.7,
            },
            client_population: 50_000,
            scale: 1.0,
        }
    }
}

impl WaterholeScenario {
    pub fn validate(&self) -> Result<()> {
        if self.server_count == 0 {
            return Err(Error::InvalidParameter("need at least one server".into()));
        }
        if self.compromised_server as usize >= self.server_count {
            return Err(Error::InvalidParameter(
                "compromised server is not on the watchlist".into(),
            ));
        }
        check_fraction("infection_probability", self.infection_probability)?;
        if !(self.scale > 0.0) {
            return Err(Error::InvalidParameter("scale must be > 0".into()));
        }
        if self.population() == 0 {
            return Err(Error::InvalidParameter("client population is empty".into()));
        }
        match &self.request_rate_model {
            RateModel::LogUniform { min, max } => {
                if !(*min > 0.0 && max >= min && max.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "log-uniform rates need 0 < min <= max".into(),
                    ));
                }
            }
            RateModel::Explicit { rates } => {
                if rates.len() != self.server_count {
                    return Err(Error::InvalidParameter(format!(
                        "{} rates for {} servers",
                        rates.len(),
                        self.server_count
                    )));
                }
                if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "rates must be finite and >= 0".into(),
                    ));
                }
            }
        }
        if let Some(t) = self.compromise_time {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(
                    "compromise time must be >= 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn population(&self) -> usize {
        (self.client_population as f64 * self.scale).round() as usize
    }

    /// Request rate of every server for a run seeded with `run_seed`.
    pub fn rates(&self, run_seed: u64) -> Vec<f64> {
        let base: Vec<f64> = match &self.request_rate_model {
            RateModel::Explicit { rates } => rates.clone(),
            RateModel::LogUniform { min, max } => (0..self.server_count)
                .map(|s| {
                    if s == self.compromised_server as usize {
                        *max
                    } else {
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(seed::derive_path(run_seed, &[0, s as u64]));
                        (rng.random_range(min.ln()..=max.ln())).exp()
                    }
                })
                .collect(),
        };
        base.into_iter().map(|r| r * self.scale).collect()
    }
}

/// Infection time of every infected node. A node keeps its earliest
/// infection time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InfectionState {
    times: BTreeMap<NodeId, f64>,
}

impl InfectionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn infect(&mut self, node: NodeId, at: f64) {
        self.times
            .entry(node)
            .and_modify(|t| *t = t.min(at))
            .or_insert(at);
    }

    pub fn infection_time(&self, node: NodeId) -> Option<f64> {
        self.times.get(&node).copied()
    }

    pub fn is_infected_at(&self, node: NodeId, t: f64) -> bool {
        self.infection_time(node).is_some_and(|i| i <= t)
    }

    /// Nodes infected at or before `t`.
    pub fn count_at(&self, t: f64) -> usize {
        self.times.values().filter(|&&i| i <= t).count()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.times.iter().map(|(n, t)| (*n, *t))
    }

    /// Infection times in ascending order.
    pub fn sorted_times(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.times.values().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Label of the feature vector `node` emits at `timestamp`.
pub fn label_stream(infections: &InfectionState, node: NodeId, timestamp: f64) -> ClassLabel {
    if infections.is_infected_at(node, timestamp) {
        ClassLabel::Malicious
    } else {
        ClassLabel::Benign
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhishingTrace {
    pub events: Vec<TraceEvent>,
    pub infections: InfectionState,
    pub malicious_threads: Vec<ResourceId>,
}

/// Sends every thread at t = 0. Recipients of malicious threads open the
/// email after a log-normal delay and are infected at that instant with
/// probability `click_rate`, if it falls before `horizon`.
pub fn generate_phishing_trace(
    scenario: &PhishingScenario,
    horizon: f64,
    run_seed: u64,
) -> Result<PhishingTrace> {
    scenario.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be > 0".into()));
    }
    let n_threads = scenario.thread_count;
    let per = scenario.recipients_per_thread;
    let universe = scenario.universe_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(run_seed, 0));

    // Deal a permutation of the universe round-robin so every node receives
    // at least one thread, then top each thread up with random recipients.
    let mut perm: Vec<u32> = (0..universe as u32).collect();
    perm.shuffle(&mut rng);
    let mut threads: Vec<Vec<bool>> = vec![vec![false; universe]; n_threads];
    let mut sizes = vec![0usize; n_threads];
    for (i, &node) in perm.iter().enumerate() {
        threads[i % n_threads][node as usize] = true;
        sizes[i % n_threads] += 1;
    }
    for (members, size) in threads.iter_mut().zip(&mut sizes) {
        while *size < per {
            let node = rng.random_range(0..universe);
            if !members[node] {
                members[node] = true;
                *size += 1;
            }
        }
    }
    let recipients: Vec<Vec<NodeId>> = threads
        .iter()
        .map(|m| {
            m.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| NodeId(i as u32))
                .collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..n_threads).collect();
    order.shuffle(&mut rng);
    let mut malicious: Vec<usize> = order[..scenario.malicious_thread_count].to_vec();
    malicious.sort_unstable();

    let mut infections = InfectionState::new();
    for &t in &malicious {
        for r in &recipients[t] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_path(
                run_seed,
                &[1, t as u64, u64::from(r.0)],
            ));
            let open = scenario.open_time.sample(&mut rng);
            let clicks = rng.random::<f64>() < scenario.click_rate;
            if clicks && open < horizon {
                infections.infect(*r, open);
            }
        }
    }

    let events = recipients
        .into_iter()
        .enumerate()
        .map(|(t, r)| TraceEvent::email(0.0, ResourceId(t as u32), r))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhishingTrace {
        events,
        infections,
        malicious_threads: malicious
            .into_iter()
            .map(|t| ResourceId(t as u32))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterholeTrace {
    pub events: Vec<TraceEvent>,
    pub infections: InfectionState,
    pub compromise_time: f64,
    pub rates: Vec<f64>,
}

/// Poisson arrivals at every watched server with clients drawn uniformly
/// from the population. Each visit to the compromised server at or after
/// the compromise instant infects the visitor with the configured
/// probability.
pub fn generate_waterhole_trace(
    scenario: &WaterholeScenario,
    horizon: f64,
    run_seed: u64,
) -> Result<WaterholeTrace> {
    scenario.validate()?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(
            "horizon must be finite and > 0".into(),
        ));
    }
    let compromise_time = match scenario.compromise_time {
        Some(t) => t,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(run_seed, 1));
            rng.random_range(0.0..horizon / 2.0)
        }
    };
    let rates = scenario.rates(run_seed);
    let population = scenario.population();
    let target = scenario.compromised_server as usize;
    let mut infections = InfectionState::new();
    let mut arrivals: Vec<(f64, u32, u32)> = Vec::new();
    for (s, &rate) in rates.iter().enumerate() {
        if rate == 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_path(run_seed, &[2, s as u64]));
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = gap.sample(&mut rng);
        while t < horizon {
            let client = rng.random_range(0..population) as u32;
            if s == target
                && t >= compromise_time
                && rng.random::<f64>() < scenario.infection_probability
            {
                infections.infect(NodeId(client), t);
            }
            arrivals.push((t, s as u32, client));
            t += gap.sample(&mut rng);
        }
    }
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let events = arrivals
        .into_iter()
        .map(|(t, s, c)| TraceEvent::access(t, NodeId(c), ResourceId(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(WaterholeTrace {
        events,
        infections,
        compromise_time,
        rates,
    })
}

/// Writes `I,<timestamp>,<node_id>` lines ordered by time, then node.
pub fn write_infections<W: Write>(mut out: W, infections: &InfectionState) -> Result<()> {
    let mut rows: Vec<(f64, NodeId)> = infections.iter().map(|(n, t)| (t, n)).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (t, n) in rows {
        writeln!(out, "I,{t},{}", n.0)?;
    }
    Ok(())
}

pub fn read_infections<R: BufRead>(input: R) -> Result<InfectionState> {
    let mut state = InfectionState::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = t.split(',').collect();
        if f.len() != 3 || f[0] != "I" {
            return Err(Error::parse(i + 1, "expected `I,<timestamp>,<node_id>`"));
        }
        let ts: f64 = f[1]
            .parse()
            .map_err(|_| Error::parse(i + 1, "bad timestamp"))?;
        let node: u32 = f[2]
            .parse()
            .map_err(|_| Error::parse(i + 1, "bad node id"))?;
        if !(ts >= 0.0) || !ts.is_finite() {
            return Err(Error::parse(i + 1, "timestamp must be finite and >= 0"));
        }
        state.infect(NodeId(node), ts);
    }
    Ok(state)
}
