//! Two-stage stochastic candidate selection: an epsilon-greedy bandit whose
//! arms are candidate catchments and whose rewards are Bernoulli demand
//! draws.

use std::collections::HashMap;
use std::path::Path;

use rand::distr::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::Catchment;
use crate::{Error, PropertyId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochConfig {
    pub epsilon: f64,
    /// Iterations per episode.
    pub t_max: usize,
    pub episodes: usize,
    /// Number of top-ranked candidates reported per episode.
    pub p: usize,
    pub seed: u64,
    /// Q value of a candidate that has not been chosen yet.
    pub q_init: f64,
    /// Histogram bin count.
    pub bins: usize,
}

impl Default for StochConfig {
    fn default() -> Self {
        Self { epsilon: 0.7, t_max: 200, episodes: 400, p: 1, seed: 0, q_init: 0.0, bins: 40 }
    }
}

impl StochConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::OutOfRange { what: "epsilon", value: self.epsilon });
        }
        if self.t_max < 1 {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        if self.episodes < 1 {
            return Err(Error::invalid("episodes must be at least 1"));
        }
        if self.p < 1 {
            return Err(Error::invalid("p must be at least 1"));
        }
        if !self.q_init.is_finite() {
            return Err(Error::OutOfRange { what: "q_init", value: self.q_init });
        }
        if self.bins < 1 {
            return Err(Error::invalid("bins must be at least 1"));
        }
        Ok(())
    }
}

/// Per-candidate bandit statistics, indexed by candidate position.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardState {
    times_chosen: Vec<u64>,
    cumulative: Vec<u64>,
    q: Vec<f64>,
    t: u64,
}

impl RewardState {
    pub fn new(n_candidates: usize, q_init: f64) -> Self {
        Self {
            times_chosen: vec![0; n_candidates],
            cumulative: vec![0; n_candidates],
            q: vec![q_init; n_candidates],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn times_chosen(&self) -> &[u64] {
        &self.times_chosen
    }

    pub fn cumulative(&self) -> &[u64] {
        &self.cumulative
    }

    pub fn iterations(&self) -> u64 {
        self.t
    }
}

/// Success probabilities P(j) by property.
#[derive(Clone, Debug)]
pub struct BernoulliField {
    index: HashMap<PropertyId, Bernoulli>,
}

impl BernoulliField {
    pub fn new(probs: &[(PropertyId, f64)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(probs.len());
        for &(id, p) in probs {
            let d = Bernoulli::new(p).map_err(|_| Error::OutOfRange { what: "success probability", value: p })?;
            if index.insert(id, d).is_some() {
                return Err(Error::invalid(format!("duplicate property id {id}")));
            }
        }
        Ok(Self { index })
    }

    fn get(&self, id: PropertyId) -> Result<Bernoulli> {
        self.index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no success probability for property {id}")))
    }

    /// One draw per catchment property, in catchment order.
    pub fn draw<R: Rng + ?Sized>(&self, catchment: &Catchment, rng: &mut R) -> Result<Vec<(PropertyId, bool)>> {
        catchment.covered.iter().map(|&j| Ok((j, self.get(j)?.sample(rng)))).collect()
    }
}

/// Number of successes among the catchment's properties.
pub fn reward(catchment: &Catchment, draws: &[(PropertyId, bool)]) -> Result<u64> {
    let lookup: HashMap<PropertyId, bool> = draws.iter().copied().collect();
    catchment.covered.iter().try_fold(0u64, |acc, j| match lookup.get(j) {
        Some(&x) => Ok(acc + x as u64),
        None => Err(Error::invalid(format!("no draw for property {j}"))),
    })
}

/// Epsilon-greedy choice: with probability `epsilon` a uniform candidate,
/// otherwise the highest Q with ties to the lowest position.
pub fn choose<R: Rng + ?Sized>(state: &RewardState, epsilon: f64, rng: &mut R) -> Result<usize> {
    if state.is_empty() {
        return Err(Error::invalid("no candidates to choose from"));
    }
    let u: f64 = rng.random();
    if u < epsilon {
        return Ok(rng.random_range(0..state.len()));
    }
    let mut best = 0;
    for (i, &q) in state.q.iter().enumerate().skip(1) {
        if q > state.q[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Records one reward for the candidate at `chosen`.
pub fn update(state: &mut RewardState, chosen: usize, reward: u64) {
    state.times_chosen[chosen] += 1;
    state.cumulative[chosen] += reward;
    state.q[chosen] = state.cumulative[chosen] as f64 / state.times_chosen[chosen] as f64;
    state.t += 1;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub episode: u64,
    /// Final Q per candidate, in candidate order.
    pub final_q: Vec<f64>,
    pub times_chosen: Vec<u64>,
    /// Candidate ids by descending Q; equal Q keeps candidate order.
    pub ranking: Vec<u64>,
}

impl EpisodeResult {
    pub fn top(&self, p: usize) -> &[u64] {
        &self.ranking[..p.min(self.ranking.len())]
    }
}

/// Candidates with their catchment distributions, ready for simulation.
/// Candidates are held in ascending id order.
#[derive(Clone, Debug)]
pub struct Bandit {
    candidate_ids: Vec<u64>,
    arms: Vec<Vec<Bernoulli>>,
}

impl Bandit {
    pub fn new(catchments: &[Catchment], field: &BernoulliField) -> Result<Self> {
        if catchments.is_empty() {
            return Err(Error::invalid("no candidates to simulate"));
        }
        let mut sorted: Vec<&Catchment> = catchments.iter().collect();
        sorted.sort_by_key(|c| c.candidate_id);
        if sorted.windows(2).any(|w| w[0].candidate_id == w[1].candidate_id) {
            return Err(Error::invalid("duplicate candidate id"));
        }
        let arms = sorted
            .iter()
            .map(|c| c.covered.iter().map(|&j| field.get(j)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok(Self { candidate_ids: sorted.iter().map(|c| c.candidate_id).collect(), arms })
    }

    pub fn candidate_ids(&self) -> &[u64] {
        &self.candidate_ids
    }

    /// `t_max` rounds of choose, draw, update on a fresh state. The episode
    /// stream is `episode` of a generator seeded with the master seed.
    pub fn run_episode(&self, config: &StochConfig, episode: u64) -> Result<EpisodeResult> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(episode);
        let mut state = RewardState::new(self.arms.len(), config.q_init);
        for _ in 0..config.t_max {
            let i = choose(&state, config.epsilon, &mut rng)?;
            let r = self.arms[i].iter().filter(|d| d.sample(&mut rng)).count() as u64;
            update(&mut state, i, r);
        }
        let mut order: Vec<usize> = (0..state.len()).collect();
        order.sort_by(|&a, &b| state.q[b].total_cmp(&state.q[a]));
        Ok(EpisodeResult {
            episode,
            ranking: order.iter().map(|&i| self.candidate_ids[i]).collect(),
            final_q: state.q,
            times_chosen: state.times_chosen,
        })
    }

    /// Episodes `0..episodes`, run in parallel and collected in order.
    pub fn run_campaign(&self, config: &StochConfig) -> Result<CampaignResult> {
        config.validate()?;
        let episodes: Vec<EpisodeResult> = (0..config.episodes as u64)
            .into_par_iter()
            .map(|e| self.run_episode(config, e))
            .collect::<Result<_>>()?;
        Ok(CampaignResult::aggregate(self.candidate_ids.clone(), episodes, config.bins))
    }
}

pub fn run_episode(
    config: &StochConfig,
    catchments: &[Catchment],
    field: &BernoulliField,
    episode: u64,
) -> Result<EpisodeResult> {
    Bandit::new(catchments, field)?.run_episode(config, episode)
}

pub fn run_campaign(config: &StochConfig, catchments: &[Catchment], field: &BernoulliField) -> Result<CampaignResult> {
    Bandit::new(catchments, field)?.run_campaign(config)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateSummary {
    pub candidate_id: u64,
    pub mean_q: f64,
    /// Population standard deviation across episodes.
    pub std_q: f64,
    /// Fraction of episodes ranking this candidate first.
    pub win_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    /// Normalized so the bins of one candidate integrate to 1.
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub candidate_id: u64,
    pub bins: Vec<Bin>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignResult {
    pub candidate_ids: Vec<u64>,
    pub episodes: Vec<EpisodeResult>,
    pub summary: Vec<CandidateSummary>,
    pub histograms: Vec<Histogram>,
}

impl CampaignResult {
    fn aggregate(candidate_ids: Vec<u64>, episodes: Vec<EpisodeResult>, bins: usize) -> Self {
        let n_ep = episodes.len() as f64;
        let samples: Vec<Vec<f64>> = (0..candidate_ids.len())
            .map(|i| episodes.iter().map(|e| e.final_q[i]).collect())
            .collect();
        let summary = candidate_ids
            .iter()
            .zip(&samples)
            .map(|(&id, qs)| {
                let mean = qs.iter().sum::<f64>() / n_ep;
                let var = qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / n_ep;
                let wins = episodes.iter().filter(|e| e.ranking[0] == id).count();
                CandidateSummary { candidate_id: id, mean_q: mean, std_q: var.sqrt(), win_rate: wins as f64 / n_ep }
            })
            .collect();

        let all = samples.iter().flatten();
        let mut lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let mut hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let histograms = candidate_ids
            .iter()
            .zip(&samples)
            .map(|(&id, qs)| {
                let mut counts = vec![0usize; bins];
                for &q in qs {
                    let b = (((q - lo) / width) as usize).min(bins - 1);
                    counts[b] += 1;
                }
                let bins = counts
                    .iter()
                    .enumerate()
                    .map(|(b, &c)| Bin {
                        lo: lo + b as f64 * width,
                        hi: lo + (b + 1) as f64 * width,
                        density: c as f64 / (n_ep * width),
                    })
                    .collect();
                Histogram { candidate_id: id, bins }
            })
            .collect();
        Self { candidate_ids, episodes, summary, histograms }
    }

    /// Summary entry for the candidate with the highest win rate; ties go
    /// to the lower id.
    pub fn winner(&self) -> Option<&CandidateSummary> {
        self.summary.iter().fold(None, |best: Option<&CandidateSummary>, s| match best {
            Some(b) if b.win_rate >= s.win_rate => Some(b),
            _ => Some(s),
        })
    }
}

#[derive(Serialize)]
struct EpisodeRow {
    episode: u64,
    candidate_id: u64,
    final_q: f64,
    times_chosen: u64,
}

#[derive(Serialize)]
struct BinRow {
    candidate_id: u64,
    bin_lo: f64,
    bin_hi: f64,
    density: f64,
}

/// `episode,candidate_id,final_q,times_chosen`.
pub fn write_campaign_csv(path: &Path, result: &CampaignResult) -> Result<()> {
    let rows: Vec<EpisodeRow> = result
        .episodes
        .iter()
        .flat_map(|e| {
            result.candidate_ids.iter().enumerate().map(move |(i, &id)| EpisodeRow {
                episode: e.episode,
                candidate_id: id,
                final_q: e.final_q[i],
                times_chosen: e.times_chosen[i],
            })
        })
        .collect();
    crate::geodata::write_csv_rows(path, &rows)
}

/// `candidate_id,bin_lo,bin_hi,density`.
pub fn write_histogram_csv(path: &Path, result: &CampaignResult) -> Result<()> {
    let rows: Vec<BinRow> = result
        .histograms
        .iter()
        .flat_map(|h| {
            h.bins.iter().map(move |b| BinRow { candidate_id: h.candidate_id, bin_lo: b.lo, bin_hi: b.hi, density: b.density })
        })
        .collect();
    crate::geodata::write_csv_rows(path, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup(sets: &[(u64, &[(u64, f64)])]) -> (Vec<Catchment>, BernoulliField) {
        let mut probs = Vec::new();
        let mut cs = Vec::new();
        for &(id, members) in sets {
            cs.push(Catchment { candidate_id: id, covered: members.iter().map(|&(j, _)| j).collect() });
            for &(j, p) in members {
                if !probs.iter().any(|&(k, _)| k == j) {
                    probs.push((j, p));
                }
            }
        }
        (cs, BernoulliField::new(&probs).unwrap())
    }

    #[test]
    fn reward_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ones: Vec<(u64, f64)> = (0..7).map(|j| (j, 1.0)).collect();
        let (cs, f) = setup(&[(1, &ones)]);
        for _ in 0..20 {
            assert_eq!(reward(&cs[0], &f.draw(&cs[0], &mut rng).unwrap()).unwrap(), 7);
        }
        let zeros: Vec<(u64, f64)> = (0..7).map(|j| (j, 0.0)).collect();
        let (cs, f) = setup(&[(1, &zeros)]);
        assert_eq!(reward(&cs[0], &f.draw(&cs[0], &mut rng).unwrap()).unwrap(), 0);
        assert!(reward(&cs[0], &[(0, true)]).is_err());
        assert!(BernoulliField::new(&[(1, 1.2)]).is_err());
    }

    #[test]
    fn half_probability_reward_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let half: Vec<(u64, f64)> = (0..1000).map(|j| (j, 0.5)).collect();
        let (cs, f) = setup(&[(1, &half)]);
        let iters = 10_000;
        let total: u64 = (0..iters).map(|_| reward(&cs[0], &f.draw(&cs[0], &mut rng).unwrap()).unwrap()).sum();
        let mean = total as f64 / iters as f64;
        // σ of one reward is √(1000·0.25); of the mean, that over √iters.
        let se = (1000.0f64 * 0.25).sqrt() / (iters as f64).sqrt();
        assert!((mean - 500.0).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn greedy_choice_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = RewardState::new(3, 0.0);
        s.q = vec![3.0, 9.0, 1.0];
        for _ in 0..50 {
            assert_eq!(choose(&s, 0.0, &mut rng).unwrap(), 1);
        }
        let tied = RewardState::new(4, 2.0);
        assert_eq!(choose(&tied, 0.0, &mut rng).unwrap(), 0);
        assert!(choose(&RewardState::new(0, 0.0), 0.5, &mut rng).is_err());
    }

    #[test]
    fn pure_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = RewardState::new(3, 0.0);
        let n = 30_000;
        let mut counts = [0u32; 3];
        for _ in 0..n {
            counts[choose(&s, 1.0, &mut rng).unwrap()] += 1;
        }
        let (p, nf) = (1.0 / 3.0, n as f64);
        let sd = (nf * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - nf * p).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn update_running_average() {
        let mut s = RewardState::new(2, 0.0);
        update(&mut s, 0, 10);
        assert_eq!(s.q()[0], 10.0);
        let mut s = RewardState::new(2, 0.0);
        update(&mut s, 1, 4);
        update(&mut s, 1, 8);
        assert_eq!(s.q(), &[0.0, 6.0]);
        assert_eq!(s.iterations(), 2);
    }

    #[test]
    fn update_matches_history_replay() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = RewardState::new(4, 0.0);
        let mut history: Vec<(usize, u64)> = Vec::new();
        for _ in 0..500 {
            let (i, r) = (rng.random_range(0..4), rng.random_range(0..50u64));
            update(&mut s, i, r);
            history.push((i, r));
        }
        for i in 0..4 {
            let chosen: Vec<u64> = history.iter().filter(|h| h.0 == i).map(|h| h.1).collect();
            let q = if chosen.is_empty() { 0.0 } else { chosen.iter().sum::<u64>() as f64 / chosen.len() as f64 };
            assert_eq!(s.q()[i], q);
        }
    }

    #[test]
    fn single_step_greedy_touches_one_candidate() {
        let (cs, f) = setup(&[(4, &[(1, 0.5)]), (9, &[(2, 0.5)])]);
        let cfg = StochConfig { epsilon: 0.0, t_max: 1, ..Default::default() };
        let e = run_episode(&cfg, &cs, &f, 0).unwrap();
        assert_eq!(e.times_chosen, vec![1, 0]);
    }

    #[test]
    fn single_candidate_converges() {
        let members: Vec<(u64, f64)> = (0..40).map(|j| (j, 0.1 + 0.02 * j as f64)).collect();
        let (cs, f) = setup(&[(1, &members)]);
        let mass: f64 = members.iter().map(|m| m.1).sum();
        let sigma = members.iter().map(|m| m.1 * (1.0 - m.1)).sum::<f64>().sqrt();
        for ep in 0..5 {
            let e = run_episode(&StochConfig::default(), &cs, &f, ep).unwrap();
            assert_eq!(e.ranking, vec![1]);
            assert!((e.final_q[0] - mass).abs() <= 3.0 * sigma / 200f64.sqrt() + 1e-9);
        }
    }

    #[test]
    fn superset_candidate_wins() {
        let big: Vec<(u64, f64)> = (0..30).map(|j| (j, 0.4)).collect();
        let (cs, f) = setup(&[(1, &big), (2, &big[..20])]);
        let r = run_campaign(&StochConfig::default(), &cs, &f).unwrap();
        assert!(r.summary[0].win_rate >= 0.95, "{:?}", r.summary);
        assert_eq!(r.winner().unwrap().candidate_id, 1);
    }

    #[test]
    fn one_episode_campaign_equals_episode() {
        let (cs, f) = setup(&[(1, &[(1, 0.3), (2, 0.6)]), (2, &[(3, 0.9)])]);
        let cfg = StochConfig { episodes: 1, ..Default::default() };
        let c = run_campaign(&cfg, &cs, &f).unwrap();
        assert_eq!(c.episodes, vec![run_episode(&cfg, &cs, &f, 0).unwrap()]);
    }

    #[test]
    fn deterministic_probabilities_give_zero_spread() {
        let (cs, f) = setup(&[(1, &[(1, 1.0), (2, 1.0)]), (2, &[(3, 0.0)])]);
        let cfg = StochConfig { episodes: 30, ..Default::default() };
        let c = run_campaign(&cfg, &cs, &f).unwrap();
        assert!(c.summary.iter().all(|s| s.std_q == 0.0));
        assert!(c.episodes.windows(2).all(|w| w[0].final_q == w[1].final_q));
    }

    #[test]
    fn noisier_catchment_spreads_more() {
        let (cs, f) = setup(&[(1, &[(1, 0.5), (2, 0.5), (3, 0.5)]), (2, &[(4, 0.95), (5, 0.95), (6, 0.95)])]);
        let cfg = StochConfig { epsilon: 1.0, episodes: 300, ..Default::default() };
        let c = run_campaign(&cfg, &cs, &f).unwrap();
        assert!(c.summary[0].std_q > c.summary[1].std_q);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let (cs, f) = setup(&[(1, &[(1, 0.3), (2, 0.6)]), (2, &[(3, 0.9)])]);
        let c = run_campaign(&StochConfig { episodes: 50, ..Default::default() }, &cs, &f).unwrap();
        for h in &c.histograms {
            assert_eq!(h.bins.len(), 40);
            let area: f64 = h.bins.iter().map(|b| b.density * (b.hi - b.lo)).sum();
            assert!((area - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(StochConfig { epsilon: 1.5, ..Default::default() }.validate().is_err());
        assert!(StochConfig { t_max: 0, ..Default::default() }.validate().is_err());
        assert!(StochConfig { episodes: 0, ..Default::default() }.validate().is_err());
        assert!(StochConfig::default().validate().is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn episode_bounds(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..12),
            split in 0usize..12,
            eps in 0.0f64..=1.0,
            seed in any::<u64>(),
            t_max in 1usize..60,
        ) {
            let split = split % probs.len();
            let members: Vec<(u64, f64)> = probs.iter().enumerate().map(|(j, &p)| (j as u64, p)).collect();
            let (cs, f) = setup(&[(1, &members[..split]), (2, &members[split..]), (3, &members)]);
            let cfg = StochConfig { epsilon: eps, t_max, seed, episodes: 1, ..Default::default() };
            let e = run_episode(&cfg, &cs, &f, 0).unwrap();
            prop_assert_eq!(e.times_chosen.iter().sum::<u64>(), t_max as u64);
            for (q, c) in e.final_q.iter().zip(&cs) {
                prop_assert!(*q >= 0.0 && *q <= c.len() as f64);
            }
            prop_assert_eq!(&e, &run_episode(&cfg, &cs, &f, 0).unwrap());
        }
    }
}
