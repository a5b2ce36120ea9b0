use firesite::coverage::Catchment;
use firesite::stochastic::{run_campaign, run_episode, BernoulliField, StochConfig};

fn instance() -> (Vec<Catchment>, BernoulliField) {
    let probs: Vec<(u64, f64)> = (0..50).map(|j| (j, 0.05 + 0.018 * j as f64)).collect();
    let cs = vec![
        Catchment { candidate_id: 1, covered: (0..20).collect() },
        Catchment { candidate_id: 2, covered: (10..35).collect() },
        Catchment { candidate_id: 3, covered: (30..50).collect() },
        Catchment { candidate_id: 4, covered: vec![] },
    ];
    (cs, BernoulliField::new(&probs).unwrap())
}

#[test]
fn exploration_floor_on_times_chosen() {
    let (cs, f) = instance();
    let eps = 0.4;
    let cfg = StochConfig { epsilon: eps, t_max: 200, episodes: 200, seed: 8, ..Default::default() };
    let r = run_campaign(&cfg, &cs, &f).unwrap();
    let n = cs.len() as f64;
    for i in 0..cs.len() {
        let mean = r.episodes.iter().map(|e| e.times_chosen[i] as f64).sum::<f64>() / r.episodes.len() as f64;
        let floor = eps * cfg.t_max as f64 / n;
        // The explore count per episode is Binomial(t, eps/n); this is 3σ of its mean over episodes.
        let q = eps / n;
        let slack = 3.0 * (cfg.t_max as f64 * q * (1.0 - q) / r.episodes.len() as f64).sqrt();
        assert!(mean >= floor - slack, "candidate {i}: {mean} < {floor}");
    }
}

#[test]
fn pure_exploration_is_unbiased() {
    let (cs, f) = instance();
    let probs: Vec<f64> = (0..50).map(|j| 0.05 + 0.018 * j as f64).collect();
    let cfg = StochConfig { epsilon: 1.0, t_max: 200, episodes: 400, seed: 2, ..Default::default() };
    let r = run_campaign(&cfg, &cs, &f).unwrap();
    for (i, c) in cs.iter().enumerate() {
        let mass: f64 = c.covered.iter().map(|&j| probs[j as usize]).sum();
        let var: f64 = c.covered.iter().map(|&j| probs[j as usize] * (1.0 - probs[j as usize])).sum();
        let pulls: f64 = r.episodes.iter().map(|e| e.times_chosen[i] as f64).sum();
        let sum: f64 = r.episodes.iter().map(|e| e.final_q[i] * e.times_chosen[i] as f64).sum();
        let mean = sum / pulls;
        assert!((mean - mass).abs() <= 3.0 * (var / pulls).sqrt() + 1e-12, "candidate {i}: {mean} vs {mass}");
    }
}

#[test]
fn campaign_replays_identically_under_any_pool() {
    let (cs, f) = instance();
    let cfg = StochConfig { episodes: 64, seed: 77, ..Default::default() };
    let reference = run_campaign(&cfg, &cs, &f).unwrap();
    for threads in [1, 2, 5] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let again = pool.install(|| run_campaign(&cfg, &cs, &f).unwrap());
        assert_eq!(again, reference);
    }
    for e in &reference.episodes {
        assert_eq!(e, &run_episode(&cfg, &cs, &f, e.episode).unwrap());
    }
    let other = run_campaign(&StochConfig { seed: 78, ..cfg }, &cs, &f).unwrap();
    assert_ne!(other.episodes, reference.episodes);
}

#[test]
fn output_files_have_documented_headers() {
    let (cs, f) = instance();
    let r = run_campaign(&StochConfig { episodes: 3, ..Default::default() }, &cs, &f).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("c.csv"), dir.path().join("h.csv"));
    firesite::stochastic::write_campaign_csv(&a, &r).unwrap();
    firesite::stochastic::write_histogram_csv(&b, &r).unwrap();
    let a = std::fs::read_to_string(a).unwrap();
    let b = std::fs::read_to_string(b).unwrap();
    assert!(a.starts_with("episode,candidate_id,final_q,times_chosen\n"));
    assert_eq!(a.lines().count(), 1 + 3 * cs.len());
    assert!(b.starts_with("candidate_id,bin_lo,bin_hi,density\n"));
    assert_eq!(b.lines().count(), 1 + 40 * cs.len());
}
