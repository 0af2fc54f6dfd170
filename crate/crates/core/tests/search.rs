use sqlshaper::distribution::{CostHistogram, CostIntervals};
use sqlshaper::model::{ColumnRef, Placeholder, SqlTemplate, ValueDomain};
use sqlshaper::profiler::{profile, CostOracle, ProfileRecord, Surface, SyntheticOracle};
use sqlshaper::rng::stage_rng;
use sqlshaper::search::{bayesian_optimize, fill_distribution, BoOptions, SearchEnd, SearchOptions, SearchState, Silent};

fn template(id: &str) -> SqlTemplate {
    let p = Placeholder {
        name: "p_1".into(),
        column: ColumnRef::new("t", "v"),
        domain: ValueDomain::int_range(0, 10_000).unwrap(),
    };
    SqlTemplate::new(id, "SELECT COUNT(*) FROM t WHERE v < {p_1}", vec![p]).unwrap()
}

fn range() -> CostIntervals {
    CostIntervals::from_edges(vec![0.0, 6000.0, 8000.0, 10_001.0]).unwrap()
}

fn hit_rate(naive: bool, seed: u64, intervals: &CostIntervals, j: usize, budget: usize) -> f64 {
    let t = template("t");
    let mut oracle = SyntheticOracle::new(Surface::Linear { lo: 0.0, hi: 10_000.0 });
    let opts = BoOptions { naive, ..BoOptions::default() };
    let run = bayesian_optimize(
        &t,
        intervals,
        j,
        budget,
        usize::MAX,
        &ProfileRecord::new("t"),
        &mut oracle,
        &opts,
        &mut stage_rng(seed, "bo"),
    )
    .unwrap();
    assert!(run.used() <= budget);
    let hits = run.costs().iter().filter(|&&c| intervals.bin(c) == Some(j)).count();
    hits as f64 / run.used() as f64
}

#[test]
fn bo_concentrates_on_the_interval() {
    let intervals = range();
    let rates: Vec<f64> = (0..20).map(|s| hit_rate(false, s, &intervals, 1, 25)).collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!(mean >= 0.4, "mean hit rate {mean}: {rates:?}");
}

#[test]
fn bo_beats_random_on_a_narrow_interval() {
    let intervals = CostIntervals::from_edges(vec![0.0, 6000.0, 6200.0, 10_001.0]).unwrap();
    let mut wins = 0;
    for s in 0..20 {
        let bo = hit_rate(false, s, &intervals, 1, 50);
        let naive = hit_rate(true, s, &intervals, 1, 50);
        if bo > naive {
            wins += 1;
        }
    }
    assert!(wins >= 18, "{wins}/20");
}

#[test]
fn constant_surfaces() {
    let intervals = range();
    let t = template("t");
    for (value, expect_all) in [(7000.0, true), (42.0, false)] {
        let mut oracle = SyntheticOracle::new(Surface::Constant { value });
        let run = bayesian_optimize(
            &t,
            &intervals,
            1,
            20,
            usize::MAX,
            &ProfileRecord::new("t"),
            &mut oracle,
            &BoOptions::default(),
            &mut stage_rng(3, "bo"),
        )
        .unwrap();
        let hits = run.costs().iter().filter(|&&c| intervals.bin(c) == Some(1)).count();
        if expect_all {
            assert_eq!(hits, run.used());
        } else {
            assert_eq!(hits, 0);
            let first = run.evaluations[0].objective;
            assert!(run.evaluations.iter().all(|e| e.objective == first));
        }
    }
}

#[test]
fn warm_start_skips_known_bindings() {
    let intervals = range();
    let t = template("t");
    let mut oracle = SyntheticOracle::new(Surface::Linear { lo: 0.0, hi: 10_000.0 });
    let prior = profile(&t, &mut oracle, 30, &mut stage_rng(1, "p")).unwrap();
    let run = bayesian_optimize(&t, &intervals, 1, 20, usize::MAX, &prior, &mut oracle, &BoOptions::default(), &mut stage_rng(2, "bo"))
        .unwrap();
    assert_eq!(run.warm_started, 10);
    let known: Vec<_> = prior.bindings_log.iter().collect();
    assert!(run.evaluations.iter().all(|e| !known.contains(&&e.bindings)));
}

fn uniform_target(n: usize, total: u64) -> CostHistogram {
    let intervals = CostIntervals::uniform(0.0, 10_000.0, n).unwrap();
    let per = total / n as u64;
    CostHistogram::from_counts(intervals, vec![per; n]).unwrap()
}

#[test]
fn fills_a_uniform_target_exactly() {
    let target = uniform_target(10, 1000);
    let templates = vec![template("t_001")];
    let mut oracle = SyntheticOracle::new(Surface::Linear { lo: 0.0, hi: 10_000.0 });
    let mut profiles = vec![profile(&templates[0], &mut oracle, 150, &mut stage_rng(1, "p")).unwrap()];
    let mut state = SearchState::new(&templates, &profiles, &target, vec![]);
    let end = fill_distribution(&mut state, &templates, &mut profiles, &target, &mut oracle, &SearchOptions::default(), 9, &mut Silent)
        .unwrap();
    assert_eq!(end, SearchEnd::Converged);
    assert_eq!(state.current, target.counts);
    assert_eq!(state.distance(&target), 0.0);
    assert!(state.skip.is_empty());
    assert!(oracle.evaluations() < 20_000, "{}", oracle.evaluations());
    for q in &state.queries {
        assert_eq!(target.intervals.bin(q.cost), Some(q.bin));
    }
}

#[test]
fn met_target_runs_nothing() {
    let target = uniform_target(2, 0);
    let templates = vec![template("t_001")];
    let mut oracle = SyntheticOracle::new(Surface::Linear { lo: 0.0, hi: 10_000.0 });
    let mut profiles = vec![ProfileRecord::from_costs("t_001", vec![1.0])];
    let mut state = SearchState::new(&templates, &profiles, &target, vec![]);
    fill_distribution(&mut state, &templates, &mut profiles, &target, &mut oracle, &SearchOptions::default(), 1, &mut Silent).unwrap();
    assert_eq!(state.runs, 0);
    assert_eq!(oracle.evaluations(), 0);
}

#[test]
fn unreachable_interval_is_skipped() {
    let intervals = range();
    let target = CostHistogram::from_counts(intervals, vec![10, 10, 0]).unwrap();
    let templates = vec![template("t_001")];
    // Costs only ever fall below 6000.
    let mut oracle = SyntheticOracle::new(Surface::Linear { lo: 0.0, hi: 5000.0 });
    let mut profiles = vec![profile(&templates[0], &mut oracle, 20, &mut stage_rng(1, "p")).unwrap()];
    let mut state = SearchState::new(&templates, &profiles, &target, vec![]);
    let end = fill_distribution(&mut state, &templates, &mut profiles, &target, &mut oracle, &SearchOptions::default(), 4, &mut Silent)
        .unwrap();
    assert_eq!(end, SearchEnd::Converged);
    assert_eq!(state.current[0], 10);
    assert_eq!(state.current[1], 0);
    assert!(state.skip.contains(&1));
    assert!(state.distance(&target) > 0.0);
}
