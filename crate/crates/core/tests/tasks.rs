mod common;

use std::collections::HashSet;

use common::{adding_target, oracle_push};
use dvnc::seed::rng_from;
use dvnc::tasks::{
    action_features, gen_adding, gen_adding_with, gen_gridworld, gen_gridworld_episodes, gen_majority, gridworld_transition,
    hits_at_k, mrr, object_features, rank_next_state, AddingConfig, Dataset, Direction, GridWorldConfig,
    GridWorldState, MajorityConfig, ADDING_COLUMNS, GRIDWORLD_COLUMNS,
};
use rand::Rng;

#[test]
fn adding_targets_resum() {
    let data = gen_adding_with(&AddingConfig { seq_len: 12, gap_len: 7, max_value: 3.0 }, 10_000, 1).unwrap();
    for s in &data.samples {
        let marks: Vec<f64> = s.markers.iter().map(|&m| m as u8 as f64).collect();
        assert_eq!(s.target, adding_target(&s.values, &marks));
        assert_eq!(s.len(), 19);
        assert_eq!(s.markers.iter().filter(|&&m| m).count(), 2);
        assert!(s.markers[12..].iter().all(|&m| !m));
        assert!(s.values[12..].iter().all(|&v| v == 0.0));
        assert!(s.values[..12].iter().all(|&v| (0.0..3.0).contains(&v)));
    }
}

#[test]
fn adding_tensors_layout() {
    let data = gen_adding(3, 4, 2, 5).unwrap();
    let (x, y) = data.tensors();
    assert_eq!(x.shape(), &[3, 6, 2]);
    assert_eq!(y.shape(), &[3, 1]);
    let s = &data.samples[1];
    for t in 0..6 {
        assert_eq!(x.data()[(6 + t) * 2], s.values[t]);
        assert_eq!(x.data()[(6 + t) * 2 + 1], s.markers[t] as u8 as f64);
    }
    assert_eq!(y.data()[1], s.target);
}

#[test]
fn adding_edge_cases() {
    let one = gen_adding(50, 1, 0, 2).unwrap();
    assert!(one.samples.iter().all(|s| s.markers == vec![true] && s.target == s.values[0]));
    assert!(gen_adding(1, 0, 5, 0).is_err());
    assert_eq!(gen_adding(20, 5, 3, 9).unwrap(), gen_adding(20, 5, 3, 9).unwrap());
    assert_ne!(gen_adding(20, 5, 3, 9).unwrap().samples, gen_adding(20, 5, 3, 10).unwrap().samples);
}

#[test]
fn blocked_push_stays() {
    let s = GridWorldState {
        grid_size: 5,
        positions: vec![(1, 1), (1, 2)],
        actions: vec![Direction::Right, Direction::None],
    };
    assert_eq!(gridworld_transition(&s).unwrap(), vec![(1, 1), (1, 2)]);
    let wall = GridWorldState {
        grid_size: 5,
        positions: vec![(0, 4)],
        actions: vec![Direction::Up],
    };
    assert_eq!(gridworld_transition(&wall).unwrap(), vec![(0, 4)]);
    let free = GridWorldState {
        grid_size: 5,
        positions: vec![(1, 1), (1, 2)],
        actions: vec![Direction::None, Direction::Down],
    };
    assert_eq!(gridworld_transition(&free).unwrap(), vec![(1, 1), (2, 2)]);
}

#[test]
fn transition_matches_duplicate_rule() {
    let mut rng = rng_from(3);
    let all = [Direction::Up, Direction::Down, Direction::Left, Direction::Right, Direction::None];
    for _ in 0..10_000 {
        let size = rng.random_range(1..=6);
        let n = rng.random_range(1..=(size * size).min(8));
        let mut cells: Vec<(usize, usize)> = Vec::new();
        while cells.len() < n {
            let c = (rng.random_range(0..size), rng.random_range(0..size));
            if !cells.contains(&c) {
                cells.push(c);
            }
        }
        let actions: Vec<Direction> = (0..n).map(|_| all[rng.random_range(0..5)]).collect();
        let moves: Vec<(i64, i64)> = actions
            .iter()
            .map(|a| match a {
                Direction::Up => (-1, 0),
                Direction::Down => (1, 0),
                Direction::Left => (0, -1),
                Direction::Right => (0, 1),
                Direction::None => (0, 0),
            })
            .collect();
        let state = GridWorldState {
            grid_size: size,
            positions: cells.clone(),
            actions,
        };
        assert_eq!(gridworld_transition(&state).unwrap(), oracle_push(size, &cells, &moves));
    }
}

#[test]
fn generated_transitions_are_collision_free() {
    let cfg = GridWorldConfig {
        num_objects: 5,
        grid_size: 5,
        steps: 10,
        episodes: 10_000,
    };
    let ts = gen_gridworld(&cfg, 11).unwrap();
    assert_eq!(ts.len(), 100_000);
    for (k, t) in ts.iter().enumerate() {
        for cells in [&t.state, &t.next] {
            let set: HashSet<_> = cells.iter().collect();
            assert_eq!(set.len(), 5, "transition {k}");
            assert!(cells.iter().all(|&(r, c)| r < 5 && c < 5));
        }
        assert_eq!(t.actions.iter().filter(|&&a| a != Direction::None).count(), 1);
        let moved = t.state.iter().zip(&t.next).filter(|(a, b)| a != b).count();
        assert!(moved <= 1);
        if k % 10 != 0 {
            assert_eq!(t.state, ts[k - 1].next);
        }
    }
}

#[test]
fn gridworld_generation_is_seeded_and_validated() {
    let a = gen_gridworld_episodes(3, 5, 4, 6, 2).unwrap();
    assert_eq!(a, gen_gridworld_episodes(3, 5, 4, 6, 2).unwrap());
    assert_ne!(a, gen_gridworld_episodes(3, 5, 4, 6, 3).unwrap());
    assert_eq!(a.len(), 24);
    assert!(gen_gridworld_episodes(26, 5, 1, 1, 0).is_err());
    assert!(gen_gridworld_episodes(0, 5, 1, 1, 0).is_err());
    let bad = GridWorldState {
        grid_size: 3,
        positions: vec![(0, 0), (0, 0)],
        actions: vec![Direction::None; 2],
    };
    assert!(gridworld_transition(&bad).is_err());
}

#[test]
fn feature_encodings() {
    assert_eq!(object_features(3, (2, 0)), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    assert_eq!(action_features(Direction::Left), vec![0.0, 0.0, 1.0, 0.0]);
    assert_eq!(action_features(Direction::None), vec![0.0; 4]);
}

#[test]
fn ranking_metrics() {
    assert!((mrr(&[1, 2, 4]).unwrap() - 0.58333).abs() < 1e-5);
    assert_eq!(mrr(&[1, 2, 4]).unwrap(), common::mrr(&[1, 2, 4]));
    assert_eq!(hits_at_k(&[1, 3, 2, 1], 1).unwrap(), 0.5);
    assert_eq!(hits_at_k(&[1, 3, 2, 1], 2).unwrap(), 0.75);
    assert!(mrr(&[0, 1]).is_err());
}

#[test]
fn rank_matches_full_sort() {
    let mut rng = rng_from(4);
    for _ in 0..2000 {
        let n = rng.random_range(1..12);
        let d = rng.random_range(1..4);
        let snap = |x: f64| (x * 2.0).round() / 2.0;
        let cands: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| snap(rng.random_range(-2.0..2.0))).collect()).collect();
        let pred: Vec<f64> = (0..d).map(|_| snap(rng.random_range(-2.0..2.0))).collect();
        let truth = rng.random_range(0..n);
        let dist = |c: &Vec<f64>| c.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut order: Vec<usize> = (0..n).collect();
        // Stable sort with the true candidate placed last among equals.
        order.sort_by(|&a, &b| dist(&cands[a]).total_cmp(&dist(&cands[b])).then((a == truth).cmp(&(b == truth))));
        let want = order.iter().position(|&j| j == truth).unwrap() + 1;
        assert_eq!(rank_next_state(&pred, &cands, truth).unwrap(), want);
    }
    assert!(rank_next_state(&[0.0], &[vec![0.0]], 1).is_err());
}

#[test]
fn majority_labels() {
    let cfg = MajorityConfig { seq_len: 9, vocab: 3 };
    let data = gen_majority(&cfg, 500, 5).unwrap();
    for (seq, &label) in data.tokens.iter().zip(&data.labels) {
        let count = |t: usize| seq.iter().filter(|&&x| x == t).count();
        assert!((0..3).all(|t| count(t) < count(label) || (count(t) == count(label) && t >= label)));
    }
    let (x, labels) = data.batch(&[0, 3]);
    assert_eq!(x.shape(), &[2, 9, 3]);
    assert_eq!(labels, vec![data.labels[0], data.labels[3]]);
    assert!(gen_majority(&MajorityConfig { seq_len: 4, vocab: 1 }, 1, 0).is_err());
}

#[test]
fn datasets_round_trip_bit_exactly() {
    let adding = gen_adding(20, 6, 3, 8).unwrap();
    let ds = Dataset::from_adding(&adding).unwrap();
    assert_eq!(ds.columns, ADDING_COLUMNS);
    assert_eq!(ds.rows.len(), 20 * 9);
    let cfg = GridWorldConfig {
        num_objects: 3,
        grid_size: 5,
        steps: 4,
        episodes: 3,
    };
    let grid = Dataset::from_gridworld(&cfg, 8, &gen_gridworld(&cfg, 8).unwrap()).unwrap();
    assert_eq!(grid.columns, GRIDWORLD_COLUMNS);
    assert_eq!(grid.rows.len(), 12 * 3);
    for d in [ds, grid] {
        let mut csv = Vec::new();
        d.write_csv(&mut csv).unwrap();
        assert_eq!(Dataset::read_csv(csv.as_slice()).unwrap(), d);
        let mut bin = Vec::new();
        d.write_binary(&mut bin).unwrap();
        assert_eq!(Dataset::read_binary(&mut bin.as_slice()).unwrap(), d);
        bin[0] ^= 1;
        assert!(Dataset::read_binary(&mut bin.as_slice()).is_err());
    }
}
