use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{penalty, round_selection, SelectionProblem, SelectionVector};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    /// Individual learning factor.
    pub c1: f64,
    /// Global learning factor.
    pub c2: f64,
    /// Inertia weight.
    pub inertia: f64,
    /// Penalty weight; `None` uses ten times the rate with every pose selected.
    pub tau: Option<f64>,
    /// Attempts per particle at drawing a feasible starting subset.
    pub init_attempts: usize,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 100,
            iterations: 200,
            c1: 1.494,
            c2: 1.494,
            inertia: 0.729,
            tau: None,
            init_attempts: 100,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument(
                "swarm size and iterations must be at least 1".into(),
            ));
        }
        if self.tau.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        Ok(())
    }

    pub fn tau_for(&self, problem: &SelectionProblem<'_>) -> f64 {
        self.tau.unwrap_or_else(|| {
            let all: Vec<usize> = (0..problem.power.nrows()).collect();
            10.0 * problem.rate(&all).max(1.0)
        })
    }
}

/// Penalized fitness `C(round(s)) - tau * Q(s)`, to be maximized.
pub fn fitness(s: &[f64], problem: &SelectionProblem<'_>, tau: f64) -> f64 {
    let idx = round_selection(s).indices();
    problem.rate(&idx) - tau * penalty(s, problem.distances, problem.d_min, problem.budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoResult {
    pub selection: SelectionVector,
    /// Global best fitness after each iteration.
    pub trace: Vec<f64>,
    /// Upper-bound rate of the returned selection.
    pub rate: f64,
    /// Whether the rounded global best needed repair.
    pub repaired: bool,
}

struct Particle {
    position: Vec<f64>,
    velocity: Vec<f64>,
    best_position: Vec<f64>,
    best_fitness: f64,
    rng: SimRng,
}

/// Relaxed starting point: a random `B`-subset (feasible when one is found
/// within the attempt budget) sits in the upper half of the box, the rest in
/// the lower half.
fn initial_position(problem: &SelectionProblem<'_>, attempts: usize, rng: &mut SimRng) -> Vec<f64> {
    let m = problem.power.nrows();
    let mut subset = sample(rng, m, problem.budget).into_vec();
    for _ in 1..attempts {
        if problem.conflicts(&subset) == 0 {
            break;
        }
        subset = sample(rng, m, problem.budget).into_vec();
    }
    let mut chosen = vec![false; m];
    for i in subset {
        chosen[i] = true;
    }
    chosen
        .iter()
        .map(|&c| {
            if c {
                rng.random_range(0.5..1.0)
            } else {
                rng.random_range(0.0..0.5)
            }
        })
        .collect()
}

/// Penalty particle swarm over the relaxed box `[0, 1]^M`. The rounded global
/// best is repaired greedily when it is infeasible.
pub fn pso_optimize(problem: &SelectionProblem<'_>, config: &PsoConfig) -> Result<PsoResult> {
    problem.validate()?;
    config.validate()?;
    let m = problem.power.nrows();
    let tau = config.tau_for(problem);
    let mut swarm: Vec<Particle> = (0..config.swarm_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, Stream::Pso, i as u64);
            let position = initial_position(problem, config.init_attempts.max(1), &mut rng);
            let velocity = (0..m).map(|_| rng.random_range(-0.1..0.1)).collect();
            let best_fitness = fitness(&position, problem, tau);
            Particle {
                best_position: position.clone(),
                position,
                velocity,
                best_fitness,
                rng,
            }
        })
        .collect();

    let leader = |swarm: &[Particle]| {
        // strict comparison keeps the lowest index on ties
        let mut best = 0;
        for (i, p) in swarm.iter().enumerate() {
            if p.best_fitness > swarm[best].best_fitness {
                best = i;
            }
        }
        best
    };
    let first = leader(&swarm);
    let mut gbest = swarm[first].best_position.clone();
    let mut gbest_fitness = swarm[first].best_fitness;
    let mut trace = Vec::with_capacity(config.iterations);

    for _ in 0..config.iterations {
        swarm.par_iter_mut().for_each(|p| {
            for j in 0..m {
                let r1: f64 = p.rng.random();
                let r2: f64 = p.rng.random();
                let v = config.inertia * p.velocity[j]
                    + config.c1 * r1 * (p.best_position[j] - p.position[j])
                    + config.c2 * r2 * (gbest[j] - p.position[j]);
                p.velocity[j] = v.clamp(-1.0, 1.0);
                p.position[j] = (p.position[j] + p.velocity[j]).clamp(0.0, 1.0);
            }
            let f = fitness(&p.position, problem, tau);
            if f > p.best_fitness {
                p.best_fitness = f;
                p.best_position.clone_from(&p.position);
            }
        });
        let i = leader(&swarm);
        if swarm[i].best_fitness > gbest_fitness {
            gbest_fitness = swarm[i].best_fitness;
            gbest.clone_from(&swarm[i].best_position);
        }
        trace.push(gbest_fitness);
    }

    let rounded = round_selection(&gbest).indices();
    let (indices, repaired) = if problem.is_feasible(&rounded) {
        (rounded, false)
    } else {
        (repair(problem, rounded)?, true)
    };
    Ok(PsoResult {
        rate: problem.rate(&indices),
        selection: SelectionVector::from_indices(m, &indices),
        trace,
        repaired,
    })
}

/// Greedy repair: drop conflicting poses, trim to `B`, then add the
/// compatible pose with the largest rate gain until `B` are selected. Every
/// choice takes the lowest index among equals.
pub(crate) fn repair(problem: &SelectionProblem<'_>, mut selected: Vec<usize>) -> Result<Vec<usize>> {
    let m = problem.power.nrows();
    let conflicts_with = |i: usize, set: &[usize]| {
        set.iter()
            .filter(|&&j| j != i && problem.distances[(i, j)] < problem.d_min)
            .count()
    };
    // cheapest removal among the poses picked by `candidates`
    let drop_one = |selected: &mut Vec<usize>, candidates: &dyn Fn(usize, &[usize]) -> bool| {
        let base = problem.rate(selected);
        let mut best: Option<(usize, f64)> = None;
        for (pos, &i) in selected.iter().enumerate() {
            if !candidates(i, selected) {
                continue;
            }
            let rest: Vec<usize> = selected.iter().copied().filter(|&j| j != i).collect();
            let loss = base - problem.rate(&rest);
            if best.is_none_or(|(_, l)| loss < l) {
                best = Some((pos, loss));
            }
        }
        if let Some((pos, _)) = best {
            selected.remove(pos);
        }
    };
    while problem.conflicts(&selected) > 0 {
        drop_one(&mut selected, &|i, set| conflicts_with(i, set) > 0);
    }
    while selected.len() > problem.budget {
        drop_one(&mut selected, &|_, _| true);
    }
    while selected.len() < problem.budget {
        let base = problem.rate(&selected);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if selected.contains(&i) || conflicts_with(i, &selected) > 0 {
                continue;
            }
            let mut with = selected.clone();
            with.push(i);
            let gain = problem.rate(&with) - base;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        match best {
            Some((i, _)) => selected.push(i),
            None => {
                return Err(Error::Infeasible(format!(
                    "no pose can be added to {} selected poses without violating d_min",
                    selected.len()
                )))
            }
        }
    }
    selected.sort_unstable();
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::PowerMatrix;
    use crate::placement::brute_force_select;
    use nalgebra::DMatrix;

    fn random_problem_data(seed: u64, m: usize, k: usize) -> (PowerMatrix, DMatrix<f64>) {
        let mut rng = stream_rng(seed, Stream::Scenario, 0);
        let p = PowerMatrix(DMatrix::from_fn(m, k, |_, _| {
            if rng.random_bool(0.4) {
                rng.random_range(0.0..2.0)
            } else {
                0.0
            }
        }));
        let pts: Vec<[f64; 2]> = (0..m)
            .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let d = DMatrix::from_fn(m, m, |i, j| {
            ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt()
        });
        (p, d)
    }

    #[test]
    fn whole_set_is_returned_when_budget_equals_count() {
        let (p, d) = random_problem_data(1, 5, 3);
        let problem = SelectionProblem {
            power: &p,
            distances: &d,
            budget: 5,
            d_min: 0.0,
            snr: 10.0,
        };
        let cfg = PsoConfig {
            swarm_size: 10,
            iterations: 20,
            ..Default::default()
        };
        let r = pso_optimize(&problem, &cfg).unwrap();
        assert_eq!(r.selection.0, vec![1; 5]);
    }

    #[test]
    fn trace_is_monotone_and_result_feasible() {
        for seed in 0..5 {
            let (p, d) = random_problem_data(seed, 20, 6);
            let problem = SelectionProblem {
                power: &p,
                distances: &d,
                budget: 4,
                d_min: 0.15,
                snr: 5.0,
            };
            let cfg = PsoConfig {
                swarm_size: 20,
                iterations: 60,
                seed,
                ..Default::default()
            };
            let r = pso_optimize(&problem, &cfg).unwrap();
            assert_eq!(r.trace.len(), 60);
            assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
            assert!(problem.is_feasible(&r.selection.indices()));
        }
    }

    #[test]
    fn close_to_brute_force_on_small_instances() {
        let mut hits = 0;
        for seed in 0..10 {
            let (p, d) = random_problem_data(seed + 100, 12, 6);
            let problem = SelectionProblem {
                power: &p,
                distances: &d,
                budget: 3,
                d_min: 0.1,
                snr: 5.0,
            };
            let best = brute_force_select(&problem).unwrap();
            let cfg = PsoConfig {
                swarm_size: 30,
                iterations: 100,
                seed,
                ..Default::default()
            };
            let r = pso_optimize(&problem, &cfg).unwrap();
            if r.rate >= 0.95 * problem.rate(&best.indices()) {
                hits += 1;
            }
        }
        assert!(hits >= 9, "hits {hits}");
    }

    #[test]
    fn fitness_properties() {
        let (p, d) = random_problem_data(3, 8, 3);
        let problem = SelectionProblem {
            power: &p,
            distances: &d,
            budget: 2,
            d_min: 0.0,
            snr: 1.0,
        };
        let feasible = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9];
        assert_eq!(fitness(&feasible, &problem, 5.0), problem.rate(&[0, 7]));
        let infeasible = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut prev = f64::INFINITY;
        for tau in [0.1, 1.0, 10.0, 1e6] {
            let f = fitness(&infeasible, &problem, tau);
            assert!(f <= prev);
            prev = f;
        }
        assert!(fitness(&infeasible, &problem, 1e12) < -1e11);
    }

    #[test]
    fn repair_fixes_cardinality_and_conflicts() {
        let (p, mut d) = random_problem_data(4, 10, 4);
        d[(2, 3)] = 0.0;
        d[(3, 2)] = 0.0;
        let problem = SelectionProblem {
            power: &p,
            distances: &d,
            budget: 3,
            d_min: 0.01,
            snr: 2.0,
        };
        let fixed = repair(&problem, vec![2, 3, 5, 6, 7]).unwrap();
        assert!(problem.is_feasible(&fixed));
        let grown = repair(&problem, vec![]).unwrap();
        assert!(problem.is_feasible(&grown));
    }

    #[test]
    fn repair_reports_infeasible_instances() {
        let p = PowerMatrix(DMatrix::from_element(4, 2, 1.0));
        let d = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 0.01 });
        let problem = SelectionProblem {
            power: &p,
            distances: &d,
            budget: 2,
            d_min: 1.0,
            snr: 1.0,
        };
        assert!(matches!(repair(&problem, vec![0, 1]), Err(Error::Infeasible(_))));
        let cfg = PsoConfig {
            swarm_size: 5,
            iterations: 5,
            ..Default::default()
        };
        assert!(matches!(pso_optimize(&problem, &cfg), Err(Error::Infeasible(_))));
    }
}
