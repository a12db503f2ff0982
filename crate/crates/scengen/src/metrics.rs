//! Evaluation metrics: MMD² two-sample statistics over initial-state and
//! motion attributes, static/dynamic collision rates, and the
//! strip-and-regenerate evaluation protocol with report aggregation.

use crate::config::MetricsConfig;
use crate::generate::ScenarioGenerator;
use crate::geom::{finite_difference_kinematics, obb_overlap, Vec2};
use crate::scenario::{distance_to_road_edge, Scenario};
use crate::util::{derive_rng, streams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("mmd needs non-empty sample sets (got {m} and {n})")]
    EmptySamples { m: usize, n: usize },
    #[error("mmd feature width mismatch: {a} vs {b}")]
    WidthMismatch { a: usize, b: usize },
}

/// Biased (V-statistic) squared maximum mean discrepancy with a Gaussian
/// kernel `k(x, y) = exp(-|x - y|^2 / (2 sigma^2))`.
pub fn mmd2(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<f64, MetricsError> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricsError::EmptySamples { m: x.len(), n: y.len() });
    }
    let d = x[0].len();
    for s in x.iter().chain(y.iter()) {
        if s.len() != d {
            return Err(MetricsError::WidthMismatch { a: d, b: s.len() });
        }
    }
    let kernel = |a: &[f64], b: &[f64]| {
        let mut dist2 = 0.0;
        for (u, v) in a.iter().zip(b) {
            dist2 += (u - v) * (u - v);
        }
        (-dist2 / (2.0 * sigma * sigma)).exp()
    };
    let mean_cross = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        let mut total = 0.0;
        for a in p {
            for b in q {
                total += kernel(a, b);
            }
        }
        total / (p.len() * q.len()) as f64
    };
    let xx = mean_cross(x, x);
    let yy = mean_cross(y, y);
    let xy = mean_cross(x, y);
    Ok((xx + yy) - 2.0 * xy)
}

/// Initial-state attribute families (Table I columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialFamily {
    Position,
    Heading,
    Size,
    Velocity,
}

impl InitialFamily {
    pub const ALL: [InitialFamily; 4] =
        [InitialFamily::Position, InitialFamily::Heading, InitialFamily::Size, InitialFamily::Velocity];

    pub fn label(self) -> &'static str {
        match self {
            InitialFamily::Position => "Position",
            InitialFamily::Heading => "Heading",
            InitialFamily::Size => "Size",
            InitialFamily::Velocity => "Velocity",
        }
    }
}

/// Motion attribute families (Table II columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionFamily {
    Speed,
    Acceleration,
    DistNearest,
    DistRoadEdge,
}

impl MotionFamily {
    pub const ALL: [MotionFamily; 4] = [
        MotionFamily::Speed,
        MotionFamily::Acceleration,
        MotionFamily::DistNearest,
        MotionFamily::DistRoadEdge,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MotionFamily::Speed => "Speed",
            MotionFamily::Acceleration => "Acceleration",
            MotionFamily::DistNearest => "Dist. to Nearest",
            MotionFamily::DistRoadEdge => "Dist. to Road Edge",
        }
    }
}

/// Per-agent samples of one initial-state family.
pub fn initial_samples(scenario: &Scenario, family: InitialFamily) -> Vec<Vec<f64>> {
    scenario
        .agents
        .iter()
        .map(|a| {
            let s = &a.initial;
            match family {
                InitialFamily::Position => vec![s.x, s.y],
                InitialFamily::Heading => vec![s.heading.cos(), s.heading.sin()],
                InitialFamily::Size => vec![s.width, s.length],
                InitialFamily::Velocity => {
                    let v = s.velocity();
                    vec![v.x, v.y]
                }
            }
        })
        .collect()
}

/// Per-agent-per-timestep samples of one motion family. Kinematics use
/// finite differences over the full pose sequence (initial plus future).
pub fn motion_samples(scenario: &Scenario, family: MotionFamily, dt: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    match family {
        MotionFamily::Speed | MotionFamily::Acceleration => {
            for agent in &scenario.agents {
                let positions: Vec<Vec2> =
                    agent.pose_sequence().iter().map(|p| p.position()).collect();
                if let Ok((speeds, accels)) = finite_difference_kinematics(&positions, dt) {
                    let values = if family == MotionFamily::Speed { speeds } else { accels };
                    out.extend(values.into_iter().map(|v| vec![v]));
                }
            }
        }
        MotionFamily::DistNearest => {
            let n = scenario.agents.len();
            if n < 2 {
                return out;
            }
            let t_len = scenario.agents[0].future.len() + 1;
            for i in 0..n {
                let seq_i = scenario.agents[i].pose_sequence();
                for t in 0..t_len {
                    let mut best = f64::INFINITY;
                    for (j, other) in scenario.agents.iter().enumerate() {
                        if i == j {
                            continue;
                        }
                        let seq_j = other.pose_sequence();
                        if t < seq_i.len() && t < seq_j.len() {
                            best = best.min(seq_i[t].position().distance(seq_j[t].position()));
                        }
                    }
                    if best.is_finite() {
                        out.push(vec![best]);
                    }
                }
            }
        }
        MotionFamily::DistRoadEdge => {
            for agent in &scenario.agents {
                for pose in agent.pose_sequence() {
                    if let Ok(d) = distance_to_road_edge(pose.position(), &scenario.context) {
                        out.push(vec![d]);
                    }
                }
            }
        }
    }
    out
}

/// Percent of agents whose t = 0 box overlaps another agent's t = 0 box.
pub fn static_collision_rate(scenario: &Scenario) -> f64 {
    let n = scenario.agents.len();
    if n == 0 {
        return 0.0;
    }
    let mut colliding = vec![false; n];
    for i in 0..n {
        for j in 0..i {
            if obb_overlap(&scenario.agents[i].obb_at(0), &scenario.agents[j].obb_at(0)) {
                colliding[i] = true;
                colliding[j] = true;
            }
        }
    }
    100.0 * colliding.iter().filter(|&&c| c).count() as f64 / n as f64
}

/// Percent of agents whose box overlaps another agent's box at any shared
/// timestep t in 0..=T.
pub fn dynamic_collision_rate(scenario: &Scenario) -> f64 {
    let n = scenario.agents.len();
    if n == 0 {
        return 0.0;
    }
    let mut colliding = vec![false; n];
    for i in 0..n {
        for j in 0..i {
            let steps = scenario.agents[i].future.len().min(scenario.agents[j].future.len());
            for t in 0..=steps {
                if obb_overlap(&scenario.agents[i].obb_at(t), &scenario.agents[j].obb_at(t)) {
                    colliding[i] = true;
                    colliding[j] = true;
                    break;
                }
            }
        }
    }
    100.0 * colliding.iter().filter(|&&c| c).count() as f64 / n as f64
}

/// Per-dimension standardization fit on reference samples.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(samples: &[Vec<f64>]) -> Option<Self> {
        let first = samples.first()?;
        let d = first.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for s in samples {
            for ((v, m), val) in var.iter_mut().zip(&mean).zip(s) {
                *v += (val - m) * (val - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(1e-6)).collect();
        Some(Self { mean, std })
    }

    pub fn identity(width: usize) -> Self {
        Self { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    pub fn apply(&self, samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
        samples
            .iter()
            .map(|s| {
                s.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(v, (m, sd))| (v - m) / sd)
                    .collect()
            })
            .collect()
    }
}

/// One MMD column aggregated over the evaluation set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MmdColumn {
    pub mean: f64,
    pub scenarios: usize,
    pub skipped: usize,
}

impl MmdColumn {
    fn add(&mut self, value: Option<f64>) {
        match value {
            Some(v) => {
                self.mean += v;
                self.scenarios += 1;
            }
            None => self.skipped += 1,
        }
    }

    fn finish(&mut self) {
        if self.scenarios > 0 {
            self.mean /= self.scenarios as f64;
        }
    }
}

/// Per-scenario evaluation record (the machine-readable report rows).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEval {
    pub id: String,
    pub agents: usize,
    pub failed: bool,
    pub scr: Option<f64>,
    pub dcr: Option<f64>,
    pub initial_mmd: [Option<f64>; 4],
    pub motion_mmd: [Option<f64>; 4],
}

/// Aggregated evaluation report (the Table I/II shaped summary).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub scenarios_evaluated: usize,
    pub scenarios_failed: usize,
    pub scr: f64,
    pub dcr: f64,
    pub position: MmdColumn,
    pub heading: MmdColumn,
    pub size: MmdColumn,
    pub velocity: MmdColumn,
    pub speed: MmdColumn,
    pub acceleration: MmdColumn,
    pub dist_nearest: MmdColumn,
    pub dist_road_edge: MmdColumn,
    pub bandwidth: f64,
    pub standardized: bool,
    pub per_scenario: Vec<ScenarioEval>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn initial_columns(&self) -> [(&'static str, &MmdColumn); 4] {
        [
            ("Position", &self.position),
            ("Heading", &self.heading),
            ("Size", &self.size),
            ("Velocity", &self.velocity),
        ]
    }

    pub fn motion_columns(&self) -> [(&'static str, &MmdColumn); 4] {
        [
            ("Speed", &self.speed),
            ("Acceleration", &self.acceleration),
            ("Dist. to Nearest", &self.dist_nearest),
            ("Dist. to Road Edge", &self.dist_road_edge),
        ]
    }

    /// Text tables mirroring the initial-state and motion metric layouts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "Initial state metrics ({} scenarios, {} failed)\n",
            self.scenarios_evaluated, self.scenarios_failed
        ));
        s.push_str("Method               SCR (%)  Position  Heading   Size      Velocity\n");
        s.push_str(&format!(
            "{:<20} {:>7.2}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}\n\n",
            self.method, self.scr, self.position.mean, self.heading.mean, self.size.mean,
            self.velocity.mean
        ));
        s.push_str("Motion metrics\n");
        s.push_str(
            "Method               DCR (%)  Speed     Accel.    Dist. to Nearest  Dist. to Road Edge\n",
        );
        s.push_str(&format!(
            "{:<20} {:>7.2}  {:>8.4}  {:>8.4}  {:>16.4}  {:>18.4}\n\n",
            self.method, self.dcr, self.speed.mean, self.acceleration.mean,
            self.dist_nearest.mean, self.dist_road_edge.mean
        ));
        s.push_str(&format!(
            "kernel bandwidth {} after per-family standardization = {}\n",
            self.bandwidth, self.standardized
        ));
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    }
}

/// Strip-and-regenerate protocol: for every evaluation scenario, remove
/// all agents, regenerate the same number with the generator under test,
/// and compare against the original. Failures (under-filled generations)
/// are excluded from the means and counted.
pub fn evaluate_corpus(
    generator: &dyn ScenarioGenerator,
    eval_set: &[Scenario],
    cfg: &MetricsConfig,
    dt: f64,
    base_seed: u64,
) -> EvalReport {
    // Standardizers come from the reference corpus only, so every method
    // is measured in the same units.
    let fit_initial: Vec<Option<Standardizer>> = InitialFamily::ALL
        .iter()
        .map(|&fam| {
            let all: Vec<Vec<f64>> =
                eval_set.iter().flat_map(|s| initial_samples(s, fam)).collect();
            if cfg.standardize { Standardizer::fit(&all) } else { all.first().map(|f| Standardizer::identity(f.len())) }
        })
        .collect();
    let fit_motion: Vec<Option<Standardizer>> = MotionFamily::ALL
        .iter()
        .map(|&fam| {
            let all: Vec<Vec<f64>> =
                eval_set.iter().flat_map(|s| motion_samples(s, fam, dt)).collect();
            if cfg.standardize { Standardizer::fit(&all) } else { all.first().map(|f| Standardizer::identity(f.len())) }
        })
        .collect();

    let pool = crate::util::make_pool();
    let rows: Vec<ScenarioEval> = pool.install(|| {
        eval_set
            .par_iter()
            .enumerate()
            .map(|(i, reference)| {
                use rand::RngCore;
                let seed = derive_rng(base_seed, streams::EVAL, i as u64).next_u64();
                let n = reference.agents.len();
                let (generated, trace) = generator.generate(reference, n, seed);
                let failed = trace.under_fill.is_some();
                if failed {
                    return ScenarioEval {
                        id: reference.id.clone(),
                        agents: generated.agents.len(),
                        failed,
                        scr: None,
                        dcr: None,
                        initial_mmd: [None, None, None, None],
                        motion_mmd: [None, None, None, None],
                    };
                }
                let mut initial_mmd = [None, None, None, None];
                for (j, &fam) in InitialFamily::ALL.iter().enumerate() {
                    if let Some(st) = &fit_initial[j] {
                        let gx = st.apply(&initial_samples(&generated, fam));
                        let gy = st.apply(&initial_samples(reference, fam));
                        initial_mmd[j] = mmd2(&gx, &gy, cfg.bandwidth).ok();
                    }
                }
                let mut motion_mmd = [None, None, None, None];
                for (j, &fam) in MotionFamily::ALL.iter().enumerate() {
                    if let Some(st) = &fit_motion[j] {
                        let gx = st.apply(&motion_samples(&generated, fam, dt));
                        let gy = st.apply(&motion_samples(reference, fam, dt));
                        motion_mmd[j] = mmd2(&gx, &gy, cfg.bandwidth).ok();
                    }
                }
                ScenarioEval {
                    id: reference.id.clone(),
                    agents: generated.agents.len(),
                    failed,
                    scr: Some(static_collision_rate(&generated)),
                    dcr: Some(dynamic_collision_rate(&generated)),
                    initial_mmd,
                    motion_mmd,
                }
            })
            .collect()
    });

    let mut report = EvalReport {
        method: generator.name().to_string(),
        scenarios_evaluated: 0,
        scenarios_failed: 0,
        scr: 0.0,
        dcr: 0.0,
        position: MmdColumn::default(),
        heading: MmdColumn::default(),
        size: MmdColumn::default(),
        velocity: MmdColumn::default(),
        speed: MmdColumn::default(),
        acceleration: MmdColumn::default(),
        dist_nearest: MmdColumn::default(),
        dist_road_edge: MmdColumn::default(),
        bandwidth: cfg.bandwidth,
        standardized: cfg.standardize,
        per_scenario: Vec::new(),
        notes: vec![
            "absolute MMD values depend on the bandwidth and standardization settings recorded here"
                .to_string(),
        ],
    };
    let mut scr_count = 0usize;
    for row in &rows {
        if row.failed {
            report.scenarios_failed += 1;
        } else {
            report.scenarios_evaluated += 1;
            if let (Some(scr), Some(dcr)) = (row.scr, row.dcr) {
                report.scr += scr;
                report.dcr += dcr;
                scr_count += 1;
            }
            report.position.add(row.initial_mmd[0]);
            report.heading.add(row.initial_mmd[1]);
            report.size.add(row.initial_mmd[2]);
            report.velocity.add(row.initial_mmd[3]);
            report.speed.add(row.motion_mmd[0]);
            report.acceleration.add(row.motion_mmd[1]);
            report.dist_nearest.add(row.motion_mmd[2]);
            report.dist_road_edge.add(row.motion_mmd[3]);
        }
    }
    if scr_count > 0 {
        report.scr /= scr_count as f64;
        report.dcr /= scr_count as f64;
    }
    for col in [
        &mut report.position,
        &mut report.heading,
        &mut report.size,
        &mut report.velocity,
        &mut report.speed,
        &mut report.acceleration,
        &mut report.dist_nearest,
        &mut report.dist_road_edge,
    ] {
        col.finish();
    }
    report.per_scenario = rows;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::corpus::generate_corpus;
    use crate::generate::{RandomBaseline, ReplayOracle};
    use crate::geom::Pose;
    use crate::scenario::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mmd_identical_sets_exactly_zero() {
        let x = vec![vec![1.0, 2.0], vec![-0.5, 3.0], vec![0.0, 0.0]];
        assert_eq!(mmd2(&x, &x, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn mmd_single_sample_closed_form() {
        let x = vec![vec![0.0, 0.0]];
        let y = vec![vec![3.0, 4.0]];
        for sigma in [0.5f64, 1.0, 2.0] {
            let expect = 2.0 - 2.0 * (-25.0 / (2.0 * sigma * sigma)).exp();
            let got = mmd2(&x, &y, sigma).unwrap();
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mmd_matches_bruteforce_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = rng.gen_range(1..12);
            let n = rng.gen_range(1..12);
            let x: Vec<Vec<f64>> =
                (0..m).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let y: Vec<Vec<f64>> =
                (0..n).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let sigma = 1.3;
            // Brute-force double loops, written independently.
            let k = |a: &[f64], b: &[f64]| {
                let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            };
            let mut xx = 0.0;
            for a in &x {
                for b in &x {
                    xx += k(a, b);
                }
            }
            let mut yy = 0.0;
            for a in &y {
                for b in &y {
                    yy += k(a, b);
                }
            }
            let mut xy = 0.0;
            for a in &x {
                for b in &y {
                    xy += k(a, b);
                }
            }
            let expect = xx / (m * m) as f64 + yy / (n * n) as f64 - 2.0 * xy / (m * n) as f64;
            let got = mmd2(&x, &y, sigma).unwrap();
            assert!((got - expect).abs() < 1e-12);
            let swapped = mmd2(&y, &x, sigma).unwrap();
            assert!((got - swapped).abs() < 1e-12);
            assert!(got > -1e-12);
        }
    }

    #[test]
    fn mmd_rejects_empty() {
        assert_eq!(
            mmd2(&[], &[vec![1.0]], 1.0),
            Err(MetricsError::EmptySamples { m: 0, n: 1 })
        );
    }

    fn boxed_agent(x: f64, y: f64, heading: f64, poses: Vec<Pose>) -> Agent {
        Agent {
            initial: InitialState {
                x,
                y,
                width: 2.0,
                length: 4.0,
                heading,
                speed: 1.0,
                class: AgentClass::Vehicle,
            },
            future: Trajectory { poses },
        }
    }

    fn empty_context() -> SceneContext {
        SceneContext {
            polylines: vec![RoadPolyline {
                kind: RoadKind::RoadBoundary,
                points: vec![Vec2::new(-50.0, -50.0), Vec2::new(50.0, -50.0)],
            }],
            traffic_lights: vec![],
            fov_extent: 120.0,
        }
    }

    #[test]
    fn scr_cases() {
        let ctx = empty_context();
        let stacked = Scenario {
            id: "s".into(),
            context: ctx.clone(),
            agents: vec![
                boxed_agent(0.0, 0.0, 0.0, vec![]),
                boxed_agent(0.0, 0.0, 0.3, vec![]),
            ],
        };
        assert_eq!(static_collision_rate(&stacked), 100.0);

        let apart = Scenario {
            id: "s".into(),
            context: ctx.clone(),
            agents: vec![
                boxed_agent(0.0, 0.0, 0.0, vec![]),
                boxed_agent(20.0, 0.0, 0.0, vec![]),
                boxed_agent(-20.0, 0.0, 0.0, vec![]),
            ],
        };
        assert_eq!(static_collision_rate(&apart), 0.0);

        // Exactly two of three overlap: 66.67 percent.
        let two_of_three = Scenario {
            id: "s".into(),
            context: ctx,
            agents: vec![
                boxed_agent(0.0, 0.0, 0.0, vec![]),
                boxed_agent(1.0, 0.0, 0.0, vec![]),
                boxed_agent(30.0, 0.0, 0.0, vec![]),
            ],
        };
        let rate = static_collision_rate(&two_of_three);
        assert!((rate - 200.0 / 3.0).abs() < 1e-9, "rate {rate}");
    }

    #[test]
    fn dcr_crossing_at_different_times_is_zero() {
        let ctx = empty_context();
        // Both agents pass through the origin, 10 steps apart in time.
        let a_poses: Vec<Pose> = (1..=20).map(|t| Pose::new(-10.0 + t as f64, 0.0, 0.0)).collect();
        let b_poses: Vec<Pose> = (1..=20)
            .map(|t| Pose::new(0.0, 10.0 - t as f64, -std::f64::consts::FRAC_PI_2))
            .collect();
        let a = boxed_agent(-10.0, 0.0, 0.0, a_poses);
        let b = boxed_agent(0.0, 10.0, -std::f64::consts::FRAC_PI_2, b_poses);
        // a is at origin at t = 10; b reaches origin at t = 10 too: collide.
        let colliding =
            Scenario { id: "s".into(), context: ctx.clone(), agents: vec![a.clone(), b.clone()] };
        assert_eq!(dynamic_collision_rate(&colliding), 100.0);

        // Delay b by replacing its trajectory so it holds at (0, 10) until
        // t = 15 and then moves; it crosses the origin far after a left.
        let mut delayed = Vec::new();
        for t in 1..=20 {
            if t <= 15 {
                delayed.push(Pose::new(0.0, 10.0, -std::f64::consts::FRAC_PI_2));
            } else {
                delayed.push(Pose::new(0.0, 10.0 - (t - 15) as f64, -std::f64::consts::FRAC_PI_2));
            }
        }
        let b_late = boxed_agent(0.0, 10.0, -std::f64::consts::FRAC_PI_2, delayed);
        let safe = Scenario { id: "s".into(), context: ctx, agents: vec![a, b_late] };
        assert_eq!(dynamic_collision_rate(&safe), 0.0);
    }

    #[test]
    fn stationary_disjoint_agents_have_zero_dcr() {
        let ctx = empty_context();
        let a = boxed_agent(0.0, 0.0, 0.0, vec![Pose::new(0.0, 0.0, 0.0); 10]);
        let b = boxed_agent(15.0, 0.0, 0.0, vec![Pose::new(15.0, 0.0, 0.0); 10]);
        let s = Scenario { id: "s".into(), context: ctx, agents: vec![a, b] };
        assert_eq!(dynamic_collision_rate(&s), 0.0);
        assert_eq!(static_collision_rate(&s), 0.0);
    }

    #[test]
    fn heading_mismatch_shows_in_heading_not_position() {
        let ctx = empty_context();
        let east: Vec<Agent> =
            (0..6).map(|i| boxed_agent(i as f64 * 10.0 - 25.0, 0.0, 0.0, vec![])).collect();
        let west: Vec<Agent> = (0..6)
            .map(|i| boxed_agent(i as f64 * 10.0 - 25.0, 0.0, std::f64::consts::PI, vec![]))
            .collect();
        let reference = Scenario { id: "r".into(), context: ctx.clone(), agents: east };
        let generated = Scenario { id: "g".into(), context: ctx, agents: west };
        let pos = mmd2(
            &initial_samples(&generated, InitialFamily::Position),
            &initial_samples(&reference, InitialFamily::Position),
            1.0,
        )
        .unwrap();
        let heading = mmd2(
            &initial_samples(&generated, InitialFamily::Heading),
            &initial_samples(&reference, InitialFamily::Heading),
            1.0,
        )
        .unwrap();
        assert!(pos.abs() < 1e-12);
        assert!(heading > 0.1, "heading mmd {heading}");
    }

    #[test]
    fn replay_oracle_reports_zero_everywhere() {
        let mut cfg = RunConfig::desk(3);
        cfg.corpus.n_scenarios = 6;
        let eval = generate_corpus(&cfg.corpus, 77).unwrap();
        let report = evaluate_corpus(&ReplayOracle, &eval, &cfg.metrics, cfg.corpus.dt, 5);
        assert_eq!(report.scenarios_failed, 0);
        assert_eq!(report.scr, 0.0);
        assert_eq!(report.dcr, 0.0);
        for (_, col) in report.initial_columns() {
            assert_eq!(col.mean, 0.0);
        }
        for (_, col) in report.motion_columns() {
            assert!(col.mean.abs() < 1e-12);
        }
    }

    #[test]
    fn random_baseline_strictly_worse_than_replay() {
        let mut cfg = RunConfig::desk(4);
        cfg.corpus.n_scenarios = 6;
        let eval = generate_corpus(&cfg.corpus, 78).unwrap();
        let oracle = evaluate_corpus(&ReplayOracle, &eval, &cfg.metrics, cfg.corpus.dt, 5);
        let baseline = RandomBaseline { corpus: cfg.corpus.clone() };
        let random = evaluate_corpus(&baseline, &eval, &cfg.metrics, cfg.corpus.dt, 5);
        for ((_, a), (_, b)) in random.initial_columns().iter().zip(oracle.initial_columns().iter())
        {
            assert!(a.mean > b.mean, "random {} vs oracle {}", a.mean, b.mean);
        }
        for ((_, a), (_, b)) in random.motion_columns().iter().zip(oracle.motion_columns().iter()) {
            assert!(a.mean > b.mean, "random {} vs oracle {}", a.mean, b.mean);
        }
    }

    #[test]
    fn report_table_has_fixed_columns() {
        let mut cfg = RunConfig::desk(5);
        cfg.corpus.n_scenarios = 2;
        let eval = generate_corpus(&cfg.corpus, 79).unwrap();
        let report = evaluate_corpus(&ReplayOracle, &eval, &cfg.metrics, cfg.corpus.dt, 5);
        let text = report.to_text();
        for col in ["SCR (%)", "Position", "Heading", "Size", "Velocity"] {
            assert!(text.contains(col), "missing column {col}");
        }
        for col in ["DCR (%)", "Speed", "Accel.", "Dist. to Nearest", "Dist. to Road Edge"] {
            assert!(text.contains(col), "missing column {col}");
        }
        // Machine-readable rows serialize.
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("per_scenario"));
    }
}
