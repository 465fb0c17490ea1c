//! The Unpack benchmark: the canonical three-box arrangement on randomly
//! posed region pairs, solved with and without the classifier gate.

use std::fmt;
use std::time::Duration;

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::thread_pool;
use crate::nn::Predictor;
use crate::planner::{Domain, GroundError, Problem, Universe};
use crate::tamp::{solve_universe, FeasibilityModel, Status, TampError, TampOptions, TampResult};
use crate::world::{stream_rng, BoxBody, GripperModel, ReachModel, Region, Scene, Vec3};

/// Version of the CSV layout below; bumped whenever the columns change.
pub const CSV_VERSION: u32 = 1;
pub const CSV_HEADER: &str =
    "scene_id,mode,step,solved,final_horizon,n_task_plans,n_nfc_rejections,n_mp_calls,t_task_ms,t_nfc_ms,t_mp_ms,t_total_ms";

/// Redraws allowed per scene before giving up.
pub const MAX_REDRAWS: usize = 200;

const GREEN_HALF: Vec3 = Vec3 { x: 0.02, y: 0.02, z: 0.04 };
const FLANKER_HALF: Vec3 = Vec3 { x: 0.02, y: 0.02, z: 0.07 };
/// Face gap between the target and each flanker.
const FLANK_GAP: f64 = 0.005;
const REGION_HALF: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Plain,
    Nfc,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Nfc => "nfc",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("nfc mode needs a trained model")]
    ModelMissing,
    #[error("no solvable scene for index {index} after {MAX_REDRAWS} draws")]
    NoSolvableScene { index: usize },
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Tamp(#[from] TampError),
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub scenes: usize,
    pub seed: u64,
    pub steps: Vec<f64>,
    pub modes: Vec<Mode>,
    pub beta: f64,
    pub h_max: usize,
    pub time_budget: Duration,
    pub nfc_fallback: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scenes: 100,
            seed: 0,
            steps: vec![0.06],
            modes: vec![Mode::Plain, Mode::Nfc],
            beta: 0.5,
            h_max: 12,
            time_budget: Duration::from_secs(120),
            nfc_fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub scene_id: usize,
    pub mode: Mode,
    pub step: f64,
    pub solved: bool,
    pub final_horizon: usize,
    pub n_task_plans: usize,
    pub n_nfc_rejections: usize,
    pub n_mp_calls: usize,
    pub t_task_ms: f64,
    pub t_nfc_ms: f64,
    pub t_mp_ms: f64,
    pub t_total_ms: f64,
}

impl BenchRecord {
    pub fn from_result(scene_id: usize, mode: Mode, step: f64, r: &TampResult) -> Self {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        let m = &r.metrics;
        BenchRecord {
            scene_id,
            mode,
            step,
            solved: r.status == Status::Solved,
            final_horizon: m.final_horizon,
            n_task_plans: m.n_task_plans,
            n_nfc_rejections: m.n_nfc_rejections,
            n_mp_calls: m.n_mp_calls,
            t_task_ms: ms(m.t_task),
            t_nfc_ms: ms(m.t_nfc),
            t_mp_ms: ms(m.t_mp),
            t_total_ms: ms(m.t_total),
        }
    }

    /// The columns that must repeat exactly across runs.
    pub fn counts(&self) -> (usize, Mode, u64, bool, usize, usize, usize, usize) {
        (
            self.scene_id,
            self.mode,
            self.step.to_bits(),
            self.solved,
            self.final_horizon,
            self.n_task_plans,
            self.n_nfc_rejections,
            self.n_mp_calls,
        )
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
            self.scene_id,
            self.mode,
            self.step,
            self.solved,
            self.final_horizon,
            self.n_task_plans,
            self.n_nfc_rejections,
            self.n_mp_calls,
            self.t_task_ms,
            self.t_nfc_ms,
            self.t_mp_ms,
            self.t_total_ms
        )
    }
}

/// Version comment, header, then one row per record.
pub fn write_csv(records: &[BenchRecord]) -> String {
    let mut out = format!("# tampkit bench csv v{CSV_VERSION}\n{CSV_HEADER}\n");
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// The canonical arrangement: target at the center of `r1`, one taller
/// box on each side along x.
pub fn unpack_scene(r1: (f64, f64, f64), r2: (f64, f64, f64)) -> Scene {
    let region = |id: &str, (x, y, z): (f64, f64, f64)| Region {
        id: id.into(),
        center: Vec3::new(x, y, z),
        half_x: REGION_HALF,
        half_y: REGION_HALF,
    };
    let body = |id: &str, dx: f64, half: Vec3| BoxBody {
        id: id.into(),
        half_extents: half,
        center: Vec3::new(r1.0 + dx, r1.1, r1.2 + half.z),
        region_id: "r1".into(),
    };
    let offset = GREEN_HALF.x + FLANK_GAP + FLANKER_HALF.x;
    Scene {
        regions: vec![region("r1", r1), region("r2", r2)],
        bodies: vec![
            body("green", 0.0, GREEN_HALF),
            body("left", -offset, FLANKER_HALF),
            body("right", offset, FLANKER_HALF),
        ],
        reach: ReachModel::default(),
        gripper: GripperModel::default(),
    }
}

/// Draws region poses in front of the robot until the two tables do not
/// overlap.
pub fn random_unpack_scene(rng: &mut impl Rng) -> Scene {
    let pose = |rng: &mut dyn rand::RngCore| {
        let angle = rng.gen_range(-100f64..100.0).to_radians();
        let dist = rng.gen_range(0.4..0.7);
        (dist * angle.cos(), dist * angle.sin(), rng.gen_range(0.05..0.35))
    };
    loop {
        let (a, b) = (pose(rng), pose(rng));
        let apart = (a.0 - b.0).abs() >= 2.0 * REGION_HALF || (a.1 - b.1).abs() >= 2.0 * REGION_HALF;
        if apart {
            return unpack_scene(a, b);
        }
    }
}

/// Everything one benchmark scene produced.
#[derive(Debug, Clone)]
pub struct SceneRun {
    pub scene: Scene,
    /// Scenes drawn and rejected before this one.
    pub redraws: usize,
    pub records: Vec<BenchRecord>,
}

fn options<'m>(cfg: &BenchConfig, step: f64, model: Option<&'m dyn FeasibilityModel>, seed: u64) -> TampOptions<'m> {
    TampOptions {
        use_nfc: model.is_some(),
        model,
        beta: cfg.beta,
        step,
        h_max: cfg.h_max,
        time_budget: cfg.time_budget,
        seed,
        nfc_fallback: cfg.nfc_fallback,
        ..TampOptions::default()
    }
}

/// Draws scenes for `index` until plain mode solves one at every step, then
/// runs the requested modes on it. The plain runs double as its records.
fn run_scene(cfg: &BenchConfig, domain: &Domain, problem: &Problem, model: Option<&Predictor>, index: usize) -> Result<SceneRun, BenchError> {
    let mut rng = stream_rng(cfg.seed, index as u64);
    'draw: for redraws in 0..MAX_REDRAWS {
        let scene = random_unpack_scene(&mut rng);
        let run_seed = rng.gen::<u64>();
        let mut records = Vec::new();
        for &step in &cfg.steps {
            let u = Universe::ground(domain, problem, &scene, step)?;
            let plain = solve_universe(&u, &options(cfg, step, None, run_seed))?;
            if plain.status != Status::Solved {
                continue 'draw;
            }
            for &mode in &cfg.modes {
                let r = match mode {
                    Mode::Plain => plain.clone(),
                    Mode::Nfc => {
                        let m = model.ok_or(BenchError::ModelMissing)?;
                        solve_universe(&u, &options(cfg, step, Some(m), run_seed))?
                    }
                };
                records.push(BenchRecord::from_result(index, mode, step, &r));
            }
        }
        return Ok(SceneRun { scene, redraws, records });
    }
    Err(BenchError::NoSolvableScene { index })
}

/// Runs the benchmark on a pool sized by `TAMPKIT_THREADS`; results come
/// back in scene order.
pub fn run_bench(cfg: &BenchConfig, domain: &Domain, problem: &Problem, model: Option<&Predictor>) -> Result<Vec<SceneRun>, BenchError> {
    if cfg.steps.is_empty() || cfg.modes.is_empty() {
        return Err(BenchError::Config("need at least one step and one mode".into()));
    }
    if cfg.steps.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(BenchError::Config("steps must be positive".into()));
    }
    if cfg.modes.contains(&Mode::Nfc) && model.is_none() {
        return Err(BenchError::ModelMissing);
    }
    thread_pool().install(|| {
        (0..cfg.scenes)
            .into_par_iter()
            .map(|i| run_scene(cfg, domain, problem, model, i))
            .collect()
    })
}

/// Aggregates of one mode at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub step: f64,
    pub scenes: usize,
    pub unsolved: usize,
    pub mean_mp_calls: f64,
    pub total_t_mp_ms: f64,
    pub mean_t_total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<ModeSummary>,
}

impl Summary {
    pub fn new(records: &[BenchRecord]) -> Self {
        let mut keys: Vec<(u64, Mode)> = records.iter().map(|r| (r.step.to_bits(), r.mode)).collect();
        keys.sort_by(|a, b| f64::from_bits(b.0).total_cmp(&f64::from_bits(a.0)).then(a.1.cmp(&b.1)));
        keys.dedup();
        let rows = keys
            .into_iter()
            .map(|(step, mode)| {
                let rs: Vec<&BenchRecord> = records.iter().filter(|r| r.step.to_bits() == step && r.mode == mode).collect();
                let n = rs.len() as f64;
                ModeSummary {
                    mode,
                    step: f64::from_bits(step),
                    scenes: rs.len(),
                    unsolved: rs.iter().filter(|r| !r.solved).count(),
                    mean_mp_calls: rs.iter().map(|r| r.n_mp_calls as f64).sum::<f64>() / n,
                    total_t_mp_ms: rs.iter().map(|r| r.t_mp_ms).sum(),
                    mean_t_total_ms: rs.iter().map(|r| r.t_total_ms).sum::<f64>() / n,
                }
            })
            .collect();
        Summary { rows }
    }

    pub fn get(&self, mode: Mode, step: f64) -> Option<&ModeSummary> {
        self.rows.iter().find(|r| r.mode == mode && r.step == step)
    }

    /// Share of plain-mode motion planning time the gate saved at `step`.
    pub fn motion_time_saved(&self, step: f64) -> Option<f64> {
        let (p, n) = (self.get(Mode::Plain, step)?, self.get(Mode::Nfc, step)?);
        (p.total_t_mp_ms > 0.0).then(|| 1.0 - n.total_t_mp_ms / p.total_t_mp_ms)
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "step  mode   scenes  unsolved  mean_mp_calls  total_t_mp_ms  mean_t_total_ms")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<5} {:<6} {:>6}  {:>7.1}%  {:>13.2}  {:>13.1}  {:>15.1}",
                r.step,
                r.mode.name(),
                r.scenes,
                100.0 * r.unsolved as f64 / r.scenes.max(1) as f64,
                r.mean_mp_calls,
                r.total_t_mp_ms,
                r.mean_t_total_ms
            )?;
        }
        let mut steps: Vec<f64> = self.rows.iter().map(|r| r.step).collect();
        steps.dedup();
        for s in steps {
            if let Some(saved) = self.motion_time_saved(s) {
                writeln!(f, "step {s}: motion planning time saved {:.1}%", 100.0 * saved)?;
            }
        }
        writeln!(f, "reference: mean motion planning problems 2 (nfc) vs 26 (plain); motion time saved 63.5%; nfc scenes unsolved 8%")
    }
}
