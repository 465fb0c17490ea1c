use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use tampkit::bench::{run_bench, write_csv, BenchConfig, BenchRecord, Mode, Summary};
use tampkit::dataset::{self, Sample, SeedSidecar};
use tampkit::fixtures;
use tampkit::nn::{evaluate, load_model, read_model, train_observed, write_model, NfcModel, Predictor, TrainConfig, DEFAULT_POS_WEIGHTS};
use tampkit::planner::{parse_domain, parse_problem, Universe};
use tampkit::render::{render_observation, write_pgm, Target};
use tampkit::tamp::{solve_universe, write_motions, FeasibilityModel, TampOptions};
use tampkit::world::{parse_scene, SampleParams};

use crate::{Bench, Eval, Fixtures, GenData, ModeChoice, Render, Solve, Split, Train};

/// Reference scores of the classifier on held-out data, percent.
const REFERENCE_EVAL: (f64, f64, f64) = (93.6, 3.65, 2.74);

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

/// Splits off the held-out share; `(kept, held_out)`.
fn holdout(samples: Vec<Sample>, split: &Split) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(0.0..1.0).contains(&split.holdout) {
        bail!("--holdout must lie in [0, 1), got {}", split.holdout);
    }
    if split.holdout == 0.0 {
        return Ok((samples, Vec::new()));
    }
    Ok(dataset::split(samples, 1.0 - split.holdout, split.split_seed)?)
}

pub fn gen_data(a: GenData) -> Result<()> {
    let mut params = SampleParams {
        neighbor_count: a.neighbors,
        ..SampleParams::default()
    };
    if let Some(k) = a.max_neighbors {
        params.max_neighbors = k;
    }
    if let Some(p) = a.p_near {
        params.p_near = p;
    }
    if let Some(g) = a.near_gap_max {
        params.near_gap.1 = g;
    }
    let samples = dataset::generate(a.count, a.seed, &params)?;
    dataset::save(&a.out, &samples).with_context(|| format!("writing {}", a.out.display()))?;
    let sidecar = SeedSidecar {
        seed: a.seed,
        count: a.count as u64,
        params,
    };
    write_file(&dataset::sidecar_path(&a.out), sidecar.to_text())?;
    println!("{}", dataset::stats(&samples)?);
    Ok(())
}

pub fn train(a: Train) -> Result<()> {
    let (train, _) = holdout(load_samples(&a.data)?, &a.split)?;
    let pos_weights = match (a.weights, a.auto_weights) {
        (Some(w), _) => w.try_into().map_err(|_| anyhow::anyhow!("--weights needs five values"))?,
        (None, true) => dataset::auto_weights(&dataset::stats(&train)?),
        (None, false) => DEFAULT_POS_WEIGHTS,
    };
    if a.epochs == 0 {
        write_model(&a.out, &NfcModel::init(a.seed))?;
        println!("wrote initial weights to {}", a.out.display());
        return Ok(());
    }
    let cfg = TrainConfig {
        lr: a.lr,
        batch: a.batch,
        pos_weights,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = train_observed(&train, &cfg, &mut |r| {
        println!("epoch {:>3}  loss {:.5}  val_accuracy {:.4}", r.epoch, r.train_loss, r.val_accuracy);
    })?;
    println!("best epoch {}", outcome.best_epoch);
    write_model(&a.out, &outcome.model)?;
    if let Some(h) = &a.history {
        write_file(h, outcome.history_csv())?;
    }
    Ok(())
}

pub fn eval(a: Eval) -> Result<()> {
    let samples = load_samples(&a.data)?;
    let test = if a.split.holdout == 0.0 { samples } else { holdout(samples, &a.split)?.1 };
    let model = read_model(&a.model)?;
    let r = evaluate(&model, &test, a.beta)?;
    println!("{:<18}{}", "samples", r.n_samples);
    println!("{:<18}{:.2}%", "accuracy", 100.0 * r.accuracy);
    println!("{:<18}{:.2}%", "false feasible", 100.0 * r.false_feasible_rate);
    println!("{:<18}{:.2}%", "false infeasible", 100.0 * r.false_infeasible_rate);
    let (acc, ff, fi) = REFERENCE_EVAL;
    println!("reference: accuracy {acc}%, false feasible {ff}%, false infeasible {fi}%");
    if let Some(out) = &a.out {
        write_file(out, r.csv())?;
    }
    Ok(())
}

pub fn solve(a: Solve) -> Result<()> {
    let domain = parse_domain(&read_text(&a.domain)?)?;
    let problem = parse_problem(&read_text(&a.problem)?, &domain)?;
    let scene = parse_scene(&read_text(&a.scene)?)?;
    let predictor = a.nfc.as_deref().map(read_model).transpose()?.map(Predictor::new);
    let u = Universe::ground(&domain, &problem, &scene, a.step)?;
    let opts = TampOptions {
        use_nfc: predictor.is_some(),
        model: predictor.as_ref().map(|p| p as &dyn FeasibilityModel),
        beta: a.beta,
        step: a.step,
        h_max: a.h_max,
        time_budget: Duration::from_secs_f64(a.time_budget),
        seed: a.seed,
        nogood_radius: if a.whole_state { None } else { TampOptions::default().nogood_radius },
        nfc_fallback: a.nfc_fallback,
    };
    let r = solve_universe(&u, &opts)?;
    let mode = if predictor.is_some() { Mode::Nfc } else { Mode::Plain };
    let csv = write_csv(&[BenchRecord::from_result(0, mode, a.step, &r)]);
    match &a.out {
        Some(out) => write_file(out, csv)?,
        None => print!("{csv}"),
    }
    if let (Some(path), Some(plan)) = (&a.plan_out, &r.plan) {
        write_file(path, format!("{}\n", plan.display(&u)))?;
    }
    if let Some(path) = &a.motions_out {
        write_file(path, write_motions(&r.motions))?;
    }
    eprintln!("status {}", r.status.name());
    Ok(())
}

pub fn bench(a: Bench) -> Result<()> {
    let modes = match a.modes {
        ModeChoice::Both => vec![Mode::Plain, Mode::Nfc],
        ModeChoice::Plain => vec![Mode::Plain],
        ModeChoice::Nfc => vec![Mode::Nfc],
    };
    let model = match &a.model {
        Some(p) => read_model(p)?,
        None => load_model(fixtures::NFC_MODEL)?,
    };
    let predictor = Predictor::new(model);
    let cfg = BenchConfig {
        scenes: a.scenes,
        seed: a.seed,
        steps: a.steps,
        modes,
        beta: a.beta,
        nfc_fallback: a.nfc_fallback,
        ..BenchConfig::default()
    };
    let domain = parse_domain(fixtures::PICKPLACE_TOP_DOMAIN)?;
    let problem = parse_problem(fixtures::UNPACK_PROBLEM, &domain)?;
    let runs = run_bench(&cfg, &domain, &problem, Some(&predictor))?;
    let records: Vec<BenchRecord> = runs.into_iter().flat_map(|r| r.records).collect();
    write_file(&a.out, write_csv(&records))?;
    print!("{}", Summary::new(&records));
    Ok(())
}

pub fn render(a: Render) -> Result<()> {
    let scene = parse_scene(&read_text(&a.scene)?)?;
    let obs = render_observation(&scene, Target::Body(&a.target))?;
    let prefix = a.out_prefix.as_os_str().to_string_lossy();
    for ch in 0..2 {
        write_file(Path::new(&format!("{prefix}.ch{ch}.pgm")), write_pgm(&obs, ch))?;
    }
    Ok(())
}

pub fn fixtures(a: Fixtures) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (name, text) in [
        ("unpack.scene", fixtures::UNPACK_SCENE),
        ("pickplace.domain", fixtures::PICKPLACE_DOMAIN),
        ("pickplace_top.domain", fixtures::PICKPLACE_TOP_DOMAIN),
        ("unpack.problem", fixtures::UNPACK_PROBLEM),
    ] {
        write_file(&a.out.join(name), text)?;
    }
    write_file(&a.out.join("nfc.model"), fixtures::NFC_MODEL)?;
    Ok(())
}
