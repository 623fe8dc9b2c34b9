use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use gslab_core::conjecture::{check_value_monotone_x, check_vx_sign, classify_model, gs_harness};
use gslab_core::model::resolve_model;
use gslab_core::sde::{fmt, simulate_hat, simulate_qd, simulate_st, SimConfig};
use gslab_core::solver::{
    build_grid, check_structure, extract_boundaries, solve, solve_1d_constant_rho, solve_qd, ValueField,
};
use gslab_core::trap::{detect_trap, hormander_scan, perturbation_check};
use gslab_core::{DiffusionModel, Mode};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::compare::compare_runs;
use crate::config::{Pipeline, RunConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

/// Entry point of a run directory. Deterministic for a fixed config; wall
/// clock timings live in `timings.json` next to it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Pipeline,
    pub config: RunConfig,
    pub artifacts: Vec<Artifact>,
    pub verdicts: serde_json::Map<String, Value>,
    pub pass: bool,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<StageFailure>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<(PathBuf, RunManifest)> {
        let file = if path.is_dir() {
            path.join("manifest.json")
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
        let m = serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", file.display()))?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((dir, m))
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == name)
    }

    /// Every listed file exists and hashes to its recorded digest.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let bytes = std::fs::read(dir.join(&a.path)).with_context(|| format!("missing artifact {}", a.path))?;
            if hex::encode(Sha256::digest(&bytes)) != a.sha256 {
                return Err(anyhow!("artifact {} does not match its hash", a.path));
            }
        }
        Ok(())
    }
}

struct Run {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    verdicts: serde_json::Map<String, Value>,
    pass: bool,
    timings: serde_json::Map<String, Value>,
}

impl Run {
    fn emit(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        std::fs::write(self.dir.join(name), &bytes).with_context(|| format!("writing {name}"))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> gslab_core::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.emit(name, buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(v)?;
        buf.push(b'\n');
        self.emit(name, buf)
    }

    fn verdict(&mut self, key: &str, value: Value, pass: bool) {
        self.verdicts.insert(key.to_string(), value);
        self.pass &= pass;
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Run) -> Result<T>) -> std::result::Result<T, StageFailure> {
        let t = Instant::now();
        let r = f(self);
        self.timings.insert(name.to_string(), json!(t.elapsed().as_secs_f64()));
        r.map_err(|e| StageFailure {
            stage: name.to_string(),
            message: format!("{e:#}"),
        })
    }
}

fn default_dir(cmd: Pipeline) -> PathBuf {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from("runs").join(format!("{}-{secs}", cmd.as_str()))
}

/// Executes the selected pipeline, writes artifacts and `manifest.json`.
/// Returns the manifest and the run directory; a failed stage leaves the
/// artifacts written so far and a manifest marked incomplete.
pub fn run(cfg: &RunConfig) -> Result<(RunManifest, PathBuf)> {
    let dir = cfg.out.clone().unwrap_or_else(|| default_dir(cfg.command));
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut r = Run {
        dir: dir.clone(),
        artifacts: Vec::new(),
        verdicts: serde_json::Map::new(),
        pass: true,
        timings: serde_json::Map::new(),
    };
    let outcome = pipeline(cfg, &mut r);
    let manifest = RunManifest {
        tool: "gslab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cfg.command,
        config: cfg.clone(),
        artifacts: r.artifacts.clone(),
        verdicts: r.verdicts.clone(),
        pass: r.pass && outcome.is_ok(),
        complete: outcome.is_ok(),
        failure: outcome.err(),
    };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    std::fs::write(dir.join("timings.json"), serde_json::to_vec_pretty(&r.timings)?)?;
    Ok((manifest, dir))
}

fn pipeline(cfg: &RunConfig, r: &mut Run) -> std::result::Result<(), StageFailure> {
    if cfg.command == Pipeline::Compare {
        return r.stage("compare", |r| {
            let rep = compare_runs(&cfg.runs[0], &cfg.runs[1])?;
            r.json("compare.json", &rep)?;
            r.verdict("compare", serde_json::to_value(&rep)?, true);
            Ok(())
        });
    }
    let name = cfg.model.as_deref().unwrap_or_default();
    let model = r.stage("model", |_| Ok(resolve_model(name, cfg.catalog.as_deref())?))?;
    match cfg.command {
        Pipeline::Simulate => r.stage("simulate", |r| simulate(cfg, &model, r)),
        Pipeline::SolveSt | Pipeline::SolveStTc | Pipeline::SolveQd | Pipeline::Boundaries => {
            solve_pipeline(cfg, &model, r)
        }
        Pipeline::VerifyGs => r.stage("verify-gs", |r| verify(cfg, &model, r)),
        Pipeline::TrapScan => r.stage("trap-scan", |r| trap_scan(cfg, &model, r)),
        Pipeline::Hormander => r.stage("hormander", |r| hormander(cfg, &model, r)),
        Pipeline::Oracle1d => r.stage("oracle-1d", |r| oracle(cfg, &model, r)),
        Pipeline::Compare => unreachable!(),
    }
}

fn simulate(cfg: &RunConfig, model: &DiffusionModel, r: &mut Run) -> Result<()> {
    let s = &cfg.sim;
    let sim = SimConfig::new(s.horizon, s.dt, cfg.seed).with_extras();
    let mode = cfg.mode_or(Mode::Testing);
    let mut min_phi = f64::INFINITY;
    let mut terminal = Vec::new();
    for i in 0..s.n_paths {
        let p = match mode {
            Mode::Testing => simulate_st(model, s.phi0, s.x0, &sim, i)?,
            Mode::Detection => simulate_qd(model, s.phi0, s.x0, &sim, i, cfg.lambda_dyn.unwrap_or(model.lambda()))?,
            Mode::TestingTimeChanged => simulate_hat(model, s.phi0, s.x0, &sim, i)?,
        };
        min_phi = p.phi.iter().fold(min_phi, |m, v| m.min(*v));
        terminal.push(p.last_phi());
        r.csv(&format!("path_{i}.csv"), |w| p.write_csv(w))?;
    }
    r.json("terminal.json", &json!({ "mode": mode, "phi_terminal": terminal }))?;
    r.verdict("phi_nonnegative", json!({ "min_phi": min_phi }), min_phi >= 0.0);
    Ok(())
}

fn solve_pipeline(cfg: &RunConfig, model: &DiffusionModel, r: &mut Run) -> std::result::Result<(), StageFailure> {
    let mode = cfg.mode_or(Mode::Testing);
    let field = r.stage("solve", |_| {
        let grid = build_grid(&cfg.grid, model, mode)?;
        Ok(match (mode, cfg.lambda_dyn, cfg.lambda_cost) {
            (Mode::Detection, d, c) if d.is_some() || c.is_some() => solve_qd(
                &grid,
                model,
                d.unwrap_or(model.lambda()),
                c.unwrap_or(model.lambda()),
                &cfg.solve,
            )?,
            _ => solve(&grid, model, mode, &cfg.solve)?,
        })
    })?;
    let b = r.stage("boundaries", |_| Ok(extract_boundaries(&field)?))?;
    r.stage("write", |r| {
        if cfg.command != Pipeline::Boundaries {
            r.csv("value.csv", |w| field.write_csv(w))?;
            r.json("field.json", &field.manifest())?;
        }
        r.csv("boundaries.csv", |w| b.write_csv(w))?;
        let s = check_structure(&field, &b);
        r.json("structure.json", &s)?;
        r.verdict("structure", serde_json::to_value(&s)?, s.pass);
        Ok(())
    })
}

fn write_field(r: &mut Run, field: &ValueField) -> Result<()> {
    r.csv("value.csv", |w| field.write_csv(w))?;
    r.json("field.json", &field.manifest())
}

fn verify(cfg: &RunConfig, model: &DiffusionModel, r: &mut Run) -> Result<()> {
    let mode = cfg.mode_or(Mode::Detection);
    let (rep, field, b) = gs_harness(model, mode, &cfg.grid, &cfg.solve, cfg.budget_cells)?;
    write_field(r, &field)?;
    r.csv("boundaries.csv", |w| b.write_csv(w))?;
    r.json("gs_report.json", &rep)?;
    r.verdict(
        "gs",
        serde_json::to_value(&rep.verdict)?,
        rep.verdict.pass != Some(false),
    );
    let class = classify_model(model);
    let mono = check_value_monotone_x(&field, &class);
    r.json("value_monotone.json", &mono)?;
    r.verdict(
        "value_monotone_x",
        serde_json::to_value(&mono)?,
        mono.pass != Some(false),
    );
    if mode == Mode::Detection {
        let vx = check_vx_sign(model, &field, &class);
        r.json("vx_sign.json", &vx)?;
        r.verdict("vx_sign", serde_json::to_value(&vx)?, vx.pass != Some(false));
    }
    Ok(())
}

fn trap_scan(cfg: &RunConfig, model: &DiffusionModel, r: &mut Run) -> Result<()> {
    let mut rep = detect_trap(model)?;
    rep.perturbation = perturbation_check(model, &cfg.eps_list)?;
    r.json("trap_report.json", &rep)?;
    r.csv("residual.csv", |w| rep.residual_profile.write_csv(w))?;
    if rep.has_trap {
        r.csv("gamma.csv", |w| rep.write_curve_csv(w))?;
    }
    let destroyed = !rep.has_trap || rep.perturbation.iter().all(|s| !s.has_trap);
    r.verdict(
        "trap",
        json!({ "has_trap": rep.has_trap, "kappa": rep.kappa, "residual_sup": rep.residual_sup }),
        true,
    );
    r.verdict(
        "perturbation",
        json!(rep
            .perturbation
            .iter()
            .map(|s| json!({ "eps": s.eps, "has_trap": s.has_trap, "min_residual_sup": s.min_residual_sup }))
            .collect::<Vec<_>>()),
        destroyed,
    );
    Ok(())
}

fn hormander(cfg: &RunConfig, model: &DiffusionModel, r: &mut Run) -> Result<()> {
    let s = &cfg.scan;
    let map = hormander_scan(model, s.u_range, s.x_range, s.n_u, s.n_x, s.n_max)?;
    r.json("hormander.json", &map)?;
    r.csv("hormander.csv", |w| map.write_csv(w))?;
    let fails = map.fail_nodes();
    let trap = detect_trap(model)?;
    let (consistent, target) = match trap.kappa {
        Some(k) => {
            let u_star = -k.ln();
            let hu = map.u[1] - map.u[0];
            let near = fails.iter().all(|(u, _)| (u - u_star).abs() <= hu * (1.0 + 1e-9));
            let covers = map
                .x
                .iter()
                .all(|x| fails.iter().any(|(u, xf)| xf == x && (u - u_star).abs() <= hu));
            (near && covers, Some(u_star))
        }
        None => (true, None),
    };
    r.verdict(
        "hormander",
        json!({ "fail_nodes": fails.len(), "trap_u": target, "consistent": consistent }),
        consistent,
    );
    Ok(())
}

fn oracle(cfg: &RunConfig, model: &DiffusionModel, r: &mut Run) -> Result<()> {
    let mode = cfg.mode_or(Mode::Testing);
    let o = solve_1d_constant_rho(model, mode, (cfg.grid.phi_min, cfg.grid.phi_max), cfg.oracle_nodes)?;
    r.csv("oracle_1d.csv", |w| {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wr.write_record(["phi", "value"])?;
        for (y, v) in o.y.iter().zip(&o.values) {
            wr.write_record([fmt(y.exp()), fmt(*v)])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    let summary = json!({ "mode": o.mode, "boundaries": o.boundaries, "tol_1d": o.tol_1d, "nodes": o.y.len() });
    r.json("oracle_1d.json", &summary)?;
    r.verdict("oracle_1d", summary, true);
    Ok(())
}
