//! Command implementations. Each returns a process exit code and writes
//! human output to `out` and diagnostics to `err`.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::dkf::{run_dkf, DkfLog, DkfParams, STATE_DIM};
use crate::numerics::tol;
use crate::sim::{
    certify_scenario, dkf_floats_per_step, observer_floats_per_step, run, run_seeds, InitMode, RunLog, Scenario,
    SimError, SPACE_DIM,
};

use super::config::{load_scenario, ConfigFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERTIFY_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Relative output paths are resolved against this directory when set.
pub const OUTPUT_DIR_ENV: &str = "CONSENSUS_OBS_OUTPUT_DIR";

fn load(config: &Path, err: &mut dyn Write) -> Option<(ConfigFile, Scenario)> {
    match load_scenario(config) {
        Ok(v) => Some(v),
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", config.display());
            None
        }
    }
}

fn resolve_output(cli_out: Option<&Path>, cfg: &ConfigFile) -> Option<PathBuf> {
    let path = cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.csv.as_ref().map(PathBuf::from))?;
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Some(PathBuf::from(dir).join(path)),
        _ => Some(path),
    }
}

fn check_parent(path: &Path) -> Result<PathBuf, String> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if parent.is_dir() {
        Ok(parent)
    } else {
        Err(format!("output directory {} does not exist", parent.display()))
    }
}

/// Write through a temporary file in the destination directory, then rename.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let parent = check_parent(path).map_err(|m| io::Error::new(io::ErrorKind::NotFound, m))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    {
        let mut buf = io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn sim_exit(e: &SimError, err: &mut dyn Write) -> i32 {
    match e {
        SimError::Diverged { t } => {
            let _ = writeln!(err, "error: run aborted, state diverged at t = {t} s");
            EXIT_DIVERGED
        }
        other => {
            let _ = writeln!(err, "error: {other}");
            EXIT_INVALID
        }
    }
}

pub fn cmd_certify(config: &Path, quiet: bool, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some((_, scenario)) = load(config, err) else {
        return EXIT_INVALID;
    };
    let report = match certify_scenario(&scenario) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INVALID;
        }
    };
    if !quiet {
        let _ = writeln!(out, "{report}");
        let _ = writeln!(out, "--- json ---");
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        let _ = writeln!(out, "overall: {}", if report.overall { "pass" } else { "FAIL" });
    }
    if report.overall {
        EXIT_OK
    } else {
        EXIT_CERTIFY_FAILED
    }
}

fn summarize(log: &RunLog, seed: u64, out: &mut dyn Write) -> io::Result<()> {
    let last = log.last();
    writeln!(out, "seed {seed}: t_final = {} s", last.t)?;
    for (i, e) in last.errors.iter().enumerate() {
        writeln!(out, "  agent {}: position error {:.6e} m", i + 1, e[0])?;
    }
    writeln!(out, "  disagreement: {:.6e} m", last.disagreement)?;
    let violations = log.envelope_violations(tol::LYAPUNOV_SLACK);
    writeln!(
        out,
        "  lyapunov envelope: {} ({violations} violating steps)",
        if violations == 0 { "held" } else { "violated" }
    )?;
    writeln!(out, "  floats broadcast per agent: {}", last.comm_floats[0])?;
    writeln!(out, "  bearing checksum: {}", log.bearing_checksum)
}

fn seeded_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}_seed{seed}"),
    };
    path.with_file_name(name)
}

pub fn cmd_run(
    config: &Path,
    out_csv: Option<&Path>,
    seeds: Option<&[u64]>,
    quiet: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some((cfg, scenario)) = load(config, err) else {
        return EXIT_INVALID;
    };
    let target = resolve_output(out_csv, &cfg);
    if let Some(p) = &target {
        if let Err(m) = check_parent(p) {
            let _ = writeln!(err, "error: {m}");
            return EXIT_INVALID;
        }
    }
    let (seeds, multi) = match seeds {
        Some(s) if !s.is_empty() => (s.to_vec(), true),
        _ => (vec![scenario.seed], false),
    };
    let results = if multi {
        run_seeds(&scenario, &seeds)
    } else {
        vec![run(&scenario)]
    };

    let mut code = EXIT_OK;
    for (seed, result) in seeds.iter().zip(results) {
        let log = match result {
            Ok(log) => log,
            Err(e) => {
                let _ = write!(err, "seed {seed}: ");
                code = code.max(sim_exit(&e, err));
                continue;
            }
        };
        if let Some(p) = &target {
            let path = if multi { seeded_path(p, *seed) } else { p.clone() };
            if let Err(e) = write_atomic(&path, |w| log.write_csv(w)) {
                let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
                return EXIT_INVALID;
            }
            if !quiet {
                let _ = writeln!(out, "wrote {}", path.display());
            }
        }
        if !quiet {
            let _ = summarize(&log, *seed, out);
        }
    }
    code
}

/// Per-seed summary table over a list of seeds.
pub fn cmd_sweep(
    config: &Path,
    seeds: &[u64],
    out_csv: Option<&Path>,
    quiet: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some((cfg, scenario)) = load(config, err) else {
        return EXIT_INVALID;
    };
    if seeds.is_empty() {
        let _ = writeln!(err, "error: sweep needs --seeds");
        return EXIT_INVALID;
    }
    let target = resolve_output(out_csv, &cfg);
    if let Some(p) = &target {
        if let Err(m) = check_parent(p) {
            let _ = writeln!(err, "error: {m}");
            return EXIT_INVALID;
        }
    }
    let mut lines = vec!["seed,max_pos_error,disagreement,envelope_violations".to_string()];
    let mut code = EXIT_OK;
    for (seed, result) in seeds.iter().zip(run_seeds(&scenario, seeds)) {
        match result {
            Ok(log) => {
                let last = log.last();
                lines.push(format!(
                    "{seed},{},{},{}",
                    log.max_position_error(last),
                    last.disagreement,
                    log.envelope_violations(tol::LYAPUNOV_SLACK)
                ));
            }
            Err(e) => {
                let _ = write!(err, "seed {seed}: ");
                code = code.max(sim_exit(&e, err));
            }
        }
    }
    if !quiet {
        for l in &lines {
            let _ = writeln!(out, "{l}");
        }
    }
    if let Some(p) = &target {
        if let Err(e) = write_atomic(p, |w| lines.iter().try_for_each(|l| writeln!(w, "{l}"))) {
            let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
            return EXIT_INVALID;
        }
    }
    code
}

pub fn compare_header(n_agents: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n_agents).map(|i| format!("obs_err_pos_agent{i}")));
    cols.extend((1..=n_agents).map(|i| format!("dkf_err_pos_agent{i}")));
    cols.extend(
        [
            "obs_disagreement",
            "dkf_disagreement",
            "obs_comm_floats",
            "dkf_comm_floats",
        ]
        .map(String::from),
    );
    cols.join(",")
}

pub fn write_compare_csv(obs: &RunLog, dkf: &DkfLog, w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "{}", compare_header(obs.n_agents))?;
    for (o, d) in obs.rows.iter().zip(&dkf.rows) {
        let mut fields = vec![o.t.to_string()];
        fields.extend(o.errors.iter().map(|e| e[0].to_string()));
        fields.extend(d.position_errors.iter().map(f64::to_string));
        fields.push(o.disagreement.to_string());
        fields.push(d.disagreement.to_string());
        fields.push(o.comm_floats[0].to_string());
        fields.push(d.comm_floats[0].to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn cmd_compare(
    config: &Path,
    out_csv: Option<&Path>,
    quiet: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some((cfg, mut scenario)) = load(config, err) else {
        return EXIT_INVALID;
    };
    if scenario.order() != 2 {
        let _ = writeln!(
            err,
            "error: compare needs an order-2 observer (the filter baseline is constant-velocity), got order {}",
            scenario.order()
        );
        return EXIT_INVALID;
    }
    let target = resolve_output(out_csv, &cfg);
    if let Some(p) = &target {
        if let Err(m) = check_parent(p) {
            let _ = writeln!(err, "error: {m}");
            return EXIT_INVALID;
        }
    }
    // both estimators start from the network-averaged bearing initialization
    if let InitMode::Bearing { range } = scenario.init {
        scenario.init = InitMode::Average { range };
    }
    let params = DkfParams::default();
    let (obs, dkf) = std::thread::scope(|s| {
        let h = s.spawn(|| run_dkf(&scenario, &params));
        let obs = run(&scenario);
        (obs, h.join().expect("filter thread panicked"))
    });
    let obs = match obs {
        Ok(l) => l,
        Err(e) => return sim_exit(&e, err),
    };
    let dkf = match dkf {
        Ok(l) => l,
        Err(e) => {
            let _ = writeln!(err, "error: filter baseline: {e}");
            return EXIT_INVALID;
        }
    };
    if let Some(p) = &target {
        if let Err(e) = write_atomic(p, |w| write_compare_csv(&obs, &dkf, w)) {
            let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
            return EXIT_INVALID;
        }
    }
    if !quiet {
        let (lo, ld) = (obs.last(), dkf.last());
        let max = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0, f64::max);
        let _ = writeln!(
            out,
            "per-step floats per agent: observer {}, dkf {}",
            observer_floats_per_step(SPACE_DIM),
            dkf_floats_per_step(STATE_DIM, params.consensus_iters)
        );
        let _ = writeln!(
            out,
            "final max position error: observer {:.6e} m, dkf {:.6e} m",
            max(&mut lo.errors.iter().map(|e| e[0])),
            max(&mut ld.position_errors.iter().copied())
        );
        let _ = writeln!(
            out,
            "final disagreement: observer {:.6e} m, dkf {:.6e} m",
            lo.disagreement, ld.disagreement
        );
        let _ = writeln!(
            out,
            "total floats per agent: observer {}, dkf {}",
            lo.comm_floats[0], ld.comm_floats[0]
        );
        let _ = writeln!(out, "bearing checksum: observer {}", obs.bearing_checksum);
        let _ = writeln!(out, "bearing checksum: dkf      {}", dkf.bearing_checksum);
        if let Some(p) = &target {
            let _ = writeln!(out, "wrote {}", p.display());
        }
    }
    EXIT_OK
}
