//! File-producing entry points behind the `dhm` subcommands.
//!
//! Every command takes a parsed [`RunConfig`] and an output directory and
//! writes deterministic files there. Binary dumps are raw little-endian
//! `f64` in row-major order, each with a `.json` sidecar giving shape,
//! dtype and endianness.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{Flow, FlowTrace};
use crate::index::{cp1_table, spectral_flow_family};
use crate::twisted::{MapField, TwistedDirac, TwistedSpinorField};
use crate::verify::{run_suite, Check};
use serde::Serialize;
use serde_json::json;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub block: String,
    pub dim: usize,
    pub eigenvalues_written: usize,
    pub kernel_dim: Option<usize>,
    pub gap: Option<f64>,
    pub symmetry_defect: f64,
    pub even_multiplicity: bool,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))
}

/// Writes `name.bin` and its `name.json` sidecar.
pub fn write_array(out: &Path, name: &str, shape: &[usize], data: &[f64], meta: serde_json::Value) -> Result<()> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
    write(&out.join(format!("{name}.bin")), bytes)?;
    let header = json!({
        "file": format!("{name}.bin"),
        "shape": shape,
        "dtype": "float64",
        "endianness": "little",
        "order": "row-major",
        "meta": meta,
    });
    write(&out.join(format!("{name}.json")), serde_json::to_string_pretty(&header).expect("header serializes"))
}

/// Reads back an array written by [`write_array`].
pub fn read_array(out: &Path, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let header: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(format!("{name}.json")))?)
        .map_err(|e| Error::Io(e.to_string()))?;
    let shape: Vec<usize> = serde_json::from_value(header["shape"].clone()).map_err(|e| Error::Io(e.to_string()))?;
    let bytes = fs::read(out.join(format!("{name}.bin")))?;
    let data: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if data.len() != shape.iter().product::<usize>() {
        return Err(Error::Io(format!("{name}.bin has {} values, header says {shape:?}", data.len())));
    }
    Ok((shape, data))
}

fn block_name(cfg: &RunConfig) -> String {
    serde_json::to_value(cfg.kernel_block).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// `spectrum.csv` (index, eigenvalue, chirality, cluster) and `summary.json`.
pub fn cmd_spectrum(cfg: &RunConfig, out: &Path) -> Result<SpectrumSummary> {
    let setup = cfg.setup()?;
    let u = Arc::new(setup.map);
    let op = TwistedDirac::new(&u, cfg.kernel_block)?;
    let sd = match cfg.eigen_count {
        Some(k) => op.eigen_solve(k).map_err(|e| Error::Config(format!("eigen_count: {e}")))?,
        None => op.spectrum()?,
    };
    prepare(out)?;
    let mut csv = String::from("index,eigenvalue,chirality,cluster\n");
    for (i, l) in sd.eigenvalues.iter().enumerate() {
        writeln!(csv, "{i},{l:.15e},{:.15e},{}", sd.chirality[i], sd.cluster_ids[i]).unwrap();
    }
    write(&out.join("spectrum.csv"), csv)?;
    let summary = SpectrumSummary {
        block: block_name(cfg),
        dim: op.dim(),
        eigenvalues_written: sd.eigenvalues.len(),
        kernel_dim: sd.kernel_count,
        gap: sd.gap,
        symmetry_defect: sd.symmetry_defect(),
        even_multiplicity: sd.even_multiplicity(),
    };
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(summary)
}

fn dump_map(out: &Path, u: &MapField) -> Result<()> {
    let d = &u.domain;
    write_array(out, "final_map", &[d.nx, d.ny, u.q()], u.values(), json!({"axes": ["x", "y", "ambient"]}))
}

fn dump_spinor(out: &Path, psi: &TwistedSpinorField) -> Result<()> {
    let u = &psi.basepoint;
    let d = &u.domain;
    let data: Vec<f64> = psi.values.iter().flat_map(|z| [z.re, z.im]).collect();
    write_array(
        out,
        "final_spinor",
        &[d.nx, d.ny, u.q(), 2, 2],
        &data,
        json!({"axes": ["x", "y", "ambient", "spinor", "re_im"]}),
    )
}

/// Runs the flow and writes `trace.jsonl`, `final_map.{bin,json}`,
/// `final_spinor.{bin,json}` (coupled runs only) and `summary.json`.
pub fn cmd_flow(cfg: &RunConfig, out: &Path) -> Result<FlowTrace> {
    let setup = cfg.setup()?;
    let mut fl = Flow::new(setup.map, cfg.spinor, cfg.flow.clone()).map_err(|e| match e {
        Error::Config(_) => e,
        e => Error::AtStep { step: 0, source: Box::new(e) },
    })?;
    loop {
        let step = fl.state().step;
        match fl.step() {
            Ok(Some(_)) => break,
            Ok(None) => {}
            Err(e) => return Err(Error::AtStep { step: step + 1, source: Box::new(e) }),
        }
    }
    let trace = fl.finish();
    prepare(out)?;
    write(&out.join("trace.jsonl"), trace.to_jsonl())?;
    dump_map(out, &trace.state.u)?;
    if let Some(psi) = &trace.state.psi {
        dump_spinor(out, psi)?;
    }
    let last = trace.records.last();
    let summary = json!({
        "steps": trace.state.step,
        "t": trace.state.t,
        "lambda": trace.lambda,
        "reanchors": trace.reanchors,
        "final_event": trace.events.last(),
        "E": last.map(|r| r.energy),
        "E_alpha": last.map(|r| r.energy_alpha),
        "diss_residual": last.map(|r| r.diss_residual),
    });
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(trace)
}

/// `index.csv` over the configured range, plus `spectral_flow.csv` when a
/// homotopy is configured.
pub fn cmd_index(cfg: &RunConfig, out: &Path) -> Result<()> {
    let r = &cfg.index;
    if r.deg_min > r.deg_max || r.genus_min > r.genus_max || r.genus_min < 0 {
        return Err(Error::Config(format!("invalid index range {r:?}")));
    }
    prepare(out)?;
    let mut csv = String::from("deg,g_N,dim_C,script_I\n");
    for row in cp1_table(r.deg_min..=r.deg_max, r.genus_min..=r.genus_max) {
        writeln!(csv, "{},{},{},{}", row.deg, row.g_n, row.dim_c, row.script_i).unwrap();
    }
    write(&out.join("index.csv"), csv)?;
    if let Some(h) = &cfg.homotopy {
        let mut setup = cfg.setup()?;
        let end = h.end.build(&setup.domain, &setup.target, &mut setup.rng)?;
        let rep = spectral_flow_family(&setup.map, &end, h.steps, h.lambda)?;
        let mut csv = String::from("t,kernel_dim\n");
        for (t, c) in &rep.samples {
            writeln!(csv, "{t},{}", c.map_or("ambiguous".to_string(), |c| c.to_string())).unwrap();
        }
        write(&out.join("spectral_flow.csv"), csv)?;
        write(&out.join("spectral_flow.json"), serde_json::to_string_pretty(&rep).expect("report serializes"))?;
    }
    Ok(())
}

/// Runs the suite with tolerances multiplied by `tolerance_scale`, printing
/// one line per check.
pub fn cmd_verify(tolerance_scale: f64, out: Option<&Path>) -> Result<Vec<Check>> {
    let checks = run_suite(tolerance_scale);
    for c in &checks {
        println!("{}", c.line());
    }
    if let Some(out) = out {
        prepare(out)?;
        write(&out.join("verify.json"), serde_json::to_string_pretty(&checks).expect("checks serialize"))?;
    }
    Ok(checks)
}
