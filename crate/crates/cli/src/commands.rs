use std::fmt::Write as _;

use bifield::bounds::{self, BoundCertificate};
use bifield::cumulants::{self, CumulantVector, TimeLabel};
use bifield::hierarchy::{duhamel_residual, solve_hierarchy, MomentTable, TimeGrid};
use bifield::kernels::{KernelEvaluator, Quadrature};
use bifield::oracle::{self, OracleMarginal};
use bifield::simulator::{run_replicates, EnsembleStats};
use bifield::stats::Histogram;
use bifield::verify::{self, AcceptanceSettings};
use serde::Serialize;

use crate::artifacts::ArtifactWriter;
use crate::config::Resolved;
use crate::error::{numerical, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Validate,
    Kernel,
    Simulate,
    Moments,
    Cumulants,
    Bounds,
    Oracle,
    VerifyAll,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Validate => "validate",
            Verb::Kernel => "kernel",
            Verb::Simulate => "simulate",
            Verb::Moments => "moments",
            Verb::Cumulants => "cumulants",
            Verb::Bounds => "bounds",
            Verb::Oracle => "oracle",
            Verb::VerifyAll => "verify-all",
        }
    }
}

pub fn run(verb: Verb, r: &Resolved, out: &mut ArtifactWriter) -> Result<(), CliError> {
    match verb {
        Verb::Validate => {
            println!("model is valid: delta = {}", r.model.delta());
            Ok(())
        }
        Verb::Kernel => kernel(r, out),
        Verb::Simulate => simulate(r, out),
        Verb::Moments => moments(r, out),
        Verb::Cumulants => cumulant_report(r, out),
        Verb::Bounds => bound_report(r, out),
        Verb::Oracle => oracle_report(r, out),
        Verb::VerifyAll => verify_all(r, out),
    }
}

fn coord_header(dim: usize, prefix: &str) -> String {
    (0..dim).map(|a| format!("{prefix}{a}")).collect::<Vec<_>>().join(",")
}

fn coords(c: &[i64]) -> String {
    c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn window(dim: usize, radius: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                (-radius..=radius).map(move |c| {
                    let mut v: Vec<i64> = p.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    out
}

#[derive(Serialize)]
struct KernelSummary {
    t: f64,
    window_mass: f64,
    peak: f64,
}

fn kernel(r: &Resolved, out: &mut ArtifactWriter) -> Result<(), CliError> {
    let b = &r.config.kernel;
    let dim = r.model.dim();
    let quad = Quadrature {
        level: b.level.unwrap_or(Quadrature::for_dim(dim).level),
        tolerance: b.tolerance,
    };
    let evaluator = KernelEvaluator::new(r.model.walk(), quad);
    let points = window(dim, b.radius);
    let mut csv = format!("t,{},p\n", coord_header(dim, "y"));
    let mut summary = Vec::new();
    for &t in &b.times {
        let slice = evaluator.at(t).map_err(numerical)?;
        let mut mass = 0.0;
        for y in &points {
            let p = slice.prob(y).map_err(numerical)?;
            mass += p;
            writeln!(csv, "{t},{},{p:e}", coords(y)).unwrap();
        }
        let peak = slice.prob(&vec![0; dim]).map_err(numerical)?;
        println!("t={t}: window mass {mass:.12}, p(t,0,0) = {peak:.6e}");
        summary.push(KernelSummary { t, window_mass: mass, peak });
    }
    out.write("kernel.csv", csv.as_bytes())?;
    out.write_json("kernel_summary.json", &summary)
}

fn simulate(r: &Resolved, out: &mut ArtifactWriter) -> Result<(), CliError> {
    let b = &r.config.sim;
    if b.replicates < 2 {
        return Err(CliError::Usage(format!(
            "sim.replicates must be at least 2, got {}",
            b.replicates
        )));
    }
    let cfg = b.to_sim_config(r.config.seed);
    let dim = r.model.dim();
    let runs = run_replicates(&r.model, &cfg, b.replicates).map_err(numerical)?;
    let stats = EnsembleStats::from_trajectories(&cfg, dim, &runs);
    let sites = cfg.observed(dim);

    if b.write_trajectories {
        let mut csv = format!("replicate,t,{},count\n", coord_header(dim, "x"));
        for tr in &runs {
            for rec in &tr.records {
                for (site, c) in sites.iter().zip(&rec.counts) {
                    writeln!(csv, "{},{},{},{c}", tr.replicate_index, rec.t, coords(site)).unwrap();
                }
            }
        }
        out.write("trajectories.csv", csv.as_bytes())?;
    }
    let mut hist = format!("t,{},count,replicates\n", coord_header(dim, "x"));
    for ts in &stats.times {
        for s in &ts.sites {
            for (v, n) in s.histogram.counts().iter().enumerate() {
                writeln!(hist, "{},{},{v},{n}", ts.t, coords(&s.site)).unwrap();
            }
        }
    }
    out.write("histograms.csv", hist.as_bytes())?;
    out.write_json("ensemble.json", &stats)?;
    for ts in &stats.times {
        let s = &ts.sites[0];
        println!(
            "t={}: mean N(t,{:?}) = {:.5} ± {:.5}, chi_2 = {:.5} ± {:.5}",
            ts.t, s.site, s.cumulants[0].value, s.cumulants[0].se, s.cumulants[1].value, s.cumulants[1].se
        );
    }
    Ok(())
}

fn hierarchy_grid(r: &Resolved, t_max: f64) -> Result<TimeGrid, CliError> {
    match r.config.hierarchy.step {
        Some(h) => TimeGrid::new(h, ((t_max / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize),
        None => TimeGrid::covering(t_max, r.model.max_step()),
    }
    .map_err(numerical)
}

fn hierarchy_table(r: &Resolved, k_max: usize, t_max: f64) -> Result<MomentTable, CliError> {
    let grid = hierarchy_grid(r, t_max)?;
    solve_hierarchy(&r.model, r.config.hierarchy.torus_side, k_max, grid).map_err(numerical)
}

#[derive(Serialize)]
struct MomentSummary {
    torus_side: usize,
    k_max: usize,
    step: f64,
    intervals: usize,
    /// `Σ_x m_k(t_max, x)` for each `k`.
    final_site_sums: Vec<f64>,
    /// Duhamel residual on `m_k`, for `k ≤ 2`.
    duhamel_residual: Vec<f64>,
}

fn moments(r: &Resolved, out: &mut ArtifactWriter) -> Result<(), CliError> {
    let h = &r.config.hierarchy;
    let table = hierarchy_table(r, h.k_max, h.t_max)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv, h.write_every)?;
    out.write("moments.csv", &csv)?;
    let grid = table.grid();
    let summary = MomentSummary {
        torus_side: h.torus_side,
        k_max: h.k_max,
        step: grid.step(),
        intervals: grid.intervals(),
        final_site_sums: (1..=h.k_max)
            .map(|k| *table.site_sums(k).last().unwrap())
            .collect(),
        duhamel_residual: (1..=h.k_max.min(2))
            .map(|k| k as f64 * duhamel_residual(k, &table, &r.model))
            .collect(),
    };
    println!(
        "solved K={} on L={} to t={} ({} steps); duhamel residual {:?}",
        h.k_max,
        h.torus_side,
        grid.horizon(),
        grid.intervals(),
        summary.duhamel_residual
    );
    out.write_json("moments_summary.json", &summary)
}

fn cumulant_report(r: &Resolved, out: &mut ArtifactWriter) -> Result<(), CliError> {
    let c = &r.config.cumulants;
    let t_end = c.times.iter().copied().fold(0.0, f64::max);
    let mut vectors = Vec::new();
    let mut csv = String::from("t,l,chi\n");
    if t_end > 0.0 {
        let table = hierarchy_table(r, c.l_max, t_end)?;
        for &t in &c.times {
            let values = (1..=c.l_max)
                .map(|l| cumulants::chi_total(&r.model, l, t, &table))
                .collect::<Result<Vec<_>, _>>()
                .map_err(numerical)?;
            for (l, v) in values.iter().enumerate() {
                writeln!(csv, "{t},{},{v:e}", l + 1).unwrap();
            }
            vectors.push(CumulantVector {
                order: c.l_max,
                time: TimeLabel::At(t),
                values,
            });
        }
    }
    let steady =
        cumulants::steady_state_cumulants(&r.model, c.l_max, c.tol, c.steady).map_err(numerical)?;
    for (l, v) in steady.cumulants.values.iter().enumerate() {
        writeln!(csv, "infinity,{},{v:e}", l + 1).unwrap();
    }
    println!(
        "steady state at horizon {:.3}: chi = {:?} (operational c = {:.4})",
        steady.horizon, steady.cumulants.values, steady.constant.c
    );
    out.write("cumulants.csv", csv.as_bytes())?;
    out.write_json("cumulants.json", &vectors)?;
    out.write_json("steady_state.json", &steady)
}

#[derive(Serialize)]
struct BoundReport {
    certificate: BoundCertificate,
    margins: bounds::MarginReport,
    operational_constant: bounds::OperationalConstant,
}

fn bound_report(r: &Resolved, out: &mut ArtifactWriter) -> Result<(), CliError> {
    let h = &r.config.hierarchy;
    let table = hierarchy_table(r, h.k_max, h.t_max)?;
    let certificate = BoundCertificate::new(&r.model, h.k_max).map_err(numerical)?;
    let margins = bounds::verify_factorial_bound(&table, &certificate, &r.model).map_err(numerical)?;
    let operational_constant =
        bounds::operational_constant(&table, &certificate, &r.model).map_err(numerical)?;
    let mut csv = String::from("k,d_k\n");
    for (i, d) in certificate.d.iter().enumerate() {
        writeln!(csv, "{},{d:e}", i + 1).unwrap();
    }
    println!(
        "B = {:.6}; bound holds at {} points; smallest margins {:?}; operational c = {:.4}",
        certificate.b,
        margins.checked,
        margins.orders.iter().map(|o| o.min_relative_margin).collect::<Vec<_>>(),
        operational_constant.c
    );
    out.write("d_sequence.csv", csv.as_bytes())?;
    out.write_json(
        "bounds.json",
        &BoundReport {
            certificate,
            margins,
            operational_constant,
        },
    )
}

#[derive(Serialize)]
struct SimulationFit {
    t: f64,
    replicates: u64,
    statistic: f64,
    dof: usize,
    p_value: f64,
}

#[derive(Serialize)]
struct OracleReport {
    torus_side: usize,
    cap: u32,
    states: usize,
    nonzeros: usize,
    marginals: Vec<OracleMarginal>,
    simulation: Vec<SimulationFit>,
}

fn oracle_report(r: &Resolved, out: &mut ArtifactWriter) -> Result<(), CliError> {
    let o = &r.config.oracle;
    let gen = oracle::build_generator(&r.model, o.torus_side, o.cap, o.state_budget).map_err(numerical)?;
    let laws = oracle::distribution_at(&gen, &o.times).map_err(numerical)?;
    let space = gen.space();
    let origin = space.torus().origin();
    let marginals: Vec<OracleMarginal> = o
        .times
        .iter()
        .zip(&laws)
        .map(|(&t, p)| OracleMarginal {
            t,
            probabilities: oracle::marginal(&space, p, origin),
            overflow_mass: oracle::overflow_mass(&space, p),
        })
        .collect();
    let mut csv = String::from("t,count,probability\n");
    for m in &marginals {
        for (k, p) in m.probabilities.iter().enumerate() {
            writeln!(csv, "{},{k},{p:e}", m.t).unwrap();
        }
        println!("t={}: overflow mass {:.3e}", m.t, m.overflow_mass);
    }
    let mut simulation = Vec::new();
    if o.replicates > 0 {
        let cfg = bifield::simulator::SimConfig::new(o.torus_side, o.times.clone(), r.config.seed);
        let runs = run_replicates(&r.model, &cfg, o.replicates).map_err(numerical)?;
        for (ti, m) in marginals.iter().enumerate() {
            let hist = Histogram::from_samples(runs.iter().map(|tr| tr.records[ti].counts[0] as u64));
            let fit = oracle::compare_to_simulation(&m.probabilities, &hist).map_err(numerical)?;
            println!("t={}: chi-square p-value {:.4}", m.t, fit.p_value);
            simulation.push(SimulationFit {
                t: m.t,
                replicates: o.replicates,
                statistic: fit.statistic,
                dof: fit.dof,
                p_value: fit.p_value,
            });
        }
    }
    out.write("oracle_marginals.csv", csv.as_bytes())?;
    out.write_json(
        "oracle.json",
        &OracleReport {
            torus_side: o.torus_side,
            cap: o.cap,
            states: space.len(),
            nonzeros: gen.nnz(),
            marginals,
            simulation,
        },
    )
}

fn verify_all(r: &Resolved, out: &mut ArtifactWriter) -> Result<(), CliError> {
    let settings = AcceptanceSettings { seed: r.config.seed };
    let mut outcomes = Vec::new();
    let mut text = String::new();
    for id in verify::CRITERIA {
        let o = verify::run_criterion(id, settings).expect("known criterion");
        println!("{}", o.line());
        writeln!(text, "{}", o.line()).unwrap();
        outcomes.push(o);
    }
    out.write("acceptance_report.txt", text.as_bytes())?;
    out.write_json("acceptance_report.json", &outcomes)?;
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", outcomes.len());
        Ok(())
    } else {
        Err(CliError::Acceptance(format!("criteria {failed:?} failed")))
    }
}
