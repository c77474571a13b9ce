use eyewitness::chain::{run_chain, ChainOutcome};
use eyewitness::config::RunConfig;
use eyewitness::fock::DensityMatrix;
use eyewitness::montecarlo::empirical_stop_curve;
use eyewitness::optimizer::{optimize, Objective, Parameter};
use eyewitness::preparation::{conditional_state, rate_budget, snr_budget};
use eyewitness::statistics::{
    classical_pvalue, classical_surface, critical_chi0_tol, multinomial_log_pmf, CertificationPlan, Estimator,
    StopCurve,
};
use eyewitness::witness::{displaced_state_stats, g2_crossing, witness_difference};

use crate::output::{num, Artifacts};
use crate::{CliError, Command, Figure, StateChoice};

const SECONDS_PER_HOUR: f64 = 3600.0;

pub fn apply_overrides(cmd: &Command, cfg: &mut RunConfig) {
    match *cmd {
        Command::Plan { epsilon, coarse_n } | Command::ExpectedRuns { epsilon, coarse_n } => {
            if let Some(e) = epsilon {
                cfg.statistics.epsilon = e;
            }
            if let Some(n) = coarse_n {
                cfg.statistics.coarse_n = n;
            }
        }
        Command::Simulate {
            epsilon,
            coarse_n,
            trials,
            seed,
        } => {
            if let Some(e) = epsilon {
                cfg.statistics.epsilon = e;
            }
            if let Some(n) = coarse_n {
                cfg.statistics.coarse_n = n;
            }
            if let Some(t) = trials {
                cfg.montecarlo.trials = t;
            }
            if let Some(s) = seed {
                cfg.montecarlo.seed = s;
            }
        }
        Command::Optimize { budget } => {
            if let Some(b) = budget {
                cfg.optimizer.budget = b;
            }
        }
        Command::ClassicalCheck { epsilon, .. } => {
            if let Some(e) = epsilon {
                cfg.statistics.epsilon = e;
            }
        }
        _ => {}
    }
}

/// Deterministic description of the subcommand and its flags.
pub fn label(cmd: &Command) -> String {
    format!("{cmd:?}")
}

pub fn execute(cmd: &Command, cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    match *cmd {
        Command::G2Scan {
            alpha_min,
            alpha_max,
            points,
            state,
        } => g2_scan(cfg, art, alpha_min, alpha_max, points, state),
        Command::Prepare {
            rep_rate,
            duty_cycle,
            p_pair,
            eta_herald,
            noise_over_signal,
            extinction_ratio,
        } => prepare(cfg, art, [rep_rate, duty_cycle, p_pair, eta_herald], noise_over_signal, extinction_ratio),
        Command::Plan { .. } => plan(cfg, art, true),
        Command::ExpectedRuns { .. } => plan(cfg, art, false),
        Command::Simulate { .. } => simulate(cfg, art),
        Command::Optimize { .. } => run_optimizer(cfg, art),
        Command::ClassicalCheck { n, .. } => classical_check(cfg, art, n),
        Command::Figures { figure, n } => match figure {
            Figure::Fig1 => fig1(cfg, art),
            Figure::Fig3 => fig3(cfg, art, n),
            Figure::Fig4 => fig4(cfg, art),
        },
    }
}

fn report(art: &mut Artifacts, name: &str, body: &str) -> Result<(), CliError> {
    print!("{body}");
    art.text(name, body)?;
    Ok(())
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

struct ScanRow {
    alpha: f64,
    ps1: f64,
    ps2: f64,
    pc: f64,
    g2: f64,
}

fn scan_rows(cfg: &RunConfig, rho: &DensityMatrix, alphas: &[f64]) -> Result<Vec<ScanRow>, CliError> {
    let r = cfg.analysis.bs_reflectance;
    alphas
        .iter()
        .map(|&alpha| {
            let s = displaced_state_stats(rho, alpha, &cfg.eye, &cfg.eye, r, cfg.analysis.tail_tol)?;
            let denom = s.ps1 * s.ps2;
            Ok(ScanRow {
                alpha,
                ps1: s.ps1,
                ps2: s.ps2,
                pc: s.pc,
                g2: if denom > 0.0 { s.pc / denom } else { f64::NAN },
            })
        })
        .collect()
}

fn write_scan(art: &mut Artifacts, name: &str, rows: &[ScanRow]) -> Result<(), CliError> {
    art.csv(
        name,
        &["alpha", "ps1", "ps2", "pc", "g2", "witness_difference"],
        rows.iter().map(|r| {
            let d = witness_difference(&eyewitness::witness::ClickStats {
                ps1: r.ps1,
                ps2: r.ps2,
                pc: r.pc,
            });
            vec![num(r.alpha), num(r.ps1), num(r.ps2), num(r.pc), num(r.g2), num(d)]
        }),
    )?;
    Ok(())
}

/// First bracketing pair where `g2 - 1` changes sign from negative to positive.
fn crossing_bracket(rows: &[ScanRow]) -> Option<(f64, f64)> {
    rows.windows(2)
        .find(|w| w[0].g2 < 1.0 && w[1].g2 >= 1.0)
        .map(|w| (w[0].alpha, w[1].alpha))
}

fn g2_scan(
    cfg: &RunConfig,
    art: &mut Artifacts,
    alpha_min: f64,
    alpha_max: f64,
    points: usize,
    state: StateChoice,
) -> Result<(), CliError> {
    if points < 1 || !(alpha_min <= alpha_max) {
        return Err(CliError::Usage("need points >= 1 and alpha_min <= alpha_max".into()));
    }
    let rho = match state {
        StateChoice::Prepared => conditional_state(&cfg.prep_params())?.aligned_rho(),
        StateChoice::Ideal => DensityMatrix::plus_state(0.0),
    };
    let rows = scan_rows(cfg, &rho, &linspace(alpha_min, alpha_max, points))?;
    write_scan(art, "g2_scan.csv", &rows)?;
    let mut body = format!("g2 scan over alpha in [{alpha_min}, {alpha_max}] ({points} points)\n");
    if let Some(min) = rows.iter().filter(|r| r.g2.is_finite()).min_by(|a, b| a.g2.total_cmp(&b.g2)) {
        body += &format!("minimum g2 = {} at alpha = {}\n", num(min.g2), num(min.alpha));
    }
    match crossing_bracket(&rows) {
        Some((lo, hi)) => body += &format!("g2 crosses 1 between alpha = {lo} and {hi}\n"),
        None => body += "g2 does not cross 1 in the scanned range\n",
    }
    report(art, "g2_scan_report.txt", &body)
}

fn prepare(
    cfg: &RunConfig,
    art: &mut Artifacts,
    [rep_rate, duty_cycle, p_pair, eta_herald]: [f64; 4],
    noise_over_signal: f64,
    extinction_ratio: f64,
) -> Result<(), CliError> {
    let s = conditional_state(&cfg.prep_params())?;
    let rates = rate_budget(rep_rate, duty_cycle, p_pair, eta_herald, s.p_click_given_herald)?;
    let snr = snr_budget(noise_over_signal, extinction_ratio)?;
    let rho = s.rho.entries();
    let rows = vec![
        ("p_click_given_herald", s.p_click_given_herald),
        ("fidelity_plus", s.fidelity_plus),
        ("root_fidelity_plus", s.root_fidelity_plus()),
        ("coherence_phase", s.coherence_phase),
        ("rho_00", rho[(0, 0)].re),
        ("rho_11", rho[(1, 1)].re),
        ("rho_01_re", rho[(0, 1)].re),
        ("rho_01_im", rho[(0, 1)].im),
        ("herald_rate_hz", rates.herald_rate),
        ("trigger_rate_hz", rates.trigger_rate),
        ("signal_to_noise", snr),
    ];
    art.csv(
        "prepare.csv",
        &["quantity", "value"],
        rows.iter().map(|(k, v)| vec![k.to_string(), num(*v)]),
    )?;
    let p = cfg.prep_params();
    let body = format!(
        "heralded preparation (eta_c = {}, t = {}, beta = {}, eta_d = {})\n\
         p_click_given_herald = {}\n\
         fidelity (overlap) with best-phase (|0> + |1>)/sqrt(2) = {}\n\
         fidelity (square-root) = {}\n\
         herald rate = {} Hz, trigger rate = {} Hz\n\
         signal-to-noise after pulse picker = {}\n",
        p.eta_c,
        p.t,
        p.beta,
        p.eta_d,
        num(s.p_click_given_herald),
        num(s.fidelity_plus),
        num(s.root_fidelity_plus()),
        num(rates.herald_rate),
        num(rates.trigger_rate),
        num(snr),
    );
    report(art, "prepare_report.txt", &body)
}

fn chain(cfg: &RunConfig) -> Result<ChainOutcome, CliError> {
    let out = run_chain(&cfg.chain_params())?;
    if let Some(w) = out.asymmetry_warning() {
        eprintln!("warning: {w}");
    }
    Ok(out)
}

fn stop_curve(cfg: &RunConfig, out: &ChainOutcome, epsilon: f64) -> Result<(CertificationPlan, StopCurve), CliError> {
    let plan = CertificationPlan::new(out.cell, cfg.statistics.a, epsilon)?;
    let curve = plan.expected_runs(cfg.statistics.coarse_n, &cfg.stop_options())?;
    Ok((plan.with_curve(&curve), curve))
}

fn plan(cfg: &RunConfig, art: &mut Artifacts, full: bool) -> Result<(), CliError> {
    let out = chain(cfg)?;
    let eps = cfg.statistics.epsilon;
    let (plan, curve) = stop_curve(cfg, &out, eps)?;
    let hours = curve.expected_runs / SECONDS_PER_HOUR;
    if full {
        art.csv(
            "plan.csv",
            &["n", "chi0", "p_stop", "worst_pvalue"],
            curve
                .grid
                .iter()
                .map(|p| vec![p.n.to_string(), num(p.chi0), num(p.p_stop), num(p.pvalue)]),
        )?;
    } else {
        art.csv(
            "expected_runs.csv",
            &["epsilon", "coarse_n", "expected_runs", "hours_at_1hz", "remainder_estimate", "grid_points"],
            [vec![
                num(eps),
                curve.coarse_n.to_string(),
                num(curve.expected_runs),
                num(hours),
                num(curve.remainder_estimate),
                curve.grid.len().to_string(),
            ]],
        )?;
    }
    let t = plan.coeffs();
    let mut body = format!(
        "quantum cell: ps = {}, pc = {}, g2 = {}\n\
         estimator: b = {}, c = {}, d = {}, phi = {}, a = {}\n\
         projected coherent cell: ps_cl = {}, center (x'0, y'0) = ({}, {})\n\
         epsilon = {eps}, coarse_n = {}\n\
         expected runs = {} ({} hours at 1 Hz), remainder estimate = {}\n",
        num(out.cell.ps),
        num(out.cell.pc),
        num(out.cell.g2()),
        num(t.b),
        num(t.c),
        num(t.d),
        num(t.phi),
        num(plan.a()),
        num(plan.ps_cl()),
        num(plan.center().0),
        num(plan.center().1),
        curve.coarse_n,
        num(curve.expected_runs),
        num(hours),
        num(curve.remainder_estimate),
    );
    if full {
        if let Some(p) = curve.grid.iter().find(|p| p.p_stop >= 0.5) {
            body += &format!("P_stop first reaches 0.5 at N = {} (P_stop = {})\n", p.n, num(p.p_stop));
        }
        match curve.tail_decreasing_from() {
            Some(n) => body += &format!("N (1 - P_stop) decreases from N = {n} onwards\n"),
            None => body += "N (1 - P_stop) is not eventually decreasing on this grid\n",
        }
    }
    report(art, if full { "plan_report.txt" } else { "expected_runs_report.txt" }, &body)
}

fn simulate(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let out = chain(cfg)?;
    let (plan, curve) = stop_curve(cfg, &out, cfg.statistics.epsilon)?;
    let trials = cfg.montecarlo.trials;
    let emp = empirical_stop_curve(
        &out.cell,
        &plan,
        curve.coarse_n,
        curve.grid.len(),
        trials,
        cfg.montecarlo.seed,
    )?;
    let mut violations = 0;
    let rows: Vec<Vec<String>> = emp
        .points
        .iter()
        .zip(&curve.grid)
        .map(|(e, a)| {
            if a.p_stop > e.fraction + (e.wilson_high - e.fraction) * 3.0 / 1.96 {
                violations += 1;
            }
            vec![
                e.n.to_string(),
                num(e.fraction),
                num(e.wilson_low),
                num(e.wilson_high),
                num(a.p_stop),
            ]
        })
        .collect();
    art.csv(
        "simulate.csv",
        &["n", "empirical_fraction", "wilson_low", "wilson_high", "analytic_p_stop"],
        rows,
    )?;
    let stopped = emp.trajectories.iter().filter(|t| t.stop_run.is_some()).count();
    let body = format!(
        "{trials} trajectories (seed {}), epsilon = {}, coarse_n = {}\n\
         stopped within {} runs: {stopped}\n\
         grid points where the analytic P_stop exceeds the empirical fraction by more than 3 Wilson half-widths: {violations}\n",
        cfg.montecarlo.seed,
        cfg.statistics.epsilon,
        curve.coarse_n,
        curve.grid.last().map_or(0, |p| p.n),
    );
    report(art, "simulate_report.txt", &body)
}

fn run_optimizer(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let spec = cfg.optimization_spec();
    let res = optimize(&spec, &cfg.chain_config())?;
    let sign = match spec.objective {
        Objective::ExpectedRuns { .. } => 1.0,
        Objective::StopProbability { .. } => -1.0,
    };
    let mut header: Vec<&str> = vec!["index", "stage"];
    header.extend(res.parameters.iter().map(Parameter::name));
    header.extend(["objective", "error"]);
    art.csv(
        "optimize_trace.csv",
        &header,
        res.trace.iter().map(|t| {
            let mut row = vec![
                t.index.to_string(),
                format!("{:?}", t.stage).to_lowercase(),
            ];
            row.extend(t.point.iter().map(|v| num(*v)));
            row.push(t.value.map_or(String::new(), |v| num(sign * v)));
            row.push(t.error.clone().unwrap_or_default());
            row
        }),
    )?;
    let mut body = format!("objective: {:?}\n", spec.objective);
    for (p, v) in &res.best {
        body += &format!("{} = {}\n", p.name(), num(*v));
    }
    body += &format!(
        "objective value = {}\nevaluations = {}{}\n",
        num(res.objective_value),
        res.evaluations,
        if res.budget_exhausted { " (budget exhausted, best so far)" } else { "" }
    );
    report(art, "optimize_report.txt", &body)
}

fn classical_check(cfg: &RunConfig, art: &mut Artifacts, n: u64) -> Result<(), CliError> {
    let out = chain(cfg)?;
    let est = Estimator::new(&out.cell, cfg.statistics.a)?;
    let limits = cfg.summation_limits();
    let crit = critical_chi0_tol(
        cfg.statistics.epsilon,
        n,
        &est,
        &cfg.classical_search(),
        &limits,
        cfg.statistics.chi0_rel_tol,
    )?;
    let scan = cfg.classical_scan();
    let surface = classical_surface(crit.chi0, n, &est, &scan, &limits)?;
    let worst = classical_pvalue(crit.chi0, n, &est, &scan, &limits)?;
    art.csv(
        "classical_surface.csv",
        &["ps", "pc", "pvalue"],
        surface.iter().map(|(c, p)| vec![num(c.ps), num(c.pc), num(*p)]),
    )?;
    let body = format!(
        "N = {n}, epsilon = {}, chi0 = {}\n\
         grid ({} x {}): worst p-value = {} at ps = {}, pc = {}\n\
         projected coherent cell ps_cl = {}; argmax is the projection within grid resolution: {}\n",
        cfg.statistics.epsilon,
        num(crit.chi0),
        scan.ps_points,
        scan.pc_points,
        num(worst.pvalue),
        num(worst.argmax.ps),
        num(worst.argmax.pc),
        num(est.ps_cl),
        worst.argmax_is_projection,
    );
    report(art, "classical_check_report.txt", &body)
}

fn fig1(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let rho = DensityMatrix::plus_state(0.0);
    let rows = scan_rows(cfg, &rho, &linspace(0.1, 16.0, 200))?;
    write_scan(art, "fig1.csv", &rows)?;
    let mut body = String::from("g2 of the displaced (|0> + |1>)/sqrt(2) behind a beamsplitter and two eyes\n");
    if let Some(bracket) = crossing_bracket(&rows) {
        let cross = g2_crossing(
            &rho,
            bracket,
            &cfg.eye,
            &cfg.eye,
            cfg.analysis.bs_reflectance,
            cfg.analysis.tail_tol,
            1e-4,
        )?;
        body += &format!("g2 = 1 at alpha = {}\n", num(cross));
    }
    report(art, "fig1_report.txt", &body)
}

fn fig3(cfg: &RunConfig, art: &mut Artifacts, n: u64) -> Result<(), CliError> {
    let out = chain(cfg)?;
    let est = Estimator::new(&out.cell, cfg.statistics.a)?;
    let crit = critical_chi0_tol(
        cfg.statistics.epsilon,
        n,
        &est,
        &cfg.classical_search(),
        &cfg.summation_limits(),
        cfg.statistics.chi0_rel_tol,
    )?;
    let t = est.coeffs;
    let (k1, k2, k3) = ((t.c / t.b).sqrt(), t.d / (t.c * t.b).sqrt(), (t.b / t.c).sqrt());
    let q = out.cell;
    let classical = eyewitness::statistics::CellProbabilities::coherent(est.ps_cl)?;
    let (xq, yq) = t.to_xy(q.ps * q.ps, q.pc);
    let (xc, yc) = t.to_xy(classical.ps * classical.ps, classical.pc);
    let sigma = (k3 * k3 * q.pc * (1.0 - q.pc) / n as f64).sqrt();
    let (xmid, ymid) = (0.5 * (xq + xc), 0.5 * (yq + yc));
    let half = 6.0 * sigma + 0.5 * ((xq - xc).abs().max((yq - yc).abs()));
    let nf = n as f64;
    let mut rows = Vec::new();
    for x in linspace(xmid - half, xmid + half, 121) {
        for y in linspace(ymid - half, ymid + half, 121) {
            let v = y / k3;
            let u = (x - k2 * v) / k1;
            let (ns, nc) = ((u.max(0.0).sqrt() * nf).round(), (v * nf).round());
            let valid = u >= 0.0 && nc >= 0.0 && nc <= ns && ns <= nf;
            let lp = |cell| {
                if valid {
                    multinomial_log_pmf(ns as u64, nc as u64, n, cell).unwrap_or(f64::NEG_INFINITY)
                } else {
                    f64::NEG_INFINITY
                }
            };
            let (xr, yr) = t.rotate(x, y);
            let dx = xr - est.center.0;
            let chi = yr - est.center.1 + est.a * dx * dx;
            rows.push(vec![num(x), num(y), num(lp(&q)), num(lp(&classical)), num(chi)]);
        }
    }
    art.csv(
        "fig3_grid.csv",
        &["x", "y", "log_p_quantum", "log_p_classical", "chi"],
        rows,
    )?;
    // coherent boundary pc = ps^2 and the estimator contour chi = chi0
    let boundary = linspace((est.ps_cl - 0.05).max(0.0), (est.ps_cl + 0.05).min(1.0), 201)
        .into_iter()
        .map(|ps| {
            let (x, y) = t.to_xy(ps * ps, ps * ps);
            vec![num(ps), num(x), num(y)]
        });
    art.csv("fig3_boundary.csv", &["ps", "x", "y"], boundary)?;
    let (s, c) = t.phi.sin_cos();
    let contour = linspace(est.center.0 - half, est.center.0 + half, 201)
        .into_iter()
        .map(|xr| {
            let dx = xr - est.center.0;
            let yr = est.center.1 + crit.chi0 - est.a * dx * dx;
            vec![num(c * xr - s * yr), num(s * xr + c * yr)]
        });
    art.csv("fig3_estimator.csv", &["x", "y"], contour)?;
    let body = format!(
        "N = {n}: quantum mean (x, y) = ({}, {}), projected coherent mean = ({}, {}), chi0 = {}\n",
        num(xq),
        num(yq),
        num(xc),
        num(yc),
        num(crit.chi0)
    );
    report(art, "fig3_report.txt", &body)
}

fn fig4(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let out = chain(cfg)?;
    let mut rows = Vec::new();
    let mut body = String::new();
    for eps in [0.01, 0.1] {
        let (_, curve) = stop_curve(cfg, &out, eps)?;
        rows.extend(
            curve
                .grid
                .iter()
                .map(|p| vec![num(eps), p.n.to_string(), num(p.p_stop)]),
        );
        body += &format!(
            "epsilon = {eps}: expected runs = {} ({} hours at 1 Hz)\n",
            num(curve.expected_runs),
            num(curve.expected_runs / SECONDS_PER_HOUR)
        );
    }
    art.csv("fig4.csv", &["epsilon", "n", "p_stop"], rows)?;
    report(art, "fig4_report.txt", &body)
}
