//! Implementations of the subcommands. Each returns finished artifacts plus
//! an optional post-check failure; the driver writes the artifacts first so
//! a failed numerical check still leaves the diagnostic data on disk.

use serde_json::json;

use spinlab::analysis::{self, DecayFit};
use spinlab::cluster::{self, ClusterParams};
use spinlab::exact;
use spinlab::leeyang;
use spinlab::model::Site;
use spinlab::transfer;
use spinlab::{Spec64, C64};

use crate::emit::{self, jf, Artifact, Cell, Format, RunMeta, Table};
use crate::{CliError, Command};

pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    /// A numerical check that failed after the artifacts were produced.
    pub failure: Option<CliError>,
}

impl CommandOutput {
    fn ok(artifacts: Vec<Artifact>) -> Self {
        CommandOutput {
            artifacts,
            failure: None,
        }
    }
}

pub struct Ctx<'a> {
    pub spec: &'a Spec64,
    pub meta: &'a RunMeta,
    pub format: Format,
}

impl Ctx<'_> {
    fn table_artifact(&self, table: &Table) -> Result<Artifact, CliError> {
        Ok(Artifact {
            name: format!("{}.{}", self.meta.command, self.format.extension()),
            bytes: emit::render_table(table, self.meta, self.format)?,
        })
    }

    fn report_artifact(&self, body: serde_json::Value) -> Artifact {
        Artifact {
            name: format!("{}.report.json", self.meta.command),
            bytes: emit::render_report(body, self.meta),
        }
    }
}

pub fn dispatch(command: &Command, ctx: &Ctx) -> Result<CommandOutput, CliError> {
    match command {
        Command::Enumerate => enumerate(ctx),
        Command::Ursell {
            families,
            components,
        } => ursell(ctx, families, components.as_deref()),
        Command::TransferScan { re_grid, im_grid } => transfer_scan(ctx, re_grid, im_grid),
        Command::Zeros {
            circle_tol,
            residual_tol,
        } => zeros(ctx, *circle_tol, *residual_tol),
        Command::CheckC1 { u0, kappa_cap } => check_c1(ctx, *u0, *kappa_cap),
        Command::Cluster {
            epsilon,
            order,
            max_x,
            comp_i,
            comp_j,
        } => cluster_cmd(ctx, *epsilon, *order, *max_x, *comp_i, *comp_j),
        Command::MaxPrinciple {
            x,
            m0,
            u0,
            kappa_cap,
            boundary_points,
            interior_points,
        } => max_principle(
            ctx,
            x.as_deref(),
            *m0,
            *u0,
            *kappa_cap,
            *boundary_points,
            *interior_points,
        ),
        Command::TreeDecay {
            families,
            points,
            components,
        } => tree_decay(ctx, families, *points, components.as_deref()),
        Command::RatioScan { re_grid, im_grid } => ratio_scan(ctx, re_grid, im_grid),
    }
}

// ---------------------------------------------------------------------------
// Argument parsing helpers
// ---------------------------------------------------------------------------

/// `"start:stop:count"` → inclusive linear grid.
fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || CliError::Usage(format!("grid {text:?} must be start:stop:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    Ok((0..count)
        .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
        .collect())
}

/// `"1,0"` → site coordinates, checked against the box dimension.
fn parse_site(text: &str, d: usize) -> Result<Site, CliError> {
    let coords: Result<Vec<i64>, _> = text.split(',').map(|c| c.trim().parse::<i64>()).collect();
    let site =
        coords.map_err(|_| CliError::Usage(format!("site {text:?} must be comma-separated integers")))?;
    if site.len() != d {
        return Err(CliError::Usage(format!(
            "site {text:?} has {} coordinates, box has {d}",
            site.len()
        )));
    }
    Ok(site)
}

/// `"0;2;4"` → list of sites.
fn parse_family(text: &str, d: usize) -> Result<Vec<Site>, CliError> {
    text.split(';').map(|s| parse_site(s, d)).collect()
}

fn parse_components(text: Option<&str>, arity: usize) -> Result<Vec<usize>, CliError> {
    match text {
        None => Ok(vec![0; arity]),
        Some(t) => {
            let comps: Result<Vec<usize>, _> =
                t.split(',').map(|c| c.trim().parse::<usize>()).collect();
            let comps = comps.map_err(|_| {
                CliError::Usage(format!("components {t:?} must be comma-separated indices"))
            })?;
            if comps.len() != arity {
                return Err(CliError::Usage(format!(
                    "{} component indices supplied for {arity} slots",
                    comps.len()
                )));
            }
            Ok(comps)
        }
    }
}

fn family_label(family: &[Site]) -> String {
    family
        .iter()
        .map(|site| {
            site.iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Axis-0 site `x·e₁` in a `d`-dimensional box.
fn axis_site(x: i64, d: usize) -> Site {
    let mut site = vec![0i64; d];
    site[0] = x;
    site
}

// ---------------------------------------------------------------------------
// enumerate
// ---------------------------------------------------------------------------

fn enumerate(ctx: &Ctx) -> Result<CommandOutput, CliError> {
    let model = ctx.spec.clone().validate()?;
    let z = exact::partition_function(&model, |_| C64::new(1.0, 0.0))?;
    let mut table = Table::new(vec!["sites", "z_re", "z_im", "abs_z", "log_abs_z"]);
    table.push(vec![
        Cell::U(model.site_count() as u64),
        Cell::F(z.re),
        Cell::F(z.im),
        Cell::F(z.norm()),
        Cell::F(z.norm().ln()),
    ]);
    println!(
        "enumerate: {} sites, Z = {:.6e} + {:.6e}i, |Z| = {:.6e}",
        model.site_count(),
        z.re,
        z.im,
        z.norm()
    );
    Ok(CommandOutput::ok(vec![ctx.table_artifact(&table)?]))
}

// ---------------------------------------------------------------------------
// ursell
// ---------------------------------------------------------------------------

fn ursell(
    ctx: &Ctx,
    family_args: &[String],
    components: Option<&str>,
) -> Result<CommandOutput, CliError> {
    let model = ctx.spec.clone().validate()?;
    let d = model.lattice().d();
    let families: Vec<Vec<Site>> = if family_args.is_empty() {
        if d != 1 {
            return Err(CliError::Usage(
                "pass --family at least once (default pair families exist only for chains)"
                    .into(),
            ));
        }
        let length = model.lattice().dims()[0] as i64;
        (1..length)
            .map(|x| vec![axis_site(0, 1), axis_site(x, 1)])
            .collect()
    } else {
        family_args
            .iter()
            .map(|f| parse_family(f, d))
            .collect::<Result<_, _>>()?
    };
    let mut table = Table::new(vec![
        "family",
        "n",
        "tree_length",
        "value_re",
        "value_im",
        "abs_value",
        "cancellation",
    ]);
    for family in &families {
        let comps = parse_components(components, family.len())?;
        let slots: Vec<(usize, usize)> = family
            .iter()
            .zip(comps.iter())
            .map(|(site, &comp)| {
                model
                    .lattice()
                    .index_of(site)
                    .map(|idx| (idx, comp))
                    .ok_or_else(|| {
                        CliError::Usage(format!("site {site:?} lies outside the box"))
                    })
            })
            .collect::<Result<_, _>>()?;
        let result = exact::ursell(&model, &slots)?;
        let ell = analysis::tree_length(family);
        println!(
            "ursell: [{}] ℓ = {}, u = {:.6e} + {:.6e}i",
            family_label(family),
            ell,
            result.value.re,
            result.value.im
        );
        table.push(vec![
            Cell::S(family_label(family)),
            Cell::U(family.len() as u64),
            Cell::U(ell),
            Cell::F(result.value.re),
            Cell::F(result.value.im),
            Cell::F(result.value.norm()),
            Cell::F(result.cancellation),
        ]);
    }
    Ok(CommandOutput::ok(vec![ctx.table_artifact(&table)?]))
}

// ---------------------------------------------------------------------------
// transfer-scan
// ---------------------------------------------------------------------------

fn transfer_scan(ctx: &Ctx, re_grid: &str, im_grid: &str) -> Result<CommandOutput, CliError> {
    let res = parse_grid(re_grid)?;
    let ims = parse_grid(im_grid)?;
    let grid: Vec<C64> = ims
        .iter()
        .flat_map(|&im| res.iter().map(move |&re| C64::new(re, im)))
        .collect();
    let rows: Vec<(C64, f64, f64, f64)> = {
        use rayon::prelude::*;
        grid.par_iter()
            .map(|&h| -> Result<_, CliError> {
                let model = ctx.spec.with_field(h).validate()?;
                let operator = transfer::build_transfer(&model)?;
                let mut eigs = operator.eigenvalues()?;
                eigs.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
                let gap = transfer::mass_gap_of_eigenvalues(&eigs)?;
                let l1 = eigs.first().map(|e| e.norm()).unwrap_or(0.0);
                let l2 = eigs.get(1).map(|e| e.norm()).unwrap_or(0.0);
                Ok((h, l1, l2, gap))
            })
            .collect::<Result<_, _>>()?
    };
    let mut table = Table::new(vec!["h_re", "h_im", "lambda1_abs", "lambda2_abs", "m"]);
    for (h, l1, l2, gap) in &rows {
        println!(
            "transfer-scan: h = {:.4} + {:.4}i, m = {:.6e}",
            h.re, h.im, gap
        );
        table.push(vec![
            Cell::F(h.re),
            Cell::F(h.im),
            Cell::F(*l1),
            Cell::F(*l2),
            Cell::F(*gap),
        ]);
    }
    Ok(CommandOutput::ok(vec![ctx.table_artifact(&table)?]))
}

// ---------------------------------------------------------------------------
// zeros
// ---------------------------------------------------------------------------

fn zeros(ctx: &Ctx, circle_tol: f64, residual_tol: f64) -> Result<CommandOutput, CliError> {
    let model = ctx.spec.clone().validate()?;
    let polynomial = leeyang::fugacity_polynomial(&model)?;
    let mut roots = polynomial.zeros()?;
    roots.sort_by(|a, b| {
        (a.z.re, a.z.im)
            .partial_cmp(&(b.z.re, b.z.im))
            .expect("root coordinates are finite")
    });
    let mut table = Table::new(vec![
        "index",
        "z_re",
        "z_im",
        "abs_z",
        "circle_defect",
        "residual",
    ]);
    let mut violations = 0usize;
    for (index, root) in roots.iter().enumerate() {
        let defect = (root.z.norm() - 1.0).abs();
        if defect > circle_tol || root.residual > residual_tol {
            violations += 1;
        }
        println!(
            "zeros: root {index}: z = {:.10} + {:.10}i, ||z|-1| = {:.3e}, residual = {:.3e}",
            root.z.re, root.z.im, defect, root.residual
        );
        table.push(vec![
            Cell::U(index as u64),
            Cell::F(root.z.re),
            Cell::F(root.z.im),
            Cell::F(root.z.norm()),
            Cell::F(defect),
            Cell::F(root.residual),
        ]);
    }
    let max_defect = roots
        .iter()
        .map(|r| (r.z.norm() - 1.0).abs())
        .fold(0.0f64, f64::max);
    let max_residual = roots.iter().map(|r| r.residual).fold(0.0f64, f64::max);
    let body = json!({
        "circle_tol": jf(circle_tol),
        "residual_tol": jf(residual_tol),
        "n_roots": roots.len(),
        "max_circle_defect": jf(max_defect),
        "max_residual": jf(max_residual),
        "violations": violations,
    });
    let artifacts = vec![ctx.table_artifact(&table)?, ctx.report_artifact(body)];
    let failure = (violations > 0).then(|| CliError::CheckFailure {
        check: "lee-yang-circle".into(),
        detail: format!(
            "{violations} of {} roots violate ||z|-1| ≤ {circle_tol:e} or residual ≤ {residual_tol:e}",
            roots.len()
        ),
    });
    Ok(CommandOutput { artifacts, failure })
}

// ---------------------------------------------------------------------------
// check-c1
// ---------------------------------------------------------------------------

fn check_c1(ctx: &Ctx, u0: Option<f64>, kappa_cap: f64) -> Result<CommandOutput, CliError> {
    let u0 = u0.unwrap_or_else(|| {
        if ctx.spec.field.re > 0.0 {
            ctx.spec.field.re
        } else {
            1.0
        }
    });
    let certificate = leeyang::find_wedge_params(&ctx.spec.measure, u0, kappa_cap)?;
    println!(
        "check-c1: κ = {:.6} ≤ {kappa_cap} at ũ = {:.6}, α̃ = {:.6}",
        certificate.kappa, certificate.u_tilde, certificate.alpha_tilde
    );
    let body = json!({
        "kappa_cap": jf(kappa_cap),
        "certificate": serde_json::to_value(&certificate).expect("certificate serializes"),
    });
    Ok(CommandOutput::ok(vec![ctx.report_artifact(body)]))
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

fn cluster_cmd(
    ctx: &Ctx,
    epsilon: f64,
    order: usize,
    max_x: i64,
    comp_i: usize,
    comp_j: usize,
) -> Result<CommandOutput, CliError> {
    let certificate = cluster::find_eta(ctx.spec, epsilon, 3)?;
    let model = ctx.spec.clone().validate()?;
    let params = ClusterParams::from(&certificate);
    let d = model.lattice().d();
    let origin_index = model
        .lattice()
        .index_of(&vec![0; d])
        .expect("origin is in every box");
    let mut table = Table::new(vec![
        "x",
        "value_re",
        "value_im",
        "tail_bound",
        "exact_re",
        "exact_im",
        "abs_error",
    ]);
    let mut worst: Option<(i64, f64, f64)> = None;
    for x in 1..=max_x {
        let site = axis_site(x, d);
        let target_index = model.lattice().index_of(&site).ok_or_else(|| {
            CliError::Usage(format!("separation {x} leaves the configured box"))
        })?;
        let truncated = cluster::cluster_two_point(&model, &site, &params, order, comp_i, comp_j)?;
        let reference = exact::connected_two_point(&model, origin_index, target_index, comp_i, comp_j)?;
        let error = (truncated.value - reference).norm();
        if error > truncated.tail_bound && worst.map_or(true, |(_, e, _)| error > e) {
            worst = Some((x, error, truncated.tail_bound));
        }
        println!(
            "cluster: x = {x}, value = {:.6e} + {:.6e}i, |error| = {:.3e}, tail ≤ {:.3e}",
            truncated.value.re, truncated.value.im, error, truncated.tail_bound
        );
        table.push(vec![
            Cell::I(x),
            Cell::F(truncated.value.re),
            Cell::F(truncated.value.im),
            Cell::F(truncated.tail_bound),
            Cell::F(reference.re),
            Cell::F(reference.im),
            Cell::F(error),
        ]);
    }
    let body = json!({
        "epsilon": jf(certificate.epsilon),
        "eta": jf(certificate.eta),
        "tau": jf(certificate.tau),
        "delta": jf(certificate.delta),
        "order": order,
        "activity_sums": certificate.sums.iter().map(|&s| jf(s)).collect::<Vec<_>>(),
        "field_cap": jf(certificate.field_cap),
    });
    let artifacts = vec![ctx.table_artifact(&table)?, ctx.report_artifact(body)];
    let failure = worst.map(|(x, error, tail)| CliError::CheckFailure {
        check: "cluster-tail".into(),
        detail: format!("at x = {x} the truncation error {error:e} exceeds the tail bound {tail:e}"),
    });
    Ok(CommandOutput { artifacts, failure })
}

// ---------------------------------------------------------------------------
// max-principle
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn max_principle(
    ctx: &Ctx,
    x: Option<&str>,
    m0: Option<f64>,
    u0: Option<f64>,
    kappa_cap: f64,
    boundary_points: usize,
    interior_points: usize,
) -> Result<CommandOutput, CliError> {
    let d = ctx.spec.lattice.d();
    let x: Site = match x {
        Some(text) => parse_site(text, d)?,
        None if d == 1 => axis_site(ctx.spec.lattice.dims()[0] as i64 / 2, 1),
        None => {
            return Err(CliError::Usage(
                "pass --x <site>: no default target site outside chains".into(),
            ))
        }
    };
    let h = ctx.spec.field;
    let m0 = match m0 {
        Some(value) => value,
        None => {
            let model = ctx.spec.clone().validate()?;
            transfer::spectral_mass_gap(&model)?
        }
    };
    if !(m0 > 0.0) || !m0.is_finite() {
        return Err(CliError::Usage(format!(
            "mass-gap lower bound m0 = {m0} must be positive and finite; pass --m0"
        )));
    }
    let u0 = u0.unwrap_or_else(|| h.re.max(1.0));
    let certificate = leeyang::find_wedge_params(&ctx.spec.measure, u0, kappa_cap)?;
    let params = analysis::select_parameters(h, &certificate, m0)?;
    let domain = params.domain()?;
    let report = analysis::max_principle_check(
        ctx.spec,
        &x,
        &domain,
        params.epsilon,
        boundary_points,
        interior_points,
    )?;
    println!(
        "max-principle: boundary max {:.6e} ≥ interior max {:.6e} (margin {:.3e}, {} / {} points{})",
        report.boundary_max,
        report.interior_max,
        report.margin,
        report.boundary_points,
        report.interior_points,
        if report.refined { ", refined" } else { "" }
    );
    let body = json!({
        "x": x,
        "m0": jf(m0),
        "certificate": serde_json::to_value(&certificate).expect("certificate serializes"),
        "parameters": {
            "alpha": jf(params.alpha),
            "delta": jf(params.delta),
            "eta": jf(params.eta),
            "epsilon": jf(params.epsilon),
        },
        "check": {
            "boundary_max": jf(report.boundary_max),
            "interior_max": jf(report.interior_max),
            "margin": jf(report.margin),
            "boundary_argmax_re": jf(report.boundary_argmax.re),
            "boundary_argmax_im": jf(report.boundary_argmax.im),
            "interior_argmax_re": jf(report.interior_argmax.re),
            "interior_argmax_im": jf(report.interior_argmax.im),
            "boundary_points": report.boundary_points,
            "interior_points": report.interior_points,
            "refined": report.refined,
        },
    });
    Ok(CommandOutput::ok(vec![ctx.report_artifact(body)]))
}

// ---------------------------------------------------------------------------
// tree-decay
// ---------------------------------------------------------------------------

/// Centered collinear n-point families of growing spread on a chain of
/// `length` sites: for each total spread k the family splits k into n−1
/// near-equal consecutive gaps.
fn default_chain_families(length: i64, n: usize) -> Vec<Vec<Site>> {
    let mut families = Vec::new();
    for k in (n as i64 - 1)..length {
        let a = (length - 1 - k) / 2;
        let mut family = Vec::with_capacity(n);
        for slot in 0..n {
            let offset = k * slot as i64 / (n as i64 - 1);
            family.push(axis_site(a + offset, 1));
        }
        family.dedup();
        if family.len() == n {
            families.push(family);
        }
    }
    families
}

fn tree_decay(
    ctx: &Ctx,
    family_args: &[String],
    points: usize,
    components: Option<&str>,
) -> Result<CommandOutput, CliError> {
    let model = ctx.spec.clone().validate()?;
    let d = model.lattice().d();
    let families: Vec<Vec<Site>> = if family_args.is_empty() {
        if d != 1 {
            return Err(CliError::Usage(
                "pass --family at least once (default families exist only for chains)".into(),
            ));
        }
        default_chain_families(model.lattice().dims()[0] as i64, points)
    } else {
        family_args
            .iter()
            .map(|f| parse_family(f, d))
            .collect::<Result<_, _>>()?
    };
    if families.is_empty() {
        return Err(CliError::Usage(
            "no point families: the box is too small for the requested arity".into(),
        ));
    }
    let arity = families[0].len();
    if families.iter().any(|f| f.len() != arity) {
        return Err(CliError::Usage(
            "all families must share one arity (one components list applies to all)".into(),
        ));
    }
    let comps = parse_components(components, arity)?;

    let mut table = Table::new(vec![
        "family",
        "tree_length",
        "u_re",
        "u_im",
        "abs_u",
        "cancellation",
    ]);
    for family in &families {
        let slots: Vec<(usize, usize)> = family
            .iter()
            .zip(comps.iter())
            .map(|(site, &comp)| {
                model
                    .lattice()
                    .index_of(site)
                    .map(|idx| (idx, comp))
                    .ok_or_else(|| {
                        CliError::Usage(format!("site {site:?} lies outside the box"))
                    })
            })
            .collect::<Result<_, _>>()?;
        let result = exact::ursell(&model, &slots)?;
        let ell = analysis::tree_length(family);
        println!(
            "tree-decay: [{}] ℓ = {ell}, |u| = {:.6e}",
            family_label(family),
            result.value.norm()
        );
        table.push(vec![
            Cell::S(family_label(family)),
            Cell::U(ell),
            Cell::F(result.value.re),
            Cell::F(result.value.im),
            Cell::F(result.value.norm()),
            Cell::F(result.cancellation),
        ]);
    }

    let fit = analysis::tree_decay_fit(&model, &families, &comps)?;
    println!(
        "tree-decay: slope = {:.6e}, intercept = {:.6e}, residual RMS = {:.3e}",
        fit.slope, fit.intercept, fit.residual
    );
    let body = fit_report(&fit);
    let artifacts = vec![ctx.table_artifact(&table)?, ctx.report_artifact(body)];
    Ok(CommandOutput::ok(artifacts))
}

/// Serialized fit, including the envelope constant: the smallest c with
/// `|u| ≤ c·e^{−slope·ℓ}` across the fitted samples, so the reported pair
/// (slope, c) bounds every value from above.
fn fit_report(fit: &DecayFit<f64>) -> serde_json::Value {
    let envelope_log_c = fit
        .samples
        .iter()
        .map(|&(ell, neg_log)| fit.slope * ell - neg_log)
        .fold(f64::NEG_INFINITY, f64::max);
    json!({
        "slope": jf(fit.slope),
        "intercept": jf(fit.intercept),
        "residual": jf(fit.residual),
        "window": [fit.window.0, fit.window.1],
        "envelope_log_c": jf(envelope_log_c),
        "samples": fit
            .samples
            .iter()
            .map(|&(x, y)| json!([jf(x), jf(y)]))
            .collect::<Vec<_>>(),
    })
}

// ---------------------------------------------------------------------------
// ratio-scan
// ---------------------------------------------------------------------------

fn ratio_scan(ctx: &Ctx, re_grid: &str, im_grid: &str) -> Result<CommandOutput, CliError> {
    let res = parse_grid(re_grid)?;
    let ims = parse_grid(im_grid)?;
    let grid: Vec<C64> = ims
        .iter()
        .flat_map(|&im| res.iter().map(move |&re| C64::new(re, im)))
        .collect();
    let scan = analysis::ratio_scan(ctx.spec, &grid)?;
    let mut table = Table::new(vec!["h_re", "h_im", "m", "ratio"]);
    for row in &scan.rows {
        println!(
            "ratio-scan: h = {:.4} + {:.4}i, m = {:.6e}, m/Re h = {:.6e}",
            row.h.re, row.h.im, row.mass_gap, row.ratio
        );
        table.push(vec![
            Cell::F(row.h.re),
            Cell::F(row.h.im),
            Cell::F(row.mass_gap),
            Cell::F(row.ratio),
        ]);
    }
    println!("ratio-scan: infimum m/Re h = {:.6e}", scan.infimum);
    let body = json!({
        "infimum": jf(scan.infimum),
        "rows": scan.rows.len(),
    });
    let artifacts = vec![ctx.table_artifact(&table)?, ctx.report_artifact(body)];
    Ok(CommandOutput::ok(artifacts))
}
