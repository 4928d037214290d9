use crate::dispatch::Boundary;
use crate::model::ResourceView;
use crate::solver::{solve, LinearProgram, LpStatus, RowBounds, SolverError, Tag, VarId};

/// Optimal split-variable extensive form: `[k][i][tau]` per quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensiveSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub g_d: Vec<Vec<Vec<f64>>>,
    pub g_c: Vec<Vec<Vec<f64>>>,
    pub soc: Vec<Vec<Vec<f64>>>,
}

/// Scenario-wise extensive form of one window starting at interval `t0`.
/// Every scenario has its own copy of all variables, binding interval
/// included, and non-anticipativity rows tie the binding copies together.
/// Ramp limits are written as one-sided rows and SOC is tracked for every
/// resource.
pub fn extensive_form(
    views: &[ResourceView],
    boundary: &[Boundary],
    t0: usize,
    scenarios: &[(f64, Vec<f64>)],
) -> Result<ExtensiveSolution, SolverError> {
    let len = scenarios[0].1.len();
    let n = views.len();
    let mut lp = LinearProgram::new();
    let idx = |k: usize, i: usize, tau: usize| [k, i * 1000 + tau];
    let mut gd = vec![vec![Vec::<VarId>::new(); n]; scenarios.len()];
    let mut gc = gd.clone();
    let mut e = gd.clone();
    for (k, (p, _)) in scenarios.iter().enumerate() {
        for (i, v) in views.iter().enumerate() {
            let s = &v.spec;
            for tau in 0..len {
                let ix = idx(k, i, tau);
                gd[k][i].push(lp.add_var(Tag::at("x_d", &ix), p * v.curve_d.at(t0 + tau), 0.0, s.cap_d).unwrap());
                gc[k][i].push(lp.add_var(Tag::at("x_c", &ix), -p * v.curve_c.at(t0 + tau), 0.0, s.cap_c).unwrap());
                e[k][i].push(
                    lp.add_var(
                        Tag::at("x_e", &ix),
                        0.0,
                        s.soc_min.unwrap_or(f64::NEG_INFINITY),
                        s.soc_max.unwrap_or(f64::INFINITY),
                    )
                    .unwrap(),
                );
            }
        }
    }
    for (k, (_, path)) in scenarios.iter().enumerate() {
        for (tau, &d) in path.iter().enumerate() {
            let coeffs = (0..n).flat_map(|i| [(gd[k][i][tau], 1.0), (gc[k][i][tau], -1.0)]).collect();
            lp.add_row(Tag::at("bal", &[k, tau]), coeffs, RowBounds::Eq(d)).unwrap();
        }
        for (i, v) in views.iter().enumerate() {
            let s = &v.spec;
            let b = &boundary[i];
            for tau in 0..len {
                let ix = idx(k, i, tau);
                // e_tau - e_{tau-1} - ξC gc + gd/ξD = 0
                let mut coeffs = vec![(e[k][i][tau], 1.0), (gc[k][i][tau], -s.eff_c), (gd[k][i][tau], 1.0 / s.eff_d)];
                let rhs = if tau == 0 {
                    b.soc
                } else {
                    coeffs.push((e[k][i][tau - 1], -1.0));
                    0.0
                };
                lp.add_row(Tag::at("e_bal", &ix), coeffs, RowBounds::Eq(rhs)).unwrap();
                let ramps = [
                    ("up_d", &gd, s.ramps.up_d, 1.0, b.g_d),
                    ("dn_d", &gd, s.ramps.down_d, -1.0, b.g_d),
                    ("up_c", &gc, s.ramps.up_c, 1.0, b.g_c),
                    ("dn_c", &gc, s.ramps.down_c, -1.0, b.g_c),
                ];
                for (name, g, lim, sign, prev) in ramps {
                    let Some(r) = lim else { continue };
                    // sign * (g_tau - g_{tau-1}) <= r
                    if tau == 0 {
                        lp.add_row(Tag::at(name, &ix), vec![(g[k][i][0], sign)], RowBounds::Le(r + sign * prev))
                            .unwrap();
                    } else {
                        lp.add_row(
                            Tag::at(name, &ix),
                            vec![(g[k][i][tau], sign), (g[k][i][tau - 1], -sign)],
                            RowBounds::Le(r),
                        )
                        .unwrap();
                    }
                }
            }
        }
    }
    for k in 1..scenarios.len() {
        for i in 0..n {
            for (name, v) in [("na_d", &gd), ("na_c", &gc)] {
                lp.add_row(Tag::at(name, &[k, i]), vec![(v[k][i][0], 1.0), (v[0][i][0], -1.0)], RowBounds::Eq(0.0))
                    .unwrap();
            }
        }
    }
    let sol = solve(&lp)?;
    let read = |vars: &Vec<Vec<Vec<VarId>>>| -> Vec<Vec<Vec<f64>>> {
        vars.iter()
            .map(|per_i| per_i.iter().map(|v| v.iter().map(|&x| sol.value(x)).collect()).collect())
            .collect()
    };
    Ok(ExtensiveSolution {
        status: sol.status,
        objective: sol.objective,
        g_d: read(&gd),
        g_c: read(&gc),
        soc: read(&e),
    })
}

/// Perfect-foresight dispatch of the whole horizon as a single LP.
pub fn one_shot_dispatch(views: &[ResourceView], boundary: &[Boundary], demand: &[f64]) -> Result<ExtensiveSolution, SolverError> {
    extensive_form(views, boundary, 0, &[(1.0, demand.to_vec())])
}
