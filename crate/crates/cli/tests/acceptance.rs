//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the shipped configs through the `bolm` binary and checks the
//! property criteria against the library directly. The process exits
//! non-zero when a criterion outside `EXPECTED_FAILURES` fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use bolm_core::estimator::{default_start, fit, penalized_score, FitOptions};
use bolm_core::inference::{embed_reduced, gray_null_weights, weighted_chisq_pvalue};
use bolm_core::link::{eta_to_pi, pi_to_eta};
use bolm_core::model::{build_design_matrix, Dataset, Group, ModelSpec, OrdinalPair, Term, INTERCEPT};
use bolm_core::penalty::{
    arc2_limit_structure, build_ordering_penalty, build_penalty_matrix, Arc2Terms, Lambdas, OrderedLambda,
    SurfaceLambda,
};
use bolm_core::simulation::{replicate_rng, sample_dataset, GeneratingModel};
use bolm_core::{Equation, PenaltyConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// Criteria known to fail with the shipped implementation.
const EXPECTED_FAILURES: &[&str] = &["4", "6g"];

type Check = fn() -> (bool, String);

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bolm(cmd: &str, config: &str, out: &Path) -> (String, f64) {
    let t = Instant::now();
    let res = Command::new(env!("CARGO_BIN_EXE_bolm"))
        .arg(cmd)
        .arg("--config")
        .arg(root().join("configs").join(config))
        .arg("--out")
        .arg(out)
        .output()
        .expect("run bolm");
    assert!(
        res.status.success(),
        "bolm {cmd} {config} failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    (String::from_utf8(res.stdout).unwrap(), t.elapsed().as_secs_f64())
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .collect::<Result<Vec<_>, _>>()
        .unwrap()
}

fn num(rec: &csv::StringRecord, k: usize) -> f64 {
    rec[k].parse().unwrap()
}

fn os_data() -> Dataset {
    let text = std::fs::read_to_string(root().join("data/occupational_status.txt")).unwrap();
    let counts: Vec<u64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace().map(|t| t.parse::<u64>().unwrap()).collect::<Vec<_>>())
        .collect();
    Dataset::from_table(OrdinalPair::new(7, 7).unwrap(), counts).unwrap()
}

fn c1_empirical() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let (stdout, secs) = bolm("empirical", "liver_empirical.json", dir.path());
    let grid: Vec<Vec<String>> = stdout
        .lines()
        .skip(1)
        .map(|l| l.split('\t').skip(1).map(str::to_string).collect())
        .collect();
    let got = [&grid[0][0], &grid[0][1], &grid[1][0], &grid[1][1]];
    let ok = got == [&"1.72", &"inf", &"3.18", &"3.31"] && secs < 1.0;
    (ok, format!("grid {got:?}, {secs:.2} s"))
}

fn c2_model_ladder() -> (bool, String) {
    let rows = [
        ("os_independence.json", 36, 897.52, 23081.12),
        ("os_uniform.json", 35, 207.22, 22392.83),
        ("os_arc2_s2.json", 32, 55.85, 22247.46),
        ("os_arc2_s3.json", 27, 38.36, 22239.96),
        ("os_arc2_s4.json", 20, 22.74, 22238.34),
        ("os_saturated.json", 0, 0.00, 22255.60),
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut total = 0.0;
    let mut worst = (0.0f64, 0.0f64);
    for (k, (cfg, df, g2, aic)) in rows.iter().enumerate() {
        let out = dir.path().join(k.to_string());
        let (_, secs) = bolm("fit", cfg, &out);
        total += secs;
        let r: Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit_report.json")).unwrap()).unwrap();
        let dg = (r["deviance_g2"].as_f64().unwrap() - g2).abs();
        let da = (r["aic"].as_f64().unwrap() - aic).abs();
        worst = (worst.0.max(dg), worst.1.max(da));
        ok &= r["residual_df"].as_i64() == Some(*df) && dg <= 0.5 && da <= 1.0;
        ok &= r["convergence"]["converged"].as_bool() == Some(true);
    }
    ok &= total < 60.0;
    (ok, format!("max |dG2| {:.3}, max |dAIC| {:.3}, {total:.1} s", worst.0, worst.1))
}

fn c3_profile() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let (_, secs) = bolm("profile", "os_profile.json", &dir.path().join("p"));
    let (_, _) = bolm("fit", "os_uniform.json", &dir.path().join("u"));
    let upom: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("u/fit_report.json")).unwrap()).unwrap();
    let upom_aic = upom["aic"].as_f64().unwrap();
    let recs = read_csv(&dir.path().join("p/profile.csv"));
    let converged: Vec<_> = recs.iter().filter(|r| &r[5] == "converged").collect();
    let s1_limit = converged
        .iter()
        .filter(|r| &r[0] == "1")
        .max_by(|a, b| num(a, 4).total_cmp(&num(b, 4)))
        .map(|r| num(r, 2))
        .unwrap();
    let best = converged.iter().min_by(|a, b| num(a, 2).total_cmp(&num(b, 2))).unwrap();
    let (best_s, best_aic) = (&best[0], num(best, 2));
    let ok = (s1_limit - upom_aic).abs() <= 0.5 && best_aic <= 22238.0 && best_s == "3" && secs < 600.0;
    (
        ok,
        format!(
            "s=1 limit {s1_limit:.2} vs UPOM {upom_aic:.2}; minimum {best_aic:.2} at s={best_s}, log10 lambda {}; {} points, {secs:.1} s",
            &best[1],
            recs.len()
        ),
    )
}

fn c4_lrp_null() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let (_, secs) = bolm("simulate", "lrp_null.json", dir.path());
    let recs = read_csv(&dir.path().join("lrp_null_summary.csv"));
    let rate = |lambda: &str| recs.iter().find(|r| &r[0] == lambda).map(|r| num(r, 4)).unwrap();
    let (r0, r1, r50) = (rate("0"), rate("1"), rate("50"));
    let band = |r: f64| (0.03..=0.07).contains(&r);
    let ok = band(r0) && band(r1) && r50 <= 0.01 && secs < 1800.0;
    (ok, format!("rejection at lambda 0/1/50: {r0:.4} / {r1:.4} / {r50:.4}; {secs:.1} s"))
}

fn c5_loss_benchmark() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let (_, secs) = bolm("simulate", "loss_benchmark.json", dir.path());
    let recs = read_csv(&dir.path().join("loss_benchmark_summary.csv"));
    let upom = recs.iter().find(|r| &r[0] == "UPOM").unwrap();
    let nun: Vec<_> = recs.iter().filter(|r| &r[0] == "NUNPOM").collect();
    let fss: Vec<usize> = nun.iter().map(|r| r[6].parse().unwrap()).collect();
    let mut ok = upom[6].parse::<usize>().unwrap() == 100;
    ok &= fss.windows(2).all(|w| w[0] <= w[1]);
    let row = |l: &str| nun.iter().find(|r| &r[1] == l).unwrap();
    for l in ["0", "1", "10"] {
        for k in 2..=4 {
            ok &= num(row(l), k) < num(upom, k);
        }
    }
    let (a0, a10) = (num(row("0"), 5), num(row("10"), 5));
    ok &= a0 > a10 && secs < 1200.0;
    (ok, format!("FSS {fss:?}; mean AIC lambda 0 {a0:.2} vs lambda 10 {a10:.2}; {secs:.1} s"))
}

fn random_table(rng: &mut ChaCha8Rng, d1: usize, d2: usize) -> DMatrix<f64> {
    let t = DMatrix::from_fn(d1, d2, |_, _| rng.random_range(0.01..1.0));
    let s = t.sum();
    t / s
}

fn c6a_round_trip() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (d1, d2) = (rng.random_range(2..=7), rng.random_range(2..=7));
        let pi = random_table(&mut rng, d1, d2);
        let eta = pi_to_eta(&pi).unwrap();
        let back = eta_to_pi(OrdinalPair::new(d1, d2).unwrap(), &eta).unwrap();
        worst = worst.max((back - &pi).amax());
    }
    (worst < 1e-10, format!("max |pi - pi(eta(pi))| = {worst:.2e}"))
}

fn loglik_oracle(beta: &DVector<f64>, ds: &Dataset, spec: &ModelSpec) -> f64 {
    ds.groups()
        .iter()
        .map(|g| {
            let x = build_design_matrix(spec, &g.covariates).unwrap();
            let pi = eta_to_pi(spec.pair(), &(x * beta)).unwrap();
            g.counts.iter().zip(pi.transpose().iter()).map(|(&y, &p)| y as f64 * p.ln()).sum::<f64>()
        })
        .sum()
}

fn random_problem(rng: &mut ChaCha8Rng) -> (ModelSpec, Dataset, DVector<f64>, PenaltyConfig) {
    let pair = OrdinalPair::new(rng.random_range(3..=4), rng.random_range(3..=4)).unwrap();
    let names = vec!["x1".to_string(), "x2".to_string()];
    let terms = std::array::from_fn(|_| bolm_core::model::EquationTerms {
        included: vec![0, 1],
        category_dependent: (0..2).filter(|_| rng.random_bool(0.5)).collect(),
    });
    let spec = ModelSpec::new(pair, names, terms, false).unwrap();
    let groups = (0..5)
        .map(|_| Group {
            covariates: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            counts: (0..pair.cells()).map(|_| rng.random_range(1..25)).collect(),
        })
        .collect();
    let ds = Dataset::new(pair, 2, groups).unwrap();
    let start = default_start(&ds, &spec);
    let beta = loop {
        let b = start.map(|v| v + rng.random_range(-0.15..0.15));
        let feasible = ds.groups().iter().all(|g| {
            let x = build_design_matrix(&spec, &g.covariates).unwrap();
            eta_to_pi(pair, &(x * &b)).is_ok()
        });
        if feasible {
            break b;
        }
    };
    let lambda = 10f64.powf(rng.random_range(-1.0..2.0));
    let entry = |v| [(INTERCEPT.to_string(), v), ("x1".to_string(), v)].into_iter().collect();
    let penalty = match rng.random_range(0..3) {
        0 => PenaltyConfig::Ridge(Lambdas {
            margin1: entry(lambda),
            margin2: entry(lambda),
            association: entry(lambda),
        }),
        1 => PenaltyConfig::Arc1(Lambdas {
            margin1: entry(lambda),
            margin2: entry(lambda),
            association: entry(lambda),
        }),
        _ => PenaltyConfig::Arc2(Arc2Terms {
            association: [(
                INTERCEPT.to_string(),
                SurfaceLambda {
                    lambda_row: lambda,
                    order_row: 2.min(pair.m1() - 1),
                    lambda_col: lambda,
                    order_col: 2.min(pair.m2() - 1),
                },
            )]
            .into(),
            margin1: [(INTERCEPT.to_string(), OrderedLambda { lambda, order: 1 })].into(),
            ..Default::default()
        }),
    };
    (spec, ds, beta, penalty)
}

fn c6b_score() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (spec, ds, beta, cfg) = random_problem(&mut rng);
        let p = build_penalty_matrix(&cfg, &spec).unwrap();
        let lp = |b: &DVector<f64>| loglik_oracle(b, &ds, &spec) - 0.5 * (b.transpose() * &p * b)[0];
        let g = penalized_score(&beta, &ds, &spec, &p).unwrap();
        let fd = DVector::from_fn(beta.len(), |j, _| {
            let h = 1e-5 * beta[j].abs().max(1.0);
            let (mut up, mut dn) = (beta.clone(), beta.clone());
            up[j] += h;
            dn[j] -= h;
            (lp(&up) - lp(&dn)) / (2.0 * h)
        });
        worst = worst.max((&fd - &g).amax() / g.amax().max(1.0));
    }
    (worst < 1e-5, format!("max relative error {worst:.2e} over 50 problems"))
}

/// `order`-th differences of `v` by repeated first differencing.
fn diff_n(v: &[f64], order: usize) -> Vec<f64> {
    let mut d = v.to_vec();
    for _ in 0..order {
        d = d.windows(2).map(|w| w[1] - w[0]).collect();
    }
    d
}

fn c6c_quadratic_forms() -> (bool, String) {
    let pair = OrdinalPair::new(4, 4).unwrap();
    let spec = ModelSpec::nunpom(pair, vec!["x1".into(), "x2".into()]).unwrap();
    let layout = spec.layout();
    let block = |eq, term| layout.block(eq, term).unwrap().range();
    let lambdas = Lambdas {
        margin1: [(INTERCEPT.to_string(), 2.0), ("x1".to_string(), 0.5)].into(),
        margin2: [("x2".to_string(), 3.0)].into(),
        association: [(INTERCEPT.to_string(), 1.5), ("x1".to_string(), 4.0)].into(),
    };
    let weighted: Vec<(std::ops::Range<usize>, f64)> = vec![
        (block(Equation::Margin1, Term::Intercept), 2.0),
        (block(Equation::Margin1, Term::Covariate(0)), 0.5),
        (block(Equation::Margin2, Term::Covariate(1)), 3.0),
        (block(Equation::Association, Term::Intercept), 1.5),
        (block(Equation::Association, Term::Covariate(0)), 4.0),
    ];
    let arc2 = Arc2Terms {
        margin1: [("x2".to_string(), OrderedLambda { lambda: 2.5, order: 2 })].into(),
        association: [(
            INTERCEPT.to_string(),
            SurfaceLambda {
                lambda_row: 1.5,
                order_row: 2,
                lambda_col: 0.7,
                order_col: 1,
            },
        )]
        .into(),
        ..Default::default()
    };
    let m_ridge = build_penalty_matrix(&PenaltyConfig::Ridge(lambdas.clone()), &spec).unwrap();
    let m_arc1 = build_penalty_matrix(&PenaltyConfig::Arc1(lambdas), &spec).unwrap();
    let m_arc2 = build_penalty_matrix(&PenaltyConfig::Arc2(arc2), &spec).unwrap();

    let groups: Vec<Group> = (0..4)
        .map(|k| Group {
            covariates: vec![k as f64 - 1.5, (k * k) as f64 * 0.3],
            counts: (0..16).map(|c| 1 + ((c + 3 * k) % 5) as u64).collect(),
        })
        .collect();
    let ds = Dataset::new(pair, 2, groups).unwrap();
    let (l1, l2) = (3.0, 0.25);

    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let mut worst = 0.0f64;
    let mut active = 0usize;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..100 {
        let beta = DVector::from_fn(spec.n_params(), |_, _| rng.random_range(-2.0..2.0));
        let quad = |m: &DMatrix<f64>| (beta.transpose() * m * &beta)[0];

        let ridge: f64 = weighted.iter().map(|(r, l)| l * beta.rows(r.start, r.len()).norm_squared()).sum();
        let arc1: f64 = weighted
            .iter()
            .map(|(r, l)| l * diff_n(beta.rows(r.start, r.len()).as_slice(), 1).iter().map(|d| d * d).sum::<f64>())
            .sum();
        let m1x2 = block(Equation::Margin1, Term::Covariate(1));
        let mut arc2_sum = 2.5 * diff_n(beta.rows(m1x2.start, m1x2.len()).as_slice(), 2).iter().map(|d| d * d).sum::<f64>();
        let a0 = block(Equation::Association, Term::Intercept).start;
        let cell = |r: usize, c: usize| beta[a0 + r * 3 + c];
        for c in 0..3 {
            let col: Vec<f64> = (0..3).map(|r| cell(r, c)).collect();
            arc2_sum += 1.5 * diff_n(&col, 2).iter().map(|d| d * d).sum::<f64>();
        }
        for r in 0..3 {
            let row: Vec<f64> = (0..3).map(|c| cell(r, c)).collect();
            arc2_sum += 0.7 * diff_n(&row, 1).iter().map(|d| d * d).sum::<f64>();
        }
        let mut ordering = 0.0;
        for g in ds.groups() {
            let eta = build_design_matrix(&spec, &g.covariates).unwrap() * &beta;
            for (eq, lambda) in [(Equation::Margin1, l1), (Equation::Margin2, l2)] {
                let off = pair.eta_offset(eq);
                for r in 1..pair.equation_len(eq) {
                    let step = eta[off + r] - eta[off + r - 1];
                    if step <= 0.0 {
                        ordering += lambda * g.total() as f64 * step * step;
                        active += 1;
                    }
                }
            }
        }
        let m_ord = build_ordering_penalty(&spec, &ds, &beta, l1, l2).unwrap();
        worst = worst
            .max(rel(quad(&m_ridge), ridge))
            .max(rel(quad(&m_arc1), arc1))
            .max(rel(quad(&m_arc2), arc2_sum))
            .max(rel(quad(&m_ord), ordering));
    }
    (
        worst < 1e-12 && active > 0,
        format!("max relative gap {worst:.2e}; {active} violated orderings exercised"),
    )
}

fn lrp_sample(seed: u64) -> (GeneratingModel, Dataset) {
    let gm = GeneratingModel::lrp_null_design(400);
    let s = sample_dataset(&gm, &mut replicate_rng(seed, 0)).unwrap();
    (gm, s.dataset)
}

fn c6d_arc1_limit() -> (bool, String) {
    let (gm, ds) = lrp_sample(64);
    let names = gm.spec().covariate_names().to_vec();
    let nunpom = gm.spec().clone();
    let upom = ModelSpec::upom(nunpom.pair(), names).unwrap();
    let l = 1e10;
    let all = [(INTERCEPT.to_string(), l), ("x1".to_string(), l)];
    let cfg = PenaltyConfig::Arc1(Lambdas {
        margin1: [("x1".to_string(), l)].into(),
        margin2: [("x1".to_string(), l)].into(),
        association: all.into(),
    });
    let opts = FitOptions::default();
    let stiff = fit(&ds, &nunpom, &cfg, &opts).unwrap();
    let plain = fit(&ds, &upom, &PenaltyConfig::None, &opts).unwrap();
    let (embedded, _) = embed_reduced(&nunpom, &upom, &plain.beta_hat).unwrap();
    let dl = (stiff.loglik - plain.loglik).abs();
    let db = (&stiff.beta_hat - embedded).amax();
    (
        stiff.converged && plain.converged && dl < 1e-3 && db < 1e-4,
        format!("|dl| {dl:.2e}, max |dbeta| {db:.2e}"),
    )
}

fn c6e_arc2_span() -> (bool, String) {
    let ds = os_data();
    let pair = ds.pair();
    let spec = ModelSpec::intercept_only(pair);
    let a0 = spec.layout().block(Equation::Association, Term::Intercept).unwrap().offset;
    let mut worst = 0.0f64;
    let mut ok = true;
    for s in [2, 3, 4] {
        let cfg = PenaltyConfig::Arc2(Arc2Terms {
            association: [(INTERCEPT.to_string(), SurfaceLambda::symmetric(1e8, s))].into(),
            ..Default::default()
        });
        let f = fit(&ds, &spec, &cfg, &FitOptions::default()).unwrap();
        ok &= f.converged;
        let surface = f.beta_hat.rows(a0, pair.m3()).clone_owned();
        let basis = arc2_limit_structure(s, s).basis(pair);
        let coef = basis.clone().svd(true, true).solve(&surface, 1e-12).unwrap();
        worst = worst.max((basis * coef - surface).amax());
    }
    (ok && worst < 1e-4, format!("max projection residual {worst:.2e} for s = 2, 3, 4"))
}

fn chi2_3_sf(x: f64) -> f64 {
    // closed form for three degrees of freedom
    let z = (x / 2.0).sqrt();
    erfc(z) + (2.0 * x / std::f64::consts::PI).sqrt() * (-x / 2.0).exp()
}

fn erfc(x: f64) -> f64 {
    // continued fraction for x > 0.5, series below
    if x < 0.5 {
        let mut sum = x;
        let mut term = x;
        for n in 1..60 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        let mut f = 0.0;
        for k in (1..200).rev() {
            f = (k as f64 / 2.0) / (x + f);
        }
        (-x * x).exp() / std::f64::consts::PI.sqrt() / (x + f)
    }
}

fn c6f_gray() -> (bool, String) {
    let (gm, ds) = lrp_sample(65);
    let f = fit(&ds, gm.spec(), &PenaltyConfig::None, &FitOptions::default()).unwrap();
    let p = f.fisher.nrows();
    let delta: Vec<usize> = gm
        .spec()
        .layout()
        .block(Equation::Association, Term::Covariate(0))
        .unwrap()
        .range()
        .collect();
    let w = gray_null_weights(&f.fisher, &delta, &DMatrix::zeros(p, p)).unwrap();
    let wdev = w.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let mut worst_z = 0.0f64;
    for (k, x) in [0.5, 2.0, 4.0, 7.815, 11.0].into_iter().enumerate() {
        let (pv, se) = weighted_chisq_pvalue(x, &[1.0, 1.0, 1.0], 200_000, 66 + k as u64).unwrap();
        worst_z = worst_z.max((pv - chi2_3_sf(x)).abs() / se);
    }
    (
        w.len() == delta.len() && wdev < 1e-10 && worst_z < 3.0,
        format!("max |alpha - 1| {wdev:.2e}; worst tail gap {worst_z:.2} MC s.e."),
    )
}

/// Groups at x = 0 and x = 1; the second never shows the middle
/// category of the first response.
fn degenerate_data() -> Dataset {
    let pair = OrdinalPair::new(3, 3).unwrap();
    let groups = vec![
        Group {
            covariates: vec![0.0],
            counts: vec![12, 6, 3, 8, 10, 7, 3, 6, 14],
        },
        Group {
            covariates: vec![1.0],
            counts: vec![20, 10, 5, 0, 0, 0, 5, 10, 20],
        },
    ];
    Dataset::new(pair, 1, groups).unwrap()
}

fn min_marginal_step(spec: &ModelSpec, ds: &Dataset, beta: &DVector<f64>) -> f64 {
    let pair = spec.pair();
    let mut m = f64::INFINITY;
    for g in ds.groups() {
        let eta = build_design_matrix(spec, &g.covariates).unwrap() * beta;
        for eq in [Equation::Margin1, Equation::Margin2] {
            let off = pair.eta_offset(eq);
            for r in 1..pair.equation_len(eq) {
                m = m.min(eta[off + r] - eta[off + r - 1]);
            }
        }
    }
    m
}

fn c6g_ordering() -> (bool, String) {
    let ds = degenerate_data();
    let spec = ModelSpec::nunpom(ds.pair(), vec!["x".into()]).unwrap();
    let opts = FitOptions::default();
    let describe = |cfg: &PenaltyConfig| match fit(&ds, &spec, cfg, &opts) {
        Ok(f) => (f.converged, min_marginal_step(&spec, &ds, &f.beta_hat)),
        Err(_) => (false, f64::NAN),
    };
    let (conv0, step0) = describe(&PenaltyConfig::None);
    let (conv1, step1) = describe(&PenaltyConfig::Ordering {
        lambda1: 1e6,
        lambda2: 1e6,
    });
    let premise = !conv0 || step0 <= 1e-6;
    (
        premise && conv1 && step1 > 1e-6,
        format!(
            "unpenalized: converged {conv0}, min step {step0:.2e}; lambda 1e6: converged {conv1}, min step {step1:.2e}"
        ),
    )
}

fn main() {
    let checks: [(&str, &str, Check); 12] = [
        ("1", "empirical log-GORs of the liver table", c1_empirical),
        ("2", "occupational status model ladder", c2_model_ladder),
        ("3", "AIC profile shape", c3_profile),
        ("4", "LR_P null calibration", c4_lrp_null),
        ("5", "loss benchmark directions", c5_loss_benchmark),
        ("6a", "eta/pi round trip", c6a_round_trip),
        ("6b", "penalized score vs finite differences", c6b_score),
        ("6c", "quadratic form vs sum form", c6c_quadratic_forms),
        ("6d", "stiff ARC1 fit equals UPOM fit", c6d_arc1_limit),
        ("6e", "stiff ARC2 surface in polynomial span", c6e_arc2_span),
        ("6f", "Gray weights and weighted tail", c6f_gray),
        ("6g", "ordering penalty on a degenerate dataset", c6g_ordering),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in checks {
        let t = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} {id:<3} {name}: {detail} [{:.1} s]", t.elapsed().as_secs_f64());
        if pass == EXPECTED_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("criteria differing from the expected outcome: {unexpected:?}");
        std::process::exit(1);
    }
}
