//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Criterion 8 runs only when `GEOPHY_DS1`
//! names an alignment file; it takes hours.

mod common;

use std::time::{Duration, Instant};

use common::*;
use geophy::bench::DS1_GEOPHY_MLL;
use geophy::decoder::{link, neighbor_join, LinkMethod};
use geophy::estimators::{
    evaluate, evaluate_batch, log_mean_exp, theta_gradient, Draw, Estimator, EstimatorOptions, Needs, Objective,
    SampleEval,
};
use geophy::geometry::*;
use geophy::likelihood::{grad_branch_lengths, log_likelihood};
use geophy::seqdata::{compress_site_patterns, parse_alignment, PatternAlignment};
use geophy::trainer::{estimate_mll, sample_topologies, train, TrainConfig};
use geophy::tree::{majority_consensus, path_length_matrix, rf_distance, BranchLengths, Split};
use geophy::variational::VariationalState;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

const GEOMETRY_TOL: f64 = 1e-9;
const MAX_TANGENT_NORM: f64 = 5.0;
const SELF_NORMALIZATION_SAMPLES: usize = 1_000_000;
const MC_SIGMAS: f64 = 3.0;
const PRUNING_TOL: f64 = 1e-10;
const LIKELIHOOD_GRAD_REL: f64 = 1e-5;
const NJ_TREES: usize = 200;
const UNBIASED_DRAWS: usize = 100_000;
const SURROGATE_GRAD_REL: f64 = 1e-3;
const VARIANCE_REPLICATES: usize = 1000;
const RECOVERY_SEEDS: u64 = 5;
const RECOVERY_REQUIRED: usize = 4;
const RECOVERY_BUDGET: u64 = 200_000;
const DS1_BAND: f64 = 15.0;

type Outcome = Result<String, String>;

fn normals(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn geometry_suite() -> Outcome {
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let d = r.random_range(1..=4);
        let o = origin(d);
        let mu = exp_map(&o, &pad0(&(0..d).map(|_| r.random_range(-2.0..2.0)).collect::<Vec<_>>()));
        let nu = exp_map(&o, &pad0(&(0..d).map(|_| r.random_range(-2.0..2.0)).collect::<Vec<_>>()));
        let mut s: Vec<f64> = normals(&mut r, d);
        let len = r.random_range(0.0..MAX_TANGENT_NORM);
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        s.iter_mut().for_each(|x| *x *= len / norm);
        let u = parallel_transport(&o, &mu, &pad0(&s));
        let w = parallel_transport(&o, &mu, &pad0(&normals(&mut r, d)));
        let z = exp_map(&mu, &u);
        let back = log_map(&mu, &z);
        let inv = u.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let on = (lorentz_inner(&z, &z) + 1.0).abs();
        let pu = parallel_transport(&mu, &nu, &u);
        let pw = parallel_transport(&mu, &nu, &w);
        let iso = (lorentz_inner(&pu, &pw) - lorentz_inner(&u, &w)).abs();
        worst = worst.max(inv).max(on).max(iso);
    }
    ensure(worst < GEOMETRY_TOL, || format!("worst inverse/constraint/isometry error {worst:.2e}"))?;

    // Importance-sample the wrapped normal against a tangent Gaussian at the
    // origin whose density on the hyperboloid is written out here.
    let fam = TipFamily::new(Space::Hyperbolic, Covariance::Full, 2).unwrap();
    let params = [0.4, -0.3, -0.3, 0.2, -0.1];
    let s = 1.5;
    let o = origin(2);
    let weights: Vec<f64> = (0..SELF_NORMALIZATION_SAMPLES as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(1_000_000 + i);
            let g = normals(&mut r, 2);
            let u = [s * g[0], s * g[1]];
            let rr = (u[0] * u[0] + u[1] * u[1]).sqrt();
            let sinhc = if rr > 0.0 { rr.sinh() / rr } else { 1.0 };
            let ln_q = -(2.0 * std::f64::consts::PI * s * s).ln() - (u[0] * u[0] + u[1] * u[1]) / (2.0 * s * s) - sinhc.ln();
            let z = exp_map(&o, &pad0(&u));
            (fam.log_density(&params, &z) - ln_q).exp()
        })
        .collect();
    let (mean, se) = mean_se(&weights);
    ensure((mean - 1.0).abs() < MC_SIGMAS * se, || format!("∫ density = {mean:.5} ± {se:.5}"))?;
    Ok(format!("max error {worst:.1e}; ∫ density = {mean:.5} ± {se:.5}"))
}

fn likelihood_oracle() -> Outcome {
    let mut r = rng(202);
    let aln = random_alignment(5, 10, true, &mut r);
    let pa = PatternAlignment::uncompressed(&aln);
    let topologies = all_topologies(5);
    ensure(topologies.len() == 15, || format!("{} topologies", topologies.len()))?;
    let mut worst = 0.0f64;
    for t in &topologies {
        let b = geophy::tree::random_branch_lengths(t, 10.0, &mut r);
        let fast = log_likelihood(&pa, t, &b).unwrap();
        let slow = brute_force_log_likelihood(&pa, t, &b);
        worst = worst.max((fast - slow).abs());
    }
    ensure(worst <= PRUNING_TOL, || format!("pruning vs exhaustive sum differs by {worst:.2e}"))?;

    let mut worst_rel = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(4..=12);
        let m = r.random_range(20..=200);
        let pa = compress_site_patterns(&random_alignment(n, m, true, &mut r));
        let (t, b) = random_tree(n, &mut r);
        let g = grad_branch_lengths(&pa, &t, &b).unwrap();
        let h: f64 = 1e-6;
        for e in 0..t.edge_count() {
            let shift = |delta: f64| {
                let mut v = b.as_slice().to_vec();
                v[e] += delta;
                log_likelihood(&pa, &t, &BranchLengths::new(v).unwrap()).unwrap()
            };
            let step = h.min(b.get(e) / 2.0);
            let fd = (shift(step) - shift(-step)) / (2.0 * step);
            worst_rel = worst_rel.max((g[e] - fd).abs() / fd.abs().max(1.0));
        }
    }
    ensure(worst_rel <= LIKELIHOOD_GRAD_REL, || format!("gradient relative error {worst_rel:.2e}"))?;
    Ok(format!("15 topologies within {worst:.1e}; gradient rel. err ≤ {worst_rel:.1e}"))
}

fn decoder_consistency() -> Outcome {
    let mut r = rng(303);
    let mut exact = 0;
    for _ in 0..NJ_TREES {
        let n = r.random_range(4..=16);
        let (t, b) = random_tree(n, &mut r);
        let d = path_length_matrix(&t, &b);
        let got = neighbor_join(&d);
        if rf_distance(&got, &t).unwrap() == 0 {
            exact += 1;
        }
        // Relabelling the taxa relabels the answer.
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| d.get(perm[i], perm[j])).collect()).collect();
        let permuted = neighbor_join(&DistanceMatrix::from_rows(&rows).unwrap());
        let mapped: Vec<Split> = permuted
            .splits()
            .iter()
            .map(|s| Split::canonical(n, s.tips().map(|i| perm[i])))
            .collect();
        let mut mapped = mapped;
        mapped.sort();
        ensure(mapped == got.splits(), || "NJ result depends on taxon order".into())?;
    }
    ensure(exact == NJ_TREES, || format!("RF = 0 in {exact}/{NJ_TREES}"))?;

    // Ties: equal distances and coincident points decode identically on
    // every call and every thread count.
    for n in [4, 7, 12] {
        let ties: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 2) as f64, 0.0]).collect();
        let base = link(&ties, Space::Euclidean, LinkMethod::Nj);
        for threads in [1, 3] {
            let again = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| link(&ties, Space::Euclidean, LinkMethod::Nj));
            ensure(again.edges() == base.edges(), || "tie-breaking is not deterministic".into())?;
        }
    }
    Ok(format!("RF = 0 in {exact}/{NJ_TREES}; permutation and tie checks hold"))
}

fn toy_objective<'a>(data: &'a PatternAlignment, cfg: &TrainConfig) -> Objective<'a> {
    Objective {
        data,
        family: cfg.validate().unwrap(),
        link: LinkMethod::Nj,
        beta: 1.0,
    }
}

fn estimator_unbiasedness() -> Outcome {
    let data = toy();
    let cfg = config(Space::Euclidean, Covariance::Diagonal, 2);
    let state = toy_state(&cfg, &data, 404);
    let obj = toy_objective(&data, &cfg);
    let opts = EstimatorOptions::default();
    let fam = obj.family;
    let sur = state.surrogate.as_ref();
    let kinds = [Estimator::Plain, Estimator::Loo, Estimator::Lax, Estimator::LooLax];
    let reps = UNBIASED_DRAWS / 2;
    let grads: Vec<Vec<Vec<f64>>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let draws = Draw::batch(404, rep, 2, 4, 2);
            let samples: Vec<SampleEval> = draws.iter().map(|d| evaluate(&obj, &state, d, Needs::all())).collect();
            kinds.iter().map(|&e| theta_gradient(e, &samples, sur, fam, opts).0).collect()
        })
        .collect();
    // Paired differences share their draws, so the combined standard error
    // is that of the difference. The 3σ level is held family-wise across
    // every (pair, component) comparison.
    let p = grads[0][0].len();
    let pairs = kinds.len() * (kinds.len() - 1) / 2;
    let unit = Normal::new(0.0, 1.0).unwrap();
    let family_alpha = 2.0 * unit.cdf(-MC_SIGMAS);
    let limit = -unit.inverse_cdf(family_alpha / (2.0 * (pairs * p) as f64));
    let mut worst = 0.0f64;
    for a in 0..kinds.len() {
        for b in (a + 1)..kinds.len() {
            for i in 0..p {
                let diff: Vec<f64> = grads.iter().map(|g| g[a][i] - g[b][i]).collect();
                let (m, se) = mean_se(&diff);
                worst = worst.max(m.abs() / se.max(1e-300));
            }
        }
    }
    ensure(worst < limit, || format!("estimator means differ by {worst:.2} paired SE (limit {limit:.2})"))?;

    // Surrogate gradient against differences of the mean squared θ gradient.
    let draws = Draw::batch(405, 0, 3, 4, 2);
    let samples: Vec<SampleEval> = draws.iter().map(|d| evaluate(&obj, &state, d, Needs::all())).collect();
    let mut sur = state.surrogate.clone().unwrap();
    let (g, chi) = theta_gradient(Estimator::LooLax, &samples, Some(&sur), fam, opts);
    let chi = chi.unwrap();
    let msq = |s: &geophy::estimators::Surrogate| {
        let g = theta_gradient(Estimator::LooLax, &samples, Some(s), fam, opts).0;
        g.iter().map(|x| x * x).sum::<f64>() / g.len() as f64
    };
    let h = 1e-6;
    let mut fd = vec![0.0; chi.len()];
    for (i, slot) in fd.iter_mut().enumerate() {
        let orig = sur.params()[i];
        sur.params_mut()[i] = orig + h;
        let up = msq(&sur);
        sur.params_mut()[i] = orig - h;
        let down = msq(&sur);
        sur.params_mut()[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    let num: f64 = chi.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rel = num / den;
    ensure(rel <= SURROGATE_GRAD_REL, || format!("surrogate gradient rel. err {rel:.2e}"))?;
    ensure(g.iter().all(|x| x.is_finite()), || "non-finite θ gradient".into())?;
    Ok(format!(
        "{UNBIASED_DRAWS} draws: max paired gap {worst:.2} SE of {limit:.2}; surrogate gradient rel. err {rel:.1e}"
    ))
}

fn total_variance(grads: &[Vec<f64>]) -> f64 {
    (0..grads[0].len())
        .map(|i| variance(&grads.iter().map(|g| g[i]).collect::<Vec<_>>()))
        .sum()
}

fn variance_reduction() -> Outcome {
    let data = toy();
    let cfg = config(Space::Euclidean, Covariance::Diagonal, 2);
    let state = toy_state(&cfg, &data, 505);
    let obj = toy_objective(&data, &cfg);
    let opts = EstimatorOptions::default();
    let kinds = [Estimator::Plain, Estimator::Loo, Estimator::Iw, Estimator::Vimco];
    let grads: Vec<Vec<Vec<f64>>> = (0..VARIANCE_REPLICATES as u64)
        .into_par_iter()
        .map(|rep| {
            let draws = Draw::batch(505, rep, 3, 4, 2);
            let samples: Vec<SampleEval> = draws.iter().map(|d| evaluate(&obj, &state, d, Needs::all())).collect();
            kinds.iter().map(|&e| theta_gradient(e, &samples, None, obj.family, opts).0).collect()
        })
        .collect();
    let var: Vec<f64> = (0..4)
        .map(|k| total_variance(&grads.iter().map(|g| g[k].clone()).collect::<Vec<_>>()))
        .collect();
    let msg = format!(
        "Var plain {:.3e} > LOO {:.3e}; Var IW {:.3e} > VIMCO {:.3e}",
        var[0], var[1], var[2], var[3]
    );
    ensure(var[1] < var[0] && var[3] < var[2], || msg.clone())?;
    Ok(msg)
}

fn trained_toy() -> (PatternAlignment, TrainConfig, VariationalState) {
    let data = toy();
    let cfg = TrainConfig {
        estimator: Estimator::Loo,
        k: 3,
        lr: 0.01,
        nle_budget: 60_000,
        anneal_samples: 15_000,
        seed: 606,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data).unwrap();
    (data, cfg, out.state)
}

fn bound_ordering() -> Outcome {
    let (data, cfg, state) = trained_toy();
    let obj = toy_objective(&data, &cfg);
    let lw = |step: u64, k: usize| -> Vec<f64> {
        evaluate_batch(&obj, &state, &Draw::batch(607, step, k, 4, 2), Needs::none())
            .iter()
            .map(SampleEval::log_weight)
            .collect()
    };
    let elbo = mean_se(&lw(0, 10_000));
    let iw_reps = |k: usize, reps: u64, offset: u64| -> Vec<f64> {
        (0..reps).map(|r| log_mean_exp(&lw(offset + r, k))).collect()
    };
    let iw10 = mean_se(&iw_reps(10, 2000, 1));
    let iw1000 = mean_se(&iw_reps(1000, 50, 10_000));
    let oracle = exhaustive_mll(&data, 200_000, 608);
    let chain = [("ELBO", elbo), ("IW(10)", iw10), ("IW(1000)", iw1000), ("oracle", oracle)];
    for w in chain.windows(2) {
        let ((na, a), (nb, b)) = (w[0], w[1]);
        let tol = MC_SIGMAS * (a.1 * a.1 + b.1 * b.1).sqrt();
        ensure(a.0 <= b.0 + tol, || format!("{na} {:.3} > {nb} {:.3} (+{tol:.3})", a.0, b.0))?;
    }

    // E[IW(K)] with nested common draws.
    let nested: Vec<Vec<f64>> = (0..20_000u64)
        .into_par_iter()
        .map(|r| lw(100_000 + r, 10))
        .collect();
    let ks = [1usize, 2, 5, 10];
    let per_k: Vec<Vec<f64>> = ks
        .iter()
        .map(|&k| nested.iter().map(|w| log_mean_exp(&w[..k])).collect())
        .collect();
    for i in 1..ks.len() {
        let diff: Vec<f64> = per_k[i].iter().zip(&per_k[i - 1]).map(|(a, b)| a - b).collect();
        let (m, se) = mean_se(&diff);
        ensure(m >= -MC_SIGMAS * se, || format!("E[IW({})] < E[IW({})] by {:.4} ± {se:.4}", ks[i], ks[i - 1], -m))?;
    }
    let means: Vec<String> = per_k.iter().map(|v| format!("{:.3}", mean_se(v).0)).collect();
    Ok(format!(
        "ELBO {:.3}±{:.3} ≤ IW(10) {:.3}±{:.3} ≤ IW(1000) {:.3}±{:.3} ≤ oracle {:.3}±{:.3}; E[IW(1,2,5,10)] = {}",
        elbo.0,
        elbo.1,
        iw10.0,
        iw10.1,
        iw1000.0,
        iw1000.1,
        oracle.0,
        oracle.1,
        means.join(", ")
    ))
}

fn end_to_end_recovery() -> Outcome {
    let mut recovered = 0;
    let mut rfs = Vec::new();
    for seed in 1..=RECOVERY_SEEDS {
        let (data, truth, _) = simulated(8, 500, 700 + seed);
        let cfg = TrainConfig {
            space: Space::Euclidean,
            cov: Covariance::Diagonal,
            dim: 2,
            estimator: Estimator::Loo,
            k: 3,
            nle_budget: RECOVERY_BUDGET,
            seed,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &data).map_err(|e| e.to_string())?;
        let trees = sample_topologies(&out.state, cfg.link, 1000, seed);
        let cons = majority_consensus(&trees).unwrap();
        let rf = cons.rf_distance_to(&truth).unwrap();
        rfs.push(rf);
        if rf == 0 {
            recovered += 1;
        }
    }
    let msg = format!("consensus RF per seed {rfs:?}; recovered {recovered}/{RECOVERY_SEEDS}");
    ensure(recovered >= RECOVERY_REQUIRED, || msg.clone())?;
    Ok(msg)
}

fn ds1_reproduction(path: &str) -> Outcome {
    let bytes = std::fs::read(path).map_err(|e| format!("{path}: {e}"))?;
    let data = compress_site_patterns(&parse_alignment(&bytes).map_err(|e| e.to_string())?);
    let cfg = TrainConfig {
        space: Space::Hyperbolic,
        cov: Covariance::Full,
        dim: 4,
        estimator: Estimator::Lax,
        k: 1,
        nle_budget: 1_000_000,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data).map_err(|e| e.to_string())?;
    let mll = estimate_mll(&data, out.family, cfg.link, &out.state, 1000, 1, 0);
    let msg = format!("MLL {:.2} vs published {DS1_GEOPHY_MLL}", mll.mean);
    ensure((mll.mean - DS1_GEOPHY_MLL).abs() <= DS1_BAND, || msg.clone())?;
    Ok(msg)
}

fn main() {
    // Respect `--list` so tooling that enumerates tests sees an empty suite.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let checks: Vec<(u32, &str, Duration, fn() -> Outcome)> = vec![
        (1, "geometry suite", Duration::from_secs(60), geometry_suite),
        (2, "likelihood oracle", Duration::from_secs(60), likelihood_oracle),
        (3, "decoder consistency", Duration::from_secs(30), decoder_consistency),
        (4, "estimator unbiasedness", Duration::from_secs(600), estimator_unbiasedness),
        (5, "variance reduction", Duration::from_secs(600), variance_reduction),
        (6, "bound ordering", Duration::from_secs(600), bound_ordering),
        (7, "end-to-end recovery", Duration::from_secs(1800), end_to_end_recovery),
    ];
    let mut failed = 0;
    for (id, name, limit, check) in checks {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = result.and_then(|m| {
            if took <= limit {
                Ok(m)
            } else {
                Err(format!("{m}; took {took:.1?}, limit {limit:?}"))
            }
        });
        match result {
            Ok(m) => println!("PASS criterion {id} ({name}, {took:.1?}): {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}, {took:.1?}): {m}");
            }
        }
    }
    match std::env::var("GEOPHY_DS1") {
        Ok(path) => {
            let start = Instant::now();
            match ds1_reproduction(&path) {
                Ok(m) => println!("PASS criterion 8 (DS1 reproduction, {:.1?}): {m}", start.elapsed()),
                Err(m) => {
                    failed += 1;
                    println!("FAIL criterion 8 (DS1 reproduction, {:.1?}): {m}", start.elapsed());
                }
            }
        }
        Err(_) => println!("SKIP criterion 8 (DS1 reproduction): set GEOPHY_DS1 to an alignment path to run"),
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
